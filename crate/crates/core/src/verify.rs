//! Self-check suites runnable from the command line.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::conv::{conv, conv_as_matrix, conv_transpose, conv_transpose_to, zero_upsample, ConvSpec, Padding};
use crate::gam::{battle, error_rate_from_scores, verdict, BattleReport, ModelPair, Truth, Winner, DEFAULT_DELTA};
use crate::gradcheck::grad_check;
use crate::graph::{Graph, Var};
use crate::gran::{Discriminator, GeneratorStats, Generator, GranConfig, Ladder};
use crate::nn::{
    randomize_params, Activation, BatchNorm, BatchStatsLog, ConvLayer, ConvTransposeLayer, Dense, Mode, Module,
};
use crate::train::g_loss_node;
use crate::{Error, Result, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    GradCheck,
    ConvOracle,
    Gam,
}

impl Suite {
    pub const ALL: [Suite; 3] = [Suite::GradCheck, Suite::ConvOracle, Suite::Gam];

    pub fn name(self) -> &'static str {
        match self {
            Suite::GradCheck => "gradcheck",
            Suite::ConvOracle => "convoracle",
            Suite::Gam => "gam",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown suite `{s}`; valid suites: gradcheck, convoracle, gam")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SuiteReport {
    pub checks: Vec<Check>,
}

impl SuiteReport {
    fn push(&mut self, name: impl Into<String>, passed: bool, detail: impl Into<String>) {
        self.checks.push(Check {
            name: name.into(),
            passed,
            detail: detail.into(),
        });
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> usize {
        self.checks.iter().filter(|c| !c.passed).count()
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail)?;
        }
        write!(f, "{} checks, {} failed", self.checks.len(), self.failures())
    }
}

/// Runs a suite at the precision `T`; gradient checks use seeds `seed + 1..=seed + 5`.
pub fn run<T: Scalar>(suite: Suite, seed: u64) -> Result<SuiteReport> {
    match suite {
        Suite::GradCheck => gradcheck_suite::<T>(&[seed + 1, seed + 2, seed + 3, seed + 4, seed + 5]),
        Suite::ConvOracle => conv_oracle_suite::<T>(seed),
        Suite::Gam => gam_suite::<T>(seed),
    }
}

/// Oracle tolerance for exact linear-algebra identities.
fn exact_tol<T: Scalar>() -> f64 {
    if T::NAME == "wide" {
        1e-12
    } else {
        1e-4
    }
}

fn random<T: Scalar>(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::lit(rng.random_range(-1.0..1.0)))
}

/// `Mᵀ y` for a row-major matrix `M: [rows, cols]`.
fn mat_t_vec<T: Scalar>(m: &Tensor<T>, y: &[T]) -> Vec<T> {
    let (rows, cols) = (m.shape()[0], m.shape()[1]);
    let mut out = vec![T::zero(); cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c] += m.data()[r * cols + c] * y[r];
        }
    }
    out
}

fn mat_vec<T: Scalar>(m: &Tensor<T>, x: &[T]) -> Vec<T> {
    let (rows, cols) = (m.shape()[0], m.shape()[1]);
    (0..rows)
        .map(|r| (0..cols).map(|c| m.data()[r * cols + c] * x[c]).fold(T::zero(), |a, b| a + b))
        .collect()
}

fn max_diff<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x.to_f64_lossy() - y.to_f64_lossy()).abs())
        .fold(if a.len() == b.len() { 0.0 } else { f64::INFINITY }, f64::max)
}

/// Worst deviations of one convolution case: `(conv vs M x, transpose vs Mᵀ y, strided vs upsampled)`.
pub fn conv_case<T: Scalar>(
    in_ch: usize,
    out_ch: usize,
    spatial: &[usize],
    kernel: &[usize],
    stride: usize,
    padding: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, f64, f64)> {
    let spec = ConvSpec::new(kernel)
        .with_stride(stride)
        .with_padding(Padding::Explicit(padding));
    let mut kshape = vec![out_ch, in_ch];
    kshape.extend_from_slice(kernel);
    let w = random::<T>(&kshape, rng);
    let mut xshape = vec![in_ch];
    xshape.extend_from_slice(spatial);
    let x = random::<T>(&xshape, rng);
    let m = conv_as_matrix(&w, &xshape, &spec)?;

    let fwd = conv(&x, &w, &spec)?;
    let e_fwd = max_diff(fwd.data(), &mat_vec(&m, x.data()));

    let y = random::<T>(fwd.shape(), rng);
    let tr = conv_transpose_to(&y, &w, &spec, spatial)?;
    let e_tr = max_diff(tr.data(), &mat_t_vec(&m, y.data()));

    // Stride-s transpose (keeping the trailing s - 1 positions) against the
    // stride-1 transpose of the zero-interleaved input.
    let strided = conv_transpose(&y, &w, &spec.clone().with_output_padding(stride - 1))?;
    let unit = ConvSpec::new(kernel).with_padding(Padding::Explicit(padding));
    let up = conv_transpose(&zero_upsample(&y, stride, kernel.len())?, &w, &unit)?;
    let e_up = if strided.shape() == up.shape() {
        max_diff(strided.data(), up.data())
    } else {
        f64::INFINITY
    };
    Ok((e_fwd, e_tr, e_up))
}

/// Every 1D case with input length ≤ 8, kernel length ≤ 4, stride 1 to 3 and
/// each padding below the kernel length, plus a 2D grid up to 6×6.
pub fn conv_oracle_suite<T: Scalar>(seed: u64) -> Result<SuiteReport> {
    let tol = exact_tol::<T>();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = SuiteReport::default();
    let mut run = |name: String, cases: Vec<(usize, usize, Vec<usize>, Vec<usize>, usize, usize)>,
                   rng: &mut ChaCha8Rng|
     -> Result<()> {
        let (mut worst, mut n) = ((0.0f64, 0.0f64, 0.0f64), 0);
        for (ci, co, sp, k, s, p) in cases {
            let (a, b, c) = conv_case::<T>(ci, co, &sp, &k, s, p, rng)?;
            worst = (worst.0.max(a), worst.1.max(b), worst.2.max(c));
            n += 1;
        }
        let ok = worst.0 <= tol && worst.1 <= tol && worst.2 <= tol;
        report.push(
            name,
            ok,
            format!(
                "{n} cases; max |conv - Mx| {:.1e}, |convT - Mᵀy| {:.1e}, |strided - upsampled| {:.1e} (tol {tol:.0e})",
                worst.0, worst.1, worst.2
            ),
        );
        Ok(())
    };

    let mut one_d = Vec::new();
    for len in 1..=8 {
        for k in 1..=4 {
            for s in 1..=3 {
                for p in 0..k {
                    if len + 2 * p >= k {
                        one_d.push((2, 3, vec![1, len], vec![1, k], s, p));
                    }
                }
            }
        }
    }
    run("conv1d_transpose_oracle".into(), one_d, &mut rng)?;

    let mut two_d = Vec::new();
    for h in 1..=6 {
        for w in 1..=6 {
            for (kh, kw) in [(1, 1), (2, 2), (3, 3), (2, 3), (3, 1)] {
                for s in 1..=3 {
                    for p in 0..kh.min(kw) {
                        if h + 2 * p >= kh && w + 2 * p >= kw {
                            two_d.push((2, 2, vec![h, w], vec![kh, kw], s, p));
                        }
                    }
                }
            }
        }
    }
    run("conv2d_transpose_oracle".into(), two_d, &mut rng)?;

    // Literal small cases.
    let x = Tensor::<T>::from_f64(&[1, 1, 4], &[1.0, 2.0, 3.0, 4.0])?;
    let w = Tensor::<T>::from_f64(&[1, 1, 1, 3], &[1.0, 0.0, -1.0])?;
    let got = conv(&x, &w, &ConvSpec::new(&[1, 3]))?;
    report.push(
        "conv_literal",
        max_diff(got.data(), &[T::lit(-2.0), T::lit(-2.0)]) == 0.0,
        format!("[1,2,3,4] * [1,0,-1] = {:?}", got.data()),
    );
    let y = Tensor::<T>::from_f64(&[1, 1, 2], &[1.0, 1.0])?;
    let k = Tensor::<T>::ones(&[1, 1, 1, 3]);
    let got = conv_transpose(&y, &k, &ConvSpec::new(&[1, 3]).with_stride(2))?;
    let want: Vec<T> = [1.0, 1.0, 2.0, 1.0, 1.0].iter().map(|&v| T::lit(v)).collect();
    report.push(
        "conv_transpose_literal",
        max_diff(got.data(), &want) == 0.0,
        format!("[1,1] stride 2 with [1,1,1] = {:?}", got.data()),
    );
    Ok(report)
}

type LossFn<'a, T> = Box<dyn Fn(&mut Graph<T>, &[Var]) -> Result<Var> + 'a>;

/// Fixed random weighting so that the check sees every output coordinate.
fn weighted_sum<T: Scalar>(g: &mut Graph<T>, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let w = g.constant(random(g.shape(y), &mut rng));
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

fn module_case<'a, T: Scalar, M: Module<T> + 'a>(
    module: M,
    input: Tensor<T>,
    seed: u64,
    forward: impl Fn(&M, &mut Graph<T>, &M::Vars, Var) -> Result<Var> + 'a,
) -> (Vec<Tensor<T>>, LossFn<'a, T>) {
    let mut inputs = module.param_tensors();
    let np = inputs.len();
    inputs.push(input);
    let f: LossFn<'a, T> = Box::new(move |g, v| {
        let vars = module.vars_from(&v[..np])?;
        let y = forward(&module, g, &vars, v[np])?;
        weighted_sum(g, y, seed)
    });
    (inputs, f)
}

fn tiny_conv_gran(steps: usize) -> GranConfig {
    GranConfig {
        steps,
        z_dim: 3,
        hidden: 4,
        noise: crate::gran::NoiseMode::Shared,
        canvas: vec![1, 4, 4],
        ladder: Ladder::Conv {
            channels: vec![3, 2, 1],
            filters: vec![3, 3, 3],
            strides: vec![1, 2, 2],
            base: vec![1, 1],
        },
        batch_norm: true,
        leaky_slope: 0.2,
        init_std: 0.5,
    }
}

fn tiny_dense_gran(steps: usize) -> GranConfig {
    let mut c = GranConfig::ring(steps);
    c.z_dim = 3;
    c.hidden = 4;
    c.ladder = Ladder::Dense { widths: vec![6, 5] };
    c
}

/// The scalar `g_loss(D(G(z)))` through a `T`-step generator, as a function of
/// every generator parameter, every discriminator parameter and `z`.
pub fn gran_loss_case<'a, T: Scalar>(
    config: GranConfig,
    batch: usize,
    mode: Mode,
    seed: u64,
) -> Result<(Vec<Tensor<T>>, LossFn<'a, T>)> {
    let mut gen = Generator::<T>::init(config.clone(), seed)?;
    let mut disc = Discriminator::<T>::init(config, seed + 1)?;
    randomize_params(&mut gen, 0.5, seed + 2);
    randomize_params(&mut disc, 0.5, seed + 3);
    let noise = gen.sample_noise(batch, seed + 4)?;
    let mut inputs = gen.param_tensors();
    let ng = inputs.len();
    inputs.extend(disc.param_tensors());
    let nd = inputs.len();
    inputs.extend(noise.tensors().into_iter().cloned());
    let f: LossFn<'a, T> = Box::new(move |g, v| {
        let gv = gen.vars_from(&v[..ng])?;
        let dv = disc.vars_from(&v[ng..nd])?;
        let x = gen.unroll(g, &gv, &v[nd..], mode, &mut GeneratorStats::default())?.canvas;
        let p = disc.forward(g, &dv, x, mode, &mut BatchStatsLog::new())?;
        Ok(g_loss_node(g, p))
    });
    Ok((inputs, f))
}

/// Central differences against reverse mode for each layer type and for the
/// full recurrent generator, discriminator and generator loss, at each seed.
pub fn gradcheck_suite<T: Scalar>(seeds: &[u64]) -> Result<SuiteReport> {
    let (eps, tol) = if T::NAME == "wide" { (1e-6, 1e-4) } else { (1e-2, 5e-2) };
    let mut report = SuiteReport::default();
    let leaky = Activation::LeakyRelu(0.2);
    let spec = |k: usize, s: usize| {
        ConvSpec::new(&[k, k])
            .with_stride(s)
            .with_padding(Padding::Explicit(k / 2))
            .with_output_padding(s - 1)
    };
    type Case<'a, T> = (String, Box<dyn Fn(u64) -> Result<(Vec<Tensor<T>>, LossFn<'a, T>)> + 'a>);
    let mut cases: Vec<Case<'_, T>> = Vec::new();
    for act in [Activation::Linear, Activation::Relu, leaky, Activation::Tanh, Activation::Sigmoid] {
        cases.push((
            format!("dense_{}", act.name()),
            Box::new(move |seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut d = Dense::<T>::init(4, 3, act, 0.5, &mut rng);
                randomize_params(&mut d, 0.5, seed);
                Ok(module_case(d, random(&[3, 4], &mut rng), seed, |m, g, v, x| m.forward(g, v, x)))
            }),
        ));
    }
    cases.push((
        "conv".into(),
        Box::new(move |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut c = ConvLayer::<T>::init(2, 3, spec(3, 2), leaky, 0.5, &mut rng);
            randomize_params(&mut c, 0.5, seed);
            Ok(module_case(c, random(&[2, 2, 5, 5], &mut rng), seed, |m, g, v, x| m.forward(g, v, x)))
        }),
    ));
    cases.push((
        "conv_transpose".into(),
        Box::new(move |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut c = ConvTransposeLayer::<T>::init(3, 2, spec(3, 2), Activation::Tanh, 0.5, &mut rng);
            randomize_params(&mut c, 0.5, seed);
            Ok(module_case(c, random(&[2, 3, 3, 3], &mut rng), seed, |m, g, v, x| m.forward(g, v, x)))
        }),
    ));
    for mode in [Mode::Train, Mode::Eval] {
        cases.push((
            format!("batch_norm_{}", if mode == Mode::Train { "train" } else { "eval" }),
            Box::new(move |seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut bn = BatchNorm::<T>::new(3);
                randomize_params(&mut bn, 0.5, seed);
                bn.running_var = Tensor::from_fn(&[3], |_| T::lit(rng.random_range(0.5..2.0)));
                let x = random(&[4, 3, 2, 2], &mut rng);
                Ok(module_case(bn, x, seed, move |m, g, v, x| {
                    m.forward(g, v, x, mode, 0, &mut BatchStatsLog::new())
                }))
            }),
        ));
    }
    cases.push((
        "gran_t3_dense_g_loss".into(),
        Box::new(|seed| gran_loss_case(tiny_dense_gran(3), 3, Mode::Train, seed)),
    ));
    cases.push((
        "gran_t3_conv_bn_g_loss".into(),
        Box::new(|seed| gran_loss_case(tiny_conv_gran(3), 3, Mode::Train, seed)),
    ));

    for (name, make) in &cases {
        let mut worst: f64 = 0.0;
        let mut coords = 0;
        for &seed in seeds {
            let (inputs, f) = make(seed)?;
            let r = grad_check(&f, &inputs, eps)?;
            worst = worst.max(r.max_rel_error);
            coords += r.coordinates;
        }
        report.push(
            name.clone(),
            worst < tol,
            format!("{} seeds, {coords} coordinates, max rel err {worst:.2e} (tol {tol:.0e})", seeds.len()),
        );
    }
    Ok(report)
}

/// `(dataset, model 1, model 2, r_test, r_sample, winner label)` rows of the
/// reference battle table.
pub const REFERENCE_BATTLES: [(&str, &str, &str, f64, f64, &str); 8] = [
    ("MNIST", "GRAN1", "GRAN3", 0.79, 1.75, "GRAN3"),
    ("MNIST", "GRAN1", "GRAN5", 0.95, 1.19, "GRAN5"),
    ("CIFAR10", "GRAN1", "GRAN3", 1.28, 1.001, "GRAN3"),
    ("CIFAR10", "GRAN1", "GRAN5", 1.29, 1.011, "GRAN5"),
    ("CIFAR10", "GRAN3", "GRAN5", 1.00, 2.289, "GRAN5"),
    ("LSUN", "GRAN1", "GRAN3", 0.95, 13.68, "GRAN3"),
    ("LSUN", "GRAN1", "GRAN5", 0.99, 13.97, "GRAN5"),
    ("LSUN", "GRAN3", "GRAN5", 0.99, 2.38, "GRAN5"),
];

/// Randomized battle report with cells in `[0.05, 0.95]`.
pub fn random_report(rng: &mut ChaCha8Rng) -> BattleReport {
    let mut cell = || rng.random_range(0.05..0.95);
    BattleReport {
        label1: "M1".into(),
        label2: "M2".into(),
        d1_train: cell(),
        d1_test: cell(),
        d1_samples: cell(),
        d2_train: cell(),
        d2_test: cell(),
        d2_samples: cell(),
        n_train: 100,
        n_test: 100,
        n_samples: 100,
        seed: 0,
    }
}

/// Checks label-swap antisymmetry on `count` random reports; returns the
/// worst ratio deviation and whether every verdict swapped.
pub fn swap_antisymmetry(count: usize, delta: f64, seed: u64) -> Result<(f64, bool, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut worst, mut swapped, mut decisive) = (0.0f64, true, 0);
    for _ in 0..count {
        let mut r = random_report(&mut rng);
        // Pull r_test toward 1 half the time so decisive verdicts occur.
        if rng.random_bool(0.5) {
            r.d2_test = r.d1_test * rng.random_range(0.8..1.25);
        }
        let (t, s) = r.ratios()?;
        let (ts, ss) = r.swap().ratios()?;
        worst = worst.max((ts - 1.0 / t).abs()).max((ss - 1.0 / s).abs());
        let (v, vs) = (verdict(t, s, delta), verdict(ts, ss, delta));
        swapped &= vs == v.swapped();
        decisive += usize::from(v != Winner::Tie);
    }
    Ok((worst, swapped, decisive))
}

/// Replays the reference battles, checks battle symmetry, label swapping and
/// the error-rate conventions.
pub fn gam_suite<T: Scalar>(seed: u64) -> Result<SuiteReport> {
    let mut report = SuiteReport::default();
    for (data, a, b, rt, rs, want) in REFERENCE_BATTLES {
        let v = verdict(rt, rs, DEFAULT_DELTA);
        let got = match v {
            Winner::M1 => a,
            Winner::M2 => b,
            Winner::Tie => "Tie",
        };
        report.push(
            format!("table_{data}_{a}_vs_{b}"),
            got == want,
            format!("r_test {rt}, r_sample {rs}: {got} (expected {want})"),
        );
    }

    let mut c = GranConfig::shapes(2);
    c.init_std = 0.3;
    let gen = Generator::<T>::init(c.clone(), seed)?;
    let disc = Discriminator::<T>::init(c, seed + 1)?;
    let m = ModelPair::new("M", gen.clone(), disc)?;
    let x = crate::data::gen_shapes::<T>(8, 200, seed)?.examples;
    let (train, test) = (x.slice_rows(0, 100)?, x.slice_rows(100, 200)?);
    let r = battle(&m, &m, &train, &test, 100, seed)?;
    let v = crate::gam::judge(&r, DEFAULT_DELTA);
    report.push(
        "self_battle",
        v.r_test == Some(1.0) && v.winner == Winner::Tie && r.d1_samples == r.d2_samples,
        format!("r_test {:?}, r_sample {:?}, winner {}", v.r_test, v.r_sample, v.winner),
    );

    let (worst, swapped, decisive) = swap_antisymmetry(20, DEFAULT_DELTA, seed)?;
    report.push(
        "label_swap",
        worst <= 1e-12 && swapped,
        format!("20 reports ({decisive} decisive), max ratio deviation {worst:.1e}, verdicts swapped: {swapped}"),
    );

    let scores = disc_scores::<T>(&m.disc, &test)?;
    let sum = error_rate_from_scores(&scores, Truth::Real)? + error_rate_from_scores(&scores, Truth::Fake)?;
    report.push("complementary_rates", sum == 1.0, format!("real + fake error = {sum}"));

    let stub = Discriminator::<T>::constant(GranConfig::shapes(1), 0.5)?;
    let rate = crate::gam::cross_model_error(&stub, &test)?;
    report.push("half_scores_count_as_real", rate == 1.0, format!("constant 0.5 discriminator: {rate}"));
    Ok(report)
}

fn disc_scores<T: Scalar>(d: &Discriminator<T>, x: &Tensor<T>) -> Result<Vec<T>> {
    d.discriminate(x)
}
