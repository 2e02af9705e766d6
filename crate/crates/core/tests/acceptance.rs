//! End-to-end acceptance run. Every criterion prints one PASS/FAIL line and
//! the target exits non-zero if any of them fails. The two training criteria
//! dominate the runtime (several minutes each on one core).

use std::process::ExitCode;
use std::time::{Duration, Instant};

use granlab::checkpoint::{load_models, save_models};
use granlab::data::{gen_gaussian_ring, gen_shapes, mode_coverage, ring_means};
use granlab::gam::{battle, judge, ModelPair, Winner, DEFAULT_DELTA};
use granlab::gran::{Discriminator, GranConfig, Generator, Ladder, NoiseMode};
use granlab::nn::{Activation, Layer, Module, Sequential};
use granlab::train::{TrainConfig, TraceRow, Trainer, UpdatePolicy};
use granlab::verify::{conv_oracle_suite, gam_suite, gradcheck_suite, swap_antisymmetry, SuiteReport};
use granlab::{Result, Tensor};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn suite_outcome(r: &SuiteReport) -> Outcome {
    let failed: Vec<String> = r.checks.iter().filter(|c| !c.passed).map(|c| format!("{}: {}", c.name, c.detail)).collect();
    if failed.is_empty() {
        outcome(true, format!("{} checks", r.checks.len()))
    } else {
        outcome(false, failed.join("; "))
    }
}

fn criterion(id: usize, name: &str, limit: Option<Duration>, f: impl FnOnce() -> Result<Outcome>) -> bool {
    let start = Instant::now();
    let mut o = f().unwrap_or_else(|e| outcome(false, format!("error: {e}")));
    let took = start.elapsed();
    if let Some(limit) = limit {
        if took > limit {
            o.passed = false;
            o.detail += &format!("; over the {}s budget", limit.as_secs());
        }
    }
    println!(
        "{} {id}. {name}: {} [{:.1}s]",
        if o.passed { "PASS" } else { "FAIL" },
        o.detail,
        took.as_secs_f64()
    );
    o.passed
}

fn conv_transpose_oracle() -> Result<Outcome> {
    let r = conv_oracle_suite::<f64>(0)?;
    Ok(suite_outcome(&r))
}

fn gradient_checks() -> Result<Outcome> {
    let r = gradcheck_suite::<f64>(&[1, 2, 3, 4, 5])?;
    Ok(suite_outcome(&r))
}

fn act(a: Activation, x: f64) -> f64 {
    match a {
        Activation::Linear => x,
        Activation::Relu => x.max(0.0),
        Activation::LeakyRelu(s) => {
            if x > 0.0 {
                x
            } else {
                s * x
            }
        }
        Activation::Tanh => x.tanh(),
        Activation::Sigmoid => sigmoid(x),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        x.exp() / (1.0 + x.exp())
    }
}

fn mlp(net: &Sequential<f64>, x: &[f64]) -> Vec<f64> {
    let mut h = x.to_vec();
    for layer in &net.layers {
        h = match layer {
            Layer::Dense(d) => {
                let i = d.weight.shape()[1];
                d.weight
                    .data()
                    .chunks(i)
                    .zip(d.bias.data())
                    .map(|(w, b)| {
                        let mut s = 0.0;
                        for (wk, hk) in w.iter().zip(&h) {
                            s += wk * hk;
                        }
                        act(d.activation, s + b)
                    })
                    .collect()
            }
            Layer::Activation(a) => h.iter().map(|&v| act(*a, v)).collect(),
            other => panic!("dense stacks only, got {other:?}"),
        };
    }
    h
}

/// Small enough that every inner product is a plain left-to-right sum.
fn narrow_ring(steps: usize, noise: NoiseMode) -> GranConfig {
    let mut c = GranConfig::ring(steps);
    c.z_dim = 3;
    c.hidden = 3;
    c.ladder = Ladder::Dense { widths: vec![6, 5] };
    c.noise = noise;
    c.init_std = 0.7;
    c
}

fn structural_contracts() -> Result<Outcome> {
    let mut notes = Vec::new();

    let mut open = true;
    for (config, seed) in [(GranConfig::ring(3), 1), (GranConfig::shapes(3), 2), (narrow_ring(5, NoiseMode::PerStep), 3)] {
        let mut c = config;
        c.init_std = 1.0;
        let x = Generator::<f64>::init(c, seed)?.sample(64, seed)?;
        open &= x.data().iter().all(|&v| v > 0.0 && v < 1.0);
    }
    notes.push(format!("canvas in (0,1): {open}"));

    let mut half = true;
    for config in [GranConfig::ring(3), GranConfig::shapes(2)] {
        let mut gen = Generator::<f64>::init(config, 4)?;
        let zeros: Vec<_> = gen.param_tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        gen.set_params(&zeros)?;
        half &= gen.sample(8, 5)?.data().iter().all(|&v| v == 0.5);
    }
    notes.push(format!("zero parameters give 0.5: {half}"));

    // T=1 is sigmoid(f([embed(z), g(0)])).
    let gen = Generator::<f64>::init(narrow_ring(1, NoiseMode::Shared), 6)?;
    let noise = gen.sample_noise(16, 7)?;
    let z = noise.tensors()[0].clone();
    let got = gen.generate(&noise)?.canvas;
    let c = &gen.config;
    let h_c = mlp(&gen.encoder, &vec![0.0; c.canvas[0]]);
    let mut single = true;
    for i in 0..16 {
        let zi = &z.data()[i * c.z_dim..(i + 1) * c.z_dim];
        let h_z: Vec<f64> = gen
            .embed
            .weight
            .data()
            .chunks(c.z_dim)
            .zip(gen.embed.bias.data())
            .map(|(w, b)| {
                let mut s = 0.0;
                for (wk, zk) in w.iter().zip(zi) {
                    s += wk * zk;
                }
                (s + b).tanh()
            })
            .collect();
        let joint: Vec<f64> = h_z.iter().chain(&h_c).copied().collect();
        let want: Vec<f64> = mlp(&gen.decoder, &joint).iter().map(|&s| sigmoid(s)).collect();
        single &= got.data()[i * c.canvas[0]..(i + 1) * c.canvas[0]] == want[..];
    }
    notes.push(format!("T=1 matches the single-composition oracle: {single}"));

    let mut shared = true;
    for config in [narrow_ring(4, NoiseMode::Shared), GranConfig::shapes(3)] {
        let gen = Generator::<f64>::init(config, 8)?;
        let out = gen.generate(&gen.sample_noise(5, 9)?)?;
        shared &= out.h_z.iter().all(|h| h == &out.h_z[0]);
    }
    notes.push(format!("shared noise keeps h_z fixed: {shared}"));

    Ok(outcome(open && half && single && shared, notes.join(", ")))
}

fn gam_table_replay() -> Result<Outcome> {
    let r = gam_suite::<f64>(3)?;
    let mut picked = SuiteReport::default();
    for c in r.checks.into_iter().filter(|c| c.name.starts_with("table_") || c.name == "self_battle") {
        picked.checks.push(c);
    }
    let tables = picked.checks.iter().filter(|c| c.name.starts_with("table_")).count();
    let mut o = suite_outcome(&picked);
    if tables != 8 {
        o = outcome(false, format!("expected 8 table rows, found {tables}"));
    }
    Ok(o)
}

fn label_swap() -> Result<Outcome> {
    let (worst, swapped, decisive) = swap_antisymmetry(20, DEFAULT_DELTA, 42)?;
    Ok(outcome(
        worst <= 1e-12 && swapped && decisive > 0,
        format!("20 reports, {decisive} decisive, max ratio deviation {worst:.1e}, verdicts swapped: {swapped}"),
    ))
}

const RING_SIGMA: f64 = 0.1;
const RING_ITERS: usize = 6000;

/// Returns (modes covered, tail real-accuracy).
fn ring_run(seed: u64) -> Result<(usize, f64)> {
    let data = gen_gaussian_ring::<f32>(8, 2.0, RING_SIGMA, 10_000, seed)?;
    let config = GranConfig::ring(3);
    let train = TrainConfig {
        iterations: RING_ITERS,
        batch_size: 100,
        lr_d: 2e-4,
        lr_g: 2e-4,
        seed,
        ..Default::default()
    };
    let gen = Generator::<f32>::init(config.clone(), seed + 1)?;
    let disc = Discriminator::<f32>::init(config, seed + 2)?;
    let mut t = Trainer::new(gen, disc, train, data.len())?;
    t.run(&data.examples)?;
    let raw = data.unscale(&t.gen.sample(10_000, seed + 100)?)?;
    let covered = mode_coverage(&raw, &ring_means(8, 2.0), RING_SIGMA, 0.02);
    let (acc_real, _) = t.trace.tail_accuracy(200).expect("trace is non-empty");
    Ok((covered, acc_real))
}

fn toy_ring() -> Result<Outcome> {
    let mut good = 0;
    let mut per_seed = Vec::new();
    for seed in 1..=5 {
        let (covered, acc) = ring_run(seed)?;
        let ok = covered >= 6 && (0.35..=0.65).contains(&acc);
        good += usize::from(ok);
        per_seed.push(format!("seed {seed}: {covered}/8 modes, acc_real {acc:.3}"));
    }
    Ok(outcome(good >= 3, format!("{good}/5 seeds ok ({})", per_seed.join("; "))))
}

const SHAPES_ITERS: usize = 4000;

/// With simultaneous updates the shapes discriminator wins outright and the
/// two discriminators' test errors drift apart; the conditional policy keeps
/// both games near balance.

fn shapes_pair(steps: usize, seed: u64, train: &Tensor<f32>) -> Result<ModelPair<f32>> {
    let config = GranConfig::shapes(steps);
    let gen = Generator::<f32>::init(config.clone(), seed * 10 + steps as u64)?;
    let disc = Discriminator::<f32>::init(config, seed * 10 + 5 + steps as u64)?;
    let tc = TrainConfig {
        iterations: SHAPES_ITERS,
        batch_size: 100,
        seed: seed + steps as u64,
        policy: UpdatePolicy::Conditional,
        ..Default::default()
    };
    let mut t = Trainer::new(gen, disc, tc, train.rows())?;
    t.run(train)?;
    let (gen, disc, _) = t.into_parts();
    ModelPair::new(format!("GRAN{steps}"), gen, disc)
}

fn desk_battle() -> Result<Outcome> {
    let mut good = 0;
    let mut per_seed = Vec::new();
    for seed in 1..=5u64 {
        let all = gen_shapes::<f32>(8, 6000, seed)?.examples;
        let (train, test) = (all.slice_rows(0, 5000)?, all.slice_rows(5000, 6000)?);
        let g1 = shapes_pair(1, seed, &train)?;
        let g3 = shapes_pair(3, seed, &train)?;
        let report = battle(&g1, &g3, &train, &test, test.rows(), seed)?;
        let v = judge(&report, DEFAULT_DELTA);
        let in_band = v.r_test.is_some_and(|r| (0.5..=2.0).contains(&r));
        let ok = in_band && matches!(v.winner, Winner::M2 | Winner::Tie);
        good += usize::from(ok);
        let winner = match v.winner {
            Winner::M1 => "GRAN1",
            Winner::M2 => "GRAN3",
            Winner::Tie => "Tie",
        };
        per_seed.push(format!("seed {seed}: r_test {:.3}, r_sample {:.3}, {winner}", v.r_test.unwrap_or(f64::NAN), v.r_sample.unwrap_or(f64::NAN)));
    }
    Ok(outcome(good >= 3, format!("{good}/5 pairs ok ({})", per_seed.join("; "))))
}

fn same_bits(a: &[TraceRow], b: &[TraceRow]) -> bool {
    let bits = |r: &TraceRow| {
        [r.d_loss, r.g_loss, r.value, r.acc_real, r.acc_fake].map(f64::to_bits).to_vec()
    };
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.iter == y.iter && bits(x) == bits(y))
}

fn persistence() -> Result<Outcome> {
    let run = || -> Result<Trainer<f32>> {
        let mut c = GranConfig::shapes(3);
        c.init_std = 0.1;
        let data = gen_shapes::<f32>(8, 400, 21)?.examples;
        let train = TrainConfig {
            iterations: 15,
            batch_size: 40,
            seed: 22,
            ..Default::default()
        };
        let mut t = Trainer::new(Generator::init(c.clone(), 23)?, Discriminator::init(c, 24)?, train, data.rows())?;
        t.run(&data)?;
        Ok(t)
    };
    let (a, b) = (run()?, run()?);
    let traces = same_bits(a.trace.rows(), b.trace.rows()) && a.gen == b.gen && a.disc == b.disc;

    let dir = tempfile::tempdir().expect("temp dir");
    let path = dir.path().join("a.grn");
    let extra = granlab::kv::KvMap::new();
    save_models(&path, &a.gen, &a.disc, Some((&a.adam_g, &a.adam_d)), &extra)?;
    let back = load_models::<f32>(&path)?;
    let models = back.gen == a.gen && back.disc == a.disc;
    let again = dir.path().join("b.grn");
    let (ag, ad) = back.adam.as_ref().expect("optimizer state was saved");
    save_models(&again, &back.gen, &back.disc, Some((ag, ad)), &extra)?;
    let bytes = std::fs::read(&path).ok() == std::fs::read(&again).ok();

    let noise = a.gen.sample_noise(32, 25)?;
    let before = a.gen.generate(&noise)?.canvas;
    let after = back.gen.generate(&noise)?.canvas;
    let samples = before.data().iter().map(|v| v.to_bits()).eq(after.data().iter().map(|v| v.to_bits()));

    Ok(outcome(
        traces && models && bytes && samples,
        format!("identical traces: {traces}, models round-trip: {models}, re-saved bytes equal: {bytes}, samples equal: {samples}"),
    ))
}

fn main() -> ExitCode {
    // Runs without the libtest harness so the lines are never captured;
    // `cargo test -- --skip acceptance` still skips it.
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.windows(2).any(|w| w[0] == "--skip" && "acceptance".contains(w[1].as_str())) {
        println!("acceptance skipped");
        return ExitCode::SUCCESS;
    }
    let secs = Duration::from_secs;
    let results = [
        criterion(1, "convolution transpose oracle", Some(secs(10)), conv_transpose_oracle),
        criterion(2, "gradient checks", Some(secs(120)), gradient_checks),
        criterion(3, "GRAN structural contracts", None, structural_contracts),
        criterion(4, "GAM table replay and self-battle", None, gam_table_replay),
        criterion(5, "label-swap antisymmetry", Some(secs(1)), label_swap),
        criterion(6, "toy ring training", Some(secs(15 * 60)), toy_ring),
        criterion(7, "desk-scale battle", Some(secs(30 * 60)), desk_battle),
        criterion(8, "persistence and determinism", None, persistence),
    ];
    let failed = results.iter().filter(|ok| !**ok).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
