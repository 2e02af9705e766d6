//! Two-objective adversarial training with Adam.

use std::fmt::Write as _;
use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Batcher;
use crate::graph::{Graph, Var};
use crate::gran::{Discriminator, Generator, GeneratorStats};
use crate::kv::KvMap;
use crate::nn::{BatchStatsLog, Mode, Module};
use crate::{Error, Result, Scalar, Tensor};

/// Lower clamp applied to probabilities inside logarithms; the upper clamp is `1 - PROB_CLAMP`.
pub const PROB_CLAMP: f64 = 1e-7;

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

fn mean_ln(values: impl Iterator<Item = f64>) -> f64 {
    let mut n = 0usize;
    let mut s = 0.0;
    for v in values {
        s += clamp_prob(v).ln();
        n += 1;
    }
    s / n as f64
}

/// `-mean log D(real) - mean log(1 - D(fake))` from discriminator scores.
pub fn d_loss_from_scores<T: Scalar>(real: &[T], fake: &[T]) -> f64 {
    -mean_ln(real.iter().map(|p| p.to_f64_lossy())) - mean_ln(fake.iter().map(|p| 1.0 - p.to_f64_lossy()))
}

/// `-mean log D(fake)`.
pub fn g_loss_from_scores<T: Scalar>(fake: &[T]) -> f64 {
    -mean_ln(fake.iter().map(|p| p.to_f64_lossy()))
}

pub fn d_loss<T: Scalar>(disc: &Discriminator<T>, x_real: &Tensor<T>, x_fake: &Tensor<T>) -> Result<f64> {
    if x_real.rows() != x_fake.rows() {
        return Err(Error::dim("d_loss batches", x_real.shape(), x_fake.shape()));
    }
    Ok(d_loss_from_scores(&disc.discriminate(x_real)?, &disc.discriminate(x_fake)?))
}

pub fn g_loss<T: Scalar>(disc: &Discriminator<T>, x_fake: &Tensor<T>) -> Result<f64> {
    Ok(g_loss_from_scores(&disc.discriminate(x_fake)?))
}

/// `mean log D(real) + mean log(1 - D(fake))`, which is `-d_loss`. Logged, never optimized.
pub fn minimax_value<T: Scalar>(disc: &Discriminator<T>, x_real: &Tensor<T>, x_fake: &Tensor<T>) -> Result<f64> {
    Ok(-d_loss(disc, x_real, x_fake)?)
}

/// Graph form of the discriminator loss on score nodes.
pub fn d_loss_node<T: Scalar>(g: &mut Graph<T>, p_real: Var, p_fake: Var) -> Result<Var> {
    let r = g.clamp(p_real, PROB_CLAMP, 1.0 - PROB_CLAMP);
    let lr = g.ln(r);
    let a = g.mean(lr);
    let q = g.affine(p_fake, -1.0, 1.0);
    let q = g.clamp(q, PROB_CLAMP, 1.0 - PROB_CLAMP);
    let lq = g.ln(q);
    let b = g.mean(lq);
    let s = g.add(a, b)?;
    Ok(g.affine(s, -1.0, 0.0))
}

/// Graph form of the generator loss on a score node.
pub fn g_loss_node<T: Scalar>(g: &mut Graph<T>, p_fake: Var) -> Var {
    let p = g.clamp(p_fake, PROB_CLAMP, 1.0 - PROB_CLAMP);
    let l = g.ln(p);
    let m = g.mean(l);
    g.affine(m, -1.0, 0.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum UpdatePolicy {
    /// Both networks step every iteration.
    #[default]
    Always,
    /// Discriminator steps only while it mispredicts a majority of real or fake
    /// samples; the generator steps only while the discriminator flags most fakes.
    Conditional,
}

impl UpdatePolicy {
    pub fn name(self) -> &'static str {
        match self {
            UpdatePolicy::Always => "always",
            UpdatePolicy::Conditional => "conditional",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "always" => Ok(UpdatePolicy::Always),
            "conditional" => Ok(UpdatePolicy::Conditional),
            other => Err(Error::Config(format!("policy `{other}`: expected always or conditional"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct UpdateDecision {
    pub update_d: bool,
    pub update_g: bool,
}

/// `acc_real` and `acc_fake` are the fractions of real and fake samples the
/// discriminator classifies correctly at threshold 0.5.
pub fn update_policy_decide(policy: UpdatePolicy, acc_real: f64, acc_fake: f64) -> UpdateDecision {
    match policy {
        UpdatePolicy::Always => UpdateDecision {
            update_d: true,
            update_g: true,
        },
        UpdatePolicy::Conditional => UpdateDecision {
            update_d: acc_real < 0.5 || acc_fake < 0.5,
            update_g: acc_fake >= 0.5,
        },
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one pair per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(shapes: &[&[usize]]) -> Self {
        AdamState {
            m: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            v: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            t: 0,
        }
    }

    pub fn for_module<M: Module<T>>(module: &M) -> Self {
        let params = module.named_params();
        let shapes: Vec<&[usize]> = params.iter().map(|(_, t)| t.shape()).collect();
        Self::new(&shapes)
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step<T: Scalar>(
    state: &mut AdamState<T>,
    params: &mut [&mut Tensor<T>],
    grads: &[Tensor<T>],
    lr: f64,
    config: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::contract(format!(
            "adam_step: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.m) {
        if p.shape() != g.shape() || p.shape() != m.shape() {
            return Err(Error::dim("adam_step", p.shape(), g.shape()));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (T::lit(config.beta1), T::lit(config.beta2));
    let c1 = T::lit(1.0 - config.beta1.powi(t));
    let c2 = T::lit(1.0 - config.beta2.powi(t));
    let (lr, eps) = (T::lit(lr), T::lit(config.eps));
    let one = T::one();
    for (k, p) in params.iter_mut().enumerate() {
        let g = grads[k].data();
        let m = state.m[k].data_mut();
        let v = state.v[k].data_mut();
        for (i, x) in p.data_mut().iter_mut().enumerate() {
            m[i] = b1 * m[i] + (one - b1) * g[i];
            v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
            let mh = m[i] / c1;
            let vh = v[i] / c2;
            *x -= lr * mh / (vh.sqrt() + eps);
        }
    }
    Ok(())
}

pub const TRAIN_KEYS: &[&str] = &[
    "lr_d",
    "lr_g",
    "batch_size",
    "iterations",
    "seed",
    "policy",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
];

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr_d: f64,
    pub lr_g: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub seed: u64,
    pub policy: UpdatePolicy,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_d: 2e-4,
            lr_g: 1e-3,
            batch_size: 100,
            iterations: 1000,
            seed: 0,
            policy: UpdatePolicy::Always,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |x: f64| x > 0.0 && x.is_finite();
        if !positive(self.lr_d) || !positive(self.lr_g) {
            return Err(Error::Config(format!(
                "learning rates must be positive, got lr_d={} lr_g={}",
                self.lr_d, self.lr_g
            )));
        }
        if self.batch_size < 2 {
            return Err(Error::Config(format!("batch_size must be at least 2, got {}", self.batch_size)));
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !positive(a.eps) {
            return Err(Error::Config(format!("invalid adam constants {a:?}")));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KvMap {
        let mut m = KvMap::new();
        m.set("lr_d", self.lr_d)
            .set("lr_g", self.lr_g)
            .set("batch_size", self.batch_size)
            .set("iterations", self.iterations)
            .set("seed", self.seed)
            .set("policy", self.policy.name())
            .set("adam_beta1", self.adam.beta1)
            .set("adam_beta2", self.adam.beta2)
            .set("adam_eps", self.adam.eps);
        m
    }

    /// Reads the training keys of `m`, keeping `defaults` for absent ones. Other keys are ignored.
    pub fn from_kv_with(m: &KvMap, defaults: &TrainConfig) -> Result<Self> {
        let mut c = defaults.clone();
        if let Some(v) = m.parse_value("lr_d")? {
            c.lr_d = v;
        }
        if let Some(v) = m.parse_value("lr_g")? {
            c.lr_g = v;
        }
        if let Some(v) = m.parse_value("batch_size")? {
            c.batch_size = v;
        }
        if let Some(v) = m.parse_value("iterations")? {
            c.iterations = v;
        }
        if let Some(v) = m.parse_value("seed")? {
            c.seed = v;
        }
        if let Some(v) = m.get("policy") {
            c.policy = UpdatePolicy::parse(v)?;
        }
        if let Some(v) = m.parse_value("adam_beta1")? {
            c.adam.beta1 = v;
        }
        if let Some(v) = m.parse_value("adam_beta2")? {
            c.adam.beta2 = v;
        }
        if let Some(v) = m.parse_value("adam_eps")? {
            c.adam.eps = v;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub d_loss: f64,
    pub g_loss: f64,
    /// Minimax value estimate, `-d_loss`.
    pub value: f64,
    pub acc_real: f64,
    pub acc_fake: f64,
}

/// Per-iteration statistics, measured on each iteration's batch before its updates.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainTrace {
    rows: Vec<TraceRow>,
}

pub const TRACE_HEADER: &str = "iter,d_loss,g_loss,V,acc_real,acc_fake";

impl TrainTrace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, row: TraceRow) {
        self.rows.push(row);
    }

    pub fn rows(&self) -> &[TraceRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Mean of `acc_real` and `acc_fake` over the last `window` rows.
    pub fn tail_accuracy(&self, window: usize) -> Option<(f64, f64)> {
        if self.rows.is_empty() || window == 0 {
            return None;
        }
        let tail = &self.rows[self.rows.len().saturating_sub(window)..];
        let n = tail.len() as f64;
        Some((
            tail.iter().map(|r| r.acc_real).sum::<f64>() / n,
            tail.iter().map(|r| r.acc_fake).sum::<f64>() / n,
        ))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(TRACE_HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{},{},{}", r.iter, r.d_loss, r.g_loss, r.value, r.acc_real, r.acc_fake);
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

fn accuracy<T: Scalar>(scores: &[T], real: bool) -> f64 {
    let half = T::lit(0.5);
    let hits = scores.iter().filter(|&&p| (p >= half) == real).count();
    hits as f64 / scores.len() as f64
}

/// Stateful training loop: one discriminator step, then one generator step, per iteration.
#[derive(Clone, Debug)]
pub struct Trainer<T> {
    pub gen: Generator<T>,
    pub disc: Discriminator<T>,
    pub config: TrainConfig,
    pub adam_g: AdamState<T>,
    pub adam_d: AdamState<T>,
    pub trace: TrainTrace,
    batcher: Batcher,
    rng: ChaCha8Rng,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(gen: Generator<T>, disc: Discriminator<T>, config: TrainConfig, examples: usize) -> Result<Self> {
        config.validate()?;
        if gen.config.canvas != disc.config.canvas {
            return Err(Error::dim("generator/discriminator canvas", &gen.config.canvas, &disc.config.canvas));
        }
        let batcher = Batcher::new(examples, config.batch_size, config.seed)?;
        Ok(Trainer {
            adam_g: AdamState::for_module(&gen),
            adam_d: AdamState::for_module(&disc),
            gen,
            disc,
            batcher,
            rng: ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e37_79b9_7f4a_7c15),
            trace: TrainTrace::new(),
            config,
        })
    }

    pub fn iteration(&self) -> usize {
        self.trace.len()
    }

    /// Runs one iteration on a batch drawn from `data`, whose leading axis indexes examples.
    pub fn step(&mut self, data: &Tensor<T>) -> Result<TraceRow> {
        let iter = self.iteration();
        let idx = self.batcher.next_batch();
        let real = data.select_rows(&idx)?;
        let n = real.rows();

        // Discriminator step. The generator is frozen here.
        let mut g = Graph::new();
        let gv = self.gen.bind(&mut g, false)?.vars;
        let dv = self.disc.bind(&mut g, true)?;
        let noise = self.gen.sample_noise(n, self.rng.next_u64())?;
        let z: Vec<Var> = noise.tensors().into_iter().map(|t| g.constant(t.clone())).collect();
        let fake = self.gen.unroll(&mut g, &gv, &z, Mode::Train, &mut GeneratorStats::default())?.canvas;
        let xr = g.constant(real);
        let mut log_real = BatchStatsLog::new();
        let mut log_fake = BatchStatsLog::new();
        let p_real = self.disc.forward(&mut g, &dv.vars, xr, Mode::Train, &mut log_real)?;
        let p_fake = self.disc.forward(&mut g, &dv.vars, fake, Mode::Train, &mut log_fake)?;
        let loss = d_loss_node(&mut g, p_real, p_fake)?;

        let (sr, sf) = (g.value(p_real).data(), g.value(p_fake).data());
        let row = TraceRow {
            iter,
            d_loss: g.value(loss).item()?.to_f64_lossy(),
            g_loss: g_loss_from_scores(sf),
            value: -g.value(loss).item()?.to_f64_lossy(),
            acc_real: accuracy(sr, true),
            acc_fake: accuracy(sf, false),
        };
        if !row.d_loss.is_finite() || !row.g_loss.is_finite() {
            return Err(Error::NonFinite {
                what: "loss",
                iteration: iter,
            });
        }
        let decision = update_policy_decide(self.config.policy, row.acc_real, row.acc_fake);
        if decision.update_d {
            let grads = g.backward(loss)?;
            let gd: Vec<Tensor<T>> = dv.params.iter().map(|&v| grads.wrt(v)).collect();
            check_finite(&gd, "discriminator gradient", iter)?;
            adam_step(&mut self.adam_d, &mut self.disc.params_mut(), &gd, self.config.lr_d, &self.config.adam)?;
            self.disc.update_running_stats(&g, &log_real)?;
            self.disc.update_running_stats(&g, &log_fake)?;
        }

        // Generator step, back-propagating through every unrolled step. The discriminator is frozen.
        if decision.update_g {
            let mut g = Graph::new();
            let gb = self.gen.bind(&mut g, true)?;
            let dv = self.disc.bind(&mut g, false)?.vars;
            let noise = self.gen.sample_noise(n, self.rng.next_u64())?;
            let z: Vec<Var> = noise.tensors().into_iter().map(|t| g.constant(t.clone())).collect();
            let mut stats = GeneratorStats::default();
            let fake = self.gen.unroll(&mut g, &gb.vars, &z, Mode::Train, &mut stats)?.canvas;
            let p_fake = self.disc.forward(&mut g, &dv, fake, Mode::Train, &mut BatchStatsLog::new())?;
            let loss = g_loss_node(&mut g, p_fake);
            let grads = g.backward(loss)?;
            let gg: Vec<Tensor<T>> = gb.params.iter().map(|&v| grads.wrt(v)).collect();
            check_finite(&gg, "generator gradient", iter)?;
            adam_step(&mut self.adam_g, &mut self.gen.params_mut(), &gg, self.config.lr_g, &self.config.adam)?;
            self.gen.update_running_stats(&g, &stats)?;
        }
        self.trace.push(row);
        Ok(row)
    }

    /// Runs the configured number of iterations.
    pub fn run(&mut self, data: &Tensor<T>) -> Result<()> {
        while self.iteration() < self.config.iterations {
            self.step(data)?;
        }
        Ok(())
    }

    pub fn into_parts(self) -> (Generator<T>, Discriminator<T>, TrainTrace) {
        (self.gen, self.disc, self.trace)
    }
}

fn check_finite<T: Scalar>(ts: &[Tensor<T>], what: &'static str, iteration: usize) -> Result<()> {
    if ts.iter().all(|t| t.all_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { what, iteration })
    }
}

/// Trains `gen` against `disc` on the examples of `data` (values in `[0, 1]`).
pub fn train<T: Scalar>(
    gen: Generator<T>,
    disc: Discriminator<T>,
    data: &Tensor<T>,
    config: &TrainConfig,
) -> Result<(Generator<T>, Discriminator<T>, TrainTrace)> {
    if data.data().iter().any(|&x| !(x >= T::zero() && x <= T::one())) {
        return Err(Error::contract("training data must be normalized to [0, 1]"));
    }
    let mut trainer = Trainer::new(gen, disc, config.clone(), data.rows())?;
    trainer.run(data)?;
    Ok(trainer.into_parts())
}
