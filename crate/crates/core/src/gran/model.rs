use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{ladder_spec, GranConfig, Ladder, NoiseMode};
use crate::graph::{Graph, Var};
use crate::nn::{
    expect_vars, Activation, BatchNorm, BatchStatsLog, ConvLayer, ConvTransposeLayer, Dense, DenseVars, Layer,
    Mode, Module, Sequential, SequentialVars,
};
use crate::{Error, Result, Scalar, Tensor};

/// `count × z_dim` i.i.d. standard normal draws, deterministic per seed.
pub fn sample_prior<T: Scalar>(z_dim: usize, count: usize, seed: u64) -> Result<Tensor<T>> {
    if count == 0 || z_dim == 0 {
        return Err(Error::contract("sample_prior needs count >= 1 and z_dim >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(Tensor::randn(&[count, z_dim], 0.0, 1.0, &mut rng))
}

/// Feature-axis concatenation `[h_z, h_c]`, `h_z` first.
pub fn concat_hidden<T: Scalar>(h_z: &Tensor<T>, h_c: &Tensor<T>) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let a = g.constant(h_z.clone());
    let b = g.constant(h_c.clone());
    let c = g.concat(&[a, b])?;
    Ok(g.value(c).clone())
}

/// Prior draws for one batch.
#[derive(Clone, Debug, PartialEq)]
pub enum Noise<T> {
    Shared(Tensor<T>),
    PerStep(Vec<Tensor<T>>),
}

impl<T: Scalar> Noise<T> {
    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        match self {
            Noise::Shared(z) => vec![z],
            Noise::PerStep(zs) => zs.iter().collect(),
        }
    }

    pub fn count(&self) -> usize {
        self.tensors()[0].rows()
    }

    /// Draws noise for `count` samples. Step `t` (from 0) of the per-step
    /// mode uses seed `seed + t`, so its first step equals the shared draw.
    pub fn sample(config: &GranConfig, count: usize, seed: u64) -> Result<Self> {
        match config.noise {
            NoiseMode::Shared => Ok(Noise::Shared(sample_prior(config.z_dim, count, seed)?)),
            NoiseMode::PerStep => (0..config.steps)
                .map(|t| sample_prior(config.z_dim, count, seed.wrapping_add(t as u64)))
                .collect::<Result<Vec<_>>>()
                .map(Noise::PerStep),
        }
    }
}

fn hidden_block<T: Scalar>(layers: &mut Vec<Layer<T>>, main: Layer<T>, maps: usize, act: Activation, bn: bool) {
    layers.push(main);
    if bn {
        layers.push(Layer::BatchNorm(BatchNorm::new(maps)));
    }
    layers.push(Layer::Activation(act));
}

/// Decoder `f`: `[h_z, h_c]` to one canvas update. The last layer is linear.
fn build_decoder<T: Scalar, R: Rng>(c: &GranConfig, rng: &mut R) -> Sequential<T> {
    let std = c.init_std;
    let mut layers = Vec::new();
    match &c.ladder {
        Ladder::Dense { widths } => {
            let mut prev = 2 * c.hidden;
            for &w in widths {
                hidden_block(&mut layers, Layer::Dense(Dense::init(prev, w, Activation::Linear, std, rng)), w, Activation::Relu, c.batch_norm);
                prev = w;
            }
            layers.push(Layer::Dense(Dense::init(prev, c.canvas[0], Activation::Linear, std, rng)));
        }
        Ladder::Conv {
            channels,
            filters,
            strides,
            base,
        } => {
            let flat = channels[0] * base[0] * base[1];
            hidden_block(&mut layers, Layer::Dense(Dense::init(2 * c.hidden, flat, Activation::Linear, std, rng)), flat, Activation::Relu, c.batch_norm);
            layers.push(Layer::Reshape(vec![channels[0], base[0], base[1]]));
            let mut prev = channels[0];
            let last = channels.len() - 1;
            for (i, ((&ch, &k), &s)) in channels.iter().zip(filters).zip(strides).enumerate() {
                let layer = Layer::ConvTranspose(ConvTransposeLayer::init(prev, ch, ladder_spec(k, s), Activation::Linear, std, rng));
                if i == last {
                    layers.push(layer);
                } else {
                    hidden_block(&mut layers, layer, ch, Activation::Relu, c.batch_norm);
                }
                prev = ch;
            }
        }
    }
    Sequential::new(layers)
}

/// Mirror of the decoder's hidden layers, from a canvas down to a flat feature vector
/// of the decoder's bottom width. Shared by the encoder and the discriminator.
fn build_mirror_body<T: Scalar, R: Rng>(c: &GranConfig, rng: &mut R) -> (Vec<Layer<T>>, usize) {
    let std = c.init_std;
    let act = Activation::LeakyRelu(c.leaky_slope);
    let mut layers = Vec::new();
    match &c.ladder {
        Ladder::Dense { widths } => {
            let mut prev = c.canvas[0];
            for &w in widths.iter().rev() {
                hidden_block(&mut layers, Layer::Dense(Dense::init(prev, w, Activation::Linear, std, rng)), w, act, c.batch_norm);
                prev = w;
            }
            (layers, prev)
        }
        Ladder::Conv {
            channels,
            filters,
            strides,
            base,
        } => {
            let n = channels.len();
            for i in (0..n).rev() {
                let from = channels[i];
                let to = if i == 0 { channels[0] } else { channels[i - 1] };
                let layer = Layer::Conv(ConvLayer::init(from, to, ladder_spec(filters[i], strides[i]), Activation::Linear, std, rng));
                hidden_block(&mut layers, layer, to, act, c.batch_norm);
            }
            layers.push(Layer::Flatten);
            (layers, channels[0] * base[0] * base[1])
        }
    }
}

/// Encoder `g`: previous canvas update to `h_c`, bounded by a final tanh.
fn build_encoder<T: Scalar, R: Rng>(c: &GranConfig, rng: &mut R) -> Sequential<T> {
    let (mut layers, width) = build_mirror_body(c, rng);
    layers.push(Layer::Dense(Dense::init(width, c.hidden, Activation::Tanh, c.init_std, rng)));
    Sequential::new(layers)
}

/// Batch-norm statistics recorded while unrolling a generator in training mode.
#[derive(Clone, Debug, Default)]
pub struct GeneratorStats {
    pub decoder: BatchStatsLog,
    pub encoder: BatchStatsLog,
}

/// Graph nodes of one unrolled generation.
#[derive(Clone, Debug)]
pub struct Unrolled {
    /// `sigmoid(sum of deltas)`.
    pub canvas: Var,
    /// Pre-sigmoid sum of deltas.
    pub logits: Var,
    pub deltas: Vec<Var>,
    pub h_z: Vec<Var>,
    pub h_c: Vec<Var>,
}

/// Tensor outputs of [`Generator::generate`].
#[derive(Clone, Debug)]
pub struct Generated<T> {
    pub canvas: Tensor<T>,
    pub deltas: Vec<Tensor<T>>,
    pub h_z: Vec<Tensor<T>>,
    pub h_c: Vec<Tensor<T>>,
}

/// Recurrent canvas generator. One copy of the embedding, decoder and
/// encoder parameters serves every step.
#[derive(Clone, Debug, PartialEq)]
pub struct Generator<T> {
    pub config: GranConfig,
    /// `h_z = tanh(W z + b)`.
    pub embed: Dense<T>,
    pub decoder: Sequential<T>,
    pub encoder: Sequential<T>,
}

#[derive(Clone, Debug)]
pub struct GeneratorVars {
    pub embed: DenseVars,
    pub decoder: SequentialVars,
    pub encoder: SequentialVars,
}

impl<T: Scalar> Generator<T> {
    pub fn init(config: GranConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let embed = Dense::init(config.z_dim, config.hidden, Activation::Tanh, config.init_std, &mut rng);
        let decoder = build_decoder(&config, &mut rng);
        let encoder = build_encoder(&config, &mut rng);
        let gen = Generator {
            config,
            embed,
            decoder,
            encoder,
        };
        gen.check_shapes()?;
        Ok(gen)
    }

    fn check_shapes(&self) -> Result<()> {
        let c = &self.config;
        let out = self.decoder.output_shape(&[2 * c.hidden])?;
        if out != c.canvas {
            return Err(Error::dim("decoder output", &out, &c.canvas));
        }
        let h = self.encoder.output_shape(&c.canvas)?;
        if h != [c.hidden] {
            return Err(Error::dim("encoder output", &h, &[c.hidden]));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        self.config.steps
    }

    /// Noise for `count` samples in this generator's noise mode.
    pub fn sample_noise(&self, count: usize, seed: u64) -> Result<Noise<T>> {
        Noise::sample(&self.config, count, seed)
    }

    /// `h_z = tanh(W z + b)`.
    pub fn noise_embed(&self, g: &mut Graph<T>, vars: &GeneratorVars, z: Var) -> Result<Var> {
        let zs = g.shape(z);
        if zs.len() != 2 || zs[1] != self.config.z_dim {
            return Err(Error::dim("noise embedding", zs, &[self.config.z_dim]));
        }
        self.embed.forward(g, &vars.embed, z)
    }

    /// Unrolls all steps: `h_c,t = g(ΔC_{t-1})` with `ΔC_0` the zero canvas,
    /// `h_z,t = tanh(W z_t + b)`, `ΔC_t = f([h_z,t, h_c,t])`, and finally
    /// `C = sigmoid(Σ ΔC_t)`.
    ///
    /// `z` holds one node in shared-noise mode and one per step otherwise.
    pub fn unroll(
        &self,
        g: &mut Graph<T>,
        vars: &GeneratorVars,
        z: &[Var],
        mode: Mode,
        stats: &mut GeneratorStats,
    ) -> Result<Unrolled> {
        let c = &self.config;
        let expected = match c.noise {
            NoiseMode::Shared => 1,
            NoiseMode::PerStep => c.steps,
        };
        if z.len() != expected {
            return Err(Error::contract(format!(
                "{} noise mode with {} steps needs {expected} noise tensors, got {}",
                c.noise.name(),
                c.steps,
                z.len()
            )));
        }
        let n = g.shape(z[0])[0];
        if z.iter().any(|&v| g.shape(v)[0] != n) {
            return Err(Error::contract("noise tensors disagree on batch size"));
        }
        let mut canvas_shape = vec![n];
        canvas_shape.extend_from_slice(&c.canvas);
        let mut prev = g.constant(Tensor::zeros(&canvas_shape));

        let shared = match c.noise {
            NoiseMode::Shared => Some(self.noise_embed(g, vars, z[0])?),
            NoiseMode::PerStep => None,
        };
        let mut out = Unrolled {
            canvas: prev,
            logits: prev,
            deltas: Vec::with_capacity(c.steps),
            h_z: Vec::with_capacity(c.steps),
            h_c: Vec::with_capacity(c.steps),
        };
        for t in 0..c.steps {
            let h_c = self.encoder.forward(g, &vars.encoder, prev, mode, &mut stats.encoder)?;
            let h_z = match shared {
                Some(h) => h,
                None => self.noise_embed(g, vars, z[t])?,
            };
            let joint = g.concat(&[h_z, h_c])?;
            let delta = self.decoder.forward(g, &vars.decoder, joint, mode, &mut stats.decoder)?;
            out.h_c.push(h_c);
            out.h_z.push(h_z);
            out.deltas.push(delta);
            prev = delta;
        }
        out.logits = g.add_all(&out.deltas)?;
        out.canvas = g.sigmoid(out.logits);
        Ok(out)
    }

    /// Runs the generator outside of training.
    pub fn generate(&self, noise: &Noise<T>) -> Result<Generated<T>> {
        self.generate_in(noise, Mode::Eval)
    }

    pub fn generate_in(&self, noise: &Noise<T>, mode: Mode) -> Result<Generated<T>> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g, false)?.vars;
        let z: Vec<Var> = noise.tensors().into_iter().map(|t| g.constant(t.clone())).collect();
        let mut stats = GeneratorStats::default();
        let u = self.unroll(&mut g, &vars, &z, mode, &mut stats)?;
        let take = |vs: &[Var]| vs.iter().map(|&v| g.value(v).clone()).collect::<Vec<_>>();
        Ok(Generated {
            canvas: g.value(u.canvas).clone(),
            deltas: take(&u.deltas),
            h_z: take(&u.h_z),
            h_c: take(&u.h_c),
        })
    }

    /// `count` samples from seed `seed`.
    pub fn sample(&self, count: usize, seed: u64) -> Result<Tensor<T>> {
        Ok(self.generate(&self.sample_noise(count, seed)?)?.canvas)
    }

    pub fn update_running_stats(&mut self, g: &Graph<T>, stats: &GeneratorStats) -> Result<()> {
        self.decoder.update_running_stats(g, &stats.decoder)?;
        self.encoder.update_running_stats(g, &stats.encoder)
    }

    pub fn cast<U: Scalar>(&self) -> Result<Generator<U>> {
        let mut out = Generator::<U>::init(self.config.clone(), 0)?;
        cast_into(self, &mut out)?;
        Ok(out)
    }
}

/// Copies parameters and buffers between modules of identical structure and different precision.
pub(crate) fn cast_into<A: Scalar, B: Scalar, M: Module<A>, N: Module<B>>(from: &M, to: &mut N) -> Result<()> {
    let params: Vec<Tensor<B>> = from.named_params().into_iter().map(|(_, t)| t.cast()).collect();
    to.set_params(&params)?;
    let bufs: Vec<Tensor<B>> = from.named_buffers().into_iter().map(|(_, t)| t.cast()).collect();
    let mut slots = to.buffers_mut();
    if slots.len() != bufs.len() {
        return Err(Error::contract("buffer count mismatch"));
    }
    for (slot, b) in slots.iter_mut().zip(bufs) {
        **slot = b;
    }
    Ok(())
}

fn prefixed<'a, T>(prefix: &str, items: Vec<(String, &'a Tensor<T>)>) -> Vec<(String, &'a Tensor<T>)> {
    items.into_iter().map(|(n, t)| (format!("{prefix}.{n}"), t)).collect()
}

impl<T: Scalar> Module<T> for Generator<T> {
    type Vars = GeneratorVars;

    fn named_params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut v = prefixed("embed", self.embed.named_params());
        v.extend(prefixed("f", self.decoder.named_params()));
        v.extend(prefixed("g", self.encoder.named_params()));
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut v = self.embed.params_mut();
        v.extend(self.decoder.params_mut());
        v.extend(self.encoder.params_mut());
        v
    }

    fn named_buffers(&self) -> Vec<(String, &Tensor<T>)> {
        let mut v = prefixed("f", self.decoder.named_buffers());
        v.extend(prefixed("g", self.encoder.named_buffers()));
        v
    }

    fn buffers_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut v = self.decoder.buffers_mut();
        v.extend(self.encoder.buffers_mut());
        v
    }

    fn vars_from(&self, params: &[Var]) -> Result<GeneratorVars> {
        expect_vars(params, self.param_count(), "generator")?;
        let (e, rest) = params.split_at(self.embed.param_count());
        let (f, gg) = rest.split_at(self.decoder.param_count());
        Ok(GeneratorVars {
            embed: self.embed.vars_from(e)?,
            decoder: self.decoder.vars_from(f)?,
            encoder: self.encoder.vars_from(gg)?,
        })
    }
}

/// Convolutional (or dense) classifier with a sigmoid real-probability output.
#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator<T> {
    pub config: GranConfig,
    pub net: Sequential<T>,
}

/// Evaluation batch size used when scoring large sample sets.
const SCORE_CHUNK: usize = 512;

impl<T: Scalar> Discriminator<T> {
    /// Same body as the generator's encoder, with a one-unit sigmoid head.
    pub fn init(config: GranConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut layers, width) = build_mirror_body::<T, _>(&config, &mut rng);
        layers.push(Layer::Dense(Dense::init(width, 1, Activation::Sigmoid, config.init_std, &mut rng)));
        let net = Sequential::new(layers);
        let out = net.output_shape(&config.canvas)?;
        if out != [1] {
            return Err(Error::dim("discriminator output", &out, &[1]));
        }
        Ok(Discriminator { config, net })
    }

    /// A discriminator that scores every input `p`: zero weights and a head bias of `logit(p)`.
    pub fn constant(config: GranConfig, p: f64) -> Result<Self> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::contract(format!("constant score {p} outside (0, 1)")));
        }
        let mut d = Self::init(config, 0)?;
        let zeros: Vec<Tensor<T>> = d.param_tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        d.set_params(&zeros)?;
        if let Some(Layer::Dense(head)) = d.net.layers.last_mut() {
            head.bias = Tensor::full(&[1], T::lit((p / (1.0 - p)).ln()));
        }
        for l in &mut d.net.layers {
            if let Layer::BatchNorm(bn) = l {
                bn.gamma = Tensor::ones(bn.gamma.shape());
            }
        }
        Ok(d)
    }

    pub fn forward(&self, g: &mut Graph<T>, vars: &SequentialVars, x: Var, mode: Mode, log: &mut BatchStatsLog) -> Result<Var> {
        let xs = g.shape(x);
        if xs.len() < 2 || xs[1..] != self.config.canvas[..] {
            return Err(Error::dim("discriminator input", xs, &self.config.canvas));
        }
        self.net.forward(g, vars, x, mode, log)
    }

    /// Real-probability scores in `(0, 1)`, one per leading-axis entry, in evaluation mode.
    pub fn discriminate(&self, x: &Tensor<T>) -> Result<Vec<T>> {
        if x.rank() < 2 || x.shape()[1..] != self.config.canvas[..] {
            return Err(Error::dim("discriminator input", x.shape(), &self.config.canvas));
        }
        let mut scores = Vec::with_capacity(x.rows());
        let mut start = 0;
        while start < x.rows() {
            let end = (start + SCORE_CHUNK).min(x.rows());
            let chunk = x.slice_rows(start, end)?;
            let mut g = Graph::new();
            let vars = self.bind(&mut g, false)?.vars;
            let xv = g.constant(chunk);
            let mut log = BatchStatsLog::new();
            let y = self.forward(&mut g, &vars, xv, Mode::Eval, &mut log)?;
            scores.extend_from_slice(g.value(y).data());
            start = end;
        }
        Ok(scores)
    }

    pub fn update_running_stats(&mut self, g: &Graph<T>, log: &BatchStatsLog) -> Result<()> {
        self.net.update_running_stats(g, log)
    }

    pub fn cast<U: Scalar>(&self) -> Result<Discriminator<U>> {
        let mut out = Discriminator::<U>::init(self.config.clone(), 0)?;
        cast_into(self, &mut out)?;
        Ok(out)
    }
}

impl<T: Scalar> Module<T> for Discriminator<T> {
    type Vars = SequentialVars;

    fn named_params(&self) -> Vec<(String, &Tensor<T>)> {
        self.net.named_params()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.net.params_mut()
    }

    fn named_buffers(&self) -> Vec<(String, &Tensor<T>)> {
        self.net.named_buffers()
    }

    fn buffers_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.net.buffers_mut()
    }

    fn vars_from(&self, params: &[Var]) -> Result<SequentialVars> {
        self.net.vars_from(params)
    }
}
