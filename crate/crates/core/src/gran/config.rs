use crate::conv::{ConvSpec, Padding};
use crate::kv::{format_list, parse_list, KvMap};
use crate::nn::{DEFAULT_INIT_STD, DEFAULT_LEAKY_SLOPE};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoiseMode {
    /// One `z` drawn per sample and reused at every step.
    Shared,
    /// A fresh `z` for every step.
    PerStep,
}

impl NoiseMode {
    pub fn name(self) -> &'static str {
        match self {
            NoiseMode::Shared => "shared",
            NoiseMode::PerStep => "per-step",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "shared" => Ok(NoiseMode::Shared),
            "per-step" | "per_step" => Ok(NoiseMode::PerStep),
            other => Err(Error::Config(format!(
                "noise mode `{other}`: expected shared or per-step"
            ))),
        }
    }
}

/// Layer sizes of the decoder `f`, listed bottom to top. The encoder `g`
/// and the discriminator body use the same sizes in reverse.
#[derive(Clone, Debug, PartialEq)]
pub enum Ladder {
    /// Fully connected hidden widths; the canvas is a flat vector.
    Dense { widths: Vec<usize> },
    /// A dense layer onto `channels[0]` maps of size `base`, then one
    /// convolution-transpose layer per entry producing `channels[i]` maps
    /// with filter `filters[i]` and stride `strides[i]`.
    Conv {
        channels: Vec<usize>,
        filters: Vec<usize>,
        strides: Vec<usize>,
        base: Vec<usize>,
    },
}

/// Architecture of a generator/discriminator pair.
#[derive(Clone, Debug, PartialEq)]
pub struct GranConfig {
    /// Number of canvas updates `T`.
    pub steps: usize,
    pub z_dim: usize,
    /// Width of both the noise embedding `h_z` and the encoder output `h_c`.
    pub hidden: usize,
    pub noise: NoiseMode,
    /// Per-sample canvas shape: `[d]` for dense ladders, `[c, h, w]` for conv ladders.
    pub canvas: Vec<usize>,
    pub ladder: Ladder,
    /// Batch normalization after every hidden layer (never on the decoder's last layer).
    pub batch_norm: bool,
    pub leaky_slope: f64,
    pub init_std: f64,
}

pub const CONFIG_KEYS: &[&str] = &[
    "steps",
    "z_dim",
    "hidden",
    "noise",
    "canvas",
    "ladder",
    "widths",
    "channels",
    "filters",
    "strides",
    "base",
    "batch_norm",
    "leaky_slope",
    "init_std",
];

/// `same`-style padding for an odd filter: stride `s` maps size `n` to `ceil(n / s)`,
/// and the transpose maps `n` back to `n * s`.
pub(crate) fn ladder_spec(filter: usize, stride: usize) -> ConvSpec {
    ConvSpec::new(&[filter, filter])
        .with_stride(stride)
        .with_padding(Padding::Explicit(filter / 2))
        .with_output_padding(stride - 1)
}

impl GranConfig {
    /// MNIST ladder: maps `[80, 40, 1]`, filters `[5, 5, 5]`, 60-dimensional prior, 28×28 canvas.
    pub fn mnist(steps: usize) -> Self {
        GranConfig {
            steps,
            z_dim: 60,
            hidden: 100,
            noise: NoiseMode::Shared,
            canvas: vec![1, 28, 28],
            ladder: Ladder::Conv {
                channels: vec![80, 40, 1],
                filters: vec![5, 5, 5],
                strides: vec![1, 2, 2],
                base: vec![7, 7],
            },
            batch_norm: true,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
            init_std: DEFAULT_INIT_STD,
        }
    }

    /// Small conv ladder for 8×8 single-channel images.
    pub fn shapes(steps: usize) -> Self {
        GranConfig {
            steps,
            z_dim: 16,
            hidden: 32,
            noise: NoiseMode::Shared,
            canvas: vec![1, 8, 8],
            ladder: Ladder::Conv {
                channels: vec![16, 8, 1],
                filters: vec![3, 3, 3],
                strides: vec![1, 2, 2],
                base: vec![2, 2],
            },
            batch_norm: true,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
            init_std: DEFAULT_INIT_STD,
        }
    }

    /// Dense ladder for two-dimensional point clouds. The wider initialization
    /// keeps the unrolled generator from starting out collapsed onto one point.
    pub fn ring(steps: usize) -> Self {
        GranConfig {
            steps,
            z_dim: 8,
            hidden: 16,
            noise: NoiseMode::Shared,
            canvas: vec![2],
            ladder: Ladder::Dense {
                widths: vec![64, 64],
            },
            batch_norm: false,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
            init_std: 0.1,
        }
    }

    pub fn canvas_len(&self) -> usize {
        self.canvas.iter().product()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.steps == 0 {
            return bad("steps must be at least 1".into());
        }
        if self.z_dim == 0 || self.hidden == 0 {
            return bad("z_dim and hidden must be positive".into());
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope <= 1.0) {
            return bad(format!("leaky_slope {} outside (0, 1]", self.leaky_slope));
        }
        if !(self.init_std >= 0.0) {
            return bad(format!("init_std {} must be non-negative", self.init_std));
        }
        if self.canvas.is_empty() || self.canvas.contains(&0) {
            return bad(format!("invalid canvas {:?}", self.canvas));
        }
        match &self.ladder {
            Ladder::Dense { widths } => {
                if self.canvas.len() != 1 {
                    return bad(format!("dense ladder needs a flat canvas, got {:?}", self.canvas));
                }
                if widths.is_empty() || widths.contains(&0) {
                    return bad(format!("invalid dense widths {widths:?}"));
                }
            }
            Ladder::Conv {
                channels,
                filters,
                strides,
                base,
            } => {
                let n = channels.len();
                if n == 0 || filters.len() != n || strides.len() != n {
                    return bad("channels, filters and strides must have equal, non-zero length".into());
                }
                if channels.contains(&0) || strides.contains(&0) {
                    return bad("channels and strides must be positive".into());
                }
                if filters.iter().any(|&k| k % 2 == 0) {
                    return bad(format!("filters must be odd, got {filters:?}"));
                }
                if base.len() != 2 || base.contains(&0) {
                    return bad(format!("base must be two positive sizes, got {base:?}"));
                }
                let mut size = base.clone();
                for &s in strides {
                    for d in &mut size {
                        *d *= s;
                    }
                }
                let expected = vec![channels[n - 1], size[0], size[1]];
                if self.canvas != expected {
                    return bad(format!(
                        "conv ladder produces {expected:?} but canvas is {:?}",
                        self.canvas
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KvMap {
        let mut m = KvMap::new();
        m.set("steps", self.steps)
            .set("z_dim", self.z_dim)
            .set("hidden", self.hidden)
            .set("noise", self.noise.name())
            .set("canvas", format_list(&self.canvas));
        match &self.ladder {
            Ladder::Dense { widths } => {
                m.set("ladder", "dense").set("widths", format_list(widths));
            }
            Ladder::Conv {
                channels,
                filters,
                strides,
                base,
            } => {
                m.set("ladder", "conv")
                    .set("channels", format_list(channels))
                    .set("filters", format_list(filters))
                    .set("strides", format_list(strides))
                    .set("base", format_list(base));
            }
        }
        m.set("batch_norm", self.batch_norm)
            .set("leaky_slope", self.leaky_slope)
            .set("init_std", self.init_std);
        m
    }

    /// Reads a config; keys absent from `m` keep the values of `defaults`.
    pub fn from_kv_with(m: &KvMap, defaults: &GranConfig) -> Result<Self> {
        let mut c = defaults.clone();
        if let Some(v) = m.parse_value("steps")? {
            c.steps = v;
        }
        if let Some(v) = m.parse_value("z_dim")? {
            c.z_dim = v;
        }
        if let Some(v) = m.parse_value("hidden")? {
            c.hidden = v;
        }
        if let Some(v) = m.get("noise") {
            c.noise = NoiseMode::parse(v)?;
        }
        if let Some(v) = m.get("canvas") {
            c.canvas = parse_list("canvas", v)?;
        }
        let list = |key: &str| -> Result<Option<Vec<usize>>> {
            m.get(key).map(|v| parse_list(key, v)).transpose()
        };
        let kind = m.get("ladder").map(str::trim);
        match (kind, &c.ladder) {
            (Some("dense"), _) | (None, Ladder::Dense { .. }) => {
                let prev = match &c.ladder {
                    Ladder::Dense { widths } => widths.clone(),
                    _ => Vec::new(),
                };
                c.ladder = Ladder::Dense {
                    widths: list("widths")?.unwrap_or(prev),
                };
            }
            (Some("conv"), _) | (None, Ladder::Conv { .. }) => {
                let (pc, pf, ps, pb) = match &c.ladder {
                    Ladder::Conv {
                        channels,
                        filters,
                        strides,
                        base,
                    } => (channels.clone(), filters.clone(), strides.clone(), base.clone()),
                    _ => Default::default(),
                };
                c.ladder = Ladder::Conv {
                    channels: list("channels")?.unwrap_or(pc),
                    filters: list("filters")?.unwrap_or(pf),
                    strides: list("strides")?.unwrap_or(ps),
                    base: list("base")?.unwrap_or(pb),
                };
            }
            (Some(other), _) => {
                return Err(Error::Config(format!("ladder `{other}`: expected dense or conv")))
            }
        }
        if let Some(v) = m.parse_value("batch_norm")? {
            c.batch_norm = v;
        }
        if let Some(v) = m.parse_value("leaky_slope")? {
            c.leaky_slope = v;
        }
        if let Some(v) = m.parse_value("init_std")? {
            c.init_std = v;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn from_kv(m: &KvMap) -> Result<Self> {
        let defaults = match m.get("ladder") {
            Some("dense") => GranConfig::ring(1),
            _ => GranConfig::shapes(1),
        };
        Self::from_kv_with(m, &defaults)
    }
}
