use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, NumAssign};

/// Element type of a [`Tensor`](crate::Tensor).
///
/// Two precisions are used: [`Standard`] (`f32`) for training and [`Wide`]
/// (`f64`) for oracle comparisons and gradient checks.
pub trait Scalar:
    Float + NumAssign + Sum + Default + Debug + Display + Send + Sync + 'static
{
    const NAME: &'static str;

    fn lit(x: f64) -> Self;
    fn to_f64_lossy(self) -> f64;
    fn to_f32_lossy(self) -> f32;
    fn from_f32(x: f32) -> Self;
}

impl Scalar for f32 {
    const NAME: &'static str = "standard";

    #[inline]
    fn lit(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self as f64
    }
    #[inline]
    fn to_f32_lossy(self) -> f32 {
        self
    }
    #[inline]
    fn from_f32(x: f32) -> Self {
        x
    }
}

impl Scalar for f64 {
    const NAME: &'static str = "wide";

    #[inline]
    fn lit(x: f64) -> Self {
        x
    }
    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self
    }
    #[inline]
    fn to_f32_lossy(self) -> f32 {
        self as f32
    }
    #[inline]
    fn from_f32(x: f32) -> Self {
        x as f64
    }
}

/// Training precision.
pub type Standard = f32;
/// Oracle and gradient-check precision.
pub type Wide = f64;

/// Numeric mode selector, e.g. from the `GRANLAB_PRECISION` environment variable.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    Standard,
    Wide,
}

impl Precision {
    pub const ENV_VAR: &'static str = "GRANLAB_PRECISION";

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "standard" => Some(Precision::Standard),
            "wide" => Some(Precision::Wide),
            _ => None,
        }
    }

    /// Reads the environment, falling back to `default` when the variable is unset.
    pub fn from_env(default: Precision) -> crate::Result<Self> {
        match std::env::var(Self::ENV_VAR) {
            Ok(v) => Self::parse(&v).ok_or_else(|| {
                crate::Error::Config(format!(
                    "{}={v}: expected `standard` or `wide`",
                    Self::ENV_VAR
                ))
            }),
            Err(_) => Ok(default),
        }
    }
}

/// Clamp into `[lo, hi]` that lets NaN through, unlike `max`/`min`.
#[inline]
pub(crate) fn clamp_keep_nan<T: Scalar>(x: T, lo: T, hi: T) -> T {
    if x < lo {
        lo
    } else if x > hi {
        hi
    } else {
        x
    }
}
