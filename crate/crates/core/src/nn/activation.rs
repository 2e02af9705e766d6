use crate::scalar::clamp_keep_nan;
use crate::{Error, Result, Scalar};

/// Pointwise nonlinearity applied after a layer's affine part.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Linear,
    Relu,
    /// Negative-side slope in `(0, 1]`; a slope of 1 is the identity.
    LeakyRelu(f64),
    Tanh,
    Sigmoid,
}

impl Default for Activation {
    fn default() -> Self {
        Activation::Linear
    }
}

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.2;

impl Activation {
    pub fn leaky(slope: f64) -> Result<Self> {
        let a = Activation::LeakyRelu(slope);
        a.validate()?;
        Ok(a)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Activation::LeakyRelu(a) if !(a > 0.0 && a <= 1.0) => Err(Error::Config(format!(
                "leaky relu slope {a} outside (0, 1]"
            ))),
            _ => Ok(()),
        }
    }

    /// Forward value. Sigmoid and tanh saturate at the nearest representable
    /// value inside their open ranges, so outputs never touch the bounds.
    #[inline]
    pub fn apply<T: Scalar>(&self, x: T) -> T {
        match *self {
            Activation::Linear => x,
            Activation::Relu => {
                if x < T::zero() {
                    T::zero()
                } else {
                    x
                }
            }
            Activation::LeakyRelu(a) => {
                if x > T::zero() {
                    x
                } else {
                    x * T::lit(a)
                }
            }
            Activation::Tanh => {
                let edge = T::one() - T::epsilon() / T::lit(2.0);
                clamp_keep_nan(x.tanh(), -edge, edge)
            }
            Activation::Sigmoid => {
                let y = if x >= T::zero() {
                    T::one() / (T::one() + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (T::one() + e)
                };
                clamp_keep_nan(y, T::min_positive_value(), T::one() - T::epsilon() / T::lit(2.0))
            }
        }
    }

    /// Derivative given the input `x` and the output `y = apply(x)`.
    #[inline]
    pub fn derivative<T: Scalar>(&self, x: T, y: T) -> T {
        match *self {
            Activation::Linear => T::one(),
            Activation::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::LeakyRelu(a) => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::lit(a)
                }
            }
            Activation::Tanh => T::one() - y * y,
            Activation::Sigmoid => y * (T::one() - y),
        }
    }

    pub fn name(&self) -> String {
        match *self {
            Activation::Linear => "linear".into(),
            Activation::Relu => "relu".into(),
            Activation::LeakyRelu(a) => format!("leaky_relu({a})"),
            Activation::Tanh => "tanh".into(),
            Activation::Sigmoid => "sigmoid".into(),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "linear" => Ok(Activation::Linear),
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "sigmoid" => Ok(Activation::Sigmoid),
            _ => {
                let slope = s
                    .strip_prefix("leaky_relu(")
                    .and_then(|r| r.strip_suffix(')'))
                    .and_then(|v| v.parse::<f64>().ok())
                    .ok_or_else(|| Error::Config(format!("unknown activation `{s}`")))?;
                Activation::leaky(slope)
            }
        }
    }
}
