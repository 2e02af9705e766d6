//! Parameterized layers and their composition into feed-forward stacks.

mod activation;
mod batchnorm;
mod conv_layer;
mod dense;
mod sequential;

pub use activation::{Activation, DEFAULT_LEAKY_SLOPE};
pub use batchnorm::{BatchNorm, BatchNormVars, DEFAULT_BN_EPS, DEFAULT_BN_MOMENTUM};
pub use conv_layer::{ConvLayer, ConvTransposeLayer, ConvVars};
pub use dense::{Dense, DenseVars};
pub use sequential::{Layer, LayerVars, Sequential, SequentialVars};

use rand::{Rng, SeedableRng};

use crate::graph::{Graph, Var};
use crate::{Error, Result, Scalar, Tensor};

/// Default standard deviation of the zero-mean Gaussian weight initialization.
pub const DEFAULT_INIT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Mode {
    #[default]
    Train,
    Eval,
}

/// Normalization nodes recorded by training-mode forward passes, keyed by layer index.
#[derive(Clone, Debug, Default)]
pub struct BatchStatsLog {
    pub(crate) entries: Vec<(usize, Var)>,
}

impl BatchStatsLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Graph handles of a module's parameters, plus the same handles flattened
/// in [`Module::named_params`] order.
#[derive(Clone, Debug)]
pub struct Bound<V> {
    pub vars: V,
    pub params: Vec<Var>,
}

/// A bundle of trainable tensors (and optional non-trained buffers such as
/// running statistics) that can be placed into a [`Graph`].
pub trait Module<T: Scalar> {
    type Vars;

    fn named_params(&self) -> Vec<(String, &Tensor<T>)>;

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>>;

    fn named_buffers(&self) -> Vec<(String, &Tensor<T>)> {
        Vec::new()
    }

    fn buffers_mut(&mut self) -> Vec<&mut Tensor<T>> {
        Vec::new()
    }

    /// Rebuilds the structured handles from one var per parameter, in
    /// [`Module::named_params`] order.
    fn vars_from(&self, params: &[Var]) -> Result<Self::Vars>;

    fn param_count(&self) -> usize {
        self.named_params().len()
    }

    /// Inserts every parameter as a leaf: trainable leaves receive gradients,
    /// frozen ones are constants.
    fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Result<Bound<Self::Vars>> {
        let params: Vec<Var> = self
            .named_params()
            .into_iter()
            .map(|(_, t)| {
                if trainable {
                    g.param(t.clone())
                } else {
                    g.constant(t.clone())
                }
            })
            .collect();
        let vars = self.vars_from(&params)?;
        Ok(Bound { vars, params })
    }

    /// Copies of every parameter, in order.
    fn param_tensors(&self) -> Vec<Tensor<T>> {
        self.named_params().into_iter().map(|(_, t)| t.clone()).collect()
    }

    /// Overwrites parameters from `values` (same order and shapes).
    fn set_params(&mut self, values: &[Tensor<T>]) -> Result<()> {
        let mut slots = self.params_mut();
        if slots.len() != values.len() {
            return Err(Error::contract(format!(
                "expected {} parameter tensors, got {}",
                slots.len(),
                values.len()
            )));
        }
        for (slot, v) in slots.iter_mut().zip(values) {
            if slot.shape() != v.shape() {
                return Err(Error::dim("set_params", slot.shape(), v.shape()));
            }
            **slot = v.clone();
        }
        Ok(())
    }
}

pub(crate) fn expect_vars(params: &[Var], n: usize, what: &str) -> Result<()> {
    if params.len() != n {
        return Err(Error::contract(format!(
            "{what} expects {n} parameter vars, got {}",
            params.len()
        )));
    }
    Ok(())
}

pub(crate) fn gaussian<T: Scalar, R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Tensor<T> {
    Tensor::randn(shape, 0.0, std, rng)
}

/// Redraws every parameter (biases and batch-norm scales included) from `N(0, std)`.
/// Finite-difference checks use this to move off the exact activation kinks
/// that zero-initialized biases create.
pub fn randomize_params<T: Scalar, M: Module<T>>(module: &mut M, std: f64, seed: u64) {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    for p in module.params_mut() {
        *p = gaussian(p.shape(), std, &mut rng);
    }
}
