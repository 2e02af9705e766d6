use super::{expect_vars, BatchStatsLog, Mode, Module};
use crate::graph::{Graph, Var};
use crate::{Error, Result, Scalar, Tensor};

pub const DEFAULT_BN_EPS: f64 = 1e-5;
/// Fraction of the running statistics kept at each update.
pub const DEFAULT_BN_MOMENTUM: f64 = 0.9;

/// Per-channel batch normalization with learned scale and shift.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub momentum: f64,
    pub eps: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct BatchNormVars {
    pub gamma: Var,
    pub beta: Var,
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(channels: usize) -> Self {
        BatchNorm {
            gamma: Tensor::ones(&[channels]),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::ones(&[channels]),
            momentum: DEFAULT_BN_MOMENTUM,
            eps: DEFAULT_BN_EPS,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Training mode normalizes with batch statistics and records the
    /// normalization node in `log` under `index`; evaluation mode uses the
    /// running statistics.
    pub fn forward(
        &self,
        g: &mut Graph<T>,
        vars: &BatchNormVars,
        x: Var,
        mode: Mode,
        index: usize,
        log: &mut BatchStatsLog,
    ) -> Result<Var> {
        let xs = g.shape(x).to_vec();
        if xs.len() < 2 || xs[1] != self.channels() {
            return Err(Error::dim("batch norm", &xs, &[self.channels()]));
        }
        let normalized = match mode {
            Mode::Train => {
                if xs[0] < 2 {
                    return Err(Error::contract(format!(
                        "batch norm in training mode needs a batch of at least 2, got {}",
                        xs[0]
                    )));
                }
                let n = g.normalize(x, self.eps)?;
                log.entries.push((index, n));
                n
            }
            Mode::Eval => {
                let shift = g.constant(self.running_mean.map(|m| -m));
                let e = T::lit(self.eps);
                let inv = g.constant(self.running_var.map(|v| T::one() / (v + e).sqrt()));
                let centered = g.add_bias(x, shift)?;
                g.scale_channels(centered, inv)?
            }
        };
        let scaled = g.scale_channels(normalized, vars.gamma)?;
        g.add_bias(scaled, vars.beta)
    }

    /// Folds one batch's statistics into the running estimates.
    pub fn absorb(&mut self, mean: &[T], var: &[T]) -> Result<()> {
        if mean.len() != self.channels() || var.len() != self.channels() {
            return Err(Error::dim("batch norm stats", &[mean.len(), var.len()], &[self.channels()]));
        }
        let k = T::lit(self.momentum);
        let r = T::one() - k;
        for (rm, &m) in self.running_mean.data_mut().iter_mut().zip(mean) {
            *rm = k * *rm + r * m;
        }
        for (rv, &v) in self.running_var.data_mut().iter_mut().zip(var) {
            *rv = (k * *rv + r * v).max(T::zero());
        }
        Ok(())
    }
}

impl<T: Scalar> Module<T> for BatchNorm<T> {
    type Vars = BatchNormVars;

    fn named_params(&self) -> Vec<(String, &Tensor<T>)> {
        vec![("gamma".into(), &self.gamma), ("beta".into(), &self.beta)]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        vec![&mut self.gamma, &mut self.beta]
    }

    fn named_buffers(&self) -> Vec<(String, &Tensor<T>)> {
        vec![
            ("running_mean".into(), &self.running_mean),
            ("running_var".into(), &self.running_var),
        ]
    }

    fn buffers_mut(&mut self) -> Vec<&mut Tensor<T>> {
        vec![&mut self.running_mean, &mut self.running_var]
    }

    fn vars_from(&self, params: &[Var]) -> Result<BatchNormVars> {
        expect_vars(params, 2, "batch norm")?;
        Ok(BatchNormVars {
            gamma: params[0],
            beta: params[1],
        })
    }
}
