use rand::Rng;

use super::{expect_vars, gaussian, Activation, Module};
use crate::conv::ConvSpec;
use crate::graph::{Graph, Var};
use crate::{Error, Result, Scalar, Tensor};

#[derive(Clone, Copy, Debug)]
pub struct ConvVars {
    pub weight: Var,
    pub bias: Var,
}

/// `activation(sum over input maps of conv(x_j, W) + b)`, one bias per output map.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer<T> {
    /// `[out_maps, in_maps, k...]`
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub spec: ConvSpec,
    pub activation: Activation,
}

/// `activation(sum over input maps of conv_transpose(x_j, W) + b)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvTransposeLayer<T> {
    /// `[in_maps, out_maps, k...]`, the layout of the convolution this layer transposes.
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub spec: ConvSpec,
    pub activation: Activation,
}

fn check(weight_shape: &[usize], bias_maps: usize, bias: &[usize], spec: &ConvSpec) -> Result<()> {
    spec.validate()?;
    if weight_shape.len() != spec.spatial_rank() + 2 || weight_shape[2..] != spec.kernel[..] {
        return Err(Error::dim("conv layer kernels", weight_shape, &spec.kernel));
    }
    if bias != [bias_maps] {
        return Err(Error::dim("conv layer bias", weight_shape, bias));
    }
    Ok(())
}

impl<T: Scalar> ConvLayer<T> {
    pub fn new(weight: Tensor<T>, bias: Tensor<T>, spec: ConvSpec, activation: Activation) -> Result<Self> {
        check(weight.shape(), weight.shape()[0], bias.shape(), &spec)?;
        activation.validate()?;
        Ok(ConvLayer {
            weight,
            bias,
            spec,
            activation,
        })
    }

    pub fn init<R: Rng + ?Sized>(
        in_maps: usize,
        out_maps: usize,
        spec: ConvSpec,
        activation: Activation,
        std: f64,
        rng: &mut R,
    ) -> Self {
        let mut shape = vec![out_maps, in_maps];
        shape.extend_from_slice(&spec.kernel);
        ConvLayer {
            weight: gaussian(&shape, std, rng),
            bias: Tensor::zeros(&[out_maps]),
            spec,
            activation,
        }
    }

    pub fn in_maps(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_maps(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&self, g: &mut Graph<T>, vars: &ConvVars, x: Var) -> Result<Var> {
        let h = g.conv(x, vars.weight, &self.spec)?;
        let h = g.add_bias(h, vars.bias)?;
        Ok(g.activation(h, self.activation))
    }
}

impl<T: Scalar> ConvTransposeLayer<T> {
    pub fn new(weight: Tensor<T>, bias: Tensor<T>, spec: ConvSpec, activation: Activation) -> Result<Self> {
        check(weight.shape(), weight.shape()[1], bias.shape(), &spec)?;
        activation.validate()?;
        Ok(ConvTransposeLayer {
            weight,
            bias,
            spec,
            activation,
        })
    }

    pub fn init<R: Rng + ?Sized>(
        in_maps: usize,
        out_maps: usize,
        spec: ConvSpec,
        activation: Activation,
        std: f64,
        rng: &mut R,
    ) -> Self {
        let mut shape = vec![in_maps, out_maps];
        shape.extend_from_slice(&spec.kernel);
        ConvTransposeLayer {
            weight: gaussian(&shape, std, rng),
            bias: Tensor::zeros(&[out_maps]),
            spec,
            activation,
        }
    }

    pub fn in_maps(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn out_maps(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn forward(&self, g: &mut Graph<T>, vars: &ConvVars, x: Var) -> Result<Var> {
        let h = g.conv_transpose(x, vars.weight, &self.spec)?;
        let h = g.add_bias(h, vars.bias)?;
        Ok(g.activation(h, self.activation))
    }
}

macro_rules! conv_module {
    ($ty:ident, $what:literal) => {
        impl<T: Scalar> Module<T> for $ty<T> {
            type Vars = ConvVars;

            fn named_params(&self) -> Vec<(String, &Tensor<T>)> {
                vec![("weight".into(), &self.weight), ("bias".into(), &self.bias)]
            }

            fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
                vec![&mut self.weight, &mut self.bias]
            }

            fn vars_from(&self, params: &[Var]) -> Result<ConvVars> {
                expect_vars(params, 2, $what)?;
                Ok(ConvVars {
                    weight: params[0],
                    bias: params[1],
                })
            }
        }
    };
}

conv_module!(ConvLayer, "conv layer");
conv_module!(ConvTransposeLayer, "conv transpose layer");
