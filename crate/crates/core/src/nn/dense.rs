use rand::Rng;

use super::{expect_vars, gaussian, Activation, Module};
use crate::graph::{Graph, Var};
use crate::{Error, Result, Scalar, Tensor};

/// Fully connected layer: `activation(x Wᵀ + b)` over a batch of rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub activation: Activation,
}

#[derive(Clone, Copy, Debug)]
pub struct DenseVars {
    pub weight: Var,
    pub bias: Var,
}

impl<T: Scalar> Dense<T> {
    pub fn new(weight: Tensor<T>, bias: Tensor<T>, activation: Activation) -> Result<Self> {
        if weight.rank() != 2 || bias.shape() != [weight.shape()[0]] {
            return Err(Error::dim("dense layer", weight.shape(), bias.shape()));
        }
        activation.validate()?;
        Ok(Dense {
            weight,
            bias,
            activation,
        })
    }

    pub fn init<R: Rng + ?Sized>(
        inputs: usize,
        outputs: usize,
        activation: Activation,
        std: f64,
        rng: &mut R,
    ) -> Self {
        Dense {
            weight: gaussian(&[outputs, inputs], std, rng),
            bias: Tensor::zeros(&[outputs]),
            activation,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&self, g: &mut Graph<T>, vars: &DenseVars, x: Var) -> Result<Var> {
        let xs = g.shape(x);
        if xs.len() != 2 || xs[1] != self.inputs() {
            return Err(Error::dim("dense forward", xs, self.weight.shape()));
        }
        let h = g.matmul_t(x, vars.weight)?;
        let h = g.add_bias(h, vars.bias)?;
        Ok(g.activation(h, self.activation))
    }
}

impl<T: Scalar> Module<T> for Dense<T> {
    type Vars = DenseVars;

    fn named_params(&self) -> Vec<(String, &Tensor<T>)> {
        vec![("weight".into(), &self.weight), ("bias".into(), &self.bias)]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        vec![&mut self.weight, &mut self.bias]
    }

    fn vars_from(&self, params: &[Var]) -> Result<DenseVars> {
        expect_vars(params, 2, "dense layer")?;
        Ok(DenseVars {
            weight: params[0],
            bias: params[1],
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(layer: &Dense<f64>, x: &Tensor<f64>) -> Tensor<f64> {
        let mut g = Graph::new();
        let b = layer.bind(&mut g, false).unwrap();
        let xv = g.constant(x.clone());
        let y = layer.forward(&mut g, &b.vars, xv).unwrap();
        g.value(y).clone()
    }

    #[test]
    fn identity_weights_pass_input_through() {
        let mut w = Tensor::zeros(&[3, 3]);
        for i in 0..3 {
            w.data_mut()[i * 3 + i] = 1.0;
        }
        let layer = Dense::new(w, Tensor::zeros(&[3]), Activation::Linear).unwrap();
        let x = Tensor::from_f64(&[2, 3], &[1., -2., 3., 0.5, 0., -7.]).unwrap();
        assert_eq!(run(&layer, &x), x);
    }

    #[test]
    fn zero_weights_give_bias() {
        let layer = Dense::new(
            Tensor::zeros(&[2, 4]),
            Tensor::from_f64(&[2], &[0.25, -3.0]).unwrap(),
            Activation::Linear,
        )
        .unwrap();
        let x = Tensor::from_fn(&[3, 4], |i| i as f64);
        let y = run(&layer, &x);
        for r in 0..3 {
            assert_eq!(y.get(&[r, 0]), 0.25);
            assert_eq!(y.get(&[r, 1]), -3.0);
        }
    }

    #[test]
    fn matches_naive_matrix_multiply() {
        // 3 outputs, 2 inputs, batch of 2; hand loop oracle.
        let w = Tensor::from_f64(&[3, 2], &[0.5, -1.0, 2.0, 0.25, -0.75, 1.5]).unwrap();
        let b = Tensor::from_f64(&[3], &[0.1, 0.2, -0.3]).unwrap();
        let x = Tensor::from_f64(&[2, 2], &[1.0, 2.0, -3.0, 0.5]).unwrap();
        let layer = Dense::new(w.clone(), b.clone(), Activation::Linear).unwrap();
        let y = run(&layer, &x);
        for n in 0..2 {
            for o in 0..3 {
                let mut acc = b.get(&[o]);
                for i in 0..2 {
                    acc += w.get(&[o, i]) * x.get(&[n, i]);
                }
                assert!((y.get(&[n, o]) - acc).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn rejects_mismatched_input() {
        let layer = Dense::<f64>::new(Tensor::zeros(&[2, 3]), Tensor::zeros(&[2]), Activation::Linear).unwrap();
        let mut g = Graph::new();
        let b = layer.bind(&mut g, false).unwrap();
        let x = g.constant(Tensor::zeros(&[1, 4]));
        assert!(layer.forward(&mut g, &b.vars, x).is_err());
        assert!(Dense::<f64>::new(Tensor::zeros(&[2, 3]), Tensor::zeros(&[3]), Activation::Linear).is_err());
    }
}
