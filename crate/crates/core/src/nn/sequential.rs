use super::{
    expect_vars, Activation, BatchNorm, BatchNormVars, BatchStatsLog, ConvLayer, ConvTransposeLayer, ConvVars,
    Dense, DenseVars, Mode, Module,
};
use crate::graph::{Graph, Var};
use crate::{Error, Result, Scalar, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub enum Layer<T> {
    Dense(Dense<T>),
    Conv(ConvLayer<T>),
    ConvTranspose(ConvTransposeLayer<T>),
    BatchNorm(BatchNorm<T>),
    Activation(Activation),
    /// Reshapes each batch entry to the given per-item shape.
    Reshape(Vec<usize>),
    /// Flattens each batch entry to a vector.
    Flatten,
}

#[derive(Clone, Copy, Debug)]
pub enum LayerVars {
    Dense(DenseVars),
    Conv(ConvVars),
    BatchNorm(BatchNormVars),
    None,
}

#[derive(Clone, Debug)]
pub struct SequentialVars(pub Vec<LayerVars>);

/// Layers applied in order to a batch.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Sequential<T> {
    pub layers: Vec<Layer<T>>,
}

impl<T: Scalar> Layer<T> {
    fn kind(&self) -> &'static str {
        match self {
            Layer::Dense(_) => "dense",
            Layer::Conv(_) => "conv",
            Layer::ConvTranspose(_) => "conv_transpose",
            Layer::BatchNorm(_) => "batch_norm",
            Layer::Activation(_) => "activation",
            Layer::Reshape(_) => "reshape",
            Layer::Flatten => "flatten",
        }
    }

    fn module(&self) -> Option<&dyn ParamView<T>> {
        match self {
            Layer::Dense(l) => Some(l),
            Layer::Conv(l) => Some(l),
            Layer::ConvTranspose(l) => Some(l),
            Layer::BatchNorm(l) => Some(l),
            _ => None,
        }
    }

    /// Per-item output shape for a per-item input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match self {
            Layer::Dense(d) => {
                if input != [d.inputs()] {
                    return Err(Error::dim("dense layer", input, d.weight.shape()));
                }
                Ok(vec![d.outputs()])
            }
            Layer::Conv(c) => {
                if input.len() != c.spec.spatial_rank() + 1 || input[0] != c.in_maps() {
                    return Err(Error::dim("conv layer", input, c.weight.shape()));
                }
                let mut out = vec![c.out_maps()];
                out.extend(c.spec.output_size(&input[1..])?);
                Ok(out)
            }
            Layer::ConvTranspose(c) => {
                if input.len() != c.spec.spatial_rank() + 1 || input[0] != c.in_maps() {
                    return Err(Error::dim("conv transpose layer", input, c.weight.shape()));
                }
                let mut out = vec![c.out_maps()];
                out.extend(c.spec.transpose_output_size(&input[1..])?);
                Ok(out)
            }
            Layer::BatchNorm(b) => {
                if input.first() != Some(&b.channels()) {
                    return Err(Error::dim("batch norm", input, &[b.channels()]));
                }
                Ok(input.to_vec())
            }
            Layer::Activation(_) => Ok(input.to_vec()),
            Layer::Reshape(shape) => {
                if shape.iter().product::<usize>() != input.iter().product::<usize>() {
                    return Err(Error::dim("reshape layer", input, shape));
                }
                Ok(shape.clone())
            }
            Layer::Flatten => Ok(vec![input.iter().product()]),
        }
    }
}

/// Object-safe view over the parameter bookkeeping of a [`Module`].
trait ParamView<T: Scalar> {
    fn view_params(&self) -> Vec<(String, &Tensor<T>)>;
    fn view_buffers(&self) -> Vec<(String, &Tensor<T>)>;
}

impl<T: Scalar, M: Module<T>> ParamView<T> for M {
    fn view_params(&self) -> Vec<(String, &Tensor<T>)> {
        self.named_params()
    }
    fn view_buffers(&self) -> Vec<(String, &Tensor<T>)> {
        self.named_buffers()
    }
}

impl<T: Scalar> Sequential<T> {
    pub fn new(layers: Vec<Layer<T>>) -> Self {
        Sequential { layers }
    }

    /// Per-item shape after every layer, starting from `input`.
    pub fn shape_ladder(&self, input: &[usize]) -> Result<Vec<Vec<usize>>> {
        let mut shapes = vec![input.to_vec()];
        for layer in &self.layers {
            let next = layer.output_shape(shapes.last().expect("non-empty"))?;
            shapes.push(next);
        }
        Ok(shapes)
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        Ok(self.shape_ladder(input)?.pop().expect("non-empty"))
    }

    pub fn forward(
        &self,
        g: &mut Graph<T>,
        vars: &SequentialVars,
        x: Var,
        mode: Mode,
        log: &mut BatchStatsLog,
    ) -> Result<Var> {
        if vars.0.len() != self.layers.len() {
            return Err(Error::contract("sequential vars do not match layers"));
        }
        let mut h = x;
        for (i, (layer, lv)) in self.layers.iter().zip(&vars.0).enumerate() {
            h = match (layer, lv) {
                (Layer::Dense(d), LayerVars::Dense(v)) => d.forward(g, v, h)?,
                (Layer::Conv(c), LayerVars::Conv(v)) => c.forward(g, v, h)?,
                (Layer::ConvTranspose(c), LayerVars::Conv(v)) => c.forward(g, v, h)?,
                (Layer::BatchNorm(b), LayerVars::BatchNorm(v)) => b.forward(g, v, h, mode, i, log)?,
                (Layer::Activation(a), LayerVars::None) => g.activation(h, *a),
                (Layer::Reshape(shape), LayerVars::None) => {
                    let mut full = vec![g.shape(h)[0]];
                    full.extend_from_slice(shape);
                    g.reshape(h, &full)?
                }
                (Layer::Flatten, LayerVars::None) => {
                    let s = g.shape(h);
                    let full = [s[0], s[1..].iter().product()];
                    g.reshape(h, &full)?
                }
                _ => {
                    return Err(Error::contract(format!(
                        "vars for layer {i} do not match a {} layer",
                        layer.kind()
                    )))
                }
            };
        }
        Ok(h)
    }

    /// Folds the batch statistics recorded in `log` into the running estimates.
    pub fn update_running_stats(&mut self, g: &Graph<T>, log: &BatchStatsLog) -> Result<()> {
        for &(i, node) in &log.entries {
            let Some(Layer::BatchNorm(bn)) = self.layers.get_mut(i) else {
                return Err(Error::contract(format!("no batch norm layer at index {i}")));
            };
            let (mean, var) = g
                .batch_stats(node)
                .ok_or_else(|| Error::contract("logged node is not a normalization"))?;
            bn.absorb(mean, var)?;
        }
        Ok(())
    }

    pub fn has_batch_norm(&self) -> bool {
        self.layers.iter().any(|l| matches!(l, Layer::BatchNorm(_)))
    }
}

impl<T: Scalar> Module<T> for Sequential<T> {
    type Vars = SequentialVars;

    fn named_params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            if let Some(m) = layer.module() {
                out.extend(m.view_params().into_iter().map(|(n, t)| (format!("{i}.{n}"), t)));
            }
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Dense(l) => out.extend(l.params_mut()),
                Layer::Conv(l) => out.extend(l.params_mut()),
                Layer::ConvTranspose(l) => out.extend(l.params_mut()),
                Layer::BatchNorm(l) => out.extend(l.params_mut()),
                _ => {}
            }
        }
        out
    }

    fn named_buffers(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            if let Some(m) = layer.module() {
                out.extend(m.view_buffers().into_iter().map(|(n, t)| (format!("{i}.{n}"), t)));
            }
        }
        out
    }

    fn buffers_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            if let Layer::BatchNorm(l) = layer {
                out.extend(l.buffers_mut());
            }
        }
        out
    }

    fn vars_from(&self, params: &[Var]) -> Result<SequentialVars> {
        expect_vars(params, self.param_count(), "sequential")?;
        let mut rest = params;
        let mut vars = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let lv = match layer {
                Layer::Dense(l) => {
                    let (mine, tail) = rest.split_at(2);
                    rest = tail;
                    LayerVars::Dense(l.vars_from(mine)?)
                }
                Layer::Conv(l) => {
                    let (mine, tail) = rest.split_at(2);
                    rest = tail;
                    LayerVars::Conv(l.vars_from(mine)?)
                }
                Layer::ConvTranspose(l) => {
                    let (mine, tail) = rest.split_at(2);
                    rest = tail;
                    LayerVars::Conv(l.vars_from(mine)?)
                }
                Layer::BatchNorm(l) => {
                    let (mine, tail) = rest.split_at(2);
                    rest = tail;
                    LayerVars::BatchNorm(l.vars_from(mine)?)
                }
                _ => LayerVars::None,
            };
            vars.push(lv);
        }
        Ok(SequentialVars(vars))
    }
}
