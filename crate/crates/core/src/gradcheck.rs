//! Central finite-difference checks of reverse-mode gradients.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::graph::{Graph, Var};
use crate::{Error, Result, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheck {
    /// `max |analytic - numeric| / max(1, |analytic|, |numeric|)` over all checked coordinates.
    pub max_rel_error: f64,
    /// `(input index, flat coordinate)` of the worst coordinate.
    pub worst: (usize, usize),
    pub coordinates: usize,
}

fn evaluate<T: Scalar, F>(f: &F, inputs: &[Tensor<T>]) -> Result<f64>
where
    F: Fn(&mut Graph<T>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    Ok(g.value(out).item()?.to_f64_lossy())
}

/// Compares the gradient of the scalar function `f` at `inputs` with central
/// differences of step `eps` on every coordinate of every input.
pub fn grad_check<T: Scalar, F>(f: F, inputs: &[Tensor<T>], eps: f64) -> Result<GradCheck>
where
    F: Fn(&mut Graph<T>, &[Var]) -> Result<Var>,
{
    let all: Vec<Vec<usize>> = inputs.iter().map(|t| (0..t.len()).collect()).collect();
    check_coordinates(&f, inputs, eps, &all)
}

/// Like [`grad_check`], but checks at most `per_input` coordinates of each
/// input, chosen deterministically from `seed`.
pub fn grad_check_sampled<T: Scalar, F>(
    f: F,
    inputs: &[Tensor<T>],
    eps: f64,
    per_input: usize,
    seed: u64,
) -> Result<GradCheck>
where
    F: Fn(&mut Graph<T>, &[Var]) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks: Vec<Vec<usize>> = inputs
        .iter()
        .map(|t| {
            if t.len() <= per_input {
                (0..t.len()).collect()
            } else {
                let mut v = index::sample(&mut rng, t.len(), per_input).into_vec();
                v.sort_unstable();
                v
            }
        })
        .collect();
    check_coordinates(&f, inputs, eps, &picks)
}

fn check_coordinates<T: Scalar, F>(
    f: &F,
    inputs: &[Tensor<T>],
    eps: f64,
    coords: &[Vec<usize>],
) -> Result<GradCheck>
where
    F: Fn(&mut Graph<T>, &[Var]) -> Result<Var>,
{
    if !(eps > 0.0) {
        return Err(Error::contract(format!("grad_check eps must be positive, got {eps}")));
    }
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let grads = g.backward(out)?;
    let analytic: Vec<Tensor<T>> = vars.iter().map(|&v| grads.wrt(v)).collect();

    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst: (0, 0),
        coordinates: 0,
    };
    let mut probe: Vec<Tensor<T>> = inputs.to_vec();
    for (k, picks) in coords.iter().enumerate() {
        for &i in picks {
            let orig = probe[k].data()[i];
            probe[k].data_mut()[i] = orig + T::lit(eps);
            let up = evaluate(f, &probe)?;
            probe[k].data_mut()[i] = orig - T::lit(eps);
            let down = evaluate(f, &probe)?;
            probe[k].data_mut()[i] = orig;

            let numeric = (up - down) / (2.0 * eps);
            let exact = analytic[k].data()[i].to_f64_lossy();
            let err = (exact - numeric).abs() / 1f64.max(exact.abs()).max(numeric.abs());
            if err > report.max_rel_error || err.is_nan() {
                report.max_rel_error = err;
                report.worst = (k, i);
            }
            report.coordinates += 1;
        }
    }
    Ok(report)
}
