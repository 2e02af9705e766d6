//! Datasets, batching and image files.

mod batch;
mod idx;
mod pnm;
mod synth;

pub use batch::Batcher;
pub use idx::{load_idx, load_idx_labels, parse_idx_images, parse_idx_labels, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};
pub use pnm::{
    image_grid, parse_pnm_stack, parse_points_csv, read_pnm_stack, read_points_csv, to_bytes, write_grid,
    write_pnm_stack, write_points_csv,
};
pub use synth::{gen_gaussian_ring, gen_shapes, mode_coverage, ring_means, Shape};

use crate::{Error, Result, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Split {
    #[default]
    Train,
    Test,
    Validation,
}

/// Per-feature affine map from raw values into `[0, 1]`: `unit = (raw - offset) / scale`.
/// A single entry applies to every feature.
#[derive(Clone, Debug, PartialEq)]
pub struct Scaling {
    pub offset: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Scaling {
    fn at(&self, feature: usize) -> (f64, f64) {
        let k = if self.offset.len() == 1 { 0 } else { feature };
        (self.offset[k], self.scale[k])
    }

    /// Unit-range values back to raw coordinates, feature index taken along each row.
    pub fn to_raw<T: Scalar>(&self, values: &Tensor<T>) -> Result<Tensor<f64>> {
        let width = values.row_len();
        self.check_width(width)?;
        let data = values
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| {
                let (o, s) = self.at(i % width);
                o + s * x.to_f64_lossy()
            })
            .collect();
        Tensor::new(values.shape(), data)
    }

    /// Raw coordinates to unit range (not clamped).
    pub fn to_unit<T: Scalar>(&self, raw: &Tensor<f64>) -> Result<Tensor<T>> {
        let width = raw.row_len();
        self.check_width(width)?;
        let data = raw
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let (o, s) = self.at(i % width);
                T::lit((x - o) / s)
            })
            .collect();
        Tensor::new(raw.shape(), data)
    }

    fn check_width(&self, width: usize) -> Result<()> {
        if self.offset.len() != self.scale.len() || (self.offset.len() != 1 && self.offset.len() != width) {
            return Err(Error::contract(format!(
                "scaling has {} offsets and {} scales for rows of {width}",
                self.offset.len(),
                self.scale.len()
            )));
        }
        Ok(())
    }
}

/// A set of examples stacked along the leading axis.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T> {
    pub examples: Tensor<T>,
    pub labels: Option<Vec<u32>>,
    pub split: Split,
    scaling: Option<Scaling>,
}

impl<T: Scalar> Dataset<T> {
    /// Raw, not yet normalized examples.
    pub fn new(examples: Tensor<T>) -> Self {
        Dataset {
            examples,
            labels: None,
            split: Split::Train,
            scaling: None,
        }
    }

    /// Examples already in `[0, 1]`, produced from raw values by `scaling`.
    pub fn normalized(examples: Tensor<T>, scaling: Scaling) -> Self {
        Dataset {
            examples,
            labels: None,
            split: Split::Train,
            scaling: Some(scaling),
        }
    }

    pub fn with_labels(mut self, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(Error::contract(format!(
                "{} labels for {} examples",
                labels.len(),
                self.len()
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.examples.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Per-example shape.
    pub fn item_shape(&self) -> &[usize] {
        &self.examples.shape()[1..]
    }

    pub fn is_normalized(&self) -> bool {
        self.scaling.is_some()
    }

    pub fn scaling(&self) -> Option<&Scaling> {
        self.scaling.as_ref()
    }

    /// Min-max scales into `[0, 1]`: per feature for flat examples, over all
    /// values otherwise. Does nothing when already normalized.
    pub fn normalize(&mut self) {
        if self.scaling.is_some() {
            return;
        }
        let width = self.examples.row_len();
        let per_feature = self.examples.rank() == 2;
        let groups = if per_feature { width } else { 1 };
        let mut lo = vec![f64::INFINITY; groups];
        let mut hi = vec![f64::NEG_INFINITY; groups];
        for (i, x) in self.examples.data().iter().enumerate() {
            let k = if per_feature { i % width } else { 0 };
            let x = x.to_f64_lossy();
            lo[k] = lo[k].min(x);
            hi[k] = hi[k].max(x);
        }
        let scale: Vec<f64> = lo.iter().zip(&hi).map(|(l, h)| if h > l { h - l } else { 1.0 }).collect();
        let scaling = Scaling { offset: lo, scale };
        for (i, x) in self.examples.data_mut().iter_mut().enumerate() {
            let (o, s) = scaling.at(if per_feature { i % width } else { 0 });
            *x = T::lit(((x.to_f64_lossy() - o) / s).clamp(0.0, 1.0));
        }
        self.scaling = Some(scaling);
    }

    /// Maps flat unit-range values back into raw coordinates.
    pub fn unscale(&self, values: &Tensor<T>) -> Result<Tensor<f64>> {
        self.scaling
            .as_ref()
            .ok_or_else(|| Error::contract("unscale on a dataset that was never normalized"))?
            .to_raw(values)
    }

    /// Moves the last `count` examples into a second dataset with the given split.
    pub fn split_off(mut self, count: usize, split: Split) -> Result<(Self, Self)> {
        let n = self.len();
        if count == 0 || count >= n {
            return Err(Error::contract(format!("cannot split {count} of {n} examples")));
        }
        let head = self.examples.slice_rows(0, n - count)?;
        let tail = self.examples.slice_rows(n - count, n)?;
        let (lh, lt) = match self.labels.take() {
            Some(mut l) => {
                let t = l.split_off(n - count);
                (Some(l), Some(t))
            }
            None => (None, None),
        };
        let second = Dataset {
            examples: tail,
            labels: lt,
            split,
            scaling: self.scaling.clone(),
        };
        self.examples = head;
        self.labels = lh;
        Ok((self, second))
    }

    pub fn cast<U: Scalar>(&self) -> Dataset<U> {
        Dataset {
            examples: self.examples.cast(),
            labels: self.labels.clone(),
            split: self.split,
            scaling: self.scaling.clone(),
        }
    }
}
