use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::Dataset;
use crate::{Error, Result, Scalar, Tensor};

/// Mixture means at angles `2πk / modes` on a circle of the given radius.
pub fn ring_means(modes: usize, radius: f64) -> Vec<[f64; 2]> {
    (0..modes)
        .map(|k| {
            let a = 2.0 * PI * k as f64 / modes as f64;
            [radius * a.cos(), radius * a.sin()]
        })
        .collect()
}

/// Equal-weight mixture of isotropic Gaussians on a ring, min-max scaled into
/// `[0, 1]²`. Labels hold each point's mode.
pub fn gen_gaussian_ring<T: Scalar>(
    modes: usize,
    radius: f64,
    sigma: f64,
    count: usize,
    seed: u64,
) -> Result<Dataset<T>> {
    if modes == 0 || count == 0 || !(sigma >= 0.0) {
        return Err(Error::contract(format!(
            "gaussian ring needs modes >= 1, count >= 1, sigma >= 0 (got {modes}, {count}, {sigma})"
        )));
    }
    let means = ring_means(modes, radius);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(2 * count);
    let mut labels = Vec::with_capacity(count);
    for _ in 0..count {
        let k = rng.random_range(0..modes);
        let (dx, dy): (f64, f64) = (StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng));
        data.push(T::lit(means[k][0] + sigma * dx));
        data.push(T::lit(means[k][1] + sigma * dy));
        labels.push(k as u32);
    }
    let mut d = Dataset::new(Tensor::new(&[count, 2], data)?).with_labels(labels)?;
    d.normalize();
    Ok(d)
}

/// Number of modes near which at least `min_fraction` of the raw-space
/// `points` fall, "near" meaning within `3 sigma` of the mode's mean.
pub fn mode_coverage(points: &Tensor<f64>, means: &[[f64; 2]], sigma: f64, min_fraction: f64) -> usize {
    let n = points.rows();
    let r2 = (3.0 * sigma).powi(2);
    means
        .iter()
        .filter(|m| {
            let hits = points
                .data()
                .chunks_exact(2)
                .filter(|p| (p[0] - m[0]).powi(2) + (p[1] - m[1]).powi(2) <= r2)
                .count();
            hits as f64 >= min_fraction * n as f64
        })
        .count()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shape {
    Rectangle = 0,
    Cross = 1,
}

/// Binary `size × size` images, each a filled axis-aligned rectangle or a
/// plus-shaped cross at a random position. Labels hold the [`Shape`].
pub fn gen_shapes<T: Scalar>(size: usize, count: usize, seed: u64) -> Result<Dataset<T>> {
    if size < 4 || count == 0 {
        return Err(Error::contract(format!("shapes need size >= 4 and count >= 1, got {size} and {count}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = vec![T::zero(); count * size * size];
    let mut labels = Vec::with_capacity(count);
    for img in data.chunks_exact_mut(size * size) {
        let mut lit = |r: usize, c: usize| img[r * size + c] = T::one();
        if rng.random_bool(0.5) {
            let h = rng.random_range(2..=size / 2 + 1);
            let w = rng.random_range(2..=size / 2 + 1);
            let r0 = rng.random_range(0..=size - h);
            let c0 = rng.random_range(0..=size - w);
            for r in r0..r0 + h {
                for c in c0..c0 + w {
                    lit(r, c);
                }
            }
            labels.push(Shape::Rectangle as u32);
        } else {
            let arm = rng.random_range(1..=(size - 1) / 2);
            let r0 = rng.random_range(arm..size - arm);
            let c0 = rng.random_range(arm..size - arm);
            for d in 0..=2 * arm {
                lit(r0 + d - arm, c0);
                lit(r0, c0 + d - arm);
            }
            labels.push(Shape::Cross as u32);
        }
    }
    let t = Tensor::new(&[count, 1, size, size], data)?;
    Dataset::normalized(
        t,
        super::Scaling {
            offset: vec![0.0],
            scale: vec![1.0],
        },
    )
    .with_labels(labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_mode_without_noise_collapses_to_its_mean() {
        let d = gen_gaussian_ring::<f64>(1, 2.0, 0.0, 50, 1).unwrap();
        let raw = d.unscale(&d.examples).unwrap();
        for p in raw.data().chunks_exact(2) {
            assert!((p[0] - 2.0).abs() < 1e-12 && p[1].abs() < 1e-12);
        }
    }

    #[test]
    fn ring_means_are_evenly_spaced() {
        let m = ring_means(8, 1.0);
        for (k, p) in m.iter().enumerate() {
            let a = p[1].atan2(p[0]).rem_euclid(2.0 * PI);
            assert!((a - k as f64 * PI / 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn ring_is_unit_scaled_and_balanced() {
        let n = 10_000;
        let d = gen_gaussian_ring::<f64>(8, 2.0, 0.05, n, 7).unwrap();
        assert!(d.examples.data().iter().all(|&x| (0.0..=1.0).contains(&x)));
        let labels = d.labels.as_ref().unwrap();
        let (p, nf) = (1.0 / 8.0, n as f64);
        let sd = (nf * p * (1.0 - p)).sqrt();
        for k in 0..8 {
            let c = labels.iter().filter(|&&l| l == k).count() as f64;
            assert!((c - nf * p).abs() <= 4.0 * sd, "mode {k}: {c}");
        }
        let raw = d.unscale(&d.examples).unwrap();
        assert_eq!(mode_coverage(&raw, &ring_means(8, 2.0), 0.05, 0.02), 8);
    }

    #[test]
    fn shapes_are_binary_and_lit() {
        let a = gen_shapes::<f32>(8, 200, 3).unwrap();
        assert_eq!(a, gen_shapes::<f32>(8, 200, 3).unwrap());
        for img in a.examples.data().chunks_exact(64) {
            assert!(img.iter().all(|&x| x == 0.0 || x == 1.0));
            assert!(img.iter().any(|&x| x == 1.0));
        }
        let crosses = a.labels.unwrap().iter().filter(|&&l| l == Shape::Cross as u32).count() as f64;
        assert!((crosses - 100.0).abs() <= 4.0 * 50f64.sqrt());
    }
}
