//! Battles between two trained generator/discriminator pairs.

use std::fmt;

use crate::gran::{Discriminator, Generator};
use crate::kv::KvMap;
use crate::{Error, Result, Scalar, Tensor};

/// Default tolerance on `|r_test - 1|`.
pub const DEFAULT_DELTA: f64 = 0.3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Truth {
    Real,
    Fake,
}

/// Fraction of `scores` misclassified at threshold 0.5, where a score `>= 0.5` predicts real.
pub fn error_rate_from_scores<T: Scalar>(scores: &[T], truth: Truth) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::contract("error rate of an empty sample set"));
    }
    let half = T::lit(0.5);
    let wrong = scores
        .iter()
        .filter(|&&p| match truth {
            Truth::Real => p < half,
            Truth::Fake => p >= half,
        })
        .count();
    Ok(wrong as f64 / scores.len() as f64)
}

pub fn error_rate<T: Scalar>(disc: &Discriminator<T>, samples: &Tensor<T>, truth: Truth) -> Result<f64> {
    error_rate_from_scores(&disc.discriminate(samples)?, truth)
}

/// Rate at which `disc` fails to flag samples from another model as fake.
pub fn cross_model_error<T: Scalar>(disc: &Discriminator<T>, samples: &Tensor<T>) -> Result<f64> {
    error_rate(disc, samples, Truth::Fake)
}

/// A trained generator and its discriminator.
#[derive(Clone, Debug)]
pub struct ModelPair<T> {
    pub label: String,
    pub gen: Generator<T>,
    pub disc: Discriminator<T>,
}

impl<T: Scalar> ModelPair<T> {
    pub fn new(label: impl Into<String>, gen: Generator<T>, disc: Discriminator<T>) -> Result<Self> {
        let label = label.into();
        if gen.config.canvas != disc.config.canvas {
            return Err(Error::contract(format!(
                "model {label}: generator canvas {:?} does not match discriminator input {:?}",
                gen.config.canvas, disc.config.canvas
            )));
        }
        Ok(ModelPair { label, gen, disc })
    }
}

/// The six error-rate cells of a battle between `M1 = (G1, D1)` and `M2 = (G2, D2)`.
#[derive(Clone, Debug, PartialEq)]
pub struct BattleReport {
    pub label1: String,
    pub label2: String,
    pub d1_train: f64,
    pub d1_test: f64,
    /// `ε(D1(G2(z)))`.
    pub d1_samples: f64,
    pub d2_train: f64,
    pub d2_test: f64,
    /// `ε(D2(G1(z)))`.
    pub d2_samples: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub n_samples: usize,
    pub seed: u64,
}

impl BattleReport {
    /// `(r_test, r_sample)`.
    pub fn ratios(&self) -> Result<(f64, f64)> {
        if self.d2_test == 0.0 {
            return Err(Error::UndefinedRatio("error rate of D2 on test data"));
        }
        if self.d2_samples == 0.0 {
            return Err(Error::UndefinedRatio("error rate of D2 on samples of G1"));
        }
        Ok((self.d1_test / self.d2_test, self.d1_samples / self.d2_samples))
    }

    /// The same battle with the two models' roles exchanged.
    pub fn swap(&self) -> Self {
        BattleReport {
            label1: self.label2.clone(),
            label2: self.label1.clone(),
            d1_train: self.d2_train,
            d1_test: self.d2_test,
            d1_samples: self.d2_samples,
            d2_train: self.d1_train,
            d2_test: self.d1_test,
            d2_samples: self.d1_samples,
            ..self.clone()
        }
    }

    pub fn to_kv(&self) -> KvMap {
        let mut m = KvMap::new();
        m.set("model1", &self.label1)
            .set("model2", &self.label2)
            .set("err_d1_train", self.d1_train)
            .set("err_d1_test", self.d1_test)
            .set("err_d1_g2", self.d1_samples)
            .set("err_d2_train", self.d2_train)
            .set("err_d2_test", self.d2_test)
            .set("err_d2_g1", self.d2_samples)
            .set("n_train", self.n_train)
            .set("n_test", self.n_test)
            .set("n_samples", self.n_samples)
            .set("seed", self.seed);
        m
    }

    pub fn from_kv(m: &KvMap) -> Result<Self> {
        Ok(BattleReport {
            label1: m.require("model1")?.to_string(),
            label2: m.require("model2")?.to_string(),
            d1_train: m.require_value("err_d1_train")?,
            d1_test: m.require_value("err_d1_test")?,
            d1_samples: m.require_value("err_d1_g2")?,
            d2_train: m.require_value("err_d2_train")?,
            d2_test: m.require_value("err_d2_test")?,
            d2_samples: m.require_value("err_d2_g1")?,
            n_train: m.require_value("n_train")?,
            n_test: m.require_value("n_test")?,
            n_samples: m.require_value("n_samples")?,
            seed: m.require_value("seed")?,
        })
    }
}

/// Both generators draw `n` samples from the same noise seed.
pub fn battle<T: Scalar>(
    m1: &ModelPair<T>,
    m2: &ModelPair<T>,
    x_train: &Tensor<T>,
    x_test: &Tensor<T>,
    n: usize,
    seed: u64,
) -> Result<BattleReport> {
    if m1.gen.config.canvas != m2.gen.config.canvas {
        return Err(Error::contract(format!(
            "cannot battle {} (canvas {:?}) against {} (canvas {:?})",
            m1.label, m1.gen.config.canvas, m2.label, m2.gen.config.canvas
        )));
    }
    if n == 0 {
        return Err(Error::contract("battle needs at least one sample per generator"));
    }
    let g1 = m1.gen.sample(n, seed)?;
    let g2 = m2.gen.sample(n, seed)?;
    Ok(BattleReport {
        label1: m1.label.clone(),
        label2: m2.label.clone(),
        d1_train: error_rate(&m1.disc, x_train, Truth::Real)?,
        d1_test: error_rate(&m1.disc, x_test, Truth::Real)?,
        d1_samples: error_rate(&m1.disc, &g2, Truth::Fake)?,
        d2_train: error_rate(&m2.disc, x_train, Truth::Real)?,
        d2_test: error_rate(&m2.disc, x_test, Truth::Real)?,
        d2_samples: error_rate(&m2.disc, &g1, Truth::Fake)?,
        n_train: x_train.rows(),
        n_test: x_test.rows(),
        n_samples: n,
        seed,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Winner {
    M1,
    M2,
    Tie,
}

impl Winner {
    pub fn name(self) -> &'static str {
        match self {
            Winner::M1 => "M1",
            Winner::M2 => "M2",
            Winner::Tie => "Tie",
        }
    }

    pub fn swapped(self) -> Self {
        match self {
            Winner::M1 => Winner::M2,
            Winner::M2 => Winner::M1,
            Winner::Tie => Winner::Tie,
        }
    }
}

impl fmt::Display for Winner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// `M1` if `r_sample < 1`, `M2` if `r_sample > 1`, provided the test ratio is
/// within `delta` of 1 seen from either side (`r_test` and `1/r_test`); `Tie` otherwise.
///
/// Checking both orientations keeps the verdict antisymmetric under a label
/// swap: a one-sided gate would accept 0.75 but reject its inverse 1.33.
pub fn verdict(r_test: f64, r_sample: f64, delta: f64) -> Winner {
    if (r_test - 1.0).abs() > delta || (1.0 / r_test - 1.0).abs() > delta {
        Winner::Tie
    } else if r_sample < 1.0 {
        Winner::M1
    } else if r_sample > 1.0 {
        Winner::M2
    } else {
        Winner::Tie
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GamVerdict {
    pub winner: Winner,
    /// `None` when the ratio is undefined.
    pub r_test: Option<f64>,
    pub r_sample: Option<f64>,
    pub delta: f64,
    /// Why the battle could not be judged, if it could not.
    pub diagnostic: Option<String>,
}

/// Verdict for a report. An undefined ratio yields `Tie` with a diagnostic.
pub fn judge(report: &BattleReport, delta: f64) -> GamVerdict {
    match report.ratios() {
        Ok((r_test, r_sample)) => GamVerdict {
            winner: verdict(r_test, r_sample, delta),
            r_test: Some(r_test),
            r_sample: Some(r_sample),
            delta,
            diagnostic: None,
        },
        Err(e) => {
            let ratio = |num: f64, den: f64| (den != 0.0).then(|| num / den);
            GamVerdict {
                winner: Winner::Tie,
                r_test: ratio(report.d1_test, report.d2_test),
                r_sample: ratio(report.d1_samples, report.d2_samples),
                delta,
                diagnostic: Some(e.to_string()),
            }
        }
    }
}

/// Flat `key=value` text holding the report cells and the verdict.
pub fn report_text(report: &BattleReport, v: &GamVerdict) -> String {
    let mut m = report.to_kv();
    let opt = |x: Option<f64>| x.map_or_else(|| "undefined".to_string(), |r| r.to_string());
    m.set("r_test", opt(v.r_test))
        .set("r_sample", opt(v.r_sample))
        .set("delta", v.delta)
        .set("winner", v.winner)
        .set(
            "winner_label",
            match v.winner {
                Winner::M1 => report.label1.as_str(),
                Winner::M2 => report.label2.as_str(),
                Winner::Tie => "tie",
            },
        );
    if let Some(d) = &v.diagnostic {
        m.set("diagnostic", d);
    }
    m.to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_rate_counts() {
        let s = [0.9f64, 0.1, 0.5, 0.49, 0.7, 0.2, 0.51, 0.0, 1.0, 0.3];
        // Predicted real: 0.9, 0.5, 0.7, 0.51, 1.0.
        assert_eq!(error_rate_from_scores(&s, Truth::Real).unwrap(), 0.5);
        assert_eq!(error_rate_from_scores(&s, Truth::Fake).unwrap(), 0.5);
        assert_eq!(error_rate_from_scores(&[0.9f64; 4], Truth::Real).unwrap(), 0.0);
        assert_eq!(error_rate_from_scores(&[0.9f64; 4], Truth::Fake).unwrap(), 1.0);
        assert!(error_rate_from_scores::<f64>(&[], Truth::Real).is_err());
    }

    #[test]
    fn verdict_cases() {
        assert_eq!(verdict(1.0, 2.289, 0.3), Winner::M2);
        assert_eq!(verdict(0.79, 1.75, 0.3), Winner::M2);
        assert_eq!(verdict(1.0, 0.5, 0.3), Winner::M1);
        assert_eq!(verdict(1.0, 1.0, 0.3), Winner::Tie);
        assert_eq!(verdict(1.5, 2.0, 0.3), Winner::Tie);
        assert_eq!(verdict(1.01, 2.0, 0.0), Winner::Tie);
        // 0.75 is within 0.3 of 1 but its inverse is not.
        assert_eq!(verdict(0.75, 2.0, 0.3), Winner::Tie);
        assert_eq!(verdict(1.0 / 0.75, 0.5, 0.3), Winner::Tie);
    }

    fn report(d1_test: f64, d2_test: f64, d1_s: f64, d2_s: f64) -> BattleReport {
        BattleReport {
            label1: "a".into(),
            label2: "b".into(),
            d1_train: 0.1,
            d1_test,
            d1_samples: d1_s,
            d2_train: 0.2,
            d2_test,
            d2_samples: d2_s,
            n_train: 10,
            n_test: 10,
            n_samples: 10,
            seed: 1,
        }
    }

    #[test]
    fn ratios_and_undefined_denominators() {
        let (rt, _) = report(0.10, 0.08, 0.5, 0.5).ratios().unwrap();
        assert!((rt - 1.25).abs() < 1e-15);
        assert_eq!(report(0.3, 0.3, 0.2, 0.2).ratios().unwrap(), (1.0, 1.0));
        let r = report(0.0, 0.0, 1.0, 1.0);
        assert!(matches!(r.ratios(), Err(Error::UndefinedRatio(_))));
        let v = judge(&r, 0.3);
        assert_eq!(v.winner, Winner::Tie);
        assert!(v.diagnostic.is_some());
        assert!(report_text(&r, &v).contains("r_test=undefined"));
    }

    #[test]
    fn report_round_trips_through_text() {
        let r = report(0.1, 0.2, 0.3, 0.4);
        assert_eq!(BattleReport::from_kv(&r.to_kv()).unwrap(), r);
        assert_eq!(r.swap().swap(), r);
    }
}
