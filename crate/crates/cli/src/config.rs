//! Run configuration: preset defaults, then the config file, then flags.

use std::path::{Path, PathBuf};

use granlab::data::{gen_gaussian_ring, gen_shapes, load_idx, Dataset, Scaling, Split};
use granlab::gran::{GranConfig, CONFIG_KEYS};
use granlab::kv::{format_list, parse_list, KvMap};
use granlab::train::{TrainConfig, TRAIN_KEYS};
use granlab::{Error, Result};

/// Keys that describe data, sampling and battles rather than a model or optimizer.
pub const RUN_KEYS: &[&str] = &[
    "dataset",
    "data_seed",
    "data_count",
    "test_count",
    "ring_modes",
    "ring_radius",
    "ring_sigma",
    "sample_count",
    "n",
    "delta",
];

pub fn all_keys() -> Vec<&'static str> {
    RUN_KEYS.iter().chain(CONFIG_KEYS).chain(TRAIN_KEYS).copied().collect()
}

#[derive(Clone, Debug, PartialEq)]
pub enum DataKind {
    Ring,
    Shapes,
    Mnist(PathBuf),
}

impl DataKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "ring" => Ok(DataKind::Ring),
            "shapes" => Ok(DataKind::Shapes),
            other => match other.strip_prefix("mnist:") {
                Some(p) if !p.is_empty() => Ok(DataKind::Mnist(PathBuf::from(p))),
                _ => Err(Error::Config(format!(
                    "dataset `{other}`: expected ring, shapes or mnist:PATH"
                ))),
            },
        }
    }

    pub fn name(&self) -> String {
        match self {
            DataKind::Ring => "ring".into(),
            DataKind::Shapes => "shapes".into(),
            DataKind::Mnist(p) => format!("mnist:{}", p.display()),
        }
    }

    fn preset(&self, steps: usize) -> GranConfig {
        match self {
            DataKind::Ring => GranConfig::ring(steps),
            DataKind::Shapes => GranConfig::shapes(steps),
            DataKind::Mnist(_) => GranConfig::mnist(steps),
        }
    }

    fn train_defaults(&self) -> TrainConfig {
        match self {
            // The ring converges with matched learning rates.
            DataKind::Ring => TrainConfig {
                lr_g: 2e-4,
                iterations: 6000,
                ..Default::default()
            },
            _ => TrainConfig::default(),
        }
    }
}

/// Where the training and held-out examples come from.
#[derive(Clone, Debug, PartialEq)]
pub struct DataSpec {
    pub kind: DataKind,
    /// Seed of the synthetic generators; defaults to the run seed.
    pub seed: u64,
    /// Total examples before the split; 0 means the whole file.
    pub count: usize,
    pub test_count: usize,
    pub ring_modes: usize,
    pub ring_radius: f64,
    pub ring_sigma: f64,
}

impl DataSpec {
    fn from_kv(m: &KvMap, kind: DataKind, run_seed: u64) -> Result<Self> {
        let (count, test_count) = match kind {
            DataKind::Ring => (10_000, 1000),
            DataKind::Shapes => (6000, 1000),
            DataKind::Mnist(_) => (0, 10_000),
        };
        Ok(DataSpec {
            seed: m.parse_value("data_seed")?.unwrap_or(run_seed),
            count: m.parse_value("data_count")?.unwrap_or(count),
            test_count: m.parse_value("test_count")?.unwrap_or(test_count),
            ring_modes: m.parse_value("ring_modes")?.unwrap_or(8),
            ring_radius: m.parse_value("ring_radius")?.unwrap_or(2.0),
            ring_sigma: m.parse_value("ring_sigma")?.unwrap_or(0.1),
            kind,
        })
    }

    pub fn to_kv(&self) -> KvMap {
        let mut m = KvMap::new();
        m.set("dataset", self.kind.name())
            .set("data_seed", self.seed)
            .set("data_count", self.count)
            .set("test_count", self.test_count);
        if self.kind == DataKind::Ring {
            m.set("ring_modes", self.ring_modes)
                .set("ring_radius", self.ring_radius)
                .set("ring_sigma", self.ring_sigma);
        }
        m
    }

    /// Deterministic `(train, test)` split: the last `test_count` examples are held out.
    pub fn load(&self) -> Result<(Dataset<f32>, Dataset<f32>)> {
        let seed = self.seed;
        let data = match &self.kind {
            DataKind::Ring => gen_gaussian_ring(self.ring_modes, self.ring_radius, self.ring_sigma, self.count, seed)?,
            DataKind::Shapes => gen_shapes(8, self.count, seed)?,
            DataKind::Mnist(path) => {
                let d = load_idx(path)?;
                if self.count == 0 || self.count >= d.len() {
                    d
                } else {
                    let drop = d.len() - self.count;
                    d.split_off(drop, Split::Validation)?.0
                }
            }
        };
        data.split_off(self.test_count, Split::Test)
    }
}

/// Everything a command needs, plus the flat map echoed to disk.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub data: DataSpec,
    pub model: GranConfig,
    pub train: TrainConfig,
    pub sample_count: usize,
    pub n: Option<usize>,
    pub delta: f64,
}

impl RunConfig {
    /// Resolves `layers` in order, later layers overriding earlier ones.
    /// `base` supplies defaults below the presets (e.g. a checkpoint's config).
    pub fn resolve(base: &KvMap, layers: &[&KvMap]) -> Result<Self> {
        let mut m = base.clone();
        for l in layers {
            m.merge(l);
        }
        let kind = DataKind::parse(m.get("dataset").unwrap_or("shapes"))?;
        let steps = m.parse_value("steps")?.unwrap_or(3);
        let model = GranConfig::from_kv_with(&m, &kind.preset(steps))?;
        let train = TrainConfig::from_kv_with(&m, &kind.train_defaults())?;
        let data = DataSpec::from_kv(&m, kind, train.seed)?;
        let dense = model.canvas.len() == 1;
        Ok(RunConfig {
            sample_count: m.parse_value("sample_count")?.unwrap_or(if dense { 1000 } else { 64 }),
            n: m.parse_value("n")?,
            delta: m.parse_value("delta")?.unwrap_or(granlab::gam::DEFAULT_DELTA),
            data,
            model,
            train,
        })
    }

    pub fn to_kv(&self) -> KvMap {
        let mut m = self.data.to_kv();
        m.set("sample_count", self.sample_count);
        if let Some(n) = self.n {
            m.set("n", n);
        }
        m.set("delta", self.delta);
        m.merge(&self.model.to_kv());
        m.merge(&self.train.to_kv());
        m
    }
}

/// Reads a config file, rejecting keys no command understands.
pub fn read_config(path: &Path) -> Result<KvMap> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let m = KvMap::parse(&text)?;
    m.check_keys(&all_keys())?;
    Ok(m)
}

pub fn scaling_to_kv(s: &Scaling, m: &mut KvMap) {
    m.set("scale_offset", format_list(&s.offset))
        .set("scale_factor", format_list(&s.scale));
}

pub fn scaling_from_kv(m: &KvMap) -> Result<Option<Scaling>> {
    match (m.get("scale_offset"), m.get("scale_factor")) {
        (Some(o), Some(s)) => Ok(Some(Scaling {
            offset: parse_list("scale_offset", o)?,
            scale: parse_list("scale_factor", s)?,
        })),
        _ => Ok(None),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_and_presets_follow_dataset() {
        let mut file = KvMap::new();
        file.set("dataset", "ring").set("steps", 2).set("lr_d", 1e-3);
        let mut flags = KvMap::new();
        flags.set("lr_d", 5e-4);
        let r = RunConfig::resolve(&KvMap::new(), &[&file, &flags]).unwrap();
        assert_eq!(r.model.steps, 2);
        assert_eq!(r.model.canvas, vec![2]);
        assert_eq!(r.train.lr_d, 5e-4);
        assert_eq!(r.sample_count, 1000);
        // The echoed map resolves to the same run.
        let again = RunConfig::resolve(&KvMap::new(), &[&r.to_kv()]).unwrap();
        assert_eq!(again.to_kv(), r.to_kv());
    }

    #[test]
    fn dataset_names() {
        assert_eq!(DataKind::parse("mnist:/x/y").unwrap(), DataKind::Mnist("/x/y".into()));
        for bad in ["mnist:", "cifar"] {
            assert!(DataKind::parse(bad).is_err());
        }
    }
}
