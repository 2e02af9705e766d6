//! Binary model container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "GRN1"  u32 version  u32 len  config text (UTF-8 key=value lines)
//! u32 tensor count
//! per tensor: u32 len  name (UTF-8)  u32 rank  u64 dims[rank]  f32 data[product(dims)]
//! ```

use std::path::Path;

use crate::gran::{Discriminator, GranConfig, Generator};
use crate::kv::KvMap;
use crate::nn::Module;
use crate::train::AdamState;
use crate::{Error, Result, Scalar, Tensor};

pub const MAGIC: &[u8; 4] = b"GRN1";
pub const VERSION: u32 = 1;

/// Config text plus named 32-bit tensors, in order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub config: KvMap,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Parse {
                offset: self.pos,
                message: format!("truncated {what}: need {n} bytes, {} left", self.bytes.len() - self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn text(&mut self, what: &str) -> Result<String> {
        let at = self.pos;
        let n = self.u32(what)? as usize;
        let b = self.take(n, what)?;
        String::from_utf8(b.to_vec()).map_err(|_| Error::Parse {
            offset: at,
            message: format!("{what} is not UTF-8"),
        })
    }
}

fn put_text(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor<f32>> {
        self.get(name)
            .ok_or_else(|| Error::Format(format!("checkpoint has no tensor `{name}`")))
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_text(&mut out, &self.config.to_string());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            put_text(&mut out, name);
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for x in t.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(Error::Format("not a checkpoint: bad magic".into()));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::Format(format!("checkpoint version {version}, expected {VERSION}")));
        }
        let config = KvMap::parse(&r.text("config")?)?;
        let count = r.u32("tensor count")?;
        let mut tensors = Vec::new();
        for _ in 0..count {
            let name = r.text("tensor name")?;
            let at = r.pos;
            let rank = r.u32("rank")? as usize;
            if rank == 0 || rank > 8 {
                return Err(Error::Parse {
                    offset: at,
                    message: format!("tensor `{name}` has rank {rank}"),
                });
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                let at = r.pos;
                let d = r.u64("dimension")?;
                if d == 0 || d > u32::MAX as u64 {
                    return Err(Error::Parse {
                        offset: at,
                        message: format!("tensor `{name}` has dimension {d}"),
                    });
                }
                shape.push(d as usize);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .filter(|&n| n <= (bytes.len() - r.pos) / 4)
                .ok_or_else(|| Error::Parse {
                    offset: r.pos,
                    message: format!("tensor `{name}` of shape {shape:?} exceeds the file"),
                })?;
            let raw = r.take(4 * n, "tensor data")?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            tensors.push((name, Tensor::new(&shape, data)?));
        }
        if r.pos != bytes.len() {
            return Err(Error::Parse {
                offset: r.pos,
                message: format!("{} trailing bytes", bytes.len() - r.pos),
            });
        }
        Ok(Checkpoint { config, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

/// A generator/discriminator pair with optional optimizer state.
#[derive(Clone, Debug)]
pub struct SavedModels<T> {
    pub gen: Generator<T>,
    pub disc: Discriminator<T>,
    pub adam: Option<(AdamState<T>, AdamState<T>)>,
    /// Every config key stored in the file, including non-architecture ones.
    pub config: KvMap,
}

fn push_module<T: Scalar, M: Module<T>>(tensors: &mut Vec<(String, Tensor<f32>)>, prefix: &str, m: &M) {
    for (name, t) in m.named_params().into_iter().chain(m.named_buffers()) {
        tensors.push((format!("{prefix}.{name}"), t.cast()));
    }
}

fn restore_module<T: Scalar, M: Module<T>>(ck: &Checkpoint, prefix: &str, m: &mut M) -> Result<()> {
    let names: Vec<String> = m
        .named_params()
        .into_iter()
        .chain(m.named_buffers())
        .map(|(n, _)| format!("{prefix}.{n}"))
        .collect();
    let mut values = Vec::with_capacity(names.len());
    for n in &names {
        values.push(ck.require(n)?.cast::<T>());
    }
    let np = m.param_count();
    m.set_params(&values[..np])
        .map_err(|e| Error::Format(format!("checkpoint does not fit the model: {e}")))?;
    for (slot, v) in m.buffers_mut().into_iter().zip(&values[np..]) {
        if slot.shape() != v.shape() {
            return Err(Error::Format(format!(
                "buffer shape {:?} does not fit {:?}",
                v.shape(),
                slot.shape()
            )));
        }
        *slot = v.clone();
    }
    Ok(())
}

fn push_adam<T: Scalar>(ck: &mut Checkpoint, tag: &str, s: &AdamState<T>) {
    ck.config.set(&format!("adam_{tag}_t"), s.t);
    for (i, (m, v)) in s.m.iter().zip(&s.v).enumerate() {
        ck.tensors.push((format!("adam.{tag}.m.{i}"), m.cast()));
        ck.tensors.push((format!("adam.{tag}.v.{i}"), v.cast()));
    }
}

fn restore_adam<T: Scalar, M: Module<T>>(ck: &Checkpoint, tag: &str, module: &M) -> Result<Option<AdamState<T>>> {
    let Some(t) = ck.config.parse_value::<u64>(&format!("adam_{tag}_t"))? else {
        return Ok(None);
    };
    let mut s = AdamState::for_module(module);
    s.t = t;
    for i in 0..s.m.len() {
        s.m[i] = ck.require(&format!("adam.{tag}.m.{i}"))?.cast();
        s.v[i] = ck.require(&format!("adam.{tag}.v.{i}"))?.cast();
    }
    Ok(Some(s))
}

/// Writes the architecture, both networks (parameters and running statistics),
/// the optimizer state if given, and any `extra` config entries.
pub fn save_models<T: Scalar>(
    path: &Path,
    gen: &Generator<T>,
    disc: &Discriminator<T>,
    adam: Option<(&AdamState<T>, &AdamState<T>)>,
    extra: &KvMap,
) -> Result<()> {
    let mut ck = Checkpoint {
        config: gen.config.to_kv(),
        tensors: Vec::new(),
    };
    ck.config.merge(extra);
    push_module(&mut ck.tensors, "G", gen);
    push_module(&mut ck.tensors, "D", disc);
    if let Some((ag, ad)) = adam {
        push_adam(&mut ck, "g", ag);
        push_adam(&mut ck, "d", ad);
    }
    ck.save(path)
}

pub fn load_models<T: Scalar>(path: &Path) -> Result<SavedModels<T>> {
    models_from_checkpoint(&Checkpoint::load(path)?)
}

pub fn models_from_checkpoint<T: Scalar>(ck: &Checkpoint) -> Result<SavedModels<T>> {
    let config = GranConfig::from_kv(&ck.config)?;
    let mut gen = Generator::init(config.clone(), 0)?;
    let mut disc = Discriminator::init(config, 0)?;
    restore_module(ck, "G", &mut gen)?;
    restore_module(ck, "D", &mut disc)?;
    let adam = match (restore_adam(ck, "g", &gen)?, restore_adam(ck, "d", &disc)?) {
        (Some(g), Some(d)) => Some((g, d)),
        _ => None,
    };
    Ok(SavedModels {
        gen,
        disc,
        adam,
        config: ck.config.clone(),
    })
}
