use std::path::Path;

use super::{Dataset, Scaling};
use crate::{Error, Result, Scalar, Tensor};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

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
}

fn header<'a>(bytes: &'a [u8], magic: u32, rank: usize) -> Result<(Reader<'a>, Vec<usize>)> {
    let mut r = Reader { bytes, pos: 0 };
    let m = r.u32("magic")?;
    if m != magic {
        return Err(Error::Parse {
            offset: 0,
            message: format!("bad magic {m:#010x}, expected {magic:#010x}"),
        });
    }
    let mut dims = Vec::with_capacity(rank);
    for i in 0..rank {
        let at = r.pos;
        let d = r.u32("dimension")? as usize;
        if d == 0 {
            return Err(Error::Parse {
                offset: at,
                message: format!("dimension {i} is zero"),
            });
        }
        dims.push(d);
    }
    Ok((r, dims))
}

/// Parses an IDX image file into `[n, 1, rows, cols]` with pixels scaled to `[0, 1]`.
pub fn parse_idx_images<T: Scalar>(bytes: &[u8]) -> Result<Dataset<T>> {
    let (mut r, dims) = header(bytes, IDX_IMAGES_MAGIC, 3)?;
    let n: usize = dims.iter().product();
    let px = r.take(n, "pixel data")?;
    if r.pos != bytes.len() {
        return Err(Error::Parse {
            offset: r.pos,
            message: format!("{} trailing bytes", bytes.len() - r.pos),
        });
    }
    let data = px.iter().map(|&b| T::lit(b as f64 / 255.0)).collect();
    let t = Tensor::new(&[dims[0], 1, dims[1], dims[2]], data)?;
    Ok(Dataset::normalized(
        t,
        Scaling {
            offset: vec![0.0],
            scale: vec![255.0],
        },
    ))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u32>> {
    let (mut r, dims) = header(bytes, IDX_LABELS_MAGIC, 1)?;
    Ok(r.take(dims[0], "label data")?.iter().map(|&b| b as u32).collect())
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn load_idx<T: Scalar>(path: &Path) -> Result<Dataset<T>> {
    parse_idx_images(&read(path)?)
}

pub fn load_idx_labels(path: &Path) -> Result<Vec<u32>> {
    parse_idx_labels(&read(path)?)
}
