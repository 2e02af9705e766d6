//! Binary PGM (P5) and PPM (P6) images. A stack is several images concatenated in one file.

use std::fmt::Write as _;
use std::path::Path;

use crate::{Error, Result, Scalar, Tensor};

/// Unit-range values to bytes: `round(255 x)`, clamped.
pub fn to_bytes<T: Scalar>(values: &[T]) -> Vec<u8> {
    values
        .iter()
        .map(|x| (x.to_f64_lossy() * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect()
}

fn check_images(shape: &[usize]) -> Result<(usize, usize, usize, usize)> {
    match shape {
        [n, c, h, w] if *c == 1 || *c == 3 => Ok((*n, *c, *h, *w)),
        _ => Err(Error::contract(format!(
            "image export needs [n, 1 or 3, h, w], got {shape:?}"
        ))),
    }
}

fn encode_one(out: &mut Vec<u8>, pixels: &[u8], c: usize, h: usize, w: usize) {
    let magic = if c == 1 { "P5" } else { "P6" };
    out.extend_from_slice(format!("{magic}\n{w} {h}\n255\n").as_bytes());
    if c == 1 {
        out.extend_from_slice(pixels);
    } else {
        // Planar channels to interleaved RGB.
        let plane = h * w;
        for i in 0..plane {
            for ch in 0..3 {
                out.push(pixels[ch * plane + i]);
            }
        }
    }
}

/// Writes every image of a `[n, c, h, w]` tensor as one concatenated PGM/PPM stack.
pub fn write_pnm_stack<T: Scalar>(path: &Path, images: &Tensor<T>) -> Result<()> {
    let (n, c, h, w) = check_images(images.shape())?;
    let bytes = to_bytes(images.data());
    let mut out = Vec::new();
    for i in 0..n {
        encode_one(&mut out, &bytes[i * c * h * w..(i + 1) * c * h * w], c, h, w);
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Tiles `[n, c, h, w]` images row-major into a `[1, c, rows·h, cols·w]` grid; unused tiles stay black.
pub fn image_grid<T: Scalar>(images: &Tensor<T>, cols: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = check_images(images.shape())?;
    if cols == 0 {
        return Err(Error::contract("grid needs at least one column"));
    }
    let rows = n.div_ceil(cols);
    let (gh, gw) = (rows * h, cols * w);
    let mut grid = Tensor::zeros(&[1, c, gh, gw]);
    let src = images.data();
    let dst = grid.data_mut();
    for i in 0..n {
        let (tr, tc) = (i / cols, i % cols);
        for ch in 0..c {
            for y in 0..h {
                let s = ((i * c + ch) * h + y) * w;
                let d = (ch * gh + tr * h + y) * gw + tc * w;
                dst[d..d + w].copy_from_slice(&src[s..s + w]);
            }
        }
    }
    Ok(grid)
}

/// Writes images as a single near-square grid image.
pub fn write_grid<T: Scalar>(path: &Path, images: &Tensor<T>) -> Result<()> {
    let cols = (images.rows() as f64).sqrt().ceil() as usize;
    write_pnm_stack(path, &image_grid(images, cols.max(1))?)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Parse {
            offset: self.pos,
            message: message.into(),
        }
    }

    fn skip_space(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b if b.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            self.pos = start;
            return Err(self.err(format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| self.err(format!("bad {what}")))
    }
}

/// Parses a concatenated PGM/PPM stack into `[n, c, h, w]` with values in `[0, 1]`.
/// Every image must share the first image's type and size.
pub fn parse_pnm_stack<T: Scalar>(bytes: &[u8]) -> Result<Tensor<T>> {
    let mut cur = Cursor { bytes, pos: 0 };
    let mut data = Vec::new();
    let mut dims: Option<(usize, usize, usize)> = None;
    let mut n = 0;
    loop {
        cur.skip_space();
        if cur.pos == bytes.len() {
            break;
        }
        let c = match bytes.get(cur.pos..cur.pos + 2) {
            Some(b"P5") => 1,
            Some(b"P6") => 3,
            _ => return Err(cur.err("expected P5 or P6 magic")),
        };
        cur.pos += 2;
        let w = cur.number("width")?;
        let h = cur.number("height")?;
        let maxval = cur.number("maxval")?;
        if w == 0 || h == 0 || maxval == 0 || maxval > 255 {
            return Err(cur.err(format!("unsupported header {w}x{h} maxval {maxval}")));
        }
        if let Some(d) = dims {
            if d != (c, h, w) {
                return Err(cur.err(format!("image {n} is {c}x{h}x{w}, stack is {}x{}x{}", d.0, d.1, d.2)));
            }
        }
        dims = Some((c, h, w));
        // Exactly one whitespace byte separates the header from the raster.
        cur.pos += 1;
        let len = c * h * w;
        let raster = bytes
            .get(cur.pos..cur.pos + len)
            .ok_or_else(|| cur.err(format!("truncated raster: need {len} bytes")))?;
        let m = maxval as f64;
        let plane = h * w;
        let start = data.len();
        data.resize(start + len, T::zero());
        for (i, &b) in raster.iter().enumerate() {
            // Interleaved to planar.
            let (px, ch) = (i / c, i % c);
            data[start + ch * plane + px] = T::lit(b as f64 / m);
        }
        cur.pos += len;
        n += 1;
    }
    let (c, h, w) = dims.ok_or_else(|| cur.err("no images"))?;
    Tensor::new(&[n, c, h, w], data)
}

pub fn read_pnm_stack<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    parse_pnm_stack(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// Writes rows of flat points as CSV with columns `x0,x1,...`.
pub fn write_points_csv<T: Scalar>(path: &Path, points: &Tensor<T>) -> Result<()> {
    let w = points.row_len();
    let mut s = (0..w).map(|i| format!("x{i}")).collect::<Vec<_>>().join(",");
    s.push('\n');
    for row in points.data().chunks_exact(w) {
        let line = row.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",");
        let _ = writeln!(s, "{line}");
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Parses the output of [`write_points_csv`]: a header line, then one row of
/// numbers per point. Byte offsets in errors point at the offending line.
pub fn parse_points_csv<T: Scalar>(text: &str) -> Result<Tensor<T>> {
    let mut lines = text.split_inclusive('\n');
    let header = lines.next().ok_or_else(|| Error::Parse {
        offset: 0,
        message: "empty points file".into(),
    })?;
    let width = header.trim().split(',').count();
    let mut offset = header.len();
    let mut data = Vec::new();
    for line in lines {
        let row = line.trim();
        if !row.is_empty() {
            let values: Vec<&str> = row.split(',').collect();
            if values.len() != width {
                return Err(Error::Parse {
                    offset,
                    message: format!("{} columns, header has {width}", values.len()),
                });
            }
            for v in values {
                let x: f64 = v.trim().parse().map_err(|_| Error::Parse {
                    offset,
                    message: format!("bad number `{v}`"),
                })?;
                data.push(T::lit(x));
            }
        }
        offset += line.len();
    }
    if data.is_empty() {
        return Err(Error::Parse {
            offset,
            message: "no points".into(),
        });
    }
    Tensor::new(&[data.len() / width, width], data)
}

pub fn read_points_csv<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_points_csv(&text)
}
