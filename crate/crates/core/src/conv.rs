//! Convolution (cross-correlation), convolution transpose and their
//! explicit matrix form.
//!
//! Kernels are laid out `[out_channels, in_channels, k...]` from the point of
//! view of the forward convolution. The transpose of a convolution reuses the
//! same kernel tensor: it maps `out_channels` maps back to `in_channels` maps.
//! Inputs are `[channels, spatial...]` or batched `[batch, channels, spatial...]`.
//! One and two spatial axes are supported; the 1D path runs through the 2D
//! kernels with a unit height.

use crate::graph::dot;
use crate::{Error, Result, Scalar, Tensor};

/// Upper bound on the number of entries `conv_as_matrix` will materialize.
pub const MATRIX_ENTRY_LIMIT: usize = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    Valid,
    Explicit(usize),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub kernel: Vec<usize>,
    pub stride: Vec<usize>,
    pub padding: Vec<usize>,
    /// Extra trailing rows/columns produced by the transpose; must be below the stride.
    pub output_padding: Vec<usize>,
}

impl ConvSpec {
    /// Stride 1, valid padding.
    pub fn new(kernel: &[usize]) -> Self {
        let n = kernel.len();
        ConvSpec {
            kernel: kernel.to_vec(),
            stride: vec![1; n],
            padding: vec![0; n],
            output_padding: vec![0; n],
        }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = vec![stride; self.kernel.len()];
        self
    }

    pub fn with_padding(mut self, padding: Padding) -> Self {
        let p = match padding {
            Padding::Valid => 0,
            Padding::Explicit(p) => p,
        };
        self.padding = vec![p; self.kernel.len()];
        self
    }

    pub fn with_output_padding(mut self, extra: usize) -> Self {
        self.output_padding = vec![extra; self.kernel.len()];
        self
    }

    pub fn spatial_rank(&self) -> usize {
        self.kernel.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.kernel.len();
        if n == 0 || n > 2 {
            return Err(Error::contract(format!(
                "convolution supports 1 or 2 spatial axes, got {n}"
            )));
        }
        if self.stride.len() != n || self.padding.len() != n || self.output_padding.len() != n {
            return Err(Error::contract(format!("inconsistent conv spec {self:?}")));
        }
        if self.kernel.contains(&0) || self.stride.contains(&0) {
            return Err(Error::contract(format!(
                "kernel sizes and strides must be positive: {self:?}"
            )));
        }
        if self
            .output_padding
            .iter()
            .zip(&self.stride)
            .any(|(&op, &s)| op >= s)
        {
            return Err(Error::contract(format!(
                "output padding must be below the stride: {self:?}"
            )));
        }
        Ok(())
    }

    /// Spatial size produced by the forward convolution.
    pub fn output_size(&self, input: &[usize]) -> Result<Vec<usize>> {
        self.validate()?;
        if input.len() != self.kernel.len() {
            return Err(Error::dim("conv output size", input, &self.kernel));
        }
        let mut out = Vec::with_capacity(input.len());
        for axis in 0..input.len() {
            let padded = input[axis] + 2 * self.padding[axis];
            if padded < self.kernel[axis] {
                return Err(Error::dim("conv output size", input, &self.kernel));
            }
            out.push((padded - self.kernel[axis]) / self.stride[axis] + 1);
        }
        Ok(out)
    }

    /// Spatial size produced by the transpose: `(in - 1) * stride + k - 2p + output_padding`.
    pub fn transpose_output_size(&self, input: &[usize]) -> Result<Vec<usize>> {
        self.validate()?;
        if input.len() != self.kernel.len() {
            return Err(Error::dim("conv transpose output size", input, &self.kernel));
        }
        let mut out = Vec::with_capacity(input.len());
        for axis in 0..input.len() {
            let full = (input[axis] - 1) * self.stride[axis]
                + self.kernel[axis]
                + self.output_padding[axis];
            let trim = 2 * self.padding[axis];
            if full <= trim {
                return Err(Error::dim("conv transpose output size", input, &self.kernel));
            }
            out.push(full - trim);
        }
        Ok(out)
    }
}

/// Index arithmetic for one batched 2D convolution. `in_*` is the wide side
/// (conv input, transpose output), `out_*` the narrow side.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Geometry {
    pub batch: usize,
    pub in_ch: usize,
    pub out_ch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub k_h: usize,
    pub k_w: usize,
    pub s_h: usize,
    pub s_w: usize,
    pub p_h: usize,
    pub p_w: usize,
}

impl Geometry {
    fn in_plane(&self) -> usize {
        self.in_h * self.in_w
    }
    fn out_plane(&self) -> usize {
        self.out_h * self.out_w
    }
    fn k_plane(&self) -> usize {
        self.k_h * self.k_w
    }
    pub fn in_len(&self) -> usize {
        self.batch * self.in_ch * self.in_plane()
    }
    pub fn out_len(&self) -> usize {
        self.batch * self.out_ch * self.out_plane()
    }
}

/// Output positions `o` in `0..out_len` whose input tap `o*stride + off - pad` is in bounds.
#[inline]
fn valid_range(out_len: usize, in_len: usize, stride: usize, pad: usize, off: usize) -> (usize, usize) {
    let lo = if pad > off {
        (pad - off).div_ceil(stride)
    } else {
        0
    };
    let reach = in_len + pad;
    let hi = if reach > off {
        (reach - off).div_ceil(stride).min(out_len)
    } else {
        0
    };
    (lo, hi.max(lo))
}

/// Patch matrix of one sample: row `p` holds the `in_ch·k_h·k_w` input taps
/// feeding output position `p`, zero where the tap falls in the padding.
fn im2col<T: Scalar>(x: &[T], g: &Geometry, col: &mut [T]) {
    let (ip, kp) = (g.in_plane(), g.k_plane());
    let row_len = g.in_ch * kp;
    col.fill(T::zero());
    for c in 0..g.in_ch {
        let src = &x[c * ip..][..ip];
        for a in 0..g.k_h {
            let (y_lo, y_hi) = valid_range(g.out_h, g.in_h, g.s_h, g.p_h, a);
            for b in 0..g.k_w {
                let (x_lo, x_hi) = valid_range(g.out_w, g.in_w, g.s_w, g.p_w, b);
                let k = c * kp + a * g.k_w + b;
                for oy in y_lo..y_hi {
                    let row = &src[(oy * g.s_h + a - g.p_h) * g.in_w..][..g.in_w];
                    for ox in x_lo..x_hi {
                        col[(oy * g.out_w + ox) * row_len + k] = row[ox * g.s_w + b - g.p_w];
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates patch rows back into the image.
fn col2im<T: Scalar>(col: &[T], g: &Geometry, dx: &mut [T]) {
    let (ip, kp) = (g.in_plane(), g.k_plane());
    let row_len = g.in_ch * kp;
    for c in 0..g.in_ch {
        let dst = &mut dx[c * ip..][..ip];
        for a in 0..g.k_h {
            let (y_lo, y_hi) = valid_range(g.out_h, g.in_h, g.s_h, g.p_h, a);
            for b in 0..g.k_w {
                let (x_lo, x_hi) = valid_range(g.out_w, g.in_w, g.s_w, g.p_w, b);
                let k = c * kp + a * g.k_w + b;
                for oy in y_lo..y_hi {
                    let row = &mut dst[(oy * g.s_h + a - g.p_h) * g.in_w..][..g.in_w];
                    for ox in x_lo..x_hi {
                        row[ox * g.s_w + b - g.p_w] += col[(oy * g.out_w + ox) * row_len + k];
                    }
                }
            }
        }
    }
}

#[inline]
fn axpy<T: Scalar>(a: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// `out[n,o] += sum_c x[n,c] (*) w[o,c]`
pub(crate) fn conv_forward_raw<T: Scalar>(x: &[T], w: &[T], g: &Geometry, out: &mut [T]) {
    let (ip, op) = (g.in_plane(), g.out_plane());
    let row_len = g.in_ch * g.k_plane();
    let mut col = vec![T::zero(); op * row_len];
    for n in 0..g.batch {
        im2col(&x[n * g.in_ch * ip..][..g.in_ch * ip], g, &mut col);
        let dst = &mut out[n * g.out_ch * op..][..g.out_ch * op];
        for (o, ker) in w.chunks_exact(row_len).enumerate() {
            for (p, patch) in col.chunks_exact(row_len).enumerate() {
                dst[o * op + p] += dot(ker, patch);
            }
        }
    }
}

/// Adjoint of [`conv_forward_raw`] in its input: scatters `dy` back through `w`.
pub(crate) fn conv_transpose_raw<T: Scalar>(dy: &[T], w: &[T], g: &Geometry, dx: &mut [T]) {
    let (ip, op) = (g.in_plane(), g.out_plane());
    let row_len = g.in_ch * g.k_plane();
    let mut col = vec![T::zero(); op * row_len];
    for n in 0..g.batch {
        col.fill(T::zero());
        let src = &dy[n * g.out_ch * op..][..g.out_ch * op];
        for (o, ker) in w.chunks_exact(row_len).enumerate() {
            for (p, patch) in col.chunks_exact_mut(row_len).enumerate() {
                axpy(src[o * op + p], ker, patch);
            }
        }
        col2im(&col, g, &mut dx[n * g.in_ch * ip..][..g.in_ch * ip]);
    }
}

/// Kernel gradient: `dw[o,c,a,b] += sum_n sum_{oy,ox} dy[n,o,oy,ox] * x[n,c,tap]`.
pub(crate) fn conv_kernel_grad_raw<T: Scalar>(x: &[T], dy: &[T], g: &Geometry, dw: &mut [T]) {
    let (ip, op) = (g.in_plane(), g.out_plane());
    let row_len = g.in_ch * g.k_plane();
    let mut col = vec![T::zero(); op * row_len];
    for n in 0..g.batch {
        im2col(&x[n * g.in_ch * ip..][..g.in_ch * ip], g, &mut col);
        let grad = &dy[n * g.out_ch * op..][..g.out_ch * op];
        for (o, ker) in dw.chunks_exact_mut(row_len).enumerate() {
            for (p, patch) in col.chunks_exact(row_len).enumerate() {
                axpy(grad[o * op + p], patch, ker);
            }
        }
    }
}

/// Splits a conv-side tensor shape into (batched, batch, channels, spatial).
fn split_layout<'a>(
    op: &'static str,
    shape: &'a [usize],
    spec: &ConvSpec,
) -> Result<(bool, usize, usize, &'a [usize])> {
    let s = spec.spatial_rank();
    if shape.len() == s + 1 {
        Ok((false, 1, shape[0], &shape[1..]))
    } else if shape.len() == s + 2 {
        Ok((true, shape[0], shape[1], &shape[2..]))
    } else {
        Err(Error::dim(op, shape, &spec.kernel))
    }
}

fn check_kernels<T: Scalar>(op: &'static str, kernels: &Tensor<T>, spec: &ConvSpec) -> Result<(usize, usize)> {
    spec.validate()?;
    let ks = kernels.shape();
    if ks.len() != spec.spatial_rank() + 2 || ks[2..] != spec.kernel[..] {
        return Err(Error::dim(op, ks, &spec.kernel));
    }
    Ok((ks[0], ks[1]))
}

fn to_hw(spatial: &[usize]) -> (usize, usize) {
    match spatial {
        [l] => (1, *l),
        [h, w] => (*h, *w),
        _ => unreachable!("spatial rank validated"),
    }
}

fn hw_params(v: &[usize], unit: usize) -> (usize, usize) {
    match v {
        [x] => (unit, *x),
        [a, b] => (*a, *b),
        _ => unreachable!("spatial rank validated"),
    }
}

pub(crate) fn geometry(
    spec: &ConvSpec,
    batch: usize,
    in_ch: usize,
    out_ch: usize,
    in_spatial: &[usize],
    out_spatial: &[usize],
) -> Geometry {
    let (in_h, in_w) = to_hw(in_spatial);
    let (out_h, out_w) = to_hw(out_spatial);
    let (k_h, k_w) = hw_params(&spec.kernel, 1);
    let (s_h, s_w) = hw_params(&spec.stride, 1);
    let (p_h, p_w) = hw_params(&spec.padding, 0);
    Geometry {
        batch,
        in_ch,
        out_ch,
        in_h,
        in_w,
        out_h,
        out_w,
        k_h,
        k_w,
        s_h,
        s_w,
        p_h,
        p_w,
    }
}

fn assemble_shape(batched: bool, batch: usize, ch: usize, spatial: &[usize]) -> Vec<usize> {
    let mut shape = Vec::with_capacity(spatial.len() + 2);
    if batched {
        shape.push(batch);
    }
    shape.push(ch);
    shape.extend_from_slice(spatial);
    shape
}

/// Cross-correlation of `input` with `kernels` (no kernel flip), summing over all input maps.
pub fn conv<T: Scalar>(input: &Tensor<T>, kernels: &Tensor<T>, spec: &ConvSpec) -> Result<Tensor<T>> {
    let (out_ch, in_ch) = check_kernels("conv", kernels, spec)?;
    let (batched, batch, ch, spatial) = split_layout("conv", input.shape(), spec)?;
    if ch != in_ch {
        return Err(Error::dim("conv", input.shape(), kernels.shape()));
    }
    let out_spatial = spec.output_size(spatial)?;
    let g = geometry(spec, batch, in_ch, out_ch, spatial, &out_spatial);
    let mut out = vec![T::zero(); g.out_len()];
    conv_forward_raw(input.data(), kernels.data(), &g, &mut out);
    Tensor::new(&assemble_shape(batched, batch, out_ch, &out_spatial), out)
}

/// Convolution transpose with the output size implied by the spec.
pub fn conv_transpose<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    check_kernels("conv_transpose", kernels, spec)?;
    let (_, _, _, spatial) = split_layout("conv_transpose", input.shape(), spec)?;
    let out_spatial = spec.transpose_output_size(spatial)?;
    conv_transpose_to(input, kernels, spec, &out_spatial)
}

/// Convolution transpose onto an explicit output size. The forward
/// convolution of that size must produce the spatial size of `input`.
pub fn conv_transpose_to<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    spec: &ConvSpec,
    out_spatial: &[usize],
) -> Result<Tensor<T>> {
    let (conv_out_ch, conv_in_ch) = check_kernels("conv_transpose", kernels, spec)?;
    let (batched, batch, ch, spatial) = split_layout("conv_transpose", input.shape(), spec)?;
    if ch != conv_out_ch {
        return Err(Error::dim("conv_transpose", input.shape(), kernels.shape()));
    }
    if spec.output_size(out_spatial)? != spatial {
        return Err(Error::dim("conv_transpose", input.shape(), out_spatial));
    }
    let g = geometry(spec, batch, conv_in_ch, conv_out_ch, out_spatial, spatial);
    let mut out = vec![T::zero(); g.in_len()];
    conv_transpose_raw(input.data(), kernels.data(), &g, &mut out);
    Tensor::new(&assemble_shape(batched, batch, conv_in_ch, out_spatial), out)
}

/// Gradient of `sum(dy * conv(x, W))` with respect to `W`.
pub fn conv_kernel_grad<T: Scalar>(
    x: &Tensor<T>,
    dy: &Tensor<T>,
    kernel_shape: &[usize],
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    spec.validate()?;
    let (batched, batch, in_ch, spatial) = split_layout("conv_kernel_grad", x.shape(), spec)?;
    let (dy_batched, dy_batch, out_ch, out_spatial) =
        split_layout("conv_kernel_grad", dy.shape(), spec)?;
    if batched != dy_batched
        || batch != dy_batch
        || kernel_shape.len() != spec.spatial_rank() + 2
        || kernel_shape[0] != out_ch
        || kernel_shape[1] != in_ch
        || spec.output_size(spatial)? != out_spatial
    {
        return Err(Error::dim("conv_kernel_grad", x.shape(), dy.shape()));
    }
    let g = geometry(spec, batch, in_ch, out_ch, spatial, out_spatial);
    let mut dw = vec![T::zero(); kernel_shape.iter().product()];
    conv_kernel_grad_raw(x.data(), dy.data(), &g, &mut dw);
    Tensor::new(kernel_shape, dw)
}

/// Matrix `M` with `flatten(conv(x)) = M * flatten(x)` for every unbatched `x`
/// of shape `input_shape = [channels, spatial...]`. Built directly from the
/// kernel entries, one row per output element.
pub fn conv_as_matrix<T: Scalar>(
    kernels: &Tensor<T>,
    input_shape: &[usize],
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    let (out_ch, in_ch) = check_kernels("conv_as_matrix", kernels, spec)?;
    if input_shape.len() != spec.spatial_rank() + 1 || input_shape[0] != in_ch {
        return Err(Error::dim("conv_as_matrix", input_shape, kernels.shape()));
    }
    let spatial = &input_shape[1..];
    let out_spatial = spec.output_size(spatial)?;
    let g = geometry(spec, 1, in_ch, out_ch, spatial, &out_spatial);
    let rows = out_ch * g.out_plane();
    let cols = in_ch * g.in_plane();
    let entries = rows.saturating_mul(cols);
    if entries > MATRIX_ENTRY_LIMIT {
        return Err(Error::Capacity {
            entries,
            limit: MATRIX_ENTRY_LIMIT,
        });
    }
    let w = kernels.data();
    let mut m = vec![T::zero(); entries];
    for o in 0..out_ch {
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let row = (o * g.out_h + oy) * g.out_w + ox;
                for c in 0..in_ch {
                    for a in 0..g.k_h {
                        let iy = (oy * g.s_h + a) as isize - g.p_h as isize;
                        if iy < 0 || iy >= g.in_h as isize {
                            continue;
                        }
                        for b in 0..g.k_w {
                            let ix = (ox * g.s_w + b) as isize - g.p_w as isize;
                            if ix < 0 || ix >= g.in_w as isize {
                                continue;
                            }
                            let col = (c * g.in_h + iy as usize) * g.in_w + ix as usize;
                            m[row * cols + col] = w[((o * in_ch + c) * g.k_h + a) * g.k_w + b];
                        }
                    }
                }
            }
        }
    }
    Tensor::new(&[rows, cols], m)
}

/// Inserts `stride - 1` zeros after every element along each of the last
/// `spatial_axes` axes: `[1,2,3]` with stride 2 becomes `[1,0,2,0,3,0]`.
pub fn zero_upsample<T: Scalar>(input: &Tensor<T>, stride: usize, spatial_axes: usize) -> Result<Tensor<T>> {
    if stride == 0 {
        return Err(Error::contract("zero_upsample stride must be at least 1"));
    }
    if spatial_axes == 0 || spatial_axes > input.rank() {
        return Err(Error::contract(format!(
            "zero_upsample over {spatial_axes} axes of a rank-{} tensor",
            input.rank()
        )));
    }
    let shape = input.shape();
    let lead = input.rank() - spatial_axes;
    let mut out_shape = shape.to_vec();
    for d in &mut out_shape[lead..] {
        *d *= stride;
    }
    let mut out = Tensor::zeros(&out_shape);
    let src = input.data();
    let dst = out.data_mut();
    // Walk every source element, mapping its multi-index.
    let mut idx = vec![0usize; shape.len()];
    for &v in src {
        let mut flat = 0;
        for (axis, &i) in idx.iter().enumerate() {
            let i = if axis >= lead { i * stride } else { i };
            flat = flat * out_shape[axis] + i;
        }
        dst[flat] = v;
        for axis in (0..shape.len()).rev() {
            idx[axis] += 1;
            if idx[axis] < shape[axis] {
                break;
            }
            idx[axis] = 0;
        }
    }
    Ok(out)
}
