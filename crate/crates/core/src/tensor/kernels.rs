//! Dense numeric kernels behind the graph ops.
//!
//! Kernels operate on flat row-major slices and are generic over the element
//! type so the same code runs in 32-bit (training and inference) and 64-bit
//! (gradient verification). Work is split over the batch dimension with rayon;
//! every cross-sample reduction is summed in a fixed order, so results do not
//! depend on the number of worker threads.

use num_traits::Float;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Element type usable by the kernels.
pub trait Scalar: Float + Default + Send + Sync + std::fmt::Debug + 'static {
    fn as_f64(self) -> f64;
    fn of_f64(v: f64) -> Self;

    /// `C = alpha * A * B + beta * C` with arbitrary strides.
    ///
    /// # Safety
    /// Pointers and strides must describe in-bounds matrices and `c` must not
    /// alias `a` or `b`.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Scalar for f32 {
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn of_f64(v: f64) -> Self {
        v as f32
    }
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Scalar for f64 {
    fn as_f64(self) -> f64 {
        self
    }
    fn of_f64(v: f64) -> Self {
        v
    }
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Strided read-only matrix view.
#[derive(Clone, Copy)]
struct MatView<'a, T> {
    data: &'a [T],
    rows: usize,
    cols: usize,
    rs: usize,
    cs: usize,
}

impl<'a, T> MatView<'a, T> {
    fn row_major(data: &'a [T], rows: usize, cols: usize) -> Self {
        Self {
            data,
            rows,
            cols,
            rs: cols,
            cs: 1,
        }
    }

    fn transposed(self) -> Self {
        Self {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
        }
    }

    fn extent(&self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            0
        } else {
            (self.rows - 1) * self.rs + (self.cols - 1) * self.cs + 1
        }
    }
}

/// `c (row-major, a.rows x b.cols) = a * b + beta * c`.
fn gemm<T: Scalar>(a: MatView<'_, T>, b: MatView<'_, T>, beta: T, c: &mut [T]) {
    assert_eq!(a.cols, b.rows, "gemm inner dimensions");
    assert!(a.extent() <= a.data.len() && b.extent() <= b.data.len());
    assert_eq!(c.len(), a.rows * b.cols);
    if c.is_empty() {
        return;
    }
    // SAFETY: extents checked above; `c` is a distinct mutable borrow.
    unsafe {
        T::gemm_raw(
            a.rows,
            a.cols,
            b.cols,
            T::one(),
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.as_mut_ptr(),
            b.cols as isize,
            1,
        );
    }
}

/// Shape bookkeeping for a 2-D cross-correlation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: (usize, usize),
    pub pad: (usize, usize),
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn new(input: &[usize], weight: &[usize], stride: (usize, usize), pad: (usize, usize)) -> Result<Self> {
        if input.len() != 4 || weight.len() != 4 || input[1] != weight[1] {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                lhs: input.to_vec(),
                rhs: weight.to_vec(),
            });
        }
        if stride.0 == 0 || stride.1 == 0 {
            return Err(Error::InvalidArgument("conv2d stride must be >= 1".into()));
        }
        let (ph, pw) = (input[2] + 2 * pad.0, input[3] + 2 * pad.1);
        if weight[2] > ph || weight[3] > pw || weight[2] == 0 || weight[3] == 0 {
            return Err(Error::ShapeMismatch {
                op: "conv2d (kernel larger than padded input)",
                lhs: input.to_vec(),
                rhs: weight.to_vec(),
            });
        }
        Ok(Self {
            batch: input[0],
            in_channels: input[1],
            in_h: input[2],
            in_w: input[3],
            out_channels: weight[0],
            kernel_h: weight[2],
            kernel_w: weight[3],
            stride,
            pad,
            out_h: (ph - weight[2]) / stride.0 + 1,
            out_w: (pw - weight[3]) / stride.1 + 1,
        })
    }

    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    pub fn out_plane(&self) -> usize {
        self.out_h * self.out_w
    }

    fn in_sample(&self) -> usize {
        self.in_channels * self.in_h * self.in_w
    }

    fn out_sample(&self) -> usize {
        self.out_channels * self.out_plane()
    }

    pub fn output_shape(&self) -> [usize; 4] {
        [self.batch, self.out_channels, self.out_h, self.out_w]
    }

    /// Multiply-accumulates of one forward pass over the whole batch.
    pub fn macs(&self) -> u64 {
        (self.kernel_h * self.kernel_w * self.in_channels * self.out_channels) as u64
            * self.out_plane() as u64
            * self.batch as u64
    }

    /// A 1x1 stride-1 unpadded conv reads its input directly as the column matrix.
    fn is_pointwise(&self) -> bool {
        self.kernel_h == 1 && self.kernel_w == 1 && self.stride == (1, 1) && self.pad == (0, 0)
    }

    /// Output index range `[lo, hi)` along one axis for which `o*stride + k - pad`
    /// falls inside `[0, len)`.
    fn valid_range(out_len: usize, stride: usize, k: usize, pad: usize, len: usize) -> (usize, usize) {
        let lo = if k >= pad { 0 } else { (pad - k).div_ceil(stride) };
        let hi = if len + pad > k {
            ((len + pad - k - 1) / stride + 1).min(out_len)
        } else {
            0
        };
        (lo.min(hi), hi)
    }
}

fn im2col<T: Scalar>(g: &ConvGeometry, input: &[T], col: &mut [T]) {
    let (sh, sw) = g.stride;
    let (ph, pw) = g.pad;
    let plane = g.out_plane();
    for c in 0..g.in_channels {
        let src = &input[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ky in 0..g.kernel_h {
            let (oy_lo, oy_hi) = ConvGeometry::valid_range(g.out_h, sh, ky, ph, g.in_h);
            for kx in 0..g.kernel_w {
                let (ox_lo, ox_hi) = ConvGeometry::valid_range(g.out_w, sw, kx, pw, g.in_w);
                let row = (c * g.kernel_h + ky) * g.kernel_w + kx;
                let dst = &mut col[row * plane..(row + 1) * plane];
                dst.fill(T::zero());
                for oy in oy_lo..oy_hi {
                    let iy = oy * sh + ky - ph;
                    let line = &src[iy * g.in_w..(iy + 1) * g.in_w];
                    let out_line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if sw == 1 {
                        let ix0 = ox_lo + kx - pw;
                        out_line[ox_lo..ox_hi].copy_from_slice(&line[ix0..ix0 + (ox_hi - ox_lo)]);
                    } else {
                        for ox in ox_lo..ox_hi {
                            out_line[ox] = line[ox * sw + kx - pw];
                        }
                    }
                }
            }
        }
    }
}

fn col2im_add<T: Scalar>(g: &ConvGeometry, col: &[T], grad_input: &mut [T]) {
    let (sh, sw) = g.stride;
    let (ph, pw) = g.pad;
    let plane = g.out_plane();
    for c in 0..g.in_channels {
        let dst = &mut grad_input[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ky in 0..g.kernel_h {
            let (oy_lo, oy_hi) = ConvGeometry::valid_range(g.out_h, sh, ky, ph, g.in_h);
            for kx in 0..g.kernel_w {
                let (ox_lo, ox_hi) = ConvGeometry::valid_range(g.out_w, sw, kx, pw, g.in_w);
                let row = (c * g.kernel_h + ky) * g.kernel_w + kx;
                let src = &col[row * plane..(row + 1) * plane];
                for oy in oy_lo..oy_hi {
                    let iy = oy * sh + ky - ph;
                    let line = &mut dst[iy * g.in_w..(iy + 1) * g.in_w];
                    let col_line = &src[oy * g.out_w..(oy + 1) * g.out_w];
                    for ox in ox_lo..ox_hi {
                        line[ox * sw + kx - pw] = line[ox * sw + kx - pw] + col_line[ox];
                    }
                }
            }
        }
    }
}

fn check_len(op: &'static str, what: &[usize], got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::ShapeMismatch {
            op,
            lhs: what.to_vec(),
            rhs: vec![got],
        });
    }
    Ok(())
}

fn check_conv_buffers<T>(g: &ConvGeometry, input: &[T], weight: &[T], bias: &[T]) -> Result<()> {
    check_len(
        "conv2d input",
        &[g.batch, g.in_channels, g.in_h, g.in_w],
        input.len(),
        g.batch * g.in_sample(),
    )?;
    check_len(
        "conv2d weight",
        &[g.out_channels, g.in_channels, g.kernel_h, g.kernel_w],
        weight.len(),
        g.out_channels * g.patch_len(),
    )?;
    check_len("conv2d bias", &[g.out_channels], bias.len(), g.out_channels)
}

/// Fast path: per-sample im2col followed by one matrix multiply.
pub fn conv2d_im2col<T: Scalar>(g: &ConvGeometry, input: &[T], weight: &[T], bias: &[T]) -> Result<Vec<T>> {
    check_conv_buffers(g, input, weight, bias)?;
    let mut out = vec![T::zero(); g.batch * g.out_sample()];
    if out.is_empty() {
        return Ok(out);
    }
    let k = g.patch_len();
    let plane = g.out_plane();
    let w = MatView::row_major(weight, g.out_channels, k);
    out.par_chunks_mut(g.out_sample())
        .zip(input.par_chunks(g.in_sample()))
        .for_each(|(o, x)| {
            for (row, &b) in o.chunks_mut(plane).zip(bias) {
                row.fill(b);
            }
            if g.is_pointwise() {
                gemm(w, MatView::row_major(x, k, plane), T::one(), o);
            } else {
                let mut col = vec![T::zero(); k * plane];
                im2col(g, x, &mut col);
                gemm(w, MatView::row_major(&col, k, plane), T::one(), o);
            }
        });
    Ok(out)
}

/// Reference path: direct nested loops with 64-bit accumulation.
pub fn conv2d_direct<T: Scalar>(g: &ConvGeometry, input: &[T], weight: &[T], bias: &[T]) -> Result<Vec<T>> {
    check_conv_buffers(g, input, weight, bias)?;
    let mut out = vec![T::zero(); g.batch * g.out_sample()];
    if out.is_empty() {
        return Ok(out);
    }
    let (sh, sw) = g.stride;
    let (ph, pw) = (g.pad.0 as isize, g.pad.1 as isize);
    out.par_chunks_mut(g.out_sample())
        .zip(input.par_chunks(g.in_sample()))
        .for_each(|(o, x)| {
            for co in 0..g.out_channels {
                for oy in 0..g.out_h {
                    for ox in 0..g.out_w {
                        let mut acc = bias[co].as_f64();
                        for ci in 0..g.in_channels {
                            for ky in 0..g.kernel_h {
                                let iy = (oy * sh + ky) as isize - ph;
                                if iy < 0 || iy >= g.in_h as isize {
                                    continue;
                                }
                                for kx in 0..g.kernel_w {
                                    let ix = (ox * sw + kx) as isize - pw;
                                    if ix < 0 || ix >= g.in_w as isize {
                                        continue;
                                    }
                                    let xv = x[(ci * g.in_h + iy as usize) * g.in_w + ix as usize];
                                    let wv = weight[((co * g.in_channels + ci) * g.kernel_h + ky) * g.kernel_w + kx];
                                    acc += xv.as_f64() * wv.as_f64();
                                }
                            }
                        }
                        o[(co * g.out_h + oy) * g.out_w + ox] = T::of_f64(acc);
                    }
                }
            }
        });
    Ok(out)
}

/// Gradients of a convolution with respect to its three operands.
#[derive(Clone, Debug)]
pub struct ConvGrads<T> {
    pub input: Option<Vec<T>>,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

/// Backward pass of [`conv2d_im2col`] / [`conv2d_direct`] (both compute the same map).
pub fn conv2d_backward<T: Scalar>(
    g: &ConvGeometry,
    input: &[T],
    weight: &[T],
    grad_out: &[T],
    want_input_grad: bool,
) -> Result<ConvGrads<T>> {
    check_len(
        "conv2d input",
        &[g.batch, g.in_channels, g.in_h, g.in_w],
        input.len(),
        g.batch * g.in_sample(),
    )?;
    check_len(
        "conv2d weight",
        &[g.out_channels, g.patch_len()],
        weight.len(),
        g.out_channels * g.patch_len(),
    )?;
    check_len(
        "conv2d grad_out",
        &g.output_shape(),
        grad_out.len(),
        g.batch * g.out_sample(),
    )?;
    let k = g.patch_len();
    let plane = g.out_plane();
    let w = MatView::row_major(weight, g.out_channels, k);

    let per_sample = |x: &[T], go: &[T], gi: Option<&mut [T]>| -> Vec<T> {
        let mut gw = vec![T::zero(); g.out_channels * k];
        let go_view = MatView::row_major(go, g.out_channels, plane);
        let owned;
        let col: &[T] = if g.is_pointwise() {
            x
        } else {
            let mut c = vec![T::zero(); k * plane];
            im2col(g, x, &mut c);
            owned = c;
            &owned
        };
        gemm(
            go_view,
            MatView::row_major(col, k, plane).transposed(),
            T::zero(),
            &mut gw,
        );
        if let Some(gi) = gi {
            if g.is_pointwise() {
                gemm(w.transposed(), go_view, T::zero(), gi);
            } else {
                let mut gcol = vec![T::zero(); k * plane];
                gemm(w.transposed(), go_view, T::zero(), &mut gcol);
                gi.fill(T::zero());
                col2im_add(g, &gcol, gi);
            }
        }
        gw
    };

    let (input_grad, partials): (Option<Vec<T>>, Vec<Vec<T>>) = if want_input_grad {
        let mut gi = vec![T::zero(); input.len()];
        let partials = gi
            .par_chunks_mut(g.in_sample().max(1))
            .zip(input.par_chunks(g.in_sample().max(1)))
            .zip(grad_out.par_chunks(g.out_sample().max(1)))
            .map(|((gi, x), go)| per_sample(x, go, Some(gi)))
            .collect();
        (Some(gi), partials)
    } else {
        let partials = input
            .par_chunks(g.in_sample().max(1))
            .zip(grad_out.par_chunks(g.out_sample().max(1)))
            .map(|(x, go)| per_sample(x, go, None))
            .collect();
        (None, partials)
    };

    let mut weight_grad = vec![T::zero(); g.out_channels * k];
    for p in &partials {
        for (acc, &v) in weight_grad.iter_mut().zip(p) {
            *acc = *acc + v;
        }
    }
    let mut bias_grad = vec![T::zero(); g.out_channels];
    for (co, b) in bias_grad.iter_mut().enumerate() {
        let mut acc = 0.0f64;
        for n in 0..g.batch {
            let base = n * g.out_sample() + co * plane;
            acc += grad_out[base..base + plane].iter().map(|v| v.as_f64()).sum::<f64>();
        }
        *b = T::of_f64(acc);
    }
    Ok(ConvGrads {
        input: input_grad,
        weight: weight_grad,
        bias: bias_grad,
    })
}

/// Shape bookkeeping for an unpadded max pool.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PoolGeometry {
    pub planes: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub window: usize,
    pub stride: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl PoolGeometry {
    /// `planes` is batch x channels.
    pub fn new(planes: usize, in_h: usize, in_w: usize, window: usize, stride: usize) -> Result<Self> {
        if window == 0 || stride == 0 {
            return Err(Error::InvalidArgument(
                "max_pool2d window and stride must be >= 1".into(),
            ));
        }
        if window > in_h || window > in_w {
            return Err(Error::ShapeMismatch {
                op: "max_pool2d (window larger than input)",
                lhs: vec![in_h, in_w],
                rhs: vec![window, window],
            });
        }
        Ok(Self {
            planes,
            in_h,
            in_w,
            window,
            stride,
            out_h: (in_h - window) / stride + 1,
            out_w: (in_w - window) / stride + 1,
        })
    }
}

/// Returns pooled values and, per output cell, the flat in-plane index of the
/// winning input cell. Ties go to the first cell in row-major scan order.
pub fn max_pool2d_forward<T: Scalar>(g: &PoolGeometry, input: &[T]) -> (Vec<T>, Vec<u32>) {
    let in_plane = g.in_h * g.in_w;
    let out_plane = g.out_h * g.out_w;
    let mut out = vec![T::zero(); g.planes * out_plane];
    let mut arg = vec![0u32; g.planes * out_plane];
    if out.is_empty() {
        return (out, arg);
    }
    out.par_chunks_mut(out_plane)
        .zip(arg.par_chunks_mut(out_plane))
        .zip(input.par_chunks(in_plane))
        .for_each(|((o, a), x)| {
            for oy in 0..g.out_h {
                for ox in 0..g.out_w {
                    let (y0, x0) = (oy * g.stride, ox * g.stride);
                    let mut best_idx = y0 * g.in_w + x0;
                    let mut best = x[best_idx];
                    for y in y0..y0 + g.window {
                        for xx in x0..x0 + g.window {
                            let idx = y * g.in_w + xx;
                            if x[idx] > best {
                                best = x[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    o[oy * g.out_w + ox] = best;
                    a[oy * g.out_w + ox] = best_idx as u32;
                }
            }
        });
    (out, arg)
}

pub fn max_pool2d_backward<T: Scalar>(g: &PoolGeometry, argmax: &[u32], grad_out: &[T]) -> Vec<T> {
    let in_plane = g.in_h * g.in_w;
    let out_plane = g.out_h * g.out_w;
    let mut gi = vec![T::zero(); g.planes * in_plane];
    if gi.is_empty() || out_plane == 0 {
        return gi;
    }
    gi.par_chunks_mut(in_plane)
        .zip(argmax.par_chunks(out_plane))
        .zip(grad_out.par_chunks(out_plane))
        .for_each(|((gi, a), go)| {
            for (&idx, &v) in a.iter().zip(go) {
                gi[idx as usize] = gi[idx as usize] + v;
            }
        });
    gi
}

/// Source taps for one output coordinate along one axis.
#[derive(Clone, Copy, Debug)]
struct Tap {
    lo: usize,
    hi: usize,
    frac: f64,
}

fn axis_taps(in_len: usize, out_len: usize) -> Vec<Tap> {
    (0..out_len)
        .map(|o| {
            if in_len == 1 || out_len == 1 {
                return Tap {
                    lo: 0,
                    hi: 0,
                    frac: 0.0,
                };
            }
            let src = o as f64 * (in_len - 1) as f64 / (out_len - 1) as f64;
            let lo = (src.floor() as usize).min(in_len - 1);
            let hi = (lo + 1).min(in_len - 1);
            Tap {
                lo,
                hi,
                frac: src - lo as f64,
            }
        })
        .collect()
}

/// Bilinear resampling with corner-aligned grids, applied to each of `planes` planes.
pub fn bilinear_forward<T: Scalar>(
    planes: usize,
    in_h: usize,
    in_w: usize,
    out_h: usize,
    out_w: usize,
    input: &[T],
) -> Vec<T> {
    let ty = axis_taps(in_h, out_h);
    let tx = axis_taps(in_w, out_w);
    let mut out = vec![T::zero(); planes * out_h * out_w];
    if out.is_empty() {
        return out;
    }
    out.par_chunks_mut(out_h * out_w)
        .zip(input.par_chunks(in_h * in_w))
        .for_each(|(o, x)| {
            for (oy, ty) in ty.iter().enumerate() {
                let r0 = &x[ty.lo * in_w..(ty.lo + 1) * in_w];
                let r1 = &x[ty.hi * in_w..(ty.hi + 1) * in_w];
                for (ox, tx) in tx.iter().enumerate() {
                    let top = r0[tx.lo].as_f64() * (1.0 - tx.frac) + r0[tx.hi].as_f64() * tx.frac;
                    let bot = r1[tx.lo].as_f64() * (1.0 - tx.frac) + r1[tx.hi].as_f64() * tx.frac;
                    o[oy * out_w + ox] = T::of_f64(top * (1.0 - ty.frac) + bot * ty.frac);
                }
            }
        });
    out
}

/// Transpose of [`bilinear_forward`]: scatters each output gradient onto its four taps.
pub fn bilinear_backward<T: Scalar>(
    planes: usize,
    in_h: usize,
    in_w: usize,
    out_h: usize,
    out_w: usize,
    grad_out: &[T],
) -> Vec<T> {
    let ty = axis_taps(in_h, out_h);
    let tx = axis_taps(in_w, out_w);
    let mut gi = vec![T::zero(); planes * in_h * in_w];
    if gi.is_empty() || out_h * out_w == 0 {
        return gi;
    }
    gi.par_chunks_mut(in_h * in_w)
        .zip(grad_out.par_chunks(out_h * out_w))
        .for_each(|(gi, go)| {
            let mut acc = vec![0.0f64; in_h * in_w];
            for (oy, ty) in ty.iter().enumerate() {
                for (ox, tx) in tx.iter().enumerate() {
                    let g = go[oy * out_w + ox].as_f64();
                    let (top, bot) = (g * (1.0 - ty.frac), g * ty.frac);
                    acc[ty.lo * in_w + tx.lo] += top * (1.0 - tx.frac);
                    acc[ty.lo * in_w + tx.hi] += top * tx.frac;
                    acc[ty.hi * in_w + tx.lo] += bot * (1.0 - tx.frac);
                    acc[ty.hi * in_w + tx.hi] += bot * tx.frac;
                }
            }
            for (d, a) in gi.iter_mut().zip(acc) {
                *d = T::of_f64(a);
            }
        });
    gi
}
