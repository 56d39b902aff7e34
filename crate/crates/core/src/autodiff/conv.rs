//! 3D convolution kernels.
//!
//! Convolution is lowered to im2col followed by a blocked matrix product.
//! Every output element is reduced in a fixed order, so results do not
//! depend on the number of worker threads.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::Scalar;

/// Stride and zero padding per spatial axis (depth, height, width).
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ConvGeometry {
    pub stride: [usize; 3],
    pub padding: [usize; 3],
}

impl ConvGeometry {
    pub fn unit() -> Self {
        ConvGeometry {
            stride: [1, 1, 1],
            padding: [0, 0, 0],
        }
    }

    /// Stride 1 with padding that preserves spatial size for odd kernels.
    pub fn same(kernel: [usize; 3]) -> Self {
        ConvGeometry {
            stride: [1, 1, 1],
            padding: [kernel[0] / 2, kernel[1] / 2, kernel[2] / 2],
        }
    }
}

impl Default for ConvGeometry {
    fn default() -> Self {
        Self::unit()
    }
}

/// Resolved sizes of one convolution.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvDims {
    pub n: usize,
    pub c: usize,
    pub f: usize,
    pub input: [usize; 3],
    pub kernel: [usize; 3],
    pub output: [usize; 3],
    pub geom: ConvGeometry,
}

impl ConvDims {
    pub fn resolve(input: &[usize], kernel: &[usize], geom: ConvGeometry) -> Result<Self> {
        let [n, c, d, h, w] = crate::tensor::dims5(input)?;
        let [f, kc, kd, kh, kw] = crate::tensor::dims5(kernel)
            .map_err(|_| Error::Shape(format!("conv3d kernel must be [F, C, kd, kh, kw], got {kernel:?}")))?;
        if kc != c {
            return Err(Error::Shape(format!(
                "conv3d kernel expects {kc} input channels but input has {c}"
            )));
        }
        if geom.stride.contains(&0) {
            return Err(Error::InvalidArgument("conv3d stride must be >= 1".into()));
        }
        let sizes = [d, h, w];
        let ks = [kd, kh, kw];
        let mut output = [0; 3];
        for axis in 0..3 {
            let padded = sizes[axis] + 2 * geom.padding[axis];
            if padded < ks[axis] {
                return Err(Error::Shape(format!(
                    "conv3d kernel extent {} exceeds padded input extent {} on axis {axis}",
                    ks[axis], padded
                )));
            }
            output[axis] = (padded - ks[axis]) / geom.stride[axis] + 1;
        }
        Ok(ConvDims {
            n,
            c,
            f,
            input: sizes,
            kernel: ks,
            output,
            geom,
        })
    }

    pub fn output_shape(&self) -> Vec<usize> {
        vec![self.n, self.f, self.output[0], self.output[1], self.output[2]]
    }

    fn in_vox(&self) -> usize {
        self.input.iter().product()
    }

    fn out_vox(&self) -> usize {
        self.output.iter().product()
    }

    fn taps(&self) -> usize {
        self.kernel.iter().product()
    }

    /// Rows of the im2col matrix (`C * kd * kh * kw`).
    fn rows(&self) -> usize {
        self.c * self.taps()
    }

    /// Output depth slabs per im2col chunk, bounding scratch memory.
    fn slab_depth(&self) -> usize {
        const MAX_SCRATCH: usize = 1 << 22;
        let per_slab = self.rows() * self.output[1] * self.output[2];
        (MAX_SCRATCH / per_slab.max(1)).clamp(1, self.output[0])
    }
}

/// Output indices `o` in `[lo, hi)` whose source `o*stride + k - pad` lies inside `[0, len)`.
#[inline]
fn valid_range(k: usize, stride: usize, pad: usize, len: usize, out_len: usize) -> (usize, usize) {
    let lo = if pad <= k { 0 } else { (pad - k).div_ceil(stride) };
    if len + pad <= k {
        return (0, 0);
    }
    let hi = ((len - 1 + pad - k) / stride + 1).min(out_len);
    (lo.min(hi), hi)
}

/// Fills `cols` (`rows x (slab * OH * OW)`) for output depths `[od0, od1)` of one sample.
fn im2col<T: Scalar>(dims: &ConvDims, sample: &[T], od0: usize, od1: usize, cols: &mut [T]) {
    let [d, h, w] = dims.input;
    let [_, kh, kw] = dims.kernel;
    let [_, oh_n, ow_n] = dims.output;
    let [sd, sh, sw] = dims.geom.stride;
    let [pd, ph, pw] = dims.geom.padding;
    let plane = (od1 - od0) * oh_n * ow_n;
    let in_vox = dims.in_vox();
    cols.par_chunks_mut(plane).enumerate().for_each(|(row, dst)| {
        let c = row / dims.taps();
        let tap = row % dims.taps();
        let (a, b, e) = (tap / (kh * kw), (tap / kw) % kh, tap % kw);
        let src = &sample[c * in_vox..(c + 1) * in_vox];
        dst.fill(T::zero());
        let (d_lo, d_hi) = valid_range(a, sd, pd, d, od1);
        let (h_lo, h_hi) = valid_range(b, sh, ph, h, oh_n);
        let (w_lo, w_hi) = valid_range(e, sw, pw, w, ow_n);
        if w_lo >= w_hi {
            return;
        }
        for od in d_lo.max(od0)..d_hi {
            let id = od * sd + a - pd;
            for oh in h_lo..h_hi {
                let ih = oh * sh + b - ph;
                let base = (id * h + ih) * w;
                let out = &mut dst[((od - od0) * oh_n + oh) * ow_n..][..ow_n];
                if sw == 1 {
                    let iw0 = w_lo + e - pw;
                    out[w_lo..w_hi].copy_from_slice(&src[base + iw0..base + iw0 + (w_hi - w_lo)]);
                } else {
                    for ow in w_lo..w_hi {
                        out[ow] = src[base + ow * sw + e - pw];
                    }
                }
            }
        }
    });
}

/// Adjoint of [`im2col`]: accumulates `cols` back into the sample gradient.
fn col2im<T: Scalar>(dims: &ConvDims, cols: &[T], od0: usize, od1: usize, grad: &mut [T]) {
    let [d, h, w] = dims.input;
    let [_, kh, kw] = dims.kernel;
    let [_, oh_n, ow_n] = dims.output;
    let [sd, sh, sw] = dims.geom.stride;
    let [pd, ph, pw] = dims.geom.padding;
    let plane = (od1 - od0) * oh_n * ow_n;
    let taps = dims.taps();
    grad.par_chunks_mut(dims.in_vox()).enumerate().for_each(|(c, dst)| {
        for tap in 0..taps {
            let (a, b, e) = (tap / (kh * kw), (tap / kw) % kh, tap % kw);
            let src = &cols[(c * taps + tap) * plane..][..plane];
            let (d_lo, d_hi) = valid_range(a, sd, pd, d, od1);
            let (h_lo, h_hi) = valid_range(b, sh, ph, h, oh_n);
            let (w_lo, w_hi) = valid_range(e, sw, pw, w, ow_n);
            if w_lo >= w_hi {
                continue;
            }
            for od in d_lo.max(od0)..d_hi {
                let id = od * sd + a - pd;
                for oh in h_lo..h_hi {
                    let ih = oh * sh + b - ph;
                    let base = (id * h + ih) * w;
                    let row = &src[((od - od0) * oh_n + oh) * ow_n..][..ow_n];
                    if sw == 1 {
                        let iw0 = w_lo + e - pw;
                        for (g, &v) in dst[base + iw0..base + iw0 + (w_hi - w_lo)]
                            .iter_mut()
                            .zip(&row[w_lo..w_hi])
                        {
                            *g += v;
                        }
                    } else {
                        for ow in w_lo..w_hi {
                            dst[base + ow * sw + e - pw] += row[ow];
                        }
                    }
                }
            }
        }
    });
}

/// Column block width; one block of the im2col matrix stays cache resident.
const BLOCK: usize = 256;

#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut lanes = [T::zero(); 8];
    let (ac, bc) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: T = ac.remainder().iter().zip(bc.remainder()).map(|(&x, &y)| x * y).sum();
    for (x, y) in ac.zip(bc) {
        for i in 0..8 {
            lanes[i] += x[i] * y[i];
        }
    }
    lanes.iter().copied().sum::<T>() + tail
}

/// `out[m, j] += sum_k a[m, k] * b[k, b_off + j]` for `j < p`, where `b` rows have
/// stride `b_stride` and `out` rows have stride `out_stride` starting at `out_off`.
#[allow(clippy::too_many_arguments)]
fn gemm_acc<T: Scalar>(
    a: &[T],
    k: usize,
    b: &[T],
    b_stride: usize,
    b_off: usize,
    p: usize,
    out: &mut [T],
    out_stride: usize,
    out_off: usize,
) {
    let n_blocks = p.div_ceil(BLOCK);
    let mut blocks: Vec<Vec<&mut [T]>> = (0..n_blocks).map(|_| Vec::new()).collect();
    for row in out.chunks_mut(out_stride) {
        for (bi, chunk) in row[out_off..out_off + p].chunks_mut(BLOCK).enumerate() {
            blocks[bi].push(chunk);
        }
    }
    blocks.into_par_iter().enumerate().for_each(|(bi, mut rows)| {
        let start = b_off + bi * BLOCK;
        for (q, quad) in rows.chunks_mut(MR).enumerate() {
            let m0 = q * MR;
            if quad.len() == MR {
                kernel_rows(a, k, b, b_stride, start, m0, quad);
            } else {
                for (r, dst) in quad.iter_mut().enumerate() {
                    axpy_rows(&a[(m0 + r) * k..(m0 + r + 1) * k], b, b_stride, start, dst);
                }
            }
        }
    });
}

const MR: usize = 4;
const NR: usize = 8;

/// `dst[j] += sum_k coeffs[k] * b[k * stride + start + j]`.
fn axpy_rows<T: Scalar>(coeffs: &[T], b: &[T], b_stride: usize, start: usize, dst: &mut [T]) {
    let width = dst.len();
    for (ki, &coef) in coeffs.iter().enumerate() {
        if coef == T::zero() {
            continue;
        }
        let src = &b[ki * b_stride + start..][..width];
        for (o, &s) in dst.iter_mut().zip(src) {
            *o += coef * s;
        }
    }
}

/// Register-tiled update of `MR` output rows, `NR` columns at a time.
fn kernel_rows<T: Scalar>(a: &[T], k: usize, b: &[T], b_stride: usize, start: usize, m0: usize, rows: &mut [&mut [T]]) {
    let width = rows[0].len();
    let full = width - width % NR;
    let coeffs: [&[T]; MR] = std::array::from_fn(|r| &a[(m0 + r) * k..(m0 + r + 1) * k]);
    for j in (0..full).step_by(NR) {
        let mut acc = [[T::zero(); NR]; MR];
        for ki in 0..k {
            let src: &[T; NR] = b[ki * b_stride + start + j..][..NR].try_into().expect("NR wide");
            for r in 0..MR {
                let c = coeffs[r][ki];
                for (x, &s) in acc[r].iter_mut().zip(src) {
                    *x += c * s;
                }
            }
        }
        for r in 0..MR {
            for (o, x) in rows[r][j..j + NR].iter_mut().zip(acc[r]) {
                *o += x;
            }
        }
    }
    if full < width {
        for (r, dst) in rows.iter_mut().enumerate() {
            axpy_rows(coeffs[r], b, b_stride, start + full, &mut dst[full..]);
        }
    }
}

pub(crate) fn conv3d_forward<T: Scalar>(
    dims: &ConvDims,
    input: &[T],
    kernel: &[T],
    bias: Option<&[T]>,
) -> Vec<T> {
    let out_vox = dims.out_vox();
    let mut out = vec![T::zero(); dims.n * dims.f * out_vox];
    let slab = dims.slab_depth();
    let plane_per_depth = dims.output[1] * dims.output[2];
    let rows = dims.rows();
    let mut cols = Vec::new();
    for n in 0..dims.n {
        let sample = &input[n * dims.c * dims.in_vox()..(n + 1) * dims.c * dims.in_vox()];
        let out_n = &mut out[n * dims.f * out_vox..(n + 1) * dims.f * out_vox];
        if let Some(bias) = bias {
            for (row, &b) in out_n.chunks_mut(out_vox).zip(bias) {
                row.fill(b);
            }
        }
        for od0 in (0..dims.output[0]).step_by(slab) {
            let od1 = (od0 + slab).min(dims.output[0]);
            let p = (od1 - od0) * plane_per_depth;
            cols.resize(rows * p, T::zero());
            im2col(dims, sample, od0, od1, &mut cols[..rows * p]);
            gemm_acc(kernel, rows, &cols[..rows * p], p, 0, p, out_n, out_vox, od0 * plane_per_depth);
        }
    }
    out
}

pub(crate) struct ConvGrads<T> {
    pub input: Option<Vec<T>>,
    pub kernel: Option<Vec<T>>,
    pub bias: Option<Vec<T>>,
}

pub(crate) fn conv3d_backward<T: Scalar>(
    dims: &ConvDims,
    input: &[T],
    kernel: &[T],
    grad_out: &[T],
    need: [bool; 3],
) -> ConvGrads<T> {
    let out_vox = dims.out_vox();
    let in_len = dims.c * dims.in_vox();
    let rows = dims.rows();
    let slab = dims.slab_depth();
    let plane_per_depth = dims.output[1] * dims.output[2];

    let mut grad_in = need[0].then(|| vec![T::zero(); dims.n * in_len]);
    let mut grad_k = need[1].then(|| vec![T::zero(); dims.f * rows]);
    let grad_b = need[2].then(|| {
        (0..dims.f)
            .map(|f| {
                let mut acc = T::zero();
                for n in 0..dims.n {
                    let base = (n * dims.f + f) * out_vox;
                    acc += grad_out[base..base + out_vox].iter().copied().sum::<T>();
                }
                acc
            })
            .collect()
    });

    // `[rows, F]` so each im2col row's coefficients are contiguous.
    let kernel_t: Vec<T> = if need[0] {
        (0..rows * dims.f).map(|i| kernel[(i % dims.f) * rows + i / dims.f]).collect()
    } else {
        Vec::new()
    };
    let mut cols = Vec::new();
    let mut gcols = Vec::new();
    for n in 0..dims.n {
        let sample = &input[n * in_len..(n + 1) * in_len];
        let go_n = &grad_out[n * dims.f * out_vox..(n + 1) * dims.f * out_vox];
        for od0 in (0..dims.output[0]).step_by(slab) {
            let od1 = (od0 + slab).min(dims.output[0]);
            let p = (od1 - od0) * plane_per_depth;
            let off = od0 * plane_per_depth;
            if let Some(gk) = grad_k.as_mut() {
                cols.resize(rows * p, T::zero());
                im2col(dims, sample, od0, od1, &mut cols[..rows * p]);
                let cols = &cols[..rows * p];
                gk.par_chunks_mut(rows).enumerate().for_each(|(f, gk_row)| {
                    let go_row = &go_n[f * out_vox + off..][..p];
                    for j in (0..p).step_by(BLOCK) {
                        let w = BLOCK.min(p - j);
                        for (r, g) in gk_row.iter_mut().enumerate() {
                            *g += dot(&go_row[j..j + w], &cols[r * p + j..][..w]);
                        }
                    }
                });
            }
            if let Some(gi) = grad_in.as_mut() {
                gcols.resize(rows * p, T::zero());
                let gcols = &mut gcols[..rows * p];
                gcols.fill(T::zero());
                gemm_acc(&kernel_t, dims.f, go_n, out_vox, off, p, gcols, p, 0);
                col2im(dims, gcols, od0, od1, &mut gi[n * in_len..(n + 1) * in_len]);
            }
        }
    }
    ConvGrads {
        input: grad_in,
        kernel: grad_k,
        bias: grad_b,
    }
}
