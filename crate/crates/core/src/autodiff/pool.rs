//! Pooling, upsampling and channel-reduction kernels on `[N, C, D, H, W]` data.

use crate::error::{Error, Result};
use crate::tensor::Scalar;

pub(crate) fn pooled_dims(spatial: [usize; 3], window: [usize; 3]) -> Result<[usize; 3]> {
    let mut out = [0; 3];
    for axis in 0..3 {
        if window[axis] == 0 {
            return Err(Error::InvalidArgument("pooling window must be >= 1".into()));
        }
        if !spatial[axis].is_multiple_of(window[axis]) {
            return Err(Error::Shape(format!(
                "pooling window {:?} does not divide spatial dims {:?}",
                window, spatial
            )));
        }
        out[axis] = spatial[axis] / window[axis];
    }
    Ok(out)
}

/// Visits every window: `f(output_index, input_indices_in_scan_order)`.
fn for_each_window(planes: usize, spatial: [usize; 3], window: [usize; 3], mut f: impl FnMut(usize, &[usize])) {
    let [d, h, w] = spatial;
    let [wd, wh, ww] = window;
    let [od, oh, ow] = [d / wd, h / wh, w / ww];
    let mut idx = Vec::with_capacity(wd * wh * ww);
    let mut o = 0;
    for plane in 0..planes {
        let base = plane * d * h * w;
        for z in 0..od {
            for y in 0..oh {
                for x in 0..ow {
                    idx.clear();
                    for a in 0..wd {
                        for b in 0..wh {
                            let row = base + ((z * wd + a) * h + y * wh + b) * w + x * ww;
                            idx.extend(row..row + ww);
                        }
                    }
                    f(o, &idx);
                    o += 1;
                }
            }
        }
    }
}

/// Max pooling with stride equal to the window. Ties resolve to the first voxel in scan order.
pub(crate) fn maxpool_forward<T: Scalar>(
    input: &[T],
    planes: usize,
    spatial: [usize; 3],
    window: [usize; 3],
) -> (Vec<T>, Vec<usize>) {
    let out_len = planes * (input.len() / planes) / window.iter().product::<usize>();
    let mut out = vec![T::zero(); out_len];
    let mut arg = vec![0usize; out_len];
    for_each_window(planes, spatial, window, |o, idx| {
        let mut best = idx[0];
        for &i in &idx[1..] {
            if input[i] > input[best] {
                best = i;
            }
        }
        out[o] = input[best];
        arg[o] = best;
    });
    (out, arg)
}

pub(crate) fn avgpool_forward<T: Scalar>(input: &[T], planes: usize, spatial: [usize; 3], window: [usize; 3]) -> Vec<T> {
    let vol: usize = window.iter().product();
    let inv = T::one() / T::of_f64(vol as f64);
    let mut out = vec![T::zero(); input.len() / vol];
    for_each_window(planes, spatial, window, |o, idx| {
        let mut acc = T::zero();
        for &i in idx {
            acc += input[i];
        }
        out[o] = acc * inv;
    });
    out
}

pub(crate) fn avgpool_backward<T: Scalar>(
    grad_out: &[T],
    planes: usize,
    spatial: [usize; 3],
    window: [usize; 3],
) -> Vec<T> {
    let vol: usize = window.iter().product();
    let inv = T::one() / T::of_f64(vol as f64);
    let mut grad = vec![T::zero(); grad_out.len() * vol];
    for_each_window(planes, spatial, window, |o, idx| {
        let g = grad_out[o] * inv;
        for &i in idx {
            grad[i] += g;
        }
    });
    grad
}

/// Nearest-neighbour upsampling by integer factors.
pub(crate) fn upsample_forward<T: Scalar>(input: &[T], planes: usize, spatial: [usize; 3], factor: [usize; 3]) -> Vec<T> {
    let [d, h, w] = spatial;
    let [fd, fh, fw] = factor;
    let (od, oh, ow) = (d * fd, h * fh, w * fw);
    let mut out = Vec::with_capacity(planes * od * oh * ow);
    for plane in 0..planes {
        let src = &input[plane * d * h * w..(plane + 1) * d * h * w];
        for z in 0..od {
            for y in 0..oh {
                let row = &src[((z / fd) * h + y / fh) * w..][..w];
                for x in 0..ow {
                    out.push(row[x / fw]);
                }
            }
        }
    }
    out
}

pub(crate) fn upsample_backward<T: Scalar>(
    grad_out: &[T],
    planes: usize,
    spatial: [usize; 3],
    factor: [usize; 3],
) -> Vec<T> {
    let [d, h, w] = spatial;
    let [fd, fh, fw] = factor;
    let (od, oh, ow) = (d * fd, h * fh, w * fw);
    let mut grad = vec![T::zero(); planes * d * h * w];
    let mut it = grad_out.iter();
    for plane in 0..planes {
        let dst = &mut grad[plane * d * h * w..(plane + 1) * d * h * w];
        for z in 0..od {
            for y in 0..oh {
                let base = ((z / fd) * h + y / fh) * w;
                for x in 0..ow {
                    dst[base + x / fw] += *it.next().expect("gradient length");
                }
            }
        }
    }
    grad
}

/// Per-plane maximum; returns values and flat argmax indices (first occurrence).
pub(crate) fn plane_max<T: Scalar>(input: &[T], planes: usize) -> (Vec<T>, Vec<usize>) {
    let len = input.len() / planes;
    let mut out = Vec::with_capacity(planes);
    let mut arg = Vec::with_capacity(planes);
    for p in 0..planes {
        let base = p * len;
        let mut best = base;
        for i in base + 1..base + len {
            if input[i] > input[best] {
                best = i;
            }
        }
        out.push(input[best]);
        arg.push(best);
    }
    (out, arg)
}

/// Reduction across the channel axis for every voxel: `[N, C, S] -> [N, 1, S]`.
pub(crate) fn channel_mean<T: Scalar>(input: &[T], n: usize, c: usize, vox: usize) -> Vec<T> {
    let inv = T::one() / T::of_f64(c as f64);
    let mut out = vec![T::zero(); n * vox];
    for s in 0..n {
        let dst = &mut out[s * vox..(s + 1) * vox];
        for ch in 0..c {
            let src = &input[(s * c + ch) * vox..][..vox];
            for (o, &v) in dst.iter_mut().zip(src) {
                *o += v;
            }
        }
        for o in dst.iter_mut() {
            *o *= inv;
        }
    }
    out
}

pub(crate) fn channel_max<T: Scalar>(input: &[T], n: usize, c: usize, vox: usize) -> (Vec<T>, Vec<usize>) {
    let mut out = Vec::with_capacity(n * vox);
    let mut arg = Vec::with_capacity(n * vox);
    for s in 0..n {
        for v in 0..vox {
            let mut best = s * c * vox + v;
            for ch in 1..c {
                let i = (s * c + ch) * vox + v;
                if input[i] > input[best] {
                    best = i;
                }
            }
            out.push(input[best]);
            arg.push(best);
        }
    }
    (out, arg)
}
