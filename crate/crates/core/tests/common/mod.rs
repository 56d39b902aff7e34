//! Reference implementations used as test oracles. Written for clarity, not
//! speed, and independent of the library's own kernels.
#![allow(dead_code)]

/// Published confusion matrix, rows true HC/MMD/ICSD/Stroke, columns predicted.
pub const FIG6: [[i64; 4]; 4] = [[38, 2, 0, 0], [2, 35, 1, 0], [0, 0, 2, 1], [0, 0, 0, 2]];

/// Published metric table: one row per metric in `MetricRow::NAMES` order,
/// columns HC, MMD, ICSD, Stroke, average.
pub const TABLE_I: [[f64; 5]; 7] = [
    [95.18, 93.97, 97.60, 98.80, 96.38],
    [95.00, 92.10, 66.66, 100.0, 88.44],
    [95.34, 95.55, 98.75, 98.76, 97.10],
    [95.00, 94.59, 66.66, 66.66, 80.73],
    [0.046, 0.044, 0.012, 0.012, 0.028],
    [0.050, 0.079, 0.333, 0.0, 0.115],
    [0.903, 0.878, 0.654, 0.811, 0.812],
];

pub const TABLE_I_TOLERANCE: f64 = 0.01;

/// Direct seven-loop convolution of `[N, C, D, H, W]` with `[F, C, kd, kh, kw]`.
pub fn naive_conv3d(
    input: &[f64],
    ishape: [usize; 5],
    kernel: &[f64],
    kshape: [usize; 5],
    bias: Option<&[f64]>,
    stride: [usize; 3],
    padding: [usize; 3],
) -> (Vec<f64>, [usize; 5]) {
    let [n, c, d, h, w] = ishape;
    let [f, kc, kd, kh, kw] = kshape;
    assert_eq!(c, kc);
    let od = (d + 2 * padding[0] - kd) / stride[0] + 1;
    let oh = (h + 2 * padding[1] - kh) / stride[1] + 1;
    let ow = (w + 2 * padding[2] - kw) / stride[2] + 1;
    let mut out = vec![0.0; n * f * od * oh * ow];
    for b in 0..n {
        for o in 0..f {
            for z in 0..od {
                for y in 0..oh {
                    for x in 0..ow {
                        let mut acc = bias.map_or(0.0, |bv| bv[o]);
                        for ch in 0..c {
                            for a in 0..kd {
                                for bb in 0..kh {
                                    for cc in 0..kw {
                                        let iz = (z * stride[0] + a) as isize - padding[0] as isize;
                                        let iy = (y * stride[1] + bb) as isize - padding[1] as isize;
                                        let ix = (x * stride[2] + cc) as isize - padding[2] as isize;
                                        if iz < 0 || iy < 0 || ix < 0 || iz >= d as isize || iy >= h as isize || ix >= w as isize {
                                            continue;
                                        }
                                        let (iz, iy, ix) = (iz as usize, iy as usize, ix as usize);
                                        let iv = input[(((b * c + ch) * d + iz) * h + iy) * w + ix];
                                        let kv = kernel[(((o * c + ch) * kd + a) * kh + bb) * kw + cc];
                                        acc += iv * kv;
                                    }
                                }
                            }
                        }
                        out[(((b * f + o) * od + z) * oh + y) * ow + x] = acc;
                    }
                }
            }
        }
    }
    (out, [n, f, od, oh, ow])
}

/// `(bias, sd, low, high)` of `true - pred` with the sample (n - 1) sd and a
/// 1.96 multiplier, computed from explicit sums.
pub fn oracle_bland_altman(pairs: &[(f64, f64)]) -> (f64, f64, f64, f64) {
    let n = pairs.len() as f64;
    let mut sum = 0.0;
    for (t, p) in pairs {
        sum += t - p;
    }
    let bias = sum / n;
    let mut ss = 0.0;
    for (t, p) in pairs {
        let e = (t - p) - bias;
        ss += e * e;
    }
    let sd = (ss / (n - 1.0)).sqrt();
    (bias, sd, bias - 1.96 * sd, bias + 1.96 * sd)
}

/// Pearson r via the raw-moment formula, after shifting both coordinates by
/// their first value (r is shift invariant) to limit cancellation.
pub fn oracle_pearson(pairs: &[(f64, f64)]) -> f64 {
    let (x0, y0) = pairs[0];
    let n = pairs.len() as f64;
    let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(x, y) in pairs {
        let (x, y) = (x - x0, y - y0);
        sx += x;
        sy += y;
        sxx += x * x;
        syy += y * y;
        sxy += x * y;
    }
    (n * sxy - sx * sy) / ((n * sxx - sx * sx) * (n * syy - sy * sy)).sqrt()
}

/// RMSE over voxels with `mask[i]` divided by the mean reference over the same voxels.
pub fn oracle_nrmse(reference: &[f32], pred: &[f32], mask: &[bool]) -> f64 {
    let mut n = 0.0;
    let mut se = 0.0;
    let mut total = 0.0;
    for i in 0..reference.len() {
        if mask[i] {
            n += 1.0;
            let d = reference[i] as f64 - pred[i] as f64;
            se += d * d;
            total += reference[i] as f64;
        }
    }
    (se / n).sqrt() / (total / n)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

/// Small deterministic generator for tests that must not depend on the
/// library's RNG streams (SplitMix64).
pub struct SplitMix(pub u64);

impl SplitMix {
    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }

    /// Uniform integer in `lo..=hi`.
    pub fn int(&mut self, lo: usize, hi: usize) -> usize {
        lo + (self.next_u64() % (hi - lo + 1) as u64) as usize
    }
}
