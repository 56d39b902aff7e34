mod common;

use common::{naive_conv3d, SplitMix};
use mtnet_core::{ConvGeometry, Scalar, Tape, Tensor};
use proptest::prelude::*;

#[derive(Debug, Clone)]
struct Case {
    ishape: [usize; 5],
    kshape: [usize; 5],
    stride: [usize; 3],
    padding: [usize; 3],
    seed: u64,
}

fn case() -> impl Strategy<Value = Case> {
    (
        (1usize..=2, 1usize..=3, 2usize..=6, 2usize..=6, 2usize..=6),
        (1usize..=3, 1usize..=3, 1usize..=3, 1usize..=3),
        (1usize..=2, 1usize..=2, 1usize..=2),
        (0usize..=1, 0usize..=1, 0usize..=1),
        any::<u64>(),
    )
        .prop_filter_map("kernel larger than padded input", |((n, c, d, h, w), (f, kd, kh, kw), s, p, seed)| {
            let fits = kd <= d + 2 * p.0 && kh <= h + 2 * p.1 && kw <= w + 2 * p.2;
            fits.then_some(Case {
                ishape: [n, c, d, h, w],
                kshape: [f, c, kd, kh, kw],
                stride: [s.0, s.1, s.2],
                padding: [p.0, p.1, p.2],
                seed,
            })
        })
}

struct Data {
    input: Vec<f64>,
    kernel: Vec<f64>,
    bias: Vec<f64>,
}

fn data(c: &Case) -> Data {
    let mut rng = SplitMix(c.seed);
    Data {
        input: (0..c.ishape.iter().product()).map(|_| rng.range(-1.0, 1.0)).collect(),
        kernel: (0..c.kshape.iter().product()).map(|_| rng.range(-1.0, 1.0)).collect(),
        bias: (0..c.kshape[0]).map(|_| rng.range(-1.0, 1.0)).collect(),
    }
}

/// Forward output plus the gradients of `sum(y * r)` for input, kernel and bias.
fn library<T: Scalar>(c: &Case, d: &Data, r: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
    let tape = Tape::<T>::new();
    let x = tape.param(Tensor::from_f64(c.ishape.to_vec(), &d.input).unwrap());
    let k = tape.param(Tensor::from_f64(c.kshape.to_vec(), &d.kernel).unwrap());
    let b = tape.param(Tensor::from_f64(vec![c.kshape[0]], &d.bias).unwrap());
    let geom = ConvGeometry {
        stride: c.stride,
        padding: c.padding,
    };
    let y = tape.conv3d(x, k, Some(b), geom).unwrap();
    let shape = tape.value(y).shape().to_vec();
    let rv = tape.constant(Tensor::from_f64(shape, r).unwrap());
    let loss = tape.sum_all(tape.mul(y, rv).unwrap());
    let g = tape.backward(loss).unwrap();
    let out = tape.value(y).to_f64_vec();
    (out, g.get(x).unwrap().to_f64_vec(), g.get(k).unwrap().to_f64_vec(), g.get(b).unwrap().to_f64_vec())
}

/// Gradients of `sum(y * r)` accumulated voxel by voxel.
fn naive_grads(c: &Case, d: &Data, r: &[f64], oshape: [usize; 5]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let [n, ch, dd, h, w] = c.ishape;
    let [f, _, kd, kh, kw] = c.kshape;
    let [_, _, od, oh, ow] = oshape;
    let mut gx = vec![0.0; d.input.len()];
    let mut gk = vec![0.0; d.kernel.len()];
    let mut gb = vec![0.0; f];
    for b in 0..n {
        for o in 0..f {
            for z in 0..od {
                for y in 0..oh {
                    for x in 0..ow {
                        let rv = r[(((b * f + o) * od + z) * oh + y) * ow + x];
                        gb[o] += rv;
                        for ci in 0..ch {
                            for a in 0..kd {
                                for bb in 0..kh {
                                    for cc in 0..kw {
                                        let iz = (z * c.stride[0] + a) as isize - c.padding[0] as isize;
                                        let iy = (y * c.stride[1] + bb) as isize - c.padding[1] as isize;
                                        let ix = (x * c.stride[2] + cc) as isize - c.padding[2] as isize;
                                        if iz < 0 || iy < 0 || ix < 0 || iz >= dd as isize || iy >= h as isize || ix >= w as isize {
                                            continue;
                                        }
                                        let ii = (((b * ch + ci) * dd + iz as usize) * h + iy as usize) * w + ix as usize;
                                        let ki = (((o * ch + ci) * kd + a) * kh + bb) * kw + cc;
                                        gx[ii] += rv * d.kernel[ki];
                                        gk[ki] += rv * d.input[ii];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    (gx, gk, gb)
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn check(c: &Case) -> Result<(), TestCaseError> {
    let d = data(c);
    let (want, oshape) = naive_conv3d(&d.input, c.ishape, &d.kernel, c.kshape, Some(&d.bias), c.stride, c.padding);
    let mut rng = SplitMix(c.seed ^ 0xA5A5);
    let r: Vec<f64> = (0..want.len()).map(|_| rng.range(-1.0, 1.0)).collect();
    let (gx, gk, gb) = naive_grads(c, &d, &r, oshape);

    let (y, lx, lk, lb) = library::<f64>(c, &d, &r);
    prop_assert!(max_diff(&y, &want) < 1e-12);
    prop_assert!(max_diff(&lx, &gx) < 1e-12);
    prop_assert!(max_diff(&lk, &gk) < 1e-12);
    prop_assert!(max_diff(&lb, &gb) < 1e-12);

    let (y, lx, lk, lb) = library::<f32>(c, &d, &r);
    prop_assert!(max_diff(&y, &want) < 1e-4);
    prop_assert!(max_diff(&lx, &gx) < 1e-4);
    prop_assert!(max_diff(&lk, &gk) < 1e-4);
    prop_assert!(max_diff(&lb, &gb) < 1e-3);
    Ok(())
}

#[test]
fn twenty_fixed_configurations() {
    let mut rng = SplitMix(2);
    let mut done = 0;
    while done < 20 {
        let c = Case {
            ishape: [rng.int(1, 2), rng.int(1, 4), rng.int(2, 7), rng.int(2, 7), rng.int(2, 7)],
            kshape: [rng.int(1, 4), 0, rng.int(1, 3), rng.int(1, 3), rng.int(1, 3)],
            stride: [rng.int(1, 3), rng.int(1, 3), rng.int(1, 3)],
            padding: [rng.int(0, 2), rng.int(0, 2), rng.int(0, 2)],
            seed: rng.next_u64(),
        };
        let c = Case {
            kshape: [c.kshape[0], c.ishape[1], c.kshape[2], c.kshape[3], c.kshape[4]],
            ..c
        };
        if (0..3).any(|i| c.kshape[2 + i] > c.ishape[2 + i] + 2 * c.padding[i]) {
            continue;
        }
        check(&c).unwrap_or_else(|e| panic!("{c:?}: {e}"));
        done += 1;
    }
}

#[test]
fn one_by_one_kernel_is_channel_mixing() {
    let c = Case {
        ishape: [1, 2, 2, 2, 2],
        kshape: [1, 2, 1, 1, 1],
        stride: [1; 3],
        padding: [0; 3],
        seed: 0,
    };
    let d = Data {
        input: (0..16).map(|i| i as f64).collect(),
        kernel: vec![2.0, -1.0],
        bias: vec![0.5],
    };
    let (y, ..) = library::<f64>(&c, &d, &[0.0; 8]);
    let want: Vec<f64> = (0..8).map(|i| 2.0 * i as f64 - (i + 8) as f64 + 0.5).collect();
    assert_eq!(y, want);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn matches_direct_loops(c in case()) {
        check(&c)?;
    }
}
