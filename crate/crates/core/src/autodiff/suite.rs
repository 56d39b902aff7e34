//! Registry of finite-difference checks covering every differentiable tape
//! op and the full multi-task loss graph.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{grad_check, ConvGeometry, Tape, Var};
use crate::error::{Error, Result};
use crate::label::ClassLabel;
use crate::losses::{self, LossWeights, SsimConstants};
use crate::networks::{self, Batch, DiagnosisConfig, ModelConfig, MultiTaskModel, SynthesisConfig};
use crate::tensor::Tensor;

pub const OP_TOLERANCE: f64 = 1e-4;
pub const MODEL_TOLERANCE: f64 = 1e-3;
/// Random shapes tried per op.
pub const SHAPES_PER_OP: usize = 3;
/// Op inputs keep kinks and ties at least 1e-2 away, so a large step is
/// safe and keeps roundoff far below the tolerance.
const EPS: f64 = 1e-4;
/// Step sizes tried per probed coordinate; a ReLU or max kink within one
/// step corrupts that estimate but not all three.
const MODEL_STEPS: [f64; 3] = [1e-5, 2e-6, 4e-7];

/// One line of the check table.
#[derive(Debug, Clone, Serialize)]
pub struct CheckRow {
    pub name: String,
    pub shape: Vec<usize>,
    pub rel_err: f64,
    pub tolerance: f64,
}

impl CheckRow {
    pub fn passed(&self) -> bool {
        self.rel_err < self.tolerance
    }
}

type Build = fn(&mut ChaCha8Rng) -> Case;

type Objective = Box<dyn Fn(&Tape<f64>, Var) -> Result<Var>>;

/// A generated input and the objective that consumes it.
struct Case {
    x: Tensor<f64>,
    f: Objective,
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape product matches")
}

/// Values with magnitude in `[0.1, 1]` and random sign, away from kinks at zero.
fn signed(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.gen_range(0.1..1.0);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape product matches")
}

/// Distinct values at least `1 / n` apart in random order, so max-type ops
/// never see a tie within one finite-difference step.
fn distinct(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    use rand::seq::SliceRandom;
    let n: usize = shape.iter().product();
    let mut data: Vec<f64> = (0..n).map(|i| -1.0 + (2 * i + 1) as f64 / n as f64).collect();
    data.shuffle(rng);
    Tensor::new(shape.to_vec(), data).expect("shape product matches")
}

fn vol_shape(rng: &mut ChaCha8Rng, max_c: usize, max_side: usize) -> Vec<usize> {
    vec![
        rng.gen_range(1..=2),
        rng.gen_range(1..=max_c),
        rng.gen_range(2..=max_side),
        rng.gen_range(2..=max_side),
        rng.gen_range(2..=max_side),
    ]
}

fn flat_shape(rng: &mut ChaCha8Rng) -> Vec<usize> {
    vec![rng.gen_range(1..=3), rng.gen_range(2..=5)]
}

/// `sum(y * r)` for a fixed random `r`, so that linear ops get a non-uniform upstream gradient.
fn project(tape: &Tape<f64>, y: Var, r: &Tensor<f64>) -> Result<Var> {
    let rv = tape.constant(r.clone());
    Ok(tape.sum_all(tape.mul(y, rv)?))
}

/// Builds a case whose output shape is only known after running `g` once.
fn case(rng: &mut ChaCha8Rng, x: Tensor<f64>, g: impl Fn(&Tape<f64>, Var) -> Result<Var> + 'static) -> Case {
    let out_shape = {
        let tape = Tape::new();
        let v = tape.constant(x.clone());
        let y = g(&tape, v).expect("generated case is well formed");
        tape.shape(y)
    };
    let r = signed(rng, &out_shape);
    Case {
        x,
        f: Box::new(move |tape, v| {
            let y = g(tape, v)?;
            project(tape, y, &r)
        }),
    }
}

macro_rules! unary_case {
    ($name:ident, $gen:expr, |$t:ident, $v:ident| $body:expr) => {
        fn $name(rng: &mut ChaCha8Rng) -> Case {
            let shape = flat_shape(rng);
            #[allow(clippy::redundant_closure_call)]
            let x = ($gen)(rng, &shape);
            case(rng, x, |$t: &Tape<f64>, $v: Var| Ok($body))
        }
    };
}

unary_case!(c_scale, signed, |t, v| t.scale(v, -1.7));
unary_case!(c_add_scalar, signed, |t, v| t.add_scalar(v, 0.3));
unary_case!(c_relu, signed, |t, v| t.relu(v));
unary_case!(c_sigmoid, signed, |t, v| t.sigmoid(v));
unary_case!(c_square, signed, |t, v| t.square(v));
unary_case!(c_abs, signed, |t, v| t.abs(v));
unary_case!(c_log10, |r, s| uniform(r, s, 0.2, 3.0), |t, v| t.log10(v));
unary_case!(c_clamp_min, signed, |t, v| t.clamp_min(v, 0.05));
unary_case!(c_clamp_max, signed, |t, v| t.clamp_max(v, -0.05));
unary_case!(c_softmax, signed, |t, v| t.softmax(v)?);
unary_case!(c_mean_per_sample, signed, |t, v| t.mean_per_sample(v));

fn c_sum_all(rng: &mut ChaCha8Rng) -> Case {
    let shape = flat_shape(rng);
    let x = signed(rng, &shape);
    case(rng, x, |t, v| Ok(t.square(t.sum_all(v))))
}

fn c_mean_all(rng: &mut ChaCha8Rng) -> Case {
    let shape = flat_shape(rng);
    let x = signed(rng, &shape);
    case(rng, x, |t, v| Ok(t.square(t.mean_all(v))))
}

fn binary(rng: &mut ChaCha8Rng, left: bool, op: fn(&Tape<f64>, Var, Var) -> Result<Var>) -> Case {
    let shape = flat_shape(rng);
    let x = signed(rng, &shape);
    let other = signed(rng, &shape);
    case(rng, x, move |t, v| {
        let o = t.constant(other.clone());
        if left {
            op(t, v, o)
        } else {
            op(t, o, v)
        }
    })
}

fn c_add_lhs(rng: &mut ChaCha8Rng) -> Case {
    binary(rng, true, |t, a, b| t.add(a, b))
}
fn c_add_rhs(rng: &mut ChaCha8Rng) -> Case {
    binary(rng, false, |t, a, b| t.add(a, b))
}
fn c_sub_lhs(rng: &mut ChaCha8Rng) -> Case {
    binary(rng, true, |t, a, b| t.sub(a, b))
}
fn c_sub_rhs(rng: &mut ChaCha8Rng) -> Case {
    binary(rng, false, |t, a, b| t.sub(a, b))
}
fn c_mul_lhs(rng: &mut ChaCha8Rng) -> Case {
    binary(rng, true, |t, a, b| t.mul(a, b))
}
fn c_mul_rhs(rng: &mut ChaCha8Rng) -> Case {
    binary(rng, false, |t, a, b| t.mul(a, b))
}

fn c_reshape(rng: &mut ChaCha8Rng) -> Case {
    let shape = vol_shape(rng, 3, 3);
    let x = signed(rng, &shape);
    let total: usize = shape.iter().product();
    case(rng, x, move |t, v| t.reshape(v, vec![total]))
}

fn c_flatten(rng: &mut ChaCha8Rng) -> Case {
    let shape = vol_shape(rng, 3, 3);
    let x = signed(rng, &shape);
    case(rng, x, |t, v| t.flatten(v))
}

/// Random conv problem: `(input shape, kernel shape, geometry)`.
fn conv_problem(rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>, ConvGeometry) {
    let input = vol_shape(rng, 3, 5);
    let mut kernel = vec![rng.gen_range(1..=3), input[1]];
    let mut geom = ConvGeometry::unit();
    for a in 0..3 {
        let side = input[2 + a];
        let k = rng.gen_range(1..=side.min(3));
        kernel.push(k);
        geom.stride[a] = rng.gen_range(1..=2);
        geom.padding[a] = rng.gen_range(0..=k / 2 + 1).min(k - 1);
    }
    (input, kernel, geom)
}

fn c_conv_input(rng: &mut ChaCha8Rng) -> Case {
    let (is, ks, geom) = conv_problem(rng);
    let x = signed(rng, &is);
    let k = signed(rng, &ks);
    let b = signed(rng, &ks[..1]);
    case(rng, x, move |t, v| {
        let (kv, bv) = (t.constant(k.clone()), t.constant(b.clone()));
        t.conv3d(v, kv, Some(bv), geom)
    })
}

fn c_conv_kernel(rng: &mut ChaCha8Rng) -> Case {
    let (is, ks, geom) = conv_problem(rng);
    let input = signed(rng, &is);
    let k = signed(rng, &ks);
    case(rng, k, move |t, v| {
        let iv = t.constant(input.clone());
        t.conv3d(iv, v, None, geom)
    })
}

fn c_conv_bias(rng: &mut ChaCha8Rng) -> Case {
    let (is, ks, geom) = conv_problem(rng);
    let input = signed(rng, &is);
    let k = signed(rng, &ks);
    let b = signed(rng, &ks[..1]);
    case(rng, b, move |t, v| {
        let (iv, kv) = (t.constant(input.clone()), t.constant(k.clone()));
        t.conv3d(iv, kv, Some(v), geom)
    })
}

fn pool_problem(rng: &mut ChaCha8Rng) -> (Vec<usize>, [usize; 3]) {
    let win = [rng.gen_range(1..=2), rng.gen_range(1..=2), rng.gen_range(1..=2)];
    let mut shape = vol_shape(rng, 2, 2);
    for a in 0..3 {
        shape[2 + a] *= win[a];
    }
    (shape, win)
}

fn c_upsample(rng: &mut ChaCha8Rng) -> Case {
    let shape = vol_shape(rng, 2, 3);
    let factor = [rng.gen_range(1..=2), rng.gen_range(1..=2), rng.gen_range(1..=2)];
    let x = signed(rng, &shape);
    case(rng, x, move |t, v| t.upsample_nearest(v, factor))
}

fn c_maxpool(rng: &mut ChaCha8Rng) -> Case {
    let (shape, win) = pool_problem(rng);
    let x = distinct(rng, &shape);
    case(rng, x, move |t, v| t.maxpool3d(v, win))
}

fn c_avgpool(rng: &mut ChaCha8Rng) -> Case {
    let (shape, win) = pool_problem(rng);
    let x = signed(rng, &shape);
    case(rng, x, move |t, v| t.avgpool3d(v, win))
}

macro_rules! unary_vol_case {
    ($name:ident, |$t:ident, $v:ident| $body:expr) => {
        fn $name(rng: &mut ChaCha8Rng) -> Case {
            let shape = vol_shape(rng, 3, 3);
            let x = distinct(rng, &shape);
            case(rng, x, |$t: &Tape<f64>, $v: Var| Ok($body))
        }
    };
}

unary_vol_case!(c_global_avg, |t, v| t.global_avg_pool(v)?);
unary_vol_case!(c_global_max, |t, v| t.global_max_pool(v)?);
unary_vol_case!(c_channel_mean, |t, v| t.channel_mean(v)?);
unary_vol_case!(c_channel_max, |t, v| t.channel_max(v)?);


fn dense_problem(rng: &mut ChaCha8Rng) -> [Tensor<f64>; 3] {
    let (n, k, m) = (rng.gen_range(1..=3), rng.gen_range(1..=5), rng.gen_range(1..=4));
    [signed(rng, &[n, k]), signed(rng, &[k, m]), signed(rng, &[m])]
}

fn c_dense_input(rng: &mut ChaCha8Rng) -> Case {
    let [x, w, b] = dense_problem(rng);
    case(rng, x, move |t, v| {
        let (wv, bv) = (t.constant(w.clone()), t.constant(b.clone()));
        t.dense(v, wv, Some(bv))
    })
}

fn c_dense_weight(rng: &mut ChaCha8Rng) -> Case {
    let [x, w, _] = dense_problem(rng);
    case(rng, w, move |t, v| {
        let xv = t.constant(x.clone());
        t.dense(xv, v, None)
    })
}

fn c_dense_bias(rng: &mut ChaCha8Rng) -> Case {
    let [x, w, b] = dense_problem(rng);
    case(rng, b, move |t, v| {
        let (xv, wv) = (t.constant(x.clone()), t.constant(w.clone()));
        t.dense(xv, wv, Some(v))
    })
}

fn c_channel_gate_x(rng: &mut ChaCha8Rng) -> Case {
    let shape = vol_shape(rng, 3, 3);
    let x = signed(rng, &shape);
    let g = signed(rng, &shape[..2]);
    case(rng, x, move |t, v| {
        let gv = t.constant(g.clone());
        t.broadcast_mul_channels(v, gv)
    })
}

fn c_channel_gate_g(rng: &mut ChaCha8Rng) -> Case {
    let shape = vol_shape(rng, 3, 3);
    let x = signed(rng, &shape);
    let g = signed(rng, &shape[..2]);
    case(rng, g, move |t, v| {
        let xv = t.constant(x.clone());
        t.broadcast_mul_channels(xv, v)
    })
}

fn mask_shape(shape: &[usize]) -> Vec<usize> {
    vec![shape[0], 1, shape[2], shape[3], shape[4]]
}

fn c_spatial_mask_x(rng: &mut ChaCha8Rng) -> Case {
    let shape = vol_shape(rng, 3, 3);
    let x = signed(rng, &shape);
    let m = signed(rng, &mask_shape(&shape));
    case(rng, x, move |t, v| {
        let mv = t.constant(m.clone());
        t.broadcast_mul_spatial(v, mv)
    })
}

fn c_spatial_mask_m(rng: &mut ChaCha8Rng) -> Case {
    let shape = vol_shape(rng, 3, 3);
    let x = signed(rng, &shape);
    let m = signed(rng, &mask_shape(&shape));
    case(rng, m, move |t, v| {
        let xv = t.constant(x.clone());
        t.broadcast_mul_spatial(xv, v)
    })
}

fn c_concat(rng: &mut ChaCha8Rng) -> Case {
    let shape = vol_shape(rng, 3, 3);
    let x = signed(rng, &shape);
    let mut other_shape = shape.clone();
    other_shape[1] = rng.gen_range(1..=3);
    let other = signed(rng, &other_shape);
    let first = rng.gen_bool(0.5);
    case(rng, x, move |t, v| {
        let o = t.constant(other.clone());
        if first {
            t.concat_channels(&[v, o, v])
        } else {
            t.concat_channels(&[o, v])
        }
    })
}

fn ssim_case(rng: &mut ChaCha8Rng, wrt_x: bool) -> Case {
    let shape = vol_shape(rng, 1, 3);
    let a = uniform(rng, &shape, 0.0, 2.0);
    let b = uniform(rng, &shape, 0.0, 2.0);
    let n = shape[0];
    let c1 = vec![1e-2; n];
    let c2 = vec![3e-2; n];
    case(rng, a, move |t, v| {
        let o = t.constant(b.clone());
        if wrt_x {
            t.ssim_global(v, o, &c1, &c2)
        } else {
            t.ssim_global(o, v, &c1, &c2)
        }
    })
}

fn c_ssim_x(rng: &mut ChaCha8Rng) -> Case {
    ssim_case(rng, true)
}
fn c_ssim_y(rng: &mut ChaCha8Rng) -> Case {
    ssim_case(rng, false)
}

fn c_translation_loss(rng: &mut ChaCha8Rng) -> Case {
    let shape = vol_shape(rng, 1, 3);
    let pred = uniform(rng, &shape, 1.0, 2.0);
    // Offsets of at least 0.1 keep the absolute-error kink out of reach.
    let offset = signed(rng, &shape);
    let data = pred.data().iter().zip(offset.data()).map(|(p, o)| p + o).collect();
    let target = Tensor::new(shape.clone(), data).expect("same shape");
    let consts: Vec<SsimConstants> = target
        .data()
        .chunks(target.numel() / shape[0])
        .map(SsimConstants::from_reference)
        .collect::<Result<_>>()
        .expect("positive targets");
    let weights = LossWeights::default();
    Case {
        x: pred,
        f: Box::new(move |t, v| {
            let tv = t.constant(target.clone());
            Ok(losses::translation_loss(t, v, tv, &weights, &consts)?.total)
        }),
    }
}

fn c_classification_loss(rng: &mut ChaCha8Rng) -> Case {
    let n = rng.gen_range(1..=3);
    let logits = signed(rng, &[n, ClassLabel::COUNT]);
    let mut onehot = vec![0.0; n * ClassLabel::COUNT];
    for s in 0..n {
        onehot[s * ClassLabel::COUNT + rng.gen_range(0..ClassLabel::COUNT)] = 1.0;
    }
    let labels = Tensor::new(vec![n, ClassLabel::COUNT], onehot).expect("one-hot shape");
    Case {
        x: logits,
        f: Box::new(move |t, v| {
            let p = t.softmax(v)?;
            losses::classification_loss(t, p, &labels)
        }),
    }
}

const OPS: &[(&str, Build)] = &[
    ("add/lhs", c_add_lhs),
    ("add/rhs", c_add_rhs),
    ("sub/lhs", c_sub_lhs),
    ("sub/rhs", c_sub_rhs),
    ("mul/lhs", c_mul_lhs),
    ("mul/rhs", c_mul_rhs),
    ("scale", c_scale),
    ("add_scalar", c_add_scalar),
    ("relu", c_relu),
    ("sigmoid", c_sigmoid),
    ("square", c_square),
    ("abs", c_abs),
    ("log10", c_log10),
    ("clamp_min", c_clamp_min),
    ("clamp_max", c_clamp_max),
    ("softmax", c_softmax),
    ("sum_all", c_sum_all),
    ("mean_all", c_mean_all),
    ("mean_per_sample", c_mean_per_sample),
    ("reshape", c_reshape),
    ("flatten", c_flatten),
    ("conv3d/input", c_conv_input),
    ("conv3d/kernel", c_conv_kernel),
    ("conv3d/bias", c_conv_bias),
    ("upsample_nearest", c_upsample),
    ("maxpool3d", c_maxpool),
    ("avgpool3d", c_avgpool),
    ("global_avg_pool", c_global_avg),
    ("global_max_pool", c_global_max),
    ("channel_mean", c_channel_mean),
    ("channel_max", c_channel_max),
    ("dense/input", c_dense_input),
    ("dense/weight", c_dense_weight),
    ("dense/bias", c_dense_bias),
    ("channel_gate/x", c_channel_gate_x),
    ("channel_gate/gate", c_channel_gate_g),
    ("spatial_mask/x", c_spatial_mask_x),
    ("spatial_mask/mask", c_spatial_mask_m),
    ("concat_channels", c_concat),
    ("ssim_global/x", c_ssim_x),
    ("ssim_global/y", c_ssim_y),
    ("translation_loss", c_translation_loss),
    ("classification_loss", c_classification_loss),
];

/// Names of the registered op checks.
pub fn op_names() -> Vec<&'static str> {
    OPS.iter().map(|(n, _)| *n).collect()
}

/// Runs every op check whose name starts with `filter` on [`SHAPES_PER_OP`] random shapes.
pub fn check_ops(filter: &str, seed: u64) -> Result<Vec<CheckRow>> {
    let mut rows = Vec::new();
    for (i, (name, build)) in OPS.iter().enumerate() {
        if !name.starts_with(filter) {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(networks::params::derive_seed(seed, i as u64));
        for _ in 0..SHAPES_PER_OP {
            let c = build(&mut rng);
            let rel_err = grad_check(&c.f, &c.x, EPS)?;
            rows.push(CheckRow {
                name: name.to_string(),
                shape: c.x.shape().to_vec(),
                rel_err,
                tolerance: OP_TOLERANCE,
            });
        }
    }
    Ok(rows)
}

fn tiny_model_config(rng: &mut ChaCha8Rng) -> ModelConfig {
    let dims = [[8, 8, 4], [8, 4, 8], [4, 8, 8]][rng.gen_range(0..3)];
    ModelConfig {
        input_dims: dims,
        shared_stem: rng.gen_bool(0.5),
        stem_width: 3,
        synthesis: SynthesisConfig {
            base_width: 2,
            num_scales: 2,
            attention: crate::attention::AttentionConfig {
                reduction_ratio: 2,
                spatial_kernel: 3,
                ..Default::default()
            },
            ..Default::default()
        },
        diagnosis: DiagnosisConfig {
            input_downsample: 2,
            path_widths: [2, 2, 2],
            post_concat_widths: vec![3],
            fc_hidden: 3,
            ..Default::default()
        },
        ..Default::default()
    }
}

/// Coordinates probed per parameter tensor in the end-to-end check.
const PROBES_PER_PARAM: usize = 2;

/// Checks the gradient of the global loss with respect to model parameters,
/// on `trials` random tiny configurations and batches.
///
/// Probed coordinates are compared as vectors, `|a - n| / max(|a|, |n|)`:
/// many individual entries are far below the finite-difference noise floor
/// of a loss that includes a decibel term. Each coordinate keeps the step
/// whose estimate agrees best, so only a disagreement present at every step
/// size counts.
pub fn check_model(seed: u64, trials: usize) -> Result<Vec<CheckRow>> {
    let mut rows = Vec::new();
    for trial in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(networks::params::derive_seed(seed, 1000 + trial as u64));
        let cfg = tiny_model_config(&mut rng);
        let mut model = MultiTaskModel::<f64>::build(&cfg, rng.gen())?;
        // Zero-initialised biases put dead-channel pre-activations exactly on
        // the ReLU kink; probe at a generic point instead.
        for t in model.store_mut().tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v += rng.gen_range(-0.05..0.05));
        }
        let n = rng.gen_range(1..=2);
        let [d, h, w] = cfg.input_dims;
        let mri = uniform(&mut rng, &[n, cfg.in_channels, d, h, w], 0.0, 2.0);
        let pet = uniform(&mut rng, &[n, 1, d, h, w], 0.1, 2.0);
        let labels = (0..n).map(|_| ClassLabel::ALL[rng.gen_range(0..ClassLabel::COUNT)]).collect();
        let batch = Batch { mri, pet, labels };
        let weights = LossWeights::default();
        let analytic = networks::train_step(&model, &batch, &weights)?.grads;
        let ids: Vec<_> = model.store().ids().collect();
        let (mut a_vec, mut n_vec) = (Vec::new(), Vec::new());
        for (id, grad) in ids.into_iter().zip(&analytic) {
            for _ in 0..PROBES_PER_PARAM.min(grad.numel()) {
                let i = rng.gen_range(0..grad.numel());
                let orig = model.store().get(id).data()[i];
                let a = grad.data()[i];
                let mut best = f64::NAN;
                for h in MODEL_STEPS {
                    let mut eval = |v: f64| -> Result<f64> {
                        model.store_mut().get_mut(id).data_mut()[i] = v;
                        Ok(networks::evaluate_batch(&model, &batch, &weights)?.l_global)
                    };
                    let up = eval(orig + h)?;
                    let down = eval(orig - h)?;
                    model.store_mut().get_mut(id).data_mut()[i] = orig;
                    let numeric = (up - down) / (2.0 * h);
                    if best.is_nan() || (numeric - a).abs() < (best - a).abs() {
                        best = numeric;
                    }
                }
                a_vec.push(a);
                n_vec.push(best);
            }
        }
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let diff: Vec<f64> = a_vec.iter().zip(&n_vec).map(|(a, n)| a - n).collect();
        let worst = norm(&diff) / norm(&a_vec).max(norm(&n_vec)).max(1e-12);
        if !worst.is_finite() {
            return Err(Error::non_finite("end-to-end gradient check"));
        }
        rows.push(CheckRow {
            name: "l_global/model".into(),
            shape: batch.mri.shape().to_vec(),
            rel_err: worst,
            tolerance: MODEL_TOLERANCE,
        });
    }
    Ok(rows)
}

/// Which checks to run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Scope {
    All,
    Ops,
    Model,
    /// Op checks whose name starts with the given prefix.
    Op(String),
}

impl std::str::FromStr for Scope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(Scope::All),
            "ops" => Ok(Scope::Ops),
            "model" => Ok(Scope::Model),
            other if OPS.iter().any(|(n, _)| n.starts_with(other)) && !other.is_empty() => Ok(Scope::Op(other.into())),
            other => Err(Error::InvalidArgument(format!(
                "unknown gradcheck scope {other:?}; expected all, ops, model or an op name such as conv3d"
            ))),
        }
    }
}

/// Runs the checks selected by `scope`.
pub fn run_suite(scope: &Scope, seed: u64) -> Result<Vec<CheckRow>> {
    match scope {
        Scope::All => {
            let mut rows = check_ops("", seed)?;
            rows.extend(check_model(seed, SHAPES_PER_OP)?);
            Ok(rows)
        }
        Scope::Ops => check_ops("", seed),
        Scope::Model => check_model(seed, SHAPES_PER_OP),
        Scope::Op(prefix) => check_ops(prefix, seed),
    }
}
