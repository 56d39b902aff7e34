//! Acceptance gate: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Pass criterion numbers as arguments to run a subset.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::process::Command;
use std::time::{Duration, Instant};

use common::{naive_conv3d, oracle_bland_altman, oracle_nrmse, oracle_pearson, rel_err, SplitMix, FIG6, TABLE_I};
use mtnet_core::autodiff::suite::{run_suite, Scope, SHAPES_PER_OP};
use mtnet_core::data::augment::augment_eightfold;
use mtnet_core::data::mvol::{decode_volume, encode_volume};
use mtnet_core::data::{
    generate_phantom, leakage_violations, make_cv_folds, normalize_mean_one, split_train_val, write_phantom_dataset,
    BrainMask, Dataset, DatasetManifest, FoldOptions, Sample, SessionKind, Volume,
};
use mtnet_core::evaluation::{bland_altman, classification_metrics, evaluate_fold, nrmse_values, pearson, ConfusionMatrix4, EvalOptions, NrmseNorm};
use mtnet_core::losses::{self, LossReport, LossWeights, SsimConstants};
use mtnet_core::networks::{ModelConfig, MultiTaskModel};
use mtnet_core::trainer::{make_batch, run_cross_validation, train, CrossValOptions, ModelRunner, TrainConfig};
use mtnet_core::{ClassLabel, ConvGeometry, Tape, Tensor};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, budget: Duration) -> Result<(), String> {
    ensure(elapsed < budget, || format!("took {elapsed:.1?}, budget {budget:?}"))
}

fn c1_table() -> Outcome {
    let t = Instant::now();
    let cm = ConfusionMatrix4::from_rows(FIG6).map_err(|e| e.to_string())?;
    let m = classification_metrics(&cm).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    let mut checked = 0;
    for (metric, published) in TABLE_I.iter().enumerate() {
        for (col, &want) in published.iter().enumerate() {
            let row = if col < 4 { &m.per_class[col] } else { &m.average };
            let got = row.values()[metric];
            worst = worst.max((got - want).abs());
            checked += 1;
        }
    }
    within(t.elapsed(), Duration::from_secs(1))?;
    ensure(worst <= common::TABLE_I_TOLERANCE, || format!("max deviation {worst:.4}"))?;
    Ok(format!("{checked} values, max deviation {worst:.4}"))
}

fn c2_gradients() -> Outcome {
    let t = Instant::now();
    let rows = run_suite(&Scope::All, 2024).map_err(|e| e.to_string())?;
    within(t.elapsed(), Duration::from_secs(120))?;
    let failed: Vec<String> = rows.iter().filter(|r| !r.passed()).map(|r| format!("{} {:.2e}", r.name, r.rel_err)).collect();
    ensure(failed.is_empty(), || format!("failed: {}", failed.join(", ")))?;
    let mut names: Vec<&str> = rows.iter().map(|r| r.name.as_str()).collect();
    names.dedup();
    for n in &names {
        let count = rows.iter().filter(|r| r.name == *n).count();
        ensure(count >= SHAPES_PER_OP, || format!("{n} ran on {count} shapes"))?;
    }
    let op_worst = rows.iter().filter(|r| !r.name.contains("model")).map(|r| r.rel_err).fold(0.0, f64::max);
    let e2e_worst = rows.iter().filter(|r| r.name.contains("model")).map(|r| r.rel_err).fold(0.0, f64::max);
    Ok(format!(
        "{} checks over {} ops/graphs, worst op {op_worst:.1e}, worst end-to-end {e2e_worst:.1e}, {:.1?}",
        rows.len(),
        names.len(),
        t.elapsed()
    ))
}

fn c3_conv() -> Outcome {
    let t = Instant::now();
    let mut rng = SplitMix(33);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let ishape = [rng.int(1, 2), rng.int(1, 4), rng.int(3, 7), rng.int(3, 7), rng.int(3, 7)];
        let kshape = [rng.int(1, 4), ishape[1], rng.int(1, 3), rng.int(1, 3), rng.int(1, 3)];
        let stride = [rng.int(1, 3), rng.int(1, 3), rng.int(1, 3)];
        let padding = [rng.int(0, 2), rng.int(0, 2), rng.int(0, 2)];
        let input: Vec<f64> = (0..ishape.iter().product()).map(|_| rng.range(-1.0, 1.0)).collect();
        let kernel: Vec<f64> = (0..kshape.iter().product()).map(|_| rng.range(-1.0, 1.0)).collect();
        let bias: Vec<f64> = (0..kshape[0]).map(|_| rng.range(-1.0, 1.0)).collect();
        let (want, oshape) = naive_conv3d(&input, ishape, &kernel, kshape, Some(&bias), stride, padding);
        for precision in ["f64", "f32"] {
            let got: Vec<f64> = if precision == "f64" {
                run_conv::<f64>(&input, ishape, &kernel, kshape, &bias, stride, padding, oshape)?
            } else {
                run_conv::<f32>(&input, ishape, &kernel, kshape, &bias, stride, padding, oshape)?
            };
            let diff = got.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let tol = if precision == "f64" { 1e-5 } else { 1e-4 };
            ensure(diff < tol, || format!("{precision} {ishape:?} * {kshape:?} stride {stride:?} pad {padding:?}: diff {diff:.2e}"))?;
            if precision == "f64" {
                worst = worst.max(diff);
            }
        }
    }
    within(t.elapsed(), Duration::from_secs(60))?;
    Ok(format!("20 configurations, max abs diff {worst:.1e}"))
}

#[allow(clippy::too_many_arguments)]
fn run_conv<T: mtnet_core::Scalar>(
    input: &[f64],
    ishape: [usize; 5],
    kernel: &[f64],
    kshape: [usize; 5],
    bias: &[f64],
    stride: [usize; 3],
    padding: [usize; 3],
    oshape: [usize; 5],
) -> Result<Vec<f64>, String> {
    let tape = Tape::<T>::new();
    let err = |e: mtnet_core::Error| e.to_string();
    let x = tape.constant(Tensor::from_f64(ishape.to_vec(), input).map_err(err)?);
    let k = tape.constant(Tensor::from_f64(kshape.to_vec(), kernel).map_err(err)?);
    let b = tape.constant(Tensor::from_f64(vec![kshape[0]], bias).map_err(err)?);
    let y = tape.conv3d(x, k, Some(b), ConvGeometry { stride, padding }).map_err(err)?;
    let v = tape.value(y);
    ensure(v.shape() == oshape, || format!("shape {:?} vs oracle {oshape:?}", v.shape()))?;
    Ok(v.to_f64_vec())
}

fn c4_losses() -> Outcome {
    let err = |e: mtnet_core::Error| e.to_string();
    let mut rng = SplitMix(4);
    for _ in 0..20 {
        let n = rng.int(1, 3);
        let per = rng.int(8, 64);
        let x: Vec<f64> = (0..n * per).map(|_| rng.range(0.0, 3.0)).collect();
        let mut y = x.clone();
        let j = rng.int(0, y.len() - 1);
        y[j] += rng.range(0.01, 1.0);
        let shape = vec![n, 1, 1, 1, per];
        let consts: Vec<SsimConstants> = y.chunks(per).map(SsimConstants::from_reference).collect::<Result<_, _>>().map_err(err)?;

        let tape = Tape::<f64>::new();
        let xv = tape.constant(Tensor::from_f64(shape.clone(), &x).map_err(err)?);
        let yv = tape.constant(Tensor::from_f64(shape.clone(), &y).map_err(err)?);
        let s = tape.item(losses::ssim_global(&tape, xv, xv, &consts).map_err(err)?).map_err(err)?;
        ensure((s - 1.0).abs() < 1e-12, || format!("ssim(x, x) = {s}"))?;
        for (name, f) in [("mse", losses::mse::<f64> as fn(&Tape<f64>, _, _) -> _), ("mae", losses::mae::<f64>)] {
            let same = tape.item(f(&tape, xv, xv).map_err(err)?).map_err(err)?;
            let diff = tape.item(f(&tape, xv, yv).map_err(err)?).map_err(err)?;
            ensure(same == 0.0 && diff > 0.0, || format!("{name}: equal {same}, unequal {diff}"))?;
        }
        let w = LossWeights::with_weights([1.0, 0.0, 0.0, 0.0]);
        let terms = losses::translation_loss(&tape, xv, yv, &w, &consts).map_err(err)?;
        let (total, mse) = (tape.item(terms.total).map_err(err)?, tape.item(terms.mse).map_err(err)?);
        ensure((total - mse).abs() <= 1e-15 * mse.abs().max(1.0), || format!("translation (1,0,0,0) {total} vs mse {mse}"))?;

        let full = losses::translation_loss(&tape, xv, yv, &LossWeights::default(), &consts).map_err(err)?;
        let logits = tape.constant(Tensor::from_f64(vec![n, 4], &(0..n * 4).map(|_| rng.range(-2.0, 2.0)).collect::<Vec<_>>()).map_err(err)?);
        let probs = tape.softmax(logits).map_err(err)?;
        let labels = mtnet_core::label::one_hot::<f64>(&(0..n).map(|i| ClassLabel::ALL[i % 4]).collect::<Vec<_>>());
        let l_class = losses::classification_loss(&tape, probs, &labels).map_err(err)?;
        let g = losses::global_loss(&tape, full.total, l_class, 1.0).map_err(err)?;
        let (lt, lc, lg) = (
            tape.item(full.total).map_err(err)?,
            tape.item(l_class).map_err(err)?,
            tape.item(g).map_err(err)?,
        );
        ensure((lg - (lt + lc)).abs() < 1e-6, || format!("l_global {lg} vs {lt} + {lc}"))?;
    }
    let tape = Tape::<f64>::new();
    let uniform = tape.constant(Tensor::full(vec![3, 4], 0.25));
    let labels = mtnet_core::label::one_hot::<f64>(&[ClassLabel::Hc, ClassLabel::Icsd, ClassLabel::Stroke]);
    let l = tape.item(losses::classification_loss(&tape, uniform, &labels).map_err(err)?).map_err(err)?;
    let want = -(0.25f64).log10();
    ensure((l - want).abs() < 1e-9, || format!("uniform cross-entropy {l} vs {want}"))?;
    Ok(format!("20 random instances; uniform cross-entropy {l:.12}"))
}

fn fidelity(r: &LossReport, w: &LossWeights) -> f64 {
    w.w1 * r.mse + w.w2 * r.mae + w.w3 * (1.0 - r.ssim)
}

/// Relative decrease from `first` to `last`, measured against `|first|`.
fn reduction(first: f64, last: f64) -> f64 {
    (first - last) / first.abs()
}

const PHANTOM_DIMS: [usize; 3] = [32, 32, 16];
const PHANTOM_SUBJECTS: [usize; 4] = [4, 4, 1, 1];

fn c5_end_to_end() -> Outcome {
    let t = Instant::now();
    let err = |e: mtnet_core::Error| e.to_string();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let train_dir = dir.path().join("train");
    let test_dir = dir.path().join("test");
    write_phantom_dataset(&train_dir, PHANTOM_SUBJECTS, PHANTOM_DIMS, 500).map_err(err)?;
    write_phantom_dataset(&test_dir, PHANTOM_SUBJECTS, PHANTOM_DIMS, 9_000).map_err(err)?;
    let data = Dataset::load(train_dir.join("manifest.json")).map_err(err)?;
    let test = Dataset::load(test_dir.join("manifest.json")).map_err(err)?;
    ensure(data.manifest.subjects().len() == 10, || "expected 10 subjects".into())?;

    let cfg = TrainConfig {
        lr: 2e-4,
        batch_size: 4,
        max_epochs: 30,
        patience: 29,
        balance_classes: true,
        seed: 5,
        ..Default::default()
    };
    let split = split_train_val(&data.manifest, 0.2, cfg.seed).map_err(err)?;
    let (tr, va) = (data.select(&split.train), data.select(&split.val));
    let mut model = MultiTaskModel::<f32>::build(&ModelConfig::desk(PHANTOM_DIMS), cfg.seed).map_err(err)?;
    let history = train(&mut model, &tr, &va, &cfg, None, &mut |r| {
        eprintln!(
            "  [5] epoch {:>2} train l_global {:.4} val l_trans {:.4} val l_class {:.4}",
            r.epoch, r.train.l_global, r.val.l_trans, r.val.l_class
        )
    })
    .map_err(err)?;
    ensure(history.epochs.len() == 30, || format!("ran {} epochs", history.epochs.len()))?;
    let first = &history.epochs[0].val;
    let best = &history.best_epoch().val;
    let red = reduction(first.l_trans, best.l_trans);
    let red_fid = reduction(fidelity(first, &cfg.loss), fidelity(best, &cfg.loss));
    ensure(red >= 0.5, || format!("val l_trans {:.4} -> {:.4} ({:.0}%)", first.l_trans, best.l_trans, 100.0 * red))?;
    ensure(red_fid >= 0.5, || format!("val fidelity terms reduced only {:.0}%", 100.0 * red_fid))?;

    let eval = evaluate_fold(&model, &test.samples, &EvalOptions::default()).map_err(err)?;
    let acc = eval.accuracy();
    ensure(acc >= 0.9, || format!("phantom test accuracy {:.1}% on {} scans", 100.0 * acc, test.samples.len()))?;

    let fold_opts = FoldOptions {
        k: 4,
        seed: 1,
        allow_sparse_classes: true,
        ..Default::default()
    };
    let folds = make_cv_folds(&data.manifest, &fold_opts).map_err(err)?;
    let leaks = leakage_violations(&data.manifest, &folds);
    ensure(leaks.is_empty(), || leaks.join("; "))?;
    let short = TrainConfig {
        max_epochs: 2,
        patience: 1,
        ..cfg.clone()
    };
    let cv = run_cross_validation(
        &data,
        &ModelConfig::desk(PHANTOM_DIMS),
        &short,
        &CrossValOptions {
            folds: fold_opts,
            ..Default::default()
        },
        &|_, _| {},
    )
    .map_err(err)?;
    ensure(cv.folds.len() == 4 && cv.pooled.scans.len() == data.samples.len(), || "cross-validation did not cover every scan".into())?;
    within(t.elapsed(), Duration::from_secs(30 * 60))?;
    Ok(format!(
        "val l_trans {:.3} -> {:.3} ({:.0}% lower, fidelity {:.0}% lower), test accuracy {:.1}% ({} scans), 4 folds leak-free, {:.0?}",
        first.l_trans,
        best.l_trans,
        100.0 * red,
        100.0 * red_fid,
        100.0 * acc,
        test.samples.len(),
        t.elapsed()
    ))
}

fn c6_overfit() -> Outcome {
    let t = Instant::now();
    let err = |e: mtnet_core::Error| e.to_string();
    let (input, target) = generate_phantom(5, ClassLabel::Mmd, PHANTOM_DIMS).map_err(err)?;
    let sample = Sample::from_volumes("mmd-000".into(), SessionKind::Baseline, ClassLabel::Mmd, input, target).map_err(err)?;
    let mut model = MultiTaskModel::<f32>::build(&ModelConfig::desk(PHANTOM_DIMS), 1).map_err(err)?;
    let cfg = TrainConfig {
        augment: false,
        ..Default::default()
    };
    let one = std::slice::from_ref(&sample);
    let mut runner = ModelRunner::new(&mut model, one, one, &cfg, None).map_err(err)?;
    let batch = make_batch(&[&sample], None).map_err(err)?;
    let first = runner.step(&batch).map_err(err)?;
    for _ in 1..200 {
        runner.step(&batch).map_err(err)?;
    }
    let last = mtnet_core::networks::evaluate_batch(runner.model, &batch, &cfg.loss).map_err(err)?;
    let (_, probs) = runner.model.predict(&batch.mri).map_err(err)?;
    let p_true = probs.data()[ClassLabel::Mmd.index()] as f64;
    let red = reduction(first.l_trans, last.l_trans);
    let red_fid = reduction(fidelity(&first, &cfg.loss), fidelity(&last, &cfg.loss));
    ensure(red >= 0.9 && red_fid >= 0.9, || {
        format!("l_trans {:.4} -> {:.4}, fidelity reduced {:.0}%", first.l_trans, last.l_trans, 100.0 * red_fid)
    })?;
    ensure(p_true > 0.95, || format!("true-class probability {p_true:.4}"))?;
    within(t.elapsed(), Duration::from_secs(300))?;
    Ok(format!(
        "l_trans {:.3} -> {:.3}, fidelity {:.0}% lower, p(true) {p_true:.4}, {:.0?}",
        first.l_trans,
        last.l_trans,
        100.0 * red_fid,
        t.elapsed()
    ))
}

fn random_volume(rng: &mut SplitMix, channels: usize, dims: [usize; 3]) -> Volume {
    let n = channels * dims.iter().product::<usize>();
    let data = (0..n).map(|_| rng.range(0.0, 5.0) as f32).collect();
    let spacing = [rng.range(0.5, 3.0) as f32, rng.range(0.5, 3.0) as f32, rng.range(0.5, 3.0) as f32];
    Volume::with_meta(channels, dims, spacing, "a.u.".into(), data).expect("valid volume")
}

fn c7_data() -> Outcome {
    let err = |e: mtnet_core::Error| e.to_string();
    let mut rng = SplitMix(7);
    for _ in 0..50 {
        let dims = [rng.int(3, 8) * 2, rng.int(3, 8) * 2, rng.int(1, 6)];
        let channels = rng.int(1, 8);
        let mut v = random_volume(&mut rng, channels, dims);
        v.data_mut()[0] = f32::from_bits(0x3f80_0001);
        let bytes = encode_volume(&v).map_err(err)?;
        let back = decode_volume(&bytes).map_err(err)?;
        let same_bits = back.data().iter().zip(v.data()).all(|(a, b)| a.to_bits() == b.to_bits());
        ensure(same_bits && back == v && encode_volume(&back).map_err(err)? == bytes, || "MVOL round trip differs".into())?;

        let m = BrainMask::from_threshold(&v, 0.1).map_err(err)?;
        let once = normalize_mean_one(&v, &m).map_err(err)?;
        let twice = normalize_mean_one(&once, &m).map_err(err)?;
        for c in 0..v.channels() {
            let mean = m.mean(once.channel(c));
            ensure((mean - 1.0).abs() < 1e-6, || format!("channel {c} in-mask mean {mean}"))?;
        }
        let idem = once.data().iter().zip(twice.data()).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
        ensure(idem < 1e-6, || format!("normalization not idempotent: {idem:e}"))?;
    }
    let square = [16, 16, 8];
    for label in ClassLabel::ALL {
        let (input, target) = generate_phantom(rng.next_u64(), label, square).map_err(err)?;
        let out = augment_eightfold(&input, &target, label).map_err(err)?;
        ensure(out.len() == 8, || format!("{} augmented copies", out.len()))?;
        for ((ai, at, al), tr) in out.iter().zip(mtnet_core::data::TRANSFORMS.iter()) {
            ensure(*al == label, || "label changed".into())?;
            ensure(tr.invert(ai).map_err(err)?.data().len() == input.data().len(), || "size changed".into())?;
            if tr.is_permutation() {
                ensure(tr.invert(ai).map_err(err)? == input && tr.invert(at).map_err(err)? == target, || format!("{} not invertible", tr.name))?;
            } else {
                // Zero-filled shifts are invertible on the retained interior.
                let back = tr.invert(&tr.apply(&tr.invert(ai).map_err(err)?).map_err(err)?).map_err(err)?;
                ensure(back == tr.invert(ai).map_err(err)?, || format!("{} not invertible on its support", tr.name))?;
            }
        }
    }
    let manifest = DatasetManifest::cohort_shaped();
    let folds = make_cv_folds(&manifest, &FoldOptions::default()).map_err(err)?;
    let mut per_fold = Vec::new();
    for f in &folds {
        let mut counts = [0usize; 4];
        for &i in &f.test {
            counts[manifest.records[i].label.index()] += 1;
        }
        per_fold.push(counts);
    }
    ensure(per_fold.iter().all(|c| *c == [40, 38, 3, 2]), || format!("test scans per fold {per_fold:?}"))?;
    Ok("50 MVOL/normalization instances, 4x8 augmentations, folds 4x[40, 38, 3, 2]".into())
}

fn c8_statistics() -> Outcome {
    let err = |e: mtnet_core::Error| e.to_string();
    let mut rng = SplitMix(8);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.int(3, 60);
        let d = rng.range(-20.0, 20.0);
        let constant: Vec<(f64, f64)> = (0..n).map(|_| rng.range(10.0, 80.0)).map(|p| (p + d, p)).collect();
        let ba = bland_altman(&constant).map_err(err)?;
        let (ob, ..) = oracle_bland_altman(&constant);
        worst = worst.max(rel_err(ba.bias, ob)).max(rel_err(ba.bias, d));
        ensure(ba.loa_high - ba.loa_low < 1e-9 * d.abs().max(1.0), || format!("LoA width {}", ba.loa_high - ba.loa_low))?;

        let noisy: Vec<(f64, f64)> = (0..n).map(|_| (rng.range(10.0, 80.0), rng.range(10.0, 80.0))).collect();
        let ba = bland_altman(&noisy).map_err(err)?;
        let (ob, osd, olo, ohi) = oracle_bland_altman(&noisy);
        for (a, b) in [(ba.bias, ob), (ba.sd, osd), (ba.loa_low, olo), (ba.loa_high, ohi)] {
            worst = worst.max(rel_err(a, b));
        }
        let r = pearson(&noisy).map_err(err)?;
        worst = worst.max(rel_err(r, oracle_pearson(&noisy)));

        let (slope, icpt) = (rng.range(0.1, 5.0) * if rng.unit() < 0.5 { -1.0 } else { 1.0 }, rng.range(-10.0, 10.0));
        let linear: Vec<(f64, f64)> = (0..n).map(|_| rng.range(-50.0, 50.0)).map(|x| (x, slope * x + icpt)).collect();
        let r = pearson(&linear).map_err(err)?;
        worst = worst.max(rel_err(r, slope.signum()));

        let len = rng.int(8, 200);
        let reference: Vec<f32> = (0..len).map(|_| rng.range(0.1, 4.0) as f32).collect();
        let pred: Vec<f32> = reference.iter().map(|&v| v + rng.range(-0.5, 0.5) as f32).collect();
        let inside: Vec<bool> = (0..len).map(|i| i == 0 || rng.unit() < 0.7).collect();
        let mask = BrainMask::new([len, 1, 1], inside.clone()).map_err(err)?;
        let same = nrmse_values(&reference, &reference, Some(&mask), NrmseNorm::Mean).map_err(err)?;
        ensure(same == 0.0, || format!("nrmse of identical volumes {same}"))?;
        let got = nrmse_values(&reference, &pred, Some(&mask), NrmseNorm::Mean).map_err(err)?;
        worst = worst.max(rel_err(got, oracle_nrmse(&reference, &pred, &inside)));
    }
    ensure(worst < 1e-6, || format!("max relative error {worst:e}"))?;
    Ok(format!("100 instances each, max relative error {worst:.1e}"))
}

fn c9_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let bin = env!("CARGO_BIN_EXE_mtnet");
    let run = |args: &[&str]| -> Result<(), String> {
        let out = Command::new(bin).args(args).output().map_err(|e| e.to_string())?;
        ensure(out.status.success(), || format!("mtnet {args:?} failed: {}", String::from_utf8_lossy(&out.stderr)))
    };
    let data = dir.path().join("data");
    let data_s = data.to_str().ok_or("non-UTF-8 temp path")?;
    run(&["phantom-gen", "--out", data_s, "--subjects", "2,2,1,1", "--dims", "16,16,8", "--seed", "11"])?;
    let manifest = data.join("manifest.json");
    let mut csvs = Vec::new();
    for k in 0..2 {
        let out = dir.path().join(format!("run{k}"));
        run(&[
            "train",
            "--manifest",
            manifest.to_str().ok_or("non-UTF-8 temp path")?,
            "--out",
            out.to_str().ok_or("non-UTF-8 temp path")?,
            "--preset",
            "desk",
            "--deterministic",
            "--seed",
            "42",
            "--set",
            "train.max_epochs=3",
            "--set",
            "train.patience=2",
        ])?;
        csvs.push(std::fs::read(out.join("history.csv")).map_err(|e| e.to_string())?);
    }
    ensure(csvs[0] == csvs[1], || "history CSVs differ".into())?;
    let rows = String::from_utf8_lossy(&csvs[0]).lines().count();
    Ok(format!("two runs, identical {}-byte history ({rows} lines)", csvs[0].len()))
}

type Criterion = (u32, &'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 9] = [
        (1, "classification metric table oracle", c1_table),
        (2, "gradient suite", c2_gradients),
        (3, "convolution oracle", c3_conv),
        (4, "loss identities", c4_losses),
        (5, "end-to-end phantom run", c5_end_to_end),
        (6, "overfit sanity", c6_overfit),
        (7, "data-pipeline properties", c7_data),
        (8, "statistics properties", c8_statistics),
        (9, "determinism", c9_determinism),
    ];
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failures = 0;
    for (id, name, check) in criteria {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let t = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS  criterion {id} ({name}): {detail} [{:.1?}]", t.elapsed()),
            Err(why) => {
                failures += 1;
                println!("FAIL  criterion {id} ({name}): {why} [{:.1?}]", t.elapsed());
            }
        }
    }
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}
