use std::path::{Path, PathBuf};

use mtnet_core::autodiff::suite::{run_suite, CheckRow, Scope};
use mtnet_core::data::{
    load_volume, mask, normalize_mean_one, save_volume, split_train_val, write_phantom_dataset, BrainMask, Dataset,
    Volume,
};
use mtnet_core::evaluation::{emit_report, evaluate_fold};
use mtnet_core::networks::checkpoint::load_checkpoint;
use mtnet_core::networks::{ModelConfig, MultiTaskModel, MRI_CHANNELS};
use mtnet_core::trainer::{run_cross_validation, train, CrossValOptions, EpochRecord};
use mtnet_core::{ClassLabel, Error, Result};
use serde::Serialize;

use crate::config::{write_json, RunConfig};

/// Marker left in an output directory until the command finishes.
pub const INCOMPLETE_MARKER: &str = "INCOMPLETE";

pub const CHECKPOINT_FILE: &str = "best.mtck";
pub const HISTORY_FILE: &str = "history.csv";

/// Runs `body` with an `INCOMPLETE` marker in `dir`; on failure the marker
/// keeps the error text.
fn flagged<R>(dir: &Path, body: impl FnOnce() -> Result<R>) -> Result<R> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let marker = dir.join(INCOMPLETE_MARKER);
    std::fs::write(&marker, "running\n").map_err(|e| Error::io(&marker, e))?;
    match body() {
        Ok(r) => {
            std::fs::remove_file(&marker).map_err(|e| Error::io(&marker, e))?;
            Ok(r)
        }
        Err(e) => {
            let _ = std::fs::write(&marker, format!("{e}\n"));
            Err(e)
        }
    }
}

#[derive(Serialize)]
struct PhantomSnapshot {
    command: &'static str,
    subjects: [usize; ClassLabel::COUNT],
    dims: [usize; 3],
    seed: u64,
}

pub fn phantom_gen(out: &Path, subjects: [usize; ClassLabel::COUNT], dims: [usize; 3], seed: u64) -> Result<()> {
    flagged(out, || {
        let manifest = write_phantom_dataset(out, subjects, dims, seed)?;
        write_json(
            &out.join(crate::config::SNAPSHOT_FILE),
            &PhantomSnapshot {
                command: "phantom-gen",
                subjects,
                dims,
                seed,
            },
        )?;
        let counts = manifest.class_counts();
        for label in ClassLabel::ALL {
            let c = counts[label.index()];
            out!("{:<7}{:>4} subjects{:>5} scans", label.name(), c.subjects, c.scans);
        }
        out!("manifest: {}", out.join("manifest.json").display());
        Ok(())
    })
}

fn print_epoch(prefix: &str, r: &EpochRecord) {
    eprintln!(
        "{prefix}epoch {:>3}  train l_global {:.5}  val l_global {:.5}  val l_trans {:.5}  val l_class {:.5}",
        r.epoch, r.train.l_global, r.val.l_global, r.val.l_trans, r.val.l_class
    );
}

/// Training flags shared by `train` and `crossval`.
pub struct TrainArgs<'a> {
    pub manifest: &'a Path,
    pub out: &'a Path,
    pub cfg: RunConfig,
}

#[derive(Serialize)]
struct SplitSnapshot {
    train_subjects: Vec<String>,
    val_subjects: Vec<String>,
}

fn subjects_of(dataset: &Dataset, idx: &[usize]) -> Vec<String> {
    let mut ids: Vec<String> = idx.iter().map(|&i| dataset.manifest.records[i].subject_id.clone()).collect();
    ids.dedup();
    ids
}

pub fn train_cmd(args: TrainArgs) -> Result<()> {
    let TrainArgs { manifest, out, mut cfg } = args;
    flagged(out, || {
        let dataset = Dataset::load(manifest)?;
        cfg.model.input_dims = dataset.dims();
        cfg.write_snapshot(out)?;
        let split = split_train_val(&dataset.manifest, cfg.data.val_fraction, cfg.train.seed)?;
        write_json(
            &out.join("split.json"),
            &SplitSnapshot {
                train_subjects: subjects_of(&dataset, &split.train),
                val_subjects: subjects_of(&dataset, &split.val),
            },
        )?;
        let (train_set, val_set) = (dataset.select(&split.train), dataset.select(&split.val));
        let mut model = MultiTaskModel::<f32>::build(&cfg.model, cfg.train.seed)?;
        eprintln!(
            "training {} parameters on {} scans, validating on {}",
            model.param_count(),
            train_set.len(),
            val_set.len()
        );
        let history = train(
            &mut model,
            &train_set,
            &val_set,
            &cfg.train,
            Some(&out.join(CHECKPOINT_FILE)),
            &mut |r| print_epoch("", r),
        )?;
        history.write_csv(out.join(HISTORY_FILE))?;
        let best = history.best_epoch();
        out!(
            "best epoch {} of {} (val l_global {:.6}); stopped by {:?}",
            best.epoch,
            history.epochs.len(),
            best.val.l_global,
            history.stop_reason
        );
        Ok(())
    })
}

pub fn crossval_cmd(args: TrainArgs, jobs: usize) -> Result<()> {
    let TrainArgs { manifest, out, mut cfg } = args;
    flagged(out, || {
        let dataset = Dataset::load(manifest)?;
        cfg.model.input_dims = dataset.dims();
        cfg.write_snapshot(out)?;
        let opts = CrossValOptions {
            folds: cfg.data.folds.clone(),
            eval: cfg.eval,
            jobs,
            out_dir: Some(out.to_path_buf()),
        };
        let result = run_cross_validation(&dataset, &cfg.model, &cfg.train, &opts, &|fold, r| {
            print_epoch(&format!("fold {fold} "), r)
        })?;
        for f in &result.folds {
            out!(
                "fold {}: {} test scans, accuracy {:.2}%, SSIM {:.4}, best epoch {}",
                f.split.fold,
                f.split.test.len(),
                100.0 * f.evaluation.accuracy(),
                f.evaluation.image.ssim,
                f.history.best_epoch().epoch
            );
        }
        let p = &result.pooled;
        out!(
            "pooled: {} scans, accuracy {:.2}%, SSIM {:.4}, PSNR {:.2} dB, NRMSE {:.4}",
            p.image.n,
            100.0 * p.accuracy(),
            p.image.ssim,
            p.image.psnr,
            p.image.nrmse
        );
        out!("report: {}", out.join("report").display());
        Ok(())
    })
}

/// Masks and normalizes a raw MRI volume the way training samples are prepared.
fn prepare_input(model: &MultiTaskModel<f32>, path: &Path) -> Result<(Volume, BrainMask)> {
    let input = load_volume(path)?;
    if input.channels() != MRI_CHANNELS {
        return Err(Error::Data(format!(
            "{}: expected {MRI_CHANNELS} channels, got {}",
            path.display(),
            input.channels()
        )));
    }
    let want = model.config().input_dims;
    if input.dims() != want {
        return Err(Error::Data(format!(
            "{}: dims {:?} do not match the checkpoint's {want:?}",
            path.display(),
            input.dims()
        )));
    }
    let m = BrainMask::from_threshold(&input, mask::DEFAULT_THRESHOLD)?;
    Ok((normalize_mean_one(&input, &m)?, m))
}

#[derive(Serialize)]
struct InferenceSnapshot<'a> {
    command: &'static str,
    checkpoint: &'a Path,
    input: &'a Path,
    model: &'a ModelConfig,
}

pub fn synthesize(checkpoint: &Path, input: &Path, out: &Path) -> Result<()> {
    let model = load_checkpoint(checkpoint)?;
    let (x, _) = prepare_input(&model, input)?;
    let (cbf, _) = model.predict(&x.to_tensor())?;
    let pred = Volume::with_meta(1, x.dims(), x.spacing(), "relative (in-brain mean one)".into(), cbf.into_data())?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    save_volume(&pred, out)?;
    let snapshot = PathBuf::from(format!("{}.run_config.json", out.display()));
    write_json(
        &snapshot,
        &InferenceSnapshot {
            command: "synthesize",
            checkpoint,
            input,
            model: model.config(),
        },
    )?;
    out!("wrote {} ({:?})", out.display(), pred.dims());
    Ok(())
}

pub fn classify(checkpoint: &Path, input: &Path) -> Result<()> {
    let model = load_checkpoint(checkpoint)?;
    let (x, _) = prepare_input(&model, input)?;
    let (_, probs) = model.predict(&x.to_tensor())?;
    let probs = probs.data();
    for label in ClassLabel::ALL {
        out!("{:<7}{:.6}", label.name(), probs[label.index()]);
    }
    out!("label: {}", ClassLabel::argmax(probs)?.name());
    Ok(())
}

pub fn evaluate(checkpoint: &Path, manifest: &Path, out: &Path, cfg: RunConfig) -> Result<()> {
    flagged(out, || {
        let model = load_checkpoint(checkpoint)?;
        let dataset = Dataset::load(manifest)?;
        if dataset.dims() != model.config().input_dims {
            return Err(Error::Data(format!(
                "dataset dims {:?} do not match the checkpoint's {:?}",
                dataset.dims(),
                model.config().input_dims
            )));
        }
        let cfg = RunConfig {
            model: model.config().clone(),
            ..cfg
        };
        cfg.write_snapshot(out)?;
        let eval = evaluate_fold(&model, &dataset.samples, &cfg.eval)?;
        emit_report(&eval, std::slice::from_ref(&eval), &cfg.eval, out)?;
        out!(
            "{} scans: accuracy {:.2}%, SSIM {:.4}, PSNR {:.2} dB, NRMSE {:.4}",
            eval.image.n,
            100.0 * eval.accuracy(),
            eval.image.ssim,
            eval.image.psnr,
            eval.image.nrmse
        );
        if let Some(a) = &eval.agreement {
            out!("mean CBF bias (LoA): {a}");
        }
        out!("report: {}", out.display());
        Ok(())
    })
}

fn print_table(rows: &[CheckRow]) {
    out!("{:<22} {:<20} {:>12} {:>9}  status", "check", "shape", "rel_err", "tol");
    for r in rows {
        out!(
            "{:<22} {:<20} {:>12.3e} {:>9.0e}  {}",
            r.name,
            format!("{:?}", r.shape),
            r.rel_err,
            r.tolerance,
            if r.passed() { "pass" } else { "FAIL" }
        );
    }
}

/// Prints the check table and returns the number of failed checks.
pub fn gradcheck(scope: &str, seed: u64) -> Result<usize> {
    let scope: Scope = scope.parse()?;
    let rows = run_suite(&scope, seed)?;
    print_table(&rows);
    let failed = rows.iter().filter(|r| !r.passed()).count();
    out!("{} checks, {failed} failed", rows.len());
    Ok(failed)
}
