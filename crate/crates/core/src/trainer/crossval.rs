use std::path::PathBuf;

use rayon::prelude::*;

use super::{train, EpochRecord, TrainConfig, TrainHistory};
use crate::data::{leakage_violations, make_cv_folds, Dataset, FoldOptions, FoldSplit};
use crate::error::{Error, Result};
use crate::evaluation::{emit_report, evaluate_fold, EvalOptions, FoldEvaluation};
use crate::networks::params::derive_seed;
use crate::networks::{ModelConfig, MultiTaskModel};

#[derive(Debug, Clone, Default)]
pub struct CrossValOptions {
    pub folds: FoldOptions,
    pub eval: EvalOptions,
    /// Folds trained concurrently; 0 or 1 runs them in sequence.
    pub jobs: usize,
    /// Per-fold checkpoints, histories and reports go to `fold_<k>/` below this.
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct FoldResult {
    pub split: FoldSplit,
    pub history: TrainHistory,
    pub evaluation: FoldEvaluation,
}

#[derive(Debug, Clone)]
pub struct CrossValResult {
    pub folds: Vec<FoldResult>,
    /// All test scans of all folds.
    pub pooled: FoldEvaluation,
}

impl CrossValResult {
    pub fn fold_evaluations(&self) -> Vec<FoldEvaluation> {
        self.folds.iter().map(|f| f.evaluation.clone()).collect()
    }
}

/// Trains and tests one fresh model per fold. `on_epoch` receives the fold index.
pub fn run_cross_validation(
    dataset: &Dataset,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    opts: &CrossValOptions,
    on_epoch: &(dyn Fn(usize, &EpochRecord) + Sync),
) -> Result<CrossValResult> {
    train_cfg.validate()?;
    let splits = make_cv_folds(&dataset.manifest, &opts.folds)?;
    let leaks = leakage_violations(&dataset.manifest, &splits);
    if !leaks.is_empty() {
        return Err(Error::Data(format!("subject leakage: {}", leaks.join("; "))));
    }
    let model_cfg = ModelConfig {
        input_dims: dataset.dims(),
        ..model_cfg.clone()
    };
    let run_fold = |split: FoldSplit| -> Result<FoldResult> {
        let fold = split.fold;
        let fold_dir = opts.out_dir.as_ref().map(|d| d.join(format!("fold_{fold}")));
        if let Some(d) = &fold_dir {
            std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        }
        let cfg = TrainConfig {
            seed: derive_seed(train_cfg.seed, fold as u64),
            ..train_cfg.clone()
        };
        let mut model = MultiTaskModel::<f32>::build(&model_cfg, cfg.seed)?;
        let (train_set, val_set, test_set) = (dataset.select(&split.train), dataset.select(&split.val), dataset.select(&split.test));
        let checkpoint = fold_dir.as_ref().map(|d| d.join("best.mtck"));
        let history = train(&mut model, &train_set, &val_set, &cfg, checkpoint.as_deref(), &mut |r| on_epoch(fold, r))?;
        let evaluation = evaluate_fold(&model, &test_set, &opts.eval)?;
        if let Some(d) = &fold_dir {
            history.write_csv(d.join("history.csv"))?;
            emit_report(&evaluation, &[], &opts.eval, d.join("report"))?;
        }
        Ok(FoldResult { split, history, evaluation })
    };
    let folds: Vec<FoldResult> = if opts.jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.jobs)
            .build()
            .map_err(|e| Error::Config(format!("cannot build thread pool: {e}")))?;
        pool.install(|| splits.into_par_iter().map(run_fold).collect::<Result<_>>())?
    } else {
        splits.into_iter().map(run_fold).collect::<Result<_>>()?
    };
    let evals: Vec<FoldEvaluation> = folds.iter().map(|f| f.evaluation.clone()).collect();
    let pooled = FoldEvaluation::pooled(&evals)?;
    if let Some(d) = &opts.out_dir {
        emit_report(&pooled, &evals, &opts.eval, d.join("report"))?;
    }
    Ok(CrossValResult { folds, pooled })
}
