//! One fold: scale, train both models, threshold, generate, evaluate.

use std::time::Instant;

use crate::data::{holdout_split, stratified_kfold, Dataset, MinMaxScaler, SplitPlan};
use crate::density::{train_flow, MafFlow};
use crate::error::Result;
use crate::metrics::{evaluate, EvaluationReport, OutlierModels};
use crate::models::{train_classifier, Classifier, TrainConfig};
use crate::ppcef::{
    compute_delta, default_targets, generate, wachter_generate, CfConfig, CfResult,
    DensityThreshold,
};

use super::config::{Method, RunConfig};

/// Held-out fraction when only one fold is requested.
pub const HOLDOUT_FRACTION: f64 = 0.2;

pub fn split_plan(cfg: &RunConfig, data: &Dataset) -> Result<SplitPlan> {
    if cfg.k_folds == 1 {
        holdout_split(data, HOLDOUT_FRACTION, cfg.seed)
    } else {
        stratified_kfold(data, cfg.k_folds, cfg.seed)
    }
}

/// Trained state of one fold, ready for counterfactual generation.
#[derive(Clone, Debug)]
pub struct PreparedFold {
    pub fold: usize,
    pub test_indices: Vec<usize>,
    /// Scaled with `scaler`.
    pub train: Dataset,
    /// Scaled with `scaler`.
    pub test: Dataset,
    pub scaler: MinMaxScaler,
    pub classifier: Classifier,
    pub flow: MafFlow,
    pub delta: DensityThreshold,
    pub outliers: OutlierModels,
    /// Counterfactual target of every test row.
    pub targets: Vec<usize>,
}

pub(crate) fn seeded(train: &TrainConfig, seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        ..train.clone()
    }
}

/// Train and test split of one fold, both scaled with a scaler fitted on
/// the training part. Returns `(train, test, scaler, test_indices)`.
pub fn scaled_split(
    data: &Dataset,
    plan: &SplitPlan,
    fold: usize,
) -> Result<(Dataset, Dataset, MinMaxScaler, Vec<usize>)> {
    let (train_idx, test_idx) = plan.train_test(fold);
    let raw_train = data.subset(&train_idx);
    let scaler = MinMaxScaler::fit(&raw_train.features)?;
    let train = raw_train.scaled(&scaler)?;
    let test = data.subset(&test_idx).scaled(&scaler)?;
    Ok((train, test, scaler, test_idx))
}

pub fn prepare_fold(cfg: &RunConfig, data: &Dataset, plan: &SplitPlan, fold: usize) -> Result<PreparedFold> {
    let (train, test, scaler, test_idx) = scaled_split(data, plan, fold)?;
    let seed = cfg.fold_seed(fold);

    let (classifier, report) = train_classifier(
        &train,
        cfg.classifier.arch,
        cfg.classifier.hidden,
        &seeded(&cfg.classifier.train, seed),
    )?;
    log::info!(
        "fold {fold}: classifier stopped after {} epochs, test accuracy {:.3}",
        report.epochs_run,
        classifier.accuracy(&test)?
    );
    let (flow, report) = train_flow(&train, &seeded(&cfg.flow.train, seed), cfg.flow.arch())?;
    log::info!(
        "fold {fold}: flow stopped after {} epochs, best validation NLL {:.4}",
        report.epochs_run,
        report.best_validation_loss
    );
    let delta = compute_delta(&flow, &train)?;
    let outliers = OutlierModels::fit(&train.features, seed)?;
    let targets = default_targets(&classifier, &test.features)?;
    Ok(PreparedFold {
        fold,
        test_indices: test_idx,
        train,
        test,
        scaler,
        classifier,
        flow,
        delta,
        outliers,
        targets,
    })
}

#[derive(Clone, Debug)]
pub struct FoldRun {
    pub results: Vec<CfResult>,
    pub wall_time_secs: f64,
    pub report: EvaluationReport,
}

/// Generates counterfactuals for the whole test split in one batch and
/// evaluates them. Only generation is timed.
pub fn run_method(prep: &PreparedFold, cf: &CfConfig, method: Method) -> Result<FoldRun> {
    let x0 = &prep.test.features;
    let start = Instant::now();
    let mut results = match method {
        Method::Ppcef => generate(x0, &prep.targets, &prep.classifier, &prep.flow, &prep.delta, cf)?,
        Method::Wachter => wachter_generate(x0, &prep.targets, &prep.classifier, cf)?,
    };
    let wall_time_secs = start.elapsed().as_secs_f64();
    let report = evaluate(
        &results,
        &prep.classifier,
        &prep.flow,
        &prep.delta,
        x0,
        &prep.outliers,
        wall_time_secs,
    )?;
    if method == Method::Wachter {
        let covered: Vec<usize> = (0..results.len()).filter(|&i| results[i].covered()).collect();
        if !covered.is_empty() {
            let x = x0.select_rows(&covered);
            let mut xs = x.clone();
            for (row, &i) in covered.iter().enumerate() {
                xs.row_mut(row).copy_from_slice(&results[i].x_cf);
            }
            let targets: Vec<usize> = covered.iter().map(|&i| results[i].target).collect();
            for (&i, lp) in covered.iter().zip(prep.flow.log_prob(&xs, &targets)?) {
                results[i].log_density_at_cf = Some(lp);
            }
        }
    }
    Ok(FoldRun {
        results,
        wall_time_secs,
        report,
    })
}
