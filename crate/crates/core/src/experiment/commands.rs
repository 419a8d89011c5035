use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{Method, RunConfig};
use super::persist::{fold_dir, save_fold};
use super::pipeline::{prepare_fold, run_method, scaled_split, seeded, split_plan, PreparedFold};
use super::record::{ExperimentRecord, FoldOutcome, Summary, AGGREGATED};
use crate::autodiff::Tensor;
use crate::density::{train_flow, ConditionalDensity, GmmDensity, KdeDensity, MafFlow};
use crate::error::{Error, Result};
use crate::models::Classifier;
use crate::ppcef::{write_trajectory_csv, CfConfig, TrajectoryPoint, ValidityLoss};

/// Trains every fold of `cfg`. A failing fold is kept as its error so the
/// remaining folds still run.
pub fn prepare_all(cfg: &RunConfig) -> Result<Vec<Result<PreparedFold>>> {
    cfg.validate()?;
    let data = cfg.load_dataset()?;
    let plan = split_plan(cfg, &data)?;
    Ok((0..plan.k())
        .map(|fold| {
            prepare_fold(cfg, &data, &plan, fold).inspect_err(|e| log::error!("fold {fold}: {e}"))
        })
        .collect())
}

/// Generates and evaluates counterfactuals on prepared folds and writes the
/// run directory `out`. Does not fail when every fold failed; check
/// [`ExperimentRecord::reports`].
pub fn run_prepared(
    cfg: &RunConfig,
    folds: &[Result<PreparedFold>],
    cf: &CfConfig,
    method: Method,
    out: &Path,
) -> Result<ExperimentRecord> {
    let effective = RunConfig {
        cf: cf.clone(),
        method,
        out: out.to_path_buf(),
        ..cfg.clone()
    };
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("config.toml"), effective.to_toml()?)?;
    let cf = CfConfig {
        record_trajectory: true,
        ..cf.clone()
    };

    let mut outcomes = Vec::with_capacity(folds.len());
    for (fold, prep) in folds.iter().enumerate() {
        let run = match prep {
            Ok(prep) => run_method(prep, &cf, method).map(|run| (prep, run)),
            Err(e) => Err(Error::Fit(e.to_string())),
        };
        match run {
            Ok((prep, run)) => {
                save_fold(&fold_dir(out, fold), prep, &run)?;
                log::info!(
                    "fold {fold}: validity {:.3}, plausibility {:.3}",
                    run.report.validity,
                    run.report.prob_plausibility
                );
                outcomes.push(FoldOutcome {
                    fold,
                    report: Some(run.report),
                    error: None,
                });
            }
            Err(e) => {
                log::error!("fold {fold}: {e}");
                outcomes.push(FoldOutcome {
                    fold,
                    report: None,
                    error: Some(e.to_string()),
                });
            }
        }
    }

    let record = ExperimentRecord::new(effective.dataset.name(), method, effective.hash()?, outcomes);
    record.save(out.join("report.json"))?;
    let folds_csv = out.join("folds.csv");
    if folds_csv.exists() {
        std::fs::remove_file(&folds_csv)?;
    }
    for f in &record.folds {
        if let Some(r) = &f.report {
            r.append_csv(&folds_csv, &[("fold", f.fold.to_string())])?;
        }
    }
    Ok(record)
}

fn require_success(record: ExperimentRecord) -> Result<ExperimentRecord> {
    if record.reports().next().is_none() {
        return Err(Error::AllFoldsFailed {
            folds: record.folds.len(),
        });
    }
    Ok(record)
}

/// Full cross-validated run of `cfg.method`, written to `cfg.out`.
pub fn cmd_run(cfg: &RunConfig) -> Result<ExperimentRecord> {
    let folds = prepare_all(cfg)?;
    require_success(run_prepared(cfg, &folds, &cfg.cf, cfg.method, &cfg.out)?)
}

/// Writes one row per setting: the label column, then mean and std of
/// every aggregated metric.
fn write_summary_csv(path: &Path, label: &str, rows: &[(String, &ExperimentRecord)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec![label.to_string()];
    for (name, _) in AGGREGATED {
        header.push(format!("{name}_mean"));
        header.push(format!("{name}_std"));
    }
    w.write_record(&header)?;
    for (value, record) in rows {
        let mut row = vec![value.clone()];
        for (name, _) in AGGREGATED {
            let s = record.aggregate.get(name);
            row.push(s.map(|s| s.mean.to_string()).unwrap_or_default());
            row.push(s.and_then(|s| s.std).map(|v| v.to_string()).unwrap_or_default());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// The same trained folds evaluated at every λ; each setting gets its own
/// run directory `lambda_<λ>` and `ablate_lambda.csv` summarizes them.
pub fn cmd_ablate_lambda(cfg: &RunConfig, lambdas: &[f64]) -> Result<Vec<(f64, ExperimentRecord)>> {
    if lambdas.is_empty() || lambdas.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
        return Err(Error::Config(format!("lambdas must be finite and non-negative: {lambdas:?}")));
    }
    let folds = prepare_all(cfg)?;
    let mut records = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let cf = CfConfig {
            lambda,
            ..cfg.cf.clone()
        };
        let record = run_prepared(cfg, &folds, &cf, Method::Ppcef, &cfg.out.join(format!("lambda_{lambda}")))?;
        records.push((lambda, record));
    }
    let rows: Vec<_> = records.iter().map(|(l, r)| (l.to_string(), r)).collect();
    write_summary_csv(&cfg.out.join("ablate_lambda.csv"), "lambda", &rows)?;
    if records.iter().all(|(_, r)| r.reports().next().is_none()) {
        return Err(Error::AllFoldsFailed { folds: folds.len() });
    }
    Ok(records)
}

fn loss_name(v: ValidityLoss) -> &'static str {
    match v {
        ValidityLoss::Hinge => "hinge",
        ValidityLoss::CrossEntropy => "cross_entropy",
    }
}

/// Hinge validity loss against cross-entropy on the same trained folds.
pub fn cmd_ablate_loss(cfg: &RunConfig) -> Result<Vec<(ValidityLoss, ExperimentRecord)>> {
    let folds = prepare_all(cfg)?;
    let mut records = Vec::new();
    for variant in [ValidityLoss::Hinge, ValidityLoss::CrossEntropy] {
        let cf = CfConfig {
            validity_loss: variant,
            ..cfg.cf.clone()
        };
        let record = run_prepared(cfg, &folds, &cf, Method::Ppcef, &cfg.out.join(loss_name(variant)))?;
        records.push((variant, record));
    }
    let rows: Vec<_> = records.iter().map(|(v, r)| (loss_name(*v).to_string(), r)).collect();
    write_summary_csv(&cfg.out.join("ablate_loss.csv"), "validity_loss", &rows)?;
    if records.iter().all(|(_, r)| r.reports().next().is_none()) {
        return Err(Error::AllFoldsFailed { folds: folds.len() });
    }
    Ok(records)
}

pub const GRID_LO: f64 = -0.5;
pub const GRID_HI: f64 = 1.5;
pub const GRID_SIZE: usize = 200;

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryExport {
    pub trajectory_csv: PathBuf,
    /// Only for two-dimensional data.
    pub grid_csv: Option<PathBuf>,
    pub points: usize,
}

fn grid_points() -> Tensor {
    let step = (GRID_HI - GRID_LO) / (GRID_SIZE - 1) as f64;
    let mut data = Vec::with_capacity(2 * GRID_SIZE * GRID_SIZE);
    for i in 0..GRID_SIZE {
        for j in 0..GRID_SIZE {
            data.push(GRID_LO + i as f64 * step);
            data.push(GRID_LO + j as f64 * step);
        }
    }
    Tensor::matrix(GRID_SIZE * GRID_SIZE, 2, data).expect("grid shape")
}

fn write_grid_csv(path: &Path, clf: &Classifier, flow: &MafFlow) -> Result<()> {
    let grid = grid_points();
    let probs = clf.predict_proba(&grid)?;
    let densities = (0..flow.classes)
        .map(|c| flow.log_prob(&grid, &vec![c; grid.rows()]))
        .collect::<Result<Vec<_>>>()?;
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["x0".to_string(), "x1".to_string()];
    header.extend((0..flow.classes).map(|c| format!("log_density_{c}")));
    header.extend((0..probs.cols()).map(|c| format!("prob_{c}")));
    w.write_record(&header)?;
    for i in 0..grid.rows() {
        let mut row: Vec<String> = grid.row(i).iter().map(|v| v.to_string()).collect();
        row.extend(densities.iter().map(|d| d[i].to_string()));
        row.extend(probs.row(i).iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Exports the recorded path of one test instance from a finished run in
/// `cfg.out`; for 2-D data also the density and probability grid.
pub fn cmd_export_trajectory(cfg: &RunConfig, fold: usize, instance: usize) -> Result<TrajectoryExport> {
    let dir = fold_dir(&cfg.out, fold);
    let text = std::fs::read_to_string(dir.join("trajectories.json"))?;
    let all: Vec<Option<Vec<TrajectoryPoint>>> = serde_json::from_str(&text)?;
    let points = all
        .get(instance)
        .ok_or_else(|| {
            Error::Contract(format!("instance {instance} out of range, fold {fold} has {} rows", all.len()))
        })?
        .as_ref()
        .ok_or_else(|| Error::Contract(format!("no trajectory recorded for instance {instance}")))?;
    let trajectory_csv = dir.join(format!("trajectory_{instance}.csv"));
    write_trajectory_csv(std::fs::File::create(&trajectory_csv)?, points)?;

    let grid_csv = if points.first().is_some_and(|p| p.x.len() == 2) {
        let clf = Classifier::load(dir.join("classifier.json"))?;
        let flow = MafFlow::load(dir.join("flow.json"))?;
        let path = dir.join("density_grid.csv");
        write_grid_csv(&path, &clf, &flow)?;
        Some(path)
    } else {
        None
    };
    Ok(TrajectoryExport {
        trajectory_csv,
        grid_csv,
        points: points.len(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    Maf,
    Kde,
    Gmm,
}

impl Estimator {
    pub const ALL: [Estimator; 3] = [Estimator::Maf, Estimator::Kde, Estimator::Gmm];

    pub fn name(self) -> &'static str {
        match self {
            Self::Maf => "maf",
            Self::Kde => "kde",
            Self::Gmm => "gmm",
        }
    }
}

impl std::str::FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown estimator `{s}`")))
    }
}

/// Mean test log-likelihood per fold and estimator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityComparison {
    pub estimators: Vec<Estimator>,
    /// `folds[f][e]`, `None` when the estimator failed on that fold.
    pub folds: Vec<Vec<Option<f64>>>,
    pub summary: Vec<Option<Summary>>,
}

impl DensityComparison {
    pub fn mean(&self, estimator: Estimator) -> Option<f64> {
        let e = self.estimators.iter().position(|&x| x == estimator)?;
        self.summary[e].as_ref().map(|s| s.mean)
    }
}

fn mean_log_likelihood(density: &dyn ConditionalDensity, test: &crate::data::Dataset) -> Result<f64> {
    let lp = density.log_density(&test.features, &test.labels)?;
    Ok(lp.iter().sum::<f64>() / lp.len() as f64)
}

/// Fits the requested estimators on every training fold and scores the
/// held-out part; writes `compare_density.csv`.
pub fn cmd_compare_density(cfg: &RunConfig, estimators: &[Estimator]) -> Result<DensityComparison> {
    if estimators.is_empty() {
        return Err(Error::Config("no density estimator requested".into()));
    }
    cfg.validate()?;
    let data = cfg.load_dataset()?;
    let plan = split_plan(cfg, &data)?;
    let mut folds = Vec::with_capacity(plan.k());
    for fold in 0..plan.k() {
        let (train, test, _, _) = scaled_split(&data, &plan, fold)?;
        let seed = cfg.fold_seed(fold);
        let row = estimators
            .iter()
            .map(|e| {
                let fitted: Result<Box<dyn ConditionalDensity>> = match e {
                    Estimator::Maf => train_flow(&train, &seeded(&cfg.flow.train, seed), cfg.flow.arch())
                        .map(|(f, _)| Box::new(f) as Box<dyn ConditionalDensity>),
                    Estimator::Kde => KdeDensity::fit(&train).map(|k| Box::new(k) as _),
                    Estimator::Gmm => GmmDensity::fit(&train, cfg.gmm_components, seed).map(|g| Box::new(g) as _),
                };
                match fitted.and_then(|d| mean_log_likelihood(d.as_ref(), &test)) {
                    Ok(v) if v.is_finite() => Some(v),
                    Ok(v) => {
                        log::warn!("fold {fold}: {} mean log-likelihood {v}", e.name());
                        None
                    }
                    Err(err) => {
                        log::error!("fold {fold}: {}: {err}", e.name());
                        None
                    }
                }
            })
            .collect::<Vec<_>>();
        folds.push(row);
    }
    let summary = (0..estimators.len())
        .map(|e| Summary::of(&folds.iter().filter_map(|r| r[e]).collect::<Vec<_>>()))
        .collect();
    let result = DensityComparison {
        estimators: estimators.to_vec(),
        folds,
        summary,
    };

    std::fs::create_dir_all(&cfg.out)?;
    let mut w = csv::Writer::from_path(cfg.out.join("compare_density.csv"))?;
    let mut header = vec!["fold".to_string()];
    header.extend(estimators.iter().map(|e| e.name().to_string()));
    w.write_record(&header)?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for (f, row) in result.folds.iter().enumerate() {
        let mut rec = vec![f.to_string()];
        rec.extend(row.iter().map(|v| opt(*v)));
        w.write_record(&rec)?;
    }
    let mut mean = vec!["mean".to_string()];
    mean.extend(result.summary.iter().map(|s| opt(s.as_ref().map(|s| s.mean))));
    w.write_record(&mean)?;
    let mut std = vec!["std".to_string()];
    std.extend(result.summary.iter().map(|s| opt(s.as_ref().and_then(|s| s.std))));
    w.write_record(&std)?;
    w.flush()?;

    if result.summary.iter().all(Option::is_none) {
        return Err(Error::AllFoldsFailed { folds: plan.k() });
    }
    Ok(result)
}
