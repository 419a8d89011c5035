use std::fs::OpenOptions;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::isoforest::IsolationForestModel;
use super::lof::LofModel;
use crate::autodiff::Tensor;
use crate::density::MafFlow;
use crate::error::{Error, Result};
use crate::models::Classifier;
use crate::ppcef::{distance, CfResult, DensityThreshold, DistanceKind};

pub const LOF_K: usize = 20;
pub const ISOFOREST_TREES: usize = 100;
pub const ISOFOREST_PSI: usize = 256;

/// Outlier detectors fitted on a reference set.
#[derive(Clone, Debug)]
pub struct OutlierModels {
    pub lof: LofModel,
    pub isoforest: IsolationForestModel,
}

impl OutlierModels {
    /// LOF with k = 20 (or fewer for tiny references) and a 100-tree,
    /// ψ = 256 isolation forest.
    pub fn fit(reference: &Tensor, seed: u64) -> Result<Self> {
        let k = LOF_K.min(reference.rows().saturating_sub(1)).max(1);
        Ok(Self {
            lof: LofModel::fit(reference, k)?,
            isoforest: IsolationForestModel::fit(reference, ISOFOREST_TREES, ISOFOREST_PSI, seed)?,
        })
    }
}

/// Table-row summary of one batch of counterfactuals. Means run over
/// covered rows and are `None` when no row is covered.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub coverage: f64,
    pub validity: f64,
    pub prob_plausibility: f64,
    pub l1_mean: Option<f64>,
    pub l2_mean: Option<f64>,
    pub log_density_mean: Option<f64>,
    pub lof_mean: Option<f64>,
    /// LOF values replaced by the sentinel.
    pub lof_saturated: usize,
    pub isoforest_mean: Option<f64>,
    pub wall_time_secs: f64,
    pub n_instances: usize,
}

const CSV_COLUMNS: [&str; 11] = [
    "coverage",
    "validity",
    "prob_plausibility",
    "l1_mean",
    "l2_mean",
    "log_density_mean",
    "lof_mean",
    "lof_saturated",
    "isoforest_mean",
    "wall_time_secs",
    "n_instances",
];

impl EvaluationReport {
    fn csv_values(&self) -> Vec<String> {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        vec![
            self.coverage.to_string(),
            self.validity.to_string(),
            self.prob_plausibility.to_string(),
            opt(self.l1_mean),
            opt(self.l2_mean),
            opt(self.log_density_mean),
            opt(self.lof_mean),
            self.lof_saturated.to_string(),
            opt(self.isoforest_mean),
            self.wall_time_secs.to_string(),
            self.n_instances.to_string(),
        ]
    }

    /// Appends one row to a CSV file, preceded by `label` columns; writes
    /// the header first when the file is new or empty.
    pub fn append_csv(&self, path: impl AsRef<Path>, label: &[(&str, String)]) -> Result<()> {
        let path = path.as_ref();
        let fresh = std::fs::metadata(path).map_or(true, |m| m.len() == 0);
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        let mut w = csv::Writer::from_writer(file);
        if fresh {
            let mut header: Vec<&str> = label.iter().map(|(k, _)| *k).collect();
            header.extend(CSV_COLUMNS);
            w.write_record(&header)?;
        }
        let mut row: Vec<String> = label.iter().map(|(_, v)| v.clone()).collect();
        row.extend(self.csv_values());
        w.write_record(&row)?;
        w.flush()?;
        Ok(())
    }
}

/// Fraction of requested rows that produced a finite counterfactual.
pub fn coverage(results: &[CfResult]) -> Result<f64> {
    if results.is_empty() {
        return Err(Error::contract("coverage of zero requested rows"));
    }
    Ok(results.iter().filter(|r| r.covered()).count() as f64 / results.len() as f64)
}

fn covered(results: &[CfResult]) -> Vec<&CfResult> {
    results.iter().filter(|r| r.covered()).collect()
}

fn as_matrix(rows: &[&CfResult]) -> Result<Tensor> {
    Tensor::from_rows(&rows.iter().map(|r| r.x_cf.clone()).collect::<Vec<_>>())
}

/// Fraction of covered rows the classifier assigns to their target.
pub fn validity(results: &[CfResult], clf: &Classifier) -> Result<f64> {
    let cov = covered(results);
    if cov.is_empty() {
        return Ok(0.0);
    }
    let pred = clf.predict(&as_matrix(&cov)?)?;
    Ok(pred.iter().zip(&cov).filter(|(p, r)| **p == r.target).count() as f64 / cov.len() as f64)
}

/// Fraction of covered rows whose recorded log-density reaches the target
/// class threshold.
pub fn prob_plausibility(results: &[CfResult], delta: &DensityThreshold) -> Result<f64> {
    let cov = covered(results);
    if cov.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0;
    for r in &cov {
        let lp = r
            .log_density_at_cf
            .ok_or_else(|| Error::contract("result has no recorded log-density"))?;
        if lp >= delta.for_targets(&[r.target])?[0] {
            hits += 1;
        }
    }
    Ok(hits as f64 / cov.len() as f64)
}

pub fn log_density_mean(results: &[CfResult]) -> Option<f64> {
    mean(covered(results).iter().filter_map(|r| r.log_density_at_cf))
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Assembles the full report. Log-densities under the target class are
/// (re)computed with `flow` for every covered row, so results from objectives
/// without a density term are scored the same way.
pub fn evaluate(
    results: &[CfResult],
    clf: &Classifier,
    flow: &MafFlow,
    delta: &DensityThreshold,
    x0: &Tensor,
    outliers: &OutlierModels,
    wall_time_secs: f64,
) -> Result<EvaluationReport> {
    if x0.rows() != results.len() {
        return Err(Error::Dimension {
            op: "evaluate",
            lhs: x0.shape().to_vec(),
            rhs: vec![results.len()],
        });
    }
    let mut scored = results.to_vec();
    let idx: Vec<usize> = (0..scored.len()).filter(|&i| scored[i].covered()).collect();
    if !idx.is_empty() {
        let x = Tensor::from_rows(&idx.iter().map(|&i| scored[i].x_cf.clone()).collect::<Vec<_>>())?;
        let targets: Vec<usize> = idx.iter().map(|&i| scored[i].target).collect();
        let lp = flow.log_prob(&x, &targets)?;
        for (&i, v) in idx.iter().zip(lp) {
            scored[i].log_density_at_cf = Some(v);
        }
    }
    let n_instances = results.len();
    let cov = covered(&scored);
    let (l1_mean, l2_mean, lof_mean, lof_saturated, isoforest_mean) = if cov.is_empty() {
        (None, None, None, 0, None)
    } else {
        let x = as_matrix(&cov)?;
        let x0c = x0.select_rows(&idx);
        let lof = outliers.lof.score_rows(&x);
        (
            mean(distance(&x0c, &x, DistanceKind::L1)?.into_iter()),
            mean(distance(&x0c, &x, DistanceKind::L2)?.into_iter()),
            mean(lof.iter().map(|s| s.value)),
            lof.iter().filter(|s| s.saturated).count(),
            mean(outliers.isoforest.score_rows(&x).into_iter()),
        )
    };
    Ok(EvaluationReport {
        coverage: if n_instances == 0 { 0.0 } else { coverage(&scored)? },
        validity: validity(&scored, clf)?,
        prob_plausibility: prob_plausibility(&scored, delta)?,
        l1_mean,
        l2_mean,
        log_density_mean: log_density_mean(&scored),
        lof_mean,
        lof_saturated,
        isoforest_mean,
        wall_time_secs,
        n_instances,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ppcef::CfLosses;

    fn result(x: Vec<f64>, target: usize, ld: Option<f64>, failed: bool) -> CfResult {
        CfResult {
            x_cf: x,
            target,
            iterations_used: 0,
            losses: CfLosses {
                distance: 0.0,
                validity_hinge: 0.0,
                plausibility_hinge: Some(0.0),
            },
            log_density_at_cf: ld,
            trajectory: None,
            wall_time_secs: 0.0,
            failure: failed.then(|| "nan".to_string()),
        }
    }

    #[test]
    fn coverage_fractions() {
        let ok: Vec<CfResult> = (0..10).map(|_| result(vec![0.0], 0, None, false)).collect();
        assert_eq!(coverage(&ok).unwrap(), 1.0);
        let mixed: Vec<CfResult> = (0..10).map(|i| result(vec![0.0], 0, None, i >= 6)).collect();
        assert_eq!(coverage(&mixed).unwrap(), 0.6);
        assert!(coverage(&[]).is_err());
    }

    #[test]
    fn plausibility_and_density_means() {
        let delta = DensityThreshold {
            log_delta: vec![1.0, 2.0],
        };
        let rs = vec![
            result(vec![0.0], 0, Some(1.5), false),
            result(vec![0.0], 1, Some(1.5), false),
        ];
        assert_eq!(prob_plausibility(&rs, &delta).unwrap(), 0.5);
        assert_eq!(log_density_mean(&rs[..1]), Some(1.5));
        assert_eq!(log_density_mean(&[result(vec![0.0], 0, Some(2.0), false)]), Some(2.0));
        assert_eq!(log_density_mean(&[]), None);
    }

    #[test]
    fn validity_counts_target_hits() {
        let clf = Classifier::logistic_zeros(1, 2);
        // all-zero weights: ties go to class 0
        let rs = vec![result(vec![0.3], 0, None, false), result(vec![0.3], 1, None, false)];
        assert_eq!(validity(&rs, &clf).unwrap(), 0.5);
    }

    #[test]
    fn csv_appends_header_once() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let rep = EvaluationReport {
            coverage: 1.0,
            validity: 1.0,
            prob_plausibility: 1.0,
            l1_mean: Some(0.5),
            l2_mean: None,
            log_density_mean: None,
            lof_mean: None,
            lof_saturated: 0,
            isoforest_mean: None,
            wall_time_secs: 0.1,
            n_instances: 3,
        };
        rep.append_csv(&path, &[("fold", "0".into())]).unwrap();
        rep.append_csv(&path, &[("fold", "1".into())]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("fold,coverage"));
        assert!(lines[2].starts_with("1,1,1,1,0.5,,"));
    }
}
