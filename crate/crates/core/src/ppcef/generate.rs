//! Batched gradient search over inputs with frozen models.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::losses::{
    cross_entropy_var, distance, distance_var, plausibility_hinge_var, validity_hinge_var,
    DistanceKind,
};
use super::optim::{adam_step, AdamState};
use super::threshold::DensityThreshold;
use crate::autodiff::{Tape, Tensor};
use crate::density::MafFlow;
use crate::error::{Error, Result};
use crate::models::Classifier;

/// Term that pulls `x'` toward the target class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidityLoss {
    #[default]
    Hinge,
    /// `-log p(t | x')`, for ablations.
    CrossEntropy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CfConfig {
    pub lambda: f64,
    pub epsilon: f64,
    pub distance: DistanceKind,
    pub learning_rate: f64,
    pub max_iters: usize,
    pub snapshot_every: usize,
    /// Objective change below which a feasible row stops.
    pub convergence_tol: f64,
    /// Kept for provenance; the search itself is deterministic.
    pub seed: u64,
    pub validity_loss: ValidityLoss,
    /// Distance weight of the Wachter objective.
    pub c_reg: f64,
    /// Per-row gradient norm cap; `0` disables clipping.
    pub grad_clip: f64,
    pub record_trajectory: bool,
}

impl Default for CfConfig {
    fn default() -> Self {
        Self {
            lambda: 100.0,
            epsilon: 1e-3,
            distance: DistanceKind::L2,
            learning_rate: 5e-3,
            max_iters: 5000,
            snapshot_every: 150,
            convergence_tol: 1e-7,
            seed: 0,
            validity_loss: ValidityLoss::Hinge,
            c_reg: 1.0,
            grad_clip: 1e3,
            record_trajectory: false,
        }
    }
}

impl CfConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("counterfactual config: {what}")));
        if !(self.lambda > 0.0) {
            return bad("lambda must be positive");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be positive");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if self.max_iters < 1 {
            return bad("max_iters must be at least 1");
        }
        if self.snapshot_every < 1 {
            return bad("snapshot_every must be at least 1");
        }
        if !(self.grad_clip >= 0.0) {
            return bad("grad_clip must be non-negative");
        }
        if !(self.c_reg >= 0.0) {
            return bad("c_reg must be non-negative");
        }
        if !(self.convergence_tol >= 0.0) {
            return bad("convergence_tol must be non-negative");
        }
        Ok(())
    }
}

/// Loss terms at the returned point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CfLosses {
    pub distance: f64,
    pub validity_hinge: f64,
    /// Absent for the Wachter objective.
    pub plausibility_hinge: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub iteration: usize,
    pub x: Vec<f64>,
    pub log_density: Option<f64>,
    pub validity_hinge: f64,
    pub plausibility_hinge: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CfResult {
    pub x_cf: Vec<f64>,
    pub target: usize,
    pub iterations_used: usize,
    pub losses: CfLosses,
    pub log_density_at_cf: Option<f64>,
    pub trajectory: Option<Vec<TrajectoryPoint>>,
    /// Seconds from the start of the batch until this row stopped.
    pub wall_time_secs: f64,
    /// Set when the objective turned non-finite for this row.
    pub failure: Option<String>,
}

impl CfResult {
    pub fn covered(&self) -> bool {
        self.failure.is_none() && self.x_cf.iter().all(|v| v.is_finite())
    }
}

#[derive(Clone, Copy)]
enum Objective<'a> {
    Ppcef {
        flow: &'a MafFlow,
        delta: &'a DensityThreshold,
    },
    Wachter,
}

/// Per-row values of one objective evaluation.
#[derive(Clone, Debug)]
struct RowEval {
    objective: f64,
    validity: f64,
    plausibility: Option<f64>,
    log_density: Option<f64>,
    grad: Vec<f64>,
}

impl RowEval {
    fn feasible(&self) -> bool {
        self.validity == 0.0 && self.plausibility.is_none_or(|p| p == 0.0)
    }
}

fn evaluate(
    clf: &Classifier,
    objective: Objective<'_>,
    cfg: &CfConfig,
    x0: &Tensor,
    x: &Tensor,
    targets: &[usize],
) -> Result<Vec<RowEval>> {
    let tape = Tape::new();
    let xv = tape.param(x.clone());
    let x0v = tape.constant(x0.clone());
    let log_probs = clf.log_proba_var(&tape, xv)?;
    let validity = validity_hinge_var(log_probs.exp()?, targets, cfg.epsilon)?;
    let dist = distance_var(x0v, xv, cfg.distance)?;
    let (total, plaus, log_density) = match objective {
        Objective::Ppcef { flow, delta } => {
            let lp = flow.log_prob_var(xv, targets)?;
            let plaus = plausibility_hinge_var(lp, &delta.for_targets(targets)?)?;
            let pull = match cfg.validity_loss {
                ValidityLoss::Hinge => validity,
                ValidityLoss::CrossEntropy => cross_entropy_var(log_probs, targets)?,
            };
            let f = dist.add(pull.add(plaus)?.scale(cfg.lambda)?)?;
            (f, Some(plaus), Some(lp))
        }
        Objective::Wachter => {
            let ce = cross_entropy_var(log_probs, targets)?;
            (ce.add(dist.scale(cfg.c_reg)?)?, None, None)
        }
    };
    let per_row = total.value();
    let grads = tape.backward(total.sum()?)?;
    let g = grads.wrt(xv);
    if !g.all_finite() {
        return Err(Error::Numeric("counterfactual gradient".into()));
    }
    let validity = validity.value();
    let plaus = plaus.map(|v| v.value());
    let log_density = log_density.map(|v| v.value());
    Ok((0..targets.len())
        .map(|r| RowEval {
            objective: per_row.data()[r],
            validity: validity.data()[r],
            plausibility: plaus.as_ref().map(|p| p.data()[r]),
            log_density: log_density.as_ref().map(|p| p.data()[r]),
            grad: g.row(r).to_vec(),
        })
        .collect())
}

struct RowState {
    x: Vec<f64>,
    adam: AdamState,
    prev_objective: Option<f64>,
    best: Option<(Vec<f64>, RowEval)>,
    last: Option<(Vec<f64>, RowEval)>,
    trajectory: Vec<TrajectoryPoint>,
    result: Option<CfResult>,
}

fn point(iteration: usize, x: &[f64], e: &RowEval) -> TrajectoryPoint {
    TrajectoryPoint {
        iteration,
        x: x.to_vec(),
        log_density: e.log_density,
        validity_hinge: e.validity,
        plausibility_hinge: e.plausibility,
    }
}

fn check_inputs(x0: &Tensor, targets: &[usize], clf: &Classifier) -> Result<()> {
    if x0.rank() != 2 || x0.rows() != targets.len() || x0.cols() != clf.n_features() {
        return Err(Error::Dimension {
            op: "generate",
            lhs: x0.shape().to_vec(),
            rhs: vec![targets.len(), clf.n_features()],
        });
    }
    if let Some(&t) = targets.iter().find(|&&t| t >= clf.n_classes()) {
        return Err(Error::contract(format!("target {t} out of range")));
    }
    if !x0.all_finite() {
        return Err(Error::contract("non-finite starting point"));
    }
    Ok(())
}

/// PPCEF counterfactuals: minimizes `d(x0, x') + λ (ℓ_v + ℓ_p)` per row,
/// starting from `x0`, with the classifier and flow frozen.
///
/// Rows stop early once both hinges are zero and the objective has settled.
/// The returned point is the lowest-objective iterate at which both hinges
/// were zero, or the final iterate if none was.
pub fn generate(
    x0: &Tensor,
    targets: &[usize],
    clf: &Classifier,
    flow: &MafFlow,
    delta: &DensityThreshold,
    cfg: &CfConfig,
) -> Result<Vec<CfResult>> {
    if flow.dim != clf.n_features() || delta.log_delta.len() != clf.n_classes() {
        return Err(Error::contract("classifier, flow and threshold disagree on shape"));
    }
    optimize(x0, targets, clf, Objective::Ppcef { flow, delta }, cfg)
}

/// Wachter counterfactuals: minimizes `CE(h(x'), t) + C · d(x0, x')`.
pub fn wachter_generate(
    x0: &Tensor,
    targets: &[usize],
    clf: &Classifier,
    cfg: &CfConfig,
) -> Result<Vec<CfResult>> {
    optimize(x0, targets, clf, Objective::Wachter, cfg)
}

fn optimize(
    x0: &Tensor,
    targets: &[usize],
    clf: &Classifier,
    objective: Objective<'_>,
    cfg: &CfConfig,
) -> Result<Vec<CfResult>> {
    cfg.validate()?;
    check_inputs(x0, targets, clf)?;
    let start = Instant::now();
    let d = x0.cols();
    let mut rows: Vec<RowState> = (0..targets.len())
        .map(|r| RowState {
            x: x0.row(r).to_vec(),
            adam: AdamState::new(d),
            prev_objective: None,
            best: None,
            last: None,
            trajectory: Vec::new(),
            result: None,
        })
        .collect();

    for iter in 0..=cfg.max_iters {
        let active: Vec<usize> = (0..rows.len()).filter(|&r| rows[r].result.is_none()).collect();
        if active.is_empty() {
            break;
        }
        let xa = Tensor::from_rows(&active.iter().map(|&r| rows[r].x.clone()).collect::<Vec<_>>())?;
        let x0a = x0.select_rows(&active);
        let ta: Vec<usize> = active.iter().map(|&r| targets[r]).collect();
        let evals: Vec<Result<RowEval>> = match evaluate(clf, objective, cfg, &x0a, &xa, &ta) {
            Ok(e) => e.into_iter().map(Ok).collect(),
            // isolate the rows that fail
            Err(Error::Numeric(_) | Error::Domain { .. }) => (0..active.len())
                .map(|i| {
                    let one = [i];
                    evaluate(clf, objective, cfg, &x0a.select_rows(&one), &xa.select_rows(&one), &ta[i..=i])
                        .map(|mut v| v.remove(0))
                })
                .collect(),
            Err(e) => return Err(e),
        };

        for (&r, eval) in active.iter().zip(evals) {
            let row = &mut rows[r];
            let e = match eval {
                Ok(e) => e,
                Err(err) => {
                    log::warn!("row {r}: {err}");
                    row.result = Some(finish(row, r, targets[r], x0, iter, cfg, start, Some(err.to_string()))?);
                    continue;
                }
            };
            if cfg.record_trajectory && iter % cfg.snapshot_every == 0 {
                row.trajectory.push(point(iter, &row.x, &e));
            }
            let feasible = e.feasible();
            if feasible && row.best.as_ref().is_none_or(|(_, b)| e.objective < b.objective) {
                row.best = Some((row.x.clone(), e.clone()));
            }
            let settled = row
                .prev_objective
                .is_some_and(|p| (p - e.objective).abs() < cfg.convergence_tol);
            row.prev_objective = Some(e.objective);
            row.last = Some((row.x.clone(), e));
            if (feasible && settled) || iter == cfg.max_iters {
                row.result = Some(finish(row, r, targets[r], x0, iter, cfg, start, None)?);
                continue;
            }
            let mut grad = row.last.as_ref().expect("just set").1.grad.clone();
            clip_norm(&mut grad, cfg.grad_clip);
            adam_step(&mut row.x, &grad, &mut row.adam, cfg.learning_rate);
            if row.x.iter().any(|v| !v.is_finite()) {
                let msg = "non-finite iterate".to_string();
                row.x = row.last.as_ref().expect("just set").0.clone();
                row.result = Some(finish(row, r, targets[r], x0, iter, cfg, start, Some(msg))?);
            }
        }
    }
    Ok(rows
        .into_iter()
        .map(|r| r.result.expect("every row finishes by max_iters"))
        .collect())
}

fn clip_norm(g: &mut [f64], cap: f64) {
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    if cap > 0.0 && norm > cap {
        for v in g.iter_mut() {
            *v *= cap / norm;
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn finish(
    row: &mut RowState,
    r: usize,
    target: usize,
    x0: &Tensor,
    iter: usize,
    cfg: &CfConfig,
    start: Instant,
    failure: Option<String>,
) -> Result<CfResult> {
    let chosen = row.best.take().or_else(|| row.last.take());
    let (x_cf, eval) = match chosen {
        Some(c) => (c.0, Some(c.1)),
        None => (row.x.clone(), None),
    };
    let exact = distance(
        &Tensor::matrix(1, x0.cols(), x0.row(r).to_vec())?,
        &Tensor::matrix(1, x_cf.len(), x_cf.clone())?,
        cfg.distance,
    )?[0];
    let trajectory = if cfg.record_trajectory {
        let mut t = std::mem::take(&mut row.trajectory);
        if let Some(e) = &eval {
            let end = point(iter, &x_cf, e);
            if t.last() != Some(&end) {
                t.push(end);
            }
        }
        Some(t)
    } else {
        None
    };
    Ok(CfResult {
        target,
        iterations_used: iter,
        losses: CfLosses {
            distance: exact,
            validity_hinge: eval.as_ref().map_or(f64::NAN, |e| e.validity),
            plausibility_hinge: eval.as_ref().and_then(|e| e.plausibility),
        },
        log_density_at_cf: eval.as_ref().and_then(|e| e.log_density),
        trajectory,
        wall_time_secs: start.elapsed().as_secs_f64(),
        failure,
        x_cf,
    })
}

/// Binary: the other class. Multiclass: the second most probable class
/// under the classifier at `x0`.
pub fn default_targets(clf: &Classifier, x0: &Tensor) -> Result<Vec<usize>> {
    let p = clf.predict_proba(x0)?;
    Ok((0..p.rows())
        .map(|r| {
            let row = p.row(r);
            let mut order: Vec<usize> = (0..row.len()).collect();
            order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
            order[1]
        })
        .collect())
}
