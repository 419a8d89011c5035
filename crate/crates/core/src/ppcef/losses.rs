//! Hinge penalties and distances, both as tape expressions and as plain
//! per-row values.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceKind {
    L1,
    #[default]
    L2,
}

/// Smoothing inside the L2 square root so its gradient exists at zero.
pub const L2_SMOOTHING: f64 = 1e-12;

/// Validity hinge per row. Two classes use `max(0.5 + ε - p_t, 0)`; more
/// classes use `max(max_{c≠t} p_c + ε - p_t, 0)`.
pub fn validity_hinge_var<'t>(probs: Var<'t>, targets: &[usize], epsilon: f64) -> Result<Var<'t>> {
    let tape = probs.tape();
    let classes = probs.value_ref().cols();
    let onehot = Tensor::one_hot(targets, classes)?;
    let rest = onehot.map(|v| 1.0 - v);
    let p_t = probs.mul(tape.constant(onehot))?.sum_rows()?;
    if classes == 2 {
        p_t.neg()?.add_scalar(0.5 + epsilon)?.relu()
    } else {
        let rival = probs.mul(tape.constant(rest))?.row_max()?;
        rival.add_scalar(epsilon)?.sub(p_t)?.relu()
    }
}

/// `max(log δ_t - log p(x | t), 0)` per row.
pub fn plausibility_hinge_var<'t>(log_prob: Var<'t>, log_delta: &[f64]) -> Result<Var<'t>> {
    let delta = log_prob.tape().constant(Tensor::vector(log_delta.to_vec()));
    delta.sub(log_prob)?.relu()
}

/// Per-row distance on the tape. L2 is `sqrt(s + 1e-12) - 1e-6`, which is
/// exactly zero at `x = x0` and differentiable there.
pub fn distance_var<'t>(x0: Var<'t>, x: Var<'t>, kind: DistanceKind) -> Result<Var<'t>> {
    let diff = x.sub(x0)?;
    match kind {
        DistanceKind::L1 => diff.abs()?.sum_rows(),
        DistanceKind::L2 => diff
            .square()?
            .sum_rows()?
            .add_scalar(L2_SMOOTHING)?
            .sqrt()?
            .add_scalar(-L2_SMOOTHING.sqrt()),
    }
}

/// Cross-entropy `-log p_t` per row from log-probabilities.
pub fn cross_entropy_var<'t>(log_probs: Var<'t>, targets: &[usize]) -> Result<Var<'t>> {
    let classes = log_probs.value_ref().cols();
    let onehot = log_probs.tape().constant(Tensor::one_hot(targets, classes)?);
    log_probs.mul(onehot)?.sum_rows()?.neg()
}

fn eval_rows(f: impl for<'t> FnOnce(&'t Tape) -> Result<Var<'t>>) -> Result<Vec<f64>> {
    let tape = Tape::new();
    Ok(f(&tape)?.value().into_data())
}

/// Two-class validity hinge `max(0.5 + ε - p_t, 0)`.
pub fn validity_loss_binary(probs: &Tensor, targets: &[usize], epsilon: f64) -> Result<Vec<f64>> {
    if probs.cols() != 2 {
        return Err(Error::Dimension {
            op: "validity_loss_binary",
            lhs: probs.shape().to_vec(),
            rhs: vec![2],
        });
    }
    eval_rows(|t| validity_hinge_var(t.constant(probs.clone()), targets, epsilon))
}

/// Multiclass validity hinge `max(max_{c≠t} p_c + ε - p_t, 0)`, also for
/// two classes.
pub fn validity_loss_multiclass(probs: &Tensor, targets: &[usize], epsilon: f64) -> Result<Vec<f64>> {
    if probs.cols() < 2 {
        return Err(Error::contract("multiclass validity needs at least two classes"));
    }
    let onehot = Tensor::one_hot(targets, probs.cols())?;
    Ok((0..probs.rows())
        .map(|r| {
            let row = probs.row(r);
            let t = targets[r];
            let rival = row
                .iter()
                .zip(onehot.row(r))
                .filter(|(_, &o)| o == 0.0)
                .map(|(&p, _)| p)
                .fold(f64::NEG_INFINITY, f64::max);
            (rival + epsilon - row[t]).max(0.0)
        })
        .collect())
}

pub fn plausibility_loss(log_prob: &[f64], log_delta: &[f64]) -> Vec<f64> {
    log_prob
        .iter()
        .zip(log_delta)
        .map(|(lp, d)| (d - lp).max(0.0))
        .collect()
}

/// Exact per-row L1 or L2 distance.
pub fn distance(x0: &Tensor, x: &Tensor, kind: DistanceKind) -> Result<Vec<f64>> {
    if x0.shape() != x.shape() {
        return Err(Error::Dimension {
            op: "distance",
            lhs: x0.shape().to_vec(),
            rhs: x.shape().to_vec(),
        });
    }
    Ok((0..x.rows())
        .map(|r| {
            let it = x0.row(r).iter().zip(x.row(r)).map(|(a, b)| b - a);
            match kind {
                DistanceKind::L1 => it.map(f64::abs).sum(),
                DistanceKind::L2 => it.map(|v| v * v).sum::<f64>().sqrt(),
            }
        })
        .collect())
}
