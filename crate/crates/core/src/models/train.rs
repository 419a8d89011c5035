//! Minibatch training shared by the classifiers and the flow.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::data::{holdout_split, Dataset};
use crate::error::{Error, Result};
use crate::ppcef::optim::{adam_step, AdamState};

/// Models whose parameters are an ordered list of tensors.
pub trait Parametric {
    fn parameters(&self) -> Vec<&Tensor>;
    fn parameters_mut(&mut self) -> Vec<&mut Tensor>;

    /// Registers every parameter on `tape`, as trainable leaves or as
    /// constants.
    fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> Vec<Var<'t>> {
        self.parameters()
            .into_iter()
            .map(|p| tape.leaf(p.clone(), trainable))
            .collect()
    }
}

/// Standard deviation of the noise added to flow training features.
pub const FLOW_INPUT_NOISE: f64 = 0.06;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub weight_decay: f64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub validation_fraction: f64,
    /// Fresh `N(0, σ²)` noise added to the training features every epoch.
    pub input_noise: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 200,
            batch_size: 128,
            seed: 0,
            weight_decay: 0.0,
            patience: 20,
            validation_fraction: 0.1,
            input_noise: 0.0,
        }
    }
}

impl TrainConfig {
    /// Defaults for flow training: the classifier defaults plus input noise.
    pub fn flow() -> Self {
        Self {
            input_noise: FLOW_INPUT_NOISE,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0)
            || self.epochs < 1
            || self.batch_size < 1
            || !(self.input_noise >= 0.0)
        {
            return Err(Error::Config(format!(
                "invalid training config: lr={} epochs={} batch={}",
                self.learning_rate, self.epochs, self.batch_size
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_validation_loss: f64,
}

/// Per-batch mean loss of a model on `(x, y)`.
pub(crate) type LossFn<M> =
    dyn for<'t> Fn(&M, &'t Tape, &[Var<'t>], Var<'t>, &[usize]) -> Result<Var<'t>>;

fn eval_loss<M>(model: &M, data: &Dataset, loss: &LossFn<M>) -> Result<f64>
where
    M: Parametric,
{
    let tape = Tape::new();
    let params = model.bind(&tape, false);
    let x = tape.constant(data.features.clone());
    Ok(loss(model, &tape, &params, x, &data.labels)?.value().item())
}

/// Adam over shuffled minibatches with early stopping on a stratified
/// validation split; the parameters of the best validation epoch are kept.
pub(crate) fn fit<M>(
    model: &mut M,
    data: &Dataset,
    cfg: &TrainConfig,
    loss: &LossFn<M>,
) -> Result<TrainReport>
where
    M: Parametric,
{
    cfg.validate()?;
    let plan = holdout_split(data, cfg.validation_fraction, cfg.seed ^ 0x5eed)?;
    let (train_idx, val_idx) = plan.train_test(0);
    let train = data.subset(&train_idx);
    let val = if val_idx.is_empty() {
        train.clone()
    } else {
        data.subset(&val_idx)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, cfg.input_noise).map_err(|e| Error::contract(e.to_string()))?;
    let mut states: Vec<AdamState> = model
        .parameters()
        .iter()
        .map(|p| AdamState::new(p.len()))
        .collect();

    let mut best_loss = eval_loss(model, &val, loss)?;
    let mut best_params: Vec<Tensor> = model.parameters().into_iter().cloned().collect();
    let mut report = TrainReport {
        epochs_run: 0,
        best_epoch: 0,
        best_validation_loss: best_loss,
    };
    let mut stale = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut features = train.features.clone();
        if cfg.input_noise > 0.0 {
            for v in features.data_mut() {
                *v += noise.sample(&mut rng);
            }
        }
        for (batch_no, batch) in order.chunks(cfg.batch_size).enumerate() {
            let xb = features.select_rows(batch);
            let yb: Vec<usize> = batch.iter().map(|&i| train.labels[i]).collect();
            let tape = Tape::new();
            let params = model.bind(&tape, true);
            let x = tape.constant(xb);
            let value = loss(model, &tape, &params, x, &yb).map_err(|e| Error::Training {
                epoch,
                batch: batch_no,
                detail: e.to_string(),
            })?;
            if !value.value_ref().item().is_finite() {
                return Err(Error::Training {
                    epoch,
                    batch: batch_no,
                    detail: "non-finite loss".into(),
                });
            }
            let grads = tape.backward(value)?;
            for ((p, var), state) in model.parameters_mut().into_iter().zip(&params).zip(&mut states) {
                let mut g = grads.wrt(*var);
                if cfg.weight_decay > 0.0 {
                    for (gi, pi) in g.data_mut().iter_mut().zip(p.data()) {
                        *gi += cfg.weight_decay * pi;
                    }
                }
                adam_step(p.data_mut(), g.data(), state, cfg.learning_rate);
            }
        }
        report.epochs_run = epoch;
        let val_loss = eval_loss(model, &val, loss)?;
        if val_loss < best_loss {
            best_loss = val_loss;
            best_params = model.parameters().into_iter().cloned().collect();
            report.best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    for (p, best) in model.parameters_mut().into_iter().zip(best_params) {
        *p = best;
    }
    report.best_validation_loss = best_loss;
    Ok(report)
}
