use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::train::{fit, Parametric, TrainConfig, TrainReport};
use crate::autodiff::{Tape, Tensor, Var};
use crate::data::Dataset;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Lr,
    Mlp,
}

/// Affine layer `x W + b` with `W` of shape `(in, out)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Dense {
    /// Uniform `±1/sqrt(in)` initialization.
    fn init(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (inputs.max(1) as f64).sqrt();
        let mut draw = |n: usize| (0..n).map(|_| rng.random_range(-bound..bound)).collect();
        Self {
            weight: Tensor::matrix(inputs, outputs, draw(inputs * outputs)).unwrap(),
            bias: Tensor::vector(draw(outputs)),
        }
    }

    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[inputs, outputs]),
            bias: Tensor::zeros(&[outputs]),
        }
    }
}

/// Softmax classifier over a stack of affine layers with relu between them.
///
/// Binary problems use two output columns so every architecture exposes the
/// same `(n, C)` probability interface.
#[derive(Clone, Debug, PartialEq)]
pub struct Classifier {
    pub arch: Arch,
    pub layers: Vec<Dense>,
    pub seed: u64,
    pub train_config: Option<TrainConfig>,
}

#[derive(Serialize, Deserialize)]
struct ClassifierDoc {
    arch: Arch,
    layer_shapes: Vec<[usize; 2]>,
    weights: Vec<Vec<Vec<f64>>>,
    bias: Vec<Vec<f64>>,
    seed: u64,
    train_config: Option<TrainConfig>,
}

impl Parametric for Classifier {
    fn parameters(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }
}

impl Classifier {
    pub fn logistic(features: usize, classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            arch: Arch::Lr,
            layers: vec![Dense::init(features, classes, &mut rng)],
            seed,
            train_config: None,
        }
    }

    /// Logistic regression with all weights and biases zero.
    pub fn logistic_zeros(features: usize, classes: usize) -> Self {
        Self {
            arch: Arch::Lr,
            layers: vec![Dense::zeros(features, classes)],
            seed: 0,
            train_config: None,
        }
    }

    /// Three affine layers `d -> hidden[0] -> hidden[1] -> C`.
    pub fn mlp(features: usize, hidden: [usize; 2], classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let widths = [features, hidden[0], hidden[1], classes];
        Self {
            arch: Arch::Mlp,
            layers: widths
                .windows(2)
                .map(|w| Dense::init(w[0], w[1], &mut rng))
                .collect(),
            seed,
            train_config: None,
        }
    }

    pub fn n_features(&self) -> usize {
        self.layers[0].weight.shape()[0]
    }

    pub fn n_classes(&self) -> usize {
        self.layers.last().unwrap().bias.len()
    }

    fn check_width(&self, x: &Tensor) -> Result<()> {
        if x.rank() != 2 || x.cols() != self.n_features() {
            return Err(Error::Dimension {
                op: "classifier",
                lhs: x.shape().to_vec(),
                rhs: vec![self.n_features()],
            });
        }
        Ok(())
    }

    /// Logits for `x` using parameters previously bound with
    /// [`Parametric::bind`].
    pub fn logits_with<'t>(&self, params: &[Var<'t>], x: Var<'t>) -> Result<Var<'t>> {
        self.check_width(&x.value_ref())?;
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, pair) in params.chunks(2).enumerate() {
            h = h.matmul(pair[0])?.add(pair[1])?;
            if i < last {
                h = h.relu()?;
            }
        }
        Ok(h)
    }

    /// Class probabilities, differentiable with respect to `x`. Parameters
    /// enter the tape as constants.
    pub fn proba_var<'t>(&self, tape: &'t Tape, x: Var<'t>) -> Result<Var<'t>> {
        let params = self.bind(tape, false);
        self.logits_with(&params, x)?.softmax()
    }

    pub fn log_proba_var<'t>(&self, tape: &'t Tape, x: Var<'t>) -> Result<Var<'t>> {
        let params = self.bind(tape, false);
        self.logits_with(&params, x)?.log_softmax()
    }

    pub fn predict_proba(&self, x: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let xv = tape.constant(x.clone());
        Ok(self.proba_var(&tape, xv)?.value())
    }

    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        let p = self.predict_proba(x)?;
        Ok((0..p.rows()).map(|r| argmax(p.row(r))).collect())
    }

    pub fn accuracy(&self, data: &Dataset) -> Result<f64> {
        let pred = self.predict(&data.features)?;
        let hits = pred.iter().zip(&data.labels).filter(|(a, b)| a == b).count();
        Ok(hits as f64 / data.len().max(1) as f64)
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = ClassifierDoc {
            arch: self.arch,
            layer_shapes: self
                .layers
                .iter()
                .map(|l| [l.weight.shape()[0], l.weight.shape()[1]])
                .collect(),
            weights: self.layers.iter().map(|l| l.weight.to_rows()).collect(),
            bias: self.layers.iter().map(|l| l.bias.data().to_vec()).collect(),
            seed: self.seed,
            train_config: self.train_config.clone(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ClassifierDoc = serde_json::from_str(text)?;
        if doc.weights.len() != doc.bias.len() || doc.weights.len() != doc.layer_shapes.len() {
            return Err(Error::Format("classifier layer counts disagree".into()));
        }
        let mut layers = Vec::with_capacity(doc.weights.len());
        for ((w, b), shape) in doc.weights.iter().zip(doc.bias).zip(&doc.layer_shapes) {
            let weight = Tensor::from_rows(w)?;
            if weight.shape() != shape || b.len() != shape[1] {
                return Err(Error::Format(format!("layer shape mismatch, expected {shape:?}")));
            }
            layers.push(Dense {
                weight,
                bias: Tensor::vector(b),
            });
        }
        Ok(Self {
            arch: doc.arch,
            layers,
            seed: doc.seed,
            train_config: doc.train_config,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Index of the largest entry; ties go to the lower index.
pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// Mean cross-entropy of a classifier on `(x, y)`.
pub(crate) fn cross_entropy<'t>(
    model: &Classifier,
    tape: &'t Tape,
    params: &[Var<'t>],
    x: Var<'t>,
    y: &[usize],
) -> Result<Var<'t>> {
    let onehot = tape.constant(Tensor::one_hot(y, model.n_classes())?);
    model
        .logits_with(params, x)?
        .log_softmax()?
        .mul(onehot)?
        .sum_rows()?
        .mean()?
        .neg()
}

/// Fits a classifier by minimizing mean cross-entropy.
pub fn train_classifier(
    data: &Dataset,
    arch: Arch,
    hidden: [usize; 2],
    cfg: &TrainConfig,
) -> Result<(Classifier, TrainReport)> {
    let present = data.class_counts().iter().filter(|&&c| c > 0).count();
    if present < 2 {
        return Err(Error::contract("classifier training needs at least two classes"));
    }
    let mut model = match arch {
        Arch::Lr => Classifier::logistic(data.dim(), data.n_classes, cfg.seed),
        Arch::Mlp => Classifier::mlp(data.dim(), hidden, data.n_classes, cfg.seed),
    };
    let report = fit(&mut model, data, cfg, &cross_entropy)?;
    model.train_config = Some(cfg.clone());
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::finite_difference_check;
    use crate::data::make_moons;

    #[test]
    fn zero_logistic_is_uniform() {
        let x = Tensor::matrix(3, 2, vec![0.1, 0.9, 0.5, 0.5, 1.0, 0.0]).unwrap();
        let p = Classifier::logistic_zeros(2, 2).predict_proba(&x).unwrap();
        assert!(p.data().iter().all(|&v| v == 0.5));
        let p = Classifier::logistic_zeros(2, 10).predict_proba(&x).unwrap();
        assert!(p.data().iter().all(|&v| (v - 0.1).abs() < 1e-15));
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[0.3, 0.7]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
    }

    #[test]
    fn width_mismatch_is_dimension_error() {
        let m = Classifier::logistic(3, 2, 0);
        let x = Tensor::zeros(&[4, 2]);
        assert!(matches!(m.predict_proba(&x), Err(Error::Dimension { .. })));
    }

    #[test]
    fn rows_on_simplex() {
        let m = Classifier::mlp(4, [8, 8], 3, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::matrix(50, 4, (0..200).map(|_| rng.random::<f64>()).collect()).unwrap();
        let p = m.predict_proba(&x).unwrap();
        for r in 0..50 {
            assert!((p.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn cross_entropy_gradient_wrt_input() {
        let m = Classifier::mlp(2, [16, 16], 2, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Tensor::matrix(5, 2, (0..10).map(|_| rng.random::<f64>()).collect()).unwrap();
        let y = [0, 1, 1, 0, 1];
        let err = finite_difference_check(
            |t, xv| {
                let params = m.bind(t, false);
                cross_entropy(&m, t, &params, xv, &y)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn single_class_training_is_rejected() {
        let mut ds = make_moons(40, 0.1, 0).unwrap();
        ds.labels.iter_mut().for_each(|y| *y = 0);
        let cfg = TrainConfig::default();
        assert!(matches!(
            train_classifier(&ds, Arch::Lr, [64, 64], &cfg),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let ds = make_moons(200, 0.1, 0).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            ..TrainConfig::default()
        };
        let (m, _) = train_classifier(&ds, Arch::Mlp, [8, 8], &cfg).unwrap();
        let back = Classifier::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back, m);
        assert_eq!(
            back.predict_proba(&ds.features).unwrap(),
            m.predict_proba(&ds.features).unwrap()
        );
    }

    #[test]
    fn training_is_seed_deterministic() {
        let ds = make_moons(200, 0.1, 0).unwrap();
        let cfg = TrainConfig {
            epochs: 5,
            ..TrainConfig::default()
        };
        let a = train_classifier(&ds, Arch::Mlp, [8, 8], &cfg).unwrap().0;
        let b = train_classifier(&ds, Arch::Mlp, [8, 8], &cfg).unwrap().0;
        assert_eq!(a, b);
    }
}
