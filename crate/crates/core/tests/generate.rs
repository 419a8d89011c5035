//! Counterfactual search behavior on small trained models.

use ppcef::autodiff::Tensor;
use ppcef::experiment::{prepare_fold, split_plan, DatasetSource, PreparedFold, RunConfig};
use ppcef::ppcef::{generate, wachter_generate, CfConfig};
use ppcef::Error;

fn small_config(dataset: DatasetSource) -> RunConfig {
    let mut cfg = RunConfig {
        dataset,
        ..RunConfig::default()
    };
    cfg.flow.transforms = 3;
    cfg.flow.hidden = 32;
    cfg.flow.train.epochs = 60;
    cfg
}

fn fold0(cfg: &RunConfig) -> PreparedFold {
    let data = cfg.dataset.load(cfg.seed).unwrap();
    let plan = split_plan(cfg, &data).unwrap();
    prepare_fold(cfg, &data, &plan, 0).unwrap()
}

fn rows(t: &Tensor, idx: &[usize]) -> Tensor {
    t.select_rows(idx)
}

fn cf_config() -> CfConfig {
    CfConfig {
        max_iters: 1500,
        snapshot_every: 100,
        record_trajectory: true,
        ..CfConfig::default()
    }
}

#[test]
fn logistic_accuracy_on_synthetic_data() {
    let moons = fold0(&small_config(DatasetSource::moons()));
    let acc = moons.classifier.accuracy(&moons.test).unwrap();
    assert!((acc - 0.85).abs() <= 0.05, "moons accuracy {acc}");

    let blobs = fold0(&small_config(DatasetSource::blobs()));
    let acc = blobs.classifier.accuracy(&blobs.test).unwrap();
    assert_eq!(acc, 1.0, "blobs accuracy {acc}");
}

#[test]
fn flow_samples_land_in_their_class() {
    let prep = fold0(&small_config(DatasetSource::blobs()));
    for class in 0..prep.train.n_classes {
        let samples = prep.flow.sample(class, 300, 7).unwrap();
        let pred = prep.classifier.predict(&samples).unwrap();
        let share = pred.iter().filter(|&&p| p == class).count() as f64 / 300.0;
        assert!(share >= 0.9, "class {class}: {share}");
    }
}

#[test]
fn feasible_start_is_returned_unchanged() {
    let prep = fold0(&small_config(DatasetSource::moons()));
    let pred = prep.classifier.predict(&prep.test.features).unwrap();
    let proba = prep.classifier.predict_proba(&prep.test.features).unwrap();
    let lp = prep.flow.log_prob(&prep.test.features, &pred).unwrap();
    let idx: Vec<usize> = (0..prep.test.len())
        .filter(|&i| proba.row(i)[pred[i]] > 0.6 && lp[i] > prep.delta.log_delta[pred[i]] + 0.1)
        .take(10)
        .collect();
    assert!(!idx.is_empty());
    let x0 = rows(&prep.test.features, &idx);
    let targets: Vec<usize> = idx.iter().map(|&i| pred[i]).collect();
    let res = generate(&x0, &targets, &prep.classifier, &prep.flow, &prep.delta, &cf_config()).unwrap();
    for (r, cf) in res.iter().enumerate() {
        assert_eq!(cf.x_cf, x0.row(r), "row {r}");
        assert_eq!(cf.losses.distance, 0.0);
        assert_eq!(cf.losses.validity_hinge, 0.0);
        assert_eq!(cf.losses.plausibility_hinge, Some(0.0));
    }
}

#[test]
fn trajectory_runs_from_start_to_result() {
    let prep = fold0(&small_config(DatasetSource::moons()));
    let x0 = rows(&prep.test.features, &(0..8).collect::<Vec<_>>());
    let targets = &prep.targets[..8];
    let cfg = cf_config();
    let res = generate(&x0, targets, &prep.classifier, &prep.flow, &prep.delta, &cfg).unwrap();
    for (r, cf) in res.iter().enumerate() {
        let traj = cf.trajectory.as_ref().unwrap();
        assert_eq!(traj[0].iteration, 0);
        assert_eq!(traj[0].x, x0.row(r));
        assert_eq!(traj.last().unwrap().x, cf.x_cf);
        for p in &traj[..traj.len() - 1] {
            assert_eq!(p.iteration % cfg.snapshot_every, 0);
        }
        assert!(traj.windows(2).all(|w| w[0].iteration <= w[1].iteration));
        assert!(traj.iter().all(|p| p.log_density.is_some() && p.plausibility_hinge.is_some()));
    }
}

#[test]
fn wachter_without_distance_weight_still_flips() {
    let prep = fold0(&small_config(DatasetSource::moons()));
    let x0 = rows(&prep.test.features, &(0..20).collect::<Vec<_>>());
    let targets = &prep.targets[..20];
    let cfg = CfConfig {
        c_reg: 0.0,
        ..cf_config()
    };
    let res = wachter_generate(&x0, targets, &prep.classifier, &cfg).unwrap();
    let pred = prep
        .classifier
        .predict(&Tensor::from_rows(&res.iter().map(|r| r.x_cf.clone()).collect::<Vec<_>>()).unwrap())
        .unwrap();
    assert!(pred.iter().zip(targets).all(|(p, t)| p == t));
    assert!(res.iter().all(|r| r.losses.plausibility_hinge.is_none() && r.trajectory.is_some()));
}

#[test]
fn malformed_requests_are_rejected() {
    let prep = fold0(&small_config(DatasetSource::moons()));
    let x0 = rows(&prep.test.features, &[0, 1]);
    let cfg = cf_config();
    let run = |x: &Tensor, t: &[usize], c: &CfConfig| {
        generate(x, t, &prep.classifier, &prep.flow, &prep.delta, c)
    };

    assert!(run(&x0, &[0], &cfg).is_err(), "target count");
    assert!(run(&x0, &[0, 5], &cfg).is_err(), "target class");
    let wide = Tensor::zeros(&[2, 3]);
    assert!(run(&wide, &[0, 1], &cfg).is_err(), "feature count");
    let bad = CfConfig {
        lambda: -1.0,
        ..cf_config()
    };
    assert!(matches!(run(&x0, &[0, 1], &bad), Err(Error::Config(_))));
}
