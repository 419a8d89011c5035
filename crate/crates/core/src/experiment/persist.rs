use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::pipeline::{FoldRun, PreparedFold};
use crate::autodiff::Tensor;
use crate::error::Result;
use crate::models::Classifier;
use crate::ppcef::CfResult;

pub fn fold_dir(out: &Path, fold: usize) -> PathBuf {
    out.join(format!("fold_{fold}"))
}

fn write_json<T: Serialize>(path: PathBuf, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

/// One row per test instance, in scaled feature units:
/// `x0_<f>...,cf_<f>...,target,log_density,valid`.
pub fn write_counterfactuals_csv<W: Write>(
    out: W,
    names: &[String],
    x0: &Tensor,
    results: &[CfResult],
    clf: &Classifier,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = names.iter().map(|n| format!("x0_{n}")).collect();
    header.extend(names.iter().map(|n| format!("cf_{n}")));
    header.extend(["target", "log_density", "valid"].map(String::from));
    w.write_record(&header)?;
    for (i, r) in results.iter().enumerate() {
        let valid = r.covered()
            && clf.predict(&Tensor::matrix(1, r.x_cf.len(), r.x_cf.clone())?)?[0] == r.target;
        let mut row: Vec<String> = x0.row(i).iter().map(|v| v.to_string()).collect();
        row.extend(r.x_cf.iter().map(|v| v.to_string()));
        row.push(r.target.to_string());
        row.push(r.log_density_at_cf.map(|v| v.to_string()).unwrap_or_default());
        row.push(u8::from(valid).to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes models, threshold, counterfactuals, trajectories and the fold
/// report into `dir`.
pub fn save_fold(dir: &Path, prep: &PreparedFold, run: &FoldRun) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    prep.classifier.save(dir.join("classifier.json"))?;
    prep.flow.save(dir.join("flow.json"))?;
    write_json(dir.join("delta.json"), &prep.delta)?;
    write_json(dir.join("scaler.json"), &prep.scaler)?;
    write_json(dir.join("test_indices.json"), &prep.test_indices)?;
    write_json(dir.join("report.json"), &run.report)?;
    let trajectories: Vec<_> = run.results.iter().map(|r| r.trajectory.as_ref()).collect();
    write_json(dir.join("trajectories.json"), &trajectories)?;
    let file = std::fs::File::create(dir.join("counterfactuals.csv"))?;
    write_counterfactuals_csv(
        std::io::BufWriter::new(file),
        &prep.test.feature_names,
        &prep.test.features,
        &run.results,
        &prep.classifier,
    )
}
