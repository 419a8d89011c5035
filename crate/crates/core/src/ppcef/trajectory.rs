use std::io::Write;

use super::generate::TrajectoryPoint;
use crate::error::{Error, Result};

/// Writes one row per snapshot with header
/// `iteration,dim_0,...,dim_{d-1},log_density,validity_hinge,plausibility_hinge`.
/// Missing values (no flow in the objective) are left empty.
pub fn write_trajectory_csv<W: Write>(out: W, points: &[TrajectoryPoint]) -> Result<()> {
    let d = points
        .first()
        .map(|p| p.x.len())
        .ok_or_else(|| Error::contract("empty trajectory"))?;
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["iteration".to_string()];
    header.extend((0..d).map(|j| format!("dim_{j}")));
    header.extend(["log_density", "validity_hinge", "plausibility_hinge"].map(String::from));
    w.write_record(&header)?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for p in points {
        let mut rec = vec![p.iteration.to_string()];
        rec.extend(p.x.iter().map(|v| v.to_string()));
        rec.push(opt(p.log_density));
        rec.push(p.validity_hinge.to_string());
        rec.push(opt(p.plausibility_hinge));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
