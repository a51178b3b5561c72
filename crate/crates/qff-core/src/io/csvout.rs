//! CSV writers for metrics, convergence tables, and SDF grid dumps.
//!
//! Plain RFC-4180 subset: comma separators, `\n` line ends, no quoting
//! (field content is restricted to numbers and identifier-safe run names),
//! `.` decimal separator always. Infinite metrics are written as `inf`.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::Result;
use crate::tasks::sdf::SdfGrid;
use crate::tasks::TrainRun;

fn fmt_f64(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v}")
    }
}

/// `metrics.csv`: one row per evaluation with the training loss at that step.
pub fn write_metrics(path: &Path, run: &TrainRun, metric_name: &str) -> Result<()> {
    let mut out = fs::File::create(path)?;
    writeln!(out, "step,loss,{metric_name},seconds")?;
    for e in &run.entries {
        writeln!(
            out,
            "{},{},{},{}",
            e.step,
            fmt_f64(e.loss),
            fmt_f64(e.metric),
            fmt_f64(e.seconds)
        )?;
    }
    Ok(())
}

/// `convergence.csv`: steps needed to reach the target metric per config.
pub fn write_convergence(path: &Path, rows: &[(String, Option<u64>, f64)]) -> Result<()> {
    let mut out = fs::File::create(path)?;
    writeln!(out, "config,steps_to_target,final_metric")?;
    for (name, steps, final_metric) in rows {
        let steps = match steps {
            Some(s) => s.to_string(),
            None => "inf".into(),
        };
        writeln!(out, "{name},{steps},{}", fmt_f64(*final_metric))?;
    }
    Ok(())
}

/// `sdf_grid.csv`: predicted and true distance at every grid point.
pub fn write_sdf_grid(path: &Path, grid: &SdfGrid) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(out, "x,y,z,pred,true")?;
    for (point, (pred, truth)) in grid
        .points
        .iter()
        .zip(grid.pred.iter().zip(grid.truth.iter()))
    {
        writeln!(
            out,
            "{},{},{},{},{}",
            fmt_f64(point[0]),
            fmt_f64(point[1]),
            fmt_f64(point[2]),
            fmt_f64(*pred),
            fmt_f64(*truth)
        )?;
    }
    out.flush()?;
    Ok(())
}
