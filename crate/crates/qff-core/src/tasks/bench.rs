//! Convergence benchmarking: steps needed to reach a target metric.

use crate::encoding::EncodingConfig;
use crate::error::Result;
use crate::mlp::MlpConfig;
use crate::model::FieldModel;
use crate::scalar::Scalar;
use crate::tasks::image::{fit_image_with, ImageTask};
use crate::tasks::sdf::{fit_sdf_with, SdfTask};
use crate::tasks::{FitOpts, StopTarget, TrainRun};

/// One benchmark entrant.
#[derive(Clone, Debug)]
pub struct BenchSpec {
    pub name: String,
    pub encoding: EncodingConfig,
    pub mlp: MlpConfig,
    pub seed: u64,
}

/// The metric target all entrants race toward.
#[derive(Clone, Copy, Debug)]
pub enum BenchTarget {
    /// First entrant's final metric becomes the target.
    BaselineFinal,
    Fixed(f64),
}

/// The shared task every entrant trains on.
#[derive(Clone, Debug)]
pub enum BenchTask {
    Image(ImageTask),
    Sdf(SdfTask),
}

impl BenchTask {
    /// Higher metric values are better for images (PSNR); lower for SDFs (MAE).
    pub fn higher_is_better(&self) -> bool {
        matches!(self, BenchTask::Image(_))
    }

    pub fn metric_name(&self) -> &'static str {
        match self {
            BenchTask::Image(_) => "psnr",
            BenchTask::Sdf(_) => "mae",
        }
    }

    fn stop_target(&self, value: f64) -> StopTarget {
        if self.higher_is_better() {
            StopTarget::MetricAtLeast(value)
        } else {
            StopTarget::MetricAtMost(value)
        }
    }

    fn fit<F: Scalar>(&self, model: &mut FieldModel<F>, opts: &FitOpts) -> Result<TrainRun> {
        match self {
            BenchTask::Image(task) => Ok(fit_image_with(task, model, opts)?.run),
            BenchTask::Sdf(task) => Ok(fit_sdf_with(task, model, opts)?.run),
        }
    }
}

/// Result row for one entrant.
#[derive(Clone, Debug)]
pub struct BenchEntry {
    pub name: String,
    /// First logged step whose metric crossed the target; `None` if never.
    pub steps_to_target: Option<u64>,
    pub final_metric: f64,
    pub target: f64,
}

/// First logged step at which the run crossed the target.
pub fn steps_to_target(run: &TrainRun, target: &StopTarget) -> Option<u64> {
    run.entries
        .iter()
        .find(|e| target.crossed(e.metric))
        .map(|e| e.step)
}

/// Train every spec on the task and report when each crossed the target.
/// Entrants after the first stop early once they cross.
pub fn bench_convergence<F: Scalar>(
    task: &BenchTask,
    specs: &[BenchSpec],
    target: BenchTarget,
    opts: &FitOpts,
) -> Result<Vec<BenchEntry>> {
    let mut entries = Vec::with_capacity(specs.len());
    let mut resolved: Option<f64> = match target {
        BenchTarget::Fixed(v) => Some(v),
        BenchTarget::BaselineFinal => None,
    };
    for spec in specs {
        let mut model = FieldModel::<F>::init(spec.encoding.clone(), spec.mlp.clone(), spec.seed)?;
        let mut run_opts = *opts;
        run_opts.stop_at = resolved.map(|v| task.stop_target(v));
        let run = task.fit(&mut model, &run_opts)?;
        let final_metric = run.final_metric().unwrap_or(f64::NAN);
        let target_value = *resolved.get_or_insert(final_metric);
        entries.push(BenchEntry {
            name: spec.name.clone(),
            steps_to_target: steps_to_target(&run, &task.stop_target(target_value)),
            final_metric,
            target: target_value,
        });
    }
    Ok(entries)
}
