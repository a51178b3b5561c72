//! Desk-scale experiment drivers: image regression, analytic SDF fitting,
//! and convergence benchmarking.

pub mod bench;
pub mod image;
pub mod sdf;
pub mod synth;

/// One logged evaluation during training.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogEntry {
    pub step: u64,
    /// Training-batch loss at this step (the evaluation loss for step 0).
    pub loss: f64,
    /// Task metric: PSNR in dB for images, grid MAE for SDFs.
    pub metric: f64,
    /// Wall-clock seconds since the run started.
    pub seconds: f64,
}

/// Step log of a training run; strictly increasing in step.
#[derive(Clone, Debug, Default)]
pub struct TrainRun {
    pub entries: Vec<LogEntry>,
}

impl TrainRun {
    pub fn push(&mut self, entry: LogEntry) {
        if let Some(last) = self.entries.last() {
            assert!(
                entry.step > last.step,
                "train log must be strictly increasing in step ({} after {})",
                entry.step,
                last.step
            );
        }
        self.entries.push(entry);
    }

    pub fn final_metric(&self) -> Option<f64> {
        self.entries.last().map(|e| e.metric)
    }
}

/// Early-stop rule on the evaluation metric.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StopTarget {
    /// Stop once the metric is at least this value (e.g. PSNR).
    MetricAtLeast(f64),
    /// Stop once the metric is at most this value (e.g. MAE).
    MetricAtMost(f64),
}

impl StopTarget {
    pub fn crossed(&self, metric: f64) -> bool {
        match *self {
            StopTarget::MetricAtLeast(t) => metric >= t,
            StopTarget::MetricAtMost(t) => metric <= t,
        }
    }
}

/// Knobs shared by the fit drivers.
#[derive(Clone, Copy, Debug)]
pub struct FitOpts {
    pub steps: u64,
    /// Evaluate every this many steps (plus step 0 and the final step).
    pub eval_interval: u64,
    /// Stop as soon as an evaluation crosses this target.
    pub stop_at: Option<StopTarget>,
    /// Feature-bank learning rate override.
    pub bank_lr: Option<f64>,
    /// MLP learning rate override.
    pub mlp_lr: Option<f64>,
}

impl FitOpts {
    pub fn new(steps: u64, eval_interval: u64) -> Self {
        FitOpts {
            steps,
            eval_interval: eval_interval.max(1),
            stop_at: None,
            bank_lr: None,
            mlp_lr: None,
        }
    }

    pub(crate) fn should_eval(&self, step: u64) -> bool {
        step == self.steps || step % self.eval_interval == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    #[should_panic(expected = "strictly increasing")]
    fn log_rejects_non_increasing_steps() {
        let mut run = TrainRun::default();
        run.push(LogEntry { step: 5, loss: 0.0, metric: 0.0, seconds: 0.0 });
        run.push(LogEntry { step: 5, loss: 0.0, metric: 0.0, seconds: 0.0 });
    }

    #[test]
    fn stop_targets() {
        assert!(StopTarget::MetricAtLeast(20.0).crossed(20.0));
        assert!(!StopTarget::MetricAtLeast(20.0).crossed(19.9));
        assert!(StopTarget::MetricAtMost(0.01).crossed(0.005));
        assert!(!StopTarget::MetricAtMost(0.01).crossed(0.02));
    }
}
