//! Analytic signed-distance fitting in `[-1, 1]^3` with an optional eikonal
//! penalty on the model's position gradient.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{NodeId, Tape};
use crate::error::{QffError, Result};
use crate::model::FieldModel;
use crate::optim::{Adam, TaskKind};
use crate::scalar::{c, Scalar};
use crate::tasks::{FitOpts, LogEntry, TrainRun};
use crate::tensor::Tensor;

/// Resolution of the evaluation grid (`32^3` points).
pub const GRID_RES: usize = 32;

/// Gaussian jitter applied to surface samples.
pub const SURFACE_JITTER: f64 = 0.05;

/// Keeps `sqrt` away from a zero gradient norm in the eikonal term.
const NORM_FLOOR: f64 = 1e-12;

/// Analytic shapes with closed-form signed distance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SdfShape {
    Sphere { radius: f64 },
    Box3 { half_extents: [f64; 3] },
    Torus { major: f64, minor: f64 },
}

impl SdfShape {
    /// Exact signed distance at `p`.
    pub fn sdf(&self, p: [f64; 3]) -> f64 {
        match *self {
            SdfShape::Sphere { radius } => {
                (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt() - radius
            }
            SdfShape::Box3 { half_extents } => {
                let q = [
                    p[0].abs() - half_extents[0],
                    p[1].abs() - half_extents[1],
                    p[2].abs() - half_extents[2],
                ];
                let outside = (q[0].max(0.0).powi(2) + q[1].max(0.0).powi(2) + q[2].max(0.0).powi(2)).sqrt();
                let inside = q[0].max(q[1]).max(q[2]).min(0.0);
                outside + inside
            }
            SdfShape::Torus { major, minor } => {
                let ring = (p[0] * p[0] + p[1] * p[1]).sqrt() - major;
                (ring * ring + p[2] * p[2]).sqrt() - minor
            }
        }
    }

    /// Uniform-ish point on the surface (used for near-surface sampling).
    pub fn sample_surface(&self, rng: &mut ChaCha8Rng) -> [f64; 3] {
        match *self {
            SdfShape::Sphere { radius } => {
                let dir = random_unit(rng);
                [dir[0] * radius, dir[1] * radius, dir[2] * radius]
            }
            SdfShape::Box3 { half_extents } => {
                let [hx, hy, hz] = half_extents;
                // Pick a face pair weighted by area, then a point on it.
                let areas = [hy * hz, hx * hz, hx * hy];
                let total: f64 = areas.iter().sum();
                let mut pick = rng.random_range(0.0..total);
                let axis = if pick < areas[0] {
                    0
                } else if {
                    pick -= areas[0];
                    pick < areas[1]
                } {
                    1
                } else {
                    2
                };
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                let mut p = [
                    rng.random_range(-hx..hx),
                    rng.random_range(-hy..hy),
                    rng.random_range(-hz..hz),
                ];
                p[axis] = sign * half_extents[axis];
                p
            }
            SdfShape::Torus { major, minor } => {
                let theta = rng.random_range(0.0..std::f64::consts::TAU);
                // Rejection on the tube angle: surface density is
                // proportional to major + minor*cos(psi).
                let psi = loop {
                    let psi = rng.random_range(0.0..std::f64::consts::TAU);
                    let accept = (major + minor * psi.cos()) / (major + minor);
                    if rng.random::<f64>() < accept {
                        break psi;
                    }
                };
                let ring = major + minor * psi.cos();
                [ring * theta.cos(), ring * theta.sin(), minor * psi.sin()]
            }
        }
    }
}

fn random_unit(rng: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let v: [f64; 3] = [
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        ];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-9 {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

/// A signed-distance fitting task.
#[derive(Clone, Debug)]
pub struct SdfTask {
    pub shape: SdfShape,
    pub batch_size: usize,
    pub seed: u64,
    /// Weight of `mean((|grad| - 1)^2)`; 0 disables the term.
    pub eikonal_weight: f64,
}

impl SdfTask {
    pub fn new(shape: SdfShape, batch_size: usize, seed: u64) -> Self {
        SdfTask {
            shape,
            batch_size,
            seed,
            eikonal_weight: 0.1,
        }
    }
}

/// Uniform evaluation grid with predictions and ground truth.
#[derive(Clone, Debug)]
pub struct SdfGrid {
    pub resolution: usize,
    pub points: Vec<[f64; 3]>,
    pub pred: Vec<f64>,
    pub truth: Vec<f64>,
}

impl SdfGrid {
    pub fn mae(&self) -> f64 {
        let n = self.pred.len().max(1);
        self.pred
            .iter()
            .zip(&self.truth)
            .map(|(p, t)| (p - t).abs())
            .sum::<f64>()
            / n as f64
    }
}

/// Inclusive linspace grid over `[-1, 1]^3`.
pub fn grid_points(resolution: usize) -> Vec<[f64; 3]> {
    let coord = |i: usize| -1.0 + 2.0 * i as f64 / (resolution - 1) as f64;
    let mut points = Vec::with_capacity(resolution.pow(3));
    for ix in 0..resolution {
        for iy in 0..resolution {
            for iz in 0..resolution {
                points.push([coord(ix), coord(iy), coord(iz)]);
            }
        }
    }
    points
}

/// Evaluate predicted vs. true distance on the `resolution^3` grid.
pub fn eval_grid<F: Scalar>(model: &FieldModel<F>, shape: &SdfShape, resolution: usize) -> Result<SdfGrid> {
    let points = grid_points(resolution);
    let mut data = Vec::with_capacity(points.len() * 3);
    for p in &points {
        data.extend(p.iter().map(|&v| c::<F>(v)));
    }
    let coords = Tensor::from_vec(points.len(), 3, data)?;
    let out = model.forward(&coords)?;
    let pred: Vec<f64> = out.as_slice().iter().map(|v| v.as_f64()).collect();
    let truth: Vec<f64> = points.iter().map(|&p| shape.sdf(p)).collect();
    Ok(SdfGrid {
        resolution,
        points,
        pred,
        truth,
    })
}

fn sample_batch<F: Scalar>(task: &SdfTask, rng: &mut ChaCha8Rng) -> (Tensor<F>, Tensor<F>) {
    let n = task.batch_size;
    let n_surface = n / 2;
    let mut coords = Vec::with_capacity(n * 3);
    let mut targets = Vec::with_capacity(n);
    for i in 0..n {
        let p = if i < n - n_surface {
            [
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ]
        } else {
            let s = task.shape.sample_surface(rng);
            let jitter: [f64; 3] = [
                StandardNormal.sample(rng),
                StandardNormal.sample(rng),
                StandardNormal.sample(rng),
            ];
            [
                s[0] + SURFACE_JITTER * jitter[0],
                s[1] + SURFACE_JITTER * jitter[1],
                s[2] + SURFACE_JITTER * jitter[2],
            ]
        };
        coords.extend(p.iter().map(|&v| c::<F>(v)));
        targets.push(c::<F>(task.shape.sdf(p)));
    }
    (
        Tensor::from_vec(n, 3, coords).expect("batch coords"),
        Tensor::from_vec(n, 1, targets).expect("batch targets"),
    )
}

/// Record `weight * mean((|grad| - 1)^2)` over per-dimension gradient nodes
/// (each `rows x 1`). A tiny floor keeps `sqrt` differentiable at zero.
pub fn record_eikonal_penalty<F: Scalar>(
    tape: &mut Tape<F>,
    xgrads: &[NodeId],
    rows: usize,
    weight: f64,
) -> Result<NodeId> {
    let mut sum: Option<NodeId> = None;
    for &g in xgrads {
        let sq = tape.mul(g, g)?;
        sum = Some(match sum {
            Some(s) => tape.add(s, sq)?,
            None => sq,
        });
    }
    let sum = sum.ok_or_else(|| QffError::Contract("eikonal needs gradient nodes".into()))?;
    let floor = tape.constant(Tensor::filled(rows, 1, c::<F>(NORM_FLOOR)));
    let sum = tape.add(sum, floor)?;
    let norm = tape.sqrt(sum);
    let ones = tape.constant(Tensor::filled(rows, 1, F::one()));
    let eik = tape.mse_loss(norm, ones)?;
    Ok(tape.scale(eik, c::<F>(weight)))
}

pub struct FitSdfOutput {
    pub run: TrainRun,
    pub grid: SdfGrid,
}

/// Minimize `mse(pred, true) + eikonal_weight * mean((|grad| - 1)^2)`.
/// A zero-step run just evaluates the initialized model on the grid.
pub fn fit_sdf<F: Scalar>(
    task: &SdfTask,
    model: &mut FieldModel<F>,
    steps: u64,
    eval_interval: u64,
) -> Result<FitSdfOutput> {
    fit_sdf_with(task, model, &FitOpts::new(steps, eval_interval))
}

pub fn fit_sdf_with<F: Scalar>(
    task: &SdfTask,
    model: &mut FieldModel<F>,
    opts: &FitOpts,
) -> Result<FitSdfOutput> {
    if model.encoding.input_dims != 3 {
        return Err(QffError::Config("sdf fitting requires a 3-D encoder".into()));
    }
    if model.mlp_cfg.output_width != 1 {
        return Err(QffError::Config("sdf fitting requires 1 output channel".into()));
    }
    let mut opt = Adam::for_task_with_lrs(model, TaskKind::Sdf, opts.bank_lr, opts.mlp_lr)?;
    let max_lr = opt.groups.iter().fold(0.0f64, |a, g| a.max(g.hyper.lr));
    let mut rng = ChaCha8Rng::seed_from_u64(task.seed);
    rng.set_stream(20);
    let start = Instant::now();
    let mut run = TrainRun::default();

    let mut grid = eval_grid(model, &task.shape, GRID_RES)?;
    let grid_mse0 = grid
        .pred
        .iter()
        .zip(&grid.truth)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / grid.pred.len() as f64;
    run.push(LogEntry {
        step: 0,
        loss: grid_mse0,
        metric: grid.mae(),
        seconds: start.elapsed().as_secs_f64(),
    });
    if let Some(stop) = &opts.stop_at {
        if stop.crossed(run.entries[0].metric) {
            return Ok(FitSdfOutput { run, grid });
        }
    }

    for step in 1..=opts.steps {
        let (coords, targets) = sample_batch::<F>(task, &mut rng);
        let mut tape = Tape::new();
        let loss_node = if task.eikonal_weight > 0.0 {
            let (pred, xgrads) = model.record_forward_with_xgrad(&mut tape, &coords)?;
            let target_node = tape.constant(targets);
            let fit = tape.mse_loss(pred, target_node)?;
            let eik = record_eikonal_penalty(&mut tape, &xgrads, coords.rows(), task.eikonal_weight)?;
            tape.add(fit, eik)?
        } else {
            let pred = model.record_forward(&mut tape, &coords)?;
            let target_node = tape.constant(targets);
            tape.mse_loss(pred, target_node)?
        };
        let loss = tape.value(loss_node).at(0, 0).as_f64();
        tape.backward(loss_node, &mut model.params)?;
        if !loss.is_finite() {
            return Err(QffError::NumericalAbort {
                step,
                lr: max_lr,
                max_grad: model.params.max_abs_grad(),
            });
        }
        opt.step(&mut model.params, step)?;
        model.params.zero_grads();

        if opts.should_eval(step) {
            grid = eval_grid(model, &task.shape, GRID_RES)?;
            let metric = grid.mae();
            run.push(LogEntry {
                step,
                loss,
                metric,
                seconds: start.elapsed().as_secs_f64(),
            });
            if let Some(stop) = &opts.stop_at {
                if stop.crossed(metric) {
                    break;
                }
            }
        }
    }
    Ok(FitSdfOutput { run, grid })
}
