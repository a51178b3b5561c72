//! Supervised 2-D image regression with PSNR evaluation.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tape;
use crate::error::{QffError, Result};
use crate::io::RgbImage;
use crate::model::FieldModel;
use crate::optim::{Adam, TaskKind};
use crate::scalar::{c, Scalar};
use crate::tasks::{FitOpts, LogEntry, TrainRun};
use crate::tensor::Tensor;

/// How training pixels are scheduled.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sampling {
    /// Epoch-wise shuffles: every pixel appears once per pass.
    Permutation,
    /// Independent uniform draws each step.
    Random,
}

/// A 2-D image regression task.
#[derive(Clone, Debug)]
pub struct ImageTask {
    pub target: RgbImage,
    pub batch_size: usize,
    pub seed: u64,
    pub sampling: Sampling,
}

impl ImageTask {
    pub fn new(target: RgbImage, batch_size: usize, seed: u64) -> Self {
        ImageTask {
            target,
            batch_size,
            seed,
            sampling: Sampling::Permutation,
        }
    }
}

/// Mean squared error over all channels, in double precision.
pub fn mse(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    if a.width != b.width || a.height != b.height {
        return Err(QffError::shape(
            "image_mse",
            &[a.width, a.height],
            &[b.width, b.height],
        ));
    }
    let mut acc = 0.0f64;
    for (&x, &y) in a.data.iter().zip(&b.data) {
        let d = x as f64 - y as f64;
        acc += d * d;
    }
    Ok(acc / a.data.len() as f64)
}

/// Peak signal-to-noise ratio in dB for signals in `[0, 1]`:
/// `10 * log10(1 / mse)`, `+inf` when the images are identical.
pub fn psnr(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(-10.0 * m.log10())
}

/// Map a pixel index to its center in `[-1, 1]^2`; strictly interior.
#[inline]
pub fn pixel_center(px: usize, py: usize, width: usize, height: usize) -> (f64, f64) {
    (
        (px as f64 + 0.5) / width as f64 * 2.0 - 1.0,
        (py as f64 + 0.5) / height as f64 * 2.0 - 1.0,
    )
}

/// Pixel scheduler: permutation mode covers every pixel each pass.
pub struct PixelSampler {
    order: Vec<u32>,
    cursor: usize,
    rng: ChaCha8Rng,
    sampling: Sampling,
    num_pixels: usize,
}

impl PixelSampler {
    pub fn new(num_pixels: usize, seed: u64, sampling: Sampling) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(10);
        let mut order: Vec<u32> = (0..num_pixels as u32).collect();
        order.shuffle(&mut rng);
        PixelSampler {
            order,
            cursor: 0,
            rng,
            sampling,
            num_pixels,
        }
    }

    pub fn next_batch(&mut self, n: usize, out: &mut Vec<u32>) {
        out.clear();
        match self.sampling {
            Sampling::Random => {
                for _ in 0..n {
                    out.push(self.rng.random_range(0..self.num_pixels as u32));
                }
            }
            Sampling::Permutation => {
                while out.len() < n {
                    if self.cursor == self.order.len() {
                        self.order.shuffle(&mut self.rng);
                        self.cursor = 0;
                    }
                    let take = (n - out.len()).min(self.order.len() - self.cursor);
                    out.extend_from_slice(&self.order[self.cursor..self.cursor + take]);
                    self.cursor += take;
                }
            }
        }
    }
}

pub struct FitImageOutput {
    pub run: TrainRun,
    pub reconstruction: RgbImage,
}

/// All pixel centers of the target, row-major.
fn full_coords<F: Scalar>(width: usize, height: usize) -> Tensor<F> {
    let mut data = Vec::with_capacity(width * height * 2);
    for py in 0..height {
        for px in 0..width {
            let (x, y) = pixel_center(px, py, width, height);
            data.push(c::<F>(x));
            data.push(c::<F>(y));
        }
    }
    Tensor::from_vec(width * height, 2, data).expect("coordinate grid")
}

fn reconstruct<F: Scalar>(model: &FieldModel<F>, coords: &Tensor<F>, width: usize, height: usize) -> Result<RgbImage> {
    let out = model.forward(coords)?;
    let data: Vec<f32> = out
        .as_slice()
        .iter()
        .map(|v| (v.as_f64() as f32).clamp(0.0, 1.0))
        .collect();
    RgbImage::from_data(width, height, data)
}

fn batch_tensors<F: Scalar>(task: &ImageTask, indices: &[u32]) -> (Tensor<F>, Tensor<F>) {
    let (w, h) = (task.target.width, task.target.height);
    let mut coords = Vec::with_capacity(indices.len() * 2);
    let mut targets = Vec::with_capacity(indices.len() * 3);
    for &idx in indices {
        let px = idx as usize % w;
        let py = idx as usize / w;
        let (x, y) = pixel_center(px, py, w, h);
        coords.push(c::<F>(x));
        coords.push(c::<F>(y));
        let rgb = task.target.pixel(px, py);
        targets.extend(rgb.iter().map(|&v| c::<F>(v as f64)));
    }
    (
        Tensor::from_vec(indices.len(), 2, coords).expect("batch coords"),
        Tensor::from_vec(indices.len(), 3, targets).expect("batch targets"),
    )
}

/// Minimize sampled-pixel MSE with Adam; evaluate full-image PSNR at step 0,
/// every `eval_interval` steps, and at the final step.
pub fn fit_image<F: Scalar>(
    task: &ImageTask,
    model: &mut FieldModel<F>,
    steps: u64,
    eval_interval: u64,
) -> Result<FitImageOutput> {
    if steps == 0 {
        return Err(QffError::Contract("fit_image requires steps >= 1".into()));
    }
    fit_image_with(task, model, &FitOpts::new(steps, eval_interval))
}

pub fn fit_image_with<F: Scalar>(
    task: &ImageTask,
    model: &mut FieldModel<F>,
    opts: &FitOpts,
) -> Result<FitImageOutput> {
    if model.encoding.input_dims != 2 {
        return Err(QffError::Config(
            "image fitting requires a 2-D encoder".into(),
        ));
    }
    if model.mlp_cfg.output_width != 3 {
        return Err(QffError::Config(
            "image fitting requires 3 output channels".into(),
        ));
    }
    let (w, h) = (task.target.width, task.target.height);
    let mut opt = Adam::for_task_with_lrs(model, TaskKind::Image, opts.bank_lr, opts.mlp_lr)?;
    let max_lr = opt.groups.iter().fold(0.0f64, |a, g| a.max(g.hyper.lr));
    let mut sampler = PixelSampler::new(w * h, task.seed, task.sampling);
    let eval_coords = full_coords::<F>(w, h);
    let start = Instant::now();
    let mut run = TrainRun::default();

    // Step-0 row: evaluation loss and metric before any update.
    let recon0 = reconstruct(model, &eval_coords, w, h)?;
    run.push(LogEntry {
        step: 0,
        loss: mse(&recon0, &task.target)?,
        metric: psnr(&recon0, &task.target)?,
        seconds: start.elapsed().as_secs_f64(),
    });
    if let Some(stop) = &opts.stop_at {
        if stop.crossed(run.entries[0].metric) {
            return Ok(FitImageOutput { run, reconstruction: recon0 });
        }
    }

    let mut indices = Vec::with_capacity(task.batch_size);
    let mut reconstruction = recon0;
    for step in 1..=opts.steps {
        sampler.next_batch(task.batch_size, &mut indices);
        let (coords, targets) = batch_tensors::<F>(task, &indices);
        let mut tape = Tape::new();
        let pred = model.record_forward(&mut tape, &coords)?;
        let target_node = tape.constant(targets);
        let loss_node = tape.mse_loss(pred, target_node)?;
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
            reconstruction = reconstruct(model, &eval_coords, w, h)?;
            let metric = psnr(&reconstruction, &task.target)?;
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
    Ok(FitImageOutput { run, reconstruction })
}
