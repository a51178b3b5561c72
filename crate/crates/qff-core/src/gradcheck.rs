//! Finite-difference verification of the tape engine.
//!
//! Every primitive, and full encoder→MLP→loss models, are checked against
//! central finite differences in double precision: perturb one parameter by
//! `±1e-5`, re-run the forward pass, and compare the quotient with the
//! gradient produced by [`Tape::backward`]. The forward evaluations here are
//! ordinary recorded passes; the differentiation path under test is only the
//! backward sweep.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{NodeId, Tap, Tape};
use crate::encoding::{min_bin_boundary_distance, EncodingConfig, Variant};
use crate::error::Result;
use crate::mlp::{Activation, MlpConfig, OutputTransform};
use crate::model::FieldModel;
use crate::tensor::{Params, Tensor};

/// Central-difference step, in double precision.
pub const FD_STEP: f64 = 1e-5;

/// Maximum relative error allowed for a check to pass.
pub const TOLERANCE: f64 = 1e-4;

/// Result of one gradient check.
#[derive(Clone, Debug)]
pub struct CheckRow {
    pub name: String,
    pub max_rel_err: f64,
}

impl CheckRow {
    pub fn passed(&self) -> bool {
        self.max_rel_err < TOLERANCE
    }
}

/// All rows of a gradient-check run.
#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub rows: Vec<CheckRow>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(CheckRow::passed)
    }

    pub fn worst(&self) -> f64 {
        self.rows.iter().fold(0.0, |acc, r| acc.max(r.max_rel_err))
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<24} {:>14}  status", "check", "max rel err")?;
        for row in &self.rows {
            writeln!(
                f,
                "{:<24} {:>14.3e}  {}",
                row.name,
                row.max_rel_err,
                if row.passed() { "ok" } else { "FAIL" }
            )?;
        }
        Ok(())
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Compare backward gradients with central differences for every parameter
/// entry (or a random sample of `sample_count` entries when set).
fn check_graph(
    params: &mut Params<f64>,
    sample: Option<(usize, u64)>,
    build: &dyn Fn(&mut Tape<f64>, &Params<f64>) -> Result<NodeId>,
) -> Result<f64> {
    params.zero_grads();
    let mut tape = Tape::new();
    let loss = build(&mut tape, params)?;
    tape.backward(loss, params)?;
    let analytic: Vec<Vec<f64>> = params.ids().map(|id| params.grad(id).to_vec()).collect();

    let entries: Vec<(usize, usize)> = {
        let all: Vec<(usize, usize)> = params
            .ids()
            .enumerate()
            .flat_map(|(slot, id)| (0..params.get(id).len()).map(move |i| (slot, i)))
            .collect();
        match sample {
            None => all,
            Some((count, seed)) => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (0..count)
                    .map(|_| all[rng.random_range(0..all.len())])
                    .collect()
            }
        }
    };

    let ids: Vec<_> = params.ids().collect();
    let mut max_err = 0.0f64;
    for (slot, i) in entries {
        let id = ids[slot];
        let orig = params.value(id)[i];
        params.value_mut(id)[i] = orig + FD_STEP;
        let mut tp = Tape::new();
        let loss_p = build(&mut tp, params)?;
        let lp = tp.value(loss_p).at(0, 0);
        params.value_mut(id)[i] = orig - FD_STEP;
        let mut tm = Tape::new();
        let loss_m = build(&mut tm, params)?;
        let lm = tm.value(loss_m).at(0, 0);
        params.value_mut(id)[i] = orig;
        let fd = (lp - lm) / (2.0 * FD_STEP);
        max_err = max_err.max(rel_err(analytic[slot][i], fd));
    }
    Ok(max_err)
}

fn rand_vec(rng: &mut ChaCha8Rng, len: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(lo..hi)).collect()
}

/// Random values bounded away from zero, so ReLU-style kinks stay clear of
/// the finite-difference probes.
fn rand_vec_off_zero(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len)
        .map(|_| {
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            sign * rng.random_range(0.1..1.0)
        })
        .collect()
}

fn const_target(tape: &mut Tape<f64>, rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> NodeId {
    let data = rand_vec(rng, rows * cols, -1.0, 1.0);
    tape.constant(Tensor::from_vec(rows, cols, data).expect("target shape"))
}

/// Check one primitive's backward rule against finite differences.
pub fn check_primitive(name: &str, seed: u64) -> Result<CheckRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = Params::<f64>::new();

    // Randomized shapes, re-seeded per primitive so runs are reproducible.
    let m = rng.random_range(3..24);
    let k = rng.random_range(3..24);
    let n = rng.random_range(3..24);

    let max_err = match name {
        "matmul" => {
            let a = params.insert("a", vec![m, k], rand_vec(&mut rng, m * k, -1.0, 1.0));
            let b = params.insert("b", vec![k, n], rand_vec(&mut rng, k * n, -1.0, 1.0));
            let trng = rng.clone();
            check_graph(&mut params, None, &move |tape, p| {
                let av = tape.leaf(p, a, m, k)?;
                let bv = tape.leaf(p, b, k, n)?;
                let y = tape.matmul(av, bv)?;
                let t = const_target(tape, &mut trng.clone(), m, n);
                tape.mse_loss(y, t)
            })?
        }
        "add" => binary_elementwise(&mut params, &mut rng, m, n, |tape, a, b| tape.add(a, b))?,
        "broadcast_add" => {
            let a = params.insert("mat", vec![m, n], rand_vec(&mut rng, m * n, -1.0, 1.0));
            let b = params.insert("row", vec![1, n], rand_vec(&mut rng, n, -1.0, 1.0));
            let trng = rng.clone();
            check_graph(&mut params, None, &move |tape, p| {
                let av = tape.leaf(p, a, m, n)?;
                let bv = tape.leaf(p, b, 1, n)?;
                let y = tape.broadcast_add(av, bv)?;
                let t = const_target(tape, &mut trng.clone(), m, n);
                tape.mse_loss(y, t)
            })?
        }
        "elementwise_mul" => binary_elementwise(&mut params, &mut rng, m, n, |tape, a, b| tape.mul(a, b))?,
        "relu" => {
            let x = params.insert("x", vec![m, n], rand_vec_off_zero(&mut rng, m * n));
            unary(&mut params, &mut rng, x, m, n, |tape, xv| Ok(tape.relu(xv)))?
        }
        "relu_gate" => {
            let gate = params.insert("gate", vec![m, n], rand_vec_off_zero(&mut rng, m * n));
            let x = params.insert("x", vec![m, n], rand_vec(&mut rng, m * n, -1.0, 1.0));
            let trng = rng.clone();
            check_graph(&mut params, None, &move |tape, p| {
                let gv = tape.leaf(p, gate, m, n)?;
                let xv = tape.leaf(p, x, m, n)?;
                let y = tape.relu_gate(gv, xv)?;
                let t = const_target(tape, &mut trng.clone(), m, n);
                tape.mse_loss(y, t)
            })?
        }
        "sine" => {
            let x = params.insert("x", vec![m, n], rand_vec(&mut rng, m * n, -1.0, 1.0));
            unary(&mut params, &mut rng, x, m, n, |tape, xv| Ok(tape.sine_act(xv, 30.0)))?
        }
        "sin" => {
            let x = params.insert("x", vec![m, n], rand_vec(&mut rng, m * n, -3.0, 3.0));
            unary(&mut params, &mut rng, x, m, n, |tape, xv| Ok(tape.sin(xv)))?
        }
        "cos" => {
            let x = params.insert("x", vec![m, n], rand_vec(&mut rng, m * n, -3.0, 3.0));
            unary(&mut params, &mut rng, x, m, n, |tape, xv| Ok(tape.cos(xv)))?
        }
        "sqrt" => {
            let x = params.insert("x", vec![m, n], rand_vec(&mut rng, m * n, 0.5, 2.0));
            unary(&mut params, &mut rng, x, m, n, |tape, xv| Ok(tape.sqrt(xv)))?
        }
        "sigmoid" => {
            let x = params.insert("x", vec![m, n], rand_vec(&mut rng, m * n, -2.0, 2.0));
            unary(&mut params, &mut rng, x, m, n, |tape, xv| Ok(tape.sigmoid(xv)))?
        }
        "scale" => {
            let x = params.insert("x", vec![m, n], rand_vec(&mut rng, m * n, -1.0, 1.0));
            unary(&mut params, &mut rng, x, m, n, |tape, xv| Ok(tape.scale(xv, 0.37)))?
        }
        "concat" => {
            let a = params.insert("a", vec![m, 3], rand_vec(&mut rng, m * 3, -1.0, 1.0));
            let b = params.insert("b", vec![m, 5], rand_vec(&mut rng, m * 5, -1.0, 1.0));
            let c = params.insert("c", vec![m, 2], rand_vec(&mut rng, m * 2, -1.0, 1.0));
            let trng = rng.clone();
            check_graph(&mut params, None, &move |tape, p| {
                let av = tape.leaf(p, a, m, 3)?;
                let bv = tape.leaf(p, b, m, 5)?;
                let cv = tape.leaf(p, c, m, 2)?;
                let y = tape.concat(&[av, bv, cv])?;
                let t = const_target(tape, &mut trng.clone(), m, 10);
                tape.mse_loss(y, t)
            })?
        }
        "gather_interp_1d" => {
            let bins = 16;
            let channels = 3;
            let bank = params.insert(
                "bank",
                vec![bins, channels],
                rand_vec(&mut rng, bins * channels, -1.0, 1.0),
            );
            let rows = 10;
            let taps: Vec<[Tap<f64>; 2]> = (0..rows)
                .map(|_| {
                    let lo = rng.random_range(0..bins - 1);
                    let w: f64 = rng.random_range(0.0..1.0);
                    [
                        Tap { offset: lo * channels, weight: 1.0 - w },
                        Tap { offset: (lo + 1) * channels, weight: w },
                    ]
                })
                .collect();
            let trng = rng.clone();
            check_graph(&mut params, None, &move |tape, p| {
                let y = tape.gather_interp_1d(p, bank, taps.clone(), channels, rows, channels)?;
                let t = const_target(tape, &mut trng.clone(), rows, channels);
                tape.mse_loss(y, t)
            })?
        }
        "gather_interp_2d" => {
            let bins = 6;
            let channels = 2;
            let bank = params.insert(
                "plane",
                vec![bins, bins, channels],
                rand_vec(&mut rng, bins * bins * channels, -1.0, 1.0),
            );
            let rows = 10;
            let taps: Vec<[Tap<f64>; 4]> = (0..rows)
                .map(|_| {
                    let a = rng.random_range(0..bins - 1);
                    let b = rng.random_range(0..bins - 1);
                    let wa: f64 = rng.random_range(0.0..1.0);
                    let wb: f64 = rng.random_range(0.0..1.0);
                    let off = |ma: usize, mb: usize| (ma * bins + mb) * channels;
                    [
                        Tap { offset: off(a, b), weight: (1.0 - wa) * (1.0 - wb) },
                        Tap { offset: off(a, b + 1), weight: (1.0 - wa) * wb },
                        Tap { offset: off(a + 1, b), weight: wa * (1.0 - wb) },
                        Tap { offset: off(a + 1, b + 1), weight: wa * wb },
                    ]
                })
                .collect();
            let trng = rng.clone();
            check_graph(&mut params, None, &move |tape, p| {
                let y = tape.gather_interp_2d(p, bank, taps.clone(), channels, rows, channels)?;
                let t = const_target(tape, &mut trng.clone(), rows, channels);
                tape.mse_loss(y, t)
            })?
        }
        "mse_loss" => {
            let a = params.insert("pred", vec![m, n], rand_vec(&mut rng, m * n, -1.0, 1.0));
            let b = params.insert("target", vec![m, n], rand_vec(&mut rng, m * n, -1.0, 1.0));
            check_graph(&mut params, None, &move |tape, p| {
                let av = tape.leaf(p, a, m, n)?;
                let bv = tape.leaf(p, b, m, n)?;
                tape.mse_loss(av, bv)
            })?
        }
        other => {
            return Err(crate::error::QffError::Contract(format!(
                "unknown primitive '{other}'"
            )))
        }
    };
    Ok(CheckRow {
        name: name.to_string(),
        max_rel_err: max_err,
    })
}

fn binary_elementwise(
    params: &mut Params<f64>,
    rng: &mut ChaCha8Rng,
    m: usize,
    n: usize,
    op: impl Fn(&mut Tape<f64>, NodeId, NodeId) -> Result<NodeId> + 'static,
) -> Result<f64> {
    let a = params.insert("a", vec![m, n], rand_vec(rng, m * n, -1.0, 1.0));
    let b = params.insert("b", vec![m, n], rand_vec(rng, m * n, -1.0, 1.0));
    let trng = rng.clone();
    check_graph(params, None, &move |tape, p| {
        let av = tape.leaf(p, a, m, n)?;
        let bv = tape.leaf(p, b, m, n)?;
        let y = op(tape, av, bv)?;
        let t = const_target(tape, &mut trng.clone(), m, n);
        tape.mse_loss(y, t)
    })
}

fn unary(
    params: &mut Params<f64>,
    rng: &mut ChaCha8Rng,
    x: crate::tensor::ParamId,
    m: usize,
    n: usize,
    op: impl Fn(&mut Tape<f64>, NodeId) -> Result<NodeId> + 'static,
) -> Result<f64> {
    let trng = rng.clone();
    check_graph(params, None, &move |tape, p| {
        let xv = tape.leaf(p, x, m, n)?;
        let y = op(tape, xv)?;
        let t = const_target(tape, &mut trng.clone(), m, n);
        tape.mse_loss(y, t)
    })
}

/// Names of all primitives covered by [`check_primitive`].
pub const PRIMITIVES: &[&str] = &[
    "matmul",
    "add",
    "broadcast_add",
    "elementwise_mul",
    "relu",
    "relu_gate",
    "sine",
    "sin",
    "cos",
    "sqrt",
    "sigmoid",
    "scale",
    "concat",
    "gather_interp_1d",
    "gather_interp_2d",
    "mse_loss",
];

/// Sample random coordinates whose encoding components stay at least
/// `margin` (in encoding-value units) away from every bin boundary.
pub fn sample_off_boundary(
    cfg: &EncodingConfig,
    rows: usize,
    margin: f64,
    rng: &mut ChaCha8Rng,
) -> Tensor<f64> {
    let k = cfg.input_dims;
    let mut data = Vec::with_capacity(rows * k);
    while data.len() < rows * k {
        let x: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
        if min_bin_boundary_distance(&x, cfg) >= margin {
            data.extend(x);
        }
    }
    Tensor::from_vec(rows, k, data).expect("sampled batch")
}

/// Check a full encoder→MLP→loss model against finite differences at
/// `sample_count` randomly chosen parameters. The loss includes the
/// position-gradient (eikonal) term whenever the model is 3-D, so the
/// derivative gathers and tangent chains are covered too.
pub fn check_model(variant: Variant, seed: u64, sample_count: usize) -> Result<CheckRow> {
    let enc = match variant {
        Variant::PeOnly => EncodingConfig::new(3, 4, 8, 1, Variant::PeOnly),
        Variant::QffLite => EncodingConfig::new(3, 4, 16, 2, Variant::QffLite),
        Variant::Qff3d => EncodingConfig::new(3, 3, 8, 2, Variant::Qff3d),
    };
    let mlp = MlpConfig {
        input_width: enc.encoded_width(),
        hidden_width: 32,
        num_layers: 2,
        activation: Activation::Relu,
        output_width: 1,
        output_transform: OutputTransform::None,
    };
    let mut model = FieldModel::<f64>::init(enc.clone(), mlp, seed)?;
    // A realistic bank scale; the default near-zero init would make the
    // feature path vanish from the check.
    let mut scale_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for id in model.bank_param_ids() {
        for v in model.params.value_mut(id) {
            *v = scale_rng.random_range(-0.5..0.5);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let coords = sample_off_boundary(&enc, 8, 1e-3, &mut rng);
    let rows = coords.rows();
    let target = Tensor::from_vec(rows, 1, rand_vec(&mut rng, rows, -1.0, 1.0))?;

    let builder = move |tape: &mut Tape<f64>, model: &FieldModel<f64>| -> Result<NodeId> {
        let (pred, xgrads) = model.record_forward_with_xgrad(tape, &coords)?;
        let t = tape.constant(target.clone());
        let fit = tape.mse_loss(pred, t)?;
        // The eikonal-style norm penalty exercises the tangent chains.
        let eik = crate::tasks::sdf::record_eikonal_penalty(tape, &xgrads, rows, 0.1)?;
        tape.add(fit, eik)
    };

    // Split the model so the builder borrows the config/handles while the
    // parameter store is perturbed: rebuild the model view each evaluation.
    let mut params = std::mem::take(&mut model.params);
    let max_err = check_graph(&mut params, Some((sample_count, seed ^ 0xFD)), &{
        let model = model.clone();
        move |tape: &mut Tape<f64>, p: &Params<f64>| {
            let mut m = model.clone();
            m.params = p.clone();
            let loss = builder(tape, &m)?;
            Ok(loss)
        }
    })?;
    Ok(CheckRow {
        name: format!("model {}", variant.as_str()),
        max_rel_err: max_err,
    })
}

/// Run every primitive check and the full-model checks.
pub fn full_report(seed: u64) -> Result<GradCheckReport> {
    let mut rows = Vec::new();
    for (i, name) in PRIMITIVES.iter().enumerate() {
        rows.push(check_primitive(name, seed.wrapping_add(i as u64))?);
    }
    for variant in [Variant::PeOnly, Variant::QffLite, Variant::Qff3d] {
        rows.push(check_model(variant, seed, 100)?);
    }
    Ok(GradCheckReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_primitive_passes() {
        for (i, name) in PRIMITIVES.iter().enumerate() {
            let row = check_primitive(name, 1000 + i as u64).unwrap();
            assert!(
                row.passed(),
                "{}: max rel err {:.3e}",
                row.name,
                row.max_rel_err
            );
        }
    }

    #[test]
    fn full_models_pass() {
        for variant in [Variant::PeOnly, Variant::QffLite, Variant::Qff3d] {
            let row = check_model(variant, 7, 100).unwrap();
            assert!(
                row.passed(),
                "{}: max rel err {:.3e}",
                row.name,
                row.max_rel_err
            );
        }
    }
}
