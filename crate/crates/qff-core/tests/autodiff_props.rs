//! Engine-level properties: determinism, accumulation linearity, and the
//! finite-difference report.

use qff_core::autodiff::Tape;
use qff_core::encoding::{EncodingConfig, Variant};
use qff_core::gradcheck;
use qff_core::mlp::{Activation, MlpConfig, OutputTransform};
use qff_core::model::FieldModel;
use qff_core::optim::{Adam, TaskKind};
use qff_core::tensor::{Params, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_model(seed: u64) -> FieldModel<f32> {
    let enc = EncodingConfig::new(2, 3, 8, 2, Variant::QffLite);
    let mlp = MlpConfig {
        input_width: enc.encoded_width(),
        hidden_width: 16,
        num_layers: 2,
        activation: Activation::Relu,
        output_width: 3,
        output_transform: OutputTransform::Sigmoid,
    };
    FieldModel::init(enc, mlp, seed).unwrap()
}

fn train_losses(seed: u64, steps: u64) -> Vec<f32> {
    let mut model = small_model(seed);
    let mut opt = Adam::for_task(&model, TaskKind::Image).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 99);
    let mut losses = Vec::new();
    for t in 1..=steps {
        let coords: Vec<f32> = (0..32).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        let targets: Vec<f32> = (0..48).map(|_| rng.random_range(0.0f32..1.0)).collect();
        let coords = Tensor::from_vec(16, 2, coords).unwrap();
        let targets = Tensor::from_vec(16, 3, targets).unwrap();
        let mut tape = Tape::new();
        let pred = model.record_forward(&mut tape, &coords).unwrap();
        let tn = tape.constant(targets);
        let loss = tape.mse_loss(pred, tn).unwrap();
        losses.push(tape.value(loss).at(0, 0));
        tape.backward(loss, &mut model.params).unwrap();
        opt.step(&mut model.params, t).unwrap();
        model.params.zero_grads();
    }
    losses
}

/// Identical seeds and inputs give a bitwise-identical loss sequence.
#[test]
fn training_is_bitwise_deterministic() {
    let a = train_losses(5, 20);
    let b = train_losses(5, 20);
    assert_eq!(a, b);
    let c = train_losses(6, 20);
    assert_ne!(a, c);
}

/// backward(a*L1 + b*L2) accumulates a*grads(L1) + b*grads(L2).
#[test]
fn accumulation_is_linear() {
    let mut params = Params::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let w = params.insert("w", vec![4, 3], (0..12).map(|_| rng.random_range(-1.0..1.0)).collect());
    let x_data: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
    let t1_data: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
    let t2_data: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
    let (a, b) = (0.7, -1.3);

    let build = |tape: &mut Tape<f64>, params: &Params<f64>| {
        let wl = tape.leaf(params, w, 4, 3).unwrap();
        let x = tape.constant(Tensor::from_vec(2, 4, x_data.clone()).unwrap());
        let y = tape.matmul(x, wl).unwrap();
        let act = tape.relu(y);
        let t1 = tape.constant(Tensor::from_vec(2, 3, t1_data.clone()).unwrap());
        let t2 = tape.constant(Tensor::from_vec(2, 3, t2_data.clone()).unwrap());
        let l1 = tape.mse_loss(act, t1).unwrap();
        let l2 = tape.mse_loss(y, t2).unwrap();
        (l1, l2)
    };

    // Combined loss.
    let mut tape = Tape::new();
    let (l1, l2) = build(&mut tape, &params);
    let s1 = tape.scale(l1, a);
    let s2 = tape.scale(l2, b);
    let total = tape.add(s1, s2).unwrap();
    tape.backward(total, &mut params).unwrap();
    let combined = params.grad(w).to_vec();

    // Separate losses.
    params.zero_grads();
    let mut tape = Tape::new();
    let (l1, _) = build(&mut tape, &params);
    tape.backward(l1, &mut params).unwrap();
    let g1 = params.grad(w).to_vec();
    params.zero_grads();
    let mut tape = Tape::new();
    let (_, l2) = build(&mut tape, &params);
    tape.backward(l2, &mut params).unwrap();
    let g2 = params.grad(w).to_vec();

    for i in 0..combined.len() {
        let want = a * g1[i] + b * g2[i];
        assert!(
            (combined[i] - want).abs() < 1e-10,
            "entry {i}: {} vs {want}",
            combined[i]
        );
    }
}

/// The full finite-difference report passes at the 1e-4 tolerance.
#[test]
fn gradcheck_report_is_clean() {
    let report = gradcheck::full_report(2024).unwrap();
    assert!(report.passed(), "\n{report}");
    assert!(report.rows.len() >= gradcheck::PRIMITIVES.len() + 3);
}
