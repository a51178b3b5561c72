//! Adam with independent parameter groups, so feature banks and MLP weights
//! can train at different learning rates.

use crate::error::{QffError, Result};
use crate::model::FieldModel;
use crate::scalar::{c, Scalar};
use crate::tensor::{ParamId, Params};

/// Per-group Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamParams {
    pub fn with_lr(lr: f64) -> Self {
        AdamParams {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams::with_lr(1e-3)
    }
}

/// Parameters sharing one learning rate, with their moment accumulators.
#[derive(Clone, Debug)]
pub struct ParamGroup<F> {
    pub hyper: AdamParams,
    pub members: Vec<ParamId>,
    first_moment: Vec<Vec<F>>,
    second_moment: Vec<Vec<F>>,
}

/// The optimizer: one or more parameter groups stepped together.
#[derive(Clone, Debug)]
pub struct Adam<F> {
    pub groups: Vec<ParamGroup<F>>,
}

/// Which learning-rate preset a training run uses: image fitting trains all
/// parameters at 5e-4; 3-D field fitting trains banks at 1e-2 and the MLP at
/// 5e-4.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaskKind {
    Image,
    Sdf,
}

pub const IMAGE_LR: f64 = 5e-4;
pub const FIELD_BANK_LR: f64 = 1e-2;
pub const FIELD_MLP_LR: f64 = 5e-4;

impl<F: Scalar> Adam<F> {
    pub fn new(groups: Vec<(AdamParams, Vec<ParamId>)>, params: &Params<F>) -> Result<Self> {
        let groups = groups
            .into_iter()
            .map(|(hyper, members)| {
                if !(hyper.lr.is_finite() && hyper.lr > 0.0) {
                    return Err(QffError::Config(format!(
                        "learning rate must be positive, got {}",
                        hyper.lr
                    )));
                }
                let first = members
                    .iter()
                    .map(|&id| vec![F::zero(); params.get(id).len()])
                    .collect();
                let second = members
                    .iter()
                    .map(|&id| vec![F::zero(); params.get(id).len()])
                    .collect();
                Ok(ParamGroup {
                    hyper,
                    members,
                    first_moment: first,
                    second_moment: second,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Adam { groups })
    }

    /// Build the task-default groups for a model. Models without a feature
    /// bank get a single group.
    pub fn for_task(model: &FieldModel<F>, task: TaskKind) -> Result<Self> {
        Self::for_task_with_lrs(model, task, None, None)
    }

    /// Task-default groups with optional learning-rate overrides.
    pub fn for_task_with_lrs(
        model: &FieldModel<F>,
        task: TaskKind,
        bank_lr: Option<f64>,
        mlp_lr: Option<f64>,
    ) -> Result<Self> {
        let bank_ids = model.bank_param_ids();
        let mlp_ids = model.mlp_param_ids();
        let groups = match task {
            TaskKind::Image => {
                let lr = mlp_lr.unwrap_or(IMAGE_LR);
                if bank_ids.is_empty() {
                    vec![(AdamParams::with_lr(lr), mlp_ids)]
                } else if bank_lr.is_none() || bank_lr == Some(lr) {
                    // One shared group at the image learning rate.
                    let mut all = bank_ids;
                    all.extend(mlp_ids);
                    vec![(AdamParams::with_lr(lr), all)]
                } else {
                    vec![
                        (AdamParams::with_lr(bank_lr.unwrap()), bank_ids),
                        (AdamParams::with_lr(lr), mlp_ids),
                    ]
                }
            }
            TaskKind::Sdf => {
                let mlp = AdamParams::with_lr(mlp_lr.unwrap_or(FIELD_MLP_LR));
                if bank_ids.is_empty() {
                    vec![(mlp, mlp_ids)]
                } else {
                    vec![
                        (AdamParams::with_lr(bank_lr.unwrap_or(FIELD_BANK_LR)), bank_ids),
                        (mlp, mlp_ids),
                    ]
                }
            }
        };
        Self::new(groups, &model.params)
    }

    /// One Adam update using the gradients currently in `params`.
    ///
    /// `t` is the 1-based step count used for bias correction:
    /// `m <- b1 m + (1-b1) g`, `v <- b2 v + (1-b2) g^2`,
    /// `theta <- theta - lr * m_hat / (sqrt(v_hat) + eps)`.
    pub fn step(&mut self, params: &mut Params<F>, t: u64) -> Result<()> {
        if t == 0 {
            return Err(QffError::Contract(
                "Adam step count must be >= 1 (bias correction divides by zero)".into(),
            ));
        }
        for group in &mut self.groups {
            let lr = c::<F>(group.hyper.lr);
            let b1 = c::<F>(group.hyper.beta1);
            let b2 = c::<F>(group.hyper.beta2);
            let eps = c::<F>(group.hyper.eps);
            let one = F::one();
            let bias1 = c::<F>(1.0 - group.hyper.beta1.powi(t as i32));
            let bias2 = c::<F>(1.0 - group.hyper.beta2.powi(t as i32));
            for (slot, &id) in group.members.iter().enumerate() {
                let m = &mut group.first_moment[slot];
                let v = &mut group.second_moment[slot];
                let p = params.get_mut(id);
                for ((theta, &g), (m_i, v_i)) in p
                    .value
                    .iter_mut()
                    .zip(&p.grad)
                    .zip(m.iter_mut().zip(v.iter_mut()))
                {
                    *m_i = b1 * *m_i + (one - b1) * g;
                    *v_i = b2 * *v_i + (one - b2) * g * g;
                    let m_hat = *m_i / bias1;
                    let v_hat = *v_i / bias2;
                    *theta = *theta - lr * m_hat / (v_hat.sqrt() + eps);
                }
                debug_assert!(
                    p.value.iter().all(|x| x.is_finite()),
                    "non-finite parameter after optimizer step in {}",
                    p.name
                );
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::{EncodingConfig, Variant};
    use crate::mlp::{Activation, MlpConfig, OutputTransform};

    fn single(lr: f64, params: &Params<f64>, id: ParamId) -> Adam<f64> {
        Adam::new(vec![(AdamParams::with_lr(lr), vec![id])], params).unwrap()
    }

    #[test]
    fn first_step_moves_by_lr() {
        // With g = 1 everywhere and t = 1 the bias-corrected update is
        // -lr * 1 / (1 + eps) which is -lr to within eps.
        let mut params = Params::new();
        let id = params.insert("w", vec![3], vec![0.0f64; 3]);
        params.grad_mut(id).copy_from_slice(&[1.0, 1.0, 1.0]);
        let mut opt = single(0.01, &params, id);
        opt.step(&mut params, 1).unwrap();
        for &w in params.value(id) {
            assert!((w + 0.01).abs() < 1e-9, "got {w}");
        }
    }

    #[test]
    fn zero_grad_leaves_values() {
        let mut params = Params::new();
        let id = params.insert("w", vec![2], vec![0.5f64, -0.5]);
        let mut opt = single(0.01, &params, id);
        opt.step(&mut params, 1).unwrap();
        assert_eq!(params.value(id), &[0.5, -0.5]);
    }

    #[test]
    fn group_learning_rates_scale_updates() {
        let mut params = Params::new();
        let a = params.insert("a", vec![1], vec![0.0f64]);
        let b = params.insert("b", vec![1], vec![0.0f64]);
        params.grad_mut(a)[0] = 1.0;
        params.grad_mut(b)[0] = 1.0;
        let mut opt = Adam::new(
            vec![
                (AdamParams::with_lr(0.01), vec![a]),
                (AdamParams::with_lr(0.0005), vec![b]),
            ],
            &params,
        )
        .unwrap();
        opt.step(&mut params, 1).unwrap();
        let ra = params.value(a)[0].abs();
        let rb = params.value(b)[0].abs();
        assert!((ra / rb - 20.0).abs() < 1e-6, "ratio {}", ra / rb);
    }

    #[test]
    fn step_zero_is_contract_error() {
        let mut params = Params::new();
        let id = params.insert("w", vec![1], vec![0.0f64]);
        let mut opt = single(0.01, &params, id);
        assert!(matches!(opt.step(&mut params, 0), Err(QffError::Contract(_))));
    }

    #[test]
    fn matches_scalar_reference_trace() {
        // Independent scalar Adam, written out longhand, driven for 10 steps
        // on the quadratic loss 0.5 * theta^2 (gradient = theta).
        let (lr, b1, b2, eps) = (0.05f64, 0.9, 0.999, 1e-8);
        let mut theta_ref = 1.0f64;
        let mut m = 0.0f64;
        let mut v = 0.0f64;
        let mut trace = Vec::new();
        for t in 1..=10 {
            let g = theta_ref;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let m_hat = m / (1.0 - b1.powi(t));
            let v_hat = v / (1.0 - b2.powi(t));
            theta_ref -= lr * m_hat / (v_hat.sqrt() + eps);
            trace.push(theta_ref);
        }

        let mut params = Params::new();
        let id = params.insert("theta", vec![1], vec![1.0f64]);
        let mut opt = single(lr, &params, id);
        for (t, &expected) in trace.iter().enumerate() {
            let g = params.value(id)[0];
            params.grad_mut(id)[0] = g;
            opt.step(&mut params, (t + 1) as u64).unwrap();
            params.zero_grads();
            let got = params.value(id)[0];
            assert!(
                (got - expected).abs() < 1e-14,
                "step {}: {got} vs {expected}",
                t + 1
            );
        }
    }

    #[test]
    fn quadratic_descent_settles() {
        // On L = 0.5 * theta^2 from theta = 1, |theta| decreases monotonically
        // until it reaches the lr-sized band around zero (Adam's
        // bias-corrected update has magnitude ~lr there and oscillates), then
        // stays inside that band for the rest of the 100 steps.
        for lr in [0.1, 0.01, 0.001] {
            let mut params = Params::new();
            let id = params.insert("theta", vec![1], vec![1.0f64]);
            let mut opt = single(lr, &params, id);
            let mut prev = 1.0f64;
            let mut in_band = false;
            for t in 1..=100 {
                let g = params.value(id)[0];
                params.grad_mut(id)[0] = g;
                opt.step(&mut params, t).unwrap();
                params.zero_grads();
                let cur = params.value(id)[0].abs();
                in_band = in_band || cur <= 2.0 * lr;
                if !in_band {
                    assert!(cur <= prev, "lr {lr} step {t}: |theta| rose from {prev} to {cur}");
                }
                if in_band {
                    assert!(cur <= 3.0 * lr, "lr {lr} step {t}: left the band, |theta| = {cur}");
                }
                prev = cur;
            }
            assert!(prev < 1.0);
        }
    }

    #[test]
    fn task_groups() {
        let enc = EncodingConfig::new(3, 2, 4, 2, Variant::Qff3d);
        let mlp = MlpConfig {
            input_width: enc.encoded_width(),
            hidden_width: 8,
            num_layers: 2,
            activation: Activation::Relu,
            output_width: 1,
            output_transform: OutputTransform::None,
        };
        let model = FieldModel::<f64>::init(enc, mlp, 0).unwrap();
        let opt = Adam::for_task(&model, TaskKind::Sdf).unwrap();
        assert_eq!(opt.groups.len(), 2);
        assert_eq!(opt.groups[0].hyper.lr, FIELD_BANK_LR);
        assert_eq!(opt.groups[1].hyper.lr, FIELD_MLP_LR);

        // Image task: everything in one group at the image learning rate.
        let enc = EncodingConfig::new(2, 4, 8, 1, Variant::QffLite);
        let mlp = MlpConfig {
            input_width: enc.encoded_width(),
            hidden_width: 8,
            num_layers: 2,
            activation: Activation::Relu,
            output_width: 3,
            output_transform: OutputTransform::None,
        };
        let model = FieldModel::<f64>::init(enc, mlp, 0).unwrap();
        let opt = Adam::for_task(&model, TaskKind::Image).unwrap();
        assert_eq!(opt.groups.len(), 1);
        assert_eq!(opt.groups[0].hyper.lr, IMAGE_LR);

        // Encoding-only model: a single group with no bank members.
        let enc = EncodingConfig::new(2, 4, 8, 1, Variant::PeOnly);
        let mlp = MlpConfig {
            input_width: enc.encoded_width(),
            hidden_width: 8,
            num_layers: 2,
            activation: Activation::Relu,
            output_width: 3,
            output_transform: OutputTransform::None,
        };
        let model = FieldModel::<f64>::init(enc, mlp, 0).unwrap();
        let opt = Adam::for_task(&model, TaskKind::Image).unwrap();
        assert_eq!(opt.groups.len(), 1);
    }
}
