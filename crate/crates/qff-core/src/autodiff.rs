//! Minimal reverse-mode differentiation engine.
//!
//! A [`Tape`] records primitive operations eagerly: each call computes the
//! forward value and appends a node. [`Tape::backward`] walks the nodes in
//! exact reverse recording order and accumulates `d loss / d p` into every
//! reachable [`ParamTensor`](crate::tensor::ParamTensor) with `+=` semantics,
//! so gradients from repeated backward calls add up until
//! [`Params::zero_grads`] is called.
//!
//! Feature banks are not copied onto the tape. The gather primitives hold a
//! `ParamId` plus the bin offsets and interpolation weights resolved at record
//! time; their backward pass scatter-adds weight-scaled output gradients into
//! exactly the bins touched in the forward pass, serially and in recording
//! order, which keeps gradients bitwise deterministic.

use crate::error::{QffError, Result};
use crate::scalar::{c, Scalar};
use crate::tensor::{ParamId, Params, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

/// One weighted read of an `channels`-wide feature row at a flat offset.
#[derive(Clone, Copy, Debug)]
pub struct Tap<F> {
    /// Flat index of the first channel of the feature row.
    pub offset: usize,
    pub weight: F,
}

#[derive(Debug)]
enum Op<F> {
    /// Snapshot of a parameter tensor; backward accumulates into its grad.
    Leaf { param: ParamId },
    /// Input data, targets, positional encodings: no gradient.
    Const,
    Matmul { a: NodeId, b: NodeId },
    Add { a: NodeId, b: NodeId },
    /// `mat + row` with `row` broadcast over all rows of `mat`.
    BroadcastAdd { mat: NodeId, row: NodeId },
    /// Elementwise product.
    Mul { a: NodeId, b: NodeId },
    Relu { x: NodeId },
    /// `x` where `gate > 0`, else 0. Used to chain derivatives through ReLU
    /// layers; carries no gradient into `gate`.
    ReluGate { gate: NodeId, x: NodeId },
    /// `sin(omega * x)`, the sinusoidal layer activation.
    SineAct { x: NodeId, omega: F },
    Sin { x: NodeId },
    Cos { x: NodeId },
    Sqrt { x: NodeId },
    Sigmoid { x: NodeId },
    Scale { x: NodeId, factor: F },
    Concat { parts: Vec<NodeId> },
    /// Two-tap linear interpolation over rows of a flat feature bank.
    GatherInterp1d {
        param: ParamId,
        taps: Vec<[Tap<F>; 2]>,
        channels: usize,
    },
    /// Four-tap bilinear interpolation over rows of a flat feature bank.
    GatherInterp2d {
        param: ParamId,
        taps: Vec<[Tap<F>; 4]>,
        channels: usize,
    },
    /// Mean squared error over all elements; output is 1x1.
    MseLoss { pred: NodeId, target: NodeId },
}

/// Ordered list of recorded primitives plus their forward values.
pub struct Tape<F> {
    ops: Vec<Op<F>>,
    vals: Vec<Tensor<F>>,
}

impl<F: Scalar> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Tape {
            ops: Vec::new(),
            vals: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    /// Forward value of a recorded node.
    pub fn value(&self, id: NodeId) -> &Tensor<F> {
        &self.vals[id.0]
    }

    fn push(&mut self, op: Op<F>, val: Tensor<F>) -> NodeId {
        let id = NodeId(self.ops.len());
        self.ops.push(op);
        self.vals.push(val);
        id
    }

    /// Record a parameter leaf, viewed as a `rows x cols` matrix.
    pub fn leaf(&mut self, params: &Params<F>, id: ParamId, rows: usize, cols: usize) -> Result<NodeId> {
        let p = params.get(id);
        if p.value.len() != rows * cols {
            return Err(QffError::shape("leaf", &[p.value.len()], &[rows, cols]));
        }
        let val = Tensor::from_vec(rows, cols, p.value.clone())?;
        Ok(self.push(Op::Leaf { param: id }, val))
    }

    /// Record a constant (no gradient flows into it).
    pub fn constant(&mut self, val: Tensor<F>) -> NodeId {
        self.push(Op::Const, val)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let val = self.vals[a.0].matmul(&self.vals[b.0])?;
        Ok(self.push(Op::Matmul { a, b }, val))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let val = self.vals[a.0].zip_map(&self.vals[b.0], |x, y| x + y).map_err(|_| {
            QffError::shape("add", &self.vals[a.0].shape(), &self.vals[b.0].shape())
        })?;
        Ok(self.push(Op::Add { a, b }, val))
    }

    /// `mat + row`, broadcasting `row` (shape `1 x w`) over every row of `mat`.
    pub fn broadcast_add(&mut self, mat: NodeId, row: NodeId) -> Result<NodeId> {
        let m = &self.vals[mat.0];
        let r = &self.vals[row.0];
        if r.rows() != 1 || r.cols() != m.cols() {
            return Err(QffError::shape("broadcast_add", &m.shape(), &r.shape()));
        }
        let mut out = m.clone();
        for i in 0..out.rows() {
            for j in 0..out.cols() {
                *out.at_mut(i, j) += r.at(0, j);
            }
        }
        Ok(self.push(Op::BroadcastAdd { mat, row }, out))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let val = self.vals[a.0].zip_map(&self.vals[b.0], |x, y| x * y).map_err(|_| {
            QffError::shape("elementwise_mul", &self.vals[a.0].shape(), &self.vals[b.0].shape())
        })?;
        Ok(self.push(Op::Mul { a, b }, val))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let val = self.vals[x.0].map(|v| if v > F::zero() { v } else { F::zero() });
        self.push(Op::Relu { x }, val)
    }

    /// `x` gated by `gate > 0`; the derivative-of-ReLU mask applied to `x`.
    pub fn relu_gate(&mut self, gate: NodeId, x: NodeId) -> Result<NodeId> {
        let val = self.vals[gate.0]
            .zip_map(&self.vals[x.0], |g, v| if g > F::zero() { v } else { F::zero() })
            .map_err(|_| {
                QffError::shape("relu_gate", &self.vals[gate.0].shape(), &self.vals[x.0].shape())
            })?;
        Ok(self.push(Op::ReluGate { gate, x }, val))
    }

    /// `sin(omega * x)` elementwise.
    pub fn sine_act(&mut self, x: NodeId, omega: F) -> NodeId {
        let val = self.vals[x.0].map(|v| (omega * v).sin());
        self.push(Op::SineAct { x, omega }, val)
    }

    pub fn sin(&mut self, x: NodeId) -> NodeId {
        let val = self.vals[x.0].map(|v| v.sin());
        self.push(Op::Sin { x }, val)
    }

    pub fn cos(&mut self, x: NodeId) -> NodeId {
        let val = self.vals[x.0].map(|v| v.cos());
        self.push(Op::Cos { x }, val)
    }

    pub fn sqrt(&mut self, x: NodeId) -> NodeId {
        let val = self.vals[x.0].map(|v| v.sqrt());
        self.push(Op::Sqrt { x }, val)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let val = self.vals[x.0].map(|v| F::one() / (F::one() + (-v).exp()));
        self.push(Op::Sigmoid { x }, val)
    }

    pub fn scale(&mut self, x: NodeId, factor: F) -> NodeId {
        let val = self.vals[x.0].map(|v| factor * v);
        self.push(Op::Scale { x, factor }, val)
    }

    /// Concatenate along the column axis; all parts must share a row count.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(QffError::Contract("concat of zero parts".into()));
        }
        let rows = self.vals[parts[0].0].rows();
        let mut cols = 0;
        for &p in parts {
            if self.vals[p.0].rows() != rows {
                return Err(QffError::shape(
                    "concat",
                    &self.vals[parts[0].0].shape(),
                    &self.vals[p.0].shape(),
                ));
            }
            cols += self.vals[p.0].cols();
        }
        let mut out = Tensor::zeros(rows, cols);
        let mut base = 0;
        for &p in parts {
            let part = &self.vals[p.0];
            for i in 0..rows {
                for j in 0..part.cols() {
                    *out.at_mut(i, j + base) = part.at(i, j);
                }
            }
            base += part.cols();
        }
        Ok(self.push(Op::Concat { parts: parts.to_vec() }, out))
    }

    /// Linear interpolation gather: row `r` of the output is
    /// `sum_t taps[r][t].weight * bank[taps[r][t].offset .. +channels]`,
    /// reshaped to `rows x cols` (row-major, `rows*cols == taps.len()*channels`).
    pub fn gather_interp_1d(
        &mut self,
        params: &Params<F>,
        param: ParamId,
        taps: Vec<[Tap<F>; 2]>,
        channels: usize,
        rows: usize,
        cols: usize,
    ) -> Result<NodeId> {
        let out = gather_forward(params.value(param), &taps, channels, rows, cols)?;
        Ok(self.push(Op::GatherInterp1d { param, taps, channels }, out))
    }

    /// Bilinear interpolation gather; same layout contract as the 1-D form.
    pub fn gather_interp_2d(
        &mut self,
        params: &Params<F>,
        param: ParamId,
        taps: Vec<[Tap<F>; 4]>,
        channels: usize,
        rows: usize,
        cols: usize,
    ) -> Result<NodeId> {
        let out = gather_forward(params.value(param), &taps, channels, rows, cols)?;
        Ok(self.push(Op::GatherInterp2d { param, taps, channels }, out))
    }

    /// Mean squared error over all elements.
    pub fn mse_loss(&mut self, pred: NodeId, target: NodeId) -> Result<NodeId> {
        let p = &self.vals[pred.0];
        let t = &self.vals[target.0];
        if p.shape() != t.shape() {
            return Err(QffError::shape("mse_loss", &p.shape(), &t.shape()));
        }
        let mut acc = F::zero();
        for (&a, &b) in p.as_slice().iter().zip(t.as_slice()) {
            let d = a - b;
            acc += d * d;
        }
        let val = Tensor::scalar(acc / c::<F>(p.as_slice().len() as f64));
        Ok(self.push(Op::MseLoss { pred, target }, val))
    }

    /// Reverse sweep from a scalar `loss`, accumulating into `params` grads.
    pub fn backward(&self, loss: NodeId, params: &mut Params<F>) -> Result<()> {
        let lval = &self.vals[loss.0];
        if lval.shape() != [1, 1] {
            return Err(QffError::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                lval.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<F>>> = vec![None; self.ops.len()];
        grads[loss.0] = Some(Tensor::scalar(F::one()));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            match &self.ops[idx] {
                Op::Const => {}
                Op::Leaf { param } => {
                    let dst = params.grad_mut(*param);
                    for (d, &s) in dst.iter_mut().zip(g.as_slice()) {
                        *d += s;
                    }
                }
                Op::Matmul { a, b } => {
                    let da = g.matmul_nt(&self.vals[b.0])?;
                    let db = self.vals[a.0].matmul_tn(&g)?;
                    accumulate(&mut grads[a.0], da);
                    accumulate(&mut grads[b.0], db);
                }
                Op::Add { a, b } => {
                    accumulate(&mut grads[a.0], g.clone());
                    accumulate(&mut grads[b.0], g);
                }
                Op::BroadcastAdd { mat, row } => {
                    let mut drow = Tensor::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for j in 0..g.cols() {
                            *drow.at_mut(0, j) += g.at(i, j);
                        }
                    }
                    accumulate(&mut grads[row.0], drow);
                    accumulate(&mut grads[mat.0], g);
                }
                Op::Mul { a, b } => {
                    let da = g.zip_map(&self.vals[b.0], |gv, bv| gv * bv)?;
                    let db = g.zip_map(&self.vals[a.0], |gv, av| gv * av)?;
                    accumulate(&mut grads[a.0], da);
                    accumulate(&mut grads[b.0], db);
                }
                Op::Relu { x } => {
                    let dx = g.zip_map(&self.vals[x.0], |gv, xv| {
                        if xv > F::zero() {
                            gv
                        } else {
                            F::zero()
                        }
                    })?;
                    accumulate(&mut grads[x.0], dx);
                }
                Op::ReluGate { gate, x } => {
                    let dx = g.zip_map(&self.vals[gate.0], |gv, gate_v| {
                        if gate_v > F::zero() {
                            gv
                        } else {
                            F::zero()
                        }
                    })?;
                    accumulate(&mut grads[x.0], dx);
                }
                Op::SineAct { x, omega } => {
                    let om = *omega;
                    let dx = g.zip_map(&self.vals[x.0], |gv, xv| gv * om * (om * xv).cos())?;
                    accumulate(&mut grads[x.0], dx);
                }
                Op::Sin { x } => {
                    let dx = g.zip_map(&self.vals[x.0], |gv, xv| gv * xv.cos())?;
                    accumulate(&mut grads[x.0], dx);
                }
                Op::Cos { x } => {
                    let dx = g.zip_map(&self.vals[x.0], |gv, xv| -gv * xv.sin())?;
                    accumulate(&mut grads[x.0], dx);
                }
                Op::Sqrt { x } => {
                    let half = c::<F>(0.5);
                    let dx = g.zip_map(&self.vals[idx], |gv, yv| gv * half / yv)?;
                    accumulate(&mut grads[x.0], dx);
                }
                Op::Sigmoid { x } => {
                    let dx = g.zip_map(&self.vals[idx], |gv, yv| gv * yv * (F::one() - yv))?;
                    accumulate(&mut grads[x.0], dx);
                }
                Op::Scale { x, factor } => {
                    let f = *factor;
                    accumulate(&mut grads[x.0], g.map(|gv| gv * f));
                }
                Op::Concat { parts } => {
                    let mut base = 0;
                    for &p in parts {
                        let pcols = self.vals[p.0].cols();
                        let mut dp = Tensor::zeros(g.rows(), pcols);
                        for i in 0..g.rows() {
                            for j in 0..pcols {
                                *dp.at_mut(i, j) = g.at(i, j + base);
                            }
                        }
                        accumulate(&mut grads[p.0], dp);
                        base += pcols;
                    }
                }
                Op::GatherInterp1d { param, taps, channels } => {
                    scatter_backward(params.grad_mut(*param), taps, *channels, &g);
                }
                Op::GatherInterp2d { param, taps, channels } => {
                    scatter_backward(params.grad_mut(*param), taps, *channels, &g);
                }
                Op::MseLoss { pred, target } => {
                    let gv = g.at(0, 0);
                    let p = &self.vals[pred.0];
                    let t = &self.vals[target.0];
                    let scale = gv * c::<F>(2.0 / p.as_slice().len() as f64);
                    let dp = p.zip_map(t, |a, b| scale * (a - b))?;
                    let dt = dp.map(|v| -v);
                    accumulate(&mut grads[pred.0], dp);
                    accumulate(&mut grads[target.0], dt);
                }
            }
        }
        Ok(())
    }
}

fn accumulate<F: Scalar>(slot: &mut Option<Tensor<F>>, g: Tensor<F>) {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => *slot = Some(g),
    }
}

fn gather_forward<F: Scalar, const T: usize>(
    bank: &[F],
    taps: &[[Tap<F>; T]],
    channels: usize,
    rows: usize,
    cols: usize,
) -> Result<Tensor<F>> {
    if taps.len() * channels != rows * cols {
        return Err(QffError::shape(
            "gather_interp",
            &[taps.len(), channels],
            &[rows, cols],
        ));
    }
    let mut data = Vec::with_capacity(taps.len() * channels);
    for row in taps {
        for t in row {
            if t.offset + channels > bank.len() {
                return Err(QffError::Contract(format!(
                    "gather tap offset {} + {} channels exceeds bank length {}",
                    t.offset,
                    channels,
                    bank.len()
                )));
            }
        }
        for ch in 0..channels {
            let mut acc = F::zero();
            for t in row {
                acc += t.weight * bank[t.offset + ch];
            }
            data.push(acc);
        }
    }
    Tensor::from_vec(rows, cols, data)
}

fn scatter_backward<F: Scalar, const T: usize>(
    grad: &mut [F],
    taps: &[[Tap<F>; T]],
    channels: usize,
    g: &Tensor<F>,
) {
    let gs = g.as_slice();
    for (r, row) in taps.iter().enumerate() {
        for ch in 0..channels {
            let upstream = gs[r * channels + ch];
            for t in row {
                grad[t.offset + ch] += t.weight * upstream;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_forward() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_vec(1, 2, vec![-1.0f64, 2.0]).unwrap());
        let y = tape.relu(x);
        assert_eq!(tape.value(y).as_slice(), &[0.0, 2.0]);
    }

    #[test]
    fn matmul_forward() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::from_vec(1, 2, vec![1.0f64, 2.0]).unwrap());
        let b = tape.constant(Tensor::from_vec(2, 1, vec![3.0, 4.0]).unwrap());
        let y = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(y).as_slice(), &[11.0]);
    }

    #[test]
    fn mse_of_identical_inputs_is_zero() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::from_vec(1, 2, vec![1.0f64, 2.0]).unwrap());
        let b = tape.constant(Tensor::from_vec(1, 2, vec![1.0, 2.0]).unwrap());
        let l = tape.mse_loss(a, b).unwrap();
        assert_eq!(tape.value(l).at(0, 0), 0.0);
    }

    #[test]
    fn quadratic_grad() {
        // loss = mse(w, 0) with w = 3 => d(w^2)/dw = 6
        let mut params = Params::new();
        let w = params.insert("w", vec![1], vec![3.0f64]);
        let mut tape = Tape::new();
        let wl = tape.leaf(&params, w, 1, 1).unwrap();
        let zero = tape.constant(Tensor::scalar(0.0));
        let loss = tape.mse_loss(wl, zero).unwrap();
        tape.backward(loss, &mut params).unwrap();
        assert_eq!(params.grad(w), &[6.0]);
    }

    #[test]
    fn gather_backward_splits_weights() {
        // hi_weight = 0.5: both touched bins receive 0.5 * upstream grad.
        let mut params = Params::new();
        let bank = params.insert("bank", vec![4], vec![0.0f64; 4]);
        let mut tape = Tape::new();
        let taps = vec![[
            Tap { offset: 1, weight: 0.5 },
            Tap { offset: 2, weight: 0.5 },
        ]];
        let out = tape.gather_interp_1d(&params, bank, taps, 1, 1, 1).unwrap();
        let target = tape.constant(Tensor::scalar(1.0));
        let loss = tape.mse_loss(out, target).unwrap();
        tape.backward(loss, &mut params).unwrap();
        // d mse / d out = 2*(0-1) = -2, so each bin gets -1.
        assert_eq!(params.grad(bank), &[0.0, -1.0, -1.0, 0.0]);
    }

    #[test]
    fn double_backward_doubles_grads() {
        let mut params = Params::new();
        let w = params.insert("w", vec![1], vec![3.0f64]);
        let mut tape = Tape::new();
        let wl = tape.leaf(&params, w, 1, 1).unwrap();
        let zero = tape.constant(Tensor::scalar(0.0));
        let loss = tape.mse_loss(wl, zero).unwrap();
        tape.backward(loss, &mut params).unwrap();
        tape.backward(loss, &mut params).unwrap();
        assert_eq!(params.grad(w), &[12.0]);
        params.zero_grads();
        assert_eq!(params.grad(w), &[0.0]);
    }

    #[test]
    fn backward_on_non_scalar_is_contract_error() {
        let mut params = Params::<f64>::new();
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::from_vec(1, 2, vec![1.0, 2.0]).unwrap());
        let b = tape.relu(a);
        let err = tape.backward(b, &mut params).unwrap_err();
        assert!(matches!(err, QffError::Contract(_)));
    }

    #[test]
    fn add_shape_mismatch_reports_shapes() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::zeros(1, 2));
        let b = tape.constant(Tensor::zeros(2, 2));
        let err = tape.add(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[1, 2]") && msg.contains("[2, 2]"), "got: {msg}");
    }
}
