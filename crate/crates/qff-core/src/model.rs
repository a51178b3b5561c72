//! A field model pairs an encoder with an MLP decoder and owns their
//! learnable state.
//!
//! Training goes through [`FieldModel::record_forward`], which records the
//! batched encoding (positional-encoding constants plus feature-bank gathers)
//! and the MLP onto a [`Tape`]. Position gradients for eikonal-style losses go
//! through [`FieldModel::record_forward_with_xgrad`], which additionally
//! propagates one tangent per input dimension through encoder and MLP as tape
//! operations, so the position gradient itself stays differentiable w.r.t.
//! every parameter.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::autodiff::{NodeId, Tap, Tape};
use crate::encoding::{
    bilinear_dga_weights, bilinear_dgb_weights, bilinear_weights, complement_axes, interp_deriv_weights,
    interp_weights, pe_values, pe_values_and_derivs, EncodingConfig, FeatureBank, Variant,
};
use crate::error::{QffError, Result};
use crate::mlp::{self, MlpConfig, MlpParams};
use crate::scalar::{c, Scalar};
use crate::tensor::{ParamId, Params, Tensor};

/// Rows per evaluation chunk; fixed so results do not depend on thread count.
const EVAL_CHUNK: usize = 2048;

/// Feature-bank entries initialize uniformly in `(-BANK_INIT, BANK_INIT)` so
/// training starts from the positional-encoding solution.
pub const BANK_INIT: f64 = 1e-4;

/// Encoder plus decoder with all learnable parameters.
#[derive(Clone, Debug)]
pub struct FieldModel<F> {
    pub encoding: EncodingConfig,
    pub mlp_cfg: MlpConfig,
    pub params: Params<F>,
    pub line_features: Option<ParamId>,
    pub plane_features: Option<ParamId>,
    pub mlp: MlpParams,
}

impl<F: Scalar> FieldModel<F> {
    /// Build a model with freshly initialized parameters.
    ///
    /// The MLP and the feature banks draw from independent seeded streams, so
    /// two models with the same seed share MLP weights even when one of them
    /// has no bank.
    pub fn init(encoding: EncodingConfig, mlp_cfg: MlpConfig, seed: u64) -> Result<Self> {
        encoding.validate()?;
        mlp_cfg.validate()?;
        if mlp_cfg.input_width != encoding.encoded_width() {
            return Err(QffError::Config(format!(
                "mlp input width {} does not match encoder output width {}",
                mlp_cfg.input_width,
                encoding.encoded_width()
            )));
        }
        let mut params = Params::new();
        let layout = encoding.layout();
        let mut bank_rng = ChaCha8Rng::seed_from_u64(seed);
        bank_rng.set_stream(1);
        let draw = |len: usize, rng: &mut ChaCha8Rng| -> Vec<F> {
            (0..len)
                .map(|_| c::<F>((rng.random::<f64>() * 2.0 - 1.0) * BANK_INIT))
                .collect()
        };
        let (line_features, plane_features) = match encoding.variant {
            Variant::PeOnly => (None, None),
            Variant::QffLite => {
                let line = params.insert(
                    "line_features",
                    vec![layout.dims, layout.comps, layout.bins, layout.channels],
                    draw(layout.line_len(), &mut bank_rng),
                );
                (Some(line), None)
            }
            Variant::Qff3d => {
                let line = params.insert(
                    "line_features",
                    vec![layout.dims, layout.comps, layout.bins, layout.channels],
                    draw(layout.line_len(), &mut bank_rng),
                );
                let planes = params.insert(
                    "plane_features",
                    vec![3, layout.comps, layout.bins, layout.bins, layout.channels],
                    draw(layout.plane_len(), &mut bank_rng),
                );
                (Some(line), Some(planes))
            }
        };
        let mut mlp_rng = ChaCha8Rng::seed_from_u64(seed);
        let mlp = mlp::init_mlp(&mlp_cfg, &mut params, &mut mlp_rng)?;
        Ok(FieldModel {
            encoding,
            mlp_cfg,
            params,
            line_features,
            plane_features,
            mlp,
        })
    }

    /// Rebuild a model from named parameter tensors (checkpoint loading).
    /// Tensors must appear in the same order, with the same names and shapes,
    /// as a freshly initialized model would produce them.
    pub fn from_tensors(
        encoding: EncodingConfig,
        mlp_cfg: MlpConfig,
        tensors: Vec<(String, Vec<usize>, Vec<F>)>,
    ) -> Result<Self> {
        let reference = FieldModel::<F>::init(encoding.clone(), mlp_cfg.clone(), 0)?;
        let expected: Vec<(String, Vec<usize>)> = reference
            .params
            .ids()
            .map(|id| {
                let p = reference.params.get(id);
                (p.name.clone(), p.shape.clone())
            })
            .collect();
        if tensors.len() != expected.len() {
            return Err(QffError::Corruption(format!(
                "expected {} parameter tensors, found {}",
                expected.len(),
                tensors.len()
            )));
        }
        let mut params = Params::new();
        for ((name, shape, data), (exp_name, exp_shape)) in tensors.into_iter().zip(expected) {
            if name != exp_name || shape != exp_shape {
                return Err(QffError::Corruption(format!(
                    "tensor {name} with shape {shape:?} does not match expected {exp_name} {exp_shape:?}"
                )));
            }
            if data.len() != shape.iter().product::<usize>() {
                return Err(QffError::Corruption(format!(
                    "tensor {name} has {} values, shape {shape:?} requires {}",
                    data.len(),
                    shape.iter().product::<usize>()
                )));
            }
            params.insert(name, shape, data);
        }
        Ok(FieldModel {
            line_features: reference.line_features,
            plane_features: reference.plane_features,
            mlp: reference.mlp,
            encoding,
            mlp_cfg,
            params,
        })
    }

    /// Exact count of learnable scalars (bank entries plus MLP weights/biases).
    pub fn count_params(&self) -> usize {
        self.params.count_scalars()
    }

    pub fn bank_param_ids(&self) -> Vec<ParamId> {
        self.line_features
            .into_iter()
            .chain(self.plane_features)
            .collect()
    }

    pub fn mlp_param_ids(&self) -> Vec<ParamId> {
        self.mlp.param_ids()
    }

    /// Borrowed view of the feature bank, if this variant has one.
    pub fn bank(&self) -> Option<FeatureBank<'_, F>> {
        let line = self.line_features?;
        let planes = self.plane_features.map(|id| self.params.value(id));
        FeatureBank::new(&self.encoding, self.params.value(line), planes).ok()
    }

    fn coords_f64(&self, coords: &Tensor<F>) -> Result<Vec<f64>> {
        if coords.cols() != self.encoding.input_dims {
            return Err(QffError::shape(
                "encode_batch",
                &coords.shape(),
                &[coords.rows(), self.encoding.input_dims],
            ));
        }
        let xs: Vec<f64> = coords.as_slice().iter().map(|v| v.as_f64()).collect();
        if let Some(bad) = xs.iter().find(|v| !v.is_finite()) {
            return Err(QffError::InvalidInput(format!(
                "coordinate batch contains a non-finite value ({bad})"
            )));
        }
        Ok(xs)
    }

    /// Record the batched encoder output for `coords` (`batch x K`).
    pub fn record_encoding(&self, tape: &mut Tape<F>, coords: &Tensor<F>) -> Result<NodeId> {
        let xs = self.coords_f64(coords)?;
        let rows = coords.rows();
        let k = self.encoding.input_dims;
        let comps = self.encoding.components();
        let l = self.encoding.num_frequencies;
        let pe: Vec<f64> = xs.chunks(k).flat_map(|x| pe_values(x, l)).collect();

        match self.encoding.variant {
            Variant::PeOnly => {
                let data: Vec<F> = pe.iter().map(|&g| c::<F>(g)).collect();
                Ok(tape.constant(Tensor::from_vec(rows, k * comps, data)?))
            }
            Variant::QffLite => {
                let layout = self.encoding.layout();
                let n = layout.channels;
                let line = self.line_features.expect("qff_lite has a line bank");
                let mut taps = Vec::with_capacity(rows * k * comps);
                for b in 0..rows {
                    for kk in 0..k {
                        for i in 0..comps {
                            let g = pe[(b * k + kk) * comps + i];
                            let ((lo, wlo), (hi, whi)) = interp_weights(g, layout.bins);
                            taps.push([
                                Tap { offset: layout.line_offset(kk, i, lo), weight: c::<F>(wlo) },
                                Tap { offset: layout.line_offset(kk, i, hi), weight: c::<F>(whi) },
                            ]);
                        }
                    }
                }
                let feats = tape.gather_interp_1d(&self.params, line, taps, n, rows, k * comps * n)?;
                if !self.encoding.add_pe {
                    return Ok(feats);
                }
                let mut pe_data = Vec::with_capacity(rows * k * comps * n);
                for row_pe in pe.chunks(k * comps) {
                    for &g in row_pe {
                        let gv = c::<F>(g);
                        pe_data.extend(std::iter::repeat_n(gv, n));
                    }
                }
                let pe_node = tape.constant(Tensor::from_vec(rows, k * comps * n, pe_data)?);
                tape.add(feats, pe_node)
            }
            Variant::Qff3d => {
                let parts = self.record_axis_blocks(tape, rows, &pe)?;
                tape.concat(&parts)
            }
        }
    }

    /// Per-axis QFF-3D blocks: `line * plane (+ pe)` for each of the 3 axes.
    fn record_axis_blocks(&self, tape: &mut Tape<F>, rows: usize, pe: &[f64]) -> Result<Vec<NodeId>> {
        let layout = self.encoding.layout();
        let comps = layout.comps;
        let n = layout.channels;
        let line = self.line_features.expect("qff_3d has a line bank");
        let planes = self.plane_features.expect("qff_3d has a plane bank");
        let mut parts = Vec::with_capacity(3);
        for axis in 0..3 {
            let (bdim, cdim) = complement_axes(axis);
            let mut line_taps = Vec::with_capacity(rows * comps);
            let mut plane_taps = Vec::with_capacity(rows * comps);
            for b in 0..rows {
                let row_pe = &pe[b * 3 * comps..(b + 1) * 3 * comps];
                for i in 0..comps {
                    let ((lo, wlo), (hi, whi)) = interp_weights(row_pe[axis * comps + i], layout.bins);
                    line_taps.push([
                        Tap { offset: layout.line_offset(axis, i, lo), weight: c::<F>(wlo) },
                        Tap { offset: layout.line_offset(axis, i, hi), weight: c::<F>(whi) },
                    ]);
                    let corners =
                        bilinear_weights(row_pe[bdim * comps + i], row_pe[cdim * comps + i], layout.bins);
                    plane_taps.push(corners.map(|(ma, mb, w)| Tap {
                        offset: layout.plane_offset(axis, i, ma, mb),
                        weight: c::<F>(w),
                    }));
                }
            }
            let line_node = tape.gather_interp_1d(&self.params, line, line_taps, n, rows, comps * n)?;
            let plane_node = tape.gather_interp_2d(&self.params, planes, plane_taps, n, rows, comps * n)?;
            let prod = tape.mul(line_node, plane_node)?;
            let block = if self.encoding.add_pe {
                let mut pe_data = Vec::with_capacity(rows * comps * n);
                for b in 0..rows {
                    for i in 0..comps {
                        let gv = c::<F>(pe[(b * 3 + axis) * comps + i]);
                        pe_data.extend(std::iter::repeat_n(gv, n));
                    }
                }
                let pe_node = tape.constant(Tensor::from_vec(rows, comps * n, pe_data)?);
                tape.add(prod, pe_node)?
            } else {
                prod
            };
            parts.push(block);
        }
        Ok(parts)
    }

    /// Record the encoder output together with one tangent node per input
    /// dimension (`d encoded / d x_d`, each `batch x width`).
    pub fn record_encoding_with_tangents(
        &self,
        tape: &mut Tape<F>,
        coords: &Tensor<F>,
    ) -> Result<(NodeId, Vec<NodeId>)> {
        let xs = self.coords_f64(coords)?;
        let rows = coords.rows();
        let k = self.encoding.input_dims;
        let comps = self.encoding.components();
        let l = self.encoding.num_frequencies;
        let mut pe = Vec::with_capacity(rows * k * comps);
        let mut dpe = Vec::with_capacity(rows * k * comps);
        for x in xs.chunks(k) {
            let (v, d) = pe_values_and_derivs(x, l);
            pe.extend(v);
            dpe.extend(d);
        }

        match self.encoding.variant {
            Variant::PeOnly => {
                let data: Vec<F> = pe.iter().map(|&g| c::<F>(g)).collect();
                let enc = tape.constant(Tensor::from_vec(rows, k * comps, data)?);
                let mut tangents = Vec::with_capacity(k);
                for d in 0..k {
                    let mut t = vec![F::zero(); rows * k * comps];
                    for b in 0..rows {
                        for i in 0..comps {
                            t[b * k * comps + d * comps + i] = c::<F>(dpe[(b * k + d) * comps + i]);
                        }
                    }
                    tangents.push(tape.constant(Tensor::from_vec(rows, k * comps, t)?));
                }
                Ok((enc, tangents))
            }
            Variant::QffLite => {
                let enc = self.record_encoding(tape, coords)?;
                let layout = self.encoding.layout();
                let n = layout.channels;
                let line = self.line_features.expect("qff_lite has a line bank");
                let mut tangents = Vec::with_capacity(k);
                for d in 0..k {
                    // Derivative taps: zero weights for components of other
                    // dimensions keep the output layout aligned with `enc`.
                    let mut taps = Vec::with_capacity(rows * k * comps);
                    for b in 0..rows {
                        for kk in 0..k {
                            for i in 0..comps {
                                let comp = (b * k + kk) * comps + i;
                                let (wlo, whi) = if kk == d {
                                    let ((_, dl), (_, dh)) = interp_deriv_weights(pe[comp], layout.bins);
                                    (dl * dpe[comp], dh * dpe[comp])
                                } else {
                                    (0.0, 0.0)
                                };
                                let ((lo, _), (hi, _)) = interp_weights(pe[comp], layout.bins);
                                taps.push([
                                    Tap { offset: layout.line_offset(kk, i, lo), weight: c::<F>(wlo) },
                                    Tap { offset: layout.line_offset(kk, i, hi), weight: c::<F>(whi) },
                                ]);
                            }
                        }
                    }
                    let slope = tape.gather_interp_1d(&self.params, line, taps, n, rows, k * comps * n)?;
                    let t = if self.encoding.add_pe {
                        let mut data = vec![F::zero(); rows * k * comps * n];
                        for b in 0..rows {
                            for i in 0..comps {
                                let dv = c::<F>(dpe[(b * k + d) * comps + i]);
                                for ch in 0..n {
                                    data[(b * k * comps + d * comps + i) * n + ch] = dv;
                                }
                            }
                        }
                        let dpe_node = tape.constant(Tensor::from_vec(rows, k * comps * n, data)?);
                        tape.add(slope, dpe_node)?
                    } else {
                        slope
                    };
                    tangents.push(t);
                }
                Ok((enc, tangents))
            }
            Variant::Qff3d => self.record_qff3d_with_tangents(tape, rows, &pe, &dpe),
        }
    }

    fn record_qff3d_with_tangents(
        &self,
        tape: &mut Tape<F>,
        rows: usize,
        pe: &[f64],
        dpe: &[f64],
    ) -> Result<(NodeId, Vec<NodeId>)> {
        let layout = self.encoding.layout();
        let comps = layout.comps;
        let n = layout.channels;
        let line = self.line_features.expect("qff_3d has a line bank");
        let planes = self.plane_features.expect("qff_3d has a plane bank");

        // Value nodes per axis, reused by the tangent products.
        let mut line_nodes = Vec::with_capacity(3);
        let mut plane_nodes = Vec::with_capacity(3);
        let mut blocks = Vec::with_capacity(3);
        for axis in 0..3 {
            let (bdim, cdim) = complement_axes(axis);
            let mut line_taps = Vec::with_capacity(rows * comps);
            let mut plane_taps = Vec::with_capacity(rows * comps);
            for b in 0..rows {
                let row_pe = &pe[b * 3 * comps..(b + 1) * 3 * comps];
                for i in 0..comps {
                    let ((lo, wlo), (hi, whi)) = interp_weights(row_pe[axis * comps + i], layout.bins);
                    line_taps.push([
                        Tap { offset: layout.line_offset(axis, i, lo), weight: c::<F>(wlo) },
                        Tap { offset: layout.line_offset(axis, i, hi), weight: c::<F>(whi) },
                    ]);
                    let corners =
                        bilinear_weights(row_pe[bdim * comps + i], row_pe[cdim * comps + i], layout.bins);
                    plane_taps.push(corners.map(|(ma, mb, w)| Tap {
                        offset: layout.plane_offset(axis, i, ma, mb),
                        weight: c::<F>(w),
                    }));
                }
            }
            let line_node = tape.gather_interp_1d(&self.params, line, line_taps, n, rows, comps * n)?;
            let plane_node = tape.gather_interp_2d(&self.params, planes, plane_taps, n, rows, comps * n)?;
            line_nodes.push(line_node);
            plane_nodes.push(plane_node);
            let prod = tape.mul(line_node, plane_node)?;
            let block = if self.encoding.add_pe {
                let mut pe_data = Vec::with_capacity(rows * comps * n);
                for b in 0..rows {
                    for i in 0..comps {
                        let gv = c::<F>(pe[(b * 3 + axis) * comps + i]);
                        pe_data.extend(std::iter::repeat_n(gv, n));
                    }
                }
                let pe_node = tape.constant(Tensor::from_vec(rows, comps * n, pe_data)?);
                tape.add(prod, pe_node)?
            } else {
                prod
            };
            blocks.push(block);
        }
        let enc = tape.concat(&blocks)?;

        let mut tangents = Vec::with_capacity(3);
        for d in 0..3 {
            let mut tangent_blocks = Vec::with_capacity(3);
            for axis in 0..3 {
                let (bdim, cdim) = complement_axes(axis);
                let part = if d == axis {
                    // Line slope times plane value (+ PE derivative).
                    let mut taps = Vec::with_capacity(rows * comps);
                    for b in 0..rows {
                        let base = b * 3 * comps + axis * comps;
                        for i in 0..comps {
                            let g = pe[base + i];
                            let ((lo, dl), (hi, dh)) = interp_deriv_weights(g, layout.bins);
                            let scale = dpe[base + i];
                            taps.push([
                                Tap { offset: layout.line_offset(axis, i, lo), weight: c::<F>(dl * scale) },
                                Tap { offset: layout.line_offset(axis, i, hi), weight: c::<F>(dh * scale) },
                            ]);
                        }
                    }
                    let dline = tape.gather_interp_1d(&self.params, line, taps, n, rows, comps * n)?;
                    let prod = tape.mul(dline, plane_nodes[axis])?;
                    if self.encoding.add_pe {
                        let mut data = Vec::with_capacity(rows * comps * n);
                        for b in 0..rows {
                            for i in 0..comps {
                                let dv = c::<F>(dpe[(b * 3 + axis) * comps + i]);
                                data.extend(std::iter::repeat_n(dv, n));
                            }
                        }
                        let dpe_node = tape.constant(Tensor::from_vec(rows, comps * n, data)?);
                        tape.add(prod, dpe_node)?
                    } else {
                        prod
                    }
                } else {
                    // Line value times the plane partial along this dimension.
                    let first = d == bdim;
                    let mut taps = Vec::with_capacity(rows * comps);
                    for b in 0..rows {
                        let row_pe = &pe[b * 3 * comps..(b + 1) * 3 * comps];
                        for i in 0..comps {
                            let ga = row_pe[bdim * comps + i];
                            let gb = row_pe[cdim * comps + i];
                            let corners = if first {
                                bilinear_dga_weights(ga, gb, layout.bins)
                            } else {
                                bilinear_dgb_weights(ga, gb, layout.bins)
                            };
                            let scale = dpe[(b * 3 + d) * comps + i];
                            taps.push(corners.map(|(ma, mb, w)| Tap {
                                offset: layout.plane_offset(axis, i, ma, mb),
                                weight: c::<F>(w * scale),
                            }));
                        }
                    }
                    let dplane = tape.gather_interp_2d(&self.params, planes, taps, n, rows, comps * n)?;
                    tape.mul(line_nodes[axis], dplane)?
                };
                tangent_blocks.push(part);
            }
            tangents.push(tape.concat(&tangent_blocks)?);
        }
        Ok((enc, tangents))
    }

    /// Record encoder and MLP; returns the `batch x output_width` node.
    pub fn record_forward(&self, tape: &mut Tape<F>, coords: &Tensor<F>) -> Result<NodeId> {
        let enc = self.record_encoding(tape, coords)?;
        mlp::record_forward(tape, &self.params, &self.mlp, &self.mlp_cfg, enc)
    }

    /// Record forward pass plus the position gradient `d output / d x_d` for
    /// every input dimension, all on the tape.
    pub fn record_forward_with_xgrad(
        &self,
        tape: &mut Tape<F>,
        coords: &Tensor<F>,
    ) -> Result<(NodeId, Vec<NodeId>)> {
        let (enc, tangents) = self.record_encoding_with_tangents(tape, coords)?;
        mlp::record_forward_with_tangents(tape, &self.params, &self.mlp, &self.mlp_cfg, enc, &tangents)
    }

    /// Evaluate the model without keeping gradients. Work is split into
    /// fixed-size chunks evaluated in parallel; results are byte-identical for
    /// any thread count.
    pub fn forward(&self, coords: &Tensor<F>) -> Result<Tensor<F>> {
        let k = self.encoding.input_dims;
        let rows = coords.rows();
        let chunks: Vec<&[F]> = coords.as_slice().chunks(EVAL_CHUNK * k).collect();
        let outputs: Vec<Result<Vec<F>>> = chunks
            .par_iter()
            .map(|chunk| {
                let n_rows = chunk.len() / k;
                let batch = Tensor::from_vec(n_rows, k, chunk.to_vec())?;
                let mut tape = Tape::new();
                let out = self.record_forward(&mut tape, &batch)?;
                Ok(tape.value(out).as_slice().to_vec())
            })
            .collect();
        let mut data = Vec::with_capacity(rows * self.mlp_cfg.output_width);
        for out in outputs {
            data.extend(out?);
        }
        Tensor::from_vec(rows, self.mlp_cfg.output_width, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding;
    use crate::mlp::{Activation, OutputTransform};

    fn mlp_cfg(input: usize, output: usize) -> MlpConfig {
        MlpConfig {
            input_width: input,
            hidden_width: 16,
            num_layers: 2,
            activation: Activation::Relu,
            output_width: output,
            output_transform: OutputTransform::None,
        }
    }

    fn probe(rows: usize, k: usize, seed: u64) -> Tensor<f64> {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..rows * k).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        Tensor::from_vec(rows, k, data).unwrap()
    }

    #[test]
    fn mismatched_widths_rejected() {
        let enc = EncodingConfig::new(2, 4, 8, 1, Variant::QffLite);
        let bad = mlp_cfg(enc.encoded_width() + 1, 3);
        assert!(matches!(
            FieldModel::<f32>::init(enc, bad, 0),
            Err(QffError::Config(_))
        ));
    }

    #[test]
    fn tape_encoding_matches_pure_encoding() {
        for variant in [Variant::PeOnly, Variant::QffLite, Variant::Qff3d] {
            let enc_cfg = EncodingConfig::new(3, 3, 5, 2, variant);
            let model =
                FieldModel::<f64>::init(enc_cfg.clone(), mlp_cfg(enc_cfg.encoded_width(), 1), 11).unwrap();
            let coords = probe(7, 3, 42);
            let mut tape = Tape::new();
            let node = model.record_encoding(&mut tape, &coords).unwrap();
            let batched = tape.value(node);
            for r in 0..coords.rows() {
                let x = coords.row(r);
                let pure = encoding::encode(x, model.bank().as_ref(), &enc_cfg).unwrap();
                for (j, &v) in pure.values.iter().enumerate() {
                    let got = batched.at(r, j);
                    assert!(
                        (got - v).abs() <= 1e-12 * v.abs().max(1.0),
                        "{variant:?} row {r} col {j}: tape {got} vs pure {v}"
                    );
                }
            }
        }
    }

    #[test]
    fn tangents_match_pure_jacobian() {
        for variant in [Variant::PeOnly, Variant::QffLite, Variant::Qff3d] {
            let enc_cfg = EncodingConfig::new(3, 2, 4, 2, variant);
            let model =
                FieldModel::<f64>::init(enc_cfg.clone(), mlp_cfg(enc_cfg.encoded_width(), 1), 3).unwrap();
            let coords = probe(5, 3, 7);
            let mut tape = Tape::new();
            let (_, tangents) = model.record_encoding_with_tangents(&mut tape, &coords).unwrap();
            let width = enc_cfg.encoded_width();
            for r in 0..coords.rows() {
                let pure = encoding::encode_with_jacobian(coords.row(r), model.bank().as_ref(), &enc_cfg)
                    .unwrap();
                let jac = pure.jacobian_wrt_x.unwrap();
                for d in 0..3 {
                    let tv = tape.value(tangents[d]);
                    for j in 0..width {
                        let got = tv.at(r, j);
                        let want = jac[j * 3 + d];
                        assert!(
                            (got - want).abs() <= 1e-10 * want.abs().max(1.0),
                            "{variant:?} row {r} dim {d} col {j}: {got} vs {want}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn eval_forward_matches_tape_forward() {
        let enc_cfg = EncodingConfig::new(2, 4, 8, 1, Variant::QffLite);
        let model = FieldModel::<f64>::init(enc_cfg.clone(), mlp_cfg(enc_cfg.encoded_width(), 3), 5).unwrap();
        let coords = probe(33, 2, 9);
        let eval = model.forward(&coords).unwrap();
        let mut tape = Tape::new();
        let node = model.record_forward(&mut tape, &coords).unwrap();
        assert_eq!(eval.as_slice(), tape.value(node).as_slice());
    }

    #[test]
    fn count_params_closed_forms() {
        // Line bank: K * 2L * M * N.
        let enc_cfg = EncodingConfig::new(3, 6, 128, 16, Variant::QffLite);
        let model = FieldModel::<f32>::init(enc_cfg.clone(), mlp_cfg(enc_cfg.encoded_width(), 1), 0).unwrap();
        let line = model.line_features.unwrap();
        assert_eq!(model.params.get(line).len(), 3 * 12 * 128 * 16);
        assert_eq!(model.params.get(line).len(), 73_728);

        // Plane bank: 3 * 2L * M^2 * N.
        let enc3 = EncodingConfig::new(3, 6, 128, 16, Variant::Qff3d);
        let model3 = FieldModel::<f32>::init(enc3.clone(), mlp_cfg(enc3.encoded_width(), 1), 0).unwrap();
        let planes = model3.plane_features.unwrap();
        assert_eq!(model3.params.get(planes).len(), 3 * 12 * 128 * 128 * 16);
        assert_eq!(model3.params.get(planes).len(), 9_437_184);

        // Encoding-only models count MLP parameters alone.
        let pe = EncodingConfig::new(2, 4, 8, 1, Variant::PeOnly);
        let cfg = mlp_cfg(pe.encoded_width(), 3);
        let pe_model = FieldModel::<f32>::init(pe, cfg.clone(), 0).unwrap();
        assert_eq!(pe_model.count_params(), cfg.param_count());
    }
}
