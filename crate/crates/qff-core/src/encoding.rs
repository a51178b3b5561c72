//! Fourier positional encoding and the quantized-feature encoders built on it.
//!
//! A coordinate `x` in `[-1, 1]^K` is expanded into sinusoids over `L`
//! frequency levels (`sin(2^l pi x_k)`, `cos(2^l pi x_k)`). The quantized
//! variants discretize each encoding component's `[-1, 1]` range into `M` bins
//! holding learnable `N`-channel features:
//!
//! * `QffLite` linearly interpolates a per-component feature and adds the
//!   original encoding value back in, per channel.
//! * `Qff3d` combines, for each axis, a line feature with a bilinearly
//!   interpolated feature from the complementary-plane grid via an
//!   elementwise product, then adds the axis encoding value. The three axis
//!   blocks are concatenated.
//!
//! All trigonometry runs in `f64` regardless of the storage scalar, so the
//! `f32` and `f64` pipelines see bitwise-identical encoding values after the
//! final cast. Frequencies are clamped at `2^31 * pi`: levels beyond 31 add
//! channels but no additional frequency content.

use crate::error::{QffError, Result};
use crate::scalar::{c, Scalar};

/// Highest distinct frequency level; `2^l` saturates here.
pub const MAX_FREQ_LEVEL: usize = 31;

/// Which encoder a configuration selects.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    PeOnly,
    QffLite,
    Qff3d,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::PeOnly => "pe_only",
            Variant::QffLite => "qff_lite",
            Variant::Qff3d => "qff_3d",
        }
    }
}

/// Hyperparameters shared by every encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodingConfig {
    /// Coordinate dimensionality `K` (1, 2, or 3 for the shipped tasks).
    pub input_dims: usize,
    /// Number of frequency levels `L`; each contributes a sin and a cos.
    pub num_frequencies: usize,
    /// Bins per encoding component, `M >= 2`.
    pub bins_per_axis: usize,
    /// Feature channels per bin, `N >= 1`.
    pub feature_channels: usize,
    pub variant: Variant,
    /// Add the raw encoding value onto the interpolated features.
    pub add_pe: bool,
}

impl EncodingConfig {
    pub fn new(
        input_dims: usize,
        num_frequencies: usize,
        bins_per_axis: usize,
        feature_channels: usize,
        variant: Variant,
    ) -> Self {
        EncodingConfig {
            input_dims,
            num_frequencies,
            bins_per_axis,
            feature_channels,
            variant,
            add_pe: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.input_dims) {
            return Err(QffError::Config(format!(
                "input_dims must be 1..=3, got {}",
                self.input_dims
            )));
        }
        if !(1..=128).contains(&self.num_frequencies) {
            return Err(QffError::Config(format!(
                "num_frequencies must be 1..=128, got {}",
                self.num_frequencies
            )));
        }
        if self.bins_per_axis < 2 {
            return Err(QffError::Config(format!(
                "bins_per_axis must be >= 2, got {}",
                self.bins_per_axis
            )));
        }
        if self.feature_channels < 1 {
            return Err(QffError::Config("feature_channels must be >= 1".into()));
        }
        if self.variant == Variant::Qff3d && self.input_dims != 3 {
            return Err(QffError::Config(format!(
                "the 3-D encoder requires input_dims = 3, got {}",
                self.input_dims
            )));
        }
        Ok(())
    }

    /// Encoding components per input dimension (`2L`).
    pub fn components(&self) -> usize {
        2 * self.num_frequencies
    }

    /// Width of the raw positional encoding (`K * 2L`).
    pub fn pe_width(&self) -> usize {
        self.input_dims * self.components()
    }

    /// Width of the encoder output for this configuration.
    pub fn encoded_width(&self) -> usize {
        match self.variant {
            Variant::PeOnly => self.pe_width(),
            Variant::QffLite => self.pe_width() * self.feature_channels,
            Variant::Qff3d => 3 * self.components() * self.feature_channels,
        }
    }

    pub fn layout(&self) -> BankLayout {
        BankLayout {
            dims: self.input_dims,
            comps: self.components(),
            bins: self.bins_per_axis,
            channels: self.feature_channels,
        }
    }
}

/// Width of the encoder output for a configuration.
pub fn encoded_width(cfg: &EncodingConfig) -> usize {
    cfg.encoded_width()
}

/// Index arithmetic for the flat feature-bank arrays.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BankLayout {
    pub dims: usize,
    /// `2L` components per dimension.
    pub comps: usize,
    pub bins: usize,
    pub channels: usize,
}

impl BankLayout {
    /// Length of the line bank: `K * 2L * M * N`.
    pub fn line_len(&self) -> usize {
        self.dims * self.comps * self.bins * self.channels
    }

    /// Length of the plane bank: `3 * 2L * M * M * N`.
    pub fn plane_len(&self) -> usize {
        3 * self.comps * self.bins * self.bins * self.channels
    }

    /// Flat offset of the feature row for dimension `k`, component `i`, bin `m`.
    #[inline]
    pub fn line_offset(&self, k: usize, i: usize, m: usize) -> usize {
        ((k * self.comps + i) * self.bins + m) * self.channels
    }

    /// Flat offset of the plane feature row for `axis`, component `i`, bins `(ma, mb)`.
    #[inline]
    pub fn plane_offset(&self, axis: usize, i: usize, ma: usize, mb: usize) -> usize {
        (((axis * self.comps + i) * self.bins + ma) * self.bins + mb) * self.channels
    }

    /// Flat offset of the start of one `M x M x N` plane slice.
    pub fn plane_slice(&self, axis: usize, i: usize) -> usize {
        self.plane_offset(axis, i, 0, 0)
    }
}

/// The two axes whose plane complements the given line axis.
pub const fn complement_axes(axis: usize) -> (usize, usize) {
    match axis {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    }
}

/// Borrowed view of the learnable feature tensors for one encoder.
#[derive(Clone, Copy, Debug)]
pub struct FeatureBank<'a, F> {
    pub layout: BankLayout,
    /// `K x 2L x M x N`, flat row-major.
    pub line: &'a [F],
    /// `3 x 2L x M x M x N`, flat row-major; present only for the 3-D encoder.
    pub planes: Option<&'a [F]>,
}

impl<'a, F: Scalar> FeatureBank<'a, F> {
    pub fn new(cfg: &EncodingConfig, line: &'a [F], planes: Option<&'a [F]>) -> Result<Self> {
        let layout = cfg.layout();
        if line.len() != layout.line_len() {
            return Err(QffError::Config(format!(
                "line feature bank has {} entries, config expects {}",
                line.len(),
                layout.line_len()
            )));
        }
        match (cfg.variant, planes) {
            (Variant::Qff3d, Some(p)) => {
                if p.len() != layout.plane_len() {
                    return Err(QffError::Config(format!(
                        "plane feature bank has {} entries, config expects {}",
                        p.len(),
                        layout.plane_len()
                    )));
                }
            }
            (Variant::Qff3d, None) => {
                return Err(QffError::Config(
                    "the 3-D encoder requires a plane feature bank".into(),
                ));
            }
            _ => {}
        }
        Ok(FeatureBank { layout, line, planes })
    }
}

/// Encoder output: a feature vector and, on request, its Jacobian w.r.t. the
/// input coordinates (`encoded_width x K`, row-major).
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedVector<F> {
    pub values: Vec<F>,
    pub jacobian_wrt_x: Option<Vec<F>>,
}

/// Angular frequency of level `l`: `2^min(l, 31) * pi`.
#[inline]
pub fn frequency(level: usize) -> f64 {
    let l = level.min(MAX_FREQ_LEVEL) as i32;
    2f64.powi(l) * std::f64::consts::PI
}

fn check_finite<F: Scalar>(x: &[F]) -> Result<()> {
    if let Some(v) = x.iter().find(|v| !v.is_finite()) {
        return Err(QffError::InvalidInput(format!(
            "coordinate contains a non-finite value ({v})"
        )));
    }
    Ok(())
}

/// Raw positional encoding values of one point, in `f64`.
///
/// Layout is dimension-major then level-major with sin before cos:
/// `[sin(2^0 pi x_0), cos(2^0 pi x_0), sin(2^1 pi x_0), ..., sin(2^0 pi x_1), ...]`.
/// The feature banks index bins by exactly this ordering.
pub fn pe_values(x: &[f64], num_frequencies: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len() * 2 * num_frequencies);
    for &xk in x {
        for l in 0..num_frequencies {
            let arg = frequency(l) * xk;
            out.push(arg.sin());
            out.push(arg.cos());
        }
    }
    out
}

/// Positional encoding values and their derivatives w.r.t. the own dimension.
///
/// Returns `(values, derivs)`, both `K * 2L` long; `derivs[k * 2L + i]` is
/// `d values[k * 2L + i] / d x_k` (derivatives w.r.t. other dimensions vanish).
pub fn pe_values_and_derivs(x: &[f64], num_frequencies: usize) -> (Vec<f64>, Vec<f64>) {
    let mut vals = Vec::with_capacity(x.len() * 2 * num_frequencies);
    let mut derivs = Vec::with_capacity(vals.capacity());
    for &xk in x {
        for l in 0..num_frequencies {
            let f = frequency(l);
            let (s, co) = (f * xk).sin_cos();
            vals.push(s);
            vals.push(co);
            derivs.push(f * co);
            derivs.push(-f * s);
        }
    }
    (vals, derivs)
}

/// Sinusoidal expansion of a coordinate over `L` frequency levels.
pub fn positional_encode<F: Scalar>(x: &[F], num_frequencies: usize) -> Result<Vec<F>> {
    check_finite(x)?;
    let xf: Vec<f64> = x.iter().map(|v| v.as_f64()).collect();
    Ok(pe_values(&xf, num_frequencies).into_iter().map(c::<F>).collect())
}

/// Map an encoding value `g` (clamped to `[-1, 1]`) onto the bin grid.
///
/// The continuous bin coordinate is `u = (g + 1) / 2 * (M - 1)`; returns
/// `(floor(u), min(floor(u) + 1, M - 1), u - floor(u))`. Endpoints map
/// exactly: `g = -1` gives `(0, 1, 0)` and `g = 1` the degenerate pair
/// `(M - 1, M - 1, 0)`.
pub fn bin_coords(g: f64, bins: usize) -> (usize, usize, f64) {
    debug_assert!(bins >= 2);
    let g = g.clamp(-1.0, 1.0);
    let u = (g + 1.0) / 2.0 * (bins - 1) as f64;
    let lo = u.floor() as usize;
    let hi = (lo + 1).min(bins - 1);
    (lo, hi, u - lo as f64)
}

/// Bin pair and interpolation weights for a lookup: `((lo, 1-w), (hi, w))`.
#[inline]
pub fn interp_weights(g: f64, bins: usize) -> ((usize, f64), (usize, f64)) {
    let (lo, hi, w) = bin_coords(g, bins);
    ((lo, 1.0 - w), (hi, w))
}

/// Bin pair and weights of the interpolation derivative w.r.t. `g`:
/// `((lo, -s), (hi, s))` with `s = (M - 1) / 2`.
///
/// At a bin boundary this is the right-hand derivative; in the degenerate
/// `lo == hi` pair (the `g = 1` endpoint) the taps cancel to zero slope.
#[inline]
pub fn interp_deriv_weights(g: f64, bins: usize) -> ((usize, f64), (usize, f64)) {
    let (lo, hi, _) = bin_coords(g, bins);
    let s = (bins - 1) as f64 / 2.0;
    ((lo, -s), (hi, s))
}

/// Corner bins and bilinear weights for a 2-D lookup at `(ga, gb)`.
pub fn bilinear_weights(ga: f64, gb: f64, bins: usize) -> [(usize, usize, f64); 4] {
    let (alo, ahi, wa) = bin_coords(ga, bins);
    let (blo, bhi, wb) = bin_coords(gb, bins);
    [
        (alo, blo, (1.0 - wa) * (1.0 - wb)),
        (alo, bhi, (1.0 - wa) * wb),
        (ahi, blo, wa * (1.0 - wb)),
        (ahi, bhi, wa * wb),
    ]
}

/// Corner bins and weights of the bilinear derivative w.r.t. the first
/// coordinate `ga`.
pub fn bilinear_dga_weights(ga: f64, gb: f64, bins: usize) -> [(usize, usize, f64); 4] {
    let (alo, ahi, _) = bin_coords(ga, bins);
    let (blo, bhi, wb) = bin_coords(gb, bins);
    let s = (bins - 1) as f64 / 2.0;
    [
        (alo, blo, -s * (1.0 - wb)),
        (alo, bhi, -s * wb),
        (ahi, blo, s * (1.0 - wb)),
        (ahi, bhi, s * wb),
    ]
}

/// Corner bins and weights of the bilinear derivative w.r.t. `gb`.
pub fn bilinear_dgb_weights(ga: f64, gb: f64, bins: usize) -> [(usize, usize, f64); 4] {
    let (alo, ahi, wa) = bin_coords(ga, bins);
    let (blo, bhi, _) = bin_coords(gb, bins);
    let s = (bins - 1) as f64 / 2.0;
    [
        (alo, blo, -(1.0 - wa) * s),
        (alo, bhi, (1.0 - wa) * s),
        (ahi, blo, -wa * s),
        (ahi, bhi, wa * s),
    ]
}

/// Interpolated line feature for dimension `k`, component `i`, written into `out`.
#[inline]
fn line_feature_into<F: Scalar>(bank: &FeatureBank<'_, F>, k: usize, i: usize, g: f64, out: &mut [F]) {
    let ((lo, wlo), (hi, whi)) = interp_weights(g, bank.layout.bins);
    let lo_row = &bank.line[bank.layout.line_offset(k, i, lo)..];
    let hi_row = &bank.line[bank.layout.line_offset(k, i, hi)..];
    let (wlo, whi) = (c::<F>(wlo), c::<F>(whi));
    for ch in 0..bank.layout.channels {
        out[ch] = wlo * lo_row[ch] + whi * hi_row[ch];
    }
}

/// Interpolated per-dimension features of a point, concatenated in the same
/// `(k, i)` order as the positional encoding, channels innermost.
pub fn qff_lite_lookup<F: Scalar>(
    x: &[F],
    bank: &FeatureBank<'_, F>,
    cfg: &EncodingConfig,
) -> Result<Vec<F>> {
    if cfg.variant != Variant::QffLite {
        return Err(QffError::Config(format!(
            "qff_lite_lookup requires the qff_lite variant, got {}",
            cfg.variant.as_str()
        )));
    }
    check_dims(x, cfg)?;
    check_finite(x)?;
    let xf: Vec<f64> = x.iter().map(|v| v.as_f64()).collect();
    let pe = pe_values(&xf, cfg.num_frequencies);
    let n = cfg.feature_channels;
    let mut out = vec![F::zero(); cfg.pe_width() * n];
    for k in 0..cfg.input_dims {
        for i in 0..cfg.components() {
            let g = pe[k * cfg.components() + i];
            let base = (k * cfg.components() + i) * n;
            line_feature_into(bank, k, i, g, &mut out[base..base + n]);
        }
    }
    Ok(out)
}

/// QFF-Lite encoding: interpolated features plus the broadcast encoding value.
pub fn qff_lite_encode<F: Scalar>(
    x: &[F],
    bank: &FeatureBank<'_, F>,
    cfg: &EncodingConfig,
) -> Result<EncodedVector<F>> {
    let mut values = qff_lite_lookup(x, bank, cfg)?;
    if cfg.add_pe {
        let xf: Vec<f64> = x.iter().map(|v| v.as_f64()).collect();
        let pe = pe_values(&xf, cfg.num_frequencies);
        let n = cfg.feature_channels;
        for (comp, &g) in pe.iter().enumerate() {
            let gv = c::<F>(g);
            for ch in 0..n {
                values[comp * n + ch] += gv;
            }
        }
    }
    Ok(EncodedVector {
        values,
        jacobian_wrt_x: None,
    })
}

/// Bilinear lookup into one `M x M x N` plane slice at `(ga, gb)`.
pub fn plane_lookup<F: Scalar>(ga: f64, gb: f64, plane: &[F], bins: usize, channels: usize) -> Vec<F> {
    debug_assert_eq!(plane.len(), bins * bins * channels);
    let corners = bilinear_weights(ga, gb, bins);
    let mut out = vec![F::zero(); channels];
    for (ma, mb, w) in corners {
        let row = &plane[(ma * bins + mb) * channels..];
        let wv = c::<F>(w);
        for ch in 0..channels {
            out[ch] += wv * row[ch];
        }
    }
    out
}

/// QFF-3D encoding: for each axis, line features times complementary-plane
/// features, plus the axis encoding value; the three blocks are concatenated.
pub fn qff_3d_encode<F: Scalar>(
    x: &[F],
    bank: &FeatureBank<'_, F>,
    cfg: &EncodingConfig,
) -> Result<EncodedVector<F>> {
    if cfg.variant != Variant::Qff3d {
        return Err(QffError::Config(format!(
            "qff_3d_encode requires the qff_3d variant, got {}",
            cfg.variant.as_str()
        )));
    }
    if cfg.input_dims != 3 || x.len() != 3 {
        return Err(QffError::Config(format!(
            "the 3-D encoder requires 3 input dimensions, got {}",
            x.len()
        )));
    }
    check_finite(x)?;
    let planes = bank
        .planes
        .ok_or_else(|| QffError::Config("the 3-D encoder requires a plane feature bank".into()))?;
    let xf: Vec<f64> = x.iter().map(|v| v.as_f64()).collect();
    let pe = pe_values(&xf, cfg.num_frequencies);
    let comps = cfg.components();
    let n = cfg.feature_channels;
    let layout = bank.layout;

    let mut values = vec![F::zero(); 3 * comps * n];
    let mut line_buf = vec![F::zero(); n];
    for axis in 0..3 {
        let (b, cdim) = complement_axes(axis);
        for i in 0..comps {
            line_feature_into(bank, axis, i, pe[axis * comps + i], &mut line_buf);
            let slice = &planes[layout.plane_slice(axis, i)..layout.plane_slice(axis, i) + layout.bins * layout.bins * n];
            let plane_feat = plane_lookup(pe[b * comps + i], pe[cdim * comps + i], slice, layout.bins, n);
            let base = (axis * comps + i) * n;
            let gv = c::<F>(pe[axis * comps + i]);
            for ch in 0..n {
                let mut v = line_buf[ch] * plane_feat[ch];
                if cfg.add_pe {
                    v += gv;
                }
                values[base + ch] = v;
            }
        }
    }
    Ok(EncodedVector {
        values,
        jacobian_wrt_x: None,
    })
}

fn check_dims<F>(x: &[F], cfg: &EncodingConfig) -> Result<()> {
    if x.len() != cfg.input_dims {
        return Err(QffError::Config(format!(
            "coordinate has {} dimensions, config expects {}",
            x.len(),
            cfg.input_dims
        )));
    }
    Ok(())
}

/// Encode a point with whichever variant the configuration selects.
pub fn encode<F: Scalar>(
    x: &[F],
    bank: Option<&FeatureBank<'_, F>>,
    cfg: &EncodingConfig,
) -> Result<EncodedVector<F>> {
    check_dims(x, cfg)?;
    match cfg.variant {
        Variant::PeOnly => Ok(EncodedVector {
            values: positional_encode(x, cfg.num_frequencies)?,
            jacobian_wrt_x: None,
        }),
        Variant::QffLite => {
            let bank = bank.ok_or_else(|| QffError::Config("encoder requires a feature bank".into()))?;
            qff_lite_encode(x, bank, cfg)
        }
        Variant::Qff3d => {
            let bank = bank.ok_or_else(|| QffError::Config("encoder requires a feature bank".into()))?;
            qff_3d_encode(x, bank, cfg)
        }
    }
}

/// Encode a point and attach the analytic Jacobian w.r.t. the coordinates.
///
/// The interpolation derivative is piecewise constant; at a bin boundary the
/// right-hand value is used, so the Jacobian is exact only away from
/// boundaries in encoding space.
pub fn encode_with_jacobian<F: Scalar>(
    x: &[F],
    bank: Option<&FeatureBank<'_, F>>,
    cfg: &EncodingConfig,
) -> Result<EncodedVector<F>> {
    check_dims(x, cfg)?;
    check_finite(x)?;
    let k_dims = cfg.input_dims;
    let comps = cfg.components();
    let xf: Vec<f64> = x.iter().map(|v| v.as_f64()).collect();
    let (pe, dpe) = pe_values_and_derivs(&xf, cfg.num_frequencies);
    let width = cfg.encoded_width();
    let mut jac = vec![F::zero(); width * k_dims];

    let mut enc = encode(x, bank, cfg)?;
    match cfg.variant {
        Variant::PeOnly => {
            for k in 0..k_dims {
                for i in 0..comps {
                    let comp = k * comps + i;
                    jac[comp * k_dims + k] = c::<F>(dpe[comp]);
                }
            }
        }
        Variant::QffLite => {
            let bank = bank.expect("bank checked by encode");
            let n = cfg.feature_channels;
            let bins = bank.layout.bins;
            for k in 0..k_dims {
                for i in 0..comps {
                    let comp = k * comps + i;
                    let g = pe[comp];
                    let ((lo, dlo), (hi, dhi)) = interp_deriv_weights(g, bins);
                    let lo_row = &bank.line[bank.layout.line_offset(k, i, lo)..];
                    let hi_row = &bank.line[bank.layout.line_offset(k, i, hi)..];
                    for ch in 0..n {
                        let slope = dlo * lo_row[ch].as_f64() + dhi * hi_row[ch].as_f64();
                        let mut d = slope * dpe[comp];
                        if cfg.add_pe {
                            d += dpe[comp];
                        }
                        jac[(comp * n + ch) * k_dims + k] = c::<F>(d);
                    }
                }
            }
        }
        Variant::Qff3d => {
            let bank = bank.expect("bank checked by encode");
            let planes = bank.planes.expect("planes checked by encode");
            let n = cfg.feature_channels;
            let layout = bank.layout;
            let bins = layout.bins;
            let mut line_buf = vec![F::zero(); n];
            for axis in 0..3 {
                let (bdim, cdim) = complement_axes(axis);
                for i in 0..comps {
                    let g_line = pe[axis * comps + i];
                    let g_a = pe[bdim * comps + i];
                    let g_b = pe[cdim * comps + i];
                    line_feature_into(bank, axis, i, g_line, &mut line_buf);
                    let slice_start = layout.plane_slice(axis, i);
                    let slice = &planes[slice_start..slice_start + bins * bins * n];
                    let plane_feat = plane_lookup::<F>(g_a, g_b, slice, bins, n);

                    let ((llo, dlo), (lhi, dhi)) = interp_deriv_weights(g_line, bins);
                    let lo_row = &bank.line[layout.line_offset(axis, i, llo)..];
                    let hi_row = &bank.line[layout.line_offset(axis, i, lhi)..];

                    let dga = bilinear_dga_weights(g_a, g_b, bins);
                    let dgb = bilinear_dgb_weights(g_a, g_b, bins);

                    for ch in 0..n {
                        let row = ((axis * comps + i) * n + ch) * k_dims;
                        let line_v = line_buf[ch].as_f64();
                        let plane_v = plane_feat[ch].as_f64();

                        // d/dx_axis: line slope times plane value (+ PE term).
                        let line_slope = dlo * lo_row[ch].as_f64() + dhi * hi_row[ch].as_f64();
                        let mut d_axis = line_slope * dpe[axis * comps + i] * plane_v;
                        if cfg.add_pe {
                            d_axis += dpe[axis * comps + i];
                        }
                        jac[row + axis] = c::<F>(d_axis);

                        // d/dx_b and d/dx_c: line value times plane partials.
                        let mut dp_a = 0.0;
                        for (ma, mb, w) in dga {
                            dp_a += w * slice[(ma * bins + mb) * n + ch].as_f64();
                        }
                        jac[row + bdim] = c::<F>(line_v * dp_a * dpe[bdim * comps + i]);

                        let mut dp_b = 0.0;
                        for (ma, mb, w) in dgb {
                            dp_b += w * slice[(ma * bins + mb) * n + ch].as_f64();
                        }
                        jac[row + cdim] = c::<F>(line_v * dp_b * dpe[cdim * comps + i]);
                    }
                }
            }
        }
    }
    enc.jacobian_wrt_x = Some(jac);
    Ok(enc)
}

/// Distance, in encoding-value units, from the nearest bin boundary over all
/// encoding components of `x`. Infinite for the encoding-only variant, whose
/// Jacobian has no kinks.
pub fn min_bin_boundary_distance<F: Scalar>(x: &[F], cfg: &EncodingConfig) -> f64 {
    if cfg.variant == Variant::PeOnly {
        return f64::INFINITY;
    }
    let xf: Vec<f64> = x.iter().map(|v| v.as_f64()).collect();
    let pe = pe_values(&xf, cfg.num_frequencies);
    let scale = 2.0 / (cfg.bins_per_axis - 1) as f64;
    pe.iter()
        .map(|&g| {
            let u = (g.clamp(-1.0, 1.0) + 1.0) / 2.0 * (cfg.bins_per_axis - 1) as f64;
            (u - u.round()).abs() * scale
        })
        .fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lite_cfg(k: usize, l: usize, m: usize, n: usize) -> EncodingConfig {
        EncodingConfig::new(k, l, m, n, Variant::QffLite)
    }

    #[test]
    fn pe_at_zero() {
        let out = positional_encode(&[0.0f64], 2).unwrap();
        assert_eq!(out, vec![0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn pe_at_half() {
        let out = positional_encode(&[0.5f64], 2).unwrap();
        let expect = [1.0, 0.0, 0.0, -1.0];
        for (o, e) in out.iter().zip(expect) {
            assert!((o - e).abs() < 1e-15, "{out:?}");
        }
    }

    #[test]
    fn pe_at_quarter() {
        let out = positional_encode(&[0.25f64], 1).unwrap();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert!((out[0] - r).abs() < 1e-12);
        assert!((out[1] - r).abs() < 1e-12);
    }

    #[test]
    fn pe_rejects_non_finite() {
        assert!(matches!(
            positional_encode(&[f64::NAN], 1),
            Err(QffError::InvalidInput(_))
        ));
    }

    #[test]
    fn bin_coords_endpoints_and_midpoint() {
        assert_eq!(bin_coords(-1.0, 4), (0, 1, 0.0));
        assert_eq!(bin_coords(0.0, 4), (1, 2, 0.5));
        assert_eq!(bin_coords(1.0, 4), (3, 3, 0.0));
    }

    #[test]
    fn bin_coords_clamps() {
        assert_eq!(bin_coords(-7.0, 4), (0, 1, 0.0));
        assert_eq!(bin_coords(7.0, 4), (3, 3, 0.0));
    }

    #[test]
    fn lite_lookup_zero_bank() {
        let cfg = lite_cfg(2, 3, 4, 2);
        let line = vec![0.0f64; cfg.layout().line_len()];
        let bank = FeatureBank::new(&cfg, &line, None).unwrap();
        let out = qff_lite_lookup(&[0.3, -0.7], &bank, &cfg).unwrap();
        assert_eq!(out.len(), 2 * 6 * 2);
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lite_lookup_interpolates_between_bins() {
        // One dimension, one frequency, bank row [0, 10, 20, 30] for the sin
        // component. gamma = 0 lands half way between bins 1 and 2.
        let cfg = lite_cfg(1, 1, 4, 1);
        let mut line = vec![0.0f64; cfg.layout().line_len()];
        line[0..4].copy_from_slice(&[0.0, 10.0, 20.0, 30.0]);
        let bank = FeatureBank::new(&cfg, &line, None).unwrap();
        // x = 0 gives sin(pi x) = 0 for component 0.
        let out = qff_lite_lookup(&[0.0f64], &bank, &cfg).unwrap();
        assert_eq!(out[0], 15.0);
    }

    #[test]
    fn lite_lookup_exact_at_bin_center() {
        let cfg = lite_cfg(1, 1, 4, 1);
        let mut line = vec![0.0f64; cfg.layout().line_len()];
        line[0..4].copy_from_slice(&[0.0, 10.0, 20.0, 30.0]);
        let bank = FeatureBank::new(&cfg, &line, None).unwrap();
        // x = -0.5 gives sin(pi x) = -1 exactly: the leftmost bin center.
        let out = qff_lite_lookup(&[-0.5f64], &bank, &cfg).unwrap();
        assert_eq!(out[0], 0.0);
    }

    #[test]
    fn lite_encode_reduces_to_pe_with_zero_bank() {
        let cfg = lite_cfg(1, 1, 4, 1);
        let line = vec![0.0f64; cfg.layout().line_len()];
        let bank = FeatureBank::new(&cfg, &line, None).unwrap();
        let enc = qff_lite_encode(&[0.5f64], &bank, &cfg).unwrap();
        let pe = positional_encode(&[0.5f64], 1).unwrap();
        assert_eq!(enc.values, pe);
    }

    #[test]
    fn lite_encode_broadcasts_pe_over_channels() {
        let cfg = lite_cfg(1, 1, 4, 2);
        let line = vec![0.0f64; cfg.layout().line_len()];
        let bank = FeatureBank::new(&cfg, &line, None).unwrap();
        let enc = qff_lite_encode(&[0.5f64], &bank, &cfg).unwrap();
        // sin(pi/2) = 1, cos(pi/2) ~ 0, each broadcast over 2 channels.
        assert!((enc.values[0] - 1.0).abs() < 1e-12);
        assert!((enc.values[1] - 1.0).abs() < 1e-12);
        assert!(enc.values[2].abs() < 1e-12);
        assert!(enc.values[3].abs() < 1e-12);
    }

    #[test]
    fn lite_encode_adds_feature_and_pe() {
        let cfg = lite_cfg(1, 1, 4, 1);
        let mut line = vec![0.0f64; cfg.layout().line_len()];
        line[0..4].copy_from_slice(&[0.0, 10.0, 20.0, 30.0]);
        let bank = FeatureBank::new(&cfg, &line, None).unwrap();
        let enc = qff_lite_encode(&[0.0f64], &bank, &cfg).unwrap();
        assert_eq!(enc.values[0], 15.0); // 15 + sin(0)
    }

    #[test]
    fn bank_shape_mismatch_is_config_error() {
        let cfg = lite_cfg(1, 1, 4, 1);
        let line = vec![0.0f64; 3];
        assert!(matches!(
            FeatureBank::new(&cfg, &line, None),
            Err(QffError::Config(_))
        ));
    }

    #[test]
    fn plane_lookup_corners_and_center() {
        let plane = vec![0.0f64, 1.0, 2.0, 3.0]; // 2x2, N=1
        assert_eq!(plane_lookup(-1.0, -1.0, &plane, 2, 1), vec![0.0]);
        assert_eq!(plane_lookup(0.0, 0.0, &plane, 2, 1), vec![1.5]);
        let zeros = vec![0.0f64; 4];
        assert_eq!(plane_lookup(0.3, -0.2, &zeros, 2, 1), vec![0.0]);
    }

    #[test]
    fn qff3d_zero_lines_leave_pe() {
        let cfg = EncodingConfig::new(3, 1, 2, 1, Variant::Qff3d);
        let layout = cfg.layout();
        let line = vec![0.0f64; layout.line_len()];
        let planes = vec![4.0f64; layout.plane_len()];
        let bank = FeatureBank::new(&cfg, &line, Some(&planes)).unwrap();
        let enc = qff_3d_encode(&[0.5, 0.0, 0.0], &bank, &cfg).unwrap();
        // Axis-0 block equals the positional encoding of x_0 = 0.5.
        assert!((enc.values[0] - 1.0).abs() < 1e-12);
        assert!(enc.values[1].abs() < 1e-12);
    }

    #[test]
    fn qff3d_ones_everywhere() {
        let cfg = EncodingConfig::new(3, 1, 2, 1, Variant::Qff3d);
        let layout = cfg.layout();
        let line = vec![1.0f64; layout.line_len()];
        let planes = vec![1.0f64; layout.plane_len()];
        let bank = FeatureBank::new(&cfg, &line, Some(&planes)).unwrap();
        let enc = qff_3d_encode(&[0.0, 0.0, 0.0], &bank, &cfg).unwrap();
        // Every component is 1*1 + gamma; axis-0 block is [1 + sin 0, 1 + cos 0].
        assert_eq!(enc.values[0], 1.0);
        assert_eq!(enc.values[1], 2.0);
    }

    #[test]
    fn qff3d_zero_planes_leave_pe() {
        let cfg = EncodingConfig::new(3, 2, 4, 2, Variant::Qff3d);
        let layout = cfg.layout();
        let line = vec![1.0f64; layout.line_len()];
        let planes = vec![0.0f64; layout.plane_len()];
        let bank = FeatureBank::new(&cfg, &line, Some(&planes)).unwrap();
        let x = [0.21, -0.4, 0.77];
        let enc = qff_3d_encode(&x, &bank, &cfg).unwrap();
        let pe = pe_values(&x, cfg.num_frequencies);
        let comps = cfg.components();
        for axis in 0..3 {
            for i in 0..comps {
                for ch in 0..cfg.feature_channels {
                    let got = enc.values[(axis * comps + i) * cfg.feature_channels + ch];
                    assert!((got - pe[axis * comps + i]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn widths() {
        let pe = EncodingConfig::new(3, 6, 2, 1, Variant::PeOnly);
        assert_eq!(encoded_width(&pe), 36);
        let q3 = EncodingConfig::new(3, 6, 2, 16, Variant::Qff3d);
        assert_eq!(encoded_width(&q3), 576);
        let lite = EncodingConfig::new(1, 128, 2, 1, Variant::QffLite);
        assert_eq!(encoded_width(&lite), 256);
    }

    #[test]
    fn qff3d_requires_three_dims() {
        let cfg = EncodingConfig::new(2, 1, 2, 1, Variant::Qff3d);
        assert!(matches!(cfg.validate(), Err(QffError::Config(_))));
    }

    #[test]
    fn pe_jacobian_at_zero() {
        let cfg = EncodingConfig::new(1, 1, 2, 1, Variant::PeOnly);
        let enc = encode_with_jacobian(&[0.0f64], None, &cfg).unwrap();
        let jac = enc.jacobian_wrt_x.unwrap();
        assert!((jac[0] - std::f64::consts::PI).abs() < 1e-12);
        assert_eq!(jac[1], 0.0);
    }

    #[test]
    fn frequency_saturates() {
        assert_eq!(frequency(31), frequency(100));
        assert!(frequency(3) > frequency(2));
    }
}
