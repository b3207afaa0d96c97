//! The DQLC scheme: `M - 1` quantize-limit-scale encoders, one limit-scale
//! analog encoder, the GMAC sum, the sequential decoder, and the
//! channel-output pdf machinery.
//!
//! Encoder `m` (`m < M`) sends `alpha_m * limit_kappa[q_delta(x_m)]`; the
//! first encoder has unbounded levels (`kappa_1 = inf`) and quantizes the
//! power-balancing scaled source `xi * x_1`. Encoder `M` sends
//! `alpha_M * limit_kappa_M[x_M]`. The decoder works sequentially, matching
//! each residual against centroids scaled by `alpha_m + rho sum_{k>m} alpha_k`
//! to account for the correlation-induced shift of each channel segment.

use crate::math::{integrate, normal_pdf, q_func, norm_cdf, QuadError};
use crate::model::SourceModel;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CodecError {
    #[error("invalid DQLC parameters: {0}")]
    InvalidParams(String),
    #[error("mixture tuple enumeration dropped tail mass {mass:e} (> 1e-9)")]
    TruncationTail { mass: f64 },
    #[error(transparent)]
    Quad(#[from] QuadError),
}

/// Uniform scalar quantizer layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuantizerStyle {
    /// Centroids at `(i - 1/2) delta`, even level count.
    Midrise,
    /// Centroids at `i delta` including zero, odd level count.
    Midthread,
}

impl QuantizerStyle {
    pub fn as_str(&self) -> &'static str {
        match self {
            QuantizerStyle::Midrise => "midrise",
            QuantizerStyle::Midthread => "midthread",
        }
    }
}

impl std::str::FromStr for QuantizerStyle {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "midrise" => Ok(QuantizerStyle::Midrise),
            "midthread" => Ok(QuantizerStyle::Midthread),
            other => Err(format!("unknown quantizer style: {other}")),
        }
    }
}

/// Full parameter set of a DQLC configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct DqlcParams {
    pub m: usize,
    /// Step sizes `delta_1 .. delta_{M-1}`. `delta_1` applies to the
    /// `xi`-scaled first source.
    pub delta: Vec<f64>,
    /// Level counts `N_{q,2} .. N_{q,M-1}` (encoder 1 is unbounded).
    pub nq: Vec<u32>,
    /// Gains `alpha_1 .. alpha_M` with `alpha_1 = 1`.
    pub alpha: Vec<f64>,
    /// Clip level of the analog encoder, in source units.
    pub kappa_m: f64,
    /// Decoder gain for the analog branch.
    pub beta: f64,
    /// Power-balancing scale applied to `x_1` prior to quantization.
    pub xi: f64,
    pub style: QuantizerStyle,
}

impl DqlcParams {
    pub fn validate(&self) -> Result<(), CodecError> {
        let bad = |msg: String| Err(CodecError::InvalidParams(msg));
        if self.m < 2 {
            return bad(format!("M must be >= 2, got {}", self.m));
        }
        if self.delta.len() != self.m - 1 {
            return bad(format!("expected {} step sizes, got {}", self.m - 1, self.delta.len()));
        }
        if self.nq.len() != self.m.saturating_sub(2) {
            return bad(format!("expected {} level counts, got {}", self.m - 2, self.nq.len()));
        }
        if self.alpha.len() != self.m {
            return bad(format!("expected {} gains, got {}", self.m, self.alpha.len()));
        }
        if self.delta.iter().any(|&d| !(d > 0.0)) {
            return bad("step sizes must be positive".into());
        }
        for &n in &self.nq {
            if n < 2 {
                return bad(format!("level count {n} must be >= 2"));
            }
            if self.style == QuantizerStyle::Midrise && n % 2 != 0 {
                return bad(format!("midrise level count {n} must be even"));
            }
            if self.style == QuantizerStyle::Midthread && n % 2 == 0 {
                return bad(format!("midthread level count {n} must be odd"));
            }
        }
        if (self.alpha[0] - 1.0).abs() > 1e-12 {
            return bad(format!("alpha_1 must be 1, got {}", self.alpha[0]));
        }
        // encoder 1's dominance is carried by xi; only encoders 2..M must be
        // ordered for sequential decodability
        for w in self.alpha[1..].windows(2) {
            if w[1] > w[0] + 1e-12 {
                return bad("gains must satisfy alpha_2 >= ... >= alpha_M".into());
            }
        }
        if self.alpha[1..].iter().any(|&a| !(a > 0.0)) {
            return bad("gains must be positive".into());
        }
        if !(self.alpha[self.m - 1] > 0.0) {
            return bad("alpha_M must be positive".into());
        }
        if !(self.kappa_m > 0.0) || !(self.beta > 0.0) || !(self.xi > 0.0) {
            return bad("kappa_M, beta and xi must be positive".into());
        }
        Ok(())
    }

    /// Clip level of encoder `enc` (1-based). Infinite for encoder 1,
    /// `delta_m (N_{q,m} - 1) / 2` for the other digital encoders.
    pub fn kappa(&self, enc: usize) -> f64 {
        if enc == 1 {
            f64::INFINITY
        } else if enc < self.m {
            self.delta[enc - 1] * (self.nq[enc - 2] as f64 - 1.0) / 2.0
        } else {
            self.kappa_m
        }
    }

    /// Level count of digital encoder `enc`, `None` when unbounded.
    pub fn levels(&self, enc: usize) -> Option<u32> {
        if enc == 1 {
            None
        } else {
            Some(self.nq[enc - 2])
        }
    }

    /// Sum of gains of encoders after `enc`: `sum_{k > enc} alpha_k`.
    pub fn alpha_tail(&self, enc: usize) -> f64 {
        self.alpha[enc..].iter().sum()
    }

    /// Decoder matching factor of stage `enc`:
    /// `alpha_m + rho sum_{k>m} alpha_k`, with the first stage adjusted to
    /// `1 + rho sum_{k>1} alpha_k / xi` because the first source is
    /// quantized after scaling by `xi`.
    pub fn decision_factor(&self, enc: usize, rho_x: f64) -> f64 {
        if enc == 1 {
            1.0 + rho_x * self.alpha_tail(1) / self.xi
        } else {
            self.alpha[enc - 1] + rho_x * self.alpha_tail(enc)
        }
    }
}

/// Quantize `x` to the nearest centroid (floor convention at cell borders).
pub fn quantize(x: f64, delta: f64, levels: Option<u32>, style: QuantizerStyle) -> f64 {
    match style {
        QuantizerStyle::Midrise => {
            let mut k = (x / delta).floor();
            if let Some(n) = levels {
                let half = n as f64 / 2.0;
                k = k.clamp(-half, half - 1.0);
            }
            (k + 0.5) * delta
        }
        QuantizerStyle::Midthread => {
            let mut i = (x / delta).round();
            if let Some(n) = levels {
                let half = ((n - 1) / 2) as f64;
                i = i.clamp(-half, half);
            }
            i * delta
        }
    }
}

/// Nearest centroid to `target`, breaking exact ties toward the centroid of
/// smaller magnitude.
pub fn nearest_centroid(target: f64, delta: f64, levels: Option<u32>, style: QuantizerStyle) -> f64 {
    match style {
        QuantizerStyle::Midrise => {
            let t = target / delta;
            let mut k = t.floor();
            if t == k {
                // exactly on a decision border between (k - 1/2) and (k + 1/2)
                if k > 0.0 {
                    k -= 1.0;
                }
            }
            if let Some(n) = levels {
                let half = n as f64 / 2.0;
                k = k.clamp(-half, half - 1.0);
            }
            (k + 0.5) * delta
        }
        QuantizerStyle::Midthread => {
            let t = target / delta;
            let mut i = t.round();
            // round() ties away from zero; pull back for half-integer targets
            if (t - i).abs() == 0.5 && i.abs() > t.abs() {
                i -= i.signum();
            }
            if let Some(n) = levels {
                let half = ((n - 1) / 2) as f64;
                i = i.clamp(-half, half);
            }
            i * delta
        }
    }
}

/// Output of digital encoder `enc` (1-based, `enc < M`) for source value `x`.
pub fn encode_digital(x: f64, enc: usize, params: &DqlcParams) -> f64 {
    debug_assert!(enc >= 1 && enc < params.m);
    let input = if enc == 1 { params.xi * x } else { x };
    let q = quantize(input, params.delta[enc - 1], params.levels(enc), params.style);
    let kappa = params.kappa(enc);
    params.alpha[enc - 1] * q.clamp(-kappa, kappa)
}

/// Output of the analog encoder `M`.
pub fn encode_analog(x: f64, params: &DqlcParams) -> f64 {
    params.alpha[params.m - 1] * x.clamp(-params.kappa_m, params.kappa_m)
}

/// GMAC: the receiver observes the sum of all encoder outputs plus noise.
pub fn channel(ys: &[f64], noise: f64) -> f64 {
    ys.iter().sum::<f64>() + noise
}

/// Decoder output: the decided centroids (in quantizer output units; the
/// first entry lives in `xi`-scaled source units) and the analog estimate
/// `beta (z - sum alpha_m qhat_m)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeResult {
    pub centroids: Vec<f64>,
    pub analog: f64,
}

/// Sequential decoder: decide stage by stage, subtracting each decided
/// contribution from the channel output.
pub fn decode_sequential(z: f64, params: &DqlcParams, rho_x: f64) -> DecodeResult {
    let mut resid = z;
    let mut centroids = Vec::with_capacity(params.m - 1);
    for enc in 1..params.m {
        let factor = params.decision_factor(enc, rho_x);
        let q = nearest_centroid(resid / factor, params.delta[enc - 1], params.levels(enc), params.style);
        resid -= params.alpha[enc - 1] * q;
        centroids.push(q);
    }
    DecodeResult { centroids, analog: params.beta * resid }
}

/// Map decoder decisions directly to per-source values: the first centroid
/// undone by `xi`, then the remaining centroids, then the `beta`-scaled
/// analog branch. This is the raw decoder output; the production estimator
/// refines it with a joint Wiener combine (`analysis::Reconstructor`).
pub fn reconstruct(decoded: &DecodeResult, params: &DqlcParams) -> Vec<f64> {
    let mut out = Vec::with_capacity(params.m);
    out.push(decoded.centroids[0] / params.xi);
    out.extend_from_slice(&decoded.centroids[1..]);
    out.push(decoded.analog);
    out
}

// ---------------------------------------------------------------------------
// Segment geometry
// ---------------------------------------------------------------------------

/// Mass-width factor `vartheta(rho)`: 1 below `rho = 0.3`, 2 above
/// `rho = 0.7`, linear in between.
pub fn vartheta(rho_x: f64) -> f64 {
    if rho_x < 0.3 {
        1.0
    } else if rho_x > 0.7 {
        2.0
    } else {
        1.0 + (rho_x - 0.3) / 0.4
    }
}

/// Whether a stage's conditional mass fits inside its clip window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// `l_m > 2 kappa_m`: the clip is active; use the truncated-Gaussian
    /// convolution pdf.
    Clipped,
    /// `l_m <= 2 kappa_m`: the joint pdf limits the segment; use the
    /// conditional-Gaussian pdf.
    Gaussian,
}

/// Channel-segment geometry derived from a parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentGeometry {
    pub vartheta: f64,
    pub b: f64,
    /// Significant-mass lengths `l_2 .. l_M` (index `m - 2`), all equal to
    /// `2 b sqrt(vartheta lambda_rest)` in the symmetric model.
    pub l: Vec<f64>,
    /// Decision distances `d_1 .. d_{M-1}` (index `m - 1`).
    pub d: Vec<f64>,
    /// Regime flag per stage `2 .. M` (index `m - 2`).
    pub regimes: Vec<Regime>,
    /// Margin `d_m - width(stages m+1..M)` per stage `1 .. M-1`
    /// (index `m - 1`); negative entries mean nested blocks collide.
    pub slack: Vec<f64>,
    /// True when every stage's decision distance exceeds the width of the
    /// block nested under it.
    pub non_overlapping: bool,
}

impl SegmentGeometry {
    /// Regime of the analog stage `M`.
    pub fn analog_regime(&self) -> Regime {
        *self.regimes.last().unwrap()
    }

    /// Regime of digital stage `enc` (2-based).
    pub fn stage_regime(&self, enc: usize) -> Regime {
        self.regimes[enc - 2]
    }
}

/// Compute segment lengths, decision distances, per-stage regime flags and
/// the non-overlap verdict. `b` is the mass-width constant (about 4).
pub fn segment_geometry(params: &DqlcParams, model: &SourceModel, b: f64) -> Result<SegmentGeometry, CodecError> {
    params.validate()?;
    if !(b > 0.0) {
        return Err(CodecError::InvalidParams(format!("b must be positive, got {b}")));
    }
    let m = params.m;
    let rho = model.rho_x();
    let vt = vartheta(rho);
    let lambda_rest = model.spectrum().lambda_rest;
    let l_val = 2.0 * b * (vt * lambda_rest).sqrt();
    let l = vec![l_val; m - 1];

    let d: Vec<f64> = (1..m)
        .map(|enc| params.delta[enc - 1] * params.decision_factor(enc, rho))
        .collect();

    let regimes: Vec<Regime> = (2..=m)
        .map(|enc| {
            if l_val > 2.0 * params.kappa(enc) {
                Regime::Clipped
            } else {
                Regime::Gaussian
            }
        })
        .collect();

    // width of the block nested under each stage, deepest first
    let alpha_m = params.alpha[m - 1];
    let analog_width = alpha_m * (2.0 * params.kappa_m).min(l_val);
    let mut widths = vec![0.0; m + 1]; // widths[enc] = channel width of stages enc..M
    widths[m] = analog_width;
    for enc in (2..m).rev() {
        let extent = params.alpha[enc - 1] * params.delta[enc - 1] * (params.nq[enc - 2] as f64 - 1.0);
        widths[enc] = extent + widths[enc + 1];
    }
    let slack: Vec<f64> = (1..m).map(|enc| d[enc - 1] - widths[enc + 1]).collect();
    let non_overlapping = slack.iter().all(|&s| s >= 0.0);

    Ok(SegmentGeometry { vartheta: vt, b, l, d, regimes, slack, non_overlapping })
}

// ---------------------------------------------------------------------------
// Residual pdfs
// ---------------------------------------------------------------------------

/// Conditional variance of the analog channel contribution given all other
/// sources: `sigma_x^2 alpha_M^2 (1 - (M-1) rho^2 / (1 + (M-2) rho))`.
pub fn sigma_aa_b(model: &SourceModel, alpha_m: f64) -> f64 {
    let mf = model.m() as f64;
    let rho = model.rho_x();
    model.sigma_x2() * alpha_m * alpha_m * (1.0 - (mf - 1.0) * rho * rho / (1.0 + (mf - 2.0) * rho))
}

/// Clipped-regime residual pdf: the truncated-and-scaled Gaussian
/// `alpha_M limit_kappa[x_M]` convolved with the channel noise, evaluated by
/// adaptive quadrature, plus the two clip-mass terms at `mu +- alpha kappa`.
pub fn residual_pdf_clipped(
    z: f64,
    mu: f64,
    alpha: f64,
    kappa: f64,
    sigma_x2: f64,
    sigma_n2: f64,
    tol: f64,
) -> Result<f64, QuadError> {
    let sx = sigma_x2.sqrt();
    let sn = sigma_n2.sqrt();
    let lim = alpha * kappa;
    let u = z - mu;
    let norm = 1.0 / (2.0 * std::f64::consts::PI * alpha * sx * sn);
    let a2s2 = alpha * alpha * sigma_x2;
    let body = integrate(
        |y| norm * (-(a2s2 * (u - y) * (u - y) + sigma_n2 * y * y) / (2.0 * a2s2 * sigma_n2)).exp(),
        -lim,
        lim,
        tol,
    )?;
    let p_o = q_func(kappa / sx);
    Ok(body + p_o * (normal_pdf(u, lim, sigma_n2) + normal_pdf(u, -lim, sigma_n2)))
}

/// Closed-form evaluation of [`residual_pdf_clipped`] via the normal cdf.
/// Used on hot paths; agrees with the quadrature route to roundoff.
pub fn residual_pdf_clipped_closed(z: f64, mu: f64, alpha: f64, kappa: f64, sigma_x2: f64, sigma_n2: f64) -> f64 {
    let sx = sigma_x2.sqrt();
    let lim = alpha * kappa;
    let u = z - mu;
    let a2s2 = alpha * alpha * sigma_x2;
    let s_tot = sigma_n2 + a2s2;
    let c = a2s2 * u / s_tot;
    let tau = alpha * sx * sigma_n2.sqrt() / s_tot.sqrt();
    let body = normal_pdf(u, 0.0, s_tot) * (norm_cdf((lim - c) / tau) - norm_cdf((-lim - c) / tau));
    let p_o = q_func(kappa / sx);
    body + p_o * (normal_pdf(u, lim, sigma_n2) + normal_pdf(u, -lim, sigma_n2))
}

/// Gaussian-regime residual pdf: normal with mean `mu` and variance
/// `sigma_n^2 + Sigma_aa.b`.
pub fn residual_pdf_gaussian(z: f64, mu: f64, alpha: f64, model: &SourceModel, sigma_n2: f64) -> f64 {
    normal_pdf(z, mu, sigma_n2 + sigma_aa_b(model, alpha))
}

// ---------------------------------------------------------------------------
// Total channel-output pdf
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
struct MixtureComponent {
    weight: f64,
    mu: f64,
}

/// The total channel-output density: a mixture over centroid tuples of the
/// digital encoders, each component being the analog residual pdf shifted by
/// the tuple's mean. Weights and shifts are fixed at construction, so a
/// built value is immutable and safe to share across threads.
#[derive(Debug, Clone)]
pub struct ChannelOutputPdf {
    components: Vec<MixtureComponent>,
    regime: Regime,
    alpha_m: f64,
    kappa_m: f64,
    sigma_x2: f64,
    sigma_n2: f64,
    gaussian_var: f64,
    /// Probability mass dropped by truncating the tuple enumeration.
    pub truncation_mass: f64,
}

impl ChannelOutputPdf {
    /// Enumerate centroid tuples out to 6.5 standard deviations of each
    /// source; the dropped tail mass must stay below 1e-9.
    pub fn new(params: &DqlcParams, model: &SourceModel, sigma_n2: f64, b: f64) -> Result<Self, CodecError> {
        let geom = segment_geometry(params, model, b)?;
        if params.style != QuantizerStyle::Midrise {
            return Err(CodecError::InvalidParams(
                "channel output pdf is implemented for midrise quantizers".into(),
            ));
        }
        let m = params.m;
        let sx = model.sigma_x();
        let alpha_m = params.alpha[m - 1];
        let mut components = Vec::new();
        let mut truncation_mass = 0.0f64;

        // stage 1: cells of the xi-scaled source
        let delta1 = params.delta[0];
        let scaled_sigma = params.xi * sx;
        let kmax = (6.5 * scaled_sigma / delta1).ceil() as i64;
        truncation_mass += 2.0 * q_func((kmax as f64) * delta1 / scaled_sigma);

        let regime = geom.analog_regime();
        let mut stack_obs: Vec<f64> = Vec::with_capacity(m - 1);
        for k in -kmax..kmax {
            let a = k as f64 * delta1;
            let b_edge = (k + 1) as f64 * delta1;
            let w1 = model.chain_cell_prob(&[], a / params.xi, b_edge / params.xi);
            if w1 < 1e-14 {
                truncation_mass += w1;
                continue;
            }
            let centroid1 = (k as f64 + 0.5) * delta1;
            let v1 = model.chain_cell_mean(&[], a / params.xi, b_edge / params.xi);
            stack_obs.push(v1);
            enumerate_stage(
                params,
                model,
                2,
                w1,
                centroid1,
                &mut stack_obs,
                regime,
                &mut components,
                &mut truncation_mass,
            );
            stack_obs.pop();
        }

        if truncation_mass > 1e-9 {
            return Err(CodecError::TruncationTail { mass: truncation_mass });
        }
        Ok(Self {
            components,
            regime,
            alpha_m,
            kappa_m: params.kappa_m,
            sigma_x2: model.sigma_x2(),
            sigma_n2,
            gaussian_var: sigma_n2 + sigma_aa_b(model, alpha_m),
            truncation_mass,
        })
    }

    /// Evaluate the mixture density at `z`.
    pub fn eval(&self, z: f64) -> f64 {
        match self.regime {
            Regime::Gaussian => self
                .components
                .iter()
                .map(|c| c.weight * normal_pdf(z, c.mu, self.gaussian_var))
                .sum(),
            Regime::Clipped => self
                .components
                .iter()
                .map(|c| {
                    c.weight
                        * residual_pdf_clipped_closed(z, c.mu, self.alpha_m, self.kappa_m, self.sigma_x2, self.sigma_n2)
                })
                .sum(),
        }
    }

    pub fn component_count(&self) -> usize {
        self.components.len()
    }
}

#[allow(clippy::too_many_arguments)]
fn enumerate_stage(
    params: &DqlcParams,
    model: &SourceModel,
    enc: usize,
    weight: f64,
    mean_base: f64,
    obs: &mut Vec<f64>,
    regime: Regime,
    components: &mut Vec<MixtureComponent>,
    truncation_mass: &mut f64,
) {
    let m = params.m;
    if enc == m {
        let mu = match regime {
            Regime::Gaussian => {
                let (cond_mean, _) = model.chain_conditional(obs);
                mean_base + params.alpha[m - 1] * cond_mean
            }
            // at low correlation the analog source is treated as marginal
            Regime::Clipped => mean_base,
        };
        components.push(MixtureComponent { weight, mu });
        return;
    }
    let delta = params.delta[enc - 1];
    let n = params.nq[enc - 2] as i64;
    let half = n / 2;
    for i in (-half + 1)..=half {
        // cell of centroid (i - 1/2) delta; edge cells absorb the overload tails
        let a = if i == -half + 1 { f64::NEG_INFINITY } else { (i - 1) as f64 * delta };
        let b_edge = if i == half { f64::INFINITY } else { i as f64 * delta };
        let w = weight * model.chain_cell_prob(obs, a, b_edge);
        if w < 1e-14 {
            *truncation_mass += w;
            continue;
        }
        let centroid = (i as f64 - 0.5) * delta;
        let v = model.chain_cell_mean(obs, a, b_edge);
        obs.push(v);
        enumerate_stage(
            params,
            model,
            enc + 1,
            w,
            mean_base + params.alpha[enc - 1] * centroid,
            obs,
            regime,
            components,
            truncation_mass,
        );
        obs.pop();
    }
}

/// Convenience wrapper: build the mixture and evaluate it at `z`.
pub fn channel_output_pdf(z: f64, params: &DqlcParams, model: &SourceModel, sigma_n2: f64, b: f64) -> Result<f64, CodecError> {
    Ok(ChannelOutputPdf::new(params, model, sigma_n2, b)?.eval(z))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::integrate;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn params_m3() -> DqlcParams {
        DqlcParams {
            m: 3,
            delta: vec![3.0, 1.0],
            nq: vec![4],
            alpha: vec![1.0, 0.2, 0.05],
            kappa_m: 2.0,
            beta: 1.0,
            xi: 1.0,
            style: QuantizerStyle::Midrise,
        }
    }

    #[test]
    fn quantizer_examples() {
        assert_relative_eq!(quantize(0.3, 1.0, Some(4), QuantizerStyle::Midrise), 0.5);
        assert_relative_eq!(quantize(10.0, 1.0, Some(4), QuantizerStyle::Midrise), 1.5);
        assert_relative_eq!(quantize(-0.3, 1.0, None, QuantizerStyle::Midrise), -0.5);
        assert_relative_eq!(quantize(0.3, 1.0, Some(5), QuantizerStyle::Midthread), 0.0);
        assert_relative_eq!(quantize(10.0, 1.0, Some(5), QuantizerStyle::Midthread), 2.0);
    }

    #[test]
    fn tie_breaks_toward_smaller_magnitude() {
        // target exactly on the border between 0.5 and 1.5
        assert_relative_eq!(nearest_centroid(1.0, 1.0, None, QuantizerStyle::Midrise), 0.5);
        assert_relative_eq!(nearest_centroid(-1.0, 1.0, None, QuantizerStyle::Midrise), -0.5);
        assert_relative_eq!(nearest_centroid(2.0, 1.0, Some(4), QuantizerStyle::Midrise), 1.5);
        assert_relative_eq!(nearest_centroid(1.5, 1.0, None, QuantizerStyle::Midthread), 1.0);
        assert_relative_eq!(nearest_centroid(-1.5, 1.0, None, QuantizerStyle::Midthread), -1.0);
    }

    #[test]
    fn encoder_examples() {
        let p = params_m3();
        assert_eq!(encode_analog(0.0, &p), 0.0);
        assert_relative_eq!(encode_analog(4.0, &p), 0.05 * 2.0);
        // x = 0.3, delta_2 = 1, nq = 4, alpha_2 = 0.2 -> 0.2 * 0.5
        assert_relative_eq!(encode_digital(0.3, 2, &p), 0.1);
        // encoder 1 is unbounded
        assert_relative_eq!(encode_digital(100.0, 1, &p), quantize(100.0, 3.0, None, QuantizerStyle::Midrise));
        assert_relative_eq!(channel(&[1.0, 2.0, 3.0], 0.5), 6.5);
    }

    #[test]
    fn decoder_recovers_noiseless_centroids() {
        // margins strict enough that no noiseless decision can land on a border
        let mut p = params_m3();
        p.alpha[2] = 0.01;
        p.kappa_m = 6.0;
        let model = SourceModel::from_correlation(3, 1.0, 0.0).unwrap();
        let xs = model.sample(100_000, 42);
        let mut exact_analog = 0usize;
        for row in &xs {
            let y1 = encode_digital(row[0], 1, &p);
            let y2 = encode_digital(row[1], 2, &p);
            let y3 = encode_analog(row[2], &p);
            let z = channel(&[y1, y2, y3], 0.0);
            let dec = decode_sequential(z, &p, 0.0);
            assert_eq!(dec.centroids[0], quantize(row[0], 3.0, None, QuantizerStyle::Midrise));
            assert_eq!(dec.centroids[1], quantize(row[1], 1.0, Some(4), QuantizerStyle::Midrise));
            let resid = dec.analog / p.beta;
            if (resid - y3).abs() < 1e-12 {
                exact_analog += 1;
            }
        }
        assert_eq!(exact_analog, xs.len());
    }

    #[test]
    fn reconstruct_undoes_xi() {
        let mut p = params_m3();
        p.xi = 2.0;
        let dec = decode_sequential(
            channel(&[encode_digital(0.7, 1, &p), 0.0, 0.0], 0.0),
            &p,
            0.0,
        );
        let xhat = reconstruct(&dec, &p);
        // xi * 0.7 = 1.4 -> centroid 1.5 -> back to 0.75
        assert_relative_eq!(xhat[0], 0.75);
    }

    proptest! {
        #[test]
        fn odd_symmetry_end_to_end(
            x1 in -4.0f64..4.0, x2 in -4.0f64..4.0, x3 in -4.0f64..4.0, n in -1.0f64..1.0
        ) {
            let p = params_m3();
            let enc = |a: f64, b: f64, c: f64| {
                [encode_digital(a, 1, &p), encode_digital(b, 2, &p), encode_analog(c, &p)]
            };
            let ys = enc(x1, x2, x3);
            let ys_neg = enc(-x1, -x2, -x3);
            for (y, yn) in ys.iter().zip(ys_neg.iter()) {
                prop_assert!((y + yn).abs() < 1e-12);
            }
            let d = decode_sequential(channel(&ys, n), &p, 0.0);
            let dn = decode_sequential(channel(&ys_neg, -n), &p, 0.0);
            for (a, b) in d.centroids.iter().zip(dn.centroids.iter()) {
                prop_assert!((a + b).abs() < 1e-9);
            }
            prop_assert!((d.analog + dn.analog).abs() < 1e-9);
        }
    }

    #[test]
    fn vartheta_endpoints() {
        assert_eq!(vartheta(0.0), 1.0);
        assert_eq!(vartheta(0.9), 2.0);
        assert_relative_eq!(vartheta(0.5), 1.5);
    }

    #[test]
    fn geometry_decision_distances() {
        let p = params_m3();
        let model = SourceModel::from_correlation(3, 1.0, 0.5).unwrap();
        let g = segment_geometry(&p, &model, 4.0).unwrap();
        assert_relative_eq!(g.d[1], 1.0 * (0.2 + 0.5 * 0.05), max_relative = 1e-12);
        assert_relative_eq!(g.d[0], 3.0 * (1.0 + 0.5 * 0.25), max_relative = 1e-12);
        assert_relative_eq!(g.l[0], 2.0 * 4.0 * (1.5 * 0.5f64).sqrt(), max_relative = 1e-12);
    }

    #[test]
    fn clipped_pdf_normalizes_and_matches_closed_form() {
        let (alpha, kappa, sx2, sn2) = (0.3, 1.5, 1.0, 0.05);
        for &mu in &[0.0, 0.7] {
            let total = integrate(
                |z| residual_pdf_clipped_closed(z, mu, alpha, kappa, sx2, sn2),
                mu - 12.0,
                mu + 12.0,
                1e-11,
            )
            .unwrap();
            assert_relative_eq!(total, 1.0, max_relative = 1e-8);
            for &z in &[mu - 1.0, mu - 0.3, mu, mu + 0.44, mu + 2.0] {
                let quad = residual_pdf_clipped(z, mu, alpha, kappa, sx2, sn2, 1e-12).unwrap();
                let closed = residual_pdf_clipped_closed(z, mu, alpha, kappa, sx2, sn2);
                assert_relative_eq!(quad, closed, max_relative = 1e-9, epsilon = 1e-12);
            }
        }
        // symmetric about mu when mu = 0
        let a = residual_pdf_clipped_closed(0.8, 0.0, alpha, kappa, sx2, sn2);
        let b = residual_pdf_clipped_closed(-0.8, 0.0, alpha, kappa, sx2, sn2);
        assert_relative_eq!(a, b, max_relative = 1e-12);
    }

    #[test]
    fn gaussian_pdf_variance() {
        let model = SourceModel::from_correlation(3, 1.0, 0.0).unwrap();
        // rho = 0, alpha = 1: variance sigma_n^2 + sigma_x^2
        let v = residual_pdf_gaussian(0.0, 0.0, 1.0, &model, 0.5);
        assert_relative_eq!(v, normal_pdf(0.0, 0.0, 1.5), max_relative = 1e-12);
        let model95 = SourceModel::from_correlation(3, 1.0, 0.95).unwrap();
        let s = sigma_aa_b(&model95, 1.0);
        assert_relative_eq!(s, 1.0 - 2.0 * 0.9025 / 1.95, max_relative = 1e-10);
    }

    #[test]
    fn mixture_weights_factorize_at_rho_zero() {
        let p = params_m3();
        let model = SourceModel::from_correlation(3, 1.0, 0.0).unwrap();
        let pdf = ChannelOutputPdf::new(&p, &model, 0.01, 4.0).unwrap();
        // weights must sum to one minus the dropped tail
        let total: f64 = pdf.components.iter().map(|c| c.weight).sum();
        assert!((total - 1.0).abs() < 1e-9, "weight total {total}");
        // at rho = 0 the pdf integrates to 1; the mixture is a comb of
        // narrow spikes, so integrate panel by panel
        let mut mass = 0.0;
        let mut a = -30.0;
        while a < 30.0 {
            mass += integrate(|z| pdf.eval(z), a, a + 0.25, 1e-10).unwrap();
            a += 0.25;
        }
        assert_relative_eq!(mass, 1.0, max_relative = 1e-6);
    }

    #[test]
    fn validation_rejects_bad_params() {
        let mut p = params_m3();
        p.alpha[2] = 0.5; // exceeds alpha_2
        assert!(p.validate().is_err());
        let mut p = params_m3();
        p.nq[0] = 3;
        assert!(p.validate().is_err());
        let mut p = params_m3();
        p.delta[0] = -1.0;
        assert!(p.validate().is_err());
        assert!(params_m3().validate().is_ok());
    }
}
