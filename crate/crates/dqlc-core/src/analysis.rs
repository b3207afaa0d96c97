//! Analytic distortion and power of DQLC, the high-SNR loss expressions,
//! and the numeric parameter optimizer for three sources.
//!
//! The end-to-end distortion splits per source into quantization/clipping
//! terms (encoder-side), channel terms (neighbor confusions) and anomalous
//! terms (jumps across stage-1/2 decision borders). Each term has either a
//! closed form or a single one-dimensional tail integral, so the optimizer
//! can evaluate thousands of candidate configurations per second.

use crate::codec::{
    residual_pdf_clipped_closed, segment_geometry, sigma_aa_b, CodecError, DecodeResult,
    DqlcParams, QuantizerStyle, Regime,
};
use crate::math::{integrate_tail, norm_cdf, phi, q_func, truncated_sq_err, QuadError};
use crate::model::SourceModel;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Quad(#[from] QuadError),
    #[error("infeasible configuration: {0}")]
    Infeasible(String),
}

// ---------------------------------------------------------------------------
// Per-encoder powers and encoder-side distortion
// ---------------------------------------------------------------------------

/// Mean squared quantizer output `2 sum_i p_i c_i^2` for a zero-mean normal
/// input with std `sigma` (unit gain). The outermost cell of a bounded
/// quantizer absorbs the overload tail.
pub fn quantizer_power(delta: f64, levels: Option<u32>, sigma: f64) -> f64 {
    let mut acc = 0.0;
    match levels {
        Some(n) => {
            let half = (n / 2) as i64;
            for i in 1..=half {
                let c = (i as f64 - 0.5) * delta;
                let a = (i - 1) as f64 * delta;
                let b = if i == half { f64::INFINITY } else { i as f64 * delta };
                let hi = if b.is_infinite() { 1.0 } else { norm_cdf(b / sigma) };
                let p = hi - norm_cdf(a / sigma);
                acc += p * c * c;
            }
        }
        None => {
            let mut i = 1i64;
            loop {
                let c = (i as f64 - 0.5) * delta;
                let p = norm_cdf(i as f64 * delta / sigma) - norm_cdf((i - 1) as f64 * delta / sigma);
                acc += p * c * c;
                if p < 1e-18 && i > 2 {
                    break;
                }
                i += 1;
            }
        }
    }
    2.0 * acc
}

/// Channel power of digital encoder `enc` (1-based, `enc < M`).
pub fn power_encoder_digital(enc: usize, params: &DqlcParams, model: &SourceModel) -> f64 {
    let sigma = if enc == 1 { params.xi * model.sigma_x() } else { model.sigma_x() };
    let a = params.alpha[enc - 1];
    a * a * quantizer_power(params.delta[enc - 1], params.levels(enc), sigma)
}

/// Channel power of the clip-and-scale analog encoder:
/// `alpha^2 sigma^2 [(2 Phi(k) - 1) - 2 k phi(k) + 2 k^2 Q(k)]`, `k = kappa/sigma`.
pub fn power_encoder_analog(alpha: f64, kappa: f64, sigma_x2: f64) -> f64 {
    let sigma = sigma_x2.sqrt();
    let k = kappa / sigma;
    alpha * alpha * sigma_x2 * ((2.0 * norm_cdf(k) - 1.0) - 2.0 * k * phi(k) + 2.0 * k * k * q_func(k))
}

/// Mean squared clipping error `2 int_kappa^inf (x - kappa)^2 p(x) dx`
/// of a zero-mean normal with variance `sigma2`:
/// `2 sigma^2 [(1 + k^2) Q(k) - k phi(k)]`.
pub fn clipping_distortion(kappa: f64, sigma2: f64) -> f64 {
    let sigma = sigma2.sqrt();
    let k = kappa / sigma;
    2.0 * sigma2 * ((1.0 + k * k) * q_func(k) - k * phi(k))
}

/// Granular plus overload distortion of a uniform midrise quantizer applied
/// to a zero-mean normal with std `sigma`. Unbounded quantizers have no
/// overload region.
pub fn quantization_distortion(delta: f64, levels: Option<u32>, sigma: f64) -> f64 {
    let mut acc = 0.0;
    match levels {
        Some(n) => {
            let half = (n / 2) as i64;
            for i in 1..=half {
                let c = (i as f64 - 0.5) * delta;
                let a = (i - 1) as f64 * delta;
                let b = if i == half { f64::INFINITY } else { i as f64 * delta };
                acc += truncated_sq_err(a, b, c, sigma);
            }
        }
        None => {
            let mut i = 1i64;
            loop {
                let c = (i as f64 - 0.5) * delta;
                let a = (i - 1) as f64 * delta;
                let b = i as f64 * delta;
                let term = truncated_sq_err(a, b, c, sigma);
                acc += term;
                let p = norm_cdf(b / sigma) - norm_cdf(a / sigma);
                if p < 1e-18 && i > 2 {
                    break;
                }
                i += 1;
            }
        }
    }
    2.0 * acc
}

// ---------------------------------------------------------------------------
// Threshold probabilities and the M = 3 distortion calculus
// ---------------------------------------------------------------------------

/// Probability that the analog-stage residual exceeds `+-thresh` in the
/// clipped regime: tail integral of the truncated-convolution pdf at `mu = 0`.
fn clipped_tail_prob(thresh: f64, alpha: f64, kappa: f64, sigma_x2: f64, sigma_n2: f64) -> Result<f64, QuadError> {
    if thresh <= 0.0 {
        return Ok(1.0);
    }
    let scale = (sigma_n2 + alpha * alpha * sigma_x2).sqrt();
    let v = integrate_tail(
        |z| residual_pdf_clipped_closed(z, 0.0, alpha, kappa, sigma_x2, sigma_n2),
        thresh,
        scale,
        1e-12,
    )?;
    Ok((2.0 * v).min(1.0))
}

/// Probability of an anomalous jump for the analog source: the residual
/// crossing the stage-`M-1` decision half-distance `d_{M-1}/2`.
pub fn anomaly_prob_m(params: &DqlcParams, model: &SourceModel, sigma_n2: f64, b: f64) -> Result<f64, AnalysisError> {
    let geom = segment_geometry(params, model, b)?;
    let m = params.m;
    let alpha_m = params.alpha[m - 1];
    let half = geom.d[m - 2] / 2.0;
    match geom.analog_regime() {
        Regime::Clipped => {
            Ok(clipped_tail_prob(half, alpha_m, params.kappa_m, model.sigma_x2(), sigma_n2)?)
        }
        Regime::Gaussian => {
            let var = sigma_n2 + sigma_aa_b(model, alpha_m);
            Ok(2.0 * q_func(half / var.sqrt()))
        }
    }
}

/// Anomalous distortion of the analog source: `4 p_th kappa^2` in the
/// clipped regime, `p_th gamma^2` with `gamma = max(l - Delta_{M-1}, 0)` in
/// the Gaussian regime.
pub fn anomalous_distortion_m(params: &DqlcParams, model: &SourceModel, sigma_n2: f64, b: f64) -> Result<f64, AnalysisError> {
    let geom = segment_geometry(params, model, b)?;
    let p_th = anomaly_prob_m(params, model, sigma_n2, b)?;
    match geom.analog_regime() {
        Regime::Clipped => Ok(4.0 * p_th * params.kappa_m * params.kappa_m),
        Regime::Gaussian => {
            let gamma = (geom.l[params.m - 2] - params.delta[params.m - 2]).max(0.0);
            Ok(p_th * gamma * gamma)
        }
    }
}

/// Additive channel distortion of the analog branch when no threshold event
/// occurs: `sigma_x^2 (1 - alpha beta)^2 + beta^2 sigma_n^2`.
pub fn channel_distortion_m(alpha_m: f64, beta: f64, sigma_x2: f64, sigma_n2: f64) -> f64 {
    sigma_x2 * (1.0 - alpha_m * beta) * (1.0 - alpha_m * beta) + beta * beta * sigma_n2
}

/// Term-by-term distortion and power breakdown of a three-source
/// configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct DistortionReport {
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
    pub d_avg: f64,
    pub p1: f64,
    pub p2: f64,
    pub p3: f64,
    pub eps_q1: f64,
    pub eps_c1: f64,
    pub eps_q2: f64,
    pub eps_c2: f64,
    pub eps_an2: f64,
    pub eps_k3: f64,
    pub eps_c3: f64,
    pub eps_an3: f64,
    pub p_th2: f64,
    pub p_th3: f64,
    pub regime2: Regime,
    pub regime3: Regime,
    pub non_overlapping: bool,
}

impl DistortionReport {
    pub fn power_total(&self) -> f64 {
        self.p1 + self.p2 + self.p3
    }

    pub fn sdr_db(&self, sigma_x2: f64) -> f64 {
        10.0 * (sigma_x2 / self.d_avg).log10()
    }
}

/// Joint linear MMSE estimator mapping the decoder outputs to source
/// estimates.
///
/// Each digital observation is modeled as a gain-plus-noise channel
/// `y_m = a_m x_m + u_m` with `a_m = (sigma_x^2 - eps_m) / sigma_x^2` and
/// `Var u_m = (sigma_x^2 - eps_m) eps_m / sigma_x^2`, where `eps_m` is the
/// quantizer's granular-plus-overload distortion; the analog branch uses the
/// exact clipper correlation `E[x clip(x)] = sigma_x^2 (1 - 2 Q(kappa/sigma))`
/// plus the channel noise `sigma_n^2 / alpha_M^2`. The weight matrix
/// `W = C A (A C A + diag(u))^{-1}` then pools all observations, exploiting
/// the inter-source correlation. At `rho = 0` the weights collapse to the
/// identity and the estimator equals the raw decoder output.
#[derive(Debug, Clone)]
pub struct Reconstructor {
    w: DMatrix<f64>,
    base: Vec<f64>,
    xi: f64,
    analog_scale: f64,
}

impl Reconstructor {
    pub fn new(params: &DqlcParams, model: &SourceModel, sigma_n2: f64) -> Result<Self, AnalysisError> {
        params.validate()?;
        if params.m != model.m() {
            return Err(AnalysisError::Infeasible(format!(
                "parameter set covers {} sources, model has {}",
                params.m,
                model.m()
            )));
        }
        let m = params.m;
        let sx2 = model.sigma_x2();
        let sx = model.sigma_x();
        let mut a = vec![0.0; m];
        let mut u = vec![0.0; m];
        for enc in 1..m {
            let eps = if enc == 1 {
                quantization_distortion(params.delta[0], None, params.xi * sx) / (params.xi * params.xi)
            } else {
                quantization_distortion(params.delta[enc - 1], params.levels(enc), sx)
            };
            let eps = eps.min(sx2 * (1.0 - 1e-12));
            a[enc - 1] = (sx2 - eps) / sx2;
            u[enc - 1] = (sx2 - eps) * eps / sx2;
        }
        let k = params.kappa_m / sx;
        let a_clip = 1.0 - 2.0 * q_func(k);
        let var_clip = power_encoder_analog(1.0, params.kappa_m, sx2);
        let alpha_m = params.alpha[m - 1];
        a[m - 1] = a_clip;
        u[m - 1] = (var_clip - a_clip * a_clip * sx2).max(0.0) + sigma_n2 / (alpha_m * alpha_m);

        let cov = model.covariance();
        let gains = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(a.clone()));
        let mut s = &gains * &cov * &gains;
        for i in 0..m {
            s[(i, i)] += u[i];
        }
        let s_inv = s
            .try_inverse()
            .ok_or_else(|| AnalysisError::Infeasible("singular observation covariance".into()))?;
        let w = &cov * &gains * s_inv;
        let err = &cov - &w * &gains * &cov;
        let base = (0..m).map(|i| err[(i, i)].max(0.0)).collect();
        Ok(Self {
            w,
            base,
            xi: params.xi,
            analog_scale: 1.0 / (params.beta * alpha_m),
        })
    }

    /// Estimate all sources from one decoder output.
    pub fn apply(&self, decoded: &DecodeResult) -> Vec<f64> {
        let m = self.base.len();
        let mut y = Vec::with_capacity(m);
        y.push(decoded.centroids[0] / self.xi);
        y.extend_from_slice(&decoded.centroids[1..]);
        y.push(decoded.analog * self.analog_scale);
        (0..m)
            .map(|i| (0..m).map(|j| self.w[(i, j)] * y[j]).sum())
            .collect()
    }

    /// Per-source mean squared error of the linear model, before threshold
    /// events.
    pub fn base_mse(&self) -> &[f64] {
        &self.base
    }
}

/// Analytic end-to-end distortion of DQLC for `M = 3`.
pub fn distortion_m3(params: &DqlcParams, model: &SourceModel, sigma_n2: f64, b: f64) -> Result<DistortionReport, AnalysisError> {
    if params.m != 3 {
        return Err(AnalysisError::Infeasible(format!("distortion calculus requires M = 3, got {}", params.m)));
    }
    let geom = segment_geometry(params, model, b)?;
    let sx2 = model.sigma_x2();
    let sx = model.sigma_x();
    let rho = model.rho_x();
    let (delta1, delta2) = (params.delta[0], params.delta[1]);
    let nq2 = params.nq[0] as f64;
    let (alpha2, alpha3) = (params.alpha[1], params.alpha[2]);
    let regime2 = geom.stage_regime(2);
    let regime3 = geom.analog_regime();
    let (d1, d2) = (geom.d[0], geom.d[1]);
    let saa_b = sigma_aa_b(model, alpha3);

    // stage-3 threshold probability (channel errors for x2, anomalies for x3)
    let p_th3 = match regime3 {
        Regime::Clipped => clipped_tail_prob(d2 / 2.0, alpha3, params.kappa_m, sx2, sigma_n2)?,
        Regime::Gaussian => 2.0 * q_func(d2 / 2.0 / (sigma_n2 + saa_b).sqrt()),
    };

    // probability of landing in either outermost cell of encoder 2; the
    // outer decision boundary sits at (N_q2/2 - 1) Delta_2
    let p_edge = (2.0 * q_func((nq2 / 2.0 - 1.0) * delta2 / sx)).min(1.0);

    // stage-2 threshold probability (channel errors for x1, anomalies for x2)
    let p_th2 = match regime2 {
        Regime::Clipped => {
            // edge-cell samples shrink the stage-1 margin to d_th; only the
            // outward tail produces a stage-1 error, hence the factor 1/2
            let d_th = d1 / 2.0 - d2 * (nq2 - 1.0) / 2.0;
            let p_dth = clipped_tail_prob(d_th, alpha3, params.kappa_m, sx2, sigma_n2)?;
            p_edge * p_dth / 2.0
        }
        Regime::Gaussian => {
            let var = sigma_n2 + saa_b + alpha2 * alpha2 * sx2 * (1.0 - rho * rho);
            2.0 * q_func(d1 / 2.0 / var.sqrt())
        }
    };

    // no-threshold-event part: per-source error of the joint Wiener combine,
    // which already pools the granular, clipping and channel-noise errors
    // across sources via the correlation
    let rec = Reconstructor::new(params, model, sigma_n2)?;
    let base = rec.base_mse();

    // source 1: neighbor jumps, mapped back to source units by 1/xi^2
    let eps_q1 = quantization_distortion(delta1, None, params.xi * sx);
    let eps_c1 = delta1 * delta1 * p_th2;
    let d1_err = base[0] + eps_c1 / (params.xi * params.xi);

    // source 2
    let eps_q2 = quantization_distortion(delta2, Some(params.nq[0]), sx);
    // outer cells can only err inward, so they see half the crossing rate
    let eps_c2 = match regime3 {
        Regime::Clipped => delta2 * delta2 * p_th3 * (1.0 - p_edge / 2.0),
        Regime::Gaussian => delta2 * delta2 * p_th3,
    };
    let eps_an2 = match regime2 {
        Regime::Clipped => {
            let jump = delta2 * (nq2 - 1.0);
            p_th2 * jump * jump
        }
        Regime::Gaussian => {
            let gamma2 = (geom.l[0] - delta1 / params.xi).max(0.0);
            p_th2 * gamma2 * gamma2
        }
    };
    let d2_err = base[1] + eps_c2 + eps_an2;

    // source 3: clipping and channel noise live inside the combiner's base
    // error; only threshold events are added on top
    let eps_k3 = clipping_distortion(params.kappa_m, sx2);
    let eps_c3 = base[2];
    let eps_an3_base = match regime3 {
        Regime::Clipped => 4.0 * p_th3 * params.kappa_m * params.kappa_m,
        Regime::Gaussian => {
            let gamma3 = (geom.l[1] - delta2).max(0.0);
            p_th3 * gamma3 * gamma3
        }
    };
    // a stage-1 error displaces the residual by d_1; the stage-2 re-decision
    // absorbs at most d_2 (N_q2 - 1), and the leftover leaks into the analog
    // estimate scaled by beta
    let g1 = (d1 - d2 * (nq2 - 1.0)).max(0.0) * params.beta;
    let eps_an3 = eps_an3_base + p_th2 * g1 * g1;
    let d3_err = base[2] + eps_an3;

    Ok(DistortionReport {
        d1: d1_err,
        d2: d2_err,
        d3: d3_err,
        d_avg: (d1_err + d2_err + d3_err) / 3.0,
        p1: power_encoder_digital(1, params, model),
        p2: power_encoder_digital(2, params, model),
        p3: power_encoder_analog(alpha3, params.kappa_m, sx2),
        eps_q1,
        eps_c1,
        eps_q2,
        eps_c2,
        eps_an2,
        eps_k3,
        eps_c3,
        eps_an3,
        p_th2,
        p_th3,
        regime2,
        regime3,
        non_overlapping: geom.non_overlapping,
    })
}

/// Set `xi` so that encoder 1 uses exactly the power left over by encoders 2
/// and 3 under the sum constraint `P_1 + P_2 + P_3 = 3 P`. Solved by
/// bisection since quantization makes the power a non-algebraic function of
/// the scale.
pub fn solve_xi_m3(params: &mut DqlcParams, model: &SourceModel, p: f64) -> Result<(), AnalysisError> {
    if params.m != 3 {
        return Err(AnalysisError::Infeasible(format!("xi solve requires M = 3, got {}", params.m)));
    }
    let p2 = power_encoder_digital(2, params, model);
    let p3 = power_encoder_analog(params.alpha[2], params.kappa_m, model.sigma_x2());
    let target = 3.0 * p - p2 - p3;
    let delta1 = params.delta[0];
    // as xi -> 0 all mass collapses into the innermost cells: P_1 -> delta_1^2/4
    let floor = delta1 * delta1 / 4.0;
    if target <= floor {
        return Err(AnalysisError::Infeasible(format!(
            "residual power {target:.6e} for encoder 1 is below its minimum {floor:.6e}"
        )));
    }
    let sx = model.sigma_x();
    let p1_of = |xi: f64| quantizer_power(delta1, None, xi * sx);
    let mut lo = 1e-12;
    let mut hi = (2.0 * target.sqrt() / sx).max(1.0);
    let mut grow = 0;
    while p1_of(hi) < target {
        hi *= 2.0;
        grow += 1;
        if grow > 80 {
            return Err(AnalysisError::Infeasible("encoder-1 power target unreachable".into()));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if p1_of(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if (hi - lo) < 1e-15 * hi {
            break;
        }
    }
    params.xi = 0.5 * (lo + hi);
    Ok(())
}

// ---------------------------------------------------------------------------
// High-SNR loss and parameter seeding
// ---------------------------------------------------------------------------

/// Mass-width constant used throughout; about 4 for code length one.
pub const B_DEFAULT: f64 = 4.0;

/// Asymptotic SDR loss of DQLC from the upper bound, in dB:
/// `10 (1 - 1/M) log10(C/3)` with `C = b^2 vartheta(rho)`.
pub fn high_snr_loss_db(m: usize, rho_x: f64) -> f64 {
    let c = B_DEFAULT * B_DEFAULT * crate::codec::vartheta(rho_x);
    10.0 * (1.0 - 1.0 / m as f64) * (c / 3.0).log10()
}

/// One point of the loss-versus-source-count comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossPoint {
    pub m: usize,
    /// Asymptotic DQLC loss from the SDR upper bound, dB.
    pub dqlc_loss_db: f64,
    /// Uncoded loss from the SDR upper bound at the given SNR, dB.
    pub uncoded_loss_db: f64,
}

/// DQLC's asymptotic loss against the uncoded loss at finite `snr`, per
/// source count. The crossing marks where uncoded transmission catches up.
pub fn loss_vs_m_curve(rho_x: f64, snr: f64, ms: impl IntoIterator<Item = usize>) -> Result<Vec<LossPoint>, AnalysisError> {
    ms.into_iter()
        .map(|m| {
            let bound = crate::bounds::distortion_lower_bound(m, snr, rho_x, 1.0)
                .map_err(|e| AnalysisError::Infeasible(e.to_string()))?;
            let uncoded = crate::uncoded::sdr_uncoded_db(m, snr, rho_x);
            Ok(LossPoint {
                m,
                dqlc_loss_db: high_snr_loss_db(m, rho_x),
                uncoded_loss_db: bound.sdr_db - uncoded,
            })
        })
        .collect()
}

/// Seed a three-source configuration from the high-SNR closed forms:
/// gains from the geometric recursion, step sizes from the segment lengths,
/// clip level from a clipping-distortion budget, Wiener `beta`, and `xi`
/// solved for the power constraint.
pub fn high_snr_design(model: &SourceModel, p: f64, sigma_n2: f64, b: f64) -> Result<DqlcParams, AnalysisError> {
    let m = 3usize;
    let rho = model.rho_x();
    if rho >= 1.0 {
        return Err(AnalysisError::Infeasible("high-SNR design requires rho < 1".into()));
    }
    let sx2 = model.sigma_x2();
    let sx = model.sigma_x();
    let snr = p / sigma_n2;
    let c = b * b * crate::codec::vartheta(rho);
    let kcal = (3.0 / c).powf(1.0 - 1.0 / m as f64);
    let varrho = (m as f64 * snr / (1.0 - rho).powi(m as i32 - 1)).powf(1.0 / m as f64);
    let kr = (kcal * varrho).max(1.5);

    // absolute channel gains from the geometric recursion; their squares are
    // the channel powers of encoders 2 and 3 (times sigma_x^2)
    let mut a3_sq = sigma_n2 * kr;
    let mut a2_sq = a3_sq * c * (1.0 - rho) * kr / 3.0;
    // leave most of the sum budget to encoder 1
    let budget = 0.8 * 3.0 * p;
    if a2_sq + a3_sq > budget {
        let shrink = budget / (a2_sq + a3_sq);
        a2_sq *= shrink;
        a3_sq *= shrink;
    }
    let alpha3 = (a3_sq / sx2).sqrt();
    let alpha2 = (a2_sq / sx2).sqrt().max(alpha3);

    // clip level from a clipping budget of a tenth of the per-source target
    let target = sx2 / kr / 10.0;
    let mut lo = 0.3;
    let mut hi = 30.0;
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if clipping_distortion(mid * sx, sx2) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let kappa3 = 0.5 * (lo + hi) * sx;

    let l = 2.0 * b * (crate::codec::vartheta(rho) * sx2 * (1.0 - rho)).sqrt();
    // step sizes sized so each decision distance covers the nested block;
    // delta_1 additionally capped so encoder 1 can afford at least a few
    // cells within its residual power budget
    let p1_est = (3.0 * p - a2_sq - a3_sq).max(1e-3 * p);
    let delta2 = alpha3 * l / (alpha2 + rho * alpha3);
    let delta1 = (alpha2 * l).min((2.0 * p1_est).sqrt());
    let mut nq2 = ((8.0 * sx / delta2).ceil() as u32).clamp(2, 128);
    if nq2 % 2 == 1 {
        nq2 += 1;
    }
    // Wiener gain against the conditional variance: the decoder estimates
    // the analog source around its mean given the digital decisions
    let v_cond = sigma_aa_b(model, alpha3) / (alpha3 * alpha3);
    let beta = alpha3 * v_cond / (alpha3 * alpha3 * v_cond + sigma_n2);

    let mut params = DqlcParams {
        m,
        delta: vec![delta1, delta2],
        nq: vec![nq2],
        alpha: vec![1.0, alpha2, alpha3],
        kappa_m: kappa3,
        beta,
        xi: 1.0,
        style: QuantizerStyle::Midrise,
    };
    // the exact quantizer powers differ slightly from the estimates; refine
    // delta_1 until the power solve is feasible
    let mut attempts = 0;
    while let Err(e) = solve_xi_m3(&mut params, model, p) {
        attempts += 1;
        if attempts > 10 {
            return Err(e);
        }
        params.delta[0] *= 0.5;
    }
    params.validate()?;
    Ok(params)
}

// ---------------------------------------------------------------------------
// Numeric optimization (M = 3)
// ---------------------------------------------------------------------------

/// Controls for [`optimize_m3`].
#[derive(Debug, Clone)]
pub struct OptimizeOptions {
    /// Random restarts around the high-SNR seed, per level count.
    pub starts: usize,
    /// Nelder-Mead iterations per start.
    pub iters: usize,
    /// Seed for the restart perturbations; the outcome is deterministic for
    /// a fixed seed regardless of thread count.
    pub seed: u64,
    /// Candidate even level counts for encoder 2; `None` picks a built-in
    /// ladder around the seeded value.
    pub nq2_candidates: Option<Vec<u32>>,
    /// Mass-width constant for the geometry.
    pub b: f64,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        Self { starts: 4, iters: 260, seed: 0x5eed_d91c, nq2_candidates: None, b: B_DEFAULT }
    }
}

const PENALTY: f64 = 1e9;

/// Objective: average distortion (normalized by the source variance) of the
/// configuration described by log-space coordinates
/// `x = [ln d1, ln d2, ln a2, ln a3, ln k3, ln beta]` with `xi` solved for
/// the power constraint. Violations return a graded penalty.
fn objective(x: &[f64; 6], nq2: u32, model: &SourceModel, p: f64, sigma_n2: f64, b: f64) -> f64 {
    let [ld1, ld2, la2, la3, lk3, lb] = *x;
    if x.iter().any(|v| !v.is_finite() || v.abs() > 60.0) {
        return PENALTY;
    }
    let (delta1, delta2) = (ld1.exp(), ld2.exp());
    let (alpha2, alpha3) = (la2.exp(), la3.exp());
    let (kappa3, beta) = (lk3.exp(), lb.exp());
    if alpha3 > alpha2 {
        return PENALTY * (1.0 + alpha3 / alpha2);
    }
    let mut params = DqlcParams {
        m: 3,
        delta: vec![delta1, delta2],
        nq: vec![nq2],
        alpha: vec![1.0, alpha2, alpha3],
        kappa_m: kappa3,
        beta,
        xi: 1.0,
        style: QuantizerStyle::Midrise,
    };
    if solve_xi_m3(&mut params, model, p).is_err() {
        return PENALTY;
    }
    // the distortion calculus is only valid while channel segments stay
    // disjoint; drive violations back with a graded penalty
    let overlap = match segment_geometry(&params, model, b) {
        Ok(geom) => geom
            .slack
            .iter()
            .zip(geom.d.iter())
            .map(|(&s, &d)| {
                let v = (-s).max(0.0) / d.max(1e-12);
                v * v
            })
            .sum::<f64>(),
        Err(_) => return PENALTY,
    };
    match distortion_m3(&params, model, sigma_n2, b) {
        Ok(rep) => {
            // score with the per-source error decomposition rather than the
            // joint combiner's pooled base error: pooling lets a starved
            // encoder hide behind its correlated neighbors, which the
            // small-error calculus cannot price, so the search would drift
            // into configurations the decoder cannot actually handle
            let xi2 = params.xi * params.xi;
            let d1c = (rep.eps_q1 + rep.eps_c1) / xi2;
            let d2c = rep.eps_q2 + rep.eps_c2 + rep.eps_an2;
            let d3c = rep.eps_k3
                + channel_distortion_m(alpha3, beta, model.sigma_x2(), sigma_n2)
                + rep.eps_an3;
            (d1c + d2c + d3c) / (3.0 * model.sigma_x2()) + 10.0 * overlap
        }
        Err(_) => PENALTY,
    }
}

/// Plain Nelder-Mead on six coordinates.
fn nelder_mead<F: Fn(&[f64; 6]) -> f64>(f: F, x0: [f64; 6], step: f64, iters: usize) -> ([f64; 6], f64) {
    const N: usize = 6;
    let mut simplex: Vec<[f64; 6]> = Vec::with_capacity(N + 1);
    simplex.push(x0);
    for i in 0..N {
        let mut v = x0;
        v[i] += step;
        simplex.push(v);
    }
    let mut fv: Vec<f64> = simplex.iter().map(|v| f(v)).collect();
    for _ in 0..iters {
        // order best..worst
        let mut idx: Vec<usize> = (0..=N).collect();
        idx.sort_by(|&a, &b| fv[a].partial_cmp(&fv[b]).unwrap());
        let ordered: Vec<[f64; 6]> = idx.iter().map(|&i| simplex[i]).collect();
        let ofv: Vec<f64> = idx.iter().map(|&i| fv[i]).collect();
        simplex = ordered;
        fv = ofv;
        if (fv[N] - fv[0]).abs() <= 1e-13 * (1.0 + fv[0].abs()) {
            break;
        }
        let mut centroid = [0.0; 6];
        for v in simplex.iter().take(N) {
            for (c, vi) in centroid.iter_mut().zip(v.iter()) {
                *c += vi / N as f64;
            }
        }
        let point = |t: f64| {
            let mut v = [0.0; 6];
            for i in 0..N {
                v[i] = centroid[i] + t * (simplex[N][i] - centroid[i]);
            }
            v
        };
        let xr = point(-1.0);
        let fr = f(&xr);
        if fr < fv[0] {
            let xe = point(-2.0);
            let fe = f(&xe);
            if fe < fr {
                simplex[N] = xe;
                fv[N] = fe;
            } else {
                simplex[N] = xr;
                fv[N] = fr;
            }
        } else if fr < fv[N - 1] {
            simplex[N] = xr;
            fv[N] = fr;
        } else {
            let (xc, fc) = if fr < fv[N] {
                let x = point(-0.5);
                let fx = f(&x);
                (x, fx)
            } else {
                let x = point(0.5);
                let fx = f(&x);
                (x, fx)
            };
            if fc < fv[N].min(fr) {
                simplex[N] = xc;
                fv[N] = fc;
            } else {
                // shrink toward the best vertex
                let best = simplex[0];
                for i in 1..=N {
                    for j in 0..N {
                        simplex[i][j] = best[j] + 0.5 * (simplex[i][j] - best[j]);
                    }
                    fv[i] = f(&simplex[i]);
                }
            }
        }
    }
    let mut best = 0;
    for i in 1..=N {
        if fv[i] < fv[best] {
            best = i;
        }
    }
    (simplex[best], fv[best])
}

/// Optimize the six continuous parameters and the encoder-2 level count for
/// three sources under the sum power constraint `3 P`. Multi-start
/// Nelder-Mead seeded from the high-SNR design; restarts run in parallel and
/// the best result is selected deterministically.
pub fn optimize_m3(
    model: &SourceModel,
    p: f64,
    sigma_n2: f64,
    opts: &OptimizeOptions,
) -> Result<(DqlcParams, DistortionReport), AnalysisError> {
    let seed_params = high_snr_design(model, p, sigma_n2, opts.b)?;
    let x0 = [
        seed_params.delta[0].ln(),
        seed_params.delta[1].ln(),
        seed_params.alpha[1].ln(),
        seed_params.alpha[2].ln(),
        seed_params.kappa_m.ln(),
        seed_params.beta.ln(),
    ];
    let nq2_list: Vec<u32> = match &opts.nq2_candidates {
        Some(v) => v.clone(),
        None => {
            let s = seed_params.nq[0];
            let mut v = vec![2u32, 4, 6, 8, 12, 16, 24, 32, 48, 64];
            for cand in [s.saturating_sub(2), s, s + 2, s * 2] {
                if cand >= 2 && cand % 2 == 0 {
                    v.push(cand);
                }
            }
            v.sort_unstable();
            v.dedup();
            v
        }
    };
    // screen level counts with one objective evaluation at the seed and keep
    // the most promising few; a full multi-start per count is wasteful
    let nq2_list: Vec<u32> = if nq2_list.len() > 4 {
        let mut scored: Vec<(f64, u32)> = nq2_list
            .par_iter()
            .map(|&nq2| (objective(&x0, nq2, model, p, sigma_n2, opts.b), nq2))
            .collect();
        scored.sort_by(|a, b| (a.0, a.1).partial_cmp(&(b.0, b.1)).unwrap());
        let mut keep: Vec<u32> = scored.iter().take(4).map(|&(_, n)| n).collect();
        keep.sort_unstable();
        keep
    } else {
        nq2_list
    };

    let mut tasks: Vec<(usize, u32, [f64; 6])> = Vec::new();
    let mut idx = 0usize;
    for &nq2 in &nq2_list {
        for s in 0..opts.starts {
            let mut x = x0;
            if s > 0 {
                let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ (idx as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
                for v in x.iter_mut() {
                    *v += rng.gen_range(-0.5..0.5);
                }
            }
            tasks.push((idx, nq2, x));
            idx += 1;
        }
    }

    let results: Vec<(f64, usize, u32, [f64; 6])> = tasks
        .par_iter()
        .map(|&(i, nq2, x)| {
            let (xb, fb) = nelder_mead(
                |v| objective(v, nq2, model, p, sigma_n2, opts.b),
                x,
                0.2,
                opts.iters,
            );
            (fb, i, nq2, xb)
        })
        .collect();

    let best = results
        .iter()
        .filter(|r| r.0.is_finite() && r.0 < PENALTY)
        .min_by(|a, b| (a.0, a.1).partial_cmp(&(b.0, b.1)).unwrap())
        .ok_or_else(|| AnalysisError::Infeasible("no feasible configuration found".into()))?;

    let x = best.3;
    let mut params = DqlcParams {
        m: 3,
        delta: vec![x[0].exp(), x[1].exp()],
        nq: vec![best.2],
        alpha: vec![1.0, x[2].exp(), x[3].exp()],
        kappa_m: x[4].exp(),
        beta: x[5].exp(),
        xi: 1.0,
        style: QuantizerStyle::Midrise,
    };
    solve_xi_m3(&mut params, model, p)?;
    params.validate()?;
    let report = distortion_m3(&params, model, sigma_n2, opts.b)?;
    Ok((params, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{channel, decode_sequential, encode_analog, encode_digital};
    use approx::assert_relative_eq;

    #[test]
    fn quantizer_power_two_levels() {
        // Nq = 2, delta = 1, sigma = 1: both cells at +-1/2, power 1/4
        assert_relative_eq!(quantizer_power(1.0, Some(2), 1.0), 0.25, max_relative = 1e-12);
    }

    #[test]
    fn quantizer_power_matches_monte_carlo() {
        let model = SourceModel::from_correlation(3, 1.0, 0.0).unwrap();
        let params = DqlcParams {
            m: 3,
            delta: vec![1.2, 0.8],
            nq: vec![6],
            alpha: vec![1.0, 0.4, 0.1],
            kappa_m: 1.3,
            beta: 1.0,
            xi: 0.9,
            style: QuantizerStyle::Midrise,
        };
        let xs = model.sample(2_000_000, 99);
        let n = xs.len() as f64;
        let mut acc = [0.0f64; 3];
        for row in &xs {
            let y1 = encode_digital(row[0], 1, &params);
            let y2 = encode_digital(row[1], 2, &params);
            let y3 = encode_analog(row[2], &params);
            acc[0] += y1 * y1;
            acc[1] += y2 * y2;
            acc[2] += y3 * y3;
        }
        let analytic = [
            power_encoder_digital(1, &params, &model),
            power_encoder_digital(2, &params, &model),
            power_encoder_analog(0.1, 1.3, 1.0),
        ];
        for (mc, an) in acc.iter().map(|a| a / n).zip(analytic.iter()) {
            assert_relative_eq!(mc, an, max_relative = 5e-3);
        }
    }

    #[test]
    fn clipping_distortion_closed_value() {
        // frozen by evaluating 2 sigma^2 [(1+k^2) Q(k) - k phi(k)] at k = 1
        // 4 Q(1) - 2 phi(1)
        assert_relative_eq!(clipping_distortion(1.0, 1.0), 0.15067956668754147, max_relative = 1e-9);
        // Monte Carlo confirmation
        let model = SourceModel::from_correlation(2, 1.0, 0.0).unwrap();
        let xs = model.sample(2_000_000, 5);
        let mc: f64 = xs
            .iter()
            .map(|r| {
                let e = r[0].abs() - 1.0;
                if e > 0.0 {
                    e * e
                } else {
                    0.0
                }
            })
            .sum::<f64>()
            / xs.len() as f64;
        assert_relative_eq!(mc, 0.1507, max_relative = 0.02);
        // large kappa: no clipping
        assert!(clipping_distortion(10.0, 1.0) < 1e-18);
    }

    #[test]
    fn quantization_distortion_high_rate_limit() {
        let d = quantization_distortion(0.01, None, 1.0);
        assert_relative_eq!(d, 0.01 * 0.01 / 12.0, max_relative = 1e-3);
        // bounded coarse quantizer exceeds the granular-only value
        let coarse = quantization_distortion(1.0, Some(2), 1.0);
        assert!(coarse > quantization_distortion(1.0, None, 1.0));
    }

    #[test]
    fn xi_solve_meets_power_budget() {
        let model = SourceModel::from_correlation(3, 1.0, 0.0).unwrap();
        let p = 10.0;
        let mut params = DqlcParams {
            m: 3,
            delta: vec![2.0, 0.9],
            nq: vec![4],
            alpha: vec![1.0, 0.3, 0.1],
            kappa_m: 2.0,
            beta: 1.0,
            xi: 1.0,
            style: QuantizerStyle::Midrise,
        };
        solve_xi_m3(&mut params, &model, p).unwrap();
        let total = power_encoder_digital(1, &params, &model)
            + power_encoder_digital(2, &params, &model)
            + power_encoder_analog(0.1, 2.0, 1.0);
        assert!(total <= 3.0 * p * (1.0 + 1e-9), "total {total}");
        assert_relative_eq!(total, 3.0 * p, max_relative = 1e-9);
        // infeasible: encoders 2 and 3 already exceed the budget
        let mut starved = params.clone();
        assert!(solve_xi_m3(&mut starved, &model, 1e-4).is_err());
    }

    #[test]
    fn high_snr_loss_constants() {
        // limits frozen from 10 log10(C/3): C = 48 -> 12.04, C = 16 -> 7.27, C = 32 -> 10.28
        assert_relative_eq!(high_snr_loss_db(1_000_000, 0.0), 7.27, max_relative = 1e-3);
        assert_relative_eq!(high_snr_loss_db(1_000_000, 0.95), 10.28, max_relative = 1e-3);
        assert_relative_eq!(high_snr_loss_db(2, 0.0), 7.27 / 2.0, max_relative = 1e-3);
    }

    #[test]
    fn loss_curve_crossover_high_correlation() {
        // uncoded loss shrinks with M while the DQLC loss grows; the curve
        // crossing marks where uncoded transmission catches up
        let pts = loss_vs_m_curve(0.95, 1e10, 2..=20).unwrap();
        let cross = pts.iter().find(|p| p.uncoded_loss_db <= p.dqlc_loss_db).map(|p| p.m);
        let cross = cross.expect("uncoded should catch up for some M");
        assert!((7..=13).contains(&cross), "crossover at M = {cross}");
    }

    #[test]
    fn distortion_report_consistency() {
        let model = SourceModel::from_correlation(3, 1.0, 0.0).unwrap();
        let params = high_snr_design(&model, 100.0, 1.0, B_DEFAULT).unwrap();
        let rep = distortion_m3(&params, &model, 1.0, B_DEFAULT).unwrap();
        assert!(rep.d1 > 0.0 && rep.d2 > 0.0 && rep.d3 > 0.0);
        assert_relative_eq!(rep.d_avg, (rep.d1 + rep.d2 + rep.d3) / 3.0, max_relative = 1e-12);
        assert!(rep.power_total() <= 300.0 * (1.0 + 1e-9));
        assert!((0.0..=1.0).contains(&rep.p_th2));
        assert!((0.0..=1.0).contains(&rep.p_th3));
    }

    #[test]
    fn design_distortion_improves_with_snr() {
        let model = SourceModel::from_correlation(3, 1.0, 0.0).unwrap();
        let mut prev = f64::INFINITY;
        for snr_db in [15.0, 25.0, 35.0, 45.0] {
            let p = 10f64.powf(snr_db / 10.0);
            let params = high_snr_design(&model, p, 1.0, B_DEFAULT).unwrap();
            let rep = distortion_m3(&params, &model, 1.0, B_DEFAULT).unwrap();
            assert!(rep.d_avg < prev, "snr {snr_db}: {} !< {prev}", rep.d_avg);
            prev = rep.d_avg;
        }
    }

    #[test]
    fn optimizer_beats_uncoded_at_high_snr() {
        let model = SourceModel::from_correlation(3, 1.0, 0.0).unwrap();
        let p = 100.0; // 20 dB
        let opts = OptimizeOptions {
            starts: 3,
            iters: 200,
            nq2_candidates: Some(vec![2, 4, 6]),
            ..Default::default()
        };
        let (params, rep) = optimize_m3(&model, p, 1.0, &opts).unwrap();
        assert!(rep.power_total() <= 3.0 * p * (1.0 + 1e-9));
        let uncoded = crate::uncoded::distortion_uncoded(3, 100.0, 0.0, 1.0);
        assert!(rep.d_avg < uncoded / 2.0, "dqlc {} vs uncoded {uncoded}", rep.d_avg);
        let lb = crate::bounds::distortion_lower_bound(3, 100.0, 0.0, 1.0).unwrap();
        assert!(rep.d_avg > lb.d_lb);

        // the analytic model should agree with a quick simulation
        let sim = simulate_quick(&params, &model, 1.0, 400_000, 17);
        let ratio = sim / rep.d_avg;
        assert!((0.5..2.0).contains(&ratio), "sim {sim} vs analytic {}", rep.d_avg);
    }

    fn simulate_quick(params: &DqlcParams, model: &SourceModel, sigma_n2: f64, n: usize, seed: u64) -> f64 {
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs = model.sample(n, seed.wrapping_add(1));
        let rho = model.rho_x();
        let sn = sigma_n2.sqrt();
        let rec = Reconstructor::new(params, model, sigma_n2).unwrap();
        let mut acc = 0.0;
        for row in &xs {
            let ys = [
                encode_digital(row[0], 1, params),
                encode_digital(row[1], 2, params),
                encode_analog(row[2], params),
            ];
            let noise: f64 = StandardNormal.sample(&mut rng);
            let z = channel(&ys, sn * noise);
            let dec = decode_sequential(z, params, rho);
            let xh = rec.apply(&dec);
            for (x, h) in row.iter().zip(xh.iter()) {
                acc += (x - h) * (x - h);
            }
        }
        acc / (n as f64 * 3.0)
    }
}
