//! Performance limits: reverse water-filling rate-distortion for the
//! Gaussian vector source, sum capacity of the Gaussian MAC with correlated
//! inputs, and the closed-form distortion lower bound with its two regimes.

use crate::model::Spectrum;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum BoundError {
    #[error("water level must be positive, got {0}")]
    NonPositiveTheta(f64),
    #[error("snr must be non-negative, got {0}")]
    NegativeSnr(f64),
    #[error("high-SNR form is singular at rho = 1")]
    RhoOne,
    #[error("bisection failed to bracket the target power {0}")]
    BracketFailure(f64),
}

/// Reverse water-filling solution at water level `theta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaterfillSolution {
    pub theta: f64,
    /// Distortion `(1/M) sum_i min(theta, lambda_i)`.
    pub d_star: f64,
    /// Rate `(1/M) sum_i max(0, 0.5 log2(lambda_i / theta))` in bits per
    /// source symbol.
    pub r_star: f64,
}

/// Which branch of the closed-form bound applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundRegime {
    /// Low SNR: only the common component is represented and a linear
    /// mapping is optimal.
    LinearOptimal,
    /// High SNR: all eigencomponents are represented.
    Waterfill,
}

impl BoundRegime {
    pub fn as_str(&self) -> &'static str {
        match self {
            BoundRegime::LinearOptimal => "linear-optimal",
            BoundRegime::Waterfill => "waterfill",
        }
    }
}

/// One point of the distortion lower bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundCurve {
    pub snr: f64,
    pub rho_x: f64,
    pub m: usize,
    pub d_lb: f64,
    pub sdr_db: f64,
    pub regime: BoundRegime,
}

/// Evaluate the reverse water-filling distortion and rate at `theta`.
pub fn rd_waterfill(spectrum: &Spectrum, theta: f64) -> Result<WaterfillSolution, BoundError> {
    if !(theta > 0.0) {
        return Err(BoundError::NonPositiveTheta(theta));
    }
    let mf = spectrum.m as f64;
    let rest = mf - 1.0;
    let d_star = (theta.min(spectrum.lambda1) + rest * theta.min(spectrum.lambda_rest)) / mf;
    let rate = |l: f64| {
        if l > theta {
            0.5 * (l / theta).log2()
        } else {
            0.0
        }
    };
    let r_star = (rate(spectrum.lambda1) + rest * rate(spectrum.lambda_rest)) / mf;
    Ok(WaterfillSolution { theta, d_star, r_star })
}

/// Sum capacity of the GMAC per source symbol when all `M` encoders transmit
/// at SNR `snr` with pairwise output correlation `rho_x`:
/// `C = (1/2M) log2(1 + M snr (1 + (M-1) rho_x))`.
pub fn mac_capacity(m: usize, snr: f64, rho_x: f64) -> f64 {
    let mf = m as f64;
    (1.0 + mf * snr * (1.0 + (mf - 1.0) * rho_x)).log2() / (2.0 * mf)
}

/// Transmit power needed to support water level `theta`:
/// `P* = sigma_n^2 (prod_i max(lambda_i/theta, 1) - 1) / (M + M(M-1) rho)`.
pub fn power_for_theta(spectrum: &Spectrum, theta: f64, rho_x: f64, sigma_n2: f64) -> Result<f64, BoundError> {
    if !(theta > 0.0) {
        return Err(BoundError::NonPositiveTheta(theta));
    }
    let mf = spectrum.m as f64;
    let prod = (spectrum.lambda1 / theta).max(1.0)
        * (spectrum.lambda_rest / theta).max(1.0).powi(spectrum.m as i32 - 1);
    Ok(sigma_n2 * (prod - 1.0) / (mf + mf * (mf - 1.0) * rho_x))
}

/// Numerically invert [`power_for_theta`] for `theta` by bisection
/// (relative tolerance 1e-12, bracket `[1e-15 lambda1, lambda1]`).
pub fn theta_for_power(spectrum: &Spectrum, power: f64, rho_x: f64, sigma_n2: f64) -> Result<f64, BoundError> {
    let mut lo = 1e-15 * spectrum.lambda1;
    let mut hi = spectrum.lambda1;
    if power <= 0.0 {
        return Ok(hi);
    }
    // power is decreasing in theta; p(hi) = 0 < power
    if power_for_theta(spectrum, lo, rho_x, sigma_n2)? < power {
        return Err(BoundError::BracketFailure(power));
    }
    while (hi - lo) > 1e-12 * hi {
        let mid = 0.5 * (lo + hi);
        if power_for_theta(spectrum, mid, rho_x, sigma_n2)? > power {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// SNR at which the water level reaches the repeated eigenvalue; above it
/// all eigencomponents are represented. Equals
/// `rho / ((1 - rho)(1 + (M-1) rho))`, which reduces to `rho/(1 - rho^2)`
/// at `M = 2`. Infinite at `rho = 1`.
pub fn waterfill_threshold_snr(m: usize, rho_x: f64) -> f64 {
    if rho_x >= 1.0 {
        return f64::INFINITY;
    }
    let mf = m as f64;
    rho_x / ((1.0 - rho_x) * (1.0 + (mf - 1.0) * rho_x))
}

/// Closed-form two-branch distortion lower bound for the symmetric network
/// at `snr = P / sigma_n^2`.
pub fn distortion_lower_bound(m: usize, snr: f64, rho_x: f64, sigma_x2: f64) -> Result<BoundCurve, BoundError> {
    if !(snr >= 0.0) {
        return Err(BoundError::NegativeSnr(snr));
    }
    let mf = m as f64;
    let g = 1.0 + (mf - 1.0) * rho_x;
    let threshold = waterfill_threshold_snr(m, rho_x);
    let (d_lb, regime) = if snr <= threshold {
        let d = sigma_x2 * (1.0 - snr * g * g / (snr * (mf * mf * rho_x + mf * (1.0 - rho_x)) + 1.0));
        (d, BoundRegime::LinearOptimal)
    } else {
        let d = sigma_x2 * (g * (1.0 - rho_x).powi(m as i32 - 1) / (snr * mf * g + 1.0)).powf(1.0 / mf);
        (d, BoundRegime::Waterfill)
    };
    Ok(BoundCurve {
        snr,
        rho_x,
        m,
        d_lb,
        sdr_db: 10.0 * (sigma_x2 / d_lb).log10(),
        regime,
    })
}

/// SDR upper bound `10 log10(sigma_x^2 / D_lb)` in dB.
pub fn sdr_upper_bound_db(m: usize, snr: f64, rho_x: f64) -> Result<f64, BoundError> {
    Ok(distortion_lower_bound(m, snr, rho_x, 1.0)?.sdr_db)
}

/// High-SNR SDR upper bound `(M snr / (1 - rho)^(M-1))^(1/M)` (linear).
pub fn high_snr_bound(m: usize, snr: f64, rho_x: f64) -> Result<f64, BoundError> {
    if rho_x >= 1.0 {
        return Err(BoundError::RhoOne);
    }
    let mf = m as f64;
    Ok((mf * snr / (1.0 - rho_x).powi(m as i32 - 1)).powf(1.0 / mf))
}
