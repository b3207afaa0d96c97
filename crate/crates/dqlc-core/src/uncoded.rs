//! Distributed linear baseline: each encoder scales its observation to the
//! power constraint and the receiver applies a scalar Wiener (MMSE) gain to
//! the channel sum. Optimal whenever the SNR is below the water-filling
//! threshold, where only the common component can be reconstructed.

/// `y = x sqrt(P / sigma_x^2)`, so that `E[y^2] = P`.
pub fn encode_linear(x: f64, p: f64, sigma_x2: f64) -> f64 {
    x * (p / sigma_x2).sqrt()
}

/// Scalar Wiener coefficient `E[x_m z] / E[z^2]` for the channel sum `z`.
pub fn mmse_coefficient(m: usize, p: f64, rho_x: f64, sigma_x2: f64, sigma_n2: f64) -> f64 {
    let mf = m as f64;
    let g = 1.0 + (mf - 1.0) * rho_x;
    (p * sigma_x2).sqrt() * g / (p * (mf * mf * rho_x + mf * (1.0 - rho_x)) + sigma_n2)
}

/// MMSE estimate of each source (identical for all of them) from `z`.
pub fn decode_mmse_linear(z: f64, m: usize, p: f64, rho_x: f64, sigma_x2: f64, sigma_n2: f64) -> f64 {
    mmse_coefficient(m, p, rho_x, sigma_x2, sigma_n2) * z
}

/// Analytic end-to-end distortion of uncoded transmission at
/// `snr = P / sigma_n^2`:
/// `D = sigma_x^2 (1 - P (1+(M-1)rho)^2 / (P (M^2 rho + M(1-rho)) + sigma_n^2))`.
pub fn distortion_uncoded(m: usize, snr: f64, rho_x: f64, sigma_x2: f64) -> f64 {
    let mf = m as f64;
    let g = 1.0 + (mf - 1.0) * rho_x;
    sigma_x2 * (1.0 - snr * g * g / (snr * (mf * mf * rho_x + mf * (1.0 - rho_x)) + 1.0))
}

/// Uncoded SDR in dB.
pub fn sdr_uncoded_db(m: usize, snr: f64, rho_x: f64) -> f64 {
    -10.0 * (distortion_uncoded(m, snr, rho_x, 1.0)).log10()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::{distortion_lower_bound, waterfill_threshold_snr};
    use approx::assert_relative_eq;

    #[test]
    fn encoder_scaling() {
        assert_eq!(encode_linear(0.0, 7.0, 1.0), 0.0);
        assert_relative_eq!(encode_linear(1.0, 4.0, 1.0), 2.0);
    }

    #[test]
    fn coefficient_limits() {
        // sigma_n^2 -> inf: coefficient -> 0
        assert!(mmse_coefficient(3, 1.0, 0.5, 1.0, 1e12) < 1e-6);
        // direct value, M=3, rho=0, P=100
        let d = distortion_uncoded(3, 100.0, 0.0, 1.0);
        assert_relative_eq!(d, 1.0 - 100.0 / 301.0, max_relative = 1e-12);
        assert!((sdr_uncoded_db(3, 100.0, 0.0) - 1.754).abs() < 0.01);
    }

    #[test]
    fn distortion_direct_values() {
        // frozen by direct evaluation of the formula
        let d = distortion_uncoded(3, 1e4, 0.95, 1.0);
        assert_relative_eq!(d, 2901.0 / 87001.0, max_relative = 1e-12);
        assert!((sdr_uncoded_db(3, 1e4, 0.95) - 14.77).abs() < 0.01);
        assert_relative_eq!(distortion_uncoded(4, 0.0, 0.3, 2.5), 2.5);
    }

    #[test]
    fn equals_bound_below_threshold() {
        for &m in &[2usize, 3, 5] {
            for &rho in &[0.1, 0.5, 0.9, 0.95] {
                let thr = waterfill_threshold_snr(m, rho);
                for &f in &[0.1, 0.5, 0.999] {
                    let snr = thr * f;
                    let d = distortion_uncoded(m, snr, rho, 1.0);
                    let b = distortion_lower_bound(m, snr, rho, 1.0).unwrap();
                    assert_relative_eq!(d, b.d_lb, max_relative = 1e-12);
                }
            }
        }
    }

    #[test]
    fn monotone_in_snr_and_rho() {
        let mut prev = f64::INFINITY;
        for snr_db in 0..=40 {
            let d = distortion_uncoded(3, 10f64.powf(snr_db as f64 / 10.0), 0.5, 1.0);
            assert!(d <= prev);
            prev = d;
        }
        let mut prev = f64::INFINITY;
        for &rho in &[0.0, 0.2, 0.5, 0.9, 1.0] {
            let d = distortion_uncoded(3, 10.0, rho, 1.0);
            assert!(d <= prev);
            prev = d;
        }
    }
}
