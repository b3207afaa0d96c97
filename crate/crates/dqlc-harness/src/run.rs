//! Experiment execution: Monte Carlo simulators for the linear baseline and
//! DQLC, grid sweeps over (rho, snr), and the loss-versus-M curve.
//!
//! Every grid point draws from its own ChaCha stream derived from the run
//! seed and the point's position, and each point's sample budget is split
//! into fixed-size chunks with per-chunk streams. Results are therefore
//! bit-identical for a given seed regardless of thread count or scheduling.

use crate::rows::Row;
use dqlc_core::{
    channel, decode_sequential, distortion_lower_bound, encode_analog, encode_digital,
    high_snr_loss_db, mmse_coefficient, optimize_m3, sdr_uncoded_db, DqlcParams, OptimizeOptions,
    Reconstructor, SourceModel,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid experiment: {0}")]
    Invalid(String),
    #[error(transparent)]
    Analysis(#[from] dqlc_core::AnalysisError),
    #[error(transparent)]
    Model(#[from] dqlc_core::ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Bound,
    Uncoded,
    DqlcAnalytic,
    DqlcSim,
    HighSnrLoss,
}

impl Scheme {
    pub fn as_str(&self) -> &'static str {
        match self {
            Scheme::Bound => "bound",
            Scheme::Uncoded => "uncoded",
            Scheme::DqlcAnalytic => "dqlc-analytic",
            Scheme::DqlcSim => "dqlc-sim",
            Scheme::HighSnrLoss => "high-snr-loss",
        }
    }

    fn stream_tag(&self) -> u64 {
        match self {
            Scheme::Bound => 0,
            Scheme::Uncoded => 1,
            Scheme::DqlcAnalytic => 2,
            Scheme::DqlcSim => 3,
            Scheme::HighSnrLoss => 4,
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "bound" => Ok(Scheme::Bound),
            "uncoded" => Ok(Scheme::Uncoded),
            "dqlc-analytic" => Ok(Scheme::DqlcAnalytic),
            "dqlc-sim" => Ok(Scheme::DqlcSim),
            "high-snr-loss" => Ok(Scheme::HighSnrLoss),
            other => Err(format!("unknown scheme: {other}")),
        }
    }
}

/// A full experiment: scheme(s) evaluated over the (rho, snr) grid.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub schemes: Vec<Scheme>,
    pub m: usize,
    pub rho: Vec<f64>,
    pub snr_db: Vec<f64>,
    /// Source variance; the power budget per encoder is `snr * sigma_n2`.
    pub sigma_x2: f64,
    pub sigma_n2: f64,
    pub samples: usize,
    pub seed: u64,
    /// Fixed parameters for `dqlc-sim`; optimized per point when absent.
    pub params: Option<DqlcParams>,
    pub opt: OptimizeOptions,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            schemes: vec![Scheme::Bound],
            m: 3,
            rho: vec![0.0],
            snr_db: vec![20.0],
            sigma_x2: 1.0,
            sigma_n2: 1.0,
            samples: 1_000_000,
            seed: 1,
            params: None,
            opt: OptimizeOptions::default(),
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<(), RunError> {
        if self.schemes.is_empty() {
            return Err(RunError::Invalid("no schemes requested".into()));
        }
        if self.rho.is_empty() || self.snr_db.is_empty() {
            return Err(RunError::Invalid("empty grid".into()));
        }
        if !self.snr_db.windows(2).all(|w| w[1] > w[0]) {
            return Err(RunError::Invalid("snr list must be strictly increasing".into()));
        }
        let needs_sim = self
            .schemes
            .iter()
            .any(|s| matches!(s, Scheme::Uncoded | Scheme::DqlcSim));
        if needs_sim && self.samples < 10_000 {
            return Err(RunError::Invalid(format!(
                "simulation schemes need at least 10^4 samples, got {}",
                self.samples
            )));
        }
        if self.m < 2 {
            return Err(RunError::Invalid(format!("M must be >= 2, got {}", self.m)));
        }
        Ok(())
    }
}

/// Monte Carlo outcome at one grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub sdr_db: f64,
    pub d_avg: f64,
    /// Per-source mean squared error.
    pub d_source: Vec<f64>,
    /// 95% confidence half-width of the SDR, dB.
    pub ci_half_db: f64,
    pub samples: usize,
    pub seed: u64,
    pub wall_ms: f64,
}

const CHUNK: usize = 1 << 16;
const MAX_CHUNKS: u64 = 1 << 20;

/// Derive the RNG for one chunk of one grid point's sample budget.
fn chunk_rng(seed: u64, stream: u64, chunk: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream.wrapping_mul(MAX_CHUNKS) + chunk);
    rng
}

struct ChunkAcc {
    sq: Vec<f64>,
    err_sum: f64,
    err_sq_sum: f64,
}

fn accumulate<F>(m: usize, n: usize, seed: u64, stream: u64, per_sample: F) -> SimResult
where
    F: Fn(&mut ChaCha8Rng, &mut [f64]) + Sync,
{
    let t0 = std::time::Instant::now();
    let n_chunks = n.div_ceil(CHUNK);
    let accs: Vec<ChunkAcc> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = chunk_rng(seed, stream, c as u64);
            let count = CHUNK.min(n - c * CHUNK);
            let mut sq = vec![0.0; m];
            let mut err_sum = 0.0;
            let mut err_sq_sum = 0.0;
            let mut errs = vec![0.0; m];
            for _ in 0..count {
                per_sample(&mut rng, &mut errs);
                let mut e = 0.0;
                for (acc, &v) in sq.iter_mut().zip(errs.iter()) {
                    *acc += v;
                    e += v;
                }
                let e = e / m as f64;
                err_sum += e;
                err_sq_sum += e * e;
            }
            ChunkAcc { sq, err_sum, err_sq_sum }
        })
        .collect();

    // fold in chunk order: the reduction is deterministic for any thread count
    let mut sq = vec![0.0; m];
    let mut err_sum = 0.0;
    let mut err_sq_sum = 0.0;
    for a in &accs {
        for (t, v) in sq.iter_mut().zip(a.sq.iter()) {
            *t += v;
        }
        err_sum += a.err_sum;
        err_sq_sum += a.err_sq_sum;
    }
    let nf = n as f64;
    let d_avg = err_sum / nf;
    let var = (err_sq_sum / nf - d_avg * d_avg).max(0.0);
    let se = (var / nf).sqrt();
    let ci_half_db = 10.0 * (1.0 + 1.96 * se / d_avg).log10();
    SimResult {
        sdr_db: f64::NAN, // caller normalizes by its sigma_x^2
        d_avg,
        d_source: sq.iter().map(|v| v / nf).collect(),
        ci_half_db: ci_half_db.max(f64::MIN_POSITIVE),
        samples: n,
        seed,
        wall_ms: t0.elapsed().as_secs_f64() * 1e3,
    }
}

/// Simulate uncoded (linear) transmission at one grid point.
pub fn simulate_uncoded(
    model: &SourceModel,
    p: f64,
    sigma_n2: f64,
    n: usize,
    seed: u64,
    stream: u64,
) -> SimResult {
    let m = model.m();
    let sx2 = model.sigma_x2();
    let rho = model.rho_x();
    let gain = (p / sx2).sqrt();
    let coeff = mmse_coefficient(m, p, rho, sx2, sigma_n2);
    let ss = model.sigma_s2().sqrt();
    let sw = model.sigma_w2().sqrt();
    let sn = sigma_n2.sqrt();
    let mut res = accumulate(m, n, seed, stream, |rng, errs| {
        let s: f64 = StandardNormal.sample(rng);
        let s = ss * s;
        let mut z = 0.0;
        let mut xs = [0.0f64; 16];
        for x in xs.iter_mut().take(m) {
            let w: f64 = StandardNormal.sample(rng);
            *x = s + sw * w;
            z += gain * *x;
        }
        let noise: f64 = StandardNormal.sample(rng);
        z += sn * noise;
        let xhat = coeff * z;
        for (e, &x) in errs.iter_mut().zip(xs.iter()) {
            let d = x - xhat;
            *e = d * d;
        }
    });
    res.sdr_db = 10.0 * (sx2 / res.d_avg).log10();
    res
}

/// Simulate DQLC end to end at one grid point.
pub fn simulate_dqlc(
    params: &DqlcParams,
    model: &SourceModel,
    sigma_n2: f64,
    n: usize,
    seed: u64,
    stream: u64,
) -> SimResult {
    let m = model.m();
    let sx2 = model.sigma_x2();
    let rho = model.rho_x();
    let ss = model.sigma_s2().sqrt();
    let sw = model.sigma_w2().sqrt();
    let sn = sigma_n2.sqrt();
    let rec = Reconstructor::new(params, model, sigma_n2)
        .expect("validated parameters always yield a combiner");
    let mut res = accumulate(m, n, seed, stream, |rng, errs| {
        let s: f64 = StandardNormal.sample(rng);
        let s = ss * s;
        let mut xs = [0.0f64; 16];
        let mut z = 0.0;
        for (enc, x) in xs.iter_mut().take(m).enumerate() {
            let w: f64 = StandardNormal.sample(rng);
            *x = s + sw * w;
            z += if enc + 1 < m {
                encode_digital(*x, enc + 1, params)
            } else {
                encode_analog(*x, params)
            };
        }
        let noise: f64 = StandardNormal.sample(rng);
        let z = channel(&[z], sn * noise);
        let dec = decode_sequential(z, params, rho);
        let xhat = rec.apply(&dec);
        for ((e, &x), &h) in errs.iter_mut().zip(xs.iter()).zip(xhat.iter()) {
            let d = x - h;
            *e = d * d;
        }
    });
    res.sdr_db = 10.0 * (sx2 / res.d_avg).log10();
    res
}

fn db_to_lin(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

fn base_row(scheme: Scheme, spec: &ExperimentSpec, rho: f64, snr_db: f64) -> Row {
    Row {
        scheme: scheme.as_str().to_string(),
        m: Some(spec.m),
        rho: Some(rho),
        snr_db: Some(snr_db),
        ..Default::default()
    }
}

fn fill_params(row: &mut Row, params: &DqlcParams) {
    row.delta1 = Some(params.delta[0]);
    row.delta2 = Some(params.delta[1]);
    row.nq2 = Some(params.nq[0]);
    row.alpha2 = Some(params.alpha[1]);
    row.alpha3 = Some(params.alpha[2]);
    row.kappa3 = Some(params.kappa_m);
    row.beta = Some(params.beta);
    row.xi = Some(params.xi);
}

/// Run one scheme at one grid point. Failures are recorded in the row's
/// `error` column rather than aborting the sweep.
fn run_point(scheme: Scheme, spec: &ExperimentSpec, i: usize, j: usize) -> Row {
    let rho = spec.rho[i];
    let snr_db = spec.snr_db[j];
    let snr = db_to_lin(snr_db);
    let p = snr * spec.sigma_n2;
    let mut row = base_row(scheme, spec, rho, snr_db);
    let stream = scheme.stream_tag() << 32 | (i as u64) << 16 | j as u64;

    let model = match SourceModel::from_correlation(spec.m, spec.sigma_x2, rho) {
        Ok(m) => m,
        Err(e) => {
            row.error = Some(e.to_string());
            return row;
        }
    };

    match scheme {
        Scheme::Bound => match distortion_lower_bound(spec.m, snr, rho, spec.sigma_x2) {
            Ok(b) => {
                row.sdr_db = Some(b.sdr_db);
                row.d_avg = Some(b.d_lb);
            }
            Err(e) => row.error = Some(e.to_string()),
        },
        Scheme::Uncoded => {
            let res = simulate_uncoded(&model, p, spec.sigma_n2, spec.samples, spec.seed, stream);
            row.sdr_db = Some(res.sdr_db);
            row.sdr_ci_db = Some(res.ci_half_db);
            row.d_avg = Some(res.d_avg);
            if spec.m == 3 {
                row.d1 = Some(res.d_source[0]);
                row.d2 = Some(res.d_source[1]);
                row.d3 = Some(res.d_source[2]);
            }
            row.samples = Some(res.samples as u64);
            row.seed = Some(spec.seed);
        }
        Scheme::DqlcAnalytic | Scheme::DqlcSim => {
            let solved = match &spec.params {
                Some(p) => Ok((p.clone(), None)),
                None => optimize_m3(&model, p, spec.sigma_n2, &spec.opt)
                    .map(|(pp, rep)| (pp, Some(rep))),
            };
            let (params, report) = match solved {
                Ok(v) => v,
                Err(e) => {
                    row.error = Some(e.to_string());
                    return row;
                }
            };
            let report = match report {
                Some(r) => Ok(r),
                None => dqlc_core::distortion_m3(&params, &model, spec.sigma_n2, spec.opt.b),
            };
            fill_params(&mut row, &params);
            match report {
                Ok(rep) => {
                    row.p1 = Some(rep.p1);
                    row.p2 = Some(rep.p2);
                    row.p3 = Some(rep.p3);
                    if scheme == Scheme::DqlcAnalytic {
                        row.sdr_db = Some(rep.sdr_db(spec.sigma_x2));
                        row.d_avg = Some(rep.d_avg);
                        row.d1 = Some(rep.d1);
                        row.d2 = Some(rep.d2);
                        row.d3 = Some(rep.d3);
                    }
                }
                Err(e) => {
                    if scheme == Scheme::DqlcAnalytic {
                        row.error = Some(e.to_string());
                        return row;
                    }
                }
            }
            if scheme == Scheme::DqlcSim {
                let res = simulate_dqlc(&params, &model, spec.sigma_n2, spec.samples, spec.seed, stream);
                row.sdr_db = Some(res.sdr_db);
                row.sdr_ci_db = Some(res.ci_half_db);
                row.d_avg = Some(res.d_avg);
                row.d1 = Some(res.d_source[0]);
                row.d2 = Some(res.d_source[1]);
                row.d3 = Some(res.d_source[2]);
                row.samples = Some(res.samples as u64);
                row.seed = Some(spec.seed);
            }
        }
        Scheme::HighSnrLoss => {
            row.sdr_db = Some(high_snr_loss_db(spec.m, rho));
        }
    }
    row
}

/// Evaluate every requested scheme on the full (rho, snr) grid, in
/// deterministic row order: rho-major, then snr, schemes side by side.
pub fn sweep(spec: &ExperimentSpec) -> Result<Vec<Row>, RunError> {
    spec.validate()?;
    let mut rows = Vec::new();
    for i in 0..spec.rho.len() {
        for j in 0..spec.snr_db.len() {
            for &scheme in &spec.schemes {
                rows.push(run_point(scheme, spec, i, j));
            }
        }
    }
    Ok(rows)
}

/// Loss-versus-M rows at fixed (rho, snr): for each source count the bound
/// SDR, the uncoded SDR (both in `sdr_db`), and the asymptotic DQLC loss
/// (scheme `high-snr-loss`, loss carried in `sdr_db`).
pub fn loss_curve(rho: f64, snr_db: f64, m_max: usize) -> Result<Vec<Row>, RunError> {
    let snr = db_to_lin(snr_db);
    let mut rows = Vec::new();
    for m in 2..=m_max {
        let bound = distortion_lower_bound(m, snr, rho, 1.0)
            .map_err(|e| RunError::Invalid(e.to_string()))?;
        for (scheme, sdr) in [
            (Scheme::Bound, bound.sdr_db),
            (Scheme::Uncoded, sdr_uncoded_db(m, snr, rho)),
            (Scheme::HighSnrLoss, high_snr_loss_db(m, rho)),
        ] {
            rows.push(Row {
                scheme: scheme.as_str().to_string(),
                m: Some(m),
                rho: Some(rho),
                snr_db: Some(snr_db),
                sdr_db: Some(sdr),
                ..Default::default()
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rows::to_csv;
    use approx::assert_relative_eq;

    #[test]
    fn uncoded_sim_matches_analytic() {
        let model = SourceModel::from_correlation(3, 1.0, 0.0).unwrap();
        let res = simulate_uncoded(&model, 100.0, 1.0, 1_000_000, 7, 0);
        let analytic = sdr_uncoded_db(3, 100.0, 0.0);
        assert!((res.sdr_db - analytic).abs() < 0.05, "{} vs {analytic}", res.sdr_db);
        assert!((res.sdr_db - 1.754).abs() < 0.05);
        assert!(res.ci_half_db > 0.0);
    }

    #[test]
    fn sweep_is_reproducible() {
        let spec = ExperimentSpec {
            schemes: vec![Scheme::Bound, Scheme::Uncoded],
            rho: vec![0.0, 0.95],
            snr_db: vec![10.0, 20.0],
            samples: 50_000,
            ..Default::default()
        };
        let a = to_csv(&sweep(&spec).unwrap());
        let b = to_csv(&sweep(&spec).unwrap());
        assert_eq!(a, b);
        // single-threaded pass produces the identical bytes
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let c = pool.install(|| to_csv(&sweep(&spec).unwrap()));
        assert_eq!(a, c);
    }

    #[test]
    fn bound_column_monotone_in_snr() {
        let spec = ExperimentSpec {
            schemes: vec![Scheme::Bound],
            rho: vec![0.5],
            snr_db: (0..=25).map(|v| (2 * v) as f64).collect(),
            samples: 10_000,
            ..Default::default()
        };
        let rows = sweep(&spec).unwrap();
        let sdrs: Vec<f64> = rows.iter().map(|r| r.sdr_db.unwrap()).collect();
        assert!(sdrs.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn uncoded_equals_bound_at_full_correlation() {
        let model = SourceModel::from_correlation(3, 1.0, 1.0).unwrap();
        let res = simulate_uncoded(&model, 10.0, 1.0, 200_000, 3, 1);
        let b = distortion_lower_bound(3, 10.0, 1.0, 1.0).unwrap();
        assert!((res.sdr_db - b.sdr_db).abs() < 3.0 * res.ci_half_db + 0.02);
    }

    #[test]
    fn loss_curve_layout() {
        let rows = loss_curve(0.0, 100.0, 5).unwrap();
        assert_eq!(rows.len(), 3 * 4);
        assert_eq!(rows[0].scheme, "bound");
        assert_eq!(rows[2].scheme, "high-snr-loss");
        assert_relative_eq!(rows[2].sdr_db.unwrap(), high_snr_loss_db(2, 0.0));
    }

    #[test]
    fn spec_validation() {
        let mut spec = ExperimentSpec::default();
        spec.snr_db = vec![10.0, 10.0];
        assert!(sweep(&spec).is_err());
        let mut spec = ExperimentSpec::default();
        spec.schemes = vec![Scheme::Uncoded];
        spec.samples = 100;
        assert!(sweep(&spec).is_err());
    }
}
