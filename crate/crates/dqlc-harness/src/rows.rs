//! Flat CSV output: one row per (scheme, grid point), fixed column set so a
//! single file feeds any plotting tool. Absent fields stay empty.

use std::io::Write;

pub const CSV_HEADER: &str = "scheme,M,rho,snr_db,sdr_db,sdr_ci_db,d_avg,d1,d2,d3,p1,p2,p3,delta1,delta2,nq2,alpha2,alpha3,kappa3,beta,xi,samples,seed,error";

/// Print a float with nine significant digits, plain notation for moderate
/// magnitudes and scientific otherwise.
pub fn fmt_sig(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let exp = x.abs().log10().floor() as i32;
    if !(-4..=12).contains(&exp) {
        format!("{x:.8e}")
    } else {
        let decimals = (8 - exp).max(0) as usize;
        format!("{x:.decimals$}")
    }
}

/// One output record; `None` renders as an empty field.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Row {
    pub scheme: String,
    pub m: Option<usize>,
    pub rho: Option<f64>,
    pub snr_db: Option<f64>,
    pub sdr_db: Option<f64>,
    pub sdr_ci_db: Option<f64>,
    pub d_avg: Option<f64>,
    pub d1: Option<f64>,
    pub d2: Option<f64>,
    pub d3: Option<f64>,
    pub p1: Option<f64>,
    pub p2: Option<f64>,
    pub p3: Option<f64>,
    pub delta1: Option<f64>,
    pub delta2: Option<f64>,
    pub nq2: Option<u32>,
    pub alpha2: Option<f64>,
    pub alpha3: Option<f64>,
    pub kappa3: Option<f64>,
    pub beta: Option<f64>,
    pub xi: Option<f64>,
    pub samples: Option<u64>,
    pub seed: Option<u64>,
    pub error: Option<String>,
}

fn f(v: Option<f64>) -> String {
    v.map(fmt_sig).unwrap_or_default()
}

impl Row {
    pub fn line(&self) -> String {
        let mut fields: Vec<String> = vec![self.scheme.clone()];
        fields.push(self.m.map(|v| v.to_string()).unwrap_or_default());
        for v in [self.rho, self.snr_db, self.sdr_db, self.sdr_ci_db, self.d_avg, self.d1, self.d2, self.d3, self.p1, self.p2, self.p3, self.delta1, self.delta2] {
            fields.push(f(v));
        }
        fields.push(self.nq2.map(|v| v.to_string()).unwrap_or_default());
        for v in [self.alpha2, self.alpha3, self.kappa3, self.beta, self.xi] {
            fields.push(f(v));
        }
        fields.push(self.samples.map(|v| v.to_string()).unwrap_or_default());
        fields.push(self.seed.map(|v| v.to_string()).unwrap_or_default());
        // commas in diagnostics would break the flat format
        fields.push(self.error.clone().unwrap_or_default().replace(',', ";"));
        fields.join(",")
    }
}

/// Render header plus rows as the full CSV document.
pub fn to_csv(rows: &[Row]) -> String {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.line());
        out.push('\n');
    }
    out
}

pub fn write_csv<W: Write>(mut w: W, rows: &[Row]) -> std::io::Result<()> {
    w.write_all(to_csv(rows).as_bytes())
}
