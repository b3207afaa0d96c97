//! Flat `key=value` text files: optimizer-emitted parameter files and run
//! configuration files mirroring the CLI flags.

use dqlc_core::{DqlcParams, QuantizerStyle};
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FileError {
    #[error("line {0}: expected key=value, got `{1}`")]
    BadLine(usize, String),
    #[error("missing key `{0}`")]
    Missing(&'static str),
    #[error("key `{0}`: {1}")]
    BadValue(&'static str, String),
}

/// Parse `key=value` lines; `#` starts a comment, blank lines are skipped.
pub fn parse_kv(text: &str) -> Result<HashMap<String, String>, FileError> {
    let mut map = HashMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| FileError::BadLine(i + 1, line.to_string()))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

fn get<'a>(map: &'a HashMap<String, String>, key: &'static str) -> Result<&'a str, FileError> {
    map.get(key).map(|s| s.as_str()).ok_or(FileError::Missing(key))
}

fn get_f64(map: &HashMap<String, String>, key: &'static str) -> Result<f64, FileError> {
    get(map, key)?
        .parse()
        .map_err(|e| FileError::BadValue(key, format!("{e}")))
}

/// Serialize a three-source parameter set as written by `dqlc-opt`.
pub fn params_to_kv(p: &DqlcParams) -> String {
    format!(
        "m={}\ndelta1={:.17e}\ndelta2={:.17e}\nnq2={}\nalpha2={:.17e}\nalpha3={:.17e}\nkappa3={:.17e}\nbeta={:.17e}\nxi={:.17e}\nstyle={}\n",
        p.m, p.delta[0], p.delta[1], p.nq[0], p.alpha[1], p.alpha[2], p.kappa_m, p.beta, p.xi,
        p.style.as_str()
    )
}

/// Parse a parameter file back into a validated parameter set.
pub fn params_from_kv(text: &str) -> Result<DqlcParams, FileError> {
    let map = parse_kv(text)?;
    let m: usize = get(&map, "m")?
        .parse()
        .map_err(|e| FileError::BadValue("m", format!("{e}")))?;
    if m != 3 {
        return Err(FileError::BadValue("m", format!("parameter files cover M = 3, got {m}")));
    }
    let style: QuantizerStyle = get(&map, "style")?
        .parse()
        .map_err(|e| FileError::BadValue("style", e))?;
    let params = DqlcParams {
        m,
        delta: vec![get_f64(&map, "delta1")?, get_f64(&map, "delta2")?],
        nq: vec![get(&map, "nq2")?
            .parse()
            .map_err(|e| FileError::BadValue("nq2", format!("{e}")))?],
        alpha: vec![1.0, get_f64(&map, "alpha2")?, get_f64(&map, "alpha3")?],
        kappa_m: get_f64(&map, "kappa3")?,
        beta: get_f64(&map, "beta")?,
        xi: get_f64(&map, "xi")?,
        style,
    };
    params
        .validate()
        .map_err(|e| FileError::BadValue("params", e.to_string()))?;
    Ok(params)
}
