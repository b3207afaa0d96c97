//! `dqlc` command line: evaluate the distortion bound, the linear baseline
//! and DQLC (analytic and simulated) over (rho, snr) grids, optimize DQLC
//! parameter sets, and emit flat CSV.

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use dqlc_harness::files::{params_from_kv, params_to_kv, parse_kv};
use dqlc_harness::rows::write_csv;
use dqlc_harness::run::{loss_curve, sweep, ExperimentSpec, Scheme};
use std::collections::HashMap;
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "dqlc", version, about = "Zero-delay joint source-channel coding laboratory")]
struct Cli {
    /// Optional key=value file supplying defaults for any flag below.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

/// Grid and execution flags shared by every subcommand. Explicit flags
/// override config-file values, which override built-in defaults.
#[derive(Args, Clone, Default)]
struct GridArgs {
    /// Number of sources.
    #[arg(long)]
    m: Option<usize>,
    /// Comma-separated list of inter-source correlations.
    #[arg(long)]
    rho: Option<String>,
    /// Channel SNR grid in dB: `start:stop:step` or a single value.
    #[arg(long)]
    snr_db: Option<String>,
    /// Monte Carlo samples per grid point.
    #[arg(long)]
    samples: Option<usize>,
    /// Run seed; fixed seed plus fixed grid reproduces the output bytes.
    #[arg(long)]
    seed: Option<u64>,
    /// DQLC parameter file (written by dqlc-opt, read by dqlc-sim).
    #[arg(long)]
    params: Option<PathBuf>,
    /// Output CSV path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker thread count; defaults to the number of cores.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Distortion lower bound over the grid.
    Bound(GridArgs),
    /// Simulated linear (uncoded) baseline over the grid.
    Uncoded(GridArgs),
    /// Optimize DQLC at one grid point; writes the parameter file and the
    /// analytic-distortion row.
    DqlcOpt(GridArgs),
    /// Simulate DQLC over the grid, with fixed or per-point optimized
    /// parameters.
    DqlcSim(GridArgs),
    /// Bound, uncoded and DQLC simulation side by side over the grid.
    Sweep(GridArgs),
    /// Bound, uncoded and asymptotic DQLC loss versus the source count M at
    /// one (rho, snr) point; `--m` gives the largest M.
    LossCurve(GridArgs),
}

fn parse_rho_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().with_context(|| format!("bad rho value `{t}`")))
        .collect()
}

fn parse_snr_grid(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    match parts.as_slice() {
        [one] => Ok(vec![one.trim().parse().with_context(|| format!("bad snr value `{one}`"))?]),
        [start, stop, step] => {
            let a: f64 = start.trim().parse().context("bad snr start")?;
            let b: f64 = stop.trim().parse().context("bad snr stop")?;
            let d: f64 = step.trim().parse().context("bad snr step")?;
            if d <= 0.0 || b < a {
                bail!("snr range must satisfy start <= stop, step > 0");
            }
            let n = ((b - a) / d).round() as usize;
            Ok((0..=n).map(|i| a + i as f64 * d).filter(|v| *v <= b + 1e-9).collect())
        }
        _ => bail!("snr grid must be `value` or `start:stop:step`, got `{s}`"),
    }
}

/// Fill unset flags from the config map, then from built-in defaults.
fn merge_config(args: &mut GridArgs, cfg: &HashMap<String, String>) -> Result<()> {
    fn take<T: std::str::FromStr>(slot: &mut Option<T>, cfg: &HashMap<String, String>, key: &str) -> Result<()>
    where
        T::Err: std::fmt::Display,
    {
        if slot.is_none() {
            if let Some(v) = cfg.get(key) {
                *slot = Some(v.parse().map_err(|e| anyhow::anyhow!("config key `{key}`: {e}"))?);
            }
        }
        Ok(())
    }
    take(&mut args.m, cfg, "m")?;
    take(&mut args.rho, cfg, "rho")?;
    take(&mut args.snr_db, cfg, "snr_db")?;
    take(&mut args.samples, cfg, "samples")?;
    take(&mut args.seed, cfg, "seed")?;
    take(&mut args.threads, cfg, "threads")?;
    if args.params.is_none() {
        if let Some(v) = cfg.get("params") {
            args.params = Some(PathBuf::from(v));
        }
    }
    if args.out.is_none() {
        if let Some(v) = cfg.get("out") {
            args.out = Some(PathBuf::from(v));
        }
    }
    Ok(())
}

fn build_spec(args: &GridArgs, schemes: Vec<Scheme>) -> Result<ExperimentSpec> {
    let rho = match &args.rho {
        Some(s) => parse_rho_list(s)?,
        None => vec![0.0, 0.5, 0.9, 0.95],
    };
    let snr_db = match &args.snr_db {
        Some(s) => parse_snr_grid(s)?,
        None => parse_snr_grid("0:50:2")?,
    };
    let params = match &args.params {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading parameter file {}", path.display()))?;
            Some(params_from_kv(&text)?)
        }
        None => None,
    };
    Ok(ExperimentSpec {
        schemes,
        m: args.m.unwrap_or(3),
        rho,
        snr_db,
        samples: args.samples.unwrap_or(1_000_000),
        seed: args.seed.unwrap_or(1),
        params,
        ..Default::default()
    })
}

fn emit(args: &GridArgs, rows: &[dqlc_harness::Row]) -> Result<()> {
    match &args.out {
        Some(path) => {
            let file = std::fs::File::create(path)
                .with_context(|| format!("creating {}", path.display()))?;
            write_csv(std::io::BufWriter::new(file), rows)?;
        }
        None => write_csv(std::io::stdout().lock(), rows)?,
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            parse_kv(&text)?
        }
        None => HashMap::new(),
    };

    let mut args = match &cli.command {
        Command::Bound(a)
        | Command::Uncoded(a)
        | Command::DqlcOpt(a)
        | Command::DqlcSim(a)
        | Command::Sweep(a)
        | Command::LossCurve(a) => a.clone(),
    };
    merge_config(&mut args, &cfg)?;

    if let Some(n) = args.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring thread pool")?;
    }

    match &cli.command {
        Command::Bound(_) => {
            let spec = build_spec(&args, vec![Scheme::Bound])?;
            emit(&args, &sweep(&spec)?)
        }
        Command::Uncoded(_) => {
            let spec = build_spec(&args, vec![Scheme::Uncoded])?;
            emit(&args, &sweep(&spec)?)
        }
        Command::DqlcOpt(_) => {
            // --params names the output file here, not an input
            let mut read_args = args.clone();
            read_args.params = None;
            let spec = build_spec(&read_args, vec![Scheme::DqlcAnalytic])?;
            if spec.rho.len() != 1 || spec.snr_db.len() != 1 {
                bail!("dqlc-opt expects a single rho and a single snr value");
            }
            let rows = sweep(&spec)?;
            let row = &rows[0];
            if let Some(err) = &row.error {
                bail!("optimization failed: {err}");
            }
            if let Some(path) = &args.params {
                // reconstruct the parameter set from the row fields
                let params = dqlc_core::DqlcParams {
                    m: 3,
                    delta: vec![row.delta1.unwrap(), row.delta2.unwrap()],
                    nq: vec![row.nq2.unwrap()],
                    alpha: vec![1.0, row.alpha2.unwrap(), row.alpha3.unwrap()],
                    kappa_m: row.kappa3.unwrap(),
                    beta: row.beta.unwrap(),
                    xi: row.xi.unwrap(),
                    style: dqlc_core::QuantizerStyle::Midrise,
                };
                std::fs::write(path, params_to_kv(&params))
                    .with_context(|| format!("writing {}", path.display()))?;
            }
            emit(&args, &rows)
        }
        Command::DqlcSim(_) => {
            let spec = build_spec(&args, vec![Scheme::DqlcAnalytic, Scheme::DqlcSim])?;
            emit(&args, &sweep(&spec)?)
        }
        Command::Sweep(_) => {
            let spec = build_spec(
                &args,
                vec![Scheme::Bound, Scheme::Uncoded, Scheme::DqlcAnalytic, Scheme::DqlcSim],
            )?;
            emit(&args, &sweep(&spec)?)
        }
        Command::LossCurve(_) => {
            let rho = match &args.rho {
                Some(s) => {
                    let list = parse_rho_list(s)?;
                    if list.len() != 1 {
                        bail!("loss-curve expects a single rho");
                    }
                    list[0]
                }
                None => 0.0,
            };
            let snr_db = match &args.snr_db {
                Some(s) => {
                    let grid = parse_snr_grid(s)?;
                    if grid.len() != 1 {
                        bail!("loss-curve expects a single snr value");
                    }
                    grid[0]
                }
                None => 100.0,
            };
            let m_max = args.m.unwrap_or(20);
            emit(&args, &loss_curve(rho, snr_db, m_max)?)
        }
    }
}
