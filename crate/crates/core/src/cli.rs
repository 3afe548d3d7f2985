//! Command-line front end. Every subcommand prints exactly one JSON record
//! to stdout; the isolated top-level `timestamp` key is the only
//! nondeterministic field, so records are byte-comparable after dropping
//! it. Invalid input exits 2 (as do usage errors), runtime failures exit 3.

use crate::branching::{build_pool, estimate_theta, read_pool, write_pool, TreePool};
use crate::experiments::{
    append_jsonl, exact_small_oracle, run_conditional, run_coupling_check, run_lln,
    run_planted_hubs, ExperimentConfig, SurvivalPoint, YMode,
};
use crate::ldp::{
    estimate_c, hubs, ldp_quantities, phi_threshold, upper_tail_prediction, HubWeights,
};
use crate::model::ModelParams;
use crate::{Error, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::{Map, Value};
use std::io::{BufWriter, Write as _};
use std::path::PathBuf;

const PLOT_HEADER: &str = "s,empirical_survival,C_ratio";

#[derive(Parser)]
#[command(
    name = "irg-ldp",
    version,
    about = "Giant-component upper-tail toolkit for heavy-tailed inhomogeneous random graphs"
)]
pub struct Cli {
    /// Cap the worker thread count. Results are identical for any value.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

/// Model parameters shared by the subcommands that start from scratch.
#[derive(Args)]
pub struct ParamArgs {
    /// Weight tail exponent; must exceed 1.
    #[arg(long)]
    pub alpha: f64,
    /// Kernel interpolation exponent; must stay below 2 * alpha - 1.
    #[arg(long)]
    pub sigma: f64,
    /// Edge retention probability in (0, 1].
    #[arg(long)]
    pub q: f64,
    /// Lower endpoint of the weight law.
    #[arg(long, default_value_t = 1.0)]
    pub w_min: f64,
}

impl ParamArgs {
    fn build(&self) -> Result<ModelParams> {
        ModelParams::new(self.alpha, self.sigma, self.q, self.w_min)
    }
}

#[derive(Subcommand)]
pub enum Command {
    /// Simulate a branching-process tree pool and write it to disk.
    Pool {
        #[command(flatten)]
        params: ParamArgs,
        /// Number of trees to simulate.
        #[arg(long)]
        trees: usize,
        /// Trees are censored once they reach this many particles.
        #[arg(long, default_value_t = 10_000)]
        size_cap: u32,
        /// Keep per-particle weights for trees up to this size
        /// (default: every uncensored tree).
        #[arg(long)]
        store_cap: Option<u32>,
        #[arg(long)]
        seed: u64,
        /// Pool output path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Survival probability of the pool's branching process, with a 95%
    /// interval from the censored-tree count.
    Theta {
        #[arg(long)]
        pool: PathBuf,
    },
    /// Number of planted hubs needed to push the giant component above
    /// rho n.
    Hubs {
        #[arg(long)]
        pool: PathBuf,
        #[arg(long)]
        rho: f64,
    },
    /// Leading constant of the upper-tail law at one rho.
    Constant {
        #[arg(long)]
        pool: PathBuf,
        #[arg(long)]
        rho: f64,
        #[arg(long, default_value_t = 100_000)]
        draws: usize,
        #[arg(long)]
        seed: u64,
        /// Hub floor override; skips the floor search.
        #[arg(long)]
        phi: Option<f64>,
    },
    /// Rate, hub count, hub floor, constant, and (with --n) the finite-n
    /// tail prediction, in one record.
    Rate {
        #[arg(long)]
        pool: PathBuf,
        #[arg(long)]
        rho: f64,
        /// Graph size for the tail prediction.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, default_value_t = 100_000)]
        draws: usize,
        #[arg(long)]
        seed: u64,
        /// Hub floor override; skips the floor search.
        #[arg(long)]
        phi: Option<f64>,
    },
    /// Natural-graph replications compared against the pool's giant
    /// fraction and small-component densities.
    Lln {
        #[arg(long)]
        pool: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        reps: usize,
        /// Success level recorded per replication.
        #[arg(long, default_value_t = 0.5)]
        rho: f64,
        #[arg(long)]
        seed: u64,
        /// Largest component size tracked per record.
        #[arg(long, default_value_t = 5)]
        ell_max: u32,
        /// Append per-replication records to this JSONL file.
        #[arg(long)]
        runs_out: Option<PathBuf>,
    },
    /// Planted-hub replications: how often the giant component exceeds
    /// rho n.
    Plant {
        #[arg(long)]
        pool: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        reps: usize,
        #[arg(long)]
        rho: f64,
        /// Hub vectors are sampled in the target set at level rho + margin.
        #[arg(long, default_value_t = 0.05)]
        margin: f64,
        /// Number of hubs to plant (0 plants none).
        #[arg(long)]
        h: u32,
        #[arg(long)]
        seed: u64,
        /// Fixed hub vector (units of n) instead of sampling.
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        hub_weights: Option<Vec<f64>>,
        /// Conditioning floor for --hub-weights.
        #[arg(long)]
        floor: Option<f64>,
        /// Append per-replication records to this JSONL file.
        #[arg(long)]
        runs_out: Option<PathBuf>,
    },
    /// Hub vectors conditioned on the level-rho target set: the realized
    /// giant-fraction law against the predicted constant curve.
    Conditional {
        #[arg(long)]
        pool: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        reps: usize,
        #[arg(long)]
        rho: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 16)]
        grid_points: usize,
        /// Importance-sampling draws behind the constant curve.
        #[arg(long, default_value_t = 100_000)]
        draws: usize,
        #[arg(long, default_value_t = 5)]
        ell_max: u32,
        /// Append per-replication records to this JSONL file.
        #[arg(long)]
        runs_out: Option<PathBuf>,
        /// Write the survival comparison as CSV plot data.
        #[arg(long)]
        plot_out: Option<PathBuf>,
    },
    /// Coupled pairs of the model and its finite-type approximation:
    /// subgraph check plus edge and type-density gaps.
    Couple {
        #[arg(long)]
        pool: PathBuf,
        #[arg(long)]
        n: usize,
        /// Weight resolution of the approximation.
        #[arg(long)]
        delta: f64,
        /// Weight truncation bound of the approximation.
        #[arg(long, default_value_t = 4.0)]
        r: f64,
        #[arg(long)]
        reps: usize,
        #[arg(long)]
        seed: u64,
        /// Weight-bucket width for the type comparison.
        #[arg(long, default_value_t = 0.5)]
        eps: f64,
        #[arg(long, default_value_t = 4)]
        ell_max: u32,
    },
    /// Exact law of the largest-component size on a fixed tiny weight
    /// vector, by full edge-subset enumeration.
    Oracle {
        #[command(flatten)]
        params: ParamArgs,
        /// Vertex weights, comma separated.
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        weights: Vec<f64>,
        /// Edge-probability scale (default: the number of weights).
        #[arg(long)]
        n_model: Option<usize>,
    },
}

/// Parse the process arguments and run; returns the process exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    let outcome = match cli.threads {
        Some(0) => Err(Error::domain("threads must be >= 1")),
        Some(t) => match rayon::ThreadPoolBuilder::new().num_threads(t).build() {
            Ok(tp) => tp.install(|| execute(cli.command)),
            Err(e) => Err(Error::Estimation(format!("thread pool: {e}"))),
        },
        None => execute(cli.command),
    };
    match outcome {
        Ok(()) => 0,
        Err(e @ Error::Domain(_)) => {
            eprintln!("error: {e}");
            2
        }
        Err(e) => {
            eprintln!("error: {e}");
            3
        }
    }
}

fn unix_now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn to_map<T: serde::Serialize>(value: &T) -> Result<Map<String, Value>> {
    match serde_json::to_value(value).map_err(|e| Error::Format(format!("encode: {e}")))? {
        Value::Object(m) => Ok(m),
        _ => Err(Error::Format("record is not a JSON object".into())),
    }
}

/// Stamp schema/seed/timestamp onto a record and write it as one line.
fn write_record<W: std::io::Write>(
    out: &mut W,
    schema: &str,
    seed: Option<u64>,
    mut body: Map<String, Value>,
) -> Result<()> {
    body.insert("schema".into(), Value::from(format!("{schema}/1")));
    if let Some(s) = seed {
        body.insert("seed".into(), Value::from(s));
    }
    body.insert("timestamp".into(), Value::from(unix_now()));
    let line = serde_json::to_string(&Value::Object(body))
        .map_err(|e| Error::Format(format!("encode: {e}")))?;
    writeln!(out, "{line}")?;
    Ok(())
}

fn emit(schema: &str, seed: Option<u64>, body: Map<String, Value>) -> Result<()> {
    write_record(&mut std::io::stdout().lock(), schema, seed, body)
}

/// Write the conditional survival comparison as CSV: a comment naming the
/// quantities, the column header, then one row per grid point. Floats are
/// shortest-round-trip, so reading the file back is exact.
pub fn emit_plot_data<W: std::io::Write>(out: &mut W, points: &[SurvivalPoint]) -> Result<()> {
    writeln!(
        out,
        "# conditional giant-component law: empirical survival fraction vs \
         predicted constant ratio C_s/C_rho"
    )?;
    writeln!(out, "{PLOT_HEADER}")?;
    for p in points {
        writeln!(out, "{},{},{}", p.s, p.empirical_survival, p.predicted_ratio)?;
    }
    Ok(())
}

/// Read plot data written by [`emit_plot_data`]; comments are skipped and
/// every value round-trips exactly.
pub fn read_plot_data<R: std::io::BufRead>(input: R) -> Result<Vec<SurvivalPoint>> {
    let mut points = Vec::new();
    let mut saw_header = false;
    for line in input.lines() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !saw_header {
            if line != PLOT_HEADER {
                return Err(Error::Format(format!("unexpected plot header: {line}")));
            }
            saw_header = true;
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 3 {
            return Err(Error::Format(format!("expected 3 columns, got {}", cols.len())));
        }
        let parse = |s: &str| {
            s.parse::<f64>().map_err(|e| Error::Format(format!("bad float {s}: {e}")))
        };
        points.push(SurvivalPoint {
            s: parse(cols[0])?,
            empirical_survival: parse(cols[1])?,
            predicted_ratio: parse(cols[2])?,
        });
    }
    if !saw_header {
        return Err(Error::Format("missing plot header".into()));
    }
    Ok(points)
}

fn load_pool(path: &PathBuf) -> Result<TreePool> {
    read_pool(path)
}

fn config_for(
    pool: &TreePool,
    n: usize,
    reps: usize,
    rho: f64,
    margin: f64,
    seed: u64,
    ell_max: u32,
    grid_points: usize,
    draws: usize,
) -> ExperimentConfig {
    ExperimentConfig {
        params: pool.params,
        n,
        replications: reps,
        rho,
        margin,
        seed,
        eps: 0.5,
        r: 4.0,
        ell_max,
        grid_points,
        draws,
    }
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Pool { params, trees, size_cap, store_cap, seed, out } => {
            let params = params.build()?;
            let store = store_cap.unwrap_or(size_cap);
            let pool = build_pool(&params, trees, size_cap, store, seed)?;
            write_pool(&pool, &out)?;
            let mut body = to_map(&params)?;
            body.insert("path".into(), Value::from(out.display().to_string()));
            body.insert("trees".into(), Value::from(pool.len()));
            body.insert("size_cap".into(), Value::from(size_cap));
            body.insert("store_cap".into(), Value::from(store));
            body.insert("censored_fraction".into(), Value::from(pool.censored_fraction()));
            emit("pool", Some(seed), body)
        }
        Command::Theta { pool } => {
            let pool = load_pool(&pool)?;
            let mut body = to_map(&estimate_theta(&pool))?;
            body.insert("trees".into(), Value::from(pool.len()));
            emit("theta", Some(pool.seed), body)
        }
        Command::Hubs { pool, rho } => {
            let pool = load_pool(&pool)?;
            let hr = hubs(rho, pool.params.q, &pool)?;
            let mut body = Map::new();
            body.insert("rho".into(), Value::from(rho));
            body.insert("q".into(), Value::from(pool.params.q));
            body.insert("hubs_value".into(), Value::from(hr.value));
            body.insert("hubs_ceil".into(), Value::from(hr.ceil));
            body.insert("theta_hat".into(), Value::from(hr.theta.theta_hat));
            body.insert(
                "status".into(),
                serde_json::to_value(hr.status)
                    .map_err(|e| Error::Format(format!("encode: {e}")))?,
            );
            emit("hubs", Some(pool.seed), body)
        }
        Command::Constant { pool, rho, draws, seed, phi } => {
            let pool = load_pool(&pool)?;
            let q = pool.params.q;
            let phi = match phi {
                Some(p) if p > 0.0 && p.is_finite() => p,
                Some(p) => return Err(Error::domain(format!("bad phi override: {p}"))),
                None => {
                    let hr = hubs(rho, q, &pool)?;
                    if hr.ceil == 0 {
                        return Err(Error::domain(
                            "rho is at or below the survival threshold; no hub constant applies",
                        ));
                    }
                    phi_threshold(rho, q, hr.ceil, &pool)?
                }
            };
            let est = estimate_c(rho, q, &pool, phi, draws, seed)?;
            emit("constant", Some(seed), to_map(&est)?)
        }
        Command::Rate { pool, rho, n, draws, seed, phi } => {
            let pool = load_pool(&pool)?;
            let quantities = ldp_quantities(&pool, rho, draws, seed, phi)?;
            let mut body = to_map(&quantities)?;
            if let Some(n) = n {
                let prediction = if quantities.c_estimate.is_some() {
                    Some(upper_tail_prediction(rho, n, &pool.params, &quantities)?)
                } else {
                    None
                };
                body.insert("n".into(), Value::from(n));
                body.insert("prediction".into(), serde_json::to_value(prediction).unwrap());
            }
            emit("rate", Some(seed), body)
        }
        Command::Lln { pool, n, reps, rho, seed, ell_max, runs_out } => {
            let pool = load_pool(&pool)?;
            let cfg = config_for(&pool, n, reps, rho, 0.0, seed, ell_max, 2, 1);
            let report = run_lln(&pool, &cfg)?;
            if let Some(path) = runs_out {
                append_jsonl(&path, &report.records)?;
            }
            let mut body = to_map(&report)?;
            body.remove("records");
            body.insert("n".into(), Value::from(n));
            body.insert("replications".into(), Value::from(reps));
            body.insert("rho".into(), Value::from(rho));
            emit("lln", Some(seed), body)
        }
        Command::Plant { pool, n, reps, rho, margin, h, seed, hub_weights, floor, runs_out } => {
            let pool = load_pool(&pool)?;
            let mode = match hub_weights {
                Some(ws) => {
                    let floor = floor
                        .ok_or_else(|| Error::domain("--floor is required with --hub-weights"))?;
                    YMode::Explicit { y: HubWeights::new(ws)?, phi: floor }
                }
                None if h == 0 => YMode::None,
                None => YMode::SampleInTarget,
            };
            let cfg = config_for(&pool, n, reps, rho, margin, seed, 5, 2, 1);
            let report = run_planted_hubs(&pool, &cfg, h, &mode)?;
            if let Some(path) = runs_out {
                append_jsonl(&path, &report.records)?;
            }
            let mut body = to_map(&report)?;
            body.remove("records");
            body.insert("n".into(), Value::from(n));
            body.insert("replications".into(), Value::from(reps));
            body.insert("rho".into(), Value::from(rho));
            body.insert("margin".into(), Value::from(margin));
            emit("plant", Some(seed), body)
        }
        Command::Conditional {
            pool,
            n,
            reps,
            rho,
            seed,
            grid_points,
            draws,
            ell_max,
            runs_out,
            plot_out,
        } => {
            let pool = load_pool(&pool)?;
            let cfg = config_for(&pool, n, reps, rho, 0.0, seed, ell_max, grid_points, draws);
            let report = run_conditional(&pool, &cfg)?;
            if let Some(path) = runs_out {
                append_jsonl(&path, &report.records)?;
            }
            if let Some(path) = plot_out {
                let mut f = BufWriter::new(std::fs::File::create(path)?);
                emit_plot_data(&mut f, &report.grid)?;
                f.flush()?;
            }
            let mut body = to_map(&report)?;
            body.remove("records");
            body.insert("n".into(), Value::from(n));
            body.insert("replications".into(), Value::from(reps));
            body.insert("rho".into(), Value::from(rho));
            emit("conditional", Some(seed), body)
        }
        Command::Couple { pool, n, delta, r, reps, seed, eps, ell_max } => {
            let pool = load_pool(&pool)?;
            let report =
                run_coupling_check(&pool.params, n, delta, r, reps, seed, eps, ell_max, &pool)?;
            let mut body = to_map(&report)?;
            body.insert("n".into(), Value::from(n));
            body.insert("delta".into(), Value::from(delta));
            body.insert("r".into(), Value::from(r));
            body.insert("eps".into(), Value::from(eps));
            emit("couple", Some(seed), body)
        }
        Command::Oracle { params, weights, n_model } => {
            let params = params.build()?;
            let n_model = n_model.unwrap_or(weights.len());
            let law = exact_small_oracle(&weights, &params, n_model)?;
            let mut body = to_map(&params)?;
            body.insert("weights".into(), serde_json::to_value(&weights).unwrap());
            body.insert("n_model".into(), Value::from(n_model));
            body.insert("law".into(), serde_json::to_value(&law).unwrap());
            emit("oracle", None, body)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn argument_definitions_are_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn plot_data_round_trips_exactly() {
        let points = vec![
            SurvivalPoint { s: 0.1 + 0.2, empirical_survival: 1.0 / 3.0, predicted_ratio: 1.0 },
            SurvivalPoint {
                s: 0.7,
                empirical_survival: 5e-324,
                predicted_ratio: 1.2345678901234567e300,
            },
        ];
        let mut buf = Vec::new();
        emit_plot_data(&mut buf, &points).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with('#'), "header comment first: {text}");
        assert!(text.lines().nth(1) == Some(PLOT_HEADER));
        let back = read_plot_data(&buf[..]).unwrap();
        assert_eq!(back, points);
    }

    #[test]
    fn empty_plot_data_is_header_only() {
        let mut buf = Vec::new();
        emit_plot_data(&mut buf, &[]).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), 2);
        let back = read_plot_data(&buf[..]).unwrap();
        assert!(back.is_empty());
    }

    #[test]
    fn malformed_plot_data_is_rejected() {
        assert!(read_plot_data(&b"s,bogus\n1,2\n"[..]).is_err());
        assert!(read_plot_data(&b""[..]).is_err());
        let with_header = format!("{PLOT_HEADER}\n0.5,0.5\n");
        assert!(read_plot_data(with_header.as_bytes()).is_err());
        let bad_float = format!("{PLOT_HEADER}\n0.5,x,1\n");
        assert!(read_plot_data(bad_float.as_bytes()).is_err());
    }

    #[test]
    fn records_carry_schema_seed_and_isolated_timestamp() {
        let mut body = Map::new();
        body.insert("value".into(), Value::from(1.5));
        let mut buf = Vec::new();
        write_record(&mut buf, "demo", Some(7), body).unwrap();
        let v: Value = serde_json::from_slice(&buf).unwrap();
        let obj = v.as_object().unwrap();
        assert_eq!(obj["schema"], Value::from("demo/1"));
        assert_eq!(obj["seed"], Value::from(7));
        assert!(obj["timestamp"].is_u64());
        assert_eq!(obj["value"], Value::from(1.5));
        // dropping the one timestamp key makes records comparable
        let mut a: Map<String, Value> = obj.clone();
        a.remove("timestamp");
        assert_eq!(a.len(), 3);
    }
}
