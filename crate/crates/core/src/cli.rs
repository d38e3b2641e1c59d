//! Command-line driver: experiment grids with CSV or JSON output.
//!
//! Every output carries the tool version, the seed and the resolved
//! configuration, and ends with a pass/fail summary. Results are ordered by
//! grid index before writing, so the bytes do not depend on `--jobs`.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::algebra::{TracialAlgebra, DEFAULT_DIM_CAP};
use crate::counterexample::{chain_verify, tn_bounds_check, vk_recursion_check_with_cap};
use crate::ergodic::{unitary_approx_check, PhaseConvention};
use crate::error::{Error, Result};
use crate::rearrangement::{
    au_obstruction_report, corank_budget, growth_experiment, random_projection_of_corank, DEFAULT_BUDGET,
};
use crate::schatten::PExponent;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Parser)]
#[command(
    name = "ncmart",
    version,
    about = "Finite-dimensional experiments on noncommutative martingales"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Comma-separated matrix sizes.
    #[arg(long, global = true, value_delimiter = ',')]
    pub n_list: Option<Vec<usize>>,
    /// Comma-separated exponents.
    #[arg(long, global = true, value_delimiter = ',')]
    pub p_list: Option<Vec<f64>>,
    /// Corank budget t.
    #[arg(long, global = true)]
    pub t: Option<f64>,
    /// Objective evaluations per search.
    #[arg(long, global = true)]
    pub budget: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true, env = "NCMART_JOBS")]
    pub jobs: Option<usize>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// Output file; standard output when absent.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Largest matrix dimension any command may build.
    #[arg(long, global = true)]
    pub dim_cap: Option<usize>,
    /// Random trials per grid point.
    #[arg(long, global = true)]
    pub trials: Option<usize>,
    /// Largest N for the obstruction report.
    #[arg(long, global = true)]
    pub n_max: Option<usize>,
    /// Comma-separated K values for the unitary sweep.
    #[arg(long, global = true, value_delimiter = ',')]
    pub k_list: Option<Vec<u64>>,
    /// File of `key = value` lines; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Norm bounds for the triangular matrices T_n.
    TnBounds,
    /// Growth of the maximal rearrangement of (E_n X_N).
    Mu,
    /// The chain of estimates on random projections.
    Chain,
    /// Certified lower bounds that diverge with N.
    Obstruction,
    /// Averages of conjugation by a diagonal unitary.
    Ergodic,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::TnBounds => "tn-bounds",
            Command::Mu => "mu",
            Command::Chain => "chain",
            Command::Obstruction => "obstruction",
            Command::Ergodic => "ergodic",
        }
    }
}

/// The resolved parameters of one run; echoed verbatim into the output.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub command: String,
    pub n_list: Vec<usize>,
    pub p_list: Vec<f64>,
    pub t: f64,
    pub budget: usize,
    pub seed: u64,
    pub trials: usize,
    pub n_max: usize,
    pub k_list: Vec<u64>,
    pub dim_cap: usize,
}

/// Parse `key = value` lines; `#` starts a comment.
pub fn parse_config_file(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::OutOfRange(format!("config line {}: expected key = value", i + 1)))?;
        map.insert(k.trim().replace('_', "-"), v.trim().to_string());
    }
    Ok(map)
}

fn parse_one<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::OutOfRange(format!("config key {key}: cannot parse {v:?}")))
}

fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',').map(|s| parse_one(key, s.trim())).collect()
}

struct Layer {
    n_list: Option<Vec<usize>>,
    p_list: Option<Vec<f64>>,
    t: Option<f64>,
    budget: Option<usize>,
    seed: Option<u64>,
    jobs: Option<usize>,
    format: Option<Format>,
    out: Option<PathBuf>,
    dim_cap: Option<usize>,
    trials: Option<usize>,
    n_max: Option<usize>,
    k_list: Option<Vec<u64>>,
}

fn layer_from_file(map: &BTreeMap<String, String>) -> Result<Layer> {
    let mut layer = Layer {
        n_list: None,
        p_list: None,
        t: None,
        budget: None,
        seed: None,
        jobs: None,
        format: None,
        out: None,
        dim_cap: None,
        trials: None,
        n_max: None,
        k_list: None,
    };
    for (k, v) in map {
        match k.as_str() {
            "n-list" => layer.n_list = Some(parse_list(k, v)?),
            "p-list" => layer.p_list = Some(parse_list(k, v)?),
            "t" => layer.t = Some(parse_one(k, v)?),
            "budget" => layer.budget = Some(parse_one(k, v)?),
            "seed" => layer.seed = Some(parse_one(k, v)?),
            "jobs" => layer.jobs = Some(parse_one(k, v)?),
            "format" => {
                layer.format = Some(match v.as_str() {
                    "csv" => Format::Csv,
                    "json" => Format::Json,
                    _ => return Err(Error::OutOfRange(format!("unknown format {v:?}"))),
                })
            }
            "out" => layer.out = Some(PathBuf::from(v)),
            "dim-cap" => layer.dim_cap = Some(parse_one(k, v)?),
            "trials" => layer.trials = Some(parse_one(k, v)?),
            "n-max" => layer.n_max = Some(parse_one(k, v)?),
            "k-list" => layer.k_list = Some(parse_list(k, v)?),
            other => return Err(Error::OutOfRange(format!("unknown config key {other:?}"))),
        }
    }
    Ok(layer)
}

struct Resolved {
    config: ExperimentConfig,
    jobs: Option<usize>,
    format: Format,
    out: Option<PathBuf>,
}

fn resolve(cli: &Cli) -> Result<Resolved> {
    let file = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::OutOfRange(format!("cannot read {}: {e}", path.display())))?;
            layer_from_file(&parse_config_file(&text)?)?
        }
        None => layer_from_file(&BTreeMap::new())?,
    };
    let cmd = cli.command;
    let default_n: Vec<usize> = match cmd {
        Command::TnBounds => (1..=64).collect(),
        Command::Mu => vec![8, 16, 32],
        Command::Chain => vec![8],
        Command::Obstruction => vec![],
        Command::Ergodic => vec![2, 3],
    };
    let default_p: Vec<f64> = match cmd {
        Command::TnBounds => vec![0.1, 0.25, 0.4, 0.49],
        Command::Mu | Command::Chain => vec![0.25],
        Command::Obstruction | Command::Ergodic => vec![1.0],
    };
    let default_t = match cmd {
        Command::Mu => 0.1,
        Command::Chain => 0.125,
        _ => 1e-3,
    };
    let default_trials = match cmd {
        Command::Chain => 50,
        _ => 100,
    };
    let config = ExperimentConfig {
        command: cmd.name().to_string(),
        n_list: cli.n_list.clone().or(file.n_list).unwrap_or(default_n),
        p_list: cli.p_list.clone().or(file.p_list).unwrap_or(default_p),
        t: cli.t.or(file.t).unwrap_or(default_t),
        budget: cli.budget.or(file.budget).unwrap_or(DEFAULT_BUDGET),
        seed: cli.seed.or(file.seed).unwrap_or(0),
        trials: cli.trials.or(file.trials).unwrap_or(default_trials),
        n_max: cli.n_max.or(file.n_max).unwrap_or(20),
        k_list: cli
            .k_list
            .clone()
            .or(file.k_list)
            .unwrap_or_else(|| (1..=10).map(|i| 1u64 << i).collect()),
        dim_cap: cli.dim_cap.or(file.dim_cap).unwrap_or(DEFAULT_DIM_CAP),
    };
    Ok(Resolved {
        config,
        jobs: cli.jobs.or(file.jobs),
        format: cli.format.or(file.format).unwrap_or(Format::Csv),
        out: cli.out.clone().or(file.out),
    })
}

/// Rows, a summary object and the overall verdict of one command.
pub struct Outcome {
    pub header: Vec<&'static str>,
    pub rows: Vec<Value>,
    pub summary: Value,
    pub passed: bool,
}

fn check_cap(dim: usize, cap: usize) -> Result<()> {
    if dim > cap {
        Err(Error::DimensionCap { dim, cap })
    } else {
        Ok(())
    }
}

fn first_p(cfg: &ExperimentConfig) -> Result<f64> {
    cfg.p_list
        .first()
        .copied()
        .ok_or_else(|| Error::OutOfRange("--p-list is empty".into()))
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("plain data serializes")
}

pub fn cmd_tn_bounds(cfg: &ExperimentConfig) -> Result<Outcome> {
    let n_max = cfg.n_list.iter().copied().max().unwrap_or(1);
    check_cap(n_max, cfg.dim_cap)?;
    let grid: Vec<(usize, f64)> = cfg
        .n_list
        .iter()
        .flat_map(|&n| cfg.p_list.iter().map(move |&p| (n, p)))
        .collect();
    let reports = grid
        .par_iter()
        .map(|&(n, p)| tn_bounds_check(n, p))
        .collect::<Result<Vec<_>>>()?;
    let kmax = usize::BITS as usize - 1 - n_max.leading_zeros() as usize;
    let vk = cfg
        .p_list
        .par_iter()
        .map(|&p| vk_recursion_check_with_cap(kmax, p, cfg.dim_cap))
        .collect::<Result<Vec<_>>>()?;
    let failed = reports.iter().filter(|r| !r.holds).count();
    let vk_ok = vk.iter().all(|r| r.holds);
    Ok(Outcome {
        header: vec!["n", "p", "lower", "value", "upper", "holds"],
        rows: reports.iter().map(to_value).collect(),
        summary: json!({
            "rows": reports.len(),
            "failed": failed,
            "vk_kmax": kmax,
            "vk": vk.iter().map(|r| json!({"p": r.p, "v": r.v, "bound": r.bound, "holds": r.holds})).collect::<Vec<_>>(),
        }),
        passed: failed == 0 && vk_ok,
    })
}

pub fn cmd_mu(cfg: &ExperimentConfig) -> Result<Outcome> {
    let n_max = cfg.n_list.iter().copied().max().unwrap_or(1);
    check_cap(n_max, cfg.dim_cap)?;
    let report = growth_experiment(first_p(cfg)?, cfg.t, &cfg.n_list, cfg.budget, cfg.seed)?;
    let passed = report.ordering_holds();
    Ok(Outcome {
        header: vec![
            "n",
            "corank",
            "certified",
            "certificate_applies",
            "searched",
            "diagonal",
            "evaluations",
            "ordering_holds",
        ],
        rows: report.rows.iter().map(to_value).collect(),
        summary: json!({
            "slope": report.slope,
            "p": report.p,
            "t": report.t,
            "t_prime": report.t_prime,
            "delta": report.delta,
            "ordering_holds": passed,
        }),
        passed,
    })
}

#[derive(Serialize)]
struct ChainRow {
    n: usize,
    trial: usize,
    corank: f64,
    m: f64,
    norm_a: f64,
    lower_a: f64,
    norm_b: f64,
    upper_b: f64,
    norm_c: f64,
    upper_c: f64,
    decomposition_error: f64,
    implied_applies: bool,
    holds_a: bool,
    holds_b: bool,
    holds_c: bool,
    holds_triangle: bool,
    holds_decomposition: bool,
    holds_implied: bool,
    passed: bool,
}

pub fn cmd_chain(cfg: &ExperimentConfig) -> Result<Outcome> {
    let p = first_p(cfg)?;
    for &n in &cfg.n_list {
        check_cap(n * n, cfg.dim_cap)?;
    }
    let grid: Vec<(usize, usize)> = cfg
        .n_list
        .iter()
        .flat_map(|&n| (0..cfg.trials).map(move |k| (n, k)))
        .collect();
    let rows = grid
        .par_iter()
        .map(|&(n, trial)| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ ((n as u64) << 32) ^ trial as u64);
            let alg = TracialAlgebra::normalized(n);
            let e = random_projection_of_corank(alg, corank_budget(n, cfg.t), &mut rng)?;
            let r = chain_verify(n, p, cfg.t, &e)?;
            Ok(ChainRow {
                n,
                trial,
                corank: r.corank,
                m: r.m,
                norm_a: r.norm_a,
                lower_a: r.lower_a,
                norm_b: r.norm_b,
                upper_b: r.upper_b,
                norm_c: r.norm_c,
                upper_c: r.upper_c,
                decomposition_error: r.decomposition_error,
                implied_applies: r.implied_applies,
                holds_a: r.holds_a,
                holds_b: r.holds_b,
                holds_c: r.holds_c,
                holds_triangle: r.holds_triangle,
                holds_decomposition: r.holds_decomposition,
                holds_implied: r.holds_implied,
                passed: r.passed(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let failed = rows.iter().filter(|r| !r.passed).count();
    Ok(Outcome {
        header: vec![
            "n",
            "trial",
            "corank",
            "m",
            "norm_a",
            "lower_a",
            "norm_b",
            "upper_b",
            "norm_c",
            "upper_c",
            "decomposition_error",
            "implied_applies",
            "holds_a",
            "holds_b",
            "holds_c",
            "holds_triangle",
            "holds_decomposition",
            "holds_implied",
            "passed",
        ],
        rows: rows.iter().map(to_value).collect(),
        summary: json!({ "rows": rows.len(), "failed": failed, "p": p, "t": cfg.t }),
        passed: failed == 0,
    })
}

#[derive(Serialize)]
struct ObstructionCsvRow {
    p: f64,
    n: usize,
    ln_bound: f64,
    bound: f64,
}

pub fn cmd_obstruction(cfg: &ExperimentConfig) -> Result<Outcome> {
    let reports = cfg
        .p_list
        .iter()
        .map(|&p| au_obstruction_report(p, cfg.t, cfg.n_max))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| match e {
            Error::InvalidExponent(p) => Error::OutOfRange(format!(
                "p = {p} is outside [1, 2): the exponent 1/p - 1/2 must be positive for the bounds to diverge"
            )),
            other => other,
        })?;
    let mut rows = Vec::new();
    for r in &reports {
        for row in &r.rows {
            rows.push(to_value(&ObstructionCsvRow {
                p: r.p,
                n: row.n,
                ln_bound: row.ln_bound,
                bound: row.bound,
            }));
        }
    }
    let passed = reports.iter().all(|r| r.diverges);
    Ok(Outcome {
        header: vec!["p", "n", "ln_bound", "bound"],
        rows,
        summary: json!({
            "reports": reports.iter().map(|r| json!({
                "p": r.p,
                "exponent": r.exponent,
                "delta": r.delta,
                "t_prime": r.t_prime,
                "certificate_applies": r.certificate_applies,
                "increasing_from": r.increasing_from,
                "diverges": r.diverges,
                "conclusion": r.conclusion,
            })).collect::<Vec<_>>(),
        }),
        passed,
    })
}

#[derive(Serialize)]
struct ErgodicRow {
    n: usize,
    k: u64,
    worst_ratio: f64,
    holds: bool,
    distance_to_identity: f64,
    distance_target: f64,
}

pub fn cmd_ergodic(cfg: &ExperimentConfig) -> Result<Outcome> {
    let p = PExponent::new(first_p(cfg)?)?;
    let mut rows = Vec::new();
    let mut per_n = Vec::new();
    for &n in &cfg.n_list {
        check_cap(n, cfg.dim_cap)?;
        let r = unitary_approx_check(n, &cfg.k_list, p, cfg.trials, cfg.seed, PhaseConvention::Shifted)?;
        for row in &r.rows {
            rows.push(to_value(&ErgodicRow {
                n,
                k: row.k,
                worst_ratio: row.worst_ratio,
                holds: row.holds,
                distance_to_identity: row.distance_to_identity,
                distance_target: r.distance_target,
            }));
        }
        per_n.push(json!({ "n": n, "minimal_k": r.minimal_k, "convention": r.convention }));
    }
    let passed = per_n.iter().all(|v| !v["minimal_k"].is_null());
    Ok(Outcome {
        header: vec![
            "n",
            "k",
            "worst_ratio",
            "holds",
            "distance_to_identity",
            "distance_target",
        ],
        rows,
        summary: json!({ "p": p.value(), "per_n": per_n }),
        passed,
    })
}

pub fn run_command(cfg: &ExperimentConfig, cmd: Command) -> Result<Outcome> {
    match cmd {
        Command::TnBounds => cmd_tn_bounds(cfg),
        Command::Mu => cmd_mu(cfg),
        Command::Chain => cmd_chain(cfg),
        Command::Obstruction => cmd_obstruction(cfg),
        Command::Ergodic => cmd_ergodic(cfg),
    }
}

fn csv_field(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Render an outcome; the bytes depend only on the configuration.
pub fn render(cfg: &ExperimentConfig, outcome: &Outcome, format: Format) -> Result<Vec<u8>> {
    let status = if outcome.passed { "PASS" } else { "FAIL" };
    match format {
        Format::Json => {
            let doc = json!({
                "version": VERSION,
                "config": cfg,
                "rows": outcome.rows,
                "summary": {
                    "status": status,
                    "details": outcome.summary,
                },
            });
            let mut bytes = serde_json::to_vec_pretty(&doc).expect("json");
            bytes.push(b'\n');
            Ok(bytes)
        }
        Format::Csv => {
            let mut out = Vec::new();
            writeln!(out, "# ncmart {VERSION}").expect("vec write");
            writeln!(out, "# seed = {}", cfg.seed).expect("vec write");
            writeln!(out, "# config = {}", serde_json::to_string(cfg).expect("json")).expect("vec write");
            {
                let mut w = csv::Writer::from_writer(&mut out);
                w.write_record(&outcome.header)
                    .map_err(|e| Error::OutOfRange(format!("csv: {e}")))?;
                for row in &outcome.rows {
                    let rec: Vec<String> = outcome.header.iter().map(|h| csv_field(&row[*h])).collect();
                    w.write_record(&rec)
                        .map_err(|e| Error::OutOfRange(format!("csv: {e}")))?;
                }
                w.flush().map_err(|e| Error::OutOfRange(format!("csv: {e}")))?;
            }
            writeln!(out, "# summary = {}", outcome.summary).expect("vec write");
            writeln!(out, "# status = {status}").expect("vec write");
            Ok(out)
        }
    }
}

/// Parse arguments, run, write the output; returns the process exit code
/// (0 iff every assertion passed, 1 on failed assertions, 2 on errors).
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run_cli(&cli) {
        Ok(passed) => {
            if passed {
                0
            } else {
                1
            }
        }
        Err(e) => {
            eprintln!("ncmart {}: {e}", cli.command.name());
            2
        }
    }
}

fn run_cli(cli: &Cli) -> Result<bool> {
    let resolved = resolve(cli)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(resolved.jobs.unwrap_or(0))
        .build()
        .map_err(|e| Error::OutOfRange(format!("thread pool: {e}")))?;
    let outcome = pool.install(|| run_command(&resolved.config, cli.command))?;
    let bytes = render(&resolved.config, &outcome, resolved.format)?;
    match &resolved.out {
        Some(path) => {
            fs::write(path, &bytes).map_err(|e| Error::OutOfRange(format!("cannot write {}: {e}", path.display())))?
        }
        None => std::io::stdout()
            .write_all(&bytes)
            .map_err(|e| Error::OutOfRange(format!("stdout: {e}")))?,
    }
    Ok(outcome.passed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_file_parsing() {
        let map = parse_config_file("# grid\nn_list = 4, 8\nt=0.25 # budget\n\nseed = 3\n").unwrap();
        assert_eq!(map["n-list"], "4, 8");
        let layer = layer_from_file(&map).unwrap();
        assert_eq!(layer.n_list, Some(vec![4, 8]));
        assert_eq!(layer.t, Some(0.25));
        assert!(parse_config_file("no equals sign").is_err());
        assert!(layer_from_file(&parse_config_file("colour = red").unwrap()).is_err());
    }

    #[test]
    fn flags_override_file() {
        let dir = std::env::temp_dir().join(format!("ncmart-cfg-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("grid.conf");
        fs::write(&path, "seed = 5\nt = 0.5\n").unwrap();
        let cli = Cli::try_parse_from(["ncmart", "chain", "--config", path.to_str().unwrap(), "--t", "0.25"]).unwrap();
        let r = resolve(&cli).unwrap();
        assert_eq!(r.config.seed, 5);
        assert_eq!(r.config.t, 0.25);
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn csv_rows_match_grid() {
        let cli = Cli::try_parse_from(["ncmart", "tn-bounds", "--n-list", "1,2,3", "--p-list", "0.25,0.4"]).unwrap();
        let r = resolve(&cli).unwrap();
        let outcome = run_command(&r.config, Command::TnBounds).unwrap();
        assert_eq!(outcome.rows.len(), 6);
        assert!(outcome.passed);
        let text = String::from_utf8(render(&r.config, &outcome, Format::Csv).unwrap()).unwrap();
        let data: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(data.len(), 7);
        assert!(data[1].starts_with("1,0.25,"));
        assert!(text.ends_with("# status = PASS\n"));
    }
}
