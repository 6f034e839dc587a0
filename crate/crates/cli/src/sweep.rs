//! Grid sweeps: every combination of the grid values runs as an independent
//! in-process job with its own output directory.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use chrono::Utc;
use clap::Parser;
use serde::Deserialize;
use serde_json::{Map, Value};

use crate::args::{Cli, Command, SweepArgs};
use crate::commands::{run, Metrics};
use crate::error::CliError;
use crate::output::{ensure_dir, fmt_num, sha256_hex, timestamp, InputInfo, Manifest, Table};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Subcommand to run in every cell.
    pub command: String,
    /// Flags shared by every cell, without the leading `--`.
    #[serde(default)]
    pub args: Map<String, Value>,
    /// Flag name to the list of values it takes.
    pub grid: Map<String, Value>,
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

fn default_out() -> PathBuf {
    PathBuf::from("sweep")
}

/// Environment variable capping the number of concurrent cells.
pub const THREADS_VAR: &str = "ZMDP_THREADS";

fn flag_args(key: &str, value: &Value) -> Result<Vec<String>, CliError> {
    let flag = format!("--{}", key.replace('_', "-"));
    let scalar = |v: &Value| -> Result<String, CliError> {
        match v {
            Value::String(s) => Ok(s.clone()),
            Value::Number(n) => Ok(n.to_string()),
            _ => Err(CliError::invalid(format!(
                "`{key}`: expected a string or number, got {v}"
            ))),
        }
    };
    match value {
        Value::Bool(true) => Ok(vec![flag]),
        Value::Bool(false) | Value::Null => Ok(vec![]),
        Value::Array(items) => items
            .iter()
            .map(|v| Ok(format!("{flag}={}", scalar(v)?)))
            .collect(),
        v => Ok(vec![format!("{flag}={}", scalar(v)?)]),
    }
}

fn render(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Number(n) => n.as_f64().map(fmt_num).unwrap_or_else(|| n.to_string()),
        other => other.to_string(),
    }
}

/// Cartesian product of the grid axes, first axis slowest.
fn cells(grid: &[(String, Vec<Value>)]) -> Vec<Vec<Value>> {
    grid.iter().fold(vec![vec![]], |acc, (_, values)| {
        acc.iter()
            .flat_map(|prefix| {
                values.iter().map(move |v| {
                    let mut cell = prefix.clone();
                    cell.push(v.clone());
                    cell
                })
            })
            .collect()
    })
}

fn thread_count(jobs: usize) -> Result<usize, CliError> {
    let cap = match std::env::var(THREADS_VAR) {
        Ok(s) => s.parse::<usize>().ok().filter(|&n| n >= 1).ok_or_else(|| {
            CliError::invalid(format!("{THREADS_VAR} must be a positive integer"))
        })?,
        Err(_) => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    Ok(cap.min(jobs).max(1))
}

struct Summary {
    mean: f64,
    median: f64,
    stddev: f64,
}

/// Mean, median and sample standard deviation (0 for a single value).
fn summarize(mut xs: Vec<f64>) -> Summary {
    let n = xs.len();
    if n == 0 {
        return Summary {
            mean: f64::NAN,
            median: f64::NAN,
            stddev: f64::NAN,
        };
    }
    xs.sort_by(f64::total_cmp);
    let mean = xs.iter().sum::<f64>() / n as f64;
    let median = if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    };
    let stddev = if n > 1 {
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Summary {
        mean,
        median,
        stddev,
    }
}

pub fn sweep(a: &SweepArgs, argv: &[String]) -> Result<Metrics, CliError> {
    let text = fs::read_to_string(&a.config).map_err(|e| CliError::io(&a.config, e))?;
    let config: SweepConfig = serde_json::from_str(&text)
        .map_err(|e| CliError::invalid(format!("{}: {e}", a.config.display())))?;
    if config.command == "sweep" {
        return Err(CliError::invalid("a sweep cannot run sweeps"));
    }
    let mut grid = Vec::new();
    for (k, v) in &config.grid {
        if k == "out" {
            return Err(CliError::invalid(
                "set `out` at the top level of the sweep config",
            ));
        }
        match v {
            Value::Array(values) if !values.is_empty() => grid.push((k.clone(), values.clone())),
            Value::Array(_) => return Err(CliError::invalid(format!("grid axis `{k}` is empty"))),
            _ => return Err(CliError::invalid(format!("grid axis `{k}` must be a list"))),
        }
    }
    if grid.is_empty() {
        return Err(CliError::invalid("the grid is empty"));
    }
    let mut base = vec!["zmdp".to_string(), config.command.clone()];
    for (k, v) in &config.args {
        if k == "out" {
            return Err(CliError::invalid(
                "set `out` at the top level of the sweep config",
            ));
        }
        base.extend(flag_args(k, v)?);
    }
    let out = a.out.clone().unwrap_or_else(|| config.out.clone());
    ensure_dir(&out)?;
    let started = Utc::now();

    let cells = cells(&grid);
    let mut jobs = Vec::new();
    for (i, values) in cells.iter().enumerate() {
        let mut cell_argv = base.clone();
        for ((k, _), v) in grid.iter().zip(values) {
            cell_argv.extend(flag_args(k, v)?);
        }
        cell_argv.push(format!("--out={}", cell_dir(&out, i).display()));
        jobs.push(cell_argv);
    }

    let results: Vec<Mutex<Option<Result<Metrics, CliError>>>> =
        jobs.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| -> Result<(), CliError> {
        for _ in 0..thread_count(jobs.len())? {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(job) = jobs.get(i) else { break };
                let result = run_cell(job);
                *results[i].lock().expect("result slot") = Some(result);
            });
        }
        Ok(())
    })?;
    let results: Vec<Result<Metrics, CliError>> = results
        .into_iter()
        .map(|m| {
            m.into_inner()
                .expect("result slot")
                .expect("every cell ran")
        })
        .collect();

    let metric_names: BTreeSet<String> = results
        .iter()
        .filter_map(|r| r.as_ref().ok())
        .flat_map(|m| m.keys().cloned())
        .collect();
    let mut header = vec!["cell".to_string(), "status".to_string()];
    header.extend(grid.iter().map(|(k, _)| k.clone()));
    header.extend(metric_names.iter().cloned());
    for m in &metric_names {
        header.extend([
            format!("{m}_mean"),
            format!("{m}_median"),
            format!("{m}_stddev"),
        ]);
    }
    let width = header.len();
    let mut table = Table::with_header(header);
    let mut failed = Vec::new();
    for (i, (values, result)) in cells.iter().zip(&results).enumerate() {
        let mut row = vec![format!("cell_{i:03}")];
        match result {
            Ok(_) => row.push("ok".into()),
            Err(e) => {
                row.push(format!("failed ({})", e.exit_code()));
                failed.push(format!("cell_{i:03}: {e}"));
            }
        }
        row.extend(values.iter().map(render));
        for m in &metric_names {
            let v = result.as_ref().ok().and_then(|r| r.get(m));
            row.push(v.map(|x| fmt_num(*x)).unwrap_or_default());
        }
        row.resize(width, String::new());
        table.raw_row(row);
    }
    let mut aggregate = vec![
        "aggregate".to_string(),
        format!("{} ok", results.len() - failed.len()),
    ];
    aggregate.resize(2 + grid.len() + metric_names.len(), String::new());
    let mut metrics = Metrics::new();
    for m in &metric_names {
        let xs: Vec<f64> = results
            .iter()
            .filter_map(|r| r.as_ref().ok().and_then(|r| r.get(m)).copied())
            .collect();
        let s = summarize(xs);
        for (suffix, v) in [("mean", s.mean), ("median", s.median), ("stddev", s.stddev)] {
            aggregate.push(fmt_num(v));
            metrics.insert(format!("{m}_{suffix}"), v);
        }
    }
    table.raw_row(aggregate);
    table.write(&out.join("sweep.csv"))?;

    let seeds: Vec<u64> = grid
        .iter()
        .filter(|(k, _)| k == "seed")
        .flat_map(|(_, vs)| vs.iter().filter_map(Value::as_u64))
        .collect();
    Manifest {
        tool: "zmdp",
        version: env!("CARGO_PKG_VERSION"),
        command_line: argv.to_vec(),
        command: "sweep".into(),
        hyperparams: serde_json::from_str(&text).expect("parsed above"),
        seeds,
        input: Some(InputInfo {
            source: "file".into(),
            name: a.config.display().to_string(),
            sha256: sha256_hex(text.as_bytes()),
        }),
        reward_shift: None,
        outputs: vec!["sweep.csv".into()],
        started_at: timestamp(started),
        finished_at: timestamp(Utc::now()),
    }
    .write(&out)?;

    if !failed.is_empty() {
        for f in &failed {
            eprintln!("{f}");
        }
        return Err(CliError::Numerical(format!(
            "{} of {} sweep cells failed",
            failed.len(),
            results.len()
        )));
    }
    Ok(metrics)
}

fn run_cell(argv: &[String]) -> Result<Metrics, CliError> {
    let cli = Cli::try_parse_from(argv)
        .map_err(|e| CliError::invalid(e.to_string().trim().to_string()))?;
    if matches!(cli.command, Command::Sweep(_)) {
        return Err(CliError::invalid("a sweep cannot run sweeps"));
    }
    run(&cli.command, argv)
}

/// Cell output directory for index `i`.
pub fn cell_dir(out: &Path, i: usize) -> PathBuf {
    out.join(format!("cell_{i:03}"))
}
