//! Scenario runner behind the `dualpath` binary.
//!
//! ```text
//! dualpath run <config.json> [--override key=value]... [--seeds a..b]
//!              [--out dir] [--format json,csv]
//! ```
//!
//! Per seed the runner writes `metrics-<seed>.json` (and `.csv` when asked
//! for), `trace-<seed>.csv` and `linkability-<seed>.csv`. A sweep also
//! writes `summary.csv`. Exit codes: 0 success, 1 a run failed (a `FAILED`
//! file lists why), 2 bad usage or config.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde_json::{Map, Value};
use thiserror::Error;

use crate::ids::PeerId;
use crate::simnet::{linkability_analysis, run_scenario, timing_traced, ConfigError, Metrics, ScenarioConfig, Trace};

pub const ENV_OUT: &str = "DUALPATH_OUT";
pub const DEFAULT_OUT: &str = "dualpath-out";

pub const METRICS_CSV_HEADER: &str = "cycles_attempted,cycles_completed,cycles_failed,completion_fraction,\
completion_fraction_live_endpoints,attempts_launched,data_transmissions,mean_transmissions_per_cycle,\
asymmetric_seals,symmetric_seals,anonymity_set_sizes,anonymity_set_min,anonymity_set_median,\
anonymity_set_mean,timing_identified_fraction,mean_intersection_size,convergence_lag_max";

pub const LINKABILITY_CSV_HEADER: &str =
    "cycle,message,attempt,requester,provider,completed,candidates,set_size,timing_traced";

pub const SUMMARY_CSV_HEADER: &str = "seed,completion_fraction,median_anonymity_set_size";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot parse config at `{field}`: {message}")]
    Parse { field: String, message: String },
    #[error("bad override `{0}`: expected key=value")]
    Override(String),
    #[error(transparent)]
    Invalid(#[from] ConfigError),
    #[error("bad seed range `{0}`: expected a..b with a <= b")]
    Seeds(String),
    #[error("unknown report format `{0}`")]
    Format(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum ReportFormat {
    Json,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        match s.trim() {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(CliError::Format(other.to_string())),
        }
    }
}

fn set_path(root: &mut Value, key: &str, value: Value) -> Result<(), CliError> {
    let mut cur = root;
    let mut parts = key.split('.').peekable();
    while let Some(part) = parts.next() {
        if part.is_empty() {
            return Err(CliError::Override(key.to_string()));
        }
        if !cur.is_object() {
            *cur = Value::Object(Map::new());
        }
        let obj = cur.as_object_mut().expect("object");
        if parts.peek().is_none() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cur = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
    Err(CliError::Override(key.to_string()))
}

/// Applies `key=value` overrides to a JSON config. Dotted keys reach into
/// nested objects; a value that is not valid JSON is taken as a string.
pub fn apply_overrides(mut config: Value, overrides: &[String]) -> Result<Value, CliError> {
    for o in overrides {
        let (key, raw) = o.split_once('=').ok_or_else(|| CliError::Override(o.clone()))?;
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        set_path(&mut config, key.trim(), value)?;
    }
    Ok(config)
}

/// Deserializes and validates a config, naming the offending field on error.
pub fn config_from_value(value: Value) -> Result<ScenarioConfig, CliError> {
    let config: ScenarioConfig = serde_path_to_error::deserialize(value).map_err(|e| CliError::Parse {
        field: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    config.validate()?;
    Ok(config)
}

pub fn parse_config(path: &Path, overrides: &[String]) -> Result<ScenarioConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    let value: Value = serde_json::from_str(&text).map_err(|e| CliError::Parse {
        field: ".".to_string(),
        message: e.to_string(),
    })?;
    config_from_value(apply_overrides(value, overrides)?)
}

pub fn parse_seeds(s: &str) -> Result<RangeInclusive<u64>, CliError> {
    let bad = || CliError::Seeds(s.to_string());
    let (a, b) = s.split_once("..").ok_or_else(bad)?;
    let a: u64 = a.trim().parse().map_err(|_| bad())?;
    let b: u64 = b.trim().parse().map_err(|_| bad())?;
    if a > b {
        return Err(bad());
    }
    Ok(a..=b)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn joined<T: ToString>(items: impl IntoIterator<Item = T>) -> String {
    items.into_iter().map(|i| i.to_string()).collect::<Vec<_>>().join(" ")
}

/// Renders metrics. JSON is pretty-printed with fields in declaration
/// order; CSV is [`METRICS_CSV_HEADER`] plus one row, list fields
/// space-separated.
pub fn format_report(m: &Metrics, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(m).expect("metrics serialize");
            s.push('\n');
            s
        }
        ReportFormat::Csv => format!(
            "{METRICS_CSV_HEADER}\n{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            m.cycles_attempted,
            m.cycles_completed,
            m.cycles_failed,
            m.completion_fraction,
            m.completion_fraction_live_endpoints,
            m.attempts_launched,
            m.data_transmissions,
            m.mean_transmissions_per_cycle,
            m.asymmetric_seals,
            m.symmetric_seals,
            joined(&m.anonymity_set_sizes),
            m.anonymity_set_min,
            m.anonymity_set_median,
            m.anonymity_set_mean,
            opt(m.timing_identified_fraction),
            opt(m.mean_intersection_size),
            m.convergence_lag_max,
        ),
    }
}

/// One row per launched attempt with the colluders' candidate set.
pub fn linkability_csv(trace: &Trace) -> String {
    let colluding: BTreeSet<PeerId> = trace.colluding.iter().copied().collect();
    let mut out = String::from(LINKABILITY_CSV_HEADER);
    out.push('\n');
    for c in &trace.cycles {
        let (cands, size, traced) = match linkability_analysis(trace, &colluding, c.cycle) {
            Ok(set) => {
                let traced = match trace.global_observer {
                    true => timing_traced(trace, c.cycle).map(|t| t.to_string()).unwrap_or_default(),
                    false => String::new(),
                };
                (joined(&set), set.len().to_string(), traced)
            }
            Err(_) => (String::new(), String::new(), String::new()),
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            c.cycle.0,
            c.message,
            c.attempt,
            c.requester,
            c.provider,
            c.completed.is_some(),
            cands,
            size,
            traced
        );
    }
    out
}

#[derive(Clone, Debug)]
pub struct RunRequest {
    pub config_path: PathBuf,
    pub overrides: Vec<String>,
    pub output_dir: PathBuf,
    pub sweep_seeds: Option<RangeInclusive<u64>>,
    pub report_formats: Vec<ReportFormat>,
}

fn write_seed(dir: &Path, seed: u64, formats: &[ReportFormat], metrics: &Metrics, trace: &Trace) -> std::io::Result<()> {
    for f in formats {
        let ext = match f {
            ReportFormat::Json => "json",
            ReportFormat::Csv => "csv",
        };
        fs::write(dir.join(format!("metrics-{seed}.{ext}")), format_report(metrics, *f))?;
    }
    fs::write(dir.join(format!("trace-{seed}.csv")), trace.to_csv())?;
    fs::write(dir.join(format!("linkability-{seed}.csv")), linkability_csv(trace))?;
    Ok(())
}

/// Executes a request and returns the process exit code.
pub fn main_run(request: &RunRequest) -> i32 {
    let base = match parse_config(&request.config_path, &request.overrides) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    if let Err(e) = fs::create_dir_all(&request.output_dir) {
        eprintln!("error: cannot create {}: {e}", request.output_dir.display());
        return 1;
    }
    let seeds: Vec<u64> = match &request.sweep_seeds {
        Some(r) => r.clone().collect(),
        None => vec![base.seed],
    };
    let mut formats = request.report_formats.clone();
    formats.sort();
    formats.dedup();
    if formats.is_empty() {
        formats.push(ReportFormat::Json);
    }

    let results: Vec<(u64, Result<Metrics, String>)> = seeds
        .par_iter()
        .map(|&seed| {
            let config = ScenarioConfig { seed, ..base.clone() };
            let outcome = run_scenario(&config).map_err(|e| e.to_string()).and_then(|(m, t)| {
                write_seed(&request.output_dir, seed, &formats, &m, &t)
                    .map(|_| m)
                    .map_err(|e| format!("writing outputs: {e}"))
            });
            (seed, outcome)
        })
        .collect();

    let failures: Vec<String> = results
        .iter()
        .filter_map(|(seed, r)| r.as_ref().err().map(|e| format!("seed {seed}: {e}")))
        .collect();
    if request.sweep_seeds.is_some() {
        let mut summary = String::from(SUMMARY_CSV_HEADER);
        summary.push('\n');
        for (seed, r) in &results {
            if let Ok(m) = r {
                let _ = writeln!(summary, "{seed},{},{}", m.completion_fraction, m.anonymity_set_median);
            }
        }
        if let Err(e) = fs::write(request.output_dir.join("summary.csv"), summary) {
            eprintln!("error: writing summary: {e}");
            return 1;
        }
    }
    if failures.is_empty() {
        return 0;
    }
    for f in &failures {
        eprintln!("error: {f}");
    }
    let _ = fs::write(request.output_dir.join("FAILED"), failures.join("\n") + "\n");
    1
}

#[derive(Parser, Debug)]
#[command(name = "dualpath", version, about = "Dual-path anonymous overlay simulator")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a scenario, or a sweep over seeds.
    Run {
        config: PathBuf,
        /// key=value applied after the file; dotted keys reach nested fields
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// inclusive seed range a..b
        #[arg(long, value_name = "A..B")]
        seeds: Option<String>,
        /// output directory; falls back to $DUALPATH_OUT
        #[arg(long)]
        out: Option<PathBuf>,
        /// metrics formats, comma-separated
        #[arg(long, value_delimiter = ',', default_value = "json")]
        format: Vec<String>,
    },
}

/// Entry point used by the binary.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args = match Args::try_parse_from(args) {
        Ok(a) => a,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    let Command::Run {
        config,
        overrides,
        seeds,
        out,
        format,
    } = args.command;
    let sweep_seeds = match seeds.as_deref().map(parse_seeds).transpose() {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    let report_formats = match format.iter().map(|f| f.parse()).collect::<Result<Vec<_>, _>>() {
        Ok(f) => f,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    let output_dir = out
        .or_else(|| std::env::var_os(ENV_OUT).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    main_run(&RunRequest {
        config_path: config,
        overrides,
        output_dir,
        sweep_seeds,
        report_formats,
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use serde_json::json;

    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = config_from_value(json!({"n_peers": 10, "seed": 1})).unwrap();
        assert_eq!((c.l_req, c.l_resp, c.pad_size), (3, 3, 2048));
        assert_eq!(c.seed, 1);
        let c2 = config_from_value(apply_overrides(json!({"n_peers": 10, "seed": 1}), &["L_req=4".into()]).unwrap())
            .unwrap();
        assert_eq!(c2.l_req, 4);
        assert_eq!(ScenarioConfig { l_req: 3, ..c2 }, c);
    }

    #[test]
    fn errors_name_the_field() {
        let e = config_from_value(json!({"churn": {"leave_prob_per_interval": 1.5}})).unwrap_err();
        assert!(e.to_string().contains("churn.leave_prob_per_interval"), "{e}");
        let e = config_from_value(json!({"workload": {"n_cycles": "many"}})).unwrap_err();
        assert!(matches!(e, CliError::Parse { ref field, .. } if field == "workload.n_cycles"), "{e}");
        let e = config_from_value(json!({"n_peer": 3})).unwrap_err();
        assert!(matches!(e, CliError::Parse { .. }));
    }

    #[test]
    fn overrides_reach_nested_fields() {
        let v = apply_overrides(
            json!({"churn": {"join_rate": 1.0}}),
            &["churn.leave_prob_per_interval=0.2".into(), "response_payload=per_hop".into()],
        )
        .unwrap();
        assert_eq!(v, json!({"churn": {"join_rate": 1.0, "leave_prob_per_interval": 0.2}, "response_payload": "per_hop"}));
        assert!(apply_overrides(json!({}), &["nokey".into()]).is_err());
    }

    #[test]
    fn seed_ranges() {
        assert_eq!(parse_seeds("1..20").unwrap(), 1..=20);
        assert_eq!(parse_seeds("3..3").unwrap(), 3..=3);
        assert!(parse_seeds("5..2").is_err());
        assert!(parse_seeds("x..2").is_err());
    }

    #[test]
    fn json_report_names_fields() {
        let m = Metrics {
            cycles_attempted: 5,
            cycles_completed: 5,
            ..Metrics::default()
        };
        let s = format_report(&m, ReportFormat::Json);
        assert!(s.contains("\"cycles_completed\": 5"));
        let csv = format_report(&m, ReportFormat::Csv);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(METRICS_CSV_HEADER));
        assert_eq!(
            lines.next().unwrap().split(',').count(),
            METRICS_CSV_HEADER.split(',').count()
        );
    }

    fn finite() -> impl Strategy<Value = f64> {
        prop_oneof![-1e9f64..1e9, Just(0.0), Just(1.0), any::<f64>().prop_filter("finite", |x| x.is_finite())]
    }

    fn metrics() -> impl Strategy<Value = Metrics> {
        (
            (any::<u64>(), any::<u64>(), any::<u64>(), finite(), finite(), any::<u64>(), any::<u64>()),
            (finite(), any::<u64>(), any::<u64>(), proptest::collection::vec(0usize..1000, 0..20)),
            (any::<usize>(), finite(), finite(), proptest::option::of(finite()), proptest::option::of(finite())),
            any::<u64>(),
        )
            .prop_map(|(a, b, c, lag)| Metrics {
                cycles_attempted: a.0,
                cycles_completed: a.1,
                cycles_failed: a.2,
                completion_fraction: a.3,
                completion_fraction_live_endpoints: a.4,
                attempts_launched: a.5,
                data_transmissions: a.6,
                mean_transmissions_per_cycle: b.0,
                asymmetric_seals: b.1,
                symmetric_seals: b.2,
                anonymity_set_sizes: b.3,
                anonymity_set_min: c.0,
                anonymity_set_median: c.1,
                anonymity_set_mean: c.2,
                timing_identified_fraction: c.3,
                mean_intersection_size: c.4,
                convergence_lag_max: lag,
            })
    }

    proptest! {
        #[test]
        fn json_report_round_trips(m in metrics()) {
            let back: Metrics = serde_json::from_str(&format_report(&m, ReportFormat::Json)).unwrap();
            prop_assert_eq!(back, m);
        }
    }
}
