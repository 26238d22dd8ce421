//! Command-line interface.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use iud_core::inference::{
    confidence_interval, homogeneity_chi2, homogeneity_p_value, sequential_path, wald_statistic,
};
use iud_core::mle::fit_mle;
use iud_core::scenario::builtin_scenarios;
use iud_core::special::normal_cdf;
use iud_core::{AggregatedSample, MleOptions, ScenarioKind};
use serde::Serialize;

use crate::config::{parse_doc, ConfigDoc, ConfigError, TrialDoc};
use crate::harness::{design_label, map_replicates, replicate_metrics, summarize};
use crate::output::{fmt_num, write_summary_header, write_summary_rows};
use crate::trace_file::{read_trace, write_traces, TraceHeader};

/// Environment variable that overrides `--threads`.
pub const THREADS_ENV: &str = "IUD_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "iud",
    version,
    about = "Interacting urns design: simulation, MLE fitting and trace analysis"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a Monte Carlo study and write metrics.csv and manifest.json.
    Simulate(SimulateArgs),
    /// Fit the Beta-binomial prior to per-stratum counts.
    Mle(MleArgs),
    /// Fixed-sample and sequential statistics from a trace file.
    Analyze(AnalyzeArgs),
    /// List the built-in scenarios.
    Scenarios,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub replicates: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    pub threads: Option<usize>,
    /// Also write one trace file per scenario under OUT/traces.
    #[arg(long)]
    pub emit_traces: bool,
}

#[derive(Debug, Args)]
pub struct MleArgs {
    /// CSV with one `n,s` row per stratum; a header row is optional.
    #[arg(long)]
    pub counts: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub varsigma: f64,
    #[arg(long, default_value_t = MleOptions::default().m_max)]
    pub m_max: f64,
    #[arg(long, default_value_t = MleOptions::default().tol)]
    pub tol: f64,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub trace: PathBuf,
    /// Treatments to compare, 1-based, e.g. `1,2`.
    #[arg(long, value_parser = parse_pair)]
    pub pair: (usize, usize),
    /// 1-based stratum.
    #[arg(long)]
    pub stratum: usize,
    /// Information times; defaults to those stored in the trace, or 1.
    #[arg(long, value_delimiter = ',')]
    pub times: Option<Vec<f64>>,
    /// Replicate to analyze; the first one in the file by default.
    #[arg(long)]
    pub replicate: Option<u64>,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
}

fn parse_pair(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(',').ok_or("expected j,l")?;
    let j = a.trim().parse::<usize>().map_err(|e| e.to_string())?;
    let l = b.trim().parse::<usize>().map_err(|e| e.to_string())?;
    if j == 0 || l == 0 || j == l {
        return Err("treatments are 1-based and must differ".into());
    }
    Ok((j, l))
}

/// Failure of a subcommand, mapped to the process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, configuration or input data: exit code 2.
    Usage(String),
    /// Anything that went wrong while running: exit code 1.
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Runtime(e) => write!(f, "{e:#}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Usage(format!("invalid configuration: {e}"))
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate(args) => simulate(&args),
        Command::Mle(args) => mle(&args, &mut io::stdout().lock()),
        Command::Analyze(args) => analyze(&args, &mut io::stdout().lock()),
        Command::Scenarios => scenarios(&mut io::stdout().lock()),
    }
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>, CliError> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&k| k > 0)
            .map(Some)
            .ok_or_else(|| {
                CliError::Usage(format!(
                    "{THREADS_ENV} must be a positive integer, got {v:?}"
                ))
            }),
        Err(_) => match flag {
            Some(0) => Err(CliError::Usage("--threads must be positive".into())),
            other => Ok(other),
        },
    }
}

#[derive(Debug, Serialize)]
struct Manifest {
    manifest_version: u32,
    tool: &'static str,
    version: &'static str,
    config: ConfigDoc,
    outputs: Outputs,
    failed_replicates: u64,
    wall_clock_seconds: f64,
}

#[derive(Debug, Serialize)]
struct Outputs {
    metrics: String,
    traces: Vec<String>,
}

fn simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let text = fs::read_to_string(&args.config)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", args.config.display())))?;
    let mut doc = parse_doc(&text)?;
    if let Some(m) = args.replicates {
        doc.replicates = Some(m);
    }
    if let Some(seed) = args.seed {
        doc.trial.get_or_insert_with(TrialDoc::default).seed = Some(seed);
    }
    let cfg = doc.resolve()?;
    let threads = thread_count(args.threads)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(k) = threads {
        pool = pool.num_threads(k);
    }
    let pool = pool.build().context("cannot start worker threads")?;

    fs::create_dir_all(&args.out)
        .with_context(|| format!("cannot create {}", args.out.display()))?;
    let metrics_path = args.out.join("metrics.csv");
    let mut writer = csv::Writer::from_path(&metrics_path)?;
    write_summary_header(&mut writer)?;
    let label = design_label(&cfg.trial);
    let mut trace_files = Vec::new();
    let mut failed = 0u64;

    for scenario in &cfg.scenarios {
        let emit = args.emit_traces;
        let results = pool.install(|| {
            map_replicates(&cfg.trial, scenario, cfg.replicates, |_, trace| {
                let metrics = replicate_metrics(&trace, &cfg.metric_checkpoints)?;
                Ok((metrics, emit.then_some(trace)))
            })
        });
        let mut traces = Vec::new();
        let metrics = results
            .into_iter()
            .enumerate()
            .map(|(r, res)| {
                res.map(|(m, t)| {
                    if let Some(t) = t {
                        traces.push((r as u64, t));
                    }
                    m
                })
            })
            .collect();
        let summary = summarize(
            &cfg.trial,
            scenario,
            cfg.replicates,
            &cfg.metric_checkpoints,
            metrics,
        );
        for (r, message) in &summary.failures {
            eprintln!("warning: {} replicate {r} failed: {message}", scenario.name);
        }
        failed += summary.failures.len() as u64;
        if summary.failures.len() as u64 == cfg.replicates {
            return Err(CliError::Runtime(anyhow::anyhow!(
                "every replicate of scenario {} failed",
                scenario.name
            )));
        }
        write_summary_rows(&mut writer, &summary)?;
        if emit {
            let dir = args.out.join("traces");
            fs::create_dir_all(&dir)?;
            let name = format!("{}_{}.jsonl", scenario.name, label);
            let header = TraceHeader::new(scenario, label, &cfg.info_times);
            write_traces(
                &dir.join(&name),
                &header,
                traces.iter().map(|(r, t)| (*r, t)),
            )?;
            trace_files.push(format!("traces/{name}"));
        }
    }
    writer.flush()?;

    let manifest = Manifest {
        manifest_version: 1,
        tool: "iud",
        version: env!("CARGO_PKG_VERSION"),
        config: cfg.to_doc(),
        outputs: Outputs {
            metrics: "metrics.csv".into(),
            traces: trace_files,
        },
        failed_replicates: failed,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    };
    let json = serde_json::to_string_pretty(&manifest).context("cannot serialize manifest")?;
    fs::write(args.out.join("manifest.json"), json + "\n")?;
    Ok(())
}

fn read_counts(path: &Path) -> Result<AggregatedSample, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| {
            CliError::Runtime(
                anyhow::Error::new(e).context(format!("cannot read {}", path.display())),
            )
        })?;
    let mut pairs = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::Usage(format!("counts line {}: {e}", i + 1)))?;
        if record.len() != 2 {
            return Err(CliError::Usage(format!(
                "counts line {}: expected two columns n,s",
                i + 1
            )));
        }
        let parsed = (record[0].parse::<u64>(), record[1].parse::<u64>());
        match parsed {
            (Ok(n), Ok(s)) => pairs.push((n, s)),
            _ if i == 0 => continue,
            _ => {
                return Err(CliError::Usage(format!(
                    "counts line {}: expected non-negative integers",
                    i + 1
                )))
            }
        }
    }
    if pairs.is_empty() {
        return Err(CliError::Usage("counts file holds no rows".into()));
    }
    AggregatedSample::from_pairs(&pairs).map_err(|e| CliError::Usage(format!("counts: {e}")))
}

fn mle(args: &MleArgs, out: &mut impl Write) -> Result<(), CliError> {
    let sample = read_counts(&args.counts)?;
    let opts = MleOptions {
        m_max: args.m_max,
        tol: args.tol,
        default_prior: args.varsigma,
        ..MleOptions::default()
    };
    opts.validate()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let fit = fit_mle(&sample, &opts).map_err(|e| CliError::Runtime(e.into()))?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["alpha", "beta", "mean", "status", "log_likelihood"])?;
    w.write_record([
        fmt_num(fit.alpha),
        fmt_num(fit.beta),
        fmt_num(fit.mean),
        fit.status.as_str().to_string(),
        fmt_num(fit.log_likelihood),
    ])?;
    w.flush()?;
    Ok(())
}

fn na(r: iud_core::Result<f64>) -> String {
    r.map(fmt_num).unwrap_or_else(|_| "NA".into())
}

fn analyze(args: &AnalyzeArgs, out: &mut impl Write) -> Result<(), CliError> {
    let (header, record) = read_trace(&args.trace, args.replicate)?;
    let trace = &record.trace;
    let (j, l) = (args.pair.0 - 1, args.pair.1 - 1);
    let h = args
        .stratum
        .checked_sub(1)
        .ok_or_else(|| CliError::Usage("--stratum is 1-based".into()))?;
    let last = trace.last();
    last.counts
        .check(j, h)
        .and_then(|_| last.counts.check(l, h))
        .map_err(|e| CliError::Usage(e.to_string()))?;
    if !(args.level > 0.0 && args.level < 1.0) {
        return Err(CliError::Usage("--level must lie in (0, 1)".into()));
    }
    let times = match &args.times {
        Some(t) => t.clone(),
        None if !header.info_times.is_empty() => header.info_times.clone(),
        None => vec![1.0],
    };

    let c = &last.counts;
    let wald = wald_statistic(c, j, l, h);
    let ci = confidence_interval(c, j, l, h, args.level);
    let chi2 = homogeneity_chi2(c, h);
    let rows: Vec<(&str, String)> = vec![
        ("n", last.step.to_string()),
        ("N_j", c.assignments(j, h).to_string()),
        ("N_l", c.assignments(l, h).to_string()),
        ("theta_hat_j", fmt_num(c.theta_hat(j, h).unwrap_or(0.0))),
        ("theta_hat_l", fmt_num(c.theta_hat(l, h).unwrap_or(0.0))),
        ("P_j", fmt_num(last.p[j][h])),
        ("P_l", fmt_num(last.p[l][h])),
        ("ci_lower", na(ci.clone().map(|c| c.0))),
        ("ci_upper", na(ci.map(|c| c.1))),
        ("wald", na(wald.clone())),
        ("wald_p_value", na(wald.map(|u| 2.0 * normal_cdf(-u.abs())))),
        ("chi2", na(chi2.clone())),
        (
            "chi2_p_value",
            na(chi2.map(|x| homogeneity_p_value(x, c.num_treatments()))),
        ),
    ];
    let mut w = csv::Writer::from_writer(&mut *out);
    w.write_record(["statistic", "value"])?;
    for (k, v) in rows {
        w.write_record([k, v.as_str()])?;
    }
    w.flush()?;
    drop(w);
    writeln!(out)?;

    let path = sequential_path(trace, j, l, h, &times).map_err(|e| match e {
        iud_core::Error::Argument(m) => CliError::Usage(m),
        other => CliError::Runtime(other.into()),
    })?;
    let mut w = csv::Writer::from_writer(&mut *out);
    w.write_record(["t", "step", "U"])?;
    for k in 0..path.times.len() {
        w.write_record([
            fmt_num(path.times[k]),
            path.steps[k].to_string(),
            fmt_num(path.statistics[k]),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn join(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| fmt_num(*v))
        .collect::<Vec<_>>()
        .join(" ")
}

fn scenarios(out: &mut impl Write) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["scenario", "kind", "treatment", "parameters"])?;
    for s in builtin_scenarios() {
        match &s.kind {
            ScenarioKind::Deterministic { theta } => {
                for (j, row) in theta.iter().enumerate() {
                    w.write_record([s.name.as_str(), "theta", &(j + 1).to_string(), &join(row)])?;
                }
            }
            ScenarioKind::RandomBeta { params } => {
                for (j, &(a, b)) in params.iter().enumerate() {
                    w.write_record([
                        s.name.as_str(),
                        "beta",
                        &(j + 1).to_string(),
                        &join(&[a, b]),
                    ])?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}
