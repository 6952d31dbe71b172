use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use sbp_core::checks::{run_all, CheckOptions};
use sbp_core::experiments::{
    default_anchors, default_sweep, emit_report, render_report, run_baseline, run_experiment, ExperimentError,
    ExperimentId, ReportFormat, ReportOptions, SweepEntry,
};
use sbp_core::problem::load_problem_file;
use sbp_core::solver::{solve, write_trace_jsonl, Criterion, EtaSchedule, SolveError, SolverConfig, Termination};

#[derive(Parser)]
#[command(name = "sbp", version, about = "Simple bilevel programming solver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a problem given as a JSON file.
    Solve {
        problem: PathBuf,
        /// Threshold of the stopping criterion.
        #[arg(long)]
        eps: Option<f64>,
        /// Base of the level schedule eta_k = base^-k.
        #[arg(long)]
        eta_base: Option<f64>,
        #[arg(long, value_parser = parse_criterion)]
        criterion: Option<Criterion>,
        #[arg(long)]
        max_outer: Option<usize>,
        /// Write the iteration trace as JSON lines.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Print the summary as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Rerun one of the bundled experiments and print its table.
    Reproduce {
        #[arg(value_parser = parse_experiment)]
        id: ExperimentId,
        /// Also run the regularized projected-gradient baseline.
        #[arg(long)]
        baseline: bool,
        #[arg(long, value_enum, default_value_t = Format::Markdown)]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Thresholds to sweep instead of the defaults.
        #[arg(long, value_delimiter = ',')]
        eps: Option<Vec<f64>>,
        /// Level-schedule bases to sweep instead of the defaults.
        #[arg(long, value_delimiter = ',')]
        eta_base: Option<Vec<f64>>,
        /// Include wall-clock times.
        #[arg(long)]
        timing: bool,
    },
    /// Run the randomized property suites.
    Check {
        #[arg(long)]
        seed: Option<u64>,
        /// Skip the suites that run the bundled experiments.
        #[arg(long)]
        skip_traces: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
    Markdown,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => ReportFormat::Csv,
            Format::Json => ReportFormat::Json,
            Format::Markdown => ReportFormat::Markdown,
        }
    }
}

fn parse_criterion(s: &str) -> Result<Criterion, String> {
    s.parse()
}

fn parse_experiment(s: &str) -> Result<ExperimentId, String> {
    s.parse().map_err(|e: ExperimentError| e.to_string())
}

/// Failure with the exit status it maps to.
enum Failure {
    Input(String),
    Solver(String),
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Solve(SolveError::InvalidConfig(_) | SolveError::MissingKnownAlpha)
            | ExperimentError::UnknownExperiment(_)
            | ExperimentError::AnchorsNotSupported(_)
            | ExperimentError::AnchorDimension { .. }
            | ExperimentError::Load(_)
            | ExperimentError::Baseline(_) => Failure::Input(e.to_string()),
            _ => Failure::Solver(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Solve {
            problem,
            eps,
            eta_base,
            criterion,
            max_outer,
            trace,
            json,
        } => run_solve(problem, eps, eta_base, criterion, max_outer, trace, json),
        Command::Reproduce {
            id,
            baseline,
            format,
            out,
            eps,
            eta_base,
            timing,
        } => run_reproduce(id, baseline, format.into(), out, eps, eta_base, timing),
        Command::Check { seed, skip_traces } => run_check(seed, skip_traces),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Solver(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn run_solve(
    path: PathBuf,
    eps: Option<f64>,
    eta_base: Option<f64>,
    criterion: Option<Criterion>,
    max_outer: Option<usize>,
    trace: Option<PathBuf>,
    json: bool,
) -> Result<(), Failure> {
    let loaded = load_problem_file(&path).map_err(|e| Failure::Input(e.to_string()))?;
    let mut config = SolverConfig::default();
    loaded
        .defaults
        .apply(&mut config)
        .map_err(|e| Failure::Input(e.to_string()))?;
    if let Some(e) = eps {
        config.threshold_eps = e;
        config.inner.epsilon = config.inner.epsilon.min(e);
    }
    if let Some(b) = eta_base {
        config.eta_schedule = EtaSchedule { base: b };
    }
    if let Some(c) = criterion {
        config.criterion = c;
    }
    if let Some(m) = max_outer {
        config.max_outer = m;
    }
    let result = solve(&loaded.instance, &config).map_err(|e| match e {
        SolveError::Geometry(_) => Failure::Solver(e.to_string()),
        _ => Failure::Input(e.to_string()),
    })?;
    if let Some(p) = trace {
        let file = File::create(&p).map_err(|e| Failure::Solver(format!("cannot write {}: {e}", p.display())))?;
        let mut w = BufWriter::new(file);
        write_trace_jsonl(&result.trace, &mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Failure::Solver(format!("cannot write {}: {e}", p.display())))?;
    }
    if json {
        let summary = serde_json::json!({
            "problem": loaded.instance.name,
            "termination": result.termination.label(),
            "outer_iterations": result.outer_iterations,
            "x_star": result.x_star.as_slice(),
            "f_star": result.f_star,
            "g_star": result.g_star,
            "alpha_final": result.alpha_final,
            "wall_time_s": result.wall_time.as_secs_f64(),
        });
        println!("{summary}");
    } else {
        let x: Vec<String> = result.x_star.iter().map(|v| format!("{v:.6}")).collect();
        println!("problem      {}", loaded.instance.name);
        println!("termination  {}", result.termination.label());
        println!("outer iters  {}", result.outer_iterations);
        println!("x*           ({})", x.join(", "));
        println!("f(x*)        {:.9}", result.f_star);
        println!("g(x*)        {:.9e}", result.g_star);
        println!("alpha        {:.9e}", result.alpha_final);
        println!("wall time    {:.3} s", result.wall_time.as_secs_f64());
    }
    match result.termination {
        Termination::Error { kind, message } => Err(Failure::Solver(format!("{kind:?}: {message}"))),
        Termination::MaxOuter => {
            eprintln!("warning: stopping criterion not met within {} outer iterations", config.max_outer);
            Ok(())
        }
        Termination::CriterionMet => Ok(()),
    }
}

fn run_reproduce(
    id: ExperimentId,
    baseline: bool,
    format: ReportFormat,
    out: Option<PathBuf>,
    eps: Option<Vec<f64>>,
    eta_base: Option<Vec<f64>>,
    timing: bool,
) -> Result<(), Failure> {
    let defaults = default_sweep(id);
    let sweep: Vec<SweepEntry> = match (eps, eta_base) {
        (None, None) => defaults,
        (eps, bases) => {
            let mut e: Vec<f64> = defaults.iter().map(|s| s.eps).collect();
            let mut b: Vec<f64> = defaults.iter().map(|s| s.eta_base).collect();
            e.dedup();
            b.sort_by(f64::total_cmp);
            b.dedup();
            let e = eps.unwrap_or(e);
            let b = bases.unwrap_or(b);
            e.iter()
                .flat_map(|&eps| b.iter().map(move |&eta_base| SweepEntry { eps, eta_base }))
                .collect()
        }
    };
    if sweep.iter().any(|s| !(s.eps > 0.0) || !(s.eta_base > 1.0)) {
        return Err(Failure::Input("thresholds must be positive and eta bases above 1".into()));
    }
    let anchors = default_anchors(id);
    let mut rows = run_experiment(id, &sweep, anchors.as_deref())?;
    if baseline {
        let mut eps: Vec<f64> = sweep.iter().map(|s| s.eps).collect();
        eps.dedup();
        rows.extend(run_baseline(id, &eps)?);
    }
    let opts = ReportOptions { timing };
    match out {
        Some(path) => emit_report(&rows, format, &path, opts)?,
        None => print!("{}", render_report(&rows, format, opts)?),
    }
    Ok(())
}

fn run_check(seed: Option<u64>, skip_traces: bool) -> Result<(), Failure> {
    let mut opts = CheckOptions::default();
    if let Some(s) = seed {
        opts.seed = s;
    }
    opts.traces = !skip_traces;
    let outcomes = run_all(&opts);
    for o in &outcomes {
        println!("{}", o.summary());
    }
    let failed = outcomes.iter().filter(|o| !o.passed()).count();
    if failed > 0 {
        return Err(Failure::Solver(format!("{failed} of {} checks failed", outcomes.len())));
    }
    Ok(())
}
