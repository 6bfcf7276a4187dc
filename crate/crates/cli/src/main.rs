mod commands;
mod report;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use coexist::compatibility::{CoexistenceOptions, DEFAULT_MAX_MOTHER_OUTCOMES, DEFAULT_SUBSET_CAP};
use coexist::feasibility::SolverOptions;
use coexist::Tolerance;
use serde_json::json;

use commands::{CliError, Context, Outcome};
use report::{take_timings, CommandEcho, ErrorDoc, ReportDocument, Runtime, SCHEMA_VERSION};

/// Compatibility analysis of finite-outcome quantum observables.
///
/// Prints a JSON report on stdout and a short summary on stderr.
/// Exit codes: 0 completed, 1 failed reproduction criterion, 2 input error, 3 numerical failure.
#[derive(Debug, Parser)]
#[command(name = "coexist", version)]
struct Cli {
    /// Feasibility tolerance of the numerical solver.
    #[arg(long, global = true, env = "COMPAT_TOL")]
    tol: Option<f64>,
    /// Iteration cap of the numerical solver.
    #[arg(long, global = true)]
    max_iter: Option<usize>,
    /// Largest number of subset pairs examined by the binarization check.
    #[arg(long, global = true, default_value_t = DEFAULT_SUBSET_CAP)]
    subset_cap: usize,
    /// Largest mother observable tried by the coexistence search.
    #[arg(long, global = true, default_value_t = DEFAULT_MAX_MOTHER_OUTCOMES)]
    max_mother_outcomes: usize,
    /// Write the report to this file instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check that a file describes a valid observable.
    Validate { observable: PathBuf },
    /// Build and verify the minimal Naimark dilation.
    Dilate { observable: PathBuf },
    /// Decide whether an observable is an extreme point.
    Extreme { observable: PathBuf },
    /// Joint measurability of two observables.
    Jm { a: PathBuf, b: PathBuf },
    /// Joint measurability of every pair of binarizations.
    BinarizationsJm { a: PathBuf, b: PathBuf },
    /// Coexistence of two observables.
    Coexist { a: PathBuf, b: PathBuf },
    /// Joint observable of binarizations of a mother.
    MotherJoint {
        mother: PathBuf,
        #[arg(long)]
        masks: PathBuf,
        /// Build the joint of this extreme observable with the mother instead.
        #[arg(long)]
        extreme_a: Option<PathBuf>,
    },
    /// Find a deterministic relabeling taking M to A.
    RelabelFind { a: PathBuf, m: PathBuf },
    /// Find a stochastic post-processing taking M to A.
    PostprocessFind { a: PathBuf, m: PathBuf },
    /// Visibility at which a noisy pair becomes jointly measurable.
    JmThreshold { a: PathBuf, b: PathBuf },
    /// Steerability of a bipartite state with the given measurements.
    Steer {
        state: PathBuf,
        #[arg(required = true)]
        measurements: Vec<PathBuf>,
    },
    /// Run the reproduction suite on the built-in fixtures.
    ReproPaper,
    /// Write the built-in fixtures as JSON files.
    Fixtures { dir: PathBuf },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Validate { .. } => "validate",
            Command::Dilate { .. } => "dilate",
            Command::Extreme { .. } => "extreme",
            Command::Jm { .. } => "jm",
            Command::BinarizationsJm { .. } => "binarizations-jm",
            Command::Coexist { .. } => "coexist",
            Command::MotherJoint { .. } => "mother-joint",
            Command::RelabelFind { .. } => "relabel-find",
            Command::PostprocessFind { .. } => "postprocess-find",
            Command::JmThreshold { .. } => "jm-threshold",
            Command::Steer { .. } => "steer",
            Command::ReproPaper => "repro-paper",
            Command::Fixtures { .. } => "fixtures",
        }
    }
}

fn dispatch(cmd: &Command, ctx: &Context) -> Result<Outcome, CliError> {
    use commands::*;
    match cmd {
        Command::Validate { observable } => validate_cmd(observable, ctx),
        Command::Dilate { observable } => dilate_cmd(observable, ctx),
        Command::Extreme { observable } => extreme_cmd(observable, ctx),
        Command::Jm { a, b } => jm_cmd(a, b, ctx),
        Command::BinarizationsJm { a, b } => binarizations_cmd(a, b, ctx),
        Command::Coexist { a, b } => coexist_cmd(a, b, ctx),
        Command::MotherJoint { mother, masks, extreme_a } => mother_joint_cmd(mother, masks, extreme_a.as_deref(), ctx),
        Command::RelabelFind { a, m } => relabel_cmd(a, m, ctx),
        Command::PostprocessFind { a, m } => postprocess_cmd(a, m, ctx),
        Command::JmThreshold { a, b } => threshold_cmd(a, b, ctx),
        Command::Steer { state, measurements } => steer_cmd(state, measurements, ctx),
        Command::ReproPaper => repro_cmd(ctx),
        Command::Fixtures { dir } => fixtures_cmd(dir),
    }
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            let _ = e.print();
            return ExitCode::from(2);
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    let start = Instant::now();
    let mut opts = SolverOptions::default();
    if let Some(t) = cli.tol {
        opts.feas_tol = t;
    }
    if let Some(n) = cli.max_iter {
        opts.max_iter = n;
    }
    let ctx = Context {
        tol: Tolerance::default(),
        opts,
        copts: CoexistenceOptions { max_mother_outcomes: cli.max_mother_outcomes, subset_cap: cli.subset_cap },
    };
    let parameters = json!({
        "eig_tol": ctx.tol.eig_tol,
        "eq_tol": ctx.tol.eq_tol,
        "feas_tol": ctx.opts.feas_tol,
        "max_iter": ctx.opts.max_iter,
        "subset_cap": ctx.copts.subset_cap,
        "max_mother_outcomes": ctx.copts.max_mother_outcomes,
    });
    let name = cli.command.name();
    let (mut verdict, residuals, error, code) = match dispatch(&cli.command, &ctx) {
        Ok(o) => {
            eprintln!("{name}: {}", o.summary);
            (o.verdict, o.residuals, None, o.exit_code)
        }
        Err(e) => {
            eprintln!("{name}: error: {e}");
            let code = e.exit_code();
            (serde_json::Value::Null, vec![], Some(ErrorDoc { kind: e.kind(), message: e.to_string() }), code)
        }
    };
    let steps = take_timings(&mut verdict);
    let doc = ReportDocument {
        schema_version: SCHEMA_VERSION,
        command: CommandEcho { name: name.to_string(), args: argv },
        parameters,
        verdict,
        residuals,
        runtime: Runtime { total_seconds: start.elapsed().as_secs_f64(), steps },
        error,
    };
    let text = doc.to_json();
    match &cli.out {
        Some(path) => {
            if let Err(e) = std::fs::write(path, text + "\n") {
                eprintln!("cannot write {}: {e}", path.display());
                return ExitCode::from(2);
            }
        }
        // A closed pipe on stdout is the reader's choice, not a failure.
        None => {
            let _ = writeln!(std::io::stdout().lock(), "{text}");
        }
    }
    ExitCode::from(code as u8)
}
