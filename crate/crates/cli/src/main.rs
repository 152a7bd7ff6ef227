//! `sds`: load `.sds` documents, run checks, reductions and simulations,
//! and print a JSON report. Exit codes: 0 pass, 1 fail, 2 inconclusive,
//! 3 usage or parse error.

mod commands;
mod report;
mod sim;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use report::{Report, Status};

#[derive(Parser, Debug)]
#[command(name = "sds", version, about = "Symmetries and reductions of stochastic dynamical systems")]
#[command(args_conflicts_with_subcommands = true, allow_negative_numbers = true)]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// Master seed for every random choice (sampling and simulation).
    #[arg(long, env = "SDS_SEED", default_value_t = 1, global = true)]
    pub seed: u64,
    /// Sample points for numeric zero tests.
    #[arg(long, default_value_t = 64, global = true)]
    pub samples: usize,
    /// Numeric meaning for an uninterpreted function, as polynomial
    /// coefficients in increasing degree: `f=1` or `f=0.5,0,2`.
    #[arg(long = "define", value_name = "NAME=COEFFS", global = true)]
    pub defines: Vec<String>,
    /// Treat numeric-only zero verdicts as inconclusive.
    #[arg(long, global = true)]
    pub symbolic: bool,
    #[arg(long, value_enum, default_value_t = Output::Json, global = true)]
    pub out: Output,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Output {
    Json,
    Csv,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Decide a symbolic claim about one document.
    #[command(subcommand)]
    Check(Check),
    /// Reduce a system through a map and realize the reduced operator.
    Reduce {
        doc: PathBuf,
        sds: String,
        #[arg(long)]
        map: String,
        /// Group whose invariance is reported alongside.
        #[arg(long)]
        group: Option<String>,
    },
    #[command(subcommand)]
    Integrability(Integrability),
    #[command(subcommand)]
    Sim(sim::Sim),
    /// Parse a document and report diagnostics.
    Parse {
        file: PathBuf,
        /// Print the canonical rendering of the document instead of a report.
        #[arg(long)]
        canonical: bool,
    },
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum IntegralMode {
    Strong,
    Weak,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum InvarianceMode {
    Strict,
    Diffusion,
}

#[derive(Subcommand, Debug)]
pub enum Check {
    /// Whether two systems share a generator.
    Equivalence { doc: PathBuf, first: String, second: String },
    /// Whether a scalar (a name or an expression) is a first integral.
    Integral {
        doc: PathBuf,
        sds: String,
        scalar: String,
        #[arg(long, value_enum, default_value_t = IntegralMode::Strong)]
        mode: IntegralMode,
    },
    /// Whether a system is invariant under a group action.
    Invariance {
        doc: PathBuf,
        sds: String,
        group: String,
        #[arg(long, value_enum, default_value_t = InvarianceMode::Diffusion)]
        mode: InvarianceMode,
    },
}

#[derive(Subcommand, Debug)]
pub enum Integrability {
    /// Commutation and independence of an integrable system.
    Verify {
        doc: PathBuf,
        system: String,
        /// Also require every member to commute with this system's generator.
        #[arg(long)]
        sds: Option<String>,
    },
    /// Promote to a system of diffusion operators only, and verify it.
    Promote { doc: PathBuf, system: String },
    /// Freeze the noise at an angle section.
    NormalForm {
        doc: PathBuf,
        sds: String,
        #[arg(long)]
        chart: String,
        /// `angle=value`, repeatable.
        #[arg(long = "section", value_name = "ANGLE=VALUE", required = true)]
        sections: Vec<String>,
    },
}

/// What a command produces besides verdicts.
pub struct Outcome {
    pub report: Report,
    pub table: Option<String>,
    /// Replaces the report on stdout (`parse --canonical`).
    pub text: Option<String>,
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let (code, stdout, stderr) = run(&argv);
    print!("{stdout}");
    eprint!("{stderr}");
    ExitCode::from(code as u8)
}

/// Runs one invocation; returns the exit code and what goes to stdout and stderr.
pub fn run(argv: &[String]) -> (i32, String, String) {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 3,
            };
            let text = e.render().to_string();
            return if code == 0 { (0, text, String::new()) } else { (3, String::new(), text) };
        }
    };
    let out = cli.global.out;
    let outcome = commands::dispatch(&cli);
    let mut stderr = String::new();
    for d in &outcome.report.diagnostics {
        stderr.push_str(&format!("{d}\n"));
    }
    if let Some(e) = &outcome.report.error {
        stderr.push_str(&format!("error: {e}\n"));
    }
    let code = outcome.report.status.exit_code();
    let stdout = match (&outcome.text, &outcome.table, out) {
        (Some(t), _, _) if outcome.report.status != Status::Error => t.clone(),
        (_, Some(t), Output::Csv) => t.clone(),
        _ => outcome.report.to_json(),
    };
    (code, stdout, stderr)
}
