//! Command-line front end.
//!
//! Exit codes: 0 all checks hold, 1 a measured-vs-bound comparison failed,
//! 2 config or usage error, 3 the dimension guard declined the config.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};

use qpq_core::bounds::{
    corollary1_verdict, gentle_bounds, lemma1_bound, specific_bound, step_bound, theorem1_bound,
};
use qpq_core::cli::{
    load_config, run_scenario, Report, ReportFormat, ScenarioConfig, Scenario, REPORT_SCHEMA,
};
use qpq_core::Error;

#[derive(Parser)]
#[command(
    name = "qpq",
    version,
    about = "Quantum-private-queries protocol simulator and bound verifier"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Json => ReportFormat::Json,
            Format::Csv => ReportFormat::Csv,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the scenario described by a JSON config file.
    Run {
        config: PathBuf,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Report format (overrides the config).
        #[arg(long, value_enum)]
        format: Option<Format>,
    },
    /// Evaluate the closed-form bounds at a slack and database shape.
    Bounds {
        /// Correctness/privacy slack ε.
        epsilon: f64,
        /// Number of entries the attack extracts.
        m: usize,
        /// Valid-answer multiplicities, one per query.
        multiplicities: Vec<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum)]
        format: Option<Format>,
    },
    /// Run the deterministic lemma/property suite.
    Selftest {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum)]
        format: Option<Format>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let started = Instant::now();
    let outcome = match cli.command {
        Command::Run { config, out, format } => run(config, out, format),
        Command::Bounds {
            epsilon,
            m,
            multiplicities,
            out,
            format,
        } => bounds(epsilon, m, multiplicities, out, format),
        Command::Selftest { out, format } => selftest(out, format),
    };
    match outcome {
        Ok(violated) => {
            eprintln!("done in {} ms", started.elapsed().as_millis());
            if violated {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                Error::DimensionOverflow(_, _) => ExitCode::from(3),
                _ => ExitCode::from(2),
            }
        }
    }
}

fn emit(report: &Report, out: Option<PathBuf>, format: Option<Format>) -> Result<bool, Error> {
    let format = format
        .map(ReportFormat::from)
        .or(report.config.format)
        .unwrap_or(ReportFormat::Json);
    let text = report.render(format)?;
    let out = out.or_else(|| report.config.out.clone().map(PathBuf::from));
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    for row in &report.records {
        if row.passed == Some(false) {
            eprintln!("violation: {} ({:?} vs {:?})", row.name, row.measured, row.bound);
        }
    }
    Ok(report.has_violation())
}

fn run(config: PathBuf, out: Option<PathBuf>, format: Option<Format>) -> Result<bool, Error> {
    let config = load_config(&config)?;
    let report = run_scenario(&config)?;
    emit(&report, out, format)
}

fn bounds(
    epsilon: f64,
    m: usize,
    multiplicities: Vec<usize>,
    out: Option<PathBuf>,
    format: Option<Format>,
) -> Result<bool, Error> {
    if multiplicities.is_empty() {
        return Err(Error::Config(
            "at least one valid-answer multiplicity is required".into(),
        ));
    }
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::Config(format!("epsilon {epsilon} outside [0,1]")));
    }
    // synthesize a config echo so the report schema stays uniform
    let config = ScenarioConfig {
        version: REPORT_SCHEMA,
        scenario: Scenario::BoundsSweep,
        n: multiplicities.len(),
        multiplicities: multiplicities.clone(),
        mode: "purified".into(),
        entries: None,
        i: 1,
        j: if multiplicities.len() > 1 { 2 } else { 1 },
        m: Some(m),
        p: 0.0,
        r: 1,
        sweep: None,
        out: None,
        format: None,
    };
    let mut records = Vec::new();
    let mut push = |name: String, value: f64, anchor: &'static str| {
        records.push(qpq_core::cli::ReportRow {
            kind: "bound",
            name,
            measured: None,
            bound: Some(qpq_core::cli::sig12(value)),
            margin: None,
            passed: None,
            anchor: Some(anchor),
            note: None,
        });
    };
    for (idx, d) in multiplicities.iter().enumerate() {
        push(
            format!("single_pair_distance(query={}, d={d})", idx + 1),
            lemma1_bound(*d)?,
            "D = 1 - 1/d",
        );
    }
    if multiplicities.len() >= 2 {
        push(
            "pair_distance(1, 2)".to_string(),
            specific_bound(multiplicities[0], multiplicities[1])?,
            "D >= 1 - 1/max(|X_i|,|X_j|)",
        );
    }
    push(
        format!("extraction_success_bound(m={m})"),
        theorem1_bound(m, epsilon)?,
        "success >= 1 - 2*m^2*sqrt(eps)",
    );
    for l in 1..=m {
        push(
            format!("step_failure_bound(l={l})"),
            step_bound(l, epsilon),
            "eps_l <= l*(3*sqrt(eps)+eps)",
        );
    }
    let (single, cq, rotation, step) = gentle_bounds(epsilon);
    push("gentle_single".into(), single, "damage <= sqrt(eps)");
    push("gentle_cq".into(), cq, "damage <= sqrt(eps)+eps");
    push("rotation".into(), rotation, "distance <= 2*sqrt(eps)");
    push("extraction_step".into(), step, "damage <= 3*sqrt(eps)+eps");
    let verdict = corollary1_verdict(epsilon, multiplicities.len(), &multiplicities)?;
    records.push(qpq_core::cli::ReportRow {
        kind: "verdict",
        name: "impossibility".into(),
        measured: Some(qpq_core::cli::sig12(epsilon)),
        bound: None,
        margin: None,
        passed: None,
        anchor: None,
        note: Some(format!("{verdict:?}")),
    });
    let report = Report {
        version: env!("CARGO_PKG_VERSION").to_string(),
        schema: REPORT_SCHEMA,
        config,
        records,
    };
    emit(&report, out, format)
}

fn selftest(out: Option<PathBuf>, format: Option<Format>) -> Result<bool, Error> {
    let config = ScenarioConfig {
        version: REPORT_SCHEMA,
        scenario: Scenario::LemmaSuite,
        n: 2,
        multiplicities: vec![2, 2],
        mode: "purified".into(),
        entries: None,
        i: 1,
        j: 2,
        m: None,
        p: 0.0,
        r: 1,
        sweep: None,
        out: None,
        format: None,
    };
    let report = run_scenario(&config)?;
    for row in &report.records {
        let status = match row.passed {
            Some(true) => "pass",
            Some(false) => "FAIL",
            None => "info",
        };
        eprintln!("{status}: {}", row.name);
    }
    emit(&report, out, format)
}
