//! Scenario runner: config loading, scenario dispatch, and deterministic
//! machine-readable reports.
//!
//! Reports are byte-deterministic: identical configs produce identical
//! output. All randomness in the underlying simulations is exhaustive
//! branch enumeration, and the self-test suite uses a fixed seed, so no
//! seed flag exists. Numbers are rounded to 12 significant digits before
//! serialization; wall-clock timing goes to stderr, never into a report.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attacks::{
    data_privacy_violation, purified_database_attack, sequential_extraction_attack,
    DataPrivacyVerdict,
};
use crate::bounds::{
    corollary1_verdict, gentle_bounds, lemma1_bound, specific_bound, step_bound, theorem1_bound,
    CorollaryVerdict,
};
use crate::error::{Error, Result};
use crate::glm08::{
    estimate_correctness, run_summary, user_privacy_gap, DatabaseSpec, DbMode, PrivacyStrategy,
    RunOptions,
};

pub const REPORT_SCHEMA: u32 = 1;

// ---------------------------------------------------------------------------
// config
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    Honest,
    SpecificAttack,
    GenericAttack,
    BoundsSweep,
    LemmaSuite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReportFormat {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    #[serde(default)]
    pub eps_min: f64,
    #[serde(default = "default_eps_max")]
    pub eps_max: f64,
    #[serde(default = "default_points")]
    pub points: usize,
}

fn default_eps_max() -> f64 {
    1.0 / 32.0
}

fn default_points() -> usize {
    1000
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            eps_min: 0.0,
            eps_max: default_eps_max(),
            points: default_points(),
        }
    }
}

/// One scenario invocation. Optional fields default to: purified mode,
/// noiseless, one repetition, queries (1, 2), m = n.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_version")]
    pub version: u32,
    pub scenario: Scenario,
    pub n: usize,
    pub multiplicities: Vec<usize>,
    #[serde(default = "default_mode")]
    pub mode: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entries: Option<Vec<usize>>,
    #[serde(default = "default_i")]
    pub i: usize,
    #[serde(default = "default_j")]
    pub j: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(default)]
    pub p: f64,
    #[serde(default = "default_r")]
    pub r: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<ReportFormat>,
}

fn default_version() -> u32 {
    REPORT_SCHEMA
}

fn default_mode() -> String {
    "purified".to_string()
}

fn default_i() -> usize {
    1
}

fn default_j() -> usize {
    2
}

fn default_r() -> usize {
    1
}

impl ScenarioConfig {
    pub fn database_spec(&self) -> Result<DatabaseSpec> {
        let mode = match self.mode.as_str() {
            "purified" => DbMode::Purified,
            "uniform-random" => DbMode::UniformRandom,
            "classical-fixed" => {
                let entries = self.entries.clone().ok_or_else(|| {
                    Error::Config("classical-fixed mode needs `entries`".into())
                })?;
                DbMode::ClassicalFixed(entries)
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown mode `{other}`; expected purified, uniform-random \
                     or classical-fixed"
                )))
            }
        };
        if self.multiplicities.len() != self.n {
            return Err(Error::Config(format!(
                "expected {} multiplicities, got {}",
                self.n,
                self.multiplicities.len()
            )));
        }
        if self.entries.is_some() && self.mode != "classical-fixed" {
            return Err(Error::Config(
                "`entries` is only meaningful in classical-fixed mode".into(),
            ));
        }
        let spec = DatabaseSpec::uniform(&self.multiplicities, mode)?;
        spec.validate()?;
        spec.run_layout()?; // dimension guard
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != REPORT_SCHEMA {
            return Err(Error::Config(format!(
                "unsupported config version {}, expected {REPORT_SCHEMA}",
                self.version
            )));
        }
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::Config(format!(
                "noise probability {} outside [0,1]",
                self.p
            )));
        }
        if self.r == 0 {
            return Err(Error::Config("repetitions must be at least 1".into()));
        }
        let spec = self.database_spec()?;
        spec.check_query(self.i)?;
        if matches!(self.scenario, Scenario::SpecificAttack) {
            spec.check_query(self.j)?;
            if self.i == self.j {
                return Err(Error::Config("i and j must differ".into()));
            }
        }
        if let Some(m) = self.m {
            if m < 2 || m > self.n {
                return Err(Error::Config(format!("m={m} outside 2..=n={}", self.n)));
            }
        }
        if let Some(sweep) = &self.sweep {
            if sweep.points < 2 || sweep.eps_min < 0.0 || sweep.eps_max <= sweep.eps_min {
                return Err(Error::Config("malformed sweep grid".into()));
            }
        }
        Ok(())
    }
}

/// Parse and validate a config file.
pub fn load_config(path: &Path) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path)?;
    let config: ScenarioConfig = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    config.validate()?;
    Ok(config)
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

/// One row of a report. Rows that compare a measurement against a bound
/// carry both numbers, the margin, a pass flag, and the bound's defining
/// formula in `anchor`.
#[derive(Debug, Clone, Serialize)]
pub struct ReportRow {
    pub kind: &'static str,
    pub name: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub measured: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bound: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub margin: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub passed: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub anchor: Option<&'static str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub version: String,
    pub schema: u32,
    pub config: ScenarioConfig,
    pub records: Vec<ReportRow>,
}

impl Report {
    pub fn has_violation(&self) -> bool {
        self.records.iter().any(|r| r.passed == Some(false))
    }

    pub fn to_json(&self) -> Result<String> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        Ok(text)
    }

    /// Flatten the rows; the config echo travels in a comment line.
    pub fn to_csv(&self) -> Result<String> {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# version={} schema={} config={}",
            self.version,
            self.schema,
            serde_json::to_string(&self.config)?
        );
        let _ = writeln!(out, "kind,name,measured,bound,margin,passed,anchor,note");
        let fmt_opt = |v: &Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
        for row in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                row.kind,
                csv_escape(&row.name),
                fmt_opt(&row.measured),
                fmt_opt(&row.bound),
                fmt_opt(&row.margin),
                row.passed.map(|p| p.to_string()).unwrap_or_default(),
                csv_escape(row.anchor.unwrap_or("")),
                csv_escape(row.note.as_deref().unwrap_or("")),
            );
        }
        Ok(out)
    }

    pub fn render(&self, format: ReportFormat) -> Result<String> {
        match format {
            ReportFormat::Json => self.to_json(),
            ReportFormat::Csv => self.to_csv(),
        }
    }
}

fn csv_escape(field: &str) -> String {
    if field.contains([',', '"', '\n']) {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

/// Round to 12 significant digits so reports are byte-stable across
/// re-runs.
pub fn sig12(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.11e}").parse().unwrap_or(x)
}

struct Rows(Vec<ReportRow>);

impl Rows {
    fn new() -> Self {
        Rows(Vec::new())
    }

    fn measurement(&mut self, name: impl Into<String>, value: f64, note: Option<String>) {
        self.0.push(ReportRow {
            kind: "measurement",
            name: name.into(),
            measured: Some(sig12(value)),
            bound: None,
            margin: None,
            passed: None,
            anchor: None,
            note,
        });
    }

    /// measured ≥ bound − tol
    fn at_least(
        &mut self,
        name: impl Into<String>,
        measured: f64,
        bound: f64,
        anchor: &'static str,
    ) {
        self.0.push(ReportRow {
            kind: "comparison",
            name: name.into(),
            measured: Some(sig12(measured)),
            bound: Some(sig12(bound)),
            margin: Some(sig12(measured - bound)),
            passed: Some(measured >= bound - 1e-8),
            anchor: Some(anchor),
            note: None,
        });
    }

    /// measured ≤ bound + tol
    fn at_most(
        &mut self,
        name: impl Into<String>,
        measured: f64,
        bound: f64,
        anchor: &'static str,
    ) {
        self.0.push(ReportRow {
            kind: "comparison",
            name: name.into(),
            measured: Some(sig12(measured)),
            bound: Some(sig12(bound)),
            margin: Some(sig12(bound - measured)),
            passed: Some(measured <= bound + 1e-8),
            anchor: Some(anchor),
            note: None,
        });
    }

    /// |measured − bound| ≤ tol
    fn equals(
        &mut self,
        name: impl Into<String>,
        measured: f64,
        bound: f64,
        tol: f64,
        anchor: &'static str,
    ) {
        self.0.push(ReportRow {
            kind: "comparison",
            name: name.into(),
            measured: Some(sig12(measured)),
            bound: Some(sig12(bound)),
            margin: Some(sig12((measured - bound).abs())),
            passed: Some((measured - bound).abs() <= tol),
            anchor: Some(anchor),
            note: None,
        });
    }

    fn bound(
        &mut self,
        name: impl Into<String>,
        value: f64,
        anchor: &'static str,
        note: Option<String>,
    ) {
        self.0.push(ReportRow {
            kind: "bound",
            name: name.into(),
            measured: None,
            bound: Some(sig12(value)),
            margin: None,
            passed: None,
            anchor: Some(anchor),
            note,
        });
    }

    fn check(&mut self, name: impl Into<String>, passed: bool, note: String) {
        self.0.push(ReportRow {
            kind: "check",
            name: name.into(),
            measured: None,
            bound: None,
            margin: None,
            passed: Some(passed),
            anchor: None,
            note: Some(note),
        });
    }

    fn verdict(&mut self, name: impl Into<String>, measured: Option<f64>, note: String) {
        self.0.push(ReportRow {
            kind: "verdict",
            name: name.into(),
            measured: measured.map(sig12),
            bound: None,
            margin: None,
            passed: None,
            anchor: None,
            note: Some(note),
        });
    }
}

// ---------------------------------------------------------------------------
// scenario dispatch
// ---------------------------------------------------------------------------

/// Execute a validated config. The returned report is deterministic;
/// `Report::has_violation` drives the process exit code.
pub fn run_scenario(config: &ScenarioConfig) -> Result<Report> {
    config.validate()?;
    let records = match config.scenario {
        Scenario::Honest => honest_scenario(config)?,
        Scenario::SpecificAttack => specific_scenario(config)?,
        Scenario::GenericAttack => generic_scenario(config)?,
        Scenario::BoundsSweep => sweep_scenario(config)?,
        Scenario::LemmaSuite => lemma_scenario(),
    };
    Ok(Report {
        version: env!("CARGO_PKG_VERSION").to_string(),
        schema: REPORT_SCHEMA,
        config: config.clone(),
        records: records.0,
    })
}

fn honest_scenario(config: &ScenarioConfig) -> Result<Rows> {
    let spec = config.database_spec()?;
    let opts = RunOptions::with_noise(config.p);
    let mut rows = Rows::new();
    let summary = run_summary(&spec, config.i, &opts)?;
    rows.measurement(
        format!("accept_probability(i={})", config.i),
        summary.accept_probability,
        Some(format!("{} branches", summary.branch_count)),
    );
    rows.measurement(
        format!("correctness_error(i={})", config.i),
        summary.correctness_error,
        None,
    );
    for (y, p) in &summary.answer_distribution {
        rows.measurement(format!("pr(accept, Y={y})"), *p, None);
    }
    let epsilon = estimate_correctness(&spec, &opts)?;
    rows.measurement("epsilon", epsilon, Some("maximized over queries".into()));
    if config.p == 0.0 {
        rows.equals(
            "noiseless_correctness",
            epsilon,
            0.0,
            1e-9,
            "eps = 0 for honest noiseless runs",
        );
    }
    let gap = user_privacy_gap(&spec, PrivacyStrategy::Honest, &opts)?;
    rows.equals(
        "user_privacy_gap(honest)",
        gap,
        0.0,
        1e-9,
        "honest marginals are query-independent",
    );
    Ok(rows)
}

fn specific_scenario(config: &ScenarioConfig) -> Result<Rows> {
    let spec = config.database_spec()?;
    let report = purified_database_attack(&spec, config.i, config.j, config.r)?;
    let mut rows = Rows::new();
    rows.equals(
        "bob_accept_probability",
        report.bob_accept_probability,
        report.honest_accept_probability,
        1e-9,
        "accept(attacked) = accept(honest)",
    );
    for (rep, accept) in report.accept_probability_per_repetition.iter().enumerate() {
        rows.equals(
            format!("accept_probability(rep={})", rep + 1),
            *accept,
            1.0,
            1e-9,
            "accept(attacked) = accept(honest)",
        );
    }
    rows.equals(
        "answer_consistency",
        report.answer_consistency_probability,
        1.0,
        1e-9,
        "repeated queries are answered consistently",
    );
    for (rep, stats) in report.answer_statistics_per_repetition.iter().enumerate() {
        for (y, p) in stats {
            rows.measurement(format!("pr(Y={y} | rep={})", rep + 1), *p, None);
        }
    }
    rows.at_least(
        "distinguishing_distance",
        report.measured_distance,
        report.paper_bound,
        "D >= 1 - 1/max(|X_i|,|X_j|)",
    );
    rows.equals(
        "helstrom_success",
        report.helstrom_success,
        0.5 + report.measured_distance / 2.0,
        1e-9,
        "success = 1/2 + D/2",
    );
    let gap = user_privacy_gap(
        &spec,
        PrivacyStrategy::PurifiedDatabase,
        &RunOptions::noiseless(),
    )?;
    rows.at_least(
        "user_privacy_gap(purified)",
        gap,
        report.paper_bound,
        "D >= 1 - 1/max(|X_i|,|X_j|)",
    );
    Ok(rows)
}

fn generic_scenario(config: &ScenarioConfig) -> Result<Rows> {
    let spec = config.database_spec()?;
    let m = config.m.unwrap_or(spec.n);
    let report = sequential_extraction_attack(&spec, m, config.p)?;
    let mut rows = Rows::new();
    rows.measurement("epsilon", report.epsilon, Some("maximized over queries".into()));
    rows.at_least(
        "overall_success",
        report.overall_success,
        report.theorem_bound,
        "success >= 1 - 2*m^2*sqrt(eps)",
    );
    for (l, (&failure, &bound)) in report
        .step_failures
        .iter()
        .zip(&report.step_bounds)
        .enumerate()
    {
        rows.at_most(
            format!("step_failure(l={})", l + 1),
            failure,
            bound,
            "eps_l <= l*(3*sqrt(eps)+eps)",
        );
    }
    for (l, (&damage, &bound)) in report
        .chain_damage
        .iter()
        .zip(&report.chain_damage_bounds)
        .enumerate()
    {
        rows.at_most(
            format!("chain_damage(before step {})", l + 1),
            damage,
            bound,
            "damage <= (l-1)*(3*sqrt(eps)+eps)",
        );
    }
    for (l, &dist) in report.rotation_distances.iter().enumerate() {
        rows.at_most(
            format!("rotation_distance(step {})", l + 1),
            dist,
            report.rotation_bound,
            "distance <= 2*sqrt(eps)",
        );
    }
    rows.equals(
        "alice_view_distance",
        report.alice_view_distance,
        0.0,
        1e-9,
        "the attack happens after the last message",
    );
    let verdict = data_privacy_violation(&report, &spec, config.i, config.j)?;
    match verdict {
        DataPrivacyVerdict::Violated {
            pair_success,
            bound,
            margin,
        } => {
            rows.at_least(
                format!("pair_guess_success(i={}, j={})", config.i, config.j),
                pair_success,
                bound,
                "violation when success > 1/k + eps",
            );
            rows.verdict(
                "data_privacy",
                Some(margin),
                format!("violated by margin {}", sig12(margin)),
            );
        }
        DataPrivacyVerdict::NotViolated {
            pair_success,
            bound,
            reason,
        } => {
            rows.measurement(
                format!("pair_guess_success(i={}, j={})", config.i, config.j),
                pair_success,
                Some(format!("bound {}", sig12(bound))),
            );
            rows.verdict("data_privacy", None, format!("not violated: {reason}"));
        }
    }
    Ok(rows)
}

fn sweep_scenario(config: &ScenarioConfig) -> Result<Rows> {
    let sweep = config.sweep.unwrap_or_default();
    let m = config.m.unwrap_or(config.n.max(2));
    let mut rows = Rows::new();
    for d in &config.multiplicities {
        rows.bound(
            format!("single_pair_distance(d={d})"),
            lemma1_bound(*d)?,
            "D = 1 - 1/d",
            None,
        );
    }
    if config.multiplicities.len() >= 2 {
        rows.bound(
            format!("pair_distance(i={}, j={})", config.i, config.j),
            specific_bound(
                config.multiplicities[config.i - 1],
                config.multiplicities[config.j - 1],
            )?,
            "D >= 1 - 1/max(|X_i|,|X_j|)",
            None,
        );
    }
    let mut last_verdict: Option<bool> = None;
    for k in 0..sweep.points {
        let eps = sweep.eps_min
            + (sweep.eps_max - sweep.eps_min) * k as f64 / (sweep.points - 1) as f64;
        let eps_r = sig12(eps);
        rows.bound(
            format!("extraction_success_bound(eps={eps_r})"),
            theorem1_bound(m, eps)?.clamp(0.0, 1.0),
            "success >= 1 - 2*m^2*sqrt(eps)",
            None,
        );
        for l in 1..=m {
            rows.bound(
                format!("step_failure_bound(l={l}, eps={eps_r})"),
                step_bound(l, eps).clamp(0.0, 1.0),
                "eps_l <= l*(3*sqrt(eps)+eps)",
                None,
            );
        }
        let (single, cq, rotation, step) = gentle_bounds(eps);
        rows.bound(
            format!("disturbance_bounds(eps={eps_r})"),
            single.clamp(0.0, 1.0),
            "damage <= sqrt(eps)",
            Some(format!(
                "cq={} rotation={} step={}",
                sig12(cq.min(1.0)),
                sig12(rotation.min(1.0)),
                sig12(step.min(1.0))
            )),
        );
        let verdict = corollary1_verdict(eps, config.n, &config.multiplicities)?;
        let impossible = verdict == CorollaryVerdict::Impossible;
        if last_verdict != Some(impossible) {
            let note = match verdict {
                CorollaryVerdict::Impossible => "impossible".to_string(),
                CorollaryVerdict::NotCovered { reason } => format!("not covered: {reason}"),
            };
            rows.verdict(format!("impossibility(eps={eps_r})"), Some(eps_r), note);
            last_verdict = Some(impossible);
        }
    }
    Ok(rows)
}

fn lemma_scenario() -> Rows {
    let mut rows = Rows::new();
    for check in crate::selftest::run_selftest() {
        rows.check(check.name, check.passed, check.detail);
    }
    rows
}
