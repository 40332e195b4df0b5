//! Executable model of the GLM08 quantum-private-queries protocol.
//!
//! One run: Bob prepares a plain query `|i⟩` and a superposed query
//! `(|0⟩+|i⟩)/√2`, sends them in coin-chosen order; Alice answers each with
//! the QRAM permutation over her data registers; Bob measures the plain
//! pair in the computational basis and projects the superposed pair onto
//! the matching superposition. Index 0 of the query register addresses the
//! dummy entry, which shares the answer alphabet at value 0.
//!
//! Every probabilistic element — Alice's database sampling, Bob's coin,
//! channel noise, measurement outcomes — is an enumerated branch with an
//! exact probability. Nothing is sampled.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::{
    make_layout, DensityOperator, Measurement, PureState, RegisterLayout, UnitaryOp, PRUNE_TOL,
    TOL,
};
use crate::metrics::cq_trace_distance;

/// Query-register index reserved for the dummy entry.
pub const DUMMY_INDEX: usize = 0;
/// Answer-alphabet value of the dummy symbol.
pub const DUMMY_VALUE: usize = 0;
/// Dense-simulation guard on the total Hilbert dimension.
pub const DIMENSION_GUARD: usize = 1_000_000;

fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

// ---------------------------------------------------------------------------
// DatabaseSpec
// ---------------------------------------------------------------------------

/// How Alice's entries are prepared.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DbMode {
    /// Fixed classical entries `x_1..x_n`.
    ClassicalFixed(Vec<usize>),
    /// Entries drawn per query from its valid-answer distribution,
    /// represented as exact classical branches.
    UniformRandom,
    /// Each entry kept as the purification `Σ_x √P(x) |xx⟩` on a register
    /// pair, with the second register retained by Alice.
    Purified,
}

/// Database shape: `n` queries, per-query valid-answer sets over a shared
/// answer alphabet `{0 = dummy, 1, ..}`, and the preparation mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatabaseSpec {
    pub n: usize,
    /// Valid answers per query, values ≥ 1 (the dummy value is reserved).
    pub valid_answers: Vec<Vec<usize>>,
    pub mode: DbMode,
    /// Optional per-query answer distribution, aligned with `valid_answers`;
    /// uniform when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distributions: Option<Vec<Vec<f64>>>,
}

impl DatabaseSpec {
    /// Uniform spec from per-query multiplicities: query `i` accepts the
    /// answers `{1, .., multiplicity_i}`.
    pub fn uniform(multiplicities: &[usize], mode: DbMode) -> Result<Self> {
        let valid_answers: Vec<Vec<usize>> = multiplicities
            .iter()
            .map(|&m| (1..=m).collect())
            .collect();
        let spec = Self {
            n: multiplicities.len(),
            valid_answers,
            mode,
            distributions: None,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidSpec("database has no entries".into()));
        }
        if self.valid_answers.len() != self.n {
            return Err(Error::InvalidSpec(format!(
                "expected {} valid-answer sets, got {}",
                self.n,
                self.valid_answers.len()
            )));
        }
        for (k, answers) in self.valid_answers.iter().enumerate() {
            if answers.is_empty() {
                return Err(Error::InvalidSpec(format!(
                    "query {} has an empty valid-answer set",
                    k + 1
                )));
            }
            if answers.contains(&DUMMY_VALUE) {
                return Err(Error::InvalidSpec(format!(
                    "query {} lists the dummy value {DUMMY_VALUE} as a valid answer",
                    k + 1
                )));
            }
            let mut seen = answers.clone();
            seen.sort_unstable();
            seen.dedup();
            if seen.len() != answers.len() {
                return Err(Error::InvalidSpec(format!(
                    "query {} has duplicate valid answers",
                    k + 1
                )));
            }
        }
        if let Some(dists) = &self.distributions {
            if dists.len() != self.n {
                return Err(Error::InvalidSpec("distribution count mismatch".into()));
            }
            for (k, (dist, answers)) in dists.iter().zip(&self.valid_answers).enumerate() {
                if dist.len() != answers.len() {
                    return Err(Error::InvalidSpec(format!(
                        "distribution length mismatch for query {}",
                        k + 1
                    )));
                }
                if dist.iter().any(|&p| p <= 0.0) {
                    return Err(Error::InvalidSpec(format!(
                        "non-positive probability for query {}",
                        k + 1
                    )));
                }
                let total: f64 = dist.iter().sum();
                if (total - 1.0).abs() > TOL {
                    return Err(Error::InvalidSpec(format!(
                        "distribution for query {} sums to {total}",
                        k + 1
                    )));
                }
            }
        }
        if let DbMode::ClassicalFixed(entries) = &self.mode {
            if entries.len() != self.n {
                return Err(Error::InvalidSpec(format!(
                    "expected {} fixed entries, got {}",
                    self.n,
                    entries.len()
                )));
            }
            for (k, (entry, answers)) in entries.iter().zip(&self.valid_answers).enumerate() {
                if !answers.contains(entry) {
                    return Err(Error::InvalidSpec(format!(
                        "fixed entry {entry} for query {} is not a valid answer",
                        k + 1
                    )));
                }
            }
        }
        Ok(())
    }

    /// Answer-register dimension: dummy plus the largest answer value.
    pub fn answer_dim(&self) -> usize {
        let max = self
            .valid_answers
            .iter()
            .flat_map(|a| a.iter().copied())
            .max()
            .unwrap_or(0);
        max + 1
    }

    pub fn query_dim(&self) -> usize {
        self.n + 1
    }

    pub fn multiplicity(&self, i: usize) -> Result<usize> {
        self.check_query(i)?;
        Ok(self.valid_answers[i - 1].len())
    }

    pub fn is_valid_answer(&self, i: usize, value: usize) -> bool {
        i >= 1 && i <= self.n && self.valid_answers[i - 1].contains(&value)
    }

    pub fn check_query(&self, i: usize) -> Result<()> {
        if i < 1 || i > self.n {
            return Err(Error::InvalidQuery { index: i, n: self.n });
        }
        Ok(())
    }

    /// `(value, probability)` pairs for query `i`.
    pub fn distribution(&self, i: usize) -> Result<Vec<(usize, f64)>> {
        self.check_query(i)?;
        let answers = &self.valid_answers[i - 1];
        match &self.distributions {
            Some(dists) => Ok(answers
                .iter()
                .copied()
                .zip(dists[i - 1].iter().copied())
                .collect()),
            None => {
                let p = 1.0 / answers.len() as f64;
                Ok(answers.iter().map(|&a| (a, p)).collect())
            }
        }
    }

    /// Exhaustive classical assignments with their probabilities.
    pub fn enumerate_assignments(&self) -> Result<Vec<(f64, Vec<usize>)>> {
        let mut acc: Vec<(f64, Vec<usize>)> = vec![(1.0, Vec::new())];
        for i in 1..=self.n {
            let dist = self.distribution(i)?;
            let mut next = Vec::with_capacity(acc.len() * dist.len());
            for (p, prefix) in &acc {
                for (value, q) in &dist {
                    let mut entries = prefix.clone();
                    entries.push(*value);
                    next.push((p * q, entries));
                }
            }
            acc = next;
        }
        Ok(acc)
    }

    /// Data-register names: `x0`, then `x1[,xp1], ..`.
    pub fn data_registers(&self) -> Vec<(String, usize)> {
        let d = self.answer_dim();
        let mut regs = vec![("x0".to_string(), d)];
        for k in 1..=self.n {
            regs.push((format!("x{k}"), d));
            if self.mode == DbMode::Purified {
                regs.push((format!("xp{k}"), d));
            }
        }
        regs
    }

    /// Full run layout: `q1, a1, q2, a2`, then the data registers. Errors
    /// when the total dimension exceeds [`DIMENSION_GUARD`].
    pub fn run_layout(&self) -> Result<RegisterLayout> {
        let d = self.answer_dim();
        let q = self.query_dim();
        let mut regs = vec![
            ("q1".to_string(), q),
            ("a1".to_string(), d),
            ("q2".to_string(), q),
            ("a2".to_string(), d),
        ];
        regs.extend(self.data_registers());
        let total: usize = regs.iter().map(|(_, dim)| dim).product();
        if total > DIMENSION_GUARD {
            return Err(Error::DimensionOverflow(total, DIMENSION_GUARD));
        }
        make_layout(regs)
    }

    fn with_mode(&self, mode: DbMode) -> Self {
        Self {
            mode,
            ..self.clone()
        }
    }
}

/// Correctness/detection slack pair; the covered regimes need ε ≤ δ ≤ 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SecurityParams {
    pub epsilon: f64,
    pub delta: f64,
}

impl SecurityParams {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&epsilon) || !(0.0..=1.0).contains(&delta) || epsilon > delta {
            return Err(Error::Config(format!(
                "security parameters must satisfy 0 <= epsilon <= delta <= 1, got ({epsilon}, {delta})"
            )));
        }
        Ok(Self { epsilon, delta })
    }
}

// ---------------------------------------------------------------------------
// QRAM and query preparation
// ---------------------------------------------------------------------------

/// The QRAM permutation on `(q, a, x0..xn)`: adds the addressed cell's
/// value into the answer register modulo the alphabet size, so
/// `|i⟩|0⟩|x⃗⟩ ↦ |i⟩|x_i⟩|x⃗⟩` with query 0 reading the dummy cell. Data
/// registers are controls and stay untouched; superposed queries entangle
/// query and answer with the data.
pub fn qram_unitary(n: usize, answer_dim: usize) -> Result<UnitaryOp> {
    if n < 1 {
        return Err(Error::InvalidSpec("QRAM needs at least one entry".into()));
    }
    if answer_dim < 2 {
        return Err(Error::InvalidSpec(
            "QRAM needs an answer alphabet beyond the dummy".into(),
        ));
    }
    let q = n + 1;
    let cells = n + 1; // x0..xn
    let total = q * answer_dim * answer_dim.pow(cells as u32);
    if total > DIMENSION_GUARD {
        return Err(Error::DimensionOverflow(total, DIMENSION_GUARD));
    }
    let mut matrix = DMatrix::from_element(total, total, c(0.0));
    // index order: (q, a, x0, .., xn), row-major
    let data_total = answer_dim.pow(cells as u32);
    for qi in 0..q {
        for a in 0..answer_dim {
            for data in 0..data_total {
                // extract x_qi from the packed data index
                let shift = cells - 1 - qi;
                let x_qi = (data / answer_dim.pow(shift as u32)) % answer_dim;
                let a_out = (a + x_qi) % answer_dim;
                let col = (qi * answer_dim + a) * data_total + data;
                let row = (qi * answer_dim + a_out) * data_total + data;
                matrix[(row, col)] = c(1.0);
            }
        }
    }
    let mut target: Vec<(String, usize)> = vec![
        ("q".to_string(), q),
        ("a".to_string(), answer_dim),
    ];
    for k in 0..cells {
        target.push((format!("x{k}"), answer_dim));
    }
    UnitaryOp::new(target, matrix)
}

/// Bob's two query states on a `("q", n+1)` layout for coin `a`:
/// coin 0 sends the plain query `|i⟩` first, coin 1 sends the superposed
/// query `(|0⟩+|i⟩)/√2` first.
pub fn prepare_queries(i: usize, a: u8, n: usize) -> Result<(PureState, PureState)> {
    if i < 1 || i > n {
        return Err(Error::InvalidQuery { index: i, n });
    }
    let layout = make_layout(vec![("q", n + 1)])?;
    let plain = PureState::basis(layout.clone(), &[("q", i)])?;
    let superposed = crate::hilbert::uniform_superposition(&layout, "q", &[0, i])?;
    match a {
        0 => Ok((plain, superposed)),
        1 => Ok((superposed, plain)),
        _ => Err(Error::Config(format!("coin must be 0 or 1, got {a}"))),
    }
}

// ---------------------------------------------------------------------------
// database preparation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct DbBranch {
    pub probability: f64,
    /// Classical entries when the branch is classical.
    pub entries: Option<Vec<usize>>,
    /// State on the data-register layout.
    pub state: PureState,
}

#[derive(Debug, Clone)]
pub struct PreparedDatabase {
    pub layout: RegisterLayout,
    pub branches: Vec<DbBranch>,
}

/// Alice's initial database state per the spec mode: a basis state for
/// fixed entries, exact classical branches for random entries, or the
/// purified register pairs.
pub fn build_database_state(spec: &DatabaseSpec) -> Result<PreparedDatabase> {
    spec.validate()?;
    let layout = make_layout(spec.data_registers())?;
    let branches = match &spec.mode {
        DbMode::ClassicalFixed(entries) => {
            vec![DbBranch {
                probability: 1.0,
                entries: Some(entries.clone()),
                state: classical_db_state(&layout, entries)?,
            }]
        }
        DbMode::UniformRandom => {
            let mut branches = Vec::new();
            for (p, entries) in spec.enumerate_assignments()? {
                branches.push(DbBranch {
                    probability: p,
                    state: classical_db_state(&layout, &entries)?,
                    entries: Some(entries),
                });
            }
            branches
        }
        DbMode::Purified => {
            let d = spec.answer_dim();
            let dummy_layout = make_layout(vec![("x0", d)])?;
            let mut state = PureState::basis(dummy_layout, &[("x0", DUMMY_VALUE)])?;
            for k in 1..=spec.n {
                let pair_layout =
                    make_layout(vec![(format!("x{k}"), d), (format!("xp{k}"), d)])?;
                let mut amps =
                    nalgebra::DVector::from_element(pair_layout.total_dim(), c(0.0));
                for (value, p) in spec.distribution(k)? {
                    amps[pair_layout.flat_index(&[value, value])] = c(p.sqrt());
                }
                let pair = PureState::new(pair_layout, amps)?;
                state = state.tensor(&pair)?;
            }
            vec![DbBranch {
                probability: 1.0,
                entries: None,
                state,
            }]
        }
    };
    let total: f64 = branches.iter().map(|b| b.probability).sum();
    if (total - 1.0).abs() > TOL {
        return Err(Error::ProbabilityNotNormalized(total));
    }
    Ok(PreparedDatabase { layout, branches })
}

fn classical_db_state(layout: &RegisterLayout, entries: &[usize]) -> Result<PureState> {
    let mut assignment: Vec<(String, usize)> = vec![("x0".to_string(), DUMMY_VALUE)];
    for (k, &value) in entries.iter().enumerate() {
        assignment.push((format!("x{}", k + 1), value));
    }
    let refs: Vec<(&str, usize)> = assignment
        .iter()
        .map(|(name, value)| (name.as_str(), *value))
        .collect();
    PureState::basis(layout.clone(), &refs)
}

// ---------------------------------------------------------------------------
// noise
// ---------------------------------------------------------------------------

/// Kraus set of the depolarizing channel `ρ ↦ (1−p)ρ + p·1/d` on a
/// `d`-dimensional register: a scaled identity followed by the d²−1 scaled
/// Heisenberg-Weyl shift/phase unitaries.
pub fn depolarizing_kraus(d: usize, p: f64) -> Vec<DMatrix<C64>> {
    let mut kraus = Vec::with_capacity(d * d);
    let keep = (1.0 - p * ((d * d - 1) as f64) / ((d * d) as f64)).max(0.0).sqrt();
    kraus.push(DMatrix::identity(d, d) * c(keep));
    let scale = p.max(0.0).sqrt() / d as f64;
    if scale > 0.0 {
        for s in 0..d {
            for t in 0..d {
                if s == 0 && t == 0 {
                    continue;
                }
                let mut w = DMatrix::from_element(d, d, c(0.0));
                for k in 0..d {
                    let phase = 2.0 * std::f64::consts::PI * (t * k) as f64 / d as f64;
                    w[((k + s) % d, k)] = C64::new(phase.cos(), phase.sin()) * c(scale);
                }
                kraus.push(w);
            }
        }
    }
    kraus
}

// ---------------------------------------------------------------------------
// protocol execution
// ---------------------------------------------------------------------------

/// Honest-run options: depolarizing noise on the answer registers before
/// each return, and the dishonest-Alice seam — unitaries she may apply to
/// the registers in her possession between receiving a query and
/// returning it.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub noise_p: f64,
    pub alice_after_first: Option<UnitaryOp>,
    pub alice_after_second: Option<UnitaryOp>,
}

impl RunOptions {
    pub fn noiseless() -> Self {
        Self::default()
    }

    pub fn with_noise(p: f64) -> Self {
        Self {
            noise_p: p,
            ..Self::default()
        }
    }

    fn validate(&self, spec: &DatabaseSpec) -> Result<()> {
        if !(0.0..=1.0).contains(&self.noise_p) {
            return Err(Error::Config(format!(
                "noise probability {} outside [0,1]",
                self.noise_p
            )));
        }
        let data: Vec<String> = spec.data_registers().into_iter().map(|(n, _)| n).collect();
        for (op, pair) in [
            (&self.alice_after_first, ["q1", "a1"]),
            (&self.alice_after_second, ["q2", "a2"]),
        ] {
            if let Some(op) = op {
                for name in op.target() {
                    let allowed = pair.contains(&name.as_str()) || data.contains(name);
                    if !allowed {
                        return Err(Error::Config(format!(
                            "Alice cannot act on register `{name}` at this stage"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// One leaf of a protocol execution, after Bob's verification.
#[derive(Debug, Clone)]
pub struct TranscriptBranch {
    pub probability: f64,
    pub coin: u8,
    pub db_entries: Option<Vec<usize>>,
    /// Noise events as `(register, Kraus index)` pairs.
    pub kraus_path: Vec<(String, usize)>,
    /// Outcome of the plain-pair computational measurement.
    pub plain_outcome: Option<(usize, usize)>,
    pub accepted: bool,
    /// Bob's output Y; reject branches carry none.
    pub output: Option<usize>,
    /// Final joint state, measured registers collapsed.
    pub state: PureState,
}

/// Exact branch tree of one protocol execution.
#[derive(Debug, Clone)]
pub struct Transcript {
    pub query: usize,
    pub layout: RegisterLayout,
    pub branches: Vec<TranscriptBranch>,
}

impl Transcript {
    pub fn accept_probability(&self) -> f64 {
        self.branches
            .iter()
            .filter(|b| b.accepted)
            .map(|b| b.probability)
            .sum()
    }

    /// Joint probabilities of `(accepted, Y)` outcomes.
    pub fn answer_distribution(&self) -> Vec<(usize, f64)> {
        let mut acc: Vec<(usize, f64)> = Vec::new();
        for branch in self.branches.iter().filter(|b| b.accepted) {
            if let Some(y) = branch.output {
                match acc.iter_mut().find(|(value, _)| *value == y) {
                    Some((_, p)) => *p += branch.probability,
                    None => acc.push((y, branch.probability)),
                }
            }
        }
        acc.sort_by_key(|(value, _)| *value);
        acc
    }
}

struct RunLeaf {
    probability: f64,
    coin: u8,
    db_entries: Option<Vec<usize>>,
    kraus_path: Vec<(String, usize)>,
    plain_outcome: Option<(usize, usize)>,
    accepted: bool,
    output: Option<usize>,
    state: PureState,
}

/// Plain/superposed answer-register names for a coin.
pub fn plain_registers(coin: u8) -> (&'static str, &'static str) {
    if coin == 0 {
        ("q1", "a1")
    } else {
        ("q2", "a2")
    }
}

pub(crate) fn superposed_registers(coin: u8) -> (&'static str, &'static str) {
    if coin == 0 {
        ("q2", "a2")
    } else {
        ("q1", "a1")
    }
}

/// The joint state just before Bob's verification, for one database branch
/// and coin: queries prepared, both QRAM answers applied, Alice's optional
/// tampering applied, noise not yet applied.
pub(crate) fn pre_noise_state(
    spec: &DatabaseSpec,
    i: usize,
    coin: u8,
    db_state: &PureState,
    opts: &RunOptions,
) -> Result<PureState> {
    let d = spec.answer_dim();
    let (psi1, psi2) = prepare_queries(i, coin, spec.n)?;
    let a_layout = make_layout(vec![("a", d)])?;
    let blank = PureState::basis(a_layout, &[("a", 0)])?;
    let bob = psi1
        .renamed(&["q1"])?
        .tensor(&blank.renamed(&["a1"])?)?
        .tensor(&psi2.renamed(&["q2"])?)?
        .tensor(&blank.renamed(&["a2"])?)?;
    let mut state = bob.tensor(db_state)?;

    let qram = qram_unitary(spec.n, d)?;
    let mut data_names: Vec<String> = vec!["x0".to_string()];
    data_names.extend((1..=spec.n).map(|k| format!("x{k}")));
    let retarget = |pair_q: &str, pair_a: &str| -> Result<UnitaryOp> {
        let mut names: Vec<&str> = vec![pair_q, pair_a];
        names.extend(data_names.iter().map(String::as_str));
        qram.retarget(&names)
    };

    state = state.apply(&retarget("q1", "a1")?)?;
    if let Some(op) = &opts.alice_after_first {
        state = state.apply(op)?;
    }
    state = state.apply(&retarget("q2", "a2")?)?;
    if let Some(op) = &opts.alice_after_second {
        state = state.apply(op)?;
    }
    Ok(state)
}

/// Bob's step-6 verification on a pre-measurement state: measure the plain
/// pair in the computational basis and check for `(i, valid answer)`, then
/// project the superposed pair onto `(|0,d⟩+|i,Y⟩)/√2`.
pub(crate) fn visit_bob_checks(
    state: &PureState,
    weight: f64,
    coin: u8,
    i: usize,
    spec: &DatabaseSpec,
    leaf: &mut dyn FnMut(f64, Option<(usize, usize)>, bool, Option<usize>, PureState) -> Result<()>,
) -> Result<()> {
    let (q_plain, a_plain) = plain_registers(coin);
    let (q_sup, a_sup) = superposed_registers(coin);
    let d = spec.answer_dim();
    for (assignment, prob, post) in state.measure_computational(&[q_plain, a_plain])? {
        let (qv, av) = (assignment[0], assignment[1]);
        let first_ok = qv == i && spec.is_valid_answer(i, av);
        if !first_ok {
            leaf(weight * prob, Some((qv, av)), false, None, post)?;
            continue;
        }
        // target superposition (|0,d⟩ + |i,Y⟩)/√2 on the held-back pair
        let pair_layout = make_layout(vec![(q_sup, spec.query_dim()), (a_sup, d)])?;
        let mut amps = nalgebra::DVector::from_element(pair_layout.total_dim(), c(0.0));
        let inv = c(1.0 / 2f64.sqrt());
        amps[pair_layout.flat_index(&[DUMMY_INDEX, DUMMY_VALUE])] = inv;
        amps[pair_layout.flat_index(&[i, av])] = inv;
        let target = PureState::new(pair_layout, amps)?;
        let check = Measurement::projective_check(&target)?;
        for branch in post.measure(&check)? {
            let pass = branch.label == "pass";
            leaf(
                weight * prob * branch.probability,
                Some((qv, av)),
                pass,
                pass.then_some(av),
                branch.state,
            )?;
        }
    }
    Ok(())
}

/// Drive one full honest execution, calling the visitor on every leaf.
fn visit_runs<F>(spec: &DatabaseSpec, i: usize, opts: &RunOptions, mut visit: F) -> Result<()>
where
    F: FnMut(RunLeaf) -> Result<()>,
{
    spec.validate()?;
    spec.check_query(i)?;
    opts.validate(spec)?;
    spec.run_layout()?; // dimension guard
    let db = build_database_state(spec)?;
    let kraus = if opts.noise_p > 0.0 {
        Some(depolarizing_kraus(spec.answer_dim(), opts.noise_p))
    } else {
        None
    };
    for db_branch in &db.branches {
        for coin in [0u8, 1u8] {
            let pre = pre_noise_state(spec, i, coin, &db_branch.state, opts)?;
            let base = db_branch.probability * 0.5;
            visit_noise(
                &pre,
                base,
                Vec::new(),
                &["a1", "a2"],
                kraus.as_deref(),
                &mut |weight, path, noisy| {
                    visit_bob_checks(
                        noisy,
                        weight,
                        coin,
                        i,
                        spec,
                        &mut |probability, plain_outcome, accepted, output, state| {
                            if probability < PRUNE_TOL {
                                return Ok(());
                            }
                            visit(RunLeaf {
                                probability,
                                coin,
                                db_entries: db_branch.entries.clone(),
                                kraus_path: path.clone(),
                                plain_outcome,
                                accepted,
                                output,
                                state,
                            })
                        },
                    )
                },
            )?;
        }
    }
    Ok(())
}

/// Depth-first enumeration of noise branches on the listed registers.
fn visit_noise(
    state: &PureState,
    weight: f64,
    path: Vec<(String, usize)>,
    regs: &[&str],
    kraus: Option<&[DMatrix<C64>]>,
    visit: &mut impl FnMut(f64, &Vec<(String, usize)>, &PureState) -> Result<()>,
) -> Result<()> {
    match (regs.split_first(), kraus) {
        (None, _) | (_, None) => visit(weight, &path, state),
        (Some((reg, rest)), Some(kraus_ops)) => {
            for (idx, op) in kraus_ops.iter().enumerate() {
                let (prob, post) = state.apply_kraus_element(op, &[reg])?;
                if let Some(post) = post {
                    if weight * prob < PRUNE_TOL {
                        continue;
                    }
                    let mut next = path.clone();
                    next.push((reg.to_string(), idx));
                    visit_noise(&post, weight * prob, next, rest, kraus, visit)?;
                }
            }
            Ok(())
        }
    }
}

/// Full branch-tree execution of one honest (possibly noisy, possibly
/// tampered) run with query `i`.
pub fn honest_run(spec: &DatabaseSpec, i: usize, opts: &RunOptions) -> Result<Transcript> {
    let mut branches = Vec::new();
    visit_runs(spec, i, opts, |leaf| {
        branches.push(TranscriptBranch {
            probability: leaf.probability,
            coin: leaf.coin,
            db_entries: leaf.db_entries,
            kraus_path: leaf.kraus_path,
            plain_outcome: leaf.plain_outcome,
            accepted: leaf.accepted,
            output: leaf.output,
            state: leaf.state,
        });
        Ok(())
    })?;
    let total: f64 = branches.iter().map(|b| b.probability).sum();
    if (total - 1.0).abs() > TOL {
        return Err(Error::ProbabilityNotNormalized(total));
    }
    Ok(Transcript {
        query: i,
        layout: spec.run_layout()?,
        branches,
    })
}

/// `1 − Pr[accept ∧ Y = x_i]` for one transcript. In purified mode the
/// match probability reads the `x_i` register of each accepting leaf, which
/// is Alice's deferred sampling evaluated at the end.
pub fn correctness_error(t: &Transcript) -> Result<f64> {
    let mut good = 0.0;
    for branch in t.branches.iter().filter(|b| b.accepted) {
        let y = match branch.output {
            Some(y) => y,
            None => continue,
        };
        match &branch.db_entries {
            Some(entries) => {
                if entries[t.query - 1] == y {
                    good += branch.probability;
                }
            }
            None => {
                let reg = format!("x{}", t.query);
                good += branch.probability * branch.state.marginal_probability(&reg, y)?;
            }
        }
    }
    Ok((1.0 - good).clamp(0.0, 1.0))
}

/// Scalar summary of one run, accumulated branch by branch without
/// retaining states.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub query: usize,
    pub accept_probability: f64,
    pub correctness_error: f64,
    /// Joint probabilities of accepting with output Y.
    pub answer_distribution: Vec<(usize, f64)>,
    pub branch_count: usize,
}

/// Stream one execution into scalars.
pub fn run_summary(spec: &DatabaseSpec, i: usize, opts: &RunOptions) -> Result<RunSummary> {
    let mut accept = 0.0;
    let mut good = 0.0;
    let mut answers: std::collections::BTreeMap<usize, f64> = std::collections::BTreeMap::new();
    let mut branch_count = 0usize;
    visit_runs(spec, i, opts, |leaf| {
        branch_count += 1;
        if leaf.accepted {
            accept += leaf.probability;
            if let Some(y) = leaf.output {
                *answers.entry(y).or_insert(0.0) += leaf.probability;
                match &leaf.db_entries {
                    Some(entries) => {
                        if entries[i - 1] == y {
                            good += leaf.probability;
                        }
                    }
                    None => {
                        let reg = format!("x{i}");
                        good += leaf.probability * leaf.state.marginal_probability(&reg, y)?;
                    }
                }
            }
        }
        Ok(())
    })?;
    Ok(RunSummary {
        query: i,
        accept_probability: accept,
        correctness_error: (1.0 - good).clamp(0.0, 1.0),
        answer_distribution: answers.into_iter().collect(),
        branch_count,
    })
}

/// Measured correctness slack ε of the configuration: the worst
/// `1 − Pr[accept ∧ Y = x_i]` over all queries, and over all database
/// contents in fixed mode. Honest correctness quantifies classical
/// databases, so purified specs are evaluated through the equivalent
/// random-entry ensemble (the deferred sampling commutes with every
/// protocol operation).
pub fn estimate_correctness(spec: &DatabaseSpec, opts: &RunOptions) -> Result<f64> {
    let effective = match spec.mode {
        DbMode::Purified => spec.with_mode(DbMode::UniformRandom),
        _ => spec.clone(),
    };
    let variants: Vec<DatabaseSpec> = match &effective.mode {
        DbMode::ClassicalFixed(_) => effective
            .enumerate_assignments()?
            .into_iter()
            .map(|(_, entries)| effective.with_mode(DbMode::ClassicalFixed(entries)))
            .collect(),
        _ => vec![effective.clone()],
    };
    let mut worst = 0.0f64;
    for variant in &variants {
        for i in 1..=variant.n {
            let mut good = 0.0;
            visit_runs(variant, i, opts, |leaf| {
                if leaf.accepted {
                    if let (Some(y), Some(entries)) = (leaf.output, &leaf.db_entries) {
                        if entries[i - 1] == y {
                            good += leaf.probability;
                        }
                    }
                }
                Ok(())
            })?;
            worst = worst.max((1.0 - good).clamp(0.0, 1.0));
        }
    }
    Ok(worst)
}

// ---------------------------------------------------------------------------
// user privacy
// ---------------------------------------------------------------------------

/// Alice's strategy for the user-privacy evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PrivacyStrategy {
    Honest,
    PurifiedDatabase,
}

/// Worst-case trace distance between Alice's end-of-protocol marginals
/// over any query pair, combined over her classical information (database
/// sampling and noise events) with the cq rule. Register pairs outside the
/// queried pair stay in identical pure product states across both runs, so
/// the distance is evaluated on the registers that can differ:
/// `x0, x_i(,xp_i), x_j(,xp_j)`.
pub fn user_privacy_gap(
    spec: &DatabaseSpec,
    strategy: PrivacyStrategy,
    opts: &RunOptions,
) -> Result<f64> {
    let effective = match strategy {
        PrivacyStrategy::Honest => match spec.mode {
            DbMode::Purified => spec.with_mode(DbMode::UniformRandom),
            _ => spec.clone(),
        },
        PrivacyStrategy::PurifiedDatabase => spec.with_mode(DbMode::Purified),
    };
    if effective.n < 2 {
        return Ok(0.0);
    }
    let mut gap = 0.0f64;
    for i in 1..=effective.n {
        for j in (i + 1)..=effective.n {
            let regs = marginal_registers(&effective, i, j);
            let reg_refs: Vec<&str> = regs.iter().map(String::as_str).collect();
            let run_i = alice_marginal_branches(&effective, i, opts, &reg_refs)?;
            let run_j = alice_marginal_branches(&effective, j, opts, &reg_refs)?;
            if run_i.len() != run_j.len() {
                return Err(Error::LayoutMismatch(
                    "classical branch trees of the two runs do not align".into(),
                ));
            }
            let mut branches = Vec::with_capacity(run_i.len());
            for ((pi, ki, rho_i), (pj, kj, rho_j)) in run_i.into_iter().zip(run_j) {
                if (pi - pj).abs() > TOL || ki != kj {
                    return Err(Error::LayoutMismatch(
                        "classical branch trees of the two runs do not align".into(),
                    ));
                }
                branches.push((pi, rho_i, rho_j));
            }
            gap = gap.max(cq_trace_distance(&branches)?);
        }
    }
    Ok(gap)
}

/// Data registers on which runs with queries `i` and `j` can differ.
pub fn marginal_registers(spec: &DatabaseSpec, i: usize, j: usize) -> Vec<String> {
    let mut regs = vec!["x0".to_string()];
    let mut pair = [i, j];
    pair.sort_unstable();
    for k in pair {
        regs.push(format!("x{k}"));
        if spec.mode == DbMode::Purified {
            regs.push(format!("xp{k}"));
        }
    }
    regs
}

/// Alice's marginal per classical branch `(database sampling, noise
/// events)`, with Bob's coin averaged into the state (she never learns it).
fn alice_marginal_branches(
    spec: &DatabaseSpec,
    i: usize,
    opts: &RunOptions,
    regs: &[&str],
) -> Result<Vec<(f64, BranchKey, DensityOperator)>> {
    spec.validate()?;
    spec.check_query(i)?;
    opts.validate(spec)?;
    let db = build_database_state(spec)?;
    let kraus = if opts.noise_p > 0.0 {
        Some(depolarizing_kraus(spec.answer_dim(), opts.noise_p))
    } else {
        None
    };
    let mut out: Vec<(f64, BranchKey, DensityOperator)> = Vec::new();
    for db_branch in &db.branches {
        let mut per_key: Vec<(f64, BranchKey, Vec<(f64, DensityOperator)>)> = Vec::new();
        for coin in [0u8, 1u8] {
            let pre = pre_noise_state(spec, i, coin, &db_branch.state, opts)?;
            visit_noise(
                &pre,
                1.0,
                Vec::new(),
                &["a1", "a2"],
                kraus.as_deref(),
                &mut |weight, path, noisy| {
                    let reduced = noisy.reduced_density(regs)?;
                    let key = BranchKey {
                        entries: db_branch.entries.clone(),
                        kraus_path: path.clone(),
                    };
                    match per_key.iter_mut().find(|(_, k, _)| *k == key) {
                        Some((_, _, parts)) => parts.push((0.5 * weight, reduced)),
                        None => per_key.push((weight, key, vec![(0.5 * weight, reduced)])),
                    }
                    Ok(())
                },
            )?;
        }
        for (weight, key, parts) in per_key {
            let branch_prob = db_branch.probability * weight;
            let dim = parts[0].1.dim();
            let mut matrix = DMatrix::from_element(dim, dim, c(0.0));
            let total: f64 = parts.iter().map(|(p, _)| p).sum();
            for (p, rho) in &parts {
                matrix += rho.matrix() * c(p / total);
            }
            let layout = parts[0].1.layout().clone();
            out.push((branch_prob, key, DensityOperator::new(layout, matrix)?));
        }
    }
    let total: f64 = out.iter().map(|(p, _, _)| p).sum();
    if (total - 1.0).abs() > TOL {
        return Err(Error::ProbabilityNotNormalized(total));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct BranchKey {
    entries: Option<Vec<usize>>,
    kraus_path: Vec<(String, usize)>,
}
