//! Executable versions of both attacks, with measured-vs-bound reporting.
//!
//! Both attacks are undetectable by construction: every attack-specific
//! operation happens strictly after the final protocol message, so the
//! honest party's view of the protocol phase is an honest run.
//!
//! The sequential extraction conditions its per-branch chain on the full
//! classical branch label (database sampling, Bob's coin, noise events).
//! Coin and extracted values are Bob's own information; conditioning on
//! the rest makes the witness at least as strong as the rotation the
//! security argument guarantees, so every reported quantity still has to
//! satisfy the bounds it is compared against.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use serde::Serialize;

use crate::bounds::{gentle_bounds, specific_bound, step_bound, theorem1_bound};
use crate::error::{Error, Result};
use crate::glm08::{
    build_database_state, depolarizing_kraus, honest_run, plain_registers, pre_noise_state,
    superposed_registers, visit_bob_checks, DatabaseSpec, DbMode, RunOptions, DUMMY_INDEX,
    DUMMY_VALUE,
};
use crate::hilbert::{make_layout, DensityOperator, PureState, PRUNE_TOL, TOL};
use crate::metrics::{helstrom, trace_distance, uhlmann_rotation};

/// Bob's registers, the side the extraction rotations act on.
pub const BOB_SIDE: [&str; 4] = ["q1", "a1", "q2", "a2"];

fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

// ---------------------------------------------------------------------------
// specific attack: purified database
// ---------------------------------------------------------------------------

/// Outcome of the purified-database distinguishing attack.
#[derive(Debug, Clone, Serialize)]
pub struct SpecificAttackReport {
    pub query_pair: (usize, usize),
    pub repetitions: usize,
    /// Probability that Bob accepts every repetition of the attacked run.
    pub bob_accept_probability: f64,
    /// Conditional accept probability of each repetition.
    pub accept_probability_per_repetition: Vec<f64>,
    /// Bob's accept probability against an honest (classically sampled)
    /// database, the undetectability baseline.
    pub honest_accept_probability: f64,
    /// Probability that all repetitions return the same answer.
    pub answer_consistency_probability: f64,
    /// Per-repetition distribution of Bob's output.
    pub answer_statistics_per_repetition: Vec<Vec<(usize, f64)>>,
    /// Trace distance between Alice's end-of-protocol marginals for the
    /// two queries.
    pub measured_distance: f64,
    /// The distinguishing bound `1 − 1/max(|X_i|,|X_j|)`.
    pub paper_bound: f64,
    /// Helstrom success probability, `1/2 + D/2`.
    pub helstrom_success: f64,
}

impl SpecificAttackReport {
    /// Violated invariants, if any; empty means the report is consistent.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if (self.helstrom_success - (0.5 + self.measured_distance / 2.0)).abs() > TOL {
            out.push(format!(
                "helstrom success {} differs from 1/2 + D/2 = {}",
                self.helstrom_success,
                0.5 + self.measured_distance / 2.0
            ));
        }
        if self.measured_distance < self.paper_bound - TOL {
            out.push(format!(
                "measured distance {} below the bound {}",
                self.measured_distance, self.paper_bound
            ));
        }
        if (self.bob_accept_probability - self.honest_accept_probability).abs() > TOL {
            out.push(format!(
                "attacked accept probability {} differs from the honest value {}",
                self.bob_accept_probability, self.honest_accept_probability
            ));
        }
        out
    }
}

/// State of one attacked-protocol branch between repetitions: Alice's data
/// registers plus the answers Bob obtained so far.
struct RepetitionBranch {
    probability: f64,
    db_state: PureState,
    outputs: Vec<usize>,
}

/// Alice keeps every database entry purified, runs `r` repetitions of the
/// protocol with Bob's query fixed, and afterwards distinguishes queries
/// `i` and `j` with the Helstrom measurement on her marginal.
pub fn purified_database_attack(
    spec: &DatabaseSpec,
    i: usize,
    j: usize,
    repetitions: usize,
) -> Result<SpecificAttackReport> {
    spec.check_query(i)?;
    spec.check_query(j)?;
    if i == j {
        return Err(Error::InvalidSpec(
            "the distinguishing attack needs two distinct queries".into(),
        ));
    }
    if repetitions == 0 {
        return Err(Error::InvalidSpec("at least one repetition".into()));
    }
    let purified = DatabaseSpec {
        mode: DbMode::Purified,
        ..spec.clone()
    };
    let run_i = attacked_repetitions(&purified, i, repetitions)?;
    let run_j = attacked_repetitions(&purified, j, repetitions)?;

    // Alice's marginal: every register pair outside {i, j} stays in the
    // same pure product state across both runs, so the distance lives on
    // x0 and the two queried pairs.
    let regs = crate::glm08::marginal_registers(&purified, i, j);
    let reg_refs: Vec<&str> = regs.iter().map(String::as_str).collect();
    let rho_i = final_marginal(&run_i, &reg_refs)?;
    let rho_j = final_marginal(&run_j, &reg_refs)?;
    let measured_distance = trace_distance(&rho_i, &rho_j)?;
    let discrimination = helstrom(&rho_i, &rho_j)?;

    // undetectability baseline: the same Bob against an honest Alice
    let honest_spec = DatabaseSpec {
        mode: DbMode::UniformRandom,
        ..spec.clone()
    };
    let honest = honest_run(&honest_spec, i, &RunOptions::noiseless())?;

    Ok(SpecificAttackReport {
        query_pair: (i, j),
        repetitions,
        bob_accept_probability: run_i.joint_accept,
        accept_probability_per_repetition: run_i.per_repetition_accept,
        honest_accept_probability: honest.accept_probability(),
        answer_consistency_probability: run_i.consistency,
        answer_statistics_per_repetition: run_i.answer_statistics,
        measured_distance,
        paper_bound: specific_bound(spec.multiplicity(i)?, spec.multiplicity(j)?)?,
        helstrom_success: discrimination.success_probability,
    })
}

struct RepetitionOutcome {
    branches: Vec<RepetitionBranch>,
    joint_accept: f64,
    per_repetition_accept: Vec<f64>,
    consistency: f64,
    answer_statistics: Vec<Vec<(usize, f64)>>,
}

/// Run `r` repetitions of the protocol with the given query against the
/// purified database, Bob honest. Reject branches terminate; accepting
/// branches carry Alice's data registers into the next repetition.
fn attacked_repetitions(
    spec: &DatabaseSpec,
    query: usize,
    repetitions: usize,
) -> Result<RepetitionOutcome> {
    let db = build_database_state(spec)?;
    let mut branches: Vec<RepetitionBranch> = db
        .branches
        .iter()
        .map(|b| RepetitionBranch {
            probability: b.probability,
            db_state: b.state.clone(),
            outputs: Vec::new(),
        })
        .collect();
    let mut per_repetition_accept = Vec::with_capacity(repetitions);
    let mut answer_statistics = Vec::with_capacity(repetitions);
    let opts = RunOptions::noiseless();
    let d = spec.answer_dim();
    let q_dim = spec.query_dim();

    for _ in 0..repetitions {
        let entering: f64 = branches.iter().map(|b| b.probability).sum();
        let mut next: Vec<RepetitionBranch> = Vec::new();
        let mut accepted_mass = 0.0;
        let mut answers: BTreeMap<usize, f64> = BTreeMap::new();
        for branch in &branches {
            for coin in [0u8, 1u8] {
                let full = pre_noise_state(spec, query, coin, &branch.db_state, &opts)?;
                let weight = branch.probability * 0.5;
                visit_bob_checks(
                    &full,
                    weight,
                    coin,
                    query,
                    spec,
                    &mut |probability, _outcome, accepted, output, state| {
                        if probability < PRUNE_TOL || !accepted {
                            return Ok(());
                        }
                        let y = output.expect("accepting branch carries an output");
                        accepted_mass += probability;
                        *answers.entry(y).or_insert(0.0) += probability;
                        // Bob's four registers end in a known product state;
                        // peel them off and keep Alice's side for the next
                        // repetition
                        let known = bob_end_state(coin, query, y, q_dim, d)?;
                        let db_state = state.factor_out(&BOB_SIDE, &known)?;
                        let mut outputs = branch.outputs.clone();
                        outputs.push(y);
                        next.push(RepetitionBranch {
                            probability,
                            db_state,
                            outputs,
                        });
                        Ok(())
                    },
                )?;
            }
        }
        per_repetition_accept.push(if entering > 0.0 {
            accepted_mass / entering
        } else {
            0.0
        });
        answer_statistics.push(
            answers
                .into_iter()
                .map(|(y, p)| (y, if entering > 0.0 { p / entering } else { 0.0 }))
                .collect(),
        );
        branches = next;
    }

    let joint_accept: f64 = branches.iter().map(|b| b.probability).sum();
    let consistent: f64 = branches
        .iter()
        .filter(|b| b.outputs.windows(2).all(|w| w[0] == w[1]))
        .map(|b| b.probability)
        .sum();
    Ok(RepetitionOutcome {
        consistency: if joint_accept > 0.0 {
            consistent / joint_accept
        } else {
            0.0
        },
        branches,
        joint_accept,
        per_repetition_accept,
        answer_statistics,
    })
}

/// Bob's four registers after an accepting repetition with output `y`:
/// the plain pair collapsed onto `(query, y)`, the superposed pair
/// projected onto `(|0,d⟩+|query,y⟩)/√2`.
fn bob_end_state(coin: u8, query: usize, y: usize, q_dim: usize, d: usize) -> Result<PureState> {
    let (q_plain, a_plain) = plain_registers(coin);
    let (q_sup, a_sup) = superposed_registers(coin);
    let plain_layout = make_layout(vec![(q_plain, q_dim), (a_plain, d)])?;
    let plain = PureState::basis(plain_layout, &[(q_plain, query), (a_plain, y)])?;
    let sup_layout = make_layout(vec![(q_sup, q_dim), (a_sup, d)])?;
    let mut amps = nalgebra::DVector::from_element(sup_layout.total_dim(), c(0.0));
    let inv = c(1.0 / 2f64.sqrt());
    amps[sup_layout.flat_index(&[DUMMY_INDEX, DUMMY_VALUE])] = inv;
    amps[sup_layout.flat_index(&[query, y])] = inv;
    let sup = PureState::new(sup_layout, amps)?;
    // tensor in layout order q1, a1, q2, a2
    if coin == 0 {
        plain.tensor(&sup)
    } else {
        sup.tensor(&plain)
    }
}

/// Normalized mixture of the final data-register marginals.
fn final_marginal(run: &RepetitionOutcome, regs: &[&str]) -> Result<DensityOperator> {
    let total = run.joint_accept;
    if total <= 0.0 {
        return Err(Error::ProbabilityNotNormalized(total));
    }
    let mut parts: Vec<(f64, DensityOperator)> = Vec::with_capacity(run.branches.len());
    for branch in &run.branches {
        parts.push((
            branch.probability / total,
            branch.db_state.reduced_density(regs)?,
        ));
    }
    let dim = parts[0].1.dim();
    let layout = parts[0].1.layout().clone();
    let mut matrix = DMatrix::from_element(dim, dim, c(0.0));
    for (p, rho) in &parts {
        matrix += rho.matrix() * c(*p);
    }
    DensityOperator::new(layout, matrix)
}

// ---------------------------------------------------------------------------
// extraction step
// ---------------------------------------------------------------------------

/// One outcome branch of an extraction step.
#[derive(Debug, Clone)]
pub struct ExtractionOutcome {
    /// Extracted database value.
    pub value: usize,
    /// Probability of this outcome.
    pub probability: f64,
    /// Probability that the value matches Alice's entry, read from the
    /// `x_from` register of the post-measurement state.
    pub correct_probability: f64,
    /// Post state rotated toward the reference for `to`.
    pub state: PureState,
    /// Trace distance of the rotated state to that reference.
    pub rotation_distance: f64,
}

/// Measure the answer register of the current state in the computational
/// basis (extracting entry `from`), then rotate each outcome branch toward
/// the reference state for query `to` with the optimal unitary on
/// `bob_side`.
pub fn extraction_step(
    current: &PureState,
    from: usize,
    to: usize,
    references: &BTreeMap<usize, PureState>,
    bob_side: &[&str],
    answer_reg: &str,
) -> Result<Vec<ExtractionOutcome>> {
    references
        .get(&from)
        .ok_or(Error::MissingReference(from))?;
    let reference = references.get(&to).ok_or(Error::MissingReference(to))?;
    let truth_reg = format!("x{from}");
    let mut out = Vec::new();
    for (assignment, probability, post) in current.measure_computational(&[answer_reg])? {
        let value = assignment[0];
        let correct_probability = post.marginal_probability(&truth_reg, value)?;
        let rotation = uhlmann_rotation(&post, reference, bob_side)?;
        let state = post.apply(&rotation)?;
        let rotation_distance = state.trace_distance_to(reference)?;
        out.push(ExtractionOutcome {
            value,
            probability,
            correct_probability,
            state,
            rotation_distance,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// generic attack: sequential extraction
// ---------------------------------------------------------------------------

/// Outcome of the sequential-extraction attack.
#[derive(Debug, Clone, Serialize)]
pub struct GenericAttackReport {
    pub m: usize,
    pub noise_p: f64,
    /// Measured correctness slack of the protocol configuration,
    /// maximized over queries.
    pub epsilon: f64,
    /// Per-step failure probabilities ε_l, l = 1..m.
    pub step_failures: Vec<f64>,
    /// Per-step bounds l·(3√ε+ε).
    pub step_bounds: Vec<f64>,
    /// Probability that all m extracted values match Alice's entries.
    pub overall_success: f64,
    /// `max(0, 1 − 2m²√ε)`.
    pub theorem_bound: f64,
    /// Branch-averaged trace distance between the chain state entering
    /// step l and the reference for query l.
    pub chain_damage: Vec<f64>,
    /// `(l−1)·(3√ε+ε)` per step.
    pub chain_damage_bounds: Vec<f64>,
    /// Branch-averaged distance of the rotated state to the next
    /// reference, per step 1..m−1.
    pub rotation_distances: Vec<f64>,
    /// `2√ε`.
    pub rotation_bound: f64,
    /// Trace distance between Alice's view of the attacked protocol phase
    /// and an honest run (undetectability; 0 up to roundoff).
    pub alice_view_distance: f64,
    /// Joint success probabilities for entry pairs, 1-based indices ≤ m.
    pub pairwise_success: Vec<Vec<f64>>,
}

impl GenericAttackReport {
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let slack = 1e-8;
        if self.overall_success < self.theorem_bound - slack {
            out.push(format!(
                "overall success {} below the bound {}",
                self.overall_success, self.theorem_bound
            ));
        }
        for (l, (&failure, &bound)) in self
            .step_failures
            .iter()
            .zip(&self.step_bounds)
            .enumerate()
        {
            if failure > bound + slack {
                out.push(format!(
                    "step {} failure {} above the bound {}",
                    l + 1,
                    failure,
                    bound
                ));
            }
        }
        for (l, (&damage, &bound)) in self
            .chain_damage
            .iter()
            .zip(&self.chain_damage_bounds)
            .enumerate()
        {
            if damage > bound + slack {
                out.push(format!(
                    "chain damage {} before step {} above the bound {}",
                    damage,
                    l + 1,
                    bound
                ));
            }
        }
        for (l, &dist) in self.rotation_distances.iter().enumerate() {
            if dist > self.rotation_bound + slack {
                out.push(format!(
                    "rotation distance {} at step {} above the bound {}",
                    dist,
                    l + 1,
                    self.rotation_bound
                ));
            }
        }
        if self.alice_view_distance > TOL {
            out.push(format!(
                "Alice's view of the attacked run deviates by {}",
                self.alice_view_distance
            ));
        }
        out
    }
}

struct ChainStats {
    step_failures: Vec<f64>,
    chain_damage: Vec<f64>,
    rotation_distances: Vec<f64>,
    overall_success: f64,
    pairwise_success: Vec<Vec<f64>>,
    total_weight: f64,
}

/// Bob runs the protocol honestly with query 1 while keeping all of his
/// measurements coherent, then extracts entries `1..m` step by step:
/// measure the plain answer register, rotate toward the next query's
/// reference state. References come from honest runs in the matching
/// classical branch.
///
/// Purified-mode specs are evaluated through the equivalent
/// uniform-random ensemble: Alice's deferred sampling commutes with
/// every operation of Bob's, so extracted-vs-entry statistics agree.
pub fn sequential_extraction_attack(
    spec: &DatabaseSpec,
    m: usize,
    noise_p: f64,
) -> Result<GenericAttackReport> {
    spec.validate()?;
    if matches!(spec.mode, DbMode::ClassicalFixed(_)) {
        return Err(Error::InvalidSpec(
            "the extraction attack quantifies random databases; use \
             uniform-random or purified mode"
                .into(),
        ));
    }
    if m < 2 || m > spec.n {
        return Err(Error::Config(format!(
            "extraction size m={m} outside 2..=n={}",
            spec.n
        )));
    }
    let classical = DatabaseSpec {
        mode: DbMode::UniformRandom,
        ..spec.clone()
    };
    classical.run_layout()?; // dimension guard
    let opts = RunOptions::with_noise(noise_p);
    let epsilon = crate::glm08::estimate_correctness(&classical, &opts)?;

    let kraus = depolarizing_kraus(classical.answer_dim(), noise_p);
    let mut stats = ChainStats {
        step_failures: vec![0.0; m],
        chain_damage: vec![0.0; m],
        rotation_distances: vec![0.0; m - 1],
        overall_success: 0.0,
        pairwise_success: vec![vec![0.0; m]; m],
        total_weight: 0.0,
    };

    for (db_prob, entries) in classical.enumerate_assignments()? {
        let fixed = DatabaseSpec {
            mode: DbMode::ClassicalFixed(entries.clone()),
            ..classical.clone()
        };
        let db = build_database_state(&fixed)?;
        let db_state = &db.branches[0].state;
        for coin in [0u8, 1u8] {
            // pre-noise end-of-protocol states for each query
            let mut pre = Vec::with_capacity(m);
            for query in 1..=m {
                pre.push(pre_noise_state(&fixed, query, coin, db_state, &RunOptions::noiseless())?);
            }
            let (_, a_plain) = plain_registers(coin);
            // enumerate noise on both answer registers, applying the same
            // Kraus indices to every reference
            for idx1 in 0..kraus.len() {
                let mut after_first = Vec::with_capacity(m);
                let mut prob1 = None;
                for state in &pre {
                    let (p, post) = state.apply_kraus_element(&kraus[idx1], &["a1"])?;
                    match prob1 {
                        None => prob1 = Some(p),
                        Some(q) => {
                            debug_assert!((p - q).abs() < 1e-12);
                        }
                    }
                    match post {
                        Some(post) => after_first.push(post),
                        None => break,
                    }
                }
                let prob1 = prob1.unwrap_or(0.0);
                if after_first.len() < m || db_prob * 0.5 * prob1 < PRUNE_TOL {
                    continue;
                }
                for idx2 in 0..kraus.len() {
                    let mut refs = BTreeMap::new();
                    let mut prob2 = None;
                    for (query, state) in (1..=m).zip(&after_first) {
                        let (p, post) = state.apply_kraus_element(&kraus[idx2], &["a2"])?;
                        match prob2 {
                            None => prob2 = Some(p),
                            Some(q) => {
                                debug_assert!((p - q).abs() < 1e-12);
                            }
                        }
                        if let Some(post) = post {
                            refs.insert(query, post);
                        }
                    }
                    let prob2 = prob2.unwrap_or(0.0);
                    let weight = db_prob * 0.5 * prob1 * prob2;
                    if refs.len() < m || weight < PRUNE_TOL {
                        continue;
                    }
                    let start = refs.get(&1).expect("reference for query 1").clone();
                    run_chain(
                        &start,
                        1,
                        weight,
                        &mut Vec::new(),
                        &refs,
                        &entries,
                        a_plain,
                        m,
                        &mut stats,
                    )?;
                }
            }
        }
    }

    if (stats.total_weight - 1.0).abs() > TOL {
        return Err(Error::ProbabilityNotNormalized(stats.total_weight));
    }

    let alice_view_distance = alice_view_deviation(&classical, &opts)?;
    let (_, _, rotation_bound, _) = gentle_bounds(epsilon);
    Ok(GenericAttackReport {
        m,
        noise_p,
        epsilon,
        step_failures: stats.step_failures,
        step_bounds: (1..=m).map(|l| step_bound(l, epsilon).min(1.0)).collect(),
        overall_success: stats.overall_success,
        theorem_bound: theorem1_bound(m, epsilon)?,
        chain_damage: stats.chain_damage,
        chain_damage_bounds: (1..=m)
            .map(|l| (step_bound(l - 1, epsilon)).min(1.0))
            .collect(),
        rotation_distances: stats.rotation_distances,
        rotation_bound,
        alice_view_distance,
        pairwise_success: stats.pairwise_success,
    })
}

#[allow(clippy::too_many_arguments)]
fn run_chain(
    current: &PureState,
    step: usize,
    weight: f64,
    flags: &mut Vec<bool>,
    references: &BTreeMap<usize, PureState>,
    entries: &[usize],
    answer_reg: &str,
    m: usize,
    stats: &mut ChainStats,
) -> Result<()> {
    let reference = references.get(&step).ok_or(Error::MissingReference(step))?;
    stats.chain_damage[step - 1] += weight * current.trace_distance_to(reference)?;
    if step == m {
        // last step: plain measurement, no rotation
        for (assignment, p, _post) in current.measure_computational(&[answer_reg])? {
            let flag = assignment[0] == entries[step - 1];
            flags.push(flag);
            tally_leaf(weight * p, flags, stats, m);
            flags.pop();
        }
        return Ok(());
    }
    for outcome in extraction_step(current, step, step + 1, references, &BOB_SIDE, answer_reg)? {
        let flag = outcome.value == entries[step - 1];
        debug_assert!(
            (outcome.correct_probability - if flag { 1.0 } else { 0.0 }).abs() < 1e-9,
            "classical branches carry deterministic entries"
        );
        stats.rotation_distances[step - 1] += weight * outcome.probability * outcome.rotation_distance;
        flags.push(flag);
        run_chain(
            &outcome.state,
            step + 1,
            weight * outcome.probability,
            flags,
            references,
            entries,
            answer_reg,
            m,
            stats,
        )?;
        flags.pop();
    }
    Ok(())
}

fn tally_leaf(weight: f64, flags: &[bool], stats: &mut ChainStats, m: usize) {
    stats.total_weight += weight;
    for (l, &flag) in flags.iter().enumerate() {
        if !flag {
            stats.step_failures[l] += weight;
        }
    }
    if flags.iter().all(|&f| f) {
        stats.overall_success += weight;
    }
    for i in 0..m {
        for j in 0..m {
            if flags[i] && flags[j] {
                stats.pairwise_success[i][j] += weight;
            }
        }
    }
}

/// Compare Alice's data-register view of the attacked protocol phase with
/// an honest run, branch by classical branch. Bob's deferred measurements
/// must not show up in her marginal.
fn alice_view_deviation(spec: &DatabaseSpec, opts: &RunOptions) -> Result<f64> {
    let data_names: Vec<String> = spec.data_registers().into_iter().map(|(n, _)| n).collect();
    let regs: Vec<&str> = data_names.iter().map(String::as_str).collect();
    let kraus = depolarizing_kraus(spec.answer_dim(), opts.noise_p);
    let mut worst = 0.0f64;
    for (_, entries) in spec.enumerate_assignments()? {
        let fixed = DatabaseSpec {
            mode: DbMode::ClassicalFixed(entries.clone()),
            ..spec.clone()
        };
        let db = build_database_state(&fixed)?;
        let db_state = &db.branches[0].state;
        for coin in [0u8, 1u8] {
            let pre = pre_noise_state(&fixed, 1, coin, db_state, &RunOptions::noiseless())?;
            for k1 in &kraus {
                let (p1, post1) = pre.apply_kraus_element(k1, &["a1"])?;
                let post1 = match post1 {
                    Some(s) if p1 >= PRUNE_TOL => s,
                    _ => continue,
                };
                for k2 in &kraus {
                    let (p2, post2) = post1.apply_kraus_element(k2, &["a2"])?;
                    let post2 = match post2 {
                        Some(s) if p1 * p2 >= PRUNE_TOL => s,
                        _ => continue,
                    };
                    // attacked run: Bob defers his checks
                    let attacked = post2.reduced_density(&regs)?;
                    // honest run: Bob measures; average his outcome branches
                    let mut parts: Vec<(f64, DensityOperator)> = Vec::new();
                    visit_bob_checks(
                        &post2,
                        1.0,
                        coin,
                        1,
                        &fixed,
                        &mut |probability, _outcome, _accepted, _output, state| {
                            if probability >= PRUNE_TOL {
                                parts.push((probability, state.reduced_density(&regs)?));
                            }
                            Ok(())
                        },
                    )?;
                    let dim = attacked.dim();
                    let mut honest = DMatrix::from_element(dim, dim, c(0.0));
                    let total: f64 = parts.iter().map(|(p, _)| p).sum();
                    for (p, rho) in &parts {
                        honest += rho.matrix() * c(p / total);
                    }
                    let honest = DensityOperator::new(attacked.layout().clone(), honest)?;
                    worst = worst.max(trace_distance(&attacked, &honest)?);
                }
            }
        }
    }
    Ok(worst)
}

// ---------------------------------------------------------------------------
// data privacy verdict
// ---------------------------------------------------------------------------

/// Whether an attack outcome violates the pair-guessing bound `1/k + ε`.
#[derive(Debug, Clone, Serialize)]
#[serde(tag = "verdict", rename_all = "kebab-case")]
pub enum DataPrivacyVerdict {
    Violated {
        pair_success: f64,
        bound: f64,
        margin: f64,
    },
    NotViolated {
        pair_success: f64,
        bound: f64,
        reason: String,
    },
}

/// Score the attack's joint guess of entries `(i, j)` against the
/// data-privacy bound with `k = min(|X_i|, |X_j|)`. The attack's explicit
/// strategy witnesses the best-measurement maximum from below.
pub fn data_privacy_violation(
    report: &GenericAttackReport,
    spec: &DatabaseSpec,
    i: usize,
    j: usize,
) -> Result<DataPrivacyVerdict> {
    if i == j {
        return Err(Error::InvalidSpec("pair needs distinct indices".into()));
    }
    if i < 1 || j < 1 || i > report.m || j > report.m {
        return Err(Error::Config(format!(
            "pair ({i}, {j}) not covered by an attack on the first {} entries",
            report.m
        )));
    }
    let k = spec.multiplicity(i)?.min(spec.multiplicity(j)?);
    let bound = 1.0 / k as f64 + report.epsilon;
    let pair_success = report.pairwise_success[i - 1][j - 1];
    if pair_success > bound {
        Ok(DataPrivacyVerdict::Violated {
            pair_success,
            bound,
            margin: pair_success - bound,
        })
    } else {
        let reason = if k == 1 {
            "a unique valid answer carries no distribution to guess".to_string()
        } else {
            format!("pair success {pair_success} does not exceed {bound}")
        };
        Ok(DataPrivacyVerdict::NotViolated {
            pair_success,
            bound,
            reason,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn spec3() -> DatabaseSpec {
        DatabaseSpec::uniform(&[2, 2, 2], DbMode::Purified).unwrap()
    }

    #[test]
    fn specific_attack_meets_lemma_bound() {
        let spec = spec3();
        let report = purified_database_attack(&spec, 1, 2, 1).unwrap();
        assert_relative_eq!(report.bob_accept_probability, 1.0, epsilon = 1e-9);
        assert_relative_eq!(report.honest_accept_probability, 1.0, epsilon = 1e-9);
        assert!(report.measured_distance >= 0.5 - 1e-9);
        assert_relative_eq!(
            report.helstrom_success,
            0.5 + report.measured_distance / 2.0,
            epsilon = 1e-9
        );
        assert!(report.helstrom_success >= 0.75 - 1e-9);
        assert!(report.violations().is_empty(), "{:?}", report.violations());
    }

    #[test]
    fn specific_attack_over_all_pairs_small_specs() {
        for multiplicities in [vec![2, 2], vec![2, 3], vec![3, 2, 2]] {
            let spec = DatabaseSpec::uniform(&multiplicities, DbMode::Purified).unwrap();
            for i in 1..=spec.n {
                for j in 1..=spec.n {
                    if i == j {
                        continue;
                    }
                    let report = purified_database_attack(&spec, i, j, 1).unwrap();
                    let bound = specific_bound(
                        spec.multiplicity(i).unwrap(),
                        spec.multiplicity(j).unwrap(),
                    )
                    .unwrap();
                    assert!(
                        report.measured_distance >= bound - 1e-9,
                        "pair ({i},{j}): D={} bound={}",
                        report.measured_distance,
                        bound
                    );
                }
            }
        }
    }

    #[test]
    fn repeated_queries_stay_consistent() {
        // the countermeasure of repeating the same query detects nothing
        let spec = DatabaseSpec::uniform(&[2, 2], DbMode::Purified).unwrap();
        for r in [2usize, 3] {
            let report = purified_database_attack(&spec, 1, 2, r).unwrap();
            assert_relative_eq!(report.bob_accept_probability, 1.0, epsilon = 1e-9);
            for accept in &report.accept_probability_per_repetition {
                assert_relative_eq!(*accept, 1.0, epsilon = 1e-9);
            }
            assert_relative_eq!(report.answer_consistency_probability, 1.0, epsilon = 1e-9);
            // identical answer statistics across repetitions
            let first = &report.answer_statistics_per_repetition[0];
            for stats in &report.answer_statistics_per_repetition[1..] {
                assert_eq!(stats.len(), first.len());
                for ((y_a, p_a), (y_b, p_b)) in stats.iter().zip(first) {
                    assert_eq!(y_a, y_b);
                    assert_relative_eq!(p_a, p_b, epsilon = 1e-9);
                }
            }
            // the distinguishing power is unchanged
            assert!(report.measured_distance >= 0.5 - 1e-9);
        }
    }

    #[test]
    fn degenerate_answer_sets_give_trivial_bound() {
        let spec = DatabaseSpec::uniform(&[1, 1], DbMode::Purified).unwrap();
        let report = purified_database_attack(&spec, 1, 2, 1).unwrap();
        assert_relative_eq!(report.paper_bound, 0.0, epsilon = 1e-12);
        assert!(report.helstrom_success >= 0.5 - 1e-9);
    }

    #[test]
    fn attack_rejects_equal_queries() {
        let spec = spec3();
        assert!(purified_database_attack(&spec, 1, 1, 1).is_err());
    }

    #[test]
    fn extraction_step_noiseless_is_exact() {
        // build a two-entry classical branch and step from entry 1 to 2
        let spec = DatabaseSpec {
            n: 2,
            valid_answers: vec![vec![1, 2], vec![1, 2]],
            mode: DbMode::ClassicalFixed(vec![2, 1]),
            distributions: None,
        };
        let db = build_database_state(&spec).unwrap();
        let db_state = &db.branches[0].state;
        let coin = 0u8;
        let mut refs = BTreeMap::new();
        for query in 1..=2 {
            refs.insert(
                query,
                pre_noise_state(&spec, query, coin, db_state, &RunOptions::noiseless()).unwrap(),
            );
        }
        let current = refs.get(&1).unwrap().clone();
        let outcomes =
            extraction_step(&current, 1, 2, &refs, &BOB_SIDE, "a1").unwrap();
        assert_eq!(outcomes.len(), 1);
        let outcome = &outcomes[0];
        assert_eq!(outcome.value, 2);
        assert_relative_eq!(outcome.probability, 1.0, epsilon = 1e-9);
        assert_relative_eq!(outcome.correct_probability, 1.0, epsilon = 1e-9);
        assert!(outcome.rotation_distance < 1e-8);

        // i = j: the rotation is identity-optimal and changes nothing
        let outcomes =
            extraction_step(&current, 1, 1, &refs, &BOB_SIDE, "a1").unwrap();
        assert!(outcomes[0].rotation_distance < 1e-8);

        // missing reference is reported
        let empty = BTreeMap::new();
        assert!(matches!(
            extraction_step(&current, 1, 2, &empty, &BOB_SIDE, "a1"),
            Err(Error::MissingReference(_))
        ));
    }

    #[test]
    fn noiseless_extraction_recovers_everything() {
        let report = sequential_extraction_attack(&spec3(), 3, 0.0).unwrap();
        assert_relative_eq!(report.epsilon, 0.0, epsilon = 1e-9);
        assert_relative_eq!(report.overall_success, 1.0, epsilon = 1e-9);
        assert_relative_eq!(report.theorem_bound, 1.0, epsilon = 1e-9);
        for failure in &report.step_failures {
            assert!(failure.abs() < 1e-9);
        }
        for damage in &report.chain_damage {
            assert!(damage.abs() < 1e-8);
        }
        for dist in &report.rotation_distances {
            assert!(dist.abs() < 1e-8);
        }
        assert!(report.alice_view_distance < 1e-9);
        assert!(report.violations().is_empty(), "{:?}", report.violations());
    }

    #[test]
    fn extraction_works_from_uniform_random_mode_too() {
        let spec = DatabaseSpec::uniform(&[2, 2], DbMode::UniformRandom).unwrap();
        let report = sequential_extraction_attack(&spec, 2, 0.0).unwrap();
        assert_relative_eq!(report.overall_success, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn extraction_rejects_bad_inputs() {
        let spec = spec3();
        assert!(sequential_extraction_attack(&spec, 1, 0.0).is_err());
        assert!(sequential_extraction_attack(&spec, 4, 0.0).is_err());
        let fixed = DatabaseSpec {
            mode: DbMode::ClassicalFixed(vec![1, 1, 1]),
            ..spec
        };
        assert!(sequential_extraction_attack(&fixed, 2, 0.0).is_err());
    }

    #[test]
    fn noisy_extraction_respects_all_bounds() {
        let spec = DatabaseSpec::uniform(&[2, 2], DbMode::Purified).unwrap();
        let report = sequential_extraction_attack(&spec, 2, 0.02).unwrap();
        assert!(report.epsilon > 0.0);
        assert!(report.violations().is_empty(), "{:?}", report.violations());
        // ε_1 ≤ ε and ε_2 ≤ 3√ε + 2ε
        assert!(report.step_failures[0] <= report.epsilon + 1e-9);
        assert!(
            report.step_failures[1]
                <= 3.0 * report.epsilon.sqrt() + 2.0 * report.epsilon + 1e-9
        );
    }

    #[test]
    fn success_non_increasing_in_m_and_noise() {
        let spec = spec3();
        let m2 = sequential_extraction_attack(&spec, 2, 0.01).unwrap();
        let m3 = sequential_extraction_attack(&spec, 3, 0.01).unwrap();
        assert!(m3.overall_success <= m2.overall_success + 1e-9);
        let quiet = sequential_extraction_attack(&spec, 3, 0.001).unwrap();
        assert!(m3.overall_success <= quiet.overall_success + 1e-9);
        let silent = sequential_extraction_attack(&spec, 3, 0.0).unwrap();
        assert!(quiet.overall_success <= silent.overall_success + 1e-9);
    }

    #[test]
    fn data_privacy_verdicts() {
        let spec = DatabaseSpec::uniform(&[2, 2], DbMode::Purified).unwrap();
        let report = sequential_extraction_attack(&spec, 2, 0.0).unwrap();
        match data_privacy_violation(&report, &spec, 1, 2).unwrap() {
            DataPrivacyVerdict::Violated {
                pair_success,
                bound,
                margin,
            } => {
                assert_relative_eq!(pair_success, 1.0, epsilon = 1e-9);
                assert_relative_eq!(bound, 0.5, epsilon = 1e-9);
                assert_relative_eq!(margin, 0.5, epsilon = 1e-9);
            }
            other => panic!("expected a violation, got {other:?}"),
        }
        // k = 1: the bound is 1 + ε and cannot be exceeded
        let trivial = DatabaseSpec::uniform(&[1, 1], DbMode::Purified).unwrap();
        let report = sequential_extraction_attack(&trivial, 2, 0.0).unwrap();
        assert!(matches!(
            data_privacy_violation(&report, &trivial, 1, 2).unwrap(),
            DataPrivacyVerdict::NotViolated { .. }
        ));
        // indices outside the attacked prefix are rejected
        let spec3 = spec3();
        let report = sequential_extraction_attack(&spec3, 2, 0.0).unwrap();
        assert!(data_privacy_violation(&report, &spec3, 1, 3).is_err());
    }
}
