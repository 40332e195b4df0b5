//! Deterministic lemma/property suite behind the `selftest` subcommand and
//! the `lemma-suite` scenario.
//!
//! Random instances use a fixed seed; two invocations always produce the
//! same numbers. Protocol-level quantities elsewhere in the crate never
//! sample at all.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::bounds::{corollary1_verdict, lemma1_bound, CorollaryVerdict};
use crate::error::Result;
use crate::hilbert::{make_layout, DensityOperator, Measurement, PureState, RegisterLayout};
use crate::metrics::{
    fidelity, gentle_measurement_damage, gentle_measurement_damage_cq, helstrom,
    povm_discrimination_success, rotation_overlap, trace_distance, uhlmann_rotation,
};

const SEED: u64 = 0x51_50_51;

#[derive(Debug, Clone, serde::Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

fn random_density(layout: &RegisterLayout, rng: &mut ChaCha8Rng) -> Result<DensityOperator> {
    let dim = layout.total_dim();
    let g = DMatrix::from_fn(dim, dim, |_, _| {
        C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
    });
    let pos = &g * g.adjoint();
    let trace = pos.trace().re;
    DensityOperator::new(layout.clone(), pos / c(trace))
}

fn random_pure(layout: &RegisterLayout, rng: &mut ChaCha8Rng) -> Result<PureState> {
    let dim = layout.total_dim();
    let mut v = DVector::from_element(dim, c(0.0));
    for a in v.iter_mut() {
        *a = C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
    }
    let norm = v.norm();
    PureState::new(layout.clone(), v / c(norm))
}

fn herm_sqrt(matrix: &DMatrix<C64>) -> DMatrix<C64> {
    let sym = (matrix + matrix.adjoint()) * c(0.5);
    let eig = sym.symmetric_eigen();
    let dim = matrix.nrows();
    let mut out = DMatrix::from_element(dim, dim, c(0.0));
    for k in 0..dim {
        let root = eig.eigenvalues[k].max(0.0).sqrt();
        let v = eig.eigenvectors.column(k);
        out += (v * v.adjoint()) * c(root);
    }
    out
}

fn check(name: &str, passed: bool, detail: String) -> Check {
    Check {
        name: name.to_string(),
        passed,
        detail,
    }
}

/// Run every check; any `Err` from the underlying operations is itself a
/// failure, reported in the offending check.
pub fn run_selftest() -> Vec<Check> {
    let mut checks = Vec::new();
    let push = |checks: &mut Vec<Check>, name: &str, result: Result<(bool, String)>| {
        match result {
            Ok((passed, detail)) => checks.push(check(name, passed, detail)),
            Err(err) => checks.push(check(name, false, format!("error: {err}"))),
        }
    };

    push(&mut checks, "uniform-pair distance is tight", lemma1_tightness());
    push(&mut checks, "helstrom certification", helstrom_certification());
    push(&mut checks, "helstrom optimality", helstrom_optimality());
    push(&mut checks, "uhlmann overlap certification", uhlmann_certification());
    push(&mut checks, "cq rotation closeness", cq_rotation_closeness());
    push(&mut checks, "gentle measurement single", gentle_single());
    push(&mut checks, "gentle measurement cq", gentle_cq());
    push(&mut checks, "trace distance metric properties", metric_properties());
    push(&mut checks, "extraction proof algebra", proof_algebra());
    push(&mut checks, "impossibility threshold flip", threshold_flip());
    checks
}

/// `D(|φ⟩⟨φ|, 1/d) = 1 − 1/d` exactly for the uniform superposition φ.
fn lemma1_tightness() -> Result<(bool, String)> {
    let mut details = Vec::new();
    let mut passed = true;
    for d in [2usize, 3, 4, 8] {
        let layout = make_layout(vec![("x", d)])?;
        let subset: Vec<usize> = (0..d).collect();
        let phi = crate::hilbert::uniform_superposition(&layout, "x", &subset)?;
        let sigma0 = DensityOperator::from_pure(&phi);
        let sigma1 =
            DensityOperator::new(layout, DMatrix::identity(d, d) / c(d as f64))?;
        let measured = trace_distance(&sigma0, &sigma1)?;
        let expected = lemma1_bound(d)?;
        passed &= (measured - expected).abs() <= 1e-9;
        details.push(format!("d={d}: {measured:.12}"));
    }
    Ok((passed, details.join(", ")))
}

fn helstrom_certification() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let d = rng.random_range(2..=8);
        let layout = make_layout(vec![("x", d)])?;
        let rho = random_density(&layout, &mut rng)?;
        let sigma = random_density(&layout, &mut rng)?;
        let result = helstrom(&rho, &sigma)?;
        worst = worst.max(
            (result.success_probability - (0.5 + result.trace_distance / 2.0)).abs(),
        );
    }
    Ok((worst <= 1e-9, format!("worst deviation {worst:.3e}")))
}

fn helstrom_optimality() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 1);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let d = rng.random_range(2..=6);
        let layout = make_layout(vec![("x", d)])?;
        let rho = random_density(&layout, &mut rng)?;
        let sigma = random_density(&layout, &mut rng)?;
        let best = helstrom(&rho, &sigma)?;
        for _ in 0..50 {
            let g = DMatrix::from_fn(d, d, |_, _| {
                C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
            });
            let h = (&g + g.adjoint()) * c(0.5);
            let eig = h.symmetric_eigen();
            let lo = eig.eigenvalues.min();
            let hi = eig.eigenvalues.max();
            let mut effect = DMatrix::from_element(d, d, c(0.0));
            for k in 0..d {
                let squashed = if (hi - lo).abs() < 1e-12 {
                    0.5
                } else {
                    (eig.eigenvalues[k] - lo) / (hi - lo)
                };
                let v = eig.eigenvectors.column(k);
                effect += (v * v.adjoint()) * c(squashed);
            }
            let success = povm_discrimination_success(&rho, &sigma, &effect)?;
            worst = worst.max(success - best.success_probability);
        }
    }
    Ok((worst <= 1e-9, format!("worst excess {worst:.3e}")))
}

fn uhlmann_certification() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 2);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let da = rng.random_range(2..=4);
        let db = rng.random_range(2..=4);
        let layout = make_layout(vec![("a", da), ("b", db)])?;
        let psi0 = random_pure(&layout, &mut rng)?;
        let psi1 = random_pure(&layout, &mut rng)?;
        let op = uhlmann_rotation(&psi0, &psi1, &["a"])?;
        let overlap = rotation_overlap(&psi0, &psi1, &op)?;
        let f = fidelity(
            &psi0.reduced_density(&["b"])?,
            &psi1.reduced_density(&["b"])?,
        )?;
        worst = worst.max((overlap - f).abs());
    }
    Ok((worst <= 1e-8, format!("worst deviation {worst:.3e}")))
}

/// Per-branch rotations keep a cq ensemble within √(2ε) of its target.
fn cq_rotation_closeness() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 3);
    let mut worst_margin = f64::NEG_INFINITY;
    for _ in 0..30 {
        let layout = make_layout(vec![("a", 3), ("b", 3)])?;
        let branches = rng.random_range(1..=3);
        let mut weights: Vec<f64> = (0..branches).map(|_| rng.random::<f64>() + 0.1).collect();
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        let mut eps = 0.0;
        let mut rotated = 0.0;
        for &w in &weights {
            let psi0 = random_pure(&layout, &mut rng)?;
            let mut v = psi0.amplitudes().clone();
            for a in v.iter_mut() {
                *a += C64::new(
                    0.15 * (rng.random::<f64>() - 0.5),
                    0.15 * (rng.random::<f64>() - 0.5),
                );
            }
            let norm = v.norm();
            let psi1 = PureState::new(layout.clone(), v / c(norm))?;
            eps += w * trace_distance(
                &psi0.reduced_density(&["b"])?,
                &psi1.reduced_density(&["b"])?,
            )?;
            let op = uhlmann_rotation(&psi0, &psi1, &["a"])?;
            rotated += w * psi0.apply(&op)?.trace_distance_to(&psi1)?;
        }
        worst_margin = worst_margin.max(rotated - (2.0 * eps).sqrt());
    }
    Ok((
        worst_margin <= 1e-8,
        format!("worst margin {worst_margin:.3e}"),
    ))
}

fn gentle_single() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 4);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..100 {
        let d = rng.random_range(2..=6);
        let layout = make_layout(vec![("x", d)])?;
        let rho = random_density(&layout, &mut rng)?;
        let g = DMatrix::from_fn(d, d, |_, _| {
            C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
        });
        let delta = (&g * g.adjoint()) * c(0.02 / d as f64);
        let effect = DMatrix::identity(d, d) - &delta;
        let m = Measurement::new(
            vec!["x"],
            vec![("hit", herm_sqrt(&effect)), ("miss", herm_sqrt(&delta))],
        )?;
        let (success, damage) = gentle_measurement_damage(&rho, &m, "hit")?;
        let eps = (1.0 - success).max(0.0);
        worst = worst.max(damage - eps.sqrt());
    }
    Ok((worst <= 1e-9, format!("worst margin {worst:.3e}")))
}

fn gentle_cq() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 5);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..100 {
        let symbols = rng.random_range(2..=4);
        let layout = make_layout(vec![("x", symbols)])?;
        let mut weights: Vec<f64> = (0..symbols).map(|_| rng.random::<f64>() + 0.1).collect();
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        let mut branches = Vec::new();
        for (x, &w) in weights.iter().enumerate() {
            let mut v = DVector::from_element(symbols, c(0.0));
            v[x] = c(1.0);
            for a in v.iter_mut() {
                *a += C64::new(
                    0.08 * (rng.random::<f64>() - 0.5),
                    0.08 * (rng.random::<f64>() - 0.5),
                );
            }
            let norm = v.norm();
            let psi = PureState::new(layout.clone(), v / c(norm))?;
            branches.push((w, x.to_string(), DensityOperator::from_pure(&psi)));
        }
        let elements: Vec<(String, DMatrix<C64>)> = (0..symbols)
            .map(|x| {
                let mut p = DMatrix::from_element(symbols, symbols, c(0.0));
                p[(x, x)] = c(1.0);
                (x.to_string(), p)
            })
            .collect();
        let m = Measurement::new(vec!["x".to_string()], elements)?;
        let (success, damage) = gentle_measurement_damage_cq(&branches, &m)?;
        let eps = (1.0 - success).max(0.0);
        worst = worst.max(damage - (eps.sqrt() + eps));
    }
    Ok((worst <= 1e-9, format!("worst margin {worst:.3e}")))
}

fn metric_properties() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 6);
    let mut passed = true;
    let mut detail = String::new();
    for _ in 0..100 {
        let d = rng.random_range(2..=6);
        let layout = make_layout(vec![("x", d)])?;
        let a = random_density(&layout, &mut rng)?;
        let b = random_density(&layout, &mut rng)?;
        let e = random_density(&layout, &mut rng)?;
        let dab = trace_distance(&a, &b)?;
        let dba = trace_distance(&b, &a)?;
        if (dab - dba).abs() > 1e-12 {
            passed = false;
            detail = format!("symmetry broke at {dab} vs {dba}");
            break;
        }
        if dab > trace_distance(&a, &e)? + trace_distance(&e, &b)? + 1e-9 {
            passed = false;
            detail = "triangle inequality broke".to_string();
            break;
        }
    }
    if detail.is_empty() {
        detail = "symmetry and triangle inequality on 100 random triples".to_string();
    }
    Ok((passed, detail))
}

fn proof_algebra() -> Result<(bool, String)> {
    let mut passed = true;
    for m in 2..=10usize {
        for k in 0..=1000 {
            let eps = k as f64 / 1000.0 / 64.0;
            let root = eps.sqrt();
            let lhs = 0.5 * (3.0 * root + eps) * ((m * m + m) as f64) - 3.0 * root;
            let rhs = 2.0 * (m * m) as f64 * root;
            passed &= lhs <= rhs + 1e-12;
        }
    }
    let mut strict = true;
    for k in 0..=1000 {
        let eps = k as f64 / 1000.0 * (1.0 / 64.0 - 1e-6);
        strict &= 1.0 - 3.0 * (eps.sqrt() + eps) > 0.5 + eps;
    }
    Ok((
        passed && strict,
        "summation and threshold inequalities on 1000-point grids".to_string(),
    ))
}

fn threshold_flip() -> Result<(bool, String)> {
    let mut last_impossible = true;
    let mut flip_at = f64::NAN;
    let mut passed = true;
    for k in 0..=1000 {
        let eps = k as f64 / 1000.0 / 32.0;
        let verdict = corollary1_verdict(eps, 2, &[2, 2])?;
        let impossible = verdict == CorollaryVerdict::Impossible;
        if last_impossible && !impossible && flip_at.is_nan() {
            flip_at = eps;
        }
        if !last_impossible && impossible {
            passed = false; // must flip exactly once
        }
        last_impossible = impossible;
    }
    let expected = 1.0 / 64.0;
    // the first grid point past 1/64 is where the verdict changes
    passed &= !flip_at.is_nan() && flip_at > expected && flip_at <= expected + 1.0 / 32.0 / 1000.0 + 1e-12;
    Ok((passed, format!("flips after {expected}")))
}
