//! Quantum information-theoretic quantities: trace distance, Uhlmann
//! fidelity, the optimal two-state discrimination measurement, numerical
//! Uhlmann rotations between purifications, and gentle-measurement damage.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::hilbert::{DensityOperator, Measurement, PureState, UnitaryOp, TOL};

/// Eigenvalues of `rho − sigma` in `[-KERNEL_TOL, KERNEL_TOL]` count as
/// kernel and are assigned to the "sigma" outcome of [`helstrom`].
pub const KERNEL_TOL: f64 = 1e-12;

fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

fn check_layouts(rho: &DensityOperator, sigma: &DensityOperator) -> Result<()> {
    if rho.layout() != sigma.layout() {
        return Err(Error::LayoutMismatch(
            "density operators on different layouts".into(),
        ));
    }
    Ok(())
}

/// Hermitian eigendecomposition, returning (eigenvalues, eigenvectors as
/// matrix columns). The input is symmetrized first to wash out roundoff.
fn herm_eig(matrix: &DMatrix<C64>) -> (DVector<f64>, DMatrix<C64>) {
    let sym = (matrix + matrix.adjoint()) * c(0.5);
    let eig = sym.symmetric_eigen();
    (eig.eigenvalues, eig.eigenvectors)
}

/// Hermitian square root, clamping negative eigenvalues to zero.
fn herm_sqrt(matrix: &DMatrix<C64>) -> DMatrix<C64> {
    let (values, vectors) = herm_eig(matrix);
    let dim = matrix.nrows();
    let mut out = DMatrix::from_element(dim, dim, c(0.0));
    for k in 0..dim {
        let root = values[k].max(0.0).sqrt();
        if root > 0.0 {
            let v = vectors.column(k);
            out += (v * v.adjoint()) * c(root);
        }
    }
    out
}

// ---------------------------------------------------------------------------
// trace distance / fidelity
// ---------------------------------------------------------------------------

/// `D(ρ,σ) = Σ|λ_k|/2` over the eigenvalues of `ρ−σ`.
pub fn trace_distance(rho: &DensityOperator, sigma: &DensityOperator) -> Result<f64> {
    check_layouts(rho, sigma)?;
    let delta = rho.matrix() - sigma.matrix();
    let (values, _) = herm_eig(&delta);
    let d = values.iter().map(|l| l.abs()).sum::<f64>() / 2.0;
    Ok(d.clamp(0.0, 1.0 + TOL).min(1.0))
}

/// Uhlmann fidelity `tr √(√ρ σ √ρ)`, with the pure-state shortcut
/// `√(⟨ψ|σ|ψ⟩)` when one input has purity 1.
pub fn fidelity(rho: &DensityOperator, sigma: &DensityOperator) -> Result<f64> {
    check_layouts(rho, sigma)?;
    let pure_tol = 1e-9;
    let rho_pure = (rho.purity() - 1.0).abs() < pure_tol;
    let sigma_pure = (sigma.purity() - 1.0).abs() < pure_tol;
    let f = if rho_pure || sigma_pure {
        let (pure, other) = if rho_pure { (rho, sigma) } else { (sigma, rho) };
        let (values, vectors) = herm_eig(pure.matrix());
        let top = values.imax();
        let psi = vectors.column(top).clone_owned();
        let overlap = (psi.adjoint() * other.matrix() * &psi)[(0, 0)].re;
        overlap.max(0.0).sqrt()
    } else {
        let root = herm_sqrt(rho.matrix());
        let inner = &root * sigma.matrix() * &root;
        let (values, _) = herm_eig(&inner);
        values.iter().map(|l| l.max(0.0).sqrt()).sum::<f64>()
    };
    Ok(f.clamp(0.0, 1.0 + TOL).min(1.0))
}

// ---------------------------------------------------------------------------
// Helstrom discrimination
// ---------------------------------------------------------------------------

/// Optimal equal-prior discrimination of a state pair.
#[derive(Debug, Clone)]
pub struct DiscriminationResult {
    /// Two-outcome projective measurement, labels "rho" / "sigma".
    pub measurement: Measurement,
    /// Success probability under equal priors, `1/2 + D/2`.
    pub success_probability: f64,
    pub trace_distance: f64,
}

/// The two-outcome measurement projecting onto the positive eigenspace of
/// `ρ−σ` ("rho" outcome); the kernel goes to "sigma". The returned success
/// probability is evaluated directly from the projectors and certified
/// equal to `1/2 + D/2` within [`TOL`].
pub fn helstrom(rho: &DensityOperator, sigma: &DensityOperator) -> Result<DiscriminationResult> {
    check_layouts(rho, sigma)?;
    let delta = rho.matrix() - sigma.matrix();
    let (values, vectors) = herm_eig(&delta);
    let dim = delta.nrows();
    let mut projector = DMatrix::from_element(dim, dim, c(0.0));
    for k in 0..dim {
        if values[k] > KERNEL_TOL {
            let v = vectors.column(k);
            projector += v * v.adjoint();
        }
    }
    let distance = values.iter().map(|l| l.abs()).sum::<f64>() / 2.0;
    let complement = DMatrix::identity(dim, dim) - &projector;
    let direct = 0.5 * (&projector * rho.matrix()).trace().re
        + 0.5 * (&complement * sigma.matrix()).trace().re;
    let predicted = 0.5 + distance / 2.0;
    if (direct - predicted).abs() > TOL {
        return Err(Error::NotDensityOperator {
            check: "Helstrom certification",
            deviation: (direct - predicted).abs(),
        });
    }
    let names: Vec<String> = rho
        .layout()
        .registers()
        .iter()
        .map(|(n, _)| n.clone())
        .collect();
    let measurement = Measurement::binary_projective(
        names,
        projector,
        "rho".to_string(),
        "sigma".to_string(),
    )?;
    Ok(DiscriminationResult {
        measurement,
        success_probability: direct,
        trace_distance: distance,
    })
}

/// Success probability of an arbitrary two-outcome POVM `{E, 1−E}` at
/// discriminating `rho` (outcome E) from `sigma` under equal priors.
pub fn povm_discrimination_success(
    rho: &DensityOperator,
    sigma: &DensityOperator,
    effect: &DMatrix<C64>,
) -> Result<f64> {
    check_layouts(rho, sigma)?;
    let dim = rho.dim();
    let complement = DMatrix::identity(dim, dim) - effect;
    Ok(0.5 * (effect * rho.matrix()).trace().re
        + 0.5 * (&complement * sigma.matrix()).trace().re)
}

// ---------------------------------------------------------------------------
// Uhlmann rotation
// ---------------------------------------------------------------------------

/// Unitary on `side` maximizing `|⟨ψ1|(U ⊗ 1)|ψ0⟩|`.
///
/// Built from the polar structure of the cross-overlap matrix between the
/// two states' side decompositions: with `ψ_b` reshaped to matrices
/// `M_b` (side × complement), the optimum over unitaries of
/// `|tr(U M0 M1†)|` is the nuclear norm of `M0 M1†`, attained on its
/// singular directions. Rank-deficient directions are completed by pairing
/// the standard-basis complements in index order, so two identical states
/// yield the identity. The achieved overlap equals the fidelity of the
/// complement-side marginals.
pub fn uhlmann_rotation(
    psi0: &PureState,
    psi1: &PureState,
    side: &[&str],
) -> Result<UnitaryOp> {
    if psi0.layout() != psi1.layout() {
        return Err(Error::LayoutMismatch(
            "Uhlmann rotation between states on different layouts".into(),
        ));
    }
    let layout = psi0.layout();
    let side_positions = layout.positions_of(side)?;
    let side_layout = layout.sub_layout(side)?;
    let side_dim = side_layout.total_dim();
    let comp_positions: Vec<usize> = (0..layout.registers().len())
        .filter(|p| !side_positions.contains(p))
        .collect();

    let reshape = |state: &PureState| -> DMatrix<C64> {
        let (s_offsets, s_total) = offsets(layout, &side_positions);
        let (c_offsets, c_total) = offsets(layout, &comp_positions);
        let mut m = DMatrix::from_element(s_total, c_total, c(0.0));
        for (sf, soff) in s_offsets.iter().enumerate() {
            for (cf, coff) in c_offsets.iter().enumerate() {
                m[(sf, cf)] = state.amplitudes()[soff + coff];
            }
        }
        m
    };
    let m0 = reshape(psi0);
    let m1 = reshape(psi1);
    let cross = &m0 * m1.adjoint();

    let svd = cross.svd(true, true);
    let u_mat = svd.u.expect("svd requested u");
    let v_h = svd.v_t.expect("svd requested v_t");
    let singulars = svd.singular_values;

    // partial isometry over the significant singular directions
    let mut kept_left: Vec<DVector<C64>> = Vec::new(); // columns of u (inputs)
    let mut kept_right: Vec<DVector<C64>> = Vec::new(); // columns of v (outputs)
    for k in 0..singulars.len() {
        if singulars[k] > KERNEL_TOL {
            kept_left.push(u_mat.column(k).clone_owned());
            kept_right.push(v_h.row(k).adjoint());
        }
    }
    let left_full = complete_orthonormal(&kept_left, side_dim);
    let right_full = complete_orthonormal(&kept_right, side_dim);
    let mut unitary = DMatrix::from_element(side_dim, side_dim, c(0.0));
    for (l, r) in left_full.iter().zip(right_full.iter()) {
        unitary += r * l.adjoint();
    }

    let named: Vec<(String, usize)> = side_layout.registers().to_vec();
    UnitaryOp::new(named, unitary)
}

/// The overlap `|⟨ψ1|(U ⊗ 1)|ψ0⟩|` after applying `op` to `psi0`.
pub fn rotation_overlap(psi0: &PureState, psi1: &PureState, op: &UnitaryOp) -> Result<f64> {
    let rotated = psi0.apply(op)?;
    Ok(psi1.inner(&rotated)?.norm())
}

fn offsets(layout: &crate::hilbert::RegisterLayout, positions: &[usize]) -> (Vec<usize>, usize) {
    let dims: Vec<usize> = positions
        .iter()
        .map(|&p| layout.registers()[p].1)
        .collect();
    let total: usize = dims.iter().product::<usize>().max(1);
    let mut out = vec![0usize; total];
    for (flat, entry) in out.iter_mut().enumerate() {
        let mut rem = flat;
        let mut acc = 0usize;
        for k in (0..positions.len()).rev() {
            let idx = rem % dims[k];
            rem /= dims[k];
            acc += idx * layout.stride(positions[k]);
        }
        *entry = acc;
    }
    (out, total)
}

/// Extend a set of orthonormal columns to a full orthonormal basis by
/// Gram–Schmidt over the standard basis in index order.
fn complete_orthonormal(columns: &[DVector<C64>], dim: usize) -> Vec<DVector<C64>> {
    let mut basis: Vec<DVector<C64>> = columns.to_vec();
    for k in 0..dim {
        if basis.len() == dim {
            break;
        }
        let mut candidate = DVector::from_element(dim, c(0.0));
        candidate[k] = c(1.0);
        for b in &basis {
            let overlap = b.dotc(&candidate);
            candidate -= b * overlap;
        }
        let norm = candidate.norm();
        if norm > 1e-8 {
            basis.push(candidate / c(norm));
        }
    }
    debug_assert_eq!(basis.len(), dim);
    basis
}

// ---------------------------------------------------------------------------
// classical-quantum combination
// ---------------------------------------------------------------------------

/// `Σ_x p_x D(ρ0_x, ρ1_x)` for a cq-ensemble. The weights must be
/// non-negative and sum to 1 within [`TOL`].
pub fn cq_trace_distance(
    branches: &[(f64, DensityOperator, DensityOperator)],
) -> Result<f64> {
    let total: f64 = branches.iter().map(|(p, _, _)| *p).sum();
    if (total - 1.0).abs() > TOL || branches.iter().any(|(p, _, _)| *p < 0.0) {
        return Err(Error::ProbabilityNotNormalized(total));
    }
    let mut acc = 0.0;
    for (p, rho0, rho1) in branches {
        acc += p * trace_distance(rho0, rho1)?;
    }
    Ok(acc)
}

// ---------------------------------------------------------------------------
// gentle measurement
// ---------------------------------------------------------------------------

/// Detection probability of the designated outcome and the trace-distance
/// damage `D(ρ, √E ρ √E / tr(Eρ))` caused by post-selecting on it, where
/// `E` is the POVM element of the designated label. The caller can assert
/// `damage ≤ √ε` with `ε = 1 − success`.
pub fn gentle_measurement_damage(
    rho: &DensityOperator,
    m: &Measurement,
    designated: &str,
) -> Result<(f64, f64)> {
    if !m.is_complete() {
        return Err(Error::IncompleteMeasurement(f64::NAN));
    }
    let effect = m
        .povm_element(designated)
        .ok_or_else(|| Error::Config(format!("no measurement outcome `{designated}`")))?;
    if effect.nrows() != rho.dim() {
        return Err(Error::DimensionMismatch(
            "measurement dimension does not match the state".into(),
        ));
    }
    let success = (&effect * rho.matrix()).trace().re;
    if success < crate::hilbert::PRUNE_TOL {
        return Ok((success, 1.0));
    }
    let root = herm_sqrt(&effect);
    let post = (&root * rho.matrix() * &root) / c(success);
    let post_op = DensityOperator::new(rho.layout().clone(), post)?;
    let damage = trace_distance(rho, &post_op)?;
    Ok((success, damage))
}

/// Classical-quantum gentle measurement: the branch labeled `x` is expected
/// to trigger the measurement outcome labeled `x`. Returns the minimum
/// per-symbol detection probability and the damage
/// `Σ_x p_x D(ρ_x, Σ_y M_y ρ_x M_y†)` of the full measurement with the
/// outcome discarded. With `ε = 1 − success` the caller can assert
/// `damage ≤ √ε + ε`, which holds when the Kraus operators are positive
/// semi-definite (the canonical `M_x = √E_x` choice).
pub fn gentle_measurement_damage_cq(
    branches: &[(f64, String, DensityOperator)],
    m: &Measurement,
) -> Result<(f64, f64)> {
    if !m.is_complete() {
        return Err(Error::IncompleteMeasurement(f64::NAN));
    }
    let total: f64 = branches.iter().map(|(p, _, _)| *p).sum();
    if (total - 1.0).abs() > TOL {
        return Err(Error::ProbabilityNotNormalized(total));
    }
    let mut min_success = 1.0f64;
    let mut damage = 0.0f64;
    for (p, label, rho) in branches {
        let effect = m
            .povm_element(label)
            .ok_or_else(|| Error::Config(format!("no measurement outcome `{label}`")))?;
        min_success = min_success.min((&effect * rho.matrix()).trace().re);
        let dim = rho.dim();
        let mut post = DMatrix::from_element(dim, dim, c(0.0));
        for element in m.elements() {
            post += &element.kraus * rho.matrix() * element.kraus.adjoint();
        }
        let post_op = DensityOperator::new(rho.layout().clone(), post)?;
        damage += p * trace_distance(rho, &post_op)?;
    }
    Ok((min_success, damage))
}

// ---------------------------------------------------------------------------
// tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{make_layout, purified_uniform_pair, uniform_superposition, PureState};
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    pub fn random_density(
        layout: &crate::hilbert::RegisterLayout,
        rng: &mut ChaCha8Rng,
    ) -> DensityOperator {
        let dim = layout.total_dim();
        let g = DMatrix::from_fn(dim, dim, |_, _| {
            C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
        });
        let pos = &g * g.adjoint();
        let trace = pos.trace().re;
        DensityOperator::new(layout.clone(), pos / c(trace)).unwrap()
    }

    fn random_pure(layout: &crate::hilbert::RegisterLayout, rng: &mut ChaCha8Rng) -> PureState {
        let dim = layout.total_dim();
        let mut v = DVector::from_element(dim, c(0.0));
        for a in v.iter_mut() {
            *a = C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
        }
        let norm = v.norm();
        PureState::new(layout.clone(), v / c(norm)).unwrap()
    }

    /// σ0 = |φ⟩⟨φ| with φ the uniform superposition; σ1 = maximally mixed.
    fn sigma_pair(d: usize) -> (DensityOperator, DensityOperator) {
        let layout = make_layout(vec![("x", d)]).unwrap();
        let subset: Vec<usize> = (0..d).collect();
        let phi = uniform_superposition(&layout, "x", &subset).unwrap();
        let sigma0 = DensityOperator::from_pure(&phi);
        let mixed = DMatrix::identity(d, d) / c(d as f64);
        let sigma1 = DensityOperator::new(layout, mixed).unwrap();
        (sigma0, sigma1)
    }

    #[test]
    fn trace_distance_examples() {
        let layout = make_layout(vec![("q", 2)]).unwrap();
        let zero = PureState::basis(layout.clone(), &[("q", 0)]).unwrap();
        let one = PureState::basis(layout, &[("q", 1)]).unwrap();
        let rho = DensityOperator::from_pure(&zero);
        let sigma = DensityOperator::from_pure(&one);
        assert_relative_eq!(trace_distance(&rho, &rho).unwrap(), 0.0, epsilon = 1e-12);
        assert_relative_eq!(trace_distance(&rho, &sigma).unwrap(), 1.0, epsilon = 1e-12);

        let (s0, s1) = sigma_pair(2);
        assert_relative_eq!(trace_distance(&s0, &s1).unwrap(), 0.5, epsilon = 1e-9);
    }

    #[test]
    fn trace_distance_is_a_metric() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..500 {
            let d = rng.random_range(2..=8);
            let layout = make_layout(vec![("x", d)]).unwrap();
            let a = random_density(&layout, &mut rng);
            let b = random_density(&layout, &mut rng);
            let c_op = random_density(&layout, &mut rng);
            let dab = trace_distance(&a, &b).unwrap();
            let dba = trace_distance(&b, &a).unwrap();
            let dac = trace_distance(&a, &c_op).unwrap();
            let dcb = trace_distance(&c_op, &b).unwrap();
            assert_relative_eq!(dab, dba, epsilon = 1e-12);
            assert!(dab <= dac + dcb + 1e-9);
            assert!((0.0..=1.0 + 1e-9).contains(&dab));
        }
    }

    #[test]
    fn trace_distance_unitary_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for _ in 0..100 {
            let d = rng.random_range(2..=6);
            let layout = make_layout(vec![("x", d)]).unwrap();
            let a = random_density(&layout, &mut rng);
            let b = random_density(&layout, &mut rng);
            let g = DMatrix::from_fn(d, d, |_, _| {
                C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
            });
            let q = g.qr().q();
            let ua = DensityOperator::new(layout.clone(), &q * a.matrix() * q.adjoint()).unwrap();
            let ub = DensityOperator::new(layout.clone(), &q * b.matrix() * q.adjoint()).unwrap();
            assert_relative_eq!(
                trace_distance(&a, &b).unwrap(),
                trace_distance(&ua, &ub).unwrap(),
                epsilon = 1e-9
            );
        }
    }

    #[test]
    fn trace_distance_monotone_under_channels() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..100 {
            let d = rng.random_range(2..=5);
            let layout = make_layout(vec![("x", d)]).unwrap();
            let a = random_density(&layout, &mut rng);
            let b = random_density(&layout, &mut rng);
            // random trace-preserving Kraus set: normalize G_k by S^{-1/2}
            let count = rng.random_range(1..=3);
            let gs: Vec<DMatrix<C64>> = (0..count)
                .map(|_| {
                    DMatrix::from_fn(d, d, |_, _| {
                        C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
                    })
                })
                .collect();
            let mut s = DMatrix::from_element(d, d, c(0.0));
            for g in &gs {
                s += g.adjoint() * g;
            }
            let (values, vectors) = herm_eig(&s);
            let mut inv_root = DMatrix::from_element(d, d, c(0.0));
            for k in 0..d {
                let v = vectors.column(k);
                inv_root += (v * v.adjoint()) * c(1.0 / values[k].max(1e-12).sqrt());
            }
            let kraus: Vec<DMatrix<C64>> = gs.iter().map(|g| g * &inv_root).collect();
            let apply = |rho: &DensityOperator| {
                let mut out = DMatrix::from_element(d, d, c(0.0));
                for k in &kraus {
                    out += k * rho.matrix() * k.adjoint();
                }
                DensityOperator::new(layout.clone(), out).unwrap()
            };
            let da = apply(&a);
            let db = apply(&b);
            assert!(
                trace_distance(&da, &db).unwrap()
                    <= trace_distance(&a, &b).unwrap() + 1e-9
            );
        }
    }

    #[test]
    fn fidelity_examples() {
        let layout = make_layout(vec![("q", 2)]).unwrap();
        let zero = PureState::basis(layout.clone(), &[("q", 0)]).unwrap();
        let one = PureState::basis(layout.clone(), &[("q", 1)]).unwrap();
        let rho = DensityOperator::from_pure(&zero);
        let sigma = DensityOperator::from_pure(&one);
        assert_relative_eq!(fidelity(&rho, &rho).unwrap(), 1.0, epsilon = 1e-9);
        assert_relative_eq!(fidelity(&rho, &sigma).unwrap(), 0.0, epsilon = 1e-9);

        // |0⟩⟨0| vs 1/2: closed form tr√(√ρσ√ρ) = √(1/2)
        let mixed = DensityOperator::new(layout, DMatrix::identity(2, 2) / c(2.0)).unwrap();
        assert_relative_eq!(
            fidelity(&rho, &mixed).unwrap(),
            std::f64::consts::FRAC_1_SQRT_2,
            epsilon = 1e-9
        );
    }

    #[test]
    fn fidelity_shortcut_matches_general_route() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..50 {
            let d = rng.random_range(2..=5);
            let layout = make_layout(vec![("x", d)]).unwrap();
            let psi = random_pure(&layout, &mut rng);
            let rho = DensityOperator::from_pure(&psi);
            let sigma = random_density(&layout, &mut rng);
            let shortcut = fidelity(&rho, &sigma).unwrap();
            // general route, bypassing the purity shortcut
            let root = herm_sqrt(rho.matrix());
            let inner = &root * sigma.matrix() * &root;
            let (values, _) = herm_eig(&inner);
            let general: f64 = values.iter().map(|l| l.max(0.0).sqrt()).sum();
            assert_relative_eq!(shortcut, general, epsilon = 1e-8);
        }
    }

    #[test]
    fn helstrom_examples() {
        let layout = make_layout(vec![("q", 2)]).unwrap();
        let zero = PureState::basis(layout.clone(), &[("q", 0)]).unwrap();
        let rho = DensityOperator::from_pure(&zero);
        let result = helstrom(&rho, &rho).unwrap();
        assert_relative_eq!(result.success_probability, 0.5, epsilon = 1e-9);

        let one = PureState::basis(layout, &[("q", 1)]).unwrap();
        let sigma = DensityOperator::from_pure(&one);
        let result = helstrom(&rho, &sigma).unwrap();
        assert_relative_eq!(result.success_probability, 1.0, epsilon = 1e-9);

        // σ0 vs σ1 at d=2: eigenvalues of the difference are ±1/2, D=1/2
        let (s0, s1) = sigma_pair(2);
        let result = helstrom(&s0, &s1).unwrap();
        assert_relative_eq!(result.trace_distance, 0.5, epsilon = 1e-9);
        assert_relative_eq!(result.success_probability, 0.75, epsilon = 1e-9);
    }

    #[test]
    fn helstrom_beats_random_povms() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..100 {
            let d = rng.random_range(2..=8);
            let layout = make_layout(vec![("x", d)]).unwrap();
            let rho = random_density(&layout, &mut rng);
            let sigma = random_density(&layout, &mut rng);
            let best = helstrom(&rho, &sigma).unwrap();
            assert_relative_eq!(
                best.success_probability,
                0.5 + best.trace_distance / 2.0,
                epsilon = 1e-9
            );
            for _ in 0..100 {
                // random effect 0 ≤ E ≤ 1 via an eigenvalue squash
                let g = DMatrix::from_fn(d, d, |_, _| {
                    C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
                });
                let h = (&g + g.adjoint()) * c(0.5);
                let (values, vectors) = herm_eig(&h);
                let lo = values.min();
                let hi = values.max();
                let mut effect = DMatrix::from_element(d, d, c(0.0));
                for k in 0..d {
                    let squashed = if (hi - lo).abs() < 1e-12 {
                        0.5
                    } else {
                        (values[k] - lo) / (hi - lo)
                    };
                    let v = vectors.column(k);
                    effect += (v * v.adjoint()) * c(squashed);
                }
                let success = povm_discrimination_success(&rho, &sigma, &effect).unwrap();
                assert!(success <= best.success_probability + 1e-9);
            }
        }
    }

    #[test]
    fn uhlmann_rotation_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let layout = make_layout(vec![("a", 3), ("b", 3)]).unwrap();
        let psi = random_pure(&layout, &mut rng);
        let op = uhlmann_rotation(&psi, &psi, &["a"]).unwrap();
        assert_relative_eq!(
            rotation_overlap(&psi, &psi, &op).unwrap(),
            1.0,
            epsilon = 1e-9
        );
        // identical states: the rotation is exactly the identity
        let deviation = (op.matrix() - DMatrix::identity(3, 3)).norm();
        assert!(deviation < 1e-9, "deviation {deviation}");

        // equal complement marginals: overlap 1 (exact Uhlmann case)
        let pair = purified_uniform_pair(2).unwrap();
        let flip = crate::hilbert::UnitaryOp::new(
            vec![("x", 2)],
            DMatrix::from_row_slice(2, 2, &[c(0.0), c(1.0), c(1.0), c(0.0)]),
        )
        .unwrap();
        let rotated_pair = pair.apply(&flip).unwrap();
        let op = uhlmann_rotation(&pair, &rotated_pair, &["x"]).unwrap();
        assert_relative_eq!(
            rotation_overlap(&pair, &rotated_pair, &op).unwrap(),
            1.0,
            epsilon = 1e-9
        );
    }

    #[test]
    fn uhlmann_overlap_equals_complement_fidelity() {
        let mut rng = ChaCha8Rng::seed_from_u64(52);
        for _ in 0..200 {
            let da = rng.random_range(2..=4);
            let db = rng.random_range(2..=4);
            let layout = make_layout(vec![("a", da), ("b", db)]).unwrap();
            let psi0 = random_pure(&layout, &mut rng);
            let psi1 = random_pure(&layout, &mut rng);
            let op = uhlmann_rotation(&psi0, &psi1, &["a"]).unwrap();
            let overlap = rotation_overlap(&psi0, &psi1, &op).unwrap();
            let f = fidelity(
                &psi0.reduced_density(&["b"]).unwrap(),
                &psi1.reduced_density(&["b"]).unwrap(),
            )
            .unwrap();
            assert_relative_eq!(overlap, f, epsilon = 1e-8);
        }
    }

    #[test]
    fn cq_rotation_within_sqrt_two_eps() {
        // per-branch rotations realize the block unitary of the cq case:
        // the rotated ensemble lands within √(2ε) of the target ensemble
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        for _ in 0..50 {
            let branches = rng.random_range(1..=3);
            let layout = make_layout(vec![("a", 3), ("b", 3)]).unwrap();
            let mut weights: Vec<f64> = (0..branches).map(|_| rng.random::<f64>() + 0.1).collect();
            let total: f64 = weights.iter().sum();
            weights.iter_mut().for_each(|w| *w /= total);
            let mut eps = 0.0;
            let mut rotated_distance = 0.0;
            for &w in &weights {
                let psi0 = random_pure(&layout, &mut rng);
                // perturb psi0 to keep the pair close
                let mut v = psi0.amplitudes().clone();
                for a in v.iter_mut() {
                    *a += C64::new(
                        0.1 * (rng.random::<f64>() - 0.5),
                        0.1 * (rng.random::<f64>() - 0.5),
                    );
                }
                let norm = v.norm();
                let psi1 = PureState::new(layout.clone(), v / c(norm)).unwrap();
                eps += w * trace_distance(
                    &psi0.reduced_density(&["b"]).unwrap(),
                    &psi1.reduced_density(&["b"]).unwrap(),
                )
                .unwrap();
                let op = uhlmann_rotation(&psi0, &psi1, &["a"]).unwrap();
                let rotated = psi0.apply(&op).unwrap();
                rotated_distance += w * rotated.trace_distance_to(&psi1).unwrap();
            }
            assert!(
                rotated_distance <= (2.0 * eps).sqrt() + 1e-8,
                "rotated {rotated_distance} vs bound {}",
                (2.0 * eps).sqrt()
            );
        }
    }

    #[test]
    fn cq_trace_distance_examples() {
        let layout = make_layout(vec![("q", 2)]).unwrap();
        let zero = DensityOperator::from_pure(
            &PureState::basis(layout.clone(), &[("q", 0)]).unwrap(),
        );
        let one = DensityOperator::from_pure(
            &PureState::basis(layout.clone(), &[("q", 1)]).unwrap(),
        );
        // single branch reduces to the plain distance
        let single = vec![(1.0, zero.clone(), one.clone())];
        assert_relative_eq!(cq_trace_distance(&single).unwrap(), 1.0, epsilon = 1e-12);
        // identical pairs vanish
        let same = vec![(0.5, zero.clone(), zero.clone()), (0.5, one.clone(), one.clone())];
        assert_relative_eq!(cq_trace_distance(&same).unwrap(), 0.0, epsilon = 1e-12);
        // convex combination of distances 1 and 0
        let mixed = vec![(0.5, zero.clone(), one.clone()), (0.5, one.clone(), one)];
        assert_relative_eq!(cq_trace_distance(&mixed).unwrap(), 0.5, epsilon = 1e-12);
        // weights failing to normalize are rejected
        let bad = vec![(0.7, zero.clone(), zero)];
        assert!(matches!(
            cq_trace_distance(&bad),
            Err(Error::ProbabilityNotNormalized(_))
        ));
    }

    #[test]
    fn gentle_measurement_examples() {
        // a projective measurement detecting the state with certainty
        // causes no damage
        let layout = make_layout(vec![("q", 2)]).unwrap();
        let zero = PureState::basis(layout.clone(), &[("q", 0)]).unwrap();
        let rho = DensityOperator::from_pure(&zero);
        let projector = zero.amplitudes() * zero.amplitudes().adjoint();
        let m = Measurement::binary_projective(vec!["q"], projector, "hit", "miss").unwrap();
        let (success, damage) = gentle_measurement_damage(&rho, &m, "hit").unwrap();
        assert_relative_eq!(success, 1.0, epsilon = 1e-12);
        assert!(damage < 1e-9);
    }

    #[test]
    fn gentle_measurement_bound_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        for _ in 0..100 {
            let d = rng.random_range(2..=6);
            let layout = make_layout(vec![("x", d)]).unwrap();
            let rho = random_density(&layout, &mut rng);
            // effect close to the identity: E = 1 − δ with small random PSD δ
            let g = DMatrix::from_fn(d, d, |_, _| {
                C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
            });
            let delta = (&g * g.adjoint()) * c(0.02 / d as f64);
            let effect = DMatrix::identity(d, d) - &delta;
            let m = Measurement::new(
                vec!["x"],
                vec![("hit", herm_sqrt(&effect)), ("miss", herm_sqrt(&delta))],
            )
            .unwrap();
            let (success, damage) = gentle_measurement_damage(&rho, &m, "hit").unwrap();
            let eps = 1.0 - success;
            assert!(
                damage <= eps.max(0.0).sqrt() + 1e-9,
                "damage {damage} vs sqrt(eps) {}",
                eps.max(0.0).sqrt()
            );
        }
    }

    #[test]
    fn gentle_measurement_cq_bound_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(62);
        for _ in 0..100 {
            let symbols = rng.random_range(2..=4);
            let layout = make_layout(vec![("x", symbols)]).unwrap();
            let mut weights: Vec<f64> = (0..symbols).map(|_| rng.random::<f64>() + 0.1).collect();
            let total: f64 = weights.iter().sum();
            weights.iter_mut().for_each(|w| *w /= total);
            // per-symbol states concentrated near |x⟩ so the computational
            // measurement detects each with high probability
            let mut branches = Vec::new();
            for (x, &w) in weights.iter().enumerate() {
                let mut v = DVector::from_element(symbols, c(0.0));
                v[x] = c(1.0);
                for a in v.iter_mut() {
                    *a += C64::new(
                        0.05 * (rng.random::<f64>() - 0.5),
                        0.05 * (rng.random::<f64>() - 0.5),
                    );
                }
                let norm = v.norm();
                let psi = PureState::new(layout.clone(), v / c(norm)).unwrap();
                branches.push((w, x.to_string(), DensityOperator::from_pure(&psi)));
            }
            let elements: Vec<(String, DMatrix<C64>)> = (0..symbols)
                .map(|x| {
                    let mut p = DMatrix::from_element(symbols, symbols, c(0.0));
                    p[(x, x)] = c(1.0);
                    (x.to_string(), p)
                })
                .collect();
            let m = Measurement::new(
                vec!["x".to_string()],
                elements,
            )
            .unwrap();
            let (success, damage) = gentle_measurement_damage_cq(&branches, &m).unwrap();
            let eps = 1.0 - success;
            assert!(
                damage <= eps.max(0.0).sqrt() + eps + 1e-9,
                "damage {damage} vs bound {}",
                eps.max(0.0).sqrt() + eps
            );
        }
    }

    #[test]
    fn lemma_bound_instances_from_statement() {
        // success 1−ε with ε = 0.01 keeps the conditioned state within 0.1
        let mut rng = ChaCha8Rng::seed_from_u64(63);
        let layout = make_layout(vec![("x", 4)]).unwrap();
        for _ in 0..20 {
            let rho = random_density(&layout, &mut rng);
            let g = DMatrix::from_fn(4, 4, |_, _| {
                C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
            });
            let mut delta = &g * g.adjoint();
            // scale δ so that tr(δρ) = 0.01 exactly
            let current = (&delta * rho.matrix()).trace().re;
            delta *= c(0.01 / current);
            // keep δ ≤ 1
            let (values, _) = herm_eig(&delta);
            if values.max() >= 1.0 {
                continue;
            }
            let effect = DMatrix::identity(4, 4) - &delta;
            let m = Measurement::new(
                vec!["x"],
                vec![("hit", herm_sqrt(&effect)), ("miss", herm_sqrt(&delta))],
            )
            .unwrap();
            let (success, damage) = gentle_measurement_damage(&rho, &m, "hit").unwrap();
            assert_relative_eq!(success, 0.99, epsilon = 1e-9);
            assert!(damage <= 0.1 + 1e-9);
        }
    }
}
