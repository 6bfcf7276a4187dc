//! Named observables and states used throughout the tests, the CLI and the
//! reproduction suite, plus seeded random generators.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use nalgebra::QR;
use rand::Rng;

use crate::observable::{mix_with_trivial, uniform, DiscreteObservable, MINUS, PLUS};
use crate::operator::{c64, eigh_unchecked, hermitize, identity, ket_bra, real_diag, tensor, CMatrix, Tolerance, C64};
use crate::steering::BipartiteState;

fn tol() -> Tolerance {
    Tolerance::default()
}

fn built(dim: usize, outcomes: Vec<(&str, CMatrix)>) -> DiscreteObservable {
    let outcomes = outcomes.into_iter().map(|(l, e)| (l.to_string(), e)).collect();
    DiscreteObservable::new(dim, outcomes, &tol()).expect("fixture is a valid observable")
}

fn ket(entries: &[f64]) -> Vec<C64> {
    entries.iter().map(|&x| c64(x, 0.0)).collect()
}

/// `E_1 = 4/7 |φ_1><φ_1|`, `E_2 = 4/7 |φ_2><φ_2|`, `E_3 = I - E_1 - E_2` on C².
pub fn counterexample_e_effects() -> [CMatrix; 3] {
    let e1 = ket_bra(&ket(&[1.0, 0.0])).scale(4.0 / 7.0);
    let e2 = ket_bra(&ket(&[0.0, 1.0])).scale(4.0 / 7.0);
    let e3 = identity(2) - &e1 - &e2;
    [e1, e2, e3]
}

/// `F_1 = 4/7 |ψ><ψ|` with `ψ = (φ_1 - φ_2)/√2`, `F_2 = I - F_1`.
pub fn counterexample_f_effects() -> [CMatrix; 2] {
    let f1 = ket_bra(&ket(&[FRAC_1_SQRT_2, -FRAC_1_SQRT_2])).scale(4.0 / 7.0);
    let f2 = identity(2) - &f1;
    [f1, f2]
}

pub fn counterexample_e() -> DiscreteObservable {
    let [e1, e2, e3] = counterexample_e_effects();
    built(2, vec![("1", e1), ("2", e2), ("3", e3)])
}

pub fn counterexample_f() -> DiscreteObservable {
    let [f1, f2] = counterexample_f_effects();
    built(2, vec![("1", f1), ("2", f2)])
}

/// Computational basis PVM on C³.
pub fn basis_c3() -> DiscreteObservable {
    built(
        3,
        vec![
            ("1", ket_bra(&ket(&[1.0, 0.0, 0.0]))),
            ("2", ket_bra(&ket(&[0.0, 1.0, 0.0]))),
            ("3", ket_bra(&ket(&[0.0, 0.0, 1.0]))),
        ],
    )
}

/// `(|φ+><φ+|, |φ-><φ-|, |3><3|)` with `φ± = (|1> ± |2>)/√2`.
pub fn example_b() -> DiscreteObservable {
    built(
        3,
        vec![
            ("1", ket_bra(&ket(&[FRAC_1_SQRT_2, FRAC_1_SQRT_2, 0.0]))),
            ("2", ket_bra(&ket(&[FRAC_1_SQRT_2, -FRAC_1_SQRT_2, 0.0]))),
            ("3", ket_bra(&ket(&[0.0, 0.0, 1.0]))),
        ],
    )
}

/// `(|1><1| + |2><2|, |3><3|)`.
pub fn a_rel() -> DiscreteObservable {
    built(3, vec![("1", real_diag(&[1.0, 1.0, 0.0])), ("2", real_diag(&[0.0, 0.0, 1.0]))])
}

/// Qubit trine: `(1 + n_k·σ)/3` with Bloch vectors at 0°, 120°, 240° in the x–z plane.
pub fn trine() -> DiscreteObservable {
    let effects = (0..3)
        .map(|k| {
            let theta = 2.0 * PI * k as f64 / 3.0;
            let (nx, nz) = (theta.sin(), theta.cos());
            let e = CMatrix::from_row_slice(
                2,
                2,
                &[c64((1.0 + nz) / 3.0, 0.0), c64(nx / 3.0, 0.0), c64(nx / 3.0, 0.0), c64((1.0 - nz) / 3.0, 0.0)],
            );
            ((k + 1).to_string(), e)
        })
        .collect();
    DiscreteObservable::new(2, effects, &tol()).expect("trine is valid")
}

pub fn sigma_z() -> DiscreteObservable {
    built(2, vec![(PLUS, real_diag(&[1.0, 0.0])), (MINUS, real_diag(&[0.0, 1.0]))])
}

pub fn sigma_x() -> DiscreteObservable {
    built(
        2,
        vec![
            (PLUS, ket_bra(&ket(&[FRAC_1_SQRT_2, FRAC_1_SQRT_2]))),
            (MINUS, ket_bra(&ket(&[FRAC_1_SQRT_2, -FRAC_1_SQRT_2]))),
        ],
    )
}

/// σ_z and σ_x PVMs mixed with uniform noise at visibility `eta`.
pub fn smeared_pair(eta: f64) -> (DiscreteObservable, DiscreteObservable) {
    (
        mix_with_trivial(&sigma_z(), eta, &uniform(2), &tol()).expect("valid visibility"),
        mix_with_trivial(&sigma_x(), eta, &uniform(2), &tol()).expect("valid visibility"),
    )
}

/// `|Φ+> = (|00> + |11>)/√2`.
pub fn phi_plus() -> BipartiteState {
    let rho = ket_bra(&ket(&[FRAC_1_SQRT_2, 0.0, 0.0, FRAC_1_SQRT_2]));
    BipartiteState::new(2, 2, rho, &tol()).expect("valid state")
}

/// A two-term separable two-qubit state with full-rank Bob marginals.
pub fn separable_mixture() -> BipartiteState {
    let rho_b1 = CMatrix::from_row_slice(2, 2, &[c64(0.7, 0.0), c64(0.1, 0.1), c64(0.1, -0.1), c64(0.3, 0.0)]);
    let rho_b2 = real_diag(&[0.35, 0.65]);
    let a1 = ket_bra(&ket(&[1.0, 0.0]));
    let a2 = ket_bra(&ket(&[FRAC_1_SQRT_2, FRAC_1_SQRT_2]));
    let rho = tensor(&a1, &rho_b1).scale(0.5) + tensor(&a2, &rho_b2).scale(0.5);
    BipartiteState::new(2, 2, rho, &tol()).expect("valid state")
}

/// `ρ_A ⊗ ρ_B` with mixed factors.
pub fn product_state() -> BipartiteState {
    let ra = real_diag(&[0.8, 0.2]);
    let rb = CMatrix::from_row_slice(2, 2, &[c64(0.55, 0.0), c64(0.0, 0.2), c64(0.0, -0.2), c64(0.45, 0.0)]);
    BipartiteState::new(2, 2, tensor(&ra, &rb), &tol()).expect("valid state")
}

pub fn maximally_mixed() -> BipartiteState {
    BipartiteState::new(2, 2, identity(4).scale(0.25), &tol()).expect("valid state")
}

/// Every named observable, for corpus-wide checks.
pub fn named_observables() -> Vec<(&'static str, DiscreteObservable)> {
    let (sz, sx) = smeared_pair(0.6);
    vec![
        ("E", counterexample_e()),
        ("F", counterexample_f()),
        ("A", basis_c3()),
        ("B", example_b()),
        ("A_rel", a_rel()),
        ("trine", trine()),
        ("sigma_z", sigma_z()),
        ("sigma_x", sigma_x()),
        ("sigma_z_0.6", sz),
        ("sigma_x_0.6", sx),
    ]
}

pub fn named_states() -> Vec<(&'static str, BipartiteState)> {
    vec![
        ("phi_plus", phi_plus()),
        ("separable", separable_mixture()),
        ("product", product_state()),
        ("mixed", maximally_mixed()),
    ]
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    // Box–Muller
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

pub fn random_complex_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> CMatrix {
    CMatrix::from_fn(rows, cols, |_, _| c64(gaussian(rng), gaussian(rng)))
}

/// Haar-ish unitary from the QR factor of a complex Gaussian matrix.
pub fn random_unitary<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> CMatrix {
    let g = random_complex_matrix(rng, dim, dim);
    let qr = QR::new(g);
    let (q, r) = (qr.q(), qr.r());
    // fix column phases so the distribution does not depend on QR sign conventions
    let mut q = q;
    for j in 0..dim {
        let d = r[(j, j)];
        if d.norm() > 0.0 {
            let phase = d / d.norm();
            for i in 0..dim {
                q[(i, j)] *= phase;
            }
        }
    }
    q
}

/// Random full-rank observable: `A_i = S^{-1/2} G_i S^{-1/2}` with `S = Σ G_i`.
pub fn random_observable<R: Rng + ?Sized>(rng: &mut R, dim: usize, outcomes: usize) -> DiscreteObservable {
    let gs: Vec<CMatrix> = (0..outcomes)
        .map(|_| {
            let x = random_complex_matrix(rng, dim, dim);
            hermitize(&(&x * x.adjoint()))
        })
        .collect();
    normalize(dim, gs)
}

/// Random observable whose effects have the given ranks (each ≥ 1).
pub fn random_observable_with_ranks<R: Rng + ?Sized>(rng: &mut R, dim: usize, ranks: &[usize]) -> DiscreteObservable {
    let gs: Vec<CMatrix> = ranks
        .iter()
        .map(|&r| {
            let x = random_complex_matrix(rng, dim, r);
            hermitize(&(&x * x.adjoint()))
        })
        .collect();
    normalize(dim, gs)
}

fn normalize(dim: usize, gs: Vec<CMatrix>) -> DiscreteObservable {
    let mut s = CMatrix::zeros(dim, dim);
    for g in &gs {
        s += g;
    }
    let inv_sqrt = eigh_unchecked(&hermitize(&s)).map(|l| 1.0 / l.sqrt());
    let effects = gs.iter().map(|g| hermitize(&(&inv_sqrt * g * &inv_sqrt))).collect();
    DiscreteObservable::from_effects(dim, effects, &tol()).expect("normalized effects form an observable")
}

/// Random rank-one PVM (an orthonormal basis) with `dim` outcomes.
pub fn random_pvm<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> DiscreteObservable {
    let u = random_unitary(rng, dim);
    let effects = (0..dim)
        .map(|j| {
            let col: Vec<C64> = (0..dim).map(|i| u[(i, j)]).collect();
            ket_bra(&col)
        })
        .collect();
    DiscreteObservable::from_effects(dim, effects, &tol()).expect("basis projectors form a PVM")
}

/// Observable with diagonal effects (all such observables commute).
pub fn random_diagonal_observable<R: Rng + ?Sized>(rng: &mut R, dim: usize, outcomes: usize) -> DiscreteObservable {
    let mut weights = vec![vec![0.0; dim]; outcomes];
    for k in 0..dim {
        let raw: Vec<f64> = (0..outcomes).map(|_| rng.gen_range(0.05..1.0)).collect();
        let s: f64 = raw.iter().sum();
        for (i, w) in raw.iter().enumerate() {
            weights[i][k] = w / s;
        }
    }
    let effects = weights.iter().map(|w| real_diag(w)).collect();
    DiscreteObservable::from_effects(dim, effects, &tol()).expect("diagonal effects form an observable")
}

/// Random two-qubit state from a Ginibre matrix.
pub fn random_state<R: Rng + ?Sized>(rng: &mut R, dim_a: usize, dim_b: usize) -> BipartiteState {
    let n = dim_a * dim_b;
    let g = random_complex_matrix(rng, n, n);
    let rho = hermitize(&(&g * g.adjoint()));
    let tr: f64 = (0..n).map(|i| rho[(i, i)].re).sum();
    BipartiteState::new(dim_a, dim_b, rho.scale(1.0 / tr), &tol()).expect("normalized Ginibre state")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::dist;

    #[test]
    fn fixtures_validate() {
        for (name, obs) in named_observables() {
            assert!(obs.diagnostics(&tol()).passes, "{name}");
        }
    }

    #[test]
    fn fixture_formulas() {
        let [e1, e2, e3] = counterexample_e_effects();
        assert_eq!(e1[(0, 0)].re, 4.0 / 7.0);
        assert_eq!(e2[(1, 1)].re, 4.0 / 7.0);
        assert!(dist(&e3, &identity(2).scale(3.0 / 7.0)) < 1e-15);
        let [f1, _] = counterexample_f_effects();
        assert!((f1[(0, 1)].re + 2.0 / 7.0).abs() < 1e-16);
    }

    #[test]
    fn random_unitaries_are_unitary() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for d in 1..6 {
            let u = random_unitary(&mut rng, d);
            assert!(dist(&(u.adjoint() * &u), &identity(d)) < 1e-12);
        }
    }
}
