//! Discrete observables (POVMs with finitely many outcomes) and the basic
//! operations on them: binarization, commutation, relabeling, post-processing
//! and mixtures.
//!
//! Outcomes are identified by label. Effects with Frobenius norm at most
//! `eq_tol` are dropped at construction; their labels are remembered so that
//! label-wise operations such as [`convex_mixture`] still line up.

use std::collections::BTreeSet;

use serde::Serialize;

use crate::compatibility::{JointCertificate, Provenance};
use crate::operator::{
    self, check_effect, dist, eigh_unchecked, frobenius, hermitian_deviation, hermitize, identity, CMatrix, Tolerance,
};
use crate::{Error, Result};

pub const PLUS: &str = "+1";
pub const MINUS: &str = "-1";

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub label: String,
    pub effect: CMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteObservable {
    dim: usize,
    outcomes: Vec<Outcome>,
    dropped: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EffectDiagnostics {
    pub label: String,
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
    pub hermitian_deviation: f64,
    pub is_effect: bool,
    pub is_zero: bool,
}

/// Result of [`validate`]; always produced, even for garbage input.
#[derive(Debug, Clone, Serialize)]
pub struct Diagnostics {
    pub dim: usize,
    pub effects: Vec<EffectDiagnostics>,
    pub normalization_residual: f64,
    pub duplicate_labels: Vec<String>,
    pub zero_effects: Vec<String>,
    pub shape_errors: Vec<String>,
    pub passes: bool,
}

impl Diagnostics {
    /// Every invariant except the zero-effect rule holds.
    pub fn passes_ignoring_zero_effects(&self) -> bool {
        self.shape_errors.is_empty()
            && !self.effects.is_empty()
            && self.effects.iter().all(|e| e.is_effect)
            && self.duplicate_labels.is_empty()
            && self.effects.len() > self.zero_effects.len()
    }

    fn failure_summary(&self) -> String {
        let mut parts = Vec::new();
        parts.extend(self.shape_errors.iter().cloned());
        if self.effects.is_empty() {
            parts.push("no outcomes".to_string());
        }
        for e in self.effects.iter().filter(|e| !e.is_effect) {
            parts.push(format!(
                "outcome {:?} is not an effect (spectrum [{:.3e}, {:.3e}], hermitian deviation {:.3e})",
                e.label, e.min_eigenvalue, e.max_eigenvalue, e.hermitian_deviation
            ));
        }
        if !self.duplicate_labels.is_empty() {
            parts.push(format!("duplicate labels {:?}", self.duplicate_labels));
        }
        parts.push(format!("normalization residual {:.3e}", self.normalization_residual));
        parts.join("; ")
    }
}

/// Checks a raw outcome list against the observable invariants.
///
/// Zero effects make `passes` false; [`DiscreteObservable::new`] accepts them
/// and drops them instead.
pub fn validate(dim: usize, outcomes: &[(String, CMatrix)], tol: &Tolerance) -> Diagnostics {
    let mut effects = Vec::new();
    let mut shape_errors = Vec::new();
    let mut zero_effects = Vec::new();
    let mut sum = CMatrix::zeros(dim, dim);
    let mut seen = BTreeSet::new();
    let mut duplicates = BTreeSet::new();
    for (label, e) in outcomes {
        if !seen.insert(label.clone()) {
            duplicates.insert(label.clone());
        }
        if e.nrows() != dim || e.ncols() != dim {
            shape_errors.push(format!("outcome {label:?} has shape {}x{}, expected {dim}x{dim}", e.nrows(), e.ncols()));
            continue;
        }
        if e.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            shape_errors.push(format!("outcome {label:?} has non-finite entries"));
            continue;
        }
        let eig = eigh_unchecked(&hermitize(e));
        let is_zero = frobenius(e) <= tol.eq_tol;
        if is_zero {
            zero_effects.push(label.clone());
        }
        effects.push(EffectDiagnostics {
            label: label.clone(),
            min_eigenvalue: eig.min(),
            max_eigenvalue: eig.max(),
            hermitian_deviation: hermitian_deviation(e),
            is_effect: check_effect(e, tol).unwrap_or(false),
            is_zero,
        });
        sum += e;
    }
    let normalization_residual = if shape_errors.is_empty() { dist(&sum, &identity(dim)) } else { f64::INFINITY };
    let mut diag = Diagnostics {
        dim,
        effects,
        normalization_residual,
        duplicate_labels: duplicates.into_iter().collect(),
        zero_effects,
        shape_errors,
        passes: false,
    };
    diag.passes = diag.passes_ignoring_zero_effects()
        && diag.zero_effects.is_empty()
        && diag.normalization_residual <= tol.eq_tol;
    diag
}

impl DiscreteObservable {
    /// Validates and builds an observable, dropping zero effects.
    pub fn new(dim: usize, outcomes: Vec<(String, CMatrix)>, tol: &Tolerance) -> Result<Self> {
        let diag = validate(dim, &outcomes, tol);
        if !(diag.passes_ignoring_zero_effects() && diag.normalization_residual <= tol.eq_tol) {
            return Err(Error::InvalidObservable(diag.failure_summary()));
        }
        let zero: BTreeSet<&String> = diag.zero_effects.iter().collect();
        let mut kept = Vec::new();
        let mut dropped = Vec::new();
        for (label, effect) in outcomes {
            if zero.contains(&label) {
                dropped.push(label);
            } else {
                kept.push(Outcome { label, effect: hermitize(&effect) });
            }
        }
        Ok(DiscreteObservable { dim, outcomes: kept, dropped })
    }

    /// Outcomes labelled `"1"`, `"2"`, ... in order.
    pub fn from_effects(dim: usize, effects: Vec<CMatrix>, tol: &Tolerance) -> Result<Self> {
        let outcomes = effects.into_iter().enumerate().map(|(i, e)| ((i + 1).to_string(), e)).collect();
        Self::new(dim, outcomes, tol)
    }

    /// The single-outcome observable `(I)`.
    pub fn trivial(dim: usize) -> Self {
        DiscreteObservable {
            dim,
            outcomes: vec![Outcome { label: "1".to_string(), effect: identity(dim) }],
            dropped: vec![],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }

    pub fn outcomes(&self) -> &[Outcome] {
        &self.outcomes
    }

    pub fn effect(&self, i: usize) -> &CMatrix {
        &self.outcomes[i].effect
    }

    pub fn effects(&self) -> impl Iterator<Item = &CMatrix> {
        self.outcomes.iter().map(|o| &o.effect)
    }

    pub fn labels(&self) -> Vec<&str> {
        self.outcomes.iter().map(|o| o.label.as_str()).collect()
    }

    /// Labels of outcomes removed as zero effects.
    pub fn dropped_labels(&self) -> &[String] {
        &self.dropped
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.outcomes.iter().position(|o| o.label == label)
    }

    /// Effect for `label`, the zero matrix for a dropped label.
    pub fn effect_by_label(&self, label: &str) -> Option<CMatrix> {
        match self.index_of(label) {
            Some(i) => Some(self.outcomes[i].effect.clone()),
            None if self.dropped.iter().any(|l| l == label) => Some(CMatrix::zeros(self.dim, self.dim)),
            None => None,
        }
    }

    pub fn to_outcome_list(&self) -> Vec<(String, CMatrix)> {
        self.outcomes.iter().map(|o| (o.label.clone(), o.effect.clone())).collect()
    }

    pub fn diagnostics(&self, tol: &Tolerance) -> Diagnostics {
        validate(self.dim, &self.to_outcome_list(), tol)
    }

    pub fn ranks(&self, tol: &Tolerance) -> Vec<usize> {
        self.effects().map(|e| operator::psd_rank(e, tol.eig_tol)).collect()
    }

    /// Same effects under `U · U*`.
    pub fn conjugated(&self, u: &CMatrix) -> Self {
        DiscreteObservable {
            dim: self.dim,
            outcomes: self
                .outcomes
                .iter()
                .map(|o| Outcome { label: o.label.clone(), effect: hermitize(&(u * &o.effect * u.adjoint())) })
                .collect(),
            dropped: self.dropped.clone(),
        }
    }

    /// Reorders outcomes by `order` (a permutation of indices).
    pub fn permuted(&self, order: &[usize]) -> Self {
        DiscreteObservable {
            dim: self.dim,
            outcomes: order.iter().map(|&i| self.outcomes[i].clone()).collect(),
            dropped: self.dropped.clone(),
        }
    }
}

/// A subset of outcome indices of one observable.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct SubsetMask {
    members: Vec<bool>,
}

impl SubsetMask {
    pub fn new(indices: &[usize], outcome_count: usize) -> Result<Self> {
        let mut members = vec![false; outcome_count];
        for &i in indices {
            if i >= outcome_count {
                return Err(Error::InvalidMask(format!("index {i} out of range for {outcome_count} outcomes")));
            }
            members[i] = true;
        }
        Ok(SubsetMask { members })
    }

    pub fn from_bits(bits: u64, outcome_count: usize) -> Self {
        SubsetMask { members: (0..outcome_count).map(|i| bits >> i & 1 == 1).collect() }
    }

    pub fn from_members(members: Vec<bool>) -> Self {
        SubsetMask { members }
    }

    pub fn empty(outcome_count: usize) -> Self {
        SubsetMask { members: vec![false; outcome_count] }
    }

    pub fn full(outcome_count: usize) -> Self {
        SubsetMask { members: vec![true; outcome_count] }
    }

    pub fn singleton(i: usize, outcome_count: usize) -> Self {
        let mut m = Self::empty(outcome_count);
        m.members[i] = true;
        m
    }

    pub fn outcome_count(&self) -> usize {
        self.members.len()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.members.get(i).copied().unwrap_or(false)
    }

    pub fn indices(&self) -> Vec<usize> {
        (0..self.members.len()).filter(|&i| self.members[i]).collect()
    }

    pub fn count(&self) -> usize {
        self.members.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    pub fn is_full(&self) -> bool {
        self.count() == self.members.len()
    }

    pub fn complement(&self) -> Self {
        SubsetMask { members: self.members.iter().map(|b| !b).collect() }
    }

    pub fn intersect(&self, other: &Self) -> Self {
        SubsetMask { members: self.members.iter().zip(&other.members).map(|(a, b)| *a && *b).collect() }
    }

    pub fn union(&self, other: &Self) -> Self {
        SubsetMask { members: self.members.iter().zip(&other.members).map(|(a, b)| *a || *b).collect() }
    }
}

/// Row-stochastic matrix `β(z, x)`: rows are source outcomes, columns target outcomes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StochasticMatrix {
    rows: Vec<Vec<f64>>,
    target_labels: Vec<String>,
}

impl StochasticMatrix {
    pub fn new(rows: Vec<Vec<f64>>, target_labels: Vec<String>, tol: &Tolerance) -> Result<Self> {
        let cols = target_labels.len();
        for (z, row) in rows.iter().enumerate() {
            if row.len() != cols {
                return Err(Error::InvalidKernel(format!("row {z} has {} entries, expected {cols}", row.len())));
            }
            if row.iter().any(|&v| !v.is_finite() || v < -tol.eq_tol) {
                return Err(Error::InvalidKernel(format!("row {z} has a negative or non-finite entry")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > tol.eq_tol {
                return Err(Error::InvalidKernel(format!("row {z} sums to {s}")));
            }
        }
        Ok(StochasticMatrix { rows, target_labels })
    }

    /// Targets labelled `"1"`, `"2"`, ...
    pub fn with_numbered_targets(rows: Vec<Vec<f64>>, tol: &Tolerance) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        Self::new(rows, (1..=cols).map(|i| i.to_string()).collect(), tol)
    }

    pub fn identity_for(m: &DiscreteObservable) -> Self {
        let n = m.len();
        StochasticMatrix {
            rows: (0..n).map(|z| (0..n).map(|x| if x == z { 1.0 } else { 0.0 }).collect()).collect(),
            target_labels: m.labels().iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn get(&self, z: usize, x: usize) -> f64 {
        self.rows[z][x]
    }

    pub fn source_count(&self) -> usize {
        self.rows.len()
    }

    pub fn target_count(&self) -> usize {
        self.target_labels.len()
    }

    pub fn target_labels(&self) -> &[String] {
        &self.target_labels
    }

    /// Kernel composition `β · γ`: first `self`, then `next`.
    pub fn compose(&self, next: &StochasticMatrix) -> Result<Self> {
        if self.target_count() != next.source_count() {
            return Err(Error::InvalidKernel(format!(
                "cannot compose {} targets with {} sources",
                self.target_count(),
                next.source_count()
            )));
        }
        let rows = self
            .rows
            .iter()
            .map(|row| {
                (0..next.target_count())
                    .map(|y| row.iter().enumerate().map(|(x, b)| b * next.rows[x][y]).sum())
                    .collect()
            })
            .collect();
        Ok(StochasticMatrix { rows, target_labels: next.target_labels.clone() })
    }
}

/// Deterministic outcome map `f`: source index ↦ target index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RelabelingMap {
    map: Vec<usize>,
    target_labels: Vec<String>,
}

impl RelabelingMap {
    pub fn new(map: Vec<usize>, target_labels: Vec<String>) -> Result<Self> {
        if let Some(&bad) = map.iter().find(|&&x| x >= target_labels.len()) {
            return Err(Error::InvalidKernel(format!("target index {bad} out of range")));
        }
        Ok(RelabelingMap { map, target_labels })
    }

    pub fn map(&self) -> &[usize] {
        &self.map
    }

    pub fn target_labels(&self) -> &[String] {
        &self.target_labels
    }

    pub fn apply(&self, z: usize) -> usize {
        self.map[z]
    }

    /// The 0/1 kernel `β(z, x) = [f(z) = x]`.
    pub fn to_kernel(&self) -> StochasticMatrix {
        let rows = self
            .map
            .iter()
            .map(|&fz| (0..self.target_labels.len()).map(|x| if x == fz { 1.0 } else { 0.0 }).collect())
            .collect();
        StochasticMatrix { rows, target_labels: self.target_labels.clone() }
    }
}

pub fn is_pvm(a: &DiscreteObservable, tol: &Tolerance) -> bool {
    a.effects().all(|e| dist(&(e * e), e) <= tol.eq_tol)
}

/// `A(X) = Σ_{i∈X} A_i`.
pub fn subset_effect(a: &DiscreteObservable, mask: &SubsetMask) -> Result<CMatrix> {
    if mask.outcome_count() != a.len() {
        return Err(Error::InvalidMask(format!(
            "mask over {} outcomes used with {} outcomes",
            mask.outcome_count(),
            a.len()
        )));
    }
    let mut sum = CMatrix::zeros(a.dim(), a.dim());
    for i in mask.indices() {
        sum += a.effect(i);
    }
    Ok(sum)
}

/// The two-outcome observable `("+1" ↦ A(X), "-1" ↦ I - A(X))`.
pub fn binarize(a: &DiscreteObservable, mask: &SubsetMask, tol: &Tolerance) -> Result<DiscreteObservable> {
    let e = subset_effect(a, mask)?;
    binary_observable(&e, tol)
}

/// `("+1" ↦ E, "-1" ↦ I - E)` for an effect `E`.
pub fn binary_observable(e: &CMatrix, tol: &Tolerance) -> Result<DiscreteObservable> {
    let d = operator::ensure_square(e)?;
    let rest = identity(d) - e;
    DiscreteObservable::new(d, vec![(PLUS.to_string(), e.clone()), (MINUS.to_string(), rest)], tol)
}

pub fn commutes(a: &DiscreteObservable, b: &DiscreteObservable, tol: &Tolerance) -> Result<bool> {
    same_dim(a, b)?;
    Ok(a.effects().all(|ea| b.effects().all(|eb| frobenius(&operator::commutator(ea, eb)) <= tol.eq_tol)))
}

pub(crate) fn same_dim(a: &DiscreteObservable, b: &DiscreteObservable) -> Result<usize> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch { expected: a.dim(), found: b.dim() });
    }
    Ok(a.dim())
}

/// Joint observable `G_ij = A_i B_j` of a commuting pair.
pub fn product_joint(a: &DiscreteObservable, b: &DiscreteObservable, tol: &Tolerance) -> Result<JointCertificate> {
    if !commutes(a, b, tol)? {
        return Err(Error::Precondition("product joint requires commuting observables".to_string()));
    }
    let blocks: Vec<Vec<CMatrix>> =
        a.effects().map(|ea| b.effects().map(|eb| hermitize(&(ea * eb))).collect()).collect();
    JointCertificate::from_pair_blocks(a, b, blocks, Provenance::Product, tol)
}

/// `A_x = Σ_z β(z, x) M_z`.
pub fn post_process(m: &DiscreteObservable, beta: &StochasticMatrix, tol: &Tolerance) -> Result<DiscreteObservable> {
    if beta.source_count() != m.len() {
        return Err(Error::DimensionMismatch { expected: m.len(), found: beta.source_count() });
    }
    let outcomes = (0..beta.target_count())
        .map(|x| {
            let mut e = CMatrix::zeros(m.dim(), m.dim());
            for (z, mz) in m.effects().enumerate() {
                e += mz.scale(beta.get(z, x));
            }
            (beta.target_labels()[x].clone(), e)
        })
        .collect();
    DiscreteObservable::new(m.dim(), outcomes, tol)
}

/// `A_x = M(f⁻¹{x})`; targets with empty preimage are dropped like zero effects.
pub fn relabel(m: &DiscreteObservable, f: &RelabelingMap, tol: &Tolerance) -> Result<DiscreteObservable> {
    if f.map().len() != m.len() {
        return Err(Error::DimensionMismatch { expected: m.len(), found: f.map().len() });
    }
    let outcomes = (0..f.target_labels().len())
        .map(|x| {
            let mut e = CMatrix::zeros(m.dim(), m.dim());
            for z in (0..m.len()).filter(|&z| f.apply(z) == x) {
                e += m.effect(z);
            }
            (f.target_labels()[x].clone(), e)
        })
        .collect();
    DiscreteObservable::new(m.dim(), outcomes, tol)
}

/// Label-wise `t·A + (1-t)·A'`; dropped labels count as zero effects.
pub fn convex_mixture(
    a: &DiscreteObservable,
    a2: &DiscreteObservable,
    t: f64,
    tol: &Tolerance,
) -> Result<DiscreteObservable> {
    same_dim(a, a2)?;
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Precondition(format!("mixing weight {t} outside [0, 1]")));
    }
    let all = |o: &DiscreteObservable| -> Vec<String> {
        o.labels().iter().map(|s| s.to_string()).chain(o.dropped_labels().iter().cloned()).collect()
    };
    let labels = all(a);
    let set_a: BTreeSet<&String> = labels.iter().collect();
    let other = all(a2);
    let set_b: BTreeSet<&String> = other.iter().collect();
    if set_a != set_b {
        return Err(Error::Precondition(format!("label sets differ: {set_a:?} vs {set_b:?}")));
    }
    let outcomes = labels
        .iter()
        .map(|l| {
            let e = a.effect_by_label(l).expect("label present").scale(t)
                + a2.effect_by_label(l).expect("label present").scale(1.0 - t);
            (l.clone(), e)
        })
        .collect();
    DiscreteObservable::new(a.dim(), outcomes, tol)
}

/// Effects `η A_i + (1-η) p_i I`.
pub fn mix_with_trivial(a: &DiscreteObservable, eta: f64, p: &[f64], tol: &Tolerance) -> Result<DiscreteObservable> {
    check_probability_vector(p, a.len(), tol)?;
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::Precondition(format!("visibility {eta} outside [0, 1]")));
    }
    let d = a.dim();
    let outcomes = a
        .outcomes()
        .iter()
        .zip(p)
        .map(|(o, &pi)| (o.label.clone(), o.effect.scale(eta) + identity(d).scale((1.0 - eta) * pi)))
        .collect();
    DiscreteObservable::new(d, outcomes, tol)
}

pub fn uniform(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

pub(crate) fn check_probability_vector(p: &[f64], n: usize, tol: &Tolerance) -> Result<()> {
    if p.len() != n {
        return Err(Error::InvalidKernel(format!("probability vector has {} entries, expected {n}", p.len())));
    }
    if p.iter().any(|&v| !v.is_finite() || v < -tol.eq_tol) || (p.iter().sum::<f64>() - 1.0).abs() > tol.eq_tol {
        return Err(Error::InvalidKernel(format!("{p:?} is not a probability vector")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::operator::{c64, real_diag, zeros};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tol() -> Tolerance {
        Tolerance::default()
    }

    #[test]
    fn validate_examples() {
        let e = fixtures::counterexample_e();
        assert!(e.diagnostics(&tol()).passes);

        let bad = vec![("a".to_string(), identity(2).scale(0.5)), ("b".to_string(), identity(2).scale(1.0 / 3.0))];
        let diag = validate(2, &bad, &tol());
        assert!(!diag.passes);
        assert!((diag.normalization_residual - frobenius(&identity(2).scale(1.0 / 6.0))).abs() < 1e-12);

        let with_zero = vec![("a".to_string(), identity(2)), ("b".to_string(), zeros(2))];
        let diag = validate(2, &with_zero, &tol());
        assert!(!diag.passes);
        assert_eq!(diag.zero_effects, vec!["b".to_string()]);
        let built = DiscreteObservable::new(2, with_zero, &tol()).unwrap();
        assert_eq!(built.len(), 1);
        assert_eq!(built.dropped_labels(), ["b".to_string()]);

        let dup = vec![("a".to_string(), identity(2).scale(0.5)), ("a".to_string(), identity(2).scale(0.5))];
        assert!(!validate(2, &dup, &tol()).passes);
        assert!(DiscreteObservable::new(2, dup, &tol()).is_err());
        assert!(DiscreteObservable::new(2, vec![], &tol()).is_err());
    }

    #[test]
    fn pvm_examples() {
        assert!(is_pvm(&fixtures::basis_c3(), &tol()));
        assert!(!is_pvm(&fixtures::trine(), &tol()));
        assert!(is_pvm(&DiscreteObservable::trivial(3), &tol()));
    }

    #[test]
    fn subset_effect_examples() {
        let e = fixtures::counterexample_e();
        assert!(frobenius(&subset_effect(&e, &SubsetMask::empty(3)).unwrap()) == 0.0);
        assert!(dist(&subset_effect(&e, &SubsetMask::full(3)).unwrap(), &identity(2)) < 1e-15);
        let x = SubsetMask::new(&[0, 1], 3).unwrap();
        assert!(dist(&subset_effect(&e, &x).unwrap(), &identity(2).scale(4.0 / 7.0)) < 1e-15);
        assert!(SubsetMask::new(&[3], 3).is_err());
        assert!(subset_effect(&e, &SubsetMask::full(2)).is_err());
    }

    #[test]
    fn binarize_examples() {
        let e = fixtures::counterexample_e();
        let b = binarize(&e, &SubsetMask::singleton(0, 3), &tol()).unwrap();
        assert_eq!(b.labels(), vec![PLUS, MINUS]);
        assert!(dist(b.effect(0), e.effect(0)) < 1e-15);
        assert!(dist(b.effect(1), &(identity(2) - e.effect(0))) < 1e-15);

        let trivial = binarize(&e, &SubsetMask::empty(3), &tol()).unwrap();
        assert_eq!(trivial.len(), 1);
        assert!(dist(trivial.effect(0), &identity(2)) < 1e-15);

        let a = fixtures::basis_c3();
        let merged = binarize(&a, &SubsetMask::new(&[0, 1], 3).unwrap(), &tol()).unwrap();
        let a_rel = fixtures::a_rel();
        assert!(dist(merged.effect(0), a_rel.effect(0)) < 1e-15);
        assert!(dist(merged.effect(1), a_rel.effect(1)) < 1e-15);
    }

    #[test]
    fn commutation_examples() {
        let (a, b) = (fixtures::basis_c3(), fixtures::example_b());
        assert!(!commutes(&a, &b, &tol()).unwrap());
        assert!(commutes(&fixtures::a_rel(), &b, &tol()).unwrap());
        assert!(commutes(&a, &DiscreteObservable::trivial(3), &tol()).unwrap());
        assert!(commutes(&a, &fixtures::sigma_z(), &tol()).is_err());
    }

    #[test]
    fn product_joint_examples() {
        let cert = product_joint(&fixtures::a_rel(), &fixtures::example_b(), &tol()).unwrap();
        assert!(cert.marginal_residuals.iter().all(|&r| r < 1e-15));

        let a = fixtures::basis_c3();
        let diag = product_joint(&a, &a, &tol()).unwrap();
        assert_eq!(diag.joint.len(), 3);
        for (k, t) in diag.tuples.iter().enumerate() {
            assert_eq!(t[0], t[1]);
            assert!(dist(diag.joint.effect(k), a.effect(t[0])) < 1e-15);
        }

        let with_trivial = product_joint(&a, &DiscreteObservable::trivial(3), &tol()).unwrap();
        assert_eq!(with_trivial.joint.labels(), vec!["(1,1)", "(2,1)", "(3,1)"]);

        assert!(matches!(product_joint(&a, &fixtures::example_b(), &tol()), Err(Error::Precondition(_))));
    }

    #[test]
    fn post_process_examples() {
        let m = fixtures::trine();
        let same = post_process(&m, &StochasticMatrix::identity_for(&m), &tol()).unwrap();
        assert_eq!(same, m);

        let p = [0.2, 0.8];
        let flat = StochasticMatrix::with_numbered_targets(vec![p.to_vec(); 3], &tol()).unwrap();
        let t = post_process(&m, &flat, &tol()).unwrap();
        for (x, e) in t.effects().enumerate() {
            assert!(dist(e, &identity(2).scale(p[x])) < 1e-14);
        }
        assert!(post_process(
            &m,
            &StochasticMatrix::with_numbered_targets(vec![vec![1.0]; 2], &tol()).unwrap(),
            &tol()
        )
        .is_err());
        assert!(StochasticMatrix::with_numbered_targets(vec![vec![0.5, 0.6]], &tol()).is_err());
        assert!(StochasticMatrix::with_numbered_targets(vec![vec![1.5, -0.5]], &tol()).is_err());
    }

    #[test]
    fn relabel_examples() {
        let a = fixtures::basis_c3();
        let id = RelabelingMap::new(vec![0, 1, 2], vec!["1".into(), "2".into(), "3".into()]).unwrap();
        assert_eq!(relabel(&a, &id, &tol()).unwrap(), a);
        let merge = RelabelingMap::new(vec![0, 0, 1], vec!["1".into(), "2".into()]).unwrap();
        let rel = relabel(&a, &merge, &tol()).unwrap();
        let a_rel = fixtures::a_rel();
        for i in 0..2 {
            assert!(dist(rel.effect(i), a_rel.effect(i)) < 1e-15);
        }
        let constant = RelabelingMap::new(vec![1, 1, 1], vec!["x".into(), "y".into()]).unwrap();
        let t = relabel(&a, &constant, &tol()).unwrap();
        assert_eq!(t.labels(), vec!["y"]);
        assert!(dist(t.effect(0), &identity(3)) < 1e-15);
        assert!(RelabelingMap::new(vec![0, 2], vec!["a".into(), "b".into()]).is_err());
    }

    #[test]
    fn relabel_matches_deterministic_post_processing() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let m = fixtures::random_observable(&mut rng, 3, 5);
            let targets = rng.gen_range(1..4);
            let map: Vec<usize> = (0..m.len()).map(|_| rng.gen_range(0..targets)).collect();
            let labels: Vec<String> = (0..targets).map(|x| format!("t{x}")).collect();
            let f = RelabelingMap::new(map, labels).unwrap();
            let r = relabel(&m, &f, &tol()).unwrap();
            let p = post_process(&m, &f.to_kernel(), &tol()).unwrap();
            assert_eq!(r, p);
        }
    }

    #[test]
    fn mixture_examples() {
        let z = fixtures::sigma_z();
        let x = fixtures::sigma_x();
        assert_eq!(convex_mixture(&z, &x, 0.0, &tol()).unwrap(), x);
        assert_eq!(convex_mixture(&z, &x, 1.0, &tol()).unwrap(), z);

        let up = DiscreteObservable::new(2, vec![("a".into(), identity(2)), ("b".into(), zeros(2))], &tol()).unwrap();
        let down = DiscreteObservable::new(2, vec![("a".into(), zeros(2)), ("b".into(), identity(2))], &tol()).unwrap();
        let half = convex_mixture(&up, &down, 0.5, &tol()).unwrap();
        assert!(dist(half.effect(0), &identity(2).scale(0.5)) < 1e-15);
        assert!(dist(half.effect(1), &identity(2).scale(0.5)) < 1e-15);

        let mid = convex_mixture(&z, &x, 0.5, &tol()).unwrap();
        assert!(mid.diagnostics(&tol()).passes);
        assert!(!is_pvm(&mid, &tol()));

        let relabelled =
            relabel(&x, &RelabelingMap::new(vec![0, 1], vec!["u".into(), "v".into()]).unwrap(), &tol()).unwrap();
        assert!(convex_mixture(&z, &relabelled, 0.5, &tol()).is_err());
    }

    #[test]
    fn trivial_noise_examples() {
        let z = fixtures::sigma_z();
        assert_eq!(mix_with_trivial(&z, 1.0, &[0.5, 0.5], &tol()).unwrap().effect(0), z.effect(0));
        let t = mix_with_trivial(&z, 0.0, &[0.3, 0.7], &tol()).unwrap();
        assert!(dist(t.effect(1), &identity(2).scale(0.7)) < 1e-15);
        let eta = 0.37;
        let s = mix_with_trivial(&z, eta, &[0.5, 0.5], &tol()).unwrap();
        let pz = real_diag(&[1.0, -1.0]);
        assert!(dist(s.effect(0), &(identity(2) + pz.scale(eta)).scale(0.5)) < 1e-15);
        assert!(dist(s.effect(1), &(identity(2) - pz.scale(eta)).scale(0.5)) < 1e-15);
        assert!(mix_with_trivial(&z, 0.5, &[0.5, 0.6], &tol()).is_err());
        assert!(mix_with_trivial(&z, 0.5, &[1.0], &tol()).is_err());
    }

    #[test]
    fn mask_algebra() {
        let a = SubsetMask::new(&[0, 2], 4).unwrap();
        let b = SubsetMask::new(&[2, 3], 4).unwrap();
        assert_eq!(a.intersect(&b).indices(), vec![2]);
        assert_eq!(a.union(&b).indices(), vec![0, 2, 3]);
        assert_eq!(a.complement().indices(), vec![1, 3]);
        assert_eq!(SubsetMask::from_bits(0b101, 4), a);
        let _ = c64(0.0, 0.0);
    }

    fn arb_observable() -> impl Strategy<Value = DiscreteObservable> {
        (any::<u64>(), 1usize..4, 1usize..5).prop_map(|(seed, d, n)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            fixtures::random_observable(&mut rng, d, n)
        })
    }

    fn arb_kernel(sources: usize, seed: u64) -> StochasticMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let targets = rng.gen_range(1..4);
        let rows = (0..sources)
            .map(|_| {
                let raw: Vec<f64> = (0..targets).map(|_| rng.gen_range(0.05..1.0)).collect();
                let s: f64 = raw.iter().sum();
                raw.iter().map(|v| v / s).collect()
            })
            .collect();
        StochasticMatrix::with_numbered_targets(rows, &tol()).unwrap()
    }

    proptest! {
        #[test]
        fn kernel_composition(m in arb_observable(), s1 in any::<u64>(), s2 in any::<u64>()) {
            let beta = arb_kernel(m.len(), s1);
            let gamma = arb_kernel(beta.target_count(), s2);
            let lhs = post_process(&post_process(&m, &beta, &tol()).unwrap(), &gamma, &tol()).unwrap();
            let rhs = post_process(&m, &beta.compose(&gamma).unwrap(), &tol()).unwrap();
            prop_assert_eq!(lhs.len(), rhs.len());
            for (x, y) in lhs.effects().zip(rhs.effects()) {
                prop_assert!(dist(x, y) <= tol().eq_tol);
            }
            prop_assert!(lhs.diagnostics(&tol()).passes);
        }

        #[test]
        fn binarizations_and_complements(m in arb_observable(), bits in any::<u64>()) {
            let mask = SubsetMask::from_bits(bits, m.len());
            let b = binarize(&m, &mask, &tol()).unwrap();
            prop_assert!(b.diagnostics(&tol()).passes);
            let sum = subset_effect(&m, &mask).unwrap() + subset_effect(&m, &mask.complement()).unwrap();
            prop_assert!(dist(&sum, &identity(m.dim())) <= tol().eq_tol);
        }

        #[test]
        fn outputs_stay_valid(m in arb_observable(), eta in 0.0f64..1.0, t in 0.0f64..1.0, seed in any::<u64>()) {
            let p = uniform(m.len());
            prop_assert!(mix_with_trivial(&m, eta, &p, &tol()).unwrap().diagnostics(&tol()).passes);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let u = fixtures::random_unitary(&mut rng, m.dim());
            let other = m.conjugated(&u);
            prop_assert!(convex_mixture(&m, &other, t, &tol()).unwrap().diagnostics(&tol()).passes);
        }

        #[test]
        fn product_marginals(d in 1usize..4, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let diag_a = fixtures::random_diagonal_observable(&mut rng, d, 3);
            let diag_b = fixtures::random_diagonal_observable(&mut rng, d, 2);
            let cert = product_joint(&diag_a, &diag_b, &tol()).unwrap();
            prop_assert!(cert.marginal_residuals.iter().all(|&r| r <= tol().eq_tol));
            prop_assert!(cert.joint.diagnostics(&tol()).passes);
        }
    }
}
