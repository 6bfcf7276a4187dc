//! Joint measurability, coexistence and binarization compatibility, together
//! with the mother-based joint constructions and the relabeling and
//! post-processing finders.
//!
//! Every verdict is three-valued. `Yes` always carries a certificate that can
//! be re-verified from scratch; `No` names the violated condition or the exact
//! shortcut used; everything the numerics cannot settle is `Undecided`.

use std::collections::HashMap;

use serde::{Serialize, Serializer};

use crate::dilation::dilate_minimal;
use crate::feasibility::{
    dykstra_solve, FeasibilityProblem, FeasibilityStatus, FeasibilityVerdict, SolverOptions, Term,
};
use crate::observable::{
    binary_observable, commutes, is_pvm, product_joint, same_dim, subset_effect, DiscreteObservable, RelabelingMap,
    StochasticMatrix, SubsetMask, MINUS, PLUS,
};
use crate::operator::{
    c64, check_effect, dist, douglas_factor, eigh, frobenius, hermitize, identity, loewner_leq, min_eigenvalue,
    CMatrix, Tolerance,
};
use crate::timing::Stopwatch;
use crate::{Error, Result};

pub const DEFAULT_MAX_MOTHER_OUTCOMES: usize = 5;
pub const DEFAULT_SUBSET_CAP: usize = 4096;

/// Largest signature set solved directly in the coexistence search.
const FULL_SIGNATURE_LIMIT: usize = 256;
/// Candidate signature sets examined in the bounded mother search.
const MOTHER_CANDIDATE_BUDGET: usize = 20_000;
const MOTHER_SOLVE_BUDGET: usize = 400;
const RELABEL_NODE_BUDGET: usize = 1_000_000;
/// Squared overlap above which two rank-one effects count as parallel.
const PARALLEL_OVERLAP: f64 = 1.0 - 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Relation {
    Jm,
    Coexistent,
    BinarizationsJm,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Status {
    Yes,
    No,
    Undecided,
}

impl From<FeasibilityStatus> for Status {
    fn from(s: FeasibilityStatus) -> Self {
        match s {
            FeasibilityStatus::Feasible => Status::Yes,
            FeasibilityStatus::NumericallyInfeasible => Status::No,
            FeasibilityStatus::Undecided => Status::Undecided,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    /// `G_ij = A_i B_j` for commuting inputs.
    Product,
    /// Closed form from an order relation between two effects.
    OrderShortcut,
    Solver,
    MotherBinary,
    ExtremeMother,
    ExtremePair,
}

/// Solver points satisfy constraints to `feas_tol`; certificates built from
/// them are checked at ten times that.
pub fn certificate_tolerance(tol: &Tolerance, opts: &SolverOptions) -> Tolerance {
    let t = (10.0 * opts.feas_tol).min(1e-3);
    Tolerance { eig_tol: tol.eig_tol.max(t), eq_tol: tol.eq_tol.max(t) }
}

fn tuple_label(parts: &[&str]) -> String {
    format!("({})", parts.join(","))
}

fn serialize_mask<S: Serializer>(m: &SubsetMask, s: S) -> std::result::Result<S::Ok, S::Error> {
    m.indices().serialize(s)
}

#[derive(Debug, Clone, Serialize)]
pub struct JointCertificate {
    #[serde(serialize_with = "crate::io::serialize_observable")]
    pub joint: DiscreteObservable,
    /// Marginal outcome indices of each joint outcome.
    pub tuples: Vec<Vec<usize>>,
    /// Worst effect-wise deviation for each marginal, in marginal order.
    pub marginal_residuals: Vec<f64>,
    pub provenance: Provenance,
}

impl JointCertificate {
    /// Builds the joint from `(tuple, effect)` entries; zero effects drop out.
    pub fn from_tuples(
        marginals: &[&DiscreteObservable],
        entries: Vec<(Vec<usize>, CMatrix)>,
        provenance: Provenance,
        tol: &Tolerance,
    ) -> Result<Self> {
        let dim = marginals.first().map(|m| m.dim()).ok_or_else(|| Error::Precondition("no marginals".into()))?;
        let mut by_label = HashMap::new();
        let mut outcomes = Vec::with_capacity(entries.len());
        for (t, e) in entries {
            if t.len() != marginals.len() || t.iter().zip(marginals).any(|(&i, m)| i >= m.len()) {
                return Err(Error::Precondition(format!("tuple {t:?} does not index the marginals")));
            }
            let parts: Vec<&str> = t.iter().zip(marginals).map(|(&i, m)| m.outcomes()[i].label.as_str()).collect();
            let label = tuple_label(&parts);
            by_label.insert(label.clone(), t);
            outcomes.push((label, e));
        }
        let joint = DiscreteObservable::new(dim, outcomes, tol)?;
        let tuples = joint.labels().iter().map(|l| by_label[*l].clone()).collect();
        let mut cert = JointCertificate { joint, tuples, marginal_residuals: vec![], provenance };
        cert.marginal_residuals = cert.recompute_residuals(marginals);
        Ok(cert)
    }

    pub fn from_pair_blocks(
        a: &DiscreteObservable,
        b: &DiscreteObservable,
        blocks: Vec<Vec<CMatrix>>,
        provenance: Provenance,
        tol: &Tolerance,
    ) -> Result<Self> {
        let entries = blocks
            .into_iter()
            .enumerate()
            .flat_map(|(i, row)| row.into_iter().enumerate().map(move |(j, g)| (vec![i, j], g)))
            .collect();
        Self::from_tuples(&[a, b], entries, provenance, tol)
    }

    /// Marginal residuals recomputed from the joint's effects.
    pub fn recompute_residuals(&self, marginals: &[&DiscreteObservable]) -> Vec<f64> {
        marginals
            .iter()
            .enumerate()
            .map(|(k, m)| {
                (0..m.len())
                    .map(|i| {
                        let mut s = CMatrix::zeros(m.dim(), m.dim());
                        for (t, g) in self.tuples.iter().zip(self.joint.effects()) {
                            if t[k] == i {
                                s += g;
                            }
                        }
                        dist(&s, m.effect(i))
                    })
                    .fold(0.0, f64::max)
            })
            .collect()
    }

    pub fn max_residual(&self) -> f64 {
        self.marginal_residuals.iter().cloned().fold(0.0, f64::max)
    }

    /// Effect of the joint outcome with the given tuple, zero if dropped.
    pub fn block(&self, tuple: &[usize]) -> CMatrix {
        match self.tuples.iter().position(|t| t == tuple) {
            Some(k) => self.joint.effect(k).clone(),
            None => CMatrix::zeros(self.joint.dim(), self.joint.dim()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Side {
    A,
    B,
}

/// `M(mother_mask) = side(subset)`.
#[derive(Debug, Clone, Serialize)]
pub struct MaskAssignment {
    pub side: Side,
    #[serde(serialize_with = "serialize_mask")]
    pub subset: SubsetMask,
    #[serde(serialize_with = "serialize_mask")]
    pub mother_mask: SubsetMask,
}

#[derive(Debug, Clone, Serialize)]
pub struct MotherAssignment {
    #[serde(serialize_with = "crate::io::serialize_observable")]
    pub mother: DiscreteObservable,
    pub assignments: Vec<MaskAssignment>,
    pub residual: f64,
}

impl MotherAssignment {
    /// Worst `‖M(Z) - side(X)‖_F`, recomputed.
    pub fn verify(&self, a: &DiscreteObservable, b: &DiscreteObservable) -> Result<f64> {
        self.assignments.iter().try_fold(0.0f64, |worst, m| {
            let obs = if m.side == Side::A { a } else { b };
            Ok(worst.max(dist(&subset_effect(&self.mother, &m.mother_mask)?, &subset_effect(obs, &m.subset)?)))
        })
    }

    /// A joint observable is a mother: `N(X × Ω') = A(X)`, `N(Ω × Y) = B(Y)`.
    pub fn from_joint(cert: &JointCertificate, a: &DiscreteObservable, b: &DiscreteObservable) -> Result<Self> {
        let mut assignments = Vec::new();
        for (side, obs, k) in [(Side::A, a, 0), (Side::B, b, 1)] {
            for x in nontrivial_masks(obs.len()) {
                let mother_mask = SubsetMask::from_members(cert.tuples.iter().map(|t| x.contains(t[k])).collect());
                assignments.push(MaskAssignment { side, subset: x, mother_mask });
            }
        }
        let mut out = MotherAssignment { mother: cert.joint.clone(), assignments, residual: 0.0 };
        out.residual = out.verify(a, b)?;
        Ok(out)
    }
}

/// Every nonempty proper subset of `n` outcomes.
fn nontrivial_masks(n: usize) -> Vec<SubsetMask> {
    if n >= 20 {
        return (0..n).map(|i| SubsetMask::singleton(i, n)).collect();
    }
    (1..(1u64 << n) - 1).map(|bits| SubsetMask::from_bits(bits, n)).collect()
}

/// One representative per complementary pair of nontrivial masks, or the
/// singletons when `2^n` exceeds the cap. The flag reports the restriction.
fn masks_up_to_complement(n: usize, cap: usize) -> (Vec<SubsetMask>, bool) {
    if n >= 63 || (1usize << n) > cap {
        let singles = if n == 2 {
            vec![SubsetMask::singleton(0, 2)]
        } else {
            (0..n).map(|i| SubsetMask::singleton(i, n)).collect()
        };
        return (singles, true);
    }
    if n < 2 {
        return (vec![], false);
    }
    ((1..1u64 << (n - 1)).map(|bits| SubsetMask::from_bits(bits, n)).collect(), false)
}

/// One row of the binarization witness table.
#[derive(Debug, Clone, Serialize)]
pub struct PairWitness {
    #[serde(serialize_with = "serialize_mask")]
    pub a_subset: SubsetMask,
    #[serde(serialize_with = "serialize_mask")]
    pub b_subset: SubsetMask,
    pub status: Status,
    pub joint: Option<JointCertificate>,
    pub separation_gap: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Certificate {
    Joint(JointCertificate),
    Mother(MotherAssignment),
    Witnesses { pairs: Vec<PairWitness> },
    Violation { condition: String, value: Option<f64> },
    None,
}

#[derive(Debug, Clone, Serialize)]
pub struct CompatibilityVerdict {
    pub relation: Relation,
    pub status: Status,
    pub certificate: Certificate,
    pub residuals: Vec<f64>,
    pub notes: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solver: Option<FeasibilityVerdict>,
}

impl CompatibilityVerdict {
    fn new(relation: Relation, status: Status, certificate: Certificate) -> Self {
        let residuals = match &certificate {
            Certificate::Joint(c) => c.marginal_residuals.clone(),
            Certificate::Mother(m) => vec![m.residual],
            Certificate::Witnesses { pairs } => {
                pairs.iter().filter_map(|p| p.joint.as_ref().map(JointCertificate::max_residual)).collect()
            }
            _ => vec![],
        };
        CompatibilityVerdict { relation, status, certificate, residuals, notes: vec![], solver: None }
    }

    fn with_note(mut self, note: impl Into<String>) -> Self {
        self.notes.push(note.into());
        self
    }

    fn with_solver(mut self, v: FeasibilityVerdict) -> Self {
        if let Some(n) = &v.note {
            self.notes.push(n.clone());
        }
        self.solver = Some(v);
        self
    }

    fn violation(relation: Relation, condition: impl Into<String>, value: Option<f64>) -> Self {
        Self::new(relation, Status::No, Certificate::Violation { condition: condition.into(), value })
    }

    pub fn joint(&self) -> Option<&JointCertificate> {
        match &self.certificate {
            Certificate::Joint(c) => Some(c),
            _ => None,
        }
    }

    pub fn mother(&self) -> Option<&MotherAssignment> {
        match &self.certificate {
            Certificate::Mother(m) => Some(m),
            _ => None,
        }
    }

    pub fn witnesses(&self) -> &[PairWitness] {
        match &self.certificate {
            Certificate::Witnesses { pairs } => pairs,
            _ => &[],
        }
    }
}

fn jm_problem(a: &DiscreteObservable, b: &DiscreteObservable) -> Result<FeasibilityProblem> {
    let d = a.dim();
    let mut p = FeasibilityProblem::new();
    let blocks: Vec<Vec<usize>> = (0..a.len()).map(|_| (0..b.len()).map(|_| p.add_block(d)).collect()).collect();
    for (i, row) in blocks.iter().enumerate() {
        p.add_constraint(row.iter().map(|&g| Term::identity(g)).collect(), a.effect(i).clone())?;
    }
    for j in 0..b.len() {
        p.add_constraint(blocks.iter().map(|row| Term::identity(row[j])).collect(), b.effect(j).clone())?;
    }
    Ok(p)
}

pub fn jm_check(
    a: &DiscreteObservable,
    b: &DiscreteObservable,
    tol: &Tolerance,
    opts: &SolverOptions,
) -> Result<CompatibilityVerdict> {
    same_dim(a, b)?;
    if commutes(a, b, tol)? {
        let cert = product_joint(a, b, tol)?;
        return Ok(CompatibilityVerdict::new(Relation::Jm, Status::Yes, Certificate::Joint(cert))
            .with_note("commuting pair: product joint"));
    }
    if is_pvm(a, tol) && is_pvm(b, tol) {
        return Ok(CompatibilityVerdict::violation(
            Relation::Jm,
            "both observables are projection valued and do not commute",
            None,
        ));
    }
    let v = dykstra_solve(&jm_problem(a, b)?, opts);
    match (v.status, &v.point) {
        (FeasibilityStatus::Feasible, Some(pt)) => {
            let blocks = (0..a.len()).map(|i| pt[i * b.len()..(i + 1) * b.len()].to_vec()).collect();
            let cert = JointCertificate::from_pair_blocks(
                a,
                b,
                blocks,
                Provenance::Solver,
                &certificate_tolerance(tol, opts),
            )?;
            Ok(CompatibilityVerdict::new(Relation::Jm, Status::Yes, Certificate::Joint(cert)).with_solver(v))
        }
        (FeasibilityStatus::NumericallyInfeasible, _) => Ok(CompatibilityVerdict::violation(
            Relation::Jm,
            "no joint observable: marginal constraints and positivity are numerically separated",
            v.separation_gap,
        )
        .with_solver(v)),
        _ => Ok(CompatibilityVerdict::new(Relation::Jm, Status::Undecided, Certificate::None).with_solver(v)),
    }
}

fn binary_index(o: &DiscreteObservable, plus: bool) -> Option<usize> {
    o.index_of(if plus { PLUS } else { MINUS })
}

/// Joint of `O^E` and `O^F` from the lower bound `G`.
fn effect_pair_certificate(
    e: &CMatrix,
    f: &CMatrix,
    g: &CMatrix,
    provenance: Provenance,
    tol: &Tolerance,
) -> Result<JointCertificate> {
    let d = e.nrows();
    let oe = binary_observable(e, tol)?;
    let of = binary_observable(f, tol)?;
    let blocks =
        [(true, true, g.clone()), (true, false, e - g), (false, true, f - g), (false, false, identity(d) - e - f + g)];
    let entries = blocks
        .into_iter()
        .filter_map(|(x, y, m)| Some((vec![binary_index(&oe, x)?, binary_index(&of, y)?], hermitize(&m))))
        .collect();
    JointCertificate::from_tuples(&[&oe, &of], entries, provenance, tol)
}

/// Joint measurability of the binary observables `O^E` and `O^F`.
pub fn effect_pair_joint(
    e: &CMatrix,
    f: &CMatrix,
    tol: &Tolerance,
    opts: &SolverOptions,
) -> Result<CompatibilityVerdict> {
    for m in [e, f] {
        if !check_effect(m, tol)? {
            return Err(Error::Precondition("input is not an effect".into()));
        }
    }
    if e.nrows() != f.nrows() {
        return Err(Error::DimensionMismatch { expected: e.nrows(), found: f.nrows() });
    }
    let (e, f) = (hermitize(e), hermitize(f));
    let shortcut = if loewner_leq(&e, &f, tol)? {
        Some((e.clone(), Provenance::OrderShortcut, "E <= F: G = E"))
    } else if loewner_leq(&f, &e, tol)? {
        Some((f.clone(), Provenance::OrderShortcut, "F <= E: G = F"))
    } else if frobenius(&crate::operator::commutator(&e, &f)) <= tol.eq_tol {
        Some((hermitize(&(&e * &f)), Provenance::Product, "commuting effects: G = EF"))
    } else {
        None
    };
    if let Some((g, prov, note)) = shortcut {
        let cert = effect_pair_certificate(&e, &f, &g, prov, tol)?;
        return Ok(CompatibilityVerdict::new(Relation::Jm, Status::Yes, Certificate::Joint(cert)).with_note(note));
    }
    let d = e.nrows();
    let mut p = FeasibilityProblem::new();
    let g = p.add_block(d);
    let s1 = p.add_block(d);
    let s2 = p.add_block(d);
    let s3 = p.add_block(d);
    p.add_constraint(vec![Term::identity(g), Term::identity(s1)], e.clone())?;
    p.add_constraint(vec![Term::identity(g), Term::identity(s2)], f.clone())?;
    p.add_constraint(vec![Term::scaled(g, -1.0), Term::identity(s3)], identity(d) - &e - &f)?;
    let v = dykstra_solve(&p, opts);
    match (v.status, &v.point) {
        (FeasibilityStatus::Feasible, Some(pt)) => {
            let cert = effect_pair_certificate(&e, &f, &pt[0], Provenance::Solver, &certificate_tolerance(tol, opts))?;
            Ok(CompatibilityVerdict::new(Relation::Jm, Status::Yes, Certificate::Joint(cert)).with_solver(v))
        }
        (FeasibilityStatus::NumericallyInfeasible, _) => Ok(CompatibilityVerdict::violation(
            Relation::Jm,
            "no G with 0 <= G <= E, G <= F and E + F - G <= I",
            v.separation_gap,
        )
        .with_solver(v)),
        _ => Ok(CompatibilityVerdict::new(Relation::Jm, Status::Undecided, Certificate::None).with_solver(v)),
    }
}

/// Runs [`effect_pair_joint`] on `(A(X), B(Y))` for every pair of nontrivial
/// masks, one per complementary pair since `O^{A(X^c)}` only swaps labels.
pub fn binarization_jm_all(
    a: &DiscreteObservable,
    b: &DiscreteObservable,
    subset_cap: usize,
    tol: &Tolerance,
    opts: &SolverOptions,
) -> Result<CompatibilityVerdict> {
    same_dim(a, b)?;
    let (xs, ra) = masks_up_to_complement(a.len(), subset_cap);
    let (ys, rb) = masks_up_to_complement(b.len(), subset_cap);
    let mut pairs = Vec::with_capacity(xs.len() * ys.len());
    let mut status = Status::Yes;
    'outer: for x in &xs {
        let ex = subset_effect(a, x)?;
        for y in &ys {
            let v = effect_pair_joint(&ex, &subset_effect(b, y)?, tol, opts)?;
            let gap = v.solver.as_ref().and_then(|s| s.separation_gap);
            pairs.push(PairWitness {
                a_subset: x.clone(),
                b_subset: y.clone(),
                status: v.status,
                joint: v.joint().cloned(),
                separation_gap: gap,
            });
            match v.status {
                Status::No => {
                    status = Status::No;
                    break 'outer;
                }
                Status::Undecided => status = Status::Undecided,
                Status::Yes => {}
            }
        }
    }
    let mut out = CompatibilityVerdict::new(Relation::BinarizationsJm, status, Certificate::Witnesses { pairs });
    if ra || rb {
        out = out.with_note(format!(
            "subset enumeration exceeds the cap of {subset_cap}; restricted to singletons and complements"
        ));
    }
    if status == Status::No {
        out = out.with_note("stopped at the first incompatible binarization pair");
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct Rank1Verdict {
    pub applicable: bool,
    pub violated: bool,
    pub max_eigenvalue: f64,
    pub note: Option<String>,
}

/// Top eigenpair if `e` is rank one within `eig_tol`.
fn rank_one(e: &CMatrix, tol: &Tolerance) -> Result<Option<(f64, Vec<crate::C64>)>> {
    let eig = eigh(e, tol)?;
    let n = eig.values.len();
    if n == 0 || eig.max() <= tol.eig_tol || eig.values.iter().filter(|&&l| l.abs() > tol.eig_tol).count() != 1 {
        return Ok(None);
    }
    Ok(Some((eig.max(), eig.vectors.column(n - 1).iter().cloned().collect())))
}

fn overlap(v: &[crate::C64], w: &[crate::C64]) -> f64 {
    v.iter().zip(w).map(|(a, b)| a.conj() * b).sum::<crate::C64>().norm_sqr()
}

/// Necessary condition for a common mother of pairwise non-parallel rank-one
/// effects: their sum must stay below the identity.
pub fn rank1_packing_condition(effects: &[CMatrix], tol: &Tolerance) -> Result<Rank1Verdict> {
    let na =
        |note: String| Rank1Verdict { applicable: false, violated: false, max_eigenvalue: f64::NAN, note: Some(note) };
    let mut rays = Vec::with_capacity(effects.len());
    for (k, e) in effects.iter().enumerate() {
        match rank_one(e, tol)? {
            Some((_, v)) => rays.push(v),
            None => return Ok(na(format!("effect {k} is not rank one"))),
        }
    }
    for i in 0..rays.len() {
        for j in i + 1..rays.len() {
            if overlap(&rays[i], &rays[j]) > PARALLEL_OVERLAP {
                return Ok(na(format!("effects {i} and {j} have parallel ranges")));
            }
        }
    }
    let d = effects.first().map_or(0, |e| e.nrows());
    let sum = effects.iter().fold(CMatrix::zeros(d, d), |acc, e| acc + e);
    let max = eigh(&sum, tol)?.max();
    Ok(Rank1Verdict { applicable: true, violated: max > 1.0 + tol.eig_tol, max_eigenvalue: max, note: None })
}

/// Rank-one members of the ranges of `a` and `b`, one per ray (the largest).
fn rank1_range_members(obs: &[&DiscreteObservable], cap: usize, tol: &Tolerance) -> Result<Vec<CMatrix>> {
    let mut found: Vec<(f64, Vec<crate::C64>, CMatrix)> = Vec::new();
    for o in obs {
        let masks = if o.len() < 63 && (1usize << o.len()) <= cap {
            nontrivial_masks(o.len())
        } else {
            (0..o.len()).map(|i| SubsetMask::singleton(i, o.len())).collect()
        };
        for x in masks {
            let e = subset_effect(o, &x)?;
            if let Some((l, v)) = rank_one(&e, tol)? {
                match found.iter_mut().find(|(_, w, _)| overlap(&v, w) > PARALLEL_OVERLAP) {
                    Some(slot) if slot.0 < l => *slot = (l, v, e),
                    Some(_) => {}
                    None => found.push((l, v, e)),
                }
            }
        }
    }
    Ok(found.into_iter().map(|(_, _, e)| e).collect())
}

#[derive(Debug, Clone, Copy)]
pub struct CoexistenceOptions {
    pub max_mother_outcomes: usize,
    pub subset_cap: usize,
}

impl Default for CoexistenceOptions {
    fn default() -> Self {
        CoexistenceOptions { max_mother_outcomes: DEFAULT_MAX_MOTHER_OUTCOMES, subset_cap: DEFAULT_SUBSET_CAP }
    }
}

/// A required effect `side(subset)`, realised by mother signatures with bit
/// `rep` set (or clear, when `complemented`).
struct Request {
    side: Side,
    subset: SubsetMask,
    rep: usize,
    complemented: bool,
}

struct MotherSearch {
    dim: usize,
    reps: Vec<CMatrix>,
    requests: Vec<Request>,
}

impl MotherSearch {
    fn new(a: &DiscreteObservable, b: &DiscreteObservable, tol: &Tolerance) -> Result<Self> {
        let d = a.dim();
        let mut reps: Vec<CMatrix> = Vec::new();
        let mut requests = Vec::new();
        let close = 10.0 * tol.eq_tol;
        for (side, obs) in [(Side::A, a), (Side::B, b)] {
            for x in nontrivial_masks(obs.len()) {
                let e = subset_effect(obs, &x)?;
                let rest = identity(d) - &e;
                let found = reps.iter().enumerate().find_map(|(k, r)| {
                    if dist(r, &e) <= close {
                        Some((k, false))
                    } else if dist(r, &rest) <= close {
                        Some((k, true))
                    } else {
                        None
                    }
                });
                let (rep, complemented) = found.unwrap_or_else(|| {
                    reps.push(e);
                    (reps.len() - 1, false)
                });
                requests.push(Request { side, subset: x, rep, complemented });
            }
        }
        Ok(MotherSearch { dim: d, reps, requests })
    }

    fn problem(&self, signatures: &[usize]) -> Result<FeasibilityProblem> {
        let mut p = FeasibilityProblem::new();
        let atoms: Vec<usize> = signatures.iter().map(|_| p.add_block(self.dim)).collect();
        p.add_constraint(atoms.iter().map(|&z| Term::identity(z)).collect(), identity(self.dim))?;
        for (k, r) in self.reps.iter().enumerate() {
            let terms = signatures
                .iter()
                .zip(&atoms)
                .filter(|(s, _)| *s >> k & 1 == 1)
                .map(|(_, &z)| Term::identity(z))
                .collect();
            p.add_constraint(terms, r.clone())?;
        }
        Ok(p)
    }

    fn assignment(
        &self,
        signatures: &[usize],
        atoms: &[CMatrix],
        a: &DiscreteObservable,
        b: &DiscreteObservable,
        tol: &Tolerance,
    ) -> Result<MotherAssignment> {
        let r = self.reps.len();
        let outcomes: Vec<(String, CMatrix)> = signatures
            .iter()
            .zip(atoms)
            .map(|(s, m)| ((0..r).map(|k| if s >> k & 1 == 1 { '1' } else { '0' }).collect(), m.clone()))
            .collect();
        let mother = DiscreteObservable::new(self.dim, outcomes, tol)?;
        let kept: Vec<usize> = mother
            .labels()
            .iter()
            .map(|l| l.chars().enumerate().fold(0usize, |acc, (k, c)| acc | (usize::from(c == '1') << k)))
            .collect();
        let assignments = self
            .requests
            .iter()
            .map(|q| {
                let mask =
                    SubsetMask::from_members(kept.iter().map(|s| (s >> q.rep & 1 == 1) != q.complemented).collect());
                MaskAssignment { side: q.side, subset: q.subset.clone(), mother_mask: mask }
            })
            .collect();
        let mut out = MotherAssignment { mother, assignments, residual: 0.0 };
        out.residual = out.verify(a, b)?;
        Ok(out)
    }
}

/// Pairwise order facts between required effects, used to prune signature sets.
struct OrderTable {
    leq: Vec<Vec<bool>>,
    sum_leq_i: Vec<Vec<bool>>,
    sum_geq_i: Vec<Vec<bool>>,
}

impl OrderTable {
    fn new(reps: &[CMatrix], tol: &Tolerance) -> Result<Self> {
        let n = reps.len();
        let d = reps.first().map_or(0, |r| r.nrows());
        let mut t = OrderTable {
            leq: vec![vec![false; n]; n],
            sum_leq_i: vec![vec![false; n]; n],
            sum_geq_i: vec![vec![false; n]; n],
        };
        for i in 0..n {
            for j in 0..n {
                t.leq[i][j] = loewner_leq(&reps[i], &reps[j], tol)?;
                let s = &reps[i] + &reps[j];
                t.sum_leq_i[i][j] = loewner_leq(&s, &identity(d), tol)?;
                t.sum_geq_i[i][j] = loewner_leq(&identity(d), &s, tol)?;
            }
        }
        Ok(t)
    }

    fn admits(&self, sigs: &[usize]) -> bool {
        let n = self.leq.len();
        for k in 0..n {
            if !sigs.iter().any(|s| s >> k & 1 == 1) || sigs.iter().all(|s| s >> k & 1 == 1) {
                return false;
            }
        }
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let subset = sigs.iter().all(|s| s >> i & 1 == 0 || s >> j & 1 == 1);
                if subset && !self.leq[i][j] {
                    return false;
                }
                let disjoint = sigs.iter().all(|s| s >> i & 1 == 0 || s >> j & 1 == 0);
                if disjoint && !self.sum_leq_i[i][j] {
                    return false;
                }
                let covering = sigs.iter().all(|s| s >> i & 1 == 1 || s >> j & 1 == 1);
                if covering && !self.sum_geq_i[i][j] {
                    return false;
                }
            }
        }
        true
    }
}

/// Next m-combination of `0..n` in lexicographic order.
fn next_combination(c: &mut [usize], n: usize) -> bool {
    let m = c.len();
    for i in (0..m).rev() {
        if c[i] < n - m + i {
            c[i] += 1;
            for j in i + 1..m {
                c[j] = c[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Decides coexistence with the precedence: joint observable, binarization
/// incompatibility, rank-one packing, then a mother search.
///
/// The mother search works with signatures: atom `s` of the mother lies in
/// the mask of required effect `k` iff bit `k` of `s` is set. Grouping the
/// outcomes of any mother by signature yields a mother on the full signature
/// set, so when that set is small enough the single problem over all `2^r`
/// signatures decides coexistence up to solver accuracy. Otherwise signature
/// sets of size `2..=max_mother_outcomes` are enumerated in lexicographic
/// order with order-based pruning.
pub fn coexistence_check(
    a: &DiscreteObservable,
    b: &DiscreteObservable,
    copts: &CoexistenceOptions,
    tol: &Tolerance,
    opts: &SolverOptions,
) -> Result<CompatibilityVerdict> {
    same_dim(a, b)?;
    let jm = jm_check(a, b, tol, opts)?;
    if jm.joint().is_some() {
        return coexistence_given(a, b, &jm, None, copts, tol, opts);
    }
    let bin = binarization_jm_all(a, b, copts.subset_cap, tol, opts)?;
    coexistence_given(a, b, &jm, Some(&bin), copts, tol, opts)
}

/// The three verdicts of the hierarchy for one pair, each computed once.
#[derive(Debug, Clone, Serialize)]
pub struct HierarchyVerdict {
    pub jm: CompatibilityVerdict,
    pub coexistence: CompatibilityVerdict,
    pub binarizations: CompatibilityVerdict,
}

impl HierarchyVerdict {
    /// `JM ⇒ coexistence ≠ NO` and `coexistence = YES ⇒ binarizations ≠ NO`.
    pub fn is_sound(&self) -> bool {
        !(self.jm.status == Status::Yes && self.coexistence.status == Status::No)
            && !(self.coexistence.status == Status::Yes && self.binarizations.status == Status::No)
            && !(self.jm.status == Status::Yes && self.binarizations.status == Status::No)
    }
}

pub fn hierarchy_check(
    a: &DiscreteObservable,
    b: &DiscreteObservable,
    copts: &CoexistenceOptions,
    tol: &Tolerance,
    opts: &SolverOptions,
) -> Result<HierarchyVerdict> {
    same_dim(a, b)?;
    let jm = jm_check(a, b, tol, opts)?;
    let binarizations = binarization_jm_all(a, b, copts.subset_cap, tol, opts)?;
    let coexistence = coexistence_given(a, b, &jm, Some(&binarizations), copts, tol, opts)?;
    Ok(HierarchyVerdict { jm, coexistence, binarizations })
}

/// Coexistence from an already computed JM verdict and, unless that verdict
/// carries a joint, the binarization verdict.
fn coexistence_given(
    a: &DiscreteObservable,
    b: &DiscreteObservable,
    jm: &CompatibilityVerdict,
    bin: Option<&CompatibilityVerdict>,
    copts: &CoexistenceOptions,
    tol: &Tolerance,
    opts: &SolverOptions,
) -> Result<CompatibilityVerdict> {
    if let Some(cert) = jm.joint() {
        let m = MotherAssignment::from_joint(cert, a, b)?;
        return Ok(CompatibilityVerdict::new(Relation::Coexistent, Status::Yes, Certificate::Mother(m))
            .with_note("jointly measurable; the joint observable is a mother"));
    }
    let bin = bin.ok_or_else(|| Error::Precondition("binarization verdict required".into()))?;
    if bin.status == Status::No {
        let w = bin.witnesses().last().expect("a failing pair is recorded");
        let mut out = CompatibilityVerdict::violation(
            Relation::Coexistent,
            format!(
                "binarizations {:?} and {:?} are not jointly measurable",
                w.a_subset.indices(),
                w.b_subset.indices()
            ),
            w.separation_gap,
        );
        out.notes = bin.notes.clone();
        return Ok(out);
    }
    let members = rank1_range_members(&[a, b], copts.subset_cap, tol)?;
    if members.len() >= 2 {
        let r1 = rank1_packing_condition(&members, tol)?;
        if r1.applicable && r1.violated {
            return Ok(CompatibilityVerdict::violation(
                Relation::Coexistent,
                format!("rank-one packing: {} pairwise non-parallel rank-one range members sum above I", members.len()),
                Some(r1.max_eigenvalue),
            ));
        }
    }
    if [a, b].iter().any(|o| o.len() >= 20 || (1usize << o.len()) > copts.subset_cap) {
        return Ok(CompatibilityVerdict::new(Relation::Coexistent, Status::Undecided, Certificate::None).with_note(
            format!("outcome count exceeds the subset cap of {}; mother search skipped", copts.subset_cap),
        ));
    }
    let search = MotherSearch::new(a, b, tol)?;
    let r = search.reps.len();
    let cert_tol = certificate_tolerance(tol, opts);
    let mut notes = Vec::new();
    if r < 12 && (1usize << r) <= FULL_SIGNATURE_LIMIT {
        let sigs: Vec<usize> = (0..1usize << r).collect();
        let v = dykstra_solve(&search.problem(&sigs)?, opts);
        match (v.status, &v.point) {
            (FeasibilityStatus::Feasible, Some(pt)) => {
                let m = search.assignment(&sigs, pt, a, b, &cert_tol)?;
                let note = format!("mother over the full signature set ({} nonzero atoms)", m.mother.len());
                return Ok(CompatibilityVerdict::new(Relation::Coexistent, Status::Yes, Certificate::Mother(m))
                    .with_note(note)
                    .with_solver(v));
            }
            (FeasibilityStatus::NumericallyInfeasible, _) => {
                return Ok(CompatibilityVerdict::violation(
                    Relation::Coexistent,
                    format!("no mother over the complete set of {} signatures", sigs.len()),
                    v.separation_gap,
                )
                .with_solver(v));
            }
            _ => {
                // Every bounded candidate restricts this problem, so a smaller
                // mother is no easier to certify.
                return Ok(CompatibilityVerdict::new(Relation::Coexistent, Status::Undecided, Certificate::None)
                    .with_note("full signature problem undecided")
                    .with_solver(v));
            }
        }
    }
    let order = OrderTable::new(&search.reps, tol)?;
    let n_sigs = if r < 63 { 1usize << r } else { usize::MAX };
    let (mut candidates, mut solves) = (0usize, 0usize);
    let bounded = SolverOptions { max_iter: opts.max_iter.min(10_000), ..*opts };
    for m in 2..=copts.max_mother_outcomes.min(n_sigs) {
        let mut c: Vec<usize> = (0..m).collect();
        loop {
            candidates += 1;
            if candidates > MOTHER_CANDIDATE_BUDGET || solves > MOTHER_SOLVE_BUDGET {
                notes.push(format!("mother search budget exhausted at {m} atoms"));
                let mut out = CompatibilityVerdict::new(Relation::Coexistent, Status::Undecided, Certificate::None);
                out.notes = notes;
                return Ok(out);
            }
            if order.admits(&c) {
                solves += 1;
                let v = dykstra_solve(&search.problem(&c)?, &bounded);
                if let (FeasibilityStatus::Feasible, Some(pt)) = (v.status, &v.point) {
                    let ma = search.assignment(&c, pt, a, b, &cert_tol)?;
                    let mut out = CompatibilityVerdict::new(Relation::Coexistent, Status::Yes, Certificate::Mother(ma))
                        .with_solver(v);
                    out.notes.extend(notes);
                    return Ok(out);
                }
            }
            if !next_combination(&mut c, n_sigs) {
                break;
            }
        }
    }
    let mut out = CompatibilityVerdict::new(Relation::Coexistent, Status::Undecided, Certificate::None);
    notes.push(format!("no mother with at most {} outcomes found", copts.max_mother_outcomes));
    out.notes = notes;
    Ok(out)
}

/// `M = (E, F, I - E - F)` with `Z_1 = {0}`, `Z_2 = {1}`, for `E + F <= I`.
pub fn disjoint_mother(e: &CMatrix, f: &CMatrix, tol: &Tolerance) -> Result<(DiscreteObservable, [SubsetMask; 2])> {
    let d = e.nrows();
    let rest = identity(d) - e - f;
    let low = min_eigenvalue(&rest, tol)?;
    if low < -tol.eig_tol {
        return Err(Error::OrderViolation(low));
    }
    let m =
        DiscreteObservable::new(d, vec![("X".into(), e.clone()), ("Y".into(), f.clone()), ("rest".into(), rest)], tol)?;
    let n = m.len();
    let z = |label: &str| m.index_of(label).map_or_else(|| SubsetMask::empty(n), |i| SubsetMask::singleton(i, n));
    let masks = [z("X"), z("Y")];
    Ok((m, masks))
}

/// `N(x_1, ..., x_n) = M(Z_1^{x_1} ∩ ... ∩ Z_n^{x_n})` over `{+1, -1}^n`.
pub fn joint_from_mother_binary(
    m: &DiscreteObservable,
    masks: &[SubsetMask],
    tol: &Tolerance,
) -> Result<JointCertificate> {
    if masks.is_empty() {
        return Err(Error::InvalidMask("at least one mask is required".into()));
    }
    if let Some(z) = masks.iter().find(|z| z.outcome_count() != m.len()) {
        return Err(Error::InvalidMask(format!(
            "mask over {} outcomes used with {} outcomes",
            z.outcome_count(),
            m.len()
        )));
    }
    let marginals = masks.iter().map(|z| binary_observable(&subset_effect(m, z)?, tol)).collect::<Result<Vec<_>>>()?;
    let n = masks.len();
    let mut entries = Vec::new();
    'signs: for bits in 0..1u64 << n {
        let mut inter = SubsetMask::full(m.len());
        let mut tuple = Vec::with_capacity(n);
        for (i, z) in masks.iter().enumerate() {
            let plus = bits >> i & 1 == 0;
            inter = inter.intersect(&if plus { z.clone() } else { z.complement() });
            match binary_index(&marginals[i], plus) {
                Some(k) => tuple.push(k),
                None => continue 'signs,
            }
        }
        entries.push((tuple, subset_effect(m, &inter)?));
    }
    let refs: Vec<&DiscreteObservable> = marginals.iter().collect();
    JointCertificate::from_tuples(&refs, entries, Provenance::MotherBinary, tol)
}

fn check_realizes(
    m: &DiscreteObservable,
    masks: &[SubsetMask],
    target: &DiscreteObservable,
    tol: &Tolerance,
) -> Result<()> {
    if masks.len() != target.len() {
        return Err(Error::InvalidMask(format!("{} masks for {} outcomes", masks.len(), target.len())));
    }
    for (i, z) in masks.iter().enumerate() {
        let r = dist(&subset_effect(m, z)?, target.effect(i));
        if r > 10.0 * tol.eq_tol {
            return Err(Error::Precondition(format!("M(Z_{i}) differs from outcome {i} by {r:.3e}")));
        }
    }
    Ok(())
}

fn check_disjoint(m: &DiscreteObservable, masks: &[SubsetMask], tol: &Tolerance) -> Result<()> {
    let bound = 10.0 * tol.eq_tol;
    for i in 0..masks.len() {
        for j in i + 1..masks.len() {
            let o = frobenius(&subset_effect(m, &masks[i].intersect(&masks[j]))?);
            if o > bound {
                return Err(Error::NotApplicable(format!("overlap ‖M(Z_{i} ∩ Z_{j})‖_F = {o:.3e}")));
            }
        }
    }
    let union = masks.iter().fold(SubsetMask::empty(m.len()), |u, z| u.union(z));
    let o = frobenius(&subset_effect(m, &union.complement())?);
    if o > bound {
        return Err(Error::NotApplicable(format!("uncovered mass ‖M((∪Z_i)^c)‖_F = {o:.3e}")));
    }
    Ok(())
}

/// Dilation-level witness `C_i({z})` for one nonzero block of the joint.
#[derive(Debug, Clone, Serialize)]
pub struct FactorWitness {
    pub outcome: usize,
    pub mother_outcome: usize,
    /// Smallest eigenvalues of `C` and of `P_i - C`.
    pub lower: f64,
    pub upper: f64,
    /// `‖J*CJ - N(i, z)‖_F`.
    pub reconstruction: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExtremeJoint {
    pub certificate: JointCertificate,
    pub factors: Vec<FactorWitness>,
}

impl ExtremeJoint {
    pub fn max_factor_residual(&self) -> f64 {
        self.factors.iter().map(|f| f.reconstruction).fold(0.0, f64::max)
    }

    pub fn factors_ordered(&self, tol: &Tolerance) -> bool {
        self.factors.iter().all(|f| f.lower >= -tol.eig_tol && f.upper >= -tol.eig_tol)
    }
}

/// Joint of `A` and a mother `M` with `M(Z_i) = A_i`: `N(i, z) = M_z [z ∈ Z_i]`.
pub fn extreme_joint_with_mother(
    a: &DiscreteObservable,
    m: &DiscreteObservable,
    z: &[SubsetMask],
    tol: &Tolerance,
) -> Result<ExtremeJoint> {
    same_dim(a, m)?;
    check_realizes(m, z, a, tol)?;
    check_disjoint(m, z, tol)?;
    let dil = dilate_minimal(a, tol);
    let j = &dil.isometry;
    let mut entries = Vec::new();
    let mut factors = Vec::new();
    for (i, zi) in z.iter().enumerate() {
        let pj = &dil.blocks[i] * j;
        for k in zi.indices() {
            let n = m.effect(k).clone();
            let c = douglas_factor(&pj, &n, &tol.scaled(10.0))?;
            let lower = min_eigenvalue(&c, tol)?;
            let upper = min_eigenvalue(&(&dil.blocks[i] - &c), tol)?;
            let reconstruction = dist(&(j.adjoint() * &c * j), &n);
            factors.push(FactorWitness { outcome: i, mother_outcome: k, lower, upper, reconstruction });
            entries.push((vec![i, k], n));
        }
    }
    let certificate = JointCertificate::from_tuples(&[a, m], entries, Provenance::ExtremeMother, &tol.scaled(10.0))?;
    Ok(ExtremeJoint { certificate, factors })
}

/// `N(i, j) = M(Z_i ∩ W_j)` for a mother realising both `A` and `B`.
pub fn extreme_pair_joint(
    a: &DiscreteObservable,
    b: &DiscreteObservable,
    m: &DiscreteObservable,
    z: &[SubsetMask],
    w: &[SubsetMask],
    tol: &Tolerance,
) -> Result<JointCertificate> {
    same_dim(a, b)?;
    same_dim(a, m)?;
    check_realizes(m, z, a, tol)?;
    check_realizes(m, w, b, tol)?;
    check_disjoint(m, z, tol)?;
    let mut blocks = Vec::with_capacity(z.len());
    for zi in z {
        blocks.push(w.iter().map(|wj| subset_effect(m, &zi.intersect(wj))).collect::<Result<Vec<_>>>()?);
    }
    let d = a.dim();
    let sum = |it: &mut dyn Iterator<Item = &CMatrix>| it.fold(CMatrix::zeros(d, d), |acc, g| acc + g);
    let ra = (0..a.len()).map(|i| dist(&sum(&mut blocks[i].iter()), a.effect(i))).fold(0.0, f64::max);
    let rb = (0..b.len()).map(|j| dist(&sum(&mut blocks.iter().map(|row| &row[j])), b.effect(j))).fold(0.0, f64::max);
    if ra.max(rb) > 10.0 * tol.eq_tol {
        return Err(Error::NotApplicable(format!("marginal verification failed: residuals {ra:.3e}, {rb:.3e}")));
    }
    JointCertificate::from_pair_blocks(a, b, blocks, Provenance::ExtremePair, &tol.scaled(10.0))
}

/// Searches for `f` with `relabel(M, f) = A`, assigning mother outcomes in
/// order and pruning once a partial sum leaves `[0, A_x]`.
pub fn relabeling_finder(
    a: &DiscreteObservable,
    m: &DiscreteObservable,
    tol: &Tolerance,
) -> Result<Option<RelabelingMap>> {
    same_dim(a, m)?;
    let d = a.dim();
    let loose = tol.scaled(10.0);
    let targets: Vec<CMatrix> = a.effects().cloned().collect();
    let mut partial = vec![CMatrix::zeros(d, d); a.len()];
    let mut assign = Vec::with_capacity(m.len());
    let mut nodes = 0usize;

    fn dfs(
        z: usize,
        m: &DiscreteObservable,
        targets: &[CMatrix],
        partial: &mut [CMatrix],
        assign: &mut Vec<usize>,
        nodes: &mut usize,
        tol: &Tolerance,
    ) -> Result<bool> {
        if z == m.len() {
            return Ok(partial.iter().zip(targets).all(|(p, t)| dist(p, t) <= 10.0 * tol.eq_tol));
        }
        *nodes += 1;
        if *nodes > RELABEL_NODE_BUDGET {
            return Err(Error::CapExceeded(format!("relabeling search exceeded {RELABEL_NODE_BUDGET} nodes")));
        }
        for x in 0..targets.len() {
            let next = &partial[x] + m.effect(z);
            if !loewner_leq(&next, &targets[x], tol)? {
                continue;
            }
            let prev = std::mem::replace(&mut partial[x], next);
            assign.push(x);
            if dfs(z + 1, m, targets, partial, assign, nodes, tol)? {
                return Ok(true);
            }
            assign.pop();
            partial[x] = prev;
        }
        Ok(false)
    }

    if dfs(0, m, &targets, &mut partial, &mut assign, &mut nodes, &loose)? {
        let labels = a.labels().iter().map(|s| s.to_string()).collect();
        return Ok(Some(RelabelingMap::new(assign, labels)?));
    }
    Ok(None)
}

#[derive(Debug, Clone)]
pub struct PostProcessingResult {
    pub kernel: Option<StochasticMatrix>,
    pub verdict: FeasibilityVerdict,
}

/// LP for `β ≥ 0` with `Σ_z β(z, x) M_z = A_x` and rows summing to one.
pub fn post_processing_finder(
    a: &DiscreteObservable,
    m: &DiscreteObservable,
    tol: &Tolerance,
    opts: &SolverOptions,
) -> Result<PostProcessingResult> {
    same_dim(a, m)?;
    let (nz, nx) = (m.len(), a.len());
    let mut p = FeasibilityProblem::new();
    let beta: Vec<Vec<usize>> = (0..nz).map(|_| (0..nx).map(|_| p.add_block(1)).collect()).collect();
    for x in 0..nx {
        let terms = (0..nz).map(|z| Term::scalar_times(beta[z][x], m.effect(z).clone())).collect();
        p.add_constraint(terms, a.effect(x).clone())?;
    }
    for row in &beta {
        p.add_constraint(row.iter().map(|&b| Term::identity(b)).collect(), identity(1))?;
    }
    let verdict = dykstra_solve(&p, opts);
    let kernel = match (&verdict.status, &verdict.point) {
        (FeasibilityStatus::Feasible, Some(pt)) => {
            let rows = beta.iter().map(|row| row.iter().map(|&b| pt[b][(0, 0)].re.max(0.0)).collect()).collect();
            let labels = a.labels().iter().map(|s| s.to_string()).collect();
            Some(StochasticMatrix::new(rows, labels, &certificate_tolerance(tol, opts))?)
        }
        _ => None,
    };
    Ok(PostProcessingResult { kernel, verdict })
}

#[derive(Debug, Clone)]
pub struct ConeMembership {
    pub status: Status,
    pub coefficients: Option<Vec<f64>>,
    pub verdict: FeasibilityVerdict,
}

/// Whether `E = Σ_z c_z M_z` for some `c ≥ 0`.
pub fn cone_membership(
    e: &CMatrix,
    m: &DiscreteObservable,
    tol: &Tolerance,
    opts: &SolverOptions,
) -> Result<ConeMembership> {
    let dev = crate::operator::hermitian_deviation(e);
    if dev > tol.eq_tol {
        return Err(Error::NotHermitian(dev));
    }
    if e.nrows() != m.dim() {
        return Err(Error::DimensionMismatch { expected: m.dim(), found: e.nrows() });
    }
    let mut p = FeasibilityProblem::new();
    let terms = m.effects().map(|mz| Term::scalar_times(p.add_block(1), mz.clone())).collect();
    p.add_constraint(terms, hermitize(e))?;
    let verdict = dykstra_solve(&p, opts);
    let coefficients =
        verdict.point.as_ref().filter(|_| verdict.is_feasible()).map(|pt| pt.iter().map(|c| c[(0, 0)].re).collect());
    Ok(ConeMembership { status: verdict.status.into(), coefficients, verdict })
}

#[derive(Debug, Clone, Serialize)]
pub struct ThresholdStep {
    pub eta: f64,
    pub status: Status,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ThresholdResult {
    /// Largest visibility certified jointly measurable.
    pub threshold: f64,
    pub upper: f64,
    pub steps: Vec<ThresholdStep>,
}

pub const THRESHOLD_WIDTH: f64 = 1e-3;

/// Bisection on the visibility `η` at which the noisy pair stops being
/// jointly measurable. Undecided runs count as incompatible.
pub fn jm_threshold(
    a: &DiscreteObservable,
    b: &DiscreteObservable,
    p_a: &[f64],
    p_b: &[f64],
    tol: &Tolerance,
    opts: &SolverOptions,
) -> Result<ThresholdResult> {
    use crate::observable::mix_with_trivial;
    same_dim(a, b)?;
    let mut steps = Vec::new();
    let mut probe = |eta: f64| -> Result<Status> {
        let clock = Stopwatch::start();
        let v = jm_check(&mix_with_trivial(a, eta, p_a, tol)?, &mix_with_trivial(b, eta, p_b, tol)?, tol, opts)?;
        steps.push(ThresholdStep { eta, status: v.status, seconds: clock.seconds() });
        Ok(v.status)
    };
    if probe(1.0)? == Status::Yes {
        return Ok(ThresholdResult { threshold: 1.0, upper: 1.0, steps });
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    while hi - lo > THRESHOLD_WIDTH {
        let mid = 0.5 * (lo + hi);
        if probe(mid)? == Status::Yes {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(ThresholdResult { threshold: lo, upper: hi, steps })
}

/// `|ψ><ψ|` for a real unit vector, handy in tests and fixtures.
pub fn real_projector(v: &[f64]) -> CMatrix {
    let k: Vec<_> = v.iter().map(|&x| c64(x, 0.0)).collect();
    crate::operator::ket_bra(&k)
}
