//! Acceptance suite. Prints one PASS/FAIL line per criterion, then fails if
//! any criterion failed or the whole run exceeded 60 seconds.
//!
//! Run with `cargo test -p coexist-core --test acceptance -- --nocapture`.

use std::f64::consts::FRAC_1_SQRT_2;
use std::time::Instant;

use coexist::compatibility::{
    hierarchy_check, jm_threshold, post_processing_finder, relabeling_finder, CoexistenceOptions, HierarchyVerdict,
    Status,
};
use coexist::dilation::{dilate_minimal, is_extreme, verify_dilation};
use coexist::feasibility::SolverOptions;
use coexist::fixtures;
use coexist::io::{observable_from_json, observable_to_json};
use coexist::observable::{
    binarize, binary_observable, convex_mixture, mix_with_trivial, post_process, product_joint, relabel, subset_effect,
    uniform, validate,
};
use coexist::operator::{dist, identity, loewner_leq, partial_trace_first, psd_rank, sqrt_psd, tensor, trace, CMatrix};
use coexist::repro::{run_repro, FixtureSet};
use coexist::steering::{assemblage_from, steerable, LhsModel, SteeringStatus};
use coexist::{DiscreteObservable, RelabelingMap, StochasticMatrix, SubsetMask, Tolerance};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const PER_CLASS: usize = 200;

struct Outcome {
    id: u32,
    name: String,
    failures: Vec<String>,
    summary: String,
    seconds: f64,
}

impl Outcome {
    fn line(&self) -> String {
        let verdict = if self.failures.is_empty() { "PASS" } else { "FAIL" };
        let mut s = format!("criterion {}: {verdict} {} [{:.2}s] {}", self.id, self.name, self.seconds, self.summary);
        for f in self.failures.iter().take(5) {
            s.push_str(&format!("\n    - {f}"));
        }
        s
    }
}

fn timed(id: u32, name: &str, f: impl FnOnce(&mut Vec<String>) -> String) -> Outcome {
    let start = Instant::now();
    let mut failures = Vec::new();
    let summary = f(&mut failures);
    Outcome { id, name: name.into(), failures, summary, seconds: start.elapsed().as_secs_f64() }
}

fn check(failures: &mut Vec<String>, ok: bool, what: impl FnOnce() -> String) {
    if !ok {
        failures.push(what());
    }
}

fn tol() -> Tolerance {
    Tolerance::default()
}

fn opts() -> SolverOptions {
    SolverOptions::default()
}

fn criterion_5(fail: &mut Vec<String>) -> String {
    let (z, x) = (fixtures::sigma_z(), fixtures::sigma_x());
    let r = jm_threshold(&z, &x, &uniform(2), &uniform(2), &tol(), &opts()).expect("threshold runs");
    let target = FRAC_1_SQRT_2;
    check(fail, (r.threshold - target).abs() <= 0.01, || {
        format!("threshold {} not within 0.01 of 1/sqrt2", r.threshold)
    });
    let slowest = r.steps.iter().map(|s| s.seconds).fold(0.0, f64::max);
    check(fail, slowest <= 2.0, || format!("slowest bisection step took {slowest:.2} s"));
    format!("threshold={:.4} upper={:.4} steps={} slowest_step={:.3}s", r.threshold, r.upper, r.steps.len(), slowest)
}

fn criterion_8(fail: &mut Vec<String>) -> String {
    let o = opts();
    let bound = 10.0 * o.feas_tol;
    let v = steerable(&fixtures::phi_plus(), &[fixtures::sigma_z(), fixtures::sigma_x()], &o).unwrap();
    let gap = v.lhs.verdict.separation_gap.unwrap_or(0.0);
    check(fail, v.status == SteeringStatus::Steerable, || format!("phi+ with sigma_z/sigma_x: {:?}", v.status));
    check(fail, gap > 1e-3, || format!("separation gap {gap:.3e} <= 1e-3"));

    let (sz, sx) = fixtures::smeared_pair(0.6);
    let v = steerable(&fixtures::phi_plus(), &[sz, sx], &o).unwrap();
    check(fail, v.status == SteeringStatus::Unsteerable, || format!("phi+ with smeared pair: {:?}", v.status));
    let smeared_res = match &v.lhs.model {
        Some(m) => {
            let res = m.reconstruction_residual(&v.assemblage);
            let low = m.min_eigenvalue(&tol()).unwrap();
            check(fail, res <= bound, || format!("smeared LHS residual {res:.3e}"));
            check(fail, low >= -tol().eig_tol, || format!("smeared LHS operator eigenvalue {low:.3e}"));
            res
        }
        None => {
            fail.push("smeared pair has no LHS model".into());
            f64::NAN
        }
    };

    let qubit: Vec<DiscreteObservable> =
        fixtures::named_observables().into_iter().filter(|(_, m)| m.dim() == 2).map(|(_, m)| m).collect();
    let mut sets: Vec<Vec<DiscreteObservable>> = qubit.iter().map(|m| vec![m.clone()]).collect();
    for i in 0..qubit.len() {
        for j in i + 1..qubit.len() {
            sets.push(vec![qubit[i].clone(), qubit[j].clone()]);
        }
    }
    let mut separable_checks = 0;
    for (name, state) in [
        ("separable", fixtures::separable_mixture()),
        ("product", fixtures::product_state()),
        ("mixed", fixtures::maximally_mixed()),
    ] {
        for set in &sets {
            separable_checks += 1;
            let v = steerable(&state, set, &o).unwrap();
            let ok = v.status == SteeringStatus::Unsteerable
                && v.lhs.model.as_ref().is_some_and(|m| m.reconstruction_residual(&v.assemblage) <= bound);
            check(fail, ok, || format!("{name} state with {} settings: {:?}", set.len(), v.status));
        }
    }
    format!("phi+ gap={gap:.4} smeared_residual={smeared_res:.2e} separable_checks={separable_checks}")
}

/// Hierarchy soundness on one pair, with every certificate re-verified.
fn hierarchy(
    a: &DiscreteObservable,
    b: &DiscreteObservable,
    o: &SolverOptions,
    fail: &mut Vec<String>,
    what: &str,
) -> HierarchyVerdict {
    let h = hierarchy_check(a, b, &CoexistenceOptions::default(), &tol(), o).unwrap();
    let (jm, co, bin) = (h.jm.status, h.coexistence.status, h.binarizations.status);
    check(fail, h.is_sound(), || format!("{what}: unsound chain JM={jm:?} coexistence={co:?} binarizations={bin:?}"));
    if let Some(j) = h.jm.joint() {
        let r = j.recompute_residuals(&[a, b]).into_iter().fold(0.0, f64::max);
        check(fail, r <= 10.0 * o.feas_tol, || format!("{what}: JM certificate residual {r:.3e}"));
    }
    if let Some(m) = h.coexistence.mother() {
        let r = m.verify(a, b).unwrap();
        check(fail, r <= 10.0 * o.feas_tol, || format!("{what}: mother residual {r:.3e}"));
    }
    for w in h.binarizations.witnesses() {
        if let Some(j) = &w.joint {
            let ea = binary_observable(&subset_effect(a, &w.a_subset).unwrap(), &tol()).unwrap();
            let eb = binary_observable(&subset_effect(b, &w.b_subset).unwrap(), &tol()).unwrap();
            let r = j.recompute_residuals(&[&ea, &eb]).into_iter().fold(0.0, f64::max);
            check(fail, r <= 10.0 * o.feas_tol, || format!("{what}: binarization joint residual {r:.3e}"));
        }
    }
    h
}

struct ShapeClass {
    name: &'static str,
    make: fn(&mut ChaCha8Rng) -> DiscreteObservable,
    pvm: bool,
}

fn classes() -> Vec<ShapeClass> {
    vec![
        ShapeClass { name: "qubit/2", make: |r| fixtures::random_observable(r, 2, 2), pvm: false },
        ShapeClass { name: "qubit/3", make: |r| fixtures::random_observable(r, 2, 3), pvm: false },
        ShapeClass { name: "qutrit/3", make: |r| fixtures::random_observable(r, 3, 3), pvm: false },
        ShapeClass {
            name: "qutrit/rank1x4",
            make: |r| fixtures::random_observable_with_ranks(r, 3, &[1, 1, 1, 1]),
            pvm: false,
        },
        ShapeClass { name: "ququart/2", make: |r| fixtures::random_observable(r, 4, 2), pvm: false },
        ShapeClass { name: "diagonal/3x4", make: |r| fixtures::random_diagonal_observable(r, 3, 4), pvm: false },
        ShapeClass { name: "pvm/2", make: |r| fixtures::random_pvm(r, 2), pvm: true },
        ShapeClass { name: "pvm/3", make: |r| fixtures::random_pvm(r, 3), pvm: true },
    ]
}

fn random_kernel(rng: &mut ChaCha8Rng, from: usize, to: usize) -> StochasticMatrix {
    let rows = (0..from)
        .map(|_| {
            let w: Vec<f64> = (0..to).map(|_| rng.gen_range(0.0..1.0)).collect();
            let s: f64 = w.iter().sum();
            w.into_iter().map(|x| x / s).collect()
        })
        .collect();
    StochasticMatrix::with_numbered_targets(rows, &tol()).unwrap()
}

fn random_mask(rng: &mut ChaCha8Rng, n: usize) -> SubsetMask {
    SubsetMask::from_members((0..n).map(|_| rng.gen_bool(0.5)).collect())
}

/// Operator, observable, dilation and I/O invariants for one observable.
fn single_invariants(rng: &mut ChaCha8Rng, a: &DiscreteObservable, pvm: bool, fail: &mut Vec<String>, what: &str) {
    let t = tol();
    let d = a.dim();
    let n = a.len();
    check(fail, validate(d, &a.to_outcome_list(), &t).passes, || format!("{what}: generator output invalid"));

    for e in a.effects() {
        let s = sqrt_psd(e, &t).unwrap();
        check(fail, dist(&(&s * &s), e) <= t.eq_tol, || format!("{what}: sqrt_psd squared differs"));
        check(fail, loewner_leq(e, e, &t).unwrap(), || format!("{what}: loewner_leq not reflexive"));
    }
    let y = fixtures::random_complex_matrix(rng, d, d);
    let x = fixtures::random_complex_matrix(rng, 2 * d, 2 * d);
    let lhs = trace(&(partial_trace_first(&x, 2, d).unwrap() * &y));
    let rhs = trace(&(&x * tensor(&identity(2), &y)));
    check(fail, (lhs - rhs).norm() <= 1e-12 * (1.0 + rhs.norm()), || format!("{what}: partial trace adjointness"));

    let mask = random_mask(rng, n);
    let sum = subset_effect(a, &mask).unwrap() + subset_effect(a, &mask.complement()).unwrap();
    check(fail, dist(&sum, &identity(d)) <= t.eq_tol, || format!("{what}: subset effect complement"));
    if !mask.is_empty() && !mask.is_full() {
        let bin = binarize(a, &mask, &t).unwrap();
        let s = bin.effects().fold(CMatrix::zeros(d, d), |acc, e| acc + e);
        check(fail, dist(&s, &identity(d)) <= t.eq_tol, || format!("{what}: binarization not normalized"));
    }

    let beta = random_kernel(rng, n, 3);
    let gamma = random_kernel(rng, 3, 2);
    let twice = post_process(&post_process(a, &beta, &t).unwrap(), &gamma, &t).unwrap();
    let once = post_process(a, &beta.compose(&gamma).unwrap(), &t).unwrap();
    let gap = twice.effects().zip(once.effects()).map(|(p, q)| dist(p, q)).fold(0.0, f64::max);
    check(fail, gap <= t.eq_tol && twice.len() == once.len(), || format!("{what}: kernel composition gap {gap:.3e}"));
    let f = RelabelingMap::new((0..n).map(|_| rng.gen_range(0..2)).collect(), vec!["u".into(), "v".into()]).unwrap();
    let r1 = relabel(a, &f, &t).unwrap();
    let r2 = post_process(a, &f.to_kernel(), &t).unwrap();
    check(fail, r1.labels() == r2.labels() && r1.effects().zip(r2.effects()).all(|(p, q)| p == q), || {
        format!("{what}: relabel differs from deterministic post-processing")
    });
    let eta = rng.gen_range(0.0..1.0);
    let noisy = mix_with_trivial(a, eta, &uniform(n), &t).unwrap();
    for o in [&once, &r1, &noisy] {
        check(fail, validate(d, &o.to_outcome_list(), &t).passes_ignoring_zero_effects(), || {
            format!("{what}: derived observable invalid")
        });
    }

    let dil = dilate_minimal(a, &t);
    let diag = verify_dilation(a, &dil, &t).unwrap();
    let rank_sum: usize = a.effects().map(|e| psd_rank(e, t.eig_tol)).sum();
    check(fail, diag.passes(1e-10), || format!("{what}: dilation residual {:.3e}", diag.max_residual()));
    check(fail, dil.dilation_dim == rank_sum, || format!("{what}: dilation dim {} != {rank_sum}", dil.dilation_dim));

    let rep = is_extreme(a, &t);
    let u = fixtures::random_unitary(rng, d);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    check(fail, is_extreme(&a.conjugated(&u), &t).is_extreme == rep.is_extreme, || {
        format!("{what}: extremality not unitarily invariant")
    });
    check(fail, is_extreme(&a.permuted(&order), &t).is_extreme == rep.is_extreme, || {
        format!("{what}: extremality not permutation invariant")
    });
    for k in 0..rep.kernel_basis.len().min(2) {
        let pert = rep.perturbation(k);
        for eps in [1e-3, -1e-3] {
            let outs: Vec<_> =
                a.outcomes().iter().zip(&pert).map(|(o, p)| (o.label.clone(), &o.effect + p.scale(eps))).collect();
            check(fail, validate(d, &outs, &t).passes, || format!("{what}: kernel witness {k} invalid at eps {eps}"));
        }
    }
    if pvm {
        check(fail, rep.is_extreme, || format!("{what}: PVM not extreme"));
        let other = fixtures::random_pvm(rng, d);
        let mix = convex_mixture(a, &other, rng.gen_range(0.1..0.9), &t).unwrap();
        check(fail, !is_extreme(&mix, &t).is_extreme, || format!("{what}: mixture of distinct PVMs extreme"));

        let groups = rng.gen_range(1..=n);
        let map: Vec<usize> = (0..n).map(|z| if z < groups { z } else { rng.gen_range(0..groups) }).collect();
        let f = RelabelingMap::new(map, (0..groups).map(|g| format!("g{g}")).collect()).unwrap();
        let coarse = relabel(a, &f, &t).unwrap();
        match relabeling_finder(&coarse, a, &t).unwrap() {
            Some(found) => {
                let back = relabel(a, &found, &t).unwrap();
                let ok = back.len() == coarse.len()
                    && back.effects().zip(coarse.effects()).all(|(p, q)| dist(p, q) <= 10.0 * t.eq_tol);
                check(fail, ok, || format!("{what}: found relabeling does not reproduce the coarse graining"));
                let pp = post_processing_finder(&coarse, a, &t, &opts()).unwrap();
                check(fail, pp.kernel.is_some(), || {
                    format!("{what}: post-processing finder failed where relabeling exists")
                });
            }
            None => fail.push(format!("{what}: relabeling of a PVM mother not found")),
        }
    }

    let back = observable_from_json(&observable_to_json(a), &t).unwrap();
    let same = a.effects().zip(back.effects()).all(|(p, q)| {
        p.iter().zip(q.iter()).all(|(x, y)| x.re.to_bits() == y.re.to_bits() && x.im.to_bits() == y.im.to_bits())
    });
    check(fail, same && back.labels() == a.labels(), || format!("{what}: JSON round trip not bit-stable"));
}

/// Pair invariants: product joints of commuting pairs, hierarchy soundness
/// and the LHS model built from a joint.
fn pair_invariants(
    rng: &mut ChaCha8Rng,
    a: &DiscreteObservable,
    b: &DiscreteObservable,
    fail: &mut Vec<String>,
    what: &str,
) -> [Status; 3] {
    let t = tol();
    if coexist::observable::commutes(a, b, &t).unwrap() {
        let j = product_joint(a, b, &t).unwrap();
        let r = j.recompute_residuals(&[a, b]).into_iter().fold(0.0, f64::max);
        check(fail, r <= t.eq_tol, || format!("{what}: product joint residual {r:.3e}"));
    }
    let h = hierarchy(a, b, &random_pair_opts(), fail, what);
    if a.dim() == 2 {
        let state = fixtures::random_state(rng, 2, 2);
        let set = [a.clone(), b.clone()];
        let asm = assemblage_from(&state, &set).unwrap();
        check(fail, asm.no_signaling_residual() <= t.eq_tol, || {
            format!("{what}: signaling {:.3e}", asm.no_signaling_residual())
        });
        if let Some(j) = h.jm.joint() {
            let m = LhsModel::from_joint(&state, &j.joint, &j.tuples).unwrap();
            let r = m.reconstruction_residual(&asm);
            check(fail, r <= 10.0 * opts().feas_tol, || format!("{what}: LHS from joint residual {r:.3e}"));
        }
    }
    [h.jm.status, h.coexistence.status, h.binarizations.status]
}

/// Random pairs run with a smaller iteration cap: soundness is asserted on
/// whatever verdicts come back, and a lower cap only adds UNDECIDED ones.
fn random_pair_opts() -> SolverOptions {
    SolverOptions { max_iter: 2_000, ..opts() }
}

fn criterion_9(fail: &mut Vec<String>) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut parts = Vec::new();
    for class in classes() {
        let start = Instant::now();
        let mut tally = [[0usize; 3]; 3];
        let obs: Vec<DiscreteObservable> = (0..PER_CLASS).map(|_| (class.make)(&mut rng)).collect();
        for (i, a) in obs.iter().enumerate() {
            single_invariants(&mut rng, a, class.pvm, fail, &format!("{} #{i}", class.name));
        }
        for (i, pair) in obs.chunks_exact(2).enumerate() {
            let (a, b) = (&pair[0], &pair[1]);
            let s = pair_invariants(&mut rng, a, b, fail, &format!("{} pair #{i}", class.name));
            for (k, st) in s.iter().enumerate() {
                tally[k][*st as usize] += 1;
            }
        }
        let fmt = |t: [usize; 3]| format!("{}/{}/{}", t[0], t[1], t[2]);
        parts.push(format!(
            "{} jm={} coex={} bin={} ({:.1}s)",
            class.name,
            fmt(tally[0]),
            fmt(tally[1]),
            fmt(tally[2]),
            start.elapsed().as_secs_f64()
        ));
    }
    let corpus = fixtures::named_observables();
    let mut corpus_pairs = 0;
    for (i, (na, a)) in corpus.iter().enumerate() {
        for (nb, b) in &corpus[i..] {
            if a.dim() == b.dim() {
                corpus_pairs += 1;
                hierarchy(a, b, &opts(), fail, &format!("corpus ({na}, {nb})"));
            }
        }
    }
    format!(
        "{PER_CLASS} per class, {} disjoint pairs, counts yes/no/undecided; {}; corpus pairs={corpus_pairs}",
        PER_CLASS / 2,
        parts.join("; ")
    )
}

// Built without the libtest harness so the criterion lines always reach stdout.
fn main() {
    let start = Instant::now();
    let mut outcomes = Vec::new();

    let repro_start = Instant::now();
    let report = run_repro(&FixtureSet::standard(), &tol(), &opts());
    let repro_seconds = repro_start.elapsed().as_secs_f64();
    for v in report.fixtures.iter().filter(|v| !v.diagnostics.passes) {
        println!("fixture {} failed validation", v.name);
    }
    for c in &report.criteria {
        let summary = serde_json::to_string(&c.values).unwrap();
        let mut failures = c.detail.clone();
        if !c.passed() && failures.is_empty() {
            failures.push(format!("status {:?}", c.status));
        }
        outcomes.push(Outcome { id: c.id, name: c.name.clone(), failures, summary, seconds: c.seconds });
    }
    outcomes.push(timed(5, "noise threshold", criterion_5));
    outcomes.push(timed(8, "steering", criterion_8));
    outcomes.push(timed(9, "property suites", criterion_9));
    outcomes.sort_by_key(|o| o.id);

    for o in &outcomes {
        println!("{}", o.line());
    }
    let total = start.elapsed().as_secs_f64();
    println!("total {total:.2}s (reproduction criteria {repro_seconds:.2}s)");

    let failed: Vec<u32> = outcomes.iter().filter(|o| !o.failures.is_empty()).map(|o| o.id).collect();
    assert!(report.fixtures.iter().all(|v| v.diagnostics.passes), "fixture validation failed");
    assert!(failed.is_empty(), "failing criteria: {failed:?}");
    assert!(total < 60.0, "acceptance suite took {total:.1} s");
}
