//! Browser bindings. Each export takes plain numbers and returns a JSON string.

use coexist::compatibility::{
    binarization_jm_all, coexistence_check, jm_check, real_projector, Certificate, CoexistenceOptions,
    CompatibilityVerdict, DEFAULT_SUBSET_CAP,
};
use coexist::feasibility::SolverOptions;
use coexist::fixtures;
use coexist::observable::{mix_with_trivial, uniform};
use coexist::operator::identity;
use coexist::steering::steerable;
use coexist::{DiscreteObservable, Result, Tolerance};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

/// Sharp qubit observable along the Bloch direction at `theta` (radians) in the x-z plane.
fn sharp_qubit(theta: f64) -> Result<DiscreteObservable> {
    let p = real_projector(&[(theta / 2.0).cos(), (theta / 2.0).sin()]);
    let q = identity(2) - &p;
    DiscreteObservable::new(2, vec![("+".into(), p), ("-".into(), q)], &Tolerance::default())
}

/// Largest visibility at which two unbiased sharp qubit observables at angle
/// `theta` are jointly measurable.
pub fn qubit_boundary(theta: f64) -> f64 {
    let h = theta.rem_euclid(std::f64::consts::TAU) / 2.0;
    1.0 / (h.cos().abs() + h.sin().abs())
}

fn status(v: &CompatibilityVerdict) -> Value {
    serde_json::to_value(v.status).expect("status serializes")
}

fn error_json(e: coexist::Error) -> Value {
    json!({"error": e.to_string()})
}

pub fn qubit_pair_value(theta: f64, eta: f64) -> Value {
    let run = || -> Result<Value> {
        let tol = Tolerance::default();
        let a = mix_with_trivial(&sharp_qubit(0.0)?, eta, &uniform(2), &tol)?;
        let b = mix_with_trivial(&sharp_qubit(theta)?, eta, &uniform(2), &tol)?;
        let v = jm_check(&a, &b, &tol, &SolverOptions::default())?;
        Ok(json!({"status": status(&v), "boundary": qubit_boundary(theta), "residuals": v.residuals}))
    };
    run().unwrap_or_else(error_json)
}

/// The three-outcome/two-outcome counterexample mixed with white noise at visibility `s`.
pub fn counterexample_value(s: f64) -> Value {
    let run = || -> Result<Value> {
        let (tol, opts) = (Tolerance::default(), SolverOptions::default());
        let e = mix_with_trivial(&fixtures::counterexample_e(), s, &uniform(3), &tol)?;
        let f = mix_with_trivial(&fixtures::counterexample_f(), s, &uniform(2), &tol)?;
        let bin = binarization_jm_all(&e, &f, DEFAULT_SUBSET_CAP, &tol, &opts)?;
        let coex = coexistence_check(&e, &f, &CoexistenceOptions::default(), &tol, &opts)?;
        let jm = jm_check(&e, &f, &tol, &opts)?;
        let violation = match &coex.certificate {
            Certificate::Violation { condition, value } => json!({"condition": condition, "value": value}),
            _ => Value::Null,
        };
        Ok(json!({
            "binarizations": status(&bin),
            "coexistence": status(&coex),
            "jm": status(&jm),
            "violation": violation,
        }))
    };
    run().unwrap_or_else(error_json)
}

/// Maximally entangled two-qubit state measured with noisy Z and X at visibility `eta`.
pub fn steering_value(eta: f64) -> Value {
    let run = || -> Result<Value> {
        let tol = Tolerance::default();
        let z = mix_with_trivial(&fixtures::sigma_z(), eta, &uniform(2), &tol)?;
        let x = mix_with_trivial(&fixtures::sigma_x(), eta, &uniform(2), &tol)?;
        let v = steerable(&fixtures::phi_plus(), &[z, x], &SolverOptions::default())?;
        Ok(json!({
            "status": serde_json::to_value(v.status).expect("status serializes"),
            "residual": v.lhs.verdict.residual,
        }))
    };
    run().unwrap_or_else(error_json)
}

#[wasm_bindgen]
pub fn qubit_pair(theta: f64, eta: f64) -> String {
    qubit_pair_value(theta, eta).to_string()
}

#[wasm_bindgen]
pub fn counterexample(s: f64) -> String {
    counterexample_value(s).to_string()
}

#[wasm_bindgen]
pub fn steering(eta: f64) -> String {
    steering_value(eta).to_string()
}
