use std::fs;
use std::path::{Path, PathBuf};

use coexist::compatibility::{
    binarization_jm_all, coexistence_check, extreme_joint_with_mother, jm_check, jm_threshold,
    joint_from_mother_binary, post_processing_finder, relabeling_finder, CoexistenceOptions, CompatibilityVerdict,
};
use coexist::dilation::{dilate_minimal, is_extreme, verify_dilation};
use coexist::feasibility::SolverOptions;
use coexist::fixtures;
use coexist::io::{self, DilationDoc, MasksDoc, ObservableDoc, StateDoc};
use coexist::observable::validate;
use coexist::repro::{run_repro, FixtureSet};
use coexist::steering::steerable;
use coexist::{DiscreteObservable, Tolerance};
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::report::object;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Parse { path: PathBuf, source: coexist::Error },
    #[error(transparent)]
    Core(#[from] coexist::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Read { .. } | CliError::Write { .. } | CliError::Parse { .. } => 2,
            CliError::Core(e) if e.is_input_error() => 2,
            CliError::Core(_) => 3,
        }
    }

    pub fn kind(&self) -> &'static str {
        if self.exit_code() == 2 {
            "input"
        } else {
            "numerical"
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub struct Context {
    pub tol: Tolerance,
    pub opts: SolverOptions,
    pub copts: CoexistenceOptions,
}

/// What a subcommand hands back before the report is assembled.
pub struct Outcome {
    pub verdict: Value,
    pub residuals: Vec<f64>,
    pub summary: String,
    /// Nonzero only for a completed run that must still fail the process.
    pub exit_code: i32,
}

impl Outcome {
    fn new(verdict: Value, residuals: Vec<f64>, summary: String) -> Self {
        Outcome { verdict, residuals, summary, exit_code: 0 }
    }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("verdict types always serialize")
}

fn read(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|source| CliError::Read { path: path.to_path_buf(), source })
}

fn parse<T>(path: &Path, f: impl FnOnce(&str) -> coexist::Result<T>) -> CliResult<T> {
    f(&read(path)?).map_err(|source| CliError::Parse { path: path.to_path_buf(), source })
}

fn load_observable(path: &Path, tol: &Tolerance) -> CliResult<DiscreteObservable> {
    parse(path, |t| io::observable_from_json(t, tol))
}

fn compatibility(v: CompatibilityVerdict) -> Outcome {
    let summary = format!("{:?} {:?}", v.relation, v.status);
    let residuals = v.residuals.clone();
    Outcome::new(to_value(&v), residuals, summary)
}

pub fn validate_cmd(file: &Path, ctx: &Context) -> CliResult<Outcome> {
    let doc = parse(file, ObservableDoc::from_json)?;
    let diag = validate(doc.dim, &doc.raw_outcomes()?, &ctx.tol);
    let summary = if diag.passes { "valid observable".to_string() } else { "validation failed".to_string() };
    let residuals = vec![diag.normalization_residual];
    Ok(Outcome::new(object([("passes", json!(diag.passes)), ("diagnostics", to_value(&diag))]), residuals, summary))
}

pub fn dilate_cmd(file: &Path, ctx: &Context) -> CliResult<Outcome> {
    let a = load_observable(file, &ctx.tol)?;
    let dil = dilate_minimal(&a, &ctx.tol);
    let diag = verify_dilation(&a, &dil, &ctx.tol)?;
    let summary = format!("dilation of dimension {} (rank sum {})", diag.dilation_dim, diag.rank_sum);
    let residuals = vec![
        diag.isometry_residual,
        diag.projection_residual,
        diag.completeness_residual,
        diag.reconstruction_residual,
    ];
    let verdict = object([("dilation", to_value(&DilationDoc::from_dilation(&dil))), ("diagnostics", to_value(&diag))]);
    Ok(Outcome::new(verdict, residuals, summary))
}

pub fn extreme_cmd(file: &Path, ctx: &Context) -> CliResult<Outcome> {
    let a = load_observable(file, &ctx.tol)?;
    let rep = is_extreme(&a, &ctx.tol);
    let witness = (rep.kernel_dim > 0).then(|| {
        let labels = a.labels();
        let parts = rep.perturbation(0);
        labels.iter().zip(&parts).map(|(l, d)| json!({"label": l, "direction": io::matrix_to_doc(d)})).collect()
    });
    let summary =
        if rep.is_extreme { "extreme".to_string() } else { format!("not extreme (kernel {})", rep.kernel_dim) };
    let verdict = object([
        ("is_extreme", json!(rep.is_extreme)),
        ("kernel_dim", json!(rep.kernel_dim)),
        ("singular_values", json!(rep.singular_values)),
        ("perturbation", witness.map(Value::Array).unwrap_or(Value::Null)),
    ]);
    Ok(Outcome::new(verdict, vec![], summary))
}

pub fn jm_cmd(a: &Path, b: &Path, ctx: &Context) -> CliResult<Outcome> {
    let (a, b) = (load_observable(a, &ctx.tol)?, load_observable(b, &ctx.tol)?);
    Ok(compatibility(jm_check(&a, &b, &ctx.tol, &ctx.opts)?))
}

pub fn binarizations_cmd(a: &Path, b: &Path, ctx: &Context) -> CliResult<Outcome> {
    let (a, b) = (load_observable(a, &ctx.tol)?, load_observable(b, &ctx.tol)?);
    Ok(compatibility(binarization_jm_all(&a, &b, ctx.copts.subset_cap, &ctx.tol, &ctx.opts)?))
}

pub fn coexist_cmd(a: &Path, b: &Path, ctx: &Context) -> CliResult<Outcome> {
    let (a, b) = (load_observable(a, &ctx.tol)?, load_observable(b, &ctx.tol)?);
    Ok(compatibility(coexistence_check(&a, &b, &ctx.copts, &ctx.tol, &ctx.opts)?))
}

pub fn mother_joint_cmd(mother: &Path, masks: &Path, extreme_a: Option<&Path>, ctx: &Context) -> CliResult<Outcome> {
    let m = load_observable(mother, &ctx.tol)?;
    let doc: MasksDoc = parse(masks, |t| Ok(serde_json::from_str(t)?))?;
    let masks = io::resolve_masks(&doc.masks, &m)?;
    match extreme_a {
        None => {
            let cert = joint_from_mother_binary(&m, &masks, &ctx.tol)?;
            let residuals = cert.marginal_residuals.clone();
            Ok(Outcome::new(object([("joint", to_value(&cert))]), residuals, "joint built from mother".into()))
        }
        Some(path) => {
            let a = load_observable(path, &ctx.tol)?;
            let ej = extreme_joint_with_mother(&a, &m, &masks, &ctx.tol)?;
            let mut residuals = ej.certificate.marginal_residuals.clone();
            residuals.push(ej.max_factor_residual());
            let verdict = object([("joint", to_value(&ej.certificate)), ("factors", to_value(&ej.factors))]);
            Ok(Outcome::new(verdict, residuals, "joint of extreme observable with mother".into()))
        }
    }
}

pub fn relabel_cmd(a: &Path, m: &Path, ctx: &Context) -> CliResult<Outcome> {
    let (a, m) = (load_observable(a, &ctx.tol)?, load_observable(m, &ctx.tol)?);
    let map = relabeling_finder(&a, &m, &ctx.tol)?;
    let summary = if map.is_some() { "relabeling found" } else { "no relabeling" };
    let verdict = object([("found", json!(map.is_some())), ("map", to_value(&map))]);
    Ok(Outcome::new(verdict, vec![], summary.into()))
}

pub fn postprocess_cmd(a: &Path, m: &Path, ctx: &Context) -> CliResult<Outcome> {
    let (a, m) = (load_observable(a, &ctx.tol)?, load_observable(m, &ctx.tol)?);
    let r = post_processing_finder(&a, &m, &ctx.tol, &ctx.opts)?;
    let summary = format!("post-processing {:?}", r.verdict.status);
    let verdict = object([
        ("found", json!(r.kernel.is_some())),
        ("kernel", to_value(&r.kernel)),
        ("solver", to_value(&r.verdict)),
    ]);
    Ok(Outcome::new(verdict, vec![r.verdict.residual], summary))
}

pub fn threshold_cmd(a: &Path, b: &Path, ctx: &Context) -> CliResult<Outcome> {
    let (a, b) = (load_observable(a, &ctx.tol)?, load_observable(b, &ctx.tol)?);
    let uniform = |n: usize| vec![1.0 / n as f64; n];
    let r = jm_threshold(&a, &b, &uniform(a.len()), &uniform(b.len()), &ctx.tol, &ctx.opts)?;
    let summary = format!("threshold in [{:.4}, {:.4}]", r.threshold, r.upper);
    Ok(Outcome::new(to_value(&r), vec![r.upper - r.threshold], summary))
}

pub fn steer_cmd(state: &Path, meas: &[PathBuf], ctx: &Context) -> CliResult<Outcome> {
    let st = parse(state, |t| io::state_from_json(t, &ctx.tol))?;
    let ms = meas.iter().map(|p| load_observable(p, &ctx.tol)).collect::<CliResult<Vec<_>>>()?;
    let v = steerable(&st, &ms, &ctx.opts)?;
    let mut residuals = vec![v.assemblage.no_signaling_residual()];
    let model = match &v.lhs.model {
        Some(m) => {
            residuals.push(m.reconstruction_residual(&v.assemblage));
            to_value(m)
        }
        None => Value::Null,
    };
    let verdict = object([
        ("status", to_value(&v.status)),
        ("solver", to_value(&v.lhs.verdict)),
        ("model", model),
        ("no_signaling_residual", json!(residuals[0])),
    ]);
    Ok(Outcome::new(verdict, residuals, format!("{:?}", v.status)))
}

pub fn repro_cmd(ctx: &Context) -> CliResult<Outcome> {
    let report = run_repro(&FixtureSet::standard(), &ctx.tol, &ctx.opts);
    let mut lines: Vec<String> = report
        .criteria
        .iter()
        .map(|c| format!("criterion {}: {} {}", c.id, to_value(&c.status).as_str().unwrap_or("?"), c.name))
        .collect();
    for c in report.criteria.iter().filter(|c| !c.passed()) {
        lines.extend(c.detail.iter().map(|d| format!("  criterion {}: {d}", c.id)));
    }
    let exit_code = if report.all_passed { 0 } else { 1 };
    Ok(Outcome { verdict: to_value(&report), residuals: vec![], summary: lines.join("\n"), exit_code })
}

/// Writes the named fixtures, states and an example mask file into `dir`.
pub fn fixtures_cmd(dir: &Path) -> CliResult<Outcome> {
    let write = |name: String, text: String| -> CliResult<String> {
        let path = dir.join(&name);
        fs::write(&path, text + "\n").map_err(|source| CliError::Write { path, source })?;
        Ok(name)
    };
    fs::create_dir_all(dir).map_err(|source| CliError::Write { path: dir.to_path_buf(), source })?;
    let mut written = Vec::new();
    for (name, o) in fixtures::named_observables() {
        written.push(write(format!("{name}.json"), io::observable_to_json(&o))?);
    }
    for (name, s) in fixtures::named_states() {
        let text = serde_json::to_string_pretty(&StateDoc::from_state(&s)).expect("states serialize");
        written.push(write(format!("{name}.json"), text)?);
    }
    let masks = MasksDoc {
        masks: vec![vec![io::MaskEntry::Index(0)], vec![io::MaskEntry::Index(1)], vec![io::MaskEntry::Index(2)]],
        second: None,
    };
    written.push(write("singletons3.json".into(), serde_json::to_string_pretty(&masks).expect("masks serialize"))?);
    let summary = format!("wrote {} files to {}", written.len(), dir.display());
    Ok(Outcome::new(object([("files", json!(written))]), vec![], summary))
}
