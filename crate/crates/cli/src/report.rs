use serde::Serialize;
use serde_json::{Map, Value};

pub const SCHEMA_VERSION: u32 = 1;

/// Machine-readable output of one invocation. Maps serialize with sorted keys,
/// so identical runs give identical documents apart from `runtime`.
#[derive(Debug, Clone, Serialize)]
pub struct ReportDocument {
    pub schema_version: u32,
    pub command: CommandEcho,
    pub parameters: Value,
    pub verdict: Value,
    pub residuals: Vec<f64>,
    pub runtime: Runtime,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorDoc>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CommandEcho {
    pub name: String,
    pub args: Vec<String>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Runtime {
    pub total_seconds: f64,
    /// Timings lifted out of the verdict, in document order.
    pub steps: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ErrorDoc {
    pub kind: &'static str,
    pub message: String,
}

impl ReportDocument {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report documents always serialize")
    }
}

/// Removes every `seconds` field from `v`, returning the values in document order.
pub fn take_timings(v: &mut Value) -> Vec<f64> {
    let mut out = Vec::new();
    take_into(v, &mut out);
    out
}

fn take_into(v: &mut Value, out: &mut Vec<f64>) {
    match v {
        Value::Object(map) => {
            if let Some(s) = map.remove("seconds").and_then(|s| s.as_f64()) {
                out.push(s);
            }
            map.values_mut().for_each(|x| take_into(x, out));
        }
        Value::Array(items) => items.iter_mut().for_each(|x| take_into(x, out)),
        _ => {}
    }
}

pub fn object(pairs: impl IntoIterator<Item = (&'static str, Value)>) -> Value {
    Value::Object(pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect::<Map<_, _>>())
}
