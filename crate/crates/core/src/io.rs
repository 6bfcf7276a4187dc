//! JSON encodings.
//!
//! Matrices are row-major nested arrays whose entries are `[re, im]` pairs.
//! Observables are `{"dim": d, "outcomes": [{"label": s, "effect": M}, ...]}`,
//! bipartite states `{"dims": [dA, dB], "rho": M}` and dilations
//! `{"J": M, "blocks": [M, ...]}`. Floats are written in shortest round-trip
//! form and parsed exactly, so save/load is bit-stable.

use serde::{Deserialize, Serialize, Serializer};

use crate::dilation::NaimarkDilation;
use crate::observable::{DiscreteObservable, SubsetMask};
use crate::operator::{c64, CMatrix, Tolerance};
use crate::steering::BipartiteState;
use crate::{Error, Result};

pub type MatrixDoc = Vec<Vec<[f64; 2]>>;

pub fn matrix_to_doc(m: &CMatrix) -> MatrixDoc {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect()).collect()
}

pub fn matrix_from_doc(doc: &MatrixDoc) -> Result<CMatrix> {
    let rows = doc.len();
    let cols = doc.first().map_or(0, Vec::len);
    if let Some(bad) = doc.iter().find(|r| r.len() != cols) {
        return Err(Error::EntryCount { expected: cols, found: bad.len() });
    }
    let entries: Vec<_> = doc.iter().flatten().map(|&[re, im]| c64(re, im)).collect();
    crate::operator::from_row_major(rows, cols, &entries)
}

pub fn serialize_matrix<S: Serializer>(m: &CMatrix, s: S) -> std::result::Result<S::Ok, S::Error> {
    matrix_to_doc(m).serialize(s)
}

pub fn serialize_matrices<S: Serializer>(ms: &[CMatrix], s: S) -> std::result::Result<S::Ok, S::Error> {
    ms.iter().map(matrix_to_doc).collect::<Vec<_>>().serialize(s)
}

pub fn serialize_observable<S: Serializer>(o: &DiscreteObservable, s: S) -> std::result::Result<S::Ok, S::Error> {
    ObservableDoc::from_observable(o).serialize(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeDoc {
    pub label: String,
    pub effect: MatrixDoc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservableDoc {
    pub dim: usize,
    pub outcomes: Vec<OutcomeDoc>,
}

impl ObservableDoc {
    pub fn from_observable(o: &DiscreteObservable) -> Self {
        ObservableDoc {
            dim: o.dim(),
            outcomes: o
                .outcomes()
                .iter()
                .map(|out| OutcomeDoc { label: out.label.clone(), effect: matrix_to_doc(&out.effect) })
                .collect(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("observable documents always serialize")
    }

    /// Outcome list without any validation beyond matrix shape.
    pub fn raw_outcomes(&self) -> Result<Vec<(String, CMatrix)>> {
        self.outcomes.iter().map(|o| Ok((o.label.clone(), matrix_from_doc(&o.effect)?))).collect()
    }

    pub fn build(&self, tol: &Tolerance) -> Result<DiscreteObservable> {
        DiscreteObservable::new(self.dim, self.raw_outcomes()?, tol)
    }
}

pub fn observable_to_json(o: &DiscreteObservable) -> String {
    ObservableDoc::from_observable(o).to_json()
}

pub fn observable_from_json(text: &str, tol: &Tolerance) -> Result<DiscreteObservable> {
    ObservableDoc::from_json(text)?.build(tol)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateDoc {
    pub dims: [usize; 2],
    pub rho: MatrixDoc,
}

impl StateDoc {
    pub fn from_state(s: &BipartiteState) -> Self {
        StateDoc { dims: [s.dim_a(), s.dim_b()], rho: matrix_to_doc(s.rho()) }
    }

    pub fn build(&self, tol: &Tolerance) -> Result<BipartiteState> {
        BipartiteState::new(self.dims[0], self.dims[1], matrix_from_doc(&self.rho)?, tol)
    }
}

pub fn state_from_json(text: &str, tol: &Tolerance) -> Result<BipartiteState> {
    serde_json::from_str::<StateDoc>(text)?.build(tol)
}

pub fn state_to_json(s: &BipartiteState) -> String {
    serde_json::to_string_pretty(&StateDoc::from_state(s)).expect("state documents always serialize")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DilationDoc {
    #[serde(rename = "J")]
    pub j: MatrixDoc,
    pub blocks: Vec<MatrixDoc>,
}

impl DilationDoc {
    pub fn from_dilation(d: &NaimarkDilation) -> Self {
        DilationDoc { j: matrix_to_doc(&d.isometry), blocks: d.blocks.iter().map(matrix_to_doc).collect() }
    }

    pub fn build(&self) -> Result<NaimarkDilation> {
        let isometry = matrix_from_doc(&self.j)?;
        let blocks = self.blocks.iter().map(matrix_from_doc).collect::<Result<Vec<_>>>()?;
        Ok(NaimarkDilation { dilation_dim: isometry.nrows(), isometry, blocks })
    }
}

/// One mask entry: an outcome index or an outcome label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MaskEntry {
    Index(usize),
    Label(String),
}

/// `{"masks": [[...], ...]}`; entries refer to outcomes of one observable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MasksDoc {
    pub masks: Vec<Vec<MaskEntry>>,
    /// Optional masks for a second observable (pair constructions).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub second: Option<Vec<Vec<MaskEntry>>>,
}

pub fn resolve_masks(entries: &[Vec<MaskEntry>], over: &DiscreteObservable) -> Result<Vec<SubsetMask>> {
    entries
        .iter()
        .map(|mask| {
            let idx = mask
                .iter()
                .map(|e| match e {
                    MaskEntry::Index(i) => Ok(*i),
                    MaskEntry::Label(l) => {
                        over.index_of(l).ok_or_else(|| Error::InvalidMask(format!("unknown outcome label {l:?}")))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            SubsetMask::new(&idx, over.len())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn observable_round_trip_is_bit_stable() {
        for (name, obs) in fixtures::named_observables() {
            let text = observable_to_json(&obs);
            let back = observable_from_json(&text, &Tolerance::default()).unwrap();
            for (x, y) in obs.effects().zip(back.effects()) {
                for (a, b) in x.iter().zip(y.iter()) {
                    assert_eq!(a.re.to_bits(), b.re.to_bits(), "{name}");
                    assert_eq!(a.im.to_bits(), b.im.to_bits(), "{name}");
                }
            }
            assert_eq!(back.labels(), obs.labels());
            assert_eq!(observable_to_json(&back), text);
        }
    }

    #[test]
    fn state_round_trip() {
        for (_, s) in fixtures::named_states() {
            let back = state_from_json(&state_to_json(&s), &Tolerance::default()).unwrap();
            assert!(back.rho() == s.rho());
        }
    }

    #[test]
    fn malformed_documents() {
        assert!(observable_from_json("{\"dim\": 2}", &Tolerance::default()).is_err());
        let ragged = r#"{"dim": 1, "outcomes": [{"label": "a", "effect": [[[1.0, 0.0]], []]}]}"#;
        assert!(observable_from_json(ragged, &Tolerance::default()).is_err());
        let unnormalized = r#"{"dim": 1, "outcomes": [{"label": "a", "effect": [[[0.5, 0.0]]]}]}"#;
        assert!(matches!(observable_from_json(unnormalized, &Tolerance::default()), Err(Error::InvalidObservable(_))));
    }

    #[test]
    fn masks_accept_labels_and_indices() {
        let doc: MasksDoc = serde_json::from_str(r#"{"masks": [[0, "3"], ["2"]]}"#).unwrap();
        let m = resolve_masks(&doc.masks, &fixtures::basis_c3()).unwrap();
        assert_eq!(m[0].indices(), vec![0, 2]);
        assert_eq!(m[1].indices(), vec![1]);
        assert!(resolve_masks(&[vec![MaskEntry::Label("x".into())]], &fixtures::basis_c3()).is_err());
    }
}
