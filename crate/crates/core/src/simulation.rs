//! Normalized K × 4 persona-conditioned option-selection matrices.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::OptionKey;
use crate::error::{Error, Result};
use crate::llm::{BatchOutcome, RawOptionMap};

/// Tolerance on row sums of stored matrices.
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptionProbs {
    #[serde(rename = "A")]
    pub a: f64,
    #[serde(rename = "B")]
    pub b: f64,
    #[serde(rename = "C")]
    pub c: f64,
    #[serde(rename = "D")]
    pub d: f64,
}

impl OptionProbs {
    pub fn from_array(p: [f64; 4]) -> Self {
        Self {
            a: p[0],
            b: p[1],
            c: p[2],
            d: p[3],
        }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.a, self.b, self.c, self.d]
    }

    pub fn get(&self, key: OptionKey) -> f64 {
        self.to_array()[key.index()]
    }

    pub fn sum(&self) -> f64 {
        self.to_array().iter().sum()
    }
}

/// Divides every value by the row total.
pub fn normalize_row(raw: &RawOptionMap) -> Result<OptionProbs> {
    let mut p = [0.0; 4];
    for key in OptionKey::ALL {
        let v = *raw.get(&key).ok_or_else(|| Error::IncompleteMatrix {
            question_id: String::new(),
            message: format!("raw row lacks option {key}"),
        })?;
        if !v.is_finite() || v < 0.0 {
            return Err(Error::NegativeProbability);
        }
        p[key.index()] = v;
    }
    let total: f64 = p.iter().sum();
    if total <= 0.0 {
        return Err(Error::ZeroRow);
    }
    Ok(OptionProbs::from_array(p.map(|v| v / total)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonaRow {
    /// One-based persona cluster.
    pub cluster: usize,
    pub probs: OptionProbs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationMatrix {
    pub question_id: String,
    /// Rows in ascending cluster order, one per persona.
    pub personas: Vec<PersonaRow>,
}

impl SimulationMatrix {
    pub fn k(&self) -> usize {
        self.personas.len()
    }

    /// Checks row-stochasticity and the 1..=K cluster sequence.
    pub fn validate(&self, k: usize) -> Result<()> {
        let incomplete = |message: String| Error::IncompleteMatrix {
            question_id: self.question_id.clone(),
            message,
        };
        if self.personas.len() != k {
            return Err(incomplete(format!("{} rows, expected {k}", self.personas.len())));
        }
        for (i, row) in self.personas.iter().enumerate() {
            if row.cluster != i + 1 {
                return Err(incomplete(format!("row {i} has cluster {}", row.cluster)));
            }
            let p = row.probs.to_array();
            if p.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(incomplete(format!(
                    "cluster {} has an entry outside [0, 1]",
                    row.cluster
                )));
            }
            if (row.probs.sum() - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(incomplete(format!(
                    "cluster {} sums to {}",
                    row.cluster,
                    row.probs.sum()
                )));
            }
        }
        Ok(())
    }

    pub fn p_correct(&self, correct: OptionKey) -> Vec<f64> {
        self.personas.iter().map(|r| r.probs.get(correct)).collect()
    }
}

/// Orders normalized rows by cluster and checks there is exactly one row per
/// cluster `1..=k`.
pub fn assemble_matrix(question_id: &str, rows: Vec<(usize, OptionProbs)>, k: usize) -> Result<SimulationMatrix> {
    let mut by_cluster: BTreeMap<usize, OptionProbs> = BTreeMap::new();
    for (c, p) in rows {
        if by_cluster.insert(c, p).is_some() {
            return Err(Error::IncompleteMatrix {
                question_id: question_id.into(),
                message: format!("duplicate row for cluster {c}"),
            });
        }
    }
    if let Some(missing) = (1..=k).find(|c| !by_cluster.contains_key(c)) {
        return Err(Error::IncompleteMatrix {
            question_id: question_id.into(),
            message: format!("missing persona row {missing}"),
        });
    }
    let m = SimulationMatrix {
        question_id: question_id.into(),
        personas: by_cluster
            .into_iter()
            .map(|(cluster, probs)| PersonaRow { cluster, probs })
            .collect(),
    };
    m.validate(k)?;
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedItem {
    pub question_id: String,
    pub reason: String,
}

/// Normalizes batch results into matrices. Items with any failed or
/// degenerate persona row are dropped and listed with the reason.
pub fn build_matrices(
    outcome: &BatchOutcome,
    question_ids: &[String],
    k: usize,
) -> (Vec<SimulationMatrix>, Vec<DroppedItem>) {
    let mut failed: BTreeMap<&str, Vec<String>> = BTreeMap::new();
    for f in &outcome.failures {
        failed
            .entry(f.question_id.as_str())
            .or_default()
            .push(format!("cluster {}: {}", f.cluster, f.error));
    }
    let mut matrices = Vec::new();
    let mut dropped = Vec::new();
    for qid in question_ids {
        if let Some(reasons) = failed.get(qid.as_str()) {
            dropped.push(DroppedItem {
                question_id: qid.clone(),
                reason: reasons.join("; "),
            });
            continue;
        }
        let rows: Result<Vec<(usize, OptionProbs)>> = (1..=k)
            .filter_map(|c| outcome.results.get(&(qid.clone(), c)).map(|raw| (c, raw)))
            .map(|(c, raw)| normalize_row(raw).map(|p| (c, p)))
            .collect();
        match rows.and_then(|rows| assemble_matrix(qid, rows, k)) {
            Ok(m) => matrices.push(m),
            Err(e) => dropped.push(DroppedItem {
                question_id: qid.clone(),
                reason: e.to_string(),
            }),
        }
    }
    if !dropped.is_empty() {
        tracing::warn!(dropped = dropped.len(), "items excluded from features");
    }
    (matrices, dropped)
}
