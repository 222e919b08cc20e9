use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Question, Topic};
use crate::error::{Error, Result};
use crate::jsonl::read_simple_csv;
use crate::simulation::SimulationMatrix;

/// Per-item features: correct-option probability per persona, their mean,
/// population variance and range, and a one-hot topic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemFeatureVector {
    pub question_id: String,
    pub p_correct: Vec<f64>,
    pub mean: f64,
    pub variance: f64,
    pub range: f64,
    /// Ordered as [`Topic::ALL`].
    pub topic: [f64; 3],
}

impl ItemFeatureVector {
    pub fn values(&self) -> Vec<f64> {
        let mut v = self.p_correct.clone();
        v.extend([self.mean, self.variance, self.range]);
        v.extend(self.topic);
        v
    }

    pub fn column_names(k: usize) -> Vec<String> {
        let mut names: Vec<String> = (1..=k).map(|c| format!("p_correct_{c}")).collect();
        names.extend(
            [
                "p_correct_mean",
                "p_correct_var",
                "p_correct_range",
                "topic_number",
                "topic_algebra",
                "topic_geometry_measure",
            ]
            .map(String::from),
        );
        names
    }

    /// Continuous columns get standardized; topic indicators do not.
    pub fn numeric_mask(k: usize) -> Vec<bool> {
        let mut m = vec![true; k + 3];
        m.extend([false; 3]);
        m
    }
}

pub fn aggregate(p: &[f64]) -> (f64, f64, f64) {
    let n = p.len() as f64;
    let mean = p.iter().sum::<f64>() / n;
    let variance = p.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let max = p.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = p.iter().cloned().fold(f64::INFINITY, f64::min);
    (mean, variance, max - min)
}

pub fn topic_one_hot(topic: Topic) -> [f64; 3] {
    let mut v = [0.0; 3];
    v[topic.index()] = 1.0;
    v
}

pub fn extract_features(matrix: &SimulationMatrix, question: &Question) -> Result<ItemFeatureVector> {
    if matrix.question_id != question.question_id {
        return Err(Error::InvalidArgument(format!(
            "matrix for `{}` paired with question `{}`",
            matrix.question_id, question.question_id
        )));
    }
    matrix.validate(matrix.k())?;
    if matrix.k() == 0 {
        return Err(Error::IncompleteMatrix {
            question_id: matrix.question_id.clone(),
            message: "no persona rows".into(),
        });
    }
    let p_correct = matrix.p_correct(question.correct_option);
    let (mean, variance, range) = aggregate(&p_correct);
    Ok(ItemFeatureVector {
        question_id: question.question_id.clone(),
        p_correct,
        mean,
        variance,
        range,
        topic: topic_one_hot(question.topic),
    })
}

/// Design matrix with named columns and a target per row.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub names: Vec<String>,
    pub numeric: Vec<bool>,
    pub question_ids: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
}

impl FeatureTable {
    pub fn from_vectors(vectors: &[ItemFeatureVector], targets: Vec<f64>) -> Result<Self> {
        let k = vectors.first().map(|v| v.p_correct.len()).unwrap_or(0);
        if vectors.iter().any(|v| v.p_correct.len() != k) || vectors.len() != targets.len() {
            return Err(Error::InvalidArgument("ragged feature vectors".into()));
        }
        Ok(Self {
            names: ItemFeatureVector::column_names(k),
            numeric: ItemFeatureVector::numeric_mask(k),
            question_ids: vectors.iter().map(|v| v.question_id.clone()).collect(),
            rows: vectors.iter().map(ItemFeatureVector::values).collect(),
            targets,
        })
    }

    pub fn to_csv(&self, manifest_hash: Option<&str>) -> String {
        let mut out = String::new();
        if let Some(h) = manifest_hash {
            out.push_str(&format!("# manifest_hash={h}\n"));
        }
        out.push_str("question_id,");
        out.push_str(&self.names.join(","));
        out.push_str(",beta\n");
        for ((q, row), y) in self.question_ids.iter().zip(&self.rows).zip(&self.targets) {
            out.push_str(q);
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push_str(&format!(",{y}\n"));
        }
        out
    }

    /// Reads a `question_id, <features...>, beta` CSV. Columns named
    /// `topic_*` are treated as indicators.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let (header, rows) = read_simple_csv(path)?;
        let schema = |message: String| Error::Schema {
            path: path.to_path_buf(),
            line: 1,
            message,
        };
        if header.first().map(String::as_str) != Some("question_id") {
            return Err(schema("first column must be question_id".into()));
        }
        let target_col = header
            .iter()
            .position(|h| h == "beta")
            .ok_or_else(|| schema("missing beta column".into()))?;
        let feature_cols: Vec<usize> = (1..header.len()).filter(|&c| c != target_col).collect();
        let mut table = Self {
            names: feature_cols.iter().map(|&c| header[c].clone()).collect(),
            numeric: feature_cols.iter().map(|&c| !header[c].starts_with("topic_")).collect(),
            question_ids: Vec::with_capacity(rows.len()),
            rows: Vec::with_capacity(rows.len()),
            targets: Vec::with_capacity(rows.len()),
        };
        for (line, fields) in rows {
            let num = |c: usize| {
                fields[c].parse::<f64>().map_err(|_| Error::Schema {
                    path: path.to_path_buf(),
                    line,
                    message: format!("column `{}` is not a number", header[c]),
                })
            };
            table.question_ids.push(fields[0].clone());
            table
                .rows
                .push(feature_cols.iter().map(|&c| num(c)).collect::<Result<_>>()?);
            table.targets.push(num(target_col)?);
        }
        Ok(table)
    }
}
