//! Per-cluster accuracy, deviation scores, strength/weakness selection and
//! persona synthesis requests.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{InteractionRecord, ItemBank, Topic};
use crate::error::{Error, Result};
use crate::lca::ClassAssignment;

pub const DEFAULT_MIN_SUPPORT: u32 = 5;
pub const DEFAULT_PER_SIDE: usize = 5;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccuracyCell {
    pub correct: u32,
    pub attempts: u32,
}

/// Questions × clusters tally of correct responses.
#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyMatrix {
    pub question_ids: Vec<String>,
    pub k: usize,
    /// `cells[question][cluster]`
    pub cells: Vec<Vec<AccuracyCell>>,
    /// Cells with fewer attempts are treated as missing.
    pub min_support: u32,
}

impl AccuracyMatrix {
    pub fn accuracy(&self, question: usize, cluster: usize) -> Option<f64> {
        let c = self.cells[question][cluster];
        (c.attempts >= self.min_support.max(1)).then(|| c.correct as f64 / c.attempts as f64)
    }

    pub fn question_index(&self, question_id: &str) -> Option<usize> {
        self.question_ids.binary_search_by(|q| q.as_str().cmp(question_id)).ok()
    }

    /// Observed accuracies of one question across all clusters.
    pub fn accuracies(&self, question: usize) -> Vec<Option<f64>> {
        (0..self.k).map(|c| self.accuracy(question, c)).collect()
    }
}

/// Tallies correctness per question and cluster. Every record's student must
/// have an assignment.
pub fn cluster_accuracies<'a>(
    records: impl IntoIterator<Item = &'a InteractionRecord>,
    assignment: &ClassAssignment,
    min_support: u32,
) -> Result<AccuracyMatrix> {
    let class_of = assignment.class_of();
    let k = assignment.k();
    let mut tally: BTreeMap<&str, Vec<AccuracyCell>> = BTreeMap::new();
    for r in records {
        let &c = class_of
            .get(r.student_id.as_str())
            .ok_or_else(|| Error::InvalidArgument(format!("student `{}` has no class assignment", r.student_id)))?;
        let row = tally
            .entry(r.question_id.as_str())
            .or_insert_with(|| vec![AccuracyCell::default(); k]);
        row[c].attempts += 1;
        row[c].correct += r.is_correct as u32;
    }
    let (question_ids, cells) = tally.into_iter().map(|(q, v)| (q.to_string(), v)).unzip();
    Ok(AccuracyMatrix {
        question_ids,
        k,
        cells,
        min_support,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationScore {
    pub question_id: String,
    /// Zero-based cluster index.
    pub cluster: usize,
    pub accuracy: f64,
    pub delta: f64,
    pub support: u32,
}

/// δ = a_c − (1/K) Σ_k a_k for every question observed in all K clusters.
/// Questions with any missing cluster are skipped entirely.
pub fn deviation_scores(matrix: &AccuracyMatrix) -> Vec<DeviationScore> {
    let mut out = Vec::new();
    for (qi, qid) in matrix.question_ids.iter().enumerate() {
        let acc: Option<Vec<f64>> = matrix.accuracies(qi).into_iter().collect();
        let Some(acc) = acc else { continue };
        let mean = acc.iter().sum::<f64>() / matrix.k as f64;
        for (c, &a) in acc.iter().enumerate() {
            out.push(DeviationScore {
                question_id: qid.clone(),
                cluster: c,
                accuracy: a,
                delta: a - mean,
                support: matrix.cells[qi][c].attempts,
            });
        }
    }
    out
}

pub fn deviations_csv(scores: &[DeviationScore], manifest_hash: Option<&str>) -> String {
    let mut out = String::new();
    if let Some(h) = manifest_hash {
        out.push_str(&format!("# manifest_hash={h}\n"));
    }
    out.push_str("question_id,cluster,a,delta,support\n");
    for s in scores {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            s.question_id,
            s.cluster + 1,
            s.accuracy,
            s.delta,
            s.support
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterExtremes {
    pub cluster: usize,
    pub strengths: Vec<DeviationScore>,
    pub weaknesses: Vec<DeviationScore>,
}

fn by_delta_desc(a: &&DeviationScore, b: &&DeviationScore) -> Ordering {
    b.delta
        .total_cmp(&a.delta)
        .then_with(|| a.question_id.cmp(&b.question_id))
}

fn by_delta_asc(a: &&DeviationScore, b: &&DeviationScore) -> Ordering {
    a.delta
        .total_cmp(&b.delta)
        .then_with(|| a.question_id.cmp(&b.question_id))
}

/// Largest and most negative `per_side` deltas per cluster; ties go to the
/// lexicographically smaller question id. Each cluster needs at least
/// `2 * per_side` scored questions so the two sides do not overlap.
pub fn select_extremes(scores: &[DeviationScore], k: usize, per_side: usize) -> Result<Vec<ClusterExtremes>> {
    let mut out = Vec::with_capacity(k);
    for c in 0..k {
        let mut own: Vec<&DeviationScore> = scores.iter().filter(|s| s.cluster == c).collect();
        let required = 2 * per_side;
        if own.len() < required {
            return Err(Error::InsufficientQuestions {
                cluster: c + 1,
                available: own.len(),
                required,
                shortfall: required - own.len(),
            });
        }
        own.sort_by(by_delta_desc);
        let strengths = own[..per_side].iter().map(|s| (*s).clone()).collect();
        own.sort_by(by_delta_asc);
        let weaknesses = own[..per_side].iter().map(|s| (*s).clone()).collect();
        out.push(ClusterExtremes {
            cluster: c,
            strengths,
            weaknesses,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    LlmGenerated,
    Manual,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PersonaProfile {
    /// One-based cluster label, matching the relabeled latent class.
    pub cluster: usize,
    pub name: String,
    pub description: String,
    #[serde(default)]
    pub strengths: Vec<String>,
    #[serde(default)]
    pub weaknesses: Vec<String>,
    pub provenance: Provenance,
}

impl PersonaProfile {
    /// Content hash over the fields a simulation prompt depends on.
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(self.cluster.to_le_bytes());
        h.update(self.name.as_bytes());
        h.update([0]);
        h.update(self.description.as_bytes());
        hex::encode(h.finalize())
    }
}

/// Persona set shipped with the crate for offline runs.
pub fn bundled_personas() -> Vec<PersonaProfile> {
    serde_json::from_str(include_str!("../assets/personas_bundled.json")).expect("bundled personas parse")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionRole {
    Strength,
    Weakness,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionBlock {
    pub role: QuestionRole,
    pub question_id: String,
    pub text: String,
    pub topic: Topic,
    /// This cluster's accuracy on the question.
    pub cluster_accuracy: f64,
    /// Accuracy of every cluster, in cluster order.
    pub accuracy_by_cluster: Vec<f64>,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonaSynthesisRequest {
    /// One-based cluster label.
    pub cluster: usize,
    pub n_clusters: usize,
    pub instruction: String,
    pub questions: Vec<QuestionBlock>,
}

impl PersonaSynthesisRequest {
    pub fn strengths(&self) -> impl Iterator<Item = &QuestionBlock> {
        self.questions.iter().filter(|q| q.role == QuestionRole::Strength)
    }

    pub fn weaknesses(&self) -> impl Iterator<Item = &QuestionBlock> {
        self.questions.iter().filter(|q| q.role == QuestionRole::Weakness)
    }
}

pub fn build_persona_request(
    extremes: &ClusterExtremes,
    bank: &ItemBank,
    accuracy: &AccuracyMatrix,
    instruction: &str,
) -> Result<PersonaSynthesisRequest> {
    let block = |s: &DeviationScore, role| -> Result<QuestionBlock> {
        let q = bank
            .get(&s.question_id)
            .filter(|q| !q.text.trim().is_empty())
            .ok_or_else(|| Error::MissingItemText(s.question_id.clone()))?;
        let qi = accuracy
            .question_index(&s.question_id)
            .ok_or_else(|| Error::MissingItemText(s.question_id.clone()))?;
        let by_cluster: Option<Vec<f64>> = accuracy.accuracies(qi).into_iter().collect();
        Ok(QuestionBlock {
            role,
            question_id: s.question_id.clone(),
            text: q.text.clone(),
            topic: q.topic,
            cluster_accuracy: s.accuracy,
            accuracy_by_cluster: by_cluster.unwrap_or_default(),
            delta: s.delta,
        })
    };
    let mut questions = Vec::with_capacity(extremes.strengths.len() + extremes.weaknesses.len());
    for s in &extremes.strengths {
        questions.push(block(s, QuestionRole::Strength)?);
    }
    for s in &extremes.weaknesses {
        questions.push(block(s, QuestionRole::Weakness)?);
    }
    Ok(PersonaSynthesisRequest {
        cluster: extremes.cluster + 1,
        n_clusters: accuracy.k,
        instruction: instruction.to_string(),
        questions,
    })
}
