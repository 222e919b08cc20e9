//! Interaction and item data model, ingestion, dense-core filtering and the
//! profiling/estimation partition.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::jsonl;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OptionKey {
    A,
    B,
    C,
    D,
}

impl OptionKey {
    pub const ALL: [OptionKey; 4] = [OptionKey::A, OptionKey::B, OptionKey::C, OptionKey::D];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

impl fmt::Display for OptionKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self)
    }
}

/// Curriculum strand of an item. Column order of the one-hot encoding follows
/// declaration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Topic {
    Number,
    Algebra,
    #[serde(alias = "Geometry and Measure")]
    GeometryAndMeasure,
}

impl Topic {
    pub const ALL: [Topic; 3] = [Topic::Number, Topic::Algebra, Topic::GeometryAndMeasure];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            Topic::Number => "Number",
            Topic::Algebra => "Algebra",
            Topic::GeometryAndMeasure => "Geometry and Measure",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InteractionRecord {
    pub student_id: String,
    pub question_id: String,
    pub selected_option: OptionKey,
    pub is_correct: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptionTexts {
    #[serde(rename = "A")]
    pub a: String,
    #[serde(rename = "B")]
    pub b: String,
    #[serde(rename = "C")]
    pub c: String,
    #[serde(rename = "D")]
    pub d: String,
}

impl OptionTexts {
    pub fn get(&self, key: OptionKey) -> &str {
        match key {
            OptionKey::A => &self.a,
            OptionKey::B => &self.b,
            OptionKey::C => &self.c,
            OptionKey::D => &self.d,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Question {
    pub question_id: String,
    pub text: String,
    pub options: OptionTexts,
    pub correct_option: OptionKey,
    pub topic: Topic,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub image_only: bool,
}

impl Question {
    /// Items with no extracted text are treated as image-only.
    pub fn is_image_only(&self) -> bool {
        self.image_only || self.text.trim().is_empty()
    }

    /// Stable content hash used for cache keys.
    pub fn content_hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("question serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}

#[derive(Debug, Clone, Default)]
pub struct ItemBank {
    questions: Vec<Question>,
    index: HashMap<String, usize>,
}

impl ItemBank {
    pub fn new(questions: Vec<Question>) -> Result<Self> {
        let mut index = HashMap::with_capacity(questions.len());
        for (i, q) in questions.iter().enumerate() {
            if index.insert(q.question_id.clone(), i).is_some() {
                return Err(Error::InvalidArgument(format!(
                    "duplicate question_id `{}` in item bank",
                    q.question_id
                )));
            }
        }
        Ok(Self { questions, index })
    }

    pub fn get(&self, question_id: &str) -> Option<&Question> {
        self.index.get(question_id).map(|&i| &self.questions[i])
    }

    pub fn contains(&self, question_id: &str) -> bool {
        self.index.contains_key(question_id)
    }

    pub fn questions(&self) -> &[Question] {
        &self.questions
    }

    pub fn len(&self) -> usize {
        self.questions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.questions.is_empty()
    }
}

/// Result of [`ingest`]: validated records plus the text-bearing item bank.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub records: Vec<InteractionRecord>,
    pub bank: ItemBank,
    /// Image-only items removed at ingest, in file order.
    pub excluded_items: Vec<String>,
    /// Records dropped because they referenced an excluded item.
    pub dropped_records: usize,
}

pub fn read_items(path: &Path) -> Result<Vec<(usize, Question)>> {
    jsonl::read_jsonl(path)
}

pub fn read_records(path: &Path) -> Result<Vec<(usize, InteractionRecord)>> {
    jsonl::read_jsonl(path)
}

/// Reads both JSONL files, drops image-only items (and their records) and
/// checks referential integrity and correctness consistency.
pub fn ingest(records_path: &Path, items_path: &Path) -> Result<Dataset> {
    let items = read_items(items_path)?;
    let mut excluded = Vec::new();
    let mut kept = Vec::with_capacity(items.len());
    let mut seen = HashSet::new();
    for (line, q) in items {
        if !seen.insert(q.question_id.clone()) {
            return Err(Error::Schema {
                path: items_path.to_path_buf(),
                line,
                message: format!("duplicate question_id `{}`", q.question_id),
            });
        }
        if q.is_image_only() {
            excluded.push(q.question_id);
        } else {
            kept.push(q);
        }
    }
    let bank = ItemBank::new(kept)?;
    let excluded_set: HashSet<&str> = excluded.iter().map(String::as_str).collect();

    let mut records = Vec::new();
    let mut dropped = 0;
    for (line, r) in read_records(records_path)? {
        if excluded_set.contains(r.question_id.as_str()) {
            dropped += 1;
            continue;
        }
        let Some(q) = bank.get(&r.question_id) else {
            return Err(Error::UnknownQuestion {
                path: records_path.to_path_buf(),
                line,
                question_id: r.question_id,
            });
        };
        if r.is_correct != (r.selected_option == q.correct_option) {
            return Err(Error::CorrectnessMismatch {
                path: records_path.to_path_buf(),
                line,
                question_id: r.question_id,
            });
        }
        records.push(r);
    }
    if !excluded.is_empty() {
        tracing::info!(items = excluded.len(), records = dropped, "excluded image-only items");
    }
    Ok(Dataset {
        records,
        bank,
        excluded_items: excluded,
        dropped_records: dropped,
    })
}

pub fn write_records(path: &Path, records: &[InteractionRecord]) -> Result<()> {
    jsonl::write_jsonl(path, records, None)
}

pub fn write_items(path: &Path, questions: &[Question]) -> Result<()> {
    jsonl::write_jsonl(path, questions, None)
}

fn count_by<'a, F>(records: &'a [InteractionRecord], keep: &[bool], key: F) -> HashMap<&'a str, usize>
where
    F: Fn(&'a InteractionRecord) -> &'a str,
{
    let mut counts = HashMap::new();
    for (r, _) in records.iter().zip(keep).filter(|(_, &k)| k) {
        *counts.entry(key(r)).or_insert(0) += 1;
    }
    counts
}

/// Removes sparse questions and students until both thresholds hold
/// simultaneously. Record order is preserved.
pub fn filter_dense_core(
    records: &[InteractionRecord],
    min_responses_per_question: usize,
    min_attempts_per_student: usize,
) -> Result<Vec<InteractionRecord>> {
    if min_responses_per_question == 0 || min_attempts_per_student == 0 {
        return Err(Error::InvalidArgument("dense-core thresholds must be >= 1".into()));
    }
    let mut keep = vec![true; records.len()];
    loop {
        let per_question = count_by(records, &keep, |r| r.question_id.as_str());
        let per_student = count_by(records, &keep, |r| r.student_id.as_str());
        let mut changed = false;
        for (r, k) in records.iter().zip(keep.iter_mut()) {
            if *k
                && (per_question[r.question_id.as_str()] < min_responses_per_question
                    || per_student[r.student_id.as_str()] < min_attempts_per_student)
            {
                *k = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let out: Vec<_> = records
        .iter()
        .zip(&keep)
        .filter(|(_, &k)| k)
        .map(|(r, _)| r.clone())
        .collect();
    if out.is_empty() {
        return Err(Error::EmptyCore {
            min_responses: min_responses_per_question,
            min_attempts: min_attempts_per_student,
        });
    }
    Ok(out)
}

/// How questions eligible for both subsets are resolved.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum AssignmentRule {
    /// Dense-core questions go to profiling; estimation draws from the rest.
    ProfilingFirst,
    /// Questions are pre-split by a seeded hash of their id; each side then
    /// applies its own threshold.
    HashSplit { seed: u64, profiling_fraction: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PartitionConfig {
    pub min_responses_per_question: usize,
    pub min_attempts_per_student: usize,
    pub estimation_min_responses: usize,
    pub rule: AssignmentRule,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        Self {
            min_responses_per_question: 50,
            min_attempts_per_student: 10,
            estimation_min_responses: 20,
            rule: AssignmentRule::ProfilingFirst,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetPartition {
    pub profiling_questions: BTreeSet<String>,
    pub profiling_students: BTreeSet<String>,
    pub estimation_questions: BTreeSet<String>,
}

impl DatasetPartition {
    pub fn profiling_records<'a>(&self, records: &'a [InteractionRecord]) -> Vec<&'a InteractionRecord> {
        records
            .iter()
            .filter(|r| {
                self.profiling_questions.contains(&r.question_id) && self.profiling_students.contains(&r.student_id)
            })
            .collect()
    }

    pub fn estimation_records<'a>(&self, records: &'a [InteractionRecord]) -> Vec<&'a InteractionRecord> {
        records
            .iter()
            .filter(|r| self.estimation_questions.contains(&r.question_id))
            .collect()
    }
}

/// Uniform value in [0, 1) derived from a seeded hash of the question id.
pub fn question_hash_unit(seed: u64, question_id: &str) -> f64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(question_id.as_bytes());
    let d = h.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&d[..8]);
    (u64::from_le_bytes(bytes) >> 11) as f64 / (1u64 << 53) as f64
}

pub fn partition(records: &[InteractionRecord], config: &PartitionConfig) -> Result<DatasetPartition> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("cannot partition an empty record set".into()));
    }
    let profiling_pool: Vec<InteractionRecord> = match config.rule {
        AssignmentRule::ProfilingFirst => records.to_vec(),
        AssignmentRule::HashSplit {
            seed,
            profiling_fraction,
        } => {
            if !(0.0..=1.0).contains(&profiling_fraction) {
                return Err(Error::InvalidArgument(format!(
                    "profiling_fraction {profiling_fraction} outside [0, 1]"
                )));
            }
            records
                .iter()
                .filter(|r| question_hash_unit(seed, &r.question_id) < profiling_fraction)
                .cloned()
                .collect()
        }
    };
    let core = if profiling_pool.is_empty() {
        Vec::new()
    } else {
        match filter_dense_core(
            &profiling_pool,
            config.min_responses_per_question,
            config.min_attempts_per_student,
        ) {
            Ok(core) => core,
            Err(Error::EmptyCore { .. }) => Vec::new(),
            Err(e) => return Err(e),
        }
    };
    if core.is_empty() {
        return Err(Error::EmptyPartition("profiling"));
    }
    let profiling_questions: BTreeSet<String> = core.iter().map(|r| r.question_id.clone()).collect();
    let profiling_students: BTreeSet<String> = core.iter().map(|r| r.student_id.clone()).collect();

    let mut responses: HashMap<&str, usize> = HashMap::new();
    for r in records {
        *responses.entry(r.question_id.as_str()).or_insert(0) += 1;
    }
    let estimation_questions: BTreeSet<String> = responses
        .into_iter()
        .filter(|(q, n)| {
            *n >= config.estimation_min_responses
                && !profiling_questions.contains(*q)
                && match config.rule {
                    AssignmentRule::ProfilingFirst => true,
                    AssignmentRule::HashSplit {
                        seed,
                        profiling_fraction,
                    } => question_hash_unit(seed, q) >= profiling_fraction,
                }
        })
        .map(|(q, _)| q.to_string())
        .collect();
    if estimation_questions.is_empty() {
        return Err(Error::EmptyPartition("estimation"));
    }
    Ok(DatasetPartition {
        profiling_questions,
        profiling_students,
        estimation_questions,
    })
}
