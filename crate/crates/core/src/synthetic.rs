//! Seeded worlds with known ground truth, used as oracles for the
//! estimators and as the offline end-to-end fixture.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{InteractionRecord, OptionKey, OptionTexts, Question, Topic};
use crate::error::{Error, Result};
use crate::irt::{irt_probability, IrtParameters, ItemParameters, StudentAbility};
use crate::lca::{ClassAssignment, LatentClassModel, ResponseMatrix};
use crate::llm::MockProfiles;
use crate::quadrature::NormalQuadrature;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IrtWorldConfig {
    pub alpha_range: (f64, f64),
    pub beta_range: (f64, f64),
}

impl Default for IrtWorldConfig {
    fn default() -> Self {
        Self {
            alpha_range: (0.5, 2.5),
            beta_range: (-2.0, 2.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LcaWorldConfig {
    pub k_true: usize,
    /// Empty means uniform.
    pub class_weights: Vec<f64>,
    /// In [0, 1]: class-conditional success is `0.5 ± 0.45 · separation`.
    pub separation: f64,
    /// Uniform jitter added to each success probability.
    pub rho_jitter: f64,
}

impl Default for LcaWorldConfig {
    fn default() -> Self {
        Self {
            k_true: 3,
            class_weights: Vec::new(),
            separation: 0.8,
            rho_jitter: 0.0,
        }
    }
}

/// Classes differ in mean ability and in which topic they are strong or weak at.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PersonaWorldConfig {
    /// One entry per class.
    pub class_ability_means: Vec<f64>,
    pub within_class_sd: f64,
    /// Added to ability on the class's strong topic, subtracted on its weak one.
    pub topic_bonus: f64,
}

impl Default for PersonaWorldConfig {
    fn default() -> Self {
        Self {
            class_ability_means: vec![-1.5, -0.5, 0.5, 1.5],
            within_class_sd: 0.35,
            topic_bonus: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticWorldConfig {
    pub n_students: usize,
    pub n_items: usize,
    pub seed: u64,
    /// Probability that any (student, item) cell is unobserved.
    pub missingness: f64,
    pub irt: IrtWorldConfig,
    pub lca: LcaWorldConfig,
    pub persona: PersonaWorldConfig,
}

impl Default for SyntheticWorldConfig {
    fn default() -> Self {
        Self {
            n_students: 500,
            n_items: 150,
            seed: 0,
            missingness: 0.3,
            irt: IrtWorldConfig::default(),
            lca: LcaWorldConfig::default(),
            persona: PersonaWorldConfig {
                class_ability_means: vec![-1.5, -0.5, 0.5, 1.5],
                ..PersonaWorldConfig::default()
            },
        }
    }
}

impl SyntheticWorldConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        let range_ok = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && lo <= hi;
        if self.n_students == 0 || self.n_items == 0 {
            return bad("world needs at least one student and one item".into());
        }
        if !(0.0..1.0).contains(&self.missingness) {
            return bad(format!("missingness {} outside [0, 1)", self.missingness));
        }
        if !range_ok(self.irt.alpha_range) || self.irt.alpha_range.0 < 0.0 || !range_ok(self.irt.beta_range) {
            return bad("invalid α or β range".into());
        }
        if self.lca.k_true == 0 {
            return bad("k_true must be ≥ 1".into());
        }
        if !self.lca.class_weights.is_empty() {
            let w = &self.lca.class_weights;
            if w.len() != self.lca.k_true
                || w.iter().any(|v| !(v.is_finite() && *v >= 0.0))
                || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9
            {
                return bad("class_weights must be a simplex of length k_true".into());
            }
        }
        if !(0.0..=1.0).contains(&self.lca.separation) || !(self.lca.rho_jitter >= 0.0) {
            return bad("separation must lie in [0, 1] and jitter be ≥ 0".into());
        }
        if self.persona.class_ability_means.is_empty() || !(self.persona.within_class_sd >= 0.0) {
            return bad("persona world needs ability means and a non-negative sd".into());
        }
        Ok(())
    }

    fn weights(&self, k: usize) -> Vec<f64> {
        if self.lca.class_weights.len() == k {
            self.lca.class_weights.clone()
        } else {
            vec![1.0 / k as f64; k]
        }
    }
}

pub fn student_id(i: usize) -> String {
    format!("s{i:05}")
}

pub fn item_id(i: usize) -> String {
    format!("q{i:04}")
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

fn categorical(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.len() - 1
}

/// Selected option for a sampled response: the key if correct, otherwise a
/// uniformly chosen distractor.
fn selected_option(rng: &mut ChaCha8Rng, correct: OptionKey, is_correct: bool) -> OptionKey {
    if is_correct {
        correct
    } else {
        let distractors: Vec<OptionKey> = OptionKey::ALL.into_iter().filter(|k| *k != correct).collect();
        distractors[rng.random_range(0..3)]
    }
}

/// Placeholder item bank entries; text is synthetic but non-empty.
pub fn synthetic_question(index: usize, topic: Topic, correct: OptionKey) -> Question {
    let id = item_id(index);
    Question {
        question_id: id.clone(),
        text: format!(
            "Synthetic {} question {id}: choose the correct statement.",
            topic.label()
        ),
        options: OptionTexts {
            a: format!("{id} option A"),
            b: format!("{id} option B"),
            c: format!("{id} option C"),
            d: format!("{id} option D"),
        },
        correct_option: correct,
        topic,
        image_only: false,
    }
}

fn draw_items(rng: &mut ChaCha8Rng, n_items: usize) -> Vec<Question> {
    (0..n_items)
        .map(|i| {
            let topic = Topic::ALL[i % 3];
            let correct = OptionKey::ALL[rng.random_range(0..4)];
            synthetic_question(i, topic, correct)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct IrtWorld {
    pub records: Vec<InteractionRecord>,
    pub items: Vec<Question>,
    pub truth: IrtParameters,
}

/// Standard-normal abilities, uniform α and β, Bernoulli 2PL responses.
pub fn generate_irt_world(config: &SyntheticWorldConfig) -> Result<IrtWorld> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let items = draw_items(&mut rng, config.n_items);
    let item_params: Vec<ItemParameters> = items
        .iter()
        .map(|q| ItemParameters {
            question_id: q.question_id.clone(),
            alpha: uniform(&mut rng, config.irt.alpha_range),
            beta: uniform(&mut rng, config.irt.beta_range),
        })
        .collect();
    let students: Vec<StudentAbility> = (0..config.n_students)
        .map(|u| StudentAbility {
            student_id: student_id(u),
            theta: rng.sample(StandardNormal),
        })
        .collect();
    let mut records = Vec::new();
    for s in &students {
        for (q, ip) in items.iter().zip(&item_params) {
            if rng.random::<f64>() < config.missingness {
                continue;
            }
            let is_correct = rng.random::<f64>() < irt_probability(s.theta, ip.alpha, ip.beta);
            records.push(InteractionRecord {
                student_id: s.student_id.clone(),
                question_id: q.question_id.clone(),
                selected_option: selected_option(&mut rng, q.correct_option, is_correct),
                is_correct,
            });
        }
    }
    Ok(IrtWorld {
        records,
        items,
        truth: IrtParameters {
            items: item_params,
            students,
        },
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LcaWorld {
    pub matrix: ResponseMatrix,
    /// Zero-based true class per student, in matrix row order.
    pub classes: Vec<usize>,
    pub truth: LatentClassModel,
}

/// Relabels classes by ascending mean success probability, matching the
/// ordering used by class assignment.
fn sort_classes(rho: &mut [Vec<f64>], weights: &mut Vec<f64>) -> Vec<usize> {
    let k = weights.len();
    let mean = |c: usize| rho.iter().map(|r| r[c]).sum::<f64>() / rho.len().max(1) as f64;
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| mean(a).total_cmp(&mean(b)).then(a.cmp(&b)));
    for r in rho.iter_mut() {
        *r = order.iter().map(|&c| r[c]).collect();
    }
    *weights = order.iter().map(|&c| weights[c]).collect();
    let mut new_label = vec![0; k];
    for (new, &old) in order.iter().enumerate() {
        new_label[old] = new;
    }
    new_label
}

/// Block-pattern latent classes: each class is high or low on every item.
pub fn generate_lca_world(config: &SyntheticWorldConfig) -> Result<LcaWorld> {
    config.validate()?;
    let k = config.lca.k_true;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let spread = 0.45 * config.lca.separation;
    let mut rho: Vec<Vec<f64>> = (0..config.n_items)
        .map(|i| {
            (0..k)
                .map(|c| {
                    // Items with `i % k == c` are a guaranteed signature of
                    // class c; elsewhere high/low is a coin flip.
                    let high = (k > 1 && i % k == c) || rng.random::<bool>();
                    let base = if high { 0.5 + spread } else { 0.5 - spread };
                    let j = config.lca.rho_jitter;
                    let jitter = if j > 0.0 { rng.random_range(-j..j) } else { 0.0 };
                    (base + jitter).clamp(0.01, 0.99)
                })
                .collect()
        })
        .collect();
    let mut weights = config.weights(k);
    let relabel = sort_classes(&mut rho, &mut weights);

    let mut classes = Vec::with_capacity(config.n_students);
    let mut cells = Vec::with_capacity(config.n_students * config.n_items);
    for _ in 0..config.n_students {
        let c = categorical(&mut rng, &config.weights(k));
        let c = relabel[c];
        classes.push(c);
        for r in &rho {
            let observed = rng.random::<f64>() >= config.missingness;
            let correct = rng.random::<f64>() < r[c];
            cells.push(observed.then_some(correct));
        }
    }
    let item_ids: Vec<String> = (0..config.n_items).map(item_id).collect();
    let matrix = ResponseMatrix::new(
        (0..config.n_students).map(student_id).collect(),
        item_ids.clone(),
        cells,
    )?;
    Ok(LcaWorld {
        matrix,
        classes,
        truth: LatentClassModel {
            k,
            class_weights: weights,
            item_ids,
            rho,
            log_likelihood: f64::NAN,
            n_iterations: 0,
            converged: true,
            log_likelihood_trace: Vec::new(),
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueItem {
    pub question_id: String,
    pub alpha: f64,
    pub beta: f64,
    pub topic: Topic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueStudent {
    pub student_id: String,
    /// One-based class.
    pub class: usize,
    pub theta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueClass {
    /// One-based, ordered by ascending mean success probability.
    pub class: usize,
    pub weight: f64,
    pub ability_mean: f64,
    /// Ability shift per topic, ordered as [`Topic::ALL`].
    pub topic_shift: [f64; 3],
}

/// Contents of `truth.json` for a persona world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonaWorldTruth {
    pub seed: u64,
    pub items: Vec<TrueItem>,
    pub students: Vec<TrueStudent>,
    pub classes: Vec<TrueClass>,
    /// Class-conditional success probability per item, keyed like the mock
    /// provider's profiles.
    pub class_profiles: MockProfiles,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PersonaWorld {
    pub records: Vec<InteractionRecord>,
    pub items: Vec<Question>,
    pub truth: PersonaWorldTruth,
}

/// Students belong to classes with distinct mean abilities and topic
/// strengths; responses follow a 2PL curve on the class-shifted ability.
pub fn generate_persona_world(config: &SyntheticWorldConfig) -> Result<PersonaWorld> {
    config.validate()?;
    let pc = &config.persona;
    let k = pc.class_ability_means.len();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let items = draw_items(&mut rng, config.n_items);
    let true_items: Vec<TrueItem> = items
        .iter()
        .map(|q| TrueItem {
            question_id: q.question_id.clone(),
            alpha: uniform(&mut rng, config.irt.alpha_range),
            beta: uniform(&mut rng, config.irt.beta_range),
            topic: q.topic,
        })
        .collect();

    let shift = |c: usize| {
        let mut s = [0.0; 3];
        if k > 1 {
            s[c % 3] += pc.topic_bonus;
            s[(c + 1) % 3] -= pc.topic_bonus;
        }
        s
    };
    let quad = NormalQuadrature::new(41);
    let mut rho: Vec<Vec<f64>> = true_items
        .iter()
        .map(|it| {
            (0..k)
                .map(|c| {
                    let centre = pc.class_ability_means[c] + shift(c)[it.topic.index()];
                    quad.expect(|z| irt_probability(centre + pc.within_class_sd * z, it.alpha, it.beta))
                })
                .collect()
        })
        .collect();
    let mut weights = config.weights(k);
    let relabel = sort_classes(&mut rho, &mut weights);
    let mut classes: Vec<TrueClass> = (0..k)
        .map(|c| TrueClass {
            class: relabel[c] + 1,
            weight: weights[relabel[c]],
            ability_mean: pc.class_ability_means[c],
            topic_shift: shift(c),
        })
        .collect();
    classes.sort_by_key(|c| c.class);

    let mut students = Vec::with_capacity(config.n_students);
    let mut records = Vec::new();
    for u in 0..config.n_students {
        let raw_class = categorical(&mut rng, &config.weights(k));
        let theta = pc.class_ability_means[raw_class] + pc.within_class_sd * rng.sample::<f64, _>(StandardNormal);
        let s = TrueStudent {
            student_id: student_id(u),
            class: relabel[raw_class] + 1,
            theta,
        };
        let shifts = shift(raw_class);
        for (q, it) in items.iter().zip(&true_items) {
            if rng.random::<f64>() < config.missingness {
                continue;
            }
            let p = irt_probability(theta + shifts[it.topic.index()], it.alpha, it.beta);
            let is_correct = rng.random::<f64>() < p;
            records.push(InteractionRecord {
                student_id: s.student_id.clone(),
                question_id: q.question_id.clone(),
                selected_option: selected_option(&mut rng, q.correct_option, is_correct),
                is_correct,
            });
        }
        students.push(s);
    }

    let class_profiles: MockProfiles = (0..k)
        .map(|c| {
            let by_item = true_items
                .iter()
                .zip(&rho)
                .map(|(it, r)| (it.question_id.clone(), r[c]))
                .collect();
            (c + 1, by_item)
        })
        .collect();
    Ok(PersonaWorld {
        records,
        items,
        truth: PersonaWorldTruth {
            seed: config.seed,
            items: true_items,
            students,
            classes,
            class_profiles,
        },
    })
}

/// Mock-provider profiles for fitted clusters: each fitted cluster gets the
/// student-weighted average of its members' true class profiles. Students
/// absent from the truth are ignored.
pub fn profiles_for_assignment(truth: &PersonaWorldTruth, assignment: &ClassAssignment) -> MockProfiles {
    let true_class: BTreeMap<&str, usize> = truth
        .students
        .iter()
        .map(|s| (s.student_id.as_str(), s.class))
        .collect();
    let mut counts: BTreeMap<usize, BTreeMap<usize, usize>> = BTreeMap::new();
    for (sid, &c) in assignment.student_ids.iter().zip(&assignment.classes) {
        if let Some(&t) = true_class.get(sid.as_str()) {
            *counts.entry(c + 1).or_default().entry(t).or_insert(0) += 1;
        }
    }
    counts
        .into_iter()
        .map(|(cluster, mix)| {
            let total: usize = mix.values().sum();
            let mut profile: BTreeMap<String, f64> = BTreeMap::new();
            for (t, n) in mix {
                if let Some(p) = truth.class_profiles.get(&t) {
                    for (q, v) in p {
                        *profile.entry(q.clone()).or_insert(0.0) += v * n as f64 / total as f64;
                    }
                }
            }
            (cluster, profile)
        })
        .collect()
}
