//! Latent class analysis with a Bernoulli measurement model.
//!
//! Missing cells contribute nothing to the likelihood. Each fit runs several
//! seeded random restarts of EM and keeps the best log-likelihood.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::InteractionRecord;
use crate::error::{Error, Result};

/// Dense students × items matrix of binary outcomes with a missing mask.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseMatrix {
    student_ids: Vec<String>,
    item_ids: Vec<String>,
    cells: Vec<Option<bool>>,
}

impl ResponseMatrix {
    pub fn new(student_ids: Vec<String>, item_ids: Vec<String>, cells: Vec<Option<bool>>) -> Result<Self> {
        if cells.len() != student_ids.len() * item_ids.len() {
            return Err(Error::InvalidArgument(format!(
                "response matrix has {} cells, expected {} x {}",
                cells.len(),
                student_ids.len(),
                item_ids.len()
            )));
        }
        Ok(Self {
            student_ids,
            item_ids,
            cells,
        })
    }

    /// Builds the matrix from records with students and items in sorted id
    /// order. When a student attempted an item more than once, the first
    /// attempt in record order is used.
    pub fn from_records<'a>(records: impl IntoIterator<Item = &'a InteractionRecord>) -> Self {
        let records: Vec<&InteractionRecord> = records.into_iter().collect();
        let students: BTreeSet<&str> = records.iter().map(|r| r.student_id.as_str()).collect();
        let items: BTreeSet<&str> = records.iter().map(|r| r.question_id.as_str()).collect();
        let s_idx: BTreeMap<&str, usize> = students.iter().enumerate().map(|(i, s)| (*s, i)).collect();
        let i_idx: BTreeMap<&str, usize> = items.iter().enumerate().map(|(i, s)| (*s, i)).collect();
        let ni = items.len();
        let mut cells = vec![None; students.len() * ni];
        for r in records {
            let cell = &mut cells[s_idx[r.student_id.as_str()] * ni + i_idx[r.question_id.as_str()]];
            if cell.is_none() {
                *cell = Some(r.is_correct);
            }
        }
        Self {
            student_ids: students.into_iter().map(String::from).collect(),
            item_ids: items.into_iter().map(String::from).collect(),
            cells,
        }
    }

    pub fn n_students(&self) -> usize {
        self.student_ids.len()
    }

    pub fn n_items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn student_ids(&self) -> &[String] {
        &self.student_ids
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    pub fn get(&self, student: usize, item: usize) -> Option<bool> {
        self.cells[student * self.item_ids.len() + item]
    }

    pub fn row(&self, student: usize) -> &[Option<bool>] {
        let ni = self.item_ids.len();
        &self.cells[student * ni..(student + 1) * ni]
    }

    pub fn student_accuracy(&self, student: usize) -> Option<f64> {
        let (mut c, mut n) = (0usize, 0usize);
        for y in self.row(student).iter().flatten() {
            n += 1;
            c += *y as usize;
        }
        (n > 0).then(|| c as f64 / n as f64)
    }

    /// Row `j` of the result is row `order[j]` of `self`.
    pub fn permute_students(&self, order: &[usize]) -> Self {
        let ni = self.item_ids.len();
        let mut cells = Vec::with_capacity(self.cells.len());
        for &s in order {
            cells.extend_from_slice(&self.cells[s * ni..(s + 1) * ni]);
        }
        Self {
            student_ids: order.iter().map(|&s| self.student_ids[s].clone()).collect(),
            item_ids: self.item_ids.clone(),
            cells,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LcaConfig {
    pub restarts: usize,
    pub max_iterations: usize,
    pub tolerance: f64,
    pub seed: u64,
    /// `rho` is clamped to `[floor, 1 - floor]` after every M-step.
    pub rho_floor: f64,
}

impl Default for LcaConfig {
    fn default() -> Self {
        Self {
            restarts: 20,
            max_iterations: 1000,
            tolerance: 1e-6,
            seed: 0,
            rho_floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentClassModel {
    pub k: usize,
    pub class_weights: Vec<f64>,
    pub item_ids: Vec<String>,
    /// `rho[item][class]`: class-conditional probability of a correct response.
    pub rho: Vec<Vec<f64>>,
    pub log_likelihood: f64,
    pub n_iterations: usize,
    pub converged: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub log_likelihood_trace: Vec<f64>,
}

impl LatentClassModel {
    pub fn n_parameters(&self) -> usize {
        parameter_count(self.k, self.item_ids.len())
    }

    /// Class `j` of the result is class `order[j]` of `self`.
    pub fn relabeled(&self, order: &[usize]) -> Self {
        Self {
            class_weights: order.iter().map(|&c| self.class_weights[c]).collect(),
            rho: self
                .rho
                .iter()
                .map(|row| order.iter().map(|&c| row[c]).collect())
                .collect(),
            ..self.clone()
        }
    }

    fn check_items(&self, matrix: &ResponseMatrix) -> Result<()> {
        if self.item_ids != matrix.item_ids {
            return Err(Error::InvalidArgument(
                "response matrix items do not match the fitted model".into(),
            ));
        }
        Ok(())
    }

    /// Per-student posterior class probabilities and log marginal likelihoods.
    pub fn posterior(&self, matrix: &ResponseMatrix) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
        self.check_items(matrix)?;
        let (lr, lq) = log_tables(&self.rho);
        let log_w: Vec<f64> = self.class_weights.iter().map(|w| w.ln()).collect();
        let mut post = Vec::with_capacity(matrix.n_students());
        let mut ll = Vec::with_capacity(matrix.n_students());
        for s in 0..matrix.n_students() {
            let (p, l) = student_posterior(matrix.row(s), &log_w, &lr, &lq, self.k);
            post.push(p);
            ll.push(l);
        }
        Ok((post, ll))
    }
}

pub fn parameter_count(k: usize, n_items: usize) -> usize {
    (k - 1) + k * n_items
}

fn log_tables(rho: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let lr = rho.iter().flatten().map(|p| p.ln()).collect();
    let lq = rho.iter().flatten().map(|p| (1.0 - p).ln()).collect();
    (lr, lq)
}

fn student_posterior(row: &[Option<bool>], log_w: &[f64], lr: &[f64], lq: &[f64], k: usize) -> (Vec<f64>, f64) {
    let mut lj = log_w.to_vec();
    for (i, cell) in row.iter().enumerate() {
        if let Some(y) = cell {
            let src = if *y { lr } else { lq };
            for (a, b) in lj.iter_mut().zip(&src[i * k..(i + 1) * k]) {
                *a += b;
            }
        }
    }
    let max = lj.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in lj.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in lj.iter_mut() {
        *v /= total;
    }
    (lj, max + total.ln())
}

struct EmRun {
    weights: Vec<f64>,
    rho: Vec<Vec<f64>>,
    log_likelihood: f64,
    trace: Vec<f64>,
    iterations: usize,
    converged: bool,
}

fn run_em(matrix: &ResponseMatrix, k: usize, config: &LcaConfig, mut rho: Vec<Vec<f64>>) -> EmRun {
    let ns = matrix.n_students();
    let ni = matrix.n_items();
    let lo = config.rho_floor;
    let hi = 1.0 - config.rho_floor;
    let mut weights = vec![1.0 / k as f64; k];
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    loop {
        let (lr, lq) = log_tables(&rho);
        let log_w: Vec<f64> = weights.iter().map(|w| w.ln()).collect();
        let mut num = vec![0.0; ni * k];
        let mut den = vec![0.0; ni * k];
        let mut mass = vec![0.0; k];
        let mut ll = 0.0;
        for s in 0..ns {
            let row = matrix.row(s);
            let (post, l) = student_posterior(row, &log_w, &lr, &lq, k);
            ll += l;
            for (m, p) in mass.iter_mut().zip(&post) {
                *m += p;
            }
            for (i, cell) in row.iter().enumerate() {
                if let Some(y) = cell {
                    for c in 0..k {
                        den[i * k + c] += post[c];
                        if *y {
                            num[i * k + c] += post[c];
                        }
                    }
                }
            }
        }
        trace.push(ll);
        let n = trace.len();
        if n >= 2 && (trace[n - 1] - trace[n - 2]).abs() < config.tolerance {
            converged = true;
            break;
        }
        if iterations == config.max_iterations {
            break;
        }
        iterations += 1;
        for c in 0..k {
            weights[c] = mass[c] / ns as f64;
        }
        for (i, row) in rho.iter_mut().enumerate() {
            for (c, r) in row.iter_mut().enumerate() {
                let d = den[i * k + c];
                if d > 1e-300 {
                    *r = (num[i * k + c] / d).clamp(lo, hi);
                }
            }
        }
    }
    EmRun {
        weights,
        rho,
        log_likelihood: *trace.last().expect("at least one E-step"),
        trace,
        iterations,
        converged,
    }
}

/// Fits a `k`-class model, keeping the best of `config.restarts` seeded EM runs.
pub fn fit_lca(matrix: &ResponseMatrix, k: usize, config: &LcaConfig) -> Result<LatentClassModel> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if k > matrix.n_students() {
        return Err(Error::TooManyClasses {
            k,
            n_students: matrix.n_students(),
        });
    }
    if let Some(s) = (0..matrix.n_students()).find(|&s| matrix.row(s).iter().all(Option::is_none)) {
        return Err(Error::EmptyStudentRow(s));
    }
    let restarts = config.restarts.max(1);
    let runs: Vec<EmRun> = (0..restarts)
        .into_par_iter()
        .map(|restart| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(((k as u64) << 32) | restart as u64);
            let rho = (0..matrix.n_items())
                .map(|_| (0..k).map(|_| rng.random_range(0.2..0.8)).collect())
                .collect();
            run_em(matrix, k, config, rho)
        })
        .collect();
    let mut best = 0;
    for (i, r) in runs.iter().enumerate() {
        if r.log_likelihood > runs[best].log_likelihood {
            best = i;
        }
    }
    let run = runs.into_iter().nth(best).expect("non-empty restarts");
    if !run.converged {
        tracing::warn!(k, iterations = run.iterations, "LCA EM did not reach tolerance");
    }
    Ok(LatentClassModel {
        k,
        class_weights: run.weights,
        item_ids: matrix.item_ids.clone(),
        rho: run.rho,
        log_likelihood: run.log_likelihood,
        n_iterations: run.iterations,
        converged: run.converged,
        log_likelihood_trace: run.trace,
    })
}

/// Returns `(BIC, AIC)`.
pub fn information_criteria(model: &LatentClassModel, n_students: usize) -> (f64, f64) {
    criteria(model.log_likelihood, model.n_parameters(), n_students)
}

pub fn criteria(log_likelihood: f64, n_parameters: usize, n_students: usize) -> (f64, f64) {
    let p = n_parameters as f64;
    let bic = -2.0 * log_likelihood + p * (n_students as f64).ln();
    let aic = -2.0 * log_likelihood + 2.0 * p;
    (bic, aic)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSelectionEntry {
    pub k: usize,
    pub log_likelihood: f64,
    pub n_parameters: usize,
    pub aic: f64,
    pub bic: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelSelectionCurve {
    pub entries: Vec<ModelSelectionEntry>,
}

impl ModelSelectionCurve {
    pub fn to_csv(&self, manifest_hash: Option<&str>) -> String {
        let mut out = String::new();
        if let Some(h) = manifest_hash {
            out.push_str(&format!("# manifest_hash={h}\n"));
        }
        out.push_str("k,log_likelihood,n_parameters,aic,bic\n");
        for e in &self.entries {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                e.k, e.log_likelihood, e.n_parameters, e.aic, e.bic
            ));
        }
        out
    }
}

/// Argmin of BIC; ties go to the smaller `k`.
pub fn select_k(curve: &ModelSelectionCurve) -> Result<usize> {
    let first = curve
        .entries
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty model selection curve".into()))?;
    for w in curve.entries.windows(2) {
        if w[1].k != w[0].k + 1 {
            return Err(Error::InvalidArgument(
                "model selection curve must cover a contiguous k range".into(),
            ));
        }
    }
    let mut best = first;
    for e in &curve.entries[1..] {
        if e.bic < best.bic {
            best = e;
        }
    }
    Ok(best.k)
}

/// Fits every `k` in `k_range` (skipping values above the student count).
pub fn sweep_k(
    matrix: &ResponseMatrix,
    k_range: std::ops::RangeInclusive<usize>,
    config: &LcaConfig,
) -> Result<(ModelSelectionCurve, Vec<LatentClassModel>)> {
    let mut curve = ModelSelectionCurve::default();
    let mut models = Vec::new();
    for k in k_range.filter(|&k| k >= 1 && k <= matrix.n_students()) {
        let model = fit_lca(matrix, k, config)?;
        let (bic, aic) = information_criteria(&model, matrix.n_students());
        curve.entries.push(ModelSelectionEntry {
            k,
            log_likelihood: model.log_likelihood,
            n_parameters: model.n_parameters(),
            aic,
            bic,
        });
        models.push(model);
    }
    Ok((curve, models))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassAssignment {
    pub student_ids: Vec<String>,
    /// Zero-based class per student after relabeling.
    pub classes: Vec<usize>,
    pub posterior: Vec<Vec<f64>>,
    /// `order[j]` is the fitted class that became class `j`.
    pub order: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentRow {
    pub student_id: String,
    /// One-based class label.
    pub class: usize,
    pub posterior: Vec<f64>,
}

impl ClassAssignment {
    pub fn rows(&self) -> Vec<AssignmentRow> {
        self.student_ids
            .iter()
            .zip(&self.classes)
            .zip(&self.posterior)
            .map(|((s, &c), p)| AssignmentRow {
                student_id: s.clone(),
                class: c + 1,
                posterior: p.clone(),
            })
            .collect()
    }

    pub fn from_rows(rows: Vec<AssignmentRow>) -> Result<Self> {
        let k = rows.first().map(|r| r.posterior.len()).unwrap_or(0);
        let mut out = Self {
            student_ids: Vec::with_capacity(rows.len()),
            classes: Vec::with_capacity(rows.len()),
            posterior: Vec::with_capacity(rows.len()),
            order: (0..k).collect(),
        };
        for r in rows {
            if r.class == 0 || r.class > k || r.posterior.len() != k {
                return Err(Error::InvalidArgument(format!(
                    "assignment for `{}` is inconsistent with k = {k}",
                    r.student_id
                )));
            }
            out.student_ids.push(r.student_id);
            out.classes.push(r.class - 1);
            out.posterior.push(r.posterior);
        }
        Ok(out)
    }

    pub fn class_of(&self) -> BTreeMap<&str, usize> {
        self.student_ids
            .iter()
            .map(String::as_str)
            .zip(self.classes.iter().copied())
            .collect()
    }

    pub fn k(&self) -> usize {
        self.order.len()
    }
}

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// Posterior by Bayes rule, hard assignment by argmax (lowest index on ties),
/// then classes relabeled by ascending mean accuracy of their members.
/// Classes without members are ordered by their mean `rho`.
pub fn assign_classes(model: &LatentClassModel, matrix: &ResponseMatrix) -> Result<ClassAssignment> {
    let (post, _) = model.posterior(matrix)?;
    let k = model.k;
    let prelim: Vec<usize> = post.iter().map(|p| argmax(p)).collect();
    let mut acc_sum = vec![0.0; k];
    let mut members = vec![0usize; k];
    for (s, &c) in prelim.iter().enumerate() {
        if let Some(a) = matrix.student_accuracy(s) {
            acc_sum[c] += a;
            members[c] += 1;
        }
    }
    let key: Vec<f64> = (0..k)
        .map(|c| {
            if members[c] > 0 {
                acc_sum[c] / members[c] as f64
            } else {
                model.rho.iter().map(|r| r[c]).sum::<f64>() / model.rho.len().max(1) as f64
            }
        })
        .collect();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| key[a].total_cmp(&key[b]).then(a.cmp(&b)));
    let posterior: Vec<Vec<f64>> = post.iter().map(|p| order.iter().map(|&c| p[c]).collect()).collect();
    let classes = posterior.iter().map(|p| argmax(p)).collect();
    Ok(ClassAssignment {
        student_ids: matrix.student_ids.clone(),
        classes,
        posterior,
        order,
    })
}
