//! Pipeline stages. Stages talk to each other only through files in the
//! output directory, so any stage can be rerun or inspected on its own.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use difficulty_core::data::{read_items, read_records, write_items};
use difficulty_core::irt::fit_2pl;
use difficulty_core::jsonl::{read_json, read_jsonl, read_simple_csv, write_atomic, write_json, write_jsonl};
use difficulty_core::lca::{assign_classes, select_k, sweep_k, AssignmentRow, ClassAssignment, ResponseMatrix};
use difficulty_core::llm::{LlmClient, MockProfiles, PromptSet, ProviderKind, SimulationCache};
use difficulty_core::profiling::{
    build_persona_request, cluster_accuracies, deviation_scores, deviations_csv, select_extremes, PersonaProfile,
    PersonaSynthesisRequest,
};
use difficulty_core::regression::{cross_validate, extract_features, lr_baseline, FeatureTable};
use difficulty_core::simulation::{build_matrices, SimulationMatrix};
use difficulty_core::synthetic::{
    generate_irt_world, generate_persona_world, profiles_for_assignment, PersonaWorldTruth,
};
use difficulty_core::{
    ingest, partition, DatasetPartition, Error, InteractionRecord, IrtParameters, ItemBank, Question,
};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::{PipelineConfig, WorldKind};
use crate::error::CliError;
use crate::manifest::{stamp, Manifest};

pub const INTERACTIONS: &str = "interactions.jsonl";
pub const ITEMS: &str = "items.jsonl";
pub const PARTITION: &str = "partition.json";
pub const INGEST_REPORT: &str = "ingest_report.json";
pub const IRT_PARAMS: &str = "irt_params.json";
pub const IRT_REPORT: &str = "irt_report.json";
pub const LCA_MODEL: &str = "lca_model.json";
pub const ASSIGNMENTS: &str = "assignments.jsonl";
pub const MODEL_SELECTION: &str = "model_selection.csv";
pub const DEVIATIONS: &str = "deviations.csv";
pub const PERSONA_REQUESTS: &str = "persona_requests.json";
pub const PERSONAS: &str = "personas.json";
pub const PERSONA_RAW: &str = "persona_raw.jsonl";
pub const SIMULATION_RAW: &str = "simulation_raw.jsonl";
pub const SIMULATION_MATRICES: &str = "simulation_matrices.jsonl";
pub const SIMULATION_REPORT: &str = "simulation_report.json";
pub const FEATURES: &str = "features.csv";
pub const EVAL_REPORT: &str = "eval_report.json";
pub const LR_REPORT: &str = "lr_report.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Ingest,
    FitIrt,
    FitLca,
    Profile,
    Personas,
    Simulate,
    Features,
    Evaluate,
}

impl Stage {
    pub const PIPELINE: [Stage; 8] = [
        Stage::Ingest,
        Stage::FitIrt,
        Stage::FitLca,
        Stage::Profile,
        Stage::Personas,
        Stage::Simulate,
        Stage::Features,
        Stage::Evaluate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::FitIrt => "fit-irt",
            Stage::FitLca => "fit-lca",
            Stage::Profile => "profile",
            Stage::Personas => "personas",
            Stage::Simulate => "simulate",
            Stage::Features => "features",
            Stage::Evaluate => "evaluate",
        }
    }
}

/// Shared state for one invocation: the effective config and output dir.
pub struct Context {
    pub config: PipelineConfig,
    config_hash: String,
}

/// What a simulate run did, for callers that check cache behavior.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SimulateStats {
    pub provider_calls: usize,
    pub cache_hits: usize,
    pub failures: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct IngestReport {
    n_records: usize,
    n_items: usize,
    n_students: usize,
    excluded_items: Vec<String>,
    dropped_records: usize,
    n_profiling_questions: usize,
    n_profiling_students: usize,
    n_estimation_questions: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct SimulationReport {
    k: usize,
    n_items: usize,
    n_matrices: usize,
    dropped: Vec<difficulty_core::simulation::DroppedItem>,
    failures: Vec<difficulty_core::llm::PairFailure>,
}

fn strip_hash(mut v: Value) -> Value {
    if let Value::Object(m) = &mut v {
        m.remove("manifest_hash");
    }
    v
}

fn from_value<T: serde::de::DeserializeOwned>(path: &Path, v: Value) -> Result<T, CliError> {
    serde_json::from_value(v).map_err(|e| {
        CliError::Data(Error::Schema {
            path: path.to_path_buf(),
            line: 0,
            message: e.to_string(),
        })
    })
}

impl Context {
    pub fn new(config: PipelineConfig) -> Result<Self, CliError> {
        config.validate()?;
        let config_hash = config.content_hash();
        Ok(Self { config, config_hash })
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.config.out_dir.join(name)
    }

    /// Path of an upstream artifact, or an error naming the stage that makes it.
    fn require(&self, name: &str, stage: Stage) -> Result<PathBuf, CliError> {
        let p = self.out(name);
        if p.is_file() {
            Ok(p)
        } else {
            Err(CliError::MissingArtifact {
                path: p,
                stage: stage.name(),
            })
        }
    }

    fn manifest(&self, stage: Stage, inputs: &[&Path]) -> Result<Manifest, CliError> {
        let m = Manifest::new(stage.name(), self.config.seed, &self.config_hash, inputs)?;
        write_json(&self.out(&format!("manifests/{}.json", stage.name())), &m)?;
        Ok(m)
    }

    fn write_stamped<T: Serialize>(&self, name: &str, value: &T, wrap_key: &str, m: &Manifest) -> Result<(), CliError> {
        write_json(&self.out(name), &stamp(value, wrap_key, m.hash()))?;
        Ok(())
    }

    fn read_stamped<T: serde::de::DeserializeOwned>(&self, path: &Path, wrap_key: &str) -> Result<T, CliError> {
        let v = strip_hash(read_json::<Value>(path)?);
        let v = match v {
            Value::Object(mut m) if m.len() == 1 && m.contains_key(wrap_key) => m.remove(wrap_key).expect("checked"),
            other => other,
        };
        from_value(path, v)
    }

    fn records(&self, path: &Path) -> Result<Vec<InteractionRecord>, CliError> {
        Ok(read_records(path)?.into_iter().map(|(_, r)| r).collect())
    }

    fn bank(&self, path: &Path) -> Result<ItemBank, CliError> {
        Ok(ItemBank::new(read_items(path)?.into_iter().map(|(_, q)| q).collect())?)
    }

    pub fn run(&self, stage: Stage) -> Result<(), CliError> {
        tracing::info!(stage = stage.name(), "running");
        match stage {
            Stage::Ingest => self.ingest(),
            Stage::FitIrt => self.fit_irt(),
            Stage::FitLca => self.fit_lca(),
            Stage::Profile => self.profile(),
            Stage::Personas => self.personas(),
            Stage::Simulate => self.simulate().map(|_| ()),
            Stage::Features => self.features(),
            Stage::Evaluate => self.evaluate(),
        }
    }

    pub fn ingest(&self) -> Result<(), CliError> {
        let paths = &self.config.paths;
        for p in [&paths.interactions, &paths.items] {
            if !p.is_file() {
                return Err(CliError::Data(Error::Io {
                    path: p.clone(),
                    source: std::io::Error::new(std::io::ErrorKind::NotFound, "input file not found"),
                }));
            }
        }
        let ds = ingest(&paths.interactions, &paths.items)?;
        let part = partition(&ds.records, &self.config.partition)?;
        let m = self.manifest(Stage::Ingest, &[&paths.interactions, &paths.items])?;
        write_jsonl(&self.out(INTERACTIONS), &ds.records, Some(m.hash()))?;
        write_jsonl(&self.out(ITEMS), ds.bank.questions(), Some(m.hash()))?;
        self.write_stamped(PARTITION, &part, "partition", &m)?;
        let students: BTreeSet<&str> = ds.records.iter().map(|r| r.student_id.as_str()).collect();
        let report = IngestReport {
            n_records: ds.records.len(),
            n_items: ds.bank.len(),
            n_students: students.len(),
            excluded_items: ds.excluded_items.clone(),
            dropped_records: ds.dropped_records,
            n_profiling_questions: part.profiling_questions.len(),
            n_profiling_students: part.profiling_students.len(),
            n_estimation_questions: part.estimation_questions.len(),
        };
        self.write_stamped(INGEST_REPORT, &report, "report", &m)?;
        tracing::info!(
            records = report.n_records,
            profiling_questions = report.n_profiling_questions,
            estimation_questions = report.n_estimation_questions,
            "ingested"
        );
        Ok(())
    }

    fn partition(&self) -> Result<(PathBuf, DatasetPartition), CliError> {
        let p = self.require(PARTITION, Stage::Ingest)?;
        let part = self.read_stamped(&p, "partition")?;
        Ok((p, part))
    }

    pub fn fit_irt(&self) -> Result<(), CliError> {
        let rec_path = self.require(INTERACTIONS, Stage::Ingest)?;
        let (part_path, part) = self.partition()?;
        let records = self.records(&rec_path)?;
        let (params, report) = fit_2pl(part.estimation_records(&records), &self.config.irt)?;
        if !report.converged {
            tracing::warn!(iterations = report.n_iterations, "IRT fit hit the iteration cap");
        }
        let m = self.manifest(Stage::FitIrt, &[&rec_path, &part_path])?;
        self.write_stamped(IRT_PARAMS, &params, "params", &m)?;
        self.write_stamped(IRT_REPORT, &report, "report", &m)?;
        Ok(())
    }

    pub fn fit_lca(&self) -> Result<(), CliError> {
        let rec_path = self.require(INTERACTIONS, Stage::Ingest)?;
        let (part_path, part) = self.partition()?;
        let records = self.records(&rec_path)?;
        let matrix = ResponseMatrix::from_records(part.profiling_records(&records));
        let cfg = &self.config.lca;
        let fit_cfg = cfg.fit_config(self.config.seed);
        let (curve, models) = sweep_k(&matrix, cfg.k_min..=cfg.k_max, &fit_cfg)?;
        let k = match cfg.k {
            Some(k) => k,
            None => select_k(&curve)?,
        };
        let model = match models.iter().find(|m| m.k == k) {
            Some(m) => m.clone(),
            None => difficulty_core::fit_lca(&matrix, k, &fit_cfg)?,
        };
        let assignment = assign_classes(&model, &matrix)?;
        let model = model.relabeled(&assignment.order);
        tracing::info!(k, "latent classes selected");
        let m = self.manifest(Stage::FitLca, &[&rec_path, &part_path])?;
        self.write_stamped(LCA_MODEL, &model, "model", &m)?;
        write_jsonl(&self.out(ASSIGNMENTS), &assignment.rows(), Some(m.hash()))?;
        write_atomic(&self.out(MODEL_SELECTION), curve.to_csv(Some(m.hash())).as_bytes())?;
        Ok(())
    }

    fn assignment(&self) -> Result<(PathBuf, ClassAssignment), CliError> {
        let p = self.require(ASSIGNMENTS, Stage::FitLca)?;
        let rows: Vec<AssignmentRow> = read_jsonl(&p)?.into_iter().map(|(_, r)| r).collect();
        Ok((p.clone(), ClassAssignment::from_rows(rows)?))
    }

    fn prompts(&self) -> Result<PromptSet, CliError> {
        Ok(match &self.config.paths.prompts_dir {
            Some(dir) => PromptSet::load_dir(dir)?,
            None => PromptSet::default(),
        })
    }

    pub fn profile(&self) -> Result<(), CliError> {
        let rec_path = self.require(INTERACTIONS, Stage::Ingest)?;
        let items_path = self.require(ITEMS, Stage::Ingest)?;
        let (part_path, part) = self.partition()?;
        let (asg_path, assignment) = self.assignment()?;
        let records = self.records(&rec_path)?;
        let bank = self.bank(&items_path)?;
        let pc = &self.config.profiling;
        let acc = cluster_accuracies(part.profiling_records(&records), &assignment, pc.min_support)?;
        let scores = deviation_scores(&acc);
        let extremes = select_extremes(&scores, acc.k, pc.per_side)?;
        let instruction = self.prompts()?.persona_instruction;
        let requests = extremes
            .iter()
            .map(|e| build_persona_request(e, &bank, &acc, instruction.trim()))
            .collect::<Result<Vec<_>, _>>()?;
        let m = self.manifest(Stage::Profile, &[&rec_path, &items_path, &part_path, &asg_path])?;
        write_atomic(
            &self.out(DEVIATIONS),
            deviations_csv(&scores, Some(m.hash())).as_bytes(),
        )?;
        self.write_stamped(PERSONA_REQUESTS, &requests, "requests", &m)?;
        Ok(())
    }

    fn client(&self, profiles: Option<MockProfiles>) -> Result<LlmClient, CliError> {
        let provider = self
            .config
            .provider
            .build_provider(self.config.seed, profiles)
            .map_err(|e| CliError::Provider(e.to_string()))?;
        Ok(LlmClient::new(provider, self.config.provider.clone(), self.prompts()?))
    }

    pub fn personas(&self) -> Result<(), CliError> {
        let req_path = self.require(PERSONA_REQUESTS, Stage::Profile)?;
        let requests: Vec<PersonaSynthesisRequest> = self.read_stamped(&req_path, "requests")?;
        let (personas, archive, mut inputs) = match &self.config.paths.personas {
            Some(manual) => {
                let personas: Vec<PersonaProfile> = self.read_stamped(manual, "personas")?;
                let want: Vec<usize> = requests.iter().map(|r| r.cluster).collect();
                let got: Vec<usize> = personas.iter().map(|p| p.cluster).collect();
                if want != got {
                    return Err(CliError::Data(Error::InvalidArgument(format!(
                        "{} covers clusters {got:?} but the fitted model has {want:?}",
                        manual.display()
                    ))));
                }
                (personas, Vec::new(), vec![manual.clone()])
            }
            None => {
                let client = self.client(None)?;
                let personas = requests
                    .iter()
                    .map(|r| client.synthesize_persona(r))
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(Error::from)?;
                (personas, client.archive(), Vec::new())
            }
        };
        inputs.insert(0, req_path);
        let input_refs: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
        let m = self.manifest(Stage::Personas, &input_refs)?;
        self.write_stamped(PERSONAS, &personas, "personas", &m)?;
        write_jsonl(&self.out(PERSONA_RAW), &archive, Some(m.hash()))?;
        Ok(())
    }

    /// Reads `personas.json` as written by the personas stage.
    pub fn load_personas(&self) -> Result<(PathBuf, Vec<PersonaProfile>), CliError> {
        let p = self.require(PERSONAS, Stage::Personas)?;
        let personas = self.read_stamped(&p, "personas")?;
        Ok((p, personas))
    }

    fn mock_profiles(&self, inputs: &mut Vec<PathBuf>) -> Result<Option<MockProfiles>, CliError> {
        if self.config.provider.provider != ProviderKind::Mock {
            return Ok(None);
        }
        let paths = &self.config.paths;
        if let Some(truth_path) = &paths.truth {
            let truth: PersonaWorldTruth = read_json(truth_path)?;
            let (asg_path, assignment) = self.assignment()?;
            inputs.push(truth_path.clone());
            inputs.push(asg_path);
            return Ok(Some(profiles_for_assignment(&truth, &assignment)));
        }
        if let Some(p) = &paths.mock_profiles {
            inputs.push(p.clone());
            return Ok(Some(read_json(p)?));
        }
        Ok(None)
    }

    pub fn simulate(&self) -> Result<SimulateStats, CliError> {
        let items_path = self.require(ITEMS, Stage::Ingest)?;
        let (part_path, part) = self.partition()?;
        let (personas_path, personas) = self.load_personas()?;
        let bank = self.bank(&items_path)?;
        let questions: Vec<Question> = part
            .estimation_questions
            .iter()
            .filter_map(|q| bank.get(q).cloned())
            .collect();
        let mut inputs = vec![items_path, part_path, personas_path];
        let profiles = self.mock_profiles(&mut inputs)?;
        let client = self.client(profiles)?;
        let cache_dir = self.config.paths.cache_dir.clone().unwrap_or_else(|| self.out("cache"));
        let cache = SimulationCache::open(cache_dir)?;
        let outcome = client.batch_simulate(&questions, &personas, Some(&cache))?;
        let stats = SimulateStats {
            provider_calls: client.provider_calls(),
            cache_hits: outcome.cache_hits,
            failures: outcome.failures.len(),
        };
        tracing::info!(
            calls = stats.provider_calls,
            cache_hits = stats.cache_hits,
            failures = stats.failures,
            "simulation batch finished"
        );
        let qids: Vec<String> = questions.iter().map(|q| q.question_id.clone()).collect();
        let (matrices, dropped) = build_matrices(&outcome, &qids, personas.len());

        let input_refs: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
        let m = self.manifest(Stage::Simulate, &input_refs)?;
        write_jsonl(&self.out(SIMULATION_RAW), &outcome.exchanges, Some(m.hash()))?;
        write_jsonl(&self.out(SIMULATION_MATRICES), &matrices, Some(m.hash()))?;
        let report = SimulationReport {
            k: personas.len(),
            n_items: questions.len(),
            n_matrices: matrices.len(),
            dropped,
            failures: outcome.failures,
        };
        self.write_stamped(SIMULATION_REPORT, &report, "report", &m)?;
        if matrices.is_empty() {
            return Err(CliError::Provider(format!(
                "no item produced a complete matrix ({} failed pairs); see {}",
                report.failures.len(),
                self.out(SIMULATION_REPORT).display()
            )));
        }
        Ok(stats)
    }

    fn irt_params(&self) -> Result<(PathBuf, IrtParameters), CliError> {
        let p = self.require(IRT_PARAMS, Stage::FitIrt)?;
        let params = self.read_stamped(&p, "params")?;
        Ok((p, params))
    }

    pub fn features(&self) -> Result<(), CliError> {
        let mat_path = self.require(SIMULATION_MATRICES, Stage::Simulate)?;
        let items_path = self.require(ITEMS, Stage::Ingest)?;
        let (irt_path, params) = self.irt_params()?;
        let bank = self.bank(&items_path)?;
        let beta = params.beta_by_question();
        let matrices: Vec<SimulationMatrix> = read_jsonl(&mat_path)?.into_iter().map(|(_, m)| m).collect();
        let mut vectors = Vec::with_capacity(matrices.len());
        let mut targets = Vec::with_capacity(matrices.len());
        for mtx in &matrices {
            let (Some(q), Some(&b)) = (bank.get(&mtx.question_id), beta.get(&mtx.question_id)) else {
                tracing::warn!(question = %mtx.question_id, "no item text or difficulty; skipped");
                continue;
            };
            vectors.push(extract_features(mtx, q)?);
            targets.push(b);
        }
        let table = FeatureTable::from_vectors(&vectors, targets)?;
        let m = self.manifest(Stage::Features, &[&mat_path, &items_path, &irt_path])?;
        write_atomic(&self.out(FEATURES), table.to_csv(Some(m.hash())).as_bytes())?;
        Ok(())
    }

    pub fn evaluate(&self) -> Result<(), CliError> {
        let feat_path = self.require(FEATURES, Stage::Features)?;
        let table = FeatureTable::read_csv(&feat_path)?;
        let report = cross_validate(&table.rows, &table.targets, &table.numeric, &self.config.regression)?;
        let mut inputs = vec![feat_path];
        let baseline = match &self.config.paths.handcrafted_features {
            Some(hand) => {
                let (irt_path, params) = self.irt_params()?;
                let (x, y, numeric) = handcrafted_table(hand, &params.beta_by_question())?;
                inputs.push(hand.clone());
                inputs.push(irt_path);
                let cv = &self.config.regression;
                Some(lr_baseline(&x, &y, &numeric, cv.n_folds, cv.seed)?)
            }
            None => None,
        };
        let input_refs: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
        let m = self.manifest(Stage::Evaluate, &input_refs)?;
        self.write_stamped(EVAL_REPORT, &report, "report", &m)?;
        if let Some(b) = baseline {
            self.write_stamped(LR_REPORT, &b, "report", &m)?;
        }
        tracing::info!(
            mse = report.mse_mean,
            mse_sd = report.mse_sd,
            r2 = report.r2_mean,
            r2_sd = report.r2_sd,
            "cross-validated"
        );
        Ok(())
    }

    /// Writes a synthetic world to the configured input paths.
    pub fn synth(&self) -> Result<(), CliError> {
        let paths = &self.config.paths;
        let world = &self.config.synth.world;
        let truth_path = paths
            .truth
            .clone()
            .unwrap_or_else(|| paths.interactions.with_file_name("truth.json"));
        let (records, items, truth) = match self.config.synth.kind {
            WorldKind::Persona => {
                let w = generate_persona_world(world)?;
                (
                    w.records,
                    w.items,
                    serde_json::to_value(&w.truth).expect("truth serializes"),
                )
            }
            WorldKind::Irt => {
                let w = generate_irt_world(world)?;
                (
                    w.records,
                    w.items,
                    serde_json::to_value(&w.truth).expect("truth serializes"),
                )
            }
        };
        write_jsonl(&paths.interactions, &records, None)?;
        write_items(&paths.items, &items)?;
        write_json(&truth_path, &truth)?;
        tracing::info!(records = records.len(), items = items.len(), "synthetic world written");
        Ok(())
    }
}

/// Reads `question_id, <features...>` and joins difficulty targets by id.
/// Rows without a fitted difficulty are skipped.
fn handcrafted_table(
    path: &Path,
    beta: &BTreeMap<String, f64>,
) -> Result<(Vec<Vec<f64>>, Vec<f64>, Vec<bool>), CliError> {
    let (header, rows) = read_simple_csv(path)?;
    let schema = |line: usize, message: String| {
        CliError::Data(Error::Schema {
            path: path.to_path_buf(),
            line,
            message,
        })
    };
    if header.first().map(String::as_str) != Some("question_id") {
        return Err(schema(1, "first column must be question_id".into()));
    }
    let cols: Vec<usize> = (1..header.len()).filter(|&c| header[c] != "beta").collect();
    let numeric = cols.iter().map(|&c| !header[c].starts_with("topic_")).collect();
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (line, fields) in rows {
        let Some(&b) = beta.get(&fields[0]) else { continue };
        let row = cols
            .iter()
            .map(|&c| {
                fields[c]
                    .parse::<f64>()
                    .map_err(|_| schema(line, format!("column `{}` is not a number", header[c])))
            })
            .collect::<Result<Vec<_>, _>>()?;
        x.push(row);
        y.push(b);
    }
    Ok((x, y, numeric))
}
