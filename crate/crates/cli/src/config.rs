use std::fs;
use std::path::{Path, PathBuf};

use difficulty_core::irt::IrtFitConfig;
use difficulty_core::lca::LcaConfig;
use difficulty_core::llm::ProviderConfig;
use difficulty_core::regression::CvConfig;
use difficulty_core::synthetic::SyntheticWorldConfig;
use difficulty_core::PartitionConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Input locations. Relative paths are resolved against the config file's
/// directory; empty optional paths mean "not used".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub interactions: PathBuf,
    pub items: PathBuf,
    /// Manually written personas; when set, the `personas` stage copies
    /// these instead of asking the provider.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub personas: Option<PathBuf>,
    /// Prompt template directory laid out like the bundled `prompts/v1`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prompts_dir: Option<PathBuf>,
    /// Simulation cache; defaults to `<out_dir>/cache`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
    /// JSON object `{cluster: {question_id: p_correct}}` for the mock provider.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mock_profiles: Option<PathBuf>,
    /// `truth.json` of a synthetic persona world. With the mock provider,
    /// fitted clusters are keyed to the true class profiles of their members.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truth: Option<PathBuf>,
    /// `question_id, <features...>` table for the unpenalized baseline.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub handcrafted_features: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            interactions: "interactions.jsonl".into(),
            items: "items.jsonl".into(),
            personas: None,
            prompts_dir: None,
            cache_dir: None,
            mock_profiles: None,
            truth: None,
            handcrafted_features: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LcaStageConfig {
    pub k_min: usize,
    pub k_max: usize,
    /// Skip BIC selection and use this many classes.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    pub restarts: usize,
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for LcaStageConfig {
    fn default() -> Self {
        let d = LcaConfig::default();
        Self {
            k_min: 1,
            k_max: 6,
            k: None,
            restarts: d.restarts,
            max_iterations: d.max_iterations,
            tolerance: d.tolerance,
        }
    }
}

impl LcaStageConfig {
    pub fn fit_config(&self, seed: u64) -> LcaConfig {
        LcaConfig {
            restarts: self.restarts,
            max_iterations: self.max_iterations,
            tolerance: self.tolerance,
            seed,
            ..LcaConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProfilingConfig {
    /// Strength and weakness questions per cluster.
    pub per_side: usize,
    /// Attempts a cluster needs on a question for its accuracy to count.
    pub min_support: u32,
}

impl Default for ProfilingConfig {
    fn default() -> Self {
        Self {
            per_side: 5,
            min_support: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorldKind {
    #[default]
    Persona,
    Irt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub kind: WorldKind,
    #[serde(flatten)]
    pub world: SyntheticWorldConfig,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            kind: WorldKind::Persona,
            world: SyntheticWorldConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Drives LCA restarts, fold splits, the mock provider and world generation.
    pub seed: u64,
    pub out_dir: PathBuf,
    pub paths: Paths,
    pub partition: PartitionConfig,
    pub irt: IrtFitConfig,
    pub lca: LcaStageConfig,
    pub profiling: ProfilingConfig,
    pub provider: ProviderConfig,
    pub regression: CvConfig,
    pub synth: SynthConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: "out".into(),
            paths: Paths::default(),
            partition: PartitionConfig::default(),
            irt: IrtFitConfig::default(),
            lca: LcaStageConfig::default(),
            profiling: ProfilingConfig::default(),
            provider: ProviderConfig::default(),
            regression: CvConfig::default(),
            synth: SynthConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Reads a config file and resolves its relative paths against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_relative(base);
        Ok(cfg)
    }

    pub fn resolve_relative(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.out_dir);
        fix(&mut self.paths.interactions);
        fix(&mut self.paths.items);
        for p in [
            &mut self.paths.personas,
            &mut self.paths.prompts_dir,
            &mut self.paths.cache_dir,
            &mut self.paths.mock_profiles,
            &mut self.paths.truth,
            &mut self.paths.handcrafted_features,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    /// Copies the global seed into every seeded component.
    pub fn apply_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.regression.seed = seed;
        self.synth.world.seed = seed;
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: &str| Err(CliError::Config(m.to_string()));
        if self.lca.k_min == 0 || self.lca.k_min > self.lca.k_max {
            return bad("lca.k_min must be ≥ 1 and ≤ lca.k_max");
        }
        if self.lca.k == Some(0) {
            return bad("lca.k must be ≥ 1");
        }
        if self.profiling.per_side == 0 {
            return bad("profiling.per_side must be ≥ 1");
        }
        if self.regression.lambda_grid.is_empty() || self.regression.lambda_grid.iter().any(|l| !(*l >= 0.0)) {
            return bad("regression.lambda_grid must be non-empty and non-negative");
        }
        if self.regression.n_folds < 2 || self.regression.inner_folds < 2 {
            return bad("regression folds must be ≥ 2");
        }
        self.provider.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }

    /// Hash of every setting that affects results. Paths and the output
    /// directory are excluded; inputs are tracked by content instead.
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut c = self.clone();
        c.out_dir = PathBuf::new();
        c.paths = Paths {
            interactions: PathBuf::new(),
            items: PathBuf::new(),
            ..Paths::default()
        };
        let v = serde_json::to_value(&c).expect("config serializes");
        hex::encode(Sha256::digest(v.to_string().as_bytes()))
    }
}
