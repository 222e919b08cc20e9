//! Provider-agnostic client for persona synthesis and persona-conditioned
//! response simulation.
//!
//! Providers are plain request/response functions ([`Provider`]). The client
//! adds retries with exponential backoff for transient failures, one reprompt
//! when a reply cannot be parsed, a shared rate limiter, an on-disk cache and
//! an archive of raw replies. API keys are read from the environment when the
//! provider is built and are never written anywhere.

mod cache;
mod prompts;
mod provider;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use cache::{cache_key, CacheEntry, SimulationCache};
pub use prompts::{render, PromptSet};
pub use provider::{
    ChatMessage, ChatRequest, HttpProvider, MockProfiles, MockProvider, Provider, ProviderError, RequestKind, Role,
};

use crate::data::{OptionKey, Question};
use crate::error::{Error, Result};
use crate::profiling::{PersonaProfile, PersonaSynthesisRequest, Provenance};

/// Non-negative option scores as returned by a provider, not yet normalized.
pub type RawOptionMap = BTreeMap<OptionKey, f64>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LlmError {
    #[error("provider failed after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("unparseable provider reply: {message}")]
    Parse { message: String, raw: String },
    #[error("invalid provider configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    HttpApi,
    Mock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    pub provider: ProviderKind,
    pub endpoint: String,
    pub model_name: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub max_retries: u32,
    pub timeout_secs: f64,
    /// Requests per minute across all threads; 0 disables limiting.
    pub rate_limit: u32,
    pub temperature: f64,
    pub retry_backoff_ms: u64,
    pub concurrency: usize,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            provider: ProviderKind::Mock,
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model_name: "mock-1".into(),
            api_key_env: "LLM_API_KEY".into(),
            max_retries: 3,
            timeout_secs: 60.0,
            rate_limit: 0,
            temperature: 0.0,
            retry_backoff_ms: 500,
            concurrency: 4,
        }
    }
}

impl ProviderConfig {
    pub fn validate(&self) -> std::result::Result<(), LlmError> {
        if !(self.timeout_secs > 0.0) {
            return Err(LlmError::Config("timeout must be positive".into()));
        }
        if self.concurrency == 0 {
            return Err(LlmError::Config("concurrency must be at least 1".into()));
        }
        Ok(())
    }

    /// Builds the configured provider. `profiles` only affects the mock.
    pub fn build_provider(
        &self,
        seed: u64,
        profiles: Option<MockProfiles>,
    ) -> std::result::Result<Arc<dyn Provider>, LlmError> {
        self.validate()?;
        Ok(match self.provider {
            ProviderKind::Mock => Arc::new(match profiles {
                Some(p) => MockProvider::with_profiles(seed, p),
                None => MockProvider::new(seed),
            }),
            ProviderKind::HttpApi => {
                let key = std::env::var(&self.api_key_env).ok().filter(|k| !k.is_empty());
                if key.is_none() {
                    tracing::warn!(var = %self.api_key_env, "no API key in environment; sending unauthenticated requests");
                }
                Arc::new(
                    HttpProvider::new(&self.endpoint, key, Duration::from_secs_f64(self.timeout_secs))
                        .map_err(|e| LlmError::Config(e.to_string()))?,
                )
            }
        })
    }
}

#[derive(Debug)]
struct RateLimiter {
    interval: Option<Duration>,
    next: Mutex<Option<Instant>>,
}

impl RateLimiter {
    fn new(per_minute: u32) -> Self {
        Self {
            interval: (per_minute > 0).then(|| Duration::from_secs_f64(60.0 / per_minute as f64)),
            next: Mutex::new(None),
        }
    }

    fn wait(&self) {
        let Some(interval) = self.interval else { return };
        let now = Instant::now();
        let slot = {
            let mut next = self.next.lock().expect("rate limiter lock");
            let slot = next.map_or(now, |n| n.max(now));
            *next = Some(slot + interval);
            slot
        };
        if slot > now {
            std::thread::sleep(slot - now);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub label: String,
    pub attempt: u32,
    pub error: Option<String>,
}

/// One raw provider reply, as archived to `simulation_raw.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawExchange {
    pub kind: String,
    pub question_id: Option<String>,
    pub cluster: usize,
    pub provider: String,
    pub model: String,
    pub reprompt: bool,
    pub response: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairFailure {
    pub question_id: String,
    pub cluster: usize,
    pub error: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BatchOutcome {
    /// Keyed by `(question_id, one-based cluster)`.
    pub results: BTreeMap<(String, usize), RawOptionMap>,
    pub failures: Vec<PairFailure>,
    pub exchanges: Vec<RawExchange>,
    pub cache_hits: usize,
}

/// Extracts the outermost `{...}` span, tolerating prose or code fences
/// around it.
fn json_object(text: &str) -> std::result::Result<&str, String> {
    let start = text.find('{').ok_or("no JSON object in reply")?;
    let end = text.rfind('}').ok_or("no JSON object in reply")?;
    if end < start {
        return Err("no JSON object in reply".into());
    }
    Ok(&text[start..=end])
}

pub fn parse_option_map(text: &str) -> std::result::Result<RawOptionMap, String> {
    let obj: serde_json::Map<String, serde_json::Value> =
        serde_json::from_str(json_object(text)?).map_err(|e| format!("invalid JSON: {e}"))?;
    let mut out = RawOptionMap::new();
    for (k, v) in obj {
        let key = match k.trim().to_ascii_uppercase().as_str() {
            "A" => OptionKey::A,
            "B" => OptionKey::B,
            "C" => OptionKey::C,
            "D" => OptionKey::D,
            _ => return Err(format!("unexpected key `{k}`")),
        };
        let p = v.as_f64().ok_or_else(|| format!("value for {key} is not a number"))?;
        if !p.is_finite() || p < 0.0 {
            return Err(format!("value for {key} must be finite and non-negative, got {p}"));
        }
        out.insert(key, p);
    }
    if let Some(missing) = OptionKey::ALL.iter().find(|k| !out.contains_key(k)) {
        return Err(format!("missing option {missing}"));
    }
    Ok(out)
}

#[derive(Deserialize)]
struct PersonaReply {
    name: String,
    description: String,
}

pub fn parse_persona(text: &str) -> std::result::Result<(String, String), String> {
    let reply: PersonaReply =
        serde_json::from_str(json_object(text)?).map_err(|e| format!("invalid persona JSON: {e}"))?;
    if reply.name.trim().is_empty() || reply.description.trim().is_empty() {
        return Err("persona name and description must be non-empty".into());
    }
    Ok((reply.name.trim().to_string(), reply.description.trim().to_string()))
}

pub struct LlmClient {
    provider: Arc<dyn Provider>,
    config: ProviderConfig,
    prompts: PromptSet,
    limiter: RateLimiter,
    provider_calls: AtomicUsize,
    attempts: Mutex<Vec<AttemptRecord>>,
    archive: Mutex<Vec<RawExchange>>,
}

struct Parsed<T> {
    value: T,
    replies: Vec<String>,
}

impl LlmClient {
    pub fn new(provider: Arc<dyn Provider>, config: ProviderConfig, prompts: PromptSet) -> Self {
        let limiter = RateLimiter::new(config.rate_limit);
        Self {
            provider,
            config,
            prompts,
            limiter,
            provider_calls: AtomicUsize::new(0),
            attempts: Mutex::new(Vec::new()),
            archive: Mutex::new(Vec::new()),
        }
    }

    pub fn prompts(&self) -> &PromptSet {
        &self.prompts
    }

    /// Number of requests actually sent to the provider, retries included.
    pub fn provider_calls(&self) -> usize {
        self.provider_calls.load(Ordering::SeqCst)
    }

    pub fn attempt_log(&self) -> Vec<AttemptRecord> {
        self.attempts.lock().expect("attempt log").clone()
    }

    /// Raw replies from [`Self::synthesize_persona`] and [`Self::simulate_item`].
    pub fn archive(&self) -> Vec<RawExchange> {
        self.archive.lock().expect("archive").clone()
    }

    fn send(&self, request: &ChatRequest, label: &str) -> std::result::Result<String, LlmError> {
        let mut attempt = 0u32;
        loop {
            attempt += 1;
            self.limiter.wait();
            self.provider_calls.fetch_add(1, Ordering::SeqCst);
            let outcome = self.provider.complete(request);
            self.attempts.lock().expect("attempt log").push(AttemptRecord {
                label: label.to_string(),
                attempt,
                error: outcome.as_ref().err().map(|e| e.to_string()),
            });
            match outcome {
                Ok(text) => return Ok(text),
                Err(ProviderError::Transient(msg)) if attempt <= self.config.max_retries => {
                    tracing::warn!(label, attempt, error = %msg, "transient provider failure; retrying");
                    let backoff = self.config.retry_backoff_ms.saturating_mul(1 << (attempt - 1).min(16));
                    if backoff > 0 {
                        std::thread::sleep(Duration::from_millis(backoff));
                    }
                }
                Err(e) => {
                    return Err(LlmError::Transport {
                        attempts: attempt,
                        message: e.to_string(),
                    })
                }
            }
        }
    }

    fn complete_parsed<T>(
        &self,
        mut request: ChatRequest,
        label: &str,
        parse: impl Fn(&str) -> std::result::Result<T, String>,
    ) -> std::result::Result<Parsed<T>, LlmError> {
        let first = self.send(&request, label)?;
        let err = match parse(&first) {
            Ok(value) => {
                return Ok(Parsed {
                    value,
                    replies: vec![first],
                })
            }
            Err(e) => e,
        };
        tracing::warn!(label, error = %err, "unparseable reply; reprompting once");
        request.messages.push(ChatMessage::new(Role::Assistant, first.clone()));
        request.messages.push(self.prompts.reprompt_message(&err));
        let second = self.send(&request, label)?;
        match parse(&second) {
            Ok(value) => Ok(Parsed {
                value,
                replies: vec![first, second],
            }),
            Err(message) => Err(LlmError::Parse { message, raw: second }),
        }
    }

    fn exchanges(&self, kind: &str, question_id: Option<&str>, cluster: usize, replies: &[String]) -> Vec<RawExchange> {
        replies
            .iter()
            .enumerate()
            .map(|(i, r)| RawExchange {
                kind: kind.into(),
                question_id: question_id.map(String::from),
                cluster,
                provider: self.provider.name().into(),
                model: self.config.model_name.clone(),
                reprompt: i > 0,
                response: r.clone(),
            })
            .collect()
    }

    pub fn synthesize_persona(
        &self,
        request: &PersonaSynthesisRequest,
    ) -> std::result::Result<PersonaProfile, LlmError> {
        let chat = ChatRequest {
            model: self.config.model_name.clone(),
            temperature: self.config.temperature,
            messages: self.prompts.persona_messages(request),
            kind: RequestKind::PersonaSynthesis {
                cluster: request.cluster,
            },
        };
        let label = format!("persona:{}", request.cluster);
        let parsed = self.complete_parsed(chat, &label, parse_persona)?;
        self.archive
            .lock()
            .expect("archive")
            .extend(self.exchanges("persona", None, request.cluster, &parsed.replies));
        let (name, description) = parsed.value;
        Ok(PersonaProfile {
            cluster: request.cluster,
            name,
            description,
            strengths: request.strengths().map(|q| q.question_id.clone()).collect(),
            weaknesses: request.weaknesses().map(|q| q.question_id.clone()).collect(),
            provenance: Provenance::LlmGenerated,
        })
    }

    fn simulate_raw(
        &self,
        question: &Question,
        persona: &PersonaProfile,
    ) -> std::result::Result<Parsed<RawOptionMap>, LlmError> {
        let chat = ChatRequest {
            model: self.config.model_name.clone(),
            temperature: self.config.temperature,
            messages: self.prompts.simulation_messages(question, persona),
            kind: RequestKind::Simulation {
                cluster: persona.cluster,
                persona_hash: persona.content_hash(),
                question_id: question.question_id.clone(),
                correct_option: question.correct_option,
            },
        };
        let label = format!("simulate:{}:{}", question.question_id, persona.cluster);
        self.complete_parsed(chat, &label, parse_option_map)
    }

    /// Asks the provider for one persona's option distribution on one item.
    pub fn simulate_item(
        &self,
        question: &Question,
        persona: &PersonaProfile,
    ) -> std::result::Result<RawOptionMap, LlmError> {
        let parsed = self.simulate_raw(question, persona)?;
        self.archive.lock().expect("archive").extend(self.exchanges(
            "simulation",
            Some(&question.question_id),
            persona.cluster,
            &parsed.replies,
        ));
        Ok(parsed.value)
    }

    pub fn cache_key_for(&self, question: &Question, persona: &PersonaProfile) -> String {
        cache_key(
            self.provider.name(),
            &self.config.model_name,
            &persona.content_hash(),
            &question.content_hash(),
            &self.prompts.simulation_hash(),
        )
    }

    /// Simulates every (item, persona) pair. Failures are collected per pair;
    /// the batch itself only fails on empty input or a failing thread pool.
    pub fn batch_simulate(
        &self,
        items: &[Question],
        personas: &[PersonaProfile],
        cache: Option<&SimulationCache>,
    ) -> Result<BatchOutcome> {
        if items.is_empty() || personas.is_empty() {
            return Err(Error::InvalidArgument(
                "batch simulation needs items and personas".into(),
            ));
        }
        let pairs: Vec<(&Question, &PersonaProfile)> = items
            .iter()
            .flat_map(|q| personas.iter().map(move |p| (q, p)))
            .collect();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.config.concurrency)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("cannot start worker pool: {e}")))?;
        type PairResult = (String, usize, std::result::Result<CacheEntry, LlmError>, bool);
        let done: Vec<PairResult> = pool.install(|| {
            pairs
                .par_iter()
                .map(|(q, p)| {
                    let key = self.cache_key_for(q, p);
                    if let Some(hit) = cache.and_then(|c| c.get(&key)) {
                        return (q.question_id.clone(), p.cluster, Ok(hit), true);
                    }
                    let res = self.simulate_raw(q, p).map(|parsed| CacheEntry {
                        probs: parsed.value,
                        exchanges: parsed.replies,
                    });
                    if let (Some(c), Ok(entry)) = (cache, &res) {
                        if let Err(e) = c.put(&key, entry) {
                            tracing::warn!(error = %e, "failed to write cache entry");
                        }
                    }
                    (q.question_id.clone(), p.cluster, res, false)
                })
                .collect()
        });

        let mut out = BatchOutcome::default();
        let mut done = done;
        done.sort_by(|a, b| (&a.0, a.1).cmp(&(&b.0, b.1)));
        for (qid, cluster, res, hit) in done {
            out.cache_hits += hit as usize;
            match res {
                Ok(entry) => {
                    out.exchanges
                        .extend(self.exchanges("simulation", Some(&qid), cluster, &entry.exchanges));
                    out.results.insert((qid, cluster), entry.probs);
                }
                Err(e) => {
                    let raw = match &e {
                        LlmError::Parse { raw, .. } => Some(raw.clone()),
                        _ => None,
                    };
                    out.failures.push(PairFailure {
                        question_id: qid,
                        cluster,
                        error: e.to_string(),
                        raw,
                    });
                }
            }
        }
        if !out.failures.is_empty() {
            tracing::warn!(failed = out.failures.len(), "some simulation pairs failed");
        }
        Ok(out)
    }
}
