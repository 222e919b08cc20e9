use std::collections::BTreeMap;
use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::OptionKey;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        Self {
            role,
            content: content.into(),
        }
    }
}

/// What a request is for. Remote providers ignore this; the mock provider
/// answers from it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RequestKind {
    PersonaSynthesis {
        cluster: usize,
    },
    Simulation {
        cluster: usize,
        persona_hash: String,
        question_id: String,
        correct_option: OptionKey,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub model: String,
    pub temperature: f64,
    pub messages: Vec<ChatMessage>,
    pub kind: RequestKind,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProviderError {
    /// Worth retrying: timeouts, connection failures, 429 and 5xx responses.
    #[error("transient provider failure: {0}")]
    Transient(String),
    #[error("provider rejected the request: {0}")]
    Permanent(String),
}

pub trait Provider: Send + Sync {
    /// Identifier used in cache keys and archives.
    fn name(&self) -> &str;

    fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError>;
}

/// Correct-option probability per `(one-based cluster, question_id)`.
pub type MockProfiles = BTreeMap<usize, BTreeMap<String, f64>>;

/// Offline provider whose answers are a pure function of the seed and the
/// request identity (persona + question).
#[derive(Debug)]
pub struct MockProvider {
    seed: u64,
    profiles: Option<MockProfiles>,
    calls: AtomicUsize,
}

const MOCK_NAMES: [&str; 8] = [
    "Careful Checker",
    "Pattern Spotter",
    "Quick Guesser",
    "Step Follower",
    "Visual Thinker",
    "Rule Recaller",
    "Estimator",
    "Persistent Solver",
];

impl MockProvider {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            profiles: None,
            calls: AtomicUsize::new(0),
        }
    }

    /// Answers simulation requests with the supplied correct-option
    /// probability when the (cluster, question) pair is present.
    pub fn with_profiles(seed: u64, profiles: MockProfiles) -> Self {
        Self {
            seed,
            profiles: Some(profiles),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn rng(&self, parts: &[&[u8]]) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        for p in parts {
            h.update((p.len() as u64).to_le_bytes());
            h.update(p);
        }
        let digest: [u8; 32] = h.finalize().into();
        ChaCha8Rng::from_seed(digest)
    }

    fn persona(&self, cluster: usize) -> String {
        let mut rng = self.rng(&[b"persona", &cluster.to_le_bytes()]);
        let name = MOCK_NAMES[rng.random_range(0..MOCK_NAMES.len())];
        serde_json::json!({
            "name": format!("The {name} ({cluster})"),
            "description": format!(
                "Mock learner profile for group {cluster}. Handles familiar routines but \
                 loses track when a question needs an extra reasoning step."
            ),
        })
        .to_string()
    }

    fn simulation(&self, cluster: usize, persona_hash: &str, question_id: &str, correct: OptionKey) -> String {
        let mut rng = self.rng(&[
            b"simulate",
            &cluster.to_le_bytes(),
            persona_hash.as_bytes(),
            question_id.as_bytes(),
        ]);
        let keyed = self
            .profiles
            .as_ref()
            .and_then(|p| p.get(&cluster))
            .and_then(|p| p.get(question_id))
            .copied();
        let mut probs = [0.0; 4];
        match keyed {
            Some(p_correct) => {
                let p_correct = p_correct.clamp(0.0, 1.0);
                let w: Vec<f64> = (0..3).map(|_| rng.random_range(0.2..1.0)).collect();
                let total: f64 = w.iter().sum();
                let mut j = 0;
                for key in OptionKey::ALL {
                    if key == correct {
                        probs[key.index()] = p_correct;
                    } else {
                        probs[key.index()] = (1.0 - p_correct) * w[j] / total;
                        j += 1;
                    }
                }
            }
            None => {
                for p in probs.iter_mut() {
                    *p = rng.random_range(0.05..1.0);
                }
            }
        }
        let map: BTreeMap<String, f64> = OptionKey::ALL
            .iter()
            .map(|k| (k.to_string(), probs[k.index()]))
            .collect();
        serde_json::to_string(&map).expect("map serializes")
    }
}

impl Provider for MockProvider {
    fn name(&self) -> &str {
        "mock"
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(match &request.kind {
            RequestKind::PersonaSynthesis { cluster } => self.persona(*cluster),
            RequestKind::Simulation {
                cluster,
                persona_hash,
                question_id,
                correct_option,
            } => self.simulation(*cluster, persona_hash, question_id, *correct_option),
        })
    }
}

/// Chat-completions style JSON endpoint.
pub struct HttpProvider {
    client: reqwest::blocking::Client,
    endpoint: String,
    api_key: Option<String>,
}

impl fmt::Debug for HttpProvider {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HttpProvider")
            .field("endpoint", &self.endpoint)
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .finish()
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    temperature: f64,
    messages: &'a [ChatMessage],
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireMessage {
    content: String,
}

impl HttpProvider {
    pub fn new(endpoint: impl Into<String>, api_key: Option<String>, timeout: Duration) -> Result<Self, ProviderError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| ProviderError::Permanent(format!("cannot build HTTP client: {e}")))?;
        Ok(Self {
            client,
            endpoint: endpoint.into(),
            api_key,
        })
    }
}

impl Provider for HttpProvider {
    fn name(&self) -> &str {
        "http_api"
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        let body = WireRequest {
            model: &request.model,
            temperature: request.temperature,
            messages: &request.messages,
        };
        let mut builder = self.client.post(&self.endpoint).json(&body);
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let resp = builder.send().map_err(|e| {
            // reqwest errors can embed the URL but never headers.
            ProviderError::Transient(format!("request failed: {e}"))
        })?;
        let status = resp.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(ProviderError::Transient(format!("HTTP {status}")));
        }
        if !status.is_success() {
            return Err(ProviderError::Permanent(format!("HTTP {status}")));
        }
        let text = resp
            .text()
            .map_err(|e| ProviderError::Transient(format!("reading body failed: {e}")))?;
        let parsed: WireResponse = serde_json::from_str(&text)
            .map_err(|e| ProviderError::Permanent(format!("unexpected response shape: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| ProviderError::Permanent("response has no choices".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sim_request(cluster: usize, q: &str) -> ChatRequest {
        ChatRequest {
            model: "m".into(),
            temperature: 0.0,
            messages: vec![],
            kind: RequestKind::Simulation {
                cluster,
                persona_hash: "abc".into(),
                question_id: q.into(),
                correct_option: OptionKey::B,
            },
        }
    }

    #[test]
    fn mock_is_a_pure_function() {
        let a = MockProvider::new(9);
        let b = MockProvider::new(9);
        let r = sim_request(2, "q1");
        assert_eq!(a.complete(&r).unwrap(), b.complete(&r).unwrap());
        assert_ne!(a.complete(&r).unwrap(), a.complete(&sim_request(3, "q1")).unwrap());
        assert_ne!(a.complete(&r).unwrap(), MockProvider::new(10).complete(&r).unwrap());
        assert_eq!(a.calls(), 4);
    }

    #[test]
    fn keyed_mock_reports_profile_probability() {
        let mut profiles = MockProfiles::new();
        profiles.entry(1).or_default().insert("q1".into(), 0.7);
        let m = MockProvider::with_profiles(1, profiles);
        let out: BTreeMap<String, f64> = serde_json::from_str(&m.complete(&sim_request(1, "q1")).unwrap()).unwrap();
        assert_eq!(out["B"], 0.7);
        assert!((out.values().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn debug_redacts_key() {
        let p = HttpProvider::new("http://localhost:1", Some("sk-secret".into()), Duration::from_secs(1)).unwrap();
        let s = format!("{p:?}");
        assert!(!s.contains("sk-secret"));
    }
}
