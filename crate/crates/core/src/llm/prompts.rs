//! Versioned prompt templates. Placeholders are written `{{name}}`.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::provider::{ChatMessage, Role};
use crate::data::{OptionKey, Question};
use crate::error::{Error, Result};
use crate::profiling::{PersonaProfile, PersonaSynthesisRequest, QuestionBlock};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSet {
    pub version: String,
    pub persona_system: String,
    pub persona_user: String,
    pub persona_instruction: String,
    pub simulation_system: String,
    pub simulation_user: String,
    pub reprompt: String,
}

impl Default for PromptSet {
    fn default() -> Self {
        Self {
            version: "v1".into(),
            persona_system: include_str!("../../prompts/v1/persona_system.txt").into(),
            persona_user: include_str!("../../prompts/v1/persona_user.txt").into(),
            persona_instruction: include_str!("../../prompts/v1/persona_instruction.txt").into(),
            simulation_system: include_str!("../../prompts/v1/simulation_system.txt").into(),
            simulation_user: include_str!("../../prompts/v1/simulation_user.txt").into(),
            reprompt: include_str!("../../prompts/v1/reprompt.txt").into(),
        }
    }
}

pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (k, v) in vars {
        out = out.replace(&format!("{{{{{k}}}}}"), v);
    }
    out
}

impl PromptSet {
    /// Loads a template directory laid out like `prompts/v1/`. The directory
    /// name becomes the version.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let read = |name: &str| {
            let p = dir.join(name);
            fs::read_to_string(&p).map_err(|e| Error::io(&p, e))
        };
        Ok(Self {
            version: dir
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
            persona_system: read("persona_system.txt")?,
            persona_user: read("persona_user.txt")?,
            persona_instruction: read("persona_instruction.txt")?,
            simulation_system: read("simulation_system.txt")?,
            simulation_user: read("simulation_user.txt")?,
            reprompt: read("reprompt.txt")?,
        })
    }

    /// Hash of the simulation templates; part of every cache key.
    pub fn simulation_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.simulation_system.as_bytes());
        h.update([0]);
        h.update(self.simulation_user.as_bytes());
        h.update([0]);
        h.update(self.reprompt.as_bytes());
        hex::encode(h.finalize())
    }

    pub fn persona_messages(&self, request: &PersonaSynthesisRequest) -> Vec<ChatMessage> {
        let fmt_blocks = |blocks: Vec<&QuestionBlock>| {
            blocks
                .iter()
                .map(|b| {
                    let others = b
                        .accuracy_by_cluster
                        .iter()
                        .enumerate()
                        .map(|(c, a)| format!("group {}: {:.0}%", c + 1, a * 100.0))
                        .collect::<Vec<_>>()
                        .join(", ");
                    format!(
                        "- [{}] ({}) {}\n  this group: {:.0}% correct; deviation {:+.3}; all groups: {}",
                        b.question_id,
                        b.topic.label(),
                        b.text.trim(),
                        b.cluster_accuracy * 100.0,
                        b.delta,
                        others
                    )
                })
                .collect::<Vec<_>>()
                .join("\n")
        };
        let strengths = fmt_blocks(request.strengths().collect());
        let weaknesses = fmt_blocks(request.weaknesses().collect());
        let cluster = request.cluster.to_string();
        let n = request.n_clusters.to_string();
        let user = render(
            &self.persona_user,
            &[
                ("cluster", &cluster),
                ("n_clusters", &n),
                ("strengths", &strengths),
                ("weaknesses", &weaknesses),
                ("instruction", request.instruction.trim()),
            ],
        );
        vec![
            ChatMessage::new(Role::System, self.persona_system.trim()),
            ChatMessage::new(Role::User, user.trim()),
        ]
    }

    pub fn simulation_messages(&self, question: &Question, persona: &PersonaProfile) -> Vec<ChatMessage> {
        let system = render(
            &self.simulation_system,
            &[
                ("persona_name", &persona.name),
                ("persona_description", &persona.description),
            ],
        );
        let o = |k: OptionKey| question.options.get(k);
        let user = render(
            &self.simulation_user,
            &[
                ("question_text", question.text.trim()),
                ("option_a", o(OptionKey::A)),
                ("option_b", o(OptionKey::B)),
                ("option_c", o(OptionKey::C)),
                ("option_d", o(OptionKey::D)),
            ],
        );
        vec![
            ChatMessage::new(Role::System, system.trim()),
            ChatMessage::new(Role::User, user.trim()),
        ]
    }

    pub fn reprompt_message(&self, error: &str) -> ChatMessage {
        ChatMessage::new(Role::User, render(&self.reprompt, &[("error", error)]).trim())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_replaces_every_occurrence() {
        assert_eq!(render("{{a}}-{{b}}-{{a}}", &[("a", "x"), ("b", "y")]), "x-y-x");
    }

    #[test]
    fn simulation_prompt_asks_for_estimates_not_solutions() {
        let p = PromptSet::default();
        assert!(p.simulation_user.contains("Do not simply work out the correct answer"));
        assert!(p.simulation_user.contains("Estimate"));
        assert!(p
            .simulation_user
            .contains(r#"{"A": <p>, "B": <p>, "C": <p>, "D": <p>}"#));
        assert!(p.simulation_system.contains("{{persona_name}}"));
        assert!(p.simulation_system.contains("{{persona_description}}"));
    }
}
