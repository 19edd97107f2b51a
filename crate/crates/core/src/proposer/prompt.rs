use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Document;

/// Sent after every answer to ask for another batch.
pub const CONTINUATION_INSTRUCTION: &str =
    "Please keep generating 20 more triples using only the given entities from the entity list.";

/// Default in-context demonstration, in the `(subject, relation, object)` line format.
pub const DEFAULT_DEMONSTRATION: &str = include_str!("../../data/demonstration.txt");

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("demonstration text is empty")]
    EmptyDemonstration,
    #[error("previous answer is empty")]
    EmptyAnswer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        ChatMessage {
            role,
            content: content.into(),
        }
    }
}

/// A conversation to send: an optional system text plus alternating
/// user/assistant turns, starting and (when sent) ending with the user.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system_text: Option<String>,
    pub turns: Vec<ChatMessage>,
}

impl PromptBundle {
    pub fn messages(&self) -> Vec<ChatMessage> {
        let mut out = Vec::with_capacity(self.turns.len() + 1);
        if let Some(system) = &self.system_text {
            out.push(ChatMessage::new(Role::System, system.clone()));
        }
        out.extend(self.turns.iter().cloned());
        out
    }

    /// First turn is the user's and roles alternate.
    pub fn is_well_formed(&self) -> bool {
        self.turns.iter().enumerate().all(|(i, t)| {
            t.role
                == if i % 2 == 0 {
                    Role::User
                } else {
                    Role::Assistant
                }
        })
    }
}

pub fn build_initial_prompt(doc: &Document, demonstration: &str) -> Result<PromptBundle, PromptError> {
    build_initial_prompt_truncated(doc, demonstration, None)
}

/// Like [`build_initial_prompt`], keeping at most `max_tokens` document tokens.
pub fn build_initial_prompt_truncated(
    doc: &Document,
    demonstration: &str,
    max_tokens: Option<usize>,
) -> Result<PromptBundle, PromptError> {
    let demonstration = demonstration.trim();
    if demonstration.is_empty() {
        return Err(PromptError::EmptyDemonstration);
    }
    let mut context = doc.text();
    if let Some(limit) = max_tokens {
        let tokens: Vec<&str> = doc.sents.iter().flatten().map(String::as_str).collect();
        if tokens.len() > limit {
            log::warn!(
                "document `{}`: truncating {} tokens to {limit} for the prompt",
                doc.title,
                tokens.len()
            );
            context = tokens[..limit].join(" ");
        }
    }
    let entities = doc
        .vertex_set
        .iter()
        .map(|e| e.canonical_name())
        .collect::<Vec<_>>()
        .join("\n");
    let text = format!(
        "{demonstration}\n\n\
         Context:\n{context}\n\n\
         Entity list:\n{entities}\n\n\
         Generate at least 20 relation triples that hold in the context above, \
         one per line in the form (subject, relation, object), \
         using only the entities from the entity list."
    );
    Ok(PromptBundle {
        system_text: None,
        turns: vec![ChatMessage::new(Role::User, text)],
    })
}

pub fn build_continuation_prompt(previous: &PromptBundle, previous_answer: &str) -> Result<PromptBundle, PromptError> {
    if previous_answer.trim().is_empty() {
        return Err(PromptError::EmptyAnswer);
    }
    let mut next = previous.clone();
    next.turns.push(ChatMessage::new(Role::Assistant, previous_answer));
    next.turns.push(ChatMessage::new(Role::User, CONTINUATION_INSTRUCTION));
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::parse_corpus;
    use crate::registry::Registry;

    fn doc() -> Document {
        let json = r#"[{"title":"T","sents":[["Ann","met","Bo","."],["They","left","."]],
            "vertexSet":[[{"name":"Ann","sent_id":0,"pos":[0,1],"type":"PER"}],[{"name":"Bo","sent_id":0,"pos":[2,3],"type":"PER"}]],
            "labels":[]}]"#;
        parse_corpus(json, &Registry::builtin()).unwrap().documents.remove(0)
    }

    #[test]
    fn initial_prompt_layout() {
        let p = build_initial_prompt(&doc(), "DEMO").unwrap();
        assert_eq!(p.turns.len(), 1);
        let text = &p.turns[0].content;
        assert!(text.contains("at least 20"));
        assert!(text.contains("\nAnn\nBo\n"));
        let demo = text.find("DEMO").unwrap();
        let ctx = text.find("Ann met Bo . They left .").unwrap();
        let list = text.find("Entity list:").unwrap();
        assert!(demo < ctx && ctx < list);
    }

    #[test]
    fn empty_demonstration_is_an_error() {
        assert_eq!(build_initial_prompt(&doc(), "  \n"), Err(PromptError::EmptyDemonstration));
    }

    #[test]
    fn prompt_is_deterministic() {
        let d = doc();
        assert_eq!(
            build_initial_prompt(&d, DEFAULT_DEMONSTRATION).unwrap(),
            build_initial_prompt(&d, DEFAULT_DEMONSTRATION).unwrap()
        );
    }

    #[test]
    fn truncation_limits_context() {
        let p = build_initial_prompt_truncated(&doc(), "DEMO", Some(3)).unwrap();
        assert!(p.turns[0].content.contains("Context:\nAnn met Bo\n"));
    }

    #[test]
    fn continuation_turns_alternate() {
        let p0 = build_initial_prompt(&doc(), "DEMO").unwrap();
        let p1 = build_continuation_prompt(&p0, "(Ann, met, Bo)").unwrap();
        assert_eq!(p1.turns.len(), 3);
        assert_eq!(p1.turns[2].content, CONTINUATION_INSTRUCTION);
        let p2 = build_continuation_prompt(&p1, "(Bo, met, Ann)").unwrap();
        assert_eq!(p2.turns.len(), 5);
        assert!(p2.is_well_formed());
        assert_eq!(
            p2.turns.iter().map(|t| t.role).collect::<Vec<_>>(),
            [Role::User, Role::Assistant, Role::User, Role::Assistant, Role::User]
        );
        assert_eq!(build_continuation_prompt(&p0, " "), Err(PromptError::EmptyAnswer));
    }

    #[test]
    fn continuation_quotes_the_instruction() {
        assert_eq!(
            CONTINUATION_INSTRUCTION,
            "Please keep generating 20 more triples using only the given entities from the entity list."
        );
    }
}
