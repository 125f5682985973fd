//! Chat turns, the plain-text transcript and its parser.

use std::fmt::Write as _;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::generator::Answer;

pub const TRANSCRIPT_TITLE: &str = "Chat history";
const USER_HEADER: &str = "## User";
const ASSISTANT_HEADER: &str = "## Assistant";
const QUOTE: &str = "> ";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatTurn {
    pub role: Role,
    pub content: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<Answer>,
    pub timestamp: DateTime<Utc>,
}

/// Append-only list of turns, always a whole number of user/assistant pairs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChatHistory {
    turns: Vec<ChatTurn>,
}

impl ChatHistory {
    pub fn turns(&self) -> &[ChatTurn] {
        &self.turns
    }

    pub fn len(&self) -> usize {
        self.turns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.turns.is_empty()
    }

    /// Appends one question and its answer together.
    pub fn push_exchange(&mut self, question: &str, answer: Answer) -> [ChatTurn; 2] {
        let now = Utc::now();
        let pair = [
            ChatTurn {
                role: Role::User,
                content: question.to_string(),
                answer: None,
                timestamp: now,
            },
            ChatTurn {
                role: Role::Assistant,
                content: answer.text.clone(),
                answer: Some(answer),
                timestamp: now,
            },
        ];
        self.turns.extend(pair.iter().cloned());
        pair
    }

    /// Rebuilds a history from stored turns, rejecting sequences that do not alternate.
    pub fn from_turns(turns: Vec<ChatTurn>) -> Result<Self, String> {
        for (i, t) in turns.iter().enumerate() {
            let expected = if i % 2 == 0 { Role::User } else { Role::Assistant };
            if t.role != expected {
                return Err(format!("turn {i} should be {expected:?}, found {:?}", t.role));
            }
        }
        if !turns.len().is_multiple_of(2) {
            return Err("history ends with an unanswered question".into());
        }
        Ok(Self { turns })
    }
}

fn push_quoted(out: &mut String, text: &str) {
    for line in text.split('\n') {
        out.push_str(QUOTE);
        out.push_str(line);
        out.push('\n');
    }
}

/// Plain-text transcript. Content lines are quoted with "> " so the parser can recover
/// them exactly; timestamps are left out to keep the output stable.
pub fn export_transcript(session_id: &str, history: &ChatHistory) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{TRANSCRIPT_TITLE}");
    let _ = writeln!(out, "Session: {session_id}");
    let _ = writeln!(out, "Turns: {}", history.len());
    for turn in history.turns() {
        out.push('\n');
        out.push_str(match turn.role {
            Role::User => USER_HEADER,
            Role::Assistant => ASSISTANT_HEADER,
        });
        out.push('\n');
        push_quoted(&mut out, &turn.content);
        if let Some(answer) = &turn.answer {
            out.push_str("References:\n");
            if answer.references.is_empty() {
                out.push_str("(none)\n");
            }
            for r in &answer.references {
                let _ = writeln!(out, "[{}] {}", r.n, r.filename);
            }
            out.push_str("All relevant sources:\n");
            if answer.all_relevant_sources.is_empty() {
                out.push_str("(none)\n");
            }
            for s in &answer.all_relevant_sources {
                let _ = writeln!(out, "- {s}");
            }
            if !answer.warnings.is_empty() {
                out.push_str("Warnings:\n");
                for w in &answer.warnings {
                    let _ = writeln!(out, "- {w}");
                }
            }
        }
    }
    out
}

/// Recovers the ordered `(role, content)` pairs from [`export_transcript`] output.
pub fn parse_transcript(text: &str) -> Vec<(Role, String)> {
    let mut turns: Vec<(Role, Vec<&str>)> = Vec::new();
    let mut in_content = false;
    for line in text.split('\n') {
        if line == USER_HEADER || line == ASSISTANT_HEADER {
            let role = if line == USER_HEADER { Role::User } else { Role::Assistant };
            turns.push((role, Vec::new()));
            in_content = true;
            continue;
        }
        match (in_content, line.strip_prefix(QUOTE), turns.last_mut()) {
            (true, Some(content), Some((_, lines))) => lines.push(content),
            _ => in_content = false,
        }
    }
    turns.into_iter().map(|(role, lines)| (role, lines.join("\n"))).collect()
}

/// Terminal rendering of an answer with the section headers used across the UI.
pub fn render_answer(answer: &Answer) -> String {
    let mut out = String::new();
    out.push_str("Answer:\n");
    out.push_str(&answer.text);
    out.push_str("\n\nReferences\n");
    for r in &answer.references {
        let _ = writeln!(out, "[{}] {}", r.n, r.filename);
    }
    out.push_str("\nSource Documents:\n");
    for (i, e) in answer.source_excerpts.iter().enumerate() {
        let _ = writeln!(out, "({}) {} [score {:.3}]", i + 1, e.filename, e.score);
        let _ = writeln!(out, "{}", e.text);
    }
    out.push_str("\nAll relevant sources:\n");
    for s in &answer.all_relevant_sources {
        let _ = writeln!(out, "- {s}");
    }
    if !answer.warnings.is_empty() {
        out.push_str("\nWarnings:\n");
        for w in &answer.warnings {
            let _ = writeln!(out, "- {w}");
        }
    }
    out
}
