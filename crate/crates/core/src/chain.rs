//! Action chain data model, prompt construction and chain markup.
//!
//! A chain is the LLM's decomposition of a question into ordered nodes. Each
//! node names the action that will retrieve evidence for it, the
//! sub-question, and either a guess answer or the unsolved marker.
//!
//! Markup (UTF-8, LF line endings), one block per node in ascending order:
//!
//! ```text
//! [Node 1]
//! Action: web-querying
//! Sub: Which blockchain introduced smart contracts?
//! [Guess Answer] Ethereum
//! [Node 2]
//! Action: data-analyzing
//! Sub: What is the current ETH price?
//! [Unsolved Sub]
//! ```

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actions::RetrievedItem;
use crate::scoring::VerificationOutcome;

pub const GUESS_MARKER: &str = "[Guess Answer]";
pub const UNSOLVED_MARKER: &str = "[Unsolved Sub]";
pub const FINAL_MARKER: &str = "[Final Content]";
pub const CHAIN_PROMPT_OPENING: &str = "Construct an action reasoning chain for";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ChainError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid action catalog: {0}")]
    InvalidCatalog(String),
    #[error("could not parse action chain: {reason}")]
    Parse { reason: String, raw: String },
    #[error("node {0} has no resolved answer; chain has not been processed")]
    NotProcessed(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActionType {
    WebQuery,
    KnowledgeEncode,
    DataAnalyze,
}

impl ActionType {
    pub const ALL: [ActionType; 3] = [
        ActionType::WebQuery,
        ActionType::KnowledgeEncode,
        ActionType::DataAnalyze,
    ];

    /// Name used in the chain markup.
    pub fn markup_name(self) -> &'static str {
        match self {
            ActionType::WebQuery => "web-querying",
            ActionType::KnowledgeEncode => "knowledge-encoding",
            ActionType::DataAnalyze => "data-analyzing",
        }
    }

    pub fn default_description(self) -> &'static str {
        match self {
            ActionType::WebQuery => {
                "searches the web for real-time or widely published facts and reads the most relevant pages"
            }
            ActionType::KnowledgeEncode => {
                "looks up the local domain knowledge base of documents that were chunked and embedded ahead of time"
            }
            ActionType::DataAnalyze => {
                "reads real-valued records (prices, volumes, statistics) from the configured tabular data source"
            }
        }
    }
}

impl fmt::Display for ActionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.markup_name())
    }
}

impl FromStr for ActionType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let normalized: String = s
            .trim()
            .chars()
            .map(|c| match c {
                '_' | ' ' => '-',
                c => c.to_ascii_lowercase(),
            })
            .collect();
        ActionType::ALL
            .into_iter()
            .find(|a| a.markup_name() == normalized)
            .ok_or_else(|| format!("unknown action `{}`", s.trim()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionNode {
    /// 1-based position in the chain.
    pub index: usize,
    pub action: ActionType,
    pub sub_question: String,
    pub missing_flag: bool,
    pub guess_answer: Option<String>,
    #[serde(default)]
    pub evidence: Vec<RetrievedItem>,
    #[serde(default)]
    pub verification: Option<VerificationOutcome>,
    #[serde(default)]
    pub resolved_answer: Option<String>,
}

impl ActionNode {
    /// Creates an unprocessed node. A blank guess is treated as unsolved.
    pub fn new(
        index: usize,
        action: ActionType,
        sub_question: impl Into<String>,
        guess_answer: Option<String>,
    ) -> Self {
        let guess_answer = guess_answer
            .map(|g| g.trim().to_string())
            .filter(|g| !g.is_empty());
        ActionNode {
            index,
            action,
            sub_question: sub_question.into(),
            missing_flag: guess_answer.is_none(),
            guess_answer,
            evidence: Vec::new(),
            verification: None,
            resolved_answer: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionChain {
    pub question: String,
    pub nodes: Vec<ActionNode>,
}

impl ActionChain {
    pub fn new(question: impl Into<String>, nodes: Vec<ActionNode>) -> Result<Self, ChainError> {
        let question = question.into();
        if question.trim().is_empty() {
            return Err(ChainError::InvalidInput("question is empty".into()));
        }
        if nodes.is_empty() {
            return Err(ChainError::InvalidInput("chain has no nodes".into()));
        }
        for (pos, node) in nodes.iter().enumerate() {
            if node.index != pos + 1 {
                return Err(ChainError::InvalidInput(format!(
                    "node at position {} has index {}",
                    pos + 1,
                    node.index
                )));
            }
            if node.sub_question.trim().is_empty() {
                return Err(ChainError::InvalidInput(format!(
                    "node {} has an empty sub-question",
                    node.index
                )));
            }
            if node.missing_flag != node.guess_answer.is_none() {
                return Err(ChainError::InvalidInput(format!(
                    "node {} missing flag disagrees with its guess answer",
                    node.index
                )));
            }
        }
        Ok(ActionChain { question, nodes })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::User, content: content.into() }
    }
}

/// A rendered prompt. `text` is the user turn; `role_messages` is what gets
/// sent to the chat backend.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptText {
    pub text: String,
    pub role_messages: Vec<ChatMessage>,
}

pub type ActionCatalog = Vec<(ActionType, String)>;

pub fn default_catalog() -> ActionCatalog {
    ActionType::ALL
        .into_iter()
        .map(|a| (a, a.default_description().to_string()))
        .collect()
}

const CHAIN_SYSTEM: &str = "You plan how to answer questions. You never answer the question directly; \
you break it into sub-questions and say which action will check each one.";

pub fn build_chain_prompt(question: &str, catalog: &[(ActionType, String)]) -> Result<PromptText, ChainError> {
    if question.trim().is_empty() {
        return Err(ChainError::InvalidInput("question is empty".into()));
    }
    for action in ActionType::ALL {
        let count = catalog.iter().filter(|(a, _)| *a == action).count();
        match count {
            1 => {}
            0 => return Err(ChainError::InvalidCatalog(format!("action {action} is missing"))),
            _ => return Err(ChainError::InvalidCatalog(format!("action {action} appears {count} times"))),
        }
    }

    let mut text = format!("{CHAIN_PROMPT_OPENING} the following question.\n\nQuestion: {question}\n\n");
    text.push_str("Available actions:\n");
    for (action, description) in catalog {
        text.push_str(&format!("- {}: {}\n", action.markup_name(), description.trim()));
    }
    text.push_str(
        "\nSplit the question into the sub-questions needed to answer it and assign one action to each.\n\
         If you know the answer to a sub-question, write it on a line starting with \"[Guess Answer]\". \
         If you do not know it, write \"[Unsolved Sub]\" instead.\n\
         Do not answer the original question.\n\n\
         Output format, repeated for every node with i counting up from 1:\n\
         [Node i]\n\
         Action: <web-querying|knowledge-encoding|data-analyzing>\n\
         Sub: <sub-question>\n\
         [Guess Answer] <answer>   or   [Unsolved Sub]\n",
    );
    Ok(PromptText {
        role_messages: vec![ChatMessage::system(CHAIN_SYSTEM), ChatMessage::user(text.clone())],
        text,
    })
}

/// Appended to the user turn when the first chain reply could not be parsed.
pub const FORMAT_REMINDER: &str = "\nYour previous reply did not follow the output format. \
Reply with node blocks only, exactly as specified above.";

pub fn with_format_reminder(prompt: &PromptText) -> PromptText {
    let text = format!("{}{}", prompt.text, FORMAT_REMINDER);
    let mut role_messages = prompt.role_messages.clone();
    if let Some(last) = role_messages.iter_mut().rev().find(|m| m.role == Role::User) {
        last.content = text.clone();
    }
    PromptText { text, role_messages }
}

pub fn build_final_prompt(processed: &ActionChain, question: &str) -> Result<PromptText, ChainError> {
    if question.trim().is_empty() {
        return Err(ChainError::InvalidInput("question is empty".into()));
    }
    let mut text = format!("Question: {question}\n\nThe question was broken into sub-questions. Their checked answers are:\n");
    for node in &processed.nodes {
        let answer = node
            .resolved_answer
            .as_deref()
            .ok_or(ChainError::NotProcessed(node.index))?;
        text.push_str(&format!(
            "{}. Sub: {}\n   Answer: {}\n",
            node.index, node.sub_question, answer
        ));
    }
    text.push_str(
        "\nThe answers above include the newest retrieved information and take priority over what you remember.\n\
         Using them, answer the question. Begin your reply with \"[Final Content]\".\n",
    );
    Ok(PromptText {
        role_messages: vec![
            ChatMessage::system("You answer questions using the verified reasoning chain you are given."),
            ChatMessage::user(text.clone()),
        ],
        text,
    })
}

/// Strips every leading final marker and surrounding whitespace.
pub fn strip_final_marker(reply: &str) -> &str {
    let mut s = reply.trim();
    while let Some(rest) = s.strip_prefix(FINAL_MARKER) {
        s = rest.trim_start_matches([':', ' ', '\t', '\n', '\r']).trim();
    }
    s
}

pub fn serialize_chain(chain: &ActionChain) -> String {
    let mut out = String::new();
    for node in &chain.nodes {
        out.push_str(&format!("[Node {}]\n", node.index));
        out.push_str(&format!("Action: {}\n", node.action.markup_name()));
        out.push_str(&format!("Sub: {}\n", node.sub_question));
        match &node.guess_answer {
            Some(g) => out.push_str(&format!("{GUESS_MARKER} {g}\n")),
            None => out.push_str(&format!("{UNSOLVED_MARKER}\n")),
        }
    }
    out
}

#[derive(Default)]
struct PartialNode {
    action: Option<ActionType>,
    sub: Option<String>,
    answer: Option<Option<String>>,
}

fn node_header(line: &str) -> Option<&str> {
    line.strip_prefix("[Node ")?.strip_suffix(']')
}

fn field<'a>(line: &'a str, label: &str) -> Option<&'a str> {
    let head = line.get(..label.len())?;
    if head.eq_ignore_ascii_case(label) {
        Some(line[label.len()..].trim())
    } else {
        None
    }
}

pub fn parse_chain(llm_output: &str, question: &str) -> Result<ActionChain, ChainError> {
    let parse_err = |reason: String| ChainError::Parse { reason, raw: llm_output.to_string() };
    if llm_output.trim().is_empty() {
        return Err(parse_err("model output is empty".into()));
    }

    let mut nodes: Vec<ActionNode> = Vec::new();
    let mut current: Option<PartialNode> = None;

    // Returns false when the block is incomplete, which ends parsing.
    let finish = |partial: PartialNode, nodes: &mut Vec<ActionNode>| -> bool {
        match partial {
            PartialNode { action: Some(action), sub: Some(sub), answer: Some(answer) } => {
                nodes.push(ActionNode::new(nodes.len() + 1, action, sub, answer));
                true
            }
            _ => false,
        }
    };

    for (lineno, raw_line) in llm_output.lines().enumerate() {
        let line = raw_line.trim();
        if line.is_empty() {
            continue;
        }
        if node_header(line).is_some() {
            if let Some(partial) = current.take() {
                if !finish(partial, &mut nodes) {
                    break;
                }
            }
            current = Some(PartialNode::default());
            continue;
        }
        let Some(partial) = current.as_mut() else {
            continue;
        };
        if let Some(name) = field(line, "Action:") {
            let action = name
                .parse::<ActionType>()
                .map_err(|e| parse_err(format!("line {}: {e}: `{line}`", lineno + 1)))?;
            partial.action = Some(action);
        } else if let Some(sub) = field(line, "Sub:") {
            if !sub.is_empty() {
                partial.sub = Some(sub.to_string());
            }
        } else if line.starts_with(GUESS_MARKER) || line.starts_with(UNSOLVED_MARKER) {
            let has_guess = line.contains(GUESS_MARKER);
            let has_unsolved = line.contains(UNSOLVED_MARKER);
            if (has_guess && has_unsolved) || partial.answer.is_some() {
                return Err(parse_err(format!(
                    "line {}: node carries both a guess answer and the unsolved marker",
                    lineno + 1
                )));
            }
            partial.answer = Some(if has_guess {
                Some(line[GUESS_MARKER.len()..].trim().to_string()).filter(|g| !g.is_empty())
            } else {
                None
            });
        }
    }
    if let Some(partial) = current.take() {
        finish(partial, &mut nodes);
    }

    if nodes.is_empty() {
        return Err(parse_err("no well-formed node blocks found".into()));
    }
    ActionChain::new(question, nodes)
}
