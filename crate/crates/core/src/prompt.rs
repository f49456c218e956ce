//! Prompt construction for the three generated tasks, plus context-budget truncation.

use alloc::borrow::ToOwned;
use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dialogue::{
    render_action_catalog, DialogueSession, FunctionCall, Observation, Role, TurnRecord,
};
use crate::schema::{render_spec, FunctionRegistry, FunctionSpec};

/// Context window the prompts must fit in, in tokens.
pub const DEFAULT_CONTEXT_TOKENS: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Task {
    #[serde(rename = "ds")]
    DomainSelection,
    #[serde(rename = "dst")]
    StateTracking,
    #[serde(rename = "rg")]
    ResponseGeneration,
}

impl Task {
    pub const ALL: [Task; 3] = [
        Task::DomainSelection,
        Task::StateTracking,
        Task::ResponseGeneration,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Task::DomainSelection => "ds",
            Task::StateTracking => "dst",
            Task::ResponseGeneration => "rg",
        }
    }

    /// Placeholders a template for this task must use, each at least once, and no others.
    pub fn placeholders(self) -> &'static [&'static str] {
        match self {
            Task::DomainSelection => &["functions"],
            Task::StateTracking => &["function_spec"],
            Task::ResponseGeneration => &["action_catalog", "function_call"],
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("{task} template: unknown placeholder `{{{name}}}`")]
    UnknownPlaceholder { task: Task, name: String },
    #[error("{task} template: missing placeholder `{{{name}}}`")]
    MissingPlaceholder { task: Task, name: String },
    #[error("{task} template: unbalanced brace at byte {at}")]
    UnbalancedBrace { task: Task, at: usize },
    #[error("budget of {budget} tokens cannot hold the {required} tokens of mandatory messages")]
    BudgetTooSmall { budget: usize, required: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Text(String),
    Slot(String),
}

/// Instruction text with `{name}` placeholders; `{{` and `}}` are literal braces.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    task: Task,
    segments: Vec<Segment>,
}

impl PromptTemplate {
    pub fn parse(task: Task, text: &str) -> Result<Self, PromptError> {
        let text = text.strip_suffix('\n').unwrap_or(text);
        let mut segments = Vec::new();
        let mut buf = String::new();
        let bytes = text.as_bytes();
        let mut i = 0;
        while i < bytes.len() {
            match bytes[i] {
                b'{' if bytes.get(i + 1) == Some(&b'{') => {
                    buf.push('{');
                    i += 2;
                }
                b'}' if bytes.get(i + 1) == Some(&b'}') => {
                    buf.push('}');
                    i += 2;
                }
                b'{' => {
                    let close = text[i..]
                        .find('}')
                        .ok_or(PromptError::UnbalancedBrace { task, at: i })?;
                    let name = &text[i + 1..i + close];
                    if !task.placeholders().contains(&name) {
                        return Err(PromptError::UnknownPlaceholder {
                            task,
                            name: name.to_string(),
                        });
                    }
                    if !buf.is_empty() {
                        segments.push(Segment::Text(core::mem::take(&mut buf)));
                    }
                    segments.push(Segment::Slot(name.to_string()));
                    i += close + 1;
                }
                b'}' => return Err(PromptError::UnbalancedBrace { task, at: i }),
                _ => {
                    let ch = text[i..].chars().next().expect("in bounds");
                    buf.push(ch);
                    i += ch.len_utf8();
                }
            }
        }
        if !buf.is_empty() {
            segments.push(Segment::Text(buf));
        }
        let used: BTreeSet<&str> = segments
            .iter()
            .filter_map(|s| match s {
                Segment::Slot(n) => Some(n.as_str()),
                Segment::Text(_) => None,
            })
            .collect();
        for name in task.placeholders() {
            if !used.contains(name) {
                return Err(PromptError::MissingPlaceholder {
                    task,
                    name: name.to_string(),
                });
            }
        }
        Ok(PromptTemplate { task, segments })
    }

    pub fn task(&self) -> Task {
        self.task
    }

    /// Substitutes placeholder values; `values` must cover every placeholder of the task.
    pub fn render(&self, values: &[(&str, &str)]) -> String {
        let mut out = String::new();
        for seg in &self.segments {
            match seg {
                Segment::Text(t) => out.push_str(t),
                Segment::Slot(name) => {
                    let v = values
                        .iter()
                        .find(|(k, _)| k == name)
                        .map(|(_, v)| *v)
                        .unwrap_or_default();
                    out.push_str(v);
                }
            }
        }
        out
    }
}

/// Instruction templates for the three generated tasks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Templates {
    pub ds: PromptTemplate,
    pub dst: PromptTemplate,
    pub rg: PromptTemplate,
}

impl Default for Templates {
    fn default() -> Self {
        Templates::from_texts(
            include_str!("../templates/ds.txt"),
            include_str!("../templates/dst.txt"),
            include_str!("../templates/rg.txt"),
        )
        .expect("bundled templates are valid")
    }
}

impl Templates {
    pub fn from_texts(ds: &str, dst: &str, rg: &str) -> Result<Self, PromptError> {
        Ok(Templates {
            ds: PromptTemplate::parse(Task::DomainSelection, ds)?,
            dst: PromptTemplate::parse(Task::StateTracking, dst)?,
            rg: PromptTemplate::parse(Task::ResponseGeneration, rg)?,
        })
    }
}

/// Messages sent to the model: instruction, whole history turns, and the current block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatPayload {
    pub system: TurnRecord,
    pub history: Vec<Vec<TurnRecord>>,
    pub current: Vec<TurnRecord>,
}

impl ChatPayload {
    pub fn messages(&self) -> impl Iterator<Item = &TurnRecord> {
        core::iter::once(&self.system)
            .chain(self.history.iter().flatten())
            .chain(self.current.iter())
    }

    pub fn roles(&self) -> Vec<Role> {
        self.messages().map(|m| m.role).collect()
    }

    pub fn len(&self) -> usize {
        1 + self.history.iter().map(Vec::len).sum::<usize>() + self.current.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Human-readable dump, one `<|role|>` header per message; used for golden files.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for m in self.messages() {
            out.push_str(&format!("<|{}|>\n{}\n", m.role, m.content));
        }
        out
    }
}

/// The domain-selection instruction followed by every function spec as a JSON list.
pub fn build_ds_prompt(
    templates: &Templates,
    registry: &FunctionRegistry,
    session: &DialogueSession,
    current_user: &str,
) -> ChatPayload {
    let system = templates.ds.render(&[("functions", &registry.to_json())]);
    let history = session
        .turns
        .iter()
        .map(|t| {
            alloc::vec![
                TurnRecord::new(Role::User, t.user.clone()),
                TurnRecord::new(Role::Domain, t.outcome.selected.clone()),
                TurnRecord::new(Role::Assistant, t.outcome.frame.response.clone()),
            ]
        })
        .collect();
    ChatPayload {
        system: TurnRecord::new(Role::System, system),
        history,
        current: alloc::vec![TurnRecord::new(Role::User, current_user)],
    }
}

/// The state-tracking instruction with the selected spec; history carries prior calls.
pub fn build_dst_prompt(
    templates: &Templates,
    selected: &FunctionSpec,
    session: &DialogueSession,
    current_user: &str,
) -> ChatPayload {
    let system = templates
        .dst
        .render(&[("function_spec", &render_spec(selected))]);
    let history = session
        .turns
        .iter()
        .map(|t| {
            alloc::vec![
                TurnRecord::new(Role::User, t.user.clone()),
                TurnRecord::new(Role::Function, t.outcome.call.to_json()),
                TurnRecord::new(Role::Assistant, t.outcome.frame.response.clone()),
            ]
        })
        .collect();
    ChatPayload {
        system: TurnRecord::new(Role::System, system),
        history,
        current: alloc::vec![TurnRecord::new(Role::User, current_user)],
    }
}

/// The response-generation instruction with the action catalog and current call; history
/// carries calls, observations and action-tagged responses, and the current block ends with
/// this turn's call and observation.
pub fn build_rg_prompt(
    templates: &Templates,
    call: &FunctionCall,
    observation: &Observation,
    session: &DialogueSession,
    current_user: &str,
) -> ChatPayload {
    let call_json = call.to_json();
    let catalog = render_action_catalog();
    let system = templates
        .rg
        .render(&[("action_catalog", &catalog), ("function_call", &call_json)]);
    let history = session
        .turns
        .iter()
        .map(|t| {
            alloc::vec![
                TurnRecord::new(Role::User, t.user.clone()),
                TurnRecord::new(Role::Function, t.outcome.call.to_json()),
                TurnRecord::new(Role::Observation, t.outcome.observation.render()),
                TurnRecord::new(Role::Assistant, t.outcome.frame.render()),
            ]
        })
        .collect();
    ChatPayload {
        system: TurnRecord::new(Role::System, system),
        history,
        current: alloc::vec![
            TurnRecord::new(Role::User, current_user),
            TurnRecord::new(Role::Function, call_json),
            TurnRecord::new(Role::Observation, observation.render()),
        ],
    }
}

/// Checks that a payload's role sequence matches its task's context grammar.
pub fn check_role_grammar(task: Task, roles: &[Role]) -> Result<(), String> {
    let (group, tail): (&[Role], &[Role]) = match task {
        Task::DomainSelection => (&[Role::User, Role::Domain, Role::Assistant], &[Role::User]),
        Task::StateTracking => (
            &[Role::User, Role::Function, Role::Assistant],
            &[Role::User],
        ),
        Task::ResponseGeneration => (
            &[
                Role::User,
                Role::Function,
                Role::Observation,
                Role::Assistant,
            ],
            &[Role::User, Role::Function, Role::Observation],
        ),
    };
    let Some((first, rest)) = roles.split_first() else {
        return Err("empty payload".to_owned());
    };
    if *first != Role::System {
        return Err(format!("first message is {first}, expected system"));
    }
    if rest.len() < tail.len() || (rest.len() - tail.len()) % group.len() != 0 {
        return Err(format!(
            "{} messages after system do not form whole turns",
            rest.len()
        ));
    }
    let (body, end) = rest.split_at(rest.len() - tail.len());
    for (i, chunk) in body.chunks(group.len()).enumerate() {
        if chunk != group {
            return Err(format!("history turn {} has roles {:?}", i + 1, chunk));
        }
    }
    if end != tail {
        return Err(format!("final block has roles {end:?}"));
    }
    Ok(())
}

/// Counts tokens in a message body.
pub trait TokenCounter {
    fn count(&self, text: &str) -> usize;
}

/// Four characters per token, rounded up.
#[derive(Debug, Clone, Copy, Default)]
pub struct CharHeuristic;

impl TokenCounter for CharHeuristic {
    fn count(&self, text: &str) -> usize {
        text.chars().count().div_ceil(4)
    }
}

pub fn estimate_tokens(payload: &ChatPayload, counter: &dyn TokenCounter) -> usize {
    payload.messages().map(|m| counter.count(&m.content)).sum()
}

/// Drops the oldest whole history turns until the payload fits `budget`. The system
/// message and the current block are always kept.
pub fn truncate(
    payload: &ChatPayload,
    budget: usize,
    counter: &dyn TokenCounter,
) -> Result<ChatPayload, PromptError> {
    let required = counter.count(&payload.system.content)
        + payload
            .current
            .iter()
            .map(|m| counter.count(&m.content))
            .sum::<usize>();
    if required > budget {
        return Err(PromptError::BudgetTooSmall { budget, required });
    }
    let sizes: Vec<usize> = payload
        .history
        .iter()
        .map(|g| g.iter().map(|m| counter.count(&m.content)).sum())
        .collect();
    let mut total = required + sizes.iter().sum::<usize>();
    let mut drop = 0;
    while total > budget {
        total -= sizes[drop];
        drop += 1;
    }
    Ok(ChatPayload {
        system: payload.system.clone(),
        history: payload.history[drop..].to_vec(),
        current: payload.current.clone(),
    })
}
