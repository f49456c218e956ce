//! Training export: six-role message sequences with per-message loss masks, and the
//! fine-tuning manifest handed to the trainer.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{GoldTurn, SixRoleDialogue};
use crate::dialogue::{render_action_catalog, FunctionCall, Observation, Role, TurnRecord};
use crate::parse::parse_frame;
use crate::prompt::{TokenCounter, DEFAULT_CONTEXT_TOKENS};
use crate::schema::FunctionRegistry;

/// One message of an exported sample. `loss` is 1 exactly for supervised roles.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedMessage {
    pub role: Role,
    pub content: String,
    pub loss: u8,
}

impl MaskedMessage {
    pub fn new(record: TurnRecord) -> Self {
        let loss = u8::from(record.role.is_supervised());
        MaskedMessage {
            role: record.role,
            content: record.content,
            loss,
        }
    }
}

/// One JSONL line of the training file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportSample {
    pub id: String,
    pub messages: Vec<MaskedMessage>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExportError {
    #[error("line is not a valid sample: {0}")]
    Json(String),
    #[error("sample does not start with a system message")]
    MissingSystem,
    #[error("message {index}: expected role {expected}, found {found}")]
    RoleOrder {
        index: usize,
        expected: Role,
        found: Role,
    },
    #[error("message {index}: loss {found} does not match role {role}")]
    Mask { index: usize, role: Role, found: u8 },
    #[error("message {index}: {reason}")]
    Content { index: usize, reason: String },
}

const TURN_ROLES: [Role; 5] = [
    Role::User,
    Role::Domain,
    Role::Function,
    Role::Observation,
    Role::Assistant,
];

impl ExportSample {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("sample serializes")
    }

    /// Parses and validates a line: role order, masks and message contents.
    pub fn from_json(line: &str) -> Result<Self, ExportError> {
        let sample: ExportSample =
            serde_json::from_str(line).map_err(|e| ExportError::Json(e.to_string()))?;
        sample.turns()?;
        Ok(sample)
    }

    /// Recovers the gold turns carried by the sample.
    pub fn turns(&self) -> Result<Vec<GoldTurn>, ExportError> {
        let (first, rest) = self
            .messages
            .split_first()
            .ok_or(ExportError::MissingSystem)?;
        if first.role != Role::System {
            return Err(ExportError::MissingSystem);
        }
        for (index, m) in self.messages.iter().enumerate() {
            if m.loss != u8::from(m.role.is_supervised()) {
                return Err(ExportError::Mask {
                    index,
                    role: m.role,
                    found: m.loss,
                });
            }
        }
        if rest.len() % TURN_ROLES.len() != 0 {
            return Err(ExportError::Content {
                index: self.messages.len(),
                reason: "sample ends inside a turn".to_string(),
            });
        }
        let mut turns = Vec::new();
        for (t, chunk) in rest.chunks(TURN_ROLES.len()).enumerate() {
            let base = 1 + t * TURN_ROLES.len();
            for (j, (m, expected)) in chunk.iter().zip(TURN_ROLES).enumerate() {
                if m.role != expected {
                    return Err(ExportError::RoleOrder {
                        index: base + j,
                        expected,
                        found: m.role,
                    });
                }
            }
            let bad = |j: usize, reason: String| ExportError::Content {
                index: base + j,
                reason,
            };
            let call: FunctionCall =
                serde_json::from_str(&chunk[2].content).map_err(|e| bad(2, e.to_string()))?;
            if call.name != chunk[1].content {
                return Err(bad(
                    2,
                    format!(
                        "call names `{}`, domain is `{}`",
                        call.name, chunk[1].content
                    ),
                ));
            }
            let observation = Observation::parse(&chunk[3].content)
                .ok_or_else(|| bad(3, "unparseable observation".into()))?;
            let frame = match parse_frame(&chunk[4].content) {
                Ok(p) if p.is_clean() => p.value,
                _ => return Err(bad(4, "assistant message lacks the action frame".into())),
            };
            turns.push(GoldTurn {
                user: chunk[0].content.clone(),
                domain: chunk[1].content.clone(),
                call,
                observation,
                frame,
            });
        }
        Ok(turns)
    }
}

/// The system record: task, available domains, the specs of the functions this dialogue
/// uses (first-use order), and the action catalog.
pub fn system_record(registry: &FunctionRegistry, dialogue: &SixRoleDialogue) -> String {
    let domains: Vec<&str> = registry
        .functions()
        .iter()
        .map(|f| f.name.as_str())
        .collect();
    let mut used = Vec::new();
    for t in &dialogue.turns {
        if let Some(spec) = registry.resolve(&t.domain) {
            if !used
                .iter()
                .any(|u: &&crate::schema::FunctionSpec| u.name == spec.name)
            {
                used.push(spec);
            }
        }
    }
    let specs = serde_json::to_string_pretty(&used).expect("specs serialize");
    format!(
        "You are a task-oriented dialogue assistant. For each user turn, choose the domain, \
         call its function with the constraints stated so far, read the observation, and reply.\n\
         Domains: {}\n\
         Function specifications:\n{specs}\n\
         Actions:\n{}",
        domains.join(", "),
        render_action_catalog()
    )
}

/// The five records of one turn, in order.
pub fn turn_records(turn: &GoldTurn) -> [TurnRecord; 5] {
    [
        TurnRecord::new(Role::User, turn.user.clone()),
        TurnRecord::new(Role::Domain, turn.domain.clone()),
        TurnRecord::new(Role::Function, turn.call.to_json()),
        TurnRecord::new(Role::Observation, turn.observation.render()),
        TurnRecord::new(Role::Assistant, turn.frame.render()),
    ]
}

/// Full six-role record sequence of a dialogue.
pub fn six_role_records(
    registry: &FunctionRegistry,
    dialogue: &SixRoleDialogue,
) -> Vec<TurnRecord> {
    let mut out = alloc::vec![TurnRecord::new(
        Role::System,
        system_record(registry, dialogue)
    )];
    for t in &dialogue.turns {
        out.extend(turn_records(t));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Overflow {
    /// Split into windows of whole turns, each repeating the system record.
    #[default]
    Split,
    /// Leave the dialogue out and report it.
    Skip,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextPolicy {
    pub limit: usize,
    pub overflow: Overflow,
}

impl Default for ContextPolicy {
    fn default() -> Self {
        ContextPolicy {
            limit: DEFAULT_CONTEXT_TOKENS,
            overflow: Overflow::Split,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DialogueExport {
    Whole(ExportSample),
    Split(Vec<ExportSample>),
    Skipped { id: String, tokens: usize },
}

/// Exports one dialogue under a context policy.
///
/// A dialogue whose system record plus any single turn exceeds the limit is skipped
/// even under [`Overflow::Split`].
pub fn export_dialogue(
    registry: &FunctionRegistry,
    dialogue: &SixRoleDialogue,
    policy: ContextPolicy,
    counter: &dyn TokenCounter,
) -> DialogueExport {
    let system = TurnRecord::new(Role::System, system_record(registry, dialogue));
    let system_tokens = counter.count(&system.content);
    let turns: Vec<[TurnRecord; 5]> = dialogue.turns.iter().map(turn_records).collect();
    let sizes: Vec<usize> = turns
        .iter()
        .map(|t| t.iter().map(|r| counter.count(&r.content)).sum())
        .collect();
    let total = system_tokens + sizes.iter().sum::<usize>();

    let build = |id: String, range: &[[TurnRecord; 5]]| {
        let mut messages = alloc::vec![MaskedMessage::new(system.clone())];
        messages.extend(range.iter().flatten().cloned().map(MaskedMessage::new));
        ExportSample { id, messages }
    };
    if total <= policy.limit {
        return DialogueExport::Whole(build(dialogue.id.clone(), &turns));
    }
    if policy.overflow == Overflow::Skip || sizes.iter().any(|s| system_tokens + s > policy.limit) {
        return DialogueExport::Skipped {
            id: dialogue.id.clone(),
            tokens: total,
        };
    }
    let mut windows = Vec::new();
    let mut start = 0;
    let mut used = system_tokens;
    for (i, size) in sizes.iter().enumerate() {
        if used + size > policy.limit {
            windows.push((start, i));
            start = i;
            used = system_tokens;
        }
        used += size;
    }
    windows.push((start, turns.len()));
    DialogueExport::Split(
        windows
            .into_iter()
            .enumerate()
            .map(|(k, (a, b))| build(format!("{}#{}", dialogue.id, k + 1), &turns[a..b]))
            .collect(),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportReport {
    pub dialogues: usize,
    pub samples: usize,
    pub split_dialogues: usize,
    pub skipped: Vec<String>,
    /// Share of estimated tokens carrying loss 0.
    pub masked_token_share: f64,
}

/// Exports a split; returns the samples in dialogue order and a summary.
pub fn export_corpus(
    registry: &FunctionRegistry,
    dialogues: &[SixRoleDialogue],
    policy: ContextPolicy,
    counter: &dyn TokenCounter,
) -> (Vec<ExportSample>, ExportReport) {
    let mut samples = Vec::new();
    let mut report = ExportReport {
        dialogues: dialogues.len(),
        samples: 0,
        split_dialogues: 0,
        skipped: Vec::new(),
        masked_token_share: 0.0,
    };
    for d in dialogues {
        match export_dialogue(registry, d, policy, counter) {
            DialogueExport::Whole(s) => samples.push(s),
            DialogueExport::Split(parts) => {
                report.split_dialogues += 1;
                samples.extend(parts);
            }
            DialogueExport::Skipped { id, .. } => report.skipped.push(id),
        }
    }
    let (mut masked, mut all) = (0usize, 0usize);
    for m in samples.iter().flat_map(|s| &s.messages) {
        let n = counter.count(&m.content);
        all += n;
        if m.loss == 0 {
            masked += n;
        }
    }
    report.samples = samples.len();
    report.masked_token_share = if all == 0 {
        0.0
    } else {
        masked as f64 / all as f64
    };
    (samples, report)
}

/// Where a manifest value came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Override {
    pub field: String,
    pub value: String,
    pub source: String,
}

/// Fine-tuning hyperparameters for the trainer. Defaults are the reference configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingManifest {
    pub lora_rank: u32,
    pub lora_alpha: u32,
    pub target_modules: Vec<String>,
    pub epochs: u32,
    pub learning_rate: f64,
    pub global_batch_size: u32,
    pub context_length: usize,
    /// Loss weight per supervised role.
    pub role_loss_weights: BTreeMap<Role, f64>,
    pub train_file: String,
    pub samples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fewshot: Option<FewShotRecord>,
    #[serde(default)]
    pub overrides: Vec<Override>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShotRecord {
    pub fraction: f64,
    pub seed: u64,
    pub stratified: bool,
}

impl Default for TrainingManifest {
    fn default() -> Self {
        TrainingManifest {
            lora_rank: 32,
            lora_alpha: 16,
            target_modules: alloc::vec!["q_proj".to_string(), "v_proj".to_string()],
            epochs: 4,
            learning_rate: 3e-4,
            global_batch_size: 8,
            context_length: DEFAULT_CONTEXT_TOKENS,
            role_loss_weights: Role::ALL
                .iter()
                .filter(|r| r.is_supervised())
                .map(|r| (*r, 1.0))
                .collect(),
            train_file: "train.jsonl".to_string(),
            samples: 0,
            fewshot: None,
            overrides: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ManifestError {
    #[error("unknown manifest field `{0}`")]
    UnknownField(String),
    #[error("invalid value `{value}` for `{field}`")]
    InvalidValue { field: String, value: String },
}

impl TrainingManifest {
    /// Sets one field from its text form and records the override. Loss weights are set
    /// with `weight.<role>`.
    pub fn apply_override(
        &mut self,
        field: &str,
        value: &str,
        source: &str,
    ) -> Result<(), ManifestError> {
        let invalid = || ManifestError::InvalidValue {
            field: field.to_string(),
            value: value.to_string(),
        };
        let v = value.trim();
        match field {
            "lora_rank" => self.lora_rank = v.parse().map_err(|_| invalid())?,
            "lora_alpha" => self.lora_alpha = v.parse().map_err(|_| invalid())?,
            "epochs" => self.epochs = v.parse().map_err(|_| invalid())?,
            "learning_rate" => self.learning_rate = v.parse().map_err(|_| invalid())?,
            "global_batch_size" => self.global_batch_size = v.parse().map_err(|_| invalid())?,
            "context_length" => self.context_length = v.parse().map_err(|_| invalid())?,
            "target_modules" => {
                self.target_modules = v
                    .split(',')
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect();
                if self.target_modules.is_empty() {
                    return Err(invalid());
                }
            }
            f => {
                let role = f
                    .strip_prefix("weight.")
                    .ok_or_else(|| ManifestError::UnknownField(f.to_string()))?;
                let role = Role::ALL
                    .into_iter()
                    .find(|r| r.as_str() == role && r.is_supervised())
                    .ok_or_else(|| ManifestError::UnknownField(f.to_string()))?;
                let w: f64 = v.parse().map_err(|_| invalid())?;
                if !(w.is_finite() && w >= 0.0) {
                    return Err(invalid());
                }
                self.role_loss_weights.insert(role, w);
            }
        }
        self.overrides.push(Override {
            field: field.to_string(),
            value: v.to_string(),
            source: source.to_string(),
        });
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }
}
