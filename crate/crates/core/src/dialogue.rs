//! Shared dialogue data model: calls, belief states, actions, observations and sessions.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::normalize::{Normalizer, DONTCARE};
use crate::schema::{FunctionRegistry, FunctionSpec, SlotSpec, ValueType, NULL_FUNCTION};

/// Flat attribute record from a domain database.
pub type Entity = BTreeMap<String, String>;

/// Output of state tracking for one turn: the selected function and its full argument map.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FunctionCall {
    pub name: String,
    pub arguments: BTreeMap<String, String>,
}

impl FunctionCall {
    pub fn new(name: impl Into<String>) -> Self {
        FunctionCall {
            name: name.into(),
            arguments: BTreeMap::new(),
        }
    }

    pub fn null() -> Self {
        Self::new(NULL_FUNCTION)
    }

    pub fn with(mut self, slot: &str, value: &str) -> Self {
        self.arguments.insert(slot.to_string(), value.to_string());
        self
    }

    pub fn is_null(&self) -> bool {
        self.name.trim().eq_ignore_ascii_case(NULL_FUNCTION)
    }

    /// Canonical single-line JSON, `{"name":..,"arguments":{..}}` with sorted slot keys.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("call serializes")
    }

    /// Normalized copy: folded name, normalized values, empty values dropped.
    pub fn normalized(&self, registry: &FunctionRegistry, normalizer: &Normalizer) -> FunctionCall {
        let spec = registry.resolve(&self.name);
        let name = spec
            .map(|s| s.name.clone())
            .unwrap_or_else(|| self.name.trim().to_lowercase());
        let mut arguments = BTreeMap::new();
        for (slot, raw) in &self.arguments {
            let value = match spec.and_then(|s| s.slot(slot)) {
                Some(slot_spec) => normalizer.normalize(slot_spec, raw),
                None => normalizer.normalize_typed(ValueType::FreeText, raw),
            };
            if !value.is_empty() {
                arguments.insert(slot.clone(), value);
            }
        }
        FunctionCall { name, arguments }
    }
}

/// Accumulated user goal for one turn: active domain plus slot-value pairs.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BeliefState {
    pub domain: String,
    pub slots: BTreeMap<String, String>,
}

impl BeliefState {
    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }
}

/// Maps a validated call onto the belief state it denotes, normalizing every value.
pub fn function_call_to_belief(
    call: &FunctionCall,
    registry: &FunctionRegistry,
    normalizer: &Normalizer,
) -> BeliefState {
    let spec = registry.resolve(&call.name);
    let slots = call
        .arguments
        .iter()
        .map(|(slot, raw)| {
            let value = match spec.and_then(|s| s.slot(slot)) {
                Some(slot_spec) => normalizer.normalize(slot_spec, raw),
                None => normalizer.normalize_typed(ValueType::FreeText, raw),
            };
            (slot.clone(), value)
        })
        .collect();
    BeliefState {
        domain: spec
            .map(|s| s.name.clone())
            .unwrap_or_else(|| call.name.trim().to_lowercase()),
        slots,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    UnknownFunction {
        name: String,
    },
    UnknownSlot {
        slot: String,
    },
    InvalidValue {
        slot: String,
        value: String,
        allowed: Vec<String>,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::UnknownFunction { name } => write!(f, "unknown function {name}"),
            Violation::UnknownSlot { slot } => write!(f, "unknown slot {slot}"),
            Violation::InvalidValue {
                slot,
                value,
                allowed,
            } => {
                write!(
                    f,
                    "value {value} not allowed for {slot}; expected one of {}",
                    allowed.join(", ")
                )
            }
        }
    }
}

/// Checks a single slot value against its spec; `None` when acceptable.
pub fn check_value(slot: &SlotSpec, raw: &str, normalizer: &Normalizer) -> Option<Violation> {
    let allowed = slot.possible_values.as_ref()?;
    if slot.value_type != ValueType::Categorical {
        return None;
    }
    let value = normalizer.normalize(slot, raw);
    if value == DONTCARE
        || allowed
            .iter()
            .any(|a| normalizer.normalize(slot, a) == value)
    {
        return None;
    }
    let mut allowed = allowed.clone();
    allowed.push(DONTCARE.to_string());
    Some(Violation::InvalidValue {
        slot: slot.slot_name.clone(),
        value: raw.to_string(),
        allowed,
    })
}

/// Lists every problem with a call; an empty list means the call is valid.
pub fn validate_function_call(
    call: &FunctionCall,
    registry: &FunctionRegistry,
    normalizer: &Normalizer,
) -> Vec<Violation> {
    let Some(spec) = registry.resolve(&call.name) else {
        return alloc::vec![Violation::UnknownFunction {
            name: call.name.clone()
        }];
    };
    let mut out = Vec::new();
    for (slot, value) in &call.arguments {
        match spec.slot(slot) {
            None => out.push(Violation::UnknownSlot { slot: slot.clone() }),
            Some(slot_spec) => out.extend(check_value(slot_spec, value, normalizer)),
        }
    }
    out
}

/// The six system action kinds a response can realize.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Action {
    Info,
    Request,
    NoOffer,
    Recommend,
    Select,
    General,
}

impl Action {
    pub const ALL: [Action; 6] = [
        Action::Info,
        Action::Request,
        Action::NoOffer,
        Action::Recommend,
        Action::Select,
        Action::General,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Action::Info => "Info",
            Action::Request => "Request",
            Action::NoOffer => "NoOffer",
            Action::Recommend => "Recommend",
            Action::Select => "Select",
            Action::General => "General",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Action::Info => "provide information about an entity (if multiple matched results exist, choose one) in the form of [value_xxx] if requested by the user.",
            Action::Request => "inform the number of available offers ([value_choice]) and ask the user for more preferences on the requested entity to narrow down the search results.",
            Action::NoOffer => "inform the user that no suitable offer could be found.",
            Action::Recommend => "recommend an offer to the user and provide its information.",
            Action::Select => "inform the user to select among options.",
            Action::General => "greet and welcome the user, and inquire if there are anything further requirements.",
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown action label `{0}`")]
pub struct UnknownAction(pub String);

impl FromStr for Action {
    type Err = UnknownAction;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        Action::ALL
            .into_iter()
            .find(|a| a.label().eq_ignore_ascii_case(t))
            .ok_or_else(|| UnknownAction(t.to_string()))
    }
}

/// The action catalog rendered into response-generation prompts, one bullet per action.
pub fn render_action_catalog() -> String {
    let mut out = String::new();
    for a in Action::ALL {
        if !out.is_empty() {
            out.push('\n');
        }
        out.push_str(&format!("- {}: {}", a.label(), a.description()));
    }
    out
}

/// A chosen action and its delexicalized response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionFrame {
    pub action: Action,
    pub response: String,
}

impl ActionFrame {
    pub fn new(action: Action, response: impl Into<String>) -> Self {
        ActionFrame {
            action,
            response: response.into(),
        }
    }

    /// Completion grammar shared by training export and inference parsing.
    pub fn render(&self) -> String {
        format!(
            "Action: {}\nResponse: {}",
            self.action.label(),
            self.response
        )
    }
}

/// Sentinel observation text when no database call is needed.
pub const NO_CALL_NEEDED: &str = "Do not need to call function.";

/// Result of the policy-instruction stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum Observation {
    EntityCount { count: usize, samples: Vec<Entity> },
    NoCallNeeded,
}

impl Observation {
    /// `NoCallNeeded` renders the fixed sentinel; counts render as a template plus sample JSON.
    pub fn render(&self) -> String {
        match self {
            Observation::NoCallNeeded => NO_CALL_NEEDED.to_string(),
            Observation::EntityCount { count, samples } => {
                let mut out = format!("Found {count} matching entities.");
                if !samples.is_empty() {
                    out.push('\n');
                    out.push_str(&serde_json::to_string(samples).expect("entities serialize"));
                }
                out
            }
        }
    }

    /// Inverse of [`Observation::render`].
    pub fn parse(text: &str) -> Option<Observation> {
        if text == NO_CALL_NEEDED {
            return Some(Observation::NoCallNeeded);
        }
        let (head, rest) = match text.split_once('\n') {
            Some((h, r)) => (h, Some(r)),
            None => (text, None),
        };
        let count = head
            .strip_prefix("Found ")?
            .strip_suffix(" matching entities.")?
            .parse()
            .ok()?;
        let samples = match rest {
            Some(json) => serde_json::from_str(json).ok()?,
            None => Vec::new(),
        };
        Some(Observation::EntityCount { count, samples })
    }

    pub fn count(&self) -> Option<usize> {
        match self {
            Observation::EntityCount { count, .. } => Some(*count),
            Observation::NoCallNeeded => None,
        }
    }
}

/// The six roles of the serialized dialogue format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Domain,
    Function,
    Observation,
    Assistant,
}

impl Role {
    pub const ALL: [Role; 6] = [
        Role::System,
        Role::User,
        Role::Domain,
        Role::Function,
        Role::Observation,
        Role::Assistant,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Domain => "domain",
            Role::Function => "function",
            Role::Observation => "observation",
            Role::Assistant => "assistant",
        }
    }

    /// Roles whose content the model is trained to produce.
    pub fn is_supervised(self) -> bool {
        matches!(self, Role::Domain | Role::Function | Role::Assistant)
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub role: Role,
    pub content: String,
}

impl TurnRecord {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        TurnRecord {
            role,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    DomainSelection,
    StateTracking,
    PolicyInstruction,
    ResponseGeneration,
}

impl Stage {
    pub fn task_tag(self) -> &'static str {
        match self {
            Stage::DomainSelection => "ds",
            Stage::StateTracking => "dst",
            Stage::PolicyInstruction => "pi",
            Stage::ResponseGeneration => "rg",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagnosticKind {
    /// The completion was malformed but a value was recovered from it.
    Repaired,
    /// Nothing usable was recovered; a default was substituted.
    Fallback,
    /// Gold-state mode replaced the predicted call.
    GoldSubstitution,
    /// The backend failed and the turn was aborted.
    BackendError,
}

/// One deviation from the clean path, at most one per completion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub stage: Stage,
    pub kind: DiagnosticKind,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Diagnostics {
    pub entries: Vec<Diagnostic>,
    /// Stages in execution order.
    pub stages: Vec<Stage>,
    /// Backend latency per stage, in microseconds.
    pub latency_us: BTreeMap<String, u64>,
}

impl Diagnostics {
    pub fn count(&self, kind: DiagnosticKind) -> usize {
        self.entries.iter().filter(|d| d.kind == kind).count()
    }

    pub fn has_errors(&self) -> bool {
        self.count(DiagnosticKind::BackendError) > 0
    }
}

/// Everything the pipeline produced for one turn.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnOutcome {
    /// Name of the selected function.
    pub selected: String,
    pub call: FunctionCall,
    /// The model's own call when gold-state mode substituted another one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted: Option<FunctionCall>,
    pub observation: Observation,
    pub frame: ActionFrame,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionTurn {
    /// 1-based turn index.
    pub turn: usize,
    pub user: String,
    pub outcome: TurnOutcome,
}

/// A running or finished conversation, in turn order.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DialogueSession {
    pub dialogue_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub goal_ref: Option<String>,
    pub turns: Vec<SessionTurn>,
}

impl DialogueSession {
    pub fn new(dialogue_id: impl Into<String>) -> Self {
        DialogueSession {
            dialogue_id: dialogue_id.into(),
            goal_ref: None,
            turns: Vec::new(),
        }
    }

    pub fn next_turn(&self) -> usize {
        self.turns.len() + 1
    }

    pub fn last_call(&self) -> Option<&FunctionCall> {
        self.turns.last().map(|t| &t.outcome.call)
    }
}

/// Resolves a function name, falling back to the null function.
pub fn resolve_or_null<'r>(registry: &'r FunctionRegistry, name: &str) -> &'r FunctionSpec {
    registry
        .resolve(name)
        .unwrap_or_else(|| registry.null_function())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn call_to_belief() {
        let reg = FunctionRegistry::multiwoz();
        let n = Normalizer::default();
        let b = function_call_to_belief(
            &FunctionCall::new("restaurant").with("area", "centre"),
            &reg,
            &n,
        );
        assert_eq!(b.domain, "restaurant");
        assert_eq!(b.slots.get("area").map(String::as_str), Some("centre"));
        let b = function_call_to_belief(&FunctionCall::null(), &reg, &n);
        assert_eq!(
            b,
            BeliefState {
                domain: "null".into(),
                slots: BTreeMap::new()
            }
        );
        let raw = FunctionCall::new("Restaurant")
            .with("area", " Center")
            .with("book_time", "7:30 pm");
        let b = function_call_to_belief(&raw, &reg, &n);
        assert_eq!(b.domain, "restaurant");
        assert_eq!(b.slots["area"], "centre");
        assert_eq!(b.slots["book_time"], "19:30");
        assert_eq!(b.len(), raw.arguments.len());
    }

    #[test]
    fn validation_verdicts() {
        let reg = FunctionRegistry::multiwoz();
        let n = Normalizer::default();
        let ok = FunctionCall::new("restaurant")
            .with("area", "Centre")
            .with("food", "chinese");
        assert!(validate_function_call(&ok, &reg, &n).is_empty());
        let v = validate_function_call(
            &FunctionCall::new("restaurant").with("color", "red"),
            &reg,
            &n,
        );
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].to_string(), "unknown slot color");
        let v = validate_function_call(
            &FunctionCall::new("restaurant").with("area", "moon"),
            &reg,
            &n,
        );
        match &v[0] {
            Violation::InvalidValue { allowed, .. } => {
                assert!(allowed.iter().any(|a| a == "centre"));
                assert!(allowed.iter().any(|a| a == DONTCARE));
            }
            other => panic!("{other:?}"),
        }
        let v = validate_function_call(&FunctionCall::new("bank"), &reg, &n);
        assert!(matches!(v[0], Violation::UnknownFunction { .. }));
        let dc = FunctionCall::new("restaurant").with("area", "don't care");
        assert!(validate_function_call(&dc, &reg, &n).is_empty());
    }

    #[test]
    fn action_labels_round_trip() {
        for a in Action::ALL {
            assert_eq!(a.label().parse::<Action>().unwrap(), a);
        }
        assert!("recommendation".parse::<Action>().is_err());
    }

    #[test]
    fn observation_rendering() {
        assert_eq!(
            Observation::NoCallNeeded.render(),
            "Do not need to call function."
        );
        let empty = Observation::EntityCount {
            count: 0,
            samples: Vec::new(),
        };
        assert_eq!(empty.render(), "Found 0 matching entities.");
        let mut e = Entity::new();
        e.insert("name".into(), "golden wok".into());
        let obs = Observation::EntityCount {
            count: 2,
            samples: alloc::vec![e],
        };
        assert_eq!(
            obs.render(),
            "Found 2 matching entities.\n[{\"name\":\"golden wok\"}]"
        );
        assert_eq!(Observation::parse(&obs.render()), Some(obs));
        assert_eq!(Observation::parse(&empty.render()), Some(empty));
        assert_eq!(
            Observation::parse(NO_CALL_NEEDED),
            Some(Observation::NoCallNeeded)
        );
    }

    #[test]
    fn canonical_call_json() {
        let call = FunctionCall::new("restaurant")
            .with("food", "thai")
            .with("area", "centre");
        assert_eq!(
            call.to_json(),
            r#"{"name":"restaurant","arguments":{"area":"centre","food":"thai"}}"#
        );
    }
}
