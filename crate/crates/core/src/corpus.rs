//! Annotated dialogues and their conversion into the six-role format.
//!
//! Version-specific readers (in the `spectod` crate) normalize each corpus release into
//! [`RawDialogue`]; [`Converter::convert`] then derives the gold domain, call, observation,
//! action and delexicalized response for every turn.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::db::{observe, DatabaseSet, DbError};
use crate::delex::Placeholders;
use crate::dialogue::{check_value, Action, ActionFrame, Entity, FunctionCall, Observation};
use crate::normalize::Normalizer;
use crate::schema::{FunctionRegistry, NULL_FUNCTION};

/// Per-domain user goal: informable constraints, requested attributes, booking details.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DomainGoal {
    #[serde(default)]
    pub info: BTreeMap<String, String>,
    #[serde(default)]
    pub reqt: Vec<String>,
    #[serde(default)]
    pub book: BTreeMap<String, String>,
}

pub type Goal = BTreeMap<String, DomainGoal>;

/// Dialogue acts of one utterance: `"Domain-Intent" -> [(slot, value)]`.
pub type Acts = BTreeMap<String, Vec<(String, String)>>;

/// Belief annotation: `domain -> slot -> value`, using schema slot names.
pub type StateAnnotation = BTreeMap<String, BTreeMap<String, String>>;

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LogEntry {
    pub text: String,
    /// Belief after the preceding user utterance; carried on system entries.
    #[serde(default)]
    pub state: StateAnnotation,
    #[serde(default)]
    pub acts: Acts,
}

/// One corpus dialogue: user entries at even log positions, system entries at odd ones.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RawDialogue {
    pub id: String,
    pub goal: Goal,
    pub log: Vec<LogEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Dev,
    Test,
}

impl SplitName {
    pub const ALL: [SplitName; 3] = [SplitName::Train, SplitName::Dev, SplitName::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Dev => "dev",
            SplitName::Test => "test",
        }
    }
}

impl fmt::Display for SplitName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Gold labels for one turn.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldTurn {
    pub user: String,
    pub domain: String,
    pub call: FunctionCall,
    pub observation: Observation,
    pub frame: ActionFrame,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConversionNotes {
    /// Turns (1-based) whose annotation changed more than one domain.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub multi_domain_turns: Vec<usize>,
    /// Annotated values dropped because the schema does not accept them.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dropped: Vec<String>,
}

/// A converted dialogue: goal plus per-turn gold labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SixRoleDialogue {
    pub id: String,
    pub goal: Goal,
    pub turns: Vec<GoldTurn>,
    #[serde(default)]
    pub notes: ConversionNotes,
}

impl SixRoleDialogue {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("dialogue serializes")
    }

    pub fn from_json(line: &str) -> Result<Self, String> {
        serde_json::from_str(line).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CorpusSplit {
    pub name: Option<SplitName>,
    pub dialogues: Vec<SixRoleDialogue>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConvertError {
    #[error("{id}: log has odd length {len}")]
    OddLog { id: String, len: usize },
    #[error("{id} turn {turn}: unmappable dialogue act `{act}`")]
    UnmappableAct {
        id: String,
        turn: usize,
        act: String,
    },
    #[error("{id} turn {turn}: unknown domain `{domain}`")]
    UnknownDomain {
        id: String,
        turn: usize,
        domain: String,
    },
    #[error("{id} turn {turn}: empty system response")]
    EmptyResponse { id: String, turn: usize },
    #[error("{id} turn {turn}: {source}")]
    Database {
        id: String,
        turn: usize,
        source: DbError,
    },
}

#[derive(Debug, Clone, Deserialize)]
struct ActMapFile {
    acts: BTreeMap<String, Action>,
    priority: Vec<Action>,
}

/// Dialogue-act intents mapped onto the six action kinds, with a priority for turns
/// carrying several acts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActMap {
    acts: BTreeMap<String, Action>,
    priority: Vec<Action>,
}

impl Default for ActMap {
    fn default() -> Self {
        Self::from_json(include_str!("../data/act_map.json")).expect("bundled act map is valid")
    }
}

impl ActMap {
    pub fn from_json(text: &str) -> Result<Self, String> {
        let f: ActMapFile = serde_json::from_str(text).map_err(|e| e.to_string())?;
        for a in Action::ALL {
            if !f.priority.contains(&a) {
                return Err(format!("priority list lacks {a}"));
            }
        }
        let acts = f
            .acts
            .into_iter()
            .map(|(k, v)| (k.to_lowercase(), v))
            .collect();
        Ok(ActMap {
            acts,
            priority: f.priority,
        })
    }

    pub fn intent(&self, intent: &str) -> Option<Action> {
        self.acts.get(&intent.trim().to_lowercase()).copied()
    }

    /// The highest-priority action among a turn's acts; no acts means `General`.
    /// Returns the offending act name when one cannot be mapped.
    pub fn map(&self, acts: &Acts) -> Result<Action, String> {
        let mut found = Vec::new();
        for key in acts.keys() {
            let intent = key.rsplit_once('-').map(|(_, i)| i).unwrap_or(key);
            found.push(self.intent(intent).ok_or_else(|| key.clone())?);
        }
        Ok(self
            .priority
            .iter()
            .copied()
            .find(|a| found.contains(a))
            .unwrap_or(Action::General))
    }
}

fn act_domain(key: &str) -> Option<String> {
    key.split_once('-').map(|(d, _)| d.trim().to_lowercase())
}

fn filled(slots: &BTreeMap<String, String>) -> BTreeMap<String, String> {
    slots
        .iter()
        .filter(|(_, v)| {
            let v = v.trim();
            !v.is_empty() && !v.eq_ignore_ascii_case("not mentioned") && v != "none"
        })
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect()
}

/// Converts raw dialogues against a fixed registry, database and tables.
pub struct Converter<'a> {
    pub registry: &'a FunctionRegistry,
    pub db: &'a DatabaseSet,
    pub normalizer: &'a Normalizer,
    pub placeholders: &'a Placeholders,
    pub acts: &'a ActMap,
    /// Entities attached to each observation.
    pub samples: usize,
}

impl Converter<'_> {
    pub fn convert(&self, raw: &RawDialogue) -> Result<SixRoleDialogue, ConvertError> {
        if !raw.log.len().is_multiple_of(2) {
            return Err(ConvertError::OddLog {
                id: raw.id.clone(),
                len: raw.log.len(),
            });
        }
        let mut notes = ConversionNotes::default();
        let mut turns = Vec::with_capacity(raw.log.len() / 2);
        let mut prev_state: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        let mut prev_call: Option<FunctionCall> = None;
        let mut prev_domain = String::from(NULL_FUNCTION);

        for (i, pair) in raw.log.chunks(2).enumerate() {
            let turn = i + 1;
            let (user, system) = (&pair[0], &pair[1]);
            let state: BTreeMap<String, BTreeMap<String, String>> = system
                .state
                .iter()
                .map(|(d, s)| (d.to_lowercase(), filled(s)))
                .filter(|(_, s)| !s.is_empty())
                .collect();
            for d in state.keys() {
                if self.registry.resolve(d).is_none() {
                    return Err(ConvertError::UnknownDomain {
                        id: raw.id.clone(),
                        turn,
                        domain: d.clone(),
                    });
                }
            }

            let domain = self.active_domain(
                raw,
                turn,
                &state,
                &prev_state,
                user,
                system,
                &prev_domain,
                &mut notes,
            )?;
            let call = self.gold_call(&domain, &state, turn, &mut notes);
            let observation = observe(
                prev_call.as_ref(),
                &call,
                self.db,
                self.registry,
                self.normalizer,
                self.samples,
            )
            .map_err(|source| ConvertError::Database {
                id: raw.id.clone(),
                turn,
                source,
            })?;
            let action =
                self.acts
                    .map(&system.acts)
                    .map_err(|act| ConvertError::UnmappableAct {
                        id: raw.id.clone(),
                        turn,
                        act,
                    })?;
            let slot_values: Vec<(String, String)> =
                system.acts.values().flatten().cloned().collect();
            let entity = self.entity_for(&domain, &slot_values);
            let response =
                self.placeholders
                    .delexicalize(system.text.trim(), &entity, &slot_values);
            if response.trim().is_empty() {
                return Err(ConvertError::EmptyResponse {
                    id: raw.id.clone(),
                    turn,
                });
            }

            turns.push(GoldTurn {
                user: user.text.trim().to_string(),
                domain: domain.clone(),
                call: call.clone(),
                observation,
                frame: ActionFrame::new(action, response),
            });
            prev_state = state;
            prev_call = Some(call);
            prev_domain = domain;
        }
        Ok(SixRoleDialogue {
            id: raw.id.clone(),
            goal: raw.goal.clone(),
            turns,
            notes,
        })
    }

    /// Gold selected function for a turn.
    ///
    /// Priority: a domain whose annotated state changed this turn (ties broken by the
    /// domains named in the turn's acts, then registry order); otherwise the first
    /// registry domain named in the user or system acts; otherwise the null function.
    #[allow(clippy::too_many_arguments)]
    fn active_domain(
        &self,
        raw: &RawDialogue,
        turn: usize,
        state: &BTreeMap<String, BTreeMap<String, String>>,
        prev_state: &BTreeMap<String, BTreeMap<String, String>>,
        user: &LogEntry,
        system: &LogEntry,
        _prev_domain: &str,
        notes: &mut ConversionNotes,
    ) -> Result<String, ConvertError> {
        let mut act_domains: Vec<String> = Vec::new();
        for key in user.acts.keys().chain(system.acts.keys()) {
            let Some(d) = act_domain(key) else { continue };
            if d == "general" || d == "booking" {
                continue;
            }
            match self.registry.resolve(&d) {
                Some(spec) if !spec.is_null() => {
                    if !act_domains.contains(&spec.name) {
                        act_domains.push(spec.name.clone());
                    }
                }
                Some(_) => {}
                None => {
                    return Err(ConvertError::UnknownDomain {
                        id: raw.id.clone(),
                        turn,
                        domain: d,
                    });
                }
            }
        }
        let in_registry_order = |names: &[String]| -> Option<String> {
            self.registry
                .functions()
                .iter()
                .find(|f| names.contains(&f.name))
                .map(|f| f.name.clone())
        };

        let changed: Vec<String> = state
            .iter()
            .filter(|(d, s)| prev_state.get(*d) != Some(*s))
            .filter_map(|(d, _)| self.registry.resolve(d).map(|f| f.name.clone()))
            .collect();
        if changed.len() > 1 {
            notes.multi_domain_turns.push(turn);
        }
        if let Some(d) = act_domains.iter().find(|d| changed.contains(d)) {
            return Ok(d.clone());
        }
        if let Some(d) = in_registry_order(&changed) {
            return Ok(d);
        }
        if let Some(d) = act_domains.first() {
            return Ok(d.clone());
        }
        Ok(String::from(NULL_FUNCTION))
    }

    fn gold_call(
        &self,
        domain: &str,
        state: &BTreeMap<String, BTreeMap<String, String>>,
        turn: usize,
        notes: &mut ConversionNotes,
    ) -> FunctionCall {
        let spec = self
            .registry
            .resolve(domain)
            .unwrap_or_else(|| self.registry.null_function());
        let mut call = FunctionCall::new(spec.name.clone());
        let Some(slots) = state.get(&spec.name) else {
            return call;
        };
        for (slot, raw) in slots {
            let Some(slot_spec) = spec.slot(slot) else {
                notes.dropped.push(format!(
                    "turn {turn}: {}.{slot}={raw} (unknown slot)",
                    spec.name
                ));
                continue;
            };
            if let Some(v) = check_value(slot_spec, raw, self.normalizer) {
                notes
                    .dropped
                    .push(format!("turn {turn}: {}.{slot}: {v}", spec.name));
                continue;
            }
            call.arguments
                .insert(slot.clone(), self.normalizer.normalize(slot_spec, raw));
        }
        call
    }

    /// The database entity named by the acts (by name or id), used for delexicalization.
    fn entity_for(&self, domain: &str, slot_values: &[(String, String)]) -> Entity {
        let Some(rows) = self.db.table(domain) else {
            return Entity::new();
        };
        let key = |slot: &str| -> Option<(&'static str, String)> {
            match slot.to_lowercase().as_str() {
                "name" => Some(("name", String::new())),
                "id" | "trainid" => Some(("id", String::new())),
                _ => None,
            }
        };
        for (slot, value) in slot_values {
            let Some((attr, _)) = key(slot) else { continue };
            let wanted = value.trim().to_lowercase();
            if let Some(e) = rows.iter().find(|e| {
                e.get(attr)
                    .is_some_and(|v| v.trim().to_lowercase() == wanted)
            }) {
                let mut e = e.clone();
                e.remove("type");
                if domain != "train" {
                    e.remove("id");
                }
                return e;
            }
        }
        Entity::new()
    }
}
