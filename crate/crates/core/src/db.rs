//! Entity tables, constraint matching, and the policy-instruction observation rules.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dialogue::{function_call_to_belief, BeliefState, Entity, FunctionCall, Observation};
use crate::normalize::{canonical_time, Normalizer, DONTCARE};
use crate::schema::{FunctionRegistry, SlotSpec};

/// Number of matching entities attached to an observation by default.
pub const DEFAULT_SAMPLES: usize = 1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DbError {
    #[error("no entity table for domain `{0}`")]
    UnknownTable(String),
    #[error("malformed table for `{domain}`: {reason}")]
    Malformed { domain: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct QueryResult {
    pub count: usize,
    pub matches: Vec<Entity>,
}

/// Comparison applied between an entity attribute and a constraint value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Comparison {
    Equal,
    /// Attribute time must be at or after the constraint (inclusive).
    AtOrAfter,
    /// Attribute time must be at or before the constraint (inclusive).
    AtOrBefore,
}

/// `leave_at` means "leave no earlier than", `arrive_by` means "arrive no later than".
pub fn comparison_for(slot: &str) -> Comparison {
    match slot {
        "leave_at" => Comparison::AtOrAfter,
        "arrive_by" => Comparison::AtOrBefore,
        _ => Comparison::Equal,
    }
}

/// Maps a raw database attribute name onto the schema slot vocabulary.
pub fn attribute_key(raw: &str) -> String {
    match raw {
        "arriveBy" => "arrive_by".to_string(),
        "leaveAt" => "leave_at".to_string(),
        "trainID" => "id".to_string(),
        other => other.trim().to_lowercase().replace(' ', "_"),
    }
}

/// Per-domain entity tables, immutable after construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatabaseSet {
    tables: BTreeMap<String, Vec<Entity>>,
    synthetic: BTreeSet<String>,
}

impl Default for DatabaseSet {
    fn default() -> Self {
        let mut synthetic = BTreeSet::new();
        synthetic.insert("taxi".to_string());
        DatabaseSet {
            tables: BTreeMap::new(),
            synthetic,
        }
    }
}

impl DatabaseSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_table(&mut self, domain: &str, rows: Vec<Entity>) {
        self.tables.insert(domain.to_lowercase(), rows);
    }

    /// Loads a MultiWOZ `*_db.json` array; nested values are dropped, scalars stringified.
    pub fn insert_table_json(&mut self, domain: &str, text: &str) -> Result<(), DbError> {
        let malformed = |reason: String| DbError::Malformed {
            domain: domain.to_string(),
            reason,
        };
        let rows: Vec<Value> = serde_json::from_str(text).map_err(|e| malformed(e.to_string()))?;
        let mut table = Vec::with_capacity(rows.len());
        for (i, row) in rows.into_iter().enumerate() {
            let Value::Object(map) = row else {
                return Err(malformed(format!("row {i} is not an object")));
            };
            let mut entity = Entity::new();
            for (k, v) in map {
                let value = match v {
                    Value::String(s) => s,
                    Value::Number(n) => n.to_string(),
                    Value::Bool(b) => if b { "yes" } else { "no" }.to_string(),
                    _ => continue,
                };
                entity.insert(attribute_key(&k), value);
            }
            table.push(entity);
        }
        self.insert_table(domain, table);
        Ok(())
    }

    /// Marks a domain as served by a generated single entity instead of a table.
    pub fn mark_synthetic(&mut self, domain: &str) {
        self.synthetic.insert(domain.to_lowercase());
    }

    pub fn table(&self, domain: &str) -> Option<&[Entity]> {
        self.tables.get(domain).map(Vec::as_slice)
    }

    pub fn domains(&self) -> impl Iterator<Item = &str> {
        self.tables.keys().map(String::as_str)
    }

    pub fn is_synthetic(&self, domain: &str) -> bool {
        !self.tables.contains_key(domain) && self.synthetic.contains(domain)
    }

    /// Queryable slots that no entity in the domain's table carries.
    pub fn missing_attributes(&self, registry: &FunctionRegistry) -> Vec<(String, String)> {
        let mut out = Vec::new();
        for spec in registry.functions() {
            let Some(rows) = self.tables.get(&spec.name) else {
                continue;
            };
            for slot in spec.arguments.iter().filter(|s| s.is_queryable()) {
                if !rows.iter().any(|e| e.contains_key(&slot.slot_name)) {
                    out.push((spec.name.clone(), slot.slot_name.clone()));
                }
            }
        }
        out
    }

    /// Entities satisfying every constraint in the belief, in table order.
    pub fn query(
        &self,
        belief: &BeliefState,
        registry: &FunctionRegistry,
        normalizer: &Normalizer,
    ) -> Result<QueryResult, DbError> {
        let domain = belief.domain.trim().to_lowercase();
        let spec = registry.resolve(&domain);
        let constraints: Vec<(SlotSpec, String)> = belief
            .slots
            .iter()
            .filter_map(|(slot, raw)| {
                let slot_spec = spec
                    .and_then(|s| s.slot(slot))
                    .cloned()
                    .unwrap_or_else(|| SlotSpec::free_text(slot));
                if !slot_spec.is_queryable() {
                    return None;
                }
                let value = normalizer.normalize(&slot_spec, raw);
                if value.is_empty() || value == DONTCARE {
                    return None;
                }
                Some((slot_spec, value))
            })
            .collect();

        let matches: Vec<Entity> = match self.tables.get(&domain) {
            Some(rows) => rows
                .iter()
                .filter(|e| {
                    constraints
                        .iter()
                        .all(|(s, v)| attribute_matches(e, s, v, normalizer))
                })
                .cloned()
                .collect(),
            None if self.synthetic.contains(&domain) => {
                alloc::vec![synthetic_entity(&domain, &constraints)]
            }
            None => return Err(DbError::UnknownTable(domain)),
        };
        Ok(QueryResult {
            count: matches.len(),
            matches,
        })
    }

    /// Does a single entity satisfy every constraint of the belief?
    pub fn entity_satisfies(
        &self,
        entity: &Entity,
        belief: &BeliefState,
        registry: &FunctionRegistry,
        normalizer: &Normalizer,
    ) -> bool {
        let spec = registry.resolve(&belief.domain);
        belief.slots.iter().all(|(slot, raw)| {
            let slot_spec = spec
                .and_then(|s| s.slot(slot))
                .cloned()
                .unwrap_or_else(|| SlotSpec::free_text(slot));
            if !slot_spec.is_queryable() {
                return true;
            }
            let value = normalizer.normalize(&slot_spec, raw);
            value.is_empty()
                || value == DONTCARE
                || attribute_matches(entity, &slot_spec, &value, normalizer)
        })
    }
}

fn attribute_matches(
    entity: &Entity,
    slot: &SlotSpec,
    wanted: &str,
    normalizer: &Normalizer,
) -> bool {
    let Some(raw) = entity.get(&slot.slot_name) else {
        return false;
    };
    let have = normalizer.normalize(slot, raw);
    match comparison_for(&slot.slot_name) {
        Comparison::Equal => have == wanted,
        cmp => match (canonical_time(&have), canonical_time(wanted)) {
            // Canonical HH:MM strings order lexicographically.
            (Some(h), Some(w)) if cmp == Comparison::AtOrAfter => h >= w,
            (Some(h), Some(w)) => h <= w,
            _ => have == wanted,
        },
    }
}

const CAR_COLOURS: [&str; 6] = ["black", "white", "red", "yellow", "blue", "grey"];
const CAR_MAKES: [&str; 6] = ["toyota", "skoda", "bmw", "honda", "ford", "audi"];

/// Generated entity for table-less domains: constraint values plus a car and phone
/// derived from a hash of the constraints, so identical beliefs get identical entities.
fn synthetic_entity(domain: &str, constraints: &[(SlotSpec, String)]) -> Entity {
    let mut hasher = Sha256::new();
    hasher.update(domain.as_bytes());
    let mut entity = Entity::new();
    for (slot, value) in constraints {
        hasher.update([0u8]);
        hasher.update(slot.slot_name.as_bytes());
        hasher.update([1u8]);
        hasher.update(value.as_bytes());
        entity.insert(slot.slot_name.clone(), value.clone());
    }
    let digest = hasher.finalize();
    let colour = CAR_COLOURS[digest[0] as usize % CAR_COLOURS.len()];
    let make = CAR_MAKES[digest[1] as usize % CAR_MAKES.len()];
    let mut phone = String::from("07");
    for b in digest.iter().skip(2).take(9) {
        phone.push(char::from(b'0' + b % 10));
    }
    entity.insert("car".to_string(), format!("{colour} {make}"));
    entity.insert("phone".to_string(), phone);
    entity
}

/// Policy instruction: decides whether the database must be consulted for this turn.
///
/// Returns `NoCallNeeded` when the null function is selected or the call is unchanged
/// from the previous turn (compared after normalization); otherwise queries and reports
/// the count with the first `samples` matches.
pub fn observe(
    prev: Option<&FunctionCall>,
    call: &FunctionCall,
    db: &DatabaseSet,
    registry: &FunctionRegistry,
    normalizer: &Normalizer,
    samples: usize,
) -> Result<Observation, DbError> {
    if call.is_null() {
        return Ok(Observation::NoCallNeeded);
    }
    let current = call.normalized(registry, normalizer);
    if let Some(prev) = prev {
        if prev.normalized(registry, normalizer) == current {
            return Ok(Observation::NoCallNeeded);
        }
    }
    let belief = function_call_to_belief(&current, registry, normalizer);
    let mut result = db.query(&belief, registry, normalizer)?;
    result.matches.truncate(samples);
    Ok(Observation::EntityCount {
        count: result.count,
        samples: result.matches,
    })
}

/// Text form of an observation as injected into prompts and exports.
pub fn render_observation(obs: &Observation) -> String {
    obs.render()
}
