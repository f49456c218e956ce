//! Slot value normalization shared by state tracking, database matching and scoring.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::Deserialize;

use crate::schema::{SlotSpec, ValueType};

/// Wildcard value meaning the user accepts any value.
pub const DONTCARE: &str = "dontcare";

#[derive(Debug, Clone, Deserialize)]
struct TableFile {
    synonyms: BTreeMap<String, String>,
    dontcare: Vec<String>,
    boolean_true: Vec<String>,
    boolean_false: Vec<String>,
}

/// Normalization table: synonym map, wildcard spellings and boolean spellings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Normalizer {
    synonyms: BTreeMap<String, String>,
    dontcare: BTreeSet<String>,
    truthy: BTreeSet<String>,
    falsy: BTreeSet<String>,
}

impl Default for Normalizer {
    fn default() -> Self {
        Self::from_json(include_str!("../data/normalization.json")).expect("bundled table is valid")
    }
}

impl Normalizer {
    pub fn from_json(text: &str) -> Result<Self, String> {
        let file: TableFile = serde_json::from_str(text).map_err(|e| e.to_string())?;
        let clean = |s: &str| collapse(&s.to_lowercase());
        let synonyms: BTreeMap<String, String> = file
            .synonyms
            .iter()
            .map(|(k, v)| (clean(k), clean(v)))
            .collect();
        // A target that is itself a key would make normalization non-idempotent.
        for (k, v) in &synonyms {
            if synonyms.contains_key(v) {
                return Err(format!(
                    "synonym `{k}` maps to `{v}`, which is itself rewritten"
                ));
            }
            if v != DONTCARE && file.dontcare.iter().any(|d| &clean(d) == v) {
                return Err(format!("synonym `{k}` maps to wildcard spelling `{v}`"));
            }
        }
        Ok(Normalizer {
            synonyms,
            dontcare: file.dontcare.iter().map(|s| clean(s)).collect(),
            truthy: file.boolean_true.iter().map(|s| clean(s)).collect(),
            falsy: file.boolean_false.iter().map(|s| clean(s)).collect(),
        })
    }

    /// Lowercase, trim, map synonyms and wildcards, canonicalize times to `HH:MM`.
    pub fn normalize(&self, slot: &SlotSpec, raw: &str) -> String {
        self.normalize_typed(slot.value_type, raw)
    }

    pub fn normalize_typed(&self, value_type: ValueType, raw: &str) -> String {
        let value = collapse(&raw.to_lowercase());
        if value.is_empty() {
            return value;
        }
        if self.dontcare.contains(&value) {
            return DONTCARE.to_string();
        }
        match value_type {
            ValueType::Time => {
                if let Some(t) = canonical_time(&value) {
                    return t;
                }
            }
            ValueType::Boolean => {
                if self.truthy.contains(&value) {
                    return "yes".to_string();
                }
                if self.falsy.contains(&value) {
                    return "no".to_string();
                }
            }
            _ => {}
        }
        match self.synonyms.get(&value) {
            Some(canon) => canon.clone(),
            None => value,
        }
    }
}

fn collapse(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for word in s.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

/// Parses common spoken and written clock formats into 24h `HH:MM`.
pub fn canonical_time(value: &str) -> Option<String> {
    let compact: String = value.chars().filter(|c| !c.is_whitespace()).collect();
    let compact = compact.replace('.', ":");
    let (body, meridiem) = if let Some(b) = compact
        .strip_suffix("a:m:")
        .or(compact.strip_suffix("am"))
        .or(compact.strip_suffix("a:m"))
    {
        (b, Some(false))
    } else if let Some(b) = compact
        .strip_suffix("p:m:")
        .or(compact.strip_suffix("pm"))
        .or(compact.strip_suffix("p:m"))
    {
        (b, Some(true))
    } else {
        (compact.as_str(), None)
    };
    let body = body.trim_end_matches(':');
    let (h, m) = match body.split_once(':') {
        Some((h, m)) => (h, m),
        None if meridiem.is_some() => (body, "0"),
        None if body.len() == 4 => (&body[..2], &body[2..]),
        None => return None,
    };
    if h.is_empty() || h.len() > 2 || m.is_empty() || m.len() > 2 {
        return None;
    }
    if !h.bytes().all(|b| b.is_ascii_digit()) || !m.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let mut hour: u32 = h.parse().ok()?;
    let minute: u32 = m.parse().ok()?;
    if minute > 59 {
        return None;
    }
    match meridiem {
        Some(pm) => {
            if hour == 0 || hour > 12 {
                return None;
            }
            hour %= 12;
            if pm {
                hour += 12;
            }
        }
        None if hour > 24 => return None,
        None => {}
    }
    if hour == 24 {
        if minute != 0 {
            return None;
        }
        hour = 0;
    }
    Some(format!("{hour:02}:{minute:02}"))
}
