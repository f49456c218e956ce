//! Delexicalization: replacing entity values in responses with `[value_xxx]` placeholders.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::Deserialize;

use crate::dialogue::Entity;

#[derive(Debug, Clone, Deserialize)]
struct InventoryFile {
    inventory: Vec<String>,
    act_slots: BTreeMap<String, String>,
    entity_attributes: BTreeMap<String, String>,
    requestables: BTreeMap<String, String>,
    offer: BTreeMap<String, String>,
}

/// The placeholder inventory and the tables mapping annotations onto it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Placeholders {
    inventory: BTreeSet<String>,
    act_slots: BTreeMap<String, String>,
    entity_attributes: BTreeMap<String, String>,
    requestables: BTreeMap<String, String>,
    offer: BTreeMap<String, String>,
}

impl Default for Placeholders {
    fn default() -> Self {
        Self::from_json(include_str!("../data/placeholders.json"))
            .expect("bundled inventory is valid")
    }
}

pub fn placeholder(name: &str) -> String {
    format!("[value_{name}]")
}

impl Placeholders {
    pub fn from_json(text: &str) -> Result<Self, String> {
        let f: InventoryFile = serde_json::from_str(text).map_err(|e| e.to_string())?;
        let inventory: BTreeSet<String> = f.inventory.into_iter().collect();
        let tables = [
            &f.act_slots,
            &f.entity_attributes,
            &f.requestables,
            &f.offer,
        ];
        for table in tables {
            for target in table.values() {
                if !inventory.contains(target) {
                    return Err(format!("`{target}` is not in the placeholder inventory"));
                }
            }
        }
        Ok(Placeholders {
            inventory,
            act_slots: f.act_slots,
            entity_attributes: f.entity_attributes,
            requestables: f.requestables,
            offer: f.offer,
        })
    }

    pub fn contains(&self, token: &str) -> bool {
        token
            .strip_prefix("[value_")
            .and_then(|t| t.strip_suffix(']'))
            .is_some_and(|name| self.inventory.contains(name))
    }

    pub fn for_act_slot(&self, slot: &str) -> Option<String> {
        self.act_slots
            .get(&slot.trim().to_lowercase())
            .map(|n| placeholder(n))
    }

    pub fn for_attribute(&self, attr: &str) -> Option<String> {
        self.entity_attributes.get(attr).map(|n| placeholder(n))
    }

    /// Placeholder that must appear for a goal-requestable slot to count as provided.
    pub fn for_requestable(&self, slot: &str) -> Option<String> {
        self.requestables
            .get(&slot.trim().to_lowercase())
            .map(|n| placeholder(n))
    }

    /// Placeholder that marks a response as offering a concrete venue in `domain`.
    pub fn offer_for(&self, domain: &str) -> Option<String> {
        self.offer.get(domain).map(|n| placeholder(n))
    }

    /// Candidate (surface value, placeholder) pairs from an entity and act annotations,
    /// ordered longest value first, ties broken by placeholder then value.
    pub fn candidates(
        &self,
        entity: &Entity,
        act_slots: &[(String, String)],
    ) -> Vec<(String, String)> {
        let mut set = BTreeSet::new();
        for (attr, value) in entity {
            if let Some(p) = self.for_attribute(attr) {
                if usable(value) {
                    set.insert((value.trim().to_string(), p));
                }
            }
        }
        for (slot, value) in act_slots {
            if let Some(p) = self.for_act_slot(slot) {
                if usable(value) {
                    set.insert((value.trim().to_string(), p));
                }
            }
        }
        let mut out: Vec<(String, String)> = set.into_iter().collect();
        out.sort_by(|a, b| {
            b.0.chars()
                .count()
                .cmp(&a.0.chars().count())
                .then_with(|| a.1.cmp(&b.1))
                .then_with(|| a.0.cmp(&b.0))
        });
        out
    }

    /// Replaces every candidate value in `response`; see [`delexicalize_spans`].
    pub fn delexicalize(
        &self,
        response: &str,
        entity: &Entity,
        act_slots: &[(String, String)],
    ) -> String {
        delexicalize_spans(response, &self.candidates(entity, act_slots)).0
    }
}

fn usable(value: &str) -> bool {
    let v = value.trim();
    !v.is_empty()
        && !matches!(
            v.to_lowercase().as_str(),
            "none" | "?" | "dontcare" | "not mentioned"
        )
        && v.chars().any(is_word)
}

fn is_word(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// Replaces whole-word, ASCII-case-insensitive occurrences of each candidate value with its
/// placeholder, longest candidates first. Returns the new text and the replaced
/// `(placeholder, original surface)` pairs in text order.
pub fn delexicalize_spans(
    text: &str,
    candidates: &[(String, String)],
) -> (String, Vec<(String, String)>) {
    let chars: Vec<char> = text.chars().collect();
    let mut claimed = alloc::vec![false; chars.len()];
    let mut spans: Vec<(usize, usize, &str)> = Vec::new();
    for (value, ph) in candidates {
        let needle: Vec<char> = value.chars().collect();
        if needle.is_empty() || needle.len() > chars.len() {
            continue;
        }
        let mut i = 0;
        while i + needle.len() <= chars.len() {
            let end = i + needle.len();
            let fits = chars[i..end]
                .iter()
                .zip(&needle)
                .all(|(a, b)| a.eq_ignore_ascii_case(b))
                && !claimed[i..end].iter().any(|&c| c)
                && (i == 0 || !is_word(chars[i - 1]))
                && (end == chars.len() || !is_word(chars[end]));
            if fits {
                claimed[i..end].iter_mut().for_each(|c| *c = true);
                spans.push((i, end, ph));
                i = end;
            } else {
                i += 1;
            }
        }
    }
    spans.sort_by_key(|s| s.0);
    let mut out = String::with_capacity(text.len());
    let mut replaced = Vec::with_capacity(spans.len());
    let mut at = 0;
    for (start, end, ph) in spans {
        out.extend(&chars[at..start]);
        out.push_str(ph);
        replaced.push((ph.to_string(), chars[start..end].iter().collect()));
        at = end;
    }
    out.extend(&chars[at..]);
    (out, replaced)
}

/// Every `[value_xxx]` token in `text`, in order.
pub fn placeholders_in(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut rest = text;
    let mut offset = 0;
    while let Some(start) = rest.find("[value_") {
        let after = &rest[start..];
        match after.find(']') {
            Some(close) => {
                out.push(&text[offset + start..offset + start + close + 1]);
                offset += start + close + 1;
                rest = &text[offset..];
            }
            None => break,
        }
    }
    out
}

/// Fills placeholders in order of appearance; the n-th occurrence of a placeholder takes the
/// n-th fill, reusing the last one when fills run out. Unfilled placeholders stay in place.
pub fn lexicalize(text: &str, fills: &BTreeMap<String, Vec<String>>) -> String {
    let mut used: BTreeMap<&str, usize> = BTreeMap::new();
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(start) = rest.find("[value_") {
        let Some(close) = rest[start..].find(']') else {
            break;
        };
        let token = &rest[start..start + close + 1];
        out.push_str(&rest[..start]);
        match fills.get(token).filter(|v| !v.is_empty()) {
            Some(values) => {
                let n = used.entry(token).or_insert(0);
                out.push_str(&values[(*n).min(values.len() - 1)]);
                *n += 1;
            }
            None => out.push_str(token),
        }
        rest = &rest[start + close + 1..];
    }
    out.push_str(rest);
    out
}

/// Fills each placeholder with the matching attribute of `entity`.
pub fn lexicalize_with_entity(text: &str, entity: &Entity, placeholders: &Placeholders) -> String {
    let mut fills: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for (attr, value) in entity {
        if let Some(p) = placeholders.for_attribute(attr) {
            fills.entry(p).or_default().push(value.clone());
        }
    }
    lexicalize(text, &fills)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn acts(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs
            .iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect()
    }

    #[test]
    fn choice_substitution() {
        let p = Placeholders::default();
        let out = p.delexicalize(
            "There are 3 options",
            &Entity::new(),
            &acts(&[("Choice", "3")]),
        );
        assert_eq!(out, "There are [value_choice] options");
    }

    #[test]
    fn untouched_text() {
        let p = Placeholders::default();
        let text = "Is there anything else I can help with?";
        assert_eq!(
            p.delexicalize(text, &Entity::new(), &acts(&[("Area", "north")])),
            text
        );
    }

    #[test]
    fn longest_match_wins_and_words_are_whole() {
        let p = Placeholders::default();
        let mut e = Entity::new();
        e.insert("name".into(), "golden wok house".into());
        e.insert("food".into(), "wok".into());
        let out = p.delexicalize("Golden Wok House serves wok dishes, not woks.", &e, &[]);
        assert_eq!(out, "[value_name] serves [value_food] dishes, not woks.");
    }

    #[test]
    fn spans_relexicalize() {
        let cands = vec![
            ("centre".to_string(), placeholder("area")),
            ("2".to_string(), placeholder("choice")),
        ];
        let text = "I found 2 places in the Centre and 2 more.";
        let (delex, spans) = delexicalize_spans(text, &cands);
        assert_eq!(
            delex,
            "I found [value_choice] places in the [value_area] and [value_choice] more."
        );
        let mut fills: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for (ph, orig) in spans {
            fills.entry(ph).or_default().push(orig);
        }
        assert_eq!(lexicalize(&delex, &fills), text);
    }

    #[test]
    fn inventory_membership() {
        let p = Placeholders::default();
        assert!(p.contains("[value_phone]"));
        assert!(!p.contains("[value_colour]"));
        assert_eq!(
            placeholders_in("a [value_name] b [value_phone]."),
            vec!["[value_name]", "[value_phone]"]
        );
        assert_eq!(p.for_requestable("Phone").as_deref(), Some("[value_phone]"));
        assert_eq!(p.offer_for("train").as_deref(), Some("[value_id]"));
    }

    #[test]
    fn rejects_unknown_targets() {
        let bad = r#"{"inventory":["name"],"act_slots":{"x":"colour"},"entity_attributes":{},"requestables":{},"offer":{}}"#;
        assert!(Placeholders::from_json(bad).is_err());
    }
}
