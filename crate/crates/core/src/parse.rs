//! Parsing model completions into typed stage outputs.
//!
//! Parsing is total: malformed completions are repaired where possible and otherwise
//! replaced by a fallback, and each non-clean completion yields exactly one
//! [`Diagnostic`] describing what was done.

use alloc::borrow::ToOwned;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde_json::{Map, Value};
use thiserror::Error;

use crate::dialogue::{
    check_value, Action, ActionFrame, Diagnostic, DiagnosticKind, FunctionCall, Stage,
};
use crate::normalize::Normalizer;
use crate::schema::{FunctionRegistry, FunctionSpec};

/// A parsed value plus the diagnostic recorded when the completion was not clean.
#[derive(Debug, Clone, PartialEq)]
pub struct Parsed<T> {
    pub value: T,
    pub diagnostic: Option<Diagnostic>,
}

impl<T> Parsed<T> {
    fn clean(value: T) -> Self {
        Parsed {
            value,
            diagnostic: None,
        }
    }

    fn with(value: T, stage: Stage, kind: DiagnosticKind, notes: Vec<String>) -> Self {
        Parsed {
            value,
            diagnostic: Some(Diagnostic { stage, kind, notes }),
        }
    }

    pub fn is_clean(&self) -> bool {
        self.diagnostic.is_none()
    }
}

fn is_word(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_'
}

/// Byte offset of the first whole-word, case-insensitive occurrence of `needle`.
fn find_word(haystack: &str, needle: &str) -> Option<usize> {
    let hay = haystack.as_bytes();
    let n = needle.len();
    if n == 0 || n > hay.len() {
        return None;
    }
    (0..=hay.len() - n).find(|&i| {
        hay[i..i + n].eq_ignore_ascii_case(needle.as_bytes())
            && (i == 0 || !is_word(hay[i - 1]))
            && (i + n == hay.len() || !is_word(hay[i + n]))
    })
}

/// Picks the selected function from a domain-selection completion.
///
/// A completion that resolves directly (case and surrounding whitespace ignored) is clean.
/// Otherwise the earliest registry name appearing as a whole word wins, longer names
/// breaking ties; with no match the null function is returned as a fallback.
pub fn parse_domain<'r>(text: &str, registry: &'r FunctionRegistry) -> Parsed<&'r FunctionSpec> {
    if let Some(spec) = registry.resolve(text) {
        return Parsed::clean(spec);
    }
    let best = registry
        .functions()
        .iter()
        .filter_map(|f| find_word(text, &f.name).map(|at| (at, f)))
        .min_by(|a, b| {
            a.0.cmp(&b.0)
                .then_with(|| b.1.name.len().cmp(&a.1.name.len()))
        });
    match best {
        Some((_, spec)) => Parsed::with(
            spec,
            Stage::DomainSelection,
            DiagnosticKind::Repaired,
            alloc::vec![format!("extracted `{}` from surrounding text", spec.name)],
        ),
        None => Parsed::with(
            registry.null_function(),
            Stage::DomainSelection,
            DiagnosticKind::Fallback,
            alloc::vec![format!(
                "no function name in completion {:?}; using null",
                clip(text)
            )],
        ),
    }
}

fn clip(text: &str) -> String {
    let mut s: String = text.chars().take(60).collect();
    if text.chars().count() > 60 {
        s.push('…');
    }
    s
}

/// Contents of the first fenced code block, if any.
fn strip_fence(text: &str) -> Option<&str> {
    let open = text.find("```")?;
    let after = &text[open + 3..];
    // Skip an info string such as `json`.
    let body_start = after.find('\n').map(|i| i + 1).unwrap_or(0);
    let body = &after[body_start..];
    let close = body.find("```").unwrap_or(body.len());
    Some(body[..close].trim())
}

/// The first `{ ... }` span with balanced braces, skipping braces inside strings.
fn first_object(text: &str) -> Option<&str> {
    let start = text.find('{')?;
    let mut depth = 0usize;
    let mut in_str = false;
    let mut escaped = false;
    for (i, b) in text.bytes().enumerate().skip(start) {
        if in_str {
            match b {
                _ if escaped => escaped = false,
                b'\\' => escaped = true,
                b'"' => in_str = false,
                _ => {}
            }
            continue;
        }
        match b {
            b'"' => in_str = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&text[start..=i]);
                }
            }
            _ => {}
        }
    }
    None
}

/// Closes an unterminated string, trims a dangling separator, and appends missing closers.
fn balance(text: &str) -> Option<String> {
    let start = text.find('{')?;
    let body = text[start..].trim_end();
    let mut stack = Vec::new();
    let mut in_str = false;
    let mut escaped = false;
    for b in body.bytes() {
        if in_str {
            match b {
                _ if escaped => escaped = false,
                b'\\' => escaped = true,
                b'"' => in_str = false,
                _ => {}
            }
            continue;
        }
        match b {
            b'"' => in_str = true,
            b'{' => stack.push(b'}'),
            b'[' => stack.push(b']'),
            b'}' | b']' => {
                if stack.pop() != Some(b) {
                    return None;
                }
            }
            _ => {}
        }
    }
    if stack.is_empty() && !in_str {
        return None;
    }
    let mut out = body.to_owned();
    if in_str {
        out.push('"');
    }
    while out.ends_with(',') || out.ends_with(':') || out.ends_with(char::is_whitespace) {
        out.pop();
    }
    while let Some(c) = stack.pop() {
        out.push(char::from(c));
    }
    Some(out)
}

fn parse_object(text: &str) -> Option<Map<String, Value>> {
    match serde_json::from_str::<Value>(text) {
        Ok(Value::Object(m)) => Some(m),
        _ => None,
    }
}

/// Runs the repair ladder; returns the object and the repair notes.
fn recover_object(text: &str) -> Option<(Map<String, Value>, Vec<String>)> {
    let trimmed = text.trim();
    if let Some(m) = parse_object(trimmed) {
        return Some((m, Vec::new()));
    }
    let mut notes = Vec::new();
    let mut candidate = trimmed;
    if let Some(inner) = strip_fence(trimmed) {
        notes.push("stripped code fence".to_string());
        if let Some(m) = parse_object(inner) {
            return Some((m, notes));
        }
        candidate = inner;
    }
    if let Some(obj) = first_object(candidate) {
        if let Some(m) = parse_object(obj) {
            notes.push("extracted JSON object from surrounding text".to_string());
            return Some((m, notes));
        }
        let swapped = obj.replace('\'', "\"");
        if let Some(m) = parse_object(&swapped) {
            notes.push("replaced single quotes".to_string());
            return Some((m, notes));
        }
    }
    if let Some(fixed) = balance(candidate) {
        if let Some(m) = parse_object(&fixed) {
            notes.push("closed unbalanced brackets".to_string());
            return Some((m, notes));
        }
        let swapped = fixed.replace('\'', "\"");
        if let Some(m) = parse_object(&swapped) {
            notes.push("closed unbalanced brackets".to_string());
            notes.push("replaced single quotes".to_string());
            return Some((m, notes));
        }
    }
    None
}

fn scalar(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        Value::Bool(b) => Some(if *b { "yes" } else { "no" }.to_string()),
        _ => None,
    }
}

/// Slot/value pairs from an arguments value: an object, or a list of `[slot, value]` pairs.
fn argument_pairs(v: &Value, notes: &mut Vec<String>) -> Vec<(String, Value)> {
    match v {
        Value::Object(m) => m.iter().map(|(k, v)| (k.clone(), v.clone())).collect(),
        Value::Array(items) => {
            notes.push("arguments given as a list of pairs".to_string());
            items
                .iter()
                .filter_map(|item| match item {
                    Value::Array(pair) if pair.len() == 2 => {
                        pair[0].as_str().map(|s| (s.to_string(), pair[1].clone()))
                    }
                    _ => None,
                })
                .collect()
        }
        Value::Null => Vec::new(),
        _ => {
            notes.push("ignored non-object arguments".to_string());
            Vec::new()
        }
    }
}

/// Extracts the state-tracking call for `selected` from a completion.
///
/// Unknown slots and categorical values outside the slot's vocabulary are dropped. When no
/// JSON object can be recovered the result is an empty call on `selected`.
pub fn parse_call(
    text: &str,
    selected: &FunctionSpec,
    normalizer: &Normalizer,
) -> Parsed<FunctionCall> {
    let Some((obj, mut notes)) = recover_object(text) else {
        return Parsed::with(
            FunctionCall::new(selected.name.clone()),
            Stage::StateTracking,
            DiagnosticKind::Fallback,
            alloc::vec![format!(
                "no JSON object in completion {:?}; using empty call",
                clip(text)
            )],
        );
    };

    let has_envelope =
        obj.contains_key("name") || obj.contains_key("arguments") || obj.contains_key("argument");
    let pairs = if has_envelope {
        match obj.get("name").and_then(Value::as_str) {
            Some(name) if name.trim().eq_ignore_ascii_case(&selected.name) => {}
            Some(name) => notes.push(format!(
                "call names `{name}` but `{}` was selected; kept selection",
                selected.name
            )),
            None => notes.push("call has no name".to_string()),
        }
        let args = obj
            .get("arguments")
            .or_else(|| obj.get("argument"))
            .cloned()
            .unwrap_or(Value::Null);
        argument_pairs(&args, &mut notes)
    } else {
        notes.push("object without name treated as arguments".to_string());
        obj.into_iter().collect()
    };

    let mut arguments = BTreeMap::new();
    for (raw_slot, raw_value) in pairs {
        let slot = raw_slot.trim().to_lowercase();
        let Some(spec) = selected.slot(&slot) else {
            notes.push(format!("dropped unknown slot {raw_slot}"));
            continue;
        };
        if slot != raw_slot {
            notes.push(format!("renamed slot {raw_slot:?} to {slot}"));
        }
        let value = match scalar(&raw_value) {
            Some(v) => {
                if !raw_value.is_string() {
                    notes.push(format!("coerced non-string value for {slot}"));
                }
                v
            }
            None => {
                notes.push(format!("dropped non-scalar value for {slot}"));
                continue;
            }
        };
        if value.trim().is_empty() {
            notes.push(format!("dropped empty value for {slot}"));
            continue;
        }
        if let Some(violation) = check_value(spec, &value, normalizer) {
            notes.push(format!("dropped {violation}"));
            continue;
        }
        arguments.insert(slot, value);
    }

    let call = FunctionCall {
        name: selected.name.clone(),
        arguments,
    };
    if notes.is_empty() {
        Parsed::clean(call)
    } else {
        Parsed::with(call, Stage::StateTracking, DiagnosticKind::Repaired, notes)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FrameError {
    #[error("completion has no response text")]
    EmptyResponse,
}

fn strip_label<'a>(line: &'a str, label: &str) -> Option<&'a str> {
    let t = line.trim_start();
    let head = t.get(..label.len())?;
    head.eq_ignore_ascii_case(label)
        .then(|| t[label.len()..].trim())
}

/// Splits a `Action: <kind>\nResponse: <text>` completion.
///
/// Unknown labels become `General`, and text without the grammar is taken whole as a
/// `General` response; both record a diagnostic. An empty response is an error.
pub fn parse_frame(text: &str) -> Result<Parsed<ActionFrame>, FrameError> {
    let text = text.trim();
    if text.is_empty() {
        return Err(FrameError::EmptyResponse);
    }
    let mut notes = Vec::new();
    let mut lines = text.lines();
    let first = lines.next().unwrap_or_default();

    let (action, remainder): (Action, Vec<&str>) = match strip_label(first, "Action:") {
        Some(label) => {
            let action = match label.parse::<Action>() {
                Ok(a) => a,
                Err(_) => {
                    notes.push(format!("unknown action label {label:?}; using General"));
                    Action::General
                }
            };
            (action, lines.collect())
        }
        None => {
            notes.push("missing action label; using General".to_string());
            (Action::General, text.lines().collect())
        }
    };

    let mut body = remainder.into_iter().skip_while(|l| l.trim().is_empty());
    let response = match body.next() {
        Some(line) => {
            let (head, had_label) = match strip_label(line, "Response:") {
                Some(rest) => (rest, true),
                None => (line.trim(), false),
            };
            if !had_label && notes.is_empty() {
                notes.push("missing response label".to_string());
            }
            let mut out = head.to_string();
            for l in body {
                out.push('\n');
                out.push_str(l);
            }
            out.trim().to_string()
        }
        None => String::new(),
    };
    if response.is_empty() {
        return Err(FrameError::EmptyResponse);
    }
    let frame = ActionFrame::new(action, response);
    if notes.is_empty() {
        Ok(Parsed::clean(frame))
    } else {
        Ok(Parsed::with(
            frame,
            Stage::ResponseGeneration,
            DiagnosticKind::Repaired,
            notes,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn domains() {
        let reg = FunctionRegistry::multiwoz();
        let p = parse_domain("restaurant", &reg);
        assert_eq!(p.value.name, "restaurant");
        assert!(p.is_clean());
        let p = parse_domain("The domain is Hotel.", &reg);
        assert_eq!(p.value.name, "hotel");
        assert_eq!(p.diagnostic.unwrap().kind, DiagnosticKind::Repaired);
        let p = parse_domain("banking", &reg);
        assert!(p.value.is_null());
        assert_eq!(p.diagnostic.unwrap().kind, DiagnosticKind::Fallback);
    }

    #[test]
    fn clean_call() {
        let reg = FunctionRegistry::multiwoz();
        let n = Normalizer::default();
        let spec = reg.resolve("restaurant").unwrap();
        let want = FunctionCall::new("restaurant")
            .with("area", "centre")
            .with("food", "thai");
        let p = parse_call(&want.to_json(), spec, &n);
        assert!(p.is_clean());
        assert_eq!(p.value, want);
    }

    #[test]
    fn unrecoverable_call() {
        let reg = FunctionRegistry::multiwoz();
        let spec = reg.resolve("hotel").unwrap();
        let p = parse_call("I cannot help", spec, &Normalizer::default());
        assert_eq!(p.value, FunctionCall::new("hotel"));
        assert_eq!(p.diagnostic.unwrap().kind, DiagnosticKind::Fallback);
    }

    #[test]
    fn frames() {
        let p = parse_frame("Action: Request\nResponse: What [value_area] ...?").unwrap();
        assert!(p.is_clean());
        assert_eq!(
            p.value,
            ActionFrame::new(Action::Request, "What [value_area] ...?")
        );
        let p = parse_frame("Action: recommendation\nResponse: Try [value_name].").unwrap();
        assert_eq!(p.value.action, Action::General);
        assert!(!p.is_clean());
        let p = parse_frame("How about [value_name]?").unwrap();
        assert_eq!(
            p.value,
            ActionFrame::new(Action::General, "How about [value_name]?")
        );
        assert!(!p.is_clean());
        assert_eq!(
            parse_frame("Action: Info\nResponse:   "),
            Err(FrameError::EmptyResponse)
        );
        assert_eq!(parse_frame(""), Err(FrameError::EmptyResponse));
    }

    #[test]
    fn frame_round_trip() {
        for a in Action::ALL {
            let f = ActionFrame::new(a, "line one\nline two");
            let p = parse_frame(&f.render()).unwrap();
            assert!(p.is_clean());
            assert_eq!(p.value, f);
        }
    }
}
