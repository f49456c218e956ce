//! Readers for the MultiWOZ 2.0, 2.1 and 2.2 release layouts.
//!
//! Every reader produces the same [`RawDialogue`] shape: user entries at even log positions,
//! system entries at odd ones, with the belief annotation (schema slot names) on system
//! entries. Dialogue ids drop the `.json` suffix used by the releases.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde_json::Value;
use spectod_core::corpus::{
    Acts, DomainGoal, Goal, LogEntry, RawDialogue, SplitName, StateAnnotation,
};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Version {
    V20,
    V21,
    V22,
}

impl FromStr for Version {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "2.0" | "20" => Ok(Version::V20),
            "2.1" | "21" => Ok(Version::V21),
            "2.2" | "22" => Ok(Version::V22),
            other => Err(format!(
                "unsupported corpus version `{other}` (expected 2.0, 2.1 or 2.2)"
            )),
        }
    }
}

impl fmt::Display for Version {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Version::V20 => "2.0",
            Version::V21 => "2.1",
            Version::V22 => "2.2",
        })
    }
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("{path}: invalid JSON at byte {offset} (line {line}, column {column}): {message}")]
    Json {
        path: PathBuf,
        offset: usize,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{list}: dialogue `{id}` is not in the data file")]
    DanglingId { list: PathBuf, id: String },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawSplits {
    pub train: Vec<RawDialogue>,
    pub dev: Vec<RawDialogue>,
    pub test: Vec<RawDialogue>,
}

impl RawSplits {
    pub fn get(&self, name: SplitName) -> &[RawDialogue] {
        match name {
            SplitName::Train => &self.train,
            SplitName::Dev => &self.dev,
            SplitName::Test => &self.test,
        }
    }

    fn sort(&mut self) {
        for s in [&mut self.train, &mut self.dev, &mut self.test] {
            s.sort_by(|a, b| a.id.cmp(&b.id));
        }
    }
}

fn read_text(path: &Path) -> Result<String, IngestError> {
    if !path.is_file() {
        return Err(IngestError::MissingFile(path.to_path_buf()));
    }
    fs::read_to_string(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Byte offset of a 1-based (line, column) position.
pub fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let start: usize = text
        .split_inclusive('\n')
        .take(line.saturating_sub(1))
        .map(str::len)
        .sum();
    (start + column.saturating_sub(1)).min(text.len())
}

fn read_json(path: &Path) -> Result<Value, IngestError> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| IngestError::Json {
        path: path.to_path_buf(),
        offset: byte_offset(&text, e.line(), e.column()),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

fn format_err(path: &Path, message: impl Into<String>) -> IngestError {
    IngestError::Format {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn strip_id(id: &str) -> String {
    id.trim().trim_end_matches(".json").to_string()
}

/// Maps a release slot name (`leaveAt`, `bookpeople`, `price range`) onto the schema's.
pub fn schema_slot(raw: &str) -> String {
    let key: String = raw
        .trim()
        .to_lowercase()
        .chars()
        .filter(|c| !matches!(c, ' ' | '_'))
        .collect();
    match key.as_str() {
        "leaveat" => "leave_at".into(),
        "arriveby" => "arrive_by".into(),
        "trainid" => "id".into(),
        k if k.starts_with("book") && k.len() > 4 => format!("book_{}", &k[4..]),
        _ => raw.trim().to_lowercase().replace(' ', "_"),
    }
}

fn string_value(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        Value::Bool(b) => Some(if *b { "yes" } else { "no" }.to_string()),
        _ => None,
    }
}

fn parse_acts(v: Option<&Value>) -> Acts {
    let mut acts = Acts::new();
    let Some(Value::Object(map)) = v else {
        return acts;
    };
    for (key, pairs) in map {
        let list = pairs
            .as_array()
            .map(|items| {
                items
                    .iter()
                    .filter_map(|p| {
                        let p = p.as_array()?;
                        Some((string_value(p.first()?)?, string_value(p.get(1)?)?))
                    })
                    .collect()
            })
            .unwrap_or_default();
        acts.insert(key.clone(), list);
    }
    acts
}

fn parse_metadata(v: Option<&Value>) -> StateAnnotation {
    let mut state = StateAnnotation::new();
    let Some(Value::Object(domains)) = v else {
        return state;
    };
    for (domain, body) in domains {
        let mut slots = BTreeMap::new();
        if let Some(Value::Object(semi)) = body.get("semi") {
            for (k, v) in semi {
                if let Some(s) = string_value(v) {
                    slots.insert(schema_slot(k), s);
                }
            }
        }
        if let Some(Value::Object(book)) = body.get("book") {
            for (k, v) in book {
                if k == "booked" {
                    continue;
                }
                if let Some(s) = string_value(v) {
                    slots.insert(format!("book_{}", schema_slot(k)), s);
                }
            }
        }
        state.insert(domain.to_lowercase(), slots);
    }
    state
}

fn parse_goal(v: Option<&Value>) -> Goal {
    let mut goal = Goal::new();
    let Some(Value::Object(domains)) = v else {
        return goal;
    };
    for (domain, body) in domains {
        if matches!(domain.as_str(), "message" | "topic") {
            continue;
        }
        let Value::Object(body) = body else { continue };
        let mut g = DomainGoal::default();
        if let Some(Value::Object(info)) = body.get("info") {
            for (k, v) in info {
                if let Some(s) = string_value(v) {
                    g.info.insert(schema_slot(k), s);
                }
            }
        }
        if let Some(Value::Array(reqt)) = body.get("reqt") {
            g.reqt = reqt.iter().filter_map(string_value).collect();
        }
        if let Some(Value::Object(book)) = body.get("book") {
            for (k, v) in book {
                if matches!(k.as_str(), "invalid" | "pre_invalid") {
                    continue;
                }
                if let Some(s) = string_value(v) {
                    g.book.insert(format!("book_{}", schema_slot(k)), s);
                }
            }
        }
        if g != DomainGoal::default() {
            goal.insert(domain.to_lowercase(), g);
        }
    }
    goal
}

fn read_list(path: &Path) -> Result<Vec<String>, IngestError> {
    Ok(read_text(path)?
        .lines()
        .map(strip_id)
        .filter(|l| !l.is_empty())
        .collect())
}

/// Distributes dialogues over splits using the dev and test list files.
fn split_by_lists(
    dir: &Path,
    mut all: BTreeMap<String, RawDialogue>,
) -> Result<RawSplits, IngestError> {
    let mut splits = RawSplits::default();
    for (file, target) in [
        ("valListFile.txt", SplitName::Dev),
        ("testListFile.txt", SplitName::Test),
    ] {
        let path = dir.join(file);
        for id in read_list(&path)? {
            let d = all.remove(&id).ok_or_else(|| IngestError::DanglingId {
                list: path.clone(),
                id: id.clone(),
            })?;
            match target {
                SplitName::Dev => splits.dev.push(d),
                _ => splits.test.push(d),
            }
        }
    }
    splits.train = all.into_values().collect();
    splits.sort();
    Ok(splits)
}

fn log_entries(path: &Path, id: &str, body: &Value) -> Result<Vec<LogEntry>, IngestError> {
    let log = body
        .get("log")
        .and_then(Value::as_array)
        .ok_or_else(|| format_err(path, format!("{id}: missing log")))?;
    if log.len() % 2 != 0 {
        return Err(format_err(
            path,
            format!("{id}: log has odd length {}", log.len()),
        ));
    }
    log.iter()
        .enumerate()
        .map(|(i, e)| {
            let text = e
                .get("text")
                .and_then(Value::as_str)
                .ok_or_else(|| format_err(path, format!("{id}: log entry {i} has no text")))?;
            Ok(LogEntry {
                text: text.to_string(),
                state: if i % 2 == 1 {
                    parse_metadata(e.get("metadata"))
                } else {
                    StateAnnotation::new()
                },
                acts: parse_acts(e.get("dialog_act")),
            })
        })
        .collect()
}

fn read_data_file(dir: &Path) -> Result<(PathBuf, BTreeMap<String, Value>), IngestError> {
    let path = dir.join("data.json");
    let Value::Object(map) = read_json(&path)? else {
        return Err(format_err(&path, "top level is not an object"));
    };
    Ok((
        path,
        map.into_iter().map(|(k, v)| (strip_id(&k), v)).collect(),
    ))
}

fn ingest_21(dir: &Path) -> Result<RawSplits, IngestError> {
    let (path, data) = read_data_file(dir)?;
    let mut all = BTreeMap::new();
    for (id, body) in &data {
        let log = log_entries(&path, id, body)?;
        all.insert(
            id.clone(),
            RawDialogue {
                id: id.clone(),
                goal: parse_goal(body.get("goal")),
                log,
            },
        );
    }
    split_by_lists(dir, all)
}

fn ingest_20(dir: &Path) -> Result<RawSplits, IngestError> {
    let (path, data) = read_data_file(dir)?;
    let acts_path = dir.join("dialogue_acts.json");
    let Value::Object(acts) = read_json(&acts_path)? else {
        return Err(format_err(&acts_path, "top level is not an object"));
    };
    let acts: BTreeMap<String, Value> = acts.into_iter().map(|(k, v)| (strip_id(&k), v)).collect();
    let mut all = BTreeMap::new();
    for (id, body) in &data {
        let mut log = log_entries(&path, id, body)?;
        if let Some(Value::Object(turns)) = acts.get(id) {
            for (k, v) in turns {
                let n: usize = k
                    .parse()
                    .map_err(|_| format_err(&acts_path, format!("{id}: turn key `{k}`")))?;
                if n == 0 || 2 * n > log.len() {
                    return Err(format_err(
                        &acts_path,
                        format!("{id}: turn {n} out of range"),
                    ));
                }
                log[2 * n - 1].acts = parse_acts(Some(v));
            }
        }
        all.insert(
            id.clone(),
            RawDialogue {
                id: id.clone(),
                goal: parse_goal(body.get("goal")),
                log,
            },
        );
    }
    split_by_lists(dir, all)
}

fn ingest_22(dir: &Path) -> Result<RawSplits, IngestError> {
    let acts_path = dir.join("dialog_acts.json");
    let Value::Object(acts) = read_json(&acts_path)? else {
        return Err(format_err(&acts_path, "top level is not an object"));
    };
    let acts: BTreeMap<String, Value> = acts.into_iter().map(|(k, v)| (strip_id(&k), v)).collect();
    let goals: BTreeMap<String, Goal> = if dir.join("data.json").is_file() {
        read_data_file(dir)?
            .1
            .into_iter()
            .map(|(id, body)| (id, parse_goal(body.get("goal"))))
            .collect()
    } else {
        BTreeMap::new()
    };

    let mut splits = RawSplits::default();
    for split in SplitName::ALL {
        let sub = dir.join(split.as_str());
        if !sub.is_dir() {
            return Err(IngestError::MissingFile(sub));
        }
        let mut files: Vec<PathBuf> = fs::read_dir(&sub)
            .map_err(|source| IngestError::Io {
                path: sub.clone(),
                source,
            })?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("dialogues_") && n.ends_with(".json"))
            })
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(IngestError::MissingFile(sub.join("dialogues_001.json")));
        }
        let target = match split {
            SplitName::Train => &mut splits.train,
            SplitName::Dev => &mut splits.dev,
            SplitName::Test => &mut splits.test,
        };
        for file in files {
            let Value::Array(items) = read_json(&file)? else {
                return Err(format_err(&file, "top level is not a list"));
            };
            for item in &items {
                target.push(dialogue_22(&file, item, &acts, &goals)?);
            }
        }
    }
    splits.sort();
    Ok(splits)
}

fn dialogue_22(
    path: &Path,
    item: &Value,
    acts: &BTreeMap<String, Value>,
    goals: &BTreeMap<String, Goal>,
) -> Result<RawDialogue, IngestError> {
    let id = strip_id(
        item.get("dialogue_id")
            .and_then(Value::as_str)
            .ok_or_else(|| format_err(path, "dialogue without id"))?,
    );
    let turns = item
        .get("turns")
        .and_then(Value::as_array)
        .ok_or_else(|| format_err(path, format!("{id}: missing turns")))?;
    let dialogue_acts = acts.get(&id);
    let mut log = Vec::with_capacity(turns.len());
    let mut state = StateAnnotation::new();
    for (i, turn) in turns.iter().enumerate() {
        let speaker = turn
            .get("speaker")
            .and_then(Value::as_str)
            .unwrap_or_default();
        let expected = if i % 2 == 0 { "USER" } else { "SYSTEM" };
        if !speaker.eq_ignore_ascii_case(expected) {
            return Err(format_err(
                path,
                format!("{id}: turn {i} is {speaker:?}, expected {expected}"),
            ));
        }
        let turn_id = turn
            .get("turn_id")
            .and_then(string_value)
            .unwrap_or_else(|| i.to_string());
        let turn_acts = parse_acts(
            dialogue_acts
                .and_then(|a| a.get(&turn_id))
                .and_then(|t| t.get("dialog_act")),
        );
        let text = turn
            .get("utterance")
            .and_then(Value::as_str)
            .unwrap_or_default()
            .to_string();
        if i % 2 == 0 {
            state = StateAnnotation::new();
            for frame in turn
                .get("frames")
                .and_then(Value::as_array)
                .into_iter()
                .flatten()
            {
                let Some(Value::Object(values)) =
                    frame.get("state").and_then(|s| s.get("slot_values"))
                else {
                    continue;
                };
                for (key, vals) in values {
                    let Some((domain, slot)) = key.split_once('-') else {
                        continue;
                    };
                    let value = match vals {
                        Value::Array(v) => v.first().and_then(string_value),
                        other => string_value(other),
                    };
                    if let Some(v) = value {
                        state
                            .entry(domain.to_lowercase())
                            .or_default()
                            .insert(schema_slot(slot), v);
                    }
                }
            }
            log.push(LogEntry {
                text,
                state: StateAnnotation::new(),
                acts: turn_acts,
            });
        } else {
            log.push(LogEntry {
                text,
                state: state.clone(),
                acts: turn_acts,
            });
        }
    }
    if log.len() % 2 != 0 {
        return Err(format_err(path, format!("{id}: ends on a user turn")));
    }
    Ok(RawDialogue {
        goal: goals.get(&id).cloned().unwrap_or_default(),
        id,
        log,
    })
}

/// Reads one corpus release from `dir`; splits are ordered by dialogue id.
pub fn ingest(dir: &Path, version: Version) -> Result<RawSplits, IngestError> {
    if !dir.is_dir() {
        return Err(IngestError::MissingFile(dir.to_path_buf()));
    }
    match version {
        Version::V20 => ingest_20(dir),
        Version::V21 => ingest_21(dir),
        Version::V22 => ingest_22(dir),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slot_names() {
        assert_eq!(schema_slot("leaveAt"), "leave_at");
        assert_eq!(schema_slot("arriveby"), "arrive_by");
        assert_eq!(schema_slot("bookpeople"), "book_people");
        assert_eq!(schema_slot("pricerange"), "pricerange");
        assert_eq!(schema_slot("Area"), "area");
    }

    #[test]
    fn offsets() {
        let text = "ab\ncde\nf";
        assert_eq!(byte_offset(text, 1, 1), 0);
        assert_eq!(byte_offset(text, 2, 2), 4);
        assert_eq!(byte_offset(text, 3, 1), 7);
    }
}
