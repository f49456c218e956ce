//! JSONL files: six-role corpora, session transcripts (one turn per line) and export output.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use spectod_core::corpus::SixRoleDialogue;
use spectod_core::dialogue::{DialogueSession, SessionTurn, TurnOutcome};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum JsonlError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> JsonlError + '_ {
    move |source| JsonlError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Non-empty lines with their 1-based numbers.
fn lines(path: &Path) -> Result<Vec<(usize, String)>, JsonlError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    Ok(text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l.to_string()))
        .collect())
}

/// Writes to a sibling temporary file, then renames it over `path`.
pub fn write_lines<I: IntoIterator<Item = String>>(
    path: &Path,
    lines: I,
) -> Result<(), JsonlError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let tmp = path.with_extension("tmp");
    {
        let file = File::create(&tmp).map_err(io_err(&tmp))?;
        let mut w = BufWriter::new(file);
        for l in lines {
            writeln!(w, "{l}").map_err(io_err(&tmp))?;
        }
        w.flush().map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), JsonlError> {
    let text = serde_json::to_string_pretty(value).expect("value serializes");
    write_lines(path, [text])
}

pub fn read_dialogues(path: &Path) -> Result<Vec<SixRoleDialogue>, JsonlError> {
    lines(path)?
        .into_iter()
        .map(|(line, l)| {
            SixRoleDialogue::from_json(&l).map_err(|message| JsonlError::Parse {
                path: path.to_path_buf(),
                line,
                message,
            })
        })
        .collect()
}

pub fn write_dialogues(path: &Path, dialogues: &[SixRoleDialogue]) -> Result<(), JsonlError> {
    write_lines(path, dialogues.iter().map(SixRoleDialogue::to_json))
}

/// One transcript line: a single turn of a single dialogue.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptLine {
    pub dialogue_id: String,
    pub turn: usize,
    pub user: String,
    pub outcome: TurnOutcome,
}

impl TranscriptLine {
    pub fn new(dialogue_id: &str, turn: &SessionTurn) -> Self {
        TranscriptLine {
            dialogue_id: dialogue_id.to_string(),
            turn: turn.turn,
            user: turn.user.clone(),
            outcome: turn.outcome.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("transcript line serializes")
    }
}

pub fn session_lines(session: &DialogueSession) -> impl Iterator<Item = String> + '_ {
    session
        .turns
        .iter()
        .map(|t| TranscriptLine::new(&session.dialogue_id, t).to_json())
}

/// Groups transcript lines into sessions ordered by id; turns must be consecutive from 1.
pub fn read_sessions(path: &Path) -> Result<Vec<DialogueSession>, JsonlError> {
    let mut sessions: BTreeMap<String, DialogueSession> = BTreeMap::new();
    for (line, l) in lines(path)? {
        let parse = |message: String| JsonlError::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let t: TranscriptLine = serde_json::from_str(&l).map_err(|e| parse(e.to_string()))?;
        let s = sessions
            .entry(t.dialogue_id.clone())
            .or_insert_with(|| DialogueSession::new(t.dialogue_id.clone()));
        if t.turn != s.next_turn() {
            return Err(parse(format!(
                "{}: turn {} follows turn {}",
                t.dialogue_id,
                t.turn,
                s.turns.len()
            )));
        }
        s.turns.push(SessionTurn {
            turn: t.turn,
            user: t.user,
            outcome: t.outcome,
        });
    }
    Ok(sessions.into_values().collect())
}

/// Per-dialogue transcript file appended after every turn, so a crash loses at most the
/// turn in progress.
pub struct SessionWriter {
    dir: PathBuf,
}

impl SessionWriter {
    pub fn new(dir: &Path) -> Result<Self, JsonlError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        Ok(SessionWriter {
            dir: dir.to_path_buf(),
        })
    }

    pub fn path_for(&self, dialogue_id: &str) -> PathBuf {
        let safe: String = dialogue_id
            .chars()
            .map(|c| {
                if c.is_ascii_alphanumeric() || "-_.".contains(c) {
                    c
                } else {
                    '_'
                }
            })
            .collect();
        self.dir.join(format!("{safe}.jsonl"))
    }

    /// Appends the session's newest turn.
    pub fn append_last(&self, session: &DialogueSession) -> Result<(), JsonlError> {
        let Some(turn) = session.turns.last() else {
            return Ok(());
        };
        let path = self.path_for(&session.dialogue_id);
        if turn.turn == 1 && path.exists() {
            fs::remove_file(&path).map_err(io_err(&path))?;
        }
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(io_err(&path))?;
        writeln!(
            f,
            "{}",
            TranscriptLine::new(&session.dialogue_id, turn).to_json()
        )
        .map_err(io_err(&path))?;
        f.flush().map_err(io_err(&path))
    }
}
