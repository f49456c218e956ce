//! Append-only JSONL log of every backend call.

use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use spectod_core::backend::{Backend, BackendError, Decoding, GenerationRequest, GenerationResult};
use spectod_core::prompt::ChatPayload;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub tag: String,
    pub payload: ChatPayload,
    pub decoding: Decoding,
    pub result: Result<GenerationResult, BackendError>,
}

/// Wraps a backend and records each request/response pair, flushed per call.
pub struct TracingBackend<B> {
    inner: B,
    sink: Mutex<File>,
}

impl<B: Backend> TracingBackend<B> {
    pub fn open(inner: B, path: &Path) -> io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(TracingBackend {
            inner,
            sink: Mutex::new(file),
        })
    }
}

impl<B: Backend> Backend for TracingBackend<B> {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResult, BackendError> {
        let result = self.inner.generate(request);
        let record = TraceRecord {
            tag: request.tag.clone(),
            payload: request.payload.clone(),
            decoding: request.decoding.clone(),
            result: result.clone(),
        };
        let line = serde_json::to_string(&record).expect("trace record serializes");
        let mut sink = self.sink.lock().expect("trace lock");
        if let Err(e) = writeln!(sink, "{line}").and_then(|_| sink.flush()) {
            return Err(BackendError::Transport {
                message: format!("trace write failed: {e}"),
                attempts: 0,
            });
        }
        result
    }
}

/// Reads a trace file back, e.g. to build replay fixtures.
pub fn read_trace(path: &Path) -> io::Result<Vec<TraceRecord>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e)))
        .collect()
}
