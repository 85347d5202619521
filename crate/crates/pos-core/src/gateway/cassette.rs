//! Record/replay cassettes: JSONL files keyed by a digest of the full request,
//! so replayed runs never depend ambiguously on request order.

use super::{CompletionParams, GatewayError};
use serde::{Deserialize, Serialize};
use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CassetteEntry {
    pub digest: String,
    pub template_id: String,
    pub prompt: String,
    pub params: CompletionParams,
    pub response: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recorded_at: Option<String>,
}

/// An in-memory cassette: one response per request digest.
#[derive(Debug, Default)]
pub struct Cassette {
    responses: HashMap<String, String>,
}

impl Cassette {
    pub fn load(path: &Path) -> Result<Cassette, GatewayError> {
        let reader = BufReader::new(File::open(path)?);
        let mut responses: HashMap<String, String> = HashMap::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: CassetteEntry = serde_json::from_str(&line).map_err(|e| {
                GatewayError::Backend(format!("cassette line {}: {e}", i + 1))
            })?;
            if let Some(existing) = responses.get(&entry.digest) {
                if existing != &entry.response {
                    return Err(GatewayError::CassetteConflict { digest: entry.digest });
                }
            }
            responses.insert(entry.digest, entry.response);
        }
        Ok(Cassette { responses })
    }

    pub fn get(&self, digest: &str) -> Option<&str> {
        self.responses.get(digest).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }
}

/// Appends cassette entries to a file, writing each digest at most once.
pub struct CassetteWriter {
    inner: Mutex<WriterState>,
    /// When true, entries carry a wall-clock timestamp. Off for generated
    /// fixtures so regeneration is byte-stable.
    stamp: bool,
}

struct WriterState {
    out: BufWriter<File>,
    seen: HashSet<String>,
}

impl CassetteWriter {
    pub fn create(path: &Path, stamp: bool) -> Result<CassetteWriter, GatewayError> {
        let out = BufWriter::new(File::create(path)?);
        Ok(CassetteWriter { inner: Mutex::new(WriterState { out, seen: HashSet::new() }), stamp })
    }

    pub fn append(&self, mut entry: CassetteEntry) -> Result<(), GatewayError> {
        let mut state = self.inner.lock().expect("cassette writer poisoned");
        if !state.seen.insert(entry.digest.clone()) {
            return Ok(());
        }
        if self.stamp {
            entry.recorded_at = Some(now_utc());
        }
        let line = serde_json::to_string(&entry)
            .map_err(|e| GatewayError::Backend(format!("cassette serialization: {e}")))?;
        state.out.write_all(line.as_bytes())?;
        state.out.write_all(b"\n")?;
        state.out.flush()?;
        Ok(())
    }
}

fn now_utc() -> String {
    let secs = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    // Seconds since the epoch; precise wall-clock formatting is not needed
    // for replay, only provenance.
    format!("epoch:{secs}")
}
