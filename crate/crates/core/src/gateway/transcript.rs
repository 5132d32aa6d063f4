use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use tokio::sync::Mutex;

use super::{Conversation, GatewayError, Role};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TranscriptId(pub u64);

impl fmt::Display for TranscriptId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t{:06}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub role: Role,
    pub text: String,
    /// SHA-256 of each attached image; the bytes are never logged.
    pub image_digests: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub id: TranscriptId,
    pub started_at: DateTime<Utc>,
    pub finished_at: DateTime<Utc>,
    pub system: String,
    pub turns: Vec<TurnRecord>,
    pub response: String,
}

#[derive(Debug)]
enum Store {
    File { path: PathBuf, file: File },
    Memory(Vec<TranscriptRecord>),
}

#[derive(Debug)]
struct Inner {
    next: u64,
    store: Store,
}

/// Append-only JSON-lines log of every model call. Writes are serialized.
#[derive(Debug)]
pub struct TranscriptSink {
    inner: Mutex<Inner>,
}

fn unavailable(e: impl fmt::Display) -> GatewayError {
    GatewayError::SinkUnavailable(e.to_string())
}

impl TranscriptSink {
    pub fn in_memory() -> Self {
        Self {
            inner: Mutex::new(Inner {
                next: 1,
                store: Store::Memory(Vec::new()),
            }),
        }
    }

    /// Opens (or creates) a log file, continuing after its highest id.
    pub fn open(path: &Path) -> Result<Self, GatewayError> {
        let mut next = 1;
        if path.exists() {
            for rec in read_records(path)? {
                next = next.max(rec.id.0 + 1);
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(unavailable)?;
        Ok(Self {
            inner: Mutex::new(Inner {
                next,
                store: Store::File {
                    path: path.to_owned(),
                    file,
                },
            }),
        })
    }

    pub async fn record(&self, conv: &Conversation, response: &str, started_at: DateTime<Utc>) -> Result<TranscriptId, GatewayError> {
        let mut inner = self.inner.lock().await;
        let id = TranscriptId(inner.next);
        let rec = TranscriptRecord {
            id,
            started_at,
            finished_at: Utc::now(),
            system: conv.system.clone(),
            turns: conv
                .turns
                .iter()
                .map(|t| TurnRecord {
                    role: t.role,
                    text: t.text.clone(),
                    image_digests: t.images.iter().map(|i| i.digest()).collect(),
                })
                .collect(),
            response: response.to_owned(),
        };
        match &mut inner.store {
            Store::File { file, .. } => {
                let mut line = serde_json::to_string(&rec).map_err(unavailable)?;
                line.push('\n');
                file.write_all(line.as_bytes()).map_err(unavailable)?;
                file.flush().map_err(unavailable)?;
            }
            Store::Memory(v) => v.push(rec),
        }
        inner.next += 1;
        Ok(id)
    }

    pub async fn lookup(&self, id: TranscriptId) -> Result<Option<TranscriptRecord>, GatewayError> {
        let inner = self.inner.lock().await;
        match &inner.store {
            Store::File { path, .. } => Ok(read_records(path)?.into_iter().find(|r| r.id == id)),
            Store::Memory(v) => Ok(v.iter().find(|r| r.id == id).cloned()),
        }
    }
}

/// Appends one transcript to `sink`.
pub async fn record_transcript(conv: &Conversation, response: &str, sink: &TranscriptSink) -> Result<TranscriptId, GatewayError> {
    sink.record(conv, response, Utc::now()).await
}

fn read_records(path: &Path) -> Result<Vec<TranscriptRecord>, GatewayError> {
    let f = File::open(path).map_err(unavailable)?;
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line.map_err(unavailable)?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(unavailable)?);
    }
    Ok(out)
}
