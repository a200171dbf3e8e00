//! Append-only task journal: one JSON object per line, replayed on
//! startup to recover queue state after a crash.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hub::{is_valid_transition, TaskState};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct JournalRecord {
    pub ts: String,
    pub product_id: String,
    pub from: String,
    pub to: String,
    pub detail: String,
}

pub struct Journal {
    path: PathBuf,
    file: Mutex<File>,
}

impl Journal {
    pub fn open(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)
                .map_err(|e| Error::io_at(format!("create {}", dir.display()), e))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io_at(format!("open journal {}", path.display()), e))?;
        Ok(Self {
            path: path.to_path_buf(),
            file: Mutex::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Appends one transition. The write is flushed before returning so
    /// a crash after this call replays the new state.
    pub fn append(
        &self,
        ts: DateTime<Utc>,
        product_id: &str,
        from: &TaskState,
        to: &TaskState,
    ) -> Result<()> {
        debug_assert!(
            is_valid_transition(from, to),
            "invalid transition {} -> {}",
            from.name(),
            to.name()
        );
        let detail = match to {
            TaskState::Failed { reason } => reason.clone(),
            TaskState::LtaRequested { at } => at.to_rfc3339_opts(SecondsFormat::Secs, true),
            _ => String::new(),
        };
        let record = JournalRecord {
            ts: ts.to_rfc3339_opts(SecondsFormat::Secs, true),
            product_id: product_id.to_string(),
            from: from.name().to_string(),
            to: to.name().to_string(),
            detail,
        };
        let mut line = serde_json::to_string(&record)?;
        line.push('\n');
        let mut file = self.file.lock().unwrap();
        file.write_all(line.as_bytes())
            .and_then(|()| file.flush())
            .map_err(|e| Error::io_at(format!("append journal {}", self.path.display()), e))?;
        Ok(())
    }
}

/// Replays a journal into the final state per product, validating every
/// edge against the transition graph.
pub fn replay(path: &Path) -> Result<BTreeMap<String, TaskState>> {
    let mut states: BTreeMap<String, TaskState> = BTreeMap::new();
    if !path.exists() {
        return Ok(states);
    }
    let file =
        File::open(path).map_err(|e| Error::io_at(format!("open journal {}", path.display()), e))?;
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io_at(format!("read journal {}", path.display()), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: JournalRecord = serde_json::from_str(&line)
            .map_err(|e| Error::parse(path, lineno + 1, format!("journal record: {e}")))?;
        let to = state_from_record(&record, path, lineno + 1)?;
        let current = states
            .get(&record.product_id)
            .cloned()
            .unwrap_or(TaskState::Queued);
        if current.name() != record.from {
            return Err(Error::parse(
                path,
                lineno + 1,
                format!(
                    "journal expects {} in state {}, replay has {}",
                    record.product_id,
                    record.from,
                    current.name()
                ),
            ));
        }
        if !is_valid_transition(&current, &to) {
            return Err(Error::parse(
                path,
                lineno + 1,
                format!("invalid transition {} -> {}", record.from, record.to),
            ));
        }
        states.insert(record.product_id, to);
    }
    Ok(states)
}

fn state_from_record(record: &JournalRecord, path: &Path, lineno: usize) -> Result<TaskState> {
    Ok(match record.to.as_str() {
        "queued" => TaskState::Queued,
        "lta_requested" => {
            let at = DateTime::parse_from_rfc3339(&record.detail)
                .map_err(|e| Error::parse(path, lineno, format!("lta_requested timestamp: {e}")))?
                .with_timezone(&Utc);
            TaskState::LtaRequested { at }
        }
        "online" => TaskState::Online,
        "downloading" => TaskState::Downloading,
        "done" => TaskState::Done,
        "failed" => TaskState::Failed {
            reason: record.detail.clone(),
        },
        other => return Err(Error::parse(path, lineno, format!("unknown state {other:?}"))),
    })
}

/// Reads all records in order, for trace checks in tests.
pub fn read_records(path: &Path) -> Result<Vec<JournalRecord>> {
    let mut records = Vec::new();
    if !path.exists() {
        return Ok(records);
    }
    let file =
        File::open(path).map_err(|e| Error::io_at(format!("open journal {}", path.display()), e))?;
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io_at(format!("read journal {}", path.display()), e))?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::parse(path, lineno + 1, format!("journal record: {e}")))?,
        );
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    #[test]
    fn append_and_replay() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("journal.ndjson");
        let journal = Journal::open(&path).unwrap();
        let t = Utc.timestamp_opt(1_600_000_000, 0).unwrap();

        journal
            .append(t, "P1", &TaskState::Queued, &TaskState::LtaRequested { at: t })
            .unwrap();
        journal
            .append(t, "P1", &TaskState::LtaRequested { at: t }, &TaskState::Online)
            .unwrap();
        journal
            .append(t, "P1", &TaskState::Online, &TaskState::Downloading)
            .unwrap();
        journal
            .append(t, "P2", &TaskState::Queued, &TaskState::Online)
            .unwrap();

        let states = replay(&path).unwrap();
        assert_eq!(states["P1"], TaskState::Downloading);
        assert_eq!(states["P2"], TaskState::Online);
    }

    #[test]
    fn replay_rejects_inconsistent_sequence() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("journal.ndjson");
        std::fs::write(
            &path,
            concat!(
                r#"{"ts":"2020-01-01T00:00:00Z","product_id":"P1","from":"queued","to":"online","detail":""}"#,
                "\n",
                r#"{"ts":"2020-01-01T00:01:00Z","product_id":"P1","from":"queued","to":"online","detail":""}"#,
                "\n",
            ),
        )
        .unwrap();
        let err = replay(&path).unwrap_err();
        assert!(err.to_string().contains("replay has online"), "{err}");
    }

    #[test]
    fn missing_journal_is_empty() {
        let dir = tempfile::tempdir().unwrap();
        let states = replay(&dir.path().join("absent.ndjson")).unwrap();
        assert!(states.is_empty());
    }
}
