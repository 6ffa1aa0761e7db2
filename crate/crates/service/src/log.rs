//! Append-only event log.
//!
//! One JSON object per line: `{"check":"<hex>","entry":<json>}` where
//! `check` is the SHA-256 of the exact `entry` bytes. Entries are written in
//! batches, each closed by a commit line whose entry is `{"commit":<seq>}`
//! naming the batch's last sequence number. On open, the file is cut back
//! to the end of the last intact commit; anything after it (a torn write,
//! a corrupted line, an uncommitted batch) is discarded with a warning.

use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use firewatch_core::controller::Declaration;
use firewatch_core::{DeviceId, Measurement, RiskAssessment};
use firewatch_crypto::{sha256, PackageId};
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

use crate::auth::TokenRecord;
use crate::core::{AlertRecord, FrequencyState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub seq: u64,
    pub at: DateTime<Utc>,
    #[serde(flatten)]
    pub record: Record,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Record {
    Measurement {
        package_id: PackageId,
        key_index: u32,
        measurement: Measurement,
    },
    Assessment {
        package_id: PackageId,
        assessment: RiskAssessment,
    },
    Alert {
        alert: AlertRecord,
    },
    Declaration {
        area_id: String,
        declaration: Declaration,
        by: String,
    },
    FrequencyChange {
        device_id: DeviceId,
        period_seconds: u32,
        state: FrequencyState,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        by: Option<String>,
    },
    Rejection {
        status: u16,
        code: String,
        reason: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        device_id: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        package_id: Option<PackageId>,
    },
    Token {
        token: TokenRecord,
    },
}

impl Record {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Measurement { .. } => "measurement",
            Self::Assessment { .. } => "assessment",
            Self::Alert { .. } => "alert",
            Self::Declaration { .. } => "declaration",
            Self::FrequencyChange { .. } => "frequency-change",
            Self::Rejection { .. } => "rejection",
            Self::Token { .. } => "token",
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Line<'a> {
    check: String,
    #[serde(borrow)]
    entry: &'a RawValue,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Commit {
    commit: u64,
}

/// What was recovered from disk.
#[derive(Debug, Default)]
pub struct Recovery {
    pub entries: Vec<LogEntry>,
    /// Bytes cut from the tail.
    pub truncated_bytes: u64,
    /// Why the tail was cut, if it was.
    pub problem: Option<String>,
}

#[derive(Debug)]
pub struct EventLog {
    file: Option<File>,
    path: Option<PathBuf>,
    len: u64,
    next_seq: u64,
    fsync: bool,
}

fn encode_line(out: &mut String, entry_json: &str) {
    let check = hex::encode(sha256(entry_json.as_bytes()));
    out.push_str("{\"check\":\"");
    out.push_str(&check);
    out.push_str("\",\"entry\":");
    out.push_str(entry_json);
    out.push_str("}\n");
}

/// Scans `bytes`, returning the committed entries and the byte length of
/// the valid prefix.
fn scan(bytes: &[u8]) -> (Vec<LogEntry>, usize, Option<String>) {
    let mut entries = Vec::new();
    let mut pending = Vec::new();
    let mut valid_len = 0;
    let mut offset = 0;
    let mut expected_seq = 1;
    let mut line_no = 0;
    while offset < bytes.len() {
        line_no += 1;
        let Some(nl) = bytes[offset..].iter().position(|&b| b == b'\n') else {
            return (
                entries,
                valid_len,
                Some(format!("line {line_no}: incomplete final line")),
            );
        };
        let raw = &bytes[offset..offset + nl];
        offset += nl + 1;
        let line: Line = match std::str::from_utf8(raw)
            .ok()
            .and_then(|s| serde_json::from_str(s).ok())
        {
            Some(l) => l,
            None => {
                return (
                    entries,
                    valid_len,
                    Some(format!("line {line_no}: unparseable")),
                )
            }
        };
        if hex::encode(sha256(line.entry.get().as_bytes())) != line.check {
            return (
                entries,
                valid_len,
                Some(format!("line {line_no}: checksum mismatch")),
            );
        }
        if let Ok(c) = serde_json::from_str::<Commit>(line.entry.get()) {
            if pending.is_empty() || c.commit != expected_seq - 1 {
                return (
                    entries,
                    valid_len,
                    Some(format!("line {line_no}: commit does not close a batch")),
                );
            }
            entries.append(&mut pending);
            valid_len = offset;
            continue;
        }
        match serde_json::from_str::<LogEntry>(line.entry.get()) {
            Ok(e) if e.seq == expected_seq => {
                expected_seq += 1;
                pending.push(e);
            }
            Ok(e) => {
                return (
                    entries,
                    valid_len,
                    Some(format!(
                        "line {line_no}: sequence {} where {expected_seq} was expected",
                        e.seq
                    )),
                );
            }
            Err(err) => return (entries, valid_len, Some(format!("line {line_no}: {err}"))),
        }
    }
    let problem = (!pending.is_empty())
        .then(|| format!("{} uncommitted entries at end of log", pending.len()));
    (entries, valid_len, problem)
}

impl EventLog {
    /// A log that assigns sequence numbers but writes nothing.
    pub fn in_memory() -> Self {
        Self {
            file: None,
            path: None,
            len: 0,
            next_seq: 1,
            fsync: false,
        }
    }

    /// Opens (creating if needed) and recovers the log, truncating any
    /// invalid tail.
    pub fn open(path: &Path, fsync: bool) -> std::io::Result<(Self, Recovery)> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let mut file = OpenOptions::new()
            .read(true)
            .write(true)
            .create(true)
            .truncate(false)
            .open(path)?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes)?;
        let (entries, valid_len, problem) = scan(&bytes);
        let truncated = (bytes.len() - valid_len) as u64;
        if truncated > 0 {
            tracing::warn!(
                path = %path.display(),
                truncated_bytes = truncated,
                reason = problem.as_deref().unwrap_or("unknown"),
                "event log tail is invalid; truncating to the last committed entry"
            );
            file.set_len(valid_len as u64)?;
            file.sync_all()?;
        }
        file.seek(SeekFrom::End(0))?;
        let next_seq = entries.last().map_or(1, |e| e.seq + 1);
        let log = Self {
            file: Some(file),
            path: Some(path.to_path_buf()),
            len: valid_len as u64,
            next_seq,
            fsync,
        };
        Ok((
            log,
            Recovery {
                entries,
                truncated_bytes: truncated,
                problem: if truncated > 0 { problem } else { None },
            },
        ))
    }

    /// Reads committed entries without modifying the file.
    pub fn read(path: &Path) -> std::io::Result<Recovery> {
        let bytes = std::fs::read(path)?;
        let (entries, valid_len, problem) = scan(&bytes);
        let truncated_bytes = (bytes.len() - valid_len) as u64;
        Ok(Recovery {
            entries,
            truncated_bytes,
            problem: if truncated_bytes > 0 { problem } else { None },
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    /// Writes `records` as one committed batch. On failure nothing is
    /// committed and the file is cut back to its previous length.
    pub fn append(
        &mut self,
        at: DateTime<Utc>,
        records: Vec<Record>,
    ) -> std::io::Result<Vec<LogEntry>> {
        if records.is_empty() {
            return Ok(Vec::new());
        }
        let entries: Vec<LogEntry> = records
            .into_iter()
            .enumerate()
            .map(|(i, record)| LogEntry {
                seq: self.next_seq + i as u64,
                at,
                record,
            })
            .collect();
        if let Some(file) = self.file.as_mut() {
            let mut buf = String::new();
            for e in &entries {
                encode_line(
                    &mut buf,
                    &serde_json::to_string(e).map_err(std::io::Error::other)?,
                );
            }
            let last = entries.last().unwrap().seq;
            encode_line(
                &mut buf,
                &serde_json::to_string(&Commit { commit: last }).unwrap(),
            );
            let result = file.write_all(buf.as_bytes()).and_then(|_| {
                if self.fsync {
                    file.sync_data()
                } else {
                    Ok(())
                }
            });
            if let Err(e) = result {
                let _ = file.set_len(self.len);
                let _ = file.seek(SeekFrom::Start(self.len));
                return Err(e);
            }
            self.len += buf.len() as u64;
        }
        self.next_seq += entries.len() as u64;
        Ok(entries)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rejection(n: u16) -> Record {
        Record::Rejection {
            status: n,
            code: "x".into(),
            reason: "r".into(),
            device_id: None,
            package_id: None,
        }
    }

    fn at() -> DateTime<Utc> {
        "2026-07-15T06:00:00Z".parse().unwrap()
    }

    #[test]
    fn empty_log_is_clean() {
        let dir = tempfile::tempdir().unwrap();
        let (log, rec) = EventLog::open(&dir.path().join("e.log"), false).unwrap();
        assert!(rec.entries.is_empty());
        assert_eq!(log.next_seq(), 1);
    }

    #[test]
    fn batches_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.log");
        let (mut log, _) = EventLog::open(&path, true).unwrap();
        log.append(at(), vec![rejection(1), rejection(2)]).unwrap();
        log.append(at(), vec![rejection(3)]).unwrap();
        drop(log);
        let (log, rec) = EventLog::open(&path, false).unwrap();
        assert_eq!(
            rec.entries.iter().map(|e| e.seq).collect::<Vec<_>>(),
            vec![1, 2, 3]
        );
        assert_eq!(rec.truncated_bytes, 0);
        assert_eq!(log.next_seq(), 4);
    }

    #[test]
    fn torn_and_uncommitted_tails_are_cut() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.log");
        let (mut log, _) = EventLog::open(&path, false).unwrap();
        log.append(at(), vec![rejection(1)]).unwrap();
        let good = std::fs::metadata(&path).unwrap().len();
        log.append(at(), vec![rejection(2), rejection(3)]).unwrap();
        drop(log);

        // Drop the commit line of the second batch.
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        std::fs::write(&path, lines[..lines.len() - 1].join("\n") + "\n").unwrap();
        let (mut log, rec) = EventLog::open(&path, false).unwrap();
        assert_eq!(rec.entries.len(), 1);
        assert!(rec.truncated_bytes > 0);
        assert_eq!(std::fs::metadata(&path).unwrap().len(), good);

        // Appending after recovery continues the sequence.
        let e = log.append(at(), vec![rejection(4)]).unwrap();
        assert_eq!(e[0].seq, 2);
        drop(log);
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.extend_from_slice(b"{\"check\":\"00\",\"ent");
        std::fs::write(&path, &bytes).unwrap();
        let (_, rec) = EventLog::open(&path, false).unwrap();
        assert_eq!(rec.entries.len(), 2);
    }

    #[test]
    fn checksum_mismatch_stops_recovery() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.log");
        let (mut log, _) = EventLog::open(&path, false).unwrap();
        log.append(at(), vec![rejection(1)]).unwrap();
        log.append(at(), vec![rejection(2)]).unwrap();
        drop(log);
        let text =
            std::fs::read_to_string(&path)
                .unwrap()
                .replacen("\"status\":2", "\"status\":7", 1);
        std::fs::write(&path, text).unwrap();
        let rec = EventLog::read(&path).unwrap();
        assert_eq!(rec.entries.len(), 1);
        assert!(rec.problem.unwrap().contains("checksum"));
    }

    #[test]
    fn in_memory_log_numbers_entries() {
        let mut log = EventLog::in_memory();
        assert_eq!(
            log.append(at(), vec![rejection(1), rejection(2)]).unwrap()[1].seq,
            2
        );
        assert_eq!(log.next_seq(), 3);
        assert!(log.append(at(), vec![]).unwrap().is_empty());
    }
}
