use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LogKind {
    Fetch,
    Issue,
    Exec,
    Squash,
    Commit,
    L1Hit,
    L1Miss,
    L1Fill,
    L1Evict,
    TlbFill,
    MshrAlloc,
    MshrFree,
    MshrStall,
    Expose,
    ExposeStall,
    Cleanup,
    Taint,
    SplitReq,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SquashCause {
    BranchMispredict,
    MemoryOrder,
}

/// Per-kind payload of a log record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Detail {
    None,
    Mem {
        is_store: bool,
        width: u8,
    },
    Branch {
        predicted: u64,
        actual: Option<u64>,
    },
    /// Sequence numbers in `[record.seq, until)` were squashed.
    Squash {
        cause: SquashCause,
        until: u64,
    },
    Mshr {
        in_use: usize,
    },
    Cleanup {
        victim: Option<u64>,
    },
    Note {
        text: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogRecord {
    pub cycle: u64,
    pub kind: LogKind,
    pub seq: Option<u64>,
    pub pc: Option<u64>,
    pub addr: Option<u64>,
    pub speculative: bool,
    pub detail: Detail,
}

/// Cycle-ordered record of everything the simulator did.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DebugLog {
    pub records: Vec<LogRecord>,
}

impl DebugLog {
    pub fn push(&mut self, r: LogRecord) {
        self.records.push(r);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &LogRecord> {
        self.records.iter()
    }

    pub fn of_kind(&self, kind: LogKind) -> impl Iterator<Item = &LogRecord> {
        self.records.iter().filter(move |r| r.kind == kind)
    }

    pub fn count(&self, kind: LogKind) -> usize {
        self.of_kind(kind).count()
    }

    /// One JSON object per line.
    pub fn to_ndjson(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("log records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_ndjson(text: &str) -> Result<Self> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let r = serde_json::from_str(line).map_err(|e| Error::Report(format!("log line {}: {e}", i + 1)))?;
            records.push(r);
        }
        Ok(DebugLog { records })
    }

    pub fn project(&self) -> EventStreams {
        let mut memory = Vec::new();
        let mut branches: Vec<BranchEvent> = Vec::new();
        let mut by_seq: BTreeMap<u64, usize> = BTreeMap::new();
        for r in &self.records {
            match (r.kind, &r.detail) {
                (LogKind::Exec, Detail::Mem { is_store, .. }) => {
                    memory.push(MemEvent { pc: r.pc.unwrap_or(0), addr: r.addr.unwrap_or(0), is_store: *is_store })
                }
                (LogKind::Fetch, Detail::Branch { predicted, .. }) => {
                    if let Some(s) = r.seq {
                        by_seq.insert(s, branches.len());
                    }
                    branches.push(BranchEvent {
                        pc: r.pc.unwrap_or(0),
                        predicted_target: *predicted,
                        actual_target: None,
                    });
                }
                (LogKind::Exec, Detail::Branch { actual, .. }) => {
                    if let Some(&i) = r.seq.as_ref().and_then(|s| by_seq.get(s)) {
                        branches[i].actual_target = *actual;
                    }
                }
                _ => {}
            }
        }
        EventStreams { memory, branches }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MemEvent {
    pub pc: u64,
    pub addr: u64,
    pub is_store: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BranchEvent {
    pub pc: u64,
    pub predicted_target: u64,
    /// None when the branch was squashed before resolving.
    pub actual_target: Option<u64>,
}

/// Memory accesses and branch predictions in execution order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EventStreams {
    pub memory: Vec<MemEvent>,
    pub branches: Vec<BranchEvent>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(kind: LogKind, seq: u64, detail: Detail) -> LogRecord {
        LogRecord { cycle: seq, kind, seq: Some(seq), pc: Some(seq * 2), addr: Some(0x40), speculative: false, detail }
    }

    #[test]
    fn ndjson_round_trip() {
        let mut log = DebugLog::default();
        log.push(rec(LogKind::Exec, 1, Detail::Mem { is_store: true, width: 8 }));
        log.push(rec(LogKind::Squash, 2, Detail::Squash { cause: SquashCause::MemoryOrder, until: 5 }));
        log.push(rec(LogKind::Cleanup, 3, Detail::Cleanup { victim: None }));
        let text = log.to_ndjson();
        assert_eq!(text.lines().count(), 3);
        assert!(text.contains("\"memory_order\""));
        assert_eq!(DebugLog::from_ndjson(&text).unwrap(), log);
        assert!(DebugLog::from_ndjson("{not json").is_err());
    }

    #[test]
    fn projection_pairs_fetch_and_resolve() {
        let mut log = DebugLog::default();
        log.push(rec(LogKind::Fetch, 4, Detail::Branch { predicted: 9, actual: None }));
        log.push(rec(LogKind::Exec, 5, Detail::Mem { is_store: false, width: 1 }));
        log.push(rec(LogKind::Exec, 4, Detail::Branch { predicted: 9, actual: Some(12) }));
        let ev = log.project();
        assert_eq!(ev.memory, vec![MemEvent { pc: 10, addr: 0x40, is_store: false }]);
        assert_eq!(ev.branches, vec![BranchEvent { pc: 8, predicted_target: 9, actual_target: Some(12) }]);
    }
}
