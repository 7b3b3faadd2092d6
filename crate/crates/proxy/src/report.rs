use std::collections::VecDeque;
use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::path::Path;
use std::sync::Mutex;

use oairelay_core::Violation;
use serde::{Deserialize, Serialize};

use crate::repair::{Fix, RepairOutcome, Verdict};

/// What happened to one proxied request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Outcome {
    Clean,
    Repaired,
    /// Upstream body could not be made valid; the client got a 502.
    Rejected,
    /// Upstream answered with a non-200 status, passed through as is.
    UpstreamStatus,
    /// Upstream could not be reached in time; the client got a 504.
    Unreachable,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RepairReport {
    pub request_id: String,
    pub route_id: Option<String>,
    pub upstream_url: String,
    pub status: u16,
    pub outcome: Outcome,
    pub utf8_fixes: Vec<Fix>,
    pub entity_fixes: Vec<Fix>,
    pub markup_fixes: Vec<Fix>,
    pub dropped_records: Vec<String>,
    pub dropped_count: usize,
    /// Emitted records whose bytes differ from upstream.
    pub repaired_records: Vec<String>,
    pub residual_violations: Vec<Violation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl RepairReport {
    pub fn new(request_id: String, route_id: Option<String>, upstream_url: String) -> Self {
        Self {
            request_id,
            route_id,
            upstream_url,
            status: 200,
            outcome: Outcome::Clean,
            utf8_fixes: Vec::new(),
            entity_fixes: Vec::new(),
            markup_fixes: Vec::new(),
            dropped_records: Vec::new(),
            dropped_count: 0,
            repaired_records: Vec::new(),
            residual_violations: Vec::new(),
            error: None,
        }
    }

    pub fn absorb(&mut self, outcome: &RepairOutcome) {
        self.outcome = match outcome.verdict {
            Verdict::Clean => Outcome::Clean,
            Verdict::Repaired => Outcome::Repaired,
            Verdict::Rejected => Outcome::Rejected,
        };
        self.utf8_fixes = outcome.utf8_fixes.clone();
        self.entity_fixes = outcome.entity_fixes.clone();
        self.markup_fixes = outcome.markup_fixes.clone();
        self.dropped_records = outcome.dropped_records.clone();
        self.dropped_count = outcome.dropped_count;
        self.repaired_records = outcome.repaired_records.clone();
        self.residual_violations = outcome.residual_violations.clone();
    }

    pub fn fix_count(&self) -> usize {
        self.utf8_fixes.len() + self.entity_fixes.len() + self.markup_fixes.len()
    }
}

/// The most recent reports in memory, plus an optional JSON-lines log.
#[derive(Debug)]
pub struct ReportStore {
    capacity: usize,
    ring: Mutex<VecDeque<RepairReport>>,
    log: Option<Mutex<File>>,
}

impl ReportStore {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            ring: Mutex::new(VecDeque::new()),
            log: None,
        }
    }

    pub fn with_log(capacity: usize, path: &Path) -> io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            log: Some(Mutex::new(file)),
            ..Self::new(capacity)
        })
    }

    pub fn push(&self, report: RepairReport) {
        if let Some(log) = &self.log {
            let mut line = serde_json::to_vec(&report).expect("report serializes");
            line.push(b'\n');
            let mut f = log.lock().expect("report log lock");
            if let Err(e) = f.write_all(&line) {
                tracing::warn!("report log write failed: {e}");
            }
        }
        let mut ring = self.ring.lock().expect("report ring lock");
        if ring.len() == self.capacity {
            ring.pop_front();
        }
        ring.push_back(report);
    }

    pub fn get(&self, request_id: &str) -> Option<RepairReport> {
        let ring = self.ring.lock().expect("report ring lock");
        ring.iter().rev().find(|r| r.request_id == request_id).cloned()
    }

    pub fn len(&self) -> usize {
        self.ring.lock().expect("report ring lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(id: &str) -> RepairReport {
        RepairReport::new(id.into(), None, "http://up/oai".into())
    }

    #[test]
    fn ring_evicts_oldest() {
        let store = ReportStore::new(2);
        store.push(report("a"));
        store.push(report("b"));
        store.push(report("c"));
        assert!(store.get("a").is_none());
        assert!(store.get("c").is_some());
        assert_eq!(store.len(), 2);
    }

    #[test]
    fn log_appends_json_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("reports.jsonl");
        let store = ReportStore::with_log(4, &path).unwrap();
        store.push(report("a"));
        store.push(report("b"));
        let text = std::fs::read_to_string(&path).unwrap();
        let ids: Vec<String> = text
            .lines()
            .map(|l| serde_json::from_str::<RepairReport>(l).unwrap().request_id)
            .collect();
        assert_eq!(ids, ["a", "b"]);
    }
}
