use super::network::Metrics;
use crate::agents::connection::ConnectionState;
use crate::credentials::CheckOutcome;
use crate::fedlearn::ConfusionMatrix;
use crate::identity::Did;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write;

pub const RESOURCE_NOTE: &str =
    "CPU and memory use are not measured; network load is reported as envelope byte counters.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentSummary {
    pub name: String,
    pub role: String,
    pub public_did: Option<Did>,
    pub credentials: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConnectionOutcome {
    pub agent: String,
    pub peer: String,
    pub purpose: String,
    pub my_did: Did,
    pub their_did: Option<Did>,
    pub state: ConnectionState,
    pub trusted: bool,
    pub verified_attributes: BTreeMap<String, String>,
}

/// One proof request and its outcome. `checks` is empty when no presentation arrived.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationOutcome {
    pub verifier: String,
    pub subject: String,
    pub accepted: bool,
    pub reason: String,
    pub checks: Vec<CheckOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchRow {
    pub batch: usize,
    pub trainer: Option<String>,
    pub model_version: u64,
    pub matrix: ConfusionMatrix,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineageRow {
    pub batch: usize,
    pub trainer: String,
    pub sent_version: u64,
    pub sent_hash: String,
    pub returned_version: u64,
    pub returned_hash: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub version: u64,
    pub fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assertion {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Failure {
    pub step: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub seed: u64,
    pub transport: String,
    pub passed: bool,
    pub failure: Option<Failure>,
    pub agents: Vec<AgentSummary>,
    pub connections: Vec<ConnectionOutcome>,
    pub verifications: Vec<VerificationOutcome>,
    pub validation_size: usize,
    pub batches: Vec<BatchRow>,
    pub lineage: Vec<LineageRow>,
    pub final_model: Option<ModelSummary>,
    pub metrics: Metrics,
    pub assertions: Vec<Assertion>,
    pub notes: Vec<String>,
}

impl RunReport {
    pub fn assertion(&self, name: &str) -> Option<&Assertion> {
        self.assertions.iter().find(|a| a.name == name)
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("report is serializable");
        text.push('\n');
        text
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ReportFormat {
    Json,
    Table,
}

/// Per-batch confusion counts laid out one column per batch.
pub fn batch_table(batches: &[BatchRow]) -> String {
    let mut out = String::new();
    let _ = write!(out, "{:<16}", "Batch");
    for b in batches {
        let _ = write!(out, "{:>8}", b.batch);
    }
    out.push('\n');
    let rows: [(&str, fn(&ConfusionMatrix) -> u64); 4] = [
        ("True Positives", |m| m.tp),
        ("False Positives", |m| m.fp),
        ("True Negatives", |m| m.tn),
        ("False Negatives", |m| m.fn_),
    ];
    for (label, get) in rows {
        let _ = write!(out, "{label:<16}");
        for b in batches {
            let _ = write!(out, "{:>8}", get(&b.matrix));
        }
        out.push('\n');
    }
    let _ = write!(out, "{:<16}", "Accuracy");
    for b in batches {
        let _ = write!(out, "{:>8.3}", b.accuracy);
    }
    out.push('\n');
    out
}

pub fn emit_report(report: &RunReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => report.to_json(),
        ReportFormat::Table => table(report),
    }
}

fn table(report: &RunReport) -> String {
    let mut out = String::new();
    let status = if report.passed { "PASSED" } else { "FAILED" };
    let _ = writeln!(
        out,
        "Scenario {} (seed {}, transport {}): {status}",
        report.scenario, report.seed, report.transport
    );
    if let Some(f) = &report.failure {
        let _ = writeln!(out, "Failed at {}: {}", f.step, f.reason);
    }

    out.push_str("\nTrust\n");
    for v in &report.verifications {
        let verdict = if v.accepted { "trusted" } else { "denied" };
        let _ = writeln!(out, "  {} -> {}: {verdict} ({})", v.verifier, v.subject, v.reason);
    }

    let _ = writeln!(out, "\nValidation set: {} rows", report.validation_size);
    out.push_str(&batch_table(&report.batches));

    let _ = writeln!(
        out,
        "\n{:<22}{:>10}{:>12}{:>10}{:>12}{:>10}",
        "Agent", "msgs out", "bytes out", "msgs in", "bytes in", "dropped"
    );
    for agent in &report.agents {
        let c = report.metrics.agents.get(&agent.name).cloned().unwrap_or_default();
        let _ = writeln!(
            out,
            "{:<22}{:>10}{:>12}{:>10}{:>12}{:>10}",
            agent.name, c.messages_sent, c.bytes_sent, c.messages_received, c.bytes_received, c.bytes_dropped
        );
    }

    out.push_str("\nAssertions\n");
    for a in &report.assertions {
        let mark = if a.passed { "pass" } else { "FAIL" };
        let _ = writeln!(out, "  [{mark}] {}: {}", a.name, a.detail);
    }
    for note in &report.notes {
        let _ = writeln!(out, "\n{note}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn empty() -> RunReport {
        RunReport {
            scenario: "empty".into(),
            seed: 0,
            transport: "mem".into(),
            passed: false,
            failure: None,
            agents: vec![AgentSummary {
                name: "a".into(),
                role: "hospital".into(),
                public_did: None,
                credentials: 0,
            }],
            connections: vec![],
            verifications: vec![],
            validation_size: 0,
            batches: vec![],
            lineage: vec![],
            final_model: None,
            metrics: Metrics::default(),
            assertions: vec![],
            notes: vec![RESOURCE_NOTE.into()],
        }
    }

    #[test]
    fn batch_column_matches_layout() {
        let rows = vec![BatchRow {
            batch: 0,
            trainer: None,
            model_version: 0,
            matrix: ConfusionMatrix {
                tp: 0,
                fp: 0,
                tn: 114,
                fn_: 144,
            },
            accuracy: 114.0 / 258.0,
        }];
        let text = batch_table(&rows);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], format!("{:<16}{:>8}", "Batch", 0));
        assert_eq!(lines[1], format!("{:<16}{:>8}", "True Positives", 0));
        assert_eq!(lines[2], format!("{:<16}{:>8}", "False Positives", 0));
        assert_eq!(lines[3], format!("{:<16}{:>8}", "True Negatives", 114));
        assert_eq!(lines[4], format!("{:<16}{:>8}", "False Negatives", 144));
    }

    #[test]
    fn empty_metrics_render_as_zeros() {
        let text = emit_report(&empty(), ReportFormat::Table);
        let row = text.lines().find(|l| l.starts_with("a ")).unwrap();
        let numbers: Vec<&str> = row.split_whitespace().skip(1).collect();
        assert_eq!(numbers, vec!["0"; 5]);
        assert!(text.contains(RESOURCE_NOTE));
    }

    #[test]
    fn json_round_trips_byte_identically() {
        let json = emit_report(&empty(), ReportFormat::Json);
        let back = RunReport::from_json(&json).unwrap();
        assert_eq!(back.to_json(), json);
    }
}
