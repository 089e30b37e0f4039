//! Moves envelopes between agents and counts every byte on the way.

use crate::agents::transport::Transport;
use crate::agents::{Agent, Outbound};
use crate::identity::MessageType;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentCounters {
    pub messages_sent: u64,
    pub messages_received: u64,
    pub bytes_sent: u64,
    pub bytes_received: u64,
    pub messages_dropped: u64,
    pub bytes_dropped: u64,
}

/// Cumulative counters at the moment the coordinator recorded a batch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BandwidthSnapshot {
    pub round: usize,
    pub bytes_sent: BTreeMap<String, u64>,
    pub bytes_received: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Metrics {
    pub agents: BTreeMap<String, AgentCounters>,
    /// Envelopes the transport could not deliver.
    pub bytes_lost: u64,
    pub snapshots: Vec<BandwidthSnapshot>,
}

impl Metrics {
    pub fn total_sent(&self) -> u64 {
        self.agents.values().map(|c| c.bytes_sent).sum()
    }

    pub fn total_received(&self) -> u64 {
        self.agents.values().map(|c| c.bytes_received).sum()
    }

    pub fn total_dropped(&self) -> u64 {
        self.agents.values().map(|c| c.bytes_dropped).sum()
    }

    /// Every byte sent was received, dropped by its recipient or lost in transit.
    pub fn is_conserved(&self) -> bool {
        self.total_sent() == self.total_received() + self.total_dropped() + self.bytes_lost
    }
}

/// Records cumulative bytes per agent for one FL round.
pub fn snapshot_bandwidth(metrics: &mut Metrics, round: usize) {
    let bytes_sent = metrics.agents.iter().map(|(n, c)| (n.clone(), c.bytes_sent)).collect();
    let bytes_received = metrics
        .agents
        .iter()
        .map(|(n, c)| (n.clone(), c.bytes_received))
        .collect();
    metrics.snapshots.push(BandwidthSnapshot {
        round,
        bytes_sent,
        bytes_received,
    });
}

/// Rewrites wire bytes in flight; used to inject tampering.
pub type Tamper = Box<dyn FnMut(&str, MessageType, &mut Vec<u8>)>;

/// A breach of the rule that models only travel over trusted connections.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub agent: String,
    pub detail: String,
}

pub struct Network {
    transport: Box<dyn Transport>,
    pub agents: Vec<Agent>,
    by_endpoint: BTreeMap<String, usize>,
    pub metrics: Metrics,
    coordinator: Option<usize>,
    tamper: Option<Tamper>,
    pub violations: Vec<Violation>,
}

impl Network {
    pub fn new(transport: Box<dyn Transport>) -> Self {
        Network {
            transport,
            agents: Vec::new(),
            by_endpoint: BTreeMap::new(),
            metrics: Metrics::default(),
            coordinator: None,
            tamper: None,
            violations: Vec::new(),
        }
    }

    pub fn transport_kind(&self) -> &'static str {
        self.transport.kind()
    }

    pub fn add(&mut self, agent: Agent) -> Result<usize, crate::agents::transport::TransportError> {
        self.transport.bind(agent.endpoint())?;
        let i = self.agents.len();
        self.by_endpoint.insert(agent.endpoint().to_string(), i);
        self.metrics.agents.insert(agent.name().to_string(), AgentCounters::default());
        self.agents.push(agent);
        Ok(i)
    }

    /// Snapshots are taken whenever this agent's batch count grows.
    pub fn set_coordinator(&mut self, index: usize) {
        self.coordinator = Some(index);
    }

    pub fn set_tamper(&mut self, tamper: Tamper) {
        self.tamper = Some(tamper);
    }

    fn counters(&mut self, agent: usize) -> &mut AgentCounters {
        let name = self.agents[agent].name().to_string();
        self.metrics.agents.entry(name).or_default()
    }

    fn snapshot_if_new_batch(&mut self) {
        let Some(c) = self.coordinator else { return };
        let batches = self.agents[c].fl_run().map_or(0, |r| r.batches().len());
        while self.metrics.snapshots.len() < batches {
            let round = self.metrics.snapshots.len();
            snapshot_bandwidth(&mut self.metrics, round);
        }
    }

    /// Sends what agent `from` produced, after checking the model-transfer rule.
    pub fn post(&mut self, from: usize, outbound: Vec<Outbound>) {
        self.snapshot_if_new_batch();
        for out in outbound {
            if out.kind == MessageType::TrainRequest && Some(from) == self.coordinator {
                let sender = &self.agents[from];
                let trusted = sender
                    .wallet()
                    .connection_by_my_did(&out.envelope.from)
                    .is_some_and(|c| c.trusted);
                if !trusted {
                    self.violations.push(Violation {
                        agent: sender.name().to_string(),
                        detail: format!("model sent to untrusted {}", out.envelope.to),
                    });
                }
            }
            let mut wire = out.envelope.to_wire();
            if let Some(tamper) = self.tamper.as_mut() {
                tamper(self.agents[from].name(), out.kind, &mut wire);
            }
            let len = wire.len() as u64;
            let c = self.counters(from);
            c.messages_sent += 1;
            c.bytes_sent += len;
            if self.transport.send(&out.endpoint, wire).is_err() {
                self.metrics.bytes_lost += len;
            }
        }
    }

    /// Delivers one queued envelope to each agent in turn until every inbox is
    /// empty. Returns the number of deliveries, or `None` if `budget` ran out.
    pub fn pump(&mut self, budget: usize) -> Option<usize> {
        let mut delivered = 0;
        loop {
            let mut progressed = false;
            for i in 0..self.agents.len() {
                let endpoint = self.agents[i].endpoint().to_string();
                let Some(wire) = self.transport.receive(&endpoint) else {
                    continue;
                };
                if delivered == budget {
                    self.metrics.bytes_lost += wire.len() as u64;
                    return None;
                }
                delivered += 1;
                progressed = true;
                let len = wire.len() as u64;
                match self.agents[i].handle_wire(&wire) {
                    Ok(out) => {
                        let c = self.counters(i);
                        c.messages_received += 1;
                        c.bytes_received += len;
                        self.post(i, out);
                    }
                    Err(_) => {
                        let c = self.counters(i);
                        c.messages_dropped += 1;
                        c.bytes_dropped += len;
                    }
                }
            }
            if !progressed {
                self.snapshot_if_new_batch();
                return Some(delivered);
            }
        }
    }

    pub fn index_of(&self, endpoint: &str) -> Option<usize> {
        self.by_endpoint.get(endpoint).copied()
    }
}
