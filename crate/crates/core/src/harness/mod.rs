//! Scenario runner: bootstraps the registry, issues credentials, establishes
//! trust between researcher and hospitals, lets adversaries try their luck and
//! then runs sequential federated learning over the trusted connections.

pub mod config;
pub mod network;
pub mod report;

use crate::agents::transport::{MemoryTransport, SocketTransport, Transport};
use crate::agents::{Agent, AgentEvent, TrustPolicy};
use crate::fedlearn::{self, Dataset, ModelParams};
use crate::identity::MessageType;
use crate::registry::{CredentialSchema, Registry, Snapshot};
use config::{DataSource, Role, ScenarioConfig, TransportMode, TrustSpec};
use network::{Network, Tamper};
use report::*;
use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use thiserror::Error;

pub use config::ConfigError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("setup failed: {0}")]
    Setup(String),
}

fn setup(e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Setup(e.to_string())
}

#[derive(Default)]
pub struct RunOptions {
    /// Ledger contents to start from instead of an empty registry.
    pub registry: Option<Snapshot>,
    pub tamper: Option<Tamper>,
}

/// Per-agent seed derived from the scenario seed.
fn agent_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Creates the agents, gives issuers public DIDs and writes schemas and grants to `registry`.
pub fn bootstrap(config: &ScenarioConfig, registry: &Arc<Registry>) -> Result<Vec<Agent>, HarnessError> {
    config.validate()?;
    let mut agents: Vec<Agent> = config
        .agents
        .iter()
        .enumerate()
        .map(|(i, spec)| Agent::new(&spec.name, &spec.endpoint, registry.clone(), agent_seed(config.seed, i)))
        .collect();
    for (spec, agent) in config.agents.iter().zip(agents.iter_mut()) {
        if spec.role.has_public_did() {
            agent.enable_issuer().map_err(setup)?;
        }
    }
    for s in &config.schemas {
        let names: Vec<&str> = s.attribute_names.iter().map(String::as_str).collect();
        let schema = CredentialSchema::new(&s.name, &s.version, &names).map_err(setup)?;
        let id = registry.register_schema(schema).map_err(setup)?;
        for issuer in &s.issuers {
            let i = config.agents.iter().position(|a| a.name == *issuer).expect("validated");
            let did = agents[i].public_did().expect("issuers have public DIDs").clone();
            registry.authorize(&id, &did).map_err(setup)?;
        }
    }
    Ok(agents)
}

/// Loads and partitions the data: one training part per hospital, then validation.
pub fn prepare_data(config: &ScenarioConfig) -> Result<(Vec<Dataset>, Dataset), HarnessError> {
    let data = match &config.dataset.source {
        DataSource::Synthetic(spec) => fedlearn::synthetic(spec),
        DataSource::Csv(path) => fedlearn::load_csv(path),
    }
    .map_err(setup)?;
    let hospitals = config.agents_with(Role::Hospital).count();
    let mut parts = fedlearn::partition(&data, hospitals + 1, config.dataset.partition_seed).map_err(setup)?;
    let validation = parts.pop().expect("k >= 2").data;
    let train = parts
        .into_iter()
        .enumerate()
        .map(|(i, p)| {
            let rate = config.dataset.label_noise.get(i).copied().unwrap_or(0.0);
            if rate == 0.0 {
                Ok(p.data)
            } else {
                fedlearn::with_label_noise(&p.data, rate, config.dataset.partition_seed.wrapping_add(i as u64 + 1))
            }
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(setup)?;
    Ok((train, validation))
}

fn resolve_endpoint(endpoint: &str) -> Result<String, HarnessError> {
    if !endpoint.ends_with(":0") {
        return Ok(endpoint.to_string());
    }
    let listener = std::net::TcpListener::bind(endpoint).map_err(setup)?;
    Ok(listener.local_addr().map_err(setup)?.to_string())
}

struct Link {
    agent: usize,
    connection_id: String,
    peer: usize,
    purpose: &'static str,
}

struct Run<'a> {
    config: &'a ScenarioConfig,
    net: Network,
    roles: Vec<Role>,
    links: Vec<Link>,
    adversary_requests: usize,
    failure: Option<Failure>,
}

impl Run<'_> {
    fn name(&self, i: usize) -> &str {
        self.net.agents[i].name()
    }

    fn fail(&mut self, step: &str, reason: impl std::fmt::Display) {
        if self.failure.is_none() {
            self.failure = Some(Failure {
                step: step.to_string(),
                reason: reason.to_string(),
            });
        }
    }

    fn pump(&mut self, step: &str) {
        if self.net.pump(self.config.dispatch_budget).is_none() {
            self.fail(step, format!("dispatch budget of {} exhausted", self.config.dispatch_budget));
        }
    }

    /// `inviter` invites `invitee`; returns both connection ids once the exchange settles.
    fn connect(&mut self, inviter: usize, invitee: usize, purpose: &'static str) -> Option<(String, String)> {
        let step = format!("connect {} -> {}", self.name(inviter), self.name(invitee));
        let (ci, invitation) = match self.net.agents[inviter].create_invitation() {
            Ok(x) => x,
            Err(e) => {
                self.fail(&step, e);
                return None;
            }
        };
        let (cj, out) = match self.net.agents[invitee].accept_invitation(&invitation) {
            Ok(x) => x,
            Err(e) => {
                self.fail(&step, e);
                return None;
            }
        };
        self.net.post(invitee, vec![out]);
        self.pump(&step);
        self.links.push(Link {
            agent: inviter,
            connection_id: ci.clone(),
            peer: invitee,
            purpose,
        });
        self.links.push(Link {
            agent: invitee,
            connection_id: cj.clone(),
            peer: inviter,
            purpose,
        });
        Some((ci, cj))
    }

    fn policy(&self, spec: &TrustSpec) -> TrustPolicy {
        let issuer = self.config.agents.iter().position(|a| a.name == spec.required_issuer).expect("validated");
        TrustPolicy {
            schema_id: spec.schema_id.clone(),
            required_issuer: self.net.agents[issuer].public_did().expect("validated").clone(),
            disclosed_attributes: spec.disclosed_attributes.clone(),
            attribute_constraints: spec.attribute_constraints.clone(),
        }
    }

    fn request_proof(&mut self, verifier: usize, connection_id: &str, spec: &TrustSpec) {
        let policy = self.policy(spec);
        match self.net.agents[verifier].request_proof(connection_id, &policy) {
            Ok(out) => self.net.post(verifier, vec![out]),
            Err(e) => {
                let step = format!("proof request by {}", self.name(verifier));
                self.fail(&step, e);
            }
        }
    }

    fn with_role(&self, role: Role) -> Vec<usize> {
        (0..self.roles.len()).filter(|&i| self.roles[i] == role).collect()
    }

    fn adversaries(&self) -> Vec<usize> {
        (0..self.roles.len()).filter(|&i| self.roles[i].is_adversary()).collect()
    }

    fn issue_credentials(&mut self) {
        for rule in &self.config.issuance {
            let issuer = self.config.agents.iter().position(|a| a.name == rule.issuer).expect("validated");
            for holder in self.with_role(rule.holder_role) {
                let Some((ci, _)) = self.connect(issuer, holder, "issuance") else { return };
                let holder_name = self.name(holder).to_string();
                let attributes = rule
                    .attributes
                    .iter()
                    .map(|(k, v)| (k.clone(), v.replace("{name}", &holder_name)))
                    .collect();
                let step = format!("issue {} to {holder_name}", rule.schema_id);
                match self.net.agents[issuer].offer_credential(&ci, &rule.schema_id, attributes) {
                    Ok(out) => {
                        self.net.post(issuer, vec![out]);
                        self.pump(&step);
                    }
                    Err(e) => self.fail(&step, e),
                }
            }
        }
    }

    /// Only the credential's issuer may revoke it.
    fn revoke(&mut self, registry: &Registry) {
        for r in &self.config.revocations {
            let step = format!("revoke {} held by {}", r.schema_id, r.holder);
            let issuer = self.config.agents.iter().position(|a| a.name == r.issuer).expect("validated");
            let holder = self.config.agents.iter().position(|a| a.name == r.holder).expect("validated");
            let issuer_did = self.net.agents[issuer].public_did().cloned();
            let hash = self.net.agents[holder]
                .wallet()
                .credentials()
                .find(|h| h.credential.schema_id == r.schema_id && Some(&h.credential.issuer_did) == issuer_did.as_ref())
                .map(|h| h.credential.credential_hash);
            match hash {
                Some(hash) => registry.revoke(hash),
                None => self.fail(&step, format!("{} holds no such credential from {}", r.holder, r.issuer)),
            }
        }
    }

    fn forge(&mut self) {
        let Some(forgery) = &self.config.forgery else { return };
        for i in self.with_role(Role::MaliciousSelfSigned) {
            let name = self.name(i).to_string();
            let attributes = forgery
                .attributes
                .iter()
                .map(|(k, v)| (k.clone(), v.replace("{name}", &name)))
                .collect();
            if let Err(e) = self.net.agents[i].self_issue(&forgery.schema_id, attributes) {
                self.fail(&format!("self-issue by {name}"), e);
            }
        }
    }

    fn establish_trust(&mut self) -> Vec<(usize, String, String)> {
        let researcher = self.with_role(Role::Researcher)[0];
        let r_verifies_h = self.config.trust_policy(Role::Researcher, Role::Hospital).expect("validated").clone();
        let h_verifies_r = self.config.trust_policy(Role::Hospital, Role::Researcher).expect("validated").clone();
        let mut pairs = Vec::new();
        let hospitals = self.with_role(Role::Hospital);
        for &h in &hospitals {
            let Some((cr, ch)) = self.connect(researcher, h, "trust") else { continue };
            self.request_proof(researcher, &cr, &r_verifies_h);
            self.request_proof(h, &ch, &h_verifies_r);
            self.pump(&format!("trust {} <-> {}", self.name(researcher), self.name(h)));
            pairs.push((h, cr, ch));
        }
        // adversaries pose as a hospital to the researcher and as a researcher to a hospital
        for a in self.adversaries() {
            if let Some((cr, _)) = self.connect(researcher, a, "trust") {
                self.request_proof(researcher, &cr, &r_verifies_h);
                self.pump(&format!("trust {} <-> {}", self.name(researcher), self.name(a)));
            }
            if let Some((ch, _)) = self.connect(hospitals[0], a, "trust") {
                self.request_proof(hospitals[0], &ch, &h_verifies_r);
                self.pump(&format!("trust {} <-> {}", self.name(hospitals[0]), self.name(a)));
            }
        }
        pairs
    }

    /// Every adversary asks each of its trust peers to train a model.
    fn attack(&mut self) {
        let zero = ModelParams::zeros(1);
        let body = serde_json::json!({ "model": fedlearn::serialize_model(&zero) });
        for a in self.adversaries() {
            let conns: Vec<String> = self
                .links
                .iter()
                .filter(|l| l.agent == a && l.purpose == "trust")
                .map(|l| l.connection_id.clone())
                .collect();
            for c in conns {
                if let Ok(out) = self.net.agents[a].send_message(&c, MessageType::TrainRequest, &body) {
                    self.adversary_requests += 1;
                    self.net.post(a, vec![out]);
                }
            }
            self.pump(&format!("train requests from {}", self.name(a)));
        }
    }

    fn federate(&mut self, pairs: &[(usize, String, String)], validation: Dataset) -> Vec<usize> {
        let researcher = self.with_role(Role::Researcher)[0];
        let mutual: Vec<&(usize, String, String)> = pairs
            .iter()
            .filter(|(h, cr, ch)| {
                let r = self.net.agents[researcher].wallet().connection(cr).is_some_and(|c| c.trusted);
                let h = self.net.agents[*h].wallet().connection(ch).is_some_and(|c| c.trusted);
                r && h
            })
            .collect();
        let order: Vec<String> = mutual.iter().map(|(_, cr, _)| cr.clone()).collect();
        let trainers: Vec<usize> = mutual.iter().map(|(h, _, _)| *h).collect();
        let model = ModelParams::zeros(validation.dim());
        let threshold = self.config.train.threshold;
        match self.net.agents[researcher].start_federated_learning(order, model, validation, threshold) {
            Ok(out) => {
                self.net.post(researcher, out);
                self.pump("federated learning");
            }
            Err(e) => {
                self.fail("federated learning", e);
                return trainers;
            }
        }
        let agent = &self.net.agents[researcher];
        if let Some(reason) = agent.fl_failure() {
            let reason = reason.to_string();
            self.fail("federated learning", reason);
        } else if let Some(run) = agent.fl_run() {
            if let Some(waiting) = run.awaiting() {
                let peer = self.peer_name(researcher, waiting);
                self.fail("federated learning", format!("{peer} did not reply within the dispatch budget"));
            }
        }
        trainers
    }

    fn peer_name(&self, agent: usize, connection_id: &str) -> String {
        self.links
            .iter()
            .find(|l| l.agent == agent && l.connection_id == connection_id)
            .map(|l| self.name(l.peer).to_string())
            .unwrap_or_else(|| connection_id.to_string())
    }
}

pub fn run_scenario(config: &ScenarioConfig) -> Result<RunReport, HarnessError> {
    run_scenario_with(config, RunOptions::default())
}

pub fn run_scenario_with(config: &ScenarioConfig, options: RunOptions) -> Result<RunReport, HarnessError> {
    config.validate()?;
    let (train, validation) = prepare_data(config)?;
    let registry = Arc::new(match &options.registry {
        Some(snapshot) => Registry::from_snapshot(snapshot).map_err(setup)?,
        None => Registry::new(),
    });

    let mut config = config.clone();
    if config.transport == TransportMode::Socket {
        for a in &mut config.agents {
            a.endpoint = resolve_endpoint(&a.endpoint)?;
        }
    }
    let config = &config;
    let mut agents = bootstrap(config, &registry)?;
    let transport: Box<dyn Transport> = match config.transport {
        TransportMode::Mem => Box::new(MemoryTransport::new()),
        TransportMode::Socket => Box::new(SocketTransport::new()),
    };
    let mut net = Network::new(transport);
    if let Some(t) = options.tamper {
        net.set_tamper(t);
    }
    let roles: Vec<Role> = config.agents.iter().map(|a| a.role).collect();
    let mut hospital_data = train.into_iter();
    for (agent, role) in agents.iter_mut().zip(&roles) {
        if *role == Role::Hospital {
            let data = hospital_data.next().expect("one partition per hospital");
            agent.set_training(data, config.train).map_err(setup)?;
        }
    }
    for agent in agents {
        net.add(agent).map_err(setup)?;
    }
    let researcher = roles.iter().position(|r| *r == Role::Researcher).expect("validated");
    net.set_coordinator(researcher);

    let mut run = Run {
        config,
        net,
        roles,
        links: Vec::new(),
        adversary_requests: 0,
        failure: None,
    };
    let validation_size = validation.len();
    run.issue_credentials();
    run.revoke(&registry);
    run.forge();
    let pairs = run.establish_trust();
    run.attack();
    let trainers = if run.failure.is_none() {
        run.federate(&pairs, validation)
    } else {
        Vec::new()
    };
    Ok(build_report(run, &pairs, &trainers, validation_size))
}

fn hex32(h: &[u8; 32]) -> String {
    hex::encode(h)
}

fn build_report(run: Run<'_>, pairs: &[(usize, String, String)], trainers: &[usize], validation_size: usize) -> RunReport {
    let config = run.config;
    let researcher = run.roles.iter().position(|r| *r == Role::Researcher).expect("validated");
    let agents: Vec<AgentSummary> = run
        .net
        .agents
        .iter()
        .zip(&run.roles)
        .map(|(a, role)| AgentSummary {
            name: a.name().to_string(),
            role: role.as_str().to_string(),
            public_did: a.public_did().cloned(),
            credentials: a.wallet().credential_count(),
        })
        .collect();

    let connections: Vec<ConnectionOutcome> = run
        .links
        .iter()
        .filter_map(|l| {
            let c = run.net.agents[l.agent].wallet().connection(&l.connection_id)?;
            Some(ConnectionOutcome {
                agent: run.name(l.agent).to_string(),
                peer: run.name(l.peer).to_string(),
                purpose: l.purpose.to_string(),
                my_did: c.my_did.clone(),
                their_did: c.their_did.clone(),
                state: c.state,
                trusted: c.trusted,
                verified_attributes: c.verified_attributes.clone(),
            })
        })
        .collect();

    let mut verifications = Vec::new();
    for (i, agent) in run.net.agents.iter().enumerate() {
        for event in agent.events() {
            if let AgentEvent::TrustEvaluated {
                connection_id,
                accepted,
                report,
                reason,
            } = event
            {
                verifications.push(VerificationOutcome {
                    verifier: agent.name().to_string(),
                    subject: run.peer_name(i, connection_id),
                    accepted: *accepted,
                    reason: reason.clone(),
                    checks: report.as_ref().map(|r| r.checks.clone()).unwrap_or_default(),
                });
            }
        }
    }

    let fl = run.net.agents[researcher].fl_run();
    let batches: Vec<BatchRow> = fl
        .map(|r| r.batches())
        .unwrap_or_default()
        .iter()
        .map(|b| BatchRow {
            batch: b.batch,
            trainer: b.trainer.as_ref().map(|t| run.peer_name(researcher, t)),
            model_version: b.model_version,
            matrix: b.matrix,
            accuracy: b.matrix.accuracy(),
        })
        .collect();
    let lineage: Vec<LineageRow> = fl
        .map(|r| r.lineage())
        .unwrap_or_default()
        .iter()
        .map(|e| LineageRow {
            batch: e.batch,
            trainer: run.peer_name(researcher, &e.trainer),
            sent_version: e.sent_version,
            sent_hash: hex32(&e.sent_hash),
            returned_version: e.returned_version,
            returned_hash: hex32(&e.returned_hash),
        })
        .collect();
    let final_model = fl.map(|r| ModelSummary {
        version: r.model().version,
        fingerprint: hex32(&r.model().fingerprint()),
    });

    let mut assertions = Vec::new();
    let mut check = |name: &str, passed: bool, detail: String| {
        assertions.push(Assertion {
            name: name.to_string(),
            passed,
            detail,
        })
    };

    let revoked: BTreeSet<&str> = config.revocations.iter().map(|r| r.holder.as_str()).collect();
    let mutual: BTreeSet<String> = pairs
        .iter()
        .filter(|(h, cr, ch)| {
            run.net.agents[researcher].wallet().connection(cr).is_some_and(|c| c.trusted)
                && run.net.agents[*h].wallet().connection(ch).is_some_and(|c| c.trusted)
        })
        .map(|(h, _, _)| run.name(*h).to_string())
        .collect();
    let expected: BTreeSet<String> = config
        .agents_with(Role::Hospital)
        .filter(|a| !revoked.contains(a.name.as_str()))
        .map(|a| a.name.clone())
        .collect();
    check(
        "mutual_trust",
        mutual == expected,
        format!("{} of {} hospitals mutually trusted with the researcher", mutual.len(), pairs.len()),
    );

    let adversaries: BTreeSet<&str> = config
        .agents
        .iter()
        .filter(|a| a.role.is_adversary())
        .map(|a| a.name.as_str())
        .collect();
    let adversary_trusted = connections
        .iter()
        .filter(|c| c.trusted && (adversaries.contains(c.agent.as_str()) || adversaries.contains(c.peer.as_str())))
        .count();
    check(
        "adversaries_untrusted",
        adversary_trusted == 0,
        format!("{adversary_trusted} trusted connections involve an adversary"),
    );

    let mut untrusted_training = 0;
    let mut trained_by: BTreeSet<String> = BTreeSet::new();
    let mut executed: BTreeMap<String, Vec<(String, String)>> = BTreeMap::new();
    for agent in &run.net.agents {
        for event in agent.events() {
            if let AgentEvent::TrainingExecuted {
                connection_id,
                received_hash,
                returned_hash,
                ..
            } = event
            {
                if !agent.wallet().connection(connection_id).is_some_and(|c| c.trusted) {
                    untrusted_training += 1;
                }
                trained_by.insert(agent.name().to_string());
                executed
                    .entry(agent.name().to_string())
                    .or_default()
                    .push((received_hash.clone(), returned_hash.clone()));
            }
        }
    }
    check(
        "no_untrusted_training",
        untrusted_training == 0 && run.net.violations.is_empty(),
        format!(
            "{untrusted_training} train requests processed on untrusted connections, {} models sent untrusted",
            run.net.violations.len()
        ),
    );
    let refused = run
        .net
        .agents
        .iter()
        .enumerate()
        .flat_map(|(i, agent)| agent.events().iter().map(move |e| (i, e)))
        .filter(|(i, e)| {
            matches!(e, AgentEvent::TrainRequestRefused { connection_id }
                if adversaries.contains(run.peer_name(*i, connection_id).as_str()))
        })
        .count();
    check(
        "adversary_requests_refused",
        refused == run.adversary_requests,
        format!("{refused} of {} adversary train requests refused", run.adversary_requests),
    );
    let trainer_names: BTreeSet<String> = trainers.iter().map(|&t| run.name(t).to_string()).collect();
    check(
        "adversary_exclusion",
        trained_by == trainer_names && trained_by.iter().all(|t| mutual.contains(t)),
        format!("trained by {:?}", trained_by),
    );

    check(
        "batch_count",
        batches.len() == trainers.len() + 1,
        format!("{} batches for {} trainers", batches.len(), trainers.len()),
    );
    let constant = batches.iter().all(|b| b.matrix.total() as usize == validation_size);
    check(
        "constant_matrix_total",
        constant,
        format!("every matrix sums to {validation_size}"),
    );

    let chained = lineage.windows(2).all(|w| {
        w[1].sent_hash == w[0].returned_hash && w[1].sent_version == w[0].returned_version
    });
    let witnessed = lineage.iter().all(|e| {
        executed
            .get(&e.trainer)
            .is_some_and(|runs| runs.contains(&(e.sent_hash.clone(), e.returned_hash.clone())))
    });
    check(
        "lineage",
        chained && witnessed && lineage.len() == trainers.len(),
        format!("{} hand-offs, each receiving the previous result", lineage.len()),
    );

    let open: usize = run.net.agents.iter().map(|a| a.open_thread_count()).sum();
    let stray: u64 = run.net.agents.iter().map(|a| a.unexpected_replies()).sum();
    check(
        "threads_answered",
        open == 0 && stray == 0,
        format!("{open} requests unanswered, {stray} unexpected replies"),
    );

    let metrics = run.net.metrics.clone();
    check(
        "byte_conservation",
        metrics.is_conserved(),
        format!(
            "sent {} = received {} + dropped {} + lost {}",
            metrics.total_sent(),
            metrics.total_received(),
            metrics.total_dropped(),
            metrics.bytes_lost
        ),
    );
    let coordinator = run.name(researcher).to_string();
    let sent: Vec<u64> = metrics.snapshots.iter().map(|s| s.bytes_sent[&coordinator]).collect();
    check(
        "bandwidth_growth",
        metrics.snapshots.len() == batches.len() && sent.windows(2).all(|w| w[1] > w[0]),
        format!("{} snapshots, coordinator bytes sent {:?}", metrics.snapshots.len(), sent),
    );

    check(
        "completed",
        run.failure.is_none(),
        run.failure
            .as_ref()
            .map(|f| format!("failed at {}: {}", f.step, f.reason))
            .unwrap_or_else(|| "all steps completed".into()),
    );

    let passed = assertions.iter().all(|a| a.passed);
    RunReport {
        scenario: config.name.clone(),
        seed: config.seed,
        transport: config.transport.as_str().to_string(),
        passed,
        failure: run.failure,
        agents,
        connections,
        verifications,
        validation_size,
        batches,
        lineage,
        final_model,
        metrics,
        assertions,
        notes: vec![RESOURCE_NOTE.to_string()],
    }
}
