//! Declarative scenario description, loaded from JSON.

use crate::fedlearn::{SyntheticSpec, TrainConfig};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConfigError {
    #[error("cannot parse scenario config: {0}")]
    Parse(String),
    #[error("invalid scenario config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    NhsTrust,
    Regulator,
    Hospital,
    Researcher,
    MaliciousNoCred,
    MaliciousSelfSigned,
}

impl Role {
    pub fn is_adversary(self) -> bool {
        matches!(self, Role::MaliciousNoCred | Role::MaliciousSelfSigned)
    }

    /// Roles that get a public DID on the registry.
    pub fn has_public_did(self) -> bool {
        matches!(self, Role::NhsTrust | Role::Regulator | Role::MaliciousSelfSigned)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Role::NhsTrust => "nhs_trust",
            Role::Regulator => "regulator",
            Role::Hospital => "hospital",
            Role::Researcher => "researcher",
            Role::MaliciousNoCred => "malicious_no_cred",
            Role::MaliciousSelfSigned => "malicious_self_signed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum TransportMode {
    #[default]
    Mem,
    Socket,
}

impl TransportMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TransportMode::Mem => "mem",
            TransportMode::Socket => "socket",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    pub name: String,
    pub role: Role,
    /// `host:port`. In socket mode a port of 0 is replaced by a free port.
    pub endpoint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemaSpec {
    pub name: String,
    pub version: String,
    pub attribute_names: Vec<String>,
    /// Names of the agents the registry authorizes to issue this schema.
    #[serde(default)]
    pub issuers: Vec<String>,
}

impl SchemaSpec {
    pub fn schema_id(&self) -> String {
        format!("{}:{}", self.name, self.version)
    }
}

/// `{name}` in an attribute value is replaced by the holder's agent name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IssuanceSpec {
    pub issuer: String,
    pub holder_role: Role,
    pub schema_id: String,
    pub attributes: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrustSpec {
    pub verifier_role: Role,
    pub subject_role: Role,
    pub schema_id: String,
    /// Agent name of the issuer whose credentials are accepted.
    pub required_issuer: String,
    #[serde(default)]
    pub disclosed_attributes: Vec<String>,
    #[serde(default)]
    pub attribute_constraints: Vec<(String, String)>,
}

/// The credential a self-signing adversary forges for itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForgerySpec {
    pub schema_id: String,
    pub attributes: BTreeMap<String, String>,
}

/// Revokes the credential `issuer` gave to `holder` under `schema_id`, before trust is established.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RevocationSpec {
    pub issuer: String,
    pub holder: String,
    pub schema_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synthetic(SyntheticSpec),
    Csv(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub source: DataSource,
    pub partition_seed: u64,
    /// Label-flip rate per hospital partition, in hospital order. Missing entries mean 0.
    #[serde(default)]
    pub label_noise: Vec<f64>,
}

fn default_budget() -> usize {
    100_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub seed: u64,
    #[serde(default)]
    pub transport: TransportMode,
    /// Upper bound on envelope deliveries per phase.
    #[serde(default = "default_budget")]
    pub dispatch_budget: usize,
    pub agents: Vec<AgentSpec>,
    pub schemas: Vec<SchemaSpec>,
    pub issuance: Vec<IssuanceSpec>,
    pub trust: Vec<TrustSpec>,
    #[serde(default)]
    pub forgery: Option<ForgerySpec>,
    #[serde(default)]
    pub revocations: Vec<RevocationSpec>,
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub train: TrainConfig,
}

/// Drops `//` line comments so configs can be documented in place.
fn strip_comments(text: &str) -> String {
    text.lines()
        .map(|line| {
            let mut in_string = false;
            let mut escaped = false;
            let bytes = line.as_bytes();
            for i in 0..bytes.len() {
                let c = bytes[i];
                if in_string {
                    match c {
                        _ if escaped => escaped = false,
                        b'\\' => escaped = true,
                        b'"' => in_string = false,
                        _ => {}
                    }
                } else if c == b'"' {
                    in_string = true;
                } else if c == b'/' && bytes.get(i + 1) == Some(&b'/') {
                    return &line[..i];
                }
            }
            line
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let config: ScenarioConfig =
            serde_json::from_str(&strip_comments(text)).map_err(|e| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Parse(format!("{}: {e}", path.display())))?;
        let mut config = Self::from_json(&text)?;
        // relative CSV paths are relative to the config file
        if let DataSource::Csv(csv) = &mut config.dataset.source {
            if csv.is_relative() {
                if let Some(dir) = path.parent() {
                    *csv = dir.join(&*csv);
                }
            }
        }
        Ok(config)
    }

    pub fn agents_with(&self, role: Role) -> impl Iterator<Item = &AgentSpec> {
        self.agents.iter().filter(move |a| a.role == role)
    }

    pub fn agent(&self, name: &str) -> Option<&AgentSpec> {
        self.agents.iter().find(|a| a.name == name)
    }

    pub fn trust_policy(&self, verifier: Role, subject: Role) -> Option<&TrustSpec> {
        self.trust
            .iter()
            .find(|t| t.verifier_role == verifier && t.subject_role == subject)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut names = BTreeSet::new();
        let mut endpoints = BTreeSet::new();
        for a in &self.agents {
            if a.name.is_empty() || !names.insert(a.name.as_str()) {
                return Err(invalid(format!("agent name {:?} is empty or repeated", a.name)));
            }
            if a.endpoint.is_empty() {
                return Err(invalid(format!("agent {} has no endpoint", a.name)));
            }
            let wildcard = a.endpoint.ends_with(":0");
            if !wildcard && !endpoints.insert(a.endpoint.as_str()) {
                return Err(invalid(format!("endpoint {} is used twice", a.endpoint)));
            }
            if self.transport == TransportMode::Mem && wildcard {
                return Err(invalid(format!("agent {}: port 0 needs the socket transport", a.name)));
            }
        }
        if self.agents_with(Role::Researcher).count() != 1 {
            return Err(invalid("exactly one researcher is required"));
        }
        if self.agents_with(Role::Hospital).count() == 0 {
            return Err(invalid("at least one hospital is required"));
        }
        if self.dispatch_budget == 0 {
            return Err(invalid("dispatch_budget must be positive"));
        }

        let mut schema_ids = BTreeSet::new();
        for s in &self.schemas {
            if !schema_ids.insert(s.schema_id()) {
                return Err(invalid(format!("schema {} declared twice", s.schema_id())));
            }
            for issuer in &s.issuers {
                match self.agent(issuer) {
                    Some(a) if a.role.has_public_did() => {}
                    _ => return Err(invalid(format!("schema {}: {issuer} cannot issue", s.schema_id()))),
                }
            }
        }
        let schema = |id: &str| self.schemas.iter().find(|s| s.schema_id() == id);
        for i in &self.issuance {
            let Some(s) = schema(&i.schema_id) else {
                return Err(invalid(format!("issuance names unknown schema {}", i.schema_id)));
            };
            match self.agent(&i.issuer) {
                Some(a) if a.role.has_public_did() && !a.role.is_adversary() => {}
                _ => return Err(invalid(format!("issuance issuer {} cannot issue", i.issuer))),
            }
            let mut expected = s.attribute_names.clone();
            expected.sort();
            if i.attributes.keys().cloned().collect::<Vec<_>>() != expected {
                return Err(invalid(format!("issuance of {} has the wrong attribute names", i.schema_id)));
            }
        }
        for t in &self.trust {
            if schema(&t.schema_id).is_none() {
                return Err(invalid(format!("trust policy names unknown schema {}", t.schema_id)));
            }
            if !self.agent(&t.required_issuer).is_some_and(|a| a.role.has_public_did()) {
                return Err(invalid(format!("trust policy names unknown issuer {}", t.required_issuer)));
            }
        }
        for (verifier, subject) in [(Role::Researcher, Role::Hospital), (Role::Hospital, Role::Researcher)] {
            if self.trust_policy(verifier, subject).is_none() {
                return Err(invalid(format!(
                    "missing trust policy for {} verifying {}",
                    verifier.as_str(),
                    subject.as_str()
                )));
            }
        }
        if self.agents_with(Role::MaliciousSelfSigned).next().is_some() {
            let Some(f) = &self.forgery else {
                return Err(invalid("malicious_self_signed agents need a forgery spec"));
            };
            if schema(&f.schema_id).is_none() {
                return Err(invalid(format!("forgery names unknown schema {}", f.schema_id)));
            }
        }
        for r in &self.revocations {
            if !self.issuance.iter().any(|i| i.issuer == r.issuer && i.schema_id == r.schema_id) {
                return Err(invalid(format!("{} never issues {}, so cannot revoke it", r.issuer, r.schema_id)));
            }
            if self.agent(&r.holder).is_none() {
                return Err(invalid(format!("revocation names unknown holder {}", r.holder)));
            }
        }
        if self.dataset.label_noise.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(invalid("label_noise rates must lie in [0, 1]"));
        }
        self.train.validate().map_err(|e| invalid(e.to_string()))?;
        Ok(())
    }
}
