//! In-process verifiable data registry: issuer DID documents, credential schemas,
//! issuance grants and revoked credential hashes. Append-only.

use crate::identity::{Did, DidDocument, DidMethod};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::sync::RwLock;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RegistryError {
    #[error("{0} is already registered with a different key")]
    Conflict(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("invalid document: {0}")]
    InvalidDocument(String),
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("snapshot error: {0}")]
    Snapshot(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CredentialSchema {
    pub schema_id: String,
    pub name: String,
    pub version: String,
    pub attribute_names: Vec<String>,
}

impl CredentialSchema {
    /// Attribute names are sorted; duplicates or an empty list are rejected.
    pub fn new(name: &str, version: &str, attribute_names: &[&str]) -> Result<Self, RegistryError> {
        let mut attrs: Vec<String> = attribute_names.iter().map(|s| s.to_string()).collect();
        attrs.sort();
        let schema = CredentialSchema {
            schema_id: format!("{name}:{version}"),
            name: name.to_string(),
            version: version.to_string(),
            attribute_names: attrs,
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<(), RegistryError> {
        let bad = |why: &str| Err(RegistryError::InvalidSchema(format!("{}: {why}", self.schema_id)));
        if self.name.is_empty() || self.version.is_empty() || self.name.contains(':') {
            return bad("name and version must be non-empty, name without ':'");
        }
        if self.schema_id != format!("{}:{}", self.name, self.version) {
            return bad("schema_id must be name:version");
        }
        if self.attribute_names.is_empty() {
            return bad("no attributes");
        }
        if !self.attribute_names.windows(2).all(|w| w[0] < w[1]) {
            return bad("attribute names must be unique and sorted");
        }
        if self.attribute_names.iter().any(|a| a.is_empty() || a.contains('=') || a.contains('\n')) {
            return bad("attribute names must be non-empty without '=' or newlines");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthorizationRecord {
    pub schema_id: String,
    pub authorized_issuers: BTreeSet<Did>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct State {
    dids: BTreeMap<Did, DidDocument>,
    schemas: BTreeMap<String, CredentialSchema>,
    grants: BTreeMap<String, BTreeSet<Did>>,
    revoked: BTreeSet<[u8; 32]>,
}

/// Serialized registry contents.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Snapshot {
    pub dids: Vec<DidDocument>,
    pub schemas: Vec<CredentialSchema>,
    pub grants: Vec<AuthorizationRecord>,
    pub revoked: Vec<String>,
}

/// Readers share the lock; every write goes through the single writer side.
#[derive(Debug, Default)]
pub struct Registry {
    state: RwLock<State>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register_issuer(&self, doc: DidDocument) -> Result<(), RegistryError> {
        if doc.id.method != DidMethod::Pub {
            return Err(RegistryError::InvalidDocument(format!("{} is not a public DID", doc.id)));
        }
        let mut state = self.state.write().unwrap();
        if let Some(existing) = state.dids.get(&doc.id) {
            if existing.verification_key != doc.verification_key {
                return Err(RegistryError::Conflict(doc.id.to_string()));
            }
            return Ok(());
        }
        if !doc.is_consistent() {
            return Err(RegistryError::InvalidDocument(format!("{} does not match its key", doc.id)));
        }
        state.dids.insert(doc.id.clone(), doc);
        Ok(())
    }

    pub fn resolve(&self, did: &Did) -> Option<DidDocument> {
        self.state.read().unwrap().dids.get(did).cloned()
    }

    pub fn register_schema(&self, schema: CredentialSchema) -> Result<String, RegistryError> {
        schema.validate()?;
        let mut state = self.state.write().unwrap();
        match state.schemas.get(&schema.schema_id) {
            Some(existing) if *existing != schema => Err(RegistryError::Conflict(schema.schema_id)),
            Some(_) => Ok(schema.schema_id),
            None => {
                let id = schema.schema_id.clone();
                state.schemas.insert(id.clone(), schema);
                Ok(id)
            }
        }
    }

    pub fn schema(&self, schema_id: &str) -> Option<CredentialSchema> {
        self.state.read().unwrap().schemas.get(schema_id).cloned()
    }

    pub fn authorize(&self, schema_id: &str, issuer: &Did) -> Result<(), RegistryError> {
        let mut state = self.state.write().unwrap();
        if !state.schemas.contains_key(schema_id) {
            return Err(RegistryError::NotFound(format!("schema {schema_id}")));
        }
        if !state.dids.contains_key(issuer) {
            return Err(RegistryError::NotFound(format!("issuer {issuer}")));
        }
        state
            .grants
            .entry(schema_id.to_string())
            .or_default()
            .insert(issuer.clone());
        Ok(())
    }

    pub fn is_authorized(&self, schema_id: &str, issuer: &Did) -> bool {
        self.state
            .read()
            .unwrap()
            .grants
            .get(schema_id)
            .is_some_and(|issuers| issuers.contains(issuer))
    }

    pub fn revoke(&self, credential_hash: [u8; 32]) {
        self.state.write().unwrap().revoked.insert(credential_hash);
    }

    pub fn is_revoked(&self, credential_hash: &[u8; 32]) -> bool {
        self.state.read().unwrap().revoked.contains(credential_hash)
    }

    pub fn snapshot(&self) -> Snapshot {
        let state = self.state.read().unwrap();
        Snapshot {
            dids: state.dids.values().cloned().collect(),
            schemas: state.schemas.values().cloned().collect(),
            grants: state
                .grants
                .iter()
                .map(|(schema_id, issuers)| AuthorizationRecord {
                    schema_id: schema_id.clone(),
                    authorized_issuers: issuers.clone(),
                })
                .collect(),
            revoked: state.revoked.iter().map(hex::encode).collect(),
        }
    }

    /// Rebuilds a registry, re-checking every invariant the write path enforces.
    pub fn from_snapshot(snapshot: &Snapshot) -> Result<Self, RegistryError> {
        let registry = Registry::new();
        registry.merge_snapshot(snapshot)?;
        Ok(registry)
    }

    /// Applies a snapshot on top of the current contents, under the usual conflict rules.
    pub fn merge_snapshot(&self, snapshot: &Snapshot) -> Result<(), RegistryError> {
        for doc in &snapshot.dids {
            self.register_issuer(doc.clone())?;
        }
        for schema in &snapshot.schemas {
            self.register_schema(schema.clone())?;
        }
        for grant in &snapshot.grants {
            for issuer in &grant.authorized_issuers {
                self.authorize(&grant.schema_id, issuer)?;
            }
        }
        for h in &snapshot.revoked {
            let mut hash = [0u8; 32];
            hex::decode_to_slice(h, &mut hash).map_err(|e| RegistryError::Snapshot(format!("revoked hash {h}: {e}")))?;
            self.revoke(hash);
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.snapshot()).expect("snapshot serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, RegistryError> {
        let snapshot: Snapshot = serde_json::from_str(text).map_err(|e| RegistryError::Snapshot(e.to_string()))?;
        Self::from_snapshot(&snapshot)
    }
}
