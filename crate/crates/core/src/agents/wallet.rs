use super::connection::Connection;
use crate::credentials::{HeldCredential, LinkSecret};
use crate::crypto::KeyPair;
use crate::identity::{Did, PeerStore};
use std::collections::BTreeMap;

/// Everything an agent keeps about itself and its peers.
#[derive(Debug)]
pub struct Wallet {
    /// Secret keys behind each of this agent's peer DIDs.
    pub(crate) peer_keys: BTreeMap<Did, KeyPair>,
    pub peer_store: PeerStore,
    pub(crate) link_secret: LinkSecret,
    credentials: BTreeMap<[u8; 32], HeldCredential>,
    pub(crate) connections: BTreeMap<String, Connection>,
    /// Invitation token -> connection id; a token is consumed by its first request.
    pub(crate) invitations: BTreeMap<String, (String, bool)>,
}

impl Wallet {
    pub fn new(link_secret: LinkSecret) -> Self {
        Wallet {
            peer_keys: BTreeMap::new(),
            peer_store: PeerStore::new(),
            link_secret,
            credentials: BTreeMap::new(),
            connections: BTreeMap::new(),
            invitations: BTreeMap::new(),
        }
    }

    /// Stores by credential hash; returns false if already held.
    pub fn add_credential(&mut self, held: HeldCredential) -> bool {
        let hash = held.credential.credential_hash;
        if self.credentials.contains_key(&hash) {
            return false;
        }
        self.credentials.insert(hash, held);
        true
    }

    pub fn credentials(&self) -> impl Iterator<Item = &HeldCredential> {
        self.credentials.values()
    }

    pub fn credential_count(&self) -> usize {
        self.credentials.len()
    }

    /// Prefers a credential from `issuer`, falling back to any with the schema.
    pub fn find_credential(&self, schema_id: &str, issuer: &Did) -> Option<&HeldCredential> {
        let mut matching = self.credentials.values().filter(|h| h.credential.schema_id == schema_id);
        let all: Vec<&HeldCredential> = matching.by_ref().collect();
        all.iter()
            .find(|h| h.credential.issuer_did == *issuer)
            .or_else(|| all.first())
            .copied()
    }

    pub fn connection(&self, id: &str) -> Option<&Connection> {
        self.connections.get(id)
    }

    pub fn connections(&self) -> impl Iterator<Item = &Connection> {
        self.connections.values()
    }

    pub fn connection_by_my_did(&self, did: &Did) -> Option<&Connection> {
        self.connections.values().find(|c| c.my_did == *did)
    }
}
