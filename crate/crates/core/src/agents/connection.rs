use crate::identity::{Did, DidDocument};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConnectionState {
    Invited,
    Requested,
    Complete,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConnectionRole {
    Inviter,
    Invitee,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InvalidTransition {
    pub from: ConnectionState,
    pub to: ConnectionState,
}

/// One side of a pairwise DIDComm channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Connection {
    pub connection_id: String,
    pub role: ConnectionRole,
    pub my_did: Did,
    pub their_did: Option<Did>,
    pub their_document: Option<DidDocument>,
    pub state: ConnectionState,
    pub trusted: bool,
    pub verified_attributes: BTreeMap<String, String>,
}

impl Connection {
    pub fn new(connection_id: String, role: ConnectionRole, my_did: Did) -> Self {
        Connection {
            connection_id,
            role,
            my_did,
            their_did: None,
            their_document: None,
            state: ConnectionState::Invited,
            trusted: false,
            verified_attributes: BTreeMap::new(),
        }
    }

    /// Moves one step along invited -> requested -> complete; anything else is refused.
    pub fn advance(&mut self, to: ConnectionState) -> Result<(), InvalidTransition> {
        let allowed = matches!(
            (self.state, to),
            (ConnectionState::Invited, ConnectionState::Requested)
                | (ConnectionState::Requested, ConnectionState::Complete)
        );
        if !allowed {
            return Err(InvalidTransition { from: self.state, to });
        }
        self.state = to;
        Ok(())
    }

    pub fn is_complete(&self) -> bool {
        self.state == ConnectionState::Complete
    }

    /// Trust requires a completed channel and a non-empty set of verified attributes.
    pub fn mark_trusted(&mut self, attributes: BTreeMap<String, String>) -> bool {
        if !self.is_complete() || attributes.is_empty() {
            return false;
        }
        self.trusted = true;
        self.verified_attributes = attributes;
        true
    }
}
