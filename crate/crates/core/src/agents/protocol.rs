//! Body schemas for each message type.

use crate::credentials::{Credential, CredentialRequest, Presentation, ProofRequest};
use crate::identity::{Did, DidDocument, MessageType, ProblemCode};
use serde::{Deserialize, Serialize};

/// `did_doc` must match [`crate::identity::INTRODUCTION_DOC_FIELD`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExchangeRequest {
    pub did_doc: DidDocument,
    pub token: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExchangeResponse {
    pub did_doc: DidDocument,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CredentialOffer {
    pub schema_id: String,
    pub issuer_did: Did,
}

pub type CredentialRequestBody = CredentialRequest;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CredentialIssue {
    pub credential: Credential,
}

pub type ProofRequestBody = ProofRequest;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProofPresentation {
    pub presentation: Presentation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelTransfer {
    pub model: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ack {
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemReport {
    pub code: ProblemCode,
    pub explanation: String,
}

/// Whether a message of this type leaves its thread waiting for an answer.
pub fn expects_reply(kind: MessageType) -> bool {
    matches!(
        kind,
        MessageType::DidExchangeRequest
            | MessageType::CredentialOffer
            | MessageType::CredentialRequest
            | MessageType::CredentialIssue
            | MessageType::ProofRequest
            | MessageType::ProofPresentation
            | MessageType::TrainRequest
    )
}
