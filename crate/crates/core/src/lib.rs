//! Verifiable-credential trust establishment between DID-authenticated agents,
//! gating a sequential federated-learning workflow.

pub mod crypto;
pub mod encoding;
pub mod identity;
pub mod registry;
pub mod credentials;
pub mod fedlearn;
pub mod agents;
pub mod harness;
