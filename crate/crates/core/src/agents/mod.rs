//! Agents: DID exchange, credential issuance, trust establishment and the
//! message-driven side of sequential federated learning.
//!
//! An [`Agent`] is a pure state machine. It consumes wire envelopes through
//! [`Agent::handle_wire`] and returns the envelopes it wants delivered; moving
//! bytes between endpoints is the harness's job.

pub mod connection;
pub mod protocol;
pub mod transport;
pub mod wallet;

use crate::credentials::{
    self, verify_presentation, Check, CredentialError, HeldCredential, LinkSecret, ProofRequest, VerificationReport,
};
use crate::crypto::{Commitment, KeyPair};
use crate::fedlearn::{self, Dataset, FlError, ModelParams, SequentialRun, TrainConfig};
use crate::identity::{
    create_peer_did, create_public_did, pack, random_id, unpack, unpack_introduction, Did, DidDocument, Envelope,
    IdentityError, Message, MessageType, ProblemCode,
};
use crate::registry::{Registry, RegistryError};
use connection::{Connection, ConnectionRole, ConnectionState};
use protocol::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::sync::Arc;
use thiserror::Error;
use wallet::Wallet;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("unknown connection {0}")]
    UnknownConnection(String),
    #[error("connection {0} is not ready: {1}")]
    NotReady(String, String),
    #[error("connection {0} is not trusted")]
    NotTrusted(String),
    #[error("agent has no public identity")]
    NoPublicIdentity,
    #[error("invalid invitation: {0}")]
    Invitation(String),
    #[error(transparent)]
    Identity(#[from] IdentityError),
    #[error(transparent)]
    Credential(#[from] CredentialError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Fl(#[from] FlError),
}

/// Out-of-band invitation: the inviter's peer DID document and a one-time token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Invitation {
    pub document: DidDocument,
    pub token: String,
}

/// An envelope this agent wants delivered.
#[derive(Debug, Clone, PartialEq)]
pub struct Outbound {
    pub endpoint: String,
    pub kind: MessageType,
    /// Length of the canonical plaintext that was sealed.
    pub plaintext_len: usize,
    pub envelope: Envelope,
}

/// An inbound envelope that was discarded without a reply.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Dropped {
    pub class: String,
    pub reason: String,
}

/// What a verifier asks of a peer before trusting it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrustPolicy {
    pub schema_id: String,
    pub required_issuer: Did,
    #[serde(default)]
    pub disclosed_attributes: Vec<String>,
    #[serde(default)]
    pub attribute_constraints: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum AgentEvent {
    ConnectionCompleted {
        connection_id: String,
        their_did: Did,
    },
    InvitationRejected {
        connection_id: String,
        from: Did,
    },
    OfferDeclined {
        connection_id: String,
        schema_id: String,
    },
    CredentialIssued {
        connection_id: String,
        schema_id: String,
        credential_hash: String,
    },
    CredentialStored {
        connection_id: String,
        schema_id: String,
        issuer: Did,
        credential_hash: String,
    },
    CredentialRejected {
        connection_id: String,
        reason: String,
    },
    TrustEvaluated {
        connection_id: String,
        accepted: bool,
        report: Option<VerificationReport>,
        reason: String,
    },
    TrainRequestRefused {
        connection_id: String,
    },
    TrainingExecuted {
        connection_id: String,
        received_version: u64,
        returned_version: u64,
        received_hash: String,
        returned_hash: String,
    },
    ModelSent {
        connection_id: String,
        version: u64,
        trusted: bool,
    },
    ResultAccepted {
        connection_id: String,
        version: u64,
    },
    FederatedLearningFailed {
        reason: String,
    },
    AckReceived {
        connection_id: String,
        status: String,
    },
    ProblemReceived {
        connection_id: String,
        code: ProblemCode,
        explanation: String,
    },
    ProblemSent {
        connection_id: String,
        code: ProblemCode,
        explanation: String,
    },
    Dropped {
        class: String,
        reason: String,
    },
}

struct PendingOffer {
    connection_id: String,
    schema_id: String,
    attributes: BTreeMap<String, String>,
}

struct PendingRequest {
    connection_id: String,
    schema_id: String,
    issuer: Did,
    commitment: Commitment,
    blinding: credentials::Blinding,
}

struct Training {
    data: Dataset,
    config: TrainConfig,
}

fn is_reply(kind: MessageType) -> bool {
    matches!(
        kind,
        MessageType::DidExchangeResponse
            | MessageType::CredentialRequest
            | MessageType::CredentialIssue
            | MessageType::ProofPresentation
            | MessageType::TrainResult
            | MessageType::Ack
            | MessageType::ProblemReport
    )
}

pub struct Agent {
    name: String,
    endpoint: String,
    registry: Arc<Registry>,
    rng: ChaCha20Rng,
    public: Option<(KeyPair, Did)>,
    wallet: Wallet,
    training: Option<Training>,
    fl: Option<SequentialRun>,
    fl_thread: Option<String>,
    fl_failure: Option<String>,
    offers: BTreeMap<String, PendingOffer>,
    requests: BTreeMap<String, PendingRequest>,
    proofs: BTreeMap<String, (String, ProofRequest)>,
    open_threads: BTreeMap<String, (String, MessageType)>,
    unexpected_replies: u64,
    next_connection: u64,
    events: Vec<AgentEvent>,
}

impl std::fmt::Debug for Agent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Agent")
            .field("name", &self.name)
            .field("endpoint", &self.endpoint)
            .field("connections", &self.wallet.connections.len())
            .finish_non_exhaustive()
    }
}

impl Agent {
    /// All randomness (keys, nonces, tokens, ids) comes from `seed`.
    pub fn new(name: &str, endpoint: &str, registry: Arc<Registry>, seed: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let link_secret = LinkSecret::generate(&mut rng);
        Agent {
            name: name.to_string(),
            endpoint: endpoint.to_string(),
            registry,
            rng,
            public: None,
            wallet: Wallet::new(link_secret),
            training: None,
            fl: None,
            fl_thread: None,
            fl_failure: None,
            offers: BTreeMap::new(),
            requests: BTreeMap::new(),
            proofs: BTreeMap::new(),
            open_threads: BTreeMap::new(),
            unexpected_replies: 0,
            next_connection: 0,
            events: Vec::new(),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    pub fn wallet(&self) -> &Wallet {
        &self.wallet
    }

    pub fn events(&self) -> &[AgentEvent] {
        &self.events
    }

    pub fn unexpected_replies(&self) -> u64 {
        self.unexpected_replies
    }

    /// Threads this agent opened that have not been answered yet.
    pub fn open_thread_count(&self) -> usize {
        self.open_threads.len()
    }

    pub fn public_did(&self) -> Option<&Did> {
        self.public.as_ref().map(|(_, did)| did)
    }

    /// Creates a public DID and registers it on the ledger. Idempotent.
    pub fn enable_issuer(&mut self) -> Result<Did, AgentError> {
        if let Some((_, did)) = &self.public {
            return Ok(did.clone());
        }
        let keypair = KeyPair::generate(&mut self.rng);
        let (did, doc) = create_public_did(&keypair, &self.endpoint)?;
        self.registry.register_issuer(doc)?;
        self.public = Some((keypair, did.clone()));
        Ok(did)
    }

    pub fn set_training(&mut self, data: Dataset, config: TrainConfig) -> Result<(), AgentError> {
        config.validate()?;
        self.training = Some(Training { data, config });
        Ok(())
    }

    pub fn fl_run(&self) -> Option<&SequentialRun> {
        self.fl.as_ref()
    }

    pub fn fl_failure(&self) -> Option<&str> {
        self.fl_failure.as_deref()
    }

    fn new_peer_connection(&mut self, role: ConnectionRole) -> Result<(String, DidDocument), AgentError> {
        let keypair = KeyPair::generate(&mut self.rng);
        let (did, doc) = create_peer_did(&keypair, &self.endpoint)?;
        self.next_connection += 1;
        let id = format!("{}#{}", self.name, self.next_connection);
        self.wallet.peer_keys.insert(did.clone(), keypair);
        self.wallet
            .connections
            .insert(id.clone(), Connection::new(id.clone(), role, did));
        Ok((id, doc))
    }

    /// Returns the new connection id and the invitation to hand over out of band.
    pub fn create_invitation(&mut self) -> Result<(String, Invitation), AgentError> {
        let (id, document) = self.new_peer_connection(ConnectionRole::Inviter)?;
        let token = random_id(&mut self.rng);
        self.wallet.invitations.insert(token.clone(), (id.clone(), false));
        Ok((id, Invitation { document, token }))
    }

    /// Sends the DID exchange request that answers `invitation`.
    pub fn accept_invitation(&mut self, invitation: &Invitation) -> Result<(String, Outbound), AgentError> {
        if !invitation.document.is_consistent() || !invitation.document.id.is_peer() {
            return Err(AgentError::Invitation("document does not bind to a peer DID".into()));
        }
        self.wallet.peer_store.insert(invitation.document.clone())?;
        let (id, my_doc) = self.new_peer_connection(ConnectionRole::Invitee)?;
        let conn = self.wallet.connections.get_mut(&id).expect("just inserted");
        conn.their_did = Some(invitation.document.id.clone());
        conn.their_document = Some(invitation.document.clone());
        let thid = random_id(&mut self.rng);
        let body = ExchangeRequest {
            did_doc: my_doc,
            token: invitation.token.clone(),
        };
        let out = self.send(&id, MessageType::DidExchangeRequest, thid, &body)?;
        self.connection_mut(&id)?
            .advance(ConnectionState::Requested)
            .map_err(|e| AgentError::NotReady(id.clone(), format!("{e:?}")))?;
        Ok((id, out))
    }

    pub fn offer_credential(
        &mut self,
        connection_id: &str,
        schema_id: &str,
        attributes: BTreeMap<String, String>,
    ) -> Result<Outbound, AgentError> {
        let issuer = self.public_did().cloned().ok_or(AgentError::NoPublicIdentity)?;
        if self.registry.schema(schema_id).is_none() {
            return Err(CredentialError::NotFound(schema_id.to_string()).into());
        }
        self.require_complete(connection_id)?;
        let thid = random_id(&mut self.rng);
        self.offers.insert(
            thid.clone(),
            PendingOffer {
                connection_id: connection_id.to_string(),
                schema_id: schema_id.to_string(),
                attributes,
            },
        );
        let body = CredentialOffer {
            schema_id: schema_id.to_string(),
            issuer_did: issuer,
        };
        self.send(connection_id, MessageType::CredentialOffer, thid, &body)
    }

    /// Issues a credential to this agent's own wallet under its own public DID.
    pub fn self_issue(&mut self, schema_id: &str, attributes: BTreeMap<String, String>) -> Result<[u8; 32], AgentError> {
        let (keypair, did) = self.public.clone().ok_or(AgentError::NoPublicIdentity)?;
        let schema = self
            .registry
            .schema(schema_id)
            .ok_or_else(|| CredentialError::NotFound(schema_id.to_string()))?;
        let (request, blinding) =
            credentials::request_credential(&self.wallet.link_secret, schema_id, &self.registry, &mut self.rng)?;
        let credential = credentials::issue(&keypair, &did, &schema, &attributes, &request.commitment)?;
        let hash = credential.credential_hash;
        self.wallet.add_credential(HeldCredential { credential, blinding });
        Ok(hash)
    }

    pub fn request_proof(&mut self, connection_id: &str, policy: &TrustPolicy) -> Result<Outbound, AgentError> {
        self.require_complete(connection_id)?;
        let request = ProofRequest::new(
            &mut self.rng,
            &policy.schema_id,
            &policy.required_issuer,
            policy.disclosed_attributes.clone(),
            policy.attribute_constraints.clone(),
        );
        let thid = random_id(&mut self.rng);
        self.proofs
            .insert(thid.clone(), (connection_id.to_string(), request.clone()));
        self.send(connection_id, MessageType::ProofRequest, thid, &request)
    }

    /// Benchmarks `model` and hands it to the first trainer. Every connection in
    /// `order` must already be trusted; otherwise nothing is sent.
    pub fn start_federated_learning(
        &mut self,
        order: Vec<String>,
        model: ModelParams,
        validation: Dataset,
        threshold: f64,
    ) -> Result<Vec<Outbound>, AgentError> {
        for id in &order {
            let conn = self.connection(id)?;
            if !conn.is_complete() || !conn.trusted {
                return Err(AgentError::NotTrusted(id.clone()));
            }
        }
        let mut run = SequentialRun::new(model, validation, order, threshold)?;
        let first = run.start()?;
        self.fl = Some(run);
        self.fl_failure = None;
        match first {
            Some(dispatch) => Ok(vec![self.dispatch_model(dispatch)?]),
            None => Ok(Vec::new()),
        }
    }

    /// Sends an arbitrary message on a completed connection, bypassing role logic.
    pub fn send_message(
        &mut self,
        connection_id: &str,
        kind: MessageType,
        body: &serde_json::Value,
    ) -> Result<Outbound, AgentError> {
        self.require_complete(connection_id)?;
        let thid = random_id(&mut self.rng);
        self.send(connection_id, kind, thid, body)
    }

    fn connection(&self, id: &str) -> Result<&Connection, AgentError> {
        self.wallet
            .connections
            .get(id)
            .ok_or_else(|| AgentError::UnknownConnection(id.to_string()))
    }

    fn connection_mut(&mut self, id: &str) -> Result<&mut Connection, AgentError> {
        self.wallet
            .connections
            .get_mut(id)
            .ok_or_else(|| AgentError::UnknownConnection(id.to_string()))
    }

    fn require_complete(&self, id: &str) -> Result<(), AgentError> {
        if !self.connection(id)?.is_complete() {
            return Err(AgentError::NotReady(id.to_string(), "DID exchange not complete".into()));
        }
        Ok(())
    }

    fn send_to_doc<T: Serialize>(
        &mut self,
        my_did: &Did,
        doc: &DidDocument,
        kind: MessageType,
        thread_id: String,
        body: &T,
    ) -> Result<Outbound, AgentError> {
        let keypair = self.wallet.peer_keys.get(my_did).cloned().ok_or_else(|| {
            AgentError::NotReady(my_did.to_string(), "no key for DID".into())
        })?;
        let message = Message::new(kind, Some(thread_id), body)?;
        let envelope = pack(&message, &keypair, my_did, doc, &mut self.rng)?;
        Ok(Outbound {
            endpoint: doc.endpoint.clone(),
            kind,
            plaintext_len: message.canonical_bytes().len(),
            envelope,
        })
    }

    fn send<T: Serialize>(
        &mut self,
        connection_id: &str,
        kind: MessageType,
        thread_id: String,
        body: &T,
    ) -> Result<Outbound, AgentError> {
        let conn = self.connection(connection_id)?;
        let doc = conn
            .their_document
            .clone()
            .ok_or_else(|| AgentError::NotReady(connection_id.to_string(), "peer unknown".into()))?;
        let my_did = conn.my_did.clone();
        let out = self.send_to_doc(&my_did, &doc, kind, thread_id.clone(), body)?;
        if expects_reply(kind) {
            self.open_threads.insert(thread_id, (connection_id.to_string(), kind));
        }
        Ok(out)
    }

    fn problem(
        &mut self,
        connection_id: &str,
        thread_id: Option<String>,
        code: ProblemCode,
        explanation: String,
    ) -> Vec<Outbound> {
        self.events.push(AgentEvent::ProblemSent {
            connection_id: connection_id.to_string(),
            code,
            explanation: explanation.clone(),
        });
        let thid = thread_id.unwrap_or_else(|| random_id(&mut self.rng));
        let body = ProblemReport { code, explanation };
        self.send(connection_id, MessageType::ProblemReport, thid, &body)
            .into_iter()
            .collect()
    }

    fn reply<T: Serialize>(
        &mut self,
        connection_id: &str,
        kind: MessageType,
        thread_id: Option<String>,
        body: &T,
    ) -> Vec<Outbound> {
        let thid = thread_id.unwrap_or_else(|| random_id(&mut self.rng));
        match self.send(connection_id, kind, thid.clone(), body) {
            Ok(out) => vec![out],
            Err(e) => self.problem(connection_id, Some(thid), ProblemCode::Internal, e.to_string()),
        }
    }

    fn drop_envelope(&mut self, class: &str, reason: String) -> Dropped {
        self.events.push(AgentEvent::Dropped {
            class: class.to_string(),
            reason: reason.clone(),
        });
        Dropped {
            class: class.to_string(),
            reason,
        }
    }

    /// Authenticates, decrypts and acts on one inbound envelope.
    pub fn handle_wire(&mut self, wire: &[u8]) -> Result<Vec<Outbound>, Dropped> {
        let envelope = match Envelope::from_wire(wire) {
            Ok(e) => e,
            Err(e) => return Err(self.drop_envelope(e.class(), e.to_string())),
        };
        self.handle_envelope(&envelope)
    }

    pub fn handle_envelope(&mut self, envelope: &Envelope) -> Result<Vec<Outbound>, Dropped> {
        let Some(conn) = self.wallet.connection_by_my_did(&envelope.to).cloned() else {
            return Err(self.drop_envelope("confidentiality", format!("no connection uses {}", envelope.to)));
        };
        let keypair = self.wallet.peer_keys[&envelope.to].clone();
        let id = conn.connection_id.clone();
        let known = conn.their_document.as_ref().filter(|d| d.id == envelope.from);
        let unpacked = match (known, conn.role) {
            (Some(doc), _) => unpack(envelope, &keypair, doc),
            (None, ConnectionRole::Inviter) => match unpack_introduction(envelope, &keypair) {
                Ok((message, doc)) => return Ok(self.on_exchange_request(&id, message, doc)),
                Err(e) => Err(e),
            },
            (None, ConnectionRole::Invitee) => match &conn.their_document {
                Some(doc) => unpack(envelope, &keypair, doc),
                None => Err(IdentityError::Integrity(format!("unknown sender {}", envelope.from))),
            },
        };
        let message = match unpacked {
            Ok(m) => m,
            Err(IdentityError::UnsupportedType { kind, thread_id }) => {
                // the sender is authenticated; tell it what went wrong
                return Ok(self.problem(
                    &id,
                    thread_id,
                    ProblemCode::UnsupportedType,
                    format!("unsupported message type {kind}"),
                ));
            }
            Err(e) => return Err(self.drop_envelope(e.class(), e.to_string())),
        };
        Ok(self.dispatch(&id, message))
    }

    fn dispatch(&mut self, id: &str, message: Message) -> Vec<Outbound> {
        if is_reply(message.kind) {
            let opened = message
                .thread_id
                .as_ref()
                .and_then(|t| self.open_threads.remove(t))
                .filter(|(conn, _)| conn == id);
            if opened.is_none() {
                self.unexpected_replies += 1;
            }
        }
        let thid = message.thread_id.clone();
        let complete = self.wallet.connections.get(id).map(|c| c.is_complete()).unwrap_or(false);
        match message.kind {
            MessageType::DidExchangeRequest => {
                // a second request from the already-connected peer
                self.problem(id, thid, ProblemCode::Internal, "connection already exists".into())
            }
            MessageType::DidExchangeResponse => self.on_exchange_response(id, &message),
            MessageType::ProblemReport => self.on_problem(id, &message),
            _ if !complete => self.problem(id, thid, ProblemCode::Internal, "DID exchange not complete".into()),
            MessageType::CredentialOffer => self.on_offer(id, &message),
            MessageType::CredentialRequest => self.on_credential_request(id, &message),
            MessageType::CredentialIssue => self.on_credential_issue(id, &message),
            MessageType::ProofRequest => self.on_proof_request(id, &message),
            MessageType::ProofPresentation => self.on_presentation(id, &message),
            MessageType::TrainRequest => self.on_train_request(id, &message),
            MessageType::TrainResult => self.on_train_result(id, &message),
            MessageType::Ack => {
                let status = message.body_as::<Ack>().map(|a| a.status).unwrap_or_default();
                self.events.push(AgentEvent::AckReceived {
                    connection_id: id.to_string(),
                    status,
                });
                Vec::new()
            }
        }
    }

    fn on_exchange_request(&mut self, id: &str, message: Message, doc: DidDocument) -> Vec<Outbound> {
        let thid = message.thread_id.clone();
        let my_did = self.wallet.connections[id].my_did.clone();
        let token = message.body_as::<ExchangeRequest>().map(|b| b.token).unwrap_or_default();
        let valid = matches!(self.wallet.invitations.get(&token), Some((conn, false)) if conn == id);
        let fresh = self.wallet.connections[id].state == ConnectionState::Invited;
        if !valid || !fresh {
            self.events.push(AgentEvent::InvitationRejected {
                connection_id: id.to_string(),
                from: doc.id.clone(),
            });
            let body = ProblemReport {
                code: ProblemCode::Internal,
                explanation: "invitation unknown or already used".into(),
            };
            let thid = thid.unwrap_or_else(|| random_id(&mut self.rng));
            return self
                .send_to_doc(&my_did, &doc, MessageType::ProblemReport, thid, &body)
                .into_iter()
                .collect();
        }
        if self.wallet.peer_store.insert(doc.clone()).is_err() {
            return Vec::new();
        }
        self.wallet.invitations.insert(token, (id.to_string(), true));
        let conn = self.wallet.connections.get_mut(id).expect("connection exists");
        conn.their_did = Some(doc.id.clone());
        conn.their_document = Some(doc.clone());
        conn.advance(ConnectionState::Requested).expect("fresh connection");
        let my_doc = DidDocument {
            id: my_did.clone(),
            verification_key: self.wallet.peer_keys[&my_did].public_key(),
            endpoint: self.endpoint.clone(),
        };
        let out = self.reply(id, MessageType::DidExchangeResponse, thid, &ExchangeResponse { did_doc: my_doc });
        let conn = self.wallet.connections.get_mut(id).expect("connection exists");
        conn.advance(ConnectionState::Complete).expect("requested connection");
        self.events.push(AgentEvent::ConnectionCompleted {
            connection_id: id.to_string(),
            their_did: doc.id,
        });
        out
    }

    fn on_exchange_response(&mut self, id: &str, message: &Message) -> Vec<Outbound> {
        let thid = message.thread_id.clone();
        let conn = &self.wallet.connections[id];
        let matches = message
            .body_as::<ExchangeResponse>()
            .map(|b| Some(&b.did_doc) == conn.their_document.as_ref())
            .unwrap_or(false);
        if conn.state != ConnectionState::Requested || !matches {
            return self.problem(id, thid, ProblemCode::Internal, "unexpected exchange response".into());
        }
        let conn = self.wallet.connections.get_mut(id).expect("connection exists");
        conn.advance(ConnectionState::Complete).expect("requested connection");
        let their_did = conn.their_did.clone().expect("set at invitation");
        self.events.push(AgentEvent::ConnectionCompleted {
            connection_id: id.to_string(),
            their_did,
        });
        Vec::new()
    }

    fn on_offer(&mut self, id: &str, message: &Message) -> Vec<Outbound> {
        let thid = message.thread_id.clone();
        let Ok(offer) = message.body_as::<CredentialOffer>() else {
            return self.problem(id, thid, ProblemCode::Internal, "malformed credential offer".into());
        };
        let request = if self.registry.resolve(&offer.issuer_did).is_some() {
            credentials::request_credential(&self.wallet.link_secret, &offer.schema_id, &self.registry, &mut self.rng)
                .ok()
        } else {
            None
        };
        let Some((request, blinding)) = request else {
            self.events.push(AgentEvent::OfferDeclined {
                connection_id: id.to_string(),
                schema_id: offer.schema_id,
            });
            return self.reply(id, MessageType::Ack, thid, &Ack { status: "declined".into() });
        };
        let thid = thid.unwrap_or_else(|| random_id(&mut self.rng));
        self.requests.insert(
            thid.clone(),
            PendingRequest {
                connection_id: id.to_string(),
                schema_id: offer.schema_id,
                issuer: offer.issuer_did,
                commitment: request.commitment.clone(),
                blinding,
            },
        );
        self.reply(id, MessageType::CredentialRequest, Some(thid), &request)
    }

    fn on_credential_request(&mut self, id: &str, message: &Message) -> Vec<Outbound> {
        let thid = message.thread_id.clone();
        let offer = thid
            .as_ref()
            .and_then(|t| self.offers.remove(t))
            .filter(|o| o.connection_id == id);
        let (Some(offer), Ok(request)) = (offer, message.body_as::<CredentialRequestBody>()) else {
            return self.problem(id, thid, ProblemCode::Internal, "no matching credential offer".into());
        };
        let issued = (|| {
            let (keypair, did) = self.public.as_ref().ok_or(AgentError::NoPublicIdentity)?;
            if request.schema_id != offer.schema_id {
                return Err(CredentialError::SchemaViolation("request names another schema".into()).into());
            }
            let schema = self
                .registry
                .schema(&offer.schema_id)
                .ok_or_else(|| CredentialError::NotFound(offer.schema_id.clone()))?;
            Ok::<_, AgentError>(credentials::issue(
                keypair,
                did,
                &schema,
                &offer.attributes,
                &request.commitment,
            )?)
        })();
        match issued {
            Ok(credential) => {
                self.events.push(AgentEvent::CredentialIssued {
                    connection_id: id.to_string(),
                    schema_id: credential.schema_id.clone(),
                    credential_hash: hex::encode(credential.credential_hash),
                });
                self.reply(id, MessageType::CredentialIssue, thid, &CredentialIssue { credential })
            }
            Err(e) => self.problem(id, thid, ProblemCode::Internal, e.to_string()),
        }
    }

    fn on_credential_issue(&mut self, id: &str, message: &Message) -> Vec<Outbound> {
        let thid = message.thread_id.clone();
        let pending = thid
            .as_ref()
            .and_then(|t| self.requests.remove(t))
            .filter(|p| p.connection_id == id);
        let (Some(pending), Ok(issue)) = (pending, message.body_as::<CredentialIssue>()) else {
            return self.problem(id, thid, ProblemCode::Internal, "no matching credential request".into());
        };
        let credential = issue.credential;
        let issuer_key = self.registry.resolve(&credential.issuer_did).map(|d| d.verification_key);
        let reason = if credential.schema_id != pending.schema_id {
            Some("credential names another schema")
        } else if credential.issuer_did != pending.issuer {
            Some("credential names another issuer")
        } else if credential.link_commitment != pending.commitment {
            Some("credential binds another commitment")
        } else if !issuer_key.is_some_and(|k| credential.verify_integrity(&k)) {
            Some("issuer signature does not verify")
        } else {
            None
        };
        if let Some(reason) = reason {
            self.events.push(AgentEvent::CredentialRejected {
                connection_id: id.to_string(),
                reason: reason.to_string(),
            });
            return self.problem(id, thid, ProblemCode::Internal, reason.to_string());
        }
        self.events.push(AgentEvent::CredentialStored {
            connection_id: id.to_string(),
            schema_id: credential.schema_id.clone(),
            issuer: credential.issuer_did.clone(),
            credential_hash: hex::encode(credential.credential_hash),
        });
        self.wallet.add_credential(HeldCredential {
            credential,
            blinding: pending.blinding,
        });
        self.reply(id, MessageType::Ack, thid, &Ack { status: "stored".into() })
    }

    fn on_proof_request(&mut self, id: &str, message: &Message) -> Vec<Outbound> {
        let thid = message.thread_id.clone();
        let Ok(request) = message.body_as::<ProofRequestBody>() else {
            return self.problem(id, thid, ProblemCode::Internal, "malformed proof request".into());
        };
        let presentation = self
            .wallet
            .find_credential(&request.schema_id, &request.required_issuer)
            .cloned()
            .ok_or_else(|| CredentialError::CannotSatisfy(format!("no credential for {}", request.schema_id)))
            .and_then(|held| credentials::present(&held, &self.wallet.link_secret, &request, &mut self.rng));
        match presentation {
            Ok(presentation) => self.reply(
                id,
                MessageType::ProofPresentation,
                thid,
                &ProofPresentation { presentation },
            ),
            Err(e) => self.problem(id, thid, ProblemCode::ProofRejected, e.to_string()),
        }
    }

    fn on_presentation(&mut self, id: &str, message: &Message) -> Vec<Outbound> {
        let thid = message.thread_id.clone();
        let pending = thid
            .as_ref()
            .and_then(|t| self.proofs.remove(t))
            .filter(|(conn, _)| conn == id);
        let (Some((_, request)), Ok(body)) = (pending, message.body_as::<ProofPresentation>()) else {
            return self.problem(id, thid, ProblemCode::Internal, "no matching proof request".into());
        };
        let report = verify_presentation(&body.presentation, &request, &self.registry);
        let mut accepted = report.accepted;
        if accepted {
            let attributes = &body.presentation.credential.attributes;
            let verified: BTreeMap<String, String> = if request.disclosed_attributes.is_empty() {
                attributes.clone()
            } else {
                attributes
                    .iter()
                    .filter(|(k, _)| request.disclosed_attributes.contains(k))
                    .map(|(k, v)| (k.clone(), v.clone()))
                    .collect()
            };
            accepted = self
                .wallet
                .connections
                .get_mut(id)
                .is_some_and(|c| c.mark_trusted(verified));
        }
        let failed: Vec<&str> = report.failed_checks().into_iter().map(check_name).collect();
        let reason = if accepted {
            "all checks passed".to_string()
        } else if failed.is_empty() {
            "no attributes verified".to_string()
        } else {
            format!("failed checks: {}", failed.join(", "))
        };
        self.events.push(AgentEvent::TrustEvaluated {
            connection_id: id.to_string(),
            accepted,
            report: Some(report),
            reason: reason.clone(),
        });
        if accepted {
            self.reply(id, MessageType::Ack, thid, &Ack { status: "trusted".into() })
        } else {
            self.problem(id, thid, ProblemCode::ProofRejected, reason)
        }
    }

    fn on_train_request(&mut self, id: &str, message: &Message) -> Vec<Outbound> {
        let thid = message.thread_id.clone();
        if !self.wallet.connections[id].trusted {
            self.events.push(AgentEvent::TrainRequestRefused {
                connection_id: id.to_string(),
            });
            return self.problem(
                id,
                thid,
                ProblemCode::UntrustedConnection,
                "peer has not presented an acceptable credential".into(),
            );
        }
        let Some(training) = &self.training else {
            return self.problem(id, thid, ProblemCode::Internal, "agent does not train".into());
        };
        let result = message
            .body_as::<ModelTransfer>()
            .map_err(|e| FlError::Malformed(e.to_string()))
            .and_then(|body| fedlearn::deserialize_model(&body.model, Some(training.data.dim())))
            .and_then(|model| {
                let trained = fedlearn::train_local(&model, &training.data, &training.config)?;
                Ok((model, trained))
            });
        match result {
            Ok((received, trained)) => {
                self.events.push(AgentEvent::TrainingExecuted {
                    connection_id: id.to_string(),
                    received_version: received.version,
                    returned_version: trained.version,
                    received_hash: hex::encode(received.fingerprint()),
                    returned_hash: hex::encode(trained.fingerprint()),
                });
                let body = ModelTransfer {
                    model: fedlearn::serialize_model(&trained),
                };
                self.reply(id, MessageType::TrainResult, thid, &body)
            }
            Err(e) => self.problem(id, thid, ProblemCode::Internal, e.to_string()),
        }
    }

    fn dispatch_model(&mut self, dispatch: fedlearn::Dispatch) -> Result<Outbound, AgentError> {
        let conn = self.connection(&dispatch.trainer)?;
        let trusted = conn.trusted;
        if !trusted {
            return Err(AgentError::NotTrusted(dispatch.trainer));
        }
        let version = self.fl.as_ref().map(|r| r.model().version).unwrap_or_default();
        let thid = random_id(&mut self.rng);
        let body = ModelTransfer {
            model: dispatch.model_text,
        };
        let out = self.send(&dispatch.trainer, MessageType::TrainRequest, thid.clone(), &body)?;
        self.fl_thread = Some(thid);
        self.events.push(AgentEvent::ModelSent {
            connection_id: dispatch.trainer,
            version,
            trusted,
        });
        Ok(out)
    }

    fn fail_fl(&mut self, reason: String) {
        self.fl_thread = None;
        self.events.push(AgentEvent::FederatedLearningFailed { reason: reason.clone() });
        self.fl_failure = Some(reason);
    }

    fn on_train_result(&mut self, id: &str, message: &Message) -> Vec<Outbound> {
        if self.fl_thread.is_none() || self.fl_thread != message.thread_id {
            return self.problem(
                id,
                message.thread_id.clone(),
                ProblemCode::Internal,
                "no training round awaits this result".into(),
            );
        }
        self.fl_thread = None;
        let Some(run) = self.fl.as_mut() else {
            return Vec::new();
        };
        let accepted = message
            .body_as::<ModelTransfer>()
            .map_err(|e| FlError::Malformed(e.to_string()))
            .and_then(|body| run.accept_result(id, &body.model));
        let version = run.model().version;
        match accepted {
            Ok(next) => {
                self.events.push(AgentEvent::ResultAccepted {
                    connection_id: id.to_string(),
                    version,
                });
                match next.map(|d| self.dispatch_model(d)) {
                    Some(Ok(out)) => vec![out],
                    Some(Err(e)) => {
                        self.fail_fl(e.to_string());
                        Vec::new()
                    }
                    None => Vec::new(),
                }
            }
            Err(e) => {
                self.fail_fl(e.to_string());
                Vec::new()
            }
        }
    }

    fn on_problem(&mut self, id: &str, message: &Message) -> Vec<Outbound> {
        let Ok(report) = message.body_as::<ProblemReport>() else {
            return Vec::new();
        };
        self.events.push(AgentEvent::ProblemReceived {
            connection_id: id.to_string(),
            code: report.code,
            explanation: report.explanation.clone(),
        });
        if let Some(thid) = &message.thread_id {
            if self.proofs.remove(thid).is_some() {
                self.events.push(AgentEvent::TrustEvaluated {
                    connection_id: id.to_string(),
                    accepted: false,
                    report: None,
                    reason: report.explanation.clone(),
                });
            }
            self.requests.remove(thid);
            self.offers.remove(thid);
            if self.fl_thread.as_ref() == Some(thid) {
                self.fail_fl(format!("{id} reported: {}", report.explanation));
            }
        }
        Vec::new()
    }
}

pub fn check_name(check: Check) -> &'static str {
    match check {
        Check::IssuerResolvable => "issuer_resolvable",
        Check::LinkSecret => "link_secret",
        Check::IssuerAuthority => "issuer_authority",
        Check::NotRevoked => "not_revoked",
        Check::AttributeCriteria => "attribute_criteria",
    }
}
