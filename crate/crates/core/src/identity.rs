//! Decentralized identifiers, DID documents, and the encrypt-then-sign envelope
//! that carries every agent message.

use crate::crypto::{self, CryptoError, KeyPair, KEY_LEN, SEAL_OVERHEAD, SIGNATURE_LEN};
use crate::encoding::{self, b64_len};
use crate::registry::Registry;
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::RwLock;
use thiserror::Error;

/// Number of digest bytes kept in a DID identifier.
pub const DID_ID_BYTES: usize = 16;

/// Body field of a `did_exchange_request` that carries the requester's document.
pub const INTRODUCTION_DOC_FIELD: &str = "did_doc";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IdentityError {
    #[error("malformed DID: {0}")]
    MalformedDid(String),
    #[error("endpoint must not be empty")]
    EmptyEndpoint,
    #[error("integrity check failed: {0}")]
    Integrity(String),
    #[error("confidentiality check failed: {0}")]
    Confidentiality(String),
    #[error("unsupported message type {kind:?}")]
    UnsupportedType {
        kind: String,
        thread_id: Option<String>,
    },
    #[error("encoding error: {0}")]
    Encoding(String),
    #[error("DID not found: {0}")]
    NotFound(String),
    #[error("corrupt DID document for {0}")]
    CorruptDocument(String),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

impl IdentityError {
    /// Coarse class used by metrics and tests: integrity, confidentiality or other.
    pub fn class(&self) -> &'static str {
        match self {
            IdentityError::Integrity(_) => "integrity",
            IdentityError::Confidentiality(_) => "confidentiality",
            IdentityError::UnsupportedType { .. } => "unsupported_type",
            _ => "other",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DidMethod {
    Peer,
    Pub,
}

impl DidMethod {
    fn as_str(self) -> &'static str {
        match self {
            DidMethod::Peer => "peer",
            DidMethod::Pub => "pub",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Did {
    pub method: DidMethod,
    pub identifier: String,
}

pub fn identifier_for_key(public_key: &[u8]) -> String {
    bs58::encode(&crypto::digest(public_key)[..DID_ID_BYTES]).into_string()
}

impl Did {
    pub fn from_key(method: DidMethod, public_key: &[u8]) -> Self {
        Did {
            method,
            identifier: identifier_for_key(public_key),
        }
    }

    pub fn is_peer(&self) -> bool {
        self.method == DidMethod::Peer
    }

    pub fn matches_key(&self, public_key: &[u8]) -> bool {
        self.identifier == identifier_for_key(public_key)
    }
}

impl fmt::Display for Did {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "did:{}:{}", self.method.as_str(), self.identifier)
    }
}

impl FromStr for Did {
    type Err = IdentityError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let malformed = || IdentityError::MalformedDid(s.to_string());
        let rest = s.strip_prefix("did:").ok_or_else(malformed)?;
        let (method, identifier) = rest.split_once(':').ok_or_else(malformed)?;
        let method = match method {
            "peer" => DidMethod::Peer,
            "pub" => DidMethod::Pub,
            _ => return Err(malformed()),
        };
        if identifier.is_empty() || bs58::decode(identifier).into_vec().is_err() {
            return Err(malformed());
        }
        Ok(Did {
            method,
            identifier: identifier.to_string(),
        })
    }
}

impl Serialize for Did {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Did {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DidDocument {
    pub id: Did,
    #[serde(with = "encoding::b64_array")]
    pub verification_key: [u8; KEY_LEN],
    pub endpoint: String,
}

impl DidDocument {
    pub fn new(method: DidMethod, public_key: [u8; KEY_LEN], endpoint: &str) -> Result<Self, IdentityError> {
        if endpoint.is_empty() {
            return Err(IdentityError::EmptyEndpoint);
        }
        Ok(DidDocument {
            id: Did::from_key(method, &public_key),
            verification_key: public_key,
            endpoint: endpoint.to_string(),
        })
    }

    /// The key-to-identifier binding every resolvable document must satisfy.
    pub fn is_consistent(&self) -> bool {
        self.id.matches_key(&self.verification_key) && !self.endpoint.is_empty()
    }
}

pub fn create_peer_did(keypair: &KeyPair, endpoint: &str) -> Result<(Did, DidDocument), IdentityError> {
    let doc = DidDocument::new(DidMethod::Peer, keypair.public_key(), endpoint)?;
    Ok((doc.id.clone(), doc))
}

/// A ledger-anchored DID; it only becomes resolvable once registered.
pub fn create_public_did(keypair: &KeyPair, endpoint: &str) -> Result<(Did, DidDocument), IdentityError> {
    let doc = DidDocument::new(DidMethod::Pub, keypair.public_key(), endpoint)?;
    Ok((doc.id.clone(), doc))
}

/// Local store of documents received from peers.
#[derive(Debug, Default)]
pub struct PeerStore {
    docs: RwLock<BTreeMap<Did, DidDocument>>,
}

impl PeerStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&self, doc: DidDocument) -> Result<(), IdentityError> {
        if !doc.is_consistent() {
            return Err(IdentityError::CorruptDocument(doc.id.to_string()));
        }
        self.docs.write().unwrap().insert(doc.id.clone(), doc);
        Ok(())
    }

    /// Stores a document without checking it; used to exercise resolution of corrupt entries.
    pub fn insert_unchecked(&self, doc: DidDocument) {
        self.docs.write().unwrap().insert(doc.id.clone(), doc);
    }

    pub fn get(&self, did: &Did) -> Option<DidDocument> {
        self.docs.read().unwrap().get(did).cloned()
    }

    pub fn len(&self) -> usize {
        self.docs.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn resolve(did: &Did, peer_store: &PeerStore, registry: &Registry) -> Result<DidDocument, IdentityError> {
    let doc = match did.method {
        DidMethod::Peer => peer_store.get(did),
        DidMethod::Pub => registry.resolve(did),
    }
    .ok_or_else(|| IdentityError::NotFound(did.to_string()))?;
    if doc.id != *did || !doc.is_consistent() {
        return Err(IdentityError::CorruptDocument(did.to_string()));
    }
    Ok(doc)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageType {
    DidExchangeRequest,
    DidExchangeResponse,
    CredentialOffer,
    CredentialRequest,
    CredentialIssue,
    ProofRequest,
    ProofPresentation,
    TrainRequest,
    TrainResult,
    Ack,
    ProblemReport,
}

impl MessageType {
    pub const ALL: [MessageType; 11] = [
        MessageType::DidExchangeRequest,
        MessageType::DidExchangeResponse,
        MessageType::CredentialOffer,
        MessageType::CredentialRequest,
        MessageType::CredentialIssue,
        MessageType::ProofRequest,
        MessageType::ProofPresentation,
        MessageType::TrainRequest,
        MessageType::TrainResult,
        MessageType::Ack,
        MessageType::ProblemReport,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MessageType::DidExchangeRequest => "did_exchange_request",
            MessageType::DidExchangeResponse => "did_exchange_response",
            MessageType::CredentialOffer => "credential_offer",
            MessageType::CredentialRequest => "credential_request",
            MessageType::CredentialIssue => "credential_issue",
            MessageType::ProofRequest => "proof_request",
            MessageType::ProofPresentation => "proof_presentation",
            MessageType::TrainRequest => "train_request",
            MessageType::TrainResult => "train_result",
            MessageType::Ack => "ack",
            MessageType::ProblemReport => "problem_report",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.as_str() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemCode {
    UntrustedConnection,
    ProofRejected,
    UnsupportedType,
    Internal,
}

/// A plaintext agent message. The body is schema-checked by the role that consumes it.
#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub kind: MessageType,
    pub thread_id: Option<String>,
    pub body: Value,
}

impl Message {
    pub fn new<T: Serialize>(kind: MessageType, thread_id: Option<String>, body: &T) -> Result<Self, IdentityError> {
        let body = serde_json::to_value(body).map_err(|e| IdentityError::Encoding(e.to_string()))?;
        Ok(Message {
            kind,
            thread_id,
            body,
        })
    }

    pub fn body_as<T: serde::de::DeserializeOwned>(&self) -> Result<T, IdentityError> {
        serde_json::from_value(self.body.clone()).map_err(|e| IdentityError::Encoding(e.to_string()))
    }

    /// JSON of `{"body","thid","type"}` with sorted keys and no whitespace.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        // serde_json's default map is ordered, so nested keys come out sorted too.
        let value = json!({
            "type": self.kind.as_str(),
            "thid": self.thread_id,
            "body": self.body,
        });
        serde_json::to_vec(&value).expect("json values always serialize")
    }

    pub fn from_canonical_bytes(bytes: &[u8]) -> Result<Self, IdentityError> {
        let value: Value = serde_json::from_slice(bytes).map_err(|e| IdentityError::Encoding(e.to_string()))?;
        let Value::Object(mut map) = value else {
            return Err(IdentityError::Encoding("message is not an object".into()));
        };
        if map.len() != 3 {
            return Err(IdentityError::Encoding("message must have exactly type, thid, body".into()));
        }
        let thread_id = match map.remove("thid") {
            Some(Value::Null) => None,
            Some(Value::String(s)) => Some(s),
            _ => return Err(IdentityError::Encoding("bad thid".into())),
        };
        let body = map
            .remove("body")
            .ok_or_else(|| IdentityError::Encoding("missing body".into()))?;
        let kind = match map.remove("type") {
            Some(Value::String(s)) => MessageType::parse(&s).ok_or(IdentityError::UnsupportedType {
                kind: s,
                thread_id: thread_id.clone(),
            })?,
            _ => return Err(IdentityError::Encoding("missing type".into())),
        };
        Ok(Message {
            kind,
            thread_id,
            body,
        })
    }
}

/// The signed, sealed wire unit: ciphertext plus the sender's signature over it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Envelope {
    pub to: Did,
    pub from: Did,
    #[serde(rename = "mid")]
    pub message_id: String,
    #[serde(rename = "thid")]
    pub thread_id: Option<String>,
    #[serde(rename = "ct_b64", with = "encoding::b64")]
    pub ciphertext: Vec<u8>,
    #[serde(rename = "sig_b64", with = "encoding::b64")]
    pub signature: Vec<u8>,
}

/// Bytes of the wire JSON outside the quoted field values:
/// `{"to":"","from":"","mid":"","thid":,"ct_b64":"","sig_b64":""}`.
pub const ENVELOPE_FRAME_BYTES: usize = 61;

impl Envelope {
    pub fn to_wire(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("envelope always serializes")
    }

    pub fn from_wire(bytes: &[u8]) -> Result<Self, IdentityError> {
        serde_json::from_slice(bytes).map_err(|e| IdentityError::Encoding(e.to_string()))
    }

    /// Wire size of an envelope carrying `plaintext_len` canonical message bytes.
    ///
    /// DIDs, ids and base64 never need JSON escaping, so the size is exact.
    pub fn wire_len_for(plaintext_len: usize, to: &Did, from: &Did, message_id: &str, thread_id: Option<&str>) -> usize {
        let thid = match thread_id {
            Some(t) => t.len() + 2,
            None => "null".len(),
        };
        ENVELOPE_FRAME_BYTES
            + to.to_string().len()
            + from.to_string().len()
            + message_id.len()
            + thid
            + b64_len(plaintext_len + SEAL_OVERHEAD)
            + b64_len(SIGNATURE_LEN)
    }
}

pub(crate) fn random_id<R: RngCore>(rng: &mut R) -> String {
    let mut bytes = [0u8; 16];
    rng.fill_bytes(&mut bytes);
    hex::encode(bytes)
}

/// Seals `message` to the recipient, then signs the ciphertext.
pub fn pack<R: RngCore + CryptoRng>(
    message: &Message,
    sender: &KeyPair,
    sender_did: &Did,
    recipient: &DidDocument,
    rng: &mut R,
) -> Result<Envelope, IdentityError> {
    let plaintext = message.canonical_bytes();
    let ciphertext = crypto::seal(&recipient.verification_key, &plaintext, rng)?;
    let signature = sender.sign(&ciphertext);
    Ok(Envelope {
        to: recipient.id.clone(),
        from: sender_did.clone(),
        message_id: random_id(rng),
        thread_id: message.thread_id.clone(),
        ciphertext,
        signature,
    })
}

fn open_checked(envelope: &Envelope, recipient: &KeyPair) -> Result<Message, IdentityError> {
    if !envelope.to.matches_key(&recipient.public_key()) {
        return Err(IdentityError::Confidentiality("envelope addressed to another key".into()));
    }
    let plaintext = crypto::open(recipient, &envelope.ciphertext)
        .map_err(|_| IdentityError::Confidentiality("ciphertext does not open".into()))?;
    Message::from_canonical_bytes(&plaintext)
}

fn check_thread(envelope: &Envelope, message: &Message) -> Result<(), IdentityError> {
    if envelope.thread_id != message.thread_id {
        return Err(IdentityError::Integrity("thread id header disagrees with sealed message".into()));
    }
    Ok(())
}

/// Verifies the signature with the sender's key, and only then decrypts.
pub fn unpack(envelope: &Envelope, recipient: &KeyPair, sender_doc: &DidDocument) -> Result<Message, IdentityError> {
    if envelope.from != sender_doc.id {
        return Err(IdentityError::Integrity(format!(
            "sender {} does not match document {}",
            envelope.from, sender_doc.id
        )));
    }
    if !crypto::verify(&sender_doc.verification_key, &envelope.ciphertext, &envelope.signature) {
        return Err(IdentityError::Integrity("signature does not verify".into()));
    }
    let message = open_checked(envelope, recipient)?;
    check_thread(envelope, &message)?;
    Ok(message)
}

/// Unpacks the first message of a DID exchange, whose sender is not yet known.
///
/// The sender's document travels inside the sealed body, so decryption has to
/// come first. The message is only returned after the enclosed document binds to
/// `envelope.from` and its key verifies the signature.
pub fn unpack_introduction(envelope: &Envelope, recipient: &KeyPair) -> Result<(Message, DidDocument), IdentityError> {
    let message = open_checked(envelope, recipient)?;
    if message.kind != MessageType::DidExchangeRequest {
        return Err(IdentityError::Integrity(format!(
            "{} from unknown sender {}",
            message.kind.as_str(),
            envelope.from
        )));
    }
    let doc_value = message
        .body
        .get(INTRODUCTION_DOC_FIELD)
        .cloned()
        .ok_or_else(|| IdentityError::Encoding("exchange request without document".into()))?;
    let doc: DidDocument = serde_json::from_value(doc_value).map_err(|e| IdentityError::Encoding(e.to_string()))?;
    if doc.id != envelope.from || !doc.is_consistent() {
        return Err(IdentityError::Integrity("enclosed document does not bind to sender".into()));
    }
    if !crypto::verify(&doc.verification_key, &envelope.ciphertext, &envelope.signature) {
        return Err(IdentityError::Integrity("signature does not verify".into()));
    }
    check_thread(envelope, &message)?;
    Ok((message, doc))
}

/// Builds a body object from key/value pairs; handy for small control messages.
pub fn body(pairs: &[(&str, Value)]) -> Value {
    let mut map = Map::new();
    for (k, v) in pairs {
        map.insert((*k).to_string(), v.clone());
    }
    Value::Object(map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry::Registry;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use sha2::{Digest, Sha256};

    fn rng(seed: u64) -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(seed)
    }

    fn party(seed: u8, endpoint: &str) -> (KeyPair, DidDocument) {
        let kp = KeyPair::from_seed(&[seed; 32]).unwrap();
        let (_, doc) = create_peer_did(&kp, endpoint).unwrap();
        (kp, doc)
    }

    #[test]
    fn peer_did_is_stable_and_distinct() {
        let (a, _) = party(1, "a:1");
        let (b, _) = party(2, "b:1");
        let (d1, _) = create_peer_did(&a, "a:1").unwrap();
        let (d2, _) = create_peer_did(&a, "a:1").unwrap();
        let (d3, _) = create_peer_did(&b, "b:1").unwrap();
        assert_eq!(d1, d2);
        assert_ne!(d1, d3);
        assert!(d1.to_string().starts_with("did:peer:"));
    }

    #[test]
    fn identifier_recomputed_from_definition() {
        let kp = KeyPair::from_seed(&[42; 32]).unwrap();
        let (did, doc) = create_peer_did(&kp, "host:1").unwrap();
        let hash = Sha256::digest(kp.public_key());
        let expected = bs58::encode(&hash[..16]).into_string();
        assert_eq!(did.identifier, expected);
        assert_eq!(did.to_string(), format!("did:peer:{expected}"));
        assert!(doc.is_consistent());
    }

    #[test]
    fn empty_endpoint_rejected() {
        let kp = KeyPair::from_seed(&[1; 32]).unwrap();
        assert_eq!(create_peer_did(&kp, "").unwrap_err(), IdentityError::EmptyEndpoint);
    }

    #[test]
    fn did_parse_round_trip() {
        let kp = KeyPair::from_seed(&[3; 32]).unwrap();
        let did = Did::from_key(DidMethod::Pub, &kp.public_key());
        assert_eq!(did.to_string().parse::<Did>().unwrap(), did);
        assert!("did:web:abc".parse::<Did>().is_err());
        assert!("did:peer:".parse::<Did>().is_err());
        assert!("peer:abc".parse::<Did>().is_err());
        assert!("did:peer:0OIl".parse::<Did>().is_err());
    }

    #[test]
    fn pack_unpack_round_trip() {
        let (alice, alice_doc) = party(1, "alice:1");
        let (bob, bob_doc) = party(2, "bob:1");
        let msg = Message::new(MessageType::Ack, Some("t-1".into()), &json!({"status": "ok"})).unwrap();
        let env = pack(&msg, &alice, &alice_doc.id, &bob_doc, &mut rng(1)).unwrap();
        assert!(crypto::verify(&alice.public_key(), &env.ciphertext, &env.signature));
        assert_eq!(unpack(&env, &bob, &alice_doc).unwrap(), msg);
    }

    #[test]
    fn tampered_ciphertext_is_integrity_error() {
        let (alice, alice_doc) = party(1, "alice:1");
        let (bob, bob_doc) = party(2, "bob:1");
        let msg = Message::new(MessageType::Ack, None, &json!({})).unwrap();
        let mut env = pack(&msg, &alice, &alice_doc.id, &bob_doc, &mut rng(2)).unwrap();
        env.ciphertext[5] ^= 0x01;
        assert_eq!(unpack(&env, &bob, &alice_doc).unwrap_err().class(), "integrity");
    }

    #[test]
    fn impersonation_is_integrity_error() {
        let (alice, alice_doc) = party(1, "alice:1");
        let (bob, bob_doc) = party(2, "bob:1");
        let (mallory, _) = party(3, "m:1");
        let msg = Message::new(MessageType::Ack, None, &json!({})).unwrap();
        let mut env = pack(&msg, &alice, &alice_doc.id, &bob_doc, &mut rng(3)).unwrap();
        env.signature = mallory.sign(&env.ciphertext);
        assert_eq!(unpack(&env, &bob, &alice_doc).unwrap_err().class(), "integrity");
    }

    #[test]
    fn wrong_recipient_is_confidentiality_error() {
        let (alice, alice_doc) = party(1, "alice:1");
        let (_, bob_doc) = party(2, "bob:1");
        let (eve, _) = party(4, "eve:1");
        let msg = Message::new(MessageType::Ack, None, &json!({})).unwrap();
        let env = pack(&msg, &alice, &alice_doc.id, &bob_doc, &mut rng(4)).unwrap();
        assert_eq!(unpack(&env, &eve, &alice_doc).unwrap_err().class(), "confidentiality");
        // Readdressed to Eve, the signature still holds but the box will not open.
        let mut readdressed = env.clone();
        readdressed.to = Did::from_key(DidMethod::Peer, &eve.public_key());
        assert_eq!(unpack(&readdressed, &eve, &alice_doc).unwrap_err().class(), "confidentiality");
    }

    #[test]
    fn unknown_type_is_reported() {
        let bytes = br#"{"body":{},"thid":"t9","type":"teleport"}"#;
        match Message::from_canonical_bytes(bytes).unwrap_err() {
            IdentityError::UnsupportedType { kind, thread_id } => {
                assert_eq!(kind, "teleport");
                assert_eq!(thread_id.as_deref(), Some("t9"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn canonical_bytes_are_sorted_and_compact() {
        let msg = Message::new(MessageType::TrainRequest, Some("t".into()), &json!({"z": 1, "a": {"y": 2, "b": 3}})).unwrap();
        assert_eq!(
            String::from_utf8(msg.canonical_bytes()).unwrap(),
            r#"{"body":{"a":{"b":3,"y":2},"z":1},"thid":"t","type":"train_request"}"#
        );
    }

    #[test]
    fn wire_format_keys_and_size() {
        let (alice, alice_doc) = party(1, "alice:1");
        let (_, bob_doc) = party(2, "bob:1");
        for (thid, payload) in [(None, "x"), (Some("thread-7"), "a much longer payload body")] {
            let msg = Message::new(MessageType::Ack, thid.map(String::from), &json!({ "p": payload })).unwrap();
            let env = pack(&msg, &alice, &alice_doc.id, &bob_doc, &mut rng(5)).unwrap();
            let wire = env.to_wire();
            let value: Value = serde_json::from_slice(&wire).unwrap();
            let keys: Vec<_> = value.as_object().unwrap().keys().cloned().collect();
            assert_eq!(keys, ["ct_b64", "from", "mid", "sig_b64", "thid", "to"]);
            assert_eq!(
                wire.len(),
                Envelope::wire_len_for(msg.canonical_bytes().len(), &env.to, &env.from, &env.message_id, thid)
            );
            // header measured once: the wire minus the four variable strings
            let text = String::from_utf8(wire.clone()).unwrap();
            let stripped = text
                .replace(&env.to.to_string(), "")
                .replace(&env.from.to_string(), "")
                .replace(&env.message_id, "")
                .replace(&encoding::to_b64(&env.ciphertext), "")
                .replace(&encoding::to_b64(&env.signature), "")
                .replace(thid.unwrap_or("null"), "");
            let thid_quotes = if thid.is_some() { 2 } else { 0 };
            assert_eq!(stripped.len(), ENVELOPE_FRAME_BYTES + thid_quotes);
            assert_eq!(Envelope::from_wire(&wire).unwrap(), env);
        }
    }

    #[test]
    fn envelope_rejects_extra_keys() {
        let wire = br#"{"to":"did:peer:abc","from":"did:peer:abd","mid":"m","thid":null,"ct_b64":"","sig_b64":"","x":1}"#;
        assert!(Envelope::from_wire(wire).is_err());
    }

    #[test]
    fn introduction_carries_document() {
        let (alice, alice_doc) = party(1, "alice:1");
        let (bob, bob_doc) = party(2, "bob:1");
        let msg = Message::new(
            MessageType::DidExchangeRequest,
            Some("t".into()),
            &json!({ INTRODUCTION_DOC_FIELD: alice_doc, "token": "abc" }),
        )
        .unwrap();
        let env = pack(&msg, &alice, &alice_doc.id, &bob_doc, &mut rng(6)).unwrap();
        let (got, doc) = unpack_introduction(&env, &bob).unwrap();
        assert_eq!(got, msg);
        assert_eq!(doc, alice_doc);

        let (mallory, _) = party(3, "m:1");
        let mut forged = env.clone();
        forged.signature = mallory.sign(&forged.ciphertext);
        assert_eq!(unpack_introduction(&forged, &bob).unwrap_err().class(), "integrity");
    }

    #[test]
    fn resolve_peer_and_pub() {
        let store = PeerStore::new();
        let registry = Registry::new();
        let (_, doc) = party(1, "a:1");
        store.insert(doc.clone()).unwrap();
        assert_eq!(resolve(&doc.id, &store, &registry).unwrap(), doc);

        let issuer = KeyPair::from_seed(&[9; 32]).unwrap();
        let (pub_did, pub_doc) = create_public_did(&issuer, "issuer:1").unwrap();
        assert!(matches!(resolve(&pub_did, &store, &registry), Err(IdentityError::NotFound(_))));
        registry.register_issuer(pub_doc.clone()).unwrap();
        assert_eq!(resolve(&pub_did, &store, &registry).unwrap(), pub_doc);
    }

    #[test]
    fn resolve_corrupt_document() {
        let store = PeerStore::new();
        let registry = Registry::new();
        let (_, mut doc) = party(1, "a:1");
        doc.verification_key = KeyPair::from_seed(&[2; 32]).unwrap().public_key();
        assert!(store.insert(doc.clone()).is_err());
        store.insert_unchecked(doc.clone());
        assert!(matches!(resolve(&doc.id, &store, &registry), Err(IdentityError::CorruptDocument(_))));
    }
}
