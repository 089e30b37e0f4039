//! Verifiable credentials: issuance against a registered schema, holder binding
//! through a committed link secret, nonce-bound presentations, and the five
//! verifier checks.
//!
//! The issuer signs the canonical credential encoding, which includes the
//! holder's Pedersen commitment to its link secret. At presentation time the
//! holder proves knowledge of the commitment opening, bound to the verifier's
//! nonce. All attributes are disclosed.

use crate::crypto::{self, commit, prove_opening, verify_opening, Commitment, KeyPair, OpeningProof, Scalar};
use crate::encoding;
use crate::identity::Did;
use crate::registry::{CredentialSchema, Registry};
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CredentialError {
    #[error("unknown schema {0}")]
    NotFound(String),
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("cannot satisfy proof request: {0}")]
    CannotSatisfy(String),
}

/// The holder's long-lived secret. Only commitments to it and proofs about it leave the wallet.
#[derive(Clone)]
pub struct LinkSecret {
    secret: Scalar,
}

impl LinkSecret {
    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        LinkSecret {
            secret: crypto::random_scalar(rng),
        }
    }
}

impl fmt::Debug for LinkSecret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("LinkSecret(..)")
    }
}

/// Per-credential blinding factor kept by the holder next to the credential.
#[derive(Clone)]
pub struct Blinding(Scalar);

impl fmt::Debug for Blinding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Blinding(..)")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CredentialRequest {
    pub schema_id: String,
    pub commitment: Commitment,
}

pub fn request_credential<R: RngCore + CryptoRng>(
    link_secret: &LinkSecret,
    schema_id: &str,
    registry: &Registry,
    rng: &mut R,
) -> Result<(CredentialRequest, Blinding), CredentialError> {
    if registry.schema(schema_id).is_none() {
        return Err(CredentialError::NotFound(schema_id.to_string()));
    }
    let blinding = crypto::random_scalar(rng);
    let commitment = commit(&link_secret.secret, &blinding, schema_id);
    Ok((
        CredentialRequest {
            schema_id: schema_id.to_string(),
            commitment,
        },
        Blinding(blinding),
    ))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Credential {
    pub schema_id: String,
    pub issuer_did: Did,
    pub attributes: BTreeMap<String, String>,
    pub link_commitment: Commitment,
    #[serde(with = "encoding::b64")]
    pub issuer_signature: Vec<u8>,
    #[serde(with = "encoding::hex_array")]
    pub credential_hash: [u8; 32],
}

/// `name=value` lines sorted by name, then `schema=`, `issuer=` and `link=` lines,
/// joined by `\n` without a trailing newline.
pub fn canonical_encoding(
    schema_id: &str,
    issuer_did: &Did,
    attributes: &BTreeMap<String, String>,
    link_commitment: &Commitment,
) -> String {
    let mut lines: Vec<String> = attributes.iter().map(|(k, v)| format!("{k}={v}")).collect();
    lines.push(format!("schema={schema_id}"));
    lines.push(format!("issuer={issuer_did}"));
    lines.push(format!("link={}", encoding::to_b64(&link_commitment.value)));
    lines.join("\n")
}

impl Credential {
    pub fn canonical_encoding(&self) -> String {
        canonical_encoding(&self.schema_id, &self.issuer_did, &self.attributes, &self.link_commitment)
    }

    /// Hash of the encoding as it stands now, independent of the stored hash field.
    pub fn computed_hash(&self) -> [u8; 32] {
        crypto::digest(self.canonical_encoding().as_bytes())
    }

    /// Stored hash matches the content and the signature verifies under `issuer_key`.
    pub fn verify_integrity(&self, issuer_key: &[u8]) -> bool {
        let encoded = self.canonical_encoding();
        crypto::digest(encoded.as_bytes()) == self.credential_hash
            && crypto::verify(issuer_key, encoded.as_bytes(), &self.issuer_signature)
    }
}

pub fn issue(
    issuer: &KeyPair,
    issuer_did: &Did,
    schema: &CredentialSchema,
    attribute_values: &BTreeMap<String, String>,
    commitment: &Commitment,
) -> Result<Credential, CredentialError> {
    let names: Vec<&String> = attribute_values.keys().collect();
    let expected: Vec<&String> = schema.attribute_names.iter().collect();
    if names != expected {
        return Err(CredentialError::SchemaViolation(format!(
            "attributes {names:?} do not match schema {} {expected:?}",
            schema.schema_id
        )));
    }
    if let Some((k, _)) = attribute_values.iter().find(|(_, v)| v.contains('\n')) {
        return Err(CredentialError::SchemaViolation(format!("value of {k} contains a newline")));
    }
    if commitment.context != schema.schema_id || !commitment.is_valid() {
        return Err(CredentialError::SchemaViolation("commitment was not made for this schema".into()));
    }
    let encoded = canonical_encoding(&schema.schema_id, issuer_did, attribute_values, commitment);
    Ok(Credential {
        schema_id: schema.schema_id.clone(),
        issuer_did: issuer_did.clone(),
        attributes: attribute_values.clone(),
        link_commitment: commitment.clone(),
        issuer_signature: issuer.sign(encoded.as_bytes()),
        credential_hash: crypto::digest(encoded.as_bytes()),
    })
}

/// A credential in the holder's wallet together with the blinding its commitment used.
#[derive(Debug, Clone)]
pub struct HeldCredential {
    pub credential: Credential,
    pub blinding: Blinding,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProofRequest {
    #[serde(with = "encoding::b64_array")]
    pub nonce: [u8; 32],
    pub schema_id: String,
    pub required_issuer: Did,
    pub disclosed_attributes: Vec<String>,
    pub attribute_constraints: Vec<(String, String)>,
}

impl ProofRequest {
    pub fn new<R: RngCore>(
        rng: &mut R,
        schema_id: &str,
        required_issuer: &Did,
        disclosed_attributes: Vec<String>,
        attribute_constraints: Vec<(String, String)>,
    ) -> Self {
        let mut nonce = [0u8; 32];
        rng.fill_bytes(&mut nonce);
        ProofRequest {
            nonce,
            schema_id: schema_id.to_string(),
            required_issuer: required_issuer.clone(),
            disclosed_attributes,
            attribute_constraints,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Presentation {
    pub credential: Credential,
    pub opening_proof: OpeningProof,
}

pub fn present<R: RngCore + CryptoRng>(
    held: &HeldCredential,
    link_secret: &LinkSecret,
    request: &ProofRequest,
    rng: &mut R,
) -> Result<Presentation, CredentialError> {
    let credential = &held.credential;
    if credential.schema_id != request.schema_id {
        return Err(CredentialError::CannotSatisfy(format!(
            "holds {} but {} was requested",
            credential.schema_id, request.schema_id
        )));
    }
    let opening_proof = prove_opening(
        &link_secret.secret,
        &held.blinding.0,
        &credential.link_commitment,
        &request.nonce,
        rng,
    );
    Ok(Presentation {
        credential: credential.clone(),
        opening_proof,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Check {
    IssuerResolvable,
    LinkSecret,
    IssuerAuthority,
    NotRevoked,
    AttributeCriteria,
}

impl Check {
    pub const ALL: [Check; 5] = [
        Check::IssuerResolvable,
        Check::LinkSecret,
        Check::IssuerAuthority,
        Check::NotRevoked,
        Check::AttributeCriteria,
    ];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub check: Check,
    pub passed: bool,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub checks: Vec<CheckOutcome>,
    pub accepted: bool,
}

impl VerificationReport {
    pub fn passed(&self, check: Check) -> bool {
        self.checks.iter().any(|c| c.check == check && c.passed)
    }

    pub fn failed_checks(&self) -> Vec<Check> {
        self.checks.iter().filter(|c| !c.passed).map(|c| c.check).collect()
    }
}

fn outcome(check: Check, result: Result<String, String>) -> CheckOutcome {
    match result {
        Ok(reason) => CheckOutcome {
            check,
            passed: true,
            reason,
        },
        Err(reason) => CheckOutcome {
            check,
            passed: false,
            reason,
        },
    }
}

fn check_issuer(credential: &Credential, registry: &Registry) -> Result<String, String> {
    let doc = registry
        .resolve(&credential.issuer_did)
        .ok_or_else(|| format!("issuer {} does not resolve on the registry", credential.issuer_did))?;
    if !doc.is_consistent() {
        return Err(format!("registered document for {} is corrupt", credential.issuer_did));
    }
    if credential.computed_hash() != credential.credential_hash {
        return Err("credential hash does not match its content".into());
    }
    if !crypto::verify(
        &doc.verification_key,
        credential.canonical_encoding().as_bytes(),
        &credential.issuer_signature,
    ) {
        return Err(format!("signature does not verify under {}'s key", credential.issuer_did));
    }
    Ok(format!("signature verifies under {}", credential.issuer_did))
}

fn check_link_secret(presentation: &Presentation, request: &ProofRequest) -> Result<String, String> {
    if verify_opening(&presentation.credential.link_commitment, &presentation.opening_proof, &request.nonce) {
        Ok("holder proved knowledge of the committed link secret".into())
    } else {
        Err("link secret proof does not verify for this request's nonce".into())
    }
}

fn check_authority(credential: &Credential, request: &ProofRequest, registry: &Registry) -> Result<String, String> {
    if credential.schema_id != request.schema_id {
        return Err(format!("credential is {}, request wants {}", credential.schema_id, request.schema_id));
    }
    if credential.issuer_did != request.required_issuer {
        return Err(format!(
            "issued by {}, request requires {}",
            credential.issuer_did, request.required_issuer
        ));
    }
    if !registry.is_authorized(&credential.schema_id, &credential.issuer_did) {
        return Err(format!(
            "{} is not authorized to issue {}",
            credential.issuer_did, credential.schema_id
        ));
    }
    Ok(format!("{} is authorized for {}", credential.issuer_did, credential.schema_id))
}

fn check_revocation(credential: &Credential, registry: &Registry) -> Result<String, String> {
    let hash = credential.computed_hash();
    if registry.is_revoked(&hash) {
        Err(format!("credential {} is revoked", hex::encode(hash)))
    } else {
        Ok("credential is not revoked".into())
    }
}

fn check_criteria(credential: &Credential, request: &ProofRequest) -> Result<String, String> {
    for name in &request.disclosed_attributes {
        if !credential.attributes.contains_key(name) {
            return Err(format!("attribute {name} is not disclosed"));
        }
    }
    for (name, expected) in &request.attribute_constraints {
        match credential.attributes.get(name) {
            Some(actual) if actual == expected => {}
            Some(actual) => return Err(format!("{name}={actual}, required {expected}")),
            None => return Err(format!("attribute {name} is missing")),
        }
    }
    Ok(format!("{} constraint(s) satisfied", request.attribute_constraints.len()))
}

/// Runs all five checks, without short-circuiting.
pub fn verify_presentation(presentation: &Presentation, request: &ProofRequest, registry: &Registry) -> VerificationReport {
    let credential = &presentation.credential;
    let checks = vec![
        outcome(Check::IssuerResolvable, check_issuer(credential, registry)),
        outcome(Check::LinkSecret, check_link_secret(presentation, request)),
        outcome(Check::IssuerAuthority, check_authority(credential, request, registry)),
        outcome(Check::NotRevoked, check_revocation(credential, registry)),
        outcome(Check::AttributeCriteria, check_criteria(credential, request)),
    ];
    let accepted = checks.iter().all(|c| c.passed);
    VerificationReport { checks, accepted }
}
