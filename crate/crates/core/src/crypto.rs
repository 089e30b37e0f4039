//! Signatures, sealed-box encryption, hashing and Pedersen commitments with a
//! Fiat-Shamir proof of opening.
//!
//! One Ed25519 key pair per identity serves both roles: it signs, and its
//! birationally equivalent X25519 form receives sealed boxes (the libsodium
//! `crypto_sign_ed25519_*_to_curve25519` conversion). Commitments live in the
//! Ristretto255 group; the second generator is hashed from the first, so there
//! is no trusted setup.

use curve25519_dalek::constants::RISTRETTO_BASEPOINT_POINT;
use curve25519_dalek::ristretto::{CompressedRistretto, RistrettoPoint};
use curve25519_dalek::traits::Identity;
use ed25519_dalek::{Signer, SigningKey, Verifier, VerifyingKey};
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256, Sha512};
use std::fmt;
use std::sync::OnceLock;
use thiserror::Error;

pub use curve25519_dalek::scalar::Scalar;

/// Length of seeds, public keys, secret keys, hashes and encoded group elements.
pub const KEY_LEN: usize = 32;
/// Length of an Ed25519 signature.
pub const SIGNATURE_LEN: usize = 64;
/// Bytes a sealed box adds to its plaintext: ephemeral public key plus Poly1305 tag.
pub const SEAL_OVERHEAD: usize = crypto_box::SEALBYTES;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CryptoError {
    #[error("seed must be exactly {KEY_LEN} bytes, got {0}")]
    InvalidSeed(usize),
    #[error("invalid public key")]
    InvalidPublicKey,
    #[error("decryption failed")]
    Decryption,
    #[error("encryption failed")]
    Encryption,
}

/// An Ed25519 signing identity.
#[derive(Clone)]
pub struct KeyPair {
    signing: SigningKey,
}

impl KeyPair {
    pub fn from_seed(seed: &[u8]) -> Result<Self, CryptoError> {
        let seed: [u8; KEY_LEN] = seed
            .try_into()
            .map_err(|_| CryptoError::InvalidSeed(seed.len()))?;
        Ok(KeyPair {
            signing: SigningKey::from_bytes(&seed),
        })
    }

    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        let mut seed = [0u8; KEY_LEN];
        rng.fill_bytes(&mut seed);
        KeyPair {
            signing: SigningKey::from_bytes(&seed),
        }
    }

    pub fn secret_key(&self) -> [u8; KEY_LEN] {
        self.signing.to_bytes()
    }

    pub fn public_key(&self) -> [u8; KEY_LEN] {
        self.signing.verifying_key().to_bytes()
    }

    pub fn sign(&self, message: &[u8]) -> Vec<u8> {
        self.signing.sign(message).to_bytes().to_vec()
    }

    /// Opens a sealed box addressed to this key pair's public key.
    pub fn open(&self, ciphertext: &[u8]) -> Result<Vec<u8>, CryptoError> {
        let secret = crypto_box::SecretKey::from(self.signing.to_scalar_bytes());
        secret
            .unseal(ciphertext)
            .map_err(|_| CryptoError::Decryption)
    }
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair")
            .field("public_key", &hex::encode(self.public_key()))
            .finish_non_exhaustive()
    }
}

pub fn generate_keypair(seed: &[u8]) -> Result<KeyPair, CryptoError> {
    KeyPair::from_seed(seed)
}

pub fn sign(keypair: &KeyPair, message: &[u8]) -> Vec<u8> {
    keypair.sign(message)
}

/// Malformed keys or signatures verify as `false`.
pub fn verify(public_key: &[u8], message: &[u8], signature: &[u8]) -> bool {
    let Ok(pk) = <[u8; KEY_LEN]>::try_from(public_key) else {
        return false;
    };
    let Ok(vk) = VerifyingKey::from_bytes(&pk) else {
        return false;
    };
    let Ok(sig) = ed25519_dalek::Signature::from_slice(signature) else {
        return false;
    };
    vk.verify(message, &sig).is_ok()
}

fn x25519_public(public_key: &[u8]) -> Result<crypto_box::PublicKey, CryptoError> {
    let pk: [u8; KEY_LEN] = public_key
        .try_into()
        .map_err(|_| CryptoError::InvalidPublicKey)?;
    let vk = VerifyingKey::from_bytes(&pk).map_err(|_| CryptoError::InvalidPublicKey)?;
    Ok(crypto_box::PublicKey::from(vk.to_montgomery().to_bytes()))
}

/// Anonymous sealed box (`crypto_box_seal`) to an Ed25519 public key.
pub fn seal<R: RngCore + CryptoRng>(
    recipient_public_key: &[u8],
    plaintext: &[u8],
    rng: &mut R,
) -> Result<Vec<u8>, CryptoError> {
    x25519_public(recipient_public_key)?
        .seal(rng, plaintext)
        .map_err(|_| CryptoError::Encryption)
}

pub fn open(recipient: &KeyPair, ciphertext: &[u8]) -> Result<Vec<u8>, CryptoError> {
    recipient.open(ciphertext)
}

pub fn digest(bytes: &[u8]) -> [u8; 32] {
    Sha256::digest(bytes).into()
}

fn generator_g() -> RistrettoPoint {
    RISTRETTO_BASEPOINT_POINT
}

fn generator_h() -> RistrettoPoint {
    static H: OnceLock<RistrettoPoint> = OnceLock::new();
    *H.get_or_init(|| {
        let mut input = b"fedtrust.pedersen.h:".to_vec();
        input.extend_from_slice(generator_g().compress().as_bytes());
        RistrettoPoint::hash_from_bytes::<Sha512>(&input)
    })
}

pub fn random_scalar<R: RngCore + CryptoRng>(rng: &mut R) -> Scalar {
    Scalar::random(rng)
}

pub fn scalar_from_bytes(bytes: &[u8]) -> Option<Scalar> {
    let arr: [u8; 32] = bytes.try_into().ok()?;
    Option::from(Scalar::from_canonical_bytes(arr))
}

/// A Pedersen commitment `g^secret · h^blinding`, tagged with the schema it was made for.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Commitment {
    #[serde(with = "crate::encoding::b64_array")]
    pub value: [u8; 32],
    pub context: String,
}

impl Commitment {
    fn point(&self) -> Option<RistrettoPoint> {
        CompressedRistretto(self.value).decompress()
    }

    pub fn is_valid(&self) -> bool {
        self.point().is_some()
    }

    pub fn is_identity(&self) -> bool {
        self.point() == Some(RistrettoPoint::identity())
    }

    /// Group operation on two commitments with the same context.
    pub fn combine(&self, other: &Commitment) -> Option<Commitment> {
        let sum = self.point()? + other.point()?;
        Some(Commitment {
            value: sum.compress().to_bytes(),
            context: self.context.clone(),
        })
    }
}

pub fn commit(secret: &Scalar, blinding: &Scalar, context: &str) -> Commitment {
    let point = generator_g() * secret + generator_h() * blinding;
    Commitment {
        value: point.compress().to_bytes(),
        context: context.to_string(),
    }
}

/// Non-interactive Schnorr proof of knowledge of a commitment opening.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpeningProof {
    pub commitment: Commitment,
    #[serde(with = "crate::encoding::b64_array")]
    pub challenge: [u8; 32],
    #[serde(with = "crate::encoding::b64_pair")]
    pub responses: [[u8; 32]; 2],
    #[serde(with = "crate::encoding::b64")]
    pub bound_nonce: Vec<u8>,
}

fn challenge_scalar(commitment: &Commitment, announcement: &[u8; 32], nonce: &[u8]) -> Scalar {
    let mut transcript = Vec::with_capacity(96 + nonce.len() + commitment.context.len());
    transcript.extend_from_slice(&commitment.value);
    transcript.extend_from_slice(announcement);
    transcript.extend_from_slice(nonce);
    transcript.extend_from_slice(commitment.context.as_bytes());
    Scalar::from_bytes_mod_order(digest(&transcript))
}

pub fn prove_opening<R: RngCore + CryptoRng>(
    secret: &Scalar,
    blinding: &Scalar,
    commitment: &Commitment,
    bound_nonce: &[u8],
    rng: &mut R,
) -> OpeningProof {
    let k_secret = Scalar::random(rng);
    let k_blinding = Scalar::random(rng);
    let announcement = (generator_g() * k_secret + generator_h() * k_blinding)
        .compress()
        .to_bytes();
    let c = challenge_scalar(commitment, &announcement, bound_nonce);
    let z_secret = k_secret + c * secret;
    let z_blinding = k_blinding + c * blinding;
    OpeningProof {
        commitment: commitment.clone(),
        challenge: c.to_bytes(),
        responses: [z_secret.to_bytes(), z_blinding.to_bytes()],
        bound_nonce: bound_nonce.to_vec(),
    }
}

pub fn verify_opening(commitment: &Commitment, proof: &OpeningProof, bound_nonce: &[u8]) -> bool {
    if proof.commitment != *commitment || proof.bound_nonce != bound_nonce {
        return false;
    }
    let Some(point) = commitment.point() else {
        return false;
    };
    let (Some(c), Some(z_secret), Some(z_blinding)) = (
        scalar_from_bytes(&proof.challenge),
        scalar_from_bytes(&proof.responses[0]),
        scalar_from_bytes(&proof.responses[1]),
    ) else {
        return false;
    };
    // g^z1 h^z2 C^-c reconstructs the announcement for an honest proof.
    let announcement = (generator_g() * z_secret + generator_h() * z_blinding - point * c)
        .compress()
        .to_bytes();
    challenge_scalar(commitment, &announcement, bound_nonce) == c
}
