//! Ephemeral X25519 session establishment and sealed messages.
//!
//! The client's ephemeral public key travels as the payload of a signed
//! envelope for the `session` operation, so the exchange is bound to the
//! authenticator. Both sides derive
//! `key = HKDF-SHA256(salt = transcript, ikm = X25519(shared))` where
//! `transcript = SHA-256(label || challenge || client_public || server_public)`,
//! and the server proves possession with an HMAC over the transcript.
//! Ephemeral secrets are consumed by the exchange and zeroized on drop.

use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::{XChaCha20Poly1305, XNonce};
use hkdf::Hkdf;
use hmac::{Hmac, Mac};
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};
use sha2::Sha256;
use x25519_dalek::{PublicKey, StaticSecret};
use zeroize::Zeroizing;

use crate::encoding::b64;
use crate::sha256;

pub const SESSION_OPERATION: &str = "session";
const TRANSCRIPT_LABEL: &[u8] = b"dipa-session-v1";
const KEY_INFO: &[u8] = b"dipa session key";
const CONFIRM_LABEL: &[u8] = b"server-confirm";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SessionError {
    #[error("peer public key is not contributory")]
    NonContributory,
    #[error("key confirmation failed")]
    ConfirmationMismatch,
    #[error("sealed message failed authentication")]
    Decrypt,
    #[error("payload is not a 32-byte public key")]
    BadPublicKey,
}

pub fn transcript_hash(challenge: &[u8; 32], client_public: &[u8; 32], server_public: &[u8; 32]) -> [u8; 32] {
    sha256(&[TRANSCRIPT_LABEL, challenge, client_public, server_public])
}

pub fn derive_session_key(shared: &[u8; 32], transcript: &[u8; 32]) -> Zeroizing<[u8; 32]> {
    let mut key = Zeroizing::new([0u8; 32]);
    Hkdf::<Sha256>::new(Some(transcript), shared)
        .expand(KEY_INFO, key.as_mut())
        .expect("32 bytes is a valid HKDF-SHA256 output length");
    key
}

pub fn confirmation_tag(key: &[u8; 32], transcript: &[u8; 32]) -> [u8; 32] {
    let mut mac = <Hmac<Sha256> as Mac>::new_from_slice(key).expect("HMAC accepts any key length");
    mac.update(CONFIRM_LABEL);
    mac.update(transcript);
    mac.finalize().into_bytes().into()
}

#[derive(Clone)]
pub struct SessionKey {
    pub session_id: [u8; 16],
    key: Zeroizing<[u8; 32]>,
}

impl SessionKey {
    pub fn from_parts(session_id: [u8; 16], key: [u8; 32]) -> Self {
        Self { session_id, key: Zeroizing::new(key) }
    }

    pub fn key_bytes(&self) -> &[u8; 32] {
        &self.key
    }
}

impl std::fmt::Debug for SessionKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SessionKey")
            .field("session_id", &crate::encoding::b64_encode(self.session_id))
            .field("key", &"<redacted>")
            .finish()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServerHello {
    #[serde(with = "b64")]
    pub session_id: [u8; 16],
    #[serde(with = "b64")]
    pub server_public: [u8; 32],
    #[serde(with = "b64")]
    pub confirmation: [u8; 32],
}

fn exchange(secret: StaticSecret, peer: &[u8; 32]) -> Result<Zeroizing<[u8; 32]>, SessionError> {
    let shared = secret.diffie_hellman(&PublicKey::from(*peer));
    if !shared.was_contributory() {
        return Err(SessionError::NonContributory);
    }
    Ok(Zeroizing::new(shared.to_bytes()))
}

/// Server side of the exchange. `client_public` comes from an accepted
/// `session` envelope bound to `challenge`.
pub fn respond<R: RngCore + CryptoRng>(
    challenge: &[u8; 32],
    client_public: &[u8],
    rng: &mut R,
) -> Result<(SessionKey, ServerHello), SessionError> {
    let client_public: [u8; 32] = client_public.try_into().map_err(|_| SessionError::BadPublicKey)?;
    let secret = StaticSecret::random_from_rng(&mut *rng);
    let server_public = PublicKey::from(&secret).to_bytes();
    let shared = exchange(secret, &client_public)?;
    let transcript = transcript_hash(challenge, &client_public, &server_public);
    let key = derive_session_key(&shared, &transcript);
    let mut session_id = [0u8; 16];
    rng.fill_bytes(&mut session_id);
    let hello = ServerHello { session_id, server_public, confirmation: confirmation_tag(&key, &transcript) };
    Ok((SessionKey { session_id, key }, hello))
}

pub struct ClientHandshake {
    secret: StaticSecret,
    public: [u8; 32],
}

impl ClientHandshake {
    pub fn new<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        let secret = StaticSecret::random_from_rng(rng);
        let public = PublicKey::from(&secret).to_bytes();
        Self { secret, public }
    }

    pub fn public(&self) -> [u8; 32] {
        self.public
    }

    /// Derives the session key and checks the server's confirmation tag.
    pub fn finish(self, challenge: &[u8; 32], hello: &ServerHello) -> Result<SessionKey, SessionError> {
        let shared = exchange(self.secret, &hello.server_public)?;
        let transcript = transcript_hash(challenge, &self.public, &hello.server_public);
        let key = derive_session_key(&shared, &transcript);
        let expected = confirmation_tag(&key, &transcript);
        if !bool::from(subtle_eq(&expected, &hello.confirmation)) {
            return Err(SessionError::ConfirmationMismatch);
        }
        Ok(SessionKey { session_id: hello.session_id, key })
    }
}

fn subtle_eq(a: &[u8; 32], b: &[u8; 32]) -> bool {
    a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

/// AEAD box for material the server hands to the wallet over a session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SealedMessage {
    #[serde(with = "b64")]
    pub nonce: [u8; 24],
    #[serde(with = "b64")]
    pub ciphertext: Vec<u8>,
}

pub fn seal<R: RngCore + CryptoRng>(key: &SessionKey, aad: &[u8], plaintext: &[u8], rng: &mut R) -> SealedMessage {
    let mut nonce = [0u8; 24];
    rng.fill_bytes(&mut nonce);
    let cipher = XChaCha20Poly1305::new(key.key.as_ref().into());
    let ciphertext = cipher
        .encrypt(XNonce::from_slice(&nonce), Payload { msg: plaintext, aad })
        .expect("XChaCha20-Poly1305 encryption is infallible for in-memory buffers");
    SealedMessage { nonce, ciphertext }
}

pub fn open(key: &SessionKey, aad: &[u8], message: &SealedMessage) -> Result<Vec<u8>, SessionError> {
    let cipher = XChaCha20Poly1305::new(key.key.as_ref().into());
    cipher
        .decrypt(XNonce::from_slice(&message.nonce), Payload { msg: &message.ciphertext, aad })
        .map_err(|_| SessionError::Decrypt)
}
