//! The signed authenticator data structure.
//!
//! `rpIdHash (32) ∥ flags (1) ∥ signCount (4, big-endian) ∥ [attested credential data]`,
//! where attested credential data is
//! `aaguid (16) ∥ credentialIdLength (2, big-endian) ∥ credentialId ∥ COSE_Key`.

use thiserror::Error;

use crate::cbor;
use crate::cose::{self, CoseKey};

pub mod flags {
    pub const USER_PRESENT: u8 = 0x01;
    pub const USER_VERIFIED: u8 = 0x04;
    pub const ATTESTED_CREDENTIAL_DATA: u8 = 0x40;
    pub const EXTENSION_DATA: u8 = 0x80;
}

pub const BASE_LEN: usize = 37;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AuthDataError {
    #[error("authenticator data too short")]
    Truncated,
    #[error("authenticator data has trailing bytes")]
    TrailingBytes,
    #[error("extension data is not supported")]
    ExtensionsUnsupported,
    #[error("credential public key: {0}")]
    PublicKey(#[from] cose::CoseError),
    #[error("credential public key is not valid CBOR")]
    PublicKeyEncoding,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttestedCredentialData {
    pub aaguid: [u8; 16],
    pub credential_id: Vec<u8>,
    pub public_key: CoseKey,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuthenticatorData {
    pub rp_id_hash: [u8; 32],
    pub flags: u8,
    pub sign_count: u32,
    pub attested: Option<AttestedCredentialData>,
}

impl AuthenticatorData {
    /// Builds authenticator data, setting the AT flag iff `attested` is present.
    pub fn new(rp_id_hash: [u8; 32], flags: u8, sign_count: u32, attested: Option<AttestedCredentialData>) -> Self {
        let flags = if attested.is_some() {
            flags | flags::ATTESTED_CREDENTIAL_DATA
        } else {
            flags & !flags::ATTESTED_CREDENTIAL_DATA
        };
        AuthenticatorData {
            rp_id_hash,
            flags,
            sign_count,
            attested,
        }
    }

    pub fn user_present(&self) -> bool {
        self.flags & flags::USER_PRESENT != 0
    }

    pub fn user_verified(&self) -> bool {
        self.flags & flags::USER_VERIFIED != 0
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(BASE_LEN);
        out.extend_from_slice(&self.rp_id_hash);
        out.push(self.flags);
        out.extend_from_slice(&self.sign_count.to_be_bytes());
        if let Some(att) = &self.attested {
            out.extend_from_slice(&att.aaguid);
            out.extend_from_slice(&(att.credential_id.len() as u16).to_be_bytes());
            out.extend_from_slice(&att.credential_id);
            let key = cose::encode_cose_key(&att.public_key).expect("attested key is a valid credential key");
            out.extend_from_slice(&cbor::encode(&key).expect("COSE keys have unique labels"));
        }
        out
    }

    pub fn parse(bytes: &[u8]) -> Result<Self, AuthDataError> {
        if bytes.len() < BASE_LEN {
            return Err(AuthDataError::Truncated);
        }
        let rp_id_hash: [u8; 32] = bytes[..32].try_into().unwrap();
        let flag_byte = bytes[32];
        let sign_count = u32::from_be_bytes(bytes[33..37].try_into().unwrap());
        if flag_byte & flags::EXTENSION_DATA != 0 {
            return Err(AuthDataError::ExtensionsUnsupported);
        }
        let rest = &bytes[BASE_LEN..];
        let attested = if flag_byte & flags::ATTESTED_CREDENTIAL_DATA != 0 {
            if rest.len() < 18 {
                return Err(AuthDataError::Truncated);
            }
            let aaguid: [u8; 16] = rest[..16].try_into().unwrap();
            let id_len = u16::from_be_bytes([rest[16], rest[17]]) as usize;
            let rest = &rest[18..];
            if rest.len() < id_len {
                return Err(AuthDataError::Truncated);
            }
            let (credential_id, key_bytes) = rest.split_at(id_len);
            let (key_value, used) = cbor::decode_prefix(key_bytes).map_err(|_| AuthDataError::PublicKeyEncoding)?;
            if used != key_bytes.len() {
                return Err(AuthDataError::TrailingBytes);
            }
            Some(AttestedCredentialData {
                aaguid,
                credential_id: credential_id.to_vec(),
                public_key: cose::decode_cose_key(&key_value)?,
            })
        } else {
            if !rest.is_empty() {
                return Err(AuthDataError::TrailingBytes);
            }
            None
        };
        Ok(AuthenticatorData {
            rp_id_hash,
            flags: flag_byte,
            sign_count,
            attested,
        })
    }
}
