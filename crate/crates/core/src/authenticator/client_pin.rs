//! authenticatorClientPIN, PIN protocol 1 only.

use rand_core::CryptoRngCore;
use zeroize::Zeroizing;

use super::{required, Authenticator, CtapResult, Event, Status};
use crate::cbor::Value;
use crate::cose::{self, AlgorithmId, CoseKey, KeyMaterial};
use crate::crypto::{self, KeyPair, SharedSecret, SignatureSuite};
use crate::store::MAX_PIN_RETRIES;

pub const SUB_GET_RETRIES: i64 = 0x01;
pub const SUB_GET_KEY_AGREEMENT: i64 = 0x02;
pub const SUB_SET_PIN: i64 = 0x03;
pub const SUB_CHANGE_PIN: i64 = 0x04;
pub const SUB_GET_PIN_TOKEN: i64 = 0x05;

const MIN_PIN_LEN: usize = 4;
const MAX_PIN_LEN: usize = 63;
/// Consecutive mismatches after which a power cycle is required.
const MAX_CONSECUTIVE_MISMATCHES: u8 = 3;

/// Volatile PIN protocol state, regenerated on every power-up.
pub struct PinState {
    key_agreement: KeyPair,
    token: Zeroizing<[u8; 16]>,
    consecutive_mismatches: u8,
}

impl PinState {
    pub(super) fn power_up(suite: &SignatureSuite, rng: &mut dyn CryptoRngCore) -> PinState {
        let mut token = Zeroizing::new([0u8; 16]);
        rng.fill_bytes(token.as_mut());
        PinState {
            key_agreement: suite
                .generate_keypair(AlgorithmId::ES256, rng)
                .expect("P-256 key generation cannot fail"),
            token,
            consecutive_mismatches: 0,
        }
    }

    pub(super) fn token(&self) -> &[u8; 16] {
        &self.token
    }
}

impl Authenticator {
    pub fn client_pin(&mut self, params: &Value) -> CtapResult<Option<Value>> {
        let protocol = required(params, 0x01)?.as_int().ok_or(Status::CborUnexpectedType)?;
        if protocol != 1 {
            return Err(Status::InvalidParameter);
        }
        let sub = required(params, 0x02)?.as_int().ok_or(Status::CborUnexpectedType)?;
        match sub {
            SUB_GET_RETRIES => Ok(Some(Value::map([(
                Value::int(0x03),
                Value::Unsigned(self.store.state().pin_retries as u64),
            )]))),
            SUB_GET_KEY_AGREEMENT => {
                let pk = self.pin.key_agreement.public_key();
                let key = cose::encode_key_agreement_key(pk[..32].try_into().unwrap(), pk[32..].try_into().unwrap());
                Ok(Some(Value::map([(Value::int(0x01), key)])))
            }
            SUB_SET_PIN => self.set_pin(params).map(|_| None),
            SUB_CHANGE_PIN => self.change_pin(params).map(|_| None),
            SUB_GET_PIN_TOKEN => self.get_pin_token(params).map(Some),
            _ => Err(Status::InvalidParameter),
        }
    }

    fn shared_secret(&self, params: &Value) -> CtapResult<SharedSecret> {
        let (x, y) = cose::decode_key_agreement_key(required(params, 0x03)?).map_err(|_| Status::InvalidParameter)?;
        let platform = CoseKey {
            algorithm: AlgorithmId(cose::registry::ECDH_ES_HKDF_256),
            material: KeyMaterial::Ec2 { x, y },
        };
        crypto::pin1_key_agreement(&platform, &self.pin.key_agreement).map_err(|_| Status::InvalidParameter)
    }

    fn check_pin_auth(&self, key: &SharedSecret, message: &[u8], params: &Value) -> CtapResult<()> {
        let pin_auth = required(params, 0x04)?.as_bytes().ok_or(Status::CborUnexpectedType)?;
        self.emit(Event::PinAuthChecked);
        if crypto::ct_eq(&crypto::pin1_authenticate(key.as_bytes(), message), pin_auth) {
            Ok(())
        } else {
            Err(Status::PinAuthInvalid)
        }
    }

    fn decrypt_new_pin(&self, key: &SharedSecret, new_pin_enc: &[u8]) -> CtapResult<[u8; 16]> {
        if new_pin_enc.len() < 64 {
            return Err(Status::PinPolicyViolation);
        }
        let padded = Zeroizing::new(crypto::pin1_decrypt(key, new_pin_enc).map_err(|_| Status::InvalidParameter)?);
        let pin_len = padded.iter().position(|&b| b == 0).unwrap_or(padded.len());
        if !(MIN_PIN_LEN..=MAX_PIN_LEN).contains(&pin_len) {
            return Err(Status::PinPolicyViolation);
        }
        Ok(crypto::sha256(&padded[..pin_len])[..16].try_into().unwrap())
    }

    fn set_pin(&mut self, params: &Value) -> CtapResult<()> {
        let shared = self.shared_secret(params)?;
        let new_pin_enc = required(params, 0x05)?.as_bytes().ok_or(Status::CborUnexpectedType)?;
        if self.store.state().pin_hash_left16.is_some() {
            return Err(Status::NotAllowed);
        }
        self.check_pin_auth(&shared, new_pin_enc, params)?;
        let hash = self.decrypt_new_pin(&shared, new_pin_enc)?;
        self.store.set_pin_hash(hash).map_err(|_| Status::Other)
    }

    /// Checks `pinHashEnc` against the stored PIN hash, maintaining the
    /// retry counter and the power-cycle lockout.
    fn verify_pin_hash(&mut self, shared: &SharedSecret, params: &Value) -> CtapResult<()> {
        let stored = self.store.state().pin_hash_left16.ok_or(Status::PinNotSet)?;
        let retries = self.store.state().pin_retries;
        if retries == 0 {
            return Err(Status::PinBlocked);
        }
        if self.pin.consecutive_mismatches >= MAX_CONSECUTIVE_MISMATCHES {
            return Err(Status::PinAuthBlocked);
        }
        let pin_hash_enc = required(params, 0x06)?.as_bytes().ok_or(Status::CborUnexpectedType)?;
        self.store.set_pin_retries(retries - 1).map_err(|_| Status::Other)?;
        let decrypted = crypto::pin1_decrypt(shared, pin_hash_enc).map_err(|_| Status::InvalidParameter)?;
        if !crypto::ct_eq(&decrypted, &stored) {
            let suite = self.suite.clone();
            self.pin.key_agreement = suite
                .generate_keypair(AlgorithmId::ES256, self.rng.as_mut())
                .expect("P-256 key generation cannot fail");
            self.pin.consecutive_mismatches += 1;
            return Err(if retries - 1 == 0 {
                Status::PinBlocked
            } else if self.pin.consecutive_mismatches >= MAX_CONSECUTIVE_MISMATCHES {
                Status::PinAuthBlocked
            } else {
                Status::PinInvalid
            });
        }
        self.pin.consecutive_mismatches = 0;
        self.store.set_pin_retries(MAX_PIN_RETRIES).map_err(|_| Status::Other)
    }

    fn change_pin(&mut self, params: &Value) -> CtapResult<()> {
        if self.store.state().pin_hash_left16.is_none() {
            return Err(Status::PinNotSet);
        }
        if self.store.state().pin_retries == 0 {
            return Err(Status::PinBlocked);
        }
        let shared = self.shared_secret(params)?;
        let new_pin_enc = required(params, 0x05)?.as_bytes().ok_or(Status::CborUnexpectedType)?;
        let pin_hash_enc = required(params, 0x06)?.as_bytes().ok_or(Status::CborUnexpectedType)?;
        self.check_pin_auth(&shared, &[new_pin_enc, pin_hash_enc].concat(), params)?;
        self.verify_pin_hash(&shared, params)?;
        let hash = self.decrypt_new_pin(&shared, new_pin_enc)?;
        self.store.set_pin_hash(hash).map_err(|_| Status::Other)
    }

    fn get_pin_token(&mut self, params: &Value) -> CtapResult<Value> {
        if self.store.state().pin_hash_left16.is_none() {
            return Err(Status::PinNotSet);
        }
        let shared = self.shared_secret(params)?;
        self.verify_pin_hash(&shared, params)?;
        let enc = crypto::pin1_encrypt(&shared, self.pin.token()).map_err(|_| Status::Other)?;
        Ok(Value::map([(Value::int(0x02), Value::bytes(enc))]))
    }
}
