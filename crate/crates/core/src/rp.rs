//! WebAuthn relying-party verification with ML-DSA support.
//!
//! Ceremony checks run in the WebAuthn order: client data (type, challenge,
//! origin), then authenticator data (RP ID hash, flags), then the signature,
//! then the signature counter. The first failing check decides the error.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use rand::rngs::OsRng;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::authdata::{AuthDataError, AuthenticatorData};
use crate::cbor::{self, Value};
use crate::clock::{Clock, SystemClock};
use crate::cose::{self, Algorithm, AlgorithmId, CoseKey};
use crate::crypto::{self, SignatureSuite};
use crate::webauthn::{
    AuthenticationCredential, Base64Url, CollectedClientData, CreationOptions, CredentialDescriptor,
    CredentialParameter, RegistrationCredential, RequestOptions, RpEntity, UserEntity, UserVerification, PUBLIC_KEY,
    TYPE_CREATE, TYPE_GET,
};

pub const CHALLENGE_LEN: usize = 32;
pub const CHALLENGE_TTL: Duration = Duration::from_secs(120);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RpError {
    #[error("clientDataJSON is malformed: {0}")]
    MalformedClientData(String),
    #[error("client data type {0:?} does not match the ceremony")]
    WrongCeremonyType(String),
    #[error("challenge does not match the issued challenge")]
    ChallengeMismatch,
    #[error("origin {0:?} is not the expected origin")]
    OriginMismatch(String),
    #[error("rpIdHash does not match the relying party ID")]
    RpIdHashMismatch,
    #[error("user presence flag not set")]
    UserNotPresent,
    #[error("user verification required but flag not set")]
    UserNotVerified,
    #[error("authenticator data is malformed: {0}")]
    MalformedAuthenticatorData(AuthDataError),
    #[error("attestation object is malformed: {0}")]
    MalformedAttestation(&'static str),
    #[error("registration lacks attested credential data")]
    MissingAttestedCredential,
    #[error("attestation format {0:?} is not accepted")]
    UnsupportedAttestationFormat(String),
    #[error("algorithm {0} is not accepted by this relying party")]
    UnsupportedAlgorithm(AlgorithmId),
    #[error("attestation statement algorithm does not match the credential key")]
    AlgorithmMismatch,
    #[error("signature verification failed")]
    BadSignature,
    #[error("challenge is unknown, already used, or expired")]
    StaleChallenge,
    #[error("signature counter {received} is not above {last}: possible cloned authenticator")]
    CounterRegression { last: u32, received: u32 },
    #[error("credential is not registered for this user")]
    UnknownCredential,
    #[error("user handle does not match the credential")]
    UserHandleMismatch,
    #[error("policy accepts only ML-DSA-44, ML-DSA-65 and ES256, not {0}")]
    InvalidPolicy(AlgorithmId),
}

pub type RpResult<T> = Result<T, RpError>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RegistrationPolicy {
    pub rp_id: String,
    pub rp_name: String,
    pub origin: String,
    pub accepted_algorithms: Vec<AlgorithmId>,
    pub require_user_verification: bool,
}

impl RegistrationPolicy {
    /// ML-DSA-44, ML-DSA-65, ES256 in that order; no user verification.
    pub fn new(rp_id: &str, origin: &str) -> Self {
        RegistrationPolicy {
            rp_id: rp_id.into(),
            rp_name: rp_id.into(),
            origin: origin.into(),
            accepted_algorithms: Algorithm::PREFERENCE.iter().map(|a| a.id()).collect(),
            require_user_verification: false,
        }
    }

    pub fn with_algorithms(mut self, algorithms: &[AlgorithmId]) -> RpResult<Self> {
        if let Some(bad) = algorithms.iter().find(|a| a.supported().is_err()) {
            return Err(RpError::InvalidPolicy(*bad));
        }
        self.accepted_algorithms = algorithms.to_vec();
        Ok(self)
    }

    pub fn accepts(&self, alg: AlgorithmId) -> bool {
        self.accepted_algorithms.contains(&alg)
    }

    fn user_verification(&self) -> UserVerification {
        if self.require_user_verification {
            UserVerification::Required
        } else {
            UserVerification::Discouraged
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Purpose {
    Registration,
    Authentication,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChallengeRecord {
    pub challenge: [u8; CHALLENGE_LEN],
    pub rp_id: String,
    pub expires_at_ms: u64,
    pub purpose: Purpose,
    pub user_handle: Option<Vec<u8>>,
}

/// Issued challenges awaiting their ceremony. `take` must be atomic: a
/// challenge is handed out at most once.
pub trait ChallengeStore: Send + Sync {
    fn insert(&self, record: ChallengeRecord);
    fn take(&self, challenge: &[u8; CHALLENGE_LEN]) -> Option<ChallengeRecord>;
}

#[derive(Debug, Default)]
pub struct MemoryChallengeStore {
    records: Mutex<HashMap<[u8; CHALLENGE_LEN], ChallengeRecord>>,
}

impl MemoryChallengeStore {
    pub fn len(&self) -> usize {
        self.records.lock().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drops records that expired before `now_ms`.
    pub fn prune(&self, now_ms: u64) {
        self.records
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .retain(|_, r| r.expires_at_ms >= now_ms);
    }
}

impl ChallengeStore for MemoryChallengeStore {
    fn insert(&self, record: ChallengeRecord) {
        self.records
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .insert(record.challenge, record);
    }

    fn take(&self, challenge: &[u8; CHALLENGE_LEN]) -> Option<ChallengeRecord> {
        self.records.lock().unwrap_or_else(|e| e.into_inner()).remove(challenge)
    }
}

/// A credential the relying party has accepted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RegisteredKeyJson", into = "RegisteredKeyJson")]
pub struct RegisteredKey {
    pub credential_id: Vec<u8>,
    pub public_key: CoseKey,
    pub algorithm: Algorithm,
    pub last_sign_count: u32,
    pub user_handle: Vec<u8>,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct RegisteredKeyJson {
    credential_id: Base64Url,
    algorithm: AlgorithmId,
    /// CBOR-encoded COSE_Key.
    public_key: Base64Url,
    last_sign_count: u32,
    user_handle: Base64Url,
}

impl From<RegisteredKey> for RegisteredKeyJson {
    fn from(k: RegisteredKey) -> Self {
        let cose = cose::encode_cose_key(&k.public_key).expect("registered keys are valid");
        RegisteredKeyJson {
            credential_id: k.credential_id.into(),
            algorithm: k.algorithm.id(),
            public_key: cbor::encode(&cose).expect("COSE keys have unique labels").into(),
            last_sign_count: k.last_sign_count,
            user_handle: k.user_handle.into(),
        }
    }
}

impl TryFrom<RegisteredKeyJson> for RegisteredKey {
    type Error = String;

    fn try_from(j: RegisteredKeyJson) -> Result<Self, String> {
        let value = cbor::decode(&j.public_key.0).map_err(|e| e.to_string())?;
        let public_key = cose::decode_cose_key(&value).map_err(|e| e.to_string())?;
        let algorithm = j.algorithm.supported().map_err(|e| e.to_string())?;
        if public_key.algorithm != algorithm.id() {
            return Err("algorithm does not match public key".into());
        }
        Ok(RegisteredKey {
            credential_id: j.credential_id.0,
            public_key,
            algorithm,
            last_sign_count: j.last_sign_count,
            user_handle: j.user_handle.0,
        })
    }
}

/// Summary of a successful ceremony.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct VerificationReport {
    pub ceremony: Purpose,
    pub rp_id: String,
    pub credential_id: String,
    pub algorithm: Algorithm,
    pub public_key_len: usize,
    pub signature_len: usize,
    pub sign_count: u32,
    pub user_present: bool,
    pub user_verified: bool,
}

impl VerificationReport {
    fn new(
        ceremony: Purpose,
        rp_id: &str,
        key: &RegisteredKey,
        auth_data: &AuthenticatorData,
        signature_len: usize,
    ) -> Self {
        VerificationReport {
            ceremony,
            rp_id: rp_id.into(),
            credential_id: Base64Url::encode(&key.credential_id),
            algorithm: key.algorithm,
            public_key_len: key.public_key.public_bytes().len(),
            signature_len,
            sign_count: auth_data.sign_count,
            user_present: auth_data.user_present(),
            user_verified: auth_data.user_verified(),
        }
    }
}

fn verify_client_data(
    client_data_json: &[u8],
    expected_type: &str,
    challenge: &[u8; CHALLENGE_LEN],
    origin: &str,
) -> RpResult<()> {
    let cd: CollectedClientData =
        serde_json::from_slice(client_data_json).map_err(|e| RpError::MalformedClientData(e.to_string()))?;
    if cd.kind != expected_type {
        return Err(RpError::WrongCeremonyType(cd.kind));
    }
    let received = Base64Url::decode(&cd.challenge).map_err(|_| RpError::ChallengeMismatch)?;
    if !crypto::ct_eq(&received, challenge) {
        return Err(RpError::ChallengeMismatch);
    }
    if cd.origin != origin {
        return Err(RpError::OriginMismatch(cd.origin));
    }
    Ok(())
}

fn verify_flags(policy: &RegistrationPolicy, auth_data: &AuthenticatorData) -> RpResult<()> {
    if auth_data.rp_id_hash != crypto::sha256(policy.rp_id.as_bytes()) {
        return Err(RpError::RpIdHashMismatch);
    }
    if !auth_data.user_present() {
        return Err(RpError::UserNotPresent);
    }
    if policy.require_user_verification && !auth_data.user_verified() {
        return Err(RpError::UserNotVerified);
    }
    Ok(())
}

/// Our authenticator emits raw `r ∥ s`; other authenticators send DER.
fn normalize_signature(algorithm: Algorithm, signature: &[u8]) -> RpResult<Vec<u8>> {
    match algorithm {
        Algorithm::Es256 if signature.len() != 64 => crypto::es256_der_to_raw(signature)
            .map(|raw| raw.to_vec())
            .map_err(|_| RpError::BadSignature),
        _ => Ok(signature.to_vec()),
    }
}

fn verify_signature(
    suite: &SignatureSuite,
    key: &CoseKey,
    algorithm: Algorithm,
    auth_data: &[u8],
    client_data_json: &[u8],
    signature: &[u8],
) -> RpResult<()> {
    let signature = normalize_signature(algorithm, signature)?;
    let message = [auth_data, &crypto::sha256(client_data_json)].concat();
    match suite.verify(&key.public_bytes(), algorithm.id(), &message, &signature) {
        Ok(true) => Ok(()),
        _ => Err(RpError::BadSignature),
    }
}

fn check_record(record: &ChallengeRecord, purpose: Purpose, now_ms: u64) -> RpResult<()> {
    if record.expires_at_ms < now_ms {
        return Err(RpError::StaleChallenge);
    }
    if record.purpose != purpose {
        return Err(RpError::StaleChallenge);
    }
    Ok(())
}

/// Verifies a registration response against an issued challenge. Pure: the
/// caller is responsible for single-use bookkeeping.
pub fn verify_registration(
    policy: &RegistrationPolicy,
    suite: &SignatureSuite,
    record: &ChallengeRecord,
    now_ms: u64,
    client_data_json: &[u8],
    attestation_object: &[u8],
) -> RpResult<RegisteredKey> {
    check_record(record, Purpose::Registration, now_ms)?;
    verify_client_data(client_data_json, TYPE_CREATE, &record.challenge, &policy.origin)?;

    let att = cbor::decode(attestation_object).map_err(|_| RpError::MalformedAttestation("not canonical CBOR"))?;
    let fmt = att
        .get_text("fmt")
        .and_then(Value::as_text)
        .ok_or(RpError::MalformedAttestation("fmt"))?;
    let att_stmt = att
        .get_text("attStmt")
        .ok_or(RpError::MalformedAttestation("attStmt"))?;
    let auth_data_bytes = att
        .get_text("authData")
        .and_then(Value::as_bytes)
        .ok_or(RpError::MalformedAttestation("authData"))?;

    let auth_data = AuthenticatorData::parse(auth_data_bytes).map_err(RpError::MalformedAuthenticatorData)?;
    verify_flags(policy, &auth_data)?;
    let attested = auth_data.attested.as_ref().ok_or(RpError::MissingAttestedCredential)?;
    let key = &attested.public_key;
    let algorithm = key
        .algorithm
        .supported()
        .ok()
        .filter(|a| policy.accepts(a.id()))
        .ok_or(RpError::UnsupportedAlgorithm(key.algorithm))?;

    if fmt != "packed" {
        return Err(RpError::UnsupportedAttestationFormat(fmt.into()));
    }
    if att_stmt.get_text("x5c").is_some() {
        return Err(RpError::UnsupportedAttestationFormat("packed with x5c".into()));
    }
    let stmt_alg = att_stmt
        .get_text("alg")
        .and_then(Value::as_int)
        .ok_or(RpError::MalformedAttestation("attStmt.alg"))?;
    if stmt_alg != algorithm.id().0 {
        return Err(RpError::AlgorithmMismatch);
    }
    let sig = att_stmt
        .get_text("sig")
        .and_then(Value::as_bytes)
        .ok_or(RpError::MalformedAttestation("attStmt.sig"))?;
    verify_signature(suite, key, algorithm, auth_data_bytes, client_data_json, sig)?;

    Ok(RegisteredKey {
        credential_id: attested.credential_id.clone(),
        public_key: key.clone(),
        algorithm,
        last_sign_count: auth_data.sign_count,
        user_handle: record.user_handle.clone().unwrap_or_default(),
    })
}

/// Verifies an assertion and returns the new signature counter. Pure.
#[allow(clippy::too_many_arguments)]
pub fn verify_authentication(
    policy: &RegistrationPolicy,
    suite: &SignatureSuite,
    record: &ChallengeRecord,
    now_ms: u64,
    key: &RegisteredKey,
    client_data_json: &[u8],
    authenticator_data: &[u8],
    signature: &[u8],
) -> RpResult<u32> {
    check_record(record, Purpose::Authentication, now_ms)?;
    verify_client_data(client_data_json, TYPE_GET, &record.challenge, &policy.origin)?;
    let auth_data = AuthenticatorData::parse(authenticator_data).map_err(RpError::MalformedAuthenticatorData)?;
    verify_flags(policy, &auth_data)?;
    verify_signature(
        suite,
        &key.public_key,
        key.algorithm,
        authenticator_data,
        client_data_json,
        signature,
    )?;
    if auth_data.sign_count <= key.last_sign_count {
        return Err(RpError::CounterRegression {
            last: key.last_sign_count,
            received: auth_data.sign_count,
        });
    }
    Ok(auth_data.sign_count)
}

/// A relying party: policy, challenge bookkeeping and verification.
pub struct RelyingParty {
    policy: RegistrationPolicy,
    challenges: Arc<dyn ChallengeStore>,
    clock: Arc<dyn Clock>,
    suite: SignatureSuite,
}

impl RelyingParty {
    pub fn new(policy: RegistrationPolicy) -> Self {
        RelyingParty {
            policy,
            challenges: Arc::new(MemoryChallengeStore::default()),
            clock: Arc::new(SystemClock),
            suite: SignatureSuite::default(),
        }
    }

    pub fn with_challenge_store(mut self, store: Arc<dyn ChallengeStore>) -> Self {
        self.challenges = store;
        self
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn policy(&self) -> &RegistrationPolicy {
        &self.policy
    }

    fn issue(&self, purpose: Purpose, user_handle: Option<Vec<u8>>) -> ChallengeRecord {
        let mut challenge = [0u8; CHALLENGE_LEN];
        OsRng.fill_bytes(&mut challenge);
        let record = ChallengeRecord {
            challenge,
            rp_id: self.policy.rp_id.clone(),
            expires_at_ms: self.clock.now_ms() + CHALLENGE_TTL.as_millis() as u64,
            purpose,
            user_handle,
        };
        self.challenges.insert(record.clone());
        record
    }

    /// Takes the record out of the store; a second attempt finds nothing.
    fn consume(&self, record: &ChallengeRecord) -> RpResult<ChallengeRecord> {
        let stored = self.challenges.take(&record.challenge).ok_or(RpError::StaleChallenge)?;
        if stored != *record {
            return Err(RpError::StaleChallenge);
        }
        Ok(stored)
    }

    pub fn begin_registration(&self, user: &UserEntity, exclude: &[Vec<u8>]) -> (CreationOptions, ChallengeRecord) {
        let record = self.issue(Purpose::Registration, Some(user.id.0.clone()));
        let options = CreationOptions {
            challenge: Base64Url(record.challenge.to_vec()),
            rp: RpEntity {
                id: self.policy.rp_id.clone(),
                name: self.policy.rp_name.clone(),
            },
            user: user.clone(),
            pub_key_cred_params: self
                .policy
                .accepted_algorithms
                .iter()
                .map(|&alg| CredentialParameter {
                    kind: PUBLIC_KEY.into(),
                    alg,
                })
                .collect(),
            timeout: CHALLENGE_TTL.as_millis() as u64,
            exclude_credentials: exclude
                .iter()
                .map(|id| CredentialDescriptor::public_key(id.clone()))
                .collect(),
            attestation: "direct".into(),
            user_verification: self.policy.user_verification(),
        };
        (options, record)
    }

    pub fn finish_registration(
        &self,
        record: &ChallengeRecord,
        client_data_json: &[u8],
        attestation_object: &[u8],
    ) -> RpResult<RegisteredKey> {
        let record = self.consume(record)?;
        verify_registration(
            &self.policy,
            &self.suite,
            &record,
            self.clock.now_ms(),
            client_data_json,
            attestation_object,
        )
    }

    /// [`Self::finish_registration`] from the JSON a client posts back.
    pub fn finish_registration_json(
        &self,
        record: &ChallengeRecord,
        credential: &RegistrationCredential,
    ) -> RpResult<(RegisteredKey, VerificationReport)> {
        let response = &credential.response;
        let key = self.finish_registration(record, &response.client_data_json.0, &response.attestation_object.0)?;
        if key.credential_id != credential.raw_id.0 {
            return Err(RpError::UnknownCredential);
        }
        let att = cbor::decode(&response.attestation_object.0).expect("verified above");
        let auth_data = AuthenticatorData::parse(att.get_text("authData").and_then(Value::as_bytes).unwrap())
            .expect("verified above");
        let sig_len = att
            .get_text("attStmt")
            .and_then(|s| s.get_text("sig"))
            .and_then(Value::as_bytes)
            .map_or(0, <[u8]>::len);
        let report = VerificationReport::new(Purpose::Registration, &self.policy.rp_id, &key, &auth_data, sig_len);
        Ok((key, report))
    }

    pub fn begin_authentication(&self, allow: &[Vec<u8>]) -> (RequestOptions, ChallengeRecord) {
        let record = self.issue(Purpose::Authentication, None);
        let options = RequestOptions {
            challenge: Base64Url(record.challenge.to_vec()),
            rp_id: self.policy.rp_id.clone(),
            timeout: CHALLENGE_TTL.as_millis() as u64,
            allow_credentials: allow
                .iter()
                .map(|id| CredentialDescriptor::public_key(id.clone()))
                .collect(),
            user_verification: self.policy.user_verification(),
        };
        (options, record)
    }

    /// Verifies an assertion and, on success, advances `key.last_sign_count`.
    pub fn finish_authentication(
        &self,
        record: &ChallengeRecord,
        key: &mut RegisteredKey,
        client_data_json: &[u8],
        authenticator_data: &[u8],
        signature: &[u8],
    ) -> RpResult<u32> {
        let record = self.consume(record)?;
        let count = verify_authentication(
            &self.policy,
            &self.suite,
            &record,
            self.clock.now_ms(),
            key,
            client_data_json,
            authenticator_data,
            signature,
        )?;
        key.last_sign_count = count;
        Ok(count)
    }

    /// [`Self::finish_authentication`] from the JSON a client posts back,
    /// also matching the credential id and user handle.
    pub fn finish_authentication_json(
        &self,
        record: &ChallengeRecord,
        key: &mut RegisteredKey,
        credential: &AuthenticationCredential,
    ) -> RpResult<VerificationReport> {
        if credential.raw_id.0 != key.credential_id {
            self.challenges.take(&record.challenge);
            return Err(RpError::UnknownCredential);
        }
        if let Some(handle) = &credential.response.user_handle {
            if handle.0 != key.user_handle {
                self.challenges.take(&record.challenge);
                return Err(RpError::UserHandleMismatch);
            }
        }
        let response = &credential.response;
        self.finish_authentication(
            record,
            key,
            &response.client_data_json.0,
            &response.authenticator_data.0,
            &response.signature.0,
        )?;
        let auth_data = AuthenticatorData::parse(&response.authenticator_data.0).expect("verified above");
        Ok(VerificationReport::new(
            Purpose::Authentication,
            &self.policy.rp_id,
            key,
            &auth_data,
            response.signature.0.len(),
        ))
    }
}
