//! CTAP2 command processor.
//!
//! Implements authenticatorMakeCredential (0x01), authenticatorGetAssertion
//! (0x02), authenticatorGetInfo (0x04), authenticatorClientPIN (0x06,
//! protocol 1 only) and authenticatorGetNextAssertion (0x08). Requests are a
//! command byte followed by a canonical CBOR map; responses are a status byte
//! optionally followed by a canonical CBOR map.

mod client_pin;
pub mod status;

use std::fmt;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::SeedableRng;
use rand_core::{CryptoRngCore, RngCore};

use crate::authdata::{flags, AttestedCredentialData, AuthenticatorData};
use crate::cbor::{self, Value};
use crate::clock::{Clock, SystemClock};
use crate::cose::{Algorithm, AlgorithmId};
use crate::crypto::{self, SignatureSuite};
use crate::store::{Credential, CredentialStore, StoreError, MAX_USER_HANDLE_LEN};

pub use client_pin::PinState;
pub use status::Status;

pub const CMD_MAKE_CREDENTIAL: u8 = 0x01;
pub const CMD_GET_ASSERTION: u8 = 0x02;
pub const CMD_GET_INFO: u8 = 0x04;
pub const CMD_CLIENT_PIN: u8 = 0x06;
pub const CMD_GET_NEXT_ASSERTION: u8 = 0x08;

/// Fixed model identifier: "QEY" followed by zeros.
pub const AAGUID: [u8; 16] = [0x51, 0x45, 0x59, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0];
pub const ASSERTION_SESSION_TIMEOUT: Duration = Duration::from_secs(30);
pub const MAX_MSG_SIZE: u64 = 7609;

/// Stands in for the physical presence button.
pub trait UserPresence {
    /// Blocks until the user confirms (`true`) or refuses / times out (`false`).
    fn confirm(&self, rp_id: &str) -> bool;
}

impl<F: Fn(&str) -> bool> UserPresence for F {
    fn confirm(&self, rp_id: &str) -> bool {
        self(rp_id)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AlwaysPresent;

impl UserPresence for AlwaysPresent {
    fn confirm(&self, _rp_id: &str) -> bool {
        true
    }
}

#[derive(Debug, Clone, Copy)]
pub struct NeverPresent;

impl UserPresence for NeverPresent {
    fn confirm(&self, _rp_id: &str) -> bool {
        false
    }
}

/// Instrumentation points inside command processing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Event {
    PresenceRequested,
    PresenceResolved(bool),
    PinAuthChecked,
    KeyGenerated { algorithm: Algorithm, elapsed: Duration },
    CredentialStored { elapsed: Duration },
    Signed { algorithm: Algorithm, elapsed: Duration },
}

impl Event {
    pub fn is_cryptographic(&self) -> bool {
        matches!(
            self,
            Event::PinAuthChecked | Event::KeyGenerated { .. } | Event::Signed { .. }
        )
    }
}

pub trait Observer: Send + Sync {
    fn on_event(&self, event: &Event);
}

#[derive(Debug, Clone)]
pub struct AuthenticatorConfig {
    pub aaguid: [u8; 16],
    pub session_timeout: Duration,
}

impl Default for AuthenticatorConfig {
    fn default() -> Self {
        AuthenticatorConfig {
            aaguid: AAGUID,
            session_timeout: ASSERTION_SESSION_TIMEOUT,
        }
    }
}

struct AssertionSession {
    remaining: Vec<Credential>,
    issued_at_ms: u64,
    client_data_hash: [u8; 32],
    flags: u8,
}

pub struct Authenticator {
    config: AuthenticatorConfig,
    store: CredentialStore,
    suite: SignatureSuite,
    rng: Box<dyn CryptoRngCore + Send>,
    clock: Arc<dyn Clock>,
    pin: PinState,
    session: Option<AssertionSession>,
    observer: Option<Arc<dyn Observer>>,
}

impl fmt::Debug for Authenticator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Authenticator")
            .field("aaguid", &self.config.aaguid)
            .field("credentials", &self.store.len())
            .finish_non_exhaustive()
    }
}

type CtapResult<T> = Result<T, Status>;

impl Authenticator {
    pub fn new(store: CredentialStore) -> Self {
        Self::with_rng(store, Box::new(StdRng::from_entropy()))
    }

    pub fn with_rng(store: CredentialStore, mut rng: Box<dyn CryptoRngCore + Send>) -> Self {
        let suite = SignatureSuite::default();
        let pin = PinState::power_up(&suite, rng.as_mut());
        Authenticator {
            config: AuthenticatorConfig::default(),
            store,
            suite,
            rng,
            clock: Arc::new(SystemClock),
            pin,
            session: None,
            observer: None,
        }
    }

    pub fn with_config(mut self, config: AuthenticatorConfig) -> Self {
        self.config = config;
        self
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn with_suite(mut self, suite: SignatureSuite) -> Self {
        self.suite = suite;
        self
    }

    pub fn with_observer(mut self, observer: Arc<dyn Observer>) -> Self {
        self.observer = Some(observer);
        self
    }

    pub fn store(&self) -> &CredentialStore {
        &self.store
    }

    /// Simulates unplugging and replugging: new PIN token and key-agreement
    /// key, cleared assertion session.
    pub fn power_cycle(&mut self) {
        self.pin = PinState::power_up(&self.suite, self.rng.as_mut());
        self.session = None;
    }

    fn emit(&self, event: Event) {
        if let Some(obs) = &self.observer {
            obs.on_event(&event);
        }
    }

    fn request_presence(&self, rp_id: &str, presence: &dyn UserPresence) -> CtapResult<()> {
        self.emit(Event::PresenceRequested);
        let ok = presence.confirm(rp_id);
        self.emit(Event::PresenceResolved(ok));
        if ok {
            Ok(())
        } else {
            Err(Status::OperationDenied)
        }
    }

    /// Processes one CTAP2 request and returns the encoded response.
    /// Errors are reported in the status byte.
    pub fn handle_command(&mut self, request: &[u8], presence: &dyn UserPresence) -> Vec<u8> {
        let Some((&command, body)) = request.split_first() else {
            return vec![Status::InvalidLength.code()];
        };
        if command != CMD_GET_NEXT_ASSERTION {
            self.session = None;
        }
        let result = match command {
            CMD_MAKE_CREDENTIAL | CMD_GET_ASSERTION | CMD_CLIENT_PIN => {
                parse_params(body).and_then(|params| match command {
                    CMD_MAKE_CREDENTIAL => self.make_credential(&params, presence),
                    CMD_GET_ASSERTION => self.get_assertion(&params, presence),
                    _ => self.client_pin(&params),
                })
            }
            CMD_GET_INFO if body.is_empty() => Ok(Some(self.get_info())),
            CMD_GET_NEXT_ASSERTION if body.is_empty() => self.get_next_assertion().map(Some),
            CMD_GET_INFO | CMD_GET_NEXT_ASSERTION => Err(Status::InvalidLength),
            _ => Err(Status::InvalidCommand),
        };
        match result {
            Ok(None) => vec![Status::Success.code()],
            Ok(Some(map)) => {
                let mut out = vec![Status::Success.code()];
                out.extend(cbor::encode(&map).expect("responses have unique keys"));
                out
            }
            Err(status) => {
                log::debug!("command 0x{command:02x} failed: {status}");
                vec![status.code()]
            }
        }
    }

    pub fn get_info(&self) -> Value {
        let algorithms = Algorithm::PREFERENCE
            .iter()
            .map(|alg| {
                Value::map([
                    (Value::text("alg"), Value::int(alg.id().0)),
                    (Value::text("type"), Value::text("public-key")),
                ])
            })
            .collect();
        Value::map([
            (Value::int(0x01), Value::Array(vec![Value::text("FIDO_2_0")])),
            (Value::int(0x03), Value::bytes(self.config.aaguid.to_vec())),
            (
                Value::int(0x04),
                Value::map([
                    (Value::text("rk"), Value::Bool(true)),
                    (Value::text("up"), Value::Bool(true)),
                    (
                        Value::text("clientPin"),
                        Value::Bool(self.store.state().pin_hash_left16.is_some()),
                    ),
                ]),
            ),
            (Value::int(0x05), Value::Unsigned(MAX_MSG_SIZE)),
            (Value::int(0x06), Value::Array(vec![Value::Unsigned(1)])),
            (Value::int(0x0A), Value::Array(algorithms)),
        ])
    }

    fn check_pin_protocol(params: &Value, key: i64) -> CtapResult<()> {
        match params.get_int(key) {
            None => Ok(()),
            Some(v) => match v.as_int() {
                Some(1) => Ok(()),
                Some(_) => Err(Status::InvalidParameter),
                None => Err(Status::CborUnexpectedType),
            },
        }
    }

    fn verify_pin_auth(&self, pin_auth: &[u8], client_data_hash: &[u8; 32]) -> CtapResult<()> {
        self.emit(Event::PinAuthChecked);
        let expected = crypto::pin1_authenticate(self.pin.token(), client_data_hash);
        if crypto::ct_eq(&expected, pin_auth) {
            Ok(())
        } else {
            Err(Status::PinAuthInvalid)
        }
    }

    pub fn make_credential(&mut self, params: &Value, presence: &dyn UserPresence) -> CtapResult<Option<Value>> {
        let client_data_hash = client_data_hash(params, 0x01)?;
        let rp = required(params, 0x02)?;
        let rp_id = required(rp, "id")?
            .as_text()
            .ok_or(Status::CborUnexpectedType)?
            .to_owned();
        let user = required(params, 0x03)?;
        let user_handle = required(user, "id")?
            .as_bytes()
            .ok_or(Status::CborUnexpectedType)?
            .to_vec();
        if user_handle.len() > MAX_USER_HANDLE_LEN {
            return Err(Status::InvalidLength);
        }
        let user_name = optional_text(user, "name")?.unwrap_or_default();
        let cred_params = required(params, 0x04)?.as_array().ok_or(Status::CborUnexpectedType)?;
        let exclude_list = credential_list(params, 0x05)?;
        let options = options(params, 0x07)?;
        let pin_auth = optional_bytes(params, 0x08)?;
        Self::check_pin_protocol(params, 0x09)?;

        // First entry of the caller's list that we implement.
        let mut algorithm = None;
        for entry in cred_params {
            let ty = required(entry, "type")?.as_text().ok_or(Status::CborUnexpectedType)?;
            let alg = required(entry, "alg")?.as_int().ok_or(Status::CborUnexpectedType)?;
            if ty == "public-key" {
                if let Ok(a) = AlgorithmId(alg).supported() {
                    algorithm = Some(a);
                    break;
                }
            }
        }
        let algorithm = algorithm.ok_or(Status::UnsupportedAlgorithm)?;

        if options.up.is_some() {
            return Err(Status::InvalidOption);
        }
        if options.uv == Some(true) {
            return Err(Status::UnsupportedOption);
        }
        if self.store.state().pin_hash_left16.is_some() && pin_auth.is_none() {
            return Err(Status::PinRequired);
        }

        let excluded = exclude_list
            .as_ref()
            .is_some_and(|list| !self.store.find_by_rp(&rp_id, Some(list)).is_empty());

        self.request_presence(&rp_id, presence)?;
        if excluded {
            return Err(Status::CredentialExcluded);
        }
        let mut flag_bits = flags::USER_PRESENT;
        if let Some(pin_auth) = &pin_auth {
            self.verify_pin_auth(pin_auth, &client_data_hash)?;
            flag_bits |= flags::USER_VERIFIED;
        }

        let started = Instant::now();
        let keypair = self
            .suite
            .generate_keypair(algorithm.id(), self.rng.as_mut())
            .map_err(|_| Status::Other)?;
        self.emit(Event::KeyGenerated {
            algorithm,
            elapsed: started.elapsed(),
        });

        let mut credential_id = [0u8; 32];
        self.rng.fill_bytes(&mut credential_id);
        let credential = Credential {
            credential_id,
            rp_id: rp_id.clone(),
            user_handle,
            user_name,
            keypair,
            sign_count: 0,
            created_at: self.clock.now_ms(),
        };
        let public_key = credential.keypair.cose_key();
        let keypair = credential.keypair.clone();

        let started = Instant::now();
        self.store.put_credential(credential).map_err(|e| match e {
            StoreError::StorageFull { .. } => Status::KeyStoreFull,
            _ => Status::Other,
        })?;
        self.emit(Event::CredentialStored {
            elapsed: started.elapsed(),
        });

        let auth_data = AuthenticatorData::new(
            crypto::sha256(rp_id.as_bytes()),
            flag_bits,
            0,
            Some(AttestedCredentialData {
                aaguid: self.config.aaguid,
                credential_id: credential_id.to_vec(),
                public_key,
            }),
        )
        .to_bytes();

        let signature = self.sign(&keypair, &auth_data, &client_data_hash)?;
        Ok(Some(Value::map([
            (Value::int(0x01), Value::text("packed")),
            (Value::int(0x02), Value::bytes(auth_data)),
            (
                Value::int(0x03),
                Value::map([
                    (Value::text("alg"), Value::int(algorithm.id().0)),
                    (Value::text("sig"), Value::bytes(signature)),
                ]),
            ),
        ])))
    }

    fn sign(
        &mut self,
        keypair: &crypto::KeyPair,
        auth_data: &[u8],
        client_data_hash: &[u8; 32],
    ) -> CtapResult<Vec<u8>> {
        let message = [auth_data, client_data_hash.as_slice()].concat();
        let started = Instant::now();
        let signature = self
            .suite
            .sign(keypair, &message, self.rng.as_mut())
            .map_err(|_| Status::Other)?;
        self.emit(Event::Signed {
            algorithm: keypair.algorithm,
            elapsed: started.elapsed(),
        });
        Ok(signature)
    }

    pub fn get_assertion(&mut self, params: &Value, presence: &dyn UserPresence) -> CtapResult<Option<Value>> {
        let rp_id = required(params, 0x01)?
            .as_text()
            .ok_or(Status::CborUnexpectedType)?
            .to_owned();
        let client_data_hash = client_data_hash(params, 0x02)?;
        let allow_list = credential_list(params, 0x03)?;
        let options = options(params, 0x05)?;
        let pin_auth = optional_bytes(params, 0x06)?;
        Self::check_pin_protocol(params, 0x07)?;

        if options.rk.is_some() {
            return Err(Status::InvalidOption);
        }
        if options.uv == Some(true) {
            return Err(Status::UnsupportedOption);
        }

        let mut matches = self.store.find_by_rp(&rp_id, allow_list.as_deref());
        if matches.is_empty() {
            return Err(Status::NoCredentials);
        }

        let mut flag_bits = 0;
        if options.up.unwrap_or(true) {
            self.request_presence(&rp_id, presence)?;
            flag_bits |= flags::USER_PRESENT;
        }
        if let Some(pin_auth) = &pin_auth {
            self.verify_pin_auth(pin_auth, &client_data_hash)?;
            flag_bits |= flags::USER_VERIFIED;
        }

        let total = matches.len();
        let first = matches.remove(0);
        let mut response = self.assertion_for(&first, flag_bits, &client_data_hash)?;
        if total > 1 {
            response.push((Value::int(0x05), Value::Unsigned(total as u64)));
            self.session = Some(AssertionSession {
                remaining: matches,
                issued_at_ms: self.clock.now_ms(),
                client_data_hash,
                flags: flag_bits,
            });
        }
        Ok(Some(Value::map(response)))
    }

    pub fn get_next_assertion(&mut self) -> CtapResult<Value> {
        let now = self.clock.now_ms();
        let timeout = self.config.session_timeout.as_millis() as u64;
        let mut session = self.session.take().ok_or(Status::NotAllowed)?;
        if now.saturating_sub(session.issued_at_ms) > timeout || session.remaining.is_empty() {
            return Err(Status::NotAllowed);
        }
        let next = session.remaining.remove(0);
        let response = self.assertion_for(&next, session.flags, &session.client_data_hash)?;
        if !session.remaining.is_empty() {
            session.issued_at_ms = now;
            self.session = Some(session);
        }
        Ok(Value::map(response))
    }

    fn assertion_for(
        &mut self,
        credential: &Credential,
        flag_bits: u8,
        client_data_hash: &[u8; 32],
    ) -> CtapResult<Vec<(Value, Value)>> {
        let sign_count = self
            .store
            .increment_sign_count(&credential.credential_id)
            .map_err(|_| Status::Other)?;
        let auth_data =
            AuthenticatorData::new(crypto::sha256(credential.rp_id.as_bytes()), flag_bits, sign_count, None).to_bytes();
        let signature = self.sign(&credential.keypair, &auth_data, client_data_hash)?;

        let mut user = vec![(Value::text("id"), Value::bytes(credential.user_handle.clone()))];
        if flag_bits & flags::USER_VERIFIED != 0 && !credential.user_name.is_empty() {
            user.push((Value::text("name"), Value::text(credential.user_name.clone())));
        }
        Ok(vec![
            (
                Value::int(0x01),
                Value::map([
                    (Value::text("id"), Value::bytes(credential.credential_id.to_vec())),
                    (Value::text("type"), Value::text("public-key")),
                ]),
            ),
            (Value::int(0x02), Value::bytes(auth_data)),
            (Value::int(0x03), Value::bytes(signature)),
            (Value::int(0x04), Value::map(user)),
        ])
    }
}

fn parse_params(body: &[u8]) -> CtapResult<Value> {
    if body.is_empty() {
        return Err(Status::MissingParameter);
    }
    let value = cbor::decode(body).map_err(|_| Status::InvalidCbor)?;
    if value.as_map().is_none() {
        return Err(Status::CborUnexpectedType);
    }
    Ok(value)
}

trait ParamKey {
    fn lookup<'a>(&self, v: &'a Value) -> Option<&'a Value>;
}

impl ParamKey for i64 {
    fn lookup<'a>(&self, v: &'a Value) -> Option<&'a Value> {
        v.get_int(*self)
    }
}

impl ParamKey for &str {
    fn lookup<'a>(&self, v: &'a Value) -> Option<&'a Value> {
        v.get_text(self)
    }
}

fn required(v: &Value, key: impl ParamKey) -> CtapResult<&Value> {
    if v.as_map().is_none() {
        return Err(Status::CborUnexpectedType);
    }
    key.lookup(v).ok_or(Status::MissingParameter)
}

fn optional_bytes(v: &Value, key: impl ParamKey) -> CtapResult<Option<Vec<u8>>> {
    key.lookup(v)
        .map(|b| b.as_bytes().map(<[u8]>::to_vec).ok_or(Status::CborUnexpectedType))
        .transpose()
}

fn optional_text(v: &Value, key: impl ParamKey) -> CtapResult<Option<String>> {
    key.lookup(v)
        .map(|b| b.as_text().map(str::to_owned).ok_or(Status::CborUnexpectedType))
        .transpose()
}

fn client_data_hash(params: &Value, key: i64) -> CtapResult<[u8; 32]> {
    required(params, key)?
        .as_bytes()
        .ok_or(Status::CborUnexpectedType)?
        .try_into()
        .map_err(|_| Status::InvalidLength)
}

fn credential_list(params: &Value, key: i64) -> CtapResult<Option<Vec<Vec<u8>>>> {
    let Some(list) = params.get_int(key) else {
        return Ok(None);
    };
    let list = list.as_array().ok_or(Status::CborUnexpectedType)?;
    let mut ids = Vec::with_capacity(list.len());
    for entry in list {
        let id = required(entry, "id")?.as_bytes().ok_or(Status::CborUnexpectedType)?;
        let ty = required(entry, "type")?.as_text().ok_or(Status::CborUnexpectedType)?;
        if ty == "public-key" {
            ids.push(id.to_vec());
        }
    }
    Ok(Some(ids))
}

#[derive(Default)]
struct Options {
    rk: Option<bool>,
    up: Option<bool>,
    uv: Option<bool>,
}

fn options(params: &Value, key: i64) -> CtapResult<Options> {
    let Some(map) = params.get_int(key) else {
        return Ok(Options::default());
    };
    let entries = map.as_map().ok_or(Status::CborUnexpectedType)?;
    let mut opts = Options::default();
    for (k, v) in entries {
        let name = k.as_text().ok_or(Status::CborUnexpectedType)?;
        let flag = v.as_bool().ok_or(Status::CborUnexpectedType)?;
        match name {
            "rk" => opts.rk = Some(flag),
            "up" => opts.up = Some(flag),
            "uv" => opts.uv = Some(flag),
            _ => {}
        }
    }
    Ok(opts)
}
