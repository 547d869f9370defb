//! Persistent credential and authenticator-state storage.
//!
//! On disk the store is a single file:
//!
//! ```text
//! "QEYS" | version (1 byte) | canonical CBOR document | SHA-256 over everything before it
//! ```
//!
//! Private keys inside the document are sealed with AES-256-GCM under a
//! device key kept in a sibling file (`<store>.key`). Both files are created
//! owner read/write only and replaced via write-to-temp-then-rename.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use aes_gcm::aead::{Aead, Payload};
use aes_gcm::{Aes256Gcm, KeyInit, Nonce};
use rand::RngCore;
use thiserror::Error;
use zeroize::Zeroizing;

use crate::cbor::{self, Value};
use crate::cose::{Algorithm, AlgorithmId};
use crate::crypto::{sha256, KeyPair, SecretBytes};

pub const MAGIC: &[u8; 4] = b"QEYS";
pub const FORMAT_VERSION: u8 = 1;
pub const DEFAULT_CAPACITY: usize = 64;
pub const MAX_PIN_RETRIES: u8 = 8;
pub const MAX_USER_HANDLE_LEN: usize = 64;

const NONCE_LEN: usize = 12;

pub type CredentialId = [u8; 32];

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("credential storage is full ({capacity} credentials)")]
    StorageFull { capacity: usize },
    #[error("unknown credential")]
    UnknownCredential,
    #[error("invalid credential: {0}")]
    InvalidCredential(&'static str),
    #[error("store I/O failure: {0}")]
    IoFailure(#[from] io::Error),
    #[error("corrupt store: {0}")]
    CorruptStore(&'static str),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Credential {
    pub credential_id: CredentialId,
    pub rp_id: String,
    pub user_handle: Vec<u8>,
    pub user_name: String,
    pub keypair: KeyPair,
    pub sign_count: u32,
    /// Milliseconds since the Unix epoch.
    pub created_at: u64,
}

impl Credential {
    pub fn algorithm(&self) -> Algorithm {
        self.keypair.algorithm
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuthenticatorState {
    pub aaguid: [u8; 16],
    pub pin_hash_left16: Option<[u8; 16]>,
    pub pin_retries: u8,
    /// Oldest first.
    pub credentials: Vec<Credential>,
}

impl AuthenticatorState {
    pub fn new(aaguid: [u8; 16]) -> Self {
        AuthenticatorState {
            aaguid,
            pin_hash_left16: None,
            pin_retries: MAX_PIN_RETRIES,
            credentials: Vec::new(),
        }
    }
}

/// Credential store with optional file backing.
///
/// Mutations persist immediately when the store is file-backed. The store
/// has a single owner (the authenticator command loop); readers take a
/// cloned [`AuthenticatorState`] via [`CredentialStore::snapshot`].
#[derive(Debug)]
pub struct CredentialStore {
    state: AuthenticatorState,
    capacity: usize,
    backing: Option<Backing>,
}

#[derive(Debug)]
struct Backing {
    path: PathBuf,
    device_key: Zeroizing<[u8; 32]>,
}

impl CredentialStore {
    pub fn in_memory(aaguid: [u8; 16]) -> Self {
        CredentialStore {
            state: AuthenticatorState::new(aaguid),
            capacity: DEFAULT_CAPACITY,
            backing: None,
        }
    }

    pub fn with_capacity(mut self, capacity: usize) -> Self {
        self.capacity = capacity;
        self
    }

    /// Opens the store at `path`, creating an empty one (and its device key) if absent.
    pub fn open_or_create(path: impl AsRef<Path>, aaguid: [u8; 16]) -> Result<Self, StoreError> {
        let path = path.as_ref();
        if path.exists() {
            return Self::load(path);
        }
        let device_key = load_or_create_device_key(&key_path(path))?;
        let store = CredentialStore {
            state: AuthenticatorState::new(aaguid),
            capacity: DEFAULT_CAPACITY,
            backing: Some(Backing {
                path: path.to_owned(),
                device_key,
            }),
        };
        store.persist()?;
        Ok(store)
    }

    /// Loads a file-backed store. The device key must already exist.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let path = path.as_ref();
        let device_key = read_device_key(&key_path(path))?;
        let bytes = fs::read(path)?;
        let state = decode_state(&bytes, &device_key)?;
        Ok(CredentialStore {
            state,
            capacity: DEFAULT_CAPACITY,
            backing: Some(Backing {
                path: path.to_owned(),
                device_key,
            }),
        })
    }

    /// Writes the current state to `path`, creating a device key beside it
    /// if needed, and makes `path` the backing file.
    pub fn save(&mut self, path: impl AsRef<Path>) -> Result<(), StoreError> {
        let path = path.as_ref();
        let device_key = load_or_create_device_key(&key_path(path))?;
        self.backing = Some(Backing {
            path: path.to_owned(),
            device_key,
        });
        self.persist()
    }

    pub fn path(&self) -> Option<&Path> {
        self.backing.as_ref().map(|b| b.path.as_path())
    }

    fn persist(&self) -> Result<(), StoreError> {
        let Some(backing) = &self.backing else {
            return Ok(());
        };
        let bytes = encode_state(&self.state, &backing.device_key)?;
        write_atomic(&backing.path, &bytes)
    }

    pub fn state(&self) -> &AuthenticatorState {
        &self.state
    }

    pub fn snapshot(&self) -> AuthenticatorState {
        self.state.clone()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.state.credentials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.state.credentials.is_empty()
    }

    /// Stores a resident credential, replacing any existing one with the
    /// same relying party and user handle.
    pub fn put_credential(&mut self, credential: Credential) -> Result<CredentialId, StoreError> {
        if credential.user_handle.len() > MAX_USER_HANDLE_LEN {
            return Err(StoreError::InvalidCredential("user handle longer than 64 bytes"));
        }
        if self.get(&credential.credential_id).is_some() {
            return Err(StoreError::InvalidCredential("duplicate credential id"));
        }
        let creds = &mut self.state.credentials;
        let replaced = creds
            .iter()
            .position(|c| c.rp_id == credential.rp_id && c.user_handle == credential.user_handle);
        if replaced.is_none() && creds.len() >= self.capacity {
            return Err(StoreError::StorageFull {
                capacity: self.capacity,
            });
        }
        let previous = replaced.map(|i| creds.remove(i));
        let id = credential.credential_id;
        creds.push(credential);
        if let Err(e) = self.persist() {
            let creds = &mut self.state.credentials;
            creds.pop();
            if let (Some(i), Some(prev)) = (replaced, previous) {
                creds.insert(i, prev);
            }
            return Err(e);
        }
        Ok(id)
    }

    pub fn get(&self, id: &[u8]) -> Option<&Credential> {
        self.state.credentials.iter().find(|c| c.credential_id[..] == *id)
    }

    /// Credentials for `rp_id`, newest first, optionally restricted to `allow_list`.
    pub fn find_by_rp(&self, rp_id: &str, allow_list: Option<&[Vec<u8>]>) -> Vec<Credential> {
        self.state
            .credentials
            .iter()
            .rev()
            .filter(|c| c.rp_id == rp_id)
            .filter(|c| allow_list.is_none_or(|list| list.iter().any(|id| id[..] == c.credential_id)))
            .cloned()
            .collect()
    }

    /// Increments and persists the signature counter, returning the new value.
    pub fn increment_sign_count(&mut self, id: &[u8]) -> Result<u32, StoreError> {
        let cred = self
            .state
            .credentials
            .iter_mut()
            .find(|c| c.credential_id[..] == *id)
            .ok_or(StoreError::UnknownCredential)?;
        cred.sign_count = cred.sign_count.saturating_add(1);
        let count = cred.sign_count;
        self.persist()?;
        Ok(count)
    }

    pub fn set_pin_hash(&mut self, hash: [u8; 16]) -> Result<(), StoreError> {
        self.state.pin_hash_left16 = Some(hash);
        self.state.pin_retries = MAX_PIN_RETRIES;
        self.persist()
    }

    pub fn set_pin_retries(&mut self, retries: u8) -> Result<(), StoreError> {
        self.state.pin_retries = retries.min(MAX_PIN_RETRIES);
        self.persist()
    }

    /// Replaces the whole state (used by reset).
    pub fn replace_state(&mut self, state: AuthenticatorState) -> Result<(), StoreError> {
        self.state = state;
        self.persist()
    }
}

pub fn key_path(store_path: &Path) -> PathBuf {
    let mut name = store_path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".key");
    store_path.with_file_name(name)
}

fn read_device_key(path: &Path) -> Result<Zeroizing<[u8; 32]>, StoreError> {
    let raw = Zeroizing::new(fs::read(path)?);
    let key: [u8; 32] = raw
        .as_slice()
        .try_into()
        .map_err(|_| StoreError::CorruptStore("device key file has wrong length"))?;
    Ok(Zeroizing::new(key))
}

fn load_or_create_device_key(path: &Path) -> Result<Zeroizing<[u8; 32]>, StoreError> {
    if path.exists() {
        return read_device_key(path);
    }
    let mut key = Zeroizing::new([0u8; 32]);
    rand::rngs::OsRng.fill_bytes(key.as_mut());
    write_atomic(path, key.as_ref())?;
    Ok(key)
}

fn owner_only(options: &mut OpenOptions) -> &mut OpenOptions {
    #[cfg(unix)]
    {
        use std::os::unix::fs::OpenOptionsExt;
        options.mode(0o600);
    }
    options
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let file_name = path
        .file_name()
        .ok_or_else(|| io::Error::other("store path has no file name"))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(format!(".tmp-{}-{:08x}", std::process::id(), rand::random::<u32>()));
    let tmp = dir.join(tmp_name);

    let result = (|| {
        let mut file: File = owner_only(OpenOptions::new().write(true).create_new(true)).open(&tmp)?;
        file.write_all(bytes)?;
        file.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}

// CBOR labels for the on-disk document.
mod label {
    pub const AAGUID: i64 = 1;
    pub const PIN_HASH: i64 = 2;
    pub const PIN_RETRIES: i64 = 3;
    pub const CREDENTIALS: i64 = 4;

    pub const ID: i64 = 1;
    pub const RP_ID: i64 = 2;
    pub const USER_HANDLE: i64 = 3;
    pub const USER_NAME: i64 = 4;
    pub const ALG: i64 = 5;
    pub const PUBLIC: i64 = 6;
    pub const SEALED_PRIVATE: i64 = 7;
    pub const SIGN_COUNT: i64 = 8;
    pub const CREATED_AT: i64 = 9;
}

fn seal(device_key: &[u8; 32], id: &[u8], private: &[u8]) -> Result<Vec<u8>, StoreError> {
    let cipher = Aes256Gcm::new(device_key.into());
    let mut nonce = [0u8; NONCE_LEN];
    rand::rngs::OsRng.fill_bytes(&mut nonce);
    let ct = cipher
        .encrypt(Nonce::from_slice(&nonce), Payload { msg: private, aad: id })
        .map_err(|_| io::Error::other("sealing private key failed"))?;
    Ok([nonce.as_slice(), &ct].concat())
}

fn unseal(device_key: &[u8; 32], id: &[u8], sealed: &[u8]) -> Result<SecretBytes, StoreError> {
    if sealed.len() < NONCE_LEN {
        return Err(StoreError::CorruptStore("sealed key too short"));
    }
    let cipher = Aes256Gcm::new(device_key.into());
    let (nonce, ct) = sealed.split_at(NONCE_LEN);
    cipher
        .decrypt(Nonce::from_slice(nonce), Payload { msg: ct, aad: id })
        .map(SecretBytes::new)
        .map_err(|_| StoreError::CorruptStore("private key failed authentication"))
}

fn encode_state(state: &AuthenticatorState, device_key: &[u8; 32]) -> Result<Vec<u8>, StoreError> {
    let mut creds = Vec::with_capacity(state.credentials.len());
    for c in &state.credentials {
        creds.push(Value::map([
            (Value::int(label::ID), Value::bytes(c.credential_id.to_vec())),
            (Value::int(label::RP_ID), Value::text(c.rp_id.clone())),
            (Value::int(label::USER_HANDLE), Value::bytes(c.user_handle.clone())),
            (Value::int(label::USER_NAME), Value::text(c.user_name.clone())),
            (Value::int(label::ALG), Value::int(c.algorithm().id().0)),
            (Value::int(label::PUBLIC), Value::bytes(c.keypair.public_key().to_vec())),
            (
                Value::int(label::SEALED_PRIVATE),
                Value::bytes(seal(device_key, &c.credential_id, c.keypair.private_key().expose())?),
            ),
            (Value::int(label::SIGN_COUNT), Value::Unsigned(c.sign_count as u64)),
            (Value::int(label::CREATED_AT), Value::Unsigned(c.created_at)),
        ]));
    }
    let mut doc = vec![
        (Value::int(label::AAGUID), Value::bytes(state.aaguid.to_vec())),
        (
            Value::int(label::PIN_RETRIES),
            Value::Unsigned(state.pin_retries as u64),
        ),
        (Value::int(label::CREDENTIALS), Value::Array(creds)),
    ];
    if let Some(hash) = state.pin_hash_left16 {
        doc.push((Value::int(label::PIN_HASH), Value::bytes(hash.to_vec())));
    }
    let body = cbor::encode(&Value::map(doc)).expect("store document has unique keys");

    let mut out = Vec::with_capacity(5 + body.len() + 32);
    out.extend_from_slice(MAGIC);
    out.push(FORMAT_VERSION);
    out.extend_from_slice(&body);
    let digest = sha256(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

fn corrupt(what: &'static str) -> StoreError {
    StoreError::CorruptStore(what)
}

fn decode_state(bytes: &[u8], device_key: &[u8; 32]) -> Result<AuthenticatorState, StoreError> {
    if bytes.len() < MAGIC.len() + 1 + 32 {
        return Err(corrupt("file too short"));
    }
    let (content, trailer) = bytes.split_at(bytes.len() - 32);
    if sha256(content) != trailer {
        return Err(corrupt("integrity check failed"));
    }
    if &content[..4] != MAGIC {
        return Err(corrupt("bad magic"));
    }
    if content[4] != FORMAT_VERSION {
        return Err(corrupt("unsupported format version"));
    }
    let doc = cbor::decode(&content[5..]).map_err(|_| corrupt("document is not canonical CBOR"))?;

    let aaguid: [u8; 16] = doc
        .get_int(label::AAGUID)
        .and_then(Value::as_bytes)
        .and_then(|b| b.try_into().ok())
        .ok_or(corrupt("aaguid"))?;
    let pin_hash_left16 = match doc.get_int(label::PIN_HASH) {
        None => None,
        Some(v) => Some(
            v.as_bytes()
                .and_then(|b| b.try_into().ok())
                .ok_or(corrupt("pin hash"))?,
        ),
    };
    let pin_retries = doc
        .get_int(label::PIN_RETRIES)
        .and_then(Value::as_int)
        .filter(|r| (0..=MAX_PIN_RETRIES as i64).contains(r))
        .ok_or(corrupt("pin retries"))? as u8;
    let list = doc
        .get_int(label::CREDENTIALS)
        .and_then(Value::as_array)
        .ok_or(corrupt("credential list"))?;

    let mut credentials = Vec::with_capacity(list.len());
    for entry in list {
        credentials.push(decode_credential(entry, device_key)?);
    }
    Ok(AuthenticatorState {
        aaguid,
        pin_hash_left16,
        pin_retries,
        credentials,
    })
}

fn decode_credential(v: &Value, device_key: &[u8; 32]) -> Result<Credential, StoreError> {
    let bytes = |l, what| v.get_int(l).and_then(Value::as_bytes).ok_or(corrupt(what));
    let text = |l, what| v.get_int(l).and_then(Value::as_text).ok_or(corrupt(what));
    let uint = |l, what| match v.get_int(l) {
        Some(Value::Unsigned(u)) => Ok(*u),
        _ => Err(corrupt(what)),
    };

    let credential_id: CredentialId = bytes(label::ID, "credential id")?
        .try_into()
        .map_err(|_| corrupt("credential id"))?;
    let alg = v
        .get_int(label::ALG)
        .and_then(Value::as_int)
        .and_then(|a| AlgorithmId(a).supported().ok())
        .ok_or(corrupt("credential algorithm"))?;
    let private = unseal(device_key, &credential_id, bytes(label::SEALED_PRIVATE, "sealed key")?)?;
    let keypair = KeyPair::from_parts(alg, private, bytes(label::PUBLIC, "public key")?.to_vec())
        .map_err(|_| corrupt("key lengths"))?;
    Ok(Credential {
        credential_id,
        rp_id: text(label::RP_ID, "rp id")?.to_owned(),
        user_handle: bytes(label::USER_HANDLE, "user handle")?.to_vec(),
        user_name: text(label::USER_NAME, "user name")?.to_owned(),
        keypair,
        sign_count: u32::try_from(uint(label::SIGN_COUNT, "sign count")?).map_err(|_| corrupt("sign count"))?,
        created_at: uint(label::CREATED_AT, "created at")?,
    })
}
