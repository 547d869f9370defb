//! Platform side of CTAP2: request encoding, response decoding, the PIN
//! protocol 1 client and a minimal WebAuthn client that stands in for a browser.

use rand_core::CryptoRngCore;
use thiserror::Error;

use crate::authenticator::status::Status;
use crate::authenticator::{
    Authenticator, UserPresence, CMD_CLIENT_PIN, CMD_GET_ASSERTION, CMD_GET_INFO, CMD_GET_NEXT_ASSERTION,
    CMD_MAKE_CREDENTIAL,
};
use crate::cbor::{self, Value};
use crate::cose::{self, AlgorithmId, CoseKey};
use crate::crypto::{self, KeyPair, SharedSecret};
use crate::ctaphid::HidError;
use crate::webauthn::{
    AssertionResponse, AttestationResponse, AuthenticationCredential, CollectedClientData, CreationOptions,
    PublicKeyCredential, RegistrationCredential, RequestOptions, UserVerification, PUBLIC_KEY, TYPE_CREATE, TYPE_GET,
};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("authenticator returned status 0x{0:02X}{}", Status::from_code(*.0).map(|s| format!(" ({s:?})")).unwrap_or_default())]
    Ctap(u8),
    #[error("transport: {0}")]
    Transport(#[from] HidError),
    #[error("malformed authenticator response: {0}")]
    Malformed(&'static str),
    #[error("rp id {rp_id:?} is not valid for origin {origin:?}")]
    RpIdNotAllowed { rp_id: String, origin: String },
    #[error("no supported algorithm in pubKeyCredParams")]
    NoSupportedAlgorithm,
    #[error("user verification required but no PIN token is available")]
    UserVerificationUnavailable,
}

impl ClientError {
    /// The CTAP status, if the authenticator rejected the request.
    pub fn status(&self) -> Option<u8> {
        match self {
            ClientError::Ctap(code) => Some(*code),
            _ => None,
        }
    }
}

pub type ClientResult<T> = Result<T, ClientError>;

/// Anything that carries an encoded CTAP2 request to an authenticator and
/// returns the encoded response (status byte first).
pub trait CtapTransport {
    fn exchange(&mut self, request: &[u8]) -> ClientResult<Vec<u8>>;
}

impl<T: CtapTransport + ?Sized> CtapTransport for &mut T {
    fn exchange(&mut self, request: &[u8]) -> ClientResult<Vec<u8>> {
        (**self).exchange(request)
    }
}

/// Calls the authenticator in-process, without framing.
pub struct Direct<'a> {
    pub authenticator: &'a mut Authenticator,
    pub presence: &'a dyn UserPresence,
}

impl CtapTransport for Direct<'_> {
    fn exchange(&mut self, request: &[u8]) -> ClientResult<Vec<u8>> {
        Ok(self.authenticator.handle_command(request, self.presence))
    }
}

pub fn encode_request(command: u8, params: Option<&Value>) -> Vec<u8> {
    let mut out = vec![command];
    if let Some(p) = params {
        out.extend(cbor::encode(p).expect("requests have unique keys"));
    }
    out
}

/// Splits a response into its CBOR body, mapping non-zero status to an error.
pub fn decode_response(response: &[u8]) -> ClientResult<Option<Value>> {
    let (&status, body) = response.split_first().ok_or(ClientError::Malformed("empty response"))?;
    if status != Status::Success.code() {
        return Err(ClientError::Ctap(status));
    }
    if body.is_empty() {
        return Ok(None);
    }
    cbor::decode(body)
        .map(Some)
        .map_err(|_| ClientError::Malformed("response body is not canonical CBOR"))
}

pub fn call(transport: &mut dyn CtapTransport, command: u8, params: Option<&Value>) -> ClientResult<Option<Value>> {
    decode_response(&transport.exchange(&encode_request(command, params))?)
}

fn call_map(transport: &mut dyn CtapTransport, command: u8, params: Option<&Value>) -> ClientResult<Value> {
    call(transport, command, params)?.ok_or(ClientError::Malformed("missing response map"))
}

fn field(map: &Value, key: i64) -> ClientResult<&Value> {
    map.get_int(key).ok_or(ClientError::Malformed("missing response field"))
}

fn bytes_field(map: &Value, key: i64) -> ClientResult<Vec<u8>> {
    field(map, key)?
        .as_bytes()
        .map(<[u8]>::to_vec)
        .ok_or(ClientError::Malformed("expected byte string"))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GetInfoResponse {
    pub versions: Vec<String>,
    pub aaguid: [u8; 16],
    pub options: Vec<(String, bool)>,
    pub max_msg_size: Option<u64>,
    pub pin_protocols: Vec<u64>,
    pub algorithms: Vec<AlgorithmId>,
}

impl GetInfoResponse {
    pub fn option(&self, name: &str) -> Option<bool> {
        self.options.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    pub fn parse(map: &Value) -> ClientResult<Self> {
        let malformed = || ClientError::Malformed("getInfo");
        let versions = field(map, 0x01)?
            .as_array()
            .ok_or_else(malformed)?
            .iter()
            .map(|v| v.as_text().map(str::to_owned).ok_or_else(malformed))
            .collect::<ClientResult<_>>()?;
        let aaguid = bytes_field(map, 0x03)?.try_into().map_err(|_| malformed())?;
        let options = match map.get_int(0x04) {
            Some(o) => o
                .as_map()
                .ok_or_else(malformed)?
                .iter()
                .map(|(k, v)| Some((k.as_text()?.to_owned(), v.as_bool()?)))
                .collect::<Option<_>>()
                .ok_or_else(malformed)?,
            None => Vec::new(),
        };
        let uint = |v: &Value| match v {
            Value::Unsigned(n) => Some(*n),
            _ => None,
        };
        let max_msg_size = map.get_int(0x05).map(|v| uint(v).ok_or_else(malformed)).transpose()?;
        let pin_protocols = match map.get_int(0x06) {
            Some(p) => p
                .as_array()
                .ok_or_else(malformed)?
                .iter()
                .map(|v| uint(v).ok_or_else(malformed))
                .collect::<ClientResult<_>>()?,
            None => Vec::new(),
        };
        let algorithms = match map.get_int(0x0A) {
            Some(a) => a
                .as_array()
                .ok_or_else(malformed)?
                .iter()
                .map(|entry| {
                    entry
                        .get_text("alg")
                        .and_then(Value::as_int)
                        .map(AlgorithmId)
                        .ok_or_else(malformed)
                })
                .collect::<ClientResult<_>>()?,
            None => Vec::new(),
        };
        Ok(GetInfoResponse {
            versions,
            aaguid,
            options,
            max_msg_size,
            pin_protocols,
            algorithms,
        })
    }
}

pub fn get_info(transport: &mut dyn CtapTransport) -> ClientResult<GetInfoResponse> {
    GetInfoResponse::parse(&call_map(transport, CMD_GET_INFO, None)?)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MakeCredentialRequest {
    pub client_data_hash: [u8; 32],
    pub rp_id: String,
    pub rp_name: Option<String>,
    pub user_id: Vec<u8>,
    pub user_name: Option<String>,
    pub algorithms: Vec<AlgorithmId>,
    pub exclude_list: Vec<Vec<u8>>,
    pub pin_auth: Option<[u8; 16]>,
}

impl MakeCredentialRequest {
    pub fn new(client_data_hash: [u8; 32], rp_id: &str, user_id: &[u8], algorithms: &[AlgorithmId]) -> Self {
        MakeCredentialRequest {
            client_data_hash,
            rp_id: rp_id.into(),
            rp_name: None,
            user_id: user_id.into(),
            user_name: None,
            algorithms: algorithms.to_vec(),
            exclude_list: Vec::new(),
            pin_auth: None,
        }
    }

    pub fn to_value(&self) -> Value {
        let mut rp = vec![(Value::text("id"), Value::text(self.rp_id.clone()))];
        if let Some(name) = &self.rp_name {
            rp.push((Value::text("name"), Value::text(name.clone())));
        }
        let mut user = vec![(Value::text("id"), Value::bytes(self.user_id.clone()))];
        if let Some(name) = &self.user_name {
            user.push((Value::text("name"), Value::text(name.clone())));
        }
        let params = self
            .algorithms
            .iter()
            .map(|alg| {
                Value::map([
                    (Value::text("alg"), Value::int(alg.0)),
                    (Value::text("type"), Value::text(PUBLIC_KEY)),
                ])
            })
            .collect();
        let mut entries = vec![
            (Value::int(0x01), Value::bytes(self.client_data_hash.to_vec())),
            (Value::int(0x02), Value::map(rp)),
            (Value::int(0x03), Value::map(user)),
            (Value::int(0x04), Value::Array(params)),
        ];
        if !self.exclude_list.is_empty() {
            entries.push((Value::int(0x05), descriptor_list(&self.exclude_list)));
        }
        if let Some(pin_auth) = &self.pin_auth {
            entries.push((Value::int(0x08), Value::bytes(pin_auth.to_vec())));
            entries.push((Value::int(0x09), Value::Unsigned(1)));
        }
        Value::map(entries)
    }

    pub fn encode(&self) -> Vec<u8> {
        encode_request(CMD_MAKE_CREDENTIAL, Some(&self.to_value()))
    }
}

fn descriptor_list(ids: &[Vec<u8>]) -> Value {
    Value::Array(
        ids.iter()
            .map(|id| {
                Value::map([
                    (Value::text("id"), Value::bytes(id.clone())),
                    (Value::text("type"), Value::text(PUBLIC_KEY)),
                ])
            })
            .collect(),
    )
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MakeCredentialResponse {
    pub fmt: String,
    pub auth_data: Vec<u8>,
    pub att_stmt: Value,
}

impl MakeCredentialResponse {
    pub fn parse(map: &Value) -> ClientResult<Self> {
        let fmt = field(map, 0x01)?
            .as_text()
            .ok_or(ClientError::Malformed("fmt"))?
            .to_owned();
        let att_stmt = field(map, 0x03)?.clone();
        if att_stmt.as_map().is_none() {
            return Err(ClientError::Malformed("attStmt"));
        }
        Ok(MakeCredentialResponse {
            fmt,
            auth_data: bytes_field(map, 0x02)?,
            att_stmt,
        })
    }

    /// The WebAuthn attestation object: the same three members keyed by name.
    pub fn attestation_object(&self) -> Vec<u8> {
        cbor::encode(&Value::map([
            (Value::text("fmt"), Value::text(self.fmt.clone())),
            (Value::text("attStmt"), self.att_stmt.clone()),
            (Value::text("authData"), Value::bytes(self.auth_data.clone())),
        ]))
        .expect("attestation object keys are unique")
    }

    pub fn signature(&self) -> Option<&[u8]> {
        self.att_stmt.get_text("sig").and_then(Value::as_bytes)
    }

    pub fn algorithm(&self) -> Option<AlgorithmId> {
        self.att_stmt.get_text("alg").and_then(Value::as_int).map(AlgorithmId)
    }
}

pub fn make_credential(
    transport: &mut dyn CtapTransport,
    request: &MakeCredentialRequest,
) -> ClientResult<MakeCredentialResponse> {
    MakeCredentialResponse::parse(&call_map(transport, CMD_MAKE_CREDENTIAL, Some(&request.to_value()))?)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GetAssertionRequest {
    pub rp_id: String,
    pub client_data_hash: [u8; 32],
    pub allow_list: Vec<Vec<u8>>,
    pub user_presence: Option<bool>,
    pub pin_auth: Option<[u8; 16]>,
}

impl GetAssertionRequest {
    pub fn new(rp_id: &str, client_data_hash: [u8; 32]) -> Self {
        GetAssertionRequest {
            rp_id: rp_id.into(),
            client_data_hash,
            allow_list: Vec::new(),
            user_presence: None,
            pin_auth: None,
        }
    }

    pub fn to_value(&self) -> Value {
        let mut entries = vec![
            (Value::int(0x01), Value::text(self.rp_id.clone())),
            (Value::int(0x02), Value::bytes(self.client_data_hash.to_vec())),
        ];
        if !self.allow_list.is_empty() {
            entries.push((Value::int(0x03), descriptor_list(&self.allow_list)));
        }
        if let Some(up) = self.user_presence {
            entries.push((Value::int(0x05), Value::map([(Value::text("up"), Value::Bool(up))])));
        }
        if let Some(pin_auth) = &self.pin_auth {
            entries.push((Value::int(0x06), Value::bytes(pin_auth.to_vec())));
            entries.push((Value::int(0x07), Value::Unsigned(1)));
        }
        Value::map(entries)
    }

    pub fn encode(&self) -> Vec<u8> {
        encode_request(CMD_GET_ASSERTION, Some(&self.to_value()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GetAssertionResponse {
    pub credential_id: Vec<u8>,
    pub auth_data: Vec<u8>,
    pub signature: Vec<u8>,
    pub user_handle: Option<Vec<u8>>,
    pub user_name: Option<String>,
    pub number_of_credentials: Option<u64>,
}

impl GetAssertionResponse {
    pub fn parse(map: &Value) -> ClientResult<Self> {
        let credential_id = field(map, 0x01)?
            .get_text("id")
            .and_then(Value::as_bytes)
            .ok_or(ClientError::Malformed("credential descriptor"))?
            .to_vec();
        let user = map.get_int(0x04);
        Ok(GetAssertionResponse {
            credential_id,
            auth_data: bytes_field(map, 0x02)?,
            signature: bytes_field(map, 0x03)?,
            user_handle: user
                .and_then(|u| u.get_text("id"))
                .and_then(Value::as_bytes)
                .map(<[u8]>::to_vec),
            user_name: user
                .and_then(|u| u.get_text("name"))
                .and_then(Value::as_text)
                .map(str::to_owned),
            number_of_credentials: match map.get_int(0x05) {
                Some(Value::Unsigned(n)) => Some(*n),
                Some(_) => return Err(ClientError::Malformed("numberOfCredentials")),
                None => None,
            },
        })
    }
}

pub fn get_assertion(
    transport: &mut dyn CtapTransport,
    request: &GetAssertionRequest,
) -> ClientResult<GetAssertionResponse> {
    GetAssertionResponse::parse(&call_map(transport, CMD_GET_ASSERTION, Some(&request.to_value()))?)
}

pub fn get_next_assertion(transport: &mut dyn CtapTransport) -> ClientResult<GetAssertionResponse> {
    GetAssertionResponse::parse(&call_map(transport, CMD_GET_NEXT_ASSERTION, None)?)
}

/// The platform half of PIN protocol 1: an ephemeral P-256 key agreed with
/// the authenticator's current key-agreement key.
pub struct PinSession {
    platform_key: KeyPair,
    shared: SharedSecret,
}

impl PinSession {
    pub fn establish(transport: &mut dyn CtapTransport, rng: &mut dyn CryptoRngCore) -> ClientResult<Self> {
        let response = call_map(transport, CMD_CLIENT_PIN, Some(&pin_request(0x02, [])))?;
        let (x, y) = cose::decode_key_agreement_key(field(&response, 0x01)?)
            .map_err(|_| ClientError::Malformed("key agreement key"))?;
        let platform_key = crypto::generate_keypair(AlgorithmId::ES256, rng).expect("P-256 key generation");
        let shared = crypto::pin1_key_agreement(&CoseKey::es256(x, y), &platform_key)
            .map_err(|_| ClientError::Malformed("key agreement key is not on P-256"))?;
        Ok(PinSession { platform_key, shared })
    }

    pub fn shared_secret(&self) -> &SharedSecret {
        &self.shared
    }

    fn key_agreement(&self) -> Value {
        let pk = self.platform_key.public_key();
        cose::encode_key_agreement_key(pk[..32].try_into().unwrap(), pk[32..].try_into().unwrap())
    }

    fn new_pin_enc(&self, pin: &str) -> Vec<u8> {
        let mut padded = zeroize::Zeroizing::new(pin.as_bytes().to_vec());
        padded.resize(pin.len().max(1).next_multiple_of(16).max(64), 0);
        crypto::pin1_encrypt(&self.shared, &padded).expect("padded to block size")
    }

    fn pin_hash_enc(&self, pin: &str) -> Vec<u8> {
        crypto::pin1_encrypt(&self.shared, &crypto::sha256(pin.as_bytes())[..16]).expect("one block")
    }

    pub fn set_pin_request(&self, pin: &str) -> Value {
        let new_pin_enc = self.new_pin_enc(pin);
        let pin_auth = crypto::pin1_authenticate(self.shared.as_bytes(), &new_pin_enc);
        pin_request(
            0x03,
            [
                (0x03, self.key_agreement()),
                (0x04, Value::bytes(pin_auth.to_vec())),
                (0x05, Value::bytes(new_pin_enc)),
            ],
        )
    }

    pub fn change_pin_request(&self, current: &str, new: &str) -> Value {
        let new_pin_enc = self.new_pin_enc(new);
        let pin_hash_enc = self.pin_hash_enc(current);
        let pin_auth = crypto::pin1_authenticate(
            self.shared.as_bytes(),
            &[new_pin_enc.as_slice(), &pin_hash_enc].concat(),
        );
        pin_request(
            0x04,
            [
                (0x03, self.key_agreement()),
                (0x04, Value::bytes(pin_auth.to_vec())),
                (0x05, Value::bytes(new_pin_enc)),
                (0x06, Value::bytes(pin_hash_enc)),
            ],
        )
    }

    pub fn get_pin_token_request(&self, pin: &str) -> Value {
        pin_request(
            0x05,
            [
                (0x03, self.key_agreement()),
                (0x06, Value::bytes(self.pin_hash_enc(pin))),
            ],
        )
    }

    pub fn decrypt_token(&self, response: &Value) -> ClientResult<[u8; 16]> {
        let enc = bytes_field(response, 0x02)?;
        crypto::pin1_decrypt(&self.shared, &enc)
            .ok()
            .and_then(|t| t.try_into().ok())
            .ok_or(ClientError::Malformed("pinToken"))
    }
}

fn pin_request<const N: usize>(sub_command: i64, extra: [(i64, Value); N]) -> Value {
    Value::map(
        [
            (Value::int(0x01), Value::Unsigned(1)),
            (Value::int(0x02), Value::int(sub_command)),
        ]
        .into_iter()
        .chain(extra.into_iter().map(|(k, v)| (Value::int(k), v))),
    )
}

pub fn get_pin_retries(transport: &mut dyn CtapTransport) -> ClientResult<u64> {
    match call_map(transport, CMD_CLIENT_PIN, Some(&pin_request(0x01, [])))?.get_int(0x03) {
        Some(Value::Unsigned(n)) => Ok(*n),
        _ => Err(ClientError::Malformed("retries")),
    }
}

pub fn set_pin(transport: &mut dyn CtapTransport, rng: &mut dyn CryptoRngCore, pin: &str) -> ClientResult<()> {
    let session = PinSession::establish(transport, rng)?;
    call(transport, CMD_CLIENT_PIN, Some(&session.set_pin_request(pin))).map(drop)
}

pub fn change_pin(
    transport: &mut dyn CtapTransport,
    rng: &mut dyn CryptoRngCore,
    current: &str,
    new: &str,
) -> ClientResult<()> {
    let session = PinSession::establish(transport, rng)?;
    call(
        transport,
        CMD_CLIENT_PIN,
        Some(&session.change_pin_request(current, new)),
    )
    .map(drop)
}

pub fn get_pin_token(
    transport: &mut dyn CtapTransport,
    rng: &mut dyn CryptoRngCore,
    pin: &str,
) -> ClientResult<[u8; 16]> {
    let session = PinSession::establish(transport, rng)?;
    let response = call_map(transport, CMD_CLIENT_PIN, Some(&session.get_pin_token_request(pin)))?;
    session.decrypt_token(&response)
}

/// `pinAuth` for makeCredential and getAssertion.
pub fn pin_auth(token: &[u8; 16], client_data_hash: &[u8; 32]) -> [u8; 16] {
    crypto::pin1_authenticate(token, client_data_hash)
}

/// Whether a page at `origin` may use `rp_id`: the origin's host must equal
/// the RP ID or be a subdomain of it, over https (or http on localhost).
pub fn rp_id_allowed(rp_id: &str, origin: &str) -> bool {
    let (scheme, rest) = match origin.split_once("://") {
        Some(parts) => parts,
        None => return false,
    };
    let authority = rest.split('/').next().unwrap_or_default();
    let host = authority.rsplit_once(':').map_or(authority, |(h, port)| {
        if port.chars().all(|c| c.is_ascii_digit()) {
            h
        } else {
            authority
        }
    });
    let scheme_ok = scheme == "https" || (scheme == "http" && host == "localhost");
    scheme_ok && !rp_id.is_empty() && (host == rp_id || host.strip_suffix(rp_id).is_some_and(|p| p.ends_with('.')))
}

/// Drives WebAuthn ceremonies against an authenticator the way a browser
/// would for a page at `origin`.
pub struct WebAuthnClient<T> {
    transport: T,
    origin: String,
    pin_token: Option<[u8; 16]>,
}

impl<T: CtapTransport> WebAuthnClient<T> {
    pub fn new(transport: T, origin: impl Into<String>) -> Self {
        WebAuthnClient {
            transport,
            origin: origin.into(),
            pin_token: None,
        }
    }

    pub fn origin(&self) -> &str {
        &self.origin
    }

    pub fn transport(&mut self) -> &mut T {
        &mut self.transport
    }

    pub fn into_transport(self) -> T {
        self.transport
    }

    /// Uses `token` to add `pinAuth` (and so the UV flag) to later requests.
    pub fn set_pin_token(&mut self, token: Option<[u8; 16]>) {
        self.pin_token = token;
    }

    pub fn unlock(&mut self, rng: &mut dyn CryptoRngCore, pin: &str) -> ClientResult<()> {
        self.pin_token = Some(get_pin_token(&mut self.transport, rng, pin)?);
        Ok(())
    }

    fn check_rp(&self, rp_id: &str) -> ClientResult<()> {
        if rp_id_allowed(rp_id, &self.origin) {
            Ok(())
        } else {
            Err(ClientError::RpIdNotAllowed {
                rp_id: rp_id.into(),
                origin: self.origin.clone(),
            })
        }
    }

    fn pin_auth_for(&self, uv: UserVerification, client_data_hash: &[u8; 32]) -> ClientResult<Option<[u8; 16]>> {
        match (self.pin_token, uv) {
            (Some(token), _) => Ok(Some(pin_auth(&token, client_data_hash))),
            (None, UserVerification::Required) => Err(ClientError::UserVerificationUnavailable),
            (None, _) => Ok(None),
        }
    }

    pub fn register(&mut self, options: &CreationOptions) -> ClientResult<RegistrationCredential> {
        self.check_rp(&options.rp.id)?;
        let client_data = CollectedClientData::new(TYPE_CREATE, &options.challenge.0, &self.origin).to_json();
        let client_data_hash = crypto::sha256(&client_data);
        let algorithms: Vec<AlgorithmId> = options
            .pub_key_cred_params
            .iter()
            .filter(|p| p.kind == PUBLIC_KEY)
            .map(|p| p.alg)
            .collect();
        if algorithms.is_empty() {
            return Err(ClientError::NoSupportedAlgorithm);
        }
        let request = MakeCredentialRequest {
            client_data_hash,
            rp_id: options.rp.id.clone(),
            rp_name: Some(options.rp.name.clone()),
            user_id: options.user.id.0.clone(),
            user_name: Some(options.user.name.clone()),
            algorithms,
            exclude_list: options.exclude_credentials.iter().map(|d| d.id.0.clone()).collect(),
            pin_auth: self.pin_auth_for(options.user_verification, &client_data_hash)?,
        };
        let response = make_credential(&mut self.transport, &request)?;
        let credential_id = crate::authdata::AuthenticatorData::parse(&response.auth_data)
            .ok()
            .and_then(|ad| ad.attested)
            .map(|att| att.credential_id)
            .ok_or(ClientError::Malformed("authData lacks attested credential data"))?;
        Ok(PublicKeyCredential::new(
            credential_id,
            AttestationResponse {
                client_data_json: client_data.into(),
                attestation_object: response.attestation_object().into(),
            },
        ))
    }

    pub fn authenticate(&mut self, options: &RequestOptions) -> ClientResult<AuthenticationCredential> {
        self.check_rp(&options.rp_id)?;
        let client_data = CollectedClientData::new(TYPE_GET, &options.challenge.0, &self.origin).to_json();
        let client_data_hash = crypto::sha256(&client_data);
        let request = GetAssertionRequest {
            rp_id: options.rp_id.clone(),
            client_data_hash,
            allow_list: options.allow_credentials.iter().map(|d| d.id.0.clone()).collect(),
            user_presence: None,
            pin_auth: self.pin_auth_for(options.user_verification, &client_data_hash)?,
        };
        let response = get_assertion(&mut self.transport, &request)?;
        Ok(PublicKeyCredential::new(
            response.credential_id,
            AssertionResponse {
                client_data_json: client_data.into(),
                authenticator_data: response.auth_data.into(),
                signature: response.signature.into(),
                user_handle: response.user_handle.map(Into::into),
            },
        ))
    }
}
