//! WebAuthn JSON structures exchanged between the relying party and the
//! client. Binary fields travel as unpadded base64url.

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::cose::AlgorithmId;

pub const PUBLIC_KEY: &str = "public-key";
pub const TYPE_CREATE: &str = "webauthn.create";
pub const TYPE_GET: &str = "webauthn.get";

/// Bytes serialized as unpadded base64url.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct Base64Url(pub Vec<u8>);

impl Base64Url {
    pub fn encode(bytes: &[u8]) -> String {
        URL_SAFE_NO_PAD.encode(bytes)
    }

    pub fn decode(text: &str) -> Result<Vec<u8>, base64::DecodeError> {
        URL_SAFE_NO_PAD.decode(text)
    }
}

impl From<Vec<u8>> for Base64Url {
    fn from(v: Vec<u8>) -> Self {
        Base64Url(v)
    }
}

impl From<&[u8]> for Base64Url {
    fn from(v: &[u8]) -> Self {
        Base64Url(v.to_vec())
    }
}

impl AsRef<[u8]> for Base64Url {
    fn as_ref(&self) -> &[u8] {
        &self.0
    }
}

impl Serialize for Base64Url {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&Self::encode(&self.0))
    }
}

impl<'de> Deserialize<'de> for Base64Url {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        Self::decode(&text).map(Base64Url).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RpEntity {
    pub id: String,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct UserEntity {
    pub id: Base64Url,
    pub name: String,
    pub display_name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CredentialParameter {
    #[serde(rename = "type")]
    pub kind: String,
    pub alg: AlgorithmId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CredentialDescriptor {
    #[serde(rename = "type")]
    pub kind: String,
    pub id: Base64Url,
}

impl CredentialDescriptor {
    pub fn public_key(id: impl Into<Vec<u8>>) -> Self {
        CredentialDescriptor {
            kind: PUBLIC_KEY.into(),
            id: Base64Url(id.into()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UserVerification {
    Required,
    Preferred,
    Discouraged,
}

/// `PublicKeyCredentialCreationOptions`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CreationOptions {
    pub challenge: Base64Url,
    pub rp: RpEntity,
    pub user: UserEntity,
    pub pub_key_cred_params: Vec<CredentialParameter>,
    pub timeout: u64,
    #[serde(default)]
    pub exclude_credentials: Vec<CredentialDescriptor>,
    pub attestation: String,
    pub user_verification: UserVerification,
}

/// `PublicKeyCredentialRequestOptions`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RequestOptions {
    pub challenge: Base64Url,
    pub rp_id: String,
    pub timeout: u64,
    #[serde(default)]
    pub allow_credentials: Vec<CredentialDescriptor>,
    pub user_verification: UserVerification,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AttestationResponse {
    #[serde(rename = "clientDataJSON")]
    pub client_data_json: Base64Url,
    pub attestation_object: Base64Url,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AssertionResponse {
    #[serde(rename = "clientDataJSON")]
    pub client_data_json: Base64Url,
    pub authenticator_data: Base64Url,
    pub signature: Base64Url,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user_handle: Option<Base64Url>,
}

/// A `PublicKeyCredential` as a client posts it back to the server.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PublicKeyCredential<R> {
    pub id: String,
    pub raw_id: Base64Url,
    #[serde(rename = "type")]
    pub kind: String,
    pub response: R,
}

pub type RegistrationCredential = PublicKeyCredential<AttestationResponse>;
pub type AuthenticationCredential = PublicKeyCredential<AssertionResponse>;

impl<R> PublicKeyCredential<R> {
    pub fn new(raw_id: Vec<u8>, response: R) -> Self {
        PublicKeyCredential {
            id: Base64Url::encode(&raw_id),
            raw_id: Base64Url(raw_id),
            kind: PUBLIC_KEY.into(),
            response,
        }
    }
}

/// The parsed subset of `CollectedClientData` that verification needs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CollectedClientData {
    #[serde(rename = "type")]
    pub kind: String,
    pub challenge: String,
    pub origin: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cross_origin: Option<bool>,
}

impl CollectedClientData {
    pub fn new(kind: &str, challenge: &[u8], origin: &str) -> Self {
        CollectedClientData {
            kind: kind.into(),
            challenge: Base64Url::encode(challenge),
            origin: origin.into(),
            cross_origin: None,
        }
    }

    /// Serializes with members in `type`, `challenge`, `origin` order.
    pub fn to_json(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("client data serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn client_data_layout() {
        let cd = CollectedClientData::new(TYPE_GET, &[0xfb, 0xff, 0x00], "https://example.com");
        assert_eq!(
            String::from_utf8(cd.to_json()).unwrap(),
            r#"{"type":"webauthn.get","challenge":"-_8A","origin":"https://example.com"}"#
        );
    }

    #[test]
    fn base64url_rejects_padding_and_std_alphabet() {
        assert!(serde_json::from_str::<Base64Url>(r#""-_8A""#).is_ok());
        assert!(serde_json::from_str::<Base64Url>(r#""+/8A""#).is_err());
        assert!(serde_json::from_str::<Base64Url>(r#""AA==""#).is_err());
    }

    #[test]
    fn options_use_webauthn_member_names() {
        let opts = RequestOptions {
            challenge: Base64Url(vec![1, 2, 3]),
            rp_id: "example.com".into(),
            timeout: 60_000,
            allow_credentials: vec![CredentialDescriptor::public_key(vec![9])],
            user_verification: UserVerification::Discouraged,
        };
        let json = serde_json::to_value(&opts).unwrap();
        assert_eq!(json["rpId"], "example.com");
        assert_eq!(json["allowCredentials"][0]["type"], "public-key");
        assert_eq!(json["allowCredentials"][0]["id"], "CQ");
        assert_eq!(json["userVerification"], "discouraged");
        let back: RequestOptions = serde_json::from_value(json).unwrap();
        assert_eq!(back, opts);
    }

    #[test]
    fn credential_param_alg_is_integer() {
        let p = CredentialParameter {
            kind: PUBLIC_KEY.into(),
            alg: AlgorithmId(-48),
        };
        assert_eq!(serde_json::to_string(&p).unwrap(), r#"{"type":"public-key","alg":-48}"#);
    }
}
