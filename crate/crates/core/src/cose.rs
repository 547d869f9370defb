//! COSE algorithm identifiers and COSE_Key encoding.
//!
//! ES256 keys use the EC2 layout. ML-DSA keys use the Algorithm Key Pair
//! (AKP) layout: `kty = 7`, the raw public key as a single byte string under
//! label `-1`.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cbor::Value;

/// The COSE algorithm numbers used by this crate.
///
/// The ML-DSA values are provisional IETF assignments. Change them here if
/// the final IANA registration differs.
pub mod registry {
    pub const ES256: i64 = -7;
    pub const ML_DSA_44: i64 = -48;
    pub const ML_DSA_65: i64 = -49;
    pub const ML_DSA_87: i64 = -50;
    pub const RS256: i64 = -257;
    /// ECDH-ES + HKDF-256, the algorithm CTAP2.0 PIN protocol 1 labels its
    /// key-agreement key with.
    pub const ECDH_ES_HKDF_256: i64 = -25;
}

const KTY_EC2: i64 = 2;
const KTY_AKP: i64 = 7;
const CRV_P256: i64 = 1;

const LABEL_KTY: i64 = 1;
const LABEL_ALG: i64 = 3;
const LABEL_CRV_OR_PUB: i64 = -1;
const LABEL_X: i64 = -2;
const LABEL_Y: i64 = -3;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CoseError {
    #[error("unsupported COSE algorithm {0}")]
    UnsupportedAlgorithm(AlgorithmId),
    #[error("COSE key is missing field {0}")]
    MissingField(&'static str),
    #[error("COSE key field {field} has length {actual}, expected {expected}")]
    InvalidLength {
        field: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("COSE key is malformed: {0}")]
    Malformed(&'static str),
}

/// A signed COSE algorithm identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AlgorithmId(pub i64);

/// How this crate treats an [`AlgorithmId`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Support {
    Supported(Algorithm),
    /// A registered identifier this authenticator deliberately does not implement.
    Recognized,
    Unknown,
}

impl AlgorithmId {
    pub const ES256: AlgorithmId = AlgorithmId(registry::ES256);
    pub const ML_DSA_44: AlgorithmId = AlgorithmId(registry::ML_DSA_44);
    pub const ML_DSA_65: AlgorithmId = AlgorithmId(registry::ML_DSA_65);
    pub const ML_DSA_87: AlgorithmId = AlgorithmId(registry::ML_DSA_87);
    pub const RS256: AlgorithmId = AlgorithmId(registry::RS256);

    pub fn support(self) -> Support {
        match self.0 {
            registry::ES256 => Support::Supported(Algorithm::Es256),
            registry::ML_DSA_44 => Support::Supported(Algorithm::MlDsa44),
            registry::ML_DSA_65 => Support::Supported(Algorithm::MlDsa65),
            registry::ML_DSA_87 | registry::RS256 => Support::Recognized,
            _ => Support::Unknown,
        }
    }

    pub fn supported(self) -> Result<Algorithm, CoseError> {
        match self.support() {
            Support::Supported(alg) => Ok(alg),
            _ => Err(CoseError::UnsupportedAlgorithm(self)),
        }
    }

    pub fn name(self) -> Option<&'static str> {
        match self.0 {
            registry::ES256 => Some("ES256"),
            registry::ML_DSA_44 => Some("ML-DSA-44"),
            registry::ML_DSA_65 => Some("ML-DSA-65"),
            registry::ML_DSA_87 => Some("ML-DSA-87"),
            registry::RS256 => Some("RS256"),
            _ => None,
        }
    }
}

impl fmt::Display for AlgorithmId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.name() {
            Some(name) => write!(f, "{} ({})", self.0, name),
            None => write!(f, "{}", self.0),
        }
    }
}

/// A signature algorithm this authenticator implements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "ES256")]
    Es256,
    #[serde(rename = "ML-DSA-44")]
    MlDsa44,
    #[serde(rename = "ML-DSA-65")]
    MlDsa65,
}

impl Algorithm {
    /// Authenticator preference order: ML-DSA-44 first, ES256 as the classical fallback.
    pub const PREFERENCE: [Algorithm; 3] = [Algorithm::MlDsa44, Algorithm::MlDsa65, Algorithm::Es256];

    pub fn id(self) -> AlgorithmId {
        match self {
            Algorithm::Es256 => AlgorithmId::ES256,
            Algorithm::MlDsa44 => AlgorithmId::ML_DSA_44,
            Algorithm::MlDsa65 => AlgorithmId::ML_DSA_65,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Es256 => "ES256",
            Algorithm::MlDsa44 => "ML-DSA-44",
            Algorithm::MlDsa65 => "ML-DSA-65",
        }
    }

    pub fn is_ml_dsa(self) -> bool {
        !matches!(self, Algorithm::Es256)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl TryFrom<AlgorithmId> for Algorithm {
    type Error = CoseError;

    fn try_from(id: AlgorithmId) -> Result<Self, Self::Error> {
        id.supported()
    }
}

/// Public key material carried in a COSE_Key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum KeyMaterial {
    /// P-256 affine coordinates.
    Ec2 { x: [u8; 32], y: [u8; 32] },
    /// Raw AKP public key.
    Akp(Vec<u8>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoseKey {
    pub algorithm: AlgorithmId,
    pub material: KeyMaterial,
}

impl CoseKey {
    pub fn es256(x: [u8; 32], y: [u8; 32]) -> CoseKey {
        CoseKey {
            algorithm: AlgorithmId::ES256,
            material: KeyMaterial::Ec2 { x, y },
        }
    }

    pub fn ml_dsa(algorithm: Algorithm, public: Vec<u8>) -> CoseKey {
        CoseKey {
            algorithm: algorithm.id(),
            material: KeyMaterial::Akp(public),
        }
    }

    pub fn key_type(&self) -> i64 {
        match self.material {
            KeyMaterial::Ec2 { .. } => KTY_EC2,
            KeyMaterial::Akp(_) => KTY_AKP,
        }
    }

    /// Public key in the crate's internal form: `x ∥ y` for ES256, raw bytes for ML-DSA.
    pub fn public_bytes(&self) -> Vec<u8> {
        match &self.material {
            KeyMaterial::Ec2 { x, y } => [x.as_slice(), y.as_slice()].concat(),
            KeyMaterial::Akp(pk) => pk.clone(),
        }
    }

    /// Builds a key from the internal public-key form.
    pub fn from_public_bytes(algorithm: Algorithm, public: &[u8]) -> Result<CoseKey, CoseError> {
        let key = match algorithm {
            Algorithm::Es256 => {
                if public.len() != 64 {
                    return Err(CoseError::InvalidLength {
                        field: "public key",
                        expected: 64,
                        actual: public.len(),
                    });
                }
                CoseKey::es256(public[..32].try_into().unwrap(), public[32..].try_into().unwrap())
            }
            _ => CoseKey::ml_dsa(algorithm, public.to_vec()),
        };
        key.validate()?;
        Ok(key)
    }

    fn validate(&self) -> Result<Algorithm, CoseError> {
        let alg = self.algorithm.supported()?;
        match (&self.material, alg) {
            (KeyMaterial::Ec2 { .. }, Algorithm::Es256) => Ok(alg),
            (KeyMaterial::Akp(pk), Algorithm::MlDsa44 | Algorithm::MlDsa65) => {
                let expected = crate::crypto::SuiteParameters::of(alg).public_key_len;
                if pk.len() != expected {
                    return Err(CoseError::InvalidLength {
                        field: "public key",
                        expected,
                        actual: pk.len(),
                    });
                }
                Ok(alg)
            }
            _ => Err(CoseError::Malformed("key type does not match algorithm")),
        }
    }
}

/// Encodes a credential public key as a canonical COSE_Key map.
pub fn encode_cose_key(key: &CoseKey) -> Result<Value, CoseError> {
    key.validate()?;
    Ok(encode_unchecked(key))
}

fn encode_unchecked(key: &CoseKey) -> Value {
    let mut entries = vec![
        (Value::int(LABEL_KTY), Value::int(key.key_type())),
        (Value::int(LABEL_ALG), Value::int(key.algorithm.0)),
    ];
    match &key.material {
        KeyMaterial::Ec2 { x, y } => {
            entries.push((Value::int(LABEL_CRV_OR_PUB), Value::int(CRV_P256)));
            entries.push((Value::int(LABEL_X), Value::bytes(x.to_vec())));
            entries.push((Value::int(LABEL_Y), Value::bytes(y.to_vec())));
        }
        KeyMaterial::Akp(pk) => entries.push((Value::int(LABEL_CRV_OR_PUB), Value::bytes(pk.clone()))),
    }
    Value::map(entries)
}

fn field<'a>(value: &'a Value, label: i64, name: &'static str) -> Result<&'a Value, CoseError> {
    value.get_int(label).ok_or(CoseError::MissingField(name))
}

fn coordinate(value: &Value, label: i64, name: &'static str) -> Result<[u8; 32], CoseError> {
    let raw = field(value, label, name)?
        .as_bytes()
        .ok_or(CoseError::Malformed("coordinate is not a byte string"))?;
    raw.try_into().map_err(|_| CoseError::InvalidLength {
        field: name,
        expected: 32,
        actual: raw.len(),
    })
}

fn decode_ec2(value: &Value) -> Result<([u8; 32], [u8; 32]), CoseError> {
    let crv = field(value, LABEL_CRV_OR_PUB, "crv")?
        .as_int()
        .ok_or(CoseError::Malformed("crv is not an integer"))?;
    if crv != CRV_P256 {
        return Err(CoseError::Malformed("unsupported curve"));
    }
    Ok((coordinate(value, LABEL_X, "x")?, coordinate(value, LABEL_Y, "y")?))
}

fn key_type(value: &Value) -> Result<i64, CoseError> {
    if value.as_map().is_none() {
        return Err(CoseError::Malformed("COSE key is not a map"));
    }
    field(value, LABEL_KTY, "kty")?
        .as_int()
        .ok_or(CoseError::Malformed("kty is not an integer"))
}

fn algorithm(value: &Value) -> Result<AlgorithmId, CoseError> {
    field(value, LABEL_ALG, "alg")?
        .as_int()
        .map(AlgorithmId)
        .ok_or(CoseError::Malformed("alg is not an integer"))
}

/// Decodes a credential public key; inverse of [`encode_cose_key`].
pub fn decode_cose_key(value: &Value) -> Result<CoseKey, CoseError> {
    let kty = key_type(value)?;
    let alg = algorithm(value)?;
    alg.supported()?;
    let material = match kty {
        KTY_EC2 => {
            let (x, y) = decode_ec2(value)?;
            KeyMaterial::Ec2 { x, y }
        }
        KTY_AKP => {
            let pk = field(value, LABEL_CRV_OR_PUB, "pub")?
                .as_bytes()
                .ok_or(CoseError::Malformed("pub is not a byte string"))?;
            KeyMaterial::Akp(pk.to_vec())
        }
        _ => return Err(CoseError::Malformed("unsupported key type")),
    };
    let key = CoseKey {
        algorithm: alg,
        material,
    };
    key.validate()?;
    Ok(key)
}

/// Encodes the P-256 key-agreement key used by PIN protocol 1.
pub fn encode_key_agreement_key(x: &[u8; 32], y: &[u8; 32]) -> Value {
    encode_unchecked(&CoseKey {
        algorithm: AlgorithmId(registry::ECDH_ES_HKDF_256),
        material: KeyMaterial::Ec2 { x: *x, y: *y },
    })
}

/// Decodes a PIN protocol 1 key-agreement key, returning its coordinates.
///
/// Platforms label this key with -25; the label is not enforced, matching
/// what deployed authenticators accept.
pub fn decode_key_agreement_key(value: &Value) -> Result<([u8; 32], [u8; 32]), CoseError> {
    if key_type(value)? != KTY_EC2 {
        return Err(CoseError::Malformed("key agreement key must be EC2"));
    }
    decode_ec2(value)
}
