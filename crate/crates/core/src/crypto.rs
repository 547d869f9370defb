//! Signature suites (ML-DSA-44, ML-DSA-65, ES256) and the primitives PIN
//! protocol 1 needs.
//!
//! ML-DSA goes through [`MlDsaProvider`], which exposes the FIPS 204
//! *internal* signing interface. This module performs the pure ML-DSA
//! message formatting (`M' = 0 ∥ |ctx| ∥ ctx ∥ M`) itself, so the published
//! internal-interface test vectors and production signing exercise the same
//! provider entry points.

use std::fmt;
use std::sync::Arc;

use aes::cipher::{block_padding::NoPadding, BlockDecryptMut, BlockEncryptMut, KeyIvInit};
use hmac::{Hmac, Mac};
use p256::ecdsa::signature::{RandomizedSigner, Signer, Verifier};
use p256::elliptic_curve::sec1::FromEncodedPoint;
use p256::{EncodedPoint, PublicKey};
use rand_core::CryptoRngCore;
use sha2::{Digest, Sha256};
use thiserror::Error;
use zeroize::{Zeroize, Zeroizing};

use crate::cose::{Algorithm, AlgorithmId, CoseKey, KeyMaterial};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CryptoError {
    #[error("unsupported algorithm {0}")]
    UnsupportedAlgorithm(AlgorithmId),
    #[error("{what} has length {actual}, expected {expected}")]
    InvalidLength {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("invalid key material")]
    InvalidKey,
    #[error("invalid P-256 point")]
    InvalidPoint,
    #[error("malformed ES256 signature encoding")]
    InvalidSignatureEncoding,
}

/// Key and signature sizes for one algorithm, in bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SuiteParameters {
    pub algorithm: Algorithm,
    pub private_key_len: usize,
    pub public_key_len: usize,
    pub signature_len: usize,
}

impl SuiteParameters {
    pub const fn of(algorithm: Algorithm) -> SuiteParameters {
        let (private_key_len, public_key_len, signature_len) = match algorithm {
            Algorithm::MlDsa44 => (2560, 1312, 2420),
            Algorithm::MlDsa65 => (4032, 1952, 3309),
            Algorithm::Es256 => (32, 64, 64),
        };
        SuiteParameters {
            algorithm,
            private_key_len,
            public_key_len,
            signature_len,
        }
    }
}

/// Secret bytes that are wiped on drop and never printed.
#[derive(Clone, PartialEq, Eq)]
pub struct SecretBytes(Zeroizing<Vec<u8>>);

impl SecretBytes {
    pub fn new(bytes: Vec<u8>) -> Self {
        SecretBytes(Zeroizing::new(bytes))
    }

    pub fn expose(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Debug for SecretBytes {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SecretBytes(<{} bytes redacted>)", self.0.len())
    }
}

/// A credential key pair. ES256 public keys are stored as `x ∥ y`.
#[derive(Clone, PartialEq, Eq)]
pub struct KeyPair {
    pub algorithm: Algorithm,
    private: SecretBytes,
    public: Vec<u8>,
}

impl KeyPair {
    /// Reassembles a key pair, checking both halves against the suite sizes.
    pub fn from_parts(algorithm: Algorithm, private: SecretBytes, public: Vec<u8>) -> Result<KeyPair, CryptoError> {
        let params = SuiteParameters::of(algorithm);
        check_len("private key", params.private_key_len, private.len())?;
        check_len("public key", params.public_key_len, public.len())?;
        Ok(KeyPair {
            algorithm,
            private,
            public,
        })
    }

    pub fn public_key(&self) -> &[u8] {
        &self.public
    }

    pub fn private_key(&self) -> &SecretBytes {
        &self.private
    }

    pub fn cose_key(&self) -> CoseKey {
        CoseKey::from_public_bytes(self.algorithm, &self.public).expect("key pair lengths are checked on construction")
    }
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair")
            .field("algorithm", &self.algorithm)
            .field("private", &self.private)
            .field("public_len", &self.public.len())
            .finish()
    }
}

fn check_len(what: &'static str, expected: usize, actual: usize) -> Result<(), CryptoError> {
    if expected == actual {
        Ok(())
    } else {
        Err(CryptoError::InvalidLength { what, expected, actual })
    }
}

/// The FIPS 204 internal interface an ML-DSA implementation must provide.
pub trait MlDsaProvider: Send + Sync {
    /// `ML-DSA.KeyGen_internal(ξ)`, returning `(public, private)`.
    fn keygen_internal(&self, algorithm: Algorithm, seed: &[u8; 32]) -> Result<(Vec<u8>, Vec<u8>), CryptoError>;

    /// `ML-DSA.Sign_internal(sk, M', rnd)`.
    fn sign_internal(
        &self,
        algorithm: Algorithm,
        private: &[u8],
        formatted_message: &[u8],
        rnd: &[u8; 32],
    ) -> Result<Vec<u8>, CryptoError>;

    /// `ML-DSA.Verify_internal(pk, M', σ)`.
    fn verify_internal(
        &self,
        algorithm: Algorithm,
        public: &[u8],
        formatted_message: &[u8],
        signature: &[u8],
    ) -> Result<bool, CryptoError>;
}

/// [`MlDsaProvider`] backed by the `fips204` crate.
#[derive(Debug, Default, Clone, Copy)]
pub struct Fips204Provider;

macro_rules! fips204_dispatch {
    ($alg:expr, |$m:ident| $body:expr) => {
        match $alg {
            Algorithm::MlDsa44 => {
                use fips204::ml_dsa_44 as $m;
                $body
            }
            Algorithm::MlDsa65 => {
                use fips204::ml_dsa_65 as $m;
                $body
            }
            Algorithm::Es256 => Err(CryptoError::UnsupportedAlgorithm(Algorithm::Es256.id())),
        }
    };
}

impl MlDsaProvider for Fips204Provider {
    fn keygen_internal(&self, algorithm: Algorithm, seed: &[u8; 32]) -> Result<(Vec<u8>, Vec<u8>), CryptoError> {
        use fips204::traits::{KeyGen, SerDes};
        fips204_dispatch!(algorithm, |m| {
            let (pk, sk) = m::KG::keygen_from_seed(seed);
            Ok((pk.into_bytes().to_vec(), sk.into_bytes().to_vec()))
        })
    }

    #[allow(deprecated)]
    fn sign_internal(
        &self,
        algorithm: Algorithm,
        private: &[u8],
        formatted_message: &[u8],
        rnd: &[u8; 32],
    ) -> Result<Vec<u8>, CryptoError> {
        use fips204::traits::SerDes;
        fips204_dispatch!(algorithm, |m| {
            let mut raw: [u8; m::SK_LEN] = private.try_into().map_err(|_| CryptoError::InvalidLength {
                what: "private key",
                expected: m::SK_LEN,
                actual: private.len(),
            })?;
            let sk = m::PrivateKey::try_from_bytes(raw).map_err(|_| CryptoError::InvalidKey);
            raw.zeroize();
            let sig = m::_internal_sign(&sk?, formatted_message, &[], *rnd).map_err(|_| CryptoError::InvalidKey)?;
            Ok(sig.to_vec())
        })
    }

    #[allow(deprecated)]
    fn verify_internal(
        &self,
        algorithm: Algorithm,
        public: &[u8],
        formatted_message: &[u8],
        signature: &[u8],
    ) -> Result<bool, CryptoError> {
        use fips204::traits::SerDes;
        fips204_dispatch!(algorithm, |m| {
            let raw: [u8; m::PK_LEN] = public.try_into().map_err(|_| CryptoError::InvalidLength {
                what: "public key",
                expected: m::PK_LEN,
                actual: public.len(),
            })?;
            let sig: &[u8; m::SIG_LEN] = signature.try_into().map_err(|_| CryptoError::InvalidLength {
                what: "signature",
                expected: m::SIG_LEN,
                actual: signature.len(),
            })?;
            let pk = m::PublicKey::try_from_bytes(raw).map_err(|_| CryptoError::InvalidKey)?;
            Ok(m::_internal_verify(&pk, formatted_message, sig, &[]))
        })
    }
}

/// Builds the pure ML-DSA formatted message `0 ∥ |ctx| ∥ ctx ∥ M`.
pub fn format_ml_dsa_message(message: &[u8], context: &[u8]) -> Vec<u8> {
    assert!(context.len() <= 255, "ML-DSA context is at most 255 bytes");
    let mut out = Vec::with_capacity(2 + context.len() + message.len());
    out.push(0);
    out.push(context.len() as u8);
    out.extend_from_slice(context);
    out.extend_from_slice(message);
    out
}

/// ML-DSA randomness mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SigningMode {
    /// Fresh 32-byte `rnd` per signature.
    #[default]
    Hedged,
    /// `rnd = 0^32`; reproducible, used for known-answer tests.
    Deterministic,
}

/// Key generation, signing and verification for the supported algorithms.
#[derive(Clone)]
pub struct SignatureSuite {
    provider: Arc<dyn MlDsaProvider>,
    mode: SigningMode,
}

impl Default for SignatureSuite {
    fn default() -> Self {
        SignatureSuite::new(Arc::new(Fips204Provider), SigningMode::Hedged)
    }
}

impl fmt::Debug for SignatureSuite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SignatureSuite")
            .field("mode", &self.mode)
            .finish_non_exhaustive()
    }
}

impl SignatureSuite {
    pub fn new(provider: Arc<dyn MlDsaProvider>, mode: SigningMode) -> Self {
        SignatureSuite { provider, mode }
    }

    pub fn deterministic() -> Self {
        SignatureSuite::new(Arc::new(Fips204Provider), SigningMode::Deterministic)
    }

    pub fn mode(&self) -> SigningMode {
        self.mode
    }

    pub fn generate_keypair(
        &self,
        algorithm: AlgorithmId,
        rng: &mut dyn CryptoRngCore,
    ) -> Result<KeyPair, CryptoError> {
        let algorithm = algorithm
            .supported()
            .map_err(|_| CryptoError::UnsupportedAlgorithm(algorithm))?;
        let kp = match algorithm {
            Algorithm::Es256 => {
                let sk = p256::ecdsa::SigningKey::random(&mut &mut *rng);
                let public = uncompressed_xy(&sk.verifying_key().to_encoded_point(false));
                KeyPair::from_parts(algorithm, SecretBytes::new(sk.to_bytes().to_vec()), public)?
            }
            _ => {
                let mut seed = Zeroizing::new([0u8; 32]);
                rng.fill_bytes(seed.as_mut());
                self.keypair_from_seed(algorithm, &seed)?
            }
        };
        Ok(kp)
    }

    /// Deterministic ML-DSA key generation from the 32-byte seed ξ.
    pub fn keypair_from_seed(&self, algorithm: Algorithm, seed: &[u8; 32]) -> Result<KeyPair, CryptoError> {
        let (public, private) = self.provider.keygen_internal(algorithm, seed)?;
        KeyPair::from_parts(algorithm, SecretBytes::new(private), public)
    }

    /// Signs `message`. ES256 signatures are raw `r ∥ s`.
    pub fn sign(&self, keypair: &KeyPair, message: &[u8], rng: &mut dyn CryptoRngCore) -> Result<Vec<u8>, CryptoError> {
        let sig = match keypair.algorithm {
            Algorithm::Es256 => {
                let sk = p256::ecdsa::SigningKey::from_slice(keypair.private.expose())
                    .map_err(|_| CryptoError::InvalidKey)?;
                let sig: p256::ecdsa::Signature = match self.mode {
                    SigningMode::Hedged => sk.sign_with_rng(&mut &mut *rng, message),
                    SigningMode::Deterministic => sk.sign(message),
                };
                sig.to_bytes().to_vec()
            }
            alg => {
                let mut rnd = [0u8; 32];
                if self.mode == SigningMode::Hedged {
                    rng.fill_bytes(&mut rnd);
                }
                let formatted = format_ml_dsa_message(message, &[]);
                self.provider
                    .sign_internal(alg, keypair.private.expose(), &formatted, &rnd)?
            }
        };
        check_len(
            "signature",
            SuiteParameters::of(keypair.algorithm).signature_len,
            sig.len(),
        )?;
        Ok(sig)
    }

    /// `ML-DSA.Sign_internal` on an already formatted message with explicit `rnd`.
    pub fn sign_internal(
        &self,
        keypair: &KeyPair,
        formatted_message: &[u8],
        rnd: &[u8; 32],
    ) -> Result<Vec<u8>, CryptoError> {
        self.provider
            .sign_internal(keypair.algorithm, keypair.private.expose(), formatted_message, rnd)
    }

    /// `ML-DSA.Verify_internal` on an already formatted message.
    pub fn verify_internal(
        &self,
        algorithm: Algorithm,
        public: &[u8],
        formatted_message: &[u8],
        signature: &[u8],
    ) -> Result<bool, CryptoError> {
        self.provider
            .verify_internal(algorithm, public, formatted_message, signature)
    }

    /// Verifies `signature` over `message`. Lengths are checked before any
    /// cryptographic work.
    pub fn verify(
        &self,
        public: &[u8],
        algorithm: AlgorithmId,
        message: &[u8],
        signature: &[u8],
    ) -> Result<bool, CryptoError> {
        let algorithm = algorithm
            .supported()
            .map_err(|_| CryptoError::UnsupportedAlgorithm(algorithm))?;
        let params = SuiteParameters::of(algorithm);
        check_len("public key", params.public_key_len, public.len())?;
        check_len("signature", params.signature_len, signature.len())?;
        match algorithm {
            Algorithm::Es256 => {
                let Ok(vk) = p256::ecdsa::VerifyingKey::from_encoded_point(&xy_point(public)) else {
                    return Ok(false);
                };
                let Ok(sig) = p256::ecdsa::Signature::from_slice(signature) else {
                    return Ok(false);
                };
                Ok(vk.verify(message, &sig).is_ok())
            }
            alg => {
                let formatted = format_ml_dsa_message(message, &[]);
                self.provider.verify_internal(alg, public, &formatted, signature)
            }
        }
    }
}

/// [`SignatureSuite::generate_keypair`] with the default hedged suite.
pub fn generate_keypair(algorithm: AlgorithmId, rng: &mut dyn CryptoRngCore) -> Result<KeyPair, CryptoError> {
    SignatureSuite::default().generate_keypair(algorithm, rng)
}

/// [`SignatureSuite::sign`] with the default hedged suite.
pub fn sign(keypair: &KeyPair, message: &[u8], rng: &mut dyn CryptoRngCore) -> Result<Vec<u8>, CryptoError> {
    SignatureSuite::default().sign(keypair, message, rng)
}

/// [`SignatureSuite::verify`] with the default suite.
pub fn verify(public: &[u8], algorithm: AlgorithmId, message: &[u8], signature: &[u8]) -> Result<bool, CryptoError> {
    SignatureSuite::default().verify(public, algorithm, message, signature)
}

fn uncompressed_xy(point: &EncodedPoint) -> Vec<u8> {
    let mut out = Vec::with_capacity(64);
    out.extend_from_slice(point.x().expect("uncompressed point"));
    out.extend_from_slice(point.y().expect("uncompressed point"));
    out
}

fn xy_point(xy: &[u8]) -> EncodedPoint {
    let x: &[u8; 32] = xy[..32].try_into().unwrap();
    let y: &[u8; 32] = xy[32..64].try_into().unwrap();
    EncodedPoint::from_affine_coordinates(x.into(), y.into(), false)
}

/// Converts an ASN.1 DER ECDSA signature to raw `r ∥ s`.
pub fn es256_der_to_raw(der: &[u8]) -> Result<[u8; 64], CryptoError> {
    let sig = p256::ecdsa::Signature::from_der(der).map_err(|_| CryptoError::InvalidSignatureEncoding)?;
    Ok(sig.to_bytes().into())
}

/// Converts a raw `r ∥ s` ECDSA signature to ASN.1 DER.
pub fn es256_raw_to_der(raw: &[u8]) -> Result<Vec<u8>, CryptoError> {
    let sig = p256::ecdsa::Signature::from_slice(raw).map_err(|_| CryptoError::InvalidSignatureEncoding)?;
    Ok(sig.to_der().as_bytes().to_vec())
}

pub fn sha256(data: &[u8]) -> [u8; 32] {
    Sha256::digest(data).into()
}

/// PIN protocol 1 shared secret: SHA-256 of the ECDH x-coordinate.
#[derive(Clone, PartialEq, Eq)]
pub struct SharedSecret(Zeroizing<[u8; 32]>);

impl SharedSecret {
    pub fn from_bytes(bytes: [u8; 32]) -> Self {
        SharedSecret(Zeroizing::new(bytes))
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }
}

impl fmt::Debug for SharedSecret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SharedSecret(<redacted>)")
    }
}

fn p256_public(x: &[u8; 32], y: &[u8; 32]) -> Result<PublicKey, CryptoError> {
    let point = EncodedPoint::from_affine_coordinates(x.into(), y.into(), false);
    Option::from(PublicKey::from_encoded_point(&point)).ok_or(CryptoError::InvalidPoint)
}

/// Derives the PIN protocol 1 shared secret from the peer's P-256 key and our private key.
pub fn pin1_key_agreement(
    platform_public: &CoseKey,
    authenticator_private: &KeyPair,
) -> Result<SharedSecret, CryptoError> {
    let KeyMaterial::Ec2 { x, y } = &platform_public.material else {
        return Err(CryptoError::InvalidPoint);
    };
    if authenticator_private.algorithm != Algorithm::Es256 {
        return Err(CryptoError::InvalidKey);
    }
    let peer = p256_public(x, y)?;
    let sk =
        p256::SecretKey::from_slice(authenticator_private.private.expose()).map_err(|_| CryptoError::InvalidKey)?;
    let shared = p256::ecdh::diffie_hellman(sk.to_nonzero_scalar(), peer.as_affine());
    Ok(SharedSecret::from_bytes(sha256(shared.raw_secret_bytes())))
}

type Aes256CbcEnc = cbc::Encryptor<aes::Aes256>;
type Aes256CbcDec = cbc::Decryptor<aes::Aes256>;

fn check_blocks(len: usize) -> Result<(), CryptoError> {
    if len.is_multiple_of(16) {
        Ok(())
    } else {
        Err(CryptoError::InvalidLength {
            what: "PIN protocol 1 block input",
            expected: len.next_multiple_of(16),
            actual: len,
        })
    }
}

/// AES-256-CBC with a zero IV and no padding.
pub fn pin1_encrypt(secret: &SharedSecret, plaintext: &[u8]) -> Result<Vec<u8>, CryptoError> {
    check_blocks(plaintext.len())?;
    let enc = Aes256CbcEnc::new(secret.as_bytes().into(), &[0u8; 16].into());
    Ok(enc.encrypt_padded_vec_mut::<NoPadding>(plaintext))
}

pub fn pin1_decrypt(secret: &SharedSecret, ciphertext: &[u8]) -> Result<Vec<u8>, CryptoError> {
    check_blocks(ciphertext.len())?;
    let dec = Aes256CbcDec::new(secret.as_bytes().into(), &[0u8; 16].into());
    dec.decrypt_padded_vec_mut::<NoPadding>(ciphertext)
        .map_err(|_| CryptoError::InvalidLength {
            what: "PIN protocol 1 block input",
            expected: ciphertext.len(),
            actual: ciphertext.len(),
        })
}

/// `LEFT(HMAC-SHA-256(key, message), 16)`.
pub fn pin1_authenticate(key: &[u8], message: &[u8]) -> [u8; 16] {
    let mut mac = <Hmac<Sha256> as Mac>::new_from_slice(key).expect("HMAC accepts any key length");
    mac.update(message);
    let full = mac.finalize().into_bytes();
    full[..16].try_into().unwrap()
}

/// Constant-time equality for authentication tags and PIN hashes.
pub fn ct_eq(a: &[u8], b: &[u8]) -> bool {
    a.len() == b.len() && a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}
