//! A post-quantum FIDO2 authenticator with an ML-DSA-44, ML-DSA-65 and ES256
//! signature suite, a CTAPHID transport and a WebAuthn relying-party verifier.

pub mod authdata;
pub mod authenticator;
pub mod bench;
pub mod cbor;
pub mod client;
pub mod clock;
pub mod cose;
pub mod crypto;
pub mod ctaphid;
pub mod rp;
pub mod store;
pub mod webauthn;

pub use authenticator::{Authenticator, UserPresence};
pub use cose::{Algorithm, AlgorithmId};
pub use crypto::SignatureSuite;
pub use store::CredentialStore;
