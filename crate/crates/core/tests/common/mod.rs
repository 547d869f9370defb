#![allow(dead_code)]

use std::time::Duration;

use qey_core::authenticator::{AlwaysPresent, AAGUID};
use qey_core::ctaphid::device::SharedPresence;
use qey_core::ctaphid::{loopback, DeviceHandle, HidChannel, HidConnection, HidDevice, LoopbackEnd};
use qey_core::rp::{RegisteredKey, RegistrationPolicy, RelyingParty};
use qey_core::webauthn::{Base64Url, UserEntity};
use qey_core::{AlgorithmId, Authenticator, CredentialStore};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub const RP_ID: &str = "example.com";
pub const ORIGIN: &str = "https://example.com";
pub const ALGORITHMS: [AlgorithmId; 3] = [AlgorithmId(-48), AlgorithmId(-49), AlgorithmId(-7)];

/// A device thread and one host channel over a loopback link.
pub struct Rig {
    pub channel: HidChannel<LoopbackEnd>,
    device: Option<DeviceHandle>,
}

impl Rig {
    pub fn new(seed: u64) -> Rig {
        Rig::with(seed, Box::new(AlwaysPresent), |d| d)
    }

    pub fn with(
        seed: u64,
        presence: SharedPresence,
        configure: impl FnOnce(HidDevice<LoopbackEnd>) -> HidDevice<LoopbackEnd>,
    ) -> Rig {
        let authenticator = Authenticator::with_rng(
            CredentialStore::in_memory(AAGUID),
            Box::new(ChaCha20Rng::seed_from_u64(seed)),
        );
        let (host, dev) = loopback();
        let device = configure(HidDevice::new(dev, authenticator, presence)).spawn();
        let channel = HidConnection::new(host).open_channel().expect("INIT");
        Rig {
            channel,
            device: Some(device),
        }
    }

    pub fn set_timeout(&mut self, timeout: Duration) {
        self.channel.set_timeout(timeout);
    }

    pub fn shutdown(mut self) -> Authenticator {
        let device = self.device.take().unwrap();
        drop(self);
        device.join()
    }
}

pub fn relying_party(algorithms: &[AlgorithmId]) -> RelyingParty {
    RelyingParty::new(
        RegistrationPolicy::new(RP_ID, ORIGIN)
            .with_algorithms(algorithms)
            .unwrap(),
    )
}

pub fn user(id: &[u8]) -> UserEntity {
    UserEntity {
        id: Base64Url(id.to_vec()),
        name: "alice".into(),
        display_name: "Alice".into(),
    }
}

/// Registers `user` through the full client and RP path.
pub fn register(rig: &Rig, rp: &RelyingParty, user_id: &[u8]) -> RegisteredKey {
    let mut client = qey_core::client::WebAuthnClient::new(&rig.channel, ORIGIN);
    let (options, record) = rp.begin_registration(&user(user_id), &[]);
    let credential = client.register(&options).expect("register");
    rp.finish_registration_json(&record, &credential)
        .expect("verify registration")
        .0
}
