//! Ceremonies and transport behaviour over the CTAPHID loopback.

mod common;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use common::{register, relying_party, Rig, ALGORITHMS, ORIGIN};
use qey_core::authenticator::NeverPresent;
use qey_core::client::{self, ClientError, WebAuthnClient};
use qey_core::ctaphid::device::SharedPresence;
use qey_core::ctaphid::{cmd, HidConnection, HidError};
use qey_core::rp::RpError;
use qey_core::AlgorithmId;

fn slow_presence(delay: Duration) -> SharedPresence {
    Box::new(move |_: &str| {
        thread::sleep(delay);
        true
    })
}

#[test]
fn get_info_over_cbor_command() {
    let rig = Rig::new(1);
    let raw = rig.channel.cbor(&[0x04]).unwrap();
    assert_eq!(raw[0], 0x00);
    let info = client::get_info(&mut &rig.channel).unwrap();
    assert_eq!(info.versions, ["FIDO_2_0"]);
    assert_eq!(info.algorithms, ALGORITHMS);
    assert_eq!(info.max_msg_size, Some(7609));
    rig.shutdown();
}

#[test]
fn every_algorithm_registers_and_authenticates() {
    let rig = Rig::new(2);
    for (i, alg) in ALGORITHMS.into_iter().enumerate() {
        let rp = relying_party(&[alg]);
        let mut key = register(&rig, &rp, &[i as u8]);
        assert_eq!(key.algorithm.id(), alg);
        let mut web = WebAuthnClient::new(&rig.channel, ORIGIN);
        for count in 1..=3 {
            let (options, record) = rp.begin_authentication(&[key.credential_id.clone()]);
            let assertion = web.authenticate(&options).unwrap();
            let report = rp.finish_authentication_json(&record, &mut key, &assertion).unwrap();
            assert_eq!(report.sign_count, count);
            assert_eq!(key.last_sign_count, count);
        }
    }
    rig.shutdown();
}

#[test]
fn replayed_assertion_is_rejected() {
    let rig = Rig::new(3);
    let rp = relying_party(&[AlgorithmId::ML_DSA_44]);
    let mut key = register(&rig, &rp, b"u");
    let mut web = WebAuthnClient::new(&rig.channel, ORIGIN);
    let (options, record) = rp.begin_authentication(&[key.credential_id.clone()]);
    let assertion = web.authenticate(&options).unwrap();
    rp.finish_authentication_json(&record, &mut key, &assertion).unwrap();
    // Same challenge again: already consumed.
    let err = rp
        .finish_authentication_json(&record, &mut key, &assertion)
        .unwrap_err();
    assert!(matches!(err, RpError::StaleChallenge), "{err:?}");
    rig.shutdown();
}

#[test]
fn client_refuses_rp_id_outside_origin() {
    let rig = Rig::new(4);
    let rp = relying_party(&ALGORITHMS);
    let (options, _) = rp.begin_registration(&common::user(b"u"), &[]);
    let mut web = WebAuthnClient::new(&rig.channel, "https://evil.example.net");
    assert!(matches!(
        web.register(&options),
        Err(ClientError::RpIdNotAllowed { .. })
    ));
    rig.shutdown();
}

#[test]
fn presence_refusal_surfaces_as_operation_denied() {
    let rig = Rig::with(5, Box::new(NeverPresent), |d| d);
    let rp = relying_party(&ALGORITHMS);
    let (options, _) = rp.begin_registration(&common::user(b"u"), &[]);
    let err = WebAuthnClient::new(&rig.channel, ORIGIN)
        .register(&options)
        .unwrap_err();
    assert_eq!(err.status(), Some(0x27));
    rig.shutdown();
}

#[test]
fn keepalives_hold_a_slow_presence_check_open() {
    let mut rig = Rig::with(6, slow_presence(Duration::from_millis(400)), |d| {
        d.with_keepalive_interval(Duration::from_millis(40))
    });
    rig.set_timeout(Duration::from_millis(150));
    let rp = relying_party(&[AlgorithmId::ES256]);
    let key = register(&rig, &rp, b"slow");
    assert_eq!(key.algorithm.id(), AlgorithmId::ES256);
    rig.shutdown();
}

#[test]
fn silent_device_times_out() {
    let mut rig = Rig::with(7, slow_presence(Duration::from_millis(600)), |d| {
        d.with_keepalive_interval(Duration::from_secs(10))
    });
    rig.set_timeout(Duration::from_millis(150));
    let rp = relying_party(&[AlgorithmId::ES256]);
    let (options, _) = rp.begin_registration(&common::user(b"u"), &[]);
    let err = WebAuthnClient::new(&rig.channel, ORIGIN)
        .register(&options)
        .unwrap_err();
    assert!(matches!(err, ClientError::Transport(HidError::Timeout)), "{err:?}");
    rig.shutdown();
}

#[test]
fn concurrent_use_of_one_channel_is_busy() {
    let rig = Rig::with(8, slow_presence(Duration::from_millis(300)), |d| d);
    let rp = relying_party(&[AlgorithmId::ES256]);
    let (options, _) = rp.begin_registration(&common::user(b"u"), &[]);
    thread::scope(|s| {
        let first = s.spawn(|| WebAuthnClient::new(&rig.channel, ORIGIN).register(&options));
        thread::sleep(Duration::from_millis(50));
        assert!(matches!(rig.channel.ping(b"x"), Err(HidError::ChannelBusy)));
        first.join().unwrap().unwrap();
    });
    assert_eq!(rig.channel.ping(b"x").unwrap(), b"x");
    rig.shutdown();
}

#[test]
fn channels_are_independent() {
    let (host, dev) = qey_core::ctaphid::loopback();
    let calls = Arc::new(AtomicUsize::new(0));
    let counter = calls.clone();
    let authenticator =
        qey_core::Authenticator::new(qey_core::CredentialStore::in_memory(qey_core::authenticator::AAGUID));
    let presence = Box::new(move |_: &str| {
        counter.fetch_add(1, Ordering::SeqCst);
        true
    });
    let device = qey_core::ctaphid::HidDevice::new(dev, authenticator, presence).spawn();
    let conn = HidConnection::new(host);
    let a = conn.open_channel().unwrap();
    let b = conn.open_channel().unwrap();
    assert_ne!(a.cid(), b.cid());
    thread::scope(|s| {
        let ta = s.spawn(|| {
            for i in 0..20u8 {
                let payload = vec![i; 100 + i as usize * 50];
                assert_eq!(a.ping(&payload).unwrap(), payload);
            }
        });
        let tb = s.spawn(|| {
            for _ in 0..5 {
                let raw = b.transact(cmd::CBOR, &[0x04]).unwrap();
                assert_eq!(raw[0], 0);
            }
        });
        ta.join().unwrap();
        tb.join().unwrap();
    });
    assert_eq!(calls.load(Ordering::SeqCst), 0);
    drop((a, b, conn));
    device.join();
}
