//! Acceptance criteria 1-8. Runs without the libtest harness so that every
//! criterion prints exactly one PASS/FAIL line; exits nonzero if any fails.

mod common;

use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::{relying_party, Rig, ALGORITHMS, ORIGIN, RP_ID};
use qey_core::authdata::flags;
use qey_core::authenticator::{Status, AAGUID, CMD_CLIENT_PIN};
use qey_core::bench::{self, BenchConfig, Function};
use qey_core::cbor::Value;
use qey_core::client::{self, ClientError, GetAssertionRequest, MakeCredentialRequest, WebAuthnClient};
use qey_core::crypto::{self, Fips204Provider, MlDsaProvider, SignatureSuite};
use qey_core::ctaphid::{fragment, frame, reassemble, HidError, MAX_PAYLOAD, REPORT_LEN};
use qey_core::rp::{RegisteredKey, RpError};
use qey_core::store::{AuthenticatorState, Credential};
use qey_core::webauthn::{CollectedClientData, TYPE_CREATE, TYPE_GET};
use qey_core::{Algorithm, AlgorithmId, CredentialStore};
use rand::rngs::StdRng;
use rand::{Rng, RngCore, SeedableRng};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rng(criterion: u64) -> StdRng {
    StdRng::seed_from_u64(0x5145_5900 + criterion)
}

// 1. Size conformance.
fn sizes() -> Outcome {
    const CYCLES: usize = 100;
    let expected = [
        (Algorithm::MlDsa44, 1312, 2420),
        (Algorithm::MlDsa65, 1952, 2560),
        (Algorithm::Es256, 64, 64),
    ];
    let started = Instant::now();
    let suite = SignatureSuite::default();
    let mut rng = rng(1);
    let mut problems = Vec::new();
    for (alg, pk_len, sig_len) in expected {
        let (mut bad_pk, mut bad_sig, mut seen_sig) = (0, 0, 0);
        for _ in 0..CYCLES {
            let kp = suite.generate_keypair(alg.id(), &mut rng).map_err(|e| e.to_string())?;
            let mut msg = vec![0u8; rng.gen_range(0..512)];
            rng.fill_bytes(&mut msg);
            let sig = suite.sign(&kp, &msg, &mut rng).map_err(|e| e.to_string())?;
            bad_pk += usize::from(kp.public_key().len() != pk_len);
            if sig.len() != sig_len {
                bad_sig += 1;
                seen_sig = sig.len();
            }
        }
        if bad_pk > 0 {
            problems.push(format!("{alg} public key != {pk_len} in {bad_pk}/{CYCLES}"));
        }
        if bad_sig > 0 {
            problems.push(format!("{alg} signature {seen_sig} != {sig_len} in {bad_sig}/{CYCLES}"));
        }
    }
    let elapsed = started.elapsed();
    if elapsed > Duration::from_secs(30) {
        problems.push(format!("took {elapsed:?}"));
    }
    if problems.is_empty() {
        Ok(format!("{} cycles in {:.1}s", 3 * CYCLES, elapsed.as_secs_f64()))
    } else {
        Err(problems.join("; "))
    }
}

// 2. Loopback registration then authentication.
fn ceremonies() -> Outcome {
    const RUNS: usize = 100;
    let mut rng = rng(2);
    let mut failures = Vec::new();
    for alg in ALGORITHMS {
        for run in 0..RUNS {
            let rig = Rig::new(rng.gen());
            let rp = relying_party(&[alg]);
            let mut user_id = vec![0u8; rng.gen_range(1..=64)];
            rng.fill_bytes(&mut user_id);
            let result = (|| -> Result<(), String> {
                let mut web = WebAuthnClient::new(&rig.channel, ORIGIN);
                let (options, record) = rp.begin_registration(&common::user(&user_id), &[]);
                let credential = web.register(&options).map_err(|e| e.to_string())?;
                let (mut key, report) = rp
                    .finish_registration_json(&record, &credential)
                    .map_err(|e| e.to_string())?;
                ensure(report.algorithm.id() == alg, || {
                    format!("registered {}", report.algorithm)
                })?;
                for expected in 1..=2 {
                    let (options, record) = rp.begin_authentication(&[key.credential_id.clone()]);
                    let assertion = web.authenticate(&options).map_err(|e| e.to_string())?;
                    let report = rp
                        .finish_authentication_json(&record, &mut key, &assertion)
                        .map_err(|e| e.to_string())?;
                    ensure(report.sign_count == expected, || {
                        format!("sign count {}", report.sign_count)
                    })?;
                }
                Ok(())
            })();
            if let Err(e) = result {
                failures.push(format!("{} run {run}: {e}", alg.0));
            }
            rig.shutdown();
        }
    }
    ensure(failures.is_empty(), || {
        format!("{} failures, first: {}", failures.len(), failures[0])
    })?;
    Ok(format!("{} runs, 0 failures", 3 * RUNS))
}

// 3. Attack-analysis suite.
struct Assertion {
    client_data_json: Vec<u8>,
    auth_data: Vec<u8>,
    signature: Vec<u8>,
}

fn assert_with(rig: &Rig, rp_id: &str, allow: &[Vec<u8>], client_data_json: Vec<u8>) -> Result<Assertion, ClientError> {
    let mut req = GetAssertionRequest::new(rp_id, crypto::sha256(&client_data_json));
    req.allow_list = allow.to_vec();
    let resp = client::get_assertion(&mut &rig.channel, &req)?;
    Ok(Assertion {
        client_data_json,
        auth_data: resp.auth_data,
        signature: resp.signature,
    })
}

fn mutate(rng: &mut StdRng, bytes: &mut [u8], positions: std::ops::Range<usize>) {
    let count = rng.gen_range(1..=3);
    let mut touched: Vec<usize> = Vec::new();
    while touched.len() < count.min(positions.len()) {
        let i = rng.gen_range(positions.clone());
        if !touched.contains(&i) {
            bytes[i] ^= rng.gen_range(1..=255u8);
            touched.push(i);
        }
    }
}

fn mutated_origin(rng: &mut StdRng) -> String {
    let label: String = (0..rng.gen_range(3..10))
        .map(|_| rng.gen_range(b'a'..=b'z') as char)
        .collect();
    match rng.gen_range(0..6) {
        0 => format!("https://{label}.com"),
        1 => "http://example.com".into(),
        2 => format!("https://example.com.{label}.net"),
        3 => format!("https://example.com:{}", rng.gen_range(1..65535)),
        4 => "https://examp1e.com".into(),
        _ => format!("https://{label}.example.com"),
    }
}

fn mutated_rp_id(rng: &mut StdRng) -> String {
    let label: String = (0..rng.gen_range(3..10))
        .map(|_| rng.gen_range(b'a'..=b'z') as char)
        .collect();
    match rng.gen_range(0..4) {
        0 => format!("{label}.com"),
        1 => format!("example.com.{label}"),
        2 => format!("{label}.example.com"),
        _ => {
            let mut id = RP_ID.as_bytes().to_vec();
            let i = rng.gen_range(0..id.len());
            id[i] = if id[i] == b'x' { b'y' } else { b'x' };
            String::from_utf8(id).unwrap()
        }
    }
}

/// What the RP must report for authenticator data that differs from the
/// signed original.
fn expected_auth_data_error(original: &[u8], mutated: &[u8]) -> &'static str {
    let f = mutated[32];
    if f & (flags::ATTESTED_CREDENTIAL_DATA | flags::EXTENSION_DATA) != 0 {
        "MalformedAuthenticatorData"
    } else if mutated[..32] != original[..32] {
        "RpIdHashMismatch"
    } else if f & flags::USER_PRESENT == 0 {
        "UserNotPresent"
    } else {
        "BadSignature"
    }
}

fn error_name(e: &RpError) -> &'static str {
    match e {
        RpError::ChallengeMismatch => "ChallengeMismatch",
        RpError::OriginMismatch(_) => "OriginMismatch",
        RpError::RpIdHashMismatch => "RpIdHashMismatch",
        RpError::UserNotPresent => "UserNotPresent",
        RpError::MalformedAuthenticatorData(_) => "MalformedAuthenticatorData",
        RpError::BadSignature => "BadSignature",
        _ => "other",
    }
}

fn attacks() -> Outcome {
    const TRIALS: usize = 50;
    let mut rng = rng(3);
    let rig = Rig::new(rng.gen());
    let rp = relying_party(&ALGORITHMS);
    let keys: Vec<RegisteredKey> = ALGORITHMS
        .iter()
        .enumerate()
        .map(|(i, &alg)| {
            let policy_rp = relying_party(&[alg]);
            let key = common::register(&rig, &policy_rp, &[i as u8 + 1]);
            assert_eq!(key.algorithm.id(), alg);
            key
        })
        .collect();

    let mut false_accepts = 0;
    let mut wrong_errors = Vec::new();
    let mut seen = std::collections::BTreeMap::<&str, usize>::new();
    let mut check = |class: &str, result: Result<u32, RpError>, expected: &'static str| match result {
        Ok(_) => false_accepts += 1,
        Err(e) if error_name(&e) == expected => *seen.entry(expected).or_default() += 1,
        Err(e) => wrong_errors.push(format!("{class}: expected {expected}, got {e:?}")),
    };

    // (a) challenge, (b) origin, (d) authenticator data, (e) signature
    for class in ['a', 'b', 'd', 'e'] {
        for trial in 0..TRIALS {
            let mut key = keys[rng.gen_range(0..keys.len())].clone();
            let allow = [key.credential_id.clone()];
            let (_, record) = rp.begin_authentication(&allow);
            let mut challenge = record.challenge.to_vec();
            let mut origin = ORIGIN.to_string();
            match class {
                'a' => match rng.gen_range(0..3) {
                    0 => rng.fill_bytes(&mut challenge),
                    1 => challenge[rng.gen_range(0..32)] ^= 1 << rng.gen_range(0..8),
                    _ => challenge.truncate(rng.gen_range(0..32)),
                },
                'b' => origin = mutated_origin(&mut rng),
                _ => {}
            }
            let cdj = CollectedClientData::new(TYPE_GET, &challenge, &origin).to_json();
            let mut a = assert_with(&rig, RP_ID, &allow, cdj).map_err(|e| e.to_string())?;
            let expected = match class {
                'a' => "ChallengeMismatch",
                'b' => "OriginMismatch",
                'd' => {
                    let original = a.auth_data.clone();
                    let len = a.auth_data.len();
                    // rpIdHash, flags, counter, anywhere
                    match trial % 4 {
                        0 => mutate(&mut rng, &mut a.auth_data, 0..32),
                        1 => a.auth_data[32] ^= 1 << rng.gen_range(0..8),
                        2 => mutate(&mut rng, &mut a.auth_data, 33..37),
                        _ => mutate(&mut rng, &mut a.auth_data, 0..len),
                    }
                    expected_auth_data_error(&original, &a.auth_data)
                }
                _ => {
                    let len = a.signature.len();
                    mutate(&mut rng, &mut a.signature, 0..len);
                    "BadSignature"
                }
            };
            let result = rp.finish_authentication(&record, &mut key, &a.client_data_json, &a.auth_data, &a.signature);
            check(&class.to_string(), result, expected);
        }
    }

    // (c) rpId: the authenticator is driven with a different rp id than the
    // RP issued the challenge for, at registration and at authentication.
    for trial in 0..TRIALS {
        let alg = ALGORITHMS[rng.gen_range(0..ALGORITHMS.len())];
        let evil = mutated_rp_id(&mut rng);
        let user_id = [0xC0, trial as u8];
        let result = if trial % 2 == 0 {
            let (_, record) = rp.begin_registration(&common::user(&user_id), &[]);
            let cdj = CollectedClientData::new(TYPE_CREATE, &record.challenge, ORIGIN).to_json();
            let req = MakeCredentialRequest::new(crypto::sha256(&cdj), &evil, &user_id, &[alg]);
            let resp = client::make_credential(&mut &rig.channel, &req).map_err(|e| e.to_string())?;
            rp.finish_registration(&record, &cdj, &resp.attestation_object())
                .map(|_| 0)
        } else {
            // A credential minted for the lookalike rp, relayed to the real one
            // under a key the RP already trusts.
            let req = MakeCredentialRequest::new([0; 32], &evil, &user_id, &[alg]);
            client::make_credential(&mut &rig.channel, &req).map_err(|e| e.to_string())?;
            let mut key = keys[rng.gen_range(0..keys.len())].clone();
            let (_, record) = rp.begin_authentication(&[key.credential_id.clone()]);
            let cdj = CollectedClientData::new(TYPE_GET, &record.challenge, ORIGIN).to_json();
            let a = assert_with(&rig, &evil, &[], cdj).map_err(|e| e.to_string())?;
            rp.finish_authentication(&record, &mut key, &a.client_data_json, &a.auth_data, &a.signature)
        };
        check("c", result, "RpIdHashMismatch");
    }
    rig.shutdown();

    ensure(false_accepts == 0, || format!("{false_accepts} false accepts"))?;
    ensure(wrong_errors.is_empty(), || {
        format!("{} wrong errors, first: {}", wrong_errors.len(), wrong_errors[0])
    })?;
    let seen: Vec<String> = seen.iter().map(|(k, v)| format!("{k} {v}")).collect();
    Ok(format!(
        "5 classes x {TRIALS} trials, 0 false accepts ({})",
        seen.join(", ")
    ))
}

// 4. Conformance matrix.
fn conformance() -> Outcome {
    let rig = Rig::new(4);
    let mut t = &rig.channel;
    let info = client::get_info(&mut t).map_err(|e| e.to_string())?;
    ensure(info.pin_protocols == [1], || {
        format!("pinProtocols {:?}", info.pin_protocols)
    })?;

    let get_retries_v2 = Value::map([(Value::int(1), Value::int(2)), (Value::int(2), Value::int(1))]);
    let status = client::call(&mut t, CMD_CLIENT_PIN, Some(&get_retries_v2))
        .err()
        .and_then(|e| e.status());
    ensure(status == Some(Status::InvalidParameter as u8), || {
        format!("pinProtocol 2 gave {status:?}")
    })?;

    let make = |algs: &[i64]| {
        let algs: Vec<AlgorithmId> = algs.iter().map(|&a| AlgorithmId(a)).collect();
        client::make_credential(
            &mut &rig.channel,
            &MakeCredentialRequest::new([9; 32], RP_ID, b"user", &algs),
        )
    };
    let status = make(&[-257]).err().and_then(|e| e.status());
    ensure(status == Some(0x26), || format!("[-257] gave {status:?}"))?;
    for alg in [-48, -49] {
        let resp = make(&[alg]).map_err(|e| format!("[{alg}] failed: {e}"))?;
        ensure(resp.algorithm() == Some(AlgorithmId(alg)), || {
            format!("[{alg}] gave {:?}", resp.algorithm())
        })?;
    }
    rig.shutdown();
    Ok("pinProtocols=[1], v2 -> 0x02, [-257] -> 0x26, [-48]/[-49] ok".into())
}

// 5. Framing.
fn framing() -> Outcome {
    let mut rng = rng(5);
    let mut lengths = vec![0, 1, 56, 57, 58, 116, 2420, 2560, 7609];
    lengths.extend((0..1000).map(|_| rng.gen_range(0..=MAX_PAYLOAD)));
    for len in &lengths {
        let mut payload = vec![0u8; *len];
        rng.fill_bytes(&mut payload);
        let cid = rng.gen_range(1..u32::MAX);
        let frames = fragment(cid, 0x10, &payload).map_err(|e| format!("{len}: {e}"))?;
        ensure(frames.len() == frame::frame_count(*len), || {
            format!("{len}: {} frames", frames.len())
        })?;
        ensure(frames.iter().all(|f| f.as_bytes().len() == REPORT_LEN), || {
            format!("{len}: short report")
        })?;
        let (cmd, back) = reassemble(&frames).map_err(|e| format!("{len}: {e}"))?;
        ensure(cmd == 0x10 && back == payload, || format!("{len}: round trip differs"))?;
    }
    let too_big = fragment(1, 0x10, &vec![0; 7610]);
    ensure(matches!(too_big, Err(HidError::PayloadTooLarge(7610))), || {
        format!("7610: {too_big:?}")
    })?;

    let rig = Rig::new(5);
    for len in [0, 57, 58, 7609] {
        let payload: Vec<u8> = (0..len).map(|i| i as u8).collect();
        let echo = rig.channel.ping(&payload).map_err(|e| e.to_string())?;
        ensure(echo == payload, || format!("ping {len} differs"))?;
    }
    rig.shutdown();
    Ok(format!("{} lengths round-trip, 7610 rejected", lengths.len()))
}

// 6. FIPS 204 known answers.
fn known_answers() -> Outcome {
    let load = |name: &str| -> Result<serde_json::Value, String> {
        let path = format!("{}/tests/data/{name}", env!("CARGO_MANIFEST_DIR"));
        let text = std::fs::read_to_string(&path).map_err(|e| format!("{path}: {e}"))?;
        serde_json::from_str(&text).map_err(|e| e.to_string())
    };
    let hex = |v: &serde_json::Value| hex::decode(v.as_str().unwrap()).unwrap();
    let alg = |g: &serde_json::Value| match g["parameterSet"].as_str() {
        Some("ML-DSA-44") => Algorithm::MlDsa44,
        Some("ML-DSA-65") => Algorithm::MlDsa65,
        other => panic!("parameter set {other:?}"),
    };
    let suite = SignatureSuite::deterministic();
    let (mut passed, mut total) = (0, 0);
    let mut per_set = std::collections::BTreeSet::new();

    for g in load("ML-DSA-keyGen-FIPS204.json")?["testGroups"].as_array().unwrap() {
        per_set.insert(alg(g).name());
        for t in g["tests"].as_array().unwrap() {
            let seed: [u8; 32] = hex(&t["seed"]).try_into().unwrap();
            let kp = suite.keypair_from_seed(alg(g), &seed).map_err(|e| e.to_string())?;
            total += 1;
            passed += usize::from(kp.public_key() == hex(&t["pk"]) && kp.private_key().expose() == hex(&t["sk"]));
        }
    }
    for g in load("ML-DSA-sigGen-FIPS204.json")?["testGroups"].as_array().unwrap() {
        let deterministic = g["deterministic"].as_bool().unwrap();
        for t in g["tests"].as_array().unwrap() {
            let rnd: [u8; 32] = if deterministic {
                [0; 32]
            } else {
                hex(&t["rnd"]).try_into().unwrap()
            };
            let sig = Fips204Provider
                .sign_internal(alg(g), &hex(&t["sk"]), &hex(&t["message"]), &rnd)
                .map_err(|e| e.to_string())?;
            total += 1;
            passed += usize::from(sig == hex(&t["signature"]));
        }
    }
    for g in load("ML-DSA-sigVer-FIPS204.json")?["testGroups"].as_array().unwrap() {
        let pk = hex(&g["pk"]);
        for t in g["tests"].as_array().unwrap() {
            let ok = matches!(
                suite.verify_internal(alg(g), &pk, &hex(&t["message"]), &hex(&t["signature"])),
                Ok(true)
            );
            total += 1;
            passed += usize::from(ok == t["testPassed"].as_bool().unwrap());
        }
    }
    ensure(per_set.len() == 2, || format!("parameter sets {per_set:?}"))?;
    ensure(passed == total && total > 0, || {
        format!("{passed}/{total} vectors match")
    })?;
    Ok(format!("{passed}/{total} vectors match"))
}

// 7. Benchmark methodology.
fn benchmark() -> Outcome {
    let config = BenchConfig {
        algorithms: ALGORITHMS.to_vec(),
        samples: bench::MIN_SAMPLES,
        seed: Some(7),
        ..BenchConfig::default()
    };
    let report = bench::run(&config).map_err(|e| e.to_string())?;
    print!("{}", report.to_table());
    let mut notes = Vec::new();
    for function in [Function::Registration, Function::Authentication] {
        let m44 = report
            .row(function, Algorithm::MlDsa44)
            .ok_or("missing ML-DSA-44 row")?;
        let m65 = report
            .row(function, Algorithm::MlDsa65)
            .ok_or("missing ML-DSA-65 row")?;
        ensure(m65.edge_us.mean > m44.edge_us.mean, || {
            format!(
                "{function}: ML-DSA-65 {:.0} µs <= ML-DSA-44 {:.0} µs",
                m65.edge_us.mean, m44.edge_us.mean
            )
        })?;
        notes.push(format!("{function} 65/44 = {:.2}", m65.edge_us.mean / m44.edge_us.mean));
    }
    for row in &report.rows {
        ensure(row.edge_us.n == bench::MIN_SAMPLES, || {
            format!("{} samples", row.edge_us.n)
        })?;
        ensure(row.edge_us.max < 500_000.0, || {
            format!("{} {} max {:.0} µs", row.function, row.algorithm, row.edge_us.max)
        })?;
    }
    let worst = report.rows.iter().map(|r| r.edge_us.max).fold(0.0, f64::max);
    Ok(format!("{}; slowest flow {:.1} ms", notes.join(", "), worst / 1000.0))
}

// 8. Persistence.
fn random_state(rng: &mut StdRng) -> AuthenticatorState {
    let suite = SignatureSuite::default();
    let mut aaguid = [0u8; 16];
    rng.fill_bytes(&mut aaguid);
    let mut state = AuthenticatorState::new(aaguid);
    state.pin_hash_left16 = rng.gen_bool(0.5).then(|| rng.gen());
    state.pin_retries = rng.gen_range(0..=8);
    for i in 0..rng.gen_range(0..=6) {
        let alg = [Algorithm::MlDsa44, Algorithm::MlDsa65, Algorithm::Es256][rng.gen_range(0..3)];
        let keypair = match alg {
            Algorithm::Es256 => suite.generate_keypair(alg.id(), rng).unwrap(),
            _ => suite.keypair_from_seed(alg, &rng.gen()).unwrap(),
        };
        let mut user_handle = vec![0u8; rng.gen_range(1..=64)];
        rng.fill_bytes(&mut user_handle);
        state.credentials.push(Credential {
            credential_id: rng.gen(),
            rp_id: format!("rp{}.example", rng.gen_range(0..4)),
            user_handle,
            user_name: format!("user-{i}-{}", rng.gen::<u16>()),
            keypair,
            sign_count: rng.gen(),
            created_at: rng.gen_range(0..4_000_000_000_000),
        });
    }
    state
}

fn persistence() -> Outcome {
    const STATES: usize = 100;
    let mut rng = rng(8);
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut mixed = 0;
    let mut rejected = 0;
    for i in 0..STATES {
        let path = dir.path().join(format!("s{i}.store"));
        let state = random_state(&mut rng);
        let algs: std::collections::HashSet<_> = state.credentials.iter().map(|c| c.algorithm()).collect();
        mixed += usize::from(algs.len() > 1);
        let mut store = CredentialStore::open_or_create(&path, AAGUID).map_err(|e| e.to_string())?;
        store.replace_state(state.clone()).map_err(|e| e.to_string())?;
        drop(store);
        let loaded = CredentialStore::load(&path).map_err(|e| format!("state {i}: {e}"))?;
        ensure(loaded.state() == &state, || format!("state {i} differs after reload"))?;

        #[cfg(unix)]
        {
            use std::os::unix::fs::PermissionsExt;
            for p in [path.clone(), qey_core::store::key_path(&path)] {
                let mode = std::fs::metadata(&p).map_err(|e| e.to_string())?.permissions().mode() & 0o777;
                ensure(mode == 0o600, || format!("{} has mode {mode:o}", p.display()))?;
            }
        }

        let mut bytes = std::fs::read(&path).map_err(|e| e.to_string())?;
        match i % 3 {
            0 => {
                let at = rng.gen_range(0..bytes.len());
                bytes[at] ^= rng.gen_range(1..=255u8);
            }
            1 => bytes.truncate(rng.gen_range(0..bytes.len())),
            _ => bytes.extend_from_slice(&[0; 4]),
        }
        std::fs::write(&path, &bytes).map_err(|e| e.to_string())?;
        ensure(CredentialStore::load(&path).is_err(), || {
            format!("corrupted state {i} accepted")
        })?;
        rejected += 1;
    }
    ensure(mixed > 0, || "no mixed-algorithm state generated".into())?;
    Ok(format!(
        "{STATES} states round-trip ({mixed} mixed), {rejected} corruptions rejected, mode 600"
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("size conformance", sizes),
        ("end-to-end ceremonies", ceremonies),
        ("attack analysis", attacks),
        ("conformance matrix", conformance),
        ("framing", framing),
        ("FIPS 204 known answers", known_answers),
        ("benchmark methodology", benchmark),
        ("persistence", persistence),
    ];
    let only: Option<usize> = std::env::args().skip(1).find_map(|a| a.parse().ok());
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let n = i + 1;
        if only.is_some_and(|o| o != n) {
            continue;
        }
        let started = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {n} ({name}): PASS [{secs:.1}s] {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n} ({name}): FAIL [{secs:.1}s] {detail}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
