//! Registration and authentication latency over the loopback CTAPHID
//! transport, timed at the device edge: first request frame in to last
//! response frame out.

use std::fmt::{self, Write as _};
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use rand::rngs::StdRng;
use rand::SeedableRng;
use rand_core::CryptoRngCore;
use serde::Serialize;
use statrs::statistics::{Data, Distribution, Max, Median, Min};
use thiserror::Error;

use crate::authenticator::{AlwaysPresent, Authenticator, Event, Observer, CMD_GET_ASSERTION, CMD_MAKE_CREDENTIAL};
use crate::client::{ClientError, WebAuthnClient};
use crate::cose::{Algorithm, AlgorithmId};
use crate::ctaphid::{loopback, HidConnection, HidDevice, HidError, TransactionTiming};
use crate::rp::{RegisteredKey, RegistrationPolicy, RelyingParty, RpError};
use crate::store::{CredentialStore, StoreError};
use crate::webauthn::{Base64Url, UserEntity};

pub const MIN_SAMPLES: usize = 30;
pub const DEFAULT_SAMPLES: usize = 30;
pub const DEFAULT_WARMUP: usize = 5;
const RP_ID: &str = "bench.qey.test";
const ORIGIN: &str = "https://bench.qey.test";
const TIMING_WAIT: Duration = Duration::from_secs(5);

/// Average times measured on the original ARM Cortex-A53 device, in µs.
/// Printed for context only.
pub fn paper_reference_us(function: Function, algorithm: Algorithm) -> f64 {
    match (function, algorithm) {
        (Function::Registration, Algorithm::Es256) => 12251.8,
        (Function::Registration, Algorithm::MlDsa44) => 36069.2,
        (Function::Registration, Algorithm::MlDsa65) => 68086.8,
        (Function::Authentication, Algorithm::Es256) => 3192.7,
        (Function::Authentication, Algorithm::MlDsa44) => 17800.6,
        (Function::Authentication, Algorithm::MlDsa65) => 30675.2,
    }
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("client: {0}")]
    Client(#[from] ClientError),
    #[error("relying party rejected a ceremony: {0}")]
    Rp(#[from] RpError),
    #[error("transport: {0}")]
    Hid(#[from] HidError),
    #[error("store: {0}")]
    Store(#[from] StoreError),
    #[error("device did not record a timing for the transaction")]
    MissingTiming,
    #[error("{function} {algorithm}: edge time {edge:?} does not contain internal crypto time {internal:?}")]
    BoundaryViolation {
        function: Function,
        algorithm: Algorithm,
        edge: Duration,
        internal: Duration,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BenchConfig {
    pub algorithms: Vec<AlgorithmId>,
    pub samples: usize,
    pub warmup: usize,
    /// Credential store file; in memory when `None`.
    pub store_path: Option<PathBuf>,
    /// Seeds the authenticator's RNG for reproducible key material.
    pub seed: Option<u64>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            algorithms: Algorithm::PREFERENCE.iter().map(|a| a.id()).collect(),
            samples: DEFAULT_SAMPLES,
            warmup: DEFAULT_WARMUP,
            store_path: None,
            seed: None,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<Vec<Algorithm>, BenchError> {
        if self.samples < MIN_SAMPLES {
            return Err(BenchError::InvalidConfig(format!(
                "samples must be at least {MIN_SAMPLES}, got {}",
                self.samples
            )));
        }
        if self.algorithms.is_empty() {
            return Err(BenchError::InvalidConfig("no algorithms selected".into()));
        }
        let mut out = Vec::new();
        for &id in &self.algorithms {
            let alg = id
                .supported()
                .map_err(|_| BenchError::InvalidConfig(format!("unsupported algorithm {id}")))?;
            if out.contains(&alg) {
                return Err(BenchError::InvalidConfig(format!("algorithm {id} listed twice")));
            }
            out.push(alg);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Function {
    Registration,
    Authentication,
}

impl fmt::Display for Function {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Function::Registration => "Registration",
            Function::Authentication => "Authentication",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub mean: f64,
    pub median: f64,
    pub stddev: f64,
    pub min: f64,
    pub max: f64,
    pub n: usize,
}

impl Summary {
    pub fn of(samples: &[f64]) -> Summary {
        assert!(!samples.is_empty(), "no samples");
        let data = Data::new(samples.to_vec());
        Summary {
            mean: data.mean().unwrap(),
            median: data.median(),
            stddev: data.std_dev().filter(|s| s.is_finite()).unwrap_or(0.0),
            min: data.min(),
            max: data.max(),
            n: samples.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingRow {
    pub function: Function,
    pub algorithm: Algorithm,
    /// Device-edge transaction time, µs.
    pub edge_us: Summary,
    /// Key generation plus signing inside the authenticator, µs.
    pub crypto_us: Summary,
    pub paper_us: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingReport {
    pub rows: Vec<TimingRow>,
}

impl TimingReport {
    pub fn row(&self, function: Function, algorithm: Algorithm) -> Option<&TimingRow> {
        self.rows
            .iter()
            .find(|r| r.function == function && r.algorithm == algorithm)
    }

    pub const CSV_HEADER: &'static str = "function,algorithm,mean_us,median_us,stddev_us,min_us,max_us,n";

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for r in &self.rows {
            let s = &r.edge_us;
            writeln!(
                out,
                "{},{},{:.1},{:.1},{:.1},{:.1},{:.1},{}",
                r.function, r.algorithm, s.mean, s.median, s.stddev, s.min, s.max, s.n
            )
            .unwrap();
        }
        out
    }

    pub fn to_table(&self) -> String {
        let header = [
            "Function",
            "Algorithm",
            "Average (µs)",
            "Median (µs)",
            "Std dev (µs)",
            "Min (µs)",
            "Max (µs)",
            "n",
            "Crypto (µs)",
            "Paper (ARM Cortex A-53)",
        ];
        let rows: Vec<[String; 10]> = self
            .rows
            .iter()
            .map(|r| {
                let s = &r.edge_us;
                [
                    r.function.to_string(),
                    r.algorithm.to_string(),
                    format!("{:.1}", s.mean),
                    format!("{:.1}", s.median),
                    format!("{:.1}", s.stddev),
                    format!("{:.1}", s.min),
                    format!("{:.1}", s.max),
                    s.n.to_string(),
                    format!("{:.1}", r.crypto_us.mean),
                    format!("{:.1}", r.paper_us),
                ]
            })
            .collect();
        let widths: Vec<usize> = (0..header.len())
            .map(|i| {
                rows.iter()
                    .map(|r| r[i].chars().count())
                    .chain([header[i].chars().count()])
                    .max()
                    .unwrap()
            })
            .collect();
        let line = |cells: &[&str]| {
            let mut s = String::new();
            for (i, c) in cells.iter().enumerate() {
                let pad = widths[i] - c.chars().count();
                if i < 2 {
                    write!(s, "{c}{}  ", " ".repeat(pad)).unwrap();
                } else {
                    write!(s, "{}{c}  ", " ".repeat(pad)).unwrap();
                }
            }
            s.trim_end().to_string() + "\n"
        };
        let mut out = line(&header);
        out += &line(
            &widths
                .iter()
                .map(|w| "-".repeat(*w))
                .collect::<Vec<_>>()
                .iter()
                .map(String::as_str)
                .collect::<Vec<_>>(),
        );
        for r in &rows {
            out += &line(&r.iter().map(String::as_str).collect::<Vec<_>>());
        }
        out
    }
}

impl fmt::Display for TimingReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_table())
    }
}

/// Collects the authenticator's internal crypto timings between transactions.
#[derive(Default)]
struct CryptoClock(Mutex<Duration>);

impl CryptoClock {
    fn take(&self) -> Duration {
        std::mem::take(&mut *self.0.lock().unwrap_or_else(|e| e.into_inner()))
    }
}

impl Observer for CryptoClock {
    fn on_event(&self, event: &Event) {
        if let Event::KeyGenerated { elapsed, .. } | Event::Signed { elapsed, .. } = event {
            *self.0.lock().unwrap_or_else(|e| e.into_inner()) += *elapsed;
        }
    }
}

struct Sample {
    edge: Duration,
    crypto: Duration,
}

/// Runs both benchmarks: all registration rows first, then authentication,
/// each in the configured algorithm order.
pub fn run(config: &BenchConfig) -> Result<TimingReport, BenchError> {
    let algorithms = config.validate()?;
    let store = match &config.store_path {
        Some(path) => {
            if path.exists() {
                return Err(BenchError::InvalidConfig(format!(
                    "{} already exists; benchmarks need a clean store",
                    path.display()
                )));
            }
            CredentialStore::open_or_create(path, crate::authenticator::AAGUID)?
        }
        None => CredentialStore::in_memory(crate::authenticator::AAGUID),
    };
    let rng: Box<dyn CryptoRngCore + Send> = match config.seed {
        Some(seed) => Box::new(StdRng::seed_from_u64(seed)),
        None => Box::new(StdRng::from_entropy()),
    };
    let crypto_clock = Arc::new(CryptoClock::default());
    let authenticator = Authenticator::with_rng(store, rng).with_observer(crypto_clock.clone());

    let (host_end, device_end) = loopback();
    let device = HidDevice::new(device_end, authenticator, Box::new(AlwaysPresent));
    let timings = device.timings();
    let handle = device.spawn();
    let conn = HidConnection::new(host_end);
    let channel = conn.open_channel()?;
    let mut client = WebAuthnClient::new(&channel, ORIGIN);
    let mut transactions = 0usize;

    let mut measure = |expected_cmd: u8, client_op: &mut dyn FnMut() -> Result<(), BenchError>| {
        crypto_clock.take();
        client_op()?;
        let t: TransactionTiming = timings
            .wait_for(transactions, TIMING_WAIT)
            .ok_or(BenchError::MissingTiming)?;
        transactions += 1;
        debug_assert_eq!(t.ctap_command, expected_cmd);
        Ok::<_, BenchError>(Sample {
            edge: t.elapsed,
            crypto: crypto_clock.take(),
        })
    };

    let mut registration = Vec::new();
    let mut keys: Vec<(Algorithm, RegisteredKey, RelyingParty)> = Vec::new();
    for &alg in &algorithms {
        let policy = RegistrationPolicy::new(RP_ID, ORIGIN).with_algorithms(&[alg.id()])?;
        let rp = RelyingParty::new(policy);
        // One user handle per algorithm: re-registration replaces the resident credential.
        let user = UserEntity {
            id: Base64Url(format!("bench-{}", alg.id().0).into_bytes()),
            name: format!("bench-{alg}"),
            display_name: format!("bench {alg}"),
        };
        let mut samples = Vec::with_capacity(config.samples);
        let mut last_key = None;
        for i in 0..config.warmup + config.samples {
            let sample = measure(CMD_MAKE_CREDENTIAL, &mut || {
                let (options, record) = rp.begin_registration(&user, &[]);
                let credential = client.register(&options)?;
                let (key, _) = rp.finish_registration_json(&record, &credential)?;
                last_key = Some(key);
                Ok(())
            })?;
            check_containment(Function::Registration, alg, &sample)?;
            if i >= config.warmup {
                samples.push(sample);
            }
        }
        registration.push(row(Function::Registration, alg, &samples));
        keys.push((alg, last_key.expect("at least one sample"), rp));
    }

    let mut authentication = Vec::new();
    for (alg, key, rp) in &mut keys {
        let mut samples = Vec::with_capacity(config.samples);
        for i in 0..config.warmup + config.samples {
            let sample = measure(CMD_GET_ASSERTION, &mut || {
                let (options, record) = rp.begin_authentication(std::slice::from_ref(&key.credential_id));
                let credential = client.authenticate(&options)?;
                rp.finish_authentication_json(&record, key, &credential)?;
                Ok(())
            })?;
            check_containment(Function::Authentication, *alg, &sample)?;
            if i >= config.warmup {
                samples.push(sample);
            }
        }
        authentication.push(row(Function::Authentication, *alg, &samples));
    }

    drop(client);
    drop(channel);
    drop(conn);
    handle.join();

    registration.extend(authentication);
    Ok(TimingReport { rows: registration })
}

fn check_containment(function: Function, algorithm: Algorithm, s: &Sample) -> Result<(), BenchError> {
    if s.edge > s.crypto {
        Ok(())
    } else {
        Err(BenchError::BoundaryViolation {
            function,
            algorithm,
            edge: s.edge,
            internal: s.crypto,
        })
    }
}

fn micros(d: Duration) -> f64 {
    d.as_secs_f64() * 1e6
}

fn row(function: Function, algorithm: Algorithm, samples: &[Sample]) -> TimingRow {
    let edge: Vec<f64> = samples.iter().map(|s| micros(s.edge)).collect();
    let crypto: Vec<f64> = samples.iter().map(|s| micros(s.crypto)).collect();
    TimingRow {
        function,
        algorithm,
        edge_us: Summary::of(&edge),
        crypto_us: Summary::of(&crypto),
        paper_us: paper_reference_us(function, algorithm),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn too_few_samples_rejected() {
        let config = BenchConfig {
            samples: 10,
            ..BenchConfig::default()
        };
        assert!(matches!(config.validate(), Err(BenchError::InvalidConfig(_))));
        assert!(matches!(run(&config), Err(BenchError::InvalidConfig(_))));
    }

    #[test]
    fn unsupported_or_duplicate_algorithms_rejected() {
        for algs in [
            vec![AlgorithmId::RS256],
            vec![],
            vec![AlgorithmId::ES256, AlgorithmId::ES256],
        ] {
            let config = BenchConfig {
                algorithms: algs,
                ..BenchConfig::default()
            };
            assert!(matches!(config.validate(), Err(BenchError::InvalidConfig(_))));
        }
    }

    #[test]
    fn summary_statistics() {
        let s = Summary::of(&[1.0, 2.0, 3.0, 4.0, 10.0]);
        assert_eq!(s.mean, 4.0);
        assert_eq!(s.median, 3.0);
        assert_eq!((s.min, s.max, s.n), (1.0, 10.0, 5));
        // Sample standard deviation: sqrt(50 / 4).
        assert!((s.stddev - 12.5f64.sqrt()).abs() < 1e-12);
        assert_eq!(Summary::of(&[7.0]).stddev, 0.0);
    }

    #[test]
    fn paper_reference_values() {
        assert_eq!(
            paper_reference_us(Function::Authentication, Algorithm::MlDsa44),
            17800.6
        );
        assert_eq!(paper_reference_us(Function::Registration, Algorithm::Es256), 12251.8);
    }

    fn fake_report() -> TimingReport {
        let s = Summary::of(&[100.0, 200.0]);
        TimingReport {
            rows: vec![
                TimingRow {
                    function: Function::Registration,
                    algorithm: Algorithm::MlDsa44,
                    edge_us: s,
                    crypto_us: s,
                    paper_us: 36069.2,
                },
                TimingRow {
                    function: Function::Authentication,
                    algorithm: Algorithm::Es256,
                    edge_us: s,
                    crypto_us: s,
                    paper_us: 3192.7,
                },
            ],
        }
    }

    #[test]
    fn csv_schema() {
        let csv = fake_report().to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(
            lines[0],
            "function,algorithm,mean_us,median_us,stddev_us,min_us,max_us,n"
        );
        assert_eq!(lines[1], "Registration,ML-DSA-44,150.0,150.0,70.7,100.0,200.0,2");
        assert_eq!(lines.len(), 3);
    }

    #[test]
    fn table_layout() {
        let table = fake_report().to_table();
        let lines: Vec<&str> = table.lines().collect();
        assert!(lines[0].starts_with("Function"));
        assert!(lines[0].contains("Paper (ARM Cortex A-53)"));
        assert!(lines[2].starts_with("Registration    ML-DSA-44"));
        assert!(lines[3].contains("3192.7"));
        assert_eq!(lines.len(), 4);
    }
}
