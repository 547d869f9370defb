use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use qey_core::authenticator::{AlwaysPresent, AAGUID};
use qey_core::bench::{self, BenchConfig, TimingReport};
use qey_core::client::{self, WebAuthnClient};
use qey_core::ctaphid::device::SharedPresence;
use qey_core::ctaphid::{loopback, DeviceHandle, HidChannel, HidConnection, HidDevice, LoopbackEnd};
use qey_core::rp::{RegisteredKey, RegistrationPolicy, RelyingParty, VerificationReport};
use qey_core::webauthn::{Base64Url, UserEntity};
use qey_core::{AlgorithmId, Authenticator, CredentialStore};

#[derive(Parser)]
#[command(
    name = "qey",
    version,
    about = "Post-quantum FIDO2 authenticator emulator and benchmark harness"
)]
struct Cli {
    /// Credential store file. Relying-party state is kept beside it.
    #[arg(long, env = "QEY_STORE", default_value = "qey.store", global = true)]
    store: PathBuf,

    /// Approve every user-presence request without prompting.
    #[arg(long, global = true)]
    auto_presence: bool,

    #[arg(long, default_value = "example.com", global = true)]
    rp_id: String,

    /// Defaults to https://<rp-id>.
    #[arg(long, global = true)]
    origin: Option<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Register a new credential.
    Register {
        /// COSE algorithm ids in preference order, e.g. -48 or -49,-7.
        #[arg(
            long,
            value_delimiter = ',',
            allow_hyphen_values = true,
            default_value = "-48,-49,-7"
        )]
        alg: Vec<i64>,
        #[arg(long, default_value = "alice")]
        user: String,
        /// Print the verification report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Authenticate with a previously registered credential.
    Authenticate {
        #[arg(long, default_value = "alice")]
        user: String,
        #[arg(long)]
        json: bool,
    },
    /// Time registration and authentication over the loopback transport.
    Bench {
        #[arg(
            long,
            value_delimiter = ',',
            allow_hyphen_values = true,
            default_value = "-48,-49,-7"
        )]
        algorithms: Vec<i64>,
        #[arg(long, default_value_t = bench::DEFAULT_SAMPLES)]
        samples: usize,
        #[arg(long, default_value_t = bench::DEFAULT_WARMUP)]
        warmup: usize,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
        /// Seed the authenticator RNG.
        #[arg(long)]
        seed: Option<u64>,
        /// Store file for the benchmark; must not exist. A temporary file by default.
        #[arg(long)]
        bench_store: Option<PathBuf>,
    },
    /// Walk through getInfo, registration and two authentications.
    Demo {
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "-48")]
        alg: Vec<i64>,
        #[arg(long, default_value = "alice")]
        user: String,
    },
    /// Show the authenticator's getInfo response.
    Info,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Table,
    Csv,
}

/// Relying-party state persisted next to the credential store.
#[derive(Default, Serialize, Deserialize)]
struct RpState {
    users: Vec<UserRecord>,
}

#[derive(Serialize, Deserialize)]
struct UserRecord {
    rp_id: String,
    name: String,
    keys: Vec<RegisteredKey>,
}

impl RpState {
    fn path(store: &Path) -> PathBuf {
        let mut name = store.file_name().unwrap_or_default().to_os_string();
        name.push(".rp.json");
        store.with_file_name(name)
    }

    fn load(store: &Path) -> Result<Self> {
        let path = Self::path(store);
        match std::fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes).with_context(|| format!("reading {}", path.display())),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(Self::default()),
            Err(e) => Err(e).with_context(|| format!("reading {}", path.display())),
        }
    }

    fn save(&self, store: &Path) -> Result<()> {
        let path = Self::path(store);
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, serde_json::to_vec_pretty(self)?)?;
        std::fs::rename(&tmp, &path).with_context(|| format!("writing {}", path.display()))
    }

    fn user(&mut self, rp_id: &str, name: &str) -> &mut UserRecord {
        let idx = match self.users.iter().position(|u| u.rp_id == rp_id && u.name == name) {
            Some(i) => i,
            None => {
                self.users.push(UserRecord {
                    rp_id: rp_id.into(),
                    name: name.into(),
                    keys: Vec::new(),
                });
                self.users.len() - 1
            }
        };
        &mut self.users[idx]
    }
}

fn user_entity(rp_id: &str, name: &str) -> UserEntity {
    // Stable per (rp, user) so re-registration replaces the resident credential.
    let digest = qey_core::crypto::sha256(format!("{rp_id}\0{name}").as_bytes());
    UserEntity {
        id: Base64Url(digest[..16].to_vec()),
        name: name.into(),
        display_name: name.into(),
    }
}

fn prompt_presence(rp_id: &str) -> bool {
    let mut err = io::stderr();
    let _ = write!(
        err,
        "[qey] {rp_id} requests user presence. Press Enter to approve, or type n to deny: "
    );
    let _ = err.flush();
    let mut line = String::new();
    match io::stdin().lock().read_line(&mut line) {
        Ok(0) | Err(_) => false,
        Ok(_) => !line.trim().eq_ignore_ascii_case("n"),
    }
}

/// An authenticator on its own thread behind a loopback CTAPHID link.
struct Session {
    channel: HidChannel<LoopbackEnd>,
    device: DeviceHandle,
}

impl Session {
    fn open(store: &Path, auto_presence: bool) -> Result<Self> {
        let store = CredentialStore::open_or_create(store, AAGUID)
            .with_context(|| format!("opening credential store {}", store.display()))?;
        let presence: SharedPresence = if auto_presence {
            Box::new(AlwaysPresent)
        } else {
            Box::new(prompt_presence)
        };
        let (host, dev) = loopback();
        let device = HidDevice::new(dev, Authenticator::new(store), presence).spawn();
        let channel = HidConnection::new(host).open_channel()?;
        Ok(Session { channel, device })
    }

    fn close(self) {
        drop(self.channel);
        self.device.join();
    }
}

fn algorithms(ids: &[i64]) -> Vec<AlgorithmId> {
    ids.iter().copied().map(AlgorithmId).collect()
}

fn relying_party(cli: &Cli, algs: &[AlgorithmId]) -> Result<RelyingParty> {
    let origin = cli.origin.clone().unwrap_or_else(|| format!("https://{}", cli.rp_id));
    let policy = RegistrationPolicy::new(&cli.rp_id, &origin).with_algorithms(algs)?;
    Ok(RelyingParty::new(policy))
}

fn origin(cli: &Cli) -> String {
    cli.origin.clone().unwrap_or_else(|| format!("https://{}", cli.rp_id))
}

fn print_report(report: &VerificationReport, json: bool) -> Result<()> {
    if json {
        println!("{}", serde_json::to_string_pretty(report)?);
        return Ok(());
    }
    println!("  rp id:          {}", report.rp_id);
    println!("  credential id:  {}", report.credential_id);
    println!("  algorithm:      {} ({})", report.algorithm, report.algorithm.id().0);
    println!("  public key:     {} bytes", report.public_key_len);
    println!("  signature:      {} bytes", report.signature_len);
    println!("  sign count:     {}", report.sign_count);
    println!(
        "  flags:          UP={} UV={}",
        report.user_present as u8, report.user_verified as u8
    );
    Ok(())
}

fn register(cli: &Cli, session: &Session, algs: &[i64], user: &str, json: bool) -> Result<VerificationReport> {
    let algs = algorithms(algs);
    let rp = relying_party(cli, &algs)?;
    let mut state = RpState::load(&cli.store)?;
    let entity = user_entity(&cli.rp_id, user);
    let (options, record) = rp.begin_registration(&entity, &[]);
    let mut web = WebAuthnClient::new(&session.channel, origin(cli));
    let started = Instant::now();
    let credential = web.register(&options)?;
    let (key, report) = rp.finish_registration_json(&record, &credential)?;
    let elapsed = started.elapsed();
    let record = state.user(&cli.rp_id, user);
    // The authenticator replaced any earlier credential for this user.
    record.keys = vec![key];
    state.save(&cli.store)?;
    if !json {
        println!(
            "registered {user} with {} in {:.1} ms",
            cli.rp_id,
            elapsed.as_secs_f64() * 1e3
        );
    }
    print_report(&report, json)?;
    Ok(report)
}

fn authenticate(cli: &Cli, session: &Session, user: &str, json: bool) -> Result<VerificationReport> {
    let mut state = RpState::load(&cli.store)?;
    let record = state
        .users
        .iter_mut()
        .find(|u| u.rp_id == cli.rp_id && u.name == user && !u.keys.is_empty())
        .ok_or_else(|| anyhow!("{user} has no credential for {}; run `qey register` first", cli.rp_id))?;
    let algs: Vec<AlgorithmId> = record.keys.iter().map(|k| k.algorithm.id()).collect();
    let rp = relying_party(cli, &algs)?;
    let allow: Vec<Vec<u8>> = record.keys.iter().map(|k| k.credential_id.clone()).collect();
    let (options, challenge) = rp.begin_authentication(&allow);
    let mut web = WebAuthnClient::new(&session.channel, origin(cli));
    let started = Instant::now();
    let credential = web.authenticate(&options)?;
    let key = record
        .keys
        .iter_mut()
        .find(|k| k.credential_id == credential.raw_id.0)
        .ok_or_else(|| anyhow!("authenticator answered with an unknown credential"))?;
    let report = rp.finish_authentication_json(&challenge, key, &credential)?;
    let elapsed = started.elapsed();
    state.save(&cli.store)?;
    if !json {
        println!(
            "authenticated {user} at {} in {:.1} ms: signature verified",
            cli.rp_id,
            elapsed.as_secs_f64() * 1e3
        );
    }
    print_report(&report, json)?;
    Ok(report)
}

fn info(session: &Session) -> Result<()> {
    let info = client::get_info(&mut &session.channel)?;
    println!("versions:       {}", info.versions.join(", "));
    println!("aaguid:         {}", hex::encode(info.aaguid));
    let algs: Vec<String> = info
        .algorithms
        .iter()
        .map(|a| format!("{} ({})", a.name().unwrap_or("?"), a.0))
        .collect();
    println!("algorithms:     {}", algs.join(", "));
    println!(
        "pin protocols:  {}",
        info.pin_protocols
            .iter()
            .map(u64::to_string)
            .collect::<Vec<_>>()
            .join(", ")
    );
    let opts: Vec<String> = info.options.iter().map(|(k, v)| format!("{k}={v}")).collect();
    println!("options:        {}", opts.join(", "));
    if let Some(m) = info.max_msg_size {
        println!("max msg size:   {m}");
    }
    Ok(())
}

fn run_bench(
    algorithms: &[i64],
    samples: usize,
    warmup: usize,
    format: Format,
    seed: Option<u64>,
    bench_store: Option<PathBuf>,
) -> Result<()> {
    let tmp;
    let store_path = match bench_store {
        Some(p) => p,
        None => {
            tmp = tempfile::tempdir()?;
            tmp.path().join("bench.store")
        }
    };
    let config = BenchConfig {
        algorithms: self::algorithms(algorithms),
        samples,
        warmup,
        store_path: Some(store_path),
        seed,
    };
    config.validate()?;
    if format == Format::Table {
        eprintln!(
            "running {} warmup + {} samples per function and algorithm...",
            config.warmup, config.samples
        );
    }
    let report: TimingReport = bench::run(&config)?;
    match format {
        Format::Table => print!("{}", report.to_table()),
        Format::Csv => print!("{}", report.to_csv()),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Bench {
            algorithms,
            samples,
            warmup,
            format,
            seed,
            bench_store,
        } => run_bench(algorithms, *samples, *warmup, *format, *seed, bench_store.clone()),
        Command::Register { alg, user, json } => {
            let session = Session::open(&cli.store, cli.auto_presence)?;
            let r = register(cli, &session, alg, user, *json).map(drop);
            session.close();
            r
        }
        Command::Authenticate { user, json } => {
            let session = Session::open(&cli.store, cli.auto_presence)?;
            let r = authenticate(cli, &session, user, *json).map(drop);
            session.close();
            r
        }
        Command::Info => {
            let session = Session::open(&cli.store, cli.auto_presence)?;
            let r = info(&session);
            session.close();
            r
        }
        Command::Demo { alg, user } => {
            let session = Session::open(&cli.store, cli.auto_presence)?;
            let r = demo(cli, &session, alg, user);
            session.close();
            r
        }
    }
}

fn demo(cli: &Cli, session: &Session, alg: &[i64], user: &str) -> Result<()> {
    println!("== getInfo");
    info(session)?;
    if !cli.auto_presence {
        println!("\nEach step below waits for the presence button (Enter).");
    }
    println!("\n== register");
    register(cli, session, alg, user, false)?;
    let mut last = 0;
    for round in 1..=2 {
        println!("\n== authenticate ({round})");
        let report = authenticate(cli, session, user, false)?;
        if report.sign_count <= last {
            bail!("sign count did not advance");
        }
        last = report.sign_count;
    }
    println!("\ndemo complete");
    Ok(())
}
