mod config;
mod store;

use std::io::{self, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use clap::{Args, CommandFactory, Parser, Subcommand};
use mfake_core::biosim::{
    evaluate_labeled_rates, geometric_grid, linear_grid, load_features_csv, sample_population,
    sweep_eer, write_sweep_csv, EerEstimate, SweepResult,
};
use mfake_core::harness::runner::{connect_user, serve_sp, PartyOutcome};
use mfake_core::harness::scenario::{
    genuine_reading, random_tampers, tamper_matrix, TamperCase, MESSAGE_NAMES,
};
use mfake_core::harness::{
    fingerprint, run_session, Deployment, Interceptor, SpInputs, TransportKind, UserInputs,
};
use mfake_core::mffe::SecretBinding;
use mfake_core::par::stream_rng;
use mfake_core::pki::{
    encode_element, sp_keypair, RcState, SpRecord, UserDeviceRecord, UserRegistration,
};
use mfake_core::{Bls12G1, Execution, GroupId, PrimeOrderGroup};
use rand_distr::{Distribution, Normal};

use crate::store::Dirs;

/// Biometric multi-factor key exchange: registration, sessions and test harness.
#[derive(Parser)]
#[command(name = "mfake", version)]
struct Cli {
    /// key=value file supplying any flag of the chosen subcommand
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Create a registration center: signing key, lattice and group parameters
    #[command(args_override_self = true)]
    RcSetup(RcSetupArgs),
    /// Enrol a user (simulated in-person visit) and write the device record
    #[command(args_override_self = true)]
    RegisterUser(RegisterUserArgs),
    /// Certify a service provider key pair
    #[command(args_override_self = true)]
    RegisterSp(RegisterSpArgs),
    /// Run a key exchange in-process, or one side of it over TCP
    #[command(args_override_self = true)]
    RunSession(RunSessionArgs),
    /// Flip bytes of the wire messages and report which party aborts
    #[command(args_override_self = true)]
    TamperTest(TamperArgs),
    /// FMR/FNMR sweep over the basis length, as CSV
    #[command(args_override_self = true)]
    RateSweep(RateSweepArgs),
    /// Add a user's identity commitment to the revocation list
    #[command(args_override_self = true)]
    Revoke(RevokeArgs),
    /// Wall-clock time per protocol step
    #[command(args_override_self = true)]
    Timing(TimingArgs),
}

#[derive(Args)]
struct SeedArg {
    /// Fixes all randomness; drawn from the OS when absent
    #[arg(long)]
    seed: Option<u64>,
}

impl SeedArg {
    fn resolve(&self) -> u64 {
        self.seed.unwrap_or_else(|| {
            let s = rand::random();
            eprintln!("seed: {s}");
            s
        })
    }
}

#[derive(Args)]
struct RcSetupArgs {
    /// Feature dimension
    #[arg(long, default_value_t = 64)]
    n: usize,
    /// Basis length
    #[arg(long, default_value_t = 0.25)]
    d: f64,
    #[arg(long, default_value = "bls12-381-g1")]
    group: GroupId,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[command(flatten)]
    seed: SeedArg,
}

#[derive(Args)]
struct RegisterUserArgs {
    #[arg(long, value_name = "DIR")]
    rc: PathBuf,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// CSV whose first row `label,v1,...,vn` is the enrolment scan; simulated if absent
    #[arg(long, value_name = "FILE")]
    template: Option<PathBuf>,
    /// Spread of simulated templates
    #[arg(long, default_value_t = 1.0)]
    inter_sigma: f64,
    #[command(flatten)]
    seed: SeedArg,
}

#[derive(Args)]
struct RegisterSpArgs {
    #[arg(long, value_name = "DIR")]
    rc: PathBuf,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[command(flatten)]
    seed: SeedArg,
}

#[derive(Args)]
struct RunSessionArgs {
    #[arg(long, value_name = "DIR")]
    rc: PathBuf,
    #[arg(long, value_name = "DIR")]
    user: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    sp: Option<PathBuf>,
    /// mem or tcp (loopback) when both parties run here
    #[arg(long, default_value = "mem")]
    transport: TransportKind,
    /// Serve the SP side on this address
    #[arg(long, value_name = "ADDR", conflicts_with = "connect")]
    listen: Option<String>,
    /// Run the user side against an SP at this address
    #[arg(long, value_name = "ADDR")]
    connect: Option<String>,
    /// Sessions to serve with --listen
    #[arg(long, default_value_t = 1)]
    sessions: usize,
    /// CSV with the fresh scan in its first row
    #[arg(long, value_name = "FILE")]
    reading: Option<PathBuf>,
    /// Gaussian noise per coordinate instead of a reading inside the acceptance region
    #[arg(long, value_name = "SIGMA")]
    reading_noise: Option<f64>,
    /// Use a wrong secret exponent
    #[arg(long)]
    wrong_alpha: bool,
    /// Print full session keys instead of fingerprints
    #[arg(long)]
    unsafe_print_key: bool,
    #[command(flatten)]
    seed: SeedArg,
}

#[derive(Args)]
struct TamperArgs {
    /// Use existing RC/user/SP directories; otherwise a throwaway deployment
    #[arg(long, value_name = "DIR", requires_all = ["user", "sp"])]
    rc: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    user: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    sp: Option<PathBuf>,
    /// Dimension of the throwaway deployment
    #[arg(long, default_value_t = 16)]
    n: usize,
    #[arg(long, default_value_t = 0.25)]
    d: f64,
    /// Flip every payload byte of every message (default when --random is absent)
    #[arg(long)]
    all_bytes: bool,
    /// Additionally flip one random bit in this many fresh sessions
    #[arg(long, value_name = "COUNT")]
    random: Option<usize>,
    /// XOR mask for --all-bytes, e.g. 0xff or 1
    #[arg(long, default_value = "0xff", value_parser = parse_mask)]
    mask: u8,
    /// Print only the summary
    #[arg(long)]
    quiet: bool,
    #[command(flatten)]
    seed: SeedArg,
}

fn parse_mask(s: &str) -> Result<u8, String> {
    let v = match s.strip_prefix("0x") {
        Some(h) => u8::from_str_radix(h, 16),
        None => s.parse(),
    }
    .map_err(|e| e.to_string())?;
    if v == 0 {
        return Err("mask must be nonzero".into());
    }
    Ok(v)
}

#[derive(Args)]
struct RateSweepArgs {
    #[arg(long, default_value_t = 64)]
    n: usize,
    #[arg(long, default_value_t = 1000)]
    identities: usize,
    #[arg(long, default_value_t = 1.0)]
    inter_sigma: f64,
    #[arg(long, default_value_t = 0.02)]
    noise_sigma: f64,
    #[arg(long, default_value_t = 0.05)]
    d_min: f64,
    #[arg(long, default_value_t = 0.5)]
    d_max: f64,
    #[arg(long, default_value_t = 10)]
    points: usize,
    /// Genuine and impostor pairs per grid point
    #[arg(long, default_value_t = 10_000)]
    pairs: u64,
    /// Space grid points geometrically instead of linearly
    #[arg(long)]
    geometric: bool,
    /// Labelled feature CSV; all pairs are evaluated instead of a synthetic population
    #[arg(long, value_name = "FILE")]
    features: Option<PathBuf>,
    /// Output CSV; stdout if absent
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Run on the calling thread only
    #[arg(long)]
    sequential: bool,
    #[command(flatten)]
    seed: SeedArg,
}

#[derive(Args)]
struct RevokeArgs {
    #[arg(long, value_name = "DIR")]
    rc: PathBuf,
    /// Revoke the commitment in this user directory
    #[arg(long, value_name = "DIR", required_unless_present = "com_u")]
    user: Option<PathBuf>,
    /// Revoke this hex-encoded compressed commitment
    #[arg(long, value_name = "HEX", conflicts_with = "user")]
    com_u: Option<String>,
}

#[derive(Args)]
struct TimingArgs {
    #[arg(long, value_name = "DIR", requires_all = ["user", "sp"])]
    rc: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    user: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    sp: Option<PathBuf>,
    #[arg(long, default_value_t = 1024)]
    n: usize,
    #[arg(long, default_value_t = 0.25)]
    d: f64,
    #[arg(long, default_value_t = 5)]
    sessions: usize,
    #[command(flatten)]
    seed: SeedArg,
}

fn main() -> ExitCode {
    let args = match config::expand(std::env::args_os().collect(), &Cli::command()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let cli = Cli::parse_from(args);
    match dispatch(cli.cmd) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

/// `Ok(false)` means the command ran but the outcome was an abort.
fn dispatch(cmd: Cmd) -> Result<bool> {
    match cmd {
        Cmd::RcSetup(a) => rc_setup(a),
        Cmd::RegisterUser(a) => register_user(a),
        Cmd::RegisterSp(a) => register_sp(a),
        Cmd::RunSession(a) => run(a),
        Cmd::TamperTest(a) => tamper(a),
        Cmd::RateSweep(a) => rate_sweep(a),
        Cmd::Revoke(a) => revoke(a),
        Cmd::Timing(a) => timing(a),
    }
}

fn rc_setup(a: RcSetupArgs) -> Result<bool> {
    let mut rng = stream_rng(a.seed.resolve(), 0);
    let rc = RcState::setup(a.n, a.d, a.group, &mut rng)?;
    store::save_rc(&a.out, &rc)?;
    let revoked = a.out.join(store::REVOKED);
    if !revoked.exists() {
        store::write_atomic(&revoked, b"")?;
    }
    println!(
        "registration center in {} (group {}, n={}, d={})",
        a.out.display(),
        a.group,
        a.n,
        a.d
    );
    Ok(true)
}

fn register_user(a: RegisterUserArgs) -> Result<bool> {
    let rc = store::load_rc(&a.rc)?;
    let mut rng = stream_rng(a.seed.resolve(), 0);
    let n = rc.params().dim();
    let template = match &a.template {
        Some(path) => store::first_row(path)?,
        None => {
            let dist = Normal::new(0.0, a.inter_sigma).context("inter-sigma")?;
            (0..n).map(|_| dist.sample(&mut rng)).collect()
        }
    };
    if template.len() != n {
        bail!(
            "template has {} values, system dimension is {n}",
            template.len()
        );
    }
    let secret = SecretBinding::<Bls12G1>::random(&mut rng);
    let (credential, sketch) = rc.register_user(
        &UserRegistration {
            in_person_verified: true,
            z: secret.z,
            template: &template,
        },
        &mut rng,
    )?;
    let device = UserDeviceRecord {
        alpha: secret.alpha,
        uid: credential.uid,
        sketch,
        credential,
    };
    store::save_device(&a.out, &device, &template)?;
    store::save_rc(&a.rc, &rc)?;
    println!("user {} registered in {}", device.uid, a.out.display());
    Ok(true)
}

fn register_sp(a: RegisterSpArgs) -> Result<bool> {
    let rc = store::load_rc(&a.rc)?;
    let mut rng = stream_rng(a.seed.resolve(), 0);
    let (gamma, g_gamma, h_gamma) = sp_keypair(rc.params(), &mut rng);
    let record = SpRecord {
        gamma,
        credential: rc.register_sp(g_gamma, h_gamma)?,
    };
    store::save_sp(&a.out, &record)?;
    store::save_rc(&a.rc, &rc)?;
    println!(
        "service provider {} registered in {}",
        record.credential.sid,
        a.out.display()
    );
    Ok(true)
}

fn need<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    p.as_deref()
        .with_context(|| format!("--{flag} is required here"))
}

fn print_party(o: &PartyOutcome, unsafe_print_key: bool) {
    println!("{o}");
    if let (true, Some(k)) = (unsafe_print_key, &o.session_key) {
        println!("{} key: {}", o.role, hex::encode(k));
    }
}

fn run(a: RunSessionArgs) -> Result<bool> {
    let seed = a.seed.resolve();
    let params = store::load_params(&a.rc)?;
    let revocations = store::revocation_list(&a.rc)?;

    if let Some(addr) = &a.listen {
        let record = store::load_sp(need(&a.sp, "sp")?)?;
        let sp = SpInputs {
            params: &params,
            record: &record,
            revocations: &revocations,
        };
        let listener = TcpListener::bind(addr).with_context(|| format!("binding {addr}"))?;
        println!("listening on {}", listener.local_addr()?);
        io::stdout().flush()?;
        let mut all_ok = true;
        serve_sp(&listener, &sp, seed, Some(a.sessions), |o, _| {
            all_ok &= o.accepted();
            print_party(o, a.unsafe_print_key);
        })?;
        return Ok(all_ok);
    }

    let user_dir = need(&a.user, "user")?;
    let device = store::load_device(user_dir)?;
    let template = store::load_template(user_dir)?;
    let mut rng = stream_rng(seed, 2);
    let reading = match (&a.reading, a.reading_noise) {
        (Some(path), _) => store::first_row(path)?,
        (None, Some(sigma)) => {
            let noise = Normal::new(0.0, sigma).context("reading-noise")?;
            template
                .iter()
                .map(|t| t + noise.sample(&mut rng))
                .collect()
        }
        (None, None) => genuine_reading(&template, params.basis_length(), &mut rng),
    };
    let alpha = if a.wrong_alpha {
        device.alpha + Bls12G1::scalar_one()
    } else {
        device.alpha
    };
    let user = UserInputs {
        params: &params,
        device: &device,
        reading: &reading,
        alpha,
        revocations: &revocations,
    };

    if let Some(addr) = &a.connect {
        let (outcome, _) = connect_user(addr.as_str(), &user, &Interceptor::passthrough(), seed)
            .with_context(|| format!("connecting to {addr}"))?;
        print_party(&outcome, a.unsafe_print_key);
        return Ok(outcome.accepted());
    }

    let record = store::load_sp(need(&a.sp, "sp")?)?;
    let sp = SpInputs {
        params: &params,
        record: &record,
        revocations: &revocations,
    };
    let out = run_session(&user, &sp, a.transport, &Interceptor::passthrough(), seed)?;
    print_party(&out.user, a.unsafe_print_key);
    print_party(&out.sp, a.unsafe_print_key);
    match out.established_key() {
        Some(k) => {
            println!("keys match: {}", fingerprint(&k));
            Ok(true)
        }
        None => {
            println!("no session key established");
            Ok(false)
        }
    }
}

fn deployment(
    rc: &Option<PathBuf>,
    user: &Option<PathBuf>,
    sp: &Option<PathBuf>,
    n: usize,
    d: f64,
    seed: u64,
) -> Result<Deployment> {
    match (rc, user, sp) {
        (Some(rc), Some(user), Some(sp)) => Dirs {
            rc: rc.clone(),
            user: user.clone(),
            sp: sp.clone(),
        }
        .load_deployment(),
        _ => Ok(Deployment::provision(n, d, &mut stream_rng(seed, 100))?),
    }
}

fn describe(case: &TamperCase) -> String {
    let o = &case.outcome;
    let mut why = Vec::new();
    for p in [&o.user, &o.sp] {
        if let (Some(r), Some(at)) = (p.abort, p.failed_at) {
            why.push(format!("{} at {at}: {r}", p.role));
        }
    }
    format!(
        "{} offset {:3} mask {:#04x}: {} {}",
        MESSAGE_NAMES[case.message],
        case.offset,
        case.mask,
        if case.rejected() {
            "rejected,"
        } else {
            "NOT REJECTED,"
        },
        if why.is_empty() {
            "no abort".to_string()
        } else {
            format!(
                "aborted by {} ({})",
                case.aborting_parties(),
                why.join("; ")
            )
        }
    )
}

fn tamper(a: TamperArgs) -> Result<bool> {
    let seed = a.seed.resolve();
    let dep = deployment(&a.rc, &a.user, &a.sp, a.n, a.d, seed)?;
    let reference = dep.honest_session(seed);
    if !reference.both_accepted() {
        bail!("untampered reference session failed: {reference:?}");
    }
    let exec = Execution::default();
    let mut cases = Vec::new();
    if a.all_bytes || a.random.is_none() {
        cases.extend(tamper_matrix(&dep, seed, a.mask, exec));
    }
    if let Some(count) = a.random {
        cases.extend(random_tampers(&dep, seed ^ 0x5eed, count, exec));
    }
    let rejected = cases.iter().filter(|c| c.rejected()).count();
    for c in &cases {
        if !a.quiet || !c.rejected() {
            println!("{}", describe(c));
        }
    }
    println!(
        "coverage: {rejected}/{} rejected ({:.2}%)",
        cases.len(),
        100.0 * rejected as f64 / cases.len().max(1) as f64
    );
    Ok(rejected == cases.len())
}

fn print_eer(sweep: &SweepResult) {
    match sweep.eer {
        EerEstimate::Crossing { d, rate } => eprintln!("EER {rate:.6} at d={d:.6}"),
        EerEstimate::NoCrossing => eprintln!("EER: no crossing on this grid"),
    }
}

fn rate_sweep(a: RateSweepArgs) -> Result<bool> {
    let exec = if a.sequential {
        Execution::Sequential
    } else {
        Execution::default()
    };
    let grid = if a.geometric {
        if a.d_min <= 0.0 {
            bail!("--geometric needs a positive --d-min");
        }
        geometric_grid(a.d_min, a.d_max, a.points)
    } else {
        linear_grid(a.d_min, a.d_max, a.points)
    };
    if grid.is_empty() {
        bail!("--points must be positive");
    }
    let sweep = match &a.features {
        Some(path) => {
            let samples =
                load_features_csv(path).with_context(|| format!("reading {}", path.display()))?;
            let reports = grid
                .iter()
                .map(|&d| evaluate_labeled_rates(&samples, d, exec))
                .collect::<Result<Vec<_>, _>>()?;
            let eer = mfake_core::biosim::estimate_eer(&reports);
            SweepResult { reports, eer }
        }
        None => {
            let seed = a.seed.resolve();
            let pop = sample_population(
                a.n,
                a.identities,
                a.inter_sigma,
                a.noise_sigma,
                &mut stream_rng(seed, 0),
            )?;
            sweep_eer(&pop, &grid, a.pairs, &mut stream_rng(seed, 1), exec)?
        }
    };
    match &a.out {
        Some(path) => {
            let mut buf = Vec::new();
            write_sweep_csv(&sweep.reports, &mut buf)?;
            store::write_atomic(path, &buf)?;
        }
        None => write_sweep_csv(&sweep.reports, io::stdout().lock())?,
    }
    print_eer(&sweep);
    Ok(true)
}

fn revoke(a: RevokeArgs) -> Result<bool> {
    let mut list = store::revocation_list(&a.rc)?;
    let bytes = match (&a.user, &a.com_u) {
        (Some(dir), _) => encode_element(&store::load_device(dir)?.credential.com_u).to_vec(),
        (None, Some(h)) => {
            let b = hex::decode(h.trim()).context("--com-u is not hex")?;
            if Bls12G1::decode(&b).is_none() {
                bail!("--com-u is not a valid compressed group element");
            }
            b
        }
        (None, None) => bail!("give --user or --com-u"),
    };
    if list.revoke(&bytes)? {
        println!("revoked {}", hex::encode(&bytes));
    } else {
        println!("already revoked {}", hex::encode(&bytes));
    }
    Ok(true)
}

fn ms(d: Duration) -> String {
    format!("{:.3} ms", d.as_secs_f64() * 1e3)
}

fn timing(a: TimingArgs) -> Result<bool> {
    let seed = a.seed.resolve();
    let dep = deployment(&a.rc, &a.user, &a.sp, a.n, a.d, seed)?;
    let mut steps: Vec<(&'static str, Duration)> = Vec::new();
    let (mut user_total, mut sp_total, mut wall) = (Duration::ZERO, Duration::ZERO, Duration::ZERO);
    let mut ok = true;
    for i in 0..a.sessions.max(1) {
        let start = Instant::now();
        let out = dep.honest_session(seed.wrapping_add(i as u64));
        wall += start.elapsed();
        ok &= out.both_accepted();
        user_total += out.timings.user_total();
        sp_total += out.timings.sp_total();
        for (name, d) in out.timings.user.iter().chain(&out.timings.sp) {
            match steps.iter_mut().find(|s| s.0 == *name) {
                Some(s) => s.1 += *d,
                None => steps.push((name, *d)),
            }
        }
    }
    let k = a.sessions.max(1) as u32;
    println!("n={} sessions={k}", dep.dim());
    for (name, d) in &steps {
        println!("{name:12} {}", ms(*d / k));
    }
    println!("{:12} {}", "user total", ms(user_total / k));
    println!("{:12} {}", "sp total", ms(sp_total / k));
    println!("{:12} {}", "wall", ms(wall / k));
    Ok(ok)
}
