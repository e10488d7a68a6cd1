//! Drives both parties of one session over a transport.

use std::fmt;
use std::io;
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::thread;
use std::time::{Duration, Instant};

use bls12_381::Scalar;
use rand::{CryptoRng, RngCore};

use super::interceptor::{Intercepted, Interceptor};
use super::transport::{mem_pair, Channel, TcpChannel, TransportKind, DEFAULT_TIMEOUT};
use super::wire::{decode, encode};
use crate::par::stream_rng;
use crate::pki::{RevocationList, SpRecord, SystemParams, UserDeviceRecord};
use crate::protocol::{AbortReason, Phase, Role, SpSession, UserSession, WireMessage};

pub struct UserInputs<'a> {
    pub params: &'a SystemParams,
    pub device: &'a UserDeviceRecord,
    pub reading: &'a [f64],
    pub alpha: Scalar,
    pub revocations: &'a RevocationList,
}

pub struct SpInputs<'a> {
    pub params: &'a SystemParams,
    pub record: &'a SpRecord,
    pub revocations: &'a RevocationList,
}

/// First 8 bytes of a key, hex.
pub fn fingerprint(key: &[u8; 32]) -> String {
    hex::encode(&key[..8])
}

#[derive(Clone, PartialEq, Eq)]
pub struct PartyOutcome {
    pub role: Role,
    pub phase: Phase,
    pub abort: Option<AbortReason>,
    /// Name of the message being sent or handled when the party aborted.
    pub failed_at: Option<&'static str>,
    pub session_key: Option<[u8; 32]>,
}

impl PartyOutcome {
    pub fn accepted(&self) -> bool {
        self.phase == Phase::Accepted
    }

    pub fn aborted(&self) -> bool {
        self.phase == Phase::Aborted
    }
}

impl fmt::Debug for PartyOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PartyOutcome")
            .field("role", &self.role)
            .field("phase", &self.phase)
            .field("abort", &self.abort)
            .field("failed_at", &self.failed_at)
            .field(
                "key_fingerprint",
                &self.session_key.as_ref().map(fingerprint),
            )
            .finish()
    }
}

impl fmt::Display for PartyOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.role, self.phase)?;
        if let (Some(reason), Some(at)) = (self.abort, self.failed_at) {
            write!(f, " at {at} ({reason})")?;
        }
        if let Some(k) = &self.session_key {
            write!(f, " key {}", fingerprint(k))?;
        }
        Ok(())
    }
}

pub type StepTimings = Vec<(&'static str, Duration)>;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Timings {
    pub user: StepTimings,
    pub sp: StepTimings,
}

impl Timings {
    pub fn user_total(&self) -> Duration {
        self.user.iter().map(|t| t.1).sum()
    }

    pub fn sp_total(&self) -> Duration {
        self.sp.iter().map(|t| t.1).sum()
    }
}

#[derive(Debug, Clone)]
pub struct SessionOutcome {
    pub user: PartyOutcome,
    pub sp: PartyOutcome,
    /// Compute time per protocol step, excluding transport waits.
    pub timings: Timings,
}

impl SessionOutcome {
    pub fn both_accepted(&self) -> bool {
        self.user.accepted() && self.sp.accepted()
    }

    pub fn any_aborted(&self) -> bool {
        self.user.aborted() || self.sp.aborted()
    }

    /// The agreed key, if both parties accepted with the same key.
    pub fn established_key(&self) -> Option<[u8; 32]> {
        match (&self.user.session_key, &self.sp.session_key) {
            (Some(a), Some(b)) if self.both_accepted() && a == b => Some(*a),
            _ => None,
        }
    }

    /// No agreed key came out of the session and no aborted party holds one.
    pub fn no_key_exposed(&self) -> bool {
        self.established_key().is_none()
            && [&self.user, &self.sp]
                .iter()
                .all(|p| !p.aborted() || p.session_key.is_none())
    }

    /// Outcome without timings, for comparing runs.
    pub fn record(&self) -> (PartyOutcome, PartyOutcome) {
        (self.user.clone(), self.sp.clone())
    }
}

fn recv_message<C: Channel>(chan: &mut C) -> Result<WireMessage, AbortReason> {
    let frame = chan.recv().map_err(|_| AbortReason::Transport)?;
    decode(&frame).map_err(|_| AbortReason::MalformedMessage)
}

fn send_message<C: Channel>(chan: &mut C, msg: &WireMessage) -> Result<(), AbortReason> {
    chan.send(&encode(msg)).map_err(|_| AbortReason::Transport)
}

fn timed<T>(timings: &mut StepTimings, step: &'static str, f: impl FnOnce() -> T) -> T {
    let t = Instant::now();
    let out = f();
    timings.push((step, t.elapsed()));
    out
}

/// Runs the user's side to completion; closes the channel on exit.
pub fn run_user<C: Channel, R: RngCore + CryptoRng>(
    chan: &mut C,
    inputs: &UserInputs<'_>,
    rng: &mut R,
) -> (PartyOutcome, StepTimings) {
    let mut timings = StepTimings::new();
    let (mut session, mu1) = timed(&mut timings, "user-start", || {
        UserSession::start(inputs.params, inputs.device)
    });
    let failed_at = user_steps(chan, &mut session, mu1, inputs, rng, &mut timings).err();
    chan.close();
    let outcome = PartyOutcome {
        role: session.role(),
        phase: session.phase(),
        abort: session.abort_reason(),
        failed_at,
        session_key: session.session_key().copied(),
    };
    (outcome, timings)
}

fn user_steps<C: Channel, R: RngCore + CryptoRng>(
    chan: &mut C,
    session: &mut UserSession<'_>,
    mu1: crate::protocol::Mu1,
    inputs: &UserInputs<'_>,
    rng: &mut R,
    timings: &mut StepTimings,
) -> Result<(), &'static str> {
    if let Err(r) = send_message(chan, &WireMessage::Mu1(mu1)) {
        session.abort(r);
        return Err("MU1");
    }
    let ms1 = match recv_message(chan) {
        Ok(WireMessage::Ms1(m)) => m,
        Ok(_) => {
            session.abort(AbortReason::UnexpectedMessage);
            return Err("MS1");
        }
        Err(r) => {
            session.abort(r);
            return Err("MS1");
        }
    };
    let mu2 = timed(timings, "user-ms1", || {
        session.on_ms1(&ms1, inputs.reading, &inputs.alpha, inputs.revocations, rng)
    })
    .map_err(|_| "MS1")?;
    if let Err(r) = send_message(chan, &WireMessage::Mu2(mu2)) {
        session.abort(r);
        return Err("MU2");
    }
    let ms2 = match recv_message(chan) {
        Ok(WireMessage::Ms2(m)) => m,
        Ok(_) => {
            session.abort(AbortReason::UnexpectedMessage);
            return Err("MS2");
        }
        Err(r) => {
            session.abort(r);
            return Err("MS2");
        }
    };
    timed(timings, "user-ms2", || session.on_ms2(&ms2)).map_err(|_| "MS2")
}

/// Runs the service provider's side to completion; closes the channel on exit.
pub fn run_sp<C: Channel, R: RngCore + CryptoRng>(
    chan: &mut C,
    inputs: &SpInputs<'_>,
    rng: &mut R,
) -> (PartyOutcome, StepTimings) {
    let mut timings = StepTimings::new();
    let mut session = SpSession::new(inputs.params, inputs.record);
    let failed_at = sp_steps(chan, &mut session, inputs, rng, &mut timings).err();
    chan.close();
    let outcome = PartyOutcome {
        role: session.role(),
        phase: session.phase(),
        abort: session.abort_reason(),
        failed_at,
        session_key: session.session_key().copied(),
    };
    (outcome, timings)
}

fn sp_steps<C: Channel, R: RngCore + CryptoRng>(
    chan: &mut C,
    session: &mut SpSession<'_>,
    inputs: &SpInputs<'_>,
    rng: &mut R,
    timings: &mut StepTimings,
) -> Result<(), &'static str> {
    let mu1 = match recv_message(chan) {
        Ok(WireMessage::Mu1(m)) => m,
        Ok(_) => {
            session.abort(AbortReason::UnexpectedMessage);
            return Err("MU1");
        }
        Err(r) => {
            session.abort(r);
            return Err("MU1");
        }
    };
    let ms1 = timed(timings, "sp-mu1", || {
        session.on_mu1(&mu1, inputs.revocations, rng)
    })
    .map_err(|_| "MU1")?;
    if let Err(r) = send_message(chan, &WireMessage::Ms1(ms1)) {
        session.abort(r);
        return Err("MS1");
    }
    let mu2 = match recv_message(chan) {
        Ok(WireMessage::Mu2(m)) => m,
        Ok(_) => {
            session.abort(AbortReason::UnexpectedMessage);
            return Err("MU2");
        }
        Err(r) => {
            session.abort(r);
            return Err("MU2");
        }
    };
    let ms2 = timed(timings, "sp-mu2", || session.on_mu2(&mu2)).map_err(|_| "MU2")?;
    // The SP has accepted; a lost MS2 only affects the user.
    let _ = send_message(chan, &WireMessage::Ms2(ms2));
    Ok(())
}

/// Runs one session with both parties in this process. The user draws from
/// stream 0 of `seed` and the SP from stream 1, so memory and TCP runs with
/// the same seed produce the same outcome record.
pub fn run_session(
    user: &UserInputs<'_>,
    sp: &SpInputs<'_>,
    kind: TransportKind,
    interceptor: &Interceptor,
    seed: u64,
) -> io::Result<SessionOutcome> {
    run_session_with_timeout(user, sp, kind, interceptor, seed, DEFAULT_TIMEOUT)
}

pub fn run_session_with_timeout(
    user: &UserInputs<'_>,
    sp: &SpInputs<'_>,
    kind: TransportKind,
    interceptor: &Interceptor,
    seed: u64,
    timeout: Duration,
) -> io::Result<SessionOutcome> {
    match kind {
        TransportKind::Memory => {
            let (user_end, sp_end) = mem_pair(timeout);
            Ok(thread::scope(|scope| {
                let sp_thread = scope.spawn(move || {
                    let mut chan = sp_end;
                    run_sp(&mut chan, sp, &mut stream_rng(seed, 1))
                });
                let mut chan = Intercepted::new(user_end, interceptor);
                let (user_outcome, user_timings) =
                    run_user(&mut chan, user, &mut stream_rng(seed, 0));
                drop(chan);
                let (sp_outcome, sp_timings) = sp_thread.join().expect("sp thread panicked");
                SessionOutcome {
                    user: user_outcome,
                    sp: sp_outcome,
                    timings: Timings {
                        user: user_timings,
                        sp: sp_timings,
                    },
                }
            }))
        }
        TransportKind::Tcp => {
            let listener = TcpListener::bind("127.0.0.1:0")?;
            let addr = listener.local_addr()?;
            thread::scope(|scope| {
                let sp_thread = scope.spawn(move || -> io::Result<_> {
                    let (stream, _) = listener.accept()?;
                    let mut chan = TcpChannel::new(stream, timeout)?;
                    Ok(run_sp(&mut chan, sp, &mut stream_rng(seed, 1)))
                });
                let user_result = TcpStream::connect(addr)
                    .and_then(|s| TcpChannel::new(s, timeout))
                    .map(|chan| {
                        let mut chan = Intercepted::new(chan, interceptor);
                        run_user(&mut chan, user, &mut stream_rng(seed, 0))
                    });
                let sp_result = sp_thread.join().expect("sp thread panicked");
                let (user_outcome, user_timings) = user_result?;
                let (sp_outcome, sp_timings) = sp_result?;
                Ok(SessionOutcome {
                    user: user_outcome,
                    sp: sp_outcome,
                    timings: Timings {
                        user: user_timings,
                        sp: sp_timings,
                    },
                })
            })
        }
    }
}

/// Serves SP sessions on `listener`, one per connection, in sequence.
/// Connection `i` uses stream `2i + 1` of `seed`. Stops after `limit`
/// sessions if given.
pub fn serve_sp(
    listener: &TcpListener,
    sp: &SpInputs<'_>,
    seed: u64,
    limit: Option<usize>,
    mut on_outcome: impl FnMut(&PartyOutcome, &StepTimings),
) -> io::Result<()> {
    let mut served = 0usize;
    while limit.is_none_or(|l| served < l) {
        let (stream, _) = listener.accept()?;
        let mut chan = TcpChannel::new(stream, DEFAULT_TIMEOUT)?;
        let mut rng = stream_rng(seed, 2 * served as u64 + 1);
        let (outcome, timings) = run_sp(&mut chan, sp, &mut rng);
        on_outcome(&outcome, &timings);
        served += 1;
    }
    Ok(())
}

/// Connects to a listening SP and runs the user side with stream 0 of `seed`.
pub fn connect_user<A: ToSocketAddrs>(
    addr: A,
    user: &UserInputs<'_>,
    interceptor: &Interceptor,
    seed: u64,
) -> io::Result<(PartyOutcome, StepTimings)> {
    let chan = TcpChannel::new(TcpStream::connect(addr)?, DEFAULT_TIMEOUT)?;
    let mut chan = Intercepted::new(chan, interceptor);
    Ok(run_user(&mut chan, user, &mut stream_rng(seed, 0)))
}
