//! Ready-made deployments and adversarial scenarios.

use rand::{CryptoRng, Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};

use super::interceptor::{Action, Interceptor};
use super::runner::{run_session, SessionOutcome, SpInputs, UserInputs};
use super::transport::TransportKind;
use crate::group::{Bls12G1, GroupId, PrimeOrderGroup};
use crate::mffe::SecretBinding;
use crate::par::{stream_rng, Execution};
use crate::pki::{
    sp_keypair, PkiError, RcState, RevocationList, SpRecord, UserDeviceRecord, UserRegistration,
};
use crate::protocol::{Mu2, Phase, SpSession, UserSession, MS1_LEN, MS2_LEN, MU1_LEN, MU2_LEN};

pub const PAYLOAD_LENS: [usize; 4] = [MU1_LEN, MS1_LEN, MU2_LEN, MS2_LEN];
pub const MESSAGE_NAMES: [&str; 4] = ["MU1", "MS1", "MU2", "MS2"];

/// An RC with one registered user and one registered SP.
pub struct Deployment {
    pub rc: RcState,
    pub device: UserDeviceRecord,
    pub template: Vec<f64>,
    pub sp: SpRecord,
    pub revocations: RevocationList,
}

impl Deployment {
    /// Template coordinates are standard normal.
    pub fn provision<R: RngCore + CryptoRng>(
        n: usize,
        d: f64,
        rng: &mut R,
    ) -> Result<Self, PkiError> {
        let rc = RcState::setup(n, d, GroupId::Bls12381G1, rng)?;
        let template: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        let secret = SecretBinding::<Bls12G1>::random(rng);
        let (credential, sketch) = rc.register_user(
            &UserRegistration {
                in_person_verified: true,
                z: secret.z,
                template: &template,
            },
            rng,
        )?;
        let device = UserDeviceRecord {
            alpha: secret.alpha,
            uid: credential.uid,
            sketch,
            credential,
        };
        let (gamma, g_gamma, h_gamma) = sp_keypair(rc.params(), rng);
        let sp = SpRecord {
            gamma,
            credential: rc.register_sp(g_gamma, h_gamma)?,
        };
        Ok(Self {
            rc,
            device,
            template,
            sp,
            revocations: RevocationList::in_memory(),
        })
    }

    pub fn dim(&self) -> usize {
        self.template.len()
    }

    /// A reading strictly inside the packing ball of the template's cell.
    pub fn genuine_reading<R: RngCore + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        genuine_reading(&self.template, self.rc.params().basis_length(), rng)
    }

    pub fn user_inputs<'a>(&'a self, reading: &'a [f64]) -> UserInputs<'a> {
        UserInputs {
            params: self.rc.params(),
            device: &self.device,
            reading,
            alpha: self.device.alpha,
            revocations: &self.revocations,
        }
    }

    pub fn sp_inputs(&self) -> SpInputs<'_> {
        SpInputs {
            params: self.rc.params(),
            record: &self.sp,
            revocations: &self.revocations,
        }
    }

    /// Honest session over memory with a fresh genuine reading.
    pub fn honest_session(&self, seed: u64) -> SessionOutcome {
        self.session(seed, &Interceptor::passthrough())
    }

    /// One in-memory session; the reading is drawn from stream 2 of `seed`.
    pub fn session(&self, seed: u64, interceptor: &Interceptor) -> SessionOutcome {
        let reading = self.genuine_reading(&mut stream_rng(seed, 2));
        run_session(
            &self.user_inputs(&reading),
            &self.sp_inputs(),
            TransportKind::Memory,
            interceptor,
            seed,
        )
        .expect("in-memory transport does not fail to open")
    }
}

/// `template + e` with `|e| < 0.45 d`, uniformly random direction.
pub fn genuine_reading<R: RngCore + ?Sized>(template: &[f64], d: f64, rng: &mut R) -> Vec<f64> {
    let dir: Vec<f64> = template
        .iter()
        .map(|_| StandardNormal.sample(rng))
        .collect();
    let norm = dir
        .iter()
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
        .max(f64::MIN_POSITIVE);
    let radius = 0.45 * d * rng.gen::<f64>();
    template
        .iter()
        .zip(&dir)
        .map(|(t, v)| t + radius * v / norm)
        .collect()
}

#[derive(Debug, Clone)]
pub struct TamperCase {
    pub message: usize,
    pub offset: usize,
    pub mask: u8,
    pub outcome: SessionOutcome,
}

impl TamperCase {
    /// At least one party aborted and no key escaped.
    pub fn rejected(&self) -> bool {
        self.outcome.any_aborted() && self.outcome.no_key_exposed()
    }

    pub fn aborting_parties(&self) -> &'static str {
        match (self.outcome.user.aborted(), self.outcome.sp.aborted()) {
            (true, true) => "both",
            (true, false) => "user",
            (false, true) => "sp",
            (false, false) => "none",
        }
    }
}

/// Every payload byte of every message, XORed with `mask`, against the
/// session fixed by `seed`.
pub fn tamper_matrix(dep: &Deployment, seed: u64, mask: u8, exec: Execution) -> Vec<TamperCase> {
    let positions: Vec<(usize, usize)> = PAYLOAD_LENS
        .iter()
        .enumerate()
        .flat_map(|(m, &len)| (0..len).map(move |o| (m, o)))
        .collect();
    exec.map(positions.len(), |i| {
        let (message, offset) = positions[i];
        TamperCase {
            message,
            offset,
            mask,
            outcome: dep.session(seed, &Interceptor::flip(message, offset, mask)),
        }
    })
}

/// `count` fresh sessions, each with one random bit flipped in one random
/// message. Case `i` draws from stream `i` of `seed`.
pub fn random_tampers(
    dep: &Deployment,
    seed: u64,
    count: usize,
    exec: Execution,
) -> Vec<TamperCase> {
    exec.map(count, |i| {
        let mut rng = stream_rng(seed, i as u64);
        let message = rng.gen_range(0..4);
        let offset = rng.gen_range(0..PAYLOAD_LENS[message]);
        let mask = 1u8 << rng.gen_range(0..8);
        let session_seed = rng.next_u64();
        TamperCase {
            message,
            offset,
            mask,
            outcome: dep.session(session_seed, &Interceptor::flip(message, offset, mask)),
        }
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplayReport {
    /// The second SP session answered the replayed MU1 with an MS1.
    pub replayed_mu1_answered: bool,
    /// Phase after feeding it the MU2 recorded from the first session.
    pub stale_mu2_phase: Phase,
    /// Phase after an MU2 forged without the user's factors.
    pub forged_mu2_phase: Phase,
    /// Phase of a user session fed a replayed MS1 and then a replayed MS2.
    pub replayed_ms2_user_phase: Phase,
}

impl ReplayReport {
    pub fn no_replay_accepted(&self) -> bool {
        self.replayed_mu1_answered
            && self.stale_mu2_phase == Phase::Aborted
            && self.forged_mu2_phase == Phase::Aborted
            && self.replayed_ms2_user_phase == Phase::Aborted
    }
}

/// Records an honest session, then replays its messages into new sessions.
pub fn replay_scenario(dep: &Deployment, seed: u64) -> ReplayReport {
    let params = dep.rc.params();
    let mut rng = stream_rng(seed, 0);
    let reading = dep.genuine_reading(&mut rng);

    let (mut user, mu1) = UserSession::start(params, &dep.device);
    let mut sp = SpSession::new(params, &dep.sp);
    let ms1 = sp
        .on_mu1(&mu1, &dep.revocations, &mut rng)
        .expect("honest MU1");
    let mu2 = user
        .on_ms1(
            &ms1,
            &reading,
            &dep.device.alpha,
            &dep.revocations,
            &mut rng,
        )
        .expect("honest MS1");
    let ms2 = sp.on_mu2(&mu2).expect("honest MU2");
    user.on_ms2(&ms2).expect("honest MS2");

    let mut replay_sp = SpSession::new(params, &dep.sp);
    let answered = replay_sp.on_mu1(&mu1, &dep.revocations, &mut rng).is_ok();
    let _ = replay_sp.on_mu2(&mu2);

    let mut forged_sp = SpSession::new(params, &dep.sp);
    let _ = forged_sp.on_mu1(&mu1, &dep.revocations, &mut rng);
    let forged = Mu2 {
        u: crate::pki::encode_element(&(params.g() * Bls12G1::random_scalar(&mut rng))),
        auth_u: rng.gen(),
    };
    let _ = forged_sp.on_mu2(&forged);

    let (mut replay_user, _) = UserSession::start(params, &dep.device);
    let _ = replay_user.on_ms1(
        &ms1,
        &reading,
        &dep.device.alpha,
        &dep.revocations,
        &mut rng,
    );
    let _ = replay_user.on_ms2(&ms2);

    ReplayReport {
        replayed_mu1_answered: answered,
        stale_mu2_phase: replay_sp.phase(),
        forged_mu2_phase: forged_sp.phase(),
        replayed_ms2_user_phase: replay_user.phase(),
    }
}

/// A session where the adversary resends MU1 in place of MU2.
pub fn replay_interceptor() -> Interceptor {
    Interceptor::default().with(2, Action::Replay(0))
}
