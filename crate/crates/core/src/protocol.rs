//! Long-term secret derivation and the four-message authenticated key exchange.
//!
//! ```text
//! User                                          Service provider
//!   MU1 = uid || com_u || sig_ru      ------>
//!                                     <------   MS1 = sid || com_s || H || sig_rs || S
//!   MU2 = U || Auth_u                 ------>
//!                                     <------   MS2 = Auth_s
//! ```
//!
//! Both sides hold an explicit phase. Any verification failure moves the
//! session to `Aborted`, which is terminal and wipes nonce, long-term secret
//! and Diffie-Hellman material.

use std::fmt;

use bls12_381::{G1Projective, Scalar};
use rand::{CryptoRng, RngCore};
use sha3::{Digest, Sha3_256};

use crate::group::{Bls12G1, PrimeOrderGroup};
use crate::pki::{
    encode_element, scalar_to_be, sp_signed_message, user_signed_message, verify_signature,
    RevocationList, SpRecord, SystemParams, UserDeviceRecord, ELEMENT_LEN, SIGNATURE_LEN,
};

pub const MU1_LEN: usize = 8 + ELEMENT_LEN + SIGNATURE_LEN;
pub const MS1_LEN: usize = 8 + 3 * ELEMENT_LEN + SIGNATURE_LEN;
pub const MU2_LEN: usize = ELEMENT_LEN + 32;
pub const MS2_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mu1 {
    pub uid: u64,
    pub com_u: [u8; ELEMENT_LEN],
    pub sigma: [u8; SIGNATURE_LEN],
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ms1 {
    pub sid: u64,
    pub com_s: [u8; ELEMENT_LEN],
    pub h_gamma: [u8; ELEMENT_LEN],
    pub sigma: [u8; SIGNATURE_LEN],
    pub s: [u8; ELEMENT_LEN],
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mu2 {
    pub u: [u8; ELEMENT_LEN],
    pub auth_u: [u8; 32],
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ms2 {
    pub auth_s: [u8; 32],
}

/// One protocol message. Fields stay in their encoded form until a party
/// parses them, so malformed points are rejected by the receiving session.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WireMessage {
    Mu1(Mu1),
    Ms1(Ms1),
    Mu2(Mu2),
    Ms2(Ms2),
}

impl WireMessage {
    pub fn name(&self) -> &'static str {
        match self {
            WireMessage::Mu1(_) => "MU1",
            WireMessage::Ms1(_) => "MS1",
            WireMessage::Mu2(_) => "MU2",
            WireMessage::Ms2(_) => "MS2",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    User,
    ServiceProvider,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::User => "user",
            Role::ServiceProvider => "sp",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Init,
    AwaitingPeer,
    Confirmed,
    Accepted,
    Aborted,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Init => "init",
            Phase::AwaitingPeer => "awaiting-peer",
            Phase::Confirmed => "confirmed",
            Phase::Accepted => "accepted",
            Phase::Aborted => "aborted",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AbortReason {
    BadSignature,
    Revoked,
    InvalidElement(&'static str),
    InvalidReading,
    AuthMismatch,
    UnexpectedMessage,
    MalformedMessage,
    Transport,
}

impl fmt::Display for AbortReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AbortReason::BadSignature => f.write_str("signature verification failed"),
            AbortReason::Revoked => f.write_str("credential revoked"),
            AbortReason::InvalidElement(what) => write!(f, "invalid group element {what}"),
            AbortReason::InvalidReading => f.write_str("biometric reading has wrong dimension"),
            AbortReason::AuthMismatch => f.write_str("authentication tag mismatch"),
            AbortReason::UnexpectedMessage => f.write_str("unexpected message type"),
            AbortReason::MalformedMessage => f.write_str("malformed message"),
            AbortReason::Transport => f.write_str("transport failure"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum ProtocolError {
    #[error("message not valid in phase {found} (expected {expected})")]
    WrongPhase { expected: Phase, found: Phase },
    #[error("session aborted: {0}")]
    Aborted(AbortReason),
}

/// The shared long-term secret `Z` as a scalar.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct LongTermSecret(pub Scalar);

impl fmt::Debug for LongTermSecret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("LongTermSecret(..)")
    }
}

/// `Z_u = Hs(com_s^alpha * H^beta)`.
pub fn derive_z_user(
    alpha: &Scalar,
    beta: &Scalar,
    com_s: &G1Projective,
    h_gamma: &G1Projective,
) -> LongTermSecret {
    LongTermSecret(Bls12G1::hash_element_to_scalar(
        &(com_s * alpha + h_gamma * beta),
    ))
}

/// `Z_s = Hs(com_u^gamma)`.
pub fn derive_z_sp(gamma: &Scalar, com_u: &G1Projective) -> LongTermSecret {
    LongTermSecret(Bls12G1::hash_element_to_scalar(&(com_u * gamma)))
}

/// `M = sid || uid || S || U || k`.
fn transcript_bytes(
    sid: u64,
    uid: u64,
    s: &[u8; ELEMENT_LEN],
    u: &[u8; ELEMENT_LEN],
    k: &G1Projective,
) -> Vec<u8> {
    let mut m = Vec::with_capacity(16 + 3 * ELEMENT_LEN);
    m.extend_from_slice(&sid.to_be_bytes());
    m.extend_from_slice(&uid.to_be_bytes());
    m.extend_from_slice(s);
    m.extend_from_slice(u);
    m.extend_from_slice(&encode_element(k));
    m
}

/// `SHA3-256(M || Z || label) mod q`, big-endian.
fn auth_tag(m: &[u8], z: &LongTermSecret, label: u8) -> [u8; 32] {
    let mut hasher = Sha3_256::new();
    hasher.update(m);
    hasher.update(scalar_to_be(&z.0));
    hasher.update([label]);
    let digest: [u8; 32] = hasher.finalize().into();
    scalar_to_be(&Bls12G1::scalar_reduce_be(&digest))
}

fn session_key(m: &[u8]) -> [u8; 32] {
    Sha3_256::digest(m).into()
}

fn ct_eq(a: &[u8], b: &[u8]) -> bool {
    a.len() == b.len() && a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

fn nonzero_scalar<R: RngCore + CryptoRng + ?Sized>(rng: &mut R) -> Scalar {
    loop {
        let s = Bls12G1::random_scalar(rng);
        if s != Scalar::zero() {
            return s;
        }
    }
}

/// Secret per-session values, wiped on abort.
#[derive(Default)]
struct Secrets {
    nonce: Option<Scalar>,
    z: Option<LongTermSecret>,
    dh: Option<G1Projective>,
    transcript: Option<Vec<u8>>,
    key: Option<[u8; 32]>,
}

impl Secrets {
    fn wipe(&mut self) {
        if let Some(n) = self.nonce.as_mut() {
            *n = Scalar::zero();
        }
        if let Some(z) = self.z.as_mut() {
            z.0 = Scalar::zero();
        }
        if let Some(t) = self.transcript.as_mut() {
            t.iter_mut().for_each(|b| *b = 0);
        }
        if let Some(k) = self.key.as_mut() {
            *k = [0; 32];
        }
        *self = Secrets::default();
    }
}

/// State shared by both roles.
struct Core {
    role: Role,
    phase: Phase,
    abort: Option<AbortReason>,
    secrets: Secrets,
}

impl Core {
    fn new(role: Role, phase: Phase) -> Self {
        Self {
            role,
            phase,
            abort: None,
            secrets: Secrets::default(),
        }
    }

    fn expect(&self, expected: Phase) -> Result<(), ProtocolError> {
        if self.phase != expected {
            return Err(ProtocolError::WrongPhase {
                expected,
                found: self.phase,
            });
        }
        Ok(())
    }

    fn abort(&mut self, reason: AbortReason) -> ProtocolError {
        if self.phase != Phase::Aborted {
            self.secrets.wipe();
            self.phase = Phase::Aborted;
            self.abort = Some(reason);
        }
        ProtocolError::Aborted(reason)
    }

    fn session_key(&self) -> Option<&[u8; 32]> {
        match self.phase {
            Phase::Accepted => self.secrets.key.as_ref(),
            _ => None,
        }
    }
}

macro_rules! session_accessors {
    () => {
        pub fn role(&self) -> Role {
            self.core.role
        }

        pub fn phase(&self) -> Phase {
            self.core.phase
        }

        pub fn abort_reason(&self) -> Option<AbortReason> {
            self.core.abort
        }

        /// The 32-byte session key; present only once the session has accepted.
        pub fn session_key(&self) -> Option<&[u8; 32]> {
            self.core.session_key()
        }

        /// Terminates the session, e.g. after an undecodable or unexpected message.
        pub fn abort(&mut self, reason: AbortReason) -> ProtocolError {
            self.core.abort(reason)
        }

        /// Nonce and Diffie-Hellman value, for instrumented tests.
        #[doc(hidden)]
        pub fn debug_dh(&self) -> Option<(Scalar, G1Projective)> {
            Some((self.core.secrets.nonce?, self.core.secrets.dh?))
        }

        #[doc(hidden)]
        pub fn debug_long_term_secret(&self) -> Option<LongTermSecret> {
            self.core.secrets.z
        }
    };
}

pub struct UserSession<'p> {
    params: &'p SystemParams,
    device: &'p UserDeviceRecord,
    core: Core,
}

impl fmt::Debug for UserSession<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("UserSession")
            .field("uid", &self.device.uid)
            .field("phase", &self.core.phase)
            .field("abort", &self.core.abort)
            .finish_non_exhaustive()
    }
}

impl<'p> UserSession<'p> {
    /// Opens a session and produces `MU1`. `MU1` carries no nonce, so it is
    /// identical across sessions of the same device.
    pub fn start(params: &'p SystemParams, device: &'p UserDeviceRecord) -> (Self, Mu1) {
        let msg = Mu1 {
            uid: device.credential.uid,
            com_u: encode_element(&device.credential.com_u),
            sigma: device.credential.sigma,
        };
        let session = Self {
            params,
            device,
            core: Core::new(Role::User, Phase::AwaitingPeer),
        };
        (session, msg)
    }

    session_accessors!();

    /// Verifies the SP credential, reproduces `beta` from the fresh reading
    /// and `alpha`, and answers with `MU2`.
    pub fn on_ms1<R: RngCore + CryptoRng + ?Sized>(
        &mut self,
        msg: &Ms1,
        reading: &[f64],
        alpha: &Scalar,
        revocations: &RevocationList,
        rng: &mut R,
    ) -> Result<Mu2, ProtocolError> {
        self.core.expect(Phase::AwaitingPeer)?;
        if revocations.is_revoked(&msg.com_s) {
            return Err(self.core.abort(AbortReason::Revoked));
        }
        let signed = sp_signed_message(msg.sid, &msg.com_s, &msg.h_gamma);
        if !verify_signature(self.params.verifying_key(), &signed, &msg.sigma) {
            return Err(self.core.abort(AbortReason::BadSignature));
        }
        let Some(com_s) = Bls12G1::decode(&msg.com_s) else {
            return Err(self.core.abort(AbortReason::InvalidElement("com_s")));
        };
        let Some(h_gamma) = Bls12G1::decode(&msg.h_gamma) else {
            return Err(self.core.abort(AbortReason::InvalidElement("H")));
        };
        let Some(s) = Bls12G1::decode(&msg.s) else {
            return Err(self.core.abort(AbortReason::InvalidElement("S")));
        };
        let Ok(beta) = self.params.mffe().rep(reading, alpha, &self.device.sketch) else {
            return Err(self.core.abort(AbortReason::InvalidReading));
        };

        let z = derive_z_user(alpha, &beta.0, &com_s, &h_gamma);
        let r_u = nonzero_scalar(rng);
        let u = self.params.g() * r_u + self.params.b() * z.0;
        let k_u = (s - self.params.a() * z.0) * r_u;
        let u_bytes = encode_element(&u);
        let m_u = transcript_bytes(msg.sid, self.device.credential.uid, &msg.s, &u_bytes, &k_u);
        let auth_u = auth_tag(&m_u, &z, 1);

        self.core.secrets = Secrets {
            nonce: Some(r_u),
            z: Some(z),
            dh: Some(k_u),
            transcript: Some(m_u),
            key: None,
        };
        self.core.phase = Phase::Confirmed;
        Ok(Mu2 { u: u_bytes, auth_u })
    }

    pub fn on_ms2(&mut self, msg: &Ms2) -> Result<(), ProtocolError> {
        self.core.expect(Phase::Confirmed)?;
        let (Some(m_u), Some(z)) = (&self.core.secrets.transcript, &self.core.secrets.z) else {
            return Err(self.core.abort(AbortReason::MalformedMessage));
        };
        if !ct_eq(&auth_tag(m_u, z, 2), &msg.auth_s) {
            return Err(self.core.abort(AbortReason::AuthMismatch));
        }
        self.core.secrets.key = Some(session_key(m_u));
        self.core.phase = Phase::Accepted;
        Ok(())
    }
}

pub struct SpSession<'p> {
    params: &'p SystemParams,
    record: &'p SpRecord,
    core: Core,
    uid: Option<u64>,
    s: Option<[u8; ELEMENT_LEN]>,
}

impl fmt::Debug for SpSession<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SpSession")
            .field("sid", &self.record.credential.sid)
            .field("phase", &self.core.phase)
            .field("abort", &self.core.abort)
            .finish_non_exhaustive()
    }
}

impl<'p> SpSession<'p> {
    pub fn new(params: &'p SystemParams, record: &'p SpRecord) -> Self {
        Self {
            params,
            record,
            core: Core::new(Role::ServiceProvider, Phase::Init),
            uid: None,
            s: None,
        }
    }

    session_accessors!();

    /// Checks revocation and the RC signature on the user's commitment, then
    /// derives `Z_s` and answers with `MS1`.
    pub fn on_mu1<R: RngCore + CryptoRng + ?Sized>(
        &mut self,
        msg: &Mu1,
        revocations: &RevocationList,
        rng: &mut R,
    ) -> Result<Ms1, ProtocolError> {
        self.core.expect(Phase::Init)?;
        if revocations.is_revoked(&msg.com_u) {
            return Err(self.core.abort(AbortReason::Revoked));
        }
        let signed = user_signed_message(msg.uid, &msg.com_u);
        if !verify_signature(self.params.verifying_key(), &signed, &msg.sigma) {
            return Err(self.core.abort(AbortReason::BadSignature));
        }
        let Some(com_u) = Bls12G1::decode(&msg.com_u) else {
            return Err(self.core.abort(AbortReason::InvalidElement("com_u")));
        };
        let z = derive_z_sp(&self.record.gamma, &com_u);
        let r_s = nonzero_scalar(rng);
        let s = self.params.a() * z.0 + self.params.g() * r_s;
        let s_bytes = encode_element(&s);

        self.core.secrets.nonce = Some(r_s);
        self.core.secrets.z = Some(z);
        self.uid = Some(msg.uid);
        self.s = Some(s_bytes);
        self.core.phase = Phase::AwaitingPeer;

        let cred = &self.record.credential;
        Ok(Ms1 {
            sid: cred.sid,
            com_s: encode_element(&cred.com_s),
            h_gamma: encode_element(&cred.h_gamma),
            sigma: cred.sigma,
            s: s_bytes,
        })
    }

    /// Checks `Auth_u`; on success accepts with `K = H(M_s)` and returns `MS2`.
    pub fn on_mu2(&mut self, msg: &Mu2) -> Result<Ms2, ProtocolError> {
        self.core.expect(Phase::AwaitingPeer)?;
        let (Some(r_s), Some(z), Some(uid), Some(s_bytes)) = (
            self.core.secrets.nonce,
            self.core.secrets.z,
            self.uid,
            self.s,
        ) else {
            return Err(self.core.abort(AbortReason::MalformedMessage));
        };
        let Some(u) = Bls12G1::decode(&msg.u) else {
            return Err(self.core.abort(AbortReason::InvalidElement("U")));
        };
        let k_s = (u - self.params.b() * z.0) * r_s;
        let m_s = transcript_bytes(self.record.credential.sid, uid, &s_bytes, &msg.u, &k_s);
        if !ct_eq(&auth_tag(&m_s, &z, 1), &msg.auth_u) {
            return Err(self.core.abort(AbortReason::AuthMismatch));
        }
        let auth_s = auth_tag(&m_s, &z, 2);
        self.core.secrets.dh = Some(k_s);
        self.core.secrets.key = Some(session_key(&m_s));
        self.core.secrets.transcript = Some(m_s);
        self.core.phase = Phase::Accepted;
        Ok(Ms2 { auth_s })
    }
}
