//! Registration center: system setup, credential issuance and revocation.
//!
//! The RC keeps only its ECDSA signing key, an issuance counter and the
//! revocation list. Everything it computes while registering a user (the
//! template, `beta`, the sketch) is handed to the user and then dropped.

use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use bls12_381::{G1Projective, Scalar};
use indexmap::IndexSet;
use p256::ecdsa::signature::{Signer, Verifier};
use p256::ecdsa::{Signature, SigningKey, VerifyingKey};
use rand::{CryptoRng, RngCore};

use crate::group::{Bls12G1, GroupId, PrimeOrderGroup};
use crate::mffe::{MffeError, MffeParams, SketchPackage};

pub const H_DOMAIN_TAG: &[u8] = b"mfake/h/v1";
pub const A_DOMAIN_TAG: &[u8] = b"mfake/a/v1";
pub const B_DOMAIN_TAG: &[u8] = b"mfake/b/v1";

pub const FILE_VERSION: u8 = 1;
pub const SIGNATURE_LEN: usize = 64;
pub const ELEMENT_LEN: usize = 48;
pub const USER_CREDENTIAL_LEN: usize = 1 + 8 + ELEMENT_LEN + SIGNATURE_LEN;
pub const SP_CREDENTIAL_LEN: usize = 1 + 8 + 2 * ELEMENT_LEN + SIGNATURE_LEN;

#[derive(Debug, thiserror::Error)]
pub enum PkiError {
    #[error("unsupported group {0}; the key exchange runs over bls12-381-g1")]
    UnsupportedGroup(GroupId),
    #[error(transparent)]
    Mffe(#[from] MffeError),
    #[error("identity was not verified in person")]
    IdentityNotVerified,
    #[error("invalid group element: {0}")]
    InvalidElement(&'static str),
    #[error("malformed {what}: {reason}")]
    Malformed { what: &'static str, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn malformed(what: &'static str, reason: impl Into<String>) -> PkiError {
    PkiError::Malformed {
        what,
        reason: reason.into(),
    }
}

pub fn scalar_to_be(s: &Scalar) -> [u8; 32] {
    Bls12G1::scalar_to_be(s)
}

pub fn encode_element(e: &G1Projective) -> [u8; ELEMENT_LEN] {
    Bls12G1::encode_fixed(e)
}

/// Verifies a 64-byte `r || s` ECDSA-P256 signature.
pub fn verify_signature(vk: &VerifyingKey, msg: &[u8], sig: &[u8; SIGNATURE_LEN]) -> bool {
    match Signature::from_slice(sig) {
        Ok(sig) => vk.verify(msg, &sig).is_ok(),
        Err(_) => false,
    }
}

pub fn user_signed_message(uid: u64, com_u: &[u8; ELEMENT_LEN]) -> Vec<u8> {
    let mut m = Vec::with_capacity(8 + ELEMENT_LEN);
    m.extend_from_slice(&uid.to_be_bytes());
    m.extend_from_slice(com_u);
    m
}

pub fn sp_signed_message(
    sid: u64,
    com_s: &[u8; ELEMENT_LEN],
    h_gamma: &[u8; ELEMENT_LEN],
) -> Vec<u8> {
    let mut m = Vec::with_capacity(8 + 2 * ELEMENT_LEN);
    m.extend_from_slice(&sid.to_be_bytes());
    m.extend_from_slice(com_s);
    m.extend_from_slice(h_gamma);
    m
}

/// Public system parameters every party needs.
#[derive(Debug, Clone)]
pub struct SystemParams {
    mffe: MffeParams<Bls12G1>,
    basis_length: f64,
    h: G1Projective,
    a: G1Projective,
    b: G1Projective,
    vk: VerifyingKey,
}

impl SystemParams {
    pub fn new(n: usize, d: f64, vk: VerifyingKey) -> Result<Self, PkiError> {
        Ok(Self {
            mffe: MffeParams::setup(n, d)?,
            basis_length: d,
            h: Bls12G1::hash_to_element(H_DOMAIN_TAG),
            a: Bls12G1::hash_to_element(A_DOMAIN_TAG),
            b: Bls12G1::hash_to_element(B_DOMAIN_TAG),
            vk,
        })
    }

    pub fn mffe(&self) -> &MffeParams<Bls12G1> {
        &self.mffe
    }

    pub fn dim(&self) -> usize {
        self.mffe.dim()
    }

    pub fn basis_length(&self) -> f64 {
        self.basis_length
    }

    pub fn g(&self) -> G1Projective {
        Bls12G1::generator()
    }

    pub fn h(&self) -> G1Projective {
        self.h
    }

    pub fn a(&self) -> G1Projective {
        self.a
    }

    pub fn b(&self) -> G1Projective {
        self.b
    }

    pub fn verifying_key(&self) -> &VerifyingKey {
        &self.vk
    }

    /// Flat `key=value` text.
    pub fn to_text(&self) -> String {
        format!(
            "group={}\nn={}\nd={}\nvk={}\n",
            GroupId::Bls12381G1,
            self.dim(),
            self.basis_length,
            hex::encode(self.vk.to_encoded_point(true).as_bytes())
        )
    }

    pub fn from_text(text: &str) -> Result<Self, PkiError> {
        let (mut group, mut n, mut d, mut vk) = (None, None, None, None);
        for line in text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
        {
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| malformed("parameters", format!("line without '=': {line}")))?;
            match key.trim() {
                "group" => group = Some(value.trim().to_owned()),
                "n" => {
                    n = Some(
                        value
                            .trim()
                            .parse::<usize>()
                            .map_err(|e| malformed("parameters", e.to_string()))?,
                    )
                }
                "d" => {
                    d = Some(
                        value
                            .trim()
                            .parse::<f64>()
                            .map_err(|e| malformed("parameters", e.to_string()))?,
                    )
                }
                "vk" => {
                    let bytes = hex::decode(value.trim())
                        .map_err(|e| malformed("parameters", e.to_string()))?;
                    vk = Some(
                        VerifyingKey::from_sec1_bytes(&bytes)
                            .map_err(|e| malformed("parameters", e.to_string()))?,
                    );
                }
                other => return Err(malformed("parameters", format!("unknown key {other}"))),
            }
        }
        let group: GroupId = group
            .ok_or_else(|| malformed("parameters", "missing group"))?
            .parse()
            .map_err(|e: crate::group::UnsupportedGroup| malformed("parameters", e.to_string()))?;
        if group != GroupId::Bls12381G1 {
            return Err(PkiError::UnsupportedGroup(group));
        }
        Self::new(
            n.ok_or_else(|| malformed("parameters", "missing n"))?,
            d.ok_or_else(|| malformed("parameters", "missing d"))?,
            vk.ok_or_else(|| malformed("parameters", "missing vk"))?,
        )
    }
}

/// Signed identity commitment `com_u = g^alpha * h^beta`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UserCredential {
    pub uid: u64,
    pub com_u: G1Projective,
    pub sigma: [u8; SIGNATURE_LEN],
}

impl UserCredential {
    pub fn signed_message(&self) -> Vec<u8> {
        user_signed_message(self.uid, &encode_element(&self.com_u))
    }

    pub fn verify(&self, vk: &VerifyingKey) -> bool {
        verify_signature(vk, &self.signed_message(), &self.sigma)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(USER_CREDENTIAL_LEN);
        out.push(FILE_VERSION);
        out.extend_from_slice(&self.uid.to_be_bytes());
        out.extend_from_slice(&encode_element(&self.com_u));
        out.extend_from_slice(&self.sigma);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, PkiError> {
        if bytes.len() != USER_CREDENTIAL_LEN {
            return Err(malformed(
                "user credential",
                format!("length {}", bytes.len()),
            ));
        }
        if bytes[0] != FILE_VERSION {
            return Err(malformed(
                "user credential",
                format!("version {}", bytes[0]),
            ));
        }
        let com_u = Bls12G1::decode(&bytes[9..57]).ok_or(PkiError::InvalidElement("com_u"))?;
        Ok(Self {
            uid: u64::from_be_bytes(bytes[1..9].try_into().unwrap()),
            com_u,
            sigma: bytes[57..].try_into().unwrap(),
        })
    }
}

/// Signed service-provider credential: `com_s = g^gamma`, `H = h^gamma`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpCredential {
    pub sid: u64,
    pub com_s: G1Projective,
    pub h_gamma: G1Projective,
    pub sigma: [u8; SIGNATURE_LEN],
}

impl SpCredential {
    pub fn signed_message(&self) -> Vec<u8> {
        sp_signed_message(
            self.sid,
            &encode_element(&self.com_s),
            &encode_element(&self.h_gamma),
        )
    }

    pub fn verify(&self, vk: &VerifyingKey) -> bool {
        verify_signature(vk, &self.signed_message(), &self.sigma)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(SP_CREDENTIAL_LEN);
        out.push(FILE_VERSION);
        out.extend_from_slice(&self.sid.to_be_bytes());
        out.extend_from_slice(&encode_element(&self.com_s));
        out.extend_from_slice(&encode_element(&self.h_gamma));
        out.extend_from_slice(&self.sigma);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, PkiError> {
        if bytes.len() != SP_CREDENTIAL_LEN {
            return Err(malformed(
                "sp credential",
                format!("length {}", bytes.len()),
            ));
        }
        if bytes[0] != FILE_VERSION {
            return Err(malformed("sp credential", format!("version {}", bytes[0])));
        }
        Ok(Self {
            sid: u64::from_be_bytes(bytes[1..9].try_into().unwrap()),
            com_s: Bls12G1::decode(&bytes[9..57]).ok_or(PkiError::InvalidElement("com_s"))?,
            h_gamma: Bls12G1::decode(&bytes[57..105]).ok_or(PkiError::InvalidElement("H"))?,
            sigma: bytes[105..].try_into().unwrap(),
        })
    }
}

/// What registration writes to the user's device.
#[derive(Clone)]
pub struct UserDeviceRecord {
    pub alpha: Scalar,
    pub uid: u64,
    pub sketch: SketchPackage<Bls12G1>,
    pub credential: UserCredential,
}

impl fmt::Debug for UserDeviceRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("UserDeviceRecord")
            .field("uid", &self.uid)
            .field("credential", &self.credential)
            .finish_non_exhaustive()
    }
}

impl UserDeviceRecord {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = vec![FILE_VERSION];
        out.extend_from_slice(&scalar_to_be(&self.alpha));
        out.extend_from_slice(&self.uid.to_be_bytes());
        out.extend_from_slice(&self.sketch.to_bytes());
        out.extend_from_slice(&self.credential.to_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, PkiError> {
        if bytes.len() < 41 || bytes[0] != FILE_VERSION {
            return Err(malformed("device record", "bad header"));
        }
        let alpha = Bls12G1::scalar_from_be(bytes[1..33].try_into().unwrap())
            .ok_or_else(|| malformed("device record", "non-canonical alpha"))?;
        let uid = u64::from_be_bytes(bytes[33..41].try_into().unwrap());
        let (sketch, used) = SketchPackage::<Bls12G1>::read_from(&bytes[41..])?;
        let credential = UserCredential::from_bytes(&bytes[41 + used..])?;
        if credential.uid != uid {
            return Err(malformed("device record", "uid does not match credential"));
        }
        Ok(Self {
            alpha,
            uid,
            sketch,
            credential,
        })
    }
}

/// What a service provider keeps after registration.
#[derive(Clone)]
pub struct SpRecord {
    pub gamma: Scalar,
    pub credential: SpCredential,
}

impl fmt::Debug for SpRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SpRecord")
            .field("credential", &self.credential)
            .finish_non_exhaustive()
    }
}

impl SpRecord {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = vec![FILE_VERSION];
        out.extend_from_slice(&scalar_to_be(&self.gamma));
        out.extend_from_slice(&self.credential.to_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, PkiError> {
        if bytes.len() != 33 + SP_CREDENTIAL_LEN || bytes[0] != FILE_VERSION {
            return Err(malformed("sp record", "bad header or length"));
        }
        Ok(Self {
            gamma: Bls12G1::scalar_from_be(bytes[1..33].try_into().unwrap())
                .ok_or_else(|| malformed("sp record", "non-canonical gamma"))?,
            credential: SpCredential::from_bytes(&bytes[33..])?,
        })
    }
}

/// Inputs the RC collects from a user at the registration desk.
#[derive(Debug, Clone, Copy)]
pub struct UserRegistration<'a> {
    /// Set once the desk officer has checked the identity documents.
    pub in_person_verified: bool,
    /// The user's binding `g^alpha`.
    pub z: G1Projective,
    /// Freshly scanned feature vector.
    pub template: &'a [f64],
}

pub struct RcState {
    sk: SigningKey,
    params: SystemParams,
    next_id: AtomicU64,
}

impl fmt::Debug for RcState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RcState")
            .field("params", &self.params)
            .field("next_id", &self.next_id)
            .finish_non_exhaustive()
    }
}

impl RcState {
    pub fn setup<R: RngCore + CryptoRng>(
        n: usize,
        d: f64,
        group: GroupId,
        rng: &mut R,
    ) -> Result<Self, PkiError> {
        if group != GroupId::Bls12381G1 {
            return Err(PkiError::UnsupportedGroup(group));
        }
        let sk = SigningKey::random(rng);
        let params = SystemParams::new(n, d, *sk.verifying_key())?;
        Ok(Self {
            sk,
            params,
            next_id: AtomicU64::new(1),
        })
    }

    pub fn params(&self) -> &SystemParams {
        &self.params
    }

    pub fn sign(&self, msg: &[u8]) -> [u8; SIGNATURE_LEN] {
        let sig: Signature = self.sk.sign(msg);
        sig.to_bytes().into()
    }

    fn issue_id(&self) -> u64 {
        self.next_id.fetch_add(1, Ordering::Relaxed)
    }

    /// Runs the extractor on the scanned template and certifies `com_u = z * h^beta`.
    pub fn register_user<R: RngCore + CryptoRng + ?Sized>(
        &self,
        request: &UserRegistration<'_>,
        rng: &mut R,
    ) -> Result<(UserCredential, SketchPackage<Bls12G1>), PkiError> {
        if !request.in_person_verified {
            return Err(PkiError::IdentityNotVerified);
        }
        if request.z == Bls12G1::identity() {
            return Err(PkiError::InvalidElement("z"));
        }
        let (beta, sketch) = self.params.mffe.gen(request.template, &request.z, rng)?;
        let com_u = request.z + self.params.h * beta.0;
        let uid = self.issue_id();
        let sigma = self.sign(&user_signed_message(uid, &encode_element(&com_u)));
        Ok((UserCredential { uid, com_u, sigma }, sketch))
    }

    /// Certifies an SP's `(G, H)` pair as submitted.
    pub fn register_sp(
        &self,
        com_s: G1Projective,
        h_gamma: G1Projective,
    ) -> Result<SpCredential, PkiError> {
        if com_s == Bls12G1::identity() {
            return Err(PkiError::InvalidElement("G"));
        }
        if h_gamma == Bls12G1::identity() {
            return Err(PkiError::InvalidElement("H"));
        }
        let sid = self.issue_id();
        let sigma = self.sign(&sp_signed_message(
            sid,
            &encode_element(&com_s),
            &encode_element(&h_gamma),
        ));
        Ok(SpCredential {
            sid,
            com_s,
            h_gamma,
            sigma,
        })
    }

    /// `version || signing key (32) || next id (u64 BE)`.
    pub fn secret_to_bytes(&self) -> Vec<u8> {
        let mut out = vec![FILE_VERSION];
        out.extend_from_slice(&self.sk.to_bytes());
        out.extend_from_slice(&self.next_id.load(Ordering::Relaxed).to_be_bytes());
        out
    }

    pub fn from_parts(secret: &[u8], params: SystemParams) -> Result<Self, PkiError> {
        if secret.len() != 41 || secret[0] != FILE_VERSION {
            return Err(malformed("rc secret", "bad header or length"));
        }
        let sk = SigningKey::from_slice(&secret[1..33])
            .map_err(|e| malformed("rc secret", e.to_string()))?;
        if sk.verifying_key() != params.verifying_key() {
            return Err(malformed(
                "rc secret",
                "signing key does not match published vk",
            ));
        }
        Ok(Self {
            sk,
            params,
            next_id: AtomicU64::new(u64::from_be_bytes(secret[33..].try_into().unwrap())),
        })
    }
}

/// Helper for service providers: sample `gamma` and form `(G, H) = (g^gamma, h^gamma)`.
pub fn sp_keypair<R: RngCore + CryptoRng + ?Sized>(
    params: &SystemParams,
    rng: &mut R,
) -> (Scalar, G1Projective, G1Projective) {
    let gamma = loop {
        let s = Bls12G1::random_scalar(rng);
        if s != Scalar::zero() {
            break s;
        }
    };
    (gamma, params.g() * gamma, params.h() * gamma)
}

/// Public list of revoked identity commitments, stored as newline-delimited hex.
#[derive(Debug, Clone, Default)]
pub struct RevocationList {
    path: Option<PathBuf>,
    entries: IndexSet<Vec<u8>>,
}

impl RevocationList {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Loads the list at `path`; a missing file is an empty list.
    pub fn open(path: impl AsRef<Path>) -> io::Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut entries = IndexSet::new();
        match fs::read_to_string(&path) {
            Ok(text) => {
                for (lineno, line) in text.lines().enumerate() {
                    let line = line.trim();
                    if line.is_empty() {
                        continue;
                    }
                    let bytes = hex::decode(line).map_err(|e| {
                        io::Error::new(
                            io::ErrorKind::InvalidData,
                            format!("{}:{}: {e}", path.display(), lineno + 1),
                        )
                    })?;
                    entries.insert(bytes);
                }
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => {}
            Err(e) => return Err(e),
        }
        Ok(Self {
            path: Some(path),
            entries,
        })
    }

    pub fn is_revoked(&self, encoding: &[u8]) -> bool {
        self.entries.contains(encoding)
    }

    pub fn is_element_revoked(&self, e: &G1Projective) -> bool {
        self.is_revoked(&encode_element(e))
    }

    /// Adds an entry and persists the list. Returns whether the entry was new.
    pub fn revoke(&mut self, encoding: &[u8]) -> io::Result<bool> {
        if !self.entries.insert(encoding.to_vec()) {
            return Ok(false);
        }
        self.persist()?;
        Ok(true)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &[u8]> {
        self.entries.iter().map(Vec::as_slice)
    }

    fn persist(&self) -> io::Result<()> {
        let Some(path) = &self.path else {
            return Ok(());
        };
        let mut tmp = path.clone().into_os_string();
        tmp.push(".tmp");
        let tmp = PathBuf::from(tmp);
        {
            let mut file = fs::File::create(&tmp)?;
            for entry in &self.entries {
                writeln!(file, "{}", hex::encode(entry))?;
            }
            file.sync_all()?;
        }
        fs::rename(&tmp, path)
    }
}
