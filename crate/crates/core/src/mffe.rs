//! Multi-factor fuzzy extractor over a triangular lattice.
//!
//! `gen` binds a biometric template `x` and a secret binding `z = g^alpha`
//! into a key `beta`; `rep` recovers `beta` from any reading in the acceptance
//! region of `x` together with `alpha`. The lattice-center vector
//! `floor(B^-1 x)` is hidden in the public sketch under an additive integer
//! keystream whose key only the holder of `alpha` can re-derive from the
//! helper element `w = g^r`.

use std::marker::PhantomData;

use aes::cipher::{KeyIvInit, StreamCipher};
use rand::{CryptoRng, RngCore};
use sha3::{Digest, Sha3_256};

use crate::group::{GroupId, PrimeOrderGroup};
use crate::lattice::{BasisCoords, LatticeBasis, LatticeError, LatticePoint};

type Aes256Ctr = ctr::Ctr128BE<aes::Aes256>;

/// Centers (and decrypted centers) must have magnitude below this bound.
pub const CENTER_BOUND: u64 = 1 << 31;

pub const SKETCH_VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MffeError {
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error("length mismatch: expected {expected}, got {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("secret binding is the identity element")]
    InvalidBinding,
    #[error("center coordinate {index} has magnitude {value}, exceeding 2^31")]
    CenterOverflow { index: usize, value: i64 },
    #[error("malformed sketch: {0}")]
    MalformedSketch(String),
}

/// Public parameters: the lattice basis plus the group (fixed by `G`).
#[derive(Debug, Clone)]
pub struct MffeParams<G: PrimeOrderGroup> {
    basis: LatticeBasis,
    _group: PhantomData<G>,
}

/// Seed of one member of the inner-product universal hash family.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UhSeed<G: PrimeOrderGroup>(pub Vec<G::Scalar>);

impl<G: PrimeOrderGroup> UhSeed<G> {
    pub fn random<R: RngCore + CryptoRng + ?Sized>(len: usize, rng: &mut R) -> Self {
        UhSeed((0..len).map(|_| G::random_scalar(rng)).collect())
    }
}

/// Public per-user helper data written by `gen`.
#[derive(Debug, Clone, PartialEq)]
pub struct SketchPackage<G: PrimeOrderGroup> {
    pub delta: Vec<f64>,
    pub w: G::Element,
    pub uh: UhSeed<G>,
}

/// The extracted key `beta` in `Z_q`.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct ExtractedKey<G: PrimeOrderGroup>(pub G::Scalar);

impl<G: PrimeOrderGroup> std::fmt::Debug for ExtractedKey<G> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("ExtractedKey(..)")
    }
}

/// A user secret `alpha` with its public binding `z = g^alpha`.
#[derive(Clone, Copy)]
pub struct SecretBinding<G: PrimeOrderGroup> {
    pub alpha: G::Scalar,
    pub z: G::Element,
}

impl<G: PrimeOrderGroup> SecretBinding<G> {
    pub fn from_alpha(alpha: G::Scalar) -> Self {
        Self {
            alpha,
            z: G::pow(&G::generator(), &alpha),
        }
    }

    pub fn random<R: RngCore + CryptoRng + ?Sized>(rng: &mut R) -> Self {
        loop {
            let alpha = G::random_scalar(rng);
            if alpha != G::scalar_zero() {
                return Self::from_alpha(alpha);
            }
        }
    }
}

/// 256-bit key of the center-vector keystream.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct StreamKey(pub [u8; 32]);

impl std::fmt::Debug for StreamKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("StreamKey(..)")
    }
}

/// `k = SHA3-256(encode(w) || encode(dh))` where `dh = z^r = w^alpha`.
pub fn derive_stream_key<G: PrimeOrderGroup>(w: &G::Element, dh: &G::Element) -> StreamKey {
    let mut hasher = Sha3_256::new();
    hasher.update(G::encode(w));
    hasher.update(G::encode(dh));
    StreamKey(hasher.finalize().into())
}

/// AES-256-CTR keystream with a zero IV, read as big-endian `i32` words.
fn keystream(key: &StreamKey, len: usize) -> Vec<i32> {
    let mut buf = vec![0u8; len * 4];
    let mut cipher = Aes256Ctr::new(&key.0.into(), &[0u8; 16].into());
    cipher.apply_keystream(&mut buf);
    buf.chunks_exact(4)
        .map(|c| i32::from_be_bytes(c.try_into().unwrap()))
        .collect()
}

pub fn stream_encrypt_ints(key: &StreamKey, v: &[i64]) -> Vec<i64> {
    v.iter()
        .zip(keystream(key, v.len()))
        .map(|(x, s)| x.wrapping_add(s as i64))
        .collect()
}

pub fn stream_decrypt_ints(key: &StreamKey, e: &[i64]) -> Vec<i64> {
    e.iter()
        .zip(keystream(key, e.len()))
        .map(|(x, s)| x.wrapping_sub(s as i64))
        .collect()
}

/// Reduces integer centers into `Z_q`, refusing magnitudes of `2^31` or more.
pub fn encode_centers<G: PrimeOrderGroup>(v: &[i64]) -> Result<Vec<G::Scalar>, MffeError> {
    v.iter()
        .enumerate()
        .map(|(index, &value)| {
            if value.unsigned_abs() >= CENTER_BOUND {
                Err(MffeError::CenterOverflow { index, value })
            } else {
                Ok(G::scalar_from_i64(value))
            }
        })
        .collect()
}

/// Inverse of [`encode_centers`] via the symmetric residue.
pub fn decode_center<G: PrimeOrderGroup>(s: &G::Scalar) -> Option<i64> {
    G::scalar_to_small_i64(s, CENTER_BOUND)
}

/// `sum seed_i * c_i mod q`.
pub fn universal_hash<G: PrimeOrderGroup>(
    uh: &UhSeed<G>,
    c: &[G::Scalar],
) -> Result<G::Scalar, MffeError> {
    if uh.0.len() != c.len() {
        return Err(MffeError::LengthMismatch {
            expected: uh.0.len(),
            found: c.len(),
        });
    }
    Ok(uh
        .0
        .iter()
        .zip(c)
        .fold(G::scalar_zero(), |acc, (s, x)| acc + *s * *x))
}

/// Intermediate values of a reproduction, for inspection in tests and tooling.
#[derive(Debug, Clone)]
pub struct Reproduction<G: PrimeOrderGroup> {
    /// Closest vector of `B^-1 x' - delta`; equals the encrypted centers on success.
    pub decoded: LatticePoint,
    /// Decrypted center vector.
    pub centers: Vec<i64>,
    pub key: ExtractedKey<G>,
}

impl<G: PrimeOrderGroup> MffeParams<G> {
    pub fn setup(n: usize, d: f64) -> Result<Self, MffeError> {
        Ok(Self {
            basis: LatticeBasis::triangular(n, d)?,
            _group: PhantomData,
        })
    }

    pub fn basis(&self) -> &LatticeBasis {
        &self.basis
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    pub fn group_id(&self) -> GroupId {
        G::ID
    }

    fn check_dim(&self, len: usize) -> Result<(), MffeError> {
        if len != self.dim() {
            return Err(MffeError::LengthMismatch {
                expected: self.dim(),
                found: len,
            });
        }
        Ok(())
    }

    /// Draws `r` and then the `n + 1` hash-seed scalars from `rng`, in that order.
    pub fn gen<R: RngCore + CryptoRng + ?Sized>(
        &self,
        x: &[f64],
        z: &G::Element,
        rng: &mut R,
    ) -> Result<(ExtractedKey<G>, SketchPackage<G>), MffeError> {
        self.check_dim(x.len())?;
        if *z == G::identity() {
            return Err(MffeError::InvalidBinding);
        }
        let coords = self.basis.to_basis_coords(x)?;
        let centers: Vec<i64> = coords.0.iter().map(|c| c.floor() as i64).collect();
        let mut c = encode_centers::<G>(&centers)?;
        c.push(G::hash_element_to_scalar(z));

        let r = G::random_scalar(rng);
        let uh = UhSeed::<G>::random(self.dim() + 1, rng);
        let beta = universal_hash(&uh, &c)?;

        let w = G::pow(&G::generator(), &r);
        let key = derive_stream_key::<G>(&w, &G::pow(z, &r));
        let encrypted = stream_encrypt_ints(&key, &centers);
        let delta = coords
            .0
            .iter()
            .zip(&encrypted)
            .map(|(x, e)| x - *e as f64)
            .collect();

        Ok((ExtractedKey(beta), SketchPackage { delta, w, uh }))
    }

    /// Never reports a factor mismatch: wrong inputs simply yield a different key.
    pub fn rep(
        &self,
        x1: &[f64],
        alpha: &G::Scalar,
        sketch: &SketchPackage<G>,
    ) -> Result<ExtractedKey<G>, MffeError> {
        Ok(self.rep_with_trace(x1, alpha, sketch)?.key)
    }

    pub fn rep_with_trace(
        &self,
        x1: &[f64],
        alpha: &G::Scalar,
        sketch: &SketchPackage<G>,
    ) -> Result<Reproduction<G>, MffeError> {
        self.check_dim(x1.len())?;
        self.check_dim(sketch.delta.len())?;
        if sketch.uh.0.len() != self.dim() + 1 {
            return Err(MffeError::LengthMismatch {
                expected: self.dim() + 1,
                found: sketch.uh.0.len(),
            });
        }
        let key = derive_stream_key::<G>(&sketch.w, &G::pow(&sketch.w, alpha));
        let coords = self.basis.to_basis_coords(x1)?;
        let shifted = BasisCoords(
            coords
                .0
                .iter()
                .zip(&sketch.delta)
                .map(|(x, d)| x - d)
                .collect(),
        );
        let decoded = self.basis.closest_vector(&shifted)?;
        let centers = stream_decrypt_ints(&key, &decoded.0);

        let z = G::pow(&G::generator(), alpha);
        let mut c: Vec<G::Scalar> = centers.iter().map(|&v| G::scalar_from_i64(v)).collect();
        c.push(G::hash_element_to_scalar(&z));
        let beta = universal_hash(&sketch.uh, &c)?;
        Ok(Reproduction {
            decoded,
            centers,
            key: ExtractedKey(beta),
        })
    }
}

impl<G: PrimeOrderGroup> SketchPackage<G> {
    /// `version || n (u32 BE) || delta (n x f64 LE) || w || uh ((n+1) x 32-byte BE)`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.delta.len();
        let mut out = Vec::with_capacity(5 + 8 * n + G::ELEMENT_LEN + 32 * (n + 1));
        out.push(SKETCH_VERSION);
        out.extend_from_slice(&(n as u32).to_be_bytes());
        for d in &self.delta {
            out.extend_from_slice(&d.to_le_bytes());
        }
        out.extend_from_slice(&G::encode(&self.w));
        for s in &self.uh.0 {
            out.extend_from_slice(&G::scalar_to_be(s));
        }
        out
    }

    /// Parses a sketch from the front of `bytes`, returning it with the number of bytes consumed.
    pub fn read_from(bytes: &[u8]) -> Result<(Self, usize), MffeError> {
        let bad = |m: &str| MffeError::MalformedSketch(m.to_owned());
        if bytes.len() < 5 {
            return Err(bad("truncated header"));
        }
        if bytes[0] != SKETCH_VERSION {
            return Err(bad(&format!("unknown version {}", bytes[0])));
        }
        let n = u32::from_be_bytes(bytes[1..5].try_into().unwrap()) as usize;
        let total = 5 + 8 * n + G::ELEMENT_LEN + 32 * (n + 1);
        if bytes.len() < total {
            return Err(bad("truncated body"));
        }
        let mut pos = 5;
        let mut delta = Vec::with_capacity(n);
        for _ in 0..n {
            let v = f64::from_le_bytes(bytes[pos..pos + 8].try_into().unwrap());
            if !v.is_finite() {
                return Err(bad("non-finite sketch coordinate"));
            }
            delta.push(v);
            pos += 8;
        }
        let w = G::decode(&bytes[pos..pos + G::ELEMENT_LEN])
            .ok_or_else(|| bad("invalid helper element"))?;
        pos += G::ELEMENT_LEN;
        let mut seed = Vec::with_capacity(n + 1);
        for _ in 0..=n {
            let s = G::scalar_from_be(bytes[pos..pos + 32].try_into().unwrap())
                .ok_or_else(|| bad("non-canonical hash seed scalar"))?;
            seed.push(s);
            pos += 32;
        }
        Ok((
            SketchPackage {
                delta,
                w,
                uh: UhSeed(seed),
            },
            pos,
        ))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, MffeError> {
        let (sketch, used) = Self::read_from(bytes)?;
        if used != bytes.len() {
            return Err(MffeError::MalformedSketch("trailing bytes".into()));
        }
        Ok(sketch)
    }
}
