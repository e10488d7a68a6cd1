//! Prime-order groups used by the extractor and the key exchange.
//!
//! Group operations are written multiplicatively (`combine`, `pow`) to match
//! the protocol notation, even though the elliptic-curve backend is additive.
//! Scalars travel as 32-byte big-endian strings in every serialized form.

use std::fmt::{self, Debug};
use std::ops::{Add, Mul, Neg, Sub};
use std::str::FromStr;

use bls12_381::hash_to_curve::{ExpandMsgXmd, HashToCurve};
use bls12_381::{G1Affine, G1Projective, Scalar};
use rand::{CryptoRng, RngCore};
use sha3::{Digest, Sha3_256};

/// Selector for the supported groups.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum GroupId {
    /// The prime-order subgroup of BLS12-381 G1 (255-bit order).
    Bls12381G1,
    /// Order-101 subgroup of Z_607^*, only meant for small-field statistics.
    Toy101,
}

impl GroupId {
    pub fn as_str(self) -> &'static str {
        match self {
            GroupId::Bls12381G1 => "bls12-381-g1",
            GroupId::Toy101 => "toy-101",
        }
    }
}

impl fmt::Display for GroupId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, thiserror::Error)]
#[error("unsupported group identifier `{0}`")]
pub struct UnsupportedGroup(pub String);

impl FromStr for GroupId {
    type Err = UnsupportedGroup;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "bls12-381-g1" | "bls12-381" | "bls12_381" => Ok(GroupId::Bls12381G1),
            "toy-101" | "toy101" => Ok(GroupId::Toy101),
            other => Err(UnsupportedGroup(other.to_owned())),
        }
    }
}

/// A cyclic group of prime order `q` with a fixed generator `g`.
pub trait PrimeOrderGroup: Copy + Debug + Send + Sync + 'static {
    type Scalar: Copy
        + Debug
        + PartialEq
        + Eq
        + Send
        + Sync
        + Add<Output = Self::Scalar>
        + Sub<Output = Self::Scalar>
        + Mul<Output = Self::Scalar>
        + Neg<Output = Self::Scalar>;
    type Element: Copy + Debug + PartialEq + Eq + Send + Sync;

    const ID: GroupId;
    /// Length in bytes of the canonical compressed element encoding.
    const ELEMENT_LEN: usize;
    /// Bit length of the group order.
    const ORDER_BITS: u32;

    fn scalar_from_u64(v: u64) -> Self::Scalar;
    fn scalar_to_be(s: &Self::Scalar) -> [u8; 32];
    /// Canonical decoding; rejects values `>= q`.
    fn scalar_from_be(bytes: &[u8; 32]) -> Option<Self::Scalar>;
    /// Interprets `bytes` as a big-endian integer and reduces it mod `q`.
    fn scalar_reduce_be(bytes: &[u8; 32]) -> Self::Scalar;

    fn generator() -> Self::Element;
    fn identity() -> Self::Element;
    fn combine(a: &Self::Element, b: &Self::Element) -> Self::Element;
    fn invert(a: &Self::Element) -> Self::Element;
    fn pow(base: &Self::Element, exp: &Self::Scalar) -> Self::Element;
    fn encode(e: &Self::Element) -> Vec<u8>;
    fn decode(bytes: &[u8]) -> Option<Self::Element>;
    /// Deterministic hash onto the group; nobody knows the discrete log of the output.
    fn hash_to_element(domain_tag: &[u8]) -> Self::Element;

    fn scalar_zero() -> Self::Scalar {
        Self::scalar_from_u64(0)
    }

    fn scalar_one() -> Self::Scalar {
        Self::scalar_from_u64(1)
    }

    /// Rejection sampling over `ORDER_BITS`-bit strings.
    fn random_scalar<R: RngCore + CryptoRng + ?Sized>(rng: &mut R) -> Self::Scalar {
        let excess = 256 - Self::ORDER_BITS;
        loop {
            let mut buf = [0u8; 32];
            rng.fill_bytes(&mut buf);
            let full_bytes = (excess / 8) as usize;
            for b in buf.iter_mut().take(full_bytes) {
                *b = 0;
            }
            if full_bytes < 32 {
                buf[full_bytes] &= 0xffu8 >> (excess % 8);
            }
            if let Some(s) = Self::scalar_from_be(&buf) {
                return s;
            }
        }
    }

    /// Maps a signed integer into `Z_q`; negative values wrap.
    fn scalar_from_i64(v: i64) -> Self::Scalar {
        let mag = Self::scalar_from_u64(v.unsigned_abs());
        if v < 0 {
            -mag
        } else {
            mag
        }
    }

    /// Lifts a scalar to its symmetric residue if that residue fits in `bound` magnitude.
    fn scalar_to_small_i64(s: &Self::Scalar, bound: u64) -> Option<i64> {
        let small = |bytes: [u8; 32]| -> Option<u64> {
            if bytes[..24].iter().any(|&b| b != 0) {
                return None;
            }
            let v = u64::from_be_bytes(bytes[24..].try_into().unwrap());
            (v < bound).then_some(v)
        };
        if let Some(v) = small(Self::scalar_to_be(s)) {
            return Some(v as i64);
        }
        small(Self::scalar_to_be(&-*s)).map(|v| -(v as i64))
    }

    /// `SHA3-256(encode(e)) mod q`.
    fn hash_element_to_scalar(e: &Self::Element) -> Self::Scalar {
        let digest: [u8; 32] = Sha3_256::digest(Self::encode(e)).into();
        Self::scalar_reduce_be(&digest)
    }
}

/// BLS12-381 G1, prime-order subgroup.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct Bls12G1;

const BLS_HASH_DST: &[u8] = b"MFAKE-V01-CS01-with-BLS12381G1_XMD:SHA-256_SSWU_RO_";

impl PrimeOrderGroup for Bls12G1 {
    type Scalar = Scalar;
    type Element = G1Projective;

    const ID: GroupId = GroupId::Bls12381G1;
    const ELEMENT_LEN: usize = 48;
    const ORDER_BITS: u32 = 255;

    fn scalar_from_u64(v: u64) -> Scalar {
        Scalar::from(v)
    }

    fn scalar_to_be(s: &Scalar) -> [u8; 32] {
        let mut b = s.to_bytes();
        b.reverse();
        b
    }

    fn scalar_from_be(bytes: &[u8; 32]) -> Option<Scalar> {
        let mut le = *bytes;
        le.reverse();
        Option::from(Scalar::from_bytes(&le))
    }

    fn scalar_reduce_be(bytes: &[u8; 32]) -> Scalar {
        let mut wide = [0u8; 64];
        for (dst, src) in wide.iter_mut().zip(bytes.iter().rev()) {
            *dst = *src;
        }
        Scalar::from_bytes_wide(&wide)
    }

    fn generator() -> G1Projective {
        G1Projective::generator()
    }

    fn identity() -> G1Projective {
        G1Projective::identity()
    }

    fn combine(a: &G1Projective, b: &G1Projective) -> G1Projective {
        a + b
    }

    fn invert(a: &G1Projective) -> G1Projective {
        -a
    }

    fn pow(base: &G1Projective, exp: &Scalar) -> G1Projective {
        base * exp
    }

    fn encode(e: &G1Projective) -> Vec<u8> {
        G1Affine::from(e).to_compressed().to_vec()
    }

    fn decode(bytes: &[u8]) -> Option<G1Projective> {
        let arr: &[u8; 48] = bytes.try_into().ok()?;
        Option::<G1Affine>::from(G1Affine::from_compressed(arr)).map(G1Projective::from)
    }

    fn hash_to_element(domain_tag: &[u8]) -> G1Projective {
        <G1Projective as HashToCurve<ExpandMsgXmd<sha2::Sha256>>>::hash_to_curve(
            domain_tag,
            BLS_HASH_DST,
        )
    }
}

impl Bls12G1 {
    pub fn encode_fixed(e: &G1Projective) -> [u8; 48] {
        G1Affine::from(e).to_compressed()
    }
}

/// Subgroup of order 101 inside Z_607^* (607 = 6 * 101 + 1).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct Toy101;

const TOY_P: u32 = 607;
const TOY_Q: u32 = 101;
const TOY_COFACTOR: u32 = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
pub struct ToyScalar(u32);

impl ToyScalar {
    pub fn value(self) -> u32 {
        self.0
    }
}

impl Add for ToyScalar {
    type Output = ToyScalar;
    fn add(self, rhs: Self) -> Self {
        ToyScalar((self.0 + rhs.0) % TOY_Q)
    }
}

impl Sub for ToyScalar {
    type Output = ToyScalar;
    fn sub(self, rhs: Self) -> Self {
        ToyScalar((self.0 + TOY_Q - rhs.0) % TOY_Q)
    }
}

impl Mul for ToyScalar {
    type Output = ToyScalar;
    fn mul(self, rhs: Self) -> Self {
        ToyScalar((self.0 * rhs.0) % TOY_Q)
    }
}

impl Neg for ToyScalar {
    type Output = ToyScalar;
    fn neg(self) -> Self {
        ToyScalar((TOY_Q - self.0) % TOY_Q)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ToyElement(u32);

impl ToyElement {
    pub fn value(self) -> u32 {
        self.0
    }
}

fn toy_modpow(mut base: u32, mut exp: u32) -> u32 {
    let mut acc = 1u32;
    base %= TOY_P;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = acc * base % TOY_P;
        }
        base = base * base % TOY_P;
        exp >>= 1;
    }
    acc
}

fn reduce_be_mod(bytes: &[u8], modulus: u32) -> u32 {
    bytes
        .iter()
        .fold(0u32, |acc, &b| ((acc << 8) | b as u32) % modulus)
}

impl PrimeOrderGroup for Toy101 {
    type Scalar = ToyScalar;
    type Element = ToyElement;

    const ID: GroupId = GroupId::Toy101;
    const ELEMENT_LEN: usize = 2;
    const ORDER_BITS: u32 = 7;

    fn scalar_from_u64(v: u64) -> ToyScalar {
        ToyScalar((v % TOY_Q as u64) as u32)
    }

    fn scalar_to_be(s: &ToyScalar) -> [u8; 32] {
        let mut out = [0u8; 32];
        out[28..].copy_from_slice(&s.0.to_be_bytes());
        out
    }

    fn scalar_from_be(bytes: &[u8; 32]) -> Option<ToyScalar> {
        if bytes[..28].iter().any(|&b| b != 0) {
            return None;
        }
        let v = u32::from_be_bytes(bytes[28..].try_into().unwrap());
        (v < TOY_Q).then_some(ToyScalar(v))
    }

    fn scalar_reduce_be(bytes: &[u8; 32]) -> ToyScalar {
        ToyScalar(reduce_be_mod(bytes, TOY_Q))
    }

    fn generator() -> ToyElement {
        // 2^6 mod 607
        ToyElement(64)
    }

    fn identity() -> ToyElement {
        ToyElement(1)
    }

    fn combine(a: &ToyElement, b: &ToyElement) -> ToyElement {
        ToyElement(a.0 * b.0 % TOY_P)
    }

    fn invert(a: &ToyElement) -> ToyElement {
        ToyElement(toy_modpow(a.0, TOY_P - 2))
    }

    fn pow(base: &ToyElement, exp: &ToyScalar) -> ToyElement {
        ToyElement(toy_modpow(base.0, exp.0))
    }

    fn encode(e: &ToyElement) -> Vec<u8> {
        (e.0 as u16).to_be_bytes().to_vec()
    }

    fn decode(bytes: &[u8]) -> Option<ToyElement> {
        let arr: [u8; 2] = bytes.try_into().ok()?;
        let v = u16::from_be_bytes(arr) as u32;
        ((1..TOY_P).contains(&v) && toy_modpow(v, TOY_Q) == 1).then_some(ToyElement(v))
    }

    fn hash_to_element(domain_tag: &[u8]) -> ToyElement {
        let mut counter = 0u32;
        loop {
            let mut hasher = Sha3_256::new();
            hasher.update(domain_tag);
            hasher.update(counter.to_be_bytes());
            let digest = hasher.finalize();
            let base = reduce_be_mod(&digest, TOY_P);
            let candidate = toy_modpow(base, TOY_COFACTOR);
            if base != 0 && candidate != 1 {
                return ToyElement(candidate);
            }
            counter += 1;
        }
    }
}
