//! Biometric multi-factor key derivation and authenticated key exchange.
//!
//! A user's fingerprint-like feature vector and a secret exponent are bound
//! into a group scalar by a lattice-based fuzzy extractor ([`mffe`]). A
//! registration center certifies identity commitments built from that scalar
//! ([`pki`]), and users and service providers then run a four-message
//! mutually authenticated key exchange ([`protocol`]). [`biosim`] stands in for
//! a real biometric pipeline and [`harness`] drives sessions over in-memory or
//! TCP transports with optional message tampering.

pub mod biosim;
pub mod group;
pub mod harness;
pub mod lattice;
pub mod mffe;
pub mod par;
pub mod pki;
pub mod protocol;

pub use group::{Bls12G1, GroupId, PrimeOrderGroup, Toy101};
pub use lattice::{BasisCoords, LatticeBasis, LatticeError, LatticePoint};
pub use mffe::{ExtractedKey, MffeError, MffeParams, SecretBinding, SketchPackage, UhSeed};
pub use par::Execution;
