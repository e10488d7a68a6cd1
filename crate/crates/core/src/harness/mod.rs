//! Wire codec, transports, interceptors and the session runner.

pub mod interceptor;
pub mod runner;
pub mod scenario;
pub mod transport;
pub mod wire;

pub use interceptor::{Action, Interceptor};
pub use runner::{
    fingerprint, run_session, PartyOutcome, SessionOutcome, SpInputs, Timings, UserInputs,
};
pub use scenario::Deployment;
pub use transport::{TransportError, TransportKind};
pub use wire::{decode, encode, WireError};
