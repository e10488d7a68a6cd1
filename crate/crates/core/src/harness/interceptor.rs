//! Man-in-the-middle on the user's link.
//!
//! Messages are numbered in flight order: 0 = MU1, 1 = MS1, 2 = MU2, 3 = MS2.
//! Offsets and replacements refer to the payload; the header is rebuilt so
//! framing stays intact and a wrong length shows up as a decode error.

use std::collections::BTreeMap;

use super::transport::{Channel, TransportError};
use super::wire::{frame, HEADER_LEN};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    Pass,
    /// Swallows the message and closes the link.
    Drop,
    FlipByte {
        offset: usize,
        mask: u8,
    },
    /// Substitutes the payload, keeping the type byte.
    Replace(Vec<u8>),
    /// Sends the untampered frame seen at an earlier index instead. An index
    /// not yet seen behaves like `Drop`.
    Replay(usize),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Interceptor {
    actions: BTreeMap<usize, Action>,
}

impl Interceptor {
    pub fn passthrough() -> Self {
        Self::default()
    }

    pub fn with(mut self, index: usize, action: Action) -> Self {
        self.actions.insert(index, action);
        self
    }

    pub fn flip(index: usize, offset: usize, mask: u8) -> Self {
        Self::default().with(index, Action::FlipByte { offset, mask })
    }

    pub fn action(&self, index: usize) -> &Action {
        self.actions.get(&index).unwrap_or(&Action::Pass)
    }

    pub fn is_passthrough(&self) -> bool {
        self.actions.values().all(|a| *a == Action::Pass)
    }

    /// The frame to deliver for message `index`, or `None` to drop it.
    pub fn apply(&self, index: usize, original: &[u8], history: &[Vec<u8>]) -> Option<Vec<u8>> {
        match self.action(index) {
            Action::Pass => Some(original.to_vec()),
            Action::Drop => None,
            Action::FlipByte { offset, mask } => {
                let mut out = original.to_vec();
                if let Some(b) = out.get_mut(HEADER_LEN + offset) {
                    *b ^= mask;
                }
                Some(out)
            }
            Action::Replace(payload) => Some(frame(original[0], payload)),
            Action::Replay(i) => history.get(*i).cloned(),
        }
    }
}

/// Wraps the user's endpoint and applies the interceptor in both directions.
pub struct Intercepted<'i, C> {
    inner: C,
    interceptor: &'i Interceptor,
    history: Vec<Vec<u8>>,
}

impl<'i, C: Channel> Intercepted<'i, C> {
    pub fn new(inner: C, interceptor: &'i Interceptor) -> Self {
        Self {
            inner,
            interceptor,
            history: Vec::new(),
        }
    }

    fn next(&mut self, original: Vec<u8>) -> Option<Vec<u8>> {
        let index = self.history.len();
        let out = self.interceptor.apply(index, &original, &self.history);
        self.history.push(original);
        out
    }
}

impl<C: Channel> Channel for Intercepted<'_, C> {
    fn send(&mut self, f: &[u8]) -> Result<(), TransportError> {
        match self.next(f.to_vec()) {
            Some(out) => self.inner.send(&out),
            None => {
                self.inner.close();
                Ok(())
            }
        }
    }

    fn recv(&mut self) -> Result<Vec<u8>, TransportError> {
        let f = self.inner.recv()?;
        match self.next(f) {
            Some(out) => Ok(out),
            None => {
                self.inner.close();
                Err(TransportError::Closed)
            }
        }
    }

    fn close(&mut self) {
        self.inner.close()
    }
}
