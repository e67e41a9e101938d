use std::fmt;

use serde::{Deserialize, Serialize};

/// Simulation time in ticks.
pub type Tick = u64;

/// Identifier of a peer or supernode.
///
/// Ids are serialized as 8 big-endian bytes and must stay below 2^56, so
/// the first byte of an encoded id is always zero. Envelope parsing relies
/// on that to tell a forwarding layer from a delivery layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PeerId(pub u64);

impl PeerId {
    pub const MAX: u64 = (1 << 56) - 1;
    pub const ENCODED_LEN: usize = 8;

    pub fn to_bytes(self) -> [u8; 8] {
        self.0.to_be_bytes()
    }

    pub fn from_bytes(bytes: [u8; 8]) -> Self {
        PeerId(u64::from_be_bytes(bytes))
    }

    pub fn is_encodable(self) -> bool {
        self.0 <= Self::MAX
    }
}

impl fmt::Display for PeerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Opaque transport address of a peer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Address(pub u64);

/// Per-cycle nonce chosen by the requester. Never reused, including on retry.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CycleId(pub u64);
