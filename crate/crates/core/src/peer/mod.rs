//! The per-peer protocol: dual-path selection, cycle sessions with retry
//! and rotation, and the state machine that plays requester, relay and
//! provider.

mod node;
mod path;
mod session;

use thiserror::Error;

use crate::envelope::EnvelopeError;
use crate::ids::PeerId;

pub use node::{echo_responder, Action, Handled, Observation, PeerNode, Responder, Role};
pub use path::{select_dual_path, DualPath};
pub use session::{
    default_cycle_timeout, initiate_cycle, initiate_on_path, on_cycle_timeout, rotation_due, PeerConfig,
    RotationPolicy, Session, SessionState, TimeoutOutcome, DEFAULT_PAD_SIZE, DEFAULT_RETRIES,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PeerError {
    #[error("need {needed} eligible peers for the dual path, have {available}")]
    NotEnoughPeers { needed: usize, available: usize },
    #[error("dual path violates its invariants")]
    InvalidPath,
    #[error("key pair has no owner")]
    NoIdentity,
    #[error("peer {0} is not in the local view")]
    UnknownPeer(PeerId),
    #[error(transparent)]
    Envelope(#[from] EnvelopeError),
}
