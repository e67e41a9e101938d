//! Dual-path anonymous messaging for hybrid peer-to-peer overlays.
//!
//! A requester reaches a provider through a randomly chosen *request path*
//! and receives the answer over a separately chosen *response path*. The
//! response path travels inside the request onion as a nested block of
//! "next peer" / "tail" layers, so the provider learns only the first
//! response hop. A trusted supernode keeps the live-peer list through
//! join, leave and heartbeat signals, and peers cache symmetric keys for
//! repeated direct contact.
//!
//! The crate is organised as:
//!
//! - [`directory`]: the supernode's peer registry and replica merge.
//! - [`envelope`]: sealing contract, request onions, response blocks and
//!   the per-peer key table.
//! - [`control`]: membership frames exchanged with supernodes.
//! - [`peer`]: path selection, cycle sessions and the peer state machine.
//! - [`simnet`]: the deterministic discrete-event simulator, adversary
//!   analysis and metrics.
//! - [`cli`]: config parsing, scenario runner and report formatting.

pub mod cli;
pub mod control;
pub mod directory;
pub mod envelope;
pub mod ids;
pub mod peer;
pub mod simnet;

pub use directory::{Directory, MembershipUpdate, PeerRecord};
pub use envelope::{Cipher, KeyHandle, KeyKind, KeyTable, Packet, SealedBlob, TestCipher};
pub use ids::{Address, CycleId, PeerId, Tick};
pub use peer::{DualPath, Session};
pub use simnet::{run_scenario, Metrics, ScenarioConfig, Trace};
