use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::path::{select_dual_path, DualPath};
use super::PeerError;
use crate::directory::PeerRecord;
use crate::envelope::{
    build_request_onion, build_response_route, Cipher, KeyHandle, KeyPair, Packet, PlainPayload, ResponseMode,
};
use crate::ids::{CycleId, PeerId, Tick};

pub const DEFAULT_PAD_SIZE: usize = 2048;
pub const DEFAULT_RETRIES: u32 = 3;

pub fn default_cycle_timeout(l_req: usize, l_resp: usize) -> Tick {
    4 * (l_req + l_resp + 2) as Tick
}

/// Per-peer protocol parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeerConfig {
    pub l_req: usize,
    pub l_resp: usize,
    pub pad_size: usize,
    pub cycle_timeout: Tick,
    pub retries: u32,
    pub rotate_every: u32,
    pub response_payload: ResponseMode,
}

impl Default for PeerConfig {
    fn default() -> Self {
        PeerConfig {
            l_req: 3,
            l_resp: 3,
            pad_size: DEFAULT_PAD_SIZE,
            cycle_timeout: default_cycle_timeout(3, 3),
            retries: DEFAULT_RETRIES,
            rotate_every: 1,
            response_payload: ResponseMode::EndToEnd,
        }
    }
}

impl PeerConfig {
    pub fn rotation(&self) -> RotationPolicy {
        RotationPolicy {
            rotate_every: self.rotate_every.max(1),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SessionState {
    AwaitingResponse,
    Completed,
    Failed,
}

/// One request/response round trip as tracked by its requester.
#[derive(Clone, Debug)]
pub struct Session {
    pub cycle_id: CycleId,
    pub provider: PeerId,
    pub message: Vec<u8>,
    pub path: DualPath,
    pub session_key: KeyHandle,
    pub reblind_keys: Vec<KeyHandle>,
    pub state: SessionState,
    pub retries_left: u32,
    pub started: Tick,
    pub deadline: Tick,
    pub cycles_on_current_path: u32,
}

impl Session {
    pub fn complete(&mut self) {
        if self.state == SessionState::AwaitingResponse {
            self.state = SessionState::Completed;
        }
    }

    pub fn fail(&mut self) {
        if self.state == SessionState::AwaitingResponse {
            self.state = SessionState::Failed;
        }
    }

    /// Whether a response sealed under `key_id` belongs to this session.
    pub fn expects(&self, key_id: u64, mode: ResponseMode) -> bool {
        let outer = match mode {
            ResponseMode::EndToEnd => self.reblind_keys.last().unwrap_or(&self.session_key),
            ResponseMode::PerHop => &self.session_key,
        };
        outer.key_id() == key_id
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RotationPolicy {
    pub rotate_every: u32,
}

impl RotationPolicy {
    pub fn rotate_on_failure(&self) -> bool {
        true
    }
}

pub fn rotation_due(policy: &RotationPolicy, session: &Session) -> bool {
    session.cycles_on_current_path >= policy.rotate_every
        || (policy.rotate_on_failure() && session.state == SessionState::Failed)
}

fn key_lookup(snapshot: &[PeerRecord], me: &KeyPair) -> impl Fn(PeerId) -> Option<KeyHandle> {
    let mut keys: BTreeMap<PeerId, KeyHandle> = snapshot.iter().map(|r| (r.peer, r.public_key.clone())).collect();
    if let Some(owner) = me.public.owner() {
        keys.insert(owner, me.public.clone());
    }
    move |p| keys.get(&p).cloned()
}

/// Builds the onion for `message` over an existing path.
#[allow(clippy::too_many_arguments)]
pub fn initiate_on_path<R: Rng + ?Sized>(
    cipher: &dyn Cipher,
    me: &KeyPair,
    provider: PeerId,
    message: Vec<u8>,
    path: DualPath,
    snapshot: &[PeerRecord],
    config: &PeerConfig,
    now: Tick,
    cycles_on_current_path: u32,
    retries_left: u32,
    rng: &mut R,
) -> Result<(Packet, Session), PeerError> {
    let requester = me.public.owner().ok_or(PeerError::NoIdentity)?;
    if !path.is_valid_for(requester, provider) {
        return Err(PeerError::InvalidPath);
    }
    let keys = key_lookup(snapshot, me);
    let route = build_response_route(cipher, &path.response_hops, requester, &keys)?;
    let session_key = KeyHandle::generate_symmetric(None, rng);
    let cycle_id = CycleId(rng.gen());
    let payload = PlainPayload::request(message.clone(), session_key.clone());
    let packet = build_request_onion(
        cipher,
        &path.request_hops,
        provider,
        &payload,
        &route.block,
        &keys,
        config.pad_size,
    )?;
    let session = Session {
        cycle_id,
        provider,
        message,
        path,
        session_key,
        reblind_keys: route.reblind_keys,
        state: SessionState::AwaitingResponse,
        retries_left,
        started: now,
        deadline: now + config.cycle_timeout,
        cycles_on_current_path,
    };
    Ok((packet, session))
}

/// Starts a cycle over a freshly drawn dual path.
#[allow(clippy::too_many_arguments)]
pub fn initiate_cycle<R: Rng + ?Sized>(
    cipher: &dyn Cipher,
    me: &KeyPair,
    provider: PeerId,
    message: Vec<u8>,
    snapshot: &[PeerRecord],
    config: &PeerConfig,
    now: Tick,
    rng: &mut R,
) -> Result<(Packet, Session), PeerError> {
    let requester = me.public.owner().ok_or(PeerError::NoIdentity)?;
    let path = select_dual_path(snapshot, requester, provider, config.l_req, config.l_resp, rng)?;
    initiate_on_path(cipher, me, provider, message, path, snapshot, config, now, 1, config.retries, rng)
}

#[derive(Clone, Debug)]
pub enum TimeoutOutcome {
    Retry { packet: Packet, session: Session },
    GiveUp { session: Session },
    NotDue,
}

/// Deadline handling: retry over a fresh path drawn from `snapshot`, or
/// give up once retries are exhausted.
#[allow(clippy::too_many_arguments)]
pub fn on_cycle_timeout<R: Rng + ?Sized>(
    cipher: &dyn Cipher,
    me: &KeyPair,
    session: &Session,
    snapshot: &[PeerRecord],
    config: &PeerConfig,
    now: Tick,
    rng: &mut R,
) -> TimeoutOutcome {
    if session.state != SessionState::AwaitingResponse || now <= session.deadline {
        return TimeoutOutcome::NotDue;
    }
    let mut failed = session.clone();
    failed.fail();
    if session.retries_left == 0 {
        return TimeoutOutcome::GiveUp { session: failed };
    }
    let Some(requester) = me.public.owner() else {
        return TimeoutOutcome::GiveUp { session: failed };
    };
    let retry = select_dual_path(snapshot, requester, session.provider, config.l_req, config.l_resp, rng).and_then(
        |path| {
            initiate_on_path(
                cipher,
                me,
                session.provider,
                session.message.clone(),
                path,
                snapshot,
                config,
                now,
                1,
                session.retries_left - 1,
                rng,
            )
        },
    );
    match retry {
        Ok((packet, session)) => TimeoutOutcome::Retry { packet, session },
        Err(_) => TimeoutOutcome::GiveUp { session: failed },
    }
}
