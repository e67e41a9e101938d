use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;

use super::session::{initiate_on_path, on_cycle_timeout, rotation_due, PeerConfig, Session, TimeoutOutcome};
use super::{select_dual_path, PeerError};
use crate::control::{open_control, seal_control, ControlMsg};
use crate::directory::PeerRecord;
use crate::envelope::{
    open_response_block, open_tail, peel_layer, peel_response_payload, reblind_payload, seal_response_payload,
    wrap_response, Cipher, FrameClass, KeyHandle, KeyPair, KeyTable, Packet, Peeled, PlainPayload, SchemeTag,
    TailOpen,
};
use crate::ids::{Address, CycleId, PeerId, Tick};

/// Application logic of a provider: request bytes in, response bytes out.
pub type Responder = Arc<dyn Fn(&[u8]) -> Vec<u8> + Send + Sync>;

pub fn echo_responder() -> Responder {
    Arc::new(|m: &[u8]| {
        let mut r = b"re:".to_vec();
        r.extend_from_slice(m);
        r
    })
}

/// Where a peer sat in a cycle, as learned from what it could decrypt.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    RequestRelay,
    Provider,
    ResponseRelay,
    Requester,
}

/// Peer ids a peer learned by decrypting one DATA frame.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Observation {
    pub role: Role,
    pub decrypted: Vec<PeerId>,
}

#[derive(Clone, Debug)]
pub enum Action {
    Send {
        to: PeerId,
        packet: Packet,
        /// Set when this peer started the cycle the frame belongs to.
        origin: Option<CycleId>,
        scheme: SchemeTag,
    },
    CycleStarted {
        cycle: CycleId,
        provider: PeerId,
        request_hops: Vec<PeerId>,
        response_hops: Vec<PeerId>,
        deadline: Tick,
        /// The cycle this one replaces after a timeout.
        retry_of: Option<CycleId>,
    },
    DeliverRequest {
        message: Vec<u8>,
    },
    DeliverResponse {
        cycle: CycleId,
        message: Vec<u8>,
    },
    CycleFailed {
        cycle: CycleId,
    },
    /// A deferred start found no usable path even after a refresh.
    StartAbandoned {
        provider: PeerId,
    },
    Drop {
        reason: &'static str,
    },
}

#[derive(Clone, Debug, Default)]
pub struct Handled {
    pub actions: Vec<Action>,
    pub observation: Option<Observation>,
}

impl Handled {
    fn drop(reason: &'static str) -> Self {
        Handled {
            actions: vec![Action::Drop { reason }],
            observation: None,
        }
    }
}

#[derive(Clone, Debug)]
enum Pending {
    Start { provider: PeerId, message: Vec<u8> },
    Retry { cycle: CycleId },
}

/// One peer's protocol state: requester, relay and provider at once.
pub struct PeerNode {
    id: PeerId,
    address: Address,
    keys: KeyPair,
    table: KeyTable,
    supernode: PeerId,
    supernode_key: KeyHandle,
    view: BTreeMap<PeerId, PeerRecord>,
    config: PeerConfig,
    sessions: BTreeMap<CycleId, Session>,
    last_session: Option<Session>,
    pending: Vec<Pending>,
    responder: Responder,
}

impl PeerNode {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        id: PeerId,
        address: Address,
        supernode: PeerId,
        supernode_key: KeyHandle,
        config: PeerConfig,
        responder: Responder,
        rng: &mut R,
    ) -> Self {
        let keys = KeyPair::generate(id, rng);
        let table = KeyTable::new(id, rng);
        PeerNode {
            id,
            address,
            keys,
            table,
            supernode,
            supernode_key,
            view: BTreeMap::new(),
            config,
            sessions: BTreeMap::new(),
            last_session: None,
            pending: Vec::new(),
            responder,
        }
    }

    pub fn id(&self) -> PeerId {
        self.id
    }

    pub fn public_key(&self) -> &KeyHandle {
        &self.keys.public
    }

    pub fn supernode(&self) -> PeerId {
        self.supernode
    }

    pub fn key_table(&self) -> &KeyTable {
        &self.table
    }

    pub fn view(&self) -> Vec<PeerRecord> {
        self.view.values().cloned().collect()
    }

    pub fn session(&self, cycle: CycleId) -> Option<&Session> {
        self.sessions.get(&cycle)
    }

    pub fn open_sessions(&self) -> usize {
        self.sessions.len()
    }

    fn control(&mut self, cipher: &dyn Cipher, msg: ControlMsg) -> Result<Action, PeerError> {
        let (packet, scheme) = seal_control(cipher, &mut self.table, self.supernode, &self.supernode_key, &msg)?;
        Ok(Action::Send {
            to: self.supernode,
            packet,
            origin: None,
            scheme,
        })
    }

    pub fn join(&mut self, cipher: &dyn Cipher) -> Result<Action, PeerError> {
        let msg = ControlMsg::Join {
            address: self.address,
            public_key: self.keys.public.clone(),
        };
        self.control(cipher, msg)
    }

    pub fn heartbeat(&mut self, cipher: &dyn Cipher) -> Result<Action, PeerError> {
        self.control(cipher, ControlMsg::Heartbeat)
    }

    pub fn leave(&mut self, cipher: &dyn Cipher) -> Result<Action, PeerError> {
        self.control(cipher, ControlMsg::Leave)
    }

    /// Membership traffic from the supernode.
    pub fn handle_control<R: Rng + ?Sized>(
        &mut self,
        cipher: &dyn Cipher,
        packet: &Packet,
        now: Tick,
        rng: &mut R,
    ) -> Vec<Action> {
        let Ok((sender, msg)) = open_control(cipher, &mut self.table, &self.keys.private, packet) else {
            return vec![Action::Drop { reason: "control frame did not open" }];
        };
        if sender != self.supernode {
            return vec![Action::Drop { reason: "control frame from a non-supernode" }];
        }
        match msg {
            ControlMsg::JoinAck { records } => {
                self.replace_view(records);
                Vec::new()
            }
            ControlMsg::ListReply { records } => {
                self.replace_view(records);
                self.run_pending(cipher, now, rng)
            }
            ControlMsg::MemberAdded { records } => {
                for r in records {
                    if r.peer != self.id {
                        self.view.insert(r.peer, r);
                    }
                }
                Vec::new()
            }
            ControlMsg::MemberRemoved { peers } => {
                for p in peers {
                    self.view.remove(&p);
                }
                Vec::new()
            }
            ControlMsg::UnknownPeer => self.join(cipher).into_iter().collect(),
            _ => vec![Action::Drop { reason: "unexpected control message" }],
        }
    }

    fn replace_view(&mut self, records: Vec<PeerRecord>) {
        self.view = records.into_iter().filter(|r| r.peer != self.id).map(|r| (r.peer, r)).collect();
    }

    fn snapshot(&self) -> Vec<PeerRecord> {
        self.view.values().cloned().collect()
    }

    /// Starts a cycle toward `provider` using the current view. The path of
    /// the previous cycle is reused until rotation is due.
    pub fn start_cycle<R: Rng + ?Sized>(
        &mut self,
        cipher: &dyn Cipher,
        provider: PeerId,
        message: Vec<u8>,
        now: Tick,
        rng: &mut R,
    ) -> Result<Vec<Action>, PeerError> {
        let snapshot = self.snapshot();
        let policy = self.config.rotation();
        let reuse = self.last_session.as_ref().filter(|s| {
            !rotation_due(&policy, s)
                && s.path.is_valid_for(self.id, provider)
                && s.path.hops().all(|h| self.view.contains_key(&h))
        });
        let (path, cycles) = match reuse {
            Some(s) => (s.path.clone(), s.cycles_on_current_path + 1),
            None => (
                select_dual_path(&snapshot, self.id, provider, self.config.l_req, self.config.l_resp, rng)?,
                1,
            ),
        };
        let (packet, session) = initiate_on_path(
            cipher,
            &self.keys,
            provider,
            message,
            path,
            &snapshot,
            &self.config,
            now,
            cycles,
            self.config.retries,
            rng,
        )?;
        Ok(self.launch(packet, session, None))
    }

    /// Asks the supernode for a fresh list, then starts the cycle.
    pub fn start_cycle_after_refresh(
        &mut self,
        cipher: &dyn Cipher,
        provider: PeerId,
        message: Vec<u8>,
    ) -> Result<Vec<Action>, PeerError> {
        self.pending.push(Pending::Start { provider, message });
        Ok(vec![self.control(cipher, ControlMsg::List)?])
    }

    fn launch(&mut self, packet: Packet, session: Session, retry_of: Option<CycleId>) -> Vec<Action> {
        let actions = vec![
            Action::CycleStarted {
                cycle: session.cycle_id,
                provider: session.provider,
                request_hops: session.path.request_hops.clone(),
                response_hops: session.path.response_hops.clone(),
                deadline: session.deadline,
                retry_of,
            },
            Action::Send {
                to: packet.dst,
                origin: Some(session.cycle_id),
                scheme: packet.scheme().unwrap_or(SchemeTag::Plain),
                packet,
            },
        ];
        self.sessions.insert(session.cycle_id, session);
        actions
    }

    /// Deadline of `cycle` reached. A retry first refreshes the peer list
    /// from the supernode so departed hops are not chosen again.
    pub fn on_timeout(&mut self, cipher: &dyn Cipher, cycle: CycleId, now: Tick) -> Vec<Action> {
        let Some(s) = self.sessions.get_mut(&cycle) else {
            return Vec::new();
        };
        if now <= s.deadline {
            return Vec::new();
        }
        if s.retries_left == 0 {
            let mut s = self.sessions.remove(&cycle).unwrap();
            s.fail();
            let failed = s.cycle_id;
            self.last_session = Some(s);
            return vec![Action::CycleFailed { cycle: failed }];
        }
        self.pending.push(Pending::Retry { cycle });
        self.control(cipher, ControlMsg::List).into_iter().collect()
    }

    fn run_pending<R: Rng + ?Sized>(&mut self, cipher: &dyn Cipher, now: Tick, rng: &mut R) -> Vec<Action> {
        let mut actions = Vec::new();
        for p in std::mem::take(&mut self.pending) {
            match p {
                Pending::Start { provider, message } => match self.start_cycle(cipher, provider, message, now, rng) {
                    Ok(a) => actions.extend(a),
                    Err(_) => actions.push(Action::StartAbandoned { provider }),
                },
                Pending::Retry { cycle } => {
                    let Some(old) = self.sessions.remove(&cycle) else {
                        continue;
                    };
                    let snapshot = self.snapshot();
                    // the deadline has passed; evaluate as of just after it
                    let at = now.max(old.deadline + 1);
                    match on_cycle_timeout(cipher, &self.keys, &old, &snapshot, &self.config, at, rng) {
                        TimeoutOutcome::Retry { packet, mut session } => {
                            session.started = now;
                            session.deadline = now + self.config.cycle_timeout;
                            let mut failed = old;
                            failed.fail();
                            self.last_session = Some(failed);
                            actions.extend(self.launch(packet, session, Some(cycle)));
                        }
                        TimeoutOutcome::GiveUp { session } => {
                            self.last_session = Some(session);
                            actions.push(Action::CycleFailed { cycle });
                        }
                        TimeoutOutcome::NotDue => {
                            self.sessions.insert(cycle, old);
                        }
                    }
                }
            }
        }
        actions
    }

    fn public_of(&self, peer: PeerId) -> Option<KeyHandle> {
        if peer == self.id {
            return Some(self.keys.public.clone());
        }
        self.view.get(&peer).map(|r| r.public_key.clone())
    }

    /// A DATA frame addressed to this peer.
    pub fn handle_data(&mut self, cipher: &dyn Cipher, packet: &Packet) -> Handled {
        if packet.class != FrameClass::Data || packet.dst != self.id {
            return Handled::drop("not a DATA frame for this peer");
        }
        let own = [self.keys.private.clone()];
        let peeled = match peel_layer(cipher, packet, &own) {
            Ok(p) => p,
            Err(_) => return Handled::drop("frame did not open"),
        };
        match peeled {
            Peeled::Forward { next, inner } => Handled {
                observation: Some(Observation {
                    role: Role::RequestRelay,
                    decrypted: vec![next],
                }),
                actions: vec![Action::Send {
                    to: next,
                    scheme: inner.scheme().unwrap_or(SchemeTag::Plain),
                    packet: inner,
                    origin: None,
                }],
            },
            Peeled::Deliver { payload, rblock } => self.serve(cipher, payload, rblock),
            Peeled::Response { payload, tail } => match open_tail(cipher, &tail, &own) {
                Ok(TailOpen::Next {
                    next,
                    tail,
                    reblind_key,
                }) => {
                    let observation = Some(Observation {
                        role: Role::ResponseRelay,
                        decrypted: vec![next],
                    });
                    let Some(hop_key) = self.public_of(next) else {
                        return Handled {
                            actions: vec![Action::Drop { reason: "unknown successor" }],
                            observation,
                        };
                    };
                    let frame = reblind_payload(cipher, &payload, &reblind_key)
                        .and_then(|p| wrap_response(cipher, &p, &hop_key, next, &tail, self.config.pad_size));
                    let actions = match frame {
                        Ok(packet) => vec![Action::Send {
                            to: next,
                            scheme: packet.scheme().unwrap_or(SchemeTag::Plain),
                            packet,
                            origin: None,
                        }],
                        Err(_) => vec![Action::Drop { reason: "response could not be re-wrapped" }],
                    };
                    Handled { actions, observation }
                }
                Ok(TailOpen::End) => self.finish(cipher, &payload),
                Err(_) => Handled::drop("tail did not open"),
            },
        }
    }

    fn serve(&mut self, cipher: &dyn Cipher, payload: PlainPayload, rblock: crate::envelope::ResponseBlock) -> Handled {
        let (first, tail) = open_response_block(&rblock);
        let observation = Some(Observation {
            role: Role::Provider,
            decrypted: vec![first],
        });
        let Some(session_key) = payload.piggyback_key.clone() else {
            return Handled {
                actions: vec![Action::Drop { reason: "request without session key" }],
                observation,
            };
        };
        let response = PlainPayload::response((self.responder)(&payload.message));
        let mut actions = vec![Action::DeliverRequest {
            message: payload.message,
        }];
        let frame = self.public_of(first).ok_or(PeerError::UnknownPeer(first)).and_then(|hop_key| {
            let sealed = seal_response_payload(cipher, &response, &session_key, self.config.response_payload)?;
            Ok(wrap_response(cipher, &sealed, &hop_key, first, &tail, self.config.pad_size)?)
        });
        match frame {
            Ok(packet) => actions.push(Action::Send {
                to: first,
                scheme: packet.scheme().unwrap_or(SchemeTag::Plain),
                packet,
                origin: None,
            }),
            Err(_) => actions.push(Action::Drop { reason: "response could not be built" }),
        }
        Handled { actions, observation }
    }

    fn finish(&mut self, cipher: &dyn Cipher, payload: &crate::envelope::SealedBlob) -> Handled {
        let mode = self.config.response_payload;
        let cycle = self
            .sessions
            .values()
            .find(|s| s.expects(payload.key_id, mode))
            .map(|s| s.cycle_id);
        let observation = Some(Observation {
            role: Role::Requester,
            decrypted: Vec::new(),
        });
        let Some(cycle) = cycle else {
            return Handled {
                actions: vec![Action::Drop { reason: "response for no open session" }],
                observation,
            };
        };
        let s = &self.sessions[&cycle];
        match peel_response_payload(cipher, payload, &s.reblind_keys, &s.session_key) {
            Ok(body) => {
                let mut s = self.sessions.remove(&cycle).unwrap();
                s.complete();
                self.last_session = Some(s);
                Handled {
                    actions: vec![Action::DeliverResponse {
                        cycle,
                        message: body.message,
                    }],
                    observation,
                }
            }
            Err(_) => Handled {
                actions: vec![Action::Drop { reason: "response did not open" }],
                observation,
            },
        }
    }
}
