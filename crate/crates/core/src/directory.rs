//! Supernode peer registry.
//!
//! Peers join, leave and send periodic heartbeats. A peer whose silence
//! strictly exceeds `heartbeat_timeout` is evicted. Replicas synchronize by
//! merging record sets, the record with the later heartbeat winning. A
//! graceful leave leaves a tombstone so a merge does not bring the peer
//! back; a record survives a tombstone only if it heartbeated after it.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::envelope::KeyHandle;
use crate::ids::{Address, PeerId, Tick};

pub const DEFAULT_HEARTBEAT_PERIOD: Tick = 5;
pub const DEFAULT_HEARTBEAT_TIMEOUT: Tick = 3 * DEFAULT_HEARTBEAT_PERIOD;
pub const DEFAULT_SYNC_INTERVAL: Tick = 10;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PeerRecord {
    pub peer: PeerId,
    pub address: Address,
    pub public_key: KeyHandle,
    pub last_heartbeat: Tick,
}

impl PeerRecord {
    // Total order used to break heartbeat ties during merge.
    fn merge_rank(&self) -> (Tick, Address, u64) {
        (self.last_heartbeat, self.address, self.public_key.key_id())
    }
}

/// A membership change and who should hear about it.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MembershipUpdate {
    pub added: Vec<PeerId>,
    pub removed: Vec<PeerId>,
    pub recipients: Vec<PeerId>,
}

impl MembershipUpdate {
    pub fn is_empty(&self) -> bool {
        self.added.is_empty() && self.removed.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeartbeatAck {
    Acknowledged,
    UnknownPeer,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DirectoryError {
    #[error("peer {0} is already registered")]
    DuplicateJoin(PeerId),
    #[error("heartbeat timeouts differ ({0} vs {1})")]
    TimeoutMismatch(Tick, Tick),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Directory {
    records: BTreeMap<PeerId, PeerRecord>,
    departed: BTreeMap<PeerId, Tick>,
    heartbeat_timeout: Tick,
    version: u64,
}

impl Directory {
    pub fn new(heartbeat_timeout: Tick) -> Self {
        Directory {
            records: BTreeMap::new(),
            departed: BTreeMap::new(),
            heartbeat_timeout,
            version: 0,
        }
    }

    /// Rebuilds a replica from its wire form.
    pub fn from_parts(heartbeat_timeout: Tick, records: Vec<PeerRecord>, departed: Vec<(PeerId, Tick)>) -> Self {
        Directory {
            records: records.into_iter().map(|r| (r.peer, r)).collect(),
            departed: departed.into_iter().collect(),
            heartbeat_timeout,
            version: 0,
        }
    }

    /// Tombstones: departed peer and the last heartbeat it left behind.
    pub fn departed(&self) -> Vec<(PeerId, Tick)> {
        self.departed.iter().map(|(p, t)| (*p, *t)).collect()
    }

    pub fn heartbeat_timeout(&self) -> Tick {
        self.heartbeat_timeout
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn contains(&self, peer: PeerId) -> bool {
        self.records.contains_key(&peer)
    }

    pub fn get(&self, peer: PeerId) -> Option<&PeerRecord> {
        self.records.get(&peer)
    }

    pub fn peers(&self) -> impl Iterator<Item = PeerId> + '_ {
        self.records.keys().copied()
    }

    /// Registers `peer` and returns the post-insert snapshot plus the delta
    /// for everyone already present.
    pub fn handle_join(
        &mut self,
        peer: PeerId,
        address: Address,
        public_key: KeyHandle,
        now: Tick,
    ) -> Result<(Vec<PeerRecord>, MembershipUpdate), DirectoryError> {
        if self.records.contains_key(&peer) {
            return Err(DirectoryError::DuplicateJoin(peer));
        }
        let recipients = self.peers().collect();
        self.departed.remove(&peer);
        self.records.insert(
            peer,
            PeerRecord {
                peer,
                address,
                public_key,
                last_heartbeat: now,
            },
        );
        self.version += 1;
        Ok((
            self.snapshot(),
            MembershipUpdate {
                added: vec![peer],
                removed: Vec::new(),
                recipients,
            },
        ))
    }

    pub fn handle_leave(&mut self, peer: PeerId) -> MembershipUpdate {
        let Some(record) = self.records.remove(&peer) else {
            return MembershipUpdate::default();
        };
        self.departed.insert(peer, record.last_heartbeat);
        self.version += 1;
        MembershipUpdate {
            added: Vec::new(),
            removed: vec![peer],
            recipients: self.peers().collect(),
        }
    }

    /// Refreshes liveness. Never moves a heartbeat backwards and never bumps
    /// the version.
    pub fn handle_heartbeat(&mut self, peer: PeerId, now: Tick) -> HeartbeatAck {
        match self.records.get_mut(&peer) {
            Some(r) => {
                r.last_heartbeat = r.last_heartbeat.max(now);
                HeartbeatAck::Acknowledged
            }
            None => HeartbeatAck::UnknownPeer,
        }
    }

    pub fn evict_expired(&mut self, now: Tick) -> (Vec<PeerId>, MembershipUpdate) {
        let timeout = self.heartbeat_timeout;
        let evicted: Vec<PeerId> = self
            .records
            .values()
            .filter(|r| now.saturating_sub(r.last_heartbeat) > timeout)
            .map(|r| r.peer)
            .collect();
        // a record old enough to fall under a tombstone has expired everywhere
        self.departed.retain(|_, t| now.saturating_sub(*t) <= timeout);
        if evicted.is_empty() {
            return (evicted, MembershipUpdate::default());
        }
        for p in &evicted {
            self.records.remove(p);
        }
        self.version += 1;
        let update = MembershipUpdate {
            added: Vec::new(),
            removed: evicted.clone(),
            recipients: self.peers().collect(),
        };
        (evicted, update)
    }

    /// All records in ascending id order.
    pub fn snapshot(&self) -> Vec<PeerRecord> {
        self.records.values().cloned().collect()
    }

    /// Folds `remote` into this replica. Returns the delta relative to the
    /// local state before the merge.
    pub fn merge_from(&mut self, remote: &Directory) -> Result<MembershipUpdate, DirectoryError> {
        if self.heartbeat_timeout != remote.heartbeat_timeout {
            return Err(DirectoryError::TimeoutMismatch(self.heartbeat_timeout, remote.heartbeat_timeout));
        }
        let before: Vec<PeerId> = self.peers().collect();
        let mut changed = false;
        for (id, t) in &remote.departed {
            let ours = self.departed.entry(*id).or_insert(*t);
            if *t > *ours {
                *ours = *t;
            }
        }
        for (id, theirs) in &remote.records {
            match self.records.get_mut(id) {
                Some(ours) => {
                    if theirs.merge_rank() > ours.merge_rank() {
                        *ours = theirs.clone();
                        changed = true;
                    }
                }
                None => {
                    self.records.insert(*id, theirs.clone());
                    changed = true;
                }
            }
        }
        let departed = &self.departed;
        let n = self.records.len();
        self.records
            .retain(|id, r| departed.get(id).is_none_or(|t| r.last_heartbeat > *t));
        changed |= self.records.len() != n;
        self.version = self.version.max(remote.version);
        if changed {
            self.version += 1;
        }
        let added = self.peers().filter(|p| before.binary_search(p).is_err()).collect();
        let removed: Vec<PeerId> = before.iter().copied().filter(|p| !self.records.contains_key(p)).collect();
        let recipients = before.into_iter().filter(|p| self.records.contains_key(p)).collect();
        Ok(MembershipUpdate {
            added,
            removed,
            recipients,
        })
    }
}

/// Merge of two replicas, leaving both inputs untouched.
pub fn merge_directories(local: &Directory, remote: &Directory) -> Result<Directory, DirectoryError> {
    let mut out = local.clone();
    out.merge_from(remote)?;
    Ok(out)
}
