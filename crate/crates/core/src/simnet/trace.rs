use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::envelope::FrameClass;
use crate::ids::{CycleId, PeerId, Tick};
use crate::peer::Role;

/// One transmission as seen on the wire.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkEvent {
    pub time: Tick,
    pub src: PeerId,
    pub dst: PeerId,
    pub size: usize,
    pub class: FrameClass,
}

/// What one peer learned by opening one DATA frame of a cycle.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeEntry {
    pub time: Tick,
    pub peer: PeerId,
    pub cycle: CycleId,
    pub role: Role,
    /// The link-level sender of the frame.
    pub link_pred: PeerId,
    pub decrypted: Vec<PeerId>,
}

/// Ground truth for one launched cycle (one attempt of one message).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CycleRecord {
    pub cycle: CycleId,
    pub message: usize,
    pub attempt: u32,
    pub requester: PeerId,
    pub provider: PeerId,
    pub request_hops: Vec<PeerId>,
    pub response_hops: Vec<PeerId>,
    pub started: Tick,
    pub completed: Option<Tick>,
    /// Live peers when the cycle started.
    pub live: Vec<PeerId>,
    pub data_sends: u64,
}

impl CycleRecord {
    /// The transmission chain of a fault-free cycle.
    pub fn expected_chain(&self) -> Vec<PeerId> {
        let mut chain = vec![self.requester];
        chain.extend(&self.request_hops);
        chain.push(self.provider);
        chain.extend(&self.response_hops);
        chain.push(self.requester);
        chain
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Completed,
    Failed,
    RequesterDeparted,
    Pending,
}

/// One workload item, possibly spanning several attempts.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageRecord {
    pub index: usize,
    pub requester: PeerId,
    pub provider: PeerId,
    pub started: Tick,
    pub outcome: Outcome,
    pub resolved: Option<Tick>,
    pub attempts: u32,
}

/// Seals of CONTROL frames on one directed link.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairSeals {
    pub asymmetric: u64,
    pub symmetric: u64,
    pub first_time: Tick,
    pub first_asymmetric: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub asymmetric_seals: u64,
    pub symmetric_seals: u64,
    pub data_sent: u64,
    pub data_delivered: u64,
    pub data_lost: u64,
    /// DATA frames still queued when the run ended.
    pub data_in_flight: u64,
    pub control_sent: u64,
    pub drops: u64,
    pub departures: u64,
    pub joins: u64,
    pub convergence_lag_max: Tick,
}

/// Record of a run. Link events are only collected when a global observer
/// is enabled; the rest is ground truth kept for analysis.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trace {
    pub links: Vec<LinkEvent>,
    pub knowledge: Vec<KnowledgeEntry>,
    pub cycles: Vec<CycleRecord>,
    pub messages: Vec<MessageRecord>,
    pub colluding: Vec<PeerId>,
    /// Peers removed by churn and when.
    pub departures: BTreeMap<PeerId, Tick>,
    pub global_observer: bool,
    pub control_seals: BTreeMap<(PeerId, PeerId), PairSeals>,
    /// Every distinct DATA frame size sent during the run.
    pub data_frame_sizes: Vec<usize>,
    pub counters: Counters,
}

pub const TRACE_CSV_HEADER: &str = "time,src,dst,size,class";

impl Trace {
    /// Appends a link event if the observer is on. The observer sees
    /// endpoints, size and class only.
    pub fn observe(&mut self, event: LinkEvent) {
        if self.global_observer {
            self.links.push(event);
        }
    }

    pub fn cycle(&self, id: CycleId) -> Option<&CycleRecord> {
        self.cycles.iter().find(|c| c.cycle == id)
    }

    pub fn knowledge_of(&self, id: CycleId) -> impl Iterator<Item = &KnowledgeEntry> {
        self.knowledge.iter().filter(move |k| k.cycle == id)
    }

    /// Whether `peer` left by churn at or before `t`.
    pub fn departed_by(&self, peer: PeerId, t: Tick) -> bool {
        self.departures.get(&peer).is_some_and(|&d| d <= t)
    }

    pub fn completed_cycles(&self) -> impl Iterator<Item = &CycleRecord> {
        self.cycles.iter().filter(|c| c.completed.is_some())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(32 * (self.links.len() + 1));
        out.push_str(TRACE_CSV_HEADER);
        out.push('\n');
        for e in &self.links {
            let _ = writeln!(out, "{},{},{},{},{}", e.time, e.src, e.dst, e.size, e.class.as_str());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disabled_observer_records_nothing() {
        let mut t = Trace::default();
        let e = LinkEvent {
            time: 1,
            src: PeerId(1),
            dst: PeerId(2),
            size: 2048,
            class: FrameClass::Data,
        };
        t.observe(e.clone());
        assert!(t.links.is_empty());
        t.global_observer = true;
        t.observe(e);
        t.observe(LinkEvent {
            time: 2,
            src: PeerId(2),
            dst: PeerId(9),
            size: 77,
            class: FrameClass::Control,
        });
        assert_eq!(t.to_csv(), "time,src,dst,size,class\n1,1,2,2048,DATA\n2,2,9,77,CONTROL\n");
    }
}
