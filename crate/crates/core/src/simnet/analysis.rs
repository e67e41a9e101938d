//! Requester inference from colluders' decrypted views and, optionally,
//! global link metadata.
//!
//! Colluders that sit next to each other on a cycle can link what they saw
//! into a *run*: the honest peer that handed the frame to the first of
//! them, their roles in order, and the honest peer the last one forwarded
//! to. Runs separated by an honest hop cannot be tied to each other, so
//! each run is judged on its own and the adversary keeps the tightest
//! result.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use super::trace::{KnowledgeEntry, Trace};
use crate::envelope::FrameClass;
use crate::ids::{CycleId, PeerId};
use crate::peer::Role;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnalysisError {
    #[error("cycle {0:?} is not in the trace")]
    UnknownCycle(CycleId),
    #[error("cycle {0:?} did not complete")]
    Incomplete(CycleId),
}

/// Consecutive colluders on one cycle with their honest neighbours.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ColluderRun {
    pub pred: PeerId,
    pub members: Vec<PeerId>,
    pub roles: Vec<Role>,
    pub succ: PeerId,
}

/// Links colluder observations of a single cycle into maximal runs.
pub fn extract_runs<'a>(
    entries: impl IntoIterator<Item = &'a KnowledgeEntry>,
    colluding: &BTreeSet<PeerId>,
) -> Vec<ColluderRun> {
    let seen: BTreeMap<PeerId, &KnowledgeEntry> = entries
        .into_iter()
        .filter(|e| colluding.contains(&e.peer) && e.role != Role::Requester)
        .map(|e| (e.peer, e))
        .collect();
    let next_of = |e: &KnowledgeEntry| -> Option<&KnowledgeEntry> {
        let next = *e.decrypted.first()?;
        seen.get(&next).copied().filter(|n| n.link_pred == e.peer)
    };
    let mut runs = Vec::new();
    for e in seen.values() {
        let continues = seen.get(&e.link_pred).is_some_and(|p| next_of(p).map(|n| n.peer) == Some(e.peer));
        if continues {
            continue;
        }
        let mut members = vec![e.peer];
        let mut roles = vec![e.role];
        let mut cur = *e;
        while let Some(n) = next_of(cur) {
            members.push(n.peer);
            roles.push(n.role);
            cur = n;
        }
        let Some(&succ) = cur.decrypted.first() else {
            continue;
        };
        runs.push(ColluderRun {
            pred: e.link_pred,
            members,
            roles,
            succ,
        });
    }
    runs
}

/// Peers that may have started the cycle a run belongs to.
pub fn run_candidates(run: &ColluderRun, live: &BTreeSet<PeerId>, colluding: &BTreeSet<PeerId>) -> BTreeSet<PeerId> {
    let (p, q) = (run.pred, run.succ);
    if p == q {
        return BTreeSet::from([p]);
    }
    let first = run.roles[0];
    let last = run.roles[run.roles.len() - 1];
    let members: BTreeSet<PeerId> = run.members.iter().copied().collect();
    let only_request = run.roles.iter().all(|r| *r == Role::RequestRelay);
    live.iter()
        .copied()
        .filter(|v| !colluding.contains(v) && !members.contains(v))
        .filter(|v| !(*v == p && first == Role::ResponseRelay))
        .filter(|v| !(*v == q && matches!(last, Role::RequestRelay | Role::Provider)))
        .filter(|v| {
            // a request-only run still needs room for a response hop
            !only_request || live.iter().any(|w| !members.contains(w) && *w != p && *w != q && w != v)
        })
        .collect()
}

fn role_at(i: usize, l_req: usize, len: usize) -> Role {
    if i == 0 || i == len - 1 {
        Role::Requester
    } else if i <= l_req {
        Role::RequestRelay
    } else if i == l_req + 1 {
        Role::Provider
    } else {
        Role::ResponseRelay
    }
}

fn matches_run(chain: &[PeerId], l_req: usize, run: &ColluderRun) -> bool {
    let k = run.members.len();
    (0..chain.len().saturating_sub(k + 1)).any(|i| {
        chain[i] == run.pred
            && chain[i + k + 1] == run.succ
            && (0..k).all(|j| chain[i + 1 + j] == run.members[j] && role_at(i + 1 + j, l_req, chain.len()) == run.roles[j])
    })
}

fn any_sequence(pool: &[PeerId], used: &mut Vec<bool>, seq: &mut Vec<PeerId>, len: usize, f: &mut dyn FnMut(&[PeerId]) -> bool) -> bool {
    if seq.len() == len {
        return f(seq);
    }
    for i in 0..pool.len() {
        if used[i] {
            continue;
        }
        used[i] = true;
        seq.push(pool[i]);
        let hit = any_sequence(pool, used, seq, len, f);
        seq.pop();
        used[i] = false;
        if hit {
            return true;
        }
    }
    false
}

/// Exhaustive counterpart of [`run_candidates`]: `v` is kept when some
/// dual path of any length starting at `v` over `live` places the run's
/// members, with their roles, between its two neighbours. Exponential in
/// `live.len()`.
pub fn run_candidates_brute_force(
    run: &ColluderRun,
    live: &BTreeSet<PeerId>,
    colluding: &BTreeSet<PeerId>,
) -> BTreeSet<PeerId> {
    let mut out = BTreeSet::new();
    for &v in live.iter().filter(|v| !colluding.contains(v)) {
        let pool: Vec<PeerId> = live.iter().copied().filter(|w| *w != v).collect();
        let consistent = (0..pool.len()).any(|l_req| {
            (1..pool.len() - l_req).any(|l_resp| {
                let len = l_req + 1 + l_resp;
                let mut check = |hops: &[PeerId]| {
                    let mut chain = Vec::with_capacity(len + 2);
                    chain.push(v);
                    chain.extend_from_slice(hops);
                    chain.push(v);
                    matches_run(&chain, l_req, run)
                };
                any_sequence(&pool, &mut vec![false; pool.len()], &mut Vec::new(), len, &mut check)
            })
        });
        if consistent {
            out.insert(v);
        }
    }
    out
}

fn analyse(
    trace: &Trace,
    colluding: &BTreeSet<PeerId>,
    cycle: CycleId,
    per_run: fn(&ColluderRun, &BTreeSet<PeerId>, &BTreeSet<PeerId>) -> BTreeSet<PeerId>,
) -> Result<BTreeSet<PeerId>, AnalysisError> {
    let record = trace.cycle(cycle).ok_or(AnalysisError::UnknownCycle(cycle))?;
    if record.completed.is_none() {
        return Err(AnalysisError::Incomplete(cycle));
    }
    let live: BTreeSet<PeerId> = record.live.iter().copied().collect();
    if let Some(me) = trace
        .knowledge_of(cycle)
        .find(|e| e.role == Role::Requester && colluding.contains(&e.peer))
    {
        return Ok(BTreeSet::from([me.peer]));
    }
    let mut best: BTreeSet<PeerId> = live.iter().copied().filter(|p| !colluding.contains(p)).collect();
    for run in extract_runs(trace.knowledge_of(cycle), colluding) {
        let set = per_run(&run, &live, colluding);
        if set.len() < best.len() {
            best = set;
        }
    }
    if trace.global_observer {
        let mut sent = BTreeSet::new();
        let mut received = BTreeSet::new();
        for e in trace.links.iter().filter(|e| e.class == FrameClass::Data) {
            sent.insert(e.src);
            received.insert(e.dst);
        }
        best.retain(|p| sent.contains(p) && received.contains(p));
    }
    Ok(best)
}

/// Peers consistent with being the requester of `cycle` given only what
/// `colluding` decrypted and, if the trace carries link events, which
/// peers ever sent and received DATA frames.
pub fn linkability_analysis(
    trace: &Trace,
    colluding: &BTreeSet<PeerId>,
    cycle: CycleId,
) -> Result<BTreeSet<PeerId>, AnalysisError> {
    analyse(trace, colluding, cycle, run_candidates)
}

/// [`linkability_analysis`] with every run judged by exhaustive search.
pub fn brute_force_linkability(
    trace: &Trace,
    colluding: &BTreeSet<PeerId>,
    cycle: CycleId,
) -> Result<BTreeSet<PeerId>, AnalysisError> {
    analyse(trace, colluding, cycle, run_candidates_brute_force)
}

/// True when a global observer following DATA frames hop by hop (each
/// frame answered by exactly one frame from its receiver one tick later)
/// recovers the whole chain of `cycle` from the requester's first send.
pub fn timing_traced(trace: &Trace, cycle: CycleId) -> Result<bool, AnalysisError> {
    let record = trace.cycle(cycle).ok_or(AnalysisError::UnknownCycle(cycle))?;
    if record.completed.is_none() {
        return Err(AnalysisError::Incomplete(cycle));
    }
    let data: Vec<_> = trace.links.iter().filter(|e| e.class == FrameClass::Data).collect();
    let expected = record.expected_chain();
    let from = |time, src| data.iter().filter(move |e| e.time == time && e.src == src);
    let starts: Vec<_> = from(record.started, record.requester).filter(|e| e.dst == expected[1]).collect();
    let [start] = starts[..] else {
        return Ok(false);
    };
    let mut chain = vec![start.src, start.dst];
    let mut cur = *start;
    while chain.len() < expected.len() {
        let next: Vec<_> = from(cur.time + 1, cur.dst).collect();
        let [n] = next[..] else {
            return Ok(false);
        };
        chain.push(n.dst);
        cur = *n;
    }
    Ok(chain == expected)
}
