use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::analysis::{linkability_analysis, timing_traced};
use super::config::ScenarioConfig;
use super::trace::{MessageRecord, Outcome, Trace};
use crate::ids::{PeerId, Tick};

/// Summary of a run. A cycle here is one workload message, however many
/// attempts it took; `attempts_launched` counts the attempts.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub cycles_attempted: u64,
    pub cycles_completed: u64,
    pub cycles_failed: u64,
    pub completion_fraction: f64,
    /// Completion among messages whose requester and provider were both
    /// still present when the message was resolved, i.e. failures caused
    /// by relays only.
    pub completion_fraction_live_endpoints: f64,
    pub attempts_launched: u64,
    pub data_transmissions: u64,
    /// DATA sends per completed attempt.
    pub mean_transmissions_per_cycle: f64,
    pub asymmetric_seals: u64,
    pub symmetric_seals: u64,
    /// Requester anonymity set of each completed attempt under the
    /// configured colluders (and observer, if any), in launch order.
    pub anonymity_set_sizes: Vec<usize>,
    pub anonymity_set_min: usize,
    pub anonymity_set_median: f64,
    pub anonymity_set_mean: f64,
    /// Share of completed attempts a global observer traces end to end by
    /// timing alone. Absent without an observer.
    pub timing_identified_fraction: Option<f64>,
    /// Mean size of the intersection of a requester's candidate sets over
    /// its completed attempts, for requesters with at least two.
    pub mean_intersection_size: Option<f64>,
    pub convergence_lag_max: Tick,
}

fn median(sorted: &[usize]) -> f64 {
    match sorted.len() {
        0 => 0.0,
        n if n % 2 == 1 => sorted[n / 2] as f64,
        n => (sorted[n / 2 - 1] + sorted[n / 2]) as f64 / 2.0,
    }
}

fn mean(values: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = values.len();
    if n == 0 {
        0.0
    } else {
        values.sum::<f64>() / n as f64
    }
}

pub fn compute_metrics(trace: &Trace, config: &ScenarioConfig) -> Metrics {
    let attempted = trace.messages.len() as u64;
    let completed = trace.messages.iter().filter(|m| m.outcome == Outcome::Completed).count() as u64;
    let failed = trace
        .messages
        .iter()
        .filter(|m| matches!(m.outcome, Outcome::Failed | Outcome::RequesterDeparted))
        .count() as u64;

    let end = |m: &MessageRecord| m.resolved.unwrap_or(Tick::MAX);
    let stable: Vec<&MessageRecord> = trace
        .messages
        .iter()
        .filter(|m| {
            m.outcome != Outcome::RequesterDeparted
                && !trace.departed_by(m.requester, end(m))
                && !trace.departed_by(m.provider, end(m))
        })
        .collect();
    let stable_done = stable.iter().filter(|m| m.outcome == Outcome::Completed).count();

    let colluding: BTreeSet<PeerId> = trace.colluding.iter().copied().collect();
    let done: Vec<_> = trace.completed_cycles().collect();
    let mut sizes = Vec::with_capacity(done.len());
    let mut by_requester: BTreeMap<PeerId, BTreeSet<PeerId>> = BTreeMap::new();
    let mut repeats: BTreeMap<PeerId, usize> = BTreeMap::new();
    let mut traced = 0usize;
    for c in &done {
        let set = linkability_analysis(trace, &colluding, c.cycle).expect("completed cycle");
        sizes.push(set.len());
        *repeats.entry(c.requester).or_default() += 1;
        by_requester
            .entry(c.requester)
            .and_modify(|acc| acc.retain(|p| set.contains(p)))
            .or_insert(set);
        if config.adversary.global_observer && timing_traced(trace, c.cycle).expect("completed cycle") {
            traced += 1;
        }
    }
    let mut sorted = sizes.clone();
    sorted.sort_unstable();
    let repeated: Vec<f64> = by_requester
        .iter()
        .filter(|(r, _)| repeats[*r] >= 2)
        .map(|(_, s)| s.len() as f64)
        .collect();

    Metrics {
        cycles_attempted: attempted,
        cycles_completed: completed,
        cycles_failed: failed,
        completion_fraction: if attempted == 0 { 0.0 } else { completed as f64 / attempted as f64 },
        completion_fraction_live_endpoints: if stable.is_empty() {
            0.0
        } else {
            stable_done as f64 / stable.len() as f64
        },
        attempts_launched: trace.cycles.len() as u64,
        data_transmissions: trace.counters.data_sent,
        mean_transmissions_per_cycle: mean(done.iter().map(|c| c.data_sends as f64)),
        asymmetric_seals: trace.counters.asymmetric_seals,
        symmetric_seals: trace.counters.symmetric_seals,
        anonymity_set_min: sorted.first().copied().unwrap_or(0),
        anonymity_set_median: median(&sorted),
        anonymity_set_mean: mean(sizes.iter().map(|&s| s as f64)),
        anonymity_set_sizes: sizes,
        timing_identified_fraction: config
            .adversary
            .global_observer
            .then(|| if done.is_empty() { 0.0 } else { traced as f64 / done.len() as f64 }),
        mean_intersection_size: (!repeated.is_empty()).then(|| mean(repeated.into_iter())),
        convergence_lag_max: trace.counters.convergence_lag_max,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_trace_has_zero_counters() {
        let m = compute_metrics(&Trace::default(), &ScenarioConfig::default());
        assert_eq!(m.cycles_attempted, 0);
        assert_eq!(m.cycles_completed, 0);
        assert_eq!(m.cycles_failed, 0);
        assert_eq!(m.mean_transmissions_per_cycle, 0.0);
        assert!(m.anonymity_set_sizes.is_empty());
        assert_eq!(m.timing_identified_fraction, None);
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&[1, 3, 5]), 3.0);
        assert_eq!(median(&[1, 2, 4, 9]), 3.0);
    }
}
