//! Deterministic simulation of a dual-path overlay: supernodes, peers,
//! churn, a workload of request/response cycles, and the adversaries that
//! read the resulting trace.

pub mod analysis;
mod churn;
mod config;
mod metrics;
mod trace;
mod world;

use thiserror::Error;

use crate::envelope::EnvelopeError;
use crate::peer::{echo_responder, PeerError, Responder};

pub use analysis::{
    brute_force_linkability, extract_runs, linkability_analysis, run_candidates, run_candidates_brute_force,
    timing_traced, AnalysisError, ColluderRun,
};
pub use churn::{apply_churn, ChurnPlan};
pub use config::{
    AdversaryConfig, ChurnConfig, Colluding, ConfigError, ScenarioConfig, Selection, WorkloadConfig, MIN_PAD_SIZE,
};
pub use metrics::{compute_metrics, Metrics};
pub use trace::{
    Counters, CycleRecord, KnowledgeEntry, LinkEvent, MessageRecord, Outcome, PairSeals, Trace, TRACE_CSV_HEADER,
};
pub use world::{Simulator, SUPERNODE_BASE};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("envelope failure: {0}")]
    Envelope(EnvelopeError),
    #[error("peer failure: {0}")]
    Peer(PeerError),
}

/// Runs a scenario with providers that echo the request.
pub fn run_scenario(config: &ScenarioConfig) -> Result<(Metrics, Trace), SimError> {
    run_scenario_with(config, echo_responder())
}

pub fn run_scenario_with(config: &ScenarioConfig, responder: Responder) -> Result<(Metrics, Trace), SimError> {
    let trace = Simulator::new(config.clone(), responder)?.run()?;
    let metrics = compute_metrics(&trace, config);
    Ok((metrics, trace))
}
