use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::directory::{DEFAULT_HEARTBEAT_PERIOD, DEFAULT_HEARTBEAT_TIMEOUT, DEFAULT_SYNC_INTERVAL};
use crate::envelope::ResponseMode;
use crate::ids::{PeerId, Tick};
use crate::peer::{default_cycle_timeout, PeerConfig, DEFAULT_PAD_SIZE, DEFAULT_RETRIES};

/// Smallest frame that can hold a one-hop request.
pub const MIN_PAD_SIZE: usize = 256;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid `{field}`: {reason}")]
pub struct ConfigError {
    pub field: String,
    pub reason: String,
}

impl ConfigError {
    pub fn new(field: &str, reason: impl Into<String>) -> Self {
        ConfigError {
            field: field.to_string(),
            reason: reason.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChurnConfig {
    pub leave_prob_per_interval: f64,
    /// New peers per interval; the fractional part joins with that probability.
    pub join_rate: f64,
    pub interval: Tick,
}

impl Default for ChurnConfig {
    fn default() -> Self {
        ChurnConfig {
            leave_prob_per_interval: 0.0,
            join_rate: 0.0,
            interval: 50,
        }
    }
}

impl ChurnConfig {
    pub fn is_active(&self) -> bool {
        self.leave_prob_per_interval > 0.0 || self.join_rate > 0.0
    }
}

/// Colluding peers, either listed or drawn as a fraction of the initial peers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Colluding {
    Peers(Vec<PeerId>),
    Fraction { fraction: f64 },
}

impl Default for Colluding {
    fn default() -> Self {
        Colluding::Peers(Vec::new())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdversaryConfig {
    pub colluding: Colluding,
    pub global_observer: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum Selection {
    /// Requester and provider drawn uniformly from live peers per cycle.
    #[default]
    Uniform,
    Fixed {
        requester: PeerId,
        provider: PeerId,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadConfig {
    pub n_cycles: usize,
    pub selection: Selection,
    /// Ticks between cycle starts.
    pub interval: Tick,
    pub message_size: usize,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        WorkloadConfig {
            n_cycles: 10,
            selection: Selection::Uniform,
            interval: 5,
            message_size: 64,
        }
    }
}

/// Everything a simulated run depends on. Initial peers get ids
/// `1..=n_peers`; peers joining later continue the sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub n_peers: usize,
    pub n_supernodes: usize,
    #[serde(rename = "L_req")]
    pub l_req: usize,
    #[serde(rename = "L_resp")]
    pub l_resp: usize,
    pub heartbeat_period: Tick,
    pub heartbeat_timeout: Tick,
    pub sync_interval: Tick,
    /// Defaults to `4 * (L_req + L_resp + 2)` when absent.
    pub cycle_timeout: Option<Tick>,
    pub rotate_every: u32,
    pub retries: u32,
    pub pad_size: usize,
    pub churn: ChurnConfig,
    pub adversary: AdversaryConfig,
    pub workload: WorkloadConfig,
    pub seed: u64,
    pub response_payload: ResponseMode,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            n_peers: 10,
            n_supernodes: 2,
            l_req: 3,
            l_resp: 3,
            heartbeat_period: DEFAULT_HEARTBEAT_PERIOD,
            heartbeat_timeout: DEFAULT_HEARTBEAT_TIMEOUT,
            sync_interval: DEFAULT_SYNC_INTERVAL,
            cycle_timeout: None,
            rotate_every: 1,
            retries: DEFAULT_RETRIES,
            pad_size: DEFAULT_PAD_SIZE,
            churn: ChurnConfig::default(),
            adversary: AdversaryConfig::default(),
            workload: WorkloadConfig::default(),
            seed: 0,
            response_payload: ResponseMode::EndToEnd,
        }
    }
}

fn probability(field: &str, p: f64) -> Result<(), ConfigError> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(ConfigError::new(field, format!("{p} is not a probability in [0, 1]")))
    }
}

fn positive(field: &str, v: u64) -> Result<(), ConfigError> {
    if v == 0 {
        Err(ConfigError::new(field, "must be at least 1"))
    } else {
        Ok(())
    }
}

impl ScenarioConfig {
    pub fn cycle_timeout(&self) -> Tick {
        self.cycle_timeout.unwrap_or_else(|| default_cycle_timeout(self.l_req, self.l_resp))
    }

    pub fn peer_config(&self) -> PeerConfig {
        PeerConfig {
            l_req: self.l_req,
            l_resp: self.l_resp,
            pad_size: self.pad_size,
            cycle_timeout: self.cycle_timeout(),
            retries: self.retries,
            rotate_every: self.rotate_every,
            response_payload: self.response_payload,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let needed = self.l_req + self.l_resp + 2;
        if self.n_peers < needed {
            return Err(ConfigError::new(
                "n_peers",
                format!("{} peers cannot host L_req + L_resp + 2 = {needed} distinct parties", self.n_peers),
            ));
        }
        if self.l_resp == 0 {
            return Err(ConfigError::new("L_resp", "the response path needs at least one hop"));
        }
        positive("n_supernodes", self.n_supernodes as u64)?;
        positive("heartbeat_period", self.heartbeat_period)?;
        positive("heartbeat_timeout", self.heartbeat_timeout)?;
        positive("sync_interval", self.sync_interval)?;
        if let Some(t) = self.cycle_timeout {
            positive("cycle_timeout", t)?;
        }
        positive("rotate_every", self.rotate_every as u64)?;
        if self.pad_size < MIN_PAD_SIZE {
            return Err(ConfigError::new("pad_size", format!("must be at least {MIN_PAD_SIZE}")));
        }
        probability("churn.leave_prob_per_interval", self.churn.leave_prob_per_interval)?;
        if !(self.churn.join_rate.is_finite() && self.churn.join_rate >= 0.0) {
            return Err(ConfigError::new("churn.join_rate", "must be a non-negative number"));
        }
        positive("churn.interval", self.churn.interval)?;
        if let Colluding::Fraction { fraction } = self.adversary.colluding {
            probability("adversary.colluding.fraction", fraction)?;
        }
        positive("workload.interval", self.workload.interval)?;
        if let Selection::Fixed { requester, provider } = self.workload.selection {
            let in_range = |p: PeerId| p.0 >= 1 && p.0 <= self.n_peers as u64;
            if requester == provider || !in_range(requester) || !in_range(provider) {
                return Err(ConfigError::new(
                    "workload.selection",
                    "requester and provider must be distinct initial peers",
                ));
            }
        }
        Ok(())
    }
}
