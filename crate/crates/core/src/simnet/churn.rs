use rand::Rng;

use super::config::ChurnConfig;
use crate::ids::PeerId;

/// Membership changes for one churn interval.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ChurnPlan {
    /// Peers that vanish without a LEAVE signal.
    pub leaving: Vec<PeerId>,
    pub joining: usize,
}

/// Each live peer leaves with `leave_prob_per_interval`; `join_rate` new
/// peers arrive, the fractional part as a Bernoulli draw.
pub fn apply_churn<R: Rng + ?Sized>(live: &[PeerId], rng: &mut R, churn: &ChurnConfig) -> ChurnPlan {
    let p = churn.leave_prob_per_interval.clamp(0.0, 1.0);
    let leaving = live.iter().copied().filter(|_| p > 0.0 && rng.gen_bool(p)).collect();
    let whole = churn.join_rate.floor();
    let frac = churn.join_rate - whole;
    let joining = whole as usize + usize::from(frac > 0.0 && rng.gen_bool(frac));
    ChurnPlan { leaving, joining }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn live(n: u64) -> Vec<PeerId> {
        (1..=n).map(PeerId).collect()
    }

    #[test]
    fn zero_probability_never_departs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = ChurnConfig::default();
        for _ in 0..100 {
            assert_eq!(apply_churn(&live(50), &mut rng, &c), ChurnPlan::default());
        }
    }

    #[test]
    fn certain_departure_empties_the_network() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = ChurnConfig {
            leave_prob_per_interval: 1.0,
            ..ChurnConfig::default()
        };
        assert_eq!(apply_churn(&live(50), &mut rng, &c).leaving, live(50));
    }

    #[test]
    fn fractional_join_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = ChurnConfig {
            join_rate: 2.5,
            ..ChurnConfig::default()
        };
        let total: usize = (0..4000).map(|_| apply_churn(&[], &mut rng, &c).joining).sum();
        let mean = total as f64 / 4000.0;
        assert!((mean - 2.5).abs() < 0.05, "{mean}");
    }

    #[test]
    fn departures_stay_within_three_sigma_of_binomial() {
        // 50 peers, p = 0.1, 100 intervals: Binomial(5000, 0.1)
        let c = ChurnConfig {
            leave_prob_per_interval: 0.1,
            ..ChurnConfig::default()
        };
        let (n, p) = (5000.0, 0.1);
        let sigma = f64::sqrt(n * p * (1.0 - p));
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let total: usize = (0..100).map(|_| apply_churn(&live(50), &mut rng, &c).leaving.len()).sum();
            assert!((total as f64 - n * p).abs() <= 3.0 * sigma, "seed {seed}: {total}");
        }
    }
}
