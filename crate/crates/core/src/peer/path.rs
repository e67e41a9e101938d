use rand::seq::SliceRandom;
use rand::Rng;

use super::PeerError;
use crate::directory::PeerRecord;
use crate::ids::PeerId;

/// The requester's two hop sequences. Hops are distinct across both
/// sequences and exclude the requester and the provider.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DualPath {
    pub request_hops: Vec<PeerId>,
    pub response_hops: Vec<PeerId>,
    ttl_bound: usize,
}

impl DualPath {
    pub fn new(request_hops: Vec<PeerId>, response_hops: Vec<PeerId>) -> Self {
        let ttl_bound = request_hops.len().max(response_hops.len()) + 1;
        DualPath {
            request_hops,
            response_hops,
            ttl_bound,
        }
    }

    /// Private hop budget fixed when the path was drawn. It bounds path
    /// length and is never put on the wire.
    pub fn ttl_bound(&self) -> usize {
        self.ttl_bound
    }

    pub fn hops(&self) -> impl Iterator<Item = PeerId> + '_ {
        self.request_hops.iter().chain(&self.response_hops).copied()
    }

    pub fn contains(&self, peer: PeerId) -> bool {
        self.hops().any(|h| h == peer)
    }

    /// DATA sends in one fault-free cycle over this path.
    pub fn transmissions(&self) -> usize {
        self.request_hops.len() + self.response_hops.len() + 2
    }

    pub fn is_valid_for(&self, requester: PeerId, provider: PeerId) -> bool {
        let mut seen = std::collections::BTreeSet::new();
        !self.response_hops.is_empty()
            && self.hops().all(|h| h != requester && h != provider && seen.insert(h))
            && self.ttl_bound > self.request_hops.len()
            && self.ttl_bound > self.response_hops.len()
    }
}

/// Draws `l_req + l_resp` distinct hops uniformly from the snapshot,
/// excluding `me` and `provider`.
pub fn select_dual_path<R: Rng + ?Sized>(
    snapshot: &[PeerRecord],
    me: PeerId,
    provider: PeerId,
    l_req: usize,
    l_resp: usize,
    rng: &mut R,
) -> Result<DualPath, PeerError> {
    let mut eligible: Vec<PeerId> = snapshot
        .iter()
        .map(|r| r.peer)
        .filter(|&p| p != me && p != provider)
        .collect();
    eligible.sort();
    eligible.dedup();
    let needed = l_req + l_resp;
    if eligible.len() < needed {
        return Err(PeerError::NotEnoughPeers {
            needed,
            available: eligible.len(),
        });
    }
    let (chosen, _) = eligible.partial_shuffle(rng, needed);
    let request_hops = chosen[..l_req].to_vec();
    let response_hops = chosen[l_req..].to_vec();
    let ttl_bound = l_req.max(l_resp) + 1 + rng.gen_range(0..=2);
    Ok(DualPath {
        request_hops,
        response_hops,
        ttl_bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envelope::KeyPair;
    use crate::ids::Address;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn snapshot(ids: impl IntoIterator<Item = u64>) -> Vec<PeerRecord> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        ids.into_iter()
            .map(|p| PeerRecord {
                peer: PeerId(p),
                address: Address(p),
                public_key: KeyPair::generate(PeerId(p), &mut rng).public,
                last_heartbeat: 0,
            })
            .collect()
    }

    #[test]
    fn three_plus_three_from_eight_eligible() {
        let snap = snapshot(0..10);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = select_dual_path(&snap, PeerId(0), PeerId(1), 3, 3, &mut rng).unwrap();
        assert_eq!(p.request_hops.len(), 3);
        assert_eq!(p.response_hops.len(), 3);
        assert!(p.is_valid_for(PeerId(0), PeerId(1)));
    }

    #[test]
    fn exact_fit_uses_everyone() {
        let snap = snapshot(0..8);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = select_dual_path(&snap, PeerId(0), PeerId(1), 3, 3, &mut rng).unwrap();
        let mut hops: Vec<u64> = p.hops().map(|h| h.0).collect();
        hops.sort();
        assert_eq!(hops, (2..8).collect::<Vec<_>>());
    }

    #[test]
    fn too_few_peers() {
        let snap = snapshot(0..7);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert_eq!(
            select_dual_path(&snap, PeerId(0), PeerId(1), 3, 3, &mut rng),
            Err(PeerError::NotEnoughPeers { needed: 6, available: 5 })
        );
    }

    #[test]
    fn same_seed_same_path() {
        let snap = snapshot(0..20);
        let a = select_dual_path(&snap, PeerId(0), PeerId(1), 3, 3, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = select_dual_path(&snap, PeerId(0), PeerId(1), 3, 3, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn inclusion_frequency_matches_hypergeometric_expectation() {
        // 10 eligible peers, 6 drawn: each is included with probability 6/10
        let snap = snapshot(0..12);
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let draws = 10_000;
        let mut counts = [0u32; 12];
        for _ in 0..draws {
            let p = select_dual_path(&snap, PeerId(0), PeerId(1), 3, 3, &mut rng).unwrap();
            for h in p.hops() {
                counts[h.0 as usize] += 1;
            }
        }
        let expected = draws as f64 * 6.0 / 10.0;
        for (i, &c) in counts.iter().enumerate().skip(2) {
            let dev = (c as f64 - expected).abs() / expected;
            assert!(dev <= 0.05, "peer {i}: {c} vs {expected}");
        }
        assert_eq!(counts[0] + counts[1], 0);
    }

    proptest! {
        #[test]
        fn drawn_paths_are_legal(
            ids in proptest::collection::btree_set(0u64..40, 2..30),
            l_req in 0usize..5,
            l_resp in 1usize..5,
            seed in any::<u64>(),
        ) {
            let ids: Vec<u64> = ids.into_iter().collect();
            let (me, provider) = (PeerId(ids[0]), PeerId(ids[1]));
            let snap = snapshot(ids.iter().copied());
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            match select_dual_path(&snap, me, provider, l_req, l_resp, &mut rng) {
                Ok(p) => {
                    prop_assert_eq!(p.request_hops.len(), l_req);
                    prop_assert_eq!(p.response_hops.len(), l_resp);
                    prop_assert!(p.is_valid_for(me, provider));
                    prop_assert!(p.hops().all(|h| ids.contains(&h.0)));
                }
                Err(PeerError::NotEnoughPeers { needed, available }) => {
                    prop_assert!(available < needed);
                    prop_assert_eq!(available, ids.len() - 2);
                }
                Err(e) => prop_assert!(false, "{e}"),
            }
        }
    }
}
