//! Per-peer cache of shared symmetric keys.
//!
//! The first frame toward a peer is sealed with its public key and carries
//! the sender's own symmetric key. From then on both sides use that key:
//! the receiver stores it under the sender, and the sender notes that it is
//! now shared with the receiver.

use std::collections::BTreeMap;

use rand::RngCore;

use super::cipher::{KeyHandle, KeyId, KeyKind};
use super::EnvelopeError;
use crate::ids::PeerId;

/// How to seal the next frame toward a peer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Scheme {
    Asymmetric { key: KeyHandle, piggyback: KeyHandle },
    Symmetric { key: KeyHandle },
}

impl Scheme {
    pub fn key(&self) -> &KeyHandle {
        match self {
            Scheme::Asymmetric { key, .. } | Scheme::Symmetric { key } => key,
        }
    }

    pub fn piggyback(&self) -> Option<&KeyHandle> {
        match self {
            Scheme::Asymmetric { piggyback, .. } => Some(piggyback),
            Scheme::Symmetric { .. } => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct KeyTable {
    owner: PeerId,
    own_symmetric: KeyHandle,
    entries: BTreeMap<PeerId, KeyHandle>,
}

impl KeyTable {
    pub fn new<R: RngCore + ?Sized>(owner: PeerId, rng: &mut R) -> Self {
        KeyTable {
            owner,
            own_symmetric: KeyHandle::generate_symmetric(Some(owner), rng),
            entries: BTreeMap::new(),
        }
    }

    pub fn owner(&self) -> PeerId {
        self.owner
    }

    pub fn own_symmetric(&self) -> &KeyHandle {
        &self.own_symmetric
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, peer: PeerId) -> Option<&KeyHandle> {
        self.entries.get(&peer)
    }

    pub fn peers(&self) -> impl Iterator<Item = PeerId> + '_ {
        self.entries.keys().copied()
    }

    pub fn select_scheme(&self, dest: PeerId, dest_public: &KeyHandle) -> Result<Scheme, EnvelopeError> {
        if dest == self.owner {
            return Err(EnvelopeError::InvalidPath("cannot select a scheme toward oneself"));
        }
        Ok(match self.entries.get(&dest) {
            Some(key) => Scheme::Symmetric { key: key.clone() },
            None => {
                if dest_public.kind() != KeyKind::AsymmetricPublic {
                    return Err(EnvelopeError::InvalidKeyUse);
                }
                Scheme::Asymmetric {
                    key: dest_public.clone(),
                    piggyback: self.own_symmetric.clone(),
                }
            }
        })
    }

    /// Stores a key received from `sender`. Latest wins.
    pub fn record_piggybacked_key(&mut self, sender: PeerId, key: KeyHandle) -> Result<(), EnvelopeError> {
        if key.kind() != KeyKind::Symmetric {
            return Err(EnvelopeError::InvalidKeyUse);
        }
        if sender == self.owner {
            return Err(EnvelopeError::InvalidPath("own id cannot be a key table entry"));
        }
        self.entries.insert(sender, key);
        Ok(())
    }

    /// After piggybacking our key to `dest`, later frames to it reuse that key.
    pub fn note_piggyback_sent(&mut self, dest: PeerId) {
        if dest != self.owner {
            self.entries.entry(dest).or_insert_with(|| self.own_symmetric.clone());
        }
    }

    pub fn forget(&mut self, peer: PeerId) {
        self.entries.remove(&peer);
    }

    /// The symmetric key with this id, if we hold one.
    pub fn opener(&self, key_id: KeyId) -> Option<&KeyHandle> {
        if self.own_symmetric.key_id() == key_id {
            return Some(&self.own_symmetric);
        }
        self.entries.values().find(|k| k.key_id() == key_id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envelope::cipher::{Cipher, KeyPair, TestCipher};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(n: u64, seed: u64) -> (Vec<KeyTable>, Vec<KeyPair>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tables = (0..n).map(|i| KeyTable::new(PeerId(i), &mut rng)).collect();
        let pairs = (0..n).map(|i| KeyPair::generate(PeerId(i), &mut rng)).collect();
        (tables, pairs)
    }

    #[test]
    fn first_contact_is_asymmetric_with_own_key() {
        let (t, p) = setup(6, 1);
        match t[0].select_scheme(PeerId(5), &p[5].public).unwrap() {
            Scheme::Asymmetric { key, piggyback } => {
                assert_eq!(key, p[5].public);
                assert_eq!(&piggyback, t[0].own_symmetric());
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn cached_entry_is_symmetric() {
        let (mut t, p) = setup(6, 1);
        let s5 = t[5].own_symmetric().clone();
        t[0].record_piggybacked_key(PeerId(5), s5.clone()).unwrap();
        let before = t[0].len();
        assert_eq!(t[0].select_scheme(PeerId(5), &p[5].public).unwrap(), Scheme::Symmetric { key: s5 });
        assert_eq!(t[0].len(), before);
    }

    #[test]
    fn self_destination_is_rejected() {
        let (t, p) = setup(2, 1);
        assert!(t[0].select_scheme(PeerId(0), &p[0].public).is_err());
    }

    #[test]
    fn latest_piggybacked_key_wins() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (mut t, _) = setup(2, 1);
        let s7 = KeyHandle::generate_symmetric(Some(PeerId(7)), &mut rng);
        let s7b = KeyHandle::generate_symmetric(Some(PeerId(7)), &mut rng);
        t[0].record_piggybacked_key(PeerId(7), s7).unwrap();
        t[0].record_piggybacked_key(PeerId(7), s7b.clone()).unwrap();
        assert_eq!(t[0].len(), 1);
        let blob = TestCipher.seal(t[0].get(PeerId(7)).unwrap(), b"m").unwrap();
        assert_eq!(TestCipher.open(&s7b, &blob).unwrap(), b"m");
    }

    #[test]
    fn rejects_non_symmetric_and_own_id() {
        let (mut t, p) = setup(3, 1);
        assert_eq!(
            t[0].record_piggybacked_key(PeerId(1), p[1].public.clone()),
            Err(EnvelopeError::InvalidKeyUse)
        );
        let own = t[0].own_symmetric().clone();
        assert!(t[0].record_piggybacked_key(PeerId(0), own).is_err());
        t[0].note_piggyback_sent(PeerId(0));
        assert!(t[0].get(PeerId(0)).is_none());
    }

    proptest! {
        #[test]
        fn key_direction_round_trip(n in 2u64..8, seed in any::<u64>(), msg in proptest::collection::vec(any::<u8>(), 0..64)) {
            let (mut t, p) = setup(n, seed);
            for x in 0..n as usize {
                for y in 0..n as usize {
                    if x == y {
                        continue;
                    }
                    // x makes first contact with y unless y already reached x
                    if let Scheme::Asymmetric { piggyback, .. } = t[x].select_scheme(PeerId(y as u64), &p[y].public).unwrap() {
                        t[y].record_piggybacked_key(PeerId(x as u64), piggyback).unwrap();
                        t[x].note_piggyback_sent(PeerId(y as u64));
                    }
                    let k = match t[y].select_scheme(PeerId(x as u64), &p[x].public).unwrap() {
                        Scheme::Symmetric { key } => key,
                        other => panic!("{other:?}"),
                    };
                    let blob = TestCipher.seal(&k, &msg).unwrap();
                    let opener = t[x].opener(blob.key_id).unwrap();
                    prop_assert_eq!(TestCipher.open(opener, &blob).unwrap(), msg.clone());
                }
            }
            for (i, table) in t.iter().enumerate() {
                prop_assert!(table.len() < n as usize);
                prop_assert!(table.get(PeerId(i as u64)).is_none());
            }
        }
    }
}
