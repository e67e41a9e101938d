//! Membership frames between peers and supernodes, and between supernode
//! replicas.
//!
//! These exchanges are direct, so they go through the sender's key table:
//! the first frame to a party is sealed with its public key and carries the
//! sender's symmetric key; every later frame in either direction uses that
//! symmetric key.
//!
//! Sealed plaintext: `[sender: 8][piggyback flag: 1][key: 40, if flagged][type: 1][body]`.

use crate::directory::{Directory, PeerRecord};
use crate::envelope::{find_opener, Cipher, EnvelopeError, KeyHandle, KeyTable, Packet, Scheme, SchemeTag, SealedBlob, KEY_WIRE_LEN};
use crate::ids::{Address, PeerId, Tick};

const RECORD_LEN: usize = 8 + 8 + KEY_WIRE_LEN + 8;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ControlMsg {
    Join { address: Address, public_key: KeyHandle },
    JoinAck { records: Vec<PeerRecord> },
    Leave,
    Heartbeat,
    /// Reply to a heartbeat from a peer the supernode does not know.
    UnknownPeer,
    MemberAdded { records: Vec<PeerRecord> },
    MemberRemoved { peers: Vec<PeerId> },
    List,
    ListReply { records: Vec<PeerRecord> },
    Sync { records: Vec<PeerRecord>, departed: Vec<(PeerId, Tick)> },
}

impl ControlMsg {
    pub fn name(&self) -> &'static str {
        match self {
            ControlMsg::Join { .. } => "JOIN",
            ControlMsg::JoinAck { .. } => "JOIN_ACK",
            ControlMsg::Leave => "LEAVE",
            ControlMsg::Heartbeat => "HEARTBEAT",
            ControlMsg::UnknownPeer => "UNKNOWN_PEER",
            ControlMsg::MemberAdded { .. } => "MEMBER_ADDED",
            ControlMsg::MemberRemoved { .. } => "MEMBER_REMOVED",
            ControlMsg::List => "LIST",
            ControlMsg::ListReply { .. } => "LIST_REPLY",
            ControlMsg::Sync { .. } => "SYNC",
        }
    }

    fn tag(&self) -> u8 {
        match self {
            ControlMsg::Join { .. } => 1,
            ControlMsg::JoinAck { .. } => 2,
            ControlMsg::Leave => 3,
            ControlMsg::Heartbeat => 4,
            ControlMsg::UnknownPeer => 5,
            ControlMsg::MemberAdded { .. } => 6,
            ControlMsg::MemberRemoved { .. } => 7,
            ControlMsg::List => 8,
            ControlMsg::ListReply { .. } => 9,
            ControlMsg::Sync { .. } => 10,
        }
    }

    pub fn encode(&self) -> Result<Vec<u8>, EnvelopeError> {
        let mut out = vec![self.tag()];
        match self {
            ControlMsg::Join { address, public_key } => {
                out.extend_from_slice(&address.0.to_be_bytes());
                out.extend_from_slice(&public_key.public_to_wire()?);
            }
            ControlMsg::JoinAck { records } | ControlMsg::MemberAdded { records } | ControlMsg::ListReply { records } => {
                encode_records(&mut out, records)?;
            }
            ControlMsg::MemberRemoved { peers } => {
                out.extend_from_slice(&(peers.len() as u32).to_be_bytes());
                for p in peers {
                    out.extend_from_slice(&p.to_bytes());
                }
            }
            ControlMsg::Sync { records, departed } => {
                encode_records(&mut out, records)?;
                out.extend_from_slice(&(departed.len() as u32).to_be_bytes());
                for (p, t) in departed {
                    out.extend_from_slice(&p.to_bytes());
                    out.extend_from_slice(&t.to_be_bytes());
                }
            }
            ControlMsg::Leave | ControlMsg::Heartbeat | ControlMsg::UnknownPeer | ControlMsg::List => {}
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, EnvelopeError> {
        let (&tag, mut rest) = bytes.split_first().ok_or(EnvelopeError::Malformed("empty control message"))?;
        let msg = match tag {
            1 => {
                let address = Address(u64_at(&mut rest)?);
                let key = take(&mut rest, KEY_WIRE_LEN)?;
                // owner is filled in by the receiver, which knows the sender
                ControlMsg::Join {
                    address,
                    public_key: KeyHandle::public_from_wire(key, PeerId(0))?,
                }
            }
            2 => ControlMsg::JoinAck {
                records: decode_records(&mut rest)?,
            },
            3 => ControlMsg::Leave,
            4 => ControlMsg::Heartbeat,
            5 => ControlMsg::UnknownPeer,
            6 => ControlMsg::MemberAdded {
                records: decode_records(&mut rest)?,
            },
            7 => {
                let n = u32_at(&mut rest)? as usize;
                let peers = (0..n).map(|_| u64_at(&mut rest).map(PeerId)).collect::<Result<_, _>>()?;
                ControlMsg::MemberRemoved { peers }
            }
            8 => ControlMsg::List,
            9 => ControlMsg::ListReply {
                records: decode_records(&mut rest)?,
            },
            10 => {
                let records = decode_records(&mut rest)?;
                let n = u32_at(&mut rest)? as usize;
                let departed = (0..n)
                    .map(|_| Ok((PeerId(u64_at(&mut rest)?), u64_at(&mut rest)?)))
                    .collect::<Result<_, EnvelopeError>>()?;
                ControlMsg::Sync { records, departed }
            }
            _ => return Err(EnvelopeError::Malformed("control message type")),
        };
        if !rest.is_empty() {
            return Err(EnvelopeError::Malformed("trailing control bytes"));
        }
        Ok(msg)
    }

    /// Directory state carried by a SYNC message.
    pub fn sync_of(dir: &Directory) -> Self {
        ControlMsg::Sync {
            records: dir.snapshot(),
            departed: dir.departed(),
        }
    }
}

fn encode_records(out: &mut Vec<u8>, records: &[PeerRecord]) -> Result<(), EnvelopeError> {
    out.extend_from_slice(&(records.len() as u32).to_be_bytes());
    for r in records {
        out.extend_from_slice(&r.peer.to_bytes());
        out.extend_from_slice(&r.address.0.to_be_bytes());
        out.extend_from_slice(&r.public_key.public_to_wire()?);
        out.extend_from_slice(&r.last_heartbeat.to_be_bytes());
    }
    Ok(())
}

fn decode_records(rest: &mut &[u8]) -> Result<Vec<PeerRecord>, EnvelopeError> {
    let n = u32_at(rest)? as usize;
    if rest.len() < n.saturating_mul(RECORD_LEN) {
        return Err(EnvelopeError::Malformed("truncated record list"));
    }
    (0..n)
        .map(|_| {
            let peer = PeerId(u64_at(rest)?);
            let address = Address(u64_at(rest)?);
            let public_key = KeyHandle::public_from_wire(take(rest, KEY_WIRE_LEN)?, peer)?;
            let last_heartbeat = u64_at(rest)?;
            Ok(PeerRecord {
                peer,
                address,
                public_key,
                last_heartbeat,
            })
        })
        .collect()
}

fn take<'a>(rest: &mut &'a [u8], n: usize) -> Result<&'a [u8], EnvelopeError> {
    if rest.len() < n {
        return Err(EnvelopeError::Malformed("truncated control message"));
    }
    let (head, tail) = rest.split_at(n);
    *rest = tail;
    Ok(head)
}

fn u64_at(rest: &mut &[u8]) -> Result<u64, EnvelopeError> {
    Ok(u64::from_be_bytes(take(rest, 8)?.try_into().unwrap()))
}

fn u32_at(rest: &mut &[u8]) -> Result<u32, EnvelopeError> {
    Ok(u32::from_be_bytes(take(rest, 4)?.try_into().unwrap()))
}

/// Seals `msg` from the table's owner to `dest` and returns the CONTROL
/// frame together with the scheme used.
pub fn seal_control(
    cipher: &dyn Cipher,
    table: &mut KeyTable,
    dest: PeerId,
    dest_public: &KeyHandle,
    msg: &ControlMsg,
) -> Result<(Packet, SchemeTag), EnvelopeError> {
    let scheme = table.select_scheme(dest, dest_public)?;
    let mut pt = table.owner().to_bytes().to_vec();
    match scheme.piggyback() {
        Some(k) => {
            pt.push(1);
            pt.extend_from_slice(&k.to_wire()?);
        }
        None => pt.push(0),
    }
    pt.extend_from_slice(&msg.encode()?);
    let blob = cipher.seal(scheme.key(), &pt)?;
    if let Scheme::Asymmetric { .. } = scheme {
        table.note_piggyback_sent(dest);
    }
    let tag = blob.scheme;
    Ok((Packet::control(dest, &blob), tag))
}

/// Opens a CONTROL frame, storing any piggybacked key under the sender.
pub fn open_control(
    cipher: &dyn Cipher,
    table: &mut KeyTable,
    own_private: &KeyHandle,
    packet: &Packet,
) -> Result<(PeerId, ControlMsg), EnvelopeError> {
    let blob: SealedBlob = packet.blob().map_err(|_| EnvelopeError::WrongKey)?;
    let pt = match blob.scheme {
        SchemeTag::Asymmetric => {
            let key = find_opener(std::slice::from_ref(own_private), &blob).ok_or(EnvelopeError::WrongKey)?;
            cipher.open(key, &blob)?
        }
        SchemeTag::Symmetric => {
            let key = table.opener(blob.key_id).ok_or(EnvelopeError::WrongKey)?;
            cipher.open(key, &blob)?
        }
        SchemeTag::Plain => return Err(EnvelopeError::WrongKey),
    };
    let mut rest = pt.as_slice();
    let sender = PeerId(u64_at(&mut rest)?);
    let piggyback = match take(&mut rest, 1)?[0] {
        0 => None,
        1 => Some(KeyHandle::symmetric_from_wire(take(&mut rest, KEY_WIRE_LEN)?, Some(sender))?),
        _ => return Err(EnvelopeError::Malformed("piggyback flag")),
    };
    let mut msg = ControlMsg::decode(rest)?;
    if let ControlMsg::Join { public_key, .. } = &mut msg {
        *public_key = KeyHandle::public_from_wire(&public_key.public_to_wire()?, sender)?;
    }
    if let Some(k) = piggyback {
        table.record_piggybacked_key(sender, k)?;
    }
    Ok((sender, msg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envelope::{KeyPair, TestCipher};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn record(p: u64, rng: &mut ChaCha8Rng) -> PeerRecord {
        PeerRecord {
            peer: PeerId(p),
            address: Address(p * 10),
            public_key: KeyPair::generate(PeerId(p), rng).public,
            last_heartbeat: p + 3,
        }
    }

    #[test]
    fn every_message_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let recs = vec![record(3, &mut rng), record(5, &mut rng)];
        let msgs = vec![
            ControlMsg::JoinAck { records: recs.clone() },
            ControlMsg::Leave,
            ControlMsg::Heartbeat,
            ControlMsg::UnknownPeer,
            ControlMsg::MemberAdded { records: recs.clone() },
            ControlMsg::MemberRemoved {
                peers: vec![PeerId(3), PeerId(9)],
            },
            ControlMsg::List,
            ControlMsg::ListReply { records: vec![] },
            ControlMsg::Sync {
                records: recs,
                departed: vec![(PeerId(4), 17)],
            },
        ];
        for m in msgs {
            assert_eq!(ControlMsg::decode(&m.encode().unwrap()).unwrap(), m, "{}", m.name());
        }
        assert!(ControlMsg::decode(&[99]).is_err());
        assert!(ControlMsg::decode(&[2, 0, 0, 0, 5]).is_err());
    }

    #[test]
    fn first_frame_is_asymmetric_then_both_directions_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = TestCipher;
        let peer_keys = KeyPair::generate(PeerId(7), &mut rng);
        let sn_keys = KeyPair::generate(PeerId(0), &mut rng);
        let mut peer = KeyTable::new(PeerId(7), &mut rng);
        let mut sn = KeyTable::new(PeerId(0), &mut rng);

        let join = ControlMsg::Join {
            address: Address(70),
            public_key: peer_keys.public.clone(),
        };
        let (frame, scheme) = seal_control(&c, &mut peer, PeerId(0), &sn_keys.public, &join).unwrap();
        assert_eq!(scheme, SchemeTag::Asymmetric);
        let (sender, got) = open_control(&c, &mut sn, &sn_keys.private, &frame).unwrap();
        assert_eq!(sender, PeerId(7));
        assert_eq!(got, join);
        assert_eq!(sn.get(PeerId(7)), Some(peer.own_symmetric()));

        for _ in 0..3 {
            let (f, s) = seal_control(&c, &mut sn, PeerId(7), &peer_keys.public, &ControlMsg::List).unwrap();
            assert_eq!(s, SchemeTag::Symmetric);
            assert_eq!(open_control(&c, &mut peer, &peer_keys.private, &f).unwrap().1, ControlMsg::List);
            let (f, s) = seal_control(&c, &mut peer, PeerId(0), &sn_keys.public, &ControlMsg::Heartbeat).unwrap();
            assert_eq!(s, SchemeTag::Symmetric);
            assert_eq!(open_control(&c, &mut sn, &sn_keys.private, &f).unwrap().1, ControlMsg::Heartbeat);
        }
    }

    #[test]
    fn stranger_cannot_open() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = TestCipher;
        let a = KeyPair::generate(PeerId(1), &mut rng);
        let b = KeyPair::generate(PeerId(2), &mut rng);
        let mut ta = KeyTable::new(PeerId(1), &mut rng);
        let mut tb = KeyTable::new(PeerId(2), &mut rng);
        let (f, _) = seal_control(&c, &mut ta, PeerId(2), &b.public, &ControlMsg::Heartbeat).unwrap();
        assert_eq!(open_control(&c, &mut tb, &a.private, &f), Err(EnvelopeError::WrongKey));
        assert!(tb.is_empty());
    }
}
