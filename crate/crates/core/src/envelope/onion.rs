//! Request onions, the response-path block, and response frames.
//!
//! Plaintext layouts inside sealed layers:
//!
//! ```text
//! forward layer      [next PeerId: 8][inner layer]
//! innermost request  [kind: 1][piggyback flag: 1][key: 40, if flagged][M len: 4][M][rblock len: 4][rblock]
//! response frame     [0x02][payload len: 4][payload layer][tail len: 4][tail layer]
//! response block     [first hop: 8][tail layer]            (carried inside the innermost request)
//! tail layer         [next PeerId: 8][tail layer]  or  empty (terminator)
//! ```
//!
//! Peer ids stay below 2^56, so a forward layer always begins with a zero
//! byte while the other two plaintexts begin with 0x01 or 0x02.
//!
//! Every tail layer is sealed to the hop that opens it. The terminator is
//! sealed to the requester itself, so the last response relay sees a tail
//! indistinguishable from any other. Relays on the response path re-seal
//! the payload under a key derived from their own tail plaintext, which the
//! requester can recompute; the payload therefore changes at every hop and
//! the relays never read it.

use super::cipher::{Cipher, KeyHandle, SchemeTag, SealedBlob, KEY_WIRE_LEN};
use super::wire::{decode_layer, encode_layer, Packet};
use super::{find_opener, EnvelopeError};
use crate::ids::PeerId;

use serde::{Deserialize, Serialize};

const RESPONSE_FRAME: u8 = 0x02;
const REBLIND_LABEL: &[u8] = b"response-reblind";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum PayloadKind {
    Request = 0x01,
    Response = 0x02,
}

/// Message body plus an optional piggybacked symmetric key.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlainPayload {
    pub kind: PayloadKind,
    pub piggyback_key: Option<KeyHandle>,
    pub message: Vec<u8>,
}

impl PlainPayload {
    pub fn request(message: Vec<u8>, session_key: KeyHandle) -> Self {
        PlainPayload {
            kind: PayloadKind::Request,
            piggyback_key: Some(session_key),
            message,
        }
    }

    pub fn response(message: Vec<u8>) -> Self {
        PlainPayload {
            kind: PayloadKind::Response,
            piggyback_key: None,
            message,
        }
    }

    fn encode(&self, rblock: Option<&ResponseBlock>) -> Result<Vec<u8>, EnvelopeError> {
        let mut out = Vec::with_capacity(2 + KEY_WIRE_LEN + 8 + self.message.len());
        out.push(self.kind as u8);
        match &self.piggyback_key {
            Some(k) => {
                out.push(1);
                out.extend_from_slice(&k.to_wire()?);
            }
            None => out.push(0),
        }
        out.extend_from_slice(&(self.message.len() as u32).to_be_bytes());
        out.extend_from_slice(&self.message);
        let rb = rblock.map(ResponseBlock::encode).unwrap_or_default();
        out.extend_from_slice(&(rb.len() as u32).to_be_bytes());
        out.extend_from_slice(&rb);
        Ok(out)
    }

    fn decode(bytes: &[u8]) -> Result<(Self, Option<ResponseBlock>), EnvelopeError> {
        let mut r = Reader(bytes);
        let kind = match r.u8()? {
            0x01 => PayloadKind::Request,
            0x02 => PayloadKind::Response,
            _ => return Err(EnvelopeError::Malformed("payload kind")),
        };
        let piggyback_key = match r.u8()? {
            0 => None,
            1 => Some(KeyHandle::symmetric_from_wire(r.take(KEY_WIRE_LEN)?, None)?),
            _ => return Err(EnvelopeError::Malformed("piggyback flag")),
        };
        let m_len = r.u32()? as usize;
        let message = r.take(m_len)?.to_vec();
        let rb_len = r.u32()? as usize;
        let rb = r.take(rb_len)?;
        if !r.0.is_empty() {
            return Err(EnvelopeError::Malformed("trailing payload bytes"));
        }
        let rblock = if rb.is_empty() { None } else { Some(ResponseBlock::decode(rb)?) };
        Ok((
            PlainPayload {
                kind,
                piggyback_key,
                message,
            },
            rblock,
        ))
    }
}

/// The response path as embedded in the request. The top level names the
/// first response hop in the clear (it is only ever read by the provider);
/// everything after it is sealed hop by hop.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ResponseBlock {
    pub first_hop: PeerId,
    pub tail: SealedBlob,
}

impl ResponseBlock {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = self.first_hop.to_bytes().to_vec();
        out.extend_from_slice(&encode_layer(&self.tail));
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, EnvelopeError> {
        if bytes.len() < 8 {
            return Err(EnvelopeError::Malformed("response block"));
        }
        let first_hop = PeerId::from_bytes(bytes[..8].try_into().unwrap());
        let (tail, rest) = decode_layer(&bytes[8..])?;
        if !rest.is_empty() {
            return Err(EnvelopeError::Malformed("trailing response block bytes"));
        }
        Ok(ResponseBlock { first_hop, tail })
    }
}

/// A response block together with what only the requester knows: the
/// re-sealing key each response relay will derive, in path order.
#[derive(Clone, Debug)]
pub struct ResponseRoute {
    pub block: ResponseBlock,
    pub reblind_keys: Vec<KeyHandle>,
}

/// Result of opening one tail layer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TailOpen {
    Next {
        next: PeerId,
        tail: SealedBlob,
        reblind_key: KeyHandle,
    },
    End,
}

/// Result of peeling an incoming DATA frame.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Peeled {
    Forward { next: PeerId, inner: Packet },
    Deliver { payload: PlainPayload, rblock: ResponseBlock },
    Response { payload: SealedBlob, tail: SealedBlob },
}

/// How the provider protects the response body.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseMode {
    /// Sealed under the requester's session key and re-sealed at each relay.
    #[default]
    EndToEnd,
    /// Readable by every response relay.
    PerHop,
}

fn require_distinct(path: &[PeerId], extra: PeerId, what: &'static str) -> Result<(), EnvelopeError> {
    for (i, p) in path.iter().enumerate() {
        if *p == extra || path[i + 1..].contains(p) {
            return Err(EnvelopeError::InvalidPath(what));
        }
        if !p.is_encodable() {
            return Err(EnvelopeError::InvalidPath("peer id out of range"));
        }
    }
    Ok(())
}

fn key_for(keys: &dyn Fn(PeerId) -> Option<KeyHandle>, peer: PeerId) -> Result<KeyHandle, EnvelopeError> {
    keys(peer).ok_or(EnvelopeError::UnknownKey(peer))
}

fn hop_plaintext(next: PeerId, inner: &SealedBlob) -> Vec<u8> {
    let mut pt = next.to_bytes().to_vec();
    pt.extend_from_slice(&encode_layer(inner));
    pt
}

/// Builds the nested response block for `response_path`, ending at
/// `requester`. `keys` resolves public keys, including the requester's.
pub fn build_response_route(
    cipher: &dyn Cipher,
    response_path: &[PeerId],
    requester: PeerId,
    keys: &dyn Fn(PeerId) -> Option<KeyHandle>,
) -> Result<ResponseRoute, EnvelopeError> {
    if response_path.is_empty() {
        return Err(EnvelopeError::InvalidPath("empty response path"));
    }
    require_distinct(response_path, requester, "response path hops must be distinct and exclude the requester")?;

    let mut current = cipher.seal(&key_for(keys, requester)?, &[])?;
    let mut reblind_keys = vec![None; response_path.len()];
    for i in (0..response_path.len()).rev() {
        let next = response_path.get(i + 1).copied().unwrap_or(requester);
        let pt = hop_plaintext(next, &current);
        reblind_keys[i] = Some(KeyHandle::derive_symmetric(REBLIND_LABEL, &pt));
        current = cipher.seal(&key_for(keys, response_path[i])?, &pt)?;
    }
    Ok(ResponseRoute {
        block: ResponseBlock {
            first_hop: response_path[0],
            tail: current,
        },
        reblind_keys: reblind_keys.into_iter().map(Option::unwrap).collect(),
    })
}

pub fn build_response_block(
    cipher: &dyn Cipher,
    response_path: &[PeerId],
    requester: PeerId,
    keys: &dyn Fn(PeerId) -> Option<KeyHandle>,
) -> Result<ResponseBlock, EnvelopeError> {
    build_response_route(cipher, response_path, requester, keys).map(|r| r.block)
}

/// The provider's view of the block: the first response hop and the tail
/// it must attach.
pub fn open_response_block(rblock: &ResponseBlock) -> (PeerId, SealedBlob) {
    (rblock.first_hop, rblock.tail.clone())
}

/// Opens one tail layer with the caller's keys.
pub fn open_tail(cipher: &dyn Cipher, tail: &SealedBlob, own_keys: &[KeyHandle]) -> Result<TailOpen, EnvelopeError> {
    let key = find_opener(own_keys, tail).ok_or(EnvelopeError::WrongKey)?;
    let pt = cipher.open(key, tail)?;
    if pt.is_empty() {
        return Ok(TailOpen::End);
    }
    if pt.len() < 8 {
        return Err(EnvelopeError::Malformed("tail layer"));
    }
    let next = PeerId::from_bytes(pt[..8].try_into().unwrap());
    let (inner, rest) = decode_layer(&pt[8..])?;
    if !rest.is_empty() {
        return Err(EnvelopeError::Malformed("trailing tail bytes"));
    }
    Ok(TailOpen::Next {
        next,
        tail: inner,
        reblind_key: KeyHandle::derive_symmetric(REBLIND_LABEL, &pt),
    })
}

/// Builds the layered request. The frame is addressed to the first request
/// hop, or straight to the provider when `request_path` is empty.
pub fn build_request_onion(
    cipher: &dyn Cipher,
    request_path: &[PeerId],
    provider: PeerId,
    payload: &PlainPayload,
    rblock: &ResponseBlock,
    keys: &dyn Fn(PeerId) -> Option<KeyHandle>,
    pad_size: usize,
) -> Result<Packet, EnvelopeError> {
    require_distinct(request_path, provider, "request path hops must be distinct and exclude the provider")?;
    let mut current = cipher.seal(&key_for(keys, provider)?, &payload.encode(Some(rblock))?)?;
    for i in (0..request_path.len()).rev() {
        let next = request_path.get(i + 1).copied().unwrap_or(provider);
        current = cipher.seal(&key_for(keys, request_path[i])?, &hop_plaintext(next, &current))?;
    }
    let dst = request_path.first().copied().unwrap_or(provider);
    Packet::padded(dst, &current, pad_size)
}

/// Opens the outer layer of an incoming DATA frame.
pub fn peel_layer(cipher: &dyn Cipher, packet: &Packet, own_keys: &[KeyHandle]) -> Result<Peeled, EnvelopeError> {
    let blob = packet.blob().map_err(|_| EnvelopeError::WrongKey)?;
    let key = find_opener(own_keys, &blob).ok_or(EnvelopeError::WrongKey)?;
    let pt = cipher.open(key, &blob)?;
    match pt.first() {
        Some(0x00) => {
            if pt.len() < 8 {
                return Err(EnvelopeError::Malformed("forward layer"));
            }
            let next = PeerId::from_bytes(pt[..8].try_into().unwrap());
            let (inner, rest) = decode_layer(&pt[8..])?;
            if !rest.is_empty() {
                return Err(EnvelopeError::Malformed("trailing forward bytes"));
            }
            let inner = Packet::padded(next, &inner, packet.len())?;
            Ok(Peeled::Forward { next, inner })
        }
        Some(&k) if k == PayloadKind::Request as u8 => {
            let (payload, rblock) = PlainPayload::decode(&pt)?;
            let rblock = rblock.ok_or(EnvelopeError::Malformed("request without response block"))?;
            Ok(Peeled::Deliver { payload, rblock })
        }
        Some(&RESPONSE_FRAME) => {
            let mut r = Reader(&pt[1..]);
            let p_len = r.u32()? as usize;
            let (payload, rest) = decode_layer(r.take(p_len)?)?;
            if !rest.is_empty() {
                return Err(EnvelopeError::Malformed("response payload"));
            }
            let t_len = r.u32()? as usize;
            let (tail, rest) = decode_layer(r.take(t_len)?)?;
            if !rest.is_empty() || !r.0.is_empty() {
                return Err(EnvelopeError::Malformed("response tail"));
            }
            Ok(Peeled::Response { payload, tail })
        }
        _ => Err(EnvelopeError::Malformed("layer discriminator")),
    }
}

/// Provider side: protects the response body for the requester.
pub fn seal_response_payload(
    cipher: &dyn Cipher,
    payload: &PlainPayload,
    session_key: &KeyHandle,
    mode: ResponseMode,
) -> Result<SealedBlob, EnvelopeError> {
    let bytes = payload.encode(None)?;
    match mode {
        ResponseMode::EndToEnd => cipher.seal(session_key, &bytes),
        ResponseMode::PerHop => Ok(SealedBlob::plain(session_key.key_id(), bytes)),
    }
}

/// Relay side: adds one sealing layer to a sealed payload. Plain payloads
/// pass through unchanged.
pub fn reblind_payload(cipher: &dyn Cipher, payload: &SealedBlob, key: &KeyHandle) -> Result<SealedBlob, EnvelopeError> {
    if payload.scheme == SchemeTag::Plain {
        return Ok(payload.clone());
    }
    cipher.seal(key, &encode_layer(payload))
}

/// Requester side: strips the relays' layers (outermost first) and the
/// session seal.
pub fn peel_response_payload(
    cipher: &dyn Cipher,
    payload: &SealedBlob,
    reblind_keys: &[KeyHandle],
    session_key: &KeyHandle,
) -> Result<PlainPayload, EnvelopeError> {
    let bytes = if payload.scheme == SchemeTag::Plain {
        if payload.key_id != session_key.key_id() {
            return Err(EnvelopeError::WrongKey);
        }
        payload.body.clone()
    } else {
        let mut blob = payload.clone();
        for key in reblind_keys.iter().rev() {
            let pt = cipher.open(key, &blob)?;
            let (inner, rest) = decode_layer(&pt)?;
            if !rest.is_empty() {
                return Err(EnvelopeError::Malformed("reblind layer"));
            }
            blob = inner;
        }
        cipher.open(session_key, &blob)?
    };
    let (payload, rblock) = PlainPayload::decode(&bytes)?;
    if rblock.is_some() || payload.kind != PayloadKind::Response {
        return Err(EnvelopeError::Malformed("response payload"));
    }
    Ok(payload)
}

/// Seals a response frame for the next hop with `tail` attached beside the
/// (already protected) payload.
pub fn wrap_response(
    cipher: &dyn Cipher,
    payload: &SealedBlob,
    hop_key: &KeyHandle,
    dst: PeerId,
    tail: &SealedBlob,
    pad_size: usize,
) -> Result<Packet, EnvelopeError> {
    let p = encode_layer(payload);
    let t = encode_layer(tail);
    let mut pt = Vec::with_capacity(9 + p.len() + t.len());
    pt.push(RESPONSE_FRAME);
    pt.extend_from_slice(&(p.len() as u32).to_be_bytes());
    pt.extend_from_slice(&p);
    pt.extend_from_slice(&(t.len() as u32).to_be_bytes());
    pt.extend_from_slice(&t);
    let blob = cipher.seal(hop_key, &pt)?;
    Packet::padded(dst, &blob, pad_size)
}

struct Reader<'a>(&'a [u8]);

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], EnvelopeError> {
        if self.0.len() < n {
            return Err(EnvelopeError::Malformed("truncated"));
        }
        let (head, rest) = self.0.split_at(n);
        self.0 = rest;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8, EnvelopeError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, EnvelopeError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }
}
