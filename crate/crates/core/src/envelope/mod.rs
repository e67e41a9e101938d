//! Layered envelopes: the sealing contract, request onions, the embedded
//! response-path block, and the per-peer symmetric key table.

mod cipher;
mod keytable;
mod onion;
mod wire;

use thiserror::Error;

pub use cipher::{
    sealed_body_len, Cipher, CountingCipher, KeyHandle, KeyId, KeyKind, KeyPair, SchemeTag, SealedBlob, TestCipher,
    KEY_WIRE_LEN,
};
pub use keytable::{KeyTable, Scheme};
pub use onion::{
    build_request_onion, build_response_block, build_response_route, open_response_block, open_tail, peel_layer,
    peel_response_payload, reblind_payload, seal_response_payload, wrap_response, PayloadKind, Peeled, PlainPayload,
    ResponseBlock, ResponseMode, ResponseRoute, TailOpen,
};
pub use wire::{decode_layer, encode_layer, FieldSpec, FrameClass, Packet, FRAME_FIELDS, LAYER_HEADER_LEN};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EnvelopeError {
    #[error("key handle cannot be used for this operation")]
    InvalidKeyUse,
    #[error("blob does not open with the offered key")]
    WrongKey,
    #[error("no key known for peer {0}")]
    UnknownKey(crate::ids::PeerId),
    #[error("content needs {needed} bytes but the frame holds {capacity}")]
    PayloadTooLarge { needed: usize, capacity: usize },
    #[error("malformed envelope: {0}")]
    Malformed(&'static str),
    #[error("invalid path: {0}")]
    InvalidPath(&'static str),
}

/// Finds the handle in `keys` able to open `blob`.
pub fn find_opener<'a>(keys: &'a [KeyHandle], blob: &SealedBlob) -> Option<&'a KeyHandle> {
    keys.iter().find(|k| k.opens(blob.scheme, blob.key_id))
}
