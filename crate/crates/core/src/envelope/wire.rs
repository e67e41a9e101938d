//! Serialized layer layout:
//!
//! ```text
//! [scheme tag: 1][key_id: 8][body length: 4, big-endian][body][zero padding to pad_size]
//! ```
//!
//! Nothing else is visible on the wire. In particular there is no hop
//! counter or time-to-live field anywhere in a frame.

use serde::{Deserialize, Serialize};

use super::cipher::{SchemeTag, SealedBlob};
use super::EnvelopeError;
use crate::ids::PeerId;

pub const LAYER_HEADER_LEN: usize = 1 + 8 + 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FieldSpec {
    pub name: &'static str,
    pub len: usize,
}

/// Every cleartext field of a serialized frame, in order. The body that
/// follows is sealed and the tail is zero padding.
pub const FRAME_FIELDS: &[FieldSpec] = &[
    FieldSpec { name: "scheme_tag", len: 1 },
    FieldSpec { name: "key_id", len: 8 },
    FieldSpec { name: "body_length", len: 4 },
];

pub fn encode_layer(blob: &SealedBlob) -> Vec<u8> {
    let mut out = Vec::with_capacity(LAYER_HEADER_LEN + blob.body.len());
    out.push(blob.scheme as u8);
    out.extend_from_slice(&blob.key_id.to_be_bytes());
    out.extend_from_slice(&(blob.body.len() as u32).to_be_bytes());
    out.extend_from_slice(&blob.body);
    out
}

/// Decodes one layer from the front of `bytes`, returning the remainder.
pub fn decode_layer(bytes: &[u8]) -> Result<(SealedBlob, &[u8]), EnvelopeError> {
    if bytes.len() < LAYER_HEADER_LEN {
        return Err(EnvelopeError::Malformed("short layer header"));
    }
    let scheme = SchemeTag::from_byte(bytes[0]).ok_or(EnvelopeError::Malformed("scheme tag"))?;
    let key_id = u64::from_be_bytes(bytes[1..9].try_into().unwrap());
    let len = u32::from_be_bytes(bytes[9..13].try_into().unwrap()) as usize;
    let rest = &bytes[LAYER_HEADER_LEN..];
    if rest.len() < len {
        return Err(EnvelopeError::Malformed("layer body truncated"));
    }
    let (body, rest) = rest.split_at(len);
    Ok((
        SealedBlob {
            scheme,
            key_id,
            body: body.to_vec(),
        },
        rest,
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum FrameClass {
    Data,
    Control,
}

impl FrameClass {
    pub fn as_str(self) -> &'static str {
        match self {
            FrameClass::Data => "DATA",
            FrameClass::Control => "CONTROL",
        }
    }
}

/// A frame on a link. `dst` and `class` are transport metadata; `frame` is
/// the serialized layer. DATA frames are always exactly `pad_size` bytes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Packet {
    pub dst: PeerId,
    pub class: FrameClass,
    pub frame: Vec<u8>,
}

impl Packet {
    /// DATA frame padded with zeros to `pad_size`.
    pub fn padded(dst: PeerId, blob: &SealedBlob, pad_size: usize) -> Result<Self, EnvelopeError> {
        let mut frame = encode_layer(blob);
        if frame.len() > pad_size {
            return Err(EnvelopeError::PayloadTooLarge {
                needed: frame.len(),
                capacity: pad_size,
            });
        }
        frame.resize(pad_size, 0);
        Ok(Packet {
            dst,
            class: FrameClass::Data,
            frame,
        })
    }

    /// Unpadded CONTROL frame.
    pub fn control(dst: PeerId, blob: &SealedBlob) -> Self {
        Packet {
            dst,
            class: FrameClass::Control,
            frame: encode_layer(blob),
        }
    }

    pub fn len(&self) -> usize {
        self.frame.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frame.is_empty()
    }

    pub fn blob(&self) -> Result<SealedBlob, EnvelopeError> {
        decode_layer(&self.frame).map(|(b, _)| b)
    }

    pub fn scheme(&self) -> Option<SchemeTag> {
        self.frame.first().and_then(|&b| SchemeTag::from_byte(b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layer_layout_is_bit_exact() {
        let blob = SealedBlob {
            scheme: SchemeTag::Symmetric,
            key_id: 0x0102030405060708,
            body: vec![0xAA, 0xBB],
        };
        let bytes = encode_layer(&blob);
        assert_eq!(bytes, vec![0x02, 1, 2, 3, 4, 5, 6, 7, 8, 0, 0, 0, 2, 0xAA, 0xBB]);
        let (back, rest) = decode_layer(&bytes).unwrap();
        assert_eq!(back, blob);
        assert!(rest.is_empty());
    }

    #[test]
    fn padded_frames_have_exact_size() {
        let blob = SealedBlob::plain(1, vec![7; 100]);
        let p = Packet::padded(PeerId(1), &blob, 256).unwrap();
        assert_eq!(p.len(), 256);
        assert_eq!(p.blob().unwrap(), blob);
        assert!(matches!(
            Packet::padded(PeerId(1), &blob, 64),
            Err(EnvelopeError::PayloadTooLarge { needed: 113, capacity: 64 })
        ));
    }

    #[test]
    fn truncated_input_is_malformed() {
        assert!(decode_layer(&[1, 0, 0]).is_err());
        assert!(decode_layer(&[1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 9, 1]).is_err());
        assert!(decode_layer(&[7; 20]).is_err());
    }

    #[test]
    fn header_schema_has_no_hop_counter() {
        let total: usize = FRAME_FIELDS.iter().map(|f| f.len).sum();
        assert_eq!(total, LAYER_HEADER_LEN);
        for f in FRAME_FIELDS {
            let n = f.name.to_ascii_lowercase();
            assert!(!n.contains("ttl") && !n.contains("hop"), "{n}");
        }
    }
}
