//! Sealing contract and the deterministic test cipher.
//!
//! [`TestCipher`] is a synthetic-IV construction over SHA-256: the IV is a
//! keyed hash of the plaintext, the keystream is SHA-256 in counter mode,
//! and opening recomputes the IV as an integrity tag. It is deterministic so
//! simulations replay bit for bit. Asymmetric pairs share one secret and the
//! public/private split is enforced structurally by [`KeyKind`]; this is a
//! stand-in for a real hybrid cipher, which can be plugged in behind
//! [`Cipher`].

use std::cell::Cell;
use std::fmt;

use rand::RngCore;
use sha2::{Digest, Sha256};

use super::EnvelopeError;
use crate::ids::PeerId;

pub type KeyId = u64;

/// Length of a serialized symmetric key: key id (8) plus secret (32).
pub const KEY_WIRE_LEN: usize = 40;

const IV_LEN: usize = 16;
const BLOCK: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum KeyKind {
    AsymmetricPublic,
    AsymmetricPrivate,
    Symmetric,
}

/// Scheme tag carried in the first byte of every serialized layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum SchemeTag {
    /// Unsealed content. Only used for per-hop readable response payloads.
    Plain = 0x00,
    Asymmetric = 0x01,
    Symmetric = 0x02,
}

impl SchemeTag {
    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0x00 => Some(SchemeTag::Plain),
            0x01 => Some(SchemeTag::Asymmetric),
            0x02 => Some(SchemeTag::Symmetric),
            _ => None,
        }
    }
}

/// A key reference. Secrets never appear in `Debug` output.
#[derive(Clone, PartialEq, Eq)]
pub struct KeyHandle {
    kind: KeyKind,
    owner: Option<PeerId>,
    key_id: KeyId,
    secret: [u8; 32],
}

impl fmt::Debug for KeyHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyHandle")
            .field("kind", &self.kind)
            .field("owner", &self.owner)
            .field("key_id", &format_args!("{:016x}", self.key_id))
            .finish()
    }
}

impl KeyHandle {
    pub fn kind(&self) -> KeyKind {
        self.kind
    }

    pub fn owner(&self) -> Option<PeerId> {
        self.owner
    }

    pub fn key_id(&self) -> KeyId {
        self.key_id
    }

    /// Fresh symmetric key.
    pub fn generate_symmetric<R: RngCore + ?Sized>(owner: Option<PeerId>, rng: &mut R) -> Self {
        let mut secret = [0u8; 32];
        rng.fill_bytes(&mut secret);
        KeyHandle {
            kind: KeyKind::Symmetric,
            owner,
            key_id: rng.next_u64(),
            secret,
        }
    }

    /// Symmetric key derived from a label and input material. Both ends that
    /// know `input` arrive at the same key.
    pub fn derive_symmetric(label: &[u8], input: &[u8]) -> Self {
        let digest = Sha256::new()
            .chain_update(b"dualpath-derive")
            .chain_update((label.len() as u32).to_be_bytes())
            .chain_update(label)
            .chain_update(input)
            .finalize();
        let mut secret = [0u8; 32];
        secret.copy_from_slice(&digest);
        let id_digest = Sha256::new().chain_update(b"dualpath-key-id").chain_update(secret).finalize();
        let mut id = [0u8; 8];
        id.copy_from_slice(&id_digest[..8]);
        KeyHandle {
            kind: KeyKind::Symmetric,
            owner: None,
            key_id: u64::from_be_bytes(id),
            secret,
        }
    }

    /// Wire form of a symmetric key: `[key_id: 8][secret: 32]`. The owner is
    /// deliberately not serialized.
    pub fn to_wire(&self) -> Result<[u8; KEY_WIRE_LEN], EnvelopeError> {
        if self.kind != KeyKind::Symmetric {
            return Err(EnvelopeError::InvalidKeyUse);
        }
        Ok(self.wire_bytes())
    }

    fn wire_bytes(&self) -> [u8; KEY_WIRE_LEN] {
        let mut out = [0u8; KEY_WIRE_LEN];
        out[..8].copy_from_slice(&self.key_id.to_be_bytes());
        out[8..].copy_from_slice(&self.secret);
        out
    }

    pub fn symmetric_from_wire(bytes: &[u8], owner: Option<PeerId>) -> Result<Self, EnvelopeError> {
        let bytes: &[u8; KEY_WIRE_LEN] = bytes.try_into().map_err(|_| EnvelopeError::Malformed("key length"))?;
        let mut secret = [0u8; 32];
        secret.copy_from_slice(&bytes[8..]);
        Ok(KeyHandle {
            kind: KeyKind::Symmetric,
            owner,
            key_id: u64::from_be_bytes(bytes[..8].try_into().unwrap()),
            secret,
        })
    }

    /// Wire form of a public key, as published in directory records.
    pub fn public_to_wire(&self) -> Result<[u8; KEY_WIRE_LEN], EnvelopeError> {
        if self.kind != KeyKind::AsymmetricPublic {
            return Err(EnvelopeError::InvalidKeyUse);
        }
        Ok(self.wire_bytes())
    }

    pub fn public_from_wire(bytes: &[u8], owner: PeerId) -> Result<Self, EnvelopeError> {
        let mut key = Self::symmetric_from_wire(bytes, Some(owner))?;
        key.kind = KeyKind::AsymmetricPublic;
        Ok(key)
    }

    fn scheme(&self) -> SchemeTag {
        match self.kind {
            KeyKind::Symmetric => SchemeTag::Symmetric,
            _ => SchemeTag::Asymmetric,
        }
    }

    /// Whether this handle can open a blob with the given scheme and key id.
    pub fn opens(&self, scheme: SchemeTag, key_id: KeyId) -> bool {
        self.key_id == key_id
            && matches!(
                (self.kind, scheme),
                (KeyKind::AsymmetricPrivate, SchemeTag::Asymmetric) | (KeyKind::Symmetric, SchemeTag::Symmetric)
            )
    }
}

/// Matching public/private handles sharing one key id.
#[derive(Clone, Debug)]
pub struct KeyPair {
    pub public: KeyHandle,
    pub private: KeyHandle,
}

impl KeyPair {
    pub fn generate<R: RngCore + ?Sized>(owner: PeerId, rng: &mut R) -> Self {
        let mut secret = [0u8; 32];
        rng.fill_bytes(&mut secret);
        let key_id = rng.next_u64();
        let public = KeyHandle {
            kind: KeyKind::AsymmetricPublic,
            owner: Some(owner),
            key_id,
            secret,
        };
        let private = KeyHandle {
            kind: KeyKind::AsymmetricPrivate,
            ..public.clone()
        };
        KeyPair { public, private }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SealedBlob {
    pub scheme: SchemeTag,
    pub key_id: KeyId,
    pub body: Vec<u8>,
}

impl SealedBlob {
    /// An unsealed layer tagged with a reference key id.
    pub fn plain(key_id: KeyId, body: Vec<u8>) -> Self {
        SealedBlob {
            scheme: SchemeTag::Plain,
            key_id,
            body,
        }
    }
}

/// The sealing contract every cipher implementation satisfies.
pub trait Cipher {
    fn seal(&self, key: &KeyHandle, plaintext: &[u8]) -> Result<SealedBlob, EnvelopeError>;
    fn open(&self, key: &KeyHandle, blob: &SealedBlob) -> Result<Vec<u8>, EnvelopeError>;
}

/// Sealed body length for a plaintext of `len` bytes.
pub fn sealed_body_len(len: usize) -> usize {
    IV_LEN + (4 + len).div_ceil(BLOCK) * BLOCK
}

#[derive(Clone, Copy, Debug, Default)]
pub struct TestCipher;

impl TestCipher {
    fn iv(secret: &[u8; 32], plaintext: &[u8]) -> [u8; IV_LEN] {
        let digest = Sha256::new()
            .chain_update(b"dualpath-siv")
            .chain_update(secret)
            .chain_update((plaintext.len() as u64).to_be_bytes())
            .chain_update(plaintext)
            .finalize();
        let mut iv = [0u8; IV_LEN];
        iv.copy_from_slice(&digest[..IV_LEN]);
        iv
    }

    fn apply_keystream(secret: &[u8; 32], iv: &[u8; IV_LEN], data: &mut [u8]) {
        for (counter, chunk) in data.chunks_mut(32).enumerate() {
            let block = Sha256::new()
                .chain_update(b"dualpath-ks")
                .chain_update(secret)
                .chain_update(iv)
                .chain_update((counter as u64).to_be_bytes())
                .finalize();
            for (b, k) in chunk.iter_mut().zip(block.iter()) {
                *b ^= k;
            }
        }
    }
}

impl Cipher for TestCipher {
    fn seal(&self, key: &KeyHandle, plaintext: &[u8]) -> Result<SealedBlob, EnvelopeError> {
        if key.kind == KeyKind::AsymmetricPrivate {
            return Err(EnvelopeError::InvalidKeyUse);
        }
        let iv = Self::iv(&key.secret, plaintext);
        let padded_len = (4 + plaintext.len()).div_ceil(BLOCK) * BLOCK;
        let mut data = Vec::with_capacity(padded_len);
        data.extend_from_slice(&(plaintext.len() as u32).to_be_bytes());
        data.extend_from_slice(plaintext);
        data.resize(padded_len, 0);
        Self::apply_keystream(&key.secret, &iv, &mut data);

        let mut body = Vec::with_capacity(IV_LEN + padded_len);
        body.extend_from_slice(&iv);
        body.extend_from_slice(&data);
        Ok(SealedBlob {
            scheme: key.scheme(),
            key_id: key.key_id,
            body,
        })
    }

    fn open(&self, key: &KeyHandle, blob: &SealedBlob) -> Result<Vec<u8>, EnvelopeError> {
        if !key.opens(blob.scheme, blob.key_id) {
            return Err(EnvelopeError::WrongKey);
        }
        if blob.body.len() < IV_LEN + BLOCK || !(blob.body.len() - IV_LEN).is_multiple_of(BLOCK) {
            return Err(EnvelopeError::WrongKey);
        }
        let (iv_bytes, ct) = blob.body.split_at(IV_LEN);
        let iv: [u8; IV_LEN] = iv_bytes.try_into().unwrap();
        let mut data = ct.to_vec();
        Self::apply_keystream(&key.secret, &iv, &mut data);
        let len = u32::from_be_bytes(data[..4].try_into().unwrap()) as usize;
        if 4 + len > data.len() || data[4 + len..].iter().any(|&b| b != 0) {
            return Err(EnvelopeError::WrongKey);
        }
        let plaintext = data[4..4 + len].to_vec();
        if Self::iv(&key.secret, &plaintext) != iv {
            return Err(EnvelopeError::WrongKey);
        }
        Ok(plaintext)
    }
}

/// Wraps a cipher and counts successful seals by scheme.
#[derive(Debug, Default)]
pub struct CountingCipher<C> {
    inner: C,
    asymmetric: Cell<u64>,
    symmetric: Cell<u64>,
}

impl<C: Cipher> CountingCipher<C> {
    pub fn new(inner: C) -> Self {
        CountingCipher {
            inner,
            asymmetric: Cell::new(0),
            symmetric: Cell::new(0),
        }
    }

    pub fn asymmetric_seals(&self) -> u64 {
        self.asymmetric.get()
    }

    pub fn symmetric_seals(&self) -> u64 {
        self.symmetric.get()
    }
}

impl<C: Cipher> Cipher for CountingCipher<C> {
    fn seal(&self, key: &KeyHandle, plaintext: &[u8]) -> Result<SealedBlob, EnvelopeError> {
        let blob = self.inner.seal(key, plaintext)?;
        match blob.scheme {
            SchemeTag::Asymmetric => self.asymmetric.set(self.asymmetric.get() + 1),
            SchemeTag::Symmetric => self.symmetric.set(self.symmetric.get() + 1),
            SchemeTag::Plain => {}
        }
        Ok(blob)
    }

    fn open(&self, key: &KeyHandle, blob: &SealedBlob) -> Result<Vec<u8>, EnvelopeError> {
        self.inner.open(key, blob)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    #[test]
    fn asymmetric_round_trip() {
        let mut rng = rng();
        let k7 = KeyPair::generate(PeerId(7), &mut rng);
        let blob = TestCipher.seal(&k7.public, b"m").unwrap();
        assert_eq!(TestCipher.open(&k7.private, &blob).unwrap(), b"m");
    }

    #[test]
    fn mismatched_pair_is_wrong_key() {
        let mut rng = rng();
        let k7 = KeyPair::generate(PeerId(7), &mut rng);
        let k9 = KeyPair::generate(PeerId(9), &mut rng);
        let blob = TestCipher.seal(&k7.public, b"m").unwrap();
        assert_eq!(TestCipher.open(&k9.private, &blob), Err(EnvelopeError::WrongKey));
        // the public half is not an opener
        assert_eq!(TestCipher.open(&k7.public, &blob), Err(EnvelopeError::WrongKey));
    }

    #[test]
    fn symmetric_round_trip() {
        let mut rng = rng();
        let s = KeyHandle::generate_symmetric(Some(PeerId(1)), &mut rng);
        let blob = TestCipher.seal(&s, b"m").unwrap();
        assert_eq!(blob.scheme, SchemeTag::Symmetric);
        assert_eq!(TestCipher.open(&s, &blob).unwrap(), b"m");
    }

    #[test]
    fn sealing_with_private_half_is_rejected() {
        let mut rng = rng();
        let k = KeyPair::generate(PeerId(3), &mut rng);
        assert_eq!(TestCipher.seal(&k.private, b"m"), Err(EnvelopeError::InvalidKeyUse));
    }

    #[test]
    fn every_single_byte_flip_is_detected() {
        let mut rng = rng();
        let s = KeyHandle::generate_symmetric(None, &mut rng);
        let blob = TestCipher.seal(&s, b"a message long enough to span blocks").unwrap();
        for i in 0..blob.body.len() {
            let mut bad = blob.clone();
            bad.body[i] ^= 0x01;
            assert_eq!(TestCipher.open(&s, &bad), Err(EnvelopeError::WrongKey), "flip at {i}");
        }
    }

    #[test]
    fn body_length_depends_only_on_plaintext_length() {
        let mut rng = rng();
        let s = KeyHandle::generate_symmetric(None, &mut rng);
        for len in 0..70 {
            let a = TestCipher.seal(&s, &vec![0xAA; len]).unwrap();
            let b = TestCipher.seal(&s, &vec![0x55; len]).unwrap();
            assert_eq!(a.body.len(), b.body.len());
            assert_eq!(a.body.len(), sealed_body_len(len));
        }
    }

    #[test]
    fn symmetric_wire_round_trip() {
        let mut rng = rng();
        let s = KeyHandle::generate_symmetric(Some(PeerId(4)), &mut rng);
        let wire = s.to_wire().unwrap();
        let back = KeyHandle::symmetric_from_wire(&wire, Some(PeerId(4))).unwrap();
        assert_eq!(back, s);
        let blob = TestCipher.seal(&s, b"x").unwrap();
        assert_eq!(TestCipher.open(&back, &blob).unwrap(), b"x");
    }

    #[test]
    fn counting_cipher_tracks_schemes() {
        let mut rng = rng();
        let c = CountingCipher::new(TestCipher);
        let k = KeyPair::generate(PeerId(1), &mut rng);
        let s = KeyHandle::generate_symmetric(None, &mut rng);
        c.seal(&k.public, b"a").unwrap();
        c.seal(&s, b"b").unwrap();
        c.seal(&s, b"c").unwrap();
        let _ = c.seal(&k.private, b"d");
        assert_eq!(c.asymmetric_seals(), 1);
        assert_eq!(c.symmetric_seals(), 2);
    }
}
