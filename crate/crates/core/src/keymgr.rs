//! Key lifecycle: X25519 key agreement, session derivation and renewal,
//! and the sealed on-disk keystore.

use std::collections::BTreeMap;
use std::fmt;

use rand::{CryptoRng, RngCore};
use thiserror::Error;
use x25519_dalek::{PublicKey, StaticSecret};
use zeroize::{Zeroize, Zeroizing};

use crate::crypto::{self, AeadKey, AlgId, Nonce, Tag, KEY_LEN, TAG_LEN};
use crate::wire::NodeId;
use crate::Millis;

pub const DH_LEN: usize = 32;
/// Renewal offers and accepts: current epoch (4, BE) then a public key.
pub const OFFER_LEN: usize = 4 + DH_LEN;

const KEYSTORE_MAGIC: &[u8; 4] = b"SB4K";
const KEYSTORE_VERSION: u8 = 0x01;
const KEYSTORE_HEADER_LEN: usize = 4 + 1 + 16 + 16;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum KeyError {
    #[error("degenerate Diffie-Hellman result (low-order peer key)")]
    DegenerateKey,
    #[error("offer refers to epoch {got}, current is {current}")]
    StaleEpoch { got: u32, current: u32 },
    #[error("malformed key-exchange payload")]
    MalformedOffer,
    #[error("keystore could not be unsealed")]
    UnsealFailure,
}

/// X25519 key pair. The private half never appears in `Debug`.
#[derive(Clone)]
pub struct DhKeyPair {
    secret: StaticSecret,
    public: [u8; DH_LEN],
}

impl DhKeyPair {
    pub fn public(&self) -> [u8; DH_LEN] {
        self.public
    }

    pub(crate) fn secret_bytes(&self) -> Zeroizing<[u8; DH_LEN]> {
        Zeroizing::new(self.secret.to_bytes())
    }

    pub fn shared(&self, peer_public: &[u8; DH_LEN]) -> Result<Zeroizing<[u8; DH_LEN]>, KeyError> {
        let s = self.secret.diffie_hellman(&PublicKey::from(*peer_public));
        if !s.was_contributory() {
            return Err(KeyError::DegenerateKey);
        }
        Ok(Zeroizing::new(s.to_bytes()))
    }
}

impl PartialEq for DhKeyPair {
    fn eq(&self, other: &Self) -> bool {
        self.public == other.public && *self.secret_bytes() == *other.secret_bytes()
    }
}

impl Eq for DhKeyPair {}

impl fmt::Debug for DhKeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "DhKeyPair {{ public: {}, private: <redacted> }}",
            hex::encode(self.public)
        )
    }
}

pub fn dh_keygen(mut randomness: [u8; 32]) -> DhKeyPair {
    let secret = StaticSecret::from(randomness);
    randomness.zeroize();
    let public = PublicKey::from(&secret).to_bytes();
    DhKeyPair { secret, public }
}

pub fn dh_keygen_rng<R: RngCore + CryptoRng>(rng: &mut R) -> DhKeyPair {
    let mut r = [0u8; 32];
    rng.fill_bytes(&mut r);
    dh_keygen(r)
}

pub fn dh_shared(
    private: &[u8; DH_LEN],
    peer_public: &[u8; DH_LEN],
) -> Result<Zeroizing<[u8; DH_LEN]>, KeyError> {
    dh_keygen(*private).shared(peer_public)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KeyLabel {
    Session,
    AppImage,
}

impl KeyLabel {
    pub fn as_bytes(self) -> &'static [u8] {
        match self {
            KeyLabel::Session => b"session",
            KeyLabel::AppImage => b"app-image",
        }
    }
}

pub fn derive_key(shared: &[u8; DH_LEN], label: KeyLabel, node_id: &NodeId, epoch: u32) -> AeadKey {
    let mut input = Zeroizing::new(Vec::with_capacity(DH_LEN + 9 + 16 + 8));
    input.extend_from_slice(shared);
    input.extend_from_slice(label.as_bytes());
    input.extend_from_slice(&node_id.0);
    input.extend_from_slice(&u64::from(epoch).to_be_bytes());
    let out = Zeroizing::new(crypto::xof_expand(&input, KEY_LEN));
    AeadKey::from_slice(&out).expect("16-byte expansion")
}

/// Channel key and application-image key for one epoch.
#[derive(Clone, PartialEq, Eq)]
pub struct SessionKey {
    pub key: AeadKey,
    pub image_key: AeadKey,
    pub epoch: u32,
    pub established_at: Millis,
}

impl SessionKey {
    pub fn derive(shared: &[u8; DH_LEN], node_id: &NodeId, epoch: u32, now: Millis) -> Self {
        Self {
            key: derive_key(shared, KeyLabel::Session, node_id, epoch),
            image_key: derive_key(shared, KeyLabel::AppImage, node_id, epoch),
            epoch,
            established_at: now,
        }
    }
}

impl fmt::Debug for SessionKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SessionKey")
            .field("epoch", &self.epoch)
            .field("established_at", &self.established_at)
            .finish_non_exhaustive()
    }
}

/// Epoch plus public key, carried in DH_OFFER and DH_ACCEPT bodies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RenewalOffer {
    pub epoch: u32,
    pub public: [u8; DH_LEN],
}

impl RenewalOffer {
    pub fn encode(&self) -> [u8; OFFER_LEN] {
        let mut out = [0u8; OFFER_LEN];
        out[..4].copy_from_slice(&self.epoch.to_be_bytes());
        out[4..].copy_from_slice(&self.public);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, KeyError> {
        if bytes.len() != OFFER_LEN {
            return Err(KeyError::MalformedOffer);
        }
        Ok(Self {
            epoch: u32::from_be_bytes(bytes[..4].try_into().unwrap()),
            public: bytes[4..].try_into().unwrap(),
        })
    }
}

/// Starts a renewal of the session currently at `current_epoch`.
pub fn renewal_initiate<R: RngCore + CryptoRng>(
    current_epoch: u32,
    rng: &mut R,
) -> (DhKeyPair, RenewalOffer) {
    let eph = dh_keygen_rng(rng);
    let offer = RenewalOffer {
        epoch: current_epoch,
        public: eph.public(),
    };
    (eph, offer)
}

/// Responder side: checks the offer against the current epoch, answers
/// with its own ephemeral key and derives the next session.
pub fn renewal_respond<R: RngCore + CryptoRng>(
    current_epoch: u32,
    offer: &RenewalOffer,
    node_id: &NodeId,
    now: Millis,
    rng: &mut R,
) -> Result<(RenewalOffer, SessionKey), KeyError> {
    if offer.epoch != current_epoch {
        return Err(KeyError::StaleEpoch {
            got: offer.epoch,
            current: current_epoch,
        });
    }
    let eph = dh_keygen_rng(rng);
    let shared = eph.shared(&offer.public)?;
    let next = SessionKey::derive(&shared, node_id, next_epoch(current_epoch)?, now);
    let accept = RenewalOffer {
        epoch: current_epoch,
        public: eph.public(),
    };
    Ok((accept, next))
}

/// Initiator side: finishes with the peer's accept.
pub fn renewal_complete(
    ephemeral: &DhKeyPair,
    current_epoch: u32,
    accept: &RenewalOffer,
    node_id: &NodeId,
    now: Millis,
) -> Result<SessionKey, KeyError> {
    if accept.epoch != current_epoch {
        return Err(KeyError::StaleEpoch {
            got: accept.epoch,
            current: current_epoch,
        });
    }
    let shared = ephemeral.shared(&accept.public)?;
    Ok(SessionKey::derive(
        &shared,
        node_id,
        next_epoch(current_epoch)?,
        now,
    ))
}

pub fn next_epoch(e: u32) -> Result<u32, KeyError> {
    e.checked_add(1)
        .ok_or(KeyError::StaleEpoch { got: e, current: e })
}

/// Public key used to frame first-contact messages before any session
/// exists. It offers no secrecy; trust in the exchanged keys rests on
/// the registration being done in a trusted setting.
pub fn bootstrap_key(node_id: &NodeId) -> AeadKey {
    let mut seed = b"bootstrap".to_vec();
    seed.extend_from_slice(&node_id.0);
    AeadKey::from_slice(&crypto::xof_expand(&seed, KEY_LEN)).expect("16 bytes")
}

/// Device-local secrets: named DH key pairs and per-peer sessions.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Keystore {
    pub device_id: [u8; 16],
    pub dh_pairs: BTreeMap<String, DhKeyPair>,
    pub sessions: BTreeMap<NodeId, SessionKey>,
}

impl Keystore {
    pub fn new(device_id: [u8; 16]) -> Self {
        Self {
            device_id,
            ..Self::default()
        }
    }

    fn serialize(&self) -> Zeroizing<Vec<u8>> {
        let mut out = Zeroizing::new(Vec::new());
        out.extend_from_slice(&(self.dh_pairs.len() as u16).to_be_bytes());
        for (label, pair) in &self.dh_pairs {
            out.push(label.len() as u8);
            out.extend_from_slice(label.as_bytes());
            out.extend_from_slice(&*pair.secret_bytes());
        }
        out.extend_from_slice(&(self.sessions.len() as u16).to_be_bytes());
        for (node, s) in &self.sessions {
            out.extend_from_slice(&node.0);
            out.extend_from_slice(&s.epoch.to_be_bytes());
            out.extend_from_slice(&s.established_at.to_be_bytes());
            out.extend_from_slice(s.key.as_bytes());
            out.extend_from_slice(s.image_key.as_bytes());
        }
        out
    }

    fn deserialize(device_id: [u8; 16], b: &[u8]) -> Option<Self> {
        let mut r = Reader(b);
        let mut ks = Keystore::new(device_id);
        for _ in 0..r.u16()? {
            let n = r.take(1)?[0] as usize;
            let label = String::from_utf8(r.take(n)?.to_vec()).ok()?;
            let secret: [u8; 32] = r.take(32)?.try_into().ok()?;
            ks.dh_pairs.insert(label, dh_keygen(secret));
        }
        for _ in 0..r.u16()? {
            let node = NodeId(r.take(16)?.try_into().ok()?);
            let epoch = u32::from_be_bytes(r.take(4)?.try_into().ok()?);
            let established_at = u64::from_be_bytes(r.take(8)?.try_into().ok()?);
            let key = AeadKey::from_slice(r.take(16)?)?;
            let image_key = AeadKey::from_slice(r.take(16)?)?;
            ks.sessions.insert(
                node,
                SessionKey {
                    key,
                    image_key,
                    epoch,
                    established_at,
                },
            );
        }
        r.0.is_empty().then_some(ks)
    }
}

struct Reader<'a>(&'a [u8]);

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        if self.0.len() < n {
            return None;
        }
        let (a, b) = self.0.split_at(n);
        self.0 = b;
        Some(a)
    }

    fn u16(&mut self) -> Option<u16> {
        Some(u16::from_be_bytes(self.take(2)?.try_into().ok()?))
    }
}

fn keystore_key(device_secret: &[u8], device_id: &[u8; 16]) -> AeadKey {
    let mut seed = Zeroizing::new(device_secret.to_vec());
    seed.extend_from_slice(device_id);
    let out = Zeroizing::new(crypto::xof_expand(&seed, KEY_LEN));
    AeadKey::from_slice(&out).expect("16 bytes")
}

/// `"SB4K" | 0x01 | device_id | nonce | body | tag`, Xoodyak-sealed with the
/// 37-byte header as associated data.
pub fn seal_keystore<R: RngCore + CryptoRng>(ks: &Keystore, device_secret: &[u8], rng: &mut R) -> Vec<u8> {
    let mut nonce = [0u8; 16];
    rng.fill_bytes(&mut nonce);
    let mut out = Vec::new();
    out.extend_from_slice(KEYSTORE_MAGIC);
    out.push(KEYSTORE_VERSION);
    out.extend_from_slice(&ks.device_id);
    out.extend_from_slice(&nonce);
    let body_start = out.len();
    out.extend_from_slice(&ks.serialize());
    let key = keystore_key(device_secret, &ks.device_id);
    let (header, body) = out.split_at_mut(body_start);
    let tag = crypto::aead_encrypt_in_place(AlgId::Xoodyak, &key, &Nonce(nonce), header, body);
    out.extend_from_slice(&tag.0);
    out
}

pub fn unseal_keystore(blob: &[u8], device_secret: &[u8]) -> Result<Keystore, KeyError> {
    if blob.len() < KEYSTORE_HEADER_LEN + TAG_LEN
        || &blob[..4] != KEYSTORE_MAGIC
        || blob[4] != KEYSTORE_VERSION
    {
        return Err(KeyError::UnsealFailure);
    }
    let device_id: [u8; 16] = blob[5..21].try_into().unwrap();
    let nonce = Nonce(blob[21..37].try_into().unwrap());
    let (header, rest) = blob.split_at(KEYSTORE_HEADER_LEN);
    let (body, tag) = rest.split_at(rest.len() - TAG_LEN);
    let mut t = Tag::default();
    t.0.copy_from_slice(tag);
    let key = keystore_key(device_secret, &device_id);
    let mut plain = Zeroizing::new(body.to_vec());
    crypto::aead_decrypt_in_place(AlgId::Xoodyak, &key, &nonce, header, &mut plain, &t)
        .map_err(|_| KeyError::UnsealFailure)?;
    Keystore::deserialize(device_id, &plain).ok_or(KeyError::UnsealFailure)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn h32(s: &str) -> [u8; 32] {
        hex::decode(s).unwrap().try_into().unwrap()
    }

    // RFC 7748 section 6.1, cross-checked with an independent X25519
    // implementation.
    const ALICE_PRIV: &str = "77076d0a7318a57d3c16c17251b26645df4c2f87ebc0992ab177fba51db92c2a";
    const ALICE_PUB: &str = "8520f0098930a754748b7ddcb43ef75a0dbf3a0d26381af4eba4a98eaa9b4e6a";
    const BOB_PRIV: &str = "5dab087e624a8a4b79e17f8b83800ee66f3bb1292618b6fd1c2f8b27ff88e0eb";
    const BOB_PUB: &str = "de9edb7d7b7dc1b4d35b61c2ece435373f8343c85b78674dadfc7e146f882b4f";
    const SHARED: &str = "4a5d9d5ba4ce2de1728e3bf480350f25e07e21c947d19e3376f09b3c1e161742";
    const ZERO_SCALAR_PUB: &str = "2fe57da347cd62431528daac5fbb290730fff684afc4cfc2ed90995f58cb3b74";

    #[test]
    fn rfc7748_vectors() {
        let a = dh_keygen(h32(ALICE_PRIV));
        let b = dh_keygen(h32(BOB_PRIV));
        assert_eq!(a.public(), h32(ALICE_PUB));
        assert_eq!(b.public(), h32(BOB_PUB));
        assert_eq!(*a.shared(&b.public()).unwrap(), h32(SHARED));
        assert_eq!(*dh_shared(&h32(BOB_PRIV), &h32(ALICE_PUB)).unwrap(), h32(SHARED));
        assert_eq!(dh_keygen([0; 32]).public(), h32(ZERO_SCALAR_PUB));
    }

    #[test]
    fn low_order_point_is_degenerate() {
        let a = dh_keygen([5; 32]);
        assert_eq!(a.shared(&[0; 32]), Err(KeyError::DegenerateKey));
        let mut one = [0u8; 32];
        one[0] = 1;
        assert_eq!(a.shared(&one), Err(KeyError::DegenerateKey));
    }

    #[test]
    fn debug_hides_private_key() {
        let a = dh_keygen(h32(ALICE_PRIV));
        let s = format!("{a:?}");
        assert!(!s.contains(&ALICE_PRIV[..16]));
        assert!(s.contains("redacted"));
    }

    #[test]
    fn derive_labels_and_frozen_vector() {
        let node = NodeId([0x11; 16]);
        let s = h32(SHARED);
        let a = derive_key(&s, KeyLabel::Session, &node, 1);
        assert_eq!(a, derive_key(&s, KeyLabel::Session, &node, 1));
        assert_ne!(a, derive_key(&s, KeyLabel::AppImage, &node, 1));
        assert_ne!(a, derive_key(&s, KeyLabel::Session, &node, 2));
        let mut seed = s.to_vec();
        seed.extend_from_slice(b"session");
        seed.extend_from_slice(&[0x11; 16]);
        seed.extend_from_slice(&1u64.to_be_bytes());
        assert_eq!(a.as_bytes()[..], crypto::xof_expand(&seed, 16)[..]);
    }

    #[test]
    fn renewal_handshake() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let node = NodeId::from_name("n").unwrap();
        let (eph, offer) = renewal_initiate(4, &mut rng);
        let (accept, theirs) = renewal_respond(4, &offer, &node, 10, &mut rng).unwrap();
        let ours = renewal_complete(&eph, 4, &accept, &node, 10).unwrap();
        assert_eq!(ours, theirs);
        assert_eq!(ours.epoch, 5);

        let replay = renewal_respond(5, &offer, &node, 11, &mut rng);
        assert_eq!(replay.unwrap_err(), KeyError::StaleEpoch { got: 4, current: 5 });
        assert_eq!(RenewalOffer::decode(&offer.encode()).unwrap(), offer);
        assert_eq!(RenewalOffer::decode(&[0; 35]), Err(KeyError::MalformedOffer));
    }

    fn sample_keystore() -> Keystore {
        let mut ks = Keystore::new([3; 16]);
        ks.dh_pairs.insert("identity".into(), dh_keygen([9; 32]));
        let node = NodeId::from_name("gw").unwrap();
        ks.sessions
            .insert(node, SessionKey::derive(&[1; 32], &node, 7, 1234));
        ks
    }

    #[test]
    fn keystore_round_trip_and_failures() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let ks = sample_keystore();
        let blob = seal_keystore(&ks, b"device secret", &mut rng);
        assert_eq!(&blob[..5], b"SB4K\x01");
        assert_eq!(unseal_keystore(&blob, b"device secret").unwrap(), ks);
        assert_eq!(
            unseal_keystore(&blob, b"other secret"),
            Err(KeyError::UnsealFailure)
        );
        assert_eq!(
            unseal_keystore(&blob[..10], b"device secret"),
            Err(KeyError::UnsealFailure)
        );
        let again = seal_keystore(&ks, b"device secret", &mut rng);
        assert_ne!(blob[21..37], again[21..37]);
    }

    #[test]
    fn keystore_hides_keys() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let ks = sample_keystore();
        let blob = seal_keystore(&ks, b"s", &mut rng);
        let session = ks.sessions.values().next().unwrap();
        let key = session.key.as_bytes();
        assert!(!blob.windows(16).any(|w| w == key));
    }

    proptest! {
        #[test]
        fn dh_symmetry(a in any::<[u8; 32]>(), b in any::<[u8; 32]>()) {
            let (a, b) = (dh_keygen(a), dh_keygen(b));
            prop_assert_eq!(*a.shared(&b.public()).unwrap(), *b.shared(&a.public()).unwrap());
        }

        #[test]
        fn any_keystore_byte_flip_detected(pos in any::<usize>(), bit in 0u8..8) {
            let mut rng = ChaCha20Rng::seed_from_u64(4);
            let mut blob = seal_keystore(&sample_keystore(), b"pw", &mut rng);
            let i = pos % blob.len();
            blob[i] ^= 1 << bit;
            prop_assert_eq!(unseal_keystore(&blob, b"pw"), Err(KeyError::UnsealFailure));
        }
    }
}
