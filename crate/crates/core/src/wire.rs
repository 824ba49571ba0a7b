//! Frame format and the authenticated channel between gateway and agents.
//!
//! Layout, big-endian throughout:
//!
//! ```text
//! magic "SB4N" | version 0x01 | msg_type | node_id[16] | epoch u32 | seq u64 | body_len u32
//! sealed body (body_len bytes) | tag[16]
//! ```
//!
//! The 38-byte header is the associated data. The nonce is
//! `direction | msg_type | 00 00 | epoch | seq`, so a key never sees the
//! same nonce twice as long as sequence numbers do not wrap.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::crypto::{self, AeadKey, AlgId, CryptoError, Nonce, Tag, TAG_LEN};
use crate::Millis;

pub const MAGIC: [u8; 4] = *b"SB4N";
pub const VERSION: u8 = 0x01;
pub const HEADER_LEN: usize = 38;
pub const FRAME_OVERHEAD: usize = HEADER_LEN + TAG_LEN;
pub const REPLAY_WINDOW: u64 = 64;
/// Frames accepted under the previous epoch after a renewal.
pub const OVERLAP_FRAMES: u32 = 8;
pub const OVERLAP_MS: Millis = 10_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WireError {
    #[error("malformed frame: {0}")]
    MalformedFrame(&'static str),
    #[error("frame authentication failed")]
    AuthFailure,
    #[error("replayed or stale sequence number {0}")]
    ReplayError(u64),
    #[error("epoch {got} not acceptable (current {current})")]
    EpochMismatch { got: u32, current: u32 },
    #[error("send sequence exhausted, renewal required")]
    SequenceExhausted,
}

impl From<CryptoError> for WireError {
    fn from(_: CryptoError) -> Self {
        WireError::AuthFailure
    }
}

/// 16-byte node identifier. Short ASCII names are zero-padded.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct NodeId(pub [u8; 16]);

impl NodeId {
    /// Builds an id from a name of at most 16 bytes.
    pub fn from_name(name: &str) -> Option<Self> {
        let b = name.as_bytes();
        if b.is_empty() || b.len() > 16 {
            return None;
        }
        let mut id = [0u8; 16];
        id[..b.len()].copy_from_slice(b);
        Some(NodeId(id))
    }

    fn as_name(&self) -> Option<&str> {
        let end = self.0.iter().position(|&b| b == 0).unwrap_or(16);
        if end == 0 || self.0[end..].iter().any(|&b| b != 0) {
            return None;
        }
        let s = std::str::from_utf8(&self.0[..end]).ok()?;
        s.chars().all(|c| c.is_ascii_graphic()).then_some(s)
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.as_name() {
            Some(n) => f.write_str(n),
            None => f.write_str(&hex::encode(self.0)),
        }
    }
}

impl fmt::Debug for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "NodeId({self})")
    }
}

impl FromStr for NodeId {
    type Err = String;

    /// Accepts 32 hex digits or a printable name of up to 16 bytes.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.len() == 32 {
            if let Ok(bytes) = hex::decode(s) {
                return Ok(NodeId(bytes.try_into().expect("32 hex digits")));
            }
        }
        if !s.chars().all(|c| c.is_ascii_graphic()) {
            return Err(format!("invalid node id `{s}`"));
        }
        NodeId::from_name(s).ok_or_else(|| format!("node id `{s}` must be 1..=16 bytes"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum MsgType {
    Hello = 0x01,
    DhOffer = 0x02,
    DhAccept = 0x03,
    AttestChallenge = 0x04,
    AttestResponse = 0x05,
    AppUpdate = 0x06,
    UpdateAck = 0x07,
    Data = 0x08,
    Ack = 0x09,
}

impl MsgType {
    pub const ALL: [MsgType; 9] = [
        MsgType::Hello,
        MsgType::DhOffer,
        MsgType::DhAccept,
        MsgType::AttestChallenge,
        MsgType::AttestResponse,
        MsgType::AppUpdate,
        MsgType::UpdateAck,
        MsgType::Data,
        MsgType::Ack,
    ];

    pub fn from_byte(b: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|t| *t as u8 == b)
    }

    pub fn name(self) -> &'static str {
        match self {
            MsgType::Hello => "HELLO",
            MsgType::DhOffer => "DH_OFFER",
            MsgType::DhAccept => "DH_ACCEPT",
            MsgType::AttestChallenge => "ATTEST_CHALLENGE",
            MsgType::AttestResponse => "ATTEST_RESPONSE",
            MsgType::AppUpdate => "APP_UPDATE",
            MsgType::UpdateAck => "UPDATE_ACK",
            MsgType::Data => "DATA",
            MsgType::Ack => "ACK",
        }
    }
}

impl fmt::Display for MsgType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MsgType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.to_ascii_uppercase().replace('-', "_");
        Self::ALL
            .into_iter()
            .find(|t| t.name() == norm)
            .ok_or_else(|| format!("unknown message type `{s}`"))
    }
}

/// Which way a frame travels. Part of the nonce.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum Direction {
    ToAgent = 0x00,
    ToGateway = 0x01,
}

impl Direction {
    pub fn reverse(self) -> Self {
        match self {
            Direction::ToAgent => Direction::ToGateway,
            Direction::ToGateway => Direction::ToAgent,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Header {
    pub msg_type: MsgType,
    pub node_id: NodeId,
    pub epoch: u32,
    pub seq: u64,
    pub body_len: u32,
}

impl Header {
    pub fn encode(&self) -> [u8; HEADER_LEN] {
        let mut h = [0u8; HEADER_LEN];
        h[0..4].copy_from_slice(&MAGIC);
        h[4] = VERSION;
        h[5] = self.msg_type as u8;
        h[6..22].copy_from_slice(&self.node_id.0);
        h[22..26].copy_from_slice(&self.epoch.to_be_bytes());
        h[26..34].copy_from_slice(&self.seq.to_be_bytes());
        h[34..38].copy_from_slice(&self.body_len.to_be_bytes());
        h
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        if bytes.len() < HEADER_LEN {
            return Err(WireError::MalformedFrame("truncated header"));
        }
        if bytes[0..4] != MAGIC {
            return Err(WireError::MalformedFrame("bad magic"));
        }
        if bytes[4] != VERSION {
            return Err(WireError::MalformedFrame("unsupported version"));
        }
        let msg_type =
            MsgType::from_byte(bytes[5]).ok_or(WireError::MalformedFrame("unknown message type"))?;
        Ok(Header {
            msg_type,
            node_id: NodeId(bytes[6..22].try_into().unwrap()),
            epoch: u32::from_be_bytes(bytes[22..26].try_into().unwrap()),
            seq: u64::from_be_bytes(bytes[26..34].try_into().unwrap()),
            body_len: u32::from_be_bytes(bytes[34..38].try_into().unwrap()),
        })
    }

    fn nonce(&self, dir: Direction) -> Nonce {
        let mut n = [0u8; 16];
        n[0] = dir as u8;
        n[1] = self.msg_type as u8;
        n[4..8].copy_from_slice(&self.epoch.to_be_bytes());
        n[8..16].copy_from_slice(&self.seq.to_be_bytes());
        Nonce(n)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub header: Header,
    pub body: Vec<u8>,
    pub tag: Tag,
}

pub fn encode_frame(frame: &Frame) -> Vec<u8> {
    let mut out = Vec::with_capacity(FRAME_OVERHEAD + frame.body.len());
    out.extend_from_slice(&frame.header.encode());
    out.extend_from_slice(&frame.body);
    out.extend_from_slice(&frame.tag.0);
    out
}

pub fn decode_frame(bytes: &[u8]) -> Result<Frame, WireError> {
    let header = Header::decode(bytes)?;
    let total = FRAME_OVERHEAD
        .checked_add(header.body_len as usize)
        .ok_or(WireError::MalformedFrame("length overflow"))?;
    match bytes.len().cmp(&total) {
        std::cmp::Ordering::Less => return Err(WireError::MalformedFrame("truncated frame")),
        std::cmp::Ordering::Greater => return Err(WireError::MalformedFrame("trailing bytes")),
        std::cmp::Ordering::Equal => {}
    }
    let body = bytes[HEADER_LEN..total - TAG_LEN].to_vec();
    let mut tag = Tag::default();
    tag.0.copy_from_slice(&bytes[total - TAG_LEN..]);
    Ok(Frame { header, body, tag })
}

/// Total length of the frame starting at `bytes`, once its header is
/// available. Used by stream readers.
pub fn frame_len_from_header(bytes: &[u8]) -> Result<usize, WireError> {
    Ok(FRAME_OVERHEAD + Header::decode(bytes)?.body_len as usize)
}

/// Sliding window over the last 64 sequence numbers.
///
/// A sequence number is acceptable iff it has not been seen and
/// `seq + 64 > max_seen`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReplayWindow {
    max_seen: Option<u64>,
    /// Bit `i` set means `max_seen - i` was seen.
    bitmap: u64,
}

impl ReplayWindow {
    pub fn check(&self, seq: u64) -> bool {
        let Some(max) = self.max_seen else {
            return true;
        };
        if seq > max {
            return true;
        }
        let age = max - seq;
        age < REPLAY_WINDOW && self.bitmap & (1 << age) == 0
    }

    pub fn mark(&mut self, seq: u64) {
        match self.max_seen {
            None => {
                self.max_seen = Some(seq);
                self.bitmap = 1;
            }
            Some(max) if seq > max => {
                let shift = seq - max;
                self.bitmap = if shift >= REPLAY_WINDOW {
                    0
                } else {
                    self.bitmap << shift
                };
                self.bitmap |= 1;
                self.max_seen = Some(seq);
            }
            Some(max) => {
                let age = max - seq;
                if age < REPLAY_WINDOW {
                    self.bitmap |= 1 << age;
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
struct EpochState {
    epoch: u32,
    key: AeadKey,
    recv: ReplayWindow,
}

#[derive(Debug, Clone)]
struct Retired {
    state: EpochState,
    retired_at: Millis,
    accepted: u32,
}

/// One end of the secure channel for one node.
#[derive(Debug, Clone)]
pub struct Channel {
    node_id: NodeId,
    alg: AlgId,
    send_dir: Direction,
    current: EpochState,
    send_seq: u64,
    previous: Option<Retired>,
}

impl Channel {
    pub fn new(node_id: NodeId, alg: AlgId, send_dir: Direction, epoch: u32, key: AeadKey) -> Self {
        Self {
            node_id,
            alg,
            send_dir,
            current: EpochState {
                epoch,
                key,
                recv: ReplayWindow::default(),
            },
            send_seq: 0,
            previous: None,
        }
    }

    pub fn node_id(&self) -> NodeId {
        self.node_id
    }

    pub fn alg(&self) -> AlgId {
        self.alg
    }

    pub fn epoch(&self) -> u32 {
        self.current.epoch
    }

    pub fn send_seq(&self) -> u64 {
        self.send_seq
    }

    /// Switches sending to `epoch` and keeps the old key for in-flight
    /// frames, bounded by [`OVERLAP_FRAMES`] and [`OVERLAP_MS`].
    pub fn rekey(&mut self, epoch: u32, key: AeadKey, now: Millis) {
        let old = std::mem::replace(
            &mut self.current,
            EpochState {
                epoch,
                key,
                recv: ReplayWindow::default(),
            },
        );
        self.previous = Some(Retired {
            state: old,
            retired_at: now,
            accepted: 0,
        });
        self.send_seq = 0;
    }

    /// Whether frames of the retired epoch are still accepted at `now`.
    pub fn overlap_open(&self, now: Millis) -> bool {
        self.previous
            .as_ref()
            .is_some_and(|p| p.accepted < OVERLAP_FRAMES && now.saturating_sub(p.retired_at) <= OVERLAP_MS)
    }

    pub fn seal(&mut self, msg_type: MsgType, body: &[u8]) -> Result<Frame, WireError> {
        if self.send_seq == u64::MAX {
            return Err(WireError::SequenceExhausted);
        }
        let body_len = u32::try_from(body.len()).map_err(|_| WireError::MalformedFrame("body too long"))?;
        let header = Header {
            msg_type,
            node_id: self.node_id,
            epoch: self.current.epoch,
            seq: self.send_seq,
            body_len,
        };
        self.send_seq += 1;
        let (body, tag) = crypto::aead_encrypt(
            self.alg,
            &self.current.key,
            &header.nonce(self.send_dir),
            &header.encode(),
            body,
        );
        Ok(Frame { header, body, tag })
    }

    pub fn seal_bytes(&mut self, msg_type: MsgType, body: &[u8]) -> Result<Vec<u8>, WireError> {
        self.seal(msg_type, body).map(|f| encode_frame(&f))
    }

    pub fn open(&mut self, frame: &Frame, now: Millis) -> Result<(MsgType, Vec<u8>), WireError> {
        let h = &frame.header;
        if h.body_len as usize != frame.body.len() {
            return Err(WireError::MalformedFrame("length mismatch"));
        }
        if h.node_id != self.node_id {
            return Err(WireError::AuthFailure);
        }
        let recv_dir = self.send_dir.reverse();
        let overlap = self.overlap_open(now);
        let current_epoch = self.current.epoch;
        let state = if h.epoch == current_epoch {
            &mut self.current
        } else {
            match self.previous.as_mut() {
                Some(p) if p.state.epoch == h.epoch && overlap => &mut p.state,
                _ => {
                    return Err(WireError::EpochMismatch {
                        got: h.epoch,
                        current: current_epoch,
                    })
                }
            }
        };
        if !state.recv.check(h.seq) {
            return Err(WireError::ReplayError(h.seq));
        }
        let mut body = frame.body.clone();
        crypto::aead_decrypt_in_place(
            self.alg,
            &state.key,
            &h.nonce(recv_dir),
            &h.encode(),
            &mut body,
            &frame.tag,
        )?;
        state.recv.mark(h.seq);
        if h.epoch != current_epoch {
            if let Some(p) = self.previous.as_mut() {
                p.accepted += 1;
            }
        }
        Ok((h.msg_type, body))
    }

    pub fn open_bytes(&mut self, bytes: &[u8], now: Millis) -> Result<(MsgType, Vec<u8>), WireError> {
        let frame = decode_frame(bytes)?;
        self.open(&frame, now)
    }
}
