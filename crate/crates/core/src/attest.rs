//! Challenge-response code attestation.
//!
//! The gateway sends a fresh 16-byte secret `t` inside an ATTEST_CHALLENGE
//! frame. The agent answers with `hash(code ^ xof_expand(t, |code|))` over
//! the plaintext code it would execute, and the gateway compares that with
//! the same function over its retained canonical copy.

use std::collections::BTreeMap;

use rand::{CryptoRng, RngCore};
use thiserror::Error;
use zeroize::{Zeroize, ZeroizeOnDrop, Zeroizing};

use crate::crypto::{self, AlgId, Digest, DIGEST_LEN};
use crate::wire::{Channel, MsgType, WireError};
use crate::{Millis, NodeId};

pub const CHALLENGE_LEN: usize = 16;
pub const DEFAULT_TIMEOUT_MS: Millis = 5_000;
pub const DEFAULT_RETRIES: u32 = 2;
pub const DEFAULT_INTERVAL_MS: Millis = 30_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AttestError {
    #[error("a challenge is already pending for {0}")]
    ChallengeAlreadyPending(NodeId),
    #[error("no pending challenge for {0}")]
    NoPendingChallenge(NodeId),
    #[error("unexpected message type {0}")]
    UnexpectedMessage(MsgType),
    #[error("malformed attestation body")]
    MalformedBody,
    #[error(transparent)]
    Wire(#[from] WireError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Ok,
    Fail,
    Lost,
}

pub fn expected_digest(code: &[u8], t: &[u8; CHALLENGE_LEN]) -> Digest {
    let mut masked = Zeroizing::new(code.to_vec());
    crypto::xor_mask(&mut masked, t);
    crypto::hash(AlgId::Xoodyak, &masked)
}

#[derive(Zeroize, ZeroizeOnDrop)]
struct Secret([u8; CHALLENGE_LEN]);

pub struct PendingChallenge {
    pub node_id: NodeId,
    t: Secret,
    pub issued_at: Millis,
    pub deadline: Millis,
    pub retries_left: u32,
    /// Attestation round this challenge belongs to; retries share it.
    pub round: u64,
    superseded: Vec<Secret>,
}

impl std::fmt::Debug for PendingChallenge {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PendingChallenge")
            .field("node_id", &self.node_id)
            .field("deadline", &self.deadline)
            .field("retries_left", &self.retries_left)
            .field("round", &self.round)
            .finish_non_exhaustive()
    }
}

/// What a response did to the pending challenge.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResponseOutcome {
    Resolved(Verdict),
    /// A correct answer to a challenge of this round that a retry already
    /// replaced. Ignored; the current challenge stays pending.
    Superseded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeoutOutcome {
    Retry,
    Lost,
}

/// Gateway-side challenge bookkeeping, at most one pending challenge per node.
#[derive(Debug)]
pub struct Attestor {
    pub timeout_ms: Millis,
    pub retries: u32,
    pending: BTreeMap<NodeId, PendingChallenge>,
    rounds: BTreeMap<NodeId, u64>,
}

impl Attestor {
    pub fn new(timeout_ms: Millis, retries: u32) -> Self {
        Self {
            timeout_ms,
            retries,
            pending: BTreeMap::new(),
            rounds: BTreeMap::new(),
        }
    }

    pub fn pending(&self, node: &NodeId) -> Option<&PendingChallenge> {
        self.pending.get(node)
    }

    fn send<R: RngCore + CryptoRng>(
        channel: &mut Channel,
        rng: &mut R,
    ) -> Result<(Secret, Vec<u8>), AttestError> {
        let mut t = Secret([0u8; CHALLENGE_LEN]);
        rng.fill_bytes(&mut t.0);
        let frame = channel.seal_bytes(MsgType::AttestChallenge, &t.0)?;
        Ok((t, frame))
    }

    /// Starts a new round for the channel's node.
    pub fn issue_challenge<R: RngCore + CryptoRng>(
        &mut self,
        channel: &mut Channel,
        now: Millis,
        rng: &mut R,
    ) -> Result<Vec<u8>, AttestError> {
        let node = channel.node_id();
        if self.pending.contains_key(&node) {
            return Err(AttestError::ChallengeAlreadyPending(node));
        }
        let (t, frame) = Self::send(channel, rng)?;
        let round = self.rounds.entry(node).or_insert(0);
        *round += 1;
        self.pending.insert(
            node,
            PendingChallenge {
                node_id: node,
                t,
                issued_at: now,
                deadline: now + self.timeout_ms,
                retries_left: self.retries,
                round: *round,
                superseded: Vec::new(),
            },
        );
        Ok(frame)
    }

    /// Nodes whose pending challenge expired before `now`.
    pub fn expired(&self, now: Millis) -> Vec<NodeId> {
        self.pending
            .values()
            .filter(|p| now > p.deadline)
            .map(|p| p.node_id)
            .collect()
    }

    /// Handles an expired challenge: re-issues with a fresh `t` while
    /// retries remain, otherwise clears it and reports the node lost.
    pub fn on_timeout<R: RngCore + CryptoRng>(
        &mut self,
        channel: &mut Channel,
        now: Millis,
        rng: &mut R,
    ) -> Result<(TimeoutOutcome, Option<Vec<u8>>), AttestError> {
        let node = channel.node_id();
        let p = self
            .pending
            .get_mut(&node)
            .ok_or(AttestError::NoPendingChallenge(node))?;
        if p.retries_left == 0 {
            self.pending.remove(&node);
            return Ok((TimeoutOutcome::Lost, None));
        }
        let (t, frame) = Self::send(channel, rng)?;
        p.retries_left -= 1;
        p.superseded.push(std::mem::replace(&mut p.t, t));
        p.issued_at = now;
        p.deadline = now + self.timeout_ms;
        Ok((TimeoutOutcome::Retry, Some(frame)))
    }

    /// Checks a decrypted ATTEST_RESPONSE body against the canonical code.
    pub fn verify_response(
        &mut self,
        node: &NodeId,
        body: &[u8],
        canonical_code: &[u8],
    ) -> Result<ResponseOutcome, AttestError> {
        let p = self
            .pending
            .get(node)
            .ok_or(AttestError::NoPendingChallenge(*node))?;
        let mut got = Digest::default();
        if body.len() == DIGEST_LEN {
            got.0.copy_from_slice(body);
        }
        if body.len() == DIGEST_LEN && got == expected_digest(canonical_code, &p.t.0) {
            self.pending.remove(node);
            return Ok(ResponseOutcome::Resolved(Verdict::Ok));
        }
        if body.len() == DIGEST_LEN
            && p.superseded
                .iter()
                .any(|old| got == expected_digest(canonical_code, &old.0))
        {
            return Ok(ResponseOutcome::Superseded);
        }
        self.pending.remove(node);
        Ok(ResponseOutcome::Resolved(Verdict::Fail))
    }

    /// Resolves the pending challenge as failed, for responses the channel
    /// rejected as replays.
    pub fn fail_pending(&mut self, node: &NodeId) -> Option<Verdict> {
        self.pending.remove(node).map(|_| Verdict::Fail)
    }

    /// Drops the pending challenge without a verdict.
    pub fn cancel(&mut self, node: &NodeId) -> bool {
        self.pending.remove(node).is_some()
    }
}

/// Agent side: the response body for challenge secret `t`.
pub fn response_body(code: &[u8], t: &[u8]) -> Result<[u8; DIGEST_LEN], AttestError> {
    let t: [u8; CHALLENGE_LEN] = t.try_into().map_err(|_| AttestError::MalformedBody)?;
    Ok(expected_digest(code, &t).0)
}

/// Agent side: opens a challenge frame and seals the response.
pub fn answer_challenge(
    channel: &mut Channel,
    code: &[u8],
    frame: &[u8],
    now: Millis,
) -> Result<Vec<u8>, AttestError> {
    let (ty, t) = channel.open_bytes(frame, now)?;
    if ty != MsgType::AttestChallenge {
        return Err(AttestError::UnexpectedMessage(ty));
    }
    let body = response_body(code, &t)?;
    Ok(channel.seal_bytes(MsgType::AttestResponse, &body)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::AeadKey;
    use crate::wire::Direction;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn channels() -> (Channel, Channel) {
        let id = NodeId::from_name("n").unwrap();
        let k = AeadKey::from_bytes([1; 16]);
        (
            Channel::new(id, AlgId::Xoodyak, Direction::ToAgent, 0, k.clone()),
            Channel::new(id, AlgId::Xoodyak, Direction::ToGateway, 0, k),
        )
    }

    const CODE: &[u8] = b"\x00\x00\x00\x01\x00\x00\x00\x08application code";

    #[test]
    fn digest_sensitivity() {
        let t = [9u8; 16];
        let d = expected_digest(CODE, &t);
        assert_eq!(d, expected_digest(CODE, &t));
        let mut code = CODE.to_vec();
        code[3] ^= 1;
        assert_ne!(d, expected_digest(&code, &t));
        let mut t2 = t;
        t2[0] ^= 0x10;
        assert_ne!(d, expected_digest(CODE, &t2));
    }

    #[test]
    fn honest_round_trip() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let (mut gw, mut ag) = channels();
        let mut a = Attestor::new(DEFAULT_TIMEOUT_MS, DEFAULT_RETRIES);
        let ch = a.issue_challenge(&mut gw, 100, &mut rng).unwrap();
        assert_eq!(
            a.pending(&gw.node_id()).unwrap().deadline,
            100 + DEFAULT_TIMEOUT_MS
        );
        assert_eq!(
            a.issue_challenge(&mut gw, 101, &mut rng),
            Err(AttestError::ChallengeAlreadyPending(gw.node_id()))
        );
        let resp = answer_challenge(&mut ag, CODE, &ch, 150).unwrap();
        let (ty, body) = gw.open_bytes(&resp, 200).unwrap();
        assert_eq!(ty, MsgType::AttestResponse);
        assert_eq!(
            a.verify_response(&gw.node_id(), &body, CODE).unwrap(),
            ResponseOutcome::Resolved(Verdict::Ok)
        );
        assert_eq!(
            a.verify_response(&gw.node_id(), &body, CODE),
            Err(AttestError::NoPendingChallenge(gw.node_id()))
        );
    }

    #[test]
    fn consecutive_challenges_differ() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let (mut gw, mut ag) = channels();
        let mut a = Attestor::new(DEFAULT_TIMEOUT_MS, DEFAULT_RETRIES);
        let c1 = a.issue_challenge(&mut gw, 0, &mut rng).unwrap();
        a.cancel(&gw.node_id());
        let c2 = a.issue_challenge(&mut gw, 0, &mut rng).unwrap();
        let t1 = ag.open_bytes(&c1, 0).unwrap().1;
        let t2 = ag.open_bytes(&c2, 0).unwrap().1;
        assert_ne!(t1, t2);
    }

    #[test]
    fn stale_round_digest_fails() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let (mut gw, mut ag) = channels();
        let node = gw.node_id();
        let mut a = Attestor::new(DEFAULT_TIMEOUT_MS, DEFAULT_RETRIES);
        let c1 = a.issue_challenge(&mut gw, 0, &mut rng).unwrap();
        let old = ag.open_bytes(&c1, 0).unwrap().1;
        let old_body = response_body(CODE, &old).unwrap();
        a.cancel(&node);
        a.issue_challenge(&mut gw, 0, &mut rng).unwrap();
        assert_eq!(
            a.verify_response(&node, &old_body, CODE).unwrap(),
            ResponseOutcome::Resolved(Verdict::Fail)
        );
    }

    #[test]
    fn other_code_version_fails() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let (mut gw, mut ag) = channels();
        let mut a = Attestor::new(DEFAULT_TIMEOUT_MS, DEFAULT_RETRIES);
        let ch = a.issue_challenge(&mut gw, 0, &mut rng).unwrap();
        let resp = answer_challenge(&mut ag, b"version two", &ch, 0).unwrap();
        let body = gw.open_bytes(&resp, 0).unwrap().1;
        assert_eq!(
            a.verify_response(&gw.node_id(), &body, CODE).unwrap(),
            ResponseOutcome::Resolved(Verdict::Fail)
        );
    }

    #[test]
    fn retries_then_lost() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let (mut gw, mut ag) = channels();
        let node = gw.node_id();
        let mut a = Attestor::new(1_000, 2);
        let c1 = a.issue_challenge(&mut gw, 0, &mut rng).unwrap();
        assert!(a.expired(1_000).is_empty());
        assert_eq!(a.expired(1_001), vec![node]);
        let (o, f) = a.on_timeout(&mut gw, 1_001, &mut rng).unwrap();
        assert_eq!(o, TimeoutOutcome::Retry);
        let c2 = f.unwrap();
        // a late answer to the first challenge is ignored
        let late = answer_challenge(&mut ag, CODE, &c1, 1_100).unwrap();
        let body = gw.open_bytes(&late, 1_100).unwrap().1;
        assert_eq!(
            a.verify_response(&node, &body, CODE).unwrap(),
            ResponseOutcome::Superseded
        );
        assert!(a.pending(&node).is_some());
        let _ = c2;
        assert_eq!(
            a.on_timeout(&mut gw, 2_002, &mut rng).unwrap().0,
            TimeoutOutcome::Retry
        );
        assert_eq!(
            a.on_timeout(&mut gw, 3_003, &mut rng).unwrap().0,
            TimeoutOutcome::Lost
        );
        assert!(a.pending(&node).is_none());
    }

    #[test]
    fn answer_on_retry_is_ok() {
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let (mut gw, mut ag) = channels();
        let node = gw.node_id();
        let mut a = Attestor::new(1_000, 2);
        a.issue_challenge(&mut gw, 0, &mut rng).unwrap();
        let (_, f) = a.on_timeout(&mut gw, 1_001, &mut rng).unwrap();
        let resp = answer_challenge(&mut ag, CODE, &f.unwrap(), 1_050).unwrap();
        let body = gw.open_bytes(&resp, 1_060).unwrap().1;
        assert_eq!(
            a.verify_response(&node, &body, CODE).unwrap(),
            ResponseOutcome::Resolved(Verdict::Ok)
        );
    }

    #[test]
    fn forged_challenge_rejected() {
        let (_, mut ag) = channels();
        let id = ag.node_id();
        let mut forger = Channel::new(
            id,
            AlgId::Xoodyak,
            Direction::ToAgent,
            0,
            AeadKey::from_bytes([2; 16]),
        );
        let forged = forger.seal_bytes(MsgType::AttestChallenge, &[0; 16]).unwrap();
        assert_eq!(
            answer_challenge(&mut ag, CODE, &forged, 0),
            Err(AttestError::Wire(WireError::AuthFailure))
        );
    }

    proptest! {
        #[test]
        fn single_byte_mutation_always_fails(
            code in proptest::collection::vec(any::<u8>(), 1..512),
            pos in any::<usize>(),
            xor in 1u8..=255,
            t in any::<[u8; 16]>(),
        ) {
            let mut bad = code.clone();
            let i = pos % bad.len();
            bad[i] ^= xor;
            prop_assert_ne!(expected_digest(&bad, &t), expected_digest(&code, &t));
        }
    }
}
