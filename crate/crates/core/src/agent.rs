//! Node-side agent: registration, key renewal, image installation,
//! attestation answers and the simulated application.
//!
//! The installed image stays sealed at rest. Plaintext code exists only
//! inside [`Agent::with_code`] and is wiped when that call returns.

use std::fmt;
use std::path::PathBuf;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use zeroize::Zeroizing;

use crate::attest;
use crate::crypto::{self, AlgId};
use crate::image::AppImage;
use crate::keymgr::{self, DhKeyPair, Keystore, RenewalOffer, SessionKey, DH_LEN};
use crate::wire::{self, Channel, Direction, MsgType};
use crate::{Millis, NodeId};

pub const HELLO_NONCE_LEN: usize = 16;
pub const HELLO_LEN: usize = DH_LEN + HELLO_NONCE_LEN;
/// Registration accept: epoch, gateway public key, algorithm, echoed nonce.
pub const REGISTRATION_ACCEPT_LEN: usize = 4 + DH_LEN + 1 + HELLO_NONCE_LEN;

const IDENTITY_LABEL: &str = "identity";

/// Deterministic stand-in for user code. The first eight bytes are the
/// manifest: output period and payload length, both u32 big-endian; the
/// rest is the payload seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimApp<'a> {
    pub period: u32,
    pub payload_len: u32,
    pub seed: &'a [u8],
}

impl<'a> SimApp<'a> {
    pub fn parse(code: &'a [u8]) -> Option<Self> {
        if code.len() < 8 {
            return None;
        }
        Some(Self {
            period: u32::from_be_bytes(code[0..4].try_into().unwrap()),
            payload_len: u32::from_be_bytes(code[4..8].try_into().unwrap()),
            seed: &code[8..],
        })
    }

    pub fn build(period: u32, payload_len: u32, seed: &[u8]) -> Vec<u8> {
        let mut code = Vec::with_capacity(8 + seed.len());
        code.extend_from_slice(&period.to_be_bytes());
        code.extend_from_slice(&payload_len.to_be_bytes());
        code.extend_from_slice(seed);
        code
    }

    /// Output for `step`, if the period divides it.
    pub fn step(&self, step: u64) -> Option<Vec<u8>> {
        if self.period == 0 || !step.is_multiple_of(u64::from(self.period)) || self.payload_len == 0 {
            return None;
        }
        let mut input = self.seed.to_vec();
        input.extend_from_slice(&step.to_be_bytes());
        Some(crypto::xof_expand(&input, self.payload_len as usize))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AgentConfig {
    pub node_id: NodeId,
    pub gateway_addr: String,
    pub device_secret: Vec<u8>,
    pub keystore_path: Option<PathBuf>,
}

impl AgentConfig {
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut cfg = AgentConfig {
            gateway_addr: crate::gateway::DEFAULT_LISTEN_ADDR.into(),
            ..Default::default()
        };
        let mut have_id = false;
        for (key, value) in crate::gateway::config_pairs(text)? {
            match key.as_str() {
                "node_id" => {
                    cfg.node_id = value.parse()?;
                    have_id = true;
                }
                "gateway_addr" => cfg.gateway_addr = value,
                "device_secret" => cfg.device_secret = value.into_bytes(),
                "keystore_path" => cfg.keystore_path = Some(PathBuf::from(value)),
                other => return Err(format!("unknown agent setting `{other}`")),
            }
        }
        if !have_id {
            return Err("agent config needs `node_id`".into());
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AgentStats {
    pub accepted: u64,
    pub dropped: u64,
    pub alarms: u64,
    pub installs: u64,
    pub renewals: u64,
    pub data_sent: u64,
    pub acks: u64,
}

/// Result of handing one inbound frame to the agent.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AgentOutput {
    /// The frame authenticated and was fresh.
    pub accepted: bool,
    pub replies: Vec<Vec<u8>>,
}

struct Session {
    keys: SessionKey,
    channel: Channel,
}

struct PendingHello {
    nonce: [u8; HELLO_NONCE_LEN],
    channel: Channel,
}

pub struct Agent {
    node_id: NodeId,
    identity: DhKeyPair,
    rng: ChaCha20Rng,
    hello: Option<PendingHello>,
    session: Option<Session>,
    alg: AlgId,
    image: Option<AppImage>,
    code_patch: Option<(usize, u8)>,
    stats: AgentStats,
    events: Vec<(Millis, String)>,
}

impl fmt::Debug for Agent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Agent")
            .field("node_id", &self.node_id)
            .field("epoch", &self.epoch())
            .field("app_version", &self.app_version())
            .field("stats", &self.stats)
            .finish_non_exhaustive()
    }
}

impl Agent {
    /// `seed` drives the identity key and every later random choice.
    pub fn new(node_id: NodeId, seed: [u8; 32]) -> Self {
        let mut rng = ChaCha20Rng::from_seed(seed);
        let identity = keymgr::dh_keygen_rng(&mut rng);
        Self::with_identity(node_id, identity, rng)
    }

    pub fn from_keystore(ks: &Keystore, seed: [u8; 32]) -> Option<Self> {
        let identity = ks.dh_pairs.get(IDENTITY_LABEL)?.clone();
        Some(Self::with_identity(
            NodeId(ks.device_id),
            identity,
            ChaCha20Rng::from_seed(seed),
        ))
    }

    fn with_identity(node_id: NodeId, identity: DhKeyPair, rng: ChaCha20Rng) -> Self {
        Self {
            node_id,
            identity,
            rng,
            hello: None,
            session: None,
            alg: AlgId::Xoodyak,
            image: None,
            code_patch: None,
            stats: AgentStats::default(),
            events: Vec::new(),
        }
    }

    pub fn node_id(&self) -> NodeId {
        self.node_id
    }

    pub fn identity_public(&self) -> [u8; DH_LEN] {
        self.identity.public()
    }

    pub fn is_registered(&self) -> bool {
        self.session.is_some()
    }

    pub fn epoch(&self) -> Option<u32> {
        self.session.as_ref().map(|s| s.keys.epoch)
    }

    pub fn app_version(&self) -> Option<u32> {
        self.image.as_ref().map(|i| i.version)
    }

    pub fn stats(&self) -> AgentStats {
        self.stats
    }

    pub fn events(&self) -> &[(Millis, String)] {
        &self.events
    }

    fn note(&mut self, now: Millis, msg: impl Into<String>) {
        self.events.push((now, msg.into()));
    }

    fn drop_frame(&mut self, now: Millis, why: impl fmt::Display) -> AgentOutput {
        self.stats.dropped += 1;
        self.note(now, format!("dropped frame: {why}"));
        AgentOutput::default()
    }

    /// Starts (or restarts) registration. The HELLO travels under the
    /// public bootstrap key.
    pub fn hello(&mut self, now: Millis) -> Vec<u8> {
        let mut nonce = [0u8; HELLO_NONCE_LEN];
        self.rng.fill_bytes(&mut nonce);
        let mut channel = Channel::new(
            self.node_id,
            AlgId::Xoodyak,
            Direction::ToGateway,
            0,
            keymgr::bootstrap_key(&self.node_id),
        );
        let mut body = self.identity.public().to_vec();
        body.extend_from_slice(&nonce);
        let frame = channel.seal_bytes(MsgType::Hello, &body).expect("fresh channel");
        self.hello = Some(PendingHello { nonce, channel });
        self.note(now, "sent HELLO");
        frame
    }

    pub fn handle_frame(&mut self, bytes: &[u8], now: Millis) -> AgentOutput {
        let frame = match wire::decode_frame(bytes) {
            Ok(f) => f,
            Err(e) => return self.drop_frame(now, e),
        };
        if frame.header.node_id != self.node_id {
            return self.drop_frame(now, "frame for another node");
        }
        if frame.header.msg_type == MsgType::DhAccept && self.hello.is_some() {
            return self.finish_registration(&frame, now);
        }
        let Some(session) = self.session.as_mut() else {
            return self.drop_frame(now, "no session");
        };
        let (ty, body) = match session.channel.open(&frame, now) {
            Ok(x) => x,
            Err(e) => return self.drop_frame(now, e),
        };
        let body = Zeroizing::new(body);
        self.stats.accepted += 1;
        let current_epoch = session.keys.epoch;
        let replies = match ty {
            MsgType::DhOffer => self.on_renewal_offer(&body, now),
            MsgType::AttestChallenge => self.on_challenge(&body, now),
            MsgType::AppUpdate if frame.header.epoch == current_epoch => self.on_update(&body, now),
            MsgType::AppUpdate => {
                self.stats.dropped += 1;
                self.note(now, "APP_UPDATE under a retired epoch ignored");
                vec![]
            }
            MsgType::Ack => {
                self.stats.acks += 1;
                vec![]
            }
            other => {
                self.stats.dropped += 1;
                self.note(now, format!("unexpected {other} ignored"));
                vec![]
            }
        };
        AgentOutput {
            accepted: true,
            replies,
        }
    }

    fn finish_registration(&mut self, frame: &wire::Frame, now: Millis) -> AgentOutput {
        let pending = self.hello.as_mut().expect("checked by caller");
        let body = match pending.channel.open(frame, now) {
            Ok((_, b)) => b,
            Err(e) => return self.drop_frame(now, e),
        };
        if body.len() != REGISTRATION_ACCEPT_LEN || body[37..] != pending.nonce {
            return self.drop_frame(now, "registration accept does not match our HELLO");
        }
        let Some(alg) = AlgId::from_byte(body[36]) else {
            return self.drop_frame(now, "unknown algorithm in registration accept");
        };
        let epoch = u32::from_be_bytes(body[..4].try_into().unwrap());
        let gw_public: [u8; DH_LEN] = body[4..36].try_into().unwrap();
        let shared = match self.identity.shared(&gw_public) {
            Ok(s) => s,
            Err(e) => return self.drop_frame(now, e),
        };
        let keys = SessionKey::derive(&shared, &self.node_id, epoch, now);
        if let (Some(img), Some(old)) = (self.image.take(), self.session.as_ref()) {
            self.image = img.reseal(self.alg, &old.keys.image_key, &keys.image_key).ok();
        }
        let channel = Channel::new(self.node_id, alg, Direction::ToGateway, epoch, keys.key.clone());
        self.alg = alg;
        self.session = Some(Session { keys, channel });
        self.hello = None;
        self.stats.accepted += 1;
        self.note(now, format!("registered, epoch {epoch}, {alg}"));
        AgentOutput {
            accepted: true,
            replies: vec![],
        }
    }

    fn on_renewal_offer(&mut self, body: &[u8], now: Millis) -> Vec<Vec<u8>> {
        let session = self.session.as_mut().expect("session checked");
        let outcome = RenewalOffer::decode(body).and_then(|offer| {
            keymgr::renewal_respond(session.keys.epoch, &offer, &self.node_id, now, &mut self.rng)
        });
        let (accept, next) = match outcome {
            Ok(x) => x,
            Err(e) => {
                self.stats.dropped += 1;
                self.note(now, format!("renewal offer refused: {e}"));
                return vec![];
            }
        };
        let reply = match session.channel.seal_bytes(MsgType::DhAccept, &accept.encode()) {
            Ok(r) => r,
            Err(e) => {
                self.note(now, format!("cannot answer renewal: {e}"));
                return vec![];
            }
        };
        session.channel.rekey(next.epoch, next.key.clone(), now);
        let old = std::mem::replace(&mut session.keys, next);
        if let Some(img) = self.image.take() {
            match img.reseal(self.alg, &old.image_key, &session.keys.image_key) {
                Ok(i) => self.image = Some(i),
                Err(_) => {
                    self.stats.alarms += 1;
                    self.image = Some(img);
                }
            }
        }
        self.stats.renewals += 1;
        let epoch = session.keys.epoch;
        self.note(now, format!("session renewed to epoch {epoch}"));
        vec![reply]
    }

    /// Runs `f` over the plaintext code the node would execute. The
    /// buffer is wiped afterwards.
    pub fn with_code<T>(&self, f: impl FnOnce(&[u8]) -> T) -> Option<T> {
        let session = self.session.as_ref()?;
        let image = self.image.as_ref()?;
        let mut code = image.open(self.alg, &session.keys.image_key).ok()?;
        if let Some((off, xor)) = self.code_patch {
            if !code.is_empty() {
                let i = off % code.len();
                code[i] ^= xor;
            }
        }
        Some(f(&code))
    }

    fn on_challenge(&mut self, t: &[u8], now: Millis) -> Vec<Vec<u8>> {
        let digest = match self.with_code(|code| attest::response_body(code, t)) {
            Some(Ok(d)) => d,
            Some(Err(e)) => {
                self.stats.dropped += 1;
                self.note(now, format!("bad challenge: {e}"));
                return vec![];
            }
            None => {
                self.stats.alarms += 1;
                self.note(now, "local alarm: installed image unreadable");
                [0u8; 32]
            }
        };
        let session = self.session.as_mut().expect("session checked");
        match session.channel.seal_bytes(MsgType::AttestResponse, &digest) {
            Ok(f) => vec![f],
            Err(e) => {
                self.note(now, format!("cannot answer challenge: {e}"));
                vec![]
            }
        }
    }

    fn on_update(&mut self, body: &[u8], now: Millis) -> Vec<Vec<u8>> {
        let session = self.session.as_mut().expect("session checked");
        let verified =
            AppImage::decode(body).and_then(|img| img.open(self.alg, &session.keys.image_key).map(|_| img));
        let img = match verified {
            Ok(i) => i,
            Err(e) => {
                self.stats.dropped += 1;
                self.note(now, format!("image rejected: {e}"));
                return vec![];
            }
        };
        let version = img.version;
        let reply = session
            .channel
            .seal_bytes(MsgType::UpdateAck, &version.to_be_bytes());
        self.image = Some(img);
        self.code_patch = None;
        self.stats.installs += 1;
        self.note(now, format!("installed version {version}"));
        match reply {
            Ok(f) => vec![f],
            Err(_) => vec![],
        }
    }

    /// One application step; returns a sealed DATA frame when the app
    /// produces output.
    pub fn run_app_step(&mut self, step: u64, now: Millis) -> Option<Vec<u8>> {
        if self.session.is_none() || self.image.is_none() {
            return None;
        }
        let output = match self.with_code(|code| SimApp::parse(code).and_then(|app| app.step(step))) {
            Some(o) => o?,
            None => {
                self.stats.alarms += 1;
                self.note(now, "local alarm: installed image unreadable");
                return None;
            }
        };
        let session = self.session.as_mut()?;
        let frame = session.channel.seal_bytes(MsgType::Data, &output).ok()?;
        self.stats.data_sent += 1;
        Some(frame)
    }

    /// Snapshot of everything the agent keeps at rest.
    pub fn storage_snapshot(&mut self, device_secret: &[u8]) -> Vec<u8> {
        let ks = self.keystore();
        let mut out = keymgr::seal_keystore(&ks, device_secret, &mut self.rng);
        if let Some(img) = &self.image {
            out.extend_from_slice(&img.encode());
        }
        out
    }

    pub fn keystore(&self) -> Keystore {
        let mut ks = Keystore::new(self.node_id.0);
        ks.dh_pairs.insert(IDENTITY_LABEL.into(), self.identity.clone());
        if let Some(s) = &self.session {
            ks.sessions.insert(self.node_id, s.keys.clone());
        }
        ks
    }

    /// Adversary hook: flips bits of the code as executed. Cleared by
    /// the next install.
    pub fn adversary_patch_code(&mut self, offset: usize, xor: u8) {
        self.code_patch = Some((offset, xor));
    }

    /// Adversary hook: flips bits of the sealed image at rest.
    pub fn adversary_corrupt_image(&mut self, offset: usize, xor: u8) {
        if let Some(img) = self.image.as_mut() {
            if img.body.is_empty() {
                img.tag.0[offset % 16] ^= xor;
            } else {
                let i = offset % img.body.len();
                img.body[i] ^= xor;
            }
        }
    }
}
