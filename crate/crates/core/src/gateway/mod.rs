//! Gateway: node registry, attestation scheduling, key renewal, image
//! deployment and protected storage of node data.
//!
//! The gateway is a pure state machine. Callers feed it inbound frames and
//! clock ticks and carry out the returned [`Action`]s.

mod config;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use thiserror::Error;
use zeroize::Zeroizing;

pub use config::{config_pairs, GatewayConfig, DEFAULT_LISTEN_ADDR, DEFAULT_RENEWAL_INTERVAL_S};

use crate::agent::{HELLO_LEN, HELLO_NONCE_LEN};
use crate::attest::{Attestor, ResponseOutcome, TimeoutOutcome, Verdict};
use crate::crypto::{AeadKey, AlgId};
use crate::image::AppImage;
use crate::keymgr::{self, DhKeyPair, KeyError, Keystore, RenewalOffer, SessionKey, DH_LEN};
use crate::logger::{Category, LogError, Logger};
use crate::memguard::{Arena, CellStatus, Handle, MemError};
use crate::wire::{self, Channel, Direction, MsgType, WireError};
use crate::{Millis, NodeId};

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("node {0} is already registered")]
    DuplicateNode(NodeId),
    #[error("degenerate key exchange")]
    DegenerateKey,
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("node {0} is not active")]
    NodeNotActive(NodeId),
    #[error("key renewal with {0} failed")]
    RenewalFailed(NodeId),
    #[error("node {0} did not acknowledge its update")]
    UpdateTimeout(NodeId),
    #[error("node {0} has an operation in progress")]
    Busy(NodeId),
    #[error("node {0} has no deployed application")]
    NothingDeployed(NodeId),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error(transparent)]
    Memory(#[from] MemError),
    #[error(transparent)]
    Log(#[from] LogError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NodeStatus {
    Registered,
    Active,
    Suspect,
    Lost,
}

impl fmt::Display for NodeStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NodeStatus::Registered => "registered",
            NodeStatus::Active => "active",
            NodeStatus::Suspect => "suspect",
            NodeStatus::Lost => "lost",
        })
    }
}

/// 16-byte application identifier, named like [`NodeId`].
pub fn app_id_from_name(name: &str) -> [u8; 16] {
    let mut id = [0u8; 16];
    let b = name.as_bytes();
    if b.len() <= 16 {
        id[..b.len()].copy_from_slice(b);
    } else {
        id.copy_from_slice(&crate::crypto::xof_expand(b, 16));
    }
    id
}

struct Deployment {
    app_id: [u8; 16],
    version: u32,
    code: Zeroizing<Vec<u8>>,
    image_epoch: u32,
}

struct UpdatePlan {
    app_id: [u8; 16],
    version: u32,
    code: Zeroizing<Vec<u8>>,
    forced: bool,
}

enum NodeOp {
    Idle,
    Renewing {
        ephemeral: DhKeyPair,
        plan: Option<UpdatePlan>,
        deadline: Millis,
    },
    AwaitingAck {
        plan: UpdatePlan,
        image_epoch: u32,
        deadline: Millis,
    },
}

impl NodeOp {
    fn name(&self) -> &'static str {
        match self {
            NodeOp::Idle => "idle",
            NodeOp::Renewing { .. } => "renewing",
            NodeOp::AwaitingAck { .. } => "awaiting-ack",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct NodeStats {
    pub verdict_ok: u64,
    pub verdict_fail: u64,
    pub challenges: u64,
    pub forced_updates: u64,
    pub app_updates: u64,
    pub installs: u64,
    pub renewals: u64,
    pub data_stored: u64,
    pub data_rejected: u64,
    pub times_lost: u64,
    pub admissions: u64,
}

pub struct NodeRecord {
    node_id: NodeId,
    status: NodeStatus,
    identity: [u8; DH_LEN],
    session: SessionKey,
    channel: Channel,
    deployment: Option<Deployment>,
    cells: BTreeSet<Handle>,
    next_attest_at: Option<Millis>,
    next_renewal_at: Millis,
    op: NodeOp,
    after_forced_update: bool,
    stats: NodeStats,
}

impl fmt::Debug for NodeRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NodeRecord")
            .field("node_id", &self.node_id)
            .field("status", &self.status)
            .field("epoch", &self.channel.epoch())
            .field("app_version", &self.app_version())
            .field("cells", &self.cells.len())
            .field("op", &self.op.name())
            .finish_non_exhaustive()
    }
}

impl NodeRecord {
    pub fn node_id(&self) -> NodeId {
        self.node_id
    }

    pub fn status(&self) -> NodeStatus {
        self.status
    }

    pub fn epoch(&self) -> u32 {
        self.channel.epoch()
    }

    pub fn app_version(&self) -> Option<u32> {
        self.deployment.as_ref().map(|d| d.version)
    }

    pub fn image_epoch(&self) -> Option<u32> {
        self.deployment.as_ref().map(|d| d.image_epoch)
    }

    pub fn cells(&self) -> impl Iterator<Item = Handle> + '_ {
        self.cells.iter().copied()
    }

    pub fn stats(&self) -> NodeStats {
        self.stats
    }

    pub fn busy(&self) -> bool {
        !matches!(self.op, NodeOp::Idle)
    }
}

/// Things the caller should do or know about after a gateway step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    Send {
        node: NodeId,
        frame: Vec<u8>,
    },
    Registered {
        node: NodeId,
        epoch: u32,
    },
    Renewed {
        node: NodeId,
        epoch: u32,
    },
    UpdateSent {
        node: NodeId,
        version: u32,
        epoch: u32,
        forced: bool,
    },
    Installed {
        node: NodeId,
        version: u32,
    },
    Verdict {
        node: NodeId,
        verdict: Verdict,
    },
    NodeLost {
        node: NodeId,
        cells_dropped: usize,
    },
    DataStored {
        node: NodeId,
        handle: Handle,
    },
    CellRestored {
        handle: Handle,
        ok: bool,
    },
    Rejected {
        node: Option<NodeId>,
        reason: String,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FrameOutcome {
    /// The frame authenticated and was fresh.
    pub accepted: bool,
    pub actions: Vec<Action>,
}

/// One APP_UPDATE as sent, for checking that updates always move to a
/// newer epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UpdateRecord {
    pub node: NodeId,
    pub prior_image_epoch: Option<u32>,
    pub epoch: u32,
    pub version: u32,
    pub forced: bool,
}

pub struct Gateway {
    config: GatewayConfig,
    nodes: BTreeMap<NodeId, NodeRecord>,
    arena: Arena,
    log: Logger,
    attestor: Attestor,
    rng: ChaCha20Rng,
    last_tick: Option<Millis>,
    next_audit_at: Millis,
    updates: Vec<UpdateRecord>,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway")
            .field("nodes", &self.nodes.len())
            .field("live_cells", &self.arena.live_cells())
            .field("log_entries", &self.log.entries().len())
            .finish_non_exhaustive()
    }
}

impl Gateway {
    /// `seed` drives the memory key, tag placement, challenges and
    /// ephemeral keys.
    pub fn new(config: GatewayConfig, seed: [u8; 32]) -> Result<Self, GatewayError> {
        let mut rng = ChaCha20Rng::from_seed(seed);
        let mut k_mem = Zeroizing::new([0u8; 16]);
        rng.fill_bytes(&mut *k_mem);
        let mut arena_seed = [0u8; 32];
        rng.fill_bytes(&mut arena_seed);
        let arena = Arena::new(config.arena_size_bytes, AeadKey::from_bytes(*k_mem), arena_seed)?;
        let log = match &config.log_path {
            Some(p) => Logger::create(p)?,
            None => Logger::new(),
        };
        Ok(Self {
            attestor: Attestor::new(config.attest_timeout_ms, config.attest_retries),
            config,
            nodes: BTreeMap::new(),
            arena,
            log,
            rng,
            last_tick: None,
            next_audit_at: 0,
            updates: Vec::new(),
        })
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    pub fn node(&self, id: &NodeId) -> Option<&NodeRecord> {
        self.nodes.get(id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &NodeRecord> {
        self.nodes.values()
    }

    pub fn log(&self) -> &Logger {
        &self.log
    }

    pub fn arena(&self) -> &Arena {
        &self.arena
    }

    /// Adversary access to protected memory.
    pub fn arena_mut(&mut self) -> &mut Arena {
        &mut self.arena
    }

    pub fn updates(&self) -> &[UpdateRecord] {
        &self.updates
    }

    pub fn pending_challenge(&self, id: &NodeId) -> bool {
        self.attestor.pending(id).is_some()
    }

    /// Session keys of every live node, for sealing at rest.
    pub fn keystore(&self, device_id: [u8; 16]) -> Keystore {
        let mut ks = Keystore::new(device_id);
        for rec in self.nodes.values().filter(|r| r.status != NodeStatus::Lost) {
            ks.sessions.insert(rec.node_id, rec.session.clone());
        }
        ks
    }

    fn note(&mut self, now: Millis, cat: Category, detail: impl Into<String>) {
        self.log.log_append(now, cat, detail);
    }

    fn reject(&mut self, now: Millis, node: Option<NodeId>, reason: impl Into<String>) -> FrameOutcome {
        let reason = reason.into();
        let who = node.map(|n| n.to_string()).unwrap_or_else(|| "?".into());
        self.note(now, Category::NetworkAnomaly, format!("node={who} {reason}"));
        FrameOutcome {
            accepted: false,
            actions: vec![Action::Rejected { node, reason }],
        }
    }

    fn rec(&mut self, id: &NodeId) -> Result<&mut NodeRecord, GatewayError> {
        self.nodes.get_mut(id).ok_or(GatewayError::UnknownNode(*id))
    }

    /// Admits a node that proved nothing but its pinned identity key.
    /// New nodes start at epoch 0; a lost node with the same identity
    /// comes back one epoch later and is sent a forced update.
    pub fn register_node(
        &mut self,
        node: NodeId,
        identity: [u8; DH_LEN],
        hello_nonce: [u8; HELLO_NONCE_LEN],
        now: Millis,
    ) -> Result<Vec<Action>, GatewayError> {
        let epoch = match self.nodes.get(&node) {
            None => 0,
            Some(r) if r.status == NodeStatus::Lost && r.identity == identity => {
                keymgr::next_epoch(r.channel.epoch()).map_err(|_| GatewayError::RenewalFailed(node))?
            }
            Some(_) => return Err(GatewayError::DuplicateNode(node)),
        };
        let ephemeral = keymgr::dh_keygen_rng(&mut self.rng);
        let shared = ephemeral
            .shared(&identity)
            .map_err(|_| GatewayError::DegenerateKey)?;
        let session = SessionKey::derive(&shared, &node, epoch, now);
        let channel = Channel::new(
            node,
            self.config.alg,
            Direction::ToAgent,
            epoch,
            session.key.clone(),
        );

        let mut boot = Channel::new(
            node,
            AlgId::Xoodyak,
            Direction::ToAgent,
            0,
            keymgr::bootstrap_key(&node),
        );
        let mut body = epoch.to_be_bytes().to_vec();
        body.extend_from_slice(&ephemeral.public());
        body.push(self.config.alg as u8);
        body.extend_from_slice(&hello_nonce);
        let reply = boot.seal_bytes(MsgType::DhAccept, &body)?;

        let renewal_at = now.saturating_add(self.config.renewal_interval_ms());
        let readmitted = self.nodes.contains_key(&node);
        let rec = self.nodes.entry(node).or_insert_with(|| NodeRecord {
            node_id: node,
            status: NodeStatus::Registered,
            identity,
            session: session.clone(),
            channel: channel.clone(),
            deployment: None,
            cells: BTreeSet::new(),
            next_attest_at: None,
            next_renewal_at: renewal_at,
            op: NodeOp::Idle,
            after_forced_update: false,
            stats: NodeStats::default(),
        });
        rec.status = NodeStatus::Registered;
        rec.session = session;
        rec.channel = channel;
        rec.next_renewal_at = renewal_at;
        rec.next_attest_at = None;
        rec.op = NodeOp::Idle;
        rec.after_forced_update = false;
        rec.stats.admissions += 1;
        let verb = if readmitted { "re-admitted" } else { "registered" };
        self.note(
            now,
            Category::NodeLifecycle,
            format!("node={node} {verb} epoch={epoch}"),
        );
        let mut actions = vec![
            Action::Send { node, frame: reply },
            Action::Registered { node, epoch },
        ];
        if readmitted && self.nodes[&node].deployment.is_some() {
            actions.extend(self.force_update(node, now)?);
        }
        Ok(actions)
    }

    pub fn handle_frame(&mut self, bytes: &[u8], now: Millis) -> FrameOutcome {
        let frame = match wire::decode_frame(bytes) {
            Ok(f) => f,
            Err(e) => return self.reject(now, None, e.to_string()),
        };
        let node = frame.header.node_id;
        if frame.header.msg_type == MsgType::Hello {
            return self.handle_hello(&frame, now);
        }
        let Some(rec) = self.nodes.get_mut(&node) else {
            return self.reject(now, Some(node), "frame from unknown node");
        };
        if rec.status == NodeStatus::Lost {
            return self.reject(now, Some(node), "frame from lost node");
        }
        let (ty, body) = match rec.channel.open(&frame, now) {
            Ok(x) => x,
            Err(WireError::ReplayError(seq))
                if frame.header.msg_type == MsgType::AttestResponse
                    && self.attestor.pending(&node).is_some() =>
            {
                let mut out = self.reject(
                    now,
                    Some(node),
                    format!("replayed attestation response seq={seq}"),
                );
                self.attestor.fail_pending(&node);
                out.actions.extend(self.on_verdict(node, Verdict::Fail, now));
                return out;
            }
            Err(e) => return self.reject(now, Some(node), e.to_string()),
        };
        let body = Zeroizing::new(body);
        let actions = match ty {
            MsgType::DhAccept => self.on_renewal_accept(node, &body, now),
            MsgType::UpdateAck => self.on_update_ack(node, &body, now),
            MsgType::AttestResponse => self.on_response(node, &body, now),
            MsgType::Data => self.on_data(node, &body, frame.header.seq, now),
            other => {
                self.note(
                    now,
                    Category::NetworkAnomaly,
                    format!("node={node} unexpected {other}"),
                );
                vec![]
            }
        };
        FrameOutcome {
            accepted: true,
            actions,
        }
    }

    fn handle_hello(&mut self, frame: &wire::Frame, now: Millis) -> FrameOutcome {
        let node = frame.header.node_id;
        let mut boot = Channel::new(
            node,
            AlgId::Xoodyak,
            Direction::ToAgent,
            0,
            keymgr::bootstrap_key(&node),
        );
        let body = match boot.open(frame, now) {
            Ok((_, b)) if b.len() == HELLO_LEN => b,
            Ok(_) => return self.reject(now, Some(node), "malformed HELLO"),
            Err(e) => return self.reject(now, Some(node), e.to_string()),
        };
        let identity: [u8; DH_LEN] = body[..DH_LEN].try_into().unwrap();
        let nonce: [u8; HELLO_NONCE_LEN] = body[DH_LEN..].try_into().unwrap();
        match self.register_node(node, identity, nonce, now) {
            Ok(actions) => FrameOutcome {
                accepted: true,
                actions,
            },
            Err(e) => self.reject(now, Some(node), e.to_string()),
        }
    }

    /// Deploys new code: renews the session, then ships the image sealed
    /// under the fresh image key.
    pub fn deploy(
        &mut self,
        node: NodeId,
        app_id: [u8; 16],
        code: &[u8],
        now: Millis,
    ) -> Result<Vec<Action>, GatewayError> {
        let rec = self.rec(&node)?;
        if rec.status == NodeStatus::Lost {
            return Err(GatewayError::NodeNotActive(node));
        }
        let version = rec.deployment.as_ref().map_or(1, |d| d.version.wrapping_add(1));
        self.start_update(
            node,
            UpdatePlan {
                app_id,
                version,
                code: Zeroizing::new(code.to_vec()),
                forced: false,
            },
            now,
        )
    }

    /// Reinstalls the canonical image at the same version.
    pub fn force_update(&mut self, node: NodeId, now: Millis) -> Result<Vec<Action>, GatewayError> {
        let rec = self.rec(&node)?;
        let d = rec
            .deployment
            .as_ref()
            .ok_or(GatewayError::NothingDeployed(node))?;
        let plan = UpdatePlan {
            app_id: d.app_id,
            version: d.version,
            code: d.code.clone(),
            forced: true,
        };
        rec.stats.forced_updates += 1;
        self.note(now, Category::NodeLifecycle, format!("node={node} forced update"));
        self.start_update(node, plan, now)
    }

    /// Renews the session key without touching the installed image.
    pub fn renew_session(&mut self, node: NodeId, now: Millis) -> Result<Vec<Action>, GatewayError> {
        if self.rec(&node)?.status == NodeStatus::Lost {
            return Err(GatewayError::NodeNotActive(node));
        }
        if self.attestor.pending(&node).is_some() {
            return Err(GatewayError::Busy(node));
        }
        self.start_renewal(node, None, now)
    }

    fn start_update(
        &mut self,
        node: NodeId,
        plan: UpdatePlan,
        now: Millis,
    ) -> Result<Vec<Action>, GatewayError> {
        if self.attestor.cancel(&node) {
            self.note(
                now,
                Category::NodeLifecycle,
                format!("node={node} pending challenge cancelled"),
            );
        }
        self.start_renewal(node, Some(plan), now)
    }

    fn start_renewal(
        &mut self,
        node: NodeId,
        plan: Option<UpdatePlan>,
        now: Millis,
    ) -> Result<Vec<Action>, GatewayError> {
        let deadline = now + self.config.attest_timeout_ms;
        let rec = self.nodes.get_mut(&node).ok_or(GatewayError::UnknownNode(node))?;
        if rec.busy() {
            return Err(GatewayError::Busy(node));
        }
        let (ephemeral, offer) = keymgr::renewal_initiate(rec.channel.epoch(), &mut self.rng);
        let frame = rec.channel.seal_bytes(MsgType::DhOffer, &offer.encode())?;
        rec.op = NodeOp::Renewing {
            ephemeral,
            plan,
            deadline,
        };
        Ok(vec![Action::Send { node, frame }])
    }

    fn on_renewal_accept(&mut self, node: NodeId, body: &[u8], now: Millis) -> Vec<Action> {
        let rec = self.nodes.get_mut(&node).expect("caller checked");
        let NodeOp::Renewing { ephemeral, .. } = &rec.op else {
            self.note(
                now,
                Category::NetworkAnomaly,
                format!("node={node} unsolicited DH_ACCEPT"),
            );
            return vec![];
        };
        let next = RenewalOffer::decode(body)
            .and_then(|accept| keymgr::renewal_complete(ephemeral, rec.channel.epoch(), &accept, &node, now));
        let next = match next {
            Ok(k) => k,
            Err(e) => {
                rec.op = NodeOp::Idle;
                let why = match e {
                    KeyError::StaleEpoch { .. } => "stale epoch",
                    _ => "bad key share",
                };
                self.note(
                    now,
                    Category::NetworkAnomaly,
                    format!("node={node} renewal failed: {why}"),
                );
                return vec![];
            }
        };
        let NodeOp::Renewing { plan, .. } = std::mem::replace(&mut rec.op, NodeOp::Idle) else {
            unreachable!()
        };
        let epoch = next.epoch;
        rec.channel.rekey(epoch, next.key.clone(), now);
        rec.session = next;
        rec.stats.renewals += 1;
        rec.next_renewal_at = now.saturating_add(self.config.renewal_interval_ms());
        let mut actions = vec![Action::Renewed { node, epoch }];
        let detail = format!("node={node} session renewed epoch={epoch}");
        if let Some(plan) = plan {
            let image = AppImage::seal(
                self.config.alg,
                &rec.session.image_key,
                plan.app_id,
                plan.version,
                &plan.code,
            );
            match rec.channel.seal_bytes(MsgType::AppUpdate, &image.encode()) {
                Ok(frame) => {
                    self.updates.push(UpdateRecord {
                        node,
                        prior_image_epoch: rec.deployment.as_ref().map(|d| d.image_epoch),
                        epoch,
                        version: plan.version,
                        forced: plan.forced,
                    });
                    rec.stats.app_updates += 1;
                    actions.push(Action::Send { node, frame });
                    actions.push(Action::UpdateSent {
                        node,
                        version: plan.version,
                        epoch,
                        forced: plan.forced,
                    });
                    rec.op = NodeOp::AwaitingAck {
                        plan,
                        image_epoch: epoch,
                        deadline: now + self.config.attest_timeout_ms,
                    };
                }
                Err(e) => {
                    self.log.log_append(
                        now,
                        Category::NodeLifecycle,
                        format!("node={node} update not sent: {e}"),
                    );
                }
            }
        }
        self.note(now, Category::NodeLifecycle, detail);
        actions
    }

    fn on_update_ack(&mut self, node: NodeId, body: &[u8], now: Millis) -> Vec<Action> {
        let rec = self.nodes.get_mut(&node).expect("caller checked");
        let matches = match &rec.op {
            NodeOp::AwaitingAck { plan, .. } => body == plan.version.to_be_bytes(),
            _ => false,
        };
        if !matches {
            self.note(
                now,
                Category::NetworkAnomaly,
                format!("node={node} unexpected UPDATE_ACK"),
            );
            return vec![];
        }
        let NodeOp::AwaitingAck {
            plan, image_epoch, ..
        } = std::mem::replace(&mut rec.op, NodeOp::Idle)
        else {
            unreachable!()
        };
        let version = plan.version;
        rec.after_forced_update = plan.forced;
        rec.deployment = Some(Deployment {
            app_id: plan.app_id,
            version,
            code: plan.code,
            image_epoch,
        });
        rec.stats.installs += 1;
        self.note(
            now,
            Category::NodeLifecycle,
            format!("node={node} installed version={version} epoch={image_epoch}"),
        );
        let mut actions = vec![Action::Installed { node, version }];
        actions.extend(self.challenge(node, now));
        actions
    }

    /// Issues a challenge now unless one is pending or an operation is
    /// under way.
    pub fn attest_now(&mut self, node: NodeId, now: Millis) -> Result<Vec<Action>, GatewayError> {
        let rec = self.rec(&node)?;
        if rec.status == NodeStatus::Lost {
            return Err(GatewayError::NodeNotActive(node));
        }
        if rec.deployment.is_none() {
            return Err(GatewayError::NothingDeployed(node));
        }
        if rec.busy() || self.attestor.pending(&node).is_some() {
            return Err(GatewayError::Busy(node));
        }
        Ok(self.challenge(node, now))
    }

    fn challenge(&mut self, node: NodeId, now: Millis) -> Vec<Action> {
        let interval = self.config.attest_interval_ms;
        let rec = self.nodes.get_mut(&node).expect("caller checked");
        rec.next_attest_at = Some(now + interval);
        match self
            .attestor
            .issue_challenge(&mut rec.channel, now, &mut self.rng)
        {
            Ok(frame) => {
                rec.stats.challenges += 1;
                vec![Action::Send { node, frame }]
            }
            Err(e) => {
                self.note(
                    now,
                    Category::NodeLifecycle,
                    format!("node={node} challenge not sent: {e}"),
                );
                vec![]
            }
        }
    }

    fn on_response(&mut self, node: NodeId, body: &[u8], now: Millis) -> Vec<Action> {
        let rec = &self.nodes[&node];
        let Some(d) = rec.deployment.as_ref() else {
            self.note(
                now,
                Category::NetworkAnomaly,
                format!("node={node} response without deployment"),
            );
            return vec![];
        };
        match self.attestor.verify_response(&node, body, &d.code) {
            Ok(ResponseOutcome::Resolved(v)) => self.on_verdict(node, v, now),
            Ok(ResponseOutcome::Superseded) => {
                self.note(
                    now,
                    Category::NodeLifecycle,
                    format!("node={node} late response to superseded challenge ignored"),
                );
                vec![]
            }
            Err(_) => {
                self.note(
                    now,
                    Category::NetworkAnomaly,
                    format!("node={node} unsolicited attestation response"),
                );
                vec![]
            }
        }
    }

    fn on_verdict(&mut self, node: NodeId, verdict: Verdict, now: Millis) -> Vec<Action> {
        let rec = self.nodes.get_mut(&node).expect("caller checked");
        let mut actions = vec![Action::Verdict { node, verdict }];
        match verdict {
            Verdict::Ok => {
                rec.stats.verdict_ok += 1;
                rec.after_forced_update = false;
                let before = rec.status;
                rec.status = NodeStatus::Active;
                self.note(
                    now,
                    Category::NodeLifecycle,
                    format!("node={node} attestation ok ({before} -> active)"),
                );
            }
            Verdict::Fail => {
                rec.stats.verdict_fail += 1;
                if rec.after_forced_update {
                    self.note(
                        now,
                        Category::NodeLifecycle,
                        format!("node={node} attestation failed after forced update"),
                    );
                    actions.extend(self.mark_lost(node, "unrecoverable after forced update", now));
                } else {
                    rec.status = NodeStatus::Suspect;
                    self.note(
                        now,
                        Category::NodeLifecycle,
                        format!("node={node} attestation failed, suspect"),
                    );
                    match self.force_update(node, now) {
                        Ok(a) => actions.extend(a),
                        Err(e) => self.note(
                            now,
                            Category::NodeLifecycle,
                            format!("node={node} forced update not started: {e}"),
                        ),
                    }
                }
            }
            Verdict::Lost => actions.extend(self.mark_lost(node, "no attestation response", now)),
        }
        actions
    }

    fn mark_lost(&mut self, node: NodeId, reason: &str, now: Millis) -> Vec<Action> {
        self.attestor.cancel(&node);
        let rec = self.nodes.get_mut(&node).expect("caller checked");
        rec.status = NodeStatus::Lost;
        rec.op = NodeOp::Idle;
        rec.next_attest_at = None;
        rec.stats.times_lost += 1;
        let cells = std::mem::take(&mut rec.cells);
        let n = cells.len();
        for h in cells {
            let _ = self.arena.release(h);
        }
        self.note(
            now,
            Category::NodeLifecycle,
            format!("node={node} lost: {reason}; {n} cells invalidated"),
        );
        vec![Action::NodeLost {
            node,
            cells_dropped: n,
        }]
    }

    fn on_data(&mut self, node: NodeId, body: &[u8], seq: u64, now: Millis) -> Vec<Action> {
        let rec = self.nodes.get_mut(&node).expect("caller checked");
        if rec.status != NodeStatus::Active {
            rec.stats.data_rejected += 1;
            let status = rec.status;
            self.note(
                now,
                Category::NetworkAnomaly,
                format!("node={node} data from {status} node dropped"),
            );
            return vec![];
        }
        let version = rec.app_version().unwrap_or(0);
        match self.arena.write_protected(body) {
            Ok(h) => {
                rec.cells.insert(h);
                rec.stats.data_stored += 1;
                let ack = rec.channel.seal_bytes(MsgType::Ack, &seq.to_be_bytes());
                self.note(
                    now,
                    Category::DataProvenance,
                    format!("node={node} {h} app_version={version} len={}", body.len()),
                );
                let mut actions = vec![Action::DataStored { node, handle: h }];
                if let Ok(frame) = ack {
                    actions.push(Action::Send { node, frame });
                }
                actions
            }
            Err(e) => {
                rec.stats.data_rejected += 1;
                self.note(
                    now,
                    Category::MemIntegrity,
                    format!("node={node} data not stored: {e}"),
                );
                vec![]
            }
        }
    }

    /// Audits every cell, logs the result and restores tampered cells
    /// from the journal.
    pub fn audit(&mut self, now: Millis) -> Vec<Action> {
        let report = self.arena.audit_all(&mut self.log, now);
        let mut actions = Vec::new();
        for (h, status) in report {
            if status == CellStatus::Ok {
                continue;
            }
            let ok = self.arena.restore(h).is_ok();
            let outcome = if ok { "restored" } else { "restore failed" };
            self.note(now, Category::MemIntegrity, format!("{h} {outcome}"));
            actions.push(Action::CellRestored { handle: h, ok });
        }
        actions
    }

    /// Advances timers. Calling twice with the same `now` does nothing
    /// the second time.
    pub fn tick(&mut self, now: Millis) -> Vec<Action> {
        if self.last_tick.is_some_and(|t| now <= t) {
            return vec![];
        }
        self.last_tick = Some(now);
        let mut actions = Vec::new();
        let ids: Vec<NodeId> = self.nodes.keys().copied().collect();
        for node in ids {
            actions.extend(self.tick_node(node, now));
        }
        if now >= self.next_audit_at {
            self.next_audit_at = now + self.config.attest_interval_ms;
            actions.extend(self.audit(now));
        }
        actions
    }

    fn tick_node(&mut self, node: NodeId, now: Millis) -> Vec<Action> {
        let rec = self.nodes.get_mut(&node).expect("id from map");
        if rec.status == NodeStatus::Lost {
            return vec![];
        }
        let op_deadline = match &rec.op {
            NodeOp::Idle => None,
            NodeOp::Renewing { deadline, .. } => Some((*deadline, "key renewal timed out")),
            NodeOp::AwaitingAck { deadline, .. } => Some((*deadline, "update not acknowledged")),
        };
        if let Some((deadline, why)) = op_deadline {
            if now > deadline {
                return self.mark_lost(node, why, now);
            }
            return vec![];
        }
        if let Some(p) = self.attestor.pending(&node) {
            if now <= p.deadline {
                return vec![];
            }
            let outcome = self.attestor.on_timeout(&mut rec.channel, now, &mut self.rng);
            return match outcome {
                Ok((TimeoutOutcome::Retry, Some(frame))) => {
                    rec.stats.challenges += 1;
                    self.note(
                        now,
                        Category::NodeLifecycle,
                        format!("node={node} challenge timed out, retrying"),
                    );
                    vec![Action::Send { node, frame }]
                }
                Ok(_) => self.on_verdict(node, Verdict::Lost, now),
                Err(e) => {
                    self.note(
                        now,
                        Category::NodeLifecycle,
                        format!("node={node} retry not sent: {e}"),
                    );
                    self.on_verdict(node, Verdict::Lost, now)
                }
            };
        }
        if now >= rec.next_renewal_at {
            return match self.start_renewal(node, None, now) {
                Ok(a) => a,
                Err(e) => {
                    self.note(
                        now,
                        Category::NodeLifecycle,
                        format!("node={node} renewal not started: {e}"),
                    );
                    vec![]
                }
            };
        }
        if rec.deployment.is_some() && rec.next_attest_at.is_some_and(|t| now >= t) {
            return self.challenge(node, now);
        }
        vec![]
    }
}
