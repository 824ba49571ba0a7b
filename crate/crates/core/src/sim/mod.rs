//! Deterministic discrete-event simulation of one gateway, its agents and
//! an adversary sitting on the link.
//!
//! Every frame put on the link is recorded in a capture journal. A
//! delivery is adversarial when its bytes were never sent by an endpoint
//! or were already delivered once in that direction.

pub mod mutation;
pub mod script;

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::agent::{Agent, SimApp};
use crate::attest::Verdict;
use crate::crypto::AlgId;
use crate::gateway::{app_id_from_name, Action, Gateway, GatewayConfig, NodeStatus};
use crate::keymgr;
use crate::logger::{Category, ChainStatus};
use crate::memguard::Region;
use crate::wire::{self, Channel, Direction, Header, MsgType, HEADER_LEN};
use crate::{Millis, NodeId};

pub use script::{
    parse_script, Command, Filter, InjectBody, ReplaySel, Rule, RuleAction, Script, ScriptError,
};

pub const DEFAULT_TICK_MS: Millis = 100;
pub const DEFAULT_APP_STEP_MS: Millis = 1000;
pub const DEFAULT_LATENCY_MS: Millis = 10;

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub seed: u64,
    pub tick_ms: Millis,
    pub app_step_ms: Millis,
    pub latency_ms: Millis,
    pub gateway: GatewayConfig,
}

impl SimConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            tick_ms: DEFAULT_TICK_MS,
            app_step_ms: DEFAULT_APP_STEP_MS,
            latency_ms: DEFAULT_LATENCY_MS,
            gateway: GatewayConfig {
                attest_interval_ms: 5_000,
                attest_timeout_ms: 1_000,
                arena_size_bytes: 256 * 1024,
                ..GatewayConfig::default()
            },
        }
    }

    /// Applies a `set key value` line.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let n = || script::parse_num::<u64>(value);
        match key {
            "tick_ms" => self.tick_ms = n()?.max(1),
            "app_step_ms" => self.app_step_ms = n()?.max(1),
            "latency_ms" => self.latency_ms = n()?,
            _ => {
                let mut text = String::new();
                let _ = writeln!(text, "{key} = {value}");
                let patch = GatewayConfig::parse(&text)?;
                let g = &mut self.gateway;
                match key {
                    "attest_interval_ms" => g.attest_interval_ms = patch.attest_interval_ms,
                    "attest_timeout_ms" => g.attest_timeout_ms = patch.attest_timeout_ms,
                    "attest_retries" => g.attest_retries = patch.attest_retries,
                    "renewal_interval_s" => g.renewal_interval_s = patch.renewal_interval_s,
                    "arena_size_bytes" => g.arena_size_bytes = patch.arena_size_bytes,
                    "alg" => g.alg = patch.alg,
                    _ => return Err(format!("setting `{key}` has no effect in simulation")),
                }
            }
        }
        Ok(())
    }
}

/// Why a frame is on the link.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    Endpoint,
    Attack(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Captured {
    pub time: Millis,
    pub dir: Direction,
    pub node: NodeId,
    pub msg_type: Option<MsgType>,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackOutcome {
    /// Not delivered yet, or never.
    Undelivered,
    /// Rejected by the gateway, which logged a network anomaly.
    LoggedAnomaly,
    /// Rejected by the gateway without an anomaly entry.
    RejectedSilently,
    /// Rejected by the agent and recorded in its local journal.
    RejectedByAgent,
    /// A genuine frame's first delivery, moved or delayed by the adversary.
    GenuineDelivered,
    /// Adversarial bytes were accepted.
    Accepted,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttackRecord {
    pub time: Millis,
    pub kind: &'static str,
    pub dir: Direction,
    pub node: NodeId,
    pub msg_type: Option<MsgType>,
    pub outcome: AttackOutcome,
}

impl AttackRecord {
    /// Rejected with a record, or shown harmless by the capture journal.
    pub fn accounted(&self) -> bool {
        !matches!(
            self.outcome,
            AttackOutcome::Accepted | AttackOutcome::RejectedSilently
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LinkStats {
    pub sent: u64,
    pub delivered: u64,
    pub adversarial_delivered: u64,
    pub adversarial_accepted: u64,
    pub lost_to_silence: u64,
}

struct InFlight {
    dir: Direction,
    node: NodeId,
    bytes: Vec<u8>,
    origin: Origin,
}

struct AgentSlot {
    agent: Agent,
    joined: bool,
    silenced: bool,
}

fn msg_type_of(bytes: &[u8]) -> Option<MsgType> {
    Header::decode(bytes.get(..HEADER_LEN)?).ok().map(|h| h.msg_type)
}

fn node_seed(seed: u64, node: &NodeId) -> [u8; 32] {
    let mut input = b"agent".to_vec();
    input.extend_from_slice(&seed.to_be_bytes());
    input.extend_from_slice(&node.0);
    crate::crypto::xof_expand(&input, 32)
        .try_into()
        .expect("32 bytes")
}

pub struct Simulator {
    cfg: SimConfig,
    now: Millis,
    next_tick: Millis,
    /// Script commands up to this time have already run.
    commands_done: Option<Millis>,
    gateway: Gateway,
    agents: BTreeMap<NodeId, AgentSlot>,
    inflight: BTreeMap<(Millis, u64), InFlight>,
    next_seq: u64,
    rules: Vec<Rule>,
    capture: Vec<Captured>,
    genuine: HashSet<(Direction, Vec<u8>)>,
    delivered: HashSet<(Direction, Vec<u8>)>,
    attacks: Vec<AttackRecord>,
    link: LinkStats,
    verdicts: BTreeMap<NodeId, Vec<(Millis, Verdict)>>,
    lost_at: BTreeMap<NodeId, Vec<(Millis, usize)>>,
    wire_update_epochs: BTreeMap<NodeId, u32>,
    epoch_violations: u64,
    cells_restored: u64,
    restore_failures: u64,
    pokes: u64,
    trace: Vec<String>,
    rng: ChaCha20Rng,
}

impl Simulator {
    pub fn new(cfg: SimConfig) -> Result<Self, crate::gateway::GatewayError> {
        let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
        let mut gw_seed = [0u8; 32];
        rng.fill_bytes(&mut gw_seed);
        Ok(Self {
            gateway: Gateway::new(cfg.gateway.clone(), gw_seed)?,
            cfg,
            now: 0,
            next_tick: 0,
            commands_done: None,
            agents: BTreeMap::new(),
            inflight: BTreeMap::new(),
            next_seq: 0,
            rules: Vec::new(),
            capture: Vec::new(),
            genuine: HashSet::new(),
            delivered: HashSet::new(),
            attacks: Vec::new(),
            link: LinkStats::default(),
            verdicts: BTreeMap::new(),
            lost_at: BTreeMap::new(),
            wire_update_epochs: BTreeMap::new(),
            epoch_violations: 0,
            cells_restored: 0,
            restore_failures: 0,
            pokes: 0,
            trace: Vec::new(),
            rng,
        })
    }

    pub fn now(&self) -> Millis {
        self.now
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }

    pub fn gateway_mut(&mut self) -> &mut Gateway {
        &mut self.gateway
    }

    pub fn agent(&self, node: &NodeId) -> Option<&Agent> {
        self.agents.get(node).map(|s| &s.agent)
    }

    pub fn agent_mut(&mut self, node: &NodeId) -> Option<&mut Agent> {
        self.agents.get_mut(node).map(|s| &mut s.agent)
    }

    pub fn capture(&self) -> &[Captured] {
        &self.capture
    }

    pub fn attacks(&self) -> &[AttackRecord] {
        &self.attacks
    }

    pub fn link(&self) -> &LinkStats {
        &self.link
    }

    pub fn verdicts(&self, node: &NodeId) -> &[(Millis, Verdict)] {
        self.verdicts.get(node).map_or(&[], Vec::as_slice)
    }

    pub fn lost_events(&self, node: &NodeId) -> &[(Millis, usize)] {
        self.lost_at.get(node).map_or(&[], Vec::as_slice)
    }

    pub fn epoch_violations(&self) -> u64 {
        self.epoch_violations
    }

    /// Human-readable event trace; identical for identical seeds.
    pub fn trace(&self) -> &[String] {
        &self.trace
    }

    fn event(&mut self, msg: String) {
        self.trace.push(format!("t={} {msg}", self.now));
    }

    // ---- link ------------------------------------------------------

    fn enqueue(&mut self, at: Millis, dir: Direction, node: NodeId, bytes: Vec<u8>, origin: Origin) {
        self.next_seq += 1;
        self.inflight.insert(
            (at, self.next_seq),
            InFlight {
                dir,
                node,
                bytes,
                origin,
            },
        );
    }

    fn new_attack(
        &mut self,
        kind: &'static str,
        dir: Direction,
        node: NodeId,
        msg_type: Option<MsgType>,
    ) -> usize {
        self.attacks.push(AttackRecord {
            time: self.now,
            kind,
            dir,
            node,
            msg_type,
            outcome: AttackOutcome::Undelivered,
        });
        self.attacks.len() - 1
    }

    /// An endpoint puts a frame on the link; adversary rules apply here.
    fn transmit(&mut self, dir: Direction, node: NodeId, bytes: Vec<u8>) {
        let ty = msg_type_of(&bytes);
        self.link.sent += 1;
        self.genuine.insert((dir, bytes.clone()));
        self.capture.push(Captured {
            time: self.now,
            dir,
            node,
            msg_type: ty,
            bytes: bytes.clone(),
        });
        if dir == Direction::ToAgent && ty == Some(MsgType::AppUpdate) {
            self.observe_update(node, &bytes);
        }
        let at = self.now + self.cfg.latency_ms;
        let rule = self
            .rules
            .iter_mut()
            .find(|r| r.remaining != Some(0) && r.filter.matches(dir, node, ty));
        let Some(rule) = rule else {
            self.enqueue(at, dir, node, bytes, Origin::Endpoint);
            return;
        };
        if let Some(n) = rule.remaining.as_mut() {
            *n -= 1;
        }
        let action = rule.action;
        let id = self.new_attack(action.name(), dir, node, ty);
        self.event(format!(
            "adversary {} {} {dir:?} {node}",
            action.name(),
            ty.map_or("?", MsgType::name)
        ));
        match action {
            RuleAction::Drop => {}
            RuleAction::Delay { ms } => self.enqueue(at + ms, dir, node, bytes, Origin::Attack(id)),
            RuleAction::Duplicate => {
                self.enqueue(at, dir, node, bytes.clone(), Origin::Endpoint);
                self.enqueue(at + 1, dir, node, bytes, Origin::Attack(id));
            }
            RuleAction::Corrupt { offset, xor } => {
                let mut b = bytes;
                let i = offset % b.len();
                b[i] ^= xor;
                self.enqueue(at, dir, node, b, Origin::Attack(id));
            }
            RuleAction::Mitm { offset, value } => {
                let mut b = bytes;
                let i = offset % b.len();
                b[i] = value;
                self.enqueue(at, dir, node, b, Origin::Attack(id));
            }
        }
    }

    fn observe_update(&mut self, node: NodeId, bytes: &[u8]) {
        let Ok(h) = Header::decode(&bytes[..HEADER_LEN]) else {
            return;
        };
        if let Some(&prev) = self.wire_update_epochs.get(&node) {
            if h.epoch <= prev {
                self.epoch_violations += 1;
            }
        }
        self.wire_update_epochs.insert(node, h.epoch);
    }

    fn deliver(&mut self, item: InFlight) {
        let key = (item.dir, item.bytes.clone());
        let adversarial = !self.genuine.contains(&key) || self.delivered.contains(&key);
        if adversarial {
            self.link.adversarial_delivered += 1;
        }
        let (accepted, by_gateway, anomaly_logged) = match item.dir {
            Direction::ToGateway => {
                let before = self.gateway.log().count(Category::NetworkAnomaly);
                let out = self.gateway.handle_frame(&item.bytes, self.now);
                let logged = self.gateway.log().count(Category::NetworkAnomaly) > before;
                self.apply(out.actions);
                (out.accepted, true, logged)
            }
            Direction::ToAgent => {
                let Some(slot) = self.agents.get_mut(&item.node) else {
                    return;
                };
                if slot.silenced || !slot.joined {
                    self.link.lost_to_silence += 1;
                    return;
                }
                let out = slot.agent.handle_frame(&item.bytes, self.now);
                for reply in out.replies {
                    self.transmit(Direction::ToGateway, item.node, reply);
                }
                (out.accepted, false, false)
            }
        };
        self.link.delivered += 1;
        if accepted {
            self.delivered.insert(key);
            if adversarial {
                self.link.adversarial_accepted += 1;
                self.event(format!("ADVERSARIAL FRAME ACCEPTED {:?} {}", item.dir, item.node));
            }
        }
        if let Origin::Attack(id) = item.origin {
            self.attacks[id].outcome = match (accepted, adversarial) {
                (true, true) => AttackOutcome::Accepted,
                (true, false) => AttackOutcome::GenuineDelivered,
                (false, _) if !by_gateway => AttackOutcome::RejectedByAgent,
                (false, _) if anomaly_logged => AttackOutcome::LoggedAnomaly,
                (false, _) => AttackOutcome::RejectedSilently,
            };
        }
    }

    fn apply(&mut self, actions: Vec<Action>) {
        for a in actions {
            match a {
                Action::Send { node, frame } => self.transmit(Direction::ToAgent, node, frame),
                Action::Verdict { node, verdict } => {
                    self.verdicts.entry(node).or_default().push((self.now, verdict));
                    self.event(format!("verdict {node} {verdict:?}"));
                }
                Action::NodeLost { node, cells_dropped } => {
                    self.lost_at
                        .entry(node)
                        .or_default()
                        .push((self.now, cells_dropped));
                    self.event(format!("lost {node} cells_dropped={cells_dropped}"));
                }
                Action::CellRestored { handle, ok } => {
                    if ok {
                        self.cells_restored += 1;
                    } else {
                        self.restore_failures += 1;
                    }
                    self.event(format!("restore {handle} ok={ok}"));
                }
                Action::Registered { node, epoch } => self.event(format!("registered {node} epoch={epoch}")),
                Action::Renewed { node, epoch } => self.event(format!("renewed {node} epoch={epoch}")),
                Action::UpdateSent {
                    node,
                    version,
                    epoch,
                    forced,
                } => self.event(format!(
                    "update {node} version={version} epoch={epoch} forced={forced}"
                )),
                Action::Installed { node, version } => {
                    self.event(format!("installed {node} version={version}"))
                }
                Action::DataStored { .. } => {}
                Action::Rejected { node, reason } => {
                    let who = node.map_or("?".to_string(), |n| n.to_string());
                    self.event(format!("rejected {who}: {reason}"));
                }
            }
        }
    }

    // ---- commands --------------------------------------------------

    fn slot(&mut self, node: NodeId) -> &mut AgentSlot {
        let seed = node_seed(self.cfg.seed, &node);
        self.agents.entry(node).or_insert_with(|| AgentSlot {
            agent: Agent::new(node, seed),
            joined: false,
            silenced: false,
        })
    }

    fn targets(&self, t: script::Target) -> Vec<NodeId> {
        match t {
            script::Target::All => self.agents.keys().copied().collect(),
            script::Target::Node(n) => vec![n],
        }
    }

    /// Runs one script command at the current time.
    pub fn command(&mut self, cmd: &Command) -> Result<(), String> {
        let now = self.now;
        match cmd {
            Command::Join(n) => {
                let slot = self.slot(*n);
                slot.joined = true;
                let hello = slot.agent.hello(now);
                self.event(format!("join {n}"));
                self.transmit(Direction::ToGateway, *n, hello);
            }
            Command::Silence(n) => {
                self.slot(*n).silenced = true;
                self.event(format!("silence {n}"));
            }
            Command::Unsilence(n) => {
                self.slot(*n).silenced = false;
                self.event(format!("unsilence {n}"));
            }
            Command::TamperCode { node, offset, xor } => {
                self.slot(*node).agent.adversary_patch_code(*offset, *xor);
                self.event(format!("tamper-code {node}"));
            }
            Command::TamperImage { node, offset, xor } => {
                self.slot(*node).agent.adversary_corrupt_image(*offset, *xor);
                self.event(format!("tamper-image {node}"));
            }
            Command::Deploy {
                target,
                app,
                period,
                len,
            } => {
                let mut seed = app.as_bytes().to_vec();
                seed.extend_from_slice(&self.cfg.seed.to_be_bytes());
                let code = SimApp::build(*period, *len, &seed);
                for n in self.targets(*target) {
                    match self.gateway.deploy(n, app_id_from_name(app), &code, now) {
                        Ok(actions) => {
                            self.event(format!("deploy {n} {app}"));
                            self.apply(actions);
                        }
                        Err(e) => self.event(format!("deploy {n} refused: {e}")),
                    }
                }
            }
            Command::Attest(target) => {
                for n in self.targets(*target) {
                    match self.gateway.attest_now(n, now) {
                        Ok(actions) => self.apply(actions),
                        Err(e) => self.event(format!("attest {n} refused: {e}")),
                    }
                }
            }
            Command::Audit => {
                let actions = self.gateway.audit(now);
                self.apply(actions);
            }
            Command::Renew(n) => match self.gateway.renew_session(*n, now) {
                Ok(actions) => self.apply(actions),
                Err(e) => self.event(format!("renew {n} refused: {e}")),
            },
            Command::ForceUpdate(n) => match self.gateway.force_update(*n, now) {
                Ok(actions) => self.apply(actions),
                Err(e) => self.event(format!("force-update {n} refused: {e}")),
            },
            Command::Rule(r) => {
                self.rules.push(*r);
                self.event(format!("rule {}", r.action.name()));
            }
            Command::ClearRules => self.rules.clear(),
            Command::Replay(sel) => self.replay(sel)?,
            Command::Inject { dir, node, body } => self.inject(*dir, *node, body),
            Command::Poke { count } => {
                for _ in 0..*count {
                    let size = self.gateway.arena().size();
                    let off = self.rng.gen_range(0..size);
                    let xor = self.rng.gen_range(1..=255u8);
                    let arena = self.gateway.arena_mut();
                    arena.adversary_poke(off, arena.peek(off) ^ xor);
                    self.pokes += 1;
                }
                self.event(format!("memory poke x{count}"));
            }
            Command::PokeCells { count } => {
                let handles = self.gateway.arena().handles();
                if handles.is_empty() {
                    self.event("memory poke-cells: no cells".into());
                    return Ok(());
                }
                for _ in 0..*count {
                    let h = handles[self.rng.gen_range(0..handles.len())];
                    let tag = self.rng.gen_bool(0.25);
                    let i = self.rng.gen_range(0..usize::MAX);
                    let xor = self.rng.gen_range(1..=255u8);
                    let arena = self.gateway.arena_mut();
                    let off = arena.cell_offset(h, tag, i).expect("live handle");
                    debug_assert!(!matches!(arena.region_of(off), Region::Free));
                    arena.adversary_poke(off, arena.peek(off) ^ xor);
                    self.pokes += 1;
                }
                self.event(format!("memory poke-cells x{count}"));
            }
            Command::End => {}
        }
        Ok(())
    }

    fn replay(&mut self, sel: &ReplaySel) -> Result<(), String> {
        let c = match sel {
            ReplaySel::Index(i) => self
                .capture
                .get(*i)
                .cloned()
                .ok_or(format!("no captured frame #{i}"))?,
            ReplaySel::Last(f) => self
                .capture
                .iter()
                .rev()
                .find(|c| f.matches(c.dir, c.node, c.msg_type))
                .cloned()
                .ok_or("no captured frame matches the replay filter")?,
        };
        let id = self.new_attack("replay", c.dir, c.node, c.msg_type);
        self.event(format!(
            "adversary replay {} {:?} {}",
            c.msg_type.map_or("?", MsgType::name),
            c.dir,
            c.node
        ));
        self.enqueue(
            self.now + self.cfg.latency_ms,
            c.dir,
            c.node,
            c.bytes,
            Origin::Attack(id),
        );
        Ok(())
    }

    fn inject(&mut self, dir: Direction, node: NodeId, body: &InjectBody) {
        let bytes = match body {
            InjectBody::Hex(b) => b.clone(),
            InjectBody::Random { len, msg_type } => {
                let mut b = vec![0u8; *len];
                self.rng.fill_bytes(&mut b);
                if let Some(ty) = msg_type {
                    // A well-formed header with a random body and tag.
                    let header = Header {
                        msg_type: *ty,
                        node_id: node,
                        epoch: self.gateway.node(&node).map_or(0, |r| r.epoch()),
                        seq: self.rng.gen_range(0..1 << 20),
                        body_len: (len.saturating_sub(wire::FRAME_OVERHEAD)) as u32,
                    };
                    if b.len() >= HEADER_LEN {
                        b[..HEADER_LEN].copy_from_slice(&header.encode());
                    }
                }
                b
            }
            InjectBody::ForgedHello => {
                let id = keymgr::dh_keygen_rng(&mut self.rng);
                let mut ch = Channel::new(node, AlgId::Xoodyak, dir, 0, keymgr::bootstrap_key(&node));
                let mut body = id.public().to_vec();
                body.extend_from_slice(&[0u8; crate::agent::HELLO_NONCE_LEN]);
                ch.seal_bytes(MsgType::Hello, &body).expect("fresh channel")
            }
        };
        let ty = msg_type_of(&bytes);
        let id = self.new_attack("inject", dir, node, ty);
        self.event(format!(
            "adversary inject {} {dir:?} {node}",
            ty.map_or("?", MsgType::name)
        ));
        self.enqueue(
            self.now + self.cfg.latency_ms,
            dir,
            node,
            bytes,
            Origin::Attack(id),
        );
    }

    // ---- clock -----------------------------------------------------

    fn tick(&mut self) {
        let actions = self.gateway.tick(self.now);
        self.apply(actions);
        if self.now.is_multiple_of(self.cfg.app_step_ms) {
            let step = self.now / self.cfg.app_step_ms;
            let ids: Vec<NodeId> = self.agents.keys().copied().collect();
            for n in ids {
                let slot = self.agents.get_mut(&n).expect("id from map");
                if !slot.joined || slot.silenced {
                    continue;
                }
                if let Some(frame) = slot.agent.run_app_step(step, self.now) {
                    self.transmit(Direction::ToGateway, n, frame);
                }
            }
        }
    }

    /// Advances to `until`, running commands from `events` as their time
    /// comes. At equal times commands run first, then deliveries, then
    /// the tick.
    pub fn run_until(&mut self, until: Millis, events: &[script::ScriptEvent]) -> Result<(), ScriptError> {
        let done = self.commands_done;
        let mut ev = events
            .iter()
            .filter(|e| done.is_none_or(|d| e.time > d))
            .peekable();
        loop {
            let next_ev = ev.peek().map(|e| e.time);
            let next_frame = self.inflight.keys().next().map(|k| k.0);
            let t = [next_ev, next_frame, Some(self.next_tick)]
                .into_iter()
                .flatten()
                .min()
                .expect("tick is always scheduled");
            if t > until {
                break;
            }
            self.now = t;
            while let Some(e) = ev.next_if(|e| e.time == t) {
                self.command(&e.command)
                    .map_err(|msg| ScriptError { line: e.line, msg })?;
            }
            while let Some(entry) = self.inflight.first_entry() {
                if entry.key().0 != t {
                    break;
                }
                let item = entry.remove();
                self.deliver(item);
            }
            if t == self.next_tick {
                self.next_tick += self.cfg.tick_ms;
                self.tick();
            }
        }
        self.now = until;
        self.commands_done = Some(until);
        Ok(())
    }

    // ---- metrics ---------------------------------------------------

    pub fn metric(&self, name: &str, node: Option<&NodeId>) -> Option<String> {
        if let Some(n) = node {
            return self.node_metric(name, n);
        }
        let log = self.gateway.log();
        let v = match name {
            "adversarial_accepted" => self.link.adversarial_accepted.to_string(),
            "adversarial_delivered" => self.link.adversarial_delivered.to_string(),
            "attacks" => self.attacks.len().to_string(),
            "attacks_unaccounted" => self.attacks.iter().filter(|a| !a.accounted()).count().to_string(),
            "anomalies" => log.count(Category::NetworkAnomaly).to_string(),
            "provenance_entries" => log.count(Category::DataProvenance).to_string(),
            "log_entries" => log.entries().len().to_string(),
            "log_chain" => match log.verify() {
                ChainStatus::Ok => "ok".into(),
                ChainStatus::BrokenAt(i) => format!("broken@{i}"),
            },
            "cells" => self.gateway.arena().live_cells().to_string(),
            "cells_restored" => self.cells_restored.to_string(),
            "restore_failures" => self.restore_failures.to_string(),
            "pokes" => self.pokes.to_string(),
            "epoch_violations" => (self.epoch_violations
                + self
                    .gateway
                    .updates()
                    .iter()
                    .filter(|u| u.prior_image_epoch.is_some_and(|p| u.epoch <= p))
                    .count() as u64)
                .to_string(),
            "frames_sent" => self.link.sent.to_string(),
            "frames_delivered" => self.link.delivered.to_string(),
            "nodes_active" => self.count_status(NodeStatus::Active),
            "nodes_lost" => self.count_status(NodeStatus::Lost),
            _ => return None,
        };
        Some(v)
    }

    fn count_status(&self, s: NodeStatus) -> String {
        self.gateway
            .nodes()
            .filter(|r| r.status() == s)
            .count()
            .to_string()
    }

    fn node_metric(&self, name: &str, n: &NodeId) -> Option<String> {
        let rec = self.gateway.node(n);
        let st = rec.map(|r| r.stats()).unwrap_or_default();
        let agent = self.agents.get(n).map(|s| s.agent.stats()).unwrap_or_default();
        let v = match name {
            "status" => rec.map_or("unknown".into(), |r| r.status().to_string()),
            "epoch" => rec.map_or("none".into(), |r| r.epoch().to_string()),
            "app_version" => rec
                .and_then(|r| r.app_version())
                .map_or("none".into(), |v| v.to_string()),
            "cells" => rec.map_or(0, |r| r.cells().count()).to_string(),
            "verdict_ok" => st.verdict_ok.to_string(),
            "verdict_fail" => st.verdict_fail.to_string(),
            "verdict_lost" => self.lost_events(n).len().to_string(),
            "challenges" => st.challenges.to_string(),
            "forced_updates" => st.forced_updates.to_string(),
            "app_updates" => st.app_updates.to_string(),
            "installs" => st.installs.to_string(),
            "renewals" => st.renewals.to_string(),
            "data_stored" => st.data_stored.to_string(),
            "data_rejected" => st.data_rejected.to_string(),
            "admissions" => st.admissions.to_string(),
            "agent_dropped" => agent.dropped.to_string(),
            "agent_alarms" => agent.alarms.to_string(),
            "agent_installs" => agent.installs.to_string(),
            "agent_epoch" => self
                .agents
                .get(n)
                .and_then(|s| s.agent.epoch())
                .map_or("none".into(), |e| e.to_string()),
            _ => return None,
        };
        Some(v)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExpectResult {
    pub line: usize,
    pub text: String,
    pub actual: String,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenarioReport {
    pub seed: u64,
    pub end_time: Millis,
    pub expectations: Vec<ExpectResult>,
    pub trace: Vec<String>,
    pub attacks: Vec<AttackRecord>,
    pub link: LinkStats,
}

impl ScenarioReport {
    pub fn passed(&self) -> bool {
        self.expectations.iter().all(|e| e.passed)
    }
}

/// Runs a parsed script to its end and evaluates its expectations.
pub fn run_script(script: &Script, seed: u64) -> Result<(Simulator, ScenarioReport), ScriptError> {
    let mut cfg = SimConfig::new(seed);
    for (k, v) in &script.settings {
        cfg.set(k, v).map_err(|msg| ScriptError { line: 0, msg })?;
    }
    let mut sim = Simulator::new(cfg).map_err(|e| ScriptError {
        line: 0,
        msg: e.to_string(),
    })?;
    let end = script.end_time();
    sim.run_until(end, &script.events)?;
    let expectations = script
        .expects
        .iter()
        .map(|x| {
            let actual = sim
                .metric(&x.metric, x.node.as_ref())
                .unwrap_or_else(|| format!("<unknown metric {}>", x.metric));
            ExpectResult {
                line: x.line,
                text: x.to_string(),
                passed: x.op.eval(&actual, &x.value),
                actual,
            }
        })
        .collect();
    let report = ScenarioReport {
        seed,
        end_time: end,
        expectations,
        trace: sim.trace.clone(),
        attacks: sim.attacks.clone(),
        link: sim.link.clone(),
    };
    Ok((sim, report))
}

pub fn run_script_text(text: &str, seed: u64) -> Result<(Simulator, ScenarioReport), ScriptError> {
    run_script(&parse_script(text)?, seed)
}
