//! Random frame mutation campaign against a live gateway/agent pair.

use std::collections::{BTreeMap, HashSet};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::agent::{Agent, SimApp};
use crate::gateway::{app_id_from_name, Action, Gateway, GatewayConfig, NodeStatus};
use crate::logger::Category;
use crate::wire::{Direction, Header, MsgType, HEADER_LEN};
use crate::{Millis, NodeId};

pub const KINDS: [&str; 7] = [
    "bit-flip",
    "byte-burst",
    "truncate",
    "extend",
    "header-field",
    "splice",
    "tag",
];

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MutationReport {
    pub total: u64,
    pub accepted: u64,
    pub to_gateway: u64,
    pub to_agent: u64,
    /// Gateway-bound mutations that produced a network anomaly entry.
    pub gateway_logged: u64,
    pub agent_dropped: u64,
    pub per_kind: BTreeMap<&'static str, (u64, u64)>,
    pub genuine_pool: usize,
}

struct Pair {
    gw: Gateway,
    agent: Agent,
    pool: Vec<(Direction, Vec<u8>)>,
    now: Millis,
}

impl Pair {
    fn send_up(&mut self, frame: Vec<u8>) {
        self.pool.push((Direction::ToGateway, frame.clone()));
        let out = self.gw.handle_frame(&frame, self.now);
        self.run(out.actions);
    }

    fn run(&mut self, actions: Vec<Action>) {
        for a in actions {
            if let Action::Send { frame, .. } = a {
                self.pool.push((Direction::ToAgent, frame.clone()));
                let out = self.agent.handle_frame(&frame, self.now);
                for r in out.replies {
                    self.send_up(r);
                }
            }
        }
    }
}

fn build_pair(seed: u64) -> Pair {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut gw_seed = [0u8; 32];
    rng.fill_bytes(&mut gw_seed);
    let mut agent_seed = [0u8; 32];
    rng.fill_bytes(&mut agent_seed);
    let cfg = GatewayConfig {
        arena_size_bytes: 1 << 20,
        ..GatewayConfig::default()
    };
    let node = NodeId::from_name("target").expect("short name");
    let mut p = Pair {
        gw: Gateway::new(cfg, gw_seed).expect("valid config"),
        agent: Agent::new(node, agent_seed),
        pool: Vec::new(),
        now: 0,
    };
    let hello = p.agent.hello(0);
    p.send_up(hello);
    let code = SimApp::build(1, 24, b"mutation");
    let actions =
        p.gw.deploy(node, app_id_from_name("app"), &code, 0)
            .expect("registered");
    p.run(actions);
    for round in 1..=12u64 {
        p.now = round * 100;
        if let Some(data) = p.agent.run_app_step(round, p.now) {
            p.send_up(data);
        }
        if let Ok(actions) = p.gw.attest_now(node, p.now) {
            p.run(actions);
        }
    }
    // A renewal mid-pool so frames from two epochs are present.
    p.now = 2_000;
    let actions = p.gw.force_update(node, p.now).expect("deployed");
    p.run(actions);
    // Frames that were sent but never delivered.
    for round in 20..26u64 {
        p.now = round * 100;
        if let Some(data) = p.agent.run_app_step(round, p.now) {
            p.pool.push((Direction::ToGateway, data));
        }
    }
    assert_eq!(p.gw.node(&node).map(|r| r.status()), Some(NodeStatus::Active));
    p
}

fn mutate(rng: &mut ChaCha20Rng, kind: &str, frame: &[u8], other: &[u8]) -> Vec<u8> {
    let mut b = frame.to_vec();
    match kind {
        "bit-flip" => {
            let i = rng.gen_range(0..b.len());
            b[i] ^= 1 << rng.gen_range(0..8);
        }
        "byte-burst" => {
            let n = rng.gen_range(1..=8).min(b.len());
            for _ in 0..n {
                let i = rng.gen_range(0..b.len());
                b[i] = rng.gen();
            }
        }
        "truncate" => b.truncate(rng.gen_range(0..b.len())),
        "extend" => {
            let extra = rng.gen_range(1..=32);
            for _ in 0..extra {
                b.push(rng.gen());
            }
            if rng.gen_bool(0.5) && b.len() >= HEADER_LEN {
                if let Ok(mut h) = Header::decode(&b[..HEADER_LEN]) {
                    h.body_len += extra as u32;
                    b[..HEADER_LEN].copy_from_slice(&h.encode());
                }
            }
        }
        "header-field" => {
            if let Ok(mut h) = Header::decode(&b[..HEADER_LEN]) {
                match rng.gen_range(0..4) {
                    0 => h.seq = h.seq.wrapping_add(rng.gen_range(1..100)),
                    1 => h.epoch = h.epoch.wrapping_add(rng.gen_range(1..3)),
                    2 => {
                        let all = MsgType::ALL;
                        h.msg_type = all[rng.gen_range(0..all.len())];
                    }
                    _ => h.node_id.0[rng.gen_range(0..16)] ^= rng.gen_range(1..=255),
                }
                b[..HEADER_LEN].copy_from_slice(&h.encode());
            }
        }
        "splice" => {
            let cut = rng.gen_range(1..b.len().min(other.len()));
            b.truncate(cut);
            b.extend_from_slice(&other[cut..]);
        }
        _ => {
            let n = b.len();
            rng.fill_bytes(&mut b[n - 16..]);
        }
    }
    b
}

/// Delivers `n` random mutations of genuine frames, spread over
/// [`KINDS`], and counts how many the receiver accepted.
pub fn mutation_campaign(n: u64, seed: u64) -> MutationReport {
    let mut pair = build_pair(seed);
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x6d75_7461_7465);
    let genuine: HashSet<Vec<u8>> = pair.pool.iter().map(|(_, b)| b.clone()).collect();
    let pool = pair.pool.clone();
    let mut report = MutationReport {
        genuine_pool: pool.len(),
        ..Default::default()
    };
    let now = pair.now + 1;
    let mut i = 0u64;
    while report.total < n {
        let kind = KINDS[(i % KINDS.len() as u64) as usize];
        i += 1;
        let (dir, frame) = &pool[rng.gen_range(0..pool.len())];
        let (_, other) = &pool[rng.gen_range(0..pool.len())];
        let m = mutate(&mut rng, kind, frame, other);
        if genuine.contains(&m) {
            continue;
        }
        report.total += 1;
        let entry = report.per_kind.entry(kind).or_default();
        entry.0 += 1;
        let accepted = match dir {
            Direction::ToGateway => {
                report.to_gateway += 1;
                let before = pair.gw.log().count(Category::NetworkAnomaly);
                let out = pair.gw.handle_frame(&m, now);
                if pair.gw.log().count(Category::NetworkAnomaly) > before {
                    report.gateway_logged += 1;
                }
                out.accepted
            }
            Direction::ToAgent => {
                report.to_agent += 1;
                let before = pair.agent.stats().dropped;
                let out = pair.agent.handle_frame(&m, now);
                if pair.agent.stats().dropped > before {
                    report.agent_dropped += 1;
                }
                out.accepted
            }
        };
        if accepted {
            report.accepted += 1;
            entry.1 += 1;
        }
    }
    report
}
