//! TCP transport for running the gateway and agents as processes.
//!
//! Frames are self-delimiting through their header. A connection that
//! starts with `CTL1` instead carries one operator command line:
//! `CTL1 deploy <node> <app> <code-hex>` or `CTL1 attest <node>`, answered
//! by one line starting with `OK` or `ERR`.

use std::collections::BTreeMap;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::sync::mpsc::{self, RecvTimeoutError, Sender};
use std::thread;
use std::time::{Duration, Instant};

use rand::rngs::OsRng;
use rand::RngCore;

use crate::agent::{Agent, AgentConfig};
use crate::attest::Verdict;
use crate::gateway::{app_id_from_name, Action, Gateway, GatewayConfig};
use crate::keymgr;
use crate::wire::{frame_len_from_header, HEADER_LEN};
use crate::{Millis, NodeId};

pub const CONTROL_MAGIC: &[u8; 4] = b"CTL1";
const POLL: Duration = Duration::from_millis(100);
const REHELLO_MS: Millis = 5_000;
const APP_STEP_MS: Millis = 1_000;

/// Reads one frame. `Ok(None)` on a clean end of stream.
pub fn read_frame(r: &mut impl Read) -> io::Result<Option<Vec<u8>>> {
    let mut header = vec![0u8; HEADER_LEN];
    match r.read_exact(&mut header[..1]) {
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        other => other?,
    }
    r.read_exact(&mut header[1..])?;
    let len = frame_len_from_header(&header)
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))?;
    header.resize(len, 0);
    r.read_exact(&mut header[HEADER_LEN..])?;
    Ok(Some(header))
}

fn random_seed() -> [u8; 32] {
    let mut s = [0u8; 32];
    OsRng.fill_bytes(&mut s);
    s
}

enum Inbound {
    Opened { conn: u64, writer: TcpStream },
    Frame { conn: u64, bytes: Vec<u8> },
    Control { line: String, stream: TcpStream },
    Closed { conn: u64 },
}

fn serve_connection(conn: u64, mut stream: TcpStream, tx: Sender<Inbound>) {
    let mut magic = [0u8; 4];
    if stream.read_exact(&mut magic).is_err() {
        return;
    }
    if &magic == CONTROL_MAGIC {
        let mut line = String::new();
        let Ok(reply) = stream.try_clone() else { return };
        if BufReader::new(&mut stream).read_line(&mut line).is_ok() {
            let _ = tx.send(Inbound::Control {
                line: line.trim().to_string(),
                stream: reply,
            });
        }
        let _ = tx.send(Inbound::Closed { conn });
        return;
    }
    let mut frames = (&magic[..]).chain(stream);
    while let Ok(Some(bytes)) = read_frame(&mut frames) {
        if tx.send(Inbound::Frame { conn, bytes }).is_err() {
            break;
        }
    }
    let _ = tx.send(Inbound::Closed { conn });
}

struct Waiter {
    node: NodeId,
    stream: TcpStream,
    deadline: Instant,
}

/// Runs the gateway until the listener fails.
pub fn run_gateway(config: GatewayConfig) -> Result<(), String> {
    let listener =
        TcpListener::bind(&config.listen_addr).map_err(|e| format!("{}: {e}", config.listen_addr))?;
    eprintln!("gateway listening on {}", config.listen_addr);
    let verdict_wait =
        Duration::from_millis(config.attest_timeout_ms * (u64::from(config.attest_retries) + 3) + 1_000);
    let keystore = config.keystore_path.clone();
    let secret = std::env::var("NODEGUARD_DEVICE_SECRET").ok();
    let mut gw = Gateway::new(config, random_seed()).map_err(|e| e.to_string())?;
    let (tx, rx) = mpsc::channel();
    {
        let tx = tx.clone();
        thread::spawn(move || {
            for (conn, stream) in (1u64..).zip(listener.incoming()) {
                let Ok(stream) = stream else { continue };
                let Ok(writer) = stream.try_clone() else { continue };
                if tx.send(Inbound::Opened { conn, writer }).is_err() {
                    break;
                }
                let tx = tx.clone();
                thread::spawn(move || serve_connection(conn, stream, tx));
            }
        });
    }
    let start = Instant::now();
    let mut conns: BTreeMap<u64, TcpStream> = BTreeMap::new();
    let mut routes: BTreeMap<NodeId, u64> = BTreeMap::new();
    let mut waiters: Vec<Waiter> = Vec::new();
    drop(tx);
    loop {
        let now = start.elapsed().as_millis() as Millis;
        let mut actions = Vec::new();
        match rx.recv_timeout(POLL) {
            Ok(Inbound::Opened { conn, writer }) => {
                conns.insert(conn, writer);
            }
            Ok(Inbound::Frame { conn, bytes }) => {
                if let Ok(h) = crate::wire::Header::decode(&bytes[..HEADER_LEN]) {
                    routes.insert(h.node_id, conn);
                }
                actions.extend(gw.handle_frame(&bytes, now).actions);
            }
            Ok(Inbound::Control { line, mut stream }) => match control(&mut gw, &line, now) {
                Ok((node, a)) => {
                    actions.extend(a);
                    waiters.push(Waiter {
                        node,
                        stream,
                        deadline: Instant::now() + verdict_wait,
                    });
                }
                Err(e) => {
                    let _ = writeln!(stream, "ERR {e}");
                }
            },
            Ok(Inbound::Closed { conn }) => {
                conns.remove(&conn);
            }
            Err(RecvTimeoutError::Timeout) => {}
            Err(RecvTimeoutError::Disconnected) => return Err("listener stopped".into()),
        }
        actions.extend(gw.tick(now));
        let keys_changed = actions.iter().any(|a| {
            matches!(
                a,
                Action::Registered { .. } | Action::Renewed { .. } | Action::NodeLost { .. }
            )
        });
        for a in actions {
            match a {
                Action::Send { node, frame } => {
                    let Some(conn) = routes.get(&node).copied() else {
                        continue;
                    };
                    if let Some(s) = conns.get_mut(&conn) {
                        if s.write_all(&frame).is_err() {
                            conns.remove(&conn);
                        }
                    }
                }
                Action::Verdict { node, verdict } => {
                    resolve(
                        &mut waiters,
                        node,
                        &format!("OK verdict={}", verdict_name(verdict)),
                    );
                }
                Action::NodeLost { node, cells_dropped } => {
                    resolve(
                        &mut waiters,
                        node,
                        &format!("OK verdict=lost cells_dropped={cells_dropped}"),
                    );
                }
                _ => {}
            }
        }
        let t = Instant::now();
        waiters.retain_mut(|w| {
            if t < w.deadline {
                return true;
            }
            let _ = writeln!(w.stream, "ERR timeout waiting for {}", w.node);
            false
        });
        if let (true, Some(path), Some(secret)) = (keys_changed, &keystore, &secret) {
            let blob = keymgr::seal_keystore(
                &gw.keystore(*b"gateway\0\0\0\0\0\0\0\0\0"),
                secret.as_bytes(),
                &mut OsRng,
            );
            let _ = std::fs::write(path, blob);
        }
    }
}

fn verdict_name(v: Verdict) -> &'static str {
    match v {
        Verdict::Ok => "ok",
        Verdict::Fail => "fail",
        Verdict::Lost => "lost",
    }
}

fn resolve(waiters: &mut Vec<Waiter>, node: NodeId, msg: &str) {
    waiters.retain_mut(|w| {
        if w.node != node {
            return true;
        }
        let _ = writeln!(w.stream, "{msg}");
        false
    });
}

fn control(gw: &mut Gateway, line: &str, now: Millis) -> Result<(NodeId, Vec<Action>), String> {
    let words: Vec<&str> = line.split_whitespace().collect();
    match words.as_slice() {
        ["deploy", node, app, code_hex] => {
            let node: NodeId = node.parse()?;
            let code = hex::decode(code_hex).map_err(|e| format!("bad code hex: {e}"))?;
            let actions = gw
                .deploy(node, app_id_from_name(app), &code, now)
                .map_err(|e| e.to_string())?;
            Ok((node, actions))
        }
        ["attest", node] => {
            let node: NodeId = node.parse()?;
            let actions = gw.attest_now(node, now).map_err(|e| e.to_string())?;
            Ok((node, actions))
        }
        _ => Err(format!("unknown command `{line}`")),
    }
}

/// Sends one operator command to a running gateway and returns its
/// answer line.
pub fn send_control(addr: &str, command: &str, timeout: Duration) -> Result<String, String> {
    let mut stream = TcpStream::connect(addr).map_err(|e| format!("{addr}: {e}"))?;
    stream
        .set_read_timeout(Some(timeout))
        .map_err(|e| e.to_string())?;
    stream
        .write_all(format!("CTL1 {command}\n").as_bytes())
        .map_err(|e| e.to_string())?;
    let mut line = String::new();
    BufReader::new(stream)
        .read_line(&mut line)
        .map_err(|e| format!("no answer from gateway: {e}"))?;
    Ok(line.trim().to_string())
}

fn load_agent(cfg: &AgentConfig) -> Result<Agent, String> {
    let Some(path) = &cfg.keystore_path else {
        return Ok(Agent::new(cfg.node_id, random_seed()));
    };
    if cfg.device_secret.is_empty() {
        return Err("keystore_path needs a device_secret".into());
    }
    if let Ok(blob) = std::fs::read(path) {
        let ks = keymgr::unseal_keystore(&blob, &cfg.device_secret)
            .map_err(|e| format!("{}: {e}", path.display()))?;
        return Agent::from_keystore(&ks, random_seed())
            .ok_or_else(|| format!("{}: no identity key", path.display()));
    }
    let agent = Agent::new(cfg.node_id, random_seed());
    save_identity(&agent, path, &cfg.device_secret)?;
    Ok(agent)
}

fn save_identity(agent: &Agent, path: &Path, secret: &[u8]) -> Result<(), String> {
    let mut ks = agent.keystore();
    ks.sessions.clear();
    let blob = keymgr::seal_keystore(&ks, secret, &mut OsRng);
    std::fs::write(path, blob).map_err(|e| format!("{}: {e}", path.display()))
}

/// Runs an agent, reconnecting and re-registering as needed.
pub fn run_agent(cfg: AgentConfig) -> Result<(), String> {
    let mut agent = load_agent(&cfg)?;
    let start = Instant::now();
    loop {
        let stream = match TcpStream::connect(&cfg.gateway_addr) {
            Ok(s) => s,
            Err(e) => {
                eprintln!("{}: {e}; retrying", cfg.gateway_addr);
                thread::sleep(Duration::from_secs(2));
                continue;
            }
        };
        eprintln!("agent {} connected to {}", cfg.node_id, cfg.gateway_addr);
        let mut writer = stream.try_clone().map_err(|e| e.to_string())?;
        let (tx, rx) = mpsc::channel::<Option<Vec<u8>>>();
        let mut reader = stream;
        thread::spawn(move || loop {
            match read_frame(&mut reader) {
                Ok(Some(f)) => {
                    if tx.send(Some(f)).is_err() {
                        break;
                    }
                }
                _ => {
                    let _ = tx.send(None);
                    break;
                }
            }
        });
        let mut last_hello: Option<Millis> = None;
        let mut shown = agent.events().len();
        let mut next_step = 0;
        loop {
            let now = start.elapsed().as_millis() as Millis;
            let mut out = Vec::new();
            if !agent.is_registered() && last_hello.is_none_or(|t| now >= t + REHELLO_MS) {
                out.push(agent.hello(now));
                last_hello = Some(now);
            }
            match rx.recv_timeout(POLL) {
                Ok(Some(frame)) => out.extend(agent.handle_frame(&frame, now).replies),
                Ok(None) | Err(RecvTimeoutError::Disconnected) => break,
                Err(RecvTimeoutError::Timeout) => {}
            }
            if now >= next_step * APP_STEP_MS {
                out.extend(agent.run_app_step(next_step, now));
                next_step += 1;
            }
            for f in out {
                if writer.write_all(&f).is_err() {
                    break;
                }
            }
            for (t, e) in &agent.events()[shown..] {
                eprintln!("[{t}] {e}");
            }
            shown = agent.events().len();
        }
        eprintln!("connection to gateway closed; reconnecting");
        thread::sleep(Duration::from_secs(1));
    }
}
