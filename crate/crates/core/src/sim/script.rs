//! Scenario script format.
//!
//! ```text
//! # comment
//! set attest_interval_ms 2000
//! 0      n1 join
//! 500    gateway deploy * sensor period=1 len=32
//! 4000   adversary corrupt dir=up type=DATA offset=40 xor=0x01 count=1
//! 6000   n1 tamper-code 3 0x01
//! 20000  end
//! expect verdict_fail n1 == 1
//! expect adversarial_accepted == 0
//! ```

use std::fmt;
use std::str::FromStr;

use crate::wire::{Direction, MsgType};
use crate::{Millis, NodeId};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptError {
    pub line: usize,
    pub msg: String,
}

impl fmt::Display for ScriptError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.msg)
    }
}

impl std::error::Error for ScriptError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    All,
    Node(NodeId),
}

/// Which frames an adversary rule or replay applies to.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Filter {
    pub dir: Option<Direction>,
    pub node: Option<NodeId>,
    pub msg_type: Option<MsgType>,
}

impl Filter {
    pub fn matches(&self, dir: Direction, node: NodeId, ty: Option<MsgType>) -> bool {
        self.dir.is_none_or(|d| d == dir)
            && self.node.is_none_or(|n| n == node)
            && self.msg_type.is_none_or(|t| Some(t) == ty)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RuleAction {
    Drop,
    Corrupt { offset: usize, xor: u8 },
    Duplicate,
    Delay { ms: Millis },
    Mitm { offset: usize, value: u8 },
}

impl RuleAction {
    pub fn name(&self) -> &'static str {
        match self {
            RuleAction::Drop => "drop",
            RuleAction::Corrupt { .. } => "corrupt",
            RuleAction::Duplicate => "duplicate",
            RuleAction::Delay { .. } => "delay",
            RuleAction::Mitm { .. } => "mitm",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rule {
    pub filter: Filter,
    pub action: RuleAction,
    /// Remaining applications; `None` means unlimited.
    pub remaining: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReplaySel {
    Index(usize),
    Last(Filter),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InjectBody {
    Hex(Vec<u8>),
    Random {
        len: usize,
        msg_type: Option<MsgType>,
    },
    /// A HELLO sealed under the public bootstrap key with a fresh identity.
    ForgedHello,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Command {
    Join(NodeId),
    Silence(NodeId),
    Unsilence(NodeId),
    TamperCode {
        node: NodeId,
        offset: usize,
        xor: u8,
    },
    TamperImage {
        node: NodeId,
        offset: usize,
        xor: u8,
    },
    Deploy {
        target: Target,
        app: String,
        period: u32,
        len: u32,
    },
    Attest(Target),
    Audit,
    Renew(NodeId),
    ForceUpdate(NodeId),
    Rule(Rule),
    ClearRules,
    Replay(ReplaySel),
    Inject {
        dir: Direction,
        node: NodeId,
        body: InjectBody,
    },
    Poke {
        count: usize,
    },
    PokeCells {
        count: usize,
    },
    End,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptEvent {
    pub time: Millis,
    pub line: usize,
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Eq,
    Ne,
    Ge,
    Le,
    Gt,
    Lt,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
            CmpOp::Ge => ">=",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Lt => "<",
        }
    }

    /// Numeric when both sides parse as integers, string equality otherwise.
    pub fn eval(self, actual: &str, expected: &str) -> bool {
        if let (Ok(a), Ok(e)) = (actual.parse::<i128>(), expected.parse::<i128>()) {
            return match self {
                CmpOp::Eq => a == e,
                CmpOp::Ne => a != e,
                CmpOp::Ge => a >= e,
                CmpOp::Le => a <= e,
                CmpOp::Gt => a > e,
                CmpOp::Lt => a < e,
            };
        }
        match self {
            CmpOp::Eq => actual == expected,
            CmpOp::Ne => actual != expected,
            _ => false,
        }
    }
}

impl FromStr for CmpOp {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "==" => CmpOp::Eq,
            "!=" => CmpOp::Ne,
            ">=" => CmpOp::Ge,
            "<=" => CmpOp::Le,
            ">" => CmpOp::Gt,
            "<" => CmpOp::Lt,
            other => return Err(format!("unknown comparison `{other}`")),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Expect {
    pub line: usize,
    pub metric: String,
    pub node: Option<NodeId>,
    pub op: CmpOp,
    pub value: String,
}

impl fmt::Display for Expect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.metric)?;
        if let Some(n) = self.node {
            write!(f, " {n}")?;
        }
        write!(f, " {} {}", self.op.symbol(), self.value)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Script {
    pub settings: Vec<(String, String)>,
    pub events: Vec<ScriptEvent>,
    pub expects: Vec<Expect>,
}

impl Script {
    /// Time of the `end` event, or of the last event.
    pub fn end_time(&self) -> Millis {
        self.events
            .iter()
            .find(|e| e.command == Command::End)
            .or(self.events.last())
            .map_or(0, |e| e.time)
    }
}

pub fn parse_num<T: TryFrom<u64>>(s: &str) -> Result<T, String> {
    let s = s.replace('_', "");
    let v = match s.strip_prefix("0x") {
        Some(h) => u64::from_str_radix(h, 16),
        None => s.parse(),
    }
    .map_err(|_| format!("bad number `{s}`"))?;
    T::try_from(v).map_err(|_| format!("number `{s}` out of range"))
}

fn parse_dir(s: &str) -> Result<Option<Direction>, String> {
    match s {
        "up" | "to-gateway" => Ok(Some(Direction::ToGateway)),
        "down" | "to-agent" => Ok(Some(Direction::ToAgent)),
        "any" => Ok(None),
        other => Err(format!("unknown direction `{other}`")),
    }
}

/// Splits `key=value` arguments; bare words go to `positional`.
struct Args<'a> {
    positional: Vec<&'a str>,
    named: Vec<(&'a str, &'a str)>,
}

impl<'a> Args<'a> {
    fn new(words: &[&'a str]) -> Self {
        let mut positional = Vec::new();
        let mut named = Vec::new();
        for w in words {
            match w.split_once('=') {
                Some((k, v)) => named.push((k, v)),
                None => positional.push(*w),
            }
        }
        Self { positional, named }
    }

    fn get(&self, key: &str) -> Option<&'a str> {
        self.named.iter().rev().find(|(k, _)| *k == key).map(|(_, v)| *v)
    }

    fn num<T: TryFrom<u64>>(&self, key: &str, default: T) -> Result<T, String> {
        self.get(key).map_or(Ok(default), parse_num)
    }

    fn filter(&self) -> Result<Filter, String> {
        Ok(Filter {
            dir: self.get("dir").map(parse_dir).transpose()?.flatten(),
            node: self.get("node").map(str::parse).transpose()?,
            msg_type: self.get("type").map(str::parse).transpose()?,
        })
    }

    fn check_known(&self, allowed: &[&str]) -> Result<(), String> {
        for (k, _) in &self.named {
            if !allowed.contains(k) {
                return Err(format!("unknown argument `{k}`"));
            }
        }
        Ok(())
    }
}

const FILTER_KEYS: [&str; 4] = ["dir", "node", "type", "count"];

fn parse_adversary(words: &[&str]) -> Result<Command, String> {
    let (&verb, rest) = words.split_first().ok_or("adversary needs an action")?;
    let args = Args::new(rest);
    let rule = |action: RuleAction, extra: &[&str]| -> Result<Command, String> {
        let mut allowed = FILTER_KEYS.to_vec();
        allowed.extend_from_slice(extra);
        args.check_known(&allowed)?;
        Ok(Command::Rule(Rule {
            filter: args.filter()?,
            action,
            remaining: args.get("count").map(parse_num).transpose()?,
        }))
    };
    match verb {
        "drop" => rule(RuleAction::Drop, &[]),
        "duplicate" => rule(RuleAction::Duplicate, &[]),
        "corrupt" => rule(
            RuleAction::Corrupt {
                offset: args.num("offset", 0)?,
                xor: args.num("xor", 1)?,
            },
            &["offset", "xor"],
        ),
        "delay" => rule(
            RuleAction::Delay {
                ms: args.num("ms", 500)?,
            },
            &["ms"],
        ),
        "mitm" => rule(
            RuleAction::Mitm {
                offset: args.num("offset", 0)?,
                value: args.num("value", 0)?,
            },
            &["offset", "value"],
        ),
        "clear" => Ok(Command::ClearRules),
        "replay" => {
            if let Some(i) = args.get("index") {
                args.check_known(&["index"])?;
                return Ok(Command::Replay(ReplaySel::Index(parse_num(i)?)));
            }
            args.check_known(&FILTER_KEYS[..3])?;
            let mut filter = args.filter()?;
            if let Some(spec) = args.positional.first() {
                let ty = spec
                    .strip_prefix("last:")
                    .ok_or("replay takes `last:TYPE` or `index=N`")?;
                filter.msg_type = Some(ty.parse()?);
            }
            Ok(Command::Replay(ReplaySel::Last(filter)))
        }
        "inject" => {
            args.check_known(&["dir", "node", "hex", "len", "type"])?;
            let node: NodeId = args.get("node").ok_or("inject needs node=")?.parse()?;
            let dir = parse_dir(args.get("dir").unwrap_or("up"))?.ok_or("inject needs dir=up or dir=down")?;
            let body = match args.positional.first().copied() {
                Some("forged-hello") => InjectBody::ForgedHello,
                Some("random") | None if args.get("hex").is_none() => InjectBody::Random {
                    len: args.num("len", 64)?,
                    msg_type: args.get("type").map(str::parse).transpose()?,
                },
                _ => InjectBody::Hex(
                    hex::decode(
                        args.get("hex")
                            .ok_or("inject needs hex=, random or forged-hello")?,
                    )
                    .map_err(|e| format!("bad hex: {e}"))?,
                ),
            };
            Ok(Command::Inject { dir, node, body })
        }
        other => Err(format!("unknown adversary action `{other}`")),
    }
}

fn parse_target(s: Option<&&str>) -> Result<Target, String> {
    match s {
        None | Some(&"*") => Ok(Target::All),
        Some(n) => Ok(Target::Node(n.parse()?)),
    }
}

fn parse_command(actor: &str, words: &[&str]) -> Result<Command, String> {
    let node = |w: &str| -> Result<NodeId, String> { w.parse() };
    let tamper = |n: NodeId| -> Result<(NodeId, usize, u8), String> {
        let off = words.get(1).map_or(Ok(0), |w| parse_num(w))?;
        let xor = words.get(2).map_or(Ok(1), |w| parse_num(w))?;
        Ok((n, off, xor))
    };
    match actor {
        "end" => Ok(Command::End),
        "gateway" => {
            let verb = *words.first().ok_or("gateway needs an action")?;
            match verb {
                "deploy" => {
                    let args = Args::new(&words[1..]);
                    args.check_known(&["period", "len"])?;
                    Ok(Command::Deploy {
                        target: parse_target(args.positional.first())?,
                        app: args.positional.get(1).unwrap_or(&"app").to_string(),
                        period: args.num("period", 1)?,
                        len: args.num("len", 32)?,
                    })
                }
                "attest" => Ok(Command::Attest(parse_target(words.get(1))?)),
                "audit" => Ok(Command::Audit),
                "renew" => Ok(Command::Renew(node(words.get(1).ok_or("renew needs a node")?)?)),
                "force-update" => Ok(Command::ForceUpdate(node(
                    words.get(1).ok_or("force-update needs a node")?,
                )?)),
                other => Err(format!("unknown gateway action `{other}`")),
            }
        }
        "adversary" => parse_adversary(words),
        "memory" => {
            let verb = *words.first().ok_or("memory needs an action")?;
            let count = words.get(1).map_or(Ok(1), |w| parse_num(w))?;
            match verb {
                "poke" => Ok(Command::Poke { count }),
                "poke-cells" => Ok(Command::PokeCells { count }),
                other => Err(format!("unknown memory action `{other}`")),
            }
        }
        name => {
            let n = node(name)?;
            match *words.first().ok_or("node needs an action")? {
                "join" => Ok(Command::Join(n)),
                "silence" => Ok(Command::Silence(n)),
                "unsilence" => Ok(Command::Unsilence(n)),
                "tamper-code" => {
                    let (node, offset, xor) = tamper(n)?;
                    Ok(Command::TamperCode { node, offset, xor })
                }
                "tamper-image" => {
                    let (node, offset, xor) = tamper(n)?;
                    Ok(Command::TamperImage { node, offset, xor })
                }
                other => Err(format!("unknown node action `{other}`")),
            }
        }
    }
}

pub fn parse_script(text: &str) -> Result<Script, ScriptError> {
    let mut script = Script::default();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let err = |msg: String| ScriptError { line, msg };
        let content = raw.split('#').next().unwrap_or("").trim();
        let words: Vec<&str> = content.split_whitespace().collect();
        let Some(&first) = words.first() else { continue };
        match first {
            "set" => {
                if words.len() != 3 {
                    return Err(err("expected `set <key> <value>`".into()));
                }
                script.settings.push((words[1].into(), words[2].into()));
            }
            "expect" => {
                let (metric, node, op, value) = match words.len() {
                    4 => (words[1], None, words[2], words[3]),
                    5 => (words[1], Some(words[2].parse().map_err(err)?), words[3], words[4]),
                    _ => return Err(err("expected `expect <metric> [node] <op> <value>`".into())),
                };
                script.expects.push(Expect {
                    line,
                    metric: metric.into(),
                    node,
                    op: op.parse().map_err(err)?,
                    value: value.into(),
                });
            }
            t => {
                let time: Millis = parse_num(t).map_err(err)?;
                let actor = words.get(1).ok_or_else(|| err("missing actor".into()))?;
                let command = parse_command(actor, &words[2..]).map_err(err)?;
                if script.events.last().is_some_and(|e| e.time > time) {
                    return Err(err("events must be in time order".into()));
                }
                script.events.push(ScriptEvent { time, line, command });
            }
        }
    }
    Ok(script)
}
