//! Append-only, hash-chained event log.
//!
//! Each entry's chain value is `hash(previous chain || serialized entry)`,
//! starting from 32 zero bytes. On disk the log is a sequence of records
//! `len u32 BE | serialized entry | chain[32]`, with a `<log>.head`
//! sidecar holding the entry count and the last chain value so that
//! truncation at a record boundary is also detected.

use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::crypto::{self, AlgId, Digest, DIGEST_LEN};
use crate::Millis;

const MAX_DETAIL: usize = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum Category {
    MemIntegrity = 1,
    DataProvenance = 2,
    NodeLifecycle = 3,
    NetworkAnomaly = 4,
}

impl Category {
    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            1 => Some(Category::MemIntegrity),
            2 => Some(Category::DataProvenance),
            3 => Some(Category::NodeLifecycle),
            4 => Some(Category::NetworkAnomaly),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Category::MemIntegrity => "MemIntegrity",
            Category::DataProvenance => "DataProvenance",
            Category::NodeLifecycle => "NodeLifecycle",
            Category::NetworkAnomaly => "NetworkAnomaly",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        (1..=4)
            .filter_map(Category::from_byte)
            .find(|c| c.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown log category `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogEntry {
    pub index: u64,
    pub timestamp: Millis,
    pub category: Category,
    pub detail: String,
    pub chain: Digest,
}

impl LogEntry {
    fn serialize_body(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(21 + self.detail.len());
        out.extend_from_slice(&self.index.to_be_bytes());
        out.extend_from_slice(&self.timestamp.to_be_bytes());
        out.push(self.category as u8);
        out.extend_from_slice(&(self.detail.len() as u32).to_be_bytes());
        out.extend_from_slice(self.detail.as_bytes());
        out
    }

    fn parse_body(b: &[u8]) -> Option<(u64, Millis, Category, String)> {
        if b.len() < 21 {
            return None;
        }
        let index = u64::from_be_bytes(b[0..8].try_into().ok()?);
        let ts = u64::from_be_bytes(b[8..16].try_into().ok()?);
        let cat = Category::from_byte(b[16])?;
        let n = u32::from_be_bytes(b[17..21].try_into().ok()?) as usize;
        if b.len() != 21 + n {
            return None;
        }
        let detail = String::from_utf8(b[21..].to_vec()).ok()?;
        Some((index, ts, cat, detail))
    }

    pub fn to_record(&self) -> Vec<u8> {
        let body = self.serialize_body();
        let mut out = Vec::with_capacity(4 + body.len() + DIGEST_LEN);
        out.extend_from_slice(&(body.len() as u32).to_be_bytes());
        out.extend_from_slice(&body);
        out.extend_from_slice(&self.chain.0);
        out
    }
}

impl fmt::Display for LogEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:>6} {:>10}ms {:<14} {} [{}]",
            self.index,
            self.timestamp,
            self.category,
            self.detail,
            &self.chain.to_string()[..16]
        )
    }
}

fn link(prev: &Digest, body: &[u8]) -> Digest {
    let mut msg = Vec::with_capacity(DIGEST_LEN + body.len());
    msg.extend_from_slice(&prev.0);
    msg.extend_from_slice(body);
    crypto::hash(AlgId::Xoodyak, &msg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChainStatus {
    Ok,
    BrokenAt(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LogHead {
    pub count: u64,
    pub head: Digest,
}

/// Recomputes every chain value. A missing tail is detected when `head`
/// claims more entries than are present.
pub fn verify_log_chain(entries: &[LogEntry], head: Option<&LogHead>) -> ChainStatus {
    let mut prev = Digest::default();
    for (i, e) in entries.iter().enumerate() {
        let i = i as u64;
        if e.index != i {
            return ChainStatus::BrokenAt(i);
        }
        let expected = link(&prev, &e.serialize_body());
        if expected != e.chain {
            return ChainStatus::BrokenAt(i);
        }
        prev = expected;
    }
    let n = entries.len() as u64;
    match head {
        Some(h) if h.count > n => ChainStatus::BrokenAt(n),
        Some(h) if h.count < n => ChainStatus::BrokenAt(h.count),
        Some(h) if h.head != prev => ChainStatus::BrokenAt(n.saturating_sub(1)),
        _ => ChainStatus::Ok,
    }
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("log io error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

fn head_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".head");
    PathBuf::from(p)
}

/// Result of reading a log file. `damaged_at` is the index of the first
/// record that could not be parsed.
#[derive(Debug, Clone)]
pub struct LoadedLog {
    pub entries: Vec<LogEntry>,
    pub head: Option<LogHead>,
    pub damaged_at: Option<u64>,
}

impl LoadedLog {
    pub fn verify(&self) -> ChainStatus {
        match verify_log_chain(&self.entries, self.head.as_ref()) {
            ChainStatus::BrokenAt(i) => ChainStatus::BrokenAt(i),
            ChainStatus::Ok => match self.damaged_at {
                Some(i) => ChainStatus::BrokenAt(i),
                None => ChainStatus::Ok,
            },
        }
    }
}

pub fn parse_records(bytes: &[u8]) -> (Vec<LogEntry>, Option<u64>) {
    let mut entries = Vec::new();
    let mut rest = bytes;
    while !rest.is_empty() {
        let idx = entries.len() as u64;
        let parsed = (|| {
            let n = u32::from_be_bytes(rest.get(..4)?.try_into().ok()?) as usize;
            if n > MAX_DETAIL + 21 {
                return None;
            }
            let body = rest.get(4..4 + n)?;
            let chain: [u8; DIGEST_LEN] = rest.get(4 + n..4 + n + DIGEST_LEN)?.try_into().ok()?;
            let (index, timestamp, category, detail) = LogEntry::parse_body(body)?;
            Some((
                LogEntry {
                    index,
                    timestamp,
                    category,
                    detail,
                    chain: Digest(chain),
                },
                4 + n + DIGEST_LEN,
            ))
        })();
        match parsed {
            Some((e, used)) => {
                entries.push(e);
                rest = &rest[used..];
            }
            None => return (entries, Some(idx)),
        }
    }
    (entries, None)
}

fn parse_head(text: &str) -> Option<LogHead> {
    let mut it = text.split_whitespace();
    let count = it.next()?.parse().ok()?;
    let head: [u8; DIGEST_LEN] = hex::decode(it.next()?).ok()?.try_into().ok()?;
    Some(LogHead {
        count,
        head: Digest(head),
    })
}

pub fn load_log(path: &Path) -> Result<LoadedLog, LogError> {
    let bytes = fs::read(path).map_err(|source| LogError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let (entries, damaged_at) = parse_records(&bytes);
    let head = fs::read_to_string(head_path(path))
        .ok()
        .and_then(|t| parse_head(&t));
    Ok(LoadedLog {
        entries,
        head,
        damaged_at,
    })
}

/// `logs verify`: loads and checks a log file.
pub fn verify_log_file(path: &Path) -> Result<ChainStatus, LogError> {
    Ok(load_log(path)?.verify())
}

/// Text rendering for operators, one entry per line.
pub fn export_text(entries: &[LogEntry]) -> String {
    let mut out = String::new();
    for e in entries {
        out.push_str(&e.to_string());
        out.push('\n');
    }
    out
}

struct FileSink {
    path: PathBuf,
    file: File,
}

/// In-memory log with an optional append-only file mirror.
pub struct Logger {
    entries: Vec<LogEntry>,
    head: Digest,
    sink: Option<FileSink>,
}

impl Default for Logger {
    fn default() -> Self {
        Self::new()
    }
}

impl fmt::Debug for Logger {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Logger")
            .field("entries", &self.entries.len())
            .field("head", &self.head)
            .finish()
    }
}

impl Logger {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
            head: Digest::default(),
            sink: None,
        }
    }

    /// Creates (truncating) a log file at `path`.
    pub fn create(path: &Path) -> Result<Self, LogError> {
        let io = |source| LogError::Io {
            path: path.to_path_buf(),
            source,
        };
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(path)
            .map_err(io)?;
        let mut l = Self::new();
        l.sink = Some(FileSink {
            path: path.to_path_buf(),
            file,
        });
        l.write_head().map_err(io)?;
        Ok(l)
    }

    fn write_head(&self) -> io::Result<()> {
        if let Some(s) = &self.sink {
            fs::write(
                head_path(&s.path),
                format!("{} {}\n", self.entries.len(), self.head),
            )?;
        }
        Ok(())
    }

    pub fn log_append(&mut self, now: Millis, category: Category, detail: impl Into<String>) -> &LogEntry {
        let mut detail: String = detail.into();
        if detail.len() > MAX_DETAIL {
            let mut cut = MAX_DETAIL;
            while !detail.is_char_boundary(cut) {
                cut -= 1;
            }
            detail.truncate(cut);
        }
        let mut e = LogEntry {
            index: self.entries.len() as u64,
            timestamp: now,
            category,
            detail,
            chain: Digest::default(),
        };
        e.chain = link(&self.head, &e.serialize_body());
        self.head = e.chain;
        if let Some(s) = self.sink.as_mut() {
            // The in-memory chain stays authoritative if the disk fails.
            let _ = s.file.write_all(&e.to_record());
        }
        self.entries.push(e);
        let _ = self.write_head();
        self.entries.last().unwrap()
    }

    pub fn entries(&self) -> &[LogEntry] {
        &self.entries
    }

    pub fn head(&self) -> LogHead {
        LogHead {
            count: self.entries.len() as u64,
            head: self.head,
        }
    }

    pub fn count(&self, category: Category) -> usize {
        self.entries.iter().filter(|e| e.category == category).count()
    }

    pub fn verify(&self) -> ChainStatus {
        verify_log_chain(&self.entries, Some(&self.head()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.entries.iter().flat_map(|e| e.to_record()).collect()
    }

    /// Writes the full log and its head sidecar to `path`.
    pub fn save(&self, path: &Path) -> Result<(), LogError> {
        let io = |source| LogError::Io {
            path: path.to_path_buf(),
            source,
        };
        fs::write(path, self.to_bytes()).map_err(io)?;
        let h = self.head();
        fs::write(head_path(path), format!("{} {}\n", h.count, h.head)).map_err(io)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(n: usize) -> Logger {
        let mut l = Logger::new();
        for i in 0..n {
            let cat = Category::from_byte((i % 4) as u8 + 1).unwrap();
            l.log_append(i as u64 * 10, cat, format!("event number {i}"));
        }
        l
    }

    #[test]
    fn untouched_log_verifies() {
        assert_eq!(sample(50).verify(), ChainStatus::Ok);
        assert_eq!(sample(0).verify(), ChainStatus::Ok);
    }

    #[test]
    fn edit_detail() {
        let l = sample(50);
        let mut e = l.entries().to_vec();
        e[17].detail.push('!');
        assert_eq!(verify_log_chain(&e, Some(&l.head())), ChainStatus::BrokenAt(17));
    }

    #[test]
    fn delete_last_entry() {
        let l = sample(50);
        let e = &l.entries()[..49];
        assert_eq!(verify_log_chain(e, Some(&l.head())), ChainStatus::BrokenAt(49));
        assert_eq!(verify_log_chain(e, None), ChainStatus::Ok);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gw.log");
        let mut l = Logger::create(&path).unwrap();
        for i in 0..5 {
            l.log_append(i, Category::NodeLifecycle, "x");
        }
        let loaded = load_log(&path).unwrap();
        assert_eq!(loaded.entries, l.entries());
        assert_eq!(loaded.head, Some(l.head()));
        assert_eq!(verify_log_file(&path).unwrap(), ChainStatus::Ok);
        assert!(export_text(&loaded.entries).lines().count() == 5);
    }

    #[test]
    fn category_names() {
        for b in 1..=4 {
            let c = Category::from_byte(b).unwrap();
            assert_eq!(c.name().parse::<Category>().unwrap(), c);
        }
        assert!(Category::from_byte(5).is_none());
    }

    proptest! {
        #[test]
        fn single_byte_edit_is_located(entry in 0usize..50, pos in any::<usize>(), xor in 1u8..=255) {
            let l = sample(50);
            let records: Vec<Vec<u8>> = l.entries().iter().map(|e| e.to_record()).collect();
            let start: usize = records[..entry].iter().map(Vec::len).sum();
            let mut bytes = l.to_bytes();
            bytes[start + pos % records[entry].len()] ^= xor;
            let (entries, damaged) = parse_records(&bytes);
            let loaded = LoadedLog { entries, head: Some(l.head()), damaged_at: damaged };
            prop_assert_eq!(loaded.verify(), ChainStatus::BrokenAt(entry as u64));
        }

        #[test]
        fn truncation_is_located(cut in 0usize..10_000) {
            let l = sample(50);
            let bytes = l.to_bytes();
            let cut = cut % bytes.len();
            let mut boundary = 0;
            let mut idx = 0u64;
            for e in l.entries() {
                let next = boundary + e.to_record().len();
                if next > cut {
                    break;
                }
                boundary = next;
                idx += 1;
            }
            let (entries, damaged) = parse_records(&bytes[..cut]);
            let loaded = LoadedLog { entries, head: Some(l.head()), damaged_at: damaged };
            prop_assert_eq!(loaded.verify(), ChainStatus::BrokenAt(idx));
        }
    }
}
