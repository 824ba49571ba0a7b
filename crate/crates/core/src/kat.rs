//! NIST LWC known-answer-test files: parsing, writing and verification.
//!
//! AEAD records carry `Count`, `Key`, `Nonce`, `PT`, `AD` and `CT`, where
//! `CT` is the ciphertext followed by the 16-byte tag. Hash records carry
//! `Count`, `Msg` and `MD`. Records are separated by blank lines.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::crypto::{self, AeadKey, AlgId, Nonce, Tag, TAG_LEN};

#[derive(Debug, Error)]
pub enum KatError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("cannot tell the algorithm of {0} from its name")]
    UnknownAlgorithm(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AeadVector {
    pub count: u64,
    pub key: Vec<u8>,
    pub nonce: Vec<u8>,
    pub pt: Vec<u8>,
    pub ad: Vec<u8>,
    pub ct: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HashVector {
    pub count: u64,
    pub msg: Vec<u8>,
    pub md: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum KatRecord {
    Aead(AeadVector),
    Hash(HashVector),
}

#[derive(Default)]
struct Fields {
    count: Option<u64>,
    key: Option<Vec<u8>>,
    nonce: Option<Vec<u8>>,
    pt: Option<Vec<u8>>,
    ad: Option<Vec<u8>>,
    ct: Option<Vec<u8>>,
    msg: Option<Vec<u8>>,
    md: Option<Vec<u8>>,
    first_line: usize,
}

impl Fields {
    fn is_empty(&self) -> bool {
        self.count.is_none()
    }

    fn finish(self) -> Result<KatRecord, KatError> {
        let line = self.first_line;
        let missing = |name: &str| KatError::Parse {
            line,
            msg: format!("record is missing `{name}`"),
        };
        let count = self.count.ok_or_else(|| missing("Count"))?;
        if self.md.is_some() || self.msg.is_some() {
            return Ok(KatRecord::Hash(HashVector {
                count,
                msg: self.msg.ok_or_else(|| missing("Msg"))?,
                md: self.md.ok_or_else(|| missing("MD"))?,
            }));
        }
        Ok(KatRecord::Aead(AeadVector {
            count,
            key: self.key.ok_or_else(|| missing("Key"))?,
            nonce: self.nonce.ok_or_else(|| missing("Nonce"))?,
            pt: self.pt.ok_or_else(|| missing("PT"))?,
            ad: self.ad.ok_or_else(|| missing("AD"))?,
            ct: self.ct.ok_or_else(|| missing("CT"))?,
        }))
    }
}

pub fn parse_kat(text: &str) -> Result<Vec<KatRecord>, KatError> {
    let mut records = Vec::new();
    let mut cur = Fields::default();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            if !cur.is_empty() {
                records.push(std::mem::take(&mut cur).finish()?);
            }
            continue;
        }
        let (name, value) = line.split_once('=').ok_or_else(|| KatError::Parse {
            line: line_no,
            msg: format!("expected `Name = value`, got `{line}`"),
        })?;
        let name = name.trim();
        let value = value.trim();
        let bytes = || {
            hex::decode(value).map_err(|e| KatError::Parse {
                line: line_no,
                msg: format!("bad hex in `{name}`: {e}"),
            })
        };
        match name {
            "Count" => {
                if !cur.is_empty() {
                    records.push(std::mem::take(&mut cur).finish()?);
                }
                cur.first_line = line_no;
                cur.count = Some(value.parse().map_err(|_| KatError::Parse {
                    line: line_no,
                    msg: format!("bad Count `{value}`"),
                })?);
            }
            "Key" => cur.key = Some(bytes()?),
            "Nonce" => cur.nonce = Some(bytes()?),
            "PT" => cur.pt = Some(bytes()?),
            "AD" => cur.ad = Some(bytes()?),
            "CT" => cur.ct = Some(bytes()?),
            "Msg" => cur.msg = Some(bytes()?),
            "MD" => cur.md = Some(bytes()?),
            other => {
                return Err(KatError::Parse {
                    line: line_no,
                    msg: format!("unknown field `{other}`"),
                })
            }
        }
        if cur.count.is_none() {
            return Err(KatError::Parse {
                line: line_no,
                msg: "field before `Count`".into(),
            });
        }
    }
    if !cur.is_empty() {
        records.push(cur.finish()?);
    }
    Ok(records)
}

/// Renders records in the NIST layout (uppercase hex, blank-line separated).
pub fn write_kat(records: &[KatRecord]) -> String {
    let mut out = String::new();
    for r in records {
        match r {
            KatRecord::Aead(v) => {
                let _ = writeln!(out, "Count = {}", v.count);
                let _ = writeln!(out, "Key = {}", hex::encode_upper(&v.key));
                let _ = writeln!(out, "Nonce = {}", hex::encode_upper(&v.nonce));
                let _ = writeln!(out, "PT = {}", hex::encode_upper(&v.pt));
                let _ = writeln!(out, "AD = {}", hex::encode_upper(&v.ad));
                let _ = writeln!(out, "CT = {}", hex::encode_upper(&v.ct));
            }
            KatRecord::Hash(v) => {
                let _ = writeln!(out, "Count = {}", v.count);
                let _ = writeln!(out, "Msg = {}", hex::encode_upper(&v.msg));
                let _ = writeln!(out, "MD = {}", hex::encode_upper(&v.md));
            }
        }
        out.push('\n');
    }
    out
}

/// Checks one record. Both directions are exercised for AEAD vectors.
pub fn check_record(alg: AlgId, record: &KatRecord) -> bool {
    match record {
        KatRecord::Hash(v) => crypto::hash(alg, &v.msg).0[..] == v.md[..],
        KatRecord::Aead(v) => {
            let (Some(key), Ok(nonce)) = (
                AeadKey::from_slice(&v.key),
                <[u8; 16]>::try_from(v.nonce.as_slice()),
            ) else {
                return false;
            };
            let nonce = Nonce(nonce);
            if v.ct.len() != v.pt.len() + TAG_LEN {
                return false;
            }
            let (ct, tag) = crypto::aead_encrypt(alg, &key, &nonce, &v.ad, &v.pt);
            if ct[..] != v.ct[..v.pt.len()] || tag.0[..] != v.ct[v.pt.len()..] {
                return false;
            }
            let mut expected_tag = Tag::default();
            expected_tag.0.copy_from_slice(&v.ct[v.pt.len()..]);
            matches!(
                crypto::aead_decrypt(alg, &key, &nonce, &v.ad, &v.ct[..v.pt.len()], &expected_tag),
                Ok(pt) if pt == v.pt
            )
        }
    }
}

#[derive(Debug, Clone)]
pub struct KatFileReport {
    pub path: PathBuf,
    pub alg: AlgId,
    pub total: usize,
    pub passed: usize,
    pub failed_counts: Vec<u64>,
}

impl KatFileReport {
    pub fn all_passed(&self) -> bool {
        self.total > 0 && self.passed == self.total
    }
}

/// Infers the algorithm from a file name containing `xoodyak` or `isap`.
pub fn alg_for_path(path: &Path) -> Option<AlgId> {
    let name = path.file_name()?.to_string_lossy().to_ascii_lowercase();
    if name.contains("xoodyak") {
        Some(AlgId::Xoodyak)
    } else if name.contains("isap") {
        Some(AlgId::Isap)
    } else {
        None
    }
}

pub fn run_kat_file(path: &Path) -> Result<KatFileReport, KatError> {
    let alg = alg_for_path(path).ok_or_else(|| KatError::UnknownAlgorithm(path.to_path_buf()))?;
    let text = fs::read_to_string(path).map_err(|source| KatError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let records = parse_kat(&text)?;
    let mut report = KatFileReport {
        path: path.to_path_buf(),
        alg,
        total: records.len(),
        passed: 0,
        failed_counts: Vec::new(),
    };
    for r in &records {
        if check_record(alg, r) {
            report.passed += 1;
        } else {
            let count = match r {
                KatRecord::Aead(v) => v.count,
                KatRecord::Hash(v) => v.count,
            };
            report.failed_counts.push(count);
        }
    }
    Ok(report)
}

/// Runs every `*.txt` KAT file in `dir`, in file-name order.
pub fn run_kat_dir(dir: &Path) -> Result<Vec<KatFileReport>, KatError> {
    let io = |source| KatError::Io {
        path: dir.to_path_buf(),
        source,
    };
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "txt"))
        .collect();
    paths.sort();
    paths.iter().map(|p| run_kat_file(p)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "Count = 1
Key = 000102030405060708090A0B0C0D0E0F
Nonce = 000102030405060708090A0B0C0D0E0F
PT =
AD =
CT = 4BF0E393144CB58069FC1FEBCAFCFB3C

Count = 2
Key = 000102030405060708090A0B0C0D0E0F
Nonce = 000102030405060708090A0B0C0D0E0F
PT = 000102030405060708090A0B0C
AD = 000102030405060708090A0B0C0D0E0F101112131415
CT = CFA1C6EFB6E4795450ABF50494C96372BF566DEC846DBAE29C36F4A9CF
";

    #[test]
    fn parses_and_checks_xoodyak_rows() {
        let recs = parse_kat(SAMPLE).unwrap();
        assert_eq!(recs.len(), 2);
        for r in &recs {
            assert!(check_record(AlgId::Xoodyak, r));
            assert!(!check_record(AlgId::Isap, r));
        }
    }

    #[test]
    fn write_then_parse() {
        let recs = parse_kat(SAMPLE).unwrap();
        assert_eq!(parse_kat(&write_kat(&recs)).unwrap(), recs);
    }

    #[test]
    fn hash_records() {
        let text =
            "Count = 1\nMsg = \nMD = EA152F2B47BCE24EFB66C479D4ADF17BD324D806E85FF75EE369EE50DC8F8BD1\n";
        let recs = parse_kat(text).unwrap();
        assert!(matches!(recs[0], KatRecord::Hash(_)));
        assert!(check_record(AlgId::Xoodyak, &recs[0]));
    }

    #[test]
    fn malformed_inputs() {
        assert!(parse_kat("Key = 00\n").is_err());
        assert!(parse_kat("Count = 1\nKey = zz\n").is_err());
        assert!(parse_kat("Count = 1\nBogus = 00\n").is_err());
        assert!(parse_kat("Count = 1\nKey = 00\n").is_err());
    }

    #[test]
    fn alg_from_name() {
        assert_eq!(
            alg_for_path(Path::new("LWC_AEAD_KAT_128_128_isapa128a.txt")),
            Some(AlgId::Isap)
        );
        assert_eq!(alg_for_path(Path::new("hash_XOODYAK.txt")), Some(AlgId::Xoodyak));
        assert_eq!(alg_for_path(Path::new("other.txt")), None);
    }
}
