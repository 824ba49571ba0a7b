use std::path::{Path, PathBuf};

use crate::attest::{DEFAULT_INTERVAL_MS, DEFAULT_RETRIES, DEFAULT_TIMEOUT_MS};
use crate::crypto::AlgId;
use crate::memguard::DEFAULT_ARENA_SIZE;
use crate::Millis;

pub const DEFAULT_LISTEN_ADDR: &str = "127.0.0.1:47620";
pub const DEFAULT_RENEWAL_INTERVAL_S: u64 = 24 * 3600;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GatewayConfig {
    pub attest_interval_ms: Millis,
    pub attest_timeout_ms: Millis,
    pub attest_retries: u32,
    pub renewal_interval_s: u64,
    pub arena_size_bytes: usize,
    pub alg: AlgId,
    pub listen_addr: String,
    pub log_path: Option<PathBuf>,
    pub keystore_path: Option<PathBuf>,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            attest_interval_ms: DEFAULT_INTERVAL_MS,
            attest_timeout_ms: DEFAULT_TIMEOUT_MS,
            attest_retries: DEFAULT_RETRIES,
            renewal_interval_s: DEFAULT_RENEWAL_INTERVAL_S,
            arena_size_bytes: DEFAULT_ARENA_SIZE,
            alg: AlgId::Xoodyak,
            listen_addr: DEFAULT_LISTEN_ADDR.into(),
            log_path: None,
            keystore_path: None,
        }
    }
}

/// Splits `key = value` lines. Blank lines and `#` comments are skipped.
pub fn config_pairs(text: &str) -> Result<Vec<(String, String)>, String> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected `key = value`", n + 1))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, String> {
    v.replace('_', "")
        .parse()
        .map_err(|_| format!("`{key}` needs a number, got `{v}`"))
}

impl GatewayConfig {
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut cfg = Self::default();
        for (key, value) in config_pairs(text)? {
            match key.as_str() {
                "attest_interval_ms" => cfg.attest_interval_ms = num(&key, &value)?,
                "attest_timeout_ms" => cfg.attest_timeout_ms = num(&key, &value)?,
                "attest_retries" => cfg.attest_retries = num(&key, &value)?,
                "renewal_interval_s" => cfg.renewal_interval_s = num(&key, &value)?,
                "arena_size_bytes" => cfg.arena_size_bytes = num(&key, &value)?,
                "alg" => cfg.alg = value.parse().map_err(|e: String| e.to_string())?,
                "listen_addr" => cfg.listen_addr = value,
                "log_path" => cfg.log_path = Some(PathBuf::from(value)),
                "keystore_path" => cfg.keystore_path = Some(PathBuf::from(value)),
                other => return Err(format!("unknown gateway setting `{other}`")),
            }
        }
        if cfg.attest_interval_ms == 0 || cfg.attest_timeout_ms == 0 {
            return Err("attestation interval and timeout must be positive".into());
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::parse(&text)
    }

    pub fn renewal_interval_ms(&self) -> Millis {
        self.renewal_interval_s.saturating_mul(1000)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_overrides() {
        let c = GatewayConfig::parse("").unwrap();
        assert_eq!(c, GatewayConfig::default());
        let c = GatewayConfig::parse(
            "attest_interval_ms = 1_000\nalg = isap # fast enough\nlog_path=/tmp/x.log\n",
        )
        .unwrap();
        assert_eq!(c.attest_interval_ms, 1000);
        assert_eq!(c.alg, AlgId::Isap);
        assert_eq!(c.log_path.as_deref(), Some(Path::new("/tmp/x.log")));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(GatewayConfig::parse("nope = 1").is_err());
        assert!(GatewayConfig::parse("attest_retries = many").is_err());
        assert!(GatewayConfig::parse("just words").is_err());
        assert!(GatewayConfig::parse("attest_timeout_ms = 0").is_err());
    }
}
