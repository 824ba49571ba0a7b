//! AEAD throughput benchmark, CSV/SVG output and shape checks.

use std::fmt::Write as _;
use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::crypto::{self, AeadKey, AlgId, Nonce};

/// Sizes used when a range is given, `k` = 1000 bytes.
pub const DEFAULT_SIZES: [usize; 8] = [1_000, 2_000, 4_000, 8_000, 16_000, 32_000, 64_000, 65_000];
pub const MIN_ITERS: u32 = 30;
pub const CSV_HEADER: &str = "alg,size_bytes,op,mean_us,stddev_us,iterations";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BenchParams {
    pub algs: Vec<AlgId>,
    pub sizes: Vec<usize>,
    pub iters: u32,
    pub warmup: u32,
    /// Independent measurement rounds per cell; the quietest one is kept.
    pub rounds: u32,
    pub seed: u64,
}

impl Default for BenchParams {
    fn default() -> Self {
        Self {
            algs: AlgId::ALL.to_vec(),
            sizes: DEFAULT_SIZES.to_vec(),
            iters: 100,
            warmup: 5,
            rounds: 3,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Op {
    Encrypt,
    Decrypt,
}

impl Op {
    pub fn name(self) -> &'static str {
        match self {
            Op::Encrypt => "encrypt",
            Op::Decrypt => "decrypt",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub alg: AlgId,
    pub size_bytes: usize,
    pub op: Op,
    pub mean_us: f64,
    pub stddev_us: f64,
    pub iterations: u32,
    /// Standard deviation above half the mean.
    pub noisy: bool,
}

fn parse_size(s: &str) -> Result<usize, String> {
    let s = s.trim().to_ascii_lowercase();
    let (digits, mult) = match s.strip_suffix('k') {
        Some(d) => (d, 1000),
        None => (s.as_str(), 1),
    };
    digits
        .parse::<usize>()
        .ok()
        .and_then(|v| v.checked_mul(mult))
        .filter(|&v| v > 0)
        .ok_or_else(|| format!("bad size `{s}`"))
}

/// `a..b` selects the default sizes within the range; a comma list is
/// taken as given.
pub fn parse_sizes(spec: &str) -> Result<Vec<usize>, String> {
    if let Some((a, b)) = spec.split_once("..") {
        let (lo, hi) = (parse_size(a)?, parse_size(b)?);
        if lo > hi {
            return Err(format!("empty size range `{spec}`"));
        }
        let sizes: Vec<usize> = DEFAULT_SIZES
            .iter()
            .copied()
            .filter(|s| (lo..=hi).contains(s))
            .collect();
        if sizes.is_empty() {
            return Err(format!("no benchmark sizes in `{spec}`"));
        }
        return Ok(sizes);
    }
    let mut sizes = spec.split(',').map(parse_size).collect::<Result<Vec<_>, _>>()?;
    sizes.sort_unstable();
    sizes.dedup();
    Ok(sizes)
}

pub fn parse_algs(spec: &str) -> Result<Vec<AlgId>, String> {
    spec.split(',').map(str::parse).collect()
}

fn stats(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = if samples.len() > 1 {
        samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

fn row(alg: AlgId, size: usize, op: Op, samples: &[f64]) -> BenchRow {
    let (mean_us, stddev_us) = stats(samples);
    BenchRow {
        alg,
        size_bytes: size,
        op,
        mean_us,
        stddev_us,
        iterations: samples.len() as u32,
        noisy: stddev_us > 0.5 * mean_us,
    }
}

/// Timing samples for one (alg, size) cell.
struct Cell {
    alg: AlgId,
    msg: Vec<u8>,
    buf: Vec<u8>,
    enc: Vec<f64>,
    dec: Vec<f64>,
}

impl Cell {
    fn sample(&mut self, key: &AeadKey, i: u32, keep: bool) {
        let mut n = [0u8; 16];
        n[..8].copy_from_slice(&u64::from(i).to_be_bytes());
        let nonce = Nonce(n);
        self.buf.copy_from_slice(&self.msg);
        let t = Instant::now();
        let tag = crypto::aead_encrypt_in_place(self.alg, key, &nonce, b"", &mut self.buf);
        let e = t.elapsed();
        let t = Instant::now();
        let ok = crypto::aead_decrypt_in_place(self.alg, key, &nonce, b"", &mut self.buf, &tag);
        let d = t.elapsed();
        assert!(ok.is_ok() && self.buf == self.msg, "round trip");
        if keep {
            self.enc.push(e.as_secs_f64() * 1e6);
            self.dec.push(d.as_secs_f64() * 1e6);
        }
    }
}

/// Times encryption and decryption per (alg, size). `iters` is raised to
/// [`MIN_ITERS`].
///
/// All cells are sampled in turn within each iteration, and the whole run
/// is repeated `rounds` times keeping each cell's quietest round, so host
/// drift and bursts of preemption do not land on a single size.
pub fn run_bench(params: &BenchParams) -> Vec<BenchRow> {
    let iters = params.iters.max(MIN_ITERS);
    let mut rng = ChaCha20Rng::seed_from_u64(params.seed);
    let mut key = [0u8; 16];
    rng.fill_bytes(&mut key);
    let key = AeadKey::from_bytes(key);
    let mut cells = Vec::new();
    for &alg in &params.algs {
        for &size in &params.sizes {
            let mut msg = vec![0u8; size];
            rng.fill_bytes(&mut msg);
            cells.push(Cell {
                alg,
                buf: msg.clone(),
                msg,
                enc: Vec::with_capacity(iters as usize),
                dec: Vec::with_capacity(iters as usize),
            });
        }
    }
    let mut best: Vec<Option<(BenchRow, BenchRow)>> = vec![None; cells.len()];
    for _ in 0..params.rounds.max(1) {
        for c in &mut cells {
            c.enc.clear();
            c.dec.clear();
        }
        for i in 0..params.warmup + iters {
            for c in &mut cells {
                c.sample(&key, i, i >= params.warmup);
            }
        }
        for (c, slot) in cells.iter().zip(&mut best) {
            let enc = row(c.alg, c.msg.len(), Op::Encrypt, &c.enc);
            let dec = row(c.alg, c.msg.len(), Op::Decrypt, &c.dec);
            if slot
                .as_ref()
                .is_none_or(|(e, d)| enc.mean_us + dec.mean_us < e.mean_us + d.mean_us)
            {
                *slot = Some((enc, dec));
            }
        }
    }
    let mut rows = Vec::new();
    for (enc, dec) in best.into_iter().flatten() {
        rows.push(enc);
        rows.push(dec);
    }
    rows
}

pub fn to_csv(rows: &[BenchRow]) -> String {
    let mut out = format!("{CSV_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{:.3},{:.3},{}",
            r.alg.name(),
            r.size_bytes,
            r.op.name(),
            r.mean_us,
            r.stddev_us,
            r.iterations
        );
    }
    out
}

/// One polyline per (alg, op), time against size.
pub fn to_svg(rows: &[BenchRow]) -> String {
    const W: f64 = 720.0;
    const H: f64 = 420.0;
    const PAD: f64 = 60.0;
    let max_x = rows.iter().map(|r| r.size_bytes).max().unwrap_or(1) as f64;
    let max_y = rows.iter().map(|r| r.mean_us).fold(1e-9, f64::max);
    let px = |x: f64| PAD + x / max_x * (W - 2.0 * PAD);
    let py = |y: f64| H - PAD - y / max_y * (H - 2.0 * PAD);
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <line x1=\"{PAD}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <line x1=\"{PAD}\" y1=\"{PAD}\" x2=\"{PAD}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <text x=\"{cx}\" y=\"{lx}\" text-anchor=\"middle\">message size (bytes, max {max_x})</text>\n\
         <text x=\"14\" y=\"{cy}\" transform=\"rotate(-90 14 {cy})\" text-anchor=\"middle\">mean time (us, max {max_y:.1})</text>\n",
        b = H - PAD,
        r = W - PAD,
        cx = W / 2.0,
        lx = H - 20.0,
        cy = H / 2.0,
    );
    let colors = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728"];
    let mut series: Vec<(AlgId, Op)> = rows.iter().map(|r| (r.alg, r.op)).collect();
    series.sort();
    series.dedup();
    for (i, (alg, op)) in series.iter().enumerate() {
        let pts: Vec<String> = rows
            .iter()
            .filter(|r| r.alg == *alg && r.op == *op)
            .map(|r| format!("{:.1},{:.1}", px(r.size_bytes as f64), py(r.mean_us)))
            .collect();
        let color = colors[i % colors.len()];
        let dash = if *op == Op::Decrypt {
            " stroke-dasharray=\"5,3\""
        } else {
            ""
        };
        let _ = writeln!(
            svg,
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"{dash} points=\"{}\"/>",
            pts.join(" ")
        );
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" fill=\"{color}\">{} {}</text>",
            PAD + 10.0,
            PAD + 16.0 * i as f64,
            alg.name(),
            op.name()
        );
    }
    svg.push_str("</svg>\n");
    svg
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapeCheck {
    /// Xoodyak beats ISAP at every size, for both operations.
    pub xoodyak_faster: bool,
    /// Smallest ISAP/Xoodyak mean-time ratio seen.
    pub min_ratio: f64,
    pub ratio_target: f64,
    /// Mean time never drops by more than the slack as size grows.
    pub monotonic: bool,
    pub notes: Vec<String>,
}

impl ShapeCheck {
    pub fn ratio_met(&self) -> bool {
        self.min_ratio >= self.ratio_target
    }
}

fn mean_of(rows: &[BenchRow], alg: AlgId, op: Op, size: usize) -> Option<f64> {
    rows.iter()
        .find(|r| r.alg == alg && r.op == op && r.size_bytes == size)
        .map(|r| r.mean_us)
}

pub fn check_shape(rows: &[BenchRow], slack: f64, ratio_target: f64) -> ShapeCheck {
    let mut check = ShapeCheck {
        xoodyak_faster: true,
        min_ratio: f64::INFINITY,
        ratio_target,
        monotonic: true,
        notes: Vec::new(),
    };
    let mut sizes: Vec<usize> = rows.iter().map(|r| r.size_bytes).collect();
    sizes.sort_unstable();
    sizes.dedup();
    for op in [Op::Encrypt, Op::Decrypt] {
        for &s in &sizes {
            if let (Some(x), Some(i)) = (
                mean_of(rows, AlgId::Xoodyak, op, s),
                mean_of(rows, AlgId::Isap, op, s),
            ) {
                if x >= i {
                    check.xoodyak_faster = false;
                    check
                        .notes
                        .push(format!("{} {s}: xoodyak {x:.1}us >= isap {i:.1}us", op.name()));
                }
                check.min_ratio = check.min_ratio.min(i / x);
            }
        }
        for alg in AlgId::ALL {
            let series: Vec<(usize, f64)> = sizes
                .iter()
                .filter_map(|&s| mean_of(rows, alg, op, s).map(|m| (s, m)))
                .collect();
            for w in series.windows(2) {
                if w[1].1 < w[0].1 * (1.0 - slack) {
                    check.monotonic = false;
                    check.notes.push(format!(
                        "{} {}: {}B {:.1}us then {}B {:.1}us",
                        alg.name(),
                        op.name(),
                        w[0].0,
                        w[0].1,
                        w[1].0,
                        w[1].1
                    ));
                }
            }
        }
    }
    if !check.min_ratio.is_finite() {
        check.min_ratio = 0.0;
    }
    check
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn size_specs() {
        assert_eq!(parse_sizes("1k..65k").unwrap(), DEFAULT_SIZES.to_vec());
        assert_eq!(parse_sizes("4k..16k").unwrap(), vec![4_000, 8_000, 16_000]);
        assert_eq!(parse_sizes("100,1k,100").unwrap(), vec![100, 1000]);
        assert!(parse_sizes("9k..2k").is_err());
        assert!(parse_sizes("70k..90k").is_err());
        assert!(parse_sizes("x").is_err());
        assert_eq!(parse_algs("xoodyak,isap").unwrap(), AlgId::ALL.to_vec());
    }

    #[test]
    fn small_run_and_outputs() {
        let p = BenchParams {
            sizes: vec![64, 512],
            iters: 1,
            warmup: 0,
            ..Default::default()
        };
        let rows = run_bench(&p);
        assert_eq!(rows.len(), 8);
        assert!(rows.iter().all(|r| r.iterations == MIN_ITERS));
        let csv = to_csv(&rows);
        assert!(csv.starts_with(CSV_HEADER));
        assert_eq!(csv.lines().count(), 9);
        let svg = to_svg(&rows);
        assert_eq!(svg.matches("<polyline").count(), 4);
    }

    #[test]
    fn shape_rules() {
        let mk = |alg, size, mean| BenchRow {
            alg,
            size_bytes: size,
            op: Op::Encrypt,
            mean_us: mean,
            stddev_us: 0.0,
            iterations: 30,
            noisy: false,
        };
        let rows = vec![
            mk(AlgId::Xoodyak, 1, 10.0),
            mk(AlgId::Xoodyak, 2, 9.6),
            mk(AlgId::Isap, 1, 60.0),
            mk(AlgId::Isap, 2, 40.0),
        ];
        let c = check_shape(&rows, 0.05, 5.0);
        assert!(c.xoodyak_faster);
        assert!((c.min_ratio - 40.0 / 9.6).abs() < 1e-9);
        assert!(!c.ratio_met());
        assert!(!c.monotonic);
        assert_eq!(c.notes.len(), 1);
    }
}
