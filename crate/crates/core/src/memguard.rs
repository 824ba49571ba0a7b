//! Tamper-evident protected memory.
//!
//! Values live in the first 7/8 of a flat arena; 16-byte integrity tags
//! live in slots of the last 1/8, each cell's slot drawn uniformly from
//! the free slots. For a value `v` with fresh random secret `t`:
//!
//! ```text
//! tag = mac(k_mem, v ^ xof_expand(t, |v|))
//! ```
//!
//! Slot positions and `t` never leave this module. A journal kept outside
//! the arena holds the last verified copy of each value under its own MAC
//! and is used to restore tampered cells.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use thiserror::Error;
use zeroize::{Zeroize, ZeroizeOnDrop, Zeroizing};

use crate::crypto::{self, AeadKey, Tag, TAG_LEN};
use crate::logger::{Category, Logger};
use crate::Millis;

pub const DEFAULT_ARENA_SIZE: usize = 1 << 20;
const CELL_SECRET_LEN: usize = 16;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MemError {
    #[error("arena full")]
    ArenaFull,
    #[error("tamper detected in {0}")]
    TamperDetected(Handle),
    #[error("unknown handle {0}")]
    UnknownHandle(Handle),
    #[error("no journal entry for {0}")]
    JournalMissing(Handle),
    #[error("journal entry for {0} failed verification")]
    JournalCorrupt(Handle),
    #[error("protected values must not be empty")]
    EmptyValue,
    #[error("arena of {0} bytes is too small")]
    ArenaTooSmall(usize),
}

/// Opaque cell reference. Carries no address information.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Handle(u64);

impl Handle {
    pub fn id(self) -> u64 {
        self.0
    }
}

impl fmt::Display for Handle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "cell#{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellStatus {
    Ok,
    Tampered,
}

#[derive(Zeroize, ZeroizeOnDrop)]
struct CellMeta {
    value_addr: usize,
    value_len: usize,
    tag_slot: usize,
    t: [u8; CELL_SECRET_LEN],
}

#[derive(Zeroize, ZeroizeOnDrop)]
struct JournalEntry {
    value: Vec<u8>,
    mac: [u8; TAG_LEN],
}

/// Where a byte of the arena belongs. Used by the simulation harness to
/// score poke campaigns; not reachable from outside the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Region {
    Value(Handle),
    Tag(Handle),
    Free,
}

pub struct Arena {
    bytes: Vec<u8>,
    tag_base: usize,
    /// Free value ranges, start -> length, coalesced.
    free_values: BTreeMap<usize, usize>,
    free_slots: Vec<usize>,
    cells: BTreeMap<Handle, CellMeta>,
    journal: BTreeMap<Handle, JournalEntry>,
    k_mem: AeadKey,
    rng: ChaCha20Rng,
    next_handle: u64,
}

impl fmt::Debug for Arena {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Arena")
            .field("size", &self.bytes.len())
            .field("live_cells", &self.cells.len())
            .finish_non_exhaustive()
    }
}

impl Arena {
    /// `seed` drives slot selection and cell secrets.
    pub fn new(size: usize, k_mem: AeadKey, seed: [u8; 32]) -> Result<Self, MemError> {
        let tag_region = (size / 8) / TAG_LEN * TAG_LEN;
        if tag_region < TAG_LEN || size - tag_region < 1 {
            return Err(MemError::ArenaTooSmall(size));
        }
        let tag_base = size - tag_region;
        let mut free_values = BTreeMap::new();
        free_values.insert(0, tag_base);
        Ok(Self {
            bytes: vec![0u8; size],
            tag_base,
            free_values,
            free_slots: (0..tag_region / TAG_LEN).collect(),
            cells: BTreeMap::new(),
            journal: BTreeMap::new(),
            k_mem,
            rng: ChaCha20Rng::from_seed(seed),
            next_handle: 1,
        })
    }

    pub fn size(&self) -> usize {
        self.bytes.len()
    }

    pub fn live_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn handles(&self) -> Vec<Handle> {
        self.cells.keys().copied().collect()
    }

    pub fn is_live(&self, h: Handle) -> bool {
        self.cells.contains_key(&h)
    }

    pub fn free_value_bytes(&self) -> usize {
        self.free_values.values().sum()
    }

    pub fn free_tag_slots(&self) -> usize {
        self.free_slots.len()
    }

    fn compute_tag(&self, value: &[u8], t: &[u8; CELL_SECRET_LEN]) -> Tag {
        let mut masked = Zeroizing::new(value.to_vec());
        crypto::xor_mask(&mut masked, t);
        crypto::mac(&self.k_mem, &masked)
    }

    fn journal_mac(&self, h: Handle, value: &[u8]) -> [u8; TAG_LEN] {
        let mut msg = Zeroizing::new(b"journal".to_vec());
        msg.extend_from_slice(&h.0.to_be_bytes());
        msg.extend_from_slice(value);
        crypto::mac(&self.k_mem, &msg).0
    }

    fn alloc_value(&mut self, len: usize) -> Option<usize> {
        let (&start, &avail) = self.free_values.iter().find(|(_, &l)| l >= len)?;
        self.free_values.remove(&start);
        if avail > len {
            self.free_values.insert(start + len, avail - len);
        }
        Some(start)
    }

    fn free_value(&mut self, start: usize, len: usize) {
        let (mut start, mut len) = (start, len);
        if let Some((&ps, &pl)) = self.free_values.range(..start).next_back() {
            if ps + pl == start {
                self.free_values.remove(&ps);
                start = ps;
                len += pl;
            }
        }
        if let Some(&nl) = self.free_values.get(&(start + len)) {
            self.free_values.remove(&(start + len));
            len += nl;
        }
        self.free_values.insert(start, len);
    }

    fn take_slot(&mut self) -> Option<usize> {
        if self.free_slots.is_empty() {
            return None;
        }
        let i = self.rng.gen_range(0..self.free_slots.len());
        Some(self.free_slots.swap_remove(i))
    }

    fn slot_range(&self, slot: usize) -> std::ops::Range<usize> {
        let a = self.tag_base + slot * TAG_LEN;
        a..a + TAG_LEN
    }

    /// Writes `v` (fresh secret, fresh slot), verifies it, then journals it.
    pub fn write_protected(&mut self, v: &[u8]) -> Result<Handle, MemError> {
        if v.is_empty() {
            return Err(MemError::EmptyValue);
        }
        if self.free_slots.is_empty() {
            return Err(MemError::ArenaFull);
        }
        let addr = self.alloc_value(v.len()).ok_or(MemError::ArenaFull)?;
        let slot = self.take_slot().expect("checked above");
        let h = Handle(self.next_handle);
        self.next_handle += 1;
        let mut t = [0u8; CELL_SECRET_LEN];
        self.rng.fill_bytes(&mut t);
        let tag = self.compute_tag(v, &t);
        self.bytes[addr..addr + v.len()].copy_from_slice(v);
        let r = self.slot_range(slot);
        self.bytes[r].copy_from_slice(&tag.0);
        self.cells.insert(
            h,
            CellMeta {
                value_addr: addr,
                value_len: v.len(),
                tag_slot: slot,
                t,
            },
        );
        t.zeroize();
        let verified = self.read_verified(h)?;
        self.journal_store(h, verified);
        Ok(h)
    }

    fn journal_store(&mut self, h: Handle, value: Zeroizing<Vec<u8>>) {
        let mac = self.journal_mac(h, &value);
        self.journal.insert(
            h,
            JournalEntry {
                value: value.to_vec(),
                mac,
            },
        );
    }

    fn check(&self, h: Handle) -> Result<&CellMeta, MemError> {
        let c = self.cells.get(&h).ok_or(MemError::UnknownHandle(h))?;
        let value = &self.bytes[c.value_addr..c.value_addr + c.value_len];
        let mut stored = Tag::default();
        stored.0.copy_from_slice(&self.bytes[self.slot_range(c.tag_slot)]);
        if self.compute_tag(value, &c.t) != stored {
            return Err(MemError::TamperDetected(h));
        }
        Ok(c)
    }

    pub fn read_verified(&self, h: Handle) -> Result<Zeroizing<Vec<u8>>, MemError> {
        let c = self.check(h)?;
        Ok(Zeroizing::new(
            self.bytes[c.value_addr..c.value_addr + c.value_len].to_vec(),
        ))
    }

    /// Status of every live cell, in handle order.
    pub fn audit(&self) -> Vec<(Handle, CellStatus)> {
        self.cells
            .keys()
            .map(|&h| {
                let s = match self.check(h) {
                    Ok(_) => CellStatus::Ok,
                    Err(_) => CellStatus::Tampered,
                };
                (h, s)
            })
            .collect()
    }

    /// [`Arena::audit`] plus one `MemIntegrity` log entry per tampered cell.
    pub fn audit_all(&self, log: &mut Logger, now: Millis) -> Vec<(Handle, CellStatus)> {
        let report = self.audit();
        for (h, s) in &report {
            if *s == CellStatus::Tampered {
                log.log_append(now, Category::MemIntegrity, format!("{h} tampered"));
            }
        }
        report
    }

    /// Rewrites the journaled value with a fresh secret and a fresh slot.
    pub fn restore(&mut self, h: Handle) -> Result<(), MemError> {
        if !self.cells.contains_key(&h) {
            return Err(MemError::UnknownHandle(h));
        }
        let entry = self.journal.get(&h).ok_or(MemError::JournalMissing(h))?;
        let expected = self.journal_mac(h, &entry.value);
        if !bool::from(subtle::ConstantTimeEq::ct_eq(&expected[..], &entry.mac[..])) {
            return Err(MemError::JournalCorrupt(h));
        }
        let value = Zeroizing::new(entry.value.clone());
        if value.len() != self.cells[&h].value_len {
            return Err(MemError::JournalCorrupt(h));
        }
        let new_slot = self.take_slot();
        let c = self.cells.get_mut(&h).expect("checked above");
        let old_slot = c.tag_slot;
        if let Some(s) = new_slot {
            c.tag_slot = s;
        }
        self.rng.fill_bytes(&mut c.t);
        let (addr, slot, t) = (c.value_addr, c.tag_slot, c.t);
        if new_slot.is_some() {
            self.free_slots.push(old_slot);
            let r = self.slot_range(old_slot);
            self.bytes[r].fill(0);
        }
        self.bytes[addr..addr + value.len()].copy_from_slice(&value);
        let tag = self.compute_tag(&value, &t);
        let r = self.slot_range(slot);
        self.bytes[r].copy_from_slice(&tag.0);
        self.check(h).map(|_| ())
    }

    /// Drops a cell, wiping its value and tag.
    pub fn release(&mut self, h: Handle) -> Result<(), MemError> {
        let c = self.cells.remove(&h).ok_or(MemError::UnknownHandle(h))?;
        self.bytes[c.value_addr..c.value_addr + c.value_len].fill(0);
        let r = self.slot_range(c.tag_slot);
        self.bytes[r].fill(0);
        self.free_value(c.value_addr, c.value_len);
        self.free_slots.push(c.tag_slot);
        self.journal.remove(&h);
        Ok(())
    }

    /// Raw write bypassing every check. Models an adversary with write
    /// access to process memory.
    pub fn adversary_poke(&mut self, offset: usize, new_byte: u8) {
        self.bytes[offset] = new_byte;
    }

    pub fn peek(&self, offset: usize) -> u8 {
        self.bytes[offset]
    }

    pub(crate) fn region_of(&self, offset: usize) -> Region {
        for (&h, c) in &self.cells {
            if (c.value_addr..c.value_addr + c.value_len).contains(&offset) {
                return Region::Value(h);
            }
            if self.slot_range(c.tag_slot).contains(&offset) {
                return Region::Tag(h);
            }
        }
        Region::Free
    }

    /// Arena offset of byte `i` of a cell's value, or of its tag.
    pub(crate) fn cell_offset(&self, h: Handle, tag: bool, i: usize) -> Option<usize> {
        let c = self.cells.get(&h)?;
        if tag {
            Some(self.slot_range(c.tag_slot).start + i % TAG_LEN)
        } else {
            Some(c.value_addr + i % c.value_len)
        }
    }

    #[cfg(test)]
    fn corrupt_journal(&mut self, h: Handle) {
        if let Some(e) = self.journal.get_mut(&h) {
            e.value[0] ^= 1;
        }
    }
}

/// Ground truth for a poke campaign, computed with addressing knowledge
/// that the public API does not expose.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PokeCampaignReport {
    pub cells: usize,
    pub pokes: usize,
    pub pokes_on_cells: usize,
    pub pokes_on_free_space: usize,
    pub detected: usize,
    pub missed: usize,
    pub false_positives: usize,
    pub restored: usize,
    pub restore_failures: usize,
}

impl PokeCampaignReport {
    pub fn detection_rate(&self) -> f64 {
        if self.pokes_on_cells == 0 {
            return 1.0;
        }
        self.detected as f64 / self.pokes_on_cells as f64
    }

    pub fn false_positive_rate(&self) -> f64 {
        let clean_checks = self.pokes * self.cells - self.pokes_on_cells;
        if clean_checks == 0 {
            return 0.0;
        }
        self.false_positives as f64 / clean_checks as f64
    }
}

/// Fills an arena with `cells` random values, then performs `pokes`
/// single-byte modifications. After each poke the full arena is audited,
/// the flagged set is compared with the cell that owns the poked byte, and
/// flagged cells are restored.
///
/// Half of the pokes target a random cell's value, a quarter its tag, and
/// a quarter land anywhere in the arena.
pub fn run_poke_campaign(cells: usize, pokes: usize, seed: u64) -> Result<PokeCampaignReport, MemError> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut key = [0u8; 16];
    rng.fill_bytes(&mut key);
    let mut arena_seed = [0u8; 32];
    rng.fill_bytes(&mut arena_seed);
    let mut arena = Arena::new(DEFAULT_ARENA_SIZE, AeadKey::from_bytes(key), arena_seed)?;
    let mut originals = BTreeMap::new();
    for _ in 0..cells {
        let len = rng.gen_range(1..=256);
        let mut v = vec![0u8; len];
        rng.fill_bytes(&mut v);
        let h = arena.write_protected(&v)?;
        originals.insert(h, v);
    }
    let handles = arena.handles();
    let mut report = PokeCampaignReport {
        cells,
        pokes,
        ..Default::default()
    };
    for _ in 0..pokes {
        let pick: f64 = rng.gen();
        let offset = if pick < 0.75 && !handles.is_empty() {
            let h = handles[rng.gen_range(0..handles.len())];
            arena
                .cell_offset(h, pick >= 0.5, rng.gen_range(0..usize::MAX))
                .expect("live handle")
        } else {
            rng.gen_range(0..arena.size())
        };
        let xor = rng.gen_range(1..=255u8);
        let expected = match arena.region_of(offset) {
            Region::Value(h) | Region::Tag(h) => Some(h),
            Region::Free => None,
        };
        arena.adversary_poke(offset, arena.peek(offset) ^ xor);
        let flagged: BTreeSet<Handle> = arena
            .audit()
            .into_iter()
            .filter(|(_, s)| *s == CellStatus::Tampered)
            .map(|(h, _)| h)
            .collect();
        match expected {
            Some(h) => {
                report.pokes_on_cells += 1;
                if flagged.contains(&h) {
                    report.detected += 1;
                } else {
                    report.missed += 1;
                }
            }
            None => {
                report.pokes_on_free_space += 1;
                // Undo so free space stays comparable across pokes.
                arena.adversary_poke(offset, arena.peek(offset) ^ xor);
            }
        }
        report.false_positives += flagged.iter().filter(|h| Some(**h) != expected).count();
        for h in flagged {
            match arena.restore(h) {
                Ok(()) if *arena.read_verified(h)? == originals[&h][..] => report.restored += 1,
                _ => report.restore_failures += 1,
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn arena(size: usize) -> Arena {
        Arena::new(size, AeadKey::from_bytes([5; 16]), [6; 32]).unwrap()
    }

    fn find_offsets(a: &Arena, h: Handle) -> (usize, usize) {
        (
            a.cell_offset(h, false, 0).unwrap(),
            a.cell_offset(h, true, 0).unwrap(),
        )
    }

    #[test]
    fn write_read_round_trip() {
        let mut a = arena(4096);
        let h = a.write_protected(b"temperature=21.5").unwrap();
        assert_eq!(&a.read_verified(h).unwrap()[..], b"temperature=21.5");
        assert_eq!(a.write_protected(b""), Err(MemError::EmptyValue));
    }

    #[test]
    fn identical_values_get_distinct_tags() {
        let mut a = arena(4096);
        let h1 = a.write_protected(b"same").unwrap();
        let h2 = a.write_protected(b"same").unwrap();
        let t1 = a.cell_offset(h1, true, 0).unwrap();
        let t2 = a.cell_offset(h2, true, 0).unwrap();
        assert_ne!(a.bytes[t1..t1 + 16], a.bytes[t2..t2 + 16]);
    }

    #[test]
    fn capacity_exhaustion() {
        let mut a = arena(1024);
        // 128 bytes of tag space = 8 slots
        let mut n = 0;
        loop {
            match a.write_protected(&[1; 10]) {
                Ok(_) => n += 1,
                Err(e) => {
                    assert_eq!(e, MemError::ArenaFull);
                    break;
                }
            }
        }
        assert_eq!(n, 8);
        let mut b = arena(1024);
        assert_eq!(b.write_protected(&[1; 1000]), Err(MemError::ArenaFull));
        assert!(b.write_protected(&[1; 896]).is_ok());
    }

    #[test]
    fn value_and_tag_pokes_detected() {
        let mut a = arena(4096);
        let h = a.write_protected(b"value").unwrap();
        let (v, t) = find_offsets(&a, h);
        a.adversary_poke(v, a.peek(v) ^ 0x80);
        assert_eq!(a.read_verified(h).unwrap_err(), MemError::TamperDetected(h));
        a.restore(h).unwrap();
        assert_eq!(&a.read_verified(h).unwrap()[..], b"value");
        let t2 = a.cell_offset(h, true, 0).unwrap();
        a.adversary_poke(t2, a.peek(t2) ^ 1);
        assert_eq!(a.read_verified(h).unwrap_err(), MemError::TamperDetected(h));
        a.restore(h).unwrap();
        a.restore(h).unwrap();
        assert_eq!(&a.read_verified(h).unwrap()[..], b"value");
        let _ = t;
    }

    #[test]
    fn audit_flags_exactly_poked_cells() {
        let mut a = arena(DEFAULT_ARENA_SIZE);
        let mut log = Logger::new();
        assert!(a.audit_all(&mut log, 0).is_empty());
        let hs: Vec<Handle> = (0..100u8).map(|i| a.write_protected(&[i; 33]).unwrap()).collect();
        assert!(a.audit_all(&mut log, 0).iter().all(|(_, s)| *s == CellStatus::Ok));
        let poked: BTreeSet<Handle> = [3, 17, 18, 40, 41, 77, 99].iter().map(|&i| hs[i]).collect();
        for (n, h) in poked.iter().enumerate() {
            let off = a.cell_offset(*h, n % 2 == 0, n).unwrap();
            a.adversary_poke(off, a.peek(off) ^ 0x55);
        }
        let flagged: BTreeSet<Handle> = a
            .audit_all(&mut log, 5)
            .into_iter()
            .filter(|(_, s)| *s == CellStatus::Tampered)
            .map(|(h, _)| h)
            .collect();
        assert_eq!(flagged, poked);
        assert_eq!(log.count(Category::MemIntegrity), 7);
    }

    #[test]
    fn free_space_poke_is_harmless() {
        let mut a = arena(4096);
        let h = a.write_protected(b"abc").unwrap();
        let free = (0..a.size()).find(|&o| a.region_of(o) == Region::Free).unwrap();
        a.adversary_poke(free, 0xff);
        assert!(a.audit().iter().all(|(_, s)| *s == CellStatus::Ok));
        assert!(a.read_verified(h).is_ok());
    }

    #[test]
    fn journal_failures() {
        let mut a = arena(4096);
        let h = a.write_protected(b"abc").unwrap();
        a.corrupt_journal(h);
        assert_eq!(a.restore(h), Err(MemError::JournalCorrupt(h)));
        assert_eq!(a.restore(Handle(999)), Err(MemError::UnknownHandle(Handle(999))));
        a.journal.clear();
        assert_eq!(a.restore(h), Err(MemError::JournalMissing(h)));
    }

    #[test]
    fn release_returns_space() {
        let mut a = arena(4096);
        let before = (a.free_value_bytes(), a.free_tag_slots());
        let hs: Vec<Handle> = (0..5).map(|_| a.write_protected(&[7; 100]).unwrap()).collect();
        for h in [hs[1], hs[3], hs[2], hs[0], hs[4]] {
            a.release(h).unwrap();
        }
        assert_eq!((a.free_value_bytes(), a.free_tag_slots()), before);
        assert_eq!(a.free_values.len(), 1);
        assert_eq!(
            a.read_verified(hs[0]).unwrap_err(),
            MemError::UnknownHandle(hs[0])
        );
    }

    #[test]
    fn small_campaign() {
        let r = run_poke_campaign(20, 200, 7).unwrap();
        assert_eq!(r.missed, 0);
        assert_eq!(r.false_positives, 0);
        assert_eq!(r.restore_failures, 0);
        assert_eq!(r.restored, r.detected);
    }

    proptest! {
        #[test]
        fn multi_byte_modification_detected(
            vals in proptest::collection::vec(proptest::collection::vec(any::<u8>(), 1..64), 1..20),
            which in any::<usize>(),
            edits in proptest::collection::vec((any::<bool>(), any::<usize>(), 1u8..=255), 1..5),
        ) {
            let mut a = arena(8192);
            let hs: Vec<Handle> = vals.iter().map(|v| a.write_protected(v).unwrap()).collect();
            let h = hs[which % hs.len()];
            let mut touched = BTreeSet::new();
            for (tag, i, xor) in edits {
                let off = a.cell_offset(h, tag, i).unwrap();
                if touched.insert(off) {
                    a.adversary_poke(off, a.peek(off) ^ xor);
                }
            }
            for (x, s) in a.audit() {
                prop_assert_eq!(s == CellStatus::Tampered, x == h);
            }
            a.restore(h).unwrap();
            prop_assert!(a.audit().iter().all(|(_, s)| *s == CellStatus::Ok));
        }
    }
}
