//! Tamper detection and journal restore in the protected arena.

use nodeguard::crypto::AeadKey;
use nodeguard::logger::Logger;
use nodeguard::memguard::{self, Arena, CellStatus};

fn main() {
    let mut arena = Arena::new(64 * 1024, AeadKey::from_bytes([9; 16]), [1; 32]).unwrap();
    let mut log = Logger::new();
    let values: Vec<Vec<u8>> = (0..20).map(|i| format!("reading #{i}").into_bytes()).collect();
    let handles: Vec<_> = values.iter().map(|v| arena.write_protected(v).unwrap()).collect();
    println!(
        "{} cells, {} free tag slots",
        arena.live_cells(),
        arena.free_tag_slots()
    );

    // Flip bytes until one lands in a cell; free space is not covered.
    let mut offset = 0;
    let victim = loop {
        let old = arena.peek(offset);
        arena.adversary_poke(offset, old ^ 0xff);
        let flagged = arena.audit_all(&mut log, 10);
        if let Some((h, _)) = flagged.into_iter().find(|(_, s)| *s == CellStatus::Tampered) {
            println!("poke at offset {offset} detected in cell {}", h.id());
            break h;
        }
        arena.adversary_poke(offset, old);
        offset += 97;
    };
    assert!(arena.read_verified(victim).is_err());
    arena.restore(victim).unwrap();
    let i = handles.iter().position(|h| *h == victim).unwrap();
    assert_eq!(&arena.read_verified(victim).unwrap()[..], &values[i][..]);
    println!("restored; log has {} entries", log.entries().len());

    let r = memguard::run_poke_campaign(100, 1000, 7).unwrap();
    println!(
        "campaign: {} pokes, {} on cells, detection {:.3}, false positives {}, restored {}",
        r.pokes,
        r.pokes_on_cells,
        r.detection_rate(),
        r.false_positives,
        r.restored
    );
}
