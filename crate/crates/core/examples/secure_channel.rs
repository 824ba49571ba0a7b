//! Frames between a node and the gateway: replay, tampering and rekeying.

use nodeguard::crypto::{AeadKey, AlgId};
use nodeguard::wire::{Channel, Direction, MsgType, FRAME_OVERHEAD, OVERLAP_MS};
use nodeguard::NodeId;

fn main() {
    let node = NodeId::from_name("n1").unwrap();
    let key = AeadKey::from_bytes([0x42; 16]);
    let mut agent = Channel::new(node, AlgId::Xoodyak, Direction::ToGateway, 0, key.clone());
    let mut gateway = Channel::new(node, AlgId::Xoodyak, Direction::ToAgent, 0, key);

    let reading = b"22.1C";
    let frame = agent.seal_bytes(MsgType::Data, reading).unwrap();
    println!(
        "frame {} bytes for {} bytes of data (+{FRAME_OVERHEAD})",
        frame.len(),
        reading.len()
    );
    let (ty, body) = gateway.open_bytes(&frame, 0).unwrap();
    println!("opened {} {:?}", ty.name(), String::from_utf8_lossy(&body));

    println!("replayed:  {}", gateway.open_bytes(&frame, 5).unwrap_err());
    let mut bent = agent.seal_bytes(MsgType::Data, reading).unwrap();
    let last = bent.len() - 1;
    bent[last] ^= 0x80;
    println!("tampered:  {}", gateway.open_bytes(&bent, 5).unwrap_err());

    // A frame sealed just before rekeying still opens inside the overlap.
    let in_flight = agent.seal_bytes(MsgType::Data, b"late").unwrap();
    let straggler = agent.seal_bytes(MsgType::Data, b"later").unwrap();
    let next = AeadKey::from_bytes([0x43; 16]);
    agent.rekey(1, next.clone(), 100);
    gateway.rekey(1, next, 100);
    println!(
        "in overlap: {:?}",
        gateway.open_bytes(&in_flight, 200).map(|(t, _)| t.name())
    );
    println!(
        "after it:   {}",
        gateway.open_bytes(&straggler, 100 + OVERLAP_MS + 1).unwrap_err()
    );
    let fresh = agent.seal_bytes(MsgType::Data, b"new epoch").unwrap();
    assert!(gateway.open_bytes(&fresh, 100 + OVERLAP_MS + 2).is_ok());
}
