//! Challenge/response attestation with retries.

use rand::rngs::OsRng;

use nodeguard::attest::{self, Attestor, TimeoutOutcome};
use nodeguard::crypto::{AeadKey, AlgId};
use nodeguard::wire::{Channel, Direction, MsgType};
use nodeguard::NodeId;

fn main() {
    let node = NodeId::from_name("n2").unwrap();
    let key = AeadKey::from_bytes([5; 16]);
    let mut gw = Channel::new(node, AlgId::Xoodyak, Direction::ToAgent, 0, key.clone());
    let mut ag = Channel::new(node, AlgId::Xoodyak, Direction::ToGateway, 0, key);
    let canonical = b"canonical application code".to_vec();
    let mut attestor = Attestor::new(1_000, 2);

    for (label, code) in [
        ("honest", canonical.clone()),
        ("patched", {
            let mut c = canonical.clone();
            c[3] ^= 1;
            c
        }),
    ] {
        let challenge = attestor.issue_challenge(&mut gw, 0, &mut OsRng).unwrap();
        let response = attest::answer_challenge(&mut ag, &code, &challenge, 10).unwrap();
        let (ty, body) = gw.open_bytes(&response, 20).unwrap();
        assert_eq!(ty, MsgType::AttestResponse);
        let outcome = attestor.verify_response(&node, &body, &canonical).unwrap();
        println!("{label:<8} {outcome:?}");
    }

    // A silent node: two retries, then lost.
    attestor.issue_challenge(&mut gw, 5_000, &mut OsRng).unwrap();
    let mut now = 5_000;
    loop {
        now += 1_001;
        assert_eq!(attestor.expired(now), vec![node]);
        match attestor.on_timeout(&mut gw, now, &mut OsRng).unwrap() {
            (TimeoutOutcome::Retry, _) => println!("t={now} retry"),
            (TimeoutOutcome::Lost, _) => {
                println!("t={now} lost");
                break;
            }
        }
    }
    assert!(attestor.pending(&node).is_none());
}
