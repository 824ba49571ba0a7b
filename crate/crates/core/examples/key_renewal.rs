//! Ephemeral DH renewal between two parties, and a sealed keystore.

use rand::rngs::OsRng;

use nodeguard::keymgr::{self, Keystore, RenewalOffer};
use nodeguard::NodeId;

fn main() {
    let node = NodeId::from_name("n7").unwrap();
    let epoch = 3;

    let (eph, offer) = keymgr::renewal_initiate(epoch, &mut OsRng);
    let wire_offer = offer.encode();
    let (accept, responder) = keymgr::renewal_respond(
        epoch,
        &RenewalOffer::decode(&wire_offer).unwrap(),
        &node,
        1_000,
        &mut OsRng,
    )
    .expect("offer for the current epoch");
    let initiator = keymgr::renewal_complete(&eph, epoch, &accept, &node, 1_010).expect("accept matches");

    assert!(initiator.key == responder.key && initiator.image_key == responder.image_key);
    println!("renewed {node}: epoch {epoch} -> {}", initiator.epoch);

    // An offer naming an old epoch is refused.
    let stale = keymgr::renewal_respond(epoch + 1, &offer, &node, 2_000, &mut OsRng);
    println!("stale offer: {}", stale.unwrap_err());

    let mut ks = Keystore::new(*b"device-serial-01");
    ks.sessions.insert(node, responder);
    let blob = keymgr::seal_keystore(&ks, b"device secret", &mut OsRng);
    println!("sealed keystore: {} bytes", blob.len());
    let back = keymgr::unseal_keystore(&blob, b"device secret").unwrap();
    assert_eq!(back.sessions[&node].epoch, epoch + 1);
    assert!(keymgr::unseal_keystore(&blob, b"wrong secret").is_err());
}
