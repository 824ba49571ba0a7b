//! Both AEADs on the same message, plus the hash and XOF.

use nodeguard::crypto::{self, AeadKey, AlgId, Nonce};

fn main() {
    let key = AeadKey::from_bytes(*b"0123456789abcdef");
    let nonce = Nonce(*b"nonce-0000000001");
    let ad = b"header bytes";
    let msg = b"temperature=21.5C humidity=40%";

    for alg in AlgId::ALL {
        let (ct, tag) = crypto::aead_encrypt(alg, &key, &nonce, ad, msg);
        println!(
            "{:<8} ct {} tag {}",
            alg.name(),
            hex::encode(&ct),
            hex::encode(tag.0)
        );
        assert_eq!(ct.len(), msg.len());

        let pt = crypto::aead_decrypt(alg, &key, &nonce, ad, &ct, &tag).expect("authentic");
        assert_eq!(pt, msg);

        let mut bad = ct.clone();
        bad[0] ^= 1;
        let err = crypto::aead_decrypt(alg, &key, &nonce, ad, &bad, &tag).unwrap_err();
        println!("{:<8} flipped bit: {err}", alg.name());
    }

    println!("hash     {}", crypto::hash(AlgId::Xoodyak, b"abc"));
    println!("xof(40)  {}", hex::encode(crypto::xof_expand(b"seed", 40)));
}
