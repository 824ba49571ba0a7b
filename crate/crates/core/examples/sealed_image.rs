//! Sealing an application image and moving it to a new epoch's key.

use nodeguard::crypto::{AeadKey, AlgId};
use nodeguard::gateway::app_id_from_name;
use nodeguard::image::AppImage;

fn main() {
    let old = AeadKey::from_bytes([1; 16]);
    let new = AeadKey::from_bytes([2; 16]);
    let code = b"\x00\x00\x00\x05\x00\x00\x00\x20sensor firmware".to_vec();
    let image = AppImage::seal(AlgId::Isap, &old, app_id_from_name("sensor"), 4, &code);
    let bytes = image.encode();
    println!(
        "image: {} bytes for {} bytes of code",
        bytes.len(),
        image.code_len()
    );

    let decoded = AppImage::decode(&bytes).unwrap();
    assert_eq!(&decoded.open(AlgId::Isap, &old).unwrap()[..], &code[..]);

    let moved = decoded.reseal(AlgId::Isap, &old, &new).unwrap();
    assert!(moved.open(AlgId::Isap, &old).is_err());
    assert_eq!(&moved.open(AlgId::Isap, &new).unwrap()[..], &code[..]);

    let mut flipped = moved.encode();
    let n = flipped.len();
    flipped[n / 2] ^= 4;
    let err = AppImage::decode(&flipped).and_then(|i| i.open(AlgId::Isap, &new).map(|_| ()));
    println!("corrupted image: {}", err.unwrap_err());
}
