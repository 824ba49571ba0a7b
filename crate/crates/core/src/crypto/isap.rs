//! ISAP-A-128a: leakage-resilient AEAD over Ascon-p.
//!
//! Parameters: k = 128, rH = 64, rB = 1, sH = 12, sB = 1, sE = 6, sK = 12.

use super::ascon::AsconState;

const S_H: usize = 12;
const S_B: usize = 1;
const S_E: usize = 6;
const S_K: usize = 12;

const IV_A: u64 = 0x0180_4001_0c01_060c;
const IV_KA: u64 = 0x0280_4001_0c01_060c;
const IV_KE: u64 = 0x0380_4001_0c01_060c;

fn load_be(bytes: &[u8]) -> u64 {
    let mut buf = [0u8; 8];
    buf.copy_from_slice(&bytes[..8]);
    u64::from_be_bytes(buf)
}

fn halves(v: &[u8; 16]) -> (u64, u64) {
    (load_be(&v[..8]), load_be(&v[8..]))
}

/// Re-keying function: absorbs `y` one bit at a time to derive a session key.
fn rekey(key: &[u8; 16], iv: u64, y: &[u8; 16]) -> AsconState {
    let (k0, k1) = halves(key);
    let mut s = AsconState([k0, k1, iv, 0, 0]);
    s.permute(S_K);
    for (i, &byte) in y.iter().enumerate() {
        for bit in 0..8 {
            s.0[0] ^= u64::from((byte >> (7 - bit)) & 1) << 63;
            let last = i == 15 && bit == 7;
            if !last {
                s.permute(S_B);
            }
        }
    }
    s.permute(S_K);
    s
}

fn absorb_lanes(s: &mut AsconState, data: &[u8]) {
    let mut chunks = data.chunks_exact(8);
    for chunk in &mut chunks {
        s.0[0] ^= load_be(chunk);
        s.permute(S_H);
    }
    let rem = chunks.remainder();
    let mut last = [0u8; 8];
    last[..rem.len()].copy_from_slice(rem);
    last[rem.len()] = 0x80;
    s.0[0] ^= u64::from_be_bytes(last);
    s.permute(S_H);
}

pub fn mac(key: &[u8; 16], nonce: &[u8; 16], ad: &[u8], ct: &[u8]) -> [u8; 16] {
    let (n0, n1) = halves(nonce);
    let mut s = AsconState([n0, n1, IV_A, 0, 0]);
    s.permute(S_H);
    absorb_lanes(&mut s, ad);
    s.0[4] ^= 1;
    absorb_lanes(&mut s, ct);

    let mut y = [0u8; 16];
    y[..8].copy_from_slice(&s.0[0].to_be_bytes());
    y[8..].copy_from_slice(&s.0[1].to_be_bytes());
    let k = rekey(key, IV_KA, &y);
    s.0[0] = k.0[0];
    s.0[1] = k.0[1];
    s.permute(S_H);

    let mut tag = [0u8; 16];
    tag[..8].copy_from_slice(&s.0[0].to_be_bytes());
    tag[8..].copy_from_slice(&s.0[1].to_be_bytes());
    tag
}

/// Keystream encryption; the same call decrypts.
pub fn crypt(key: &[u8; 16], nonce: &[u8; 16], data: &mut [u8]) {
    if data.is_empty() {
        return;
    }
    let k = rekey(key, IV_KE, nonce);
    let (n0, n1) = halves(nonce);
    let mut s = AsconState([k.0[0], k.0[1], k.0[2], n0, n1]);
    for block in data.chunks_mut(8) {
        s.permute(S_E);
        let ks = s.0[0].to_be_bytes();
        for (b, k) in block.iter_mut().zip(ks.iter()) {
            *b ^= k;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_kat_row() {
        let key: [u8; 16] = core::array::from_fn(|i| i as u8);
        let tag = mac(&key, &key, &[], &[]);
        assert_eq!(hex::encode_upper(tag), "7B94EF35AE55AB272C9C44D6C1CF0102");
    }

    #[test]
    fn crypt_is_involution() {
        let key = [7u8; 16];
        let nonce = [9u8; 16];
        let msg: Vec<u8> = (0..37).collect();
        let mut buf = msg.clone();
        crypt(&key, &nonce, &mut buf);
        assert_ne!(buf, msg);
        crypt(&key, &nonce, &mut buf);
        assert_eq!(buf, msg);
    }
}
