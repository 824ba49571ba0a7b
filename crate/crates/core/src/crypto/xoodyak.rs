//! Xoodyak: the Cyclist mode of operation over Xoodoo[12].
//!
//! Byte-for-byte compatible with the XKCP reference, including the
//! do-while block loops (an empty absorb or crypt still processes one
//! empty block).

use zeroize::Zeroize;

use super::xoodoo::Xoodoo;

const HASH_RATE: usize = 16;
const KEYED_ABSORB_RATE: usize = 44;
const KEYED_SQUEEZE_RATE: usize = 24;

const FLAG_ZERO: u8 = 0x00;
const FLAG_ABSORB_KEY: u8 = 0x02;
const FLAG_ABSORB: u8 = 0x03;
const FLAG_SQUEEZE: u8 = 0x40;
const FLAG_CRYPT: u8 = 0x80;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Mode {
    Hash,
    Keyed,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Phase {
    Up,
    Down,
}

#[derive(Clone, Debug)]
pub struct Cyclist {
    state: Xoodoo,
    mode: Mode,
    phase: Phase,
    absorb_rate: usize,
    squeeze_rate: usize,
}

impl Cyclist {
    pub fn hash() -> Self {
        Self {
            state: Xoodoo::default(),
            mode: Mode::Hash,
            phase: Phase::Up,
            absorb_rate: HASH_RATE,
            squeeze_rate: HASH_RATE,
        }
    }

    /// Keyed instance with an empty key identifier and no counter.
    pub fn keyed(key: &[u8]) -> Self {
        assert!(key.len() < KEYED_ABSORB_RATE, "key too long for Cyclist");
        let mut c = Self {
            state: Xoodoo::default(),
            mode: Mode::Keyed,
            phase: Phase::Up,
            absorb_rate: KEYED_ABSORB_RATE,
            squeeze_rate: KEYED_SQUEEZE_RATE,
        };
        let mut block = [0u8; KEYED_ABSORB_RATE];
        block[..key.len()].copy_from_slice(key);
        // identifier length byte (the identifier is empty)
        block[key.len()] = 0;
        c.absorb_any(&block[..key.len() + 1], KEYED_ABSORB_RATE, FLAG_ABSORB_KEY);
        c
    }

    fn up(&mut self, out: Option<&mut [u8]>, cu: u8) {
        if self.mode != Mode::Hash {
            self.state.xor_byte(47, cu);
        }
        self.state.permute();
        self.phase = Phase::Up;
        if let Some(out) = out {
            self.state.extract(out);
        }
    }

    fn down(&mut self, block: &[u8], cd: u8) {
        self.state.xor_in(0, block);
        self.state.xor_byte(block.len(), 0x01);
        let flag = if self.mode == Mode::Hash { cd & 0x01 } else { cd };
        self.state.xor_byte(47, flag);
        self.phase = Phase::Down;
    }

    fn absorb_any(&mut self, data: &[u8], rate: usize, mut cd: u8) {
        let mut rest = data;
        loop {
            if self.phase != Phase::Up {
                self.up(None, FLAG_ZERO);
            }
            let n = rest.len().min(rate);
            self.down(&rest[..n], cd);
            cd = FLAG_ZERO;
            rest = &rest[n..];
            if rest.is_empty() {
                break;
            }
        }
    }

    pub fn absorb(&mut self, data: &[u8]) {
        self.absorb_any(data, self.absorb_rate, FLAG_ABSORB);
    }

    pub fn squeeze(&mut self, out: &mut [u8]) {
        let rate = self.squeeze_rate;
        let mut chunks = out.chunks_mut(rate);
        match chunks.next() {
            Some(first) => self.up(Some(first), FLAG_SQUEEZE),
            None => self.up(None, FLAG_SQUEEZE),
        }
        for chunk in chunks {
            self.down(&[], FLAG_ZERO);
            self.up(Some(chunk), FLAG_ZERO);
        }
    }

    fn crypt_in_place(&mut self, buf: &mut [u8], decrypt: bool) {
        debug_assert_eq!(self.mode, Mode::Keyed);
        let mut cu = FLAG_CRYPT;
        let mut offset = 0;
        let mut keystream = [0u8; KEYED_SQUEEZE_RATE];
        let mut plain = [0u8; KEYED_SQUEEZE_RATE];
        loop {
            let n = (buf.len() - offset).min(KEYED_SQUEEZE_RATE);
            self.up(Some(&mut keystream[..n]), cu);
            cu = FLAG_ZERO;
            let block = &mut buf[offset..offset + n];
            if !decrypt {
                plain[..n].copy_from_slice(block);
            }
            for (b, k) in block.iter_mut().zip(&keystream[..n]) {
                *b ^= k;
            }
            if decrypt {
                plain[..n].copy_from_slice(block);
            }
            self.down(&plain[..n], FLAG_ZERO);
            offset += n;
            if offset == buf.len() {
                break;
            }
        }
        plain.zeroize();
    }

    pub fn encrypt_in_place(&mut self, buf: &mut [u8]) {
        self.crypt_in_place(buf, false);
    }

    pub fn decrypt_in_place(&mut self, buf: &mut [u8]) {
        self.crypt_in_place(buf, true);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_kat_first_rows() {
        let mut h = Cyclist::hash();
        h.absorb(&[]);
        let mut d = [0u8; 32];
        h.squeeze(&mut d);
        assert_eq!(
            hex::encode_upper(d),
            "EA152F2B47BCE24EFB66C479D4ADF17BD324D806E85FF75EE369EE50DC8F8BD1"
        );

        let mut h = Cyclist::hash();
        h.absorb(&[0x00]);
        h.squeeze(&mut d);
        assert_eq!(
            hex::encode_upper(d),
            "27921F8DDF392894460B70B3ED6C091E6421B7D2147DCD6031D7EFEBAD3030CC"
        );
    }

    #[test]
    fn aead_kat_first_row() {
        let key: Vec<u8> = (0u8..16).collect();
        let mut c = Cyclist::keyed(&key);
        c.absorb(&key);
        c.absorb(&[]);
        c.encrypt_in_place(&mut []);
        let mut tag = [0u8; 16];
        c.squeeze(&mut tag);
        assert_eq!(hex::encode_upper(tag), "4BF0E393144CB58069FC1FEBCAFCFB3C");
    }

    #[test]
    fn squeeze_is_prefix_consistent() {
        let mut a = Cyclist::hash();
        a.absorb(b"seed");
        let mut long = [0u8; 100];
        a.squeeze(&mut long);
        for n in [0usize, 1, 15, 16, 17, 33] {
            let mut b = Cyclist::hash();
            b.absorb(b"seed");
            let mut short = vec![0u8; n];
            b.squeeze(&mut short);
            assert_eq!(&long[..n], &short[..]);
        }
    }
}
