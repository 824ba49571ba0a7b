//! The Ascon permutation, 320-bit state as five big-endian 64-bit words.

const ROUND_CONSTANTS: [u64; 12] = [
    0xf0, 0xe1, 0xd2, 0xc3, 0xb4, 0xa5, 0x96, 0x87, 0x78, 0x69, 0x5a, 0x4b,
];

#[derive(Clone, Copy, Default, PartialEq, Eq, Debug)]
pub struct AsconState(pub [u64; 5]);

impl AsconState {
    /// Applies the last `rounds` rounds of Ascon-p (p^a with a = rounds).
    #[inline]
    pub fn permute(&mut self, rounds: usize) {
        debug_assert!(rounds <= 12);
        for &c in &ROUND_CONSTANTS[12 - rounds..] {
            self.round(c);
        }
    }

    #[inline(always)]
    fn round(&mut self, c: u64) {
        let [mut x0, mut x1, mut x2, mut x3, mut x4] = self.0;
        x2 ^= c;

        // substitution layer, bitsliced 5-bit S-box
        x0 ^= x4;
        x4 ^= x3;
        x2 ^= x1;
        let t0 = !x0 & x1;
        let t1 = !x1 & x2;
        let t2 = !x2 & x3;
        let t3 = !x3 & x4;
        let t4 = !x4 & x0;
        x0 ^= t1;
        x1 ^= t2;
        x2 ^= t3;
        x3 ^= t4;
        x4 ^= t0;
        x1 ^= x0;
        x0 ^= x4;
        x3 ^= x2;
        x2 = !x2;

        // linear diffusion layer
        x0 ^= x0.rotate_right(19) ^ x0.rotate_right(28);
        x1 ^= x1.rotate_right(61) ^ x1.rotate_right(39);
        x2 ^= x2.rotate_right(1) ^ x2.rotate_right(6);
        x3 ^= x3.rotate_right(10) ^ x3.rotate_right(17);
        x4 ^= x4.rotate_right(7) ^ x4.rotate_right(41);

        self.0 = [x0, x1, x2, x3, x4];
    }
}
