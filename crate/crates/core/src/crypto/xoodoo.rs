//! The Xoodoo[n] permutation on a 384-bit state.
//!
//! The state is three planes of four 32-bit lanes. Bytes map to lanes in
//! little-endian order, lane `4 * y + x` holding bytes `16 * y + 4 * x ..`.

pub const STATE_BYTES: usize = 48;
pub const MAX_ROUNDS: usize = 12;

const ROUND_CONSTANTS: [u32; MAX_ROUNDS] = [
    0x0000_0058,
    0x0000_0038,
    0x0000_03c0,
    0x0000_00d0,
    0x0000_0120,
    0x0000_0014,
    0x0000_0060,
    0x0000_002c,
    0x0000_0380,
    0x0000_00f0,
    0x0000_01a0,
    0x0000_0012,
];

type Plane = [u32; 4];

#[derive(Clone, Default, PartialEq, Eq)]
pub struct Xoodoo {
    planes: [Plane; 3],
}

impl std::fmt::Debug for Xoodoo {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Xoodoo({})", hex::encode(self.bytes()))
    }
}

impl Xoodoo {
    pub fn from_bytes(bytes: [u8; STATE_BYTES]) -> Self {
        let mut planes = [[0u32; 4]; 3];
        for (i, chunk) in bytes.chunks_exact(4).enumerate() {
            planes[i / 4][i % 4] = u32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        }
        Self { planes }
    }

    pub fn bytes(&self) -> [u8; STATE_BYTES] {
        let mut out = [0u8; STATE_BYTES];
        for (i, chunk) in out.chunks_exact_mut(4).enumerate() {
            chunk.copy_from_slice(&self.planes[i / 4][i % 4].to_le_bytes());
        }
        out
    }

    #[inline(always)]
    fn lane_mut(&mut self, i: usize) -> &mut u32 {
        &mut self.planes[i / 4][i % 4]
    }

    #[inline(always)]
    fn lane(&self, i: usize) -> u32 {
        self.planes[i / 4][i % 4]
    }

    /// XORs `data` into the state starting at byte `offset`.
    #[inline]
    pub fn xor_in(&mut self, offset: usize, data: &[u8]) {
        debug_assert_eq!(offset % 4, 0);
        let mut lane = offset / 4;
        let mut chunks = data.chunks_exact(4);
        for c in &mut chunks {
            *self.lane_mut(lane) ^= u32::from_le_bytes([c[0], c[1], c[2], c[3]]);
            lane += 1;
        }
        for (j, &b) in chunks.remainder().iter().enumerate() {
            *self.lane_mut(lane) ^= u32::from(b) << (8 * j);
        }
    }

    #[inline]
    pub fn xor_byte(&mut self, offset: usize, b: u8) {
        *self.lane_mut(offset / 4) ^= u32::from(b) << (8 * (offset % 4));
    }

    /// Copies the first `out.len()` state bytes into `out`.
    #[inline]
    pub fn extract(&self, out: &mut [u8]) {
        let mut chunks = out.chunks_exact_mut(4);
        let mut lane = 0;
        for c in &mut chunks {
            c.copy_from_slice(&self.lane(lane).to_le_bytes());
            lane += 1;
        }
        let rem = chunks.into_remainder();
        if !rem.is_empty() {
            let w = self.lane(lane).to_le_bytes();
            let n = rem.len();
            rem.copy_from_slice(&w[..n]);
        }
    }

    /// Full 12-round permutation.
    #[inline]
    pub fn permute(&mut self) {
        self.permute_rounds(MAX_ROUNDS);
    }

    /// Applies the last `rounds` rounds of Xoodoo; `rounds` must be at most 12.
    pub fn permute_rounds(&mut self, rounds: usize) {
        assert!(rounds <= MAX_ROUNDS, "xoodoo supports at most 12 rounds");
        for &rc in &ROUND_CONSTANTS[MAX_ROUNDS - rounds..] {
            round(&mut self.planes, rc);
        }
    }
}

#[inline(always)]
fn round(a: &mut [Plane; 3], rc: u32) {
    // theta
    let mut p = [0u32; 4];
    for x in 0..4 {
        p[x] = a[0][x] ^ a[1][x] ^ a[2][x];
    }
    let mut e = [0u32; 4];
    for x in 0..4 {
        let q = p[(x + 3) % 4];
        e[x] = q.rotate_left(5) ^ q.rotate_left(14);
    }
    for plane in a.iter_mut() {
        for x in 0..4 {
            plane[x] ^= e[x];
        }
    }

    // rho-west
    a[1] = [a[1][3], a[1][0], a[1][1], a[1][2]];
    for lane in a[2].iter_mut() {
        *lane = lane.rotate_left(11);
    }

    // iota
    a[0][0] ^= rc;

    // chi
    let mut b = [[0u32; 4]; 3];
    for x in 0..4 {
        b[0][x] = !a[1][x] & a[2][x];
        b[1][x] = !a[2][x] & a[0][x];
        b[2][x] = !a[0][x] & a[1][x];
    }
    for y in 0..3 {
        for x in 0..4 {
            a[y][x] ^= b[y][x];
        }
    }

    // rho-east
    for lane in a[1].iter_mut() {
        *lane = lane.rotate_left(1);
    }
    let w = a[2];
    a[2] = [
        w[2].rotate_left(8),
        w[3].rotate_left(8),
        w[0].rotate_left(8),
        w[1].rotate_left(8),
    ];
}
