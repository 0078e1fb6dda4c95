//! Portable random streams.
//!
//! Every stream is a xoshiro256++ generator whose 256-bit state is expanded
//! from a 64-bit seed with SplitMix64. Gaussian variates come from the
//! Box–Muller transform over 53-bit uniforms, so a seed reproduces the same
//! bits on every platform.
//!
//! Named child seeds are derived from a master seed as the first eight bytes
//! (little endian) of `SHA-256(master_le || name)`.

use rand::{Rng, RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use sha2::{Digest, Sha256};
use std::f64::consts::PI;

pub type Stream = Xoshiro256PlusPlus;

pub fn stream(seed: u64) -> Stream {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

pub fn child_seed(master: u64, name: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(name.as_bytes());
    let out = h.finalize();
    u64::from_le_bytes(out[..8].try_into().expect("sha256 output is 32 bytes"))
}

/// SplitMix64 output function.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform in [0, 1) from the top 53 bits.
pub fn unit_open(bits: u64) -> f64 {
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform in (0, 1]; safe as a logarithm argument.
pub fn unit_closed(bits: u64) -> f64 {
    ((bits >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
}

pub fn box_muller(u1: f64, u2: f64) -> (f64, f64) {
    let r = (-2.0 * u1.ln()).sqrt();
    let a = 2.0 * PI * u2;
    (r * a.cos(), r * a.sin())
}

pub fn uniform<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    unit_open(rng.next_u64())
}

pub fn index<R: RngCore + ?Sized>(rng: &mut R, n: usize) -> usize {
    rng.random_range(0..n as u64) as usize
}

/// Fills `out` with standard normals, two per pair of uniforms. An odd tail
/// consumes a full pair and drops the sine branch.
pub fn fill_normal<R: RngCore + ?Sized>(rng: &mut R, out: &mut [f64]) {
    let mut chunks = out.chunks_exact_mut(2);
    for pair in &mut chunks {
        let u1 = unit_closed(rng.next_u64());
        let u2 = unit_open(rng.next_u64());
        let (a, b) = box_muller(u1, u2);
        pair[0] = a;
        pair[1] = b;
    }
    if let [last] = chunks.into_remainder() {
        let u1 = unit_closed(rng.next_u64());
        let u2 = unit_open(rng.next_u64());
        *last = box_muller(u1, u2).0;
    }
}

pub fn normal<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    let mut v = [0.0];
    fill_normal(rng, &mut v);
    v[0]
}

/// Fisher–Yates shuffle driven by [`index`].
pub fn shuffle<T, R: RngCore + ?Sized>(rng: &mut R, items: &mut [T]) {
    for i in (1..items.len()).rev() {
        let j = index(rng, i + 1);
        items.swap(i, j);
    }
}

/// A stream that counts the 64-bit words it hands out, so traces can record
/// how far each stream advanced.
pub struct Counted {
    inner: Stream,
    words: u64,
}

impl Counted {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: stream(seed),
            words: 0,
        }
    }

    pub fn position(&self) -> u64 {
        self.words
    }
}

impl RngCore for Counted {
    fn next_u32(&mut self) -> u32 {
        self.words += 1;
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.words += 1;
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.words += dst.len().div_ceil(8) as u64;
        self.inner.fill_bytes(dst)
    }
}

/// Counter-based standard normal: a pure function of `(seed, row, col)`.
pub fn counter_normal(seed: u64, row: u64, col: u64) -> f64 {
    let pair = col / 2;
    let base = mix64(mix64(seed ^ 0x5EED_BA4C) ^ row);
    let u1 = unit_closed(mix64(base ^ (2 * pair)));
    let u2 = unit_open(mix64(base ^ (2 * pair + 1) ^ 0xA5A5_A5A5_0000_0000));
    let (a, b) = box_muller(u1, u2);
    if col % 2 == 0 {
        a
    } else {
        b
    }
}
