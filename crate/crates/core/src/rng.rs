//! Counter-based random numbers.
//!
//! Every random quantity in a run is a pure function of a 64-bit key and a
//! counter, so results do not depend on scheduling or thread count.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// Domain tags separating the independent families of derived values.
pub mod tags {
    pub const EDGE: u64 = 0x6564_6765;
    pub const WALK: u64 = 0x7761_6c6b;
    pub const ENV: u64 = 0x656e_7669;
    pub const SAMPLER: u64 = 0x7361_6d70;
    pub const PAIR: u64 = 0x7061_6972;
}

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hashes a sequence of words into one well-mixed word.
#[inline]
pub fn hash_words(words: &[u64]) -> u64 {
    let mut h = GOLDEN;
    for &w in words {
        h = mix64(h ^ w.wrapping_add(GOLDEN).wrapping_mul(0xD6E8_FEB8_6659_FD93));
    }
    h
}

/// Derives a child key from a parent key, a domain tag and an index.
#[inline]
pub fn derive(key: u64, tag: u64, index: u64) -> u64 {
    hash_words(&[key, tag, index])
}

/// Maps 64 random bits to a double in the open interval (0, 1).
#[inline]
pub fn unit_open(bits: u64) -> f64 {
    ((bits >> 12) as f64 + 0.5) * (1.0 / (1u64 << 52) as f64)
}

/// Key of the step stream of walk `walk` in environment `env`.
pub fn walk_key(seed: u64, env: u64, walk: u64) -> u64 {
    hash_words(&[seed, tags::WALK, env, walk])
}

/// Seed of environment number `env` derived from a master seed.
pub fn env_seed(seed: u64, env: u64) -> u64 {
    derive(seed, tags::ENV, env)
}

/// A uniform stream addressed by `(key, counter)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stream {
    key: u64,
    counter: u64,
}

impl Stream {
    pub fn new(key: u64) -> Self {
        Self { key, counter: 0 }
    }

    /// A stream positioned at `counter`.
    pub fn at(key: u64, counter: u64) -> Self {
        Self { key, counter }
    }

    pub fn key(&self) -> u64 {
        self.key
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    /// The uniform at position `counter` without moving the stream.
    #[inline]
    pub fn uniform_at(&self, counter: u64) -> f64 {
        unit_open(mix64(self.key ^ mix64(counter.wrapping_mul(GOLDEN).wrapping_add(0x2545_F491_4F6C_DD1D))))
    }

    #[inline]
    pub fn next_uniform(&mut self) -> f64 {
        let u = self.uniform_at(self.counter);
        self.counter += 1;
        u
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let v = mix64(self.key ^ mix64(self.counter.wrapping_mul(GOLDEN).wrapping_add(0x2545_F491_4F6C_DD1D)));
        self.counter += 1;
        v
    }
}

impl rand::RngCore for Stream {
    fn next_u32(&mut self) -> u32 {
        (Stream::next_u64(self) >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        Stream::next_u64(self)
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        for chunk in dest.chunks_mut(8) {
            let bytes = Stream::next_u64(self).to_le_bytes();
            chunk.copy_from_slice(&bytes[..chunk.len()]);
        }
    }
}
