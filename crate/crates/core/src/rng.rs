//! Splittable counter-based random streams.
//!
//! Every random quantity in this crate is a pure function of a stream seed
//! and a counter position. A stream's `k`-th word is the splitmix64
//! finalizer applied to `seed + (k+1)*GOLDEN`, so any worker can address any
//! position of any stream directly; parallel schedules cannot change the
//! numbers. Child streams are derived by hashing a tag into the parent seed.
//!
//! Convention used across the crate: a consumer that hands work to several
//! sub-consumers derives one child stream per sub-consumer (tag = index) and
//! never shares a seed between two different consumers.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;
const SPLIT_SALT: u64 = 0x6A09_E667_F3BC_C909;

/// splitmix64 finalizer: bijective mix of a 64-bit word.
#[inline]
pub fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// The `index`-th 64-bit word of stream `seed`.
#[inline]
pub fn value_at(seed: u64, index: u64) -> u64 {
    mix(seed.wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN)))
}

/// The `index`-th uniform variate of stream `seed`, in the half-open
/// interval (0, 1]. Strictly positive so inverse-transform samplers never
/// see a zero.
#[inline]
pub fn unit_at(seed: u64, index: u64) -> f64 {
    // 53 high bits, shifted into (0, 1].
    ((value_at(seed, index) >> 11) as f64 + 1.0) * (1.0 / 9_007_199_254_740_992.0)
}

/// Seed of the `tag`-th child stream of `seed`. Distinct (seed, tag) pairs
/// collide only by 64-bit accident; the salt separates this map from
/// `value_at`.
#[inline]
pub fn substream(seed: u64, tag: u64) -> u64 {
    mix(seed ^ mix(tag.wrapping_mul(GOLDEN) ^ SPLIT_SALT))
}

/// Sequential cursor over one stream. Implements [`rand::RngCore`] so
/// `rand_distr` distributions (Poisson) can draw from it.
#[derive(Clone, Debug)]
pub struct Stream {
    seed: u64,
    counter: u64,
}

impl Stream {
    pub fn new(seed: u64) -> Self {
        Stream { seed, counter: 0 }
    }

    /// Child stream; independent of this cursor's position.
    pub fn substream(&self, tag: u64) -> Stream {
        Stream::new(substream(self.seed, tag))
    }

    #[inline]
    pub fn next_u64_value(&mut self) -> u64 {
        let v = value_at(self.seed, self.counter);
        self.counter += 1;
        v
    }

    /// Next uniform in (0, 1].
    #[inline]
    pub fn next_unit(&mut self) -> f64 {
        ((self.next_u64_value() >> 11) as f64 + 1.0) * (1.0 / 9_007_199_254_740_992.0)
    }
}

impl rand::RngCore for Stream {
    fn next_u32(&mut self) -> u32 {
        (self.next_u64_value() >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        self.next_u64_value()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        for chunk in dest.chunks_mut(8) {
            let bytes = self.next_u64_value().to_le_bytes();
            chunk.copy_from_slice(&bytes[..chunk.len()]);
        }
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        self.fill_bytes(dest);
        Ok(())
    }
}
