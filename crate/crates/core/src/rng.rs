//! Reproducible, splittable random streams.
//!
//! A stream is identified by `(root_seed, stream_id)`. The root seed keys a
//! ChaCha8 generator and the stream id selects one of its 2^64 independent
//! stream positions, so replicas never overlap and any replica can be
//! regenerated in isolation.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct RngStream {
    root_seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(root_seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(root_seed);
        rng.set_stream(stream_id);
        Self {
            root_seed,
            stream_id,
            rng,
        }
    }

    pub fn root_seed(&self) -> u64 {
        self.root_seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Derives a fresh family of streams keyed by this stream's identity and
    /// `tag`, then returns member `index` of that family.
    ///
    /// Used to give every sub-task (replica, chain, jump-sample set) its own
    /// stream without coordinating ids across modules.
    pub fn fork(&self, tag: u64, index: u64) -> RngStream {
        let key = splitmix64(splitmix64(self.root_seed ^ splitmix64(self.stream_id)) ^ tag);
        RngStream::new(key, index)
    }
}

impl RngCore for RngStream {
    #[inline]
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    #[inline]
    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
