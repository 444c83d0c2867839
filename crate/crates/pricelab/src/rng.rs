//! Counter-based random streams.
//!
//! A stream is addressed by `(seed, stream_id)`. The same address always
//! yields the same sequence, so work split into fixed-size chunks, each with
//! its own child stream, reproduces bit for bit at any worker count.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use std::ops::Range;

/// Paths per parallel work item. Fixed so results never depend on the pool size.
pub const CHUNK: usize = 2048;

#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    inner: ChaCha8Rng,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream_id);
        RngStream { seed, stream_id, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Independent sub-stream `k` of this stream. Depends only on the address,
    /// never on how many draws were already taken.
    pub fn child(&self, k: u64) -> RngStream {
        let id = splitmix64(self.stream_id ^ splitmix64(k.wrapping_add(0x5851_F42D_4C95_7F2D)));
        RngStream::new(self.seed, id)
    }

    /// Uniform on the open interval (0, 1).
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        loop {
            let u: f64 = self.inner.random();
            if u > 0.0 {
                return u;
            }
        }
    }

    #[inline]
    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn fill_normal(&mut self, out: &mut [f64]) {
        for x in out {
            *x = self.normal();
        }
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// Chunk ranges covering `0..n`.
pub fn chunk_ranges(n: usize, chunk: usize) -> Vec<Range<usize>> {
    (0..n.div_ceil(chunk)).map(|c| c * chunk..((c + 1) * chunk).min(n)).collect()
}

/// Runs `f` over fixed chunks of `0..n` in parallel; chunk `c` receives
/// `base.child(c)`. Output order is chunk order.
pub fn par_chunks<T, F>(n: usize, base: &RngStream, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(Range<usize>, &mut RngStream) -> T + Sync + Send,
{
    chunk_ranges(n, CHUNK)
        .into_par_iter()
        .enumerate()
        .map(|(c, r)| {
            let mut s = base.child(c as u64);
            f(r, &mut s)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_address_same_sequence() {
        let mut a = RngStream::new(7, 3);
        let mut b = RngStream::new(7, 3);
        for _ in 0..10_000 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn child_ignores_parent_position() {
        let a = RngStream::new(1, 2);
        let mut b = RngStream::new(1, 2);
        for _ in 0..100 {
            b.next_u64();
        }
        assert_eq!(a.child(5).next_u64(), b.child(5).next_u64());
    }

    #[test]
    fn distinct_ids_pass_independence_screen() {
        // 2-D contingency table of paired draws from two streams, 10x10 bins.
        let mut a = RngStream::new(11, 0);
        let mut b = RngStream::new(11, 1);
        let n = 100_000;
        let mut table = [[0u32; 10]; 10];
        for _ in 0..n {
            let i = (a.uniform() * 10.0) as usize;
            let j = (b.uniform() * 10.0) as usize;
            table[i.min(9)][j.min(9)] += 1;
        }
        let e = n as f64 / 100.0;
        let chi2: f64 = table
            .iter()
            .flatten()
            .map(|&o| (o as f64 - e).powi(2) / e)
            .sum();
        // 99 dof; 0.999 quantile is about 148.2
        assert!(chi2 < 148.2, "chi2 = {chi2}");
    }

    #[test]
    fn par_chunks_independent_of_pool_size() {
        let base = RngStream::new(3, 9);
        let run = |threads| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| par_chunks(10_000, &base, |r, s| r.map(|_| s.normal()).sum::<f64>()))
        };
        let a = run(1);
        let b = run(4);
        assert_eq!(a.len(), 10_000usize.div_ceil(CHUNK));
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
