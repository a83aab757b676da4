use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shuffled `0..n` for `(seed, stream, epoch)`.
pub fn permutation(n: usize, seed: u64, stream: u64, epoch: u64) -> Vec<usize> {
    let mixed = seed
        ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ epoch.wrapping_add(1).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(mixed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

fn check_batch(n: usize, k: usize) -> Result<()> {
    if k == 0 || k > n {
        return Err(Error::Data(format!("batch size {k} must lie in 1..={n} (dataset size)")));
    }
    Ok(())
}

/// One epoch of `order` cut into `⌈n/k⌉` batches; the last may be short.
pub fn epoch_batches(order: &[usize], k: usize) -> Result<Vec<Vec<usize>>> {
    check_batch(order.len(), k)?;
    Ok(order.chunks(k).map(<[usize]>::to_vec).collect())
}

/// Epoch-wise batches of aligned (paired) or independently shuffled
/// (unpaired) index streams.
#[derive(Debug, Clone)]
pub struct Batcher {
    order_a: Vec<usize>,
    order_b: Vec<usize>,
    batch_size: usize,
}

impl Batcher {
    pub fn new(n: usize, batch_size: usize, shuffle_seed: u64, paired: bool, epoch: u64) -> Result<Self> {
        check_batch(n, batch_size)?;
        let order_a = permutation(n, shuffle_seed, 0, epoch);
        let order_b = if paired {
            order_a.clone()
        } else {
            permutation(n, shuffle_seed, 1, epoch)
        };
        Ok(Batcher {
            order_a,
            order_b,
            batch_size,
        })
    }

    /// Fixed orders, e.g. to pin both permutations in a test.
    pub fn from_orders(order_a: Vec<usize>, order_b: Vec<usize>, batch_size: usize) -> Result<Self> {
        if order_a.len() != order_b.len() {
            return Err(Error::Data("A and B orders differ in length".into()));
        }
        check_batch(order_a.len(), batch_size)?;
        Ok(Batcher {
            order_a,
            order_b,
            batch_size,
        })
    }

    pub fn len(&self) -> usize {
        self.order_a.len().div_ceil(self.batch_size)
    }

    pub fn is_empty(&self) -> bool {
        self.order_a.is_empty()
    }

    /// `(a_indices, b_indices)` per batch.
    pub fn batches(&self) -> impl Iterator<Item = (&[usize], &[usize])> {
        self.order_a
            .chunks(self.batch_size)
            .zip(self.order_b.chunks(self.batch_size))
    }
}

/// Endless stream of fixed-size batches over `0..n`, reshuffled every epoch.
/// A batch that crosses an epoch boundary continues into the next
/// permutation. The cursor is the whole state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexStream {
    pub n: usize,
    pub seed: u64,
    pub stream: u64,
    pub epoch: u64,
    pub position: usize,
}

impl IndexStream {
    pub fn new(n: usize, seed: u64, stream: u64) -> Self {
        IndexStream {
            n,
            seed,
            stream,
            epoch: 0,
            position: 0,
        }
    }

    pub fn next_batch(&mut self, k: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(k);
        let mut order = permutation(self.n, self.seed, self.stream, self.epoch);
        while out.len() < k {
            if self.position == self.n {
                self.epoch += 1;
                self.position = 0;
                order = permutation(self.n, self.seed, self.stream, self.epoch);
            }
            let take = (k - out.len()).min(self.n - self.position);
            out.extend_from_slice(&order[self.position..self.position + take]);
            self.position += take;
        }
        out
    }
}

/// The trainer's sampler: aligned indices when paired, two independent
/// streams otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairStream {
    pub a: IndexStream,
    pub b: Option<IndexStream>,
    pub batch_size: usize,
}

impl PairStream {
    pub fn new(n_a: usize, n_b: usize, batch_size: usize, seed: u64, paired: bool) -> Result<Self> {
        if paired && n_a != n_b {
            return Err(Error::Data(format!("paired mode needs equal domain sizes, got {n_a} and {n_b}")));
        }
        check_batch(n_a, batch_size)?;
        check_batch(n_b, batch_size)?;
        Ok(PairStream {
            a: IndexStream::new(n_a, seed, 0),
            b: (!paired).then(|| IndexStream::new(n_b, seed, 1)),
            batch_size,
        })
    }

    pub fn next_batch(&mut self) -> (Vec<usize>, Vec<usize>) {
        let a = self.a.next_batch(self.batch_size);
        let b = match &mut self.b {
            Some(s) => s.next_batch(self.batch_size),
            None => a.clone(),
        };
        (a, b)
    }
}
