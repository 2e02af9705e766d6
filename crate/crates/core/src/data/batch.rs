use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

/// Endless stream of index batches. Each epoch is a fresh permutation of
/// `0..examples`; the trailing partial batch of an epoch is dropped.
#[derive(Clone, Debug)]
pub struct Batcher {
    examples: usize,
    batch_size: usize,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
    epoch: usize,
}

impl Batcher {
    pub fn new(examples: usize, batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size == 0 || batch_size > examples {
            return Err(Error::contract(format!(
                "batch size {batch_size} invalid for {examples} examples"
            )));
        }
        Ok(Batcher {
            examples,
            batch_size,
            rng: ChaCha8Rng::seed_from_u64(seed),
            order: Vec::new(),
            cursor: usize::MAX,
            epoch: 0,
        })
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.examples / self.batch_size
    }

    /// Number of epochs started so far.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        if self.cursor == usize::MAX || self.cursor + self.batch_size > self.examples {
            self.order = (0..self.examples).collect();
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
            self.epoch += 1;
        }
        let b = self.order[self.cursor..self.cursor + self.batch_size].to_vec();
        self.cursor += self.batch_size;
        b
    }
}

impl Iterator for Batcher {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        Some(self.next_batch())
    }
}
