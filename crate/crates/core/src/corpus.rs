//! Seeded synthetic token streams for perplexity evaluation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// First-order Markov source over `vocab` tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BigramSource {
    pub vocab: usize,
    /// Row-stochastic `[vocab × vocab]` transition table.
    pub probs: Vec<f64>,
}

impl BigramSource {
    /// Each row puts most mass on `fanout` successors drawn at random.
    pub fn random(vocab: usize, fanout: usize, seed: u64) -> Result<Self> {
        if vocab == 0 || fanout == 0 {
            return Err(Error::Config {
                field: "corpus".into(),
                reason: "vocab and fanout must be positive".into(),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut probs = vec![0.0; vocab * vocab];
        for r in 0..vocab {
            let row = &mut probs[r * vocab..(r + 1) * vocab];
            row.iter_mut().for_each(|p| *p = 0.01);
            for _ in 0..fanout {
                row[rng.random_range(0..vocab)] += rng.random_range(1.0..4.0);
            }
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|p| *p /= s);
        }
        Ok(BigramSource { vocab, probs })
    }

    pub fn prob(&self, from: usize, to: usize) -> f64 {
        self.probs[from * self.vocab + to]
    }

    pub fn sample(&self, len: usize, seed: u64) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(len);
        let mut cur = rng.random_range(0..self.vocab);
        for _ in 0..len {
            out.push(cur);
            let u: f64 = rng.random();
            let row = &self.probs[cur * self.vocab..(cur + 1) * self.vocab];
            let mut acc = 0.0;
            let mut next = self.vocab - 1;
            for (i, p) in row.iter().enumerate() {
                acc += p;
                if u < acc {
                    next = i;
                    break;
                }
            }
            cur = next;
        }
        out
    }

    /// Perplexity of the source itself on `tokens`.
    pub fn perplexity(&self, tokens: &[usize]) -> Result<f64> {
        if tokens.len() < 2 {
            return Err(Error::EmptyStream {
                need: 2,
                got: tokens.len(),
            });
        }
        let nll: f64 = tokens.windows(2).map(|w| -self.prob(w[0], w[1]).ln()).sum();
        Ok((nll / (tokens.len() - 1) as f64).exp())
    }
}

/// Uniformly random tokens.
pub fn uniform_tokens(vocab: usize, len: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.random_range(0..vocab)).collect()
}
