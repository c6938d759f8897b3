//! Per-batch output vocabularies and the exact cosine neighbour index.
//!
//! Each batch scores against the union of the special tokens, a fresh uniform
//! sample of non-special words, every word in the batch, and optionally the
//! nearest neighbours of each masked target.

use std::cmp::Ordering;

use rand::Rng;

use crate::error::{Error, Result};
use crate::vocabulary::NUM_SPECIAL;

/// Sorted, duplicate-free global ids; a word's local column is its rank.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchVocab {
    global_ids: Vec<u32>,
    random_component: Vec<u32>,
}

impl BatchVocab {
    /// The given ids plus the specials.
    pub fn from_ids<I: IntoIterator<Item = u32>>(ids: I) -> Self {
        let mut global_ids: Vec<u32> = (0..NUM_SPECIAL).chain(ids).collect();
        global_ids.sort_unstable();
        global_ids.dedup();
        Self {
            global_ids,
            random_component: Vec::new(),
        }
    }

    pub fn full(vocab_size: usize) -> Self {
        Self::from_ids(0..vocab_size as u32)
    }

    pub fn global_ids(&self) -> &[u32] {
        &self.global_ids
    }

    /// The uniformly drawn part, in draw order.
    pub fn random_component(&self) -> &[u32] {
        &self.random_component
    }

    pub fn len(&self) -> usize {
        self.global_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.global_ids.is_empty()
    }

    pub fn local_of(&self, global: u32) -> Option<usize> {
        self.global_ids.binary_search(&global).ok()
    }

    pub fn contains(&self, global: u32) -> bool {
        self.local_of(global).is_some()
    }
}

/// Exact cosine-similarity search over an embedding table.
#[derive(Debug, Clone)]
pub struct NeighborIndex {
    rows: Vec<f32>,
    dim: usize,
    norms: Vec<f64>,
}

impl NeighborIndex {
    /// `embeddings` is a row-major `[vocab_size, dim]` table.
    pub fn new(embeddings: Vec<f32>, dim: usize) -> Result<Self> {
        if dim == 0 || !embeddings.len().is_multiple_of(dim) {
            return Err(Error::shape("neighbor_index", &[embeddings.len()], &[dim]));
        }
        let norms = embeddings
            .chunks(dim)
            .map(|r| r.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt())
            .collect();
        Ok(Self {
            rows: embeddings,
            dim,
            norms,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.norms.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn row(&self, id: usize) -> &[f32] {
        &self.rows[id * self.dim..(id + 1) * self.dim]
    }

    /// Cosine similarity; rows with zero norm score −∞.
    pub fn similarity(&self, a: usize, b: usize) -> f64 {
        let (na, nb) = (self.norms[a], self.norms[b]);
        if na == 0.0 || nb == 0.0 {
            return f64::NEG_INFINITY;
        }
        let d: f64 = self
            .row(a)
            .iter()
            .zip(self.row(b))
            .map(|(&x, &y)| x as f64 * y as f64)
            .sum();
        d / (na * nb)
    }

    /// The `k` most similar ids to `word_id`, excluding itself; ties go to
    /// the lower id. Zero-norm rows are never returned.
    pub fn nearest_words(&self, word_id: u32, k: usize) -> Result<Vec<u32>> {
        let v = self.vocab_size();
        let q = word_id as usize;
        if q >= v {
            return Err(Error::Index {
                what: "word id",
                index: q,
                bound: v,
            });
        }
        if k >= v {
            return Err(Error::contract(format!("k = {k} must be below vocab size {v}")));
        }
        if self.norms[q] == 0.0 {
            return Err(Error::contract(format!("word {word_id} has a zero-norm embedding")));
        }
        let mut scored: Vec<(f64, u32)> = (0..v)
            .filter(|&j| j != q && self.norms[j] != 0.0)
            .map(|j| (self.similarity(q, j), j as u32))
            .collect();
        let k = k.min(scored.len());
        if k == 0 {
            return Ok(Vec::new());
        }
        if scored.len() > k {
            scored.select_nth_unstable_by(k - 1, neighbor_order);
            scored.truncate(k);
        }
        scored.sort_unstable_by(neighbor_order);
        Ok(scored.into_iter().map(|(_, j)| j).collect())
    }
}

pub fn nearest_words(index: &NeighborIndex, word_id: u32, k: usize) -> Result<Vec<u32>> {
    index.nearest_words(word_id, k)
}

/// Default size of the uniform component.
pub const DEFAULT_SAMPLE_SIZE: usize = 30_000;
/// Default neighbours added per masked target.
pub const DEFAULT_NEIGHBORS: usize = 10;

/// Builds the output vocabulary for one batch.
///
/// `batch_word_ids` are the uncorrupted ids of every word in the batch.
/// The uniform component is drawn without replacement from non-special ids;
/// when `sample_size` covers all of them the result is the full vocabulary.
pub fn sample_batch_vocab<R: Rng + ?Sized>(
    batch_word_ids: &[u32],
    masked_target_ids: &[u32],
    vocab_size: usize,
    sample_size: usize,
    neighbors: Option<(&NeighborIndex, usize)>,
    rng: &mut R,
) -> Result<BatchVocab> {
    if sample_size == 0 {
        return Err(Error::contract("sample_size must be at least 1"));
    }
    if vocab_size < NUM_SPECIAL as usize {
        return Err(Error::contract(format!("vocab size {vocab_size} below special count")));
    }
    if let Some(&bad) = batch_word_ids
        .iter()
        .chain(masked_target_ids)
        .find(|&&id| id as usize >= vocab_size)
    {
        return Err(Error::Index {
            what: "word id",
            index: bad as usize,
            bound: vocab_size,
        });
    }
    let pool = vocab_size - NUM_SPECIAL as usize;
    let random_component: Vec<u32> = if sample_size >= pool {
        (NUM_SPECIAL..vocab_size as u32).collect()
    } else {
        rand::seq::index::sample(rng, pool, sample_size)
            .into_iter()
            .map(|i| i as u32 + NUM_SPECIAL)
            .collect()
    };
    let mut ids = random_component.clone();
    ids.extend_from_slice(batch_word_ids);
    ids.extend_from_slice(masked_target_ids);
    if let Some((index, k)) = neighbors {
        if index.vocab_size() != vocab_size {
            return Err(Error::contract(format!(
                "neighbor index covers {} words, vocabulary has {vocab_size}",
                index.vocab_size()
            )));
        }
        let mut targets = masked_target_ids.to_vec();
        targets.sort_unstable();
        targets.dedup();
        for t in targets {
            ids.extend(index.nearest_words(t, k)?);
        }
    }
    let mut bv = BatchVocab::from_ids(ids);
    bv.random_component = random_component;
    Ok(bv)
}

/// Local column of every target; a missing target means the sampler broke
/// its coverage guarantee.
pub fn remap_targets(global_targets: &[u32], bv: &BatchVocab) -> Result<Vec<usize>> {
    global_targets
        .iter()
        .map(|&g| {
            bv.local_of(g).ok_or_else(|| {
                Error::contract(format!("target {g} missing from batch vocabulary"))
            })
        })
        .collect()
}

/// Orders `(similarity, id)` pairs: similarity descending, id ascending.
pub fn neighbor_order(a: &(f64, u32), b: &(f64, u32)) -> Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}
