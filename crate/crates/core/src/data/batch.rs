use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Pair;
use crate::error::{Error, Result};
use crate::imaging::Image;

/// Derives an independent stream seed from `(seed, tag, index)` (splitmix64 finalizer).
pub(crate) fn mix_seed(seed: u64, tag: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(tag.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seeded epoch-wise sampling of `0..n`: each epoch is a fresh permutation and is
/// consumed in chunks of `batch` (the last chunk of an epoch may be short).
#[derive(Debug, Clone)]
pub struct EpochSampler {
    n: usize,
    batch: usize,
    seed: u64,
    epoch: u64,
    order: Vec<usize>,
    pos: usize,
}

impl EpochSampler {
    pub fn new(n: usize, batch: usize, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::Data("cannot sample from an empty corpus".into()));
        }
        if batch == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        let mut s = Self {
            n,
            batch,
            seed,
            epoch: 0,
            order: Vec::new(),
            pos: 0,
        };
        s.reshuffle();
        Ok(s)
    }

    fn reshuffle(&mut self) {
        self.order = (0..self.n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.seed, 0xE90C, self.epoch));
        self.order.shuffle(&mut rng);
        self.pos = 0;
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn next_indices(&mut self) -> Vec<usize> {
        if self.pos >= self.n {
            self.epoch += 1;
            self.reshuffle();
        }
        let end = (self.pos + self.batch).min(self.n);
        let out = self.order[self.pos..end].to_vec();
        self.pos = end;
        out
    }
}

/// How pairs are cut down before batching; both modalities always get the same window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode", content = "size")]
pub enum Crop {
    Full,
    Center(usize),
    Random(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub stems: Vec<String>,
    pub visible: Vec<Image>,
    pub infrared: Vec<Image>,
}

/// Endless, seed-determined stream of pair batches.
pub struct BatchIter<'a> {
    pairs: &'a [Pair],
    sampler: EpochSampler,
    crop: Crop,
    rng: ChaCha8Rng,
}

impl BatchIter<'_> {
    pub fn epoch(&self) -> u64 {
        self.sampler.epoch()
    }
}

impl Iterator for BatchIter<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        let idx = self.sampler.next_indices();
        let mut b = Batch {
            stems: Vec::with_capacity(idx.len()),
            visible: Vec::with_capacity(idx.len()),
            infrared: Vec::with_capacity(idx.len()),
        };
        for k in idx {
            let p = &self.pairs[k];
            let (h, w) = p.visible.dims();
            let (v, i) = match self.crop {
                Crop::Full => (p.visible.clone(), p.infrared.clone()),
                Crop::Center(c) => (
                    p.visible.center_crop(c, c).ok()?,
                    p.infrared.center_crop(c, c).ok()?,
                ),
                Crop::Random(c) => {
                    let top = self.rng.random_range(0..=h - c);
                    let left = self.rng.random_range(0..=w - c);
                    (
                        p.visible.crop(top, left, c, c).ok()?,
                        p.infrared.crop(top, left, c, c).ok()?,
                    )
                }
            };
            b.stems.push(p.stem.clone());
            b.visible.push(v);
            b.infrared.push(i);
        }
        Some(b)
    }
}

/// Batches of registered pairs in a seeded order. Crops must fit every pair; with
/// `Crop::Full` all pairs must share one size.
pub fn batch_iter(pairs: &[Pair], batch: usize, seed: u64, crop: Crop) -> Result<BatchIter<'_>> {
    for p in pairs {
        if p.visible.dims() != p.infrared.dims() {
            return Err(Error::Data(format!("pair {} is not registered", p.stem)));
        }
        match crop {
            Crop::Full => {
                if p.visible.dims() != pairs[0].visible.dims() {
                    return Err(Error::Config(format!(
                        "pair {} differs in size; choose a crop",
                        p.stem
                    )));
                }
            }
            Crop::Center(c) | Crop::Random(c) => {
                let (h, w) = p.visible.dims();
                if c == 0 || c > h.min(w) {
                    return Err(Error::Config(format!(
                        "crop {c} does not fit pair {} ({h}x{w})",
                        p.stem
                    )));
                }
            }
        }
    }
    Ok(BatchIter {
        pairs,
        sampler: EpochSampler::new(pairs.len(), batch, seed)?,
        crop,
        rng: ChaCha8Rng::seed_from_u64(mix_seed(seed, 0xC20B, 0)),
    })
}
