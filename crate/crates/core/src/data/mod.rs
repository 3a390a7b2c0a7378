//! Registered visible/infrared pairs on disk, a synthetic pair generator and seeded
//! batching.
//!
//! A dataset root holds `vi/` and `ir/` directories of PNGs; pairs are matched by file
//! stem.

mod batch;
mod synth;

pub(crate) use batch::mix_seed;
pub use batch::{batch_iter, Batch, BatchIter, Crop, EpochSampler};
pub use synth::{synth_pair, synth_pairs, SynthOptions, GENERATOR_VERSION};

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{luma, read_png, Image, Range};
use crate::metrics::png_stems;

pub const VISIBLE_DIR: &str = "vi";
pub const INFRARED_DIR: &str = "ir";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub stem: String,
    pub path_v: PathBuf,
    pub path_i: PathBuf,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSet {
    pub records: Vec<PairRecord>,
    pub seed: u64,
    /// Orphaned files found while scanning.
    pub warnings: Vec<String>,
}

/// One registered pair in memory, both as gray unit-range images of equal size.
#[derive(Debug, Clone, PartialEq)]
pub struct Pair {
    pub stem: String,
    pub visible: Image,
    pub infrared: Image,
}

/// Matches `root/vi/*.png` with `root/ir/*.png` by stem, in lexicographic order. Files
/// without a partner are reported as warnings, not errors.
pub fn scan_pairs(root: impl AsRef<Path>) -> Result<PairSet> {
    let root = root.as_ref();
    let (dv, di) = (root.join(VISIBLE_DIR), root.join(INFRARED_DIR));
    for d in [&dv, &di] {
        if !d.is_dir() {
            return Err(Error::Data(format!("missing directory {}", d.display())));
        }
    }
    let sv = png_stems(&dv)?;
    let si = png_stems(&di)?;
    let mut warnings = Vec::new();
    for s in sv.symmetric_difference(&si) {
        let side = if sv.contains(s) { VISIBLE_DIR } else { INFRARED_DIR };
        let msg = format!("{s}.png only present in {side}/");
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let records = sv
        .intersection(&si)
        .map(|s| PairRecord {
            stem: s.clone(),
            path_v: dv.join(format!("{s}.png")),
            path_i: di.join(format!("{s}.png")),
            split: Split::Train,
        })
        .collect();
    Ok(PairSet {
        records,
        seed: 0,
        warnings,
    })
}

impl PairSet {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Tags the last `test` records (in stem order) as held out.
    pub fn with_holdout(mut self, test: usize) -> Result<Self> {
        let n = self.records.len();
        if test > n {
            return Err(Error::Config(format!("holdout of {test} exceeds {n} pairs")));
        }
        for (k, r) in self.records.iter_mut().enumerate() {
            r.split = if k >= n - test { Split::Test } else { Split::Train };
        }
        Ok(self)
    }

    pub fn subset(&self, split: Split) -> PairSet {
        PairSet {
            records: self
                .records
                .iter()
                .filter(|r| r.split == split)
                .cloned()
                .collect(),
            seed: self.seed,
            warnings: Vec::new(),
        }
    }

    /// Reads every pair as luma in unit range. Both images are center-cropped to their
    /// common size; dimension differences larger than that are left to the caller.
    pub fn load(&self) -> Result<Vec<Pair>> {
        self.records
            .iter()
            .map(|r| {
                let v = luma(&read_png(&r.path_v, Range::Unit)?)?;
                let i = luma(&read_png(&r.path_i, Range::Unit)?)?;
                let h = v.height().min(i.height());
                let w = v.width().min(i.width());
                Ok(Pair {
                    stem: r.stem.clone(),
                    visible: v.center_crop(h, w)?,
                    infrared: i.center_crop(h, w)?,
                })
            })
            .collect()
    }
}

/// Both modalities of every pair, visible first: the corpus used for encoder and decoder
/// pretraining.
pub fn pretraining_corpus(pairs: &[Pair]) -> Vec<Image> {
    pairs
        .iter()
        .flat_map(|p| [p.visible.clone(), p.infrared.clone()])
        .collect()
}
