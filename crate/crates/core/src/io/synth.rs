//! Synthetic feature bundles for desk-scale verification.
//!
//! Randomness comes from ChaCha8 seeded with `seed_from_u64`, consumed only
//! through `next_u32`/`next_u64`. Integers become floats by exact scaling
//! (24 random bits times 2⁻²⁴), and sampling without replacement is a partial
//! Fisher-Yates shuffle with multiply-shift bounded draws. Nothing depends on
//! platform math libraries, so a seed reproduces the same bytes everywhere.
//!
//! Two modes:
//!
//! * `separable`: the label is a fixed linear direction added to the global
//!   text row with a margin larger than the worst-case noise projection, so a
//!   linear probe on that row is exact.
//! * `crossmodal`: every sample plants fresh random code vectors in its text
//!   nodes and its visual nodes. A sample is fake (label 1) exactly when one
//!   visual code is a copy of one text code. Each modality on its own is a set
//!   of independent random codes whatever the label; the label only shows in
//!   how the two modalities relate.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::bundle::{write_bundle, SampleBundle};
use super::manifest::{write_manifest, DatasetManifest, ManifestRecord, Split};
use crate::error::{Error, Result};
use crate::graph::{TEXT_DIM, VISUAL_RAW_DIM};
use crate::tensor::Tensor;

/// File name of the manifest written next to the bundles.
pub const MANIFEST_FILE: &str = "manifest.jsonl";

/// Norm of the label direction in `separable` mode.
pub const SEPARABLE_MARGIN: f32 = 16.0;
/// Half-width of the uniform noise in `separable` mode.
pub const SEPARABLE_NOISE: f32 = 0.5;

/// Code nodes per modality in `crossmodal` mode (plus one global node).
pub const CODES_PER_MODALITY: usize = 2;
/// Code values are piecewise constant over this many blocks, which adaptive
/// pooling from 2048 to 768 maps exactly (8 raw values to 3 pooled ones).
pub const CODE_BLOCKS: usize = 256;
/// Half-width of per-node noise in `crossmodal` mode.
pub const CROSSMODAL_NOISE: f32 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SynthMode {
    Separable,
    Crossmodal,
}

impl fmt::Display for SynthMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SynthMode::Separable => "separable",
            SynthMode::Crossmodal => "crossmodal",
        })
    }
}

impl FromStr for SynthMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "separable" => Ok(SynthMode::Separable),
            "crossmodal" => Ok(SynthMode::Crossmodal),
            other => Err(Error::Validation(format!(
                "unknown synthetic mode {other:?}; expected separable or crossmodal"
            ))),
        }
    }
}

/// Integer-driven sampler over ChaCha8.
pub struct Draw(ChaCha8Rng);

impl Draw {
    pub fn new(seed: u64) -> Self {
        Self(ChaCha8Rng::seed_from_u64(seed))
    }

    /// Uniform in `[0, 1)` on a 2⁻²⁴ grid.
    pub fn unit(&mut self) -> f32 {
        (self.0.next_u32() >> 8) as f32 * (1.0 / 16_777_216.0)
    }

    /// Uniform in `[-half_width, half_width)`.
    pub fn symmetric(&mut self, half_width: f32) -> f32 {
        (2.0 * self.unit() - 1.0) * half_width
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        ((self.0.next_u64() as u128 * n as u128) >> 64) as usize
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            items.swap(i, self.below(i + 1));
        }
    }

    /// `k` distinct items of `pool`, in draw order.
    pub fn choose(&mut self, pool: &[usize], k: usize) -> Vec<usize> {
        let mut pool = pool.to_vec();
        for i in 0..k {
            let j = i + self.below(pool.len() - i);
            pool.swap(i, j);
        }
        pool.truncate(k);
        pool
    }
}

/// Unit-norm label direction of `separable` mode for a seed.
pub fn separable_direction(seed: u64) -> Vec<f32> {
    let mut draw = Draw::new(seed ^ 0x5EED_D1EC);
    let scale = 1.0 / (TEXT_DIM as f32).sqrt();
    (0..TEXT_DIM)
        .map(|_| if draw.0.next_u32() & 1 == 0 { scale } else { -scale })
        .collect()
}

/// Balanced labels in shuffled order with a stratified 80/10/10 split.
fn labels_and_splits(draw: &mut Draw, n: usize) -> Vec<(u8, Split)> {
    let mut out = Vec::with_capacity(n);
    for label in [0u8, 1] {
        let m = n / 2;
        let n_train = (m * 8 + 5) / 10;
        let n_val = (m + 5) / 10;
        for k in 0..m {
            let split = if k < n_train {
                Split::Train
            } else if k < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
            out.push((label, split));
        }
    }
    draw.shuffle(&mut out);
    out
}

fn noise_rows(draw: &mut Draw, rows: usize, width: usize, half_width: f32) -> Vec<f32> {
    (0..rows * width).map(|_| draw.symmetric(half_width)).collect()
}

fn separable_sample(draw: &mut Draw, direction: &[f32], label: u8) -> (Vec<f32>, Vec<f32>, usize, usize) {
    let n_text = 1 + draw.below(4);
    let n_visual = 1 + draw.below(3);
    let mut text = noise_rows(draw, n_text, TEXT_DIM, SEPARABLE_NOISE);
    let sign = if label == 1 { 1.0 } else { -1.0 };
    for (t, &u) in text[..TEXT_DIM].iter_mut().zip(direction) {
        *t += sign * SEPARABLE_MARGIN * u;
    }
    let visual = noise_rows(draw, n_visual, VISUAL_RAW_DIM, SEPARABLE_NOISE);
    (text, visual, n_text, n_visual)
}

/// A fresh code: `CODE_BLOCKS` values in `[-1, 1)`.
fn fresh_code(draw: &mut Draw) -> Vec<f32> {
    (0..CODE_BLOCKS).map(|_| draw.symmetric(1.0)).collect()
}

/// Expands block values to `width` and adds noise.
fn code_row(draw: &mut Draw, blocks: &[f32], width: usize) -> Vec<f32> {
    let repeat = width / CODE_BLOCKS;
    (0..width)
        .map(|j| blocks[j / repeat] + draw.symmetric(CROSSMODAL_NOISE))
        .collect()
}

/// Global row (mean of the codes) followed by one row per code.
fn modality_rows(draw: &mut Draw, codes: &[Vec<f32>], width: usize) -> Vec<f32> {
    let code_rows: Vec<Vec<f32>> = codes.iter().map(|c| code_row(draw, c, width)).collect();
    let mut rows = Vec::with_capacity((codes.len() + 1) * width);
    for j in 0..width {
        let mean = code_rows.iter().map(|r| r[j]).sum::<f32>() / codes.len() as f32;
        rows.push(mean + draw.symmetric(CROSSMODAL_NOISE));
    }
    for r in code_rows {
        rows.extend(r);
    }
    rows
}

fn crossmodal_sample(draw: &mut Draw, label: u8) -> (Vec<f32>, Vec<f32>, usize, usize) {
    let text_codes: Vec<Vec<f32>> = (0..CODES_PER_MODALITY).map(|_| fresh_code(draw)).collect();
    let mut visual_codes: Vec<Vec<f32>> = (0..CODES_PER_MODALITY).map(|_| fresh_code(draw)).collect();
    if label == 1 {
        let shared = text_codes[draw.below(CODES_PER_MODALITY)].clone();
        visual_codes[draw.below(CODES_PER_MODALITY)] = shared;
    }
    let text = modality_rows(draw, &text_codes, TEXT_DIM);
    let visual = modality_rows(draw, &visual_codes, VISUAL_RAW_DIM);
    let n = CODES_PER_MODALITY + 1;
    (text, visual, n, n)
}

/// Generates bundles and their splits in memory.
pub fn synth_samples(seed: u64, n_samples: usize, mode: SynthMode) -> Result<Vec<(SampleBundle, Split)>> {
    if n_samples < 4 || n_samples % 2 != 0 {
        return Err(Error::Validation(format!(
            "synthetic datasets need an even sample count of at least 4, got {n_samples}"
        )));
    }
    let mut draw = Draw::new(seed);
    let plan = labels_and_splits(&mut draw, n_samples);
    let direction = separable_direction(seed);
    plan.into_iter()
        .enumerate()
        .map(|(i, (label, split))| {
            let (text, visual, n_text, n_visual) = match mode {
                SynthMode::Separable => separable_sample(&mut draw, &direction, label),
                SynthMode::Crossmodal => crossmodal_sample(&mut draw, label),
            };
            let bundle = SampleBundle {
                sample_id: format!("{mode}-{seed}-{i:05}"),
                label,
                text_features: Tensor::matrix(n_text, TEXT_DIM, text)?,
                visual_features: Tensor::matrix(n_visual, VISUAL_RAW_DIM, visual)?,
            };
            Ok((bundle, split))
        })
        .collect()
}

/// Writes `n_samples` bundles plus `manifest.jsonl` into `out_dir`.
pub fn synth_dataset(
    seed: u64,
    n_samples: usize,
    mode: SynthMode,
    out_dir: impl AsRef<Path>,
) -> Result<DatasetManifest> {
    let out_dir = out_dir.as_ref();
    let samples = synth_samples(seed, n_samples, mode)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut records = Vec::with_capacity(samples.len());
    for (bundle, split) in &samples {
        let file = format!("{}.bin", bundle.sample_id);
        write_bundle(bundle, out_dir.join(&file))?;
        records.push(ManifestRecord {
            id: bundle.sample_id.clone(),
            path: file.into(),
            label: bundle.label,
            split: *split,
        });
    }
    let manifest = DatasetManifest::new(format!("synth-{mode}-{seed}"), out_dir, records)?;
    write_manifest(&manifest, out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}
