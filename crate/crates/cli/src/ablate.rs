use gameon_core::io::{DatasetManifest, SampleBundle, Split};
use gameon_core::model::Variant;
use gameon_core::train::{evaluate, prepare, train};
use gameon_core::Result;
use log::info;
use serde::Serialize;

use crate::config::RunConfig;

/// Test-split scores of one variant.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub label: &'static str,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub best_epoch: Option<usize>,
}

/// Trains every variant on the train split (selecting on val when present)
/// and scores it on the test split. All variants start from the same seed.
pub fn run_ablation(manifest: &DatasetManifest, config: &RunConfig, seed: u64) -> Result<Vec<AblationRow>> {
    let train_b = manifest.load_split(Split::Train)?;
    let val_b = if manifest.count(Split::Val) > 0 {
        Some(manifest.load_split(Split::Val)?)
    } else {
        None
    };
    let test_b = manifest.load_split(Split::Test)?;
    run_ablation_on(&train_b, val_b.as_deref(), &test_b, config, seed)
}

/// As [`run_ablation`] on bundles already in memory.
pub fn run_ablation_on(
    train_b: &[SampleBundle],
    val_b: Option<&[SampleBundle]>,
    test_b: &[SampleBundle],
    config: &RunConfig,
    seed: u64,
) -> Result<Vec<AblationRow>> {
    let mut train_config = config.train.clone();
    train_config.seed = seed;
    Variant::ALL
        .iter()
        .map(|&variant| {
            let model_config = config.model.clone().with_variant(variant);
            let tr = prepare(train_b, &model_config)?;
            let va = val_b.map(|v| prepare(v, &model_config)).transpose()?;
            let te = prepare(test_b, &model_config)?;
            let outcome = train(&model_config, &train_config, &tr, va.as_deref())?;
            let m = evaluate(&outcome.best, &te)?;
            info!("{}: test accuracy {:.4} f1 {:.4}", variant.label(), m.accuracy, m.f1);
            Ok(AblationRow {
                variant,
                label: variant.label(),
                accuracy: m.accuracy,
                precision: m.precision,
                recall: m.recall,
                f1: m.f1,
                best_epoch: outcome.history.best_epoch,
            })
        })
        .collect()
}

/// Tab-separated table with one row per variant.
pub fn ablation_tsv(rows: &[AblationRow]) -> String {
    let mut out = String::from("variant\taccuracy\tf1\n");
    for r in rows {
        out.push_str(&format!("{}\t{:.4}\t{:.4}\n", r.label, r.accuracy, r.f1));
    }
    out
}
