//! Inputs shared by the benchmarks.

use gameon_core::io::{synth_samples, SynthMode};
use gameon_core::model::{ModelConfig, ModelInput, SampleGraphs, Variant};
use gameon_core::Result;

/// A batch of `n` crossmodal synthetic samples prepared for `variant`.
pub fn synthetic_batch(variant: Variant, n: usize, seed: u64) -> Result<(ModelInput<f32>, Vec<usize>)> {
    let config = ModelConfig::default().with_variant(variant);
    let samples = synth_samples(seed, n, SynthMode::Crossmodal)?;
    let graphs = samples
        .iter()
        .map(|(b, _)| SampleGraphs::<f32>::from_bundle(b, config.self_loops)?.for_variant(variant))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<_> = graphs.iter().collect();
    let labels = samples.iter().map(|(b, _)| b.label as usize).collect();
    Ok((ModelInput::batch(&refs)?, labels))
}
