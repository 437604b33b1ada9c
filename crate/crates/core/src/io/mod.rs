//! On-disk formats: feature bundles, dataset manifests, checkpoints and
//! synthetic datasets.

mod bundle;
mod checkpoint;
mod codec;
mod manifest;
mod synth;

pub use bundle::{read_bundle, write_bundle, SampleBundle, BUNDLE_MAGIC, BUNDLE_VERSION};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use manifest::{load_manifest, parse_manifest, write_manifest, DatasetManifest, ManifestRecord, Split};
pub use synth::{
    separable_direction, synth_dataset, synth_samples, Draw, SynthMode, CODES_PER_MODALITY,
    CODE_BLOCKS, CROSSMODAL_NOISE, MANIFEST_FILE, SEPARABLE_MARGIN, SEPARABLE_NOISE,
};
