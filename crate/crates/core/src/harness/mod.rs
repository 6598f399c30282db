//! Configuration, datasets, synthetic phantoms, the single-image enrollment
//! protocol and its statistics.

mod config;
mod dataset;
mod protocol;
mod report;
mod stats;
pub mod synth;

pub use config::{PipelineConfig, ProtocolConfig};
pub use dataset::{synthetic_images, write_synthetic_dataset, DatasetManifest, LabelledImage, ManifestEntry};
pub use protocol::{
    choose_enrollment, evaluate_prepared, evaluate_with, run_protocol_images, train_from_images, training_samples,
    BandReport, EvalReport, ProbeOutcome, YAW_BANDS,
};
pub use report::{summary_text, write_report};
pub use stats::{cmc_curve, mean, roc_curve, RocPoint};
pub use synth::{generate_synthetic_dataset, SynthImage, SynthSpec};

use crate::error::Result;

/// Loads the manifest's images and runs the protocol on them.
pub fn run_protocol(manifest: &DatasetManifest, config: &PipelineConfig) -> Result<EvalReport> {
    run_protocol_images(&manifest.load()?, config)
}
