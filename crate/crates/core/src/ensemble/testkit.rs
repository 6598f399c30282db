use super::*;
use crate::harness::{synthetic_images, training_samples, SynthSpec};

/// Four subjects at four yaws, annotated and preprocessed; every default
/// range holds two images per subject.
pub fn small_samples() -> Vec<AnnotatedSample> {
    let spec = SynthSpec {
        subjects: 4,
        yaws: vec![0.0, 30.0, 60.0, 90.0],
        ..Default::default()
    };
    training_samples(&synthetic_images(&spec).unwrap(), &StageParams::default()).unwrap()
}

pub fn small_config() -> EnsembleConfig {
    EnsembleConfig {
        clusters_per_range: 2,
        ..Default::default()
    }
}

pub fn small_ensemble() -> (Vec<AnnotatedSample>, Ensemble) {
    let samples = small_samples();
    let e = train_ensemble(&samples, &Mesh::default_face(), &small_config()).unwrap();
    (samples, e)
}
