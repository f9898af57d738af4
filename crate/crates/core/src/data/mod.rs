//! Annotation records, feature files and the synthetic dataset generator.

mod annotations;
mod features;
mod synth;

pub use annotations::{
    class_histogram, load_annotations, parse_annotations, save_annotations, write_annotations,
    ActionInstance, Timing, VideoAnnotation,
};
pub use features::{
    decode_features, encode_features, load_features, save_features, FeatureSequence,
    FEATURE_HEADER_LEN, FEATURE_MAGIC, FEATURE_VERSION,
};
pub use synth::{
    load_dataset, load_dataset_with, nearest_signature_accuracy, synth_generate, write_dataset, SynthDataset,
    SynthSpec, Video,
};
