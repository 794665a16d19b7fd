//! Dataset ingestion, the synthetic genetic world, and model persistence.

pub mod checkpoint;
pub mod dataset;
pub mod image_io;
pub mod synthetic;

pub use checkpoint::{
    load_checkpoint, load_entries_into_params, params_to_entries, save_checkpoint,
    CheckpointEntry, CHECKPOINT_VERSION,
};
pub use dataset::{
    load_triplets, parse_labeled_filename, scan_labeled_dir, split_by_family, write_triplets_csv,
    LabeledFaceRecord, TripletRecord,
};
pub use image_io::{load_image, save_image};
pub use synthetic::{synth_family, SyntheticWorld, SynthFamily, SynthMember};
