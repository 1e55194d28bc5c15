//! Manifests, ingestion, splitting, image loading and augmentation.

pub mod augment;
pub mod dataset;
pub mod image;
pub mod ingest;
pub mod record;
pub mod split;
pub mod stats;
pub mod synth;

pub use augment::{augment, AugmentConfig, Transform};
pub use dataset::TensorDataset;
pub use image::{load_image, resize_bilinear, Rgb8};
pub use ingest::{apply_exclude, dedupe, ingest_directory, ingest_inaturalist_csv, read_exclude_list, IngestSummary, TaxonMap};
pub use record::{Class, ContentHash, SampleManifest, SampleRecord, Source, Split, TypeTag};
pub use split::{largest_remainder, stratified_split, SplitSummary, DEFAULT_RATIOS};
pub use stats::{dataset_stats, DatasetStats};
pub use synth::{write_synth, SynthConfig};
