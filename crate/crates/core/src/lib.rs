//! Reproducible benchmarking of image denoisers.
//!
//! Noise synthesis, built-in denoisers (identity, median, BM3D), the external
//! plugin protocol, metrics and reporting.

pub mod dataset;
pub mod denoisers;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod noise;
pub mod plugin;
pub mod raster;
pub mod record;
pub mod seed;

pub use dataset::{CorpusEntry, DatasetKind, DatasetManifest};
pub use denoisers::BuiltinDenoiser;
pub use error::{Error, Result};
pub use metrics::{AggregateStats, MethodRanking};
pub use noise::{NoisePipeline, NoiseSpec, NoiseVariant, Sample};
pub use plugin::{DenoiserDescriptor, PluginError, ValidationReport};
pub use raster::{load_image, quantize, save_image, Image};
pub use record::EvaluationRecord;
