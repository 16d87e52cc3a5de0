//! Byte n-gram malware family detection.
//!
//! Raw binaries are reduced to their most frequent byte n-grams, family
//! dictionaries are merged into a small feature vocabulary, and four
//! classifiers (kNN, linear SVM, random forest, MLP) are cross-validated
//! against a benign pool while the number of training families grows.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the
//! `*64` aliases below fix it to `f64`, the command-line default.

pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod experiments;
pub mod features;
pub mod learners;
pub mod ngram;
pub mod report;
pub mod scalar;
pub mod seed;

use std::fs;
use std::io::Write;
use std::path::Path;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type FeatureMatrix64 = features::FeatureMatrix<f64>;
pub type KnnModel64 = learners::KnnModel<f64>;
pub type LinearSvmModel64 = learners::LinearSvmModel<f64>;
pub type RandomForestModel64 = learners::RandomForestModel<f64>;
pub type MlpModel64 = learners::MlpModel<f64>;
pub type TrainedModel64 = learners::TrainedModel<f64>;

/// Write `bytes` to a sibling temp file, then rename it over `path`, so a
/// reader never sees a half-written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let name = path
        .file_name()
        .ok_or_else(|| Error::config(format!("not a file path: {}", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(format!(".{}.tmp", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}
