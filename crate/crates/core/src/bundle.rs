//! On-disk model bundle.
//!
//! ```text
//! bundle/
//!   manifest.json        schema version, seed, configs, standardizer, feature schema, metrics, checksums
//!   stage1_static.json   fitted static regressor
//!   stage1_encoder.json  fitted sequence encoder
//!   stage1_head.json     fusion head
//!   stage2.json          fitted efficiency-loss regressor
//!   history.csv          trailing curated records used as forecast history
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::features::{SEQUENCE_FEATURE_NAMES, STAGE2_FEATURE_NAMES, STATIC_FEATURE_NAMES};
use crate::ingestion::{read_merged_csv, write_merged_csv, IngestError};
use crate::models::{FittedEncoder, FusionHead, HybridAodModel, InputStandardizer, SequenceEncoder, StaticRegressor};
use crate::pipeline::{PipelineConfig, TrainedPipeline, TrainingReport};

pub const BUNDLE_SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

const BLOB_STAGE1_STATIC: &str = "stage1_static.json";
const BLOB_STAGE1_ENCODER: &str = "stage1_encoder.json";
const BLOB_STAGE1_HEAD: &str = "stage1_head.json";
const BLOB_STAGE2: &str = "stage2.json";
const BLOB_HISTORY: &str = "history.csv";

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("no manifest at {0}")]
    MissingManifest(String),
    #[error("bundle schema version {found} does not match supported version {expected}")]
    SchemaVersion { found: u32, expected: u32 },
    #[error("feature schema hash mismatch: bundle has {found}, this build expects {expected}")]
    FeatureSchema { found: String, expected: String },
    #[error("blob `{0}` is missing")]
    MissingBlob(String),
    #[error("blob `{blob}` is corrupted: checksum {found} does not match manifest {expected}")]
    Checksum { blob: String, expected: String, found: String },
    #[error("model is not fully fitted")]
    Unfitted,
    #[error("bundle history is empty")]
    EmptyHistory,
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = BundleError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub stage1_static: Vec<String>,
    pub stage1_sequence: Vec<String>,
    pub stage2: Vec<String>,
}

impl FeatureSchema {
    pub fn current() -> Self {
        let own = |v: &[&str]| v.iter().map(|s| s.to_string()).collect();
        Self {
            stage1_static: own(&STATIC_FEATURE_NAMES),
            stage1_sequence: own(&SEQUENCE_FEATURE_NAMES),
            stage2: own(&STAGE2_FEATURE_NAMES),
        }
    }

    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("schema serializes").as_bytes())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobEntry {
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub seed: u64,
    pub stage1_static_family: String,
    pub stage2_family: String,
    pub encoder: SequenceEncoder,
    pub standardizer: InputStandardizer,
    pub pipeline_config: PipelineConfig,
    pub feature_schema: FeatureSchema,
    pub feature_schema_sha256: String,
    pub metrics: TrainingReport,
    pub blobs: BTreeMap<String, BlobEntry>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn save_bundle(pipeline: &TrainedPipeline, dir: &Path) -> Result<Manifest> {
    let s1 = &pipeline.stage1;
    let (Some(encoder), Some(standardizer)) = (&s1.fitted_encoder, &s1.standardizer) else {
        return Err(BundleError::Unfitted);
    };
    if !s1.is_fitted() || !pipeline.stage2.is_fitted() {
        return Err(BundleError::Unfitted);
    }
    if pipeline.history.is_empty() {
        return Err(BundleError::EmptyHistory);
    }
    fs::create_dir_all(dir)?;

    let mut history = Vec::new();
    write_merged_csv(&mut history, &pipeline.history)?;
    let blobs: Vec<(&str, Vec<u8>)> = vec![
        (BLOB_STAGE1_STATIC, serde_json::to_vec(&s1.static_branch)?),
        (BLOB_STAGE1_ENCODER, serde_json::to_vec(encoder)?),
        (BLOB_STAGE1_HEAD, serde_json::to_vec(&s1.head)?),
        (BLOB_STAGE2, serde_json::to_vec(&pipeline.stage2)?),
        (BLOB_HISTORY, history),
    ];
    let mut entries = BTreeMap::new();
    for (name, bytes) in &blobs {
        fs::write(dir.join(name), bytes)?;
        let key = name.rsplit_once('.').map_or(*name, |(stem, _)| stem).to_string();
        entries.insert(
            key,
            BlobEntry {
                file: name.to_string(),
                sha256: sha256_hex(bytes),
            },
        );
    }

    let schema = FeatureSchema::current();
    let manifest = Manifest {
        schema_version: BUNDLE_SCHEMA_VERSION,
        seed: pipeline.config.seed,
        stage1_static_family: s1.static_branch.family().name().into(),
        stage2_family: pipeline.stage2.family().name().into(),
        encoder: s1.encoder,
        standardizer: standardizer.clone(),
        pipeline_config: pipeline.config.clone(),
        feature_schema_sha256: schema.hash(),
        feature_schema: schema,
        metrics: pipeline.report.clone(),
        blobs: entries,
    };
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let bytes = fs::read(&path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => BundleError::MissingManifest(path.display().to_string()),
        _ => e.into(),
    })?;
    // Check the version before the rest so a future layout fails with a clear message.
    let probe: serde_json::Value = serde_json::from_slice(&bytes)?;
    let found = probe.get("schema_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if found != BUNDLE_SCHEMA_VERSION {
        return Err(BundleError::SchemaVersion {
            found,
            expected: BUNDLE_SCHEMA_VERSION,
        });
    }
    Ok(serde_json::from_value(probe)?)
}

fn read_blob(dir: &Path, manifest: &Manifest, key: &str) -> Result<Vec<u8>> {
    let entry = manifest.blobs.get(key).ok_or_else(|| BundleError::MissingBlob(key.into()))?;
    let bytes = fs::read(dir.join(&entry.file)).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => BundleError::MissingBlob(entry.file.clone()),
        _ => e.into(),
    })?;
    let found = sha256_hex(&bytes);
    if found != entry.sha256 {
        return Err(BundleError::Checksum {
            blob: entry.file.clone(),
            expected: entry.sha256.clone(),
            found,
        });
    }
    Ok(bytes)
}

pub fn load_bundle(dir: &Path) -> Result<TrainedPipeline> {
    let manifest = read_manifest(dir)?;
    let expected = FeatureSchema::current().hash();
    if manifest.feature_schema_sha256 != expected || manifest.feature_schema.hash() != expected {
        return Err(BundleError::FeatureSchema {
            found: manifest.feature_schema_sha256,
            expected,
        });
    }
    let static_branch: StaticRegressor = serde_json::from_slice(&read_blob(dir, &manifest, "stage1_static")?)?;
    let encoder: FittedEncoder = serde_json::from_slice(&read_blob(dir, &manifest, "stage1_encoder")?)?;
    let head: FusionHead = serde_json::from_slice(&read_blob(dir, &manifest, "stage1_head")?)?;
    let stage2: StaticRegressor = serde_json::from_slice(&read_blob(dir, &manifest, "stage2")?)?;
    let history = read_merged_csv(read_blob(dir, &manifest, "history")?.as_slice())?;
    if history.is_empty() {
        return Err(BundleError::EmptyHistory);
    }
    let stage1 = HybridAodModel {
        static_branch,
        encoder: manifest.encoder,
        fitted_encoder: Some(encoder),
        head,
        standardizer: Some(manifest.standardizer),
        loss_history: manifest.metrics.stage1_loss_history.clone(),
    };
    if !stage1.is_fitted() || !stage2.is_fitted() {
        return Err(BundleError::Unfitted);
    }
    Ok(TrainedPipeline {
        config: manifest.pipeline_config,
        stage1,
        stage2,
        report: manifest.metrics,
        history,
    })
}
