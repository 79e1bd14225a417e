//! Dataset manifests and the on-disk ensemble archive.
//!
//! Archive layout (format version 1), one directory:
//!
//! ```text
//! manifest.json      config, dataset fingerprints, per-expert metadata
//! expert_0000.bin    weights of expert 0, little-endian f32, row-major [K_P x K_E]
//! expert_0001.bin    ...
//! ```
//!
//! Adaptive thresholds, assignments, reference totals and hyperactive flags
//! live in `manifest.json` next to each expert's dimensions.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::Write;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::ensemble::{EnsembleModel, HyperactivityFilter};
use crate::error::{Error, Result};
use crate::expert::ExpertModel;
use crate::imaging::{ImageGray, ImagingConfig};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraverseRole {
    Reference,
    Query,
    Calibration,
}

/// Content hash of the images a model was built from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetFingerprint {
    pub traverse: String,
    pub role: TraverseRole,
    pub images: usize,
    pub sha256: String,
}

/// One traverse on disk: image files ordered by name, index = place id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub role: TraverseRole,
    pub dir: PathBuf,
    pub files: Vec<String>,
    pub subsample_note: Option<String>,
}

fn is_image(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("pgm" | "png")
    )
}

impl DatasetManifest {
    /// List `.pgm`/`.png` files of `dir` in lexicographic order, keeping the
    /// first `limit` when given.
    pub fn scan(dir: &Path, role: TraverseRole, limit: Option<usize>) -> Result<Self> {
        let entries = std::fs::read_dir(dir).map_err(|e| Error::ingest(dir, e.to_string()))?;
        let mut files = Vec::new();
        for entry in entries {
            let entry = entry.map_err(|e| Error::ingest(dir, e.to_string()))?;
            let path = entry.path();
            if path.is_file() && is_image(&path) {
                files.push(entry.file_name().to_string_lossy().into_owned());
            }
        }
        files.sort();
        if files.is_empty() {
            return Err(Error::ingest(dir, "no .pgm or .png images found"));
        }
        let mut subsample_note = None;
        if let Some(n) = limit {
            if n == 0 || n > files.len() {
                return Err(Error::ingest(
                    dir,
                    format!("requested {n} places but directory holds {} images", files.len()),
                ));
            }
            if n < files.len() {
                subsample_note = Some(format!("first {n} of {} images", files.len()));
            }
            files.truncate(n);
        }
        let name = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| dir.display().to_string());
        Ok(Self {
            name,
            role,
            dir: dir.to_path_buf(),
            files,
            subsample_note,
        })
    }

    pub fn len(&self) -> usize {
        self.files.len()
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }

    pub fn path(&self, place: usize) -> PathBuf {
        self.dir.join(&self.files[place])
    }

    /// Hash of every file name and content, in place order.
    pub fn fingerprint(&self) -> Result<DatasetFingerprint> {
        let mut hasher = Sha256::new();
        for f in &self.files {
            let path = self.dir.join(f);
            let bytes = std::fs::read(&path).map_err(|e| Error::ingest(&path, e.to_string()))?;
            hasher.update(f.as_bytes());
            hasher.update((bytes.len() as u64).to_le_bytes());
            hasher.update(&bytes);
        }
        let digest = hasher.finalize();
        Ok(DatasetFingerprint {
            traverse: self.name.clone(),
            role: self.role,
            images: self.files.len(),
            sha256: digest.iter().map(|b| format!("{b:02x}")).collect(),
        })
    }
}

/// Loads and preprocesses images, recording every path it touches.
#[derive(Debug)]
pub struct ImageLoader {
    imaging: ImagingConfig,
    accessed: Mutex<BTreeSet<PathBuf>>,
}

impl ImageLoader {
    pub fn new(imaging: ImagingConfig) -> Self {
        Self {
            imaging,
            accessed: Mutex::new(BTreeSet::new()),
        }
    }

    pub fn load(&self, path: &Path) -> Result<ImageGray> {
        self.accessed
            .lock()
            .expect("access log poisoned")
            .insert(path.to_path_buf());
        self.imaging.load(path)
    }

    pub fn load_range(&self, dataset: &DatasetManifest, places: Range<usize>) -> Result<Vec<ImageGray>> {
        if places.end > dataset.len() {
            return Err(Error::ingest(
                &dataset.dir,
                format!("place range {places:?} exceeds {} images", dataset.len()),
            ));
        }
        places.map(|p| self.load(&dataset.path(p))).collect()
    }

    pub fn load_all(&self, dataset: &DatasetManifest) -> Result<Vec<ImageGray>> {
        self.load_range(dataset, 0..dataset.len())
    }

    pub fn accessed(&self) -> BTreeSet<PathBuf> {
        self.accessed.lock().expect("access log poisoned").clone()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExpertEntry {
    id: usize,
    file: String,
    global_start: usize,
    place_count: usize,
    input_count: usize,
    exc_count: usize,
    theta: Vec<f64>,
    assignments: Vec<Option<u32>>,
    reference_totals: Option<Vec<u64>>,
    hyperactive: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArchiveManifest {
    format_version: u32,
    /// False for archives written straight after training.
    regularized: bool,
    global_place_count: usize,
    filter: HyperactivityFilter,
    config: RunConfig,
    dataset_fingerprints: Vec<DatasetFingerprint>,
    experts: Vec<ExpertEntry>,
}

pub fn expert_file_name(id: usize) -> String {
    format!("expert_{id:04}.bin")
}

fn write_synced(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))?;
    f.sync_all().map_err(|e| Error::io(path, e))
}

/// Serialize the manifest exactly as it would be written to disk.
pub fn manifest_json(model: &EnsembleModel) -> Result<String> {
    let manifest = ArchiveManifest {
        format_version: FORMAT_VERSION,
        regularized: model.is_regularized(),
        global_place_count: model.global_place_count,
        filter: model.filter,
        config: model.config.clone(),
        dataset_fingerprints: model.fingerprints.clone(),
        experts: model
            .experts
            .iter()
            .map(|e| ExpertEntry {
                id: e.id,
                file: expert_file_name(e.id),
                global_start: e.global_start,
                place_count: e.place_count,
                input_count: e.input_count,
                exc_count: e.exc_count,
                theta: e.theta.clone(),
                assignments: e.assignments.clone(),
                reference_totals: e.reference_totals.clone(),
                hyperactive: e.hyperactive.clone(),
            })
            .collect(),
    };
    let mut text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Internal(format!("manifest serialization failed: {e}")))?;
    text.push('\n');
    Ok(text)
}

pub fn weights_to_le_bytes(weights: &[f32]) -> Vec<u8> {
    weights.iter().flat_map(|w| w.to_le_bytes()).collect()
}

/// Write the archive into a sibling temp directory, fsync, then rename it over
/// `path`.
pub fn save_ensemble(model: &EnsembleModel, path: &Path) -> Result<()> {
    model.check()?;
    let parent = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::config(format!("invalid archive path {}", path.display())))?;
    let tmp = parent.join(format!(".{}.tmp-{}", file_name.to_string_lossy(), std::process::id()));
    if tmp.exists() {
        std::fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
    }
    std::fs::create_dir(&tmp).map_err(|e| Error::io(&tmp, e))?;

    for e in &model.experts {
        write_synced(&tmp.join(expert_file_name(e.id)), &weights_to_le_bytes(&e.weights))?;
    }
    write_synced(&tmp.join(MANIFEST_FILE), manifest_json(model)?.as_bytes())?;

    if path.exists() {
        std::fs::remove_dir_all(path).map_err(|e| Error::io(path, e))?;
    }
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    if let Ok(dir) = File::open(parent) {
        let _ = dir.sync_all();
    }
    Ok(())
}

pub fn load_ensemble(path: &Path) -> Result<EnsembleModel> {
    let manifest_path = path.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let raw: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Corrupt {
        path: manifest_path.clone(),
        message: e.to_string(),
    })?;
    let version = raw
        .get("format_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| Error::Corrupt {
            path: manifest_path.clone(),
            message: "missing format_version".into(),
        })?;
    if version != u64::from(FORMAT_VERSION) {
        return Err(Error::UnsupportedVersion {
            found: u32::try_from(version).unwrap_or(u32::MAX),
            expected: FORMAT_VERSION,
        });
    }
    let manifest: ArchiveManifest = serde_json::from_value(raw).map_err(|e| Error::Corrupt {
        path: manifest_path.clone(),
        message: e.to_string(),
    })?;
    manifest.config.validate()?;

    let mut experts = Vec::with_capacity(manifest.experts.len());
    for entry in manifest.experts {
        let file = path.join(&entry.file);
        let bytes = std::fs::read(&file).map_err(|e| Error::io(&file, e))?;
        let expected = entry.input_count * entry.exc_count * 4;
        if bytes.len() != expected {
            return Err(Error::Corrupt {
                path: file,
                message: format!("payload is {} bytes, expected {expected}", bytes.len()),
            });
        }
        let weights = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        experts.push(ExpertModel {
            id: entry.id,
            global_start: entry.global_start,
            place_count: entry.place_count,
            input_count: entry.input_count,
            exc_count: entry.exc_count,
            weights,
            theta: entry.theta,
            assignments: entry.assignments,
            reference_totals: entry.reference_totals,
            hyperactive: entry.hyperactive,
        });
    }
    let model = EnsembleModel {
        config: manifest.config,
        global_place_count: manifest.global_place_count,
        experts,
        filter: manifest.filter,
        fingerprints: manifest.dataset_fingerprints,
    };
    model.check().map_err(|e| Error::Corrupt {
        path: manifest_path.clone(),
        message: e.to_string(),
    })?;
    if manifest.regularized != model.is_regularized() {
        return Err(Error::Corrupt {
            path: manifest_path,
            message: "regularized flag disagrees with stored totals".into(),
        });
    }
    Ok(model)
}
