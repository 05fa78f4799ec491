//! Manifest-driven download into a content-verified cache.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, OnceLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::DatasetError;
use crate::domain::Frequency;

/// One dataset in the manifest. `url` and `sha256` are pinned by the operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub url: String,
    pub sha256: String,
    pub frequency: Frequency,
    /// Cache file name; defaults to `<name>.csv`.
    #[serde(default)]
    pub file_name: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(default)]
    pub datasets: BTreeMap<String, ManifestEntry>,
}

impl Manifest {
    pub fn from_toml(text: &str) -> Result<Self, DatasetError> {
        toml::from_str(text).map_err(|e| DatasetError::ConfigError(format!("manifest: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        Self::from_toml(&fs::read_to_string(path)?)
    }
}

/// Source of raw bytes for a URL.
pub trait Downloader: Send + Sync {
    fn download(&self, url: &str) -> Result<Vec<u8>, String>;
}

/// Plain HTTP(S) via ureq; `file://` URLs are read from disk.
#[derive(Debug, Clone, Default)]
pub struct HttpDownloader;

const MAX_DOWNLOAD_BYTES: u64 = 4 << 30;

impl Downloader for HttpDownloader {
    fn download(&self, url: &str) -> Result<Vec<u8>, String> {
        if let Some(path) = url.strip_prefix("file://") {
            return fs::read(path).map_err(|e| format!("{path}: {e}"));
        }
        let mut response = ureq::get(url).call().map_err(|e| e.to_string())?;
        let mut bytes = Vec::new();
        response
            .body_mut()
            .as_reader()
            .take(MAX_DOWNLOAD_BYTES)
            .read_to_end(&mut bytes)
            .map_err(|e| e.to_string())?;
        Ok(bytes)
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn key_lock(path: &Path) -> Arc<Mutex<()>> {
    static LOCKS: OnceLock<Mutex<HashMap<PathBuf, Arc<Mutex<()>>>>> = OnceLock::new();
    let mut map = LOCKS
        .get_or_init(Default::default)
        .lock()
        .unwrap_or_else(|p| p.into_inner());
    map.entry(path.to_path_buf()).or_default().clone()
}

/// Returns the cached file for `name`, downloading it first if absent.
///
/// A cached file whose hash differs from the manifest is an error and is left
/// in place for inspection. Concurrent calls for the same cache path are
/// serialised.
pub fn fetch_dataset(
    name: &str,
    manifest: &Manifest,
    cache_dir: &Path,
    downloader: &dyn Downloader,
) -> Result<PathBuf, DatasetError> {
    let entry = manifest
        .datasets
        .get(name)
        .ok_or_else(|| DatasetError::ConfigError(format!("dataset `{name}` is not in the manifest")))?;
    let expected = entry.sha256.trim().to_ascii_lowercase();
    if expected.len() != 64 || !expected.bytes().all(|b| b.is_ascii_hexdigit()) {
        return Err(DatasetError::ConfigError(format!(
            "dataset `{name}` has no valid sha256 in the manifest"
        )));
    }
    let file_name = entry.file_name.clone().unwrap_or_else(|| format!("{name}.csv"));
    let path = cache_dir.join(file_name);
    let lock = key_lock(&path);
    let _guard = lock.lock().unwrap_or_else(|p| p.into_inner());

    let mismatch = |actual: String| DatasetError::HashMismatch {
        path: path.display().to_string(),
        expected: expected.clone(),
        actual,
    };
    if path.exists() {
        let actual = sha256_hex(&fs::read(&path)?);
        return if actual == expected { Ok(path) } else { Err(mismatch(actual)) };
    }

    log::info!("downloading `{name}` from {}", entry.url);
    let bytes = downloader.download(&entry.url).map_err(DatasetError::DownloadFailed)?;
    let actual = sha256_hex(&bytes);
    if actual != expected {
        return Err(mismatch(actual));
    }
    fs::create_dir_all(cache_dir)?;
    let tmp = path.with_extension("part");
    fs::write(&tmp, &bytes)?;
    fs::rename(&tmp, &path)?;
    Ok(path)
}
