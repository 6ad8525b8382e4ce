//! OpenML download client with an on-disk cache.
//!
//! Raw CSV bytes are stored as `openml-<id>-<hash16>.csv` next to a JSON
//! sidecar `openml-<id>.json` recording the source URL, the full SHA-256 of
//! the bytes and the fetch time. Cached files are re-hashed on every read.

use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{load_csv_reader, Dataset, LabelColumn};
use crate::{Error, Result};

/// Overrides the default cache directory.
pub const ENV_CACHE_DIR: &str = "SELFCERT_CACHE_DIR";
/// Overrides the download URL; `{id}` is replaced by the dataset id.
pub const ENV_OPENML_URL: &str = "SELFCERT_OPENML_URL";
pub const DEFAULT_URL_TEMPLATE: &str = "https://www.openml.org/data/get_csv/{id}";

/// Benchmark datasets by name: (alias, OpenML id, label column).
pub const KNOWN_DATASETS: &[(&str, u32, &str)] = &[
    ("bioresponse", 4134, "target"),
    ("spambase", 44, "class"),
    ("har", 1478, "Class"),
    ("mammography", 310, "class"),
];

pub fn lookup_alias(name: &str) -> Option<(u32, LabelColumn)> {
    let lower = name.to_ascii_lowercase();
    KNOWN_DATASETS
        .iter()
        .find(|(alias, ..)| *alias == lower)
        .map(|&(_, id, label)| (id, LabelColumn::Name(label.to_string())))
}

pub fn default_cache_dir() -> PathBuf {
    std::env::var_os(ENV_CACHE_DIR)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(".selfcert-cache"))
}

pub fn url_template() -> String {
    std::env::var(ENV_OPENML_URL).unwrap_or_else(|_| DEFAULT_URL_TEMPLATE.to_string())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub id: u32,
    pub url: String,
    pub sha256: String,
    pub bytes: u64,
    pub fetched_at_unix: u64,
    pub file: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    Network,
    Cache,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn sidecar_path(cache_dir: &Path, id: u32) -> PathBuf {
    cache_dir.join(format!("openml-{id}.json"))
}

fn read_cached(cache_dir: &Path, id: u32) -> Result<Option<Vec<u8>>> {
    let sidecar = sidecar_path(cache_dir, id);
    if !sidecar.exists() {
        return Ok(None);
    }
    let entry: CacheEntry = serde_json::from_slice(&std::fs::read(&sidecar)?)?;
    let path = cache_dir.join(&entry.file);
    if !path.exists() {
        return Ok(None);
    }
    let bytes = std::fs::read(&path)?;
    let actual = sha256_hex(&bytes);
    if actual != entry.sha256 {
        return Err(Error::Checksum {
            path,
            expected: entry.sha256,
            actual,
        });
    }
    Ok(Some(bytes))
}

fn download(url: &str, id: u32) -> Result<Vec<u8>> {
    let fetch_err = |message: String| Error::Fetch {
        id: id.to_string(),
        message,
    };
    let resp = ureq::get(url)
        .call()
        .map_err(|e| fetch_err(e.to_string()))?;
    let mut bytes = Vec::new();
    resp.into_reader()
        .read_to_end(&mut bytes)
        .map_err(|e| fetch_err(e.to_string()))?;
    if bytes.is_empty() {
        return Err(fetch_err("empty response".into()));
    }
    Ok(bytes)
}

/// Raw CSV bytes for `id`, from the cache when present.
pub fn fetch_raw(id: u32, cache_dir: &Path, template: &str) -> Result<(Vec<u8>, Origin)> {
    if let Some(bytes) = read_cached(cache_dir, id)? {
        return Ok((bytes, Origin::Cache));
    }
    let url = template.replace("{id}", &id.to_string());
    let bytes = download(&url, id)?;
    let sha = sha256_hex(&bytes);
    let file = format!("openml-{id}-{}.csv", &sha[..16]);
    std::fs::create_dir_all(cache_dir)?;
    std::fs::write(cache_dir.join(&file), &bytes)?;
    let entry = CacheEntry {
        id,
        url,
        sha256: sha,
        bytes: bytes.len() as u64,
        fetched_at_unix: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        file,
    };
    std::fs::write(
        sidecar_path(cache_dir, id),
        serde_json::to_vec_pretty(&entry)?,
    )?;
    Ok((bytes, Origin::Network))
}

/// Downloads (or reads from cache) OpenML dataset `id` and parses it.
pub fn fetch_openml(
    id: u32,
    cache_dir: &Path,
    template: &str,
    label: &LabelColumn,
) -> Result<(Dataset, Origin)> {
    let (bytes, origin) = fetch_raw(id, cache_dir, template)?;
    let name = KNOWN_DATASETS
        .iter()
        .find(|(_, known, _)| *known == id)
        .map(|(alias, ..)| alias.to_string())
        .unwrap_or_else(|| format!("openml-{id}"));
    let source = cache_dir.join(format!("openml-{id}.csv"));
    let ds = load_csv_reader(bytes.as_slice(), &name, &source, label)?;
    Ok((ds, origin))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aliases() {
        assert_eq!(
            lookup_alias("Spambase"),
            Some((44, LabelColumn::Name("class".into())))
        );
        assert_eq!(lookup_alias("mnist"), None);
    }

    #[test]
    fn corrupted_cache_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let entry = CacheEntry {
            id: 7,
            url: "x".into(),
            sha256: sha256_hex(b"a,b\n1,0\n"),
            bytes: 8,
            fetched_at_unix: 0,
            file: "openml-7-x.csv".into(),
        };
        std::fs::write(dir.path().join(&entry.file), b"a,b\n1,1\n").unwrap();
        std::fs::write(
            sidecar_path(dir.path(), 7),
            serde_json::to_vec(&entry).unwrap(),
        )
        .unwrap();
        assert!(matches!(
            fetch_raw(7, dir.path(), "http://127.0.0.1:9/{id}"),
            Err(Error::Checksum { .. })
        ));
    }

    #[test]
    fn unreachable_without_cache_fails() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            fetch_raw(7, dir.path(), "http://127.0.0.1:9/{id}"),
            Err(Error::Fetch { .. })
        ));
    }
}
