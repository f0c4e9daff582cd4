//! Client for a paged materials-database HTTP API with an on-disk record cache.
//!
//! Each page is `GET {base_url}/materials?page=N&per_page=M&band_gap_min=..&e_above_hull_max=..[&elements=Si,C]`
//! answered by `{"data": [record, ...], "meta": {"page": N, "total_pages": P}}`, where
//! records follow the [`MaterialRecord`] schema.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::screening::{read_record, MaterialRecord, ScreeningError};

pub const API_KEY_VAR: &str = "MATDB_API_KEY";
pub const MAX_ATTEMPTS: u32 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteQuery {
    pub min_gap: f64,
    pub max_e_hull: f64,
    /// Restrict to materials composed only of these elements.
    pub elements: Option<Vec<String>>,
}

impl Default for RemoteQuery {
    fn default() -> Self {
        RemoteQuery {
            min_gap: 1.0,
            max_e_hull: 0.0,
            elements: None,
        }
    }
}

impl RemoteQuery {
    fn cache_key(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(self).expect("query serializes"));
        h.finalize()[..8]
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientConfig {
    pub base_url: String,
    /// Root of the cache; records live in `<cache_dir>/materials/<material_id>.json`.
    pub cache_dir: PathBuf,
    pub api_key: Option<String>,
    pub per_page: u32,
    pub backoff: Duration,
    pub timeout: Duration,
    /// Re-query the API even if the cache holds this query's result.
    pub refresh: bool,
}

impl ClientConfig {
    /// Reads the API key from `MATDB_API_KEY`.
    pub fn from_env(base_url: impl Into<String>, cache_dir: impl Into<PathBuf>) -> Self {
        ClientConfig {
            base_url: base_url.into(),
            cache_dir: cache_dir.into(),
            api_key: std::env::var(API_KEY_VAR).ok().filter(|k| !k.is_empty()),
            per_page: 100,
            backoff: Duration::from_millis(500),
            timeout: Duration::from_secs(30),
            refresh: false,
        }
    }

    pub fn materials_dir(&self) -> PathBuf {
        self.cache_dir.join("materials")
    }

    fn manifest_path(&self, query: &RemoteQuery) -> PathBuf {
        self.cache_dir
            .join("queries")
            .join(format!("{}.json", query.cache_key()))
    }
}

#[derive(Debug, Deserialize)]
struct PageMeta {
    total_pages: u32,
}

#[derive(Debug, Deserialize)]
struct Page {
    data: Vec<MaterialRecord>,
    meta: PageMeta,
}

/// Writes `bytes` to `path` via a temporary sibling and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ScreeningError> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| ScreeningError::io(dir, e))?;
    let tmp = dir.join(format!(
        ".{}.tmp{}",
        path.file_name()
            .and_then(|n| n.to_str())
            .unwrap_or("record"),
        std::process::id()
    ));
    let mut f = fs::File::create(&tmp).map_err(|e| ScreeningError::io(&tmp, e))?;
    f.write_all(bytes)
        .map_err(|e| ScreeningError::io(&tmp, e))?;
    f.sync_all().map_err(|e| ScreeningError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| ScreeningError::io(path, e))
}

fn cache_file_name(material_id: &str) -> String {
    let safe: String = material_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!("{safe}.json")
}

fn cache_record(config: &ClientConfig, record: &MaterialRecord) -> Result<(), ScreeningError> {
    let path = config
        .materials_dir()
        .join(cache_file_name(&record.material_id));
    let json = serde_json::to_vec_pretty(record).expect("record serializes");
    write_atomic(&path, &json)
}

fn load_cached(
    config: &ClientConfig,
    ids: &[String],
) -> Result<Vec<MaterialRecord>, ScreeningError> {
    ids.iter()
        .map(|id| {
            let path = config.materials_dir().join(cache_file_name(id));
            read_record(&path).map_err(|reason| ScreeningError::Material {
                material_id: id.clone(),
                reason: format!("cache entry {}: {reason}", path.display()),
            })
        })
        .collect()
}

fn fetch_page(
    agent: &ureq::Agent,
    config: &ClientConfig,
    key: &str,
    query: &RemoteQuery,
    page: u32,
) -> Result<Page, String> {
    let url = format!("{}/materials", config.base_url.trim_end_matches('/'));
    let mut req = agent
        .get(&url)
        .header("Authorization", &format!("Bearer {key}"))
        .header("Accept", "application/json")
        .query("page", page.to_string())
        .query("per_page", config.per_page.to_string())
        .query("band_gap_min", query.min_gap.to_string())
        .query("e_above_hull_max", query.max_e_hull.to_string());
    if let Some(els) = &query.elements {
        req = req.query("elements", els.join(","));
    }
    let mut resp = req.call().map_err(|e| e.to_string())?;
    let body = resp
        .body_mut()
        .read_to_string()
        .map_err(|e| e.to_string())?;
    serde_json::from_str(&body).map_err(|e| format!("page {page}: malformed response: {e}"))
}

fn fetch_with_retry(
    agent: &ureq::Agent,
    config: &ClientConfig,
    key: &str,
    query: &RemoteQuery,
    page: u32,
) -> Result<Page, String> {
    let mut last = String::new();
    for attempt in 0..MAX_ATTEMPTS {
        if attempt > 0 {
            thread::sleep(config.backoff * 2u32.pow(attempt - 1));
        }
        match fetch_page(agent, config, key, query, page) {
            Ok(p) => return Ok(p),
            Err(e) => {
                log::warn!(
                    "page {page} attempt {}/{MAX_ATTEMPTS} failed: {e}",
                    attempt + 1
                );
                last = e;
            }
        }
    }
    Err(last)
}

/// Pages through the API for `query`, caching every record; answers from the cache when this
/// query has completed before (unless `refresh`).
pub fn fetch_remote(
    query: &RemoteQuery,
    config: &ClientConfig,
) -> Result<Vec<MaterialRecord>, ScreeningError> {
    let manifest = config.manifest_path(query);
    if !config.refresh && manifest.is_file() {
        let text = fs::read_to_string(&manifest).map_err(|e| ScreeningError::io(&manifest, e))?;
        let ids: Vec<String> = serde_json::from_str(&text).map_err(|e| {
            ScreeningError::Remote(format!(
                "corrupt cache manifest {}: {e}",
                manifest.display()
            ))
        })?;
        log::info!("{} records for this query served from cache", ids.len());
        return load_cached(config, &ids);
    }
    let key = config.api_key.as_deref().ok_or_else(|| {
        ScreeningError::Config(format!("environment variable {API_KEY_VAR} is not set"))
    })?;
    if config.base_url.is_empty() {
        return Err(ScreeningError::Config("matdb.base_url is not set".into()));
    }
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(config.timeout))
        .build()
        .into();

    let mut records = Vec::new();
    let mut failed = Vec::new();
    let mut last_error = String::new();
    let mut total_pages = 1;
    let mut page = 1;
    while page <= total_pages {
        match fetch_with_retry(&agent, config, key, query, page) {
            Ok(p) => {
                total_pages = p.meta.total_pages;
                for r in p.data {
                    if let Err(reason) = r.validate() {
                        log::warn!("skipping remote record {}: {reason}", r.material_id);
                        continue;
                    }
                    cache_record(config, &r)?;
                    records.push(r);
                }
            }
            Err(e) => {
                failed.push(page);
                last_error = e;
            }
        }
        page += 1;
    }
    if !failed.is_empty() {
        return Err(ScreeningError::Partial {
            records,
            failed_pages: failed,
            last_error,
        });
    }
    let ids: Vec<&str> = records.iter().map(|r| r.material_id.as_str()).collect();
    write_atomic(&manifest, &serde_json::to_vec(&ids).expect("ids serialize"))?;
    Ok(records)
}
