//! Batch T₂ screening of material corpora with the scaling law.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::cif::{element_densities, structure_from_cif, CifError};
use crate::isotopes::{isotope_densities, DensityMap, IsotopeError, IsotopeTable};
use crate::scaling::{
    predict_t2, IsotopeT2, ScalingConstants, ScalingError, T2Prediction, T2Value,
};

pub const NO_SPINFUL_FLAG: &str = "no_spinful_isotopes";

#[derive(Debug, Error)]
pub enum ScreeningError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{material_id}: {reason}")]
    Material { material_id: String, reason: String },
    #[error("configuration: {0}")]
    Config(String),
    #[error("fetched {} records but pages {failed_pages:?} failed: {last_error}", records.len())]
    Partial {
        records: Vec<MaterialRecord>,
        failed_pages: Vec<u32>,
        last_error: String,
    },
    #[error("remote: {0}")]
    Remote(String),
}

impl ScreeningError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        ScreeningError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialRecord {
    pub material_id: String,
    pub formula: String,
    #[serde(rename = "band_gap_eV")]
    pub band_gap: f64,
    #[serde(rename = "energy_above_hull_eV")]
    pub energy_above_hull: f64,
    #[serde(rename = "cif")]
    pub cif_text: String,
}

impl MaterialRecord {
    pub fn validate(&self) -> Result<(), String> {
        if self.material_id.trim().is_empty() {
            return Err("empty material_id".into());
        }
        if !(self.band_gap >= 0.0) {
            return Err(format!("band gap {} is negative", self.band_gap));
        }
        if !(self.energy_above_hull >= 0.0) {
            return Err(format!(
                "energy above hull {} is negative",
                self.energy_above_hull
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Skipped {
    pub source: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    pub records: Vec<MaterialRecord>,
    pub skipped: Vec<Skipped>,
}

/// Reads one record file.
pub fn read_record(path: &Path) -> Result<MaterialRecord, String> {
    let text = fs::read_to_string(path).map_err(|e| e.to_string())?;
    let record: MaterialRecord = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    record.validate()?;
    Ok(record)
}

/// Loads every `*.json` record in `dir` (in file-name order); unreadable files go to the skip list.
pub fn load_corpus(dir: &Path) -> Result<Corpus, ScreeningError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| ScreeningError::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json") && p.is_file())
        .collect();
    paths.sort();
    let mut by_id: BTreeMap<String, MaterialRecord> = BTreeMap::new();
    let mut skipped = Vec::new();
    for path in &paths {
        match read_record(path) {
            Ok(record) => {
                if by_id.contains_key(&record.material_id) {
                    log::warn!(
                        "duplicate material_id {} in {}; keeping the later file",
                        record.material_id,
                        path.display()
                    );
                }
                by_id.insert(record.material_id.clone(), record);
            }
            Err(reason) => skipped.push(Skipped {
                source: path.display().to_string(),
                reason,
            }),
        }
    }
    if paths.is_empty() {
        log::warn!("corpus directory {} holds no records", dir.display());
    }
    Ok(Corpus {
        records: by_id.into_values().collect(),
        skipped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialPrediction {
    pub element_densities: DensityMap,
    pub prediction: T2Prediction,
}

fn material_error(id: &str, e: impl std::fmt::Display) -> ScreeningError {
    ScreeningError::Material {
        material_id: id.to_string(),
        reason: e.to_string(),
    }
}

/// CIF → structure → element densities → isotope densities → scaling-law T₂.
pub fn predict_material(
    record: &MaterialRecord,
    table: &IsotopeTable,
    constants: &ScalingConstants,
) -> Result<MaterialPrediction, ScreeningError> {
    let id = &record.material_id;
    let structure =
        structure_from_cif(&record.cif_text).map_err(|e: CifError| material_error(id, e))?;
    let densities = element_densities(&structure);
    let isotopes =
        isotope_densities(table, &densities).map_err(|e: IsotopeError| material_error(id, e))?;
    let prediction =
        predict_t2(&isotopes, constants).map_err(|e: ScalingError| material_error(id, e))?;
    Ok(MaterialPrediction {
        element_densities: densities,
        prediction,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScreeningFilters {
    /// Inclusive lower bound, eV.
    pub min_gap: f64,
    /// Inclusive upper bound, eV/atom.
    pub max_e_hull: f64,
    /// Inclusive lower bound on T₂, s.
    pub min_t2: Option<f64>,
}

impl Default for ScreeningFilters {
    fn default() -> Self {
        ScreeningFilters {
            min_gap: 1.0,
            max_e_hull: 0.0,
            min_t2: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreeningRow {
    pub rank: usize,
    pub material_id: String,
    pub formula: String,
    pub t2: T2Value,
    pub flag: Option<String>,
    #[serde(rename = "band_gap_eV")]
    pub band_gap: f64,
    pub per_isotope: Vec<IsotopeT2>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreeningReport {
    pub rows: Vec<ScreeningRow>,
    pub filters_applied: ScreeningFilters,
    pub corpus_hash: String,
    pub skipped: Vec<Skipped>,
}

/// SHA-256 over the records in material_id order.
pub fn corpus_hash(records: &[MaterialRecord]) -> String {
    let mut sorted: Vec<&MaterialRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.material_id.cmp(&b.material_id));
    let mut h = Sha256::new();
    for r in sorted {
        for field in [
            r.material_id.as_bytes(),
            r.formula.as_bytes(),
            r.cif_text.as_bytes(),
        ] {
            h.update((field.len() as u64).to_le_bytes());
            h.update(field);
        }
        h.update(r.band_gap.to_bits().to_le_bytes());
        h.update(r.energy_above_hull.to_bits().to_le_bytes());
    }
    h.finalize()
        .iter()
        .fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

fn ranking_key(t2: &T2Value) -> (u8, f64) {
    match t2 {
        T2Value::Unbounded => (0, 0.0),
        T2Value::Finite(t) => (1, -t),
    }
}

/// Filters, predicts and ranks: spin-free hosts first, then descending T₂.
pub fn screen_corpus(
    records: &[MaterialRecord],
    table: &IsotopeTable,
    constants: &ScalingConstants,
    filters: &ScreeningFilters,
) -> ScreeningReport {
    let candidates: Vec<&MaterialRecord> = records
        .iter()
        .filter(|r| r.band_gap >= filters.min_gap && r.energy_above_hull <= filters.max_e_hull)
        .collect();
    let outcomes: Vec<Result<(&MaterialRecord, T2Prediction), Skipped>> = candidates
        .par_iter()
        .map(|r| {
            predict_material(r, table, constants)
                .map(|p| (*r, p.prediction))
                .map_err(|e| Skipped {
                    source: r.material_id.clone(),
                    reason: e.to_string(),
                })
        })
        .collect();

    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for outcome in outcomes {
        match outcome {
            Ok((r, p)) => {
                if let (Some(min), T2Value::Finite(t)) = (filters.min_t2, p.combined) {
                    if t < min {
                        continue;
                    }
                }
                rows.push(ScreeningRow {
                    rank: 0,
                    material_id: r.material_id.clone(),
                    formula: r.formula.clone(),
                    t2: p.combined,
                    flag: p
                        .combined
                        .is_unbounded()
                        .then(|| NO_SPINFUL_FLAG.to_string()),
                    band_gap: r.band_gap,
                    per_isotope: p.per_isotope,
                });
            }
            Err(s) => skipped.push(s),
        }
    }
    rows.sort_by(|a, b| {
        let (ka, kb) = (ranking_key(&a.t2), ranking_key(&b.t2));
        ka.0.cmp(&kb.0)
            .then(ka.1.total_cmp(&kb.1))
            .then_with(|| a.material_id.cmp(&b.material_id))
    });
    for (i, row) in rows.iter_mut().enumerate() {
        row.rank = i + 1;
    }
    ScreeningReport {
        rows,
        filters_applied: *filters,
        corpus_hash: corpus_hash(records),
        skipped,
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

impl ScreeningReport {
    /// CSV `rank,material_id,formula,t2_s,flag,band_gap_eV`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("rank,material_id,formula,t2_s,flag,band_gap_eV\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.rank,
                csv_field(&r.material_id),
                csv_field(&r.formula),
                r.t2,
                r.flag.as_deref().unwrap_or(""),
                r.band_gap
            );
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
