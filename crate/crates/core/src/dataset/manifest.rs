//! On-disk feature manifest: a JSON header (`manifest.json`) plus a sibling
//! blob of little-endian `f32` values (`features.f32le`).
//!
//! Records are packed back to back in record order, so record `i` starts at
//! the sum of the dimensions of records `0..i`. When every record has the
//! same dimension `d` this is the familiar `[index·d, (index+1)·d)` layout.
//! Vectors are widened to `f64` on load.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST_VERSION: u32 = 1;
pub const HEADER_FILE: &str = "manifest.json";
pub const BLOB_FILE: &str = "features.f32le";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Sketch,
    Photo,
    Embedding,
}

impl Domain {
    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Sketch => "sketch",
            Domain::Photo => "photo",
            Domain::Embedding => "embedding",
        }
    }
}

impl std::fmt::Display for Domain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sketch" => Ok(Domain::Sketch),
            "photo" => Ok(Domain::Photo),
            "embedding" => Ok(Domain::Embedding),
            other => Err(Error::Argument(format!("unknown domain `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureRecord {
    pub category: String,
    pub sample_id: String,
    pub domain: Domain,
    pub quality: Option<f64>,
    pub vector: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RecordHeader {
    category: String,
    sample_id: String,
    domain: Domain,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    quality: Option<f64>,
    index: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    dims: BTreeMap<Domain, usize>,
    records: Vec<RecordHeader>,
}

/// An immutable, validated collection of feature records.
#[derive(Clone, Debug)]
pub struct Manifest {
    dims: BTreeMap<Domain, usize>,
    records: Vec<FeatureRecord>,
    by_key: HashMap<(String, Domain), Vec<usize>>,
    categories: Vec<String>,
}

impl PartialEq for Manifest {
    fn eq(&self, other: &Self) -> bool {
        self.dims == other.dims && self.records == other.records
    }
}

impl Manifest {
    pub fn new(dims: BTreeMap<Domain, usize>, records: Vec<FeatureRecord>) -> Result<Self> {
        for (i, r) in records.iter().enumerate() {
            let d = dims.get(&r.domain).ok_or_else(|| {
                Error::Argument(format!(
                    "record {i}: domain {} has no declared dim",
                    r.domain
                ))
            })?;
            if r.vector.len() != *d {
                return Err(Error::Shape(format!(
                    "record {i}: vector length {} but dims[{}] = {d}",
                    r.vector.len(),
                    r.domain
                )));
            }
            if let Some(q) = r.quality {
                if !q.is_finite() {
                    return Err(Error::Argument(format!("record {i}: non-finite quality")));
                }
            }
        }
        let mut by_key: HashMap<(String, Domain), Vec<usize>> = HashMap::new();
        let mut categories = Vec::new();
        for (i, r) in records.iter().enumerate() {
            if !categories.contains(&r.category) {
                categories.push(r.category.clone());
            }
            by_key
                .entry((r.category.clone(), r.domain))
                .or_default()
                .push(i);
        }
        Ok(Manifest {
            dims,
            records,
            by_key,
            categories,
        })
    }

    pub fn version(&self) -> u32 {
        MANIFEST_VERSION
    }

    pub fn dims(&self) -> &BTreeMap<Domain, usize> {
        &self.dims
    }

    pub fn dim(&self, domain: Domain) -> Option<usize> {
        self.dims.get(&domain).copied()
    }

    pub fn records(&self) -> &[FeatureRecord] {
        &self.records
    }

    pub fn record(&self, index: usize) -> &FeatureRecord {
        &self.records[index]
    }

    /// Categories in order of first appearance.
    pub fn categories(&self) -> &[String] {
        &self.categories
    }

    /// Record indices of one category in one domain, in manifest order.
    pub fn indices(&self, category: &str, domain: Domain) -> &[usize] {
        self.by_key
            .get(&(category.to_string(), domain))
            .map_or(&[], Vec::as_slice)
    }

    pub fn vectors(&self, category: &str, domain: Domain) -> Vec<&[f64]> {
        self.indices(category, domain)
            .iter()
            .map(|&i| self.records[i].vector.as_slice())
            .collect()
    }

    pub fn count(&self, category: &str, domain: Domain) -> usize {
        self.indices(category, domain).len()
    }

    /// Copy with every vector scaled to unit L2 norm (zero vectors are left as is).
    pub fn l2_normalized(&self) -> Manifest {
        let records = self
            .records
            .iter()
            .map(|r| {
                let mut r = r.clone();
                l2_normalize(&mut r.vector);
                r
            })
            .collect();
        Manifest::new(self.dims.clone(), records).expect("normalization preserves shapes")
    }

    /// Writes `manifest.json` and `features.f32le` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let header = Header {
            version: MANIFEST_VERSION,
            dims: self.dims.clone(),
            records: self
                .records
                .iter()
                .enumerate()
                .map(|(index, r)| RecordHeader {
                    category: r.category.clone(),
                    sample_id: r.sample_id.clone(),
                    domain: r.domain,
                    quality: r.quality,
                    index,
                })
                .collect(),
        };
        let json = serde_json::to_string_pretty(&header)
            .map_err(|e| Error::parse(dir.join(HEADER_FILE), e.to_string()))?;
        let header_path = dir.join(HEADER_FILE);
        fs::write(&header_path, json + "\n").map_err(|e| Error::io(&header_path, e))?;

        let total: usize = self.records.iter().map(|r| r.vector.len()).sum();
        let mut blob = Vec::with_capacity(total * 4);
        for r in &self.records {
            for v in &r.vector {
                blob.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        let blob_path = dir.join(BLOB_FILE);
        fs::write(&blob_path, blob).map_err(|e| Error::io(&blob_path, e))
    }

    /// Loads a manifest from a directory or from the path of its
    /// `manifest.json`; the blob is read from the same directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Manifest> {
        let (header_path, blob_path) = resolve_paths(path.as_ref());
        let text = fs::read_to_string(&header_path).map_err(|e| Error::io(&header_path, e))?;
        let header: Header =
            serde_json::from_str(&text).map_err(|e| Error::parse(&header_path, e.to_string()))?;
        if header.version != MANIFEST_VERSION {
            return Err(Error::parse(
                &header_path,
                format!("unsupported version {}", header.version),
            ));
        }
        let blob = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;

        let mut expected_floats = 0usize;
        for (i, r) in header.records.iter().enumerate() {
            if r.index != i {
                return Err(Error::parse(
                    &header_path,
                    format!("record {i}: index {} out of order", r.index),
                ));
            }
            let d = header.dims.get(&r.domain).ok_or_else(|| {
                Error::parse(
                    &header_path,
                    format!("record {i}: domain {} missing from dims", r.domain),
                )
            })?;
            expected_floats += d;
        }
        if blob.len() != expected_floats * 4 {
            return Err(Error::parse(
                &blob_path,
                format!(
                    "blob length mismatch: expected {} bytes, found {} bytes",
                    expected_floats * 4,
                    blob.len()
                ),
            ));
        }

        let mut offset = 0usize;
        let mut records = Vec::with_capacity(header.records.len());
        for (i, r) in header.records.into_iter().enumerate() {
            let d = header.dims[&r.domain];
            let bytes = &blob[offset * 4..(offset + d) * 4];
            offset += d;
            let vector: Vec<f64> = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();
            if vector.iter().any(|v| !v.is_finite()) {
                return Err(Error::parse(
                    &blob_path,
                    format!("record {i}: non-finite feature value"),
                ));
            }
            if let Some(q) = r.quality {
                if !q.is_finite() {
                    return Err(Error::parse(
                        &header_path,
                        format!("record {i}: bad quality"),
                    ));
                }
            }
            records.push(FeatureRecord {
                category: r.category,
                sample_id: r.sample_id,
                domain: r.domain,
                quality: r.quality,
                vector,
            });
        }
        Manifest::new(header.dims, records).map_err(|e| Error::parse(&header_path, e.to_string()))
    }
}

fn resolve_paths(path: &Path) -> (PathBuf, PathBuf) {
    if path.is_dir() {
        (path.join(HEADER_FILE), path.join(BLOB_FILE))
    } else {
        let dir = path.parent().unwrap_or_else(|| Path::new("."));
        (path.to_path_buf(), dir.join(BLOB_FILE))
    }
}

pub fn l2_normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}
