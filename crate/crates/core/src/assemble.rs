//! Groups per-date patches by location into time-sorted sample
//! directories and writes the dataset index. Work proceeds one location
//! at a time so memory stays bounded by a single timeseries.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid_io::{self, GridValues};
use crate::ingest::canonical_band_order;
use crate::tile::{labels_dir, patches_dir, DateDirMeta};

/// One dataset index row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexRow {
    pub location_key: String,
    pub t: usize,
    pub labeled: bool,
    pub path: String,
    pub split: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DatasetIndex {
    pub rows: Vec<IndexRow>,
}

impl DatasetIndex {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut writer = csv::Writer::from_path(path)
            .map_err(|e| Error::Validation(format!("open index {}: {e}", path.display())))?;
        writer
            .write_record(["location_key", "T", "labeled", "path", "split"])
            .and_then(|()| {
                for row in &self.rows {
                    writer.write_record([
                        row.location_key.as_str(),
                        &row.t.to_string(),
                        &row.labeled.to_string(),
                        &row.path,
                        &row.split,
                    ])?;
                }
                writer.flush().map_err(csv::Error::from)
            })
            .map_err(|e| Error::Validation(format!("write index {}: {e}", path.display())))?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)
            .map_err(|e| Error::Validation(format!("open index {}: {e}", path.display())))?;
        let mut rows = Vec::new();
        for record in reader.records() {
            let record =
                record.map_err(|e| Error::Validation(format!("read index {}: {e}", path.display())))?;
            if record.len() != 5 {
                return Err(Error::Validation(format!(
                    "index row has {} fields, expected 5",
                    record.len()
                )));
            }
            rows.push(IndexRow {
                location_key: record[0].to_string(),
                t: record[1]
                    .parse()
                    .map_err(|e| Error::Validation(format!("index T column: {e}")))?,
                labeled: record[2]
                    .parse()
                    .map_err(|e| Error::Validation(format!("index labeled column: {e}")))?,
                path: record[3].to_string(),
                split: record[4].to_string(),
            });
        }
        Ok(Self { rows })
    }
}

/// Sample directory metadata, also used to decide whether an existing
/// sample can be kept on re-runs.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SampleMeta {
    pub location_key: String,
    pub timestamps: Vec<String>,
    pub bands: Vec<String>,
    pub provenance: Vec<String>,
    pub labeled: bool,
    /// Payload digests keyed by file name, for restart validation.
    pub files: BTreeMap<String, FileDigest>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct FileDigest {
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, Copy)]
pub struct AssembleOptions {
    /// Locations present on fewer dates than this are dropped.
    pub min_t: usize,
}

impl Default for AssembleOptions {
    fn default() -> Self {
        Self { min_t: 1 }
    }
}

struct DateEntry {
    sensing_time: DateTime<Utc>,
    product_id: String,
    cloud_cover_pct: Option<f64>,
    dir: PathBuf,
}

/// One location's surviving acquisitions after same-day deduplication,
/// time-ascending.
struct LocationPlan {
    key: String,
    dates: Vec<usize>,
}

/// Groups the patch store by location, sorts acquisitions in time and
/// writes one sample directory per location plus `index.csv`.
pub fn assemble(
    patch_root: &Path,
    labels_root: Option<&Path>,
    out_root: &Path,
    options: &AssembleOptions,
) -> Result<DatasetIndex> {
    let patches = patches_dir(patch_root);
    let mut dates: Vec<DateEntry> = Vec::new();
    if patches.exists() {
        let mut date_dirs: Vec<PathBuf> = fs::read_dir(&patches)
            .map_err(|e| Error::io_at(format!("read {}", patches.display()), e))?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        date_dirs.sort();
        for dir in date_dirs {
            let meta_path = dir.join("product.json");
            let text = fs::read_to_string(&meta_path)
                .map_err(|e| Error::io_at(format!("read {}", meta_path.display()), e))?;
            let meta: DateDirMeta = serde_json::from_str(&text)?;
            let sensing_time = DateTime::parse_from_rfc3339(&meta.sensing_time)
                .map_err(|e| Error::Validation(format!("{}: sensing_time: {e}", meta_path.display())))?
                .with_timezone(&Utc);
            dates.push(DateEntry {
                sensing_time,
                product_id: meta.product_id,
                cloud_cover_pct: meta.cloud_cover_pct,
                dir,
            });
        }
    }

    // which locations exist on which dates
    let mut by_location: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (date_idx, date) in dates.iter().enumerate() {
        let mut keys: Vec<String> = fs::read_dir(&date.dir)
            .map_err(|e| Error::io_at(format!("read {}", date.dir.display()), e))?
            .filter_map(|entry| entry.ok())
            .filter(|e| e.path().is_dir())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .collect();
        keys.sort();
        for key in keys {
            by_location.entry(key).or_default().push(date_idx);
        }
    }

    let samples_root = out_root.join("samples");
    fs::create_dir_all(&samples_root)
        .map_err(|e| Error::io_at(format!("create {}", samples_root.display()), e))?;

    let mut index = DatasetIndex::default();
    for (key, date_indices) in by_location {
        let plan = LocationPlan {
            key,
            dates: dedupe_same_day(&dates, date_indices),
        };
        if plan.dates.len() < options.min_t {
            continue;
        }
        let row = write_sample(&dates, &plan, labels_root, out_root, &samples_root)?;
        index.rows.push(row);
    }
    Ok(index)
}

/// Keeps one acquisition per calendar day: lowest cloud cover wins,
/// lexicographically smallest product id on ties. Returns indices sorted
/// by sensing time.
fn dedupe_same_day(dates: &[DateEntry], mut candidates: Vec<usize>) -> Vec<usize> {
    candidates.sort_by_key(|&i| dates[i].sensing_time);
    let mut per_day: BTreeMap<String, usize> = BTreeMap::new();
    for &i in &candidates {
        let day = dates[i].sensing_time.format("%Y%m%d").to_string();
        match per_day.get(&day) {
            None => {
                per_day.insert(day, i);
            }
            Some(&held) => {
                let held_cloud = dates[held].cloud_cover_pct.unwrap_or(f64::INFINITY);
                let new_cloud = dates[i].cloud_cover_pct.unwrap_or(f64::INFINITY);
                let replace = new_cloud < held_cloud
                    || (new_cloud == held_cloud && dates[i].product_id < dates[held].product_id);
                if replace {
                    per_day.insert(day, i);
                }
            }
        }
    }
    let mut kept: Vec<usize> = per_day.into_values().collect();
    kept.sort_by_key(|&i| dates[i].sensing_time);
    kept
}

fn write_sample(
    dates: &[DateEntry],
    plan: &LocationPlan,
    labels_root: Option<&Path>,
    out_root: &Path,
    samples_root: &Path,
) -> Result<IndexRow> {
    let sample_dir = samples_root.join(&plan.key);
    let timestamps: Vec<String> = plan
        .dates
        .iter()
        .map(|&i| dates[i].sensing_time.to_rfc3339_opts(SecondsFormat::Secs, true))
        .collect();
    let provenance: Vec<String> = plan.dates.iter().map(|&i| dates[i].product_id.clone()).collect();

    // bands present on every kept date, in canonical order
    let mut common: Option<BTreeSet<String>> = None;
    for &i in &plan.dates {
        let dir = dates[i].dir.join(&plan.key);
        let mut present = BTreeSet::new();
        for entry in fs::read_dir(&dir).map_err(|e| Error::io_at(format!("read {}", dir.display()), e))? {
            let entry = entry.map_err(|e| Error::io_at(format!("read {}", dir.display()), e))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if let Some(band) = name.strip_suffix(".grid") {
                present.insert(band.to_string());
            }
        }
        common = Some(match common {
            None => present,
            Some(prev) => prev.intersection(&present).cloned().collect(),
        });
    }
    let common = common.unwrap_or_default();
    let bands: Vec<String> = canonical_band_order()
        .into_iter()
        .map(str::to_string)
        .filter(|b| common.contains(b))
        .chain(common.iter().filter(|b| !canonical_band_order().contains(&b.as_str())).cloned())
        .collect();
    if bands.is_empty() {
        return Err(Error::Validation(format!(
            "location {}: no band common to all dates",
            plan.key
        )));
    }

    let label_source = labels_root.map(labels_dir).filter(|d| d.join(&plan.key).exists());
    let labeled = label_source.is_some();

    // reuse an intact sample from a previous run
    let meta_path = sample_dir.join("meta.json");
    if let Ok(existing) = fs::read_to_string(&meta_path) {
        if let Ok(existing) = serde_json::from_str::<SampleMeta>(&existing) {
            if existing.timestamps == timestamps
                && existing.bands == bands
                && existing.labeled == labeled
                && sample_files_intact(&sample_dir, &existing)
            {
                return Ok(IndexRow {
                    location_key: plan.key.clone(),
                    t: plan.dates.len(),
                    labeled,
                    path: relative_to(&sample_dir, out_root),
                    split: String::new(),
                });
            }
        }
    }
    if sample_dir.exists() {
        fs::remove_dir_all(&sample_dir)
            .map_err(|e| Error::io_at(format!("clear {}", sample_dir.display()), e))?;
    }
    fs::create_dir_all(&sample_dir)
        .map_err(|e| Error::io_at(format!("create {}", sample_dir.display()), e))?;

    let mut files: BTreeMap<String, FileDigest> = BTreeMap::new();

    // one band at a time: a stack holds T frames of one band only
    for band in &bands {
        let mut stack: Option<(grid_io::GridMeta, Vec<u16>)> = None;
        for &i in &plan.dates {
            let path = dates[i].dir.join(&plan.key).join(format!("{band}.grid"));
            let (meta, values) = grid_io::read_grid(&path)?;
            let GridValues::U16(values) = values else {
                return Err(Error::Grid(format!(
                    "{}: band patches must be u16le",
                    path.display()
                )));
            };
            match &mut stack {
                None => {
                    let mut stack_meta = meta;
                    stack_meta.frames = Some(plan.dates.len());
                    stack = Some((stack_meta, values));
                }
                Some((stack_meta, data)) => {
                    if meta.rows != stack_meta.rows || meta.cols != stack_meta.cols {
                        return Err(Error::Grid(format!(
                            "location {}: band {} has inconsistent patch shapes across dates",
                            plan.key, band
                        )));
                    }
                    data.extend_from_slice(&values);
                }
            }
        }
        let (meta, data) = stack.expect("at least one date per plan");
        let out_path = sample_dir.join(format!("{band}.grid"));
        grid_io::write_grid(&out_path, &meta, &GridValues::U16(data))?;
        record_digest(&mut files, &sample_dir, &format!("{band}.grid"))?;
        record_digest(&mut files, &sample_dir, &format!("{band}.grid.json"))?;
    }

    // labels travel with the sample so it is self-contained
    if let Some(labels) = &label_source {
        let from = labels.join(&plan.key);
        for entry in
            fs::read_dir(&from).map_err(|e| Error::io_at(format!("read {}", from.display()), e))?
        {
            let entry = entry.map_err(|e| Error::io_at(format!("read {}", from.display()), e))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            fs::copy(entry.path(), sample_dir.join(&name))
                .map_err(|e| Error::io_at(format!("copy {}", entry.path().display()), e))?;
            record_digest(&mut files, &sample_dir, &name)?;
        }
    }

    let meta = SampleMeta {
        location_key: plan.key.clone(),
        timestamps: timestamps.clone(),
        bands,
        provenance,
        labeled,
        files,
    };
    fs::write(&meta_path, serde_json::to_string_pretty(&meta)?)
        .map_err(|e| Error::io_at(format!("write {}", meta_path.display()), e))?;

    Ok(IndexRow {
        location_key: plan.key.clone(),
        t: plan.dates.len(),
        labeled,
        path: relative_to(&sample_dir, out_root),
        split: String::new(),
    })
}

fn record_digest(files: &mut BTreeMap<String, FileDigest>, dir: &Path, name: &str) -> Result<()> {
    let path = dir.join(name);
    let bytes = fs::read(&path).map_err(|e| Error::io_at(format!("read {}", path.display()), e))?;
    files.insert(
        name.to_string(),
        FileDigest {
            bytes: bytes.len() as u64,
            sha256: hex::encode(Sha256::digest(&bytes)),
        },
    );
    Ok(())
}

fn sample_files_intact(dir: &Path, meta: &SampleMeta) -> bool {
    meta.files.iter().all(|(name, digest)| {
        fs::read(dir.join(name))
            .map(|bytes| {
                bytes.len() as u64 == digest.bytes
                    && hex::encode(Sha256::digest(&bytes)) == digest.sha256
            })
            .unwrap_or(false)
    })
}

fn relative_to(path: &Path, root: &Path) -> String {
    path.strip_prefix(root)
        .unwrap_or(path)
        .to_string_lossy()
        .into_owned()
}

/// Deterministically buckets every row into train/val/test by hashing the
/// location key with the seed. Same inputs, same splits, forever.
pub fn split_assign(index: &mut DatasetIndex, ratios: (f64, f64, f64), seed: u64) -> Result<()> {
    let total = ratios.0 + ratios.1 + ratios.2;
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Validation(format!(
            "split ratios must sum to 1, got {total}"
        )));
    }
    if ratios.0 < 0.0 || ratios.1 < 0.0 || ratios.2 < 0.0 {
        return Err(Error::Validation("split ratios must be non-negative".into()));
    }
    for row in &mut index.rows {
        let mut hasher = Sha256::new();
        hasher.update(seed.to_le_bytes());
        hasher.update(row.location_key.as_bytes());
        let digest = hasher.finalize();
        let x = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes")) as f64
            / u64::MAX as f64;
        row.split = if x < ratios.0 {
            "train"
        } else if x < ratios.0 + ratios.1 {
            "val"
        } else {
            "test"
        }
        .to_string();
    }
    Ok(())
}
