//! Product manifests and band loading into the canonical grid format,
//! plus the data-coverage statistic used during product selection.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::geo::{Crs, GeoTransform};
use crate::grid_io::{self, Dtype, GridValues};

/// Sentinel-2 style band set: resolution in meters per band id.
pub const BAND_RESOLUTIONS: [(&str, u32); 13] = [
    ("B02", 10),
    ("B03", 10),
    ("B04", 10),
    ("B08", 10),
    ("B05", 20),
    ("B06", 20),
    ("B07", 20),
    ("B8A", 20),
    ("B11", 20),
    ("B12", 20),
    ("B01", 60),
    ("B09", 60),
    ("B10", 60),
];

/// Canonical ordering: the 10 m bands, then 20 m, then 60 m.
pub fn canonical_band_order() -> Vec<&'static str> {
    BAND_RESOLUTIONS.iter().map(|(b, _)| *b).collect()
}

pub fn band_resolution(band_id: &str) -> Option<u32> {
    BAND_RESOLUTIONS
        .iter()
        .find(|(b, _)| *b == band_id)
        .map(|(_, r)| *r)
}

/// One band of one product: a geo-referenced unsigned 16-bit grid.
#[derive(Debug, Clone)]
pub struct BandGrid {
    pub band_id: String,
    pub resolution_m: u32,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<u16>,
    pub nodata_value: u16,
    pub geotransform: GeoTransform,
    pub crs: Crs,
}

impl BandGrid {
    pub fn value_at(&self, col: usize, row: usize) -> u16 {
        self.values[row * self.cols + col]
    }
}

/// Reference to a band payload, as listed in a manifest.
#[derive(Debug, Clone)]
pub struct BandRef {
    pub band_id: String,
    pub resolution_m: u32,
    pub path: PathBuf,
}

/// Parsed manifest: metadata plus band file references, bands not yet loaded.
#[derive(Debug, Clone)]
pub struct ProductManifest {
    pub product_id: String,
    pub tile_id: String,
    pub sensing_time: DateTime<Utc>,
    pub crs: Crs,
    pub cloud_cover_pct: Option<f64>,
    pub bands: Vec<BandRef>,
    /// Directory the band paths are relative to.
    pub base_dir: PathBuf,
}

/// A fully loaded product: all bands in memory.
#[derive(Debug, Clone)]
pub struct ProductBundle {
    pub product_id: String,
    pub tile_id: String,
    pub sensing_time: DateTime<Utc>,
    pub cloud_cover_pct: Option<f64>,
    pub bands: BTreeMap<String, BandGrid>,
}

fn missing(path: &Path, field: &str) -> Error {
    Error::parse(path, 1, format!("missing field: {field}"))
}

fn get_str<'a>(obj: &'a Value, path: &Path, field: &str) -> Result<&'a str> {
    obj.get(field)
        .ok_or_else(|| missing(path, field))?
        .as_str()
        .ok_or_else(|| Error::parse(path, 1, format!("field {field} must be a string")))
}

/// Parses `manifest.json`, validating required fields and band references.
pub fn parse_manifest(path: &Path) -> Result<ProductManifest> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::io_at(format!("read {}", path.display()), e))?;
    let doc: Value = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        line: e.line(),
        msg: e.to_string(),
    })?;

    let product_id = get_str(&doc, path, "product_id")?.to_string();
    let tile_id = get_str(&doc, path, "tile_id")?.to_string();
    let sensing_raw = get_str(&doc, path, "sensing_time")?;
    let sensing_time = DateTime::parse_from_rfc3339(sensing_raw)
        .map_err(|e| Error::parse(path, 1, format!("sensing_time: {e}")))?
        .with_timezone(&Utc);
    let crs_value = doc.get("crs").ok_or_else(|| missing(path, "crs"))?;
    let crs: Crs = serde_json::from_value(crs_value.clone())
        .map_err(|e| Error::parse(path, 1, format!("crs: {e}")))?;
    if !crs.is_projected() {
        return Err(Error::parse(path, 1, "crs: product grids must be in a UTM zone"));
    }
    let cloud_cover_pct = match doc.get("cloud_cover_pct") {
        None | Some(Value::Null) => None,
        Some(v) => Some(v.as_f64().ok_or_else(|| {
            Error::parse(path, 1, "field cloud_cover_pct must be a number")
        })?),
    };

    let bands_value = doc
        .get("bands")
        .ok_or_else(|| missing(path, "bands"))?
        .as_array()
        .ok_or_else(|| Error::parse(path, 1, "field bands must be an array"))?;

    let mut bands = Vec::with_capacity(bands_value.len());
    let mut seen = std::collections::BTreeSet::new();
    for entry in bands_value {
        let band_id = get_str(entry, path, "band_id")?.to_string();
        if !seen.insert(band_id.clone()) {
            return Err(Error::parse(path, 1, format!("duplicate band: {band_id}")));
        }
        let resolution_m = entry
            .get("resolution_m")
            .ok_or_else(|| missing(path, "resolution_m"))?
            .as_u64()
            .ok_or_else(|| Error::parse(path, 1, "field resolution_m must be an integer"))?;
        if ![10, 20, 60].contains(&resolution_m) {
            return Err(Error::parse(
                path,
                1,
                format!("band {band_id}: resolution_m must be 10, 20 or 60, got {resolution_m}"),
            ));
        }
        let rel = get_str(entry, path, "path")?;
        bands.push(BandRef {
            band_id,
            resolution_m: resolution_m as u32,
            path: PathBuf::from(rel),
        });
    }

    Ok(ProductManifest {
        product_id,
        tile_id,
        sensing_time,
        crs,
        cloud_cover_pct,
        bands,
        base_dir: path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf(),
    })
}

/// Loads one band payload referenced by a manifest.
pub fn load_band(manifest: &ProductManifest, band: &BandRef) -> Result<BandGrid> {
    let payload = manifest.base_dir.join(&band.path);
    let (meta, values) = grid_io::read_grid(&payload)?;
    if meta.dtype != Dtype::U16 {
        return Err(Error::Grid(format!(
            "{}: imagery bands must be u16le, got {}",
            payload.display(),
            meta.dtype.name()
        )));
    }
    if meta.band_id != band.band_id {
        return Err(Error::Grid(format!(
            "{}: sidecar band_id {} does not match manifest entry {}",
            payload.display(),
            meta.band_id,
            band.band_id
        )));
    }
    if (meta.resolution_m - f64::from(band.resolution_m)).abs() > 1e-9 {
        return Err(Error::Grid(format!(
            "{}: sidecar resolution {} does not match manifest entry {}",
            payload.display(),
            meta.resolution_m,
            band.resolution_m
        )));
    }
    if meta.crs != manifest.crs {
        return Err(Error::Grid(format!(
            "{}: band crs differs from product crs",
            payload.display()
        )));
    }
    let GridValues::U16(values) = values else {
        unreachable!("dtype checked above");
    };
    Ok(BandGrid {
        band_id: meta.band_id,
        resolution_m: band.resolution_m,
        rows: meta.rows,
        cols: meta.cols,
        values,
        nodata_value: meta.nodata as u16,
        geotransform: meta.geotransform,
        crs: meta.crs,
    })
}

/// Loads every band of a manifest and checks the cross-resolution extent
/// invariant: shared origin, same footprint within one coarsest pixel.
pub fn load_bundle(manifest_path: &Path) -> Result<ProductBundle> {
    let manifest = parse_manifest(manifest_path)?;
    let mut bands = BTreeMap::new();
    for band_ref in &manifest.bands {
        let band = load_band(&manifest, band_ref)?;
        bands.insert(band.band_id.clone(), band);
    }
    let bundle = ProductBundle {
        product_id: manifest.product_id,
        tile_id: manifest.tile_id,
        sensing_time: manifest.sensing_time,
        cloud_cover_pct: manifest.cloud_cover_pct,
        bands,
    };
    bundle.validate_extent()?;
    Ok(bundle)
}

impl ProductBundle {
    /// All bands must share origin and cover the same ground extent, to
    /// within one pixel of the coarsest band.
    pub fn validate_extent(&self) -> Result<()> {
        let Some(reference) = self.bands.values().next() else {
            return Ok(());
        };
        let coarsest = self
            .bands
            .values()
            .map(|b| b.resolution_m)
            .max()
            .unwrap_or(60);
        let tol = f64::from(coarsest);
        let ref_gt = reference.geotransform;
        let ref_h = reference.rows as f64 * ref_gt.pixel_height;
        let ref_w = reference.cols as f64 * ref_gt.pixel_width;
        for band in self.bands.values() {
            let gt = band.geotransform;
            if band.crs != reference.crs {
                return Err(Error::Grid("bands disagree on CRS".into()));
            }
            if (gt.origin_x - ref_gt.origin_x).abs() > 1e-6
                || (gt.origin_y - ref_gt.origin_y).abs() > 1e-6
            {
                return Err(Error::Grid(format!(
                    "band {} origin differs from {}",
                    band.band_id, reference.band_id
                )));
            }
            let h = band.rows as f64 * gt.pixel_height;
            let w = band.cols as f64 * gt.pixel_width;
            if (h - ref_h).abs() > tol || (w - ref_w).abs() > tol {
                return Err(Error::Grid(format!(
                    "band {} extent {}x{} m differs from {} extent {}x{} m",
                    band.band_id, w, h, reference.band_id, ref_w, ref_h
                )));
            }
        }
        Ok(())
    }

    pub fn band(&self, band_id: &str) -> Result<&BandGrid> {
        self.bands
            .get(band_id)
            .ok_or_else(|| Error::Grid(format!("band {band_id} not present in product")))
    }
}

/// Fraction of samples that carry data, i.e. differ from the nodata value.
pub fn data_coverage_fraction(band: &BandGrid) -> f64 {
    if band.values.is_empty() {
        return 0.0;
    }
    let data = band
        .values
        .iter()
        .filter(|&&v| v != band.nodata_value)
        .count();
    data as f64 / band.values.len() as f64
}
