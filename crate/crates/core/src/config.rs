//! Pipeline configuration: one TOML file driving every subcommand.
//! Field validation delegates to the owning modules so the CLI fails
//! fast, before any network or disk work.

use std::path::{Path, PathBuf};
use std::time::Duration;

use chrono::{DateTime, Datelike, Utc};
use serde::{Deserialize, Serialize};

use crate::catalog::{Aoi, Poi, SelectionConfig};
use crate::error::{Error, Result};
use crate::geo::{GeoPoint, GeoPolygon};
use crate::hub::ThrottlePolicy;
use crate::tile::WindowSpec;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PipelineConfig {
    pub aoi: AoiConfig,
    pub poi: PoiConfig,
    #[serde(default)]
    pub selection: SelectionSection,
    pub hub: HubSection,
    #[serde(default)]
    pub tiling: TilingSection,
    #[serde(default)]
    pub labels: LabelsSection,
    pub output: OutputSection,
    #[serde(default)]
    pub dataset: DatasetSection,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AoiConfig {
    /// Inline ring of [lon, lat] pairs...
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub polygon: Option<Vec<[f64; 2]>>,
    /// ...or a GeoJSON file holding one polygon.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PoiConfig {
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct SelectionSection {
    pub cloud_max_pct: f64,
    pub min_aoi_overlap: f64,
    pub min_data_coverage_pct: f64,
    pub target_date_count: usize,
}

impl Default for SelectionSection {
    fn default() -> Self {
        Self {
            cloud_max_pct: 5.0,
            min_aoi_overlap: 0.0,
            min_data_coverage_pct: 0.0,
            target_date_count: 10,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct HubSection {
    pub base_url: String,
    /// Reference to a credentials file; unused against the bundled mock
    /// hub but kept in the config surface for real deployments.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub credentials_file: Option<PathBuf>,
    #[serde(default)]
    pub throttle: ThrottleSection,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct ThrottleSection {
    pub min_request_interval_secs: u64,
    pub lta_availability_window_secs: u64,
    pub poll_interval_secs: u64,
    pub max_concurrent_downloads: usize,
    pub retry_limit: u32,
}

impl Default for ThrottleSection {
    fn default() -> Self {
        let p = ThrottlePolicy::default();
        Self {
            min_request_interval_secs: p.min_request_interval.as_secs(),
            lta_availability_window_secs: p.lta_availability_window.as_secs(),
            poll_interval_secs: p.poll_interval.as_secs(),
            max_concurrent_downloads: p.max_concurrent_downloads,
            retry_limit: p.retry_limit,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct TilingSection {
    pub window_m: u32,
    pub stride_m: u32,
    pub labeled_only: bool,
    pub label_scale: u32,
    pub min_labeled_fraction: f64,
}

impl Default for TilingSection {
    fn default() -> Self {
        Self {
            window_m: 480,
            stride_m: 480,
            labeled_only: false,
            label_scale: 1,
            min_labeled_fraction: 0.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
#[serde(default)]
pub struct LabelsSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub parcels_file: Option<PathBuf>,
    /// Defaults to the year the period of interest starts in.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ground_truth_year: Option<i32>,
    pub background_class: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct OutputSection {
    pub root: PathBuf,
    /// Where converted products (manifest + band grids) are found; the
    /// conversion from vendor archives happens outside this pipeline.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub products_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub downloads_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct DatasetSection {
    pub seed: u64,
    pub split_train: f64,
    pub split_val: f64,
    pub split_test: f64,
    pub min_t: usize,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            seed: 42,
            split_train: 0.8,
            split_val: 0.1,
            split_test: 0.1,
            min_t: 1,
        }
    }
}

impl PipelineConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io_at(format!("read config {}", path.display()), e))?;
        let config: PipelineConfig = toml::from_str(&text)
            .map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?;
        config.validate(path.parent().unwrap_or_else(|| Path::new(".")))?;
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Validation(format!("serialize config: {e}")))
    }

    /// Runs every owning module's invariant checks.
    pub fn validate(&self, base_dir: &Path) -> Result<()> {
        self.load_aoi(base_dir)?;
        self.poi()?;
        self.selection_config().validate()?;
        self.throttle_policy().validate()?;
        self.window_spec()?;
        if self.tiling.label_scale == 0 {
            return Err(Error::Validation("label_scale must be at least 1".into()));
        }
        let d = &self.dataset;
        let total = d.split_train + d.split_val + d.split_test;
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Validation(format!(
                "split ratios must sum to 1, got {total}"
            )));
        }
        Ok(())
    }

    pub fn load_aoi(&self, base_dir: &Path) -> Result<Aoi> {
        match (&self.aoi.polygon, &self.aoi.file) {
            (Some(ring), None) => {
                let points = ring.iter().map(|[x, y]| GeoPoint::new(*x, *y)).collect();
                Aoi::new(GeoPolygon::new(points, Vec::new(), crate::geo::Crs::Wgs84))
            }
            (None, Some(file)) => {
                let path = if file.is_absolute() {
                    file.clone()
                } else {
                    base_dir.join(file)
                };
                load_aoi_file(&path)
            }
            (Some(_), Some(_)) => Err(Error::Validation(
                "aoi: give either an inline polygon or a file, not both".into(),
            )),
            (None, None) => Err(Error::Validation(
                "aoi: an inline polygon or a file is required".into(),
            )),
        }
    }

    pub fn poi(&self) -> Result<Poi> {
        Poi::new(self.poi.start, self.poi.end)
    }

    pub fn selection_config(&self) -> SelectionConfig {
        SelectionConfig {
            cloud_max_pct: self.selection.cloud_max_pct,
            min_aoi_overlap: self.selection.min_aoi_overlap,
            min_data_coverage_pct: self.selection.min_data_coverage_pct,
            target_date_count: self.selection.target_date_count,
        }
    }

    pub fn throttle_policy(&self) -> ThrottlePolicy {
        let t = &self.hub.throttle;
        ThrottlePolicy {
            min_request_interval: Duration::from_secs(t.min_request_interval_secs),
            lta_availability_window: Duration::from_secs(t.lta_availability_window_secs),
            poll_interval: Duration::from_secs(t.poll_interval_secs),
            max_concurrent_downloads: t.max_concurrent_downloads,
            retry_limit: t.retry_limit,
        }
    }

    pub fn window_spec(&self) -> Result<WindowSpec> {
        let mut spec = WindowSpec::new(
            self.tiling.window_m,
            self.tiling.stride_m,
            self.tiling.labeled_only,
        )?;
        spec.min_labeled_fraction = self.tiling.min_labeled_fraction;
        spec.validate()?;
        Ok(spec)
    }

    pub fn ground_truth_year(&self) -> i32 {
        self.labels
            .ground_truth_year
            .unwrap_or_else(|| self.poi.start.year())
    }

    pub fn downloads_dir(&self) -> PathBuf {
        self.output
            .downloads_dir
            .clone()
            .unwrap_or_else(|| self.output.root.join("downloads"))
    }

    pub fn products_dir(&self) -> PathBuf {
        self.output
            .products_dir
            .clone()
            .unwrap_or_else(|| self.output.root.join("products"))
    }
}

/// Reads an AOI polygon from a GeoJSON file: a bare Polygon geometry, a
/// Feature, or a FeatureCollection with exactly one polygon feature.
pub fn load_aoi_file(path: &Path) -> Result<Aoi> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io_at(format!("read {}", path.display()), e))?;
    let doc: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        line: e.line(),
        msg: e.to_string(),
    })?;
    let geometry = match doc.get("type").and_then(|t| t.as_str()) {
        Some("Polygon") => doc.clone(),
        Some("Feature") => doc
            .get("geometry")
            .cloned()
            .ok_or_else(|| Error::parse(path, 1, "feature has no geometry"))?,
        Some("FeatureCollection") => {
            let features = doc
                .get("features")
                .and_then(|f| f.as_array())
                .ok_or_else(|| Error::parse(path, 1, "missing field: features"))?;
            if features.len() != 1 {
                return Err(Error::parse(
                    path,
                    1,
                    format!("AOI file must hold exactly one feature, got {}", features.len()),
                ));
            }
            features[0]
                .get("geometry")
                .cloned()
                .ok_or_else(|| Error::parse(path, 1, "feature has no geometry"))?
        }
        other => {
            return Err(Error::parse(
                path,
                1,
                format!("unsupported AOI document type {other:?}"),
            ))
        }
    };
    if geometry.get("type").and_then(|t| t.as_str()) != Some("Polygon") {
        return Err(Error::parse(path, 1, "AOI geometry must be a Polygon"));
    }
    let rings = geometry
        .get("coordinates")
        .and_then(|c| c.as_array())
        .ok_or_else(|| Error::parse(path, 1, "polygon has no coordinates"))?;
    let mut parsed: Vec<Vec<GeoPoint>> = Vec::new();
    for ring in rings {
        let positions = ring
            .as_array()
            .ok_or_else(|| Error::parse(path, 1, "ring must be an array"))?;
        let mut points = Vec::new();
        for pos in positions {
            let pair = pos
                .as_array()
                .filter(|a| a.len() >= 2)
                .ok_or_else(|| Error::parse(path, 1, "position must be [lon, lat]"))?;
            points.push(GeoPoint::new(
                pair[0].as_f64().ok_or_else(|| Error::parse(path, 1, "bad coordinate"))?,
                pair[1].as_f64().ok_or_else(|| Error::parse(path, 1, "bad coordinate"))?,
            ));
        }
        if points.len() >= 2 && points.first() == points.last() {
            points.pop();
        }
        parsed.push(points);
    }
    if parsed.is_empty() {
        return Err(Error::parse(path, 1, "polygon has no rings"));
    }
    let exterior = parsed.remove(0);
    Aoi::new(GeoPolygon::new(exterior, parsed, crate::geo::Crs::Wgs84))
}
