//! Window planning over a product extent and aligned patch extraction
//! across the 10/20/60 m resolution pyramid.

use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{Crs, GeoTransform, Rect};
use crate::grid_io::{self, Dtype, GridMeta, GridValues};
use crate::ingest::{BandGrid, ProductBundle};
use crate::raster::LabelProduct;

/// Window geometry in meters. Both sizes must be multiples of 60 m so
/// every band resolution lands on whole pixels.
#[derive(Debug, Clone, Copy)]
pub struct WindowSpec {
    pub window_m: u32,
    pub stride_m: u32,
    pub labeled_only: bool,
    /// Minimum fraction of non-background label pixels a window needs
    /// when `labeled_only` is on. Zero keeps any window with at least
    /// one labeled pixel.
    pub min_labeled_fraction: f64,
}

impl WindowSpec {
    pub fn new(window_m: u32, stride_m: u32, labeled_only: bool) -> Result<Self> {
        let spec = Self {
            window_m,
            stride_m,
            labeled_only,
            min_labeled_fraction: 0.0,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_m == 0 || self.stride_m == 0 {
            return Err(Error::Validation("window_m and stride_m must be positive".into()));
        }
        if !self.window_m.is_multiple_of(60) {
            return Err(Error::Validation(format!(
                "window_m must be divisible by 60, got {}",
                self.window_m
            )));
        }
        if !self.stride_m.is_multiple_of(60) {
            return Err(Error::Validation(format!(
                "stride_m must be divisible by 60, got {}",
                self.stride_m
            )));
        }
        if !(0.0..=1.0).contains(&self.min_labeled_fraction) {
            return Err(Error::Validation(format!(
                "min_labeled_fraction {} outside [0, 1]",
                self.min_labeled_fraction
            )));
        }
        Ok(())
    }
}

/// The 10 m pixel grid of one tile, the frame windows are planned in.
#[derive(Debug, Clone)]
pub struct TileExtent {
    pub tile_id: String,
    pub rows: usize,
    pub cols: usize,
    pub geotransform: GeoTransform,
    pub crs: Crs,
}

impl TileExtent {
    /// Derives the extent from a bundle's finest band.
    pub fn of_bundle(bundle: &ProductBundle) -> Result<Self> {
        let band = bundle
            .bands
            .values()
            .find(|b| b.resolution_m == 10)
            .ok_or_else(|| Error::Grid("product has no 10 m band".into()))?;
        Ok(Self {
            tile_id: bundle.tile_id.clone(),
            rows: band.rows,
            cols: band.cols,
            geotransform: band.geotransform,
            crs: band.crs,
        })
    }
}

/// One planned window: a fixed ground square addressed in 10 m pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub location_key: String,
    /// Top-left corner in 10 m pixels of the tile grid.
    pub col0: usize,
    pub row0: usize,
    /// Side length in 10 m pixels.
    pub size: usize,
    pub extent: Rect,
}

pub fn location_key(tile_id: &str, col0: usize, row0: usize) -> String {
    format!("T{}_{}_{}", tile_id.trim_start_matches('T'), col0, row0)
}

/// Plans row-major striding windows, dropping any window that would
/// cross the grid edge. With `labeled_only`, keeps only windows whose
/// label crop has enough non-background pixels.
pub fn plan_windows(
    extent: &TileExtent,
    spec: &WindowSpec,
    label: Option<&LabelProduct>,
) -> Result<Vec<Window>> {
    spec.validate()?;
    if (extent.geotransform.pixel_width - 10.0).abs() > 1e-9 {
        return Err(Error::Grid(format!(
            "window planning expects a 10 m grid, got {} m pixels",
            extent.geotransform.pixel_width
        )));
    }
    let window_px = (spec.window_m / 10) as usize;
    let stride_px = (spec.stride_m / 10) as usize;

    let label = match (spec.labeled_only, label) {
        (true, None) => {
            return Err(Error::Validation(
                "labeled_only planning requires a label product".into(),
            ))
        }
        (true, Some(l)) => {
            check_label_alignment(extent, l)?;
            Some(l)
        }
        (false, l) => {
            if let Some(l) = l {
                check_label_alignment(extent, l)?;
            }
            None
        }
    };

    let mut windows = Vec::new();
    if extent.rows < window_px || extent.cols < window_px {
        return Ok(windows);
    }
    let mut row0 = 0usize;
    while row0 + window_px <= extent.rows {
        let mut col0 = 0usize;
        while col0 + window_px <= extent.cols {
            let keep = match label {
                None => true,
                Some(l) => {
                    let (labeled, total) = count_labeled(l, col0, row0, window_px);
                    labeled >= 1 && labeled as f64 / total as f64 >= spec.min_labeled_fraction
                }
            };
            if keep {
                let ul = extent.geotransform.pixel_to_geo(col0 as f64, row0 as f64);
                let side = f64::from(spec.window_m);
                windows.push(Window {
                    location_key: location_key(&extent.tile_id, col0, row0),
                    col0,
                    row0,
                    size: window_px,
                    extent: Rect::new(ul.x, ul.y - side, ul.x + side, ul.y),
                });
            }
            col0 += stride_px;
        }
        row0 += stride_px;
    }
    Ok(windows)
}

fn check_label_alignment(extent: &TileExtent, label: &LabelProduct) -> Result<()> {
    let scale = label.grid_spec.scale as usize;
    let gt = &label.grid_spec.geotransform;
    let base = &extent.geotransform;
    if (gt.origin_x - base.origin_x).abs() > 1e-6 || (gt.origin_y - base.origin_y).abs() > 1e-6 {
        return Err(Error::Grid("misaligned label grid: origin differs from tile".into()));
    }
    if label.grid_spec.crs != extent.crs {
        return Err(Error::Grid("misaligned label grid: CRS differs from tile".into()));
    }
    if label.grid_spec.rows != extent.rows * scale || label.grid_spec.cols != extent.cols * scale {
        return Err(Error::Grid(format!(
            "misaligned label grid: {}x{} does not cover the {}x{} tile at scale {}",
            label.grid_spec.rows, label.grid_spec.cols, extent.rows, extent.cols, scale
        )));
    }
    Ok(())
}

fn count_labeled(label: &LabelProduct, col0: usize, row0: usize, window_px: usize) -> (usize, usize) {
    let scale = label.grid_spec.scale as usize;
    let cols = label.grid_spec.cols;
    let side = window_px * scale;
    let (c0, r0) = (col0 * scale, row0 * scale);
    let mut labeled = 0usize;
    for r in r0..r0 + side {
        let base = r * cols;
        for c in c0..c0 + side {
            if label.class_grid[base + c] != label.background {
                labeled += 1;
            }
        }
    }
    (labeled, side * side)
}

/// A cropped band window.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub location_key: String,
    pub band_id: String,
    pub sensing_time: DateTime<Utc>,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<u16>,
    pub resolution_m: u32,
    pub geotransform: GeoTransform,
    pub crs: Crs,
}

/// Pure crop of a window out of one band. The window's ground extent is
/// preserved exactly; no resampling happens.
pub fn extract_patch(
    band: &BandGrid,
    window: &Window,
    sensing_time: DateTime<Utc>,
) -> Result<Patch> {
    let res = f64::from(band.resolution_m);
    let gt = &band.geotransform;
    let col0 = (window.extent.min_x - gt.origin_x) / res;
    let row0 = (gt.origin_y - window.extent.max_y) / res;
    let side = window.size as f64 * 10.0 / res;
    let aligned = |v: f64| (v - v.round()).abs() < 1e-6 && v.round() >= 0.0;
    if !aligned(col0) || !aligned(row0) || !aligned(side) {
        return Err(Error::Grid(format!(
            "window {} does not land on whole {} m pixels",
            window.location_key, band.resolution_m
        )));
    }
    let (col0, row0, side) = (col0.round() as usize, row0.round() as usize, side.round() as usize);
    if col0 + side > band.cols || row0 + side > band.rows {
        return Err(Error::Grid(format!(
            "window {} exceeds band {} bounds",
            window.location_key, band.band_id
        )));
    }
    let mut values = Vec::with_capacity(side * side);
    for r in row0..row0 + side {
        let start = r * band.cols + col0;
        values.extend_from_slice(&band.values[start..start + side]);
    }
    let origin = gt.pixel_to_geo(col0 as f64, row0 as f64);
    Ok(Patch {
        location_key: window.location_key.clone(),
        band_id: band.band_id.clone(),
        sensing_time,
        rows: side,
        cols: side,
        values,
        resolution_m: band.resolution_m,
        geotransform: GeoTransform::north_up(origin.x, origin.y, res, res)?,
        crs: band.crs,
    })
}

/// All label layers cropped to one window.
#[derive(Debug, Clone)]
pub struct LabelPatch {
    pub location_key: String,
    pub rows: usize,
    pub cols: usize,
    pub class: Vec<u32>,
    pub parcel: Vec<u32>,
    pub mask_partial: Vec<u8>,
    pub mask_full: Vec<u8>,
    pub values: Option<Vec<f32>>,
    pub scale: u32,
    pub background: u32,
    pub geotransform: GeoTransform,
    pub crs: Crs,
}

/// Crops every label layer consistently; output side is
/// `window_px * scale`.
pub fn extract_label_patch(label: &LabelProduct, window: &Window) -> Result<LabelPatch> {
    let scale = label.grid_spec.scale as usize;
    let side = window.size * scale;
    let c0 = window.col0 * scale;
    let r0 = window.row0 * scale;
    if c0 + side > label.grid_spec.cols || r0 + side > label.grid_spec.rows {
        return Err(Error::Grid(format!(
            "label grid does not cover window {}",
            window.location_key
        )));
    }
    let crop_u32 = |grid: &[u32]| {
        let mut out = Vec::with_capacity(side * side);
        for r in r0..r0 + side {
            let start = r * label.grid_spec.cols + c0;
            out.extend_from_slice(&grid[start..start + side]);
        }
        out
    };
    let crop_u8 = |grid: &[u8]| {
        let mut out = Vec::with_capacity(side * side);
        for r in r0..r0 + side {
            let start = r * label.grid_spec.cols + c0;
            out.extend_from_slice(&grid[start..start + side]);
        }
        out
    };
    let crop_f32 = |grid: &[f32]| {
        let mut out = Vec::with_capacity(side * side);
        for r in r0..r0 + side {
            let start = r * label.grid_spec.cols + c0;
            out.extend_from_slice(&grid[start..start + side]);
        }
        out
    };
    let res = label.grid_spec.resolution_m();
    let origin = label.grid_spec.geotransform.pixel_to_geo(c0 as f64, r0 as f64);
    Ok(LabelPatch {
        location_key: window.location_key.clone(),
        rows: side,
        cols: side,
        class: crop_u32(&label.class_grid),
        parcel: crop_u32(&label.parcel_grid),
        mask_partial: crop_u8(&label.partial_conflict_mask),
        mask_full: crop_u8(&label.full_conflict_mask),
        values: label.value_grid.as_ref().map(|g| crop_f32(g)),
        scale: label.grid_spec.scale,
        background: label.background,
        geotransform: GeoTransform::north_up(origin.x, origin.y, res, res)?,
        crs: label.grid_spec.crs,
    })
}

/// Compact UTC instant used for patch-store directory names.
pub fn date_dir_name(t: DateTime<Utc>) -> String {
    t.format("%Y%m%dT%H%M%SZ").to_string()
}

/// Per-date product descriptor stored next to the patches, so later
/// stages know where a date directory came from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DateDirMeta {
    pub product_id: String,
    pub tile_id: String,
    pub sensing_time: String,
    pub cloud_cover_pct: Option<f64>,
}

pub fn patches_dir(out_root: &Path) -> PathBuf {
    out_root.join("patches")
}

pub fn labels_dir(out_root: &Path) -> PathBuf {
    out_root.join("labels")
}

/// Writes one patch into `<out>/patches/<date>/<location_key>/<band>.grid`.
pub fn write_patch(out_root: &Path, patch: &Patch) -> Result<PathBuf> {
    let dir = patches_dir(out_root)
        .join(date_dir_name(patch.sensing_time))
        .join(&patch.location_key);
    let path = dir.join(format!("{}.grid", patch.band_id));
    let meta = GridMeta {
        band_id: patch.band_id.clone(),
        resolution_m: f64::from(patch.resolution_m),
        rows: patch.rows,
        cols: patch.cols,
        dtype: Dtype::U16,
        nodata: 0,
        crs: patch.crs,
        geotransform: patch.geotransform,
        frames: None,
    };
    grid_io::write_grid(&path, &meta, &GridValues::U16(patch.values.clone()))?;
    Ok(path)
}

pub fn write_date_dir_meta(
    out_root: &Path,
    sensing_time: DateTime<Utc>,
    meta: &DateDirMeta,
) -> Result<()> {
    let dir = patches_dir(out_root).join(date_dir_name(sensing_time));
    std::fs::create_dir_all(&dir)
        .map_err(|e| Error::io_at(format!("create {}", dir.display()), e))?;
    let path = dir.join("product.json");
    std::fs::write(&path, serde_json::to_string(meta)?)
        .map_err(|e| Error::io_at(format!("write {}", path.display()), e))?;
    Ok(())
}

/// Writes all layers of a label patch under
/// `<out>/labels/<location_key>/<layer>.grid`.
pub fn write_label_patch(out_root: &Path, patch: &LabelPatch) -> Result<()> {
    let dir = labels_dir(out_root).join(&patch.location_key);
    let res = 10.0 / f64::from(patch.scale);
    let meta = |layer: &str, dtype: Dtype| GridMeta {
        band_id: layer.to_string(),
        resolution_m: res,
        rows: patch.rows,
        cols: patch.cols,
        dtype,
        nodata: 0,
        crs: patch.crs,
        geotransform: patch.geotransform,
        frames: None,
    };
    grid_io::write_grid(
        &dir.join("labels.grid"),
        &meta("labels", Dtype::U32),
        &GridValues::U32(patch.class.clone()),
    )?;
    grid_io::write_grid(
        &dir.join("parcels.grid"),
        &meta("parcels", Dtype::U32),
        &GridValues::U32(patch.parcel.clone()),
    )?;
    grid_io::write_grid(
        &dir.join("mask_partial.grid"),
        &meta("mask_partial", Dtype::U8),
        &GridValues::U8(patch.mask_partial.clone()),
    )?;
    grid_io::write_grid(
        &dir.join("mask_full.grid"),
        &meta("mask_full", Dtype::U8),
        &GridValues::U8(patch.mask_full.clone()),
    )?;
    if let Some(values) = &patch.values {
        grid_io::write_grid(
            &dir.join("values.grid"),
            &meta("values", Dtype::F32),
            &GridValues::F32(values.clone()),
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::Hemisphere;
    use crate::geo::GeoPoint;
    use crate::raster::{rasterize_parcels, GridSpec, GroundTruth, ParcelRecord};

    fn utm31() -> Crs {
        Crs::utm(31, Hemisphere::North).unwrap()
    }

    fn extent(rows: usize, cols: usize) -> TileExtent {
        TileExtent {
            tile_id: "31TCJ".into(),
            rows,
            cols,
            geotransform: GeoTransform::north_up(300_000.0, 4_800_000.0, 10.0, 10.0).unwrap(),
            crs: utm31(),
        }
    }

    fn band(band_id: &str, res: u32, rows: usize, cols: usize) -> BandGrid {
        let values = (0..rows * cols).map(|i| (i % 4999) as u16).collect();
        BandGrid {
            band_id: band_id.into(),
            resolution_m: res,
            rows,
            cols,
            values,
            nodata_value: 0,
            geotransform: GeoTransform::north_up(300_000.0, 4_800_000.0, f64::from(res), f64::from(res))
                .unwrap(),
            crs: utm31(),
        }
    }

    #[test]
    fn window_count_matches_grid_arithmetic() {
        let spec = WindowSpec::new(240, 240, false).unwrap();
        let windows = plan_windows(&extent(480, 480), &spec, None).unwrap();
        // floor(480/24) = 20 per axis
        assert_eq!(windows.len(), 400);
        assert_eq!(windows[0].location_key, "T31TCJ_0_0");
        assert_eq!(windows[1].location_key, "T31TCJ_24_0");
    }

    #[test]
    fn undersized_extent_plans_nothing() {
        let spec = WindowSpec::new(480, 480, false).unwrap();
        assert!(plan_windows(&extent(40, 40), &spec, None).unwrap().is_empty());
    }

    #[test]
    fn plan_is_deterministic() {
        let spec = WindowSpec::new(240, 120, false).unwrap();
        let a = plan_windows(&extent(240, 240), &spec, None).unwrap();
        let b = plan_windows(&extent(240, 240), &spec, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn labeled_only_keeps_annotated_windows() {
        let ext = extent(48, 48);
        let grid_spec = GridSpec::from_base_extent(48, 48, ext.geotransform, ext.crs, 1).unwrap();
        // one parcel inside the first 24x24 window only
        let records = vec![ParcelRecord {
            parcel_id: 1,
            geometry: crate::geo::GeoPolygon::rect(
                300_050.0,
                4_799_900.0,
                300_150.0,
                4_799_960.0,
                utm31(),
            ),
            ground_truth: GroundTruth::Class(3),
            year: 2018,
        }];
        let label = rasterize_parcels(&records, &grid_spec, 0, 2018).unwrap();
        let spec = WindowSpec::new(240, 240, true).unwrap();
        let windows = plan_windows(&ext, &spec, Some(&label)).unwrap();
        assert_eq!(windows.len(), 1);
        assert_eq!(windows[0].location_key, "T31TCJ_0_0");

        // all-background label keeps nothing
        let empty = rasterize_parcels(&[], &grid_spec, 0, 2018).unwrap();
        assert!(plan_windows(&ext, &spec, Some(&empty)).unwrap().is_empty());
    }

    #[test]
    fn misaligned_label_is_rejected() {
        let ext = extent(48, 48);
        let shifted = GeoTransform::north_up(300_010.0, 4_800_000.0, 10.0, 10.0).unwrap();
        let grid_spec = GridSpec::new(48, 48, shifted, ext.crs, 1).unwrap();
        let label = rasterize_parcels(&[], &grid_spec, 0, 2018).unwrap();
        let spec = WindowSpec::new(240, 240, true).unwrap();
        let err = plan_windows(&ext, &spec, Some(&label)).unwrap_err();
        assert!(err.to_string().contains("misaligned"), "{err}");
    }

    #[test]
    fn patch_sizes_follow_resolution() {
        let ext = extent(96, 96);
        let spec = WindowSpec::new(480, 480, false).unwrap();
        let windows = plan_windows(&ext, &spec, None).unwrap();
        let t = Utc::now();
        let b10 = band("B02", 10, 96, 96);
        let b20 = band("B05", 20, 48, 48);
        let b60 = band("B01", 60, 16, 16);
        let w = &windows[1];
        assert_eq!(extract_patch(&b10, w, t).unwrap().rows, 48);
        assert_eq!(extract_patch(&b20, w, t).unwrap().rows, 24);
        assert_eq!(extract_patch(&b60, w, t).unwrap().rows, 8);
    }

    #[test]
    fn patch_is_exact_crop() {
        let ext = extent(96, 96);
        let spec = WindowSpec::new(240, 240, false).unwrap();
        let windows = plan_windows(&ext, &spec, None).unwrap();
        let b = band("B02", 10, 96, 96);
        let w = windows.iter().find(|w| w.col0 == 24 && w.row0 == 48).unwrap();
        let patch = extract_patch(&b, w, Utc::now()).unwrap();
        for r in 0..24 {
            for c in 0..24 {
                assert_eq!(
                    patch.values[r * 24 + c],
                    b.values[(48 + r) * 96 + (24 + c)],
                    "({c},{r})"
                );
            }
        }
    }

    #[test]
    fn patch_corners_align_across_resolutions() {
        let ext = extent(96, 96);
        let spec = WindowSpec::new(480, 480, false).unwrap();
        let windows = plan_windows(&ext, &spec, None).unwrap();
        let t = Utc::now();
        let bands = [band("B02", 10, 96, 96), band("B05", 20, 48, 48), band("B01", 60, 16, 16)];
        for w in &windows {
            let corners: Vec<GeoPoint> = bands
                .iter()
                .map(|b| {
                    let p = extract_patch(b, w, t).unwrap();
                    p.geotransform.pixel_to_geo(0.0, 0.0)
                })
                .collect();
            // exact equality: divisibility makes the corner coordinates
            // identical floating-point values
            assert_eq!(corners[0], corners[1]);
            assert_eq!(corners[1], corners[2]);
        }
    }

    #[test]
    fn out_of_bounds_window_fails() {
        let b = band("B02", 10, 24, 24);
        let w = Window {
            location_key: "T31TCJ_12_0".into(),
            col0: 12,
            row0: 0,
            size: 24,
            extent: Rect::new(300_120.0, 4_799_760.0, 300_360.0, 4_800_000.0),
        };
        assert!(extract_patch(&b, &w, Utc::now()).is_err());
    }

    #[test]
    fn label_patch_crops_all_layers() {
        let ext = extent(48, 48);
        let grid_spec = GridSpec::from_base_extent(48, 48, ext.geotransform, ext.crs, 4).unwrap();
        let records = vec![ParcelRecord {
            parcel_id: 9,
            geometry: crate::geo::GeoPolygon::rect(
                300_000.0,
                4_799_760.0,
                300_240.0,
                4_800_000.0,
                utm31(),
            ),
            ground_truth: GroundTruth::Class(5),
            year: 2018,
        }];
        let label = rasterize_parcels(&records, &grid_spec, 0, 2018).unwrap();
        let spec = WindowSpec::new(240, 240, false).unwrap();
        let windows = plan_windows(&ext, &spec, Some(&label)).unwrap();
        let patch = extract_label_patch(&label, &windows[0]).unwrap();
        // 24 base pixels at scale 4
        assert_eq!(patch.rows, 96);
        assert!(patch.class.iter().all(|&c| c == 5));
        assert!(patch.parcel.iter().all(|&p| p == 9));
        // bit-exact against the full grid
        for r in 0..96 {
            for c in 0..96 {
                assert_eq!(
                    patch.mask_partial[r * 96 + c],
                    label.partial_conflict_mask[r * label.grid_spec.cols + c]
                );
            }
        }
        let far = extract_label_patch(&label, windows.last().unwrap()).unwrap();
        assert!(far.class.iter().all(|&c| c == 0));
    }

    #[test]
    fn label_patch_side_scales_with_resolution_factor() {
        let ext = extent(96, 96);
        let spec = WindowSpec::new(480, 480, false).unwrap();
        for (scale, side) in [(1u32, 48usize), (4, 192)] {
            let grid_spec =
                GridSpec::from_base_extent(96, 96, ext.geotransform, ext.crs, scale).unwrap();
            let label = rasterize_parcels(&[], &grid_spec, 0, 2018).unwrap();
            let windows = plan_windows(&ext, &spec, Some(&label)).unwrap();
            let patch = extract_label_patch(&label, &windows[0]).unwrap();
            assert_eq!((patch.rows, patch.cols), (side, side), "scale {scale}");
        }
    }
}
