//! Vector ground truth to label rasters: per-pixel coverage-ratio
//! assignment, parcel-id grids and double-assignment masks, at the base
//! 10 m resolution or any integer super-resolution of it.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geo::{pixel_coverage_fraction, Crs, GeoPolygon, GeoTransform, PixelRect};

/// Claims weaker than this are treated as floating-point slivers.
pub const CLAIM_THRESHOLD: f64 = 1e-12;
/// A fraction at least this close to 1 counts as full cover.
pub const FULL_COVER_THRESHOLD: f64 = 1.0 - 1e-9;

/// Base image resolution the label grids are scaled against, meters.
pub const BASE_RESOLUTION_M: f64 = 10.0;

const BLOCK_SIZE: usize = 1024;

/// Ground truth carried by a parcel: a class id for segmentation-style
/// labels, or a real value for regression targets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GroundTruth {
    Class(u32),
    Value(f64),
}

/// One vector ground-truth polygon.
#[derive(Debug, Clone)]
pub struct ParcelRecord {
    /// Unique within a collection; 0 is reserved for "no parcel".
    pub parcel_id: u32,
    pub geometry: GeoPolygon,
    pub ground_truth: GroundTruth,
    pub year: i32,
}

/// Geometry of a label grid: a (possibly super-resolved) copy of a 10 m
/// product grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
    pub geotransform: GeoTransform,
    pub crs: Crs,
    /// Super-resolution factor relative to the 10 m base grid
    /// (1 -> 10 m, 4 -> 2.5 m).
    pub scale: u32,
}

impl GridSpec {
    pub fn new(rows: usize, cols: usize, geotransform: GeoTransform, crs: Crs, scale: u32) -> Result<Self> {
        if scale == 0 {
            return Err(Error::Grid("super-resolution scale must be positive".into()));
        }
        if !crs.is_projected() {
            return Err(Error::Grid("label grids must be in a projected CRS".into()));
        }
        let expected = BASE_RESOLUTION_M / f64::from(scale);
        if (geotransform.pixel_width - expected).abs() > 1e-9
            || (geotransform.pixel_height - expected).abs() > 1e-9
        {
            return Err(Error::Grid(format!(
                "scale {} requires {} m pixels, geotransform has {} x {}",
                scale, expected, geotransform.pixel_width, geotransform.pixel_height
            )));
        }
        Ok(Self { rows, cols, geotransform, crs, scale })
    }

    /// Derives the grid covering the same extent as a 10 m base grid at
    /// the given super-resolution factor.
    pub fn from_base_extent(
        base_rows: usize,
        base_cols: usize,
        base_gt: GeoTransform,
        crs: Crs,
        scale: u32,
    ) -> Result<Self> {
        if (base_gt.pixel_width - BASE_RESOLUTION_M).abs() > 1e-9 {
            return Err(Error::Grid(format!(
                "base grid must have 10 m pixels, got {}",
                base_gt.pixel_width
            )));
        }
        let pixel = BASE_RESOLUTION_M / f64::from(scale);
        let gt = GeoTransform::north_up(base_gt.origin_x, base_gt.origin_y, pixel, pixel)?;
        GridSpec::new(
            base_rows * scale as usize,
            base_cols * scale as usize,
            gt,
            crs,
            scale,
        )
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn resolution_m(&self) -> f64 {
        BASE_RESOLUTION_M / f64::from(self.scale)
    }
}

/// Rasterized ground truth: class and parcel-id grids plus the two
/// double-assignment masks, all row-major over the same grid.
#[derive(Debug, Clone)]
pub struct LabelProduct {
    pub class_grid: Vec<u32>,
    pub parcel_grid: Vec<u32>,
    pub partial_conflict_mask: Vec<u8>,
    pub full_conflict_mask: Vec<u8>,
    /// Present when the records carry regression values.
    pub value_grid: Option<Vec<f32>>,
    pub grid_spec: GridSpec,
    pub background: u32,
    pub year: i32,
}

impl LabelProduct {
    pub fn idx(&self, col: usize, row: usize) -> usize {
        row * self.grid_spec.cols + col
    }
}

/// Keeps only records whose ground truth is valid in the given year.
pub fn filter_by_year(records: Vec<ParcelRecord>, year: i32) -> Vec<ParcelRecord> {
    records.into_iter().filter(|r| r.year == year).collect()
}

struct PreparedRecord {
    parcel_id: u32,
    class: u32,
    value: f64,
    geometry: GeoPolygon,
    /// Inclusive pixel bounds in the label grid.
    col_min: usize,
    col_max: usize,
    row_min: usize,
    row_max: usize,
}

/// Burns parcels into label grids.
///
/// Pixels are claimed per record over the record's pixel bounding box
/// whenever the coverage fraction exceeds [`CLAIM_THRESHOLD`]. A pixel's
/// final class and parcel come from the claimant with the greatest
/// fraction, ties resolved toward the lowest parcel id. Records are
/// processed in ascending parcel-id order, so permuting the input cannot
/// change any grid.
pub fn rasterize_parcels(
    records: &[ParcelRecord],
    spec: &GridSpec,
    background: u32,
    year: i32,
) -> Result<LabelProduct> {
    let mut sorted: Vec<&ParcelRecord> = records.iter().collect();
    sorted.sort_by_key(|r| r.parcel_id);
    for pair in sorted.windows(2) {
        if pair[0].parcel_id == pair[1].parcel_id {
            return Err(Error::Validation(format!(
                "duplicate parcel_id {}",
                pair[0].parcel_id
            )));
        }
    }
    let regression = matches!(
        sorted.first().map(|r| &r.ground_truth),
        Some(GroundTruth::Value(_))
    );
    for r in &sorted {
        if r.parcel_id == 0 {
            return Err(Error::Validation("parcel_id 0 is reserved for background".into()));
        }
        let mixed = matches!(
            (regression, &r.ground_truth),
            (true, GroundTruth::Class(_)) | (false, GroundTruth::Value(_))
        );
        if mixed {
            return Err(Error::Validation(
                "cannot mix class and regression ground truth in one collection".into(),
            ));
        }
    }

    let mut prepared = Vec::with_capacity(sorted.len());
    for record in sorted {
        let geometry = if record.geometry.crs == spec.crs {
            record.geometry.clone()
        } else {
            record.geometry.reproject(spec.crs)?
        };
        let bbox = geometry.bounding_rect();
        let (c0, r0) = spec.geotransform.geo_to_pixel(crate::geo::GeoPoint::new(bbox.min_x, bbox.max_y));
        let (c1, r1) = spec.geotransform.geo_to_pixel(crate::geo::GeoPoint::new(bbox.max_x, bbox.min_y));
        let col_min = c0.floor().max(0.0) as i64;
        let row_min = r0.floor().max(0.0) as i64;
        let col_max = (c1.ceil() as i64).min(spec.cols as i64) - 1;
        let row_max = (r1.ceil() as i64).min(spec.rows as i64) - 1;
        if col_min > col_max || row_min > row_max || c1 < 0.0 || r1 < 0.0 {
            log::debug!(
                "parcel {} lies outside the label grid, skipping",
                record.parcel_id
            );
            continue;
        }
        let (class, value) = match record.ground_truth {
            GroundTruth::Class(c) => (c, 0.0),
            GroundTruth::Value(v) => (1, v),
        };
        prepared.push(PreparedRecord {
            parcel_id: record.parcel_id,
            class,
            value,
            geometry,
            col_min: col_min as usize,
            col_max: col_max as usize,
            row_min: row_min as usize,
            row_max: row_max as usize,
        });
    }

    let blocks_x = spec.cols.div_ceil(BLOCK_SIZE).max(1);
    let blocks_y = spec.rows.div_ceil(BLOCK_SIZE).max(1);

    // bucket records by the blocks their bounding boxes touch
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); blocks_x * blocks_y];
    for (i, rec) in prepared.iter().enumerate() {
        let bx0 = rec.col_min / BLOCK_SIZE;
        let bx1 = rec.col_max / BLOCK_SIZE;
        let by0 = rec.row_min / BLOCK_SIZE;
        let by1 = rec.row_max / BLOCK_SIZE;
        for by in by0..=by1 {
            for bx in bx0..=bx1 {
                buckets[by * blocks_x + bx].push(i);
            }
        }
    }

    struct BlockResult {
        block_x: usize,
        block_y: usize,
        cols: usize,
        rows: usize,
        class: Vec<u32>,
        parcel: Vec<u32>,
        partial: Vec<u8>,
        full: Vec<u8>,
        value: Vec<f32>,
    }

    let results: Vec<BlockResult> = (0..blocks_x * blocks_y)
        .into_par_iter()
        .map(|block_idx| {
            let block_x = block_idx % blocks_x;
            let block_y = block_idx / blocks_x;
            let col0 = block_x * BLOCK_SIZE;
            let row0 = block_y * BLOCK_SIZE;
            let cols = BLOCK_SIZE.min(spec.cols - col0);
            let rows = BLOCK_SIZE.min(spec.rows - row0);
            let n = cols * rows;

            let mut best_fraction = vec![0.0f64; n];
            let mut claims = vec![0u16; n];
            let mut full_claims = vec![0u16; n];
            let mut class = vec![background; n];
            let mut parcel = vec![0u32; n];
            let mut value = vec![0.0f32; n];

            for &rec_idx in &buckets[block_idx] {
                let rec = &prepared[rec_idx];
                let cmin = rec.col_min.max(col0);
                let cmax = rec.col_max.min(col0 + cols - 1);
                let rmin = rec.row_min.max(row0);
                let rmax = rec.row_max.min(row0 + rows - 1);
                for row in rmin..=rmax {
                    for col in cmin..=cmax {
                        let fraction = pixel_coverage_fraction(
                            &rec.geometry,
                            PixelRect::new(col, row),
                            &spec.geotransform,
                        )
                        .expect("grid pixels are non-degenerate");
                        if fraction <= CLAIM_THRESHOLD {
                            continue;
                        }
                        let i = (row - row0) * cols + (col - col0);
                        claims[i] = claims[i].saturating_add(1);
                        if fraction >= FULL_COVER_THRESHOLD {
                            full_claims[i] = full_claims[i].saturating_add(1);
                        }
                        // strictly greater keeps the lowest parcel id on ties
                        // because records arrive in ascending id order
                        if fraction > best_fraction[i] {
                            best_fraction[i] = fraction;
                            class[i] = rec.class;
                            parcel[i] = rec.parcel_id;
                            value[i] = rec.value as f32;
                        }
                    }
                }
            }

            BlockResult {
                block_x,
                block_y,
                cols,
                rows,
                class,
                parcel,
                partial: claims.iter().map(|&c| u8::from(c >= 2)).collect(),
                full: full_claims.iter().map(|&c| u8::from(c >= 2)).collect(),
                value,
            }
        })
        .collect();

    let mut label = LabelProduct {
        class_grid: vec![background; spec.len()],
        parcel_grid: vec![0; spec.len()],
        partial_conflict_mask: vec![0; spec.len()],
        full_conflict_mask: vec![0; spec.len()],
        value_grid: regression.then(|| vec![0.0f32; spec.len()]),
        grid_spec: spec.clone(),
        background,
        year,
    };

    for block in results {
        let col0 = block.block_x * BLOCK_SIZE;
        let row0 = block.block_y * BLOCK_SIZE;
        for r in 0..block.rows {
            let src = r * block.cols;
            let dst = (row0 + r) * spec.cols + col0;
            label.class_grid[dst..dst + block.cols].copy_from_slice(&block.class[src..src + block.cols]);
            label.parcel_grid[dst..dst + block.cols]
                .copy_from_slice(&block.parcel[src..src + block.cols]);
            label.partial_conflict_mask[dst..dst + block.cols]
                .copy_from_slice(&block.partial[src..src + block.cols]);
            label.full_conflict_mask[dst..dst + block.cols]
                .copy_from_slice(&block.full[src..src + block.cols]);
            if let Some(values) = &mut label.value_grid {
                values[dst..dst + block.cols].copy_from_slice(&block.value[src..src + block.cols]);
            }
        }
    }

    Ok(label)
}

/// Full-grid label layers on disk: one payload+sidecar per layer plus a
/// small JSON descriptor for what the grids alone cannot carry.
#[derive(serde::Serialize, serde::Deserialize)]
struct LabelDirMeta {
    background: u32,
    year: i32,
    scale: u32,
}

pub fn write_label_product(dir: &std::path::Path, label: &LabelProduct) -> Result<()> {
    use crate::grid_io::{self, Dtype, GridMeta, GridValues};
    std::fs::create_dir_all(dir)
        .map_err(|e| Error::io_at(format!("create {}", dir.display()), e))?;
    let spec = &label.grid_spec;
    let meta = |layer: &str, dtype: Dtype| GridMeta {
        band_id: layer.to_string(),
        resolution_m: spec.resolution_m(),
        rows: spec.rows,
        cols: spec.cols,
        dtype,
        nodata: 0,
        crs: spec.crs,
        geotransform: spec.geotransform,
        frames: None,
    };
    grid_io::write_grid(
        &dir.join("labels.grid"),
        &meta("labels", Dtype::U32),
        &GridValues::U32(label.class_grid.clone()),
    )?;
    grid_io::write_grid(
        &dir.join("parcels.grid"),
        &meta("parcels", Dtype::U32),
        &GridValues::U32(label.parcel_grid.clone()),
    )?;
    grid_io::write_grid(
        &dir.join("mask_partial.grid"),
        &meta("mask_partial", Dtype::U8),
        &GridValues::U8(label.partial_conflict_mask.clone()),
    )?;
    grid_io::write_grid(
        &dir.join("mask_full.grid"),
        &meta("mask_full", Dtype::U8),
        &GridValues::U8(label.full_conflict_mask.clone()),
    )?;
    if let Some(values) = &label.value_grid {
        grid_io::write_grid(
            &dir.join("values.grid"),
            &meta("values", Dtype::F32),
            &GridValues::F32(values.clone()),
        )?;
    }
    let descriptor = LabelDirMeta {
        background: label.background,
        year: label.year,
        scale: spec.scale,
    };
    std::fs::write(dir.join("meta.json"), serde_json::to_string(&descriptor)?)
        .map_err(|e| Error::io_at(format!("write {}", dir.join("meta.json").display()), e))?;
    Ok(())
}

pub fn read_label_product(dir: &std::path::Path) -> Result<LabelProduct> {
    use crate::grid_io::{self, GridValues};
    let descriptor: LabelDirMeta = serde_json::from_str(
        &std::fs::read_to_string(dir.join("meta.json"))
            .map_err(|e| Error::io_at(format!("read {}", dir.join("meta.json").display()), e))?,
    )?;
    let (labels_meta, labels) = grid_io::read_grid(&dir.join("labels.grid"))?;
    let (_, parcels) = grid_io::read_grid(&dir.join("parcels.grid"))?;
    let (_, partial) = grid_io::read_grid(&dir.join("mask_partial.grid"))?;
    let (_, full) = grid_io::read_grid(&dir.join("mask_full.grid"))?;
    let values_path = dir.join("values.grid");
    let value_grid = if values_path.exists() {
        let (_, v) = grid_io::read_grid(&values_path)?;
        let GridValues::F32(v) = v else {
            return Err(Error::Grid("values layer must be f32le".into()));
        };
        Some(v)
    } else {
        None
    };
    let (GridValues::U32(class_grid), GridValues::U32(parcel_grid)) = (labels, parcels) else {
        return Err(Error::Grid("label layers must be u32le".into()));
    };
    let (GridValues::U8(partial_mask), GridValues::U8(full_mask)) = (partial, full) else {
        return Err(Error::Grid("mask layers must be u8".into()));
    };
    let spec = GridSpec::new(
        labels_meta.rows,
        labels_meta.cols,
        labels_meta.geotransform,
        labels_meta.crs,
        descriptor.scale,
    )?;
    Ok(LabelProduct {
        class_grid,
        parcel_grid,
        partial_conflict_mask: partial_mask,
        full_conflict_mask: full_mask,
        value_grid,
        grid_spec: spec,
        background: descriptor.background,
        year: descriptor.year,
    })
}

/// Share of labeled pixels carrying each conflict mask. Both fractions
/// are 0 when nothing is labeled.
pub fn conflict_ratio(label: &LabelProduct) -> (f64, f64) {
    let mut labeled = 0usize;
    let mut partial = 0usize;
    let mut full = 0usize;
    for i in 0..label.parcel_grid.len() {
        let touched = label.parcel_grid[i] != 0
            || label.partial_conflict_mask[i] != 0
            || label.full_conflict_mask[i] != 0;
        if touched {
            labeled += 1;
            partial += usize::from(label.partial_conflict_mask[i] != 0);
            full += usize::from(label.full_conflict_mask[i] != 0);
        }
    }
    if labeled == 0 {
        return (0.0, 0.0);
    }
    (partial as f64 / labeled as f64, full as f64 / labeled as f64)
}
