//! Product catalog: query construction, candidate scoring along the four
//! selection criteria (AOI overlap, cloud cover, data coverage, temporal
//! spread) and the selection/report files that feed the download stage.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use chrono::{DateTime, SecondsFormat, Utc};

use crate::error::{Error, Result};
use crate::geo::{polygon_area, polygon_intersection_area, Crs, GeoPolygon, Hemisphere};

/// Catalog entry for one product, as reported by the hub.
#[derive(Debug, Clone)]
pub struct ProductMeta {
    pub product_id: String,
    pub tile_id: String,
    pub sensing_time: DateTime<Utc>,
    pub cloud_cover_pct: f64,
    pub footprint: GeoPolygon,
    /// Absent when the catalog does not report it; treated as full
    /// coverage until the product is ingested and recomputed.
    pub data_coverage_pct: Option<f64>,
    pub online: bool,
    pub size_bytes: u64,
    pub md5: Option<String>,
}

impl ProductMeta {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=100.0).contains(&self.cloud_cover_pct) {
            return Err(Error::Validation(format!(
                "product {}: cloud cover {} outside [0, 100]",
                self.product_id, self.cloud_cover_pct
            )));
        }
        if let Some(dc) = self.data_coverage_pct {
            if !(0.0..=100.0).contains(&dc) {
                return Err(Error::Validation(format!(
                    "product {}: data coverage {} outside [0, 100]",
                    self.product_id, dc
                )));
            }
        }
        self.footprint.validate()?;
        Ok(())
    }

    pub fn effective_data_coverage_pct(&self) -> f64 {
        self.data_coverage_pct.unwrap_or(100.0)
    }
}

/// Area of interest, geographic coordinates.
#[derive(Debug, Clone)]
pub struct Aoi {
    pub polygon: GeoPolygon,
}

impl Aoi {
    pub fn new(polygon: GeoPolygon) -> Result<Self> {
        if !polygon.crs.is_geographic() {
            return Err(Error::Validation("AOI polygon must be in WGS84".into()));
        }
        polygon.validate()?;
        Ok(Self { polygon })
    }

    /// UTM zone of the AOI centroid; overlap math happens there.
    pub fn working_crs(&self) -> Crs {
        let centroid = self.polygon.exterior_centroid();
        let zone = Crs::utm_zone_for_lon(centroid.x);
        let hemisphere = if centroid.y < 0.0 {
            Hemisphere::South
        } else {
            Hemisphere::North
        };
        Crs::Utm { zone, hemisphere }
    }
}

/// Period of interest.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Poi {
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
}

impl Poi {
    pub fn new(start: DateTime<Utc>, end: DateTime<Utc>) -> Result<Self> {
        if start >= end {
            return Err(Error::Validation(format!(
                "period of interest must have start < end, got {start} .. {end}"
            )));
        }
        Ok(Self { start, end })
    }
}

/// Thresholds for filtering and the target date count for subsampling.
#[derive(Debug, Clone, Copy)]
pub struct SelectionConfig {
    pub cloud_max_pct: f64,
    pub min_aoi_overlap: f64,
    pub min_data_coverage_pct: f64,
    pub target_date_count: usize,
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=100.0).contains(&self.cloud_max_pct) {
            return Err(Error::Validation(format!(
                "cloud_max_pct {} outside [0, 100]",
                self.cloud_max_pct
            )));
        }
        if !(0.0..=1.0).contains(&self.min_aoi_overlap) {
            return Err(Error::Validation(format!(
                "min_aoi_overlap {} outside [0, 1]",
                self.min_aoi_overlap
            )));
        }
        if !(0.0..=100.0).contains(&self.min_data_coverage_pct) {
            return Err(Error::Validation(format!(
                "min_data_coverage_pct {} outside [0, 100]",
                self.min_data_coverage_pct
            )));
        }
        if self.target_date_count == 0 {
            return Err(Error::Validation("target_date_count must be at least 1".into()));
        }
        Ok(())
    }
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            cloud_max_pct: 5.0,
            min_aoi_overlap: 0.0,
            min_data_coverage_pct: 0.0,
            target_date_count: usize::MAX,
        }
    }
}

/// A fully determined catalog search request.
#[derive(Debug, Clone, PartialEq)]
pub struct QuerySpec {
    pub bbox_west: f64,
    pub bbox_south: f64,
    pub bbox_east: f64,
    pub bbox_north: f64,
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
    pub cloud_max_pct: f64,
}

impl QuerySpec {
    /// Serializes to the hub search query string. Field order and number
    /// formatting are fixed, so equal specs serialize identically.
    pub fn to_query_string(&self) -> String {
        let mut s = String::new();
        let _ = write!(
            s,
            "bbox={},{},{},{}&start={}&end={}&cloudmax={}",
            self.bbox_west,
            self.bbox_south,
            self.bbox_east,
            self.bbox_north,
            self.start.to_rfc3339_opts(SecondsFormat::Secs, true),
            self.end.to_rfc3339_opts(SecondsFormat::Secs, true),
            self.cloud_max_pct,
        );
        s
    }
}

/// Builds the search request for an AOI, a period and the configured
/// cloud ceiling.
pub fn build_query(aoi: &Aoi, poi: &Poi, cfg: &SelectionConfig) -> Result<QuerySpec> {
    cfg.validate()?;
    let bbox = aoi.polygon.bounding_rect();
    Ok(QuerySpec {
        bbox_west: bbox.min_x,
        bbox_south: bbox.min_y,
        bbox_east: bbox.max_x,
        bbox_north: bbox.max_y,
        start: poi.start,
        end: poi.end,
        cloud_max_pct: cfg.cloud_max_pct,
    })
}

/// Fraction of the AOI covered by a product footprint, computed in the
/// UTM zone of the AOI centroid.
pub fn aoi_overlap_fraction(product: &ProductMeta, aoi: &Aoi) -> Result<f64> {
    let crs = aoi.working_crs();
    let aoi_utm = aoi.polygon.reproject(crs)?;
    let footprint_utm = product.footprint.reproject(crs)?;
    let aoi_area = polygon_area(&aoi_utm)?;
    if aoi_area <= 0.0 {
        return Err(Error::Validation("AOI has zero area".into()));
    }
    let overlap = polygon_intersection_area(&footprint_utm, &aoi_utm)?;
    Ok((overlap / aoi_area).clamp(0.0, 1.0))
}

/// One survivor of the ranking with all four criterion scores.
#[derive(Debug, Clone)]
pub struct RankedProduct {
    pub meta: ProductMeta,
    pub aoi_overlap: f64,
    pub cloud_cover_pct: f64,
    pub data_coverage_pct: f64,
    /// 1-based position in the ranking.
    pub rank: usize,
}

/// Filters candidates against the thresholds and orders the survivors
/// lexicographically: overlap desc, cloud asc, data coverage desc,
/// sensing time asc, product id asc. An empty result is the "no
/// candidates" outcome, not an error.
pub fn rank_products(
    candidates: &[ProductMeta],
    aoi: &Aoi,
    cfg: &SelectionConfig,
) -> Result<Vec<RankedProduct>> {
    cfg.validate()?;
    let mut scored = Vec::with_capacity(candidates.len());
    for meta in candidates {
        meta.validate()?;
        let overlap = aoi_overlap_fraction(meta, aoi)?;
        let data_coverage = meta.effective_data_coverage_pct();
        if meta.cloud_cover_pct > cfg.cloud_max_pct {
            continue;
        }
        if overlap < cfg.min_aoi_overlap {
            continue;
        }
        if data_coverage < cfg.min_data_coverage_pct {
            continue;
        }
        scored.push(RankedProduct {
            meta: meta.clone(),
            aoi_overlap: overlap,
            cloud_cover_pct: meta.cloud_cover_pct,
            data_coverage_pct: data_coverage,
            rank: 0,
        });
    }
    scored.sort_by(|a, b| {
        b.aoi_overlap
            .total_cmp(&a.aoi_overlap)
            .then_with(|| a.cloud_cover_pct.total_cmp(&b.cloud_cover_pct))
            .then_with(|| b.data_coverage_pct.total_cmp(&a.data_coverage_pct))
            .then_with(|| a.meta.sensing_time.cmp(&b.meta.sensing_time))
            .then_with(|| a.meta.product_id.cmp(&b.meta.product_id))
    });
    for (i, p) in scored.iter_mut().enumerate() {
        p.rank = i + 1;
    }
    Ok(scored)
}

/// Picks `k` of the given strictly-increasing dates so they sit as close
/// as possible to an evenly spaced grid between the first and last date.
///
/// The objective is the sum of squared deviations from the ideal grid
/// `first + i * (last - first) / (k - 1)`. Solved exactly by dynamic
/// programming over (date index, slot) in integer arithmetic, so no
/// floating-point ties exist; equal-cost solutions resolve to the
/// lexicographically smallest index sequence. For `k = 1` the date
/// nearest the midpoint wins, earlier date on ties.
pub fn select_uniform_dates(dates: &[DateTime<Utc>], k: usize) -> Result<Vec<DateTime<Utc>>> {
    let n = dates.len();
    if n == 0 {
        return Err(Error::Validation("no dates to select from".into()));
    }
    if k == 0 {
        return Err(Error::Validation("cannot select 0 dates".into()));
    }
    if k > n {
        return Err(Error::Validation(format!(
            "cannot select {k} dates from {n} available"
        )));
    }
    for pair in dates.windows(2) {
        if pair[0] >= pair[1] {
            return Err(Error::Validation("dates must be strictly increasing".into()));
        }
    }
    let ts: Vec<i64> = dates.iter().map(|d| d.timestamp()).collect();
    let indices = select_uniform_indices(&ts, k);
    Ok(indices.into_iter().map(|i| dates[i]).collect())
}

/// Integer-exact selection over raw timestamps; exposed for tests.
#[allow(clippy::needless_range_loop)]
pub fn select_uniform_indices(ts: &[i64], k: usize) -> Vec<usize> {
    let n = ts.len();
    if k == 1 {
        // nearest to the midpoint; scale by 2 to stay in integers
        let target = i128::from(ts[0]) + i128::from(ts[n - 1]);
        let mut best = 0usize;
        let mut best_err = i128::MAX;
        for (i, &t) in ts.iter().enumerate() {
            let err = (2 * i128::from(t) - target).abs();
            if err < best_err {
                best_err = err;
                best = i;
            }
        }
        return vec![best];
    }
    if k == n {
        return (0..n).collect();
    }

    // scale timestamps by (k - 1) so the ideal grid is integral:
    // ideal_j * (k-1) = first*(k-1) + j*(last - first)
    let d = (k - 1) as i128;
    let first = i128::from(ts[0]);
    let span = i128::from(ts[n - 1]) - first;
    let cost = |i: usize, j: usize| -> i128 {
        let diff = i128::from(ts[i]) * d - (first * d + j as i128 * span);
        diff * diff
    };

    // suffix[j][i]: best cost of slots j.. with slot j at index i
    const INF: i128 = i128::MAX / 4;
    let mut suffix = vec![vec![INF; n]; k];
    // suffix_min[j][i]: min over i' >= i of suffix[j][i']
    let mut suffix_min = vec![vec![INF; n + 1]; k];
    for j in (0..k).rev() {
        for i in (j..=n - (k - j)).rev() {
            let tail = if j + 1 < k { suffix_min[j + 1][i + 1] } else { 0 };
            suffix[j][i] = cost(i, j) + tail;
        }
        for i in (0..n).rev() {
            suffix_min[j][i] = suffix[j][i].min(suffix_min[j][i + 1]);
        }
    }

    // walk forward, taking the smallest index that still achieves the
    // optimal remaining cost
    let mut picked = Vec::with_capacity(k);
    let mut next_i = 0usize;
    let mut remaining = suffix_min[0][0];
    for j in 0..k {
        for i in next_i..=n - (k - j) {
            if suffix[j][i] == remaining {
                picked.push(i);
                remaining -= cost(i, j);
                next_i = i + 1;
                break;
            }
        }
    }
    debug_assert_eq!(picked.len(), k);
    picked
}

/// One line of the selection file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectionEntry {
    pub product_id: String,
    pub tile_id: String,
    pub sensing_time: DateTime<Utc>,
}

/// Writes the tab-separated selection file the download stage consumes.
/// The file is meant to be hand-edited between ranking and download.
pub fn write_selection(path: &Path, entries: &[SelectionEntry]) -> Result<()> {
    let mut out = String::from("# product_id\ttile_id\tsensing_time\n");
    for e in entries {
        let _ = writeln!(
            out,
            "{}\t{}\t{}",
            e.product_id,
            e.tile_id,
            e.sensing_time.to_rfc3339_opts(SecondsFormat::Secs, true)
        );
    }
    fs::write(path, out).map_err(|e| Error::io_at(format!("write {}", path.display()), e))?;
    Ok(())
}

pub fn read_selection(path: &Path) -> Result<Vec<SelectionEntry>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::io_at(format!("read {}", path.display()), e))?;
    let mut entries = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split('\t');
        let product_id = fields
            .next()
            .filter(|s| !s.is_empty())
            .ok_or_else(|| Error::parse(path, lineno + 1, "missing product_id"))?;
        let tile_id = fields
            .next()
            .ok_or_else(|| Error::parse(path, lineno + 1, "missing tile_id"))?;
        let time_raw = fields
            .next()
            .ok_or_else(|| Error::parse(path, lineno + 1, "missing sensing_time"))?;
        let sensing_time = DateTime::parse_from_rfc3339(time_raw)
            .map_err(|e| Error::parse(path, lineno + 1, format!("sensing_time: {e}")))?
            .with_timezone(&Utc);
        entries.push(SelectionEntry {
            product_id: product_id.to_string(),
            tile_id: tile_id.to_string(),
            sensing_time,
        });
    }
    Ok(entries)
}

/// Writes the ranking report (CSV) a human reviews before downloading.
pub fn write_report(path: &Path, ranked: &[RankedProduct]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)
        .map_err(|e| Error::Validation(format!("open report {}: {e}", path.display())))?;
    writer
        .write_record([
            "product_id",
            "sensing_time",
            "overlap",
            "cloud_pct",
            "data_coverage_pct",
            "rank",
        ])
        .and_then(|()| {
            for p in ranked {
                writer.write_record([
                    p.meta.product_id.as_str(),
                    &p.meta.sensing_time.to_rfc3339_opts(SecondsFormat::Secs, true),
                    &format!("{:.6}", p.aoi_overlap),
                    &format!("{}", p.cloud_cover_pct),
                    &format!("{}", p.data_coverage_pct),
                    &format!("{}", p.rank),
                ])?;
            }
            writer.flush().map_err(csv::Error::from)
        })
        .map_err(|e| Error::Validation(format!("write report {}: {e}", path.display())))?;
    Ok(())
}
