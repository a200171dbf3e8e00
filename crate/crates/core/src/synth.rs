//! Deterministic synthetic fixtures: mini-tile products in the canonical
//! layout, parcel collections, and scripted hub inventories. Drives the
//! test suite and the bundled demo.

use std::path::Path;

use chrono::{DateTime, SecondsFormat, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::catalog::ProductMeta;
use crate::error::{Error, Result};
use crate::geo::{project, Crs, GeoPoint, GeoPolygon, GeoTransform};
use crate::grid_io::{self, Dtype, GridMeta, GridValues};
use crate::hub::mock::MockProduct;
use crate::ingest::BAND_RESOLUTIONS;
use crate::raster::{GroundTruth, ParcelRecord};

/// Where the synthetic mini-tile lives.
#[derive(Debug, Clone, Copy)]
pub struct TileLayout {
    pub crs: Crs,
    pub origin_x: f64,
    pub origin_y: f64,
    /// Side length in 10 m pixels; must be divisible by 6 so the 60 m
    /// bands are whole.
    pub size10: usize,
}

impl TileLayout {
    pub fn mini() -> Self {
        Self {
            crs: Crs::Utm { zone: 31, hemisphere: crate::geo::Hemisphere::North },
            origin_x: 399_960.0,
            origin_y: 4_800_000.0,
            size10: 600,
        }
    }

    pub fn geotransform(&self, resolution_m: u32) -> GeoTransform {
        let res = f64::from(resolution_m);
        GeoTransform::north_up(self.origin_x, self.origin_y, res, res).expect("positive pixels")
    }

    pub fn footprint_wgs84(&self) -> Result<GeoPolygon> {
        let side = self.size10 as f64 * 10.0;
        let corners = [
            GeoPoint::new(self.origin_x, self.origin_y - side),
            GeoPoint::new(self.origin_x + side, self.origin_y - side),
            GeoPoint::new(self.origin_x + side, self.origin_y),
            GeoPoint::new(self.origin_x, self.origin_y),
        ];
        let ring = corners
            .iter()
            .map(|p| project(*p, self.crs, Crs::Wgs84))
            .collect::<Result<Vec<_>>>()?;
        Ok(GeoPolygon::new(ring, Vec::new(), Crs::Wgs84))
    }
}

/// Writes one product in the canonical manifest + band-grid layout.
/// `zero_left_fraction` blanks the leftmost share of every band, the way
/// swath-edge products carry empty regions.
#[allow(clippy::too_many_arguments)]
pub fn write_product(
    dir: &Path,
    layout: &TileLayout,
    product_id: &str,
    tile_id: &str,
    sensing_time: DateTime<Utc>,
    cloud_cover_pct: f64,
    seed: u64,
    zero_left_fraction: f64,
) -> Result<()> {
    if !layout.size10.is_multiple_of(6) {
        return Err(Error::Validation(format!(
            "tile size {} is not divisible by 6",
            layout.size10
        )));
    }
    std::fs::create_dir_all(dir)
        .map_err(|e| Error::io_at(format!("create {}", dir.display()), e))?;
    let mut band_entries = Vec::new();
    for (band_id, resolution) in BAND_RESOLUTIONS {
        let side = layout.size10 * 10 / resolution as usize;
        let mut rng = ChaCha12Rng::seed_from_u64(
            seed ^ (u64::from(resolution) << 32)
                ^ band_id.bytes().fold(0u64, |acc, b| acc.wrapping_mul(31).wrapping_add(u64::from(b))),
        );
        let zero_cols = (side as f64 * zero_left_fraction).round() as usize;
        let mut values = Vec::with_capacity(side * side);
        for _row in 0..side {
            for col in 0..side {
                if col < zero_cols {
                    values.push(0u16);
                } else {
                    values.push(rng.gen_range(1..10_000u16));
                }
            }
        }
        let meta = GridMeta {
            band_id: band_id.to_string(),
            resolution_m: f64::from(resolution),
            rows: side,
            cols: side,
            dtype: Dtype::U16,
            nodata: 0,
            crs: layout.crs,
            geotransform: layout.geotransform(resolution),
            frames: None,
        };
        grid_io::write_grid(&dir.join(format!("{band_id}.grid")), &meta, &GridValues::U16(values))?;
        band_entries.push(serde_json::json!({
            "band_id": band_id,
            "resolution_m": resolution,
            "path": format!("{band_id}.grid"),
        }));
    }
    let manifest = serde_json::json!({
        "product_id": product_id,
        "tile_id": tile_id,
        "sensing_time": sensing_time.to_rfc3339_opts(SecondsFormat::Secs, true),
        "cloud_cover_pct": cloud_cover_pct,
        "crs": layout.crs,
        "bands": band_entries,
    });
    std::fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )
    .map_err(|e| Error::io_at(format!("write {}", dir.join("manifest.json").display()), e))?;
    Ok(())
}

/// Three hand-placed parcels inside the mini tile: two adjacent fields
/// sharing a mid-pixel edge and one separate field.
pub fn demo_parcels(layout: &TileLayout, year: i32) -> Vec<ParcelRecord> {
    let x = layout.origin_x;
    let y = layout.origin_y;
    vec![
        ParcelRecord {
            parcel_id: 1,
            geometry: GeoPolygon::rect(x + 200.0, y - 1000.0, x + 644.0, y - 400.0, layout.crs),
            ground_truth: GroundTruth::Class(1),
            year,
        },
        ParcelRecord {
            parcel_id: 2,
            geometry: GeoPolygon::rect(x + 644.0, y - 1000.0, x + 1100.0, y - 400.0, layout.crs),
            ground_truth: GroundTruth::Class(2),
            year,
        },
        ParcelRecord {
            parcel_id: 3,
            geometry: GeoPolygon::new(
                vec![
                    GeoPoint::new(x + 2000.0, y - 3000.0),
                    GeoPoint::new(x + 2800.0, y - 3100.0),
                    GeoPoint::new(x + 2600.0, y - 2300.0),
                    GeoPoint::new(x + 2100.0, y - 2400.0),
                ],
                Vec::new(),
                layout.crs,
            ),
            ground_truth: GroundTruth::Class(3),
            year,
        },
    ]
}

/// Deterministic stand-in bytes for a product archive.
pub fn archive_payload(product_id: &str, bytes: usize, seed: u64) -> Vec<u8> {
    let mut rng = ChaCha12Rng::seed_from_u64(
        seed ^ product_id
            .bytes()
            .fold(0u64, |acc, b| acc.wrapping_mul(131).wrapping_add(u64::from(b))),
    );
    (0..bytes).map(|_| rng.gen()).collect()
}

/// Catalog metadata for a synthetic product.
pub fn product_meta(
    layout: &TileLayout,
    product_id: &str,
    tile_id: &str,
    sensing_time: DateTime<Utc>,
    cloud_cover_pct: f64,
    online: bool,
    size_bytes: u64,
) -> Result<ProductMeta> {
    Ok(ProductMeta {
        product_id: product_id.to_string(),
        tile_id: tile_id.to_string(),
        sensing_time,
        cloud_cover_pct,
        footprint: layout.footprint_wgs84()?,
        data_coverage_pct: None,
        online,
        size_bytes,
        md5: None,
    })
}

/// A scripted hub inventory for demos and the end-to-end fixture: all
/// products online, payloads deterministic.
pub fn demo_hub_products(
    layout: &TileLayout,
    tile_id: &str,
    entries: &[(&str, &str, f64)],
    seed: u64,
) -> Result<Vec<MockProduct>> {
    entries
        .iter()
        .map(|(product_id, time, cloud)| {
            let sensing_time = DateTime::parse_from_rfc3339(time)
                .map_err(|e| Error::Validation(format!("bad fixture time {time}: {e}")))?
                .with_timezone(&Utc);
            let payload = archive_payload(product_id, 64 * 1024, seed);
            Ok(MockProduct {
                meta: product_meta(
                    layout,
                    product_id,
                    tile_id,
                    sensing_time,
                    *cloud,
                    true,
                    payload.len() as u64,
                )?,
                payload,
                lta_delay: None,
            })
        })
        .collect()
}
