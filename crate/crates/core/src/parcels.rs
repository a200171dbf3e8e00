//! GeoJSON feature-collection input for parcel ground truth. Each feature
//! is a Polygon with `parcel_id`, `ground_truth` and `year` properties;
//! the CRS is declared once at file level.

use std::fs;
use std::path::Path;

use serde_json::Value;

use crate::error::{Error, Result};
use crate::geo::{Crs, GeoPoint, GeoPolygon, Hemisphere};
use crate::raster::{GroundTruth, ParcelRecord};

/// Reads and validates a parcel collection.
pub fn read_parcels(path: &Path) -> Result<Vec<ParcelRecord>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::io_at(format!("read {}", path.display()), e))?;
    let doc: Value = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        line: e.line(),
        msg: e.to_string(),
    })?;

    if doc.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err(Error::parse(path, 1, "expected a FeatureCollection"));
    }
    let crs = parse_file_crs(doc.get("crs"), path)?;
    let features = doc
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::parse(path, 1, "missing field: features"))?;

    let mut records = Vec::with_capacity(features.len());
    for (index, feature) in features.iter().enumerate() {
        records.push(parse_feature(feature, index, crs, path)?);
    }
    Ok(records)
}

fn parse_file_crs(value: Option<&Value>, path: &Path) -> Result<Crs> {
    let Some(value) = value else {
        return Ok(Crs::Wgs84); // GeoJSON default
    };
    // compact form: {"kind":"utm","zone":31,"hemisphere":"N"}
    if value.get("kind").is_some() {
        return serde_json::from_value(value.clone())
            .map_err(|e| Error::parse(path, 1, format!("crs: {e}")));
    }
    // legacy named form or a bare EPSG string
    let name = if let Some(s) = value.as_str() {
        s.to_string()
    } else {
        value
            .get("properties")
            .and_then(|p| p.get("name"))
            .and_then(Value::as_str)
            .ok_or_else(|| Error::parse(path, 1, "crs: unrecognized structure"))?
            .to_string()
    };
    parse_epsg(&name).ok_or_else(|| {
        Error::parse(
            path,
            1,
            format!("crs: unsupported reference system {name:?} (WGS84 and UTM only)"),
        )
    })
}

fn parse_epsg(name: &str) -> Option<Crs> {
    let code = name.rsplit(':').next()?.trim().parse::<u32>().ok()?;
    match code {
        4326 => Some(Crs::Wgs84),
        32601..=32660 => Some(Crs::Utm {
            zone: (code - 32600) as u8,
            hemisphere: Hemisphere::North,
        }),
        32701..=32760 => Some(Crs::Utm {
            zone: (code - 32700) as u8,
            hemisphere: Hemisphere::South,
        }),
        _ => None,
    }
}

fn parse_feature(feature: &Value, index: usize, crs: Crs, path: &Path) -> Result<ParcelRecord> {
    let at = |msg: String| Error::parse(path, 1, format!("feature {index}: {msg}"));

    let properties = feature
        .get("properties")
        .ok_or_else(|| at("missing field: properties".into()))?;
    let parcel_id = properties
        .get("parcel_id")
        .ok_or_else(|| at("missing field: parcel_id".into()))?
        .as_u64()
        .ok_or_else(|| at("parcel_id must be a positive integer".into()))?;
    if parcel_id == 0 || parcel_id > u64::from(u32::MAX) {
        return Err(at(format!("parcel_id {parcel_id} out of range")));
    }
    let year = properties
        .get("year")
        .ok_or_else(|| at("missing field: year".into()))?
        .as_i64()
        .ok_or_else(|| at("year must be an integer".into()))?;
    let gt_value = properties
        .get("ground_truth")
        .ok_or_else(|| at("missing field: ground_truth".into()))?;
    let ground_truth = if let Some(class) = gt_value.as_u64() {
        GroundTruth::Class(u32::try_from(class).map_err(|_| at("ground_truth class too large".into()))?)
    } else if let Some(value) = gt_value.as_f64() {
        GroundTruth::Value(value)
    } else {
        return Err(at("ground_truth must be a number".into()));
    };

    let geometry = feature
        .get("geometry")
        .ok_or_else(|| at("missing field: geometry".into()))?;
    let gtype = geometry.get("type").and_then(Value::as_str).unwrap_or("");
    if gtype != "Polygon" {
        return Err(at(format!("geometry must be a Polygon, got {gtype:?}")));
    }
    let rings = geometry
        .get("coordinates")
        .and_then(Value::as_array)
        .ok_or_else(|| at("geometry missing coordinates".into()))?;
    if rings.is_empty() {
        return Err(at("polygon has no rings".into()));
    }
    let mut parsed_rings = Vec::with_capacity(rings.len());
    for ring in rings {
        let positions = ring
            .as_array()
            .ok_or_else(|| at("ring must be an array of positions".into()))?;
        let mut points = Vec::with_capacity(positions.len());
        for pos in positions {
            let pair = pos
                .as_array()
                .filter(|a| a.len() >= 2)
                .ok_or_else(|| at("position must be [x, y]".into()))?;
            let x = pair[0]
                .as_f64()
                .ok_or_else(|| at("coordinate must be a number".into()))?;
            let y = pair[1]
                .as_f64()
                .ok_or_else(|| at("coordinate must be a number".into()))?;
            points.push(GeoPoint::new(x, y));
        }
        if points.len() >= 2 && points.first() == points.last() {
            points.pop(); // rings are stored open
        }
        parsed_rings.push(points);
    }
    let exterior = parsed_rings.remove(0);
    let polygon = GeoPolygon::new(exterior, parsed_rings, crs);
    polygon
        .validate()
        .map_err(|e| at(format!("invalid geometry: {e}")))?;

    Ok(ParcelRecord {
        parcel_id: parcel_id as u32,
        geometry: polygon,
        ground_truth,
        year: year as i32,
    })
}

/// Writes records back out as a feature collection, mainly for fixtures
/// and round-trip tests.
pub fn write_parcels(path: &Path, records: &[ParcelRecord], crs: Crs) -> Result<()> {
    let features: Vec<Value> = records
        .iter()
        .map(|r| {
            let mut rings = vec![ring_to_json(&r.geometry.exterior)];
            rings.extend(r.geometry.holes.iter().map(|h| ring_to_json(h)));
            let gt = match r.ground_truth {
                GroundTruth::Class(c) => Value::from(c),
                GroundTruth::Value(v) => Value::from(v),
            };
            serde_json::json!({
                "type": "Feature",
                "geometry": {"type": "Polygon", "coordinates": rings},
                "properties": {"parcel_id": r.parcel_id, "ground_truth": gt, "year": r.year},
            })
        })
        .collect();
    let doc = serde_json::json!({
        "type": "FeatureCollection",
        "crs": crs,
        "features": features,
    });
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io_at(format!("create {}", dir.display()), e))?;
    }
    fs::write(path, serde_json::to_string_pretty(&doc)?)
        .map_err(|e| Error::io_at(format!("write {}", path.display()), e))?;
    Ok(())
}

fn ring_to_json(ring: &[GeoPoint]) -> Value {
    let mut positions: Vec<Value> = ring
        .iter()
        .map(|p| serde_json::json!([p.x, p.y]))
        .collect();
    if let Some(first) = ring.first() {
        positions.push(serde_json::json!([first.x, first.y]));
    }
    Value::Array(positions)
}
