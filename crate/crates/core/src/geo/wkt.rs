//! Minimal WKT support: `POLYGON` geometries only, which is all the hub
//! catalog responses carry.

use super::{Crs, GeoPoint, GeoPolygon};
use crate::error::{Error, Result};

/// Formats a polygon as WKT, closing each ring explicitly.
pub fn format_polygon(poly: &GeoPolygon) -> String {
    let fmt_ring = |ring: &[GeoPoint]| {
        let mut parts: Vec<String> = ring.iter().map(|p| format!("{} {}", p.x, p.y)).collect();
        if let Some(first) = ring.first() {
            parts.push(format!("{} {}", first.x, first.y));
        }
        format!("({})", parts.join(","))
    };
    let mut rings = vec![fmt_ring(&poly.exterior)];
    rings.extend(poly.holes.iter().map(|h| fmt_ring(h)));
    format!("POLYGON({})", rings.join(","))
}

/// Parses a WKT `POLYGON`. Coordinates are taken as lon/lat in the given CRS.
pub fn parse_polygon(text: &str, crs: Crs) -> Result<GeoPolygon> {
    let trimmed = text.trim();
    let upper = trimmed.to_ascii_uppercase();
    if !upper.starts_with("POLYGON") {
        return Err(Error::Geometry(format!(
            "expected WKT POLYGON, got {:?}",
            trimmed.chars().take(16).collect::<String>()
        )));
    }
    let body = trimmed["POLYGON".len()..].trim();
    let body = body
        .strip_prefix('(')
        .and_then(|s| s.strip_suffix(')'))
        .ok_or_else(|| Error::Geometry("WKT polygon missing outer parentheses".into()))?;

    let mut rings: Vec<Vec<GeoPoint>> = Vec::new();
    let mut depth = 0usize;
    let mut start = None;
    for (i, c) in body.char_indices() {
        match c {
            '(' => {
                if depth == 0 {
                    start = Some(i + 1);
                }
                depth += 1;
            }
            ')' => {
                depth = depth.checked_sub(1).ok_or_else(|| {
                    Error::Geometry("unbalanced parentheses in WKT polygon".into())
                })?;
                if depth == 0 {
                    let seg = &body[start.take().unwrap()..i];
                    rings.push(parse_ring(seg)?);
                }
            }
            _ => {}
        }
    }
    if depth != 0 {
        return Err(Error::Geometry("unbalanced parentheses in WKT polygon".into()));
    }
    if rings.is_empty() {
        return Err(Error::Geometry("WKT polygon has no rings".into()));
    }
    let exterior = rings.remove(0);
    Ok(GeoPolygon::new(exterior, rings, crs))
}

fn parse_ring(seg: &str) -> Result<Vec<GeoPoint>> {
    let mut points = Vec::new();
    for pair in seg.split(',') {
        let mut it = pair.split_whitespace();
        let x = it
            .next()
            .ok_or_else(|| Error::Geometry("empty coordinate in WKT ring".into()))?;
        let y = it
            .next()
            .ok_or_else(|| Error::Geometry(format!("coordinate {pair:?} missing y value")))?;
        let x: f64 = x
            .parse()
            .map_err(|_| Error::Geometry(format!("bad number {x:?} in WKT ring")))?;
        let y: f64 = y
            .parse()
            .map_err(|_| Error::Geometry(format!("bad number {y:?} in WKT ring")))?;
        points.push(GeoPoint::new(x, y));
    }
    // drop the explicit closing vertex; rings are stored open
    if points.len() >= 2 && points.first() == points.last() {
        points.pop();
    }
    if points.len() < 3 {
        return Err(Error::Geometry("WKT ring has fewer than 3 distinct vertices".into()));
    }
    Ok(points)
}
