//! Coordinate systems, affine geotransforms, polygon operations and
//! per-pixel coverage fractions.
//!
//! Everything in here is a pure function over immutable values; nothing
//! holds interior mutability, so all types are freely shareable across
//! threads.

mod tmerc;
pub mod wkt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A planar (easting/northing, meters) or geographic (lon/lat, degrees)
/// position. Which one is decided by the [`Crs`] travelling with it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoPoint {
    pub x: f64,
    pub y: f64,
}

impl GeoPoint {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Hemisphere {
    North,
    South,
}

/// Supported reference systems: geographic WGS84 and UTM zones on the
/// WGS84 ellipsoid. No general CRS registry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Crs {
    Wgs84,
    Utm { zone: u8, hemisphere: Hemisphere },
}

impl Crs {
    pub fn utm(zone: u8, hemisphere: Hemisphere) -> Result<Self> {
        if !(1..=60).contains(&zone) {
            return Err(Error::Geometry(format!("UTM zone {zone} out of range 1..60")));
        }
        Ok(Crs::Utm { zone, hemisphere })
    }

    pub fn is_projected(&self) -> bool {
        matches!(self, Crs::Utm { .. })
    }

    pub fn is_geographic(&self) -> bool {
        matches!(self, Crs::Wgs84)
    }

    /// UTM zone whose central meridian is nearest the given longitude.
    pub fn utm_zone_for_lon(lon_deg: f64) -> u8 {
        let z = ((lon_deg + 180.0) / 6.0).floor() as i64 + 1;
        z.clamp(1, 60) as u8
    }
}

// Sidecar wire form: {"kind":"utm","zone":32,"hemisphere":"N"} / {"kind":"wgs84"}.
#[derive(Serialize, Deserialize)]
struct CrsWire {
    kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    zone: Option<u8>,
    #[serde(skip_serializing_if = "Option::is_none")]
    hemisphere: Option<String>,
}

impl Serialize for Crs {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let wire = match self {
            Crs::Wgs84 => CrsWire {
                kind: "wgs84".into(),
                zone: None,
                hemisphere: None,
            },
            Crs::Utm { zone, hemisphere } => CrsWire {
                kind: "utm".into(),
                zone: Some(*zone),
                hemisphere: Some(
                    match hemisphere {
                        Hemisphere::North => "N",
                        Hemisphere::South => "S",
                    }
                    .into(),
                ),
            },
        };
        wire.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Crs {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as DeError;
        let wire = CrsWire::deserialize(d)?;
        match wire.kind.as_str() {
            "wgs84" => Ok(Crs::Wgs84),
            "utm" => {
                let zone = wire.zone.ok_or_else(|| DeError::custom("utm crs missing zone"))?;
                if !(1..=60).contains(&zone) {
                    return Err(DeError::custom(format!("UTM zone {zone} out of range 1..60")));
                }
                let hemisphere = match wire.hemisphere.as_deref() {
                    Some("N") => Hemisphere::North,
                    Some("S") => Hemisphere::South,
                    other => {
                        return Err(DeError::custom(format!(
                            "utm crs hemisphere must be \"N\" or \"S\", got {other:?}"
                        )))
                    }
                };
                Ok(Crs::Utm { zone, hemisphere })
            }
            other => Err(DeError::custom(format!("unknown crs kind {other:?}"))),
        }
    }
}

/// A simple polygon with optional holes. Rings are stored open (the
/// closing edge back to the first vertex is implicit).
#[derive(Debug, Clone, PartialEq)]
pub struct GeoPolygon {
    pub exterior: Vec<GeoPoint>,
    pub holes: Vec<Vec<GeoPoint>>,
    pub crs: Crs,
}

impl GeoPolygon {
    pub fn new(exterior: Vec<GeoPoint>, holes: Vec<Vec<GeoPoint>>, crs: Crs) -> Self {
        Self { exterior, holes, crs }
    }

    pub fn rect(min_x: f64, min_y: f64, max_x: f64, max_y: f64, crs: Crs) -> Self {
        Self {
            exterior: vec![
                GeoPoint::new(min_x, min_y),
                GeoPoint::new(max_x, min_y),
                GeoPoint::new(max_x, max_y),
                GeoPoint::new(min_x, max_y),
            ],
            holes: Vec::new(),
            crs,
        }
    }

    /// Checks ring sizes, coordinate finiteness/ranges, self-intersection,
    /// nonzero exterior area and hole containment.
    pub fn validate(&self) -> Result<()> {
        validate_ring(&self.exterior)?;
        if ring_area_abs(&self.exterior) == 0.0 {
            return Err(Error::Geometry("exterior ring has zero area".into()));
        }
        for hole in &self.holes {
            validate_ring(hole)?;
            for p in hole {
                if !point_in_ring(*p, &self.exterior) && !point_on_ring(*p, &self.exterior) {
                    return Err(Error::Geometry("hole vertex outside exterior ring".into()));
                }
            }
        }
        if self.crs.is_geographic() {
            for p in self.exterior.iter().chain(self.holes.iter().flatten()) {
                if p.y.abs() > 90.0 || p.x.abs() > 180.0 {
                    return Err(Error::Geometry(format!(
                        "geographic coordinate ({}, {}) out of range",
                        p.x, p.y
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn bounding_rect(&self) -> Rect {
        Rect::of_points(&self.exterior)
    }

    /// Polygon centroid approximated by the exterior ring's area centroid.
    pub fn exterior_centroid(&self) -> GeoPoint {
        let ring = &self.exterior;
        let mut a2 = 0.0;
        let mut cx = 0.0;
        let mut cy = 0.0;
        for i in 0..ring.len() {
            let p = ring[i];
            let q = ring[(i + 1) % ring.len()];
            let cross = p.x * q.y - q.x * p.y;
            a2 += cross;
            cx += (p.x + q.x) * cross;
            cy += (p.y + q.y) * cross;
        }
        if a2.abs() < f64::EPSILON {
            let n = ring.len() as f64;
            return GeoPoint::new(
                ring.iter().map(|p| p.x).sum::<f64>() / n,
                ring.iter().map(|p| p.y).sum::<f64>() / n,
            );
        }
        GeoPoint::new(cx / (3.0 * a2), cy / (3.0 * a2))
    }

    /// Reprojects every vertex.
    pub fn reproject(&self, to: Crs) -> Result<GeoPolygon> {
        let map_ring = |ring: &[GeoPoint]| -> Result<Vec<GeoPoint>> {
            ring.iter().map(|p| project(*p, self.crs, to)).collect()
        };
        Ok(GeoPolygon {
            exterior: map_ring(&self.exterior)?,
            holes: self
                .holes
                .iter()
                .map(|h| map_ring(h))
                .collect::<Result<Vec<_>>>()?,
            crs: to,
        })
    }
}

fn validate_ring(ring: &[GeoPoint]) -> Result<()> {
    if ring.len() < 3 {
        return Err(Error::Geometry(format!(
            "ring needs at least 3 vertices, got {}",
            ring.len()
        )));
    }
    for p in ring {
        if !p.is_finite() {
            return Err(Error::Geometry("non-finite coordinate".into()));
        }
    }
    if ring_self_intersects(ring) {
        return Err(Error::Geometry("self-intersecting ring".into()));
    }
    Ok(())
}

/// Axis-aligned rectangle in planar coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl Rect {
    pub fn new(min_x: f64, min_y: f64, max_x: f64, max_y: f64) -> Self {
        Self { min_x, min_y, max_x, max_y }
    }

    pub fn of_points(points: &[GeoPoint]) -> Self {
        let mut r = Rect::new(
            f64::INFINITY,
            f64::INFINITY,
            f64::NEG_INFINITY,
            f64::NEG_INFINITY,
        );
        for p in points {
            r.min_x = r.min_x.min(p.x);
            r.min_y = r.min_y.min(p.y);
            r.max_x = r.max_x.max(p.x);
            r.max_y = r.max_y.max(p.y);
        }
        r
    }

    pub fn width(&self) -> f64 {
        self.max_x - self.min_x
    }

    pub fn height(&self) -> f64 {
        self.max_y - self.min_y
    }

    pub fn area(&self) -> f64 {
        (self.width().max(0.0)) * (self.height().max(0.0))
    }

    pub fn intersects(&self, other: &Rect) -> bool {
        self.min_x < other.max_x
            && other.min_x < self.max_x
            && self.min_y < other.max_y
            && other.min_y < self.max_y
    }
}

/// Affine transform tying grid indices to planar coordinates. Pixel height
/// is stored positive; row indices grow southward. Rotation terms must be
/// zero, which is checked when grids are loaded.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoTransform {
    pub origin_x: f64,
    pub origin_y: f64,
    pub pixel_width: f64,
    pub pixel_height: f64,
    pub row_rotation: f64,
    pub col_rotation: f64,
}

impl GeoTransform {
    pub fn north_up(origin_x: f64, origin_y: f64, pixel_width: f64, pixel_height: f64) -> Result<Self> {
        if pixel_width.is_nan() || pixel_height.is_nan() || pixel_width <= 0.0 || pixel_height <= 0.0 {
            return Err(Error::Grid(format!(
                "pixel size must be positive, got {pixel_width} x {pixel_height}"
            )));
        }
        Ok(Self {
            origin_x,
            origin_y,
            pixel_width,
            pixel_height,
            row_rotation: 0.0,
            col_rotation: 0.0,
        })
    }

    /// GDAL-order coefficients `[origin_x, pixel_w, row_rot, origin_y, col_rot, -pixel_h]`.
    pub fn from_gdal(c: [f64; 6]) -> Result<Self> {
        if c[2] != 0.0 || c[4] != 0.0 {
            return Err(Error::Grid("rotated geotransforms are not supported".into()));
        }
        if c[1].is_nan() || c[5].is_nan() || c[1] <= 0.0 || c[5] >= 0.0 {
            return Err(Error::Grid(format!(
                "expected positive pixel width and negative pixel height, got {} and {}",
                c[1], c[5]
            )));
        }
        Ok(Self {
            origin_x: c[0],
            origin_y: c[3],
            pixel_width: c[1],
            pixel_height: -c[5],
            row_rotation: 0.0,
            col_rotation: 0.0,
        })
    }

    pub fn to_gdal(&self) -> [f64; 6] {
        [
            self.origin_x,
            self.pixel_width,
            0.0,
            self.origin_y,
            0.0,
            -self.pixel_height,
        ]
    }

    /// Planar point to fractional (col, row).
    pub fn geo_to_pixel(&self, p: GeoPoint) -> (f64, f64) {
        (
            (p.x - self.origin_x) / self.pixel_width,
            (self.origin_y - p.y) / self.pixel_height,
        )
    }

    /// Fractional (col, row) to planar point; exact inverse of [`Self::geo_to_pixel`].
    pub fn pixel_to_geo(&self, col: f64, row: f64) -> GeoPoint {
        GeoPoint::new(
            self.origin_x + col * self.pixel_width,
            self.origin_y - row * self.pixel_height,
        )
    }

    /// The square a pixel spans, in planar coordinates.
    pub fn pixel_rect(&self, pixel: PixelRect) -> Rect {
        let ul = self.pixel_to_geo(pixel.col as f64, pixel.row as f64);
        Rect::new(
            ul.x,
            ul.y - self.pixel_height,
            ul.x + self.pixel_width,
            ul.y,
        )
    }
}

/// Grid cell index (column, row), row 0 at the north edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PixelRect {
    pub col: usize,
    pub row: usize,
}

impl PixelRect {
    pub const fn new(col: usize, row: usize) -> Self {
        Self { col, row }
    }
}

/// Unsigned (absolute) shoelace area of a single ring.
pub fn ring_area_abs(ring: &[GeoPoint]) -> f64 {
    ring_area_signed(ring).abs()
}

/// Signed shoelace area; positive for counter-clockwise rings.
pub fn ring_area_signed(ring: &[GeoPoint]) -> f64 {
    if ring.len() < 3 {
        return 0.0;
    }
    let mut sum = 0.0;
    for i in 0..ring.len() {
        let p = ring[i];
        let q = ring[(i + 1) % ring.len()];
        sum += p.x * q.y - q.x * p.y;
    }
    sum / 2.0
}

/// Area of a polygon with holes. The polygon must be in a projected CRS;
/// orientation of the rings does not matter.
pub fn polygon_area(poly: &GeoPolygon) -> Result<f64> {
    if !poly.crs.is_projected() {
        return Err(Error::RequiresProjected);
    }
    let mut area = ring_area_abs(&poly.exterior);
    for hole in &poly.holes {
        area -= ring_area_abs(hole);
    }
    Ok(area.max(0.0))
}

/// Reprojects a point between the supported reference systems.
///
/// UTM zone choice is the caller's: no snapping to the zone containing the
/// point. Converting between two UTM zones routes through geographic
/// coordinates.
pub fn project(point: GeoPoint, from: Crs, to: Crs) -> Result<GeoPoint> {
    if !point.is_finite() {
        return Err(Error::Geometry("non-finite coordinate".into()));
    }
    match (from, to) {
        (Crs::Wgs84, Crs::Wgs84) => Ok(point),
        (Crs::Wgs84, Crs::Utm { zone, hemisphere }) => tmerc::utm_forward(point, zone, hemisphere),
        (Crs::Utm { zone, hemisphere }, Crs::Wgs84) => tmerc::utm_inverse(point, zone, hemisphere),
        (a @ Crs::Utm { .. }, b @ Crs::Utm { .. }) => {
            if a == b {
                Ok(point)
            } else {
                let geo = project(point, a, Crs::Wgs84)?;
                project(geo, Crs::Wgs84, b)
            }
        }
    }
}

/// Clips a ring against the half-plane on the inner side of the directed
/// edge `a -> b` (inside = left of the edge). One Sutherland-Hodgman step.
fn clip_ring_to_halfplane(ring: &[GeoPoint], a: GeoPoint, b: GeoPoint) -> Vec<GeoPoint> {
    let side = |p: GeoPoint| (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
    let mut out = Vec::with_capacity(ring.len() + 4);
    if ring.is_empty() {
        return out;
    }
    let mut prev = ring[ring.len() - 1];
    let mut prev_side = side(prev);
    for &cur in ring {
        let cur_side = side(cur);
        if cur_side >= 0.0 {
            if prev_side < 0.0 {
                out.push(intersect_edge(prev, cur, prev_side, cur_side));
            }
            out.push(cur);
        } else if prev_side >= 0.0 {
            out.push(intersect_edge(prev, cur, prev_side, cur_side));
        }
        prev = cur;
        prev_side = cur_side;
    }
    out
}

fn intersect_edge(p: GeoPoint, q: GeoPoint, sp: f64, sq: f64) -> GeoPoint {
    let t = sp / (sp - sq);
    GeoPoint::new(p.x + t * (q.x - p.x), p.y + t * (q.y - p.y))
}

/// Sutherland-Hodgman clip of an arbitrary ring against an axis-aligned
/// rectangle. An empty result is a valid outcome.
pub fn clip_ring_to_rect(ring: &[GeoPoint], rect: &Rect) -> Vec<GeoPoint> {
    let corners = [
        GeoPoint::new(rect.min_x, rect.min_y),
        GeoPoint::new(rect.max_x, rect.min_y),
        GeoPoint::new(rect.max_x, rect.max_y),
        GeoPoint::new(rect.min_x, rect.max_y),
    ];
    let mut current = ring.to_vec();
    if ring_area_signed(ring) < 0.0 {
        current.reverse();
    }
    for i in 0..4 {
        if current.is_empty() {
            break;
        }
        current = clip_ring_to_halfplane(&current, corners[i], corners[(i + 1) % 4]);
    }
    current
}

/// Clips a ring against a convex ring. The clip ring is validated for
/// convexity and oriented internally.
pub fn clip_ring_to_convex(ring: &[GeoPoint], convex: &[GeoPoint]) -> Result<Vec<GeoPoint>> {
    if convex.len() < 3 {
        return Err(Error::Geometry("clip ring needs at least 3 vertices".into()));
    }
    let mut clip = convex.to_vec();
    if ring_area_signed(&clip) < 0.0 {
        clip.reverse();
    }
    // convexity: every turn must be a non-right turn once oriented CCW
    for i in 0..clip.len() {
        let a = clip[i];
        let b = clip[(i + 1) % clip.len()];
        let c = clip[(i + 2) % clip.len()];
        let cross = (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
        if cross < 0.0 {
            return Err(Error::Geometry("clip ring is not convex".into()));
        }
    }
    let mut current: Vec<GeoPoint> = ring.to_vec();
    if ring_area_signed(ring) < 0.0 {
        current.reverse();
    }
    for i in 0..clip.len() {
        if current.is_empty() {
            break;
        }
        current = clip_ring_to_halfplane(&current, clip[i], clip[(i + 1) % clip.len()]);
    }
    Ok(current)
}

/// Fraction of a pixel's area covered by a polygon, holes subtracted,
/// clamped to [0, 1]. Exact polygon clipping, no supersampling.
///
/// Clipping runs in a frame local to the pixel corner; UTM northings are
/// millions of meters and shoelace sums on absolute coordinates would
/// throw away most of the mantissa.
pub fn pixel_coverage_fraction(poly: &GeoPolygon, pixel: PixelRect, gt: &GeoTransform) -> Result<f64> {
    if !poly.crs.is_projected() {
        return Err(Error::RequiresProjected);
    }
    let rect = gt.pixel_rect(pixel);
    let pixel_area = rect.area();
    if pixel_area <= 0.0 {
        return Err(Error::Grid("degenerate pixel with zero area".into()));
    }
    let local_rect = Rect::new(0.0, 0.0, rect.width(), rect.height());
    let localize = |ring: &[GeoPoint]| -> Vec<GeoPoint> {
        ring.iter()
            .map(|p| GeoPoint::new(p.x - rect.min_x, p.y - rect.min_y))
            .collect()
    };
    let mut covered = ring_area_abs(&clip_ring_to_rect(&localize(&poly.exterior), &local_rect));
    for hole in &poly.holes {
        covered -= ring_area_abs(&clip_ring_to_rect(&localize(hole), &local_rect));
    }
    let fraction = covered / pixel_area;
    Ok(fraction.clamp(0.0, 1.0))
}

/// Area of the intersection of two polygons (holes honored on both sides).
/// Both polygons must share a projected CRS.
pub fn polygon_intersection_area(a: &GeoPolygon, b: &GeoPolygon) -> Result<f64> {
    if !a.crs.is_projected() || !b.crs.is_projected() {
        return Err(Error::RequiresProjected);
    }
    if a.crs != b.crs {
        return Err(Error::Geometry("intersection requires matching CRS".into()));
    }
    let ext = ring_pair_intersection_area(&a.exterior, &b.exterior)?;
    let mut area = ext;
    for ha in &a.holes {
        area -= ring_pair_intersection_area(ha, &b.exterior)?;
    }
    for hb in &b.holes {
        area -= ring_pair_intersection_area(&a.exterior, hb)?;
    }
    for ha in &a.holes {
        for hb in &b.holes {
            area += ring_pair_intersection_area(ha, hb)?;
        }
    }
    Ok(area.max(0.0))
}

/// Intersection area of two simple rings via a signed fan decomposition
/// of the second ring: for a fan of triangles (c0, c_i, c_i+1) the signed
/// indicator functions sum to the winding number, so the signed clipped
/// areas sum to the true intersection area even when the ring is concave.
fn ring_pair_intersection_area(subject: &[GeoPoint], clip: &[GeoPoint]) -> Result<f64> {
    if clip.len() < 3 {
        return Err(Error::Geometry("clip ring needs at least 3 vertices".into()));
    }
    let anchor = clip[0];
    let mut total = 0.0;
    for i in 1..clip.len() - 1 {
        let tri = [anchor, clip[i], clip[i + 1]];
        let signed = ring_area_signed(&tri);
        if signed == 0.0 {
            continue;
        }
        let piece = clip_ring_to_convex(subject, &tri)?;
        total += signed.signum() * ring_area_abs(&piece);
    }
    Ok(total.abs())
}

/// Even-odd ray-cast point-in-ring test. Points exactly on the boundary
/// are not guaranteed either way.
pub fn point_in_ring(p: GeoPoint, ring: &[GeoPoint]) -> bool {
    let mut inside = false;
    let n = ring.len();
    for i in 0..n {
        let a = ring[i];
        let b = ring[(i + 1) % n];
        if (a.y > p.y) != (b.y > p.y) {
            let x_cross = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
            if p.x < x_cross {
                inside = !inside;
            }
        }
    }
    inside
}

fn point_on_ring(p: GeoPoint, ring: &[GeoPoint]) -> bool {
    let n = ring.len();
    for i in 0..n {
        let a = ring[i];
        let b = ring[(i + 1) % n];
        let cross = (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
        if cross.abs() > 1e-9 {
            continue;
        }
        let dot = (p.x - a.x) * (b.x - a.x) + (p.y - a.y) * (b.y - a.y);
        let len2 = (b.x - a.x).powi(2) + (b.y - a.y).powi(2);
        if dot >= 0.0 && dot <= len2 {
            return true;
        }
    }
    false
}

fn ring_self_intersects(ring: &[GeoPoint]) -> bool {
    let n = ring.len();
    for i in 0..n {
        let (a1, a2) = (ring[i], ring[(i + 1) % n]);
        for j in (i + 1)..n {
            // skip segments sharing an endpoint
            if j == i || (j + 1) % n == i || (i + 1) % n == j {
                continue;
            }
            let (b1, b2) = (ring[j], ring[(j + 1) % n]);
            if segments_cross(a1, a2, b1, b2) {
                return true;
            }
        }
    }
    false
}

fn segments_cross(a1: GeoPoint, a2: GeoPoint, b1: GeoPoint, b2: GeoPoint) -> bool {
    let d = |p: GeoPoint, q: GeoPoint, r: GeoPoint| (q.x - p.x) * (r.y - p.y) - (q.y - p.y) * (r.x - p.x);
    let d1 = d(a1, a2, b1);
    let d2 = d(a1, a2, b2);
    let d3 = d(b1, b2, a1);
    let d4 = d(b1, b2, a2);
    ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
}
