//! Transverse Mercator on the WGS84 ellipsoid, 6th-order Krueger series
//! (Engsager/Poder coefficients), with the standard UTM parameters:
//! scale 0.9996, false easting 500 km, false northing 0 m north /
//! 10000 km south.
//!
//! In-zone accuracy of the series is sub-millimeter; the coefficient
//! tables are checked in the test suite against an independently computed
//! high-precision table.

use super::{GeoPoint, Hemisphere};
use crate::error::{Error, Result};

const WGS84_A: f64 = 6_378_137.0;
const WGS84_F: f64 = 1.0 / 298.257_223_563;

const K0: f64 = 0.9996;
const FALSE_EASTING: f64 = 500_000.0;
const FALSE_NORTHING_SOUTH: f64 = 10_000_000.0;

/// Latitude band beyond which UTM is refused, degrees.
const UTM_LAT_LIMIT: f64 = 84.0;

struct Series {
    /// rectifying radius, meters
    radius: f64,
    /// forward coefficients (conformal -> rectifying)
    alpha: [f64; 6],
    /// inverse coefficients (rectifying -> conformal)
    beta: [f64; 6],
    /// first eccentricity
    e: f64,
}

fn series() -> &'static Series {
    use std::sync::OnceLock;
    static SERIES: OnceLock<Series> = OnceLock::new();
    SERIES.get_or_init(|| {
        let f = WGS84_F;
        let n = f / (2.0 - f);
        let n2 = n * n;
        let n3 = n2 * n;
        let n4 = n2 * n2;
        let n5 = n4 * n;
        let n6 = n4 * n2;
        let radius = WGS84_A / (1.0 + n) * (1.0 + n2 / 4.0 + n4 / 64.0 + n6 / 256.0);
        let alpha = [
            n / 2.0 - 2.0 / 3.0 * n2 + 5.0 / 16.0 * n3 + 41.0 / 180.0 * n4 - 127.0 / 288.0 * n5
                + 7891.0 / 37800.0 * n6,
            13.0 / 48.0 * n2 - 3.0 / 5.0 * n3 + 557.0 / 1440.0 * n4 + 281.0 / 630.0 * n5
                - 1_983_433.0 / 1_935_360.0 * n6,
            61.0 / 240.0 * n3 - 103.0 / 140.0 * n4 + 15061.0 / 26880.0 * n5
                + 167_603.0 / 181_440.0 * n6,
            49561.0 / 161_280.0 * n4 - 179.0 / 168.0 * n5 + 6_601_661.0 / 7_257_600.0 * n6,
            34729.0 / 80640.0 * n5 - 3_418_889.0 / 1_995_840.0 * n6,
            212_378_941.0 / 319_334_400.0 * n6,
        ];
        let beta = [
            n / 2.0 - 2.0 / 3.0 * n2 + 37.0 / 96.0 * n3 - 1.0 / 360.0 * n4 - 81.0 / 512.0 * n5
                + 96199.0 / 604_800.0 * n6,
            n2 / 48.0 + n3 / 15.0 - 437.0 / 1440.0 * n4 + 46.0 / 105.0 * n5
                - 1_118_711.0 / 3_870_720.0 * n6,
            17.0 / 480.0 * n3 - 37.0 / 840.0 * n4 - 209.0 / 4480.0 * n5 + 5569.0 / 90720.0 * n6,
            4397.0 / 161_280.0 * n4 - 11.0 / 504.0 * n5 - 830_251.0 / 7_257_600.0 * n6,
            4583.0 / 161_280.0 * n5 - 108_847.0 / 3_991_680.0 * n6,
            20_648_693.0 / 638_668_800.0 * n6,
        ];
        Series {
            radius,
            alpha,
            beta,
            e: (f * (2.0 - f)).sqrt(),
        }
    })
}

fn central_meridian_deg(zone: u8) -> f64 {
    f64::from(zone) * 6.0 - 183.0
}

/// Geographic (lon, lat) degrees to UTM (easting, northing) meters.
pub fn utm_forward(point: GeoPoint, zone: u8, hemisphere: Hemisphere) -> Result<GeoPoint> {
    let lat = point.y;
    let lon = point.x;
    if lat.abs() > UTM_LAT_LIMIT {
        return Err(Error::OutsideUtmBand(lat));
    }
    let s = series();
    let phi = lat.to_radians();
    let mut dlam = lon - central_meridian_deg(zone);
    // keep the longitude offset in (-180, 180]
    dlam = dlam - 360.0 * (dlam / 360.0).round();
    let dlam = dlam.to_radians();

    // conformal latitude, computed through tangents for stability
    let t = phi.tan();
    let sigma = (s.e * (s.e * t / t.hypot(1.0)).atanh()).sinh();
    let tp = t * sigma.hypot(1.0) - sigma * t.hypot(1.0);

    let xi_p = tp.atan2(dlam.cos());
    let eta_p = (dlam.sin() / tp.hypot(dlam.cos())).asinh();

    let mut xi = xi_p;
    let mut eta = eta_p;
    for (j, a) in s.alpha.iter().enumerate() {
        let k = 2.0 * (j as f64 + 1.0);
        xi += a * (k * xi_p).sin() * (k * eta_p).cosh();
        eta += a * (k * xi_p).cos() * (k * eta_p).sinh();
    }

    let easting = FALSE_EASTING + K0 * s.radius * eta;
    let false_northing = match hemisphere {
        Hemisphere::North => 0.0,
        Hemisphere::South => FALSE_NORTHING_SOUTH,
    };
    let northing = false_northing + K0 * s.radius * xi;
    let out = GeoPoint::new(easting, northing);
    if !out.is_finite() {
        return Err(Error::Geometry(format!(
            "projection diverged for lon {lon}, lat {lat} in zone {zone}"
        )));
    }
    Ok(out)
}

/// UTM (easting, northing) meters to geographic (lon, lat) degrees.
pub fn utm_inverse(point: GeoPoint, zone: u8, hemisphere: Hemisphere) -> Result<GeoPoint> {
    let s = series();
    let false_northing = match hemisphere {
        Hemisphere::North => 0.0,
        Hemisphere::South => FALSE_NORTHING_SOUTH,
    };
    let xi = (point.y - false_northing) / (K0 * s.radius);
    let eta = (point.x - FALSE_EASTING) / (K0 * s.radius);

    let mut xi_p = xi;
    let mut eta_p = eta;
    for (j, b) in s.beta.iter().enumerate() {
        let k = 2.0 * (j as f64 + 1.0);
        xi_p -= b * (k * xi).sin() * (k * eta).cosh();
        eta_p -= b * (k * xi).cos() * (k * eta).sinh();
    }

    let tp = xi_p.sin() / eta_p.sinh().hypot(xi_p.cos());
    let dlam = eta_p.sinh().atan2(xi_p.cos());

    // invert the conformal latitude by fixed-point iteration; contraction
    // factor is ~e^2 so a handful of rounds reaches double precision
    let base = tp.asinh();
    let mut phi = tp.atan();
    for _ in 0..12 {
        let next = (base + s.e * (s.e * phi.sin()).atanh()).sinh().atan();
        if (next - phi).abs() < 1e-15 {
            phi = next;
            break;
        }
        phi = next;
    }

    let lon = central_meridian_deg(zone) + dlam.to_degrees();
    let lat = phi.to_degrees();
    let out = GeoPoint::new(lon, lat);
    if !out.is_finite() {
        return Err(Error::Geometry(format!(
            "inverse projection diverged for ({}, {})",
            point.x, point.y
        )));
    }
    Ok(out)
}
