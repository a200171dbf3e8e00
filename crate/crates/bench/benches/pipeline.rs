//! Criterion benchmarks for the hot paths: coverage rasterization,
//! window planning, projection and temporal subsampling.

use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use satprep_core::catalog::select_uniform_indices;
use satprep_core::geo::{project, Crs, GeoPoint, GeoPolygon, GeoTransform, Hemisphere};
use satprep_core::raster::{rasterize_parcels, GridSpec, GroundTruth, ParcelRecord};
use satprep_core::tile::{plan_windows, TileExtent, WindowSpec};

fn utm31() -> Crs {
    Crs::utm(31, Hemisphere::North).unwrap()
}

fn parcel_grid(n: usize, extent_m: f64) -> Vec<ParcelRecord> {
    // a lattice of staggered fields with shared boundaries
    let side = (n as f64).sqrt().ceil() as usize;
    let cell = extent_m / side as f64;
    (0..n)
        .map(|i| {
            let cx = (i % side) as f64 * cell;
            let cy = (i / side) as f64 * cell;
            ParcelRecord {
                parcel_id: i as u32 + 1,
                geometry: GeoPolygon::rect(
                    cx + 3.0,
                    cy + 3.0,
                    cx + cell + 3.0,
                    cy + cell + 3.0,
                    utm31(),
                ),
                ground_truth: GroundTruth::Class((i % 7) as u32 + 1),
                year: 2018,
            }
        })
        .collect()
}

fn bench_rasterize(c: &mut Criterion) {
    let mut group = c.benchmark_group("rasterize");
    group.sample_size(20);
    for scale in [1u32, 4] {
        let base_gt = GeoTransform::north_up(0.0, 2560.0, 10.0, 10.0).unwrap();
        let spec = GridSpec::from_base_extent(256, 256, base_gt, utm31(), scale).unwrap();
        let records = parcel_grid(64, 2560.0);
        group.bench_with_input(BenchmarkId::new("scale", scale), &scale, |b, _| {
            b.iter(|| rasterize_parcels(black_box(&records), &spec, 0, 2018).unwrap())
        });
    }
    group.finish();
}

fn bench_window_planning(c: &mut Criterion) {
    let extent = TileExtent {
        tile_id: "31TCJ".into(),
        rows: 10_980,
        cols: 10_980,
        geotransform: GeoTransform::north_up(300_000.0, 4_900_020.0, 10.0, 10.0).unwrap(),
        crs: utm31(),
    };
    let spec = WindowSpec::new(240, 240, false).unwrap();
    c.bench_function("plan_windows_full_tile", |b| {
        b.iter(|| plan_windows(black_box(&extent), &spec, None).unwrap())
    });
}

fn bench_projection(c: &mut Criterion) {
    let utm = Crs::Utm { zone: 32, hemisphere: Hemisphere::North };
    c.bench_function("utm_forward_inverse", |b| {
        b.iter(|| {
            let p = project(black_box(GeoPoint::new(10.2, 54.3)), Crs::Wgs84, utm).unwrap();
            project(p, utm, Crs::Wgs84).unwrap()
        })
    });
}

fn bench_uniform_dates(c: &mut Criterion) {
    let ts: Vec<i64> = (0..120).map(|i| i * 86_400 + (i % 7) * 3600).collect();
    c.bench_function("select_uniform_dates_120_to_12", |b| {
        b.iter(|| select_uniform_indices(black_box(&ts), 12))
    });
}

criterion_group!(
    benches,
    bench_rasterize,
    bench_window_planning,
    bench_projection,
    bench_uniform_dates
);
criterion_main!(benches);
