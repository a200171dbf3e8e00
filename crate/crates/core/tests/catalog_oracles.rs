//! Exhaustive-search oracle for the temporal subsampling and a
//! monotonicity check for AOI overlap.

use chrono::{TimeZone, Utc};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use satprep_core::catalog::{aoi_overlap_fraction, select_uniform_indices, Aoi, ProductMeta};
use satprep_core::geo::{Crs, GeoPolygon};

/// Brute-force optimum: every k-subset, same integer objective as the
/// implementation, lexicographically smallest on ties.
fn brute_force(ts: &[i64], k: usize) -> (Vec<usize>, i128) {
    let n = ts.len();
    let d = (k - 1) as i128;
    let first = i128::from(ts[0]);
    let span = i128::from(ts[n - 1]) - first;
    let cost_of = |subset: &[usize]| -> i128 {
        subset
            .iter()
            .enumerate()
            .map(|(j, &i)| {
                let diff = if k == 1 {
                    // midpoint objective, scaled by 2
                    2 * i128::from(ts[i]) - (i128::from(ts[0]) + i128::from(ts[n - 1]))
                } else {
                    i128::from(ts[i]) * d - (first * d + j as i128 * span)
                };
                diff * diff
            })
            .sum()
    };

    let mut best: Option<(Vec<usize>, i128)> = None;
    let mut subset: Vec<usize> = (0..k).collect();
    loop {
        let cost = cost_of(&subset);
        let better = match &best {
            None => true,
            Some((_, c)) => cost < *c,
        };
        if better {
            best = Some((subset.clone(), cost));
        }
        // next combination in lexicographic order
        let mut i = k;
        loop {
            if i == 0 {
                return best.unwrap();
            }
            i -= 1;
            if subset[i] != i + n - k {
                break;
            }
        }
        subset[i] += 1;
        for j in i + 1..k {
            subset[j] = subset[j - 1] + 1;
        }
    }
}

#[test]
fn uniform_selection_matches_exhaustive_search() {
    let mut rng = StdRng::seed_from_u64(20_180_704);
    for case in 0..200 {
        let n = rng.gen_range(1..=15usize);
        let k = rng.gen_range(1..=n.min(6));
        let mut ts: Vec<i64> = Vec::with_capacity(n);
        let mut t = rng.gen_range(0..100_000i64);
        for _ in 0..n {
            ts.push(t);
            t += rng.gen_range(1..2_000_000i64);
        }
        let picked = select_uniform_indices(&ts, k);
        let (expected, expected_cost) = brute_force(&ts, k);
        assert_eq!(
            picked, expected,
            "case {case}: n={n} k={k} ts={ts:?} (oracle cost {expected_cost})"
        );
    }
}

#[test]
fn uniform_selection_worked_example() {
    // days 0, 10, 11, 20, selecting 3: oracle over all C(4,3) subsets
    let day = 86_400i64;
    let ts = [0, 10 * day, 11 * day, 20 * day];
    let (expected, _) = brute_force(&ts, 3);
    assert_eq!(expected, vec![0, 1, 3]);
    assert_eq!(select_uniform_indices(&ts, 3), expected);
}

#[test]
fn overlap_monotone_under_shrinking_footprint() {
    let mut rng = StdRng::seed_from_u64(99);
    let aoi = Aoi::new(GeoPolygon::rect(10.0, 50.0, 10.2, 50.2, Crs::Wgs84)).unwrap();
    let mut previous = f64::INFINITY;
    // nested rectangles shrinking toward the AOI center
    for step in 0..8 {
        let inset = f64::from(step) * 0.02;
        let footprint = GeoPolygon::rect(
            9.8 + inset,
            49.8 + inset,
            10.4 - inset,
            50.4 - inset,
            Crs::Wgs84,
        );
        let meta = ProductMeta {
            product_id: format!("p{step}"),
            tile_id: "T".into(),
            sensing_time: Utc.timestamp_opt(rng.gen_range(0..1_000_000), 0).unwrap(),
            cloud_cover_pct: 0.0,
            footprint,
            data_coverage_pct: None,
            online: true,
            size_bytes: 0,
            md5: None,
        };
        let f = aoi_overlap_fraction(&meta, &aoi).unwrap();
        assert!((0.0..=1.0).contains(&f));
        assert!(
            f <= previous + 1e-12,
            "step {step}: {f} exceeds previous {previous}"
        );
        previous = f;
    }
}
