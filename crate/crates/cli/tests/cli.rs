//! Exercises the installed binary end to end: exit codes, validation
//! messages, determinism of outputs and the full demo pipeline against
//! an in-process mock hub.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::Arc;

use satprep_core::hub::{MockHub, SystemClock};
use satprep_core::parcels;
use satprep_core::synth::{self, TileLayout};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_satprep")
}

fn run(args: &[&str], cwd: &Path) -> Output {
    Command::new(bin())
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, hub_url: &str, extra: &str) -> PathBuf {
    let layout = TileLayout::mini();
    let bbox = layout.footprint_wgs84().unwrap().bounding_rect();
    let text = format!(
        r#"[aoi]
polygon = [[{w}, {s}], [{e}, {s}], [{e}, {n}], [{w}, {n}]]

[poi]
start = "2018-01-01T00:00:00Z"
end = "2019-01-01T00:00:00Z"

[selection]
cloud_max_pct = 5.0
target_date_count = 10

[hub]
base_url = "{hub_url}"

[tiling]
window_m = 480
stride_m = 480
labeled_only = true
label_scale = 1

[labels]
parcels_file = "parcels.json"
background_class = 0

[output]
root = "out"
products_dir = "products"

[dataset]
seed = 42
split_train = 0.8
split_val = 0.1
split_test = 0.1
{extra}"#,
        w = bbox.min_x - 0.01,
        s = bbox.min_y - 0.01,
        e = bbox.max_x + 0.01,
        n = bbox.max_y + 0.01,
    );
    let path = dir.join("pipeline.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn start_hub(entries: &[(&str, &str, f64)]) -> MockHub {
    let layout = TileLayout::mini();
    let products = synth::demo_hub_products(&layout, "31TCJ", entries, 0xF00D).unwrap();
    MockHub::start(products, Arc::new(SystemClock)).unwrap()
}

#[test]
fn invalid_window_size_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "http://127.0.0.1:1", "");
    let text = std::fs::read_to_string(&config)
        .unwrap()
        .replace("window_m = 480", "window_m = 250");
    std::fs::write(&config, text).unwrap();
    let output = run(&["query", "--config", "pipeline.toml"], dir.path());
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(
        stderr.contains("window_m must be divisible by 60"),
        "stderr: {stderr}"
    );
}

#[test]
fn query_filters_by_cloud_ceiling_and_is_deterministic() {
    // six products, two above the 5% cloud ceiling
    let entries = [
        ("S2A-A", "2018-03-01T10:30:00Z", 1.0),
        ("S2A-B", "2018-04-01T10:30:00Z", 2.0),
        ("S2A-C", "2018-05-01T10:30:00Z", 3.0),
        ("S2A-D", "2018-06-01T10:30:00Z", 4.0),
        ("S2A-E", "2018-07-01T10:30:00Z", 9.0),
        ("S2A-F", "2018-08-01T10:30:00Z", 12.0),
    ];
    let hub = start_hub(&entries);
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), &hub.base_url(), "");

    let output = run(&["query", "--config", "pipeline.toml"], dir.path());
    assert_eq!(output.status.code(), Some(0), "{output:?}");

    let report = std::fs::read_to_string(dir.path().join("out/report.csv")).unwrap();
    let rows: Vec<&str> = report.lines().skip(1).filter(|l| !l.is_empty()).collect();
    assert_eq!(rows.len(), 4, "report:\n{report}");
    assert!(!report.contains("S2A-E") && !report.contains("S2A-F"));

    // rerun: byte-identical report
    let before = std::fs::read(dir.path().join("out/report.csv")).unwrap();
    let output = run(&["query", "--config", "pipeline.toml"], dir.path());
    assert_eq!(output.status.code(), Some(0));
    assert_eq!(before, std::fs::read(dir.path().join("out/report.csv")).unwrap());
}

#[test]
fn empty_query_result_is_success_with_empty_selection() {
    let hub = start_hub(&[("S2A-X", "2017-06-01T10:30:00Z", 1.0)]); // outside the 2018 period
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), &hub.base_url(), "");
    let output = run(&["query", "--config", "pipeline.toml"], dir.path());
    assert_eq!(output.status.code(), Some(0));
    let selection = std::fs::read_to_string(dir.path().join("out/selection.tsv")).unwrap();
    assert!(selection.lines().all(|l| l.starts_with('#') || l.is_empty()));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("no products"), "stderr: {stderr}");
}

#[test]
fn unreachable_hub_exits_with_environment_error() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "http://127.0.0.1:1", "");
    let output = run(&["query", "--config", "pipeline.toml"], dir.path());
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn full_pipeline_via_binary_with_mock_hub() {
    let entries = [
        ("S2A-20180601-T31TCJ", "2018-06-01T10:30:00Z", 2.0),
        ("S2B-20180711-T31TCJ", "2018-07-11T10:30:00Z", 4.0),
    ];
    let hub = start_hub(&entries);
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), &hub.base_url(), "");

    // pre-converted products and the parcel file, as the converter
    // (outside this pipeline) would have produced them
    let layout = TileLayout { size10: 192, ..TileLayout::mini() };
    for (product_id, time, cloud) in entries {
        let t = chrono::DateTime::parse_from_rfc3339(time)
            .unwrap()
            .with_timezone(&chrono::Utc);
        synth::write_product(
            &dir.path().join("products").join(product_id),
            &layout,
            product_id,
            "31TCJ",
            t,
            cloud,
            0xBEEF,
            0.0,
        )
        .unwrap();
    }
    parcels::write_parcels(
        &dir.path().join("parcels.json"),
        &synth::demo_parcels(&layout, 2018),
        layout.crs,
    )
    .unwrap();

    let output = run(&["all", "--config", "pipeline.toml", "--jobs", "2"], dir.path());
    assert_eq!(
        output.status.code(),
        Some(0),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
    assert!(dir.path().join("out/index.csv").exists());
    assert!(dir.path().join("out/report.csv").exists());

    // idempotent rerun
    let index_before = std::fs::read(dir.path().join("out/index.csv")).unwrap();
    let output = run(&["all", "--config", "pipeline.toml"], dir.path());
    assert_eq!(output.status.code(), Some(0));
    assert_eq!(index_before, std::fs::read(dir.path().join("out/index.csv")).unwrap());
}

#[test]
fn dry_run_makes_no_outputs() {
    let hub = start_hub(&[("S2A-DRY", "2018-06-01T10:30:00Z", 1.0)]);
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), &hub.base_url(), "");
    let output = run(&["query", "--dry-run", "--config", "pipeline.toml"], dir.path());
    assert_eq!(output.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("would query"), "stdout: {stdout}");
    assert!(!dir.path().join("out").exists());
    assert!(hub.request_log().is_empty(), "dry run must not touch the hub");
}

#[test]
fn json_logs_are_parseable() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "http://127.0.0.1:1", "");
    let output = run(
        &["query", "--json-logs", "--config", "pipeline.toml"],
        dir.path(),
    );
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    let json_lines: Vec<&str> = stderr.lines().filter(|l| l.starts_with('{')).collect();
    assert!(!json_lines.is_empty(), "stderr: {stderr}");
    for line in json_lines {
        let value: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(value.get("level").is_some());
        assert!(value.get("msg").is_some());
    }
}

#[test]
fn failed_download_exits_with_partial_failure() {
    let entries = [("S2A-GOOD", "2018-06-01T10:30:00Z", 1.0), ("S2A-BAD", "2018-07-01T10:30:00Z", 1.0)];
    let hub = start_hub(&entries);
    // advertised checksum no longer matches the payload
    hub.corrupt_payload("S2A-BAD", 1000);
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), &hub.base_url(), "");

    let output = run(&["query", "--config", "pipeline.toml"], dir.path());
    assert_eq!(output.status.code(), Some(0));
    let output = run(&["download", "--config", "pipeline.toml"], dir.path());
    assert_eq!(output.status.code(), Some(1), "{output:?}");
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("S2A-BAD") && stdout.contains("checksum"), "stdout: {stdout}");
    assert!(dir.path().join("out/downloads/S2A-GOOD.zip").exists());
    assert!(!dir.path().join("out/downloads/S2A-BAD.zip").exists());
}
