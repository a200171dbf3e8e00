//! Stage drivers tying the modules into the end-to-end flow. The CLI
//! maps one subcommand onto each of these; tests call them directly.

use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicBool;
use std::sync::Arc;

use rayon::prelude::*;

use crate::assemble::{self, AssembleOptions, DatasetIndex};
use crate::catalog::{
    self, rank_products, select_uniform_dates, RankedProduct, SelectionEntry,
};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::grid_io;
use crate::hub::queue::QueueSeed;
use crate::hub::{Clock, DownloadQueue, HubClient, QueueOutcome};
use crate::ingest;
use crate::parcels;
use crate::raster::{self, filter_by_year, rasterize_parcels, GridSpec, LabelProduct};
use crate::tile::{
    self, extract_label_patch, extract_patch, plan_windows, DateDirMeta, TileExtent, Window,
};

pub struct QueryOutput {
    pub report_path: PathBuf,
    pub selection_path: PathBuf,
    pub ranked: Vec<RankedProduct>,
    pub selected: Vec<SelectionEntry>,
}

/// Searches the hub, ranks candidates, subsamples dates uniformly and
/// writes the report plus the editable selection file.
pub fn run_query(config: &PipelineConfig, base_dir: &Path) -> Result<QueryOutput> {
    let aoi = config.load_aoi(base_dir)?;
    let poi = config.poi()?;
    let selection_cfg = config.selection_config();
    let query = catalog::build_query(&aoi, &poi, &selection_cfg)?;
    let client = HubClient::new(&config.hub.base_url);
    let candidates = client.search(&query)?;
    let ranked = rank_products(&candidates, &aoi, &selection_cfg)?;

    let selected = pick_selection(&ranked, selection_cfg.target_date_count)?;

    let out_root = resolve(base_dir, &config.output.root);
    std::fs::create_dir_all(&out_root)
        .map_err(|e| Error::io_at(format!("create {}", out_root.display()), e))?;
    let report_path = out_root.join("report.csv");
    let selection_path = out_root.join("selection.tsv");
    catalog::write_report(&report_path, &ranked)?;
    catalog::write_selection(&selection_path, &selected)?;
    if ranked.is_empty() {
        log::warn!("no products matched the query; selection file is empty");
    }
    Ok(QueryOutput {
        report_path,
        selection_path,
        ranked,
        selected,
    })
}

/// Default selection: one product per sensing instant (best-ranked wins),
/// then the uniform-spread subsample down to the target count.
fn pick_selection(ranked: &[RankedProduct], target: usize) -> Result<Vec<SelectionEntry>> {
    let mut by_time: std::collections::BTreeMap<chrono::DateTime<chrono::Utc>, &RankedProduct> =
        std::collections::BTreeMap::new();
    for product in ranked {
        by_time.entry(product.meta.sensing_time).or_insert(product);
    }
    let times: Vec<chrono::DateTime<chrono::Utc>> = by_time.keys().copied().collect();
    if times.is_empty() {
        return Ok(Vec::new());
    }
    let k = target.min(times.len());
    let chosen = select_uniform_dates(&times, k)?;
    Ok(chosen
        .into_iter()
        .map(|t| {
            let p = by_time[&t];
            SelectionEntry {
                product_id: p.meta.product_id.clone(),
                tile_id: p.meta.tile_id.clone(),
                sensing_time: t,
            }
        })
        .collect())
}

/// Downloads everything in the selection file through the throttled
/// queue. Rerunning resumes from the journal.
pub fn run_download(
    config: &PipelineConfig,
    base_dir: &Path,
    clock: Arc<dyn Clock>,
    stop: &AtomicBool,
) -> Result<QueueOutcome> {
    let out_root = resolve(base_dir, &config.output.root);
    let selection_path = out_root.join("selection.tsv");
    let selection = catalog::read_selection(&selection_path)?;

    // ask the hub for current checksums and sizes
    let aoi = config.load_aoi(base_dir)?;
    let poi = config.poi()?;
    let query = catalog::build_query(&aoi, &poi, &config.selection_config())?;
    let client = HubClient::new(&config.hub.base_url);
    let known: std::collections::HashMap<String, (Option<String>, u64)> = client
        .search(&query)?
        .into_iter()
        .map(|p| (p.product_id.clone(), (p.md5, p.size_bytes)))
        .collect();

    let seeds: Vec<QueueSeed> = selection
        .iter()
        .map(|entry| {
            let (md5, size) = known
                .get(&entry.product_id)
                .cloned()
                .map(|(m, s)| (m, Some(s)))
                .unwrap_or((None, None));
            QueueSeed {
                product_id: entry.product_id.clone(),
                md5,
                size_bytes: size,
            }
        })
        .collect();

    let downloads_dir = resolve(base_dir, &config.downloads_dir());
    let mut queue = DownloadQueue::new(
        HubClient::new(&config.hub.base_url),
        clock,
        config.throttle_policy(),
        &downloads_dir,
        &downloads_dir.join("journal.ndjson"),
    )?;
    queue.enqueue(&seeds)?;
    queue.run(stop)
}

pub struct RasterizeOutput {
    pub label_dir: PathBuf,
    pub records_burned: usize,
    pub partial_conflict_ratio: f64,
    pub full_conflict_ratio: f64,
}

/// Burns the parcel file onto the grid of the first available product at
/// the configured super-resolution scale.
pub fn run_rasterize(config: &PipelineConfig, base_dir: &Path) -> Result<RasterizeOutput> {
    let parcels_file = config
        .labels
        .parcels_file
        .as_ref()
        .ok_or_else(|| Error::Validation("labels.parcels_file is not configured".into()))?;
    let records = parcels::read_parcels(&resolve(base_dir, parcels_file))?;
    let year = config.ground_truth_year();
    let records = filter_by_year(records, year);

    let products_dir = resolve(base_dir, &config.products_dir());
    let manifest = first_manifest(&products_dir)?;
    let parsed = ingest::parse_manifest(&manifest)?;
    let b02 = parsed
        .bands
        .iter()
        .find(|b| b.resolution_m == 10)
        .ok_or_else(|| Error::Grid("product has no 10 m band".into()))?;
    let meta = grid_io::read_sidecar(&parsed.base_dir.join(&b02.path))?;
    let spec = GridSpec::from_base_extent(
        meta.rows,
        meta.cols,
        meta.geotransform,
        meta.crs,
        config.tiling.label_scale,
    )?;

    let label = rasterize_parcels(&records, &spec, config.labels.background_class, year)?;
    let (partial, full) = raster::conflict_ratio(&label);
    let label_dir = resolve(base_dir, &config.output.root).join("rasterized");
    raster::write_label_product(&label_dir, &label)?;
    log::info!(
        "rasterized {} parcels at scale {}: partial conflicts {:.4}, full conflicts {:.4}",
        records.len(),
        config.tiling.label_scale,
        partial,
        full
    );
    Ok(RasterizeOutput {
        label_dir,
        records_burned: records.len(),
        partial_conflict_ratio: partial,
        full_conflict_ratio: full,
    })
}

fn first_manifest(products_dir: &Path) -> Result<PathBuf> {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(products_dir)
        .map_err(|e| Error::io_at(format!("read {}", products_dir.display()), e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.join("manifest.json").exists())
        .collect();
    dirs.sort();
    dirs.first()
        .map(|d| d.join("manifest.json"))
        .ok_or_else(|| {
            Error::Validation(format!(
                "no product manifests under {}",
                products_dir.display()
            ))
        })
}

pub struct TileOutput {
    pub products_processed: usize,
    pub windows_per_product: usize,
    pub patches_written: usize,
    pub label_patches_written: usize,
}

/// Extracts aligned patches for every product in the products directory.
/// Labels, when rasterized, gate the window plan (`labeled_only`) and are
/// cropped once per location.
pub fn run_tile(config: &PipelineConfig, base_dir: &Path) -> Result<TileOutput> {
    let products_dir = resolve(base_dir, &config.products_dir());
    let out_root = resolve(base_dir, &config.output.root);
    let spec = config.window_spec()?;

    let label_dir = out_root.join("rasterized");
    let label: Option<LabelProduct> = if label_dir.join("labels.grid").exists() {
        Some(raster::read_label_product(&label_dir)?)
    } else if spec.labeled_only {
        return Err(Error::Validation(
            "labeled_only tiling requires a rasterized label product; run the rasterize stage first"
                .into(),
        ));
    } else {
        None
    };

    let mut manifest_dirs: Vec<PathBuf> = std::fs::read_dir(&products_dir)
        .map_err(|e| Error::io_at(format!("read {}", products_dir.display()), e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.join("manifest.json").exists())
        .collect();
    manifest_dirs.sort();
    if manifest_dirs.is_empty() {
        return Err(Error::Validation(format!(
            "no product manifests under {}",
            products_dir.display()
        )));
    }

    let mut windows: Option<Vec<Window>> = None;
    let mut reference_extent: Option<TileExtent> = None;
    let mut patches_written = 0usize;
    let mut label_patches_written = 0usize;

    for dir in &manifest_dirs {
        let bundle = ingest::load_bundle(&dir.join("manifest.json"))?;
        let extent = TileExtent::of_bundle(&bundle)?;
        match &reference_extent {
            None => reference_extent = Some(extent.clone()),
            Some(reference) => {
                if reference.rows != extent.rows
                    || reference.cols != extent.cols
                    || reference.geotransform != extent.geotransform
                    || reference.tile_id != extent.tile_id
                {
                    return Err(Error::Grid(format!(
                        "product {} does not share the tile grid of earlier products",
                        bundle.product_id
                    )));
                }
            }
        }
        if let Some(b02) = bundle.bands.get("B02") {
            log::info!(
                "product {}: data coverage {:.3}",
                bundle.product_id,
                ingest::data_coverage_fraction(b02)
            );
        }
        if windows.is_none() {
            windows = Some(plan_windows(&extent, &spec, label.as_ref())?);
        }
        let windows = windows.as_ref().unwrap();

        tile::write_date_dir_meta(
            &out_root,
            bundle.sensing_time,
            &DateDirMeta {
                product_id: bundle.product_id.clone(),
                tile_id: bundle.tile_id.clone(),
                sensing_time: bundle
                    .sensing_time
                    .to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
                cloud_cover_pct: bundle.cloud_cover_pct,
            },
        )?;

        let written: usize = windows
            .par_iter()
            .map(|window| {
                let mut wrote = 0usize;
                for band in bundle.bands.values() {
                    let path = tile::patches_dir(&out_root)
                        .join(tile::date_dir_name(bundle.sensing_time))
                        .join(&window.location_key)
                        .join(format!("{}.grid", band.band_id));
                    let side = window.size * 10 / band.resolution_m as usize;
                    if patch_up_to_date(&path, side) {
                        continue;
                    }
                    let patch = extract_patch(band, window, bundle.sensing_time)?;
                    tile::write_patch(&out_root, &patch)?;
                    wrote += 1;
                }
                Ok::<usize, Error>(wrote)
            })
            .collect::<Result<Vec<usize>>>()?
            .into_iter()
            .sum();
        patches_written += written;
    }

    if let Some(label) = &label {
        let windows = windows.as_ref().unwrap();
        let written: usize = windows
            .par_iter()
            .map(|window| {
                let dir = tile::labels_dir(&out_root).join(&window.location_key);
                let side = window.size * label.grid_spec.scale as usize;
                if patch_up_to_date(&dir.join("labels.grid"), side) {
                    return Ok::<usize, Error>(0);
                }
                let patch = extract_label_patch(label, window)?;
                tile::write_label_patch(&out_root, &patch)?;
                Ok::<usize, Error>(1)
            })
            .collect::<Result<Vec<usize>>>()?
            .into_iter()
            .sum();
        label_patches_written = written;
    }

    Ok(TileOutput {
        products_processed: manifest_dirs.len(),
        windows_per_product: windows.map(|w| w.len()).unwrap_or(0),
        patches_written,
        label_patches_written,
    })
}

/// An output patch counts as done when its sidecar parses and the payload
/// length matches the declared shape.
fn patch_up_to_date(path: &Path, expected_side: usize) -> bool {
    if !path.exists() {
        return false;
    }
    let Ok(meta) = grid_io::read_sidecar(path) else {
        return false;
    };
    if meta.rows != expected_side || meta.cols != expected_side {
        return false;
    }
    std::fs::metadata(path)
        .map(|m| {
            m.len() as usize
                == meta.rows * meta.cols * meta.frame_count() * meta.dtype.size_bytes()
        })
        .unwrap_or(false)
}

/// Groups patches into samples, assigns splits and writes `index.csv`.
pub fn run_assemble(config: &PipelineConfig, base_dir: &Path) -> Result<DatasetIndex> {
    let out_root = resolve(base_dir, &config.output.root);
    let labels_root = tile::labels_dir(&out_root)
        .exists()
        .then(|| out_root.clone());
    let options = AssembleOptions {
        min_t: config.dataset.min_t,
    };
    let mut index = assemble::assemble(&out_root, labels_root.as_deref(), &out_root, &options)?;
    assemble::split_assign(
        &mut index,
        (
            config.dataset.split_train,
            config.dataset.split_val,
            config.dataset.split_test,
        ),
        config.dataset.seed,
    )?;
    index.write_csv(&out_root.join("index.csv"))?;
    Ok(index)
}

fn resolve(base_dir: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base_dir.join(path)
    }
}
