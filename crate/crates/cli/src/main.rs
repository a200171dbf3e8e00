//! Command-line front end for the dataset preparation pipeline. One
//! configuration file drives every stage; each stage is restartable and
//! skips work that is already on disk.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::AtomicBool;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use satprep_core::catalog;
use satprep_core::config::PipelineConfig;
use satprep_core::hub::queue::plan_lta_dispatch;
use satprep_core::hub::{MockHub, QueueOutcome, SystemClock};
use satprep_core::pipeline;
use satprep_core::synth::{self, TileLayout};
use satprep_core::Error;

#[derive(Parser)]
#[command(
    name = "satprep",
    version,
    about = "Select, retrieve and process satellite products into timeseries training samples"
)]
struct Cli {
    /// Pipeline configuration file (TOML).
    #[arg(long, global = true, default_value = "pipeline.toml")]
    config: PathBuf,

    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Describe the work without touching the network or disk outputs.
    #[arg(long, global = true)]
    dry_run: bool,

    /// Emit machine-readable JSON log lines on stderr.
    #[arg(long, global = true)]
    json_logs: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Search the hub, rank candidates, write report and selection files.
    Query,
    /// Download everything in the selection file through the throttled queue.
    Download,
    /// Burn the parcel file into label grids on the product tile grid.
    Rasterize,
    /// Extract aligned image and label patches for every product.
    Tile,
    /// Group patches into timeseries samples and write the index.
    Assemble,
    /// Run query, download, rasterize, tile and assemble in order.
    All,
    /// Serve the bundled deterministic mock hub (testing and demos).
    MockHub {
        /// Port to bind on localhost.
        #[arg(long, default_value_t = 7878)]
        port: u16,
        /// Also write a ready-to-run demo fixture (products, parcels,
        /// pipeline.toml) into this directory.
        #[arg(long)]
        fixture_dir: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.json_logs);

    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            log::warn!("could not size the worker pool: {e}");
        }
    }

    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: &Cli) -> Result<ExitCode, Error> {
    // the mock hub does not need a pipeline config
    if let Command::MockHub { port, fixture_dir } = &cli.command {
        return serve_mock_hub(*port, fixture_dir.as_deref(), cli.dry_run);
    }

    let config = PipelineConfig::from_file(&cli.config)?;
    let base_dir = cli
        .config
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or_else(|| Path::new("."))
        .to_path_buf();

    match &cli.command {
        Command::Query => cmd_query(&config, &base_dir, cli.dry_run),
        Command::Download => cmd_download(&config, &base_dir, cli.dry_run),
        Command::Rasterize => cmd_rasterize(&config, &base_dir, cli.dry_run),
        Command::Tile => cmd_tile(&config, &base_dir, cli.dry_run),
        Command::Assemble => cmd_assemble(&config, &base_dir, cli.dry_run),
        Command::All => {
            for stage in [
                cmd_query as fn(&PipelineConfig, &Path, bool) -> Result<ExitCode, Error>,
                cmd_download,
                cmd_rasterize_if_configured,
                cmd_tile,
                cmd_assemble,
            ] {
                let code = stage(&config, &base_dir, cli.dry_run)?;
                if code != ExitCode::SUCCESS {
                    return Ok(code);
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::MockHub { .. } => unreachable!("handled above"),
    }
}

fn cmd_query(config: &PipelineConfig, base_dir: &Path, dry_run: bool) -> Result<ExitCode, Error> {
    if dry_run {
        let aoi = config.load_aoi(base_dir)?;
        let poi = config.poi()?;
        let query = catalog::build_query(&aoi, &poi, &config.selection_config())?;
        println!(
            "would query {}/search?{}",
            config.hub.base_url,
            query.to_query_string()
        );
        return Ok(ExitCode::SUCCESS);
    }
    let output = pipeline::run_query(config, base_dir)?;
    println!(
        "ranked {} products, selected {}; report: {}, selection: {}",
        output.ranked.len(),
        output.selected.len(),
        output.report_path.display(),
        output.selection_path.display()
    );
    if output.ranked.is_empty() {
        log::warn!("query matched no products");
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_download(config: &PipelineConfig, base_dir: &Path, dry_run: bool) -> Result<ExitCode, Error> {
    if dry_run {
        let selection_path = base_dir.join(&config.output.root).join("selection.tsv");
        let selection = catalog::read_selection(&selection_path)?;
        let ids: Vec<String> = selection.iter().map(|e| e.product_id.clone()).collect();
        let plan = plan_lta_dispatch(&ids, &config.throttle_policy(), chrono::Utc::now());
        println!("would download {} products:", plan.len());
        for (t, id) in plan {
            println!("  {id} (archive request no earlier than {t})");
        }
        return Ok(ExitCode::SUCCESS);
    }
    let outcome = pipeline::run_download(
        config,
        base_dir,
        Arc::new(SystemClock),
        &AtomicBool::new(false),
    )?;
    match outcome {
        QueueOutcome::Completed { done, failed } if failed.is_empty() => {
            println!("downloaded {} products", done.len());
            Ok(ExitCode::SUCCESS)
        }
        QueueOutcome::Completed { done, failed } => {
            println!("downloaded {} products, {} failed:", done.len(), failed.len());
            for (id, reason) in &failed {
                println!("  {id}: {reason}");
            }
            Ok(ExitCode::from(1))
        }
        QueueOutcome::Interrupted => {
            println!("interrupted; rerun to resume from the journal");
            Ok(ExitCode::from(1))
        }
    }
}

fn cmd_rasterize(config: &PipelineConfig, base_dir: &Path, dry_run: bool) -> Result<ExitCode, Error> {
    if dry_run {
        let parcels_file = config.labels.parcels_file.as_ref().ok_or_else(|| {
            Error::Validation("labels.parcels_file is not configured".into())
        })?;
        let records = satprep_core::parcels::read_parcels(&base_dir.join(parcels_file))?;
        let year = config.ground_truth_year();
        let kept = records.iter().filter(|r| r.year == year).count();
        println!(
            "would rasterize {kept} of {} parcels (year {year}) at scale {}",
            records.len(),
            config.tiling.label_scale
        );
        return Ok(ExitCode::SUCCESS);
    }
    let output = pipeline::run_rasterize(config, base_dir)?;
    println!(
        "rasterized {} parcels -> {} (partial conflicts {:.4}, full conflicts {:.4})",
        output.records_burned,
        output.label_dir.display(),
        output.partial_conflict_ratio,
        output.full_conflict_ratio
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_rasterize_if_configured(
    config: &PipelineConfig,
    base_dir: &Path,
    dry_run: bool,
) -> Result<ExitCode, Error> {
    if config.labels.parcels_file.is_none() {
        log::info!("no parcel file configured; skipping rasterization");
        return Ok(ExitCode::SUCCESS);
    }
    cmd_rasterize(config, base_dir, dry_run)
}

fn cmd_tile(config: &PipelineConfig, base_dir: &Path, dry_run: bool) -> Result<ExitCode, Error> {
    if dry_run {
        println!(
            "would tile products under {} with {} m windows (stride {} m, labeled_only {})",
            config.products_dir().display(),
            config.tiling.window_m,
            config.tiling.stride_m,
            config.tiling.labeled_only
        );
        return Ok(ExitCode::SUCCESS);
    }
    let output = pipeline::run_tile(config, base_dir)?;
    println!(
        "tiled {} products x {} windows: {} image patches, {} label locations written",
        output.products_processed,
        output.windows_per_product,
        output.patches_written,
        output.label_patches_written
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_assemble(config: &PipelineConfig, base_dir: &Path, dry_run: bool) -> Result<ExitCode, Error> {
    if dry_run {
        let patches = satprep_core::tile::patches_dir(&base_dir.join(&config.output.root));
        let dates = std::fs::read_dir(&patches)
            .map(|rd| rd.filter_map(|e| e.ok()).filter(|e| e.path().is_dir()).count())
            .unwrap_or(0);
        println!(
            "would assemble timeseries from {dates} acquisition dates under {}",
            patches.display()
        );
        return Ok(ExitCode::SUCCESS);
    }
    let index = pipeline::run_assemble(config, base_dir)?;
    let labeled = index.rows.iter().filter(|r| r.labeled).count();
    println!(
        "assembled {} samples ({} labeled); index at {}",
        index.rows.len(),
        labeled,
        base_dir.join(&config.output.root).join("index.csv").display()
    );
    Ok(ExitCode::SUCCESS)
}

fn serve_mock_hub(port: u16, fixture_dir: Option<&Path>, dry_run: bool) -> Result<ExitCode, Error> {
    let layout = TileLayout::mini();
    let entries = [
        ("S2A-20180601-T31TCJ", "2018-06-01T10:30:00Z", 2.0),
        ("S2B-20180711-T31TCJ", "2018-07-11T10:30:00Z", 4.0),
    ];
    if dry_run {
        println!("would serve {} demo products on 127.0.0.1:{port}", entries.len());
        return Ok(ExitCode::SUCCESS);
    }

    if let Some(dir) = fixture_dir {
        write_demo_fixture(dir, &layout, &entries, port)?;
        println!("demo fixture written to {}", dir.display());
    }

    let products = synth::demo_hub_products(&layout, "31TCJ", &entries, 0xF00D)?;
    let hub = MockHub::start_on(products, Arc::new(SystemClock), port)?;
    println!("mock hub serving at {} (ctrl-c to stop)", hub.base_url());
    loop {
        std::thread::sleep(std::time::Duration::from_secs(3600));
    }
}

fn write_demo_fixture(
    dir: &Path,
    layout: &TileLayout,
    entries: &[(&str, &str, f64)],
    port: u16,
) -> Result<(), Error> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io_at(format!("create {}", dir.display()), e))?;
    for (product_id, time, cloud) in entries {
        let t = chrono::DateTime::parse_from_rfc3339(time)
            .map_err(|e| Error::Validation(format!("bad fixture time: {e}")))?
            .with_timezone(&chrono::Utc);
        synth::write_product(
            &dir.join("products").join(product_id),
            layout,
            product_id,
            "31TCJ",
            t,
            *cloud,
            0xBEEF,
            0.0,
        )?;
    }
    let records = synth::demo_parcels(layout, 2018);
    satprep_core::parcels::write_parcels(&dir.join("parcels.json"), &records, layout.crs)?;

    let footprint = layout.footprint_wgs84()?;
    let bbox = footprint.bounding_rect();
    let config = format!(
        r#"[aoi]
polygon = [[{w}, {s}], [{e}, {s}], [{e}, {n}], [{w}, {n}]]

[poi]
start = "2018-01-01T00:00:00Z"
end = "2019-01-01T00:00:00Z"

[selection]
cloud_max_pct = 5.0
target_date_count = 10

[hub]
base_url = "http://127.0.0.1:{port}"

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
"#,
        w = bbox.min_x - 0.01,
        s = bbox.min_y - 0.01,
        e = bbox.max_x + 0.01,
        n = bbox.max_y + 0.01,
    );
    std::fs::write(dir.join("pipeline.toml"), config)
        .map_err(|e| Error::io_at(format!("write {}", dir.join("pipeline.toml").display()), e))?;
    Ok(())
}

fn init_logging(json: bool) {
    let mut builder =
        env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"));
    if json {
        builder.format(|buf, record| {
            let line = serde_json::json!({
                "ts": chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
                "level": record.level().to_string(),
                "target": record.target(),
                "msg": record.args().to_string(),
            });
            writeln!(buf, "{line}")
        });
    }
    builder.init();
}
