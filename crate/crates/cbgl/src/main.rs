use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use cbgl::{
    cbgl, disperse_set, generate_environment, profile_csv, psi_field_dispersed, rank_field,
    run_trials, timing_profile, CbglConfig, EnvSpec, Error, MapMetadata, OccupancyGrid, RangeScan,
    Result, SensorModel,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Single-shot global localization of a 2D LIDAR in an occupancy-grid map,
/// plus benchmarking utilities.
#[derive(Parser)]
#[command(name = "cbgl", version, about)]
struct Cli {
    /// Worker threads; 0 uses every core. Affects speed only, never results.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Strip wall-clock timings from all outputs so identical seeds give
    /// byte-identical files.
    #[arg(long, global = true)]
    no_timing: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the pose a scan was taken from.
    Localize(LocalizeArgs),
    /// Write every hypothesis with its CAER value and rank as CSV.
    RankDump(RankDumpArgs),
    /// Run a Monte Carlo localization benchmark.
    Bench(BenchArgs),
    /// Measure pipeline runtime against environment area.
    TimeProfile(TimeProfileArgs),
    /// Generate a floorplan and write it as a PGM map with sidecar.
    GenMap(GenMapArgs),
}

#[derive(Args)]
struct PipelineArgs {
    /// Hypothesis locations per square meter of free space.
    #[arg(long, default_value_t = 40.0)]
    dl: f64,
    /// Headings per location.
    #[arg(long, default_value_t = 32)]
    dalpha: u32,
    /// Candidates refined by scan matching.
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl PipelineArgs {
    fn config(&self) -> CbglConfig {
        CbglConfig {
            d_l: self.dl,
            d_alpha: self.dalpha,
            k: self.k,
            seed: self.seed,
            ..CbglConfig::default()
        }
    }
}

#[derive(Args)]
struct SensorArgs {
    /// Rays per scan.
    #[arg(long, default_value_t = 360)]
    rays: usize,
    /// Angular range, rad.
    #[arg(long, default_value_t = TAU)]
    lambda: f64,
    /// Range cap, m.
    #[arg(long, default_value_t = 10.0)]
    rmax: f64,
    /// Range noise standard deviation, m.
    #[arg(long, default_value_t = 0.05)]
    sigma: f64,
}

impl SensorArgs {
    fn model(&self) -> SensorModel {
        SensorModel {
            n_rays: self.rays,
            lambda: self.lambda,
            r_max: self.rmax,
            sigma: self.sigma,
        }
    }
}

#[derive(Args)]
struct LocalizeArgs {
    /// Map PGM; `<name>.map.txt` must sit next to it.
    #[arg(long)]
    map: PathBuf,
    /// Scan JSON.
    #[arg(long)]
    scan: PathBuf,
    /// Result JSON destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    pipeline: PipelineArgs,
}

#[derive(Args)]
struct RankDumpArgs {
    #[arg(long)]
    map: PathBuf,
    #[arg(long)]
    scan: PathBuf,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 40.0)]
    dl: f64,
    #[arg(long, default_value_t = 32)]
    dalpha: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct BenchArgs {
    /// Benchmark on an existing map instead of a generated one.
    #[arg(long, conflicts_with_all = ["area", "rooms"])]
    map: Option<PathBuf>,
    /// Interior area of the generated environment, m^2.
    #[arg(long, default_value_t = 100.0)]
    area: f64,
    /// Room count of the generated environment.
    #[arg(long, default_value_t = 3)]
    rooms: u32,
    #[arg(long, default_value_t = 8)]
    n_poses: usize,
    #[arg(long, default_value_t = 5)]
    trials_per_pose: usize,
    /// Inlier location threshold, m.
    #[arg(long, default_value_t = 0.5)]
    delta_l: f64,
    /// Inlier orientation threshold, rad.
    #[arg(long, default_value_t = 0.4)]
    delta_theta: f64,
    /// Per-trial CSV destination.
    #[arg(long)]
    out_csv: Option<PathBuf>,
    /// Aggregate JSON destination; stdout when omitted.
    #[arg(long)]
    out_json: Option<PathBuf>,
    #[command(flatten)]
    sensor: SensorArgs,
    #[command(flatten)]
    pipeline: PipelineArgs,
}

#[derive(Args)]
struct TimeProfileArgs {
    /// Environment areas, m^2, ascending.
    #[arg(long, value_delimiter = ',', default_values_t = [50.0, 100.0, 200.0, 400.0])]
    areas: Vec<f64>,
    #[arg(long, default_value_t = 5)]
    trials_per_area: usize,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    sensor: SensorArgs,
    #[command(flatten)]
    pipeline: PipelineArgs,
}

#[derive(Args)]
struct GenMapArgs {
    /// Interior area, m^2.
    #[arg(long)]
    area: f64,
    #[arg(long, default_value_t = 1)]
    rooms: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.05)]
    resolution: f64,
    /// Obstacles per m^2.
    #[arg(long, default_value_t = 0.03)]
    clutter: f64,
    /// Output PGM path; the metadata sidecar lands next to it.
    #[arg(long)]
    out: PathBuf,
}

fn write_or_print(path: &Option<PathBuf>, content: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, content).map_err(|e| Error::io(p, e)),
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

fn load_inputs(map: &Path, scan: &Path) -> Result<(OccupancyGrid, RangeScan)> {
    let (grid, _) = OccupancyGrid::load_from_files(map)?;
    let scan = RangeScan::load(scan)?;
    Ok((grid, scan))
}

fn cmd_localize(args: &LocalizeArgs, no_timing: bool) -> Result<()> {
    let (grid, scan) = load_inputs(&args.map, &args.scan)?;
    let mut result = cbgl(&scan, &grid, &args.pipeline.config())?;
    if no_timing {
        result.timing = None;
    }
    let json = serde_json::to_string_pretty(&result).expect("result serializes") + "\n";
    write_or_print(&args.out, &json)
}

fn cmd_rank_dump(args: &RankDumpArgs) -> Result<()> {
    let (grid, scan) = load_inputs(&args.map, &args.scan)?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let set = disperse_set(&grid, args.dl, args.dalpha, &mut rng)?;
    let ranked = rank_field(psi_field_dispersed(&scan, &grid, &set)?);
    let ranks = ranked.ranks();
    let field = ranked.field();
    let mut out = String::from("x,y,theta,psi,rank\n");
    for (i, pose) in field.hypotheses().iter().enumerate() {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            pose.x, pose.y, pose.theta, field.psi()[i], ranks[i]
        ));
    }
    write_or_print(&args.out, &out)
}

fn bench_summary(report: &cbgl::TrialReport) -> String {
    let a = &report.aggregates;
    let mut out = format!(
        "trials      {} attempted, {} failed\n\
         inliers     {:.1}% at ({} m, {} rad)\n\
         location    mean {:.4} m, std {:.4} m\n\
         orientation mean {:.4} rad, std {:.4} rad\n",
        a.attempted,
        a.failed,
        100.0 * a.inlier_proportion,
        a.delta_l,
        a.delta_theta,
        a.location_mean,
        a.location_std,
        a.orientation_mean,
        a.orientation_std,
    );
    if let Some(t) = &a.timing {
        out.push_str(&format!(
            "runtime     p50 {:.0} ms, p90 {:.0} ms, max {:.0} ms\n",
            t.p50_ms, t.p90_ms, t.max_ms
        ));
    }
    out
}

fn cmd_bench(args: &BenchArgs, no_timing: bool) -> Result<()> {
    let grid = match &args.map {
        Some(path) => OccupancyGrid::load_from_files(path)?.0,
        None => generate_environment(&EnvSpec::new(args.area, args.rooms, args.pipeline.seed))?,
    };
    let mut report = run_trials(
        &grid,
        &args.sensor.model(),
        &args.pipeline.config(),
        args.n_poses,
        args.trials_per_pose,
        args.pipeline.seed,
        args.delta_l,
        args.delta_theta,
    )?;
    if no_timing {
        report.strip_timing();
    }
    if let Some(csv_path) = &args.out_csv {
        std::fs::write(csv_path, report.to_csv()).map_err(|e| Error::io(csv_path, e))?;
    }
    match &args.out_json {
        Some(json_path) => {
            std::fs::write(json_path, report.aggregate_json())
                .map_err(|e| Error::io(json_path, e))?;
            print!("{}", bench_summary(&report));
        }
        None => print!("{}", report.aggregate_json()),
    }
    Ok(())
}

fn cmd_time_profile(args: &TimeProfileArgs) -> Result<()> {
    let rows = timing_profile(
        &args.areas,
        &args.sensor.model(),
        &args.pipeline.config(),
        args.trials_per_area,
        args.pipeline.seed,
    )?;
    write_or_print(&args.out, &profile_csv(&rows))
}

fn cmd_gen_map(args: &GenMapArgs) -> Result<()> {
    let spec = EnvSpec {
        resolution: args.resolution,
        clutter_density: args.clutter,
        ..EnvSpec::new(args.area, args.rooms, args.seed)
    };
    let grid = generate_environment(&spec)?;
    let meta = MapMetadata {
        resolution: args.resolution,
        ..MapMetadata::default()
    };
    grid.save_to_files(&args.out, &meta)?;
    println!(
        "wrote {} ({}x{} cells, {:.2} m2 free)",
        args.out.display(),
        grid.width(),
        grid.height(),
        grid.free_area()
    );
    Ok(())
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidParameter(_) => 2,
        Error::Io { .. } | Error::MapFormat(_) | Error::Metadata(_) | Error::ScanFormat(_) => 3,
        _ => 4,
    }
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Localize(args) => cmd_localize(args, cli.no_timing),
        Command::RankDump(args) => cmd_rank_dump(args),
        Command::Bench(args) => cmd_bench(args, cli.no_timing),
        Command::TimeProfile(args) => cmd_time_profile(args),
        Command::GenMap(args) => cmd_gen_map(args),
    }
}

fn main() {
    let cli = Cli::parse();
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .expect("thread pool is configured once, before any parallel work");
    }
    if let Err(e) = run(&cli) {
        eprintln!("error: {e}");
        std::process::exit(exit_code(&e));
    }
}
