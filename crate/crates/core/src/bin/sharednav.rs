use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use sharednav::arbiter::Mode;
use sharednav::gateway::{self, EngineConfig, ServeConfig};
use sharednav::mapper::{load_map, save_map, CellState};
use sharednav::sim::SimConfig;
use sharednav::survey::{run_survey, SurveyPlan};
use sharednav::trials::{build_trial_map, run_suite, MapCache, Suite, SUITES};
use sharednav::worldfile::{rasterize, resolve_world, BUNDLED_WORLDS};
use std::net::{Ipv4Addr, SocketAddr};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

/// Shared-control wheelchair navigation in a deterministic 2D simulator.
#[derive(Parser)]
#[command(name = "sharednav", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Seeded navigation trials.
    #[command(subcommand)]
    Trial(TrialCommand),
    /// Run the simulation as a WebSocket service.
    Serve(ServeArgs),
    /// Build and save occupancy maps.
    #[command(subcommand)]
    Map(MapCommand),
    /// Inspect world files.
    #[command(subcommand)]
    World(WorldCommand),
}

#[derive(Subcommand)]
enum TrialCommand {
    /// Run a bundled suite; exits non-zero if it misses its threshold.
    Run(TrialRunArgs),
}

#[derive(Args)]
struct TrialRunArgs {
    /// Bundled world name or path to a .world file.
    #[arg(long, default_value = "hospital")]
    world: String,
    /// One of static_goal1, static_goal2, static_random, dynamic_goal1,
    /// dynamic_goal2, dynamic_random.
    #[arg(long)]
    suite: String,
    /// Inclusive seed range, e.g. `1..10`, or a single seed.
    #[arg(long, default_value = "1..4")]
    seeds: String,
    /// Directory for the CSV, summary and per-trial tick logs.
    #[arg(long)]
    out: PathBuf,
    /// autonomous, semi or manual; non-autonomous modes use the scripted path follower.
    #[arg(long, default_value = "autonomous")]
    mode: Mode,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "hospital")]
    world: String,
    /// Map file to navigate on; without one the server starts in mapping.
    #[arg(long)]
    map: Option<PathBuf>,
    #[arg(long, default_value = "semi")]
    mode: Mode,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Quieter logging for unattended runs.
    #[arg(long)]
    headless: bool,
    /// Multiple of real time; 0 runs as fast as possible.
    #[arg(long, default_value_t = 1.0)]
    speed: f64,
    /// Write a JSON-lines tick log into this directory.
    #[arg(long)]
    record: Option<PathBuf>,
    /// Where finish_mapping saves the map (default `<world>.map`).
    #[arg(long)]
    map_out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum MapCommand {
    /// Drive the survey tour and save the resulting map.
    Build(MapBuildArgs),
}

#[derive(Args)]
struct MapBuildArgs {
    #[arg(long, default_value = "hospital")]
    world: String,
    #[arg(long)]
    out: PathBuf,
    /// Build with scan matching and loop closure instead of surveyed poses.
    #[arg(long)]
    slam: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand)]
enum WorldCommand {
    /// Parse and validate a world, then print a summary.
    Check {
        /// Bundled world name or path; all bundled worlds when omitted.
        world: Option<String>,
    },
}

fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().with_context(|| format!("bad seed range start in `{s}`"))?;
        let b: u64 = b.trim().trim_start_matches('=').parse().with_context(|| format!("bad seed range end in `{s}`"))?;
        if b < a {
            bail!("empty seed range `{s}`");
        }
        Ok((a..=b).collect())
    } else {
        Ok(vec![s.trim().parse().with_context(|| format!("bad seed `{s}`"))?])
    }
}

fn trial_run(args: TrialRunArgs) -> Result<ExitCode> {
    let suite = Suite::find(&args.suite).map_err(|e| {
        let names: Vec<&str> = SUITES.iter().map(|s| s.name).collect();
        anyhow::anyhow!("{e}; known suites: {}", names.join(", "))
    })?;
    let world = Arc::new(resolve_world(&args.world).with_context(|| format!("loading world `{}`", args.world))?);
    let seeds = parse_seeds(&args.seeds)?;
    let cache = MapCache::new();
    tracing::info!(suite = suite.name, trials = seeds.len(), "running suite");
    let run = run_suite(suite, world, &seeds, args.mode, &cache)?;
    run.write(&args.out).with_context(|| format!("writing report to {}", args.out.display()))?;
    print!("{}", sharednav::trials::summary_text(&run.summary));
    let passed = run.passed();
    println!("{}: {}", suite.name, if passed { "PASS" } else { "FAIL" });
    Ok(if passed { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn serve(args: ServeArgs) -> Result<ExitCode> {
    let world = resolve_world(&args.world).with_context(|| format!("loading world `{}`", args.world))?;
    let mut engine = EngineConfig::new(world);
    engine.mode = args.mode;
    engine.seed = args.seed;
    engine.sim = SimConfig::default();
    if let Some(path) = &args.map {
        let (map, goals) = load_map(path).with_context(|| format!("loading map {}", path.display()))?;
        if map.geometry() != engine.world.geometry() {
            bail!("map {} does not match the world's grid", path.display());
        }
        engine.map = Some(map);
        engine.extra_goals = goals;
    }
    if let Some(out) = args.map_out {
        engine.map_out = out;
    }
    let mut cfg = ServeConfig::new(engine, SocketAddr::from((Ipv4Addr::UNSPECIFIED, args.port)));
    cfg.speed = args.speed;
    cfg.record = args.record;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let handle = gateway::start(cfg).await?;
        if !args.headless {
            println!("serving on ws://{}/ws (ctrl-c to stop)", handle.addr);
        }
        handle.run_until_ctrl_c().await?;
        anyhow::Ok(())
    })?;
    Ok(ExitCode::SUCCESS)
}

fn map_build(args: MapBuildArgs) -> Result<ExitCode> {
    let world = resolve_world(&args.world).with_context(|| format!("loading world `{}`", args.world))?;
    let map = if args.slam {
        let r = run_survey(&world, &SurveyPlan::tour(&world), SimConfig::default(), args.seed);
        match &r.closure {
            Some(_) => println!("loop closed"),
            None => println!("no loop closure"),
        }
        r.map
    } else {
        build_trial_map(&world)
    };
    let goals: Vec<(String, f64, f64)> = world.named_goals.iter().map(|g| (g.label.clone(), g.x, g.y)).collect();
    save_map(&args.out, &map, &goals).with_context(|| format!("saving {}", args.out.display()))?;
    println!(
        "{}: {} occupied, {} free, {} unknown cells",
        args.out.display(),
        map.count(CellState::Occupied),
        map.count(CellState::Free),
        map.count(CellState::Unknown)
    );
    Ok(ExitCode::SUCCESS)
}

fn world_check(world: Option<String>) -> Result<ExitCode> {
    let names: Vec<String> = match world {
        Some(w) => vec![w],
        None => BUNDLED_WORLDS.iter().map(|s| s.to_string()).collect(),
    };
    for name in names {
        let w = resolve_world(&name).with_context(|| format!("world `{name}`"))?;
        let grid = rasterize(&w);
        println!(
            "{}: {:.1} x {:.1} m, {} shapes, {} moving obstacles, {} goals, {} occupied cells",
            w.name,
            w.world_width(),
            w.world_height(),
            w.static_shapes.len(),
            w.dynamic_obstacles.len(),
            w.named_goals.len(),
            grid.occupied_count()
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let quiet = matches!(&cli.command, Command::Serve(a) if a.headless);
    let default = if quiet { "warn" } else { "info" };
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| default.into()))
        .with_writer(std::io::stderr)
        .init();
    let result = match cli.command {
        Command::Trial(TrialCommand::Run(a)) => trial_run(a),
        Command::Serve(a) => serve(a),
        Command::Map(MapCommand::Build(a)) => map_build(a),
        Command::World(WorldCommand::Check { world }) => world_check(world),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", error_chain(&e));
            ExitCode::from(2)
        }
    }
}

/// Joins the causes, skipping any a library error already folded into its message.
fn error_chain(e: &anyhow::Error) -> String {
    let mut out = String::new();
    let mut prev = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !prev.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
        prev = text;
    }
    out
}
