use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cotmap::artifacts::RunLayout;
use cotmap::{pipeline, PipelineError, PipelineResult, RunConfig};
use cotmap_core::regress::LabelMode;

#[derive(Parser)]
#[command(name = "cotmap", version, about = "Cost-of-transport mapping pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration; defaults to <out>/config.toml when present.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory.
    #[arg(long, global = true, default_value = "run")]
    out: PathBuf,
    /// Label mode: sl, sl-sam, un-sam or c-sam.
    #[arg(long, global = true)]
    mode: Option<LabelMode>,
    /// Worker threads for per-keyframe work.
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Generate a world, drive it and render keyframes.
    Simulate,
    /// Project path and overhead labels into every keyframe.
    Label,
    /// Extend labels over masks and add confidence labels.
    Augment,
    /// Train the COT regressor on the selected mode's labels.
    Train,
    /// Predict a COT image for every keyframe.
    Predict,
    /// Fuse predictions into the global BEV map.
    Map,
    /// Plan the cheapest and the shortest route on the map.
    Plan,
    /// Score held-out predictions and per-terrain recovery.
    Eval,
}

fn resolve_config(cli: &Cli, run: &RunLayout) -> PipelineResult<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None if run.config().exists() => RunConfig::load(&run.config())?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(mode) = cli.mode {
        cfg.mode = mode;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execute(cli: &Cli) -> PipelineResult<()> {
    let run = RunLayout::new(&cli.out);
    let cfg = resolve_config(cli, &run)?;
    match cli.command {
        Command::Simulate => println!("{}", serde_json::to_string(&pipeline::simulate(&cfg, &run)?).unwrap_or_default()),
        Command::Label => {
            let r = pipeline::label(&cfg, &run)?;
            println!("SL coverage {:.2}% over {} keyframes", 100.0 * r.coverage, r.keyframes);
        }
        Command::Augment => {
            let r = pipeline::augment(&cfg, &run)?;
            println!(
                "coverage SL {:.2}% | SL-SAM {:.2}% | C-SAM {:.2}% | UN-SAM {:.2}%  (theta {:.6})",
                100.0 * r.coverage_sl,
                100.0 * r.coverage_sl_sam,
                100.0 * r.coverage_c_sam,
                100.0 * r.coverage_un_sam,
                r.boundary.theta
            );
        }
        Command::Train => {
            let r = pipeline::train(&cfg, &run)?;
            println!("trained mode {} on {} frames, final loss {:?}", r.mode, r.train_frames, r.losses.last());
        }
        Command::Predict => {
            let r = pipeline::predict(&cfg, &run)?;
            println!("predicted {} keyframes", r.keyframes);
        }
        Command::Map => {
            let r = pipeline::map(&cfg, &run)?;
            println!("{} observed cells ({} dropped outside the grid)", r.observed_cells, r.dropped_cells);
        }
        Command::Plan => {
            let r = pipeline::plan(&cfg, &run)?;
            println!(
                "optimal: cost {:.3}, {:.2} m | shortest: cost {:.3}, {:.2} m",
                r.optimal.cost, r.optimal.distance, r.shortest.cost, r.shortest.distance
            );
        }
        Command::Eval => {
            let r = pipeline::eval(&cfg, &run)?;
            println!("{}", serde_json::to_string_pretty(&r).unwrap_or_default());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.jobs {
        Some(0) => Err(PipelineError::Config("--jobs must be at least 1".into())),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| execute(&cli)),
            Err(e) => Err(PipelineError::Config(e.to_string())),
        },
        None => execute(&cli),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
