use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use giram_core::config::{default_template, ExperimentConfig};
use giram_core::error::Result;
use giram_core::experiment::{render_table, report_from_dir, run_experiment};
use giram_core::ingest::{
    build_trajectories, filter_sparse, load_checkins, partition_blocks, write_checkins,
    SECONDS_PER_DAY,
};
use giram_core::synth::{category_map_rows, generate, SynthSpec};

/// Continual next-POI recommendation experiment runner.
#[derive(Parser)]
#[command(name = "giram", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic check-in stream and its category map.
    Synth(SynthArgs),
    /// Load, filter, and partition a check-in CSV; print block statistics.
    Ingest(IngestArgs),
    /// Run a full continual experiment from a config file.
    Run(RunArgs),
    /// Re-render the report table from a finished run's output directory.
    Report(ReportArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory for checkins.csv and category_map.csv.
    #[arg(long, default_value = "synth_out")]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 100)]
    users: usize,
    #[arg(long, default_value_t = 200)]
    pois: usize,
    /// Generator periods (each spans --period-days).
    #[arg(long, default_value_t = 6)]
    blocks: usize,
    #[arg(long, default_value_t = 10)]
    events_per_user_per_block: usize,
    #[arg(long, default_value_t = 0.2)]
    drift: f64,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, default_value_t = 14.0)]
    period_days: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct IngestArgs {
    /// Check-in CSV path.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 10)]
    min_count: usize,
    #[arg(long, default_value_t = 5)]
    n_blocks: usize,
    #[arg(long, default_value_t = 7.0)]
    interval_days: f64,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (TOML). Omit to use full defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Print the full-default config template and exit.
    #[arg(long)]
    print_template: bool,
    /// Override the config's method (static | finetune | retrain | giram).
    #[arg(long)]
    method: Option<String>,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's output directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Reuse finished block checkpoints when the config hash matches.
    #[arg(long)]
    resume: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// Output directory of a finished run.
    #[arg(long)]
    out_dir: PathBuf,
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let spec = SynthSpec {
        n_users: args.users,
        n_pois: args.pois,
        n_blocks: args.blocks,
        events_per_user_per_block: args.events_per_user_per_block,
        drift_rate: args.drift,
        noise_rate: args.noise,
        period_days: args.period_days,
        seed: args.seed,
        ..SynthSpec::default()
    };
    let events = generate(&spec)?;
    std::fs::create_dir_all(&args.out_dir)?;
    let data_path = args.out_dir.join("checkins.csv");
    write_checkins(&data_path, &events)?;
    let map_path = args.out_dir.join("category_map.csv");
    let mut map_csv = String::from("raw,derived\n");
    for (raw, derived) in category_map_rows(&spec) {
        map_csv.push_str(&format!("{raw},{derived}\n"));
    }
    std::fs::write(&map_path, map_csv)?;
    println!(
        "wrote {} check-ins to {} and the category map to {}",
        events.len(),
        data_path.display(),
        map_path.display()
    );
    Ok(())
}

fn cmd_ingest(args: IngestArgs) -> Result<()> {
    let raw = load_checkins(&args.data)?;
    let filtered = filter_sparse(&raw, args.min_count);
    println!(
        "loaded {} check-ins; {} survive the min-count filter ({})",
        raw.len(),
        filtered.len(),
        args.min_count
    );
    let (mut base, mut blocks) = partition_blocks(&filtered, args.n_blocks)?;
    let interval = (args.interval_days * SECONDS_PER_DAY as f64) as i64;
    base.trajectories = build_trajectories(&base, interval);
    println!(
        "base block: {} events, {} trajectories, span [{}, {}]",
        base.checkins.len(),
        base.trajectories.len(),
        base.time_span.0,
        base.time_span.1
    );
    for b in blocks.iter_mut() {
        b.trajectories = build_trajectories(b, interval);
        println!(
            "block T{}: {} events, {} trajectories, span [{}, {}]",
            b.index,
            b.checkins.len(),
            b.trajectories.len(),
            b.time_span.0,
            b.time_span.1
        );
    }
    Ok(())
}

fn cmd_run(args: RunArgs) -> Result<()> {
    if args.print_template {
        print!("{}", default_template());
        return Ok(());
    }
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(method) = &args.method {
        cfg.run.method = method.parse()?;
    }
    if let Some(seed) = args.seed {
        cfg.run.seed = seed;
    }
    if let Some(out_dir) = args.out_dir {
        cfg.run.out_dir = out_dir;
    }
    if args.resume {
        cfg.run.resume = true;
    }
    let result = run_experiment(&cfg)?;
    print!("{}", render_table(&result));
    println!("reports written to {}", cfg.run.out_dir.display());
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<()> {
    let result = report_from_dir(&args.out_dir)?;
    print!("{}", render_table(&result));
    std::fs::write(args.out_dir.join("report.txt"), render_table(&result))?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Ingest(args) => cmd_ingest(args),
        Command::Run(args) => cmd_run(args),
        Command::Report(args) => cmd_report(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
