use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hubfuse::io::config::PipelineConfig;
use hubfuse::io::fixture::FixtureSpec;
use hubfuse::io::pipeline::{self, Command, RunOptions};

#[derive(Parser)]
#[command(name = "hubfuse", version, about = "Mobility hub calibration, impact assessment and siting")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,

    /// Manifest listing the input files.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,

    /// Pipeline configuration (TOML); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[arg(long, global = true, default_value_t = 7)]
    seed: u64,

    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,

    /// Worker threads; overrides HUBFUSE_THREADS and the config.
    #[arg(long, global = true, env = "HUBFUSE_THREADS")]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// 90th-percentile detour ratio of the survey trips.
    DeriveThreshold,
    /// Potential-trip markets of each existing hub.
    IdentifyTrips,
    /// Fit the hub nest parameters to observed usage.
    Calibrate,
    /// Impact metrics of each existing hub.
    Assess,
    /// Cluster stops into candidates, evaluate and rank them.
    Rank,
    /// Write a synthetic dataset.
    GenFixture {
        #[arg(long, default_value_t = 300)]
        od_pairs: usize,
        #[arg(long, default_value_t = 40)]
        sites: usize,
        #[arg(long, default_value_t = 10)]
        zones_per_side: usize,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (command, fixture) = match cli.command {
        Cmd::DeriveThreshold => (Command::DeriveThreshold, FixtureSpec::default()),
        Cmd::IdentifyTrips => (Command::IdentifyTrips, FixtureSpec::default()),
        Cmd::Calibrate => (Command::Calibrate, FixtureSpec::default()),
        Cmd::Assess => (Command::Assess, FixtureSpec::default()),
        Cmd::Rank => (Command::Rank, FixtureSpec::default()),
        Cmd::GenFixture {
            od_pairs,
            sites,
            zones_per_side,
        } => (
            Command::GenFixture,
            FixtureSpec {
                seed: cli.seed,
                od_pairs,
                sites,
                zones_per_side,
            },
        ),
    };

    let result = (|| {
        let config = match &cli.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        let threads = cli.threads.or(config.threads).unwrap_or(0);
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| hubfuse::Error::InvalidConfig(format!("thread pool: {e}")))?;
        let opts = RunOptions {
            command,
            manifest: cli.manifest.clone(),
            config,
            out_dir: cli.out_dir.clone(),
            fixture,
        };
        pool.install(|| pipeline::run(&opts))
    })();

    match result {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error [{}]: {e}", e.kind());
            if std::fs::create_dir_all(&cli.out_dir).is_ok() {
                if let Err(w) = pipeline::write_error_record(&cli.out_dir, command, &e) {
                    eprintln!("could not write error record: {w}");
                }
            }
            ExitCode::FAILURE
        }
    }
}
