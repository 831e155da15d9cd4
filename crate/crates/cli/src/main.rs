use std::path::PathBuf;
use std::process::ExitCode;

use anchor_slam::io::{self, TrajectoryFormat};
use anchor_slam::metrics::MetricReport;
use anchor_slam::pipeline::{generate, partition_stage, run_pipeline, LoopMode, PipelineConfig};
use anchor_slam::{Error, Result};
use clap::{Args, Parser, Subcommand};

/// Motion-aware submap SLAM back end over synthetic or replayed geometry.
#[derive(Parser)]
#[command(name = "anchor-slam", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic world plus its geometry as a replay set.
    Generate(Common),
    /// Run motion analysis and partitioning only.
    Partition(Common),
    /// Run the full pipeline.
    Run(Common),
    /// Score an estimated trajectory against a reference.
    Eval {
        estimate: PathBuf,
        reference: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    /// Config file of `section.key = value` lines.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// World seed.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long, value_name = "MODE", value_parser = ["uni", "bi", "off"])]
    loop_mode: Option<String>,
    /// Trajectory file format.
    #[arg(long, value_name = "FMT", value_parser = ["tum", "kitti"])]
    format: Option<String>,
}

impl Common {
    fn config(&self) -> Result<PipelineConfig> {
        let mut c = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        if let Some(seed) = self.seed {
            c.world.seed = seed;
        }
        if let Some(out) = &self.out {
            c.out_dir = Some(out.clone());
        }
        if let Some(m) = &self.loop_mode {
            c.loop_mode = m.parse::<LoopMode>()?;
        }
        if let Some(f) = &self.format {
            c.format = f.parse::<TrajectoryFormat>()?;
        }
        c.validate()?;
        Ok(c)
    }
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Generate(common) => {
            let c = common.config()?;
            let out = c.out_dir.clone().ok_or_else(|| Error::Config("generate needs --out DIR".into()))?;
            let summary = generate(&c, &out)?;
            println!("frames={}", summary.frames);
            println!("submaps={}", summary.submaps);
            println!("geometry_files={}", summary.geometry_files);
            println!("replay_config={}", summary.replay_config.display());
        }
        Command::Partition(common) => {
            let c = common.config()?;
            let (front, artifacts) = partition_stage(&c)?;
            match &c.out_dir {
                Some(dir) => {
                    for path in artifacts.flush(dir, "")? {
                        println!("artifact={}", path.display());
                    }
                }
                None => print!("{}", io::write_partition(&front.submaps)),
            }
            println!("keyframes={}", front.keyframes.len());
            println!("submaps={}", front.submaps.len());
            println!("loop_candidates={}", front.loop_candidates.len());
            for w in &front.warnings {
                eprintln!("warning: {w:?}");
            }
        }
        Command::Run(common) => {
            let c = common.config()?;
            print!("{}", run_pipeline(&c)?);
        }
        Command::Eval { estimate, reference, common } => {
            let c = common.config()?;
            let est = io::load_trajectory(&estimate, c.format)?;
            let reference = io::load_trajectory(&reference, c.format)?;
            let report = MetricReport::evaluate(&est, &reference, &c.segment_lengths)?;
            if let Some(dir) = &c.out_dir {
                std::fs::create_dir_all(dir)?;
                io::write_text(&dir.join("metrics.txt"), &report.to_string())?;
            }
            print!("{report}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
