use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use volsrp::experiment::{load_signals, simulate_source};
use volsrp::{Exec, Experiment, ExperimentConfig};

#[derive(Parser)]
#[command(name = "volsrp", version, about = "Steered-response power localization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build (and cache) lag tables and print their complexity reports.
    Tables(Common),
    /// Render the configured sources to multichannel WAV files.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 16, value_parser = clap::value_parser!(u16).range(16..=24))]
        bits: u16,
    },
    /// Localize every frame of one recording and write the estimates as CSV.
    Localize {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        wav: PathBuf,
    },
    /// Run the full experiment and write the report.
    Bench(Common),
    /// Write the objective of one method over its grid for one frame.
    Energymap {
        #[command(flatten)]
        common: Common,
        /// Recording to use; source `--source` is simulated when absent.
        #[arg(long)]
        wav: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        source: usize,
        #[arg(long, default_value_t = 0)]
        frame: usize,
        /// Index into the configured method list.
        #[arg(long, default_value_t = 0)]
        method: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ExecArg {
    Sequential,
    Parallel,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Seed for every random draw.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    fs: Option<f64>,
    #[arg(long)]
    c: Option<f64>,
    /// Disable PHAT weighting.
    #[arg(long)]
    no_phat: bool,
    #[arg(long)]
    max_frames: Option<usize>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ExecArg::Parallel)]
    exec: ExecArg,
}

impl Common {
    fn load(&self) -> Result<(ExperimentConfig, Exec)> {
        let mut config =
            ExperimentConfig::load(&self.config).with_context(|| format!("loading {}", self.config.display()))?;
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(dir) = &self.output {
            config.output_dir = Some(dir.clone());
        }
        if let Some(fs) = self.fs {
            config.fs = fs;
        }
        if let Some(c) = self.c {
            config.c = c;
        }
        if self.no_phat {
            config.phat = false;
        }
        if self.max_frames.is_some() {
            config.max_frames = self.max_frames;
        }
        if let Some(dir) = &self.cache_dir {
            config.cache_dir = Some(dir.clone());
        }
        config.validate()?;
        let exec = match self.exec {
            ExecArg::Sequential => Exec::Sequential,
            ExecArg::Parallel => Exec::Parallel,
        };
        Ok((config, exec))
    }
}

fn output_dir(config: &ExperimentConfig) -> Result<PathBuf> {
    let dir = config.output_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn tables(common: &Common) -> Result<()> {
    let (config, exec) = common.load()?;
    let experiment = Experiment::new(config, exec)?;
    let mut rows = Vec::new();
    for ((spec, l), report) in experiment.config.methods.iter().zip(&experiment.localizers).zip(&experiment.complexity)
    {
        rows.push(serde_json::json!({
            "label": spec.label(),
            "method": l.method(),
            "predicted_additions": l.predicted_additions(),
            "complexity": report,
        }));
    }
    println!("{}", serde_json::to_string_pretty(&rows)?);
    Ok(())
}

fn simulate(common: &Common, bits: u16) -> Result<()> {
    let (config, exec) = common.load()?;
    let Some(sim) = &config.simulation else { bail!("the configuration has no [simulation] section") };
    let dir = output_dir(&config)?;
    for k in 0..config.sources.len() {
        let channels = simulate_source(sim, &config, k, exec)?;
        let path = dir.join(format!("source_{k}.wav"));
        volsrp::room::write_wav(&path, &channels, config.fs.round() as u32, bits)?;
        println!("{}", path.display());
    }
    Ok(())
}

fn localize(common: &Common, wav: &Path) -> Result<()> {
    let (config, exec) = common.load()?;
    let channels = load_signals(wav, &config)?;
    let experiment = Experiment::new(config, exec)?;
    let estimates = experiment.localize_signals(&channels, exec)?;
    let path = output_dir(&experiment.config)?.join("estimates.csv");
    let mut out = create(&path)?;
    writeln!(out, "method,frame,x,y,z,score,additions,element")?;
    for (spec, frames) in experiment.config.methods.iter().zip(&estimates) {
        for e in frames {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                spec.label(),
                e.frame,
                e.position[0],
                e.position[1],
                e.position[2],
                e.score,
                e.measured_additions,
                e.element
            )?;
        }
    }
    out.flush()?;
    println!("{}", path.display());
    Ok(())
}

fn bench(common: &Common) -> Result<()> {
    let (config, exec) = common.load()?;
    let experiment = Experiment::new(config, exec)?;
    let report = experiment.run(exec)?;
    let dir = output_dir(&experiment.config)?;
    serde_json::to_writer_pretty(create(&dir.join("report.json"))?, &report)?;
    let mut est = create(&dir.join("estimates.csv"))?;
    report.write_estimates_csv(&mut est)?;
    est.flush()?;
    let mut hist = create(&dir.join("histograms.csv"))?;
    report.write_histograms_csv(&mut hist)?;
    hist.flush()?;
    println!("{:<40} {:>10} {:>12} {:>14} {:>8}", "method", "mean [cm]", "median [cm]", "additions", "time [s]");
    for m in &report.methods {
        println!(
            "{:<40} {:>10.2} {:>12.2} {:>14} {:>8.2}",
            m.label,
            m.mean_error * 100.0,
            m.median_error * 100.0,
            m.predicted_additions,
            m.wall_clock_s
        );
    }
    if let Some(m) = report.methods.iter().find(|m| !m.counters_match()) {
        bail!("{}: measured additions differ from the prediction", m.label);
    }
    Ok(())
}

fn energymap(common: &Common, wav: Option<&Path>, source: usize, frame: usize, method: usize) -> Result<()> {
    let (config, exec) = common.load()?;
    let experiment = Experiment::new(config, exec)?;
    let channels = match wav {
        Some(path) => load_signals(path, &experiment.config)?,
        None => experiment.source_signals(source, exec)?,
    };
    let frames = experiment.frame_count(&channels)?;
    if frame >= frames {
        bail!("frame {frame} out of range ({frames} frames)");
    }
    let map = experiment.energy_map(&channels, frame, method, exec)?;
    let path = output_dir(&experiment.config)?.join(format!("energymap_m{method}_f{frame}.csv"));
    let mut out = create(&path)?;
    map.write_csv(&mut out)?;
    out.flush()?;
    println!("{}", path.display());
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Tables(common) => tables(&common),
        Command::Simulate { common, bits } => simulate(&common, bits),
        Command::Localize { common, wav } => localize(&common, &wav),
        Command::Bench(common) => bench(&common),
        Command::Energymap { common, wav, source, frame, method } => {
            energymap(&common, wav.as_deref(), source, frame, method)
        }
    }
}
