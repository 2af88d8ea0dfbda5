use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use descspace::infotheory::Quantity;

#[derive(Debug, Parser)]
#[command(name = "descspace", version, about = "Survey and extremize the space of per-component descriptions of a system")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "lowercase")]
pub enum Command {
    /// Ramp the information target from 0 to Σ H(X_i) in one run per repeat.
    Scan(TrainArgs),
    /// Train at a fixed information target.
    Point(PointArgs),
    /// Convert a soft snapshot into hard partitions and report exact quantities.
    Harden(HardenArgs),
    /// Random binary symmetric survey, or band-conditioned hard descriptions.
    Sample(SampleArgs),
    /// Exact quantities of every discrete subsystem.
    Subsystems(SubsystemsArgs),
    /// Render CSV outputs as an SVG chart.
    Plot(PlotArgs),
    /// Re-run a command from its manifest.
    Replay(ReplayArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Scan(_) => "scan",
            Command::Point(_) => "point",
            Command::Harden(_) => "harden",
            Command::Sample(_) => "sample",
            Command::Subsystems(_) => "subsystems",
            Command::Plot(_) => "plot",
            Command::Replay(_) => "replay",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub system: PathBuf,
    #[arg(long)]
    pub objective: PathBuf,
    /// Training config JSON; defaults to the preset matching the system type.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the config repeat count.
    #[arg(long)]
    pub repeats: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct PointArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub train: TrainArgs,
    /// Target Σ I(X_i;U_i) in bits; overrides the objective's own target.
    #[arg(long)]
    pub iin: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct HardenArgs {
    /// Snapshot JSON written by `scan` or `point`.
    #[arg(long)]
    pub snapshot: PathBuf,
    /// System spec; defaults to the one recorded in the snapshot.
    #[arg(long)]
    pub system: Option<PathBuf>,
    /// Number of top pointwise contributions printed.
    #[arg(long, default_value_t = 10)]
    pub top: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SampleArgs {
    #[arg(long)]
    pub system: PathBuf,
    #[arg(long, default_value_t = 10_000)]
    pub samples: usize,
    /// With `--band-hi`, draws hard descriptions inside the band instead of
    /// binary symmetric channels.
    #[arg(long, requires = "band_hi")]
    pub band_lo: Option<f64>,
    #[arg(long, requires = "band_lo")]
    pub band_hi: Option<f64>,
    /// Quantity histogrammed for hard samples.
    #[arg(long, default_value = "o", value_parser = parse_quantity)]
    pub quantity: Quantity,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SubsystemsArgs {
    #[arg(long)]
    pub system: PathBuf,
    #[arg(long, default_value = "tc", value_parser = parse_quantity)]
    pub quantity: Quantity,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct PlotArgs {
    /// Scan or point CSV, drawn as the optimized boundary.
    #[arg(long)]
    pub scan: Vec<PathBuf>,
    /// Survey CSV, drawn as gray dots.
    #[arg(long)]
    pub survey: Option<PathBuf>,
    /// Subsystem CSV, drawn as black circles.
    #[arg(long)]
    pub subsystems: Option<PathBuf>,
    /// Hard-sample CSV, drawn as a histogram instead of a scatter.
    #[arg(long)]
    pub histogram: Option<PathBuf>,
    /// Values marked on the histogram, such as hardened optima.
    #[arg(long)]
    pub mark: Vec<f64>,
    #[arg(long, default_value = "tc", value_parser = parse_quantity)]
    pub quantity: Quantity,
    #[arg(long)]
    pub title: Option<String>,
    /// Output SVG file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output location; defaults to the recorded one.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_quantity(s: &str) -> Result<Quantity, String> {
    s.parse().map_err(|e: descspace::Error| e.to_string())
}
