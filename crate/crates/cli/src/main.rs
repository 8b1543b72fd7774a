//! `ramus`: lead-field generation and RAMUS reconstruction experiments.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "ramus", version, about = "Randomized multiresolution scanning for E/MEG source reconstruction")]
#[command(arg_required_else_help = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute a spherical-head lead field and write it to a file.
    GenerateLeadfield(GenerateArgs),
    /// Run one of the preset cases A to I.
    RunCase(RunArgs),
    /// Run an experiment with explicitly chosen parameters.
    RunCustom(RunArgs),
    /// Print a summary of a lead-field file.
    Inspect(InspectArgs),
}

#[derive(Debug, Args, Default)]
pub struct ForwardArgs {
    /// Number of source positions.
    #[arg(long)]
    pub sources: Option<String>,
    /// Radius of the source ball, mm.
    #[arg(long)]
    pub source_radius: Option<String>,
    /// Radius of the electrode sphere, mm.
    #[arg(long)]
    pub scalp_radius: Option<String>,
    #[arg(long)]
    pub electrodes: Option<String>,
    /// Magnetometer radius as a multiple of the electrode radius.
    #[arg(long)]
    pub meg_scale: Option<String>,
    /// Head conductivity, S/m.
    #[arg(long)]
    pub conductivity: Option<String>,
    /// Legendre terms in the EEG series.
    #[arg(long)]
    pub series_terms: Option<String>,
    /// Seed of the random source positions.
    #[arg(long)]
    pub space_seed: Option<String>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Flat `section.key = value` settings file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub forward: ForwardArgs,
    /// EEG, MEG or COMBINED.
    #[arg(long)]
    pub modality: Option<String>,
    /// Output lead-field file.
    #[arg(long)]
    pub out: Option<String>,
    /// Write the binary variant.
    #[arg(long)]
    pub binary: bool,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Flat `section.key = value` settings file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Preset case id (A to I); run-case only.
    #[arg(long)]
    pub case: Option<String>,
    #[arg(long)]
    pub realizations: Option<String>,
    /// Master seed for noise and decompositions.
    #[arg(long)]
    pub seed: Option<String>,
    /// Worker threads for realizations; results do not depend on it.
    #[arg(long)]
    pub threads: Option<String>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<String>,
    #[arg(long)]
    pub levels: Option<String>,
    #[arg(long)]
    pub n_iter: Option<String>,
    #[arg(long)]
    pub beta: Option<String>,
    #[arg(long)]
    pub theta0: Option<String>,
    /// Solver noise level in normalized data units (default: the simulated one).
    #[arg(long)]
    pub sigma: Option<String>,
    #[arg(long)]
    pub sparsity: Option<String>,
    #[arg(long)]
    pub decompositions: Option<String>,
    /// G or IG.
    #[arg(long)]
    pub family: Option<String>,
    /// EEG or E/MEG.
    #[arg(long)]
    pub modality: Option<String>,
    /// Noise standard deviation in percent of the peak clean signal.
    #[arg(long)]
    pub noise: Option<String>,
    #[arg(long)]
    pub deep_amplitude: Option<String>,
    #[arg(long)]
    pub superficial_amplitude: Option<String>,
    /// EEG lead-field file to use instead of the built-in sphere.
    #[arg(long)]
    pub leadfield: Option<String>,
    /// MEG lead-field file paired with --leadfield.
    #[arg(long)]
    pub meg_leadfield: Option<String>,
    #[command(flatten)]
    pub forward: ForwardArgs,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    /// Lead-field file in text or binary form.
    pub path: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    commands::execute(cli)
}
