use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pairnull::{Attribute, BurnIn, CountMode, PropertyType, RewireConfig, SwapKernel};

mod commands;
mod manifest;

use manifest::{kernel_from_str, Format, RunManifest};

/// Homophily and avoidance in guest→host networks, tested against strength-preserving rewiring.
#[derive(Parser)]
#[command(name = "pairnull", version)]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the node and edge CSV files.
    Validate(ValidateArgs),
    /// Pairing frequencies against the rewired null, per slice and attribute.
    Analyze(RunArgs),
    /// Re-run the analysis under a confidence threshold, label perturbation, price terciles, or matched pairs.
    Robustness(RobustnessArgs),
    /// Matched White/non-White hosts and a paired t-test on White-guest rates.
    Matchpair(MatchpairArgs),
    /// Generate a synthetic dataset with a planted same-group preference.
    Synth(SynthArgs),
    /// Render summary tables from JSON reports.
    Report(ReportArgs),
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    nodes: PathBuf,
    #[arg(long)]
    edges: PathBuf,
    /// Also write validation.json here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Clone)]
pub struct RunArgs {
    #[arg(long, required_unless_present = "manifest")]
    nodes: Option<PathBuf>,
    #[arg(long, required_unless_present = "manifest")]
    edges: Option<PathBuf>,
    /// Cities to analyse (comma separated); all when omitted.
    #[arg(long, value_delimiter = ',')]
    city: Vec<String>,
    #[arg(long = "property-type", value_delimiter = ',')]
    property_type: Vec<PropertyType>,
    #[arg(long, value_delimiter = ',', default_value = "gender,race,age")]
    attribute: Vec<Attribute>,
    #[arg(long, default_value_t = 0.3)]
    min_conf: f64,
    /// Randomized configurations per slice and attribute.
    #[arg(long, default_value_t = 1000)]
    configs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Burn-in stops once Kendall's tau between original and rewired weights drops to this.
    #[arg(long, default_value_t = 0.05)]
    tau_stop: f64,
    /// Fixed burn-in length; overrides --tau-stop.
    #[arg(long)]
    burn_in_swaps: Option<u64>,
    /// Draw all configurations from one chain, this many swaps apart.
    #[arg(long)]
    thinning: Option<u64>,
    #[arg(long, default_value = "uniform", value_parser = kernel_from_str)]
    kernel: SwapKernel,
    #[arg(long, default_value = "stay_weighted")]
    mode: CountMode,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "json,md")]
    format: Vec<Format>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long)]
    jobs: Option<usize>,
    /// JSON manifest whose keys override the flags.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

impl RunArgs {
    fn manifest(&self) -> anyhow::Result<RunManifest> {
        let burn_in = match self.burn_in_swaps {
            Some(swaps) => BurnIn::Fixed { swaps },
            None => BurnIn::AutoKendall {
                tau_stop: self.tau_stop,
                probe_interval: None,
                max_swaps: None,
            },
        };
        let mut formats = self.format.clone();
        formats.sort();
        formats.dedup();
        let m = RunManifest {
            nodes: self.nodes.clone().unwrap_or_default(),
            edges: self.edges.clone().unwrap_or_default(),
            cities: self.city.clone(),
            property_types: self.property_type.clone(),
            attributes: self.attribute.clone(),
            min_conf: self.min_conf,
            mode: self.mode,
            level: self.level,
            rewire: RewireConfig {
                n_configs: self.configs,
                burn_in,
                master_seed: self.seed,
                thinning_swaps: self.thinning,
                kernel: self.kernel,
            },
            formats,
            out: self.out.clone(),
        };
        match &self.manifest {
            Some(path) => m.overlay_file(path).map_err(|e| UsageError(format!("{e:#}")).into()),
            None => Ok(m),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Procedure {
    /// Re-run at a higher annotation confidence and compare with the 0.3 baseline.
    Confidence,
    /// Relabel a fraction of White users to Black or Asian and compare.
    Perturb,
    /// Keep only hosts in the middle third of weekly prices and compare.
    Tercile,
    /// Same as the matchpair subcommand.
    Matchpair,
}

#[derive(Args, Clone)]
pub struct MatchFlags {
    /// Maximum standardized covariate distance of a matched pair.
    #[arg(long, default_value_t = 0.2)]
    caliper: f64,
    /// Group rate as pooled stays (stay_weighted) or the mean of host rates (per_host).
    #[arg(long, default_value = "stay_weighted")]
    weighting: Weighting,
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum Weighting {
    StayWeighted,
    PerHost,
}

#[derive(Args)]
struct RobustnessArgs {
    #[arg(long, value_enum)]
    procedure: Procedure,
    /// Confidence threshold for the confidence procedure.
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    /// Share of White users relabeled by the perturb procedure.
    #[arg(long, default_value_t = 0.05)]
    fraction: f64,
    /// Seed of the relabeling draw; defaults to --seed.
    #[arg(long)]
    perturb_seed: Option<u64>,
    #[command(flatten)]
    matching: MatchFlags,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args)]
struct MatchpairArgs {
    #[command(flatten)]
    matching: MatchFlags,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args)]
struct SynthArgs {
    /// JSON generator spec; built-in defaults when omitted.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Overrides the spec's seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory holding JSON reports.
    #[arg(long)]
    input: PathBuf,
    /// Defaults to the input directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "md,csv")]
    format: Vec<Format>,
}

/// Errors that exit with status 2: bad flags, unreadable or malformed input.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn run(cli: Cli) -> anyhow::Result<u8> {
    match cli.command {
        Command::Validate(a) => commands::validate(&a.nodes, &a.edges, a.out.as_deref()),
        Command::Analyze(a) => {
            let m = a.manifest()?;
            commands::with_jobs(a.jobs, || commands::analyze(&m))
        }
        Command::Robustness(a) => {
            let m = a.run.manifest()?;
            let matching = a.matching.config(m.min_conf);
            let procedure = match a.procedure {
                Procedure::Confidence => commands::Robustness::Confidence { threshold: a.threshold },
                Procedure::Perturb => commands::Robustness::Perturb {
                    fraction: a.fraction,
                    seed: a.perturb_seed.unwrap_or(m.rewire.master_seed),
                },
                Procedure::Tercile => commands::Robustness::Tercile,
                Procedure::Matchpair => return commands::with_jobs(a.run.jobs, || commands::matchpair(&m, &matching)),
            };
            commands::with_jobs(a.run.jobs, || commands::robustness(&m, procedure))
        }
        Command::Matchpair(a) => {
            let m = a.run.manifest()?;
            let matching = a.matching.config(m.min_conf);
            commands::with_jobs(a.run.jobs, || commands::matchpair(&m, &matching))
        }
        Command::Synth(a) => commands::synth(a.spec.as_deref(), a.seed, &a.out),
        Command::Report(a) => {
            let out = a.out.clone().unwrap_or_else(|| a.input.clone());
            commands::report(&a.input, &out, &a.format)
        }
    }
}

impl MatchFlags {
    fn config(&self, min_conf: f64) -> pairnull::MatchConfig {
        pairnull::MatchConfig {
            min_conf,
            caliper: self.caliper,
            weighting: match self.weighting {
                Weighting::StayWeighted => pairnull::robustness::RateWeighting::StayWeighted,
                Weighting::PerHost => pairnull::robustness::RateWeighting::PerHost,
            },
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
