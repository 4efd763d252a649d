use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use metrosim::analytics::Model;
use metrosim::commands::{
    compare_command, exit_code_for, gen_region_command, regress_command, run_command, validate_command,
    CommandOptions, CommandReport, GenRegionOptions, EXIT_CONFIG,
};
use metrosim::config::{config_reference, ScenarioConfig, UnknownKeys};
use metrosim::worldgen::RegionGenParams;

/// Simulate how the distribution of municipal taxes across a metropolitan
/// region shapes quality of life, under four fiscal cases.
#[derive(Debug, Parser)]
#[command(name = "metrosim", version, after_long_help = long_help())]
struct Cli {
    /// Log verbosity: -v info, -vv debug.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one scenario (first region, `case_id`) and export its runs.
    #[command(after_long_help = long_help())]
    Run(BatchArgs),
    /// Run every region under each case; normalized QLI table, best-case
    /// histogram and long-format export.
    #[command(after_long_help = long_help())]
    Compare(BatchArgs),
    /// Run the batch and fit the Simul1/2/3 least-squares models.
    #[command(after_long_help = long_help())]
    Regress {
        #[command(flatten)]
        batch: BatchArgs,
        /// CSV with an `apc` column plus numeric covariate columns.
        #[arg(long)]
        covariates: Option<PathBuf>,
        /// Models to fit (comma separated).
        #[arg(long, value_delimiter = ',', default_value = "Simul1,Simul2,Simul3")]
        models: Vec<String>,
    },
    /// Run the batch and report tax shares, tax/GDP and macro summaries.
    #[command(after_long_help = long_help())]
    Validate(BatchArgs),
    /// Write a synthetic region schema file.
    GenRegion(GenArgs),
}

#[derive(Debug, Args)]
struct BatchArgs {
    /// Scenario config (TOML). All keys are optional; see the reference below.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(short, long, env = "METROSIM_OUTPUT_DIR", default_value = "output")]
    output: PathBuf,
    /// Region schema file; replaces the config's [region] table.
    #[arg(long)]
    region: Option<PathBuf>,
    /// Overrides `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `runs_per_scenario`.
    #[arg(long)]
    runs: Option<u32>,
    /// Case filter, e.g. 1,2 (for `run`: the single case to run).
    #[arg(long, value_delimiter = ',')]
    cases: Option<Vec<u8>>,
    /// Only these region ids.
    #[arg(long, value_delimiter = ',')]
    apc: Option<Vec<String>>,
    /// Worker threads for the batch; results do not depend on it.
    #[arg(short, long, default_value_t = 1)]
    jobs: usize,
    /// Warn about unknown config keys instead of failing.
    #[arg(long)]
    allow_unknown_keys: bool,
    /// Skip the per-run series files under runs/.
    #[arg(long)]
    no_run_files: bool,
}

#[derive(Debug, Args)]
struct GenArgs {
    /// Destination JSON file.
    #[arg(short, long, default_value = "region.json")]
    output: PathBuf,
    #[arg(long, default_value = "APC")]
    id: String,
    #[arg(long, default_value = "Synthetic region")]
    name: String,
    #[arg(long, default_value_t = 5)]
    municipalities: usize,
    #[arg(long, default_value_t = 100_000)]
    population: u64,
    /// Pareto exponent of the population split; 0 splits evenly.
    #[arg(long, default_value_t = 1.0)]
    skew: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Elasticity of firms per capita with respect to municipal size.
    #[arg(long)]
    firm_agglomeration: Option<f64>,
    /// Smallest allowed municipal population.
    #[arg(long)]
    min_population: Option<u64>,
}

fn long_help() -> String {
    format!(
        "Exit codes: 0 success, 1 configuration error, 2 invariant violation, 3 partial batch failure.\n\
         The output directory can also be set with METROSIM_OUTPUT_DIR.\n\n\
         CONFIG REFERENCE (every key, with its default):\n\n{}",
        config_reference()
    )
}

fn load_config(args: &BatchArgs) -> metrosim::Result<ScenarioConfig> {
    let unknown = if args.allow_unknown_keys { UnknownKeys::Warn } else { UnknownKeys::Error };
    match &args.config {
        Some(path) => Ok(ScenarioConfig::load(path, unknown)?.0),
        None => Ok(ScenarioConfig::default()),
    }
}

fn options(args: &BatchArgs) -> CommandOptions {
    CommandOptions {
        out_dir: args.output.clone(),
        jobs: args.jobs.max(1),
        region: args.region.clone(),
        seed: args.seed,
        runs: args.runs,
        cases: args.cases.clone(),
        apcs: args.apc.clone(),
        no_run_files: args.no_run_files,
    }
}

fn dispatch(cli: Cli) -> metrosim::Result<CommandReport> {
    match cli.command {
        Command::Run(a) => run_command(&load_config(&a)?, &options(&a)),
        Command::Compare(a) => compare_command(&load_config(&a)?, &options(&a)),
        Command::Validate(a) => validate_command(&load_config(&a)?, &options(&a)),
        Command::Regress { batch, covariates, models } => {
            let models = models.iter().map(|m| m.parse()).collect::<metrosim::Result<Vec<Model>>>()?;
            regress_command(&load_config(&batch)?, &options(&batch), covariates.as_deref(), &models)
        }
        Command::GenRegion(g) => {
            let mut generator = RegionGenParams::default();
            if let Some(a) = g.firm_agglomeration {
                generator.firm_agglomeration = a;
            }
            if let Some(m) = g.min_population {
                generator.min_population = m;
            }
            let opts = GenRegionOptions {
                id: g.id,
                name: g.name,
                municipalities: g.municipalities,
                total_population: g.population,
                skew: g.skew,
                seed: g.seed,
                generator,
            };
            let region = gen_region_command(&opts, &g.output)?;
            Ok(CommandReport {
                exit_code: 0,
                files: vec![g.output.display().to_string()],
                summary: format!(
                    "wrote {} ({} municipalities, population {})\n",
                    g.output.display(),
                    region.municipalities.len(),
                    region.total_population()
                ),
            })
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
    match dispatch(cli) {
        Ok(report) => {
            print!("{}", report.summary);
            ExitCode::from(report.exit_code as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            let code = exit_code_for(&e);
            ExitCode::from(if code == 0 { EXIT_CONFIG } else { code } as u8)
        }
    }
}
