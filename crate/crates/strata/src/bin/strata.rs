use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use strata::campaign::{naive_monte_carlo, parallel_oracle};
use strata::{final_report, Mode, Result, RunConfig, RunDir, RunError, RunState, Runner};

/// Adaptive stratified estimation of P(J > C) for an expensive objective.
#[derive(Parser)]
#[command(name = "strata", version)]
struct Cli {
    /// Campaign configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run directory holding the config snapshot, samples and reports.
    #[arg(long, global = true)]
    run_dir: Option<PathBuf>,
    /// Overrides the master seed of the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Concurrent evaluations (default: available cores).
    #[arg(long, global = true)]
    parallelism: Option<usize>,
    /// Overrides the campaign mode of the configuration.
    #[arg(long, global = true, value_enum)]
    mode: Option<Mode>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate the configuration and create the run directory.
    Init,
    /// Run the full campaign, resuming if the run directory holds one.
    Run,
    /// Spend one more iteration on an existing run (running the
    /// preliminary batch first if it is missing).
    Iterate {
        /// Evaluations for this iteration; defaults to the next configured budget.
        #[arg(long)]
        budget: Option<usize>,
    },
    /// Print the estimate of an existing run.
    Report {
        #[arg(long)]
        json: bool,
    },
    /// Naive Monte Carlo baseline on the same evaluator.
    CompareMc {
        #[arg(long)]
        samples: usize,
    },
    /// Brute-force exceedance probability of a synthetic objective.
    Oracle {
        #[arg(long, default_value_t = 10_000_000)]
        draws: u64,
    },
}

impl Cli {
    fn parallelism(&self) -> usize {
        self.parallelism.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())).max(1)
    }

    /// Configuration from `--config` with the command-line overrides.
    fn fresh_config(&self) -> Result<RunConfig> {
        let path = self.config.as_deref().ok_or_else(|| RunError::Config("--config is required".into()))?;
        let mut config = RunConfig::load(path)?;
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(mode) = self.mode {
            config.mode = mode;
        }
        config.validate()?;
        Ok(config)
    }

    fn run_dir(&self) -> Result<&Path> {
        self.run_dir.as_deref().ok_or_else(|| RunError::Config("--run-dir is required".into()))
    }

    /// Snapshot of an existing run; overrides would silently fork it.
    fn existing_run(&self) -> Result<(RunDir, RunConfig)> {
        let dir = RunDir::open(self.run_dir()?)?;
        if self.seed.is_some() || self.mode.is_some() {
            return Err(RunError::Config("--seed and --mode apply only when a run is created".into()));
        }
        let config = dir.load_config()?;
        Ok((dir, config))
    }

    /// Configuration for commands that accept either a run or a config file.
    fn any_config(&self) -> Result<RunConfig> {
        match (&self.config, &self.run_dir) {
            (None, Some(_)) => Ok(self.existing_run()?.1),
            _ => self.fresh_config(),
        }
    }
}

fn load_state(dir: &RunDir) -> Result<RunState> {
    dir.load_state()?
        .ok_or_else(|| RunError::Config(format!("{} has no completed preliminary batch", dir.root().display())))
}

fn execute(cli: &Cli) -> Result<()> {
    let parallelism = cli.parallelism();
    match &cli.command {
        Command::Init => {
            let config = cli.fresh_config()?;
            let dir = RunDir::create(cli.run_dir()?, &config)?;
            println!("initialised {}", dir.root().display());
        }
        Command::Run => {
            let dir = match &cli.run_dir {
                Some(root) if root.join(strata::rundir::CONFIG_FILE).exists() => cli.existing_run()?.0,
                Some(root) => RunDir::create(root, &cli.fresh_config()?)?,
                None => {
                    let config = cli.fresh_config()?;
                    let evaluator = config.build_evaluator(None)?;
                    let state = Runner { evaluator: evaluator.as_ref(), parallelism, run_dir: None }.run(config)?;
                    print!("{}", final_report(&state)?.to_text());
                    return Ok(());
                }
            };
            let config = dir.load_config()?;
            let evaluator = config.build_evaluator(Some(dir.root()))?;
            let runner = Runner { evaluator: evaluator.as_ref(), parallelism, run_dir: Some(&dir) };
            let mut state = match dir.load_state()? {
                Some(state) => {
                    log::info!("resuming after iteration {}", state.iterations.len());
                    state
                }
                None => runner.preliminary(config)?,
            };
            runner.finish(&mut state)?;
            print!("{}", final_report(&state)?.to_text());
        }
        Command::Iterate { budget } => {
            let (dir, config) = cli.existing_run()?;
            let evaluator = config.build_evaluator(Some(dir.root()))?;
            let runner = Runner { evaluator: evaluator.as_ref(), parallelism, run_dir: Some(&dir) };
            let mut state = match dir.load_state()? {
                Some(state) => state,
                None => runner.preliminary(config)?,
            };
            let budget = match budget {
                Some(b) => *b,
                None => *state
                    .remaining_budgets()
                    .first()
                    .ok_or_else(|| RunError::Config("no configured budget left; pass --budget".into()))?,
            };
            runner.iterate(&mut state, budget)?;
            let report = final_report(&state)?;
            dir.save_report(&report)?;
            print!("{}", report.to_text());
        }
        Command::Report { json } => {
            let (dir, _) = cli.existing_run()?;
            let report = final_report(&load_state(&dir)?)?;
            dir.save_report(&report)?;
            if *json {
                println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            } else {
                print!("{}", report.to_text());
            }
        }
        Command::CompareMc { samples } => {
            let config = cli.any_config()?;
            let evaluator = config.build_evaluator(cli.run_dir.as_deref())?;
            let mc = naive_monte_carlo(&config, evaluator.as_ref(), *samples, config.seed, parallelism)?;
            println!("naive Monte Carlo, {} samples ({} failed)", mc.evaluated, mc.failures);
            println!("hits      {}", mc.hits);
            println!("estimate  {:.6e}", mc.probability);
            println!("variance  {:.6e}", mc.variance);
        }
        Command::Oracle { draws } => {
            let config = cli.any_config()?;
            let objective = config.synthetic_objective()?;
            let (p, se) = parallel_oracle(&objective, config.critical_value, *draws, config.seed)?;
            println!("oracle, {draws} draws");
            println!("probability     {p:.6e}");
            println!("standard error  {se:.6e}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
