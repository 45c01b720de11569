use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::LevelFilter;

use rosa::constraints::ConstraintSystem;
use rosa::harness::{self, BenchConfig, Method, MethodOptions};
use rosa::io::{self as files, ConstraintDump};
use rosa::maze::{build_maze_pomdp, generate_maze};
use rosa::{Error, Result};

#[derive(Parser)]
#[command(name = "rosa", version, about = "Reward optimization for POMDPs in state-action space")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a maze navigation POMDP.
    GenMaze {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.9999)]
        gamma: f64,
        #[arg(long)]
        out: PathBuf,
        /// Print the maze to stderr.
        #[arg(long)]
        verbose: bool,
    },
    /// Solve a model with one method and write a JSON report.
    Solve {
        #[arg(long, default_value = "rosa")]
        method: Method,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        max_iters: Option<usize>,
        #[arg(long, default_value_t = 1)]
        restarts: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Report path; stdout if omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the policy file here.
        #[arg(long)]
        policy_out: Option<PathBuf>,
    },
    /// Sweep methods over maze sizes and discount factors.
    Bench {
        #[arg(long, value_delimiter = ',', default_values = ["rosa", "bcp", "dpo"])]
        methods: Vec<Method>,
        /// `2..10`, `2-10` or a comma separated list.
        #[arg(long, default_value = "2..6")]
        n_range: String,
        /// Comma separated list, or `sweep` for 1 - 10^(-k/8), k = 8..40.
        #[arg(long, default_value = "0.9999")]
        gammas: String,
        #[arg(long, default_value_t = 10)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        seed0: u64,
        #[arg(long, value_delimiter = ',', default_values_t = [0.16, 0.84])]
        quantiles: Vec<f64>,
        /// Per-run CSV; stdout if omitted.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Summary CSV; stderr if omitted.
        #[arg(long)]
        summary: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        jobs: usize,
        /// Directory for the model and policy file of every run.
        #[arg(long)]
        policies: Option<PathBuf>,
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        max_iters: Option<usize>,
    },
    /// Evaluate a policy exactly.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        policy: PathBuf,
    },
    /// Write the constraint system of a model.
    DumpConstraints {
        #[arg(long)]
        model: PathBuf,
        /// Output path; stdout if omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn init_logging() {
    let level = match std::env::var("ROSA_LOG").as_deref() {
        Ok("debug") => LevelFilter::Debug,
        Ok("info") => LevelFilter::Info,
        _ => LevelFilter::Warn,
    };
    env_logger::Builder::new().filter_level(level).init();
}

fn parse_sizes(text: &str) -> Result<Vec<usize>> {
    let bad = || Error::InvalidInput(format!("cannot parse size range {text:?}"));
    let range = text.split_once("..").or_else(|| text.split_once('-'));
    if let Some((lo, hi)) = range {
        let lo: usize = lo.trim().parse().map_err(|_| bad())?;
        let hi: usize = hi.trim().parse().map_err(|_| bad())?;
        return if lo <= hi { Ok((lo..=hi).collect()) } else { Err(bad()) };
    }
    text.split(',').map(|s| s.trim().parse().map_err(|_| bad())).collect()
}

fn parse_gammas(text: &str) -> Result<Vec<f64>> {
    if text == "sweep" {
        return Ok(harness::default_gamma_sweep());
    }
    text.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| Error::InvalidInput(format!("cannot parse discount factor {s:?}")))
        })
        .collect()
}

fn output(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text)?,
        None => io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::GenMaze {
            n,
            seed,
            gamma,
            out,
            verbose,
        } => {
            let maze = generate_maze(n, seed)?;
            let pomdp = build_maze_pomdp(&maze, gamma)?;
            if verbose {
                eprint!("{}", maze.render());
                eprintln!(
                    "{} states, {} observations",
                    pomdp.model.n_states(),
                    pomdp.model.n_obs()
                );
            }
            files::write_model(out, &pomdp.model)
        }
        Command::Solve {
            method,
            model,
            tol,
            max_iters,
            restarts,
            seed,
            out,
            policy_out,
        } => {
            let model = files::read_model(model)?;
            let options = MethodOptions {
                tol,
                max_iters,
                restarts,
                seed,
            };
            let report = harness::run_method(&model, method, &options)?;
            if let Some(p) = policy_out {
                files::write_policy(p, &report.policy()?)?;
            }
            output(out.as_deref(), &files::to_json(&report)?)
        }
        Command::Bench {
            methods,
            n_range,
            gammas,
            reps,
            seed0,
            quantiles,
            csv,
            summary,
            jobs,
            policies,
            tol,
            max_iters,
        } => {
            if quantiles.iter().any(|q| !(0.0..=1.0).contains(q)) {
                return Err(Error::InvalidInput(format!("quantiles must lie in [0, 1]: {quantiles:?}")));
            }
            let config = BenchConfig {
                methods,
                sizes: parse_sizes(&n_range)?,
                gammas: parse_gammas(&gammas)?,
                reps,
                seed0,
                options: MethodOptions {
                    tol,
                    max_iters,
                    ..Default::default()
                },
                jobs,
                policies,
            };
            let records = harness::run_bench(&config)?;
            match csv {
                Some(p) => harness::write_records(&records, File::create(p)?)?,
                None => harness::write_records(&records, io::stdout())?,
            }
            let groups = harness::summarize(&records, &quantiles);
            match summary {
                Some(p) => harness::write_summary(&groups, &quantiles, File::create(p)?),
                None => harness::write_summary(&groups, &quantiles, io::stderr()),
            }
        }
        Command::Eval { model, policy } => {
            let model = files::read_model(model)?;
            let policy = files::read_policy(policy)?;
            let eval = harness::evaluate_policy(&model, &policy)?;
            let r = eval.residuals;
            println!("reward {:.12}", eval.reward);
            println!(
                "eta residuals: linear {:.3e}, quadratic {:.3e}, min entry {:.3e}",
                r.max_linear, r.max_quadratic, r.min_entry
            );
            println!(
                "marginals: min {:.3e} at state {} ({})",
                eval.min_marginal,
                eval.min_marginal_state,
                if eval.marginals_positive { "all positive" } else { "degenerate" }
            );
            Ok(())
        }
        Command::DumpConstraints { model, out } => {
            let model = files::read_model(model)?;
            let dump = ConstraintDump::from(&ConstraintSystem::build(&model)?);
            let c = dump.counts;
            eprintln!("linear {}, quadratic {}, nonnegativity {}", c.linear, c.quadratic, c.nonneg);
            output(out.as_deref(), &files::to_json(&dump)?)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
