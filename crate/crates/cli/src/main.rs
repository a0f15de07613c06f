use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use ppl_core::dp_policy::{eval_exact, eval_monte_carlo, eval_on_samples};
use ppl_core::experiments::{run_to_dir, ExperimentConfig};
use ppl_core::hard_instances::HardInstanceSpec;
use ppl_core::io;
use ppl_core::learners::{expand, fit_saa, learn_product, DEFAULT_GRID_BUDGET};
use ppl_core::{distributions::sample_trajectories, ChangePointSet, Error, Objective};

#[derive(Parser)]
#[command(name = "ppl", version, about = "Learn and evaluate posted-price policies")]
struct Cli {
    /// Master seed; overrides the config's seed where one applies.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file or directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, env = "PPL_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum LearnMode {
    EmpiricalDp,
    Saa,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config and write report.csv, summary.csv, meta.json.
    Run { config: PathBuf },
    /// Evaluate a policy file on an instance file.
    Eval {
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        instance: PathBuf,
        #[arg(long)]
        objective: Objective,
        /// `exact` or `mc:T:seed`.
        #[arg(long, default_value = "exact")]
        mode: String,
    },
    /// Draw trajectories from an instance (CSV, or JSONL by extension).
    Sample {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long)]
        count: usize,
    },
    /// Fit a policy to a sample file.
    Learn {
        #[arg(long)]
        samples: PathBuf,
        #[arg(long)]
        objective: Objective,
        /// Comma-separated change points for `saa`; empty means a static price.
        #[arg(long, default_value = "")]
        change_points: String,
        #[arg(long, value_enum, default_value = "empirical-dp")]
        mode: LearnMode,
    },
    /// Build a hard instance from a config file.
    Hardgen {
        config: PathBuf,
        /// Also write the long-format distribution table here.
        #[arg(long)]
        table: Option<PathBuf>,
        /// Also write the optimal policy here.
        #[arg(long)]
        policy: Option<PathBuf>,
    },
}

struct Failure {
    code: u8,
    msg: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Io(_) => 1,
            Error::GridOverflow { .. } => 3,
            _ => 2,
        };
        Failure { code, msg: e.to_string() }
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure { code: 2, msg: msg.into() }
}

/// Twelve significant digits, then the shortest decimal of that rounding.
fn format_value(x: f64) -> String {
    let rounded: f64 = format!("{x:.11e}").parse().unwrap_or(x);
    let rounded = if rounded == 0.0 { 0.0 } else { rounded };
    rounded.to_string()
}

fn parse_change_points(text: &str) -> Result<Vec<usize>, Failure> {
    text.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse().map_err(|_| usage(format!("bad change point `{t}`"))))
        .collect()
}

fn require_out(out: Option<PathBuf>, what: &str) -> Result<PathBuf, Failure> {
    out.ok_or_else(|| usage(format!("{what} needs --out")))
}

fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

fn run(cli: Cli) -> Result<(), Failure> {
    let threads = cli.threads.unwrap_or(0);
    if !matches!(cli.command, Command::Run { .. }) {
        // ignore a second initialization in the same process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    match cli.command {
        Command::Run { config } => {
            let text = std::fs::read_to_string(&config).map_err(Error::from)?;
            let mut cfg = ExperimentConfig::parse(&text)?;
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            if let Some(out) = cli.out {
                cfg.out = Some(out);
            }
            let dir = cfg.out.clone().unwrap_or_else(|| PathBuf::from("ppl-out"));
            let out = run_to_dir(&cfg, &dir, threads)?;
            for row in &out.summary {
                println!(
                    "T={} trials={} median_regret={} success_frequency={}",
                    row.t,
                    row.trials,
                    row.median_regret.map(format_value).unwrap_or_default(),
                    format_value(row.success_frequency)
                );
            }
        }
        Command::Eval { policy, instance, objective, mode } => {
            let policy = io::load_policy(&policy)?;
            let src = io::load_instance(&instance)?;
            if mode == "exact" {
                println!("{}", format_value(eval_exact(&src, &policy, objective)?));
            } else {
                let parts: Vec<&str> = mode.split(':').collect();
                let (count, seed) = match parts.as_slice() {
                    ["mc", t, s] => (
                        t.parse::<usize>().map_err(|_| usage(format!("bad sample count in `{mode}`")))?,
                        s.parse::<u64>().map_err(|_| usage(format!("bad seed in `{mode}`")))?,
                    ),
                    ["mc", t] => (
                        t.parse::<usize>().map_err(|_| usage(format!("bad sample count in `{mode}`")))?,
                        cli.seed.unwrap_or(0),
                    ),
                    _ => return Err(usage(format!("unknown mode `{mode}`; use exact or mc:T:seed"))),
                };
                let (mean, stderr) = eval_monte_carlo(&src, &policy, objective, count, seed)?;
                println!("{} {}", format_value(mean), format_value(stderr));
            }
        }
        Command::Sample { instance, count } => {
            let out = require_out(cli.out, "sample")?;
            let src = io::load_instance(&instance)?;
            let s = sample_trajectories(&src, count, cli.seed.unwrap_or(0))?;
            io::save_samples(&s, &out)?;
        }
        Command::Learn { samples, objective, change_points, mode } => {
            let out = require_out(cli.out, "learn")?;
            let s = io::load_samples(&samples)?;
            let (policy, points) = match mode {
                LearnMode::EmpiricalDp => (learn_product(&s, objective)?.0, (2..=s.n()).collect()),
                LearnMode::Saa => {
                    let cps = ChangePointSet::new(s.n(), parse_change_points(&change_points)?)?;
                    let fit = fit_saa(&s, &cps, objective, DEFAULT_GRID_BUDGET)?;
                    (expand(&cps, &fit.rho)?, cps.points().to_vec())
                }
            };
            let score = eval_on_samples(&s, &policy, objective)?;
            io::save_policy(&policy, &out)?;
            let meta = serde_json::json!({
                "objective": objective.as_str(),
                "mode": match mode { LearnMode::EmpiricalDp => "empirical-dp", LearnMode::Saa => "saa" },
                "T": s.len(),
                "change_points": points,
                "score": score,
            });
            let text = serde_json::to_string_pretty(&meta).map_err(|e| Error::Io(e.to_string()))?;
            std::fs::write(sidecar_path(&out), text + "\n").map_err(Error::from)?;
        }
        Command::Hardgen { config, table, policy } => {
            let out = require_out(cli.out, "hardgen")?;
            let text = std::fs::read_to_string(&config).map_err(Error::from)?;
            let inst = HardInstanceSpec::parse(&text)?.build()?;
            io::save_instance(&inst.source, &out)?;
            if let Some(path) = table {
                let file = std::fs::File::create(path).map_err(Error::from)?;
                io::write_distribution_table(&inst.source, file)?;
            }
            if let Some(path) = policy {
                io::save_policy(&inst.optimal_policy, &path)?;
            }
            println!("optimal value {}", format_value(inst.optimal_value));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
