use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand};
use harvestgame::config::PRESETS;
use harvestgame::experiment::{aggregate_csv, gamma_tag, run_engine, sweep, threads_from_env, Engine, RunSummary};
use harvestgame::model::{gen_channel_set, ChannelSet};
use harvestgame::ScenarioConfig;

/// Exit status when a run finished but was flagged (infeasible or not converged).
const EXIT_FLAGGED: u8 = 3;

#[derive(Parser)]
#[command(name = "harvestgame", version, about = "MIMO transmission games under energy-harvesting constraints")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a channel set and write it as JSON.
    Gen {
        #[command(flatten)]
        scenario: Scenario,
        /// Output file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one engine; writes the trace CSV and `<out>.summary.json`.
    Run {
        #[command(flatten)]
        scenario: Scenario,
        #[arg(long)]
        engine: Engine,
        /// Channel set from `gen`; drawn from the config seed when absent.
        #[arg(long)]
        channels: Option<PathBuf>,
        /// Requirement at harvester 1, overriding the config.
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one engine per requirement value into an output directory.
    Sweep {
        #[command(flatten)]
        scenario: Scenario,
        #[arg(long)]
        engine: Engine,
        #[arg(long)]
        channels: Option<PathBuf>,
        /// Comma-separated requirement values; defaults to the config's `gammas`.
        #[arg(long, value_delimiter = ',')]
        gamma: Option<Vec<f64>>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print a table of the summaries in the given files or directories.
    Report {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
    },
}

#[derive(Args)]
struct Scenario {
    /// Config JSON file or preset name.
    #[arg(long, default_value = "paper-K3")]
    config: String,
    /// Seed override.
    #[arg(long)]
    seed: Option<u64>,
}

impl Scenario {
    fn load(&self) -> Result<ScenarioConfig> {
        let path = Path::new(&self.config);
        let mut cfg = if path.exists() {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            ScenarioConfig::from_json_str(&text).with_context(|| format!("loading {}", path.display()))?
        } else if PRESETS.contains(&self.config.as_str()) {
            ScenarioConfig::preset(&self.config)?
        } else {
            bail!(
                "config `{}` is neither a file nor a preset ({})",
                self.config,
                PRESETS.join(", ")
            );
        };
        if let Some(seed) = self.seed {
            cfg = cfg.with_seed(seed);
        }
        Ok(cfg)
    }
}

fn channels_for(path: Option<&Path>, cfg: &ScenarioConfig) -> Result<ChannelSet<f64>> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Ok(ChannelSet::from_json(&text).with_context(|| format!("loading {}", p.display()))?)
        }
        None => Ok(gen_channel_set(cfg)),
    }
}

fn write(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn summary_path(out: &Path) -> PathBuf {
    out.with_extension("summary.json")
}

fn to_json(value: &impl serde::Serialize) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("summary serializes");
    s.push('\n');
    s
}

fn report_line(s: &RunSummary) {
    let gammas: Vec<String> = s.energy_requirements.iter().map(|g| g.to_string()).collect();
    println!(
        "{:<8} {:>6} {:>12} {:<14} {:>12.6} {:>12.6} {}",
        s.engine.as_str(),
        s.seed,
        gammas.join("/"),
        s.classification.as_deref().unwrap_or("-"),
        s.sum_rate,
        s.representative_sum_rate,
        if s.flagged { "FLAGGED" } else { "ok" }
    );
}

fn collect_summaries(paths: &[PathBuf]) -> Result<Vec<(PathBuf, RunSummary)>> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)
                .with_context(|| format!("listing {}", p.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.to_string_lossy().ends_with(".summary.json"))
                .collect();
            found.sort();
            files.extend(found);
        } else {
            files.push(p.clone());
        }
    }
    if files.is_empty() {
        bail!("no summary files found");
    }
    files
        .into_iter()
        .map(|f| {
            let text = fs::read_to_string(&f).with_context(|| format!("reading {}", f.display()))?;
            let s: RunSummary = serde_json::from_str(&text).with_context(|| format!("parsing {}", f.display()))?;
            Ok((f, s))
        })
        .collect()
}

fn execute(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Gen { scenario, out } => {
            let cfg = scenario.load()?;
            write(&out, &gen_channel_set::<f64>(&cfg).to_json())?;
            Ok(false)
        }
        Command::Run {
            scenario,
            engine,
            channels,
            gamma,
            out,
        } => {
            let mut cfg = scenario.load()?;
            if let Some(g) = gamma {
                cfg = cfg.with_gamma(g);
                cfg.validate()?;
            }
            let ch = channels_for(channels.as_deref(), &cfg)?;
            let run = run_engine(engine, &ch, &cfg)?;
            write(&out, &run.trace_csv)?;
            write(&summary_path(&out), &to_json(&run.summary))?;
            for f in &run.summary.flags {
                eprintln!("note: {f}");
            }
            Ok(run.summary.flagged)
        }
        Command::Sweep {
            scenario,
            engine,
            channels,
            gamma,
            out,
        } => {
            let cfg = scenario.load()?;
            let gammas = gamma.unwrap_or_else(|| cfg.gammas.clone());
            if gammas.is_empty() {
                Cli::command()
                    .error(
                        ErrorKind::MissingRequiredArgument,
                        "sweep needs a requirement list (--gamma 50,60,70 or `gammas` in the config)",
                    )
                    .exit();
            }
            let ch = channels_for(channels.as_deref(), &cfg)?;
            let points = sweep(engine, &ch, &cfg, &gammas, threads_from_env())?;
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            for p in &points {
                let trace = out.join(format!("trace_gamma_{}.csv", gamma_tag(p.gamma)));
                write(&trace, &p.output.trace_csv)?;
                write(&summary_path(&trace), &to_json(&p.output.summary))?;
            }
            write(&out.join("aggregate.csv"), &aggregate_csv(&points))?;
            Ok(points.iter().any(|p| p.output.summary.flagged))
        }
        Command::Report { paths } => {
            let all = collect_summaries(&paths)?;
            println!(
                "{:<8} {:>6} {:>12} {:<14} {:>12} {:>12} status",
                "engine", "seed", "gamma", "class", "sum_rate", "rep_rate"
            );
            for (_, s) in &all {
                report_line(s);
            }
            Ok(all.iter().any(|(_, s)| s.flagged))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => ExitCode::from(EXIT_FLAGGED),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
