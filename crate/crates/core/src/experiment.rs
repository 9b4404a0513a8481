//! Engine runs and Γ sweeps with CSV traces and JSON summaries.
//!
//! Sweep points are independent and run on a rayon pool; results are
//! collected in input order, so output bytes do not depend on the pool size.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ScenarioConfig;
use crate::coop::outer_refine;
use crate::error::{Error, Result};
use crate::model::{harvested_power, ChannelSet};
use crate::multiharvester::{run_multi, HarvesterRegistry};
use crate::noncoop::{run_dynamics, Classification, GAME_HARVESTER};

/// Environment variable capping the sweep worker count.
pub const THREADS_ENV: &str = "HARVESTGAME_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Engine {
    Noncoop,
    Coop,
    Multi,
}

impl Engine {
    pub fn as_str(self) -> &'static str {
        match self {
            Engine::Noncoop => "noncoop",
            Engine::Coop => "coop",
            Engine::Multi => "multi",
        }
    }
}

impl fmt::Display for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Engine {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "noncoop" => Ok(Engine::Noncoop),
            "coop" => Ok(Engine::Coop),
            "multi" => Ok(Engine::Multi),
            other => Err(Error::InvalidConfig(format!(
                "unknown engine `{other}` (expected noncoop, coop or multi)"
            ))),
        }
    }
}

/// Summary of one engine run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub engine: Engine,
    pub seed: u64,
    pub energy_requirements: Vec<f64>,
    /// Non-cooperative classification; absent for the other engines.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classification: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cycle_period: Option<usize>,
    /// Best-response sweeps, bargaining rounds or subgradient iterations.
    pub iterations: usize,
    pub final_rates: Vec<f64>,
    pub sum_rate: f64,
    /// Sum rate averaged over the detected cycle (equals `sum_rate` otherwise).
    pub representative_sum_rate: f64,
    /// Harvested power at every harvester of the channel set.
    pub harvested: Vec<f64>,
    /// Final prices; `None` for harvesters inactive at termination.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub lambdas: Vec<Option<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub messages: Option<u64>,
    /// Exact sum rate after each outer round (cooperative engine).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub round_sum_rates: Vec<f64>,
    pub flagged: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trace_csv: String,
    pub summary: RunSummary,
}

fn sum(v: &[f64]) -> f64 {
    v.iter().sum()
}

fn harvested_all(covs: &[crate::model::TransmitCovariance<f64>], channels: &ChannelSet<f64>) -> Vec<f64> {
    (0..channels.l()).map(|l| harvested_power(covs, channels.harvester_row(l))).collect()
}

fn check_shape(channels: &ChannelSet<f64>, config: &ScenarioConfig) -> Result<()> {
    let want = (config.k, config.l, config.mt, config.mr);
    let got = (channels.k(), channels.l(), channels.mt(), channels.mr());
    if want != got {
        return Err(Error::DimensionMismatch(format!(
            "channel set has (K, L, M_t, M_r) = {got:?}, config expects {want:?}"
        )));
    }
    Ok(())
}

/// Runs one engine on one channel set.
pub fn run_engine(engine: Engine, channels: &ChannelSet<f64>, config: &ScenarioConfig) -> Result<RunOutput> {
    check_shape(channels, config)?;
    let base = |iterations, rates: Vec<f64>, harvested| RunSummary {
        engine,
        seed: config.seed,
        energy_requirements: config.energy_requirements.clone(),
        classification: None,
        cycle_period: None,
        iterations,
        sum_rate: sum(&rates),
        representative_sum_rate: sum(&rates),
        final_rates: rates,
        harvested,
        lambdas: Vec::new(),
        messages: None,
        round_sum_rates: Vec::new(),
        flagged: false,
        flags: Vec::new(),
    };
    match engine {
        Engine::Noncoop => {
            let trace = run_dynamics(channels, config)?;
            let last = trace.final_state();
            let mut s = base(trace.iterations(), last.rates.clone(), harvested_all(&last.covariances, channels));
            s.classification = Some(trace.classification.as_str().to_string());
            s.cycle_period = trace.cycle_period;
            s.representative_sum_rate = trace.representative_sum_rate();
            let unsettled = trace.classification != Classification::ConvergedNe;
            let short = last.energy_total < config.gamma() - config.tolerances.eq_tol * config.gamma().max(1.0);
            if unsettled {
                s.flags.push(format!("dynamics {}", trace.classification));
            }
            if short {
                s.flags.push("energy requirement not met".into());
            }
            // Fallback best responses are still certified optima; reported, not flagged.
            if trace.fallback_updates() > 0 {
                s.flags.push(format!("{} fallback best responses", trace.fallback_updates()));
            }
            s.flagged = unsettled || short;
            Ok(RunOutput {
                trace_csv: trace.to_csv(),
                summary: s,
            })
        }
        Engine::Coop => {
            let trace = outer_refine(channels, config, config.bargaining.outer_rounds)?;
            let fin = trace.final_round();
            let mut s = base(trace.rounds.len(), fin.rates.clone(), harvested_all(&trace.final_covariances, channels));
            s.lambdas = vec![Some(fin.lambda)];
            s.messages = Some(trace.total_messages());
            s.round_sum_rates = trace.rounds.iter().map(|r| r.sum_rate).collect();
            if !trace.init_flagged.is_empty() {
                s.flags.push(format!("initial share unattainable for users {:?}", trace.init_flagged));
            }
            for o in &trace.outcomes {
                if o.flagged() {
                    s.flags.push(format!("round bargaining ended {:?}", o.status));
                }
            }
            s.flagged = trace.flagged();
            Ok(RunOutput {
                trace_csv: trace.to_csv(),
                summary: s,
            })
        }
        Engine::Multi => {
            let registry = HarvesterRegistry::from_config(config)?;
            let trace = run_multi(channels, &registry, config)?;
            let rates = crate::model::all_rates(&trace.final_covariances, channels)?;
            let mut s = base(trace.rows.len(), rates, harvested_all(&trace.final_covariances, channels));
            s.lambdas = trace
                .final_lambdas
                .iter()
                .enumerate()
                .map(|(l, &x)| trace.final_active.contains(&l).then_some(x))
                .collect();
            if !trace.feasible {
                s.flags.push("requirements not met at termination".into());
            }
            if !trace.weak_duality_held {
                s.flags.push("weak duality violated".into());
            }
            if trace.local_nonconverged {
                s.flags.push("local solver hit its iteration limit".into());
            }
            if !trace.init_flagged.is_empty() {
                s.flags.push(format!("initial share unattainable for users {:?}", trace.init_flagged));
            }
            s.flagged = trace.flagged();
            if s.flagged && s.flags.is_empty() {
                s.flags.push(format!("ended {:?}", trace.status));
            }
            Ok(RunOutput {
                trace_csv: trace.to_csv(channels.k()),
                summary: s,
            })
        }
    }
}

/// One point of a sweep.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub gamma: f64,
    pub output: RunOutput,
}

/// Worker count from [`THREADS_ENV`], or `None` when unset or invalid.
pub fn threads_from_env() -> Option<usize> {
    std::env::var(THREADS_ENV).ok()?.trim().parse().ok().filter(|&n| n > 0)
}

/// Runs `engine` once per requirement in `gammas` (harvester 0), on up to
/// `threads` workers (rayon's default when `None`).
pub fn sweep(
    engine: Engine,
    channels: &ChannelSet<f64>,
    config: &ScenarioConfig,
    gammas: &[f64],
    threads: Option<usize>,
) -> Result<Vec<SweepPoint>> {
    if gammas.is_empty() {
        return Err(Error::InvalidConfig("sweep needs at least one requirement value".into()));
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    pool.install(|| {
        gammas
            .par_iter()
            .map(|&gamma| {
                let cfg = config.with_gamma(gamma);
                cfg.validate()?;
                run_engine(engine, channels, &cfg).map(|output| SweepPoint { gamma, output })
            })
            .collect()
    })
}

/// Aggregate table: one row per sweep point.
pub fn aggregate_csv(points: &[SweepPoint]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["gamma", "sum_rate", "representative_sum_rate", "energy_total", "classification", "flagged"])
        .expect("in-memory write");
    for p in points {
        let s = &p.output.summary;
        w.write_record([
            p.gamma.to_string(),
            s.sum_rate.to_string(),
            s.representative_sum_rate.to_string(),
            s.harvested.get(GAME_HARVESTER).copied().unwrap_or(0.0).to_string(),
            s.classification.clone().unwrap_or_default(),
            s.flagged.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

/// File-name fragment for a requirement value (`70` or `62.5`).
pub fn gamma_tag(gamma: f64) -> String {
    gamma.to_string().replace('-', "m")
}
