//! Non-cooperative game: each transmitter maximizes its own rate subject to
//! its power budget and the share of the harvesting requirement that the
//! other transmitters leave uncovered. Players update sequentially with the
//! closed-form best response.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::config::{GammaMode, InfeasiblePolicy, InitialStrategy, ScenarioConfig};
use crate::error::{Error, Result};
use crate::linalg::{self, frobenius};
use crate::model::{all_rates, harvested_power, info_rate, interference_plus_noise, ChannelSet, TransmitCovariance};
use crate::scalar::{CMat, Real};
use crate::waterfill::{assemble_covariance, solve_p2, whiten, SolveRoute, WaterfillSolution};

/// Harvester served by the single-harvester games.
pub const GAME_HARVESTER: usize = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Classification {
    #[serde(rename = "running")]
    Running,
    #[serde(rename = "converged-NE")]
    ConvergedNe,
    #[serde(rename = "cycling")]
    Cycling,
    #[serde(rename = "stalled")]
    Stalled,
}

impl Classification {
    pub fn as_str(self) -> &'static str {
        match self {
            Classification::Running => "running",
            Classification::ConvergedNe => "converged-NE",
            Classification::Cycling => "cycling",
            Classification::Stalled => "stalled",
        }
    }
}

impl std::fmt::Display for Classification {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone)]
pub struct GameState<T: Real> {
    pub covariances: Vec<TransmitCovariance<T>>,
    /// Completed rounds.
    pub iteration: usize,
    pub rates: Vec<T>,
    pub energy_total: T,
    pub classification: Classification,
}

impl<T: Real> GameState<T> {
    pub fn new(covariances: Vec<TransmitCovariance<T>>, channels: &ChannelSet<T>) -> Result<Self> {
        let rates = all_rates(&covariances, channels)?;
        let energy_total = harvested_power(&covariances, channels.harvester_row(GAME_HARVESTER));
        Ok(Self {
            covariances,
            iteration: 0,
            rates,
            energy_total,
            classification: Classification::Running,
        })
    }

    fn refresh(&mut self, channels: &ChannelSet<T>) -> Result<()> {
        self.rates = all_rates(&self.covariances, channels)?;
        self.energy_total = harvested_power(&self.covariances, channels.harvester_row(GAME_HARVESTER));
        Ok(())
    }

    pub fn sum_rate(&self) -> T {
        self.rates.iter().copied().fold(T::zero(), |a, b| a + b)
    }
}

/// Record of one best-response update.
#[derive(Debug, Clone, Serialize)]
#[serde(bound = "T: Serialize")]
pub struct UpdateRecord<T: Real> {
    pub iter: usize,
    pub user: usize,
    pub gamma_i: T,
    pub route: SolveRoute,
    /// The local problem had no feasible point and the infeasible policy applied.
    pub infeasible: bool,
    /// The closed form was replaced by the fallback solver.
    pub fallback: bool,
    pub multiple_roots: bool,
    /// Frobenius change of the updated covariance.
    pub change: T,
}

#[derive(Debug, Clone)]
pub struct GameTrace<T: Real> {
    /// Initial state followed by the state after every update.
    pub snapshots: Vec<GameState<T>>,
    pub updates: Vec<UpdateRecord<T>>,
    pub classification: Classification,
    pub cycle_period: Option<usize>,
}

impl<T: Real> GameTrace<T> {
    pub fn final_state(&self) -> &GameState<T> {
        self.snapshots.last().expect("trace holds the initial state")
    }

    pub fn iterations(&self) -> usize {
        self.final_state().iteration
    }

    pub fn infeasible_updates(&self) -> usize {
        self.updates.iter().filter(|u| u.infeasible).count()
    }

    pub fn fallback_updates(&self) -> usize {
        self.updates.iter().filter(|u| u.fallback).count()
    }

    /// Mean sum rate over the last detected cycle, or the final sum rate.
    pub fn representative_sum_rate(&self) -> T {
        let k = self.updates.len() / self.iterations().max(1);
        match self.cycle_period {
            Some(p) if k > 0 && self.snapshots.len() > p * k => {
                let tail = &self.snapshots[self.snapshots.len() - p * k..];
                let total = tail.iter().map(|s| s.sum_rate()).fold(T::zero(), |a, b| a + b);
                total / T::lit(tail.len() as f64)
            }
            _ => self.final_state().sum_rate(),
        }
    }

    /// Columns `iter, user, rate_1..K, sum_rate, energy_total, gamma_i,
    /// classification`; the first row is the initial state (empty `user`
    /// and `gamma_i`).
    pub fn to_csv(&self) -> String {
        let k = self.final_state().rates.len();
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["iter".to_string(), "user".to_string()];
        header.extend((1..=k).map(|i| format!("rate_{i}")));
        header.extend(["sum_rate", "energy_total", "gamma_i", "classification"].map(String::from));
        w.write_record(&header).expect("in-memory write");
        for (n, s) in self.snapshots.iter().enumerate() {
            let mut row = vec![s.iteration.to_string()];
            if n == 0 {
                row.push(String::new());
            } else {
                row.push((self.updates[n - 1].user + 1).to_string());
            }
            row.extend(s.rates.iter().map(|r| r.to_string()));
            row.push(s.sum_rate().to_string());
            row.push(s.energy_total.to_string());
            row.push(if n == 0 { String::new() } else { self.updates[n - 1].gamma_i.to_string() });
            row.push(s.classification.to_string());
            w.write_record(&row).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }
}

/// Requirement share left to user `i`: `Gamma - sum_{k != i} g_k^H Q_k g_k`.
///
/// `Protocol` obtains it as the harvester would report it: total received
/// power with user `i` transmitting and with user `i` silent. Measurements are
/// taken one user at a time, so no two users are ever silent together.
pub fn estimate_gamma_i<T: Real>(
    i: usize,
    covariances: &[TransmitCovariance<T>],
    channels: &ChannelSet<T>,
    gamma: T,
    mode: GammaMode,
) -> T {
    let row = channels.harvester_row(GAME_HARVESTER);
    match mode {
        GammaMode::Oracle => {
            let others = covariances
                .iter()
                .zip(row)
                .enumerate()
                .filter(|(k, _)| *k != i)
                .map(|(_, (q, g))| q.energy(g))
                .fold(T::zero(), |a, b| a + b);
            gamma - others
        }
        GammaMode::Protocol => {
            let on = harvested_power(covariances, row);
            let mut silent = covariances.to_vec();
            silent[i] = TransmitCovariance::zeros(covariances[i].dim(), covariances[i].power_budget());
            let off = harvested_power(&silent, row);
            let own = on - off;
            gamma - (on - own)
        }
    }
}

/// Outcome of one best response.
#[derive(Debug, Clone)]
pub struct BestResponse<T: Real> {
    pub covariance: TransmitCovariance<T>,
    pub gamma_i: T,
    pub solution: WaterfillSolution<T>,
}

impl<T: Real> BestResponse<T> {
    pub fn infeasible(&self) -> bool {
        !self.solution.feasible
    }
}

/// Optimal `Q_i` against the frozen `Q_{-i}`; when the local problem is
/// infeasible the configured policy decides the returned covariance.
pub fn best_response<T: Real>(
    i: usize,
    covariances: &[TransmitCovariance<T>],
    channels: &ChannelSet<T>,
    config: &ScenarioConfig,
) -> Result<BestResponse<T>> {
    if i >= channels.k() {
        return Err(Error::UserIndex { index: i, k: channels.k() });
    }
    let p = T::lit(config.power_limits[i]);
    let gamma = T::lit(config.gamma());
    let gamma_i = estimate_gamma_i(i, covariances, channels, gamma, config.gamma_i_mode);
    let r = interference_plus_noise(i, covariances, channels)?;
    let g = channels.harvester(GAME_HARVESTER, i);
    let problem = whiten(channels.user_channel(i), &r, g, p, gamma_i)?;
    let solution = solve_p2(&problem, T::lit(config.tolerances.eq_tol));
    let covariance = if solution.feasible {
        assemble_covariance(&problem, &solution)
    } else {
        match config.infeasible_policy {
            InfeasiblePolicy::KeepPrevious => covariances[i].clone(),
            InfeasiblePolicy::Zero => TransmitCovariance::zeros(channels.mt(), p),
            InfeasiblePolicy::EnergyBeam => TransmitCovariance::energy_beam(g, p),
        }
    };
    Ok(BestResponse {
        covariance,
        gamma_i,
        solution,
    })
}

/// Starting profile selected by the configuration.
pub fn initial_covariances<T: Real>(config: &ScenarioConfig) -> Vec<TransmitCovariance<T>> {
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed ^ 0x005e_ed0f_1a17);
    (0..config.k)
        .map(|i| {
            let p = T::lit(config.power_limits[i]);
            match config.initial_strategy {
                InitialStrategy::Uniform => TransmitCovariance::uniform(config.mt, p),
                InitialStrategy::Zero => TransmitCovariance::zeros(config.mt, p),
                InitialStrategy::RandomPsd => random_psd(&mut rng, config.mt, p),
            }
        })
        .collect()
}

fn random_psd<T: Real>(rng: &mut ChaCha20Rng, m: usize, p: T) -> TransmitCovariance<T> {
    let a = CMat::<T>::from_fn(m, m, |_, _| {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        nalgebra::Complex::new(T::lit(re), T::lit(im))
    });
    let q = &a * a.adjoint();
    let tr = linalg::trace_re(&q);
    TransmitCovariance::new(q.map(|z| z * (p / tr)), p).expect("scaled Gram matrix is a valid covariance")
}

type Fingerprint = (Vec<i64>, i64);

fn fingerprint<T: Real>(state: &GameState<T>) -> Fingerprint {
    let q = |x: T| (x.to_f64_lossy() * 1e6).round() as i64;
    (state.rates.iter().map(|&r| q(r)).collect(), q(state.energy_total))
}

/// Smallest period `2 <= p <= window` such that the last `2p` round
/// fingerprints repeat with period `p` and the sum rate swings by more than
/// `1e-5` within a period (a near-constant sequence is slow convergence, not
/// a cycle).
fn detect_cycle<T: Real>(fps: &[Fingerprint], sums: &[T], window: usize) -> Option<usize> {
    let n = fps.len();
    for p in 2..=window {
        if n < 3 * p {
            break;
        }
        let periodic = (0..2 * p).all(|j| fps[n - 1 - j] == fps[n - 1 - j - p]);
        if !periodic {
            continue;
        }
        let recent = &sums[n - p..];
        let hi = recent.iter().copied().fold(recent[0], |a, b| a.max(b));
        let lo = recent.iter().copied().fold(recent[0], |a, b| a.min(b));
        if (hi - lo).to_f64_lossy() > 1e-5 {
            return Some(p);
        }
    }
    None
}

/// Sequential best-response dynamics from the configured initial profile.
///
/// One round updates every user once in `update_order`. The run stops as
/// converged-NE when no covariance moved by `eq_tol` (Frobenius) during a
/// round, as cycling when round fingerprints (rates and energy rounded to
/// `1e-6`) become periodic, and as stalled after `max_iters` rounds.
pub fn run_dynamics<T: Real>(channels: &ChannelSet<T>, config: &ScenarioConfig) -> Result<GameTrace<T>> {
    run_dynamics_from(channels, config, initial_covariances(config))
}

pub fn run_dynamics_from<T: Real>(
    channels: &ChannelSet<T>,
    config: &ScenarioConfig,
    initial: Vec<TransmitCovariance<T>>,
) -> Result<GameTrace<T>> {
    let order = config.update_order();
    let eq_tol = T::lit(config.tolerances.eq_tol);
    let mut state = GameState::new(initial, channels)?;
    let mut trace = GameTrace {
        snapshots: vec![state.clone()],
        updates: Vec::new(),
        classification: Classification::Running,
        cycle_period: None,
    };
    let mut fps: Vec<Fingerprint> = vec![fingerprint(&state)];
    let mut sums = vec![state.sum_rate()];
    let mut classification = Classification::Stalled;

    for round in 1..=config.tolerances.max_iters {
        let mut max_change = T::zero();
        for &i in &order {
            let br = best_response(i, &state.covariances, channels, config)?;
            let change = br.covariance.distance(&state.covariances[i]);
            max_change = max_change.max(change);
            state.covariances[i] = br.covariance;
            state.iteration = round;
            state.refresh(channels)?;
            trace.updates.push(UpdateRecord {
                iter: round,
                user: i,
                gamma_i: br.gamma_i,
                route: br.solution.route,
                infeasible: !br.solution.feasible,
                fallback: br.solution.fell_back(),
                multiple_roots: br.solution.multiple_roots,
                change,
            });
            trace.snapshots.push(state.clone());
        }
        if max_change < eq_tol {
            classification = Classification::ConvergedNe;
            break;
        }
        fps.push(fingerprint(&state));
        sums.push(state.sum_rate());
        if let Some(p) = detect_cycle(&fps, &sums, config.cycle_window) {
            classification = Classification::Cycling;
            trace.cycle_period = Some(p);
            break;
        }
    }
    trace.classification = classification;
    if let Some(last) = trace.snapshots.last_mut() {
        last.classification = classification;
    }
    Ok(trace)
}

/// Largest rate gain any single user obtains by deviating to its best
/// response, `max_i (r_i(BR_i) - r_i(Q))`.
pub fn verify_ne<T: Real>(
    covariances: &[TransmitCovariance<T>],
    channels: &ChannelSet<T>,
    config: &ScenarioConfig,
) -> Result<T> {
    let mut worst = T::min_value().unwrap_or_else(|| -T::one());
    for i in 0..channels.k() {
        let current = info_rate(i, covariances, channels)?;
        let br = best_response(i, covariances, channels, config)?;
        let mut deviated = covariances.to_vec();
        deviated[i] = br.covariance;
        let gain = info_rate(i, &deviated, channels)? - current;
        worst = worst.max(gain);
    }
    Ok(worst)
}

/// Count of each classification in a batch of traces.
pub fn classification_counts<T: Real>(traces: &[GameTrace<T>]) -> HashMap<Classification, usize> {
    let mut out = HashMap::new();
    for t in traces {
        *out.entry(t.classification).or_insert(0) += 1;
    }
    out
}

/// Largest Frobenius distance between corresponding covariances.
pub fn profile_distance<T: Real>(a: &[TransmitCovariance<T>], b: &[TransmitCovariance<T>]) -> T {
    a.iter()
        .zip(b)
        .map(|(x, y)| frobenius(&(x.matrix() - y.matrix())))
        .fold(T::zero(), |m, d| m.max(d))
}
