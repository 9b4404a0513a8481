//! Cooperative game. Rates are linearized in the interference around an
//! expansion point, which makes the sum utility separable across users; the
//! users then bargain over a common price `lambda` paid per unit of energy
//! delivered to the harvester.

use serde::Serialize;

use crate::config::ScenarioConfig;
use crate::error::{Error, Result};
use crate::linalg::{self, hermitize, outer, project_trace_capped_psd, trace_product_re};
use crate::model::{all_rates, contributions, rate_given_interference, ChannelSet, TransmitCovariance};
use crate::noncoop::GAME_HARVESTER;
use crate::scalar::{CMat, Real};
use crate::waterfill::{assemble_covariance, solve_p2, WaterfillSolution, WhitenedProblem};

/// Linearization point of all users' rates.
#[derive(Debug, Clone)]
pub struct ExpansionPoint<T: Real> {
    pub q_tilde: Vec<TransmitCovariance<T>>,
    /// `R~_i = sum_{j != i} H_ij Q~_j H_ij^H + I`.
    pub r_tilde: Vec<CMat<T>>,
    /// `A_i = R~_i^{-1} - (R~_i + H_ii Q~_i H_ii^H)^{-1}`.
    pub a_matrices: Vec<CMat<T>>,
    /// `B_i = sum_{j != i} H_ji^H A_j H_ji`.
    pub b_matrices: Vec<CMat<T>>,
    /// `c_i = Tr(A_i R~_i)`.
    pub constants: Vec<T>,
    /// `L_i^{-1} H_ii` with `R~_i = L_i L_i^H`.
    pub whitened: Vec<CMat<T>>,
}

/// Per-user starting point: the local problem with no interference and an
/// even share `Gamma / K` of the requirement.
#[derive(Debug, Clone)]
pub struct InitOutcome<T: Real> {
    pub covariance: TransmitCovariance<T>,
    pub solution: WaterfillSolution<T>,
}

impl<T: Real> InitOutcome<T> {
    /// The share was unattainable and the energy beam was used instead.
    pub fn flagged(&self) -> bool {
        !self.solution.feasible
    }
}

pub fn solve_expansion_init<T: Real>(
    i: usize,
    channels: &ChannelSet<T>,
    power_limit: T,
    share: T,
) -> Result<InitOutcome<T>> {
    solve_expansion_init_at(i, channels, power_limit, share, GAME_HARVESTER)
}

/// [`solve_expansion_init`] against harvester `l`.
pub fn solve_expansion_init_at<T: Real>(
    i: usize,
    channels: &ChannelSet<T>,
    power_limit: T,
    share: T,
    l: usize,
) -> Result<InitOutcome<T>> {
    if i >= channels.k() {
        return Err(Error::UserIndex { index: i, k: channels.k() });
    }
    let h = channels.user_channel(i);
    let g = channels.harvester(l, i);
    let r = linalg::identity(channels.mr());
    let problem = crate::waterfill::whiten(h, &r, g, power_limit, share)?;
    let solution = solve_p2(&problem, T::tol(1e-8));
    let covariance = if solution.feasible {
        assemble_covariance(&problem, &solution)
    } else {
        TransmitCovariance::energy_beam(g, power_limit)
    };
    Ok(InitOutcome { covariance, solution })
}

pub fn build_expansion<T: Real>(
    channels: &ChannelSet<T>,
    q_tilde: &[TransmitCovariance<T>],
) -> Result<ExpansionPoint<T>> {
    let k = channels.k();
    if q_tilde.len() != k {
        return Err(Error::DimensionMismatch(format!("{} covariances for {k} users", q_tilde.len())));
    }
    let mut r_tilde = Vec::with_capacity(k);
    let mut a_matrices = Vec::with_capacity(k);
    let mut constants = Vec::with_capacity(k);
    let mut whitened = Vec::with_capacity(k);
    for i in 0..k {
        let r = crate::model::interference_plus_noise(i, q_tilde, channels)?;
        let h = channels.user_channel(i);
        let total = hermitize(&(&r + h * q_tilde[i].matrix() * h.adjoint()));
        let a = hermitize(&(linalg::inverse_pd(&r)? - linalg::inverse_pd(&total)?));
        let chol = linalg::cholesky(&r, "expansion interference matrix")?;
        let w = chol
            .l_dirty()
            .solve_lower_triangular(h)
            .ok_or(Error::NotPositiveDefinite("expansion interference matrix"))?;
        constants.push(trace_product_re(&a, &r));
        whitened.push(w);
        a_matrices.push(a);
        r_tilde.push(r);
    }
    let b_matrices = (0..k)
        .map(|i| {
            let mut b = CMat::zeros(channels.mt(), channels.mt());
            for j in (0..k).filter(|&j| j != i) {
                let h = channels.link(j, i);
                b += h.adjoint() * &a_matrices[j] * h;
            }
            hermitize(&b)
        })
        .collect();
    Ok(ExpansionPoint {
        q_tilde: q_tilde.to_vec(),
        r_tilde,
        a_matrices,
        b_matrices,
        constants,
        whitened,
    })
}

/// `log|I + R~^{-1} H Q_i H^H| - Tr(A_i R_i) + Tr(A_i R~_i)`, with `R_i`
/// built from the interferers in `covariances` (entry `i` is ignored).
pub fn approx_rate<T: Real>(
    i: usize,
    q_i: &TransmitCovariance<T>,
    covariances: &[TransmitCovariance<T>],
    channels: &ChannelSet<T>,
    expansion: &ExpansionPoint<T>,
) -> Result<T> {
    let r = crate::model::interference_plus_noise(i, covariances, channels)?;
    let base = rate_given_interference(channels.user_channel(i), q_i.matrix(), &expansion.r_tilde[i])?;
    Ok(base - trace_product_re(&expansion.a_matrices[i], &r) + expansion.constants[i])
}

/// `log|I + R~^{-1} H Q_i H^H| - Tr(B_i Q_i)`.
pub fn utility<T: Real>(
    i: usize,
    q_i: &TransmitCovariance<T>,
    channels: &ChannelSet<T>,
    expansion: &ExpansionPoint<T>,
) -> Result<T> {
    let base = rate_given_interference(channels.user_channel(i), q_i.matrix(), &expansion.r_tilde[i])?;
    Ok(base - trace_product_re(&expansion.b_matrices[i], q_i.matrix()))
}

/// `f(Q) = log|I + W Q W^H| + Re Tr(C Q)` with `W` the whitened channel and
/// `C` the reward matrix minus the interference price.
#[derive(Debug, Clone)]
pub struct LocalObjective<T: Real> {
    pub whitened: CMat<T>,
    pub linear: CMat<T>,
}

impl<T: Real> LocalObjective<T> {
    /// Objective of user `i` with reward matrix `reward` (e.g. `lambda g g^H`).
    pub fn new(i: usize, expansion: &ExpansionPoint<T>, reward: &CMat<T>) -> Self {
        Self {
            whitened: expansion.whitened[i].clone(),
            linear: hermitize(&(reward - &expansion.b_matrices[i])),
        }
    }

    fn gram(&self, q: &CMat<T>) -> CMat<T> {
        let w = &self.whitened;
        let mut m = hermitize(&(w * q * w.adjoint()));
        for d in 0..m.nrows() {
            m[(d, d)].re += T::one();
        }
        m
    }

    pub fn value(&self, q: &CMat<T>) -> T {
        let logdet = linalg::logdet_pd(&self.gram(q)).unwrap_or_else(|_| T::min_value().unwrap_or_else(T::zero));
        logdet + trace_product_re(&self.linear, q)
    }

    /// Value and gradient `W^H (I + W Q W^H)^{-1} W + C`.
    pub fn value_and_gradient(&self, q: &CMat<T>) -> (T, CMat<T>) {
        let m = self.gram(q);
        let chol = linalg::cholesky(&m, "local objective").expect("I + W Q W^H is positive definite");
        let logdet = linalg::logdet_from_cholesky(&chol);
        let x = chol.solve(&self.whitened);
        let grad = hermitize(&(self.whitened.adjoint() * x + &self.linear));
        (logdet + trace_product_re(&self.linear, q), grad)
    }
}

/// Result of a projected-gradient local solve.
#[derive(Debug, Clone)]
pub struct LocalSolution<T: Real> {
    pub covariance: TransmitCovariance<T>,
    pub objective: T,
    pub iterations: usize,
    /// Final norm of the unit-step gradient map.
    pub gradient_map: T,
    pub converged: bool,
}

const ARMIJO: f64 = 1e-4;
const SHRINK: f64 = 0.5;
const MAX_HALVINGS: usize = 60;

/// Projected gradient ascent of `objective` over `{Q >= 0, Tr Q <= P}`.
///
/// Each iteration backtracks from step 1 by factors of 0.5 until the Armijo
/// condition with constant `1e-4` holds. Stops when the unit-step gradient
/// map `||Proj(Q + grad) - Q||_F` is at most `tol`; a line search that cannot
/// make progress ends the run, counted as converged only if the gradient map
/// is already within `100 tol`.
pub fn maximize_local<T: Real>(
    objective: &LocalObjective<T>,
    start: &CMat<T>,
    power_limit: T,
    tol: T,
    max_iters: usize,
) -> LocalSolution<T> {
    let mut q = project_trace_capped_psd(start, power_limit);
    let (mut f, mut g) = objective.value_and_gradient(&q);
    let mut gm = linalg::frobenius(&(project_trace_capped_psd(&(&q + &g), power_limit) - &q));
    let mut iterations = 0;
    let mut converged = gm <= tol;
    while !converged && iterations < max_iters {
        let mut step = T::one();
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let trial = project_trace_capped_psd(&(&q + g.map(|z| z * step)), power_limit);
            let d = &trial - &q;
            let gain = trace_product_re(&g, &d);
            let ft = objective.value(&trial);
            if ft >= f + T::lit(ARMIJO) * gain {
                accepted = Some(trial);
                break;
            }
            step *= T::lit(SHRINK);
        }
        iterations += 1;
        match accepted {
            Some(trial) => {
                q = trial;
                let (fv, gv) = objective.value_and_gradient(&q);
                f = fv;
                g = gv;
                gm = linalg::frobenius(&(project_trace_capped_psd(&(&q + &g), power_limit) - &q));
                converged = gm <= tol;
            }
            None => {
                converged = gm <= tol * T::lit(100.0);
                break;
            }
        }
    }
    LocalSolution {
        covariance: TransmitCovariance::from_trusted(q, power_limit),
        objective: f,
        iterations,
        gradient_map: gm,
        converged,
    }
}

/// Maximizes `utility_i(Q) + lambda g_i^H Q g_i` over the user's feasible set.
pub fn solve_local<T: Real>(
    i: usize,
    lambda: T,
    expansion: &ExpansionPoint<T>,
    channels: &ChannelSet<T>,
    power_limit: T,
    tol: T,
    max_iters: usize,
    start: Option<&CMat<T>>,
) -> LocalSolution<T> {
    let reward = outer(channels.harvester(GAME_HARVESTER, i)).map(|z| z * lambda);
    let objective = LocalObjective::new(i, expansion, &reward);
    let start = start.cloned().unwrap_or_else(|| expansion.q_tilde[i].matrix().clone());
    maximize_local(&objective, &start, power_limit, tol, max_iters)
}

// ---------------------------------------------------------------------------
// Bargaining.

/// Message counters for the exchanges the protocol needs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct MessageBus {
    /// `A_i` broadcasts (one per ordered pair of users).
    pub a_matrices: u64,
    /// Cross-channel reports `H_ij`.
    pub channels: u64,
    /// Energy-contribution broadcasts `beta_i`.
    pub betas: u64,
}

impl MessageBus {
    pub fn total(&self) -> u64 {
        self.a_matrices + self.channels + self.betas
    }

    fn broadcast_all(k: usize) -> u64 {
        (k * k.saturating_sub(1)) as u64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualState<T: Real> {
    pub lambda_min: T,
    pub lambda_max: T,
    pub lambda: T,
    pub z: usize,
    pub contributions: Vec<T>,
}

impl<T: Real> DualState<T> {
    /// Bisection rule applied by every player to the broadcast contributions.
    fn update(&mut self, betas: &[T], gamma: T) {
        self.contributions = betas.to_vec();
        let total = betas.iter().copied().fold(T::zero(), |a, b| a + b);
        if total < gamma {
            self.lambda_min = self.lambda;
        } else {
            self.lambda_max = self.lambda;
        }
        self.z += 1;
        self.lambda = self.lambda_min + (self.lambda_max - self.lambda_min) * T::lit(0.5);
    }
}

/// One row of the cooperative trace.
#[derive(Debug, Clone, Serialize)]
#[serde(bound = "T: Serialize")]
pub struct CoopRow<T: Real> {
    pub round: usize,
    pub z: usize,
    pub lambda: T,
    pub betas: Vec<T>,
    pub sum_beta: T,
    pub rates: Vec<T>,
    pub sum_rate: T,
    pub msg_count: u64,
}

/// Why a bargain ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BargainStatus {
    /// The requirement is met at `lambda = 0`.
    Slack,
    /// The bracket shrank below `lambda_tol`.
    Converged,
    /// `max_bisection` probes were used before the bracket closed.
    IterationLimit,
    /// No price up to `lambda_cap` met the requirement.
    Unreachable,
}

#[derive(Debug, Clone)]
pub struct BargainOutcome<T: Real> {
    pub lambda: T,
    pub covariances: Vec<TransmitCovariance<T>>,
    pub rows: Vec<CoopRow<T>>,
    pub status: BargainStatus,
    pub messages: MessageBus,
    /// Prices probed after the `lambda = 0` check (doubling and bisection).
    pub probes: usize,
    /// Bisection steps after the bracket was found.
    pub bisection_steps: usize,
    pub final_bracket: (T, T),
    /// Every player derived the same price sequence.
    pub consensus: bool,
    /// Sum contribution was monotone in price over all probes.
    pub monotone: bool,
    /// Some local solve hit its iteration cap.
    pub local_nonconverged: bool,
}

impl<T: Real> BargainOutcome<T> {
    pub fn sum_beta(&self, channels: &ChannelSet<T>) -> T {
        contributions(&self.covariances, channels.harvester_row(GAME_HARVESTER))
            .into_iter()
            .fold(T::zero(), |a, b| a + b)
    }

    pub fn flagged(&self) -> bool {
        matches!(self.status, BargainStatus::Unreachable | BargainStatus::IterationLimit)
            || !self.consensus
            || self.local_nonconverged
    }
}

struct Probe<T: Real> {
    covariances: Vec<TransmitCovariance<T>>,
    betas: Vec<T>,
    total: T,
    nonconverged: bool,
}

/// Bisection on the common price.
///
/// `lambda = 0` is tried first; if the requirement already holds there the
/// price is zero. Otherwise `lambda_max` doubles from 1 until the requirement
/// holds (up to `lambda_cap`), after which the bracket is halved until it is
/// narrower than `lambda_tol`. The returned strategies are those of the last
/// feasible probe (`lambda_max`), so the requirement holds at the result.
pub fn bargain<T: Real>(
    channels: &ChannelSet<T>,
    expansion: &ExpansionPoint<T>,
    config: &ScenarioConfig,
    round: usize,
    warm: Option<&[TransmitCovariance<T>]>,
) -> Result<BargainOutcome<T>> {
    let k = channels.k();
    let gamma = T::lit(config.gamma());
    let tol = T::lit(config.tolerances.grad_tol);
    let max_local = config.tolerances.local_max_iters;
    let lambda_tol = T::lit(config.bargaining.lambda_tol);
    let cap = T::lit(config.bargaining.lambda_cap);
    let powers: Vec<T> = config.power_limits.iter().map(|&p| T::lit(p)).collect();
    let row = channels.harvester_row(GAME_HARVESTER);

    let mut messages = MessageBus {
        a_matrices: MessageBus::broadcast_all(k),
        channels: MessageBus::broadcast_all(k),
        betas: 0,
    };
    let mut rows = Vec::new();
    let mut current: Vec<CMat<T>> = match warm {
        Some(w) => w.iter().map(|c| c.matrix().clone()).collect(),
        None => expansion.q_tilde.iter().map(|c| c.matrix().clone()).collect(),
    };
    let mut history: Vec<(T, T)> = Vec::new();
    let mut any_nonconverged = false;

    let probe = |lambda: T, z: usize, current: &mut Vec<CMat<T>>, messages: &mut MessageBus, rows: &mut Vec<CoopRow<T>>| -> Result<Probe<T>> {
        let sols: Vec<LocalSolution<T>> = (0..k)
            .map(|i| solve_local(i, lambda, expansion, channels, powers[i], tol, max_local, Some(&current[i])))
            .collect();
        let covariances: Vec<TransmitCovariance<T>> = sols.iter().map(|s| s.covariance.clone()).collect();
        for (slot, c) in current.iter_mut().zip(&covariances) {
            *slot = c.matrix().clone();
        }
        let betas = contributions(&covariances, row);
        let total = betas.iter().copied().fold(T::zero(), |a, b| a + b);
        messages.betas += MessageBus::broadcast_all(k);
        let rates = all_rates(&covariances, channels)?;
        rows.push(CoopRow {
            round,
            z,
            lambda,
            betas: betas.clone(),
            sum_beta: total,
            sum_rate: rates.iter().copied().fold(T::zero(), |a, b| a + b),
            rates,
            msg_count: messages.total(),
        });
        Ok(Probe {
            nonconverged: sols.iter().any(|s| !s.converged),
            covariances,
            betas,
            total,
        })
    };

    let first = probe(T::zero(), 0, &mut current, &mut messages, &mut rows)?;
    any_nonconverged |= first.nonconverged;
    history.push((T::zero(), first.total));
    if first.total >= gamma {
        return Ok(BargainOutcome {
            lambda: T::zero(),
            covariances: first.covariances,
            rows,
            status: BargainStatus::Slack,
            messages,
            probes: 0,
            bisection_steps: 0,
            final_bracket: (T::zero(), T::zero()),
            consensus: true,
            monotone: true,
            local_nonconverged: any_nonconverged,
        });
    }

    // Each player keeps its own copy of the dual state.
    let mut duals: Vec<DualState<T>> = (0..k)
        .map(|_| DualState {
            lambda_min: T::zero(),
            lambda_max: T::one(),
            lambda: T::one(),
            z: 1,
            contributions: first.betas.clone(),
        })
        .collect();
    let mut probes = 0;
    let mut best: Option<Probe<T>> = None;
    let mut status = BargainStatus::Converged;

    // Doubling search for lambda_max.
    loop {
        let lambda = duals[0].lambda_max;
        let p = probe(lambda, duals[0].z, &mut current, &mut messages, &mut rows)?;
        probes += 1;
        any_nonconverged |= p.nonconverged;
        history.push((lambda, p.total));
        for d in duals.iter_mut() {
            d.contributions = p.betas.clone();
            d.z += 1;
        }
        if p.total >= gamma {
            best = Some(p);
            for d in duals.iter_mut() {
                d.lambda = d.lambda_min + (d.lambda_max - d.lambda_min) * T::lit(0.5);
            }
            break;
        }
        if lambda * T::lit(2.0) > cap {
            status = BargainStatus::Unreachable;
            break;
        }
        for d in duals.iter_mut() {
            d.lambda_min = d.lambda_max;
            d.lambda_max *= T::lit(2.0);
            d.lambda = d.lambda_max;
        }
    }

    let mut bisection_steps = 0;
    if status != BargainStatus::Unreachable {
        while duals[0].lambda_max - duals[0].lambda_min >= lambda_tol {
            if bisection_steps >= config.bargaining.max_bisection {
                status = BargainStatus::IterationLimit;
                break;
            }
            let lambda = duals[0].lambda;
            let p = probe(lambda, duals[0].z, &mut current, &mut messages, &mut rows)?;
            probes += 1;
            bisection_steps += 1;
            any_nonconverged |= p.nonconverged;
            history.push((lambda, p.total));
            for d in duals.iter_mut() {
                d.update(&p.betas, gamma);
            }
            if p.total >= gamma {
                best = Some(p);
            }
        }
    }
    let consensus = duals.windows(2).all(|w| w[0] == w[1]);
    let monotone = is_monotone(&history, gamma);

    let (lambda, covariances) = match best {
        Some(p) => (duals[0].lambda_max, p.covariances),
        None => {
            let last = current
                .iter()
                .zip(&powers)
                .map(|(m, &p)| TransmitCovariance::from_trusted(m.clone(), p))
                .collect();
            (duals[0].lambda_max, last)
        }
    };
    Ok(BargainOutcome {
        lambda,
        covariances,
        rows,
        status,
        messages,
        probes,
        bisection_steps,
        final_bracket: (duals[0].lambda_min, duals[0].lambda_max),
        consensus,
        monotone,
        local_nonconverged: any_nonconverged,
    })
}

fn is_monotone<T: Real>(history: &[(T, T)], gamma: T) -> bool {
    let mut sorted = history.to_vec();
    sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
    let slack = T::tol(1e-6) * gamma.abs().max(T::one());
    sorted.windows(2).all(|w| w[1].1 >= w[0].1 - slack)
}

/// Per-round summary of the outer refinement.
#[derive(Debug, Clone, Serialize)]
#[serde(bound = "T: Serialize")]
pub struct RoundSummary<T: Real> {
    pub round: usize,
    pub lambda: T,
    pub status: BargainStatus,
    /// Exact rates of the bargained strategies.
    pub rates: Vec<T>,
    pub sum_rate: T,
    pub sum_beta: T,
    pub messages: u64,
    pub probes: usize,
    pub bracket_width: T,
}

#[derive(Debug, Clone)]
pub struct CoopTrace<T: Real> {
    pub rows: Vec<CoopRow<T>>,
    pub rounds: Vec<RoundSummary<T>>,
    pub outcomes: Vec<BargainOutcome<T>>,
    /// Users whose initial share was unattainable.
    pub init_flagged: Vec<usize>,
    pub final_covariances: Vec<TransmitCovariance<T>>,
}

impl<T: Real> CoopTrace<T> {
    pub fn final_round(&self) -> &RoundSummary<T> {
        self.rounds.last().expect("at least one round")
    }

    pub fn flagged(&self) -> bool {
        self.outcomes.iter().any(|o| o.flagged())
    }

    pub fn total_messages(&self) -> u64 {
        self.outcomes.iter().map(|o| o.messages.total()).sum()
    }

    /// Columns `round, z, lambda, beta_1..K, sum_beta, rate_1..K, sum_rate,
    /// msg_count`, where `msg_count` is cumulative over the whole run.
    pub fn to_csv(&self) -> String {
        let k = self.final_covariances.len();
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["round".to_string(), "z".into(), "lambda".into()];
        header.extend((1..=k).map(|i| format!("beta_{i}")));
        header.push("sum_beta".into());
        header.extend((1..=k).map(|i| format!("rate_{i}")));
        header.extend(["sum_rate".to_string(), "msg_count".into()]);
        w.write_record(&header).expect("in-memory write");
        let mut offset = 0u64;
        let mut last_round = 0usize;
        let mut round_total = 0u64;
        for r in &self.rows {
            if r.round != last_round {
                offset += round_total;
                last_round = r.round;
            }
            round_total = r.msg_count;
            let mut rec = vec![r.round.to_string(), r.z.to_string(), r.lambda.to_string()];
            rec.extend(r.betas.iter().map(|b| b.to_string()));
            rec.push(r.sum_beta.to_string());
            rec.extend(r.rates.iter().map(|x| x.to_string()));
            rec.push(r.sum_rate.to_string());
            rec.push((offset + r.msg_count).to_string());
            w.write_record(&rec).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }
}

/// Expansion point from the per-user initial problems.
pub fn initial_expansion_strategies<T: Real>(
    channels: &ChannelSet<T>,
    config: &ScenarioConfig,
) -> Result<(Vec<TransmitCovariance<T>>, Vec<usize>)> {
    let k = channels.k();
    let share = T::lit(config.gamma() / k as f64);
    let mut covs = Vec::with_capacity(k);
    let mut flagged = Vec::new();
    for i in 0..k {
        let init = solve_expansion_init(i, channels, T::lit(config.power_limits[i]), share)?;
        if init.flagged() {
            flagged.push(i);
        }
        covs.push(init.covariance);
    }
    Ok((covs, flagged))
}

/// Alternates expansion and bargaining for `rounds` rounds, moving the
/// expansion point to each bargaining solution.
pub fn outer_refine<T: Real>(channels: &ChannelSet<T>, config: &ScenarioConfig, rounds: usize) -> Result<CoopTrace<T>> {
    if rounds == 0 {
        return Err(Error::InvalidConfig("outer_rounds must be at least 1".into()));
    }
    let (mut q_tilde, init_flagged) = initial_expansion_strategies(channels, config)?;
    let mut trace = CoopTrace {
        rows: Vec::new(),
        rounds: Vec::new(),
        outcomes: Vec::new(),
        init_flagged,
        final_covariances: Vec::new(),
    };
    for round in 1..=rounds {
        let expansion = build_expansion(channels, &q_tilde)?;
        let outcome = bargain(channels, &expansion, config, round, None)?;
        let rates = all_rates(&outcome.covariances, channels)?;
        trace.rounds.push(RoundSummary {
            round,
            lambda: outcome.lambda,
            status: outcome.status,
            sum_rate: rates.iter().copied().fold(T::zero(), |a, b| a + b),
            rates,
            sum_beta: outcome.sum_beta(channels),
            messages: outcome.messages.total(),
            probes: outcome.probes,
            bracket_width: outcome.final_bracket.1 - outcome.final_bracket.0,
        });
        trace.rows.extend(outcome.rows.iter().cloned());
        q_tilde = outcome.covariances.clone();
        trace.outcomes.push(outcome);
    }
    trace.final_covariances = q_tilde;
    Ok(trace)
}

/// An expansion point whose strategies are the exact water-filling loads of
/// a whitened problem (used by tests of the reductions).
pub fn waterfill_reference<T: Real>(problem: &WhitenedProblem<T>) -> TransmitCovariance<T> {
    assemble_covariance(problem, &solve_p2(problem, T::tol(1e-8)))
}
