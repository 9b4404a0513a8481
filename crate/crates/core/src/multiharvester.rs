//! Several harvesters, each with its own requirement and price. Users solve
//! their local problems against the combined reward `sum_l lambda_l g_li g_li^H`
//! and the prices follow a projected subgradient method on the dual.

use std::collections::BTreeSet;

use serde::Serialize;

use crate::config::{EventAction, HarvesterEvent, ScenarioConfig, StepSchedule};
use crate::coop::{build_expansion, maximize_local, solve_expansion_init_at, utility, ExpansionPoint, LocalObjective, LocalSolution};
use crate::error::{Error, Result};
use crate::linalg::outer;
use crate::model::{all_rates, ChannelSet, TransmitCovariance};
use crate::scalar::{CMat, Real};

/// Harvester as recorded in the event log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AppliedEvent {
    pub iter: usize,
    pub harvester_id: usize,
    pub action: EventAction,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HarvesterRegistry {
    active: BTreeSet<usize>,
    /// Requirement per harvester id (all ids, active or not).
    requirements: Vec<f64>,
    pending: Vec<HarvesterEvent>,
    log: Vec<AppliedEvent>,
}

impl HarvesterRegistry {
    /// Every harvester starts active except those whose first scripted event
    /// is a join.
    pub fn from_config(config: &ScenarioConfig) -> Result<Self> {
        let mut pending = config.events.clone();
        pending.sort_by_key(|e| e.iter);
        let mut active = BTreeSet::new();
        for id in 0..config.l {
            let first = pending.iter().find(|e| e.harvester_id == id);
            if !matches!(first, Some(e) if e.action == EventAction::Join) {
                active.insert(id);
            }
        }
        let reg = Self {
            active,
            requirements: config.energy_requirements.clone(),
            pending,
            log: Vec::new(),
        };
        if reg.active.is_empty() {
            return Err(Error::InvalidConfig("no harvester is active at the start".into()));
        }
        Ok(reg)
    }

    pub fn active(&self) -> Vec<usize> {
        self.active.iter().copied().collect()
    }

    pub fn is_active(&self, id: usize) -> bool {
        self.active.contains(&id)
    }

    pub fn requirement(&self, id: usize) -> f64 {
        self.requirements[id]
    }

    pub fn len(&self) -> usize {
        self.requirements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.requirements.is_empty()
    }

    pub fn log(&self) -> &[AppliedEvent] {
        &self.log
    }

    /// Iteration of the next scripted event, if any.
    pub fn next_event_iter(&self) -> Option<usize> {
        self.pending.first().map(|e| e.iter)
    }

    /// Applies all events scheduled at or before `iter`; returns how many.
    pub fn apply_due(&mut self, iter: usize) -> usize {
        let mut n = 0;
        while self.pending.first().is_some_and(|e| e.iter <= iter) {
            let e = self.pending.remove(0);
            match e.action {
                EventAction::Join => {
                    if let Some(g) = e.gamma {
                        self.requirements[e.harvester_id] = g;
                    }
                    self.active.insert(e.harvester_id);
                }
                EventAction::Leave => {
                    self.active.remove(&e.harvester_id);
                }
            }
            self.log.push(AppliedEvent {
                iter,
                harvester_id: e.harvester_id,
                action: e.action,
                gamma: self.requirements[e.harvester_id],
            });
            n += 1;
        }
        n
    }
}

/// Prices (indexed by harvester id; inactive entries are zero and unused)
/// and the contributions observed at them.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiDualState<T: Real> {
    pub lambdas: Vec<T>,
    pub step_schedule: StepSchedule,
    /// `contributions[l][i] = g_li^H Q_i g_li`.
    pub contributions: Vec<Vec<T>>,
    /// Per-harvester sensitivity used by the curvature-scaled schedule.
    pub curvature: Vec<T>,
}

impl<T: Real> MultiDualState<T> {
    pub fn new(l: usize, k: usize, schedule: StepSchedule) -> Self {
        Self {
            lambdas: vec![T::zero(); l],
            step_schedule: schedule,
            contributions: vec![vec![T::zero(); k]; l],
            curvature: vec![T::one(); l],
        }
    }

    /// Step for harvester `l` at phase step `z`.
    pub fn step(&self, l: usize, z: usize, max_gamma: T) -> T {
        match self.step_schedule {
            StepSchedule::Harmonic { a, b } => {
                let a = a.map(T::lit).unwrap_or_else(|| T::one() / max_gamma.max(T::tol(1e-12)));
                a / (T::lit(b) + T::lit(z as f64))
            }
            StepSchedule::CurvatureScaled { gain, b } => {
                let b = T::lit(b);
                T::lit(gain) * b / (self.curvature[l] * (b + T::lit(z as f64)))
            }
        }
    }
}

/// `lambda_l <- max(0, lambda_l - alpha_l s_l)` on the active harvesters,
/// with `s_l = sum_i beta_li - Gamma_l`.
pub fn subgradient_step<T: Real>(
    state: &MultiDualState<T>,
    contributions: &[Vec<T>],
    requirements: &[T],
    active: &[usize],
    z: usize,
) -> MultiDualState<T> {
    let max_gamma = active
        .iter()
        .map(|&l| requirements[l])
        .fold(T::zero(), |a, b| a.max(b));
    let mut next = state.clone();
    next.contributions = contributions.to_vec();
    for &l in active {
        let s = contributions[l].iter().copied().fold(T::zero(), |a, b| a + b) - requirements[l];
        let updated = state.lambdas[l] - state.step(l, z, max_gamma) * s;
        next.lambdas[l] = updated.max(T::zero());
    }
    next
}

fn reward_matrix<T: Real>(i: usize, lambdas: &[T], active: &[usize], channels: &ChannelSet<T>) -> CMat<T> {
    let mut w = CMat::zeros(channels.mt(), channels.mt());
    for &l in active {
        w += outer(channels.harvester(l, i)).map(|z| z * lambdas[l]);
    }
    w
}

/// Maximizes `utility_i(Q) + sum_l lambda_l g_li^H Q g_li`.
#[allow(clippy::too_many_arguments)]
pub fn solve_local_multi<T: Real>(
    i: usize,
    lambdas: &[T],
    active: &[usize],
    expansion: &ExpansionPoint<T>,
    channels: &ChannelSet<T>,
    power_limit: T,
    tol: T,
    max_iters: usize,
    start: Option<&CMat<T>>,
) -> LocalSolution<T> {
    let reward = reward_matrix(i, lambdas, active, channels);
    let objective = LocalObjective::new(i, expansion, &reward);
    let start = start.cloned().unwrap_or_else(|| expansion.q_tilde[i].matrix().clone());
    maximize_local(&objective, &start, power_limit, tol, max_iters)
}

#[derive(Debug, Clone, Serialize)]
#[serde(bound = "T: Serialize")]
pub struct MultiRow<T: Real> {
    pub iter: usize,
    /// `None` for harvesters not active at this iteration.
    pub lambdas: Vec<Option<T>>,
    pub betas: Vec<Option<Vec<T>>>,
    pub dual_value: T,
    pub sum_utility: T,
    pub sum_rate: T,
    pub feasible: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MultiStatus {
    Converged,
    IterationLimit,
}

#[derive(Debug, Clone)]
pub struct MultiTrace<T: Real> {
    pub rows: Vec<MultiRow<T>>,
    pub status: MultiStatus,
    pub final_covariances: Vec<TransmitCovariance<T>>,
    pub final_lambdas: Vec<T>,
    pub final_active: Vec<usize>,
    pub events: Vec<AppliedEvent>,
    /// The dual value never fell below the best feasible primal value.
    pub weak_duality_held: bool,
    pub lambdas_nonnegative: bool,
    /// All active requirements met within `1e-6` relative at the end.
    pub feasible: bool,
    pub local_nonconverged: bool,
    pub init_flagged: Vec<usize>,
}

impl<T: Real> MultiTrace<T> {
    pub fn flagged(&self) -> bool {
        self.status != MultiStatus::Converged || !self.feasible || !self.weak_duality_held || self.local_nonconverged
    }

    pub fn final_row(&self) -> &MultiRow<T> {
        self.rows.last().expect("at least one iteration")
    }

    /// Columns `iter, lambda_1..L, beta_l_i (l-major), dual_value,
    /// sum_utility, sum_rate, feasible`; cells of inactive harvesters are
    /// empty.
    pub fn to_csv(&self, k: usize) -> String {
        let l = self.final_lambdas.len();
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["iter".to_string()];
        header.extend((1..=l).map(|h| format!("lambda_{h}")));
        for h in 1..=l {
            header.extend((1..=k).map(|i| format!("beta_{h}_{i}")));
        }
        header.extend(["dual_value", "sum_utility", "sum_rate", "feasible"].map(String::from));
        w.write_record(&header).expect("in-memory write");
        for r in &self.rows {
            let mut rec = vec![r.iter.to_string()];
            rec.extend(r.lambdas.iter().map(|x| x.map(|v| v.to_string()).unwrap_or_default()));
            for b in &r.betas {
                match b {
                    Some(v) => rec.extend(v.iter().map(|x| x.to_string())),
                    None => rec.extend(std::iter::repeat_n(String::new(), k)),
                }
            }
            rec.push(r.dual_value.to_string());
            rec.push(r.sum_utility.to_string());
            rec.push(r.sum_rate.to_string());
            rec.push(r.feasible.to_string());
            w.write_record(&rec).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }
}

struct Solved<T: Real> {
    covariances: Vec<TransmitCovariance<T>>,
    /// Local objective values including the price terms.
    values: Vec<T>,
    nonconverged: bool,
}

/// Expansion point for the multi-harvester game: each user takes the even
/// share of the largest requirement at the harvester that imposes it.
pub fn initial_multi_expansion<T: Real>(
    channels: &ChannelSet<T>,
    registry: &HarvesterRegistry,
    config: &ScenarioConfig,
) -> Result<(ExpansionPoint<T>, Vec<usize>)> {
    let active = registry.active();
    let lead = active
        .iter()
        .copied()
        .fold(active[0], |b, l| if registry.requirement(l) > registry.requirement(b) { l } else { b });
    let share = T::lit(registry.requirement(lead) / channels.k() as f64);
    let mut covs = Vec::new();
    let mut flagged = Vec::new();
    for i in 0..channels.k() {
        let init = solve_expansion_init_at(i, channels, T::lit(config.power_limits[i]), share, lead)?;
        if init.flagged() {
            flagged.push(i);
        }
        covs.push(init.covariance);
    }
    Ok((build_expansion(channels, &covs)?, flagged))
}

/// Dual subgradient iterations on a fixed expansion point.
///
/// Scripted events are applied at their iteration; every event starts a new
/// phase (step counter reset, sensitivities re-measured) from the current
/// strategies and prices. The run stops once the prices moved less than
/// `lambda_tol` (sup-norm) for `stable_steps` consecutive steps, every active
/// requirement holds within `1e-6` relative and every positive price has a
/// tight constraint, and no events remain; otherwise after `max_iters`.
pub fn run_multi<T: Real>(
    channels: &ChannelSet<T>,
    registry: &HarvesterRegistry,
    config: &ScenarioConfig,
) -> Result<MultiTrace<T>> {
    let mut registry = registry.clone();
    registry.apply_due(0);
    let (expansion, init_flagged) = initial_multi_expansion(channels, &registry, config)?;
    run_multi_on(channels, registry, config, &expansion, init_flagged)
}

pub fn run_multi_on<T: Real>(
    channels: &ChannelSet<T>,
    mut registry: HarvesterRegistry,
    config: &ScenarioConfig,
    expansion: &ExpansionPoint<T>,
    init_flagged: Vec<usize>,
) -> Result<MultiTrace<T>> {
    let k = channels.k();
    let l_total = registry.len();
    if l_total != channels.l() {
        return Err(Error::DimensionMismatch(format!(
            "registry has {l_total} harvesters, channel set {}",
            channels.l()
        )));
    }
    let tol = T::lit(config.tolerances.grad_tol);
    let max_local = config.tolerances.local_max_iters;
    let lambda_tol = T::lit(config.tolerances.lambda_tol);
    let powers: Vec<T> = config.power_limits.iter().map(|&p| T::lit(p)).collect();
    let mut dual = MultiDualState::<T>::new(l_total, k, config.multi.schedule);
    let mut current: Vec<CMat<T>> = expansion.q_tilde.iter().map(|c| c.matrix().clone()).collect();

    let solve_all = |lambdas: &[T], active: &[usize], current: &mut Vec<CMat<T>>| -> Solved<T> {
        let sols: Vec<LocalSolution<T>> = (0..k)
            .map(|i| solve_local_multi(i, lambdas, active, expansion, channels, powers[i], tol, max_local, Some(&current[i])))
            .collect();
        for (slot, s) in current.iter_mut().zip(&sols) {
            *slot = s.covariance.matrix().clone();
        }
        Solved {
            nonconverged: sols.iter().any(|s| !s.converged),
            values: sols.iter().map(|s| s.objective).collect(),
            covariances: sols.into_iter().map(|s| s.covariance).collect(),
        }
    };
    let betas_of = |covs: &[TransmitCovariance<T>]| -> Vec<Vec<T>> {
        (0..l_total)
            .map(|l| covs.iter().enumerate().map(|(i, q)| q.energy(channels.harvester(l, i))).collect())
            .collect()
    };
    let sum = |v: &[T]| v.iter().copied().fold(T::zero(), |a, b| a + b);

    let mut rows = Vec::new();
    let mut phase_z = 0usize;
    let mut stable = 0usize;
    let mut best_primal: Option<T> = None;
    let mut weak_duality_held = true;
    let mut lambdas_nonnegative = true;
    let mut local_nonconverged = false;
    let mut status = MultiStatus::IterationLimit;
    let mut need_probe = true;
    let mut last: Option<Solved<T>> = None;
    let mut iter = 0usize;

    while iter < config.multi.max_iters {
        if registry.apply_due(iter) > 0 {
            for l in 0..l_total {
                if !registry.is_active(l) {
                    dual.lambdas[l] = T::zero();
                }
            }
            phase_z = 0;
            stable = 0;
            best_primal = None;
            need_probe = true;
        }
        let active = registry.active();
        let requirements: Vec<T> = (0..l_total).map(|l| T::lit(registry.requirement(l))).collect();

        let solved = solve_all(&dual.lambdas, &active, &mut current);
        local_nonconverged |= solved.nonconverged;
        let betas = betas_of(&solved.covariances);

        if need_probe {
            if let StepSchedule::CurvatureScaled { .. } = dual.step_schedule {
                for &l in &active {
                    let delta = T::lit(1e-3) * (T::one() + dual.lambdas[l]);
                    let mut bumped = dual.lambdas.clone();
                    bumped[l] += delta;
                    let mut scratch = current.clone();
                    let probe = solve_all(&bumped, &active, &mut scratch);
                    let moved = sum(&betas_of(&probe.covariances)[l]) - sum(&betas[l]);
                    dual.curvature[l] = (moved / delta).max(T::tol(1e-6));
                }
            }
            need_probe = false;
        }

        // Dual function and primal bookkeeping.
        let price_total = active
            .iter()
            .map(|&l| dual.lambdas[l] * requirements[l])
            .fold(T::zero(), |a, b| a + b);
        let dual_value = sum(&solved.values) - price_total;
        let utilities: Vec<T> = (0..k)
            .map(|i| utility(i, &solved.covariances[i], channels, expansion))
            .collect::<Result<_>>()?;
        let sum_utility = sum(&utilities);
        let residuals: Vec<T> = active.iter().map(|&l| sum(&betas[l]) - requirements[l]).collect();
        let exactly_feasible = residuals.iter().all(|&s| s >= T::zero());
        if exactly_feasible {
            best_primal = Some(best_primal.map_or(sum_utility, |b: T| b.max(sum_utility)));
        }
        if let Some(bp) = best_primal {
            let slack = T::tol(1e-6) * dual_value.abs().max(T::one());
            if dual_value < bp - slack {
                weak_duality_held = false;
            }
        }
        let within = active.iter().zip(&residuals).all(|(&l, &s)| {
            let scale = requirements[l].max(T::one()) * T::tol(1e-6);
            s >= -scale && (dual.lambdas[l] <= T::zero() || s <= scale)
        });
        let rates = all_rates(&solved.covariances, channels)?;
        rows.push(MultiRow {
            iter,
            lambdas: (0..l_total).map(|l| registry.is_active(l).then(|| dual.lambdas[l])).collect(),
            betas: (0..l_total).map(|l| registry.is_active(l).then(|| betas[l].clone())).collect(),
            dual_value,
            sum_utility,
            sum_rate: sum(&rates),
            feasible: within,
        });

        let next = subgradient_step(&dual, &betas, &requirements, &active, phase_z);
        let movement = (0..l_total)
            .map(|l| (next.lambdas[l] - dual.lambdas[l]).abs())
            .fold(T::zero(), |a, b| a.max(b));
        lambdas_nonnegative &= next.lambdas.iter().all(|&x| x >= T::zero());
        let moved_little = movement < lambda_tol;
        stable = if moved_little { stable + 1 } else { 0 };
        last = Some(solved);

        if stable >= config.multi.stable_steps && within {
            match registry.next_event_iter() {
                None => {
                    status = MultiStatus::Converged;
                    break;
                }
                Some(at) => {
                    // Jump ahead to the next scripted change.
                    dual = next;
                    iter = at.max(iter + 1);
                    phase_z += 1;
                    continue;
                }
            }
        }
        dual = next;
        phase_z += 1;
        iter += 1;
    }

    let last = last.ok_or_else(|| Error::InvalidConfig("max_iters must be positive".into()))?;
    let final_active = registry.active();
    let final_row_feasible = rows.last().is_some_and(|r| r.feasible);
    Ok(MultiTrace {
        rows,
        status,
        final_covariances: last.covariances,
        final_lambdas: dual.lambdas.clone(),
        final_active,
        events: registry.log().to_vec(),
        weak_duality_held,
        lambdas_nonnegative,
        feasible: final_row_feasible,
        local_nonconverged,
        init_flagged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::StepSchedule;

    fn state(l: usize) -> MultiDualState<f64> {
        MultiDualState::new(l, 2, StepSchedule::Harmonic { a: Some(0.5), b: 10.0 })
    }

    #[test]
    fn zero_subgradient_keeps_prices() {
        let mut s = state(1);
        s.lambdas[0] = 0.7;
        let next = subgradient_step(&s, &[vec![1.0, 2.0]], &[3.0], &[0], 0);
        assert_eq!(next.lambdas, vec![0.7]);
    }

    #[test]
    fn violated_requirement_raises_price() {
        let s = state(1);
        let next = subgradient_step(&s, &[vec![1.0, 0.5]], &[3.0], &[0], 0);
        assert!(next.lambdas[0] > 0.0);
    }

    #[test]
    fn slack_requirement_stays_at_zero() {
        let s = state(1);
        let next = subgradient_step(&s, &[vec![4.0, 4.0]], &[3.0], &[0], 0);
        assert_eq!(next.lambdas[0], 0.0);
    }

    #[test]
    fn registry_respects_join_script() {
        let cfg = ScenarioConfig::from_value(serde_json::json!({
            "k": 2, "mt": 2, "mr": 2, "power_limits": [1.0, 1.0],
            "energy_requirements": [1.0, 2.0], "seed": 1,
            "events": [{"iter": 5, "harvester_id": 1, "action": "join", "gamma": 3.0}]
        }))
        .unwrap();
        let mut r = HarvesterRegistry::from_config(&cfg).unwrap();
        assert_eq!(r.active(), vec![0]);
        assert_eq!(r.apply_due(4), 0);
        assert_eq!(r.apply_due(5), 1);
        assert_eq!(r.active(), vec![0, 1]);
        assert_eq!(r.requirement(1), 3.0);
        assert_eq!(r.log().len(), 1);
    }
}
