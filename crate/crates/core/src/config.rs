//! Scenario configuration: network dimensions, budgets, requirements,
//! tolerances and policy switches. JSON is the on-disk format; a top-level
//! `"preset"` field seeds defaults that explicit fields then override.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    /// Number of transmitter/receiver pairs.
    pub k: usize,
    /// Number of energy harvesters present in the channel set.
    pub l: usize,
    pub mt: usize,
    pub mr: usize,
    pub power_limits: Vec<f64>,
    /// Requirement per harvester (pre-conversion received power).
    pub energy_requirements: Vec<f64>,
    /// Receiver noise power. Fixed at 1; any other value is rejected.
    #[serde(default = "one")]
    pub noise_power: f64,
    pub seed: u64,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub infeasible_policy: InfeasiblePolicy,
    #[serde(default)]
    pub gamma_i_mode: GammaMode,
    #[serde(default)]
    pub initial_strategy: InitialStrategy,
    /// Best-response update order (0-based user indices). Round-robin when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub update_order: Option<Vec<usize>>,
    /// Longest cycle period searched for by the non-cooperative engine.
    #[serde(default = "default_cycle_window")]
    pub cycle_window: usize,
    #[serde(default)]
    pub bargaining: BargainingConfig,
    #[serde(default)]
    pub multi: MultiConfig,
    /// Harvester join/leave script for the multi-harvester engine.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub events: Vec<HarvesterEvent>,
    /// Requirement list used by `sweep` when none is given on the command line.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub gammas: Vec<f64>,
}

fn one() -> f64 {
    1.0
}

fn default_cycle_window() -> usize {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Frobenius change per round below which best-response dynamics stop.
    pub eq_tol: f64,
    /// Dual movement (sup-norm) treated as stationary by the subgradient engine.
    pub lambda_tol: f64,
    /// Gradient-map norm at which projected gradient ascent stops.
    pub grad_tol: f64,
    /// Rounds of best-response dynamics.
    pub max_iters: usize,
    /// Iteration cap of a single projected-gradient local solve.
    pub local_max_iters: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            eq_tol: 1e-8,
            lambda_tol: 1e-6,
            grad_tol: 1e-7,
            max_iters: 200,
            local_max_iters: 5000,
        }
    }
}

/// What a transmitter does when its local problem has no feasible point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InfeasiblePolicy {
    KeepPrevious,
    Zero,
    #[default]
    EnergyBeam,
}

/// How a transmitter learns its share of the harvesting requirement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GammaMode {
    #[default]
    Oracle,
    Protocol,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialStrategy {
    /// `(P_i / M_t) I`.
    #[default]
    Uniform,
    Zero,
    /// Random PSD matrix at full power, drawn from the scenario seed.
    RandomPsd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BargainingConfig {
    /// Bisection stops once `lambda_max - lambda_min` drops below this.
    pub lambda_tol: f64,
    pub max_bisection: usize,
    pub outer_rounds: usize,
    /// Largest `lambda_max` tried by the doubling search.
    pub lambda_cap: f64,
}

impl Default for BargainingConfig {
    fn default() -> Self {
        Self {
            lambda_tol: 1e-6,
            max_bisection: 100,
            outer_rounds: 5,
            lambda_cap: (1u64 << 40) as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MultiConfig {
    pub max_iters: usize,
    /// Consecutive stationary dual steps required to stop.
    pub stable_steps: usize,
    pub schedule: StepSchedule,
}

impl Default for MultiConfig {
    fn default() -> Self {
        Self {
            max_iters: 2000,
            stable_steps: 5,
            schedule: StepSchedule::default(),
        }
    }
}

/// Step-size rule of the multi-harvester dual update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum StepSchedule {
    /// `alpha_z = a / (b + z)`, with `a = 1 / max_l Gamma_l` when unset.
    Harmonic {
        #[serde(default)]
        a: Option<f64>,
        b: f64,
    },
    /// Per-harvester `alpha_{z,l} = gain * b / (kappa_l (b + z))`, where
    /// `kappa_l` is the measured sensitivity of harvester `l`'s received
    /// power to its own price at the start of a phase.
    CurvatureScaled { gain: f64, b: f64 },
}

impl Default for StepSchedule {
    fn default() -> Self {
        StepSchedule::CurvatureScaled { gain: 1.0, b: 10.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventAction {
    Join,
    Leave,
}

/// One entry of a harvester join/leave script.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarvesterEvent {
    /// Dual iteration at which the event is applied.
    pub iter: usize,
    pub harvester_id: usize,
    pub action: EventAction,
    /// Requirement of a joining harvester (defaults to its configured value).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
}

/// Names accepted in the `"preset"` field.
pub const PRESETS: &[&str] = &["paper-K3", "paper-K3-set-II", "paper-K3-multi"];

fn preset_value(name: &str) -> Option<Value> {
    let base = |seed: u64, gamma: &[f64], gammas: &[f64]| {
        serde_json::json!({
            "k": 3,
            "l": gamma.len(),
            "mt": 8,
            "mr": 8,
            "power_limits": [8.0, 8.0, 8.0],
            "energy_requirements": gamma,
            "seed": seed,
            "gammas": gammas,
        })
    };
    match name {
        "paper-K3" => Some(base(1, &[70.0], &[50.0, 60.0, 70.0, 80.0, 90.0])),
        "paper-K3-set-II" => Some(base(2, &[60.0], &[40.0, 50.0, 60.0, 70.0, 80.0])),
        "paper-K3-multi" => Some(base(3, &[30.0, 30.0], &[])),
        _ => None,
    }
}

fn merge(base: &mut Value, overrides: Value) {
    match (base, overrides) {
        (Value::Object(b), Value::Object(o)) => {
            for (key, v) in o {
                match b.get_mut(&key) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(key, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

impl ScenarioConfig {
    /// Configuration of a named preset.
    pub fn preset(name: &str) -> Result<Self> {
        Self::from_value(serde_json::json!({ "preset": name }))
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let value: Value =
            serde_json::from_str(s).map_err(|e| Error::Schema(e.to_string()))?;
        Self::from_value(value)
    }

    pub fn from_value(value: Value) -> Result<Self> {
        let mut doc = match value.get("preset").and_then(Value::as_str) {
            Some(name) => {
                let mut base = preset_value(name).ok_or_else(|| {
                    Error::Schema(format!(
                        "unknown preset `{name}` (expected one of {})",
                        PRESETS.join(", ")
                    ))
                })?;
                merge(&mut base, value);
                base
            }
            None => value,
        };
        // `l` follows the requirement list unless given explicitly.
        if let Value::Object(map) = &mut doc {
            if !map.contains_key("l") {
                if let Some(n) = map.get("energy_requirements").and_then(Value::as_array).map(Vec::len) {
                    map.insert("l".into(), Value::from(n));
                }
            }
        }
        let cfg: ScenarioConfig =
            serde_json::from_value(doc).map_err(|e| Error::Schema(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if self.l == 0 {
            return bad("l must be at least 1".into());
        }
        if self.mt == 0 || self.mr == 0 {
            return bad("antenna counts must be positive".into());
        }
        if self.power_limits.len() != self.k {
            return bad(format!(
                "power_limits has {} entries, expected k = {}",
                self.power_limits.len(),
                self.k
            ));
        }
        if let Some(p) = self.power_limits.iter().find(|&&p| !(p > 0.0 && p.is_finite())) {
            return bad(format!("power limit {p} is not positive"));
        }
        if self.energy_requirements.len() != self.l {
            return bad(format!(
                "energy_requirements has {} entries, expected l = {}",
                self.energy_requirements.len(),
                self.l
            ));
        }
        if let Some(g) = self
            .energy_requirements
            .iter()
            .find(|&&g| !(g >= 0.0 && g.is_finite()))
        {
            return bad(format!("energy requirement {g} is negative"));
        }
        if self.noise_power != 1.0 {
            return bad("noise_power is fixed at 1".into());
        }
        if let Some(order) = &self.update_order {
            let mut seen = vec![false; self.k];
            for &i in order {
                if i >= self.k || seen[i] {
                    return bad("update_order must be a permutation of 0..k".into());
                }
                seen[i] = true;
            }
            if order.len() != self.k {
                return bad("update_order must be a permutation of 0..k".into());
            }
        }
        for ev in &self.events {
            if ev.harvester_id >= self.l {
                return bad(format!("event refers to harvester {} of {}", ev.harvester_id, self.l));
            }
        }
        if self.cycle_window == 0 {
            return bad("cycle_window must be positive".into());
        }
        if self.bargaining.outer_rounds == 0 {
            return bad("outer_rounds must be at least 1".into());
        }
        Ok(())
    }

    /// The single-harvester requirement `Gamma` (harvester 0).
    pub fn gamma(&self) -> f64 {
        self.energy_requirements[0]
    }

    /// Copy with harvester 0's requirement replaced.
    pub fn with_gamma(&self, gamma: f64) -> Self {
        let mut c = self.clone();
        c.energy_requirements[0] = gamma;
        c
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.seed = seed;
        c
    }

    pub fn update_order(&self) -> Vec<usize> {
        self.update_order.clone().unwrap_or_else(|| (0..self.k).collect())
    }
}
