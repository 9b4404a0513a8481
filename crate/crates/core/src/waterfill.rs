//! Closed-form multi-level water-filling for the local rate-maximization
//! problem with a power cap and an energy floor:
//!
//! ```text
//!   maximize   sum_m ln(1 + s_m q_m)
//!   subject to q_m >= 0,  sum_m q_m <= P,  sum_m e_m q_m >= Gamma
//! ```
//!
//! where `s_m = |sigma_m|^2` are the squared singular values of the whitened
//! user channel and `e_m = |g_hat_m|^2` the harvester gains seen through the
//! precoder. The optimum is `q_m = max(0, 1/(nu1 - nu2 e_m) - 1/s_m)`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, eigh_desc, hermitize};
use crate::model::TransmitCovariance;
use crate::scalar::{cplx, CMat, CVec, Real};

/// Local problem in whitened coordinates.
#[derive(Debug, Clone)]
pub struct WhitenedProblem<T: Real> {
    /// Squared singular values, descending.
    pub sigma_sq: Vec<T>,
    /// `|g_hat_m|^2` with `g_hat = V^H g`.
    pub g_hat_sq: Vec<T>,
    pub power_limit: T,
    /// Required own contribution; may be `<= 0`.
    pub energy_floor: T,
    /// Unitary precoder `V` (right singular vectors).
    pub precoder: CMat<T>,
}

impl<T: Real> WhitenedProblem<T> {
    /// Problem given directly in mode coordinates (identity precoder).
    pub fn from_modes(sigma_sq: Vec<T>, g_hat_sq: Vec<T>, power_limit: T, energy_floor: T) -> Result<Self> {
        let n = sigma_sq.len();
        let p = Self {
            sigma_sq,
            g_hat_sq,
            power_limit,
            energy_floor,
            precoder: linalg::identity(n),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.sigma_sq.len();
        if n == 0 || self.g_hat_sq.len() != n || self.precoder.shape() != (n, n) {
            return Err(Error::DimensionMismatch("whitened problem dimensions".into()));
        }
        if self.sigma_sq.iter().chain(&self.g_hat_sq).any(|&x| x < T::zero()) {
            return Err(Error::InvalidConfig("mode gains must be nonnegative".into()));
        }
        if self.sigma_sq.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::InvalidConfig("sigma_sq must be sorted descending".into()));
        }
        if !(self.power_limit > T::zero()) {
            return Err(Error::InvalidConfig("power limit must be positive".into()));
        }
        Ok(())
    }

    pub fn modes(&self) -> usize {
        self.sigma_sq.len()
    }

    /// `sum_m ln(1 + s_m q_m)`.
    pub fn objective(&self, q: &[T]) -> T {
        self.sigma_sq
            .iter()
            .zip(q)
            .map(|(&s, &x)| (s * x.max(T::zero())).ln_1p())
            .fold(T::zero(), |a, b| a + b)
    }

    /// `sum_m e_m q_m`.
    pub fn energy(&self, q: &[T]) -> T {
        self.g_hat_sq.iter().zip(q).map(|(&e, &x)| e * x).fold(T::zero(), |a, b| a + b)
    }

    /// Largest energy any feasible load vector can deliver.
    pub fn max_energy(&self) -> T {
        max_of(&self.g_hat_sq) * self.power_limit
    }
}

fn max_of<T: Real>(v: &[T]) -> T {
    v.iter().copied().fold(T::zero(), |a, b| a.max(b))
}

fn sum<T: Real>(v: impl IntoIterator<Item = T>) -> T {
    v.into_iter().fold(T::zero(), |a, b| a + b)
}

/// Reduces the local problem of a transmitter to mode coordinates.
///
/// With `R = L L^H`, the whitened channel is `L^{-1} H`; its Gram matrix
/// `H^H R^{-1} H = V diag(sigma^2) V^H` supplies a full `M_t x M_t` precoder
/// even when `M_r < M_t`.
pub fn whiten<T: Real>(
    h: &CMat<T>,
    r: &CMat<T>,
    g: &CVec<T>,
    power_limit: T,
    energy_floor: T,
) -> Result<WhitenedProblem<T>> {
    if h.nrows() != r.nrows() || g.len() != h.ncols() {
        return Err(Error::DimensionMismatch("whitening operands".into()));
    }
    let chol = linalg::cholesky(r, "interference-plus-noise matrix")?;
    let w = chol
        .l_dirty()
        .solve_lower_triangular(h)
        .ok_or(Error::NotPositiveDefinite("interference-plus-noise matrix"))?;
    let gram = hermitize(&(w.adjoint() * &w));
    let (values, v) = eigh_desc(&gram);
    let sigma_sq = values.into_iter().map(|x| x.max(T::zero())).collect();
    let g_hat = v.adjoint() * g;
    let g_hat_sq = g_hat.iter().map(|z| z.norm_sqr()).collect();
    Ok(WhitenedProblem {
        sigma_sq,
        g_hat_sq,
        power_limit,
        energy_floor,
        precoder: v,
    })
}

/// Which branch produced a solution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveRoute {
    /// Energy floor slack: classical single-level water-filling (`nu2 = 0`).
    SingleLevel,
    /// Active-set iteration with both constraints tight.
    MultiLevel,
    /// Floor equals the maximum attainable energy: all power on the best mode.
    Boundary,
    /// Nested dual bisection, used when the active-set iteration cannot
    /// certify its result.
    DualBisection,
    Infeasible,
}

#[derive(Debug, Clone, Serialize)]
#[serde(bound = "T: Serialize")]
pub struct WaterfillSolution<T: Real> {
    pub q_hat: Vec<T>,
    pub nu1: T,
    pub nu2: T,
    pub active_set: Vec<usize>,
    pub kkt_residual: T,
    pub feasible: bool,
    pub route: SolveRoute,
    /// More than one admissible `nu2` root appeared during the iteration.
    pub multiple_roots: bool,
}

impl<T: Real> WaterfillSolution<T> {
    /// True when the closed form had to be replaced by the fallback solver.
    pub fn fell_back(&self) -> bool {
        self.route == SolveRoute::DualBisection
    }

    fn build(problem: &WhitenedProblem<T>, q_hat: Vec<T>, nu1: T, nu2: T, route: SolveRoute) -> Self {
        let active_set = q_hat
            .iter()
            .enumerate()
            .filter(|(_, &q)| q > T::zero())
            .map(|(m, _)| m)
            .collect();
        let mut s = Self {
            q_hat,
            nu1,
            nu2,
            active_set,
            kkt_residual: T::zero(),
            feasible: true,
            route,
            multiple_roots: false,
        };
        s.kkt_residual = kkt_residual(problem, &s);
        s
    }

    fn infeasible(problem: &WhitenedProblem<T>) -> Self {
        Self {
            q_hat: vec![T::zero(); problem.modes()],
            nu1: T::zero(),
            nu2: T::zero(),
            active_set: Vec::new(),
            kkt_residual: T::zero(),
            feasible: false,
            route: SolveRoute::Infeasible,
            multiple_roots: false,
        }
    }

    /// Wraps arbitrary loads (e.g. from a reference solver), fitting the
    /// multipliers from stationarity so that [`kkt_residual`] can judge them.
    pub fn from_loads(problem: &WhitenedProblem<T>, q_hat: Vec<T>) -> Self {
        let (nu1, nu2) = fit_multipliers(problem, &q_hat);
        Self::build(problem, q_hat, nu1, nu2, SolveRoute::MultiLevel)
    }
}

/// Classical water-filling `q_m = max(0, mu - 1/s_m)` with `sum q = P`.
///
/// Returns the loads and `nu1 = 1/mu`. Modes with `s_m = 0` get nothing.
pub fn single_level<T: Real>(sigma_sq: &[T], power_limit: T) -> (Vec<T>, T) {
    let mut order: Vec<usize> = (0..sigma_sq.len()).filter(|&m| sigma_sq[m] > T::zero()).collect();
    let mut q = vec![T::zero(); sigma_sq.len()];
    if order.is_empty() {
        return (q, T::zero());
    }
    order.sort_by(|&a, &b| sigma_sq[b].partial_cmp(&sigma_sq[a]).unwrap_or(std::cmp::Ordering::Equal));
    let mut inv_sum = T::zero();
    let mut level = T::zero();
    for (k, &m) in order.iter().enumerate() {
        inv_sum += T::one() / sigma_sq[m];
        let candidate = (power_limit + inv_sum) / T::lit((k + 1) as f64);
        let next_floor = order.get(k + 1).map(|&n| T::one() / sigma_sq[n]);
        match next_floor {
            Some(f) if f < candidate => continue,
            _ => {
                level = candidate;
                break;
            }
        }
    }
    for &m in &order {
        q[m] = (level - T::one() / sigma_sq[m]).max(T::zero());
    }
    (q, T::one() / level)
}

/// Solves the local problem.
///
/// Order of attempts: feasibility gate, `nu2 = 0` single-level solution,
/// then the active-set iteration on the tight system (all modes with
/// `q_m <= 0` dropped per pass). The active-set result is certified with
/// [`kkt_residual`]; if it cannot be certified, a nested dual bisection
/// supplies the optimum and the solution is flagged.
pub fn solve_p2<T: Real>(problem: &WhitenedProblem<T>, tol: T) -> WaterfillSolution<T> {
    let p = problem.power_limit;
    let gamma = problem.energy_floor;
    let n = problem.modes();

    let (q0, nu1_0) = single_level(&problem.sigma_sq, p);
    let has_gain = problem.sigma_sq.iter().any(|&s| s > T::zero());
    if gamma <= T::zero() && has_gain {
        return WaterfillSolution::build(problem, q0, nu1_0, T::zero(), SolveRoute::SingleLevel);
    }

    let e_max = problem.max_energy();
    let slack = tol * gamma.abs().max(T::one());
    if e_max < gamma - slack {
        return WaterfillSolution::infeasible(problem);
    }
    if has_gain && problem.energy(&q0) >= gamma {
        return WaterfillSolution::build(problem, q0, nu1_0, T::zero(), SolveRoute::SingleLevel);
    }
    if e_max <= gamma + slack {
        return boundary_solution(problem);
    }

    let certify = T::tol(1e-9);
    if let Some(sol) = active_set_iteration(problem) {
        if sol.kkt_residual <= certify {
            return sol;
        }
    }
    match dual_bisection(problem) {
        Some((q, nu1, nu2)) => {
            let mut s = WaterfillSolution::build(problem, q, nu1, nu2, SolveRoute::DualBisection);
            s.active_set.sort_unstable();
            let _ = n;
            s
        }
        None => boundary_solution(problem),
    }
}

fn boundary_solution<T: Real>(problem: &WhitenedProblem<T>) -> WaterfillSolution<T> {
    let e_max = max_of(&problem.g_hat_sq);
    let ties: Vec<usize> = (0..problem.modes())
        .filter(|&m| problem.g_hat_sq[m] >= e_max * (T::one() - T::tol(1e-12)))
        .collect();
    let share = problem.power_limit / T::lit(ties.len() as f64);
    let mut q = vec![T::zero(); problem.modes()];
    for &m in &ties {
        q[m] = share;
    }
    WaterfillSolution::build(problem, q, T::zero(), T::zero(), SolveRoute::Boundary)
}

fn active_set_iteration<T: Real>(problem: &WhitenedProblem<T>) -> Option<WaterfillSolution<T>> {
    let n_modes = problem.modes();
    let s = &problem.sigma_sq;
    let e = &problem.g_hat_sq;
    let mut active: Vec<usize> = (0..n_modes).filter(|&m| s[m] > T::zero()).collect();
    let mut multiple = false;
    let mut visited: Vec<Vec<usize>> = Vec::new();

    // Removal passes shrink the set to a fixed point of the tight system; a
    // dropped mode whose bound multiplier turns out negative re-enters.
    for _ in 0..(4 * n_modes + 4) {
        let (set, q, nu1, nu2) = removal_passes(problem, active.clone(), &mut multiple)?;
        let violator = (0..n_modes)
            .filter(|m| !set.contains(m) && s[*m] > T::zero())
            .map(|m| (s[m] - (nu1 - nu2 * e[m]), m))
            .filter(|(v, _)| *v > T::tol(1e-12) * s[0].max(T::one()))
            .fold(None, |best: Option<(T, usize)>, c| match best {
                Some(b) if b.0 >= c.0 => Some(b),
                _ => Some(c),
            });
        match violator {
            None => {
                let mut sol = WaterfillSolution::build(problem, q, nu1, nu2, SolveRoute::MultiLevel);
                sol.multiple_roots = multiple;
                return Some(sol);
            }
            Some((_, m)) => {
                let mut next = set;
                next.push(m);
                next.sort_unstable();
                if visited.contains(&next) {
                    return None;
                }
                visited.push(next.clone());
                active = next;
            }
        }
    }
    None
}

/// Solves the tight system on `active`, dropping every mode whose load comes
/// out nonpositive, until all loads are positive. A set without an
/// admissible `nu2` loses its weakest mode.
fn removal_passes<T: Real>(
    problem: &WhitenedProblem<T>,
    mut active: Vec<usize>,
    multiple: &mut bool,
) -> Option<(Vec<usize>, Vec<T>, T, T)> {
    let n_modes = problem.modes();
    let p = problem.power_limit;
    let gamma = problem.energy_floor;
    let s = &problem.sigma_sq;
    let e = &problem.g_hat_sq;
    while !active.is_empty() {
        if active.len() == 1 {
            let m = active[0];
            if e[m] * p < gamma * (T::one() - T::tol(1e-12)) {
                return None;
            }
            let mut q = vec![T::zero(); n_modes];
            q[m] = p;
            let (nu1, nu2) = fit_multipliers(problem, &q);
            return Some((active, q, nu1, nu2));
        }
        let card = T::lit(active.len() as f64);
        let p_prime = p + sum(active.iter().map(|&m| T::one() / s[m]));
        let g_prime = gamma + sum(active.iter().map(|&m| e[m] / s[m]));
        let alphas: Vec<T> = active.iter().map(|&m| g_prime - e[m] * p_prime).collect();
        let objective = |nu2: T| {
            sum(active.iter().zip(&alphas).map(|(&m, &a)| {
                let load = p_prime / (card + nu2 * a) - T::one() / s[m];
                (s[m] * load.max(T::zero())).ln_1p()
            }))
        };
        let root = match nu2_root(&alphas, objective) {
            Ok(r) => r,
            Err(_) => {
                // No admissible level on this set: shed its weakest mode.
                let weakest = active
                    .iter()
                    .copied()
                    .fold(active[0], |w, m| if s[m] < s[w] { m } else { w });
                active.retain(|&m| m != weakest);
                continue;
            }
        };
        *multiple |= root.multiple_valid_roots;
        let nu2 = root.value;
        let nu1 = (card + nu2 * g_prime) / p_prime;
        let loads: Vec<T> = active
            .iter()
            .zip(&alphas)
            .map(|(&m, &a)| p_prime / (card + nu2 * a) - T::one() / s[m])
            .collect();
        let keep: Vec<usize> = active
            .iter()
            .zip(&loads)
            .filter(|(_, &q)| q > T::zero())
            .map(|(&m, _)| m)
            .collect();
        if keep.len() == active.len() {
            let mut q = vec![T::zero(); n_modes];
            for (&m, &x) in active.iter().zip(&loads) {
                q[m] = x;
            }
            return Some((active, q, nu1, nu2));
        }
        active = keep;
    }
    None
}

/// Loads maximizing `sum ln(1 + s q) + nu2 * sum e q` under the power cap,
/// together with the power multiplier `nu1`.
fn inner_waterfill<T: Real>(problem: &WhitenedProblem<T>, nu2: T) -> (Vec<T>, T) {
    let s = &problem.sigma_sq;
    let e = &problem.g_hat_sq;
    let p = problem.power_limit;
    let n = problem.modes();
    let gain: Vec<usize> = (0..n).filter(|&m| s[m] > T::zero()).collect();
    let carriers: Vec<usize> = (0..n).filter(|&m| s[m] <= T::zero()).collect();

    let loads_at = |nu1: T| -> Vec<T> {
        let mut q = vec![T::zero(); n];
        for &m in &gain {
            let w = nu1 - nu2 * e[m];
            q[m] = if w > T::zero() {
                (T::one() / w - T::one() / s[m]).max(T::zero())
            } else {
                T::max_value().unwrap_or_else(T::one)
            };
        }
        q
    };
    let total = |q: &[T]| sum(q.iter().copied());

    let carrier_price = carriers
        .iter()
        .map(|&m| nu2 * e[m])
        .fold(None, |acc: Option<T>, x| Some(acc.map_or(x, |a| a.max(x))));
    let gain_floor = gain.iter().map(|&m| nu2 * e[m]).fold(None, |acc: Option<T>, x| Some(acc.map_or(x, |a| a.max(x))));

    if let Some(c0) = carrier_price {
        let pinned = gain_floor.is_none_or(|g| c0 > g);
        if pinned {
            let mut q = loads_at(c0);
            let used = if gain.is_empty() { T::zero() } else { total(&q) };
            if used <= p {
                let best = carriers.iter().map(|&m| e[m]).fold(T::zero(), |a, b| a.max(b));
                let ties: Vec<usize> = carriers
                    .iter()
                    .copied()
                    .filter(|&m| e[m] >= best * (T::one() - T::tol(1e-12)))
                    .collect();
                let share = (p - used) / T::lit(ties.len() as f64);
                for &m in &ties {
                    q[m] = share;
                }
                return (q, c0);
            }
        }
    }
    let lower = match (gain_floor, carrier_price) {
        (Some(g), Some(c)) => g.max(c),
        (Some(g), None) => g,
        _ => return (vec![T::zero(); n], T::zero()),
    };
    let mut upper = gain
        .iter()
        .map(|&m| s[m] + nu2 * e[m])
        .fold(lower, |a, b| a.max(b));
    let mut lo = lower;
    for _ in 0..400 {
        let mid = lo + (upper - lo) * T::lit(0.5);
        if mid <= lo || mid >= upper {
            break;
        }
        if total(&loads_at(mid)) > p {
            lo = mid;
        } else {
            upper = mid;
        }
    }
    (loads_at(upper), upper)
}

/// Nested bisection on the dual: the inner level fixes `nu2` and fills power
/// to the cap; the outer level raises `nu2` until the energy floor is met.
/// The energy delivered by the inner solution is nondecreasing in `nu2`.
fn dual_bisection<T: Real>(problem: &WhitenedProblem<T>) -> Option<(Vec<T>, T, T)> {
    let gamma = problem.energy_floor;
    let mut lo = T::zero();
    let mut hi = T::one();
    let mut best = inner_waterfill(problem, hi);
    let mut doublings = 0;
    while problem.energy(&best.0) < gamma {
        lo = hi;
        hi *= T::lit(2.0);
        best = inner_waterfill(problem, hi);
        doublings += 1;
        if doublings > 400 {
            return None;
        }
    }
    for _ in 0..400 {
        let mid = lo + (hi - lo) * T::lit(0.5);
        if mid <= lo || mid >= hi {
            break;
        }
        let trial = inner_waterfill(problem, mid);
        if problem.energy(&trial.0) >= gamma {
            hi = mid;
            best = trial;
        } else {
            lo = mid;
        }
    }
    Some((best.0, best.1, hi))
}

/// `(nu1, nu2) >= 0` consistent with stationarity at the loads `q`.
///
/// Active modes satisfy `nu1 - nu2 e_m = s_m / (1 + s_m q_m)`. With two or
/// more distinct `e_m` among active modes this is solved in least squares;
/// otherwise `nu2` is the smallest value keeping inactive modes dual
/// feasible. A slack energy floor forces `nu2 = 0`.
pub fn fit_multipliers<T: Real>(problem: &WhitenedProblem<T>, q: &[T]) -> (T, T) {
    let s = &problem.sigma_sq;
    let e = &problem.g_hat_sq;
    let thresh = problem.power_limit * T::tol(1e-9);
    let active: Vec<usize> = (0..problem.modes()).filter(|&m| q[m] > thresh && s[m] > T::zero()).collect();
    if active.is_empty() {
        return (T::zero(), T::zero());
    }
    let level = |m: usize| s[m] / (T::one() + s[m] * q[m]);
    let energy_slack = problem.energy(q) - problem.energy_floor
        > T::tol(1e-7) * problem.energy_floor.abs().max(T::one());
    if energy_slack {
        let nu1 = sum(active.iter().map(|&m| level(m))) / T::lit(active.len() as f64);
        return (nu1, T::zero());
    }
    let cnt = T::lit(active.len() as f64);
    let mean_e = sum(active.iter().map(|&m| e[m])) / cnt;
    let mean_c = sum(active.iter().map(|&m| level(m))) / cnt;
    let var_e = sum(active.iter().map(|&m| (e[m] - mean_e) * (e[m] - mean_e)));
    let spread = var_e.sqrt() > T::tol(1e-9) * mean_e.abs().max(T::one());
    if spread {
        let cov = sum(active.iter().map(|&m| (e[m] - mean_e) * (level(m) - mean_c)));
        let nu2 = (-cov / var_e).max(T::zero());
        let nu1 = mean_c + nu2 * mean_e;
        return (nu1, nu2);
    }
    // Single effective active level: pick the smallest admissible nu2.
    let mut nu2 = T::zero();
    for m in 0..problem.modes() {
        if active.contains(&m) || s[m] <= T::zero() {
            continue;
        }
        // mean_c + nu2 (mean_e - e_m) >= s_m
        let de = mean_e - e[m];
        if de > T::zero() && mean_c < s[m] {
            nu2 = nu2.max((s[m] - mean_c) / de);
        }
    }
    (mean_c + nu2 * mean_e, nu2)
}

/// Scaled KKT violation of `solution` for `problem`.
///
/// Maximum of: primal violations (loads relative to `P`, energy relative to
/// `max(Gamma, 1)`), multiplier negativity, negativity of the implied
/// bound multipliers `lambda_m = nu1 - nu2 e_m - s_m/(1 + s_m q_m)`, and the
/// complementary-slackness products `q_m lambda_m`, `nu1 (sum q - P)`,
/// `nu2 (Gamma - sum e q)`. Dual quantities are divided by
/// `max(1, max_m s_m)`, products additionally by `P`. Boundary solutions
/// have no multipliers and are judged on primal feasibility only.
pub fn kkt_residual<T: Real>(problem: &WhitenedProblem<T>, solution: &WaterfillSolution<T>) -> T {
    let q = &solution.q_hat;
    let p = problem.power_limit;
    let gamma = problem.energy_floor;
    let s = &problem.sigma_sq;
    let e = &problem.g_hat_sq;
    let e_scale = gamma.abs().max(T::one());
    let d_scale = max_of(s).max(T::one());
    let neg = |x: T| (-x).max(T::zero());
    let pos = |x: T| x.max(T::zero());

    let total = sum(q.iter().copied());
    let energy = problem.energy(q);
    let mut r = pos(total - p) / p;
    r = r.max(pos(gamma - energy) / e_scale);
    for &x in q {
        r = r.max(neg(x) / p);
    }
    if solution.route == SolveRoute::Boundary {
        return r;
    }
    r = r.max(neg(solution.nu1) / d_scale).max(neg(solution.nu2) / d_scale);
    for m in 0..q.len() {
        let grad = s[m] / (T::one() + s[m] * q[m].max(T::zero()));
        let lam = solution.nu1 - solution.nu2 * e[m] - grad;
        r = r.max(neg(lam) / d_scale);
        r = r.max((q[m] * lam).abs() / (p * d_scale));
    }
    r = r.max((solution.nu1 * (total - p)).abs() / (p * d_scale));
    r = r.max((solution.nu2 * (gamma - energy)).abs() / (p * d_scale));
    r
}

/// `Q = V diag(q_hat) V^H`.
pub fn assemble_covariance<T: Real>(
    problem: &WhitenedProblem<T>,
    solution: &WaterfillSolution<T>,
) -> TransmitCovariance<T> {
    let diag: Vec<T> = solution.q_hat.iter().map(|&x| x.max(T::zero())).collect();
    let m = linalg::from_eigen(&diag, &problem.precoder);
    TransmitCovariance::from_trusted(m, problem.power_limit)
}

// ---------------------------------------------------------------------------
// Root of sum_m 1 / (|M| + nu2 alpha_m) = 1.

/// How a `nu2` root was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RootRoute {
    ClosedForm,
    Companion,
    Bisection,
}

#[derive(Debug, Clone, Copy)]
pub struct Nu2Root<T> {
    pub value: T,
    pub route: RootRoute,
    pub multiple_valid_roots: bool,
}

/// `sum_m 1 / (n + nu alpha_m) - 1`.
pub fn nu2_residual<T: Real>(alphas: &[T], nu: T) -> T {
    let n = T::lit(alphas.len() as f64);
    sum(alphas.iter().map(|&a| T::one() / (n + nu * a))) - T::one()
}

/// `nu > 0` with every implied water level positive.
pub fn nu2_admissible<T: Real>(alphas: &[T], nu: T) -> bool {
    let n = T::lit(alphas.len() as f64);
    nu > T::zero() && alphas.iter().all(|&a| n + nu * a > T::zero())
}

/// `|M| = 2`: `nu2 = -(1/alpha_1 + 1/alpha_2)`.
pub fn nu2_closed_form_pair<T: Real>(a1: T, a2: T) -> T {
    -(T::one() / a1 + T::one() / a2)
}

/// `|M| = 3`: both roots `-sum(1/a) +- sqrt(sum(1/a^2) - sum(a)/prod(a))`,
/// the `+` branch first. `None` when the discriminant is negative.
pub fn nu2_closed_form_triple<T: Real>(a: [T; 3]) -> Option<[T; 2]> {
    let inv_sum = sum(a.iter().map(|&x| T::one() / x));
    let inv_sq = sum(a.iter().map(|&x| T::one() / (x * x)));
    let disc = inv_sq - (a[0] + a[1] + a[2]) / (a[0] * a[1] * a[2]);
    if disc < T::zero() {
        return None;
    }
    let root = disc.sqrt();
    Some([-inv_sum + root, -inv_sum - root])
}

fn poly_mul_linear<T: Real>(c: &[T], a0: T, a1: T) -> Vec<T> {
    let mut out = vec![T::zero(); c.len() + 1];
    for (k, &x) in c.iter().enumerate() {
        out[k] += x * a0;
        out[k + 1] += x * a1;
    }
    out
}

/// Real positive admissible roots of
/// `prod_m (n + nu a_m) - sum_k prod_{m != k} (n + nu a_m)` from the
/// eigenvalues of its companion matrix, each refined by Newton steps.
///
/// The variable is rescaled by `max |a_m| / n` and the trivial root `nu = 0`
/// divided out before forming the companion matrix.
pub fn nu2_polynomial_roots<T: Real>(alphas: &[T]) -> Vec<T> {
    let n = alphas.len();
    if n < 2 {
        return Vec::new();
    }
    let nf = T::lit(n as f64);
    let scale = alphas.iter().map(|a| a.abs()).fold(T::zero(), |x, y| x.max(y)) / nf;
    if scale <= T::zero() {
        return Vec::new();
    }
    // With u = nu * scale, each factor is n (1 + u b_m), b_m = a_m / (n scale).
    let b: Vec<T> = alphas.iter().map(|&a| a / (nf * scale)).collect();
    let mut prod = vec![T::one()];
    for &bm in &b {
        prod = poly_mul_linear(&prod, T::one(), bm);
    }
    let mut others = vec![T::zero(); n];
    for k in 0..n {
        let mut part = vec![T::one()];
        for (m, &bm) in b.iter().enumerate() {
            if m != k {
                part = poly_mul_linear(&part, T::one(), bm);
            }
        }
        for (d, &c) in part.iter().enumerate() {
            others[d] += c;
        }
    }
    // p(u) = prod(u) - others(u) / n; p(0) = 0.
    let mut coeffs: Vec<T> = (0..=n)
        .map(|d| prod[d] - others.get(d).copied().unwrap_or_else(T::zero) / nf)
        .collect();
    coeffs.remove(0);
    let lead_tol = T::tol(1e-13) * coeffs.iter().map(|c| c.abs()).fold(T::zero(), |x, y| x.max(y));
    while coeffs.len() > 1 && coeffs.last().is_some_and(|c| c.abs() <= lead_tol) {
        coeffs.pop();
    }
    let degree = coeffs.len() - 1;
    let mut candidates = Vec::new();
    if degree == 0 {
        return candidates;
    }
    if degree == 1 {
        candidates.push(-coeffs[0] / coeffs[1]);
    } else {
        let lead = coeffs[degree];
        let mut companion = nalgebra::DMatrix::<T>::zeros(degree, degree);
        for r in 1..degree {
            companion[(r, r - 1)] = T::one();
        }
        for r in 0..degree {
            companion[(r, degree - 1)] = -coeffs[r] / lead;
        }
        for z in companion.complex_eigenvalues().iter() {
            if z.im.abs() <= T::tol(1e-7) * (T::one() + z.re.abs()) {
                candidates.push(z.re);
            }
        }
    }
    let mut roots: Vec<T> = Vec::new();
    for u in candidates {
        let nu = newton_polish(alphas, u / scale);
        if nu2_admissible(alphas, nu) && nu2_residual(alphas, nu).abs() <= T::tol(1e-9)
            && !roots.iter().any(|&r| (r - nu).abs() <= T::tol(1e-9) * r.abs().max(T::one())) {
                roots.push(nu);
            }
    }
    roots
}

fn newton_polish<T: Real>(alphas: &[T], mut nu: T) -> T {
    let n = T::lit(alphas.len() as f64);
    for _ in 0..8 {
        if !nu2_admissible(alphas, nu) {
            break;
        }
        let f = nu2_residual(alphas, nu);
        let df = -sum(alphas.iter().map(|&a| a / ((n + nu * a) * (n + nu * a))));
        if df == T::zero() {
            break;
        }
        let next = nu - f / df;
        if !nu2_admissible(alphas, next) || nu2_residual(alphas, next).abs() >= f.abs() {
            break;
        }
        nu = next;
    }
    nu
}

/// Safeguarded bisection. On the admissible interval `(0, nu_hi)` the
/// residual is convex with a zero at `nu = 0`, so a positive root exists
/// only if the residual dips below zero; it lies right of the minimizer.
pub fn nu2_bisection<T: Real>(alphas: &[T]) -> Option<T> {
    let n = T::lit(alphas.len() as f64);
    let nu_hi = alphas
        .iter()
        .filter(|&&a| a < T::zero())
        .map(|&a| -n / a)
        .fold(None, |acc: Option<T>, x| Some(acc.map_or(x, |y| y.min(x))))?;
    if sum(alphas.iter().copied()) <= T::zero() {
        return None;
    }
    let slope = |nu: T| -sum(alphas.iter().map(|&a| a / ((n + nu * a) * (n + nu * a))));
    let (mut a, mut b) = (T::zero(), nu_hi);
    for _ in 0..300 {
        let mid = a + (b - a) * T::lit(0.5);
        if mid <= a || mid >= b {
            break;
        }
        if slope(mid) < T::zero() {
            a = mid;
        } else {
            b = mid;
        }
    }
    let minimizer = a;
    if nu2_residual(alphas, minimizer) >= T::zero() {
        return None;
    }
    let (mut a, mut b) = (minimizer, nu_hi);
    for _ in 0..300 {
        let mid = a + (b - a) * T::lit(0.5);
        if mid <= a || mid >= b {
            break;
        }
        if nu2_residual(alphas, mid) < T::zero() {
            a = mid;
        } else {
            b = mid;
        }
    }
    Some(a + (b - a) * T::lit(0.5))
}

/// Positive admissible root for the tight system on an active set with
/// `alpha_m = Gamma' - e_m P'`. Closed forms for `|M| = 2, 3`, companion
/// eigenvalues for larger sets, bisection when those yield nothing. Among
/// several admissible roots the one with the largest `objective` wins.
pub fn nu2_root<T: Real>(alphas: &[T], objective: impl Fn(T) -> T) -> Result<Nu2Root<T>> {
    let candidates: Vec<T> = match alphas.len() {
        0 | 1 => return Err(Error::InvalidConfig("nu2 root needs at least two active modes".into())),
        2 => vec![nu2_closed_form_pair(alphas[0], alphas[1])],
        3 => nu2_closed_form_triple([alphas[0], alphas[1], alphas[2]])
            .map(|r| r.to_vec())
            .unwrap_or_default(),
        _ => nu2_polynomial_roots(alphas),
    };
    let route = if alphas.len() <= 3 { RootRoute::ClosedForm } else { RootRoute::Companion };
    let valid: Vec<T> = candidates.into_iter().filter(|&nu| nu2_admissible(alphas, nu)).collect();
    if valid.is_empty() {
        return nu2_bisection(alphas)
            .filter(|&nu| nu2_admissible(alphas, nu))
            .map(|value| Nu2Root {
                value,
                route: RootRoute::Bisection,
                multiple_valid_roots: false,
            })
            .ok_or_else(|| Error::InvalidConfig("no admissible positive nu2 root".into()));
    }
    let multiple = valid.len() > 1;
    let value = valid
        .into_iter()
        .map(|nu| (objective(nu), nu))
        .fold(None, |best: Option<(T, T)>, cand| match best {
            Some(b) if b.0 >= cand.0 => Some(b),
            _ => Some(cand),
        })
        .map(|(_, nu)| nu)
        .expect("nonempty");
    Ok(Nu2Root {
        value,
        route,
        multiple_valid_roots: multiple,
    })
}

/// Maximizer of `g^H Q g` under the power cap, expressed as a covariance.
pub fn energy_beam_covariance<T: Real>(g: &CVec<T>, power_limit: T) -> TransmitCovariance<T> {
    TransmitCovariance::energy_beam(g, power_limit)
}

#[allow(dead_code)]
fn diag_matrix<T: Real>(q: &[T]) -> CMat<T> {
    let mut m = CMat::zeros(q.len(), q.len());
    for (k, &x) in q.iter().enumerate() {
        m[(k, k)] = cplx(x);
    }
    m
}
