//! Reference solvers for tests and cross-checks. Nothing here calls into
//! the water-filling or cooperative solvers: eigendecompositions use a
//! hand-written Jacobi sweep, projections use bisection on the threshold,
//! and the gradient method uses Barzilai-Borwein steps.

use nalgebra::Complex;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};

use crate::model::ChannelSet;
use crate::scalar::{CMat, CVec, Real};

fn c<T: Real>(re: T) -> Complex<T> {
    Complex::new(re, T::zero())
}

fn inner_re<T: Real>(a: &CMat<T>, b: &CMat<T>) -> T {
    // Re Tr(A^H B) = sum conj(a_ij) b_ij
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| x.re * y.re + x.im * y.im)
        .fold(T::zero(), |s, v| s + v)
}

fn fro<T: Real>(a: &CMat<T>) -> T {
    inner_re(a, a).sqrt()
}

fn sym<T: Real>(a: &CMat<T>) -> CMat<T> {
    let mut out = a.clone();
    let n = a.nrows();
    for r in 0..n {
        for col in 0..n {
            out[(r, col)] = (a[(r, col)] + a[(col, r)].conj()) * c(T::lit(0.5));
        }
    }
    out
}

/// Eigenvalues and eigenvectors (columns) of a Hermitian matrix by cyclic
/// complex Jacobi rotations. Not sorted.
pub fn jacobi_eigh<T: Real>(m: &CMat<T>) -> (Vec<T>, CMat<T>) {
    let n = m.nrows();
    let mut a = sym(m);
    let mut v = CMat::<T>::identity(n, n);
    let scale = fro(&a).max(T::lit(1e-30));
    for _sweep in 0..100 {
        let mut off = T::zero();
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[(p, q)].norm_sqr();
            }
        }
        if off.sqrt() <= T::default_epsilon() * scale * T::lit(1e-2) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let b = a[(p, q)];
                let beta = b.norm_sqr().sqrt();
                if beta <= T::lit(1e-30) {
                    continue;
                }
                let phase = b * c(T::one() / beta);
                let app = a[(p, p)].re;
                let aqq = a[(q, q)].re;
                let zeta = (aqq - app) / (T::lit(2.0) * beta);
                let t = if zeta >= T::zero() {
                    T::one() / (zeta + (T::one() + zeta * zeta).sqrt())
                } else {
                    -T::one() / (-zeta + (T::one() + zeta * zeta).sqrt())
                };
                let cs = T::one() / (T::one() + t * t).sqrt();
                let sn = t * cs;
                // U = diag(1, conj(phase)) * [[c, s], [-s, c]]
                let u00 = c(cs);
                let u01 = c(sn);
                let u10 = -phase.conj() * c(sn);
                let u11 = phase.conj() * c(cs);
                for r in 0..n {
                    let x = a[(r, p)];
                    let y = a[(r, q)];
                    a[(r, p)] = x * u00 + y * u10;
                    a[(r, q)] = x * u01 + y * u11;
                }
                for col in 0..n {
                    let x = a[(p, col)];
                    let y = a[(q, col)];
                    a[(p, col)] = u00.conj() * x + u10.conj() * y;
                    a[(q, col)] = u01.conj() * x + u11.conj() * y;
                }
                a[(p, q)] = c(T::zero());
                a[(q, p)] = c(T::zero());
                for r in 0..n {
                    let x = v[(r, p)];
                    let y = v[(r, q)];
                    v[(r, p)] = x * u00 + y * u10;
                    v[(r, q)] = x * u01 + y * u11;
                }
            }
        }
    }
    ((0..n).map(|k| a[(k, k)].re).collect(), v)
}

fn rebuild<T: Real>(values: &[T], v: &CMat<T>) -> CMat<T> {
    let n = v.nrows();
    let mut out = CMat::<T>::zeros(n, n);
    for (k, &lam) in values.iter().enumerate() {
        if lam == T::zero() {
            continue;
        }
        for r in 0..n {
            for col in 0..n {
                out[(r, col)] += v[(r, k)] * v[(col, k)].conj() * c(lam);
            }
        }
    }
    out
}

/// Euclidean projection onto `{x >= 0, sum x <= cap}` by bisection on the
/// shift `tau` in `x = max(0, y - tau)`.
pub fn project_simplex_bisection<T: Real>(y: &[T], cap: T) -> Vec<T> {
    let clip: Vec<T> = y.iter().map(|&v| v.max(T::zero())).collect();
    let total = clip.iter().copied().fold(T::zero(), |a, b| a + b);
    if total <= cap {
        return clip;
    }
    let mass = |tau: T| y.iter().map(|&v| (v - tau).max(T::zero())).fold(T::zero(), |a, b| a + b);
    let mut lo = T::zero();
    let mut hi = y.iter().copied().fold(T::zero(), |a, b| a.max(b));
    for _ in 0..200 {
        let mid = (lo + hi) * T::lit(0.5);
        if mid <= lo || mid >= hi || hi - lo <= T::default_epsilon() * (T::one() + hi) {
            break;
        }
        if mass(mid) > cap {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    y.iter().map(|&v| (v - hi).max(T::zero())).collect()
}

/// Nearest point of `{Q >= 0, Tr Q <= cap}` to the Hermitian part of `x`.
pub fn project_psd_trace<T: Real>(x: &CMat<T>, cap: T) -> CMat<T> {
    let (values, v) = jacobi_eigh(x);
    let p = project_simplex_bisection(&values, cap);
    sym(&rebuild(&p, &v))
}

/// The same projection by Dykstra's alternating scheme between the PSD cone
/// and the half-space `Tr Q <= cap` (slow; used on small instances only).
pub fn project_psd_trace_dykstra<T: Real>(x: &CMat<T>, cap: T, iters: usize) -> CMat<T> {
    let n = x.nrows();
    let mut q = sym(x);
    let mut p = CMat::<T>::zeros(n, n);
    let mut r = CMat::<T>::zeros(n, n);
    for _ in 0..iters {
        let y = &q + &p;
        let (values, v) = jacobi_eigh(&y);
        let clamped: Vec<T> = values.iter().map(|&l| l.max(T::zero())).collect();
        let psd = sym(&rebuild(&clamped, &v));
        p = &y - &psd;
        let z = &psd + &r;
        let tr = (0..n).map(|k| z[(k, k)].re).fold(T::zero(), |a, b| a + b);
        let mut half = z.clone();
        if tr > cap {
            let shift = (tr - cap) / T::lit(n as f64);
            for k in 0..n {
                half[(k, k)].re -= shift;
            }
        }
        r = &z - &half;
        q = half;
    }
    q
}

/// Concave function of a Hermitian matrix with gradient `G` such that
/// `f(Q + X) ~ f(Q) + Re Tr(G X)`.
pub trait ConcaveObjective<T: Real> {
    fn value(&self, q: &CMat<T>) -> T;
    fn gradient(&self, q: &CMat<T>) -> CMat<T>;
}

/// `Re Tr(G Q)`.
pub struct LinearObjective<T: Real> {
    pub g: CMat<T>,
}

impl<T: Real> ConcaveObjective<T> for LinearObjective<T> {
    fn value(&self, q: &CMat<T>) -> T {
        inner_re(&self.g.adjoint(), q)
    }
    fn gradient(&self, _q: &CMat<T>) -> CMat<T> {
        self.g.clone()
    }
}

/// `ln|I + H Q H^H| + Re Tr(C Q)`.
pub struct LogDetObjective<T: Real> {
    pub h: CMat<T>,
    pub linear: CMat<T>,
}

impl<T: Real> LogDetObjective<T> {
    fn inner(&self, q: &CMat<T>) -> CMat<T> {
        let mut m = &self.h * q * self.h.adjoint();
        for k in 0..m.nrows() {
            m[(k, k)] += c(T::one());
        }
        sym(&m)
    }
}

impl<T: Real> ConcaveObjective<T> for LogDetObjective<T> {
    fn value(&self, q: &CMat<T>) -> T {
        let (values, _) = jacobi_eigh(&self.inner(q));
        let ld = values
            .iter()
            .map(|&l| if l > T::zero() { l.ln() } else { T::min_value().unwrap_or_else(T::zero) })
            .fold(T::zero(), |a, b| a + b);
        ld + inner_re(&self.linear.adjoint(), q)
    }
    fn gradient(&self, q: &CMat<T>) -> CMat<T> {
        let (values, v) = jacobi_eigh(&self.inner(q));
        let inv: Vec<T> = values.iter().map(|&l| T::one() / l).collect();
        sym(&(self.h.adjoint() * rebuild(&inv, &v) * &self.h + &self.linear))
    }
}

/// Result of [`pg_maximize`].
#[derive(Debug, Clone)]
pub struct PgResult<T: Real> {
    pub q: CMat<T>,
    pub value: T,
    pub iterations: usize,
    pub converged: bool,
    /// Objective never decreased between accepted iterates.
    pub monotone: bool,
}

/// Projected gradient ascent over `{Q >= 0, Tr Q <= cap}` with
/// Barzilai-Borwein trial steps and monotone Armijo backtracking. Stops when
/// the unit-step gradient map is below `tol`.
pub fn pg_maximize<T: Real>(
    objective: &dyn ConcaveObjective<T>,
    dim: usize,
    cap: T,
    tol: T,
    max_iters: usize,
    start: Option<&CMat<T>>,
) -> PgResult<T> {
    let mut q = match start {
        Some(s) => project_psd_trace(s, cap),
        None => {
            let mut z = CMat::<T>::zeros(dim, dim);
            for k in 0..dim {
                z[(k, k)] = c(cap / T::lit(dim as f64));
            }
            z
        }
    };
    let mut f = objective.value(&q);
    let mut g = objective.gradient(&q);
    let mut step = T::one();
    let mut monotone = true;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iters {
        let gm = fro(&(project_psd_trace(&(&q + &g), cap) - &q));
        if gm <= tol {
            converged = true;
            break;
        }
        let mut t = step;
        let mut next = None;
        for _ in 0..80 {
            let trial = project_psd_trace(&(&q + g.map(|z| z * c(t))), cap);
            let d = &trial - &q;
            let ft = objective.value(&trial);
            if ft >= f + T::lit(1e-4) * inner_re(&g, &d) {
                next = Some((trial, ft));
                break;
            }
            t *= T::lit(0.5);
        }
        iterations += 1;
        let Some((trial, ft)) = next else { break };
        if ft < f {
            monotone = false;
        }
        let gt = objective.gradient(&trial);
        let s = &trial - &q;
        let y = &g - &gt;
        let sy = inner_re(&s, &y);
        step = if sy > T::zero() {
            (inner_re(&s, &s) / sy).max(T::lit(1e-10)).min(T::lit(1e10))
        } else {
            (t * T::lit(2.0)).min(T::lit(1e10))
        };
        q = trial;
        f = ft;
        g = gt;
    }
    PgResult {
        q,
        value: f,
        iterations,
        converged,
        monotone,
    }
}

// ---------------------------------------------------------------------------
// Mode-space reference problems.

/// Data of the mode-space problem: maximize `sum ln(1 + s_m q_m)` subject to
/// `q >= 0`, `sum q <= p`, `sum e_m q_m >= gamma`.
#[derive(Debug, Clone)]
pub struct ModeProblem<T: Real> {
    pub s: Vec<T>,
    pub e: Vec<T>,
    pub p: T,
    pub gamma: T,
}

impl<T: Real> ModeProblem<T> {
    pub fn objective(&self, q: &[T]) -> T {
        self.s
            .iter()
            .zip(q)
            .map(|(&s, &x)| (s * x).ln_1p())
            .fold(T::zero(), |a, b| a + b)
    }

    pub fn energy(&self, q: &[T]) -> T {
        self.e.iter().zip(q).map(|(&e, &x)| e * x).fold(T::zero(), |a, b| a + b)
    }
}

/// Projection onto `{q >= 0, sum q <= p, e.q >= gamma}`.
///
/// The minimizer has the form `q = max(0, y - mu + eta e)`; `mu` enforces the
/// cap for a given `eta` and an outer bisection raises `eta` until the
/// energy floor holds.
pub fn project_mode_set<T: Real>(y: &[T], e: &[T], p: T, gamma: T) -> Vec<T> {
    let at = |eta: T| -> Vec<T> {
        let shifted: Vec<T> = y.iter().zip(e).map(|(&v, &w)| v + eta * w).collect();
        project_simplex_bisection(&shifted, p)
    };
    let energy = |q: &[T]| e.iter().zip(q).map(|(&w, &x)| w * x).fold(T::zero(), |a, b| a + b);
    let base = at(T::zero());
    if energy(&base) >= gamma {
        return base;
    }
    let mut lo = T::zero();
    let mut hi = T::one();
    let mut guard = 0;
    while energy(&at(hi)) < gamma {
        lo = hi;
        hi *= T::lit(2.0);
        guard += 1;
        if guard > 200 {
            return at(hi);
        }
    }
    for _ in 0..200 {
        let mid = (lo + hi) * T::lit(0.5);
        if mid <= lo || mid >= hi || hi - lo <= T::default_epsilon() * (T::one() + hi) {
            break;
        }
        if energy(&at(mid)) < gamma {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    at(hi)
}

/// Reference optimum of a mode-space problem by projected gradient ascent
/// with Barzilai-Borwein steps. `None` when the set is empty.
pub fn p2_reference<T: Real>(problem: &ModeProblem<T>, tol: T, max_iters: usize) -> Option<Vec<T>> {
    let n = problem.s.len();
    let emax = problem.e.iter().copied().fold(T::zero(), |a, b| a.max(b));
    if emax * problem.p < problem.gamma {
        return None;
    }
    let grad = |q: &[T]| -> Vec<T> { problem.s.iter().zip(q).map(|(&s, &x)| s / (T::one() + s * x)).collect() };
    let proj = |y: &[T]| project_mode_set(y, &problem.e, problem.p, problem.gamma);
    let mut q = proj(&vec![problem.p / T::lit(n as f64); n]);
    let mut f = problem.objective(&q);
    let mut g = grad(&q);
    let mut step = T::one();
    let mut flat = 0;
    for _ in 0..max_iters {
        let unit: Vec<T> = q.iter().zip(&g).map(|(&a, &b)| a + b).collect();
        let gm = proj(&unit)
            .iter()
            .zip(&q)
            .map(|(&a, &b)| (a - b) * (a - b))
            .fold(T::zero(), |a, b| a + b)
            .sqrt();
        if gm <= tol {
            break;
        }
        let mut t = step;
        let mut accepted = None;
        for _ in 0..80 {
            let y: Vec<T> = q.iter().zip(&g).map(|(&a, &b)| a + t * b).collect();
            let trial = proj(&y);
            let gain = trial
                .iter()
                .zip(&q)
                .zip(&g)
                .map(|((&a, &b), &d)| (a - b) * d)
                .fold(T::zero(), |a, b| a + b);
            let ft = problem.objective(&trial);
            if ft >= f + T::lit(1e-4) * gain {
                accepted = Some((trial, ft));
                break;
            }
            t *= T::lit(0.5);
        }
        let Some((trial, ft)) = accepted else { break };
        if ft - f <= T::default_epsilon() * (T::one() + f.abs()) {
            flat += 1;
            if flat >= 50 {
                q = trial;
                break;
            }
        } else {
            flat = 0;
        }
        let gt = grad(&trial);
        let (mut ss, mut sy) = (T::zero(), T::zero());
        for m in 0..n {
            let s = trial[m] - q[m];
            ss += s * s;
            sy += s * (g[m] - gt[m]);
        }
        step = if sy > T::zero() {
            (ss / sy).max(T::lit(1e-10)).min(T::lit(1e10))
        } else {
            (t * T::lit(2.0)).min(T::lit(1e10))
        };
        q = trial;
        f = ft;
        g = gt;
    }
    Some(q)
}

/// Best feasible point of the grid `{h Z^n}` over a mode problem with at
/// most three modes. `None` when no grid point is feasible.
pub fn brute_force_p2<T: Real>(problem: &ModeProblem<T>, h: T) -> Option<(Vec<T>, T)> {
    let n = problem.s.len();
    assert!((1..=3).contains(&n), "grid search supports one to three modes");
    let steps = (problem.p / h).to_f64_lossy().floor() as usize;
    let mut best: Option<(Vec<T>, T)> = None;
    let mut idx = vec![0usize; n];
    loop {
        let used: usize = idx.iter().sum();
        if used <= steps {
            let q: Vec<T> = idx.iter().map(|&k| T::lit(k as f64) * h).collect();
            if problem.energy(&q) >= problem.gamma {
                let f = problem.objective(&q);
                if best.as_ref().is_none_or(|b| f > b.1) {
                    best = Some((q, f));
                }
            }
        }
        // odometer
        let mut d = 0;
        loop {
            if d == n {
                return best;
            }
            idx[d] += 1;
            if idx[..=d].iter().sum::<usize>() <= steps {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
    }
}

/// Central-difference gradient along the Hermitian coordinate directions
/// `E_kk`, `E_kl + E_lk` and `i (E_kl - E_lk)`, returned in the convention
/// `f(Q + X) ~ f(Q) + Re Tr(G X)`.
pub fn fd_gradient<T: Real>(objective: &dyn Fn(&CMat<T>) -> T, q: &CMat<T>, eps: T) -> CMat<T> {
    let n = q.nrows();
    let two = T::lit(2.0);
    let diff = |dir: &CMat<T>| -> T {
        let plus = q + dir.map(|z| z * c(eps));
        let minus = q - dir.map(|z| z * c(eps));
        (objective(&plus) - objective(&minus)) / (two * eps)
    };
    let mut g = CMat::<T>::zeros(n, n);
    for k in 0..n {
        let mut e = CMat::<T>::zeros(n, n);
        e[(k, k)] = c(T::one());
        g[(k, k)] = c(diff(&e));
        for l in (k + 1)..n {
            let mut s = CMat::<T>::zeros(n, n);
            s[(k, l)] = c(T::one());
            s[(l, k)] = c(T::one());
            let mut a = CMat::<T>::zeros(n, n);
            a[(k, l)] = Complex::new(T::zero(), T::one());
            a[(l, k)] = Complex::new(T::zero(), -T::one());
            let ds = diff(&s);
            let da = diff(&a);
            // Re Tr(G S) = 2 Re G_lk, Re Tr(G A) = -2 Im G_lk with G_kl = conj(G_lk).
            let glk = Complex::new(ds / two, -da / two);
            g[(l, k)] = glk;
            g[(k, l)] = glk.conj();
        }
    }
    g
}

/// Step size used by the finite-difference checks: `1e-5 (1 + ||Q||_F)`.
pub fn fd_step<T: Real>(q: &CMat<T>) -> T {
    T::lit(1e-5) * (T::one() + fro(q))
}

/// Simulated estimation of `|g_hat_m|^2 = |v_m^H g|^2` for user `i` at
/// harvester `l`: the user beams full power along each column of `v` in turn
/// and the harvester reports its received power, optionally corrupted by
/// zero-mean Gaussian noise of standard deviation `noise`.
pub fn simulate_ghat_estimation<T: Real>(
    channels: &ChannelSet<T>,
    i: usize,
    l: usize,
    v: &CMat<T>,
    power: T,
    noise: T,
    seed: u64,
) -> Vec<T> {
    let g: &CVec<T> = channels.harvester(l, i);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let dist = Normal::new(0.0, noise.to_f64_lossy().max(0.0)).expect("finite noise level");
    (0..v.ncols())
        .map(|m| {
            let col = v.column(m);
            let beam = col.adjoint() * g;
            let received = power * beam[(0, 0)].norm_sqr();
            let reading = if noise > T::zero() {
                received + T::lit(dist.sample(&mut rng))
            } else {
                received
            };
            reading / power
        })
        .collect()
}
