//! Channel/signal model: channel draws, transmit covariances, information
//! rate and harvested power.
//!
//! Receiver `i` sees `y_i = H_ii x_i + sum_{j != i} H_ij x_j + z_i` with unit
//! noise power; harvester `l` receives `sum_i g_li^H x_i`. Rates are in nats.

use nalgebra::Complex;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::config::ScenarioConfig;
use crate::error::{Error, Result};
use crate::linalg::{self, hermitian_deviation, hermitize, min_eigenvalue, quad_form, trace_re};
use crate::scalar::{CMat, CVec, Real};

/// Every channel of one scenario draw.
///
/// `link(rx, tx)` is the `M_r x M_t` matrix from transmitter `tx` to
/// receiver `rx`; the diagonal links are the user channels `H_ii`.
/// `harvester(l, i)` is the conjugate channel vector `g_li` from transmitter
/// `i` to harvester `l`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet<T: Real> {
    k: usize,
    l: usize,
    mt: usize,
    mr: usize,
    seed: u64,
    links: Vec<CMat<T>>,
    harvesters: Vec<Vec<CVec<T>>>,
}

impl<T: Real> ChannelSet<T> {
    /// Assembles a channel set from explicit matrices.
    ///
    /// `links[rx * k + tx]` is the channel from `tx` to `rx`;
    /// `harvesters[l][i]` is `g_li`.
    pub fn from_parts(
        seed: u64,
        links: Vec<CMat<T>>,
        harvesters: Vec<Vec<CVec<T>>>,
    ) -> Result<Self> {
        let k = (links.len() as f64).sqrt().round() as usize;
        if k == 0 || k * k != links.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} links is not a square number of users",
                links.len()
            )));
        }
        let (mr, mt) = links[0].shape();
        if let Some(bad) = links.iter().find(|h| h.shape() != (mr, mt)) {
            return Err(Error::DimensionMismatch(format!(
                "link of shape {:?}, expected {:?}",
                bad.shape(),
                (mr, mt)
            )));
        }
        if harvesters.is_empty() {
            return Err(Error::DimensionMismatch("no harvester channels".into()));
        }
        for row in &harvesters {
            if row.len() != k || row.iter().any(|g| g.len() != mt) {
                return Err(Error::DimensionMismatch(format!(
                    "harvester channels must be {k} vectors of length {mt}"
                )));
            }
        }
        Ok(Self {
            k,
            l: harvesters.len(),
            mt,
            mr,
            seed,
            links,
            harvesters,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }
    pub fn l(&self) -> usize {
        self.l
    }
    pub fn mt(&self) -> usize {
        self.mt
    }
    pub fn mr(&self) -> usize {
        self.mr
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// `H_ii`.
    pub fn user_channel(&self, i: usize) -> &CMat<T> {
        self.link(i, i)
    }

    /// `H_{rx,tx}`: channel from transmitter `tx` into receiver `rx`.
    pub fn link(&self, rx: usize, tx: usize) -> &CMat<T> {
        &self.links[rx * self.k + tx]
    }

    /// `g_li`.
    pub fn harvester(&self, l: usize, i: usize) -> &CVec<T> {
        &self.harvesters[l][i]
    }

    /// All `g_li` of harvester `l`, indexed by user.
    pub fn harvester_row(&self, l: usize) -> &[CVec<T>] {
        &self.harvesters[l]
    }

    /// Same set with every cross channel scaled by `s` (0 decouples the users).
    pub fn with_cross_scaled(&self, s: T) -> Self {
        let mut out = self.clone();
        for rx in 0..self.k {
            for tx in 0..self.k {
                if rx != tx {
                    out.links[rx * self.k + tx] = self.link(rx, tx).map(|z| z * s);
                }
            }
        }
        out
    }

    /// Keeps only the listed harvesters, in the given order.
    pub fn select_harvesters(&self, ids: &[usize]) -> Result<Self> {
        let rows = ids
            .iter()
            .map(|&l| {
                self.harvesters
                    .get(l)
                    .cloned()
                    .ok_or_else(|| Error::DimensionMismatch(format!("no harvester {l}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_parts(self.seed, self.links.clone(), rows)
    }

    pub fn to_f64(&self) -> ChannelSet<f64> {
        let conv_m = |m: &CMat<T>| m.map(|z| Complex::new(z.re.to_f64_lossy(), z.im.to_f64_lossy()));
        let conv_v = |v: &CVec<T>| v.map(|z| Complex::new(z.re.to_f64_lossy(), z.im.to_f64_lossy()));
        ChannelSet {
            k: self.k,
            l: self.l,
            mt: self.mt,
            mr: self.mr,
            seed: self.seed,
            links: self.links.iter().map(conv_m).collect(),
            harvesters: self
                .harvesters
                .iter()
                .map(|row| row.iter().map(conv_v).collect())
                .collect(),
        }
    }

    pub fn from_f64(src: &ChannelSet<f64>) -> Self {
        let conv_m = |m: &CMat<f64>| m.map(|z| Complex::new(T::lit(z.re), T::lit(z.im)));
        let conv_v = |v: &CVec<f64>| v.map(|z| Complex::new(T::lit(z.re), T::lit(z.im)));
        ChannelSet {
            k: src.k,
            l: src.l,
            mt: src.mt,
            mr: src.mr,
            seed: src.seed,
            links: src.links.iter().map(conv_m).collect(),
            harvesters: src
                .harvesters
                .iter()
                .map(|row| row.iter().map(conv_v).collect())
                .collect(),
        }
    }
}

/// Draws a channel set with i.i.d. `CN(0, 1)` entries.
///
/// The stream is `ChaCha20Rng::seed_from_u64(config.seed)` feeding
/// `StandardNormal` samples scaled by `sqrt(1/2)`, real part first. Entries
/// are consumed in this order: user channels `H_00, H_11, ...` (row-major),
/// then cross channels with `rx` ascending and `tx` ascending within `rx`,
/// then harvester vectors with `l` ascending and user ascending within `l`.
pub fn gen_channel_set<T: Real>(config: &ScenarioConfig) -> ChannelSet<T> {
    draw_channel_set(config.k, config.l, config.mt, config.mr, config.seed)
}

pub fn draw_channel_set<T: Real>(k: usize, l: usize, mt: usize, mr: usize, seed: u64) -> ChannelSet<T> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let scale = std::f64::consts::FRAC_1_SQRT_2;
    let mut entry = || {
        let re: f64 = StandardNormal.sample(&mut rng);
        let im: f64 = StandardNormal.sample(&mut rng);
        Complex::new(T::lit(re * scale), T::lit(im * scale))
    };
    let draw_matrix = |entry: &mut dyn FnMut() -> Complex<T>| {
        let mut m = CMat::zeros(mr, mt);
        for r in 0..mr {
            for c in 0..mt {
                m[(r, c)] = entry();
            }
        }
        m
    };
    let mut links = vec![CMat::zeros(mr, mt); k * k];
    for i in 0..k {
        links[i * k + i] = draw_matrix(&mut entry);
    }
    for rx in 0..k {
        for tx in 0..k {
            if rx != tx {
                links[rx * k + tx] = draw_matrix(&mut entry);
            }
        }
    }
    let harvesters = (0..l)
        .map(|_| {
            (0..k)
                .map(|_| CVec::from_iterator(mt, (0..mt).map(|_| entry())))
                .collect()
        })
        .collect();
    ChannelSet {
        k,
        l,
        mt,
        mr,
        seed,
        links,
        harvesters,
    }
}

/// Hermitian PSD transmit covariance `Q_i` with its trace budget `P_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransmitCovariance<T: Real> {
    matrix: CMat<T>,
    power_budget: T,
}

/// Measured invariant margins of a covariance.
#[derive(Debug, Clone, Copy)]
pub struct CovarianceCheck<T> {
    pub hermitian_deviation: T,
    pub min_eigenvalue: T,
    pub trace: T,
}

impl<T: Real> TransmitCovariance<T> {
    /// Validates the invariants (Hermitian to 1e-10, PSD to -1e-9, trace
    /// within budget + 1e-8) and keeps the Hermitian part.
    pub fn new(matrix: CMat<T>, power_budget: T) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::DimensionMismatch("covariance must be square".into()));
        }
        let cov = Self {
            matrix,
            power_budget,
        };
        let c = cov.check();
        let scale = T::one() + power_budget;
        if c.hermitian_deviation > T::tol(1e-10) * scale {
            return Err(Error::InvalidConfig(format!(
                "covariance not Hermitian (deviation {})",
                c.hermitian_deviation
            )));
        }
        if c.min_eigenvalue < -T::tol(1e-9) * scale {
            return Err(Error::InvalidConfig(format!(
                "covariance not PSD (min eigenvalue {})",
                c.min_eigenvalue
            )));
        }
        if c.trace > power_budget + T::tol(1e-8) * scale {
            return Err(Error::InvalidConfig(format!(
                "covariance trace {} exceeds budget {}",
                c.trace, power_budget
            )));
        }
        Ok(Self {
            matrix: hermitize(&cov.matrix),
            power_budget,
        })
    }

    /// Hermitian part of `matrix`, trusted to be PSD and within budget.
    pub(crate) fn from_trusted(matrix: CMat<T>, power_budget: T) -> Self {
        Self {
            matrix: hermitize(&matrix),
            power_budget,
        }
    }

    pub fn zeros(mt: usize, power_budget: T) -> Self {
        Self {
            matrix: CMat::zeros(mt, mt),
            power_budget,
        }
    }

    /// `(P / M_t) I`.
    pub fn uniform(mt: usize, power_budget: T) -> Self {
        Self {
            matrix: linalg::scaled_identity(mt, power_budget / T::lit(mt as f64)),
            power_budget,
        }
    }

    /// Rank-one beam `P g g^H / |g|^2` that maximizes `g^H Q g`.
    pub fn energy_beam(g: &CVec<T>, power_budget: T) -> Self {
        let norm_sq = g.norm_squared();
        if norm_sq <= T::zero() {
            return Self::zeros(g.len(), power_budget);
        }
        let m = linalg::outer(g).map(|z| z * (power_budget / norm_sq));
        Self::from_trusted(m, power_budget)
    }

    pub fn matrix(&self) -> &CMat<T> {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMat<T> {
        self.matrix
    }

    pub fn power_budget(&self) -> T {
        self.power_budget
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn trace(&self) -> T {
        trace_re(&self.matrix)
    }

    /// `g^H Q g`.
    pub fn energy(&self, g: &CVec<T>) -> T {
        quad_form(&self.matrix, g)
    }

    pub fn scaled(&self, s: T) -> Self {
        Self::from_trusted(self.matrix.map(|z| z * s), self.power_budget)
    }

    pub fn check(&self) -> CovarianceCheck<T> {
        CovarianceCheck {
            hermitian_deviation: hermitian_deviation(&self.matrix),
            min_eigenvalue: min_eigenvalue(&self.matrix),
            trace: self.trace(),
        }
    }

    pub fn is_valid(&self) -> bool {
        let c = self.check();
        let scale = T::one() + self.power_budget;
        c.hermitian_deviation <= T::tol(1e-10) * scale
            && c.min_eigenvalue >= -T::tol(1e-9) * scale
            && c.trace <= self.power_budget + T::tol(1e-8) * scale
    }

    /// Frobenius distance between two covariances.
    pub fn distance(&self, other: &Self) -> T {
        linalg::frobenius(&(&self.matrix - &other.matrix))
    }
}

fn check_len<T: Real>(covs: &[TransmitCovariance<T>], channels: &ChannelSet<T>) -> Result<()> {
    if covs.len() != channels.k() {
        return Err(Error::DimensionMismatch(format!(
            "{} covariances for {} users",
            covs.len(),
            channels.k()
        )));
    }
    if let Some(q) = covs.iter().find(|q| q.dim() != channels.mt()) {
        return Err(Error::DimensionMismatch(format!(
            "covariance of size {}, expected {}",
            q.dim(),
            channels.mt()
        )));
    }
    Ok(())
}

/// `R_i = sum_{j != i} H_ij Q_j H_ij^H + I`.
pub fn interference_plus_noise<T: Real>(
    i: usize,
    covariances: &[TransmitCovariance<T>],
    channels: &ChannelSet<T>,
) -> Result<CMat<T>> {
    check_len(covariances, channels)?;
    if i >= channels.k() {
        return Err(Error::UserIndex { index: i, k: channels.k() });
    }
    let mut r = linalg::identity(channels.mr());
    for (j, q) in covariances.iter().enumerate() {
        if j != i {
            let h = channels.link(i, j);
            r += h * q.matrix() * h.adjoint();
        }
    }
    Ok(hermitize(&r))
}

/// `log |I + R^{-1} H Q H^H|`, evaluated as `sum ln(1 + lambda_k)` over the
/// eigenvalues of the whitened matrix `L^{-1} H Q H^H L^{-H}` (`R = L L^H`).
pub fn rate_given_interference<T: Real>(h: &CMat<T>, q: &CMat<T>, r: &CMat<T>) -> Result<T> {
    if h.nrows() != r.nrows() || h.ncols() != q.nrows() {
        return Err(Error::DimensionMismatch("rate operands".into()));
    }
    let chol = linalg::cholesky(r, "interference-plus-noise matrix")?;
    let w = chol
        .l_dirty()
        .solve_lower_triangular(h)
        .ok_or(Error::NotPositiveDefinite("interference-plus-noise matrix"))?;
    let m = hermitize(&(&w * q * w.adjoint()));
    let eig = m.symmetric_eigen();
    Ok(eig
        .eigenvalues
        .iter()
        .map(|&v| v.max(T::zero()).ln_1p())
        .fold(T::zero(), |a, b| a + b))
}

/// `r_i(Q_i, Q_{-i})` in nats.
pub fn info_rate<T: Real>(
    i: usize,
    covariances: &[TransmitCovariance<T>],
    channels: &ChannelSet<T>,
) -> Result<T> {
    let r = interference_plus_noise(i, covariances, channels)?;
    rate_given_interference(channels.user_channel(i), covariances[i].matrix(), &r)
}

/// Rates of all users.
pub fn all_rates<T: Real>(
    covariances: &[TransmitCovariance<T>],
    channels: &ChannelSet<T>,
) -> Result<Vec<T>> {
    (0..channels.k())
        .map(|i| info_rate(i, covariances, channels))
        .collect()
}

/// `sum_i g_i^H Q_i g_i` at one harvester (conversion efficiency 1).
pub fn harvested_power<T: Real>(covariances: &[TransmitCovariance<T>], harvester: &[CVec<T>]) -> T {
    covariances
        .iter()
        .zip(harvester)
        .map(|(q, g)| q.energy(g))
        .fold(T::zero(), |a, b| a + b)
}

/// Per-user contributions `beta_i = g_i^H Q_i g_i` at one harvester.
pub fn contributions<T: Real>(covariances: &[TransmitCovariance<T>], harvester: &[CVec<T>]) -> Vec<T> {
    covariances.iter().zip(harvester).map(|(q, g)| q.energy(g)).collect()
}

// ---------------------------------------------------------------------------
// JSON schema "v1": complex entries as [re, im], matrices as arrays of rows.

pub const CHANNEL_SCHEMA_VERSION: &str = "v1";

type Entry = [f64; 2];

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CrossDoc {
    rx: usize,
    tx: usize,
    matrix: Vec<Vec<Entry>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChannelSetDoc {
    version: String,
    seed: u64,
    k: usize,
    l: usize,
    mt: usize,
    mr: usize,
    user_channels: Vec<Vec<Vec<Entry>>>,
    cross_channels: Vec<CrossDoc>,
    harvester_channels: Vec<Vec<Vec<Entry>>>,
}

fn matrix_doc(m: &CMat<f64>) -> Vec<Vec<Entry>> {
    (0..m.nrows())
        .map(|r| (0..m.ncols()).map(|c| [m[(r, c)].re, m[(r, c)].im]).collect())
        .collect()
}

fn matrix_from_doc(rows: &[Vec<Entry>], mr: usize, mt: usize, what: &str) -> Result<CMat<f64>> {
    if rows.len() != mr || rows.iter().any(|r| r.len() != mt) {
        return Err(Error::Schema(format!("{what} must be {mr} x {mt}")));
    }
    Ok(CMat::from_fn(mr, mt, |r, c| Complex::new(rows[r][c][0], rows[r][c][1])))
}

impl ChannelSet<f64> {
    pub fn to_json(&self) -> String {
        let doc = ChannelSetDoc {
            version: CHANNEL_SCHEMA_VERSION.into(),
            seed: self.seed,
            k: self.k,
            l: self.l,
            mt: self.mt,
            mr: self.mr,
            user_channels: (0..self.k).map(|i| matrix_doc(self.user_channel(i))).collect(),
            cross_channels: (0..self.k)
                .flat_map(|rx| (0..self.k).filter(move |&tx| tx != rx).map(move |tx| (rx, tx)))
                .map(|(rx, tx)| CrossDoc {
                    rx,
                    tx,
                    matrix: matrix_doc(self.link(rx, tx)),
                })
                .collect(),
            harvester_channels: self
                .harvesters
                .iter()
                .map(|row| row.iter().map(|g| g.iter().map(|z| [z.re, z.im]).collect()).collect())
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("channel set serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: ChannelSetDoc = serde_json::from_str(s).map_err(|e| Error::Schema(e.to_string()))?;
        if doc.version != CHANNEL_SCHEMA_VERSION {
            return Err(Error::Schema(format!(
                "unsupported channel schema version `{}`",
                doc.version
            )));
        }
        let (k, mt, mr) = (doc.k, doc.mt, doc.mr);
        if doc.user_channels.len() != k {
            return Err(Error::Schema(format!("user_channels must have {k} entries")));
        }
        if doc.cross_channels.len() != k * (k - 1) {
            return Err(Error::Schema(format!(
                "cross_channels must have {} entries",
                k * (k - 1)
            )));
        }
        let mut links: Vec<Option<CMat<f64>>> = vec![None; k * k];
        for (i, m) in doc.user_channels.iter().enumerate() {
            links[i * k + i] = Some(matrix_from_doc(m, mr, mt, "user channel")?);
        }
        for c in &doc.cross_channels {
            if c.rx >= k || c.tx >= k || c.rx == c.tx {
                return Err(Error::Schema(format!("bad cross channel index ({}, {})", c.rx, c.tx)));
            }
            let slot = &mut links[c.rx * k + c.tx];
            if slot.is_some() {
                return Err(Error::Schema(format!("duplicate cross channel ({}, {})", c.rx, c.tx)));
            }
            *slot = Some(matrix_from_doc(&c.matrix, mr, mt, "cross channel")?);
        }
        let links = links.into_iter().map(|m| m.expect("all links present")).collect();
        if doc.harvester_channels.len() != doc.l {
            return Err(Error::Schema(format!("harvester_channels must have {} entries", doc.l)));
        }
        let mut harvesters = Vec::with_capacity(doc.l);
        for row in &doc.harvester_channels {
            if row.len() != k || row.iter().any(|g| g.len() != mt) {
                return Err(Error::Schema(format!(
                    "each harvester needs {k} vectors of length {mt}"
                )));
            }
            harvesters.push(
                row.iter()
                    .map(|g| CVec::from_iterator(mt, g.iter().map(|e| Complex::new(e[0], e[1]))))
                    .collect(),
            );
        }
        ChannelSet::from_parts(doc.seed, links, harvesters)
    }
}
