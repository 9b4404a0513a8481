#![allow(dead_code)]

use harvestgame::config::ScenarioConfig;
use harvestgame::model::{draw_channel_set, interference_plus_noise, ChannelSet, TransmitCovariance};
use harvestgame::oracle::ModeProblem;
use harvestgame::waterfill::{whiten, WhitenedProblem};
use harvestgame::CMat;
use nalgebra::Complex;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn gaussian_matrix(rows: usize, cols: usize, rng: &mut ChaCha20Rng) -> CMat<f64> {
    let s = 0.5f64.sqrt();
    CMat::<f64>::from_fn(rows, cols, |_, _| {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        Complex::new(re * s, im * s)
    })
}

/// Random PSD covariance with trace `power * fill`.
pub fn random_covariance(mt: usize, power: f64, fill: f64, seed: u64) -> TransmitCovariance<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let a = gaussian_matrix(mt, mt, &mut rng);
    let m = &a * a.adjoint();
    let tr: f64 = (0..mt).map(|k| m[(k, k)].re).sum();
    let scaled = m.map(|z| z * (power * fill / tr));
    TransmitCovariance::new(scaled, power).expect("random covariance is valid")
}

pub fn to_modes(p: &WhitenedProblem<f64>) -> ModeProblem<f64> {
    ModeProblem {
        s: p.sigma_sq.clone(),
        e: p.g_hat_sq.clone(),
        p: p.power_limit,
        gamma: p.energy_floor,
    }
}

/// User 0's local problem on a two-user draw with the other user at a
/// random covariance; the floor is `frac` of the attainable maximum.
pub fn random_p2(mt: usize, power: f64, frac: f64, seed: u64) -> WhitenedProblem<f64> {
    let ch = draw_channel_set::<f64>(2, 1, mt, mt, seed);
    let covs = vec![
        TransmitCovariance::zeros(mt, power),
        random_covariance(mt, power, 1.0, seed ^ 0xabc),
    ];
    let r = interference_plus_noise(0, &covs, &ch).unwrap();
    let probe = whiten(ch.user_channel(0), &r, ch.harvester(0, 0), power, 0.0).unwrap();
    let gamma = frac * probe.max_energy();
    whiten(ch.user_channel(0), &r, ch.harvester(0, 0), power, gamma).unwrap()
}

pub fn paper(seed: u64, gamma: f64) -> ScenarioConfig {
    ScenarioConfig::preset("paper-K3").unwrap().with_seed(seed).with_gamma(gamma)
}

pub fn small_config(k: usize, m: usize, gamma: f64, seed: u64) -> ScenarioConfig {
    ScenarioConfig::from_value(serde_json::json!({
        "k": k, "mt": m, "mr": m,
        "power_limits": vec![8.0; k],
        "energy_requirements": [gamma],
        "seed": seed,
    }))
    .unwrap()
}

pub fn relative(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

pub fn fro(m: &CMat<f64>) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Two users, two harvesters; harvester `l` hears mostly user `l`.
pub fn disjoint_harvesters(seed: u64) -> ChannelSet<f64> {
    let base = draw_channel_set::<f64>(2, 2, 4, 4, seed);
    let mut links = Vec::new();
    for rx in 0..2 {
        for tx in 0..2 {
            let s = if rx == tx { 1.0 } else { 0.3 };
            links.push(base.link(rx, tx).map(|z| z * s));
        }
    }
    let harvesters = (0..2)
        .map(|l| {
            (0..2)
                .map(|i| {
                    let s = if l == i { 1.0 } else { 0.05 };
                    base.harvester(l, i).map(|z| z * s)
                })
                .collect()
        })
        .collect();
    ChannelSet::from_parts(seed, links, harvesters).unwrap()
}

pub fn disjoint_config(seed: u64) -> ScenarioConfig {
    ScenarioConfig::from_value(serde_json::json!({
        "k": 2, "mt": 4, "mr": 4, "power_limits": [8.0, 8.0],
        "energy_requirements": [20.0, 12.0], "seed": seed,
    }))
    .unwrap()
}
