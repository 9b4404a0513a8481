//! Transmit-covariance games for MIMO interference channels whose
//! transmitters must jointly power energy harvesters.
//!
//! Generic code is written over [`Real`] (`f32` or `f64`); the aliases at the
//! crate root fix the scalar to `f64`, with `*32` variants for `f32`.

#![allow(clippy::too_many_arguments, clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod coop;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod model;
pub mod multiharvester;
pub mod noncoop;
pub mod oracle;
pub mod scalar;
pub mod waterfill;

pub use config::ScenarioConfig;
pub use error::{Error, Result};
pub use scalar::{CMat, CVec, Real};

pub type ChannelSet = model::ChannelSet<f64>;
pub type ChannelSet32 = model::ChannelSet<f32>;
pub type TransmitCovariance = model::TransmitCovariance<f64>;
pub type TransmitCovariance32 = model::TransmitCovariance<f32>;
pub type WhitenedProblem = waterfill::WhitenedProblem<f64>;
pub type WhitenedProblem32 = waterfill::WhitenedProblem<f32>;
pub type WaterfillSolution = waterfill::WaterfillSolution<f64>;
pub type WaterfillSolution32 = waterfill::WaterfillSolution<f32>;
pub type GameTrace = noncoop::GameTrace<f64>;
pub type GameTrace32 = noncoop::GameTrace<f32>;
pub type ExpansionPoint = coop::ExpansionPoint<f64>;
pub type ExpansionPoint32 = coop::ExpansionPoint<f32>;
pub type BargainOutcome = coop::BargainOutcome<f64>;
pub type BargainOutcome32 = coop::BargainOutcome<f32>;
pub type CoopTrace = coop::CoopTrace<f64>;
pub type CoopTrace32 = coop::CoopTrace<f32>;
pub type MultiTrace = multiharvester::MultiTrace<f64>;
pub type MultiTrace32 = multiharvester::MultiTrace<f32>;
