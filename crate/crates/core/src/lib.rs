//! Power-control policy solvers for a two-tier macrocell/small-cell
//! downlink with energy-harvesting small cells.
//!
//! The crate provides:
//! - average channel gains over random user positions ([`geometry`]);
//! - the CES battery chain ([`energy`]) and stage payoffs ([`payoff`]);
//! - a single-controller discounted stochastic game solver with
//!   enumeration, best-response, and incremental modes ([`game`]);
//! - a myopic Stackelberg baseline ([`stackelberg`]);
//! - a mean-field limit solved by forward-backward finite differences
//!   ([`mfg`]);
//! - a Monte Carlo outage harness and sweeps ([`sim`]);
//! - config-file loading and artifact export ([`config`], [`export`]).

pub mod config;
pub mod energy;
pub mod error;
pub mod export;
pub mod game;
pub mod geometry;
pub mod mdp;
pub mod mfg;
pub mod payoff;
pub mod qp;
pub mod sim;
pub mod stackelberg;

pub use error::{Error, Result};
