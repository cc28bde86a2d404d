//! Equilibrium computation, simulation and identification for first-price
//! auctions where the number of bidders is not observed.

pub mod competition;
pub mod detect;
pub mod endogenous;
pub mod equilibrium;
pub mod error;
pub mod numeric;
pub mod participation;
pub mod real;
pub mod recovery;
pub mod simulate;

pub use error::{Error, Result};
pub use real::Real;

pub type ValueQuantile64 = equilibrium::ValueQuantile<f64>;
pub type BidQuantile64 = equilibrium::BidQuantile<f64>;
pub type CompetitionPmf64 = equilibrium::CompetitionPmf<f64>;
pub type WinningBidMixture64 = equilibrium::WinningBidMixture<f64>;
