//! Simulation and verification toolkit for diverse equity-market models.
//!
//! The modules follow the flow of a typical experiment: build a time grid and
//! Brownian increments ([`paths`]), integrate a market model ([`markets`]),
//! run portfolios on the resulting prices ([`portfolios`]), then check the
//! ranked dynamics, diversity, relative-arbitrage and pricing statements
//! ([`ranks`], [`diversity`], [`arbitrage`], [`hedging`]).

pub mod arbitrage;
pub mod diversity;
pub mod error;
pub mod hedging;
pub mod markets;
pub mod mc;
pub mod numeric;
pub mod paths;
pub mod portfolios;
pub mod ranks;

pub use error::{Error, Result};
