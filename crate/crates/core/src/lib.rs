//! Stochastic models of distributed coalition formation for spectrum sharing
//! in large interference channels.
//!
//! The crate is split along the lines of the model:
//!
//! * [`chain`]: closed-form acceptance and transition probabilities of the
//!   coalition formation process and the absorbing death chain built from
//!   them, including absorption-time statistics.
//! * [`rate`]: per-member throughput of a coalition cluster and the
//!   cluster-size optimizer.
//! * [`netsim`]: geometric interference networks: placement, path-loss
//!   gains, SINR, coalition rates and ordered interference lists.
//! * [`cfp`]: an executable coalition formation protocol with Monte Carlo
//!   drivers for the abstract and geometric network models.
//! * [`validation`]: the oracle suite behind `coalsim validate`.

pub mod cfp;
pub mod chain;
mod error;
pub mod netsim;
pub mod rate;
pub mod validation;

pub use error::{Error, Result};
