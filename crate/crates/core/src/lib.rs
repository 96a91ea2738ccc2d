//! Off-environment policy evaluation on finite MDPs.
//!
//! A target policy is evaluated in a "real" environment using transitions
//! logged there plus rollouts from a mismatched simulator. The estimators
//! reweight simulator occupancy by a learned ratio `w = d_te / d_tr`, whose
//! fit is stabilized by an auxiliary density ratio `beta = d_tr / mu`.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod env;
pub mod error;
pub mod features;
pub mod harness;
pub mod mdp;
pub mod measure;
pub mod model;
pub mod qest;
pub mod ratio;
pub mod rng;
pub mod weight;

pub use error::{Error, Result};
