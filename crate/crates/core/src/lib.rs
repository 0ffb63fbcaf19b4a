//! Simulator for sparsity-map based beam and channel acquisition in wideband
//! single-carrier massive MIMO with hybrid beamforming.
//!
//! The pipeline runs in two modes. In slow time, pre-structured search beams
//! scan the sector, an adaptive (or plain) spatio-temporal matched filter
//! estimates every user's joint angle-delay power profile, and a two-stage CFAR
//! turns it into a binary sparsity map. Channel covariances are rebuilt from
//! map and powers, then drive a generalized-eigenvector analog beamformer per
//! user group. In fast time, RR-MMSE, beamspace-aware LS and conventional LS
//! estimate the effective channels in the reduced beamspace.
//!
//! [`harness`] wires the stages into seeded Monte Carlo sweeps.

pub mod acquisition;
pub mod beam_design;
pub mod covariance;
pub mod error;
pub mod estimation;
pub mod harness;
pub mod numerics;
pub mod scenario;
pub mod signals;

pub use error::{Error, Result};
pub use numerics::{CMatrix, CVector, C64};
