//! Receding-horizon co-design of a rotary-wing UAV's trajectory, transmit
//! beamforming and artificial-noise covariance for multi-user secure
//! downlink against a known eavesdropper.
//!
//! The crate is organised bottom-up:
//!
//! * [`geometry`] – kinematics, feasibility checks and the propulsion power
//!   model with its convex upper bound.
//! * [`channel`] – line-of-sight array channels and their lifted forms.
//! * [`rates`] – achievable, eavesdropping and secrecy rates together with
//!   every first-order surrogate used by the convex subproblems.
//! * [`conic`] – a small modelling layer over a conic interior-point backend.
//! * [`trajectory`], [`beam`], [`an`] – the three alternating subproblems.
//! * [`mpc`] – the rolling-horizon engine and the benchmark schemes.
//! * [`harness`] – scenarios, presets, run logs, sweeps and log checks.

// Links the system OpenBLAS used by the SDP backend.
use openblas_src as _;

pub mod an;
pub mod beam;
pub mod channel;
pub mod conic;
pub mod dc;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod mpc;
pub mod rates;
pub mod trajectory;

pub use channel::{ChannelVector, NodeRole, NodeSite, PropagationParams};
pub use error::{Error, Result};
pub use geometry::{AirframeParams, KinematicLimits, UavState, Vec3};
pub use harness::log::{RunLog, SlotRecord};
pub use harness::scenario::Scenario;
pub use mpc::{DisturbanceModel, MpcConfig, ObjectiveTrace, Scheme};
pub use rates::{BeamSet, NoisePowers, RateReport};

/// Complex scalar used for array channels and lifted matrices.
pub type C64 = nalgebra::Complex<f64>;
/// Dense complex matrix (lifted channels, beamformers, AN covariance).
pub type CMat = nalgebra::DMatrix<C64>;
/// Dense complex vector.
pub type CVec = nalgebra::DVector<C64>;
