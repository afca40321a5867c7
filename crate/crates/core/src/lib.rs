//! Beam-delay domain channel estimation for wideband XL-MIMO arrays.
//!
//! The library synthesizes spatial-frequency uplink channels for a uniform
//! linear array large enough that spherical wavefronts (near-field) and
//! frequency-dependent array responses (beam squint) both matter, observes
//! them through a hybrid phase-shifter precoder, and recovers them from the
//! compressed noisy measurements.
//!
//! Pipeline, end to end:
//!
//! 1. [`channel`] — ground-truth channels as sums of paths, each a complex
//!    gain together with a sine-angle, a slope (curvature of the wavefront
//!    across the array), and a delay.
//! 2. [`grid`] / [`dictionary`] — a uniform angle-slope-delay sampling grid
//!    and the dense transformation matrix `U` whose columns are the steering
//!    vectors of the grid tuples, plus the analytic partial derivatives of
//!    those columns used for off-grid refinement.
//! 3. [`measurement`] — block-diagonal hybrid precoding and calibrated AWGN.
//! 4. [`hmp`] — hybrid message passing: joint MMSE-style estimation of the
//!    sparse beam-delay gains and their Bernoulli-Gaussian hyperparameters.
//! 5. [`mdgpp`] — two-stage refinement that prunes the initial estimate and
//!    learns per-grid-point perturbations via box-constrained QPs on a
//!    Taylor-linearized dictionary.
//! 6. [`baselines`] / [`experiment`] — a greedy simultaneous-OMP reference,
//!    a genie-aided least-squares oracle, and the Monte-Carlo experiment
//!    driver with CSV output.

pub mod baselines;
pub mod channel;
pub mod config;
pub mod dictionary;
pub mod error;
pub mod experiment;
pub mod grid;
pub mod hmp;
pub mod mdgpp;
pub mod measurement;
pub mod selftest;

pub use config::ScenarioConfig;
pub use error::{Error, Result};

/// Complex scalar used throughout.
pub type C64 = num_complex::Complex64;
/// Dense complex matrix (column-major).
pub type CMat = nalgebra::DMatrix<C64>;
/// Dense complex vector.
pub type CVec = nalgebra::DVector<C64>;
/// Dense real matrix.
pub type RMat = nalgebra::DMatrix<f64>;
/// Dense real vector.
pub type RVec = nalgebra::DVector<f64>;

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
