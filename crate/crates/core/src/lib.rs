//! Predictor-feedback control of switched linear systems with a long input
//! delay, where the predictor is built from the average of the modes
//! because the future switching signal is unknown.
//!
//! Modules, bottom-up: [`matops`] (dense numerics), [`switching`]
//! (dwell-time signals), [`plant`] (exact simulation with a delayed input),
//! [`predictor`] (average and exact predictors, backstepping pair),
//! [`certificates`] (stability constants and trajectory monitors) and
//! [`harness`] (scenario files and experiment runners).

pub mod certificates;
pub mod error;
pub mod harness;
pub mod matops;
pub mod plant;
pub mod predictor;
pub mod switching;

pub use certificates::{certify, Certificate};
pub use error::{Error, Result};
pub use harness::{HarnessError, Scenario};
pub use matops::{Matrix, Vector, NORM_LABEL};
pub use plant::{simulate, Grid, InputHistory, Mode, SwitchedPlant, Trajectory};
pub use predictor::{AverageSystem, PredictionContext};
pub use switching::SwitchingSignal;
