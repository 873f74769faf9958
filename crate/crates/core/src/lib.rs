//! Simulator of a learning-driven flexible-duplex spectrum-sharing system.
//!
//! Spectrum sensors report interference to an opportunity-map server;
//! secondary pairs access the channel with slotted ALOHA, choosing per slot
//! between silence, half duplex and full duplex; each secondary transmitter
//! learns its access probability with REINFORCE, and the learned
//! probabilities are turned back into the access threshold the server uses.
//!
//! Module map:
//! - [`radio`]: placement, path loss, fading, interference, SINR
//! - [`opmap`]: opportunity values and the threshold inverse
//! - [`learner`]: the per-transmitter learning automaton
//! - [`mac`]: slotted-ALOHA slot and epoch engine, area spectral efficiency
//! - [`control`]: the four-step cycle, latency model, experiments, baseline
//! - [`config`], [`trace`], [`summary`], [`sweep`]: configuration and output

pub mod config;
pub mod control;
pub mod error;
pub mod learner;
pub mod mac;
pub mod opmap;
pub mod radio;
pub mod rng;
pub mod summary;
pub mod sweep;
pub mod trace;
pub mod units;

pub use config::SimConfig;
pub use control::{
    cycle_latency, run_experiment, CycleTiming, Experiment, ExperimentOutcome, ExperimentReport,
};
pub use error::{Error, Result};
