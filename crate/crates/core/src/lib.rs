//! Simulation library for an energy-aware small-cell broadcast caching system.
//!
//! A single small base station (SBS) serves a Poisson-distributed population of
//! users over a Rayleigh-fading shared channel. Time is slotted; one slot carries
//! one rateless-coded packet. The SBS runs a two-phase loop:
//!
//! * **placement** — keep a capacity-limited cache stocked with the files whose
//!   estimated request intensities solve a 0-1 knapsack, re-solved only when a
//!   change detector flags a shift in demand;
//! * **delivery** — each round, pick a (file, power) pair with a UCB-style
//!   bandit that treats cache updates as arm births/deaths, broadcast coded
//!   packets until every requester acknowledges or a deadline expires, and
//!   score the round by recoveries per unit of transmit energy.
//!
//! The crate splits along those lines: [`channel`] (user counts, SINR, outage),
//! [`rateless`] (per-round delivery analytics and event simulation),
//! [`popularity`] (request generation, intensity estimation, change detection),
//! [`placement`] (knapsack cache updates), [`bandit`] (arm selection and regret
//! accounting), and [`simulator`] (the full loop, baselines, and a segmented
//! video-streaming experiment). [`config`] and [`trace`] carry the scenario
//! schema and the self-describing output artifacts.

pub mod bandit;
pub mod channel;
pub mod config;
pub mod numeric;
pub mod placement;
pub mod popularity;
pub mod rateless;
pub mod simulator;
pub mod trace;

pub use config::{PolicyChoice, ScenarioConfig};
pub use rateless::{FileId, FileSpec};
pub use simulator::{
    compute_metrics, run_baseline_suite, run_scenario, run_video_experiment, RunOptions,
    RunOutput, RunSummary,
};
