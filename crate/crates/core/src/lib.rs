//! Observable simulations of restricted gravitational systems.
//!
//! The crate builds reduced single-degree-of-freedom copies of a recorded
//! trajectory, checks them against a resolution-limited observer, and runs a
//! force-injection protocol that tells reduced copies apart from full ones.
//!
//! Examples, one per capability:
//!
//! - `circular_orbit`: integrate the Sun-Earth-Moon scenario
//! - `tellurion_reduction`: reduce a recording to one driven coordinate
//! - `observable_equivalence`: quantized observers and playback
//! - `force_injection`: the push test over every candidate kind
//! - `oculus_frames`: register matrix, pixel frames, PGM, controller mapping
//! - `blind_trial`: a scripted session with a hidden candidate

pub mod config;
pub mod distinguisher;
pub mod dynamics;
pub mod interp;
pub mod io;
pub mod observer;
pub mod reduction;
pub mod scenario;
pub mod session;
pub mod vrpipe;
