//! Two-stage canopy/carbon mapping pipeline.
//!
//! Stage 1 regresses canopy top height from multi-band imagery supervised by
//! sparse height footprints; stage 2 regresses aboveground carbon density
//! from the dense height map with a five-member CNN ensemble. The carbon map
//! is then stratified into high-carbon-stock classes, masked with plantation
//! and urban overlays, and summarized with zonal statistics.
//!
//! Everything runs against a built-in synthetic world ([`synth`]) with a
//! known noise floor, so the full pipeline is verifiable on one desk-scale
//! machine. See the `hcsmap` binary for the command-line front end.

pub mod canopy;
pub mod carbon;
pub mod cli;
pub mod evalstats;
pub mod grid;
pub mod hcs;
pub mod nn;
pub mod synth;
