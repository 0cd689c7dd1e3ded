//! Fock-state wave-packet dynamics for arbitrary (S, L, H) quantum systems.
//!
//! The crate simulates a quantum system coupled to a traveling wave packet
//! carrying a definite (or superposed/mixed) photon number, via coupled
//! hierarchies of generalized density operators, plus output-field
//! observables, multi-packet generalizations, and an independent time-bin
//! collision-model oracle for cross-validation.

pub mod error;
pub mod fit;
pub mod hierarchy;
pub mod integrator;
pub mod npacket;
pub mod operators;
pub mod oracle;
pub mod sim;
pub mod twomode;
pub mod wavepacket;

pub use error::Error;
pub use fit::{fit_model2, FitResult, PowerLaw, SaturationPowerLaw};
pub use hierarchy::{
    assemble_total, combine_outputs, excitation_probability, hierarchy_rhs, initial_state,
    FieldCombination, FockHierarchyState, FockSystem, OutputAccumulator,
};
pub use integrator::{integrate, IntegratorConfig, Method, OdeSystem};
pub use operators::{MultiModeSLH, Operator, SLHTriple};
pub use oracle::{run_oracle, run_oracle_two_mode, TimeBinConfig};
pub use sim::{
    run_npacket, run_single_mode, run_two_mode, SimConfig, TimeSeriesRecord, TwoModeRecord,
    TwoModeSimConfig,
};
pub use wavepacket::{BasisSet, PacketShape, WavePacket};
