//! Ground-state phase structure of `N` three-level atoms (ladder, lambda and
//! V configurations) coupled to one quantized field mode in the rotating-wave
//! approximation.
//!
//! * [`model`]: configurations, parameters, the conserved excitation number.
//! * [`semiclassical`]: coherent-state energy surface, its minimization,
//!   closed-form separatrices and transition-order classification.
//! * [`quantum`]: exact diagonalization per excitation sector.
//! * [`scan`]: coupling-plane scans, crossover curves and the finite-N
//!   convergence study behind the `trilevel` command-line tool.

pub mod model;
pub mod quantum;
pub mod scan;
pub mod semiclassical;

pub use model::{excitation_weights, validate, Configuration, Coupling, ExcitationWeights, ModelError, ModelParams};
pub use quantum::{
    analytic_one_atom_xi, build_hamiltonian, commutant_check, enumerate_sector, global_ground, sector_ground,
    BasisState, GroundStateResult, QuantumError, SearchOptions, SectorBasis,
};
pub use scan::{
    convergence_study, extract_crossovers, extract_crossovers_refined, run_scan, run_scan_with_threads, ConvergenceOptions,
    ConvergenceTable, CrossoverSet, Engine, ScanError, ScanGrid, ScanRecord, ScanSpec,
};
pub use semiclassical::{
    classify_order, energy_surface, minimize, optimal_field_amplitude, separatrix, ClassifyOptions, CouplingRange,
    CrossingSegment, MinimizeOptions, Order, Phase, SemiclassicalError, SemiclassicalResult, SeparatrixCurve,
    VariationalPoint,
};
