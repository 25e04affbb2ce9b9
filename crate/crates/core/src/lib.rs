//! Data-driven Lie derivatives and sum-of-squares auxiliary functions.
//!
//! Snapshot data of a dynamical system is turned into approximate Lie
//! derivatives with EDMD (finite differences of a fitted Koopman matrix) or
//! gEDMD (fitted directly from sampled generator values). Those operators
//! then stand in for the true generator inside sum-of-squares programs that
//! search for Lyapunov functions or bound long-time averages.

pub mod auxfn;
pub mod experiments;
pub mod koopman;
pub mod linalg;
pub mod polybasis;
pub mod sdp;
pub mod snapshots;
pub mod sos;
pub mod systems;

pub use auxfn::{ergodic_bound, find_lyapunov, BoundResult, Direction, LyapunovResult};
pub use koopman::{
    apply_lie, fit_edmd, fit_gedmd, moment_matrices, pinv, EdmdOperators, KoopmanError, LieKind,
    MomentMatrices,
};
pub use polybasis::{
    inclusion_matrix, product_expand, total_degree_dictionary, Basis, Dictionary, Family,
    MultiIndex, Poly, PolyError, PolyInBasis,
};
pub use sdp::{
    solve, verify_kkt, Cone, KktReport, SdpProblem, SdpSolution, SdpStatus, SolverOptions,
};
pub use snapshots::{SnapshotError, SnapshotKind, SnapshotMeta, SnapshotSet};
pub use sos::{LieSource, SemialgebraicSet, SosProgram, SosSolution};
pub use systems::{sample_snapshots, Observation, SamplingMode, SystemError, SystemSpec, TimeKind};
