//! Saddle-point reformulation of high-contrast diffusion problems on the unit
//! square with highly conducting square inclusions, and robust preconditioned
//! solvers for it.
//!
//! The problem `-∇·(σ∇u) = f` with `σ = 1 + 1/ε_s` inside inclusion `s` is
//! rewritten, through the auxiliary variable `p_s = (u - c_s)/ε_s`, as a
//! symmetric indefinite system whose blocks do not depend on the contrast
//! except through `ε`-weighted terms that vanish as `ε → 0`.

// NaN-rejecting `!(x > 0.0)` guards and index-based band loops are deliberate.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod assembly;
pub mod banded;
pub mod error;
pub mod mesh;
pub mod multigrid;
pub mod precond;
pub mod random;
pub mod solvers;
pub mod sparse;
pub mod spectral;
pub mod tally;
pub mod vecops;

pub use assembly::{InclusionBlock, RankOneBlock, SaddleOperator, SaddleProblem};
pub use error::{Error, Result};
pub use mesh::{
    assign_epsilon, place_periodic, place_random, EpsilonMode, Inclusion, InclusionLayout,
    LayoutManifest, OrderingMap, StructuredMesh,
};
pub use precond::{
    APreconditioner, BaseKind, BlockPreconditioner, HaSpec, SchurPreconditioner, SchurTerm,
};
pub use solvers::{Method, SolverConfig, SolverReport};
pub use sparse::CsrMatrix;
pub use spectral::{PencilKind, SpectrumReport};
pub use tally::OpTally;
