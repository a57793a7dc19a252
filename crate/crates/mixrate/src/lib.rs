//! Finite mixing distributions on a compact interval, their L1-Wasserstein
//! geometry, truncated moment problems, minimum-KS mixture estimation, and
//! the Monte Carlo harnesses that measure estimation rates around nearly
//! degenerate mixtures.

pub mod error;
pub mod estimator;
pub mod experiments;
pub mod hard_instances;
pub mod identifiability;
pub mod measures;
pub mod mixture_model;
pub mod moment_problem;
pub mod optim;
pub mod scaling_tree;

pub use error::{Error, Result};
pub use estimator::{EmpiricalCdf, FitOptions, FitResult};
pub use experiments::{ContiguityRow, DkwReport, LanReport, RateSweepConfig, RateSweepReport};
pub use hard_instances::HardInstanceSpec;
pub use identifiability::{MarginQuery, MarginResult, SeparationReport};
pub use measures::{Atom, MixingDistribution, SignedAtomicMeasure};
pub use mixture_model::{ComponentFamily, GaussianLocationFamily};
pub use moment_problem::{HankelReport, MomentSequence};
pub use scaling_tree::{ScaledPairFamily, ScalingTreeReport, ScwOptions};
