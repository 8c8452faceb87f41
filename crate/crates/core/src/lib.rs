//! Identifiability analysis for multi-task structural causal models with a
//! shared latent layer.
//!
//! * [`topology`]: the binary task–latent adjacency and set helpers.
//! * [`ident`]: the closure-based and pairwise matrix deciders, certificates
//!   and the exhaustive equivalence audit.
//! * [`losses`]: differentiable structure penalties on soft adjacencies.
//! * [`selection`]: task-guided soft and hard latent masks.
//! * [`dgp`]: linear-Gaussian multi-environment data generation.
//! * [`recovery`]: moment-matching unmixing and correlation scoring.
//! * [`cli`]: the `scm-ident` command-line front end.

pub mod cli;
pub mod dgp;
pub mod error;
pub mod ident;
pub mod losses;
pub mod recovery;
pub mod seeding;
pub mod selection;
pub mod topology;

pub use error::{Error, Result};
pub use ident::{closure_generate, closure_identifiable, uic_check, ClosureFamily, IdentVerdict};
pub use losses::{dis_loss, total_loss, uic_loss, LossConfig, SoftAdjacency};
pub use topology::{FactorSet, ScmTopology};
