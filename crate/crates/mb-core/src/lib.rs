//! Numerics for Muttalib-Borodin ensembles with Fisher-Hartwig weight
//! singularities.
//!
//! The crate computes, for a biorthogonal ensemble on `[a, b]` with `a > 0`,
//! parameter `theta > 0`, and a weight carrying algebraic/jump singularities:
//!
//! * the equilibrium measure and its conformal-map representation
//!   ([`equilibrium`]),
//! * the large-`n` expansion constants of the partition-function determinant
//!   ([`asymptotics`]),
//! * exact small-`n` determinants in extended precision ([`oracle`]),
//! * least-squares cross-checks of the expansion against exact values
//!   ([`verify`]),
//! * Metropolis sampling of the ensemble with fluctuation statistics
//!   ([`sampler`]).
//!
//! The `mb` binary exposes all of this on the command line ([`cli`]).

pub mod asymptotics;
pub mod bigfloat;
pub mod cli;
pub mod ensemble;
pub mod equilibrium;
pub mod oracle;
pub mod quadrature;
pub mod report;
pub mod sampler;
pub mod verify;
