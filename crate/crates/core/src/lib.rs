//! Policy-gradient estimators for categorical sequence generation built on
//! correlated Monte Carlo rollouts.
//!
//! The crate covers:
//!
//! - [`sampling`]: Dirichlet augmentation, true/pseudo actions, and the fast
//!   pseudo-action matrix with its brute-force counterpart.
//! - [`estimators`]: REINFORCE, self-critic, MC-K, ARS-K and ARSM for the
//!   categorical softmax head.
//! - [`bintree`]: binary-tree softmax (codebooks built by agglomerative
//!   clustering of embeddings), ARM and BT-ARSM.
//! - [`policy`]: a small tanh recurrent policy with exact backpropagation.
//! - [`tasks`]: toy copy tasks and the exhaustive-enumeration gradient oracle.
//! - [`harness`]: experiment driver behind the `acmc` binary.

pub mod bintree;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod policy;
pub mod rng;
pub mod sampling;
pub mod stats;
pub mod tasks;

pub use error::{Error, Result};
