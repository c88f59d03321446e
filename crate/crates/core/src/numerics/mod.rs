//! Dense numeric substrate: matrices, a reverse-mode tape, a seeded
//! generator, a finite-difference gradient oracle and a small symmetric
//! eigenvalue solver.

pub mod eigen;
pub mod fdcheck;
pub mod matrix;
pub mod rng;
pub mod tape;

pub use eigen::symmetric_eigenvalues;
pub use fdcheck::{finite_diff_check, FdReport};
pub use matrix::Matrix;
pub use rng::Rng;
pub use tape::{softmax, softmax_cross_entropy, Gradients, Tape, TensorId};
