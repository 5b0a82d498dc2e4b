//! Bit-packed linear algebra over F₂.
//!
//! Plain word-XOR Gaussian elimination; all shapes including zero rows or
//! zero columns are legal.

mod matrix;
mod sample;
mod subspace;
mod vector;

pub use matrix::BitMatrix;
pub use sample::{
    sample_outside, sample_surjective_matrix, sample_uniform_matrix, sample_uniform_vector,
};
pub use subspace::Subspace;
pub use vector::BitVector;
