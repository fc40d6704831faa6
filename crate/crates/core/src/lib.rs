//! Wide-band equivariant inversion for 2D inverse scattering.
//!
//! Forward modelling of far-field data with a Helmholtz solver, Born-linearised
//! back-projection and filtered back-projection, butterfly factorisation of the
//! back-projection kernel, and trainable wide-band networks built on top of it.

pub mod born;
pub mod butterfly;
pub mod error;
pub mod grid;
pub mod helmholtz;
pub mod media;
pub mod model;
pub mod par;
pub mod rng;
mod svd;
pub mod tensor;

pub use error::{Error, Result};
pub use grid::{FrequencySet, Grids};
pub use media::{Family, Medium};
pub use rng::Rng;
pub use tensor::{read_tensor, write_tensor, Tensor};
