//! Phase retrieval for high-NA optics with a vectorial point-spread model.
//!
//! The crate is organised bottom-up:
//!
//! - [`field`]: complex/real images, six-channel fields, product iterates,
//!   the centered unitary FFT and the on-disk array format.
//! - [`psf`]: aperture geometry, polarisation maps, vectorial and scalar PSFs,
//!   defocus diversity and measurement sets.
//! - [`projectors`]: projections onto the measurement, aperture and
//!   consistency sets.
//! - [`solvers`]: projection-based fixed-point operators, the iteration
//!   driver and convergence diagnostics.
//! - [`harness`]: synthetic data, noise, error metrics and the benchmark.
//! - [`cli`]: the `vecpr` command line.

pub mod cli;
pub mod error;
pub mod field;
pub mod harness;
pub mod projectors;
pub mod psf;
pub mod solvers;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
pub use field::{ComplexImage, ProductIterate, RealImage, SixChannelField};
pub use projectors::{ConstraintSet, Problem};
pub use psf::{AmplitudeSpec, ApertureModel, ApertureParams, MeasurementSet};
pub use solvers::{Family, Model, OperatorSpec, RunTrace};
