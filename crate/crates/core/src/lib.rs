//! Loss functions, surface metrics and volumetric preprocessing for 3D lesion
//! segmentation.
//!
//! The crate covers the region-based losses (Dice, Tversky), the focal term,
//! a distance-transform boundary loss and the compound losses built from them,
//! all with analytic gradients. Supporting modules provide an exact Euclidean
//! distance transform, Dice / mean surface distance / normalized surface Dice
//! metrics, resampling and normalization, stochastic augmentation, MetaImage
//! I/O and a small gradient-descent demonstrator.

pub mod augment;
pub mod edt;
pub mod error;
pub mod gradcheck;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod optimdemo;
pub mod preproc;
pub mod volume;

pub use error::{Error, Result};
