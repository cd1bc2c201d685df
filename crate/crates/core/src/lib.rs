//! Gland segmentation for H&E stained colon histology.
//!
//! The pipeline finds dark epithelial nuclei with five-class Otsu
//! thresholding, classifies each nucleus as gland-border or stromal with a
//! random forest over windowed histogram and Haralick features, and then
//! closes gland boundaries with one of two geometric strategies:
//! gradient-guided line growing for glands with a thick nuclear rim, and
//! iterative endpoint linking for thin rims.
//!
//! Modules, bottom-up: [`raster`] → [`preprocess`] → [`features`] →
//! [`forest`] → [`boundary`], with [`metrics`] for object-level scoring and
//! [`phantom`] for synthetic test tissue.

pub mod boundary;
pub mod error;
pub mod features;
pub mod forest;
pub mod metrics;
pub mod phantom;
pub mod preprocess;
pub mod raster;

pub use error::{Error, Result};
