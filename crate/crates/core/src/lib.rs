//! Lung segmentation for chest radiographs.
//!
//! Three interchangeable segmenters share one image currency ([`GrayImage`] in,
//! [`BinaryMask`] out):
//!
//! * [`classical::cca_lung_pipeline`]: Otsu threshold, connected components,
//!   border suppression and hole filling.
//! * [`classical::watershed_lung_pipeline`]: marker-based priority-flood watershed.
//! * [`unet::UNet`]: an encoder/decoder network with skip connections, trained
//!   with the small autodiff engine in [`tensorcore`].
//!
//! [`metrics`] scores masks with IoU and Dice, and [`cli`] wires everything into
//! the `lungseg` executable.

pub mod classical;
pub mod cli;
pub mod error;
pub mod imgio;
pub mod metrics;
pub mod phantom;
pub mod tensorcore;
pub mod unet;

pub use error::{Error, Result};
pub use imgio::{BinaryMask, DatasetEntry, GrayImage, SplitSpec};
