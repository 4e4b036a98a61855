//! Selective-scan ("Mamba"-style) crack segmentation, end to end on CPU.
//!
//! * [`tensor`]: dense tensors, a reverse-mode graph and the numeric kernels.
//! * [`scan`]: the S6 selective scan in recurrent and matrix forms.
//! * [`ss2d`]: the four-route 2-D select-scan.
//! * [`vmunet`]: the VM-UNet encoder-decoder and its checkpoint format.
//! * [`baselines`]: valid convolution and ViT reference cores.
//! * [`metrics`]: Dice / IoU and the soft Dice loss.
//! * [`complexity`]: analytic FLOP accounting over symbolic architectures.
//! * [`data`]: synthetic crack images, folder loading, augmentation.
//! * [`train`]: AdamW, the training loop and evaluation.
//! * [`verify`]: self-check suites shared by the CLI and the tests.

// numeric kernels index several parallel buffers with one loop variable
#![allow(clippy::needless_range_loop)]

pub mod baselines;
pub mod complexity;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod kv;
pub mod metrics;
pub mod params;
pub mod scan;
pub mod seed;
pub mod ss2d;
pub mod tensor;
pub mod train;
pub mod verify;
pub mod vmunet;

pub use error::{Error, Result};
