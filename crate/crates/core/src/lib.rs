//! Retinal blood-vessel segmentation with a modified Gaussian matched filter.
//!
//! The pipeline turns a color fundus image into a binary vessel map:
//! PCA grayscale conversion, CLAHE, maximum response over a bank of oriented
//! zero-mean kernels, Otsu thresholding, removal of small connected
//! components, and field-of-view masking. Alongside it live the evaluation
//! metrics and the coarse-to-fine parameter search used to tune the kernel.
//!
//! ```
//! use vesselmf::{phantom, Parallelism, Pipeline, PipelineParams};
//!
//! let p = phantom::generate(&phantom::PhantomSpec::standard(), 7);
//! let pipeline = Pipeline::new(PipelineParams::drive()).unwrap();
//! let result = pipeline.run(&p.rgb, &p.fov, Parallelism::default()).unwrap();
//! assert_eq!(result.vessel_map.dims(), (128, 128));
//! ```

pub mod dataset;
pub mod error;
pub mod imageio;
pub mod kernelbank;
pub mod metrics;
pub mod mfr;
pub mod par;
pub mod phantom;
pub mod preprocess;
pub mod segment;
pub mod sweep;

pub use error::{Error, Result};
pub use imageio::{BinaryImage, GrayImage, RgbImage};
pub use kernelbank::{build_bank, build_kernel, Kernel, KernelBank, KernelParams};
pub use par::Parallelism;
pub use preprocess::ClaheParams;
pub use segment::{run_pipeline, Pipeline, PipelineParams, SegmentationResult};

/// A result together with whether a degenerate-input fallback was taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Flagged<T> {
    pub value: T,
    pub degenerate: bool,
}
