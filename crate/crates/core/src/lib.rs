//! Foreground self-distillation for camera bird's-eye-view perception.
//!
//! The crate covers the deterministic data path of a self-distilling BEV
//! detector: LiDAR-derived hard labels, point cloud intensification,
//! foreground-filtered view transformation into student and teacher BEV
//! grids, a shared encoder, the teacher-normalized distillation loss, and
//! multi-scale foreground enhancement. Learned networks are replaced by a
//! synthetic scene simulator that produces feature maps and soft labels.
//!
//! ```
//! use fgdistill::pipeline::{run_pipeline, PipelineConfig};
//! use fgdistill::scene::SceneConfig;
//! use fgdistill::view::BevGridConfig;
//!
//! let cfg = PipelineConfig {
//!     scene: SceneConfig { n_boxes: 6, n_cameras: 1, ..Default::default() },
//!     bev: BevGridConfig { grid_h: 32, grid_w: 32, ..Default::default() },
//!     seed: 7,
//!     ..Default::default()
//! };
//! let result = run_pipeline(&cfg).unwrap();
//! assert!(result.loss >= 0.0);
//! assert!(result.pci_report.is_consistent());
//! ```
//!
//! The `book/` directory next to the workspace walks through each stage;
//! its code listings are compiled and run as doc tests of this crate.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod distill;
pub mod error;
pub mod geometry;
pub mod io;
pub mod labels;
pub mod msfe;
pub mod pci;
pub mod pipeline;
pub mod scene;
pub mod selfcheck;
pub mod view;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/geometry.md")]
    mod geometry {}
    #[doc = include_str!("../../../book/src/labels.md")]
    mod labels {}
    #[doc = include_str!("../../../book/src/intensification.md")]
    mod intensification {}
    #[doc = include_str!("../../../book/src/pooling.md")]
    mod pooling {}
    #[doc = include_str!("../../../book/src/distillation.md")]
    mod distillation {}
    #[doc = include_str!("../../../book/src/enhancement.md")]
    mod enhancement {}
    #[doc = include_str!("../../../book/src/pipeline.md")]
    mod pipeline {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
