//! Semi-supervised 3D object detection from LiDAR: per-class adaptive
//! pseudo-label selection, paste-and-jitter augmentation, a checkpointed
//! self-training loop, and KITTI-style I/O and evaluation.
//!
//! The guide in `book/` walks through each module; its code blocks run as
//! doctests of this crate.

// Validation uses `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod accs;
pub mod detector;
pub mod eval;
pub mod geometry;
pub mod hpca;
pub mod kitti_io;
pub mod scene;
pub mod seed;
pub mod selftrain;
pub mod synth;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../README.md")]
    mod readme {}
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/geometry.md")]
    mod geometry {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/accs.md")]
    mod accs {}
    #[doc = include_str!("../../../book/src/augmentation.md")]
    mod augmentation {}
    #[doc = include_str!("../../../book/src/detectors.md")]
    mod detectors {}
    #[doc = include_str!("../../../book/src/selftrain.md")]
    mod selftrain {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
