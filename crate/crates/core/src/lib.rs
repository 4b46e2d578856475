//! Core algorithms for the Spotlight text detector: a minimal dense-tensor
//! autodiff engine, the network blocks (MIEM, CPFSM, calibration), kernel
//! label generation, dual-supervised losses, shrink/expand post-processing,
//! and an IoU-based detection evaluator.

pub mod eval;
pub mod geometry;
pub mod imageio;
pub mod labels;
pub mod losses;
pub mod nn;
pub mod offset;
pub mod postprocess;
pub mod selfcheck;
pub mod tensor;
pub mod trainer;

pub use geometry::{Point, Polygon};
pub use imageio::Image;
pub use labels::{KernelLabel, Mask};
pub use eval::EvalReport;
pub use nn::{StdConfig, StdModel};
pub use postprocess::Detection;
pub use tensor::{Shape, Tensor};

/// Errors surfaced by fallible core operations. Tensor-shape violations are
/// programmer errors and panic instead.
#[derive(Debug, thiserror::Error)]
pub enum CoreError {
    #[error("degenerate polygon: {0}")]
    DegeneratePolygon(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("format error: {0}")]
    Format(String),
    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: usize, detail: String },
}

pub type Result<T> = std::result::Result<T, CoreError>;
