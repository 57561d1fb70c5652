//! Pose-aware in-context detection of structural hallucinations in generated
//! cartoon and pixel-art character images.

pub mod config;
pub mod detector;
pub mod eval;
pub mod gateway;
pub mod icvl;
pub mod model;
pub mod oracle;
pub mod pose;
pub mod prompt;
pub mod synth;
