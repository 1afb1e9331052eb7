//! Building blocks for a camera-driven animal deterrence system.
//!
//! The crate is organised bottom-up:
//!
//! * [`geometry`]: boxes, IoU, prior boxes and offset encoding.
//! * [`multibox`]: anchor matching, the localization and confidence losses,
//!   detection decoding and non-maximum suppression.
//! * [`backbone`]: a forward-only depthwise-separable network, the SCRW1
//!   weights format and the [`Detector`](backbone::Detector) trait.
//! * [`dataset`]: Pascal-VOC annotations as written by LabelImg.
//! * [`evaluation`]: detection matching, metrics and the stepped harness.
//! * [`monitor`]: frame sources, event hysteresis, policy, deterrent
//!   scheduling, alert delivery and the real-time pipeline.

pub mod backbone;
pub mod dataset;
pub mod evaluation;
pub mod geometry;
pub mod monitor;
pub mod multibox;

pub use backbone::{Detector, DetectorScript, Image, NetDetector, ScriptedDetector, SsdModel};
pub use geometry::{AnchorConfig, AnchorSet, BoundingBox, BoxOffsets, CenterBox, Variances};
pub use multibox::{Detection, LossReport, RawPredictions};
