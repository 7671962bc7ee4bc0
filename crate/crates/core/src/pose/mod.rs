//! Pose stream data model.
//!
//! A stream is an ordered sequence of [`PoseFrame`]s, one per tracked person
//! per video frame. Detectors never see frames directly; they consume
//! [`PoseWindow`]s, fixed-length runs of one track flattened into a feature
//! vector of normalized joint coordinates.

mod io;
mod normalize;
mod window;

pub use io::{parse_stream, read_stream, render_stream, write_stream, PoseStream, STREAM_MAGIC};
pub use normalize::normalize_pose;
pub use window::{window_stream, window_tracks};

use crate::error::{Error, Result};

/// Joint count of the common 17-keypoint skeleton layout.
pub const DEFAULT_JOINTS: usize = 17;
/// One second of video at 24 fps.
pub const DEFAULT_WINDOW: usize = 24;
pub const DEFAULT_STRIDE: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub confidence: f64,
}

impl Keypoint {
    pub fn new(x: f64, y: f64, confidence: f64) -> Result<Self> {
        let kp = Keypoint { x, y, confidence };
        kp.validate()?;
        Ok(kp)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.x.is_finite() || !self.y.is_finite() {
            return Err(Error::invalid(format!(
                "non-finite keypoint coordinate ({}, {})",
                self.x, self.y
            )));
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(Error::invalid(format!(
                "keypoint confidence {} outside [0, 1]",
                self.confidence
            )));
        }
        Ok(())
    }
}

/// Ground-truth tag carried by every frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FrameLabel {
    Normal,
    Anomalous,
    Unknown,
}

impl FrameLabel {
    pub fn code(self) -> i8 {
        match self {
            FrameLabel::Normal => 0,
            FrameLabel::Anomalous => 1,
            FrameLabel::Unknown => -1,
        }
    }

    pub fn from_code(code: i8) -> Option<Self> {
        match code {
            0 => Some(FrameLabel::Normal),
            1 => Some(FrameLabel::Anomalous),
            -1 => Some(FrameLabel::Unknown),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseFrame {
    pub stream_id: String,
    pub frame_index: u64,
    pub track_id: String,
    pub joints: Vec<Keypoint>,
    pub label: FrameLabel,
}

impl PoseFrame {
    pub fn joint_count(&self) -> usize {
        self.joints.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum WindowLabel {
    Normal,
    Anomalous,
}

impl WindowLabel {
    pub fn is_anomalous(self) -> bool {
        self == WindowLabel::Anomalous
    }
}

/// `length` consecutive frames of one track.
///
/// `features` holds `2 * K * length` values: for each frame in order, for
/// each joint in index order, the normalized `(x, y)` pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseWindow {
    pub stream_id: String,
    pub track_id: String,
    pub start_frame: u64,
    pub length: usize,
    pub features: Vec<f64>,
    pub label: WindowLabel,
    pub subset_index: usize,
}

impl PoseWindow {
    pub fn end_frame(&self) -> u64 {
        self.start_frame + self.length as u64 - 1
    }

    pub fn dim(&self) -> usize {
        self.features.len()
    }
}

/// Feature dimension of a window over `joints` joints and `window` frames.
pub fn feature_dim(joints: usize, window: usize) -> usize {
    2 * joints * window
}
