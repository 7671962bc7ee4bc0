use super::PoseFrame;
use crate::error::{Error, Result};

const DEGENERATE_DIAGONAL: f64 = 1e-9;

/// Centers a pose on its joint centroid and divides by the diagonal of the
/// joint bounding box. Returns `2K` values, `(x, y)` interleaved.
///
/// Confidence does not weight the centroid; it only gates validity (at least
/// one joint must have been observed).
pub fn normalize_pose(frame: &PoseFrame) -> Result<Vec<f64>> {
    if frame.joints.is_empty() {
        return Err(Error::invalid("pose has no joints"));
    }
    if let Some(kp) = frame
        .joints
        .iter()
        .find(|kp| !kp.x.is_finite() || !kp.y.is_finite())
    {
        return Err(Error::invalid(format!(
            "frame {} of track {}: non-finite coordinate ({}, {})",
            frame.frame_index, frame.track_id, kp.x, kp.y
        )));
    }
    if frame.joints.iter().all(|kp| kp.confidence <= 0.0) {
        return Err(Error::invalid(format!(
            "frame {} of track {}: every joint has zero confidence",
            frame.frame_index, frame.track_id
        )));
    }

    let n = frame.joints.len() as f64;
    let (sx, sy) = frame
        .joints
        .iter()
        .fold((0.0, 0.0), |(sx, sy), kp| (sx + kp.x, sy + kp.y));
    let (cx, cy) = (sx / n, sy / n);

    let (mut min_x, mut max_x) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut min_y, mut max_y) = (f64::INFINITY, f64::NEG_INFINITY);
    for kp in &frame.joints {
        min_x = min_x.min(kp.x);
        max_x = max_x.max(kp.x);
        min_y = min_y.min(kp.y);
        max_y = max_y.max(kp.y);
    }
    let diagonal = (max_x - min_x).hypot(max_y - min_y);
    let scale = if diagonal < DEGENERATE_DIAGONAL {
        1.0
    } else {
        diagonal
    };

    let mut out = Vec::with_capacity(2 * frame.joints.len());
    for kp in &frame.joints {
        out.push((kp.x - cx) / scale);
        out.push((kp.y - cy) / scale);
    }
    Ok(out)
}
