use std::collections::BTreeMap;

use super::{normalize_pose, FrameLabel, PoseFrame, PoseWindow, WindowLabel};
use crate::error::{Error, Result};

/// Slides a `window`-frame window with step `stride` over one track.
///
/// The track is split into maximal runs of consecutive frame indices and
/// windows are cut inside each run, so no window spans a tracking gap.
/// A track (or run) shorter than `window` contributes nothing.
pub fn window_stream(frames: &[PoseFrame], window: usize, stride: usize) -> Result<Vec<PoseWindow>> {
    if window < 1 {
        return Err(Error::invalid("window length must be at least 1"));
    }
    if stride < 1 {
        return Err(Error::invalid("stride must be at least 1"));
    }
    let Some(first) = frames.first() else {
        return Ok(Vec::new());
    };
    for pair in frames.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        if a.stream_id != b.stream_id || a.track_id != b.track_id {
            return Err(Error::invalid(format!(
                "window_stream expects one track, found {}/{} and {}/{}",
                a.stream_id, a.track_id, b.stream_id, b.track_id
            )));
        }
        if b.frame_index <= a.frame_index {
            return Err(Error::invalid(format!(
                "track {}: frame indices not strictly increasing ({} then {})",
                a.track_id, a.frame_index, b.frame_index
            )));
        }
    }
    if frames.len() < window {
        return Ok(Vec::new());
    }

    let joints = first.joints.len();
    let normalized = frames
        .iter()
        .map(|f| {
            if f.joints.len() != joints {
                return Err(Error::invalid(format!(
                    "track {}: frame {} has {} joints, expected {}",
                    f.track_id,
                    f.frame_index,
                    f.joints.len(),
                    joints
                )));
            }
            normalize_pose(f)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut out = Vec::new();
    let mut run_start = 0;
    while run_start < frames.len() {
        let mut run_end = run_start + 1;
        while run_end < frames.len()
            && frames[run_end].frame_index == frames[run_end - 1].frame_index + 1
        {
            run_end += 1;
        }
        let run_len = run_end - run_start;
        if run_len >= window {
            let mut offset = 0;
            while offset + window <= run_len {
                let lo = run_start + offset;
                let members = &frames[lo..lo + window];
                let mut features = Vec::with_capacity(2 * joints * window);
                for coords in &normalized[lo..lo + window] {
                    features.extend_from_slice(coords);
                }
                let label = if members.iter().any(|f| f.label == FrameLabel::Anomalous) {
                    WindowLabel::Anomalous
                } else {
                    WindowLabel::Normal
                };
                out.push(PoseWindow {
                    stream_id: first.stream_id.clone(),
                    track_id: first.track_id.clone(),
                    start_frame: members[0].frame_index,
                    length: window,
                    features,
                    label,
                    subset_index: 0,
                });
                offset += stride;
            }
        }
        run_start = run_end;
    }
    Ok(out)
}

/// Windows every track of a multi-track stream.
///
/// Output is in stream order: by the frame at which each window completes,
/// then by `(stream_id, track_id)`.
pub fn window_tracks(frames: &[PoseFrame], window: usize, stride: usize) -> Result<Vec<PoseWindow>> {
    let mut tracks: BTreeMap<(&str, &str), Vec<PoseFrame>> = BTreeMap::new();
    for f in frames {
        tracks
            .entry((f.stream_id.as_str(), f.track_id.as_str()))
            .or_default()
            .push(f.clone());
    }
    let mut out = Vec::new();
    for (_, track) in tracks {
        out.extend(window_stream(&track, window, stride)?);
    }
    out.sort_by(|a, b| {
        a.end_frame()
            .cmp(&b.end_frame())
            .then_with(|| a.stream_id.cmp(&b.stream_id))
            .then_with(|| a.track_id.cmp(&b.track_id))
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose::Keypoint;
    use proptest::prelude::*;

    fn track(indices: &[u64], anomalous: &[u64]) -> Vec<PoseFrame> {
        indices
            .iter()
            .map(|&i| PoseFrame {
                stream_id: "s".into(),
                frame_index: i,
                track_id: "t".into(),
                joints: (0..3)
                    .map(|j| Keypoint {
                        x: i as f64 + j as f64,
                        y: (j * j) as f64,
                        confidence: 1.0,
                    })
                    .collect(),
                label: if anomalous.contains(&i) {
                    FrameLabel::Anomalous
                } else {
                    FrameLabel::Normal
                },
            })
            .collect()
    }

    #[test]
    fn thirty_frames_window_24_gives_seven() {
        let frames = track(&(0..30).collect::<Vec<_>>(), &[]);
        let w = window_stream(&frames, 24, 1).unwrap();
        assert_eq!(w.len(), 7);
        let starts: Vec<u64> = w.iter().map(|w| w.start_frame).collect();
        assert_eq!(starts, (0..7).collect::<Vec<_>>());
        assert!(w.iter().all(|w| w.features.len() == 2 * 3 * 24));
    }

    #[test]
    fn short_track_yields_nothing() {
        let frames = track(&(0..23).collect::<Vec<_>>(), &[]);
        assert!(window_stream(&frames, 24, 1).unwrap().is_empty());
    }

    #[test]
    fn windows_never_straddle_a_gap() {
        // frames 0..25 then 30..55: two runs of 25
        let mut idx: Vec<u64> = (0..25).collect();
        idx.extend(30..55);
        let w = window_stream(&track(&idx, &[]), 24, 1).unwrap();

        // oracle: enumerate runs by hand
        let runs = [(0u64, 25usize), (30, 25)];
        let mut expected = Vec::new();
        for (start, len) in runs {
            for off in 0..=(len - 24) {
                expected.push(start + off as u64);
            }
        }
        let starts: Vec<u64> = w.iter().map(|w| w.start_frame).collect();
        assert_eq!(starts, expected);
        assert_eq!(w.len(), 4);
    }

    #[test]
    fn features_are_frame_major_xy_interleaved() {
        let frames = track(&[0, 1], &[]);
        let w = window_stream(&frames, 2, 1).unwrap();
        let mut expected = normalize_pose(&frames[0]).unwrap();
        expected.extend(normalize_pose(&frames[1]).unwrap());
        assert_eq!(w[0].features, expected);
    }

    #[test]
    fn rejects_bad_parameters_and_unsorted_input() {
        let frames = track(&[0, 1, 2], &[]);
        assert!(window_stream(&frames, 0, 1).is_err());
        assert!(window_stream(&frames, 1, 0).is_err());
        let unsorted = track(&[2, 1, 3], &[]);
        assert!(window_stream(&unsorted, 1, 1).is_err());
    }

    #[test]
    fn window_tracks_orders_by_completion_frame() {
        let mut a = track(&(0..5).collect::<Vec<_>>(), &[]);
        let mut b = track(&(2..7).collect::<Vec<_>>(), &[]);
        for f in &mut b {
            f.track_id = "u".into();
        }
        a.append(&mut b);
        let w = window_tracks(&a, 3, 1).unwrap();
        let ends: Vec<u64> = w.iter().map(|w| w.end_frame()).collect();
        assert!(ends.windows(2).all(|p| p[0] <= p[1]));
        assert_eq!(w.len(), 6);
    }

    proptest! {
        #[test]
        fn window_count_law(n in 0usize..80, window in 1usize..30, stride in 1usize..6) {
            let frames = track(&(0..n as u64).collect::<Vec<_>>(), &[]);
            let got = window_stream(&frames, window, stride).unwrap().len();
            let expected = if n >= window { (n - window) / stride + 1 } else { 0 };
            prop_assert_eq!(got, expected);
        }

        #[test]
        fn label_is_anomalous_iff_any_member_is(
            flags in prop::collection::vec(prop::bool::weighted(0.1), 5..60),
            window in 1usize..8,
        ) {
            let n = flags.len() as u64;
            let anomalous: Vec<u64> = (0..n).filter(|&i| flags[i as usize]).collect();
            let frames = track(&(0..n).collect::<Vec<_>>(), &anomalous);
            for w in window_stream(&frames, window, 1).unwrap() {
                let lo = w.start_frame as usize;
                let any = flags[lo..lo + window].iter().any(|&f| f);
                prop_assert_eq!(w.label.is_anomalous(), any);
            }
        }
    }
}
