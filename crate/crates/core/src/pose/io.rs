//! Line-delimited pose stream files.
//!
//! ```text
//! #streamvad-pose v1 K=17
//! stream_id,frame_index,track_id,label,x1,y1,c1,...,xK,yK,cK
//! ```
//!
//! `label` is `0` (normal), `1` (anomalous) or `-1` (unknown). Floats are
//! written in shortest round-trip form, so re-serializing a parsed file
//! reproduces it byte for byte.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{FrameLabel, Keypoint, PoseFrame};
use crate::error::{Error, Result};

pub const STREAM_MAGIC: &str = "#streamvad-pose v1";

#[derive(Debug, Clone, PartialEq)]
pub struct PoseStream {
    pub joints: usize,
    pub frames: Vec<PoseFrame>,
}

impl PoseStream {
    pub fn new(joints: usize, frames: Vec<PoseFrame>) -> Self {
        PoseStream { joints, frames }
    }

    /// Sorts frames into file order, `(frame_index, track_id)`.
    pub fn sort(&mut self) {
        self.frames.sort_by(|a, b| {
            a.frame_index
                .cmp(&b.frame_index)
                .then_with(|| a.track_id.cmp(&b.track_id))
                .then_with(|| a.stream_id.cmp(&b.stream_id))
        });
    }
}

fn parse_err(origin: &str, line: usize, field: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Parse {
        path: origin.to_string(),
        line,
        field: field.into(),
        message: message.into(),
    }
}

fn parse_header(origin: &str, line: &str) -> Result<usize> {
    let rest = line
        .strip_prefix(STREAM_MAGIC)
        .ok_or_else(|| parse_err(origin, 1, "header", format!("expected `{STREAM_MAGIC} K=<joints>`")))?;
    let k = rest
        .trim()
        .strip_prefix("K=")
        .ok_or_else(|| parse_err(origin, 1, "header", "missing K=<joints>"))?;
    let k: usize = k
        .parse()
        .map_err(|_| parse_err(origin, 1, "K", format!("`{k}` is not a joint count")))?;
    if k == 0 {
        return Err(parse_err(origin, 1, "K", "joint count must be positive"));
    }
    Ok(k)
}

/// Parses stream text. `origin` names the source in error messages.
pub fn parse_stream(text: &str, origin: &str) -> Result<PoseStream> {
    let mut lines = text.lines().enumerate();
    let joints = match lines.next() {
        None => return Ok(PoseStream::new(0, Vec::new())),
        Some((_, header)) => parse_header(origin, header)?,
    };

    let mut frames = Vec::new();
    let mut last_index: HashMap<(String, String), u64> = HashMap::new();
    let expected_fields = 4 + 3 * joints;

    for (i, line) in lines {
        let lineno = i + 1;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != expected_fields {
            return Err(parse_err(
                origin,
                lineno,
                "joints",
                format!(
                    "expected {expected_fields} fields ({joints} joints), found {}",
                    fields.len()
                ),
            ));
        }
        let stream_id = fields[0];
        if stream_id.is_empty() {
            return Err(parse_err(origin, lineno, "stream_id", "empty identifier"));
        }
        let frame_index: u64 = fields[1]
            .parse()
            .map_err(|_| parse_err(origin, lineno, "frame_index", format!("`{}` is not a frame index", fields[1])))?;
        let track_id = fields[2];
        if track_id.is_empty() {
            return Err(parse_err(origin, lineno, "track_id", "empty identifier"));
        }
        let label = fields[3]
            .parse::<i8>()
            .ok()
            .and_then(FrameLabel::from_code)
            .ok_or_else(|| parse_err(origin, lineno, "label", format!("`{}` is not one of 0, 1, -1", fields[3])))?;

        let mut kps = Vec::with_capacity(joints);
        for j in 0..joints {
            let value = |offset: usize, name: &str| -> Result<f64> {
                let raw = fields[4 + 3 * j + offset];
                let field = format!("{name}{}", j + 1);
                let v: f64 = raw
                    .parse()
                    .map_err(|_| parse_err(origin, lineno, field.clone(), format!("`{raw}` is not a number")))?;
                if !v.is_finite() {
                    return Err(parse_err(origin, lineno, field, "value must be finite"));
                }
                Ok(v)
            };
            let x = value(0, "x")?;
            let y = value(1, "y")?;
            let c = value(2, "c")?;
            if !(0.0..=1.0).contains(&c) {
                return Err(parse_err(origin, lineno, format!("c{}", j + 1), "confidence outside [0, 1]"));
            }
            kps.push(Keypoint { x, y, confidence: c });
        }

        let key = (stream_id.to_string(), track_id.to_string());
        if let Some(&prev) = last_index.get(&key) {
            if frame_index <= prev {
                return Err(parse_err(
                    origin,
                    lineno,
                    "frame_index",
                    format!("track {track_id}: frame {frame_index} does not follow {prev}"),
                ));
            }
        }
        last_index.insert(key, frame_index);

        frames.push(PoseFrame {
            stream_id: stream_id.to_string(),
            frame_index,
            track_id: track_id.to_string(),
            joints: kps,
            label,
        });
    }
    Ok(PoseStream::new(joints, frames))
}

fn check_identifier(kind: &str, id: &str) -> Result<()> {
    if id.is_empty() || id.contains([',', '\n', '\r']) {
        return Err(Error::invalid(format!("{kind} `{id}` must be non-empty without commas or newlines")));
    }
    Ok(())
}

/// Serializes frames in their given order.
pub fn render_stream(stream: &PoseStream) -> Result<String> {
    let mut out = String::new();
    writeln!(out, "{STREAM_MAGIC} K={}", stream.joints).unwrap();
    for f in &stream.frames {
        if f.joints.len() != stream.joints {
            return Err(Error::invalid(format!(
                "frame {} of track {} has {} joints, stream declares {}",
                f.frame_index,
                f.track_id,
                f.joints.len(),
                stream.joints
            )));
        }
        check_identifier("stream_id", &f.stream_id)?;
        check_identifier("track_id", &f.track_id)?;
        write!(out, "{},{},{},{}", f.stream_id, f.frame_index, f.track_id, f.label.code()).unwrap();
        for kp in &f.joints {
            kp.validate()?;
            write!(out, ",{:?},{:?},{:?}", kp.x, kp.y, kp.confidence).unwrap();
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn read_stream(path: impl AsRef<Path>) -> Result<PoseStream> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingArtifact {
                path: path.to_path_buf(),
                hint: "pose stream not found".into(),
            }
        } else {
            Error::io(path, e)
        }
    })?;
    parse_stream(&text, &path.display().to_string())
}

pub fn write_stream(stream: &PoseStream, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = render_stream(stream)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
