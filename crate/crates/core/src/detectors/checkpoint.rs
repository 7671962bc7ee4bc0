//! Checkpoint files.
//!
//! ```text
//! #streamvad-ckpt v1 kind=reconstruction version=3 dims=816,64,16,64,816 provenance=0,1,2 seed=42
//! <one float per line>
//! ```
//!
//! Parameter order: for `reconstruction`, each layer in turn with its weight
//! matrix row-major (`out x in`) followed by its bias; for `likelihood`
//! (`dims=D`), the `D` means followed by the `D` variances.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{AutoencoderParams, DetectorKind, DetectorParams, GaussianParams, WeightCheckpoint, DEFAULT_VARIANCE_FLOOR};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &str = "#streamvad-ckpt v1";

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

pub fn render_checkpoint(ckpt: &WeightCheckpoint) -> String {
    let (dims, values) = match &ckpt.params {
        DetectorParams::Reconstruction(p) => (p.dims(), p.to_flat()),
        DetectorParams::Likelihood(p) => {
            let mut v = p.mean().to_vec();
            v.extend_from_slice(p.variance());
            (vec![p.dim()], v)
        }
    };
    let mut out = String::with_capacity(values.len() * 24 + 128);
    writeln!(
        out,
        "{CHECKPOINT_MAGIC} kind={} version={} dims={} provenance={} seed={}",
        ckpt.kind(),
        ckpt.version,
        join(&dims),
        join(&ckpt.provenance),
        ckpt.seed
    )
    .unwrap();
    for v in values {
        writeln!(out, "{v:?}").unwrap();
    }
    out
}

fn err(origin: &str, line: usize, field: &str, message: impl Into<String>) -> Error {
    Error::Parse {
        path: origin.to_string(),
        line,
        field: field.to_string(),
        message: message.into(),
    }
}

fn parse_list<T: std::str::FromStr>(origin: &str, field: &str, raw: &str) -> Result<Vec<T>> {
    if raw.is_empty() {
        return Ok(Vec::new());
    }
    raw.split(',')
        .map(|s| {
            s.parse()
                .map_err(|_| err(origin, 1, field, format!("`{s}` is not a non-negative integer")))
        })
        .collect()
}

pub fn parse_checkpoint(text: &str, origin: &str) -> Result<WeightCheckpoint> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| err(origin, 1, "header", "empty checkpoint"))?;
    let rest = header
        .strip_prefix(CHECKPOINT_MAGIC)
        .ok_or_else(|| err(origin, 1, "header", format!("expected `{CHECKPOINT_MAGIC}`")))?;

    let (mut kind, mut version, mut dims, mut provenance, mut seed) = (None, None, None, None, None);
    for token in rest.split_whitespace() {
        let (key, value) = token
            .split_once('=')
            .ok_or_else(|| err(origin, 1, "header", format!("`{token}` is not key=value")))?;
        match key {
            "kind" => kind = Some(value.parse::<DetectorKind>().map_err(|e| err(origin, 1, "kind", e.to_string()))?),
            "version" => {
                version = Some(value.parse::<u64>().map_err(|_| err(origin, 1, "version", "not an integer"))?)
            }
            "dims" => dims = Some(parse_list::<usize>(origin, "dims", value)?),
            "provenance" => provenance = Some(parse_list::<usize>(origin, "provenance", value)?),
            "seed" => seed = Some(value.parse::<u64>().map_err(|_| err(origin, 1, "seed", "not an integer"))?),
            other => return Err(err(origin, 1, other, "unknown header key")),
        }
    }
    let missing = |f: &str| err(origin, 1, f, "missing from header");
    let kind = kind.ok_or_else(|| missing("kind"))?;
    let version = version.ok_or_else(|| missing("version"))?;
    let dims = dims.ok_or_else(|| missing("dims"))?;
    let provenance = provenance.ok_or_else(|| missing("provenance"))?;
    let seed = seed.ok_or_else(|| missing("seed"))?;
    if provenance.windows(2).any(|w| w[0] >= w[1]) {
        return Err(err(origin, 1, "provenance", "must be sorted and duplicate-free"));
    }

    let mut values = Vec::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let v: f64 = line
            .trim()
            .parse()
            .map_err(|_| err(origin, lineno, "parameter", format!("`{line}` is not a number")))?;
        if !v.is_finite() {
            return Err(err(origin, lineno, "parameter", "value must be finite"));
        }
        values.push(v);
    }

    let params = match kind {
        DetectorKind::Reconstruction => DetectorParams::Reconstruction(
            AutoencoderParams::from_flat(&dims, &values).map_err(|e| err(origin, 1, "dims", e.to_string()))?,
        ),
        DetectorKind::Likelihood => {
            let [d] = dims[..] else {
                return Err(err(origin, 1, "dims", "likelihood checkpoints have a single dimension"));
            };
            if values.len() != 2 * d {
                return Err(err(
                    origin,
                    values.len() + 2,
                    "parameter",
                    format!("expected {} values, found {}", 2 * d, values.len()),
                ));
            }
            let variance = values.split_off(d);
            DetectorParams::Likelihood(
                GaussianParams::new(values, variance, DEFAULT_VARIANCE_FLOOR)
                    .map_err(|e| err(origin, d + 2, "parameter", e.to_string()))?,
            )
        }
    };
    Ok(WeightCheckpoint {
        version,
        params,
        provenance,
        seed,
    })
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<WeightCheckpoint> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingArtifact {
                path: path.to_path_buf(),
                hint: "checkpoint not found; run `streamvad offline` first".into(),
            }
        } else {
            Error::io(path, e)
        }
    })?;
    parse_checkpoint(&text, &path.display().to_string())
}

/// Writes to a temporary sibling and renames it into place, so a reader
/// never observes a partially written checkpoint.
pub fn write_checkpoint(ckpt: &WeightCheckpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let tmp = path.with_extension("ckpt.tmp");
    fs::write(&tmp, render_checkpoint(ckpt)).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
