//! Deterministic synthetic pose streams across camera domains.
//!
//! Each track is a kinematic stick-figure walker: the root translates across
//! the scene while the limbs swing sinusoidally at the gait frequency, with
//! the swing amplitude also driving knee flexion, vertical bob and a forward
//! torso lean. Anomalous tracks use a second set of motion parameters
//! (typically faster and wider, a running or flailing motif). Every joint then
//! passes through the domain's camera transform.
//!
//! Seeds: track `i` of split `s` in domain `d` draws from
//! `derive_seed(master, TRACK_STREAM, d * 1_000_000 + s * 100_000 + i)`.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pose::{render_stream, FrameLabel, Keypoint, PoseFrame, PoseStream, DEFAULT_JOINTS};
use crate::rng::{derive_seed, rng_from_seed};

const TRACK_STREAM: u64 = 0x74_7261_636b;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewTransform {
    /// In-plane rotation, radians.
    pub rotation: f64,
    pub scale: f64,
    pub translation: [f64; 2],
    pub anisotropy: [f64; 2],
}

impl ViewTransform {
    pub const IDENTITY: ViewTransform = ViewTransform {
        rotation: 0.0,
        scale: 1.0,
        translation: [0.0, 0.0],
        anisotropy: [1.0, 1.0],
    };

    /// Rotate, then scale (with anisotropy), then translate.
    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let (s, c) = self.rotation.sin_cos();
        let (rx, ry) = (c * x - s * y, s * x + c * y);
        (
            self.scale * self.anisotropy[0] * rx + self.translation[0],
            self.scale * self.anisotropy[1] * ry + self.translation[1],
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotionParams {
    /// Stride frequency, Hz.
    pub frequency: f64,
    /// Limb swing amplitude, radians.
    pub amplitude: f64,
    /// Per-coordinate Gaussian noise, scene units (body height is about 1.7).
    pub noise_sigma: f64,
    /// Relative half-width of the per-track uniform jitter applied to
    /// frequency and amplitude; 0 makes every track move alike.
    #[serde(default)]
    pub jitter: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub domain_id: String,
    pub view: ViewTransform,
    pub gait: MotionParams,
    pub anomaly: MotionParams,
    /// Half-width (radians) of the uniform per-track offset added to the view
    /// rotation, as if each person were seen from a slightly different angle.
    #[serde(default)]
    pub rotation_jitter: f64,
    #[serde(default = "default_frame_rate")]
    pub frame_rate: f64,
}

fn default_frame_rate() -> f64 {
    24.0
}

impl DomainSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("domain `{}`: {m}", self.domain_id)));
        if self.domain_id.is_empty() || self.domain_id.contains([',', ' ', '\n', '/']) {
            return bad("domain_id must be a non-empty token without commas, spaces or slashes".into());
        }
        let v = &self.view;
        if !(v.scale > 0.0) || !v.scale.is_finite() {
            return bad(format!("scale {} must be positive", v.scale));
        }
        if v.anisotropy.iter().any(|a| !(*a > 0.0) || !a.is_finite()) {
            return bad(format!("anisotropy {:?} must be positive", v.anisotropy));
        }
        if !v.rotation.is_finite() || v.translation.iter().any(|t| !t.is_finite()) {
            return bad("non-finite view transform".into());
        }
        for (name, m) in [("gait", &self.gait), ("anomaly", &self.anomaly)] {
            if !(m.frequency > 0.0) || !m.frequency.is_finite() {
                return bad(format!("{name} frequency {} must be positive", m.frequency));
            }
            if !(m.noise_sigma >= 0.0) || !m.noise_sigma.is_finite() {
                return bad(format!("{name} noise_sigma {} must be non-negative", m.noise_sigma));
            }
            if !m.amplitude.is_finite() {
                return bad(format!("{name} amplitude must be finite"));
            }
            if !(0.0..1.0).contains(&m.jitter) {
                return bad(format!("{name} jitter {} outside [0, 1)", m.jitter));
            }
        }
        if self.gait == self.anomaly {
            return bad("anomaly motion must differ from normal gait".into());
        }
        if !(self.rotation_jitter >= 0.0) || !self.rotation_jitter.is_finite() {
            return bad(format!("rotation_jitter {} must be non-negative", self.rotation_jitter));
        }
        if !(self.frame_rate > 0.0) || !self.frame_rate.is_finite() {
            return bad(format!("frame_rate {} must be positive", self.frame_rate));
        }
        Ok(())
    }

    /// Reference source camera: identity view, walking gait, running anomalies.
    pub fn default_source() -> Self {
        DomainSpec {
            domain_id: "source".into(),
            view: ViewTransform::IDENTITY,
            gait: MotionParams {
                frequency: 1.0,
                amplitude: 0.35,
                noise_sigma: 0.05,
                jitter: 0.15,
            },
            anomaly: MotionParams {
                frequency: 2.2,
                amplitude: 0.75,
                noise_sigma: 0.05,
                jitter: 0.0,
            },
            rotation_jitter: 0.1,
            frame_rate: default_frame_rate(),
        }
    }

    /// Shifted camera: tilted view with a wider spread of viewing angles,
    /// brisker and more varied normal gait, milder anomalies.
    pub fn default_target() -> Self {
        DomainSpec {
            domain_id: "cam0".into(),
            view: ViewTransform {
                rotation: -0.18,
                scale: 1.6,
                translation: [320.0, 180.0],
                anisotropy: [1.0, 1.0],
            },
            gait: MotionParams {
                frequency: 1.3,
                amplitude: 0.45,
                noise_sigma: 0.05,
                jitter: 0.3,
            },
            anomaly: MotionParams {
                frequency: 1.9,
                amplitude: 0.65,
                noise_sigma: 0.05,
                jitter: 0.0,
            },
            rotation_jitter: 0.22,
            frame_rate: default_frame_rate(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub seed: u64,
    /// Tracks per domain, before the train/test split.
    pub n_tracks: usize,
    pub frames_per_track: usize,
    /// Share of anomalous tracks in each target stream.
    pub anomaly_fraction: f64,
    /// Share of tracks that go to the train split (stream).
    pub split_fraction: f64,
    /// Minimum share of anomalous tracks in every test split.
    pub test_anomaly_fraction: f64,
    /// People visible at once; tracks start staggered accordingly.
    pub concurrent_tracks: usize,
    pub source: DomainSpec,
    pub targets: Vec<DomainSpec>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            seed: 2024,
            n_tracks: 120,
            frames_per_track: 48,
            anomaly_fraction: 0.05,
            split_fraction: 2.0 / 3.0,
            test_anomaly_fraction: 0.3,
            concurrent_tracks: 8,
            source: DomainSpec::default_source(),
            targets: vec![DomainSpec::default_target()],
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..0.5).contains(&self.anomaly_fraction) {
            return Err(Error::Config(format!(
                "anomaly_fraction {} must be in [0, 0.5)",
                self.anomaly_fraction
            )));
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(Error::Config(format!(
                "split_fraction {} must be in (0, 1)",
                self.split_fraction
            )));
        }
        if !(self.test_anomaly_fraction > 0.0 && self.test_anomaly_fraction < 1.0) {
            return Err(Error::Config(format!(
                "test_anomaly_fraction {} must be in (0, 1)",
                self.test_anomaly_fraction
            )));
        }
        if self.frames_per_track == 0 || self.concurrent_tracks == 0 {
            return Err(Error::Config("frames_per_track and concurrent_tracks must be positive".into()));
        }
        let (train, test) = self.split_counts();
        if train == 0 || test < 2 {
            return Err(Error::Config(format!(
                "n_tracks {} leaves {train} train and {test} test tracks",
                self.n_tracks
            )));
        }
        self.source.validate()?;
        for t in &self.targets {
            t.validate()?;
        }
        let mut ids: Vec<&str> = std::iter::once(&self.source)
            .chain(&self.targets)
            .map(|d| d.domain_id.as_str())
            .collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("domain ids must be unique".into()));
        }
        Ok(())
    }

    /// `(train, test)` track counts per domain.
    pub fn split_counts(&self) -> (usize, usize) {
        let train = ((self.n_tracks as f64) * self.split_fraction).round() as usize;
        let train = train.min(self.n_tracks);
        (train, self.n_tracks - train)
    }

    fn stagger(&self) -> u64 {
        (self.frames_per_track / self.concurrent_tracks).max(1) as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackKind {
    Normal,
    Anomalous,
}

// ---------------------------------------------------------------------------
// Kinematics
// ---------------------------------------------------------------------------

const SHOULDER_HALF: f64 = 0.19;
const HIP_HALF: f64 = 0.11;
const TORSO: f64 = 0.52;
const NECK: f64 = 0.2;
const UPPER_ARM: f64 = 0.3;
const FOREARM: f64 = 0.27;
const THIGH: f64 = 0.45;
const SHIN: f64 = 0.44;
const PELVIS_HEIGHT: f64 = 0.92;

fn limb(origin: (f64, f64), angle: f64, len: f64) -> (f64, f64) {
    // angle measured from straight down, positive swings forward (+x)
    (origin.0 + len * angle.sin(), origin.1 - len * angle.cos())
}

/// 17 joints in the common keypoint order, root at `(root_x, 0)`.
fn skeleton(phase: f64, amplitude: f64, height: f64, root_x: f64) -> [(f64, f64); DEFAULT_JOINTS] {
    let swing = amplitude * phase.sin();
    let bob = 0.04 * amplitude * (2.0 * phase).cos();
    let lean = 0.5 * amplitude;

    let pelvis = (root_x, height * (PELVIS_HEIGHT + bob));
    let up = |p: (f64, f64), len: f64| (p.0 + len * height * lean.sin(), p.1 + len * height * lean.cos());
    let chest = up(pelvis, TORSO);
    let head = up(chest, NECK);
    let side = |p: (f64, f64), dx: f64| (p.0 + dx * height * lean.cos(), p.1 - dx * height * lean.sin());

    let l_shoulder = side(chest, -SHOULDER_HALF);
    let r_shoulder = side(chest, SHOULDER_HALF);
    let l_hip = side(pelvis, -HIP_HALF);
    let r_hip = side(pelvis, HIP_HALF);

    let arm_swing = 0.8 * swing;
    let l_elbow = limb(l_shoulder, -arm_swing, UPPER_ARM * height);
    let r_elbow = limb(r_shoulder, arm_swing, UPPER_ARM * height);
    let elbow_bend = 0.3 + 0.6 * amplitude;
    let l_wrist = limb(l_elbow, -arm_swing + elbow_bend, FOREARM * height);
    let r_wrist = limb(r_elbow, arm_swing + elbow_bend, FOREARM * height);

    let l_knee = limb(l_hip, swing, THIGH * height);
    let r_knee = limb(r_hip, -swing, THIGH * height);
    let l_flex = amplitude * (1.0 + (phase + PI / 2.0).sin()).max(0.0);
    let r_flex = amplitude * (1.0 - (phase + PI / 2.0).sin()).max(0.0);
    let l_ankle = limb(l_knee, swing - l_flex, SHIN * height);
    let r_ankle = limb(r_knee, -swing - r_flex, SHIN * height);

    let eye = 0.035 * height;
    [
        head,
        (head.0 - eye, head.1 + eye),
        (head.0 + eye, head.1 + eye),
        (head.0 - 2.0 * eye, head.1),
        (head.0 + 2.0 * eye, head.1),
        l_shoulder,
        r_shoulder,
        l_elbow,
        r_elbow,
        l_wrist,
        r_wrist,
        l_hip,
        r_hip,
        l_knee,
        r_knee,
        l_ankle,
        r_ankle,
    ]
}

/// One track of `length` frames starting at frame 0, track id `t0`, stream id
/// set to the domain id. Frames are labeled by `kind`.
pub fn gen_track(spec: &DomainSpec, kind: TrackKind, length: usize, seed: u64) -> Result<Vec<PoseFrame>> {
    spec.validate()?;
    if length == 0 {
        return Err(Error::invalid("track length must be at least 1"));
    }
    let motion = match kind {
        TrackKind::Normal => spec.gait,
        TrackKind::Anomalous => spec.anomaly,
    };
    let label = match kind {
        TrackKind::Normal => FrameLabel::Normal,
        TrackKind::Anomalous => FrameLabel::Anomalous,
    };
    let mut rng = rng_from_seed(seed);
    let phase0 = rng.random_range(0.0..2.0 * PI);
    let height = rng.random_range(0.9..1.1);
    let start_x = rng.random_range(-4.0..4.0);
    let frequency = motion.frequency * (1.0 + motion.jitter * rng.random_range(-1.0..=1.0));
    let amplitude = motion.amplitude * (1.0 + motion.jitter * rng.random_range(-1.0..=1.0));
    let speed = 0.4 + 1.2 * amplitude.abs() * frequency;
    let view = ViewTransform {
        rotation: spec.view.rotation + spec.rotation_jitter * rng.random_range(-1.0..=1.0),
        ..spec.view
    };
    let noise = Normal::new(0.0, motion.noise_sigma).expect("validated sigma");

    let mut frames = Vec::with_capacity(length);
    for i in 0..length {
        let t = i as f64 / spec.frame_rate;
        let phase = phase0 + 2.0 * PI * frequency * t;
        let joints = skeleton(phase, amplitude, height, start_x + speed * t);
        let joints = joints
            .iter()
            .map(|&(x, y)| {
                let (x, y) = if motion.noise_sigma > 0.0 {
                    (x + noise.sample(&mut rng), y + noise.sample(&mut rng))
                } else {
                    (x, y)
                };
                let (x, y) = view.apply(x, y);
                Keypoint {
                    x,
                    y,
                    confidence: 1.0,
                }
            })
            .collect();
        frames.push(PoseFrame {
            stream_id: spec.domain_id.clone(),
            frame_index: i as u64,
            track_id: "t0".into(),
            joints,
            label,
        });
    }
    Ok(frames)
}

/// Applies `view` to every joint; ids, indices and labels are untouched.
pub fn apply_view_transform(view: &ViewTransform, frames: &[PoseFrame]) -> Vec<PoseFrame> {
    frames
        .iter()
        .map(|f| {
            let mut f = f.clone();
            for kp in &mut f.joints {
                let (x, y) = view.apply(kp.x, kp.y);
                kp.x = x;
                kp.y = y;
            }
            f
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Scenarios
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Split {
    Train = 0,
    Test = 1,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetStreams {
    pub domain_id: String,
    /// Unlabeled-in-spirit deployment stream (labels kept for bookkeeping).
    pub stream: PoseStream,
    pub test: PoseStream,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub source_train: PoseStream,
    pub source_test: PoseStream,
    pub targets: Vec<TargetStreams>,
}

/// Evenly spaced positions of `count` anomalous tracks among `total`.
fn anomalous_slots(total: usize, count: usize) -> Vec<bool> {
    let mut slots = vec![false; total];
    for k in 0..count {
        let pos = ((2 * k + 1) * total) / (2 * count);
        slots[pos.min(total - 1)] = true;
    }
    slots
}

fn gen_split(
    config: &ScenarioConfig,
    spec: &DomainSpec,
    domain_ordinal: u64,
    split: Split,
    n: usize,
    anomalous: usize,
) -> Result<PoseStream> {
    let slots = anomalous_slots(n, anomalous);
    let mut frames = Vec::with_capacity(n * config.frames_per_track);
    for (i, &is_anomalous) in slots.iter().enumerate() {
        let ordinal = domain_ordinal * 1_000_000 + split as u64 * 100_000 + i as u64;
        let seed = derive_seed(config.seed, TRACK_STREAM, ordinal);
        let kind = if is_anomalous {
            TrackKind::Anomalous
        } else {
            TrackKind::Normal
        };
        let offset = i as u64 * config.stagger();
        let prefix = match split {
            Split::Train => "tr",
            Split::Test => "te",
        };
        for mut f in gen_track(spec, kind, config.frames_per_track, seed)? {
            f.track_id = format!("{prefix}{i:04}");
            f.frame_index += offset;
            frames.push(f);
        }
    }
    let mut stream = PoseStream::new(DEFAULT_JOINTS, frames);
    stream.sort();
    Ok(stream)
}

pub fn gen_scenario(config: &ScenarioConfig) -> Result<Scenario> {
    config.validate()?;
    let (n_train, n_test) = config.split_counts();
    let test_anomalous = ((n_test as f64) * config.test_anomaly_fraction).ceil() as usize;
    let test_anomalous = test_anomalous.clamp(1, n_test - 1);
    let stream_anomalous = ((n_train as f64) * config.anomaly_fraction).round() as usize;

    let source_train = gen_split(config, &config.source, 0, Split::Train, n_train, 0)?;
    let source_test = gen_split(config, &config.source, 0, Split::Test, n_test, test_anomalous)?;
    let targets = config
        .targets
        .iter()
        .enumerate()
        .map(|(i, spec)| {
            let ordinal = i as u64 + 1;
            Ok(TargetStreams {
                domain_id: spec.domain_id.clone(),
                stream: gen_split(config, spec, ordinal, Split::Train, n_train, stream_anomalous)?,
                test: gen_split(config, spec, ordinal, Split::Test, n_test, test_anomalous)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Scenario {
        source_train,
        source_test,
        targets,
    })
}

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const SOURCE_TRAIN_FILE: &str = "source_train.pose";
pub const SOURCE_TEST_FILE: &str = "source_test.pose";

pub fn target_stream_file(domain_id: &str) -> String {
    format!("target_{domain_id}_stream.pose")
}

pub fn target_test_file(domain_id: &str) -> String {
    format!("target_{domain_id}_test.pose")
}

fn manifest_domain(out: &mut String, prefix: &str, d: &DomainSpec) {
    let v = &d.view;
    writeln!(out, "{prefix}.domain_id = {}", d.domain_id).unwrap();
    writeln!(out, "{prefix}.rotation = {:?}", v.rotation).unwrap();
    writeln!(out, "{prefix}.scale = {:?}", v.scale).unwrap();
    writeln!(out, "{prefix}.translation = {:?},{:?}", v.translation[0], v.translation[1]).unwrap();
    writeln!(out, "{prefix}.anisotropy = {:?},{:?}", v.anisotropy[0], v.anisotropy[1]).unwrap();
    for (name, m) in [("gait", &d.gait), ("anomaly", &d.anomaly)] {
        writeln!(out, "{prefix}.{name}.frequency = {:?}", m.frequency).unwrap();
        writeln!(out, "{prefix}.{name}.amplitude = {:?}", m.amplitude).unwrap();
        writeln!(out, "{prefix}.{name}.noise_sigma = {:?}", m.noise_sigma).unwrap();
        writeln!(out, "{prefix}.{name}.jitter = {:?}", m.jitter).unwrap();
    }
    writeln!(out, "{prefix}.rotation_jitter = {:?}", d.rotation_jitter).unwrap();
    writeln!(out, "{prefix}.frame_rate = {:?}", d.frame_rate).unwrap();
}

/// Renders every file of a scenario as `(file name, contents)`, manifest last.
pub fn render_scenario(config: &ScenarioConfig, scenario: &Scenario) -> Result<Vec<(String, String)>> {
    let mut files = vec![
        (SOURCE_TRAIN_FILE.to_string(), render_stream(&scenario.source_train)?),
        (SOURCE_TEST_FILE.to_string(), render_stream(&scenario.source_test)?),
    ];
    for t in &scenario.targets {
        files.push((target_stream_file(&t.domain_id), render_stream(&t.stream)?));
        files.push((target_test_file(&t.domain_id), render_stream(&t.test)?));
    }

    let mut m = String::from("# streamvad scenario manifest\n");
    writeln!(m, "seed = {}", config.seed).unwrap();
    writeln!(m, "n_tracks = {}", config.n_tracks).unwrap();
    writeln!(m, "frames_per_track = {}", config.frames_per_track).unwrap();
    writeln!(m, "anomaly_fraction = {:?}", config.anomaly_fraction).unwrap();
    writeln!(m, "split_fraction = {:?}", config.split_fraction).unwrap();
    writeln!(m, "test_anomaly_fraction = {:?}", config.test_anomaly_fraction).unwrap();
    writeln!(m, "concurrent_tracks = {}", config.concurrent_tracks).unwrap();
    writeln!(m, "track_seed_rule = derive_seed(seed, {TRACK_STREAM:#x}, domain * 1000000 + split * 100000 + track)").unwrap();
    for (name, _) in &files {
        writeln!(m, "file = {name}").unwrap();
    }
    manifest_domain(&mut m, "source", &config.source);
    for (i, t) in config.targets.iter().enumerate() {
        manifest_domain(&mut m, &format!("target.{i}"), t);
    }
    files.push((MANIFEST_FILE.to_string(), m));
    Ok(files)
}

/// Generates the scenario into `dir`. Existing files are only replaced when
/// `force` is set; without it nothing is written if any target file exists.
pub fn write_scenario(config: &ScenarioConfig, dir: &Path, force: bool) -> Result<Vec<PathBuf>> {
    let scenario = gen_scenario(config)?;
    let files = render_scenario(config, &scenario)?;
    if !force {
        if let Some((name, _)) = files.iter().find(|(name, _)| dir.join(name).exists()) {
            return Err(Error::WouldOverwrite(dir.join(name)));
        }
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::with_capacity(files.len());
    for (name, contents) in files {
        let path = dir.join(&name);
        fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

/// Files listed by `file = ...` lines in a manifest.
pub fn manifest_files(manifest: &str) -> Vec<String> {
    manifest
        .lines()
        .filter_map(|l| l.strip_prefix("file = "))
        .map(str::to_string)
        .collect()
}
