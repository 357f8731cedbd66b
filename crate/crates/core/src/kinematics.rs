//! Seeded synthesis of labeled gesture sessions.
//!
//! Every session is laid out in continuous time first (gesture instances,
//! background glances, blinks, saccades) using a layout RNG that never sees
//! the frame rate, then sampled at the requested rate. Per-frame noise comes
//! from a separate stream. Consequently the labels of a 60 fps session
//! subsampled to 20 fps match a session generated directly at 20 fps.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Point2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    estimate_homography_dlt, homography_from_pose, rotation_matrix, CameraIntrinsics, Correspondence,
    GeometryError, Homography, RigidMotion,
};
use crate::rng::derive_seed;

pub const SUPPORTED_FRAME_RATES: [u32; 4] = [10, 20, 30, 60];

#[derive(Debug, Error)]
pub enum KinematicsError {
    #[error("frame rate {0} is not one of 10, 20, 30, 60")]
    UnsupportedFrameRate(u32),
    #[error("cannot resample {from} fps to {to} fps")]
    IncompatibleRate { from: u32, to: u32 },
    #[error("a session needs a non-neutral gesture class")]
    NeutralSession,
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GestureClass {
    Neutral = 0,
    ComeHere = 1,
    NoddingHead = 2,
    ShakingHead = 3,
    Maybe = 4,
    Surprise = 5,
}

impl GestureClass {
    pub const ALL: [GestureClass; 6] = [
        GestureClass::Neutral,
        GestureClass::ComeHere,
        GestureClass::NoddingHead,
        GestureClass::ShakingHead,
        GestureClass::Maybe,
        GestureClass::Surprise,
    ];

    pub fn id(self) -> usize {
        self as usize
    }

    pub fn from_id(id: usize) -> Option<GestureClass> {
        Self::ALL.get(id).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            GestureClass::Neutral => "Neutral",
            GestureClass::ComeHere => "ComeHere",
            GestureClass::NoddingHead => "NoddingHead",
            GestureClass::ShakingHead => "ShakingHead",
            GestureClass::Maybe => "Maybe",
            GestureClass::Surprise => "Surprise",
        }
    }

    pub fn from_name(name: &str) -> Option<GestureClass> {
        let lower = name.to_ascii_lowercase();
        Self::ALL.iter().copied().find(|c| c.name().to_ascii_lowercase() == lower)
    }
}

impl std::fmt::Display for GestureClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Non-neutral classes performed in a dataset.
pub fn session_classes(include_surprise: bool) -> &'static [GestureClass] {
    if include_surprise {
        &GestureClass::ALL[1..]
    } else {
        &GestureClass::ALL[1..5]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActorProfile {
    pub actor_id: u32,
    pub amplitude_scale: f64,
    pub frequency_scale: f64,
    /// Head drift noise, radians per frame.
    pub noise_sigma: f64,
    /// Fractional jitter applied to nominal durations.
    pub timing_jitter: f64,
}

impl ActorProfile {
    pub fn validate(&self) -> Result<(), KinematicsError> {
        let in_range = |v: f64| (0.5..=2.0).contains(&v);
        if !in_range(self.amplitude_scale) || !in_range(self.frequency_scale) {
            return Err(KinematicsError::InvalidProfile(format!(
                "actor {}: scales must lie in [0.5, 2.0]",
                self.actor_id
            )));
        }
        if !(self.noise_sigma >= 0.0) || !(0.0..0.5).contains(&self.timing_jitter) {
            return Err(KinematicsError::InvalidProfile(format!(
                "actor {}: bad noise or jitter",
                self.actor_id
            )));
        }
        Ok(())
    }

    /// The four default performers. They differ in amplitude and tempo.
    pub fn default_set() -> Vec<ActorProfile> {
        let scales = [(1.0, 1.0), (0.8, 1.12), (1.2, 0.9), (0.9, 0.85)];
        scales
            .iter()
            .enumerate()
            .map(|(i, &(a, f))| ActorProfile {
                actor_id: i as u32,
                amplitude_scale: a,
                frequency_scale: f,
                noise_sigma: 0.0015,
                timing_jitter: 0.15,
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SceneKind {
    Indoor,
    Outdoor,
}

impl SceneKind {
    pub fn name(self) -> &'static str {
        match self {
            SceneKind::Indoor => "indoor",
            SceneKind::Outdoor => "outdoor",
        }
    }

    pub fn from_name(s: &str) -> Option<SceneKind> {
        match s {
            "indoor" => Some(SceneKind::Indoor),
            "outdoor" => Some(SceneKind::Outdoor),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneProfile {
    pub kind: SceneKind,
    /// Distance to the dominant fronto-parallel plane, meters.
    pub plane_depth: f64,
    /// Std of Gaussian noise on DLT correspondences, pixels.
    pub correspondence_noise: f64,
}

impl SceneProfile {
    pub fn indoor() -> Self {
        SceneProfile { kind: SceneKind::Indoor, plane_depth: 1.5, correspondence_noise: 0.3 }
    }

    pub fn outdoor() -> Self {
        SceneProfile { kind: SceneKind::Outdoor, plane_depth: 20.0, correspondence_noise: 0.5 }
    }
}

/// Shape parameters of the synthetic performer. Nominal values; actors
/// scale amplitudes and tempos.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KinematicsConfig {
    pub session_seconds: f64,
    pub nod_amplitude: f64,
    pub nod_frequency: f64,
    pub shake_amplitude: f64,
    pub shake_frequency: f64,
    pub maybe_amplitude: f64,
    pub maybe_frequency: f64,
    pub come_amplitude: f64,
    pub come_pulse_seconds: f64,
    pub come_gap_seconds: (f64, f64),
    pub come_pulses: usize,
    pub surprise_seconds: f64,
    pub surprise_rx: f64,
    /// Backward camera displacement at the surprise peak, meters.
    pub surprise_tz: f64,
    pub surprise_eye_scale: f64,
    /// Correlation time of the head drift, seconds.
    pub drift_tau: f64,
    pub min_neutral_gap: f64,
    /// Background head glances per second of neutral time.
    pub glance_rate: f64,
    pub glance_amplitude: (f64, f64),
    pub glance_seconds: (f64, f64),
    /// Eye-image pupil shift per radian of head rotation (compensatory).
    pub vor_gain: f64,
    pub eye_jitter_px: f64,
    pub blink_rate: f64,
    pub blink_seconds: f64,
    pub blink_scale: f64,
    pub blink_shift_px: f64,
    pub saccade_rate: f64,
    pub saccade_px: f64,
    pub saccade_seconds: f64,
    /// Multiplies every noise source (drift, correspondences, eye jitter).
    pub noise_scale: f64,
}

impl Default for KinematicsConfig {
    fn default() -> Self {
        KinematicsConfig {
            session_seconds: 15.0,
            nod_amplitude: 0.20,
            nod_frequency: 2.0,
            shake_amplitude: 0.25,
            shake_frequency: 2.0,
            maybe_amplitude: 0.20,
            maybe_frequency: 1.0,
            come_amplitude: 0.25,
            come_pulse_seconds: 0.5,
            come_gap_seconds: (0.7, 1.2),
            come_pulses: 2,
            surprise_seconds: 0.4,
            surprise_rx: -0.1,
            surprise_tz: -0.05 * 1.5,
            surprise_eye_scale: 0.15,
            drift_tau: 0.5,
            min_neutral_gap: 0.8,
            glance_rate: 0.08,
            glance_amplitude: (0.04, 0.12),
            glance_seconds: (0.3, 0.8),
            vor_gain: 80.0,
            eye_jitter_px: 0.3,
            blink_rate: 0.25,
            blink_seconds: 0.15,
            blink_scale: -0.08,
            blink_shift_px: 6.0,
            saccade_rate: 0.5,
            saccade_px: 15.0,
            saccade_seconds: 0.05,
            noise_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Axis {
    X,
    Y,
    Z,
}

#[derive(Debug, Clone, PartialEq)]
enum Shape {
    Sinusoid { axis: Axis, amplitude: f64, frequency: f64, cycles: f64 },
    /// Down-and-back pulses on R_X separated by pauses.
    Pulses { amplitude: f64, pulse: f64, gaps: Vec<f64> },
    Surprise { duration: f64, rx: f64, tz: f64, eye_scale: f64 },
    /// Unlabeled look-around motion in the neutral background.
    Glance { axis: Axis, amplitude: f64, duration: f64 },
}

/// `sin^2` bump on `[0, width]`, zero elsewhere.
fn bump(t: f64, width: f64) -> f64 {
    if t <= 0.0 || t >= width {
        0.0
    } else {
        (PI * t / width).sin().powi(2)
    }
}

/// Offset into a `sin^2` bump before it reaches 10% of its peak.
fn decay_offset(width: f64) -> f64 {
    width * 0.1f64.sqrt().asin() / PI
}

#[derive(Debug, Clone, Copy, Default)]
struct HeadPose {
    rx: f64,
    ry: f64,
    rz: f64,
    tz: f64,
}

#[derive(Debug, Clone)]
struct Instance {
    class: GestureClass,
    start: f64,
    shape: Shape,
}

impl Instance {
    fn duration(&self) -> f64 {
        match &self.shape {
            Shape::Sinusoid { frequency, cycles, .. } => cycles / frequency,
            Shape::Pulses { pulse, gaps, .. } => pulse * (gaps.len() + 1) as f64 + gaps.iter().sum::<f64>(),
            Shape::Surprise { duration, .. } => *duration,
            Shape::Glance { duration, .. } => *duration,
        }
    }

    fn end(&self) -> f64 {
        self.start + self.duration()
    }

    fn add_head(&self, t: f64, pose: &mut HeadPose) {
        let local = t - self.start;
        let set = |pose: &mut HeadPose, axis: Axis, v: f64| match axis {
            Axis::X => pose.rx += v,
            Axis::Y => pose.ry += v,
            Axis::Z => pose.rz += v,
        };
        match &self.shape {
            Shape::Sinusoid { axis, amplitude, frequency, .. } => {
                if local > 0.0 && local < self.duration() {
                    set(pose, *axis, amplitude * (2.0 * PI * frequency * local).sin());
                }
            }
            Shape::Pulses { amplitude, pulse, gaps } => {
                let mut offset = 0.0;
                for i in 0..=gaps.len() {
                    pose.rx += amplitude * bump(local - offset, *pulse);
                    offset += pulse + gaps.get(i).copied().unwrap_or(0.0);
                }
            }
            Shape::Surprise { duration, rx, tz, .. } => {
                let b = bump(local, *duration);
                pose.rx += rx * b;
                pose.tz += tz * b;
            }
            Shape::Glance { axis, amplitude, duration } => set(pose, *axis, amplitude * bump(local, *duration)),
        }
    }

    fn eye_scale(&self, t: f64) -> f64 {
        match &self.shape {
            Shape::Surprise { duration, eye_scale, .. } => eye_scale * bump(t - self.start, *duration),
            _ => 0.0,
        }
    }

    /// Labeled support: pulse edges below 10% of the peak stay Neutral.
    fn labels(&self, t: f64) -> bool {
        if self.class == GestureClass::Neutral {
            return false;
        }
        let (lo, hi) = match &self.shape {
            Shape::Sinusoid { .. } => (self.start, self.end()),
            Shape::Pulses { pulse, .. } => (self.start + decay_offset(*pulse), self.end() - decay_offset(*pulse)),
            Shape::Surprise { duration, .. } => {
                (self.start + decay_offset(*duration), self.end() - decay_offset(*duration))
            }
            Shape::Glance { .. } => return false,
        };
        t >= lo && t < hi
    }
}

#[derive(Debug, Clone, Copy)]
struct EyeEvent {
    start: f64,
    kind: EyeEventKind,
}

#[derive(Debug, Clone, Copy)]
enum EyeEventKind {
    Blink,
    Saccade { dx: f64, dy: f64 },
}

/// Continuous-time description of one session.
#[derive(Debug, Clone, Default)]
struct Timeline {
    duration: f64,
    instances: Vec<Instance>,
    eye_events: Vec<EyeEvent>,
}

/// Eye-image state: pupil-region scale and translation (pixels).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EyeState {
    pub scale: f64,
    pub dx: f64,
    pub dy: f64,
}

/// Per-frame head poses, eye states, and labels for one script or session.
/// Poses are absolute (relative to the session start); index `k` is time `k / fps`.
#[derive(Debug, Clone)]
pub struct MotionTrack {
    pub frame_rate: u32,
    pub head: Vec<RigidMotion>,
    pub eye: Vec<EyeState>,
    pub labels: Vec<GestureClass>,
}

fn jittered(rng: &mut ChaCha8Rng, nominal: f64, jitter: f64) -> f64 {
    if jitter > 0.0 {
        nominal * (1.0 + rng.random_range(-jitter..jitter))
    } else {
        nominal
    }
}

fn make_instance(
    class: GestureClass,
    actor: &ActorProfile,
    cfg: &KinematicsConfig,
    rng: &mut ChaCha8Rng,
) -> Instance {
    let a = actor.amplitude_scale;
    let f = actor.frequency_scale;
    let j = actor.timing_jitter;
    let shape = match class {
        GestureClass::NoddingHead => Shape::Sinusoid {
            axis: Axis::X,
            amplitude: cfg.nod_amplitude * a,
            frequency: jittered(rng, cfg.nod_frequency * f, j),
            cycles: if rng.random_bool(0.5) { 2.0 } else { 3.0 },
        },
        GestureClass::ShakingHead => Shape::Sinusoid {
            axis: Axis::Y,
            amplitude: cfg.shake_amplitude * a,
            frequency: jittered(rng, cfg.shake_frequency * f, j),
            cycles: if rng.random_bool(0.5) { 2.0 } else { 3.0 },
        },
        GestureClass::Maybe => Shape::Sinusoid {
            axis: Axis::Z,
            amplitude: cfg.maybe_amplitude * a,
            frequency: jittered(rng, cfg.maybe_frequency * f, j),
            cycles: if rng.random_bool(0.5) { 1.5 } else { 2.0 },
        },
        GestureClass::ComeHere => {
            let pulse = jittered(rng, cfg.come_pulse_seconds / f, j);
            let gaps = (1..cfg.come_pulses.max(1))
                .map(|_| rng.random_range(cfg.come_gap_seconds.0..=cfg.come_gap_seconds.1))
                .collect();
            Shape::Pulses { amplitude: cfg.come_amplitude * a, pulse, gaps }
        }
        GestureClass::Surprise => Shape::Surprise {
            duration: jittered(rng, cfg.surprise_seconds / f, j),
            rx: cfg.surprise_rx * a,
            tz: cfg.surprise_tz * a,
            eye_scale: cfg.surprise_eye_scale,
        },
        GestureClass::Neutral => Shape::Glance { axis: Axis::X, amplitude: 0.0, duration: 0.0 },
    };
    Instance { class, start: 0.0, shape }
}

/// Poisson-distributed eye events and glances inside `[lo, hi)`.
fn background_events(
    lo: f64,
    hi: f64,
    cfg: &KinematicsConfig,
    with_glances: bool,
    rng: &mut ChaCha8Rng,
    timeline: &mut Timeline,
) {
    let exp_times = |rate: f64, rng: &mut ChaCha8Rng| -> Vec<f64> {
        let mut out = Vec::new();
        if rate <= 0.0 {
            return out;
        }
        let mut t = lo;
        loop {
            let u: f64 = rng.random_range(f64::EPSILON..1.0);
            t += -u.ln() / rate;
            if t >= hi {
                return out;
            }
            out.push(t);
        }
    };
    for t in exp_times(cfg.blink_rate, rng) {
        if t + cfg.blink_seconds < hi {
            timeline.eye_events.push(EyeEvent { start: t, kind: EyeEventKind::Blink });
        }
    }
    for t in exp_times(cfg.saccade_rate, rng) {
        let dx = rng.random_range(-cfg.saccade_px..cfg.saccade_px);
        let dy = rng.random_range(-cfg.saccade_px..cfg.saccade_px) * 0.5;
        timeline.eye_events.push(EyeEvent { start: t, kind: EyeEventKind::Saccade { dx, dy } });
    }
    if with_glances {
        for t in exp_times(cfg.glance_rate, rng) {
            let duration = rng.random_range(cfg.glance_seconds.0..cfg.glance_seconds.1);
            if t + duration >= hi {
                continue;
            }
            let axis = match rng.random_range(0..3) {
                0 => Axis::X,
                1 => Axis::Y,
                _ => Axis::Z,
            };
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let amplitude = sign * rng.random_range(cfg.glance_amplitude.0..cfg.glance_amplitude.1);
            timeline.instances.push(Instance {
                class: GestureClass::Neutral,
                start: t,
                shape: Shape::Glance { axis, amplitude, duration },
            });
        }
    }
}

impl Timeline {
    fn head(&self, t: f64) -> HeadPose {
        let mut pose = HeadPose::default();
        for inst in &self.instances {
            inst.add_head(t, &mut pose);
        }
        pose
    }

    fn label(&self, t: f64) -> GestureClass {
        self.instances.iter().find(|i| i.labels(t)).map(|i| i.class).unwrap_or(GestureClass::Neutral)
    }

    /// Eye state without jitter. Saccades accumulate as fixation shifts that
    /// decay back toward the center.
    fn eye(&self, t: f64, head: &HeadPose, cfg: &KinematicsConfig) -> EyeState {
        let mut scale = 1.0 + self.instances.iter().map(|i| i.eye_scale(t)).sum::<f64>();
        let mut dx = -cfg.vor_gain * head.ry;
        let mut dy = cfg.vor_gain * head.rx;
        for ev in &self.eye_events {
            let local = t - ev.start;
            match ev.kind {
                EyeEventKind::Blink => {
                    let b = bump(local, cfg.blink_seconds);
                    scale += cfg.blink_scale * b;
                    dy += cfg.blink_shift_px * b;
                }
                EyeEventKind::Saccade { dx: sx, dy: sy } => {
                    if local > 0.0 {
                        let ramp = (local / cfg.saccade_seconds).min(1.0);
                        let hold = (-(local - cfg.saccade_seconds).max(0.0) / 2.0).exp();
                        dx += sx * ramp * hold;
                        dy += sy * ramp * hold;
                    }
                }
            }
        }
        EyeState { scale, dx, dy }
    }

    fn sample(
        &self,
        frame_rate: u32,
        actor: &ActorProfile,
        cfg: &KinematicsConfig,
        noise_rng: &mut ChaCha8Rng,
    ) -> MotionTrack {
        let fps = frame_rate as f64;
        let records = (self.duration * fps).round() as usize;
        let sigma = actor.noise_sigma * cfg.noise_scale;
        let rho = (-1.0 / (fps * cfg.drift_tau)).exp();
        let drift = Normal::new(0.0, sigma.max(0.0)).unwrap();
        let jitter = Normal::new(0.0, (cfg.eye_jitter_px * cfg.noise_scale).max(0.0)).unwrap();
        let mut state = [0.0f64; 3];
        let mut head = Vec::with_capacity(records + 1);
        let mut eye = Vec::with_capacity(records + 1);
        let mut labels = Vec::with_capacity(records);
        for k in 0..=records {
            let t = k as f64 / fps;
            if sigma > 0.0 {
                for s in state.iter_mut() {
                    *s = rho * *s + drift.sample(noise_rng);
                }
            }
            let pose = self.head(t);
            let mut e = self.eye(t, &pose, cfg);
            if cfg.eye_jitter_px > 0.0 && cfg.noise_scale > 0.0 {
                e.dx += jitter.sample(noise_rng);
                e.dy += jitter.sample(noise_rng);
            }
            head.push(RigidMotion {
                rx: pose.rx + state[0],
                ry: pose.ry + state[1],
                rz: pose.rz + state[2],
                tx: 0.0,
                ty: 0.0,
                tz: pose.tz,
            });
            eye.push(e);
            if k < records {
                labels.push(self.label(t));
            }
        }
        MotionTrack { frame_rate, head, eye, labels }
    }
}

fn check_rate(frame_rate: u32) -> Result<(), KinematicsError> {
    if SUPPORTED_FRAME_RATES.contains(&frame_rate) {
        Ok(())
    } else {
        Err(KinematicsError::UnsupportedFrameRate(frame_rate))
    }
}

fn session_rngs(seed: u64) -> (ChaCha8Rng, ChaCha8Rng) {
    let layout = ChaCha8Rng::seed_from_u64(seed);
    let mut noise = ChaCha8Rng::seed_from_u64(seed);
    noise.set_stream(1);
    (layout, noise)
}

/// One gesture instance starting at t = 0, followed by neutral drift until
/// `duration`. Neutral scripts contain drift and blinks only.
pub fn gesture_script(
    class: GestureClass,
    actor: &ActorProfile,
    duration: f64,
    frame_rate: u32,
    seed: u64,
    cfg: &KinematicsConfig,
) -> Result<MotionTrack, KinematicsError> {
    check_rate(frame_rate)?;
    actor.validate()?;
    let (mut layout, mut noise) = session_rngs(seed);
    let mut timeline = Timeline { duration, ..Default::default() };
    if class == GestureClass::Neutral {
        let mut events = Timeline::default();
        background_events(0.0, duration, cfg, false, &mut layout, &mut events);
        timeline.eye_events =
            events.eye_events.into_iter().filter(|e| matches!(e.kind, EyeEventKind::Blink)).collect();
    } else {
        timeline.instances.push(make_instance(class, actor, cfg, &mut layout));
    }
    Ok(timeline.sample(frame_rate, actor, cfg, &mut noise))
}

/// Length in seconds of the labeled support of the scripted instance.
pub fn script_gesture_window(track: &MotionTrack) -> (usize, usize) {
    let first = track.labels.iter().position(|&l| l != GestureClass::Neutral);
    let last = track.labels.iter().rposition(|&l| l != GestureClass::Neutral);
    match (first, last) {
        (Some(a), Some(b)) => (a, b + 1),
        _ => (0, 0),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameRecord {
    pub frame_index: usize,
    /// Frame-pair homography of the world camera, frame t to t+1.
    pub world: [f64; 8],
    /// Frame-pair homography of the eye camera.
    pub eye: [f64; 8],
    pub label: GestureClass,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSequence {
    pub id: String,
    pub frame_rate: u32,
    pub actor_id: u32,
    pub scene: SceneKind,
    /// The non-neutral class performed in this session.
    pub class: GestureClass,
    pub seed: u64,
    pub frames: Vec<FrameRecord>,
}

impl LabeledSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn labels(&self) -> Vec<GestureClass> {
        self.frames.iter().map(|f| f.label).collect()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.frames.len() as f64 / self.frame_rate as f64
    }

    /// Maximal runs of one non-neutral label as `(label, start, end)`.
    pub fn instances(&self) -> Vec<(GestureClass, usize, usize)> {
        label_runs(&self.labels())
    }
}

/// Maximal runs of one non-neutral label as `(label, start, end)`.
pub fn label_runs(labels: &[GestureClass]) -> Vec<(GestureClass, usize, usize)> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < labels.len() {
        let l = labels[i];
        let mut j = i + 1;
        while j < labels.len() && labels[j] == l {
            j += 1;
        }
        if l != GestureClass::Neutral {
            out.push((l, i, j));
        }
        i = j;
    }
    out
}

/// Sample points for DLT re-estimation: a 5x4 grid inset from the borders.
fn grid_points(k: &CameraIntrinsics) -> Vec<Point2<f64>> {
    let mut pts = Vec::with_capacity(20);
    for iy in 0..4 {
        for ix in 0..5 {
            let x = k.width * (0.1 + 0.8 * ix as f64 / 4.0);
            let y = k.height * (0.1 + 0.8 * iy as f64 / 3.0);
            pts.push(Point2::new(x, y));
        }
    }
    pts
}

/// World-camera frame-pair homography between two absolute head poses.
fn world_pair(
    k: &CameraIntrinsics,
    a: &RigidMotion,
    b: &RigidMotion,
    plane_depth: f64,
) -> Result<Homography, GeometryError> {
    let ra = rotation_matrix(a.rx, a.ry, a.rz);
    let rb = rotation_matrix(b.rx, b.ry, b.rz);
    let ca = Vector3::new(0.0, 0.0, a.tz);
    let cb = Vector3::new(0.0, 0.0, b.tz);
    let rel_r = rb.transpose() * ra;
    let rel_t = rb.transpose() * (ca - cb);
    let world_normal = Vector3::z();
    let normal = ra.transpose() * world_normal;
    let depth = plane_depth - world_normal.dot(&ca);
    homography_from_pose(k, &rel_r, &rel_t, &normal, depth)
}

/// Eye-camera frame-pair similarity between two eye states.
fn eye_pair(k: &CameraIntrinsics, a: &EyeState, b: &EyeState) -> Result<Homography, GeometryError> {
    let r = b.scale / a.scale;
    let tx = k.cx + b.dx - r * (k.cx + a.dx);
    let ty = k.cy + b.dy - r * (k.cy + a.dy);
    Homography::from_matrix(Matrix3::new(r, 0.0, tx, 0.0, r, ty, 0.0, 0.0, 1.0))
}

fn track_to_frames(
    track: &MotionTrack,
    scene: &SceneProfile,
    cfg: &KinematicsConfig,
    noise_rng: &mut ChaCha8Rng,
) -> Result<Vec<FrameRecord>, KinematicsError> {
    let kw = CameraIntrinsics::world_default();
    let ke = CameraIntrinsics::eye_default();
    let grid = grid_points(&kw);
    let sigma = scene.correspondence_noise * cfg.noise_scale;
    let noise = Normal::new(0.0, sigma.max(0.0)).unwrap();
    let mut frames = Vec::with_capacity(track.labels.len());
    for (k, &label) in track.labels.iter().enumerate() {
        let analytic = world_pair(&kw, &track.head[k], &track.head[k + 1], scene.plane_depth)?;
        let world = if sigma > 0.0 {
            let cs: Vec<Correspondence> = grid
                .iter()
                .map(|&p| {
                    let q = analytic.apply(p)?;
                    let src = Point2::new(p.x + noise.sample(noise_rng), p.y + noise.sample(noise_rng));
                    let dst = Point2::new(q.x + noise.sample(noise_rng), q.y + noise.sample(noise_rng));
                    Ok(Correspondence::new(src, dst))
                })
                .collect::<Result<_, GeometryError>>()?;
            estimate_homography_dlt(&cs)?
        } else {
            analytic
        };
        let eye = eye_pair(&ke, &track.eye[k], &track.eye[k + 1])?;
        frames.push(FrameRecord { frame_index: k, world: world.to_param8(), eye: eye.to_param8(), label });
    }
    Ok(frames)
}

/// Lay out `count` instances plus background events over one session.
fn session_timeline(
    class: GestureClass,
    count: usize,
    actor: &ActorProfile,
    cfg: &KinematicsConfig,
    rng: &mut ChaCha8Rng,
) -> Timeline {
    let total = cfg.session_seconds;
    let mut count = count.max(1);
    let mut instances: Vec<Instance>;
    loop {
        instances = (0..count).map(|_| make_instance(class, actor, cfg, rng)).collect();
        let busy: f64 = instances.iter().map(Instance::duration).sum();
        let free = total - busy - (count + 1) as f64 * cfg.min_neutral_gap;
        if free >= 0.0 || count == 1 {
            // Split the free neutral time into count + 1 random shares.
            let weights: Vec<f64> = (0..=count).map(|_| rng.random_range(0.2..1.0)).collect();
            let wsum: f64 = weights.iter().sum();
            let mut t = 0.0;
            for (inst, w) in instances.iter_mut().zip(&weights) {
                t += cfg.min_neutral_gap + free.max(0.0) * w / wsum;
                inst.start = t;
                t += inst.duration();
            }
            break;
        }
        count -= 1;
    }
    let mut timeline = Timeline { duration: total, instances: Vec::new(), eye_events: Vec::new() };
    // Background activity only inside neutral stretches.
    let mut lo = 0.0;
    for inst in &instances {
        background_events(lo, inst.start, cfg, true, rng, &mut timeline);
        lo = inst.end();
    }
    background_events(lo, total, cfg, true, rng, &mut timeline);
    timeline.instances.extend(instances);
    timeline
}

/// Parameters of one synthesized session.
#[derive(Debug, Clone)]
pub struct SessionSpec<'a> {
    pub id: String,
    pub class: GestureClass,
    pub instances: usize,
    pub actor: &'a ActorProfile,
    pub scene: &'a SceneProfile,
    pub frame_rate: u32,
    pub seed: u64,
}

/// A 15 s session with 3-4 instances of `class` in a neutral background.
pub fn synthesize_session(spec: &SessionSpec<'_>, cfg: &KinematicsConfig) -> Result<LabeledSequence, KinematicsError> {
    if spec.class == GestureClass::Neutral {
        return Err(KinematicsError::NeutralSession);
    }
    check_rate(spec.frame_rate)?;
    spec.actor.validate()?;
    let (mut layout, mut noise) = session_rngs(spec.seed);
    let timeline = session_timeline(spec.class, spec.instances, spec.actor, cfg, &mut layout);
    let track = timeline.sample(spec.frame_rate, spec.actor, cfg, &mut noise);
    let frames = track_to_frames(&track, spec.scene, cfg, &mut noise)?;
    Ok(LabeledSequence {
        id: spec.id.clone(),
        frame_rate: spec.frame_rate,
        actor_id: spec.actor.actor_id,
        scene: spec.scene.kind,
        class: spec.class,
        seed: spec.seed,
        frames,
    })
}

/// Everything needed to regenerate a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub seed: u64,
    pub frame_rate: u32,
    pub include_surprise: bool,
    pub sessions_per_actor: usize,
    pub actors: Vec<ActorProfile>,
    pub scenes: Vec<SceneProfile>,
    pub kinematics: KinematicsConfig,
}

impl DatasetSpec {
    /// Four actors, ten sessions each, indoor and outdoor.
    pub fn default_with(seed: u64, frame_rate: u32, include_surprise: bool) -> Self {
        DatasetSpec {
            seed,
            frame_rate,
            include_surprise,
            sessions_per_actor: 10,
            actors: ActorProfile::default_set(),
            scenes: vec![SceneProfile::indoor(), SceneProfile::outdoor()],
            kinematics: KinematicsConfig::default(),
        }
    }

    /// Session parameters in generation order.
    pub fn sessions(&self) -> Vec<SessionSpec<'_>> {
        let classes = session_classes(self.include_surprise);
        let c = classes.len();
        let mut out = Vec::new();
        for (a, actor) in self.actors.iter().enumerate() {
            for j in 0..self.sessions_per_actor {
                let g = a * self.sessions_per_actor + j;
                let block = g / c;
                let scene = &self.scenes[block % self.scenes.len()];
                out.push(SessionSpec {
                    id: format!("seq_{g:03}"),
                    class: classes[g % c],
                    instances: 3 + (block / 2 + block) % 2,
                    actor,
                    scene,
                    frame_rate: self.frame_rate,
                    seed: derive_seed(self.seed, g as u64),
                });
            }
        }
        out
    }
}

/// Sessions balanced over classes and scenes; total duration is
/// `actors * sessions_per_actor * 15 s`.
pub fn synthesize_dataset(spec: &DatasetSpec) -> Result<Vec<LabeledSequence>, KinematicsError> {
    if spec.actors.is_empty() {
        return Err(KinematicsError::InvalidProfile("at least one actor is required".into()));
    }
    if spec.scenes.is_empty() {
        return Err(KinematicsError::InvalidProfile("at least one scene is required".into()));
    }
    check_rate(spec.frame_rate)?;
    spec.sessions().iter().map(|s| synthesize_session(s, &spec.kinematics)).collect()
}

/// Keeps every `(rate / target)`-th frame pair, composing the skipped steps.
pub fn downsample_rate(seq: &LabeledSequence, target_fps: u32) -> Result<LabeledSequence, KinematicsError> {
    check_rate(target_fps)?;
    if target_fps == 0 || seq.frame_rate % target_fps != 0 {
        return Err(KinematicsError::IncompatibleRate { from: seq.frame_rate, to: target_fps });
    }
    let factor = (seq.frame_rate / target_fps) as usize;
    let mut frames = Vec::with_capacity(seq.frames.len() / factor);
    for (j, chunk) in seq.frames.chunks_exact(factor).enumerate() {
        let mut world = Homography::from_param8(&chunk[0].world)?;
        let mut eye = Homography::from_param8(&chunk[0].eye)?;
        for rec in &chunk[1..] {
            world = Homography::from_param8(&rec.world)?.after(&world)?;
            eye = Homography::from_param8(&rec.eye)?.after(&eye)?;
        }
        frames.push(FrameRecord {
            frame_index: j,
            world: world.to_param8(),
            eye: eye.to_param8(),
            label: chunk[0].label,
        });
    }
    Ok(LabeledSequence { frame_rate: target_fps, frames, ..seq.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet_actor() -> ActorProfile {
        ActorProfile { actor_id: 0, amplitude_scale: 1.0, frequency_scale: 1.0, noise_sigma: 0.0, timing_jitter: 0.0 }
    }

    fn default_actor() -> ActorProfile {
        ActorProfile::default_set().remove(0)
    }

    #[test]
    fn class_ids_are_dense_and_stable() {
        for (i, c) in GestureClass::ALL.iter().enumerate() {
            assert_eq!(c.id(), i);
            assert_eq!(GestureClass::from_id(i), Some(*c));
            assert_eq!(GestureClass::from_name(c.name()), Some(*c));
        }
        assert_eq!(GestureClass::from_id(6), None);
        assert_eq!(session_classes(false).len(), 4);
        assert_eq!(session_classes(true).len(), 5);
    }

    #[test]
    fn quiet_neutral_script_has_no_head_motion() {
        let cfg = KinematicsConfig::default();
        let track = gesture_script(GestureClass::Neutral, &quiet_actor(), 5.0, 20, 3, &cfg).unwrap();
        assert!(track.head.iter().all(|m| *m == RigidMotion::default()));
        assert!(track.labels.iter().all(|&l| l == GestureClass::Neutral));
        let k = CameraIntrinsics::world_default();
        for w in track.head.windows(2) {
            let h = world_pair(&k, &w[0], &w[1], 1.5).unwrap();
            assert_eq!(h, Homography::identity());
        }
    }

    fn channel_energy(track: &MotionTrack) -> [f64; 3] {
        let (a, b) = script_gesture_window(track);
        let mut e = [0.0; 3];
        for m in &track.head[a..b] {
            e[0] += m.rx.abs();
            e[1] += m.ry.abs();
            e[2] += m.rz.abs();
        }
        e
    }

    #[test]
    fn dominant_axis_per_class() {
        let cfg = KinematicsConfig::default();
        let dominant = [
            (GestureClass::ComeHere, 0),
            (GestureClass::NoddingHead, 0),
            (GestureClass::ShakingHead, 1),
            (GestureClass::Maybe, 2),
            (GestureClass::Surprise, 0),
        ];
        for actor in ActorProfile::default_set() {
            for seed in 0..10 {
                for &(class, axis) in &dominant {
                    let track = gesture_script(class, &actor, 4.0, 30, seed, &cfg).unwrap();
                    let e = channel_energy(&track);
                    for other in 0..3 {
                        if other != axis {
                            assert!(e[axis] > 5.0 * e[other], "{class} actor {} seed {seed}: {e:?}", actor.actor_id);
                        }
                    }
                }
            }
        }
    }

    /// Intervals between successive upward zero crossings of rx in the
    /// gesture window, where "zero" means below 5% of the peak.
    fn quiet_stretches(track: &MotionTrack) -> Vec<f64> {
        let (a, b) = script_gesture_window(track);
        let rx: Vec<f64> = track.head[a..b].iter().map(|m| m.rx).collect();
        let peak = rx.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let fps = track.frame_rate as f64;
        let mut runs = Vec::new();
        let mut run = 0usize;
        for v in rx {
            if v.abs() < 0.05 * peak {
                run += 1;
            } else {
                if run > 0 {
                    runs.push(run as f64 / fps);
                }
                run = 0;
            }
        }
        runs
    }

    #[test]
    fn come_here_pauses_nodding_does_not() {
        let cfg = KinematicsConfig::default();
        let actor = ActorProfile { noise_sigma: 0.0, ..default_actor() };
        for seed in 0..10 {
            let come = gesture_script(GestureClass::ComeHere, &actor, 5.0, 60, seed, &cfg).unwrap();
            let gaps = quiet_stretches(&come);
            assert!(gaps.iter().any(|&g| g >= 0.7), "seed {seed}: {gaps:?}");
            let nod = gesture_script(GestureClass::NoddingHead, &actor, 5.0, 60, seed, &cfg).unwrap();
            assert!(quiet_stretches(&nod).iter().all(|&g| g < 0.1));
        }
    }

    #[test]
    fn eye_scale_marks_surprise_only() {
        let cfg = KinematicsConfig { blink_rate: 0.0, ..Default::default() };
        for seed in 0..5 {
            for class in [GestureClass::Surprise, GestureClass::ShakingHead, GestureClass::Maybe, GestureClass::NoddingHead] {
                let track = gesture_script(class, &default_actor(), 3.0, 60, seed, &cfg).unwrap();
                let (a, b) = script_gesture_window(&track);
                let peak = track.eye[a..b].iter().map(|e| (e.scale - 1.0).abs()).fold(0.0, f64::max);
                if class == GestureClass::Surprise {
                    assert!(peak > 0.1, "{peak}");
                } else {
                    assert!(peak < 0.02, "{class}: {peak}");
                }
            }
        }
    }

    fn session(class: GestureClass, scene: SceneProfile, fps: u32, seed: u64, cfg: &KinematicsConfig) -> LabeledSequence {
        let actor = default_actor();
        let spec = SessionSpec { id: "s".into(), class, instances: 3, actor: &actor, scene: &scene, frame_rate: fps, seed };
        synthesize_session(&spec, cfg).unwrap()
    }

    #[test]
    fn session_shape_and_determinism() {
        let cfg = KinematicsConfig::default();
        let a = session(GestureClass::ShakingHead, SceneProfile::indoor(), 20, 11, &cfg);
        let b = session(GestureClass::ShakingHead, SceneProfile::indoor(), 20, 11, &cfg);
        assert_eq!(a, b);
        assert_eq!(a.len(), 300);
        assert_eq!(a.instances().len(), 3);
        assert!(a.frames.iter().all(|f| f.world.iter().chain(&f.eye).all(|v| v.is_finite())));
        let c = session(GestureClass::ShakingHead, SceneProfile::indoor(), 20, 12, &cfg);
        assert_ne!(a, c);
    }

    #[test]
    fn neutral_session_rejected() {
        let actor = default_actor();
        let scene = SceneProfile::indoor();
        let spec = SessionSpec { id: "s".into(), class: GestureClass::Neutral, instances: 3, actor: &actor, scene: &scene, frame_rate: 20, seed: 0 };
        assert!(matches!(synthesize_session(&spec, &KinematicsConfig::default()), Err(KinematicsError::NeutralSession)));
    }

    #[test]
    fn noiseless_dlt_matches_analytic() {
        // With zero correspondence noise the analytic homography is used; DLT
        // on the same exact grid must agree with it.
        let cfg = KinematicsConfig { noise_scale: 0.0, ..Default::default() };
        let seq = session(GestureClass::Surprise, SceneProfile::indoor(), 20, 5, &cfg);
        let k = CameraIntrinsics::world_default();
        let grid = grid_points(&k);
        for f in &seq.frames {
            let h = Homography::from_param8(&f.world).unwrap();
            let cs: Vec<_> = grid.iter().map(|&p| Correspondence::new(p, h.apply(p).unwrap())).collect();
            let est = estimate_homography_dlt(&cs).unwrap();
            assert!(est.frobenius_distance(&h) <= 1e-8);
        }
    }

    #[test]
    fn downsample_identity_and_composition() {
        let cfg = KinematicsConfig::default();
        let seq = session(GestureClass::Maybe, SceneProfile::outdoor(), 60, 2, &cfg);
        assert_eq!(downsample_rate(&seq, 60).unwrap(), seq);
        let d20 = downsample_rate(&seq, 20).unwrap();
        assert_eq!(d20.len(), 300);
        for (j, rec) in d20.frames.iter().enumerate() {
            let h: Vec<Homography> = (0..3).map(|i| Homography::from_param8(&seq.frames[3 * j + i].world).unwrap()).collect();
            let chain = h[2].after(&h[1].after(&h[0]).unwrap()).unwrap();
            assert!(chain.frobenius_distance(&Homography::from_param8(&rec.world).unwrap()) <= 1e-10);
            assert_eq!(rec.label, seq.frames[3 * j].label);
        }
        let via30 = downsample_rate(&downsample_rate(&seq, 30).unwrap(), 10).unwrap();
        let direct = downsample_rate(&seq, 10).unwrap();
        assert_eq!(via30.labels(), direct.labels());
        for (a, b) in via30.frames.iter().zip(&direct.frames) {
            let ha = Homography::from_param8(&a.world).unwrap();
            let hb = Homography::from_param8(&b.world).unwrap();
            assert!(ha.frobenius_distance(&hb) <= 1e-10);
        }
        assert!(matches!(downsample_rate(&d20, 30), Err(KinematicsError::IncompatibleRate { .. })));
    }

    #[test]
    fn downsampled_labels_match_direct_generation() {
        let cfg = KinematicsConfig { noise_scale: 0.0, ..Default::default() };
        for class in [GestureClass::ComeHere, GestureClass::NoddingHead, GestureClass::Surprise] {
            let hi = session(class, SceneProfile::indoor(), 60, 9, &cfg);
            let lo = session(class, SceneProfile::indoor(), 20, 9, &cfg);
            let down = downsample_rate(&hi, 20).unwrap();
            assert_eq!(down.labels(), lo.labels());
            for (a, b) in down.frames.iter().zip(&lo.frames) {
                let ha = Homography::from_param8(&a.world).unwrap();
                let hb = Homography::from_param8(&b.world).unwrap();
                assert!(ha.frobenius_distance(&hb) <= 1e-9);
            }
        }
    }

    #[test]
    fn dataset_layout_is_balanced() {
        let spec = DatasetSpec::default_with(1, 20, true);
        let sessions = spec.sessions();
        assert_eq!(sessions.len(), 40);
        for &class in session_classes(true) {
            let of_class: Vec<_> = sessions.iter().filter(|s| s.class == class).collect();
            assert_eq!(of_class.len(), 8);
            let indoor = of_class.iter().filter(|s| s.scene.kind == SceneKind::Indoor).count();
            assert_eq!(indoor, 4);
            let inst: usize = of_class.iter().map(|s| s.instances).sum();
            assert_eq!(inst, 28);
        }
        for a in 0..4u32 {
            let mine: Vec<_> = sessions.iter().filter(|s| s.actor.actor_id == a).collect();
            assert_eq!(mine.len(), 10);
            assert_eq!(mine.iter().filter(|s| s.scene.kind == SceneKind::Indoor).count(), 5);
        }
    }
}
