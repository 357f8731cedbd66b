//! Frame-pair homographies to per-frame motion features.

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{euler_angles, CameraIntrinsics, GeometryError, Homography};
use crate::kinematics::FrameRecord;

pub const STD_FLOOR: f64 = 1e-8;

/// Projected-rotation residual above which decomposition is flagged.
pub const DEFAULT_ROTATION_TOLERANCE: f64 = 0.25;

const IDENTITY8: [f64; 8] = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("feature layouts differ: {0:?} vs {1:?}")]
    LayoutMismatch(FeatureLayout, FeatureLayout),
    #[error("K^-1 H K is not close to a rotation (residual {0:.3e})")]
    DecompositionFailure(f64),
    #[error("need at least 2 samples to fit statistics, got {0}")]
    TooFewSamples(usize),
    #[error("feature dimension {got} does not match statistics dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Raw8,
    Descriptor16,
}

impl FeatureKind {
    pub fn width(self) -> usize {
        match self {
            FeatureKind::Raw8 => 8,
            FeatureKind::Descriptor16 => 16,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FeatureKind::Raw8 => "raw8",
            FeatureKind::Descriptor16 => "descriptor16",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "raw8" => Some(FeatureKind::Raw8),
            "descriptor16" => Some(FeatureKind::Descriptor16),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum FeatureLayout {
    Single(FeatureKind),
    /// Eye block first, then the world block.
    Fused { kind: FeatureKind, alpha_w: f64, alpha_e: f64 },
}

impl FeatureLayout {
    pub fn width(&self) -> usize {
        match self {
            FeatureLayout::Single(k) => k.width(),
            FeatureLayout::Fused { kind, .. } => 2 * kind.width(),
        }
    }

    pub fn kind(&self) -> FeatureKind {
        match self {
            FeatureLayout::Single(k) => *k,
            FeatureLayout::Fused { kind, .. } => *kind,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionFeature {
    pub values: Vec<f64>,
    pub layout: FeatureLayout,
}

impl MotionFeature {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// `to_param8(h)` minus the identity baseline when `centered`.
pub fn raw_features(h: &Homography, centered: bool) -> MotionFeature {
    let mut values = h.to_param8().to_vec();
    if centered {
        for (v, id) in values.iter_mut().zip(IDENTITY8) {
            *v -= id;
        }
    }
    MotionFeature { values, layout: FeatureLayout::Single(FeatureKind::Raw8) }
}

/// Rebuilds the homography from a centered raw feature.
pub fn homography_from_raw(f: &MotionFeature) -> Result<Homography, GeometryError> {
    let mut p = [0.0; 8];
    for i in 0..8 {
        p[i] = f.values[i] + IDENTITY8[i];
    }
    Homography::from_param8(&p)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DescriptorOptions {
    pub rotation_tolerance: f64,
    /// Keep the projected rotation when the residual exceeds the tolerance.
    pub fallback: bool,
}

impl Default for DescriptorOptions {
    fn default() -> Self {
        DescriptorOptions { rotation_tolerance: DEFAULT_ROTATION_TOLERANCE, fallback: true }
    }
}

/// Eight-value geometric decomposition: rotation angles of the nearest
/// rotation to `K^-1 H K`, translation over image size, log scale, and the
/// two perspective terms scaled to pixels of image extent.
pub fn decompose(h: &Homography, k: &CameraIntrinsics, opts: &DescriptorOptions) -> Result<[f64; 8], FeatureError> {
    let m = h.matrix();
    let calibrated: Matrix3<f64> = k.inverse_matrix() * m * k.matrix();
    let det = calibrated.determinant();
    let normalized = calibrated / det.cbrt();
    let svd = normalized.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut rot = u * v_t;
    if rot.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        rot = u * v_t;
    }
    let residual = (normalized - rot).norm();
    if residual > opts.rotation_tolerance && !opts.fallback {
        return Err(FeatureError::DecompositionFailure(residual));
    }
    let (rx, ry, rz) = euler_angles(&rot);
    let linear_det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
    let log_scale = 0.5 * linear_det.abs().max(1e-300).ln();
    Ok([
        rx,
        ry,
        rz,
        m[(0, 2)] / k.width,
        m[(1, 2)] / k.height,
        log_scale,
        m[(2, 0)] * k.width,
        m[(2, 1)] * k.height,
    ])
}

/// Decomposition of `h` followed by its difference from the previous frame
/// pair's decomposition (zeros without a predecessor).
pub fn descriptor_features(
    h: &Homography,
    prev: Option<&Homography>,
    k: &CameraIntrinsics,
    opts: &DescriptorOptions,
) -> Result<MotionFeature, FeatureError> {
    let cur = decompose(h, k, opts)?;
    let diff = match prev {
        Some(p) => {
            let before = decompose(p, k, opts)?;
            let mut d = [0.0; 8];
            for i in 0..8 {
                d[i] = cur[i] - before[i];
            }
            d
        }
        None => [0.0; 8],
    };
    let mut values = cur.to_vec();
    values.extend_from_slice(&diff);
    Ok(MotionFeature { values, layout: FeatureLayout::Single(FeatureKind::Descriptor16) })
}

/// `[alpha_e * eye, alpha_w * world]`.
pub fn fuse(world: &MotionFeature, eye: &MotionFeature, alpha_w: f64, alpha_e: f64) -> Result<MotionFeature, FeatureError> {
    let kind = match (world.layout, eye.layout) {
        (FeatureLayout::Single(a), FeatureLayout::Single(b)) if a == b => a,
        (a, b) => return Err(FeatureError::LayoutMismatch(a, b)),
    };
    let mut values: Vec<f64> = eye.values.iter().map(|v| alpha_e * v).collect();
    values.extend(world.values.iter().map(|v| alpha_w * v));
    Ok(MotionFeature { values, layout: FeatureLayout::Fused { kind, alpha_w, alpha_e } })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channels {
    World,
    Eye,
    Both,
}

impl Channels {
    pub fn name(self) -> &'static str {
        match self {
            Channels::World => "world",
            Channels::Eye => "eye",
            Channels::Both => "both",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "world" => Some(Channels::World),
            "eye" => Some(Channels::Eye),
            "both" => Some(Channels::Both),
            _ => None,
        }
    }
}

/// How a sequence of frame records becomes model input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub kind: FeatureKind,
    pub channels: Channels,
    pub alpha_w: f64,
    pub alpha_e: f64,
    /// Subtract the identity baseline from raw features.
    pub centered: bool,
    pub descriptor: DescriptorOptions,
}

impl Default for FeatureSpec {
    fn default() -> Self {
        FeatureSpec {
            kind: FeatureKind::Descriptor16,
            channels: Channels::Both,
            alpha_w: 1.0,
            alpha_e: 1.0,
            centered: true,
            descriptor: DescriptorOptions::default(),
        }
    }
}

impl FeatureSpec {
    pub fn dim(&self) -> usize {
        self.layout().width()
    }

    pub fn layout(&self) -> FeatureLayout {
        match self.channels {
            Channels::Both => FeatureLayout::Fused { kind: self.kind, alpha_w: self.alpha_w, alpha_e: self.alpha_e },
            _ => FeatureLayout::Single(self.kind),
        }
    }
}

/// Stateful per-stream extractor; descriptor features need the previous
/// frame pair.
#[derive(Debug, Clone)]
pub struct FeaturePipeline {
    spec: FeatureSpec,
    world_k: CameraIntrinsics,
    eye_k: CameraIntrinsics,
    prev: Option<(Homography, Homography)>,
}

impl FeaturePipeline {
    pub fn new(spec: FeatureSpec) -> Self {
        FeaturePipeline {
            spec,
            world_k: CameraIntrinsics::world_default(),
            eye_k: CameraIntrinsics::eye_default(),
            prev: None,
        }
    }

    pub fn spec(&self) -> &FeatureSpec {
        &self.spec
    }

    pub fn reset(&mut self) {
        self.prev = None;
    }

    fn channel(&self, h: &Homography, prev: Option<&Homography>, k: &CameraIntrinsics) -> Result<MotionFeature, FeatureError> {
        match self.spec.kind {
            FeatureKind::Raw8 => Ok(raw_features(h, self.spec.centered)),
            FeatureKind::Descriptor16 => descriptor_features(h, prev, k, &self.spec.descriptor),
        }
    }

    pub fn push(&mut self, rec: &FrameRecord) -> Result<MotionFeature, FeatureError> {
        let world = Homography::from_param8(&rec.world)?;
        let eye = Homography::from_param8(&rec.eye)?;
        let prev = self.prev;
        let out = match self.spec.channels {
            Channels::World => self.channel(&world, prev.as_ref().map(|p| &p.0), &self.world_k)?,
            Channels::Eye => self.channel(&eye, prev.as_ref().map(|p| &p.1), &self.eye_k)?,
            Channels::Both => {
                let w = self.channel(&world, prev.as_ref().map(|p| &p.0), &self.world_k)?;
                let e = self.channel(&eye, prev.as_ref().map(|p| &p.1), &self.eye_k)?;
                fuse(&w, &e, self.spec.alpha_w, self.spec.alpha_e)?
            }
        };
        self.prev = Some((world, eye));
        Ok(out)
    }
}

/// Row-per-frame feature matrix for a whole sequence.
pub fn extract_sequence(frames: &[FrameRecord], spec: &FeatureSpec) -> Result<Vec<Vec<f64>>, FeatureError> {
    let mut pipe = FeaturePipeline::new(*spec);
    frames.iter().map(|r| pipe.push(r).map(|f| f.values)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureStats {
    /// Per-dimension mean and population std, std floored at [`STD_FLOOR`].
    pub fn fit<'a, I>(rows: I) -> Result<Self, FeatureError>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let rows: Vec<&[f64]> = rows.into_iter().collect();
        if rows.len() < 2 {
            return Err(FeatureError::TooFewSamples(rows.len()));
        }
        let d = rows[0].len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for r in &rows {
            if r.len() != d {
                return Err(FeatureError::DimensionMismatch { expected: d, got: r.len() });
            }
            for (m, v) in mean.iter_mut().zip(r.iter()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for r in &rows {
            for j in 0..d {
                var[j] += (r[j] - mean[j]).powi(2);
            }
        }
        let std = var.into_iter().map(|v| (v / n).sqrt().max(STD_FLOOR)).collect();
        Ok(FeatureStats { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn normalize_in_place(&self, row: &mut [f64]) {
        for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
            *v = (*v - m) / s;
        }
    }

    pub fn normalize(&self, f: &MotionFeature) -> Result<MotionFeature, FeatureError> {
        if f.len() != self.dim() {
            return Err(FeatureError::DimensionMismatch { expected: self.dim(), got: f.len() });
        }
        let mut values = f.values.clone();
        self.normalize_in_place(&mut values);
        Ok(MotionFeature { values, layout: f.layout })
    }
}
