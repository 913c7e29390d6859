use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Resolution-based privacy tier. Ordered from weakest to strongest so that
/// `level >= required` is the gate condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrivacyLevel {
    None,
    Weak,
    Strong,
}

/// Side-length thresholds for [`PrivacyLevel`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PrivacyThresholds {
    pub strong: usize,
    pub weak: usize,
}

impl Default for PrivacyThresholds {
    fn default() -> Self {
        PrivacyThresholds { strong: 15, weak: 56 }
    }
}

impl PrivacyThresholds {
    pub fn classify(&self, width: usize, height: usize) -> PrivacyLevel {
        let side = width.max(height);
        if side <= self.strong {
            PrivacyLevel::Strong
        } else if side <= self.weak {
            PrivacyLevel::Weak
        } else {
            PrivacyLevel::None
        }
    }
}

/// Privacy tier of a `width x height` frame under the default thresholds.
pub fn privacy_level(width: usize, height: usize) -> PrivacyLevel {
    PrivacyThresholds::default().classify(width, height)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Public,
    Private,
    Synthetic,
}

/// Physical range of the sensor, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthRange {
    pub min_m: f64,
    pub max_m: f64,
}

impl DepthRange {
    pub const SENSOR: DepthRange = DepthRange {
        min_m: 0.8,
        max_m: 4.0,
    };

    pub fn new(min_m: f64, max_m: f64) -> Result<Self> {
        if !(min_m < max_m) || !min_m.is_finite() || !max_m.is_finite() {
            return Err(Error::Config(alloc::format!(
                "depth range needs min < max, got {min_m}..{max_m}"
            )));
        }
        Ok(DepthRange { min_m, max_m })
    }

    /// Raw sensor encoding: millimeters, 0 reserved for "no return".
    pub fn encode_mm(meters: f64) -> u16 {
        libm::round(meters * 1000.0).clamp(1.0, u16::MAX as f64) as u16
    }

    pub fn min_raw(&self) -> u16 {
        Self::encode_mm(self.min_m)
    }

    pub fn max_raw(&self) -> u16 {
        Self::encode_mm(self.max_m)
    }
}

impl Default for DepthRange {
    fn default() -> Self {
        Self::SENSOR
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DepthData {
    /// Millimeters, `0` = no return.
    Raw(Vec<u16>),
    /// Unit-range values.
    Normalized(Vec<f32>),
}

/// Single-channel depth image.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthFrame {
    width: usize,
    height: usize,
    data: DepthData,
    depth_range: Option<DepthRange>,
    privacy_level: PrivacyLevel,
    provenance: Provenance,
    derived_from: Option<PrivacyLevel>,
}

impl DepthFrame {
    pub fn raw(
        width: usize,
        height: usize,
        data: Vec<u16>,
        depth_range: DepthRange,
        provenance: Provenance,
    ) -> Result<Self> {
        check_len(width, height, data.len())?;
        Ok(DepthFrame {
            width,
            height,
            data: DepthData::Raw(data),
            depth_range: Some(depth_range),
            privacy_level: privacy_level(width, height),
            provenance,
            derived_from: None,
        })
    }

    /// Normalized frame; values are clamped into `[0, 1]` (non-finite values
    /// become 0).
    pub fn normalized(
        width: usize,
        height: usize,
        mut data: Vec<f32>,
        provenance: Provenance,
    ) -> Result<Self> {
        check_len(width, height, data.len())?;
        for v in &mut data {
            *v = clamp_unit(*v);
        }
        Ok(DepthFrame {
            width,
            height,
            data: DepthData::Normalized(data),
            depth_range: Some(DepthRange::SENSOR),
            privacy_level: privacy_level(width, height),
            provenance,
            derived_from: None,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &DepthData {
        &self.data
    }

    pub fn depth_range(&self) -> Option<DepthRange> {
        self.depth_range
    }

    pub fn privacy_level(&self) -> PrivacyLevel {
        self.privacy_level
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    /// Privacy tier of the low-resolution frame an enhanced frame was
    /// computed from, if any.
    pub fn derived_from_privacy_level(&self) -> Option<PrivacyLevel> {
        self.derived_from
    }

    pub fn with_depth_range(mut self, range: Option<DepthRange>) -> Self {
        self.depth_range = range;
        self
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }

    pub fn with_derived_from(mut self, level: Option<PrivacyLevel>) -> Self {
        self.derived_from = level;
        self
    }

    /// Re-evaluates the privacy tier with non-default thresholds.
    pub fn reclassify(mut self, thresholds: &PrivacyThresholds) -> Self {
        self.privacy_level = thresholds.classify(self.width, self.height);
        self
    }

    pub fn as_normalized(&self) -> Option<&[f32]> {
        match &self.data {
            DepthData::Normalized(v) => Some(v),
            DepthData::Raw(_) => None,
        }
    }

    pub fn as_raw(&self) -> Option<&[u16]> {
        match &self.data {
            DepthData::Raw(v) => Some(v),
            DepthData::Normalized(_) => None,
        }
    }

    pub(crate) fn normalized_or_err(&self, op: &'static str) -> Result<&[f32]> {
        self.as_normalized().ok_or(Error::NotNormalized(op))
    }

    /// Same frame with its normalized buffer replaced, keeping metadata.
    pub(crate) fn derive(&self, width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        let mut out = DepthFrame::normalized(width, height, data, self.provenance)?;
        out.depth_range = self.depth_range;
        out.derived_from = self.derived_from;
        Ok(out)
    }
}

/// Maps the raw millimeter encoding onto `[0, 1]` using the frame's depth
/// range. Raw `0` (no return) maps to `0.0`. Already-normalized frames are
/// returned unchanged.
pub fn normalize_depth(frame: &DepthFrame) -> Result<DepthFrame> {
    let raw = match &frame.data {
        DepthData::Normalized(_) => return Ok(frame.clone()),
        DepthData::Raw(v) => v,
    };
    let range = frame.depth_range.ok_or(Error::MissingDepthRange)?;
    let lo = range.min_m * 1000.0;
    let span = (range.max_m - range.min_m) * 1000.0;
    let data = raw
        .iter()
        .map(|&mm| {
            if mm == 0 {
                0.0
            } else {
                (((mm as f64) - lo) / span).clamp(0.0, 1.0) as f32
            }
        })
        .collect();
    let mut out = DepthFrame::normalized(frame.width, frame.height, data, frame.provenance)?;
    out.depth_range = Some(range);
    out.derived_from = frame.derived_from;
    Ok(out)
}

/// Passes iff the frame's privacy tier meets or exceeds `required`.
pub fn privacy_gate(frame: &DepthFrame, required: PrivacyLevel) -> Result<()> {
    if frame.privacy_level >= required {
        Ok(())
    } else {
        Err(Error::PrivacyViolation {
            width: frame.width,
            height: frame.height,
            level: frame.privacy_level,
            required,
        })
    }
}

fn check_len(width: usize, height: usize, len: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::ZeroDimension);
    }
    if width * height != len {
        return Err(Error::DimensionMismatch(alloc::format!(
            "{width}x{height} frame needs {} samples, got {len}",
            width * height
        )));
    }
    Ok(())
}

#[inline]
pub(crate) fn clamp_unit(v: f32) -> f32 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}
