//! Domain types shared by every stage of the pipeline: categorical schemas for
//! the upstream gaze / hand / held-object classifiers, validated probability
//! vectors, per-frame feature records and takeover episodes.
//!
//! # Feature layout
//!
//! A [`FrameFeatures`] flattens to a fixed 21-dimensional vector:
//!
//! | columns | group        | classes                                             |
//! |---------|--------------|-----------------------------------------------------|
//! | 0..5    | `gaze`       | Forward, Rearview, Lap, Speedometer, Infotainment   |
//! | 5..8    | `left_zone`  | Wheel, Lap, Air                                     |
//! | 8..13   | `right_zone` | Wheel, Lap, Air, Infotainment, Cupholder            |
//! | 13..17  | `left_obj`   | None, Phone, Tablet, Beverage                       |
//! | 17..21  | `right_obj`  | None, Phone, Tablet, Beverage                       |
//!
//! [`FrameFeatures::unflatten`] is the inverse on valid inputs.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ground_truth::RaterSheet;

/// Allowed deviation of a probability vector's sum from 1.
pub const PROB_SUM_TOLERANCE: f64 = 1e-6;

/// Nominal clip length around each takeover event, seconds.
pub const CLIP_DURATION_S: f64 = 30.0;
pub const CLIP_DURATION_TOLERANCE_S: f64 = 0.5;

pub const DEFAULT_FRAME_RATE_HZ: f64 = 30.0;

pub const MPH_TO_MPS: f64 = 0.44704;

/// Flattened feature dimension.
pub const FEATURE_DIM: usize = 21;

/// Gaze zone, index order fixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GazeZone {
    Forward = 0,
    /// Mirrors and shoulder checks.
    Rearview = 1,
    Lap = 2,
    Speedometer = 3,
    Infotainment = 4,
}

impl GazeZone {
    pub const ALL: [GazeZone; 5] = [
        GazeZone::Forward,
        GazeZone::Rearview,
        GazeZone::Lap,
        GazeZone::Speedometer,
        GazeZone::Infotainment,
    ];
}

/// Hand location. The right hand uses all five; the left hand only reaches
/// the first three ([`HandZone::LEFT`]).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HandZone {
    Wheel = 0,
    Lap = 1,
    Air = 2,
    Infotainment = 3,
    Cupholder = 4,
}

impl HandZone {
    pub const ALL: [HandZone; 5] = [
        HandZone::Wheel,
        HandZone::Lap,
        HandZone::Air,
        HandZone::Infotainment,
        HandZone::Cupholder,
    ];
    pub const LEFT: [HandZone; 3] = [HandZone::Wheel, HandZone::Lap, HandZone::Air];

    pub fn left_legal(self) -> bool {
        (self as usize) < Self::LEFT.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HeldObject {
    None = 0,
    Phone = 1,
    Tablet = 2,
    Beverage = 3,
}

impl HeldObject {
    pub const ALL: [HeldObject; 4] = [
        HeldObject::None,
        HeldObject::Phone,
        HeldObject::Tablet,
        HeldObject::Beverage,
    ];
}

/// Non-driving related task label. The label set is configuration data
/// (see [`NdrtSet`]), so this is a string newtype rather than an enum.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Ndrt(pub String);

impl Ndrt {
    pub fn new(label: impl Into<String>) -> Self {
        Ndrt(label.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Ndrt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Ordered, nonempty set of unique NDRT labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NdrtSet(Vec<Ndrt>);

impl NdrtSet {
    pub const DEFAULT_LABELS: [&'static str; 8] = [
        "Attentive",
        "TalkingToCopassenger",
        "EyesClosed",
        "PhoneCall",
        "Reading",
        "CountingCoins",
        "Texting",
        "UsingInfotainment",
    ];

    pub fn new(labels: Vec<Ndrt>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Config("NDRT set is empty".into()));
        }
        for (i, l) in labels.iter().enumerate() {
            if l.0.is_empty() {
                return Err(Error::Config("empty NDRT label".into()));
            }
            if labels[..i].contains(l) {
                return Err(Error::Config(format!("duplicate NDRT label {l}")));
            }
        }
        Ok(NdrtSet(labels))
    }

    pub fn labels(&self) -> &[Ndrt] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn index_of(&self, ndrt: &Ndrt) -> Option<usize> {
        self.0.iter().position(|n| n == ndrt)
    }

    pub fn contains(&self, ndrt: &Ndrt) -> bool {
        self.index_of(ndrt).is_some()
    }
}

impl Default for NdrtSet {
    fn default() -> Self {
        NdrtSet(Self::DEFAULT_LABELS.iter().map(|&l| Ndrt::new(l)).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbPolicy {
    /// Accept only vectors that already sum to 1 within tolerance.
    Strict,
    /// Divide by the sum when it is positive.
    Renormalize,
}

/// Nonnegative vector summing to 1 within [`PROB_SUM_TOLERANCE`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    /// Checks (or repairs, under [`ProbPolicy::Renormalize`]) a raw score
    /// vector. Negative entries and zero sums are rejected under both policies.
    pub fn validate_or_renormalize(raw: &[f64], policy: ProbPolicy) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::Empty("probability vector"));
        }
        for (index, &value) in raw.iter().enumerate() {
            if !value.is_finite() {
                return Err(Error::NonFinite("probability vector"));
            }
            if value < 0.0 {
                return Err(Error::NegativeEntry { index, value });
            }
        }
        let sum: f64 = raw.iter().sum();
        if sum == 0.0 {
            return Err(Error::ZeroSum);
        }
        match policy {
            ProbPolicy::Strict => {
                if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
                    return Err(Error::SumMismatch {
                        sum,
                        tolerance: PROB_SUM_TOLERANCE,
                    });
                }
                Ok(ProbVector(raw.to_vec()))
            }
            ProbPolicy::Renormalize => Ok(ProbVector(raw.iter().map(|v| v / sum).collect())),
        }
    }

    pub fn uniform(k: usize) -> Self {
        assert!(k > 0);
        ProbVector(vec![1.0 / k as f64; k])
    }

    pub fn one_hot(k: usize, index: usize) -> Self {
        assert!(index < k);
        let mut v = vec![0.0; k];
        v[index] = 1.0;
        ProbVector(v)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the largest entry; ties go to the lowest index.
    pub fn argmax_class(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.0.iter().enumerate().skip(1) {
            if v > self.0[best] {
                best = i;
            }
        }
        best
    }
}

impl TryFrom<Vec<f64>> for ProbVector {
    type Error = Error;

    fn try_from(raw: Vec<f64>) -> Result<Self> {
        ProbVector::validate_or_renormalize(&raw, ProbPolicy::Strict)
    }
}

impl From<ProbVector> for Vec<f64> {
    fn from(p: ProbVector) -> Self {
        p.0
    }
}

/// One of the five per-frame probability groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FeatureGroup {
    Gaze,
    LeftZone,
    RightZone,
    LeftObj,
    RightObj,
}

impl FeatureGroup {
    pub const ALL: [FeatureGroup; 5] = [
        FeatureGroup::Gaze,
        FeatureGroup::LeftZone,
        FeatureGroup::RightZone,
        FeatureGroup::LeftObj,
        FeatureGroup::RightObj,
    ];

    pub fn dim(self) -> usize {
        match self {
            FeatureGroup::Gaze => 5,
            FeatureGroup::LeftZone => 3,
            FeatureGroup::RightZone => 5,
            FeatureGroup::LeftObj | FeatureGroup::RightObj => 4,
        }
    }

    /// First column of this group in the flattened vector.
    pub fn offset(self) -> usize {
        match self {
            FeatureGroup::Gaze => 0,
            FeatureGroup::LeftZone => 5,
            FeatureGroup::RightZone => 8,
            FeatureGroup::LeftObj => 13,
            FeatureGroup::RightObj => 17,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FeatureGroup::Gaze => "gaze",
            FeatureGroup::LeftZone => "left_zone",
            FeatureGroup::RightZone => "right_zone",
            FeatureGroup::LeftObj => "left_obj",
            FeatureGroup::RightObj => "right_obj",
        }
    }

    fn bit(self) -> u8 {
        1 << (self as u8)
    }
}

/// Subset of feature groups fed to the recurrent model. Masked-out groups are
/// removed from the input, not zero-filled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FeatureMask(u8);

impl FeatureMask {
    pub const ALL: FeatureMask = FeatureMask(0b1_1111);
    pub const GAZE: FeatureMask = FeatureMask(0b0_0001);
    pub const HANDS: FeatureMask = FeatureMask(0b1_1110);

    pub fn from_groups(groups: &[FeatureGroup]) -> Result<Self> {
        let bits = groups.iter().fold(0u8, |acc, g| acc | g.bit());
        if bits == 0 {
            return Err(Error::Config("feature mask selects no group".into()));
        }
        Ok(FeatureMask(bits))
    }

    pub fn contains(self, group: FeatureGroup) -> bool {
        self.0 & group.bit() != 0
    }

    pub fn groups(self) -> Vec<FeatureGroup> {
        FeatureGroup::ALL
            .into_iter()
            .filter(|g| self.contains(*g))
            .collect()
    }

    /// Columns of the 21-dim flattened vector that survive the mask, ascending.
    pub fn columns(self) -> Vec<usize> {
        self.groups()
            .into_iter()
            .flat_map(|g| g.offset()..g.offset() + g.dim())
            .collect()
    }

    pub fn dim(self) -> usize {
        self.groups().iter().map(|g| g.dim()).sum()
    }

    /// Writes the masked columns of `flat` into `out`.
    pub fn project_into(self, flat: &[f64; FEATURE_DIM], out: &mut Vec<f64>) {
        for g in FeatureGroup::ALL {
            if self.contains(g) {
                out.extend_from_slice(&flat[g.offset()..g.offset() + g.dim()]);
            }
        }
    }
}

impl Default for FeatureMask {
    fn default() -> Self {
        FeatureMask::ALL
    }
}

impl fmt::Display for FeatureMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            FeatureMask::ALL => f.write_str("gaze+hands"),
            FeatureMask::GAZE => f.write_str("gaze"),
            FeatureMask::HANDS => f.write_str("hands"),
            m => {
                let names: Vec<_> = m.groups().iter().map(|g| g.name()).collect();
                f.write_str(&names.join("+"))
            }
        }
    }
}

impl FromStr for FeatureMask {
    type Err = Error;

    /// Accepts `+`-joined tokens: `all`, `gaze`, `hands`, `zones`, `objects`,
    /// or any single group name.
    fn from_str(s: &str) -> Result<Self> {
        let mut groups = Vec::new();
        for token in s.split('+').map(str::trim) {
            match token {
                "all" => groups.extend(FeatureGroup::ALL),
                "gaze" => groups.push(FeatureGroup::Gaze),
                "hands" => groups.extend(&FeatureGroup::ALL[1..]),
                "zones" => groups.extend([FeatureGroup::LeftZone, FeatureGroup::RightZone]),
                "objects" => groups.extend([FeatureGroup::LeftObj, FeatureGroup::RightObj]),
                other => match FeatureGroup::ALL.iter().find(|g| g.name() == other) {
                    Some(g) => groups.push(*g),
                    None => {
                        return Err(Error::Config(format!("unknown feature group {other:?}")))
                    }
                },
            }
        }
        FeatureMask::from_groups(&groups)
    }
}

impl Serialize for FeatureMask {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for FeatureMask {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawFrameFeatures")]
pub struct FrameFeatures {
    pub gaze: ProbVector,
    /// Over [`HandZone::LEFT`].
    pub left_zone: ProbVector,
    pub right_zone: ProbVector,
    pub left_obj: ProbVector,
    pub right_obj: ProbVector,
}

#[derive(Deserialize)]
struct RawFrameFeatures {
    gaze: ProbVector,
    left_zone: ProbVector,
    right_zone: ProbVector,
    left_obj: ProbVector,
    right_obj: ProbVector,
}

impl TryFrom<RawFrameFeatures> for FrameFeatures {
    type Error = Error;

    fn try_from(r: RawFrameFeatures) -> Result<Self> {
        FrameFeatures::new(r.gaze, r.left_zone, r.right_zone, r.left_obj, r.right_obj)
    }
}

impl FrameFeatures {
    pub fn new(
        gaze: ProbVector,
        left_zone: ProbVector,
        right_zone: ProbVector,
        left_obj: ProbVector,
        right_obj: ProbVector,
    ) -> Result<Self> {
        let f = FrameFeatures {
            gaze,
            left_zone,
            right_zone,
            left_obj,
            right_obj,
        };
        for g in FeatureGroup::ALL {
            let actual = f.group(g).len();
            if actual != g.dim() {
                return Err(Error::DimensionMismatch {
                    expected: g.dim(),
                    actual,
                });
            }
        }
        Ok(f)
    }

    pub fn uniform() -> Self {
        FrameFeatures {
            gaze: ProbVector::uniform(5),
            left_zone: ProbVector::uniform(3),
            right_zone: ProbVector::uniform(5),
            left_obj: ProbVector::uniform(4),
            right_obj: ProbVector::uniform(4),
        }
    }

    pub fn group(&self, g: FeatureGroup) -> &ProbVector {
        match g {
            FeatureGroup::Gaze => &self.gaze,
            FeatureGroup::LeftZone => &self.left_zone,
            FeatureGroup::RightZone => &self.right_zone,
            FeatureGroup::LeftObj => &self.left_obj,
            FeatureGroup::RightObj => &self.right_obj,
        }
    }

    /// Left-hand zone expressed over all five [`HandZone`]s; the two
    /// unreachable zones always carry zero mass.
    pub fn left_zone_full(&self) -> [f64; 5] {
        let v = self.left_zone.values();
        [v[0], v[1], v[2], 0.0, 0.0]
    }

    pub fn flatten(&self) -> [f64; FEATURE_DIM] {
        let mut out = [0.0; FEATURE_DIM];
        for g in FeatureGroup::ALL {
            out[g.offset()..g.offset() + g.dim()].copy_from_slice(self.group(g).values());
        }
        out
    }

    pub fn unflatten(flat: &[f64]) -> Result<Self> {
        if flat.len() != FEATURE_DIM {
            return Err(Error::DimensionMismatch {
                expected: FEATURE_DIM,
                actual: flat.len(),
            });
        }
        let part = |g: FeatureGroup| {
            ProbVector::validate_or_renormalize(
                &flat[g.offset()..g.offset() + g.dim()],
                ProbPolicy::Strict,
            )
        };
        FrameFeatures::new(
            part(FeatureGroup::Gaze)?,
            part(FeatureGroup::LeftZone)?,
            part(FeatureGroup::RightZone)?,
            part(FeatureGroup::LeftObj)?,
            part(FeatureGroup::RightObj)?,
        )
    }
}

/// Ego-vehicle state sample. `lateral_offset` is signed, zero on the lane
/// centerline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgoSample {
    pub t: f64,
    pub speed: f64,
    pub lateral_offset: f64,
}

/// One takeover clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub id: String,
    pub subject_id: String,
    pub ndrt: Ndrt,
    pub frame_rate_hz: f64,
    pub features: Vec<FrameFeatures>,
    pub ego: Vec<EgoSample>,
    /// Takeover request time, seconds from clip start.
    pub t_tor: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tot: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rater_sheets: Option<Vec<RaterSheet>>,
    /// Generator-side readiness on [1, 5], one value per frame. Only present
    /// for synthetic episodes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latent_readiness: Option<Vec<f64>>,
}

impl Episode {
    pub fn frame_count(&self) -> usize {
        self.features.len()
    }

    pub fn duration(&self) -> f64 {
        self.features.len() as f64 / self.frame_rate_hz
    }

    /// Index of the last frame whose timestamp is at or before `t`.
    pub fn frame_at(&self, t: f64) -> usize {
        let idx = (t * self.frame_rate_hz + 1e-9).floor();
        (idx.max(0.0) as usize).min(self.frame_count().saturating_sub(1))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Error::InvalidEpisode {
            id: self.id.clone(),
            reason,
        };
        if !(self.frame_rate_hz.is_finite() && self.frame_rate_hz > 0.0) {
            return Err(bad(format!("frame_rate_hz {} not positive", self.frame_rate_hz)));
        }
        let duration = self.duration();
        if (duration - CLIP_DURATION_S).abs() > CLIP_DURATION_TOLERANCE_S {
            return Err(bad(format!("clip duration {duration:.3} s, expected 30 s")));
        }
        if !(self.t_tor > 0.0 && self.t_tor < duration) {
            return Err(bad(format!("t_tor {} outside clip", self.t_tor)));
        }
        if let Some(tot) = self.tot {
            if !(tot.is_finite() && tot >= 0.0) {
                return Err(bad(format!("tot {tot} invalid")));
            }
        }
        for pair in self.ego.windows(2) {
            if pair[1].t < pair[0].t {
                return Err(bad("ego timestamps decrease".into()));
            }
        }
        for s in &self.ego {
            if !(s.t.is_finite() && s.speed.is_finite() && s.lateral_offset.is_finite()) {
                return Err(bad("non-finite ego sample".into()));
            }
            if s.speed < 0.0 {
                return Err(bad(format!("negative speed at t={}", s.t)));
            }
        }
        if let Some(latent) = &self.latent_readiness {
            if latent.len() != self.frame_count() {
                return Err(bad("latent readiness length differs from frame count".into()));
            }
        }
        Ok(())
    }
}
