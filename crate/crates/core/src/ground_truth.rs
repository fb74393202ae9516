//! Ground-truth ORI construction from multi-rater snippet scores.
//!
//! Each rater's scores are z-normalized against that rater's own dataset-wide
//! mean and population standard deviation, averaged across raters per
//! snippet, mapped back onto the 1-5 scale with the pooled raw-score
//! statistics, clamped, and linearly interpolated between snippet centers.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::domain::Episode;
use crate::error::{Error, Result};

/// Length of one rated snippet, seconds.
pub const SNIPPET_S: f64 = 2.0;
pub const ORI_MIN: f64 = 1.0;
pub const ORI_MAX: f64 = 5.0;

/// One rater's 1-5 scores for consecutive 2-second snippets of one clip.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RaterSheet {
    pub rater_id: String,
    pub episode_id: String,
    pub scores: Vec<u8>,
}

impl RaterSheet {
    pub fn validate(&self, clip_duration: f64) -> Result<()> {
        let expected = snippet_count(clip_duration);
        if self.scores.len() != expected {
            return Err(Error::InvalidEpisode {
                id: self.episode_id.clone(),
                reason: format!(
                    "rater {} has {} scores, expected {expected}",
                    self.rater_id,
                    self.scores.len()
                ),
            });
        }
        if let Some(s) = self.scores.iter().find(|s| !(1..=5).contains(*s)) {
            return Err(Error::InvalidEpisode {
                id: self.episode_id.clone(),
                reason: format!("rater {} score {s} outside 1..5", self.rater_id),
            });
        }
        Ok(())
    }
}

pub fn snippet_count(clip_duration: f64) -> usize {
    (clip_duration / SNIPPET_S - 1e-9).ceil().max(0.0) as usize
}

/// Per-frame ORI on the [1, 5] scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OriSeries(Vec<f64>);

impl OriSeries {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values
            .iter()
            .any(|v| !v.is_finite() || *v < ORI_MIN || *v > ORI_MAX)
        {
            return Err(Error::Config("ORI value outside [1, 5]".into()));
        }
        Ok(OriSeries(values))
    }

    /// Clamps every value into [1, 5].
    pub fn clamped(values: Vec<f64>) -> Self {
        OriSeries(values.into_iter().map(|v| v.clamp(ORI_MIN, ORI_MAX)).collect())
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
}

/// Location and scale of one rater's scores.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RaterStats {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl RaterStats {
    pub fn from_scores(scores: &[f64]) -> Result<Self> {
        if scores.len() < 2 {
            return Err(Error::TooFewScores {
                rater_id: String::new(),
                count: scores.len(),
            });
        }
        let (mean, std) = mean_and_population_std(scores);
        Ok(RaterStats { mean, std })
    }

    pub fn degenerate(&self) -> bool {
        self.std == 0.0
    }

    pub fn z(&self, score: f64) -> f64 {
        if self.degenerate() {
            0.0
        } else {
            (score - self.mean) / self.std
        }
    }
}

/// A rater's z-scores for one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct RaterProfile {
    pub z: Vec<f64>,
    pub degenerate: bool,
}

/// Z-scores of all of one rater's scores. A zero-variance rater gets all
/// zeros and `degenerate = true`.
pub fn normalize_rater(scores: &[f64]) -> Result<RaterProfile> {
    let stats = RaterStats::from_scores(scores)?;
    Ok(RaterProfile {
        z: scores.iter().map(|&s| stats.z(s)).collect(),
        degenerate: stats.degenerate(),
    })
}

/// Per-snippet mean z-score across raters.
pub fn fuse_z(profiles: &[RaterProfile]) -> Result<Vec<f64>> {
    let first = profiles.first().ok_or(Error::Empty("rater profiles"))?;
    let n = first.z.len();
    if let Some(p) = profiles.iter().find(|p| p.z.len() != n) {
        return Err(Error::LengthMismatch {
            left: n,
            right: p.z.len(),
        });
    }
    if profiles.iter().all(|p| p.degenerate) {
        return Err(Error::NoInformativeRater);
    }
    let k = profiles.len() as f64;
    Ok((0..n)
        .map(|i| profiles.iter().map(|p| p.z[i]).sum::<f64>() / k)
        .collect())
}

/// Fused z-profile mapped to `pooled_mean + z * pooled_std`, clamped to [1, 5].
pub fn fuse_and_rescale(
    profiles: &[RaterProfile],
    pooled_mean: f64,
    pooled_std: f64,
) -> Result<Vec<f64>> {
    Ok(fuse_z(profiles)?
        .into_iter()
        .map(|z| (pooled_mean + z * pooled_std).clamp(ORI_MIN, ORI_MAX))
        .collect())
}

/// Piecewise-linear interpolation of snippet values anchored at snippet
/// centers (1 s, 3 s, ...), flat before the first and after the last anchor.
pub fn interpolate_to_frames(
    snippet_values: &[f64],
    clip_duration: f64,
    frame_rate: f64,
) -> Result<OriSeries> {
    if snippet_values.is_empty() {
        return Err(Error::Empty("snippet values"));
    }
    if !(clip_duration > 0.0 && clip_duration.is_finite()) {
        return Err(Error::Config(format!("clip duration {clip_duration} not positive")));
    }
    if !(frame_rate > 0.0 && frame_rate.is_finite()) {
        return Err(Error::Config(format!("frame rate {frame_rate} not positive")));
    }
    let frames = (clip_duration * frame_rate).round() as usize;
    let last = snippet_values.len() - 1;
    let center = |k: usize| SNIPPET_S * k as f64 + SNIPPET_S / 2.0;
    let values = (0..frames)
        .map(|i| {
            let t = i as f64 / frame_rate;
            if t <= center(0) {
                return snippet_values[0];
            }
            if t >= center(last) {
                return snippet_values[last];
            }
            let k = (((t - center(0)) / SNIPPET_S).floor() as usize).min(last - 1);
            let w = (t - center(k)) / SNIPPET_S;
            snippet_values[k] + w * (snippet_values[k + 1] - snippet_values[k])
        })
        .collect();
    OriSeries::new(values)
}

/// Ground-truth ORI for a whole dataset.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub series: BTreeMap<String, OriSeries>,
    pub pooled_mean: f64,
    pub pooled_std: f64,
    /// Raters whose scores have zero variance dataset-wide.
    pub degenerate_raters: Vec<String>,
}

impl GroundTruth {
    /// Builds ORI curves for every episode that carries rater sheets.
    pub fn from_episodes(episodes: &[Episode]) -> Result<Self> {
        let mut by_rater: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        let mut pooled = Vec::new();
        for ep in episodes {
            for sheet in ep.rater_sheets.iter().flatten() {
                sheet.validate(ep.duration())?;
                let scores = sheet.scores.iter().map(|&s| f64::from(s));
                by_rater.entry(&sheet.rater_id).or_default().extend(scores.clone());
                pooled.extend(scores);
            }
        }
        if pooled.is_empty() {
            return Err(Error::MissingTarget("no rater sheets in dataset".into()));
        }
        let mut stats = BTreeMap::new();
        let mut degenerate_raters = Vec::new();
        for (rater, scores) in &by_rater {
            let s = RaterStats::from_scores(scores).map_err(|_| Error::TooFewScores {
                rater_id: rater.to_string(),
                count: scores.len(),
            })?;
            if s.degenerate() {
                warn!("rater {rater} has zero score variance; contributing pooled mean");
                degenerate_raters.push(rater.to_string());
            }
            stats.insert(*rater, s);
        }
        let (pooled_mean, pooled_std) = mean_and_population_std(&pooled);

        let mut series = BTreeMap::new();
        for ep in episodes {
            let Some(sheets) = ep.rater_sheets.as_ref().filter(|s| !s.is_empty()) else {
                continue;
            };
            let profiles: Vec<RaterProfile> = sheets
                .iter()
                .map(|sheet| {
                    let st = stats[sheet.rater_id.as_str()];
                    RaterProfile {
                        z: sheet.scores.iter().map(|&s| st.z(f64::from(s))).collect(),
                        degenerate: st.degenerate(),
                    }
                })
                .collect();
            let snippets = fuse_and_rescale(&profiles, pooled_mean, pooled_std)?;
            let mut ori = interpolate_to_frames(&snippets, ep.duration(), ep.frame_rate_hz)?;
            // duration is derived from the frame count, so rounding can only
            // disagree by float noise; pin the length to the episode
            ori.0.resize(ep.frame_count(), *snippets.last().unwrap());
            series.insert(ep.id.clone(), ori);
        }
        Ok(GroundTruth {
            series,
            pooled_mean,
            pooled_std,
            degenerate_raters,
        })
    }

    pub fn get(&self, episode_id: &str) -> Option<&OriSeries> {
        self.series.get(episode_id)
    }
}

#[derive(Debug, Deserialize)]
struct RaterRow {
    rater_id: String,
    episode_id: String,
    snippet_index: usize,
    score: i64,
}

/// Reads rater scores from CSV with columns
/// `rater_id,episode_id,snippet_index,score`. Rows may come in any order;
/// each (rater, episode) must cover snippet indices `0..n` exactly once.
pub fn read_rater_csv<R: Read>(reader: R) -> Result<Vec<RaterSheet>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut cells: BTreeMap<(String, String), BTreeMap<usize, u8>> = BTreeMap::new();
    for (i, row) in rdr.deserialize::<RaterRow>().enumerate() {
        let line = i as u64 + 2;
        let row = row.map_err(|e| Error::Malformed {
            line,
            message: e.to_string(),
        })?;
        if !(1..=5).contains(&row.score) {
            return Err(Error::Malformed {
                line,
                message: format!("score {} outside 1..5", row.score),
            });
        }
        let slot = cells.entry((row.rater_id, row.episode_id)).or_default();
        if slot.insert(row.snippet_index, row.score as u8).is_some() {
            return Err(Error::Malformed {
                line,
                message: format!("duplicate snippet_index {}", row.snippet_index),
            });
        }
    }
    cells
        .into_iter()
        .map(|((rater_id, episode_id), scores)| {
            let indices: BTreeSet<usize> = scores.keys().copied().collect();
            if indices.iter().copied().ne(0..scores.len()) {
                return Err(Error::InvalidEpisode {
                    id: episode_id,
                    reason: format!("rater {rater_id} snippet indices are not contiguous from 0"),
                });
            }
            Ok(RaterSheet {
                rater_id,
                episode_id,
                scores: scores.into_values().collect(),
            })
        })
        .collect()
}

/// Replaces each episode's rater sheets with those from `sheets` that name it.
pub fn attach_sheets(episodes: &mut [Episode], sheets: Vec<RaterSheet>) -> Result<()> {
    let mut by_episode: BTreeMap<String, Vec<RaterSheet>> = BTreeMap::new();
    for s in sheets {
        by_episode.entry(s.episode_id.clone()).or_default().push(s);
    }
    for ep in episodes.iter_mut() {
        if let Some(list) = by_episode.remove(&ep.id) {
            for s in &list {
                s.validate(ep.duration())?;
            }
            ep.rater_sheets = Some(list);
        }
    }
    if let Some(id) = by_episode.keys().next() {
        return Err(Error::InvalidEpisode {
            id: id.clone(),
            reason: "rater sheet names an unknown episode".into(),
        });
    }
    Ok(())
}

pub(crate) fn mean_and_population_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn normalize_one_three_five() {
        let p = normalize_rater(&[1.0, 3.0, 5.0]).unwrap();
        // mean 3, population std sqrt(8/3)
        let expected = 2.0 / (8.0f64 / 3.0).sqrt();
        assert!((expected - 1.224745).abs() < 1e-6);
        assert!((p.z[0] + expected).abs() < 1e-12);
        assert_eq!(p.z[1], 0.0);
        assert!((p.z[2] - expected).abs() < 1e-12);
        assert!(!p.degenerate);
    }

    #[test]
    fn constant_rater_is_degenerate() {
        let p = normalize_rater(&[4.0, 4.0, 4.0, 4.0]).unwrap();
        assert_eq!(p.z, vec![0.0; 4]);
        assert!(p.degenerate);
    }

    #[test]
    fn too_few_scores() {
        assert!(matches!(
            normalize_rater(&[3.0]),
            Err(Error::TooFewScores { count: 1, .. })
        ));
    }

    #[test]
    fn fusing_identical_profiles() {
        let z = vec![-1.0, 0.5, 0.25];
        let p = RaterProfile { z: z.clone(), degenerate: false };
        assert_eq!(fuse_z(&[p.clone(), p]).unwrap(), z);
    }

    #[test]
    fn zero_profile_rescales_to_pooled_mean() {
        let p = RaterProfile { z: vec![0.0; 15], degenerate: false };
        assert_eq!(fuse_and_rescale(&[p], 3.2, 0.8).unwrap(), vec![3.2; 15]);
    }

    #[test]
    fn rescale_clamps() {
        let p = RaterProfile { z: vec![3.0, -3.0], degenerate: false };
        assert_eq!(fuse_and_rescale(&[p], 3.0, 1.0).unwrap(), vec![5.0, 1.0]);
    }

    #[test]
    fn fuse_errors() {
        assert!(matches!(fuse_z(&[]), Err(Error::Empty(_))));
        let a = RaterProfile { z: vec![0.0; 2], degenerate: false };
        let b = RaterProfile { z: vec![0.0; 3], degenerate: false };
        assert!(matches!(fuse_z(&[a, b]), Err(Error::LengthMismatch { .. })));
        let d = RaterProfile { z: vec![0.0; 2], degenerate: true };
        assert!(matches!(fuse_z(&[d]), Err(Error::NoInformativeRater)));
    }

    #[test]
    fn interpolation_examples() {
        let s = interpolate_to_frames(&[3.0; 15], 30.0, 30.0).unwrap();
        assert_eq!(s.len(), 900);
        assert!(s.values().iter().all(|v| *v == 3.0));

        // anchors at 1 s and 3 s, 2 Hz: frame 4 is t = 2.0 s
        let s = interpolate_to_frames(&[2.0, 4.0], 4.0, 2.0).unwrap();
        assert_eq!(s.values()[4], 3.0);
        assert_eq!(s.values()[0], 2.0);
        assert_eq!(s.values()[2], 2.0);
        assert_eq!(s.values()[6], 4.0);
        assert_eq!(s.values()[7], 4.0);

        let s = interpolate_to_frames(&[4.5], 30.0, 10.0).unwrap();
        assert!(s.values().iter().all(|v| *v == 4.5));
    }

    #[test]
    fn interpolation_rejects_bad_inputs() {
        assert!(interpolate_to_frames(&[], 30.0, 30.0).is_err());
        assert!(interpolate_to_frames(&[3.0], 0.0, 30.0).is_err());
        assert!(interpolate_to_frames(&[3.0], 30.0, -1.0).is_err());
    }

    #[test]
    fn rater_csv_parsing() {
        let csv = "rater_id,episode_id,snippet_index,score\n\
                   r1,e1,1,4\nr1,e1,0,3\nr2,e1,0,5\nr2,e1,1,5\n";
        let sheets = read_rater_csv(csv.as_bytes()).unwrap();
        assert_eq!(sheets.len(), 2);
        assert_eq!(sheets[0].scores, vec![3, 4]);

        let bad = "rater_id,episode_id,snippet_index,score\nr1,e1,0,7\n";
        assert!(matches!(
            read_rater_csv(bad.as_bytes()),
            Err(Error::Malformed { line: 2, .. })
        ));
        let gap = "rater_id,episode_id,snippet_index,score\nr1,e1,0,3\nr1,e1,2,3\n";
        assert!(read_rater_csv(gap.as_bytes()).is_err());
    }

    #[test]
    fn snippet_count_for_thirty_seconds() {
        assert_eq!(snippet_count(30.0), 15);
        assert_eq!(snippet_count(29.9), 15);
        assert_eq!(snippet_count(30.0 + 1e-12), 15);
    }

    proptest! {
        #[test]
        fn z_scores_affine_invariant(
            scores in proptest::collection::vec(1u8..=5, 2..40),
            a in 0.1f64..10.0,
            b in -10.0f64..10.0,
        ) {
            let s: Vec<f64> = scores.iter().map(|&v| f64::from(v)).collect();
            let t: Vec<f64> = s.iter().map(|v| a * v + b).collect();
            let zs = normalize_rater(&s).unwrap();
            let zt = normalize_rater(&t).unwrap();
            for (x, y) in zs.z.iter().zip(&zt.z) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }

        #[test]
        fn interpolation_bounded_and_exact_at_anchors(
            snippets in proptest::collection::vec(1.0f64..5.0, 1..16),
        ) {
            let duration = SNIPPET_S * snippets.len() as f64;
            let fr = 10.0;
            let s = interpolate_to_frames(&snippets, duration, fr).unwrap();
            prop_assert_eq!(s.len(), (duration * fr).round() as usize);
            for (k, &v) in snippets.iter().enumerate() {
                let frame = ((2 * k + 1) as f64 * fr).round() as usize;
                prop_assert!((s.values()[frame] - v).abs() < 1e-12);
            }
            for (k, pair) in snippets.windows(2).enumerate() {
                let (lo, hi) = (pair[0].min(pair[1]), pair[0].max(pair[1]));
                let from = ((2 * k + 1) as f64 * fr) as usize;
                let to = ((2 * k + 3) as f64 * fr) as usize;
                let seg = &s.values()[from..=to];
                prop_assert!(seg.iter().all(|v| *v >= lo - 1e-12 && *v <= hi + 1e-12));
                let rising = pair[1] >= pair[0];
                let monotone = seg.windows(2).all(|w| if rising { w[1] >= w[0] - 1e-12 } else { w[1] <= w[0] + 1e-12 });
                prop_assert!(monotone, "segment not monotone");
            }
        }
    }
}
