//! Post-takeover control quality and its relation to readiness.
//!
//! Both quality metrics look at the recorded ego samples in the half-open
//! window `(t_tor, t_tor + horizon]`; no interpolation between samples.
//! `delta_v` is the largest absolute speed difference from the speed at the
//! takeover request (the latest sample at or before `t_tor`). `delta_x` is the
//! largest absolute lateral offset from the lane centerline.

use serde::{Deserialize, Serialize};

use crate::domain::{EgoSample, Episode, Ndrt};
use crate::error::{Error, Result};
use crate::ground_truth::OriSeries;

pub const DEFAULT_HORIZON_S: f64 = 5.0;
/// Length of the pre-request window averaged by [`ori_pre_tor`].
pub const ORI_PRE_WINDOW_S: f64 = 2.0;
/// Speeds at or below this inside the window mark a braking-to-halt episode.
pub const HALT_SPEED_MPS: f64 = 0.5;

fn reference_and_window(
    ego: &[EgoSample],
    t_tor: f64,
    horizon: f64,
) -> Result<(EgoSample, impl Iterator<Item = &EgoSample>)> {
    if ego.is_empty() {
        return Err(Error::Empty("ego trajectory"));
    }
    let end = t_tor + horizon;
    let coverage = || Error::InsufficientCoverage { from: t_tor, to: end };
    let mut reference: Option<&EgoSample> = None;
    let mut last_t = f64::NEG_INFINITY;
    for s in ego {
        last_t = last_t.max(s.t);
        if s.t <= t_tor && reference.is_none_or(|r| s.t >= r.t) {
            reference = Some(s);
        }
    }
    let reference = *reference.ok_or_else(coverage)?;
    if last_t < end {
        return Err(coverage());
    }
    let mut window = ego.iter().filter(move |s| s.t > t_tor && s.t <= end).peekable();
    if window.peek().is_none() {
        return Err(coverage());
    }
    Ok((reference, window))
}

/// Maximum |v(t) - v(t_tor)| over `(t_tor, t_tor + horizon]`, m/s.
pub fn delta_v(ego: &[EgoSample], t_tor: f64, horizon: f64) -> Result<f64> {
    let (reference, window) = reference_and_window(ego, t_tor, horizon)?;
    Ok(window.fold(0.0, |m, s| f64::max(m, (s.speed - reference.speed).abs())))
}

/// Maximum |lateral offset| over `(t_tor, t_tor + horizon]`, meters.
pub fn delta_x(ego: &[EgoSample], t_tor: f64, horizon: f64) -> Result<f64> {
    let (_, window) = reference_and_window(ego, t_tor, horizon)?;
    Ok(window.fold(0.0, |m, s| f64::max(m, s.lateral_offset.abs())))
}

/// Whether the vehicle is brought (nearly) to a stop inside the window.
pub fn halted_after_tor(ego: &[EgoSample], t_tor: f64, horizon: f64) -> Result<bool> {
    let (_, mut window) = reference_and_window(ego, t_tor, horizon)?;
    Ok(window.any(|s| s.speed <= HALT_SPEED_MPS))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityMetrics {
    pub episode_id: String,
    pub ndrt: Ndrt,
    pub delta_v: f64,
    pub delta_x: f64,
}

pub fn quality_metrics(episode: &Episode, horizon: f64) -> Result<QualityMetrics> {
    Ok(QualityMetrics {
        episode_id: episode.id.clone(),
        ndrt: episode.ndrt.clone(),
        delta_v: delta_v(&episode.ego, episode.t_tor, horizon)?,
        delta_x: delta_x(&episode.ego, episode.t_tor, horizon)?,
    })
}

/// Mean ORI over the 2-second window ending at the takeover request.
pub fn ori_pre_tor(predicted: &OriSeries, episode: &Episode) -> Result<f64> {
    let t_tor = episode.t_tor;
    let from = t_tor - ORI_PRE_WINDOW_S;
    if from < 0.0 {
        return Err(Error::InsufficientCoverage { from, to: t_tor });
    }
    let end = episode.frame_at(t_tor);
    let count = (ORI_PRE_WINDOW_S * episode.frame_rate_hz).round().max(1.0) as usize;
    if end >= predicted.len() || end + 1 < count {
        return Err(Error::InsufficientCoverage { from, to: t_tor });
    }
    let window = &predicted.values()[end + 1 - count..=end];
    Ok(window.iter().sum::<f64>() / count as f64)
}

/// Sample Pearson correlation. Constant inputs are an error, not NaN.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::LengthMismatch {
            left: xs.len(),
            right: ys.len(),
        });
    }
    if xs.len() < 2 {
        return Err(Error::TooFewSamples(xs.len()));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("correlation input"));
    }
    if xs.iter().all(|x| *x == xs[0]) {
        return Err(Error::ZeroVariance("xs"));
    }
    if ys.iter().all(|y| *y == ys[0]) {
        return Err(Error::ZeroVariance("ys"));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ZeroVariance(if sxx == 0.0 { "xs" } else { "ys" }));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Per-task mean quality metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NdrtMeans {
    pub ndrt: Ndrt,
    pub count: usize,
    pub mean_delta_v_mps: f64,
    pub mean_delta_x_m: f64,
}

/// Groups by task in order of first appearance.
pub fn aggregate_by_ndrt(metrics: &[QualityMetrics]) -> Vec<NdrtMeans> {
    let mut out: Vec<NdrtMeans> = Vec::new();
    for m in metrics {
        let slot = match out.iter().position(|g| g.ndrt == m.ndrt) {
            Some(i) => &mut out[i],
            None => {
                out.push(NdrtMeans {
                    ndrt: m.ndrt.clone(),
                    count: 0,
                    mean_delta_v_mps: 0.0,
                    mean_delta_x_m: 0.0,
                });
                out.last_mut().unwrap()
            }
        };
        slot.count += 1;
        slot.mean_delta_v_mps += m.delta_v;
        slot.mean_delta_x_m += m.delta_x;
    }
    for g in &mut out {
        g.mean_delta_v_mps /= g.count as f64;
        g.mean_delta_x_m /= g.count as f64;
    }
    out
}

/// One line of the metrics report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub episode_id: String,
    pub ndrt: Ndrt,
    pub delta_v_mps: f64,
    pub delta_x_m: f64,
    pub ori_pre: Option<f64>,
    pub tot_s: Option<f64>,
}

/// Correlations of readiness (ORI before the request) and takeover time with
/// the two quality metrics. `None` marks a cell whose input had zero variance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationTable {
    pub n: usize,
    pub ori_delta_v: Option<f64>,
    pub ori_delta_x: Option<f64>,
    pub tot_delta_v: Option<f64>,
    pub tot_delta_x: Option<f64>,
}

impl CorrelationTable {
    pub fn cells(&self) -> [[Option<f64>; 2]; 2] {
        [
            [self.ori_delta_v, self.ori_delta_x],
            [self.tot_delta_v, self.tot_delta_x],
        ]
    }
}

fn defined(r: Result<f64>) -> Result<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::ZeroVariance(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Uses only rows where all four quantities are present.
pub fn correlation_table(rows: &[MetricsRow]) -> Result<CorrelationTable> {
    let complete: Vec<_> = rows
        .iter()
        .filter_map(|r| Some((r.ori_pre?, r.tot_s?, r.delta_v_mps, r.delta_x_m)))
        .collect();
    if complete.len() < 2 {
        return Err(Error::TooFewSamples(complete.len()));
    }
    let ori: Vec<f64> = complete.iter().map(|c| c.0).collect();
    let tot: Vec<f64> = complete.iter().map(|c| c.1).collect();
    let dv: Vec<f64> = complete.iter().map(|c| c.2).collect();
    let dx: Vec<f64> = complete.iter().map(|c| c.3).collect();
    Ok(CorrelationTable {
        n: complete.len(),
        ori_delta_v: defined(pearson(&ori, &dv))?,
        ori_delta_x: defined(pearson(&ori, &dx))?,
        tot_delta_v: defined(pearson(&tot, &dv))?,
        tot_delta_x: defined(pearson(&tot, &dx))?,
    })
}
