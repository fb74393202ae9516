//! Seeded generator of takeover episodes.
//!
//! Each episode follows one task (NDRT). Per frame, five latent class chains
//! (gaze, left/right hand zone, left/right held object) evolve as sticky
//! Markov chains whose resampling distribution is the task's emission profile
//! before the takeover request and blends linearly into the lowest-distraction
//! profile over `[t_tor, t_tor + tot]`. A simulated classifier turns each
//! latent class into a probability vector, with label noise.
//!
//! Latent readiness on [1, 5] is a fixed decreasing function of the latent
//! classes, so it is recoverable from the features. Raters see its 2-second
//! snippet means through a private monotone affine distortion plus noise.
//!
//! After the request the ego vehicle dips in speed and drifts laterally with
//! magnitudes `gain * distraction * (1 + eps) * tot / tot_reference`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal, StandardNormal};
use rayon::prelude::*;

use crate::domain::{
    EgoSample, Episode, FrameFeatures, Ndrt, NdrtSet, ProbPolicy,
    ProbVector, DEFAULT_FRAME_RATE_HZ, MPH_TO_MPS,
};
use crate::error::{Error, Result};
use crate::ground_truth::{snippet_count, RaterSheet, SNIPPET_S};

/// Emission distributions and distraction level of one task.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskProfile {
    /// In [0, 1]; zero for attentive driving.
    pub distraction: f64,
    pub gaze: [f64; 5],
    pub left_zone: [f64; 3],
    pub right_zone: [f64; 5],
    pub left_obj: [f64; 4],
    pub right_obj: [f64; 4],
}

impl TaskProfile {
    fn rows(&self) -> [&[f64]; 5] {
        [
            &self.gaze,
            &self.left_zone,
            &self.right_zone,
            &self.left_obj,
            &self.right_obj,
        ]
    }

    fn validate(&self, name: &Ndrt) -> Result<()> {
        if !(0.0..=1.0).contains(&self.distraction) {
            return Err(Error::Config(format!("{name}: distraction outside [0, 1]")));
        }
        for row in self.rows() {
            ProbVector::validate_or_renormalize(row, ProbPolicy::Strict)
                .map_err(|e| Error::Config(format!("{name}: emission row {e}")))?;
        }
        Ok(())
    }
}

fn default_profiles() -> Vec<(&'static str, TaskProfile)> {
    // gaze:  Forward Rearview Lap Speedometer Infotainment
    // zones: Wheel Lap Air [Infotainment Cupholder]
    // objs:  None Phone Tablet Beverage
    let p = |distraction, gaze, left_zone, right_zone, left_obj, right_obj| TaskProfile {
        distraction,
        gaze,
        left_zone,
        right_zone,
        left_obj,
        right_obj,
    };
    vec![
        ("Attentive", p(0.0,
            [0.80, 0.12, 0.01, 0.06, 0.01],
            [0.90, 0.08, 0.02],
            [0.90, 0.05, 0.02, 0.02, 0.01],
            [0.97, 0.01, 0.01, 0.01],
            [0.97, 0.01, 0.01, 0.01])),
        ("TalkingToCopassenger", p(0.15,
            [0.62, 0.30, 0.02, 0.04, 0.02],
            [0.80, 0.10, 0.10],
            [0.65, 0.10, 0.20, 0.03, 0.02],
            [0.96, 0.02, 0.01, 0.01],
            [0.94, 0.02, 0.01, 0.03])),
        ("UsingInfotainment", p(0.5,
            [0.30, 0.04, 0.04, 0.07, 0.55],
            [0.80, 0.15, 0.05],
            [0.15, 0.05, 0.05, 0.72, 0.03],
            [0.96, 0.02, 0.01, 0.01],
            [0.96, 0.02, 0.01, 0.01])),
        ("PhoneCall", p(0.6,
            [0.45, 0.10, 0.25, 0.05, 0.15],
            [0.70, 0.20, 0.10],
            [0.05, 0.10, 0.80, 0.03, 0.02],
            [0.95, 0.03, 0.01, 0.01],
            [0.10, 0.85, 0.02, 0.03])),
        ("CountingCoins", p(0.7,
            [0.15, 0.03, 0.72, 0.05, 0.05],
            [0.20, 0.70, 0.10],
            [0.05, 0.40, 0.10, 0.05, 0.40],
            [0.85, 0.03, 0.02, 0.10],
            [0.60, 0.02, 0.03, 0.35])),
        ("Reading", p(0.75,
            [0.10, 0.02, 0.80, 0.04, 0.04],
            [0.30, 0.60, 0.10],
            [0.10, 0.75, 0.10, 0.03, 0.02],
            [0.30, 0.05, 0.60, 0.05],
            [0.30, 0.05, 0.60, 0.05])),
        ("Texting", p(0.85,
            [0.10, 0.02, 0.78, 0.02, 0.08],
            [0.25, 0.65, 0.10],
            [0.05, 0.80, 0.10, 0.03, 0.02],
            [0.60, 0.35, 0.03, 0.02],
            [0.05, 0.90, 0.03, 0.02])),
        ("EyesClosed", p(1.0,
            [0.02, 0.01, 0.95, 0.01, 0.01],
            [0.10, 0.88, 0.02],
            [0.05, 0.90, 0.02, 0.02, 0.01],
            [0.98, 0.01, 0.005, 0.005],
            [0.98, 0.01, 0.005, 0.005])),
    ]
}

/// Readiness cost of each latent class, in [0, 1].
const GAZE_COST: [f64; 5] = [0.0, 0.15, 1.0, 0.3, 0.8];
const ZONE_COST: [f64; 5] = [0.0, 0.7, 0.5, 0.8, 0.6];
const OBJECT_COST: [f64; 4] = [0.0, 1.0, 1.0, 0.5];

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub ndrts: NdrtSet,
    /// One profile per label of `ndrts`.
    pub tasks: BTreeMap<Ndrt, TaskProfile>,
    pub frame_rate_hz: f64,
    pub clip_duration_s: f64,
    pub ego_rate_hz: f64,
    pub tor_min_s: f64,
    pub tor_max_s: f64,
    /// Log-space location of takeover time for an attentive driver.
    pub tot_log_mean: f64,
    /// Added to the log-space location per unit distraction.
    pub tot_distraction_slope: f64,
    pub tot_log_sigma: f64,
    /// Log-space spread of a per-subject takeover-time factor.
    pub subject_tot_sigma: f64,
    pub tot_reference_s: f64,
    pub speed_gain_mps: f64,
    pub lateral_gain_m: f64,
    /// Standard deviation of the multiplicative gain noise eps.
    pub gain_noise: f64,
    pub speed_pulse_s: f64,
    pub lateral_pulse_s: f64,
    /// Half-width of uniform speed noise.
    pub speed_jitter_mps: f64,
    /// Half-width of uniform lateral offset noise.
    pub lateral_jitter_m: f64,
    pub cruise_speed_mps: f64,
    /// Probability that a latent class chain keeps its class between frames.
    pub stickiness: f64,
    pub gaze_label_noise: f64,
    pub hand_label_noise: f64,
    pub classifier_margin: f64,
    pub classifier_logit_noise: f64,
    pub readiness_gaze_weight: f64,
    pub readiness_hand_weight: f64,
    pub n_raters: usize,
    pub rater_noise_std: f64,
    /// Rater slopes are drawn from [1 - spread, 1 + spread].
    pub rater_scale_spread: f64,
    /// Rater offsets are drawn from [-spread, spread].
    pub rater_bias_spread: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        let profiles = default_profiles();
        GeneratorConfig {
            ndrts: NdrtSet::default(),
            tasks: profiles.into_iter().map(|(n, p)| (Ndrt::new(n), p)).collect(),
            frame_rate_hz: DEFAULT_FRAME_RATE_HZ,
            clip_duration_s: 30.0,
            ego_rate_hz: 10.0,
            tor_min_s: 10.0,
            tor_max_s: 20.0,
            tot_log_mean: 2.0f64.ln(),
            tot_distraction_slope: 0.9,
            tot_log_sigma: 0.3,
            subject_tot_sigma: 0.1,
            tot_reference_s: 2.0,
            speed_gain_mps: 3.0,
            lateral_gain_m: 0.5,
            gain_noise: 0.25,
            speed_pulse_s: 4.0,
            lateral_pulse_s: 4.5,
            speed_jitter_mps: 0.05,
            lateral_jitter_m: 0.02,
            cruise_speed_mps: 30.0 * MPH_TO_MPS,
            stickiness: 0.9,
            gaze_label_noise: 0.1,
            hand_label_noise: 0.25,
            classifier_margin: 3.0,
            classifier_logit_noise: 0.7,
            readiness_gaze_weight: 0.6,
            readiness_hand_weight: 0.4,
            n_raters: 3,
            rater_noise_std: 0.3,
            rater_scale_spread: 0.2,
            rater_bias_spread: 0.4,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        for n in self.ndrts.labels() {
            match self.tasks.get(n) {
                Some(p) => p.validate(n)?,
                None => return bad(format!("no task profile for {n}")),
            }
        }
        let positive = [
            ("frame_rate_hz", self.frame_rate_hz),
            ("clip_duration_s", self.clip_duration_s),
            ("ego_rate_hz", self.ego_rate_hz),
            ("tot_reference_s", self.tot_reference_s),
            ("speed_pulse_s", self.speed_pulse_s),
            ("lateral_pulse_s", self.lateral_pulse_s),
            ("classifier_margin", self.classifier_margin),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive"));
            }
        }
        let nonnegative = [
            ("tot_log_sigma", self.tot_log_sigma),
            ("subject_tot_sigma", self.subject_tot_sigma),
            ("speed_gain_mps", self.speed_gain_mps),
            ("lateral_gain_m", self.lateral_gain_m),
            ("gain_noise", self.gain_noise),
            ("speed_jitter_mps", self.speed_jitter_mps),
            ("lateral_jitter_m", self.lateral_jitter_m),
            ("cruise_speed_mps", self.cruise_speed_mps),
            ("classifier_logit_noise", self.classifier_logit_noise),
            ("readiness_gaze_weight", self.readiness_gaze_weight),
            ("readiness_hand_weight", self.readiness_hand_weight),
            ("rater_noise_std", self.rater_noise_std),
            ("rater_bias_spread", self.rater_bias_spread),
            ("tot_distraction_slope", self.tot_distraction_slope),
        ];
        for (name, v) in nonnegative {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be nonnegative"));
            }
        }
        for (name, v) in [
            ("stickiness", self.stickiness),
            ("gaze_label_noise", self.gaze_label_noise),
            ("hand_label_noise", self.hand_label_noise),
        ] {
            if !(0.0..1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1)"));
            }
        }
        if !(0.0..1.0).contains(&self.rater_scale_spread) {
            return bad("rater_scale_spread must lie in [0, 1)".into());
        }
        if self.readiness_gaze_weight + self.readiness_hand_weight <= 0.0 {
            return bad("readiness weights are both zero".into());
        }
        if !(self.tor_min_s >= SNIPPET_S
            && self.tor_min_s <= self.tor_max_s
            && self.tor_max_s + 5.0 <= self.clip_duration_s)
        {
            return bad("takeover request range must leave 2 s before and 5 s after".into());
        }
        if self.n_raters < 1 {
            return bad("n_raters must be at least 1".into());
        }
        let attentive = self.recovery_profile();
        if attentive.distraction != 0.0 {
            return bad("the least distracting task must have distraction 0".into());
        }
        Ok(())
    }

    /// Profile that drivers converge to after taking over.
    fn recovery_profile(&self) -> &TaskProfile {
        self.ndrts
            .labels()
            .iter()
            .filter_map(|n| self.tasks.get(n))
            .min_by(|a, b| a.distraction.total_cmp(&b.distraction))
            .expect("validated nonempty")
    }

    /// Median takeover time for a task, excluding subject effects.
    pub fn median_tot(&self, ndrt: &Ndrt) -> Option<f64> {
        let d = self.tasks.get(ndrt)?.distraction;
        Some((self.tot_log_mean + self.tot_distraction_slope * d).exp())
    }

    /// Reads overrides from a TOML key-value file, e.g.
    ///
    /// ```text
    /// speed_gain_mps = 2.5
    /// hand_label_noise = 0.4
    /// ndrts = ["Attentive", "Texting"]
    /// task.Texting.distraction = 0.9
    /// task.Texting.gaze = [0.1, 0.02, 0.78, 0.02, 0.08]
    /// ```
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let mut cfg = GeneratorConfig::default();
        for (key, value) in &table {
            let num = || -> Result<f64> {
                value
                    .as_float()
                    .or_else(|| value.as_integer().map(|i| i as f64))
                    .ok_or_else(|| Error::Config(format!("{key}: expected a number")))
            };
            match key.as_str() {
                "ndrts" => {
                    let labels = value
                        .as_array()
                        .ok_or_else(|| Error::Config("ndrts: expected a list".into()))?
                        .iter()
                        .map(|v| v.as_str().map(Ndrt::new))
                        .collect::<Option<Vec<_>>>()
                        .ok_or_else(|| Error::Config("ndrts: expected strings".into()))?;
                    cfg.ndrts = NdrtSet::new(labels)?;
                }
                "task" => {
                    let tasks = value
                        .as_table()
                        .ok_or_else(|| Error::Config("task: expected a table".into()))?;
                    for (name, body) in tasks {
                        apply_task(&mut cfg, name, body)?;
                    }
                }
                "n_raters" => {
                    cfg.n_raters = value
                        .as_integer()
                        .filter(|n| *n >= 0)
                        .ok_or_else(|| Error::Config("n_raters: expected a count".into()))?
                        as usize
                }
                "cruise_speed_mph" => cfg.cruise_speed_mps = num()? * MPH_TO_MPS,
                _ => *cfg.scalar_mut(key)? = num()?,
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    fn scalar_mut(&mut self, key: &str) -> Result<&mut f64> {
        Ok(match key {
            "frame_rate_hz" => &mut self.frame_rate_hz,
            "clip_duration_s" => &mut self.clip_duration_s,
            "ego_rate_hz" => &mut self.ego_rate_hz,
            "tor_min_s" => &mut self.tor_min_s,
            "tor_max_s" => &mut self.tor_max_s,
            "tot_log_mean" => &mut self.tot_log_mean,
            "tot_distraction_slope" => &mut self.tot_distraction_slope,
            "tot_log_sigma" => &mut self.tot_log_sigma,
            "subject_tot_sigma" => &mut self.subject_tot_sigma,
            "tot_reference_s" => &mut self.tot_reference_s,
            "speed_gain_mps" => &mut self.speed_gain_mps,
            "lateral_gain_m" => &mut self.lateral_gain_m,
            "gain_noise" => &mut self.gain_noise,
            "speed_pulse_s" => &mut self.speed_pulse_s,
            "lateral_pulse_s" => &mut self.lateral_pulse_s,
            "speed_jitter_mps" => &mut self.speed_jitter_mps,
            "lateral_jitter_m" => &mut self.lateral_jitter_m,
            "cruise_speed_mps" => &mut self.cruise_speed_mps,
            "stickiness" => &mut self.stickiness,
            "gaze_label_noise" => &mut self.gaze_label_noise,
            "hand_label_noise" => &mut self.hand_label_noise,
            "classifier_margin" => &mut self.classifier_margin,
            "classifier_logit_noise" => &mut self.classifier_logit_noise,
            "readiness_gaze_weight" => &mut self.readiness_gaze_weight,
            "readiness_hand_weight" => &mut self.readiness_hand_weight,
            "rater_noise_std" => &mut self.rater_noise_std,
            "rater_scale_spread" => &mut self.rater_scale_spread,
            "rater_bias_spread" => &mut self.rater_bias_spread,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        })
    }
}

fn apply_task(cfg: &mut GeneratorConfig, name: &str, body: &toml::Value) -> Result<()> {
    let body = body
        .as_table()
        .ok_or_else(|| Error::Config(format!("task.{name}: expected a table")))?;
    let ndrt = Ndrt::new(name);
    let mut profile = cfg
        .tasks
        .get(&ndrt)
        .cloned()
        .unwrap_or_else(|| default_profiles()[0].1.clone());
    for (key, value) in body {
        let ctx = |m: &str| Error::Config(format!("task.{name}.{key}: {m}"));
        if key == "distraction" {
            profile.distraction = value
                .as_float()
                .or_else(|| value.as_integer().map(|i| i as f64))
                .ok_or_else(|| ctx("expected a number"))?;
            continue;
        }
        let row: Vec<f64> = value
            .as_array()
            .ok_or_else(|| ctx("expected a list"))?
            .iter()
            .map(|v| v.as_float().or_else(|| v.as_integer().map(|i| i as f64)))
            .collect::<Option<_>>()
            .ok_or_else(|| ctx("expected numbers"))?;
        let slot: &mut [f64] = match key.as_str() {
            "gaze" => &mut profile.gaze,
            "left_zone" => &mut profile.left_zone,
            "right_zone" => &mut profile.right_zone,
            "left_obj" => &mut profile.left_obj,
            "right_obj" => &mut profile.right_obj,
            _ => return Err(ctx("unknown field")),
        };
        if slot.len() != row.len() {
            return Err(ctx(&format!("expected {} values", slot.len())));
        }
        slot.copy_from_slice(&row);
    }
    cfg.tasks.insert(ndrt, profile);
    Ok(())
}

/// SplitMix64 finalizer, used to derive independent seeds.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn string_seed(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}

fn sample_index<R: Rng>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Simulated classifier output for a latent class, quantized to six decimals
/// with the residual folded into the largest entry so the sum is exact.
fn classifier_output<R: Rng>(
    rng: &mut R,
    k: usize,
    latent: usize,
    label_noise: f64,
    cfg: &GeneratorConfig,
) -> ProbVector {
    let mut predicted = latent;
    if k > 1 && rng.random::<f64>() < label_noise {
        predicted = (latent + 1 + rng.random_range(0..k - 1)) % k;
    }
    let mut logits = [0.0f64; 5];
    for (i, l) in logits.iter_mut().take(k).enumerate() {
        let noise: f64 = StandardNormal.sample(rng);
        *l = cfg.classifier_logit_noise * noise + if i == predicted { cfg.classifier_margin } else { 0.0 };
    }
    let max = logits[..k].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits[..k].iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    let mut q: Vec<f64> = exp.iter().map(|e| (e / sum * 1e6).round() / 1e6).collect();
    let top = q
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap();
    let rest: f64 = q.iter().enumerate().filter(|(i, _)| *i != top).map(|(_, v)| v).sum();
    q[top] = 1.0 - rest;
    ProbVector::validate_or_renormalize(&q, ProbPolicy::Strict).expect("classifier output is a distribution")
}

fn readiness(cfg: &GeneratorConfig, latent: &[usize; 5]) -> f64 {
    let [gaze, lz, rz, lo, ro] = *latent;
    let hand = 0.5 * ZONE_COST[lz].max(ZONE_COST[rz]) + 0.5 * OBJECT_COST[lo].max(OBJECT_COST[ro]);
    let wsum = cfg.readiness_gaze_weight + cfg.readiness_hand_weight;
    let d = (cfg.readiness_gaze_weight * GAZE_COST[gaze] + cfg.readiness_hand_weight * hand) / wsum;
    5.0 - 4.0 * d
}

fn pulse(tau: f64, period: f64) -> f64 {
    if (0.0..=period).contains(&tau) {
        (std::f64::consts::PI * tau / period).sin().powi(2)
    } else {
        0.0
    }
}

/// One takeover episode, fully determined by `(cfg, ndrt, subject_id, seed)`.
pub fn sample_episode(cfg: &GeneratorConfig, ndrt: &Ndrt, subject_id: &str, seed: u64) -> Result<Episode> {
    if !cfg.ndrts.contains(ndrt) {
        return Err(Error::UnknownNdrt(ndrt.to_string()));
    }
    let task = cfg.tasks.get(ndrt).ok_or_else(|| Error::UnknownNdrt(ndrt.to_string()))?;
    let recovery = cfg.recovery_profile();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let t_tor = rng.random_range(cfg.tor_min_s..=cfg.tor_max_s);
    let subject_factor: f64 = {
        let mut srng = ChaCha8Rng::seed_from_u64(string_seed(subject_id));
        let z: f64 = StandardNormal.sample(&mut srng);
        z * cfg.subject_tot_sigma
    };
    let location = cfg.tot_log_mean + cfg.tot_distraction_slope * task.distraction + subject_factor;
    let tot = LogNormal::new(location, cfg.tot_log_sigma)
        .map_err(|e| Error::Config(e.to_string()))?
        .sample(&mut rng);

    // features and latent readiness
    let frames = (cfg.clip_duration_s * cfg.frame_rate_hz).round() as usize;
    let dims = [5usize, 3, 5, 4, 4];
    let task_rows = task.rows();
    let recovery_rows = recovery.rows();
    let mut latent = [0usize; 5];
    let mut mixed: [Vec<f64>; 5] = dims.map(|k| vec![0.0; k]);
    let mut features = Vec::with_capacity(frames);
    let mut readiness_trace = Vec::with_capacity(frames);
    for i in 0..frames {
        let t = i as f64 / cfg.frame_rate_hz;
        let w = if t < t_tor {
            0.0
        } else if tot > 0.0 {
            ((t - t_tor) / tot).min(1.0)
        } else {
            1.0
        };
        for s in 0..5 {
            for (j, m) in mixed[s].iter_mut().enumerate() {
                *m = (1.0 - w) * task_rows[s][j] + w * recovery_rows[s][j];
            }
            if i == 0 || rng.random::<f64>() >= cfg.stickiness {
                latent[s] = sample_index(&mut rng, &mixed[s]);
            }
        }
        readiness_trace.push(readiness(cfg, &latent));
        let gaze = classifier_output(&mut rng, 5, latent[0], cfg.gaze_label_noise, cfg);
        let parts: Vec<ProbVector> = (1..5)
            .map(|s| classifier_output(&mut rng, dims[s], latent[s], cfg.hand_label_noise, cfg))
            .collect();
        let [lz, rz, lo, ro]: [ProbVector; 4] = parts.try_into().expect("four hand streams");
        features.push(FrameFeatures::new(gaze, lz, rz, lo, ro)?);
    }

    // ego trajectory
    let gain_noise = Normal::new(0.0, cfg.gain_noise).map_err(|e| Error::Config(e.to_string()))?;
    let tot_scale = tot / cfg.tot_reference_s;
    let speed_amp = cfg.speed_gain_mps * task.distraction * (1.0 + gain_noise.sample(&mut rng)).max(0.0) * tot_scale;
    let lateral_amp =
        cfg.lateral_gain_m * task.distraction * (1.0 + gain_noise.sample(&mut rng)).max(0.0) * tot_scale;
    let lateral_sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
    let ego_n = (cfg.clip_duration_s * cfg.ego_rate_hz).round() as usize;
    let ego = (0..=ego_n)
        .map(|i| {
            let t = i as f64 / cfg.ego_rate_hz;
            let tau = t - t_tor;
            let jv = cfg.speed_jitter_mps * rng.random_range(-1.0..=1.0);
            let jx = cfg.lateral_jitter_m * rng.random_range(-1.0..=1.0);
            EgoSample {
                t,
                speed: (cfg.cruise_speed_mps - speed_amp * pulse(tau, cfg.speed_pulse_s) + jv).max(0.0),
                lateral_offset: lateral_sign * lateral_amp * pulse(tau, cfg.lateral_pulse_s) + jx,
            }
        })
        .collect();

    let episode = Episode {
        id: format!("{subject_id}-{ndrt}-{seed:016x}"),
        subject_id: subject_id.to_string(),
        ndrt: ndrt.clone(),
        frame_rate_hz: cfg.frame_rate_hz,
        features,
        ego,
        t_tor,
        tot: Some(tot),
        rater_sheets: None,
        latent_readiness: Some(readiness_trace),
    };
    Ok(episode)
}

/// Snippet means of the latent readiness trace.
pub fn snippet_means(episode: &Episode) -> Result<Vec<f64>> {
    let latent = episode
        .latent_readiness
        .as_ref()
        .ok_or_else(|| Error::MissingTarget(format!("{} has no latent readiness", episode.id)))?;
    let n = snippet_count(episode.duration());
    let per = SNIPPET_S * episode.frame_rate_hz;
    Ok((0..n)
        .map(|k| {
            let from = (k as f64 * per).round() as usize;
            let to = (((k + 1) as f64 * per).round() as usize).min(latent.len());
            let seg = &latent[from..to];
            seg.iter().sum::<f64>() / seg.len() as f64
        })
        .collect())
}

/// Monotone affine rater distortion: `score = scale * (m - 3) + 3 + bias`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RaterDistortion {
    pub scale: f64,
    pub bias: f64,
}

impl RaterDistortion {
    pub const IDENTITY: RaterDistortion = RaterDistortion { scale: 1.0, bias: 0.0 };

    fn for_rater(cfg: &GeneratorConfig, seed: u64, rater: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, rater as u64 + 1));
        RaterDistortion {
            scale: 1.0 + cfg.rater_scale_spread * rng.random_range(-1.0..=1.0),
            bias: cfg.rater_bias_spread * rng.random_range(-1.0..=1.0),
        }
    }

    pub fn apply(&self, m: f64) -> f64 {
        self.scale * (m - 3.0) + 3.0 + self.bias
    }
}

/// Scores for `n_raters` raters named `rater1..`. Rater distortions depend on
/// `seed` and the rater index only, so they are shared across all episodes
/// rated with the same seed; the noise also depends on the episode id.
pub fn sample_rater_sheets(
    cfg: &GeneratorConfig,
    episode: &Episode,
    n_raters: usize,
    seed: u64,
) -> Result<Vec<RaterSheet>> {
    if n_raters < 1 {
        return Err(Error::Config("n_raters must be at least 1".into()));
    }
    let distortions: Vec<_> = (0..n_raters).map(|j| RaterDistortion::for_rater(cfg, seed, j)).collect();
    sheets_with(cfg, episode, &distortions, seed)
}

/// Same as [`sample_rater_sheets`] with explicit distortions.
pub fn sheets_with(
    cfg: &GeneratorConfig,
    episode: &Episode,
    distortions: &[RaterDistortion],
    seed: u64,
) -> Result<Vec<RaterSheet>> {
    let means = snippet_means(episode)?;
    let noise = Normal::new(0.0, cfg.rater_noise_std).map_err(|e| Error::Config(e.to_string()))?;
    Ok(distortions
        .iter()
        .enumerate()
        .map(|(j, d)| {
            let mut rng =
                ChaCha8Rng::seed_from_u64(mix_seed(mix_seed(seed, j as u64 + 1), string_seed(&episode.id)));
            let scores = means
                .iter()
                .map(|&m| (d.apply(m) + noise.sample(&mut rng)).round().clamp(1.0, 5.0) as u8)
                .collect();
            RaterSheet {
                rater_id: format!("rater{}", j + 1),
                episode_id: episode.id.clone(),
                scores,
            }
        })
        .collect())
}

pub fn subject_id(index: usize) -> String {
    format!("S{:02}", index + 1)
}

/// Balanced dataset: every subject performs every task
/// `episodes_per_subject_per_ndrt` times; each episode carries
/// `cfg.n_raters` rater sheets. Episode seeds derive from `seed`. Runs on the
/// current rayon pool; the output order does not depend on it.
pub fn sample_dataset(
    cfg: &GeneratorConfig,
    n_subjects: usize,
    episodes_per_subject_per_ndrt: usize,
    seed: u64,
) -> Result<Vec<Episode>> {
    cfg.validate()?;
    if n_subjects == 0 || episodes_per_subject_per_ndrt == 0 {
        return Err(Error::Config("subject and episode counts must be positive".into()));
    }
    let labels = cfg.ndrts.labels();
    let jobs: Vec<(usize, usize, usize)> = (0..n_subjects)
        .flat_map(|s| {
            (0..labels.len()).flat_map(move |t| (0..episodes_per_subject_per_ndrt).map(move |r| (s, t, r)))
        })
        .collect();
    let rater_seed = mix_seed(seed, 0x5241_5445);
    jobs.par_iter()
        .map(|&(s, t, r)| {
            let ep_seed = mix_seed(mix_seed(mix_seed(seed, s as u64), t as u64), r as u64);
            let mut ep = sample_episode(cfg, &labels[t], &subject_id(s), ep_seed)?;
            ep.rater_sheets = Some(sample_rater_sheets(cfg, &ep, cfg.n_raters, rater_seed)?);
            Ok(ep)
        })
        .collect()
}
