use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{RecurrentModel, Tape};
use crate::domain::{Episode, FeatureMask};
use crate::error::{Error, Result};
use crate::ground_truth::{GroundTruth, OriSeries, ORI_MAX, ORI_MIN};

pub const CHECKPOINT_FORMAT: &str = "readywatch_checkpoint_v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    /// Per-frame ORI from the trailing window.
    Ori,
    /// Takeover time from the window ending at the takeover request.
    Tot,
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Target::Ori => "ori",
            Target::Tot => "tot",
        })
    }
}

impl FromStr for Target {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ori" => Ok(Target::Ori),
            "tot" => Ok(Target::Tot),
            other => Err(Error::Config(format!("unknown target {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Frames per input window (2 s at 30 Hz).
    pub window_frames: usize,
    pub hidden_dim: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Spacing in frames between consecutive ORI training windows.
    pub sample_stride: usize,
    pub seed: u64,
    pub target: Target,
    pub feature_mask: FeatureMask,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            window_frames: 60,
            hidden_dim: 32,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            epochs: 20,
            batch_size: 32,
            sample_stride: 10,
            seed: 0,
            target: Target::Ori,
            feature_mask: FeatureMask::ALL,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.window_frames < 1 {
            return bad("window_frames must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.hidden_dim < 1 || self.batch_size < 1 || self.sample_stride < 1 {
            return bad("hidden_dim, batch_size and sample_stride must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("adam betas must lie in [0, 1)");
        }
        Ok(())
    }
}

/// Trained network plus what is needed to feed it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadinessModel {
    pub net: RecurrentModel,
    pub feature_mask: FeatureMask,
    pub window_frames: usize,
    pub target: Target,
}

impl ReadinessModel {
    /// Masked feature matrix of an episode, row-major `frames x D`.
    pub fn episode_inputs(&self, episode: &Episode) -> Vec<f64> {
        episode_inputs(episode, self.feature_mask)
    }

    /// Prediction from the window ending at frame `end` (inclusive).
    pub fn predict_at(&self, inputs: &[f64], end: usize, tape: &mut Tape) -> f64 {
        let d = self.net.input_dim();
        let start = end + 1 - self.window_frames;
        self.net.forward_tape(&inputs[start * d..(end + 1) * d], tape)
    }
}

impl ReadinessModel {
    /// Maps a raw network output into the target's range.
    pub fn finish(&self, raw: f64) -> f64 {
        match self.target {
            Target::Ori => raw.clamp(ORI_MIN, ORI_MAX),
            Target::Tot => raw.max(0.0),
        }
    }
}

fn episode_inputs(episode: &Episode, mask: FeatureMask) -> Vec<f64> {
    let mut out = Vec::with_capacity(episode.frame_count() * mask.dim());
    for f in &episode.features {
        mask.project_into(&f.flatten(), &mut out);
    }
    out
}

#[derive(Debug, Clone, Copy)]
struct Sample {
    episode: usize,
    end: usize,
    target: f64,
}

/// Training windows: masked inputs per episode plus (episode, end frame,
/// target) triples.
pub struct SampleSet {
    inputs: Vec<Vec<f64>>,
    samples: Vec<Sample>,
    dim: usize,
    window_frames: usize,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn targets(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().map(|s| s.target)
    }

    /// `(window, target)` pairs in build order.
    pub fn windows(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        self.samples.iter().map(|s| (self.window(s, self.window_frames), s.target))
    }

    fn window(&self, s: &Sample, window_frames: usize) -> &[f64] {
        let start = s.end + 1 - window_frames;
        &self.inputs[s.episode][start * self.dim..(s.end + 1) * self.dim]
    }
}

pub fn build_samples(
    episodes: &[Episode],
    ground_truth: Option<&GroundTruth>,
    cfg: &TrainConfig,
) -> Result<SampleSet> {
    let w = cfg.window_frames;
    let mut inputs = Vec::with_capacity(episodes.len());
    let mut samples = Vec::new();
    for (idx, ep) in episodes.iter().enumerate() {
        let n = ep.frame_count();
        if n < w {
            return Err(Error::InvalidEpisode {
                id: ep.id.clone(),
                reason: format!("{n} frames, shorter than the {w}-frame window"),
            });
        }
        match cfg.target {
            Target::Ori => {
                let series = ground_truth
                    .and_then(|gt| gt.get(&ep.id))
                    .ok_or_else(|| Error::MissingTarget(format!("no ground-truth ORI for {}", ep.id)))?;
                let mut end = w - 1;
                while end < n {
                    samples.push(Sample {
                        episode: idx,
                        end,
                        target: series.values()[end],
                    });
                    end += cfg.sample_stride;
                }
            }
            Target::Tot => {
                let tot = ep
                    .tot
                    .ok_or_else(|| Error::MissingTarget(format!("no takeover time for {}", ep.id)))?;
                let end = ep.frame_at(ep.t_tor);
                if end + 1 < w {
                    return Err(Error::InvalidEpisode {
                        id: ep.id.clone(),
                        reason: "takeover request earlier than one window".into(),
                    });
                }
                samples.push(Sample {
                    episode: idx,
                    end,
                    target: tot,
                });
            }
        }
        inputs.push(episode_inputs(ep, cfg.feature_mask));
    }
    if samples.is_empty() {
        return Err(Error::Empty("training dataset"));
    }
    Ok(SampleSet {
        inputs,
        samples,
        dim: cfg.feature_mask.dim(),
        window_frames: w,
    })
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    fn new(n: usize, cfg: &TrainConfig) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.adam_eps,
        }
    }

    fn update(&mut self, params: &mut [f64], grads: &[f64]) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub model: ReadinessModel,
    /// Mean squared error over all training windows before the first update.
    pub initial_loss: f64,
    /// Mean per-window squared error seen during each epoch.
    pub loss_history: Vec<f64>,
    pub samples: usize,
}

fn dataset_mse(model: &ReadinessModel, set: &SampleSet) -> f64 {
    let mut tape = Tape::default();
    let total: f64 = set
        .samples
        .iter()
        .map(|s| {
            let p = model.net.forward_tape(set.window(s, model.window_frames), &mut tape);
            (p - s.target) * (p - s.target)
        })
        .sum();
    total / set.len() as f64
}

/// Mini-batch Adam on squared error. Fully determined by `(episodes,
/// ground_truth, cfg)`.
pub fn train(
    episodes: &[Episode],
    ground_truth: Option<&GroundTruth>,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    if episodes.is_empty() {
        return Err(Error::Empty("training dataset"));
    }
    let set = build_samples(episodes, ground_truth, cfg)?;
    let mut net = RecurrentModel::init(set.dim, cfg.hidden_dim, cfg.seed)?;
    let target_mean = set.targets().sum::<f64>() / set.len() as f64;
    net.set_head_bias(target_mean);
    let mut model = ReadinessModel {
        net,
        feature_mask: cfg.feature_mask,
        window_frames: cfg.window_frames,
        target: cfg.target,
    };
    let initial_loss = dataset_mse(&model, &set);
    info!(
        "training {} windows ({} target, mask {}), initial mse {initial_loss:.5}",
        set.len(),
        cfg.target,
        cfg.feature_mask
    );

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..set.len()).collect();
    let mut adam = Adam::new(model.net.params().len(), cfg);
    let mut grads = vec![0.0; model.net.params().len()];
    let mut tape = Tape::default();
    let mut loss_history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            grads.fill(0.0);
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let s = &set.samples[i];
                let window = set.window(s, cfg.window_frames);
                let pred = model.net.forward_tape(window, &mut tape);
                let resid = pred - s.target;
                epoch_loss += resid * resid;
                model.net.backward_tape(window, &tape, 2.0 * resid * scale, &mut grads);
            }
            adam.update(model.net.params_mut(), &grads);
        }
        let mean = epoch_loss / set.len() as f64;
        if !mean.is_finite() {
            return Err(Error::NonFinite("training loss"));
        }
        debug!("epoch {epoch}: mse {mean:.5}");
        loss_history.push(mean);
    }
    Ok(TrainReport {
        model,
        initial_loss,
        loss_history,
        samples: set.len(),
    })
}

/// Post-processed predictions and targets for every window of `set`.
pub fn evaluate_samples(model: &ReadinessModel, set: &SampleSet) -> Result<(Vec<f64>, Vec<f64>)> {
    if set.dim != model.net.input_dim() || set.window_frames != model.window_frames {
        return Err(Error::DimensionMismatch {
            expected: model.net.input_dim(),
            actual: set.dim,
        });
    }
    let mut tape = Tape::default();
    let (preds, targets) = set
        .windows()
        .map(|(w, t)| (model.finish(model.net.forward_tape(w, &mut tape)), t))
        .unzip();
    Ok((preds, targets))
}

/// Per-frame ORI predictions. Frames before the first full window repeat the
/// first computable prediction; everything is clamped to [1, 5].
pub fn predict_ori_series(model: &ReadinessModel, episode: &Episode) -> Result<OriSeries> {
    if model.target != Target::Ori {
        return Err(Error::Config("model was trained for takeover time, not ORI".into()));
    }
    let n = episode.frame_count();
    let w = model.window_frames;
    if n < w {
        return Err(Error::InvalidEpisode {
            id: episode.id.clone(),
            reason: format!("{n} frames, shorter than the {w}-frame window"),
        });
    }
    let inputs = model.episode_inputs(episode);
    let mut tape = Tape::default();
    let mut out = Vec::with_capacity(n);
    for end in w - 1..n {
        out.push(model.predict_at(&inputs, end, &mut tape));
    }
    let first = out[0];
    let mut values = vec![first; w - 1];
    values.extend(out);
    Ok(OriSeries::clamped(values))
}

/// Takeover-time prediction from the window ending at the takeover request,
/// floored at zero.
pub fn predict_tot(model: &ReadinessModel, episode: &Episode) -> Result<f64> {
    if model.target != Target::Tot {
        return Err(Error::Config("model was trained for ORI, not takeover time".into()));
    }
    let end = episode.frame_at(episode.t_tor);
    if end + 1 < model.window_frames {
        return Err(Error::InvalidEpisode {
            id: episode.id.clone(),
            reason: "takeover request earlier than one window".into(),
        });
    }
    let inputs = model.episode_inputs(episode);
    Ok(model.predict_at(&inputs, end, &mut Tape::default()).max(0.0))
}

/// Self-describing model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub seed: u64,
    pub config: TrainConfig,
    pub model: ReadinessModel,
    pub initial_loss: f64,
    pub loss_history: Vec<f64>,
}

impl Checkpoint {
    pub fn from_report(report: &TrainReport, cfg: &TrainConfig) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            seed: cfg.seed,
            config: cfg.clone(),
            model: report.model.clone(),
            initial_loss: report.initial_loss,
            loss_history: report.loss_history.clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer_pretty(&mut w, self)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_reader(BufReader::new(file))?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(Error::Config(format!("unsupported checkpoint format {:?}", ckpt.format)));
        }
        if ckpt.model.net.input_dim() != ckpt.model.feature_mask.dim() {
            return Err(Error::DimensionMismatch {
                expected: ckpt.model.feature_mask.dim(),
                actual: ckpt.model.net.input_dim(),
            });
        }
        Ok(ckpt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{EgoSample, FrameFeatures, Ndrt, ProbPolicy, ProbVector};
    use rand::Rng;
    use std::collections::BTreeMap;

    const FR: f64 = 2.0;

    fn random_prob<R: Rng>(rng: &mut R, k: usize) -> ProbVector {
        let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.01..1.0)).collect();
        ProbVector::validate_or_renormalize(&raw, ProbPolicy::Renormalize).unwrap()
    }

    fn random_features<R: Rng>(rng: &mut R) -> FrameFeatures {
        let lz = random_prob(rng, 3);
        FrameFeatures::new(
            random_prob(rng, 5),
            lz,
            random_prob(rng, 5),
            random_prob(rng, 4),
            random_prob(rng, 4),
        )
        .unwrap()
    }

    fn episode(id: &str, seed: u64) -> Episode {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Episode {
            id: id.into(),
            subject_id: "S01".into(),
            ndrt: Ndrt::new("Attentive"),
            frame_rate_hz: FR,
            features: (0..60).map(|_| random_features(&mut rng)).collect(),
            ego: vec![EgoSample { t: 0.0, speed: 10.0, lateral_offset: 0.0 }],
            t_tor: 12.0,
            tot: Some(1.0 + seed as f64 * 0.1),
            rater_sheets: None,
            latent_readiness: None,
        }
    }

    fn dataset(n: usize) -> Vec<Episode> {
        (0..n).map(|i| episode(&format!("e{i}"), i as u64)).collect()
    }

    fn truth_from(eps: &[Episode], f: impl Fn(&Episode, usize) -> f64) -> GroundTruth {
        let series: BTreeMap<String, OriSeries> = eps
            .iter()
            .map(|e| (e.id.clone(), OriSeries::new((0..e.frame_count()).map(|i| f(e, i)).collect()).unwrap()))
            .collect();
        GroundTruth {
            series,
            pooled_mean: 3.0,
            pooled_std: 1.0,
            degenerate_raters: vec![],
        }
    }

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            window_frames: 4,
            hidden_dim: 6,
            learning_rate: 1e-2,
            epochs: 30,
            batch_size: 8,
            sample_stride: 2,
            seed: 3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn constant_target_is_fit_everywhere() {
        let eps = dataset(6);
        let gt = truth_from(&eps, |_, _| 2.5);
        let report = train(&eps, Some(&gt), &small_cfg()).unwrap();
        for ep in &eps {
            let series = predict_ori_series(&report.model, ep).unwrap();
            for v in series.values() {
                assert!((v - 2.5).abs() <= 0.05, "{v}");
            }
        }
    }

    #[test]
    fn learnable_target_reduces_loss() {
        let eps = dataset(6);
        // readiness drops with gaze mass on the lap
        let gt = truth_from(&eps, |e, i| 4.5 - 3.0 * e.features[i].gaze.values()[2]);
        let cfg = small_cfg();
        let report = train(&eps, Some(&gt), &cfg).unwrap();
        assert_eq!(report.loss_history.len(), cfg.epochs);
        assert!(report.loss_history.last().unwrap() < &report.initial_loss);
    }

    #[test]
    fn same_seed_same_parameters() {
        let eps = dataset(4);
        let gt = truth_from(&eps, |e, i| 3.0 + e.features[i].gaze.values()[0]);
        let a = train(&eps, Some(&gt), &small_cfg()).unwrap();
        let b = train(&eps, Some(&gt), &small_cfg()).unwrap();
        assert_eq!(a.model.net.params(), b.model.net.params());
        assert_eq!(a.loss_history, b.loss_history);
        let c = train(&eps, Some(&gt), &TrainConfig { seed: 4, ..small_cfg() }).unwrap();
        assert_ne!(a.model.net.params(), c.model.net.params());
    }

    #[test]
    fn sliding_predictions_match_per_window_oracle() {
        let eps = dataset(2);
        let gt = truth_from(&eps, |e, i| 3.0 + e.features[i].gaze.values()[1]);
        let cfg = TrainConfig { epochs: 2, ..small_cfg() };
        let model = train(&eps, Some(&gt), &cfg).unwrap().model;
        let ep = &eps[1];
        let series = predict_ori_series(&model, ep).unwrap();
        assert_eq!(series.len(), ep.frame_count());
        let w = cfg.window_frames;
        let oracle: Vec<f64> = (w - 1..ep.frame_count())
            .map(|end| {
                let mut window = Vec::new();
                for f in &ep.features[end + 1 - w..=end] {
                    window.extend_from_slice(&f.flatten());
                }
                model.net.forward_window(&window).unwrap().clamp(1.0, 5.0)
            })
            .collect();
        assert_eq!(&series.values()[w - 1..], &oracle[..]);
        assert!(series.values()[..w - 1].iter().all(|&v| v == oracle[0]));
    }

    #[test]
    fn gaze_only_model_ignores_hand_features() {
        let eps = dataset(4);
        let gt = truth_from(&eps, |e, i| 3.0 + e.features[i].gaze.values()[0]);
        let cfg = TrainConfig {
            feature_mask: FeatureMask::GAZE,
            epochs: 3,
            ..small_cfg()
        };
        let model = train(&eps, Some(&gt), &cfg).unwrap().model;
        assert_eq!(model.net.input_dim(), 5);
        let mut perturbed = eps[0].clone();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for f in &mut perturbed.features {
            let other = random_features(&mut rng);
            *f = FrameFeatures::new(f.gaze.clone(), other.left_zone, other.right_zone, other.left_obj, other.right_obj)
                .unwrap();
        }
        assert_eq!(
            predict_ori_series(&model, &eps[0]).unwrap(),
            predict_ori_series(&model, &perturbed).unwrap()
        );
    }

    #[test]
    fn checkpoint_reload_predicts_identically() {
        let eps = dataset(3);
        let gt = truth_from(&eps, |e, i| 2.0 + 2.0 * e.features[i].right_obj.values()[1]);
        let cfg = TrainConfig { epochs: 2, ..small_cfg() };
        let report = train(&eps, Some(&gt), &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        Checkpoint::from_report(&report, &cfg).save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded.model, report.model);
        for ep in &eps {
            let a = predict_ori_series(&report.model, ep).unwrap();
            let b = predict_ori_series(&loaded.model, ep).unwrap();
            assert_eq!(
                a.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                b.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
        }
    }

    #[test]
    fn tot_mode_uses_one_window_per_episode() {
        let eps = dataset(5);
        let cfg = TrainConfig { target: Target::Tot, epochs: 5, ..small_cfg() };
        let set = build_samples(&eps, None, &cfg).unwrap();
        assert_eq!(set.len(), 5);
        let model = train(&eps, None, &cfg).unwrap().model;
        assert!(predict_tot(&model, &eps[0]).unwrap() >= 0.0);
        assert!(predict_ori_series(&model, &eps[0]).is_err());
    }

    #[test]
    fn missing_targets_and_bad_config() {
        let eps = dataset(2);
        assert!(matches!(train(&eps, None, &small_cfg()), Err(Error::MissingTarget(_))));
        let mut no_tot = eps.clone();
        no_tot[0].tot = None;
        let cfg = TrainConfig { target: Target::Tot, ..small_cfg() };
        assert!(matches!(train(&no_tot, None, &cfg), Err(Error::MissingTarget(_))));
        assert!(train(&[], None, &cfg).is_err());
        assert!(TrainConfig { window_frames: 0, ..small_cfg() }.validate().is_err());
        assert!(TrainConfig { learning_rate: 0.0, ..small_cfg() }.validate().is_err());
    }

    #[test]
    fn evaluation_scores_every_window() {
        let eps = dataset(2);
        let gt = truth_from(&eps, |_, _| 3.0);
        let cfg = TrainConfig { epochs: 1, ..small_cfg() };
        let model = train(&eps, Some(&gt), &cfg).unwrap().model;
        let set = build_samples(&eps, Some(&gt), &cfg).unwrap();
        let (p, t) = evaluate_samples(&model, &set).unwrap();
        assert_eq!(p.len(), set.len());
        assert!(t.iter().all(|&v| v == 3.0));
        assert!(p.iter().all(|v| (1.0..=5.0).contains(v)));
    }

    #[test]
    fn target_parsing() {
        assert_eq!("ori".parse::<Target>().unwrap(), Target::Ori);
        assert_eq!("TOT".parse::<Target>().unwrap(), Target::Tot);
        assert!("speed".parse::<Target>().is_err());
    }
}
