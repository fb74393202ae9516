//! Leave-one-subject-out evaluation, feature ablations and confusion matrices
//! for externally produced classifier predictions.

use std::collections::BTreeSet;
use std::fmt;
use std::io::Read;

use log::info;
use rayon::prelude::*;
use serde::Serialize;

use crate::domain::{Episode, FeatureMask};
use crate::error::{Error, Result};
use crate::ground_truth::GroundTruth;
use crate::net::{build_samples, evaluate_mae, evaluate_samples, train, TrainConfig};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Fold {
    pub held_out_subject: String,
    pub train_ids: Vec<String>,
    pub eval_ids: Vec<String>,
    /// Positions in the dataset, parallel to the id lists.
    #[serde(skip)]
    pub train_indices: Vec<usize>,
    #[serde(skip)]
    pub eval_indices: Vec<usize>,
}

/// One fold per distinct subject, ordered by subject id.
pub fn loso_folds(episodes: &[Episode]) -> Result<Vec<Fold>> {
    let subjects: BTreeSet<&str> = episodes.iter().map(|e| e.subject_id.as_str()).collect();
    if subjects.len() < 2 {
        return Err(Error::SingleSubject(subjects.len()));
    }
    Ok(subjects
        .into_iter()
        .map(|s| {
            let (eval, train): (Vec<usize>, Vec<usize>) =
                (0..episodes.len()).partition(|&i| episodes[i].subject_id == s);
            let ids = |ix: &[usize]| ix.iter().map(|&i| episodes[i].id.clone()).collect();
            Fold {
                held_out_subject: s.to_string(),
                train_ids: ids(&train),
                eval_ids: ids(&eval),
                train_indices: train,
                eval_indices: eval,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldResult {
    pub held_out_subject: String,
    pub mae: f64,
    /// MAE of predicting the training-set mean target everywhere.
    pub baseline_mae: f64,
    pub eval_windows: usize,
}

fn subset(episodes: &[Episode], idx: &[usize]) -> Vec<Episode> {
    idx.iter().map(|&i| episodes[i].clone()).collect()
}

/// Trains on the fold's training subjects and scores the held-out subject on
/// the same window grid used for training.
pub fn evaluate_fold(
    episodes: &[Episode],
    ground_truth: Option<&GroundTruth>,
    fold: &Fold,
    cfg: &TrainConfig,
) -> Result<FoldResult> {
    let train_set = subset(episodes, &fold.train_indices);
    let eval_set = subset(episodes, &fold.eval_indices);
    let report = train(&train_set, ground_truth, cfg)?;
    let train_targets = build_samples(&train_set, ground_truth, cfg)?;
    let mean = train_targets.targets().sum::<f64>() / train_targets.len() as f64;
    let samples = build_samples(&eval_set, ground_truth, cfg)?;
    let (preds, targets) = evaluate_samples(&report.model, &samples)?;
    let baseline = vec![mean; targets.len()];
    let result = FoldResult {
        held_out_subject: fold.held_out_subject.clone(),
        mae: evaluate_mae(&preds, &targets)?,
        baseline_mae: evaluate_mae(&baseline, &targets)?,
        eval_windows: targets.len(),
    };
    info!(
        "fold {} mask {}: mae {:.4} baseline {:.4}",
        result.held_out_subject, cfg.feature_mask, result.mae, result.baseline_mae
    );
    Ok(result)
}

/// All folds, run on the current rayon pool; results are in fold order.
pub fn loso_evaluate(
    episodes: &[Episode],
    ground_truth: Option<&GroundTruth>,
    cfg: &TrainConfig,
) -> Result<Vec<FoldResult>> {
    let folds = loso_folds(episodes)?;
    folds
        .par_iter()
        .map(|f| evaluate_fold(episodes, ground_truth, f, cfg))
        .collect()
}

pub const DEFAULT_ABLATION_MASKS: [FeatureMask; 3] = [FeatureMask::GAZE, FeatureMask::HANDS, FeatureMask::ALL];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub mask: FeatureMask,
    pub fold_maes: Vec<f64>,
    pub mean_mae: f64,
}

/// MAE per feature mask and held-out subject, plus the mean-prediction
/// baseline.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationReport {
    pub subjects: Vec<String>,
    pub baseline: Vec<f64>,
    pub baseline_mean: f64,
    pub rows: Vec<AblationRow>,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// LOSO training for every mask. Mask-fold pairs run in parallel on the
/// current rayon pool and are reassembled in input order.
pub fn run_ablation(
    episodes: &[Episode],
    ground_truth: Option<&GroundTruth>,
    masks: &[FeatureMask],
    cfg: &TrainConfig,
) -> Result<AblationReport> {
    if masks.is_empty() {
        return Err(Error::Empty("ablation masks"));
    }
    if masks.iter().any(|m| m.dim() == 0) {
        return Err(Error::Config("every ablation mask needs at least one feature group".into()));
    }
    let folds = loso_folds(episodes)?;
    let jobs: Vec<(usize, usize)> = (0..masks.len())
        .flat_map(|m| (0..folds.len()).map(move |f| (m, f)))
        .collect();
    let results: Vec<FoldResult> = jobs
        .par_iter()
        .map(|&(m, f)| {
            let cfg = TrainConfig {
                feature_mask: masks[m],
                ..cfg.clone()
            };
            evaluate_fold(episodes, ground_truth, &folds[f], &cfg)
        })
        .collect::<Result<_>>()?;
    let per_mask: Vec<&[FoldResult]> = results.chunks(folds.len()).collect();
    let baseline: Vec<f64> = per_mask[0].iter().map(|r| r.baseline_mae).collect();
    Ok(AblationReport {
        subjects: folds.iter().map(|f| f.held_out_subject.clone()).collect(),
        baseline_mean: mean(&baseline),
        baseline,
        rows: masks
            .iter()
            .zip(per_mask)
            .map(|(&mask, rs)| {
                let fold_maes: Vec<f64> = rs.iter().map(|r| r.mae).collect();
                AblationRow {
                    mask,
                    mean_mae: mean(&fold_maes),
                    fold_maes,
                }
            })
            .collect(),
    })
}

impl AblationReport {
    pub fn row(&self, mask: FeatureMask) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.mask == mask)
    }

    /// `condition,<subject>...,mean`, one line per mask after the baseline.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("condition");
        for s in &self.subjects {
            out.push(',');
            out.push_str(s);
        }
        out.push_str(",mean\n");
        let mut line = |name: String, vals: &[f64], m: f64| {
            out.push_str(&name);
            for v in vals {
                out.push_str(&format!(",{v}"));
            }
            out.push_str(&format!(",{m}\n"));
        };
        line("baseline".into(), &self.baseline, self.baseline_mean);
        for r in &self.rows {
            line(r.mask.to_string(), &r.fold_maes, r.mean_mae);
        }
        out
    }
}

impl fmt::Display for AblationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<String> = std::iter::once("baseline".to_string())
            .chain(self.rows.iter().map(|r| r.mask.to_string()))
            .collect();
        let w = names.iter().map(|n| n.len()).max().unwrap_or(0).max(9);
        write!(f, "{:<w$}", "condition")?;
        for s in &self.subjects {
            write!(f, "  {s:>8}")?;
        }
        writeln!(f, "  {:>8}", "mean")?;
        let rows = std::iter::once((&self.baseline, self.baseline_mean))
            .chain(self.rows.iter().map(|r| (&r.fold_maes, r.mean_mae)));
        for (name, (vals, m)) in names.iter().zip(rows) {
            write!(f, "{name:<w$}")?;
            for v in vals {
                write!(f, "  {v:>8.4}")?;
            }
            writeln!(f, "  {m:>8.4}")?;
        }
        Ok(())
    }
}

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes()).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn accuracy(&self) -> f64 {
        self.trace() as f64 / self.total() as f64
    }

    /// Per-class recall; `None` for classes that never occur.
    pub fn recall(&self) -> Vec<Option<f64>> {
        self.counts
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let n: u64 = r.iter().sum();
                (n > 0).then(|| r[i] as f64 / n as f64)
            })
            .collect()
    }

    pub fn to_csv(&self, names: &[String]) -> String {
        let mut out = String::from("true\\predicted");
        for n in names {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for (n, row) in names.iter().zip(&self.counts) {
            out.push_str(n);
            for c in row {
                out.push_str(&format!(",{c}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn to_table(&self, names: &[String]) -> String {
        let w = names.iter().map(|n| n.len()).max().unwrap_or(1).max(6);
        let mut out = format!("{:<w$}", "");
        for n in names {
            out.push_str(&format!("  {n:>w$}"));
        }
        out.push_str(&format!("  {:>w$}\n", "recall"));
        for ((n, row), rec) in names.iter().zip(&self.counts).zip(self.recall()) {
            out.push_str(&format!("{n:<w$}"));
            for c in row {
                out.push_str(&format!("  {c:>w$}"));
            }
            match rec {
                Some(r) => out.push_str(&format!("  {:>w$.2}%\n", 100.0 * r)),
                None => out.push_str(&format!("  {:>w$}\n", "-")),
            }
        }
        out.push_str(&format!(
            "accuracy {}/{} = {:.2}%\n",
            self.trace(),
            self.total(),
            100.0 * self.accuracy()
        ));
        out
    }
}

pub fn confusion_and_accuracy(truth: &[usize], predicted: &[usize], k: usize) -> Result<(ConfusionMatrix, f64)> {
    if truth.len() != predicted.len() {
        return Err(Error::LengthMismatch {
            left: truth.len(),
            right: predicted.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::Empty("predictions"));
    }
    let mut counts = vec![vec![0u64; k]; k];
    for (&t, &p) in truth.iter().zip(predicted) {
        if t >= k || p >= k {
            return Err(Error::Config(format!("class index {} out of range for {k} classes", t.max(p))));
        }
        counts[t][p] += 1;
    }
    let cm = ConfusionMatrix { counts };
    let acc = cm.accuracy();
    Ok((cm, acc))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredictionPair {
    pub sample_id: String,
    pub truth: usize,
    pub predicted: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Predictions {
    pub classes: Vec<String>,
    pub pairs: Vec<PredictionPair>,
}

impl Predictions {
    pub fn confusion(&self) -> Result<(ConfusionMatrix, f64)> {
        let t: Vec<usize> = self.pairs.iter().map(|p| p.truth).collect();
        let p: Vec<usize> = self.pairs.iter().map(|p| p.predicted).collect();
        confusion_and_accuracy(&t, &p, self.classes.len())
    }
}

const CLASSES_PREFIX: &str = "#classes=";

/// Reads `sample_id,true_class,predicted_class` rows.
///
/// An optional first line `#classes=a,b,c` declares the class names; cells
/// may then hold names or indices. Without it cells must be indices below
/// `k`, or below one more than the largest index seen when `k` is `None`.
pub fn ingest_predictions<R: Read>(mut reader: R, k: Option<usize>) -> Result<Predictions> {
    let mut text = String::new();
    reader
        .read_to_string(&mut text)
        .map_err(|e| Error::io("<predictions>", e))?;
    let (declared, body, offset) = match text.strip_prefix(CLASSES_PREFIX) {
        Some(rest) => {
            let (first, body) = rest.split_once('\n').unwrap_or((rest, ""));
            let names: Vec<String> = first.trim_end_matches('\r').split(',').map(|s| s.trim().to_string()).collect();
            if names.iter().any(|n| n.is_empty()) || names.iter().collect::<BTreeSet<_>>().len() != names.len() {
                return Err(Error::Malformed {
                    line: 1,
                    message: "class declaration needs distinct nonempty names".into(),
                });
            }
            (Some(names), body, 1u64)
        }
        None => (None, text.as_str(), 0u64),
    };
    let limit = declared.as_ref().map(|n| n.len()).or(k);
    if let (Some(names), Some(k)) = (&declared, k) {
        if names.len() != k {
            return Err(Error::Malformed {
                line: 1,
                message: format!("{} classes declared, {k} expected", names.len()),
            });
        }
    }

    let mut csv = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(body.as_bytes());
    let header = csv.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != ["sample_id", "true_class", "predicted_class"] {
        return Err(Error::Malformed {
            line: offset + 1,
            message: format!("expected header sample_id,true_class,predicted_class, got {}", header.iter().collect::<Vec<_>>().join(",")),
        });
    }
    let mut pairs = Vec::new();
    for rec in csv.records() {
        let rec = rec?;
        let line = offset + rec.position().map(|p| p.line()).unwrap_or(0);
        let bad = |message: String| Error::Malformed { line, message };
        if rec.len() != 3 {
            return Err(bad(format!("expected 3 fields, found {}", rec.len())));
        }
        let parse = |cell: &str| -> Result<usize> {
            let idx = match cell.parse::<usize>() {
                Ok(i) => i,
                Err(_) => match &declared {
                    Some(names) => names
                        .iter()
                        .position(|n| n == cell)
                        .ok_or_else(|| bad(format!("unknown class {cell:?}")))?,
                    None => return Err(bad(format!("{cell:?} is not a class index"))),
                },
            };
            match limit {
                Some(k) if idx >= k => Err(bad(format!("class index {idx} out of range for {k} classes"))),
                _ => Ok(idx),
            }
        };
        pairs.push(PredictionPair {
            sample_id: rec[0].to_string(),
            truth: parse(&rec[1])?,
            predicted: parse(&rec[2])?,
        });
    }
    let classes = match declared {
        Some(names) => names,
        None => {
            let k = limit.unwrap_or_else(|| pairs.iter().map(|p| p.truth.max(p.predicted) + 1).max().unwrap_or(0));
            (0..k).map(|i| i.to_string()).collect()
        }
    };
    Ok(Predictions { classes, pairs })
}
