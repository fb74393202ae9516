//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.
//!
//! Run alone with `cargo test -p readywatch --test acceptance`.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use readywatch::domain::{EgoSample, FeatureMask, Ndrt};
use readywatch::eval::{ingest_predictions, loso_evaluate, run_ablation};
use readywatch::ground_truth::{fuse_z, normalize_rater, GroundTruth};
use readywatch::metrics::{
    aggregate_by_ndrt, correlation_table, delta_v, delta_x, ori_pre_tor, pearson, quality_metrics,
    MetricsRow,
};
use readywatch::net::{gradient_check, TrainConfig};
use readywatch::synth::{mix_seed, sample_dataset, sample_episode, subject_id, GeneratorConfig};
use readywatch::Error;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

/// Training settings for the LOSO criteria; sized for a single laptop core.
fn loso_config() -> TrainConfig {
    TrainConfig {
        hidden_dim: 16,
        learning_rate: 3e-3,
        epochs: 5,
        sample_stride: 30,
        seed: 11,
        ..TrainConfig::default()
    }
}

fn gradient_oracle() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for seed in 1..=5 {
        match gradient_check(seed, 21, 16, 60, 1e-5) {
            Ok(r) => worst = worst.max(r.max_relative_error),
            Err(e) => return outcome(false, e.to_string()),
        }
    }
    let took = start.elapsed();
    outcome(
        worst < 1e-4 && took < Duration::from_secs(30),
        format!("5 seeds, H=16 D=21 T=60: max relative error {worst:.3e} (< 1e-4), {took:.1?} (< 30s)"),
    )
}

fn learnability() -> Outcome {
    let start = Instant::now();
    let cfg = GeneratorConfig::default();
    let run = || -> readywatch::Result<_> {
        let ds = sample_dataset(&cfg, 3, 12, 2024)?;
        let gt = GroundTruth::from_episodes(&ds)?;
        Ok((ds.len(), loso_evaluate(&ds, Some(&gt), &loso_config())?))
    };
    let (n, folds) = match run() {
        Ok(v) => v,
        Err(e) => return outcome(false, e.to_string()),
    };
    let took = start.elapsed();
    let mut pass = took < Duration::from_secs(600);
    let mut detail = format!("{n} episodes;");
    for f in &folds {
        let gain = 1.0 - f.mae / f.baseline_mae;
        pass &= gain >= 0.30;
        detail.push_str(&format!(
            " {}: mae {:.3} vs baseline {:.3} ({:.0}% better);",
            f.held_out_subject,
            f.mae,
            f.baseline_mae,
            100.0 * gain
        ));
    }
    detail.push_str(&format!(" {took:.1?} (< 600s)"));
    outcome(pass, detail)
}

fn ablation_ordering() -> Outcome {
    let start = Instant::now();
    let cfg = GeneratorConfig {
        readiness_gaze_weight: 0.85,
        readiness_hand_weight: 0.15,
        ..GeneratorConfig::default()
    };
    let run = || -> readywatch::Result<_> {
        let ds = sample_dataset(&cfg, 3, 12, 2025)?;
        let gt = GroundTruth::from_episodes(&ds)?;
        run_ablation(&ds, Some(&gt), &[FeatureMask::GAZE, FeatureMask::HANDS], &loso_config())
    };
    let report = match run() {
        Ok(r) => r,
        Err(e) => return outcome(false, e.to_string()),
    };
    let took = start.elapsed();
    let gaze = report.rows[0].mean_mae;
    let hands = report.rows[1].mean_mae;
    outcome(
        gaze < hands && took < Duration::from_secs(600),
        format!("gaze-weighted readiness: gaze-only mae {gaze:.4} < hand-only mae {hands:.4}; {took:.1?}"),
    )
}

/// Brute-force reference: reference sample is the last one (in file order)
/// among those with the greatest time not after the request.
fn scan(ego: &[EgoSample], t_tor: f64, h: f64) -> Option<(f64, f64)> {
    let t_ref = ego.iter().map(|s| s.t).filter(|&t| t <= t_tor).fold(f64::NAN, f64::max);
    if t_ref.is_nan() {
        return None;
    }
    let reference = ego.iter().rev().find(|s| s.t == t_ref)?;
    if ego.iter().all(|s| s.t < t_tor + h) {
        return None;
    }
    let window: Vec<&EgoSample> = ego.iter().filter(|s| s.t > t_tor && s.t <= t_tor + h).collect();
    if window.is_empty() {
        return None;
    }
    let mut dv: f64 = 0.0;
    let mut dx: f64 = 0.0;
    for s in window {
        dv = dv.max((s.speed - reference.speed).abs());
        dx = dx.max(s.lateral_offset.abs());
    }
    Some((dv, dx))
}

fn metric_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    let mut covered = 0;
    for case in 0..1000 {
        let n = rng.random_range(1..400);
        let rate = [1.0, 10.0, 25.0, 30.0][rng.random_range(0..4)];
        let mut t = rng.random_range(0.0..3.0);
        let ego: Vec<EgoSample> = (0..n)
            .map(|_| {
                // occasional repeated timestamps
                if rng.random::<f64>() > 0.05 {
                    t += rng.random_range(0.2..1.8) / rate;
                }
                EgoSample {
                    t,
                    speed: rng.random_range(0.0..35.0),
                    lateral_offset: rng.random_range(-2.0..2.0),
                }
            })
            .collect();
        let t_tor = if case % 3 == 0 {
            // exactly on a sample
            ego[rng.random_range(0..n)].t
        } else {
            rng.random_range(0.0..t.max(0.1))
        };
        let got = delta_v(&ego, t_tor, 5.0).and_then(|v| Ok((v, delta_x(&ego, t_tor, 5.0)?)));
        match (got, scan(&ego, t_tor, 5.0)) {
            (Ok((v, x)), Some((ov, ox))) => {
                covered += 1;
                worst = worst.max((v - ov).abs()).max((x - ox).abs());
            }
            (Err(Error::InsufficientCoverage { .. }), None) => {}
            (got, want) => return outcome(false, format!("case {case}: {got:?} vs oracle {want:?}")),
        }
    }
    outcome(
        worst <= 1e-12 && covered >= 300,
        format!("1000 trajectories ({covered} with full coverage): max abs difference {worst:e} (<= 1e-12)"),
    )
}

/// Five hundred episodes cycling through tasks and three subjects.
fn correlation_dataset(cfg: &GeneratorConfig, seed: u64) -> readywatch::Result<Vec<readywatch::domain::Episode>> {
    let labels = cfg.ndrts.labels();
    let mut eps = Vec::with_capacity(500);
    for i in 0..500u64 {
        let ndrt = &labels[i as usize % labels.len()];
        eps.push(sample_episode(cfg, ndrt, &subject_id(i as usize % 3), mix_seed(seed, i))?);
    }
    for ep in &mut eps {
        ep.rater_sheets = Some(readywatch::synth::sample_rater_sheets(cfg, ep, cfg.n_raters, seed)?);
    }
    Ok(eps)
}

fn correlation_signs() -> Outcome {
    let cfg = GeneratorConfig::default();
    let run = || -> readywatch::Result<_> {
        let eps = correlation_dataset(&cfg, 77)?;
        let gt = GroundTruth::from_episodes(&eps)?;
        let mut rows = Vec::new();
        for ep in &eps {
            let q = quality_metrics(ep, 5.0)?;
            let series = gt.get(&ep.id).expect("every episode is rated");
            rows.push(MetricsRow {
                episode_id: q.episode_id,
                ndrt: q.ndrt,
                delta_v_mps: q.delta_v,
                delta_x_m: q.delta_x,
                ori_pre: Some(ori_pre_tor(series, ep)?),
                tot_s: ep.tot,
            });
        }
        correlation_table(&rows)
    };
    let t = match run() {
        Ok(t) => t,
        Err(e) => return outcome(false, e.to_string()),
    };
    let neg = |r: Option<f64>| r.is_some_and(|r| r < 0.0);
    let pos = |r: Option<f64>| r.is_some_and(|r| r > 0.0);
    outcome(
        t.n == 500 && neg(t.ori_delta_v) && neg(t.ori_delta_x) && pos(t.tot_delta_v),
        format!(
            "n={}: r(ORI,dv)={:?} r(ORI,dx)={:?} r(TOT,dv)={:?} (signs -, -, +)",
            t.n, t.ori_delta_v, t.ori_delta_x, t.tot_delta_v
        ),
    )
}

fn ndrt_ordering() -> Outcome {
    let cfg = GeneratorConfig::default();
    let attentive = Ndrt::new("Attentive");
    let closed = Ndrt::new("EyesClosed");
    let mut held = 0;
    for master in 0..20u64 {
        let mut metrics = Vec::new();
        for (t, ndrt) in cfg.ndrts.labels().iter().enumerate() {
            for i in 0..200u64 {
                let seed = mix_seed(mix_seed(master, t as u64), i);
                let ep = sample_episode(&cfg, ndrt, &subject_id(i as usize % 3), seed).unwrap();
                metrics.push(quality_metrics(&ep, 5.0).unwrap());
            }
        }
        let means = aggregate_by_ndrt(&metrics);
        let min_v = means.iter().min_by(|a, b| a.mean_delta_v_mps.total_cmp(&b.mean_delta_v_mps)).unwrap();
        let max_x = means.iter().max_by(|a, b| a.mean_delta_x_m.total_cmp(&b.mean_delta_x_m)).unwrap();
        if min_v.ndrt == attentive && max_x.ndrt == closed {
            held += 1;
        }
    }
    outcome(
        held >= 19,
        format!("min mean dv = Attentive and max mean dx = EyesClosed in {held}/20 master seeds (>= 95%)"),
    )
}

fn rater_invariance() -> Outcome {
    let cfg = GeneratorConfig::default();
    let eps = match sample_dataset(&cfg, 3, 2, 9) {
        Ok(e) => e,
        Err(e) => return outcome(false, e.to_string()),
    };
    let raw = |rater: usize| -> Vec<f64> {
        eps.iter()
            .flat_map(|e| e.rater_sheets.as_ref().unwrap()[rater].scores.iter().map(|&s| f64::from(s)))
            .collect()
    };
    let scores: Vec<Vec<f64>> = (0..cfg.n_raters).map(raw).collect();
    let fused = |scores: &[Vec<f64>]| {
        let profiles: Vec<_> = scores.iter().map(|s| normalize_rater(s).unwrap()).collect();
        fuse_z(&profiles).unwrap()
    };
    let before = fused(&scores);
    let mut transformed = scores.clone();
    for s in &mut transformed[1] {
        *s = 2.0 * *s + 1.0;
    }
    let after = fused(&transformed);
    let worst = before.iter().zip(&after).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    outcome(
        worst < 1e-9,
        format!("{} snippets, rater2 mapped s -> 2s+1: max change in fused z {worst:e} (< 1e-9)", before.len()),
    )
}

/// Textbook two-pass Pearson for the oracle.
fn oracle_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    sxy / (sxx * syy).sqrt()
}

fn pearson_exactness() -> Outcome {
    let cases: [(&[f64], &[f64], f64); 3] = [
        (&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0], 1.0),
        (&[1.0, 2.0, 3.0], &[6.0, 4.0, 2.0], -1.0),
        (&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0], 0.8),
    ];
    let mut pass = true;
    let mut detail = String::new();
    for (x, y, expected) in cases {
        let oracle = oracle_pearson(x, y);
        let got = pearson(x, y);
        let ok = matches!(got, Ok(r) if (r - expected).abs() <= 1e-12 && (r - oracle).abs() <= 1e-12);
        pass &= ok;
        detail.push_str(&format!("{got:?} (expected {expected}); "));
    }
    let zero = pearson(&[1.0, 2.0, 3.0], &[5.0, 5.0, 5.0]);
    let zero_ok = matches!(zero, Err(Error::ZeroVariance(_)));
    let rows: Vec<MetricsRow> = (0..4)
        .map(|i| MetricsRow {
            episode_id: i.to_string(),
            ndrt: Ndrt::new("Texting"),
            delta_v_mps: i as f64,
            delta_x_m: 1.0,
            ori_pre: Some(5.0 - i as f64),
            tot_s: Some(2.0),
        })
        .collect();
    let table_ok = matches!(
        correlation_table(&rows),
        Ok(t) if t.ori_delta_x.is_none() && t.tot_delta_v.is_none() && t.ori_delta_v.is_some_and(|r| (r + 1.0).abs() <= 1e-12)
    );
    detail.push_str(&format!("zero variance -> {zero:?}, table cells None"));
    outcome(pass && zero_ok && table_ok, detail)
}

fn cli(bin: &str, dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(bin)
        .current_dir(dir)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr).trim()))
    }
}

fn cli_determinism() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_readywatch");
    let root = tempfile::tempdir().unwrap();
    let train_flags = ["--epochs", "2", "--hidden", "6", "--stride", "60", "--seed", "5"];
    let outputs = [
        "d.jsonl",
        "d.jsonl.manifest.json",
        "model.json",
        "model.json.manifest.json",
        "ablation.csv",
        "ablation.csv.txt",
        "ablation.csv.manifest.json",
    ];
    let run = || -> Result<(), String> {
        for (dir, jobs) in [("first", "1"), ("second", "1"), ("parallel", "3")] {
            let d = root.path().join(dir);
            std::fs::create_dir(&d).map_err(|e| e.to_string())?;
            cli(bin, &d, &["--jobs", jobs, "synth", "--seed", "7", "--per-task", "1", "--out", "d.jsonl"])?;
            let mut train = vec!["--jobs", jobs, "train", "--in", "d.jsonl", "--out", "model.json"];
            train.extend(train_flags);
            cli(bin, &d, &train)?;
            let mut ablate = vec!["--jobs", jobs, "ablate", "--in", "d.jsonl", "--out", "ablation.csv"];
            ablate.extend(train_flags);
            cli(bin, &d, &ablate)?;
        }
        let read = |dir: &str, name: &str| std::fs::read(root.path().join(dir).join(name)).map_err(|e| e.to_string());
        for name in outputs {
            let first = read("first", name)?;
            if first.is_empty() || first != read("second", name)? {
                return Err(format!("{name} differs between consecutive runs"));
            }
            // manifests record the argument list, which includes --jobs
            if !name.ends_with("manifest.json") && first != read("parallel", name)? {
                return Err(format!("{name} differs under --jobs 3"));
            }
        }
        Ok(())
    };
    match run() {
        Ok(()) => outcome(
            true,
            "synth, train and ablate outputs and manifests byte-identical across two runs; outputs identical with --jobs 3",
        ),
        Err(e) => outcome(false, e),
    }
}

fn confusion_utilities() -> Outcome {
    let names = ["Forward", "Rearview", "Lap", "Speedometer", "Infotainment"];
    // (true, predicted) pairs, counted by hand below
    let pairs = [
        (0, 0), (0, 0), (0, 0), (0, 1), (0, 4),
        (1, 1), (1, 1), (1, 0),
        (2, 2), (2, 2), (2, 2), (2, 2), (2, 3),
        (3, 3), (3, 0),
        (4, 4), (4, 4), (4, 2),
    ];
    let mut file = format!("#classes={}\nsample_id,true_class,predicted_class\n", names.join(","));
    for (i, (t, p)) in pairs.iter().enumerate() {
        // mix names and indices
        let cell = |c: usize| if i % 2 == 0 { names[c].to_string() } else { c.to_string() };
        file.push_str(&format!("f{i},{},{}\n", cell(*t), cell(*p)));
    }
    let preds = match ingest_predictions(file.as_bytes(), Some(5)) {
        Ok(p) => p,
        Err(e) => return outcome(false, e.to_string()),
    };
    let (cm, acc) = preds.confusion().unwrap();
    let row_sums = [5, 3, 5, 2, 3];
    let trace = 3 + 2 + 4 + 1 + 2;
    let pass = preds.pairs.len() == 18
        && cm.row_sums() == row_sums
        && cm.trace() == trace
        && cm.total() == 18
        && acc == 12.0 / 18.0
        && cm.counts[0] == [3, 1, 0, 0, 1]
        && cm.counts[4] == [0, 0, 1, 0, 2];
    outcome(
        pass,
        format!("18 rows, 5 classes: row sums {:?}, trace {}, accuracy {:.4}", cm.row_sums(), cm.trace(), acc),
    )
}

fn main() {
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: [Criterion; 10] = [
        ("gradient oracle", gradient_oracle),
        ("LOSO learnability", learnability),
        ("ablation ordering", ablation_ordering),
        ("metric oracle", metric_oracle),
        ("correlation signs", correlation_signs),
        ("task ordering", ndrt_ordering),
        ("rater-fusion invariance", rater_invariance),
        ("pearson exactness", pearson_exactness),
        ("CLI determinism", cli_determinism),
        ("confusion utilities", confusion_utilities),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let o = check();
        if !o.pass {
            failed += 1;
        }
        println!(
            "{} {:>2} {name}: {} [{:.1?}]",
            if o.pass { "PASS" } else { "FAIL" },
            i + 1,
            o.detail,
            start.elapsed()
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
