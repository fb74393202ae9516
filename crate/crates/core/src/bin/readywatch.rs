use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use readywatch::domain::{Episode, FeatureMask, MPH_TO_MPS};
use readywatch::eval::{ingest_predictions, run_ablation, DEFAULT_ABLATION_MASKS};
use readywatch::ground_truth::{attach_sheets, read_rater_csv, GroundTruth};
use readywatch::io::{
    load_episodes, read_metrics_csv, save_episodes, write_correlation_csv, write_metrics_csv,
    write_ndrt_means_csv, write_text, RunManifest,
};
use readywatch::metrics::{
    aggregate_by_ndrt, correlation_table, halted_after_tor, ori_pre_tor, quality_metrics, MetricsRow,
    DEFAULT_HORIZON_S,
};
use readywatch::net::{
    gradient_check, predict_ori_series, predict_tot, train, Checkpoint, Target, TrainConfig,
};
use readywatch::synth::{sample_dataset, GeneratorConfig};
use readywatch::{Error, Result, SCHEMA_VERSION};

#[derive(Parser)]
#[command(name = "readywatch", version, about = "Driver takeover readiness toolkit")]
struct Cli {
    /// Worker threads for episode and fold parallelism. Outputs do not depend on it.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic episode dataset.
    Synth(SynthArgs),
    /// Train an ORI or TOT regressor.
    Train(TrainArgs),
    /// Run a trained model over episodes.
    Predict(PredictArgs),
    /// Post-takeover quality metrics per episode.
    Metrics(MetricsArgs),
    /// Correlation table from a metrics CSV.
    Correlate(CorrelateArgs),
    /// Leave-one-subject-out feature ablation.
    Ablate(AblateArgs),
    /// Compare analytic gradients with finite differences.
    Gradcheck(GradcheckArgs),
    /// Confusion matrix and accuracy of ingested classifier predictions.
    Confusion(ConfusionArgs),
    /// Replay a run from its manifest.
    Rerun(RerunArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Generator overrides (TOML key-value file).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 3)]
    subjects: usize,
    /// Episodes per subject and task.
    #[arg(long, default_value_t = 12)]
    per_task: usize,
}

#[derive(Args, Clone)]
struct TrainingFlags {
    #[arg(long)]
    seed: Option<u64>,
    /// Training config (TOML); flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    target: Option<TargetArg>,
    /// Input window length in seconds.
    #[arg(long)]
    window: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Frames between consecutive ORI training windows.
    #[arg(long)]
    stride: Option<usize>,
    /// Rater sheets CSV to attach before building ground truth.
    #[arg(long)]
    raters: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Feature groups fed to the model, e.g. gaze, hands, gaze+left_zone.
    #[arg(long)]
    mask: Option<FeatureMask>,
    #[command(flatten)]
    flags: TrainingFlags,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MetricsArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_HORIZON_S)]
    horizon: f64,
    /// Unit of ego speeds in the input.
    #[arg(long, value_enum, default_value_t = Units::Mps)]
    units: Units,
    /// ORI model for the pre-request readiness column; rater ground truth is used otherwise.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Drop episodes whose vehicle comes to a halt after the request.
    #[arg(long)]
    exclude_halted: bool,
    /// Also write per-task mean metrics here.
    #[arg(long)]
    means: Option<PathBuf>,
    #[arg(long)]
    raters: Option<PathBuf>,
}

#[derive(Args)]
struct CorrelateArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// CSV report; a text table goes next to it with a .txt suffix.
    #[arg(long)]
    out: PathBuf,
    /// Feature masks to compare (repeatable); default gaze, hands, gaze+hands.
    #[arg(long = "mask")]
    masks: Vec<FeatureMask>,
    #[command(flatten)]
    flags: TrainingFlags,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Number of consecutive seeds checked.
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    #[arg(long, default_value_t = 16)]
    hidden: usize,
    #[arg(long, default_value_t = 21)]
    input_dim: usize,
    #[arg(long, default_value_t = 60)]
    frames: usize,
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
}

#[derive(Args)]
struct ConfusionArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Matrix CSV; a text table goes next to it with a .txt suffix.
    #[arg(long)]
    out: PathBuf,
    /// Class count when the file declares no class names.
    #[arg(long)]
    classes: Option<usize>,
}

#[derive(Args)]
struct RerunArgs {
    manifest: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum TargetArg {
    Ori,
    Tot,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Units {
    Mps,
    Mph,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("READYWATCH_LOG", "warn")).init();
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let rendered = e.to_string();
            let first = rendered.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error code=2 kind=usage msg={first:?}");
            return ExitCode::from(2);
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.jobs.max(1)).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error code=4 kind=validation msg={:?}", e.to_string());
            return ExitCode::from(4);
        }
    };
    match pool.install(|| run(cli.command, &argv[1..])) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (code, kind) = if e.is_io() { (3, "io") } else { (4, "validation") };
            eprintln!("error code={code} kind={kind} msg={:?}", e.to_string());
            ExitCode::from(code)
        }
    }
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

fn manifest(
    command: &str,
    args: &[String],
    config: Option<&Path>,
    seed: Option<u64>,
    inputs: &[&Path],
    outputs: &[&Path],
) -> Result<()> {
    let m = RunManifest {
        command: command.into(),
        args: args.to_vec(),
        config: config.map(display),
        seed,
        inputs: inputs.iter().map(|p| display(p)).collect(),
        outputs: outputs.iter().map(|p| display(p)).collect(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        schema_version: SCHEMA_VERSION.into(),
    };
    m.save(&RunManifest::path_for(outputs[0]))
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent().filter(|p| !p.as_os_str().is_empty()) {
        Some(dir) => fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)),
        None => Ok(()),
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(suffix);
    path.with_file_name(name)
}

fn load_dataset(input: &Path, raters: Option<&Path>) -> Result<Vec<Episode>> {
    let mut episodes = load_episodes(input)?;
    if let Some(path) = raters {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        attach_sheets(&mut episodes, read_rater_csv(file)?)?;
    }
    info!("loaded {} episodes from {}", episodes.len(), input.display());
    Ok(episodes)
}

fn frame_rate(episodes: &[Episode]) -> Result<f64> {
    let first = episodes.first().ok_or(Error::Empty("episode file"))?.frame_rate_hz;
    if let Some(ep) = episodes.iter().find(|e| e.frame_rate_hz != first) {
        return Err(Error::InvalidEpisode {
            id: ep.id.clone(),
            reason: format!("frame rate {} differs from {first}", ep.frame_rate_hz),
        });
    }
    Ok(first)
}

fn training_config(flags: &TrainingFlags, episodes: &[Episode]) -> Result<TrainConfig> {
    let mut cfg = match &flags.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?
        }
        None => TrainConfig::default(),
    };
    let fr = frame_rate(episodes)?;
    if flags.config.is_none() || flags.window.is_some() {
        let seconds = flags.window.unwrap_or(2.0);
        if !(seconds > 0.0) {
            return Err(Error::Config("--window must be positive".into()));
        }
        cfg.window_frames = (seconds * fr).round().max(1.0) as usize;
    }
    if let Some(v) = flags.seed {
        cfg.seed = v;
    }
    if let Some(v) = flags.target {
        cfg.target = match v {
            TargetArg::Ori => Target::Ori,
            TargetArg::Tot => Target::Tot,
        };
    }
    if let Some(v) = flags.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = flags.hidden {
        cfg.hidden_dim = v;
    }
    if let Some(v) = flags.learning_rate {
        cfg.learning_rate = v;
    }
    if let Some(v) = flags.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = flags.stride {
        cfg.sample_stride = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn ground_truth_for(episodes: &[Episode], target: Target) -> Result<Option<GroundTruth>> {
    match target {
        Target::Ori => GroundTruth::from_episodes(episodes).map(Some),
        Target::Tot => Ok(None),
    }
}

fn run(command: Command, args: &[String]) -> Result<()> {
    match command {
        Command::Synth(a) => {
            let cfg = match &a.config {
                Some(p) => GeneratorConfig::from_file(p)?,
                None => GeneratorConfig::default(),
            };
            let episodes = sample_dataset(&cfg, a.subjects, a.per_task, a.seed)?;
            ensure_parent(&a.out)?;
            save_episodes(&a.out, &episodes)?;
            println!("wrote {} episodes to {}", episodes.len(), a.out.display());
            manifest("synth", args, a.config.as_deref(), Some(a.seed), &[], &[&a.out])
        }
        Command::Train(a) => {
            let episodes = load_dataset(&a.input, a.flags.raters.as_deref())?;
            let mut cfg = training_config(&a.flags, &episodes)?;
            if let Some(mask) = a.mask {
                cfg.feature_mask = mask;
            }
            let gt = ground_truth_for(&episodes, cfg.target)?;
            let report = train(&episodes, gt.as_ref(), &cfg)?;
            ensure_parent(&a.out)?;
            Checkpoint::from_report(&report, &cfg).save(&a.out)?;
            println!(
                "trained on {} windows: mse {:.6} -> {:.6}",
                report.samples,
                report.initial_loss,
                report.loss_history.last().copied().unwrap_or(report.initial_loss)
            );
            let mut inputs = vec![a.input.as_path()];
            inputs.extend(a.flags.raters.as_deref());
            manifest("train", args, a.flags.config.as_deref(), Some(cfg.seed), &inputs, &[&a.out])
        }
        Command::Predict(a) => {
            let ckpt = Checkpoint::load(&a.model)?;
            let episodes = load_episodes(&a.input)?;
            let mut out = String::new();
            match ckpt.model.target {
                Target::Ori => {
                    out.push_str("episode_id,frame,t_s,ori\n");
                    for ep in &episodes {
                        let series = predict_ori_series(&ckpt.model, ep)?;
                        for (i, v) in series.values().iter().enumerate() {
                            out.push_str(&format!("{},{i},{},{v}\n", ep.id, i as f64 / ep.frame_rate_hz));
                        }
                    }
                }
                Target::Tot => {
                    out.push_str("episode_id,tot_s\n");
                    for ep in &episodes {
                        out.push_str(&format!("{},{}\n", ep.id, predict_tot(&ckpt.model, ep)?));
                    }
                }
            }
            write_text(&a.out, &out)?;
            manifest("predict", args, None, None, &[&a.model, &a.input], &[&a.out])
        }
        Command::Metrics(a) => {
            let mut episodes = load_dataset(&a.input, a.raters.as_deref())?;
            if a.units == Units::Mph {
                for ep in &mut episodes {
                    for s in &mut ep.ego {
                        s.speed *= MPH_TO_MPS;
                    }
                }
            }
            let model = a.model.as_deref().map(Checkpoint::load).transpose()?;
            let gt = if model.is_none() && episodes.iter().any(|e| e.rater_sheets.is_some()) {
                Some(GroundTruth::from_episodes(&episodes)?)
            } else {
                None
            };
            let mut rows = Vec::new();
            let mut kept = Vec::new();
            for ep in &episodes {
                if a.exclude_halted && halted_after_tor(&ep.ego, ep.t_tor, a.horizon)? {
                    info!("excluding halted episode {}", ep.id);
                    continue;
                }
                let q = quality_metrics(ep, a.horizon)?;
                let ori_pre = match (&model, &gt) {
                    (Some(m), _) => Some(ori_pre_tor(&predict_ori_series(&m.model, ep)?, ep)?),
                    (None, Some(gt)) => gt.get(&ep.id).map(|s| ori_pre_tor(s, ep)).transpose()?,
                    (None, None) => None,
                };
                rows.push(MetricsRow {
                    episode_id: q.episode_id.clone(),
                    ndrt: q.ndrt.clone(),
                    delta_v_mps: q.delta_v,
                    delta_x_m: q.delta_x,
                    ori_pre,
                    tot_s: ep.tot,
                });
                kept.push(q);
            }
            ensure_parent(&a.out)?;
            let mut buf = Vec::new();
            write_metrics_csv(&mut buf, &rows)?;
            fs::write(&a.out, buf).map_err(|e| Error::io(&a.out, e))?;
            let mut outputs = vec![a.out.as_path()];
            if let Some(path) = &a.means {
                let mut buf = Vec::new();
                write_ndrt_means_csv(&mut buf, &aggregate_by_ndrt(&kept))?;
                ensure_parent(path)?;
                fs::write(path, buf).map_err(|e| Error::io(path, e))?;
                outputs.push(path);
            }
            println!("wrote metrics for {} episodes", rows.len());
            let mut inputs = vec![a.input.as_path()];
            inputs.extend(a.model.as_deref());
            inputs.extend(a.raters.as_deref());
            manifest("metrics", args, None, None, &inputs, &outputs)
        }
        Command::Correlate(a) => {
            let file = fs::File::open(&a.input).map_err(|e| Error::io(&a.input, e))?;
            let rows = read_metrics_csv(file)?;
            let table = correlation_table(&rows)?;
            let mut buf = Vec::new();
            write_correlation_csv(&mut buf, &table)?;
            ensure_parent(&a.out)?;
            fs::write(&a.out, &buf).map_err(|e| Error::io(&a.out, e))?;
            print!("n={}\n{}", table.n, String::from_utf8_lossy(&buf));
            manifest("correlate", args, None, None, &[&a.input], &[&a.out])
        }
        Command::Ablate(a) => {
            let episodes = load_dataset(&a.input, a.flags.raters.as_deref())?;
            let cfg = training_config(&a.flags, &episodes)?;
            let gt = ground_truth_for(&episodes, cfg.target)?;
            let masks = if a.masks.is_empty() {
                DEFAULT_ABLATION_MASKS.to_vec()
            } else {
                a.masks.clone()
            };
            let report = run_ablation(&episodes, gt.as_ref(), &masks, &cfg)?;
            let text_path = with_suffix(&a.out, ".txt");
            write_text(&a.out, &report.to_csv())?;
            write_text(&text_path, &report.to_string())?;
            print!("{report}");
            let mut inputs = vec![a.input.as_path()];
            inputs.extend(a.flags.raters.as_deref());
            manifest(
                "ablate",
                args,
                a.flags.config.as_deref(),
                Some(cfg.seed),
                &inputs,
                &[&a.out, &text_path],
            )
        }
        Command::Gradcheck(a) => {
            let mut worst: f64 = 0.0;
            for seed in a.seed..a.seed + a.seeds.max(1) {
                let r = gradient_check(seed, a.input_dim, a.hidden, a.frames, a.eps)?;
                println!(
                    "seed {seed}: {} parameters, max relative error {:.3e} at index {}",
                    r.parameters_checked, r.max_relative_error, r.worst_index
                );
                worst = worst.max(r.max_relative_error);
            }
            println!("max relative error {worst:.3e}");
            if worst < a.tolerance {
                Ok(())
            } else {
                Err(Error::Config(format!(
                    "gradient check failed: max relative error {worst:e} >= {:e}",
                    a.tolerance
                )))
            }
        }
        Command::Confusion(a) => {
            let file = fs::File::open(&a.input).map_err(|e| Error::io(&a.input, e))?;
            let preds = ingest_predictions(file, a.classes)?;
            let (cm, _) = preds.confusion()?;
            let text_path = with_suffix(&a.out, ".txt");
            write_text(&a.out, &cm.to_csv(&preds.classes))?;
            let table = cm.to_table(&preds.classes);
            write_text(&text_path, &table)?;
            print!("{table}");
            manifest("confusion", args, None, None, &[&a.input], &[&a.out, &text_path])
        }
        Command::Rerun(a) => {
            let m = RunManifest::load(&a.manifest)?;
            if m.schema_version != SCHEMA_VERSION {
                return Err(Error::Config(format!("manifest schema {} is not {SCHEMA_VERSION}", m.schema_version)));
            }
            let mut argv = vec!["readywatch".to_string()];
            argv.extend(m.args.iter().cloned());
            let cli = Cli::try_parse_from(&argv).map_err(|e| Error::Config(e.to_string()))?;
            if matches!(cli.command, Command::Rerun(_)) {
                return Err(Error::Config("a manifest cannot replay another replay".into()));
            }
            run(cli.command, &m.args)
        }
    }
}
