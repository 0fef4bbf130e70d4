use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use densecam::augmentation::{augment_corpus, render_derived};
use densecam::cam::{ClassThreshold, ThresholdSet};
use densecam::config::RunConfig;
use densecam::corpus::synth::{write_corpus, SynthConfig};
use densecam::corpus::{
    load_manifest, load_weights, read_wav, save_manifest, save_weights, wav_length,
    write_tensor_file, write_wav_pcm16, ClipRecord, CorpusError, TrainingMeta, WeightsFile,
};
use densecam::densenet::DenseNet;
use densecam::labels::{ClassVocab, EventInterval, WeakLabelSet};
use densecam::metrics::{
    clip_f1, event_f1, segment_f1, tune_thresholds, EvalReport, EventCollar, TuneConfig,
    TuneObjective,
};
use densecam::pipeline::{dev_clips, load_clips, predict_clip, Clip, ClipInference, ThresholdFile};
use densecam::rng::{derive_seed, STREAM_INIT};
use densecam::tensor::Tensor;
use densecam::train::{examples, train_model, TrainOutcome};
use densecam::tritrain::{ensemble_predict, tri_train, TriConfig};
use densecam::{Error, Result};

const INFER_BATCH: usize = 32;

#[derive(Parser)]
#[command(
    name = "densecam",
    version,
    about = "Weakly supervised sound event detection with DenseNet and CAMs"
)]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic tone/chirp/noise corpus.
    SynthCorpus(SynthArgs),
    /// Compute LFBE features for every clip in a manifest.
    Featurize(FeaturizeArgs),
    /// Train one model on weakly labelled clips.
    Train(TrainArgs),
    /// Tri-train three models with consensus pseudo-labels.
    TriTrain(TriTrainArgs),
    /// Predict clip-level tags.
    InferTags(InferArgs),
    /// Predict tags and timed events.
    InferEvents(InferArgs),
    /// Tune per-class thresholds on a strongly labelled dev manifest.
    TuneThresholds(TuneArgs),
    /// Score predictions against references.
    Evaluate(EvaluateArgs),
    /// Expand a training manifest with shifted and mixed clips.
    Augment(AugmentArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// dcase2017 or dcase2018.
    #[arg(long)]
    preset: Option<String>,
    /// Override any config key, e.g. `--set lr=0.005`.
    #[arg(long = "set", value_name = "KEY=VALUE", value_parser = parse_pair)]
    set: Vec<(String, String)>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut overrides = self.set.clone();
        let mut flag = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                overrides.push((k.to_string(), v));
            }
        };
        flag("seed", self.seed.map(|s| s.to_string()));
        flag("batch_size", self.batch_size.map(|s| s.to_string()));
        flag("max_epochs", self.max_epochs.map(|s| s.to_string()));
        Ok(RunConfig::resolve(
            self.preset.as_deref(),
            self.config.as_deref(),
            &overrides,
        )?)
    }
}

fn parse_pair(s: &str) -> std::result::Result<(String, String), String> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .ok_or_else(|| format!("expected KEY=VALUE, got `{s}`"))
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 4)]
    classes: usize,
    #[arg(long, default_value_t = 200)]
    train: usize,
    #[arg(long, default_value_t = 50)]
    dev: usize,
    #[arg(long, default_value_t = 50)]
    eval: usize,
    #[arg(long, default_value_t = 4.0)]
    clip_s: f64,
    #[arg(long, default_value_t = 16_000)]
    sample_rate: u32,
    #[arg(long, default_value_t = 5.0)]
    snr_min: f64,
    #[arg(long, default_value_t = 20.0)]
    snr_max: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct FeaturizeArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    classes: PathBuf,
    /// Directory for one `<id>.lfbe` tensor file per clip.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    train: PathBuf,
    /// Dev manifest for checkpoint selection and early stopping.
    #[arg(long)]
    dev: Option<PathBuf>,
    #[arg(long)]
    classes: PathBuf,
    /// Weights file to write.
    #[arg(long)]
    out: PathBuf,
    /// Report base path; defaults to the weights path without extension.
    #[arg(long)]
    report: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct TriTrainArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    unlabeled: PathBuf,
    #[arg(long)]
    dev: Option<PathBuf>,
    #[arg(long)]
    classes: PathBuf,
    /// Directory for model weights, pools and the report.
    #[arg(long)]
    out_dir: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct InferArgs {
    /// One or more weights files; several are ensembled.
    #[arg(long = "model", required = true, num_args = 1..)]
    models: Vec<PathBuf>,
    #[arg(long)]
    manifest: PathBuf,
    /// Threshold file from `tune-thresholds`. Required for events.
    #[arg(long)]
    thresholds: Option<PathBuf>,
    /// Output manifest.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ObjectiveArg {
    Tagging,
    Segment,
    Event,
}

#[derive(Args)]
struct TuneArgs {
    #[arg(long = "model", required = true, num_args = 1..)]
    models: Vec<PathBuf>,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_enum, default_value = "segment")]
    objective: ObjectiveArg,
    #[arg(long, default_value_t = 1.0)]
    segment_s: f64,
    #[arg(long, default_value_t = 31)]
    max_median: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Clip,
    Segment,
    Event,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long = "ref")]
    reference: PathBuf,
    #[arg(long)]
    classes: PathBuf,
    #[arg(long, value_enum)]
    metric: MetricArg,
    #[arg(long, default_value_t = 1.0)]
    segment_s: f64,
    /// Writes `<out>.txt` and `<out>.json`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AugmentArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    classes: PathBuf,
    #[arg(long)]
    target: usize,
    /// Output manifest; derived audio goes to `augmented/` beside it.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    ExitCode::SUCCESS
                }
                _ => ExitCode::from(1),
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::SynthCorpus(a) => synth(a),
        Command::Featurize(a) => featurize(a),
        Command::Train(a) => train(a),
        Command::TriTrain(a) => tri(a),
        Command::InferTags(a) => infer_cmd(a, false),
        Command::InferEvents(a) => infer_cmd(a, true),
        Command::TuneThresholds(a) => tune(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Augment(a) => augment(a),
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CorpusError::Io {
            path: dir.display().to_string(),
            source: e,
        })?;
    }
    Ok(())
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, bytes).map_err(|e| {
        CorpusError::Io {
            path: path.display().to_string(),
            source: e,
        }
        .into()
    })
}

fn write_report<T: Serialize>(base: &Path, text: &str, value: &T) -> Result<()> {
    write(&base.with_extension("txt"), text)?;
    let json = serde_json::to_string_pretty(value).expect("reports serialize");
    write(&base.with_extension("json"), json + "\n")
}

fn synth(a: SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        n_classes: a.classes,
        n_train: a.train,
        n_dev: a.dev,
        n_eval: a.eval,
        clip_s: a.clip_s,
        sample_rate: a.sample_rate,
        snr_db: (a.snr_min, a.snr_max),
        seed: a.seed,
        ..SynthConfig::default()
    };
    let out = write_corpus(&a.out, &cfg).map_err(|e| match e {
        CorpusError::Format(msg) => Error::Invalid(msg),
        other => other.into(),
    })?;
    println!("wrote {} clips to {}", out.n_clips, a.out.display());
    Ok(())
}

fn featurize(a: FeaturizeArgs) -> Result<()> {
    let cfg = a.config.resolve()?;
    let vocab = ClassVocab::load(&a.classes)?;
    let clips = load_clips(&a.manifest, &vocab, &cfg.features())?;
    for c in &clips {
        let t = Tensor::new(vec![c.spec.n_frames, c.spec.n_mels], c.spec.frames.clone())?;
        let meta: BTreeMap<String, String> = [
            ("id".to_string(), c.record.id.clone()),
            ("kind".to_string(), "lfbe".to_string()),
            (
                "frame_shift_s".to_string(),
                c.spec.frame_shift_s.to_string(),
            ),
        ]
        .into();
        let dest = a.out.join(format!("{}.lfbe", c.record.id));
        ensure_parent(&dest)?;
        write_tensor_file(&dest, &t, &meta)?;
    }
    println!("featurized {} clips into {}", clips.len(), a.out.display());
    Ok(())
}

#[derive(Serialize)]
struct TrainReport<'a> {
    config_hash: String,
    parameters: usize,
    epochs_run: usize,
    best_epoch: Option<usize>,
    best_dev_f1: Option<f64>,
    history: &'a [densecam::train::EpochLog],
}

fn train_report_text(o: &TrainOutcome, hash: &str) -> String {
    let mut s = format!(
        "config_hash={hash}\nparameters={}\nepochs_run={}\nbest_epoch={}\nbest_dev_f1={}\n",
        o.model.num_parameters(),
        o.epochs_run,
        o.best_epoch.map_or("none".into(), |e| e.to_string()),
        o.best_dev_f1.map_or("none".into(), |f| format!("{f:.6}")),
    );
    for h in &o.history {
        s += &format!(
            "epoch={} phase={} lr={} loss={:.6} dev_f1={}\n",
            h.epoch,
            h.phase,
            h.lr,
            h.train_loss,
            h.dev_f1.map_or("none".into(), |f| format!("{f:.6}"))
        );
    }
    s
}

fn train(a: TrainArgs) -> Result<()> {
    let cfg = a.config.resolve()?;
    let vocab = ClassVocab::load(&a.classes)?;
    let features = cfg.features();
    let train = load_clips(&a.train, &vocab, &features)?;
    let dev = a
        .dev
        .as_ref()
        .map(|p| load_clips(p, &vocab, &features))
        .transpose()?;
    let model_seed = derive_seed(cfg.seed, STREAM_INIT, 0);
    let model = DenseNet::build(cfg.arch_spec(vocab.len()), model_seed)?;
    let dev_ex = dev.as_deref().map(examples);
    let outcome = train_model(model, &cfg, cfg.seed, &examples(&train), dev_ex.as_deref())?;
    let meta = TrainingMeta {
        seed: cfg.seed,
        epochs: outcome.epochs_run,
        config_hash: cfg.hash(),
        extra: [("preset".to_string(), cfg.preset.clone())].into(),
    };
    ensure_parent(&a.out)?;
    save_weights(
        &a.out,
        &WeightsFile::from_model(&outcome.model, &vocab, features, meta),
    )?;
    let base = a.report.unwrap_or_else(|| a.out.with_extension(""));
    let report = TrainReport {
        config_hash: cfg.hash(),
        parameters: outcome.model.num_parameters(),
        epochs_run: outcome.epochs_run,
        best_epoch: outcome.best_epoch,
        best_dev_f1: outcome.best_dev_f1,
        history: &outcome.history,
    };
    write_report(&base, &train_report_text(&outcome, &cfg.hash()), &report)?;
    println!(
        "trained {} epochs, best dev F1 {}; weights in {}",
        outcome.epochs_run,
        outcome
            .best_dev_f1
            .map_or("n/a".into(), |f| format!("{f:.4}")),
        a.out.display()
    );
    Ok(())
}

fn tri(a: TriTrainArgs) -> Result<()> {
    let cfg = a.config.resolve()?;
    let vocab = ClassVocab::load(&a.classes)?;
    let features = cfg.features();
    let labeled = load_clips(&a.train, &vocab, &features)?;
    let unlabeled = load_clips(&a.unlabeled, &vocab, &features)?;
    let dev = a
        .dev
        .as_ref()
        .map(|p| load_clips(p, &vocab, &features))
        .transpose()?;
    let tri_cfg = TriConfig::from_run(&cfg);
    let state = tri_train(
        &labeled,
        &unlabeled,
        dev.as_deref(),
        &cfg,
        &tri_cfg,
        &vocab,
        Some(&a.out_dir.join("pools")),
    )?;
    let mut text = format!(
        "config_hash={}\nrounds={}\ntau={}\n",
        cfg.hash(),
        state.rounds_done,
        state.tau
    );
    for (i, pool) in state.pools.iter().enumerate() {
        text += &format!("pool.model{i}={}\n", pool.len());
    }
    let members = state.ensemble();
    for (k, m) in members.iter().enumerate() {
        let meta = TrainingMeta {
            seed: tri_cfg.seeds[k % 3],
            epochs: state.outcomes[if k < 3 { 0 } else { state.outcomes.len() - 1 }][k % 3]
                .epochs_run,
            config_hash: cfg.hash(),
            extra: [(
                "role".to_string(),
                if k < 3 { "supervised" } else { "tri-trained" }.to_string(),
            )]
            .into(),
        };
        let p = a.out_dir.join(format!("model{k}.bin"));
        ensure_parent(&p)?;
        save_weights(&p, &WeightsFile::from_model(m, &vocab, features, meta))?;
        text += &format!("model{k}={}\n", p.display());
    }
    let pools: BTreeMap<String, Vec<&densecam::tritrain::PseudoLabel>> = state
        .pools
        .iter()
        .enumerate()
        .map(|(i, p)| (format!("model{i}"), p.values().collect()))
        .collect();
    write_report(&a.out_dir.join("report"), &text, &pools)?;
    println!(
        "tri-training done; {} models in {}",
        members.len(),
        a.out_dir.display()
    );
    Ok(())
}

struct Loaded {
    files: Vec<WeightsFile>,
    models: Vec<DenseNet>,
}

fn load_models(paths: &[PathBuf]) -> Result<Loaded> {
    let files = paths
        .iter()
        .map(|p| load_weights(p))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    if let Some(f) = files.iter().find(|f| f.features != files[0].features) {
        return Err(Error::Invalid(format!(
            "models use different feature settings: {:?} vs {:?}",
            f.features, files[0].features
        )));
    }
    let models = files
        .iter()
        .map(|f| f.model())
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(Loaded { files, models })
}

impl Loaded {
    fn vocab(&self) -> &ClassVocab {
        &self.files[0].vocab
    }

    fn infer(&self, clips: &[Clip]) -> Result<Vec<ClipInference>> {
        let members: Vec<(&DenseNet, &ClassVocab)> = self
            .models
            .iter()
            .zip(&self.files)
            .map(|(m, f)| (m, &f.vocab))
            .collect();
        let specs: Vec<_> = clips.iter().map(|c| &c.spec).collect();
        ensemble_predict(&members, &specs, INFER_BATCH)
    }

    fn time_resolution(&self, clips: &[Clip]) -> f64 {
        let shift = clips
            .first()
            .map_or(self.files[0].features.hop_s, |c| c.spec.frame_shift_s);
        self.models[0].time_resolution_s(shift)
    }
}

fn infer_cmd(a: InferArgs, events: bool) -> Result<()> {
    let loaded = load_models(&a.models)?;
    let vocab = loaded.vocab().clone();
    let thresholds = match &a.thresholds {
        Some(p) => ThresholdFile::load(p)?.for_vocab(&vocab)?,
        None if events => {
            return Err(Error::Invalid("infer-events needs --thresholds".into()));
        }
        None => ThresholdSet::uniform(vocab.len(), ClassThreshold::default()),
    };
    let clips = load_clips(&a.manifest, &vocab, &loaded.files[0].features)?;
    let res = loaded.time_resolution(&clips);
    let inferences = loaded.infer(&clips)?;
    let mut out = Vec::with_capacity(clips.len());
    for (c, inf) in clips.iter().zip(&inferences) {
        let pred = predict_clip(inf, &thresholds, res, c.duration_s)?;
        out.push(ClipRecord {
            id: c.record.id.clone(),
            path: c.record.path.clone(),
            weak: pred.tags,
            strong: events.then_some(pred.events),
            split: c.record.split,
            derived_from: None,
        });
    }
    ensure_parent(&a.out)?;
    save_manifest(&a.out, &out, &vocab)?;
    println!(
        "wrote predictions for {} clips to {}",
        out.len(),
        a.out.display()
    );
    Ok(())
}

fn tune(a: TuneArgs) -> Result<()> {
    let loaded = load_models(&a.models)?;
    let vocab = loaded.vocab().clone();
    let clips = load_clips(&a.manifest, &vocab, &loaded.files[0].features)?;
    let objective = match a.objective {
        ObjectiveArg::Tagging => TuneObjective::Tagging,
        ObjectiveArg::Segment => TuneObjective::Segment,
        ObjectiveArg::Event => TuneObjective::Event,
    };
    let cfg = TuneConfig {
        segment_s: a.segment_s,
        max_median_len: a.max_median,
        ..TuneConfig::new(objective, loaded.time_resolution(&clips))
    };
    let dev = dev_clips(&clips, loaded.infer(&clips)?);
    let set = tune_thresholds(&dev, vocab.len(), &cfg)?;
    ensure_parent(&a.out)?;
    ThresholdFile::new(&vocab, objective, &set).save(&a.out)?;
    println!(
        "wrote thresholds for {} classes to {}",
        vocab.len(),
        a.out.display()
    );
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let vocab = ClassVocab::load(&a.classes)?;
    let pred = load_manifest(&a.pred, &vocab)?;
    let reference = load_manifest(&a.reference, &vocab)?;
    let weak = |rs: &[ClipRecord]| -> BTreeMap<String, WeakLabelSet> {
        rs.iter().map(|r| (r.id.clone(), r.weak.clone())).collect()
    };
    let strong = |rs: &[ClipRecord]| -> BTreeMap<String, Vec<EventInterval>> {
        rs.iter()
            .map(|r| (r.id.clone(), r.strong.clone().unwrap_or_default()))
            .collect()
    };
    let need_strong = |rs: &[ClipRecord], what: &str| -> Result<()> {
        match rs.iter().find(|r| r.strong.is_none()) {
            Some(r) => Err(Error::Invalid(format!(
                "{what} clip `{}` has no strong labels",
                r.id
            ))),
            None => Ok(()),
        }
    };
    let report: EvalReport = match a.metric {
        MetricArg::Clip => clip_f1(&weak(&pred), &weak(&reference), vocab.len())?,
        MetricArg::Segment => {
            need_strong(&reference, "reference")?;
            let dir = a.reference.parent().unwrap_or_else(|| Path::new("."));
            let mut durations = BTreeMap::new();
            for r in &reference {
                let (n, sr) = wav_length(&r.audio_path(dir))?;
                durations.insert(r.id.clone(), n as f64 / sr as f64);
            }
            segment_f1(
                &strong(&pred),
                &strong(&reference),
                &durations,
                a.segment_s,
                vocab.len(),
            )?
        }
        MetricArg::Event => {
            need_strong(&reference, "reference")?;
            event_f1(
                &strong(&pred),
                &strong(&reference),
                EventCollar::default(),
                vocab.len(),
            )?
        }
    };
    let text = report.to_text(Some(&vocab));
    print!("{text}");
    if let Some(base) = &a.out {
        write_report(base, &text, &report)?;
    }
    Ok(())
}

fn augment(a: AugmentArgs) -> Result<()> {
    let vocab = ClassVocab::load(&a.classes)?;
    let records = load_manifest(&a.manifest, &vocab)?;
    let in_dir = a
        .manifest
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .to_path_buf();
    let out_dir = a
        .out
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .to_path_buf();
    let lengths = records
        .iter()
        .map(|r| wav_length(&r.audio_path(&in_dir)).map(|(n, _)| n))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let mut all = augment_corpus(&records, &lengths, a.target, a.seed)?;
    let by_id: BTreeMap<String, PathBuf> = records
        .iter()
        .map(|r| (r.id.clone(), r.audio_path(&in_dir)))
        .collect();
    for r in &all[records.len()..] {
        let audio = render_derived(r, |id| {
            let p = by_id
                .get(id)
                .ok_or_else(|| format!("unknown source `{id}`"))?;
            read_wav(p).map_err(|e| e.to_string())
        })?;
        let dest = out_dir.join(&r.path);
        ensure_parent(&dest)?;
        write_wav_pcm16(&dest, &audio)?;
    }
    let same_dir = fs::canonicalize(&in_dir).ok() == fs::canonicalize(&out_dir).ok();
    if !same_dir {
        for r in all[..records.len()].iter_mut() {
            let abs = r.audio_path(&in_dir);
            r.path = fs::canonicalize(&abs).unwrap_or(abs);
        }
    }
    ensure_parent(&a.out)?;
    save_manifest(&a.out, &all, &vocab)?;
    println!(
        "added {} derived clips ({} total) to {}",
        all.len() - records.len(),
        all.len(),
        a.out.display()
    );
    Ok(())
}
