//! The `sqa` command line. Every subcommand writes its outputs under
//! `--out`, plus `run.json` (arguments, resolved config, seeds, version) and
//! `metadata.json` (wall-clock times, kept apart so primary outputs are
//! byte-identical between repeated runs).

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde_json::json;

use crate::corruption::{
    curves_to_tsv, sensitivity_analysis, CorruptionKind, FeatureExtractor, MfccExtractor, UnavailableExtractor,
    NUM_LEVELS,
};
use crate::data::{assign_splits, load_manifest, write_manifest, SampleRecord, Split, ViewName, MFCC_LAYER};
use crate::error::{Error, Result};
use crate::features::{extract_mfcc, read_wav, write_embedding};
use crate::metrics::Report;
use crate::model::{load_checkpoint, EncoderKind, PredictorConfig};
use crate::probing::{sweep_layers, ModelSize, SweepOptions};
use crate::training::{evaluate, load_samples, train, TrainRunConfig};

const CONFIG_HELP: &str = "\
Config file (--config): one `key = value` per line, `#` starts a comment.
  encoder         bilstm | transformer             (bilstm)
  hidden          units per direction / model width (32)
  encoder_layers  stacked encoder layers           (2 for bilstm, 4 for transformer)
  heads           attention heads, transformer     (4)
  features        feature keys, comma separated: `mfcc` or layer indices;
                  two keys enable fusion           (mfcc)
  lr              ADAM learning rate               (0.003)
  batch_size      samples per batch                (60)
  epochs          training epochs                  (30)
  eval_every      epochs between validations       (1)
  grad_clip       global gradient-norm clip        (off)
  init_seed       parameter initialization seed    (--seed)
  eval_split      all | train | validation         (all)
  view            full | subset | unseen           (full)
  probe_grid      probe configs, comma separated:
                  bilstm:<hidden>:<layers> or transformer:<hidden>:<heads>:<layers>
                                                   (bilstm:32:2,transformer:32:4:4)
  model_size      300M | 1B | 2B | other           (other)";

#[derive(Debug, Parser)]
#[command(name = "sqa", version, about = "Speech quality (MOS) predictor toolkit", after_help = CONFIG_HELP)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Line-delimited JSON manifest
    #[arg(long)]
    pub manifest: PathBuf,
    /// Flat key = value config file (keys listed below)
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory, created if absent
    #[arg(long)]
    pub out: PathBuf,
    /// Worker threads (default: 1 for train, all cores otherwise)
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute MFCC features for every record with audio
    ExtractMfcc(Common),
    /// Train a predictor and keep the best-validation checkpoint
    Train(Common),
    /// Per-corpus RMSE of a checkpoint
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Layer-wise probing sweep
    Probe {
        #[command(flatten)]
        common: Common,
        /// Layers to sweep, e.g. `0,5,21` or `0-24`
        #[arg(long)]
        layers: String,
        /// Fraction of each split used
        #[arg(long, default_value_t = 1.0)]
        fraction: f64,
    },
    /// Corruption sensitivity curves of a checkpoint
    Sensitivity {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Comma-separated kinds (default: all)
        #[arg(long)]
        kinds: Option<String>,
        /// Comma-separated levels 0..5 (default: all)
        #[arg(long)]
        levels: Option<String>,
        /// lame-compatible MP3 codec executable
        #[arg(long)]
        codec_path: Option<PathBuf>,
    },
    /// Human rater agreement and vote-count statistics
    HumanMetrics(Common),
    /// Plot-ready tables: report, vote histograms, predictions
    ExportPlots {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::ExtractMfcc(c) | Command::Train(c) | Command::HumanMetrics(c) => c,
            Command::Evaluate { common, .. }
            | Command::Probe { common, .. }
            | Command::Sensitivity { common, .. }
            | Command::ExportPlots { common, .. } => common,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Command::ExtractMfcc(_) => "extract-mfcc",
            Command::Train(_) => "train",
            Command::Evaluate { .. } => "evaluate",
            Command::Probe { .. } => "probe",
            Command::Sensitivity { .. } => "sensitivity",
            Command::HumanMetrics(_) => "human-metrics",
            Command::ExportPlots { .. } => "export-plots",
        }
    }
}

/// Typed settings from the config file, with defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub encoder: EncoderKind,
    pub hidden: usize,
    pub encoder_layers: Option<usize>,
    pub heads: usize,
    pub features: Vec<u32>,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub eval_every: usize,
    pub grad_clip: Option<f64>,
    pub init_seed: Option<u64>,
    pub eval_split: Option<Split>,
    pub view: ViewName,
    pub probe_grid: Vec<PredictorConfig>,
    pub model_size: ModelSize,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            encoder: EncoderKind::BiLstm,
            hidden: 32,
            encoder_layers: None,
            heads: 4,
            features: vec![MFCC_LAYER],
            lr: 3e-3,
            batch_size: 60,
            epochs: 30,
            eval_every: 1,
            grad_clip: None,
            init_seed: None,
            eval_split: None,
            view: ViewName::Full,
            probe_grid: vec![PredictorConfig::bilstm(0), PredictorConfig::transformer(0)],
            model_size: ModelSize::Other,
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("'{v}' is not a valid value for {key}")))
}

/// Parse a feature key list: `mfcc`, indices and inclusive ranges `a-b`.
pub fn parse_layers(text: &str) -> Result<Vec<u32>> {
    let mut out = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if part.eq_ignore_ascii_case("mfcc") {
            out.push(MFCC_LAYER);
        } else if let Some((a, b)) = part.split_once('-') {
            let (a, b): (u32, u32) = (parse_value("layers", a.trim())?, parse_value("layers", b.trim())?);
            if a > b {
                return Err(Error::Config(format!("empty layer range '{part}'")));
            }
            out.extend(a..=b);
        } else {
            out.push(parse_value("layers", part)?);
        }
    }
    if out.is_empty() {
        return Err(Error::Config("no layers given".into()));
    }
    Ok(out)
}

fn parse_grid_entry(text: &str) -> Result<PredictorConfig> {
    let parts: Vec<&str> = text.split(':').map(str::trim).collect();
    let num = |i: usize| -> Result<usize> { parse_value("probe_grid", parts[i]) };
    match (parts[0].parse::<EncoderKind>()?, parts.len()) {
        (EncoderKind::BiLstm, 3) => Ok(PredictorConfig::bilstm(0).with_hidden(num(1)?).with_layers(num(2)?)),
        (EncoderKind::Transformer, 4) => Ok(PredictorConfig::transformer(0)
            .with_hidden(num(1)?)
            .with_heads(num(2)?)
            .with_layers(num(3)?)),
        _ => Err(Error::Config(format!("bad probe_grid entry '{text}'"))),
    }
}

impl Settings {
    pub fn parse(text: &str) -> Result<Self> {
        let mut s = Settings::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                message: format!("expected `key = value`, got '{line}'"),
            })?;
            let (key, v) = (key.trim(), value.trim());
            match key {
                "encoder" => s.encoder = v.parse()?,
                "hidden" => s.hidden = parse_value(key, v)?,
                "encoder_layers" => s.encoder_layers = Some(parse_value(key, v)?),
                "heads" => s.heads = parse_value(key, v)?,
                "features" => s.features = parse_layers(v)?,
                "lr" => s.lr = parse_value(key, v)?,
                "batch_size" => s.batch_size = parse_value(key, v)?,
                "epochs" => s.epochs = parse_value(key, v)?,
                "eval_every" => s.eval_every = parse_value(key, v)?,
                "grad_clip" => s.grad_clip = Some(parse_value(key, v)?),
                "init_seed" => s.init_seed = Some(parse_value(key, v)?),
                "eval_split" => {
                    s.eval_split = match v {
                        "all" => None,
                        "train" => Some(Split::Train),
                        "validation" => Some(Split::Validation),
                        _ => return Err(Error::Config(format!("unknown eval_split '{v}'"))),
                    }
                }
                "view" => s.view = v.parse()?,
                "probe_grid" => {
                    s.probe_grid = v.split(',').map(parse_grid_entry).collect::<Result<_>>()?;
                    if s.probe_grid.is_empty() {
                        return Err(Error::Config("probe_grid is empty".into()));
                    }
                }
                "model_size" => s.model_size = v.parse()?,
                other => {
                    return Err(Error::Parse {
                        line: i + 1,
                        message: format!("unknown config key '{other}'"),
                    })
                }
            }
        }
        Ok(s)
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Settings::default()),
            Some(p) => Settings::parse(&fs::read_to_string(p).map_err(|e| Error::io(p, e))?),
        }
    }

    pub fn predictor_config(&self, input_dim: usize) -> PredictorConfig {
        let base = match self.encoder {
            EncoderKind::BiLstm => PredictorConfig::bilstm(input_dim),
            EncoderKind::Transformer => PredictorConfig::transformer(input_dim).with_heads(self.heads),
        };
        let layers = self.encoder_layers.unwrap_or(base.layers);
        PredictorConfig {
            feature_layers: self.features.clone(),
            ..base.with_hidden(self.hidden).with_layers(layers)
        }
    }

    pub fn run_config(&self, seed: u64) -> TrainRunConfig {
        TrainRunConfig {
            lr: self.lr,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed,
            init_seed: self.init_seed.unwrap_or(seed),
            eval_every: self.eval_every,
            grad_clip: self.grad_clip,
            checkpoint_path: None,
        }
    }

    fn to_json(&self) -> serde_json::Value {
        json!({
            "encoder": format!("{:?}", self.encoder),
            "hidden": self.hidden,
            "encoder_layers": self.encoder_layers,
            "heads": self.heads,
            "features": self.features,
            "lr": self.lr,
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "eval_every": self.eval_every,
            "grad_clip": self.grad_clip,
            "init_seed": self.init_seed,
            "eval_split": self.eval_split,
            "view": self.view,
            "probe_grid": self.probe_grid.iter().map(PredictorConfig::id).collect::<Vec<_>>(),
            "model_size": self.model_size.name(),
        })
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64())
}

/// Records with train/validation labels: kept if the manifest already has
/// them for every record, otherwise drawn with `seed`.
fn with_splits(records: Vec<SampleRecord>, seed: u64) -> Result<Vec<SampleRecord>> {
    let assigned = records.iter().filter(|r| r.split != Split::Unassigned).count();
    if assigned == records.len() {
        Ok(records)
    } else if assigned == 0 {
        assign_splits(records, seed)
    } else {
        Err(Error::Validation(format!(
            "{assigned} of {} records carry a split; label all or none",
            records.len()
        )))
    }
}

fn select(records: &[SampleRecord], view: ViewName, split: Option<Split>) -> Vec<&SampleRecord> {
    records
        .iter()
        .filter(|r| view.admits(r.corpus) && split.is_none_or(|s| r.split == s))
        .collect()
}

fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "-_.".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn absolute(path: &Path) -> PathBuf {
    fs::canonicalize(path).unwrap_or_else(|_| path.to_path_buf())
}

fn extract_mfcc_cmd(c: &Common) -> Result<serde_json::Value> {
    let records = load_manifest(&c.manifest)?;
    let dir = c.out.join("features");
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let out: Vec<SampleRecord> = records
        .into_par_iter()
        .map(|mut r| {
            let Some(audio) = r.audio_path.clone() else {
                return Ok(r);
            };
            let seq = extract_mfcc(&read_wav(&audio)?)?;
            let name = format!("{}.mfcc.sqaf", file_stem(&r.id));
            write_embedding(&seq, dir.join(&name))?;
            r.audio_path = Some(absolute(&audio));
            for p in r.feature_paths.values_mut() {
                *p = absolute(p);
            }
            r.feature_paths.insert(MFCC_LAYER, PathBuf::from("features").join(name));
            Ok(r)
        })
        .collect::<Result<_>>()?;
    write_manifest(c.out.join("manifest.jsonl"), &out)?;
    Ok(json!({ "records": out.len() }))
}

fn train_cmd(c: &Common, s: &Settings) -> Result<serde_json::Value> {
    let records = with_splits(load_manifest(&c.manifest)?, c.seed)?;
    write_manifest(c.out.join("splits.jsonl"), &records)?;
    let train_recs = select(&records, s.view, Some(Split::Train));
    let val_recs = select(&records, s.view, Some(Split::Validation));
    let train_set = load_samples(&train_recs, &s.features)?;
    let val_set = load_samples(&val_recs, &s.features)?;
    let dim = train_set
        .first()
        .ok_or_else(|| Error::Empty("no training records in the selected view".into()))?
        .streams[0]
        .feature_dim();
    let config = s.predictor_config(dim);
    let mut run = s.run_config(c.seed);
    run.checkpoint_path = Some(c.out.join("model.sqac"));
    let outcome = train(&config, &run, &train_set, &val_set)?;
    outcome.report.write_log(c.out.join("train_log.jsonl"))?;
    let summary = json!({
        "model": config.id(),
        "train_samples": train_set.len(),
        "validation_samples": val_set.len(),
        "best_epoch": outcome.report.best_epoch,
        "best_loss": outcome.report.best_loss,
        "best_val_rmse": outcome.report.best_val_rmse,
        "selected_on": outcome.report.selected_on,
    });
    write(
        &c.out.join("train_summary.json"),
        serde_json::to_string_pretty(&summary).unwrap() + "\n",
    )?;
    Ok(summary)
}

fn predictions_tsv(report: &crate::training::EvalReport) -> String {
    let mut out = String::from("id\tcorpus\tmos_label\tmos_pred\n");
    for p in &report.predictions {
        let _ = writeln!(out, "{}\t{}\t{}\t{}", p.id, p.corpus, p.mos_label, p.mos_pred);
    }
    out
}

fn evaluation(c: &Common, s: &Settings, checkpoint: &Path) -> Result<(Report, Vec<SampleRecord>)> {
    let records = load_manifest(&c.manifest)?;
    let model = load_checkpoint(checkpoint)?;
    let chosen = select(&records, s.view, s.eval_split);
    let samples = load_samples(&chosen, &model.config.feature_layers)?;
    let eval = evaluate(&model, &samples, s.batch_size)?;
    let used: Vec<SampleRecord> = chosen.into_iter().cloned().collect();
    Ok((Report::new(Some(eval), &used), used))
}

fn evaluate_cmd(c: &Common, s: &Settings, checkpoint: &Path) -> Result<serde_json::Value> {
    let (report, used) = evaluation(c, s, checkpoint)?;
    write(&c.out.join("report.tsv"), report.to_tsv())?;
    write(&c.out.join("report.jsonl"), report.to_jsonl())?;
    let eval = report.evaluation.as_ref().unwrap();
    write(&c.out.join("predictions.tsv"), predictions_tsv(eval))?;
    let mut text = String::new();
    for (v, st) in &eval.aggregates {
        let _ = writeln!(text, "{v:?}\tn={}\trmse={:.4}", st.n, st.rmse);
    }
    print!("{text}");
    Ok(json!({ "samples": used.len() }))
}

fn probe_cmd(c: &Common, s: &Settings, layers: &str, fraction: f64) -> Result<serde_json::Value> {
    let layers = parse_layers(layers)?;
    let records = with_splits(load_manifest(&c.manifest)?, c.seed)?;
    let records: Vec<SampleRecord> = select(&records, s.view, None).into_iter().cloned().collect();
    let opts = SweepOptions {
        model_size: s.model_size,
        fraction,
        seed: c.seed,
        jobs: None,
    };
    let table = sweep_layers(&records, &layers, &s.probe_grid, &s.run_config(c.seed), &opts)?;
    write(&c.out.join("probe.tsv"), table.to_tsv())?;
    write(&c.out.join("probe_interpolated.tsv"), table.interpolated_tsv())?;
    let mut optima = String::from("first_layer\tlast_layer\trmse\n");
    for o in table.local_optima() {
        let _ = writeln!(optima, "{}\t{}\t{}", o.first_layer, o.last_layer, o.rmse);
    }
    write(&c.out.join("probe_optima.tsv"), optima)?;
    Ok(json!({ "rows": table.rows.len(), "errors": table.errors.len() }))
}

fn parse_list<T>(text: Option<&str>, all: Vec<T>, f: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
    match text {
        None => Ok(all),
        Some(t) => t.split(',').map(str::trim).filter(|p| !p.is_empty()).map(f).collect(),
    }
}

fn sensitivity_cmd(
    c: &Common,
    s: &Settings,
    checkpoint: &Path,
    kinds: Option<&str>,
    levels: Option<&str>,
    codec: Option<&Path>,
) -> Result<serde_json::Value> {
    let kinds = parse_list(kinds, CorruptionKind::ALL.to_vec(), |k| k.parse())?;
    let levels = parse_list(levels, (0..NUM_LEVELS).collect(), |l| parse_value("levels", l))?;
    let model = load_checkpoint(checkpoint)?;
    let records = load_manifest(&c.manifest)?;
    let chosen: Vec<SampleRecord> = select(&records, s.view, s.eval_split).into_iter().cloned().collect();
    let extractor: Box<dyn FeatureExtractor> = if model.config.feature_layers == [MFCC_LAYER] {
        Box::new(MfccExtractor::default())
    } else {
        Box::new(UnavailableExtractor {
            reason: "embedding features must be re-dumped externally from corrupted audio".into(),
        })
    };
    let curves = sensitivity_analysis(&model, &chosen, &kinds, &levels, extractor.as_ref(), codec, c.seed)?;
    write(&c.out.join("sensitivity.tsv"), curves_to_tsv(&curves))?;
    let unavailable: Vec<&str> = curves.iter().filter(|c| !c.available).map(|c| c.kind.name()).collect();
    Ok(json!({ "curves": curves.len(), "unavailable": unavailable }))
}

fn human_metrics_cmd(c: &Common) -> Result<serde_json::Value> {
    let records = load_manifest(&c.manifest)?;
    let report = Report::new(None, &records);
    if report.human.overall.is_none() {
        return Err(Error::Empty("no records carry vote statistics".into()));
    }
    write(&c.out.join("human_metrics.tsv"), report.to_tsv())?;
    write(&c.out.join("human_metrics.jsonl"), report.to_jsonl())?;
    let summary = report.human_summary();
    write(&c.out.join("human_metrics.txt"), &summary)?;
    print!("{summary}");
    Ok(json!({ "records": records.len() }))
}

fn export_plots_cmd(c: &Common, s: &Settings, checkpoint: Option<&Path>) -> Result<serde_json::Value> {
    let (report, records) = match checkpoint {
        Some(ck) => evaluation(c, s, ck)?,
        None => {
            let records = load_manifest(&c.manifest)?;
            (Report::new(None, &records), records)
        }
    };
    write(&c.out.join("report.tsv"), report.to_tsv())?;
    write(&c.out.join("report.jsonl"), report.to_jsonl())?;
    let mut hist = String::from("corpus\tvote_count\tsamples\tabsent\n");
    for (corpus, h) in &report.histograms {
        if h.absent {
            let _ = writeln!(hist, "{corpus}\t\t0\ttrue");
        }
        for (n, k) in &h.buckets {
            let _ = writeln!(hist, "{corpus}\t{n}\t{k}\tfalse");
        }
    }
    write(&c.out.join("vote_histogram.tsv"), hist)?;
    if let Some(e) = &report.evaluation {
        write(&c.out.join("predictions.tsv"), predictions_tsv(e))?;
    }
    Ok(json!({ "records": records.len() }))
}

/// Execute a parsed invocation.
pub fn run(cli: &Cli, argv: &[String]) -> Result<()> {
    let c = cli.command.common();
    fs::create_dir_all(&c.out).map_err(|e| Error::io(&c.out, e))?;
    let settings = Settings::load(c.config.as_deref())?;
    let started = unix_now();
    // Training defaults to one worker; everything else to all cores.
    let default_jobs = match cli.command {
        Command::Train(_) => 1,
        _ => rayon::current_num_threads(),
    };
    let jobs = c.jobs.unwrap_or(default_jobs).max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let result = pool.install(|| match &cli.command {
        Command::ExtractMfcc(c) => extract_mfcc_cmd(c),
        Command::Train(c) => train_cmd(c, &settings),
        Command::Evaluate { common, checkpoint } => evaluate_cmd(common, &settings, checkpoint),
        Command::Probe {
            common,
            layers,
            fraction,
        } => probe_cmd(common, &settings, layers, *fraction),
        Command::Sensitivity {
            common,
            checkpoint,
            kinds,
            levels,
            codec_path,
        } => sensitivity_cmd(
            common,
            &settings,
            checkpoint,
            kinds.as_deref(),
            levels.as_deref(),
            codec_path.as_deref(),
        ),
        Command::HumanMetrics(c) => human_metrics_cmd(c),
        Command::ExportPlots { common, checkpoint } => export_plots_cmd(common, &settings, checkpoint.as_deref()),
    })?;
    let record = json!({
        "command": cli.command.name(),
        "argv": argv,
        "version": env!("CARGO_PKG_VERSION"),
        "seed": c.seed,
        "jobs": jobs,
        "config": settings.to_json(),
        "result": result,
    });
    write(
        &c.out.join("run.json"),
        serde_json::to_string_pretty(&record).unwrap() + "\n",
    )?;
    let meta = json!({ "started_unix": started, "finished_unix": unix_now() });
    write(
        &c.out.join("metadata.json"),
        serde_json::to_string_pretty(&meta).unwrap() + "\n",
    )
}

/// Parse and run; returns the process exit code. Usage errors exit 2, data
/// errors print one `error: <category>: <message>` line and exit 1.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let argv: Vec<String> = argv.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match run(&cli, &argv) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}: {}", e.category(), e.to_string().replace('\n', " "));
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_parsing() {
        let s = Settings::parse(
            "# tiny\nencoder = transformer\nhidden=8\nheads = 2\nencoder_layers = 1\nfeatures = 5, 21\nepochs = 3\n",
        )
        .unwrap();
        let cfg = s.predictor_config(16);
        assert_eq!(cfg.encoder, EncoderKind::Transformer);
        assert_eq!((cfg.hidden, cfg.heads, cfg.layers, cfg.input_dim), (8, 2, 1, 16));
        assert_eq!(cfg.fusion(), Some((5, 21)));
        assert_eq!(s.run_config(7).init_seed, 7);
        assert!(matches!(Settings::parse("nope = 1"), Err(Error::Parse { line: 1, .. })));
        assert!(Settings::parse("epochs = many").is_err());
        assert!(Settings::parse("justtext").is_err());
    }

    #[test]
    fn layer_lists() {
        assert_eq!(parse_layers("0,5, 21").unwrap(), [0, 5, 21]);
        assert_eq!(parse_layers("2-4,mfcc").unwrap(), [2, 3, 4, MFCC_LAYER]);
        assert!(parse_layers("4-2").is_err());
        assert!(parse_layers("").is_err());
    }

    #[test]
    fn probe_grid_entries() {
        let s = Settings::parse("probe_grid = bilstm:16:1, transformer:8:2:1").unwrap();
        assert_eq!(s.probe_grid[0].id(), "bilstm-h16-l1");
        assert_eq!(s.probe_grid[1].id(), "transformer-h8-a2-l1");
        assert!(Settings::parse("probe_grid = transformer:8").is_err());
    }

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(main_with_args(["sqa", "frobnicate"]), 2);
        assert_eq!(main_with_args(["sqa", "train"]), 2);
    }
}
