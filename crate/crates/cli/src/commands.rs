//! The work behind each subcommand. Every command writes its artifacts and a
//! manifest, and returns the paths it wrote.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use gam_core::fedsim::{round_log_csv, run_federated, Scheduler};
use gam_core::ingest::{
    build_participant, parse_events, EventFormat, ParseOptions, ParticipantData, ProcessedDataset, RegularSample,
};
use gam_core::model::{AttentionRecord, Model, Variant};
use gam_core::tensor::AdamState;
use gam_core::train::{
    curve_csv, evaluate, evaluate_each, train_pooled, Checkpoint, MetricsReport, PersonalResult, Split, StageResult,
};
use gam_core::util::fingerprint;
use rayon::prelude::*;
use serde::Serialize;

use crate::manifest::Manifest;
use crate::synth::{simulate, write_participants};
use crate::{CliError, RunConfig, SchedulerKind};

pub const GLOBAL_CHECKPOINT: &str = "global.ckpt.json";
pub const PERSONAL_DIR: &str = "personal";
pub const METRICS_DIR: &str = "metrics";

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_text(path: &Path, text: &str, written: &mut Vec<PathBuf>) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))?;
    written.push(path.to_path_buf());
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T, written: &mut Vec<PathBuf>) -> Result<(), CliError> {
    let json = serde_json::to_string_pretty(value).map_err(|e| CliError::Data(e.to_string()))?;
    write_text(path, &(json + "\n"), written)
}

fn write_checkpoint(path: &Path, ck: &Checkpoint, written: &mut Vec<PathBuf>) -> Result<(), CliError> {
    let f = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(f);
    ck.write_to(&mut w)?;
    w.flush().map_err(|e| CliError::io(path, e))?;
    written.push(path.to_path_buf());
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    let f = File::open(path).map_err(|_| CliError::Input(format!("checkpoint {} not found", path.display())))?;
    Ok(Checkpoint::read_from(BufReader::new(f))?)
}

pub fn read_dataset(path: &Path) -> Result<ProcessedDataset, CliError> {
    let f = File::open(path).map_err(|_| CliError::Input(format!("dataset {} not found", path.display())))?;
    Ok(ProcessedDataset::read_from(BufReader::new(f))?)
}

fn manifest_path(out: &Path) -> PathBuf {
    if out.is_dir() {
        out.join("manifest.json")
    } else {
        let mut s = out.as_os_str().to_owned();
        s.push(".manifest.json");
        PathBuf::from(s)
    }
}

#[allow(clippy::too_many_arguments)]
fn finish(
    command: &str,
    cfg: &RunConfig,
    out: &Path,
    inputs: &[PathBuf],
    outputs: &[PathBuf],
    volatile: &[PathBuf],
    started: Instant,
) -> Result<PathBuf, CliError> {
    let root = if out.is_dir() { out } else { out.parent().unwrap_or(Path::new("")) };
    let m = Manifest::new(
        command,
        root,
        cfg.seed,
        &fingerprint(cfg),
        inputs,
        outputs,
        volatile,
        started.elapsed().as_secs_f64(),
    )?;
    let path = manifest_path(out);
    m.write(&path)?;
    Ok(path)
}

/// Writes synthetic event files.
pub fn synth(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let started = Instant::now();
    let people = simulate(&cfg.synth)?;
    let written = write_participants(out, &people)?;
    finish("synth", cfg, out, &[], &written, &[], started)?;
    Ok(written)
}

/// Pairs of (training, optional testing) event files found in `dir`.
pub fn event_files(dir: &Path) -> Result<Vec<(PathBuf, Option<PathBuf>)>, CliError> {
    let entries = std::fs::read_dir(dir).map_err(|_| CliError::Input(format!("event directory {} not found", dir.display())))?;
    let mut found = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| CliError::io(dir, e))?.path();
        let (Some(stem), Some(ext)) = (path.file_stem().and_then(|s| s.to_str()), path.extension().and_then(|s| s.to_str())) else {
            continue;
        };
        if EventFormat::from_extension(ext).is_none() {
            continue;
        }
        if let Some(pid) = stem.strip_suffix("-training") {
            let test = dir.join(format!("{pid}-testing.{ext}"));
            found.push((path.clone(), test.exists().then_some(test)));
        }
    }
    found.sort();
    if found.is_empty() {
        return Err(CliError::Input(format!("no *-training.csv or *-training.jsonl files in {}", dir.display())));
    }
    Ok(found)
}

fn read_stream(path: &Path, options: &ParseOptions) -> Result<gam_core::ingest::EventStream, CliError> {
    let ext = path.extension().and_then(|s| s.to_str()).unwrap_or("");
    let format = EventFormat::from_extension(ext).ok_or_else(|| CliError::Input(format!("unknown event format {}", path.display())))?;
    let f = File::open(path).map_err(|e| CliError::io(path, e))?;
    parse_events(BufReader::new(f), format, options).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Regularizes, normalizes and windows every participant's event files.
pub fn preprocess(cfg: &RunConfig, events: &Path, out: &Path) -> Result<ProcessedDataset, CliError> {
    let started = Instant::now();
    let files = event_files(events)?;
    let options = ParseOptions {
        catalog: cfg.ingest.catalog(),
        strict: cfg.ingest.strict,
    };
    let participants = files
        .par_iter()
        .map(|(train, test)| {
            let stream = read_stream(train, &options)?;
            let test = test.as_deref().map(|t| read_stream(t, &options)).transpose()?;
            build_participant(stream, test, &cfg.ingest).map_err(|e| CliError::Data(format!("{}: {e}", train.display())))
        })
        .collect::<Result<Vec<ParticipantData>, CliError>>()?;
    let dataset = ProcessedDataset::new(cfg.ingest.clone(), participants);
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    let f = File::create(out).map_err(|e| CliError::io(out, e))?;
    let mut w = BufWriter::new(f);
    dataset.write_to(&mut w)?;
    w.flush().map_err(|e| CliError::io(out, e))?;
    let inputs: Vec<PathBuf> = files.iter().flat_map(|(a, b)| std::iter::once(a.clone()).chain(b.clone())).collect();
    finish("preprocess", cfg, out, &inputs, &[out.to_path_buf()], &[], started)?;
    Ok(dataset)
}

/// The model and training config for a dataset.
fn prepare(cfg: &RunConfig, dataset: &ProcessedDataset) -> Result<RunConfig, CliError> {
    let mut cfg = cfg.clone();
    cfg.sync_model(&dataset.config)?;
    cfg.train.validate()?;
    Ok(cfg)
}

fn save_personal(
    out: &Path,
    personal: &[PersonalResult],
    data_fp: &str,
    written: &mut Vec<PathBuf>,
) -> Result<(), CliError> {
    let dir = out.join(PERSONAL_DIR);
    create_dir(&dir)?;
    for p in personal {
        let ck = stage_checkpoint(&p.stage, Some(&p.participant), data_fp);
        write_checkpoint(&dir.join(format!("{}.ckpt.json", p.participant)), &ck, written)?;
        write_text(&dir.join(format!("{}.curve.csv", p.participant)), &curve_csv(&p.stage.curve), written)?;
    }
    Ok(())
}

fn stage_checkpoint(stage: &StageResult, participant: Option<&str>, data_fp: &str) -> Checkpoint {
    Checkpoint::new(
        &stage.best,
        participant,
        data_fp,
        Some(stage.best_optimizer.clone()),
        stage.best_step,
        stage.best_rmse,
    )
}

/// Global and personalized metrics on validation and (if present) test windows.
fn write_reports(
    out: &Path,
    global: &Model,
    personal: &[PersonalResult],
    dataset: &ProcessedDataset,
    written: &mut Vec<PathBuf>,
) -> Result<BTreeMap<String, MetricsReport>, CliError> {
    let dir = out.join(METRICS_DIR);
    create_dir(&dir)?;
    let g = dataset.glucose_index();
    let fp = &dataset.fingerprint;
    let data = &dataset.participants;
    let model_for = |p: &ParticipantData| -> &Model {
        personal
            .iter()
            .find(|r| r.participant == p.id)
            .map(|r| &r.stage.best)
            .unwrap_or(global)
    };
    let mut reports = BTreeMap::new();
    reports.insert("global_valid".to_string(), evaluate(global, data, Split::Valid, g, fp)?);
    reports.insert("personal_valid".to_string(), evaluate_each(data, Split::Valid, g, fp, model_for)?);
    let with_test: Vec<ParticipantData> = data.iter().filter(|p| !p.test.is_empty()).cloned().collect();
    if !with_test.is_empty() {
        reports.insert("global_test".to_string(), evaluate(global, &with_test, Split::Test, g, fp)?);
        reports.insert("personal_test".to_string(), evaluate_each(&with_test, Split::Test, g, fp, model_for)?);
    }
    for (name, r) in &reports {
        write_json(&dir.join(format!("{name}.json")), r, written)?;
    }
    Ok(reports)
}

#[derive(Debug)]
pub struct TrainSummary {
    pub best_step: usize,
    pub best_rmse: f64,
    pub reports: BTreeMap<String, MetricsReport>,
    pub outputs: Vec<PathBuf>,
}

/// Pooled two-stage training.
pub fn train(cfg: &RunConfig, dataset_path: &Path, out: &Path) -> Result<TrainSummary, CliError> {
    let started = Instant::now();
    let dataset = read_dataset(dataset_path)?;
    let cfg = prepare(cfg, &dataset)?;
    let g = dataset.glucose_index();
    let outcome = train_pooled(&dataset.participants, &cfg.model, &cfg.train, g)?;
    create_dir(out)?;
    let mut written = Vec::new();
    let fp = &dataset.fingerprint;
    write_checkpoint(&out.join(GLOBAL_CHECKPOINT), &stage_checkpoint(&outcome.global, None, fp), &mut written)?;
    write_text(&out.join("global.curve.csv"), &curve_csv(&outcome.global.curve), &mut written)?;
    save_personal(out, &outcome.personal, fp, &mut written)?;
    let reports = write_reports(out, &outcome.global.best, &outcome.personal, &dataset, &mut written)?;
    finish("train", &cfg, out, &[dataset_path.to_path_buf()], &written, &[], started)?;
    Ok(TrainSummary {
        best_step: outcome.global.best_step,
        best_rmse: outcome.global.best_rmse,
        reports,
        outputs: written,
    })
}

/// Federated rounds followed by personalized fine-tuning.
pub fn train_fl(cfg: &RunConfig, dataset_path: &Path, out: &Path) -> Result<TrainSummary, CliError> {
    let started = Instant::now();
    let dataset = read_dataset(dataset_path)?;
    let cfg = prepare(cfg, &dataset)?;
    let g = dataset.glucose_index();
    let scheduler = match cfg.scheduler {
        SchedulerKind::Serial => Scheduler::Serial,
        SchedulerKind::Concurrent => Scheduler::Concurrent(cfg.workers),
    };
    let outcome = run_federated(&dataset.participants, &cfg.model, &cfg.fl, &cfg.train, g, scheduler)?;
    create_dir(out)?;
    let mut written = Vec::new();
    let fp = &dataset.fingerprint;
    let global = &outcome.global;
    let ck = Checkpoint::new(&global.best, None, fp, None::<AdamState>, global.best_round, global.best_rmse);
    write_checkpoint(&out.join(GLOBAL_CHECKPOINT), &ck, &mut written)?;
    let log = out.join("round_log.csv");
    write_text(&log, &round_log_csv(&global.rounds), &mut written)?;
    save_personal(out, &outcome.personal, fp, &mut written)?;
    let reports = write_reports(out, &global.best, &outcome.personal, &dataset, &mut written)?;
    finish("train-fl", &cfg, out, &[dataset_path.to_path_buf()], &written, &[log], started)?;
    Ok(TrainSummary {
        best_step: global.best_round,
        best_rmse: global.best_rmse,
        reports,
        outputs: written,
    })
}

/// Models to score: a single checkpoint for everyone, or a run directory
/// whose personal checkpoints override the global one.
pub struct ModelSource {
    pub global: Option<Model>,
    pub personal: BTreeMap<String, Model>,
    pub files: Vec<PathBuf>,
}

impl ModelSource {
    pub fn model_for(&self, id: &str) -> Option<&Model> {
        self.personal.get(id).or(self.global.as_ref())
    }
}

fn check_compatible(ck: &Checkpoint, path: &Path, dataset: &ProcessedDataset) -> Result<Model, CliError> {
    if ck.data_fingerprint != dataset.fingerprint {
        return Err(CliError::Fingerprint(format!(
            "{} was trained on data {} but the dataset is {}",
            path.display(),
            ck.data_fingerprint,
            dataset.fingerprint
        )));
    }
    let c = &dataset.config;
    if ck.model.n_attributes != c.attributes.len() || ck.model.history != c.history || ck.model.horizon != c.horizon {
        return Err(CliError::Fingerprint(format!(
            "{} expects N={}, T={}, W={} but the dataset has N={}, T={}, W={}",
            path.display(),
            ck.model.n_attributes,
            ck.model.history,
            ck.model.horizon,
            c.attributes.len(),
            c.history,
            c.horizon
        )));
    }
    Ok(ck.to_model()?)
}

pub fn load_models(path: &Path, dataset: &ProcessedDataset) -> Result<ModelSource, CliError> {
    let mut src = ModelSource {
        global: None,
        personal: BTreeMap::new(),
        files: Vec::new(),
    };
    let load = |file: PathBuf, src: &mut ModelSource| -> Result<(), CliError> {
        let ck = read_checkpoint(&file)?;
        let model = check_compatible(&ck, &file, dataset)?;
        match ck.participant {
            Some(id) => {
                src.personal.insert(id, model);
            }
            None => src.global = Some(model),
        }
        src.files.push(file);
        Ok(())
    };
    if path.is_dir() {
        let global = path.join(GLOBAL_CHECKPOINT);
        if global.exists() {
            load(global, &mut src)?;
        }
        let dir = path.join(PERSONAL_DIR);
        if dir.is_dir() {
            let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)
                .map_err(|e| CliError::io(&dir, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.to_string_lossy().ends_with(".ckpt.json"))
                .collect();
            files.sort();
            for f in files {
                load(f, &mut src)?;
            }
        }
    } else {
        load(path.to_path_buf(), &mut src)?;
    }
    if src.files.is_empty() {
        return Err(CliError::Input(format!("no checkpoints under {}", path.display())));
    }
    Ok(src)
}

fn participants_with_models<'a>(
    dataset: &'a ProcessedDataset,
    models: &ModelSource,
    split: Split,
) -> Result<Vec<&'a ParticipantData>, CliError> {
    let chosen: Vec<&ParticipantData> = dataset
        .participants
        .iter()
        .filter(|p| models.model_for(&p.id).is_some() && !split.of(p).is_empty())
        .collect();
    if chosen.is_empty() {
        return Err(CliError::Data(format!("no participant has both a model and {} windows", split.as_str())));
    }
    Ok(chosen)
}

/// Scores checkpoints on a split.
pub fn evaluate_cmd(
    cfg: &RunConfig,
    dataset_path: &Path,
    checkpoint: &Path,
    split: Split,
    out: &Path,
) -> Result<MetricsReport, CliError> {
    let started = Instant::now();
    let dataset = read_dataset(dataset_path)?;
    let models = load_models(checkpoint, &dataset)?;
    let chosen: Vec<ParticipantData> = participants_with_models(&dataset, &models, split)?.into_iter().cloned().collect();
    let report = evaluate_each(&chosen, split, dataset.glucose_index(), &dataset.fingerprint, |p| {
        models.model_for(&p.id).expect("filtered above")
    })?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    let mut written = Vec::new();
    write_json(out, &report, &mut written)?;
    let mut inputs = vec![dataset_path.to_path_buf()];
    inputs.extend(models.files.iter().cloned());
    finish("evaluate", cfg, out, &inputs, &written, &[], started)?;
    Ok(report)
}

/// Writes one JSON line per (sample, timestep, layer, head).
pub fn export_attention(
    cfg: &RunConfig,
    dataset_path: &Path,
    checkpoint: &Path,
    participant: Option<&str>,
    split: Split,
    samples: usize,
    out: &Path,
) -> Result<usize, CliError> {
    let started = Instant::now();
    let dataset = read_dataset(dataset_path)?;
    let models = load_models(checkpoint, &dataset)?;
    let chosen = participants_with_models(&dataset, &models, split)?;
    let p = match participant {
        Some(id) => chosen
            .into_iter()
            .find(|p| p.id == id)
            .ok_or_else(|| CliError::Input(format!("participant {id} has no model or no {} windows", split.as_str())))?,
        None => chosen[0],
    };
    let model = models.model_for(&p.id).expect("filtered above");
    if !matches!(model.config.variant, Variant::Gam | Variant::GamTa) {
        return Err(CliError::Config(format!(
            "variant {} has no graph attention to export",
            model.config.variant.as_str()
        )));
    }
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    let mut text = String::new();
    let mut lines = 0;
    for sample in split.of(p).iter().take(samples) {
        let (_, snaps, _) = model.forward(sample)?;
        for rec in AttentionRecord::from_snapshots(sample, &snaps) {
            text.push_str(&serde_json::to_string(&rec).map_err(|e| CliError::Data(e.to_string()))?);
            text.push('\n');
            lines += 1;
        }
    }
    let mut written = Vec::new();
    write_text(out, &text, &mut written)?;
    let mut inputs = vec![dataset_path.to_path_buf()];
    inputs.extend(models.files.iter().cloned());
    finish("export-attention", cfg, out, &inputs, &written, &[], started)?;
    Ok(lines)
}

fn prediction_csv(model: &Model, p: &ParticipantData, samples: &[RegularSample], glucose: usize) -> Result<String, CliError> {
    let preds = model.predict(samples)?;
    let (mean, std) = p.glucose_stats(glucose);
    let mut text = String::from("participant,window_end_time,target_time,truth_mgdl,prediction_mgdl\n");
    for (s, z) in samples.iter().zip(preds) {
        text.push_str(&format!(
            "{},{},{},{},{}\n",
            p.id,
            s.window_end_time,
            s.target_time(),
            s.y * std + mean,
            z * std + mean
        ));
    }
    Ok(text)
}

/// Prediction-versus-truth curves, one CSV per participant.
pub fn plot_data(
    cfg: &RunConfig,
    dataset_path: &Path,
    checkpoint: &Path,
    split: Split,
    out: &Path,
) -> Result<Vec<PathBuf>, CliError> {
    let started = Instant::now();
    let dataset = read_dataset(dataset_path)?;
    let models = load_models(checkpoint, &dataset)?;
    let chosen = participants_with_models(&dataset, &models, split)?;
    create_dir(out)?;
    let mut written = Vec::new();
    for p in chosen {
        let model = models.model_for(&p.id).expect("filtered above");
        let text = prediction_csv(model, p, split.of(p), dataset.glucose_index())?;
        write_text(&out.join(format!("{}-{}.csv", p.id, split.as_str())), &text, &mut written)?;
    }
    let mut inputs = vec![dataset_path.to_path_buf()];
    inputs.extend(models.files.iter().cloned());
    finish("plot-data", cfg, out, &inputs, &written, &[], started)?;
    Ok(written)
}
