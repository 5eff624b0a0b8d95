//! Configuration, persistence and the staged pipeline:
//! `synth → keyframes → train → encode → attributes → detect → report`.
//!
//! Every stage reads and writes only files under the output directory, so
//! each can be rerun on its own:
//!
//! | stage        | reads                                        | writes |
//! |--------------|----------------------------------------------|--------|
//! | `synth`      | config (optional schedule CSV)               | `frames/*.pgm`, `schedule.csv`, `ground_truth.csv` |
//! | `keyframes`  | frames                                       | `key_gestures.csv` |
//! | `train`      | frames, `key_gestures.csv`                   | `split.csv`, `model.ckpt`, `loss_history.csv` |
//! | `encode`     | frames, `model.ckpt`                         | `latent_traces.csv` |
//! | `attributes` | `latent_traces.csv`, `ground_truth.csv`      | `attribute_<name>.txt` |
//! | `detect`     | traces, attribute vectors, ground truth      | `detection_report.csv`, `matched_filter_scores.csv` |
//! | `report`     | all of the above                             | `reconstruction_grid.pgm`, `transfer_<name>.pgm`, `metrics.csv` |
//!
//! Labels from `ground_truth.csv` are read only by `attributes`, `detect`
//! and `report`; training sees key-frame pixels alone.

mod checkpoint;
mod config;
mod files;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, load_checkpoint_for, save_checkpoint, Checkpoint,
    ManifestEntry, MAGIC, VERSION,
};
pub use config::{load_config, RunConfig};
pub use files::{export_image_grid, read_schedule, tile_images, write_schedule, SCHEDULE_HEADER, SEPARATOR_LEVEL};

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::info;

use crate::error::{Error, Result};
use crate::keygesture::{extract_key_gestures, read_key_gestures, write_key_gestures, KeyGestureEvent, Patch};
use crate::latentlab::{
    choose_epsilon, detect_signature, estimate_attribute_vector, flag_anomalies, matched_filter_events,
    matched_filter_scores, read_attribute_vector, read_latent_traces, roc_auc, write_attribute_vector,
    write_detection_report, write_latent_traces, AttributeVector, Centering, LabeledEncoding, ReportRow, SubjectTrace,
};
use crate::synthface::io::{
    ground_truth_rows, read_ground_truth, read_pgm, sprite_path, write_ground_truth, write_pgm, GroundTruthRow,
};
use crate::synthface::{derive_seed, generate_session, measure_factor, Attribute, FrameLabel, SessionSchedule};
use crate::vaegan::{fit, images_to_tensor, tensor_to_images, write_loss_history, LatentCode, ModelTriple};

/// Pipeline stages in execution order.
pub const STAGES: [&str; 7] = ["synth", "keyframes", "train", "encode", "attributes", "detect", "report"];

/// Columns of the reconstruction and transfer grids.
const GRID_COLUMNS: usize = 10;

/// Process exit status for an error: 1 validation, 2 runtime abort,
/// 3 insufficient support.
pub fn exit_code(e: &Error) -> i32 {
    match e.root() {
        Error::InsufficientSupport { .. } => 3,
        Error::Validation(_)
        | Error::Parse { .. }
        | Error::DegeneratePatch { .. }
        | Error::BadMagic
        | Error::UnsupportedVersion(_)
        | Error::Truncated { .. }
        | Error::ManifestMismatch(_) => 1,
        Error::Overflow { .. } | Error::TrainingAbort { .. } | Error::Io(_) | Error::Stage { .. } => 2,
    }
}

fn in_stage<T>(stage: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Stage { .. } => e,
        e => Error::Stage { stage, source: Box::new(e) },
    })
}

/// File locations under one output directory.
#[derive(Clone, Debug)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }
    pub fn frames(&self) -> PathBuf {
        self.root.join("frames")
    }
    pub fn config(&self) -> PathBuf {
        self.root.join("config.txt")
    }
    pub fn schedule(&self) -> PathBuf {
        self.root.join("schedule.csv")
    }
    pub fn ground_truth(&self) -> PathBuf {
        self.root.join("ground_truth.csv")
    }
    pub fn key_gestures(&self) -> PathBuf {
        self.root.join("key_gestures.csv")
    }
    pub fn split(&self) -> PathBuf {
        self.root.join("split.csv")
    }
    pub fn checkpoint(&self) -> PathBuf {
        self.root.join("model.ckpt")
    }
    pub fn loss_history(&self) -> PathBuf {
        self.root.join("loss_history.csv")
    }
    pub fn latent_traces(&self) -> PathBuf {
        self.root.join("latent_traces.csv")
    }
    pub fn attribute(&self, attr: Attribute) -> PathBuf {
        self.root.join(format!("attribute_{attr}.txt"))
    }
    pub fn detection_report(&self) -> PathBuf {
        self.root.join("detection_report.csv")
    }
    pub fn matched_filter_scores(&self) -> PathBuf {
        self.root.join("matched_filter_scores.csv")
    }
    pub fn reconstruction_grid(&self) -> PathBuf {
        self.root.join("reconstruction_grid.pgm")
    }
    pub fn transfer_grid(&self, attr: Attribute) -> PathBuf {
        self.root.join(format!("transfer_{attr}.pgm"))
    }
    pub fn metrics(&self) -> PathBuf {
        self.root.join("metrics.csv")
    }
}

/// Frames of a session as read back from disk, subject-major.
pub struct FrameSet {
    pub size: usize,
    pub frames_per_subject: u32,
    pub pixels: Vec<Vec<f64>>,
}

impl FrameSet {
    pub fn get(&self, subject: u32, frame: u32) -> &[f64] {
        &self.pixels[(subject * self.frames_per_subject + frame) as usize]
    }
}

pub fn load_frames(cfg: &RunConfig, layout: &Layout) -> Result<FrameSet> {
    let mut pixels = Vec::with_capacity((cfg.subjects * cfg.frames_per_subject) as usize);
    for s in 0..cfg.subjects {
        for f in 0..cfg.frames_per_subject {
            let (w, h, px) = read_pgm(&sprite_path(&layout.frames(), s, f))?;
            if w != cfg.sprite_size || h != cfg.sprite_size {
                return Err(Error::validation(format!(
                    "frame s{s}_f{f} is {w}×{h}, config expects {0}×{0}",
                    cfg.sprite_size
                )));
            }
            pixels.push(px);
        }
    }
    Ok(FrameSet { size: cfg.sprite_size, frames_per_subject: cfg.frames_per_subject, pixels })
}

/// Schedule from the config's CSV, or a random one drawn from the seed.
pub fn resolve_schedule(cfg: &RunConfig) -> Result<SessionSchedule> {
    match &cfg.schedule {
        Some(p) => read_schedule(p, cfg.subjects, cfg.frames_per_subject),
        None => SessionSchedule::random(cfg.subjects, cfg.frames_per_subject, cfg.event_min_len, cfg.event_max_len, cfg.seed),
    }
}

pub fn stage_synth(cfg: &RunConfig, layout: &Layout) -> Result<()> {
    fs::create_dir_all(layout.frames())?;
    fs::write(layout.config(), cfg.to_text())?;
    let schedule = resolve_schedule(cfg)?;
    let frames = generate_session(&schedule, cfg.sprite_size, cfg.base_noise, cfg.seed)?;
    for f in &frames {
        write_pgm(&sprite_path(&layout.frames(), f.subject_id, f.frame_index), f.size, f.size, &f.pixels)?;
    }
    write_schedule(&layout.schedule(), &schedule)?;
    write_ground_truth(&layout.ground_truth(), &ground_truth_rows(&frames, |s, t| schedule.label(s, t)))?;
    info!("synth: {} frames, {} events", frames.len(), schedule.events.len());
    Ok(())
}

pub fn stage_keyframes(cfg: &RunConfig, layout: &Layout) -> Result<Vec<KeyGestureEvent>> {
    let frames = load_frames(cfg, layout)?;
    let mut events = Vec::new();
    for s in 0..cfg.subjects {
        let stream: Vec<(u32, Patch)> = (0..cfg.frames_per_subject)
            .map(|f| Ok((f, Patch::new(frames.size, frames.size, frames.get(s, f).to_vec())?)))
            .collect::<Result<_>>()?;
        events.extend(extract_key_gestures(s, &stream, cfg.tau, cfg.max_templates)?.events);
    }
    write_key_gestures(&layout.key_gestures(), &events)?;
    info!("keyframes: {} of {} frames", events.len(), frames.pixels.len());
    Ok(events)
}

/// Whether a key frame is withheld from training. Deterministic in the seed.
pub fn is_holdout(seed: u64, fraction: f64, subject: u32, frame: u32) -> bool {
    let h = derive_seed(&[seed, 0x401D, subject as u64, frame as u64]);
    ((h >> 11) as f64 / (1u64 << 53) as f64) < fraction
}

const SPLIT_HEADER: &str = "subject_id,frame_index,split";

fn read_split(path: &Path) -> Result<Vec<(u32, u32, bool)>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let perr = || Error::Parse { path: path.display().to_string(), line: i + 1, message: "bad split row".into() };
        let c: Vec<&str> = line.split(',').collect();
        if c.len() != 3 {
            return Err(perr());
        }
        let held = match c[2] {
            "holdout" => true,
            "train" => false,
            _ => return Err(perr()),
        };
        out.push((c[0].parse().map_err(|_| perr())?, c[1].parse().map_err(|_| perr())?, held));
    }
    Ok(out)
}

pub fn stage_train(cfg: &RunConfig, layout: &Layout) -> Result<ModelTriple<f32>> {
    let frames = load_frames(cfg, layout)?;
    let keys = read_key_gestures(&layout.key_gestures())?;
    let mut split = Vec::new();
    writeln!(split, "{SPLIT_HEADER}")?;
    let mut train = Vec::new();
    for k in &keys {
        let held = is_holdout(cfg.seed, cfg.holdout_fraction, k.subject_id, k.frame_index);
        writeln!(split, "{},{},{}", k.subject_id, k.frame_index, if held { "holdout" } else { "train" })?;
        if !held {
            train.push(frames.get(k.subject_id, k.frame_index));
        }
    }
    fs::write(layout.split(), split)?;
    if train.is_empty() {
        return Err(Error::validation("no key frames left for training"));
    }
    let data = images_to_tensor::<f32>(&train, frames.size)?;
    let training = cfg.training();
    let ckpt = layout.checkpoint();
    let (model, history) = fit(&data, &training, |tr, losses| {
        let n = losses.len().max(1) as f64;
        let mean = |f: fn(&crate::vaegan::LossBreakdown) -> f64| losses.iter().map(f).sum::<f64>() / n;
        info!(
            "train: epoch {} l_prior {:.4} l_like {:.4} l_gan {:.4}",
            tr.epoch,
            mean(|l| l.l_prior),
            mean(|l| l.l_like),
            mean(|l| l.l_gan)
        );
        save_checkpoint(&ckpt, &tr.model, &training, tr.epoch, tr.step)
    })?;
    if training.epochs == 0 {
        save_checkpoint(&ckpt, &model, &training, 0, 0)?;
    }
    write_loss_history(&layout.loss_history(), &history)?;
    info!("train: {} images, {} steps", train.len(), history.len());
    Ok(model)
}

pub fn stage_encode(cfg: &RunConfig, layout: &Layout) -> Result<Vec<SubjectTrace>> {
    let model = load_checkpoint_for(&layout.checkpoint(), &cfg.architecture())?.model;
    let frames = load_frames(cfg, layout)?;
    let mut traces = Vec::new();
    for s in 0..cfg.subjects {
        let imgs: Vec<&[f64]> = (0..cfg.frames_per_subject).map(|f| frames.get(s, f)).collect();
        let mus = model.encode_mu(&imgs)?;
        traces.push(SubjectTrace::new(s, (0..cfg.frames_per_subject).zip(mus).collect())?);
    }
    write_latent_traces(&layout.latent_traces(), &traces)?;
    Ok(traces)
}

/// Attribute vectors are estimated on even-numbered subjects; odd-numbered
/// subjects are kept for evaluation.
pub fn is_estimation_subject(subject: u32) -> bool {
    subject.is_multiple_of(2)
}

/// Positive when labeled with `attr`, negative when neutral or labeled
/// with another attribute; transitions and mixed frames are unlabeled.
pub fn attribute_label(label: FrameLabel, attr: Attribute) -> Option<bool> {
    match label {
        FrameLabel::Positive(a) => Some(a == attr),
        FrameLabel::Neutral => Some(false),
        FrameLabel::Transition | FrameLabel::Mixed => None,
    }
}

fn label_map(rows: &[GroundTruthRow]) -> HashMap<(u32, u32), FrameLabel> {
    rows.iter().map(|r| ((r.subject_id, r.frame_index), r.label)).collect()
}

pub fn stage_attributes(cfg: &RunConfig, layout: &Layout) -> Result<Vec<AttributeVector>> {
    let traces = read_latent_traces(&layout.latent_traces())?;
    let labels = label_map(&read_ground_truth(&layout.ground_truth())?);
    let mut out = Vec::new();
    for attr in Attribute::ALL {
        let encodings: Vec<LabeledEncoding> = traces
            .iter()
            .filter(|tr| is_estimation_subject(tr.subject_id()))
            .flat_map(|tr| {
                tr.entries().iter().filter_map(|(t, z)| {
                    let label = labels.get(&(tr.subject_id(), *t)).copied()?;
                    let positive = attribute_label(label, attr)?;
                    Some(LabeledEncoding { z: z.clone(), subject_id: tr.subject_id(), positive })
                })
            })
            .collect();
        let v = estimate_attribute_vector(attr.name(), &encodings, cfg.strategy)?;
        write_attribute_vector(&layout.attribute(attr), &v)?;
        info!("attributes: {attr} ‖z_a‖ = {:.3} from {} positive, {} negative", v.norm(), v.n_pos, v.n_neg);
        out.push(v);
    }
    Ok(out)
}

const SCORES_HEADER: &str = "subject_id,frame_index,attribute,score,label";

/// ε as the configured percentile of the deviations of neutral frames.
fn neutral_epsilon(cfg: &RunConfig, traces: &[SubjectTrace], labels: &HashMap<(u32, u32), FrameLabel>) -> Result<f64> {
    choose_epsilon(traces, |s, t| labels.get(&(s, t)) == Some(&FrameLabel::Neutral), cfg.epsilon_percentile)
}

pub fn stage_detect(cfg: &RunConfig, layout: &Layout) -> Result<()> {
    let traces = read_latent_traces(&layout.latent_traces())?;
    let labels = label_map(&read_ground_truth(&layout.ground_truth())?);
    let epsilon = neutral_epsilon(cfg, &traces, &labels)?;
    let mut rows = Vec::new();
    for tr in &traces {
        rows.extend(flag_anomalies(tr, epsilon)?.into_iter().map(|event| ReportRow { attribute: "-".into(), event }));
    }
    let mut scores = Vec::new();
    writeln!(scores, "{SCORES_HEADER}")?;
    for attr in Attribute::ALL {
        let v = read_attribute_vector(&layout.attribute(attr))?;
        let threshold = 0.5 * v.norm() * v.norm();
        for tr in &traces {
            for (t, s) in matched_filter_scores(tr, &v.z_a, cfg.centering)? {
                let label = labels.get(&(tr.subject_id(), t)).map_or("unknown", |l| l.as_str());
                writeln!(scores, "{},{t},{attr},{s},{label}", tr.subject_id())?;
            }
            for event in matched_filter_events(tr, &v.z_a, cfg.centering, threshold)? {
                rows.push(ReportRow { attribute: attr.name().into(), event });
            }
            for event in detect_signature(tr, &v.z_a, cfg.cos_min, cfg.norm_band)? {
                rows.push(ReportRow { attribute: attr.name().into(), event });
            }
        }
    }
    fs::write(layout.matched_filter_scores(), scores)?;
    write_detection_report(&layout.detection_report(), &rows)?;
    info!("detect: ε = {epsilon:.4}, {} report rows", rows.len());
    Ok(())
}

/// Evaluation of one attribute vector.
#[derive(Clone, Debug, PartialEq)]
pub struct AttributeMetrics {
    pub attribute: Attribute,
    pub norm: f64,
    /// ROC-AUC of per-subject-centered matched-filter scores on evaluation subjects.
    pub auc: f64,
    /// Held-out neutral frames whose read-back rose after adding `z_a`.
    pub transfer_increased: usize,
    pub transfer_total: usize,
}

/// Summary numbers of a run, also written to `metrics.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct Metrics {
    pub total_frames: usize,
    pub key_frames: usize,
    pub events_total: usize,
    pub events_covered: usize,
    pub train_frames: usize,
    pub holdout_frames: usize,
    pub recon_mse: f64,
    pub baseline_mse: f64,
    pub epsilon: f64,
    pub anomaly_recall: f64,
    pub false_flag_rate: f64,
    pub attributes: Vec<AttributeMetrics>,
}

impl Metrics {
    pub fn key_fraction(&self) -> f64 {
        self.key_frames as f64 / self.total_frames as f64
    }

    pub fn recon_ratio(&self) -> f64 {
        self.recon_mse / self.baseline_mse
    }

    pub fn attribute(&self, attr: Attribute) -> Option<&AttributeMetrics> {
        self.attributes.iter().find(|a| a.attribute == attr)
    }

    pub fn rows(&self) -> Vec<(String, String)> {
        let mut r = vec![
            ("total_frames".to_string(), self.total_frames.to_string()),
            ("key_frames".into(), self.key_frames.to_string()),
            ("key_fraction".into(), self.key_fraction().to_string()),
            ("events_total".into(), self.events_total.to_string()),
            ("events_covered".into(), self.events_covered.to_string()),
            ("train_frames".into(), self.train_frames.to_string()),
            ("holdout_frames".into(), self.holdout_frames.to_string()),
            ("recon_mse".into(), self.recon_mse.to_string()),
            ("baseline_mse".into(), self.baseline_mse.to_string()),
            ("recon_ratio".into(), self.recon_ratio().to_string()),
            ("epsilon".into(), self.epsilon.to_string()),
            ("anomaly_recall".into(), self.anomaly_recall.to_string()),
            ("false_flag_rate".into(), self.false_flag_rate.to_string()),
        ];
        for a in &self.attributes {
            r.push((format!("{}.norm", a.attribute), a.norm.to_string()));
            r.push((format!("{}.auc", a.attribute), a.auc.to_string()));
            r.push((format!("{}.transfer_increased", a.attribute), a.transfer_increased.to_string()));
            r.push((format!("{}.transfer_total", a.attribute), a.transfer_total.to_string()));
        }
        r
    }
}

fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

fn decode_codes(model: &ModelTriple<f32>, codes: Vec<Vec<f64>>) -> Result<Vec<Vec<f64>>> {
    let codes: Vec<LatentCode> = codes.into_iter().map(|z| LatentCode { z }).collect();
    Ok(tensor_to_images(&model.decode(&codes)?))
}

pub fn stage_report(cfg: &RunConfig, layout: &Layout) -> Result<Metrics> {
    let frames = load_frames(cfg, layout)?;
    let schedule = read_schedule(&layout.schedule(), cfg.subjects, cfg.frames_per_subject)?;
    let keys = read_key_gestures(&layout.key_gestures())?;
    let split = read_split(&layout.split())?;
    let model = load_checkpoint_for(&layout.checkpoint(), &cfg.architecture())?.model;
    let traces = read_latent_traces(&layout.latent_traces())?;
    let labels = label_map(&read_ground_truth(&layout.ground_truth())?);

    let key_set: BTreeSet<(u32, u32)> = keys.iter().map(|k| (k.subject_id, k.frame_index)).collect();
    let events_covered = schedule
        .events
        .iter()
        .filter(|e| key_set.range((e.subject_id, e.start_frame)..(e.subject_id, e.end_frame)).next().is_some())
        .count();

    // Reconstruction of held-out key frames against the training mean image.
    let train: Vec<&[f64]> = split.iter().filter(|r| !r.2).map(|r| frames.get(r.0, r.1)).collect();
    let held: Vec<&[f64]> = split.iter().filter(|r| r.2).map(|r| frames.get(r.0, r.1)).collect();
    let npx = frames.size * frames.size;
    let mut mean_image = vec![0.0; npx];
    for im in &train {
        for (m, p) in mean_image.iter_mut().zip(im.iter()) {
            *m += p / train.len() as f64;
        }
    }
    let (mut recon_mse, mut baseline_mse) = (f64::NAN, f64::NAN);
    if !held.is_empty() {
        let recon = decode_codes(&model, model.encode_mu(&held)?)?;
        recon_mse = held.iter().zip(&recon).map(|(a, b)| mse(a, b)).sum::<f64>() / held.len() as f64;
        baseline_mse = held.iter().map(|a| mse(a, &mean_image)).sum::<f64>() / held.len() as f64;
        let n = held.len().min(GRID_COLUMNS);
        let mut grid: Vec<Vec<f64>> = held[..n].iter().map(|im| im.to_vec()).collect();
        grid.extend(recon[..n].iter().cloned());
        export_image_grid(&grid, 2, n, &layout.reconstruction_grid())?;
    }

    // Anomaly flags against neutral and attribute-event frames.
    let epsilon = neutral_epsilon(cfg, &traces, &labels)?;
    let (mut pos_hit, mut pos_n, mut neu_hit, mut neu_n) = (0usize, 0usize, 0usize, 0usize);
    for tr in &traces {
        for e in flag_anomalies(tr, epsilon)? {
            match labels.get(&(e.subject_id, e.t)) {
                Some(FrameLabel::Positive(_)) => {
                    pos_n += 1;
                    pos_hit += e.flagged as usize;
                }
                Some(FrameLabel::Neutral) => {
                    neu_n += 1;
                    neu_hit += e.flagged as usize;
                }
                _ => {}
            }
        }
    }

    // Held-out neutral frames: evaluation subjects, never a training key frame.
    let train_keys: BTreeSet<(u32, u32)> = split.iter().filter(|r| !r.2).map(|r| (r.0, r.1)).collect();
    let candidates: Vec<(u32, u32)> = (0..cfg.subjects)
        .filter(|&s| !is_estimation_subject(s))
        .flat_map(|s| (0..cfg.frames_per_subject).map(move |f| (s, f)))
        .filter(|k| labels.get(k) == Some(&FrameLabel::Neutral) && !train_keys.contains(k))
        .collect();
    let n_transfer = cfg.transfer_frames.min(candidates.len());
    let chosen: Vec<(u32, u32)> =
        (0..n_transfer).map(|i| candidates[i * candidates.len() / n_transfer.max(1)]).collect();
    let by_subject: BTreeMap<u32, &SubjectTrace> = traces.iter().map(|t| (t.subject_id(), t)).collect();
    let code_of = |s: u32, f: u32| -> Result<Vec<f64>> {
        by_subject
            .get(&s)
            .and_then(|tr| tr.entries().iter().find(|(t, _)| *t == f))
            .map(|(_, z)| z.clone())
            .ok_or_else(|| Error::validation(format!("no latent code for subject {s} frame {f}")))
    };
    let base_codes: Vec<Vec<f64>> = chosen.iter().map(|&(s, f)| code_of(s, f)).collect::<Result<_>>()?;
    let base_images = if base_codes.is_empty() { Vec::new() } else { decode_codes(&model, base_codes.clone())? };

    let mut attributes = Vec::new();
    for attr in Attribute::ALL {
        let v = read_attribute_vector(&layout.attribute(attr))?;
        let (mut pos, mut neg) = (Vec::new(), Vec::new());
        for tr in traces.iter().filter(|t| !is_estimation_subject(t.subject_id())) {
            for (t, s) in matched_filter_scores(tr, &v.z_a, Centering::PerSubject)? {
                match labels.get(&(tr.subject_id(), t)).and_then(|l| attribute_label(*l, attr)) {
                    Some(true) => pos.push(s),
                    Some(false) => neg.push(s),
                    None => {}
                }
            }
        }
        let auc = if pos.is_empty() || neg.is_empty() { f64::NAN } else { roc_auc(&pos, &neg)? };
        let mut increased = 0;
        if !base_codes.is_empty() {
            let plus: Vec<Vec<f64>> =
                base_codes.iter().map(|z| z.iter().zip(&v.z_a).map(|(a, b)| a + b).collect()).collect();
            let plus_images = decode_codes(&model, plus)?;
            increased = base_images
                .iter()
                .zip(&plus_images)
                .filter(|(b, p)| measure_factor(p, frames.size, attr) > measure_factor(b, frames.size, attr))
                .count();
            let n = plus_images.len().min(GRID_COLUMNS);
            let mut grid: Vec<Vec<f64>> = base_images[..n].to_vec();
            grid.extend(plus_images[..n].iter().cloned());
            export_image_grid(&grid, 2, n, &layout.transfer_grid(attr))?;
        }
        attributes.push(AttributeMetrics {
            attribute: attr,
            norm: v.norm(),
            auc,
            transfer_increased: increased,
            transfer_total: base_codes.len(),
        });
    }

    let ratio = |a: usize, b: usize| if b == 0 { f64::NAN } else { a as f64 / b as f64 };
    let metrics = Metrics {
        total_frames: frames.pixels.len(),
        key_frames: keys.len(),
        events_total: schedule.events.len(),
        events_covered,
        train_frames: train.len(),
        holdout_frames: held.len(),
        recon_mse,
        baseline_mse,
        epsilon,
        anomaly_recall: ratio(pos_hit, pos_n),
        false_flag_rate: ratio(neu_hit, neu_n),
        attributes,
    };
    write_metrics(&layout.metrics(), &metrics)?;
    for (k, v) in metrics.rows() {
        info!("report: {k} = {v}");
    }
    Ok(metrics)
}

pub fn write_metrics(path: &Path, m: &Metrics) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "metric,value")?;
    for (k, v) in m.rows() {
        writeln!(out, "{k},{v}")?;
    }
    fs::write(path, out)?;
    Ok(())
}

/// Run one named stage.
pub fn run_stage(stage: &str, cfg: &RunConfig) -> Result<()> {
    let layout = Layout::new(&cfg.output_dir);
    let name = STAGES.iter().copied().find(|s| *s == stage).ok_or_else(|| {
        Error::validation(format!("unknown stage `{stage}` (expected one of {})", STAGES.join(", ")))
    })?;
    let r = match name {
        "synth" => stage_synth(cfg, &layout),
        "keyframes" => stage_keyframes(cfg, &layout).map(drop),
        "train" => stage_train(cfg, &layout).map(drop),
        "encode" => stage_encode(cfg, &layout).map(drop),
        "attributes" => stage_attributes(cfg, &layout).map(drop),
        "detect" => stage_detect(cfg, &layout),
        _ => stage_report(cfg, &layout).map(drop),
    };
    in_stage(name, r)
}

/// All stages in order. Artifacts of completed stages stay on disk when a
/// later stage fails.
pub fn run_pipeline(cfg: &RunConfig) -> Result<Metrics> {
    cfg.validate()?;
    let layout = Layout::new(&cfg.output_dir);
    for stage in &STAGES[..STAGES.len() - 1] {
        run_stage(stage, cfg)?;
    }
    in_stage("report", stage_report(cfg, &layout))
}
