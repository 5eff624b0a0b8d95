//! Latent-space behavior analysis: per-subject baselines, deviation
//! flagging, attribute vectors and matched-filter detection.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

pub const DEFAULT_COS_MIN: f64 = 0.6;
pub const DEFAULT_NORM_BAND: (f64, f64) = (0.5, 2.0);
pub const DEFAULT_EPSILON_PERCENTILE: f64 = 95.0;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn check_dim(a: &[f64], b: &[f64], what: &str) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::validation(format!("{what}: dimension {} vs {}", a.len(), b.len())));
    }
    Ok(())
}

/// Coordinate-wise mean of equal-length vectors.
fn mean_of<'a>(vs: impl Iterator<Item = &'a [f64]>, dim: usize) -> (Vec<f64>, usize) {
    let mut acc = vec![0.0; dim];
    let mut n = 0;
    for v in vs {
        for (a, x) in acc.iter_mut().zip(v) {
            *a += x;
        }
        n += 1;
    }
    if n > 0 {
        acc.iter_mut().for_each(|a| *a /= n as f64);
    }
    (acc, n)
}

/// One subject's latent codes over time, with the baseline `μ_i` computed
/// at construction.
#[derive(Clone, Debug, PartialEq)]
pub struct SubjectTrace {
    subject_id: u32,
    entries: Vec<(u32, Vec<f64>)>,
    baseline: Vec<f64>,
}

impl SubjectTrace {
    pub fn new(subject_id: u32, entries: Vec<(u32, Vec<f64>)>) -> Result<Self> {
        let Some(first) = entries.first() else {
            return Err(Error::validation(format!("subject {subject_id}: empty trace")));
        };
        let dim = first.1.len();
        if dim == 0 {
            return Err(Error::validation("latent codes must have dimension ≥ 1"));
        }
        for w in entries.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(Error::validation(format!(
                    "subject {subject_id}: frame indices not strictly increasing at {}",
                    w[1].0
                )));
            }
        }
        if let Some((t, _)) = entries.iter().find(|(_, z)| z.len() != dim || z.iter().any(|v| !v.is_finite())) {
            return Err(Error::validation(format!("subject {subject_id}: bad latent code at frame {t}")));
        }
        let (baseline, _) = mean_of(entries.iter().map(|(_, z)| z.as_slice()), dim);
        Ok(SubjectTrace { subject_id, entries, baseline })
    }

    pub fn subject_id(&self) -> u32 {
        self.subject_id
    }

    pub fn entries(&self) -> &[(u32, Vec<f64>)] {
        &self.entries
    }

    pub fn dim(&self) -> usize {
        self.baseline.len()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `μ_i`, the mean code over the whole trace.
    pub fn baseline(&self) -> &[f64] {
        &self.baseline
    }

    /// `(t, ‖z(t) − μ_i‖)` for every entry.
    pub fn deviation_norms(&self) -> Vec<(u32, f64)> {
        self.entries
            .iter()
            .map(|(t, z)| (*t, z.iter().zip(&self.baseline).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()))
            .collect()
    }
}

/// `μ_i` of a trace.
pub fn subject_mean(trace: &SubjectTrace) -> Vec<f64> {
    trace.baseline().to_vec()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DetectionRule {
    NormEpsilon,
    MatchedFilter,
    SignatureMatch,
}

impl DetectionRule {
    pub fn as_str(self) -> &'static str {
        match self {
            DetectionRule::NormEpsilon => "norm_epsilon",
            DetectionRule::MatchedFilter => "matched_filter",
            DetectionRule::SignatureMatch => "signature_match",
        }
    }
}

impl FromStr for DetectionRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "norm_epsilon" => Ok(DetectionRule::NormEpsilon),
            "matched_filter" => Ok(DetectionRule::MatchedFilter),
            "signature_match" => Ok(DetectionRule::SignatureMatch),
            other => Err(Error::validation(format!("unknown detection rule `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetectionEvent {
    pub subject_id: u32,
    pub t: u32,
    pub score: f64,
    pub flagged: bool,
    pub rule: DetectionRule,
}

/// Flag entries whose distance from the subject baseline exceeds `epsilon`.
pub fn flag_anomalies(trace: &SubjectTrace, epsilon: f64) -> Result<Vec<DetectionEvent>> {
    if !(epsilon >= 0.0) {
        return Err(Error::validation(format!("epsilon = {epsilon} must be ≥ 0")));
    }
    Ok(trace
        .deviation_norms()
        .into_iter()
        .map(|(t, n)| DetectionEvent {
            subject_id: trace.subject_id,
            t,
            score: n,
            flagged: n > epsilon,
            rule: DetectionRule::NormEpsilon,
        })
        .collect())
}

/// `p`-th percentile with linear interpolation between order statistics
/// (rank `p/100 · (n − 1)`).
pub fn percentile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::validation("percentile of an empty set"));
    }
    if !(p > 0.0 && p < 100.0) {
        return Err(Error::validation(format!("percentile p = {p} must lie in (0, 100)")));
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let rank = p / 100.0 * (v.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = (lo + 1).min(v.len() - 1);
    let frac = rank - lo as f64;
    Ok(v[lo] + frac * (v[hi] - v[lo]))
}

/// ε as the `p`-th percentile of `‖z − μ_i‖` over the entries selected by
/// `reference(subject_id, t)`.
pub fn choose_epsilon(traces: &[SubjectTrace], reference: impl Fn(u32, u32) -> bool, p: f64) -> Result<f64> {
    let devs: Vec<f64> = traces
        .iter()
        .flat_map(|tr| tr.deviation_norms().into_iter().filter(|&(t, _)| reference(tr.subject_id, t)).map(|(_, n)| n))
        .collect();
    percentile(&devs, p)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Strategy {
    DiffOfMeans,
    PositiveMeanOnly,
    PerSubjectCentered,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::DiffOfMeans => "diff_of_means",
            Strategy::PositiveMeanOnly => "positive_mean_only",
            Strategy::PerSubjectCentered => "per_subject_centered",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "diff_of_means" => Ok(Strategy::DiffOfMeans),
            "positive_mean_only" => Ok(Strategy::PositiveMeanOnly),
            "per_subject_centered" => Ok(Strategy::PerSubjectCentered),
            other => Err(Error::validation(format!("unknown strategy `{other}`"))),
        }
    }
}

/// An encoding with its subject and attribute label.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledEncoding {
    pub z: Vec<f64>,
    pub subject_id: u32,
    pub positive: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttributeVector {
    pub name: String,
    pub z_a: Vec<f64>,
    pub strategy: Strategy,
    pub n_pos: usize,
    pub n_neg: usize,
}

impl AttributeVector {
    pub fn norm(&self) -> f64 {
        norm(&self.z_a)
    }
}

/// Estimate an attribute vector from labeled encodings.
///
/// `per_subject_centered` averages `z − μ_s` over positives, where `μ_s`
/// is the mean of subject `s`'s negatives; positives of subjects without
/// negatives are left out and not counted in `n_pos`.
pub fn estimate_attribute_vector(name: &str, encodings: &[LabeledEncoding], strategy: Strategy) -> Result<AttributeVector> {
    let dim = encodings.first().map_or(0, |e| e.z.len());
    if encodings.iter().any(|e| e.z.len() != dim) {
        return Err(Error::validation("estimate_attribute_vector: mixed code dimensions"));
    }
    let pos = || encodings.iter().filter(|e| e.positive);
    let neg = || encodings.iter().filter(|e| !e.positive);
    let insufficient = |n_pos, n_neg| Error::InsufficientSupport { strategy: strategy.as_str().to_string(), n_pos, n_neg };
    let (z_a, n_pos, n_neg) = match strategy {
        Strategy::PositiveMeanOnly => {
            let (m, n) = mean_of(pos().map(|e| e.z.as_slice()), dim);
            if n == 0 {
                return Err(insufficient(0, neg().count()));
            }
            (m, n, neg().count())
        }
        Strategy::DiffOfMeans => {
            let (mp, np) = mean_of(pos().map(|e| e.z.as_slice()), dim);
            let (mn, nn) = mean_of(neg().map(|e| e.z.as_slice()), dim);
            if np == 0 || nn == 0 {
                return Err(insufficient(np, nn));
            }
            (mp.iter().zip(&mn).map(|(a, b)| a - b).collect(), np, nn)
        }
        Strategy::PerSubjectCentered => {
            let mut baselines = std::collections::BTreeMap::new();
            let mut subjects: Vec<u32> = neg().map(|e| e.subject_id).collect();
            subjects.sort_unstable();
            subjects.dedup();
            for s in subjects {
                let (m, _) = mean_of(neg().filter(|e| e.subject_id == s).map(|e| e.z.as_slice()), dim);
                baselines.insert(s, m);
            }
            let mut acc = vec![0.0; dim];
            let mut np = 0;
            for e in pos() {
                if let Some(mu) = baselines.get(&e.subject_id) {
                    for ((a, z), m) in acc.iter_mut().zip(&e.z).zip(mu) {
                        *a += z - m;
                    }
                    np += 1;
                }
            }
            let nn = neg().count();
            if np == 0 || nn == 0 {
                return Err(insufficient(np, nn));
            }
            acc.iter_mut().for_each(|a| *a /= np as f64);
            (acc, np, nn)
        }
    };
    if z_a.iter().any(|v| !v.is_finite()) {
        return Err(Error::overflow("estimate_attribute_vector"));
    }
    Ok(AttributeVector { name: name.to_string(), z_a, strategy, n_pos, n_neg })
}

/// `z + α·z_a`
pub fn apply_attribute(z: &[f64], z_a: &[f64], alpha: f64) -> Result<Vec<f64>> {
    check_dim(z, z_a, "apply_attribute")?;
    Ok(z.iter().zip(z_a).map(|(a, b)| a + alpha * b).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Centering {
    None,
    PerSubject,
}

impl Centering {
    pub fn as_str(self) -> &'static str {
        match self {
            Centering::None => "none",
            Centering::PerSubject => "per_subject",
        }
    }
}

impl FromStr for Centering {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Centering::None),
            "per_subject" => Ok(Centering::PerSubject),
            other => Err(Error::validation(format!("unknown centering `{other}`"))),
        }
    }
}

/// `(t, z_a · z)` or `(t, z_a · (z − μ_i))` for every entry.
pub fn matched_filter_scores(trace: &SubjectTrace, z_a: &[f64], centering: Centering) -> Result<Vec<(u32, f64)>> {
    check_dim(trace.baseline(), z_a, "matched_filter_scores")?;
    let offset = match centering {
        Centering::None => 0.0,
        Centering::PerSubject => dot(z_a, trace.baseline()),
    };
    Ok(trace.entries.iter().map(|(t, z)| (*t, dot(z_a, z) - offset)).collect())
}

/// Matched-filter scores as events, flagged when `score ≥ threshold`.
pub fn matched_filter_events(
    trace: &SubjectTrace,
    z_a: &[f64],
    centering: Centering,
    threshold: f64,
) -> Result<Vec<DetectionEvent>> {
    Ok(matched_filter_scores(trace, z_a, centering)?
        .into_iter()
        .map(|(t, score)| DetectionEvent {
            subject_id: trace.subject_id,
            t,
            score,
            flagged: score >= threshold,
            rule: DetectionRule::MatchedFilter,
        })
        .collect())
}

/// Flag frames whose deviation `d = z − μ_i` points along `z_a`
/// (`cos(d, z_a) ≥ cos_min`) with comparable length
/// (`‖d‖/‖z_a‖ ∈ norm_band`). The score is the cosine.
pub fn detect_signature(trace: &SubjectTrace, z_a: &[f64], cos_min: f64, norm_band: (f64, f64)) -> Result<Vec<DetectionEvent>> {
    check_dim(trace.baseline(), z_a, "detect_signature")?;
    if !(cos_min > 0.0 && cos_min <= 1.0) {
        return Err(Error::validation(format!("cos_min = {cos_min} must lie in (0, 1]")));
    }
    let (lo, hi) = norm_band;
    if !(lo > 0.0 && lo <= hi) {
        return Err(Error::validation(format!("norm_band [{lo}, {hi}] must satisfy 0 < lo ≤ hi")));
    }
    let za_norm = norm(z_a);
    if za_norm == 0.0 {
        return Err(Error::validation("detect_signature: attribute vector has zero norm"));
    }
    let mu = trace.baseline();
    Ok(trace
        .entries
        .iter()
        .map(|(t, z)| {
            let d: Vec<f64> = z.iter().zip(mu).map(|(a, b)| a - b).collect();
            let dn = norm(&d);
            let cos = if dn == 0.0 { 0.0 } else { dot(&d, z_a) / (dn * za_norm) };
            let ratio = dn / za_norm;
            DetectionEvent {
                subject_id: trace.subject_id,
                t: *t,
                score: cos,
                flagged: cos >= cos_min && (lo..=hi).contains(&ratio),
                rule: DetectionRule::SignatureMatch,
            }
        })
        .collect())
}

/// Area under the ROC curve: the probability that a random positive
/// scores above a random negative, ties counting one half.
pub fn roc_auc(positives: &[f64], negatives: &[f64]) -> Result<f64> {
    if positives.is_empty() || negatives.is_empty() {
        return Err(Error::validation("roc_auc needs at least one positive and one negative"));
    }
    let mut all: Vec<(f64, bool)> =
        positives.iter().map(|&s| (s, true)).chain(negatives.iter().map(|&s| (s, false))).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Sum of mid-ranks of positives (Mann–Whitney U).
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        let mid = (i + j + 1) as f64 / 2.0;
        rank_sum += mid * all[i..j].iter().filter(|x| x.1).count() as f64;
        i = j;
    }
    let (np, nn) = (positives.len() as f64, negatives.len() as f64);
    Ok((rank_sum - np * (np + 1.0) / 2.0) / (np * nn))
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse { path: path.display().to_string(), line, message: message.into() }
}

/// Latent trace CSV: `subject_id,frame_index,z_0,…,z_{D−1}`.
pub fn write_latent_traces(path: &Path, traces: &[SubjectTrace]) -> Result<()> {
    let dim = traces.first().map_or(0, |t| t.dim());
    let mut out = Vec::new();
    let zcols: Vec<String> = (0..dim).map(|d| format!("z_{d}")).collect();
    writeln!(out, "subject_id,frame_index,{}", zcols.join(","))?;
    for tr in traces {
        for (t, z) in &tr.entries {
            let zs: Vec<String> = z.iter().map(|v| v.to_string()).collect();
            writeln!(out, "{},{},{}", tr.subject_id, t, zs.join(","))?;
        }
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_latent_traces(path: &Path) -> Result<Vec<SubjectTrace>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| parse_err(path, 1, "empty file"))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 3 || cols[0] != "subject_id" || cols[1] != "frame_index" {
        return Err(parse_err(path, 1, "unexpected header"));
    }
    let dim = cols.len() - 2;
    let mut grouped: Vec<(u32, Vec<(u32, Vec<f64>)>)> = Vec::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        if line.trim().is_empty() {
            continue;
        }
        let c: Vec<&str> = line.split(',').collect();
        if c.len() != dim + 2 {
            return Err(parse_err(path, lineno, format!("expected {} columns", dim + 2)));
        }
        let s: u32 = c[0].parse().map_err(|_| parse_err(path, lineno, "bad subject_id"))?;
        let t: u32 = c[1].parse().map_err(|_| parse_err(path, lineno, "bad frame_index"))?;
        let z = c[2..]
            .iter()
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| parse_err(path, lineno, "bad latent coordinate"))?;
        match grouped.last_mut() {
            Some((gs, entries)) if *gs == s => entries.push((t, z)),
            _ => grouped.push((s, vec![(t, z)])),
        }
    }
    grouped.into_iter().map(|(s, e)| SubjectTrace::new(s, e)).collect()
}

/// Attribute vector file: `name,strategy,n_pos,n_neg` then the coordinates.
pub fn write_attribute_vector(path: &Path, v: &AttributeVector) -> Result<()> {
    let coords: Vec<String> = v.z_a.iter().map(|x| x.to_string()).collect();
    fs::write(path, format!("{},{},{},{}\n{}\n", v.name, v.strategy, v.n_pos, v.n_neg, coords.join(",")))?;
    Ok(())
}

pub fn read_attribute_vector(path: &Path) -> Result<AttributeVector> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let head: Vec<&str> = lines.next().unwrap_or("").split(',').collect();
    if head.len() != 4 {
        return Err(parse_err(path, 1, "expected name,strategy,n_pos,n_neg"));
    }
    let strategy = head[1].parse().map_err(|_| parse_err(path, 1, "bad strategy"))?;
    let n_pos = head[2].parse().map_err(|_| parse_err(path, 1, "bad n_pos"))?;
    let n_neg = head[3].parse().map_err(|_| parse_err(path, 1, "bad n_neg"))?;
    let z_a = lines
        .next()
        .ok_or_else(|| parse_err(path, 2, "missing coordinates"))?
        .split(',')
        .map(|v| v.parse::<f64>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| parse_err(path, 2, "bad coordinate"))?;
    Ok(AttributeVector { name: head[0].to_string(), z_a, strategy, n_pos, n_neg })
}

/// One detection report row; `attribute` is `-` for rules that do not use one.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub attribute: String,
    pub event: DetectionEvent,
}

pub const DETECTION_HEADER: &str = "subject_id,frame_index,attribute,rule,score,flagged";

pub fn write_detection_report(path: &Path, rows: &[ReportRow]) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "{DETECTION_HEADER}")?;
    for r in rows {
        let e = &r.event;
        writeln!(out, "{},{},{},{},{},{}", e.subject_id, e.t, r.attribute, e.rule.as_str(), e.score, e.flagged)?;
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_detection_report(path: &Path) -> Result<Vec<ReportRow>> {
    let text = fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            if line.trim() != DETECTION_HEADER {
                return Err(parse_err(path, 1, "unexpected header"));
            }
            continue;
        }
        let c: Vec<&str> = line.split(',').collect();
        if c.len() != 6 {
            return Err(parse_err(path, i + 1, "expected 6 columns"));
        }
        let bad = |m: &str| parse_err(path, i + 1, m);
        rows.push(ReportRow {
            attribute: c[2].to_string(),
            event: DetectionEvent {
                subject_id: c[0].parse().map_err(|_| bad("bad subject_id"))?,
                t: c[1].parse().map_err(|_| bad("bad frame_index"))?,
                rule: c[3].parse().map_err(|_| bad("bad rule"))?,
                score: c[4].parse().map_err(|_| bad("bad score"))?,
                flagged: c[5].parse().map_err(|_| bad("bad flagged"))?,
            },
        });
    }
    Ok(rows)
}
