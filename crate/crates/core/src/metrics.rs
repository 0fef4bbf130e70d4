//! Clip-level tagging F1, segment-based F1 and event-based F1, all
//! micro-averaged, plus per-class threshold tuning on a dev set.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cam::{decode_events, ClassThreshold, ThresholdSet};
use crate::labels::{ClassId, ClassVocab, EventInterval, WeakLabelSet};

/// Slack for comparing decimal second values against collars.
const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("prediction and reference clip sets differ (e.g. `{0}`)")]
    ClipSetMismatch(String),
    #[error("no duration for clip `{0}`")]
    MissingDuration(String),
    #[error("segment length must be positive, got {0}")]
    InvalidSegment(f64),
    #[error("collar must be positive, got {0}")]
    InvalidCollar(f64),
    #[error("class id {class} outside vocabulary of {n_classes}")]
    ClassOutOfRange { class: ClassId, n_classes: usize },
    #[error("empty dev set")]
    EmptyDevSet,
    #[error("dev clip `{0}` has no strong labels; segment/event tuning needs them")]
    MissingStrongLabels(String),
}

pub type Result<T> = std::result::Result<T, MetricError>;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Counts {
    pub fn add(&mut self, other: Counts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Clip,
    Segment,
    Event,
}

impl MetricKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::Clip => "clip",
            MetricKind::Segment => "segment",
            MetricKind::Event => "event",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metric: MetricKind,
    pub averaging: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub counts: Counts,
    pub per_class: Vec<Counts>,
}

impl EvalReport {
    fn from_counts(metric: MetricKind, averaging: &str, per_class: Vec<Counts>) -> Self {
        let mut total = Counts::default();
        for c in &per_class {
            total.add(*c);
        }
        EvalReport {
            metric,
            averaging: averaging.to_string(),
            precision: total.precision(),
            recall: total.recall(),
            f1: total.f1(),
            counts: total,
            per_class,
        }
    }

    /// Flat `key=value` lines.
    pub fn to_text(&self, vocab: Option<&ClassVocab>) -> String {
        let mut s = format!("# {}\n", self.averaging);
        s += &format!("metric={}\n", self.metric.as_str());
        s += &format!("precision={:.6}\n", self.precision);
        s += &format!("recall={:.6}\n", self.recall);
        s += &format!("f1={:.6}\n", self.f1);
        s += &format!(
            "tp={}\nfp={}\nfn={}\n",
            self.counts.tp, self.counts.fp, self.counts.fn_
        );
        for (c, counts) in self.per_class.iter().enumerate() {
            let name = vocab.map_or_else(|| c.to_string(), |v| v.name(c).to_string());
            s += &format!(
                "class.{name}.f1={:.6}\nclass.{name}.tp={}\nclass.{name}.fp={}\nclass.{name}.fn={}\n",
                counts.f1(),
                counts.tp,
                counts.fp,
                counts.fn_
            );
        }
        s
    }
}

fn check_same_clips<A, B>(
    pred: &BTreeMap<String, A>,
    reference: &BTreeMap<String, B>,
) -> Result<()> {
    if let Some(id) = pred.keys().find(|k| !reference.contains_key(*k)) {
        return Err(MetricError::ClipSetMismatch(id.clone()));
    }
    if let Some(id) = reference.keys().find(|k| !pred.contains_key(*k)) {
        return Err(MetricError::ClipSetMismatch(id.clone()));
    }
    Ok(())
}

fn check_class(class: ClassId, n_classes: usize) -> Result<()> {
    if class >= n_classes {
        Err(MetricError::ClassOutOfRange { class, n_classes })
    } else {
        Ok(())
    }
}

/// Tagging F1 micro-averaged over (clip, class) decisions.
pub fn clip_f1(
    pred: &BTreeMap<String, WeakLabelSet>,
    reference: &BTreeMap<String, WeakLabelSet>,
    n_classes: usize,
) -> Result<EvalReport> {
    check_same_clips(pred, reference)?;
    let mut per_class = vec![Counts::default(); n_classes];
    for (id, r) in reference {
        let p = &pred[id];
        for &c in p.union(r) {
            check_class(c, n_classes)?;
            match (p.contains(&c), r.contains(&c)) {
                (true, true) => per_class[c].tp += 1,
                (true, false) => per_class[c].fp += 1,
                (false, true) => per_class[c].fn_ += 1,
                (false, false) => {}
            }
        }
    }
    Ok(EvalReport::from_counts(
        MetricKind::Clip,
        "micro-averaged over (clip, class) decisions",
        per_class,
    ))
}

pub fn segment_count(duration: f64, segment_s: f64) -> usize {
    ((duration / segment_s) - TIME_EPS).ceil().max(0.0) as usize
}

/// Activity of one class over fixed segments of a clip.
fn segment_activity(
    events: &[EventInterval],
    class: ClassId,
    duration: f64,
    segment_s: f64,
    clip: &str,
) -> Vec<bool> {
    let n = segment_count(duration, segment_s);
    let mut active = vec![false; n];
    for e in events.iter().filter(|e| e.class == class) {
        let (mut on, mut off) = (e.onset, e.offset);
        if off > duration || on < 0.0 {
            log::warn!(
                "clip `{clip}`: event {on:.3}-{off:.3} s clipped to duration {duration:.3} s"
            );
            on = on.max(0.0);
            off = off.min(duration);
        }
        if off <= on {
            continue;
        }
        for (k, slot) in active.iter_mut().enumerate() {
            let start = k as f64 * segment_s;
            let end = ((k + 1) as f64 * segment_s).min(duration);
            if on < end && off > start {
                *slot = true;
            }
        }
    }
    active
}

/// Segment-based F1: a (segment, class) pair is active when any event of the
/// class overlaps the segment with positive duration.
pub fn segment_f1(
    pred: &BTreeMap<String, Vec<EventInterval>>,
    reference: &BTreeMap<String, Vec<EventInterval>>,
    durations: &BTreeMap<String, f64>,
    segment_s: f64,
    n_classes: usize,
) -> Result<EvalReport> {
    if !segment_s.is_finite() || segment_s <= 0.0 {
        return Err(MetricError::InvalidSegment(segment_s));
    }
    check_same_clips(pred, reference)?;
    let mut per_class = vec![Counts::default(); n_classes];
    for (id, r) in reference {
        let p = &pred[id];
        let duration = *durations
            .get(id)
            .ok_or_else(|| MetricError::MissingDuration(id.clone()))?;
        for e in p.iter().chain(r) {
            check_class(e.class, n_classes)?;
        }
        for (c, counts) in per_class.iter_mut().enumerate() {
            let pa = segment_activity(p, c, duration, segment_s, id);
            let ra = segment_activity(r, c, duration, segment_s, id);
            for (a, b) in pa.into_iter().zip(ra) {
                match (a, b) {
                    (true, true) => counts.tp += 1,
                    (true, false) => counts.fp += 1,
                    (false, true) => counts.fn_ += 1,
                    (false, false) => {}
                }
            }
        }
    }
    Ok(EvalReport::from_counts(
        MetricKind::Segment,
        &format!("micro-averaged over {segment_s} s segments, classes and clips"),
        per_class,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventCollar {
    pub onset_s: f64,
    /// Offset tolerance is `max(onset_s, offset_pct × reference duration)`.
    pub offset_pct: f64,
}

impl Default for EventCollar {
    fn default() -> Self {
        EventCollar {
            onset_s: 0.2,
            offset_pct: 0.2,
        }
    }
}

fn event_counts(
    pred: &[EventInterval],
    reference: &[EventInterval],
    class: ClassId,
    collar: EventCollar,
) -> Counts {
    let mut p: Vec<&EventInterval> = pred.iter().filter(|e| e.class == class).collect();
    let mut r: Vec<&EventInterval> = reference.iter().filter(|e| e.class == class).collect();
    p.sort_by(|a, b| a.onset.total_cmp(&b.onset));
    r.sort_by(|a, b| a.onset.total_cmp(&b.onset));
    let mut used = vec![false; r.len()];
    let mut tp = 0;
    for e in &p {
        let hit = r.iter().enumerate().position(|(j, re)| {
            let offset_tol = collar.onset_s.max(collar.offset_pct * re.duration());
            !used[j]
                && (e.onset - re.onset).abs() <= collar.onset_s + TIME_EPS
                && (e.offset - re.offset).abs() <= offset_tol + TIME_EPS
        });
        if let Some(j) = hit {
            used[j] = true;
            tp += 1;
        }
    }
    Counts {
        tp,
        fp: (p.len() as u64) - tp,
        fn_: (r.len() as u64) - tp,
    }
}

/// Event-based F1 with greedy one-to-one matching in prediction onset order.
pub fn event_f1(
    pred: &BTreeMap<String, Vec<EventInterval>>,
    reference: &BTreeMap<String, Vec<EventInterval>>,
    collar: EventCollar,
    n_classes: usize,
) -> Result<EvalReport> {
    if !collar.onset_s.is_finite() || collar.onset_s <= 0.0 {
        return Err(MetricError::InvalidCollar(collar.onset_s));
    }
    check_same_clips(pred, reference)?;
    let mut per_class = vec![Counts::default(); n_classes];
    for (id, r) in reference {
        let p = &pred[id];
        for e in p.iter().chain(r) {
            check_class(e.class, n_classes)?;
        }
        for (c, counts) in per_class.iter_mut().enumerate() {
            counts.add(event_counts(p, r, c, collar));
        }
    }
    Ok(EvalReport::from_counts(
        MetricKind::Event,
        &format!(
            "micro-averaged; onset collar {} s, offset max({} s, {}% of duration)",
            collar.onset_s,
            collar.onset_s,
            collar.offset_pct * 100.0
        ),
        per_class,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TuneObjective {
    Tagging,
    Segment,
    Event,
}

/// Model outputs and references for one dev clip.
#[derive(Debug, Clone, PartialEq)]
pub struct DevClip {
    pub id: String,
    pub duration_s: f64,
    pub probs: Vec<f32>,
    /// Per-class CAM sequences.
    pub sequences: Vec<Vec<f32>>,
    pub weak: WeakLabelSet,
    pub strong: Option<Vec<EventInterval>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TuneConfig {
    pub objective: TuneObjective,
    pub time_resolution_s: f64,
    pub segment_s: f64,
    pub collar: EventCollar,
    /// Candidate median filter lengths (odd).
    pub max_median_len: usize,
}

impl TuneConfig {
    pub fn new(objective: TuneObjective, time_resolution_s: f64) -> Self {
        TuneConfig {
            objective,
            time_resolution_s,
            segment_s: 1.0,
            collar: EventCollar::default(),
            max_median_len: 31,
        }
    }
}

pub fn utterance_grid() -> Vec<f32> {
    (1..=99).map(|i| i as f32 / 100.0).collect()
}

/// 101 quantiles (0%, 1%, …, 100%) of `values`, linearly interpolated.
pub fn quantile_grid(values: &[f32]) -> Vec<f32> {
    if values.is_empty() {
        return vec![0.0];
    }
    let mut v = values.to_vec();
    v.sort_by(f32::total_cmp);
    (0..=100)
        .map(|i| {
            let pos = i as f64 / 100.0 * (v.len() - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            let frac = pos - lo as f64;
            (v[lo] as f64 * (1.0 - frac) + v[hi] as f64 * frac) as f32
        })
        .collect()
}

/// Per-class objective value of a single candidate threshold.
pub fn class_objective(
    dev: &[DevClip],
    class: ClassId,
    t: ClassThreshold,
    cfg: &TuneConfig,
) -> f64 {
    let mut counts = Counts::default();
    for clip in dev {
        counts.add(clip_class_counts(clip, class, t, cfg));
    }
    counts.f1()
}

fn clip_class_counts(
    clip: &DevClip,
    class: ClassId,
    t: ClassThreshold,
    cfg: &TuneConfig,
) -> Counts {
    let tagged = clip.probs[class] > t.utterance;
    let pred_events = if tagged && cfg.objective != TuneObjective::Tagging {
        decode_clipped(clip, class, t.frame, t.median_len, cfg.time_resolution_s)
    } else {
        Vec::new()
    };
    localized_counts(clip, class, tagged, &pred_events, cfg)
}

/// Decoded events clamped to the clip; the last output frame may run past it.
fn decode_clipped(
    clip: &DevClip,
    class: ClassId,
    frame: f32,
    median_len: usize,
    res: f64,
) -> Vec<EventInterval> {
    decode_events(&clip.sequences[class], class, frame, median_len, res)
        .expect("odd median length")
        .into_iter()
        .filter_map(|e| {
            let e = EventInterval::new(e.class, e.onset.max(0.0), e.offset.min(clip.duration_s));
            e.is_valid().then_some(e)
        })
        .collect()
}

fn localized_counts(
    clip: &DevClip,
    class: ClassId,
    tagged: bool,
    pred_events: &[EventInterval],
    cfg: &TuneConfig,
) -> Counts {
    match cfg.objective {
        TuneObjective::Tagging => {
            let present = clip.weak.contains(&class);
            Counts {
                tp: (tagged && present) as u64,
                fp: (tagged && !present) as u64,
                fn_: (!tagged && present) as u64,
            }
        }
        TuneObjective::Segment => {
            let r = clip.strong.as_deref().unwrap_or(&[]);
            let pa = segment_activity(pred_events, class, clip.duration_s, cfg.segment_s, &clip.id);
            let ra = segment_activity(r, class, clip.duration_s, cfg.segment_s, &clip.id);
            let mut c = Counts::default();
            for (a, b) in pa.into_iter().zip(ra) {
                c.tp += (a && b) as u64;
                c.fp += (a && !b) as u64;
                c.fn_ += (!a && b) as u64;
            }
            c
        }
        TuneObjective::Event => {
            let r = clip.strong.as_deref().unwrap_or(&[]);
            event_counts(pred_events, r, class, cfg.collar)
        }
    }
}

/// `true` if candidate `a` should replace incumbent `b` at equal objective.
fn prefer_on_tie(a: &ClassThreshold, b: &ClassThreshold) -> bool {
    (a.utterance, a.frame, std::cmp::Reverse(a.median_len))
        > (b.utterance, b.frame, std::cmp::Reverse(b.median_len))
}

/// Exhaustive per-class grid search. Ties go to the larger utterance
/// threshold, then the larger frame threshold, then the shorter filter.
pub fn tune_thresholds(
    dev: &[DevClip],
    n_classes: usize,
    cfg: &TuneConfig,
) -> Result<ThresholdSet> {
    if dev.is_empty() {
        return Err(MetricError::EmptyDevSet);
    }
    if cfg.objective != TuneObjective::Tagging {
        if let Some(c) = dev.iter().find(|c| c.strong.is_none()) {
            return Err(MetricError::MissingStrongLabels(c.id.clone()));
        }
    }
    let grid_u = utterance_grid();
    let mut classes = Vec::with_capacity(n_classes);
    for class in 0..n_classes {
        let all_values: Vec<f32> = dev
            .iter()
            .flat_map(|c| c.sequences[class].iter().copied())
            .collect();
        let (grid_f, medians) = if cfg.objective == TuneObjective::Tagging {
            (vec![quantile_grid(&all_values)[50]], vec![1])
        } else {
            (
                quantile_grid(&all_values),
                (1..=cfg.max_median_len.max(1)).step_by(2).collect(),
            )
        };
        let mut best: Option<(f64, ClassThreshold)> = None;
        for &frame in &grid_f {
            for &median_len in &medians {
                // Counts per clip when the class is tagged / not tagged.
                let per_clip: Vec<(Counts, Counts, f32)> = dev
                    .iter()
                    .map(|clip| {
                        let events = if cfg.objective == TuneObjective::Tagging {
                            Vec::new()
                        } else {
                            decode_clipped(clip, class, frame, median_len, cfg.time_resolution_s)
                        };
                        (
                            localized_counts(clip, class, true, &events, cfg),
                            localized_counts(clip, class, false, &[], cfg),
                            clip.probs[class],
                        )
                    })
                    .collect();
                for &utterance in &grid_u {
                    let mut counts = Counts::default();
                    for (on, off, p) in &per_clip {
                        counts.add(if *p > utterance { *on } else { *off });
                    }
                    let cand = ClassThreshold {
                        utterance,
                        frame,
                        median_len,
                    };
                    let f1 = counts.f1();
                    let replace = match &best {
                        None => true,
                        Some((bf, bt)) => f1 > *bf || (f1 == *bf && prefer_on_tie(&cand, bt)),
                    };
                    if replace {
                        best = Some((f1, cand));
                    }
                }
            }
        }
        classes.push(best.expect("non-empty grid").1);
    }
    Ok(ThresholdSet { classes })
}

/// Clip-level weak labels from strong ones.
pub fn weak_from_strong(events: &[EventInterval]) -> WeakLabelSet {
    events.iter().map(|e| e.class).collect::<BTreeSet<_>>()
}
