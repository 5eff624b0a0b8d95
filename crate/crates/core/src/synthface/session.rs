use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{derive_seed, render_sprite, Attribute, FactorVector, SpriteFrame};
use crate::error::{Error, Result};

/// One scheduled behavior: `attribute` ramps up to `intensity` over
/// `[start_frame, end_frame)` of one subject's stream.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Event {
    pub subject_id: u32,
    pub start_frame: u32,
    pub end_frame: u32,
    pub attribute: Attribute,
    pub intensity: f64,
}

impl Event {
    fn ramp_len(&self) -> u32 {
        let len = (self.end_frame - self.start_frame) as f64;
        ((0.1 * len).round() as u32).max(1)
    }

    /// Factor value contributed at `frame` (0 outside the interval).
    /// Linear ramps over 10% of the duration at each end.
    pub fn value_at(&self, frame: u32) -> f64 {
        if frame < self.start_frame || frame >= self.end_frame {
            return 0.0;
        }
        let r = self.ramp_len() as f64;
        let up = (frame - self.start_frame + 1) as f64 / r;
        let down = (self.end_frame - frame) as f64 / r;
        self.intensity * up.min(down).min(1.0)
    }
}

/// Evaluation label of a frame. A frame is positive for an attribute when
/// that attribute's factor exceeds half the event intensity; frames inside
/// an event but below that level are transitions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FrameLabel {
    Neutral,
    Transition,
    Positive(Attribute),
    Mixed,
}

impl FrameLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            FrameLabel::Neutral => "neutral",
            FrameLabel::Transition => "transition",
            FrameLabel::Positive(a) => a.name(),
            FrameLabel::Mixed => "mixed",
        }
    }
}

impl std::str::FromStr for FrameLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "neutral" => Ok(FrameLabel::Neutral),
            "transition" => Ok(FrameLabel::Transition),
            "mixed" => Ok(FrameLabel::Mixed),
            other => other.parse().map(FrameLabel::Positive),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SessionSchedule {
    pub subjects: u32,
    pub frames_per_subject: u32,
    pub events: Vec<Event>,
}

impl SessionSchedule {
    pub fn new(subjects: u32, frames_per_subject: u32, events: Vec<Event>) -> Result<Self> {
        let s = SessionSchedule { subjects, frames_per_subject, events };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.subjects == 0 || self.frames_per_subject == 0 {
            return Err(Error::validation("schedule needs at least one subject and one frame"));
        }
        for e in &self.events {
            if e.subject_id >= self.subjects {
                return Err(Error::validation(format!("event subject {} >= {} subjects", e.subject_id, self.subjects)));
            }
            if e.start_frame >= e.end_frame || e.end_frame > self.frames_per_subject {
                return Err(Error::validation(format!(
                    "event [{}, {}) outside [0, {})",
                    e.start_frame, e.end_frame, self.frames_per_subject
                )));
            }
            let (lo, hi) = e.attribute.range();
            if !(e.intensity > 0.0 && e.intensity >= lo && e.intensity <= hi) {
                return Err(Error::validation(format!(
                    "{} event intensity {} outside (0, {hi}]",
                    e.attribute, e.intensity
                )));
            }
        }
        for (i, a) in self.events.iter().enumerate() {
            for b in &self.events[i + 1..] {
                if a.subject_id == b.subject_id
                    && a.attribute == b.attribute
                    && a.start_frame < b.end_frame
                    && b.start_frame < a.end_frame
                {
                    return Err(Error::validation(format!(
                        "overlapping {} events for subject {}: [{}, {}) and [{}, {})",
                        a.attribute, a.subject_id, a.start_frame, a.end_frame, b.start_frame, b.end_frame
                    )));
                }
            }
        }
        Ok(())
    }

    /// One event per attribute per subject, each in its own third of the
    /// stream and never overlapping another, with durations in
    /// `[min_len, max_len]` and intensities in `[0.8, 1.0]`.
    pub fn random(subjects: u32, frames_per_subject: u32, min_len: u32, max_len: u32, seed: u64) -> Result<Self> {
        let segment = frames_per_subject / 3;
        if min_len == 0 || min_len > max_len || max_len + 4 > segment {
            return Err(Error::validation(format!(
                "event lengths [{min_len}, {max_len}] do not fit segments of {segment} frames"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, 0xE7]));
        let mut events = Vec::new();
        for subject in 0..subjects {
            let mut order = Attribute::ALL;
            order.shuffle(&mut rng);
            for (slot, attribute) in order.into_iter().enumerate() {
                let len = rng.random_range(min_len..=max_len);
                let base = slot as u32 * segment;
                let start = base + rng.random_range(2..=segment - len - 2);
                let intensity = (rng.random_range(0.8..=1.0f64) * 100.0).round() / 100.0;
                events.push(Event { subject_id: subject, start_frame: start, end_frame: start + len, attribute, intensity });
            }
        }
        SessionSchedule::new(subjects, frames_per_subject, events)
    }

    fn events_for(&self, subject: u32) -> impl Iterator<Item = &Event> {
        self.events.iter().filter(move |e| e.subject_id == subject)
    }

    /// Factor value of `attr` for `subject` at `frame`.
    pub fn factor_at(&self, subject: u32, frame: u32, attr: Attribute) -> f64 {
        self.events_for(subject)
            .filter(|e| e.attribute == attr)
            .map(|e| e.value_at(frame))
            .fold(0.0, f64::max)
    }

    pub fn label(&self, subject: u32, frame: u32) -> FrameLabel {
        let mut positive = None;
        let mut inside = false;
        for e in self.events_for(subject) {
            let v = e.value_at(frame);
            if v > 0.0 {
                inside = true;
            }
            if v > 0.5 * e.intensity {
                if positive.is_some_and(|a| a != e.attribute) {
                    return FrameLabel::Mixed;
                }
                positive = Some(e.attribute);
            }
        }
        match (positive, inside) {
            (Some(a), _) => FrameLabel::Positive(a),
            (None, true) => FrameLabel::Transition,
            (None, false) => FrameLabel::Neutral,
        }
    }
}

/// Identity seed and pose of a subject, fixed for the whole session.
pub(crate) fn subject_appearance(rng_seed: u64, subject: u32) -> (u64, f64, f64) {
    let identity = derive_seed(&[rng_seed, 1, subject as u64]);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[rng_seed, 2, subject as u64]));
    let dx = rng.random_range(-0.5..=0.5);
    let dy = rng.random_range(-0.5..=0.5);
    (identity, dx, dy)
}

/// Render every frame of every subject, subject-major.
pub fn generate_session(schedule: &SessionSchedule, size: usize, base_noise: f64, rng_seed: u64) -> Result<Vec<SpriteFrame>> {
    schedule.validate()?;
    let mut frames = Vec::with_capacity((schedule.subjects * schedule.frames_per_subject) as usize);
    for subject in 0..schedule.subjects {
        let (identity_seed, pose_dx, pose_dy) = subject_appearance(rng_seed, subject);
        for frame in 0..schedule.frames_per_subject {
            let factors = FactorVector::new(
                identity_seed,
                schedule.factor_at(subject, frame, Attribute::Smile),
                schedule.factor_at(subject, frame, Attribute::Yawn),
                schedule.factor_at(subject, frame, Attribute::EyeClosure),
                pose_dx,
                pose_dy,
                derive_seed(&[rng_seed, 3, subject as u64, frame as u64]),
                base_noise,
            )?;
            let mut sprite = render_sprite(&factors, size)?;
            sprite.subject_id = subject;
            sprite.frame_index = frame;
            frames.push(sprite);
        }
    }
    Ok(frames)
}
