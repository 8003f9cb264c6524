//! Applicant timelines: percentage segments, behaviour classes and stages.

use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TimelineError {
    #[error("call window invalid: need open < close <= extension close")]
    InvalidCall,
    #[error("{0} lies outside the call window")]
    OutOfWindow(DateTime<Utc>),
    #[error("percentage {0} outside [0, 100]")]
    PercentOutOfRange(f64),
    #[error("user {user_id} is missing milestone {milestone}")]
    MissingMilestone { user_id: u64, milestone: &'static str },
}

/// Registration, first action, last action and submission times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineRecord {
    pub user_id: u64,
    pub t0: Option<DateTime<Utc>>,
    pub t1: Option<DateTime<Utc>>,
    pub t2: Option<DateTime<Utc>>,
    pub t3: Option<DateTime<Utc>>,
}

impl TimelineRecord {
    /// Milestones that are present must be nondecreasing.
    pub fn check_order(&self) -> Result<(), String> {
        let present: Vec<(usize, DateTime<Utc>)> = [self.t0, self.t1, self.t2, self.t3]
            .into_iter()
            .enumerate()
            .filter_map(|(i, t)| t.map(|t| (i, t)))
            .collect();
        for pair in present.windows(2) {
            if pair[0].1 > pair[1].1 {
                return Err(format!("t{} is after t{}", pair[0].0, pair[1].0));
            }
        }
        Ok(())
    }

    fn milestones(&self) -> Result<[DateTime<Utc>; 4], TimelineError> {
        let names = ["t0", "t1", "t2", "t3"];
        let ts = [self.t0, self.t1, self.t2, self.t3];
        let mut out = [DateTime::<Utc>::UNIX_EPOCH; 4];
        for i in 0..4 {
            out[i] = ts[i].ok_or(TimelineError::MissingMilestone {
                user_id: self.user_id,
                milestone: names[i],
            })?;
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallWindow {
    pub open: DateTime<Utc>,
    pub close: DateTime<Utc>,
    pub extension_close: DateTime<Utc>,
}

impl CallWindow {
    pub fn new(
        open: DateTime<Utc>,
        close: DateTime<Utc>,
        extension_close: DateTime<Utc>,
    ) -> Result<Self, TimelineError> {
        if !(open < close && close <= extension_close) {
            return Err(TimelineError::InvalidCall);
        }
        Ok(CallWindow {
            open,
            close,
            extension_close,
        })
    }

    fn check(&self, ts: DateTime<Utc>) -> Result<(), TimelineError> {
        if ts < self.open || ts > self.extension_close {
            return Err(TimelineError::OutOfWindow(ts));
        }
        Ok(())
    }
}

pub fn to_percent(ts: DateTime<Utc>, call: &CallWindow) -> Result<f64, TimelineError> {
    call.check(ts)?;
    let span = (call.extension_close - call.open).num_milliseconds() as f64;
    let at = (ts - call.open).num_milliseconds() as f64;
    Ok(100.0 * at / span)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Segment {
    S0,
    S1,
    S2,
    S3,
    S4,
}

impl Segment {
    pub const ALL: [Segment; 5] = [Segment::S0, Segment::S1, Segment::S2, Segment::S3, Segment::S4];

    /// `[start, end)` in percent; S4 also includes 100.
    pub fn bounds(self) -> (f64, f64) {
        match self {
            Segment::S0 => (0.0, 20.0),
            Segment::S1 => (20.0, 40.0),
            Segment::S2 => (40.0, 60.0),
            Segment::S3 => (60.0, 90.0),
            Segment::S4 => (90.0, 100.0),
        }
    }
}

impl fmt::Display for Segment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

pub fn assign_segment(percent: f64) -> Result<Segment, TimelineError> {
    if !(0.0..=100.0).contains(&percent) {
        return Err(TimelineError::PercentOutOfRange(percent));
    }
    Ok(if percent < 20.0 {
        Segment::S0
    } else if percent < 40.0 {
        Segment::S1
    } else if percent < 60.0 {
        Segment::S2
    } else if percent < 90.0 {
        Segment::S3
    } else {
        Segment::S4
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BehaviourClass {
    A,
    B,
    C,
    D,
    E,
    F,
    G,
    H,
    Other,
}

impl BehaviourClass {
    pub fn alias(self) -> &'static str {
        match self {
            BehaviourClass::A => "EverythingEarly",
            BehaviourClass::B => "QuiteEarlyAndQuick",
            BehaviourClass::C | BehaviourClass::E | BehaviourClass::F | BehaviourClass::G => "Cautious",
            BehaviourClass::D => "VeryCautious",
            BehaviourClass::H => "EverythingLastMinute",
            BehaviourClass::Other => "Other",
        }
    }

    pub fn from_segments(s: [Segment; 4]) -> Self {
        use Segment::*;
        match s {
            [S1, S3, S3, S3] => BehaviourClass::A,
            [S2, S2, S2, S2] => BehaviourClass::B,
            [S2, S3, S3, S3] => BehaviourClass::C,
            [S2, S3, S4, S4] => BehaviourClass::D,
            [S3, S3, S3, S3] => BehaviourClass::E,
            [S3, S3, S4, S4] => BehaviourClass::F,
            [S3, S4, S4, S4] => BehaviourClass::G,
            [S4, S4, S4, S4] => BehaviourClass::H,
            _ => BehaviourClass::Other,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BehaviourAssignment {
    pub user_id: u64,
    pub segments: [Segment; 4],
    pub class: BehaviourClass,
    pub alias: &'static str,
}

pub fn classify_behaviour(
    timeline: &TimelineRecord,
    call: &CallWindow,
) -> Result<BehaviourAssignment, TimelineError> {
    let ts = timeline.milestones()?;
    let mut segments = [Segment::S0; 4];
    for (slot, t) in segments.iter_mut().zip(ts) {
        *slot = assign_segment(to_percent(t, call)?)?;
    }
    let class = BehaviourClass::from_segments(segments);
    Ok(BehaviourAssignment {
        user_id: timeline.user_id,
        segments,
        class,
        alias: class.alias(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Stage {
    Start = 1,
    Uploading = 2,
    Submission = 3,
    AfterSubmission = 4,
    Extension = 5,
}

impl Stage {
    pub fn id(self) -> u8 {
        self as u8
    }
}

pub fn assign_stage(
    ts: DateTime<Utc>,
    timeline: &TimelineRecord,
    call: &CallWindow,
) -> Result<Stage, TimelineError> {
    call.check(ts)?;
    let [_, t1, t2, t3] = timeline.milestones()?;
    Ok(if ts < t1 {
        Stage::Start
    } else if ts <= t2 {
        Stage::Uploading
    } else if ts <= t3 {
        Stage::Submission
    } else if ts <= call.close {
        Stage::AfterSubmission
    } else {
        Stage::Extension
    })
}
