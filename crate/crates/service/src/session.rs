//! Session state machine, independent of HTTP and storage.

use pmsys_core::emotions::EmotionVector;
use pmsys_core::traits::{score_questionnaire, QuestionnaireDef, QuestionnaireScore};
use pmsys_core::{derive_seed, SystemStatus};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const STEPS: usize = 4;

/// One neutral task per step; the status behaviour is attached separately.
pub const PROMPTS: [&str; STEPS] = [
    "Enter the title of your most recent project and press Save.",
    "Type the name of the city you live in and press Save.",
    "Describe your favourite course in one sentence and press Save.",
    "Enter the year you expect to graduate and press Save.",
];

#[derive(Debug, Error, PartialEq)]
pub enum SessionError {
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Questionnaire,
    Simulation,
    Complete,
}

/// Raw slider positions, each in [0,1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sliders {
    pub anger: f64,
    pub disgust: f64,
    pub fear: f64,
    pub joy: f64,
    pub sadness: f64,
}

impl Sliders {
    pub fn as_array(&self) -> [f64; 5] {
        [self.anger, self.disgust, self.fear, self.joy, self.sadness]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmotionReport {
    pub step: usize,
    pub status: SystemStatus,
    pub sliders: Sliders,
    pub emotions: EmotionVector,
    pub latency_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Session {
    pub id: String,
    pub seq: u64,
    pub age: f64,
    pub order: [SystemStatus; STEPS],
    pub responses: Option<Vec<i64>>,
    pub score: Option<QuestionnaireScore>,
    /// Steps whose save has been attempted at least once.
    pub saved: Vec<usize>,
    pub reports: Vec<EmotionReport>,
}

/// Seeded session id and event order for the `seq`-th session.
pub fn script(seed: u64, seq: u64) -> (String, [SystemStatus; STEPS]) {
    let s = derive_seed(seed, seq);
    let mut order = SystemStatus::ALL;
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(s));
    (format!("s{s:016x}"), order)
}

pub fn validate_age(age: f64) -> Result<f64, SessionError> {
    if !age.is_finite() || age <= 0.0 || age > 150.0 {
        return Err(SessionError::Invalid(format!("age must be a positive number of years, got {age}")));
    }
    Ok(age)
}

impl Session {
    pub fn new(seed: u64, seq: u64, age: f64) -> Result<Self, SessionError> {
        let age = validate_age(age)?;
        let (id, order) = script(seed, seq);
        Ok(Session {
            id,
            seq,
            age,
            order,
            responses: None,
            score: None,
            saved: Vec::new(),
            reports: Vec::new(),
        })
    }

    pub fn phase(&self) -> Phase {
        if self.score.is_none() {
            Phase::Questionnaire
        } else if self.reports.len() < STEPS {
            Phase::Simulation
        } else {
            Phase::Complete
        }
    }

    /// 1-based step awaiting an emotion report.
    pub fn current_step(&self) -> Option<usize> {
        (self.phase() == Phase::Simulation).then(|| self.reports.len() + 1)
    }

    /// Returns the stored score when the same responses are submitted again.
    pub fn submit_questionnaire(
        &mut self,
        responses: &[i64],
        def: &QuestionnaireDef,
    ) -> Result<QuestionnaireScore, SessionError> {
        if let (Some(prev), Some(score)) = (&self.responses, self.score) {
            return if prev.as_slice() == responses {
                Ok(score)
            } else {
                Err(SessionError::Conflict("questionnaire already submitted".into()))
            };
        }
        let score =
            score_questionnaire(responses, def).map_err(|e| SessionError::Invalid(e.to_string()))?;
        self.responses = Some(responses.to_vec());
        self.score = Some(score);
        Ok(score)
    }

    fn expect_step(&self, step: usize) -> Result<SystemStatus, SessionError> {
        match self.current_step() {
            Some(s) if s == step => Ok(self.order[s - 1]),
            Some(s) => Err(SessionError::Conflict(format!("current step is {s}, not {step}"))),
            None => Err(SessionError::Conflict(format!("session is in the {:?} phase", self.phase()))),
        }
    }

    pub fn next_event(&self) -> Result<(usize, SystemStatus), SessionError> {
        let step = self.current_step().ok_or_else(|| {
            SessionError::Conflict(format!("no event available in the {:?} phase", self.phase()))
        })?;
        Ok((step, self.order[step - 1]))
    }

    /// Marks the step's save as attempted and returns its scripted status.
    pub fn attempt_save(&mut self, step: usize) -> Result<SystemStatus, SessionError> {
        let status = self.expect_step(step)?;
        if !self.saved.contains(&step) {
            self.saved.push(step);
        }
        Ok(status)
    }

    /// Records a slider report. Replaying the last accepted report returns it
    /// unchanged.
    pub fn submit_emotion(
        &mut self,
        step: usize,
        sliders: Sliders,
        latency_ms: Option<f64>,
    ) -> Result<EmotionReport, SessionError> {
        if let Some(prev) = self.reports.iter().find(|r| r.step == step) {
            return if prev.sliders == sliders {
                Ok(prev.clone())
            } else {
                Err(SessionError::Conflict(format!("step {step} already has a report")))
            };
        }
        let status = self.expect_step(step)?;
        if !self.saved.contains(&step) {
            return Err(SessionError::Conflict(format!("step {step} has not been saved yet")));
        }
        let raw = sliders.as_array();
        if raw.iter().any(|v| !v.is_finite() || !(0.0..=1.0).contains(v)) {
            return Err(SessionError::Invalid("slider values must lie in [0,1]".into()));
        }
        if latency_ms.is_some_and(|l| !l.is_finite() || l < 0.0) {
            return Err(SessionError::Invalid("latency_ms must be nonnegative".into()));
        }
        let emotions = EmotionVector::normalize(raw).map_err(|e| SessionError::Invalid(e.to_string()))?;
        let report = EmotionReport {
            step,
            status,
            sliders,
            emotions,
            latency_ms,
        };
        self.reports.push(report.clone());
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sliders(v: [f64; 5]) -> Sliders {
        Sliders {
            anger: v[0],
            disgust: v[1],
            fear: v[2],
            joy: v[3],
            sadness: v[4],
        }
    }

    #[test]
    fn scripts_are_seeded_permutations() {
        let (a, oa) = script(7, 0);
        let (b, ob) = script(7, 1);
        assert_ne!(a, b);
        assert_eq!(script(7, 0), (a, oa));
        for o in [oa, ob] {
            let mut s = o.to_vec();
            s.sort();
            assert_eq!(s, SystemStatus::ALL);
        }
    }

    #[test]
    fn full_walk() {
        let def = QuestionnaireDef::bundled();
        let mut s = Session::new(1, 0, 30.0).unwrap();
        assert!(s.next_event().is_err());
        let score = s.submit_questionnaire(&vec![3; def.items().len()], &def).unwrap();
        assert!(score.traits.as_array().iter().all(|v| *v == 0.5));
        assert_eq!(s.submit_questionnaire(&vec![3; def.items().len()], &def).unwrap(), score);
        assert!(s.submit_questionnaire(&vec![4; def.items().len()], &def).is_err());
        for step in 1..=STEPS {
            assert_eq!(s.next_event().unwrap().0, step);
            assert!(matches!(
                s.submit_emotion(step, sliders([1.0, 0.0, 0.0, 0.0, 0.0]), None),
                Err(SessionError::Conflict(_))
            ));
            s.attempt_save(step).unwrap();
            let r = s.submit_emotion(step, sliders([0.4, 0.6, 0.0, 0.0, 0.0]), Some(900.0)).unwrap();
            assert_eq!(r.emotions.as_array(), [0.4, 0.6, 0.0, 0.0, 0.0]);
            assert_eq!(s.submit_emotion(step, sliders([0.4, 0.6, 0.0, 0.0, 0.0]), Some(900.0)).unwrap(), r);
        }
        assert_eq!(s.phase(), Phase::Complete);
        assert!(s.next_event().is_err());
    }

    #[test]
    fn rejects_bad_input() {
        assert!(Session::new(1, 0, 0.0).is_err());
        let def = QuestionnaireDef::bundled();
        let mut s = Session::new(1, 0, 22.0).unwrap();
        let mut r = vec![3; def.items().len()];
        r[0] = 9;
        assert!(matches!(s.submit_questionnaire(&r, &def), Err(SessionError::Invalid(_))));
        s.submit_questionnaire(&vec![2; def.items().len()], &def).unwrap();
        assert!(s.attempt_save(2).is_err());
        s.attempt_save(1).unwrap();
        assert!(matches!(
            s.submit_emotion(1, sliders([1.5, 0.0, 0.0, 0.0, 0.0]), None),
            Err(SessionError::Invalid(_))
        ));
        let r = s.submit_emotion(1, sliders([0.0; 5]), None).unwrap();
        assert_eq!(r.emotions, EmotionVector::UNIFORM);
    }
}
