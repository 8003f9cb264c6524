//! Multinomial Naive Bayes polarity scoring with a derived neutral score.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lexicon::tokenize;

#[derive(Debug, Error)]
pub enum SentimentError {
    #[error("training corpus needs both pos and neg documents")]
    SingleLabel,
    #[error("unknown label {0:?} (expected pos or neg)")]
    UnknownLabel(String),
    #[error("train fraction {0} must leave at least one document on each side")]
    BadSplit(f64),
    #[error("corpus line {line}: {message}")]
    Corpus { line: u64, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Pos,
    Neg,
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Polarity::Pos => "pos",
            Polarity::Neg => "neg",
        })
    }
}

impl FromStr for Polarity {
    type Err = SentimentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_lowercase().as_str() {
            "pos" | "positive" | "1" => Ok(Polarity::Pos),
            "neg" | "negative" | "0" => Ok(Polarity::Neg),
            other => Err(SentimentError::UnknownLabel(other.to_string())),
        }
    }
}

/// `pos + neg = 1`; `neutral` stands alone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SentimentScores {
    pub pos: f64,
    pub neg: f64,
    pub neutral: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NbModel {
    /// word -> [ln P(w|pos), ln P(w|neg)]
    log_likelihood: HashMap<String, [f64; 2]>,
    priors: [f64; 2],
}

impl NbModel {
    pub fn priors(&self) -> (f64, f64) {
        (self.priors[0], self.priors[1])
    }

    pub fn vocabulary_size(&self) -> usize {
        self.log_likelihood.len()
    }
}

fn slot(p: Polarity) -> usize {
    match p {
        Polarity::Pos => 0,
        Polarity::Neg => 1,
    }
}

/// Add-one smoothed multinomial NB over [`tokenize`] output.
pub fn train_nb<S: AsRef<str>>(corpus: &[(S, Polarity)]) -> Result<NbModel, SentimentError> {
    let mut docs = [0usize; 2];
    let mut totals = [0usize; 2];
    let mut counts: HashMap<String, [usize; 2]> = HashMap::new();
    for (text, label) in corpus {
        let k = slot(*label);
        docs[k] += 1;
        for t in tokenize(text.as_ref()).tokens {
            counts.entry(t).or_default()[k] += 1;
            totals[k] += 1;
        }
    }
    if docs[0] == 0 || docs[1] == 0 {
        return Err(SentimentError::SingleLabel);
    }
    let v = counts.len() as f64;
    let denom = [totals[0] as f64 + v, totals[1] as f64 + v];
    let log_likelihood = counts
        .into_iter()
        .map(|(w, c)| {
            (
                w,
                [
                    ((c[0] as f64 + 1.0) / denom[0]).ln(),
                    ((c[1] as f64 + 1.0) / denom[1]).ln(),
                ],
            )
        })
        .collect();
    let n = (docs[0] + docs[1]) as f64;
    Ok(NbModel {
        log_likelihood,
        priors: [docs[0] as f64 / n, docs[1] as f64 / n],
    })
}

/// Posterior polarity; unknown tokens are ignored. Neutral is
/// `1 - |pos - neg|`, high when the two posteriors are close.
pub fn classify(text: &str, model: &NbModel) -> SentimentScores {
    let mut lp = [model.priors[0].ln(), model.priors[1].ln()];
    for t in tokenize(text).tokens {
        if let Some(ll) = model.log_likelihood.get(&t) {
            lp[0] += ll[0];
            lp[1] += ll[1];
        }
    }
    let m = lp[0].max(lp[1]);
    let e = [(lp[0] - m).exp(), (lp[1] - m).exp()];
    let z = e[0] + e[1];
    let pos = e[0] / z;
    let neg = e[1] / z;
    SentimentScores {
        pos,
        neg,
        neutral: 1.0 - (pos - neg).abs(),
    }
}

/// Collapses neutral onto the stronger polarity; exact ties go to `neg`.
pub fn relabel(scores: &SentimentScores) -> Polarity {
    if scores.pos > scores.neg {
        Polarity::Pos
    } else {
        Polarity::Neg
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HoldoutResult {
    pub train_size: usize,
    pub test_size: usize,
    pub correct: usize,
    pub accuracy: f64,
}

/// Shuffles with `seed`, trains on the leading `train_fraction`, scores the rest.
pub fn holdout_accuracy<S: AsRef<str> + Clone>(
    corpus: &[(S, Polarity)],
    train_fraction: f64,
    seed: u64,
) -> Result<HoldoutResult, SentimentError> {
    let n_train = (corpus.len() as f64 * train_fraction).round() as usize;
    if !(0.0..1.0).contains(&train_fraction) || n_train == 0 || n_train >= corpus.len() {
        return Err(SentimentError::BadSplit(train_fraction));
    }
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let train: Vec<(S, Polarity)> = order[..n_train].iter().map(|&i| corpus[i].clone()).collect();
    let model = train_nb(&train)?;
    let test = &order[n_train..];
    let correct = test
        .iter()
        .filter(|&&i| relabel(&classify(corpus[i].0.as_ref(), &model)) == corpus[i].1)
        .count();
    Ok(HoldoutResult {
        train_size: n_train,
        test_size: test.len(),
        correct,
        accuracy: correct as f64 / test.len() as f64,
    })
}

#[derive(Debug, Deserialize)]
struct CorpusRecord {
    text: String,
    label: String,
}

/// Reads a `text,label` CSV.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<(String, Polarity)>, SentimentError> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for record in reader.deserialize::<CorpusRecord>() {
        let record = record?;
        out.push((record.text, record.label.parse()?));
    }
    Ok(out)
}
