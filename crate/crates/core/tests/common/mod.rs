//! Independent oracles and fixture generators shared by integration and
//! acceptance tests. Nothing here calls into the code under test except to
//! build input types.

#![allow(dead_code, clippy::needless_range_loop)]

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use pmsys_core::ingest::Post;
use pmsys_core::matching::{SocialProfile, UserRecord};
use pmsys_core::timeline::{BehaviourClass, Segment};
use pmsys_core::traits::{parse_questionnaire, QuestionnaireDef};
use pmsys_core::{FeatureRow, SystemStatus};

// ---------------------------------------------------------------- lexicon

/// Naive per-token scan: a token hits a category when any pattern of that
/// category equals it or is a stem (`abc*`) that it starts with.
pub fn naive_profile(
    tokens: &[String],
    categories: &[String],
    patterns: &BTreeMap<String, Vec<String>>,
) -> Vec<f64> {
    categories
        .iter()
        .map(|cat| {
            let hits = tokens
                .iter()
                .filter(|t| {
                    patterns.iter().any(|(p, cats)| {
                        cats.contains(cat)
                            && match p.strip_suffix('*') {
                                Some(stem) => t.starts_with(stem),
                                None => *t == p,
                            }
                    })
                })
                .count();
            if tokens.is_empty() {
                0.0
            } else {
                100.0 * hits as f64 / tokens.len() as f64
            }
        })
        .collect()
}

// ---------------------------------------------------------------- stats

/// Kendall tau-b from explicit pair enumeration.
pub fn tau_b_pairs(x: &[f64], y: &[f64]) -> f64 {
    let (mut c, mut d, mut tx, mut ty) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            let dx = x[i] - x[j];
            let dy = y[i] - y[j];
            if dx == 0.0 && dy == 0.0 {
                continue;
            } else if dx == 0.0 {
                tx += 1;
            } else if dy == 0.0 {
                ty += 1;
            } else if (dx > 0.0) == (dy > 0.0) {
                c += 1;
            } else {
                d += 1;
            }
        }
    }
    (c - d) as f64 / (((c + d + tx) as f64) * ((c + d + ty) as f64)).sqrt()
}

/// Raw-moment Pearson correlation.
pub fn pearson_moments(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let sx: f64 = x.iter().sum();
    let sy: f64 = y.iter().sum();
    let sxx: f64 = x.iter().map(|v| v * v).sum();
    let syy: f64 = y.iter().map(|v| v * v).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
}

/// Average rank by counting: 1 + #smaller + (#equal - 1) / 2.
pub fn count_ranks(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|a| {
            let less = v.iter().filter(|b| *b < a).count() as f64;
            let equal = v.iter().filter(|b| *b == a).count() as f64;
            1.0 + less + (equal - 1.0) / 2.0
        })
        .collect()
}

/// Solve a small dense system by Gaussian elimination with partial pivoting.
pub fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

pub fn invert(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let cols: Vec<Vec<f64>> = (0..n)
        .map(|j| gauss_solve(a.to_vec(), (0..n).map(|i| (i == j) as u8 as f64).collect()))
        .collect();
    (0..n).map(|i| (0..n).map(|j| cols[j][i]).collect()).collect()
}

pub struct NormalFit {
    pub beta: Vec<f64>,
    pub se: Vec<f64>,
    pub residuals: Vec<f64>,
    pub r2: f64,
    pub df: usize,
}

/// OLS with intercept from the normal equations.
pub fn normal_equations(columns: &[Vec<f64>], y: &[f64]) -> NormalFit {
    let n = y.len();
    let p = columns.len() + 1;
    let row = |i: usize| -> Vec<f64> {
        std::iter::once(1.0).chain(columns.iter().map(|c| c[i])).collect()
    };
    let mut xtx = vec![vec![0.0; p]; p];
    let mut xty = vec![0.0; p];
    for i in 0..n {
        let r = row(i);
        for a in 0..p {
            xty[a] += r[a] * y[i];
            for b in 0..p {
                xtx[a][b] += r[a] * r[b];
            }
        }
    }
    let beta = gauss_solve(xtx.clone(), xty);
    let residuals: Vec<f64> = (0..n)
        .map(|i| y[i] - row(i).iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>())
        .collect();
    let rss: f64 = residuals.iter().map(|e| e * e).sum();
    let my = y.iter().sum::<f64>() / n as f64;
    let tss: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let df = n - p;
    let inv = invert(&xtx);
    let s2 = rss / df as f64;
    NormalFit {
        se: (0..p).map(|j| (s2 * inv[j][j]).sqrt()).collect(),
        beta,
        residuals,
        r2: 1.0 - rss / tss,
        df,
    }
}

/// Two-sided t-test p-value by composite Simpson quadrature of the
/// unnormalised density after the substitution x = tan(theta).
pub fn t_p_quadrature(t: f64, df: f64) -> f64 {
    let g = |th: f64| {
        let x = th.tan();
        let c = th.cos();
        (1.0 + x * x / df).powf(-(df + 1.0) / 2.0) / (c * c)
    };
    let simpson = |a: f64, b: f64, n: usize| {
        let h = (b - a) / n as f64;
        let mut s = g(a) + g(b);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * g(a + i as f64 * h);
        }
        s * h / 3.0
    };
    let edge = std::f64::consts::FRAC_PI_2 - 1e-12;
    let tail = simpson(t.abs().atan(), edge, 200_000);
    let total = simpson(-edge, edge, 400_000);
    2.0 * tail / total
}

/// Squared Mahalanobis distance with an explicit 2x2 inverse.
pub fn mahalanobis_2d(rows: &[[f64; 2]], p: [f64; 2]) -> f64 {
    let n = rows.len() as f64;
    let mx = rows.iter().map(|r| r[0]).sum::<f64>() / n;
    let my = rows.iter().map(|r| r[1]).sum::<f64>() / n;
    let (mut a, mut b, mut d) = (0.0, 0.0, 0.0);
    for r in rows {
        a += (r[0] - mx).powi(2);
        b += (r[0] - mx) * (r[1] - my);
        d += (r[1] - my).powi(2);
    }
    let (a, b, d) = (a / (n - 1.0), b / (n - 1.0), d / (n - 1.0));
    let det = a * d - b * b;
    let (dx, dy) = (p[0] - mx, p[1] - my);
    (d * dx * dx - 2.0 * b * dx * dy + a * dy * dy) / det
}

// ---------------------------------------------------------------- model

/// Four Gaussian clusters in the default eight-feature space, one per
/// status. Affect columns are clamped into [0,1].
pub fn gaussian_clusters(per_label: usize, sd: f64, seed: u64) -> Vec<FeatureRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, sd).unwrap();
    let age_noise = Normal::new(0.0, 4.0).unwrap();
    let mut rows = Vec::new();
    for (k, status) in SystemStatus::ALL.iter().enumerate() {
        // each label sits on a different corner pattern
        let centre: Vec<f64> = (0..7)
            .map(|j| if (k + j) % 4 < 2 { 0.3 } else { 0.7 })
            .collect();
        for _ in 0..per_label {
            let mut values: Vec<f64> = centre
                .iter()
                .map(|c| (c + noise.sample(&mut rng)).clamp(0.0, 1.0))
                .collect();
            values.push((22.0 + 6.0 * k as f64 + age_noise.sample(&mut rng)).max(16.0));
            rows.push(FeatureRow {
                values,
                label: Some(*status),
            });
        }
    }
    rows.shuffle(&mut rng);
    rows
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlantedStage {
    UsernameInPost,
    BasicInfo,
    Candidates,
    Unmatched,
}

pub struct MatchingFixture {
    pub users: Vec<UserRecord>,
    pub profiles: Vec<SocialProfile>,
    pub posts: Vec<Post>,
    /// Per profile: the stage it should resolve at and its true user.
    pub truth: Vec<(PlantedStage, Option<u64>)>,
}

const FIRST: &[&str] = &[
    "amr", "sara", "omar", "lina", "karim", "nour", "yusuf", "hana", "tarek", "mona", "ali",
    "dina", "samir", "rana", "fadi", "layla", "hassan", "maya", "ziad", "salma",
];
const LAST: &[&str] = &[
    "nawar", "haddad", "khalil", "saleh", "mansour", "farouk", "aziz", "nasser", "hamdan",
    "younis", "qasim", "rashid", "bakr", "sabri", "taha", "zein",
];
const CITIES: &[&str] = &["amman", "irbid", "zarqa", "aqaba", "madaba", "jerash"];
const UNIS: &[&str] = &["uj", "just", "yu", "hu", "mu"];

/// Users with unique names and profiles planted to resolve at a known stage
/// (roughly 20% / 40% / 15% / 25%).
pub fn matching_fixture(n_profiles: usize, seed: u64) -> MatchingFixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut names: Vec<(usize, usize)> = (0..FIRST.len())
        .flat_map(|f| (0..LAST.len()).map(move |l| (f, l)))
        .collect();
    names.shuffle(&mut rng);
    let n_users = (n_profiles * 3 / 2).min(names.len());
    let users: Vec<UserRecord> = names[..n_users]
        .iter()
        .enumerate()
        .map(|(i, &(f, l))| UserRecord {
            user_id: 1000 + i as u64,
            username: format!("{}{}{:02}", FIRST[f], LAST[l], i % 100),
            name: format!("{} {}", FIRST[f], LAST[l]),
            gender: Some(if rng.random_bool(0.5) { "f" } else { "m" }.to_string()),
            city: Some(CITIES[rng.random_range(0..CITIES.len())].to_string()),
            university: Some(UNIS[rng.random_range(0..UNIS.len())].to_string()),
            age: Some(rng.random_range(18..40) as f64),
        })
        .collect();

    let mut owners: Vec<usize> = (0..n_users).collect();
    owners.shuffle(&mut rng);
    let mut profiles = Vec::new();
    let mut posts = Vec::new();
    let mut truth = Vec::new();
    let t0 = chrono::DateTime::parse_from_rfc3339("2024-03-01T10:00:00Z")
        .unwrap()
        .with_timezone(&chrono::Utc);
    for i in 0..n_profiles {
        let u = &users[owners[i]];
        let social_id = format!("fb{i:04}");
        let roll = i % 20;
        let (profile, stage) = if roll < 4 {
            let phrase = if rng.random_bool(0.5) { "my username is" } else { "user name:" };
            posts.push(Post {
                timestamp: t0 + chrono::Duration::minutes(i as i64),
                user_ref: Some(social_id.clone()),
                platform: "facebook".into(),
                text: format!("hello, {phrase} {} and I cannot upload my file", u.username),
            });
            (
                SocialProfile {
                    social_id: social_id.clone(),
                    display_name: u.name.clone(),
                    gender: None,
                    city: None,
                    university: None,
                },
                PlantedStage::UsernameInPost,
            )
        } else if roll < 12 {
            (
                SocialProfile {
                    social_id: social_id.clone(),
                    display_name: u.name.to_uppercase(),
                    gender: u.gender.clone(),
                    city: u.city.clone(),
                    university: u.university.clone(),
                },
                PlantedStage::BasicInfo,
            )
        } else if roll < 15 {
            (
                SocialProfile {
                    social_id: social_id.clone(),
                    display_name: u.name.clone(),
                    gender: None,
                    city: u.city.clone(),
                    university: None,
                },
                PlantedStage::Candidates,
            )
        } else {
            (
                SocialProfile {
                    social_id: social_id.clone(),
                    display_name: format!("xq{i} vex{i}"),
                    gender: None,
                    city: None,
                    university: None,
                },
                PlantedStage::Unmatched,
            )
        };
        let owner = (stage != PlantedStage::Unmatched).then_some(u.user_id);
        profiles.push(profile);
        truth.push((stage, owner));
    }
    MatchingFixture {
        users,
        profiles,
        posts,
        truth,
    }
}

/// Actual (row) by predicted (column) counts over `SystemStatus::ALL`.
pub const CONFUSION_FIXTURE: [[usize; 4]; 4] = [[10, 2, 1, 0], [3, 8, 0, 1], [0, 1, 12, 2], [1, 0, 2, 9]];

/// One-hot distributions and truths realising a confusion matrix.
pub fn expand_confusion(c: &[[usize; 4]; 4]) -> (Vec<Vec<f64>>, Vec<SystemStatus>) {
    let mut dists = Vec::new();
    let mut truth = Vec::new();
    for (a, row) in c.iter().enumerate() {
        for (p, &n) in row.iter().enumerate() {
            for _ in 0..n {
                let mut d = vec![0.0; 4];
                d[p] = 1.0;
                dists.push(d);
                truth.push(SystemStatus::ALL[a]);
            }
        }
    }
    (dists, truth)
}

#[derive(Debug)]
pub struct ClosedForm {
    pub accuracy: f64,
    pub kappa: f64,
    /// Per label: (tp rate, fp rate, precision, recall, f1).
    pub per_label: Vec<[f64; 5]>,
    pub weighted: [f64; 5],
    pub mae_one_hot: f64,
}

/// Metrics straight from the cell counts, one label at a time.
pub fn closed_form(c: &[[usize; 4]; 4]) -> ClosedForm {
    let n: usize = c.iter().flatten().sum();
    let nf = n as f64;
    let diag: usize = (0..4).map(|i| c[i][i]).sum();
    let mut chance = 0.0;
    let mut per_label = Vec::new();
    for i in 0..4 {
        let tp = c[i][i] as f64;
        let fn_: f64 = (0..4).filter(|&j| j != i).map(|j| c[i][j] as f64).sum();
        let fp: f64 = (0..4).filter(|&j| j != i).map(|j| c[j][i] as f64).sum();
        let tn = nf - tp - fn_ - fp;
        chance += (tp + fn_) * (tp + fp) / (nf * nf);
        let recall = tp / (tp + fn_);
        let precision = tp / (tp + fp);
        per_label.push([recall, fp / (fp + tn), precision, recall, 2.0 * tp / (2.0 * tp + fp + fn_)]);
    }
    let support: Vec<f64> = (0..4).map(|i| c[i].iter().sum::<usize>() as f64).collect();
    let mut weighted = [0.0; 5];
    for (m, s) in per_label.iter().zip(&support) {
        for k in 0..5 {
            weighted[k] += m[k] * s / nf;
        }
    }
    let p_o = diag as f64 / nf;
    ClosedForm {
        accuracy: 100.0 * p_o,
        kappa: (p_o - chance) / (1.0 - chance),
        per_label,
        weighted,
        // each miss puts 1 on a wrong class and 0 on the right one
        mae_one_hot: 2.0 * (n - diag) as f64 / (4.0 * nf),
    }
}

pub const ALPHABET: &[&str] = &["ab", "abc", "abd", "b", "ba", "bab", "c", "ca", "cab", "abca", "bc", "a"];

pub fn random_lexicon(rng: &mut ChaCha8Rng) -> (Vec<String>, BTreeMap<String, Vec<String>>) {
    let cats: Vec<String> = (0..rng.random_range(1..=4)).map(|i| format!("c{i}")).collect();
    let mut patterns = BTreeMap::new();
    for _ in 0..rng.random_range(1..=10) {
        let base = ALPHABET[rng.random_range(0..ALPHABET.len())];
        let p = if rng.random_bool(0.4) { format!("{base}*") } else { base.to_string() };
        let mut hit: Vec<String> = cats.iter().filter(|_| rng.random_bool(0.5)).cloned().collect();
        if hit.is_empty() {
            hit.push(cats[0].clone());
        }
        patterns.insert(p, hit);
    }
    (cats, patterns)
}

pub const EQ_TERMS: [(&str, f64); 5] = [
    ("MRC.K_F_NSAMP", -0.0379),
    ("LIWC.UNIQUE", -0.0803),
    ("LIWC.ABBREVIATIONS", -0.6074),
    ("LIWC.PRONOUN", 0.1445),
    ("LIWC.HEARING", -0.3941),
];

pub fn ten_item() -> QuestionnaireDef {
    parse_questionnaire(
        "q1|extraversion\nq2|extraversion|R\nq3|agreeableness\nq4|agreeableness|R\n\
         q5|conscientiousness\nq6|conscientiousness\nq7|neuroticism|R\nq8|neuroticism\n\
         q9|openness\nq10|openness|R\n",
    )
    .unwrap()
}

pub fn random_text(rng: &mut ChaCha8Rng, vocab: &[&str]) -> String {
    let n = rng.random_range(0..30);
    (0..n).map(|_| vocab[rng.random_range(0..vocab.len())]).collect::<Vec<_>>().join(" ")
}

pub const EMOTION_VOCAB: &[&str] = &[
    "angry", "thanks", "awful", "afraid", "sad", "great", "server", "upload", "error", "help",
    "the", "is", "hate", "happy", "crying", "panic", "nice", "broken", "file", "why",
];

pub const BEHAVIOUR_TABLE: [([Segment; 4], BehaviourClass); 8] = {
    use pmsys_core::timeline::Segment::*;
    [
        ([S1, S3, S3, S3], BehaviourClass::A),
        ([S2, S2, S2, S2], BehaviourClass::B),
        ([S2, S3, S3, S3], BehaviourClass::C),
        ([S2, S3, S4, S4], BehaviourClass::D),
        ([S3, S3, S3, S3], BehaviourClass::E),
        ([S3, S3, S4, S4], BehaviourClass::F),
        ([S3, S4, S4, S4], BehaviourClass::G),
        ([S4, S4, S4, S4], BehaviourClass::H),
    ]
};
