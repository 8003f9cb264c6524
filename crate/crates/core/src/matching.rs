//! Linking social-platform profiles to system accounts.
//!
//! Stages run in order and each profile is resolved exactly once:
//! 1. a username quoted in one of the profile's posts, confirmed by name;
//! 2. a unique best basic-info agreement (name, gender, city, university);
//! 3. a ranked candidate list for manual review, or unmatched.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::ingest::Post;
use crate::lexicon::tokenize;
use crate::par;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserRecord {
    pub user_id: u64,
    pub username: String,
    pub name: String,
    pub gender: Option<String>,
    pub city: Option<String>,
    pub university: Option<String>,
    pub age: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SocialProfile {
    pub social_id: String,
    pub display_name: String,
    pub gender: Option<String>,
    pub city: Option<String>,
    pub university: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchConfig {
    /// Minimum name Jaccard for a username hit to count.
    pub name_threshold: f64,
    pub name_weight: f64,
    pub gender_weight: f64,
    pub city_weight: f64,
    pub university_weight: f64,
    /// Minimum unique top score for a basic-info match.
    pub match_threshold: f64,
    /// Minimum score for a user to be proposed for review.
    pub candidate_threshold: f64,
    pub k: usize,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig {
            name_threshold: 0.5,
            name_weight: 0.4,
            gender_weight: 0.2,
            city_weight: 0.2,
            university_weight: 0.2,
            match_threshold: 0.7,
            candidate_threshold: 0.5,
            k: 5,
        }
    }
}

fn word_tokens(message: &str) -> Vec<String> {
    message
        .split_whitespace()
        .map(|w| {
            w.trim_matches(|c: char| !c.is_alphanumeric())
                .to_lowercase()
        })
        .filter(|w| !w.is_empty())
        .collect()
}

/// Every token introduced by `username` or `user name`. A following word of
/// three characters or fewer ("is", "my") is skipped in favour of the next.
pub fn usernames_in_post(message: &str) -> Vec<String> {
    let words = word_tokens(message);
    let mut out = Vec::new();
    for i in 0..words.len() {
        let cue = words[i] == "username" || (words[i] == "name" && i > 0 && words[i - 1] == "user");
        if !cue {
            continue;
        }
        let Some(next) = words.get(i + 1) else { continue };
        let pick = if next.chars().count() <= 3 {
            words.get(i + 2)
        } else {
            Some(next)
        };
        if let Some(p) = pick.filter(|p| p.chars().count() > 3) {
            out.push(p.clone());
        }
    }
    out
}

pub fn find_username_in_post(message: &str) -> Option<String> {
    usernames_in_post(message).into_iter().next()
}

/// Token-set Jaccard similarity of two names; 0 when both are empty.
pub fn name_similarity(a: &str, b: &str) -> f64 {
    let a: HashSet<String> = tokenize(a).tokens.into_iter().collect();
    let b: HashSet<String> = tokenize(b).tokens.into_iter().collect();
    let union = a.union(&b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(&b).count() as f64 / union as f64
}

fn same(a: &Option<String>, b: &Option<String>) -> bool {
    match (a, b) {
        (Some(a), Some(b)) => {
            let (a, b) = (a.trim(), b.trim());
            !a.is_empty() && a.eq_ignore_ascii_case(b)
        }
        _ => false,
    }
}

/// Users indexed by lowercase username.
#[derive(Debug, Clone)]
pub struct UserIndex {
    users: Vec<UserRecord>,
    by_username: HashMap<String, usize>,
}

impl UserIndex {
    pub fn new(users: Vec<UserRecord>) -> Self {
        let by_username = users
            .iter()
            .enumerate()
            .map(|(i, u)| (u.username.to_lowercase(), i))
            .collect();
        UserIndex { users, by_username }
    }

    pub fn users(&self) -> &[UserRecord] {
        &self.users
    }

    pub fn by_username(&self, username: &str) -> Option<&UserRecord> {
        self.by_username
            .get(&username.to_lowercase())
            .map(|&i| &self.users[i])
    }
}

pub fn match_username(
    token: &str,
    display_name: &str,
    index: &UserIndex,
    config: &MatchConfig,
) -> Option<u64> {
    let user = index.by_username(token)?;
    (name_similarity(&user.name, display_name) >= config.name_threshold).then_some(user.user_id)
}

pub fn basic_info_score(profile: &SocialProfile, user: &UserRecord, config: &MatchConfig) -> f64 {
    let flag = |b: bool| if b { 1.0 } else { 0.0 };
    config.name_weight * name_similarity(&profile.display_name, &user.name)
        + config.gender_weight * flag(same(&profile.gender, &user.gender))
        + config.city_weight * flag(same(&profile.city, &user.city))
        + config.university_weight * flag(same(&profile.university, &user.university))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub user_id: u64,
    pub score: f64,
}

/// All users ranked by score (descending), ties by ascending user id.
fn ranked(profile: &SocialProfile, users: &[UserRecord], config: &MatchConfig) -> Vec<Candidate> {
    let mut all: Vec<Candidate> = users
        .iter()
        .map(|u| Candidate {
            user_id: u.user_id,
            score: basic_info_score(profile, u, config),
        })
        .collect();
    all.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.user_id.cmp(&b.user_id)));
    all
}

pub fn match_basic_info(profile: &SocialProfile, users: &[UserRecord], config: &MatchConfig) -> Option<u64> {
    let r = ranked(profile, users, config);
    let top = r.first()?;
    let unique = r.get(1).is_none_or(|second| second.score < top.score);
    (unique && top.score >= config.match_threshold).then_some(top.user_id)
}

pub fn propose_candidates(
    profile: &SocialProfile,
    users: &[UserRecord],
    k: usize,
    config: &MatchConfig,
) -> Vec<Candidate> {
    let mut r = ranked(profile, users, config);
    r.truncate(k.max(1));
    r
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMethod {
    UsernameInPost,
    BasicInfo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum MatchResult {
    Matched { user_id: u64, method: MatchMethod },
    Candidates { candidates: Vec<Candidate> },
    Unmatched,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileMatch {
    pub social_id: String,
    pub result: MatchResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub count: usize,
    pub pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityLink {
    pub social_id: String,
    pub user_id: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateProposal {
    pub social_id: String,
    pub candidates: Vec<Candidate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    pub total: usize,
    pub username_in_post: StageSummary,
    pub basic_info: StageSummary,
    pub candidates: StageSummary,
    pub unmatched: StageSummary,
    pub username_matches: Vec<IdentityLink>,
    pub basic_info_matches: Vec<IdentityLink>,
    pub proposals: Vec<CandidateProposal>,
    pub unmatched_profiles: Vec<String>,
    pub config: MatchConfig,
}

impl MatchReport {
    /// social id -> user id for every automatically matched profile.
    pub fn identity(&self) -> HashMap<String, u64> {
        self.username_matches
            .iter()
            .chain(&self.basic_info_matches)
            .map(|l| (l.social_id.clone(), l.user_id))
            .collect()
    }
}

pub fn resolve_profile(
    profile: &SocialProfile,
    posts: &[&str],
    index: &UserIndex,
    config: &MatchConfig,
) -> MatchResult {
    for post in posts {
        for token in usernames_in_post(post) {
            if let Some(user_id) = match_username(&token, &profile.display_name, index, config) {
                return MatchResult::Matched {
                    user_id,
                    method: MatchMethod::UsernameInPost,
                };
            }
        }
    }
    if let Some(user_id) = match_basic_info(profile, index.users(), config) {
        return MatchResult::Matched {
            user_id,
            method: MatchMethod::BasicInfo,
        };
    }
    let candidates: Vec<Candidate> = propose_candidates(profile, index.users(), config.k, config)
        .into_iter()
        .filter(|c| c.score >= config.candidate_threshold)
        .collect();
    if candidates.is_empty() {
        MatchResult::Unmatched
    } else {
        MatchResult::Candidates { candidates }
    }
}

pub fn run_matching(
    posts: &[Post],
    profiles: &[SocialProfile],
    users: Vec<UserRecord>,
    config: &MatchConfig,
) -> (MatchReport, Vec<ProfileMatch>) {
    let index = UserIndex::new(users);
    let mut by_ref: HashMap<&str, Vec<&str>> = HashMap::new();
    for p in posts {
        if let Some(r) = &p.user_ref {
            by_ref.entry(r.as_str()).or_default().push(&p.text);
        }
    }
    let results: Vec<ProfileMatch> = par::map_slice(profiles, |profile| {
        let texts = by_ref.get(profile.social_id.as_str()).map(Vec::as_slice).unwrap_or(&[]);
        ProfileMatch {
            social_id: profile.social_id.clone(),
            result: resolve_profile(profile, texts, &index, config),
        }
    });

    let mut username_matches = Vec::new();
    let mut basic_info_matches = Vec::new();
    let mut proposals = Vec::new();
    let mut unmatched_profiles = Vec::new();
    for m in &results {
        match &m.result {
            MatchResult::Matched { user_id, method } => {
                let link = IdentityLink {
                    social_id: m.social_id.clone(),
                    user_id: *user_id,
                };
                match method {
                    MatchMethod::UsernameInPost => username_matches.push(link),
                    MatchMethod::BasicInfo => basic_info_matches.push(link),
                }
            }
            MatchResult::Candidates { candidates } => proposals.push(CandidateProposal {
                social_id: m.social_id.clone(),
                candidates: candidates.clone(),
            }),
            MatchResult::Unmatched => unmatched_profiles.push(m.social_id.clone()),
        }
    }
    let total = profiles.len();
    let summary = |count: usize| StageSummary {
        count,
        pct: if total == 0 { 0.0 } else { 100.0 * count as f64 / total as f64 },
    };
    let report = MatchReport {
        total,
        username_in_post: summary(username_matches.len()),
        basic_info: summary(basic_info_matches.len()),
        candidates: summary(proposals.len()),
        unmatched: summary(unmatched_profiles.len()),
        username_matches,
        basic_info_matches,
        proposals,
        unmatched_profiles,
        config: *config,
    };
    (report, results)
}
