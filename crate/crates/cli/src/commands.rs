use crate::render::{num, table};
use crate::{failed, invalid, require_file, CliError, Command, ForestArgs, Outcome, StatTest};
use pmsys_core::emotions::{batch_emotions, score_emotions, EmotionLexicon};
use pmsys_core::ingest::{
    self, load_features, load_table, parse_timestamp, save_table, EventRecord, JoinInputs, Post,
    QuestionnaireResponse, Table, TableRow, TraitRecord,
};
use pmsys_core::lexicon::{analyze, load_lexicon, Lexicon};
use pmsys_core::matching::{run_matching, MatchConfig, SocialProfile, UserRecord};
use pmsys_core::model::{self, cross_validate, oob_error, train_forest, ModelError};
use pmsys_core::sentiment::{self, classify, holdout_accuracy, relabel, train_nb};
use pmsys_core::stats;
use pmsys_core::status::{label_windows, load_rules, KeywordRuleSet, ResponseSample};
use pmsys_core::timeline::{assign_stage, classify_behaviour, CallWindow, TimelineRecord};
use pmsys_core::traits::{
    liwc_features, load_questionnaire, load_trait_model, normalize_trait, score_questionnaire,
    score_trait_linear, QuestionnaireDef,
};
use pmsys_core::{FeatureRow, FeatureSchema, Forest, ForestParams, SystemStatus};
use serde_json::{json, Value};
use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

pub fn dispatch(cmd: &Command) -> Result<Outcome, CliError> {
    match cmd {
        Command::AnalyzeText {
            input,
            text,
            lexicon,
            output,
        } => analyze_text(input.as_deref(), text.as_deref(), lexicon.as_deref(), output.as_deref()),
        Command::ScoreTraits {
            input,
            questionnaire,
            trait_model: Some(model),
            lexicon,
            extra_features,
            output,
        } => {
            debug_assert!(questionnaire.is_none());
            score_traits_text(input, model, lexicon.as_deref(), extra_features.as_deref(), output.as_deref())
        }
        Command::ScoreTraits {
            input,
            questionnaire,
            output,
            ..
        } => score_traits_questionnaire(input, questionnaire.as_deref(), output.as_deref()),
        Command::ScoreEmotions { input, lexicon, output } => {
            score_emotions_cmd(input, lexicon.as_deref(), output.as_deref())
        }
        Command::Sentiment {
            input,
            classify,
            train_fraction,
            seed,
            output,
        } => sentiment_cmd(input, classify.as_deref(), *train_fraction, *seed, output.as_deref()),
        Command::LabelStatus {
            input,
            responses,
            rules,
            window_mins,
            output,
        } => label_status(input, responses.as_deref(), rules.as_deref(), *window_mins, output.as_deref()),
        Command::MatchUsers {
            input,
            profiles,
            users,
            match_threshold,
            candidate_threshold,
            k,
            output,
        } => {
            let mut config = MatchConfig::default();
            if let Some(t) = match_threshold {
                config.match_threshold = *t;
            }
            if let Some(t) = candidate_threshold {
                config.candidate_threshold = *t;
            }
            if let Some(k) = k {
                config.k = *k;
            }
            match_users(input, profiles, users, config, output.as_deref())
        }
        Command::SegmentTimeline {
            input,
            open,
            close,
            extension,
            posts,
            output,
        } => segment_timeline(input, open, close, extension.as_deref(), posts.as_deref(), output.as_deref()),
        Command::Stats {
            input,
            test,
            x,
            y,
            controls,
            critical,
            output,
        } => stats_cmd(input, *test, x, y.as_deref(), controls.as_deref(), *critical, output.as_deref()),
        Command::ExtractFeatures {
            input,
            events,
            users,
            traits,
            profiles,
            lexicon,
            schema,
            output,
        } => extract_features(
            input,
            events,
            users,
            traits,
            profiles.as_deref(),
            lexicon.as_deref(),
            schema.as_deref(),
            output,
        ),
        Command::Train {
            input,
            schema,
            forest,
            output,
        } => train(input, schema.as_deref(), forest, output),
        Command::Predict { model, input, output } => predict(model, input, output.as_deref()),
        Command::Evaluate { model, input, output } => evaluate(model, input, output.as_deref()),
        Command::CrossValidate {
            input,
            schema,
            folds,
            forest,
            output,
        } => cross_validate_cmd(input, schema.as_deref(), *folds, forest, output.as_deref()),
        Command::Serve {
            port,
            host,
            seed,
            store,
            model,
            static_dir,
            questionnaire,
            slow_secs,
            down_secs,
        } => serve(
            *port,
            host,
            *seed,
            store.clone(),
            model.as_deref(),
            static_dir.clone(),
            questionnaire.as_deref(),
            *slow_secs,
            *down_secs,
        ),
    }
}

fn table_of<T: TableRow>(path: &Path) -> Result<Table<T>, CliError> {
    require_file(path)?;
    let t = load_table::<T>(path).map_err(invalid)?;
    for e in &t.errors {
        log::warn!("{}:{}: skipped row: {}", path.display(), e.line, e.message);
    }
    Ok(t)
}

fn lexicon_or_demo(path: Option<&Path>) -> Result<Lexicon, CliError> {
    match path {
        Some(p) => {
            require_file(p)?;
            load_lexicon(p).map_err(invalid)
        }
        None => Ok(Lexicon::bundled_demo()),
    }
}

fn emotion_lexicon(path: Option<&Path>) -> Result<EmotionLexicon, CliError> {
    match path {
        Some(p) => {
            require_file(p)?;
            EmotionLexicon::new(load_lexicon(p).map_err(invalid)?).map_err(invalid)
        }
        None => Ok(EmotionLexicon::bundled()),
    }
}

fn schema_arg(list: Option<&str>) -> Result<FeatureSchema, CliError> {
    match list {
        Some(l) => FeatureSchema::parse(l).map_err(invalid),
        None => Ok(FeatureSchema::default()),
    }
}

fn write_json(path: Option<&Path>, value: &Value) -> Result<(), CliError> {
    if let Some(p) = path {
        let text = serde_json::to_string_pretty(value).expect("json value") + "\n";
        std::fs::write(p, text).map_err(|e| failed(format!("cannot write {}: {e}", p.display())))?;
    }
    Ok(())
}

fn to_value<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("serializable")
}

fn analyze_text(
    input: Option<&Path>,
    text: Option<&str>,
    lexicon: Option<&Path>,
    output: Option<&Path>,
) -> Result<Outcome, CliError> {
    let lex = lexicon_or_demo(lexicon)?;
    let docs: Vec<(Option<String>, String)> = match (input, text) {
        (_, Some(t)) => vec![(None, t.to_string())],
        (Some(p), None) => table_of::<Post>(p)?
            .rows
            .into_iter()
            .map(|p| (p.user_ref, p.text))
            .collect(),
        (None, None) => return Err(invalid("give --input or --text")),
    };
    let mut out = Vec::new();
    let mut rows = Vec::new();
    for (i, (user_ref, text)) in docs.iter().enumerate() {
        let (stats, profile) = analyze(text, &lex);
        let mut top: Vec<(&str, f64)> = profile.iter().filter(|(_, v)| *v > 0.0).collect();
        top.sort_by(|a, b| b.1.total_cmp(&a.1));
        rows.push(vec![
            i.to_string(),
            user_ref.clone().unwrap_or_default(),
            stats.word_count.to_string(),
            top.iter()
                .take(3)
                .map(|(c, v)| format!("{c} {v:.1}%"))
                .collect::<Vec<_>>()
                .join(", "),
        ]);
        out.push(json!({ "index": i, "user_ref": user_ref, "stats": stats, "categories": profile }));
    }
    let value = json!({ "lexicon": lex.name(), "documents": out });
    write_json(output, &value)?;
    Ok(Outcome {
        text: table(&["#", "user", "words", "top categories"], &rows),
        json: value,
    })
}

fn score_traits_questionnaire(
    input: &Path,
    definition: Option<&Path>,
    output: Option<&Path>,
) -> Result<Outcome, CliError> {
    let def = match definition {
        Some(p) => {
            require_file(p)?;
            load_questionnaire(p).map_err(invalid)?
        }
        None => QuestionnaireDef::bundled(),
    };
    let responses = table_of::<QuestionnaireResponse>(input)?;
    let mut records = Vec::new();
    let mut rejected = Vec::new();
    for r in &responses.rows {
        match score_questionnaire(&r.responses, &def) {
            Ok(score) => records.push(TraitRecord {
                user_id: r.user_id,
                traits: score.traits,
            }),
            Err(e) => {
                log::warn!("user {}: {e}", r.user_id);
                rejected.push(json!({ "user_id": r.user_id, "error": e.to_string() }));
            }
        }
    }
    if records.is_empty() && !responses.rows.is_empty() {
        return Err(invalid(format!("{}: no response row could be scored", input.display())));
    }
    if let Some(p) = output {
        save_table(&records, p).map_err(failed)?;
    }
    let rows: Vec<Vec<String>> = records
        .iter()
        .map(|r| {
            std::iter::once(r.user_id.to_string())
                .chain(r.traits.as_array().iter().map(|v| num(*v)))
                .collect()
        })
        .collect();
    Ok(Outcome {
        text: table(&["user", "O", "C", "E", "A", "N"], &rows),
        json: json!({ "traits": records, "rejected": rejected }),
    })
}

fn extra_feature_table(path: &Path) -> Result<BTreeMap<String, HashMap<String, f64>>, CliError> {
    require_file(path)?;
    let mut rdr = csv::Reader::from_path(path).map_err(invalid)?;
    let headers = rdr.headers().map_err(invalid)?.clone();
    let key = headers
        .iter()
        .position(|h| h == "user_ref")
        .ok_or_else(|| invalid(format!("{}: missing user_ref column", path.display())))?;
    let mut out = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(invalid)?;
        let mut f = HashMap::new();
        for (j, h) in headers.iter().enumerate() {
            if j == key {
                continue;
            }
            let v: f64 = rec[j].trim().parse().map_err(|_| {
                invalid(format!("{}:{}: {h} is not a number: {:?}", path.display(), i + 2, &rec[j]))
            })?;
            f.insert(h.to_string(), v);
        }
        out.insert(rec[key].to_string(), f);
    }
    Ok(out)
}

fn score_traits_text(
    input: &Path,
    model_path: &Path,
    lexicon: Option<&Path>,
    extra: Option<&Path>,
    output: Option<&Path>,
) -> Result<Outcome, CliError> {
    require_file(model_path)?;
    let model = load_trait_model(model_path).map_err(invalid)?;
    let lex = lexicon_or_demo(lexicon)?;
    let extras = extra.map(extra_feature_table).transpose()?.unwrap_or_default();
    let posts = table_of::<Post>(input)?;
    let mut by_user: BTreeMap<String, Vec<&str>> = BTreeMap::new();
    for p in &posts.rows {
        if let Some(r) = &p.user_ref {
            by_user.entry(r.clone()).or_default().push(&p.text);
        }
    }
    let mut users = Vec::new();
    let mut rows = Vec::new();
    for (user, texts) in &by_user {
        let (stats, profile) = analyze(&texts.join("\n"), &lex);
        let mut features = liwc_features(&stats, &profile);
        if let Some(x) = extras.get(user) {
            features.extend(x.iter().map(|(k, v)| (k.clone(), *v)));
        }
        let mut traits = BTreeMap::new();
        let mut errors = Vec::new();
        for t in model.traits() {
            match score_trait_linear(&features, &model, t) {
                Ok(raw) => {
                    let scale = model.get(t).expect("listed trait").raw_scale;
                    let norm = normalize_trait(raw, scale);
                    rows.push(vec![user.clone(), t.name().into(), num(raw), num(norm)]);
                    traits.insert(t.name(), json!({ "raw": raw, "normalized": norm }));
                }
                Err(e) => errors.push(e.to_string()),
            }
        }
        users.push(json!({ "user_ref": user, "posts": texts.len(), "traits": traits, "errors": errors }));
    }
    let value = json!({ "users": users });
    write_json(output, &value)?;
    Ok(Outcome {
        text: table(&["user", "trait", "raw", "normalized"], &rows),
        json: value,
    })
}

fn score_emotions_cmd(input: &Path, lexicon: Option<&Path>, output: Option<&Path>) -> Result<Outcome, CliError> {
    let lex = emotion_lexicon(lexicon)?;
    let posts = table_of::<Post>(input)?;
    let per_post: Vec<Value> = posts
        .rows
        .iter()
        .enumerate()
        .map(|(i, p)| json!({ "index": i, "user_ref": p.user_ref, "emotions": score_emotions(&p.text, &lex) }))
        .collect();
    let mut by_user: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for p in &posts.rows {
        if let Some(r) = &p.user_ref {
            by_user.entry(r).or_default().push(&p.text);
        }
    }
    let mut users = Vec::new();
    let mut rows = Vec::new();
    for (user, texts) in &by_user {
        let e = batch_emotions(texts, &lex).expect("nonempty group");
        rows.push(
            std::iter::once(user.to_string())
                .chain(e.as_array().iter().map(|v| num(*v)))
                .collect(),
        );
        users.push(json!({ "user_ref": user, "posts": texts.len(), "emotions": e }));
    }
    let value = json!({ "posts": per_post, "users": users });
    write_json(output, &value)?;
    Ok(Outcome {
        text: table(&["user", "anger", "disgust", "fear", "joy", "sadness"], &rows),
        json: value,
    })
}

fn sentiment_cmd(
    input: &Path,
    classify_path: Option<&Path>,
    train_fraction: f64,
    seed: u64,
    output: Option<&Path>,
) -> Result<Outcome, CliError> {
    require_file(input)?;
    let corpus = sentiment::load_corpus(input).map_err(invalid)?;
    let holdout = holdout_accuracy(&corpus, train_fraction, seed).map_err(invalid)?;
    let mut text = format!(
        "holdout: {}/{} correct ({:.2}%), trained on {}\n",
        holdout.correct,
        holdout.test_size,
        100.0 * holdout.accuracy,
        holdout.train_size
    );
    let mut classified = Vec::new();
    if let Some(p) = classify_path {
        let posts = table_of::<Post>(p)?;
        let model = train_nb(&corpus).map_err(invalid)?;
        let mut rows = Vec::new();
        for (i, post) in posts.rows.iter().enumerate() {
            let s = classify(&post.text, &model);
            let label = relabel(&s);
            rows.push(vec![i.to_string(), label.to_string(), num(s.pos), num(s.neg), num(s.neutral)]);
            classified.push(json!({ "index": i, "label": label.to_string(), "scores": s }));
        }
        text += &table(&["#", "label", "pos", "neg", "neutral"], &rows);
    }
    let value = json!({ "holdout": holdout, "seed": seed, "classified": classified });
    write_json(output, &value)?;
    Ok(Outcome { json: value, text })
}

fn label_status(
    input: &Path,
    responses: Option<&Path>,
    rules: Option<&Path>,
    window_mins: i64,
    output: Option<&Path>,
) -> Result<Outcome, CliError> {
    if window_mins <= 0 {
        return Err(invalid("--window-mins must be positive"));
    }
    let rules = match rules {
        Some(p) => {
            require_file(p)?;
            load_rules(p).map_err(invalid)?
        }
        None => KeywordRuleSet::default(),
    };
    let posts = table_of::<Post>(input)?;
    let samples = match responses {
        Some(p) => table_of::<ResponseSample>(p)?.rows,
        None => Vec::new(),
    };
    let outcome = label_windows(&posts.rows, &samples, chrono::Duration::minutes(window_mins), &rules)
        .map_err(failed)?;
    let events: Vec<EventRecord> = outcome.events.iter().map(|w| EventRecord::from(&w.event)).collect();
    if let Some(p) = output {
        save_table(&events, p).map_err(failed)?;
    }
    let mut counts: BTreeMap<SystemStatus, usize> = SystemStatus::ALL.iter().map(|s| (*s, 0)).collect();
    for e in &events {
        *counts.get_mut(&e.status).expect("all statuses") += 1;
    }
    let rows: Vec<Vec<String>> = events
        .iter()
        .map(|e| {
            vec![
                ingest::format_timestamp(&e.window_start),
                e.status.to_string(),
                e.post_count.to_string(),
                e.sample_count.to_string(),
                e.median_response_s.map(num).unwrap_or_default(),
                e.resolution.clone(),
            ]
        })
        .collect();
    let mut text = table(&["window", "status", "posts", "samples", "median s", "resolution"], &rows);
    text += &format!("{} unresolved window(s)\n", outcome.unresolved.len());
    Ok(Outcome {
        json: json!({ "events": events, "counts": counts, "unresolved": outcome.unresolved }),
        text,
    })
}

fn match_users(
    posts: &Path,
    profiles: &Path,
    users: &Path,
    config: MatchConfig,
    output: Option<&Path>,
) -> Result<Outcome, CliError> {
    let posts = table_of::<Post>(posts)?;
    let profiles = table_of::<SocialProfile>(profiles)?;
    let users = table_of::<UserRecord>(users)?;
    let (report, _) = run_matching(&posts.rows, &profiles.rows, users.rows, &config);
    let value = to_value(&report);
    write_json(output, &value)?;
    let stage = |name: &str, s: &pmsys_core::matching::StageSummary| {
        vec![name.to_string(), s.count.to_string(), format!("{:.1}", s.pct)]
    };
    let rows = vec![
        stage("username in post", &report.username_in_post),
        stage("basic info", &report.basic_info),
        stage("candidates", &report.candidates),
        stage("unmatched", &report.unmatched),
    ];
    Ok(Outcome {
        text: table(&["stage", "profiles", "%"], &rows) + &format!("total {}\n", report.total),
        json: value,
    })
}

fn segment_timeline(
    input: &Path,
    open: &str,
    close: &str,
    extension: Option<&str>,
    posts: Option<&Path>,
    output: Option<&Path>,
) -> Result<Outcome, CliError> {
    let ts = |flag: &str, s: &str| parse_timestamp(s).map_err(|e| invalid(format!("--{flag}: {e}")));
    let open = ts("open", open)?;
    let close = ts("close", close)?;
    let ext = extension.map(|e| ts("extension", e)).transpose()?.unwrap_or(close);
    let call = CallWindow::new(open, close, ext).map_err(invalid)?;
    let timelines = table_of::<TimelineRecord>(input)?;
    let mut assigned = Vec::new();
    let mut errors = Vec::new();
    let mut classes: BTreeMap<String, usize> = BTreeMap::new();
    for t in &timelines.rows {
        match classify_behaviour(t, &call) {
            Ok(a) => {
                *classes.entry(format!("{:?}", a.class)).or_default() += 1;
                assigned.push(a);
            }
            Err(e) => errors.push(json!({ "user_id": t.user_id, "error": e.to_string() })),
        }
    }
    let mut stages: BTreeMap<u8, usize> = BTreeMap::new();
    if let Some(p) = posts {
        let by_id: HashMap<u64, &TimelineRecord> = timelines.rows.iter().map(|t| (t.user_id, t)).collect();
        for post in table_of::<Post>(p)?.rows {
            let tl = post
                .user_ref
                .as_deref()
                .and_then(|r| r.parse::<u64>().ok())
                .and_then(|id| by_id.get(&id));
            if let Some(tl) = tl {
                match assign_stage(post.timestamp, tl, &call) {
                    Ok(s) => *stages.entry(s.id()).or_default() += 1,
                    Err(e) => log::debug!("post at {}: {e}", post.timestamp),
                }
            }
        }
    }
    let value = json!({
        "call": call,
        "users": assigned,
        "classes": classes,
        "stages": stages,
        "errors": errors,
    });
    write_json(output, &value)?;
    let rows: Vec<Vec<String>> = classes.iter().map(|(c, n)| vec![c.clone(), n.to_string()]).collect();
    let mut text = table(&["class", "users"], &rows);
    if !stages.is_empty() {
        let rows: Vec<Vec<String>> = stages.iter().map(|(s, n)| vec![s.to_string(), n.to_string()]).collect();
        text += &table(&["stage", "posts"], &rows);
    }
    if !errors.is_empty() {
        text += &format!("{} timeline(s) could not be classified\n", errors.len());
    }
    Ok(Outcome { json: value, text })
}

struct Columns {
    path: PathBuf,
    headers: Vec<String>,
    records: Vec<csv::StringRecord>,
}

impl Columns {
    fn read(path: &Path) -> Result<Self, CliError> {
        require_file(path)?;
        let mut rdr = csv::Reader::from_path(path).map_err(invalid)?;
        let headers = rdr.headers().map_err(invalid)?.iter().map(|h| h.trim().to_string()).collect();
        let records = rdr.records().collect::<Result<Vec<_>, _>>().map_err(invalid)?;
        Ok(Columns {
            path: path.to_path_buf(),
            headers,
            records,
        })
    }

    fn get(&self, name: &str) -> Result<Vec<f64>, CliError> {
        let j = self
            .headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| invalid(format!("{}: no column {name:?}", self.path.display())))?;
        self.records
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let cell = r.get(j).unwrap_or("").trim();
                cell.parse::<f64>().map_err(|_| {
                    invalid(format!("{}:{}: {name} is not a number: {cell:?}", self.path.display(), i + 2))
                })
            })
            .collect()
    }

    fn many(&self, list: &str) -> Result<(Vec<String>, Vec<Vec<f64>>), CliError> {
        let names: Vec<String> = list.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
        let cols = names.iter().map(|n| self.get(n)).collect::<Result<_, _>>()?;
        Ok((names, cols))
    }
}

#[allow(clippy::too_many_arguments)]
fn stats_cmd(
    input: &Path,
    test: StatTest,
    x: &str,
    y: Option<&str>,
    controls: Option<&str>,
    critical: Option<f64>,
    output: Option<&Path>,
) -> Result<Outcome, CliError> {
    let data = Columns::read(input)?;
    let need_y = || y.ok_or_else(|| invalid(format!("--y is required for {test:?}")));
    let value = match test {
        StatTest::Kendall | StatTest::Pearson | StatTest::Spearman | StatTest::Partial => {
            let yn = need_y()?;
            let (xs, ys) = (data.get(x)?, data.get(yn)?);
            let r = match test {
                StatTest::Kendall => stats::kendall_tau_b(&xs, &ys),
                StatTest::Pearson => stats::pearson(&xs, &ys),
                StatTest::Spearman => stats::spearman(&xs, &ys),
                _ => {
                    let list = controls.ok_or_else(|| invalid("--controls is required for partial"))?;
                    let (_, cs) = data.many(list)?;
                    stats::partial_pearson(&xs, &ys, &cs)
                }
            }
            .map_err(invalid)?;
            json!({ "test": format!("{test:?}").to_lowercase(), "x": x, "y": yn, "n": xs.len(), "value": r, "controls": controls })
        }
        StatTest::Ols => {
            let yn = need_y()?;
            let (names, cols) = data.many(x)?;
            let fit = stats::ols(&cols, &data.get(yn)?).map_err(invalid)?;
            json!({ "test": "ols", "y": yn, "predictors": names, "fit": fit })
        }
        StatTest::Vif => {
            let (names, cols) = data.many(x)?;
            let entries = stats::vif(&cols).map_err(invalid)?;
            let per: Vec<Value> = names
                .iter()
                .zip(&entries)
                .map(|(n, e)| json!({ "predictor": n, "tolerance": e.tolerance, "vif": e.vif, "multicollinear": e.multicollinear, "perfect": e.perfect }))
                .collect();
            json!({ "test": "vif", "limit": stats::VIF_LIMIT, "predictors": per })
        }
        StatTest::Mahalanobis => {
            let crit = critical.ok_or_else(|| invalid("--critical is required for mahalanobis"))?;
            let (names, cols) = data.many(x)?;
            let n = cols.first().map_or(0, Vec::len);
            let rows: Vec<Vec<f64>> = (0..n).map(|i| cols.iter().map(|c| c[i]).collect()).collect();
            let screen = stats::mahalanobis_screen(&rows, crit).map_err(invalid)?;
            json!({ "test": "mahalanobis", "columns": names, "screen": screen })
        }
    };
    write_json(output, &value)?;
    let text = render_stats(&value);
    Ok(Outcome { json: value, text })
}

fn render_stats(v: &Value) -> String {
    let f = |x: &Value| x.as_f64().map(num).unwrap_or_else(|| "inf".into());
    match v["test"].as_str().unwrap_or("") {
        "ols" => {
            let fit = &v["fit"];
            let mut names = vec!["(intercept)".to_string()];
            names.extend(v["predictors"].as_array().into_iter().flatten().map(|p| p.as_str().unwrap_or("").to_string()));
            let rows: Vec<Vec<String>> = names
                .iter()
                .enumerate()
                .map(|(i, n)| {
                    vec![
                        n.clone(),
                        f(&fit["coefficients"][i]),
                        f(&fit["std_errors"][i]),
                        f(&fit["t_stats"][i]),
                        f(&fit["p_values"][i]),
                    ]
                })
                .collect();
            table(&["term", "coef", "se", "t", "p"], &rows) + &format!("R^2 {}\n", f(&fit["r_squared"]))
        }
        "vif" => {
            let rows: Vec<Vec<String>> = v["predictors"]
                .as_array()
                .into_iter()
                .flatten()
                .map(|p| {
                    vec![
                        p["predictor"].as_str().unwrap_or("").to_string(),
                        f(&p["tolerance"]),
                        f(&p["vif"]),
                        p["multicollinear"].to_string(),
                    ]
                })
                .collect();
            table(&["predictor", "tolerance", "vif", "multicollinear"], &rows)
        }
        "mahalanobis" => {
            let s = &v["screen"];
            format!(
                "critical {}: kept {} row(s), dropped {:?}\n",
                f(&s["critical"]),
                s["keep"].as_array().map_or(0, |k| k.iter().filter(|b| b.as_bool() == Some(true)).count()),
                s["dropped"].as_array().map(|d| d.iter().map(|x| x.to_string()).collect::<Vec<_>>()).unwrap_or_default()
            )
        }
        t => format!("{t}({}, {}) = {} over {} rows\n", v["x"].as_str().unwrap_or(""), v["y"].as_str().unwrap_or(""), f(&v["value"]), v["n"]),
    }
}

#[allow(clippy::too_many_arguments)]
fn extract_features(
    posts: &Path,
    events: &Path,
    users: &Path,
    traits: &Path,
    profiles: Option<&Path>,
    lexicon: Option<&Path>,
    schema: Option<&str>,
    output: &Path,
) -> Result<Outcome, CliError> {
    let schema = schema_arg(schema)?;
    let lex = emotion_lexicon(lexicon)?;
    let posts = table_of::<Post>(posts)?;
    let events = table_of::<EventRecord>(events)?;
    let users = table_of::<UserRecord>(users)?;
    let traits = table_of::<TraitRecord>(traits)?;
    let profiles = profiles.map(table_of::<SocialProfile>).transpose()?;
    let identity = match &profiles {
        Some(p) => run_matching(&posts.rows, &p.rows, users.rows.clone(), &MatchConfig::default())
            .0
            .identity(),
        None => HashMap::new(),
    };
    let trait_map = traits.rows.iter().map(|t| (t.user_id, t.traits)).collect();
    let export = ingest::export_features(
        &JoinInputs {
            events: &events.rows,
            posts: &posts.rows,
            identity: &identity,
            users: &users.rows,
            traits: &trait_map,
            emotions: &lex,
        },
        &schema,
    )
    .map_err(|e| match e {
        ingest::IngestError::UnknownFeature(_) => invalid(e),
        e => failed(e),
    })?;
    let file = std::fs::File::create(output).map_err(|e| failed(format!("cannot write {}: {e}", output.display())))?;
    ingest::write_features(&export.rows, &schema, file).map_err(failed)?;
    let mut counts: BTreeMap<SystemStatus, usize> = BTreeMap::new();
    for r in &export.rows {
        *counts.entry(r.label.expect("joined rows are labeled")).or_default() += 1;
    }
    let rows: Vec<Vec<String>> = counts.iter().map(|(s, n)| vec![s.to_string(), n.to_string()]).collect();
    Ok(Outcome {
        text: table(&["label", "rows"], &rows) + &format!("{} exclusion(s)\n", export.excluded.len()),
        json: json!({
            "rows": export.rows.len(),
            "schema": schema.names(),
            "labels": counts,
            "excluded": export.excluded,
            "output": output.display().to_string(),
        }),
    })
}

fn model_err(e: ModelError) -> CliError {
    match e {
        ModelError::Io { .. } | ModelError::Format(_) => failed(e),
        e => invalid(e),
    }
}

fn feature_rows(path: &Path, schema: &FeatureSchema) -> Result<Vec<FeatureRow>, CliError> {
    require_file(path)?;
    let t = load_features(path, schema).map_err(invalid)?;
    for e in &t.errors {
        log::warn!("{}:{}: skipped row: {}", path.display(), e.line, e.message);
    }
    Ok(t.rows)
}

fn forest_params(a: &ForestArgs) -> ForestParams {
    ForestParams {
        n_trees: a.trees,
        m: a.m,
        seed: a.seed,
        min_samples_leaf: a.min_leaf,
    }
}

fn load_model(path: &Path) -> Result<Forest, CliError> {
    require_file(path)?;
    Forest::load(path).map_err(invalid)
}

fn train(input: &Path, schema: Option<&str>, args: &ForestArgs, output: &Path) -> Result<Outcome, CliError> {
    let schema = schema_arg(schema)?;
    let rows = feature_rows(input, &schema)?;
    let params = forest_params(args);
    let forest = train_forest(&rows, &schema, &params).map_err(model_err)?;
    let oob = oob_error(&forest, &rows).map_err(failed)?;
    forest.save(output).map_err(failed)?;
    let m = params.features_per_split(schema.len()).map_err(model_err)?;
    Ok(Outcome {
        text: format!(
            "trained {} trees on {} rows (m = {m}, seed {})\nout-of-bag error {:.4} over {} rows\nmodel written to {}\n",
            params.n_trees,
            rows.len(),
            params.seed,
            oob.error,
            oob.covered,
            output.display()
        ),
        json: json!({
            "rows": rows.len(),
            "trees": params.n_trees,
            "m": m,
            "seed": params.seed,
            "labels": forest.labels,
            "oob": oob,
            "output": output.display().to_string(),
        }),
    })
}

fn predict(model_path: &Path, input: &Path, output: Option<&Path>) -> Result<Outcome, CliError> {
    let forest = load_model(model_path)?;
    let rows = feature_rows(input, &forest.schema)?;
    let mut out = Vec::new();
    let mut table_rows = Vec::new();
    for (i, r) in rows.iter().enumerate() {
        let p = forest.predict(&r.values).map_err(model_err)?;
        let dist = forest.distribution(&p);
        table_rows.push(vec![
            i.to_string(),
            r.label.map(|l| l.to_string()).unwrap_or_default(),
            p.label.to_string(),
            dist.iter().map(|d| format!("{d:.2}")).collect::<Vec<_>>().join(" "),
        ]);
        out.push((i, r.label, p.label, dist));
    }
    if let Some(path) = output {
        let mut w = csv::Writer::from_path(path).map_err(failed)?;
        let mut header = vec!["row".to_string(), "label".into(), "predicted".into()];
        header.extend(SystemStatus::ALL.iter().map(|s| format!("p_{}", s.name().to_lowercase())));
        w.write_record(&header).map_err(failed)?;
        for (i, label, pred, dist) in &out {
            let mut rec = vec![i.to_string(), label.map(|l| l.to_string()).unwrap_or_default(), pred.to_string()];
            rec.extend(dist.iter().map(|d| d.to_string()));
            w.write_record(&rec).map_err(failed)?;
        }
        w.flush().map_err(failed)?;
    }
    let statuses: Vec<&str> = SystemStatus::ALL.iter().map(|s| s.name()).collect();
    Ok(Outcome {
        text: table(&["#", "label", "predicted", &format!("P({})", statuses.join(" "))], &table_rows),
        json: json!({
            "statuses": statuses,
            "predictions": out.iter().map(|(i, l, p, d)| json!({ "row": i, "label": l, "predicted": p, "distribution": d })).collect::<Vec<_>>(),
        }),
    })
}

fn evaluate(model_path: &Path, input: &Path, output: Option<&Path>) -> Result<Outcome, CliError> {
    let forest = load_model(model_path)?;
    let rows = feature_rows(input, &forest.schema)?;
    let report = model::evaluate_forest(&forest, &rows).map_err(model_err)?;
    let value = to_value(&report);
    write_json(output, &value)?;
    Ok(Outcome {
        text: report.to_string(),
        json: value,
    })
}

fn cross_validate_cmd(
    input: &Path,
    schema: Option<&str>,
    folds: usize,
    args: &ForestArgs,
    output: Option<&Path>,
) -> Result<Outcome, CliError> {
    let schema = schema_arg(schema)?;
    let rows = feature_rows(input, &schema)?;
    let params = forest_params(args);
    let cv = cross_validate(&rows, &schema, folds, &params, params.seed).map_err(model_err)?;
    let value = to_value(&cv);
    write_json(output, &value)?;
    Ok(Outcome {
        text: format!(
            "{}-fold cross-validation ({}), {} trees, seed {}\n{}",
            cv.folds,
            if cv.stratified { "stratified" } else { "not stratified" },
            params.n_trees,
            params.seed,
            cv.report
        ),
        json: value,
    })
}

#[allow(clippy::too_many_arguments)]
fn serve(
    port: u16,
    host: &str,
    seed: u64,
    store: Option<PathBuf>,
    model: Option<&Path>,
    static_dir: Option<PathBuf>,
    questionnaire: Option<&Path>,
    slow_secs: f64,
    down_secs: f64,
) -> Result<Outcome, CliError> {
    let secs = |flag: &str, s: f64| {
        std::time::Duration::try_from_secs_f64(s)
            .map_err(|_| invalid(format!("--{flag} must be a nonnegative number of seconds")))
    };
    if let Some(d) = &static_dir {
        if !d.is_dir() {
            return Err(invalid(format!("static directory not found: {}", d.display())));
        }
    }
    let config = pmsys_service::ServiceConfig {
        seed,
        store_path: store,
        slow_delay: secs("slow-secs", slow_secs)?,
        down_window: secs("down-secs", down_secs)?,
        static_dir,
        model: model.map(load_model).transpose()?,
        questionnaire: match questionnaire {
            Some(p) => {
                require_file(p)?;
                load_questionnaire(p).map_err(invalid)?
            }
            None => QuestionnaireDef::bundled(),
        },
        schema: FeatureSchema::default(),
    };
    let addr: std::net::SocketAddr = format!("{host}:{port}")
        .parse()
        .map_err(|e| invalid(format!("bad --host/--port: {e}")))?;
    let rt = tokio::runtime::Runtime::new().map_err(failed)?;
    rt.block_on(pmsys_service::serve(config, addr)).map_err(failed)?;
    Ok(Outcome {
        json: json!({ "stopped": true }),
        text: String::new(),
    })
}
