mod common;

use std::collections::HashMap;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use pmsys_core::emotions::{batch_emotions, score_emotions, EmotionLexicon, EmotionVector};
use pmsys_core::traits::{
    normalize_trait, score_questionnaire, score_trait_linear, QuestionnaireDef,
    RawScale, Trait, TraitModel,
};

fn features(values: [f64; 5]) -> HashMap<String, f64> {
    common::EQ_TERMS.iter().zip(values).map(|((n, _), v)| (n.to_string(), v)).collect()
}

#[test]
fn extraversion_fixtures() {
    let m = TraitModel::extraversion_default();
    assert_eq!(score_trait_linear(&features([0.0; 5]), &m, Trait::Extraversion).unwrap(), 17.1407);
    let settings = [
        [0.0, 1.0, 0.0, 0.0, 0.0],
        [120.0, 85.5, 2.0, 14.25, 0.5],
        [3.5, 60.0, 0.0, 9.0, 1.25],
    ];
    for s in settings {
        let mut expected = 17.1407;
        for ((_, c), v) in common::EQ_TERMS.iter().zip(s) {
            expected += c * v;
        }
        let got = score_trait_linear(&features(s), &m, Trait::Extraversion).unwrap();
        assert!((got - expected).abs() < 1e-12, "{s:?}: {got} vs {expected}");
    }
    let one = score_trait_linear(&features([0.0, 1.0, 0.0, 0.0, 0.0]), &m, Trait::Extraversion).unwrap();
    assert!((one - 17.0604).abs() < 1e-12);
    let mut partial = features([0.0; 5]);
    partial.remove("LIWC.HEARING");
    let err = score_trait_linear(&partial, &m, Trait::Extraversion).unwrap_err();
    assert!(err.to_string().contains("LIWC.HEARING"));
}

#[test]
fn normalize_endpoints() {
    let s = RawScale::default();
    assert_eq!(normalize_trait(1.0, s), 0.0);
    assert_eq!(normalize_trait(7.0, s), 1.0);
    assert_eq!(normalize_trait(4.0, s), 0.5);
    assert_eq!(normalize_trait(17.1407, s), 1.0);
}

#[test]
fn ten_item_hand_scored() {
    let s = score_questionnaire(&[5, 2, 4, 4, 3, 1, 5, 2, 1, 1], &common::ten_item()).unwrap();
    // E (5 + 4)/2, A (4 + 2)/2, C (3 + 1)/2, N (1 + 2)/2, O (1 + 5)/2
    let raw = [3.0, 2.0, 4.5, 3.0, 1.5];
    let got = s.raw.as_array();
    for t in Trait::ALL {
        let want = match t {
            Trait::Openness => raw[0],
            Trait::Conscientiousness => raw[1],
            Trait::Extraversion => raw[2],
            Trait::Agreeableness => raw[3],
            Trait::Neuroticism => raw[4],
        };
        assert!((s.raw.get(t) - want).abs() < 1e-12, "{t:?} {got:?}");
        assert!((s.traits.get(t) - (want - 1.0) / 4.0).abs() < 1e-12);
    }
}

#[test]
fn midpoint_and_range_errors() {
    let def = QuestionnaireDef::bundled();
    let s = score_questionnaire(&vec![3; def.items().len()], &def).unwrap();
    assert!(s.traits.as_array().iter().all(|&v| v == 0.5));
    let mut bad = vec![3; def.items().len()];
    bad[4] = 6;
    let err = score_questionnaire(&bad, &def).unwrap_err();
    assert!(err.to_string().contains('4'));
}

#[test]
fn reversal_is_an_involution() {
    let def = common::ten_item();
    for r in 1..=5 {
        assert_eq!(def.reverse(def.reverse(r)), r);
    }
    assert_eq!(def.reverse(5), 1);
}

#[test]
fn thousand_texts_sum_to_one() {
    let lex = EmotionLexicon::bundled();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..1000 {
        let text = common::random_text(&mut rng, common::EMOTION_VOCAB);
        let v = score_emotions(&text, &lex);
        assert!((v.sum() - 1.0).abs() <= 1e-9, "{text:?}");
        assert!(v.as_array().iter().all(|x| (0.0..=1.0).contains(x)));
        let doubled = score_emotions(&format!("{text} {text}"), &lex);
        for (a, b) in v.as_array().iter().zip(doubled.as_array()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn emotion_examples() {
    let lex = EmotionLexicon::bundled();
    assert_eq!(score_emotions("zzz qqq", &lex), EmotionVector::UNIFORM);
    let one = score_emotions("thanks great help me", &lex);
    let batch = batch_emotions(&["thanks great help me"], &lex).unwrap();
    assert_eq!(one, batch);
    let twice = batch_emotions(&["thanks great", "thanks great"], &lex).unwrap();
    assert_eq!(twice, score_emotions("thanks great", &lex));
    assert!(batch_emotions::<&str>(&[], &lex).is_err());
    // a reference row off the simplex normalises to a unit sum
    let row = EmotionVector::normalize([0.236374, 0.148785, 0.167954, 0.116915, 0.517816]).unwrap();
    assert!((row.sum() - 1.0).abs() < 1e-12);
}

proptest! {
    #[test]
    fn linear_model_scales(v in prop::array::uniform5(-50.0f64..50.0)) {
        let m = pmsys_core::traits::parse_trait_model(
            "trait extraversion\nintercept 0\nterm MRC.K_F_NSAMP -0.0379\nterm LIWC.UNIQUE -0.0803\n\
             term LIWC.ABBREVIATIONS -0.6074\nterm LIWC.PRONOUN 0.1445\nterm LIWC.HEARING -0.3941\n",
        ).unwrap();
        let a = score_trait_linear(&features(v), &m, Trait::Extraversion).unwrap();
        let b = score_trait_linear(&features(v.map(|x| 2.0 * x)), &m, Trait::Extraversion).unwrap();
        prop_assert!((b - 2.0 * a).abs() < 1e-9);
    }

    #[test]
    fn questionnaire_traits_in_unit_range(r in prop::collection::vec(1i64..=5, 50)) {
        let s = score_questionnaire(&r, &QuestionnaireDef::bundled()).unwrap();
        prop_assert!(s.traits.as_array().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn sliders_normalize(raw in prop::array::uniform5(0.0f64..1.0)) {
        let v = EmotionVector::normalize(raw).unwrap();
        prop_assert!((v.sum() - 1.0).abs() <= 1e-9);
    }
}
