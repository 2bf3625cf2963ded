use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use mediadiet::analysis::pearson;
use mediadiet::backend::{GatewayError, Transport};
use mediadiet::paraphrase::{
    backtranslate, robustness_eval, synonym_substitute, BacktranslateParams, EmbeddingTable, MtClient, ParaphraseError,
    SynsubParams, STOPWORDS,
};
use mediadiet::probe::{PromptSpec, ScoreRow, ScoreTable, TargetSpec, Variant, BLANK};
use mediadiet::survey::SurveyWave;
use proptest::prelude::*;
use serde_json::{json, Value};

fn prompt(template: &str) -> PromptSpec {
    PromptSpec {
        prompt_id: "p-1".into(),
        template: template.into(),
        targets: vec![TargetSpec::new("t0", &[], "yes"), TargetSpec::new("t1", &[], "no")],
        question_id: "p".into(),
        variant: Variant::Orig,
        source_prompt_id: None,
    }
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>();
    dot(a, b) / (dot(a, a).sqrt() * dot(b, b).sqrt())
}

/// Exhaustive reference for synonym substitution on space-separated
/// lowercase templates.
fn brute_force(template: &str, table: &BTreeMap<String, Vec<f64>>, params: SynsubParams) -> String {
    let protected: BTreeSet<&str> = ["t0", "t1"].into();
    let words: Vec<&str> = template.split(' ').collect();
    let mut candidates: Vec<(f64, usize, String)> = Vec::new();
    for (pos, w) in words.iter().enumerate() {
        if *w == BLANK || STOPWORDS.contains(w) || protected.contains(w) {
            continue;
        }
        let Some(q) = table.get(*w) else { continue };
        if q.iter().all(|v| *v == 0.0) {
            continue;
        }
        let mut best: Option<(f64, &str)> = None;
        for (other, v) in table {
            if other == w || protected.contains(other.as_str()) || v.iter().all(|x| *x == 0.0) {
                continue;
            }
            let c = cos(q, v);
            // strict improvement keeps the alphabetically first among ties
            if best.is_none_or(|(b, _)| c > b) {
                best = Some((c, other));
            }
        }
        if let Some((c, other)) = best {
            if c >= params.min_cos {
                candidates.push((c, pos, other.to_string()));
            }
        }
    }
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    candidates.truncate(params.max_subs);
    let mut out: Vec<String> = words.iter().map(|w| w.to_string()).collect();
    for (_, pos, repl) in candidates {
        out[pos] = repl;
    }
    out.join(" ")
}

proptest! {
    #[test]
    fn synsub_matches_exhaustive_search(
        vecs in proptest::collection::vec(proptest::collection::vec(-2i32..=2, 3), 6),
        words in proptest::collection::vec(0usize..9, 1..8),
        blank_at in 0usize..8,
        max_subs in 1usize..4,
        min_cos in 0.1f64..0.95,
    ) {
        // w0..w3 and the two targets carry vectors; "the" is a stopword and
        // "zz" has no vector
        let names = ["w0", "w1", "w2", "w3", "t0", "t1"];
        let table: BTreeMap<String, Vec<f64>> = names
            .iter()
            .zip(&vecs)
            .map(|(n, v)| (n.to_string(), v.iter().map(|x| *x as f64).collect()))
            .collect();
        let vocab = ["w0", "w1", "w2", "w3", "t0", "t1", "the", "zz", "w0"];
        let mut tokens: Vec<&str> = words.iter().map(|i| vocab[*i]).collect();
        tokens.insert(blank_at.min(tokens.len()), BLANK);
        let template = tokens.join(" ");
        let params = SynsubParams { max_subs, min_cos };
        let set = synonym_substitute(&prompt(&template), &EmbeddingTable::new(table.clone()).unwrap(), params).unwrap();
        prop_assert_eq!(set.variants.len(), 1);
        let v = &set.variants[0];
        prop_assert_eq!(&v.template, &brute_force(&template, &table, params));
        prop_assert_eq!(v.template.matches(BLANK).count(), 1);
        prop_assert_eq!(v.variant, Variant::Synsub);
        prop_assert_eq!(v.source_prompt_id.as_deref(), Some("p-1"));
        prop_assert_eq!(&v.targets, &prompt(&template).targets);
    }
}

#[test]
fn capitalized_words_keep_their_case() {
    let table = EmbeddingTable::read("schools 1 0\ncolleges 0.9 0.1\n".as_bytes()).unwrap();
    let set = synonym_substitute(&prompt("Schools are [BLANK]"), &table, SynsubParams::default()).unwrap();
    assert_eq!(set.variants[0].template, "Colleges are [BLANK]");
}

#[test]
fn embedding_table_text_format() {
    let table = EmbeddingTable::read("3 2\na 1 0\nb 0 1\nc 0.5 0.5\n".as_bytes()).unwrap();
    assert_eq!(table.len(), 3);
    assert_eq!(table.dim(), 2);
    assert_eq!(table.get("c"), Some(&[0.5, 0.5][..]));
    assert!(EmbeddingTable::read("a 1 0\nb 1\n".as_bytes()).is_err());
    assert!(
        matches!(EmbeddingTable::read("a 1 x\n".as_bytes()), Err(ParaphraseError::Table(m)) if m.contains("line 1"))
    );
}

/// Pivot translations come from a fixed list; the way back is the identity.
struct ScriptedMt {
    forward: Vec<&'static str>,
}

impl Transport for ScriptedMt {
    fn post(&self, path: &str, body: &Value) -> Result<Value, GatewayError> {
        assert_eq!(path, "/translate");
        if body["direction"] == "en-nl" {
            assert_eq!(body["sampling"], json!({"topk": 20}));
            let n = body["n"].as_u64().unwrap() as usize;
            Ok(json!({"outputs": self.forward.iter().take(n).collect::<Vec<_>>()}))
        } else {
            assert_eq!(body["sampling"], json!("greedy"));
            Ok(json!({"outputs": [body["text"]]}))
        }
    }

    fn describe(&self) -> String {
        "scripted".into()
    }
}

#[test]
fn backtranslation_filters_and_restores_the_blank() {
    let mt = MtClient::new(Arc::new(ScriptedMt {
        forward: vec![
            "The virus is a ZZBLANKZZ danger.",
            "The virus is a ZZBLANKZZ danger.",
            "The virus is dangerous.",
            "ZZBLANKZZ ZZBLANKZZ virus",
            " The illness poses a ZZBLANKZZ threat. ",
        ],
    }));
    let p = prompt("The virus is a [BLANK] threat.");
    let (set, report) = backtranslate(&p, &mt, &BacktranslateParams::default()).unwrap();
    let templates: Vec<&str> = set.variants.iter().map(|v| v.template.as_str()).collect();
    assert_eq!(templates, vec!["The virus is a [BLANK] danger.", "The illness poses a [BLANK] threat."]);
    assert_eq!(set.variants[1].prompt_id, "p-1~bt2");
    assert!(set.variants.iter().all(|v| v.variant == Variant::Backtranslation));
    assert_eq!((report.returned, report.lost_placeholder, report.duplicates), (5, 2, 1));

    let none = MtClient::new(Arc::new(ScriptedMt { forward: vec!["no marker"] }));
    let (set, report) = backtranslate(&p, &none, &BacktranslateParams::default()).unwrap();
    assert!(set.variants.is_empty());
    assert_eq!(report.warnings.len(), 1);
    let bad = BacktranslateParams { n_samples: 0, ..Default::default() };
    assert!(matches!(backtranslate(&p, &none, &bad), Err(ParaphraseError::InvalidParams(_))));
}

fn score_row(diet: &str, prompt_id: &str, variant: Variant, word: &str, score: f64) -> ScoreRow {
    ScoreRow {
        diet_id: diet.into(),
        prompt_id: prompt_id.into(),
        question_id: "q".into(),
        variant,
        target_word: word.into(),
        answer_label: word.into(),
        base_prob: Some(0.1),
        score: Some(score),
        model_tag_base: "b".into(),
        model_tag_diet: "d".into(),
        error: String::new(),
    }
}

#[test]
fn robustness_correlates_mean_variant_scores() {
    let diets = ["A", "B", "C", "D"];
    let props = [0.2, 0.35, 0.5, 0.8];
    let waves: Vec<SurveyWave> = diets
        .iter()
        .zip(props)
        .map(|(d, p)| SurveyWave {
            wave_id: "W".into(),
            field_date: chrono::NaiveDate::from_ymd_opt(2020, 3, 24).unwrap(),
            diet_id: d.to_string(),
            question_id: "q".into(),
            proportions: BTreeMap::from([("yes".to_string(), p)]),
            attention_very_close: 0.3,
            demographics: BTreeMap::new(),
        })
        .collect();
    let orig_scores = [1.0, 1.4, 1.3, 2.5];
    let orig = ScoreTable {
        rows: diets.iter().zip(orig_scores).map(|(d, s)| score_row(d, "q-1", Variant::Orig, "yes", s)).collect(),
    };
    // two synsub variants per diet; the setting uses their mean
    let a = [0.9, 1.1, 2.0, 2.2];
    let b = [1.3, 1.0, 1.2, 3.0];
    let mut rows = Vec::new();
    for (i, d) in diets.iter().enumerate() {
        rows.push(score_row(d, "q-1~synsub1", Variant::Synsub, "yes", a[i]));
        rows.push(score_row(d, "q-2~synsub1", Variant::Synsub, "yes", b[i]));
    }
    let variants = ScoreTable { rows };
    let out = robustness_eval(&orig, &variants, &waves, 200, 5).unwrap();
    assert_eq!(out.len(), 2);
    assert_eq!(out[0].setting, Variant::Orig);
    assert!((out[0].correlation.r - pearson(&orig_scores, &props).unwrap()).abs() < 1e-12);
    let means: Vec<f64> = a.iter().zip(&b).map(|(x, y)| (x + y) / 2.0).collect();
    assert!((out[1].correlation.r - pearson(&means, &props).unwrap()).abs() < 1e-12);

    let partial = ScoreTable { rows: variants.rows[..6].to_vec() };
    assert!(matches!(robustness_eval(&orig, &partial, &waves, 200, 5), Err(ParaphraseError::CoverageMismatch { .. })));
}
