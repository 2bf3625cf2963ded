mod common;

use std::fs;
use std::path::{Path, PathBuf};

use mediadiet::corpus::{
    detokenize, ingest_documents, ingest_files, read_documents, read_keywords, split_sentences, tokenize, CorpusError,
    CorpusManifest, IngestOptions, MediaDietDataset,
};
use proptest::prelude::*;

/// Hand-segmented passages exercising the abbreviation list.
const ABBREVIATION_CASES: &[(&str, &[&str])] = &[
    ("Dr. Smith arrived.", &["Dr. Smith arrived."]),
    ("Mr. Jones left early. He was tired.", &["Mr. Jones left early.", "He was tired."]),
    ("Mrs. Lee spoke first. Ms. Park followed.", &["Mrs. Lee spoke first.", "Ms. Park followed."]),
    ("The U.S. economy slowed. Markets fell.", &["The U.S. economy slowed.", "Markets fell."]),
    ("Prof. Adams teaches physics.", &["Prof. Adams teaches physics."]),
    ("Sen. Warren voted no. Rep. Cole voted yes.", &["Sen. Warren voted no.", "Rep. Cole voted yes."]),
    ("Gen. Milley testified on Tuesday.", &["Gen. Milley testified on Tuesday."]),
    ("The plan, i.e. the second one, passed.", &["The plan, i.e. the second one, passed."]),
    ("Bring fruit, e.g. apples. Leave the rest.", &["Bring fruit, e.g. apples.", "Leave the rest."]),
    ("Acme Inc. reported a loss. Shares dropped.", &["Acme Inc. reported a loss.", "Shares dropped."]),
    ("He lives on Main St. near the park.", &["He lives on Main St. near the park."]),
    ("The vote is set for Jan. 5 this year.", &["The vote is set for Jan. 5 this year."]),
    ("It rained on Feb. 2. Then it snowed.", &["It rained on Feb. 2.", "Then it snowed."]),
    ("Gov. Newsom issued an order. Schools closed.", &["Gov. Newsom issued an order.", "Schools closed."]),
    ("The U.K. and the U.N. met.", &["The U.K. and the U.N. met."]),
    ("Sgt. Diaz was promoted. Capt. Roy was not.", &["Sgt. Diaz was promoted.", "Capt. Roy was not."]),
    ("Smith et al. found an effect.", &["Smith et al. found an effect."]),
    ("Cases rose vs. last week.", &["Cases rose vs. last week."]),
    ("Pens, paper, etc. are provided.", &["Pens, paper, etc. are provided."]),
    ("The meeting starts at 9 a.m. sharp.", &["The meeting starts at 9 a.m. sharp."]),
    ("It ended at 5 p.m. on Friday.", &["It ended at 5 p.m. on Friday."]),
    ("She earned a Ph.D. in biology.", &["She earned a Ph.D. in biology."]),
    ("He flew to Washington, D.C. last night.", &["He flew to Washington, D.C. last night."]),
    ("Lt. Ortiz arrived. Col. Reed waited.", &["Lt. Ortiz arrived.", "Col. Reed waited."]),
    ("Martin Luther King Jr. spoke here.", &["Martin Luther King Jr. spoke here."]),
    ("Is it safe? Nobody knows.", &["Is it safe?", "Nobody knows."]),
    ("Stop! Wait for the signal.", &["Stop!", "Wait for the signal."]),
    ("What?! That cannot be.", &["What?!", "That cannot be."]),
    ("He paused... then continued.", &["He paused...", "then continued."]),
    ("She said \"no.\" Then she left.", &["She said \"no.\"", "Then she left."]),
    ("(The office was closed.) Staff worked from home.", &["(The office was closed.)", "Staff worked from home."]),
    ("Prices rose 3.5 percent. Wages did not.", &["Prices rose 3.5 percent.", "Wages did not."]),
    ("The Rev. Alan Hart led prayers.", &["The Rev. Alan Hart led prayers."]),
    ("Mt. Rainier is visible today.", &["Mt. Rainier is visible today."]),
    ("Turn onto Park Ave. and stop.", &["Turn onto Park Ave. and stop."]),
    ("The store on Sunset Blvd. closed. It may reopen.", &["The store on Sunset Blvd. closed.", "It may reopen."]),
    ("Approx. 40 people came.", &["Approx. 40 people came."]),
    ("See Fig. 2 for details.", &["See Fig. 2 for details."]),
    ("The Dept. of Labor reported gains.", &["The Dept. of Labor reported gains."]),
    ("Hon. Judge Kim presided.", &["Hon. Judge Kim presided."]),
    ("Supt. Walsh closed the district. Parents reacted.", &["Supt. Walsh closed the district.", "Parents reacted."]),
    ("Pres. Lincoln was elected in 1860.", &["Pres. Lincoln was elected in 1860."]),
    ("Widgets Ltd. and Gadgets Corp. merged.", &["Widgets Ltd. and Gadgets Corp. merged."]),
    ("Cmdr. Hale and Adm. Byrd met. They agreed.", &["Cmdr. Hale and Adm. Byrd met.", "They agreed."]),
    ("The deadline is Sept. 30.", &["The deadline is Sept. 30."]),
    (
        "Dr. Fauci said the outbreak is serious. Dr. Birx agreed.",
        &["Dr. Fauci said the outbreak is serious.", "Dr. Birx agreed."],
    ),
    ("The CDC updated its guidance. The WHO did too.", &["The CDC updated its guidance.", "The WHO did too."]),
    ("No punctuation at the end", &["No punctuation at the end"]),
    ("One.Two are joined without space. Next.", &["One.Two are joined without space.", "Next."]),
    (
        "Officials met on Wed. and Thu. to talk. Nothing changed.",
        &["Officials met on Wed. and Thu. to talk.", "Nothing changed."],
    ),
];

#[test]
fn abbreviation_fixture() {
    assert_eq!(ABBREVIATION_CASES.len(), 50);
    for (text, want) in ABBREVIATION_CASES {
        assert_eq!(split_sentences(text), *want, "segmenting {text:?}");
    }
}

#[test]
fn tokenize_detokenize_is_idempotent_on_fixture() {
    for (text, _) in ABBREVIATION_CASES {
        let tokens = tokenize(text);
        assert_eq!(tokenize(&detokenize(&tokens)), tokens, "{text:?}");
    }
}

fn strip_ws(s: &str) -> String {
    s.chars().filter(|c| !c.is_whitespace()).collect()
}

proptest! {
    #[test]
    fn segmentation_preserves_text(text in "[A-Za-z .?!\"()]{0,80}") {
        let joined: String = split_sentences(&text).concat();
        prop_assert_eq!(strip_ws(&joined), strip_ws(&text));
    }

    #[test]
    fn segmentation_is_deterministic(text in "\\PC{0,60}") {
        prop_assert_eq!(split_sentences(&text), split_sentences(&text));
    }

    #[test]
    fn tokens_are_nonempty_and_lowercase(text in "\\PC{0,60}") {
        for t in tokenize(&text) {
            prop_assert!(!t.is_empty());
            prop_assert!(!t.chars().all(char::is_whitespace));
            prop_assert_eq!(t.to_lowercase(), t.clone());
        }
    }

    #[test]
    fn tokenization_round_trips(text in "[a-z0-9 ,.!?']{0,60}") {
        let tokens = tokenize(&text);
        prop_assert_eq!(tokenize(&detokenize(&tokens)), tokens);
    }
}

fn header(id: &str) -> CorpusManifest {
    CorpusManifest {
        dataset_id: id.into(),
        outlet: "TEST".into(),
        medium: mediadiet::corpus::Medium::Web,
        topic: "t".into(),
        window_start: common::date("2020-03-01"),
        window_end: common::date("2020-03-31"),
        doc_count: 0,
        sentence_count: 0,
    }
}

fn docs_jsonl(rows: &[(&str, &str, &str)]) -> String {
    rows.iter()
        .map(|(id, date, body)| {
            serde_json::json!({"doc_id": id, "outlet": "TEST", "medium": "web", "published_at": date, "title": "", "body": body})
                .to_string()
                + "\n"
        })
        .collect()
}

fn ingest_str(text: &str, h: &CorpusManifest) -> Result<mediadiet::corpus::IngestOutcome, CorpusError> {
    ingest_documents(read_documents(text.as_bytes(), "mem"), h, &IngestOptions::default())
}

#[test]
fn counts_follow_input() {
    let text = docs_jsonl(&[("b", "2020-03-02", "One. Two. Three."), ("a", "2020-03-03", "Four? Five!")]);
    let out = ingest_str(&text, &header("d")).unwrap();
    assert_eq!(out.dataset.manifest.doc_count, 2);
    assert_eq!(out.dataset.manifest.sentence_count, 5);
    let order: Vec<&str> = out.dataset.sentences().map(|s| s.sent_id.as_str()).collect();
    assert_eq!(order, ["a:0000", "a:0001", "b:0000", "b:0001", "b:0002"]);
}

#[test]
fn empty_stream_warns() {
    let out = ingest_str("", &header("d")).unwrap();
    assert_eq!(out.dataset.manifest.doc_count, 0);
    assert!(out.warnings.iter().any(|w| w.contains("empty")));
}

#[test]
fn malformed_line_reports_line_number() {
    let text = docs_jsonl(&[("a", "2020-03-02", "Fine.")]) + "\n{not json}\n";
    match ingest_str(&text, &header("d")) {
        Err(CorpusError::Malformed { line, .. }) => assert_eq!(line, 3),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn out_of_window_documents_are_counted() {
    let text =
        docs_jsonl(&[("a", "2020-02-28", "Early."), ("b", "2020-03-05", "Inside."), ("c", "2020-04-01", "Late.")]);
    let out = ingest_str(&text, &header("d")).unwrap();
    assert_eq!(out.skipped.outside_window, vec!["a", "c"]);
    assert_eq!(out.dataset.manifest.doc_count, 1);
}

#[test]
fn duplicate_doc_ids_are_rejected() {
    let text = docs_jsonl(&[("a", "2020-03-02", "One."), ("a", "2020-03-03", "Two.")]);
    assert!(matches!(ingest_str(&text, &header("d")), Err(CorpusError::DuplicateDocId { line: 2, .. })));
}

#[test]
fn export_then_reingest_is_identity() {
    let text = docs_jsonl(&[
        ("x1", "2020-03-02", "Dr. Smith spoke. The U.S. response was slow! Was it?"),
        ("x2", "2020-03-09", "Cases rose 3.5 percent.  Schools closed."),
    ]);
    let first = ingest_str(&text, &header("d")).unwrap().dataset;
    let mut exported = Vec::new();
    first.export_documents(&mut exported).unwrap();
    let second = ingest_str(std::str::from_utf8(&exported).unwrap(), &header("d")).unwrap().dataset;
    assert_eq!(first.manifest, second.manifest);
    let sents = |d: &MediaDietDataset| {
        d.sentences().map(|s| (s.sent_id.clone(), s.text.clone(), s.tokens.clone())).collect::<Vec<_>>()
    };
    assert_eq!(sents(&first), sents(&second));
}

#[test]
fn save_and_load_round_trip() {
    let text = docs_jsonl(&[("a", "2020-03-02", "One. Two.")]);
    let ds = ingest_str(&text, &header("rt")).unwrap().dataset;
    let dir = tempfile::tempdir().unwrap();
    ds.save(dir.path()).unwrap();
    assert_eq!(MediaDietDataset::load(dir.path(), "rt").unwrap(), ds);
    assert!(matches!(MediaDietDataset::load(dir.path(), "missing"), Err(CorpusError::DatasetNotFound(_))));
}

fn toy_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/toy")
}

/// Counts sentences in the toy corpus bodies by counting periods and
/// discounting those inside the abbreviations the corpus uses.
fn toy_sentence_oracle(body: &str) -> u64 {
    let periods = body.matches('.').count();
    (periods - body.matches("Dr.").count() - body.matches("Mr.").count() - 2 * body.matches("U.S.").count()) as u64
}

#[test]
fn toy_corpus_counts_match_line_oracle() {
    let config: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(toy_dir().join("config.json")).unwrap()).unwrap();
    let mut total_docs = 0;
    for entry in config["datasets"].as_array().unwrap() {
        let h = CorpusManifest::read(toy_dir().join(entry["manifest"].as_str().unwrap())).unwrap();
        let inputs: Vec<PathBuf> =
            entry["inputs"].as_array().unwrap().iter().map(|p| toy_dir().join(p.as_str().unwrap())).collect();
        let keywords =
            entry.get("keywords").and_then(|k| k.as_str()).map(|k| read_keywords(toy_dir().join(k)).unwrap());
        let out = ingest_files(&inputs, &h, &IngestOptions { keyword_filter: keywords }).unwrap();

        let mut lines = 0u64;
        let mut sentences = 0u64;
        let skipped: Vec<&String> = out.skipped.outside_window.iter().chain(&out.skipped.filtered_out).collect();
        for p in &inputs {
            for line in fs::read_to_string(p).unwrap().lines().filter(|l| !l.trim().is_empty()) {
                lines += 1;
                let doc: serde_json::Value = serde_json::from_str(line).unwrap();
                if !skipped.iter().any(|s| *s == doc["doc_id"].as_str().unwrap()) {
                    sentences += toy_sentence_oracle(doc["body"].as_str().unwrap());
                }
            }
        }
        total_docs += lines;
        assert_eq!(out.dataset.manifest.doc_count, lines - skipped.len() as u64, "{}", h.dataset_id);
        assert_eq!(out.dataset.manifest.sentence_count, sentences, "{}", h.dataset_id);
    }
    assert!(total_docs >= 30);
}
