//! Dated, outlet-tagged corpora of segmented and tokenized news sentences.
//!
//! A dataset is stored as `<dataset_id>.jsonl` (one line per document, with
//! its sentences embedded) next to `<dataset_id>.manifest.json`.

mod tokenize;

pub use tokenize::{detokenize, split_sentences, tokenize, ABBREVIATIONS};

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{source_name}:{line}: malformed record: {message}")]
    Malformed { source_name: String, line: usize, message: String },
    #[error("{source_name}:{line}: duplicate doc_id {doc_id:?}")]
    DuplicateDocId { source_name: String, line: usize, doc_id: String },
    #[error("manifest window is inverted: {start} > {end}")]
    InvertedWindow { start: NaiveDate, end: NaiveDate },
    #[error("dataset {0:?} not found")]
    DatasetNotFound(String),
    #[error("invalid manifest: {0}")]
    InvalidManifest(String),
}

impl CorpusError {
    fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        CorpusError::Io { path: path.as_ref().display().to_string(), source }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Medium {
    Web,
    Tv,
    Radio,
}

impl std::fmt::Display for Medium {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Medium::Web => "web",
            Medium::Tv => "tv",
            Medium::Radio => "radio",
        })
    }
}

/// Descriptor of one media diet dataset. Counts are filled in by ingestion;
/// a manifest header passed to [`ingest_documents`] may omit them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub dataset_id: String,
    pub outlet: String,
    pub medium: Medium,
    pub topic: String,
    pub window_start: NaiveDate,
    pub window_end: NaiveDate,
    #[serde(default)]
    pub doc_count: u64,
    #[serde(default)]
    pub sentence_count: u64,
}

impl CorpusManifest {
    pub fn contains(&self, date: NaiveDate) -> bool {
        self.window_start <= date && date <= self.window_end
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| CorpusError::io(path, e))?;
        let manifest: CorpusManifest = serde_json::from_reader(BufReader::new(file))
            .map_err(|e| CorpusError::InvalidManifest(format!("{}: {e}", path.display())))?;
        if manifest.window_start > manifest.window_end {
            return Err(CorpusError::InvertedWindow { start: manifest.window_start, end: manifest.window_end });
        }
        Ok(manifest)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub outlet: String,
    pub medium: Medium,
    pub published_at: NaiveDate,
    #[serde(default)]
    pub title: String,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceRecord {
    pub sent_id: String,
    pub doc_id: String,
    pub text: String,
    pub tokens: Vec<String>,
}

/// A document after segmentation, as stored in the dataset JSONL.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredDocument {
    pub doc_id: String,
    pub outlet: String,
    pub medium: Medium,
    pub published_at: NaiveDate,
    pub title: String,
    pub sentences: Vec<SentenceRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MediaDietDataset {
    pub manifest: CorpusManifest,
    /// Sorted by `doc_id`.
    pub documents: Vec<StoredDocument>,
}

impl MediaDietDataset {
    /// Builds a dataset from already segmented documents, fixing the order
    /// and the manifest counts.
    pub fn new(mut manifest: CorpusManifest, mut documents: Vec<StoredDocument>) -> Self {
        documents.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
        manifest.doc_count = documents.len() as u64;
        manifest.sentence_count = documents.iter().map(|d| d.sentences.len() as u64).sum();
        MediaDietDataset { manifest, documents }
    }

    pub fn id(&self) -> &str {
        &self.manifest.dataset_id
    }

    /// Sentences in stable order: by `doc_id`, then position in the document.
    pub fn sentences(&self) -> impl Iterator<Item = &SentenceRecord> {
        self.documents.iter().flat_map(|d| d.sentences.iter())
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.sentence_count == 0
    }

    pub fn data_path(dir: &Path, dataset_id: &str) -> PathBuf {
        dir.join(format!("{dataset_id}.jsonl"))
    }

    pub fn manifest_path(dir: &Path, dataset_id: &str) -> PathBuf {
        dir.join(format!("{dataset_id}.manifest.json"))
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), CorpusError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| CorpusError::io(dir, e))?;
        let data = Self::data_path(dir, self.id());
        let mut w = BufWriter::new(File::create(&data).map_err(|e| CorpusError::io(&data, e))?);
        for doc in &self.documents {
            let line = serde_json::to_string(doc).expect("document serializes");
            writeln!(w, "{line}").map_err(|e| CorpusError::io(&data, e))?;
        }
        w.flush().map_err(|e| CorpusError::io(&data, e))?;
        let mpath = Self::manifest_path(dir, self.id());
        let json = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        std::fs::write(&mpath, json + "\n").map_err(|e| CorpusError::io(&mpath, e))
    }

    pub fn load(dir: impl AsRef<Path>, dataset_id: &str) -> Result<Self, CorpusError> {
        let dir = dir.as_ref();
        let mpath = Self::manifest_path(dir, dataset_id);
        if !mpath.exists() {
            return Err(CorpusError::DatasetNotFound(dataset_id.to_string()));
        }
        let manifest = CorpusManifest::read(&mpath)?;
        let data = Self::data_path(dir, dataset_id);
        let file = File::open(&data).map_err(|e| CorpusError::io(&data, e))?;
        let source_name = data.display().to_string();
        let mut documents = Vec::new();
        for (idx, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| CorpusError::io(&data, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let doc: StoredDocument = serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
                source_name: source_name.clone(),
                line: idx + 1,
                message: e.to_string(),
            })?;
            documents.push(doc);
        }
        let dataset = MediaDietDataset::new(manifest.clone(), documents);
        if dataset.manifest != manifest {
            return Err(CorpusError::InvalidManifest(format!(
                "stored counts for {dataset_id} do not match the data file"
            )));
        }
        Ok(dataset)
    }

    /// Writes the dataset back out as raw document JSONL (sentences joined
    /// by single spaces), suitable for re-ingestion.
    pub fn export_documents<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for doc in &self.documents {
            let body: Vec<&str> = doc.sentences.iter().map(|s| s.text.as_str()).collect();
            let raw = Document {
                doc_id: doc.doc_id.clone(),
                outlet: doc.outlet.clone(),
                medium: doc.medium,
                published_at: doc.published_at,
                title: doc.title.clone(),
                body: body.join(" "),
            };
            writeln!(w, "{}", serde_json::to_string(&raw).expect("document serializes"))?;
        }
        Ok(())
    }
}

/// Splits a document body into sentence records with ids `<doc_id>:<index>`.
pub fn segment_sentences(doc_id: &str, body: &str) -> Vec<SentenceRecord> {
    split_sentences(body)
        .into_iter()
        .enumerate()
        .map(|(i, text)| SentenceRecord {
            sent_id: format!("{doc_id}:{i:04}"),
            doc_id: doc_id.to_string(),
            tokens: tokenize(&text),
            text,
        })
        .collect()
}

/// Parses document JSONL, yielding one result per non-blank line with the
/// line number attached to any parse failure.
pub fn read_documents<'a, R: BufRead + 'a>(
    reader: R,
    source_name: &'a str,
) -> impl Iterator<Item = Result<(usize, Document), CorpusError>> + 'a {
    reader.lines().enumerate().filter_map(move |(idx, line)| {
        let line_no = idx + 1;
        let line = match line {
            Ok(l) => l,
            Err(e) => return Some(Err(CorpusError::io(source_name, e))),
        };
        if line.trim().is_empty() {
            return None;
        }
        Some(serde_json::from_str::<Document>(&line).map(|d| (line_no, d)).map_err(|e| CorpusError::Malformed {
            source_name: source_name.to_string(),
            line: line_no,
            message: e.to_string(),
        }))
    })
}

/// Reads a keyword list, one word per line; blank lines and `#` comments are
/// ignored. Keywords are lowercased.
pub fn read_keywords(path: impl AsRef<Path>) -> Result<BTreeSet<String>, CorpusError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))?;
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')).map(str::to_lowercase).collect())
}

#[derive(Debug, Clone, Default)]
pub struct IngestOptions {
    /// Keep only documents whose title or body contains one of these tokens.
    pub keyword_filter: Option<BTreeSet<String>>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SkipReport {
    pub outside_window: Vec<String>,
    pub filtered_out: Vec<String>,
    pub empty_body: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct IngestOutcome {
    pub dataset: MediaDietDataset,
    pub skipped: SkipReport,
    pub warnings: Vec<String>,
}

/// Segments and tokenizes a stream of documents into a dataset described by
/// `header`. Documents outside the manifest window are skipped and reported.
pub fn ingest_documents<I>(
    documents: I,
    header: &CorpusManifest,
    options: &IngestOptions,
) -> Result<IngestOutcome, CorpusError>
where
    I: IntoIterator<Item = Result<(usize, Document), CorpusError>>,
{
    if header.window_start > header.window_end {
        return Err(CorpusError::InvertedWindow { start: header.window_start, end: header.window_end });
    }
    let mut seen = BTreeSet::new();
    let mut stored = Vec::new();
    let mut skipped = SkipReport::default();
    let mut warnings = Vec::new();
    for item in documents {
        let (line, doc) = item?;
        if !seen.insert(doc.doc_id.clone()) {
            return Err(CorpusError::DuplicateDocId {
                source_name: header.dataset_id.clone(),
                line,
                doc_id: doc.doc_id,
            });
        }
        if !header.contains(doc.published_at) {
            skipped.outside_window.push(doc.doc_id);
            continue;
        }
        if let Some(keywords) = &options.keyword_filter {
            let hit = tokenize(&doc.title).iter().chain(tokenize(&doc.body).iter()).any(|t| keywords.contains(t));
            if !hit {
                skipped.filtered_out.push(doc.doc_id);
                continue;
            }
        }
        let sentences = segment_sentences(&doc.doc_id, &doc.body);
        if sentences.is_empty() {
            skipped.empty_body.push(doc.doc_id.clone());
        }
        stored.push(StoredDocument {
            doc_id: doc.doc_id,
            outlet: doc.outlet,
            medium: doc.medium,
            published_at: doc.published_at,
            title: doc.title,
            sentences,
        });
    }
    if stored.is_empty() {
        warnings.push(format!("dataset {} is empty after ingestion", header.dataset_id));
    }
    if !skipped.outside_window.is_empty() {
        warnings.push(format!(
            "{} document(s) outside the {}..{} window were skipped",
            skipped.outside_window.len(),
            header.window_start,
            header.window_end
        ));
    }
    Ok(IngestOutcome { dataset: MediaDietDataset::new(header.clone(), stored), skipped, warnings })
}

/// Ingests one or more JSONL files into a dataset.
pub fn ingest_files(
    inputs: &[PathBuf],
    header: &CorpusManifest,
    options: &IngestOptions,
) -> Result<IngestOutcome, CorpusError> {
    let mut docs = Vec::new();
    for path in inputs {
        let file = File::open(path).map_err(|e| CorpusError::io(path, e))?;
        let name = path.display().to_string();
        for item in read_documents(BufReader::new(file), &name) {
            docs.push(item?);
        }
    }
    ingest_documents(docs.into_iter().map(Ok), header, options)
}
