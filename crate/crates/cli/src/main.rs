use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use mediadiet::analysis::{
    fit_gam, fit_ols, grouped_correlations, pearson_bootstrap, write_correlations_csv, write_table1, GamOptions,
    GroupBy, GroupedCorrelation, OlsModel, OlsOptions, DEFAULT_BOOTSTRAP,
};
use mediadiet::backend::{
    open_backend, BackendKind, BackendRef, GatewayOptions, HttpTransport, MaskedScorer, ReplayTransport, Transport,
};
use mediadiet::corpus::{ingest_files, read_keywords, CorpusManifest, IngestOptions, MediaDietDataset};
use mediadiet::explain::{nearest_training_sentences, ExplainOptions, DEFAULT_BATCH_SIZE, DEFAULT_K};
use mediadiet::ngram::{BackgroundUnigrams, NGramModel, DEFAULT_DISCOUNT, DEFAULT_ORDER};
use mediadiet::paraphrase::{
    backtranslate, robustness_eval, synonym_substitute, BacktranslateParams, EmbeddingTable, MtClient, SynsubParams,
    DEFAULT_BT_SAMPLES, DEFAULT_BT_TOPK, DEFAULT_MAX_SUBS, DEFAULT_MIN_COS, DEFAULT_PIVOT,
};
use mediadiet::pipeline::{parse_stages, run_pipeline, PipelineConfig, PipelineError, Stage};
use mediadiet::probe::{load_prompts, save_prompts, score_matrix, ScoreTable, SynonymLexicon};
use mediadiet::survey::{load_survey_csv, write_survey_csv, AnalysisDataset, AnalysisRow, SurveyColumns};
use mediadiet::synth::{
    drift_prompts, drifting_corpora, gen_corpus, gen_survey, record_hash_embed_replay, DriftSpec, SurveyGenParams,
    SynthSpec,
};

#[derive(Parser)]
#[command(name = "mediadiet", version, about = "Media diet modeling toolkit")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Segment and tokenize raw JSONL news documents into a dataset.
    Ingest(IngestArgs),
    /// Train a Kneser-Ney n-gram model (and optionally a unigram table).
    TrainNgram(TrainArgs),
    /// Score prompts under each diet backend against the base backend.
    Score(ScoreArgs),
    /// Generate prompt paraphrases.
    #[command(subcommand)]
    Paraphrase(ParaphraseCommand),
    /// Correlations, regressions and GAM over a joined analysis dataset.
    Analyze(AnalyzeArgs),
    /// Nearest training sentences to a filled-in prompt.
    Explain(ExplainArgs),
    /// Rolling-window predictions, driven by a pipeline config.
    Rolling(RollingArgs),
    /// Synthetic corpora, surveys and fixtures.
    #[command(subcommand)]
    Synth(SynthCommand),
    /// Run pipeline stages from a config file.
    Run(RunArgs),
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, required = true)]
    input: Vec<PathBuf>,
    #[arg(long)]
    keyword_filter: Option<PathBuf>,
    /// Directory the dataset is written to.
    #[arg(long, default_value = "datasets")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset id, looked up in --datasets-dir.
    #[arg(long)]
    dataset: String,
    #[arg(long, default_value = "datasets")]
    datasets_dir: PathBuf,
    #[arg(long, default_value_t = DEFAULT_ORDER)]
    order: usize,
    #[arg(long, default_value_t = DEFAULT_DISCOUNT)]
    discount: f64,
    #[arg(long)]
    out: PathBuf,
    /// Also write the dataset's background unigram table here.
    #[arg(long)]
    unigram_out: Option<PathBuf>,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    prompts: PathBuf,
    #[arg(long)]
    synonyms: Option<PathBuf>,
    /// Base backend as KIND:MODEL_TAG:PATH_OR_URL.
    #[arg(long)]
    base: String,
    /// Diet backend as DIET_ID=KIND:MODEL_TAG:PATH_OR_URL; repeatable.
    #[arg(long, required = true)]
    diet: Vec<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum ParaphraseCommand {
    /// Replace content words by their nearest embedding neighbor.
    Synsub {
        #[arg(long)]
        prompts: PathBuf,
        /// Word vectors, one `token v1 .. vd` per line.
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long, default_value_t = DEFAULT_MAX_SUBS)]
        max_subs: usize,
        #[arg(long, default_value_t = DEFAULT_MIN_COS)]
        min_cos: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Round-trip prompts through a pivot language.
    Backtranslate {
        #[arg(long)]
        prompts: PathBuf,
        /// Translation endpoint URL, or a replay cache file.
        #[arg(long)]
        mt: String,
        #[arg(long, default_value_t = DEFAULT_BT_SAMPLES)]
        samples: usize,
        #[arg(long, default_value_t = DEFAULT_BT_TOPK)]
        topk: usize,
        #[arg(long, default_value = DEFAULT_PIVOT)]
        pivot: String,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Joined analysis rows (JSONL), as written by the join stage.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = DEFAULT_BOOTSTRAP)]
    bootstrap: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Comma-separated grouping attributes: category, topic, medium, variant.
    #[arg(long, default_value = "")]
    group_by: String,
    #[arg(long)]
    no_gam: bool,
    /// Paraphrase robustness: scores of paraphrased prompts to compare
    /// against --orig-scores, with survey proportions from --survey.
    #[arg(long, requires_all = ["orig_scores", "survey"])]
    variant_scores: Option<PathBuf>,
    #[arg(long)]
    orig_scores: Option<PathBuf>,
    #[arg(long)]
    survey: Option<PathBuf>,
}

#[derive(Args)]
struct ExplainArgs {
    #[arg(long)]
    prompts: PathBuf,
    #[arg(long)]
    prompt_id: String,
    #[arg(long)]
    fill: String,
    #[arg(long)]
    dataset: String,
    #[arg(long, default_value = "datasets")]
    datasets_dir: PathBuf,
    /// Embedding backend as KIND:MODEL_TAG:PATH_OR_URL.
    #[arg(long)]
    backend: String,
    #[arg(long, default_value_t = DEFAULT_K)]
    k: usize,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RollingArgs {
    #[arg(long)]
    config: PathBuf,
}

#[derive(Subcommand)]
enum SynthCommand {
    /// Corpus of i.i.d. tokens from a JSON spec.
    Corpus {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Survey waves from a planted linear model over a scores CSV.
    Survey {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Weekly corpora with a decaying share of "minor" threat frames.
    Drift {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 26)]
        weeks: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Replay cache of hashing-embedder answers for a dataset and queries.
    EmbedReplay {
        #[arg(long)]
        dataset: String,
        #[arg(long, default_value = "datasets")]
        datasets_dir: PathBuf,
        /// Query sentences to include; repeatable.
        #[arg(long)]
        query: Vec<String>,
        #[arg(long, default_value_t = DEFAULT_BATCH_SIZE)]
        batch_size: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Comma-separated stages; all stages when omitted.
    #[arg(long, default_value = "")]
    stages: String,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config's output directory.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

fn parse_backend(spec: &str) -> Result<BackendRef> {
    let mut parts = spec.splitn(3, ':');
    let (Some(kind), Some(tag), Some(target)) = (parts.next(), parts.next(), parts.next()) else {
        bail!("backend {spec:?} is not KIND:MODEL_TAG:PATH_OR_URL");
    };
    let kind: BackendKind = serde_json::from_value(serde_json::Value::String(kind.to_string()))
        .map_err(|_| anyhow!("unknown backend kind {kind:?}"))?;
    Ok(BackendRef { kind, model_tag: tag.to_string(), endpoint_or_path: target.to_string() })
}

fn open(spec: &str) -> Result<Arc<dyn MaskedScorer>> {
    let r = parse_backend(spec)?;
    open_backend(&r, &GatewayOptions::default()).with_context(|| format!("opening backend {spec}"))
}

fn create(path: &Path) -> Result<fs::File> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::File::create(path).with_context(|| format!("creating {}", path.display()))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut f = create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}

fn ingest(a: IngestArgs) -> Result<()> {
    let header = CorpusManifest::read(&a.manifest)?;
    let options = IngestOptions { keyword_filter: a.keyword_filter.as_ref().map(read_keywords).transpose()? };
    let outcome = ingest_files(&a.input, &header, &options)?;
    for w in &outcome.warnings {
        log::warn!("{w}");
    }
    outcome.dataset.save(&a.out_dir)?;
    println!(
        "{}: {} documents, {} sentences written to {}",
        outcome.dataset.id(),
        outcome.dataset.manifest.doc_count,
        outcome.dataset.manifest.sentence_count,
        a.out_dir.display()
    );
    println!("{}", serde_json::to_string(&outcome.skipped)?);
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let ds = MediaDietDataset::load(&a.datasets_dir, &a.dataset)?;
    let model = NGramModel::train(&ds, a.order, a.discount)?;
    create(&a.out)?;
    model.save(&a.out)?;
    if let Some(p) = &a.unigram_out {
        BackgroundUnigrams::from_dataset(&ds).write_tsv(create(p)?)?;
    }
    println!("trained order-{} model on {} ({} sentences)", a.order, ds.id(), ds.manifest.sentence_count);
    Ok(())
}

fn score(a: ScoreArgs) -> Result<()> {
    let mut prompts = load_prompts(&a.prompts)?;
    if let Some(s) = &a.synonyms {
        for w in SynonymLexicon::load(s)?.apply(&mut prompts) {
            log::warn!("{w}");
        }
    }
    let base = open(&a.base)?;
    let diets = a
        .diet
        .iter()
        .map(|d| {
            let (id, spec) = d.split_once('=').ok_or_else(|| anyhow!("diet {d:?} is not DIET_ID=BACKEND"))?;
            Ok((id.to_string(), open(spec)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let table = score_matrix(&diets, base.as_ref(), &prompts);
    let failed = table.rows.iter().filter(|r| !r.is_ok()).count();
    table.write_csv(create(&a.out)?)?;
    println!("{} rows ({failed} failed) written to {}", table.rows.len(), a.out.display());
    Ok(())
}

fn mt_transport(target: &str) -> Result<Arc<dyn Transport>> {
    if target.starts_with("http://") || target.starts_with("https://") {
        let o = GatewayOptions::default();
        Ok(Arc::new(HttpTransport::new(target, o.retry, o.max_inflight)?))
    } else {
        Ok(Arc::new(ReplayTransport::open(target)?))
    }
}

fn paraphrase(c: ParaphraseCommand) -> Result<()> {
    match c {
        ParaphraseCommand::Synsub { prompts, embeddings, max_subs, min_cos, out } => {
            let table = EmbeddingTable::load(&embeddings)?;
            let params = SynsubParams { max_subs, min_cos };
            let mut variants = Vec::new();
            for p in load_prompts(&prompts)? {
                variants.extend(synonym_substitute(&p, &table, params)?.variants);
            }
            save_prompts(&out, &variants)?;
            println!("{} variants written to {}", variants.len(), out.display());
        }
        ParaphraseCommand::Backtranslate { prompts, mt, samples, topk, pivot, out } => {
            let client = MtClient::new(mt_transport(&mt)?);
            let params = BacktranslateParams { n_samples: samples, topk, pivot, ..Default::default() };
            let mut variants = Vec::new();
            for p in load_prompts(&prompts)? {
                let (set, report) = backtranslate(&p, &client, &params)?;
                log::info!(
                    "{}: {} returned, {} lost the blank, {} duplicates",
                    p.prompt_id,
                    report.returned,
                    report.lost_placeholder,
                    report.duplicates
                );
                variants.extend(set.variants);
            }
            save_prompts(&out, &variants)?;
            println!("{} variants written to {}", variants.len(), out.display());
        }
    }
    Ok(())
}

fn parse_groups(list: &str) -> Result<Vec<GroupBy>> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            serde_json::from_value(serde_json::Value::String(s.to_string()))
                .map_err(|_| anyhow!("unknown grouping {s:?}"))
        })
        .collect()
}

fn analyze(a: AnalyzeArgs) -> Result<()> {
    let text = fs::read_to_string(&a.data).with_context(|| format!("reading {}", a.data.display()))?;
    let rows = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str::<AnalysisRow>)
        .collect::<Result<Vec<_>, _>>()
        .with_context(|| format!("parsing {}", a.data.display()))?;
    let data = AnalysisDataset { rows };
    let dir = &a.out_dir;
    let x: Vec<f64> = data.rows.iter().map(|r| r.score).collect();
    let y: Vec<f64> = data.rows.iter().map(|r| r.proportion).collect();
    let overall = GroupedCorrelation {
        group: "all".into(),
        n: x.len(),
        correlation: Some(pearson_bootstrap(&x, &y, a.bootstrap, a.seed)?),
        note: String::new(),
    };
    write_correlations_csv(create(&dir.join("correlation_overall.csv"))?, &[overall])?;
    for g in parse_groups(&a.group_by)? {
        let name = serde_json::to_value(g)?.as_str().unwrap_or("group").to_string();
        let rows = grouped_correlations(&data, g, a.bootstrap, a.seed);
        write_correlations_csv(create(&dir.join(format!("correlations_{name}.csv")))?, &rows)?;
    }
    let opts = OlsOptions { bootstrap: a.bootstrap, seed: a.seed };
    let mut fits = Vec::new();
    for model in [OlsModel::Model1, OlsModel::Model2] {
        match fit_ols(&data, model, opts) {
            Ok(fit) => {
                write_json(&dir.join(format!("fit_{}.json", model.name())), &fit)?;
                fits.push(fit);
            }
            Err(e) => log::warn!("{}: {e}", model.name()),
        }
    }
    write_table1(create(&dir.join("table1.csv"))?, &fits.iter().collect::<Vec<_>>())?;
    if !a.no_gam {
        match fit_gam(&data, GamOptions { bootstrap: a.bootstrap, seed: a.seed, ..Default::default() }) {
            Ok(g) => write_json(&dir.join("gam.json"), &g)?,
            Err(e) => log::warn!("gam: {e}"),
        }
    }
    if let (Some(vs), Some(os), Some(sv)) = (&a.variant_scores, &a.orig_scores, &a.survey) {
        let waves = load_survey_csv(sv, &SurveyColumns::default())?;
        let rows = robustness_eval(&ScoreTable::load(os)?, &ScoreTable::load(vs)?, &waves, a.bootstrap, a.seed)?;
        write_json(&dir.join("robustness.json"), &rows)?;
    }
    println!("analysis of {} rows written to {}", data.len(), dir.display());
    Ok(())
}

fn explain(a: ExplainArgs) -> Result<()> {
    let prompts = load_prompts(&a.prompts)?;
    let prompt = prompts
        .iter()
        .find(|p| p.prompt_id == a.prompt_id)
        .ok_or_else(|| anyhow!("prompt {} not found", a.prompt_id))?;
    let ds = MediaDietDataset::load(&a.datasets_dir, &a.dataset)?;
    let backend = open(&a.backend)?;
    let options = ExplainOptions { cache_dir: a.cache_dir, ..Default::default() };
    let result = nearest_training_sentences(&prompt.filled(&a.fill), &ds, backend.as_ref(), a.k, &options)?;
    result.write_csv(create(&a.out)?)?;
    println!("{} neighbors of {:?} written to {}", result.neighbors.len(), result.query_text, a.out.display());
    Ok(())
}

fn synth(c: SynthCommand) -> Result<()> {
    match c {
        SynthCommand::Corpus { spec, out_dir } => {
            let spec: SynthSpec = serde_json::from_str(&fs::read_to_string(&spec)?)?;
            let corpus = gen_corpus(&spec)?;
            corpus.dataset.save(&out_dir)?;
            write_json(&out_dir.join(format!("{}.counts.json", spec.dataset_id)), &corpus.counts)?;
            println!("{} written to {}", spec.dataset_id, out_dir.display());
        }
        SynthCommand::Survey { scores, params, out } => {
            let params: SurveyGenParams = serde_json::from_str(&fs::read_to_string(&params)?)?;
            let survey = gen_survey(&ScoreTable::load(&scores)?, &params);
            for w in &survey.waves {
                w.validate()?;
            }
            write_survey_csv(create(&out)?, &survey.waves)?;
            println!("{} waves written to {}", survey.waves.len(), out.display());
        }
        SynthCommand::Drift { out_dir, weeks, seed } => {
            let spec = DriftSpec { weeks, seed, ..Default::default() };
            let corpora = drifting_corpora(&spec);
            for (_, ds) in &corpora {
                ds.save(&out_dir)?;
            }
            let windows: Vec<_> = corpora.iter().map(|(w, _)| w).collect();
            write_json(&out_dir.join("windows.json"), &windows)?;
            save_prompts(out_dir.join("drift_prompts.json"), &drift_prompts())?;
            println!("{} weekly datasets written to {}", corpora.len(), out_dir.display());
        }
        SynthCommand::EmbedReplay { dataset, datasets_dir, query, batch_size, out } => {
            let ds = MediaDietDataset::load(&datasets_dir, &dataset)?;
            create(&out)?;
            let n = record_hash_embed_replay(&ds, &query, batch_size, &out)?;
            println!("{n} replay entries written to {}", out.display());
        }
    }
    Ok(())
}

fn run(a: RunArgs) -> Result<(), PipelineError> {
    let mut cfg = PipelineConfig::load(&a.config)?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = a.output_dir {
        cfg.output_dir = std::path::absolute(dir)
            .map_err(|e| PipelineError::Config { field: "output_dir".into(), message: e.to_string() })?;
    }
    let stages = parse_stages(&a.stages)?;
    let report = run_pipeline(&cfg, &stages)?;
    for s in &report.stages {
        println!("{}: {} artifact(s), {} warning(s)", s.stage, s.artifacts.len(), s.warnings.len());
    }
    println!("config_sha256 {}", report.config_sha256);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match cli.command {
        Command::Run(a) => run(a).map_err(|e| (e.exit_code(), anyhow::Error::new(e))),
        Command::Rolling(a) => {
            run(RunArgs { config: a.config, stages: Stage::Rolling.as_str().into(), seed: None, output_dir: None })
                .map_err(|e| (e.exit_code(), anyhow::Error::new(e)))
        }
        Command::Ingest(a) => ingest(a).map_err(|e| (3, e)),
        Command::TrainNgram(a) => train(a).map_err(|e| (3, e)),
        Command::Score(a) => score(a).map_err(|e| (3, e)),
        Command::Paraphrase(c) => paraphrase(c).map_err(|e| (3, e)),
        Command::Analyze(a) => analyze(a).map_err(|e| (3, e)),
        Command::Explain(a) => explain(a).map_err(|e| (3, e)),
        Command::Synth(c) => synth(c).map_err(|e| (3, e)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(code as u8)
        }
    }
}
