//! The pipeline stages. Each reads and writes only declared files, so any
//! stage can be rerun on its own.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use normalign_core::corpus::{
    load_corpus, uncovered_categories, BinningError, Corpus, CorpusError, DemographicBinning, RoT,
    Source,
};
use normalign_core::extraction::{extract_answer_with, RefusalCues};
use normalign_core::metrics::{score_all, score_demographics, LmAnswers, MetricsError};
use normalign_core::prompting::{cache_key, render_prompt, CustomTemplate, PromptVariant, RenderedPrompt};
use normalign_core::records::{
    read_extractions, read_scores, write_extractions, write_scores, ExtractionRecord, RecordError,
    ScoreRecord,
};
use normalign_core::report::{self, emit, lm_matrix, OutputFormat, ReportError, ReportInputs, RunMetadata};
use normalign_core::scale::OrdinalScale;
use normalign_core::tsv::TsvError;
use normalign_gateway::{Gateway, Mode, RawResponse, ResponseCache, RetryPolicy};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::responses::{read_responses, write_responses};

fn corpus_error(e: CorpusError) -> CliError {
    match e {
        CorpusError::File {
            path,
            source: TsvError::Io(io),
        } => CliError::io_msg(format!("{path}: {io}")),
        CorpusError::Binning(BinningError::Io { path, source }) => CliError::io_msg(format!("{path}: {source}")),
        other => CliError::validation(other.to_string()),
    }
}

fn record_error(e: RecordError) -> CliError {
    match e {
        RecordError::File {
            path,
            source: TsvError::Io(io),
        } => CliError::io_msg(format!("{path}: {io}")),
        other => CliError::validation(other.to_string()),
    }
}

fn report_error(e: ReportError) -> CliError {
    match e {
        ReportError::Io { .. } => CliError::io_msg(e.to_string()),
        other => CliError::validation(other.to_string()),
    }
}

fn metrics_error(e: MetricsError) -> CliError {
    CliError::validation(e.to_string())
}

/// Loads the corpus and applies the configured binning.
pub fn load(cfg: &RunConfig) -> Result<Corpus, CliError> {
    let c = &cfg.corpus;
    let corpus = load_corpus(&c.rots, &c.annotations, c.profiles.as_deref()).map_err(corpus_error)?;
    let binning = match &c.binning {
        Some(path) => DemographicBinning::from_path(path).map_err(|e| corpus_error(e.into()))?,
        None => DemographicBinning::standard(),
    };
    corpus.rebin(binning, c.strict_binning).map_err(corpus_error)
}

fn open_cache(cfg: &RunConfig) -> Option<ResponseCache> {
    cfg.inference.cache_dir.as_ref().map(ResponseCache::open)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub failures: Vec<String>,
    pub warnings: Vec<String>,
    pub notes: Vec<String>,
}

impl ValidationReport {
    pub fn ok(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Requests each model would need to send under the configured mode.
fn pending_requests(cfg: &RunConfig, corpus: &Corpus) -> Result<BTreeMap<String, usize>, CliError> {
    let cache = open_cache(cfg);
    let mut out = BTreeMap::new();
    for model in &cfg.models {
        let params = cfg.params_for(model);
        let mut n = 0;
        for &variant in &cfg.variants {
            for rot in corpus.rots() {
                let prompt = render_prompt(rot, variant).map_err(|e| CliError::validation(e.to_string()))?;
                let hit = match (&cache, cfg.inference.mode) {
                    (_, Mode::Live) | (None, _) => false,
                    (Some(c), _) => c.contains(&cache_key(&prompt, &model.id, &params)),
                };
                n += usize::from(!hit);
            }
        }
        out.insert(model.id.clone(), n);
    }
    Ok(out)
}

fn check_corpus(cfg: &RunConfig, corpus: &Corpus, report: &mut ValidationReport) {
    let expected = cfg.corpus.expected_annotations_per_rot;
    if expected > 0 {
        let mismatches = corpus.count_mismatches(expected);
        if !mismatches.is_empty() {
            let shown: Vec<String> = mismatches
                .iter()
                .take(5)
                .map(|(id, n)| format!("{id} has {n}"))
                .collect();
            report.failures.push(format!(
                "{} of {} RoTs do not have {expected} annotations ({}{})",
                mismatches.len(),
                corpus.rots().len(),
                shown.join(", "),
                if mismatches.len() > shown.len() { ", ..." } else { "" }
            ));
        }
    }
    for (attribute, raw) in uncovered_categories(corpus.profiles(), corpus.binning()) {
        report.warnings.push(format!(
            "attribute {attribute}: categories {raw:?} are not covered by any bin and count as unknown"
        ));
    }
    if cfg.models.is_empty() {
        report.failures.push("no models configured".into());
    }
}

fn check_requests(cfg: &RunConfig, corpus: &Corpus, report: &mut ValidationReport) -> Result<(), CliError> {
    let pending = pending_requests(cfg, corpus)?;
    let total = corpus.rots().len() * cfg.variants.len();
    for model in &cfg.models {
        let n = pending[&model.id];
        match cfg.inference.mode {
            Mode::Replay if n > 0 => report.failures.push(format!(
                "replay cache {} is missing {n} of {total} responses for model {}",
                cfg.inference.cache_dir.as_ref().expect("replay has a cache").display(),
                model.id
            )),
            Mode::Replay => {}
            Mode::Record | Mode::Live => {
                if n > 0 {
                    report.notes.push(format!("model {}: {n} of {total} responses need a request", model.id));
                    if let Err(e) = Gateway::api_key(&cfg.params_for(model)) {
                        report.failures.push(e.to_string());
                    }
                }
            }
        }
    }
    Ok(())
}

/// Every check that can be made without sending a request. Failures that
/// stop the corpus from loading at all are returned as the only failure.
pub fn validate(cfg: &RunConfig) -> Result<ValidationReport, CliError> {
    let mut report = ValidationReport::default();
    let mut paths: Vec<(&str, &Path)> = vec![
        ("corpus.rots", &cfg.corpus.rots),
        ("corpus.annotations", &cfg.corpus.annotations),
    ];
    if let Some(p) = &cfg.corpus.profiles {
        paths.push(("corpus.profiles", p));
    }
    if let Some(p) = &cfg.corpus.binning {
        paths.push(("corpus.binning", p));
    }
    for (key, path) in paths {
        if !path.is_file() {
            report.failures.push(format!("{key}: {} does not exist", path.display()));
        }
    }
    if cfg.inference.mode == Mode::Replay {
        if let Some(dir) = &cfg.inference.cache_dir {
            if !dir.is_dir() {
                report.failures.push(format!("inference.cache_dir: {} does not exist", dir.display()));
            }
        }
    }
    if !report.ok() {
        return Ok(report);
    }
    let corpus = match load(cfg) {
        Ok(c) => c,
        Err(e) => {
            report.failures.push(e.message);
            return Ok(report);
        }
    };
    check_corpus(cfg, &corpus, &mut report);
    check_requests(cfg, &corpus, &mut report)?;
    Ok(report)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOverrides {
    pub mode: Option<Mode>,
    pub parallelism: Option<usize>,
    pub fail_fast: bool,
}

impl RunOverrides {
    pub fn apply(&self, cfg: &mut RunConfig) -> Result<(), CliError> {
        if let Some(m) = self.mode {
            cfg.inference.mode = m;
        }
        if let Some(p) = self.parallelism {
            cfg.inference.parallelism = p;
        }
        cfg.inference.fail_fast |= self.fail_fast;
        if cfg.inference.parallelism == 0 {
            return Err(CliError::validation("parallelism must be at least 1"));
        }
        if cfg.inference.mode != Mode::Live && cfg.inference.cache_dir.is_none() {
            return Err(CliError::validation(format!(
                "{} mode needs inference.cache_dir",
                cfg.inference.mode
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FailedItem {
    pub model_id: String,
    pub variant: PromptVariant,
    pub rot_id: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunSummary {
    pub responses: usize,
    pub from_cache: usize,
    pub network_calls: u64,
    pub failures: Vec<FailedItem>,
    pub skipped: usize,
    pub extractions: usize,
    pub scores: usize,
}

impl RunSummary {
    pub fn is_complete(&self) -> bool {
        self.failures.is_empty() && self.skipped == 0
    }
}

/// render → complete → extract → score for every (model, variant, RoT).
/// Successful items are written even when others fail.
pub async fn run(cfg: &RunConfig) -> Result<RunSummary, CliError> {
    let corpus = load(cfg)?;
    let mut checks = ValidationReport::default();
    check_corpus(cfg, &corpus, &mut checks);
    if cfg.inference.mode != Mode::Replay {
        // Credentials are checked for every model before the first request.
        check_requests(cfg, &corpus, &mut checks)?;
    }
    if !checks.ok() {
        return Err(CliError::validation(checks.failures.join("\n")));
    }

    let gateway = Gateway::new(cfg.inference.mode, open_cache(cfg), RetryPolicy::default())
        .map_err(|e| CliError::validation(e.to_string()))?;
    let mut summary = RunSummary::default();
    let mut responses: Vec<RawResponse> = Vec::new();
    let total = cfg.models.len() * cfg.variants.len();
    let mut stopped = false;
    for (i, model) in cfg.models.iter().enumerate() {
        let params = cfg.params_for(model);
        for (j, &variant) in cfg.variants.iter().enumerate() {
            if stopped {
                summary.skipped += corpus.rots().len();
                continue;
            }
            tracing::info!(model = %model.id, %variant, batch = i * cfg.variants.len() + j + 1, total, "running batch");
            let outcome = gateway
                .run_batch(
                    corpus.rots(),
                    variant,
                    &params,
                    cfg.inference.parallelism,
                    cfg.inference.fail_fast,
                )
                .await
                .map_err(|e| CliError::validation(e.to_string()))?;
            summary.skipped += outcome.skipped.len();
            for f in outcome.failures {
                summary.failures.push(FailedItem {
                    model_id: model.id.clone(),
                    variant,
                    rot_id: f.rot_id,
                    message: f.error.to_string(),
                });
            }
            responses.extend(outcome.responses);
            if cfg.inference.fail_fast && !summary.failures.is_empty() {
                stopped = true;
            }
        }
    }
    summary.network_calls = gateway.network_calls();
    summary.responses = responses.len();
    summary.from_cache = responses.iter().filter(|r| r.from_cache).count();

    write_responses(&cfg.responses_path(), &responses)?;
    let extractions = extract_all(&responses, &cfg.refusal_cues);
    write_extractions(&cfg.extractions_path(), &extractions).map_err(record_error)?;
    let scores = score_extractions(&corpus, &extractions)?;
    write_scores(&cfg.scores_path(), &scores).map_err(record_error)?;
    summary.extractions = extractions.len();
    summary.scores = scores.len();
    Ok(summary)
}

pub fn extract_all(responses: &[RawResponse], extra_cues: &[String]) -> Vec<ExtractionRecord> {
    let scale = OrdinalScale::standard();
    let cues = RefusalCues::with_extra(extra_cues);
    responses
        .iter()
        .map(|r| ExtractionRecord {
            rot_id: r.rot_id.clone(),
            model_id: r.model_id.clone(),
            variant: r.variant,
            cache_key: r.cache_key.clone(),
            answer: extract_answer_with(&r.text, &scale, &cues),
        })
        .collect()
}

/// All-annotator scores followed by every demographic bin, per (model,
/// variant) in order of first appearance.
pub fn score_extractions(corpus: &Corpus, extractions: &[ExtractionRecord]) -> Result<Vec<ScoreRecord>, CliError> {
    let mut order: Vec<(String, PromptVariant)> = Vec::new();
    let mut runs: BTreeMap<(String, PromptVariant), LmAnswers> = BTreeMap::new();
    for e in extractions {
        if corpus.rot(&e.rot_id).is_none() {
            return Err(CliError::validation(format!(
                "extraction for RoT {:?}, which is not in the corpus",
                e.rot_id
            )));
        }
        let key = (e.model_id.clone(), e.variant);
        let answers = runs.entry(key.clone()).or_insert_with(|| {
            order.push(key);
            LmAnswers::new()
        });
        if answers.insert(e.rot_id.clone(), e.answer.clone()).is_some() {
            return Err(CliError::validation(format!(
                "duplicate extraction for ({}, {}, {})",
                e.rot_id, e.model_id, e.variant
            )));
        }
    }
    let mut out = Vec::new();
    for key in &order {
        let lm = &runs[key];
        let (model, variant) = (key.0.as_str(), key.1);
        for s in score_all(corpus, model, variant, lm).map_err(metrics_error)? {
            out.push(ScoreRecord::from(&s));
        }
        for s in score_demographics(corpus, model, variant, lm).map_err(metrics_error)? {
            out.push(ScoreRecord::from(&s));
        }
    }
    Ok(out)
}

/// Recomputes scores from stored extractions, or re-extracts from the
/// stored raw responses first.
pub fn score(cfg: &RunConfig, re_extract: bool) -> Result<(usize, usize), CliError> {
    let corpus = load(cfg)?;
    let extractions = if re_extract {
        let responses = read_responses(&cfg.responses_path())?;
        let e = extract_all(&responses, &cfg.refusal_cues);
        write_extractions(&cfg.extractions_path(), &e).map_err(record_error)?;
        e
    } else {
        read_extractions(&cfg.extractions_path()).map_err(record_error)?
    };
    let scores = score_extractions(&corpus, &extractions)?;
    write_scores(&cfg.scores_path(), &scores).map_err(record_error)?;
    Ok((extractions.len(), scores.len()))
}

fn latest_retrieval(cfg: &RunConfig) -> Result<String, CliError> {
    let path = cfg.responses_path();
    if !path.exists() {
        return Ok("unknown".to_owned());
    }
    Ok(read_responses(&path)?
        .into_iter()
        .map(|r| r.retrieved_at)
        .max()
        .unwrap_or_else(|| "unknown".to_owned()))
}

fn cache_digest(cfg: &RunConfig, extractions: &[ExtractionRecord]) -> Result<String, CliError> {
    let keys = extractions.iter().map(|e| e.cache_key.as_str());
    match open_cache(cfg) {
        Some(cache) => cache.digest_of(keys).map_err(|e| CliError::io_msg(e.to_string())),
        None => Ok("none".to_owned()),
    }
}

/// Builds the report bundle from the stored scores and writes the
/// requested formats under `out` (default `<output_dir>/report`).
pub fn report(cfg: &RunConfig, formats: &[OutputFormat], out: Option<&Path>) -> Result<Vec<PathBuf>, CliError> {
    let scores_path = cfg.scores_path();
    if !scores_path.is_file() {
        return Err(CliError::io_msg(format!(
            "{}: no score file; run `normalign run` or `normalign score` first",
            scores_path.display()
        )));
    }
    let corpus = load(cfg)?;
    let scores = read_scores(&scores_path).map_err(record_error)?;
    if scores.is_empty() {
        return Err(CliError::validation(format!("{}: no scores to report", scores_path.display())));
    }
    let extractions = read_extractions(&cfg.extractions_path()).map_err(record_error)?;
    let models = cfg.model_ids();
    let groups = cfg.groups();
    let metadata = RunMetadata {
        corpus_digest: corpus.digest(),
        cache_digest: cache_digest(cfg, &extractions)?,
        config_digest: cfg.digest.clone(),
        timestamp: latest_retrieval(cfg)?,
        tool_version: env!("CARGO_PKG_VERSION").to_owned(),
    };
    let bundle = report::build_bundle(ReportInputs {
        corpus: &corpus,
        scores: &scores,
        extractions: &extractions,
        variants: &cfg.variants,
        models: &models,
        agreement_groups: &groups,
        metadata,
    })
    .map_err(report_error)?;
    let dir = out.map_or_else(|| cfg.output_dir.join("report"), Path::to_path_buf);
    let mut written = emit(&bundle, &dir, formats).map_err(report_error)?;

    if formats.contains(&OutputFormat::Csv) && models.len() >= 2 {
        let variants: BTreeSet<PromptVariant> = extractions.iter().map(|e| e.variant).collect();
        for v in variants {
            let m = lm_matrix(&corpus, &extractions, v, &models).map_err(metrics_error)?;
            let path = dir.join("tables").join(format!("lm_ratings_{}.csv", v.name()));
            std::fs::write(&path, m.to_csv()).map_err(|e| CliError::io(&path, e))?;
            written.push(path);
        }
    }
    Ok(written)
}

pub enum PromptSource<'a> {
    Text(&'a str),
    Rot { cfg: &'a RunConfig, rot_id: &'a str },
}

/// Renders one prompt. A custom template stands in for `variant` but is
/// not one of the built-in formats.
pub fn prompt(source: PromptSource<'_>, variant: PromptVariant, template: Option<&str>) -> Result<RenderedPrompt, CliError> {
    let rot = match source {
        PromptSource::Text(text) => RoT {
            id: "cli".to_owned(),
            source: Source::Conf,
            text: text.to_owned(),
        },
        PromptSource::Rot { cfg, rot_id } => {
            let corpus = load(cfg)?;
            corpus
                .rot(rot_id)
                .cloned()
                .ok_or_else(|| CliError::validation(format!("no RoT with id {rot_id:?}")))?
        }
    };
    let rendered = match template {
        Some(t) => CustomTemplate::new(t).and_then(|c| c.render(&rot, variant)),
        None => render_prompt(&rot, variant),
    };
    rendered.map_err(|e| CliError::validation(e.to_string()))
}
