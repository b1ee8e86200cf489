//! Report tables built from score and extraction records.

mod emit;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, Source};
use crate::metrics::{
    self, krippendorff_alpha, mean, AgreementMatrix, GroupRef, MetricsError, RefusalCell,
    VerdictRecord, Weighting,
};
use crate::prompting::PromptVariant;
use crate::records::{ExtractionRecord, ScoreRecord};

pub use emit::{emit, read_source_table_csv, OutputFormat};

/// Means closer than this are treated as equal when picking minima.
pub const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("score for unknown RoT {0:?}")]
    UnknownRot(String),
    #[error("no scores to report")]
    NoScores,
    #[error("attribute {0:?} has no populated bins")]
    EmptyAttribute(String),
    #[error("agreement group {group:?} needs at least 2 raters, has {raters}")]
    GroupTooSmall { group: String, raters: usize },
    #[error("agreement group {group:?} names unknown model {model:?}")]
    UnknownRater { group: String, model: String },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid table file {path}: {message}")]
    Parse { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceCell {
    pub model_id: String,
    pub variant: PromptVariant,
    pub source: Source,
    pub mean_ada_met: f64,
    pub n_rots: usize,
    /// Lowest mean among models in this (variant, source) column.
    pub column_min: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceTable {
    pub cells: Vec<SourceCell>,
    pub omitted_variants: Vec<PromptVariant>,
}

/// Per-source mean ADA-Met for every (model, variant) scored against all
/// annotators. Variants in `expected_variants` without a single score are
/// omitted and listed, never rendered as zero.
pub fn build_source_table(
    corpus: &Corpus,
    scores: &[ScoreRecord],
    expected_variants: &[PromptVariant],
) -> Result<SourceTable, ReportError> {
    let mut buckets: BTreeMap<(String, PromptVariant, Source), Vec<f64>> = BTreeMap::new();
    for s in scores.iter().filter(|s| s.group == GroupRef::All) {
        let rot = corpus
            .rot(&s.rot_id)
            .ok_or_else(|| ReportError::UnknownRot(s.rot_id.clone()))?;
        buckets
            .entry((s.model_id.clone(), s.variant, rot.source))
            .or_default()
            .push(s.ada_met);
    }
    let mut cells: Vec<SourceCell> = buckets
        .into_iter()
        .map(|((model_id, variant, source), values)| SourceCell {
            model_id,
            variant,
            source,
            mean_ada_met: mean(values.iter().copied()).expect("non-empty bucket"),
            n_rots: values.len(),
            column_min: false,
        })
        .collect();

    let mut minima: BTreeMap<(PromptVariant, Source), f64> = BTreeMap::new();
    for c in &cells {
        let m = minima.entry((c.variant, c.source)).or_insert(f64::INFINITY);
        *m = m.min(c.mean_ada_met);
    }
    for c in &mut cells {
        c.column_min = c.mean_ada_met - minima[&(c.variant, c.source)] <= TIE_TOLERANCE;
    }

    let present: BTreeSet<PromptVariant> = cells.iter().map(|c| c.variant).collect();
    let omitted_variants = expected_variants
        .iter()
        .copied()
        .filter(|v| !present.contains(v))
        .collect();
    Ok(SourceTable {
        cells,
        omitted_variants,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinMean {
    pub model_id: String,
    pub variant: PromptVariant,
    pub attribute: String,
    pub bin: String,
    pub mean_ada_met: f64,
    pub n_rots: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemographicWinner {
    pub model_id: String,
    pub variant: PromptVariant,
    pub attribute: String,
    /// Every bin within the tie tolerance of the minimum, in bin order.
    pub bins: Vec<String>,
    pub mean_ada_met: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemographicTable {
    pub winners: Vec<DemographicWinner>,
    pub bin_means: Vec<BinMean>,
}

/// Attributes with at least one populated bin, and those without.
pub fn populated_attributes(corpus: &Corpus) -> (Vec<String>, Vec<String>) {
    let binning = corpus.binning();
    binning
        .attributes()
        .map(str::to_owned)
        .partition(|attribute| {
            binning.bins(attribute).expect("listed").any(|bin| {
                corpus
                    .group_members(attribute, bin)
                    .is_ok_and(|m| !m.is_empty())
            })
        })
}

/// For each (model, variant) and attribute, the bin(s) with the lowest
/// group-restricted mean ADA-Met.
pub fn build_demographic_table(
    corpus: &Corpus,
    scores: &[ScoreRecord],
    attributes: &[String],
) -> Result<DemographicTable, ReportError> {
    let mut buckets: BTreeMap<(String, PromptVariant, String, String), Vec<f64>> = BTreeMap::new();
    for s in scores {
        if let GroupRef::Bin { attribute, bin } = &s.group {
            buckets
                .entry((s.model_id.clone(), s.variant, attribute.clone(), bin.clone()))
                .or_default()
                .push(s.ada_met);
        }
    }
    let runs: BTreeSet<(String, PromptVariant)> = buckets
        .keys()
        .map(|(m, v, _, _)| (m.clone(), *v))
        .collect();

    let binning = corpus.binning();
    let mut winners = Vec::new();
    let mut bin_means = Vec::new();
    for (model_id, variant) in &runs {
        for attribute in attributes {
            let bins = binning
                .bins(attribute)
                .ok_or_else(|| ReportError::EmptyAttribute(attribute.clone()))?;
            let mut means: Vec<(String, f64)> = Vec::new();
            for bin in bins {
                let key = (model_id.clone(), *variant, attribute.clone(), bin.to_owned());
                let Some(values) = buckets.get(&key) else {
                    continue;
                };
                let m = mean(values.iter().copied()).expect("non-empty bucket");
                bin_means.push(BinMean {
                    model_id: model_id.clone(),
                    variant: *variant,
                    attribute: attribute.clone(),
                    bin: bin.to_owned(),
                    mean_ada_met: m,
                    n_rots: values.len(),
                });
                means.push((bin.to_owned(), m));
            }
            let best = means
                .iter()
                .map(|(_, m)| *m)
                .fold(f64::INFINITY, f64::min);
            if means.is_empty() {
                return Err(ReportError::EmptyAttribute(attribute.clone()));
            }
            winners.push(DemographicWinner {
                model_id: model_id.clone(),
                variant: *variant,
                attribute: attribute.clone(),
                bins: means
                    .into_iter()
                    .filter(|(_, m)| m - best <= TIE_TOLERANCE)
                    .map(|(b, _)| b)
                    .collect(),
                mean_ada_met: best,
            });
        }
    }
    Ok(DemographicTable {
        winners,
        bin_means,
    })
}

/// Attainable ADA-Met values that always get a histogram class.
pub const STANDARD_CLASSES: [f64; 9] = [0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0];

const CLASS_SCALE: f64 = 1e9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramClass {
    pub value: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub model_id: String,
    pub variant: PromptVariant,
    pub classes: Vec<HistogramClass>,
}

impl Histogram {
    pub fn total(&self) -> usize {
        self.classes.iter().map(|c| c.count).sum()
    }
}

/// Exact-value histogram of all-annotator ADA-Met for one (model, variant).
/// Values off the half-integer grid (three-way ties give thirds) get their
/// own class.
pub fn build_histogram(scores: &[ScoreRecord], model_id: &str, variant: PromptVariant) -> Histogram {
    let key = |v: f64| (v * CLASS_SCALE).round() as i64;
    let mut counts: BTreeMap<i64, usize> = STANDARD_CLASSES.iter().map(|&v| (key(v), 0)).collect();
    for s in scores
        .iter()
        .filter(|s| s.group == GroupRef::All && s.model_id == model_id && s.variant == variant)
    {
        *counts.entry(key(s.ada_met)).or_default() += 1;
    }
    Histogram {
        model_id: model_id.to_owned(),
        variant,
        classes: counts
            .into_iter()
            .map(|(k, count)| HistogramClass {
                value: k as f64 / CLASS_SCALE,
                count,
            })
            .collect(),
    }
}

/// Raters are all annotators, items are RoTs; unannotated cells are missing.
pub fn human_matrix(corpus: &Corpus) -> Result<AgreementMatrix, MetricsError> {
    let rows = corpus.profiles().iter().map(|p| p.annotator_id.clone()).collect();
    let columns = corpus.rots().iter().map(|r| r.id.clone()).collect();
    let mut m = AgreementMatrix::new(rows, columns)?;
    for a in corpus.annotations() {
        m.set(a.annotator, a.rot, Some(a.answer.value()))?;
    }
    Ok(m)
}

/// Raters are models, items are RoTs. Refusals and irrelevant responses
/// carry no option and are left missing.
pub fn lm_matrix(
    corpus: &Corpus,
    extractions: &[ExtractionRecord],
    variant: PromptVariant,
    models: &[String],
) -> Result<AgreementMatrix, MetricsError> {
    let columns: Vec<String> = corpus.rots().iter().map(|r| r.id.clone()).collect();
    let col_index: BTreeMap<&str, usize> =
        columns.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let row_index: BTreeMap<&str, usize> =
        models.iter().enumerate().map(|(i, m)| (m.as_str(), i)).collect();
    let mut m = AgreementMatrix::new(models.to_vec(), columns.clone())?;
    for e in extractions.iter().filter(|e| e.variant == variant) {
        let (Some(&r), Some(&c)) = (row_index.get(e.model_id.as_str()), col_index.get(e.rot_id.as_str()))
        else {
            continue;
        };
        m.set(r, c, e.answer.verdict.choice().map(|ch| ch.value()))?;
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementRow {
    pub group: String,
    /// `None` for the human group, which does not depend on the prompt.
    pub variant: Option<PromptVariant>,
    pub raters: usize,
    pub nominal: f64,
    pub ordinal: f64,
}

/// Named groups of model ids to report agreement for.
pub type AgreementGroups = Vec<(String, Vec<String>)>;

fn row_subset(matrix: &AgreementMatrix, group: &str, members: &[String]) -> Result<AgreementMatrix, ReportError> {
    if members.len() < 2 {
        return Err(ReportError::GroupTooSmall {
            group: group.to_owned(),
            raters: members.len(),
        });
    }
    let mut idx = Vec::with_capacity(members.len());
    for model in members {
        let i = matrix
            .rows()
            .iter()
            .position(|r| r == model)
            .ok_or_else(|| ReportError::UnknownRater {
                group: group.to_owned(),
                model: model.clone(),
            })?;
        idx.push(i);
    }
    let values: Vec<Vec<Option<u8>>> = idx
        .iter()
        .map(|&r| (0..matrix.columns().len()).map(|c| matrix.get(r, c)).collect())
        .collect();
    Ok(AgreementMatrix::from_rows(
        members.to_vec(),
        matrix.columns().to_vec(),
        &values,
    )?)
}

/// Alpha, nominal and ordinal side by side, for the human population and
/// for every model group under every variant.
pub fn build_agreement_table(
    human: Option<&AgreementMatrix>,
    lm: &BTreeMap<PromptVariant, AgreementMatrix>,
    groups: &AgreementGroups,
) -> Result<Vec<AgreementRow>, ReportError> {
    let mut rows = Vec::new();
    if let Some(h) = human {
        rows.push(AgreementRow {
            group: "Humans(all)".to_owned(),
            variant: None,
            raters: h.rows().len(),
            nominal: krippendorff_alpha(h, Weighting::Nominal)?,
            ordinal: krippendorff_alpha(h, Weighting::Ordinal)?,
        });
    }
    for (name, members) in groups {
        for (variant, matrix) in lm {
            let sub = row_subset(matrix, name, members)?;
            rows.push(AgreementRow {
                group: name.clone(),
                variant: Some(*variant),
                raters: members.len(),
                nominal: krippendorff_alpha(&sub, Weighting::Nominal)?,
                ordinal: krippendorff_alpha(&sub, Weighting::Ordinal)?,
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefusalRow {
    pub model_id: String,
    pub variant: PromptVariant,
    pub source: Source,
    pub refusals: usize,
    pub irrelevant: usize,
}

pub fn build_refusal_table(
    corpus: &Corpus,
    extractions: &[ExtractionRecord],
) -> Result<Vec<RefusalRow>, ReportError> {
    let verdicts = extractions
        .iter()
        .map(|e| {
            let rot = corpus
                .rot(&e.rot_id)
                .ok_or_else(|| ReportError::UnknownRot(e.rot_id.clone()))?;
            Ok(VerdictRecord {
                model_id: e.model_id.clone(),
                variant: e.variant,
                source: rot.source,
                verdict: e.answer.verdict,
            })
        })
        .collect::<Result<Vec<_>, ReportError>>()?;
    Ok(metrics::refusal_counts(&verdicts)
        .into_iter()
        .map(|((model_id, variant, source), RefusalCell { refusals, irrelevant })| RefusalRow {
            model_id,
            variant,
            source,
            refusals,
            irrelevant,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub corpus_digest: String,
    pub cache_digest: String,
    pub config_digest: String,
    /// Latest retrieval time among the responses scored (not wall-clock
    /// time of the report run, so reports are reproducible).
    pub timestamp: String,
    pub tool_version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub run_metadata: RunMetadata,
    pub source_table: SourceTable,
    pub demographic_table: DemographicTable,
    pub histograms: Vec<Histogram>,
    pub agreement_table: Vec<AgreementRow>,
    pub refusal_table: Vec<RefusalRow>,
    pub warnings: Vec<String>,
}

pub struct ReportInputs<'a> {
    pub corpus: &'a Corpus,
    pub scores: &'a [ScoreRecord],
    pub extractions: &'a [ExtractionRecord],
    pub variants: &'a [PromptVariant],
    pub models: &'a [String],
    pub agreement_groups: &'a AgreementGroups,
    pub metadata: RunMetadata,
}

pub fn build_bundle(inputs: ReportInputs<'_>) -> Result<ReportBundle, ReportError> {
    let ReportInputs {
        corpus,
        scores,
        extractions,
        variants,
        models,
        agreement_groups,
        metadata,
    } = inputs;
    if scores.is_empty() {
        return Err(ReportError::NoScores);
    }
    let mut warnings = Vec::new();

    let source_table = build_source_table(corpus, scores, variants)?;
    for v in &source_table.omitted_variants {
        warnings.push(format!("variant {v} has no scores and was omitted"));
    }

    let (attributes, empty) = populated_attributes(corpus);
    for a in empty {
        warnings.push(format!("attribute {a} has no annotators in any bin and was skipped"));
    }
    let demographic_table = build_demographic_table(corpus, scores, &attributes)?;

    let runs: BTreeSet<(&str, PromptVariant)> = scores
        .iter()
        .filter(|s| s.group == GroupRef::All)
        .map(|s| (s.model_id.as_str(), s.variant))
        .collect();
    let histograms = runs
        .into_iter()
        .map(|(m, v)| build_histogram(scores, m, v))
        .collect();

    let human = match human_matrix(corpus)
        .and_then(|m| krippendorff_alpha(&m, Weighting::Nominal).map(|_| m))
    {
        Ok(m) => Some(m),
        Err(e) => {
            warnings.push(format!("human agreement skipped: {e}"));
            None
        }
    };
    let mut lm = BTreeMap::new();
    let scored_variants: BTreeSet<PromptVariant> = extractions.iter().map(|e| e.variant).collect();
    if models.len() >= 2 {
        for v in scored_variants {
            lm.insert(v, lm_matrix(corpus, extractions, v, models)?);
        }
    }
    let groups: AgreementGroups = if lm.is_empty() {
        Vec::new()
    } else {
        agreement_groups.clone()
    };
    let agreement_table = build_agreement_table(human.as_ref(), &lm, &groups)?;

    let refusal_table = build_refusal_table(corpus, extractions)?;

    Ok(ReportBundle {
        run_metadata: metadata,
        source_table,
        demographic_table,
        histograms,
        agreement_table,
        refusal_table,
        warnings,
    })
}
