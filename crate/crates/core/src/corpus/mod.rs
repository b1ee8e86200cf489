//! Rules-of-thumb corpus, human annotations and annotator demographics.

pub mod binning;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::BufReader;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::scale::Choice;
use crate::tsv::{self, Record, TsvError};

pub use binning::{
    apply_binning, uncovered_categories, BinAssignments, BinningError, DemographicBinning,
    UNKNOWN_BIN,
};

/// Where a rule of thumb was mined from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Source {
    Conf,
    Aita,
    Roc,
    Dear,
}

impl Source {
    pub const ALL: [Source; 4] = [Source::Conf, Source::Aita, Source::Roc, Source::Dear];

    pub fn as_str(self) -> &'static str {
        match self {
            Source::Conf => "CONF",
            Source::Aita => "AITA",
            Source::Roc => "ROC",
            Source::Dear => "DEAR",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Source {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Source::ALL
            .into_iter()
            .find(|src| src.as_str() == s)
            .ok_or_else(|| format!("unknown source {s:?} (expected CONF, AITA, ROC or DEAR)"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoT {
    pub id: String,
    pub source: Source,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatorProfile {
    pub annotator_id: String,
    /// Raw category per attribute; missing cells are stored as `unknown`.
    pub attributes: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub rot: usize,
    pub annotator: usize,
    pub answer: Choice,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: TsvError,
    },
    #[error("{path}: no annotations")]
    NoAnnotations { path: String },
    #[error("{path}: no rules of thumb")]
    NoRots { path: String },
    #[error("{path}: missing header row (first column must be annotator_id)")]
    MissingProfileHeader { path: String },
    #[error("{path}: line {line}: {message}")]
    Invalid {
        path: String,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Binning(#[from] BinningError),
    #[error("unknown demographic attribute {0:?}")]
    UnknownAttribute(String),
    #[error("attribute {attribute:?} has no bin {bin:?}")]
    UnknownBin { attribute: String, bin: String },
}

const ROT_HEADER: [&str; 3] = ["id", "source", "text"];
const ANNOTATION_HEADER: [&str; 3] = ["rot_id", "annotator_id", "answer"];

/// Indexed, immutable corpus. Serializes deterministically.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Corpus {
    rots: Vec<RoT>,
    profiles: Vec<AnnotatorProfile>,
    annotations: Vec<Annotation>,
    binning: DemographicBinning,
    assignments: BinAssignments,
    #[serde(skip)]
    rot_index: HashMap<String, usize>,
    #[serde(skip)]
    annotator_index: HashMap<String, usize>,
    #[serde(skip)]
    per_rot: Vec<Vec<(usize, Choice)>>,
}

fn read_file(path: &Path) -> Result<Vec<Record>, CorpusError> {
    let file = File::open(path).map_err(|e| CorpusError::File {
        path: path.display().to_string(),
        source: TsvError::Io(e),
    })?;
    tsv::read_records(BufReader::new(file)).map_err(|source| CorpusError::File {
        path: path.display().to_string(),
        source,
    })
}

fn invalid(path: &Path, line: usize, message: impl Into<String>) -> CorpusError {
    CorpusError::Invalid {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

fn field_count(path: &Path, record: &Record, n: usize) -> Result<(), CorpusError> {
    record
        .expect_fields(n)
        .map_err(|e| match e {
            TsvError::Malformed { line, message } => invalid(path, line, message),
            other => CorpusError::File {
                path: path.display().to_string(),
                source: other,
            },
        })
}

pub fn parse_rots(path: &Path, mut records: Vec<Record>) -> Result<Vec<RoT>, CorpusError> {
    tsv::strip_header(&mut records, &ROT_HEADER);
    if records.is_empty() {
        return Err(CorpusError::NoRots {
            path: path.display().to_string(),
        });
    }
    let mut seen = HashSet::new();
    let mut rots = Vec::with_capacity(records.len());
    for rec in records {
        field_count(path, &rec, 3)?;
        let [id, source, text]: [String; 3] = rec.fields.try_into().expect("checked");
        if id.is_empty() {
            return Err(invalid(path, rec.line, "empty RoT id"));
        }
        let source = source
            .parse::<Source>()
            .map_err(|m| invalid(path, rec.line, m))?;
        if text.is_empty() {
            return Err(invalid(path, rec.line, format!("RoT {id:?} has empty text")));
        }
        if !seen.insert(id.clone()) {
            return Err(invalid(path, rec.line, format!("duplicate RoT id {id:?}")));
        }
        rots.push(RoT { id, source, text });
    }
    Ok(rots)
}

pub fn parse_profiles(
    path: &Path,
    records: Vec<Record>,
) -> Result<Vec<AnnotatorProfile>, CorpusError> {
    let mut records = records.into_iter();
    let header = match records.next() {
        Some(h) if h.fields.first().map(String::as_str) == Some("annotator_id") => h,
        _ => {
            return Err(CorpusError::MissingProfileHeader {
                path: path.display().to_string(),
            })
        }
    };
    let names = &header.fields[1..];
    let mut seen = HashSet::new();
    let mut profiles = Vec::new();
    for rec in records {
        field_count(path, &rec, header.fields.len())?;
        let annotator_id = rec.fields[0].clone();
        if annotator_id.is_empty() {
            return Err(invalid(path, rec.line, "empty annotator id"));
        }
        if !seen.insert(annotator_id.clone()) {
            return Err(invalid(
                path,
                rec.line,
                format!("duplicate annotator id {annotator_id:?}"),
            ));
        }
        let attributes = names
            .iter()
            .zip(&rec.fields[1..])
            .map(|(name, raw)| {
                let value = if binning::is_missing(raw) {
                    UNKNOWN_BIN.to_owned()
                } else {
                    raw.clone()
                };
                (name.clone(), value)
            })
            .collect();
        profiles.push(AnnotatorProfile {
            annotator_id,
            attributes,
        });
    }
    Ok(profiles)
}

/// Reads the corpus files and resolves every cross-reference. The default
/// binning is applied in non-strict mode; see [`Corpus::rebin`].
///
/// Without a profile file, annotators are taken from the annotation file in
/// order of first appearance and have no demographics.
pub fn load_corpus(
    rot_path: &Path,
    annotation_path: &Path,
    profile_path: Option<&Path>,
) -> Result<Corpus, CorpusError> {
    let rots = parse_rots(rot_path, read_file(rot_path)?)?;

    let mut records = read_file(annotation_path)?;
    tsv::strip_header(&mut records, &ANNOTATION_HEADER);
    if records.is_empty() {
        return Err(CorpusError::NoAnnotations {
            path: annotation_path.display().to_string(),
        });
    }
    let profiles = match profile_path {
        Some(path) => parse_profiles(path, read_file(path)?)?,
        None => {
            let mut seen = HashSet::new();
            records
                .iter()
                .filter_map(|r| r.fields.get(1))
                .filter(|id| !id.is_empty() && seen.insert(id.as_str()))
                .map(|id| AnnotatorProfile {
                    annotator_id: id.clone(),
                    attributes: BTreeMap::new(),
                })
                .collect()
        }
    };
    let rot_index: HashMap<String, usize> =
        rots.iter().enumerate().map(|(i, r)| (r.id.clone(), i)).collect();
    let annotator_index: HashMap<String, usize> = profiles
        .iter()
        .enumerate()
        .map(|(i, p)| (p.annotator_id.clone(), i))
        .collect();

    let mut seen = HashSet::new();
    let mut annotations = Vec::with_capacity(records.len());
    for rec in records {
        field_count(annotation_path, &rec, 3)?;
        let [rot_id, annotator_id, letter]: [String; 3] = rec.fields.try_into().expect("checked");
        let rot = *rot_index.get(&rot_id).ok_or_else(|| {
            invalid(annotation_path, rec.line, format!("unknown rot_id {rot_id:?}"))
        })?;
        let annotator = *annotator_index.get(&annotator_id).ok_or_else(|| {
            invalid(
                annotation_path,
                rec.line,
                format!("unknown annotator_id {annotator_id:?}"),
            )
        })?;
        let answer = letter.parse::<Choice>().map_err(|m| {
            invalid(
                annotation_path,
                rec.line,
                format!("{m} (rot {rot_id:?}, annotator {annotator_id:?})"),
            )
        })?;
        if !seen.insert((rot, annotator)) {
            return Err(invalid(
                annotation_path,
                rec.line,
                format!("duplicate annotation of {rot_id:?} by {annotator_id:?}"),
            ));
        }
        annotations.push(Annotation {
            rot,
            annotator,
            answer,
        });
    }

    Corpus::new(rots, profiles, annotations, DemographicBinning::standard(), false)
}

impl Corpus {
    /// Builds a corpus from already-validated parts.
    pub fn new(
        rots: Vec<RoT>,
        profiles: Vec<AnnotatorProfile>,
        annotations: Vec<Annotation>,
        binning: DemographicBinning,
        strict: bool,
    ) -> Result<Corpus, CorpusError> {
        let assignments = apply_binning(&profiles, &binning, strict)?;
        let rot_index = rots.iter().enumerate().map(|(i, r)| (r.id.clone(), i)).collect();
        let annotator_index = profiles
            .iter()
            .enumerate()
            .map(|(i, p)| (p.annotator_id.clone(), i))
            .collect();
        let mut per_rot = vec![Vec::new(); rots.len()];
        for a in &annotations {
            per_rot[a.rot].push((a.annotator, a.answer));
        }
        Ok(Corpus {
            rots,
            profiles,
            annotations,
            binning,
            assignments,
            rot_index,
            annotator_index,
            per_rot,
        })
    }

    /// Replaces the active binning.
    pub fn rebin(self, binning: DemographicBinning, strict: bool) -> Result<Corpus, CorpusError> {
        Corpus::new(self.rots, self.profiles, self.annotations, binning, strict)
    }

    pub fn rots(&self) -> &[RoT] {
        &self.rots
    }

    pub fn rot(&self, id: &str) -> Option<&RoT> {
        self.rot_index.get(id).map(|&i| &self.rots[i])
    }

    pub fn profiles(&self) -> &[AnnotatorProfile] {
        &self.profiles
    }

    pub fn annotations(&self) -> &[Annotation] {
        &self.annotations
    }

    pub fn binning(&self) -> &DemographicBinning {
        &self.binning
    }

    pub fn assignments(&self) -> &BinAssignments {
        &self.assignments
    }

    pub fn annotator_id(&self, index: usize) -> &str {
        &self.profiles[index].annotator_id
    }

    pub fn annotator_index(&self, id: &str) -> Option<usize> {
        self.annotator_index.get(id).copied()
    }

    /// Human answers for one RoT as (annotator index, answer).
    pub fn answers_for(&self, rot_id: &str) -> &[(usize, Choice)] {
        self.rot_index
            .get(rot_id)
            .map(|&i| self.per_rot[i].as_slice())
            .unwrap_or(&[])
    }

    pub fn answers_at(&self, rot: usize) -> &[(usize, Choice)] {
        &self.per_rot[rot]
    }

    pub fn annotation_counts(&self) -> Vec<(&str, usize)> {
        self.rots
            .iter()
            .zip(&self.per_rot)
            .map(|(r, a)| (r.id.as_str(), a.len()))
            .collect()
    }

    /// RoTs whose annotation count differs from `expected`.
    pub fn count_mismatches(&self, expected: usize) -> Vec<(&str, usize)> {
        self.annotation_counts()
            .into_iter()
            .filter(|&(_, n)| n != expected)
            .collect()
    }

    /// Annotators whose binned `attribute` equals `bin`, sorted by id.
    pub fn group_members(&self, attribute: &str, bin: &str) -> Result<Vec<&str>, CorpusError> {
        if self.binning.bins(attribute).is_none() {
            return Err(CorpusError::UnknownAttribute(attribute.to_owned()));
        }
        if !self.binning.has_bin(attribute, bin) {
            return Err(CorpusError::UnknownBin {
                attribute: attribute.to_owned(),
                bin: bin.to_owned(),
            });
        }
        // BTreeMap iteration is already sorted by annotator id.
        Ok(self
            .assignments
            .iter()
            .filter(|(_, bins)| bins.get(attribute).map(String::as_str) == Some(bin))
            .map(|(id, _)| id.as_str())
            .collect())
    }

    /// Membership mask over annotator indices for one group.
    pub fn group_mask(&self, attribute: &str, bin: &str) -> Result<Vec<bool>, CorpusError> {
        let members = self.group_members(attribute, bin)?;
        let mut mask = vec![false; self.profiles.len()];
        for id in members {
            mask[self.annotator_index[id]] = true;
        }
        Ok(mask)
    }

    /// Canonical JSON of the indexed corpus.
    pub fn to_canonical_json(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("corpus serializes")
    }

    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_canonical_json()))
    }
}
