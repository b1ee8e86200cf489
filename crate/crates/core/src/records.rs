//! Extraction and score files exchanged between pipeline stages.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extraction::{ExtractedAnswer, Verdict};
use crate::metrics::{AlignmentScore, GroupRef};
use crate::prompting::PromptVariant;
use crate::tsv::{self, Record, TsvError};

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: TsvError,
    },
    #[error("{path}: line {line}: {message}")]
    Invalid {
        path: String,
        line: usize,
        message: String,
    },
}

pub const EXTRACTION_HEADER: [&str; 7] = [
    "rot_id",
    "model_id",
    "variant",
    "cache_key",
    "verdict",
    "evidence",
    "source_line",
];

pub const SCORE_HEADER: [&str; 6] = ["rot_id", "model_id", "variant", "group", "ada_met", "accuracy"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionRecord {
    pub rot_id: String,
    pub model_id: String,
    pub variant: PromptVariant,
    pub cache_key: String,
    pub answer: ExtractedAnswer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub rot_id: String,
    pub model_id: String,
    pub variant: PromptVariant,
    pub group: GroupRef,
    pub ada_met: f64,
    pub accuracy: u8,
}

impl From<&AlignmentScore> for ScoreRecord {
    fn from(s: &AlignmentScore) -> Self {
        ScoreRecord {
            rot_id: s.rot_id.clone(),
            model_id: s.model_id.clone(),
            variant: s.variant,
            group: s.group.clone(),
            ada_met: s.ada_met,
            accuracy: s.accuracy,
        }
    }
}

fn open(path: &Path) -> Result<Vec<Record>, RecordError> {
    let wrap = |source| RecordError::File {
        path: path.display().to_string(),
        source,
    };
    let file = File::open(path).map_err(|e| wrap(TsvError::Io(e)))?;
    tsv::read_records(BufReader::new(file)).map_err(wrap)
}

fn write_all<const N: usize>(
    path: &Path,
    header: &[&str; N],
    rows: impl Iterator<Item = [String; N]>,
) -> Result<(), RecordError> {
    let wrap = |e: std::io::Error| RecordError::File {
        path: path.display().to_string(),
        source: TsvError::Io(e),
    };
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(wrap)?;
    }
    let mut out = BufWriter::new(File::create(path).map_err(wrap)?);
    tsv::write_record(&mut out, header).map_err(wrap)?;
    for row in rows {
        tsv::write_record(&mut out, &row).map_err(wrap)?;
    }
    out.flush().map_err(wrap)
}

pub fn write_extractions(path: &Path, records: &[ExtractionRecord]) -> Result<(), RecordError> {
    write_all(
        path,
        &EXTRACTION_HEADER,
        records.iter().map(|r| {
            [
                r.rot_id.clone(),
                r.model_id.clone(),
                r.variant.name().to_owned(),
                r.cache_key.clone(),
                r.answer.verdict.code(),
                r.answer.evidence.clone(),
                r.answer.source_line.to_string(),
            ]
        }),
    )
}

pub fn read_extractions(path: &Path) -> Result<Vec<ExtractionRecord>, RecordError> {
    let mut records = open(path)?;
    tsv::strip_header(&mut records, &EXTRACTION_HEADER);
    let bad = |line, message: String| RecordError::Invalid {
        path: path.display().to_string(),
        line,
        message,
    };
    records
        .into_iter()
        .map(|rec| {
            if rec.fields.len() != EXTRACTION_HEADER.len() {
                return Err(bad(rec.line, format!("expected 7 fields, found {}", rec.fields.len())));
            }
            let f = &rec.fields;
            let variant = f[2].parse().map_err(|m| bad(rec.line, m))?;
            let verdict = Verdict::from_code(&f[4])
                .ok_or_else(|| bad(rec.line, format!("unknown verdict {:?}", f[4])))?;
            let source_line = f[6]
                .parse()
                .map_err(|_| bad(rec.line, format!("bad source_line {:?}", f[6])))?;
            Ok(ExtractionRecord {
                rot_id: f[0].clone(),
                model_id: f[1].clone(),
                variant,
                cache_key: f[3].clone(),
                answer: ExtractedAnswer {
                    verdict,
                    evidence: f[5].clone(),
                    source_line,
                },
            })
        })
        .collect()
}

/// `ada_met` is written with the shortest representation that round-trips.
pub fn write_scores(path: &Path, records: &[ScoreRecord]) -> Result<(), RecordError> {
    write_all(
        path,
        &SCORE_HEADER,
        records.iter().map(|r| {
            [
                r.rot_id.clone(),
                r.model_id.clone(),
                r.variant.name().to_owned(),
                r.group.to_string(),
                r.ada_met.to_string(),
                r.accuracy.to_string(),
            ]
        }),
    )
}

pub fn read_scores(path: &Path) -> Result<Vec<ScoreRecord>, RecordError> {
    let mut records = open(path)?;
    tsv::strip_header(&mut records, &SCORE_HEADER);
    let bad = |line, message: String| RecordError::Invalid {
        path: path.display().to_string(),
        line,
        message,
    };
    records
        .into_iter()
        .map(|rec| {
            if rec.fields.len() != SCORE_HEADER.len() {
                return Err(bad(rec.line, format!("expected 6 fields, found {}", rec.fields.len())));
            }
            let f = &rec.fields;
            let ada_met: f64 = f[4]
                .parse()
                .map_err(|_| bad(rec.line, format!("bad ada_met {:?}", f[4])))?;
            if !(0.0..=4.0).contains(&ada_met) {
                return Err(bad(rec.line, format!("ada_met {ada_met} outside [0, 4]")));
            }
            let accuracy = match f[5].as_str() {
                "0" => 0,
                "1" => 1,
                other => return Err(bad(rec.line, format!("bad accuracy {other:?}"))),
            };
            Ok(ScoreRecord {
                rot_id: f[0].clone(),
                model_id: f[1].clone(),
                variant: f[2].parse().map_err(|m| bad(rec.line, m))?,
                group: f[3].parse().map_err(|m| bad(rec.line, m))?,
                ada_met,
                accuracy,
            })
        })
        .collect()
}
