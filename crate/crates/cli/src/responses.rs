//! `responses.tsv`: raw model output as the gateway returned it, so the
//! score stage can re-extract without another round of inference.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use normalign_core::prompting::PromptVariant;
use normalign_core::tsv;
use normalign_gateway::RawResponse;

use crate::error::CliError;

pub const RESPONSE_HEADER: [&str; 7] = [
    "rot_id",
    "model_id",
    "variant",
    "cache_key",
    "retrieved_at",
    "from_cache",
    "text",
];

pub fn write_responses(path: &Path, responses: &[RawResponse]) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::io(path, e);
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(io)?;
    }
    let mut out = BufWriter::new(File::create(path).map_err(io)?);
    tsv::write_record(&mut out, &RESPONSE_HEADER).map_err(io)?;
    for r in responses {
        tsv::write_record(
            &mut out,
            &[
                r.rot_id.as_str(),
                r.model_id.as_str(),
                r.variant.name(),
                r.cache_key.as_str(),
                r.retrieved_at.as_str(),
                if r.from_cache { "true" } else { "false" },
                r.text.as_str(),
            ],
        )
        .map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn read_responses(path: &Path) -> Result<Vec<RawResponse>, CliError> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut records = tsv::read_records(BufReader::new(file)).map_err(|e| match e {
        tsv::TsvError::Io(e) => CliError::io(path, e),
        other => CliError::validation(format!("{}: {other}", path.display())),
    })?;
    tsv::strip_header(&mut records, &RESPONSE_HEADER);
    let bad = |line: usize, message: String| CliError::validation(format!("{}: line {line}: {message}", path.display()));
    records
        .into_iter()
        .map(|rec| {
            if rec.fields.len() != RESPONSE_HEADER.len() {
                return Err(bad(rec.line, format!("expected 7 fields, found {}", rec.fields.len())));
            }
            let f = rec.fields;
            let variant: PromptVariant = f[2].parse().map_err(|m| bad(rec.line, m))?;
            let from_cache = match f[5].as_str() {
                "true" => true,
                "false" => false,
                other => return Err(bad(rec.line, format!("bad from_cache {other:?}"))),
            };
            let mut f = f.into_iter();
            let mut next = || f.next().expect("length checked");
            let (rot_id, model_id) = (next(), next());
            next();
            let (cache_key, retrieved_at) = (next(), next());
            next();
            Ok(RawResponse {
                rot_id,
                model_id,
                variant,
                cache_key,
                retrieved_at,
                from_cache,
                text: next(),
            })
        })
        .collect()
}
