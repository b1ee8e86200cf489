//! Tab-separated record format shared by every pipeline file.
//!
//! One record per line, fields separated by a single tab. Inside a field,
//! tab, newline, carriage return and backslash are written as `\t`, `\n`,
//! `\r` and `\\`. Blank lines and lines starting with `#` are skipped on read.

use std::fmt::Write as _;
use std::io::{self, BufRead, Write};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TsvError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// A decoded record together with its 1-based source line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    pub line: usize,
    pub fields: Vec<String>,
}

impl Record {
    pub fn malformed(&self, message: impl Into<String>) -> TsvError {
        TsvError::Malformed {
            line: self.line,
            message: message.into(),
        }
    }

    /// Fails unless the record has exactly `n` fields.
    pub fn expect_fields(&self, n: usize) -> Result<(), TsvError> {
        if self.fields.len() == n {
            Ok(())
        } else {
            Err(self.malformed(format!(
                "expected {n} tab-separated fields, found {}",
                self.fields.len()
            )))
        }
    }
}

pub fn escape_field(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    for c in raw.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            other => out.push(other),
        }
    }
    out
}

pub fn unescape_field(field: &str) -> Result<String, String> {
    let mut out = String::with_capacity(field.len());
    let mut chars = field.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some(other) => return Err(format!("unknown escape sequence \\{other}")),
            None => return Err("dangling backslash at end of field".to_owned()),
        }
    }
    Ok(out)
}

/// Reads every record from `reader`.
pub fn read_records<R: BufRead>(reader: R) -> Result<Vec<Record>, TsvError> {
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields = line
            .split('\t')
            .map(|f| {
                unescape_field(f).map_err(|message| TsvError::Malformed {
                    line: line_no,
                    message,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        records.push(Record {
            line: line_no,
            fields,
        });
    }
    Ok(records)
}

/// Drops the first record when it is exactly the expected header.
pub fn strip_header(records: &mut Vec<Record>, header: &[&str]) {
    if records
        .first()
        .is_some_and(|r| r.fields.iter().map(String::as_str).eq(header.iter().copied()))
    {
        records.remove(0);
    }
}

pub fn format_record<S: AsRef<str>>(fields: &[S]) -> String {
    let mut line = String::new();
    for (i, f) in fields.iter().enumerate() {
        if i > 0 {
            line.push('\t');
        }
        let _ = write!(line, "{}", escape_field(f.as_ref()));
    }
    line.push('\n');
    line
}

pub fn write_record<W: Write, S: AsRef<str>>(out: &mut W, fields: &[S]) -> io::Result<()> {
    out.write_all(format_record(fields).as_bytes())
}
