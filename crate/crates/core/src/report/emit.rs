use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{ReportBundle, ReportError, SourceCell};
use crate::corpus::Source;
use crate::prompting::PromptVariant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Markdown,
    Csv,
    Json,
}

impl OutputFormat {
    pub const ALL: [OutputFormat; 3] = [OutputFormat::Markdown, OutputFormat::Csv, OutputFormat::Json];
}

impl FromStr for OutputFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "markdown" | "md" => Ok(OutputFormat::Markdown),
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(format!("unknown format {other:?} (expected markdown, csv or json)")),
        }
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), ReportError> {
    let io = |source| ReportError::Io {
        path: path.display().to_string(),
        source,
    };
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(io)?;
    }
    std::fs::write(path, bytes).map_err(io)
}

/// Writes the requested formats under `dir`: `report.md`, `tables/*.csv`,
/// `report.json`. Returns the files written, in order.
pub fn emit(bundle: &ReportBundle, dir: &Path, formats: &[OutputFormat]) -> Result<Vec<PathBuf>, ReportError> {
    let formats: BTreeSet<OutputFormat> = formats.iter().copied().collect();
    let mut written = Vec::new();
    if formats.contains(&OutputFormat::Markdown) {
        let path = dir.join("report.md");
        write_file(&path, render_markdown(bundle).as_bytes())?;
        written.push(path);
    }
    if formats.contains(&OutputFormat::Csv) {
        for (name, body) in render_csv(bundle) {
            let path = dir.join("tables").join(name);
            write_file(&path, body.as_bytes())?;
            written.push(path);
        }
    }
    if formats.contains(&OutputFormat::Json) {
        let path = dir.join("report.json");
        let mut body = serde_json::to_string_pretty(bundle).expect("bundle serializes");
        body.push('\n');
        write_file(&path, body.as_bytes())?;
        written.push(path);
    }
    Ok(written)
}

fn md_escape(s: &str) -> String {
    s.replace('|', "\\|")
}

fn fixed2(x: f64) -> String {
    format!("{x:.2}")
}

fn fixed3(x: f64) -> String {
    format!("{x:.3}")
}

fn render_markdown(b: &ReportBundle) -> String {
    let mut out = String::new();
    let m = &b.run_metadata;
    out.push_str("# Human-LM alignment report\n\n");
    out.push_str("## Run metadata\n\n| Field | Value |\n|---|---|\n");
    for (k, v) in [
        ("corpus digest", &m.corpus_digest),
        ("cache digest", &m.cache_digest),
        ("config digest", &m.config_digest),
        ("timestamp", &m.timestamp),
        ("tool version", &m.tool_version),
    ] {
        let _ = writeln!(out, "| {k} | `{v}` |");
    }

    // Source table: one column per (variant, source).
    out.push_str("\n## Mean ADA-Met by data source (lower is better)\n\n");
    let cells = &b.source_table.cells;
    let variants: BTreeSet<PromptVariant> = cells.iter().map(|c| c.variant).collect();
    let models: BTreeSet<&str> = cells.iter().map(|c| c.model_id.as_str()).collect();
    out.push_str("| Model |");
    for v in &variants {
        for s in Source::ALL {
            let _ = write!(out, " {} {} |", v.title(), s);
        }
    }
    out.push_str("\n|---|");
    for _ in 0..variants.len() * Source::ALL.len() {
        out.push_str("---:|");
    }
    out.push('\n');
    for model in &models {
        let _ = write!(out, "| {} |", md_escape(model));
        for v in &variants {
            for s in Source::ALL {
                let cell = cells
                    .iter()
                    .find(|c| c.model_id == *model && c.variant == *v && c.source == s);
                match cell {
                    Some(c) if c.column_min => {
                        let _ = write!(out, " **{}** |", fixed2(c.mean_ada_met));
                    }
                    Some(c) => {
                        let _ = write!(out, " {} |", fixed2(c.mean_ada_met));
                    }
                    None => out.push_str(" n/a |"),
                }
            }
        }
        out.push('\n');
    }
    out.push_str("\nBold marks the lowest mean in each column.\n");

    out.push_str("\n## Best-aligned demographic bins (lowest group mean ADA-Met)\n");
    let winners = &b.demographic_table.winners;
    let dvariants: BTreeSet<PromptVariant> = winners.iter().map(|w| w.variant).collect();
    for v in dvariants {
        let rows: Vec<_> = winners.iter().filter(|w| w.variant == v).collect();
        let mut attributes: Vec<&str> = Vec::new();
        for w in &rows {
            if !attributes.contains(&w.attribute.as_str()) {
                attributes.push(&w.attribute);
            }
        }
        let _ = write!(out, "\n### {}\n\n| Model |", v.title());
        for a in &attributes {
            let _ = write!(out, " {} |", md_escape(a));
        }
        out.push_str("\n|---|");
        for _ in &attributes {
            out.push_str("---|");
        }
        out.push('\n');
        let models: BTreeSet<&str> = rows.iter().map(|w| w.model_id.as_str()).collect();
        for model in models {
            let _ = write!(out, "| {} |", md_escape(model));
            for a in &attributes {
                match rows.iter().find(|w| w.model_id == model && w.attribute == *a) {
                    Some(w) => {
                        let _ = write!(
                            out,
                            " {} ({}) |",
                            md_escape(&w.bins.join(" / ")),
                            fixed2(w.mean_ada_met)
                        );
                    }
                    None => out.push_str(" n/a |"),
                }
            }
            out.push('\n');
        }
    }

    out.push_str("\n## ADA-Met histograms (all annotators)\n\n");
    let mut classes: Vec<f64> = Vec::new();
    for h in &b.histograms {
        for c in &h.classes {
            if !classes.contains(&c.value) {
                classes.push(c.value);
            }
        }
    }
    classes.sort_by(f64::total_cmp);
    out.push_str("| Model | Prompt |");
    for c in &classes {
        let _ = write!(out, " {c} |");
    }
    out.push_str(" Total |\n|---|---|");
    for _ in 0..=classes.len() {
        out.push_str("---:|");
    }
    out.push('\n');
    for h in &b.histograms {
        let _ = write!(out, "| {} | {} |", md_escape(&h.model_id), h.variant.title());
        for c in &classes {
            let n = h.classes.iter().find(|x| x.value == *c).map_or(0, |x| x.count);
            let _ = write!(out, " {n} |");
        }
        let _ = writeln!(out, " {} |", h.total());
    }

    out.push_str("\n## Inter-annotator agreement (Krippendorff's alpha)\n\n");
    out.push_str("| Annotators | Prompt | Raters | alpha (nominal) | alpha (ordinal) |\n|---|---|---:|---:|---:|\n");
    for r in &b.agreement_table {
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} |",
            md_escape(&r.group),
            r.variant.map_or("N/A", |v| v.title()),
            r.raters,
            fixed3(r.nominal),
            fixed3(r.ordinal)
        );
    }

    out.push_str("\n## Refusals\n\nRefused / irrelevant responses per data source.\n\n| Model | Prompt |");
    for s in Source::ALL {
        let _ = write!(out, " {s} |");
    }
    out.push_str(" Irrelevant |\n|---|---|");
    for _ in 0..=Source::ALL.len() {
        out.push_str("---:|");
    }
    out.push('\n');
    let runs: BTreeSet<(&str, PromptVariant)> = b
        .refusal_table
        .iter()
        .map(|r| (r.model_id.as_str(), r.variant))
        .collect();
    for (model, v) in runs {
        let rows: Vec<_> = b
            .refusal_table
            .iter()
            .filter(|r| r.model_id == model && r.variant == v)
            .collect();
        let _ = write!(out, "| {} | {} |", md_escape(model), v.title());
        for s in Source::ALL {
            let n = rows.iter().find(|r| r.source == s).map_or(0, |r| r.refusals);
            let _ = write!(out, " {n} |");
        }
        let _ = writeln!(out, " {} |", rows.iter().map(|r| r.irrelevant).sum::<usize>());
    }

    if !b.warnings.is_empty() {
        out.push_str("\n## Warnings\n\n");
        for w in &b.warnings {
            let _ = writeln!(out, "- {w}");
        }
    }
    out
}

fn csv_string(rows: Vec<Vec<String>>) -> String {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    for r in rows {
        wtr.write_record(&r).expect("in-memory write");
    }
    String::from_utf8(wtr.into_inner().expect("flush")).expect("utf-8")
}

fn render_csv(b: &ReportBundle) -> Vec<(&'static str, String)> {
    let s = |x: &dyn ToString| x.to_string();
    let mut files = Vec::new();

    let mut rows = vec![vec![
        s(&"model_id"),
        s(&"variant"),
        s(&"source"),
        s(&"mean_ada_met"),
        s(&"n_rots"),
        s(&"column_min"),
    ]];
    for c in &b.source_table.cells {
        rows.push(vec![
            c.model_id.clone(),
            s(&c.variant),
            s(&c.source),
            s(&c.mean_ada_met),
            s(&c.n_rots),
            s(&c.column_min),
        ]);
    }
    files.push(("source_table.csv", csv_string(rows)));

    let mut rows = vec![["model_id", "variant", "attribute", "bins", "mean_ada_met"]
        .map(String::from)
        .to_vec()];
    for w in &b.demographic_table.winners {
        rows.push(vec![
            w.model_id.clone(),
            s(&w.variant),
            w.attribute.clone(),
            w.bins.join(";"),
            s(&w.mean_ada_met),
        ]);
    }
    files.push(("demographic_table.csv", csv_string(rows)));

    let mut rows = vec![["model_id", "variant", "attribute", "bin", "mean_ada_met", "n_rots"]
        .map(String::from)
        .to_vec()];
    for m in &b.demographic_table.bin_means {
        rows.push(vec![
            m.model_id.clone(),
            s(&m.variant),
            m.attribute.clone(),
            m.bin.clone(),
            s(&m.mean_ada_met),
            s(&m.n_rots),
        ]);
    }
    files.push(("demographic_bins.csv", csv_string(rows)));

    let mut rows = vec![["model_id", "variant", "ada_met", "count"].map(String::from).to_vec()];
    for h in &b.histograms {
        for c in &h.classes {
            rows.push(vec![h.model_id.clone(), s(&h.variant), s(&c.value), s(&c.count)]);
        }
    }
    files.push(("histograms.csv", csv_string(rows)));

    let mut rows = vec![["group", "variant", "raters", "alpha_nominal", "alpha_ordinal"]
        .map(String::from)
        .to_vec()];
    for r in &b.agreement_table {
        rows.push(vec![
            r.group.clone(),
            r.variant.map(|v| v.to_string()).unwrap_or_else(|| "N/A".into()),
            s(&r.raters),
            s(&r.nominal),
            s(&r.ordinal),
        ]);
    }
    files.push(("agreement.csv", csv_string(rows)));

    let mut rows = vec![["model_id", "variant", "source", "refusals", "irrelevant"]
        .map(String::from)
        .to_vec()];
    for r in &b.refusal_table {
        rows.push(vec![
            r.model_id.clone(),
            s(&r.variant),
            s(&r.source),
            s(&r.refusals),
            s(&r.irrelevant),
        ]);
    }
    files.push(("refusals.csv", csv_string(rows)));
    files
}

/// Reads `tables/source_table.csv` back into cells.
pub fn read_source_table_csv(path: &Path) -> Result<Vec<SourceCell>, ReportError> {
    let parse_err = |message: String| ReportError::Parse {
        path: path.display().to_string(),
        message,
    };
    let mut rdr = csv::Reader::from_path(path).map_err(|e| parse_err(e.to_string()))?;
    let mut cells = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| parse_err(e.to_string()))?;
        if rec.len() != 6 {
            return Err(parse_err(format!("expected 6 columns, found {}", rec.len())));
        }
        let num = |i: usize| -> Result<f64, ReportError> {
            rec[i].parse().map_err(|_| parse_err(format!("bad number {:?}", &rec[i])))
        };
        cells.push(SourceCell {
            model_id: rec[0].to_owned(),
            variant: rec[1].parse().map_err(parse_err)?,
            source: rec[2].parse().map_err(parse_err)?,
            mean_ada_met: num(3)?,
            n_rots: rec[4]
                .parse()
                .map_err(|_| parse_err(format!("bad count {:?}", &rec[4])))?,
            column_min: rec[5]
                .parse()
                .map_err(|_| parse_err(format!("bad flag {:?}", &rec[5])))?,
        });
    }
    Ok(cells)
}
