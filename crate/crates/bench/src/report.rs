//! CSV, JSON and markdown renderings of sweep and network results.

use crate::network::{LayerRow, NetworkReport};
use crate::sweep::{SweepResult, SweepRow};
use crate::BenchError;
use serde::de::DeserializeOwned;
use serde::Serialize;
use std::fmt::Write as _;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
    Md,
}

impl FromStr for Format {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            "md" => Ok(Format::Md),
            _ => Err(BenchError::Invalid(format!("format must be csv, json or md, got '{s}'"))),
        }
    }
}

/// A result with a row table. CSV carries the rows only; JSON carries everything.
pub trait Report: Serialize {
    type Row: Serialize + DeserializeOwned;

    fn title(&self) -> String;
    fn rows(&self) -> &[Self::Row];
    /// Markdown lines after the table.
    fn footer(&self) -> Vec<String>;
}

impl Report for SweepResult {
    type Row = SweepRow;

    fn title(&self) -> String {
        format!(
            "{} sweep, K={}, {} cores, seed {} (instruction counts, not cycles)",
            crate::sweep::kind_name(self.config.kind),
            self.config.k,
            self.config.n_cores,
            self.config.seed
        )
    }

    fn rows(&self) -> &[SweepRow] {
        &self.rows
    }

    fn footer(&self) -> Vec<String> {
        self.skipped.iter().map(|s| format!("- skipped {} {} C={}: {}", s.kernel, s.sparsity, s.c, s.reason)).collect()
    }
}

impl Report for NetworkReport {
    type Row = LayerRow;

    fn title(&self) -> String {
        format!(
            "network {} at {}, isa-ext {}, {} cores (instruction counts, not cycles)",
            self.name,
            self.sparsity,
            if self.isa { "on" } else { "off" },
            self.n_cores
        )
    }

    fn rows(&self) -> &[LayerRow] {
        &self.layers
    }

    fn footer(&self) -> Vec<String> {
        let t = &self.total;
        vec![
            format!("- total instr: {} (baseline {}), speedup {:.4}", t.instr, t.baseline_instr, t.speedup),
            format!(
                "- weight bytes: {} compressed, {} dense, ratio {:.4}",
                t.weight_bytes, t.dense_weight_bytes, t.weight_ratio
            ),
        ]
    }
}

pub fn to_csv<T: Serialize>(rows: &[T]) -> Result<Vec<u8>, BenchError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| BenchError::Invalid(e.to_string()))
}

pub fn parse_csv<T: DeserializeOwned>(bytes: &[u8]) -> Result<Vec<T>, BenchError> {
    let mut r = csv::Reader::from_reader(bytes);
    Ok(r.deserialize().collect::<Result<Vec<T>, _>>()?)
}

fn markdown<R: Report>(r: &R) -> Result<String, BenchError> {
    let csv = to_csv(r.rows())?;
    let mut reader = csv::ReaderBuilder::new().has_headers(false).from_reader(csv.as_slice());
    let mut out = format!("## {}\n\n", r.title());
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let cells: Vec<&str> = rec.iter().collect();
        writeln!(out, "| {} |", cells.join(" | ")).expect("string write");
        if i == 0 {
            writeln!(out, "|{}", "---|".repeat(cells.len())).expect("string write");
        }
    }
    let footer = r.footer();
    if !footer.is_empty() {
        out.push('\n');
        for l in footer {
            out.push_str(&l);
            out.push('\n');
        }
    }
    Ok(out)
}

pub fn emit_report<R: Report>(r: &R, format: Format) -> Result<Vec<u8>, BenchError> {
    match format {
        Format::Csv => to_csv(r.rows()),
        Format::Json => {
            let mut v = serde_json::to_vec_pretty(r)?;
            v.push(b'\n');
            Ok(v)
        }
        Format::Md => Ok(markdown(r)?.into_bytes()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sweep::{sweep_single_layer, SweepConfig, CSV_HEADER};

    fn small() -> SweepResult {
        let cfg = SweepConfig { c_list: vec![8], k: 4, spatial: 4, n_cores: 2, ..SweepConfig::conv_default() };
        sweep_single_layer(&cfg).unwrap()
    }

    #[test]
    fn csv_header_is_fixed() {
        let csv = String::from_utf8(emit_report(&small(), Format::Csv).unwrap()).unwrap();
        assert_eq!(csv.lines().next().unwrap(), CSV_HEADER);
    }

    #[test]
    fn csv_and_json_agree() {
        let r = small();
        let from_csv: Vec<SweepRow> = parse_csv(&emit_report(&r, Format::Csv).unwrap()).unwrap();
        let from_json: SweepResult = serde_json::from_slice(&emit_report(&r, Format::Json).unwrap()).unwrap();
        assert_eq!(from_csv, r.rows);
        assert_eq!(from_json, r);
    }

    #[test]
    fn markdown_has_one_line_per_row() {
        let r = small();
        let md = String::from_utf8(emit_report(&r, Format::Md).unwrap()).unwrap();
        let table = md.lines().filter(|l| l.starts_with('|')).count();
        assert_eq!(table, r.rows.len() + 2);
        assert!(!md.contains("cycles |"));
    }
}
