//! Report schemas.
//!
//! Evaluation CSV: a `#` metadata line, then
//! `image,specificity,sensitivity,accuracy,rmsd,mad_diff,auc` rows in
//! manifest order and a final `Average` row. Undefined values are written as
//! `NA` (CSV) or `null` (JSON). Sweep CSV: `x_limit,sigma,L,mean_accuracy`.
//! Reports carry no timestamps, so identical runs give identical bytes.

use std::collections::BTreeMap;
use std::io::Write;

use anyhow::Result;
use serde::Serialize;

use vesselmf::metrics::MetricsReport;
use vesselmf::sweep::Evaluation;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    /// `.json` selects JSON; anything else is CSV.
    pub fn from_path(path: &std::path::Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("json") => Format::Json,
            _ => Format::Csv,
        }
    }
}

pub type Metadata = BTreeMap<String, String>;

fn metadata_line(command: &str, meta: &Metadata) -> String {
    let fields: Vec<String> = meta.iter().map(|(k, v)| format!("{k}={v}")).collect();
    format!("# vesselmf {} {command} {}\n", env!("CARGO_PKG_VERSION"), fields.join(" "))
}

fn num(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_finite() => format!("{x:.6}"),
        _ => "NA".to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRow {
    pub image: String,
    pub specificity: Option<f64>,
    pub sensitivity: Option<f64>,
    pub accuracy: Option<f64>,
    pub rmsd: Option<f64>,
    pub mad_diff: Option<f64>,
    pub auc: Option<f64>,
}

impl EvalRow {
    pub fn from_report(image: &str, r: &MetricsReport) -> Self {
        Self {
            image: image.to_string(),
            specificity: r.specificity,
            sensitivity: r.sensitivity,
            accuracy: r.accuracy,
            rmsd: Some(r.rmsd),
            mad_diff: Some(r.mad_diff()),
            auc: r.auc,
        }
    }

    fn columns(&self) -> [Option<f64>; 6] {
        [
            self.specificity,
            self.sensitivity,
            self.accuracy,
            self.rmsd,
            self.mad_diff,
            self.auc,
        ]
    }
}

/// Column means over the images where each value is defined.
pub fn average_row(rows: &[EvalRow]) -> EvalRow {
    let mean = |i: usize| {
        let vals: Vec<f64> = rows.iter().filter_map(|r| r.columns()[i]).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    };
    EvalRow {
        image: "Average".to_string(),
        specificity: mean(0),
        sensitivity: mean(1),
        accuracy: mean(2),
        rmsd: mean(3),
        mad_diff: mean(4),
        auc: mean(5),
    }
}

pub fn write_eval(out: &mut dyn Write, format: Format, meta: &Metadata, rows: &[EvalRow]) -> Result<()> {
    let average = average_row(rows);
    match format {
        Format::Csv => {
            out.write_all(metadata_line("eval", meta).as_bytes())?;
            let mut w = csv::Writer::from_writer(out);
            w.write_record(["image", "specificity", "sensitivity", "accuracy", "rmsd", "mad_diff", "auc"])?;
            for r in rows.iter().chain(std::iter::once(&average)) {
                let mut record = vec![r.image.clone()];
                record.extend(r.columns().into_iter().map(num));
                w.write_record(&record)?;
            }
            w.flush()?;
        }
        Format::Json => {
            #[derive(Serialize)]
            struct Doc<'a> {
                tool: String,
                metadata: &'a Metadata,
                images: &'a [EvalRow],
                average: EvalRow,
            }
            let doc = Doc {
                tool: format!("vesselmf {}", env!("CARGO_PKG_VERSION")),
                metadata: meta,
                images: rows,
                average,
            };
            serde_json::to_writer_pretty(&mut *out, &doc)?;
            out.write_all(b"\n")?;
        }
    }
    Ok(())
}

pub fn write_sweep(out: &mut dyn Write, format: Format, meta: &Metadata, evals: &[Evaluation]) -> Result<()> {
    match format {
        Format::Csv => {
            out.write_all(metadata_line("sweep", meta).as_bytes())?;
            let mut w = csv::Writer::from_writer(out);
            w.write_record(["x_limit", "sigma", "L", "mean_accuracy"])?;
            for e in evals {
                w.write_record([
                    format!("{}", e.x_limit),
                    format!("{}", e.sigma),
                    format!("{}", e.length),
                    num(e.mean_accuracy),
                ])?;
            }
            w.flush()?;
        }
        Format::Json => {
            #[derive(Serialize)]
            struct Row {
                round: usize,
                x_limit: f64,
                sigma: f64,
                #[serde(rename = "L")]
                length: f64,
                mean_accuracy: Option<f64>,
            }
            let rows: Vec<Row> = evals
                .iter()
                .map(|e| Row {
                    round: e.round,
                    x_limit: e.x_limit,
                    sigma: e.sigma,
                    length: e.length,
                    mean_accuracy: e.mean_accuracy,
                })
                .collect();
            let doc = serde_json::json!({
                "tool": format!("vesselmf {}", env!("CARGO_PKG_VERSION")),
                "metadata": meta,
                "evaluations": rows,
            });
            serde_json::to_writer_pretty(&mut *out, &doc)?;
            out.write_all(b"\n")?;
        }
    }
    Ok(())
}

/// ROC points as `fpr,tpr` rows.
pub fn write_roc_points(out: &mut dyn Write, points: &[(f64, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["fpr", "tpr"])?;
    for &(f, t) in points {
        w.write_record([format!("{f}"), format!("{t}")])?;
    }
    w.flush()?;
    Ok(())
}

/// Per-image AUC with an `Average` row.
pub fn write_auc_summary(out: &mut dyn Write, meta: &Metadata, rows: &[(String, Option<f64>)]) -> Result<()> {
    out.write_all(metadata_line("roc", meta).as_bytes())?;
    let defined: Vec<f64> = rows.iter().filter_map(|r| r.1).collect();
    let avg = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["image", "auc"])?;
    for (id, auc) in rows.iter().cloned().chain(std::iter::once(("Average".to_string(), avg))) {
        w.write_record([id, num(auc)])?;
    }
    w.flush()?;
    Ok(())
}
