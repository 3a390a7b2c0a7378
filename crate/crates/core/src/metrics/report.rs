use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{cc, nabf, nlpd, psnr, scd};
use crate::error::{Error, Result};
use crate::imaging::{luma, read_png, Image, Range};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub name: String,
    pub cc: f64,
    pub scd: f64,
    pub psnr: f64,
    pub nabf: f64,
    pub nlpd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub dataset: String,
    pub method: String,
    /// Seconds since the Unix epoch; the only non-deterministic field of a report.
    pub timestamp: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
    pub aggregate: MetricRow,
    pub meta: ReportMeta,
}

pub const CSV_HEADER: &str = "name,cc,scd,psnr,nabf,nlpd";

/// All five metrics for one fused/visible/infrared triple.
pub fn score_triple(name: &str, f: &Image, v: &Image, i: &Image) -> Result<MetricRow> {
    Ok(MetricRow {
        name: name.to_string(),
        cc: cc(f, v, i)?,
        scd: scd(f, v, i)?,
        psnr: psnr(f, v, i)?,
        nabf: nabf(f, v, i)?,
        nlpd: nlpd(f, v, i)?,
    })
}

impl MetricReport {
    /// Sorts rows by name and computes the arithmetic-mean aggregate.
    pub fn from_rows(mut rows: Vec<MetricRow>, meta: ReportMeta) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Data("report has no rows".into()));
        }
        rows.sort_by(|a, b| a.name.cmp(&b.name));
        let n = rows.len() as f64;
        let mean = |f: fn(&MetricRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
        let aggregate = MetricRow {
            name: "mean".into(),
            cc: mean(|r| r.cc),
            scd: mean(|r| r.scd),
            psnr: mean(|r| r.psnr),
            nabf: mean(|r| r.nabf),
            nlpd: mean(|r| r.nlpd),
        };
        Ok(Self {
            rows,
            aggregate,
            meta,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in self.rows.iter().chain(std::iter::once(&self.aggregate)) {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.name, r.cc, r.scd, r.psnr, r.nabf, r.nlpd
            ));
        }
        out
    }

    pub fn write(&self, csv_path: &Path, json_path: &Path) -> Result<()> {
        fs::write(csv_path, self.to_csv()).map_err(|e| Error::io(csv_path, e))?;
        let json = serde_json::to_string_pretty(self)? + "\n";
        fs::write(json_path, json).map_err(|e| Error::io(json_path, e))
    }
}

/// PNG file stems in `dir`, sorted.
pub fn png_stems(dir: &Path) -> Result<BTreeSet<String>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut stems = BTreeSet::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_png = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if is_png {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                stems.insert(stem.to_string());
            }
        }
    }
    Ok(stems)
}

fn load_gray(dir: &Path, stem: &str) -> Result<Image> {
    luma(&read_png(dir.join(format!("{stem}.png")), Range::Unit)?)
}

fn dir_label(dir: &Path) -> String {
    dir.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Scores every stem present in all three directories. Any stem missing from one of
/// them is an error that lists all unmatched stems.
pub fn evaluate(dir_v: &Path, dir_i: &Path, dir_f: &Path) -> Result<MetricReport> {
    let sv = png_stems(dir_v)?;
    let si = png_stems(dir_i)?;
    let sf = png_stems(dir_f)?;
    let all: BTreeSet<&String> = sv.iter().chain(&si).chain(&sf).collect();
    let unmatched: Vec<&str> = all
        .iter()
        .filter(|s| !(sv.contains(**s) && si.contains(**s) && sf.contains(**s)))
        .map(|s| s.as_str())
        .collect();
    if !unmatched.is_empty() || all.is_empty() {
        return Err(Error::Data(format!(
            "unmatched stems across vi/ir/fused: [{}]",
            unmatched.join(", ")
        )));
    }
    let rows = sv
        .par_iter()
        .map(|stem| {
            let v = load_gray(dir_v, stem)?;
            let i = load_gray(dir_i, stem)?;
            let f = load_gray(dir_f, stem)?;
            score_triple(stem, &f, &v, &i)
        })
        .collect::<Result<Vec<_>>>()?;
    let timestamp = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let dataset = dir_v
        .parent()
        .map(dir_label)
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| dir_label(dir_v));
    MetricReport::from_rows(
        rows,
        ReportMeta {
            dataset,
            method: dir_label(dir_f),
            timestamp,
        },
    )
}
