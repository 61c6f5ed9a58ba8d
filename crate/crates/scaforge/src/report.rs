//! CSV and JSON outputs. Floats use Rust's shortest round-trip formatting,
//! so equal inputs give byte-identical files.

use std::fmt::Write as _;
use std::path::Path;

use scaforge_core::forest::FeatureRanking;
use scaforge_core::keyrank::{RankCurve, ScoreTable};
use scaforge_core::nn::TrainHistory;
use serde::{Deserialize, Serialize};

use crate::error::{read_file, write_file, Error, FormatError};

/// Written next to a log-probability file by `attack`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackInfo {
    pub model: String,
    pub n_features: usize,
    pub n_traces: usize,
}

/// Written by `rank`; one row of the comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankSummary {
    pub model: Option<String>,
    pub n_features: Option<usize>,
    pub n_traces: usize,
    pub byte_index: usize,
    pub true_key: u8,
    pub best_key: u8,
    pub traces_to_rank0: Option<usize>,
    pub final_rank: u8,
    pub accuracy: f64,
}

#[derive(Serialize)]
struct CurvePoint {
    n_traces: usize,
    rank: u8,
}

#[derive(Serialize)]
struct CurveDoc {
    true_key: u8,
    points: Vec<CurvePoint>,
}

#[derive(Serialize)]
struct ScoreDoc {
    key: u8,
    score: f64,
}

pub fn scores_csv(scores: &ScoreTable) -> String {
    let mut s = String::from("key,score\n");
    for (k, v) in scores.0.iter().enumerate() {
        writeln!(s, "{k},{v}").unwrap();
    }
    s
}

pub fn scores_json(scores: &ScoreTable) -> String {
    let doc: Vec<ScoreDoc> = scores.0.iter().enumerate().map(|(k, &score)| ScoreDoc { key: k as u8, score }).collect();
    to_json(&doc)
}

pub fn rank_curve_csv(curve: &RankCurve) -> String {
    let mut s = String::from("n_traces,rank\n");
    for (n, r) in &curve.points {
        writeln!(s, "{n},{r}").unwrap();
    }
    s
}

pub fn rank_curve_json(curve: &RankCurve, true_key: u8) -> String {
    let points = curve.points.iter().map(|&(n_traces, rank)| CurvePoint { n_traces, rank }).collect();
    to_json(&CurveDoc { true_key, points })
}

/// Features in ranked order; `feature` is an index into the raw trace.
pub fn importance_csv(ranking: &FeatureRanking, feature_map: Option<&[usize]>) -> String {
    let mut s = String::from("rank,feature,importance\n");
    for (rank, &f) in ranking.order.iter().enumerate() {
        let raw = feature_map.map_or(f, |m| m[f]);
        writeln!(s, "{rank},{raw},{}", ranking.importances[f]).unwrap();
    }
    s
}

pub fn history_csv(history: &TrainHistory) -> String {
    let mut s = String::from("epoch,train_loss,validation_loss\n");
    for (i, t) in history.train_loss.iter().enumerate() {
        match history.validation_loss.get(i) {
            Some(v) => writeln!(s, "{},{t},{v}", i + 1).unwrap(),
            None => writeln!(s, "{},{t},", i + 1).unwrap(),
        }
    }
    s
}

/// One index per line.
pub fn feature_list_text(indices: &[usize]) -> String {
    indices.iter().map(|i| format!("{i}\n")).collect()
}

/// Reads a feature index file: integers separated by whitespace or commas;
/// `#` starts a comment. An optional `rank,feature,...` CSV header row is
/// recognized and the `feature` column used.
pub fn parse_feature_list(text: &str) -> Result<Vec<usize>, String> {
    let mut lines = text.lines().map(|l| l.split('#').next().unwrap_or("").trim()).filter(|l| !l.is_empty()).peekable();
    if let Some(header) = lines.peek().filter(|h| h.starts_with("rank,")) {
        let col = header.split(',').position(|c| c.trim() == "feature").ok_or("CSV header lacks a feature column")?;
        lines.next();
        return lines
            .map(|l| {
                let cell = l.split(',').nth(col).ok_or_else(|| format!("short row {l:?}"))?;
                cell.trim().parse().map_err(|_| format!("bad feature index {cell:?}"))
            })
            .collect();
    }
    lines
        .flat_map(|l| l.split(|c: char| c == ',' || c.is_whitespace()).filter(|t| !t.is_empty()).collect::<Vec<_>>())
        .map(|t| t.parse().map_err(|_| format!("bad feature index {t:?}")))
        .collect()
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, Error> {
    let bytes = read_file(path)?;
    serde_json::from_slice(&bytes).map_err(|_| Error::format(path, FormatError::Corrupt("unreadable JSON")))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), Error> {
    write_file(path, text.as_bytes())
}

/// A labelled summary for the comparison table.
pub struct ReportRow {
    pub run: String,
    pub summary: RankSummary,
}

#[derive(Serialize)]
struct ReportDocRow<'a> {
    run: &'a str,
    #[serde(flatten)]
    summary: &'a RankSummary,
}

pub fn comparison_csv(rows: &[ReportRow]) -> String {
    let opt = |v: Option<usize>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut s = String::from("run,model,features,traces_to_rank0,final_rank,accuracy\n");
    for r in rows {
        let m = &r.summary;
        writeln!(
            s,
            "{},{},{},{},{},{}",
            r.run,
            m.model.as_deref().unwrap_or(""),
            opt(m.n_features),
            opt(m.traces_to_rank0),
            m.final_rank,
            m.accuracy
        )
        .unwrap();
    }
    s
}

pub fn comparison_json(rows: &[ReportRow]) -> String {
    let doc: Vec<_> = rows.iter().map(|r| ReportDocRow { run: &r.run, summary: &r.summary }).collect();
    to_json(&doc)
}
