//! Rubric reports: what each descriptor contributed to a prediction.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::analysis::{grade_divergence, GradeStatistics};
use crate::descriptors::{extract_features, FeatureVector, FEATURE_LABELS, FEATURE_NAMES, N_FEATURES};
use crate::error::{Error, Result};
use crate::model::{
    boundaries_monotone, decision_boundaries, forward, normalize_score, predict_level,
    rescale_aggregate, ModelParams,
};
use crate::score::Piece;

pub const FLAG_ALL_BELOW: &str = "all descriptors below grade average";
pub const FLAG_ALL_ABOVE: &str = "all descriptors above grade average";
pub const FLAG_TEMPO_ASSUMED: &str = "tempo missing, 100 bpm assumed";
pub const FLAG_PREDICTED_GRADE: &str = "unlabeled piece, divergence measured against predicted grade";
pub const FLAG_NON_MONOTONE: &str = "decision boundaries are not monotone in the aggregated score";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RubricRow {
    pub feature: String,
    pub label: String,
    pub raw: f64,
    /// `tanh` score in `(-1, 1)`.
    pub score: f64,
    /// Score mapped to `[0, 1]`.
    pub normalized: f64,
    pub divergence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RubricReport {
    pub piece_id: String,
    pub k: u32,
    pub rows: Vec<RubricRow>,
    pub s_agg: f64,
    /// `s_agg` rescaled to `[0, 12]`.
    pub aggregated_score: f64,
    pub predicted_level: u32,
    pub labeled_level: Option<u32>,
    /// Grade boundaries on the 0-12 scale; `None` where unreachable.
    pub boundaries: Vec<Option<f64>>,
    pub boundaries_monotone: bool,
    pub divergence_grade: u32,
    pub divergence_from_prediction: bool,
    pub tempo_assumed: bool,
    pub flags: Vec<String>,
}

pub fn build_report(params: &ModelParams, piece: &Piece, stats: &GradeStatistics) -> Result<RubricReport> {
    let features = extract_features(piece)?;
    build_report_from_features(params, &piece.id, &features, piece.label, stats)
}

pub fn build_report_from_features(
    params: &ModelParams,
    piece_id: &str,
    features: &FeatureVector,
    label: Option<u32>,
    stats: &GradeStatistics,
) -> Result<RubricReport> {
    if stats.k != params.k {
        return Err(Error::Analysis(format!(
            "grade statistics are for K={}, model has K={}",
            stats.k, params.k
        )));
    }
    let trace = forward(params, features)?;
    let predicted_level = predict_level(params, &trace);
    let divergence = grade_divergence(params, &features.values, label, stats)?;
    let rows: Vec<RubricRow> = (0..N_FEATURES)
        .map(|i| RubricRow {
            feature: FEATURE_NAMES[i].to_string(),
            label: FEATURE_LABELS[i].to_string(),
            raw: features.values[i],
            score: trace.scores[i],
            normalized: normalize_score(trace.scores[i]),
            divergence: divergence.values[i],
        })
        .collect();
    let boundaries = decision_boundaries(params)
        .into_iter()
        .map(|b| b.position().map(|s| rescale_aggregate(s, N_FEATURES)))
        .collect();
    let monotone = boundaries_monotone(params);

    let mut flags = Vec::new();
    if rows.iter().all(|r| r.divergence < 0.0) {
        flags.push(FLAG_ALL_BELOW.to_string());
    }
    if rows.iter().all(|r| r.divergence > 0.0) {
        flags.push(FLAG_ALL_ABOVE.to_string());
    }
    if features.tempo_assumed {
        flags.push(FLAG_TEMPO_ASSUMED.to_string());
    }
    if divergence.from_prediction {
        flags.push(FLAG_PREDICTED_GRADE.to_string());
    }
    if !monotone {
        flags.push(FLAG_NON_MONOTONE.to_string());
    }

    Ok(RubricReport {
        piece_id: piece_id.to_string(),
        k: params.k,
        rows,
        s_agg: trace.s_agg,
        aggregated_score: rescale_aggregate(trace.s_agg, N_FEATURES),
        predicted_level,
        labeled_level: label,
        boundaries,
        boundaries_monotone: monotone,
        divergence_grade: divergence.grade,
        divergence_from_prediction: divergence.from_prediction,
        tempo_assumed: features.tempo_assumed,
        flags,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Json,
    Markdown,
    Html,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(Format::Json),
            "markdown" | "md" => Ok(Format::Markdown),
            "html" => Ok(Format::Html),
            other => Err(Error::parse("format", format!("unknown report format `{other}`"))),
        }
    }
}

pub fn render(report: &RubricReport, format: Format) -> Vec<u8> {
    match format {
        Format::Json => {
            let mut v = serde_json::to_vec_pretty(report).expect("report serialization is infallible");
            v.push(b'\n');
            v
        }
        Format::Markdown => render_markdown(report).into_bytes(),
        Format::Html => render_html(report).into_bytes(),
    }
}

pub fn parse_json_report(bytes: &[u8]) -> Result<RubricReport> {
    serde_json::from_slice(bytes).map_err(|e| Error::parse("report", e.to_string()))
}

fn level_text(level: Option<u32>) -> String {
    level.map_or_else(|| "unknown".to_string(), |l| l.to_string())
}

/// Text axis of width 49 covering 0..=12: `|` boundaries, `*` the score.
fn text_axis(report: &RubricReport) -> String {
    const WIDTH: usize = 49;
    let col = |v: f64| ((v.clamp(0.0, 12.0) / 12.0) * (WIDTH - 1) as f64).round() as usize;
    let mut axis = vec!['-'; WIDTH];
    for b in report.boundaries.iter().flatten() {
        axis[col(*b)] = '|';
    }
    axis[col(report.aggregated_score)] = '*';
    let line: String = axis.into_iter().collect();
    format!("0 {line} 12")
}

fn render_markdown(r: &RubricReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# Rubric: {}\n", r.piece_id);
    let _ = writeln!(s, "| Descriptor | Value | Score (0-1) | Grade divergence |");
    let _ = writeln!(s, "|---|---:|---:|---:|");
    for row in &r.rows {
        let _ = writeln!(
            s,
            "| {} | {:.4} | {:.3} | {:+.3} |",
            row.label, row.raw, row.normalized, row.divergence
        );
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "- Aggregated score: {:.3} / 12", r.aggregated_score);
    let _ = writeln!(s, "- Predicted level: {} of {}", r.predicted_level, r.k);
    let _ = writeln!(s, "- Labeled level: {}", level_text(r.labeled_level));
    let _ = writeln!(
        s,
        "- Divergence reference: grade {}{}",
        r.divergence_grade,
        if r.divergence_from_prediction { " (predicted)" } else { "" }
    );
    let bounds: Vec<String> = r
        .boundaries
        .iter()
        .enumerate()
        .map(|(i, b)| match b {
            Some(v) => format!("{}|{}: {:.3}", i + 1, i + 2, v),
            None => format!("{}|{}: unreachable", i + 1, i + 2),
        })
        .collect();
    let _ = writeln!(s, "- Boundaries: {}", bounds.join(", "));
    for f in &r.flags {
        let _ = writeln!(s, "- Note: {f}");
    }
    let _ = writeln!(s, "\n```text\n{}\n```", text_axis(r));
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn render_html(r: &RubricReport) -> String {
    const X0: f64 = 20.0;
    const X1: f64 = 500.0;
    let x = |v: f64| X0 + (v.clamp(0.0, 12.0) / 12.0) * (X1 - X0);
    let mut s = String::new();
    let _ = writeln!(s, "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>Rubric: {}</title>", escape(&r.piece_id));
    let _ = writeln!(
        s,
        "<style>body{{font-family:sans-serif}}table{{border-collapse:collapse}}td,th{{border:1px solid #999;padding:2px 8px}}td.num{{text-align:right}}.neg{{color:#b00}}.pos{{color:#070}}</style></head><body>"
    );
    let _ = writeln!(s, "<h1>Rubric: {}</h1>", escape(&r.piece_id));
    let _ = writeln!(s, "<table class=\"rubric\">\n<tr><th>Descriptor</th><th>Value</th><th>Score (0-1)</th><th>Grade divergence</th></tr>");
    for row in &r.rows {
        let class = if row.divergence < 0.0 { "neg" } else { "pos" };
        let _ = writeln!(
            s,
            "<tr class=\"descriptor\"><td>{}</td><td class=\"num\">{:.4}</td><td class=\"num\">{:.3}</td><td class=\"num {class}\">{:+.3}</td></tr>",
            escape(&row.label), row.raw, row.normalized, row.divergence
        );
    }
    let _ = writeln!(s, "</table>");
    let _ = writeln!(
        s,
        "<p>Aggregated score: <b>{:.3}</b> / 12. Predicted level: <b>{}</b> of {}. Labeled level: {}.</p>",
        r.aggregated_score,
        r.predicted_level,
        r.k,
        level_text(r.labeled_level)
    );
    let _ = writeln!(s, "<svg class=\"scale\" width=\"520\" height=\"60\" viewBox=\"0 0 520 60\" xmlns=\"http://www.w3.org/2000/svg\">");
    let _ = writeln!(s, "<line x1=\"{X0}\" y1=\"30\" x2=\"{X1}\" y2=\"30\" stroke=\"black\"/>");
    for v in 0..=12 {
        let _ = writeln!(
            s,
            "<line x1=\"{0:.1}\" y1=\"27\" x2=\"{0:.1}\" y2=\"33\" stroke=\"#666\"/><text x=\"{0:.1}\" y=\"48\" font-size=\"9\" text-anchor=\"middle\">{v}</text>",
            x(v as f64)
        );
    }
    for (i, b) in r.boundaries.iter().enumerate() {
        if let Some(b) = b {
            let _ = writeln!(
                s,
                "<line class=\"boundary\" x1=\"{0:.1}\" y1=\"15\" x2=\"{0:.1}\" y2=\"40\" stroke=\"#b00\"><title>grade {1}|{2} at {3:.3}</title></line>",
                x(*b),
                i + 1,
                i + 2,
                b
            );
        }
    }
    let _ = writeln!(
        s,
        "<circle class=\"score\" cx=\"{:.1}\" cy=\"30\" r=\"5\" fill=\"#06c\"/>",
        x(r.aggregated_score)
    );
    let _ = writeln!(s, "</svg>");
    if !r.flags.is_empty() {
        let _ = writeln!(s, "<ul class=\"flags\">");
        for f in &r.flags {
            let _ = writeln!(s, "<li>{}</li>", escape(f));
        }
        let _ = writeln!(s, "</ul>");
    }
    let _ = writeln!(s, "</body></html>");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::Sample;

    fn model() -> (ModelParams, GradeStatistics) {
        let mut p = ModelParams::zeros(3);
        p.w = vec![0.5; N_FEATURES];
        p.w_f = vec![1.0, 1.0];
        p.b_f = vec![-1.0, -3.0];
        let samples: Vec<Sample> = (1..=3)
            .map(|g| Sample { features: [g as f64 - 2.0; N_FEATURES], level: g })
            .collect();
        let stats = GradeStatistics::compute(&p, &samples).unwrap();
        (p, stats)
    }

    #[test]
    fn grade_mean_piece_has_zero_divergence() {
        let (p, stats) = model();
        let fv = FeatureVector::from_values([0.0; N_FEATURES]);
        let r = build_report_from_features(&p, "x", &fv, Some(2), &stats).unwrap();
        assert!(r.rows.iter().all(|row| row.divergence.abs() < 1e-12));
        assert_eq!(r.rows.len(), N_FEATURES);
        assert_eq!(r.aggregated_score, rescale_aggregate(r.s_agg, N_FEATURES));
        assert_eq!(r.boundaries, vec![Some(6.5), Some(7.5)]);
    }

    #[test]
    fn below_average_flag() {
        let (p, stats) = model();
        let fv = FeatureVector::from_values([-3.0; N_FEATURES]);
        let r = build_report_from_features(&p, "x", &fv, Some(3), &stats).unwrap();
        assert!(r.predicted_level < 3);
        assert!(r.flags.iter().any(|f| f == FLAG_ALL_BELOW));
    }

    #[test]
    fn saturated_piece_scores_twelve() {
        let (mut p, stats) = model();
        p.b = vec![40.0; N_FEATURES];
        let fv = FeatureVector::from_values([0.0; N_FEATURES]);
        let r = build_report_from_features(&p, "x", &fv, None, &stats).unwrap();
        assert!((r.aggregated_score - 12.0).abs() < 1e-9);
        assert!(r.divergence_from_prediction);
        assert_eq!(r.predicted_level, 3);
    }

    #[test]
    fn renderings() {
        let (p, stats) = model();
        let fv = FeatureVector::from_values([0.5; N_FEATURES]);
        let r = build_report_from_features(&p, "piece<1>", &fv, Some(2), &stats).unwrap();
        assert_eq!(parse_json_report(&render(&r, Format::Json)).unwrap(), r);

        let md = String::from_utf8(render(&r, Format::Markdown)).unwrap();
        let rows = md.lines().filter(|l| l.starts_with("| ") && !l.starts_with("| Descriptor")).count();
        assert_eq!(rows, N_FEATURES);

        let html = String::from_utf8(render(&r, Format::Html)).unwrap();
        assert_eq!(html.matches("class=\"boundary\"").count(), (r.k - 1) as usize);
        assert_eq!(html.matches("class=\"descriptor\"").count(), N_FEATURES);
        assert!(html.contains(">12</text>"));
        assert!(html.contains("piece&lt;1&gt;"));
        assert!("pdf".parse::<Format>().is_err());
    }
}
