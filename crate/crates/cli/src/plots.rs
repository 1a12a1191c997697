//! Static SVG figures.

use std::fmt::Write;

use rubricnet::analysis::{ContributionProfile, Dendrogram};
use rubricnet::FEATURE_NAMES;

const PALETTE: [&str; 12] = [
    "#1f77b4", "#aec7e8", "#ff7f0e", "#ffbb78", "#2ca02c", "#98df8a", "#d62728", "#ff9896", "#9467bd", "#c5b0d5",
    "#8c564b", "#c49c94",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn open(width: f64, height: f64, title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        width / 2.0,
        escape(title)
    );
    s
}

/// Horizontal bars on a `[-1, 1]` axis, one row per entry.
pub fn bar_chart(entries: &[(String, f64)], title: &str) -> String {
    let (label_w, plot_w, row_h, top) = (170.0, 360.0, 22.0, 40.0);
    let width = label_w + plot_w + 60.0;
    let height = top + row_h * entries.len() as f64 + 40.0;
    let zero = label_w + plot_w / 2.0;
    let mut s = open(width, height, title);
    for (i, (name, v)) in entries.iter().enumerate() {
        let y = top + row_h * i as f64;
        let len = v.clamp(-1.0, 1.0) * plot_w / 2.0;
        let (x, w) = if len >= 0.0 { (zero, len) } else { (zero + len, -len) };
        let fill = if *v >= 0.0 { "#4c78a8" } else { "#e45756" };
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
            label_w - 6.0,
            y + 15.0,
            escape(name)
        );
        let _ = writeln!(
            s,
            r#"<rect x="{x:.2}" y="{:.2}" width="{w:.2}" height="{:.2}" fill="{fill}"/>"#,
            y + 3.0,
            row_h - 6.0
        );
        let _ = writeln!(s, r#"<text x="{:.2}" y="{}">{v:.3}</text>"#, label_w + plot_w + 6.0, y + 15.0);
    }
    let axis_y = top + row_h * entries.len() as f64;
    let _ = writeln!(s, r#"<line x1="{zero}" y1="{top}" x2="{zero}" y2="{axis_y}" stroke="black"/>"#);
    for t in [-1.0, -0.5, 0.0, 0.5, 1.0] {
        let x = zero + t * plot_w / 2.0;
        let _ = writeln!(s, r#"<text x="{x}" y="{}" text-anchor="middle">{t}</text>"#, axis_y + 16.0);
    }
    s.push_str("</svg>\n");
    s
}

/// Dendrogram with leaves along the bottom and merge height proportional to distance.
pub fn dendrogram(d: &Dendrogram) -> String {
    let n = d.leaves.len();
    let (left, bottom_pad, plot_h, spacing) = (50.0, 130.0, 260.0, 40.0);
    let width = left * 2.0 + spacing * n.max(1) as f64;
    let height = 40.0 + plot_h + bottom_pad;
    let base = 40.0 + plot_h;
    let max_d = d.merges.iter().map(|m| m.distance).fold(0.0f64, f64::max).max(1e-9);
    let y_of = |dist: f64| base - dist / max_d * plot_h;
    let mut s = open(width, height, "Descriptor clustering (1 - tau-c, average linkage)");

    let mut x = vec![0.0; n + d.merges.len()];
    let mut y = vec![base; n + d.merges.len()];
    for (pos, leaf) in d.leaf_order().into_iter().enumerate() {
        x[leaf] = left + spacing * (pos as f64 + 0.5);
        let _ = writeln!(
            s,
            r#"<text transform="translate({:.1},{:.1}) rotate(-60)" text-anchor="end">{}</text>"#,
            x[leaf] + 4.0,
            base + 10.0,
            escape(&d.leaves[leaf])
        );
    }
    for (step, m) in d.merges.iter().enumerate() {
        let id = n + step;
        let h = y_of(m.distance);
        x[id] = (x[m.a] + x[m.b]) / 2.0;
        y[id] = h;
        let _ = writeln!(
            s,
            r##"<path d="M{:.1},{:.1} V{h:.1} H{:.1} V{:.1}" fill="none" stroke="#333"/>"##,
            x[m.a], y[m.a], x[m.b], y[m.b]
        );
    }
    let _ = writeln!(s, r#"<line x1="{}" y1="40" x2="{}" y2="{base}" stroke="black"/>"#, left - 10.0, left - 10.0);
    for t in [0.0, 0.5, 1.0] {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.1}" text-anchor="end">{:.2}</text>"#,
            left - 14.0,
            y_of(t * max_d) + 4.0,
            t * max_d
        );
    }
    s.push_str("</svg>\n");
    s
}

/// One line per descriptor over the labeled grades.
pub fn contributions(profile: &ContributionProfile) -> String {
    let (left, top, plot_w, plot_h) = (60.0, 40.0, 460.0, 300.0);
    let width = left + plot_w + 200.0;
    let height = top + plot_h + 50.0;
    let (mut lo, mut hi) = (0.0f64, 0.0f64);
    for row in &profile.rows {
        for v in row {
            lo = lo.min(*v);
            hi = hi.max(*v);
        }
    }
    if hi - lo < 1e-9 {
        hi = lo + 1.0;
    }
    let g_lo = *profile.grades.first().unwrap_or(&1) as f64;
    let g_hi = (*profile.grades.last().unwrap_or(&1) as f64).max(g_lo + 1.0);
    let px = |g: u32| left + (g as f64 - g_lo) / (g_hi - g_lo) * plot_w;
    let py = |v: f64| top + (hi - v) / (hi - lo) * plot_h;
    let mut s = open(width, height, "Descriptor contribution relative to grade 1");
    let _ = writeln!(
        s,
        r##"<rect x="{left}" y="{top}" width="{plot_w}" height="{plot_h}" fill="none" stroke="#999"/>"##
    );
    let _ = writeln!(
        s,
        r##"<line x1="{left}" y1="{0:.1}" x2="{1}" y2="{0:.1}" stroke="#999" stroke-dasharray="4 3"/>"##,
        py(0.0),
        left + plot_w
    );
    for g in &profile.grades {
        let _ = writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle">{g}</text>"#, px(*g), top + plot_h + 18.0);
    }
    for v in [lo, 0.0, hi] {
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{v:.2}</text>"#, left - 6.0, py(v) + 4.0);
    }
    for (slot, name) in FEATURE_NAMES.iter().enumerate() {
        let points: Vec<String> = profile
            .grades
            .iter()
            .zip(&profile.rows)
            .map(|(g, row)| format!("{:.1},{:.1}", px(*g), py(row[slot])))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="2"/>"#,
            points.join(" "),
            PALETTE[slot]
        );
        let ly = top + 14.0 * slot as f64 + 8.0;
        let lx = left + plot_w + 16.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{}" stroke-width="3"/><text x="{}" y="{}">{}</text>"#,
            lx + 18.0,
            PALETTE[slot],
            lx + 24.0,
            ly + 4.0,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}
