//! Trend and fit charts, each written as a CSV series and an SVG line chart
//! drawn from the same rounded values.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use opf_core::report::{FitSeries, PlotData, TrendSeries};

use crate::error::Result;
use crate::output::{sig6, write_text};

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 360.0;
const MARGIN: f64 = 48.0;
const COLORS: [&str; 2] = ["#1f77b4", "#d62728"];

#[derive(Debug, Clone, PartialEq)]
pub struct Line {
    pub name: String,
    pub values: Vec<f64>,
    pub dashed: bool,
}

/// One chart: a date axis, lines over it and vertical markers at dates.
#[derive(Debug, Clone, PartialEq)]
pub struct Chart {
    pub title: String,
    pub dates: Vec<String>,
    pub lines: Vec<Line>,
    /// `(label, index into dates)`.
    pub markers: Vec<(String, usize)>,
}

fn rounded(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| sig6(*x)).collect()
}

fn position(dates: &[String], date: &str) -> Option<usize> {
    dates.iter().position(|d| d.as_str() == date)
}

pub fn trend_chart(t: &TrendSeries) -> Chart {
    let dates: Vec<String> = t.dates.iter().map(|d| d.to_string()).collect();
    let mut markers = Vec::new();
    for (label, d) in [("window start", t.window_start), ("window end", t.window_end)] {
        if let Some(i) = position(&dates, &d.to_string()) {
            markers.push((label.to_string(), i));
        }
    }
    Chart {
        title: format!("Cohort {}: average outcome, treated vs control", t.cohort_index),
        lines: vec![
            Line { name: "treated_mean".into(), values: rounded(&t.treated_mean), dashed: false },
            Line { name: "control_mean".into(), values: rounded(&t.control_mean), dashed: false },
        ],
        markers,
        dates,
    }
}

pub fn fit_chart(f: &FitSeries) -> Chart {
    let dates: Vec<String> = f.dates.iter().map(|d| d.to_string()).collect();
    let markers = position(&dates, &f.treatment_date.to_string())
        .map(|i| vec![("treatment".to_string(), i)])
        .unwrap_or_default();
    Chart {
        title: "Synthetic control fit: treated average".into(),
        lines: vec![
            Line { name: "actual".into(), values: rounded(&f.actual), dashed: false },
            Line { name: "synthetic".into(), values: rounded(&f.synthetic), dashed: true },
        ],
        markers,
        dates,
    }
}

impl Chart {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("date");
        for l in &self.lines {
            s.push(',');
            s.push_str(&l.name);
        }
        s.push('\n');
        for (i, d) in self.dates.iter().enumerate() {
            s.push_str(d);
            for l in &self.lines {
                let _ = write!(s, ",{}", l.values[i]);
            }
            s.push('\n');
        }
        s
    }

    pub fn to_svg(&self) -> String {
        let n = self.dates.len();
        let finite = self.lines.iter().flat_map(|l| l.values.iter().copied()).filter(|v| v.is_finite());
        let (mut lo, mut hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if hi - lo < 1e-12 {
            (lo, hi) = (lo - 1.0, hi + 1.0);
        }
        let x = |i: usize| MARGIN + (WIDTH - 2.0 * MARGIN) * if n > 1 { i as f64 / (n - 1) as f64 } else { 0.5 };
        let y = |v: f64| HEIGHT - MARGIN - (HEIGHT - 2.0 * MARGIN) * (v - lo) / (hi - lo);
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
        );
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(s, r#"<text x="{}" y="20" font-size="14" text-anchor="middle">{}</text>"#, WIDTH / 2.0, escape(&self.title));
        let (x0, x1, yb, yt) = (MARGIN, WIDTH - MARGIN, HEIGHT - MARGIN, MARGIN);
        let _ = writeln!(s, r#"<path d="M{x0} {yt} L{x0} {yb} L{x1} {yb}" stroke="black" fill="none"/>"#);
        let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="10" text-anchor="end">{lo}</text>"#, x0 - 4.0, yb);
        let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="10" text-anchor="end">{hi}</text>"#, x0 - 4.0, yt + 4.0);
        if let (Some(first), Some(last)) = (self.dates.first(), self.dates.last()) {
            let _ = writeln!(s, r#"<text x="{x0}" y="{}" font-size="10">{first}</text>"#, yb + 14.0);
            let _ = writeln!(s, r#"<text x="{x1}" y="{}" font-size="10" text-anchor="end">{last}</text>"#, yb + 14.0);
        }
        for (label, i) in &self.markers {
            let xm = x(*i);
            let _ = writeln!(s, r#"<line x1="{xm}" y1="{yt}" x2="{xm}" y2="{yb}" stroke="gray" stroke-dasharray="2,3"/>"#);
            let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="10">{}</text>"#, xm + 3.0, yt + 10.0, escape(label));
        }
        for (k, l) in self.lines.iter().enumerate() {
            let color = COLORS[k % COLORS.len()];
            let pts: Vec<String> = l
                .values
                .iter()
                .enumerate()
                .filter(|(_, v)| v.is_finite())
                .map(|(i, v)| format!("{:.2},{:.2}", x(i), y(*v)))
                .collect();
            let dash = if l.dashed { r#" stroke-dasharray="6,4""# } else { "" };
            let _ = writeln!(s, r#"<polyline points="{}" stroke="{color}" stroke-width="1.5" fill="none"{dash}/>"#, pts.join(" "));
            let ly = yt + 14.0 * (k as f64 + 1.0);
            let _ = writeln!(s, r#"<text x="{}" y="{ly}" font-size="11" fill="{color}">{}</text>"#, x1 - 110.0, escape(&l.name));
        }
        s.push_str("</svg>\n");
        s
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn write_chart(chart: &Chart, stem: &str, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let csv = out_dir.join(format!("{stem}.csv"));
    let svg = out_dir.join(format!("{stem}.svg"));
    write_text(&csv, &chart.to_csv())?;
    write_text(&svg, &chart.to_svg())?;
    Ok(vec![csv, svg])
}

/// `trend_<i>.{csv,svg}` per cohort and `gsc_fit.{csv,svg}` when synthetic
/// control ran.
pub fn emit_plots(plots: &PlotData, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    for t in &plots.trends {
        paths.extend(write_chart(&trend_chart(t), &format!("trend_{}", t.cohort_index), out_dir)?);
    }
    if let Some(f) = &plots.gsc_fit {
        paths.extend(write_chart(&fit_chart(f), "gsc_fit", out_dir)?);
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chart() -> Chart {
        Chart {
            title: "t".into(),
            dates: vec!["2020-01-01".into(), "2020-02-01".into(), "2020-03-01".into()],
            lines: vec![
                Line { name: "a".into(), values: vec![1.0, 2.5, 3.0], dashed: false },
                Line { name: "b".into(), values: vec![0.5, 0.5, 4.0], dashed: true },
            ],
            markers: vec![("m".into(), 1)],
        }
    }

    #[test]
    fn csv_layout() {
        assert_eq!(chart().to_csv(), "date,a,b\n2020-01-01,1,0.5\n2020-02-01,2.5,0.5\n2020-03-01,3,4\n");
    }

    #[test]
    fn svg_draws_the_csv_values() {
        let c = chart();
        let svg = c.to_svg();
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert_eq!(svg.matches("stroke-dasharray=\"6,4\"").count(), 1);
        // the top of the plot area is the largest value, the bottom the smallest
        assert!(svg.contains(&format!("{:.2},{:.2}", WIDTH - MARGIN, MARGIN)));
        assert!(svg.contains(&format!("{:.2},{:.2}", MARGIN, HEIGHT - MARGIN)));
    }
}
