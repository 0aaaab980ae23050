//! Minimal SVG charts: training curves, activation histograms and
//! proportion sweeps. Output is deterministic for identical input.

use std::fmt::Write;

use crate::harness::{CurvePoint, SweepSummary};
use crate::{Error, Result};

const PANEL_W: f64 = 220.0;
const PANEL_H: f64 = 160.0;
const MARGIN: f64 = 40.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn header(w: f64, h: f64, title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\" font-size=\"11\">\n\
         <rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"18\" text-anchor=\"middle\" font-size=\"13\">{}</text>\n",
        w / 2.0,
        escape(title)
    )
}

/// One panel per segment, eval value against environment steps, with a
/// dashed divider after every `tasks_per_cycle` panels.
pub fn curves_svg(curves: &[CurvePoint], segments: usize, tasks_per_cycle: usize, title: &str) -> Result<String> {
    if segments == 0 {
        return Err(Error::InvalidInput("curves plot needs at least one segment".into()));
    }
    let y_max = curves.iter().map(|p| p.eval_value).fold(1.0f64, f64::max);
    let y_min = curves.iter().map(|p| p.eval_value).fold(0.0f64, f64::min);
    let width = MARGIN * 2.0 + PANEL_W * segments as f64;
    let height = PANEL_H + MARGIN * 2.0 + 10.0;
    let mut s = header(width, height, title);
    let top = MARGIN;
    for seg in 1..=segments {
        let x0 = MARGIN + PANEL_W * (seg - 1) as f64;
        let pts: Vec<&CurvePoint> = curves.iter().filter(|p| p.segment == seg).collect();
        let x_max = pts.iter().map(|p| p.env_step).max().unwrap_or(1).max(1) as f64;
        let sx = |step: usize| x0 + 8.0 + (PANEL_W - 16.0) * step as f64 / x_max;
        let sy = |v: f64| top + PANEL_H - PANEL_H * (v - y_min) / (y_max - y_min);
        let _ = writeln!(s, "<g class=\"panel\" data-segment=\"{seg}\">");
        let _ = writeln!(
            s,
            "<rect x=\"{x0}\" y=\"{top}\" width=\"{PANEL_W}\" height=\"{PANEL_H}\" fill=\"none\" stroke=\"#bbb\"/>"
        );
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">segment {seg}</text>",
            x0 + PANEL_W / 2.0,
            top + PANEL_H + 16.0
        );
        if !pts.is_empty() {
            let path: Vec<String> = pts.iter().map(|p| format!("{:.2},{:.2}", sx(p.env_step), sy(p.eval_value))).collect();
            let _ = writeln!(
                s,
                "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"1.5\" points=\"{}\"/>",
                path.join(" ")
            );
        }
        let _ = writeln!(s, "</g>");
        if tasks_per_cycle > 0 && seg % tasks_per_cycle == 0 && seg < segments {
            let xd = x0 + PANEL_W;
            let _ = writeln!(
                s,
                "<line class=\"cycle-divider\" x1=\"{xd}\" y1=\"{}\" x2=\"{xd}\" y2=\"{}\" stroke=\"#d62728\" stroke-dasharray=\"6,4\"/>",
                top - 8.0,
                top + PANEL_H + 8.0
            );
        }
    }
    let _ = writeln!(
        s,
        "<text x=\"12\" y=\"{}\" transform=\"rotate(-90 12 {})\" text-anchor=\"middle\">evaluation</text>",
        top + PANEL_H / 2.0,
        top + PANEL_H / 2.0
    );
    s.push_str("</svg>\n");
    Ok(s)
}

/// Histogram counts for one neuron split by the GPM indicator `q > q̄`.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitHistogram {
    pub edges: Vec<f64>,
    pub above: Vec<usize>,
    pub below: Vec<usize>,
    pub above_mean: f64,
    pub below_mean: f64,
}

pub fn split_histogram(activations: &[f64], gpm: &[f64], bins: usize) -> Result<SplitHistogram> {
    if activations.len() != gpm.len() || activations.is_empty() {
        return Err(Error::shape("histogram input", gpm.len(), activations.len()));
    }
    if bins == 0 {
        return Err(Error::InvalidInput("histogram needs at least one bin".into()));
    }
    let q_bar = gpm.iter().sum::<f64>() / gpm.len() as f64;
    let lo = activations.iter().copied().fold(f64::INFINITY, f64::min);
    let mut hi = activations.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        hi = lo + 1.0;
    }
    let width = (hi - lo) / bins as f64;
    let edges = (0..=bins).map(|i| lo + width * i as f64).collect();
    let (mut above, mut below) = (vec![0; bins], vec![0; bins]);
    let (mut sa, mut na, mut sb, mut nb) = (0.0, 0usize, 0.0, 0usize);
    for (a, q) in activations.iter().zip(gpm) {
        let b = (((a - lo) / width) as usize).min(bins - 1);
        if *q > q_bar {
            above[b] += 1;
            sa += a;
            na += 1;
        } else {
            below[b] += 1;
            sb += a;
            nb += 1;
        }
    }
    let mean = |s: f64, n: usize| if n == 0 { f64::NAN } else { s / n as f64 };
    Ok(SplitHistogram {
        edges,
        above,
        below,
        above_mean: mean(sa, na),
        below_mean: mean(sb, nb),
    })
}

/// Two overlaid bar series: steps of above-average GPM episodes and the rest.
pub fn histogram_svg(h: &SplitHistogram, title: &str) -> String {
    let (w, ht) = (480.0, 300.0);
    let mut s = header(w, ht, title);
    let plot_w = w - 2.0 * MARGIN;
    let plot_h = ht - 2.0 * MARGIN - 20.0;
    let max_count = h.above.iter().chain(&h.below).copied().max().unwrap_or(1).max(1) as f64;
    let bins = h.above.len();
    let bw = plot_w / bins as f64;
    for (class, counts, colour) in [("above", &h.above, "#2ca02c"), ("below", &h.below, "#d62728")] {
        let _ = writeln!(s, "<g class=\"series\" data-series=\"{class}\" fill=\"{colour}\" fill-opacity=\"0.5\">");
        for (i, c) in counts.iter().enumerate() {
            let bh = plot_h * *c as f64 / max_count;
            let _ = writeln!(
                s,
                "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\"/>",
                MARGIN + bw * i as f64,
                MARGIN + plot_h - bh,
                bw,
                bh
            );
        }
        let _ = writeln!(s, "</g>");
    }
    let _ = writeln!(
        s,
        "<text x=\"{MARGIN}\" y=\"{}\">{:.3}</text><text x=\"{}\" y=\"{}\" text-anchor=\"end\">{:.3}</text>",
        MARGIN + plot_h + 14.0,
        h.edges[0],
        MARGIN + plot_w,
        MARGIN + plot_h + 14.0,
        h.edges[bins]
    );
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"{}\" fill=\"#2ca02c\">GPM above mean (n={})</text>\n<text x=\"{}\" y=\"{}\" fill=\"#d62728\">GPM at or below mean (n={})</text>",
        MARGIN,
        ht - 12.0,
        h.above.iter().sum::<usize>(),
        w / 2.0,
        ht - 12.0,
        h.below.iter().sum::<usize>()
    );
    s.push_str("</svg>\n");
    s
}

/// Mean ASR against proportion with ±1 standard deviation bars.
pub fn sweep_svg(rows: &[SweepSummary], title: &str) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::InvalidInput("sweep plot needs at least one row".into()));
    }
    let (w, h) = (480.0, 320.0);
    let mut s = header(w, h, title);
    let plot_w = w - 2.0 * MARGIN;
    let plot_h = h - 2.0 * MARGIN - 10.0;
    let mut sorted = rows.to_vec();
    sorted.sort_by(|a, b| a.proportion.total_cmp(&b.proportion));
    let sx = |p: f64| MARGIN + plot_w * p;
    let sy = |v: f64| MARGIN + plot_h - plot_h * v.clamp(0.0, 1.0);
    let _ = writeln!(
        s,
        "<rect x=\"{MARGIN}\" y=\"{MARGIN}\" width=\"{plot_w}\" height=\"{plot_h}\" fill=\"none\" stroke=\"#bbb\"/>"
    );
    let pts: Vec<String> = sorted.iter().map(|r| format!("{:.2},{:.2}", sx(r.proportion), sy(r.mean_asr))).collect();
    let _ = writeln!(
        s,
        "<polyline class=\"mean\" fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"1.5\" points=\"{}\"/>",
        pts.join(" ")
    );
    for r in &sorted {
        let x = sx(r.proportion);
        let sd = if r.std_asr.is_finite() { r.std_asr } else { 0.0 };
        let _ = writeln!(
            s,
            "<g class=\"errorbar\"><line x1=\"{x:.2}\" y1=\"{:.2}\" x2=\"{x:.2}\" y2=\"{:.2}\" stroke=\"#333\"/><circle cx=\"{x:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"#1f77b4\"/></g>",
            sy(r.mean_asr - sd),
            sy(r.mean_asr + sd),
            sy(r.mean_asr)
        );
        let _ = writeln!(
            s,
            "<text x=\"{x:.2}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
            MARGIN + plot_h + 14.0,
            r.proportion
        );
    }
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">proportion</text>", w / 2.0, h - 8.0);
    s.push_str("</svg>\n");
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(svg: &str) -> roxmltree::Document<'_> {
        roxmltree::Document::parse(svg).expect("well-formed SVG")
    }

    #[test]
    fn curves_have_one_panel_per_segment() {
        let curves: Vec<CurvePoint> = (1..=4)
            .flat_map(|seg| {
                (0..5).map(move |k| CurvePoint {
                    segment: seg,
                    env_step: k * 2000,
                    eval_value: k as f64 / 4.0,
                })
            })
            .collect();
        let svg = curves_svg(&curves, 4, 2, "a & b <run>").unwrap();
        let doc = parse(&svg);
        let panels = doc
            .descendants()
            .filter(|n| n.attribute("class") == Some("panel"))
            .count();
        assert_eq!(panels, 4);
        let dividers = doc
            .descendants()
            .filter(|n| n.attribute("class") == Some("cycle-divider"))
            .count();
        assert_eq!(dividers, 1);
    }

    #[test]
    fn histogram_separates_planted_modes() {
        let mut acts = Vec::new();
        let mut gpm = Vec::new();
        for i in 0..200 {
            let success = i % 2 == 0;
            acts.push(if success { 2.0 + (i % 7) as f64 * 0.05 } else { 0.1 + (i % 5) as f64 * 0.05 });
            gpm.push(if success { 1.0 } else { 0.0 });
        }
        let h = split_histogram(&acts, &gpm, 20).unwrap();
        assert!(h.above_mean > h.below_mean + 1.0);
        assert_eq!(h.above.iter().sum::<usize>(), 100);
        let svg = histogram_svg(&h, "neuron");
        let doc = parse(&svg);
        let series = doc
            .descendants()
            .filter(|n| n.attribute("class") == Some("series"))
            .count();
        assert_eq!(series, 2);
    }

    #[test]
    fn sweep_plot_is_well_formed() {
        let rows = vec![
            SweepSummary {
                proportion: 0.05,
                mean_asr: 0.6,
                std_asr: 0.1,
                runs: 3,
            },
            SweepSummary {
                proportion: 0.2,
                mean_asr: 0.8,
                std_asr: 0.05,
                runs: 3,
            },
        ];
        let svg = sweep_svg(&rows, "sweep").unwrap();
        let doc = parse(&svg);
        assert_eq!(
            doc.descendants().filter(|n| n.attribute("class") == Some("errorbar")).count(),
            2
        );
        assert_eq!(svg, sweep_svg(&rows, "sweep").unwrap());
    }
}
