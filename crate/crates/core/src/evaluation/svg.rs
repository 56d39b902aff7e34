//! Minimal static SVG plots.

use std::fmt::Write as _;

use super::{AgreementStats, ConfusionMatrix4};
use crate::label::ClassLabel;

const W: f64 = 480.0;
const H: f64 = 400.0;
const MARGIN: f64 = 60.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn header(title: &str, w: f64, h: f64) -> String {
    format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\" font-size=\"12\">\n<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n",
        w / 2.0,
        escape(title)
    )
}

/// Linear map from a data interval onto a pixel interval.
#[derive(Clone, Copy)]
struct Axis {
    lo: f64,
    hi: f64,
    p0: f64,
    p1: f64,
}

impl Axis {
    fn new(values: impl Iterator<Item = f64>, p0: f64, p1: f64) -> Self {
        let (mut lo, mut hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        if !lo.is_finite() || !hi.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if hi - lo < 1e-12 {
            lo -= 1.0;
            hi += 1.0;
        }
        let pad = 0.05 * (hi - lo);
        Axis {
            lo: lo - pad,
            hi: hi + pad,
            p0,
            p1,
        }
    }

    fn px(&self, v: f64) -> f64 {
        self.p0 + (v - self.lo) / (self.hi - self.lo) * (self.p1 - self.p0)
    }
}

fn axes(out: &mut String, x: &Axis, y: &Axis, xlabel: &str, ylabel: &str) {
    let (x0, x1, y0, y1) = (x.p0, x.p1, y.p0, y.p1);
    writeln!(out, "<line x1=\"{x0:.1}\" y1=\"{y0:.1}\" x2=\"{x1:.1}\" y2=\"{y0:.1}\" stroke=\"black\"/>").unwrap();
    writeln!(out, "<line x1=\"{x0:.1}\" y1=\"{y0:.1}\" x2=\"{x0:.1}\" y2=\"{y1:.1}\" stroke=\"black\"/>").unwrap();
    for i in 0..=4 {
        let fx = x.lo + (x.hi - x.lo) * i as f64 / 4.0;
        let fy = y.lo + (y.hi - y.lo) * i as f64 / 4.0;
        writeln!(out, "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{fx:.1}</text>", x.px(fx), y0 + 16.0).unwrap();
        writeln!(out, "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{fy:.1}</text>", x0 - 6.0, y.px(fy) + 4.0).unwrap();
    }
    writeln!(out, "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>", (x0 + x1) / 2.0, y0 + 36.0, escape(xlabel)).unwrap();
    writeln!(
        out,
        "<text x=\"16\" y=\"{:.1}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.1})\">{}</text>",
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(ylabel)
    )
    .unwrap();
}

/// Difference against mean with bias and limits of agreement.
pub fn bland_altman_svg(pairs: &[(f64, f64)], stats: Option<&AgreementStats>) -> String {
    let pts: Vec<(f64, f64)> = pairs.iter().map(|&(t, p)| ((t + p) / 2.0, t - p)).collect();
    let mut ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
    if let Some(s) = stats {
        ys.extend([s.loa_low, s.loa_high]);
    }
    let x = Axis::new(pts.iter().map(|p| p.0), MARGIN, W - 20.0);
    let y = Axis::new(ys.into_iter(), H - MARGIN, 40.0);
    let mut out = header("Bland-Altman: mean CBF", W, H);
    axes(&mut out, &x, &y, "Mean of true and synthetic (ml/100g/min)", "True - synthetic");
    for (mx, d) in &pts {
        writeln!(out, "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"3\" fill=\"steelblue\"/>", x.px(*mx), y.px(*d)).unwrap();
    }
    if let Some(s) = stats {
        for (v, dash, label) in [(s.bias, "", "bias"), (s.loa_low, "4 3", "-1.96 SD"), (s.loa_high, "4 3", "+1.96 SD")] {
            let py = y.px(v);
            writeln!(
                out,
                "<line x1=\"{:.1}\" y1=\"{py:.1}\" x2=\"{:.1}\" y2=\"{py:.1}\" stroke=\"firebrick\" stroke-dasharray=\"{dash}\"/>",
                x.p0, x.p1
            )
            .unwrap();
            writeln!(out, "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\" fill=\"firebrick\">{label} {v:.1}</text>", x.p1, py - 4.0).unwrap();
        }
    }
    out.push_str("</svg>\n");
    out
}

fn histogram(values: &[f64], axis: &Axis, bins: usize) -> Vec<usize> {
    let mut counts = vec![0; bins];
    for &v in values {
        let t = ((v - axis.lo) / (axis.hi - axis.lo) * bins as f64).floor();
        counts[(t.max(0.0) as usize).min(bins - 1)] += 1;
    }
    counts
}

/// Predicted against true mean CBF, with marginal histograms.
pub fn joint_plot_svg(pairs: &[(f64, f64)], r: Option<f64>) -> String {
    let (w, h) = (W + 80.0, H + 80.0);
    let all = pairs.iter().flat_map(|&(a, b)| [a, b]);
    let range = Axis::new(all, 0.0, 1.0);
    let x = Axis { p0: MARGIN, p1: W - 20.0, ..range };
    let y = Axis { p0: h - MARGIN, p1: 120.0, ..range };
    let mut out = header("True vs synthetic mean CBF", w, h);
    axes(&mut out, &x, &y, "True CBF (ml/100g/min)", "Synthetic CBF (ml/100g/min)");
    writeln!(
        out,
        "<line x1=\"{:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"gray\" stroke-dasharray=\"2 2\"/>",
        x.px(range.lo),
        y.px(range.lo),
        x.px(range.hi),
        y.px(range.hi)
    )
    .unwrap();
    for &(t, p) in pairs {
        writeln!(out, "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"3\" fill=\"steelblue\"/>", x.px(t), y.px(p)).unwrap();
    }
    let bins = 12;
    let tx: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let ty: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let (hx, hy) = (histogram(&tx, &x, bins), histogram(&ty, &y, bins));
    let peak = hx.iter().chain(&hy).copied().max().unwrap_or(1).max(1) as f64;
    let bw = (x.p1 - x.p0) / bins as f64;
    for (i, &c) in hx.iter().enumerate() {
        let bh = 60.0 * c as f64 / peak;
        writeln!(out, "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{:.1}\" height=\"{bh:.1}\" fill=\"lightsteelblue\"/>", x.p0 + i as f64 * bw, 105.0 - bh, bw - 1.0).unwrap();
    }
    let bh_y = (y.p0 - y.p1) / bins as f64;
    for (i, &c) in hy.iter().enumerate() {
        let len = 60.0 * c as f64 / peak;
        writeln!(out, "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{len:.1}\" height=\"{:.1}\" fill=\"lightsteelblue\"/>", x.p1 + 10.0, y.p0 - (i + 1) as f64 * bh_y, bh_y - 1.0).unwrap();
    }
    if let Some(r) = r {
        writeln!(out, "<text x=\"{:.1}\" y=\"{:.1}\">r = {r:.2}</text>", x.p0 + 10.0, y.p1 + 16.0).unwrap();
    }
    out.push_str("</svg>\n");
    out
}

/// Heat map of counts, true classes as rows.
pub fn confusion_svg(cm: &ConfusionMatrix4) -> String {
    let cell = 70.0;
    let (x0, y0) = (110.0, 70.0);
    let k = ClassLabel::COUNT as f64;
    let (w, h) = (x0 + k * cell + 30.0, y0 + k * cell + 60.0);
    let mut out = header("Confusion matrix", w, h);
    for (r, row) in cm.counts.iter().enumerate() {
        let row_total = row.iter().sum::<u64>().max(1) as f64;
        for (c, &v) in row.iter().enumerate() {
            let shade = 255.0 - 200.0 * v as f64 / row_total;
            let (cx, cy) = (x0 + c as f64 * cell, y0 + r as f64 * cell);
            writeln!(
                out,
                "<rect x=\"{cx:.1}\" y=\"{cy:.1}\" width=\"{cell}\" height=\"{cell}\" fill=\"rgb({0:.0},{0:.0},255)\" stroke=\"white\"/>",
                shade
            )
            .unwrap();
            writeln!(out, "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-size=\"16\">{v}</text>", cx + cell / 2.0, cy + cell / 2.0 + 6.0).unwrap();
        }
    }
    for (i, l) in ClassLabel::ALL.iter().enumerate() {
        let mid = i as f64 * cell + cell / 2.0;
        writeln!(out, "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>", x0 - 8.0, y0 + mid + 4.0, l.name()).unwrap();
        writeln!(out, "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>", x0 + mid, y0 + k * cell + 18.0, l.name()).unwrap();
    }
    writeln!(out, "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">Predicted</text>", x0 + k * cell / 2.0, y0 + k * cell + 42.0).unwrap();
    writeln!(out, "<text x=\"20\" y=\"{:.1}\" transform=\"rotate(-90 20 {0:.1})\" text-anchor=\"middle\">True</text>", y0 + k * cell / 2.0).unwrap();
    out.push_str("</svg>\n");
    out
}
