//! Minimal SVG output: scatter, heatmap and line plots.

use std::fmt::Write;

use crate::linalg::Point;

const W: f64 = 480.0;
const H: f64 = 400.0;
const MARGIN: f64 = 48.0;

const PALETTE: [&str; 8] = ["#1f77b4", "#2ca02c", "#9467bd", "#8c564b", "#e377c2", "#17becf", "#bcbd22", "#7f7f7f"];

fn header(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">{}</text>\n",
        W / 2.0,
        escape(title)
    )
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

struct Axis {
    lo: f64,
    hi: f64,
    from: f64,
    to: f64,
}

impl Axis {
    fn new(lo: f64, hi: f64, from: f64, to: f64) -> Self {
        let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, lo + 0.5) };
        Self { lo, hi, from, to }
    }

    fn map(&self, v: f64) -> f64 {
        self.from + (v - self.lo) / (self.hi - self.lo) * (self.to - self.from)
    }
}

fn frame(out: &mut String, xlabel: &str, ylabel: &str, xr: (f64, f64), yr: (f64, f64)) {
    let _ = writeln!(
        out,
        "<rect x=\"{MARGIN}\" y=\"{MARGIN}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>",
        W - 2.0 * MARGIN,
        H - 2.0 * MARGIN
    );
    let text = |out: &mut String, x: f64, y: f64, anchor: &str, s: &str| {
        let _ = writeln!(
            out,
            "<text x=\"{x:.1}\" y=\"{y:.1}\" text-anchor=\"{anchor}\" font-family=\"sans-serif\" font-size=\"11\">{}</text>",
            escape(s)
        );
    };
    text(out, W / 2.0, H - 12.0, "middle", xlabel);
    text(out, 14.0, H / 2.0, "start", ylabel);
    text(out, MARGIN, H - MARGIN + 14.0, "start", &format!("{:.3}", xr.0));
    text(out, W - MARGIN, H - MARGIN + 14.0, "end", &format!("{:.3}", xr.1));
    text(out, MARGIN - 4.0, H - MARGIN, "end", &format!("{:.3}", yr.0));
    text(out, MARGIN - 4.0, MARGIN + 8.0, "end", &format!("{:.3}", yr.1));
}

fn range(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    vals.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// 2-d scatter coloured by label; `highlight` indices are drawn in red on top.
pub fn scatter_svg(title: &str, points: &[Point], labels: &[Option<usize>], highlight: &[usize], modes: &[Point]) -> String {
    let mut out = header(title);
    let xr = range(points.iter().chain(modes).map(|p| p[0]));
    let yr = range(points.iter().chain(modes).map(|p| if p.len() > 1 { p[1] } else { 0.0 }));
    let ax = Axis::new(xr.0, xr.1, MARGIN, W - MARGIN);
    let ay = Axis::new(yr.0, yr.1, H - MARGIN, MARGIN);
    frame(&mut out, "x1", "x2", xr, yr);
    let y_of = |p: &Point| if p.len() > 1 { p[1] } else { 0.0 };
    for (p, l) in points.iter().zip(labels) {
        let colour = l.map_or("#000000", |l| PALETTE[l % PALETTE.len()]);
        let _ = writeln!(out, "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2\" fill=\"{colour}\"/>", ax.map(p[0]), ay.map(y_of(p)));
    }
    for &i in highlight {
        let p = &points[i];
        let _ = writeln!(out, "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"red\"/>", ax.map(p[0]), ay.map(y_of(p)));
    }
    for m in modes {
        let (x, y) = (ax.map(m[0]), ay.map(y_of(m)));
        let _ = writeln!(
            out,
            "<path d=\"M{:.2} {:.2}h10M{:.2} {:.2}v10\" stroke=\"black\" stroke-width=\"2\"/>",
            x - 5.0,
            y,
            x,
            y - 5.0
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Heatmap of `values[row][col]`, rows drawn bottom to top. Cells scale from
/// white (0) to dark blue (`max`).
pub fn heatmap_svg(
    title: &str,
    row_labels: &[String],
    col_labels: &[String],
    values: &[Vec<f64>],
    xlabel: &str,
    ylabel: &str,
) -> String {
    let mut out = header(title);
    let rows = values.len().max(1);
    let cols = values.iter().map(Vec::len).max().unwrap_or(1).max(1);
    let cw = (W - 2.0 * MARGIN) / cols as f64;
    let ch = (H - 2.0 * MARGIN) / rows as f64;
    let max = range(values.iter().flatten().copied()).1.max(1e-12);
    for (r, row) in values.iter().enumerate() {
        for (c, v) in row.iter().enumerate() {
            let fill = if v.is_finite() {
                let t = (v / max).clamp(0.0, 1.0);
                let ch = |lo: f64| (255.0 - t * (255.0 - lo)).round() as u8;
                format!("#{:02x}{:02x}{:02x}", ch(8.0), ch(48.0), ch(107.0))
            } else {
                "#cccccc".to_string()
            };
            let _ = writeln!(
                out,
                "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{cw:.2}\" height=\"{ch:.2}\" fill=\"{fill}\"><title>{v:.4}</title></rect>",
                MARGIN + c as f64 * cw,
                H - MARGIN - (r + 1) as f64 * ch
            );
        }
    }
    let label = |out: &mut String, x: f64, y: f64, anchor: &str, s: &str| {
        let _ = writeln!(
            out,
            "<text x=\"{x:.1}\" y=\"{y:.1}\" text-anchor=\"{anchor}\" font-family=\"sans-serif\" font-size=\"10\">{}</text>",
            escape(s)
        );
    };
    for (c, s) in col_labels.iter().enumerate() {
        label(&mut out, MARGIN + (c as f64 + 0.5) * cw, H - MARGIN + 14.0, "middle", s);
    }
    for (r, s) in row_labels.iter().enumerate() {
        label(&mut out, MARGIN - 4.0, H - MARGIN - (r as f64 + 0.5) * ch + 4.0, "end", s);
    }
    label(&mut out, W / 2.0, H - 12.0, "middle", xlabel);
    label(&mut out, 4.0, MARGIN - 8.0, "start", ylabel);
    out.push_str("</svg>\n");
    out
}

/// Line plot with one polyline per named series.
pub fn line_svg(title: &str, series: &[(String, Vec<(f64, f64)>)], xlabel: &str, ylabel: &str) -> String {
    let mut out = header(title);
    let all = || series.iter().flat_map(|(_, pts)| pts.iter());
    let xr = range(all().map(|p| p.0));
    let yr = range(all().map(|p| p.1).chain([0.0]));
    let (xr, yr) = if xr.0.is_finite() { (xr, yr) } else { ((0.0, 1.0), (0.0, 1.0)) };
    let ax = Axis::new(xr.0, xr.1, MARGIN, W - MARGIN);
    let ay = Axis::new(yr.0, yr.1, H - MARGIN, MARGIN);
    frame(&mut out, xlabel, ylabel, xr, yr);
    for (k, (name, pts)) in series.iter().enumerate() {
        let colour = PALETTE[k % PALETTE.len()];
        let path: Vec<String> =
            pts.iter().filter(|p| p.1.is_finite()).map(|&(x, y)| format!("{:.2},{:.2}", ax.map(x), ay.map(y))).collect();
        let _ = writeln!(out, "<polyline points=\"{}\" fill=\"none\" stroke=\"{colour}\" stroke-width=\"1.5\"/>", path.join(" "));
        let _ = writeln!(
            out,
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"10\" fill=\"{colour}\">{}</text>",
            W - MARGIN - 80.0,
            MARGIN + 14.0 + 12.0 * k as f64,
            escape(name)
        );
    }
    out.push_str("</svg>\n");
    out
}
