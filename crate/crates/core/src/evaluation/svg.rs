//! Small self-contained SVG plots: scatter, masked heat map, line traces.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;

use super::LandscapeGrid;
use crate::error::Result;

const W: f64 = 480.0;
const H: f64 = 480.0;
const PAD: f64 = 40.0;

pub const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

#[derive(Clone, Copy, Debug)]
struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn fit(xs: impl Iterator<Item = (f64, f64)>) -> Self {
        let mut f = Frame {
            x0: f64::INFINITY,
            x1: f64::NEG_INFINITY,
            y0: f64::INFINITY,
            y1: f64::NEG_INFINITY,
        };
        for (x, y) in xs.filter(|(x, y)| x.is_finite() && y.is_finite()) {
            f.x0 = f.x0.min(x);
            f.x1 = f.x1.max(x);
            f.y0 = f.y0.min(y);
            f.y1 = f.y1.max(y);
        }
        if !f.x0.is_finite() {
            return Frame {
                x0: 0.0,
                x1: 1.0,
                y0: 0.0,
                y1: 1.0,
            };
        }
        let px = ((f.x1 - f.x0) * 0.05).max(1e-9);
        let py = ((f.y1 - f.y0) * 0.05).max(1e-9);
        Frame {
            x0: f.x0 - px,
            x1: f.x1 + px,
            y0: f.y0 - py,
            y1: f.y1 + py,
        }
    }

    fn px(&self, x: f64) -> f64 {
        PAD + (x - self.x0) / (self.x1 - self.x0) * (W - 2.0 * PAD)
    }

    fn py(&self, y: f64) -> f64 {
        H - PAD - (y - self.y0) / (self.y1 - self.y0) * (H - 2.0 * PAD)
    }
}

fn open(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" font-family="sans-serif" font-size="14" text-anchor="middle">{}</text>"#,
        W / 2.0,
        escape(title)
    );
    s
}

fn axes(s: &mut String, f: &Frame) {
    let _ = writeln!(
        s,
        r##"<rect x="{PAD}" y="{PAD}" width="{}" height="{}" fill="none" stroke="#444"/>"##,
        W - 2.0 * PAD,
        H - 2.0 * PAD
    );
    let label = |v: f64| format!("{v:.3}");
    let _ = writeln!(
        s,
        r#"<text x="{PAD}" y="{}" font-family="sans-serif" font-size="10">{}</text>"#,
        H - PAD + 14.0,
        label(f.x0)
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="10" text-anchor="end">{}</text>"#,
        W - PAD,
        H - PAD + 14.0,
        label(f.x1)
    );
    let _ = writeln!(
        s,
        r#"<text x="4" y="{}" font-family="sans-serif" font-size="10">{}</text>"#,
        H - PAD,
        label(f.y0)
    );
    let _ = writeln!(
        s,
        r#"<text x="4" y="{}" font-family="sans-serif" font-size="10">{}</text>"#,
        PAD + 8.0,
        label(f.y1)
    );
}

fn legend(s: &mut String, labels: &[(&str, &str)]) {
    for (i, (label, color)) in labels.iter().enumerate() {
        let y = PAD + 14.0 + 14.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{}" y="{}" width="10" height="10" fill="{color}"/><text x="{}" y="{}" font-family="sans-serif" font-size="11">{}</text>"#,
            W - PAD - 110.0,
            y - 9.0,
            W - PAD - 95.0,
            y,
            escape(label)
        );
    }
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Scatter of the first two columns of each point set.
pub fn scatter(title: &str, sets: &[(&str, &Array2<f64>)]) -> String {
    let frame = Frame::fit(
        sets.iter()
            .flat_map(|(_, p)| p.rows().into_iter().map(|r| (r[0], if r.len() > 1 { r[1] } else { 0.0 }))),
    );
    let mut s = open(title);
    axes(&mut s, &frame);
    let mut labels = Vec::new();
    for (i, (label, pts)) in sets.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        labels.push((*label, color));
        let _ = writeln!(s, r#"<g fill="{color}" fill-opacity="0.5">"#);
        for r in pts.rows() {
            let y = if r.len() > 1 { r[1] } else { 0.0 };
            if r[0].is_finite() && y.is_finite() {
                let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="1.5"/>"#, frame.px(r[0]), frame.py(y));
            }
        }
        s.push_str("</g>\n");
    }
    legend(&mut s, &labels);
    s.push_str("</svg>\n");
    s
}

fn viridis_like(t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let r = (68.0 + t * (253.0 - 68.0)) as u8;
    let g = (1.0 + t * (231.0 - 1.0)) as u8;
    let b = (84.0 + (1.0 - (2.0 * t - 1.0).abs()) * 80.0 - t * 50.0) as u8;
    format!("#{r:02x}{g:02x}{b:02x}")
}

/// Heat map of `J(·; y)`; masked cells are left blank. Marks `y` (cross)
/// and the solver's minimizer (dot).
pub fn landscape(title: &str, land: &LandscapeGrid) -> String {
    let g = land.grid;
    let frame = Frame {
        x0: g.lo,
        x1: g.hi,
        y0: g.lo,
        y1: g.hi,
    };
    let mut s = open(title);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (v, m) in land.j.iter().zip(land.mask.iter()) {
        if !m && v.is_finite() {
            lo = lo.min(*v);
            hi = hi.max(*v);
        }
    }
    let span = if hi > lo { hi - lo } else { 1.0 };
    let cell = g.spacing();
    let r = g.resolution;
    for i in 0..r {
        for k in 0..r {
            if land.mask[[i, k]] {
                continue;
            }
            let x = g.coord(k) - 0.5 * cell;
            let y = g.coord(i) + 0.5 * cell;
            let _ = writeln!(
                s,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
                frame.px(x),
                frame.py(y),
                frame.px(x + cell) - frame.px(x) + 0.3,
                frame.py(y - cell) - frame.py(y) + 0.3,
                viridis_like((land.j[[i, k]] - lo) / span)
            );
        }
    }
    axes(&mut s, &frame);
    let (yx, yy) = (frame.px(land.y[0]), frame.py(land.y[1]));
    let _ = writeln!(
        s,
        r##"<path d="M{} {} L{} {} M{} {} L{} {}" stroke="#d62728" stroke-width="2"/>"##,
        yx - 5.0,
        yy - 5.0,
        yx + 5.0,
        yy + 5.0,
        yx - 5.0,
        yy + 5.0,
        yx + 5.0,
        yy - 5.0
    );
    let _ = writeln!(
        s,
        r##"<circle cx="{:.2}" cy="{:.2}" r="4" fill="#ffffff" stroke="#000"/>"##,
        frame.px(land.x_breve[0]),
        frame.py(land.x_breve[1])
    );
    legend(&mut s, &[("y", "#d62728"), ("solver argmin", "#ffffff")]);
    s.push_str("</svg>\n");
    s
}

/// Line traces; with `log_y` non-positive values are dropped.
pub fn lines(title: &str, series: &[(&str, Vec<(f64, f64)>)], log_y: bool) -> String {
    let tr = |v: f64| if log_y { v.log10() } else { v };
    let keep = |p: &&(f64, f64)| !log_y || p.1 > 0.0;
    let frame = Frame::fit(series.iter().flat_map(|(_, pts)| pts.iter().filter(keep).map(|&(x, y)| (x, tr(y)))));
    let mut s = open(title);
    axes(&mut s, &frame);
    let mut labels = Vec::new();
    for (i, (label, pts)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        labels.push((*label, color));
        let path: Vec<String> = pts
            .iter()
            .filter(keep)
            .filter(|p| p.0.is_finite() && tr(p.1).is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", frame.px(x), frame.py(tr(y))))
            .collect();
        if !path.is_empty() {
            let _ = writeln!(
                s,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                path.join(" ")
            );
        }
    }
    legend(&mut s, &labels);
    s.push_str("</svg>\n");
    s
}

pub fn write(path: &Path, svg: &str) -> Result<()> {
    std::fs::write(path, svg)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn scatter_is_well_formed() {
        let a = array![[0.0, 1.0], [2.0, 3.0]];
        let svg = scatter("a <b>", &[("pts", &a)]);
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<circle").count(), 2);
        assert!(svg.contains("a &lt;b&gt;"));
    }

    #[test]
    fn log_lines_skip_non_positive() {
        let svg = lines("t", &[("s", vec![(0.0, 1.0), (1.0, 0.0), (2.0, 0.1)])], true);
        let pts = svg.split("points=\"").nth(1).unwrap().split('"').next().unwrap();
        assert_eq!(pts.split(' ').count(), 2);
    }
}
