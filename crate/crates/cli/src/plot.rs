//! Plain SVG charts. Plotted values are also written into `data-*` attributes so a chart can be
//! read back without rasterizing it.

use std::fmt::Write as _;

use vidshield::forensics::ClusterSummary;

const W: f64 = 480.0;
const H: f64 = 320.0;
const PAD: f64 = 40.0;
const PALETTE: [&str; 8] = [
    "#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#666666",
];

fn esc(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn open(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        W / 2.0,
        esc(title)
    );
    s
}

fn axes(s: &mut String) {
    let _ = writeln!(
        s,
        r#"<path d="M{PAD} {PAD} V{} H{}" stroke="black" fill="none"/>"#,
        H - PAD,
        W - PAD
    );
}

/// Vertical bars on a `[0, 1]` axis.
pub fn bar_chart(title: &str, bars: &[(String, f64)]) -> String {
    let mut s = open(title);
    axes(&mut s);
    let n = bars.len().max(1) as f64;
    let slot = (W - 2.0 * PAD) / n;
    for (i, (label, v)) in bars.iter().enumerate() {
        let h = v.clamp(0.0, 1.0) * (H - 2.0 * PAD);
        let x = PAD + i as f64 * slot + slot * 0.15;
        let _ = writeln!(
            s,
            r#"<rect class="bar" data-label="{}" data-value="{v}" x="{x:.3}" y="{:.3}" width="{:.3}" height="{h:.3}" fill="{}"/>"#,
            esc(label),
            H - PAD - h,
            slot * 0.7,
            PALETTE[i % PALETTE.len()]
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.3}" y="{}" text-anchor="middle" font-size="9">{}</text>"#,
            x + slot * 0.35,
            H - PAD + 14.0,
            esc(label)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// One polyline per series, x = index, y scaled to the joint range.
pub fn line_chart(title: &str, series: &[(String, Vec<f64>)]) -> String {
    let mut s = open(title);
    axes(&mut s);
    let all: Vec<f64> = series.iter().flat_map(|x| x.1.iter().copied()).collect();
    let lo = all.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = all.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    for (k, (name, ys)) in series.iter().enumerate() {
        let dx = (W - 2.0 * PAD) / (ys.len().max(2) - 1) as f64;
        let pts: Vec<String> = ys
            .iter()
            .enumerate()
            .map(|(i, y)| {
                format!(
                    "{:.3},{:.3}",
                    PAD + i as f64 * dx,
                    H - PAD - (y - lo) / span * (H - 2.0 * PAD)
                )
            })
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline class="series" data-label="{}" points="{}" stroke="{}" fill="none"/>"#,
            esc(name),
            pts.join(" "),
            PALETTE[k % PALETTE.len()]
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Min-max normalized grayscale heatmap of an `h × w` grid.
pub fn heatmap(title: &str, values: &[f64], h: usize, w: usize) -> String {
    let mut s = open(title);
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let cell = ((W - 2.0 * PAD) / w as f64).min((H - 2.0 * PAD) / h as f64);
    for y in 0..h {
        for x in 0..w {
            let v = values[y * w + x];
            let g = ((v - lo) / span * 255.0).round() as u8;
            let _ = writeln!(
                s,
                r#"<rect x="{:.3}" y="{:.3}" width="{cell:.3}" height="{cell:.3}" fill="rgb({g},{g},{g})"/>"#,
                PAD + x as f64 * cell,
                PAD + y as f64 * cell
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

/// PCA scatter; the `anchor` cluster is drawn with a ring at its centroid and tagged
/// `data-anchor="true"`.
pub fn scatter(title: &str, clusters: &[ClusterSummary], anchor: &str) -> String {
    let mut s = open(title);
    axes(&mut s);
    let pts = clusters.iter().flat_map(|c| c.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
    );
    for p in pts {
        x0 = x0.min(p[0]);
        x1 = x1.max(p[0]);
        y0 = y0.min(p[1]);
        y1 = y1.max(p[1]);
    }
    let sx = if x1 > x0 { x1 - x0 } else { 1.0 };
    let sy = if y1 > y0 { y1 - y0 } else { 1.0 };
    let map = |p: [f64; 2]| {
        (
            PAD + (p[0] - x0) / sx * (W - 2.0 * PAD),
            H - PAD - (p[1] - y0) / sy * (H - 2.0 * PAD),
        )
    };
    for (k, c) in clusters.iter().enumerate() {
        let is_anchor = c.label == anchor;
        let color = PALETTE[k % PALETTE.len()];
        let _ = writeln!(
            s,
            r#"<g class="cluster" data-label="{}" data-anchor="{is_anchor}" data-mean-radius="{}">"#,
            esc(&c.label),
            c.mean_radius
        );
        for &p in &c.points {
            let (x, y) = map(p);
            let _ = writeln!(
                s,
                r#"<circle cx="{x:.3}" cy="{y:.3}" r="2" fill="{color}"/>"#
            );
        }
        if is_anchor {
            let (x, y) = map(c.centroid);
            let _ = writeln!(
                s,
                r#"<circle class="anchor" cx="{x:.3}" cy="{y:.3}" r="10" stroke="black" fill="none"/>"#
            );
        }
        s.push_str("</g>\n");
    }
    s.push_str("</svg>\n");
    s
}

/// `(label, value)` pairs of every `class="bar"` element.
pub fn parse_bars(svg: &str) -> Vec<(String, f64)> {
    let attr = |line: &str, key: &str| -> Option<String> {
        let start = line.find(&format!("{key}=\""))? + key.len() + 2;
        let end = line[start..].find('"')? + start;
        Some(line[start..end].to_string())
    };
    svg.lines()
        .filter(|l| l.contains(r#"class="bar""#))
        .filter_map(|l| Some((attr(l, "data-label")?, attr(l, "data-value")?.parse().ok()?)))
        .collect()
}
