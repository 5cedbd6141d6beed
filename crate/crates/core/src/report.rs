//! Output formatting: fixed-precision CSV fields, log-log SVG plots,
//! and content hashing for run manifests.

use sha2::{Digest, Sha256};

/// 17-significant-digit scientific formatting; round-trips f64 exactly
/// and keeps regression CSVs byte-stable.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// A fitted or theoretical straight line in log10-log10 coordinates.
#[derive(Debug, Clone, Copy)]
pub struct LogLogLine {
    pub slope: f64,
    /// Value of log10(y) at log10(x) = anchor_log_x.
    pub anchor_log_x: f64,
    pub anchor_log_y: f64,
    pub label: &'static str,
}

/// Scatter of positive points with an optional fit and guide line,
/// rendered as a standalone SVG document.
pub fn loglog_svg(
    title: &str,
    xlabel: &str,
    ylabel: &str,
    points: &[(f64, f64)],
    lines: &[LogLogLine],
) -> String {
    const W: f64 = 640.0;
    const H: f64 = 480.0;
    const ML: f64 = 70.0;
    const MR: f64 = 20.0;
    const MT: f64 = 40.0;
    const MB: f64 = 55.0;

    let logs: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0)
        .map(|(x, y)| (x.log10(), y.log10()))
        .collect();
    let (mut x0, mut x1, mut y0, mut y1) = (-1.0, 1.0, -1.0, 1.0);
    if !logs.is_empty() {
        x0 = logs.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
        x1 = logs.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
        y0 = logs.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        y1 = logs.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    }
    let pad = |lo: &mut f64, hi: &mut f64| {
        let span = (*hi - *lo).max(1e-6);
        *lo -= 0.08 * span;
        *hi += 0.08 * span;
    };
    pad(&mut x0, &mut x1);
    pad(&mut y0, &mut y1);

    let px = |lx: f64| ML + (lx - x0) / (x1 - x0) * (W - ML - MR);
    let py = |ly: f64| H - MB - (ly - y0) / (y1 - y0) * (H - MT - MB);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" \
         viewBox=\"0 0 {W} {H}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-size=\"15\" \
         font-family=\"sans-serif\">{}</text>\n",
        W / 2.0,
        title
    ));
    // axes box
    svg.push_str(&format!(
        "<rect x=\"{ML}\" y=\"{MT}\" width=\"{}\" height=\"{}\" fill=\"none\" \
         stroke=\"black\"/>\n",
        W - ML - MR,
        H - MT - MB
    ));
    // integer-decade ticks
    let mut tick = x0.ceil();
    while tick <= x1 {
        let x = px(tick);
        svg.push_str(&format!(
            "<line x1=\"{x:.1}\" y1=\"{}\" x2=\"{x:.1}\" y2=\"{}\" stroke=\"#ccc\"/>\n",
            MT,
            H - MB
        ));
        svg.push_str(&format!(
            "<text x=\"{x:.1}\" y=\"{}\" text-anchor=\"middle\" font-size=\"11\" \
             font-family=\"sans-serif\">1e{tick:.0}</text>\n",
            H - MB + 16.0
        ));
        tick += 1.0;
    }
    let mut tick = y0.ceil();
    while tick <= y1 {
        let y = py(tick);
        svg.push_str(&format!(
            "<line x1=\"{ML}\" y1=\"{y:.1}\" x2=\"{}\" y2=\"{y:.1}\" stroke=\"#ccc\"/>\n",
            W - MR
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{y:.1}\" text-anchor=\"end\" font-size=\"11\" \
             font-family=\"sans-serif\">1e{tick:.0}</text>\n",
            ML - 6.0
        ));
        tick += 1.0;
    }
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"13\" \
         font-family=\"sans-serif\">{}</text>\n",
        (ML + W - MR) / 2.0,
        H - 12.0,
        xlabel
    ));
    svg.push_str(&format!(
        "<text x=\"16\" y=\"{}\" text-anchor=\"middle\" font-size=\"13\" \
         font-family=\"sans-serif\" transform=\"rotate(-90 16 {})\">{}</text>\n",
        (MT + H - MB) / 2.0,
        (MT + H - MB) / 2.0,
        ylabel
    ));

    let colors = ["#d62728", "#1f77b4", "#2ca02c"];
    for (i, line) in lines.iter().enumerate() {
        let color = colors[i % colors.len()];
        let ya = line.anchor_log_y + line.slope * (x0 - line.anchor_log_x);
        let yb = line.anchor_log_y + line.slope * (x1 - line.anchor_log_x);
        svg.push_str(&format!(
            "<line x1=\"{:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"{color}\" \
             stroke-width=\"1.5\" stroke-dasharray=\"{}\"/>\n",
            px(x0),
            py(ya),
            px(x1),
            py(yb),
            if i == 0 { "none" } else { "6 4" }
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"12\" fill=\"{color}\" \
             font-family=\"sans-serif\">{} (slope {:.4})</text>\n",
            ML + 10.0,
            MT + 18.0 + 16.0 * i as f64,
            line.label,
            line.slope
        ));
    }

    for (lx, ly) in &logs {
        svg.push_str(&format!(
            "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"3\" fill=\"black\"/>\n",
            px(*lx),
            py(*ly)
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fmt_round_trips() {
        for &x in &[std::f64::consts::PI, 1.0 / 3.0, 1e-300, -2.5e17] {
            let s = fmt_f64(x);
            assert_eq!(s.parse::<f64>().unwrap(), x, "{s}");
        }
    }

    #[test]
    fn sha256_known_value() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn svg_is_well_formed_enough() {
        let svg = loglog_svg(
            "demo",
            "x",
            "y",
            &[(0.1, 0.2), (1.0, 0.05), (10.0, 0.01)],
            &[LogLogLine {
                slope: 0.5,
                anchor_log_x: -1.0,
                anchor_log_y: -0.7,
                label: "fit",
            }],
        );
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<circle").count(), 3);
    }
}
