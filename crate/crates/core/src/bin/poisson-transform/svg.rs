//! Minimal SVG line chart: RMSE against n, one panel per (parameter, k).

use std::fmt::Write as _;

use poisson_transform::chain::{Method, SummaryRow};

const PANEL_W: f64 = 320.0;
const PANEL_H: f64 = 220.0;
const MARGIN: f64 = 48.0;
const COLORS: [&str; 4] = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Panels are laid out with one column per `k` and one row per parameter;
/// each panel holds one polyline per method (log-scaled n on the x axis).
pub fn render(summary: &[SummaryRow], methods: &[Method], ks: &[usize], ns: &[usize]) -> String {
    let cols = ks.len().max(1) as f64;
    let width = cols * (PANEL_W + MARGIN) + MARGIN;
    let height = 2.0 * (PANEL_H + MARGIN) + MARGIN + 30.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let (nmin, nmax) = (
        ns.iter().copied().min().unwrap_or(1).max(1) as f64,
        ns.iter().copied().max().unwrap_or(1).max(1) as f64,
    );
    let xspan = (nmax.ln() - nmin.ln()).max(1e-9);
    for (row, param) in [0usize, 1].iter().enumerate() {
        for (col, &k) in ks.iter().enumerate() {
            let x0 = MARGIN + col as f64 * (PANEL_W + MARGIN);
            let y0 = MARGIN + row as f64 * (PANEL_H + MARGIN);
            let cells: Vec<&SummaryRow> = summary.iter().filter(|r| r.k == k).collect();
            let ymax = cells.iter().map(|r| r.rmse[*param]).filter(|v| v.is_finite()).fold(0.0, f64::max);
            let ymax = if ymax > 0.0 { ymax * 1.1 } else { 1.0 };
            let _ = writeln!(
                s,
                r##"<rect x="{x0}" y="{y0}" width="{PANEL_W}" height="{PANEL_H}" fill="none" stroke="#444"/>"##
            );
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" text-anchor="middle">RMSE theta{} (k = {k})</text>"#,
                x0 + PANEL_W / 2.0,
                y0 - 8.0,
                param + 1
            );
            let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{ymax:.3}</text>"#, x0 - 4.0, y0 + 10.0);
            let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">0</text>"#, x0 - 4.0, y0 + PANEL_H);
            for &n in ns {
                let x = x0 + PANEL_W * ((n.max(1) as f64).ln() - nmin.ln()) / xspan;
                let x = if ns.len() == 1 { x0 + PANEL_W / 2.0 } else { x };
                let _ = writeln!(s, r#"<text x="{x:.1}" y="{}" text-anchor="middle">{n}</text>"#, y0 + PANEL_H + 14.0);
            }
            for (mi, m) in methods.iter().enumerate() {
                let mut pts: Vec<(usize, f64)> = cells
                    .iter()
                    .filter(|r| r.method == *m && r.rmse[*param].is_finite())
                    .map(|r| (r.n, r.rmse[*param]))
                    .collect();
                pts.sort_by_key(|p| p.0);
                let coords: Vec<String> = pts
                    .iter()
                    .map(|&(n, v)| {
                        let x = if ns.len() == 1 {
                            x0 + PANEL_W / 2.0
                        } else {
                            x0 + PANEL_W * ((n.max(1) as f64).ln() - nmin.ln()) / xspan
                        };
                        let y = y0 + PANEL_H * (1.0 - v / ymax);
                        format!("{x:.1},{y:.1}")
                    })
                    .collect();
                let color = COLORS[mi % COLORS.len()];
                let _ = writeln!(
                    s,
                    r#"<polyline data-method="{}" fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
                    escape(m.name()),
                    coords.join(" ")
                );
            }
        }
    }
    let ly = height - 16.0;
    for (mi, m) in methods.iter().enumerate() {
        let lx = MARGIN + mi as f64 * 120.0;
        let color = COLORS[mi % COLORS.len()];
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            lx + 20.0,
            lx + 24.0,
            ly + 4.0,
            escape(m.name())
        );
    }
    s.push_str("</svg>\n");
    s
}
