use std::fmt::Write;
use std::path::Path;

use super::table::write_atomic;
use super::{CellStatus, Grid, MethodName, RegionMap, SweepConfig, SweepError};

/// Analytic region boundaries, in `(gamma, p2)` coordinates.
#[derive(Debug, Clone, PartialEq)]
pub enum Overlay {
    Curve { label: String, points: Vec<(f64, f64)> },
    Rect { label: String, gamma: (f64, f64), p2: (f64, f64) },
}

pub fn boundary_overlays(cfg: &SweepConfig) -> Vec<Overlay> {
    let (_, axis2) = cfg.axes();
    let l = cfg.l;
    let sample = |f: &dyn Fn(f64) -> f64| -> Vec<(f64, f64)> {
        (0..=200)
            .map(|i| {
                let p = axis2.min + (axis2.max - axis2.min) * i as f64 / 200.0;
                (f(p), p)
            })
            .collect()
    };
    match cfg.method {
        MethodName::Hb | MethodName::Nag => {
            let m = cfg.method;
            let label = match m {
                MethodName::Hb => "gamma = 2(1+beta)/L",
                _ => "gamma = (2/L)(1+beta)/(1+2beta)",
            };
            vec![Overlay::Curve {
                label: label.into(),
                points: sample(&|p| m.boundary_gamma(l, p).unwrap()),
            }]
        }
        MethodName::Igd => vec![Overlay::Curve {
            label: "gamma = 2/(L(1+eps))".into(),
            points: sample(&|e| 2.0 / (l * (1.0 + e))),
        }],
        MethodName::Tos => vec![Overlay::Rect {
            label: "[0, 2/L] x [0, 2]".into(),
            gamma: (0.0, 2.0 / l),
            p2: (0.0, 2.0),
        }],
    }
}

const LEFT: f64 = 70.0;
const TOP: f64 = 40.0;
const PLOT_W: f64 = 480.0;
const PLOT_H: f64 = 480.0;
const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 580.0;

fn ramp(k: usize, kmin: usize, kmax: usize) -> String {
    let t = if kmax > kmin {
        (k.saturating_sub(kmin)) as f64 / (kmax - kmin) as f64
    } else {
        0.0
    };
    let r = (110.0 + 145.0 * t).round() as u8;
    let gb = (200.0 * t).round() as u8;
    format!("#{r:02x}{gb:02x}{gb:02x}")
}

fn color(status: CellStatus, k: Option<usize>, cfg: &SweepConfig) -> String {
    match status {
        CellStatus::Cycle => ramp(k.unwrap_or(cfg.kmin), cfg.kmin, cfg.kmax),
        CellStatus::NoCycle => "#e6ecef".into(),
        CellStatus::Inconclusive => "#9a9a9a".into(),
        CellStatus::Failed => "#3a3a3a".into(),
        CellStatus::Skipped => "#ffffff".into(),
    }
}

fn greek(name: &str) -> &'static str {
    match name {
        "eps" => "\u{3b5}",
        _ => "\u{3b2}",
    }
}

/// Deterministic SVG rendering of `map` over `grid`.
pub fn render_heatmap(cfg: &SweepConfig, grid: &Grid, map: &RegionMap, overlays: &[Overlay]) -> String {
    let (n1, n2) = (grid.axis1.points, grid.axis2.points);
    let (cw, ch) = (PLOT_W / n1 as f64, PLOT_H / n2 as f64);
    // Cell centres sit at grid values; a one-point axis spans one unit.
    let span = |a: &super::Axis| if a.points > 1 { a.step() } else { 1.0 };
    let (s1, s2) = (span(&grid.axis1), span(&grid.axis2));
    let px = |g: f64| LEFT + ((g - grid.axis1.min) / s1 + 0.5) * cw;
    let py = |p: f64| TOP + PLOT_H - ((p - grid.axis2.min) / s2 + 0.5) * ch;
    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"12\">"
    );
    let _ = writeln!(s, "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"#ffffff\"/>");
    let _ = writeln!(
        s,
        "<defs><clipPath id=\"plot\"><rect x=\"{LEFT}\" y=\"{TOP}\" width=\"{PLOT_W}\" height=\"{PLOT_H}\"/></clipPath></defs>"
    );
    let _ = writeln!(
        s,
        "<text x=\"{:.2}\" y=\"24\" text-anchor=\"middle\" font-size=\"14\">{} L={} \u{3bc}={} K={}..{}</text>",
        LEFT + PLOT_W / 2.0,
        cfg.method.as_str().to_uppercase(),
        super::fmt12(cfg.l),
        super::fmt12(cfg.mu),
        cfg.kmin,
        cfg.kmax
    );
    let _ = writeln!(s, "<g shape-rendering=\"crispEdges\">");
    for rec in &map.records {
        let Some(idx) = grid.index_of(rec.param1, rec.param2) else { continue };
        let (i, j) = grid.position(idx);
        let _ = writeln!(
            s,
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{}\"/>",
            LEFT + i as f64 * cw,
            TOP + PLOT_H - (j + 1) as f64 * ch,
            cw,
            ch,
            color(rec.status, rec.k_min, cfg)
        );
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(
        s,
        "<rect x=\"{LEFT}\" y=\"{TOP}\" width=\"{PLOT_W}\" height=\"{PLOT_H}\" fill=\"none\" stroke=\"#000000\"/>"
    );
    let _ = writeln!(s, "<g clip-path=\"url(#plot)\" fill=\"none\" stroke=\"#1f4e9c\" stroke-width=\"2\">");
    for o in overlays {
        match o {
            Overlay::Curve { label, points } => {
                let pts: Vec<String> = points.iter().map(|&(g, p)| format!("{:.2},{:.2}", px(g), py(p))).collect();
                let _ = writeln!(s, "<polyline points=\"{}\"><title>{label}</title></polyline>", pts.join(" "));
            }
            Overlay::Rect { label, gamma, p2 } => {
                let (x0, x1, y0, y1) = (px(gamma.0), px(gamma.1), py(p2.1), py(p2.0));
                let _ = writeln!(
                    s,
                    "<rect x=\"{x0:.2}\" y=\"{y0:.2}\" width=\"{:.2}\" height=\"{:.2}\" stroke-dasharray=\"6 3\"><title>{label}</title></rect>",
                    x1 - x0,
                    y1 - y0
                );
            }
        }
    }
    let _ = writeln!(s, "</g>");
    // Ticks at both ends and the middle of each axis, scaled by L for gamma.
    for t in [0.0, 0.5, 1.0] {
        let g = grid.axis1.min + t * (grid.axis1.max - grid.axis1.min);
        let p = grid.axis2.min + t * (grid.axis2.max - grid.axis2.min);
        let _ = writeln!(
            s,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{:.2}</text>",
            px(g),
            TOP + PLOT_H + 18.0,
            g * cfg.l
        );
        let _ = writeln!(
            s,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{:.2}</text>",
            LEFT - 6.0,
            py(p) + 4.0,
            p
        );
    }
    let _ = writeln!(
        s,
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">\u{3b3}\u{b7}L</text>",
        LEFT + PLOT_W / 2.0,
        TOP + PLOT_H + 38.0
    );
    let _ = writeln!(
        s,
        "<text x=\"20\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>",
        TOP + PLOT_H / 2.0,
        greek(cfg.method.second_parameter())
    );
    let mut legend: Vec<(String, String)> = Vec::new();
    let mid = (cfg.kmin + cfg.kmax) / 2;
    let mut ks = vec![cfg.kmin, mid, cfg.kmax];
    ks.dedup();
    for k in ks {
        legend.push((ramp(k, cfg.kmin, cfg.kmax), format!("cycle, K_min = {k}")));
    }
    for st in [CellStatus::NoCycle, CellStatus::Inconclusive, CellStatus::Failed] {
        legend.push((color(st, None, cfg), st.as_str().replace('_', " ")));
    }
    let lx = LEFT + PLOT_W + 20.0;
    for (n, (fill, text)) in legend.iter().enumerate() {
        let y = TOP + 10.0 + 22.0 * n as f64;
        let _ = writeln!(
            s,
            "<rect x=\"{lx:.2}\" y=\"{y:.2}\" width=\"14\" height=\"14\" fill=\"{fill}\" stroke=\"#000000\"/><text x=\"{:.2}\" y=\"{:.2}\">{text}</text>",
            lx + 20.0,
            y + 11.0
        );
    }
    s.push_str("</svg>\n");
    s
}

pub fn emit_heatmap(cfg: &SweepConfig, grid: &Grid, map: &RegionMap, path: &Path) -> Result<(), SweepError> {
    let svg = render_heatmap(cfg, grid, map, &boundary_overlays(cfg));
    write_atomic(path, svg.as_bytes())
}
