//! Line charts of training metrics as standalone SVG.

use std::fmt::Write;

use super::metrics::{parse_metrics, MetricsRow};
use crate::error::Result;

pub const WIDTH: f64 = 640.0;
pub const HEIGHT: f64 = 400.0;
pub const MARGIN_LEFT: f64 = 70.0;
pub const MARGIN_RIGHT: f64 = 20.0;
pub const MARGIN_TOP: f64 = 40.0;
pub const MARGIN_BOTTOM: f64 = 50.0;

#[derive(Clone, Debug, PartialEq)]
pub struct Plot {
    /// File stem, e.g. `returns`.
    pub name: &'static str,
    pub svg: String,
}

/// Data range padded to a non-degenerate interval.
fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    });
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if lo == hi {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

/// Maps data coordinates into the plot area of the viewport.
pub fn to_viewport(x: f64, y: f64, xr: (f64, f64), yr: (f64, f64)) -> (f64, f64) {
    let pw = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let ph = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    (
        MARGIN_LEFT + (x - xr.0) / (xr.1 - xr.0) * pw,
        MARGIN_TOP + ph - (y - yr.0) / (yr.1 - yr.0) * ph,
    )
}

fn chart(title: &str, points: &[(f64, f64)]) -> String {
    let xr = range(points.iter().map(|p| p.0));
    let yr = range(points.iter().map(|p| p.1));
    let (x0, y0) = (MARGIN_LEFT, HEIGHT - MARGIN_BOTTOM);
    let (x1, y1) = (WIDTH - MARGIN_RIGHT, MARGIN_TOP);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(
        s,
        r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" font-family="sans-serif" font-size="16" text-anchor="middle">{title}</text>"#,
        WIDTH / 2.0
    );
    let _ = writeln!(
        s,
        r#"<path d="M {x0} {y1} L {x0} {y0} L {x1} {y0}" fill="none" stroke="black"/>"#
    );
    if !points.is_empty() {
        let label = |x: f64, y: f64, anchor: &str, v: f64| {
            format!(
                r#"<text x="{x}" y="{y}" font-family="sans-serif" font-size="11" text-anchor="{anchor}">{v:.4}</text>"#
            )
        };
        let _ = writeln!(s, "{}", label(x0, y0 + 16.0, "middle", xr.0));
        let _ = writeln!(s, "{}", label(x1, y0 + 16.0, "end", xr.1));
        let _ = writeln!(s, "{}", label(x0 - 6.0, y0, "end", yr.0));
        let _ = writeln!(s, "{}", label(x0 - 6.0, y1 + 4.0, "end", yr.1));
        let coords: Vec<String> = points
            .iter()
            .map(|&(x, y)| {
                let (px, py) = to_viewport(x, y, xr, yr);
                format!("{px:.2},{py:.2}")
            })
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="steelblue" stroke-width="1.5" points="{}"/>"#,
            coords.join(" ")
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle">env steps</text>"#,
        WIDTH / 2.0,
        HEIGHT - 10.0
    );
    s.push_str("</svg>\n");
    s
}

/// Returns, L_clust, L_pred and silhouette against environment steps.
pub fn emit_plots(rows: &[MetricsRow]) -> Vec<Plot> {
    let series = |f: &dyn Fn(&MetricsRow) -> Option<f64>| -> Vec<(f64, f64)> {
        rows.iter()
            .filter_map(|r| {
                f(r).filter(|v| v.is_finite())
                    .map(|v| (r.env_steps as f64, v))
            })
            .collect()
    };
    vec![
        Plot {
            name: "returns",
            svg: chart("mean train return", &series(&|r| r.mean_train_return)),
        },
        Plot {
            name: "l_clust",
            svg: chart("clustering loss", &series(&|r| Some(r.l_clust))),
        },
        Plot {
            name: "l_pred",
            svg: chart("prediction loss", &series(&|r| Some(r.l_pred))),
        },
        Plot {
            name: "silhouette",
            svg: chart("silhouette", &series(&|r| r.silhouette)),
        },
    ]
}

pub fn emit_plots_from_csv(text: &str) -> Result<Vec<Plot>> {
    Ok(emit_plots(&parse_metrics(text)?))
}
