//! Self-contained SVG line charts of a metrics series.

use std::fmt::Write as _;

use crate::aggregation::RoundMetrics;

pub const WIDTH: f64 = 640.0;
pub const HEIGHT: f64 = 400.0;
pub const PLOT_LEFT: f64 = 70.0;
pub const PLOT_RIGHT: f64 = 620.0;
pub const PLOT_TOP: f64 = 40.0;
pub const PLOT_BOTTOM: f64 = 350.0;
/// Share of the data span added on both sides of each axis.
pub const MARGIN: f64 = 0.05;

const COLORS: [&str; 3] = ["#1f77b4", "#d62728", "#2ca02c"];

pub struct Series<'a> {
    pub name: &'a str,
    pub points: Vec<(f64, f64)>,
}

/// Axis range padded by [`MARGIN`]; a flat range is widened by half a unit.
pub fn padded_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
        (a.min(v), b.max(v))
    });
    let span = hi - lo;
    if span > 0.0 {
        (lo - MARGIN * span, hi + MARGIN * span)
    } else {
        (lo - 0.5, hi + 0.5)
    }
}

fn fmt_tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e5 || v.abs() < 1e-2) {
        format!("{v:.3e}")
    } else {
        format!("{v:.3}")
    }
}

/// One chart with a shared x axis.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series<'_>]) -> String {
    let (x0, x1) = padded_range(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let (y0, y1) = padded_range(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
    let px = |x: f64| PLOT_LEFT + (x - x0) / (x1 - x0) * (PLOT_RIGHT - PLOT_LEFT);
    let py = |y: f64| PLOT_BOTTOM - (y - y0) / (y1 - y0) * (PLOT_BOTTOM - PLOT_TOP);

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
        r#"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="16">{title}</text>"#,
        WIDTH / 2.0
    );
    let _ = writeln!(
        s,
        r#"<rect class="plot-area" x="{PLOT_LEFT}" y="{PLOT_TOP}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        PLOT_RIGHT - PLOT_LEFT,
        PLOT_BOTTOM - PLOT_TOP
    );
    let ticks = [
        (PLOT_LEFT, PLOT_BOTTOM + 16.0, "middle", fmt_tick(x0)),
        (PLOT_RIGHT, PLOT_BOTTOM + 16.0, "middle", fmt_tick(x1)),
        (PLOT_LEFT - 6.0, PLOT_BOTTOM, "end", fmt_tick(y0)),
        (PLOT_LEFT - 6.0, PLOT_TOP + 4.0, "end", fmt_tick(y1)),
    ];
    for (x, y, anchor, text) in ticks {
        let _ = writeln!(
            s,
            r#"<text x="{x}" y="{y}" text-anchor="{anchor}" font-family="sans-serif" font-size="11">{text}</text>"#
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12">{x_label}</text>"#,
        (PLOT_LEFT + PLOT_RIGHT) / 2.0,
        HEIGHT - 14.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12" transform="rotate(-90 16 {})">{y_label}</text>"#,
        (PLOT_TOP + PLOT_BOTTOM) / 2.0,
        (PLOT_TOP + PLOT_BOTTOM) / 2.0
    );
    for (i, ser) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = ser
            .points
            .iter()
            .map(|&(x, y)| format!("{:.4},{:.4}", px(x), py(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline class="series" data-name="{}" points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            ser.name,
            pts.join(" ")
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11" fill="{color}">{}</text>"#,
            PLOT_RIGHT - 120.0,
            PLOT_TOP + 16.0 + 14.0 * i as f64,
            ser.name
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Accuracy, loss, cumulative energy and traffic charts as
/// `(file name, svg)`. Nothing for an empty series.
pub fn emit_plots(rows: &[RoundMetrics]) -> Vec<(String, String)> {
    if rows.is_empty() {
        return Vec::new();
    }
    let by_round = |f: &dyn Fn(&RoundMetrics) -> f64| -> Vec<(f64, f64)> {
        rows.iter().map(|r| (f64::from(r.round), f(r))).collect()
    };
    let mut total = 0.0;
    let energy: Vec<(f64, f64)> = rows
        .iter()
        .map(|r| {
            total += r.e_tx_j + r.e_cmp_j;
            (f64::from(r.round), total)
        })
        .collect();
    vec![
        (
            "accuracy.svg".into(),
            line_chart(
                "Accuracy",
                "round",
                "accuracy",
                &[Series {
                    name: "accuracy",
                    points: by_round(&|r| r.accuracy),
                }],
            ),
        ),
        (
            "loss.svg".into(),
            line_chart(
                "Loss",
                "round",
                "cross-entropy",
                &[Series {
                    name: "loss",
                    points: by_round(&|r| r.loss),
                }],
            ),
        ),
        (
            "energy.svg".into(),
            line_chart(
                "Cumulative energy",
                "round",
                "joules",
                &[Series {
                    name: "energy",
                    points: energy,
                }],
            ),
        ),
        (
            "bytes.svg".into(),
            line_chart(
                "Traffic",
                "round",
                "bytes",
                &[
                    Series {
                        name: "up",
                        points: by_round(&|r| r.bytes_up as f64),
                    },
                    Series {
                        name: "down",
                        points: by_round(&|r| r.bytes_down as f64),
                    },
                ],
            ),
        ),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(round: u32, acc: f64) -> RoundMetrics {
        RoundMetrics {
            round,
            wall_clock_s: 1.0,
            accuracy: acc,
            loss: 1.0 - acc,
            e_tx_j: 2.0,
            e_cmp_j: 3.0,
            bytes_up: 100 * u64::from(round),
            bytes_down: 50,
            participants: 4,
            skipped: 0,
        }
    }

    fn polylines(svg: &str) -> Vec<Vec<(f64, f64)>> {
        let doc = roxmltree::Document::parse(svg).unwrap();
        doc.descendants()
            .filter(|n| n.has_tag_name("polyline"))
            .map(|n| {
                n.attribute("points")
                    .unwrap()
                    .split_whitespace()
                    .map(|p| {
                        let (x, y) = p.split_once(',').unwrap();
                        (x.parse().unwrap(), y.parse().unwrap())
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn empty_gives_nothing() {
        assert!(emit_plots(&[]).is_empty());
    }

    #[test]
    fn two_rows_one_segment_per_series() {
        let plots = emit_plots(&[row(1, 0.5), row(2, 0.7)]);
        assert_eq!(plots.len(), 4);
        for (_, svg) in &plots {
            for line in polylines(svg) {
                assert_eq!(line.len(), 2);
            }
        }
    }

    #[test]
    fn well_formed_xml() {
        let rows: Vec<RoundMetrics> = (1..=30).map(|r| row(r, f64::from(r) / 40.0)).collect();
        for (_, svg) in emit_plots(&rows) {
            assert!(roxmltree::Document::parse(&svg).is_ok());
        }
    }

    #[test]
    fn extents_carry_five_percent_margin() {
        let rows: Vec<RoundMetrics> = (1..=11)
            .map(|r| row(r, 0.2 + f64::from(r) * 0.05))
            .collect();
        let plots = emit_plots(&rows);
        let line = &polylines(&plots[0].1)[0];
        let min_x = line.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
        let max_x = line.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
        let min_y = line.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        let max_y = line.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
        // The data span occupies 1 / 1.1 of each axis, centred.
        let w = PLOT_RIGHT - PLOT_LEFT;
        let h = PLOT_BOTTOM - PLOT_TOP;
        assert!((min_x - (PLOT_LEFT + w * 0.05 / 1.1)).abs() < 1e-3);
        assert!((max_x - (PLOT_RIGHT - w * 0.05 / 1.1)).abs() < 1e-3);
        assert!((min_y - (PLOT_TOP + h * 0.05 / 1.1)).abs() < 1e-3);
        assert!((max_y - (PLOT_BOTTOM - h * 0.05 / 1.1)).abs() < 1e-3);
    }
}
