//! Self-contained SVG renderer for trace CSVs: one panel per channel,
//! truth and estimates overlaid, dashed horizontal threshold lines on the
//! detector panels. The trace is the only data source; nothing is
//! re-simulated here.

use std::fmt::Write as _;

use powerdse::filters::FilterKind;
use powerdse::trace::ScenarioTrace;
use powerdse::{Error, Result};

/// Channels `plot` understands, in presentation order.
pub const VALID_CHANNELS: [&str; 7] = ["delta", "domega", "eq_prime", "ed_prime", "y", "g", "d"];

/// The default selection: the four state channels.
pub const STATE_CHANNELS: [&str; 4] = ["delta", "domega", "eq_prime", "ed_prime"];

/// Threshold lines for the detector panels. `euclid` is optional because a
/// trace alone does not say which calibrated threshold produced its alarm
/// column.
#[derive(Debug, Clone, Copy)]
pub struct Thresholds {
    pub chi2: f64,
    pub euclid: Option<f64>,
}

/// Validate and normalize the requested channel list; empty means all
/// state channels. Duplicates collapse, order is preserved.
pub fn resolve_channels(requested: &[String]) -> Result<Vec<String>> {
    if requested.is_empty() {
        return Ok(STATE_CHANNELS.iter().map(|s| s.to_string()).collect());
    }
    let mut channels: Vec<String> = Vec::new();
    for name in requested {
        let name = name.trim().to_ascii_lowercase();
        if !VALID_CHANNELS.contains(&name.as_str()) {
            return Err(Error::config(format!(
                "unknown channel '{name}' (valid: {})",
                VALID_CHANNELS.join(", ")
            )));
        }
        if !channels.contains(&name) {
            channels.push(name);
        }
    }
    Ok(channels)
}

const WIDTH: f64 = 960.0;
const PANEL_H: f64 = 190.0;
const PANEL_TOP: f64 = 44.0; // headroom per panel: title + legend lines
const PANEL_GAP: f64 = 26.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 18.0;
const BOTTOM: f64 = 34.0;

/// One plotted line.
struct Series {
    label: &'static str,
    color: &'static str,
    width: f64,
    ys: Vec<f64>,
}

fn filter_color(kind: FilterKind) -> &'static str {
    match kind {
        FilterKind::Ekf => "#d62728",
        FilterKind::Ckf => "#1f77b4",
        FilterKind::Sckf => "#2ca02c",
    }
}

/// Assemble the series and optional threshold line of one channel.
fn panel_series(
    trace: &ScenarioTrace,
    channel: &str,
    thresholds: &Thresholds,
) -> (&'static str, Vec<Series>, Option<f64>) {
    let state = |i: usize| -> Vec<f64> {
        trace.true_states.iter().map(|x| x.to_array()[i]).collect()
    };
    let estimates = |i: usize| -> Vec<Series> {
        trace
            .filters
            .iter()
            .map(|f| Series {
                label: f.kind.name(),
                color: filter_color(f.kind),
                width: 1.2,
                ys: f.estimates.iter().map(|x| x.to_array()[i]).collect(),
            })
            .collect()
    };
    let truth = |i: usize| Series {
        label: "truth",
        color: "#000000",
        width: 1.6,
        ys: state(i),
    };
    let state_panel = |i: usize, title: &'static str| {
        let mut series = vec![truth(i)];
        series.extend(estimates(i));
        (title, series, None)
    };
    match channel {
        "delta" => state_panel(0, "rotor angle δ [rad]"),
        "domega" => state_panel(1, "speed deviation Δω [pu]"),
        "eq_prime" => state_panel(2, "transient EMF e_q′ [pu]"),
        "ed_prime" => state_panel(3, "transient EMF e_d′ [pu]"),
        "y" => (
            "electrical torque measurement [pu]",
            vec![
                Series {
                    label: "clean",
                    color: "#000000",
                    width: 1.6,
                    ys: trace.y_clean.clone(),
                },
                Series {
                    label: "attacked",
                    color: "#ff7f0e",
                    width: 1.2,
                    ys: trace.y_attacked.clone(),
                },
            ],
            None,
        ),
        "g" => (
            "χ² innovation statistic g",
            trace
                .filters
                .iter()
                .map(|f| Series {
                    label: f.kind.name(),
                    color: filter_color(f.kind),
                    width: 1.2,
                    ys: f.g_chi2.clone(),
                })
                .collect(),
            Some(thresholds.chi2),
        ),
        "d" => (
            "windowed Euclidean statistic d",
            trace
                .filters
                .iter()
                .map(|f| Series {
                    label: f.kind.name(),
                    color: filter_color(f.kind),
                    width: 1.2,
                    ys: f.d_euclid.clone(),
                })
                .collect(),
            thresholds.euclid,
        ),
        other => unreachable!("channel '{other}' passed validation"),
    }
}

/// Pixel mapping of one panel.
struct Frame {
    top: f64,
    t0: f64,
    t1: f64,
    lo: f64,
    hi: f64,
}

impl Frame {
    fn x(&self, t: f64) -> f64 {
        LEFT + (t - self.t0) / (self.t1 - self.t0) * (WIDTH - LEFT - RIGHT)
    }

    fn y(&self, v: f64) -> f64 {
        self.top + PANEL_H - (v - self.lo) / (self.hi - self.lo) * PANEL_H
    }
}

/// Path data for one polyline; non-finite samples lift the pen so gaps
/// (e.g. the detector statistics before the first update) stay gaps.
fn path_data(t: &[f64], ys: &[f64], frame: &Frame) -> String {
    let mut d = String::new();
    let mut pen_down = false;
    for (&t, &v) in t.iter().zip(ys) {
        if !v.is_finite() {
            pen_down = false;
            continue;
        }
        let cmd = if pen_down { 'L' } else { 'M' };
        let _ = write!(d, "{cmd}{:.2} {:.2} ", frame.x(t), frame.y(v));
        pen_down = true;
    }
    d
}

/// Largest of 1, 2, 5 times a power of ten not exceeding twice `raw`; the
/// usual round-tick heuristic.
fn nice_step(raw: f64) -> f64 {
    let mag = 10f64.powf(raw.log10().floor());
    let norm = raw / mag;
    let n = if norm <= 1.0 {
        1.0
    } else if norm <= 2.0 {
        2.0
    } else if norm <= 5.0 {
        5.0
    } else {
        10.0
    };
    n * mag
}

fn ticks(lo: f64, hi: f64, target: usize) -> (Vec<f64>, f64) {
    let step = nice_step((hi - lo) / target as f64);
    let mut v = Vec::new();
    let mut k = (lo / step).ceil() as i64;
    while k as f64 * step <= hi + step * 1e-9 {
        let t = k as f64 * step;
        v.push(if t.abs() < step * 1e-9 { 0.0 } else { t });
        k += 1;
    }
    (v, step)
}

fn tick_label(v: f64, step: f64) -> String {
    let decimals = if step >= 1.0 {
        0
    } else {
        (-step.log10().floor()) as usize
    };
    format!("{v:.*}", decimals.min(9))
}

/// Render the selected channels as a stack of SVG panels.
pub fn render(trace: &ScenarioTrace, channels: &[String], thresholds: &Thresholds) -> Result<String> {
    trace.validate()?;
    if trace.rows() < 2 {
        return Err(Error::config(format!(
            "trace has {} rows; need at least 2 to plot",
            trace.rows()
        )));
    }
    let t = &trace.t;
    let (t0, t1) = (t[0], t[t.len() - 1]);
    let total_h =
        channels.len() as f64 * (PANEL_TOP + PANEL_H) + (channels.len() - 1) as f64 * PANEL_GAP
            + BOTTOM;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{total_h}\" \
         viewBox=\"0 0 {WIDTH} {total_h}\" font-family=\"system-ui, sans-serif\">"
    );
    let _ = writeln!(svg, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>");

    for (i, channel) in channels.iter().enumerate() {
        let (title, series, threshold) = panel_series(trace, channel, thresholds);
        let top = i as f64 * (PANEL_TOP + PANEL_H + PANEL_GAP) + PANEL_TOP;

        let finite: Vec<f64> = series
            .iter()
            .flat_map(|s| s.ys.iter().copied())
            .filter(|v| v.is_finite())
            .chain(threshold)
            .collect();
        let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !lo.is_finite() || !hi.is_finite() {
            return Err(Error::config(format!(
                "channel '{channel}' has no finite samples to plot"
            )));
        }
        let pad = if hi > lo {
            0.05 * (hi - lo)
        } else {
            (hi.abs() * 0.1).max(1e-3)
        };
        let frame = Frame {
            top,
            t0,
            t1,
            lo: lo - pad,
            hi: hi + pad,
        };

        // Title and legend.
        let _ = writeln!(
            svg,
            "<text x=\"{LEFT}\" y=\"{:.2}\" font-size=\"13\" font-weight=\"600\" \
             fill=\"#222\">{title}</text>",
            top - 26.0
        );
        let mut lx = LEFT;
        for s in &series {
            let ly = top - 10.0;
            let _ = writeln!(
                svg,
                "<line x1=\"{lx:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" \
                 stroke=\"{}\" stroke-width=\"2\"/>",
                ly - 4.0,
                lx + 18.0,
                ly - 4.0,
                s.color
            );
            let _ = writeln!(
                svg,
                "<text x=\"{:.2}\" y=\"{ly:.2}\" font-size=\"11\" fill=\"#333\">{}</text>",
                lx + 23.0,
                s.label
            );
            lx += 34.0 + 7.0 * s.label.len() as f64;
        }

        // Frame, grid, and tick labels.
        let _ = writeln!(
            svg,
            "<rect x=\"{LEFT}\" y=\"{top:.2}\" width=\"{:.2}\" height=\"{PANEL_H}\" \
             fill=\"none\" stroke=\"#999\"/>",
            WIDTH - LEFT - RIGHT
        );
        let (yticks, ystep) = ticks(frame.lo, frame.hi, 5);
        for &v in &yticks {
            let y = frame.y(v);
            let _ = writeln!(
                svg,
                "<line x1=\"{LEFT}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" \
                 stroke=\"#e5e5e5\"/>",
                WIDTH - RIGHT
            );
            let _ = writeln!(
                svg,
                "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\" font-size=\"11\" \
                 fill=\"#555\">{}</text>",
                LEFT - 6.0,
                y + 4.0,
                tick_label(v, ystep)
            );
        }
        let (xticks, xstep) = ticks(t0, t1, 8);
        for &v in &xticks {
            let x = frame.x(v);
            let _ = writeln!(
                svg,
                "<line x1=\"{x:.2}\" y1=\"{top:.2}\" x2=\"{x:.2}\" y2=\"{:.2}\" \
                 stroke=\"#e5e5e5\"/>",
                top + PANEL_H
            );
            let _ = writeln!(
                svg,
                "<text x=\"{x:.2}\" y=\"{:.2}\" text-anchor=\"middle\" font-size=\"11\" \
                 fill=\"#555\">{}</text>",
                top + PANEL_H + 14.0,
                tick_label(v, xstep)
            );
        }

        // Threshold line, clipped away when it sits outside the data range.
        if let Some(th) = threshold {
            let y = frame.y(th);
            let _ = writeln!(
                svg,
                "<line x1=\"{LEFT}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" stroke=\"#777\" \
                 stroke-width=\"1.2\" stroke-dasharray=\"6 4\"/>",
                WIDTH - RIGHT
            );
            let _ = writeln!(
                svg,
                "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\" font-size=\"10\" \
                 fill=\"#777\">threshold</text>",
                WIDTH - RIGHT - 4.0,
                y - 4.0
            );
        }

        for s in &series {
            let _ = writeln!(
                svg,
                "<path d=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"{}\"/>",
                path_data(t, &s.ys, &frame),
                s.color,
                s.width
            );
        }
    }

    let _ = writeln!(
        svg,
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\" font-size=\"12\" \
         fill=\"#333\">t [s]</text>",
        LEFT + (WIDTH - LEFT - RIGHT) / 2.0,
        total_h - 10.0
    );
    svg.push_str("</svg>\n");
    Ok(svg)
}
