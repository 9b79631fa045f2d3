//! Static SVG plots rendered straight from run artifacts.
//!
//! Two plot kinds: per-episode return curves (mean across seeds with a
//! standard-error band) and box plots of cross-seed prediction spread split
//! by action source. Output is deterministic: same inputs, same bytes.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::records::{read_episodes, read_spreads, ActionSource, EpisodeRecord};
use crate::stats::{quartiles, std_sample};
use crate::{write_atomic, HarnessError};

const WIDTH: f64 = 760.0;
const HEIGHT: f64 = 480.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 55.0;

const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

/// One curve: per-episode mean return over seeds plus its standard error.
#[derive(Debug, Clone)]
pub struct CurveSeries {
    pub label: String,
    /// `(episode, mean, standard error)` sorted by episode.
    pub points: Vec<(usize, f64, f64)>,
}

/// One box in a box plot.
#[derive(Debug, Clone)]
pub struct BoxGroup {
    pub label: String,
    pub sublabel: String,
    pub values: Vec<f64>,
}

/// Renders plots for the given run directories into `out`.
///
/// Run directories containing `episodes.csv` contribute to
/// `learning_curves.svg`; directories containing `qgrid_spread.csv`
/// contribute to `spread_box.svg`. Returns the written paths; at least one
/// plot must be producible or the call fails.
pub fn plot_runs(run_dirs: &[PathBuf], out: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    let mut curves = Vec::new();
    let mut boxes = Vec::new();
    for dir in run_dirs {
        let episodes_path = dir.join("episodes.csv");
        if episodes_path.is_file() {
            let records = read_episodes(&episodes_path)?;
            if records.is_empty() {
                return Err(HarnessError::malformed(&episodes_path, "no episodes"));
            }
            curves.push(curve_from_records(run_label(dir), &records));
        }
        let spread_path = dir.join("qgrid_spread.csv");
        if spread_path.is_file() {
            let spreads = read_spreads(&spread_path)?;
            if spreads.is_empty() {
                return Err(HarnessError::malformed(&spread_path, "no spread rows"));
            }
            for source in [ActionSource::Given, ActionSource::Pi] {
                let values: Vec<f64> = spreads
                    .iter()
                    .filter(|s| s.source == source)
                    .map(|s| s.std_q)
                    .collect();
                if !values.is_empty() {
                    boxes.push(BoxGroup {
                        label: run_label(dir),
                        sublabel: source.as_str().to_string(),
                        values,
                    });
                }
            }
        }
    }
    if curves.is_empty() && boxes.is_empty() {
        return Err(HarnessError::Config(
            "no plottable artifacts (episodes.csv or qgrid_spread.csv) in the given runs".into(),
        ));
    }
    std::fs::create_dir_all(out).map_err(|e| HarnessError::io(out, e))?;
    let mut written = Vec::new();
    if !curves.is_empty() {
        let path = out.join("learning_curves.svg");
        write_atomic(&path, &learning_curves_svg(&curves))?;
        written.push(path);
    }
    if !boxes.is_empty() {
        let path = out.join("spread_box.svg");
        write_atomic(&path, &box_plot_svg(&boxes, "std of Q across seeds"))?;
        written.push(path);
    }
    Ok(written)
}

fn run_label(dir: &Path) -> String {
    dir.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string())
}

/// Collapses per-seed episode records into a mean curve with standard
/// errors. A single seed yields zero standard error (no band drawn).
pub fn curve_from_records(label: String, records: &[EpisodeRecord]) -> CurveSeries {
    let mut by_episode: std::collections::BTreeMap<usize, Vec<f64>> = Default::default();
    for r in records {
        by_episode.entry(r.episode).or_default().push(r.ret);
    }
    let points = by_episode
        .into_iter()
        .map(|(episode, returns)| {
            let n = returns.len();
            let mean = returns.iter().sum::<f64>() / n as f64;
            let sem = if n > 1 {
                std_sample(&returns) / (n as f64).sqrt()
            } else {
                0.0
            };
            (episode, mean, sem)
        })
        .collect();
    CurveSeries { label, points }
}

struct Frame {
    xmin: f64,
    xmax: f64,
    ymin: f64,
    ymax: f64,
}

impl Frame {
    fn new(xmin: f64, xmax: f64, ymin: f64, ymax: f64) -> Self {
        // Degenerate ranges get symmetric padding so everything stays visible.
        let (xmin, xmax) = pad_range(xmin, xmax);
        let (ymin, ymax) = pad_range(ymin, ymax);
        Self { xmin, xmax, ymin, ymax }
    }

    fn sx(&self, x: f64) -> f64 {
        MARGIN_LEFT + (x - self.xmin) / (self.xmax - self.xmin) * (WIDTH - MARGIN_LEFT - MARGIN_RIGHT)
    }

    fn sy(&self, y: f64) -> f64 {
        HEIGHT - MARGIN_BOTTOM
            - (y - self.ymin) / (self.ymax - self.ymin) * (HEIGHT - MARGIN_TOP - MARGIN_BOTTOM)
    }
}

fn pad_range(lo: f64, hi: f64) -> (f64, f64) {
    if hi > lo {
        (lo, hi)
    } else {
        let pad = if lo == 0.0 { 1.0 } else { lo.abs() * 0.1 };
        (lo - pad, hi + pad)
    }
}

/// Tick positions on a 1-2-5 ladder covering `[min, max]`.
fn ticks(min: f64, max: f64, target: usize) -> Vec<f64> {
    let raw = (max - min) / target.max(1) as f64;
    let mag = 10f64.powf(raw.abs().log10().floor());
    let norm = raw / mag;
    let step = if norm <= 1.0 {
        1.0
    } else if norm <= 2.0 {
        2.0
    } else if norm <= 5.0 {
        5.0
    } else {
        10.0
    } * mag;
    let mut t = (min / step).ceil() * step;
    let mut out = Vec::new();
    while t <= max + step * 1e-9 {
        // Snap values like 0.30000000000000004 back to 0.3 for labels.
        out.push((t / step).round() * step);
        t += step;
    }
    out
}

fn fmt_tick(v: f64) -> String {
    let r = (v * 1e9).round() / 1e9;
    if r == 0.0 {
        "0".to_string()
    } else if r.abs() >= 1e5 || r.abs() < 1e-4 {
        format!("{r:e}")
    } else {
        format!("{r}")
    }
}

fn svg_open(svg: &mut String, title: &str) {
    let _ = write!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n",
        WIDTH / 2.0,
        escape(title)
    );
}

fn svg_axes(svg: &mut String, frame: &Frame, x_label: &str, y_label: &str, x_ticks: &[f64]) {
    let x0 = MARGIN_LEFT;
    let x1 = WIDTH - MARGIN_RIGHT;
    let y0 = HEIGHT - MARGIN_BOTTOM;
    let y1 = MARGIN_TOP;
    for t in ticks(frame.ymin, frame.ymax, 6) {
        let y = frame.sy(t);
        let _ = write!(
            svg,
            "<line x1=\"{x0}\" y1=\"{y:.2}\" x2=\"{x1}\" y2=\"{y:.2}\" stroke=\"#dddddd\"/>\n\
             <text x=\"{}\" y=\"{:.2}\" text-anchor=\"end\">{}</text>\n",
            x0 - 8.0,
            y + 4.0,
            fmt_tick(t)
        );
    }
    for &t in x_ticks {
        let x = frame.sx(t);
        let _ = write!(
            svg,
            "<line x1=\"{x:.2}\" y1=\"{y0}\" x2=\"{x:.2}\" y2=\"{}\" stroke=\"#eeeeee\"/>\n\
             <text x=\"{x:.2}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
            y0 + 6.0,
            y0 + 20.0,
            fmt_tick(t)
        );
    }
    let _ = write!(
        svg,
        "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>\n\
         <line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\" stroke=\"black\"/>\n\
         <text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n\
         <text x=\"18\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 18 {})\">{}</text>\n",
        (x0 + x1) / 2.0,
        HEIGHT - 14.0,
        escape(x_label),
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(y_label)
    );
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Mean-return curves with one standard-error band per series.
pub fn learning_curves_svg(series: &[CurveSeries]) -> String {
    assert!(
        series.iter().any(|s| !s.points.is_empty()),
        "nothing to plot"
    );
    let mut xmin = f64::INFINITY;
    let mut xmax = f64::NEG_INFINITY;
    let mut ymin = f64::INFINITY;
    let mut ymax = f64::NEG_INFINITY;
    for s in series {
        for &(ep, mean, sem) in &s.points {
            xmin = xmin.min(ep as f64);
            xmax = xmax.max(ep as f64);
            ymin = ymin.min(mean - sem);
            ymax = ymax.max(mean + sem);
        }
    }
    let frame = Frame::new(xmin, xmax, ymin, ymax);
    let mut svg = String::new();
    svg_open(&mut svg, "mean episode return across seeds");
    svg_axes(
        &mut svg,
        &frame,
        "episode",
        "return",
        &ticks(frame.xmin, frame.xmax, 8),
    );
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        if s.points.iter().any(|&(_, _, sem)| sem > 0.0) {
            let mut band = String::new();
            for &(ep, mean, sem) in &s.points {
                let _ = write!(band, "{:.2},{:.2} ", frame.sx(ep as f64), frame.sy(mean + sem));
            }
            for &(ep, mean, sem) in s.points.iter().rev() {
                let _ = write!(band, "{:.2},{:.2} ", frame.sx(ep as f64), frame.sy(mean - sem));
            }
            let _ = write!(
                svg,
                "<polygon points=\"{}\" fill=\"{color}\" opacity=\"0.15\"/>\n",
                band.trim_end()
            );
        }
        let mut line = String::new();
        for &(ep, mean, _) in &s.points {
            let _ = write!(line, "{:.2},{:.2} ", frame.sx(ep as f64), frame.sy(mean));
        }
        let _ = write!(
            svg,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.6\"/>\n",
            line.trim_end()
        );
        let ly = MARGIN_TOP + 16.0 + i as f64 * 16.0;
        let _ = write!(
            svg,
            "<line x1=\"{}\" y1=\"{ly}\" x2=\"{}\" y2=\"{ly}\" stroke=\"{color}\" stroke-width=\"3\"/>\n\
             <text x=\"{}\" y=\"{}\">{}</text>\n",
            MARGIN_LEFT + 10.0,
            MARGIN_LEFT + 34.0,
            MARGIN_LEFT + 40.0,
            ly + 4.0,
            escape(&s.label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

pub(crate) struct BoxStats {
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub whisker_lo: f64,
    pub whisker_hi: f64,
    pub outliers: Vec<f64>,
}

/// Quartile box with whiskers at the most extreme data within 1.5 IQR of
/// the box; everything beyond is an outlier.
pub(crate) fn box_stats(values: &[f64]) -> BoxStats {
    let (q1, median, q3) = quartiles(values);
    let iqr = q3 - q1;
    let lo_fence = q1 - 1.5 * iqr;
    let hi_fence = q3 + 1.5 * iqr;
    let mut whisker_lo = q1;
    let mut whisker_hi = q3;
    let mut outliers = Vec::new();
    for &v in values {
        if v < lo_fence || v > hi_fence {
            outliers.push(v);
        } else {
            whisker_lo = whisker_lo.min(v);
            whisker_hi = whisker_hi.max(v);
        }
    }
    outliers.sort_by(f64::total_cmp);
    BoxStats { q1, median, q3, whisker_lo, whisker_hi, outliers }
}

/// Box plot over arbitrary value groups.
pub fn box_plot_svg(groups: &[BoxGroup], y_label: &str) -> String {
    assert!(
        groups.iter().all(|g| !g.values.is_empty()) && !groups.is_empty(),
        "every box needs data"
    );
    let stats: Vec<BoxStats> = groups.iter().map(|g| box_stats(&g.values)).collect();
    let mut ymin = f64::INFINITY;
    let mut ymax = f64::NEG_INFINITY;
    for (g, s) in groups.iter().zip(&stats) {
        ymin = ymin.min(s.whisker_lo);
        ymax = ymax.max(s.whisker_hi);
        for &o in &s.outliers {
            ymin = ymin.min(o);
            ymax = ymax.max(o);
        }
        debug_assert!(!g.values.is_empty());
    }
    let frame = Frame::new(0.0, groups.len() as f64, ymin, ymax);
    let mut svg = String::new();
    svg_open(&mut svg, "prediction spread by action source");
    svg_axes(&mut svg, &frame, "", y_label, &[]);
    let slot = (WIDTH - MARGIN_LEFT - MARGIN_RIGHT) / groups.len() as f64;
    for (i, (g, s)) in groups.iter().zip(&stats).enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let cx = MARGIN_LEFT + (i as f64 + 0.5) * slot;
        let half = slot * 0.2;
        let (yq1, ymed, yq3) = (frame.sy(s.q1), frame.sy(s.median), frame.sy(s.q3));
        let (ylo, yhi) = (frame.sy(s.whisker_lo), frame.sy(s.whisker_hi));
        let _ = write!(
            svg,
            "<line x1=\"{cx:.2}\" y1=\"{ylo:.2}\" x2=\"{cx:.2}\" y2=\"{yq1:.2}\" stroke=\"black\"/>\n\
             <line x1=\"{cx:.2}\" y1=\"{yq3:.2}\" x2=\"{cx:.2}\" y2=\"{yhi:.2}\" stroke=\"black\"/>\n\
             <line x1=\"{:.2}\" y1=\"{ylo:.2}\" x2=\"{:.2}\" y2=\"{ylo:.2}\" stroke=\"black\"/>\n\
             <line x1=\"{:.2}\" y1=\"{yhi:.2}\" x2=\"{:.2}\" y2=\"{yhi:.2}\" stroke=\"black\"/>\n\
             <rect x=\"{:.2}\" y=\"{yq3:.2}\" width=\"{:.2}\" height=\"{:.2}\" \
             fill=\"{color}\" opacity=\"0.5\" stroke=\"black\"/>\n\
             <line x1=\"{:.2}\" y1=\"{ymed:.2}\" x2=\"{:.2}\" y2=\"{ymed:.2}\" \
             stroke=\"black\" stroke-width=\"2\"/>\n",
            cx - half * 0.6,
            cx + half * 0.6,
            cx - half * 0.6,
            cx + half * 0.6,
            cx - half,
            half * 2.0,
            yq1 - yq3,
            cx - half,
            cx + half,
        );
        for &o in &s.outliers {
            let _ = write!(
                svg,
                "<circle cx=\"{cx:.2}\" cy=\"{:.2}\" r=\"2.5\" fill=\"none\" stroke=\"black\"/>\n",
                frame.sy(o)
            );
        }
        let _ = write!(
            svg,
            "<text x=\"{cx:.2}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n\
             <text x=\"{cx:.2}\" y=\"{}\" text-anchor=\"middle\" fill=\"#555555\">{}</text>\n",
            HEIGHT - MARGIN_BOTTOM + 18.0,
            escape(&g.label),
            HEIGHT - MARGIN_BOTTOM + 34.0,
            escape(&g.sublabel)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(seed: u64, episode: usize, ret: f64) -> EpisodeRecord {
        EpisodeRecord {
            seed,
            episode,
            ret,
            steps: 5,
            clamp_rate: 0.0,
            graph_edges: 10,
            wall_ms: 1,
        }
    }

    #[test]
    fn curves_average_across_seeds() {
        let records = vec![
            record(0, 0, 1.0),
            record(1, 0, 3.0),
            record(0, 1, -2.0),
            record(1, 1, -4.0),
        ];
        let curve = curve_from_records("x".into(), &records);
        assert_eq!(curve.points.len(), 2);
        assert_eq!(curve.points[0], (0, 2.0, std_sample(&[1.0, 3.0]) / 2f64.sqrt()));
        assert_eq!(curve.points[1].1, -3.0);
    }

    #[test]
    fn single_seed_curve_has_no_band() {
        let curve = curve_from_records("x".into(), &[record(0, 0, 1.0), record(0, 1, 2.0)]);
        assert!(curve.points.iter().all(|&(_, _, sem)| sem == 0.0));
        let svg = learning_curves_svg(&[curve]);
        assert!(!svg.contains("<polygon"));
        assert!(svg.contains("<polyline"));
    }

    #[test]
    fn multi_seed_curve_draws_band_and_legend() {
        let records = vec![record(0, 0, 1.0), record(1, 0, 3.0), record(0, 1, 2.0), record(1, 1, 6.0)];
        let svg = learning_curves_svg(&[curve_from_records("demo-run".into(), &records)]);
        assert!(svg.contains("<polygon"));
        assert!(svg.contains("demo-run"));
        assert!(svg.starts_with("<svg "));
        assert!(svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn box_stats_match_hand_computation() {
        // Q1 = 2, median = 3, Q3 = 4, IQR = 2; 10 is beyond 4 + 3.
        let s = box_stats(&[1.0, 2.0, 3.0, 4.0, 10.0]);
        assert_eq!(s.q1, 2.0);
        assert_eq!(s.median, 3.0);
        assert_eq!(s.q3, 4.0);
        assert_eq!(s.whisker_lo, 1.0);
        assert_eq!(s.whisker_hi, 4.0);
        assert_eq!(s.outliers, vec![10.0]);
    }

    #[test]
    fn box_plot_renders_outlier_circles() {
        let groups = vec![
            BoxGroup {
                label: "run".into(),
                sublabel: "given".into(),
                values: vec![1.0, 2.0, 3.0, 4.0, 10.0],
            },
            BoxGroup {
                label: "run".into(),
                sublabel: "pi".into(),
                values: vec![0.5, 0.6, 0.7],
            },
        ];
        let svg = box_plot_svg(&groups, "spread");
        assert_eq!(svg.matches("<circle").count(), 1);
        assert_eq!(svg.matches("<rect").count(), 3); // background + two boxes
        assert!(svg.contains("given") && svg.contains("pi"));
    }

    #[test]
    fn ticks_cover_range_on_round_values() {
        let t = ticks(0.0, 100.0, 5);
        assert_eq!(t, vec![0.0, 20.0, 40.0, 60.0, 80.0, 100.0]);
        let t = ticks(-1.0, 1.0, 4);
        assert!(t.contains(&0.0));
        assert!(t.first().unwrap() >= &-1.0 && t.last().unwrap() <= &1.0);
    }

    #[test]
    fn flat_data_still_renders() {
        let curve = curve_from_records(
            "flat".into(),
            &[record(0, 0, 5.0), record(1, 0, 5.0), record(0, 1, 5.0), record(1, 1, 5.0)],
        );
        let svg = learning_curves_svg(&[curve]);
        assert!(svg.contains("<polyline"));
        assert!(!svg.contains("NaN"));
    }
}
