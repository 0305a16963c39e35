//! Self-contained SVG figures from result files.
//!
//! Every series is one `<polyline>`; every plotted point carries one
//! `<path class="errorbar">` spanning mean ± sample standard deviation over
//! repeats. Output depends only on the input rows.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::experiment::{read_results, Status, STABILITY_HEADER};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    ErrorVsN,
    ErrorVsDepth,
    ErrorVsEta,
    Stability,
}

impl PlotKind {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "error_vs_N" | "error_vs_n" => PlotKind::ErrorVsN,
            "error_vs_depth" => PlotKind::ErrorVsDepth,
            "error_vs_eta" => PlotKind::ErrorVsEta,
            "stability" => PlotKind::Stability,
            _ => return Err(Error::Plot(format!("unknown plot kind {s:?}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    pub x: f64,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<Point>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Figure {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub series: Vec<Series>,
    /// Horizontal reference lines (label, y).
    pub references: Vec<(String, f64)>,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Groups `(series, x, y)` triples into series sorted by x.
fn aggregate(samples: Vec<(String, f64, f64)>) -> Vec<Series> {
    let mut groups: BTreeMap<String, BTreeMap<u64, (f64, Vec<f64>)>> = BTreeMap::new();
    for (label, x, y) in samples {
        // Order keys by the bits of nonnegative x, which sorts like x.
        groups
            .entry(label)
            .or_default()
            .entry(x.to_bits())
            .or_insert_with(|| (x, Vec::new()))
            .1
            .push(y);
    }
    groups
        .into_iter()
        .map(|(label, pts)| Series {
            label,
            points: pts
                .into_values()
                .map(|(x, ys)| {
                    let (mean, std) = mean_std(&ys);
                    Point { x, mean, std }
                })
                .collect(),
        })
        .collect()
}

fn rule_tag(rule: &str, k: usize, d: usize) -> String {
    match rule {
        "k_local" => format!("{k}-local d={d}"),
        "k_global" => format!("{k}-global d={d}"),
        other => format!("{other} d={d}"),
    }
}

fn depth_of(model: &str) -> Option<usize> {
    if model == "perceptron" {
        return Some(0);
    }
    if let Some(l) = model.strip_prefix("ntk:") {
        return l.parse().ok();
    }
    model.split_once('x').and_then(|(l, _)| l.parse().ok())
}

/// Builds the figure from a results (or stability) CSV.
pub fn load_figure(input: &Path, kind: PlotKind) -> Result<Figure> {
    if kind == PlotKind::Stability {
        return stability_figure(input);
    }
    let rows = read_results(input).map_err(|e| Error::Plot(e.to_string()))?;
    let usable: Vec<_> = rows
        .into_iter()
        .filter(|r| matches!(r.status, Status::Ok | Status::NotConverged) && r.model != "rule")
        .collect();
    if usable.is_empty() {
        return Err(Error::Plot(format!("{}: no plottable rows", input.display())));
    }
    let tags: std::collections::BTreeSet<String> =
        usable.iter().map(|r| rule_tag(&r.rule, r.k, r.d)).collect();
    let many_rules = tags.len() > 1;
    let label = |r: &super::experiment::RunResult, what: String| {
        if many_rules {
            format!("{} {what}", rule_tag(&r.rule, r.k, r.d))
        } else {
            what
        }
    };
    let title = if many_rules { String::new() } else { tags.into_iter().next().unwrap_or_default() };
    let fig = match kind {
        PlotKind::ErrorVsN => Figure {
            title,
            x_label: "N".into(),
            y_label: "test error".into(),
            log_x: true,
            series: aggregate(
                usable
                    .iter()
                    .map(|r| (label(r, r.model.clone()), r.n as f64, r.test_error))
                    .collect(),
            ),
            references: vec![],
        },
        PlotKind::ErrorVsDepth => {
            let mut samples = Vec::new();
            for r in &usable {
                let depth = depth_of(&r.model)
                    .ok_or_else(|| Error::Plot(format!("cannot read depth from model {:?}", r.model)))?;
                let family = if r.model.starts_with("ntk:") {
                    "NTK".to_string()
                } else if let Some((_, h)) = r.model.split_once('x') {
                    format!("H={h}")
                } else {
                    "perceptron".to_string()
                };
                samples.push((label(r, format!("{family} N={}", r.n)), depth as f64, r.test_error));
            }
            Figure {
                title,
                x_label: "depth L".into(),
                y_label: "test error".into(),
                log_x: false,
                series: aggregate(samples),
                references: vec![],
            }
        }
        PlotKind::ErrorVsEta => {
            let mut samples = Vec::new();
            let mut refs = BTreeMap::new();
            for r in &usable {
                match r.eta {
                    Some(eta) => samples.push((label(r, format!("{} N={}", r.model, r.n)), eta, r.test_error)),
                    None => {
                        refs.insert(label(r, format!("{} N={}", r.model, r.n)), r.test_error);
                    }
                }
            }
            if samples.is_empty() {
                return Err(Error::Plot("no rows with a learning rate".into()));
            }
            Figure {
                title,
                x_label: "learning rate".into(),
                y_label: "test error".into(),
                log_x: true,
                series: aggregate(samples),
                references: refs.into_iter().collect(),
            }
        }
        PlotKind::Stability => unreachable!(),
    };
    Ok(fig)
}

fn stability_figure(input: &Path) -> Result<Figure> {
    let bad = |m: String| Error::Plot(format!("{}: {m}", input.display()));
    let mut rdr = csv::Reader::from_path(input).map_err(|e| bad(e.to_string()))?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| bad(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let plain = header == ["v", "s"];
    if !plain && header != STABILITY_HEADER {
        return Err(bad(format!("expected columns v,s or {}", STABILITY_HEADER.join(","))));
    }
    // Resumed runs may repeat a curve; the last copy of each point wins.
    let mut points: BTreeMap<(String, String, u64), (f64, f64)> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("bad number {s:?}")));
        let (series, repeat, v, s) = if plain {
            ("s(v)".to_string(), String::new(), num(&rec[0])?, num(&rec[1])?)
        } else {
            let name = if &rec[1] == "rule" {
                "true label".to_string()
            } else {
                format!("{} N={}", &rec[1], &rec[2])
            };
            (format!("{}: {name}", &rec[0]), rec[3].to_string(), num(&rec[4])?, num(&rec[5])?)
        };
        points.insert((series, repeat, v.to_bits()), (v, s));
    }
    if points.is_empty() {
        return Err(bad("no data rows".into()));
    }
    let names: std::collections::BTreeSet<String> = points
        .keys()
        .map(|(s, _, _)| s.split(": ").next().unwrap_or("").to_string())
        .collect();
    let strip = names.len() == 1;
    let samples = points
        .into_iter()
        .map(|((series, _, _), (v, s))| {
            let label = if strip {
                series.split_once(": ").map_or(series.clone(), |(_, b)| b.to_string())
            } else {
                series
            };
            (label, v, s)
        })
        .collect();
    Ok(Figure {
        title: if strip && !plain { names.into_iter().next().unwrap_or_default() } else { String::new() },
        x_label: "v".into(),
        y_label: "s(v)".into(),
        log_x: true,
        series: aggregate(samples),
        references: vec![],
    })
}

const W: f64 = 640.0;
const H: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 190.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 55.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Compact tick label.
fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if (1e-3..1e4).contains(&a) {
        let s = format!("{v:.4}");
        let s = s.trim_end_matches('0').trim_end_matches('.');
        s.to_string()
    } else {
        format!("{v:.0e}")
    }
}

fn nice_step(span: f64, target: usize) -> f64 {
    let raw = span / target as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let f = raw / mag;
    let nice = if f <= 1.0 {
        1.0
    } else if f <= 2.0 {
        2.0
    } else if f <= 5.0 {
        5.0
    } else {
        10.0
    };
    nice * mag
}

struct Axis {
    lo: f64,
    hi: f64,
    log: bool,
    pix_lo: f64,
    pix_hi: f64,
}

impl Axis {
    fn map(&self, v: f64) -> f64 {
        let (a, b, v) = if self.log {
            (self.lo.log10(), self.hi.log10(), v.log10())
        } else {
            (self.lo, self.hi, v)
        };
        self.pix_lo + (v - a) / (b - a) * (self.pix_hi - self.pix_lo)
    }

    fn ticks(&self) -> Vec<f64> {
        if self.log {
            let (a, b) = (self.lo.log10().ceil() as i32, self.hi.log10().floor() as i32);
            let mut t: Vec<f64> = (a..=b).map(|e| 10f64.powi(e)).collect();
            if t.len() < 2 {
                t = vec![self.lo, self.hi];
            }
            t
        } else {
            let step = nice_step(self.hi - self.lo, 5);
            let first = (self.lo / step).ceil() as i64;
            let last = (self.hi / step).floor() as i64;
            (first..=last).map(|i| i as f64 * step).collect()
        }
    }
}

fn x_axis(fig: &Figure) -> Result<Axis> {
    let xs: Vec<f64> = fig.series.iter().flat_map(|s| s.points.iter().map(|p| p.x)).collect();
    let (mut lo, mut hi) = xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    if fig.log_x {
        if lo <= 0.0 {
            return Err(Error::Plot("log axis needs positive x values".into()));
        }
        if lo == hi {
            lo /= 2.0;
            hi *= 2.0;
        } else {
            let pad = (hi / lo).powf(0.05);
            lo /= pad;
            hi *= pad;
        }
    } else if lo == hi {
        lo -= 1.0;
        hi += 1.0;
    } else {
        let pad = 0.05 * (hi - lo);
        lo -= pad;
        hi += pad;
    }
    Ok(Axis {
        lo,
        hi,
        log: fig.log_x,
        pix_lo: LEFT,
        pix_hi: W - RIGHT,
    })
}

fn y_axis(fig: &Figure) -> Axis {
    let mut hi = fig
        .series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.mean + p.std))
        .chain(fig.references.iter().map(|r| r.1))
        .fold(0.0f64, f64::max);
    if hi <= 0.0 {
        hi = 1.0;
    }
    let step = nice_step(hi, 5);
    Axis {
        lo: 0.0,
        hi: (hi / step).ceil() * step,
        log: false,
        pix_lo: H - BOTTOM,
        pix_hi: TOP,
    }
}

pub fn render_svg(fig: &Figure) -> Result<String> {
    if fig.series.iter().all(|s| s.points.is_empty()) {
        return Err(Error::Plot("nothing to plot".into()));
    }
    let xa = x_axis(fig)?;
    let ya = y_axis(fig);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    if !fig.title.is_empty() {
        let _ = writeln!(s, r#"<text x="{:.2}" y="22" text-anchor="middle" font-size="14">{}</text>"#, (LEFT + W - RIGHT) / 2.0, esc(&fig.title));
    }
    let (x0, x1, y0, y1) = (LEFT, W - RIGHT, H - BOTTOM, TOP);
    let _ = writeln!(s, r#"<path class="axes" d="M{x0:.2} {y1:.2} V{y0:.2} H{x1:.2}" fill="none" stroke="black"/>"#);
    for t in xa.ticks() {
        let px = xa.map(t);
        let _ = writeln!(
            s,
            r#"<path class="tick" d="M{px:.2} {y0:.2} v5" stroke="black"/><text x="{px:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            y0 + 18.0,
            fmt_tick(t)
        );
    }
    for t in ya.ticks() {
        let py = ya.map(t);
        let _ = writeln!(
            s,
            r##"<path class="tick" d="M{x0:.2} {py:.2} h-5" stroke="black"/><path class="grid" d="M{x0:.2} {py:.2} H{x1:.2}" stroke="#dddddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
            x0 - 8.0,
            py + 4.0,
            fmt_tick(t)
        );
    }
    let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, (x0 + x1) / 2.0, H - 15.0, esc(&fig.x_label));
    let _ = writeln!(
        s,
        r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        esc(&fig.y_label)
    );

    let mut legend_y = TOP + 10.0;
    for (i, series) in fig.series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = series
            .points
            .iter()
            .map(|p| format!("{:.2},{:.2}", xa.map(p.x), ya.map(p.mean)))
            .collect();
        let _ = writeln!(s, r#"<polyline class="series" points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, pts.join(" "));
        for p in &series.points {
            let (px, top, bot) = (xa.map(p.x), ya.map(p.mean + p.std), ya.map((p.mean - p.std).max(ya.lo)));
            let _ = writeln!(
                s,
                r#"<path class="errorbar" d="M{px:.2} {bot:.2} V{top:.2} M{:.2} {top:.2} H{:.2} M{:.2} {bot:.2} H{:.2}" stroke="{color}"/><circle cx="{px:.2}" cy="{:.2}" r="3" fill="{color}"/>"#,
                px - 3.0,
                px + 3.0,
                px - 3.0,
                px + 3.0,
                ya.map(p.mean)
            );
        }
        let _ = writeln!(
            s,
            r#"<path class="legend" d="M{:.2} {legend_y:.2} h18" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            x1 + 12.0,
            x1 + 36.0,
            legend_y + 4.0,
            esc(&series.label)
        );
        legend_y += 18.0;
    }
    for (label, y) in &fig.references {
        let py = ya.map(*y);
        let _ = writeln!(s, r#"<line class="reference" x1="{x0:.2}" y1="{py:.2}" x2="{x1:.2}" y2="{py:.2}" stroke="black" stroke-dasharray="6 4"/>"#);
        let _ = writeln!(
            s,
            r#"<path class="legend" d="M{:.2} {legend_y:.2} h18" stroke="black" stroke-dasharray="6 4"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            x1 + 12.0,
            x1 + 36.0,
            legend_y + 4.0,
            esc(label)
        );
        legend_y += 18.0;
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Reads `input`, renders `kind`, and writes `output`. Nothing is written
/// when the input has no plottable rows.
pub fn emit_plot(input: impl AsRef<Path>, kind: PlotKind, output: impl AsRef<Path>) -> Result<()> {
    let fig = load_figure(input.as_ref(), kind)?;
    let svg = render_svg(&fig)?;
    let out = output.as_ref();
    fs::write(out, svg).map_err(|e| Error::io(out, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::experiment::RESULTS_HEADER;

    fn results_csv(rows: &[&str]) -> String {
        let mut s = RESULTS_HEADER.join(",");
        s.push('\n');
        for r in rows {
            s.push_str(r);
            s.push('\n');
        }
        s
    }

    fn row(model: &str, n: usize, eta: &str, repeat: usize, err: f64) -> String {
        format!("e,k_local,10,2,{n},{model},cross_entropy,{eta},{repeat},{err},50,ok,3,1")
    }

    #[test]
    fn two_series_three_n() {
        let dir = tempfile::tempdir().unwrap();
        let mut rows = Vec::new();
        for model in ["1x8", "3x8"] {
            for n in [100, 200, 400] {
                for r in 0..2 {
                    rows.push(row(model, n, "0.1", r, 0.3 + 0.01 * r as f64));
                }
            }
        }
        let refs: Vec<&str> = rows.iter().map(String::as_str).collect();
        let input = dir.path().join("r.csv");
        fs::write(&input, results_csv(&refs)).unwrap();
        let out = dir.path().join("p.svg");
        emit_plot(&input, PlotKind::ErrorVsN, &out).unwrap();
        let svg = fs::read_to_string(&out).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert_eq!(svg.matches(r#"class="errorbar""#).count(), 6);
        let out2 = dir.path().join("q.svg");
        emit_plot(&input, PlotKind::ErrorVsN, &out2).unwrap();
        assert_eq!(fs::read(&out).unwrap(), fs::read(&out2).unwrap());
    }

    #[test]
    fn empty_input_writes_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("r.csv");
        fs::write(&input, results_csv(&[])).unwrap();
        let out = dir.path().join("p.svg");
        assert!(matches!(emit_plot(&input, PlotKind::ErrorVsN, &out), Err(Error::Plot(_))));
        assert!(!out.exists());
        fs::write(&input, "v,s\n").unwrap();
        assert!(emit_plot(&input, PlotKind::Stability, &out).is_err());
        assert!(!out.exists());
    }

    #[test]
    fn schema_mismatch_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("r.csv");
        fs::write(&input, "a,b\n1,2\n").unwrap();
        let out = dir.path().join("p.svg");
        assert!(emit_plot(&input, PlotKind::ErrorVsDepth, &out).is_err());
        assert!(emit_plot(&input, PlotKind::Stability, &out).is_err());
    }

    #[test]
    fn depth_and_eta_figures() {
        let dir = tempfile::tempdir().unwrap();
        let rows = [
            row("1x8", 100, "0.1", 0, 0.2),
            row("3x8", 100, "0.1", 0, 0.1),
            row("ntk:1", 100, "", 0, 0.4),
            row("ntk:3", 100, "", 0, 0.45),
            row("1x8", 100, "0.01", 0, 0.3),
        ];
        let refs: Vec<&str> = rows.iter().map(String::as_str).collect();
        let input = dir.path().join("r.csv");
        fs::write(&input, results_csv(&refs)).unwrap();
        let depth = load_figure(&input, PlotKind::ErrorVsDepth).unwrap();
        assert_eq!(depth.series.len(), 2);
        let eta = load_figure(&input, PlotKind::ErrorVsEta).unwrap();
        assert_eq!(eta.references.len(), 2);
        let svg = render_svg(&eta).unwrap();
        assert_eq!(svg.matches(r#"class="reference""#).count(), 2);
    }

    #[test]
    fn stability_plot_from_plain_curve() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("s.csv");
        fs::write(&input, "v,s\n0.01,1\n0.1,0.9\n1,0.2\n").unwrap();
        let fig = load_figure(&input, PlotKind::Stability).unwrap();
        assert_eq!(fig.series.len(), 1);
        assert_eq!(fig.series[0].points.len(), 3);
    }
}
