use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::config::ExperimentId;
use super::record::ExperimentRecord;
use super::AuxTable;
use crate::error::{Result, SiviError};

const WIDTH: f64 = 480.0;
const HEIGHT: f64 = 360.0;
const MARGIN_LEFT: f64 = 64.0;
const MARGIN_RIGHT: f64 = 16.0;
const MARGIN_TOP: f64 = 32.0;
const MARGIN_BOTTOM: f64 = 48.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

#[derive(Debug, Clone, Default)]
struct Series {
    label: String,
    /// `(x, mean, sd)`; `sd` of 0 draws no band.
    points: Vec<(f64, f64, f64)>,
}

#[derive(Debug, Clone)]
struct Guide {
    label: String,
    exponent: f64,
    /// Point the power law passes through.
    anchor: (f64, f64),
}

#[derive(Debug, Clone, Default)]
struct Panel {
    title: String,
    x_label: String,
    y_label: String,
    log_x: bool,
    log_y: bool,
    series: Vec<Series>,
    guides: Vec<Guide>,
    hlines: Vec<(String, f64)>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn fmt_tick(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e4) {
        format!("{v:.0e}")
    } else {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

struct Axis {
    lo: f64,
    hi: f64,
    log: bool,
    px_lo: f64,
    px_hi: f64,
}

impl Axis {
    fn new(values: &[f64], log: bool, px_lo: f64, px_hi: f64) -> Self {
        let vals: Vec<f64> = values
            .iter()
            .copied()
            .filter(|v| v.is_finite() && (!log || *v > 0.0))
            .map(|v| if log { v.log10() } else { v })
            .collect();
        let (mut lo, mut hi) = vals
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        if !lo.is_finite() {
            lo = 0.0;
            hi = 1.0;
        }
        if hi - lo < 1e-12 {
            lo -= 0.5;
            hi += 0.5;
        }
        let pad = 0.05 * (hi - lo);
        Self {
            lo: lo - pad,
            hi: hi + pad,
            log,
            px_lo,
            px_hi,
        }
    }

    fn map(&self, v: f64) -> Option<f64> {
        if !v.is_finite() || (self.log && v <= 0.0) {
            return None;
        }
        let t = if self.log { v.log10() } else { v };
        Some(self.px_lo + (t - self.lo) / (self.hi - self.lo) * (self.px_hi - self.px_lo))
    }

    fn ticks(&self) -> Vec<f64> {
        if self.log {
            let (a, b) = (self.lo.ceil() as i32, self.hi.floor() as i32);
            let t: Vec<f64> = (a..=b).map(|e| 10f64.powi(e)).collect();
            if t.len() >= 2 {
                return t;
            }
            return vec![
                10f64.powf(self.lo + 0.05 * (self.hi - self.lo)),
                10f64.powf(self.hi - 0.05 * (self.hi - self.lo)),
            ];
        }
        let span = self.hi - self.lo;
        let raw = span / 5.0;
        let mag = 10f64.powf(raw.log10().floor());
        let step = [1.0, 2.0, 5.0, 10.0]
            .iter()
            .map(|m| m * mag)
            .find(|s| span / s <= 6.0)
            .unwrap_or(10.0 * mag);
        let mut t = (self.lo / step).ceil() * step;
        let mut out = Vec::new();
        while t <= self.hi + 1e-12 {
            out.push(if t.abs() < 1e-12 * step { 0.0 } else { t });
            t += step;
        }
        out
    }
}

fn render_panel(p: &Panel) -> String {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for s in &p.series {
        for &(x, m, sd) in &s.points {
            xs.push(x);
            ys.extend([m, m - sd, m + sd]);
        }
    }
    ys.extend(p.hlines.iter().map(|h| h.1));
    if p.log_y {
        // Bands reaching below zero would otherwise stretch the axis to tiny values.
        let floor = p
            .series
            .iter()
            .flat_map(|s| s.points.iter().map(|q| q.1))
            .filter(|v| *v > 0.0)
            .fold(f64::INFINITY, f64::min);
        ys.retain(|v| *v >= floor / 10.0);
    }
    let xa = Axis::new(&xs, p.log_x, MARGIN_LEFT, WIDTH - MARGIN_RIGHT);
    let ya = Axis::new(&ys, p.log_y, HEIGHT - MARGIN_BOTTOM, MARGIN_TOP);
    let mut out = String::new();
    let _ = write!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    out.push_str(r#"<rect x="0" y="0" width="100%" height="100%" fill="white"/>"#);
    let _ = write!(
        out,
        r#"<text x="{}" y="18" text-anchor="middle" font-size="13">{}</text>"#,
        WIDTH / 2.0,
        escape(&p.title)
    );
    let (x0, x1, y0, y1) = (MARGIN_LEFT, WIDTH - MARGIN_RIGHT, HEIGHT - MARGIN_BOTTOM, MARGIN_TOP);
    let _ = write!(
        out,
        r##"<rect x="{x0}" y="{y1}" width="{}" height="{}" fill="none" stroke="#444"/>"##,
        x1 - x0,
        y0 - y1
    );
    for t in xa.ticks() {
        if let Some(px) = xa.map(t) {
            let _ = write!(
                out,
                r##"<line x1="{px:.2}" y1="{y0}" x2="{px:.2}" y2="{:.2}" stroke="#444"/><text x="{px:.2}" y="{:.2}" text-anchor="middle">{}</text>"##,
                y0 + 4.0,
                y0 + 16.0,
                fmt_tick(t)
            );
        }
    }
    for t in ya.ticks() {
        if let Some(py) = ya.map(t) {
            let _ = write!(
                out,
                r##"<line x1="{:.2}" y1="{py:.2}" x2="{x0}" y2="{py:.2}" stroke="#444"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
                x0 - 4.0,
                x0 - 6.0,
                py + 4.0,
                fmt_tick(t)
            );
        }
    }
    let _ = write!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 12.0,
        escape(&p.x_label)
    );
    let _ = write!(
        out,
        r#"<text x="14" y="{:.2}" text-anchor="middle" transform="rotate(-90 14 {:.2})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(&p.y_label)
    );

    for (label, y) in &p.hlines {
        if let Some(py) = ya.map(*y) {
            let _ = write!(
                out,
                r##"<line x1="{x0}" y1="{py:.2}" x2="{x1}" y2="{py:.2}" stroke="#888" stroke-dasharray="2,3"/><text x="{:.2}" y="{:.2}" text-anchor="end" fill="#666">{}</text>"##,
                x1 - 4.0,
                py - 4.0,
                escape(label)
            );
        }
    }
    for (i, s) in p.series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let upper: Vec<(f64, f64)> = s
            .points
            .iter()
            .filter_map(|&(x, m, sd)| Some((xa.map(x)?, ya.map(m + sd)?)))
            .collect();
        let lower: Vec<(f64, f64)> = s
            .points
            .iter()
            .filter_map(|&(x, m, sd)| Some((xa.map(x)?, ya.map(m - sd).or_else(|| ya.map(m))?)))
            .collect();
        if s.points.iter().any(|q| q.2 > 0.0) && upper.len() == lower.len() && upper.len() >= 2 {
            let pts: Vec<String> = upper
                .iter()
                .chain(lower.iter().rev())
                .map(|(a, b)| format!("{a:.2},{b:.2}"))
                .collect();
            let _ = write!(
                out,
                r#"<polygon points="{}" fill="{color}" fill-opacity="0.18" stroke="none"/>"#,
                pts.join(" ")
            );
        }
        let line: Vec<(f64, f64)> = s
            .points
            .iter()
            .filter_map(|&(x, m, _)| Some((xa.map(x)?, ya.map(m)?)))
            .collect();
        if line.len() >= 2 {
            let pts: Vec<String> = line.iter().map(|(a, b)| format!("{a:.2},{b:.2}")).collect();
            let _ = write!(
                out,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.6"/>"#,
                pts.join(" ")
            );
        }
        for (a, b) in &line {
            let _ = write!(out, r#"<circle cx="{a:.2}" cy="{b:.2}" r="2.6" fill="{color}"/>"#);
        }
        let _ = write!(
            out,
            r#"<text x="{:.2}" y="{:.2}" fill="{color}">{}</text>"#,
            x0 + 8.0,
            y1 + 14.0 + 13.0 * i as f64,
            escape(&s.label)
        );
    }
    let (xmin, xmax) = xs
        .iter()
        .filter(|v| v.is_finite() && (!p.log_x || **v > 0.0))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    for (j, g) in p.guides.iter().enumerate() {
        let f = |x: f64| g.anchor.1 * (x / g.anchor.0).powf(g.exponent);
        let steps = 32;
        let pts: Vec<String> = (0..=steps)
            .filter_map(|i| {
                let x = if p.log_x {
                    xmin * (xmax / xmin).powf(i as f64 / steps as f64)
                } else {
                    xmin + (xmax - xmin) * i as f64 / steps as f64
                };
                let (a, b) = (xa.map(x)?, ya.map(f(x))?);
                (y1..=y0).contains(&b).then(|| format!("{a:.2},{b:.2}"))
            })
            .collect();
        if pts.len() >= 2 {
            let _ = write!(
                out,
                r##"<polyline points="{}" fill="none" stroke="#000" stroke-width="1" stroke-dasharray="6,4"/>"##,
                pts.join(" ")
            );
        }
        let _ = write!(
            out,
            r##"<text x="{:.2}" y="{:.2}" text-anchor="end" fill="#000">{}</text>"##,
            x1 - 6.0,
            y1 + 14.0 + 13.0 * j as f64,
            escape(&g.label)
        );
    }
    out.push_str("</svg>");
    out
}

fn render_heatmap(title: &str, rows: &[(f64, f64, f64)]) -> String {
    let xs: Vec<f64> = {
        let mut v: Vec<f64> = rows.iter().map(|r| r.0).collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    };
    let ys: Vec<f64> = {
        let mut v: Vec<f64> = rows.iter().map(|r| r.1).collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    };
    let vmax = rows
        .iter()
        .map(|r| r.2)
        .filter(|v| v.is_finite())
        .fold(0.0, f64::max)
        .max(1e-300);
    let side = (HEIGHT - MARGIN_TOP - MARGIN_BOTTOM).min(WIDTH - MARGIN_LEFT - MARGIN_RIGHT);
    let (cw, ch) = (side / xs.len().max(1) as f64, side / ys.len().max(1) as f64);
    let mut out = String::new();
    let _ = write!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    out.push_str(r#"<rect x="0" y="0" width="100%" height="100%" fill="white"/>"#);
    let _ = write!(
        out,
        r#"<text x="{}" y="18" text-anchor="middle" font-size="13">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    let left = (WIDTH - side) / 2.0;
    for &(x, y, v) in rows {
        let i = xs.partition_point(|t| *t < x);
        let j = ys.partition_point(|t| *t < y);
        let t = if v.is_finite() {
            (v / vmax).sqrt().clamp(0.0, 1.0)
        } else {
            0.0
        };
        let shade = (255.0 * (1.0 - t)).round() as u8;
        let _ = write!(
            out,
            r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="rgb({shade},{shade},255)"/>"#,
            left + i as f64 * cw,
            MARGIN_TOP + side - (j + 1) as f64 * ch,
            cw + 0.05,
            ch + 0.05
        );
    }
    if let (Some(x0), Some(x1), Some(y0), Some(y1)) = (xs.first(), xs.last(), ys.first(), ys.last()) {
        let _ = write!(
            out,
            r#"<text x="{left:.2}" y="{:.2}">x: [{}, {}], y: [{}, {}]</text>"#,
            MARGIN_TOP + side + 16.0,
            fmt_tick(*x0),
            fmt_tick(*x1),
            fmt_tick(*y0),
            fmt_tick(*y1)
        );
    }
    out.push_str("</svg>");
    out
}

/// Lays out panels on a grid by nesting each as a positioned `<svg>`.
fn render_grid(title: &str, panels: &[String], cols: usize) -> String {
    let rows = panels.len().div_ceil(cols.max(1));
    let (w, h) = (WIDTH * cols as f64, HEIGHT * rows as f64 + 28.0);
    let mut out = String::new();
    let _ = write!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#
    );
    out.push_str(r#"<rect x="0" y="0" width="100%" height="100%" fill="white"/>"#);
    let _ = write!(
        out,
        r#"<text x="{}" y="18" text-anchor="middle" font-size="14">{}</text>"#,
        w / 2.0,
        escape(title)
    );
    for (i, p) in panels.iter().enumerate() {
        let (x, y) = ((i % cols) as f64 * WIDTH, 28.0 + (i / cols) as f64 * HEIGHT);
        out.push_str(&p.replacen("<svg ", &format!(r#"<svg x="{x}" y="{y}" "#), 1));
    }
    out.push_str("</svg>");
    out
}

/// Mean and standard deviation across seeds of `metric`, grouped by the
/// numeric parameter `x_key`, over per-seed records passing `filter`.
fn seed_series<F: Fn(&ExperimentRecord) -> bool>(
    records: &[ExperimentRecord],
    metric: &str,
    x_key: &str,
    label: &str,
    filter: F,
) -> Option<Series> {
    let mut groups: BTreeMap<i64, (f64, Vec<f64>)> = BTreeMap::new();
    for r in records
        .iter()
        .filter(|r| r.metric == metric && r.seed.is_some() && filter(r))
    {
        let Some(x) = r.param_f64(x_key) else { continue };
        if r.value.is_finite() {
            groups
                .entry((x * 1e6).round() as i64)
                .or_insert((x, Vec::new()))
                .1
                .push(r.value);
        }
    }
    if groups.is_empty() {
        return None;
    }
    let points = groups
        .into_values()
        .map(|(x, v)| {
            let n = v.len() as f64;
            let m = v.iter().sum::<f64>() / n;
            let sd = if v.len() > 1 {
                (v.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            (x, m, sd)
        })
        .collect();
    Some(Series {
        label: label.to_string(),
        points,
    })
}

/// Aggregate (seedless) values of `metric` against the numeric parameter `x_key`.
fn aggregate_series<F: Fn(&ExperimentRecord) -> bool>(
    records: &[ExperimentRecord],
    metric: &str,
    x_key: &str,
    label: &str,
    filter: F,
) -> Option<Series> {
    let mut points: Vec<(f64, f64, f64)> = records
        .iter()
        .filter(|r| r.metric == metric && r.seed.is_none() && filter(r))
        .filter_map(|r| Some((r.param_f64(x_key)?, r.value, 0.0)))
        .filter(|p| p.1.is_finite())
        .collect();
    if points.is_empty() {
        return None;
    }
    points.sort_by(|a, b| a.0.total_cmp(&b.0));
    Some(Series {
        label: label.to_string(),
        points,
    })
}

fn first_point(s: &Series) -> (f64, f64) {
    (s.points[0].0, s.points[0].1)
}

fn distinct_params(records: &[ExperimentRecord], metric: &str, key: &str) -> Vec<f64> {
    let mut v: Vec<f64> = records
        .iter()
        .filter(|r| r.metric == metric)
        .filter_map(|r| r.param_f64(key))
        .collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

struct Emitter<'a> {
    dir: &'a Path,
    id: ExperimentId,
    written: Vec<PathBuf>,
    warnings: Vec<String>,
}

impl Emitter<'_> {
    fn write(&mut self, name: &str, svg: String) -> Result<()> {
        check_svg_well_formed(&svg)?;
        let path = self.dir.join(format!("{}_{name}.svg", self.id));
        std::fs::write(&path, svg)?;
        self.written.push(path);
        Ok(())
    }

    fn panel(&mut self, name: &str, panel: Option<Panel>, needs: &str) -> Result<()> {
        match panel {
            Some(p) if !p.series.is_empty() => self.write(name, render_panel(&p)),
            _ => {
                self.warnings
                    .push(format!("{}: panel '{name}' skipped, metric '{needs}' missing", self.id));
                Ok(())
            }
        }
    }
}

fn exp1_panels(e: &mut Emitter<'_>, records: &[ExperimentRecord]) -> Result<()> {
    let series: Vec<Series> = [("tv_grid", "grid"), ("tv_sampling", "sampling")]
        .iter()
        .filter_map(|(m, l)| seed_series(records, m, "W", l, |_| true))
        .collect();
    let panel = series.first().map(|s| Panel {
        title: "TV vs network width".into(),
        x_label: "width W".into(),
        y_label: "total variation".into(),
        log_x: true,
        log_y: true,
        guides: vec![Guide {
            label: "W^-1/4".into(),
            exponent: -0.25,
            anchor: first_point(s),
        }],
        series: series.clone(),
        ..Panel::default()
    });
    e.panel("tv_width", panel, "tv_grid")
}

fn exp2_panels(e: &mut Emitter<'_>, records: &[ExperimentRecord]) -> Result<()> {
    let gauss: Vec<Series> = [("sivi", "SIVI"), ("sivi_tail", "SIVI + t5 tail")]
        .iter()
        .filter_map(|(f, l)| {
            seed_series(records, "kl_forward", "W", l, |r| {
                r.param_str("target") == Some("gaussian") && r.param_str("family") == Some(f)
            })
        })
        .collect();
    let panel = (!gauss.is_empty()).then(|| Panel {
        title: "Forward KL, Gaussian target".into(),
        x_label: "width W".into(),
        y_label: "KL(p || q)".into(),
        log_x: true,
        log_y: true,
        series: gauss,
        ..Panel::default()
    });
    e.panel("gaussian_kl", panel, "kl_forward")?;

    let student = seed_series(records, "kl_forward", "W", "SIVI", |r| {
        r.param_str("target") == Some("student_t")
    });
    let mut hlines = Vec::new();
    if let Some(r) = records.iter().find(|r| r.metric == "orlicz_reference_fixed") {
        hlines.push(("Orlicz bound (fixed envelope)".to_string(), r.value));
    }
    let measured = seed_series(
        records,
        "orlicz_reference",
        "W",
        "Orlicz bound (fitted envelope)",
        |_| true,
    );
    let panel = student.map(|s| Panel {
        title: "Forward KL, Student-t target".into(),
        x_label: "width W".into(),
        y_label: "KL(p || q)".into(),
        log_x: true,
        log_y: true,
        series: std::iter::once(s).chain(measured).collect(),
        hlines,
        ..Panel::default()
    });
    e.panel("student_kl", panel, "kl_forward")
}

fn exp3_panels(e: &mut Emitter<'_>, records: &[ExperimentRecord]) -> Result<()> {
    let ratio = seed_series(records, "mode_ratio", "K", "mode ratio", |_| true).map(|s| Panel {
        title: "Mode ratio vs K".into(),
        x_label: "inner samples K".into(),
        y_label: "right / left mass".into(),
        log_x: true,
        series: vec![s],
        hlines: vec![("balanced".into(), 1.0)],
        ..Panel::default()
    });
    e.panel("mode_ratio", ratio, "mode_ratio")?;
    let tv = seed_series(records, "tv_grid", "K", "grid TV", |_| true).map(|s| Panel {
        title: "TV vs K".into(),
        x_label: "inner samples K".into(),
        y_label: "total variation".into(),
        log_x: true,
        log_y: true,
        guides: vec![Guide {
            label: "K^-1/2".into(),
            exponent: -0.5,
            anchor: first_point(&s),
        }],
        series: vec![s],
        ..Panel::default()
    });
    e.panel("tv_k", tv, "tv_grid")
}

fn exp4_panels(e: &mut Emitter<'_>, records: &[ExperimentRecord], aux: &[AuxTable]) -> Result<()> {
    match aux.iter().find(|t| t.name == "heatmap") {
        Some(t) => {
            let (s, x, y, p, q) = (
                t.column("seed"),
                t.column("x"),
                t.column("y"),
                t.column("p"),
                t.column("q"),
            );
            let (Some(s), Some(x), Some(y), Some(p), Some(q)) = (s, x, y, p, q) else {
                return Err(SiviError::InvalidConfig("heatmap table lacks columns".into()));
            };
            let first = t.rows.iter().map(|r| r[s]).fold(f64::INFINITY, f64::min);
            let rows: Vec<&Vec<f64>> = t.rows.iter().filter(|r| r[s] == first).collect();
            let target: Vec<(f64, f64, f64)> = rows.iter().map(|r| (r[x], r[y], r[p])).collect();
            let fit: Vec<(f64, f64, f64)> = rows.iter().map(|r| (r[x], r[y], r[q])).collect();
            e.write("heatmap_target", render_heatmap("Target density", &target))?;
            e.write("heatmap_fit", render_heatmap("Variance-floored SIVI fit", &fit))?;
        }
        None => e
            .warnings
            .push(format!("{}: heatmap panels skipped, density grid missing", e.id)),
    }
    let series: Vec<Series> = [("target", "target"), ("fit", "fit")]
        .iter()
        .filter_map(|(src, l)| {
            seed_series(records, "branch_mass", "branch", l, |r| {
                r.param_str("source") == Some(src)
            })
        })
        .collect();
    let panel = (!series.is_empty()).then(|| Panel {
        title: "Branch masses".into(),
        x_label: "branch".into(),
        y_label: "mass in disk".into(),
        series,
        hlines: vec![("1/3".into(), 1.0 / 3.0)],
        ..Panel::default()
    });
    e.panel("branch_masses", panel, "branch_mass")
}

fn exp5_panels(e: &mut Emitter<'_>, records: &[ExperimentRecord], aux: &[AuxTable]) -> Result<()> {
    let ks = distinct_params(records, "theta_hat", "K");
    let ns = distinct_params(records, "theta_hat", "n");
    let abs_hat: Vec<ExperimentRecord> = records
        .iter()
        .filter(|r| r.metric == "theta_hat")
        .map(|r| ExperimentRecord {
            value: r.value.abs(),
            ..r.clone()
        })
        .collect();
    let theta_star = 0.03;
    let by_n: Vec<Series> = ks
        .iter()
        .filter_map(|&k| {
            seed_series(&abs_hat, "theta_hat", "n", &format!("K={k}"), |r| {
                r.param_f64("K") == Some(k)
            })
        })
        .collect();
    let panel = (!by_n.is_empty()).then(|| Panel {
        title: "|theta_hat| vs n".into(),
        x_label: "n".into(),
        y_label: "|theta_hat|".into(),
        log_x: true,
        series: by_n,
        hlines: vec![("theta*".into(), theta_star)],
        ..Panel::default()
    });
    e.panel("a_theta_n", panel, "theta_hat")?;
    let by_k: Vec<Series> = ns
        .iter()
        .filter_map(|&n| {
            seed_series(&abs_hat, "theta_hat", "K", &format!("n={n}"), |r| {
                r.param_f64("n") == Some(n)
            })
        })
        .collect();
    let panel = (!by_k.is_empty()).then(|| Panel {
        title: "|theta_hat| vs K".into(),
        x_label: "K".into(),
        y_label: "|theta_hat|".into(),
        log_x: true,
        series: by_k,
        hlines: vec![("theta*".into(), theta_star)],
        ..Panel::default()
    });
    e.panel("b_theta_k", panel, "theta_hat")?;
    let gk: Vec<Series> = ns
        .iter()
        .filter_map(|&n| {
            seed_series(records, "gamma_distance", "K", &format!("n={n}"), |r| {
                r.param_f64("n") == Some(n)
            })
        })
        .collect();
    let panel = gk.last().map(|s| Panel {
        title: "Gamma-distance vs K".into(),
        x_label: "K".into(),
        y_label: "sup |L_Kn - L_inf|".into(),
        log_x: true,
        log_y: true,
        guides: vec![Guide {
            label: "K^-1".into(),
            exponent: -1.0,
            anchor: first_point(s),
        }],
        series: gk.clone(),
        ..Panel::default()
    });
    e.panel("c_gamma_k", panel, "gamma_distance")?;
    let gn: Vec<Series> = ks
        .iter()
        .filter_map(|&k| {
            seed_series(records, "gamma_distance", "n", &format!("K={k}"), |r| {
                r.param_f64("K") == Some(k)
            })
        })
        .collect();
    let panel = gn.last().map(|s| Panel {
        title: "Gamma-distance vs n".into(),
        x_label: "n".into(),
        y_label: "sup |L_Kn - L_inf|".into(),
        log_x: true,
        log_y: true,
        guides: vec![Guide {
            label: "n^-1/2".into(),
            exponent: -0.5,
            anchor: first_point(s),
        }],
        series: gn.clone(),
        ..Panel::default()
    });
    e.panel("d_gamma_n", panel, "gamma_distance")?;

    let Some(t) = aux.iter().find(|t| t.name == "curves") else {
        e.warnings
            .push(format!("{}: landscape grid skipped, curves missing", e.id));
        return Ok(());
    };
    let (Some(ck), Some(cn), Some(ct), Some(co), Some(cl)) = (
        t.column("K"),
        t.column("n"),
        t.column("theta"),
        t.column("objective"),
        t.column("limit"),
    ) else {
        return Err(SiviError::InvalidConfig("curve table lacks columns".into()));
    };
    let mut cells = Vec::new();
    for &k in &ks {
        for &n in &ns {
            let rows: Vec<&Vec<f64>> = t.rows.iter().filter(|r| r[ck] == k && r[cn] == n).collect();
            let pts = |c: usize| rows.iter().map(|r| (r[ct], r[c], 0.0)).collect::<Vec<_>>();
            cells.push(render_panel(&Panel {
                title: format!("K={k}, n={n}"),
                x_label: "theta".into(),
                y_label: "objective".into(),
                series: vec![
                    Series {
                        label: "L_Kn".into(),
                        points: pts(co),
                    },
                    Series {
                        label: "L_inf".into(),
                        points: pts(cl),
                    },
                ],
                ..Panel::default()
            }));
        }
    }
    e.write(
        "landscapes",
        render_grid("Objective landscapes", &cells, ns.len().max(1)),
    )
}

fn exp6_panels(e: &mut Emitter<'_>, records: &[ExperimentRecord]) -> Result<()> {
    for d in distinct_params(records, "coverage", "d") {
        let at_d = |r: &ExperimentRecord| r.param_f64("d") == Some(d);
        let approx = ["sivi", "laplace", "exact_conjugate"];
        let cov: Vec<Series> = approx
            .iter()
            .filter_map(|a| {
                aggregate_series(records, "coverage", "n", a, |r| {
                    at_d(r) && r.param_str("approximator") == Some(a)
                })
            })
            .collect();
        let band = |m: &str| records.iter().find(|r| r.metric == m && at_d(r)).map(|r| r.value);
        let mut hlines = vec![("nominal 0.95".to_string(), 0.95)];
        hlines.extend(band("band_low").map(|v| ("band".to_string(), v)));
        hlines.extend(band("band_high").map(|v| ("band".to_string(), v)));
        let panel = (!cov.is_empty()).then(|| Panel {
            title: format!("Credible-set coverage, d={d}"),
            x_label: "n".into(),
            y_label: "coverage".into(),
            series: cov,
            hlines,
            ..Panel::default()
        });
        e.panel(&format!("coverage_d{d}"), panel, "coverage")?;
        let err: Vec<Series> = approx[..2]
            .iter()
            .filter_map(|a| {
                aggregate_series(records, "rel_mean_error_median", "n", a, |r| {
                    at_d(r) && r.param_str("approximator") == Some(a)
                })
            })
            .collect();
        let panel = err.first().map(|s| Panel {
            title: format!("Relative mean error, d={d}"),
            x_label: "n".into(),
            y_label: "|m - theta*| / |theta*|".into(),
            log_x: true,
            log_y: true,
            guides: vec![Guide {
                label: "n^-1/2".into(),
                exponent: -0.5,
                anchor: first_point(s),
            }],
            series: err.clone(),
            ..Panel::default()
        });
        e.panel(&format!("mean_error_d{d}"), panel, "rel_mean_error_median")?;
        let ratio =
            aggregate_series(records, "variance_ratio_median", "n", "tr V_SIVI / tr V_Laplace", at_d).map(|s| Panel {
                title: format!("Variance ratio, d={d}"),
                x_label: "n".into(),
                y_label: "trace ratio".into(),
                series: vec![s],
                hlines: vec![("1".into(), 1.0)],
                ..Panel::default()
            });
        e.panel(&format!("variance_ratio_d{d}"), ratio, "variance_ratio_median")?;
    }
    if !records.iter().any(|r| r.metric == "coverage") {
        e.warnings
            .push(format!("{}: all panels skipped, metric 'coverage' missing", e.id));
    }
    Ok(())
}

/// Writes one SVG per figure panel of experiment `id` into `dir`. Returns the
/// written paths and a warning for each skipped panel.
pub fn emit_svg_plots(
    records: &[ExperimentRecord],
    aux: &[AuxTable],
    id: ExperimentId,
    dir: &Path,
) -> Result<(Vec<PathBuf>, Vec<String>)> {
    std::fs::create_dir_all(dir)?;
    let own: Vec<ExperimentRecord> = records.iter().filter(|r| r.experiment == id).cloned().collect();
    let mut e = Emitter {
        dir,
        id,
        written: Vec::new(),
        warnings: Vec::new(),
    };
    match id {
        ExperimentId::Exp1 => exp1_panels(&mut e, &own)?,
        ExperimentId::Exp2 => exp2_panels(&mut e, &own)?,
        ExperimentId::Exp3 => exp3_panels(&mut e, &own)?,
        ExperimentId::Exp4 => exp4_panels(&mut e, &own, aux)?,
        ExperimentId::Exp5 => exp5_panels(&mut e, &own, aux)?,
        ExperimentId::Exp6 => exp6_panels(&mut e, &own)?,
    }
    Ok((e.written, e.warnings))
}

/// Minimal XML well-formedness check: a single `<svg>` root, balanced and
/// properly nested tags, quoted attributes and escaped text.
pub fn check_svg_well_formed(svg: &str) -> Result<()> {
    let bad = |m: String| Err(SiviError::InvalidConfig(format!("malformed SVG: {m}")));
    let mut stack: Vec<&str> = Vec::new();
    let mut roots = 0;
    let mut rest = svg.trim();
    if let Some(after) = rest.strip_prefix("<?xml") {
        match after.find("?>") {
            Some(i) => rest = after[i + 2..].trim_start(),
            None => return bad("unterminated XML declaration".into()),
        }
    }
    while !rest.is_empty() {
        let Some(open) = rest.find('<') else {
            if !stack.is_empty() {
                return bad("unclosed element".into());
            }
            if !rest.trim().is_empty() {
                return bad("text after root element".into());
            }
            break;
        };
        let text = &rest[..open];
        if stack.is_empty() && !text.trim().is_empty() {
            return bad("text outside root element".into());
        }
        if let Some(amp) = text.find('&') {
            let entity = &text[amp..];
            if !["&amp;", "&lt;", "&gt;", "&quot;", "&apos;", "&#"]
                .iter()
                .any(|e| entity.starts_with(e))
            {
                return bad(format!(
                    "unescaped '&' in text near '{}'",
                    &entity[..entity.len().min(12)]
                ));
            }
        }
        rest = &rest[open..];
        let Some(close) = rest.find('>') else {
            return bad("unterminated tag".into());
        };
        let tag = &rest[1..close];
        if tag.contains('<') {
            return bad(format!("'<' inside tag '{tag}'"));
        }
        if let Some(name) = tag.strip_prefix('/') {
            match stack.pop() {
                Some(open_name) if open_name == name.trim() => {}
                other => return bad(format!("closing '{}' does not match '{:?}'", name.trim(), other)),
            }
        } else {
            let self_closing = tag.ends_with('/');
            let body = tag.trim_end_matches('/');
            let name = body.split_whitespace().next().unwrap_or("");
            if name.is_empty()
                || !name
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || c == ':' || c == '-' || c == '_')
            {
                return bad(format!("bad element name '{name}'"));
            }
            if !body.matches('"').count().is_multiple_of(2) {
                return bad(format!("unbalanced quotes in '{name}'"));
            }
            for attr in body[name.len()..].split('"').step_by(2) {
                let a = attr.trim();
                if !a.is_empty() && !a.ends_with('=') {
                    return bad(format!("unquoted attribute '{a}' in '{name}'"));
                }
            }
            if stack.is_empty() {
                roots += 1;
                if name != "svg" {
                    return bad(format!("root element is '{name}'"));
                }
            }
            if !self_closing {
                stack.push(name);
            }
        }
        rest = &rest[close + 1..];
    }
    if !stack.is_empty() {
        return bad(format!("unclosed elements {stack:?}"));
    }
    if roots != 1 {
        return bad(format!("expected one root element, found {roots}"));
    }
    Ok(())
}
