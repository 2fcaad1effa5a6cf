//! Minimal line plots rendered from aggregated CSV records.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 55.0;
const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum XAxis {
    /// Dimension, final iterate of each run.
    D,
    /// Iteration.
    T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Panel {
    pub x: XAxis,
    /// Metric prefix in the aggregated CSV, e.g. `adv_risk`.
    pub metric: String,
    pub title: String,
    pub log_x: bool,
}

impl Panel {
    pub fn over_d(metric: &str, title: &str, log_x: bool) -> Self {
        Self {
            x: XAxis::D,
            metric: metric.into(),
            title: title.into(),
            log_x,
        }
    }

    pub fn over_t(metric: &str, title: &str) -> Self {
        Self {
            x: XAxis::T,
            metric: metric.into(),
            title: title.into(),
            log_x: false,
        }
    }
}

fn field<'a>(rec: &'a [(String, String)], key: &str) -> Result<&'a str> {
    rec.iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.as_str())
        .ok_or_else(|| Error::Parse(format!("aggregated csv lacks column `{key}`")))
}

fn num(rec: &[(String, String)], key: &str) -> Result<f64> {
    let v = field(rec, key)?;
    v.parse().map_err(|_| Error::Parse(format!("{key}: cannot parse `{v}`")))
}

struct Series {
    label: String,
    points: Vec<(f64, f64)>,
}

fn collect_series(records: &[Vec<(String, String)>], panel: &Panel) -> Result<(Vec<Series>, Option<f64>)> {
    let mean_key = format!("{}_mean", panel.metric);
    // series key -> x -> (t, y), keeping the latest t per d
    let mut map: BTreeMap<String, BTreeMap<u64, (usize, f64, f64)>> = BTreeMap::new();
    let mut order: Vec<String> = Vec::new();
    let mut eta = None;
    for rec in records {
        let t: usize = num(rec, "t")? as usize;
        let d = num(rec, "d")?;
        let r = field(rec, "r")?.parse::<f64>().unwrap_or(f64::NAN);
        let e = field(rec, "epsilon")?.parse::<f64>().unwrap_or(f64::NAN);
        let y = num(rec, &mean_key)?;
        eta = eta.or(num(rec, "baseline_eta").ok());
        let (label, x) = match panel.x {
            XAxis::D => (format!("r={r} eps={e}"), d),
            XAxis::T => (format!("d={d} r={r} eps={e}"), t as f64),
        };
        if !map.contains_key(&label) {
            order.push(label.clone());
        }
        let pts = map.entry(label).or_default();
        let key = x.to_bits();
        match pts.get(&key) {
            Some((t0, _, _)) if *t0 >= t => {}
            _ => {
                pts.insert(key, (t, x, y));
            }
        }
    }
    let series = order
        .into_iter()
        .map(|label| {
            let mut points: Vec<(f64, f64)> = map[&label].values().map(|(_, x, y)| (*x, *y)).filter(|(_, y)| y.is_finite()).collect();
            points.sort_by(|a, b| a.0.total_cmp(&b.0));
            Series { label, points }
        })
        .collect();
    Ok((series, eta))
}

fn nice_ticks(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    let span = (hi - lo).max(f64::MIN_POSITIVE);
    let raw = span / count as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 2.5, 5.0, 10.0].iter().map(|m| m * mag).find(|s| span / s <= count as f64).unwrap_or(10.0 * mag);
    let start = (lo / step).ceil() as i64;
    let end = (hi / step).floor() as i64;
    (start..=end).map(|k| k as f64 * step).collect()
}

fn label_num(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-3) {
        format!("{v:.1e}")
    } else {
        let s = format!("{v:.4}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

/// SVG document for one panel.
pub fn render(records: &[Vec<(String, String)>], panel: &Panel) -> Result<String> {
    let (series, eta) = collect_series(records, panel)?;
    let xs = series.iter().flat_map(|s| s.points.iter().map(|p| p.0));
    let ys = series.iter().flat_map(|s| s.points.iter().map(|p| p.1)).chain(eta);
    let (mut x0, mut x1) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let (mut y0, mut y1) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !x0.is_finite() {
        (x0, x1) = (0.0, 1.0);
    }
    if !y0.is_finite() {
        (y0, y1) = (0.0, 1.0);
    }
    let log_x = panel.log_x && x0 > 0.0;
    let fx = |v: f64| if log_x { v.log10() } else { v };
    let (mut a0, mut a1) = (fx(x0), fx(x1));
    if a1 <= a0 {
        a0 -= 0.5;
        a1 += 0.5;
    }
    let pad = ((y1 - y0) * 0.08).max(1e-3);
    let (y0, y1) = (y0 - pad, y1 + pad);
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let px = |v: f64| LEFT + (fx(v) - a0) / (a1 - a0) * pw;
    let py = |v: f64| TOP + (y1 - v) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, LEFT + pw / 2.0, panel.title);
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );

    for v in nice_ticks(y0, y1, 6) {
        let y = py(v);
        let _ = writeln!(s, r##"<line x1="{LEFT}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="#e0e0e0"/>"##, LEFT + pw);
        let _ = writeln!(s, r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#, LEFT - 6.0, y + 4.0, label_num(v));
    }
    let xticks: Vec<f64> = if log_x {
        nice_ticks(a0, a1, 5).into_iter().map(|e| 10f64.powf(e)).collect()
    } else {
        nice_ticks(a0, a1, 6)
    };
    for v in xticks {
        let x = px(v);
        let _ = writeln!(s, r#"<line x1="{x:.2}" y1="{}" x2="{x:.2}" y2="{}" stroke="black"/>"#, TOP + ph, TOP + ph + 5.0);
        let _ = writeln!(s, r#"<text x="{x:.2}" y="{}" text-anchor="middle">{}</text>"#, TOP + ph + 18.0, label_num(v));
    }
    let xlabel = match (panel.x, log_x) {
        (XAxis::D, true) => "d (log scale)",
        (XAxis::D, false) => "d",
        (XAxis::T, _) => "t",
    };
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{xlabel}</text>"#, LEFT + pw / 2.0, HEIGHT - 12.0);

    if let Some(eta) = eta {
        let y = py(eta);
        let _ = writeln!(
            s,
            r#"<line x1="{LEFT}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="gray" stroke-dasharray="6,4"/>"#,
            LEFT + pw
        );
    }

    for (i, ser) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = ser.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        if !pts.is_empty() {
            let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#, pts.join(" "));
        }
        for &(x, y) in &ser.points {
            let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, px(x), py(y));
        }
        let ly = TOP + 14.0 + 18.0 * i as f64;
        let lx = LEFT + pw + 12.0;
        let _ = writeln!(s, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, lx + 20.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, lx + 26.0, ly + 4.0, ser.label);
    }
    if eta.is_some() {
        let ly = TOP + 14.0 + 18.0 * series.len() as f64;
        let lx = LEFT + pw + 12.0;
        let _ = writeln!(s, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="gray" stroke-dasharray="6,4"/>"#, lx + 20.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}">eta</text>"#, lx + 26.0, ly + 4.0);
    }
    s.push_str("</svg>\n");
    Ok(s)
}
