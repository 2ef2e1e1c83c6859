//! Self-contained SVG figures. Every figure carries the exact numbers it
//! draws as a CSV table, written next to the SVG.

use std::fmt::Write as _;

const W: f64 = 900.0;
const H: f64 = 520.0;
const ML: f64 = 80.0;
const MR: f64 = 110.0;
const MT: f64 = 44.0;
const MB: f64 = 64.0;

/// Viridis anchor colours at t = 0, 1/8, ..., 1.
const ANCHORS: [(u8, u8, u8); 9] = [
    (68, 1, 84),
    (71, 44, 122),
    (59, 81, 139),
    (44, 113, 142),
    (33, 144, 141),
    (39, 173, 129),
    (92, 200, 99),
    (170, 220, 50),
    (253, 231, 37),
];

/// 256-step perceptual ramp (dark purple → yellow), linearly interpolated
/// between viridis anchors. `t` is clamped to [0, 1].
pub fn ramp(t: f64) -> (u8, u8, u8) {
    let step = (t.clamp(0.0, 1.0) * 255.0).round() / 255.0;
    let x = step * (ANCHORS.len() - 1) as f64;
    let i = (x.floor() as usize).min(ANCHORS.len() - 2);
    let f = x - i as f64;
    let (a, b) = (ANCHORS[i], ANCHORS[i + 1]);
    let mix = |p: u8, q: u8| (p as f64 + f * (q as f64 - p as f64)).round() as u8;
    (mix(a.0, b.0), mix(a.1, b.1), mix(a.2, b.2))
}

fn hex((r, g, b): (u8, u8, u8)) -> String {
    format!("#{r:02x}{g:02x}{b:02x}")
}

pub fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Short numeric label.
pub fn label(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if !(1e-3..1e5).contains(&a) {
        return format!("{v:.1e}");
    }
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    s.to_string()
}

/// A rendered figure and the numbers behind it.
pub struct Figure {
    pub svg: String,
    pub csv: String,
}

#[derive(Clone, Copy)]
struct Axis {
    lo: f64,
    hi: f64,
    px_lo: f64,
    px_hi: f64,
}

impl Axis {
    fn new(lo: f64, hi: f64, px_lo: f64, px_hi: f64) -> Self {
        let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, lo + 0.5) };
        Self { lo, hi, px_lo, px_hi }
    }

    fn map(&self, v: f64) -> f64 {
        self.px_lo + (v - self.lo) / (self.hi - self.lo) * (self.px_hi - self.px_lo)
    }
}

/// About `n` round tick positions in [lo, hi].
fn nice_ticks(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if !(hi > lo) {
        return vec![lo];
    }
    let raw = (hi - lo) / n as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + 1e-9 * step {
        out.push(if t.abs() < 1e-12 * step { 0.0 } else { t });
        t += step;
    }
    out
}

fn open(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#, W / 2.0, escape(title));
}

fn frame(out: &mut String, x: &Axis, y: &Axis, xticks: &[(f64, String)], yticks: &[(f64, String)], xlabel: &str, ylabel: &str) {
    let (x0, x1, y0, y1) = (x.px_lo, x.px_hi, y.px_hi, y.px_lo);
    let _ = writeln!(out, r#"<rect x="{x0}" y="{y0}" width="{}" height="{}" fill="none" stroke="black"/>"#, x1 - x0, y1 - y0);
    for (v, l) in xticks {
        let px = x.map(*v);
        let _ = writeln!(out, r#"<line x1="{px:.1}" y1="{y1}" x2="{px:.1}" y2="{}" stroke="black"/>"#, y1 + 5.0);
        let _ = writeln!(out, r#"<text x="{px:.1}" y="{}" text-anchor="middle">{}</text>"#, y1 + 19.0, escape(l));
    }
    for (v, l) in yticks {
        let py = y.map(*v);
        let _ = writeln!(out, r#"<line x1="{}" y1="{py:.1}" x2="{x0}" y2="{py:.1}" stroke="black"/>"#, x0 - 5.0);
        let _ = writeln!(out, r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#, x0 - 8.0, py + 4.0, escape(l));
    }
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, (x0 + x1) / 2.0, H - 18.0, escape(xlabel));
    let _ = writeln!(
        out,
        r#"<text x="18" y="{0}" text-anchor="middle" transform="rotate(-90 18 {0})">{1}</text>"#,
        (y0 + y1) / 2.0,
        escape(ylabel)
    );
}

fn colorbar(out: &mut String, lo: f64, hi: f64, unit: &str) {
    let (x, top, bottom) = (W - MR + 25.0, MT, H - MB);
    let n = 64;
    let h = (bottom - top) / n as f64;
    for k in 0..n {
        let t = 1.0 - (k as f64 + 0.5) / n as f64;
        let _ = writeln!(out, r#"<rect x="{x}" y="{:.2}" width="16" height="{:.2}" fill="{}"/>"#, top + k as f64 * h, h + 0.3, hex(ramp(t)));
    }
    let _ = writeln!(out, r#"<rect x="{x}" y="{top}" width="16" height="{}" fill="none" stroke="black"/>"#, bottom - top);
    let axis = Axis::new(lo, hi, bottom, top);
    for t in nice_ticks(lo, hi, 5) {
        let _ = writeln!(out, r#"<text x="{}" y="{:.1}">{}</text>"#, x + 20.0, axis.map(t) + 4.0, label(t));
    }
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, x + 8.0, top - 8.0, escape(unit));
}

fn finite_range(v: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    let (lo, hi) = v.filter(|x| x.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    (lo <= hi).then_some((lo, hi))
}

/// Averages `v` into at most `max` consecutive groups; returns group index ranges.
fn groups(len: usize, max: usize) -> Vec<(usize, usize)> {
    let g = len.div_ceil(max.max(1)).max(1);
    (0..len).step_by(g).map(|s| (s, (s + g).min(len))).collect()
}

/// Labelled x ticks for a time axis in seconds, shown as local clock time.
pub type TimeLabel<'a> = &'a dyn Fn(f64) -> String;

/// Time-frequency heat map in dB. `shade` spans are drawn as translucent
/// bands (night hours).
#[allow(clippy::too_many_arguments)]
pub fn heat_figure(
    title: &str,
    times: &[f64],
    freqs: &[f64],
    power: &[Vec<f64>],
    time_label: TimeLabel,
    tick_step_s: f64,
    shade: &[(f64, f64)],
) -> Figure {
    let tg = groups(times.len(), 720);
    let fg = groups(freqs.len(), 400);
    let mean_of = |vals: &mut dyn Iterator<Item = f64>| {
        let (s, n) = vals.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
        s / n as f64
    };
    let xs: Vec<f64> = tg.iter().map(|&(a, b)| mean_of(&mut times[a..b].iter().copied())).collect();
    let ys: Vec<f64> = fg.iter().map(|&(a, b)| mean_of(&mut freqs[a..b].iter().copied())).collect();
    let db: Vec<Vec<f64>> = tg
        .iter()
        .map(|&(ta, tb)| {
            fg.iter()
                .map(|&(fa, fb)| {
                    let m = mean_of(&mut (ta..tb).flat_map(|t| power[t][fa..fb].iter().copied()));
                    if m > 0.0 { 10.0 * m.log10() } else { f64::NAN }
                })
                .collect()
        })
        .collect();

    let mut csv = String::from("time_s\\freq_hz");
    for y in &ys {
        let _ = write!(csv, ",{y}");
    }
    csv.push('\n');
    for (x, row) in xs.iter().zip(&db) {
        let _ = write!(csv, "{x}");
        for v in row {
            if v.is_nan() { csv.push(',') } else { let _ = write!(csv, ",{v}"); }
        }
        csv.push('\n');
    }

    let (lo, hi) = finite_range(db.iter().flatten().copied()).unwrap_or((0.0, 1.0));
    let half_t = if times.len() > 1 { 0.5 * (times[1] - times[0]) } else { 0.5 };
    let half_f = if freqs.len() > 1 { 0.5 * (freqs[1] - freqs[0]) } else { 0.5 };
    let t_lo = times.first().copied().unwrap_or(0.0) - half_t;
    let t_hi = times.last().copied().unwrap_or(1.0) + half_t;
    let x = Axis::new(t_lo, t_hi, ML, W - MR);
    let y = Axis::new(freqs.first().copied().unwrap_or(0.0) - half_f, freqs.last().copied().unwrap_or(1.0) + half_f, H - MB, MT);

    let mut svg = String::new();
    open(&mut svg, title);
    for (gi, &(ta, tb)) in tg.iter().enumerate() {
        let px0 = x.map(times[ta] - half_t);
        let px1 = x.map(times[tb - 1] + half_t);
        for (gj, &(fa, fb)) in fg.iter().enumerate() {
            let v = db[gi][gj];
            let fill = if v.is_nan() { "#bbbbbb".to_string() } else { hex(ramp((v - lo) / (hi - lo).max(1e-12))) };
            let py0 = y.map(freqs[fb - 1] + half_f);
            let py1 = y.map(freqs[fa] - half_f);
            let _ = writeln!(svg, r#"<rect x="{px0:.2}" y="{py0:.2}" width="{:.2}" height="{:.2}" fill="{fill}"/>"#, px1 - px0 + 0.2, py1 - py0 + 0.2);
        }
    }
    for &(a, b) in shade {
        let (a, b) = (a.max(t_lo), b.min(t_hi));
        if b > a {
            let _ = writeln!(svg, r#"<rect x="{:.2}" y="{MT}" width="{:.2}" height="{}" fill="black" fill-opacity="0.25"/>"#, x.map(a), x.map(b) - x.map(a), H - MB - MT);
        }
    }
    let first = (t_lo / tick_step_s).ceil() * tick_step_s;
    let xticks: Vec<(f64, String)> = std::iter::successors(Some(first), |t| Some(t + tick_step_s))
        .take_while(|t| *t <= t_hi)
        .map(|t| (t, time_label(t)))
        .collect();
    let yticks: Vec<(f64, String)> = nice_ticks(y.lo, y.hi, 6).into_iter().map(|v| (v, label(v))).collect();
    frame(&mut svg, &x, &y, &xticks, &yticks, "local time", "frequency (Hz)");
    colorbar(&mut svg, lo, hi, "dB");
    svg.push_str("</svg>\n");
    Figure { svg, csv }
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// Line plot of one or more series on a shared x grid.
pub fn line_figure(title: &str, x: &[f64], series: &[(String, Vec<f64>)], log_y: bool, xlabel: &str, ylabel: &str) -> Figure {
    let tf = |v: f64| if log_y { if v > 0.0 { v.log10() } else { f64::NAN } } else { v };
    let (lo, hi) = finite_range(series.iter().flat_map(|(_, v)| v.iter().map(|&y| tf(y)))).unwrap_or((0.0, 1.0));
    let pad = 0.05 * (hi - lo).max(1e-12);
    let xa = Axis::new(x.first().copied().unwrap_or(0.0), x.last().copied().unwrap_or(1.0), ML, W - MR);
    let ya = Axis::new(lo - pad, hi + pad, H - MB, MT);

    let mut csv = String::from("x");
    for (name, _) in series {
        let _ = write!(csv, ",{name}");
    }
    csv.push('\n');
    for (i, xv) in x.iter().enumerate() {
        let _ = write!(csv, "{xv}");
        for (_, v) in series {
            let _ = write!(csv, ",{}", v[i]);
        }
        csv.push('\n');
    }

    let mut svg = String::new();
    open(&mut svg, title);
    for (k, (name, v)) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let mut d = String::new();
        let mut pen = false;
        for (xv, yv) in x.iter().zip(v) {
            let t = tf(*yv);
            if t.is_finite() {
                let _ = write!(d, "{}{:.2},{:.2} ", if pen { "L" } else { "M" }, xa.map(*xv), ya.map(t));
                pen = true;
            } else {
                pen = false;
            }
        }
        let _ = writeln!(svg, r#"<path d="{}" fill="none" stroke="{color}" stroke-width="1.3"/>"#, d.trim_end());
        let ly = MT + 16.0 + 16.0 * k as f64;
        let _ = writeln!(svg, r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, W - MR + 8.0, W - MR + 26.0);
        let _ = writeln!(svg, r#"<text x="{}" y="{}" font-size="10">{}</text>"#, W - MR + 30.0, ly + 4.0, escape(name));
    }
    let xticks: Vec<(f64, String)> = nice_ticks(xa.lo, xa.hi, 8).into_iter().map(|v| (v, label(v))).collect();
    let yticks: Vec<(f64, String)> = if log_y {
        (ya.lo.ceil() as i64..=ya.hi.floor() as i64).map(|e| (e as f64, format!("1e{e}"))).collect()
    } else {
        nice_ticks(ya.lo, ya.hi, 6).into_iter().map(|v| (v, label(v))).collect()
    };
    frame(&mut svg, &xa, &ya, &xticks, &yticks, xlabel, ylabel);
    svg.push_str("</svg>\n");
    Figure { svg, csv }
}

/// Polar arrows, one per channel; the reference arrow is drawn thicker in red.
pub fn polar_figure(title: &str, entries: &[(String, f64, f64)], reference: &str) -> Figure {
    let mut csv = String::from("id,magnitude,phase_rad\n");
    for (id, m, p) in entries {
        let _ = writeln!(csv, "{id},{m},{p}");
    }
    let (cx, cy, r) = (W / 2.0 - 40.0, (H + MT) / 2.0, (H - MT - 40.0) / 2.0);
    let mut svg = String::new();
    open(&mut svg, title);
    let _ = writeln!(svg, r#"<defs><marker id="head" viewBox="0 0 10 10" refX="9" refY="5" markerWidth="6" markerHeight="6" orient="auto-start-reverse"><path d="M0,0 L10,5 L0,10 z" fill="context-stroke"/></marker></defs>"#);
    for frac in [0.25, 0.5, 0.75, 1.0] {
        let _ = writeln!(svg, r##"<circle cx="{cx}" cy="{cy}" r="{:.1}" fill="none" stroke="#cccccc"/>"##, r * frac);
    }
    for deg in (0..360).step_by(30) {
        let a = (deg as f64).to_radians();
        let (x, y) = (cx + r * a.cos(), cy - r * a.sin());
        let _ = writeln!(svg, r##"<line x1="{cx}" y1="{cy}" x2="{x:.1}" y2="{y:.1}" stroke="#eeeeee"/>"##);
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="10">{deg}°</text>"#, cx + (r + 14.0) * a.cos(), cy - (r + 14.0) * a.sin() + 3.0);
    }
    for (k, (id, m, p)) in entries.iter().enumerate() {
        let is_ref = id == reference;
        let color = if is_ref { "#d62728" } else { PALETTE[k % PALETTE.len()] };
        let (x, y) = (cx + r * m * p.cos(), cy - r * m * p.sin());
        let width = if is_ref { 3.0 } else { 1.6 };
        let _ = writeln!(svg, r#"<line x1="{cx}" y1="{cy}" x2="{x:.2}" y2="{y:.2}" stroke="{color}" stroke-width="{width}" marker-end="url(#head)"/>"#);
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}" font-size="10" fill="{color}">{}</text>"#, x + 4.0, y - 4.0, escape(id));
    }
    let _ = writeln!(svg, r#"<text x="{}" y="{}" font-size="11">reference: {} (red); positive phase leads</text>"#, ML - 60.0, H - 12.0, escape(reference));
    svg.push_str("</svg>\n");
    Figure { svg, csv }
}

/// Gridded field with sample points and a colour scale bar.
pub fn heatmap_figure(title: &str, xs: &[f64], ys: &[f64], values: &[Vec<f64>], points: &[(String, f64, f64)], unit: &str) -> Figure {
    let mut csv = String::from("y\\x");
    for x in xs {
        let _ = write!(csv, ",{x}");
    }
    csv.push('\n');
    for (y, row) in ys.iter().zip(values) {
        let _ = write!(csv, "{y}");
        for v in row {
            if v.is_nan() { csv.push(',') } else { let _ = write!(csv, ",{v}"); }
        }
        csv.push('\n');
    }
    let dx = if xs.len() > 1 { xs[1] - xs[0] } else { 1.0 };
    let dy = if ys.len() > 1 { ys[1] - ys[0] } else { 1.0 };
    let xa = Axis::new(xs[0] - dx / 2.0, xs[xs.len() - 1] + dx / 2.0, ML, W - MR);
    let ya = Axis::new(ys[0] - dy / 2.0, ys[ys.len() - 1] + dy / 2.0, H - MB, MT);
    let (lo, hi) = finite_range(values.iter().flatten().copied()).unwrap_or((0.0, 1.0));
    let mut svg = String::new();
    open(&mut svg, title);
    for (j, row) in values.iter().enumerate() {
        for (i, v) in row.iter().enumerate() {
            let fill = if v.is_nan() { "#dddddd".to_string() } else { hex(ramp((v - lo) / (hi - lo).max(1e-12))) };
            let (px0, px1) = (xa.map(xs[i] - dx / 2.0), xa.map(xs[i] + dx / 2.0));
            let (py0, py1) = (ya.map(ys[j] + dy / 2.0), ya.map(ys[j] - dy / 2.0));
            let _ = writeln!(svg, r#"<rect x="{px0:.2}" y="{py0:.2}" width="{:.2}" height="{:.2}" fill="{fill}"/>"#, px1 - px0 + 0.2, py1 - py0 + 0.2);
        }
    }
    for (name, x, y) in points {
        let _ = writeln!(svg, r#"<circle cx="{:.1}" cy="{:.1}" r="4" fill="white" stroke="black"/>"#, xa.map(*x), ya.map(*y));
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}" font-size="10">{}</text>"#, xa.map(*x) + 6.0, ya.map(*y) - 6.0, escape(name));
    }
    let xticks: Vec<(f64, String)> = nice_ticks(xa.lo, xa.hi, 8).into_iter().map(|v| (v, label(v))).collect();
    let yticks: Vec<(f64, String)> = nice_ticks(ya.lo, ya.hi, 6).into_iter().map(|v| (v, label(v))).collect();
    frame(&mut svg, &xa, &ya, &xticks, &yticks, "x (km)", "y (km)");
    colorbar(&mut svg, lo, hi, unit);
    svg.push_str("</svg>\n");
    Figure { svg, csv }
}

/// Scatter of `(x, y)` pairs.
pub fn scatter_figure(title: &str, x: &[f64], y: &[f64], xlabel: &str, ylabel: &str) -> Figure {
    let mut csv = format!("{xlabel},{ylabel}\n");
    for (a, b) in x.iter().zip(y) {
        let _ = writeln!(csv, "{a},{b}");
    }
    let (xl, xh) = finite_range(x.iter().copied()).unwrap_or((0.0, 1.0));
    let (yl, yh) = finite_range(y.iter().copied()).unwrap_or((0.0, 1.0));
    let px = 0.05 * (xh - xl).max(1e-12);
    let py = 0.05 * (yh - yl).max(1e-12);
    let xa = Axis::new(xl - px, xh + px, ML, W - MR);
    let ya = Axis::new(yl - py, yh + py, H - MB, MT);
    let mut svg = String::new();
    open(&mut svg, title);
    for (a, b) in x.iter().zip(y) {
        if a.is_finite() && b.is_finite() {
            let _ = writeln!(svg, r##"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="#1f77b4" fill-opacity="0.6"/>"##, xa.map(*a), ya.map(*b));
        }
    }
    let xticks: Vec<(f64, String)> = nice_ticks(xa.lo, xa.hi, 8).into_iter().map(|v| (v, label(v))).collect();
    let yticks: Vec<(f64, String)> = nice_ticks(ya.lo, ya.hi, 6).into_iter().map(|v| (v, label(v))).collect();
    frame(&mut svg, &xa, &ya, &xticks, &yticks, xlabel, ylabel);
    svg.push_str("</svg>\n");
    Figure { svg, csv }
}
