//! Mode-energy percentage, V/I scenario labels, energy-vs-power correlation
//! and inverse-distance-weighted heatmaps.
//!
//! The mode-energy percentage of a PSD over a band `[f1, f2]` is
//!
//! ```text
//! E = 100 · ∫ max(psd(f) − trend(f), 0) df / ∫ (psd(f) − psd_min) df
//! ```
//!
//! where `trend` is fit to the bins outside the mode sub-band and `psd_min`
//! is the smallest density in `[f1, f2]`. Integrals use the trapezoid rule on
//! the PSD grid; the DC bin never takes part.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{ChannelKind, ChannelSet, PhasorChannel};
use crate::serde_nan;
use crate::spectral::{BandEnergySeries, PsdEstimate};
use crate::stats::{fit_line, mean, median, pearson, trapezoid};

/// Band of interest chosen to stay clear of electromechanical modes.
pub const PAPER_BAND_HZ: (f64, f64) = (5.0, 11.0);
/// Half-width of the default mode sub-band around the mode frequency.
pub const DEFAULT_MODE_HALF_WIDTH_HZ: f64 = 0.5;
/// Default percentage above which a channel counts as carrying the mode.
pub const DEFAULT_ON_THRESHOLD: f64 = 20.0;
/// Non-mode bins required on each side of the mode sub-band.
pub const MIN_SIDE_BINS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrendModel {
    #[default]
    Linear,
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeEnergyConfig {
    pub f1_hz: f64,
    pub f2_hz: f64,
    pub mode_band_hz: (f64, f64),
    pub trend_model: TrendModel,
}

impl ModeEnergyConfig {
    pub fn new(f1_hz: f64, f2_hz: f64, mode_band_hz: (f64, f64), trend_model: TrendModel) -> Result<Self> {
        let (lo, hi) = mode_band_hz;
        if !(f1_hz < lo && lo < hi && hi < f2_hz) {
            return Err(Error::param(
                "mode_band_hz",
                format!("need f1 < mode_lo < mode_hi < f2, got {f1_hz} < {lo} < {hi} < {f2_hz}"),
            ));
        }
        Ok(Self {
            f1_hz,
            f2_hz,
            mode_band_hz,
            trend_model,
        })
    }

    /// `[5, 11]` Hz band with a ±0.5 Hz mode sub-band around `f0`.
    pub fn paper_preset(f0_hz: f64) -> Result<Self> {
        Self::new(
            PAPER_BAND_HZ.0,
            PAPER_BAND_HZ.1,
            (f0_hz - DEFAULT_MODE_HALF_WIDTH_HZ, f0_hz + DEFAULT_MODE_HALF_WIDTH_HZ),
            TrendModel::Linear,
        )
    }
}

/// Percentage of the above-floor PSD area in `[f1, f2]` attributable to the mode.
pub fn mode_energy_percent(psd: &PsdEstimate, cfg: &ModeEnergyConfig) -> Result<f64> {
    let (f1, f2) = (cfg.f1_hz, cfg.f2_hz);
    let (mlo, mhi) = cfg.mode_band_hz;
    let first = psd.freqs[0];
    let last = *psd.freqs.last().expect("nonempty grid");
    if f1 < first || f2 > last || f1 <= 0.0 {
        return Err(Error::param(
            "band",
            format!("[{f1}, {f2}] Hz is not covered by the PSD grid [{first}, {last}] (DC excluded)"),
        ));
    }
    let idx: Vec<usize> = (0..psd.freqs.len())
        .filter(|&i| psd.freqs[i] > 0.0 && psd.freqs[i] >= f1 && psd.freqs[i] <= f2)
        .collect();
    let f: Vec<f64> = idx.iter().map(|&i| psd.freqs[i]).collect();
    let d: Vec<f64> = idx.iter().map(|&i| psd.density[i]).collect();
    if d.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("PSD contains non-finite values".to_string()));
    }
    let left = f.iter().filter(|&&x| x < mlo).count();
    let right = f.iter().filter(|&&x| x > mhi).count();
    if left < MIN_SIDE_BINS || right < MIN_SIDE_BINS {
        return Err(Error::param(
            "mode_band_hz",
            format!("need {MIN_SIDE_BINS} non-mode bins per side, found {left} below and {right} above"),
        ));
    }
    let (nf, nd): (Vec<f64>, Vec<f64>) = f
        .iter()
        .zip(&d)
        .filter(|(x, _)| **x < mlo || **x > mhi)
        .map(|(x, y)| (*x, *y))
        .unzip();
    let (slope, intercept) = match cfg.trend_model {
        TrendModel::Linear => fit_line(&nf, &nd).unwrap_or((0.0, mean(&nd))),
        TrendModel::Constant => (0.0, mean(&nd)),
    };
    let excess: Vec<f64> = f
        .iter()
        .zip(&d)
        .map(|(x, y)| (y - (slope * x + intercept)).max(0.0))
        .collect();
    let psd_min = d.iter().copied().fold(f64::INFINITY, f64::min);
    let psd_max = d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let above: Vec<f64> = d.iter().map(|y| y - psd_min).collect();
    let num = trapezoid(&f, &excess);
    let den = trapezoid(&f, &above);
    let scale = psd_max.abs().max(f64::MIN_POSITIVE);
    if !(den >= 1e-15 * (f2 - f1) * scale) {
        return Ok(0.0);
    }
    let e = 100.0 * num / den;
    Ok(if e.is_finite() { e.clamp(0.0, 100.0) } else { 0.0 })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// Mode in voltage only.
    S1,
    /// Mode in both voltage and current.
    S2,
    None,
}

pub fn classify_scenario(v_e: f64, i_e: f64, on_thresh: f64) -> Scenario {
    match (v_e >= on_thresh, i_e >= on_thresh) {
        (true, true) => Scenario::S2,
        (true, false) => Scenario::S1,
        _ => Scenario::None,
    }
}

/// Values on a time axis (UTC seconds).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub name: String,
    pub times: Vec<f64>,
    #[serde(with = "serde_nan::vec")]
    pub values: Vec<f64>,
}

impl From<&BandEnergySeries> for TimeSeries {
    fn from(b: &BandEnergySeries) -> Self {
        TimeSeries {
            name: b.source_channel.clone(),
            times: b.times.clone(),
            values: b.energy.clone(),
        }
    }
}

impl TimeSeries {
    /// Value at the sample nearest `t`.
    fn nearest(&self, t: f64) -> f64 {
        if self.times.is_empty() {
            return f64::NAN;
        }
        let i = self.times.partition_point(|&x| x < t);
        let cands = [i.checked_sub(1), (i < self.times.len()).then_some(i)];
        cands
            .into_iter()
            .flatten()
            .min_by(|&a, &b| (self.times[a] - t).abs().total_cmp(&(self.times[b] - t).abs()))
            .map_or(f64::NAN, |k| self.values[k])
    }
}

/// Mean of `ch` over windows of `window_len_s` centred on `centers`.
///
/// A window with any NaN sample, or reaching outside the record, yields NaN.
pub fn window_means(ch: &PhasorChannel, centers: &[f64], window_len_s: f64) -> TimeSeries {
    let fs = ch.rate_sps();
    let n = (window_len_s * fs).round() as i64;
    let values = centers
        .iter()
        .map(|&c| {
            let start = ((c - ch.t0()) * fs - n as f64 / 2.0).round() as i64;
            if start < 0 || start + n > ch.len() as i64 || n <= 0 {
                return f64::NAN;
            }
            mean(&ch.values()[start as usize..(start + n) as usize])
        })
        .collect();
    TimeSeries {
        name: ch.id().to_string(),
        times: centers.to_vec(),
        values,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriverCorrelation {
    pub driver: String,
    /// Pearson r; NaN when undefined.
    #[serde(with = "serde_nan::scalar")]
    pub r: f64,
    /// False when either series is constant.
    pub defined: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterRow {
    pub time: f64,
    pub energy: f64,
    pub p: f64,
    pub q_abs: f64,
    pub pf: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalityReport {
    /// Correlations of window energy with P, |Q| and PF, in that order.
    pub correlations: Vec<DriverCorrelation>,
    #[serde(with = "serde_nan::scalar")]
    pub mean_energy_gate_on: f64,
    #[serde(with = "serde_nan::scalar")]
    pub mean_energy_gate_off: f64,
    /// on / off mean ratio (NaN when either group is empty, inf when off is zero).
    #[serde(with = "serde_nan::scalar")]
    pub gate_ratio: f64,
    pub windows_on: usize,
    pub windows_off: usize,
    pub rows: Vec<ScatterRow>,
}

impl CausalityReport {
    pub fn r(&self, driver: &str) -> Option<&DriverCorrelation> {
        self.correlations.iter().find(|c| c.driver == driver)
    }

    /// Scatter table for one driver (`p`, `q_abs` or `pf`) against window energy.
    pub fn scatter_csv(&self, driver: &str) -> String {
        let mut out = format!("time,{driver},energy\n");
        for r in &self.rows {
            let x = match driver {
                "p" => r.p,
                "q_abs" => r.q_abs,
                _ => r.pf,
            };
            let _ = writeln!(out, "{},{x},{}", r.time, r.energy);
        }
        out
    }
}

/// Relates window band energy to the plant's P, |Q| and PF.
///
/// Drivers are aligned to the energy timeline by nearest time; windows with
/// any NaN are dropped. At least 10 aligned windows are required.
pub fn correlate_energy_power(
    energy: &TimeSeries,
    p: &TimeSeries,
    q: &TimeSeries,
    pf: &TimeSeries,
) -> Result<CausalityReport> {
    let rows: Vec<ScatterRow> = energy
        .times
        .iter()
        .zip(&energy.values)
        .map(|(&t, &e)| ScatterRow {
            time: t,
            energy: e,
            p: p.nearest(t),
            q_abs: q.nearest(t).abs(),
            pf: pf.nearest(t),
        })
        .filter(|r| [r.energy, r.p, r.q_abs, r.pf].iter().all(|v| !v.is_nan()))
        .collect();
    if rows.len() < 10 {
        return Err(Error::Range(format!(
            "only {} aligned windows; at least 10 are needed",
            rows.len()
        )));
    }
    let e: Vec<f64> = rows.iter().map(|r| r.energy).collect();
    let corr = |name: &str, x: Vec<f64>| {
        let r = pearson(&e, &x);
        DriverCorrelation {
            driver: name.to_string(),
            r: r.unwrap_or(f64::NAN),
            defined: r.is_some(),
        }
    };
    let correlations = vec![
        corr("p", rows.iter().map(|r| r.p).collect()),
        corr("q_abs", rows.iter().map(|r| r.q_abs).collect()),
        corr("pf", rows.iter().map(|r| r.pf).collect()),
    ];
    let on: Vec<f64> = rows.iter().filter(|r| r.p > 0.0).map(|r| r.energy).collect();
    let off: Vec<f64> = rows.iter().filter(|r| !(r.p > 0.0)).map(|r| r.energy).collect();
    let m_on = if on.is_empty() { f64::NAN } else { mean(&on) };
    let m_off = if off.is_empty() { f64::NAN } else { mean(&off) };
    Ok(CausalityReport {
        correlations,
        mean_energy_gate_on: m_on,
        mean_energy_gate_off: m_off,
        gate_ratio: m_on / m_off,
        windows_on: on.len(),
        windows_off: off.len(),
        rows,
    })
}

/// ON/OFF threshold for a two-level energy series: log-domain two-means
/// split, then the geometric mean of the two groups' medians.
///
/// NaN and nonpositive values are ignored; `None` when fewer than two
/// distinct levels remain.
pub fn two_level_threshold(values: &[f64]) -> Option<f64> {
    let logs: Vec<f64> = values.iter().filter(|v| **v > 0.0).map(|v| v.ln()).collect();
    let lo = logs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return None;
    }
    let mut cut = 0.5 * (lo + hi);
    for _ in 0..100 {
        let (a, b): (Vec<f64>, Vec<f64>) = logs.iter().partition(|&&x| x < cut);
        let next = 0.5 * (mean(&a) + mean(&b));
        if next == cut {
            break;
        }
        cut = next;
    }
    let (a, b): (Vec<f64>, Vec<f64>) = logs.iter().partition(|&&x| x < cut);
    Some((0.5 * (median(&a) + median(&b))).exp())
}

/// Geometric mean of the medians of the values labelled ON and OFF.
pub fn labelled_threshold(values: &[f64], on: &[bool]) -> Option<f64> {
    let pick = |want: bool| -> Vec<f64> {
        values
            .iter()
            .zip(on)
            .filter(|(v, o)| **o == want && **v > 0.0)
            .map(|(v, _)| *v)
            .collect()
    };
    let (a, b) = (pick(true), pick(false));
    (!a.is_empty() && !b.is_empty()).then(|| (median(&a) * median(&b)).sqrt())
}

/// F1 score of `pred` against `truth` (1 when both have no positives).
pub fn f1_score(pred: &[bool], truth: &[bool]) -> f64 {
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for (p, t) in pred.iter().zip(truth) {
        match (p, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            _ => {}
        }
    }
    if tp + fp + fneg == 0 {
        return 1.0;
    }
    2.0 * tp as f64 / (2 * tp + fp + fneg) as f64
}

/// Regular grid over a rectangle; `nx × ny` cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl GridSpec {
    /// Bounds enclosing `points`, padded by `margin` on every side.
    pub fn around(points: &[(f64, f64, f64)], nx: usize, ny: usize, margin: f64) -> Self {
        let fold = |f: fn(f64, f64) -> f64, init: f64, sel: fn(&(f64, f64, f64)) -> f64| {
            points.iter().map(sel).fold(init, f)
        };
        Self {
            nx,
            ny,
            x_min: fold(f64::min, f64::INFINITY, |p| p.0) - margin,
            x_max: fold(f64::max, f64::NEG_INFINITY, |p| p.0) + margin,
            y_min: fold(f64::min, f64::INFINITY, |p| p.1) - margin,
            y_max: fold(f64::max, f64::NEG_INFINITY, |p| p.1) + margin,
        }
    }

    fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / self.nx as f64
    }

    fn dy(&self) -> f64 {
        (self.y_max - self.y_min) / self.ny as f64
    }

    fn cell_of(&self, x: f64, y: f64) -> (usize, usize) {
        let i = (((x - self.x_min) / self.dx()).floor().max(0.0) as usize).min(self.nx - 1);
        let j = (((y - self.y_min) / self.dy()).floor().max(0.0) as usize).min(self.ny - 1);
        (i, j)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapGrid {
    pub spec: GridSpec,
    /// Cell-centre x coordinates.
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    /// `values[j][i]` for row `j` (y) and column `i` (x); NaN beyond the cutoff.
    #[serde(with = "serde_nan::matrix")]
    pub values: Vec<Vec<f64>>,
}

impl HeatmapGrid {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("y\\x");
        for x in &self.xs {
            let _ = write!(out, ",{x}");
        }
        out.push('\n');
        for (y, row) in self.ys.iter().zip(&self.values) {
            let _ = write!(out, "{y}");
            for v in row {
                if v.is_nan() {
                    out.push(',');
                } else {
                    let _ = write!(out, ",{v}");
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn max_cell(&self) -> Option<(usize, usize, f64)> {
        let mut best: Option<(usize, usize, f64)> = None;
        for (j, row) in self.values.iter().enumerate() {
            for (i, &v) in row.iter().enumerate() {
                if !v.is_nan() && best.is_none_or(|b| v > b.2) {
                    best = Some((i, j, v));
                }
            }
        }
        best
    }
}

/// Inverse-distance-weighted interpolation of `(x, y, value)` samples.
///
/// A cell holding sample points takes their mean value directly; other cells
/// are interpolated at their centre with weights `d^-idw_power`. With a
/// `cutoff`, cells whose nearest sample is farther away are NaN.
pub fn heatmap_grid(
    points: &[(f64, f64, f64)],
    spec: GridSpec,
    idw_power: f64,
    cutoff: Option<f64>,
) -> Result<HeatmapGrid> {
    if spec.nx == 0 || spec.ny == 0 {
        return Err(Error::param("grid", "grid dimensions must be nonzero"));
    }
    if points.is_empty() {
        return Err(Error::param("points", "need at least one sample point"));
    }
    if !(spec.x_min < spec.x_max && spec.y_min < spec.y_max) {
        return Err(Error::param("grid", "bounds must have positive extent"));
    }
    if let Some(p) = points
        .iter()
        .find(|p| p.0 < spec.x_min || p.0 > spec.x_max || p.1 < spec.y_min || p.1 > spec.y_max)
    {
        return Err(Error::param("grid", format!("point ({}, {}) lies outside the bounds", p.0, p.1)));
    }
    let xs: Vec<f64> = (0..spec.nx).map(|i| spec.x_min + (i as f64 + 0.5) * spec.dx()).collect();
    let ys: Vec<f64> = (0..spec.ny).map(|j| spec.y_min + (j as f64 + 0.5) * spec.dy()).collect();

    let mut occupied: Vec<Vec<Vec<f64>>> = vec![vec![Vec::new(); spec.nx]; spec.ny];
    for p in points {
        let (i, j) = spec.cell_of(p.0, p.1);
        occupied[j][i].push(p.2);
    }
    let values = (0..spec.ny)
        .map(|j| {
            (0..spec.nx)
                .map(|i| {
                    let inside = &occupied[j][i];
                    if !inside.is_empty() {
                        return mean(inside);
                    }
                    let (cx, cy) = (xs[i], ys[j]);
                    let mut nearest = f64::INFINITY;
                    let mut wsum = 0.0;
                    let mut vsum = 0.0;
                    for p in points {
                        let d = (p.0 - cx).hypot(p.1 - cy);
                        nearest = nearest.min(d);
                        let w = d.powf(-idw_power);
                        wsum += w;
                        vsum += w * p.2;
                    }
                    match cutoff {
                        Some(c) if nearest > c => f64::NAN,
                        _ => vsum / wsum,
                    }
                })
                .collect()
        })
        .collect();
    Ok(HeatmapGrid { spec, xs, ys, values })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelEnergy {
    pub id: String,
    pub substation: String,
    pub kind: ChannelKind,
    pub e_percent: f64,
    /// Scenario label for voltage channels, from the paired current channel.
    pub scenario: Scenario,
    pub location: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeEnergyReport {
    pub channels: Vec<ChannelEnergy>,
    pub heatmap: Option<HeatmapGrid>,
    pub config: ModeEnergyConfig,
    pub on_threshold: f64,
}

impl ModeEnergyReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("id,substation,kind,e_percent,scenario,x,y\n");
        for c in &self.channels {
            let (x, y) = c.location.map_or((String::new(), String::new()), |(x, y)| (x.to_string(), y.to_string()));
            let sc = match c.scenario {
                Scenario::S1 => "S1",
                Scenario::S2 => "S2",
                Scenario::None => "none",
            };
            let _ = writeln!(out, "{},{},{},{},{sc},{x},{y}", c.id, c.substation, c.kind, c.e_percent);
        }
        out
    }

    /// Heatmap samples: mean voltage-magnitude E per located substation.
    pub fn substation_points(&self) -> Vec<(f64, f64, f64)> {
        let mut subs: Vec<(&str, (f64, f64), Vec<f64>)> = Vec::new();
        for c in self.channels.iter().filter(|c| c.kind == ChannelKind::Vphm) {
            let Some(loc) = c.location else { continue };
            match subs.iter_mut().find(|s| s.0 == c.substation) {
                Some(s) => s.2.push(c.e_percent),
                None => subs.push((&c.substation, loc, vec![c.e_percent])),
            }
        }
        subs.into_iter().map(|(_, (x, y), e)| (x, y, mean(&e))).collect()
    }
}

/// Mode-energy table for a channel set with one PSD per channel (same order).
///
/// Voltage channels are labelled using the first current channel of the
/// matching magnitude/angle type at the same substation; when the PSDs lack a
/// current partner the label is decided from the voltage alone.
pub fn build_energy_report(
    set: &ChannelSet,
    psds: &[PsdEstimate],
    cfg: &ModeEnergyConfig,
    on_threshold: f64,
    grid: Option<(GridSpec, f64, Option<f64>)>,
) -> Result<ModeEnergyReport> {
    if psds.len() != set.len() {
        return Err(Error::param("psds", "need one PSD per channel"));
    }
    let energies = psds
        .iter()
        .map(|p| mode_energy_percent(p, cfg))
        .collect::<Result<Vec<_>>>()?;
    let chans: Vec<&PhasorChannel> = set.iter().collect();
    let channels = chans
        .iter()
        .zip(&energies)
        .map(|(c, &e)| {
            let scenario = if c.kind().is_voltage() {
                let partner = if c.kind() == ChannelKind::Vphm { ChannelKind::Iphm } else { ChannelKind::Ipha };
                let i_e = chans
                    .iter()
                    .zip(&energies)
                    .find(|(o, _)| o.kind() == partner && o.substation() == c.substation())
                    .map_or(0.0, |(_, &ie)| ie);
                classify_scenario(e, i_e, on_threshold)
            } else {
                Scenario::None
            };
            ChannelEnergy {
                id: c.id().to_string(),
                substation: c.substation().to_string(),
                kind: c.kind(),
                e_percent: e,
                scenario,
                location: c.location(),
            }
        })
        .collect();
    let mut report = ModeEnergyReport {
        channels,
        heatmap: None,
        config: *cfg,
        on_threshold,
    };
    if let Some((spec, power, cutoff)) = grid {
        let pts = report.substation_points();
        if !pts.is_empty() {
            report.heatmap = Some(heatmap_grid(&pts, spec, power, cutoff)?);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::PsdMethod;
    use proptest::prelude::*;

    fn grid(df: f64) -> Vec<f64> {
        (0..=(15.0 / df) as usize).map(|i| i as f64 * df).collect()
    }

    fn psd(freqs: Vec<f64>, density: Vec<f64>) -> PsdEstimate {
        PsdEstimate::new(freqs, density, PsdMethod::Welch, "x").unwrap()
    }

    #[test]
    fn flat_psd_is_zero() {
        let f = grid(1.0 / 60.0);
        let p = psd(f.clone(), vec![3.0; f.len()]);
        let cfg = ModeEnergyConfig::paper_preset(8.0).unwrap();
        assert_eq!(mode_energy_percent(&p, &cfg).unwrap(), 0.0);
    }

    #[test]
    fn triangle_on_flat_baseline_is_hundred() {
        let f = grid(1.0 / 60.0);
        let d: Vec<f64> = f.iter().map(|x| 2.0 + (5.0 * (1.0 - (x - 8.0).abs() / 0.3)).max(0.0)).collect();
        let e = mode_energy_percent(&psd(f, d), &ModeEnergyConfig::paper_preset(8.0).unwrap()).unwrap();
        assert!((e - 100.0).abs() <= 0.5, "{e}");
    }

    #[test]
    fn config_ordering_enforced() {
        assert!(ModeEnergyConfig::new(5.0, 11.0, (4.0, 6.0), TrendModel::Linear).is_err());
        assert!(ModeEnergyConfig::new(5.0, 11.0, (8.0, 7.0), TrendModel::Linear).is_err());
    }

    #[test]
    fn band_outside_psd_rejected() {
        let f: Vec<f64> = (0..100).map(|i| i as f64 * 0.1).collect();
        let p = psd(f, vec![1.0; 100]);
        assert!(matches!(
            mode_energy_percent(&p, &ModeEnergyConfig::paper_preset(8.0).unwrap()),
            Err(Error::Parameter { .. })
        ));
    }

    #[test]
    fn too_few_side_bins_rejected() {
        let f: Vec<f64> = (0..=15).map(f64::from).collect();
        let p = psd(f, vec![1.0; 16]);
        let cfg = ModeEnergyConfig::new(5.0, 11.0, (6.5, 9.5), TrendModel::Linear).unwrap();
        assert!(mode_energy_percent(&p, &cfg).is_err());
    }

    #[test]
    fn scenario_labels() {
        assert_eq!(classify_scenario(60.0, 5.0, 20.0), Scenario::S1);
        assert_eq!(classify_scenario(60.0, 55.0, 20.0), Scenario::S2);
        assert_eq!(classify_scenario(5.0, 5.0, 20.0), Scenario::None);
        assert_eq!(classify_scenario(5.0, 50.0, 20.0), Scenario::None);
    }

    fn series(name: &str, v: Vec<f64>) -> TimeSeries {
        TimeSeries {
            name: name.into(),
            times: (0..v.len()).map(|i| i as f64 * 60.0).collect(),
            values: v,
        }
    }

    #[test]
    fn constant_driver_flagged() {
        let e = series("e", (0..20).map(|i| i as f64).collect());
        let zero = series("p", vec![0.0; 20]);
        let rep = correlate_energy_power(&e, &zero, &zero, &zero).unwrap();
        let r = rep.r("p").unwrap();
        assert!(!r.defined && r.r.is_nan());
    }

    #[test]
    fn too_few_windows() {
        let e = series("e", vec![1.0; 5]);
        assert!(correlate_energy_power(&e, &e, &e, &e).is_err());
    }

    #[test]
    fn nearest_alignment() {
        let s = series("p", vec![1.0, 2.0, 3.0]);
        assert_eq!(s.nearest(-10.0), 1.0);
        assert_eq!(s.nearest(70.0), 2.0);
        assert_eq!(s.nearest(1e9), 3.0);
    }

    #[test]
    fn threshold_splits_two_levels() {
        let v: Vec<f64> = (0..40).map(|i| if i % 3 == 0 { 100.0 + i as f64 } else { 1.0 + 0.01 * i as f64 }).collect();
        let th = two_level_threshold(&v).unwrap();
        assert!(th > 2.0 && th < 100.0, "{th}");
        let on: Vec<bool> = v.iter().map(|x| *x > 50.0).collect();
        let lt = labelled_threshold(&v, &on).unwrap();
        assert!(lt > 2.0 && lt < 100.0);
        assert!(two_level_threshold(&[3.0; 5]).is_none());
    }

    #[test]
    fn f1_cases() {
        assert_eq!(f1_score(&[true, false], &[true, false]), 1.0);
        assert_eq!(f1_score(&[false, false], &[false, false]), 1.0);
        assert!((f1_score(&[true, true], &[true, false]) - 2.0 / 3.0).abs() < 1e-15);
    }

    fn spec(n: usize, half: f64) -> GridSpec {
        GridSpec {
            nx: n,
            ny: n,
            x_min: -half,
            x_max: half,
            y_min: -half,
            y_max: half,
        }
    }

    #[test]
    fn single_point_fills_grid() {
        let g = heatmap_grid(&[(1.3, -2.0, 42.0)], spec(11, 10.0), 2.0, None).unwrap();
        assert!(g.values.iter().flatten().all(|v| (v - 42.0).abs() < 1e-12));
    }

    #[test]
    fn symmetric_pair_gives_midpoint() {
        let g = heatmap_grid(&[(-7.0, 0.0, 0.0), (7.0, 0.0, 100.0)], spec(11, 10.0), 2.0, None).unwrap();
        assert!((g.values[5][5] - 50.0).abs() < 1e-9);
    }

    #[test]
    fn sample_cells_reproduce_values() {
        let pts = [(-7.0, 3.0, 10.0), (4.0, 4.0, 80.0), (2.0, -8.0, 33.0)];
        let s = spec(20, 10.0);
        let g = heatmap_grid(&pts, s, 2.0, None).unwrap();
        for p in pts {
            let (i, j) = s.cell_of(p.0, p.1);
            assert!((g.values[j][i] - p.2).abs() < 1e-9);
        }
    }

    #[test]
    fn cutoff_blanks_far_cells() {
        let g = heatmap_grid(&[(0.0, 0.0, 5.0)], spec(21, 10.0), 2.0, Some(3.0)).unwrap();
        assert!(g.values[0][0].is_nan());
        assert_eq!(g.values[10][10], 5.0);
    }

    #[test]
    fn zero_grid_rejected() {
        assert!(heatmap_grid(&[(0.0, 0.0, 1.0)], spec(0, 1.0), 2.0, None).is_err());
    }

    proptest! {
        #[test]
        fn percent_is_bounded(knots in proptest::collection::vec(0.0f64..10.0, 8..20)) {
            // random piecewise-linear density on [0, 15] Hz
            let f = grid(0.05);
            let seg = 15.0 / (knots.len() - 1) as f64;
            let d: Vec<f64> = f.iter().map(|x| {
                let k = ((x / seg) as usize).min(knots.len() - 2);
                let t = (x - k as f64 * seg) / seg;
                knots[k] * (1.0 - t) + knots[k + 1] * t
            }).collect();
            let e = mode_energy_percent(&psd(f, d), &ModeEnergyConfig::paper_preset(8.0).unwrap()).unwrap();
            prop_assert!((0.0..=100.0).contains(&e));
        }

        #[test]
        fn heatmap_permutation_and_translation(
            pts in proptest::collection::vec((-9.0f64..9.0, -9.0f64..9.0, 0.0f64..100.0), 1..8),
            shift in (-50.0f64..50.0, -50.0f64..50.0),
            rot in 0usize..8,
        ) {
            let s = spec(13, 10.0);
            let base = heatmap_grid(&pts, s, 2.0, None).unwrap();
            let mut perm = pts.clone();
            perm.rotate_left(rot % pts.len());
            perm.reverse();
            let g = heatmap_grid(&perm, s, 2.0, None).unwrap();
            for (a, b) in base.values.iter().flatten().zip(g.values.iter().flatten()) {
                prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
            }
            // shift by whole cells so cell membership is unchanged
            let cell = 20.0 / 13.0;
            let (sx, sy) = ((shift.0 / cell).round() * cell, (shift.1 / cell).round() * cell);
            let moved: Vec<_> = pts.iter().map(|p| (p.0 + sx, p.1 + sy, p.2)).collect();
            let ms = GridSpec { x_min: s.x_min + sx, x_max: s.x_max + sx, y_min: s.y_min + sy, y_max: s.y_max + sy, ..s };
            let t = heatmap_grid(&moved, ms, 2.0, None).unwrap();
            for (a, b) in base.values.iter().flatten().zip(t.values.iter().flatten()) {
                prop_assert!((a - b).abs() <= 1e-6 * (1.0 + a.abs()));
            }
        }
    }
}
