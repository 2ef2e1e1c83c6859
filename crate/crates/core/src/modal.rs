//! Frequency-domain decomposition: singular-value curves of the CSD stack,
//! mode multiplicity, mode-frequency refinement and complex mode shapes.
//!
//! Shape phase convention: a positive phase means the channel leads the
//! reference channel.

use std::f64::consts::PI;
use std::fmt::Write as _;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{CsdStack, PsdEstimate};
use crate::stats::median;

/// Default peak threshold: 6 dB above the in-band median and the peak's base.
pub fn default_prominence() -> f64 {
    10f64.powf(0.6)
}

/// Default coincidence tolerance, in bins.
pub const DEFAULT_COINCIDE_BINS: f64 = 2.0;

/// Two unit vectors are treated as the same shape above this |inner product|.
pub const PARALLEL_THRESHOLD: f64 = 0.9;

/// Top singular values and vectors of the CSD matrix at every bin in a band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingularCurves {
    pub freqs: Vec<f64>,
    /// `sigma[f][k]`, descending in `k`.
    pub sigma: Vec<Vec<f64>>,
    /// `vectors[f][k]` is the unit left singular vector of `sigma[f][k]`.
    pub vectors: Vec<Vec<Vec<Complex64>>>,
    pub channel_ids: Vec<String>,
    pub resolution_hz: f64,
}

impl SingularCurves {
    pub fn curve(&self, k: usize) -> Vec<f64> {
        self.sigma.iter().map(|s| s[k]).collect()
    }

    pub fn n_curves(&self) -> usize {
        self.sigma.first().map_or(0, Vec::len)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("freq_hz");
        for k in 0..self.n_curves() {
            let _ = write!(out, ",sigma{}", k + 1);
        }
        out.push('\n');
        for (f, s) in self.freqs.iter().zip(&self.sigma) {
            let _ = write!(out, "{f}");
            for v in s {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

/// Sorted singular values and left singular vectors of one matrix.
pub fn sorted_svd(m: &DMatrix<Complex64>) -> (Vec<f64>, Vec<Vec<Complex64>>) {
    let svd = m.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let values = order.iter().map(|&i| svd.singular_values[i]).collect();
    let vectors = order
        .iter()
        .map(|&i| u.column(i).iter().copied().collect())
        .collect();
    (values, vectors)
}

/// SVD of every CSD matrix with `lo <= f <= hi`, keeping the top `m` curves.
pub fn fdd_curves(csd: &CsdStack, band_hz: (f64, f64), m: usize) -> Result<SingularCurves> {
    let n = csd.n_channels();
    if m == 0 || m > n {
        return Err(Error::param("m", format!("requested {m} curves from {n} channels")));
    }
    let (lo, hi) = band_hz;
    let fmax = csd.freqs.last().copied().unwrap_or(0.0);
    if !(lo >= 0.0 && lo < hi && hi <= fmax) {
        return Err(Error::param(
            "band_hz",
            format!("band ({lo}, {hi}) must lie within [0, {fmax}]"),
        ));
    }
    let bins: Vec<usize> = (0..csd.freqs.len())
        .filter(|&b| csd.freqs[b] >= lo && csd.freqs[b] <= hi)
        .collect();
    if bins.is_empty() {
        return Err(Error::param("band_hz", "band holds no frequency bin"));
    }
    let per_bin: Vec<(Vec<f64>, Vec<Vec<Complex64>>)> = bins
        .par_iter()
        .map(|&b| {
            let (mut s, mut v) = sorted_svd(&csd.matrices[b]);
            s.truncate(m);
            v.truncate(m);
            (s, v)
        })
        .collect();
    let (sigma, vectors) = per_bin.into_iter().unzip();
    Ok(SingularCurves {
        freqs: bins.iter().map(|&b| csd.freqs[b]).collect(),
        sigma,
        vectors,
        channel_ids: csd.channel_ids.clone(),
        resolution_hz: csd.resolution_hz,
    })
}

fn inner_abs(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum::<Complex64>().norm()
}

/// Interior local maxima of `v` (strictly above the left neighbour, not below the right).
fn local_maxima(v: &[f64]) -> Vec<usize> {
    (1..v.len().saturating_sub(1))
        .filter(|&i| v[i] > v[i - 1] && v[i] >= v[i + 1])
        .collect()
}

/// Ratio of `v[i]` to its base: the higher of the two minima that separate it
/// from higher ground (or from the ends of the curve) on either side.
fn prominence_ratio(v: &[f64], i: usize) -> f64 {
    let side = |range: &mut dyn Iterator<Item = usize>| {
        let mut low = v[i];
        for j in range {
            if v[j] > v[i] {
                break;
            }
            low = low.min(v[j]);
        }
        low
    };
    let left = side(&mut (0..i).rev());
    let right = side(&mut (i + 1..v.len()));
    let base = left.max(right);
    if base > 0.0 {
        v[i] / base
    } else {
        f64::INFINITY
    }
}

/// Local maxima at least `ratio` above both the curve median and their own base.
fn prominent_peaks(v: &[f64], ratio: f64) -> Vec<usize> {
    let med = median(v);
    local_maxima(v)
        .into_iter()
        .filter(|&i| v[i] >= ratio * med && prominence_ratio(v, i) >= ratio)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectedMode {
    pub freq_hz: f64,
    /// Which singular curve the mode was read from (0 = largest).
    pub curve: usize,
    pub sigma: f64,
    /// Unit singular vector at the peak, channel-ordered.
    pub shape: Vec<Complex64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiplicityReport {
    pub count: usize,
    pub modes: Vec<DetectedMode>,
    pub channel_ids: Vec<String>,
    /// Ratio σ2/σ1 at the strongest curve-0 peak, when two curves exist.
    pub sigma_ratio_at_peak: Option<f64>,
}

/// Counts distinct modes from the singular-value curves.
///
/// A peak must stand `peak_prominence` times above both its curve's median
/// and its own base (the higher of the minima separating it from higher
/// ground on either side), so ripple on a broad mode's skirt is not a peak.
/// A peak on curve 1 within `coincide_tol_hz` of a curve-0 peak adds a second
/// mode at that frequency when its singular vector is not parallel to the
/// curve-0 vector.
/// Candidates whose shape is parallel to an already accepted mode are folded
/// into it (leakage side lobes of one mode share its shape).
pub fn count_modes(curves: &SingularCurves, peak_prominence: f64, coincide_tol_hz: f64) -> MultiplicityReport {
    let mut report = MultiplicityReport {
        count: 0,
        modes: Vec::new(),
        channel_ids: curves.channel_ids.clone(),
        sigma_ratio_at_peak: None,
    };
    if curves.freqs.is_empty() || curves.n_curves() == 0 {
        return report;
    }
    let c0 = curves.curve(0);
    let mut peaks0 = prominent_peaks(&c0, peak_prominence);
    peaks0.sort_by(|&a, &b| c0[b].total_cmp(&c0[a]));

    let c1 = (curves.n_curves() > 1).then(|| curves.curve(1));
    if let (Some(c1), Some(&top)) = (&c1, peaks0.first()) {
        report.sigma_ratio_at_peak = Some(c1[top] / c0[top]);
    }

    let parallel_to_accepted = |modes: &[DetectedMode], v: &[Complex64]| {
        modes.iter().any(|m| inner_abs(&m.shape, v) >= PARALLEL_THRESHOLD)
    };

    for &p in &peaks0 {
        let v = &curves.vectors[p][0];
        if !parallel_to_accepted(&report.modes, v) {
            report.modes.push(DetectedMode {
                freq_hz: curves.freqs[p],
                curve: 0,
                sigma: c0[p],
                shape: v.clone(),
            });
        }
    }

    if let Some(c1) = c1 {
        let peaks1 = prominent_peaks(&c1, peak_prominence);
        for &p in &peaks0 {
            let f = curves.freqs[p];
            let best = peaks1
                .iter()
                .copied()
                .filter(|&q| (curves.freqs[q] - f).abs() <= coincide_tol_hz)
                .filter(|&q| c1[q] > 1e-8 * c0[p])
                .max_by(|&a, &b| c1[a].total_cmp(&c1[b]));
            let Some(q) = best else { continue };
            let v1 = &curves.vectors[q][1];
            if inner_abs(&curves.vectors[p][0], v1) < PARALLEL_THRESHOLD
                && !parallel_to_accepted(&report.modes, v1)
            {
                report.modes.push(DetectedMode {
                    freq_hz: curves.freqs[q],
                    curve: 1,
                    sigma: c1[q],
                    shape: v1.clone(),
                });
            }
        }
    }
    report.count = report.modes.len();
    report
}

/// Frequency of the largest density in `band_hz`, refined by a three-point
/// parabola through the log densities.
///
/// Returns `Ok(None)` when the band is flat (max/min below 1.1).
pub fn estimate_mode_frequency(psd: &PsdEstimate, band_hz: (f64, f64)) -> Result<Option<f64>> {
    let (lo, hi) = band_hz;
    let first = psd.freqs[0];
    let last = *psd.freqs.last().expect("nonempty grid");
    if !(lo < hi && lo >= first && hi <= last) {
        return Err(Error::param(
            "band_hz",
            format!("band ({lo}, {hi}) must lie within [{first}, {last}]"),
        ));
    }
    let in_band: Vec<usize> = (0..psd.freqs.len())
        .filter(|&i| psd.freqs[i] >= lo && psd.freqs[i] <= hi)
        .collect();
    if in_band.is_empty() {
        return Err(Error::param("band_hz", "band holds no frequency bin"));
    }
    let (mut kmax, mut dmax, mut dmin) = (in_band[0], f64::NEG_INFINITY, f64::INFINITY);
    for &i in &in_band {
        let d = psd.density[i];
        if d > dmax {
            dmax = d;
            kmax = i;
        }
        dmin = dmin.min(d);
    }
    if !(dmax >= 1.1 * dmin) {
        return Ok(None);
    }
    let f = psd.freqs[kmax];
    if kmax == 0 || kmax + 1 >= psd.freqs.len() {
        return Ok(Some(f));
    }
    let (dl, dr) = (psd.density[kmax - 1], psd.density[kmax + 1]);
    // neighbours far below the peak mean the tone sits on the bin
    if !(dl > 1e-12 * dmax && dr > 1e-12 * dmax) {
        return Ok(Some(f));
    }
    let (l, c, r) = (dl.ln(), dmax.ln(), dr.ln());
    let denom = l - 2.0 * c + r;
    if !(denom < 0.0) {
        return Ok(Some(f));
    }
    let delta = (0.5 * (l - r) / denom).clamp(-0.5, 0.5);
    let step = psd.freqs[kmax + 1] - psd.freqs[kmax];
    Ok(Some(f + delta * step))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeEstimator {
    /// First singular vector of the CSD matrix.
    #[default]
    Fdd,
    /// Cross-spectrum of each channel against the reference.
    CrossSpectrum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeEntry {
    pub id: String,
    pub magnitude: f64,
    /// In (-π, π]; positive leads the reference.
    pub phase_rad: f64,
}

impl ShapeEntry {
    pub fn complex(&self) -> Complex64 {
        Complex64::from_polar(self.magnitude, self.phase_rad)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeShape {
    pub mode_freq_hz: f64,
    /// Frequency of the CSD bin the shape was read from.
    pub bin_freq_hz: f64,
    pub reference_id: String,
    pub estimator: ShapeEstimator,
    pub entries: Vec<ShapeEntry>,
}

impl ModeShape {
    pub fn entry(&self, id: &str) -> Option<&ShapeEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    pub fn complex_vector(&self) -> Vec<Complex64> {
        self.entries.iter().map(ShapeEntry::complex).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# mode_freq_hz={}", self.mode_freq_hz);
        let _ = writeln!(out, "# reference={}", self.reference_id);
        let _ = writeln!(out, "# phase convention: positive phase leads the reference");
        out.push_str("id,magnitude,phase_rad\n");
        for e in &self.entries {
            let _ = writeln!(out, "{},{},{}", e.id, e.magnitude, e.phase_rad);
        }
        out
    }
}

fn wrap_phase(p: f64) -> f64 {
    let mut w = p.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

/// Complex mode shape at the CSD bin nearest `f0`, referenced to `reference_id`.
pub fn mode_shape(
    csd: &CsdStack,
    f0: f64,
    reference_id: &str,
    estimator: ShapeEstimator,
) -> Result<ModeShape> {
    let fmax = csd.freqs.last().copied().unwrap_or(0.0);
    if !(f0 >= 0.0 && f0 <= fmax) {
        return Err(Error::param("f0", format!("{f0} Hz outside [0, {fmax}]")));
    }
    let r = csd
        .channel_index(reference_id)
        .ok_or_else(|| Error::Reference(format!("reference channel `{reference_id}` not in the CSD stack")))?;
    let bin = csd.nearest_bin(f0);
    let m = &csd.matrices[bin];
    // For S = E[conj(X) X^T] with X = a·s, the top singular vector is ∝ conj(a)
    // and row r of S is ∝ conj(a_r)·a.
    let raw: Vec<Complex64> = match estimator {
        ShapeEstimator::Fdd => {
            let (_, vecs) = sorted_svd(m);
            vecs[0].iter().map(|z| z.conj()).collect()
        }
        ShapeEstimator::CrossSpectrum => (0..csd.n_channels()).map(|k| m[(r, k)]).collect(),
    };
    let max = raw.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let rmag = raw[r].norm();
    if !(max > 0.0) || rmag < 1e-6 * max {
        return Err(Error::Reference(format!(
            "reference `{reference_id}` carries {:.3e} of the peak magnitude; pick another reference",
            if max > 0.0 { rmag / max } else { 0.0 }
        )));
    }
    let rot = raw[r].conj() / rmag;
    let entries = raw
        .iter()
        .zip(&csd.channel_ids)
        .enumerate()
        .map(|(k, (z, id))| {
            let w = z * rot;
            ShapeEntry {
                id: id.clone(),
                magnitude: w.norm() / max,
                phase_rad: if k == r { 0.0 } else { wrap_phase(w.im.atan2(w.re)) },
            }
        })
        .collect();
    Ok(ModeShape {
        mode_freq_hz: f0,
        bin_freq_hz: csd.freqs[bin],
        reference_id: reference_id.to_string(),
        estimator,
        entries,
    })
}
