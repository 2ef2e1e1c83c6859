//! Windowed spectral estimators.
//!
//! All densities are one-sided (unit²/Hz): interior bins carry twice the
//! two-sided value, DC and (for even lengths) Nyquist carry it once, so that
//! the sum of density × Δf over a rectangular-window periodogram equals the
//! mean square of the analyzed samples.
//!
//! Cross-spectra follow `S_ij(f) = E[conj(X_i(f)) · X_j(f)]`, so a channel
//! `j` lagging channel `i` by τ seconds gives `arg S_ij = -2πfτ`.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{ChannelSet, PhasorChannel};
use crate::serde_nan;

/// Minimum evaluation grid for parametric densities.
pub const MIN_AR_GRID: usize = 2048;
/// Default evaluation grid for parametric densities.
pub const DEFAULT_AR_GRID: usize = 4097;
/// Default AR order for 30 sps ambient records.
pub const DEFAULT_AR_ORDER: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    #[default]
    Hann,
    Rectangular,
}

impl Window {
    /// Periodic window of length `n`.
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            Window::Rectangular => vec![1.0; n],
            Window::Hann => (0..n)
                .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetrendMode {
    Mean,
    #[default]
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PsdMethod {
    Welch,
    YuleWalker,
    Periodogram,
}

impl PsdMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            PsdMethod::Welch => "welch",
            PsdMethod::YuleWalker => "yule_walker",
            PsdMethod::Periodogram => "periodogram",
        }
    }
}

/// Power spectral density on an ascending frequency grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsdEstimate {
    pub freqs: Vec<f64>,
    pub density: Vec<f64>,
    pub method: PsdMethod,
    pub resolution_hz: f64,
    pub source_channel: String,
    /// Number of averaged segments (1 for periodograms and AR fits).
    pub segments: usize,
    /// AR model order for parametric estimates.
    pub order: Option<usize>,
}

impl PsdEstimate {
    /// Builds an estimate from raw parts, checking the grid invariants.
    pub fn new(
        freqs: Vec<f64>,
        density: Vec<f64>,
        method: PsdMethod,
        source_channel: impl Into<String>,
    ) -> Result<Self> {
        if freqs.len() != density.len() {
            return Err(Error::param(
                "density",
                format!("{} frequencies but {} density values", freqs.len(), density.len()),
            ));
        }
        if freqs.len() < 2 {
            return Err(Error::param("freqs", "need at least two frequency points"));
        }
        if freqs.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::param("freqs", "frequencies must be strictly ascending"));
        }
        if density.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
            return Err(Error::param("density", "density must be finite and nonnegative"));
        }
        let resolution_hz = freqs[1] - freqs[0];
        Ok(Self {
            freqs,
            density,
            method,
            resolution_hz,
            source_channel: source_channel.into(),
            segments: 1,
            order: None,
        })
    }

    /// Rectangle-rule integral of the density over the whole grid.
    pub fn total_power(&self) -> f64 {
        self.density.iter().sum::<f64>() * self.resolution_hz
    }

    /// Rectangle-rule integral over bins with `lo <= f <= hi`.
    pub fn band_power(&self, lo: f64, hi: f64) -> f64 {
        self.freqs
            .iter()
            .zip(&self.density)
            .filter(|(f, _)| **f >= lo && **f <= hi)
            .map(|(_, d)| d)
            .sum::<f64>()
            * self.resolution_hz
    }

    /// Index of the largest density with `lo <= f <= hi`.
    pub fn peak_index(&self, lo: f64, hi: f64) -> Option<usize> {
        self.freqs
            .iter()
            .enumerate()
            .filter(|(_, f)| **f >= lo && **f <= hi)
            .max_by(|(i, _), (j, _)| self.density[*i].total_cmp(&self.density[*j]))
            .map(|(i, _)| i)
    }

    pub fn scaled(&self, c: f64) -> PsdEstimate {
        PsdEstimate {
            density: self.density.iter().map(|d| d * c).collect(),
            ..self.clone()
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# method={}", self.method.as_str());
        let _ = writeln!(out, "# source_channel={}", self.source_channel);
        let _ = writeln!(out, "# resolution_hz={}", self.resolution_hz);
        let _ = writeln!(out, "# segments={}", self.segments);
        if let Some(p) = self.order {
            let _ = writeln!(out, "# order={p}");
        }
        out.push_str("freqs,density\n");
        for (f, d) in self.freqs.iter().zip(&self.density) {
            let _ = writeln!(out, "{f},{d}");
        }
        out
    }
}

/// Time × frequency power matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrogram {
    pub source_channel: String,
    /// Window-center times, UTC seconds.
    pub times: Vec<f64>,
    pub freqs: Vec<f64>,
    /// `power[t][f]` one-sided density; rows of NaN mark windows with gaps.
    #[serde(with = "serde_nan::matrix")]
    pub power: Vec<Vec<f64>>,
    pub window_len_s: f64,
    pub hop_s: f64,
}

impl Spectrogram {
    pub fn resolution_hz(&self) -> f64 {
        1.0 / self.window_len_s
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# source_channel={}", self.source_channel);
        let _ = writeln!(out, "# window_len_s={}", self.window_len_s);
        let _ = writeln!(out, "# hop_s={}", self.hop_s);
        out.push_str("time\\freq");
        for f in &self.freqs {
            let _ = write!(out, ",{f}");
        }
        out.push('\n');
        for (t, row) in self.times.iter().zip(&self.power) {
            let _ = write!(out, "{t}");
            for p in row {
                if p.is_nan() {
                    out.push(',');
                } else {
                    let _ = write!(out, ",{p}");
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Welch estimator settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchConfig {
    pub segment_len_s: f64,
    pub overlap_frac: f64,
    pub window: Window,
    pub detrend: DetrendMode,
}

impl Default for WelchConfig {
    fn default() -> Self {
        Self {
            segment_len_s: 60.0,
            overlap_frac: 0.5,
            window: Window::Hann,
            detrend: DetrendMode::Linear,
        }
    }
}

impl WelchConfig {
    /// One-minute rectangular segments without overlap, as used for the
    /// system-wide 20-minute voltage magnitude survey.
    pub fn paper_survey() -> Self {
        Self {
            segment_len_s: 60.0,
            overlap_frac: 0.0,
            window: Window::Rectangular,
            detrend: DetrendMode::Linear,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrogramConfig {
    pub window_len_s: f64,
    pub hop_s: f64,
    pub window: Window,
    pub detrend: DetrendMode,
}

impl Default for SpectrogramConfig {
    fn default() -> Self {
        Self {
            window_len_s: 300.0,
            hop_s: 300.0,
            window: Window::Hann,
            detrend: DetrendMode::Linear,
        }
    }
}

/// Removes the mean or the least-squares line from `x` in place.
pub fn detrend_in_place(x: &mut [f64], mode: DetrendMode) {
    let n = x.len();
    if n == 0 {
        return;
    }
    let nf = n as f64;
    let mean = x.iter().sum::<f64>() / nf;
    match mode {
        DetrendMode::Mean => x.iter_mut().for_each(|v| *v -= mean),
        DetrendMode::Linear => {
            let tc = (nf - 1.0) / 2.0;
            let mut sxx = 0.0;
            let mut sxy = 0.0;
            for (i, v) in x.iter().enumerate() {
                let dt = i as f64 - tc;
                sxx += dt * dt;
                sxy += dt * (v - mean);
            }
            let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
            for (i, v) in x.iter_mut().enumerate() {
                *v -= mean + slope * (i as f64 - tc);
            }
        }
    }
}

pub fn detrend(ch: &PhasorChannel, mode: DetrendMode) -> Result<PhasorChannel> {
    ch.require_finite()?;
    let mut values = ch.values().to_vec();
    detrend_in_place(&mut values, mode);
    Ok(ch.derive(ch.t0(), values))
}

/// FFT plan, window and per-bin density scale for one segment length.
struct SegmentAnalyzer {
    n: usize,
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    bin_scale: Vec<f64>,
    fs: f64,
    detrend: DetrendMode,
}

impl SegmentAnalyzer {
    fn new(n: usize, fs: f64, window: Window, detrend: DetrendMode) -> Self {
        let fft = FftPlanner::new().plan_fft_forward(n);
        let window = window.coefficients(n);
        let power: f64 = window.iter().map(|w| w * w).sum();
        let base = 1.0 / (fs * power);
        let n_bins = n / 2 + 1;
        let bin_scale = (0..n_bins)
            .map(|k| {
                if k == 0 || (n % 2 == 0 && k == n / 2) {
                    base
                } else {
                    2.0 * base
                }
            })
            .collect();
        Self {
            n,
            fft,
            window,
            bin_scale,
            fs,
            detrend,
        }
    }

    fn n_bins(&self) -> usize {
        self.bin_scale.len()
    }

    fn freqs(&self) -> Vec<f64> {
        (0..self.n_bins())
            .map(|k| k as f64 * self.fs / self.n as f64)
            .collect()
    }

    /// Detrended, windowed spectrum of one segment (non-negative bins only).
    fn spectrum(&self, seg: &[f64]) -> Vec<Complex64> {
        let mut x = seg.to_vec();
        detrend_in_place(&mut x, self.detrend);
        let mut buf: Vec<Complex64> = x
            .iter()
            .zip(&self.window)
            .map(|(v, w)| Complex64::new(v * w, 0.0))
            .collect();
        self.fft.process(&mut buf);
        buf.truncate(self.n_bins());
        buf
    }

    fn density(&self, seg: &[f64]) -> Vec<f64> {
        self.spectrum(seg)
            .iter()
            .zip(&self.bin_scale)
            .map(|(x, s)| x.norm_sqr() * s)
            .collect()
    }
}

fn segment_samples(len_s: f64, fs: f64, what: &'static str) -> Result<usize> {
    if !(len_s.is_finite() && len_s > 0.0) {
        return Err(Error::param(what, format!("must be positive, got {len_s}")));
    }
    let n = (len_s * fs).round() as usize;
    if n < 2 {
        return Err(Error::param(what, format!("{len_s} s is shorter than two samples at {fs} sps")));
    }
    Ok(n)
}

fn segment_starts(total: usize, nperseg: usize, step: usize) -> Vec<usize> {
    if total < nperseg {
        return Vec::new();
    }
    (0..=total - nperseg).step_by(step).collect()
}

fn welch_step(nperseg: usize, overlap_frac: f64) -> Result<usize> {
    if !(0.0..1.0).contains(&overlap_frac) {
        return Err(Error::param("overlap_frac", format!("must lie in [0, 1), got {overlap_frac}")));
    }
    let overlap = (overlap_frac * nperseg as f64).round() as usize;
    Ok((nperseg - overlap.min(nperseg - 1)).max(1))
}

fn require_duration(ch: &PhasorChannel, needed_s: f64, nperseg: usize) -> Result<()> {
    if ch.len() < nperseg {
        return Err(Error::Range(format!(
            "channel `{}` spans {:.3} s but {needed_s} s are required",
            ch.id(),
            ch.duration_s()
        )));
    }
    Ok(())
}

/// Single-window periodogram of the whole channel.
pub fn periodogram(ch: &PhasorChannel, window: Window, detrend: DetrendMode) -> Result<PsdEstimate> {
    ch.require_finite()?;
    if ch.len() < 2 {
        return Err(Error::Range(format!("channel `{}` has fewer than two samples", ch.id())));
    }
    let an = SegmentAnalyzer::new(ch.len(), ch.rate_sps(), window, detrend);
    let density = an.density(ch.values());
    Ok(PsdEstimate {
        freqs: an.freqs(),
        density,
        method: PsdMethod::Periodogram,
        resolution_hz: ch.rate_sps() / ch.len() as f64,
        source_channel: ch.id().to_string(),
        segments: 1,
        order: None,
    })
}

/// Welch PSD: average of modified periodograms over (possibly overlapping) segments.
pub fn welch_psd(ch: &PhasorChannel, cfg: &WelchConfig) -> Result<PsdEstimate> {
    ch.require_finite()?;
    let fs = ch.rate_sps();
    let nperseg = segment_samples(cfg.segment_len_s, fs, "segment_len_s")?;
    let step = welch_step(nperseg, cfg.overlap_frac)?;
    require_duration(ch, cfg.segment_len_s, nperseg)?;
    let an = SegmentAnalyzer::new(nperseg, fs, cfg.window, cfg.detrend);
    let starts = segment_starts(ch.len(), nperseg, step);
    let values = ch.values();
    let per_segment: Vec<Vec<f64>> = starts
        .par_iter()
        .map(|&s| an.density(&values[s..s + nperseg]))
        .collect();
    let mut acc = vec![0.0; an.n_bins()];
    for d in &per_segment {
        for (a, v) in acc.iter_mut().zip(d) {
            *a += v;
        }
    }
    let k = starts.len() as f64;
    acc.iter_mut().for_each(|a| *a /= k);
    Ok(PsdEstimate {
        freqs: an.freqs(),
        density: acc,
        method: PsdMethod::Welch,
        resolution_hz: fs / nperseg as f64,
        source_channel: ch.id().to_string(),
        segments: starts.len(),
        order: None,
    })
}

/// Periodogram per window; windows containing NaN yield all-NaN rows.
pub fn spectrogram(ch: &PhasorChannel, cfg: &SpectrogramConfig) -> Result<Spectrogram> {
    if !(cfg.hop_s.is_finite() && cfg.hop_s > 0.0) {
        return Err(Error::param("hop_s", format!("must be positive, got {}", cfg.hop_s)));
    }
    let fs = ch.rate_sps();
    let nwin = segment_samples(cfg.window_len_s, fs, "window_len_s")?;
    let hop = ((cfg.hop_s * fs).round() as usize).max(1);
    require_duration(ch, cfg.window_len_s, nwin)?;
    let an = SegmentAnalyzer::new(nwin, fs, cfg.window, cfg.detrend);
    let starts = segment_starts(ch.len(), nwin, hop);
    let values = ch.values();
    let power: Vec<Vec<f64>> = starts
        .par_iter()
        .map(|&s| {
            let seg = &values[s..s + nwin];
            if seg.iter().any(|v| v.is_nan()) {
                vec![f64::NAN; an.n_bins()]
            } else {
                an.density(seg)
            }
        })
        .collect();
    let times = starts
        .iter()
        .map(|&s| ch.t0() + (s as f64 + nwin as f64 / 2.0) / fs)
        .collect();
    Ok(Spectrogram {
        source_channel: ch.id().to_string(),
        times,
        freqs: an.freqs(),
        power,
        window_len_s: nwin as f64 / fs,
        hop_s: hop as f64 / fs,
    })
}

/// Autoregressive model `x[n] + Σ a_k x[n-k] = e[n]`, `Var(e) = noise_variance`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArModel {
    /// `a_1..a_p` of the prediction-error polynomial `A(z) = 1 + Σ a_k z^-k`.
    pub coeffs: Vec<f64>,
    pub noise_variance: f64,
    /// Reflection coefficients from the Levinson-Durbin recursion, each in (-1, 1).
    pub reflection: Vec<f64>,
}

impl ArModel {
    /// One-sided density at `f` Hz for sampling rate `fs`.
    pub fn density(&self, f: f64, fs: f64) -> f64 {
        let w = 2.0 * PI * f / fs;
        let mut re = 1.0;
        let mut im = 0.0;
        for (k, a) in self.coeffs.iter().enumerate() {
            let ph = w * (k + 1) as f64;
            re += a * ph.cos();
            im -= a * ph.sin();
        }
        2.0 * self.noise_variance / (fs * (re * re + im * im))
    }
}

/// Biased autocorrelation `r[k] = (1/N) Σ x[n] x[n+k]`, `k = 0..=max_lag`.
pub fn autocorrelation(x: &[f64], max_lag: usize) -> Vec<f64> {
    let n = x.len();
    (0..=max_lag)
        .map(|k| {
            if k >= n {
                0.0
            } else {
                x[..n - k].iter().zip(&x[k..]).map(|(a, b)| a * b).sum::<f64>() / n as f64
            }
        })
        .collect()
}

/// Levinson-Durbin solution of the Yule-Walker equations.
///
/// The biased autocorrelation keeps the Toeplitz system positive definite, so
/// every reflection coefficient stays inside (-1, 1) and the fitted model is
/// stable.
pub fn levinson_durbin(r: &[f64], order: usize) -> Result<ArModel> {
    if r.len() <= order {
        return Err(Error::param("order", "autocorrelation shorter than model order"));
    }
    if !(r[0] > 0.0) || !r[0].is_finite() {
        return Err(Error::Numerical(
            "singular autocorrelation (zero-variance input)".to_string(),
        ));
    }
    let mut a = vec![0.0; order];
    let mut err = r[0];
    let mut reflection = Vec::with_capacity(order);
    for m in 0..order {
        let mut acc = r[m + 1];
        for k in 0..m {
            acc += a[k] * r[m - k];
        }
        let km = -acc / err;
        if !(km.abs() < 1.0) {
            return Err(Error::Numerical(format!(
                "reflection coefficient {km} at stage {} leaves the unit interval",
                m + 1
            )));
        }
        let prev = a.clone();
        a[m] = km;
        for k in 0..m {
            a[k] = prev[k] + km * prev[m - 1 - k];
        }
        err *= 1.0 - km * km;
        reflection.push(km);
        if !(err > 0.0) {
            return Err(Error::Numerical("prediction error vanished".to_string()));
        }
    }
    Ok(ArModel {
        coeffs: a,
        noise_variance: err,
        reflection,
    })
}

/// Fits an AR model to mean-removed samples.
pub fn yule_walker(values: &[f64], order: usize) -> Result<ArModel> {
    if order == 0 {
        return Err(Error::param("order", "must be at least 1"));
    }
    if values.len() <= 10 * order {
        return Err(Error::Range(format!(
            "{} samples are too few for order {order} (need more than {})",
            values.len(),
            10 * order
        )));
    }
    let mut x = values.to_vec();
    let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    detrend_in_place(&mut x, DetrendMode::Mean);
    let r = autocorrelation(&x, order);
    if !(r[0] > (1e-12 * scale).powi(2)) {
        return Err(Error::Numerical(
            "singular autocorrelation (constant input)".to_string(),
        ));
    }
    levinson_durbin(&r, order)
}

/// Parametric PSD from a Yule-Walker AR fit, on `grid_points` frequencies in [0, fs/2].
pub fn yule_walker_psd(ch: &PhasorChannel, order: usize, grid_points: usize) -> Result<PsdEstimate> {
    ch.require_finite()?;
    if grid_points < MIN_AR_GRID {
        return Err(Error::param(
            "grid_points",
            format!("need at least {MIN_AR_GRID}, got {grid_points}"),
        ));
    }
    let model = yule_walker(ch.values(), order)?;
    let fs = ch.rate_sps();
    let df = fs / 2.0 / (grid_points - 1) as f64;
    let freqs: Vec<f64> = (0..grid_points).map(|i| i as f64 * df).collect();
    let density = freqs.iter().map(|&f| model.density(f, fs)).collect();
    Ok(PsdEstimate {
        freqs,
        density,
        method: PsdMethod::YuleWalker,
        resolution_hz: df,
        source_channel: ch.id().to_string(),
        segments: 1,
        order: Some(order),
    })
}

/// Per-frequency cross-spectral density matrices for a channel set.
#[derive(Debug, Clone, PartialEq)]
pub struct CsdStack {
    pub freqs: Vec<f64>,
    pub matrices: Vec<DMatrix<Complex64>>,
    pub channel_ids: Vec<String>,
    pub segments: usize,
    pub resolution_hz: f64,
}

impl CsdStack {
    pub fn n_channels(&self) -> usize {
        self.channel_ids.len()
    }

    /// Bin nearest to `f`.
    pub fn nearest_bin(&self, f: f64) -> usize {
        let k = (f / self.resolution_hz).round();
        (k.max(0.0) as usize).min(self.freqs.len() - 1)
    }

    pub fn channel_index(&self, id: &str) -> Option<usize> {
        self.channel_ids.iter().position(|c| c == id)
    }

    /// Magnitude-squared coherence between channels `i` and `j` at `bin`.
    pub fn coherence(&self, i: usize, j: usize, bin: usize) -> f64 {
        let m = &self.matrices[bin];
        let d = m[(i, i)].re * m[(j, j)].re;
        if d > 0.0 {
            m[(i, j)].norm_sqr() / d
        } else {
            0.0
        }
    }
}

/// Welch-averaged cross-spectral density matrices.
///
/// Diagonal entries reproduce [`welch_psd`] of each channel exactly.
pub fn csd_matrix(chs: &ChannelSet, cfg: &WelchConfig) -> Result<CsdStack> {
    let first = chs
        .channels()
        .first()
        .ok_or_else(|| Error::param("channels", "channel set is empty"))?;
    let fs = first.rate_sps();
    for ch in chs.iter() {
        if ch.rate_sps() != fs {
            return Err(Error::param(
                "channels",
                format!("mixed rates: `{}` at {} sps vs {fs} sps", ch.id(), ch.rate_sps()),
            ));
        }
        if ch.len() != first.len() {
            return Err(Error::param(
                "channels",
                format!("`{}` has {} samples, expected {}", ch.id(), ch.len(), first.len()),
            ));
        }
        ch.require_finite()?;
    }
    let nperseg = segment_samples(cfg.segment_len_s, fs, "segment_len_s")?;
    let step = welch_step(nperseg, cfg.overlap_frac)?;
    require_duration(first, cfg.segment_len_s, nperseg)?;
    let an = SegmentAnalyzer::new(nperseg, fs, cfg.window, cfg.detrend);
    let starts = segment_starts(first.len(), nperseg, step);
    let n = chs.len();
    let n_bins = an.n_bins();

    // spectra[segment][channel][bin]
    let spectra: Vec<Vec<Vec<Complex64>>> = starts
        .par_iter()
        .map(|&s| {
            chs.iter()
                .map(|ch| an.spectrum(&ch.values()[s..s + nperseg]))
                .collect()
        })
        .collect();
    let k = starts.len() as f64;
    let matrices: Vec<DMatrix<Complex64>> = (0..n_bins)
        .into_par_iter()
        .map(|b| {
            let scale = an.bin_scale[b];
            let mut m = DMatrix::<Complex64>::zeros(n, n);
            for seg in &spectra {
                for i in 0..n {
                    let xi = seg[i][b];
                    m[(i, i)].re += xi.norm_sqr() * scale;
                    for j in i + 1..n {
                        m[(i, j)] += xi.conj() * seg[j][b] * scale;
                    }
                }
            }
            for i in 0..n {
                m[(i, i)].re /= k;
                for j in i + 1..n {
                    m[(i, j)] /= k;
                    m[(j, i)] = m[(i, j)].conj();
                }
            }
            m
        })
        .collect();
    Ok(CsdStack {
        freqs: an.freqs(),
        matrices,
        channel_ids: chs.ids().into_iter().map(String::from).collect(),
        segments: starts.len(),
        resolution_hz: fs / nperseg as f64,
    })
}

/// Second-order section in transposed direct form II, `a0` normalized to 1.
#[derive(Debug, Clone, Copy)]
struct Biquad {
    b: [f64; 3],
    a: [f64; 2],
}

impl Biquad {
    /// Butterworth (Q = 1/√2) low-pass, bilinear transform with prewarping.
    fn lowpass(fc: f64, fs: f64) -> Self {
        let w0 = 2.0 * PI * fc / fs;
        let (s, c) = w0.sin_cos();
        let alpha = s / (2.0 * std::f64::consts::FRAC_1_SQRT_2);
        let a0 = 1.0 + alpha;
        Self {
            b: [(1.0 - c) / 2.0 / a0, (1.0 - c) / a0, (1.0 - c) / 2.0 / a0],
            a: [-2.0 * c / a0, (1.0 - alpha) / a0],
        }
    }

    fn highpass(fc: f64, fs: f64) -> Self {
        let w0 = 2.0 * PI * fc / fs;
        let (s, c) = w0.sin_cos();
        let alpha = s / (2.0 * std::f64::consts::FRAC_1_SQRT_2);
        let a0 = 1.0 + alpha;
        Self {
            b: [(1.0 + c) / 2.0 / a0, -(1.0 + c) / a0, (1.0 + c) / 2.0 / a0],
            a: [-2.0 * c / a0, (1.0 - alpha) / a0],
        }
    }

    /// Filters in place, starting from the steady state for `x[0]`.
    fn run(&self, x: &mut [f64]) {
        let Some(&x0) = x.first() else { return };
        let [b0, b1, b2] = self.b;
        let [a1, a2] = self.a;
        let g = (b0 + b1 + b2) / (1.0 + a1 + a2);
        let mut s1 = (g - b0) * x0;
        let mut s2 = (b2 - a2 * g) * x0;
        for v in x.iter_mut() {
            let xin = *v;
            let y = b0 * xin + s1;
            s1 = b1 * xin - a1 * y + s2;
            s2 = b2 * xin - a2 * y;
            *v = y;
        }
    }
}

/// Zero-phase (forward-backward) filtering with odd reflection padding.
fn filtfilt(sections: &[Biquad], x: &[f64], pad: usize) -> Vec<f64> {
    let n = x.len();
    let pad = pad.min(n.saturating_sub(1));
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
    ext.extend_from_slice(x);
    ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));
    for s in sections {
        s.run(&mut ext);
    }
    ext.reverse();
    for s in sections {
        s.run(&mut ext);
    }
    ext.reverse();
    ext[pad..pad + n].to_vec()
}

/// Magnitude of the analytic signal, built by zeroing negative frequencies.
pub fn analytic_magnitude(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut buf: Vec<Complex64> = x.iter().map(|v| Complex64::new(*v, 0.0)).collect();
    fwd.process(&mut buf);
    let half = n / 2;
    for (k, z) in buf.iter_mut().enumerate() {
        let h = if k == 0 || (n % 2 == 0 && k == half) {
            1.0
        } else if k <= (n - 1) / 2 {
            2.0
        } else {
            0.0
        };
        *z *= h;
    }
    inv.process(&mut buf);
    buf.iter().map(|z| z.norm() / n as f64).collect()
}

/// Default envelope band: carrier ± 30 Hz.
pub fn default_envelope_band(carrier_hz: f64) -> (f64, f64) {
    (carrier_hz - 30.0, carrier_hz + 30.0)
}

/// Amplitude envelope of a waveform channel around `carrier_hz`.
///
/// The waveform is band-passed to `band_hz` (Butterworth high-pass at the
/// lower edge cascaded with a Butterworth low-pass at the upper edge, run
/// forward and backward), converted to its analytic-signal magnitude, and
/// mean-removed. The PSD of the result shows the modulation frequencies.
pub fn hilbert_envelope(ch: &PhasorChannel, carrier_hz: f64, band_hz: (f64, f64)) -> Result<PhasorChannel> {
    ch.require_finite()?;
    let fs = ch.rate_sps();
    let nyq = fs / 2.0;
    if !(carrier_hz > 0.0 && carrier_hz < nyq) {
        return Err(Error::param(
            "carrier_hz",
            format!("carrier {carrier_hz} Hz is beyond the {nyq} Hz Nyquist limit"),
        ));
    }
    let (lo, hi) = band_hz;
    if !(lo > 0.0 && lo < carrier_hz && carrier_hz < hi && hi < nyq) {
        return Err(Error::param(
            "band_hz",
            format!("band ({lo}, {hi}) must satisfy 0 < lo < carrier < hi < {nyq}"),
        ));
    }
    let min_len = 10.0 / lo;
    if ch.duration_s() < min_len {
        return Err(Error::Range(format!(
            "channel `{}` spans {:.3} s; envelope needs at least {min_len:.3} s",
            ch.id(),
            ch.duration_s()
        )));
    }
    let sections = [Biquad::highpass(lo, fs), Biquad::lowpass(hi, fs)];
    let pad = ((3.0 * fs / lo).ceil() as usize).max(12);
    let filtered = filtfilt(&sections, ch.values(), pad);
    let mut env = analytic_magnitude(&filtered);
    detrend_in_place(&mut env, DetrendMode::Mean);
    Ok(ch.derive(ch.t0(), env).with_id(format!("{}_env", ch.id())))
}

/// Band-integrated power per spectrogram window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandEnergySeries {
    pub source_channel: String,
    pub band_hz: (f64, f64),
    pub times: Vec<f64>,
    #[serde(with = "serde_nan::vec")]
    pub energy: Vec<f64>,
    pub window_len_s: f64,
    pub hop_s: f64,
}

/// Integral of each window's periodogram over `lo <= f <= hi`.
pub fn band_energy_series(
    ch: &PhasorChannel,
    band_hz: (f64, f64),
    cfg: &SpectrogramConfig,
) -> Result<BandEnergySeries> {
    let (lo, hi) = band_hz;
    let nyq = ch.rate_sps() / 2.0;
    if hi > nyq {
        return Err(Error::param("band_hz", format!("upper edge {hi} Hz exceeds Nyquist {nyq} Hz")));
    }
    if !(lo < hi) || lo < 0.0 {
        return Err(Error::param("band_hz", format!("empty band ({lo}, {hi})")));
    }
    let sg = spectrogram(ch, cfg)?;
    let bins: Vec<usize> = sg
        .freqs
        .iter()
        .enumerate()
        .filter(|(_, f)| **f >= lo && **f <= hi)
        .map(|(i, _)| i)
        .collect();
    if bins.is_empty() {
        return Err(Error::param(
            "band_hz",
            format!("band ({lo}, {hi}) holds no bin at {} Hz resolution", sg.resolution_hz()),
        ));
    }
    let df = sg.resolution_hz();
    let energy = sg
        .power
        .iter()
        .map(|row| bins.iter().map(|&b| row[b]).sum::<f64>() * df)
        .collect();
    Ok(BandEnergySeries {
        source_channel: sg.source_channel,
        band_hz,
        times: sg.times,
        energy,
        window_len_s: sg.window_len_s,
        hop_s: sg.hop_s,
    })
}
