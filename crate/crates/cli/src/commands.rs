//! Subcommand arguments and their analyses.
//!
//! Each analysis takes an in-memory channel set and writes its artifacts
//! through [`Outputs`], returning the values it resolved for the manifest.

use std::fmt::Write as _;
use std::path::PathBuf;

use clap::{Args, ValueEnum};
use oscmap_core::aliasing::{self, AliasObservation, FrequencyCandidate};
use oscmap_core::energy::{self, GridSpec, ModeEnergyConfig, TimeSeries, TrendModel};
use oscmap_core::ingest::{load_channels, ChannelKind, ChannelSet, Format, PhasorChannel};
use oscmap_core::modal::{self, ShapeEstimator};
use oscmap_core::spectral::{
    self, DetrendMode, PsdEstimate, SpectrogramConfig, WelchConfig, Window,
};
use oscmap_core::synth::{self, GroundTruth, SynthScenario};
use oscmap_core::{Error, Result};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::output::{stem, Outputs};
use crate::plot;

fn param(name: &'static str, msg: impl Into<String>) -> Error {
    Error::Parameter { name, msg: msg.into() }
}

pub fn parse_band(s: &str) -> std::result::Result<(f64, f64), String> {
    let (a, b) = s.split_once(':').ok_or_else(|| format!("expected lo:hi, got `{s}`"))?;
    let lo: f64 = a.trim().parse().map_err(|_| format!("bad number `{a}`"))?;
    let hi: f64 = b.trim().parse().map_err(|_| format!("bad number `{b}`"))?;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(format!("need lo < hi, got `{s}`"));
    }
    Ok((lo, hi))
}

pub fn parse_grid(s: &str) -> std::result::Result<(usize, usize), String> {
    let (a, b) = s.split_once('x').ok_or_else(|| format!("expected NXxNY, got `{s}`"))?;
    let nx: usize = a.trim().parse().map_err(|_| format!("bad count `{a}`"))?;
    let ny: usize = b.trim().parse().map_err(|_| format!("bad count `{b}`"))?;
    if nx == 0 || ny == 0 {
        return Err("grid dimensions must be positive".into());
    }
    Ok((nx, ny))
}

fn parse_kind(s: &str) -> std::result::Result<ChannelKind, String> {
    s.parse::<ChannelKind>().map_err(|e| e.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum WindowArg {
    Hann,
    Rectangular,
}

impl From<WindowArg> for Window {
    fn from(w: WindowArg) -> Self {
        match w {
            WindowArg::Hann => Window::Hann,
            WindowArg::Rectangular => Window::Rectangular,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DetrendArg {
    Mean,
    Linear,
}

impl From<DetrendArg> for DetrendMode {
    fn from(d: DetrendArg) -> Self {
        match d {
            DetrendArg::Mean => DetrendMode::Mean,
            DetrendArg::Linear => DetrendMode::Linear,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// 60 s Hann segments, 50% overlap, linear detrend.
    Default,
    /// 60 s rectangular segments, no overlap, linear detrend.
    PaperSurvey,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodArg {
    Welch,
    YuleWalker,
    Periodogram,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorArg {
    Fdd,
    CrossSpectrum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrendArg {
    Linear,
    Constant,
}

/// Channel selection shared by the analysis commands.
#[derive(Debug, Clone, Default, Args, Serialize)]
pub struct Select {
    /// Channel id to analyse (repeatable).
    #[arg(long = "channel")]
    pub channels: Vec<String>,
    /// Channel kind to analyse (repeatable), e.g. VPHM.
    #[arg(long = "kind", value_parser = parse_kind)]
    pub kinds: Vec<ChannelKind>,
    /// Keep only channels at this reporting rate (sps).
    #[arg(long)]
    pub rate: Option<f64>,
}

impl Select {
    /// Applies the selection; with no ids or kinds given, `default_kinds` decide.
    pub fn apply(&self, set: &ChannelSet, default_kinds: &[ChannelKind]) -> Result<ChannelSet> {
        for id in &self.channels {
            if set.get(id).is_none() {
                return Err(Error::Reference(format!("channel `{id}` not found")));
            }
        }
        let kinds: &[ChannelKind] = if self.channels.is_empty() && self.kinds.is_empty() { default_kinds } else { &self.kinds };
        let picked = set.filter(|c| {
            (self.channels.is_empty() || self.channels.iter().any(|id| id == c.id()))
                && (kinds.is_empty() || kinds.contains(&c.kind()))
                && self.rate.is_none_or(|r| c.rate_sps() == r)
        });
        if picked.is_empty() {
            return Err(Error::Data("no channels match the selection".into()));
        }
        Ok(picked)
    }
}

/// Welch settings; a preset is applied first, explicit flags override it.
#[derive(Debug, Clone, Default, Args, Serialize)]
pub struct WelchArgs {
    /// Starting point for the Welch settings.
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Segment length in seconds.
    #[arg(long)]
    pub segment_s: Option<f64>,
    /// Segment overlap fraction in [0, 1).
    #[arg(long)]
    pub overlap: Option<f64>,
    /// Segment taper.
    #[arg(long, value_enum)]
    pub window: Option<WindowArg>,
    /// Per-segment detrend.
    #[arg(long, value_enum)]
    pub detrend: Option<DetrendArg>,
}

impl WelchArgs {
    pub fn resolve(&self) -> WelchConfig {
        let mut cfg = match self.preset {
            Some(Preset::PaperSurvey) => WelchConfig::paper_survey(),
            _ => WelchConfig::default(),
        };
        if let Some(s) = self.segment_s {
            cfg.segment_len_s = s;
        }
        if let Some(o) = self.overlap {
            cfg.overlap_frac = o;
        }
        if let Some(w) = self.window {
            cfg.window = w.into();
        }
        if let Some(d) = self.detrend {
            cfg.detrend = d.into();
        }
        cfg
    }
}

pub fn load(path: &std::path::Path) -> Result<ChannelSet> {
    load_channels(path, Format::Csv)
}

// ---------------------------------------------------------------- spectrogram

#[derive(Debug, Clone, Args, Serialize)]
pub struct SpectrogramOpts {
    #[command(flatten)]
    pub select: Select,
    /// Window length in seconds.
    #[arg(long, default_value_t = 300.0)]
    pub window_s: f64,
    /// Hop between windows in seconds.
    #[arg(long, default_value_t = 300.0)]
    pub hop_s: f64,
    #[arg(long, value_enum, default_value_t = WindowArg::Hann)]
    pub window: WindowArg,
    #[arg(long, value_enum, default_value_t = DetrendArg::Linear)]
    pub detrend: DetrendArg,
    /// Highest frequency shown in the figure (Hz).
    #[arg(long)]
    pub fmax: Option<f64>,
    /// Local sunrise hour for the night shading.
    #[arg(long, default_value_t = 6.0)]
    pub sunrise: f64,
    /// Local sunset hour for the night shading.
    #[arg(long, default_value_t = 20.0)]
    pub sunset: f64,
}

/// Local clock label `HH:MM` for a UTC time.
pub fn clock_label(t: f64, tz_hours: f64) -> String {
    let s = (t + tz_hours * 3600.0).rem_euclid(86_400.0).round() as u64 % 86_400;
    format!("{:02}:{:02}", s / 3600, (s % 3600) / 60)
}

/// Night spans (local sunset → next sunrise) overlapping `[t_lo, t_hi]`, UTC.
pub fn night_spans(t_lo: f64, t_hi: f64, tz_hours: f64, sunrise_h: f64, sunset_h: f64) -> Vec<(f64, f64)> {
    let off = tz_hours * 3600.0;
    let d0 = ((t_lo + off) / 86_400.0).floor() as i64 - 1;
    let d1 = ((t_hi + off) / 86_400.0).floor() as i64 + 1;
    (d0..=d1)
        .map(|d| {
            let midnight = d as f64 * 86_400.0 - off;
            (midnight + sunset_h * 3600.0, midnight + 86_400.0 + sunrise_h * 3600.0)
        })
        .filter(|&(a, b)| b > t_lo && a < t_hi)
        .collect()
}

fn tick_step(span_s: f64) -> f64 {
    const STEPS: [f64; 12] = [60.0, 120.0, 300.0, 600.0, 900.0, 1800.0, 3600.0, 7200.0, 10_800.0, 21_600.0, 43_200.0, 86_400.0];
    STEPS.iter().copied().find(|s| span_s / s <= 8.0).unwrap_or(86_400.0 * (span_s / 86_400.0 / 8.0).ceil())
}

pub fn run_spectrogram(set: &ChannelSet, o: &SpectrogramOpts, tz_hours: f64, out: &mut Outputs) -> Result<Value> {
    if !(0.0..=24.0).contains(&o.sunrise) || !(0.0..=24.0).contains(&o.sunset) || o.sunrise >= o.sunset {
        return Err(param("sunrise", "need 0 <= sunrise < sunset <= 24"));
    }
    let chans = o.select.apply(set, &[ChannelKind::Vphm])?;
    let cfg = SpectrogramConfig {
        window_len_s: o.window_s,
        hop_s: o.hop_s,
        window: o.window.into(),
        detrend: o.detrend.into(),
    };
    let sgs = chans
        .channels()
        .par_iter()
        .map(|c| spectral::spectrogram(c, &cfg))
        .collect::<Result<Vec<_>>>()?;
    let mut written = Vec::new();
    for sg in &sgs {
        let name = format!("spectrogram_{}", stem(&sg.source_channel));
        out.write(&format!("{name}.csv"), sg.to_csv())?;
        let keep = sg.freqs.iter().take_while(|f| o.fmax.is_none_or(|m| **f <= m)).count().max(2);
        let freqs = &sg.freqs[..keep.min(sg.freqs.len())];
        let power: Vec<Vec<f64>> = sg.power.iter().map(|r| r[..freqs.len()].to_vec()).collect();
        let (t_lo, t_hi) = match (sg.times.first(), sg.times.last()) {
            (Some(a), Some(b)) => (a - cfg.window_len_s / 2.0, b + cfg.window_len_s / 2.0),
            _ => return Err(Error::Range(format!("`{}` is shorter than one window", sg.source_channel))),
        };
        let shade = night_spans(t_lo, t_hi, tz_hours, o.sunrise, o.sunset);
        let label = move |t: f64| clock_label(t, tz_hours);
        let fig = plot::heat_figure(
            &format!("Spectrogram {} (UTC{:+})", sg.source_channel, tz_hours),
            &sg.times,
            freqs,
            &power,
            &label,
            tick_step(t_hi - t_lo),
            &shade,
        );
        out.figure(&name, fig)?;
        written.push(sg.source_channel.clone());
    }
    Ok(json!({ "channels": written, "config": cfg }))
}

// ------------------------------------------------------------------------ psd

#[derive(Debug, Clone, Args, Serialize)]
pub struct PsdOpts {
    #[command(flatten)]
    pub select: Select,
    #[command(flatten)]
    pub welch: WelchArgs,
    /// Spectral estimator.
    #[arg(long, value_enum, default_value_t = MethodArg::Welch)]
    pub method: MethodArg,
    /// Autoregressive order for yule-walker.
    #[arg(long, default_value_t = spectral::DEFAULT_AR_ORDER)]
    pub order: usize,
    /// Frequency grid points for yule-walker.
    #[arg(long, default_value_t = spectral::DEFAULT_AR_GRID)]
    pub grid: usize,
    /// Peak search band lo:hi (Hz); default is the whole grid above DC.
    #[arg(long, value_parser = parse_band)]
    pub band: Option<(f64, f64)>,
    /// Analyse the amplitude envelope around this carrier (Hz) instead of the raw samples.
    #[arg(long)]
    pub envelope_carrier: Option<f64>,
    /// Envelope band-pass lo:hi (Hz); default carrier ± 30 Hz.
    #[arg(long, value_parser = parse_band)]
    pub envelope_band: Option<(f64, f64)>,
    /// Highest frequency shown in the figure (Hz).
    #[arg(long)]
    pub fmax: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PsdSummary {
    pub channel: String,
    pub method: String,
    pub segments: usize,
    pub resolution_hz: f64,
    pub peak_hz: Option<f64>,
}

pub fn psd_of(ch: &PhasorChannel, o: &PsdOpts) -> Result<PsdEstimate> {
    let owned;
    let ch = match o.envelope_carrier {
        Some(c) => {
            owned = spectral::hilbert_envelope(ch, c, o.envelope_band.unwrap_or(spectral::default_envelope_band(c)))?;
            &owned
        }
        None => ch,
    };
    let cfg = o.welch.resolve();
    match o.method {
        MethodArg::Welch => spectral::welch_psd(ch, &cfg),
        MethodArg::YuleWalker => spectral::yule_walker_psd(ch, o.order, o.grid),
        MethodArg::Periodogram => spectral::periodogram(ch, cfg.window, cfg.detrend),
    }
}

fn full_band(p: &PsdEstimate) -> (f64, f64) {
    (p.freqs[1], *p.freqs.last().expect("nonempty grid"))
}

pub fn run_psd(set: &ChannelSet, o: &PsdOpts, out: &mut Outputs) -> Result<(Vec<PsdSummary>, Value)> {
    let defaults: &[ChannelKind] = if o.envelope_carrier.is_some() { &[ChannelKind::Pow] } else { &[ChannelKind::Vphm] };
    let chans = o.select.apply(set, defaults)?;
    let psds = chans.channels().par_iter().map(|c| psd_of(c, o)).collect::<Result<Vec<_>>>()?;
    let mut summaries = Vec::new();
    for p in &psds {
        let name = format!("psd_{}", stem(&p.source_channel));
        out.write(&format!("{name}.csv"), p.to_csv())?;
        let keep = p.freqs.iter().take_while(|f| o.fmax.is_none_or(|m| **f <= m)).count().max(2);
        let fig = plot::line_figure(
            &format!("PSD {} ({})", p.source_channel, p.method.as_str()),
            &p.freqs[..keep],
            &[(p.source_channel.clone(), p.density[..keep].to_vec())],
            true,
            "frequency (Hz)",
            "density (units²/Hz)",
        );
        out.figure(&name, fig)?;
        let band = o.band.unwrap_or_else(|| full_band(p));
        summaries.push(PsdSummary {
            channel: p.source_channel.clone(),
            method: p.method.as_str().to_string(),
            segments: p.segments,
            resolution_hz: p.resolution_hz,
            peak_hz: modal::estimate_mode_frequency(p, band)?,
        });
    }
    let mut csv = String::from("channel,method,segments,resolution_hz,peak_hz\n");
    for s in &summaries {
        let peak = s.peak_hz.map_or(String::new(), |f| f.to_string());
        let _ = writeln!(csv, "{},{},{},{},{peak}", s.channel, s.method, s.segments, s.resolution_hz);
    }
    out.write("psd_summary.csv", &csv)?;
    out.json("psd.json", &summaries)?;
    let resolved = json!({
        "welch": o.welch.resolve(),
        "channels": summaries.iter().map(|s| s.channel.clone()).collect::<Vec<_>>(),
    });
    Ok((summaries, resolved))
}

// ---------------------------------------------------------------------- alias

#[derive(Debug, Clone, Args, Serialize)]
pub struct AliasOpts {
    /// Observed peak `f:fs[:tol]` (Hz, sps, Hz); repeatable.
    #[arg(long = "obs", required = true)]
    pub obs: Vec<String>,
    /// Highest true frequency considered (Hz).
    #[arg(long, default_value_t = aliasing::DEFAULT_F_MAX_HZ)]
    pub fmax: f64,
    /// Tolerance for observations that do not give one (Hz).
    #[arg(long, default_value_t = aliasing::DEFAULT_TOLERANCE_HZ)]
    pub tol: f64,
}

pub fn resolve_alias(obs: &[AliasObservation], fmax: f64, out: &mut Outputs) -> Result<(Vec<FrequencyCandidate>, String)> {
    let cands = aliasing::resolve_true_frequency(obs, fmax)?;
    let csv = aliasing::candidates_to_csv(obs, &cands);
    out.write("alias_candidates.csv", &csv)?;
    Ok((cands, csv))
}

pub fn run_alias(o: &AliasOpts, out: &mut Outputs) -> Result<(String, Value)> {
    let obs = o.obs.iter().map(|s| AliasObservation::parse(s, o.tol)).collect::<Result<Vec<_>>>()?;
    let (cands, csv) = resolve_alias(&obs, o.fmax, out)?;
    Ok((csv, json!({ "observations": obs, "candidates": cands })))
}

// ---------------------------------------------------------------------- modes

#[derive(Debug, Clone, Args, Serialize)]
pub struct ModesOpts {
    #[command(flatten)]
    pub select: Select,
    #[command(flatten)]
    pub welch: WelchArgs,
    /// Analysis band lo:hi (Hz); default is the whole grid above DC.
    #[arg(long, value_parser = parse_band)]
    pub band: Option<(f64, f64)>,
    /// Singular-value curves to keep.
    #[arg(long, default_value_t = 3)]
    pub curves: usize,
    /// Peak height over median and base, as a ratio.
    #[arg(long, default_value_t = modal::default_prominence())]
    pub prominence: f64,
    /// Bins within which peaks on two curves count as the same frequency.
    #[arg(long, default_value_t = modal::DEFAULT_COINCIDE_BINS)]
    pub coincide_bins: f64,
    /// Mode frequency for the shape (Hz); default is the strongest detected mode.
    #[arg(long)]
    pub f0: Option<f64>,
    /// Reference channel for shape phases; default is the largest entry.
    #[arg(long)]
    pub reference: Option<String>,
    #[arg(long, value_enum, default_value_t = EstimatorArg::Fdd)]
    pub estimator: EstimatorArg,
}

pub fn run_modes(set: &ChannelSet, o: &ModesOpts, out: &mut Outputs) -> Result<Value> {
    let chans = o.select.apply(set, &[ChannelKind::Vphm])?;
    let rates = chans.by_rate();
    if rates.len() > 1 {
        let list: Vec<String> = rates.iter().map(|(r, _)| r.to_string()).collect();
        return Err(param("rate", format!("channels span rates {}; choose one with --rate", list.join(", "))));
    }
    let cfg = o.welch.resolve();
    let csd = spectral::csd_matrix(&chans, &cfg)?;
    let band = o.band.unwrap_or((csd.freqs[1], *csd.freqs.last().expect("nonempty grid")));
    let m = o.curves.min(csd.n_channels()).max(1);
    let curves = modal::fdd_curves(&csd, band, m)?;
    let report = modal::count_modes(&curves, o.prominence, o.coincide_bins * csd.resolution_hz);
    out.write("singular_curves.csv", curves.to_csv())?;
    let series: Vec<(String, Vec<f64>)> = (0..curves.n_curves()).map(|k| (format!("sigma{}", k + 1), curves.curve(k))).collect();
    out.figure(
        "singular_curves",
        plot::line_figure("Singular values of the cross-spectral matrix", &curves.freqs, &series, true, "frequency (Hz)", "singular value"),
    )?;
    out.json("multiplicity.json", &report)?;

    let strongest = report.modes.iter().max_by(|a, b| a.sigma.total_cmp(&b.sigma));
    let f0 = o.f0.or(strongest.map(|m| m.freq_hz));
    let mut resolved = json!({
        "welch": cfg,
        "band_hz": band,
        "channels": csd.channel_ids,
        "count": report.count,
        "modes": report.modes.iter().map(|m| json!({"freq_hz": m.freq_hz, "curve": m.curve, "sigma": m.sigma})).collect::<Vec<_>>(),
    });
    let Some(f0) = f0 else {
        resolved["shape"] = Value::Null;
        return Ok(resolved);
    };
    let reference = match &o.reference {
        Some(r) => r.clone(),
        None => {
            let (_, vecs) = modal::sorted_svd(&csd.matrices[csd.nearest_bin(f0)]);
            let k = vecs[0]
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.norm().total_cmp(&b.1.norm()))
                .map_or(0, |(k, _)| k);
            csd.channel_ids[k].clone()
        }
    };
    let est = match o.estimator {
        EstimatorArg::Fdd => ShapeEstimator::Fdd,
        EstimatorArg::CrossSpectrum => ShapeEstimator::CrossSpectrum,
    };
    let shape = modal::mode_shape(&csd, f0, &reference, est)?;
    out.write("mode_shape.csv", shape.to_csv())?;
    out.json("mode_shape.json", &shape)?;
    let max = shape.entries.iter().map(|e| e.magnitude).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let arrows: Vec<(String, f64, f64)> = shape.entries.iter().map(|e| (e.id.clone(), e.magnitude / max, e.phase_rad)).collect();
    out.figure(
        "mode_shape",
        plot::polar_figure(&format!("Mode shape at {:.3} Hz", shape.bin_freq_hz), &arrows, &reference),
    )?;
    resolved["shape"] = serde_json::to_value(&shape)?;
    Ok(resolved)
}

// --------------------------------------------------------------------- energy

#[derive(Debug, Clone, Args, Serialize)]
pub struct EnergyOpts {
    #[command(flatten)]
    pub select: Select,
    #[command(flatten)]
    pub welch: WelchArgs,
    /// Mode frequency (Hz); default is the strongest voltage peak in --band.
    #[arg(long)]
    pub f0: Option<f64>,
    /// Integration band lo:hi (Hz); default 5:11 when it holds the mode, else f0 ± 3.
    #[arg(long, value_parser = parse_band)]
    pub band: Option<(f64, f64)>,
    /// Half-width of the mode sub-band (Hz).
    #[arg(long, default_value_t = energy::DEFAULT_MODE_HALF_WIDTH_HZ)]
    pub mode_half_width: f64,
    /// Floor model under the mode.
    #[arg(long, value_enum, default_value_t = TrendArg::Linear)]
    pub trend: TrendArg,
    /// Percentage at or above which a mode counts as present.
    #[arg(long, default_value_t = energy::DEFAULT_ON_THRESHOLD)]
    pub on_threshold: f64,
    /// Heatmap cells `NXxNY`.
    #[arg(long, value_parser = parse_grid, default_value = "60x40")]
    pub grid: (usize, usize),
    /// Inverse-distance weighting power.
    #[arg(long, default_value_t = 2.0)]
    pub idw_power: f64,
    /// Leave cells farther than this from every substation blank (km).
    #[arg(long)]
    pub cutoff: Option<f64>,
    /// Padding around the substations (km); default 10% of the extent.
    #[arg(long)]
    pub margin: Option<f64>,
}

fn default_energy_band(f0: f64, half: f64) -> (f64, f64) {
    let (lo, hi) = energy::PAPER_BAND_HZ;
    if f0 - half > lo && f0 + half < hi {
        (lo, hi)
    } else {
        ((f0 - 3.0).max(0.0), f0 + 3.0)
    }
}

pub fn run_energy(set: &ChannelSet, o: &EnergyOpts, out: &mut Outputs) -> Result<(energy::ModeEnergyReport, Value)> {
    let chans = o.select.apply(set, &[ChannelKind::Vphm, ChannelKind::Iphm])?;
    let cfg = o.welch.resolve();
    let psds = chans.channels().par_iter().map(|c| spectral::welch_psd(c, &cfg)).collect::<Result<Vec<_>>>()?;
    let f0 = match (o.f0, o.band) {
        (Some(f), _) => f,
        (None, Some(band)) => {
            let mut best: Option<(f64, f64)> = None;
            for (c, p) in chans.iter().zip(&psds) {
                if c.kind() != ChannelKind::Vphm {
                    continue;
                }
                if let Some(f) = modal::estimate_mode_frequency(p, band)? {
                    let d = p.density[p.peak_index(band.0, band.1).unwrap_or(0)];
                    if best.is_none_or(|(_, bd)| d > bd) {
                        best = Some((f, d));
                    }
                }
            }
            best.map(|b| b.0).ok_or_else(|| Error::Data(format!("no voltage peak in {}–{} Hz", band.0, band.1)))?
        }
        (None, None) => return Err(param("f0", "pass --f0 or --band")),
    };
    let band = o.band.unwrap_or_else(|| default_energy_band(f0, o.mode_half_width));
    let trend = match o.trend {
        TrendArg::Linear => TrendModel::Linear,
        TrendArg::Constant => TrendModel::Constant,
    };
    let ecfg = ModeEnergyConfig::new(band.0, band.1, (f0 - o.mode_half_width, f0 + o.mode_half_width), trend)?;

    let mut labels: Vec<(String, f64, f64)> = Vec::new();
    for c in chans.of_kind(ChannelKind::Vphm) {
        if let Some((x, y)) = c.location() {
            if !labels.iter().any(|l| l.0 == c.substation()) {
                labels.push((c.substation().to_string(), x, y));
            }
        }
    }
    let grid = if labels.is_empty() {
        None
    } else {
        let pts: Vec<(f64, f64, f64)> = labels.iter().map(|l| (l.1, l.2, 0.0)).collect();
        let probe = GridSpec::around(&pts, 1, 1, 0.0);
        let extent = (probe.x_max - probe.x_min).max(probe.y_max - probe.y_min);
        let margin = o.margin.unwrap_or((0.1 * extent).max(1.0));
        Some((GridSpec::around(&pts, o.grid.0, o.grid.1, margin), o.idw_power, o.cutoff))
    };
    let report = energy::build_energy_report(&chans, &psds, &ecfg, o.on_threshold, grid)?;
    out.write("energy_table.csv", report.to_csv())?;
    out.json("energy_report.json", &report)?;
    if let Some(h) = &report.heatmap {
        out.write("heatmap.csv", h.to_csv())?;
        out.figure("heatmap", plot::heatmap_figure(&format!("Mode energy at {f0:.3} Hz"), &h.xs, &h.ys, &h.values, &labels, "E %"))?;
    }
    let resolved = json!({ "welch": cfg, "f0_hz": f0, "config": ecfg, "channels": chans.ids() });
    Ok((report, resolved))
}

// ------------------------------------------------------------------ causality

#[derive(Debug, Clone, Args, Serialize)]
pub struct CausalityOpts {
    /// Channel whose band energy is tracked; default is the voltage magnitude at the P channel's substation.
    #[arg(long)]
    pub energy_channel: Option<String>,
    /// Band lo:hi (Hz) holding the mode as seen at that channel's rate.
    #[arg(long, value_parser = parse_band)]
    pub band: (f64, f64),
    /// Energy window length (s).
    #[arg(long, default_value_t = 300.0)]
    pub window_s: f64,
    /// Hop between energy windows (s).
    #[arg(long, default_value_t = 300.0)]
    pub hop_s: f64,
    /// Active power channel id; default the first P channel.
    #[arg(long)]
    pub p: Option<String>,
    /// Reactive power channel id; default the first Q channel.
    #[arg(long)]
    pub q: Option<String>,
    /// Power factor channel id; default the first PF channel.
    #[arg(long)]
    pub pf: Option<String>,
}

fn pick<'a>(set: &'a ChannelSet, id: &Option<String>, kind: ChannelKind) -> Result<&'a PhasorChannel> {
    match id {
        Some(id) => set.get(id).ok_or_else(|| Error::Reference(format!("channel `{id}` not found"))),
        None => set.of_kind(kind).next().ok_or_else(|| Error::Data(format!("no {kind} channel in the input"))),
    }
}

pub fn run_causality(set: &ChannelSet, o: &CausalityOpts, out: &mut Outputs) -> Result<Value> {
    let p = pick(set, &o.p, ChannelKind::P)?;
    let q = pick(set, &o.q, ChannelKind::Q)?;
    let pf = pick(set, &o.pf, ChannelKind::Pf)?;
    let ech = match &o.energy_channel {
        Some(_) => pick(set, &o.energy_channel, ChannelKind::Vphm)?,
        None => {
            let at_sub = |c: &&PhasorChannel| c.substation() == p.substation();
            set.of_kind(ChannelKind::Vphm)
                .filter(at_sub)
                .find(|c| c.rate_sps() == p.rate_sps())
                .or_else(|| set.of_kind(ChannelKind::Vphm).find(at_sub))
                .or_else(|| set.of_kind(ChannelKind::Vphm).next())
                .ok_or_else(|| Error::Data("no voltage magnitude channel in the input".into()))?
        }
    };
    let cfg = SpectrogramConfig { window_len_s: o.window_s, hop_s: o.hop_s, ..SpectrogramConfig::default() };
    let series = spectral::band_energy_series(ech, o.band, &cfg)?;
    let e = TimeSeries::from(&series);
    let drivers: Vec<TimeSeries> = [p, q, pf].par_iter().map(|c| energy::window_means(c, &e.times, o.window_s)).collect();
    let report = energy::correlate_energy_power(&e, &drivers[0], &drivers[1], &drivers[2])?;

    let energies: Vec<f64> = report.rows.iter().map(|r| r.energy).collect();
    let threshold = energy::two_level_threshold(&energies);
    let truth: Vec<bool> = report.rows.iter().map(|r| r.p > 0.0).collect();
    let pred: Vec<bool> = energies.iter().map(|v| threshold.is_some_and(|t| *v > t)).collect();
    let f1 = energy::f1_score(&pred, &truth);

    let mut series_csv = String::from("time,energy,on\n");
    for (r, on) in report.rows.iter().zip(&pred) {
        let _ = writeln!(series_csv, "{},{},{}", r.time, r.energy, u8::from(*on));
    }
    out.write("energy_series.csv", series_csv)?;
    for (driver, label) in [("p", "P (MW)"), ("q_abs", "|Q| (MVAr)"), ("pf", "PF")] {
        out.write(&format!("scatter_{driver}.csv"), report.scatter_csv(driver))?;
        let xs: Vec<f64> = report
            .rows
            .iter()
            .map(|r| match driver {
                "p" => r.p,
                "q_abs" => r.q_abs,
                _ => r.pf,
            })
            .collect();
        let r = report.r(driver).map_or(f64::NAN, |c| c.r);
        out.figure(
            &format!("scatter_{driver}"),
            plot::scatter_figure(&format!("{} band energy vs {label} (r = {r:.3})", ech.id()), &xs, &energies, driver, "energy"),
        )?;
    }
    let summary = json!({
        "energy_channel": ech.id(),
        "band_hz": o.band,
        "drivers": [p.id(), q.id(), pf.id()],
        "threshold": threshold,
        "f1_vs_p_on": f1,
        "report": report,
    });
    out.json("causality.json", &summary)?;
    Ok(json!({
        "energy_channel": ech.id(),
        "drivers": [p.id(), q.id(), pf.id()],
        "spectrogram": cfg,
        "threshold": threshold,
        "f1_vs_p_on": f1,
        "r": report.correlations,
        "gate_ratio": report.gate_ratio,
    }))
}

// ---------------------------------------------------------------------- synth

#[derive(Debug, Clone, Args, Serialize)]
pub struct SynthOpts {
    /// Scenario JSON; default is the built-in demo.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Override the scenario seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the scenario duration (s).
    #[arg(long)]
    pub duration_s: Option<f64>,
}

impl SynthOpts {
    pub fn scenario(&self) -> Result<SynthScenario> {
        let mut sc = match &self.scenario {
            Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)?,
            None => synth::demo_scenario(),
        };
        if let Some(s) = self.seed {
            sc.seed = s;
        }
        if let Some(d) = self.duration_s {
            sc.duration_s = d;
        }
        Ok(sc)
    }
}

fn rate_name(fs: f64) -> String {
    if fs.fract() == 0.0 { format!("{}", fs as u64) } else { format!("{fs}") }
}

pub fn run_synth(sc: &SynthScenario, out: &mut Outputs) -> Result<(ChannelSet, GroundTruth, Value)> {
    let (set, truth) = synth::gen_network(sc)?;
    let mut files = Vec::new();
    for (fs, part) in set.by_rate() {
        let name = format!("channels_{}sps.csv", rate_name(fs));
        out.write(&name, oscmap_core::ingest::channels_to_csv(&part)?)?;
        files.push(name);
    }
    out.json("scenario.json", sc)?;
    out.json("truth.json", &truth)?;
    Ok((set, truth, json!({ "scenario": sc, "files": files })))
}

// ------------------------------------------------------------------- pipeline

#[derive(Debug, Clone, Args, Serialize)]
pub struct PipelineOpts {
    #[command(flatten)]
    pub synth: SynthOpts,
    /// Window length for spectrograms and band-energy tracking (s).
    #[arg(long, default_value_t = 60.0)]
    pub window_s: f64,
}

fn wrap_phase(p: f64) -> f64 {
    let w = p.rem_euclid(2.0 * std::f64::consts::PI);
    if w > std::f64::consts::PI { w - 2.0 * std::f64::consts::PI } else { w }
}

/// Synthesis followed by every analysis, with a summary comparing the
/// findings to the scenario's ground truth.
pub fn run_pipeline(o: &PipelineOpts, tz_hours: f64, out: &mut Outputs) -> Result<Value> {
    let sc = o.synth.scenario()?;
    let (set, truth, _) = run_synth(&sc, out)?;
    let source = SynthScenario::substation_name(sc.source_idx);
    let volts: Vec<(f64, ChannelSet)> = set.filter(|c| c.kind() == ChannelKind::Vphm).by_rate();
    let top_rate = volts.last().map(|v| v.0).ok_or_else(|| Error::Data("scenario has no voltage channels".into()))?;

    // spectrograms and Welch peaks of the source voltage at every rate
    let source_ids: Vec<String> = volts
        .iter()
        .filter_map(|(_, s)| s.iter().find(|c| c.substation() == source).map(|c| c.id().to_string()))
        .collect();
    let sg = SpectrogramOpts {
        select: Select { channels: source_ids.clone(), ..Select::default() },
        window_s: o.window_s,
        hop_s: o.window_s / 2.0,
        window: WindowArg::Hann,
        detrend: DetrendArg::Linear,
        fmax: None,
        sunrise: 6.0,
        sunset: 20.0,
    };
    run_spectrogram(&set, &sg, tz_hours, out)?;
    let psd_opts = PsdOpts {
        select: Select { channels: source_ids.clone(), ..Select::default() },
        welch: WelchArgs::default(),
        method: MethodArg::Welch,
        order: spectral::DEFAULT_AR_ORDER,
        grid: spectral::DEFAULT_AR_GRID,
        band: None,
        envelope_carrier: None,
        envelope_band: None,
        fmax: None,
    };
    let chans = psd_opts.select.apply(&set, &[])?;
    let mut peaks = Vec::new();
    let mut obs = Vec::new();
    for c in chans.iter() {
        let p = psd_of(c, &psd_opts)?;
        let nyq = c.rate_sps() / 2.0;
        // above the ambient corner, below the Nyquist edge
        let band = ((4.0 * sc.noise.lowpass_corner_hz).min(nyq / 4.0), nyq - 2.0 * p.resolution_hz);
        let peak = modal::estimate_mode_frequency(&p, band)?;
        let expected = aliasing::alias_of(sc.f0_hz, c.rate_sps());
        peaks.push(json!({
            "channel": c.id(), "rate_sps": c.rate_sps(), "peak_hz": peak,
            "expected_alias_hz": expected, "resolution_hz": p.resolution_hz,
        }));
        if let Some(f) = peak {
            obs.push(AliasObservation::new(f, c.rate_sps(), aliasing::DEFAULT_TOLERANCE_HZ)?);
        }
    }
    run_psd(&set, &psd_opts, out)?;

    // amplitude envelope of the point-on-wave capture
    let mut envelope = Value::Null;
    if let (Some(spec), Some(pow)) = (sc.pow, set.of_kind(ChannelKind::Pow).next()) {
        let env_opts = PsdOpts {
            select: Select { channels: vec![pow.id().to_string()], ..Select::default() },
            welch: WelchArgs { window: Some(WindowArg::Hann), detrend: Some(DetrendArg::Mean), ..WelchArgs::default() },
            method: MethodArg::Periodogram,
            band: Some((1.0, spec.carrier_hz - 5.0)),
            envelope_carrier: Some(spec.carrier_hz),
            ..psd_opts.clone()
        };
        let env_psd = psd_of(pow, &env_opts)?;
        let peak = modal::estimate_mode_frequency(&env_psd, (1.0, spec.carrier_hz - 5.0))?;
        let tol = env_psd.resolution_hz.max(aliasing::DEFAULT_TOLERANCE_HZ);
        if let Some(f) = peak {
            obs.push(AliasObservation::new(f, pow.rate_sps(), tol)?);
        }
        out.write(&format!("psd_{}_env.csv", stem(pow.id())), env_psd.to_csv())?;
        let keep = env_psd.freqs.iter().take_while(|f| **f <= spec.carrier_hz).count();
        out.figure(
            &format!("psd_{}_env", stem(pow.id())),
            plot::line_figure(
                &format!("Envelope spectrum {}", pow.id()),
                &env_psd.freqs[..keep],
                &[(format!("{}_env", pow.id()), env_psd.density[..keep].to_vec())],
                true,
                "frequency (Hz)",
                "density",
            ),
        )?;
        envelope = json!({ "channel": pow.id(), "peak_hz": peak, "resolution_hz": env_psd.resolution_hz });
    }

    // reconcile the rates
    let fmax = aliasing::DEFAULT_F_MAX_HZ.max(1.5 * sc.f0_hz);
    let cands = if obs.is_empty() { Vec::new() } else { resolve_alias(&obs, fmax, out)?.0 };
    let top_peak = obs.iter().filter(|o| o.fs_hz == top_rate).map(|o| o.f_obs_hz).next();
    let f0 = match cands.as_slice() {
        [c] => Some(c.freq_hz),
        _ => top_peak,
    };

    let mut summary = json!({
        "scenario": { "f0_hz": sc.f0_hz, "seed": sc.seed, "source": source, "rates": sc.rates },
        "peaks": peaks,
        "envelope": envelope,
        "alias_candidates": cands.iter().map(|c| c.freq_hz).collect::<Vec<_>>(),
        "f0_estimate_hz": f0,
    });
    let Some(f0) = f0 else {
        out.json("report.json", &summary)?;
        return Ok(summary);
    };

    // modes and shape at the highest rate
    let nyq = top_rate / 2.0;
    let res = 1.0 / WelchConfig::default().segment_len_s;
    if f0 < nyq {
        let band = ((f0 - 3.0).max(res), (f0 + 3.0).min(nyq));
        let reference = format!("{source}_VPHM_{}", rate_name(top_rate));
        let modes = run_modes(
            &set,
            &ModesOpts {
                select: Select { kinds: vec![ChannelKind::Vphm], rate: Some(top_rate), ..Select::default() },
                welch: WelchArgs::default(),
                band: Some(band),
                curves: 3,
                prominence: modal::default_prominence(),
                coincide_bins: modal::DEFAULT_COINCIDE_BINS,
                f0: Some(f0),
                reference: set.get(&reference).map(|_| reference.clone()),
                estimator: EstimatorArg::Fdd,
            },
            out,
        )?;
        let truth_phase = |name: &str| truth.substations.iter().find(|s| s.name == name).map(|s| s.phase_rad);
        let ref_phase = truth_phase(&source).unwrap_or(0.0);
        let shape_check: Vec<Value> = modes["shape"]["entries"]
            .as_array()
            .map(|es| {
                es.iter()
                    .filter_map(|e| {
                        let id = e["id"].as_str()?;
                        let ch = set.get(id)?;
                        let want = wrap_phase(truth_phase(ch.substation())? - ref_phase);
                        let got = e["phase_rad"].as_f64()?;
                        Some(json!({ "id": id, "phase_rad": got, "truth_rad": want, "error_rad": wrap_phase(got - want).abs() }))
                    })
                    .collect()
            })
            .unwrap_or_default();
        summary["modes"] = json!({ "count": modes["count"], "band_hz": band, "shape_vs_truth": shape_check });

        // mode energy and its map
        let (rep, en) = run_energy(
            &set,
            &EnergyOpts {
                select: Select { kinds: vec![ChannelKind::Vphm, ChannelKind::Iphm], rate: Some(top_rate), ..Select::default() },
                welch: WelchArgs::default(),
                f0: Some(f0),
                band: Some(((f0 - 3.0).max(res), (f0 + 3.0).min(nyq - res))),
                mode_half_width: energy::DEFAULT_MODE_HALF_WIDTH_HZ,
                trend: TrendArg::Linear,
                on_threshold: energy::DEFAULT_ON_THRESHOLD,
                grid: (60, 40),
                idw_power: 2.0,
                cutoff: None,
                margin: None,
            },
            out,
        )?;
        let top = rep
            .channels
            .iter()
            .filter(|c| c.kind == ChannelKind::Vphm)
            .max_by(|a, b| a.e_percent.total_cmp(&b.e_percent))
            .map(|c| c.substation.clone());
        let hot = rep.heatmap.as_ref().and_then(|h| h.max_cell()).zip(rep.heatmap.as_ref()).map(|((i, j, v), h)| json!({"x": h.xs[i], "y": h.ys[j], "e_percent": v}));
        summary["energy"] = json!({
            "config": en["config"],
            "strongest_substation": top,
            "source_location": sc.layout[sc.source_idx],
            "heatmap_max": hot,
            "channels": rep.channels.iter().map(|c| json!({"id": c.id, "e_percent": c.e_percent, "scenario": c.scenario})).collect::<Vec<_>>(),
        });
    }

    // band energy against the plant's power output
    if let Some(p) = set.of_kind(ChannelKind::P).next() {
        let fs = p.rate_sps();
        let seen = aliasing::alias_of(f0, fs);
        let band = ((seen - 1.0).max(0.0), (seen + 1.0).min(fs / 2.0));
        let ca = run_causality(
            &set,
            &CausalityOpts {
                energy_channel: None,
                band,
                window_s: o.window_s,
                hop_s: o.window_s,
                p: None,
                q: None,
                pf: None,
            },
            out,
        );
        summary["causality"] = match ca {
            Ok(v) => v,
            Err(Error::Range(msg)) => json!({ "skipped": msg }),
            Err(e) => return Err(e),
        };
    }
    out.json("report.json", &summary)?;
    Ok(summary)
}
