//! Synthetic grid records with known ground truth.
//!
//! Ambient noise is white Gaussian noise through a first-order low-pass. The
//! forced mode at each substation is `A_k cos(2π f0 t + φ_k)` switched by the
//! gate, with `A_k = amplitude0 · exp(-d_k / decay_km)`. Every emitted rate
//! evaluates the continuous-time mode at its own sample instants, so aliasing
//! at low rates is exact.
//!
//! Each channel draws from its own generator seeded by `(seed, channel
//! index)`, so output does not depend on how generation is scheduled.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{ChannelKind, ChannelSet, PhasorChannel};

/// Per-channel seed derived from the scenario seed (splitmix64 finalizer).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mode amplitude giving `(A²/2) / variance = snr`.
pub fn amplitude_for_snr(snr: f64, noise_variance: f64) -> f64 {
    (2.0 * snr * noise_variance).sqrt()
}

fn ambient_values(n: usize, fs: f64, variance: f64, corner_hz: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let alpha = (-2.0 * PI * corner_hz / fs).exp();
    let sd = variance.sqrt();
    let innov = (variance * (1.0 - alpha * alpha)).sqrt();
    let mut out = Vec::with_capacity(n);
    let mut y = 0.0;
    for i in 0..n {
        let w: f64 = rng.sample(StandardNormal);
        y = if i == 0 { sd * w } else { alpha * y + innov * w };
        out.push(y);
    }
    out
}

fn check_ambient(fs: f64, variance: f64, corner_hz: f64) -> Result<()> {
    if !(fs.is_finite() && fs > 0.0) {
        return Err(Error::param("fs", format!("must be positive, got {fs}")));
    }
    if !(variance.is_finite() && variance >= 0.0) {
        return Err(Error::param("variance", format!("must be nonnegative, got {variance}")));
    }
    if !(corner_hz > 0.0 && corner_hz < fs / 2.0) {
        return Err(Error::param(
            "corner_hz",
            format!("corner {corner_hz} Hz must lie in (0, {})", fs / 2.0),
        ));
    }
    Ok(())
}

/// Low-pass ambient noise with stationary variance `variance`.
pub fn gen_ambient(duration_s: f64, fs: f64, variance: f64, corner_hz: f64, seed: u64) -> Result<PhasorChannel> {
    check_ambient(fs, variance, corner_hz)?;
    let n = (duration_s * fs).round().max(0.0) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = ambient_values(n, fs, variance, corner_hz, &mut rng);
    PhasorChannel::new("ambient", "", ChannelKind::Vphm, fs, 0.0, values)
}

/// AR(2) resonance `x_t = 2r cos θ x_{t-1} - r² x_{t-2} + e_t`, θ = 2π f0/fs,
/// scaled to the requested stationary variance: a stochastic narrowband mode.
///
/// Independent seeds give mutually incoherent processes at the same frequency.
pub fn gen_resonance(
    duration_s: f64,
    fs: f64,
    f0_hz: f64,
    pole_radius: f64,
    variance: f64,
    seed: u64,
) -> Result<PhasorChannel> {
    if !(pole_radius > 0.0 && pole_radius < 1.0) {
        return Err(Error::param("pole_radius", format!("must lie in (0, 1), got {pole_radius}")));
    }
    if !(f0_hz > 0.0 && f0_hz < fs / 2.0) {
        return Err(Error::param("f0_hz", format!("{f0_hz} Hz must lie in (0, {})", fs / 2.0)));
    }
    let a1 = 2.0 * pole_radius * (2.0 * PI * f0_hz / fs).cos();
    let a2 = -pole_radius * pole_radius;
    // stationary variance of the unit-innovation AR(2)
    let unit_var = (1.0 - a2) / ((1.0 + a2) * ((1.0 - a2).powi(2) - a1 * a1));
    let gain = (variance / unit_var).sqrt();
    let n = (duration_s * fs).round() as usize;
    let burn = (20.0 / (1.0 - pole_radius)).ceil() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut x1, mut x2) = (0.0, 0.0);
    let mut out = Vec::with_capacity(n);
    for i in 0..n + burn {
        let e: f64 = rng.sample(StandardNormal);
        let x = a1 * x1 + a2 * x2 + gain * e;
        x2 = x1;
        x1 = x;
        if i >= burn {
            out.push(x);
        }
    }
    PhasorChannel::new("resonance", "", ChannelKind::Vphm, fs, 0.0, out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub variance: f64,
    pub lowpass_corner_hz: f64,
}

/// Active/reactive power behaviour of the source plant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerSpec {
    /// Active power while the gate is on (MW).
    pub p_on_mw: f64,
    /// Power factor held while on.
    pub pf_on: f64,
    /// Relative noise on P while on.
    pub p_noise_frac: f64,
    /// Reactive power while off (MVAr).
    pub q_off_mvar: f64,
}

impl Default for PowerSpec {
    fn default() -> Self {
        Self {
            p_on_mw: 20.0,
            pf_on: 0.95,
            p_noise_frac: 0.02,
            q_off_mvar: -0.5,
        }
    }
}

/// Point-on-wave record at the source, amplitude-modulated at `f0_hz`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowSpec {
    pub duration_s: f64,
    pub fs: f64,
    pub carrier_hz: f64,
    pub mod_depth: f64,
    pub noise_std: f64,
}

impl Default for PowSpec {
    fn default() -> Self {
        Self {
            duration_s: 10.0,
            fs: 960.0,
            carrier_hz: 60.0,
            mod_depth: 0.02,
            noise_std: 0.001,
        }
    }
}

/// Scenario description, usually loaded from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthScenario {
    pub n_substations: usize,
    /// Planar (x, y) location per substation, km.
    pub layout: Vec<(f64, f64)>,
    pub source_idx: usize,
    pub f0_hz: f64,
    /// Mode amplitude at the source, per-unit.
    pub amplitude0: f64,
    /// e-folding distance of the mode amplitude, km.
    pub decay_km: f64,
    /// Phase offset per substation (radians); empty means all zero.
    #[serde(default)]
    pub phase_map: Vec<f64>,
    /// (on, off) UTC-second pairs; `None` keeps the mode on throughout.
    #[serde(default)]
    pub gate: Option<Vec<(f64, f64)>>,
    pub noise: NoiseSpec,
    pub rates: Vec<f64>,
    pub seed: u64,
    /// Start time, UTC seconds.
    #[serde(default)]
    pub t0: f64,
    pub duration_s: f64,
    /// Fraction of the local mode amplitude seen in the current magnitude
    /// (0 keeps currents free of the mode); empty means all zero.
    #[serde(default)]
    pub current_gain: Vec<f64>,
    #[serde(default)]
    pub power: Option<PowerSpec>,
    #[serde(default)]
    pub pow: Option<PowSpec>,
}

impl SynthScenario {
    pub fn validate(&self) -> Result<()> {
        if self.n_substations == 0 {
            return Err(Error::param("n_substations", "need at least one substation"));
        }
        if self.layout.len() != self.n_substations {
            return Err(Error::param(
                "layout",
                format!("{} locations for {} substations", self.layout.len(), self.n_substations),
            ));
        }
        if self.source_idx >= self.n_substations {
            return Err(Error::param(
                "source_idx",
                format!("source {} out of range for {} substations", self.source_idx, self.n_substations),
            ));
        }
        for (name, v) in [("phase_map", &self.phase_map), ("current_gain", &self.current_gain)] {
            if !v.is_empty() && v.len() != self.n_substations {
                return Err(Error::param(name, format!("expected {} entries", self.n_substations)));
            }
        }
        if self.rates.is_empty() || self.rates.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(Error::param("rates", "need at least one positive rate"));
        }
        if !(self.f0_hz >= 0.0 && self.decay_km > 0.0 && self.duration_s > 0.0) {
            return Err(Error::param("f0_hz", "f0 must be nonnegative; decay and duration positive"));
        }
        for &fs in &self.rates {
            check_ambient(fs, self.noise.variance, self.noise.lowpass_corner_hz)?;
        }
        if let Some(p) = &self.pow {
            check_pow(p.fs, p.carrier_hz, self.f0_hz)?;
        }
        Ok(())
    }

    pub fn substation_name(k: usize) -> String {
        format!("S{:02}", k + 1)
    }

    fn gate_at(&self, t: f64) -> f64 {
        match &self.gate {
            None => 1.0,
            Some(g) => {
                if g.iter().any(|&(on, off)| t >= on && t < off) {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    fn distance(&self, k: usize) -> f64 {
        let (x, y) = self.layout[k];
        let (sx, sy) = self.layout[self.source_idx];
        (x - sx).hypot(y - sy)
    }

    fn phase(&self, k: usize) -> f64 {
        self.phase_map.get(k).copied().unwrap_or(0.0)
    }

    pub fn truth(&self) -> GroundTruth {
        GroundTruth {
            f0_hz: self.f0_hz,
            gate: self.gate.clone(),
            substations: (0..self.n_substations)
                .map(|k| {
                    let d = self.distance(k);
                    SubstationTruth {
                        name: Self::substation_name(k),
                        location: self.layout[k],
                        distance_km: d,
                        amplitude: self.amplitude0 * (-d / self.decay_km).exp(),
                        phase_rad: self.phase(k),
                        current_gain: self.current_gain.get(k).copied().unwrap_or(0.0),
                    }
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubstationTruth {
    pub name: String,
    pub location: (f64, f64),
    pub distance_km: f64,
    pub amplitude: f64,
    pub phase_rad: f64,
    pub current_gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub f0_hz: f64,
    pub gate: Option<Vec<(f64, f64)>>,
    pub substations: Vec<SubstationTruth>,
}

#[derive(Debug, Clone, Copy)]
enum Emit {
    Voltage { k: usize, fs: f64 },
    Current { k: usize, fs: f64 },
    Power { fs: f64 },
    Pow,
}

/// Generates every channel of a scenario together with its ground truth.
///
/// Per substation and rate: `S##_VPHM_<rate>` (1 pu + ambient + mode) and
/// `S##_IPHM_<rate>` (0.5 pu + ambient + `current_gain` × mode). At the
/// source, at the lowest rate: P, Q and PF following the gate. When a
/// point-on-wave spec is present: one POW channel at the source.
pub fn gen_network(sc: &SynthScenario) -> Result<(ChannelSet, GroundTruth)> {
    sc.validate()?;
    let truth = sc.truth();
    let mut plan = Vec::new();
    for &fs in &sc.rates {
        for k in 0..sc.n_substations {
            plan.push(Emit::Voltage { k, fs });
        }
        for k in 0..sc.n_substations {
            plan.push(Emit::Current { k, fs });
        }
    }
    let low = sc.rates.iter().copied().fold(f64::INFINITY, f64::min);
    let power = sc.power.unwrap_or_default();
    if sc.power.is_some() {
        plan.push(Emit::Power { fs: low });
    }
    if sc.pow.is_some() {
        plan.push(Emit::Pow);
    }

    let produced: Vec<Result<Vec<PhasorChannel>>> = plan
        .par_iter()
        .enumerate()
        .map(|(idx, e)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(sc.seed, idx as u64));
            emit(sc, &truth, &power, *e, &mut rng)
        })
        .collect();
    let mut set = ChannelSet::default();
    for chans in produced {
        for ch in chans? {
            set.push(ch)?;
        }
    }
    set.metadata.insert("generator".into(), "synth".into());
    set.metadata.insert("seed".into(), sc.seed.to_string());
    set.metadata.insert("f0_hz".into(), sc.f0_hz.to_string());
    Ok((set, truth))
}

fn rate_tag(fs: f64) -> String {
    if fs.fract() == 0.0 {
        format!("{}", fs as u64)
    } else {
        format!("{fs}")
    }
}

fn emit(
    sc: &SynthScenario,
    truth: &GroundTruth,
    power: &PowerSpec,
    e: Emit,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<PhasorChannel>> {
    let mode = |k: usize, gain: f64, fs: f64, n: usize| -> Vec<f64> {
        let st = &truth.substations[k];
        (0..n)
            .map(|i| {
                let t = i as f64 / fs;
                gain * st.amplitude * (2.0 * PI * sc.f0_hz * t + st.phase_rad).cos() * sc.gate_at(sc.t0 + t)
            })
            .collect()
    };
    let samples = |fs: f64| (sc.duration_s * fs).round() as usize;
    match e {
        Emit::Voltage { k, fs } | Emit::Current { k, fs } => {
            let n = samples(fs);
            let (kind, base, gain) = match e {
                Emit::Voltage { .. } => (ChannelKind::Vphm, 1.0, 1.0),
                _ => (ChannelKind::Iphm, 0.5, truth.substations[k].current_gain),
            };
            let noise = ambient_values(n, fs, sc.noise.variance, sc.noise.lowpass_corner_hz, rng);
            let m = mode(k, gain, fs, n);
            let values = noise.iter().zip(&m).map(|(a, b)| base + a + b).collect();
            let name = SynthScenario::substation_name(k);
            let id = format!("{name}_{kind}_{}", rate_tag(fs));
            Ok(vec![PhasorChannel::new(id, name, kind, fs, sc.t0, values)?
                .with_location(Some(sc.layout[k]))])
        }
        Emit::Power { fs } => {
            let n = samples(fs);
            let k = sc.source_idx;
            let name = SynthScenario::substation_name(k);
            let tan_phi = (1.0 - power.pf_on * power.pf_on).sqrt() / power.pf_on;
            let mut p = Vec::with_capacity(n);
            let mut q = Vec::with_capacity(n);
            let mut pf = Vec::with_capacity(n);
            for i in 0..n {
                let on = sc.gate_at(sc.t0 + i as f64 / fs) > 0.0;
                let w: f64 = rng.sample(StandardNormal);
                if on {
                    let pv = power.p_on_mw * (1.0 + power.p_noise_frac * w).max(0.01);
                    p.push(pv);
                    q.push(pv * tan_phi);
                    pf.push(power.pf_on);
                } else {
                    p.push(0.0);
                    q.push(power.q_off_mvar * (1.0 + power.p_noise_frac * w));
                    pf.push(0.0);
                }
            }
            let tag = rate_tag(fs);
            let loc = Some(sc.layout[k]);
            Ok(vec![
                PhasorChannel::new(format!("{name}_P_{tag}"), name.clone(), ChannelKind::P, fs, sc.t0, p)?
                    .with_location(loc),
                PhasorChannel::new(format!("{name}_Q_{tag}"), name.clone(), ChannelKind::Q, fs, sc.t0, q)?
                    .with_location(loc),
                PhasorChannel::new(format!("{name}_PF_{tag}"), name, ChannelKind::Pf, fs, sc.t0, pf)?
                    .with_location(loc),
            ])
        }
        Emit::Pow => {
            let spec = sc.pow.expect("planned only when present");
            let k = sc.source_idx;
            let name = SynthScenario::substation_name(k);
            let values = pow_values(&PowParams {
                duration_s: spec.duration_s,
                fs: spec.fs,
                carrier_hz: spec.carrier_hz,
                mod_freq_hz: sc.f0_hz,
                mod_depth: spec.mod_depth,
                noise_std: spec.noise_std,
                seed: 0,
            }, rng);
            let id = format!("{name}_POW_{}", rate_tag(spec.fs));
            Ok(vec![PhasorChannel::new(id, name, ChannelKind::Pow, spec.fs, sc.t0, values)?
                .with_location(Some(sc.layout[k]))])
        }
    }
}

/// Settings for an amplitude-modulated point-on-wave record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowParams {
    pub duration_s: f64,
    pub fs: f64,
    pub carrier_hz: f64,
    pub mod_freq_hz: f64,
    pub mod_depth: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for PowParams {
    fn default() -> Self {
        Self {
            duration_s: 10.0,
            fs: 960.0,
            carrier_hz: 60.0,
            mod_freq_hz: 22.0,
            mod_depth: 0.02,
            noise_std: 0.001,
            seed: 0,
        }
    }
}

fn check_pow(fs: f64, carrier_hz: f64, mod_freq_hz: f64) -> Result<()> {
    if !(fs > 2.0 * (carrier_hz + mod_freq_hz)) {
        return Err(Error::param(
            "fs",
            format!("{fs} sps cannot carry {carrier_hz} Hz modulated at {mod_freq_hz} Hz"),
        ));
    }
    Ok(())
}

fn pow_values(p: &PowParams, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = (p.duration_s * p.fs).round() as usize;
    (0..n)
        .map(|i| {
            let t = i as f64 / p.fs;
            let env = 1.0 + p.mod_depth * (2.0 * PI * p.mod_freq_hz * t).cos();
            let w: f64 = rng.sample(StandardNormal);
            env * (2.0 * PI * p.carrier_hz * t).cos() + p.noise_std * w
        })
        .collect()
}

/// `v(t) = (1 + m cos(2π f_mod t)) cos(2π f_c t) + noise`.
pub fn gen_pow(p: &PowParams) -> Result<PhasorChannel> {
    check_pow(p.fs, p.carrier_hz, p.mod_freq_hz)?;
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let values = pow_values(p, &mut rng);
    PhasorChannel::new("pow", "", ChannelKind::Pow, p.fs, 0.0, values)
}

/// Small ready-to-run scenario: six substations, a 22 Hz forced mode at the
/// central one, emitted at 30 and 60 sps, switched on for the middle of a
/// 30-minute record, with a point-on-wave capture at the source.
pub fn demo_scenario() -> SynthScenario {
    let t0 = 1_593_612_000.0; // 2020-07-01T14:00:00Z
    SynthScenario {
        n_substations: 6,
        layout: vec![(0.0, 0.0), (40.0, 10.0), (-35.0, 20.0), (10.0, -60.0), (90.0, -20.0), (-110.0, 0.0)],
        source_idx: 0,
        f0_hz: 22.0,
        amplitude0: amplitude_for_snr(10.0, 1e-6),
        decay_km: 70.0,
        phase_map: vec![0.0, 0.0, PI, 0.0, PI, PI],
        gate: Some(vec![(t0 + 300.0, t0 + 1500.0)]),
        noise: NoiseSpec {
            variance: 1e-6,
            lowpass_corner_hz: 1.0,
        },
        rates: vec![30.0, 60.0],
        seed: 7,
        t0,
        duration_s: 1800.0,
        current_gain: vec![0.8, 0.0, 0.0, 0.0, 0.0, 0.0],
        power: Some(PowerSpec::default()),
        pow: Some(PowSpec::default()),
    }
}
