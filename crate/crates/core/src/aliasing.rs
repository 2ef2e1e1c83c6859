//! Alias folding and multi-rate recovery of the true oscillation frequency.
//!
//! A tone at `f` sampled at `fs` shows up at `|((f + fs/2) mod fs) - fs/2|`.
//! Each observation `(f_obs, fs, tol)` therefore admits the true frequencies
//! `k·fs ± f_obs` (± tol); intersecting those sets across rates narrows the
//! candidates down, typically to a single frequency once a high-rate
//! waveform record is included.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_TOLERANCE_HZ: f64 = 0.1;
pub const DEFAULT_F_MAX_HZ: f64 = 100.0;

/// Frequency where a tone at `f_true` appears after sampling at `fs`.
pub fn alias_of(f_true: f64, fs: f64) -> f64 {
    let half = fs / 2.0;
    ((f_true + half).rem_euclid(fs) - half).abs()
}

/// A spectral peak seen at `f_obs_hz` in data sampled at `fs_hz`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AliasObservation {
    pub f_obs_hz: f64,
    pub fs_hz: f64,
    pub tolerance_hz: f64,
}

impl AliasObservation {
    pub fn new(f_obs_hz: f64, fs_hz: f64, tolerance_hz: f64) -> Result<Self> {
        if !(fs_hz.is_finite() && fs_hz > 0.0) {
            return Err(Error::param("fs_hz", format!("must be positive, got {fs_hz}")));
        }
        if !(f_obs_hz >= 0.0 && f_obs_hz <= fs_hz / 2.0) {
            return Err(Error::param(
                "f_obs_hz",
                format!("{f_obs_hz} Hz is outside [0, {}] for {fs_hz} sps", fs_hz / 2.0),
            ));
        }
        if !(tolerance_hz.is_finite() && tolerance_hz > 0.0) {
            return Err(Error::param("tolerance_hz", format!("must be positive, got {tolerance_hz}")));
        }
        Ok(Self {
            f_obs_hz,
            fs_hz,
            tolerance_hz,
        })
    }

    /// Parses `f:fs` or `f:fs:tol`.
    pub fn parse(s: &str, default_tol: f64) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        if !(2..=3).contains(&parts.len()) {
            return Err(Error::param("obs", format!("expected f:fs[:tol], got `{s}`")));
        }
        let num = |p: &str| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| Error::param("obs", format!("bad number `{p}` in `{s}`")))
        };
        let tol = if parts.len() == 3 { num(parts[2])? } else { default_tol };
        Self::new(num(parts[0])?, num(parts[1])?, tol)
    }

    /// Does a tone at `f` land within tolerance of this observation?
    pub fn admits(&self, f: f64) -> bool {
        (alias_of(f, self.fs_hz) - self.f_obs_hz).abs() <= self.tolerance_hz
    }

    /// Closed intervals of true frequencies in `[0, f_max]` consistent with the observation.
    fn preimage(&self, f_max: f64) -> Vec<(f64, f64)> {
        let mut iv = Vec::new();
        let mut k = 0.0;
        loop {
            let base = k * self.fs_hz;
            if base - self.f_obs_hz - self.tolerance_hz > f_max {
                break;
            }
            for c in [base - self.f_obs_hz, base + self.f_obs_hz] {
                let lo = (c - self.tolerance_hz).max(0.0);
                let hi = (c + self.tolerance_hz).min(f_max);
                if lo <= hi {
                    iv.push((lo, hi));
                }
            }
            k += 1.0;
        }
        merge_intervals(iv, 0.0)
    }
}

fn merge_intervals(mut iv: Vec<(f64, f64)>, gap: f64) -> Vec<(f64, f64)> {
    iv.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(iv.len());
    for (lo, hi) in iv {
        match out.last_mut() {
            Some(last) if lo <= last.1 + gap => last.1 = last.1.max(hi),
            _ => out.push((lo, hi)),
        }
    }
    out
}

fn intersect(a: &[(f64, f64)], b: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        let lo = a[i].0.max(b[j].0);
        let hi = a[i].1.min(b[j].1);
        if lo <= hi {
            out.push((lo, hi));
        }
        if a[i].1 < b[j].1 {
            i += 1;
        } else {
            j += 1;
        }
    }
    out
}

/// A true-frequency candidate consistent with every observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyCandidate {
    pub freq_hz: f64,
    /// Feasible interval the candidate was taken from.
    pub lo_hz: f64,
    pub hi_hz: f64,
    /// `alias_of(freq_hz, fs_i) - f_obs_i` per observation.
    pub residuals_hz: Vec<f64>,
}

/// All frequencies in `[0, f_max]` whose aliases match every observation.
///
/// Feasible intervals closer than the smallest tolerance are reported as one
/// candidate spanning them all.
pub fn resolve_true_frequency(obs: &[AliasObservation], f_max: f64) -> Result<Vec<FrequencyCandidate>> {
    if obs.is_empty() {
        return Err(Error::param("obs", "at least one observation is required"));
    }
    if !(f_max.is_finite() && f_max > 0.0) {
        return Err(Error::param("f_max", format!("must be positive, got {f_max}")));
    }
    let min_tol = obs.iter().map(|o| o.tolerance_hz).fold(f64::INFINITY, f64::min);
    let mut feasible = obs[0].preimage(f_max);
    for o in &obs[1..] {
        feasible = intersect(&feasible, &o.preimage(f_max));
        if feasible.is_empty() {
            break;
        }
    }
    // group intervals that lie closer than the smallest tolerance; the
    // candidate is the midpoint of the widest member, so it stays feasible
    let mut groups: Vec<Vec<(f64, f64)>> = Vec::new();
    for iv in feasible {
        match groups.last_mut() {
            Some(g) if iv.0 <= g.last().expect("nonempty group").1 + min_tol => g.push(iv),
            _ => groups.push(vec![iv]),
        }
    }
    Ok(groups
        .into_iter()
        .map(|g| {
            let widest = g
                .iter()
                .copied()
                .reduce(|a, b| if b.1 - b.0 > a.1 - a.0 { b } else { a })
                .expect("nonempty group");
            let f = 0.5 * (widest.0 + widest.1);
            FrequencyCandidate {
                freq_hz: f,
                lo_hz: g[0].0,
                hi_hz: g.iter().fold(f64::NEG_INFINITY, |m, iv| m.max(iv.1)),
                residuals_hz: obs.iter().map(|o| alias_of(f, o.fs_hz) - o.f_obs_hz).collect(),
            }
        })
        .collect())
}

/// CSV table of candidates with one residual column per observation.
pub fn candidates_to_csv(obs: &[AliasObservation], cands: &[FrequencyCandidate]) -> String {
    let mut out = String::from("candidate_hz,lo_hz,hi_hz");
    for o in obs {
        out.push_str(&format!(",residual_{}@{}", o.f_obs_hz, o.fs_hz));
    }
    out.push('\n');
    for c in cands {
        out.push_str(&format!("{},{},{}", c.freq_hz, c.lo_hz, c.hi_hz));
        for r in &c.residuals_hz {
            out.push_str(&format!(",{r}"));
        }
        out.push('\n');
    }
    out
}
