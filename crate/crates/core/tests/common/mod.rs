#![allow(dead_code)]

use std::f64::consts::PI;

use oscmap_core::ingest::{ChannelKind, ChannelSet, PhasorChannel};
use oscmap_core::synth::{derive_seed, gen_resonance};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn chan(id: &str, values: Vec<f64>, fs: f64) -> PhasorChannel {
    PhasorChannel::new(id, "S", ChannelKind::Vphm, fs, 0.0, values).unwrap()
}

pub fn white(n: usize, sd: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect()
}

pub fn tone(f: f64, amp: f64, phase: f64, fs: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| amp * (2.0 * PI * f * i as f64 / fs + phase).cos()).collect()
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

/// `amps[k]·cos(2π f0 t + phases[k])` plus independent white noise of
/// variance `noise_var` in every channel.
pub fn forced_mode_set(f0: f64, amps: &[f64], phases: &[f64], noise_var: f64, fs: f64, n: usize, seed: u64) -> ChannelSet {
    let chans = amps
        .iter()
        .zip(phases)
        .enumerate()
        .map(|(k, (&a, &p))| {
            let v = add(&tone(f0, a, p, fs, n), &white(n, noise_var.sqrt(), derive_seed(seed, k as u64)));
            chan(&format!("c{k}"), v, fs)
        })
        .collect();
    ChannelSet::new(chans).unwrap()
}

/// Two disjoint channel groups, each driven by its own independent narrowband
/// process at `f0` with equal power, plus white noise per channel.
pub fn two_group_set(f0: f64, group: usize, mode_var: f64, noise_var: f64, fs: f64, duration_s: f64, seed: u64) -> ChannelSet {
    let n = (duration_s * fs).round() as usize;
    let a = gen_resonance(duration_s, fs, f0, 0.995, mode_var, derive_seed(seed, 1000)).unwrap();
    let b = gen_resonance(duration_s, fs, f0, 0.995, mode_var, derive_seed(seed, 2000)).unwrap();
    let weights = [1.0, 0.8, 0.6, 0.9, 0.7];
    let mut chans = Vec::new();
    for (g, src) in [a, b].iter().enumerate() {
        for j in 0..group {
            let k = g * group + j;
            let w = weights[j % weights.len()];
            let v: Vec<f64> = src
                .values()
                .iter()
                .zip(white(n, noise_var.sqrt(), derive_seed(seed, k as u64)))
                .map(|(s, e)| w * s + e)
                .collect();
            chans.push(chan(&format!("g{g}c{j}"), v, fs));
        }
    }
    ChannelSet::new(chans).unwrap()
}

pub fn wrap(p: f64) -> f64 {
    let w = p.rem_euclid(2.0 * PI);
    if w > PI {
        w - 2.0 * PI
    } else {
        w
    }
}
