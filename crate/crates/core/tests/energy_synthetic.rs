mod common;

use std::f64::consts::PI;

use common::{add, chan, tone, white};
use oscmap_core::energy::{
    build_energy_report, correlate_energy_power, f1_score, heatmap_grid, labelled_threshold, mode_energy_percent,
    two_level_threshold, window_means, GridSpec, ModeEnergyConfig, Scenario, TimeSeries, DEFAULT_ON_THRESHOLD,
};
use oscmap_core::ingest::{load_channels, save_channels, ChannelKind, Format};
use oscmap_core::spectral::{band_energy_series, welch_psd, PsdEstimate, PsdMethod, SpectrogramConfig, WelchConfig};
use oscmap_core::synth::{amplitude_for_snr, gen_ambient, gen_network, NoiseSpec, PowerSpec, SynthScenario};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn grid(df: f64, top: f64) -> Vec<f64> {
    (0..=(top / df).round() as usize).map(|i| i as f64 * df).collect()
}

#[test]
fn sloped_baseline_gaussian_matches_trapezoid_oracle() {
    let f = grid(1.0 / 60.0, 15.0);
    let (area, sigma) = (0.8, 0.08);
    let base = |x: f64| 1.0 + (x - 5.0) / 6.0;
    let gauss = |x: f64| area / (sigma * (2.0 * PI).sqrt()) * (-0.5 * ((x - 8.0) / sigma).powi(2)).exp();
    let d: Vec<f64> = f.iter().map(|&x| base(x) + gauss(x)).collect();
    let psd = PsdEstimate::new(f.clone(), d, PsdMethod::Welch, "x").unwrap();
    let e = mode_energy_percent(&psd, &ModeEnergyConfig::paper_preset(8.0).unwrap()).unwrap();

    // oracle: the baseline is the trend, so the numerator is the Gaussian area
    // and the denominator is everything above the band minimum (at 5 Hz)
    let band: Vec<f64> = f.iter().copied().filter(|x| (5.0..=11.0).contains(x)).collect();
    let trap = |g: &dyn Fn(f64) -> f64| band.windows(2).map(|w| 0.5 * (w[1] - w[0]) * (g(w[0]) + g(w[1]))).sum::<f64>();
    let min = band.iter().map(|&x| base(x) + gauss(x)).fold(f64::INFINITY, f64::min);
    let oracle = 100.0 * trap(&gauss) / trap(&|x| base(x) + gauss(x) - min);
    assert!((e - oracle).abs() <= 0.01 * oracle, "{e} vs {oracle}");
}

#[test]
fn energy_is_scale_invariant() {
    let fs = 30.0;
    let noise = gen_ambient(1200.0, fs, 1e-4, 2.0, 3).unwrap();
    let x = add(noise.values(), &tone(7.89, 0.004, 0.0, fs, noise.len()));
    let psd = welch_psd(&chan("x", x, fs), &WelchConfig::paper_survey()).unwrap();
    let cfg = ModeEnergyConfig::paper_preset(7.89).unwrap();
    let e = mode_energy_percent(&psd, &cfg).unwrap();
    assert!(e > 0.0 && e < 100.0);
    for c in [1e-6, 0.37, 2.0, 1e5] {
        let ec = mode_energy_percent(&psd.scaled(c), &cfg).unwrap();
        assert!((ec - e).abs() <= 1e-10 * e.max(1.0), "{c}: {ec} vs {e}");
    }
}

#[test]
fn energy_monotone_in_amplitude() {
    let fs = 30.0;
    let noise = gen_ambient(1200.0, fs, 1e-4, 2.0, 8).unwrap();
    let cfg = ModeEnergyConfig::paper_preset(7.89).unwrap();
    let amp0 = amplitude_for_snr(10.0, 1e-4);
    let es: Vec<f64> = (0..10)
        .map(|k| {
            let a = amp0 * k as f64 / 9.0;
            let x = add(noise.values(), &tone(7.89, a, 0.2, fs, noise.len()));
            mode_energy_percent(&welch_psd(&chan("x", x, fs), &WelchConfig::paper_survey()).unwrap(), &cfg).unwrap()
        })
        .collect();
    assert!(es.windows(2).all(|w| w[1] >= w[0]), "{es:?}");
    assert!(es[9] > 50.0);
}

fn series(v: Vec<f64>) -> TimeSeries {
    TimeSeries { name: "s".into(), times: (0..v.len()).map(|i| 300.0 * i as f64).collect(), values: v }
}

#[test]
fn shuffled_energy_is_uncorrelated() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let p: Vec<f64> = (0..100).map(|i| if i % 2 == 0 { 20.0 + (i as f64).sin() } else { 0.0 }).collect();
    let mut e: Vec<f64> = p.iter().map(|x| 1.0 + x * 10.0).collect();
    e.shuffle(&mut rng);
    let q: Vec<f64> = p.iter().map(|x| 0.3 * x + 0.1).collect();
    let pf = white(100, 1.0, 7);
    let rep = correlate_energy_power(&series(e), &series(p), &series(q), &series(pf)).unwrap();
    assert!(rep.r("p").unwrap().r.abs() < 0.2, "{}", rep.r("p").unwrap().r);
}

fn day_scenario(days: usize, seed: u64) -> (SynthScenario, Vec<(f64, f64)>) {
    let t0 = 1_593_561_600.0;
    let gate: Vec<(f64, f64)> = (0..days)
        .map(|d| (t0 + d as f64 * 86_400.0 + 6.0 * 3600.0, t0 + d as f64 * 86_400.0 + 20.0 * 3600.0))
        .collect();
    let sc = SynthScenario {
        n_substations: 2,
        layout: vec![(0.0, 0.0), (50.0, 0.0)],
        source_idx: 0,
        f0_hz: 22.0,
        amplitude0: amplitude_for_snr(10.0, 1e-6),
        decay_km: 70.0,
        phase_map: vec![],
        gate: Some(gate.clone()),
        noise: NoiseSpec { variance: 1e-6, lowpass_corner_hz: 1.0 },
        rates: vec![30.0],
        seed,
        t0,
        duration_s: days as f64 * 86_400.0,
        current_gain: vec![0.8, 0.0],
        power: Some(PowerSpec::default()),
        pow: None,
    };
    (sc, gate)
}

#[test]
fn gated_mode_drives_energy_and_correlation() {
    let (sc, gate) = day_scenario(1, 3);
    let (set, _) = gen_network(&sc).unwrap();
    let v = set.get("S01_VPHM_30").unwrap();
    // 22 Hz folds to 8 Hz at 30 sps
    let be = band_energy_series(v, (7.5, 8.5), &SpectrogramConfig::default()).unwrap();
    let truth: Vec<bool> = be.times.iter().map(|t| gate.iter().any(|&(a, b)| *t >= a && *t < b)).collect();
    let th = labelled_threshold(&be.energy, &truth).unwrap();
    let pred: Vec<bool> = be.energy.iter().map(|e| *e > th).collect();
    assert!(f1_score(&pred, &truth) >= 0.95);
    let th2 = two_level_threshold(&be.energy).unwrap();
    let pred2: Vec<bool> = be.energy.iter().map(|e| *e > th2).collect();
    assert!(f1_score(&pred2, &truth) >= 0.95);

    let energy = TimeSeries::from(&be);
    let w = |id: &str| window_means(set.get(id).unwrap(), &be.times, be.window_len_s);
    let rep = correlate_energy_power(&energy, &w("S01_P_30"), &w("S01_Q_30"), &w("S01_PF_30")).unwrap();
    assert!(rep.r("p").unwrap().r > 0.8);
    assert!(rep.gate_ratio >= 10.0);
    assert!(rep.windows_on > 0 && rep.windows_off > 0);
    assert!(rep.scatter_csv("p").lines().count() == rep.rows.len() + 1);
}

#[test]
fn scenarios_and_heatmap_from_synth() {
    let mut sc = oscmap_core::synth::demo_scenario();
    sc.f0_hz = 7.9;
    sc.rates = vec![30.0];
    sc.gate = None;
    sc.pow = None;
    sc.duration_s = 1200.0;
    let (set, truth) = gen_network(&sc).unwrap();
    let mags = set.filter(|c| matches!(c.kind(), ChannelKind::Vphm | ChannelKind::Iphm));
    let psds: Vec<_> = mags.iter().map(|c| welch_psd(c, &WelchConfig::paper_survey()).unwrap()).collect();
    let cfg = ModeEnergyConfig::paper_preset(7.9).unwrap();
    let spec = GridSpec::around(&truth.substations.iter().map(|s| (s.location.0, s.location.1, 0.0)).collect::<Vec<_>>(), 30, 20, 10.0);
    let rep = build_energy_report(&mags, &psds, &cfg, DEFAULT_ON_THRESHOLD, Some((spec, 2.0, None))).unwrap();
    let src = rep.channels.iter().find(|c| c.id == "S01_VPHM_30").unwrap();
    assert_eq!(src.scenario, Scenario::S2);
    let near = rep.channels.iter().find(|c| c.id == "S02_VPHM_30").unwrap();
    assert_eq!(near.scenario, Scenario::S1);
    // the hottest cell sits at the source
    let hm = rep.heatmap.as_ref().unwrap();
    let (i, j, _) = hm.max_cell().unwrap();
    assert!((hm.xs[i] - 0.0).abs() <= 10.0 && (hm.ys[j] - 0.0).abs() <= 10.0, "{} {}", hm.xs[i], hm.ys[j]);
    assert!(rep.to_csv().lines().count() == rep.channels.len() + 1);
    let json = serde_json::to_string(&rep).unwrap();
    let back: oscmap_core::energy::ModeEnergyReport = serde_json::from_str(&json).unwrap();
    assert_eq!(back.channels, rep.channels);
}

#[test]
fn clustered_points_put_maximum_in_cluster() {
    let pts = vec![(10.0, 10.0, 90.0), (12.0, 11.0, 85.0), (11.0, 13.0, 95.0), (-30.0, -20.0, 5.0), (40.0, -35.0, 8.0), (-25.0, 30.0, 3.0)];
    let spec = GridSpec::around(&pts, 40, 40, 5.0);
    let g = heatmap_grid(&pts, spec, 2.0, None).unwrap();
    let (i, j, _) = g.max_cell().unwrap();
    let cell = (spec.x_max - spec.x_min) / 40.0;
    assert!(g.xs[i] >= 10.0 - cell && g.xs[i] <= 12.0 + cell);
    assert!(g.ys[j] >= 10.0 - cell && g.ys[j] <= 13.0 + cell);
}

#[test]
fn channel_csv_round_trip() {
    let (sc, _) = day_scenario(1, 9);
    let sc = SynthScenario { duration_s: 600.0, gate: None, ..sc };
    let (set, _) = gen_network(&sc).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.csv");
    save_channels(&set, &path, Format::Csv).unwrap();
    let back = load_channels(&path, Format::Csv).unwrap();
    assert_eq!(back.ids(), set.ids());
    for (a, b) in back.iter().zip(set.iter()) {
        assert_eq!(a, b);
    }
    assert_eq!(back.metadata, set.metadata);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scale_invariance_random(knots in proptest::collection::vec(0.01f64..10.0, 8..20), c in 1e-3f64..1e3) {
        let f = grid(0.05, 15.0);
        let seg = 15.0 / (knots.len() - 1) as f64;
        let d: Vec<f64> = f.iter().map(|x| {
            let k = ((x / seg) as usize).min(knots.len() - 2);
            let t = (x - k as f64 * seg) / seg;
            knots[k] * (1.0 - t) + knots[k + 1] * t
        }).collect();
        let p = PsdEstimate::new(f, d, PsdMethod::Welch, "x").unwrap();
        let cfg = ModeEnergyConfig::paper_preset(8.0).unwrap();
        let e = mode_energy_percent(&p, &cfg).unwrap();
        let ec = mode_energy_percent(&p.scaled(c), &cfg).unwrap();
        prop_assert!((e - ec).abs() <= 1e-10 * e.max(1.0));
    }
}
