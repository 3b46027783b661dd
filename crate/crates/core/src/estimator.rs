//! Recovers a [`TapParameterSet`] from a channel trace.
//!
//! Stages, in order: noise floor and per-snapshot tap states, tap selection
//! and the RMS-delay-spread tap-count rule, alive-conditioned tap powers,
//! pooled lognormal amplitude fit, birth-phase interval, per-tap chain
//! estimates, and pairwise-complete amplitude correlation.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::markov::{estimate_chain, MarkovChain2, StatePath, TransitionCounts};
use crate::params::{tap_count, validate, LognormalParams, PhaseInterval, TapEntry, TapParameterSet};
use crate::stats::{
    detection_level, fit_lognormal, noise_floor_db, pairwise_correlation, rms_ds_series, to_db,
    NoiseFloor, StatsOptions, DEFAULT_THRESHOLD_DB,
};
use crate::trace::CirTrace;

/// Which delay bins become taps of the recovered model.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TapSelection {
    /// Every bin that is alive in at least one snapshot.
    #[default]
    OccupiedBins,
    /// The first `ceil(max rms ds / resolution) + 1` occupied bins.
    RmsRule,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateOptions {
    pub threshold_db: f64,
    pub noise_floor: NoiseFloor,
    /// Delay resolution; the trace metadata value when `None`.
    pub resolution_s: Option<f64>,
    /// Window for the RMS delay spread series; 1 (per snapshot) when `None`.
    pub rms_window: Option<usize>,
    /// Snapshots per large-scale normalization window for tap powers: each
    /// window's mean received power is divided out before averaging. Whole
    /// trace when `None`.
    pub normalization_window: Option<usize>,
    /// Doppler bound of the recovered model; the trace metadata value when `None`.
    pub max_doppler_hz: Option<f64>,
    pub tap_selection: TapSelection,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        Self {
            threshold_db: DEFAULT_THRESHOLD_DB,
            noise_floor: NoiseFloor::Auto,
            resolution_s: None,
            rms_window: None,
            normalization_window: None,
            max_doppler_hz: None,
            tap_selection: TapSelection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TapDiagnostics {
    /// Column of the tap in the source trace.
    pub source_bin: usize,
    pub counts: TransitionCounts,
    pub row0_undefined: bool,
    pub row1_undefined: bool,
    /// Fraction of snapshots in which the tap was censored (state 0).
    pub censoring_rate: f64,
    pub births: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub n_snapshots: usize,
    /// `-inf` for noiseless traces.
    pub noise_floor_db: f64,
    pub threshold_db: f64,
    /// Snapshots per power normalization window actually used.
    pub normalization_window: usize,
    pub max_rms_ds_s: Option<f64>,
    /// Result of the RMS delay spread tap-count rule.
    pub rms_rule_tap_count: Option<usize>,
    pub dropped_bins: Vec<usize>,
    pub taps: Vec<TapDiagnostics>,
    pub amplitude_samples: usize,
    /// One-sample KS statistic of the pooled amplitudes against the fit.
    pub lognormal_ks: f64,
    pub lognormal_degenerate: bool,
    /// Pearson coefficients of linear amplitudes (NaN where undefined).
    pub linear_correlation: Vec<Vec<f64>>,
    /// Pairs whose log-domain coefficient was undefined and set to 0.
    pub undefined_correlation_pairs: Vec<(usize, usize)>,
    /// Tap powers were clipped because a later tap outpowered the first.
    pub power_anchor_clipped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatedModel {
    pub params: TapParameterSet,
    pub diagnostics: Diagnostics,
}

/// Binary alive/dead matrix of a trace (`states[t][l]`) and the floor used.
pub fn assign_states(trace: &CirTrace, threshold_db: f64, floor: NoiseFloor) -> (Vec<Vec<u8>>, f64) {
    let floor_db = noise_floor_db(trace, floor);
    let level = detection_level(floor_db, threshold_db);
    let states = trace
        .rows()
        .map(|r| r.iter().map(|g| (g.norm_sqr() > level) as u8).collect())
        .collect();
    (states, floor_db)
}

pub fn estimate_model(trace: &CirTrace, opts: &EstimateOptions) -> Result<EstimatedModel> {
    let n = trace.n_snapshots();
    if n < 2 {
        return Err(Error::domain("need at least 2 snapshots to estimate a model"));
    }
    let resolution = opts.resolution_s.unwrap_or(trace.meta.delay_resolution_s);
    if !(resolution > 0.0) {
        return Err(Error::domain("delay resolution must be positive"));
    }

    let (states, floor_db) = assign_states(trace, opts.threshold_db, opts.noise_floor);

    // RMS delay spread rule
    let stats_opts = StatsOptions {
        threshold_db: opts.threshold_db,
        noise_floor: NoiseFloor::FixedDb(floor_db),
    };
    let window = opts.rms_window.unwrap_or(1).clamp(1, n);
    let max_rms = rms_ds_series(trace, window, &stats_opts)?
        .into_iter()
        .flatten()
        .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))));
    let rms_rule = max_rms.and_then(|s| tap_count(s, resolution).ok());

    // tap selection
    let occupied: Vec<usize> = (0..trace.n_taps()).filter(|&l| states.iter().any(|r| r[l] == 1)).collect();
    let mut selected = occupied.clone();
    if opts.tap_selection == TapSelection::RmsRule {
        selected.truncate(rms_rule.unwrap_or(1));
    }
    if selected.is_empty() {
        return Err(Error::domain("no tap is ever above the detection threshold"));
    }
    let dropped_bins = (0..trace.n_taps()).filter(|l| !selected.contains(l)).collect();
    let l = selected.len();

    let alive = |t: usize, k: usize| states[t][selected[k]] == 1;
    let gain = |t: usize, k: usize| trace.gain(t, selected[k]);

    // alive-conditioned powers, first tap as the 0 dB anchor
    let norm_window = opts.normalization_window.unwrap_or(n).clamp(1, n);
    let scale: Vec<f64> = (0..n)
        .step_by(norm_window)
        .map(|start| {
            let rows = start..(start + norm_window).min(n);
            let len = rows.len() as f64;
            let total: f64 = rows.flat_map(|t| trace.row(t).iter()).map(|g| g.norm_sqr()).sum::<f64>() / len;
            if total > 0.0 {
                total
            } else {
                1.0
            }
        })
        .collect();
    let mean_power: Vec<f64> = (0..l)
        .map(|k| {
            let (s, c) = (0..n)
                .filter(|&t| alive(t, k))
                .fold((0.0, 0usize), |(s, c), t| (s + gain(t, k).norm_sqr() / scale[t / norm_window], c + 1));
            s / c as f64
        })
        .collect();
    let mut power_anchor_clipped = false;
    let powers_db: Vec<f64> = mean_power
        .iter()
        .map(|&p| {
            let db = to_db(p / mean_power[0]);
            if db > 0.0 {
                power_anchor_clipped = true;
                0.0
            } else {
                db
            }
        })
        .collect();

    // pooled amplitude fit
    let pooled: Vec<f64> = (0..n)
        .flat_map(|t| (0..l).filter(move |&k| alive(t, k)).map(move |k| (t, k)))
        .map(|(t, k)| gain(t, k).norm())
        .collect();
    let (amplitude_dist, lognormal_ks, lognormal_degenerate) = if pooled.len() >= 2 {
        let fit = fit_lognormal(&pooled)?;
        let ks = match Normal::new(fit.params.mu, fit.params.sigma) {
            Ok(law) if !fit.degenerate => {
                let logs: Vec<f64> = pooled.iter().map(|a| a.ln()).collect();
                crate::stats::ks_one_sample(&logs, |x| law.cdf(x))
            }
            _ => 1.0,
        };
        (fit.params, ks, fit.degenerate)
    } else {
        (LognormalParams::new(pooled.first().map_or(0.0, |a| a.ln()), 0.0), 1.0, true)
    };
    let amplitude_dist = if lognormal_degenerate {
        // keep the recovered model valid; a point mass has no spread to report
        LognormalParams::new(amplitude_dist.mu, f64::MIN_POSITIVE)
    } else {
        amplitude_dist
    };

    // chains, births and birth phases
    let mut tap_entries = Vec::with_capacity(l);
    let mut tap_diags = Vec::with_capacity(l);
    let mut birth_phases = Vec::new();
    for (k, &bin) in selected.iter().enumerate() {
        let path: Vec<u8> = (0..n).map(|t| alive(t, k) as u8).collect();
        let est = estimate_chain(&StatePath::new(path.clone(), trace.snapshot_interval_s)?)?;
        let mut births = 0;
        for t in 0..n {
            if path[t] == 1 && (t == 0 || path[t - 1] == 0) {
                births += 1;
                birth_phases.push(wrap_phase(gain(t, k)));
            }
        }
        tap_entries.push(TapEntry {
            delay_s: trace.delays_s[bin],
            mean_power_db: powers_db[k],
            chain: MarkovChain2::new(est.chain.p00, est.chain.p11, est.chain.p1_init),
        });
        tap_diags.push(TapDiagnostics {
            source_bin: bin,
            counts: est.counts,
            row0_undefined: est.row0_undefined,
            row1_undefined: est.row1_undefined,
            censoring_rate: 1.0 - est.chain.p1_init,
            births,
        });
    }
    let phase_dist = if birth_phases.len() >= 2 {
        let lo = birth_phases.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = birth_phases.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        PhaseInterval { lo, hi }
    } else {
        PhaseInterval { lo: 0.0, hi: 2.0 * PI }
    };

    // pairwise-complete correlation, log domain for the model, linear for diagnostics
    let cells = |f: fn(f64) -> f64| -> Vec<Vec<Option<f64>>> {
        (0..n)
            .map(|t| (0..l).map(|k| alive(t, k).then(|| f(gain(t, k).norm()))).collect())
            .collect()
    };
    let log_corr = pairwise_correlation(&cells(f64::ln), l);
    let linear_corr = pairwise_correlation(&cells(|a| a), l);
    let mut undefined_pairs = Vec::new();
    for i in 0..l {
        for j in i + 1..l {
            if log_corr.get(i, j).is_none() {
                undefined_pairs.push((i, j));
            }
        }
    }

    let params = TapParameterSet {
        max_doppler_hz: opts.max_doppler_hz.unwrap_or(trace.meta.max_doppler_hz),
        snapshot_interval_s: trace.snapshot_interval_s,
        delay_resolution_s: resolution,
        amplitude_dist,
        phase_dist,
        correlation: log_corr.filled(),
        taps: tap_entries,
    };
    validate(&params).into_result()?;

    Ok(EstimatedModel {
        params,
        diagnostics: Diagnostics {
            n_snapshots: n,
            noise_floor_db: floor_db,
            threshold_db: opts.threshold_db,
            normalization_window: norm_window,
            max_rms_ds_s: max_rms,
            rms_rule_tap_count: rms_rule,
            dropped_bins,
            taps: tap_diags,
            amplitude_samples: pooled.len(),
            lognormal_ks,
            lognormal_degenerate,
            linear_correlation: linear_corr.values,
            undefined_correlation_pairs: undefined_pairs,
            power_anchor_clipped,
        },
    })
}

fn wrap_phase(g: Complex64) -> f64 {
    g.arg().rem_euclid(2.0 * PI)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::{generate, AmplitudeMode, GenConfig};
    use crate::params::preset_5gr;
    use crate::rng::stream_rng;
    use crate::stats::from_db;
    use crate::trace::{TraceMeta, EXTERNAL_TAG};
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn meta(generator: &str) -> TraceMeta {
        TraceMeta {
            carrier_hz: 2.16e9,
            delay_resolution_s: 1e-7,
            max_doppler_hz: 160.0,
            rng_seed: 0,
            generator: generator.into(),
        }
    }

    #[test]
    fn noiseless_states_equal_generator_states() {
        let (t, log) = crate::generator::generate_with_log(&preset_5gr(), &GenConfig::new(5_000, 12)).unwrap();
        let (states, floor) = assign_states(&t, 6.0, NoiseFloor::Auto);
        assert_eq!(floor, f64::NEG_INFINITY);
        for (tt, row) in states.iter().enumerate() {
            for (l, &s) in row.iter().enumerate() {
                assert_eq!(s, log.states[l][tt]);
            }
        }
    }

    #[test]
    fn all_zero_trace_has_no_alive_cells() {
        let t = CirTrace::new(vec![Complex64::new(0.0, 0.0); 30], vec![0.0, 1e-7, 2e-7], 1e-3, meta("railtdl-test")).unwrap();
        let (states, _) = assign_states(&t, 6.0, NoiseFloor::Auto);
        assert!(states.iter().flatten().all(|&s| s == 0));
        assert!(estimate_model(&t, &EstimateOptions::default()).is_err());
    }

    #[test]
    fn noisy_trace_keeps_strong_tap_and_loses_weak_tap() {
        // Fixed-magnitude taps at the preset powers plus complex white
        // noise 30 dB below tap 1.
        let powers: Vec<f64> = preset_5gr().powers_db().iter().map(|&d| from_db(d)).collect();
        let noise_power = from_db(-30.0);
        let mut rng = stream_rng(77, 0);
        let n = 20_000;
        let mut gains = Vec::with_capacity(n * 5);
        for _ in 0..n {
            for &p in &powers {
                let phase: f64 = rng.random_range(0.0..2.0 * PI);
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                let noise = Complex64::new(re, im) * (noise_power / 2.0).sqrt();
                gains.push(Complex64::from_polar(p.sqrt(), phase) + noise);
            }
        }
        let t = CirTrace::new(gains, (0..5).map(|k| k as f64 * 1e-7).collect(), 1e-3, meta(EXTERNAL_TAG)).unwrap();
        let (states, floor) = assign_states(&t, 6.0, NoiseFloor::Auto);
        assert!((floor + 30.0).abs() < 3.0, "floor {floor}");
        assert!(states.iter().all(|r| r[0] == 1));
        let tap5 = states.iter().filter(|r| r[4] == 1).count() as f64 / n as f64;
        assert!(tap5 < 0.2, "tap 5 occupancy {tap5}");
    }

    #[test]
    fn single_constant_tap() {
        let g = vec![Complex64::new(0.3, 0.4); 50];
        let t = CirTrace::new(g, vec![0.0], 1e-3, meta("railtdl-test")).unwrap();
        let m = estimate_model(&t, &EstimateOptions::default()).unwrap();
        assert_eq!(m.params.num_taps(), 1);
        assert_eq!(m.params.taps[0].mean_power_db, 0.0);
        assert_eq!(m.params.taps[0].chain.p11, 1.0);
        assert_eq!(m.params.taps[0].chain.p00, 1.0);
        assert!(m.diagnostics.taps[0].row0_undefined);
        assert!(m.diagnostics.lognormal_degenerate);
        assert_eq!(m.diagnostics.max_rms_ds_s, Some(0.0));
        assert_eq!(m.diagnostics.rms_rule_tap_count, None);
    }

    #[test]
    fn short_trace_is_rejected() {
        let t = CirTrace::new(vec![Complex64::new(1.0, 0.0)], vec![0.0], 1e-3, meta("railtdl-test")).unwrap();
        assert!(estimate_model(&t, &EstimateOptions::default()).is_err());
    }

    #[test]
    fn never_alive_bin_is_dropped() {
        let z = Complex64::new(0.0, 0.0);
        let a = Complex64::new(1.0, 0.0);
        let b = Complex64::new(0.2, 0.1);
        let g = vec![a, z, b, a, z, z, a, z, b, a, z, b];
        let t = CirTrace::new(g, vec![0.0, 1e-7, 2e-7], 1e-3, meta("railtdl-test")).unwrap();
        let m = estimate_model(&t, &EstimateOptions::default()).unwrap();
        assert_eq!(m.params.num_taps(), 2);
        assert_eq!(m.diagnostics.dropped_bins, vec![1]);
        assert_eq!(m.params.taps[1].delay_s, 2e-7);
    }

    #[test]
    fn normalization_window_removes_shadowing_step() {
        // tap 2 lives only in the second half, which sits 20 dB higher
        let n = 1000;
        let mut g = Vec::with_capacity(2 * n);
        for t in 0..n {
            let shadow = if t < n / 2 { 1.0 } else { 10.0 };
            g.push(Complex64::new(shadow, 0.0));
            g.push(Complex64::new(if t < n / 2 { 0.0 } else { shadow * 0.1f64.sqrt() }, 0.0));
        }
        let t = CirTrace::new(g, vec![0.0, 1e-7], 1e-3, meta("railtdl-test")).unwrap();
        let whole = estimate_model(&t, &EstimateOptions::default()).unwrap();
        let windowed = estimate_model(
            &t,
            &EstimateOptions {
                normalization_window: Some(n / 2),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(whole.diagnostics.normalization_window, n);
        assert_eq!(windowed.diagnostics.normalization_window, n / 2);
        assert!((whole.params.taps[1].mean_power_db + 7.03).abs() < 0.01);
        assert!((windowed.params.taps[1].mean_power_db + 10.0).abs() < 0.5);
    }

    #[test]
    fn round_trip_on_preset() {
        let p = preset_5gr();
        let t = generate(&p, &GenConfig::new(100_000, 4)).unwrap();
        let m = estimate_model(&t, &EstimateOptions::default()).unwrap();
        assert_eq!(m.params.num_taps(), 5);
        for (est, truth) in m.params.taps.iter().zip(&p.taps).skip(1) {
            assert!((est.chain.p00 - truth.chain.p00).abs() <= 0.03);
            assert!((est.chain.p11 - truth.chain.p11).abs() <= 0.03);
            assert!((est.chain.p1_init - truth.chain.stationary()).abs() <= 0.03);
        }
        for (est, truth) in m.params.taps.iter().zip(&p.taps) {
            assert!((est.mean_power_db - truth.mean_power_db).abs() < 0.5);
        }
        for d in &m.diagnostics.taps {
            assert_eq!(d.counts.total(), 99_999);
        }
        assert!(m.params.phase_dist.lo >= 0.0 && m.params.phase_dist.hi <= PI + 1e-9);
        assert_eq!(m.params.max_doppler_hz, 160.0);
        // RMS rule cannot exceed 3 taps on a 0..400 ns grid
        assert!(m.diagnostics.rms_rule_tap_count.unwrap() <= 3);
        let rms_only = estimate_model(&t, &EstimateOptions { tap_selection: TapSelection::RmsRule, ..Default::default() }).unwrap();
        assert_eq!(Some(rms_only.params.num_taps()), m.diagnostics.rms_rule_tap_count);
    }

    #[test]
    fn common_mode_recovers_lognormal_and_correlation() {
        let p = preset_5gr();
        let t = generate(&p, &GenConfig::new(100_000, 8).with_amplitude_mode(AmplitudeMode::CommonLognormal)).unwrap();
        let m = estimate_model(&t, &EstimateOptions::default()).unwrap();
        assert!((m.params.amplitude_dist.mu + 3.66).abs() <= 0.05);
        assert!((m.params.amplitude_dist.sigma - 1.08).abs() <= 0.05);
        assert!(m.diagnostics.lognormal_ks < 0.02);
        assert!((m.params.correlation[0][2] - 0.7733).abs() < 0.05);
    }

    #[test]
    fn two_hop_stability() {
        let cfg = GenConfig::new(100_000, 10).with_amplitude_mode(AmplitudeMode::CommonLognormal);
        let first = estimate_model(&generate(&preset_5gr(), &cfg).unwrap(), &EstimateOptions::default()).unwrap();
        let cfg2 = GenConfig { rng_seed: 11, ..cfg };
        let second = estimate_model(&generate(&first.params, &cfg2).unwrap(), &EstimateOptions::default()).unwrap();
        assert_eq!(second.params.num_taps(), first.params.num_taps());
        for (a, b) in first.params.taps.iter().zip(&second.params.taps) {
            assert!((a.chain.p00 - b.chain.p00).abs() <= 0.03);
            assert!((a.chain.p11 - b.chain.p11).abs() <= 0.03);
        }
        assert!((first.params.amplitude_dist.mu - second.params.amplitude_dist.mu).abs() <= 0.05);
        assert!((first.params.amplitude_dist.sigma - second.params.amplitude_dist.sigma).abs() <= 0.05);
    }
}
