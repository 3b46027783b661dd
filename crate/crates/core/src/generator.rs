//! Non-stationary TDL synthesis.
//!
//! Each snapshot `t` and tap `l` produce
//!
//! ```text
//! g[t][l] = z_l(t) * alpha_l(t) * exp(j * (phi_l + 2 pi f_l * (t - t_birth) * dt))
//! ```
//!
//! where `z_l` follows the tap's two-state chain, `alpha` is a lognormal
//! amplitude correlated across taps through a Gaussian copula, `phi_l` is
//! drawn uniformly at each birth and `f_l` is uniform on `[-f_max, f_max]`.
//!
//! Random streams: stream 0 feeds amplitudes, stream `1 + l` feeds tap `l`'s
//! chain, phase and Doppler draws, so the output depends only on the seed.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{grid_index, validate, LognormalParams, TapParameterSet, CARRIER_5GR_HZ};
use crate::rng::stream_rng;
use crate::trace::{CirTrace, TraceMeta};

pub const MARKOV_GENERATOR_TAG: &str = "railtdl-markov/1";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DopplerMode {
    /// One Doppler draw per tap for the whole trace.
    PerTapConstant,
    /// A fresh Doppler draw at every birth, held for the life segment.
    #[default]
    RedrawnPerBirth,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AmplitudeMode {
    /// Every tap drawn from the shared lognormal, tap powers ignored.
    CommonLognormal,
    /// Lognormal shape rescaled so that `E[alpha^2 | alive]` equals the tap power.
    #[default]
    PowerScaledLognormal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub n_snapshots: usize,
    pub rng_seed: u64,
    pub doppler_mode: DopplerMode,
    pub amplitude_mode: AmplitudeMode,
    /// Recorded in trace metadata only.
    pub carrier_hz: f64,
}

impl GenConfig {
    pub fn new(n_snapshots: usize, rng_seed: u64) -> Self {
        Self {
            n_snapshots,
            rng_seed,
            doppler_mode: DopplerMode::default(),
            amplitude_mode: AmplitudeMode::default(),
            carrier_hz: CARRIER_5GR_HZ,
        }
    }

    pub fn with_amplitude_mode(mut self, mode: AmplitudeMode) -> Self {
        self.amplitude_mode = mode;
        self
    }

    pub fn with_doppler_mode(mut self, mode: DopplerMode) -> Self {
        self.doppler_mode = mode;
        self
    }
}

/// Gaussian-copula sampler for correlated lognormal tap amplitudes.
///
/// The target correlation applies to the log-amplitudes. A matrix that is
/// not positive semidefinite is repaired by clipping negative eigenvalues
/// to zero and rescaling back to a unit diagonal.
#[derive(Debug, Clone)]
pub struct CopulaSampler {
    factor: DMatrix<f64>,
    ln: LognormalParams,
    /// Correlation actually realized (equals the target unless repaired).
    pub effective_correlation: Vec<Vec<f64>>,
    pub repaired: bool,
}

impl CopulaSampler {
    pub fn new(corr: &[Vec<f64>], ln: LognormalParams) -> Result<Self> {
        let l = corr.len();
        if l == 0 || corr.iter().any(|r| r.len() != l) {
            return Err(Error::domain("correlation matrix must be square and nonempty"));
        }
        for (i, row) in corr.iter().enumerate() {
            if (row[i] - 1.0).abs() > 1e-12 {
                return Err(Error::domain(format!("correlation[{i}][{i}] is not 1")));
            }
        }
        let m = DMatrix::from_fn(l, l, |i, j| 0.5 * (corr[i][j] + corr[j][i]));
        let eig = SymmetricEigen::new(m);
        let repaired = eig.eigenvalues.iter().any(|&v| v < 0.0);
        let sqrt_vals = DVector::from_iterator(l, eig.eigenvalues.iter().map(|&v| v.max(0.0).sqrt()));
        // factor * factor^T reproduces the clipped matrix
        let mut factor = eig.eigenvectors.clone();
        for (j, s) in sqrt_vals.iter().enumerate() {
            factor.column_mut(j).scale_mut(*s);
        }
        for i in 0..l {
            let d = factor.row(i).norm_squared();
            if d <= 0.0 {
                return Err(Error::domain(format!("repaired correlation has zero variance on tap {i}")));
            }
            factor.row_mut(i).scale_mut(1.0 / d.sqrt());
        }
        let eff = &factor * factor.transpose();
        let effective_correlation = (0..l)
            .map(|i| (0..l).map(|j| if i == j { 1.0 } else { eff[(i, j)] }).collect())
            .collect();
        Ok(Self {
            factor,
            ln,
            effective_correlation,
            repaired,
        })
    }

    pub fn dim(&self) -> usize {
        self.factor.nrows()
    }

    /// Fills `out` with one vector of correlated lognormal amplitudes.
    pub fn draw<R: Rng>(&self, rng: &mut R, out: &mut [f64]) {
        let l = self.dim();
        let z: Vec<f64> = (0..l).map(|_| rng.sample(StandardNormal)).collect();
        for (i, o) in out.iter_mut().enumerate() {
            let x: f64 = (0..l).map(|k| self.factor[(i, k)] * z[k]).sum();
            *o = (self.ln.mu + self.ln.sigma * x).exp();
        }
    }
}

/// Draws `n` rows of `L` correlated lognormal amplitudes.
pub fn correlated_lognormal_draw(
    corr: &[Vec<f64>],
    ln: LognormalParams,
    n: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let sampler = CopulaSampler::new(corr, ln)?;
    let mut rng = stream_rng(seed, 0);
    Ok((0..n)
        .map(|_| {
            let mut row = vec![0.0; sampler.dim()];
            sampler.draw(&mut rng, &mut row);
            row
        })
        .collect())
}

pub(crate) fn draw_doppler<R: Rng>(rng: &mut R, max_doppler_hz: f64) -> f64 {
    if max_doppler_hz > 0.0 {
        rng.random_range(-max_doppler_hz..=max_doppler_hz)
    } else {
        0.0
    }
}

/// `n` independent Doppler draws on `[-f_max, f_max]`, same law the generator uses.
pub fn doppler_draws(max_doppler_hz: f64, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = stream_rng(seed, 0);
    (0..n).map(|_| draw_doppler(&mut rng, max_doppler_hz)).collect()
}

/// Hidden variables of one generated trace.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationLog {
    /// `states[l][t]` is the switching function of tap `l`.
    pub states: Vec<Vec<u8>>,
    /// Every Doppler value drawn for tap `l`, in draw order.
    pub doppler_draws: Vec<Vec<f64>>,
    pub effective_correlation: Vec<Vec<f64>>,
    pub correlation_repaired: bool,
}

pub fn generate(params: &TapParameterSet, cfg: &GenConfig) -> Result<CirTrace> {
    generate_with_log(params, cfg).map(|(t, _)| t)
}

struct TapState {
    alive: bool,
    phase0: f64,
    doppler_hz: f64,
    age: u64,
}

pub fn generate_with_log(params: &TapParameterSet, cfg: &GenConfig) -> Result<(CirTrace, GenerationLog)> {
    validate(params).into_result()?;
    if cfg.n_snapshots == 0 {
        return Err(Error::domain("n_snapshots must be at least 1"));
    }
    let l = params.num_taps();
    let n = cfg.n_snapshots;
    let dt = params.snapshot_interval_s;
    let f_max = params.max_doppler_hz;
    let phase = params.phase_dist;

    let copula = CopulaSampler::new(&params.correlation, params.amplitude_dist)?;
    let scale: Vec<f64> = match cfg.amplitude_mode {
        AmplitudeMode::CommonLognormal => vec![1.0; l],
        AmplitudeMode::PowerScaledLognormal => {
            let ms = params.amplitude_dist.mean_square();
            params
                .taps
                .iter()
                .map(|t| (10f64.powf(t.mean_power_db / 10.0) / ms).sqrt())
                .collect()
        }
    };

    let mut amp_rng = stream_rng(cfg.rng_seed, 0);
    let mut tap_rngs: Vec<_> = (0..l).map(|k| stream_rng(cfg.rng_seed, 1 + k as u64)).collect();

    let mut log = GenerationLog {
        states: vec![Vec::with_capacity(n); l],
        doppler_draws: vec![Vec::new(); l],
        effective_correlation: copula.effective_correlation.clone(),
        correlation_repaired: copula.repaired,
    };

    let mut taps: Vec<TapState> = Vec::with_capacity(l);
    for (k, rng) in tap_rngs.iter_mut().enumerate() {
        let mut st = TapState {
            alive: false,
            phase0: 0.0,
            doppler_hz: 0.0,
            age: 0,
        };
        if cfg.doppler_mode == DopplerMode::PerTapConstant {
            st.doppler_hz = draw_doppler(rng, f_max);
            log.doppler_draws[k].push(st.doppler_hz);
        }
        taps.push(st);
    }

    let mut gains = Vec::with_capacity(n * l);
    let mut amps = vec![0.0; l];
    for t in 0..n {
        for (k, (st, rng)) in taps.iter_mut().zip(tap_rngs.iter_mut()).enumerate() {
            let chain = &params.taps[k].chain;
            let next = if t == 0 {
                chain.initial_state(rng)
            } else {
                chain.next_state(st.alive, rng)
            };
            if next && !st.alive {
                st.phase0 = rng.random_range(phase.lo..=phase.hi);
                if cfg.doppler_mode == DopplerMode::RedrawnPerBirth {
                    st.doppler_hz = draw_doppler(rng, f_max);
                    log.doppler_draws[k].push(st.doppler_hz);
                }
                st.age = 0;
            } else if next {
                st.age += 1;
            }
            st.alive = next;
            log.states[k].push(next as u8);
        }

        copula.draw(&mut amp_rng, &mut amps);
        for (k, st) in taps.iter().enumerate() {
            if st.alive {
                let phi = st.phase0 + 2.0 * PI * st.doppler_hz * dt * st.age as f64;
                gains.push(Complex64::from_polar(amps[k] * scale[k], phi));
            } else {
                gains.push(Complex64::new(0.0, 0.0));
            }
        }
    }

    let meta = TraceMeta {
        carrier_hz: cfg.carrier_hz,
        delay_resolution_s: params.delay_resolution_s,
        max_doppler_hz: f_max,
        rng_seed: cfg.rng_seed,
        generator: MARKOV_GENERATOR_TAG.to_string(),
    };
    let trace = CirTrace::new(gains, params.delays_s(), dt, meta)?;
    Ok((trace, log))
}

/// Passes `input` through the time-varying channel.
///
/// `output[n] = sum_l g[snap(n)][l] * input[n - d_l]`, with `d_l` the tap delay
/// in samples and `snap(n) = floor(n / (fs * dt))` clamped to the last row.
pub fn apply_to_signal(trace: &CirTrace, input: &[Complex64], sample_rate_hz: f64) -> Result<Vec<Complex64>> {
    if input.is_empty() {
        return Err(Error::domain("input signal is empty"));
    }
    if !(sample_rate_hz > 0.0) {
        return Err(Error::domain("sample rate must be positive"));
    }
    let bins_per_res = trace.meta.delay_resolution_s * sample_rate_hz;
    match grid_index(bins_per_res, 1.0) {
        Some(k) if k > 0 => {}
        _ => {
            return Err(Error::domain(format!(
                "sample_rate * delay_resolution = {bins_per_res} is not a positive integer"
            )))
        }
    }
    let delays: Vec<usize> = trace
        .delays_s
        .iter()
        .enumerate()
        .map(|(l, &d)| {
            grid_index(d * sample_rate_hz, 1.0)
                .ok_or_else(|| Error::domain(format!("tap {l} delay is not a whole number of samples")))
        })
        .collect::<Result<_>>()?;

    let per_snapshot = sample_rate_hz * trace.snapshot_interval_s;
    let last = trace.n_snapshots() - 1;
    Ok((0..input.len())
        .map(|i| {
            let snap = ((i as f64 / per_snapshot).floor() as usize).min(last);
            let row = trace.row(snap);
            row.iter()
                .zip(&delays)
                .filter(|(_, &d)| d <= i)
                .map(|(g, &d)| g * input[i - d])
                .sum()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::markov::MarkovChain2;
    use crate::params::{preset_5gr, PhaseInterval, TapEntry};
    use crate::trace::EXTERNAL_TAG;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn ln_corr(rows: &[Vec<f64>], i: usize, j: usize) -> f64 {
        let x: Vec<f64> = rows.iter().map(|r| r[i].ln()).collect();
        let y: Vec<f64> = rows.iter().map(|r| r[j].ln()).collect();
        let n = x.len() as f64;
        let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
        let cov: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>();
        let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
        let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
        cov / (vx * vy).sqrt()
    }

    fn all_alive(l: usize, f_max: f64) -> TapParameterSet {
        let mut p = preset_5gr();
        p.taps.truncate(l);
        for t in &mut p.taps {
            t.chain = MarkovChain2::new(0.0, 1.0, 1.0);
        }
        p.correlation = (0..l).map(|i| (0..l).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
        p.max_doppler_hz = f_max;
        p
    }

    #[test]
    fn identity_copula_is_uncorrelated() {
        let eye: Vec<Vec<f64>> = (0..4).map(|i| (0..4).map(|j| (i == j) as u8 as f64).collect()).collect();
        let rows = correlated_lognormal_draw(&eye, LognormalParams::new(-3.66, 1.08), 100_000, 1).unwrap();
        for i in 0..4 {
            for j in i + 1..4 {
                assert!(ln_corr(&rows, i, j).abs() < 0.02);
            }
        }
    }

    #[test]
    fn copula_reproduces_target_correlation_and_marginals() {
        let p = preset_5gr();
        let rows = correlated_lognormal_draw(&p.correlation, p.amplitude_dist, 100_000, 2).unwrap();
        assert!((ln_corr(&rows, 0, 2) - 0.7733).abs() < 0.05);
        for col in 0..5 {
            let v: Vec<f64> = rows.iter().map(|r| r[col].ln()).collect();
            let m = v.iter().sum::<f64>() / v.len() as f64;
            let s = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt();
            assert!((m + 3.66).abs() < 0.02, "col {col} mean {m}");
            assert!((s - 1.08).abs() < 0.02, "col {col} std {s}");
        }
    }

    #[test]
    fn copula_rejects_bad_matrices() {
        let ln = LognormalParams::new(0.0, 1.0);
        assert!(CopulaSampler::new(&[vec![1.0, 0.2]], ln).is_err());
        assert!(CopulaSampler::new(&[vec![0.9, 0.0], vec![0.0, 1.0]], ln).is_err());
    }

    #[test]
    fn copula_repairs_indefinite_matrix() {
        let bad = vec![
            vec![1.0, 0.9, -0.9],
            vec![0.9, 1.0, 0.9],
            vec![-0.9, 0.9, 1.0],
        ];
        let s = CopulaSampler::new(&bad, LognormalParams::new(0.0, 1.0)).unwrap();
        assert!(s.repaired);
        let eff = DMatrix::from_fn(3, 3, |i, j| s.effective_correlation[i][j]);
        let min_eig = SymmetricEigen::new(eff).eigenvalues.min();
        assert!(min_eig > -1e-12);
        assert!(!CopulaSampler::new(&preset_5gr().correlation, LognormalParams::new(0.0, 1.0)).unwrap().repaired);
    }

    #[test]
    fn tap_one_is_always_alive() {
        let t = generate(&preset_5gr(), &GenConfig::new(5_000, 9)).unwrap();
        assert!(t.column(0).all(|g| g != c(0.0, 0.0)));
    }

    #[test]
    fn zero_doppler_freezes_phase() {
        let t = generate(&all_alive(3, 0.0), &GenConfig::new(200, 4)).unwrap();
        for l in 0..3 {
            let first = t.gain(0, l).arg();
            assert!(t.column(l).all(|g| (g.arg() - first).abs() < 1e-12));
        }
    }

    #[test]
    fn occupancy_tracks_stationary_probability() {
        let p = preset_5gr();
        let t = generate(&p, &GenConfig::new(100_000, 21)).unwrap();
        for (l, tap) in p.taps.iter().enumerate() {
            assert!(
                (t.occupancy(l) - tap.chain.stationary()).abs() < 0.02,
                "tap {l}: {} vs {}",
                t.occupancy(l),
                tap.chain.stationary()
            );
        }
    }

    #[test]
    fn dead_cells_match_log_and_are_exact_zero() {
        let (t, log) = generate_with_log(&preset_5gr(), &GenConfig::new(2_000, 5)).unwrap();
        for l in 0..5 {
            for (s, g) in log.states[l].iter().zip(t.column(l)) {
                assert_eq!(*s == 0, g.re.to_bits() == 0 && g.im.to_bits() == 0);
            }
        }
    }

    #[test]
    fn phase_increments_are_constant_within_life_segments() {
        let p = preset_5gr();
        let (t, log) = generate_with_log(&p, &GenConfig::new(3_000, 8)).unwrap();
        let bound = 2.0 * PI * p.max_doppler_hz * p.snapshot_interval_s;
        for l in 0..5 {
            let mut prev: Option<(Complex64, f64)> = None;
            for k in 0..t.n_snapshots() {
                let g = t.gain(k, l);
                if log.states[l][k] == 0 {
                    prev = None;
                    continue;
                }
                let (re, im) = (g.re / g.norm(), g.im / g.norm());
                let u = c(re, im);
                if let Some((pu, pinc)) = prev {
                    let inc = (u / pu).arg();
                    assert!(inc.abs() <= bound + 1e-9);
                    if !pinc.is_nan() {
                        assert!((inc - pinc).abs() < 1e-6, "tap {l} snapshot {k}");
                    }
                    prev = Some((u, inc));
                } else {
                    prev = Some((u, f64::NAN));
                }
            }
        }
    }

    #[test]
    fn doppler_draws_stay_in_bounds() {
        let (_, log) = generate_with_log(&preset_5gr(), &GenConfig::new(20_000, 2)).unwrap();
        assert!(log.doppler_draws.iter().flatten().all(|f| f.abs() <= 160.0));
        let (_, log) = generate_with_log(
            &preset_5gr(),
            &GenConfig::new(1_000, 2).with_doppler_mode(DopplerMode::PerTapConstant),
        )
        .unwrap();
        assert!(log.doppler_draws.iter().all(|d| d.len() == 1));
    }

    #[test]
    fn power_scaled_marginals_match_tap_powers() {
        let p = preset_5gr();
        let t = generate(&p, &GenConfig::new(100_000, 17)).unwrap();
        for (l, tap) in p.taps.iter().enumerate() {
            let alive: Vec<f64> = t.column(l).map(|g| g.norm_sqr()).filter(|&x| x > 0.0).collect();
            let db = 10.0 * (alive.iter().sum::<f64>() / alive.len() as f64).log10();
            assert!((db - tap.mean_power_db).abs() < 0.5, "tap {l}: {db}");
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let p = preset_5gr();
        let a = generate(&p, &GenConfig::new(1_000, 33)).unwrap();
        let b = generate(&p, &GenConfig::new(1_000, 33)).unwrap();
        let bits = |t: &CirTrace| t.gains().iter().flat_map(|g| [g.re.to_bits(), g.im.to_bits()]).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert_ne!(bits(&a), bits(&generate(&p, &GenConfig::new(1_000, 34)).unwrap()));
    }

    #[test]
    fn generate_rejects_bad_inputs() {
        assert!(generate(&preset_5gr(), &GenConfig::new(0, 1)).is_err());
        let mut p = preset_5gr();
        p.snapshot_interval_s = 0.0;
        assert!(matches!(generate(&p, &GenConfig::new(10, 1)), Err(Error::Validation(_))));
    }

    fn single_tap_trace(gain: Complex64, delay_s: f64) -> CirTrace {
        CirTrace::new(
            vec![gain],
            vec![delay_s],
            1.0,
            TraceMeta {
                carrier_hz: 1.0,
                delay_resolution_s: 1e-7,
                max_doppler_hz: 0.0,
                rng_seed: 0,
                generator: EXTERNAL_TAG.into(),
            },
        )
        .unwrap()
    }

    #[test]
    fn identity_channel() {
        let t = single_tap_trace(c(1.0, 0.0), 0.0);
        let x: Vec<Complex64> = (0..16).map(|i| c(i as f64, -(i as f64))).collect();
        assert_eq!(apply_to_signal(&t, &x, 10e6).unwrap(), x);
    }

    #[test]
    fn shifted_scaled_impulse() {
        let t = single_tap_trace(c(0.5, 0.0), 2e-7);
        let mut x = vec![c(0.0, 0.0); 8];
        x[0] = c(1.0, 0.0);
        let y = apply_to_signal(&t, &x, 10e6).unwrap();
        for (i, v) in y.iter().enumerate() {
            assert_eq!(*v, if i == 2 { c(0.5, 0.0) } else { c(0.0, 0.0) });
        }
    }

    #[test]
    fn off_grid_sample_rate_is_rejected() {
        let t = single_tap_trace(c(1.0, 0.0), 0.0);
        assert!(apply_to_signal(&t, &[c(1.0, 0.0)], 15e6).is_err());
        assert!(apply_to_signal(&t, &[], 10e6).is_err());
        let mut p = all_alive(2, 0.0);
        p.delay_resolution_s = 1e-7;
        let mut tr = generate(&p, &GenConfig::new(1, 0)).unwrap();
        tr.delays_s[1] = 1.5e-7;
        let err = apply_to_signal(&tr, &[c(1.0, 0.0)], 10e6).unwrap_err();
        assert!(err.to_string().contains("tap 1"));
    }

    #[test]
    fn preset_impulse_responses_span_at_most_five_bins() {
        let p = preset_5gr();
        let fs = 10e6;
        let tr = generate(&p, &GenConfig::new(400, 6)).unwrap();
        let per_snap = (fs * p.snapshot_interval_s) as usize;
        let spacing = 26_437; // one impulse per snapshot, > 4 bins apart
        assert!(spacing <= per_snap);
        let len = spacing * 20;
        let mut x = vec![c(0.0, 0.0); len];
        for k in (0..len).step_by(spacing) {
            x[k] = c(1.0, 0.0);
        }
        let y = apply_to_signal(&tr, &x, fs).unwrap();
        for k in (0..len).step_by(spacing) {
            let nz: Vec<usize> = (k..(k + spacing).min(len)).filter(|&i| y[i] != c(0.0, 0.0)).collect();
            assert!(!nz.is_empty());
            assert!(nz.last().unwrap() - nz[0] < 5);
        }
    }

    #[test]
    fn custom_phase_interval_respected() {
        let mut p = all_alive(2, 0.0);
        p.phase_dist = PhaseInterval { lo: 0.5, hi: 0.6 };
        p.taps.push(TapEntry {
            delay_s: 2e-7,
            mean_power_db: -3.0,
            chain: MarkovChain2::new(0.5, 0.5, 0.5),
        });
        p.correlation = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]];
        let t = generate(&p, &GenConfig::new(500, 3)).unwrap();
        for g in t.gains().iter().filter(|g| g.norm() > 0.0) {
            assert!(g.arg() >= 0.5 - 1e-12 && g.arg() <= 0.6 + 1e-12);
        }
    }
}
