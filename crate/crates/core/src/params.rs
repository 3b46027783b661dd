//! Model parameter types, the 5G-R preset, and closed-form sizing rules.
//!
//! A [`TapParameterSet`] is the complete description of the non-stationary
//! tapped-delay-line model: per-tap delay, relative power and birth/death
//! chain, plus the amplitude, phase and Doppler distributions shared by all
//! taps and the inter-tap amplitude correlation matrix.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Violation};
use crate::markov::MarkovChain2;

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT_MPS: f64 = 299_792_458.0;

/// Carrier frequency of the 5G-R downlink test band, Hz.
pub const CARRIER_5GR_HZ: f64 = 2.16e9;

/// Delay resolution of a 10 MHz sounder, seconds.
pub const DELAY_RESOLUTION_5GR_S: f64 = 100e-9;

/// Train speed during the reference campaign (80 km/h), m/s.
pub const TRAIN_SPEED_5GR_MPS: f64 = 80.0 / 3.6;

/// Default birth/death decision interval for the preset: the 50 %
/// coherence time `0.423 / f_max` at `f_max = 160 Hz`.
pub const SNAPSHOT_INTERVAL_5GR_S: f64 = 0.002_643_75;

const GRID_TOLERANCE: f64 = 1e-6;
const MATRIX_TOLERANCE: f64 = 1e-12;

/// Lognormal law of the linear tap amplitude: `ln(alpha) ~ N(mu, sigma^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LognormalParams {
    pub mu: f64,
    pub sigma: f64,
}

impl LognormalParams {
    pub fn new(mu: f64, sigma: f64) -> Self {
        Self { mu, sigma }
    }

    /// `E[alpha^2] = exp(2 mu + 2 sigma^2)`.
    pub fn mean_square(&self) -> f64 {
        (2.0 * self.mu + 2.0 * self.sigma * self.sigma).exp()
    }
}

/// Closed interval of initial tap phases, radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseInterval {
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TapEntry {
    pub delay_s: f64,
    /// Mean power relative to the first tap, dB.
    pub mean_power_db: f64,
    pub chain: MarkovChain2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TapParameterSet {
    pub max_doppler_hz: f64,
    pub snapshot_interval_s: f64,
    pub delay_resolution_s: f64,
    pub amplitude_dist: LognormalParams,
    pub phase_dist: PhaseInterval,
    /// Row-major `L x L` tap amplitude correlation coefficients.
    pub correlation: Vec<Vec<f64>>,
    pub taps: Vec<TapEntry>,
}

impl TapParameterSet {
    pub fn num_taps(&self) -> usize {
        self.taps.len()
    }

    pub fn delays_s(&self) -> Vec<f64> {
        self.taps.iter().map(|t| t.delay_s).collect()
    }

    pub fn powers_db(&self) -> Vec<f64> {
        self.taps.iter().map(|t| t.mean_power_db).collect()
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::io::write_atomic(path.as_ref(), self.to_toml_string()?.as_bytes())
    }
}

/// The 5-tap 5G-R model: tap table and amplitude correlation matrix.
#[allow(clippy::approx_constant)]
pub fn preset_5gr() -> TapParameterSet {
    // (delay, power dB, p00, p11, p1)
    const ROWS: [(f64, f64, f64, f64, f64); 5] = [
        (0.0, 0.0, 0.0, 1.0, 1.0),
        (1e-7, -3.14, 0.9227, 0.9485, 0.9209),
        (2e-7, -17.02, 0.8403, 0.8571, 0.7670),
        (3e-7, -26.31, 0.7668, 0.6975, 0.5676),
        (4e-7, -39.35, 0.7978, 0.8875, 0.4647),
    ];
    let taps = ROWS
        .iter()
        .map(|&(delay_s, mean_power_db, p00, p11, p1)| TapEntry {
            delay_s,
            mean_power_db,
            chain: MarkovChain2::new(p00, p11, p1),
        })
        .collect();

    let correlation = vec![
        vec![1.0, 0.5009, 0.7733, 0.2320, 0.0525],
        vec![0.5009, 1.0, 0.6170, 0.5997, 0.1714],
        vec![0.7733, 0.6170, 1.0, 0.4369, 0.0513],
        vec![0.2320, 0.5997, 0.4369, 1.0, 0.6132],
        vec![0.0525, 0.1714, 0.0513, 0.6132, 1.0],
    ];

    TapParameterSet {
        max_doppler_hz: 160.0,
        snapshot_interval_s: SNAPSHOT_INTERVAL_5GR_S,
        delay_resolution_s: DELAY_RESOLUTION_5GR_S,
        amplitude_dist: LognormalParams::new(-3.66, 1.08),
        phase_dist: PhaseInterval { lo: 0.0, hi: PI },
        correlation,
        taps,
    }
}

/// Outcome of [`validate`]: empty means the parameter set is usable.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_ok() {
            Ok(())
        } else {
            Err(Error::Validation(self.violations))
        }
    }

    fn push(&mut self, field: impl Into<String>, message: impl Into<String>) {
        self.violations.push(Violation::new(field, message));
    }
}

/// Checks every structural invariant of a parameter set.
///
/// Violations are reported, never raised. The printed `p1` column is not
/// required to match the stationary occupancy of the printed chain.
pub fn validate(params: &TapParameterSet) -> ValidationReport {
    let mut r = ValidationReport::default();
    let l = params.taps.len();

    if !(params.snapshot_interval_s > 0.0 && params.snapshot_interval_s.is_finite()) {
        r.push("snapshot_interval_s", "must be positive and finite");
    }
    let res = params.delay_resolution_s;
    let res_ok = res > 0.0 && res.is_finite();
    if !res_ok {
        r.push("delay_resolution_s", "must be positive and finite");
    }
    if !(params.max_doppler_hz >= 0.0 && params.max_doppler_hz.is_finite()) {
        r.push("max_doppler_hz", "must be nonnegative and finite");
    }

    let ln = &params.amplitude_dist;
    if !ln.mu.is_finite() {
        r.push("amplitude_dist.mu", "must be finite");
    }
    if !(ln.sigma > 0.0 && ln.sigma.is_finite()) {
        r.push("amplitude_dist.sigma", "must be positive and finite");
    }

    let ph = &params.phase_dist;
    if !(ph.lo.is_finite() && ph.hi.is_finite() && ph.lo <= ph.hi) {
        r.push("phase_dist", "bounds must be finite with lo <= hi");
    }

    if l == 0 {
        r.push("taps", "at least one tap is required");
    }
    for (i, tap) in params.taps.iter().enumerate() {
        let d = tap.delay_s;
        if !(d >= 0.0 && d.is_finite()) {
            r.push(format!("taps[{i}].delay_s"), "must be nonnegative and finite");
        } else if res_ok && !is_grid_multiple(d, res) {
            r.push(
                format!("taps[{i}].delay_s"),
                "not an integer multiple of delay_resolution_s",
            );
        }
        if !tap.mean_power_db.is_finite() {
            r.push(format!("taps[{i}].mean_power_db"), "must be finite");
        } else if tap.mean_power_db > 0.0 {
            r.push(
                format!("taps[{i}].mean_power_db"),
                "must be <= 0 dB relative to the first tap",
            );
        }
        for (name, p) in [
            ("p00", tap.chain.p00),
            ("p11", tap.chain.p11),
            ("p1_init", tap.chain.p1_init),
        ] {
            if !(0.0..=1.0).contains(&p) {
                r.push(format!("taps[{i}].chain.{name}"), "probability outside [0, 1]");
            }
        }
    }
    if params.taps.windows(2).any(|w| w[1].delay_s <= w[0].delay_s) {
        r.push("taps", "delays not increasing");
    }
    if let Some(first) = params.taps.first() {
        if first.mean_power_db.abs() > 1e-9 {
            r.push("taps[0].mean_power_db", "first tap must be the 0 dB anchor");
        }
    }

    validate_correlation(&params.correlation, l, &mut r);
    r
}

fn validate_correlation(c: &[Vec<f64>], l: usize, r: &mut ValidationReport) {
    if c.len() != l || c.iter().any(|row| row.len() != l) {
        r.push("correlation", format!("must be a {l}x{l} matrix"));
        return;
    }
    let mut symmetric = true;
    for i in 0..l {
        if (c[i][i] - 1.0).abs() > MATRIX_TOLERANCE {
            r.push(format!("correlation[{i}][{i}]"), "diagonal must be 1");
        }
        for j in 0..l {
            let v = c[i][j];
            if !(-1.0..=1.0).contains(&v) {
                r.push(format!("correlation[{i}][{j}]"), "coefficient outside [-1, 1]");
            }
            if j > i && (v - c[j][i]).abs() > MATRIX_TOLERANCE {
                symmetric = false;
            }
        }
    }
    if !symmetric {
        r.push("correlation", "correlation not symmetric");
    }
}

fn is_grid_multiple(value: f64, step: f64) -> bool {
    let k = value / step;
    (k - k.round()).abs() <= GRID_TOLERANCE * k.abs().max(1.0)
}

/// Rounds `value / step` to the nearest integer when within floating tolerance.
pub(crate) fn grid_index(value: f64, step: f64) -> Option<usize> {
    if value < 0.0 || !is_grid_multiple(value, step) {
        return None;
    }
    Some((value / step).round() as usize)
}

/// Number of taps needed to cover `max_rms_ds_s` at resolution `resolution_s`:
/// `ceil(max / res) + 1`.
pub fn tap_count(max_rms_ds_s: f64, resolution_s: f64) -> Result<usize> {
    if !(max_rms_ds_s > 0.0 && max_rms_ds_s.is_finite()) {
        return Err(Error::domain("max RMS delay spread must be positive"));
    }
    if !(resolution_s > 0.0 && resolution_s.is_finite()) {
        return Err(Error::domain("delay resolution must be positive"));
    }
    let ratio = max_rms_ds_s / resolution_s;
    // 7e-7 / 1e-7 evaluates to 7.000000000000001; treat such values as exact.
    let nearest = ratio.round();
    let ceil = if (ratio - nearest).abs() <= 1e-9 * nearest.max(1.0) {
        nearest
    } else {
        ratio.ceil()
    };
    Ok(ceil as usize + 1)
}

/// Maximum Doppler shift `v f_c / c` (incidence angle zero).
pub fn max_doppler(speed_mps: f64, carrier_hz: f64) -> Result<f64> {
    if !(speed_mps >= 0.0 && speed_mps.is_finite()) {
        return Err(Error::domain("speed must be nonnegative"));
    }
    if !(carrier_hz > 0.0 && carrier_hz.is_finite()) {
        return Err(Error::domain("carrier frequency must be positive"));
    }
    Ok(speed_mps * carrier_hz / SPEED_OF_LIGHT_MPS)
}
