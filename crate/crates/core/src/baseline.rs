//! Stationary WSSUS tapped-delay-line baseline.
//!
//! Every tap is alive in every snapshot and fades as an independent
//! Rayleigh process built from a sum of equal-power sinusoids. The default
//! profile reuses the Markov model's delays and powers so that the two
//! generators differ only in the birth/death process.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::draw_doppler;
use crate::params::{TapParameterSet, CARRIER_5GR_HZ};
use crate::rng::stream_rng;
use crate::stats::from_db;
use crate::trace::{CirTrace, TraceMeta};

pub const BASELINE_GENERATOR_TAG: &str = "railtdl-baseline/1";

/// Sinusoids per tap.
const N_SINUSOIDS: usize = 64;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineDoppler {
    /// Sinusoid frequencies uniform on `[-f_max, f_max]`, fixed per trace.
    #[default]
    Uniform,
    /// Clarke/Jakes: `f_max cos(theta)` with `theta` uniform.
    ClassicSpectrum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StationaryTdlProfile {
    pub delays_s: Vec<f64>,
    pub powers_db: Vec<f64>,
    pub snapshot_interval_s: f64,
    pub delay_resolution_s: f64,
    #[serde(default)]
    pub doppler_model: BaselineDoppler,
    #[serde(default = "default_carrier")]
    pub carrier_hz: f64,
}

fn default_carrier() -> f64 {
    CARRIER_5GR_HZ
}

impl StationaryTdlProfile {
    /// Same delays, powers and timing as a Markov parameter set.
    pub fn from_params(params: &TapParameterSet) -> Self {
        Self {
            delays_s: params.delays_s(),
            powers_db: params.powers_db(),
            snapshot_interval_s: params.snapshot_interval_s,
            delay_resolution_s: params.delay_resolution_s,
            doppler_model: BaselineDoppler::default(),
            carrier_hz: CARRIER_5GR_HZ,
        }
    }

    /// Profile from normalized delays (unit RMS delay spread) scaled to `delay_spread_s`.
    pub fn from_normalized(
        normalized_delays: &[f64],
        powers_db: &[f64],
        delay_spread_s: f64,
        snapshot_interval_s: f64,
        delay_resolution_s: f64,
    ) -> Result<Self> {
        if !(delay_spread_s > 0.0) {
            return Err(Error::domain("delay spread must be positive"));
        }
        let p = Self {
            delays_s: normalized_delays.iter().map(|d| d * delay_spread_s).collect(),
            powers_db: powers_db.to_vec(),
            snapshot_interval_s,
            delay_resolution_s,
            doppler_model: BaselineDoppler::default(),
            carrier_hz: CARRIER_5GR_HZ,
        };
        p.check()?;
        Ok(p)
    }

    pub fn with_doppler(mut self, model: BaselineDoppler) -> Self {
        self.doppler_model = model;
        self
    }

    fn check(&self) -> Result<()> {
        if self.delays_s.is_empty() {
            return Err(Error::domain("profile has no taps"));
        }
        if self.delays_s.len() != self.powers_db.len() {
            return Err(Error::domain("delays and powers differ in length"));
        }
        if self.delays_s[0] < 0.0 || self.delays_s.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::domain("delays must be nonnegative and increasing"));
        }
        if !(self.snapshot_interval_s > 0.0) {
            return Err(Error::domain("snapshot interval must be positive"));
        }
        Ok(())
    }
}

struct SosTap {
    freqs: Vec<f64>,
    phases: Vec<f64>,
    amplitude: f64,
    /// Static gain when there is no Doppler.
    fixed: Option<Complex64>,
}

impl SosTap {
    fn new<R: Rng>(rng: &mut R, power: f64, f_max: f64, model: BaselineDoppler) -> Self {
        if f_max == 0.0 {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            return Self {
                freqs: Vec::new(),
                phases: Vec::new(),
                amplitude: 0.0,
                fixed: Some(Complex64::new(re, im) * (power / 2.0).sqrt()),
            };
        }
        let mut freqs = Vec::with_capacity(N_SINUSOIDS);
        let mut phases = Vec::with_capacity(N_SINUSOIDS);
        for _ in 0..N_SINUSOIDS {
            let f = match model {
                BaselineDoppler::Uniform => draw_doppler(rng, f_max),
                BaselineDoppler::ClassicSpectrum => f_max * rng.random_range(-PI..PI).cos(),
            };
            freqs.push(f);
            phases.push(rng.random_range(0.0..2.0 * PI));
        }
        Self {
            freqs,
            phases,
            amplitude: (power / N_SINUSOIDS as f64).sqrt(),
            fixed: None,
        }
    }

    fn at(&self, time_s: f64) -> Complex64 {
        if let Some(g) = self.fixed {
            return g;
        }
        let sum: Complex64 = self
            .freqs
            .iter()
            .zip(&self.phases)
            .map(|(f, p)| Complex64::from_polar(1.0, 2.0 * PI * f * time_s + p))
            .sum();
        sum * self.amplitude
    }
}

/// Stationary Rayleigh TDL trace. Tap `l` uses random stream `1 + l`.
pub fn generate_stationary(profile: &StationaryTdlProfile, f_max: f64, n: usize, seed: u64) -> Result<CirTrace> {
    profile.check()?;
    if n == 0 {
        return Err(Error::domain("n must be at least 1"));
    }
    if !(f_max >= 0.0) {
        return Err(Error::domain("f_max must be nonnegative"));
    }
    let taps: Vec<SosTap> = profile
        .powers_db
        .iter()
        .enumerate()
        .map(|(l, &db)| {
            let mut rng = stream_rng(seed, 1 + l as u64);
            SosTap::new(&mut rng, from_db(db), f_max, profile.doppler_model)
        })
        .collect();

    let dt = profile.snapshot_interval_s;
    let gains = (0..n)
        .flat_map(|t| {
            let time = t as f64 * dt;
            taps.iter().map(move |tap| tap.at(time))
        })
        .collect();
    CirTrace::new(
        gains,
        profile.delays_s.clone(),
        dt,
        TraceMeta {
            carrier_hz: profile.carrier_hz,
            delay_resolution_s: profile.delay_resolution_s,
            max_doppler_hz: f_max,
            rng_seed: seed,
            generator: BASELINE_GENERATOR_TAG.to_string(),
        },
    )
}
