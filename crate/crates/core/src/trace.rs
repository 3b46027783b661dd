//! Channel impulse response traces: complex tap gains over time.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Generator tag prefix used by every generator in this crate.
pub const SYNTHETIC_TAG_PREFIX: &str = "railtdl-";

/// Tag for traces whose origin is unknown (ingested measurements).
pub const EXTERNAL_TAG: &str = "external";

#[derive(Debug, Clone, PartialEq)]
pub struct TraceMeta {
    pub carrier_hz: f64,
    pub delay_resolution_s: f64,
    /// Doppler bound used to synthesize the trace; 0 when unknown.
    pub max_doppler_hz: f64,
    pub rng_seed: u64,
    pub generator: String,
}

impl TraceMeta {
    /// True for traces produced by this crate's noiseless generators.
    pub fn is_synthetic(&self) -> bool {
        self.generator.starts_with(SYNTHETIC_TAG_PREFIX)
    }
}

/// `n_snapshots x L` matrix of complex tap gains, stored row-major.
///
/// A dead tap is stored as exact complex zero.
#[derive(Debug, Clone, PartialEq)]
pub struct CirTrace {
    n_snapshots: usize,
    gains: Vec<Complex64>,
    pub delays_s: Vec<f64>,
    pub snapshot_interval_s: f64,
    pub meta: TraceMeta,
}

impl CirTrace {
    pub fn new(
        gains: Vec<Complex64>,
        delays_s: Vec<f64>,
        snapshot_interval_s: f64,
        meta: TraceMeta,
    ) -> Result<Self> {
        let l = delays_s.len();
        if l == 0 {
            return Err(Error::domain("trace needs at least one tap"));
        }
        if gains.is_empty() || !gains.len().is_multiple_of(l) {
            return Err(Error::domain(format!(
                "{} gains do not form whole rows of {l} taps",
                gains.len()
            )));
        }
        if delays_s.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::domain("trace delays must be strictly increasing"));
        }
        Ok(Self {
            n_snapshots: gains.len() / l,
            gains,
            delays_s,
            snapshot_interval_s,
            meta,
        })
    }

    pub fn n_snapshots(&self) -> usize {
        self.n_snapshots
    }

    pub fn n_taps(&self) -> usize {
        self.delays_s.len()
    }

    pub fn gains(&self) -> &[Complex64] {
        &self.gains
    }

    pub fn row(&self, t: usize) -> &[Complex64] {
        let l = self.n_taps();
        &self.gains[t * l..(t + 1) * l]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[Complex64]> {
        self.gains.chunks_exact(self.n_taps())
    }

    pub fn gain(&self, t: usize, tap: usize) -> Complex64 {
        self.gains[t * self.n_taps() + tap]
    }

    pub fn column(&self, tap: usize) -> impl Iterator<Item = Complex64> + '_ {
        self.rows().map(move |r| r[tap])
    }

    /// Fraction of snapshots where the tap is not exactly zero.
    pub fn occupancy(&self, tap: usize) -> f64 {
        let alive = self.column(tap).filter(|g| *g != Complex64::new(0.0, 0.0)).count();
        alive as f64 / self.n_snapshots as f64
    }

    /// Keeps the given tap columns, in the given order.
    pub fn select_taps(&self, taps: &[usize]) -> Result<Self> {
        let gains = self
            .rows()
            .flat_map(|r| taps.iter().map(move |&l| r[l]))
            .collect();
        let delays = taps.iter().map(|&l| self.delays_s[l]).collect();
        Self::new(gains, delays, self.snapshot_interval_s, self.meta.clone())
    }
}
