//! First-order two-state birth/death chain.
//!
//! State 1 is "alive" (the multipath component exists), state 0 is "dead".
//! Only the self-transition probabilities are stored; `p01 = 1 - p00` and
//! `p10 = 1 - p11` follow by row-stochasticity.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream_rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarkovChain2 {
    pub p00: f64,
    pub p11: f64,
    /// Probability that the chain starts alive. Evolution uses `p00`/`p11` only.
    pub p1_init: f64,
}

impl MarkovChain2 {
    pub fn new(p00: f64, p11: f64, p1_init: f64) -> Self {
        Self { p00, p11, p1_init }
    }

    pub fn p01(&self) -> f64 {
        1.0 - self.p00
    }

    pub fn p10(&self) -> f64 {
        1.0 - self.p11
    }

    /// Long-run probability of state 1, `p01 / (p01 + p10)`.
    ///
    /// When both states are absorbing the path never leaves its start
    /// state, so the initial occupancy is returned.
    pub fn stationary(&self) -> f64 {
        let leave = self.p01() + self.p10();
        if leave > 0.0 {
            self.p01() / leave
        } else {
            self.p1_init
        }
    }

    pub(crate) fn initial_state<R: Rng>(&self, rng: &mut R) -> bool {
        rng.random::<f64>() < self.p1_init
    }

    pub(crate) fn next_state<R: Rng>(&self, alive: bool, rng: &mut R) -> bool {
        let u = rng.random::<f64>();
        if alive {
            u < self.p11
        } else {
            u >= self.p00
        }
    }

    /// Samples `n_steps` states with a private ChaCha8 stream for `seed`.
    pub fn sample_path(&self, n_steps: usize, step_interval_s: f64, seed: u64) -> Result<StatePath> {
        if n_steps == 0 {
            return Err(Error::domain("n_steps must be at least 1"));
        }
        let mut rng = stream_rng(seed, 0);
        let mut states = Vec::with_capacity(n_steps);
        let mut s = self.initial_state(&mut rng);
        states.push(s as u8);
        for _ in 1..n_steps {
            s = self.next_state(s, &mut rng);
            states.push(s as u8);
        }
        Ok(StatePath {
            states,
            step_interval_s,
        })
    }
}

/// A sampled switching function: one 0/1 state per decision interval.
#[derive(Debug, Clone, PartialEq)]
pub struct StatePath {
    pub states: Vec<u8>,
    pub step_interval_s: f64,
}

impl StatePath {
    pub fn new(states: Vec<u8>, step_interval_s: f64) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::domain("state path must be nonempty"));
        }
        if let Some(i) = states.iter().position(|&s| s > 1) {
            return Err(Error::domain(format!("state {i} is neither 0 nor 1")));
        }
        Ok(Self {
            states,
            step_interval_s,
        })
    }

    pub fn occupancy(&self) -> f64 {
        self.states.iter().filter(|&&s| s == 1).count() as f64 / self.states.len() as f64
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionCounts {
    pub n00: u64,
    pub n01: u64,
    pub n10: u64,
    pub n11: u64,
}

impl TransitionCounts {
    pub fn from_states(states: &[u8]) -> Self {
        let mut c = Self::default();
        for w in states.windows(2) {
            match (w[0], w[1]) {
                (0, 0) => c.n00 += 1,
                (0, _) => c.n01 += 1,
                (_, 0) => c.n10 += 1,
                _ => c.n11 += 1,
            }
        }
        c
    }

    pub fn total(&self) -> u64 {
        self.n00 + self.n01 + self.n10 + self.n11
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainEstimate {
    pub chain: MarkovChain2,
    pub counts: TransitionCounts,
    /// State 0 never occurred as a transition source; `p00` is the 1.0 convention.
    pub row0_undefined: bool,
    /// State 1 never occurred as a transition source; `p11` is the 1.0 convention.
    pub row1_undefined: bool,
}

/// Maximum-likelihood transition probabilities by transition counting.
///
/// `p1_init` of the result is the empirical occupancy of the whole path.
pub fn estimate_chain(path: &StatePath) -> Result<ChainEstimate> {
    if path.states.len() < 2 {
        return Err(Error::domain("need at least 2 states to count transitions"));
    }
    let counts = TransitionCounts::from_states(&path.states);
    let row = |stay: u64, leave: u64| {
        if stay + leave == 0 {
            (1.0, true)
        } else {
            (stay as f64 / (stay + leave) as f64, false)
        }
    };
    let (p00, row0_undefined) = row(counts.n00, counts.n01);
    let (p11, row1_undefined) = row(counts.n11, counts.n10);
    Ok(ChainEstimate {
        chain: MarkovChain2::new(p00, p11, path.occupancy()),
        counts,
        row0_undefined,
        row1_undefined,
    })
}
