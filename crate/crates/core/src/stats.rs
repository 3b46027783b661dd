//! Channel statistics: APDPs, RMS delay spread, lognormal fits, tap
//! correlation, empirical PDFs and two-sample distribution distances.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::LognormalParams;
use crate::trace::CirTrace;

/// Default censoring margin above the noise floor, dB.
pub const DEFAULT_THRESHOLD_DB: f64 = 6.0;

/// How the background noise floor of a trace is obtained.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseFloor {
    /// No floor for this crate's noiseless synthetic traces, otherwise
    /// [`NoiseFloor::LastBinMedian`].
    #[default]
    Auto,
    /// Noiseless: only exact zeros are censored.
    Absent,
    /// Median power of the last delay bin over the whole trace.
    LastBinMedian,
    FixedDb(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StatsOptions {
    pub threshold_db: f64,
    pub noise_floor: NoiseFloor,
}

impl Default for StatsOptions {
    fn default() -> Self {
        Self {
            threshold_db: DEFAULT_THRESHOLD_DB,
            noise_floor: NoiseFloor::Auto,
        }
    }
}

pub fn to_db(linear: f64) -> f64 {
    10.0 * linear.log10()
}

pub fn from_db(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Noise floor of the trace in dB (absolute power); `-inf` when absent.
pub fn noise_floor_db(trace: &CirTrace, mode: NoiseFloor) -> f64 {
    match mode {
        NoiseFloor::Absent => f64::NEG_INFINITY,
        NoiseFloor::FixedDb(db) => db,
        NoiseFloor::Auto if trace.meta.is_synthetic() => f64::NEG_INFINITY,
        NoiseFloor::Auto | NoiseFloor::LastBinMedian => {
            let last = trace.n_taps() - 1;
            let mut p: Vec<f64> = trace.column(last).map(|g| g.norm_sqr()).collect();
            to_db(median(&mut p))
        }
    }
}

/// Power above which a sample counts as present.
pub fn detection_level(floor_db: f64, threshold_db: f64) -> f64 {
    if floor_db == f64::NEG_INFINITY {
        0.0
    } else {
        from_db(floor_db + threshold_db)
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Average power delay profile of one window.
#[derive(Debug, Clone, PartialEq)]
pub struct Apdp {
    /// Average power of the samples above the detection level, relative to
    /// the strongest tap; `None` when no sample survives.
    pub powers_db: Vec<Option<f64>>,
    /// Same averages before normalization, absolute linear power; 0 when censored.
    pub powers_linear: Vec<f64>,
    pub window_start: usize,
    pub window_len: usize,
    pub noise_floor_db: f64,
}

pub fn apdp(trace: &CirTrace, window_len: usize) -> Result<Vec<Apdp>> {
    apdp_with(trace, window_len, &StatsOptions::default())
}

/// APDPs over consecutive non-overlapping windows; a shorter final window is kept.
///
/// Only samples above `floor + threshold` enter the per-tap average.
pub fn apdp_with(trace: &CirTrace, window_len: usize, opts: &StatsOptions) -> Result<Vec<Apdp>> {
    let n = trace.n_snapshots();
    if window_len == 0 || window_len > n {
        return Err(Error::domain(format!("window length {window_len} outside 1..={n}")));
    }
    let floor = noise_floor_db(trace, opts.noise_floor);
    let level = detection_level(floor, opts.threshold_db);
    let l = trace.n_taps();

    let mut out = Vec::with_capacity(n.div_ceil(window_len));
    let mut start = 0;
    while start < n {
        let len = window_len.min(n - start);
        let mut sum = vec![0.0; l];
        let mut count = vec![0usize; l];
        for t in start..start + len {
            for (k, g) in trace.row(t).iter().enumerate() {
                let p = g.norm_sqr();
                if p > level {
                    sum[k] += p;
                    count[k] += 1;
                }
            }
        }
        let powers_linear: Vec<f64> = sum
            .iter()
            .zip(&count)
            .map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
            .collect();
        let peak = powers_linear.iter().cloned().fold(0.0, f64::max);
        let powers_db = powers_linear
            .iter()
            .zip(&count)
            .map(|(&p, &c)| (c > 0).then(|| to_db(p / peak)))
            .collect();
        out.push(Apdp {
            powers_db,
            powers_linear,
            window_start: start,
            window_len: len,
            noise_floor_db: floor,
        });
        start += len;
    }
    Ok(out)
}

/// RMS delay spread (second central moment of delay) of a linear PDP.
///
/// Bins at or below `floor + threshold` are censored. Returns `None` when
/// every bin is censored.
pub fn rms_delay_spread(pdp_linear: &[f64], delays_s: &[f64], floor_db: f64, threshold_db: f64) -> Result<Option<f64>> {
    if pdp_linear.len() != delays_s.len() || pdp_linear.is_empty() {
        return Err(Error::domain("PDP and delay vectors must be nonempty and of equal length"));
    }
    let level = detection_level(floor_db, threshold_db);
    let kept: Vec<(f64, f64)> = pdp_linear
        .iter()
        .zip(delays_s)
        .filter(|(&p, _)| p > level)
        .map(|(&p, &d)| (p, d))
        .collect();
    if kept.is_empty() {
        return Ok(None);
    }
    let total: f64 = kept.iter().map(|(p, _)| p).sum();
    let origin = kept[0].1;
    let mean = kept.iter().map(|(p, d)| p * (d - origin)).sum::<f64>() / total;
    let var = kept.iter().map(|(p, d)| p * (d - origin - mean).powi(2)).sum::<f64>() / total;
    Ok(Some(var.sqrt()))
}

/// RMS delay spread of every window's APDP. Undefined windows are `None`.
pub fn rms_ds_series(trace: &CirTrace, window_len: usize, opts: &StatsOptions) -> Result<Vec<Option<f64>>> {
    apdp_with(trace, window_len, opts)?
        .iter()
        .map(|a| rms_delay_spread(&a.powers_linear, &trace.delays_s, a.noise_floor_db, opts.threshold_db))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LognormalFit {
    pub params: LognormalParams,
    pub n: usize,
    /// All samples identical; `sigma` is reported as 0.
    pub degenerate: bool,
}

/// Maximum-likelihood lognormal fit: mean and population std of `ln x`.
pub fn fit_lognormal(samples: &[f64]) -> Result<LognormalFit> {
    if samples.len() < 2 {
        return Err(Error::domain("lognormal fit needs at least 2 samples"));
    }
    if let Some(i) = samples.iter().position(|&x| !(x > 0.0) || !x.is_finite()) {
        return Err(Error::domain(format!("sample {i} is not a positive finite number")));
    }
    let logs: Vec<f64> = samples.iter().map(|x| x.ln()).collect();
    let (mu, sigma) = mean_std(&logs);
    let first = logs[0];
    let degenerate = logs.iter().all(|&v| v == first);
    Ok(LognormalFit {
        params: LognormalParams::new(mu, if degenerate { 0.0 } else { sigma }),
        n: samples.len(),
        degenerate,
    })
}

/// Mean and population standard deviation.
pub fn mean_std(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
    (m, v.sqrt())
}

/// Divides every sample by the sample mean.
pub fn normalize_by_mean(x: &[f64]) -> Vec<f64> {
    let (m, _) = mean_std(x);
    x.iter().map(|v| v / m).collect()
}

/// Pearson correlation matrix of tap amplitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    /// `NaN` where undefined (too few common samples or zero variance).
    pub values: Vec<Vec<f64>>,
    /// Number of rows that contributed to each pair.
    pub pair_counts: Vec<Vec<usize>>,
}

impl CorrelationMatrix {
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let v = self.values[i][j];
        (!v.is_nan()).then_some(v)
    }

    pub fn is_defined(&self, i: usize) -> bool {
        !self.values[i][i].is_nan()
    }

    /// Undefined entries replaced: 1 on the diagonal, 0 elsewhere.
    pub fn filled(&self) -> Vec<Vec<f64>> {
        self.values
            .iter()
            .enumerate()
            .map(|(i, row)| {
                row.iter()
                    .enumerate()
                    .map(|(j, &v)| if i == j { 1.0 } else if v.is_nan() { 0.0 } else { v })
                    .collect()
            })
            .collect()
    }
}

/// Pearson coefficients over complete rows of an `n x L` matrix.
pub fn correlation_matrix(amps: &[Vec<f64>]) -> Result<CorrelationMatrix> {
    if amps.len() < 2 {
        return Err(Error::domain("correlation needs at least 2 rows"));
    }
    let l = amps[0].len();
    if amps.iter().any(|r| r.len() != l) {
        return Err(Error::domain("ragged amplitude matrix"));
    }
    let rows: Vec<Vec<Option<f64>>> = amps.iter().map(|r| r.iter().map(|&v| Some(v)).collect()).collect();
    Ok(pairwise_correlation(&rows, l))
}

/// Pearson coefficients where each pair uses only rows in which both cells are present.
pub fn pairwise_correlation(rows: &[Vec<Option<f64>>], l: usize) -> CorrelationMatrix {
    let mut values = vec![vec![f64::NAN; l]; l];
    let mut pair_counts = vec![vec![0usize; l]; l];
    for i in 0..l {
        for j in i..l {
            let pairs: Vec<(f64, f64)> = rows
                .iter()
                .filter_map(|r| Some((r[i]?, r[j]?)))
                .collect();
            pair_counts[i][j] = pairs.len();
            pair_counts[j][i] = pairs.len();
            let c = pearson(&pairs);
            let c = match c {
                Some(_) if i == j => 1.0,
                Some(v) => v,
                None => f64::NAN,
            };
            values[i][j] = c;
            values[j][i] = c;
        }
    }
    // a zero-variance tap has an undefined row and column
    for i in 0..l {
        if values[i][i].is_nan() {
            for j in 0..l {
                values[i][j] = f64::NAN;
                values[j][i] = f64::NAN;
            }
        }
    }
    CorrelationMatrix { values, pair_counts }
}

fn pearson(pairs: &[(f64, f64)]) -> Option<f64> {
    if pairs.len() < 2 {
        return None;
    }
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for &(x, y) in pairs {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Equal-width histogram density.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalPdf {
    pub bin_edges: Vec<f64>,
    pub densities: Vec<f64>,
    pub n_samples: usize,
}

impl EmpiricalPdf {
    pub fn integral(&self) -> f64 {
        self.densities
            .iter()
            .zip(self.bin_edges.windows(2))
            .map(|(d, e)| d * (e[1] - e[0]))
            .sum()
    }

    /// `bin_edge_lo,bin_edge_hi,density` rows under a header line.
    pub fn to_delimited_text(&self) -> String {
        let mut s = String::from("bin_edge_lo,bin_edge_hi,density\n");
        for (d, e) in self.densities.iter().zip(self.bin_edges.windows(2)) {
            let _ = writeln!(s, "{},{},{}", e[0], e[1], d);
        }
        s
    }
}

/// Histogram density over `[min, max]` in `n_bins` equal-width bins.
///
/// A constant sample set gets a single bin of width `|x|` (1 when `x = 0`)
/// centred on the value.
pub fn empirical_pdf(samples: &[f64], n_bins: usize) -> Result<EmpiricalPdf> {
    if samples.is_empty() || n_bins == 0 {
        return Err(Error::domain("empirical PDF needs samples and at least one bin"));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::domain("samples must be finite"));
    }
    let lo = samples.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let n = samples.len();
    if lo == hi {
        let half = if lo == 0.0 { 0.5 } else { 0.5 * lo.abs() };
        let edges = vec![lo - half, lo + half];
        return Ok(EmpiricalPdf {
            densities: vec![1.0 / (edges[1] - edges[0])],
            bin_edges: edges,
            n_samples: n,
        });
    }
    // ranges narrower than a few ulps cannot hold n_bins distinct edges
    let mut n_bins = n_bins;
    let (width, bin_edges) = loop {
        let width = (hi - lo) / n_bins as f64;
        let mut edges: Vec<f64> = (0..n_bins).map(|i| lo + i as f64 * width).collect();
        edges.push(hi);
        if n_bins == 1 || edges.windows(2).all(|w| w[1] > w[0]) {
            break (width, edges);
        }
        n_bins /= 2;
    };
    let mut counts = vec![0usize; n_bins];
    for &x in samples {
        let k = (((x - lo) / width) as usize).min(n_bins - 1);
        counts[k] += 1;
    }
    let densities = counts
        .iter()
        .zip(bin_edges.windows(2))
        .map(|(&c, e)| c as f64 / (n as f64 * (e[1] - e[0])))
        .collect();
    Ok(EmpiricalPdf {
        bin_edges,
        densities,
        n_samples: n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistributionDistance {
    /// Two-sample Kolmogorov-Smirnov statistic.
    pub ks_stat: f64,
    /// `mean(a) - mean(b)`.
    pub mean_diff: f64,
    /// `std(a) - std(b)`, population standard deviations.
    pub std_diff: f64,
}

pub fn distribution_distance(a: &[f64], b: &[f64]) -> Result<DistributionDistance> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::domain("both sample sets must be nonempty"));
    }
    let (ma, sa) = mean_std(a);
    let (mb, sb) = mean_std(b);
    Ok(DistributionDistance {
        ks_stat: ks_two_sample(a, b),
        mean_diff: ma - mb,
        std_diff: sa - sb,
    })
}

/// `sup |F_a - F_b|` over the pooled sample points.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// One-sample KS statistic of `samples` against a continuous CDF.
pub fn ks_one_sample(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut x = samples.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    x.iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = cdf(v);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{TraceMeta, EXTERNAL_TAG};
    use num_complex::Complex64;

    fn trace(rows: &[&[f64]], synthetic: bool) -> CirTrace {
        let l = rows[0].len();
        let gains = rows.iter().flat_map(|r| r.iter().map(|&a| Complex64::new(a, 0.0))).collect();
        CirTrace::new(
            gains,
            (0..l).map(|k| k as f64 * 1e-7).collect(),
            1e-3,
            TraceMeta {
                carrier_hz: 2.16e9,
                delay_resolution_s: 1e-7,
                max_doppler_hz: 0.0,
                rng_seed: 0,
                generator: if synthetic { "railtdl-test" } else { EXTERNAL_TAG }.into(),
            },
        )
        .unwrap()
    }

    #[test]
    fn apdp_single_constant_tap_is_zero_db() {
        let t = trace(&[&[0.5], &[0.5], &[0.5]], true);
        let a = apdp(&t, 3).unwrap();
        assert_eq!(a.len(), 1);
        assert_eq!(a[0].powers_db, vec![Some(0.0)]);
    }

    #[test]
    fn apdp_two_to_one_ratio() {
        let s = 0.5f64.sqrt();
        let t = trace(&[&[1.0, s], &[1.0, s]], true);
        let a = &apdp(&t, 2).unwrap()[0];
        assert_eq!(a.powers_db[0], Some(0.0));
        assert!((a.powers_db[1].unwrap() + 3.0103).abs() < 1e-4);
    }

    #[test]
    fn apdp_windows_and_censoring() {
        let t = trace(&[&[1.0, 0.0], &[1.0, 0.0], &[1.0, 0.3], &[1.0, 0.3], &[1.0, 0.0]], true);
        let a = apdp(&t, 2).unwrap();
        assert_eq!(a.len(), 3);
        assert_eq!(a[0].powers_db[1], None);
        assert_eq!((a[2].window_start, a[2].window_len), (4, 1));
        // dead snapshots do not dilute the average
        assert!((a[1].powers_linear[1] - 0.09).abs() < 1e-12);
        assert!(apdp(&t, 0).is_err());
        assert!(apdp(&t, 6).is_err());
    }

    #[test]
    fn noise_floor_from_last_bin() {
        let t = trace(&[&[1.0, 0.1], &[1.0, 0.2], &[1.0, 0.3]], false);
        assert!((noise_floor_db(&t, NoiseFloor::Auto) - to_db(0.04)).abs() < 1e-12);
        assert_eq!(noise_floor_db(&t, NoiseFloor::Absent), f64::NEG_INFINITY);
        let synth = trace(&[&[1.0, 0.1]], true);
        assert_eq!(noise_floor_db(&synth, NoiseFloor::Auto), f64::NEG_INFINITY);
        assert_eq!(noise_floor_db(&synth, NoiseFloor::FixedDb(-40.0)), -40.0);
    }

    #[test]
    fn rms_examples() {
        let ninf = f64::NEG_INFINITY;
        assert_eq!(rms_delay_spread(&[0.0, 2.0, 0.0], &[0.0, 1e-7, 2e-7], ninf, 6.0).unwrap(), Some(0.0));
        let two = rms_delay_spread(&[1.0, 1.0], &[0.0, 1e-7], ninf, 6.0).unwrap().unwrap();
        assert!((two - 50e-9).abs() < 1e-15);
        assert_eq!(rms_delay_spread(&[0.0, 0.0], &[0.0, 1e-7], ninf, 6.0).unwrap(), None);
        assert_eq!(rms_delay_spread(&[1e-3, 1e-3], &[0.0, 1e-7], -20.0, 6.0).unwrap(), None);
        assert!(rms_delay_spread(&[1.0], &[0.0, 1.0], ninf, 6.0).is_err());
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn rms_of_preset_profile() {
        // Second central moment over {0,-3.14,-17.02,-26.31,-39.35} dB
        // at {0..400} ns evaluates to 51.4812 ns.
        let p: Vec<f64> = [0.0, -3.14, -17.02, -26.31, -39.35].iter().map(|&d| from_db(d)).collect();
        let d: Vec<f64> = (0..5).map(|k| k as f64 * 1e-7).collect();
        let s = rms_delay_spread(&p, &d, f64::NEG_INFINITY, 6.0).unwrap().unwrap();
        assert!((s - 51.4812e-9).abs() < 1e-12, "{s}");
    }

    #[test]
    fn threshold_censors_weak_bins() {
        let p = [1.0, 1e-3];
        let d = [0.0, 1e-7];
        // floor -40 dB, level -34 dB: second bin (-30 dB) survives
        assert!(rms_delay_spread(&p, &d, -40.0, 6.0).unwrap().unwrap() > 0.0);
        // floor -30 dB, level -24 dB: second bin censored
        assert_eq!(rms_delay_spread(&p, &d, -30.0, 6.0).unwrap(), Some(0.0));
    }

    #[test]
    fn lognormal_fit_examples() {
        let e = std::f64::consts::E;
        let f = fit_lognormal(&[e, e.powi(3)]).unwrap();
        assert!((f.params.mu - 2.0).abs() < 1e-12);
        assert!((f.params.sigma - 1.0).abs() < 1e-12);
        assert!(!f.degenerate);

        let c = fit_lognormal(&[(-3.66f64).exp(); 10]).unwrap();
        assert!((c.params.mu + 3.66).abs() < 1e-12);
        assert_eq!(c.params.sigma, 0.0);
        assert!(c.degenerate);

        assert!(fit_lognormal(&[1.0, 0.0]).is_err());
        assert!(fit_lognormal(&[1.0, -2.0]).is_err());
        assert!(fit_lognormal(&[1.0]).is_err());
    }

    #[test]
    fn correlation_examples() {
        let rows: Vec<Vec<f64>> = (0..50).map(|i| {
            let x = (i as f64 * 0.37).sin() + 2.0;
            vec![x, 2.0 * x, (i as f64 * 1.3).cos()]
        }).collect();
        let c = correlation_matrix(&rows).unwrap();
        assert!((c.values[0][1] - 1.0).abs() < 1e-12);
        assert_eq!(c.values[0][0], 1.0);
        assert_eq!(c.values[1][0], c.values[0][1]);
        assert!(correlation_matrix(&rows[..1]).is_err());
    }

    #[test]
    fn zero_variance_column_is_flagged() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 3.0]).collect();
        let c = correlation_matrix(&rows).unwrap();
        assert!(c.is_defined(0));
        assert!(!c.is_defined(1));
        assert_eq!(c.get(0, 1), None);
        assert_eq!(c.filled(), vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
    }

    #[test]
    fn pairwise_uses_common_rows_only() {
        let rows = vec![
            vec![Some(1.0), Some(1.0)],
            vec![Some(2.0), None],
            vec![Some(3.0), Some(3.0)],
            vec![Some(4.0), Some(4.5)],
        ];
        let c = pairwise_correlation(&rows, 2);
        assert_eq!(c.pair_counts[0][1], 3);
        assert_eq!(c.pair_counts[0][0], 4);
        assert!(c.values[0][1] > 0.98);
    }

    #[test]
    fn constant_samples_fill_single_bin() {
        let pdf = empirical_pdf(&[2.0; 10], 5).unwrap();
        assert_eq!(pdf.densities.len(), 1);
        let w = pdf.bin_edges[1] - pdf.bin_edges[0];
        assert_eq!(pdf.densities[0], 1.0 / w);
        assert!((pdf.integral() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_histogram_is_flat() {
        use rand::Rng;
        let mut rng = crate::rng::stream_rng(1, 0);
        let x: Vec<f64> = (0..1_000_000).map(|_| rng.random::<f64>()).collect();
        let pdf = empirical_pdf(&x, 10).unwrap();
        assert!(pdf.densities.iter().all(|d| (d - 1.0).abs() < 0.01));
        assert!((pdf.integral() - 1.0).abs() < 1e-9);
        let text = pdf.to_delimited_text();
        assert_eq!(text.lines().count(), 11);
        assert!(text.starts_with("bin_edge_lo,bin_edge_hi,density"));
    }

    #[test]
    fn distance_examples() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let d = distribution_distance(&a, &a).unwrap();
        assert_eq!((d.ks_stat, d.mean_diff, d.std_diff), (0.0, 0.0, 0.0));
        let d = distribution_distance(&a, &[10.0, 11.0]).unwrap();
        assert_eq!(d.ks_stat, 1.0);
        assert_eq!(d.mean_diff, 2.5 - 10.5);
        assert!(distribution_distance(&a, &[]).is_err());
    }

    #[test]
    fn ks_handles_ties() {
        // F_a jumps to 1 at 1; F_b reaches 0.5 at 1 and 1 at 2
        assert_eq!(ks_two_sample(&[1.0, 1.0], &[1.0, 2.0]), 0.5);
    }

    #[test]
    fn one_sample_ks_against_uniform() {
        let x: Vec<f64> = (0..100).map(|i| (i as f64 + 0.5) / 100.0).collect();
        assert!((ks_one_sample(&x, |v| v) - 0.005).abs() < 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn rms_shift_and_scale(
                p in prop::collection::vec(0.01f64..10.0, 1..8),
                shift in 0.0f64..1e-6,
                k in 0.1f64..10.0,
            ) {
                let d: Vec<f64> = (0..p.len()).map(|i| i as f64 * 1e-7).collect();
                let base = rms_delay_spread(&p, &d, f64::NEG_INFINITY, 6.0).unwrap().unwrap();
                let shifted: Vec<f64> = d.iter().map(|x| x + shift).collect();
                let scaled: Vec<f64> = d.iter().map(|x| x * k).collect();
                let s1 = rms_delay_spread(&p, &shifted, f64::NEG_INFINITY, 6.0).unwrap().unwrap();
                let s2 = rms_delay_spread(&p, &scaled, f64::NEG_INFINITY, 6.0).unwrap().unwrap();
                prop_assert!((s1 - base).abs() <= 1e-12 * base.max(1e-9) + 1e-16);
                prop_assert!((s2 - k * base).abs() <= 1e-9 * (k * base).max(1e-9));
            }

            #[test]
            fn correlation_is_well_formed(rows in prop::collection::vec(prop::collection::vec(0.01f64..5.0, 3), 3..40)) {
                let c = correlation_matrix(&rows).unwrap();
                for i in 0..3 {
                    if !c.is_defined(i) { continue; }
                    prop_assert_eq!(c.values[i][i], 1.0);
                    for j in 0..3 {
                        let v = c.values[i][j];
                        if v.is_nan() { continue; }
                        prop_assert!((-1.0..=1.0).contains(&v));
                        prop_assert_eq!(v, c.values[j][i]);
                    }
                }
            }

            #[test]
            fn pdf_integrates_to_one(x in prop::collection::vec(-1e3f64..1e3, 1..200), bins in 1usize..64) {
                let pdf = empirical_pdf(&x, bins).unwrap();
                prop_assert!((pdf.integral() - 1.0).abs() < 1e-9);
                prop_assert!(pdf.bin_edges.windows(2).all(|w| w[1] > w[0]));
            }
        }
    }
}
