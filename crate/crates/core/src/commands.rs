//! Command implementations behind the `railtdl` binary.
//!
//! Each command has a pure `render_*` step that turns inputs into output
//! bytes, and a `cmd_*` wrapper that reads files, writes outputs atomically
//! and records a [`RunManifest`]. Manifest verification re-runs the render
//! step and compares digests.
//!
//! Exit codes: 0 success, 2 input or parse error, 3 validation or semantic error.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baseline::{generate_stationary, StationaryTdlProfile};
use crate::config::{GenerateConfig, ModelKind, ResolvedConfig};
use crate::error::Error;
use crate::estimator::{estimate_model, EstimateOptions, EstimatedModel, TapSelection};
use crate::generator::generate;
use crate::io::{decode_trace, encode_trace, write_atomic, TraceFormat};
use crate::manifest::{manifest_path_for, relative_path, resolve_path, sha256_hex, FileDigest, RunManifest};
use crate::params::max_doppler;
use crate::stats::{
    distribution_distance, empirical_pdf, ks_two_sample, mean_std, normalize_by_mean, rms_ds_series, NoiseFloor,
    StatsOptions, DEFAULT_THRESHOLD_DB,
};
use crate::trace::CirTrace;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_SEMANTIC: i32 = 3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommandError {
    pub code: i32,
    pub message: String,
}

impl CommandError {
    pub fn semantic(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_SEMANTIC,
            message: message.into(),
        }
    }
}

impl fmt::Display for CommandError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CommandError {}

impl From<Error> for CommandError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Parse(_) | Error::CorruptTrace { .. } | Error::Io(_) => EXIT_INPUT,
            Error::Validation(_) | Error::Domain(_) => EXIT_SEMANTIC,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

type CmdResult<T> = std::result::Result<T, CommandError>;

fn with_path(path: &Path) -> impl Fn(Error) -> CommandError + '_ {
    move |e| {
        let mut c = CommandError::from(e);
        c.message = format!("{}: {}", path.display(), c.message);
        c
    }
}

fn to_table<T: Serialize>(value: &T) -> CmdResult<toml::Table> {
    toml::Table::try_from(value).map_err(|e| CommandError::semantic(e.to_string()))
}

fn from_table<T: for<'de> Deserialize<'de>>(table: &toml::Table) -> CmdResult<T> {
    table
        .clone()
        .try_into()
        .map_err(|e: toml::de::Error| CommandError::from(Error::Parse(e.to_string())))
}

fn digest_file(path: &Path, manifest_dir: &Path) -> CmdResult<FileDigest> {
    let bytes = std::fs::read(path).map_err(|e| with_path(path)(e.into()))?;
    Ok(FileDigest {
        path: relative_path(path, manifest_dir),
        sha256: sha256_hex(&bytes),
    })
}

fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn write_manifest(path: &Path, manifest: &RunManifest) -> CmdResult<()> {
    write_atomic(path, manifest.to_toml_string()?.as_bytes()).map_err(with_path(path))
}

// ---------------------------------------------------------------- generate

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GenerateEcho {
    format: TraceFormat,
    run: GenerateConfig,
}

pub fn render_generate(resolved: &ResolvedConfig, format: TraceFormat) -> CmdResult<(CirTrace, Vec<u8>)> {
    let trace = match resolved.config.model {
        ModelKind::Markov => generate(&resolved.params, &resolved.gen_config())?,
        ModelKind::Baseline => {
            let mut profile = StationaryTdlProfile::from_params(&resolved.params);
            profile.doppler_model = resolved.config.baseline_doppler;
            profile.carrier_hz = resolved.config.carrier_hz;
            generate_stationary(
                &profile,
                resolved.params.max_doppler_hz,
                resolved.config.n_snapshots as usize,
                resolved.config.seed,
            )?
        }
    };
    let bytes = encode_trace(&trace, format)?;
    Ok((trace, bytes))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerateOutcome {
    pub trace: CirTrace,
    pub trace_path: PathBuf,
    pub manifest_path: PathBuf,
    pub sha256: String,
}

pub fn cmd_generate(config_path: &Path, out: &Path, seed: Option<u64>, format: TraceFormat) -> CmdResult<GenerateOutcome> {
    let mut cfg = GenerateConfig::load(config_path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let resolved = cfg.resolve(&parent_dir(config_path))?;
    let (trace, bytes) = render_generate(&resolved, format)?;
    write_atomic(out, &bytes).map_err(with_path(out))?;

    let manifest_path = manifest_path_for(out);
    let dir = parent_dir(&manifest_path);
    let echo = GenerateEcho {
        format,
        run: resolved.config.clone(),
    };
    let mut m = RunManifest::new("generate", vec![resolved.config.seed], to_table(&echo)?);
    m.inputs.push(digest_file(config_path, &dir)?);
    m.outputs.push(FileDigest {
        path: relative_path(out, &dir),
        sha256: sha256_hex(&bytes),
    });
    write_manifest(&manifest_path, &m)?;
    Ok(GenerateOutcome {
        trace,
        trace_path: out.to_path_buf(),
        manifest_path,
        sha256: sha256_hex(&bytes),
    })
}

// ---------------------------------------------------------------- estimate

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateSettings {
    pub threshold_db: f64,
    pub noise_floor: NoiseFloor,
    pub tap_selection: TapSelection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rms_window: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalization_window: Option<usize>,
    /// Receiver speed used to derive the Doppler bound; trace metadata when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speed_mps: Option<f64>,
}

impl Default for EstimateSettings {
    fn default() -> Self {
        Self {
            threshold_db: DEFAULT_THRESHOLD_DB,
            noise_floor: NoiseFloor::Auto,
            tap_selection: TapSelection::default(),
            rms_window: None,
            normalization_window: None,
            speed_mps: None,
        }
    }
}

impl EstimateSettings {
    fn options(&self, trace: &CirTrace) -> CmdResult<EstimateOptions> {
        let max_doppler_hz = match self.speed_mps {
            Some(v) => Some(max_doppler(v, trace.meta.carrier_hz)?),
            None => None,
        };
        Ok(EstimateOptions {
            threshold_db: self.threshold_db,
            noise_floor: self.noise_floor,
            resolution_s: None,
            rms_window: self.rms_window,
            normalization_window: self.normalization_window,
            max_doppler_hz,
            tap_selection: self.tap_selection,
        })
    }
}

/// Model file: the parameter schema plus a `[diagnostics]` table.
pub fn model_to_toml(model: &EstimatedModel) -> CmdResult<String> {
    let mut table = to_table(&model.params)?;
    table.insert("diagnostics".into(), toml::Value::Table(to_table(&model.diagnostics)?));
    toml::to_string(&table).map_err(|e| CommandError::semantic(e.to_string()))
}

pub fn render_estimate(trace_bytes: &[u8], settings: &EstimateSettings) -> CmdResult<(EstimatedModel, Vec<u8>)> {
    let trace = decode_trace(trace_bytes)?;
    let model = estimate_model(&trace, &settings.options(&trace)?)?;
    let text = model_to_toml(&model)?;
    Ok((model, text.into_bytes()))
}

pub fn cmd_estimate(trace_path: &Path, out: &Path, settings: &EstimateSettings) -> CmdResult<EstimatedModel> {
    let bytes = std::fs::read(trace_path).map_err(|e| with_path(trace_path)(e.into()))?;
    let (model, text) = render_estimate(&bytes, settings).map_err(|mut e| {
        e.message = format!("{}: {}", trace_path.display(), e.message);
        e
    })?;
    write_atomic(out, &text).map_err(with_path(out))?;

    let manifest_path = manifest_path_for(out);
    let dir = parent_dir(&manifest_path);
    let mut m = RunManifest::new("estimate", Vec::new(), to_table(settings)?);
    m.inputs.push(FileDigest {
        path: relative_path(trace_path, &dir),
        sha256: sha256_hex(&bytes),
    });
    m.outputs.push(FileDigest {
        path: relative_path(out, &dir),
        sha256: sha256_hex(&text),
    });
    write_manifest(&manifest_path, &m)?;
    Ok(model)
}

// ---------------------------------------------------------------- compare

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareSettings {
    pub bins: usize,
    pub threshold_db: f64,
    /// Snapshots per APDP window of the RMS delay spread series.
    pub window: usize,
}

impl Default for CompareSettings {
    fn default() -> Self {
        Self {
            bins: 50,
            threshold_db: DEFAULT_THRESHOLD_DB,
            window: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub label: String,
    pub n_snapshots: usize,
    pub n_taps: usize,
    pub occupancy: Vec<f64>,
    pub rms_ds_windows: usize,
    pub rms_ds_undefined: usize,
    pub rms_ds_mean_s: f64,
    pub rms_ds_std_s: f64,
    /// PDF of the RMS delay spread normalized by its mean.
    pub histogram_file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairDistance {
    pub a: String,
    pub b: String,
    pub ks_stat: f64,
    pub mean_diff_s: f64,
    pub std_diff_s: f64,
    /// KS statistic between the mean-normalized series.
    pub ks_normalized: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub traces: Vec<TraceSummary>,
    pub pairs: Vec<PairDistance>,
}

impl CompareReport {
    pub fn pair(&self, a: &str, b: &str) -> Option<&PairDistance> {
        self.pairs
            .iter()
            .find(|p| (p.a == a && p.b == b) || (p.a == b && p.b == a))
    }

    pub fn trace(&self, label: &str) -> Option<&TraceSummary> {
        self.traces.iter().find(|t| t.label == label)
    }
}

pub const COMPARE_REPORT_FILE: &str = "compare_report.toml";
pub const COMPARE_MANIFEST_FILE: &str = "manifest.toml";

/// Labels from file stems, suffixed with the position when they collide.
pub fn trace_labels(paths: &[PathBuf]) -> Vec<String> {
    let stems: Vec<String> = paths
        .iter()
        .map(|p| p.file_stem().unwrap_or_default().to_string_lossy().into_owned())
        .collect();
    stems
        .iter()
        .enumerate()
        .map(|(i, s)| {
            if stems.iter().filter(|t| *t == s).count() > 1 {
                format!("{s}-{i}")
            } else {
                s.clone()
            }
        })
        .collect()
}

/// Report plus output files keyed by file name.
pub fn render_compare(
    traces: &[(String, CirTrace)],
    settings: &CompareSettings,
) -> CmdResult<(CompareReport, BTreeMap<String, Vec<u8>>)> {
    if traces.len() < 2 {
        return Err(CommandError::semantic("compare needs at least 2 traces"));
    }
    let grid = &traces[0].1.delays_s;
    for (label, t) in &traces[1..] {
        if &t.delays_s != grid {
            return Err(CommandError::semantic(format!(
                "mismatched delay grids: `{label}` differs from `{}`",
                traces[0].0
            )));
        }
    }

    let mut files = BTreeMap::new();
    let mut summaries = Vec::new();
    let mut series = Vec::new();
    for (label, t) in traces {
        let opts = StatsOptions {
            threshold_db: settings.threshold_db,
            noise_floor: NoiseFloor::Auto,
        };
        let raw = rms_ds_series(t, settings.window.clamp(1, t.n_snapshots()), &opts)?;
        let windows = raw.len();
        let values: Vec<f64> = raw.into_iter().flatten().collect();
        if values.is_empty() {
            return Err(CommandError::semantic(format!("`{label}` has no window with a defined RMS delay spread")));
        }
        let (mean, std) = mean_std(&values);
        let normalized = if mean > 0.0 { normalize_by_mean(&values) } else { values.clone() };
        let pdf = empirical_pdf(&normalized, settings.bins)?;
        let histogram_file = format!("{label}.rms_pdf.csv");
        files.insert(histogram_file.clone(), pdf.to_delimited_text().into_bytes());
        summaries.push(TraceSummary {
            label: label.clone(),
            n_snapshots: t.n_snapshots(),
            n_taps: t.n_taps(),
            occupancy: (0..t.n_taps()).map(|l| t.occupancy(l)).collect(),
            rms_ds_windows: windows,
            rms_ds_undefined: windows - values.len(),
            rms_ds_mean_s: mean,
            rms_ds_std_s: std,
            histogram_file,
        });
        series.push((values, normalized));
    }

    let mut pairs = Vec::new();
    for i in 0..traces.len() {
        for j in i + 1..traces.len() {
            let d = distribution_distance(&series[i].0, &series[j].0)?;
            pairs.push(PairDistance {
                a: traces[i].0.clone(),
                b: traces[j].0.clone(),
                ks_stat: d.ks_stat,
                mean_diff_s: d.mean_diff,
                std_diff_s: d.std_diff,
                ks_normalized: ks_two_sample(&series[i].1, &series[j].1),
            });
        }
    }
    let report = CompareReport {
        traces: summaries,
        pairs,
    };
    let text = toml::to_string(&report).map_err(|e| CommandError::semantic(e.to_string()))?;
    files.insert(COMPARE_REPORT_FILE.to_string(), text.into_bytes());
    Ok((report, files))
}

pub fn cmd_compare(paths: &[PathBuf], out_dir: &Path, settings: &CompareSettings) -> CmdResult<CompareReport> {
    if paths.len() < 2 {
        return Err(CommandError::semantic("compare needs at least 2 traces"));
    }
    let labels = trace_labels(paths);
    let mut inputs = Vec::new();
    let mut traces = Vec::new();
    for (p, label) in paths.iter().zip(labels) {
        let bytes = std::fs::read(p).map_err(|e| with_path(p)(e.into()))?;
        traces.push((label, decode_trace(&bytes).map_err(with_path(p))?));
        inputs.push((p, sha256_hex(&bytes)));
    }
    let (report, files) = render_compare(&traces, settings)?;

    std::fs::create_dir_all(out_dir).map_err(|e| with_path(out_dir)(e.into()))?;
    let mut m = RunManifest::new("compare", traces.iter().map(|(_, t)| t.meta.rng_seed).collect(), to_table(settings)?);
    for (p, sha256) in inputs {
        m.inputs.push(FileDigest {
            path: relative_path(p, out_dir),
            sha256,
        });
    }
    for (name, bytes) in &files {
        let path = out_dir.join(name);
        write_atomic(&path, bytes).map_err(with_path(&path))?;
        m.outputs.push(FileDigest {
            path: name.clone(),
            sha256: sha256_hex(bytes),
        });
    }
    write_manifest(&out_dir.join(COMPARE_MANIFEST_FILE), &m)?;
    Ok(report)
}

// ---------------------------------------------------------------- verify

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerifyReport {
    pub checked: usize,
    /// Human-readable description of each mismatch.
    pub mismatches: Vec<String>,
}

impl VerifyReport {
    pub fn is_ok(&self) -> bool {
        self.mismatches.is_empty()
    }

    fn check(&mut self, what: &str, recorded: &FileDigest, actual: Option<String>) {
        self.checked += 1;
        match actual {
            Some(d) if d == recorded.sha256 => {}
            Some(d) => self.mismatches.push(format!(
                "{what} {}: recorded {}, found {d}",
                recorded.path, recorded.sha256
            )),
            None => self.mismatches.push(format!("{what} {}: missing", recorded.path)),
        }
    }
}

/// Checks every recorded file digest, then re-runs the command from the
/// recorded configuration and inputs and checks the regenerated outputs.
pub fn verify_manifest(path: &Path) -> CmdResult<VerifyReport> {
    let m = RunManifest::load(path).map_err(with_path(path))?;
    let dir = parent_dir(path);
    let mut report = VerifyReport {
        checked: 0,
        mismatches: Vec::new(),
    };

    for f in m.inputs.iter().chain(&m.outputs) {
        let actual = std::fs::read(resolve_path(&f.path, &dir)).ok().map(|b| sha256_hex(&b));
        report.check("file", f, actual);
    }

    let read_input = |i: usize| -> CmdResult<Vec<u8>> {
        let f = m
            .inputs
            .get(i)
            .ok_or_else(|| CommandError::semantic("manifest lists too few inputs"))?;
        let p = resolve_path(&f.path, &dir);
        std::fs::read(&p).map_err(|e| with_path(&p)(e.into()))
    };

    let rederived: Vec<(String, Vec<u8>)> = match m.command.as_str() {
        "generate" => {
            let echo: GenerateEcho = from_table(&m.config)?;
            let resolved = echo.run.resolve(&dir)?;
            let (_, bytes) = render_generate(&resolved, echo.format)?;
            vec![(m.outputs.first().map(|o| o.path.clone()).unwrap_or_default(), bytes)]
        }
        "estimate" => {
            let settings: EstimateSettings = from_table(&m.config)?;
            let (_, bytes) = render_estimate(&read_input(0)?, &settings)?;
            vec![(m.outputs.first().map(|o| o.path.clone()).unwrap_or_default(), bytes)]
        }
        "compare" => {
            let settings: CompareSettings = from_table(&m.config)?;
            let paths: Vec<PathBuf> = m.inputs.iter().map(|f| PathBuf::from(&f.path)).collect();
            let labels = trace_labels(&paths);
            let traces = (0..m.inputs.len())
                .map(|i| Ok((labels[i].clone(), decode_trace(&read_input(i)?)?)))
                .collect::<CmdResult<Vec<_>>>()?;
            let (_, files) = render_compare(&traces, &settings)?;
            files.into_iter().collect()
        }
        other => return Err(CommandError::semantic(format!("unknown command `{other}` in manifest"))),
    };
    for (name, bytes) in rederived {
        match m.outputs.iter().find(|o| o.path == name) {
            Some(recorded) => report.check("re-derived", recorded, Some(sha256_hex(&bytes))),
            None => {
                report.checked += 1;
                report.mismatches.push(format!("re-derived output {name} is not listed"));
            }
        }
    }
    Ok(report)
}
