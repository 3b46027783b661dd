//! Trace file formats and atomic file output.
//!
//! # Binary trace format, version 1
//!
//! All integers and floats are little-endian.
//!
//! | field                 | type              |
//! |-----------------------|-------------------|
//! | magic                 | `b"RAILTDL\0"`    |
//! | version               | `u32` (= 1)       |
//! | n_snapshots           | `u64`             |
//! | n_taps (L)            | `u32`             |
//! | delays                | `L x u64`, ps     |
//! | snapshot interval     | `u64`, ps         |
//! | carrier               | `f64`, Hz         |
//! | rng seed              | `u64`             |
//! | delay resolution      | `u64`, ps         |
//! | max Doppler           | `f64`, Hz         |
//! | generator tag length  | `u16`             |
//! | generator tag         | UTF-8 bytes       |
//! | gains                 | `n x L x (f64 re, f64 im)`, row-major |
//!
//! Dead taps are stored as `+0.0, +0.0`. The text format carries the same
//! header as `# key=value` comment lines followed by one comma-separated
//! row `re0,im0,re1,im1,...` per snapshot.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::{CirTrace, TraceMeta};

pub const TRACE_MAGIC: &[u8; 8] = b"RAILTDL\0";
pub const TRACE_VERSION: u32 = 1;
const TEXT_BANNER: &str = "# railtdl trace text v1";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum TraceFormat {
    #[default]
    Bin,
    Text,
}

fn to_ps(seconds: f64) -> Result<u64> {
    let ps = (seconds * 1e12).round();
    if !(ps >= 0.0 && ps < u64::MAX as f64) {
        return Err(Error::domain(format!("{seconds} s cannot be stored as picoseconds")));
    }
    Ok(ps as u64)
}

fn from_ps(ps: u64) -> f64 {
    ps as f64 / 1e12
}

pub fn encode_trace(trace: &CirTrace, format: TraceFormat) -> Result<Vec<u8>> {
    match format {
        TraceFormat::Bin => encode_binary(trace),
        TraceFormat::Text => encode_text(trace).map(String::into_bytes),
    }
}

pub fn encode_binary(trace: &CirTrace) -> Result<Vec<u8>> {
    let l = trace.n_taps();
    let tag = trace.meta.generator.as_bytes();
    let tag_len = u16::try_from(tag.len()).map_err(|_| Error::domain("generator tag too long"))?;
    let mut out = Vec::with_capacity(64 + 8 * l + tag.len() + 16 * trace.gains().len());
    out.extend_from_slice(TRACE_MAGIC);
    out.extend_from_slice(&TRACE_VERSION.to_le_bytes());
    out.extend_from_slice(&(trace.n_snapshots() as u64).to_le_bytes());
    out.extend_from_slice(&(l as u32).to_le_bytes());
    for &d in &trace.delays_s {
        out.extend_from_slice(&to_ps(d)?.to_le_bytes());
    }
    out.extend_from_slice(&to_ps(trace.snapshot_interval_s)?.to_le_bytes());
    out.extend_from_slice(&trace.meta.carrier_hz.to_le_bytes());
    out.extend_from_slice(&trace.meta.rng_seed.to_le_bytes());
    out.extend_from_slice(&to_ps(trace.meta.delay_resolution_s)?.to_le_bytes());
    out.extend_from_slice(&trace.meta.max_doppler_hz.to_le_bytes());
    out.extend_from_slice(&tag_len.to_le_bytes());
    out.extend_from_slice(tag);
    for g in trace.gains() {
        out.extend_from_slice(&g.re.to_le_bytes());
        out.extend_from_slice(&g.im.to_le_bytes());
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn corrupt(&self, message: impl Into<String>) -> Error {
        Error::CorruptTrace {
            offset: self.pos as u64,
            message: message.into(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(self.corrupt(format!("truncated while reading {what}")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn decode_binary(buf: &[u8]) -> Result<CirTrace> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8, "magic")? != TRACE_MAGIC {
        r.pos = 0;
        return Err(r.corrupt("bad magic"));
    }
    let version = r.u32("version")?;
    if version != TRACE_VERSION {
        r.pos -= 4;
        return Err(r.corrupt(format!("unsupported version {version}")));
    }
    let n = r.u64("n_snapshots")?;
    let l = r.u32("n_taps")? as usize;
    if n == 0 || l == 0 {
        r.pos -= 12;
        return Err(r.corrupt("empty trace shape"));
    }
    let delays_pos = r.pos;
    let mut delays_ps = Vec::with_capacity(l.min(1 << 16));
    for _ in 0..l {
        delays_ps.push(r.u64("delays")?);
    }
    if delays_ps.windows(2).any(|w| w[1] <= w[0]) {
        r.pos = delays_pos;
        return Err(r.corrupt("delays not strictly increasing"));
    }
    let interval = from_ps(r.u64("snapshot interval")?);
    let carrier_hz = r.f64("carrier")?;
    let rng_seed = r.u64("seed")?;
    let delay_resolution_s = from_ps(r.u64("delay resolution")?);
    let max_doppler_hz = r.f64("max doppler")?;
    let tag_len = r.u16("generator tag length")? as usize;
    let tag_pos = r.pos;
    let generator = std::str::from_utf8(r.take(tag_len, "generator tag")?)
        .map_err(|_| Error::CorruptTrace {
            offset: tag_pos as u64,
            message: "generator tag is not UTF-8".into(),
        })?
        .to_string();

    let cells = (n as usize)
        .checked_mul(l)
        .filter(|c| c.checked_mul(16) == Some(buf.len() - r.pos))
        .ok_or_else(|| {
            r.corrupt(format!(
                "payload is {} bytes, header declares {n} x {l} complex cells",
                buf.len() - r.pos
            ))
        })?;
    let mut gains = Vec::with_capacity(cells);
    for _ in 0..cells {
        let re = r.f64("gain")?;
        let im = r.f64("gain")?;
        gains.push(Complex64::new(re, im));
    }

    CirTrace::new(
        gains,
        delays_ps.into_iter().map(from_ps).collect(),
        interval,
        TraceMeta {
            carrier_hz,
            delay_resolution_s,
            max_doppler_hz,
            rng_seed,
            generator,
        },
    )
}

pub fn encode_text(trace: &CirTrace) -> Result<String> {
    let mut s = String::new();
    let delays = trace
        .delays_s
        .iter()
        .map(|&d| to_ps(d).map(|p| p.to_string()))
        .collect::<Result<Vec<_>>>()?
        .join(",");
    let m = &trace.meta;
    let _ = writeln!(s, "{TEXT_BANNER}");
    let _ = writeln!(s, "# n_snapshots={}", trace.n_snapshots());
    let _ = writeln!(s, "# n_taps={}", trace.n_taps());
    let _ = writeln!(s, "# delays_ps={delays}");
    let _ = writeln!(s, "# snapshot_interval_ps={}", to_ps(trace.snapshot_interval_s)?);
    let _ = writeln!(s, "# carrier_hz={:?}", m.carrier_hz);
    let _ = writeln!(s, "# rng_seed={}", m.rng_seed);
    let _ = writeln!(s, "# delay_resolution_ps={}", to_ps(m.delay_resolution_s)?);
    let _ = writeln!(s, "# max_doppler_hz={:?}", m.max_doppler_hz);
    let _ = writeln!(s, "# generator={}", m.generator);
    for row in trace.rows() {
        let cells: Vec<String> = row.iter().map(|g| format!("{:?},{:?}", g.re, g.im)).collect();
        let _ = writeln!(s, "{}", cells.join(","));
    }
    Ok(s)
}

pub fn decode_text(text: &str) -> Result<CirTrace> {
    let mut header = std::collections::HashMap::new();
    let mut gains = Vec::new();
    let mut offset = 0usize;
    let mut rows = 0usize;
    let corrupt = |offset: usize, message: String| Error::CorruptTrace {
        offset: offset as u64,
        message,
    };
    let mut n_taps = None;
    for line in text.split_inclusive('\n') {
        let content = line.trim_end_matches(['\n', '\r']);
        if let Some(rest) = content.strip_prefix("# ") {
            if let Some((k, v)) = rest.split_once('=') {
                header.insert(k.to_string(), v.to_string());
            }
        } else if !content.is_empty() {
            let l = match n_taps {
                Some(l) => l,
                None => {
                    let l: usize = header
                        .get("n_taps")
                        .and_then(|v| v.parse().ok())
                        .ok_or_else(|| corrupt(offset, "missing n_taps header".into()))?;
                    n_taps = Some(l);
                    l
                }
            };
            let vals = content
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| corrupt(offset, format!("bad number: {e}")))?;
            if vals.len() != 2 * l {
                return Err(corrupt(offset, format!("expected {} values, found {}", 2 * l, vals.len())));
            }
            gains.extend(vals.chunks_exact(2).map(|c| Complex64::new(c[0], c[1])));
            rows += 1;
        }
        offset += line.len();
    }

    let get = |k: &str| header.get(k).ok_or_else(|| corrupt(0, format!("missing {k} header")));
    let num = |k: &str| -> Result<u64> { get(k)?.parse().map_err(|_| corrupt(0, format!("bad {k}"))) };
    let float = |k: &str| -> Result<f64> { get(k)?.parse().map_err(|_| corrupt(0, format!("bad {k}"))) };
    let n = num("n_snapshots")? as usize;
    if rows != n {
        return Err(corrupt(offset, format!("header declares {n} snapshots, found {rows}")));
    }
    let delays = get("delays_ps")?
        .split(',')
        .map(|v| v.parse::<u64>().map(from_ps))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| corrupt(0, "bad delays_ps".into()))?;
    CirTrace::new(
        gains,
        delays,
        from_ps(num("snapshot_interval_ps")?),
        TraceMeta {
            carrier_hz: float("carrier_hz")?,
            delay_resolution_s: from_ps(num("delay_resolution_ps")?),
            max_doppler_hz: float("max_doppler_hz")?,
            rng_seed: num("rng_seed")?,
            generator: get("generator")?.clone(),
        },
    )
    .map_err(|e| corrupt(0, e.to_string()))
}

/// Decodes either format, chosen by the leading bytes.
pub fn decode_trace(buf: &[u8]) -> Result<CirTrace> {
    if buf.is_empty() {
        return Err(Error::CorruptTrace {
            offset: 0,
            message: "empty file".into(),
        });
    }
    if buf.starts_with(TEXT_BANNER.as_bytes()) {
        let text = std::str::from_utf8(buf).map_err(|e| Error::CorruptTrace {
            offset: e.valid_up_to() as u64,
            message: "invalid UTF-8".into(),
        })?;
        decode_text(text)
    } else {
        decode_binary(buf)
    }
}

pub fn read_trace(path: impl AsRef<Path>) -> Result<CirTrace> {
    decode_trace(&std::fs::read(path)?)
}

pub fn write_trace(path: impl AsRef<Path>, trace: &CirTrace, format: TraceFormat) -> Result<()> {
    write_atomic(path.as_ref(), &encode_trace(trace, format)?)
}

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}
