//! Binary dataset and checkpoint files, CSV reports and raw vector dumps.
//!
//! All numbers are little-endian. Files are read whole, so a malformed
//! file never yields a partial result.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::dg::{DgConfig, Scheme};
use crate::nn::{Activation, AdamState, ConvLayer, Tensor, UNet, UNetConfig};
use crate::train::{Aggregate, Dataset, Metric, MetricsTable, Sample};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },
    #[error("configuration mismatch: {0}")]
    Config(String),
    #[error("CSV line {line}: {message}")]
    Csv { line: usize, message: String },
}

pub const DATASET_MAGIC: &[u8; 4] = b"DGDS";
pub const DATASET_VERSION: u32 = 1;
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DGCN";
pub const CHECKPOINT_VERSION: u32 = 1;
/// Bytes before the first sample of a dataset file.
pub const DATASET_HEADER_LEN: usize = 29;

fn read_file(path: &Path) -> Result<Vec<u8>, IoError> {
    std::fs::read(path).map_err(|source| IoError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    std::fs::write(path, bytes).map_err(|source| IoError::Io {
        path: path.display().to_string(),
        source,
    })
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn fail<T>(&self, message: impl Into<String>) -> Result<T, IoError> {
        Err(IoError::Format {
            offset: self.pos,
            message: message.into(),
        })
    }

    fn take(&mut self, len: usize, what: &str) -> Result<&'a [u8], IoError> {
        if self.bytes.len() - self.pos < len {
            return self.fail(format!("truncated {what}: need {len} bytes, {} left", self.bytes.len() - self.pos));
        }
        let s = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8, IoError> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32, IoError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64, IoError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self, what: &str) -> Result<f64, IoError> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, count: usize, what: &str) -> Result<Vec<f64>, IoError> {
        let raw = self.take(count.saturating_mul(8), what)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn magic(&mut self, expected: &[u8; 4]) -> Result<(), IoError> {
        let start = self.pos;
        let got = self.take(4, "magic")?;
        if got != expected {
            return Err(IoError::Format {
                offset: start,
                message: format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(got),
                    String::from_utf8_lossy(expected)
                ),
            });
        }
        Ok(())
    }

    fn version(&mut self, expected: u32) -> Result<(), IoError> {
        let start = self.pos;
        let v = self.u32("version")?;
        if v != expected {
            return Err(IoError::Format {
                offset: start,
                message: format!("unsupported version {v}, expected {expected}"),
            });
        }
        Ok(())
    }

    fn finish(&self) -> Result<(), IoError> {
        if self.pos != self.bytes.len() {
            return self.fail(format!("{} trailing bytes", self.bytes.len() - self.pos));
        }
        Ok(())
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize, what: &str) -> Result<(), IoError> {
    let v = u32::try_from(v).map_err(|_| IoError::Config(format!("{what} {v} does not fit in 32 bits")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_f64s(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

// ---------------------------------------------------------------------------
// datasets

pub fn encode_dataset(d: &Dataset) -> Result<Vec<u8>, IoError> {
    let dofs = 4 * d.n * d.n;
    let mut out = Vec::with_capacity(DATASET_HEADER_LEN + d.samples.len() * (24 * dofs + 64));
    out.extend_from_slice(DATASET_MAGIC);
    out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    put_u32(&mut out, d.n, "grid size")?;
    put_u32(&mut out, d.samples.len(), "sample count")?;
    out.push(d.config.scheme.epsilon() as i8 as u8);
    out.extend_from_slice(&d.config.sigma.to_le_bytes());
    out.extend_from_slice(&d.flags.to_le_bytes());
    for (i, s) in d.samples.iter().enumerate() {
        if s.input.len() != dofs || s.load.len() != dofs || s.label.len() != dofs {
            return Err(IoError::Config(format!("sample {i} does not match a {0}x{0} grid", d.n)));
        }
        put_u32(&mut out, s.expr.len(), "expression length")?;
        out.extend_from_slice(s.expr.as_bytes());
        put_f64s(&mut out, &s.input);
        put_f64s(&mut out, &s.load);
        put_f64s(&mut out, &s.label);
    }
    Ok(out)
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset, IoError> {
    let mut r = Reader::new(bytes);
    r.magic(DATASET_MAGIC)?;
    r.version(DATASET_VERSION)?;
    let n = r.u32("grid size")? as usize;
    if n == 0 || n > 1 << 14 {
        return r.fail(format!("implausible grid size {n}"));
    }
    let count = r.u32("sample count")? as usize;
    let eps_at = r.pos;
    let eps = r.u8("epsilon")? as i8;
    let scheme = Scheme::from_epsilon(eps as i32).map_err(|e| IoError::Format {
        offset: eps_at,
        message: e.to_string(),
    })?;
    let sigma_at = r.pos;
    let sigma = r.f64("sigma")?;
    let config = DgConfig::new(scheme, sigma).map_err(|e| IoError::Format {
        offset: sigma_at,
        message: e.to_string(),
    })?;
    let flags = r.u32("flags")?;
    let dofs = 4 * n * n;
    let mut samples = Vec::with_capacity(count.min(bytes.len() / (24 * dofs).max(1)));
    for i in 0..count {
        let len = r.u32("expression length")? as usize;
        let at = r.pos;
        let text = r.take(len, "expression")?;
        let expr = String::from_utf8(text.to_vec()).map_err(|_| IoError::Format {
            offset: at,
            message: format!("expression of sample {i} is not UTF-8"),
        })?;
        samples.push(Sample {
            expr,
            input: r.f64s(dofs, "input image")?,
            load: r.f64s(dofs, "load vector")?,
            label: r.f64s(dofs, "label")?,
        });
    }
    r.finish()?;
    Ok(Dataset { n, config, flags, samples })
}

pub fn write_dataset(path: impl AsRef<Path>, d: &Dataset) -> Result<(), IoError> {
    write_file(path.as_ref(), &encode_dataset(d)?)
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset, IoError> {
    decode_dataset(&read_file(path.as_ref())?)
}

// ---------------------------------------------------------------------------
// checkpoints

fn activation_code(a: Activation) -> u8 {
    match a {
        Activation::Identity => 0,
        Activation::Relu => 1,
        Activation::Tanh => 2,
    }
}

pub fn encode_checkpoint(net: &UNet, optimizer: Option<&AdamState>) -> Result<Vec<u8>, IoError> {
    let c = &net.config;
    let mut out = Vec::with_capacity(8 * net.parameter_count() * if optimizer.is_some() { 3 } else { 1 } + 64);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    put_u32(&mut out, c.channels, "channels")?;
    put_u32(&mut out, c.kernel, "kernel")?;
    put_u32(&mut out, c.input_side, "input side")?;
    put_u32(&mut out, c.depth, "depth")?;
    out.push(activation_code(c.activation));
    out.push(c.use_bias as u8);
    put_u32(&mut out, net.layers.len(), "layer count")?;
    for layer in &net.layers {
        for d in layer.weight.shape() {
            put_u32(&mut out, d, "tensor dimension")?;
        }
        put_f64s(&mut out, layer.weight.data());
        if let Some(b) = &layer.bias {
            put_f64s(&mut out, b);
        }
    }
    match optimizer {
        None => out.push(0),
        Some(state) => {
            out.push(1);
            out.extend_from_slice(&state.step.to_le_bytes());
            for (m, v) in state.m.iter().zip(&state.v) {
                put_f64s(&mut out, m);
                put_f64s(&mut out, v);
            }
        }
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(UNet, Option<AdamState>), IoError> {
    let mut r = Reader::new(bytes);
    r.magic(CHECKPOINT_MAGIC)?;
    r.version(CHECKPOINT_VERSION)?;
    let channels = r.u32("channels")? as usize;
    let kernel = r.u32("kernel")? as usize;
    let input_side = r.u32("input side")? as usize;
    let depth = r.u32("depth")? as usize;
    let act_at = r.pos;
    let activation = match r.u8("activation")? {
        0 => Activation::Identity,
        1 => Activation::Relu,
        2 => Activation::Tanh,
        other => {
            return Err(IoError::Format {
                offset: act_at,
                message: format!("unknown activation code {other}"),
            })
        }
    };
    let use_bias = r.u8("bias flag")? != 0;
    let config = UNetConfig {
        channels,
        kernel,
        input_side,
        depth,
        activation,
        use_bias,
    };
    if let Err(e) = config.validate() {
        return r.fail(e.to_string());
    }
    let count_at = r.pos;
    let count = r.u32("layer count")? as usize;
    if count != 4 * depth + 3 {
        return Err(IoError::Format {
            offset: count_at,
            message: format!("{count} layers for a depth-{depth} network, expected {}", 4 * depth + 3),
        });
    }
    let mut layers = Vec::with_capacity(count);
    for i in 0..count {
        let at = r.pos;
        let mut shape = [0usize; 4];
        for d in &mut shape {
            *d = r.u32("tensor dimension")? as usize;
        }
        let expected_in = if i == 0 {
            1
        } else if i >= 2 * depth + 2 && i < count - 1 && (i - 2 * depth - 2).is_multiple_of(2) {
            2 * channels
        } else {
            channels
        };
        let expected_out = if i == count - 1 { 1 } else { channels };
        if shape != [expected_out, expected_in, kernel, kernel] {
            return Err(IoError::Format {
                offset: at,
                message: format!("layer {i} has shape {shape:?}, expected {:?}", [expected_out, expected_in, kernel, kernel]),
            });
        }
        let weight = Tensor::from_vec(shape, r.f64s(shape.iter().product(), "weights")?).expect("length matches shape");
        let bias = if use_bias { Some(r.f64s(shape[0], "biases")?) } else { None };
        layers.push(ConvLayer { weight, bias });
    }
    let net = UNet { config, layers };
    let opt_at = r.pos;
    let optimizer = match r.u8("optimizer flag")? {
        0 => None,
        1 => {
            let step = r.u64("optimizer step")?;
            let mut m = Vec::new();
            let mut v = Vec::new();
            for p in net.params() {
                m.push(r.f64s(p.len(), "first moments")?);
                v.push(r.f64s(p.len(), "second moments")?);
            }
            Some(AdamState { step, m, v })
        }
        other => {
            return Err(IoError::Format {
                offset: opt_at,
                message: format!("unknown optimizer flag {other}"),
            })
        }
    };
    r.finish()?;
    Ok((net, optimizer))
}

pub fn save_checkpoint(path: impl AsRef<Path>, net: &UNet, optimizer: Option<&AdamState>) -> Result<(), IoError> {
    write_file(path.as_ref(), &encode_checkpoint(net, optimizer)?)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(UNet, Option<AdamState>), IoError> {
    decode_checkpoint(&read_file(path.as_ref())?)
}

/// Load a checkpoint and check that it accepts images of an `n x n` mesh.
pub fn load_checkpoint_for_grid(path: impl AsRef<Path>, n: usize) -> Result<UNet, IoError> {
    let (net, _) = load_checkpoint(path)?;
    if net.config.input_side != 2 * n {
        return Err(IoError::Config(format!(
            "checkpoint expects {0}x{0} images, the N={n} mesh gives {1}x{1}",
            net.config.input_side,
            2 * n
        )));
    }
    Ok(net)
}

// ---------------------------------------------------------------------------
// raw vectors

pub fn write_f64_dump(path: impl AsRef<Path>, values: &[f64]) -> Result<(), IoError> {
    let mut out = Vec::with_capacity(8 * values.len());
    put_f64s(&mut out, values);
    write_file(path.as_ref(), &out)
}

pub fn read_f64_dump(path: impl AsRef<Path>) -> Result<Vec<f64>, IoError> {
    let bytes = read_file(path.as_ref())?;
    if bytes.len() % 8 != 0 {
        return Err(IoError::Format {
            offset: bytes.len() - bytes.len() % 8,
            message: "length is not a multiple of 8".into(),
        });
    }
    Reader::new(&bytes).f64s(bytes.len() / 8, "values")
}

// ---------------------------------------------------------------------------
// CSV

/// Shortest round-trip text for a CSV cell; exponent form outside
/// `[1e-4, 1e6)`.
pub fn fmt_f64(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || !v.is_finite() || (1e-4..1e6).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

pub const METRICS_HEADER: &str = "sample,n,L2_vs_exact,H1_vs_exact,L2_vs_dg,H1_vs_dg";

/// Per-sample rows followed by `mean`, `std` and `median` rows.
pub fn metrics_csv(table: &MetricsTable) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for r in &table.rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.id,
            table.n,
            fmt_f64(r.l2_exact),
            fmt_f64(r.h1_exact),
            fmt_f64(r.l2_dg),
            fmt_f64(r.h1_dg)
        );
    }
    let aggs: Vec<Aggregate> = Metric::ALL.iter().filter_map(|&m| table.aggregate(m)).collect();
    if aggs.len() == 4 {
        for (name, pick) in [
            ("mean", (|a: &Aggregate| a.mean) as fn(&Aggregate) -> f64),
            ("std", |a| a.std),
            ("median", |a| a.median),
        ] {
            let _ = writeln!(
                s,
                "{name},{},{},{},{},{}",
                table.n,
                fmt_f64(pick(&aggs[0])),
                fmt_f64(pick(&aggs[1])),
                fmt_f64(pick(&aggs[2])),
                fmt_f64(pick(&aggs[3]))
            );
        }
    }
    s
}

/// Parse the per-sample rows of a metrics CSV; aggregate rows are skipped.
pub fn parse_metrics_csv(text: &str) -> Result<MetricsTable, IoError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == METRICS_HEADER => {}
        _ => {
            return Err(IoError::Csv {
                line: 1,
                message: format!("expected header {METRICS_HEADER:?}"),
            })
        }
    }
    let mut rows = Vec::new();
    let mut n = None;
    for (i, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let bad = |message: String| IoError::Csv { line: i + 1, message };
        if fields.len() != 6 {
            return Err(bad(format!("expected 6 fields, got {}", fields.len())));
        }
        let Ok(id) = fields[0].parse::<usize>() else {
            continue;
        };
        let grid: usize = fields[1].parse().map_err(|_| bad(format!("bad grid size {:?}", fields[1])))?;
        if n.is_some_and(|m| m != grid) {
            return Err(bad("mixed grid sizes".into()));
        }
        n = Some(grid);
        let mut v = [0.0; 4];
        for (k, slot) in v.iter_mut().enumerate() {
            *slot = fields[k + 2].parse().map_err(|_| bad(format!("bad number {:?}", fields[k + 2])))?;
        }
        rows.push(crate::train::SampleMetrics {
            id,
            l2_exact: v[0],
            h1_exact: v[1],
            l2_dg: v[2],
            h1_dg: v[3],
        });
    }
    Ok(MetricsTable {
        n: n.unwrap_or(0),
        rows,
    })
}

pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<(), IoError> {
    write_file(path.as_ref(), text.as_bytes())
}

pub fn read_text(path: impl AsRef<Path>) -> Result<String, IoError> {
    let bytes = read_file(path.as_ref())?;
    String::from_utf8(bytes).map_err(|e| IoError::Format {
        offset: e.utf8_error().valid_up_to(),
        message: "not UTF-8".into(),
    })
}

/// Two-column series such as a loss history.
pub fn series_csv(index_name: &str, value_name: &str, values: &[f64]) -> String {
    let mut s = format!("{index_name},{value_name}\n");
    for (i, v) in values.iter().enumerate() {
        let _ = writeln!(s, "{i},{}", fmt_f64(*v));
    }
    s
}
