//! Bit-exact checkpoint files.
//!
//! Layout: a magic line `BOOLGANCKPT1 <header_bytes>` followed by a plain-text
//! manifest (iteration, config hash, rng states, one line per tensor) and the
//! raw little-endian float payload. The text header keeps files inspectable
//! with a hex viewer; the length prefix tells a reader exactly where the
//! binary starts.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::{Dtype, Scalar, Tensor};

const MAGIC: &str = "BOOLGANCKPT1";

/// Dtype-erased tensor storage so one file can mix f32 and f64 entries.
#[derive(Debug, Clone, PartialEq)]
pub enum TensorBuf {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl TensorBuf {
    pub fn dtype(&self) -> Dtype {
        match self {
            TensorBuf::F32(_) => Dtype::F32,
            TensorBuf::F64(_) => Dtype::F64,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            TensorBuf::F32(t) => t.shape(),
            TensorBuf::F64(t) => t.shape(),
        }
    }

    pub fn byte_len(&self) -> usize {
        match self {
            TensorBuf::F32(t) => t.len() * 4,
            TensorBuf::F64(t) => t.len() * 8,
        }
    }

    pub fn as_f32(&self, name: &str) -> Result<&Tensor<f32>> {
        match self {
            TensorBuf::F32(t) => Ok(t),
            TensorBuf::F64(_) => Err(Error::CheckpointDtype {
                name: name.to_string(),
                expected: "f32",
                actual: "f64".to_string(),
            }),
        }
    }

    pub fn as_f64(&self, name: &str) -> Result<&Tensor<f64>> {
        match self {
            TensorBuf::F64(t) => Ok(t),
            TensorBuf::F32(_) => Err(Error::CheckpointDtype {
                name: name.to_string(),
                expected: "f64",
                actual: "f32".to_string(),
            }),
        }
    }
}

impl From<Tensor<f32>> for TensorBuf {
    fn from(t: Tensor<f32>) -> Self {
        TensorBuf::F32(t)
    }
}

impl From<Tensor<f64>> for TensorBuf {
    fn from(t: Tensor<f64>) -> Self {
        TensorBuf::F64(t)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub buf: TensorBuf,
}

impl NamedTensor {
    pub fn new(name: impl Into<String>, buf: impl Into<TensorBuf>) -> Self {
        NamedTensor {
            name: name.into(),
            buf: buf.into(),
        }
    }
}

/// Everything a run needs to resume or regenerate: parameters, optimizer
/// accumulators, rng states, iteration counter, and a hash of the config the
/// run was launched with.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub iteration: u64,
    pub config_hash: u64,
    pub rng_states: Vec<(String, RngStream)>,
    pub params: Vec<NamedTensor>,
    pub opt_state: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn param(&self, name: &str) -> Option<&NamedTensor> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn rng_state(&self, name: &str) -> Option<RngStream> {
        self.rng_states
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, s)| *s)
    }

    /// Serializes to `path`. Roundtrips bitwise; rejects non-finite data and
    /// names that would break the line-oriented manifest.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        fs::write(path, bytes).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut header = String::new();
        header.push_str(&format!("iteration {}\n", self.iteration));
        header.push_str(&format!("config_hash {}\n", self.config_hash));
        for (name, stream) in &self.rng_states {
            check_name(name)?;
            let (seed, stream_id, counter) = stream.state();
            header.push_str(&format!("rng {name} {seed} {stream_id} {counter}\n"));
        }
        let mut payload: Vec<u8> = Vec::new();
        for (section, tensors) in [("param", &self.params), ("opt", &self.opt_state)] {
            for nt in tensors.iter() {
                check_name(&nt.name)?;
                let dims: Vec<String> = nt.buf.shape().iter().map(|d| d.to_string()).collect();
                header.push_str(&format!(
                    "tensor {section} {} {} {} {}\n",
                    nt.name,
                    nt.buf.dtype().name(),
                    nt.buf.shape().len(),
                    dims.join(" ")
                ));
                match &nt.buf {
                    TensorBuf::F32(t) => {
                        t.check_finite(&format!("checkpoint save of {}", nt.name))?;
                        for &v in t.data() {
                            v.write_le(&mut payload);
                        }
                    }
                    TensorBuf::F64(t) => {
                        t.check_finite(&format!("checkpoint save of {}", nt.name))?;
                        for &v in t.data() {
                            v.write_le(&mut payload);
                        }
                    }
                }
            }
        }
        header.push_str("end\n");

        let mut out = Vec::with_capacity(header.len() + payload.len() + 32);
        out.extend_from_slice(format!("{MAGIC} {}\n", header.len()).as_bytes());
        out.extend_from_slice(header.as_bytes());
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let bytes = fs::read(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&bytes, path)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
        let corrupt = |detail: &str| Error::CheckpointCorrupt {
            path: path.to_path_buf(),
            detail: detail.to_string(),
        };

        let newline = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| corrupt("missing magic line"))?;
        let magic_line =
            std::str::from_utf8(&bytes[..newline]).map_err(|_| corrupt("magic line not UTF-8"))?;
        let mut parts = magic_line.split_whitespace();
        if parts.next() != Some(MAGIC) {
            return Err(corrupt("bad magic"));
        }
        let header_len: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| corrupt("bad header length"))?;
        let header_start = newline + 1;
        if bytes.len() < header_start + header_len {
            return Err(corrupt("truncated header"));
        }
        let header = std::str::from_utf8(&bytes[header_start..header_start + header_len])
            .map_err(|_| corrupt("header not UTF-8"))?;
        let payload = &bytes[header_start + header_len..];

        let mut iteration = 0u64;
        let mut config_hash = 0u64;
        let mut rng_states = Vec::new();
        // (section, name, dtype, shape)
        let mut manifest: Vec<(String, String, Dtype, Vec<usize>)> = Vec::new();
        let mut saw_end = false;
        for line in header.lines() {
            let fields: Vec<&str> = line.split_whitespace().collect();
            match fields.as_slice() {
                ["iteration", v] => {
                    iteration = v.parse().map_err(|_| corrupt("bad iteration"))?;
                }
                ["config_hash", v] => {
                    config_hash = v.parse().map_err(|_| corrupt("bad config_hash"))?;
                }
                ["rng", name, seed, stream_id, counter] => {
                    let parse = |s: &str| -> Result<u64> {
                        s.parse().map_err(|_| corrupt("bad rng state"))
                    };
                    rng_states.push((
                        name.to_string(),
                        RngStream::from_state(parse(seed)?, parse(stream_id)?, parse(counter)?),
                    ));
                }
                ["tensor", section, name, dtype, ndim, dims @ ..] => {
                    let dtype = Dtype::parse(dtype)
                        .ok_or_else(|| corrupt(&format!("unknown dtype {dtype}")))?;
                    let ndim: usize = ndim.parse().map_err(|_| corrupt("bad rank"))?;
                    if dims.len() != ndim {
                        return Err(corrupt(&format!("rank/dims mismatch for {name}")));
                    }
                    let shape: Vec<usize> = dims
                        .iter()
                        .map(|d| d.parse().map_err(|_| corrupt("bad extent")))
                        .collect::<Result<_>>()?;
                    manifest.push((section.to_string(), name.to_string(), dtype, shape));
                }
                ["end"] => {
                    saw_end = true;
                }
                [] => {}
                _ => return Err(corrupt(&format!("unrecognized manifest line: {line}"))),
            }
        }
        if !saw_end {
            return Err(corrupt("manifest missing end marker"));
        }

        let expected: usize = manifest
            .iter()
            .map(|(_, _, dtype, shape)| shape.iter().product::<usize>() * dtype.byte_width())
            .sum();
        if payload.len() != expected {
            return Err(Error::CheckpointPayloadLength {
                path: path.to_path_buf(),
                expected,
                actual: payload.len(),
            });
        }

        let mut params = Vec::new();
        let mut opt_state = Vec::new();
        let mut offset = 0usize;
        for (section, name, dtype, shape) in manifest {
            let count: usize = shape.iter().product();
            let width = dtype.byte_width();
            let slice = &payload[offset..offset + count * width];
            offset += count * width;
            let buf = match dtype {
                Dtype::F32 => TensorBuf::F32(read_tensor::<f32>(&shape, slice)),
                Dtype::F64 => TensorBuf::F64(read_tensor::<f64>(&shape, slice)),
            };
            let nt = NamedTensor { name, buf };
            match section.as_str() {
                "param" => params.push(nt),
                "opt" => opt_state.push(nt),
                other => return Err(corrupt(&format!("unknown section {other}"))),
            }
        }

        Ok(Checkpoint {
            iteration,
            config_hash,
            rng_states,
            params,
            opt_state,
        })
    }
}

fn check_name(name: &str) -> Result<()> {
    if name.is_empty() || name.chars().any(|c| c.is_whitespace()) {
        return Err(Error::InvalidArgument {
            context: format!("checkpoint name {name:?} must be non-empty without whitespace"),
        });
    }
    Ok(())
}

fn read_tensor<T: Scalar>(shape: &[usize], bytes: &[u8]) -> Tensor<T> {
    let width = T::DTYPE.byte_width();
    let mut t = Tensor::<T>::zeros(shape);
    for (i, chunk) in bytes.chunks_exact(width).enumerate() {
        t.data_mut()[i] = T::read_le(chunk);
    }
    t
}
