//! LWDC weight containers.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! 0      4 bytes   magic "LWDC"
//! 4      u32       version (1)
//! 8      u64       header length in bytes
//! 16     header    UTF-8 text, see below
//!        padding   zero bytes up to the next multiple of 8
//!        payload   raw little-endian row-major tensor data
//! ```
//!
//! The header is a sequence of `\n`-terminated lines:
//!
//! ```text
//! arch <id>
//! dtype <f16|f32>
//! payload_bytes <n>
//! tensors <count>
//! tensor <name> <f16|f32> <d0,d1,...> <offset> <length>
//! ```
//!
//! with one `tensor` line per entry. Offsets are relative to the start of the
//! payload.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use half::f16;

use crate::decoders::DecoderModel;
use crate::error::{Error, Result};
use crate::params::ParamSource;
use crate::tensor::{Layout, Tensor};

pub const MAGIC: [u8; 4] = *b"LWDC";
pub const VERSION: u32 = 1;
const PREAMBLE: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DType {
    F16,
    F32,
}

impl DType {
    pub fn size(self) -> usize {
        match self {
            DType::F16 => 2,
            DType::F32 => 4,
        }
    }
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DType::F16 => "f16",
            DType::F32 => "f32",
        })
    }
}

impl FromStr for DType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f16" => Ok(DType::F16),
            "f32" => Ok(DType::F32),
            other => Err(Error::CorruptManifest(format!("unknown dtype `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub length: u64,
}

impl ManifestEntry {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// A parsed, validated container held in memory.
#[derive(Debug, Clone)]
pub struct WeightContainer {
    arch: String,
    dtype: DType,
    entries: Vec<ManifestEntry>,
    index: HashMap<String, usize>,
    payload: Vec<u8>,
}

/// Megabytes as reported in benchmark tables: bytes / 2^20.
pub fn size_mb(bytes: u64) -> f64 {
    bytes as f64 / (1u64 << 20) as f64
}

fn encode_values(name: &str, data: &[f32], dtype: DType, out: &mut Vec<u8>) -> Result<()> {
    match dtype {
        DType::F32 => {
            for v in data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        DType::F16 => {
            for &v in data {
                if !v.is_finite() || v.abs() > f16::MAX.to_f32() {
                    return Err(Error::UnrepresentableValue {
                        name: name.to_string(),
                        value: v,
                    });
                }
                out.extend_from_slice(&f16::from_f32(v).to_le_bytes());
            }
        }
    }
    Ok(())
}

fn build_manifest(dtype: DType, tensors: &[(String, &Tensor)]) -> Result<Vec<ManifestEntry>> {
    let mut offset = 0u64;
    let mut seen = HashSet::new();
    tensors
        .iter()
        .map(|(name, t)| {
            if name.is_empty() || name.chars().any(char::is_whitespace) {
                return Err(Error::CorruptManifest(format!("invalid tensor name {name:?}")));
            }
            if !seen.insert(name.as_str()) {
                return Err(Error::CorruptManifest(format!("duplicate tensor `{name}`")));
            }
            let length = (t.numel() * dtype.size()) as u64;
            let e = ManifestEntry {
                name: name.clone(),
                dtype,
                shape: t.shape().to_vec(),
                offset,
                length,
            };
            offset += length;
            Ok(e)
        })
        .collect()
}

fn header_text(arch: &str, dtype: DType, entries: &[ManifestEntry]) -> String {
    let payload: u64 = entries.iter().map(|e| e.length).sum();
    let mut h = format!(
        "arch {arch}\ndtype {dtype}\npayload_bytes {payload}\ntensors {}\n",
        entries.len()
    );
    for e in entries {
        let dims: Vec<String> = e.shape.iter().map(|d| d.to_string()).collect();
        h.push_str(&format!(
            "tensor {} {} {} {} {}\n",
            e.name,
            e.dtype,
            dims.join(","),
            e.offset,
            e.length
        ));
    }
    h
}

fn padding_after_header(header_len: usize) -> usize {
    (8 - (PREAMBLE + header_len) % 8) % 8
}

fn preamble(header: &str) -> Vec<u8> {
    let mut out = Vec::with_capacity(PREAMBLE + header.len() + 8);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    out.resize(out.len() + padding_after_header(header.len()), 0);
    out
}

fn check_arch_id(arch: &str) -> Result<()> {
    if arch.is_empty() || arch.chars().any(char::is_whitespace) {
        return Err(Error::CorruptManifest(format!("invalid arch id {arch:?}")));
    }
    Ok(())
}

/// Exact size in bytes of the container `write_container` would produce.
pub fn container_len(model: &DecoderModel, dtype: DType) -> Result<u64> {
    let tensors = model.named_params();
    let entries = build_manifest(dtype, &tensors)?;
    let header = header_text(model.arch().id(), dtype, &entries);
    let payload: u64 = entries.iter().map(|e| e.length).sum();
    Ok((PREAMBLE + header.len() + padding_after_header(header.len())) as u64 + payload)
}

/// Write every weight of `model` to `path`; returns the file size in bytes.
pub fn write_container(model: &DecoderModel, dtype: DType, path: impl AsRef<Path>) -> Result<u64> {
    write_tensors(model.arch().id(), dtype, &model.named_params(), path)
}

/// Write named tensors to `path` as an LWDC container, streaming the payload.
pub fn write_tensors(
    arch: &str,
    dtype: DType,
    tensors: &[(String, &Tensor)],
    path: impl AsRef<Path>,
) -> Result<u64> {
    let path = path.as_ref();
    check_arch_id(arch)?;
    let entries = build_manifest(dtype, tensors)?;
    let head = preamble(&header_text(arch, dtype, &entries));
    let io = |e| Error::io(path, e);
    let result = (|| {
        let mut w = BufWriter::new(File::create(path).map_err(io)?);
        w.write_all(&head).map_err(io)?;
        let mut total = head.len() as u64;
        let mut buf = Vec::new();
        for (name, t) in tensors {
            buf.clear();
            encode_values(name, t.data(), dtype, &mut buf)?;
            w.write_all(&buf).map_err(io)?;
            total += buf.len() as u64;
        }
        w.flush().map_err(io)?;
        Ok(total)
    })();
    if result.is_err() {
        let _ = std::fs::remove_file(path);
    }
    result
}

/// Read and validate an LWDC container.
pub fn read_container(path: impl AsRef<Path>) -> Result<WeightContainer> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    WeightContainer::from_bytes(&bytes)
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::CorruptManifest(msg.into())
}

fn parse_entry(fields: &[&str]) -> Result<ManifestEntry> {
    let &[name, dtype, dims, offset, length] = fields else {
        return Err(corrupt(format!("malformed tensor line `{}`", fields.join(" "))));
    };
    let shape = dims
        .split(',')
        .map(|d| d.parse::<usize>().ok().filter(|&d| d > 0))
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| corrupt(format!("bad shape `{dims}` for `{name}`")))?;
    let num = |s: &str| s.parse::<u64>().map_err(|_| corrupt(format!("bad number `{s}` for `{name}`")));
    Ok(ManifestEntry {
        name: name.to_string(),
        dtype: dtype.parse()?,
        shape,
        offset: num(offset)?,
        length: num(length)?,
    })
}

impl WeightContainer {
    /// Encode tensors in memory.
    pub fn from_tensors(arch: &str, dtype: DType, tensors: &[(String, &Tensor)]) -> Result<Self> {
        check_arch_id(arch)?;
        let entries = build_manifest(dtype, tensors)?;
        let mut payload = Vec::with_capacity(entries.iter().map(|e| e.length as usize).sum());
        for (name, t) in tensors {
            encode_values(name, t.data(), dtype, &mut payload)?;
        }
        let index = entries.iter().enumerate().map(|(i, e)| (e.name.clone(), i)).collect();
        Ok(WeightContainer {
            arch: arch.to_string(),
            dtype,
            entries,
            index,
            payload,
        })
    }

    pub fn from_model(model: &DecoderModel, dtype: DType) -> Result<Self> {
        WeightContainer::from_tensors(model.arch().id(), dtype, &model.named_params())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = preamble(&header_text(&self.arch, self.dtype, &self.entries));
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let truncated = |what: &str| Error::TruncatedPayload(format!("file ends inside the {what}"));
        if bytes.len() < 4 {
            return Err(truncated("magic"));
        }
        let found: [u8; 4] = bytes[..4].try_into().unwrap();
        if found != MAGIC {
            return Err(Error::BadMagic {
                expected: MAGIC,
                found,
            });
        }
        if bytes.len() < PREAMBLE {
            return Err(truncated("preamble"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(Error::VersionUnsupported(version));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let header_end = (PREAMBLE as u64)
            .checked_add(header_len)
            .filter(|&e| e <= bytes.len() as u64)
            .ok_or_else(|| truncated("header"))? as usize;
        let header = std::str::from_utf8(&bytes[PREAMBLE..header_end])
            .map_err(|_| corrupt("header is not valid UTF-8"))?;
        let payload_start = header_end + padding_after_header(header_len as usize);
        if payload_start > bytes.len() {
            return Err(truncated("header padding"));
        }

        let (mut arch, mut dtype, mut payload_bytes, mut count) = (None, None, None, None);
        let mut entries = Vec::new();
        for line in header.lines().filter(|l| !l.trim().is_empty()) {
            let fields: Vec<&str> = line.split_whitespace().collect();
            match fields.as_slice() {
                ["arch", id] => arch = Some(id.to_string()),
                ["dtype", d] => dtype = Some(d.parse::<DType>()?),
                ["payload_bytes", n] => {
                    payload_bytes = Some(n.parse::<u64>().map_err(|_| corrupt("bad payload_bytes"))?)
                }
                ["tensors", n] => count = Some(n.parse::<usize>().map_err(|_| corrupt("bad tensor count"))?),
                ["tensor", rest @ ..] => entries.push(parse_entry(rest)?),
                _ => return Err(corrupt(format!("unrecognized header line `{line}`"))),
            }
        }
        let arch = arch.ok_or_else(|| corrupt("missing arch"))?;
        let dtype = dtype.ok_or_else(|| corrupt("missing dtype"))?;
        let payload_bytes = payload_bytes.ok_or_else(|| corrupt("missing payload_bytes"))?;
        let count = count.ok_or_else(|| corrupt("missing tensor count"))?;
        if count != entries.len() {
            return Err(corrupt(format!("header announces {count} tensors, lists {}", entries.len())));
        }

        let available = (bytes.len() - payload_start) as u64;
        if available < payload_bytes {
            return Err(Error::TruncatedPayload(format!(
                "payload holds {available} of {payload_bytes} bytes"
            )));
        }
        if available > payload_bytes {
            return Err(corrupt(format!(
                "{} trailing bytes after the payload",
                available - payload_bytes
            )));
        }

        let mut index = HashMap::new();
        let mut spans = Vec::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            if index.insert(e.name.clone(), i).is_some() {
                return Err(corrupt(format!("duplicate tensor `{}`", e.name)));
            }
            if e.length != (e.numel() * e.dtype.size()) as u64 {
                return Err(corrupt(format!(
                    "`{}` declares {} bytes for {} {} elements",
                    e.name,
                    e.length,
                    e.numel(),
                    e.dtype
                )));
            }
            let end = e.offset.checked_add(e.length).filter(|&end| end <= payload_bytes);
            let end = end.ok_or_else(|| corrupt(format!("`{}` extends past the payload", e.name)))?;
            spans.push((e.offset, end, i));
        }
        spans.sort_unstable();
        for pair in spans.windows(2) {
            if pair[1].0 < pair[0].1 {
                return Err(corrupt(format!(
                    "`{}` overlaps `{}`",
                    entries[pair[1].2].name, entries[pair[0].2].name
                )));
            }
        }

        Ok(WeightContainer {
            arch,
            dtype,
            entries,
            index,
            payload: bytes[payload_start..].to_vec(),
        })
    }

    /// Write to `path`; returns the byte count.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<u64> {
        let path = path.as_ref();
        let bytes = self.to_bytes();
        std::fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
        Ok(bytes.len() as u64)
    }

    pub fn arch(&self) -> &str {
        &self.arch
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, name: &str) -> Option<&ManifestEntry> {
        self.index.get(name).map(|&i| &self.entries[i])
    }

    /// Decode one tensor, widening f16 storage to f32.
    pub fn tensor(&self, name: &str) -> Result<Tensor> {
        let e = self
            .entry(name)
            .ok_or_else(|| Error::ManifestMismatch(format!("missing tensor `{name}`")))?;
        let raw = &self.payload[e.offset as usize..(e.offset + e.length) as usize];
        let data: Vec<f32> = match e.dtype {
            DType::F32 => raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect(),
            DType::F16 => raw
                .chunks_exact(2)
                .map(|c| f16::from_le_bytes([c[0], c[1]]).to_f32())
                .collect(),
        };
        Ok(Tensor::from_parts(e.shape.clone(), Layout::Flat, data))
    }
}

/// Feeds a model builder from a container, checking the manifest matches
/// the topology exactly.
pub struct ContainerSource<'a> {
    container: &'a WeightContainer,
    used: HashSet<String>,
}

impl<'a> ContainerSource<'a> {
    pub fn new(container: &'a WeightContainer) -> Self {
        ContainerSource {
            container,
            used: HashSet::new(),
        }
    }

    /// Error if the container holds tensors the topology never asked for.
    pub fn finish(self) -> Result<()> {
        let extra: Vec<&str> = self
            .container
            .entries()
            .iter()
            .map(|e| e.name.as_str())
            .filter(|n| !self.used.contains(*n))
            .collect();
        if extra.is_empty() {
            Ok(())
        } else {
            Err(Error::ManifestMismatch(format!("unexpected tensors: {}", extra.join(", "))))
        }
    }
}

impl ParamSource for ContainerSource<'_> {
    fn fetch(&mut self, name: &str, shape: &[usize]) -> Result<Tensor> {
        let e = self
            .container
            .entry(name)
            .ok_or_else(|| Error::ManifestMismatch(format!("missing tensor `{name}`")))?;
        if e.shape != shape {
            return Err(Error::ManifestMismatch(format!(
                "`{name}` has shape {:?}, expected {shape:?}",
                e.shape
            )));
        }
        self.used.insert(name.to_string());
        self.container.tensor(name)
    }
}
