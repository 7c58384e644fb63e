//! Latents, images, frame sequences and embedding matrices on disk.
//!
//! Binary formats are little-endian throughout.
//!
//! LATZ: `"LATZ"`, `u32` version, `u32` rank, `rank × u64` dims, `f32` scale,
//! then the `f32` payload. Dims are `[4, h, w]` or `[T, 4, h, w]`.
//!
//! EMBD: `"EMBD"`, `u32` version, `u64` rows, `u64` dim, then `rows × dim`
//! `f32` values, row-major.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::decoders::LATENT_CHANNELS;
use crate::error::{shape_err, Error, Result};
use crate::tensor::{Layout, Tensor};

pub const LATENT_MAGIC: [u8; 4] = *b"LATZ";
pub const EMBEDDING_MAGIC: [u8; 4] = *b"EMBD";
pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "frames.txt";

/// Little-endian cursor that reports running off the end as truncation.
struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::TruncatedPayload(format!("file ends inside the {what}")))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn magic(&mut self, expected: [u8; 4]) -> Result<()> {
        let found: [u8; 4] = self.take(4, "magic")?.try_into().unwrap();
        if found != expected {
            return Err(Error::BadMagic { expected, found });
        }
        Ok(())
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f32_vec(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let bytes = n
            .checked_mul(4)
            .ok_or_else(|| Error::DimMismatch(format!("{what} element count overflows")))?;
        let raw = self.take(bytes, what)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }

    fn finish(&self, what: &str) -> Result<()> {
        let rest = self.buf.len() - self.pos;
        if rest != 0 {
            return Err(Error::DimMismatch(format!(
                "{rest} bytes beyond the declared {what} size"
            )));
        }
        Ok(())
    }

    fn version(&mut self) -> Result<()> {
        match self.u32("version")? {
            FORMAT_VERSION => Ok(()),
            v => Err(Error::VersionUnsupported(v)),
        }
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// A latent as stored on disk.
#[derive(Debug, Clone)]
pub struct Latent {
    /// Values after division by `scale`, ready for decoding.
    pub tensor: Tensor,
    pub scale: f32,
}

impl Latent {
    pub fn frames(&self) -> usize {
        match self.tensor.layout() {
            Layout::Tchw => self.tensor.shape()[0],
            _ => 1,
        }
    }

    pub fn is_video(&self) -> bool {
        self.tensor.layout() == Layout::Tchw
    }
}

fn latent_layout(dims: &[usize]) -> Result<Layout> {
    let layout = match dims.len() {
        3 => Layout::Chw,
        4 => Layout::Tchw,
        n => return Err(Error::DimMismatch(format!("latent rank must be 3 or 4, got {n}"))),
    };
    let channels = dims[dims.len() - 3];
    if channels != LATENT_CHANNELS {
        return Err(Error::DimMismatch(format!(
            "latent channel axis is {channels}, expected {LATENT_CHANNELS}"
        )));
    }
    if dims.contains(&0) {
        return Err(Error::DimMismatch(format!("zero-sized latent dims {dims:?}")));
    }
    Ok(layout)
}

pub fn decode_latent(bytes: &[u8]) -> Result<Latent> {
    let mut r = Reader::new(bytes);
    r.magic(LATENT_MAGIC)?;
    r.version()?;
    let rank = r.u32("rank")? as usize;
    if !(3..=4).contains(&rank) {
        return Err(Error::DimMismatch(format!("latent rank must be 3 or 4, got {rank}")));
    }
    let dims = (0..rank)
        .map(|_| r.u64("dims").map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let layout = latent_layout(&dims)?;
    let scale = r.f32("scale")?;
    if !scale.is_finite() || scale == 0.0 {
        return Err(Error::Validation(format!("latent scale must be finite and non-zero, got {scale}")));
    }
    let n = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::DimMismatch(format!("latent dims {dims:?} overflow")))?;
    let mut data = r.f32_vec(n, "latent payload")?;
    r.finish("latent payload")?;
    if scale != 1.0 {
        for v in &mut data {
            *v /= scale;
        }
    }
    Ok(Latent {
        tensor: Tensor::new(dims, layout, data)?,
        scale,
    })
}

/// Encode `tensor` as stored values alongside `scale`; readers divide by
/// `scale` on load.
pub fn encode_latent(tensor: &Tensor, scale: f32) -> Result<Vec<u8>> {
    latent_layout(tensor.shape())?;
    let mut out = Vec::with_capacity(24 + 8 * tensor.rank() + 4 * tensor.numel());
    out.extend_from_slice(&LATENT_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(tensor.rank() as u32).to_le_bytes());
    for &d in tensor.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    out.extend_from_slice(&scale.to_le_bytes());
    for v in tensor.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn read_latent(path: impl AsRef<Path>) -> Result<Latent> {
    decode_latent(&read_file(path.as_ref())?)
}

pub fn write_latent(tensor: &Tensor, scale: f32, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_latent(tensor, scale)?)
}

/// A row-major `[rows, dim]` embedding matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Embeddings {
    rows: usize,
    dim: usize,
    data: Vec<f32>,
}

impl Embeddings {
    pub fn new(rows: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::DimMismatch("embedding dim must be at least 1".into()));
        }
        if rows.checked_mul(dim) != Some(data.len()) {
            return Err(Error::DimMismatch(format!(
                "{rows}x{dim} embedding matrix with {} values",
                data.len()
            )));
        }
        Ok(Embeddings { rows, dim, data })
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch(dim, bad.len()));
        }
        Embeddings::new(rows.len(), dim, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

pub fn decode_embeddings(bytes: &[u8]) -> Result<Embeddings> {
    let mut r = Reader::new(bytes);
    r.magic(EMBEDDING_MAGIC)?;
    r.version()?;
    let rows = r.u64("rows")? as usize;
    let dim = r.u64("dim")? as usize;
    let n = rows
        .checked_mul(dim)
        .ok_or_else(|| Error::DimMismatch(format!("{rows}x{dim} embedding matrix overflows")))?;
    let data = r.f32_vec(n, "embedding payload")?;
    r.finish("embedding payload")?;
    if rows < 2 {
        return Err(Error::TooFewRows(rows));
    }
    Embeddings::new(rows, dim, data)
}

pub fn encode_embeddings(emb: &Embeddings) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + 4 * emb.data.len());
    out.extend_from_slice(&EMBEDDING_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(emb.rows as u64).to_le_bytes());
    out.extend_from_slice(&(emb.dim as u64).to_le_bytes());
    for v in &emb.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<Embeddings> {
    decode_embeddings(&read_file(path.as_ref())?)
}

pub fn write_embeddings(emb: &Embeddings, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_embeddings(emb))
}

/// Quantize a `[0, 1]` value to a byte, rounding halves up.
pub fn quantize(v: f32) -> Result<u8> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::RangeError(v));
    }
    Ok((v as f64 * 255.0 + 0.5).floor() as u8)
}

pub fn encode_ppm(img: &Tensor) -> Result<Vec<u8>> {
    let (c, h, w) = img.chw_dims()?;
    if c != 3 {
        return Err(shape_err!("PPM images need 3 channels, got {c}"));
    }
    let header = format!("P6\n{w} {h}\n255\n");
    let mut out = Vec::with_capacity(header.len() + 3 * h * w);
    out.extend_from_slice(header.as_bytes());
    let plane = h * w;
    let data = img.data();
    for p in 0..plane {
        for ch in 0..3 {
            out.push(quantize(data[ch * plane + p])?);
        }
    }
    Ok(out)
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Tensor> {
    let bad = |msg: &str| Error::Validation(format!("malformed PPM header: {msg}"));
    if bytes.len() < 2 {
        return Err(Error::TruncatedPayload("file ends inside the PPM magic".into()));
    }
    if &bytes[..2] != b"P6" {
        let found = [bytes[0], bytes[1], bytes.get(2).copied().unwrap_or(0), bytes.get(3).copied().unwrap_or(0)];
        return Err(Error::BadMagic {
            expected: *b"P6\n ",
            found,
        });
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(Error::TruncatedPayload("file ends inside the PPM header".into())),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        let digits = std::str::from_utf8(&bytes[start..pos]).unwrap();
        *field = digits.parse().map_err(|_| bad("expected a number"))?;
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        Some(_) => return Err(bad("missing separator before pixel data")),
        None => return Err(Error::TruncatedPayload("file ends inside the PPM header".into())),
    }
    let [w, h, maxval] = fields;
    if w == 0 || h == 0 {
        return Err(bad("zero image dimension"));
    }
    if maxval != 255 {
        return Err(bad("only maxval 255 is supported"));
    }
    let plane = h * w;
    let raw = &bytes[pos..];
    if raw.len() < 3 * plane {
        return Err(Error::TruncatedPayload(format!(
            "PPM holds {} of {} pixel bytes",
            raw.len(),
            3 * plane
        )));
    }
    let mut data = vec![0f32; 3 * plane];
    for p in 0..plane {
        for ch in 0..3 {
            data[ch * plane + p] = raw[3 * p + ch] as f32 / 255.0;
        }
    }
    Tensor::chw(3, h, w, data)
}

pub fn write_image_ppm(img: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_ppm(img)?)
}

pub fn read_image_ppm(path: impl AsRef<Path>) -> Result<Tensor> {
    decode_ppm(&read_file(path.as_ref())?)
}

/// An ordered list of frame images plus the frame rate.
///
/// On disk this is line-oriented text: `fps <n>` followed by one frame path
/// per line, relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameManifest {
    pub fps: u32,
    pub frames: Vec<PathBuf>,
}

impl FrameManifest {
    pub fn to_text(&self) -> String {
        let mut s = format!("fps {}\n", self.fps);
        for f in &self.frames {
            s.push_str(&f.to_string_lossy());
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let fps = lines
            .next()
            .and_then(|l| l.strip_prefix("fps "))
            .and_then(|v| v.trim().parse::<u32>().ok())
            .ok_or_else(|| Error::Validation("frame manifest must start with `fps <n>`".into()))?;
        let frames: Vec<PathBuf> = lines.map(PathBuf::from).collect();
        if frames.is_empty() {
            return Err(Error::Validation("frame manifest lists no frames".into()));
        }
        Ok(FrameManifest { fps, frames })
    }
}

pub fn frame_name(i: usize) -> String {
    format!("frame_{i:04}.ppm")
}

/// Write every frame of a `[T, 3, H, W]` video as PPM into `dir`, followed by
/// the manifest. Returns the manifest path.
pub fn write_video_frames(video: &Tensor, dir: impl AsRef<Path>, fps: u32) -> Result<PathBuf> {
    let dir = dir.as_ref();
    let (t, _, _, _) = video.tchw_dims()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut frames = Vec::with_capacity(t);
    for i in 0..t {
        let name = frame_name(i);
        write_image_ppm(&video.frame(i)?, dir.join(&name))?;
        frames.push(PathBuf::from(name));
    }
    let manifest = FrameManifest { fps, frames };
    let path = dir.join(MANIFEST_FILE);
    let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    f.write_all(manifest.to_text().as_bytes()).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

pub fn read_frame_manifest(path: impl AsRef<Path>) -> Result<FrameManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    FrameManifest::parse(&text)
}

/// Load all frames named by a manifest into a `[T, 3, H, W]` tensor.
pub fn read_video_frames(manifest_path: impl AsRef<Path>) -> Result<(FrameManifest, Tensor)> {
    let manifest_path = manifest_path.as_ref();
    let manifest = read_frame_manifest(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let frames = manifest
        .frames
        .iter()
        .map(|f| read_image_ppm(base.join(f)))
        .collect::<Result<Vec<_>>>()?;
    if let Some(odd) = frames.iter().find(|f| f.shape() != frames[0].shape()) {
        return Err(Error::DimMismatch(format!(
            "frame of shape {:?} in a sequence of {:?}",
            odd.shape(),
            frames[0].shape()
        )));
    }
    let video = Tensor::stack_frames(&frames)?;
    Ok((manifest, video))
}
