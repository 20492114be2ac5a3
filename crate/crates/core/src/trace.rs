//! The `.tkv` attention-trace format and synthetic trace generators.
//!
//! A trace file is a 24-byte header followed by the payload:
//!
//! | offset | size | field                                 |
//! |-------:|-----:|---------------------------------------|
//! | 0      | 4    | magic `b"TKV1"`                       |
//! | 4      | 2    | format version, `u16` LE (currently 1)|
//! | 6      | 4    | layer count `R`, `u32` LE             |
//! | 10     | 4    | heads per layer `n`, `u32` LE         |
//! | 14     | 4    | sequence length `N`, `u32` LE         |
//! | 18     | 4    | head dimension `d`, `u32` LE          |
//! | 22     | 1    | dtype code (0 = `f32` LE)             |
//! | 23     | 1    | reserved, must be 0                   |
//!
//! The payload is layer-major, then head-major, then Q, K, V, each an `N × d`
//! row-major block of little-endian `f32`: `R·n·3·N·d·4` bytes in total.

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::rng::SampleStream;
use crate::tensor::{AttentionInputs, Matrix};

pub const MAGIC: [u8; 4] = *b"TKV1";
pub const FORMAT_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 24;
pub const DTYPE_F32: u8 = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub version: u16,
    pub num_layers: usize,
    pub num_heads: usize,
    pub seq_len: usize,
    pub head_dim: usize,
    pub dtype: u8,
}

impl TraceHeader {
    pub fn new(num_layers: usize, num_heads: usize, seq_len: usize, head_dim: usize) -> Result<Self> {
        let header = Self {
            version: FORMAT_VERSION,
            num_layers,
            num_heads,
            seq_len,
            head_dim,
            dtype: DTYPE_F32,
        };
        header.validate()?;
        Ok(header)
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("layer count", self.num_layers),
            ("head count", self.num_heads),
            ("sequence length", self.seq_len),
            ("head dimension", self.head_dim),
        ] {
            if v == 0 {
                return Err(Error::Format(format!("{name} must be at least 1")));
            }
            if v > u32::MAX as usize {
                return Err(Error::Format(format!("{name} {v} does not fit in u32")));
            }
        }
        Ok(())
    }

    /// Bytes of one head's Q, K and V blocks.
    pub fn head_bytes(&self) -> u64 {
        3 * self.seq_len as u64 * self.head_dim as u64 * 4
    }

    pub fn payload_bytes(&self) -> u64 {
        self.num_layers as u64 * self.num_heads as u64 * self.head_bytes()
    }

    pub fn file_bytes(&self) -> u64 {
        HEADER_LEN as u64 + self.payload_bytes()
    }

    pub fn to_bytes(&self) -> [u8; HEADER_LEN] {
        let mut out = [0u8; HEADER_LEN];
        out[0..4].copy_from_slice(&MAGIC);
        out[4..6].copy_from_slice(&self.version.to_le_bytes());
        out[6..10].copy_from_slice(&(self.num_layers as u32).to_le_bytes());
        out[10..14].copy_from_slice(&(self.num_heads as u32).to_le_bytes());
        out[14..18].copy_from_slice(&(self.seq_len as u32).to_le_bytes());
        out[18..22].copy_from_slice(&(self.head_dim as u32).to_le_bytes());
        out[22] = self.dtype;
        out
    }

    pub fn from_bytes(bytes: &[u8; HEADER_LEN]) -> Result<Self> {
        if bytes[0..4] != MAGIC {
            return Err(Error::Format(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&bytes[0..4]),
                "TKV1"
            )));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported format version {version}")));
        }
        let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
        if bytes[22] != DTYPE_F32 {
            return Err(Error::UnsupportedDtype(bytes[22]));
        }
        if bytes[23] != 0 {
            return Err(Error::Format(format!("reserved header byte is {}, expected 0", bytes[23])));
        }
        let header = Self {
            version,
            num_layers: word(6),
            num_heads: word(10),
            seq_len: word(14),
            head_dim: word(18),
            dtype: bytes[22],
        };
        header.validate()?;
        Ok(header)
    }
}

/// Per-layer, per-head attention states.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTrace {
    header: TraceHeader,
    layers: Vec<Vec<AttentionInputs>>,
}

impl AttentionTrace {
    /// Builds a trace, checking that every layer has the same head count and
    /// every head the same `N × d` shape.
    pub fn new(layers: Vec<Vec<AttentionInputs>>) -> Result<Self> {
        let first = layers
            .first()
            .and_then(|l| l.first())
            .ok_or(Error::EmptyInput("a trace needs at least one layer and one head"))?;
        let header = TraceHeader::new(layers.len(), layers[0].len(), first.seq_len(), first.head_dim())?;
        for (r, layer) in layers.iter().enumerate() {
            if layer.len() != header.num_heads {
                return Err(Error::Dimension(format!(
                    "layer {r} has {} heads, layer 0 has {}",
                    layer.len(),
                    header.num_heads
                )));
            }
            for (h, head) in layer.iter().enumerate() {
                if head.seq_len() != header.seq_len || head.head_dim() != header.head_dim {
                    return Err(Error::Dimension(format!(
                        "layer {r} head {h} is {}x{}, expected {}x{}",
                        head.seq_len(),
                        head.head_dim(),
                        header.seq_len,
                        header.head_dim
                    )));
                }
            }
        }
        Ok(Self { header, layers })
    }

    pub fn header(&self) -> &TraceHeader {
        &self.header
    }

    pub fn layers(&self) -> &[Vec<AttentionInputs>] {
        &self.layers
    }

    pub fn layer(&self, r: usize) -> &[AttentionInputs] {
        &self.layers[r]
    }

    pub fn num_layers(&self) -> usize {
        self.header.num_layers
    }

    pub fn num_heads(&self) -> usize {
        self.header.num_heads
    }

    pub fn seq_len(&self) -> usize {
        self.header.seq_len
    }

    pub fn head_dim(&self) -> usize {
        self.header.head_dim
    }
}

/// Writes `trace` in `.tkv` layout and returns the number of bytes written.
///
/// Values are narrowed to `f32`; traces loaded from disk or produced by the
/// generators round-trip bit-exactly.
pub fn write_trace<W: Write>(trace: &AttentionTrace, mut sink: W) -> Result<u64> {
    sink.write_all(&trace.header.to_bytes())?;
    let mut buf = Vec::with_capacity(trace.header.head_bytes() as usize);
    for layer in &trace.layers {
        for head in layer {
            buf.clear();
            for m in [head.q(), head.k(), head.v()] {
                for &x in m.as_slice() {
                    buf.extend_from_slice(&(x as f32).to_le_bytes());
                }
            }
            sink.write_all(&buf)?;
        }
    }
    sink.flush()?;
    Ok(trace.header.file_bytes())
}

/// Reads a complete trace. Trailing bytes after the payload are rejected.
pub fn read_trace<R: Read>(source: R) -> Result<AttentionTrace> {
    let mut reader = TraceReader::new(source)?;
    let header = *reader.header();
    let mut layers = Vec::with_capacity(header.num_layers);
    while let Some(layer) = reader.next_layer()? {
        layers.push(layer);
    }
    let mut extra = [0u8; 1];
    if reader.source.read(&mut extra)? != 0 {
        return Err(Error::Format(format!(
            "unexpected data after {} payload bytes",
            header.payload_bytes()
        )));
    }
    Ok(AttentionTrace { header, layers })
}

/// Streams a trace one layer at a time, so peak memory stays at one layer.
pub struct TraceReader<R> {
    source: R,
    header: TraceHeader,
    next: usize,
    consumed: u64,
}

impl<R: Read> TraceReader<R> {
    pub fn new(mut source: R) -> Result<Self> {
        let mut bytes = [0u8; HEADER_LEN];
        let got = read_full(&mut source, &mut bytes)?;
        if got >= 4 && bytes[0..4] != MAGIC {
            return Err(Error::Format(format!(
                "bad magic {:?}, expected \"TKV1\"",
                String::from_utf8_lossy(&bytes[0..4])
            )));
        }
        if got < HEADER_LEN {
            return Err(Error::Truncated {
                expected: HEADER_LEN as u64,
                actual: got as u64,
            });
        }
        let header = TraceHeader::from_bytes(&bytes)?;
        Ok(Self {
            source,
            header,
            next: 0,
            consumed: HEADER_LEN as u64,
        })
    }

    pub fn header(&self) -> &TraceHeader {
        &self.header
    }

    /// Next layer's heads, or `None` once all layers have been read.
    pub fn next_layer(&mut self) -> Result<Option<Vec<AttentionInputs>>> {
        if self.next == self.header.num_layers {
            return Ok(None);
        }
        let (n, d) = (self.header.seq_len, self.header.head_dim);
        let mut buf = vec![0u8; self.header.head_bytes() as usize];
        let mut heads = Vec::with_capacity(self.header.num_heads);
        for _ in 0..self.header.num_heads {
            let got = read_full(&mut self.source, &mut buf)?;
            self.consumed += got as u64;
            if got < buf.len() {
                let rest = io::copy(&mut self.source, &mut io::sink())?;
                return Err(Error::Truncated {
                    expected: self.header.file_bytes(),
                    actual: self.consumed + rest,
                });
            }
            let block = n * d * 4;
            let tensor = |i: usize| {
                let data = buf[i * block..(i + 1) * block]
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                    .collect();
                Matrix::new(n, d, data)
            };
            heads.push(AttentionInputs::new(tensor(0)?, tensor(1)?, tensor(2)?)?);
        }
        self.next += 1;
        Ok(Some(heads))
    }
}

fn read_full<R: Read>(source: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match source.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(k) => filled += k,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

/// Shape of a trace: `(layers, heads, seq_len, head_dim)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceShape {
    pub layers: usize,
    pub heads: usize,
    pub seq_len: usize,
    pub head_dim: usize,
}

impl TraceShape {
    pub fn new(layers: usize, heads: usize, seq_len: usize, head_dim: usize) -> Self {
        Self {
            layers,
            heads,
            seq_len,
            head_dim,
        }
    }
}

/// Which synthetic structure to generate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SyntheticKind {
    /// Every entry i.i.d. standard normal.
    UniformRandom,
    /// All but `planted` heads per layer share Q/K/V up to `noise`; planted
    /// heads carry their own states and a private value direction.
    ClusteredHeads {
        planted: usize,
        #[serde(default)]
        noise: f64,
        /// Length of the constant value direction; defaults to `8·√d`.
        #[serde(default)]
        separation: Option<f64>,
        /// Multiplier on every query row. Larger values concentrate each
        /// query's attention on fewer keys; defaults to 3.
        #[serde(default)]
        focus: Option<f64>,
    },
    /// One key row per head aligned with every query.
    PlantedNeedle {
        position: usize,
        #[serde(default = "default_needle_strength")]
        strength: f64,
    },
}

fn default_needle_strength() -> f64 {
    8.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticProfile {
    #[serde(flatten)]
    pub kind: SyntheticKind,
    pub seed: u64,
}

const SHARED_STREAM: u64 = 1 << 32;
const PLANT_STREAM: u64 = 2 << 32;

impl SyntheticProfile {
    pub fn uniform(seed: u64) -> Self {
        Self {
            kind: SyntheticKind::UniformRandom,
            seed,
        }
    }

    pub fn clustered(seed: u64, planted: usize, noise: f64) -> Self {
        Self {
            kind: SyntheticKind::ClusteredHeads {
                planted,
                noise,
                separation: None,
                focus: None,
            },
            seed,
        }
    }

    pub fn needle(seed: u64, position: usize, strength: f64) -> Self {
        Self {
            kind: SyntheticKind::PlantedNeedle { position, strength },
            seed,
        }
    }

    /// Ground-truth planted heads of `layer`, ascending. Empty unless the
    /// profile is clustered.
    pub fn planted_heads(&self, num_heads: usize, layer: usize) -> Vec<usize> {
        let SyntheticKind::ClusteredHeads { planted, .. } = self.kind else {
            return Vec::new();
        };
        let mut stream = SampleStream::new(self.seed, PLANT_STREAM + layer as u64);
        let mut heads: Vec<usize> = (0..num_heads).collect();
        // Partial Fisher–Yates: the first `planted` slots are a uniform sample.
        for i in 0..planted.min(num_heads) {
            let j = i + ((stream.uniform() * (num_heads - i) as f64) as usize).min(num_heads - i - 1);
            heads.swap(i, j);
        }
        let mut chosen = heads[..planted.min(num_heads)].to_vec();
        chosen.sort_unstable();
        chosen
    }

    fn validate(&self, shape: &TraceShape) -> Result<()> {
        match self.kind {
            SyntheticKind::UniformRandom => {}
            SyntheticKind::ClusteredHeads {
                planted,
                noise,
                separation,
                focus,
            } => {
                if planted >= shape.heads {
                    return Err(param(format!(
                        "planted head count {planted} must be below head count {}",
                        shape.heads
                    )));
                }
                if planted + 1 > shape.head_dim {
                    return Err(param(format!(
                        "{planted} planted heads need head_dim ≥ {}, got {}",
                        planted + 1,
                        shape.head_dim
                    )));
                }
                if !(noise.is_finite() && noise >= 0.0) {
                    return Err(param(format!("noise must be finite and ≥ 0, got {noise}")));
                }
                if let Some(s) = separation {
                    if !(s.is_finite() && s > 0.0) {
                        return Err(param(format!("separation must be finite and > 0, got {s}")));
                    }
                }
                if let Some(f) = focus {
                    if !(f.is_finite() && f > 0.0) {
                        return Err(param(format!("focus must be finite and > 0, got {f}")));
                    }
                }
            }
            SyntheticKind::PlantedNeedle { position, strength } => {
                if position >= shape.seq_len {
                    return Err(param(format!(
                        "needle position {position} outside sequence of length {}",
                        shape.seq_len
                    )));
                }
                if !strength.is_finite() {
                    return Err(param("needle strength must be finite"));
                }
            }
        }
        Ok(())
    }
}

/// Generates a trace whose bytes are fully determined by `profile` and `shape`.
///
/// Per-head tensors draw from stream `layer·n + head`, shared cluster tensors
/// from stream `2³² + layer`, planted-head choice from stream `2·2³² + layer`.
/// Every value is rounded to `f32` so the trace survives a file round trip.
pub fn gen_synthetic_trace(profile: &SyntheticProfile, shape: TraceShape) -> Result<AttentionTrace> {
    TraceHeader::new(shape.layers, shape.heads, shape.seq_len, shape.head_dim)
        .map_err(|e| param(e.to_string()))?;
    profile.validate(&shape)?;
    let (n_tok, d) = (shape.seq_len, shape.head_dim);
    let cells = n_tok * d;
    let round = |v: Vec<f64>| -> Result<Matrix> {
        Matrix::new(n_tok, d, v.into_iter().map(|x| x as f32 as f64).collect())
    };

    let mut layers = Vec::with_capacity(shape.layers);
    for r in 0..shape.layers {
        let stream_of = |h: usize| SampleStream::new(profile.seed, (r * shape.heads + h) as u64);
        let mut heads = Vec::with_capacity(shape.heads);
        match profile.kind {
            SyntheticKind::UniformRandom => {
                for h in 0..shape.heads {
                    let mut s = stream_of(h);
                    let (q, k, v) = (s.normals(cells), s.normals(cells), s.normals(cells));
                    heads.push(AttentionInputs::new(round(q)?, round(k)?, round(v)?)?);
                }
            }
            SyntheticKind::ClusteredHeads {
                noise,
                separation,
                focus,
                ..
            } => {
                let amplitude = separation.unwrap_or(8.0 * (d as f64).sqrt());
                let focus = focus.unwrap_or(3.0);
                let planted = profile.planted_heads(shape.heads, r);
                let mut shared = SampleStream::new(profile.seed, SHARED_STREAM + r as u64);
                let (sq, sk, sz) = (shared.normals(cells), shared.normals(cells), shared.normals(cells));
                for h in 0..shape.heads {
                    let mut s = stream_of(h);
                    let (q, k, mut v, direction) = match planted.iter().position(|&p| p == h) {
                        Some(slot) => (s.normals(cells), s.normals(cells), s.normals(cells), slot + 1),
                        None => {
                            let mut jitter = |base: &[f64]| -> Vec<f64> {
                                base.iter().map(|&x| x + noise * s.normal()).collect()
                            };
                            (jitter(&sq), jitter(&sk), jitter(&sz), 0)
                        }
                    };
                    for row in v.chunks_exact_mut(d) {
                        row[direction] += amplitude;
                    }
                    let q = q.into_iter().map(|x| x * focus).collect();
                    heads.push(AttentionInputs::new(round(q)?, round(k)?, round(v)?)?);
                }
            }
            SyntheticKind::PlantedNeedle { position, strength } => {
                let lift = (d as f64).sqrt();
                for h in 0..shape.heads {
                    let mut s = stream_of(h);
                    let (mut q, mut k, v) = (s.normals(cells), s.normals(cells), s.normals(cells));
                    let u = s.unit_vector(d);
                    for row in q.chunks_exact_mut(d) {
                        row.iter_mut().zip(&u).for_each(|(x, ui)| *x += lift * ui);
                    }
                    let needle = &mut k[position * d..(position + 1) * d];
                    needle.iter_mut().zip(&u).for_each(|(x, ui)| *x = strength * ui);
                    heads.push(AttentionInputs::new(round(q)?, round(k)?, round(v)?)?);
                }
            }
        }
        layers.push(heads);
    }
    AttentionTrace::new(layers)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> AttentionTrace {
        let m = Matrix::new(1, 1, vec![1.5]).unwrap();
        AttentionTrace::new(vec![vec![AttentionInputs::new(m.clone(), m.clone(), m).unwrap()]]).unwrap()
    }

    #[test]
    fn smallest_trace_is_header_plus_twelve_bytes() {
        let mut buf = Vec::new();
        let written = write_trace(&tiny(), &mut buf).unwrap();
        assert_eq!(written, HEADER_LEN as u64 + 12);
        assert_eq!(buf.len() as u64, written);
    }

    #[test]
    fn payload_size_matches_shape_arithmetic() {
        let t = gen_synthetic_trace(&SyntheticProfile::uniform(1), TraceShape::new(2, 4, 16, 8)).unwrap();
        assert_eq!(t.header().payload_bytes(), 12288);
        let mut buf = Vec::new();
        assert_eq!(write_trace(&t, &mut buf).unwrap(), HEADER_LEN as u64 + 12288);
    }

    #[test]
    fn header_layout_is_fixed() {
        let h = TraceHeader::new(2, 3, 5, 7).unwrap();
        let b = h.to_bytes();
        assert_eq!(&b[0..4], b"TKV1");
        assert_eq!(&b[4..6], &[1, 0]);
        assert_eq!(&b[6..10], &[2, 0, 0, 0]);
        assert_eq!(&b[10..14], &[3, 0, 0, 0]);
        assert_eq!(&b[14..18], &[5, 0, 0, 0]);
        assert_eq!(&b[18..22], &[7, 0, 0, 0]);
        assert_eq!(&b[22..24], &[0, 0]);
    }

    #[test]
    fn bad_magic_is_a_format_error() {
        let mut buf = Vec::new();
        write_trace(&tiny(), &mut buf).unwrap();
        buf[0] = b'X';
        assert_eq!(read_trace(&buf[..]).unwrap_err().kind(), "format");
    }

    #[test]
    fn truncation_reports_expected_and_actual() {
        let mut buf = Vec::new();
        write_trace(&tiny(), &mut buf).unwrap();
        let full = buf.len() as u64;
        buf.truncate(buf.len() - 4);
        match read_trace(&buf[..]).unwrap_err() {
            Error::Truncated { expected, actual } => {
                assert_eq!(expected, full);
                assert_eq!(actual, full - 4);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(read_trace(&buf[..10]).unwrap_err().kind(), "truncated");
    }

    #[test]
    fn unknown_dtype_and_trailing_bytes_are_rejected() {
        let mut buf = Vec::new();
        write_trace(&tiny(), &mut buf).unwrap();
        let mut bad = buf.clone();
        bad[22] = 1;
        assert!(matches!(read_trace(&bad[..]), Err(Error::UnsupportedDtype(1))));
        buf.push(0);
        assert_eq!(read_trace(&buf[..]).unwrap_err().kind(), "format");
    }

    #[test]
    fn zero_dimension_header_is_rejected() {
        let mut b = TraceHeader::new(1, 1, 1, 1).unwrap().to_bytes();
        b[14..18].copy_from_slice(&0u32.to_le_bytes());
        assert_eq!(TraceHeader::from_bytes(&b).unwrap_err().kind(), "format");
    }

    #[test]
    fn reader_streams_layers() {
        let t = gen_synthetic_trace(&SyntheticProfile::uniform(3), TraceShape::new(3, 2, 4, 2)).unwrap();
        let mut buf = Vec::new();
        write_trace(&t, &mut buf).unwrap();
        let mut reader = TraceReader::new(&buf[..]).unwrap();
        let mut count = 0;
        while let Some(layer) = reader.next_layer().unwrap() {
            assert_eq!(layer, t.layer(count));
            count += 1;
        }
        assert_eq!(count, 3);
    }

    #[test]
    fn generator_is_deterministic() {
        let shape = TraceShape::new(2, 4, 8, 4);
        for profile in [
            SyntheticProfile::uniform(9),
            SyntheticProfile::clustered(9, 2, 0.1),
            SyntheticProfile::needle(9, 3, 8.0),
        ] {
            let bytes = |p: &SyntheticProfile| {
                let mut b = Vec::new();
                write_trace(&gen_synthetic_trace(p, shape).unwrap(), &mut b).unwrap();
                b
            };
            assert_eq!(bytes(&profile), bytes(&profile));
        }
    }

    #[test]
    fn generator_rejects_bad_parameters() {
        let shape = TraceShape::new(1, 4, 8, 4);
        assert!(gen_synthetic_trace(&SyntheticProfile::clustered(1, 4, 0.0), shape).is_err());
        assert!(gen_synthetic_trace(&SyntheticProfile::clustered(1, 3, -1.0), shape).is_err());
        assert!(gen_synthetic_trace(&SyntheticProfile::needle(1, 8, 1.0), shape).is_err());
        assert!(gen_synthetic_trace(&SyntheticProfile::uniform(1), TraceShape::new(0, 1, 1, 1)).is_err());
        // d must leave room for one private direction per planted head.
        assert!(gen_synthetic_trace(&SyntheticProfile::clustered(1, 3, 0.0), TraceShape::new(1, 8, 4, 3)).is_err());
    }

    #[test]
    fn planted_heads_are_a_sorted_sample() {
        let p = SyntheticProfile::clustered(4, 3, 0.0);
        for layer in 0..5 {
            let heads = p.planted_heads(10, layer);
            assert_eq!(heads.len(), 3);
            assert!(heads.windows(2).all(|w| w[0] < w[1]));
            assert!(heads.iter().all(|&h| h < 10));
        }
        assert!(SyntheticProfile::uniform(4).planted_heads(10, 0).is_empty());
    }

    #[test]
    fn profile_json_shape() {
        let p = SyntheticProfile::clustered(7, 2, 0.0);
        let json = serde_json::to_value(&p).unwrap();
        assert_eq!(json["kind"], "clustered-heads");
        assert_eq!(json["planted"], 2);
        let back: SyntheticProfile = serde_json::from_value(json).unwrap();
        assert_eq!(back, p);
    }
}
