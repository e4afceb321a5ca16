//! Row-major rasters and their PFM / PGM / feature-stack encodings.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("io")]
    Io(#[from] io::Error),
    #[error("bad {format} header: {reason}")]
    Header { format: &'static str, reason: String },
    #[error("raster size mismatch: {0}x{1} vs {2}x{3}")]
    SizeMismatch(usize, usize, usize, usize),
    #[error("pixel value {0} does not fit in 8 bits")]
    Range(u32),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Raster<T> {
    pub width: usize,
    pub height: usize,
    pub data: Vec<T>,
}

impl<T: Clone> Raster<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self { width, height, data: vec![value; width * height] }
    }
}

impl<T> Raster<T> {
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self, RasterError> {
        if data.len() != width * height {
            return Err(RasterError::SizeMismatch(width, height, data.len(), 1));
        }
        Ok(Self { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for row in 0..height {
            for col in 0..width {
                data.push(f(col, row));
            }
        }
        Self { width, height, data }
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> &T {
        &self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, col: usize, row: usize, v: T) {
        self.data[row * self.width + col] = v;
    }

    pub fn same_size<U>(&self, other: &Raster<U>) -> Result<(), RasterError> {
        if self.width != other.width || self.height != other.height {
            return Err(RasterError::SizeMismatch(self.width, self.height, other.width, other.height));
        }
        Ok(())
    }

    pub fn map<U>(&self, f: impl Fn(&T) -> U) -> Raster<U> {
        Raster { width: self.width, height: self.height, data: self.data.iter().map(f).collect() }
    }
}

fn read_token(r: &mut impl BufRead) -> io::Result<String> {
    let mut tok = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        if r.read(&mut byte)? == 0 {
            break;
        }
        let c = byte[0];
        if c == b'#' && tok.is_empty() {
            let mut skip = Vec::new();
            r.read_until(b'\n', &mut skip)?;
            continue;
        }
        if c.is_ascii_whitespace() {
            if tok.is_empty() {
                continue;
            }
            break;
        }
        tok.push(c);
    }
    Ok(String::from_utf8_lossy(&tok).into_owned())
}

fn header_num<T: std::str::FromStr>(r: &mut impl BufRead, format: &'static str, what: &str) -> Result<T, RasterError> {
    let tok = read_token(r)?;
    tok.parse().map_err(|_| RasterError::Header { format, reason: format!("bad {what} `{tok}`") })
}

/// Grayscale PFM, little-endian (negative scale). Rows are stored bottom-up.
/// Values are narrowed to `f32`; infinities survive.
pub fn write_pfm(w: &mut impl Write, r: &Raster<f64>) -> io::Result<()> {
    write!(w, "Pf\n{} {}\n-1.0\n", r.width, r.height)?;
    let mut buf = Vec::with_capacity(r.width * 4);
    for row in (0..r.height).rev() {
        buf.clear();
        for col in 0..r.width {
            buf.extend_from_slice(&(*r.get(col, row) as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

pub fn read_pfm(r: &mut impl BufRead) -> Result<Raster<f64>, RasterError> {
    const F: &str = "PFM";
    let magic = read_token(r)?;
    if magic != "Pf" {
        return Err(RasterError::Header { format: F, reason: format!("magic `{magic}` (only grayscale Pf)") });
    }
    let width: usize = header_num(r, F, "width")?;
    let height: usize = header_num(r, F, "height")?;
    let scale: f64 = header_num(r, F, "scale")?;
    let little = scale < 0.0;
    let mut bytes = vec![0u8; width * height * 4];
    r.read_exact(&mut bytes)?;
    let mut out = Raster::filled(width, height, 0.0);
    for (k, chunk) in bytes.chunks_exact(4).enumerate() {
        let b = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        let (col, file_row) = (k % width, k / width);
        out.set(col, height - 1 - file_row, v as f64);
    }
    Ok(out)
}

/// Binary PGM (P5), 8-bit, rows top-down.
pub fn write_pgm(w: &mut impl Write, r: &Raster<u8>) -> io::Result<()> {
    write!(w, "P5\n{} {}\n255\n", r.width, r.height)?;
    w.write_all(&r.data)
}

pub fn read_pgm(r: &mut impl BufRead) -> Result<Raster<u8>, RasterError> {
    const F: &str = "PGM";
    let magic = read_token(r)?;
    if magic != "P5" {
        return Err(RasterError::Header { format: F, reason: format!("magic `{magic}` (only binary P5)") });
    }
    let width: usize = header_num(r, F, "width")?;
    let height: usize = header_num(r, F, "height")?;
    let maxval: u32 = header_num(r, F, "maxval")?;
    if maxval > 255 {
        return Err(RasterError::Range(maxval));
    }
    let mut data = vec![0u8; width * height];
    r.read_exact(&mut data)?;
    Raster::from_vec(width, height, data)
}

/// Multi-channel raster, pixel-interleaved (`data[(row * width + col) * channels + c]`).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStack {
    pub width: usize,
    pub height: usize,
    pub names: Vec<String>,
    pub data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct StackHeader {
    width: usize,
    height: usize,
    channels: usize,
    names: Vec<String>,
}

impl FeatureStack {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, names: Vec::new(), data: Vec::new() }
    }

    pub fn channels(&self) -> usize {
        self.names.len()
    }

    #[inline]
    pub fn pixel(&self, idx: usize) -> &[f64] {
        let c = self.channels();
        &self.data[idx * c..(idx + 1) * c]
    }

    /// Appends channels given as planar rasters.
    pub fn push_planes(&mut self, names: Vec<String>, planes: Vec<Vec<f64>>) {
        assert_eq!(names.len(), planes.len());
        let n = self.width * self.height;
        assert!(planes.iter().all(|p| p.len() == n));
        let old_c = self.channels();
        let new_c = old_c + names.len();
        let mut data = Vec::with_capacity(n * new_c);
        for i in 0..n {
            if old_c > 0 {
                data.extend_from_slice(&self.data[i * old_c..(i + 1) * old_c]);
            }
            data.extend(planes.iter().map(|p| p[i]));
        }
        self.names.extend(names);
        self.data = data;
    }

    pub fn plane(&self, channel: usize) -> Vec<f64> {
        let c = self.channels();
        (0..self.width * self.height).map(|i| self.data[i * c + channel]).collect()
    }

    /// Keeps the channels whose names satisfy `keep`, in order.
    pub fn select(&self, keep: impl Fn(&str) -> bool) -> FeatureStack {
        let idx: Vec<usize> = (0..self.channels()).filter(|&c| keep(&self.names[c])).collect();
        let c = self.channels();
        let mut data = Vec::with_capacity(self.width * self.height * idx.len());
        for i in 0..self.width * self.height {
            data.extend(idx.iter().map(|&k| self.data[i * c + k]));
        }
        FeatureStack { width: self.width, height: self.height, names: idx.iter().map(|&k| self.names[k].clone()).collect(), data }
    }

    /// One JSON header line, then little-endian `f32` values.
    pub fn write(&self, w: &mut impl Write) -> io::Result<()> {
        let header = StackHeader { width: self.width, height: self.height, channels: self.channels(), names: self.names.clone() };
        serde_json::to_writer(&mut *w, &header)?;
        w.write_all(b"\n")?;
        let mut buf = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        w.write_all(&buf)
    }

    pub fn read(r: &mut impl BufRead) -> Result<Self, RasterError> {
        let mut line = String::new();
        r.read_line(&mut line)?;
        let h: StackHeader = serde_json::from_str(line.trim_end())
            .map_err(|e| RasterError::Header { format: "feature stack", reason: e.to_string() })?;
        if h.names.len() != h.channels {
            return Err(RasterError::Header { format: "feature stack", reason: "channel count != names".into() });
        }
        let mut bytes = vec![0u8; h.width * h.height * h.channels * 4];
        r.read_exact(&mut bytes)?;
        let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
        Ok(Self { width: h.width, height: h.height, names: h.names, data })
    }
}
