//! File helpers that classify failures: unreadable or malformed inputs are
//! validation errors, failed writes are runtime errors.

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{anyhow, Context};
use geolift_core::raster::{self, FeatureStack, Raster};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::Failure;

pub fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display())).map_err(Failure::Invalid)
}

/// Parses JSON, naming the file and the offending path on schema errors.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = read_text(path)?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let at = e.path().to_string();
        Failure::Invalid(anyhow!("{}: at `{at}`: {}", path.display(), e.into_inner()))
    })
}

fn create(path: &Path) -> Result<BufWriter<fs::File>, Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display())).map_err(Failure::Runtime)?;
    }
    let f = fs::File::create(path).with_context(|| format!("creating {}", path.display())).map_err(Failure::Runtime)?;
    Ok(BufWriter::new(f))
}

pub fn write_bytes(path: &Path, body: impl FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>) -> Result<(), Failure> {
    let mut w = create(path)?;
    body(&mut w).and_then(|_| w.flush()).with_context(|| format!("writing {}", path.display())).map_err(Failure::Runtime)
}

pub fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    write_bytes(path, |w| w.write_all(text.as_bytes()))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Failure::Runtime(e.into()))?;
    text.push('\n');
    write_text(path, &text)
}

fn open(path: &Path) -> Result<BufReader<fs::File>, Failure> {
    let f = fs::File::open(path).with_context(|| format!("opening {}", path.display())).map_err(Failure::Invalid)?;
    Ok(BufReader::new(f))
}

pub fn read_pfm(path: &Path) -> Result<Raster<f64>, Failure> {
    raster::read_pfm(&mut open(path)?).with_context(|| format!("reading {}", path.display())).map_err(Failure::Invalid)
}

pub fn read_pgm(path: &Path) -> Result<Raster<u8>, Failure> {
    raster::read_pgm(&mut open(path)?).with_context(|| format!("reading {}", path.display())).map_err(Failure::Invalid)
}

pub fn read_stack(path: &Path) -> Result<FeatureStack, Failure> {
    FeatureStack::read(&mut open(path)?).with_context(|| format!("reading {}", path.display())).map_err(Failure::Invalid)
}
