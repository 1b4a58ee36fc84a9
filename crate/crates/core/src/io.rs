//! On-disk formats.
//!
//! A record file holds a sequence of equally sized records as little-endian
//! `f64`, with a TOML sidecar (`<file>.toml`) describing them. State records
//! are species-major; observation records are pixel-major. Every file is
//! written to a temporary name and renamed into place when complete.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordLayout {
    /// `values[s * n_sites + v]`
    SpeciesMajor,
    /// `values[v * n_components + j]`
    PixelMajor,
}

/// Sidecar header of a record file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordHeader {
    pub format_version: u32,
    pub kind: String,
    pub layout: RecordLayout,
    pub side: usize,
    /// Species or wavelengths per site.
    pub n_components: usize,
    pub n_records: usize,
    pub dt: f64,
    pub seed: u64,
    /// Dynamics step index of each record.
    pub steps: Vec<u64>,
    #[serde(default)]
    pub parameters: toml::Table,
}

impl RecordHeader {
    pub fn record_len(&self) -> usize {
        self.side * self.side * self.n_components
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".toml");
    PathBuf::from(s)
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".partial");
    PathBuf::from(s)
}

/// Writes `bytes` to `path` through a temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = tmp_path(path);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Streams records to disk; nothing is visible under the final name until
/// [`RecordWriter::finish`].
pub struct RecordWriter {
    path: PathBuf,
    tmp: PathBuf,
    out: BufWriter<File>,
    record_len: usize,
    steps: Vec<u64>,
}

impl RecordWriter {
    pub fn create(path: impl Into<PathBuf>, record_len: usize) -> Result<Self> {
        let path = path.into();
        let tmp = tmp_path(&path);
        let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        Ok(RecordWriter {
            path,
            tmp,
            out: BufWriter::with_capacity(1 << 20, file),
            record_len,
            steps: Vec::new(),
        })
    }

    pub fn push<T: Real>(&mut self, step: u64, values: &[T]) -> Result<()> {
        crate::error::check_len("record", self.record_len, values.len())?;
        let mut buf = Vec::with_capacity(values.len() * 8);
        for v in values {
            buf.extend_from_slice(&v.as_f64().to_le_bytes());
        }
        self.out.write_all(&buf).map_err(|e| Error::io(&self.tmp, e))?;
        self.steps.push(step);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Completes the file; `header.steps` and `header.n_records` are filled
    /// from the pushed records.
    pub fn finish(mut self, mut header: RecordHeader) -> Result<RecordHeader> {
        if header.record_len() != self.record_len {
            return Err(Error::SizeMismatch {
                what: "record header",
                expected: self.record_len,
                found: header.record_len(),
            });
        }
        header.n_records = self.steps.len();
        header.steps = std::mem::take(&mut self.steps);
        self.out.flush().map_err(|e| Error::io(&self.tmp, e))?;
        self.out
            .get_ref()
            .sync_all()
            .map_err(|e| Error::io(&self.tmp, e))?;
        let text = toml::to_string(&header).map_err(|e| Error::Parse {
            path: sidecar_path(&self.path),
            detail: e.to_string(),
        })?;
        write_atomic(&sidecar_path(&self.path), text.as_bytes())?;
        fs::rename(&self.tmp, &self.path).map_err(|e| Error::io(&self.path, e))?;
        Ok(header)
    }
}

pub fn read_header(path: &Path) -> Result<RecordHeader> {
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let h: RecordHeader = toml::from_str(&text).map_err(|e| Error::Parse {
        path: side.clone(),
        detail: e.to_string(),
    })?;
    if h.format_version != FORMAT_VERSION {
        return Err(Error::Parse {
            path: side,
            detail: format!("unsupported format version {}", h.format_version),
        });
    }
    if h.steps.len() != h.n_records {
        return Err(Error::Parse {
            path: side,
            detail: format!("{} steps listed for {} records", h.steps.len(), h.n_records),
        });
    }
    Ok(h)
}

/// Reads records one at a time.
pub struct RecordReader {
    header: RecordHeader,
    path: PathBuf,
    input: BufReader<File>,
    next: usize,
    buf: Vec<u8>,
}

impl RecordReader {
    pub fn open(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let header = read_header(&path)?;
        let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
        let len = file.metadata().map_err(|e| Error::io(&path, e))?.len();
        let expected = (header.n_records * header.record_len() * 8) as u64;
        if len != expected {
            return Err(Error::Parse {
                path,
                detail: format!("file holds {len} bytes, header implies {expected}"),
            });
        }
        let buf = vec![0; header.record_len() * 8];
        Ok(RecordReader {
            header,
            path,
            input: BufReader::with_capacity(1 << 20, file),
            next: 0,
            buf,
        })
    }

    pub fn header(&self) -> &RecordHeader {
        &self.header
    }

    /// Next record and its step, or `None` at the end.
    pub fn next_record<T: Real>(&mut self) -> Result<Option<(u64, Vec<T>)>> {
        if self.next >= self.header.n_records {
            return Ok(None);
        }
        self.input
            .read_exact(&mut self.buf)
            .map_err(|e| Error::io(&self.path, e))?;
        let values = self
            .buf
            .chunks_exact(8)
            .map(|c| T::of(f64::from_le_bytes(c.try_into().expect("8-byte chunk"))))
            .collect();
        let step = self.header.steps[self.next];
        self.next += 1;
        Ok(Some((step, values)))
    }

    pub fn read_all<T: Real>(mut self) -> Result<(RecordHeader, Vec<(u64, Vec<T>)>)> {
        let mut out = Vec::with_capacity(self.header.n_records);
        while let Some(r) = self.next_record()? {
            out.push(r);
        }
        Ok((self.header, out))
    }
}

/// Binary PGM (P5, maxval 255) of a `side × side` field, row-major, scaled
/// linearly so that 0 maps to 0 and the field maximum to 255. Negative
/// values clip to 0; a field with no positive value is all black.
pub fn pgm_bytes<T: Real>(field: &[T], side: usize) -> Result<Vec<u8>> {
    crate::error::check_len("image field", side * side, field.len())?;
    let max = field
        .iter()
        .map(|v| v.as_f64())
        .filter(|v| v.is_finite())
        .fold(0.0f64, f64::max);
    let mut out = format!("P5\n{side} {side}\n255\n").into_bytes();
    out.extend(field.iter().map(|v| {
        let v = v.as_f64();
        if max > 0.0 && v.is_finite() {
            (255.0 * (v / max).clamp(0.0, 1.0)).round() as u8
        } else {
            0
        }
    }));
    Ok(out)
}

pub fn write_pgm<T: Real>(path: &Path, field: &[T], side: usize) -> Result<()> {
    write_atomic(path, &pgm_bytes(field, side)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(side: usize, n_components: usize) -> RecordHeader {
        RecordHeader {
            format_version: FORMAT_VERSION,
            kind: "state".into(),
            layout: RecordLayout::SpeciesMajor,
            side,
            n_components,
            n_records: 0,
            dt: 0.01,
            seed: 9,
            steps: Vec::new(),
            parameters: toml::Table::new(),
        }
    }

    #[test]
    fn records_round_trip_bit_identically() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.bin");
        let mut w = RecordWriter::create(&path, 8).unwrap();
        let a: Vec<f64> = (0..8).map(|i| (i as f64 * 0.1).sin() / 3.0).collect();
        let b: Vec<f64> = (0..8).map(|i| f64::from(i) * 1e-300).collect();
        w.push(0, &a).unwrap();
        w.push(5, &b).unwrap();
        assert!(!path.exists());
        let h = w.finish(header(2, 2)).unwrap();
        assert_eq!(h.steps, vec![0, 5]);
        let (h2, recs) = RecordReader::open(&path).unwrap().read_all::<f64>().unwrap();
        assert_eq!(h, h2);
        assert_eq!(recs, vec![(0, a), (5, b)]);
    }

    #[test]
    fn truncated_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.bin");
        let mut w = RecordWriter::create(&path, 4).unwrap();
        w.push(0, &[1.0f64; 4]).unwrap();
        w.finish(header(2, 1)).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..20]).unwrap();
        assert!(matches!(RecordReader::open(&path), Err(Error::Parse { .. })));
    }

    #[test]
    fn header_size_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let w = RecordWriter::create(dir.path().join("x.bin"), 5).unwrap();
        assert!(w.finish(header(2, 2)).is_err());
    }

    #[test]
    fn pgm_scaling() {
        let img = pgm_bytes(&[0.0, 0.5, 1.0, -1.0], 2).unwrap();
        let head = b"P5\n2 2\n255\n";
        assert_eq!(&img[..head.len()], head);
        assert_eq!(&img[head.len()..], &[0, 128, 255, 0]);
        let dark = pgm_bytes(&[0.0f32; 4], 2).unwrap();
        assert!(dark[head.len()..].iter().all(|&p| p == 0));
        assert!(pgm_bytes(&[0.0; 3], 2).is_err());
    }
}
