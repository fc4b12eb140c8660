//! Flat tensor container: a one-line text header followed by raw
//! little-endian f32 payload, plus the 8-bit PGM writer used for previews.
//!
//! Header example: `TOMOTX1 dtype=f32 shape=180x64 byte_order=little`

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &str = "TOMOTX1";

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Container {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape {
                op: "container",
                lhs: shape,
                rhs: vec![data.len()],
            });
        }
        Ok(Container { shape, data })
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        let shape_str = self
            .shape
            .iter()
            .map(|d| d.to_string())
            .collect::<Vec<_>>()
            .join("x");
        writeln!(
            w,
            "{MAGIC} dtype=f32 shape={shape_str} byte_order=little"
        )?;
        let mut buf = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut header = Vec::new();
        let mut byte = [0u8; 1];
        loop {
            let n = r
                .read(&mut byte)
                .map_err(|e| Error::Format(format!("header read: {e}")))?;
            if n == 0 {
                return Err(Error::Format("truncated header".into()));
            }
            if byte[0] == b'\n' {
                break;
            }
            header.push(byte[0]);
            if header.len() > 4096 {
                return Err(Error::Format("unterminated header".into()));
            }
        }
        let header = String::from_utf8(header)
            .map_err(|_| Error::Format("header is not UTF-8".into()))?;
        let mut parts = header.split_whitespace();
        match parts.next() {
            Some(MAGIC) => {}
            other => {
                return Err(Error::Format(format!(
                    "bad magic: expected {MAGIC}, got {other:?}"
                )))
            }
        }
        let mut shape: Option<Vec<usize>> = None;
        for kv in parts {
            match kv.split_once('=') {
                Some(("dtype", "f32")) => {}
                Some(("dtype", other)) => {
                    return Err(Error::Format(format!("unsupported dtype {other}")))
                }
                Some(("byte_order", "little")) => {}
                Some(("byte_order", other)) => {
                    return Err(Error::Format(format!("unsupported byte order {other}")))
                }
                Some(("shape", s)) => {
                    let dims = s
                        .split('x')
                        .map(|d| d.parse::<usize>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|_| Error::Format(format!("bad shape field {s}")))?;
                    shape = Some(dims);
                }
                _ => return Err(Error::Format(format!("bad header field {kv}"))),
            }
        }
        let shape = shape.ok_or_else(|| Error::Format("missing shape field".into()))?;
        let n: usize = shape.iter().product();
        let mut payload = vec![0u8; n * 4];
        r.read_exact(&mut payload)
            .map_err(|_| Error::Format("payload shorter than header shape".into()))?;
        // Reject trailing bytes.
        let mut extra = [0u8; 1];
        if r.read(&mut extra).unwrap_or(0) != 0 {
            return Err(Error::Format("payload longer than header shape".into()));
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Container { shape, data })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(&mut BufReader::new(f))
    }
}

/// Write a min-max scaled 8-bit binary PGM (P5) preview of a 2-D array.
pub fn write_pgm(path: &Path, width: usize, height: usize, values: &[f32]) -> Result<()> {
    assert_eq!(values.len(), width * height);
    let (mut lo, mut hi) = (f32::INFINITY, f32::NEG_INFINITY);
    for &v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let span = if hi > lo { hi - lo } else { 1.0 };
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    (|| {
        write!(w, "P5\n{width} {height}\n255\n")?;
        let bytes: Vec<u8> = values
            .iter()
            .map(|&v| (((v - lo) / span) * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect();
        w.write_all(&bytes)
    })()
    .map_err(|e| Error::io(path, e))
}
