//! On-disk formats. All integers and floats are little-endian.
//!
//! # Codebook file
//!
//! ```text
//! u64 K           codewords per head
//! u64 d           codeword dimension
//! u64 num_heads
//! f64 × (num_heads · K · d)   head 0 row-major, then head 1, ...
//! ```
//!
//! Reservoir snapshots use the same layout with `K` = rows held and
//! `num_heads = 1`.
//!
//! # Checkpoint container
//!
//! ```text
//! 8 bytes  magic "VQLABCK1"
//! u32      entry count
//! entries, each:
//!   u16    name length, then the UTF-8 name
//!   u8     kind: 0 = f64 matrix, 1 = u64 vector, 2 = raw bytes
//!   kind 0: u64 rows, u64 cols, rows·cols × f64
//!   kind 1: u64 len, len × u64
//!   kind 2: u64 len, len bytes
//! ```

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Result, VqError};
use crate::numerics::Matrix;
use crate::quantizer::Codebook;

const MAGIC: &[u8; 8] = b"VQLABCK1";

fn put_u64(w: &mut impl Write, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn get_f64(r: &mut impl Read) -> Result<f64> {
    Ok(f64::from_bits(get_u64(r)?))
}

fn get_len(r: &mut impl Read, what: &str) -> Result<usize> {
    let v = get_u64(r)?;
    usize::try_from(v)
        .ok()
        .filter(|&n| n < (1 << 40))
        .ok_or_else(|| VqError::Format(format!("implausible {what} {v}")))
}

pub fn write_codebooks(mut w: impl Write, codebooks: &[Codebook]) -> Result<()> {
    let first = codebooks
        .first()
        .ok_or_else(|| VqError::InvalidArgument("no codebooks to write".into()))?;
    let (k, d) = (first.size(), first.dim());
    if codebooks.iter().any(|c| c.size() != k || c.dim() != d) {
        return Err(VqError::InvalidArgument("all heads must share K and d".into()));
    }
    put_u64(&mut w, k as u64)?;
    put_u64(&mut w, d as u64)?;
    put_u64(&mut w, codebooks.len() as u64)?;
    for cb in codebooks {
        for v in cb.words().data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_codebooks(mut r: impl Read) -> Result<Vec<Codebook>> {
    let k = get_len(&mut r, "codebook size")?;
    let d = get_len(&mut r, "codeword dimension")?;
    let heads = get_len(&mut r, "head count")?;
    let mut out = Vec::with_capacity(heads);
    for _ in 0..heads {
        let data = (0..k * d).map(|_| get_f64(&mut r)).collect::<Result<Vec<_>>>()?;
        out.push(Codebook::new(Matrix::new(k, d, data)?)?);
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(VqError::Format("trailing bytes after codebook data".into()));
    }
    Ok(out)
}

pub fn save_codebooks(path: impl AsRef<Path>, codebooks: &[Codebook]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_codebooks(&mut w, codebooks)?;
    w.flush()?;
    Ok(())
}

pub fn load_codebooks(path: impl AsRef<Path>) -> Result<Vec<Codebook>> {
    read_codebooks(BufReader::new(File::open(path)?))
}

/// Writes reservoir contents (or any point set) in the codebook layout.
pub fn save_points(path: impl AsRef<Path>, points: &Matrix) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    put_u64(&mut w, points.rows() as u64)?;
    put_u64(&mut w, points.cols() as u64)?;
    put_u64(&mut w, 1)?;
    for v in points.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub enum Entry {
    Matrix(Matrix),
    U64(Vec<u64>),
    Bytes(Vec<u8>),
}

/// Named arrays, written in name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Container {
    entries: BTreeMap<String, Entry>,
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, entry: Entry) {
        self.entries.insert(name.into(), entry);
    }

    pub fn put_matrix(&mut self, name: impl Into<String>, m: Matrix) {
        self.insert(name, Entry::Matrix(m));
    }

    pub fn put_vec(&mut self, name: impl Into<String>, v: &[f64]) {
        let m = Matrix::new(1, v.len(), v.to_vec()).expect("row vector");
        self.insert(name, Entry::Matrix(m));
    }

    pub fn put_u64s(&mut self, name: impl Into<String>, v: Vec<u64>) {
        self.insert(name, Entry::U64(v));
    }

    pub fn put_bytes(&mut self, name: impl Into<String>, v: Vec<u8>) {
        self.insert(name, Entry::Bytes(v));
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    fn missing(name: &str) -> VqError {
        VqError::Format(format!("checkpoint entry `{name}` missing or of the wrong kind"))
    }

    pub fn matrix(&self, name: &str) -> Result<&Matrix> {
        match self.entries.get(name) {
            Some(Entry::Matrix(m)) => Ok(m),
            _ => Err(Self::missing(name)),
        }
    }

    pub fn vec(&self, name: &str) -> Result<Vec<f64>> {
        Ok(self.matrix(name)?.data().to_vec())
    }

    pub fn u64s(&self, name: &str) -> Result<&[u64]> {
        match self.entries.get(name) {
            Some(Entry::U64(v)) => Ok(v),
            _ => Err(Self::missing(name)),
        }
    }

    pub fn bytes(&self, name: &str) -> Result<&[u8]> {
        match self.entries.get(name) {
            Some(Entry::Bytes(v)) => Ok(v),
            _ => Err(Self::missing(name)),
        }
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for (name, entry) in &self.entries {
            let nb = name.as_bytes();
            let len = u16::try_from(nb.len())
                .map_err(|_| VqError::InvalidArgument(format!("entry name too long: {name}")))?;
            w.write_all(&len.to_le_bytes())?;
            w.write_all(nb)?;
            match entry {
                Entry::Matrix(m) => {
                    w.write_all(&[0])?;
                    put_u64(&mut w, m.rows() as u64)?;
                    put_u64(&mut w, m.cols() as u64)?;
                    for v in m.data() {
                        w.write_all(&v.to_le_bytes())?;
                    }
                }
                Entry::U64(v) => {
                    w.write_all(&[1])?;
                    put_u64(&mut w, v.len() as u64)?;
                    for x in v {
                        put_u64(&mut w, *x)?;
                    }
                }
                Entry::Bytes(b) => {
                    w.write_all(&[2])?;
                    put_u64(&mut w, b.len() as u64)?;
                    w.write_all(b)?;
                }
            }
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(VqError::Format("not a checkpoint file (bad magic)".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let count = u32::from_le_bytes(b4);
        let mut out = Container::new();
        for _ in 0..count {
            let mut b2 = [0u8; 2];
            r.read_exact(&mut b2)?;
            let mut name = vec![0u8; u16::from_le_bytes(b2) as usize];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name)
                .map_err(|_| VqError::Format("entry name is not UTF-8".into()))?;
            let mut kind = [0u8; 1];
            r.read_exact(&mut kind)?;
            let entry = match kind[0] {
                0 => {
                    let rows = get_len(&mut r, "rows")?;
                    let cols = get_len(&mut r, "cols")?;
                    let data = (0..rows * cols).map(|_| get_f64(&mut r)).collect::<Result<Vec<_>>>()?;
                    Entry::Matrix(Matrix::new(rows, cols, data)?)
                }
                1 => {
                    let len = get_len(&mut r, "length")?;
                    Entry::U64((0..len).map(|_| get_u64(&mut r)).collect::<Result<Vec<_>>>()?)
                }
                2 => {
                    let len = get_len(&mut r, "length")?;
                    let mut v = vec![0u8; len];
                    r.read_exact(&mut v)?;
                    Entry::Bytes(v)
                }
                k => return Err(VqError::Format(format!("unknown entry kind {k}"))),
            };
            out.insert(name, entry);
        }
        Ok(out)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}
