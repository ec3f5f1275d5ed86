//! Binary model container: named sections of matrices, vectors, scalars and
//! strings.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "XGF1"                       magic, 4 bytes
//! version                      u32
//! section count                u32
//! per section:
//!   name length                u32, then UTF-8 name bytes
//!   kind tag                   u8: 0 matrix, 1 vector, 2 scalar, 3 string
//!   matrix: rows u64, cols u64, rows*cols f64 row-major
//!   vector: len u64, len f64
//!   scalar: one f64
//!   string: byte length u64, then UTF-8 bytes
//! ```

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"XGF1";
pub const VERSION: u32 = 1;

const TAG_MATRIX: u8 = 0;
const TAG_VECTOR: u8 = 1;
const TAG_SCALAR: u8 = 2;
const TAG_STRING: u8 = 3;

#[derive(Debug, Clone, PartialEq)]
pub enum Section {
    Matrix(DMatrix<f64>),
    Vector(Vec<f64>),
    Scalar(f64),
    Text(String),
}

/// Ordered set of uniquely named sections.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModelContainer {
    sections: Vec<(String, Section)>,
}

impl ModelContainer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, section: Section) -> Result<()> {
        let name = name.into();
        if self.get(&name).is_some() {
            return Err(Error::DuplicateSection(name));
        }
        self.sections.push((name, section));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Section> {
        self.sections.iter().find(|(n, _)| n == name).map(|(_, s)| s)
    }

    pub fn sections(&self) -> &[(String, Section)] {
        &self.sections
    }

    pub fn len(&self) -> usize {
        self.sections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sections.is_empty()
    }

    pub fn matrix(&self, name: &str) -> Result<&DMatrix<f64>> {
        match self.get(name) {
            Some(Section::Matrix(m)) => Ok(m),
            _ => Err(Error::MissingSection(name.to_string())),
        }
    }

    pub fn vector(&self, name: &str) -> Result<&[f64]> {
        match self.get(name) {
            Some(Section::Vector(v)) => Ok(v),
            _ => Err(Error::MissingSection(name.to_string())),
        }
    }

    pub fn scalar(&self, name: &str) -> Result<f64> {
        match self.get(name) {
            Some(Section::Scalar(v)) => Ok(*v),
            _ => Err(Error::MissingSection(name.to_string())),
        }
    }

    pub fn text(&self, name: &str) -> Result<&str> {
        match self.get(name) {
            Some(Section::Text(s)) => Ok(s),
            _ => Err(Error::MissingSection(name.to_string())),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.sections.len() as u32).to_le_bytes());
        for (name, section) in &self.sections {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            match section {
                Section::Matrix(m) => {
                    out.push(TAG_MATRIX);
                    out.extend_from_slice(&(m.nrows() as u64).to_le_bytes());
                    out.extend_from_slice(&(m.ncols() as u64).to_le_bytes());
                    for i in 0..m.nrows() {
                        for j in 0..m.ncols() {
                            out.extend_from_slice(&m[(i, j)].to_le_bytes());
                        }
                    }
                }
                Section::Vector(v) => {
                    out.push(TAG_VECTOR);
                    out.extend_from_slice(&(v.len() as u64).to_le_bytes());
                    for x in v {
                        out.extend_from_slice(&x.to_le_bytes());
                    }
                }
                Section::Scalar(x) => {
                    out.push(TAG_SCALAR);
                    out.extend_from_slice(&x.to_le_bytes());
                }
                Section::Text(s) => {
                    out.push(TAG_STRING);
                    out.extend_from_slice(&(s.len() as u64).to_le_bytes());
                    out.extend_from_slice(s.as_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4).map_err(|_| Error::BadMagic)?;
        if magic != MAGIC {
            return Err(Error::BadMagic);
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let count = r.u32()? as usize;
        let mut container = ModelContainer::new();
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Parse {
                    line: 0,
                    msg: "section name is not UTF-8".into(),
                })?
                .to_string();
            let section = match r.u8()? {
                TAG_MATRIX => {
                    let rows = r.len64()?;
                    let cols = r.len64()?;
                    let n = rows.checked_mul(cols).ok_or(Error::Truncated)?;
                    let data = r.f64s(n)?;
                    Section::Matrix(DMatrix::from_row_slice(rows, cols, &data))
                }
                TAG_VECTOR => {
                    let n = r.len64()?;
                    Section::Vector(r.f64s(n)?)
                }
                TAG_SCALAR => Section::Scalar(r.f64()?),
                TAG_STRING => {
                    let n = r.len64()?;
                    let s = std::str::from_utf8(r.take(n)?).map_err(|_| Error::Parse {
                        line: 0,
                        msg: "string section is not UTF-8".into(),
                    })?;
                    Section::Text(s.to_string())
                }
                tag => {
                    return Err(Error::Parse {
                        line: 0,
                        msg: format!("unknown section kind {tag}"),
                    })
                }
            };
            container.insert(name, section)?;
        }
        Ok(container)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or(Error::Truncated)?;
        if end > self.bytes.len() {
            return Err(Error::Truncated);
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn len64(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().unwrap());
        usize::try_from(v).map_err(|_| Error::Truncated)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or(Error::Truncated)?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn save_model_container(path: impl AsRef<Path>, container: &ModelContainer) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, container.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_model_container(path: impl AsRef<Path>) -> Result<ModelContainer> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    ModelContainer::from_bytes(&bytes)
}
