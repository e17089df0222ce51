//! Flat binary container for named tensors.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "SRFE" | version: u32 | { name_len: u16 | name | rank: u8 | dims: u32 × rank | f64 × Π dims }*
//! ```
//!
//! Entries run until end of file.

use std::io::{Read, Write};
use std::path::Path;

use super::{ParamSet, Parameter};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SRFE";
pub const VERSION: u32 = 1;

/// One named tensor as stored in a checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorEntry {
    pub name: String,
    pub dims: Vec<usize>,
    pub values: Vec<f64>,
}

pub fn write_entries<W: Write>(mut w: W, entries: &[TensorEntry]) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    for e in entries {
        let name = e.name.as_bytes();
        let name_len = u16::try_from(name.len()).map_err(|_| {
            std::io::Error::new(std::io::ErrorKind::InvalidInput, "tensor name too long")
        })?;
        w.write_all(&name_len.to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&[e.dims.len() as u8])?;
        for &d in &e.dims {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for v in &e.values {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint(format!(
                "truncated {what} at byte {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
}

pub fn read_entries<R: Read>(mut r: R) -> Result<Vec<TensorEntry>> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut c = Cursor { buf: &buf, pos: 0 };
    if c.take(4, "magic")? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = u32::from_le_bytes(c.take(4, "version")?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let mut out = Vec::new();
    while c.pos < buf.len() {
        let name_len = u16::from_le_bytes(c.take(2, "name length")?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(c.take(name_len, "name")?)
            .map_err(|_| Error::Checkpoint(format!("non-utf8 name at byte {}", c.pos)))?
            .to_owned();
        let rank = c.take(1, "rank")?[0] as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(u32::from_le_bytes(c.take(4, "dims")?.try_into().unwrap()) as usize);
        }
        let n: usize = dims.iter().product();
        let raw = c.take(n * 8, "values")?;
        let values = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        out.push(TensorEntry { name, dims, values });
    }
    Ok(out)
}

pub fn save_params(params: &ParamSet, path: &Path) -> Result<()> {
    let entries: Vec<TensorEntry> = params
        .iter()
        .map(|(_, p)| TensorEntry {
            name: p.name.clone(),
            dims: p.shape().to_vec(),
            values: p.values.clone(),
        })
        .collect();
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_entries(std::io::BufWriter::new(f), &entries).map_err(|e| Error::io(path, e))
}

/// Loads a checkpoint as a fresh [`ParamSet`] with zeroed gradients.
pub fn load_params(path: &Path) -> Result<ParamSet> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut ps = ParamSet::new();
    for e in read_entries(std::io::BufReader::new(f))? {
        let p = Parameter::new(e.name.clone(), e.dims, e.values)
            .map_err(|_| Error::Checkpoint(format!("tensor `{}` has unsupported rank", e.name)))?;
        ps.push(p);
    }
    Ok(ps)
}

/// Copies values from `source` into same-named parameters of `target`.
pub fn restore_into(target: &mut ParamSet, source: &ParamSet) -> Result<()> {
    let ids: Vec<_> = target.ids().collect();
    for id in ids {
        let name = target.get(id).name.clone();
        let src = source
            .by_name(&name)
            .map(|s| source.get(s))
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))?;
        if src.shape() != target.get(id).shape() {
            return Err(Error::Checkpoint(format!(
                "tensor `{name}` has shape {:?}, expected {:?}",
                src.shape(),
                target.get(id).shape()
            )));
        }
        target.get_mut(id).values.copy_from_slice(&src.values);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_bytes() {
        let mut buf = Vec::new();
        write_entries(
            &mut buf,
            &[TensorEntry {
                name: "b".into(),
                dims: vec![2],
                values: vec![1.0, -0.5],
            }],
        )
        .unwrap();
        assert_eq!(&buf[..4], b"SRFE");
        assert_eq!(&buf[4..8], &[1, 0, 0, 0]);
        assert_eq!(&buf[8..10], &[1, 0]);
        assert_eq!(buf[10], b'b');
        assert_eq!(buf[11], 1);
        assert_eq!(&buf[12..16], &[2, 0, 0, 0]);
        assert_eq!(&buf[16..24], &1.0f64.to_le_bytes());
        assert_eq!(buf.len(), 32);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(read_entries(&b"SRFX\x01\0\0\0"[..]).is_err());
        let mut buf = Vec::new();
        write_entries(
            &mut buf,
            &[TensorEntry {
                name: "w".into(),
                dims: vec![2, 2],
                values: vec![0.0; 4],
            }],
        )
        .unwrap();
        buf.pop();
        let err = read_entries(&buf[..]).unwrap_err().to_string();
        assert!(err.contains("truncated values"), "{err}");
    }
}
