//! The `MUTN` tensor container used for datasets and checkpoints.
//!
//! Byte layout (all integers little-endian):
//!
//! ```text
//! magic     4 bytes   "MUTN"
//! version   u32       currently 1
//! count     u64       number of entries
//! entry table, `count` times:
//!   name_len u32, name (UTF-8, name_len bytes)
//!   dtype    u8       0 = f32, 1 = f64, 2 = u8 (text / raw bytes)
//!   rank     u32
//!   dims     rank × u64
//! payloads, in entry order, each product(dims) × sizeof(dtype) bytes
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"MUTN";
pub const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    F32 = 0,
    F64 = 1,
    U8 = 2,
}

impl DType {
    fn from_u8(v: u8) -> Result<Self> {
        match v {
            0 => Ok(DType::F32),
            1 => Ok(DType::F64),
            2 => Ok(DType::U8),
            other => Err(Error::Format(format!("unknown dtype tag {other}"))),
        }
    }

    fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
            DType::U8 => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U8(Vec<u8>),
}

impl Payload {
    fn dtype(&self) -> DType {
        match self {
            Payload::F32(_) => DType::F32,
            Payload::F64(_) => DType::F64,
            Payload::U8(_) => DType::U8,
        }
    }

    fn len(&self) -> usize {
        match self {
            Payload::F32(v) => v.len(),
            Payload::F64(v) => v.len(),
            Payload::U8(v) => v.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub name: String,
    pub dims: Vec<u64>,
    pub payload: Payload,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TensorFile {
    entries: Vec<Entry>,
}

impl TensorFile {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn push(&mut self, entry: Entry) -> Result<()> {
        let n: u64 = entry.dims.iter().product();
        if n as usize != entry.payload.len() {
            return Err(Error::Format(format!("entry {} dims {:?} disagree with payload", entry.name, entry.dims)));
        }
        if self.entries.iter().any(|e| e.name == entry.name) {
            return Err(Error::Format(format!("duplicate entry {}", entry.name)));
        }
        self.entries.push(entry);
        Ok(())
    }

    pub fn push_tensor(&mut self, name: &str, t: &Tensor, dtype: DType) -> Result<()> {
        let payload = match dtype {
            DType::F32 => Payload::F32(t.data().iter().map(|&v| v as f32).collect()),
            DType::F64 => Payload::F64(t.data().to_vec()),
            DType::U8 => return Err(Error::Format("tensors are stored as f32 or f64".into())),
        };
        self.push(Entry {
            name: name.to_string(),
            dims: t.shape().iter().map(|&d| d as u64).collect(),
            payload,
        })
    }

    pub fn push_text(&mut self, name: &str, text: &str) -> Result<()> {
        self.push(Entry {
            name: name.to_string(),
            dims: vec![text.len() as u64],
            payload: Payload::U8(text.as_bytes().to_vec()),
        })
    }

    pub fn get(&self, name: &str) -> Result<&Entry> {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| Error::Format(format!("missing entry {name}")))
    }

    pub fn tensor(&self, name: &str) -> Result<Tensor> {
        let e = self.get(name)?;
        let data = match &e.payload {
            Payload::F32(v) => v.iter().map(|&x| x as f64).collect(),
            Payload::F64(v) => v.clone(),
            Payload::U8(_) => return Err(Error::Format(format!("entry {name} is not a tensor"))),
        };
        Tensor::new(e.dims.iter().map(|&d| d as usize).collect::<Vec<_>>(), data)
    }

    pub fn text(&self, name: &str) -> Result<String> {
        match &self.get(name)?.payload {
            Payload::U8(b) => String::from_utf8(b.clone()).map_err(|e| Error::Format(e.to_string())),
            _ => Err(Error::Format(format!("entry {name} is not text"))),
        }
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.entries.len() as u64).to_le_bytes())?;
        for e in &self.entries {
            w.write_all(&(e.name.len() as u32).to_le_bytes())?;
            w.write_all(e.name.as_bytes())?;
            w.write_all(&[e.payload.dtype() as u8])?;
            w.write_all(&(e.dims.len() as u32).to_le_bytes())?;
            for d in &e.dims {
                w.write_all(&d.to_le_bytes())?;
            }
        }
        for e in &self.entries {
            match &e.payload {
                Payload::F32(v) => v.iter().try_for_each(|x| w.write_all(&x.to_le_bytes()))?,
                Payload::F64(v) => v.iter().try_for_each(|x| w.write_all(&x.to_le_bytes()))?,
                Payload::U8(v) => w.write_all(v)?,
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("bad magic bytes".into()));
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported container version {version}")));
        }
        let count = read_u64(r)?;
        let mut table = Vec::new();
        for _ in 0..count {
            let name_len = read_u32(r)? as usize;
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|e| Error::Format(e.to_string()))?;
            let mut tag = [0u8; 1];
            r.read_exact(&mut tag)?;
            let dtype = DType::from_u8(tag[0])?;
            let rank = read_u32(r)? as usize;
            let dims = (0..rank).map(|_| read_u64(r)).collect::<Result<Vec<_>>>()?;
            table.push((name, dtype, dims));
        }
        let mut file = TensorFile::new();
        for (name, dtype, dims) in table {
            let n = dims.iter().product::<u64>() as usize;
            let mut buf = vec![0u8; n * dtype.size()];
            r.read_exact(&mut buf)?;
            let payload = match dtype {
                DType::F32 => Payload::F32(buf.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect()),
                DType::F64 => Payload::F64(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect()),
                DType::U8 => Payload::U8(buf),
            };
            file.push(Entry { name, dims, payload })?;
        }
        Ok(file)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        Self::read_from(&mut r)
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn documented_layout() {
        let mut f = TensorFile::new();
        f.push_tensor("w", &Tensor::vector(vec![1.5, -2.0]), DType::F32).unwrap();
        let mut bytes = Vec::new();
        f.write_to(&mut bytes).unwrap();
        let mut expected = b"MUTN".to_vec();
        expected.extend(1u32.to_le_bytes());
        expected.extend(1u64.to_le_bytes());
        expected.extend(1u32.to_le_bytes());
        expected.extend(b"w");
        expected.push(0);
        expected.extend(1u32.to_le_bytes());
        expected.extend(2u64.to_le_bytes());
        expected.extend(1.5f32.to_le_bytes());
        expected.extend((-2.0f32).to_le_bytes());
        assert_eq!(bytes, expected);
    }

    #[test]
    fn rejects_bad_magic_and_duplicates() {
        let bytes = b"NOPE\x01\x00\x00\x00".to_vec();
        assert!(TensorFile::read_from(&mut bytes.as_slice()).is_err());
        let mut f = TensorFile::new();
        f.push_text("a", "x").unwrap();
        assert!(f.push_text("a", "y").is_err());
    }

    #[test]
    fn mixed_entries_round_trip() {
        let mut f = TensorFile::new();
        f.push_text("header", "seed = 3").unwrap();
        f.push_tensor("x", &Tensor::new(vec![2, 2], vec![0.1, 0.2, 0.3, 0.4]).unwrap(), DType::F64).unwrap();
        f.push_tensor("s", &Tensor::scalar(2.5), DType::F64).unwrap();
        let mut bytes = Vec::new();
        f.write_to(&mut bytes).unwrap();
        let back = TensorFile::read_from(&mut bytes.as_slice()).unwrap();
        assert_eq!(back, f);
        assert_eq!(back.text("header").unwrap(), "seed = 3");
        assert_eq!(back.tensor("s").unwrap().item().unwrap(), 2.5);
    }
}
