//! Versioned little-endian binary container of named, typed arrays.
//!
//! Layout: magic `XVFA`, `u32` version, `u64` record count, then per record a
//! `u32` name length, the UTF-8 name, a `u8` dtype, a `u32` rank, `rank` `u64`
//! dimensions and the raw little-endian elements.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use xvecforge_core::Tensor;

use crate::error::{io_err, Error, Result};

pub const MAGIC: &[u8; 4] = b"XVFA";
pub const VERSION: u32 = 1;

const DTYPE_F64: u8 = 0;
const DTYPE_U64: u8 = 1;
const DTYPE_U8: u8 = 2;

/// Upper bound on a single record, guarding allocation on corrupt input.
const MAX_ELEMENTS: u64 = 1 << 34;

#[derive(Clone, Debug, PartialEq)]
pub enum Value {
    F64(Tensor),
    U64(Vec<u64>),
    Bytes(Vec<u8>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub name: String,
    pub value: Value,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Archive {
    records: Vec<Record>,
}

impl Archive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn push(&mut self, name: impl Into<String>, value: Value) {
        self.records.push(Record { name: name.into(), value });
    }

    pub fn push_tensor(&mut self, name: impl Into<String>, t: Tensor) {
        self.push(name, Value::F64(t));
    }

    pub fn push_vector(&mut self, name: impl Into<String>, v: &[f64]) {
        self.push_tensor(name, Tensor::new([v.len()], v.to_vec()).expect("1-D shape matches"));
    }

    pub fn push_u64(&mut self, name: impl Into<String>, v: Vec<u64>) {
        self.push(name, Value::U64(v));
    }

    pub fn push_text(&mut self, name: impl Into<String>, s: &str) {
        self.push(name, Value::Bytes(s.as_bytes().to_vec()));
    }

    pub fn get(&self, name: &str) -> Option<&Value> {
        self.records.iter().find(|r| r.name == name).map(|r| &r.value)
    }

    fn require(&self, name: &str) -> Result<&Value> {
        self.get(name).ok_or_else(|| Error::MissingRecord(name.to_string()))
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        match self.require(name)? {
            Value::F64(t) => Ok(t),
            _ => Err(Error::Format(format!("record `{name}` is not a float array"))),
        }
    }

    pub fn u64s(&self, name: &str) -> Result<&[u64]> {
        match self.require(name)? {
            Value::U64(v) => Ok(v),
            _ => Err(Error::Format(format!("record `{name}` is not an integer array"))),
        }
    }

    pub fn scalar_u64(&self, name: &str) -> Result<u64> {
        match self.u64s(name)? {
            [v] => Ok(*v),
            v => Err(Error::Format(format!("record `{name}` holds {} integers, expected one", v.len()))),
        }
    }

    pub fn text(&self, name: &str) -> Result<&str> {
        match self.require(name)? {
            Value::Bytes(b) => std::str::from_utf8(b).map_err(|_| Error::Format(format!("record `{name}` is not UTF-8"))),
            _ => Err(Error::Format(format!("record `{name}` is not a byte string"))),
        }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_u32::<LE>(VERSION)?;
        w.write_u64::<LE>(self.records.len() as u64)?;
        for r in &self.records {
            let name = r.name.as_bytes();
            w.write_u32::<LE>(u32::try_from(name.len()).map_err(|_| Error::Format("record name too long".into()))?)?;
            w.write_all(name)?;
            let (dtype, shape): (u8, Vec<usize>) = match &r.value {
                Value::F64(t) => (DTYPE_F64, t.shape().to_vec()),
                Value::U64(v) => (DTYPE_U64, vec![v.len()]),
                Value::Bytes(b) => (DTYPE_U8, vec![b.len()]),
            };
            w.write_u8(dtype)?;
            w.write_u32::<LE>(shape.len() as u32)?;
            for d in &shape {
                w.write_u64::<LE>(*d as u64)?;
            }
            match &r.value {
                Value::F64(t) => t.data().iter().try_for_each(|v| w.write_f64::<LE>(*v))?,
                Value::U64(v) => v.iter().try_for_each(|x| w.write_u64::<LE>(*x))?,
                Value::Bytes(b) => w.write_all(b)?,
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("bad magic bytes".into()));
        }
        let version = r.read_u32::<LE>()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let count = r.read_u64::<LE>()?;
        let mut records = Vec::new();
        for _ in 0..count {
            let len = r.read_u32::<LE>()? as usize;
            let mut name = vec![0u8; len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|_| Error::Format("record name is not UTF-8".into()))?;
            let dtype = r.read_u8()?;
            let rank = r.read_u32::<LE>()?;
            if rank > 8 {
                return Err(Error::Format(format!("record `{name}` has rank {rank}")));
            }
            let shape = (0..rank).map(|_| r.read_u64::<LE>()).collect::<std::io::Result<Vec<u64>>>()?;
            let n = shape.iter().try_fold(1u64, |a, &d| a.checked_mul(d)).filter(|&n| n <= MAX_ELEMENTS);
            let n = n.ok_or_else(|| Error::Format(format!("record `{name}` is too large")))? as usize;
            let shape: Vec<usize> = shape.into_iter().map(|d| d as usize).collect();
            let value = match dtype {
                DTYPE_F64 => {
                    let mut data = vec![0.0; n];
                    r.read_f64_into::<LE>(&mut data)?;
                    Value::F64(Tensor::new(shape, data)?)
                }
                DTYPE_U64 | DTYPE_U8 if rank != 1 => {
                    return Err(Error::Format(format!("record `{name}` must be one-dimensional")));
                }
                DTYPE_U64 => {
                    let mut data = vec![0u64; n];
                    r.read_u64_into::<LE>(&mut data)?;
                    Value::U64(data)
                }
                DTYPE_U8 => {
                    let mut data = vec![0u8; n];
                    r.read_exact(&mut data)?;
                    Value::Bytes(data)
                }
                other => return Err(Error::Format(format!("record `{name}` has unknown dtype {other}"))),
            };
            records.push(Record { name, value });
        }
        Ok(Self { records })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(io_err(path))?;
        self.write_to(BufWriter::new(file)).map_err(|e| match e {
            Error::Stream(source) => Error::Io { path: path.into(), source },
            e => e,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(io_err(path))?;
        Self::read_from(BufReader::new(file)).map_err(|e| match e {
            Error::Stream(source) => Error::Io { path: path.into(), source },
            e => e,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to memory");
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::read_from(bytes)
    }
}
