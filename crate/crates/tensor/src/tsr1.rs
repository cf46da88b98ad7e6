//! `TSR1` tensor files and `.tsr1c` named containers.
//!
//! A record is the magic `TSR1`, a `u8` dtype code (0 = f32, 1 = f64), a `u8`
//! rank, `rank` little-endian `u64` extents, then the values in row-major
//! little-endian order. A container is a sequence of `(u32 LE name length,
//! UTF-8 name, record)` entries with no header.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"TSR1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32 = 0,
    F64 = 1,
}

/// Plain array payload of a record.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl RawTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        RawTensor { shape, data }
    }

    pub fn from_tensor(t: &Tensor) -> Self {
        RawTensor {
            shape: t.shape().to_vec(),
            data: t.to_vec(),
        }
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(self.data.clone(), &self.shape).expect("RawTensor shape invariant")
    }
}

pub fn write<W: Write>(w: &mut W, shape: &[usize], data: &[f64], dtype: DType) -> Result<()> {
    if shape.len() > u8::MAX as usize {
        return Err(TensorError::Format(format!("rank {} exceeds 255", shape.len())));
    }
    if shape.iter().product::<usize>() != data.len() {
        return Err(TensorError::Format("shape does not match data length".into()));
    }
    w.write_all(MAGIC)?;
    w.write_all(&[dtype as u8, shape.len() as u8])?;
    for &d in shape {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    match dtype {
        DType::F32 => {
            for &v in data {
                w.write_all(&(v as f32).to_le_bytes())?;
            }
        }
        DType::F64 => {
            for &v in data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

pub fn read<R: Read>(r: &mut R) -> Result<(RawTensor, DType)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(TensorError::Format(format!("bad magic {magic:?}")));
    }
    let mut hdr = [0u8; 2];
    r.read_exact(&mut hdr)?;
    let dtype = match hdr[0] {
        0 => DType::F32,
        1 => DType::F64,
        c => return Err(TensorError::Format(format!("unknown dtype code {c}"))),
    };
    let mut shape = Vec::with_capacity(hdr[1] as usize);
    for _ in 0..hdr[1] {
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        shape.push(u64::from_le_bytes(b) as usize);
    }
    let n: usize = shape.iter().product();
    let width = if dtype == DType::F32 { 4 } else { 8 };
    let mut bytes = vec![0u8; n * width];
    r.read_exact(&mut bytes)?;
    let data = match dtype {
        DType::F32 => bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect(),
        DType::F64 => bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
    };
    Ok((RawTensor { shape, data }, dtype))
}

pub fn save(path: impl AsRef<Path>, t: &RawTensor, dtype: DType) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write(&mut w, &t.shape, &t.data, dtype)?;
    w.flush()?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<RawTensor> {
    let mut r = BufReader::new(File::open(path)?);
    Ok(read(&mut r)?.0)
}

pub fn save_container<'a>(
    path: impl AsRef<Path>,
    records: impl IntoIterator<Item = (&'a str, &'a RawTensor)>,
    dtype: DType,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for (name, t) in records {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        write(&mut w, &t.shape, &t.data, dtype)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_container(path: impl AsRef<Path>) -> Result<Vec<(String, RawTensor)>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    loop {
        let mut len = [0u8; 4];
        match r.read_exact(&mut len) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        }
        let mut name = vec![0u8; u32::from_le_bytes(len) as usize];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|e| TensorError::Format(e.to_string()))?;
        out.push((name, read(&mut r)?.0));
    }
    Ok(out)
}
