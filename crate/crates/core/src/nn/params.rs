//! Named parameters, seeded initialization, and the `DTCK` checkpoint format:
//! magic, u32 version, u32 parameter count, then per parameter a u32 name
//! length, the UTF-8 name, u32 rank, u64 dims, and f32 data, little-endian.

use std::collections::HashMap;
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::matrix::Matrix;

const MAGIC: &[u8; 4] = b"DTCK";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ParamError {
    #[error("duplicate parameter name {0:?}")]
    Duplicate(String),
    #[error("unknown parameter {0:?}")]
    Unknown(String),
    #[error("parameter {name:?}: expected shape {expected:?}, got {got:?}")]
    Shape {
        name: String,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("checkpoint: {0}")]
    Format(String),
}

/// Ordered collection of named f64 parameter matrices. Insertion order is
/// stable and defines checkpoint order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterStore {
    names: Vec<String>,
    values: Vec<Matrix<f64>>,
    index: HashMap<String, usize>,
    pub seed: u64,
    pub init_scheme: String,
}

impl ParameterStore {
    pub fn new(seed: u64) -> Self {
        ParameterStore {
            names: Vec::new(),
            values: Vec::new(),
            index: HashMap::new(),
            seed,
            init_scheme: "kaiming-uniform/zero-bias".into(),
        }
    }

    pub fn insert(&mut self, name: &str, value: Matrix<f64>) -> Result<(), ParamError> {
        if self.index.contains_key(name) {
            return Err(ParamError::Duplicate(name.into()));
        }
        self.index.insert(name.into(), self.names.len());
        self.names.push(name.into());
        self.values.push(value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Matrix<f64>> {
        self.index.get(name).map(|&i| &self.values[i])
    }

    pub fn expect(&self, name: &str) -> &Matrix<f64> {
        self.get(name).unwrap_or_else(|| panic!("missing parameter {name:?}"))
    }

    /// Replaces a value, keeping its shape fixed.
    pub fn set(&mut self, name: &str, value: Matrix<f64>) -> Result<(), ParamError> {
        let i = *self.index.get(name).ok_or_else(|| ParamError::Unknown(name.into()))?;
        if self.values[i].shape() != value.shape() {
            return Err(ParamError::Shape {
                name: name.into(),
                expected: self.values[i].shape(),
                got: value.shape(),
            });
        }
        self.values[i] = value;
        Ok(())
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Matrix<f64>> {
        self.index.get(name).map(|&i| &mut self.values[i])
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix<f64>)> {
        self.names.iter().map(|s| s.as_str()).zip(&self.values)
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Matrix<f64>)> {
        self.names.iter().map(|s| s.as_str()).zip(self.values.iter_mut())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|m| m.data().len()).sum()
    }

    /// Adds a dense layer `{prefix}.w` (`fan_in × fan_out`, Kaiming-uniform
    /// for ReLU gain) and `{prefix}.b` (`1 × fan_out`, zero).
    pub fn add_dense(&mut self, prefix: &str, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Result<(), ParamError> {
        let bound = (6.0 / fan_in.max(1) as f64).sqrt();
        let w = Matrix::from_fn(fan_in, fan_out, |_, _| rng.gen_range(-bound..bound));
        self.insert(&format!("{prefix}.w"), w)?;
        self.insert(&format!("{prefix}.b"), Matrix::zeros(1, fan_out))
    }

    /// Adds `{prefix}.{i}` dense layers for consecutive sizes.
    pub fn add_mlp(&mut self, prefix: &str, sizes: &[usize], rng: &mut ChaCha8Rng) -> Result<(), ParamError> {
        for (i, w) in sizes.windows(2).enumerate() {
            self.add_dense(&format!("{prefix}.{i}"), w[0], w[1], rng)?;
        }
        Ok(())
    }

    pub fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    /// Values rounded through f32, as stored in a checkpoint.
    pub fn rounded_to_f32(&self) -> Self {
        let mut out = self.clone();
        for v in &mut out.values {
            *v = v.map(|x| x as f32 as f64);
        }
        out
    }

    pub fn save<W: Write>(&self, mut w: W) -> Result<(), ParamError> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.names.len() as u32).to_le_bytes());
        for (name, m) in self.iter() {
            buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
            buf.extend_from_slice(name.as_bytes());
            buf.extend_from_slice(&2u32.to_le_bytes());
            buf.extend_from_slice(&(m.rows() as u64).to_le_bytes());
            buf.extend_from_slice(&(m.cols() as u64).to_le_bytes());
            for &x in m.data() {
                buf.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn load<R: Read>(mut r: R) -> Result<Self, ParamError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let mut cur = Cursor { bytes: &bytes, pos: 0 };
        if cur.take(4)? != MAGIC {
            return Err(ParamError::Format("bad magic".into()));
        }
        let version = cur.u32()?;
        if version != VERSION {
            return Err(ParamError::Format(format!("unsupported version {version}")));
        }
        let count = cur.u32()?;
        let mut store = ParameterStore::new(0);
        store.init_scheme = "checkpoint".into();
        for _ in 0..count {
            let len = cur.u32()? as usize;
            let name = std::str::from_utf8(cur.take(len)?)
                .map_err(|_| ParamError::Format("parameter name is not UTF-8".into()))?
                .to_string();
            let rank = cur.u32()?;
            let dims: Vec<u64> = (0..rank).map(|_| cur.u64()).collect::<Result<_, _>>()?;
            let (rows, cols) = match dims[..] {
                [n] => (1, n as usize),
                [r, c] => (r as usize, c as usize),
                _ => return Err(ParamError::Format(format!("{name}: unsupported rank {rank}"))),
            };
            let raw = cur.take(rows * cols * 4)?;
            let data = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
                .collect();
            store.insert(&name, Matrix::from_vec(rows, cols, data))?;
        }
        if cur.pos != bytes.len() {
            return Err(ParamError::Format(format!("{} trailing bytes", bytes.len() - cur.pos)));
        }
        Ok(store)
    }

    /// Checks that `other` has exactly the same names and shapes.
    pub fn check_compatible(&self, other: &ParameterStore) -> Result<(), ParamError> {
        for (name, m) in self.iter() {
            let o = other.get(name).ok_or_else(|| ParamError::Unknown(name.into()))?;
            if o.shape() != m.shape() {
                return Err(ParamError::Shape {
                    name: name.into(),
                    expected: m.shape(),
                    got: o.shape(),
                });
            }
        }
        if let Some(extra) = other.names.iter().find(|n| !self.index.contains_key(*n)) {
            return Err(ParamError::Unknown(extra.clone()));
        }
        Ok(())
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ParamError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| ParamError::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, ParamError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self) -> Result<u64, ParamError> {
        let b = self.take(8)?;
        let mut a = [0u8; 8];
        a.copy_from_slice(b);
        Ok(u64::from_le_bytes(a))
    }
}
