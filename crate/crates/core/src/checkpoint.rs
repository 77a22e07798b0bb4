//! Binary checkpoints: model parameters plus optional optimizer state.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic      8 bytes  "GACSECKP"
//! version    u32      1
//! d0..d3     4 × u64
//! users      u64
//! items      u64
//! seed       u64
//! epoch      u64
//! slope      f64
//! has_optim  u8
//! tables     8 × { rows u64, cols u64, rows·cols × f64 }   (E, E_UC, E_IC, W0, W1, W2, V, P)
//! -- when has_optim = 1 --
//! step       u64
//! lr, β1, β2, ε  4 × f64
//! sparse     u8
//! m tables   8 × { rows u64, cols u64, data }
//! v tables   8 × { rows u64, cols u64, data }
//! ```
//!
//! Floats are stored bit-exactly, so a round trip reproduces the model.

use std::fs;
use std::path::Path;

use crate::linalg::Matrix;
use crate::model::{Dims, Model, ModelConfig, Params, Table};
use crate::optim::{AdamConfig, AdamState};
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"GACSECKP";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub seed: u64,
    pub epoch: u64,
    pub optimizer: Option<AdamState>,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, x: u8) {
        self.0.push(x);
    }
    fn u32(&mut self, x: u32) {
        self.0.extend_from_slice(&x.to_le_bytes());
    }
    fn u64(&mut self, x: u64) {
        self.0.extend_from_slice(&x.to_le_bytes());
    }
    fn f64(&mut self, x: f64) {
        self.0.extend_from_slice(&x.to_le_bytes());
    }
    fn matrix(&mut self, m: &Matrix) {
        self.u64(m.rows() as u64);
        self.u64(m.cols() as u64);
        self.0.reserve(m.as_slice().len() * 8);
        for &x in m.as_slice() {
            self.f64(x);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Checkpoint("size does not fit in memory".into()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn matrix(&mut self, expect: (usize, usize), what: &str) -> Result<Matrix> {
        let (rows, cols) = (self.usize()?, self.usize()?);
        if (rows, cols) != expect {
            return Err(Error::Checkpoint(format!(
                "{what} is {rows}x{cols}, expected {}x{}",
                expect.0, expect.1
            )));
        }
        let bytes = self.take(rows * cols * 8)?;
        let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(Matrix::from_vec(rows, cols, data))
    }
}

pub fn encode(ckpt: &Checkpoint) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(VERSION);
    let Dims { d0, d1, d2, d3 } = ckpt.model.dims();
    for d in [d0, d1, d2, d3] {
        w.u64(d as u64);
    }
    w.u64(ckpt.model.num_users() as u64);
    w.u64(ckpt.model.num_items() as u64);
    w.u64(ckpt.seed);
    w.u64(ckpt.epoch);
    w.f64(ckpt.model.config.leaky_slope);
    w.u8(ckpt.optimizer.is_some() as u8);
    for &t in Table::ALL.iter() {
        w.matrix(ckpt.model.params.table(t));
    }
    if let Some(opt) = &ckpt.optimizer {
        w.u64(opt.step_count());
        let c = opt.config;
        for x in [c.learning_rate, c.beta1, c.beta2, c.epsilon] {
            w.f64(x);
        }
        w.u8(c.sparse as u8);
        let (m, v) = opt.moment_tables();
        for mat in m.iter().chain(v) {
            w.matrix(mat);
        }
    }
    w.0
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let dims = Dims {
        d0: r.usize()?,
        d1: r.usize()?,
        d2: r.usize()?,
        d3: r.usize()?,
    };
    let (users, items) = (r.usize()?, r.usize()?);
    let seed = r.u64()?;
    let epoch = r.u64()?;
    let leaky_slope = r.f64()?;
    let has_optim = match r.u8()? {
        0 => false,
        1 => true,
        x => return Err(Error::Checkpoint(format!("invalid optimizer flag {x}"))),
    };
    let mut params = Params::zeros(dims, users, items);
    for &t in Table::ALL.iter() {
        let shape = Params::expected_shape(t, dims, users, items);
        *params.table_mut(t) = r.matrix(shape, t.name())?;
    }
    let optimizer = if has_optim {
        let t = r.u64()?;
        let config = AdamConfig {
            learning_rate: r.f64()?,
            beta1: r.f64()?,
            beta2: r.f64()?,
            epsilon: r.f64()?,
            sparse: r.u8()? != 0,
        };
        let mut moments = Vec::with_capacity(2 * Table::ALL.len());
        for k in 0..2 * Table::ALL.len() {
            let table = Table::ALL[k % Table::ALL.len()];
            let shape = Params::expected_shape(table, dims, users, items);
            moments.push(r.matrix(shape, table.name())?);
        }
        let v = moments.split_off(Table::ALL.len());
        Some(AdamState::from_parts(config, t, moments, v, &params)?)
    } else {
        None
    };
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let model = Model::from_params(ModelConfig { dims, leaky_slope }, params)?;
    Ok(Checkpoint {
        model,
        seed,
        epoch,
        optimizer,
    })
}

/// Write atomically: the file is replaced only once fully written.
pub fn save(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    let tmp = path.with_extension("bin.tmp");
    fs::write(&tmp, encode(ckpt)).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
