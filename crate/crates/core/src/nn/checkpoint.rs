//! Checkpoint files: magic `GMCK`, `u32` version, `u32` parameter count, then
//! per parameter `u32` name length, UTF-8 name, `u64` rows, `u64` cols and
//! row-major `f64` values. A trailing `u8` flags an optional optimizer block
//! (kind, hyperparameters, step, both moment lists). All little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Optimizer, OptimizerConfig, OptimizerKind, Param, Parameterized};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"GMCK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: Vec<(String, Matrix)>,
    pub optimizer: Option<Optimizer>,
}

fn put_matrix(w: &mut impl Write, m: &Matrix) -> Result<()> {
    w.write_all(&(m.rows() as u64).to_le_bytes())?;
    w.write_all(&(m.cols() as u64).to_le_bytes())?;
    for v in m.as_slice() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_checkpoint(path: impl AsRef<Path>, params: &[&Param], optimizer: Option<&Optimizer>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for p in params {
        w.write_all(&(p.name.len() as u32).to_le_bytes())?;
        w.write_all(p.name.as_bytes())?;
        put_matrix(&mut w, &p.value)?;
    }
    match optimizer {
        None => w.write_all(&[0])?,
        Some(opt) => {
            w.write_all(&[1])?;
            let c = opt.config;
            w.write_all(&[match c.kind {
                OptimizerKind::Adam => 0,
                OptimizerKind::Sgd => 1,
            }])?;
            for v in [c.lr, c.beta1, c.beta2, c.eps, c.weight_decay] {
                w.write_all(&v.to_le_bytes())?;
            }
            w.write_all(&opt.step.to_le_bytes())?;
            w.write_all(&(opt.first_moment.len() as u32).to_le_bytes())?;
            for m in opt.first_moment.iter().chain(&opt.second_moment) {
                put_matrix(&mut w, m)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

struct Src<R>(R);

impl<R: Read> Src<R> {
    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut b = vec![0u8; n];
        self.0
            .read_exact(&mut b)
            .map_err(|_| Error::Corrupt("checkpoint ends early".into()))?;
        Ok(b)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }

    fn matrix(&mut self) -> Result<Matrix> {
        let rows = self.u64()? as usize;
        let cols = self.u64()? as usize;
        let len = rows
            .checked_mul(cols)
            .filter(|&l| l <= (1 << 34))
            .ok_or_else(|| Error::Format("implausible matrix shape in checkpoint".into()))?;
        let raw = self.bytes(len * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Matrix::from_vec(rows, cols, data)
    }
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    let mut r = Src(BufReader::new(file));
    if r.bytes(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a checkpoint file".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let count = r.u32()? as usize;
    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.bytes(len)?).map_err(|_| Error::Format("parameter name is not UTF-8".into()))?;
        params.push((name, r.matrix()?));
    }
    let optimizer = match r.u8()? {
        0 => None,
        1 => {
            let kind = match r.u8()? {
                0 => OptimizerKind::Adam,
                1 => OptimizerKind::Sgd,
                k => return Err(Error::Format(format!("unknown optimizer kind {k}"))),
            };
            let config = OptimizerConfig {
                kind,
                lr: r.f64()?,
                beta1: r.f64()?,
                beta2: r.f64()?,
                eps: r.f64()?,
                weight_decay: r.f64()?,
            };
            let step = r.u64()?;
            let n = r.u32()? as usize;
            let first_moment = (0..n).map(|_| r.matrix()).collect::<Result<Vec<_>>>()?;
            let second_moment = (0..n).map(|_| r.matrix()).collect::<Result<Vec<_>>>()?;
            Some(Optimizer {
                config,
                step,
                first_moment,
                second_moment,
            })
        }
        f => return Err(Error::Format(format!("bad optimizer flag {f}"))),
    };
    Ok(Checkpoint { params, optimizer })
}

/// Copies checkpoint values into `model`, matching by name and shape. Every
/// model parameter must be present.
pub fn load_params(model: &mut impl Parameterized, ckpt: &Checkpoint) -> Result<()> {
    for p in model.params_mut() {
        let (_, value) = ckpt
            .params
            .iter()
            .find(|(name, _)| *name == p.name)
            .ok_or_else(|| Error::Format(format!("checkpoint lacks parameter {}", p.name)))?;
        if value.shape() != p.value.shape() {
            return Err(Error::shape(format!(
                "parameter {} is {:?} in the checkpoint but {:?} in the model",
                p.name,
                value.shape(),
                p.value.shape()
            )));
        }
        p.value = value.clone();
    }
    Ok(())
}
