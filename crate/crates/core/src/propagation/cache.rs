//! Binary stack cache.
//!
//! Layout (little-endian): magic `GMLP`, `u32` version, `u8` kind
//! (0 features, 1 labels), `u64` n, `u64` dim, `u32` steps, `u8` r-mode,
//! `u8` scheme kind (`0xFF` when absent), `f64` fixed alpha, 32-byte
//! fingerprint, then `steps + 1` row-major `f32` matrices. Smoothed label
//! matrices follow the raw ones when a scheme is recorded.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{FeatureStack, Fingerprint, LabelStack, ResidualScheme, MAX_STEPS};
use crate::error::{Error, Result};
use crate::graph::NormMode;
use crate::matrix::Matrix;

pub const CACHE_MAGIC: &[u8; 4] = b"GMLP";
pub const CACHE_VERSION: u32 = 1;

const KIND_FEATURES: u8 = 0;
const KIND_LABELS: u8 = 1;
const NO_SCHEME: u8 = 0xFF;

#[derive(Debug, Clone, PartialEq)]
pub enum CachedStack {
    Features(FeatureStack),
    Labels(LabelStack),
}

impl CachedStack {
    pub fn fingerprint(&self) -> Fingerprint {
        match self {
            CachedStack::Features(s) => s.fingerprint,
            CachedStack::Labels(s) => s.fingerprint,
        }
    }

    pub fn into_features(self) -> Result<FeatureStack> {
        match self {
            CachedStack::Features(s) => Ok(s),
            CachedStack::Labels(_) => Err(Error::Format("expected a feature cache, found labels".into())),
        }
    }

    pub fn into_labels(self) -> Result<LabelStack> {
        match self {
            CachedStack::Labels(s) => Ok(s),
            CachedStack::Features(_) => Err(Error::Format("expected a label cache, found features".into())),
        }
    }
}

impl From<FeatureStack> for CachedStack {
    fn from(s: FeatureStack) -> Self {
        CachedStack::Features(s)
    }
}

impl From<LabelStack> for CachedStack {
    fn from(s: LabelStack) -> Self {
        CachedStack::Labels(s)
    }
}

fn write_matrix(w: &mut impl Write, m: &Matrix) -> Result<()> {
    let mut buf = Vec::with_capacity(m.as_slice().len() * 4);
    for &v in m.as_slice() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

/// Writes a stack; matrix values are narrowed to `f32`.
pub fn cache_write(stack: &CachedStack, path: impl AsRef<Path>) -> Result<()> {
    let (kind, mats, smoothed, mode, scheme, fp) = match stack {
        CachedStack::Features(s) => (KIND_FEATURES, &s.mats, None, s.mode, None, s.fingerprint),
        CachedStack::Labels(s) => {
            let smoothed = s.scheme.map(|_| &s.smoothed);
            (KIND_LABELS, &s.mats, smoothed, s.mode, s.scheme, s.fingerprint)
        }
    };
    let (n, dim) = mats[0].shape();
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CACHE_MAGIC)?;
    w.write_all(&CACHE_VERSION.to_le_bytes())?;
    w.write_all(&[kind])?;
    w.write_all(&(n as u64).to_le_bytes())?;
    w.write_all(&(dim as u64).to_le_bytes())?;
    w.write_all(&((mats.len() - 1) as u32).to_le_bytes())?;
    w.write_all(&[mode.code()])?;
    w.write_all(&[scheme.map_or(NO_SCHEME, ResidualScheme::code)])?;
    w.write_all(&scheme.map_or(0.0, ResidualScheme::fixed_alpha).to_le_bytes())?;
    w.write_all(&fp.0)?;
    for m in mats.iter().chain(smoothed.into_iter().flatten()) {
        write_matrix(&mut w, m)?;
    }
    w.flush()?;
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn exact<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.inner
            .read_exact(&mut b)
            .map_err(|_| Error::Corrupt(format!("file ends inside {what}")))?;
        Ok(b)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.exact::<1>(what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.exact(what)?))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.exact(what)?))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.exact(what)?))
    }

    fn matrix(&mut self, rows: usize, cols: usize, index: usize) -> Result<Matrix> {
        let mut raw = vec![0u8; rows * cols * 4];
        self.inner
            .read_exact(&mut raw)
            .map_err(|_| Error::Corrupt(format!("file ends inside matrix {index}")))?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        Matrix::from_vec(rows, cols, data)
    }
}

/// Reads a stack written by [`cache_write`]. Nothing is returned unless the
/// whole file parses.
pub fn cache_read(path: impl AsRef<Path>) -> Result<CachedStack> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    let mut r = Reader {
        inner: BufReader::new(file),
    };
    let magic = r.exact::<4>("magic")?;
    if &magic != CACHE_MAGIC {
        return Err(Error::Format(format!("bad cache magic {magic:?}")));
    }
    let version = r.u32("version")?;
    if version != CACHE_VERSION {
        return Err(Error::Format(format!("unsupported cache version {version}")));
    }
    let kind = r.u8("kind")?;
    let n = r.u64("node count")? as usize;
    let dim = r.u64("dimension")? as usize;
    let steps = r.u32("step count")? as usize;
    let mode = NormMode::from_code(r.u8("r-mode")?).ok_or_else(|| Error::Format("unknown r-mode".into()))?;
    let scheme_code = r.u8("scheme")?;
    let alpha = r.f64("fixed alpha")?;
    let fingerprint = Fingerprint(r.exact::<32>("fingerprint")?);
    if steps > MAX_STEPS {
        return Err(Error::Format(format!("cache claims {steps} steps")));
    }
    n.checked_mul(dim)
        .and_then(|v| v.checked_mul(4 * (2 * steps + 2)))
        .ok_or_else(|| Error::Format("cache dimensions overflow".into()))?;

    let scheme = match scheme_code {
        NO_SCHEME => None,
        c => Some(ResidualScheme::from_parts(c, alpha).ok_or_else(|| Error::Format(format!("unknown scheme {c}")))?),
    };
    let mut mats = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        mats.push(r.matrix(n, dim, k)?);
    }
    let stack = match kind {
        KIND_FEATURES => {
            if scheme.is_some() {
                return Err(Error::Format("feature cache carries a residual scheme".into()));
            }
            CachedStack::Features(FeatureStack {
                mats,
                mode,
                fingerprint,
            })
        }
        KIND_LABELS => {
            let mut smoothed = Vec::new();
            if scheme.is_some() {
                for k in 0..=steps {
                    smoothed.push(r.matrix(n, dim, steps + 1 + k)?);
                }
            }
            CachedStack::Labels(LabelStack {
                mats,
                smoothed,
                scheme,
                mode,
                fingerprint,
            })
        }
        other => return Err(Error::Format(format!("unknown cache kind {other}"))),
    };
    let mut trailing = [0u8; 1];
    if r.inner.read(&mut trailing)? != 0 {
        return Err(Error::Corrupt("trailing bytes after last matrix".into()));
    }
    Ok(stack)
}

/// [`cache_read`], refusing a cache whose fingerprint differs from `expected`
/// unless `force` is set.
pub fn cache_read_checked(path: impl AsRef<Path>, expected: &Fingerprint, force: bool) -> Result<CachedStack> {
    let stack = cache_read(path)?;
    let found = stack.fingerprint();
    if found != *expected {
        if !force {
            return Err(Error::FingerprintMismatch {
                expected: expected.to_string(),
                found: found.to_string(),
            });
        }
        eprintln!("warning: using stale cache (fingerprint {found}, expected {expected})");
    }
    Ok(stack)
}
