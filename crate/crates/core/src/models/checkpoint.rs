//! Binary checkpoint format, all integers and floats little-endian:
//!
//! | offset | size | field                                             |
//! |--------|------|---------------------------------------------------|
//! | 0      | 8    | magic `GNNCKPT1`                                  |
//! | 8      | 1    | architecture: 0 gcn, 1 gat, 2 appnp, 3 gprgnn     |
//! | 9      | 7    | zero padding                                      |
//! | 16     | 8    | u64 feature dim                                   |
//! | 24     | 8    | u64 classes                                       |
//! | 32     | 8    | u64 hidden                                        |
//! | 40     | 8    | u64 heads                                         |
//! | 48     | 8    | u64 hops                                          |
//! | 56     | 8    | f64 alpha                                         |
//! | 64     | 8    | f64 slope                                         |
//! | 72     | 8    | u64 tensor count T                                |
//!
//! followed by T records of `u64 rows, u64 cols, rows*cols f64` in
//! row-major order, in the architecture's tensor order.

use std::fs;
use std::path::Path;

use autodiff::Matrix;

use super::{Architecture, Dims, ModelConfig, ModelParams};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"GNNCKPT1";

fn arch_tag(a: Architecture) -> u8 {
    match a {
        Architecture::Gcn => 0,
        Architecture::Gat => 1,
        Architecture::Appnp => 2,
        Architecture::Gprgnn => 3,
    }
}

pub fn write_checkpoint(p: &ModelParams) -> Vec<u8> {
    let c = p.config();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(arch_tag(c.arch));
    out.extend_from_slice(&[0; 7]);
    for v in [p.dims().features, p.dims().classes, c.hidden, c.heads, c.hops] {
        out.extend_from_slice(&(v as u64).to_le_bytes());
    }
    out.extend_from_slice(&c.alpha.to_le_bytes());
    out.extend_from_slice(&c.slope.to_le_bytes());
    out.extend_from_slice(&(p.tensors().len() as u64).to_le_bytes());
    for t in p.tensors() {
        out.extend_from_slice(&(t.rows() as u64).to_le_bytes());
        out.extend_from_slice(&(t.cols() as u64).to_le_bytes());
        for v in t.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Checkpoint("size overflow".into()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<ModelParams> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let tag = r.take(8)?[0];
    let arch = match tag {
        0 => Architecture::Gcn,
        1 => Architecture::Gat,
        2 => Architecture::Appnp,
        3 => Architecture::Gprgnn,
        t => return Err(Error::Checkpoint(format!("unknown architecture tag {t}"))),
    };
    let dims = Dims {
        features: r.usize()?,
        classes: r.usize()?,
    };
    let config = ModelConfig {
        arch,
        hidden: r.usize()?,
        heads: r.usize()?,
        hops: r.usize()?,
        alpha: r.f64()?,
        slope: r.f64()?,
    };
    let count = r.usize()?;
    let mut tensors = Vec::with_capacity(count.min(16));
    for _ in 0..count {
        let (rows, cols) = (r.usize()?, r.usize()?);
        let len = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::Checkpoint("size overflow".into()))?;
        let mut data = Vec::with_capacity(len.min(bytes.len() / 8));
        for _ in 0..len {
            data.push(r.f64()?);
        }
        tensors.push(Matrix::from_vec(rows, cols, data)?);
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    ModelParams::from_tensors(config, dims, tensors).map_err(|e| Error::Checkpoint(e.to_string()))
}

pub fn save_checkpoint(p: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, write_checkpoint(p)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams> {
    let path = path.as_ref();
    read_checkpoint(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::init_model;

    #[test]
    fn round_trip_every_architecture() {
        for arch in Architecture::ALL {
            let p = init_model(
                &ModelConfig::new(arch),
                Dims {
                    features: 6,
                    classes: 3,
                },
                11,
            )
            .unwrap();
            let bytes = write_checkpoint(&p);
            assert_eq!(read_checkpoint(&bytes).unwrap(), p);
            assert!(read_checkpoint(&bytes[..bytes.len() - 1]).is_err());
            let mut bad = bytes.clone();
            bad[8] = 9;
            assert!(read_checkpoint(&bad).is_err());
        }
    }

    #[test]
    fn header_layout() {
        let p = init_model(
            &ModelConfig::new(Architecture::Appnp),
            Dims {
                features: 2,
                classes: 2,
            },
            0,
        )
        .unwrap();
        let b = write_checkpoint(&p);
        assert_eq!(&b[..8], b"GNNCKPT1");
        assert_eq!(b[8], 2);
        assert_eq!(u64::from_le_bytes(b[16..24].try_into().unwrap()), 2);
        assert_eq!(f64::from_le_bytes(b[56..64].try_into().unwrap()), 0.1);
        let expected = 80
            + [(2, 64), (1, 64), (64, 2), (1, 2)]
                .iter()
                .map(|(r, c)| 16 + 8 * r * c)
                .sum::<usize>();
        assert_eq!(b.len(), expected);
    }
}
