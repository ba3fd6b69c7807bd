//! Binary container for prototype stores and classifier checkpoints.
//!
//! All integers are `u32` little-endian, all reals `f32` little-endian.
//!
//! ```text
//! header:  magic "SFRB" | version | dim | record_count
//! record:  tag: u8
//!   tag 1 (prototype):
//!     label | flags (bit 0: reduced) | sample_count | shrinkage
//!     mean[dim] | cov[dim × dim]
//!     if reduced: rank | basis[dim × rank] | reduced_mean[rank] | reduced_cov[rank × rank]
//!   tag 2 (classifier):
//!     n_labels | labels[n] | weights[n × dim] | bias[n]
//! ```
//!
//! Matrices are row-major.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::classifier::LinearClassifier;
use crate::error::{Error, Result};
use crate::prototype::{ClassPrototype, PrototypeStore, ReducedForm};

pub const MAGIC: &[u8; 4] = b"SFRB";
pub const VERSION: u32 = 1;
const TAG_PROTOTYPE: u8 = 1;
const TAG_CLASSIFIER: u8 = 2;
const FLAG_REDUCED: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub store: PrototypeStore,
    pub classifier: Option<LinearClassifier>,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn f32(&mut self, v: f64) {
        self.0.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fn vector(&mut self, v: &DVector<f64>) {
        v.iter().for_each(|&x| self.f32(x));
    }
    fn matrix(&mut self, m: &DMatrix<f64>) {
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                self.f32(m[(i, j)]);
            }
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::parse("checkpoint", format!("truncated at byte {}", self.pos)));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
    fn f32(&mut self) -> Result<f64> {
        let b = self.take(4)?;
        let v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
        if !v.is_finite() {
            return Err(Error::parse("checkpoint", format!("non-finite value at byte {}", self.pos - 4)));
        }
        Ok(f64::from(v))
    }
    fn vector(&mut self, n: usize) -> Result<DVector<f64>> {
        let v: Result<Vec<f64>> = (0..n).map(|_| self.f32()).collect();
        Ok(DVector::from_vec(v?))
    }
    fn matrix(&mut self, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
        let v: Result<Vec<f64>> = (0..rows * cols).map(|_| self.f32()).collect();
        Ok(DMatrix::from_row_slice(rows, cols, &v?))
    }
}

pub fn encode(store: &PrototypeStore, classifier: Option<&LinearClassifier>) -> Result<Vec<u8>> {
    let dim = store.dim();
    if let Some(c) = classifier {
        if c.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: c.dim(),
            });
        }
    }
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(VERSION as usize);
    w.u32(dim);
    w.u32(store.len() + usize::from(classifier.is_some()));
    for p in store.iter() {
        w.u8(TAG_PROTOTYPE);
        w.u32(p.label as usize);
        w.u32(if p.is_reduced() { FLAG_REDUCED as usize } else { 0 });
        w.u32(p.sample_count);
        w.f32(p.shrinkage);
        w.vector(&p.mean);
        w.matrix(&p.cov);
        if let Some(red) = &p.reduced {
            w.u32(red.rank());
            w.matrix(&red.basis);
            w.vector(&red.mean);
            w.matrix(&red.cov);
        }
    }
    if let Some(c) = classifier {
        w.u8(TAG_CLASSIFIER);
        w.u32(c.labels().len());
        c.labels().iter().for_each(|&l| w.u32(l as usize));
        c.weights().iter().for_each(|&x| w.f32(x));
        c.bias().iter().for_each(|&x| w.f32(x));
    }
    Ok(w.0)
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::parse("checkpoint", "bad magic"));
    }
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(Error::parse("checkpoint", format!("unsupported version {version}")));
    }
    let dim = r.u32()?;
    let count = r.u32()?;
    let mut store = PrototypeStore::new(dim);
    let mut classifier = None;
    for _ in 0..count {
        match r.u8()? {
            TAG_PROTOTYPE => {
                let label = r.u32()? as u32;
                let flags = r.u32()? as u32;
                let sample_count = r.u32()?;
                let shrinkage = r.f32()?;
                let mean = r.vector(dim)?;
                let cov = r.matrix(dim, dim)?;
                let reduced = if flags & FLAG_REDUCED != 0 {
                    let rank = r.u32()?;
                    if rank > dim {
                        return Err(Error::parse("checkpoint", format!("rank {rank} exceeds dim {dim}")));
                    }
                    Some(ReducedForm {
                        basis: r.matrix(dim, rank)?,
                        mean: r.vector(rank)?,
                        cov: r.matrix(rank, rank)?,
                    })
                } else {
                    None
                };
                store.insert(ClassPrototype {
                    label,
                    mean,
                    cov,
                    reduced,
                    sample_count,
                    shrinkage,
                })?;
            }
            TAG_CLASSIFIER => {
                if classifier.is_some() {
                    return Err(Error::parse("checkpoint", "more than one classifier record"));
                }
                let n = r.u32()?;
                let labels: Result<Vec<u32>> = (0..n).map(|_| r.u32().map(|v| v as u32)).collect();
                let weights: Result<Vec<f64>> = (0..n * dim).map(|_| r.f32()).collect();
                let bias: Result<Vec<f64>> = (0..n).map(|_| r.f32()).collect();
                classifier = Some(LinearClassifier::from_parts(dim, labels?, weights?, bias?)?);
            }
            tag => return Err(Error::parse("checkpoint", format!("unknown record tag {tag}"))),
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::parse("checkpoint", "trailing bytes after last record"));
    }
    Ok(Checkpoint { store, classifier })
}

pub fn write_checkpoint(path: &Path, store: &PrototypeStore, classifier: Option<&LinearClassifier>) -> Result<()> {
    let bytes = encode(store, classifier)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
