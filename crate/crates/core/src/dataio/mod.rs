//! Feature files and the synthetic benchmark.
//!
//! The feature format is little-endian:
//!
//! ```text
//! magic  "HNDF"            4 bytes
//! version u32 = 1
//! count   u64              number of samples n
//! dim     u32              feature dimension d
//! n records of: id u64, label u64, d x f32
//! ```
//!
//! Features are `f32` on disk and `f64` in memory.

pub mod synth;

use std::collections::HashSet;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::Matrix;
use crate::taxonomy::{NodeId, Taxonomy};

pub const FEATURE_MAGIC: [u8; 4] = *b"HNDF";
pub const FEATURE_VERSION: u32 = 1;

/// Samples of `(id, label key, feature vector)` with a shared dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSet {
    ids: Vec<u64>,
    labels: Vec<u64>,
    features: Matrix,
    #[serde(skip)]
    seen: HashSet<u64>,
}

impl FeatureSet {
    pub fn new(dim: usize) -> Self {
        FeatureSet { ids: Vec::new(), labels: Vec::new(), features: Matrix::zeros(0, dim), seen: HashSet::new() }
    }

    pub fn push(&mut self, id: u64, label: u64, features: &[f64]) -> Result<()> {
        if !self.seen.insert(id) {
            return Err(Error::DuplicateSample(id));
        }
        self.features.push_row(features)?;
        self.ids.push(id);
        self.labels.push(label);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn labels(&self) -> &[u64] {
        &self.labels
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.features.row(i)
    }

    /// Labels mapped to taxonomy nodes; `None` for keys the taxonomy does not
    /// know (novel classes).
    pub fn resolve_labels(&self, t: &Taxonomy) -> Vec<Option<NodeId>> {
        self.labels.iter().map(|&k| t.resolve_key(k)).collect()
    }

    /// Keeps the samples whose index satisfies `keep`.
    pub fn filter(&self, mut keep: impl FnMut(usize) -> bool) -> FeatureSet {
        let mut out = FeatureSet::new(self.dim());
        for i in 0..self.len() {
            if keep(i) {
                out.push(self.ids[i], self.labels[i], self.row(i)).expect("ids stay unique");
            }
        }
        out
    }

    /// Applies `f` to every feature vector, producing a set of dimension `dim`.
    pub fn map_features(&self, dim: usize, mut f: impl FnMut(&[f64]) -> Result<Vec<f64>>) -> Result<FeatureSet> {
        let mut out = FeatureSet::new(dim);
        for i in 0..self.len() {
            out.push(self.ids[i], self.labels[i], &f(self.row(i))?)?;
        }
        Ok(out)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&FEATURE_MAGIC)?;
        w.write_u32::<LittleEndian>(FEATURE_VERSION)?;
        w.write_u64::<LittleEndian>(self.len() as u64)?;
        w.write_u32::<LittleEndian>(self.dim() as u32)?;
        for i in 0..self.len() {
            w.write_u64::<LittleEndian>(self.ids[i])?;
            w.write_u64::<LittleEndian>(self.labels[i])?;
            for &v in self.row(i) {
                w.write_f32::<LittleEndian>(v as f32)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<FeatureSet> {
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic)?;
        if magic != FEATURE_MAGIC {
            return Err(Error::BadMagic(magic));
        }
        let version = r.read_u32::<LittleEndian>().map_err(eof)?;
        if version != FEATURE_VERSION {
            return Err(Error::VersionMismatch(version));
        }
        let n = r.read_u64::<LittleEndian>().map_err(eof)?;
        let dim = r.read_u32::<LittleEndian>().map_err(eof)? as usize;
        let mut set = FeatureSet::new(dim);
        let mut row = vec![0.0; dim];
        let mut buf = vec![0f32; dim];
        for _ in 0..n {
            let id = r.read_u64::<LittleEndian>().map_err(eof)?;
            let label = r.read_u64::<LittleEndian>().map_err(eof)?;
            r.read_f32_into::<LittleEndian>(&mut buf).map_err(eof)?;
            for (d, s) in row.iter_mut().zip(&buf) {
                *d = *s as f64;
            }
            set.push(id, label, &row)?;
        }
        Ok(set)
    }

    /// Reads a `.hnf` file; use [`read_features_csv`] for CSV.
    pub fn read(path: impl AsRef<Path>) -> Result<FeatureSet> {
        FeatureSet::read_from(BufReader::new(File::open(path)?))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }
}

fn eof(e: io::Error) -> Error {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        Error::TruncatedFile
    } else {
        Error::Io(e)
    }
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(eof)
}

/// Reads `id,label,f0,...,fD` rows; the header row is required.
pub fn read_features_csv<R: Read>(r: R) -> Result<FeatureSet> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(r);
    let width = rdr.headers()?.len();
    if width < 2 {
        return Err(Error::Parse { line: 1, msg: "header needs id,label and feature columns".into() });
    }
    let mut set = FeatureSet::new(width - 2);
    let mut row = Vec::with_capacity(width - 2);
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let bad = |msg: String| Error::Parse { line, msg };
        if rec.len() != width {
            return Err(bad(format!("expected {width} fields, found {}", rec.len())));
        }
        let id = rec[0].parse().map_err(|_| bad(format!("bad id {:?}", &rec[0])))?;
        let label = rec[1].parse().map_err(|_| bad(format!("bad label {:?}", &rec[1])))?;
        row.clear();
        for f in rec.iter().skip(2) {
            row.push(f.parse().map_err(|_| bad(format!("bad value {f:?}")))?);
        }
        set.push(id, label, &row)?;
    }
    Ok(set)
}

/// Serializes a model or taxonomy with bincode.
pub fn save_binary<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    bincode::serialize_into(&mut w, value)?;
    w.flush()?;
    Ok(())
}

pub fn load_binary<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    Ok(bincode::deserialize_from(BufReader::new(File::open(path)?))?)
}
