//! Feature datasets: the on-disk manifest plus raw `f32le` class files, and
//! the in-memory labeled collections the rest of the engine consumes.
//!
//! Layout of a dataset directory:
//!
//! ```text
//! manifest.json
//! <train_file>   count × dim little-endian f32, row-major, no header
//! <test_file>    same encoding
//! ```
//!
//! Values are held as `f64` in memory. Every `f32` widens exactly, so a
//! read/write cycle reproduces the original bytes.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST_VERSION: u32 = 1;
pub const DTYPE_F32LE: &str = "f32le";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Labeled feature vectors of a common dimension, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSet {
    dim: usize,
    labels: Vec<u32>,
    data: Vec<f64>,
}

impl FeatureSet {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            labels: Vec::new(),
            data: Vec::new(),
        }
    }

    /// All rows share one label; `data.len()` must be a multiple of `dim`.
    pub fn from_flat(dim: usize, label: u32, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: data.len(),
            });
        }
        let n = data.len() / dim;
        Ok(Self {
            dim,
            labels: vec![label; n],
            data,
        })
    }

    pub fn from_rows<R: AsRef<[f64]>>(
        dim: usize,
        rows: impl IntoIterator<Item = (u32, R)>,
    ) -> Result<Self> {
        let mut set = Self::new(dim);
        for (label, row) in rows {
            set.push(label, row.as_ref())?;
        }
        Ok(set)
    }

    pub fn push(&mut self, label: u32, row: &[f64]) -> Result<()> {
        if row.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: row.len(),
            });
        }
        self.labels.push(label);
        self.data.extend_from_slice(row);
        Ok(())
    }

    pub fn extend(&mut self, other: &FeatureSet) -> Result<()> {
        if other.dim != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: other.dim,
            });
        }
        self.labels.extend_from_slice(&other.labels);
        self.data.extend_from_slice(&other.data);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = (u32, &[f64])> + '_ {
        self.labels.iter().copied().zip(self.data.chunks_exact(self.dim))
    }

    pub fn rows_of(&self, label: u32) -> Vec<&[f64]> {
        self.rows()
            .filter(|&(l, _)| l == label)
            .map(|(_, r)| r)
            .collect()
    }

    pub fn label_set(&self) -> BTreeSet<u32> {
        self.labels.iter().copied().collect()
    }

    pub fn class_counts(&self) -> BTreeMap<u32, usize> {
        let mut counts = BTreeMap::new();
        for &l in &self.labels {
            *counts.entry(l).or_insert(0) += 1;
        }
        counts
    }

    /// Rows at the given indices, in the given order.
    pub fn select(&self, indices: &[usize]) -> FeatureSet {
        let mut out = FeatureSet::new(self.dim);
        for &i in indices {
            out.labels.push(self.labels[i]);
            out.data.extend_from_slice(self.row(i));
        }
        out
    }

    pub fn filter_labels(&self, keep: &BTreeSet<u32>) -> FeatureSet {
        let idx: Vec<usize> = (0..self.len())
            .filter(|&i| keep.contains(&self.labels[i]))
            .collect();
        self.select(&idx)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassEntry {
    pub label: u32,
    pub train_file: PathBuf,
    pub test_file: PathBuf,
    pub train_count: usize,
    pub test_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionEntry {
    pub session_id: usize,
    pub classes: Vec<ClassEntry>,
}

impl SessionEntry {
    pub fn labels(&self) -> Vec<u32> {
        self.classes.iter().map(|c| c.label).collect()
    }
}

/// Contents of `manifest.json`. File paths are relative to the manifest's
/// directory unless absolute.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub dim: usize,
    pub dtype: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_names: Option<BTreeMap<String, String>>,
    pub sessions: Vec<SessionEntry>,
    #[serde(skip)]
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn resolve(&self, file: &Path) -> PathBuf {
        if file.is_absolute() {
            file.to_path_buf()
        } else {
            self.root.join(file)
        }
    }

    pub fn classes(&self) -> impl Iterator<Item = (usize, &ClassEntry)> + '_ {
        self.sessions
            .iter()
            .flat_map(|s| s.classes.iter().map(move |c| (s.session_id, c)))
    }

    pub fn class(&self, label: u32) -> Option<&ClassEntry> {
        self.classes().map(|(_, c)| c).find(|c| c.label == label)
    }

    /// Checks every manifest invariant, including file sizes on disk.
    pub fn validate(&self) -> Result<()> {
        if self.version != MANIFEST_VERSION {
            return Err(Error::Validation(format!(
                "manifest version {} is not supported (expected {MANIFEST_VERSION})",
                self.version
            )));
        }
        if self.dtype != DTYPE_F32LE {
            return Err(Error::Validation(format!(
                "dtype {:?} is not supported (expected {DTYPE_F32LE:?})",
                self.dtype
            )));
        }
        if self.dim == 0 {
            return Err(Error::Validation("dim must be positive".into()));
        }
        if self.sessions.is_empty() {
            return Err(Error::Validation("manifest lists no sessions".into()));
        }
        let mut owner: BTreeMap<u32, usize> = BTreeMap::new();
        for (i, session) in self.sessions.iter().enumerate() {
            if session.session_id != i {
                return Err(Error::Validation(format!(
                    "session_id {} at position {i}; ids must be 0..N-1 in order",
                    session.session_id
                )));
            }
            if session.classes.is_empty() {
                return Err(Error::Validation(format!("session {i} has no classes")));
            }
            for class in &session.classes {
                if let Some(prev) = owner.insert(class.label, i) {
                    return Err(Error::Validation(format!(
                        "label {} appears in sessions {prev} and {i}; label spaces must be exclusive",
                        class.label
                    )));
                }
                if class.train_count == 0 {
                    return Err(Error::Validation(format!(
                        "label {}: train_count must be at least 1",
                        class.label
                    )));
                }
                if class.test_count == 0 {
                    log::warn!("label {} has no test rows", class.label);
                }
                self.check_file(&class.train_file, class.train_count)?;
                self.check_file(&class.test_file, class.test_count)?;
            }
        }
        Ok(())
    }

    fn check_file(&self, file: &Path, count: usize) -> Result<()> {
        let path = self.resolve(file);
        let meta = fs::metadata(&path).map_err(|e| {
            Error::Validation(format!("feature file {} is not readable: {e}", path.display()))
        })?;
        let expected = (count * self.dim * 4) as u64;
        if meta.len() != expected {
            return Err(Error::Validation(format!(
                "feature file {} has {} bytes, expected {expected} ({count} rows × {} dims × 4)",
                path.display(),
                meta.len(),
                self.dim
            )));
        }
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::parse("manifest", e))?;
        fs::write(&path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Loads and validates a manifest. `path` may name the manifest file or the
/// dataset directory containing `manifest.json`.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let file = if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    };
    let text = fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
    let mut manifest: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| Error::parse(file.display().to_string(), e))?;
    manifest.root = file
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    manifest.validate()?;
    Ok(manifest)
}

/// Reads `count` rows of `dim` little-endian `f32`s, all tagged `label`.
pub fn read_feature_file(path: &Path, dim: usize, count: usize, label: u32) -> Result<FeatureSet> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let expected = count * dim * 4;
    if bytes.len() != expected {
        return Err(Error::Validation(format!(
            "{} has {} bytes, expected {expected}",
            path.display(),
            bytes.len()
        )));
    }
    let mut data = Vec::with_capacity(count * dim);
    for (i, chunk) in bytes.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        if !v.is_finite() {
            return Err(Error::NonFinite {
                path: path.to_path_buf(),
                row: i / dim,
            });
        }
        data.push(f64::from(v));
    }
    Ok(FeatureSet {
        dim,
        labels: vec![label; count],
        data,
    })
}

/// Writes the vectors of `rows` (labels are not stored) as raw `f32le`.
/// Values that are not exactly representable as `f32` are rounded.
pub fn write_feature_file(rows: &FeatureSet, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for &v in &rows.data {
        out.write_all(&(v as f32).to_le_bytes())
            .map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Reads `label,f0,...,f{d-1}` CSV. Values go through `f32` so the result
/// matches the binary encoding of the same numbers.
pub fn read_csv_features(path: &Path) -> Result<FeatureSet> {
    let context = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::parse(&context, e))?;
    let header = reader.headers().map_err(|e| Error::parse(&context, e))?.clone();
    if header.get(0) != Some("label") {
        return Err(Error::parse(&context, "first column must be `label`"));
    }
    let dim = header.len() - 1;
    if dim == 0 {
        return Err(Error::parse(&context, "header declares no feature columns"));
    }
    for (j, name) in header.iter().skip(1).enumerate() {
        if name != format!("f{j}") {
            return Err(Error::parse(
                &context,
                format!("column {} is `{name}`, expected `f{j}`", j + 1),
            ));
        }
    }
    let mut set = FeatureSet::new(dim);
    let mut row = vec![0.0; dim];
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::parse(&context, e))?;
        if record.len() != dim + 1 {
            return Err(Error::parse(
                &context,
                format!("row {i} has {} fields, header has {}", record.len(), dim + 1),
            ));
        }
        let label: u32 = record[0]
            .parse()
            .map_err(|e| Error::parse(&context, format!("row {i} label: {e}")))?;
        for (j, field) in record.iter().skip(1).enumerate() {
            let v: f32 = field
                .parse()
                .map_err(|e| Error::parse(&context, format!("row {i} column f{j}: {e}")))?;
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    path: path.to_path_buf(),
                    row: i,
                });
            }
            row[j] = f64::from(v);
        }
        set.push(label, &row)?;
    }
    Ok(set)
}

#[derive(Debug, Clone)]
pub struct ClassData {
    pub session: usize,
    pub train: FeatureSet,
    pub test: FeatureSet,
}

/// A fully loaded dataset. Immutable once built.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub classes: BTreeMap<u32, ClassData>,
}

impl Dataset {
    /// Reads every class file named by a validated manifest, in parallel.
    pub fn load(manifest: DatasetManifest) -> Result<Self> {
        let entries: Vec<(usize, ClassEntry)> =
            manifest.classes().map(|(s, c)| (s, c.clone())).collect();
        let loaded: Result<Vec<(u32, ClassData)>> = entries
            .par_iter()
            .map(|(session, c)| {
                let train = read_feature_file(
                    &manifest.resolve(&c.train_file),
                    manifest.dim,
                    c.train_count,
                    c.label,
                )?;
                let test = read_feature_file(
                    &manifest.resolve(&c.test_file),
                    manifest.dim,
                    c.test_count,
                    c.label,
                )?;
                Ok((
                    c.label,
                    ClassData {
                        session: *session,
                        train,
                        test,
                    },
                ))
            })
            .collect();
        Ok(Self {
            manifest,
            classes: loaded?.into_iter().collect(),
        })
    }

    pub fn open(path: &Path) -> Result<Self> {
        Self::load(load_manifest(path)?)
    }

    pub fn dim(&self) -> usize {
        self.manifest.dim
    }

    pub fn labels(&self) -> Vec<u32> {
        self.classes.keys().copied().collect()
    }

    pub fn all_train(&self) -> FeatureSet {
        self.concat(|c| &c.train)
    }

    pub fn all_test(&self) -> FeatureSet {
        self.concat(|c| &c.test)
    }

    fn concat(&self, pick: impl Fn(&ClassData) -> &FeatureSet) -> FeatureSet {
        let mut out = FeatureSet::new(self.dim());
        for c in self.classes.values() {
            out.extend(pick(c)).expect("dataset dims are homogeneous");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_bytes(path: &Path, values: &[f32]) {
        let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(path, bytes).unwrap();
    }

    fn manifest_with(dir: &Path, sessions: &[&[u32]], dim: usize, rows: usize) -> DatasetManifest {
        let mut out = Vec::new();
        for (s, labels) in sessions.iter().enumerate() {
            let mut classes = Vec::new();
            for &l in labels.iter() {
                let train = PathBuf::from(format!("train_{l}.f32"));
                let test = PathBuf::from(format!("test_{l}.f32"));
                write_bytes(&dir.join(&train), &vec![l as f32; rows * dim]);
                write_bytes(&dir.join(&test), &vec![l as f32; rows * dim]);
                classes.push(ClassEntry {
                    label: l,
                    train_file: train,
                    test_file: test,
                    train_count: rows,
                    test_count: rows,
                });
            }
            out.push(SessionEntry {
                session_id: s,
                classes,
            });
        }
        DatasetManifest {
            version: 1,
            dim,
            dtype: DTYPE_F32LE.into(),
            label_names: None,
            sessions: out,
            root: dir.to_path_buf(),
        }
    }

    #[test]
    fn minimal_manifest_loads() {
        let dir = tempfile::tempdir().unwrap();
        let m = manifest_with(dir.path(), &[&[0, 1, 2, 3, 4, 5, 6, 7], &[8]], 3, 2);
        m.write(dir.path()).unwrap();
        let loaded = load_manifest(dir.path()).unwrap();
        assert_eq!(loaded.sessions.len(), 2);
        assert_eq!(loaded.sessions[1].labels(), vec![8]);
        let ds = Dataset::load(loaded).unwrap();
        assert_eq!(ds.classes[&8].train.row(1), &[8.0, 8.0, 8.0]);
        assert_eq!(ds.classes[&8].session, 1);
    }

    #[test]
    fn overlapping_labels_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let m = manifest_with(dir.path(), &[&[0, 1, 3], &[4], &[3]], 2, 1);
        m.write(dir.path()).unwrap();
        let err = load_manifest(dir.path()).unwrap_err();
        assert!(matches!(err, Error::Validation(ref s) if s.contains("label 3")), "{err}");
    }

    #[test]
    fn short_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let m = manifest_with(dir.path(), &[&[0], &[1]], 2, 3);
        let path = dir.path().join("train_1.f32");
        let mut bytes = fs::read(&path).unwrap();
        bytes.pop();
        fs::write(&path, bytes).unwrap();
        m.write(dir.path()).unwrap();
        assert!(matches!(load_manifest(dir.path()), Err(Error::Validation(_))));
    }

    #[test]
    fn missing_file_and_zero_train_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = manifest_with(dir.path(), &[&[0], &[1]], 2, 3);
        fs::remove_file(dir.path().join("test_0.f32")).unwrap();
        assert!(matches!(m.validate(), Err(Error::Validation(_))));

        let mut m2 = manifest_with(dir.path(), &[&[0], &[1]], 2, 3);
        m2.sessions[1].classes[0].train_count = 0;
        write_bytes(&dir.path().join("train_1.f32"), &[]);
        assert!(matches!(m2.validate(), Err(Error::Validation(_))));

        // non-contiguous session ids
        m = manifest_with(dir.path(), &[&[0], &[1]], 2, 3);
        m.sessions[1].session_id = 2;
        assert!(matches!(m.validate(), Err(Error::Validation(_))));
    }

    #[test]
    fn empty_test_file_is_allowed() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = manifest_with(dir.path(), &[&[0], &[1]], 2, 3);
        write_bytes(&dir.path().join("test_1.f32"), &[]);
        m.sessions[1].classes[0].test_count = 0;
        m.validate().unwrap();
        let ds = Dataset::load(m).unwrap();
        assert!(ds.classes[&1].test.is_empty());
    }

    #[test]
    fn reads_row_major_f32le() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.f32");
        write_bytes(&path, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let set = read_feature_file(&path, 3, 2, 7).unwrap();
        assert_eq!(set.len(), 2);
        assert_eq!(set.row(0), &[1.0, 2.0, 3.0]);
        assert_eq!(set.row(1), &[4.0, 5.0, 6.0]);
        assert_eq!(set.labels(), &[7, 7]);
    }

    #[test]
    fn nan_reports_row() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.f32");
        write_bytes(&path, &[1.0, 2.0, 3.0, 4.0, f32::NAN, 6.0]);
        match read_feature_file(&path, 3, 2, 0) {
            Err(Error::NonFinite { row, .. }) => assert_eq!(row, 1),
            other => panic!("expected NonFinite, got {other:?}"),
        }
        write_bytes(&path, &[f32::INFINITY, 2.0]);
        assert!(matches!(
            read_feature_file(&path, 2, 1, 0),
            Err(Error::NonFinite { row: 0, .. })
        ));
    }

    #[test]
    fn empty_file_zero_count() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.f32");
        write_feature_file(&FeatureSet::new(4), &path).unwrap();
        assert_eq!(fs::metadata(&path).unwrap().len(), 0);
        assert!(read_feature_file(&path, 4, 0, 0).unwrap().is_empty());
    }

    #[test]
    fn negative_zero_survives() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("z.f32");
        let set = FeatureSet::from_flat(2, 0, vec![-0.0, 0.0]).unwrap();
        write_feature_file(&set, &path).unwrap();
        let back = read_feature_file(&path, 2, 1, 0).unwrap();
        assert_eq!(back.row(0)[0].to_bits(), (-0.0f64).to_bits());
        assert_eq!(back.row(0)[1].to_bits(), 0.0f64.to_bits());
    }

    #[test]
    fn csv_basic_and_ragged() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.csv");
        fs::write(&path, "label,f0,f1\n0,1.0,2.0\n").unwrap();
        let set = read_csv_features(&path).unwrap();
        assert_eq!(set.dim(), 2);
        assert_eq!(set.labels(), &[0]);
        assert_eq!(set.row(0), &[1.0, 2.0]);

        fs::write(&path, "label,f0,f1,f2\n0,1.0,2.0\n").unwrap();
        assert!(matches!(read_csv_features(&path), Err(Error::Parse { .. })));

        fs::write(&path, "id,f0\n0,1.0\n").unwrap();
        assert!(matches!(read_csv_features(&path), Err(Error::Parse { .. })));
    }

    #[test]
    fn csv_matches_binary() {
        let dir = tempfile::tempdir().unwrap();
        let csv_path = dir.path().join("a.csv");
        fs::write(&csv_path, "label,f0,f1,f2\n3,0.1,-2.5,1e-3\n3,7,0.333333,-0\n").unwrap();
        let from_csv = read_csv_features(&csv_path).unwrap();
        let bin = dir.path().join("a.f32");
        write_bytes(&bin, &[0.1, -2.5, 1e-3, 7.0, 0.333333, -0.0]);
        let from_bin = read_feature_file(&bin, 3, 2, 3).unwrap();
        assert_eq!(from_csv, from_bin);
        let bits = |s: &FeatureSet| s.as_flat().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&from_csv), bits(&from_bin));
    }

    #[test]
    fn select_and_filter() {
        let set = FeatureSet::from_rows(1, [(0, [1.0]), (1, [2.0]), (0, [3.0])]).unwrap();
        assert_eq!(set.rows_of(0), vec![&[1.0][..], &[3.0][..]]);
        let only1 = set.filter_labels(&[1].into_iter().collect());
        assert_eq!(only1.as_flat(), &[2.0]);
        assert_eq!(set.select(&[2, 0]).as_flat(), &[3.0, 1.0]);
        assert!(FeatureSet::from_rows(2, [(0, [1.0])]).is_err());
    }
}
