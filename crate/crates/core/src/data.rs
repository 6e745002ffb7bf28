//! Feature-sequence datasets: synthetic generation, stratified splits and the
//! QDVR binary embedding format.
//!
//! QDVR layout (little-endian, no padding):
//!
//! ```text
//! b"QDVR" | u32 version=1 | u32 n_samples | u32 seq_len | u32 feat_dim | u32 n_classes
//! then per sample: u32 label | seq_len*feat_dim f32, timestep-major
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"QDVR";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 5 * 4;

/// One labeled sequence, `seq_len × feat_dim` features stored timestep-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub features: Vec<f64>,
    pub seq_len: usize,
    pub feat_dim: usize,
    pub label: usize,
}

impl FeatureSequence {
    pub fn new(features: Vec<f64>, seq_len: usize, feat_dim: usize, label: usize) -> Result<Self> {
        if features.len() != seq_len * feat_dim {
            return Err(Error::DimensionMismatch {
                context: "feature sequence",
                expected: seq_len * feat_dim,
                got: features.len(),
            });
        }
        Ok(Self {
            features,
            seq_len,
            feat_dim,
            label,
        })
    }

    pub fn timestep(&self, t: usize) -> &[f64] {
        &self.features[t * self.feat_dim..(t + 1) * self.feat_dim]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub seq_len: usize,
    pub feat_dim: usize,
    pub n_classes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Splits {
    pub fn get(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDataset {
    pub samples: Vec<FeatureSequence>,
    pub dims: Dims,
    pub splits: Splits,
}

impl FeatureDataset {
    /// Validates samples against `dims` and assigns a stratified 70/15/15 split.
    pub fn new(samples: Vec<FeatureSequence>, dims: Dims, split_seed: u64) -> Result<Self> {
        if dims.seq_len == 0 || dims.feat_dim == 0 || dims.n_classes < 2 {
            return Err(Error::InvalidConfig(format!("degenerate dataset dims {dims:?}")));
        }
        for (i, s) in samples.iter().enumerate() {
            if s.seq_len != dims.seq_len || s.feat_dim != dims.feat_dim {
                return Err(Error::DimensionMismatch {
                    context: "sample shape",
                    expected: dims.seq_len * dims.feat_dim,
                    got: s.features.len(),
                });
            }
            if s.label >= dims.n_classes {
                return Err(Error::LabelOutOfRange {
                    sample: i,
                    label: s.label,
                    n_classes: dims.n_classes,
                });
            }
            if s.features.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteValue { sample: i });
            }
        }
        let mut ds = Self {
            samples,
            dims,
            splits: Splits::default(),
        };
        ds.resplit(split_seed);
        Ok(ds)
    }

    /// Stratified 70/15/15 assignment from a seeded shuffle of each class.
    pub fn resplit(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut splits = Splits::default();
        for k in 0..self.dims.n_classes {
            let mut idx: Vec<usize> = (0..self.samples.len())
                .filter(|&i| self.samples[i].label == k)
                .collect();
            idx.shuffle(&mut rng);
            let n = idx.len();
            let n_train = (0.70 * n as f64).round() as usize;
            let n_val = (0.15 * n as f64).round() as usize;
            let n_val = n_val.min(n - n_train);
            splits.train.extend_from_slice(&idx[..n_train]);
            splits.val.extend_from_slice(&idx[n_train..n_train + n_val]);
            splits.test.extend_from_slice(&idx[n_train + n_val..]);
        }
        for s in [&mut splits.train, &mut splits.val, &mut splits.test] {
            s.sort_unstable();
        }
        self.splits = splits;
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &FeatureSequence> {
        self.splits.get(split).iter().map(|&i| &self.samples[i])
    }

    /// Errors unless every split has at least one sample.
    pub fn require_nonempty_splits(&self) -> Result<()> {
        for split in Split::ALL {
            if self.splits.get(split).is_empty() {
                return Err(Error::InvalidConfig(format!("{split:?} split is empty")));
            }
        }
        Ok(())
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.dims.n_classes];
        for s in &self.samples {
            counts[s.label] += 1;
        }
        counts
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub n_per_class: usize,
    pub seq_len: usize,
    pub feat_dim: usize,
    pub n_classes: usize,
    pub separation: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            seed: 1,
            n_per_class: 200,
            seq_len: 4,
            feat_dim: 32,
            n_classes: 4,
            separation: 4.0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_per_class == 0 || self.seq_len == 0 || self.feat_dim == 0 || self.n_classes < 2 {
            return Err(Error::InvalidConfig(format!("degenerate synthetic spec {self:?}")));
        }
        if !(self.separation >= 0.0 && self.separation.is_finite()) {
            return Err(Error::InvalidConfig("separation must be finite and >= 0".into()));
        }
        Ok(())
    }

    pub fn dims(&self) -> Dims {
        Dims {
            seq_len: self.seq_len,
            feat_dim: self.feat_dim,
            n_classes: self.n_classes,
        }
    }
}

/// Class-conditional Gaussian sequences.
///
/// Each class gets a mean matrix of standard normals scaled by `separation`;
/// samples add unit-variance noise. Values are rounded to `f32` precision so
/// the dataset survives a QDVR round trip exactly.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<FeatureDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let width = spec.seq_len * spec.feat_dim;
    let means: Vec<Vec<f64>> = (0..spec.n_classes)
        .map(|_| {
            (0..width)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    spec.separation * z
                })
                .collect::<Vec<f64>>()
        })
        .collect();
    let mut samples = Vec::with_capacity(spec.n_classes * spec.n_per_class);
    for _ in 0..spec.n_per_class {
        for (k, mean) in means.iter().enumerate() {
            let features = mean
                .iter()
                .map(|&m| {
                    let noise: f64 = StandardNormal.sample(&mut rng);
                    (m + noise) as f32 as f64
                })
                .collect();
            samples.push(FeatureSequence::new(features, spec.seq_len, spec.feat_dim, k)?);
        }
    }
    FeatureDataset::new(
        samples,
        Dims {
            seq_len: spec.seq_len,
            feat_dim: spec.feat_dim,
            n_classes: spec.n_classes,
        },
        spec.seed,
    )
}

/// Serializes a dataset into QDVR bytes. Features are narrowed to `f32`.
pub fn encode_embeddings(ds: &FeatureDataset) -> Vec<u8> {
    let width = ds.dims.seq_len * ds.dims.feat_dim;
    let mut out = Vec::with_capacity(HEADER_LEN + ds.samples.len() * (4 + 4 * width));
    out.extend_from_slice(MAGIC);
    for v in [
        FORMAT_VERSION,
        ds.samples.len() as u32,
        ds.dims.seq_len as u32,
        ds.dims.feat_dim as u32,
        ds.dims.n_classes as u32,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for s in &ds.samples {
        out.extend_from_slice(&(s.label as u32).to_le_bytes());
        for &v in &s.features {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_embeddings(bytes: &[u8], split_seed: u64) -> Result<FeatureDataset> {
    if bytes.len() < 4 {
        return Err(Error::TruncatedFile {
            needed: HEADER_LEN,
            found: bytes.len(),
        });
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::TruncatedFile {
            needed: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    let version = word(0);
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let (n_samples, seq_len, feat_dim, n_classes) =
        (word(1) as usize, word(2) as usize, word(3) as usize, word(4) as usize);
    let width = seq_len * feat_dim;
    let record = 4 + 4 * width;
    let needed = HEADER_LEN + n_samples * record;
    if bytes.len() < needed {
        return Err(Error::TruncatedFile {
            needed,
            found: bytes.len(),
        });
    }
    let mut samples = Vec::with_capacity(n_samples);
    for (i, rec) in bytes[HEADER_LEN..needed].chunks_exact(record).enumerate() {
        let label = u32::from_le_bytes(rec[..4].try_into().unwrap()) as usize;
        if label >= n_classes {
            return Err(Error::LabelOutOfRange {
                sample: i,
                label,
                n_classes,
            });
        }
        let features: Vec<f64> = rec[4..]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect();
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue { sample: i });
        }
        samples.push(FeatureSequence::new(features, seq_len, feat_dim, label)?);
    }
    FeatureDataset::new(
        samples,
        Dims {
            seq_len,
            feat_dim,
            n_classes,
        },
        split_seed,
    )
}

/// Reads a QDVR file; the split is drawn with `split_seed`.
pub fn load_embeddings_with_seed(path: &Path, split_seed: u64) -> Result<FeatureDataset> {
    decode_embeddings(&fs::read(path)?, split_seed)
}

pub fn load_embeddings(path: &Path) -> Result<FeatureDataset> {
    load_embeddings_with_seed(path, 0)
}

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::InvalidConfig(format!("not a file path: {}", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn save_embeddings(path: &Path, ds: &FeatureDataset) -> Result<()> {
    write_atomic(path, &encode_embeddings(ds))
}
