//! Dataset loading: synthetic Gaussian blobs, a strict numeric CSV format,
//! and the classic big-endian IDX image/label containers.
//!
//! All loaders are deterministic functions of their spec (including seeds),
//! which is what lets whole runs be replayed byte-for-byte.

use std::io::Read;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABEL_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone)]
pub struct Dataset {
    pub xs: Vec<Tensor>,
    pub ys: Vec<usize>,
    pub n_classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    /// Deterministic train/val split: a seeded shuffle of indices, then the
    /// first `val_fraction` of them become validation.
    pub fn split(self, val_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(0.0..1.0).contains(&val_fraction) {
            return Err(Error::InvalidArgument(format!(
                "val_fraction {val_fraction} outside [0, 1)"
            )));
        }
        let n = self.len();
        let mut idx: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        shuffle(&mut idx, &mut rng);
        let n_val = (n as f64 * val_fraction).floor() as usize;
        let mut train = Dataset {
            xs: Vec::new(),
            ys: Vec::new(),
            n_classes: self.n_classes,
        };
        let mut val = Dataset {
            xs: Vec::new(),
            ys: Vec::new(),
            n_classes: self.n_classes,
        };
        for (pos, &i) in idx.iter().enumerate() {
            let dst = if pos < n_val { &mut val } else { &mut train };
            dst.xs.push(self.xs[i].clone());
            dst.ys.push(self.ys[i]);
        }
        Ok((train, val))
    }
}

/// Fisher-Yates with an explicit RNG; shared by the split above and the
/// per-epoch batch shuffles so that every ordering in a run is seed-derived.
pub fn shuffle<T, R: rand::Rng>(items: &mut [T], rng: &mut R) {
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DataSource {
    /// Gaussian blobs: `classes` isotropic clusters in `dim` dimensions with
    /// unit within-class deviation and pairwise mean separation of at least
    /// `separation`.
    SyntheticBlobs {
        classes: usize,
        dim: usize,
        per_class: usize,
        #[serde(default = "default_separation")]
        separation: f64,
        seed: u64,
    },
    /// Strict numeric CSV with header `label,f0,f1,...`.
    Csv { path: String },
    /// IDX image + label file pair; pixels are scaled to [0, 1].
    Idx { images: String, labels: String },
}

fn default_separation() -> f64 {
    4.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    #[serde(flatten)]
    pub source: DataSource,
    /// Fraction held out for validation (seeded split).
    #[serde(default)]
    pub val_fraction: f64,
    /// Seed for the train/val split shuffle (independent of generation seed).
    #[serde(default)]
    pub split_seed: u64,
}

pub fn load_dataset(spec: &DatasetSpec) -> Result<(Dataset, Dataset)> {
    let full = match &spec.source {
        DataSource::SyntheticBlobs {
            classes,
            dim,
            per_class,
            separation,
            seed,
        } => synthetic_blobs(*classes, *dim, *per_class, *separation, *seed)?,
        DataSource::Csv { path } => load_csv(Path::new(path))?,
        DataSource::Idx { images, labels } => load_idx(Path::new(images), Path::new(labels))?,
    };
    full.split(spec.val_fraction, spec.split_seed)
}

/// Gaussian blob generator. Class means are drawn on a sphere whose radius
/// grows until every pairwise distance clears `separation`, so the promised
/// margin holds by construction for any seed.
pub fn synthetic_blobs(
    classes: usize,
    dim: usize,
    per_class: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset> {
    if classes < 2 || dim == 0 || per_class == 0 {
        return Err(Error::InvalidArgument(format!(
            "blobs want classes >= 2, dim >= 1, per_class >= 1; got {classes}/{dim}/{per_class}"
        )));
    }
    if separation <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "blob separation must be positive, got {separation}"
        )));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    // Radius scaling keeps the retry loop finite: far enough apart and
    // random directions almost surely clear the margin.
    let mut found = None;
    for attempt in 0..64u32 {
        let radius = separation * (1.0 + 0.5 * attempt as f64);
        let cand: Vec<Tensor> = (0..classes)
            .map(|_| {
                let dir = Tensor::randn(&[dim], 0.0, 1.0, &mut rng);
                let n = dir.l2_norm().max(1e-12);
                dir.scale(radius / n)
            })
            .collect();
        let ok = (0..classes).all(|a| {
            (a + 1..classes).all(|b| cand[a].sub(&cand[b]).unwrap().l2_norm() >= separation)
        });
        if ok {
            found = Some(cand);
            break;
        }
    }
    let means = found.ok_or_else(|| {
        Error::InvalidArgument("could not place blob means with the requested separation".into())
    })?;
    let mut xs = Vec::with_capacity(classes * per_class);
    let mut ys = Vec::with_capacity(classes * per_class);
    // Interleave classes so any prefix of the dataset is roughly balanced.
    for i in 0..classes * per_class {
        let c = i % classes;
        let noise = Tensor::randn(&[dim], 0.0, 1.0, &mut rng);
        xs.push(means[c].add(&noise)?);
        ys.push(c);
    }
    Ok(Dataset {
        xs,
        ys,
        n_classes: classes,
    })
}

/// Strict CSV: first line must be `label,f0,f1,...`; every following line is
/// one integer label and `dim` plain decimal floats.
pub fn load_csv(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Dataset(format!("{}: empty file", path.display())))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.first() != Some(&"label") || cols.len() < 2 {
        return Err(Error::Dataset(format!(
            "{}: header must start with 'label,f0,...', got '{header}'",
            path.display()
        )));
    }
    for (i, c) in cols[1..].iter().enumerate() {
        if *c != format!("f{i}") {
            return Err(Error::Dataset(format!(
                "{}: feature column {} named '{c}', want 'f{i}'",
                path.display(),
                i + 1
            )));
        }
    }
    let dim = cols.len() - 1;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != dim + 1 {
            return Err(Error::Dataset(format!(
                "{}:{}: {} fields, want {}",
                path.display(),
                lineno + 1,
                fields.len(),
                dim + 1
            )));
        }
        let label: usize = fields[0].trim().parse().map_err(|_| {
            Error::Dataset(format!(
                "{}:{}: bad label '{}'",
                path.display(),
                lineno + 1,
                fields[0]
            ))
        })?;
        let mut row = Vec::with_capacity(dim);
        for f in &fields[1..] {
            row.push(f.trim().parse::<f64>().map_err(|_| {
                Error::Dataset(format!(
                    "{}:{}: bad float '{f}'",
                    path.display(),
                    lineno + 1
                ))
            })?);
        }
        xs.push(Tensor::new(vec![dim], row)?);
        ys.push(label);
    }
    if xs.is_empty() {
        return Err(Error::Dataset(format!("{}: no data rows", path.display())));
    }
    let n_classes = ys.iter().max().unwrap() + 1;
    Ok(Dataset { xs, ys, n_classes })
}

/// Write a dataset of flat feature vectors in the CSV format [`load_csv`]
/// accepts. Round-trips exactly because floats are printed shortest-exact.
pub fn write_csv(path: &Path, data: &Dataset) -> Result<()> {
    use std::fmt::Write as _;
    let dim = data.xs.first().map(|t| t.numel()).unwrap_or(0);
    let mut out = String::from("label");
    for i in 0..dim {
        let _ = write!(out, ",f{i}");
    }
    out.push('\n');
    for (x, y) in data.xs.iter().zip(&data.ys) {
        let _ = write!(out, "{y}");
        for v in x.data() {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn read_u32_be(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(Error::Dataset(format!(
            "{}: truncated at byte {offset} (wanted a u32)",
            path.display()
        )));
    }
    Ok(u32::from_be_bytes(bytes[offset..end].try_into().unwrap()))
}

/// IDX pair loader. Images become `[1, rows, cols]` tensors with entries in
/// [0, 1]; labels are the raw class bytes.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let mut img_bytes = Vec::new();
    std::fs::File::open(images_path)
        .and_then(|mut f| f.read_to_end(&mut img_bytes))
        .map_err(|e| Error::Dataset(format!("{}: {e}", images_path.display())))?;
    let magic = read_u32_be(&img_bytes, 0, images_path)?;
    if magic != IDX_IMAGE_MAGIC {
        return Err(Error::Dataset(format!(
            "{}: bad magic {magic:#010x} at byte 0, want {IDX_IMAGE_MAGIC:#010x}",
            images_path.display()
        )));
    }
    let n = read_u32_be(&img_bytes, 4, images_path)? as usize;
    let rows = read_u32_be(&img_bytes, 8, images_path)? as usize;
    let cols = read_u32_be(&img_bytes, 12, images_path)? as usize;
    let want = 16 + n * rows * cols;
    if img_bytes.len() != want {
        return Err(Error::Dataset(format!(
            "{}: {} bytes, want {want} for {n} images of {rows}x{cols}",
            images_path.display(),
            img_bytes.len()
        )));
    }

    let mut lab_bytes = Vec::new();
    std::fs::File::open(labels_path)
        .and_then(|mut f| f.read_to_end(&mut lab_bytes))
        .map_err(|e| Error::Dataset(format!("{}: {e}", labels_path.display())))?;
    let magic = read_u32_be(&lab_bytes, 0, labels_path)?;
    if magic != IDX_LABEL_MAGIC {
        return Err(Error::Dataset(format!(
            "{}: bad magic {magic:#010x} at byte 0, want {IDX_LABEL_MAGIC:#010x}",
            labels_path.display()
        )));
    }
    let n_lab = read_u32_be(&lab_bytes, 4, labels_path)? as usize;
    if n_lab != n {
        return Err(Error::Dataset(format!(
            "{} has {n} images but {} has {n_lab} labels",
            images_path.display(),
            labels_path.display()
        )));
    }
    if lab_bytes.len() != 8 + n {
        return Err(Error::Dataset(format!(
            "{}: {} bytes, want {}",
            labels_path.display(),
            lab_bytes.len(),
            8 + n
        )));
    }

    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for i in 0..n {
        let start = 16 + i * rows * cols;
        let pixels: Vec<f64> = img_bytes[start..start + rows * cols]
            .iter()
            .map(|&b| b as f64 / 255.0)
            .collect();
        xs.push(Tensor::new(vec![1, rows, cols], pixels)?);
        ys.push(lab_bytes[8 + i] as usize);
    }
    let n_classes = ys.iter().max().map(|m| m + 1).unwrap_or(0);
    Ok(Dataset { xs, ys, n_classes })
}

/// Test/demo helper: serialize images + labels into the IDX pair format.
pub fn write_idx(
    images_path: &Path,
    labels_path: &Path,
    images: &[Vec<u8>],
    rows: usize,
    cols: usize,
    labels: &[u8],
) -> Result<()> {
    let mut img = Vec::with_capacity(16 + images.len() * rows * cols);
    img.extend_from_slice(&IDX_IMAGE_MAGIC.to_be_bytes());
    img.extend_from_slice(&(images.len() as u32).to_be_bytes());
    img.extend_from_slice(&(rows as u32).to_be_bytes());
    img.extend_from_slice(&(cols as u32).to_be_bytes());
    for im in images {
        assert_eq!(im.len(), rows * cols);
        img.extend_from_slice(im);
    }
    std::fs::write(images_path, img)?;

    let mut lab = Vec::with_capacity(8 + labels.len());
    lab.extend_from_slice(&IDX_LABEL_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    lab.extend_from_slice(labels);
    std::fs::write(labels_path, lab)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blobs_keep_their_separation_promise() {
        let d = synthetic_blobs(3, 8, 50, 4.0, 42).unwrap();
        assert_eq!(d.len(), 150);
        assert_eq!(d.n_classes, 3);
        // Recover empirical class means and check pairwise distances.
        let mut means = vec![Tensor::zeros(&[8]); 3];
        let mut counts = [0usize; 3];
        for (x, &y) in d.xs.iter().zip(&d.ys) {
            means[y].axpy(1.0, x).unwrap();
            counts[y] += 1;
        }
        for (m, &c) in means.iter_mut().zip(&counts) {
            *m = m.scale(1.0 / c as f64);
        }
        for a in 0..3 {
            for b in a + 1..3 {
                let dist = means[a].sub(&means[b]).unwrap().l2_norm();
                assert!(dist > 3.0, "empirical means too close: {dist}");
            }
        }
    }

    #[test]
    fn blobs_are_seed_deterministic() {
        let a = synthetic_blobs(2, 5, 10, 4.0, 7).unwrap();
        let b = synthetic_blobs(2, 5, 10, 4.0, 7).unwrap();
        assert_eq!(a.xs, b.xs);
        assert_eq!(a.ys, b.ys);
        let c = synthetic_blobs(2, 5, 10, 4.0, 8).unwrap();
        assert_ne!(a.xs, c.xs);
    }

    #[test]
    fn csv_roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        let d = synthetic_blobs(2, 4, 6, 4.0, 1).unwrap();
        write_csv(&path, &d).unwrap();
        let loaded = load_csv(&path).unwrap();
        assert_eq!(loaded.xs, d.xs);
        assert_eq!(loaded.ys, d.ys);
    }

    #[test]
    fn csv_errors_name_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "label,f0,f1\n0,1.0,2.0\n1,oops,3.0\n").unwrap();
        let err = load_csv(&path).unwrap_err().to_string();
        assert!(err.contains(":3:"), "error should cite line 3: {err}");
        std::fs::write(&path, "id,f0\n").unwrap();
        assert!(load_csv(&path).is_err());
    }

    #[test]
    fn idx_roundtrip_and_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let ip = dir.path().join("im.idx");
        let lp = dir.path().join("lab.idx");
        let images = vec![vec![0u8, 51, 102, 255], vec![255, 0, 255, 0]];
        write_idx(&ip, &lp, &images, 2, 2, &[3, 1]).unwrap();
        let d = load_idx(&ip, &lp).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.xs[0].shape(), &[1, 2, 2]);
        assert_eq!(d.xs[0].data()[1], 51.0 / 255.0);
        assert_eq!(d.xs[0].data()[3], 1.0);
        assert_eq!(d.ys, vec![3, 1]);
        assert_eq!(d.n_classes, 4);
    }

    #[test]
    fn idx_bad_magic_is_reported_in_hex() {
        let dir = tempfile::tempdir().unwrap();
        let ip = dir.path().join("im.idx");
        let lp = dir.path().join("lab.idx");
        write_idx(&ip, &lp, &[vec![0u8; 4]], 2, 2, &[0]).unwrap();
        // Corrupt the image magic.
        let mut bytes = std::fs::read(&ip).unwrap();
        bytes[3] = 0x99;
        std::fs::write(&ip, &bytes).unwrap();
        let err = load_idx(&ip, &lp).unwrap_err().to_string();
        assert!(err.contains("0x00000803"), "want expected magic in: {err}");
    }

    #[test]
    fn split_is_deterministic_and_disjoint() {
        let d = synthetic_blobs(2, 4, 20, 4.0, 3).unwrap();
        let (tr1, va1) = d.clone().split(0.25, 9).unwrap();
        let (tr2, va2) = d.split(0.25, 9).unwrap();
        assert_eq!(va1.len(), 10);
        assert_eq!(tr1.len(), 30);
        assert_eq!(tr1.xs, tr2.xs);
        assert_eq!(va1.xs, va2.xs);
    }
}
