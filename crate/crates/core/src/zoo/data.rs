//! Labeled datasets for the hyper-cleaning problem.

use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use byteorder::{BigEndian, ReadBytesExt};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::{BilevelError, Result, Scalar};

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Distance scale of the blob means; unit-covariance blobs then overlap enough
/// for label noise to matter.
const BLOB_MEAN_SCALE: f64 = 0.6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Dataset<T> {
    pub features: Vec<Vec<T>>,
    pub labels: Vec<usize>,
    pub original_labels: Vec<usize>,
    pub corrupted: Vec<bool>,
    pub splits: Vec<Split>,
    pub classes: usize,
}

impl<T: Scalar> Dataset<T> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.splits[i] == split)
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.features.len() != n
            || self.original_labels.len() != n
            || self.corrupted.len() != n
            || self.splits.len() != n
        {
            return Err(BilevelError::Input(
                "dataset columns differ in length".into(),
            ));
        }
        let d = self.dim();
        if self.features.iter().any(|f| f.len() != d) {
            return Err(BilevelError::Input("ragged feature rows".into()));
        }
        for i in 0..n {
            if self.labels[i] >= self.classes || self.original_labels[i] >= self.classes {
                return Err(BilevelError::Input(format!("row {i}: label out of range")));
            }
            if self.corrupted[i] != (self.labels[i] != self.original_labels[i]) {
                return Err(BilevelError::Input(format!(
                    "row {i}: corruption mask inconsistent"
                )));
            }
        }
        Ok(())
    }

    /// Reassigns splits: the first `n_train` then `n_val` rows drawn round-robin
    /// over classes (so both splits are class balanced); everything else is test.
    pub fn assign_class_balanced_splits(&mut self, n_train: usize, n_val: usize) -> Result<()> {
        let mut per_class: Vec<std::collections::VecDeque<usize>> =
            vec![Default::default(); self.classes];
        for i in 0..self.len() {
            per_class[self.labels[i]].push_back(i);
        }
        self.splits.iter_mut().for_each(|s| *s = Split::Test);
        for (split, want) in [(Split::Train, n_train), (Split::Val, n_val)] {
            let mut taken = 0;
            while taken < want {
                let mut progressed = false;
                for queue in per_class.iter_mut() {
                    if taken == want {
                        break;
                    }
                    if let Some(i) = queue.pop_front() {
                        self.splits[i] = split;
                        taken += 1;
                        progressed = true;
                    }
                }
                if !progressed {
                    return Err(BilevelError::Input(format!(
                        "not enough rows for {} {} samples",
                        want,
                        split.as_str()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Columns `split, label, original_label, corrupted, f_0 .. f_{d-1}`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec![
            "split".to_string(),
            "label".into(),
            "original_label".into(),
            "corrupted".into(),
        ];
        header.extend((0..self.dim()).map(|j| format!("f_{j}")));
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec = vec![
                self.splits[i].as_str().to_string(),
                self.labels[i].to_string(),
                self.original_labels[i].to_string(),
                self.corrupted[i].to_string(),
            ];
            rec.extend(self.features[i].iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Gaussian blobs with unit covariance around per-class means; every split
/// gets `n_per_class` rows per class, and `ceil(corruption * N_train)`
/// training labels are moved to a uniformly drawn wrong class.
pub fn synth_blobs<T: Scalar>(
    n_per_class: usize,
    d: usize,
    classes: usize,
    corruption: f64,
    seed: u64,
) -> Result<Dataset<T>> {
    if !(0.0..1.0).contains(&corruption) {
        return Err(BilevelError::Parameter(format!(
            "corruption {corruption} must lie in [0, 1)"
        )));
    }
    if classes < 2 || d == 0 {
        return Err(BilevelError::Input(
            "need at least 2 classes and 1 feature".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let means: Vec<Vec<f64>> = (0..classes)
        .map(|_| {
            (0..d)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    BLOB_MEAN_SCALE * z
                })
                .collect::<Vec<f64>>()
        })
        .collect();

    let mut ds = Dataset {
        features: Vec::new(),
        labels: Vec::new(),
        original_labels: Vec::new(),
        corrupted: Vec::new(),
        splits: Vec::new(),
        classes,
    };
    for split in [Split::Train, Split::Val, Split::Test] {
        for _ in 0..n_per_class {
            for (c, mean) in means.iter().enumerate() {
                let row: Vec<T> = mean
                    .iter()
                    .map(|&mu| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        T::lit(mu + z)
                    })
                    .collect();
                ds.features.push(row);
                ds.labels.push(c);
                ds.original_labels.push(c);
                ds.corrupted.push(false);
                ds.splits.push(split);
            }
        }
    }

    let train = ds.indices(Split::Train);
    let n_bad = (corruption * train.len() as f64).ceil() as usize;
    for pick in sample(&mut rng, train.len(), n_bad.min(train.len())).into_vec() {
        let i = train[pick];
        let shift = 1 + rng.random_range(0..classes - 1);
        ds.labels[i] = (ds.original_labels[i] + shift) % classes;
        ds.corrupted[i] = true;
    }
    Ok(ds)
}

fn read_idx_header<R: Read>(r: &mut R, magic: u32, dims: usize, what: &str) -> Result<Vec<usize>> {
    let got = r
        .read_u32::<BigEndian>()
        .map_err(|e| BilevelError::Format(format!("{what}: missing header: {e}")))?;
    if got != magic {
        return Err(BilevelError::Format(format!(
            "{what}: magic 0x{got:08x}, expected 0x{magic:08x}"
        )));
    }
    (0..dims)
        .map(|_| {
            r.read_u32::<BigEndian>()
                .map(|v| v as usize)
                .map_err(|e| BilevelError::Format(format!("{what}: truncated header: {e}")))
        })
        .collect()
}

/// Reads an IDX image/label pair (MNIST layout). Pixels are scaled to
/// `[0, 1]`; every row starts in the test split.
pub fn load_idx<T: Scalar>(images_path: &Path, labels_path: &Path) -> Result<Dataset<T>> {
    let mut images = BufReader::new(File::open(images_path)?);
    let mut labels = BufReader::new(File::open(labels_path)?);
    let img_dims = read_idx_header(&mut images, IDX_IMAGES_MAGIC, 3, "images")?;
    let lab_dims = read_idx_header(&mut labels, IDX_LABELS_MAGIC, 1, "labels")?;
    let (n, rows, cols) = (img_dims[0], img_dims[1], img_dims[2]);
    if lab_dims[0] != n {
        return Err(BilevelError::Format(format!(
            "{n} images but {} labels",
            lab_dims[0]
        )));
    }
    let pixels = rows * cols;
    let mut buf = vec![0u8; n * pixels];
    images
        .read_exact(&mut buf)
        .map_err(|_| BilevelError::Format("image payload shorter than header".into()))?;
    let mut lab = vec![0u8; n];
    labels
        .read_exact(&mut lab)
        .map_err(|_| BilevelError::Format("label payload shorter than header".into()))?;
    let mut extra = [0u8; 1];
    if images.read(&mut extra)? != 0 || labels.read(&mut extra)? != 0 {
        return Err(BilevelError::Format(
            "trailing bytes after IDX payload".into(),
        ));
    }
    let scale = T::lit(1.0 / 255.0);
    let features = buf
        .chunks(pixels.max(1))
        .take(n)
        .map(|chunk| chunk.iter().map(|&p| T::lit(p as f64) * scale).collect())
        .collect();
    let labels: Vec<usize> = lab.iter().map(|&l| l as usize).collect();
    if labels.iter().any(|&l| l > 9) {
        return Err(BilevelError::Format("label outside 0..=9".into()));
    }
    Ok(Dataset {
        features,
        original_labels: labels.clone(),
        corrupted: vec![false; n],
        splits: vec![Split::Test; n],
        labels,
        classes: 10,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use byteorder::WriteBytesExt;

    #[test]
    fn no_corruption_means_clean_mask() {
        let ds = synth_blobs::<f64>(20, 3, 3, 0.0, 1).unwrap();
        assert!(ds.corrupted.iter().all(|&c| !c));
        ds.validate().unwrap();
    }

    #[test]
    fn corruption_count() {
        let ds = synth_blobs::<f64>(100, 5, 2, 0.3, 7).unwrap();
        let train = ds.indices(Split::Train);
        assert_eq!(train.len(), 200);
        assert_eq!(train.iter().filter(|&&i| ds.corrupted[i]).count(), 60);
        assert!(ds.indices(Split::Val).iter().all(|&i| !ds.corrupted[i]));
        ds.validate().unwrap();
    }

    #[test]
    fn same_seed_same_data() {
        let a = synth_blobs::<f64>(10, 4, 3, 0.2, 99).unwrap();
        let b = synth_blobs::<f64>(10, 4, 3, 0.2, 99).unwrap();
        let c = synth_blobs::<f64>(10, 4, 3, 0.2, 100).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn bad_corruption_rejected() {
        assert!(synth_blobs::<f64>(10, 2, 2, 1.0, 0).is_err());
    }

    fn write_fixture(
        dir: &Path,
        n: u32,
        label_magic: u32,
    ) -> (std::path::PathBuf, std::path::PathBuf) {
        let img = dir.join("images.idx");
        let lab = dir.join("labels.idx");
        let mut f = File::create(&img).unwrap();
        f.write_u32::<BigEndian>(IDX_IMAGES_MAGIC).unwrap();
        for v in [n, 28, 28] {
            f.write_u32::<BigEndian>(v).unwrap();
        }
        for i in 0..n * 784 {
            f.write_u8((i % 256) as u8).unwrap();
        }
        let mut f = File::create(&lab).unwrap();
        f.write_u32::<BigEndian>(label_magic).unwrap();
        f.write_u32::<BigEndian>(n).unwrap();
        for i in 0..n {
            f.write_u8(i as u8).unwrap();
        }
        (img, lab)
    }

    #[test]
    fn reads_idx_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lab) = write_fixture(dir.path(), 4, IDX_LABELS_MAGIC);
        let ds = load_idx::<f64>(&img, &lab).unwrap();
        assert_eq!(ds.len(), 4);
        assert_eq!(ds.dim(), 784);
        assert!(ds
            .features
            .iter()
            .flatten()
            .all(|&v| (0.0..=1.0).contains(&v)));
        assert_eq!(ds.features[0][255], 1.0);
        assert_eq!(ds.labels, vec![0, 1, 2, 3]);
    }

    #[test]
    fn bad_label_magic_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lab) = write_fixture(dir.path(), 4, 0x0000_0803);
        assert!(matches!(
            load_idx::<f64>(&img, &lab),
            Err(BilevelError::Format(_))
        ));
    }

    #[test]
    fn class_balanced_split() {
        let mut ds = synth_blobs::<f64>(10, 2, 2, 0.0, 3).unwrap();
        ds.assign_class_balanced_splits(8, 6).unwrap();
        let train = ds.indices(Split::Train);
        let val = ds.indices(Split::Val);
        assert_eq!((train.len(), val.len()), (8, 6));
        assert_eq!(train.iter().filter(|&&i| ds.labels[i] == 0).count(), 4);
        assert_eq!(val.iter().filter(|&&i| ds.labels[i] == 1).count(), 3);
        assert!(ds.assign_class_balanced_splits(50, 50).is_err());
    }

    #[test]
    fn csv_export_columns() {
        let ds = synth_blobs::<f64>(2, 3, 2, 0.5, 3).unwrap();
        let mut out = Vec::new();
        ds.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let header = text.lines().next().unwrap();
        assert_eq!(header, "split,label,original_label,corrupted,f_0,f_1,f_2");
        assert_eq!(text.lines().count(), 1 + ds.len());
    }
}
