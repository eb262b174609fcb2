//! Dataset ingestion: IDX-format MNIST (CIFAR-10 binary behind the
//! `cifar` feature), deterministic splitting, and epoch-seeded batch
//! iteration. Pixels are scaled by 1/255 into [0,1] and never
//! standardized — perturbation budgets are expressed in raw pixel scale.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::loss::one_hot;
use crate::tensor::Vector;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

/// Immutable labeled image collection, pixels flattened to [0,1].
#[derive(Debug, Clone)]
pub struct Dataset {
    images: Vec<Vector>,
    labels: Vec<usize>,
    num_classes: usize,
}

impl Dataset {
    /// Validates once at construction: equal lengths, pixels in [0,1],
    /// labels in range. Out-of-range pixels are an error, never clamped.
    pub fn new(images: Vec<Vector>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::CountMismatch {
                images: images.len(),
                labels: labels.len(),
            });
        }
        for (i, img) in images.iter().enumerate() {
            for (o, &p) in img.iter().enumerate() {
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::PixelRange {
                        example: i,
                        offset: o,
                        value: p,
                    });
                }
            }
        }
        for (i, &label) in labels.iter().enumerate() {
            if label >= num_classes {
                return Err(Error::InvalidConfig(format!(
                    "label {label} of example {i} is outside {num_classes} classes"
                )));
            }
        }
        Ok(Dataset {
            images,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn image(&self, i: usize) -> &Vector {
        &self.images[i]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn images(&self) -> &[Vector] {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }
}

/// Train/validation/test partition; validation is carved out of the
/// training portion only.
#[derive(Debug, Clone)]
pub struct Split {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Pull `N` big-endian u32 header words, guarding length.
fn read_header<const N: usize>(bytes: &[u8], path: &Path) -> Result<[u32; N]> {
    let needed = 4 * N;
    if bytes.len() < needed {
        return Err(Error::Truncated {
            path: path.display().to_string(),
            needed,
            had: bytes.len(),
        });
    }
    let mut out = [0u32; N];
    for (i, w) in out.iter_mut().enumerate() {
        *w = u32::from_be_bytes(bytes[4 * i..4 * i + 4].try_into().expect("4 bytes"));
    }
    Ok(out)
}

/// Load an MNIST-style IDX image/label pair.
pub fn load_mnist_idx(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<Dataset> {
    let images_path = images_path.as_ref();
    let labels_path = labels_path.as_ref();

    let img_bytes = read_file(images_path)?;
    let [magic, count, rows, cols] = read_header::<4>(&img_bytes, images_path)?;
    if magic != IMAGE_MAGIC {
        return Err(Error::BadMagic {
            path: images_path.display().to_string(),
            expected: IMAGE_MAGIC,
            got: magic,
        });
    }
    let (count, rows, cols) = (count as usize, rows as usize, cols as usize);
    let pixel_len = rows * cols;
    let needed = 16 + count * pixel_len;
    if img_bytes.len() < needed {
        return Err(Error::Truncated {
            path: images_path.display().to_string(),
            needed,
            had: img_bytes.len(),
        });
    }

    let lbl_bytes = read_file(labels_path)?;
    let [lmagic, lcount] = read_header::<2>(&lbl_bytes, labels_path)?;
    if lmagic != LABEL_MAGIC {
        return Err(Error::BadMagic {
            path: labels_path.display().to_string(),
            expected: LABEL_MAGIC,
            got: lmagic,
        });
    }
    let lcount = lcount as usize;
    if lcount != count {
        return Err(Error::CountMismatch {
            images: count,
            labels: lcount,
        });
    }
    let lneeded = 8 + lcount;
    if lbl_bytes.len() < lneeded {
        return Err(Error::Truncated {
            path: labels_path.display().to_string(),
            needed: lneeded,
            had: lbl_bytes.len(),
        });
    }

    let images: Vec<Vector> = (0..count)
        .map(|i| {
            let start = 16 + i * pixel_len;
            Vector::new(
                img_bytes[start..start + pixel_len]
                    .iter()
                    .map(|&b| f64::from(b) / 255.0)
                    .collect(),
            )
        })
        .collect();
    let labels: Vec<usize> = lbl_bytes[8..8 + lcount].iter().map(|&b| b as usize).collect();
    Dataset::new(images, labels, 10)
}

/// CIFAR-10 binary batches: 3073-byte records, 1 label byte + 3072
/// channel-major pixels.
#[cfg(feature = "cifar")]
pub fn load_cifar10_bin(paths: &[impl AsRef<Path>]) -> Result<Dataset> {
    const RECORD: usize = 3073;
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for path in paths {
        let path = path.as_ref();
        let bytes = read_file(path)?;
        if bytes.is_empty() || bytes.len() % RECORD != 0 {
            return Err(Error::Truncated {
                path: path.display().to_string(),
                needed: (bytes.len() / RECORD + 1) * RECORD,
                had: bytes.len(),
            });
        }
        for rec in bytes.chunks_exact(RECORD) {
            labels.push(rec[0] as usize);
            images.push(Vector::new(
                rec[1..].iter().map(|&b| f64::from(b) / 255.0).collect(),
            ));
        }
    }
    Dataset::new(images, labels, 10)
}

/// Deterministic seeded split of `d` into (rest, validation).
pub fn split(d: &Dataset, val_size: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    if val_size > d.len() {
        return Err(Error::ValSplitTooLarge {
            requested: val_size,
            available: d.len(),
        });
    }
    let mut indices: Vec<usize> = (0..d.len()).collect();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);
    let (val_idx, train_idx) = indices.split_at(val_size);
    Ok((d.subset(train_idx), d.subset(val_idx)))
}

/// One shuffled pass over the dataset: owned inputs paired with one-hot
/// labels, last partial batch kept.
pub struct BatchIter<'a> {
    data: &'a Dataset,
    order: Vec<usize>,
    cursor: usize,
    batch_size: usize,
}

/// Epoch-seeded deterministic shuffle: same (seed, epoch) ⇒ same order.
pub fn batches(d: &Dataset, batch_size: usize, seed: u64, epoch: usize) -> BatchIter<'_> {
    assert!(batch_size >= 1, "batch_size must be at least 1");
    let mut order: Vec<usize> = (0..d.len()).collect();
    let mut rng = ChaCha12Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    order.shuffle(&mut rng);
    BatchIter {
        data: d,
        order,
        cursor: 0,
        batch_size,
    }
}

impl Iterator for BatchIter<'_> {
    type Item = (Vec<Vector>, Vec<Vector>);

    fn next(&mut self) -> Option<Self::Item> {
        if self.cursor >= self.order.len() {
            return None;
        }
        let end = (self.cursor + self.batch_size).min(self.order.len());
        let idx = &self.order[self.cursor..end];
        self.cursor = end;
        let inputs = idx.iter().map(|&i| self.data.image(i).clone()).collect();
        let targets = idx
            .iter()
            .map(|&i| one_hot(self.data.label(i), self.data.num_classes()))
            .collect();
        Some((inputs, targets))
    }
}
