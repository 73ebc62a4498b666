//! Dataset ingestion: MNIST IDX, CIFAR-10 binary batches, validation
//! splitting and the synthetic sparse-regression generator.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::network::Batch;
use crate::rng::SeededRng;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Labelled images, `images` is `[N, C, H, W]` with pixels in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct Dataset<T: Scalar = f64> {
    pub images: Tensor<T>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub split: Split,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(images: Tensor<T>, labels: Vec<usize>, num_classes: usize, split: Split) -> Result<Self> {
        if images.shape().len() != 4 || images.shape()[0] != labels.len() {
            return Err(Error::Dimension(format!(
                "{} labels for images of shape {:?}",
                labels.len(),
                images.shape()
            )));
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::Argument(format!("label {y} out of range for {num_classes} classes")));
        }
        Ok(Self {
            images,
            labels,
            num_classes,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Per-sample shape `[C, H, W]`.
    pub fn sample_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    /// Samples at `indices`, in that order.
    pub fn gather(&self, indices: &[usize]) -> Result<Batch<T>> {
        let per = self.images.row_len();
        let mut data = Vec::with_capacity(indices.len() * per);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Index(format!("sample {i} of {}", self.len())));
            }
            data.extend_from_slice(&self.images.data()[i * per..(i + 1) * per]);
            labels.push(self.labels[i]);
        }
        let [c, h, w] = self.sample_shape();
        Batch::new(Tensor::new(vec![indices.len(), c, h, w], data)?, labels)
    }

    pub fn subset(&self, indices: &[usize], split: Split) -> Result<Self> {
        let b = self.gather(indices)?;
        Self::new(b.inputs, b.labels, self.num_classes, split)
    }

    /// The first `n` samples (all of them if `n >= len`).
    pub fn limit(&self, n: usize) -> Result<Self> {
        if n >= self.len() {
            return Ok(self.clone());
        }
        self.subset(&(0..n).collect::<Vec<_>>(), self.split)
    }

    pub fn cast<U: Scalar>(&self) -> Dataset<U> {
        Dataset {
            images: self.images.cast(),
            labels: self.labels.clone(),
            num_classes: self.num_classes,
            split: self.split,
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format {
            offset,
            msg: "truncated header".into(),
        })
}

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Parses an IDX image file into `[N, 1, rows, cols]` pixels scaled by 1/255.
pub fn parse_idx_images<T: Scalar>(bytes: &[u8]) -> Result<Tensor<T>> {
    let magic = be_u32(bytes, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format {
            offset: 0,
            msg: format!("image magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"),
        });
    }
    let n = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let body = &bytes[16..];
    let need = n * rows * cols;
    if body.len() != need {
        return Err(Error::Format {
            offset: 16 + body.len().min(need),
            msg: format!("expected {need} pixel bytes, found {}", body.len()),
        });
    }
    let scale = T::of(1.0 / 255.0);
    let data = body.iter().map(|&b| T::of(f64::from(b)) * scale).collect();
    Tensor::new(vec![n, 1, rows, cols], data)
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let magic = be_u32(bytes, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format {
            offset: 0,
            msg: format!("label magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"),
        });
    }
    let n = be_u32(bytes, 4)? as usize;
    let body = &bytes[8..];
    if body.len() != n {
        return Err(Error::Format {
            offset: 8 + body.len().min(n),
            msg: format!("expected {n} labels, found {}", body.len()),
        });
    }
    Ok(body.iter().map(|&b| b as usize).collect())
}

fn idx_pair<T: Scalar>(dir: &Path, images: &str, labels: &str, split: Split) -> Result<Dataset<T>> {
    let x = parse_idx_images(&read(&dir.join(images))?)?;
    let y = parse_idx_labels(&read(&dir.join(labels))?)?;
    if x.shape()[0] != y.len() {
        return Err(Error::Format {
            offset: 4,
            msg: format!("{} images but {} labels", x.shape()[0], y.len()),
        });
    }
    Dataset::new(x, y, 10, split)
}

/// Loads the four standard MNIST IDX files from `dir`.
pub fn load_mnist<T: Scalar>(dir: &Path) -> Result<(Dataset<T>, Dataset<T>)> {
    Ok((
        idx_pair(dir, "train-images-idx3-ubyte", "train-labels-idx1-ubyte", Split::Train)?,
        idx_pair(dir, "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte", Split::Test)?,
    ))
}

pub const CIFAR_RECORD: usize = 1 + 3 * 32 * 32;

/// Parses concatenated CIFAR-10 binary records (label byte + 3072
/// channel-major pixels).
pub fn parse_cifar_records<T: Scalar>(bytes: &[u8], split: Split) -> Result<Dataset<T>> {
    if bytes.len() % CIFAR_RECORD != 0 {
        return Err(Error::Format {
            offset: bytes.len() - bytes.len() % CIFAR_RECORD,
            msg: format!("trailing partial record of {} bytes", bytes.len() % CIFAR_RECORD),
        });
    }
    let n = bytes.len() / CIFAR_RECORD;
    let scale = T::of(1.0 / 255.0);
    let mut data = Vec::with_capacity(n * (CIFAR_RECORD - 1));
    let mut labels = Vec::with_capacity(n);
    for (r, rec) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
        if rec[0] >= 10 {
            return Err(Error::Format {
                offset: r * CIFAR_RECORD,
                msg: format!("label byte {} out of range", rec[0]),
            });
        }
        labels.push(rec[0] as usize);
        data.extend(rec[1..].iter().map(|&b| T::of(f64::from(b)) * scale));
    }
    Dataset::new(Tensor::new(vec![n, 3, 32, 32], data)?, labels, 10, split)
}

/// Loads `data_batch_1..5.bin` and `test_batch.bin` from `dir`.
pub fn load_cifar10<T: Scalar>(dir: &Path) -> Result<(Dataset<T>, Dataset<T>)> {
    let mut train = Vec::new();
    for i in 1..=5 {
        let name = format!("data_batch_{i}.bin");
        let bytes = read(&dir.join(&name))?;
        if bytes.len() % CIFAR_RECORD != 0 {
            return Err(Error::Format {
                offset: train.len() + bytes.len() - bytes.len() % CIFAR_RECORD,
                msg: format!("{name}: trailing partial record"),
            });
        }
        train.extend_from_slice(&bytes);
    }
    let test = read(&dir.join("test_batch.bin"))?;
    Ok((parse_cifar_records(&train, Split::Train)?, parse_cifar_records(&test, Split::Test)?))
}

/// Seeded shuffle, then the last `fraction` of the permutation becomes the
/// validation set.
pub fn split_validation<T: Scalar>(
    train: &Dataset<T>,
    fraction: f64,
    rng: &mut SeededRng,
) -> Result<(Dataset<T>, Dataset<T>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Argument(format!("validation fraction {fraction} not in (0, 1)")));
    }
    let perm = rng.permutation(train.len());
    let n_val = (train.len() as f64 * fraction).round() as usize;
    let (tr, va) = perm.split_at(train.len() - n_val);
    Ok((train.subset(tr, Split::Train)?, train.subset(va, Split::Val)?))
}

/// Sparse linear regression problem `y = X β* + σ ε`.
#[derive(Debug, Clone)]
pub struct SynthLinearTask {
    /// Row-major `[n, p]`.
    pub x: Tensor<f64>,
    pub beta: Vec<f64>,
    pub y: Vec<f64>,
    pub support: Vec<usize>,
}

/// X has i.i.d. standard-normal entries; `s` coordinates chosen uniformly
/// get magnitude `b` with random sign.
pub fn gen_synth(n: usize, p: usize, s: usize, b: f64, sigma: f64, rng: &mut SeededRng) -> Result<SynthLinearTask> {
    if s > p {
        return Err(Error::Argument(format!("support size {s} exceeds dimension {p}")));
    }
    let mut support: Vec<usize> = rng.permutation(p).into_iter().take(s).collect();
    support.sort_unstable();
    let mut beta = vec![0.0; p];
    for &j in &support {
        beta[j] = if rng.uniform() < 0.5 { -b } else { b };
    }
    let x = Tensor::from_fn(&[n, p], |_| rng.normal());
    let y = x
        .data()
        .chunks_exact(p)
        .map(|row| {
            let clean: f64 = row.iter().zip(&beta).map(|(a, c)| a * c).sum();
            clean + sigma * rng.normal()
        })
        .collect();
    Ok(SynthLinearTask { x, beta, y, support })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx_images(n: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
        let mut v = IDX_IMAGES_MAGIC.to_be_bytes().to_vec();
        for d in [n, rows, cols] {
            v.extend(d.to_be_bytes());
        }
        v.extend_from_slice(pixels);
        v
    }

    #[test]
    fn idx_images_scale_to_unit_interval() {
        let t: Tensor = parse_idx_images(&idx_images(2, 1, 2, &[0, 255, 51, 102])).unwrap();
        assert_eq!(t.shape(), &[2, 1, 1, 2]);
        assert_eq!(t.data(), &[0.0, 1.0, 0.2, 0.4]);
    }

    #[test]
    fn idx_bad_magic_and_truncation_report_offsets() {
        let mut labels = IDX_IMAGES_MAGIC.to_be_bytes().to_vec();
        labels.extend(1u32.to_be_bytes());
        labels.push(3);
        assert!(matches!(parse_idx_labels(&labels), Err(Error::Format { offset: 0, .. })));

        let short = idx_images(2, 1, 2, &[0, 1, 2]);
        assert!(matches!(parse_idx_images::<f64>(&short), Err(Error::Format { offset: 19, .. })));
        assert!(matches!(parse_idx_images::<f64>(&[0, 0, 8]), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn cifar_truncated_record_is_rejected() {
        let mut bytes = vec![0u8; 2 * CIFAR_RECORD];
        bytes[CIFAR_RECORD] = 9;
        let d: Dataset = parse_cifar_records(&bytes, Split::Train).unwrap();
        assert_eq!(d.labels, vec![0, 9]);
        assert_eq!(d.sample_shape(), [3, 32, 32]);
        bytes.pop();
        assert!(matches!(
            parse_cifar_records::<f64>(&bytes, Split::Train),
            Err(Error::Format { offset, .. }) if offset == CIFAR_RECORD
        ));
    }

    fn toy(n: usize) -> Dataset {
        Dataset::new(
            Tensor::from_fn(&[n, 1, 1, 1], |i| i as f64),
            (0..n).map(|i| i % 3).collect(),
            3,
            Split::Train,
        )
        .unwrap()
    }

    #[test]
    fn split_is_disjoint_exhaustive_and_seeded() {
        let d = toy(100);
        let (tr, va) = split_validation(&d, 0.2, &mut SeededRng::new(5)).unwrap();
        assert_eq!((tr.len(), va.len()), (80, 20));
        let mut all: Vec<usize> = tr.images.data().iter().chain(va.images.data()).map(|&v| v as usize).collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        let (tr2, _) = split_validation(&d, 0.2, &mut SeededRng::new(5)).unwrap();
        assert_eq!(tr.images, tr2.images);
        for f in [0.0, 1.0, -0.1, f64::NAN] {
            assert!(split_validation(&d, f, &mut SeededRng::new(5)).is_err());
        }
    }

    #[test]
    fn synth_noiseless_and_reproducible() {
        let t = gen_synth(30, 10, 3, 2.0, 0.0, &mut SeededRng::new(1)).unwrap();
        assert_eq!(t.beta.iter().filter(|b| **b != 0.0).count(), 3);
        assert!(t.beta.iter().all(|b| *b == 0.0 || b.abs() == 2.0));
        for (row, y) in t.x.data().chunks_exact(10).zip(&t.y) {
            let fit: f64 = row.iter().zip(&t.beta).map(|(a, b)| a * b).sum();
            assert_eq!(fit, *y);
        }
        let u = gen_synth(30, 10, 3, 2.0, 0.0, &mut SeededRng::new(1)).unwrap();
        assert_eq!(t.y, u.y);
        assert!(gen_synth(5, 3, 4, 1.0, 0.0, &mut SeededRng::new(1)).is_err());
    }

    #[test]
    fn labels_out_of_range_rejected() {
        assert!(Dataset::new(Tensor::<f64>::zeros(&[1, 1, 1, 1]), vec![3], 3, Split::Test).is_err());
    }
}
