//! MNIST IDX files and labeled datasets.
//!
//! Image files use magic `0x00000803` (unsigned bytes, three dimensions) and
//! label files `0x00000801`; all header integers are big-endian. Pixels are
//! scaled to `[0, 1]` by dividing by 255 on read and quantized with
//! `round(v * 255)` on write. Real-valued feature matrices (encoded datasets)
//! are stored as two-dimensional IDX files of big-endian doubles, magic
//! `0x00000E02`.

use std::path::Path;

use ndarray::{Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;

use crate::codec::{len_u32, read_file, write_file, ByteReader};
use crate::error::{Error, Result};
use crate::image::ImageGrid;
use crate::rng::{purpose_stream, Purpose};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;
pub const FEATURE_MAGIC: u32 = 0x0000_0E02;
pub const NUM_CLASSES: usize = 10;

/// Feature matrix (one row per sample) with class labels 0-9.
///
/// When the rows are flattened images, `image_shape` records their
/// `(height, width)` so they can be viewed as [`ImageGrid`]s again.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Array2<f64>,
    labels: Vec<u8>,
    image_shape: Option<(usize, usize)>,
}

impl LabeledDataset {
    pub fn new(features: Array2<f64>, labels: Vec<u8>) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::DimensionMismatch {
                what: "label count",
                expected: features.nrows(),
                actual: labels.len(),
            });
        }
        if let Some(bad) = features.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("feature value {bad} outside [0, 1]")));
        }
        if let Some(bad) = labels.iter().find(|&&l| l as usize >= NUM_CLASSES) {
            return Err(Error::invalid(format!("label {bad} outside 0..{NUM_CLASSES}")));
        }
        Ok(Self {
            features,
            labels,
            image_shape: None,
        })
    }

    pub fn from_images(images: &[ImageGrid], labels: Vec<u8>) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                what: "label count",
                expected: images.len(),
                actual: labels.len(),
            });
        }
        let first = images.first().ok_or(Error::Empty("image set"))?;
        let (h, w) = (first.height(), first.width());
        let mut features = Array2::zeros((images.len(), h * w));
        for (i, (img, mut row)) in images.iter().zip(features.rows_mut()).enumerate() {
            if (img.height(), img.width()) != (h, w) {
                return Err(Error::invalid(format!(
                    "image {i} is {}x{}, expected {h}x{w}",
                    img.height(),
                    img.width()
                )));
            }
            row.assign(&ArrayView1::from(img.pixels()));
        }
        Self::new(features, labels).map(|d| d.with_image_shape(h, w))
    }

    pub(crate) fn from_parts_unchecked(
        features: Array2<f64>,
        labels: Vec<u8>,
        image_shape: Option<(usize, usize)>,
    ) -> Self {
        Self {
            features,
            labels,
            image_shape,
        }
    }

    pub fn with_image_shape(mut self, height: usize, width: usize) -> Self {
        assert_eq!(height * width, self.dim(), "image shape must match feature dim");
        self.image_shape = Some((height, width));
        self
    }

    pub fn image_shape(&self) -> Option<(usize, usize)> {
        self.image_shape
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn row(&self, index: usize) -> &[f64] {
        let row = self.features.row(index);
        // Rows of a standard-layout matrix are contiguous.
        row.to_slice().expect("row-major feature matrix")
    }

    pub fn image(&self, index: usize) -> Result<ImageGrid> {
        let (h, w) = self
            .image_shape
            .ok_or_else(|| Error::invalid("dataset rows are not images"))?;
        Ok(ImageGrid::from_raw(h, w, self.row(index).to_vec()))
    }

    pub fn images(&self) -> Result<Vec<ImageGrid>> {
        (0..self.len()).map(|i| self.image(i)).collect()
    }

    pub fn class_counts(&self) -> [usize; NUM_CLASSES] {
        let mut counts = [0; NUM_CLASSES];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            features: self.features.select(Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            image_shape: self.image_shape,
        }
    }
}

/// Pairs an image file with a label file, checking the counts agree.
pub fn assemble(images: &[ImageGrid], labels: Vec<u8>) -> Result<LabeledDataset> {
    LabeledDataset::from_images(images, labels)
}

fn parse_image_header(r: &mut ByteReader<'_>) -> Result<(usize, usize, usize)> {
    let magic = r.u32_be()?;
    if magic != IMAGE_MAGIC {
        return Err(Error::Format(format!(
            "IDX image magic {magic:#010x}, expected {IMAGE_MAGIC:#010x}"
        )));
    }
    let count = r.u32_be()? as usize;
    let rows = r.u32_be()? as usize;
    let cols = r.u32_be()? as usize;
    Ok((count, rows, cols))
}

/// Parses an IDX image buffer into a `count x (rows*cols)` matrix.
pub fn parse_idx_image_matrix(bytes: &[u8]) -> Result<(Array2<f64>, (usize, usize))> {
    let mut r = ByteReader::new(bytes);
    let (count, rows, cols) = parse_image_header(&mut r)?;
    let n = count
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| Error::Format("IDX dimensions overflow".into()))?;
    let data = r.take(n)?;
    r.finish()?;
    let values = data.iter().map(|&b| b as f64 / 255.0).collect();
    let matrix = Array2::from_shape_vec((count, rows * cols), values).expect("shape checked");
    Ok((matrix, (rows, cols)))
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<Vec<ImageGrid>> {
    let (matrix, (h, w)) = parse_idx_image_matrix(bytes)?;
    Ok(matrix
        .rows()
        .into_iter()
        .map(|row| ImageGrid::from_raw(h, w, row.to_vec()))
        .collect())
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let mut r = ByteReader::new(bytes);
    let magic = r.u32_be()?;
    if magic != LABEL_MAGIC {
        return Err(Error::Format(format!(
            "IDX label magic {magic:#010x}, expected {LABEL_MAGIC:#010x}"
        )));
    }
    let count = r.u32_be()? as usize;
    let labels = r.take(count)?.to_vec();
    r.finish()?;
    if let Some((i, l)) = labels.iter().enumerate().find(|(_, &l)| l as usize >= NUM_CLASSES) {
        return Err(Error::Format(format!("label {l} at index {i} outside 0..{NUM_CLASSES}")));
    }
    Ok(labels)
}

pub fn read_idx_images(path: impl AsRef<Path>) -> Result<Vec<ImageGrid>> {
    parse_idx_images(&read_file(path.as_ref())?)
}

pub fn read_idx_labels(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    parse_idx_labels(&read_file(path.as_ref())?)
}

/// Reads an image/label file pair straight into a dataset.
pub fn read_idx_dataset(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<LabeledDataset> {
    let (features, (h, w)) = parse_idx_image_matrix(&read_file(images.as_ref())?)?;
    let labels = read_idx_labels(labels)?;
    if features.nrows() != labels.len() {
        return Err(Error::Format(format!(
            "{} images but {} labels",
            features.nrows(),
            labels.len()
        )));
    }
    Ok(LabeledDataset::from_parts_unchecked(features, labels, Some((h, w))))
}

#[inline]
pub fn quantize(value: f64) -> u8 {
    (value * 255.0).round().clamp(0.0, 255.0) as u8
}

fn encode_image_rows<'a>(
    count: usize,
    shape: (usize, usize),
    rows: impl Iterator<Item = &'a [f64]>,
) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(16 + count * shape.0 * shape.1);
    out.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
    out.extend_from_slice(&len_u32("image count", count)?.to_be_bytes());
    out.extend_from_slice(&len_u32("rows", shape.0)?.to_be_bytes());
    out.extend_from_slice(&len_u32("cols", shape.1)?.to_be_bytes());
    for row in rows {
        out.extend(row.iter().map(|&v| quantize(v)));
    }
    Ok(out)
}

pub fn encode_idx_images(images: &[ImageGrid]) -> Result<Vec<u8>> {
    let shape = images.first().map_or((0, 0), |i| (i.height(), i.width()));
    if let Some(bad) = images.iter().find(|i| (i.height(), i.width()) != shape) {
        return Err(Error::invalid(format!(
            "mixed image sizes: {}x{} vs {}x{}",
            bad.height(),
            bad.width(),
            shape.0,
            shape.1
        )));
    }
    encode_image_rows(images.len(), shape, images.iter().map(|i| i.pixels()))
}

pub fn encode_idx_labels(labels: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&len_u32("label count", labels.len())?.to_be_bytes());
    out.extend_from_slice(labels);
    Ok(out)
}

pub fn write_idx_images(images: &[ImageGrid], path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_idx_images(images)?)
}

pub fn write_idx_labels(labels: &[u8], path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_idx_labels(labels)?)
}

/// Writes the rows of an image dataset as an IDX image file.
pub fn write_idx_dataset_images(dataset: &LabeledDataset, path: impl AsRef<Path>) -> Result<()> {
    let shape = dataset
        .image_shape()
        .ok_or_else(|| Error::invalid("dataset rows are not images"))?;
    let bytes = encode_image_rows(dataset.len(), shape, (0..dataset.len()).map(|i| dataset.row(i)))?;
    write_file(path.as_ref(), &bytes)
}

/// Stores a real-valued feature matrix as an IDX file of doubles.
pub fn write_idx_features(features: &Array2<f64>, path: impl AsRef<Path>) -> Result<()> {
    let mut out = Vec::with_capacity(12 + features.len() * 8);
    out.extend_from_slice(&FEATURE_MAGIC.to_be_bytes());
    out.extend_from_slice(&len_u32("rows", features.nrows())?.to_be_bytes());
    out.extend_from_slice(&len_u32("cols", features.ncols())?.to_be_bytes());
    for v in features.iter() {
        out.extend_from_slice(&v.to_be_bytes());
    }
    write_file(path.as_ref(), &out)
}

pub fn read_idx_features(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    let bytes = read_file(path.as_ref())?;
    let mut r = ByteReader::new(&bytes);
    let magic = r.u32_be()?;
    if magic != FEATURE_MAGIC {
        return Err(Error::Format(format!(
            "IDX feature magic {magic:#010x}, expected {FEATURE_MAGIC:#010x}"
        )));
    }
    let rows = r.u32_be()? as usize;
    let cols = r.u32_be()? as usize;
    let n = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::Format("IDX dimensions overflow".into()))?;
    if r.remaining() < n * 8 {
        return Err(Error::Truncated {
            expected: r.position() + n * 8,
            actual: bytes.len(),
        });
    }
    let values = (0..n).map(|_| r.f64_be()).collect::<Result<Vec<_>>>()?;
    r.finish()?;
    Ok(Array2::from_shape_vec((rows, cols), values).expect("shape checked"))
}

/// Clean MNIST train and test splits from a directory holding the four
/// standard (decompressed) IDX files.
pub fn load_mnist(dir: impl AsRef<Path>) -> Result<(LabeledDataset, LabeledDataset)> {
    let dir = dir.as_ref();
    let train = read_idx_dataset(
        dir.join("train-images-idx3-ubyte"),
        dir.join("train-labels-idx1-ubyte"),
    )?;
    let test = read_idx_dataset(
        dir.join("t10k-images-idx3-ubyte"),
        dir.join("t10k-labels-idx1-ubyte"),
    )?;
    Ok((train, test))
}

/// Class-stratified sample of `n` rows without replacement.
///
/// Each class receives `n * class_count / total` rows, with the leftover
/// rows handed out by largest remainder (ties to the lower class). Rows are
/// drawn uniformly within each class and the result is returned in a seeded
/// random order.
pub fn subsample(dataset: &LabeledDataset, n: usize, seed: u64) -> Result<LabeledDataset> {
    let total = dataset.len();
    if n > total {
        return Err(Error::invalid(format!("cannot subsample {n} rows from {total}")));
    }
    let mut rng = purpose_stream(seed, Purpose::Subsample, 0);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); NUM_CLASSES];
    for (i, &l) in dataset.labels().iter().enumerate() {
        by_class[l as usize].push(i);
    }

    let mut quotas: Vec<usize> = by_class.iter().map(|c| c.len() * n / total.max(1)).collect();
    let mut leftover = n - quotas.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..NUM_CLASSES).collect();
    // Largest remainder first; stable sort keeps the lower class on ties.
    order.sort_by_key(|&c| std::cmp::Reverse((by_class[c].len() * n) % total.max(1)));
    for &c in order.iter().cycle() {
        if leftover == 0 {
            break;
        }
        if quotas[c] < by_class[c].len() {
            quotas[c] += 1;
            leftover -= 1;
        }
    }

    let mut picked = Vec::with_capacity(n);
    for (members, &quota) in by_class.iter_mut().zip(&quotas) {
        members.shuffle(&mut rng);
        picked.extend_from_slice(&members[..quota]);
    }
    picked.shuffle(&mut rng);
    Ok(dataset.select(&picked))
}
