//! Noisy digit variants: additive white Gaussian noise, motion blur, and
//! AWGN on top of reduced contrast.
//!
//! Each sample `i` draws from its own stream `(seed, Noise, i)` (see
//! [`crate::rng`]), so the output does not depend on how work is scheduled.

use ndarray::{Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::ImageGrid;
use crate::ingest::LabeledDataset;
use crate::rng::{purpose_stream, Purpose};

pub const DEFAULT_AWGN_SIGMA: f64 = 0.1;
pub const DEFAULT_BLUR_LENGTH: usize = 5;
pub const DEFAULT_BLUR_ANGLE: f64 = 45.0;
pub const DEFAULT_CONTRAST_SCALE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    Awgn,
    MotionBlur,
    /// Contrast reduction followed by AWGN.
    AwgnReducedContrast,
}

impl NoiseKind {
    pub fn name(self) -> &'static str {
        match self {
            NoiseKind::Awgn => "awgn",
            NoiseKind::MotionBlur => "motion_blur",
            NoiseKind::AwgnReducedContrast => "awgn_reduced_contrast",
        }
    }
}

impl std::str::FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "awgn" => Ok(NoiseKind::Awgn),
            "motion_blur" => Ok(NoiseKind::MotionBlur),
            "awgn_reduced_contrast" => Ok(NoiseKind::AwgnReducedContrast),
            other => Err(Error::invalid(format!("unknown noise kind {other:?}"))),
        }
    }
}

impl std::fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    /// Standard deviation on the `[0, 1]` pixel scale.
    pub awgn_sigma: f64,
    pub blur_length: usize,
    /// Degrees, counter-clockwise from the positive column axis.
    pub blur_angle: f64,
    pub contrast_scale: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(kind: NoiseKind, seed: u64) -> Self {
        Self {
            kind,
            awgn_sigma: DEFAULT_AWGN_SIGMA,
            blur_length: DEFAULT_BLUR_LENGTH,
            blur_angle: DEFAULT_BLUR_ANGLE,
            contrast_scale: DEFAULT_CONTRAST_SCALE,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.awgn_sigma >= 0.0 && self.awgn_sigma.is_finite()) {
            return Err(Error::invalid(format!("sigma {} must be >= 0", self.awgn_sigma)));
        }
        if self.blur_length == 0 {
            return Err(Error::invalid("blur length must be >= 1"));
        }
        if !self.blur_angle.is_finite() {
            return Err(Error::invalid("blur angle must be finite"));
        }
        if !(self.contrast_scale > 0.0 && self.contrast_scale <= 1.0) {
            return Err(Error::invalid(format!("contrast scale {} outside (0, 1]", self.contrast_scale)));
        }
        Ok(())
    }
}

/// Adds i.i.d. `N(0, sigma^2)` to every pixel and clips to `[0, 1]`.
pub fn add_awgn(image: &ImageGrid, sigma: f64, rng: &mut impl Rng) -> Result<ImageGrid> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!("sigma {sigma} must be >= 0")));
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::invalid(e.to_string()))?;
    let pixels = image
        .pixels()
        .iter()
        .map(|&p| (p + normal.sample(rng)).clamp(0.0, 1.0))
        .collect();
    Ok(ImageGrid::from_raw(image.height(), image.width(), pixels))
}

/// Uniform-weight digital line through the kernel centre.
///
/// The line has `length` pixels (rounded up to odd) along its major axis and
/// the kernel is cropped to the line's bounding box, so a horizontal line is
/// a `1 x length` row and a 45 degree line a `length x length` diagonal.
pub fn motion_blur_kernel(length: usize, angle_degrees: f64) -> Result<Array2<f64>> {
    if length == 0 {
        return Err(Error::invalid("blur length must be >= 1"));
    }
    if !angle_degrees.is_finite() {
        return Err(Error::invalid("blur angle must be finite"));
    }
    let half = (length / 2) as i64;
    let count = 2 * half + 1;
    let theta = angle_degrees.to_radians();
    // rows grow downwards
    let (dx, dy) = (theta.cos(), -theta.sin());
    let points: Vec<(i64, i64)> = (-half..=half)
        .map(|k| {
            if dx.abs() >= dy.abs() {
                ((k as f64 * dy / dx).round() as i64, k)
            } else {
                (k, (k as f64 * dx / dy).round() as i64)
            }
        })
        .collect();
    let r_ext = points.iter().map(|p| p.0.abs()).max().unwrap();
    let c_ext = points.iter().map(|p| p.1.abs()).max().unwrap();
    let mut kernel = Array2::zeros(((2 * r_ext + 1) as usize, (2 * c_ext + 1) as usize));
    let weight = 1.0 / count as f64;
    for (r, c) in points {
        kernel[((r + r_ext) as usize, (c + c_ext) as usize)] = weight;
    }
    Ok(kernel)
}

/// 2-D correlation with replicate-edge padding. The kernel centre is at
/// `(rows / 2, cols / 2)`; entries must be non-negative and sum to 1.
pub fn convolve(image: &ImageGrid, kernel: &Array2<f64>) -> Result<ImageGrid> {
    let (kh, kw) = kernel.dim();
    let (h, w) = (image.height(), image.width());
    if kh == 0 || kw == 0 {
        return Err(Error::invalid("empty kernel"));
    }
    if kh > h || kw > w {
        return Err(Error::invalid(format!("{kh}x{kw} kernel larger than {h}x{w} image")));
    }
    if kernel.iter().any(|&k| k.is_nan() || k < 0.0) || (kernel.sum() - 1.0).abs() > 1e-9 {
        return Err(Error::invalid("kernel must be non-negative and sum to 1"));
    }
    let (ch, cw) = (kh / 2, kw / 2);
    let taps: Vec<(isize, isize, f64)> = kernel
        .indexed_iter()
        .filter(|(_, &k)| k != 0.0)
        .map(|((i, j), &k)| (i as isize - ch as isize, j as isize - cw as isize, k))
        .collect();
    let mut out = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            let acc: f64 = taps
                .iter()
                .map(|&(di, dj, k)| {
                    let rr = (r as isize + di).clamp(0, h as isize - 1) as usize;
                    let cc = (c as isize + dj).clamp(0, w as isize - 1) as usize;
                    k * image.get(rr, cc)
                })
                .sum();
            out.push(acc.clamp(0.0, 1.0));
        }
    }
    Ok(ImageGrid::from_raw(h, w, out))
}

/// Linear compression towards mid-gray: `p -> 0.5 + scale * (p - 0.5)`.
pub fn reduce_contrast(image: &ImageGrid, scale: f64) -> Result<ImageGrid> {
    if !(scale > 0.0 && scale <= 1.0) {
        return Err(Error::invalid(format!("contrast scale {scale} outside (0, 1]")));
    }
    let pixels = image
        .pixels()
        .iter()
        .map(|&p| (scale * p + 0.5 * (1.0 - scale)).clamp(0.0, 1.0))
        .collect();
    Ok(ImageGrid::from_raw(image.height(), image.width(), pixels))
}

/// Applies `spec` to one image using the caller's stream.
pub fn corrupt(image: &ImageGrid, spec: &NoiseSpec, rng: &mut impl Rng) -> Result<ImageGrid> {
    match spec.kind {
        NoiseKind::Awgn => add_awgn(image, spec.awgn_sigma, rng),
        NoiseKind::MotionBlur => convolve(image, &motion_blur_kernel(spec.blur_length, spec.blur_angle)?),
        NoiseKind::AwgnReducedContrast => {
            let faded = reduce_contrast(image, spec.contrast_scale)?;
            add_awgn(&faded, spec.awgn_sigma, rng)
        }
    }
}

/// Corrupts every image of `dataset`; labels are copied unchanged.
pub fn synthesize_nmnist(dataset: &LabeledDataset, spec: &NoiseSpec) -> Result<LabeledDataset> {
    spec.validate()?;
    let (h, w) = dataset
        .image_shape()
        .ok_or_else(|| Error::invalid("dataset rows are not images"))?;
    if dataset.len() > u32::MAX as usize {
        return Err(Error::invalid("too many samples for per-sample streams"));
    }
    let rows: Vec<Vec<f64>> = (0..dataset.len())
        .into_par_iter()
        .map(|i| {
            let mut rng = purpose_stream(spec.seed, Purpose::Noise, i as u32);
            let image = ImageGrid::from_raw(h, w, dataset.row(i).to_vec());
            corrupt(&image, spec, &mut rng)
                .map(ImageGrid::into_pixels)
                .map_err(|e| e.at_sample(i))
        })
        .collect::<Result<_>>()?;
    let mut features = Array2::zeros((dataset.len(), h * w));
    for (mut dst, src) in features.axis_iter_mut(Axis(0)).zip(rows) {
        dst.assign(&ndarray::ArrayView1::from(&src[..]));
    }
    Ok(LabeledDataset::from_parts_unchecked(features, dataset.labels().to_vec(), Some((h, w))))
}
