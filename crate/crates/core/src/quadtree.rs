//! Dataset-wide probabilistic quadtrees.
//!
//! One tree is learned for a whole image set. Starting from the full canvas,
//! a window is split into its four quadrants when at least one training image
//! fails the homogeneity test on it; it stays a leaf when every image passes
//! (or when it is a single pixel). Images are then linearised by a pre-order
//! walk that emits the mean intensity of each leaf window.
//!
//! Images smaller than the canvas are zero-padded at the bottom and right
//! (see [`pad_to_canvas`]); learning and encoding apply the same padding
//! implicitly without materialising padded copies.
//!
//! # File format
//!
//! `PQT1` magic, `tau` as little-endian f64, `canvas_size` as little-endian
//! u32, then one byte per node in pre-order (`1` split, `0` leaf).

use std::path::Path;

use ndarray::Array2;
use rayon::prelude::*;

use crate::codec::{put_u32_le, read_file, write_file, ByteReader};
use crate::error::{Error, Result};
use crate::image::ImageGrid;
use crate::ingest::LabeledDataset;

pub const TREE_MAGIC: &[u8; 4] = b"PQT1";
pub const DEFAULT_TAU: f64 = 0.27;
pub const DEFAULT_CANVAS: usize = 32;

/// Homogeneity threshold `tau`, restricted to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct HomogeneityThreshold(f64);

impl HomogeneityThreshold {
    pub fn new(tau: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&tau) {
            return Err(Error::invalid(format!("homogeneity threshold {tau} outside [0, 1]")));
        }
        Ok(Self(tau))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl Default for HomogeneityThreshold {
    fn default() -> Self {
        Self(DEFAULT_TAU)
    }
}

/// Which block statistic is compared against `tau`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Criterion {
    /// `max - min <= tau`.
    #[default]
    Range,
    /// Population standard deviation of the block `<= tau`.
    StdDev,
}

impl std::str::FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "range" => Ok(Criterion::Range),
            "stddev" => Ok(Criterion::StdDev),
            other => Err(Error::invalid(format!("unknown homogeneity criterion {other:?}"))),
        }
    }
}

/// Square block of pixels with a power-of-two side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Window {
    pub row0: usize,
    pub col0: usize,
    pub size: usize,
}

impl Window {
    pub fn new(row0: usize, col0: usize, size: usize) -> Result<Self> {
        if !size.is_power_of_two() {
            return Err(Error::invalid(format!("window size {size} is not a power of two")));
        }
        Ok(Self { row0, col0, size })
    }

    /// NW, NE, SW, SE.
    pub fn quadrants(&self) -> [Window; 4] {
        let h = self.size / 2;
        let (r, c) = (self.row0, self.col0);
        [
            Window { row0: r, col0: c, size: h },
            Window { row0: r, col0: c + h, size: h },
            Window { row0: r + h, col0: c, size: h },
            Window { row0: r + h, col0: c + h, size: h },
        ]
    }

    pub fn area(&self) -> usize {
        self.size * self.size
    }

    pub fn contains(&self, other: &Window) -> bool {
        other.row0 >= self.row0
            && other.col0 >= self.col0
            && other.row0 + other.size <= self.row0 + self.size
            && other.col0 + other.size <= self.col0 + self.size
    }
}

/// Pixel buffer read as if zero-padded to any larger canvas.
#[derive(Clone, Copy)]
struct PaddedPixels<'a> {
    data: &'a [f64],
    height: usize,
    width: usize,
}

impl<'a> PaddedPixels<'a> {
    fn of(image: &'a ImageGrid) -> Self {
        Self {
            data: image.pixels(),
            height: image.height(),
            width: image.width(),
        }
    }

    /// Visits the in-image part of `w`; returns how many window pixels fall
    /// in the padding.
    #[inline]
    fn for_each_in(&self, w: Window, mut f: impl FnMut(f64)) -> usize {
        let r1 = (w.row0 + w.size).min(self.height);
        let c1 = (w.col0 + w.size).min(self.width);
        let mut inside = 0;
        if w.row0 < r1 && w.col0 < c1 {
            for r in w.row0..r1 {
                let row = &self.data[r * self.width + w.col0..r * self.width + c1];
                row.iter().for_each(|&p| f(p));
            }
            inside = (r1 - w.row0) * (c1 - w.col0);
        }
        w.area() - inside
    }

    fn homogeneous(&self, w: Window, tau: f64, criterion: Criterion) -> bool {
        match criterion {
            Criterion::Range => {
                let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
                let padded = self.for_each_in(w, |p| {
                    lo = lo.min(p);
                    hi = hi.max(p);
                });
                if padded > 0 {
                    lo = lo.min(0.0);
                    hi = hi.max(0.0);
                }
                hi - lo <= tau
            }
            Criterion::StdDev => {
                let (mut sum, mut sq) = (0.0, 0.0);
                self.for_each_in(w, |p| {
                    sum += p;
                    sq += p * p;
                });
                let n = w.area() as f64;
                let mean = sum / n;
                let var = (sq / n - mean * mean).max(0.0);
                var.sqrt() <= tau
            }
        }
    }

    fn mean(&self, w: Window) -> f64 {
        let mut sum = 0.0;
        self.for_each_in(w, |p| sum += p);
        sum / w.area() as f64
    }
}

/// Zero-pads `image` to a `canvas_size x canvas_size` square, keeping the
/// original at the top-left.
pub fn pad_to_canvas(image: &ImageGrid, canvas_size: usize) -> Result<ImageGrid> {
    if !canvas_size.is_power_of_two() {
        return Err(Error::invalid(format!("canvas size {canvas_size} is not a power of two")));
    }
    let needed = image.height().max(image.width());
    if canvas_size < needed {
        return Err(Error::invalid(format!(
            "canvas size {canvas_size} too small, need at least {}",
            needed.next_power_of_two()
        )));
    }
    let mut pixels = vec![0.0; canvas_size * canvas_size];
    for r in 0..image.height() {
        let src = &image.pixels()[r * image.width()..(r + 1) * image.width()];
        pixels[r * canvas_size..r * canvas_size + image.width()].copy_from_slice(src);
    }
    Ok(ImageGrid::from_raw(canvas_size, canvas_size, pixels))
}

/// Range test on one block: `max - min <= tau`.
pub fn is_homogeneous(image: &ImageGrid, window: Window, tau: HomogeneityThreshold) -> Result<bool> {
    is_homogeneous_with(image, window, tau, Criterion::Range)
}

pub fn is_homogeneous_with(
    image: &ImageGrid,
    window: Window,
    tau: HomogeneityThreshold,
    criterion: Criterion,
) -> Result<bool> {
    if window.row0 + window.size > image.height() || window.col0 + window.size > image.width() {
        return Err(Error::invalid(format!(
            "window {window:?} outside {}x{} image",
            image.height(),
            image.width()
        )));
    }
    Ok(PaddedPixels::of(image).homogeneous(window, tau.value(), criterion))
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Leaf(Window),
    Split {
        window: Window,
        children: Box<[Node; 4]>,
    },
}

impl Node {
    pub fn window(&self) -> Window {
        match self {
            Node::Leaf(w) | Node::Split { window: w, .. } => *w,
        }
    }

    pub fn children(&self) -> Option<&[Node; 4]> {
        match self {
            Node::Leaf(_) => None,
            Node::Split { children, .. } => Some(children),
        }
    }

    pub fn is_split(&self) -> bool {
        matches!(self, Node::Split { .. })
    }

    fn visit_preorder<'a>(&'a self, f: &mut impl FnMut(&'a Node)) {
        f(self);
        if let Some(children) = self.children() {
            children.iter().for_each(|c| c.visit_preorder(f));
        }
    }
}

/// A learned partition shared by every image of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadTree {
    canvas_size: usize,
    tau: HomogeneityThreshold,
    root: Node,
    leaves: Vec<Window>,
}

/// Leaf-mean feature vector produced by [`encode`], in pre-order leaf order.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseVector {
    values: Vec<f64>,
}

impl SparseVector {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }
}

/// Learning options. `parallel` only affects speed: the split decision is a
/// boolean OR over samples.
#[derive(Debug, Clone, Copy)]
pub struct TreeLearner {
    pub tau: HomogeneityThreshold,
    pub canvas_size: usize,
    pub criterion: Criterion,
    pub parallel: bool,
}

impl Default for TreeLearner {
    fn default() -> Self {
        Self {
            tau: HomogeneityThreshold::default(),
            canvas_size: DEFAULT_CANVAS,
            criterion: Criterion::Range,
            parallel: true,
        }
    }
}

impl TreeLearner {
    pub fn new(tau: HomogeneityThreshold, canvas_size: usize) -> Self {
        Self {
            tau,
            canvas_size,
            ..Self::default()
        }
    }

    pub fn criterion(mut self, criterion: Criterion) -> Self {
        self.criterion = criterion;
        self
    }

    pub fn learn_images(&self, images: &[ImageGrid]) -> Result<QuadTree> {
        let samples: Vec<PaddedPixels<'_>> = images.iter().map(PaddedPixels::of).collect();
        self.learn_samples(&samples)
    }

    pub fn learn_dataset(&self, dataset: &LabeledDataset) -> Result<QuadTree> {
        let (height, width) = dataset
            .image_shape()
            .ok_or_else(|| Error::invalid("dataset rows are not images"))?;
        let samples: Vec<PaddedPixels<'_>> = (0..dataset.len())
            .map(|i| PaddedPixels {
                data: dataset.row(i),
                height,
                width,
            })
            .collect();
        self.learn_samples(&samples)
    }

    fn learn_samples(&self, samples: &[PaddedPixels<'_>]) -> Result<QuadTree> {
        let first = samples.first().ok_or(Error::Empty("training image set"))?;
        if let Some((i, s)) = samples
            .iter()
            .enumerate()
            .find(|(_, s)| (s.height, s.width) != (first.height, first.width))
        {
            return Err(Error::invalid(format!(
                "image {i} is {}x{}, expected {}x{}",
                s.height, s.width, first.height, first.width
            )));
        }
        check_canvas(self.canvas_size, first.height, first.width)?;
        let root = Window {
            row0: 0,
            col0: 0,
            size: self.canvas_size,
        };
        let root = self.grow(root, samples);
        Ok(QuadTree::from_root(self.canvas_size, self.tau, root))
    }

    fn grow(&self, window: Window, samples: &[PaddedPixels<'_>]) -> Node {
        if window.size == 1 {
            return Node::Leaf(window);
        }
        let (tau, criterion) = (self.tau.value(), self.criterion);
        let violated = if self.parallel {
            samples.par_iter().any(|s| !s.homogeneous(window, tau, criterion))
        } else {
            samples.iter().any(|s| !s.homogeneous(window, tau, criterion))
        };
        if !violated {
            return Node::Leaf(window);
        }
        let children = window.quadrants().map(|q| self.grow(q, samples));
        Node::Split {
            window,
            children: Box::new(children),
        }
    }
}

fn check_canvas(canvas_size: usize, height: usize, width: usize) -> Result<()> {
    if !canvas_size.is_power_of_two() {
        return Err(Error::invalid(format!("canvas size {canvas_size} is not a power of two")));
    }
    if height.max(width) > canvas_size {
        return Err(Error::invalid(format!(
            "{height}x{width} image does not fit a {canvas_size} canvas, need at least {}",
            height.max(width).next_power_of_two()
        )));
    }
    Ok(())
}

/// Learns a tree with the range criterion.
pub fn learn_tree(images: &[ImageGrid], tau: HomogeneityThreshold, canvas_size: usize) -> Result<QuadTree> {
    TreeLearner::new(tau, canvas_size).learn_images(images)
}

impl QuadTree {
    fn from_root(canvas_size: usize, tau: HomogeneityThreshold, root: Node) -> Self {
        let mut leaves = Vec::new();
        root.visit_preorder(&mut |n| {
            if let Node::Leaf(w) = n {
                leaves.push(*w);
            }
        });
        Self {
            canvas_size,
            tau,
            root,
            leaves,
        }
    }

    pub fn canvas_size(&self) -> usize {
        self.canvas_size
    }

    pub fn tau(&self) -> HomogeneityThreshold {
        self.tau
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    pub fn leaf_count(&self) -> usize {
        self.leaves.len()
    }

    /// Leaf windows in pre-order (NW, NE, SW, SE).
    pub fn leaves(&self) -> &[Window] {
        &self.leaves
    }

    /// Windows of split nodes in pre-order.
    pub fn internal_windows(&self) -> Vec<Window> {
        let mut out = Vec::new();
        self.root.visit_preorder(&mut |n| {
            if n.is_split() {
                out.push(n.window());
            }
        });
        out
    }

    fn encode_pixels(&self, pixels: PaddedPixels<'_>, out: &mut [f64]) {
        for (slot, leaf) in out.iter_mut().zip(&self.leaves) {
            *slot = pixels.mean(*leaf);
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 2 * self.leaves.len());
        out.extend_from_slice(TREE_MAGIC);
        out.extend_from_slice(&self.tau.value().to_le_bytes());
        put_u32_le(&mut out, self.canvas_size as u32);
        self.root.visit_preorder(&mut |n| out.push(n.is_split() as u8));
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.expect_magic(TREE_MAGIC)?;
        let tau = HomogeneityThreshold::new(r.f64_le()?)?;
        let canvas_size = r.u32_le()? as usize;
        if canvas_size == 0 || !canvas_size.is_power_of_two() {
            return Err(Error::Format(format!("canvas size {canvas_size} is not a power of two")));
        }
        let root = read_node(
            &mut r,
            Window {
                row0: 0,
                col0: 0,
                size: canvas_size,
            },
        )?;
        r.finish()?;
        Ok(Self::from_root(canvas_size, tau, root))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), &self.to_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&read_file(path.as_ref())?)
    }
}

fn read_node(r: &mut ByteReader<'_>, window: Window) -> Result<Node> {
    match r.u8()? {
        0 => Ok(Node::Leaf(window)),
        1 if window.size > 1 => {
            let [a, b, c, d] = window.quadrants();
            let children = [read_node(r, a)?, read_node(r, b)?, read_node(r, c)?, read_node(r, d)?];
            Ok(Node::Split {
                window,
                children: Box::new(children),
            })
        }
        1 => Err(Error::Format("single-pixel node marked as split".into())),
        other => Err(Error::Format(format!("invalid node byte {other}"))),
    }
}

/// Pre-order leaf means of `image` (zero-padded to the tree canvas).
pub fn encode(tree: &QuadTree, image: &ImageGrid) -> Result<SparseVector> {
    check_canvas(tree.canvas_size, image.height(), image.width())?;
    let mut values = vec![0.0; tree.leaf_count()];
    tree.encode_pixels(PaddedPixels::of(image), &mut values);
    Ok(SparseVector { values })
}

/// Encodes every image row of `dataset`; labels and order are preserved.
pub fn encode_dataset(tree: &QuadTree, dataset: &LabeledDataset) -> Result<LabeledDataset> {
    let (height, width) = dataset
        .image_shape()
        .ok_or_else(|| Error::invalid("dataset rows are not images"))?;
    let mut features = Array2::zeros((dataset.len(), tree.leaf_count()));
    for (i, mut row) in features.rows_mut().into_iter().enumerate() {
        check_canvas(tree.canvas_size, height, width).map_err(|e| e.at_sample(i))?;
        let pixels = PaddedPixels {
            data: dataset.row(i),
            height,
            width,
        };
        tree.encode_pixels(pixels, row.as_slice_mut().expect("row-major"));
    }
    Ok(LabeledDataset::from_parts_unchecked(features, dataset.labels().to_vec(), None))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tau(v: f64) -> HomogeneityThreshold {
        HomogeneityThreshold::new(v).unwrap()
    }

    fn quadrant_image() -> ImageGrid {
        let mut img = ImageGrid::zeros(4, 4);
        for r in 0..2 {
            for c in 0..2 {
                img.set(r, c, 1.0).unwrap();
            }
        }
        img
    }

    #[test]
    fn threshold_range_is_enforced() {
        assert!(HomogeneityThreshold::new(-0.01).is_err());
        assert!(HomogeneityThreshold::new(1.01).is_err());
        assert!(HomogeneityThreshold::new(f64::NAN).is_err());
        assert_eq!(HomogeneityThreshold::default().value(), 0.27);
    }

    #[test]
    fn padding_places_image_top_left() {
        let img = ImageGrid::filled(28, 28, 0.5).unwrap();
        let padded = pad_to_canvas(&img, 32).unwrap();
        for r in 0..32 {
            for c in 0..32 {
                let expected = if r < 28 && c < 28 { 0.5 } else { 0.0 };
                assert_eq!(padded.get(r, c), expected);
            }
        }
        assert_eq!(padded.crop(28, 28).unwrap(), img);
        let square = ImageGrid::filled(32, 32, 0.25).unwrap();
        assert_eq!(pad_to_canvas(&square, 32).unwrap(), square);
    }

    #[test]
    fn padding_rejects_small_canvas() {
        let img = ImageGrid::zeros(28, 28);
        let err = pad_to_canvas(&img, 16).unwrap_err();
        assert!(err.to_string().contains("at least 32"), "{err}");
        assert!(pad_to_canvas(&img, 48).is_err());
    }

    #[test]
    fn homogeneity_boundary_is_inclusive() {
        let w = Window::new(0, 0, 2).unwrap();
        let zeros = ImageGrid::zeros(2, 2);
        assert!(is_homogeneous(&zeros, w, tau(0.0)).unwrap());
        let edge = ImageGrid::new(2, 2, vec![0.0, 1.0, 0.0, 0.0]).unwrap();
        assert!(!is_homogeneous(&edge, w, tau(0.27)).unwrap());
        let at_tau = ImageGrid::new(2, 2, vec![0.27, 0.0, 0.1, 0.2]).unwrap();
        assert!(is_homogeneous(&at_tau, w, tau(0.27)).unwrap());
        assert!(is_homogeneous(&at_tau, Window::new(1, 1, 2).unwrap(), tau(0.27)).is_err());
    }

    #[test]
    fn stddev_criterion() {
        let w = Window::new(0, 0, 2).unwrap();
        // values 0,0,1,1: mean 0.5, stddev 0.5
        let img = ImageGrid::new(2, 2, vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        assert!(is_homogeneous_with(&img, w, tau(0.5), Criterion::StdDev).unwrap());
        assert!(!is_homogeneous_with(&img, w, tau(0.49), Criterion::StdDev).unwrap());
    }

    #[test]
    fn constant_images_give_single_leaf() {
        let imgs = vec![ImageGrid::filled(28, 28, 0.6).unwrap(); 3];
        // the padding region is 0, so a 0.6 image is not homogeneous on the
        // padded canvas; use a canvas-sized image instead
        let imgs32 = vec![ImageGrid::filled(32, 32, 0.6).unwrap(); 3];
        assert_eq!(learn_tree(&imgs32, tau(0.27), 32).unwrap().leaf_count(), 1);
        assert_eq!(learn_tree(&imgs, tau(1.0), 32).unwrap().leaf_count(), 1);
    }

    #[test]
    fn quadrant_example_gives_four_leaves() {
        let img = quadrant_image();
        let tree = learn_tree(std::slice::from_ref(&img), tau(0.27), 4).unwrap();
        assert_eq!(tree.leaf_count(), 4);
        assert_eq!(tree.internal_windows(), vec![Window::new(0, 0, 4).unwrap()]);
        let v = encode(&tree, &img).unwrap();
        assert_eq!(v.values(), &[1.0, 0.0, 0.0, 0.0]);
        let zeros = encode(&tree, &ImageGrid::zeros(4, 4)).unwrap();
        assert_eq!(zeros.values(), &[0.0; 4]);
    }

    #[test]
    fn single_leaf_encodes_mean() {
        let imgs = vec![ImageGrid::filled(8, 8, 0.3).unwrap()];
        let tree = learn_tree(&imgs, tau(0.27), 8).unwrap();
        let v = encode(&tree, &imgs[0]).unwrap();
        assert_eq!(v.len(), 1);
        assert!((v.values()[0] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn learning_errors() {
        assert!(matches!(learn_tree(&[], tau(0.27), 32), Err(Error::Empty(_))));
        let mixed = vec![ImageGrid::zeros(4, 4), ImageGrid::zeros(3, 4)];
        assert!(learn_tree(&mixed, tau(0.27), 4).is_err());
        assert!(learn_tree(&[ImageGrid::zeros(4, 4)], tau(0.27), 6).is_err());
        assert!(learn_tree(&[ImageGrid::zeros(8, 8)], tau(0.27), 4).is_err());
    }

    #[test]
    fn encode_rejects_oversized_image() {
        let tree = learn_tree(&[ImageGrid::zeros(4, 4)], tau(0.27), 4).unwrap();
        assert!(encode(&tree, &ImageGrid::zeros(5, 5)).is_err());
        // smaller images are padded
        assert_eq!(encode(&tree, &ImageGrid::filled(2, 2, 1.0).unwrap()).unwrap().values(), &[0.25]);
    }

    #[test]
    fn tree_bytes_round_trip() {
        let img = quadrant_image();
        let tree = learn_tree(std::slice::from_ref(&img), tau(0.27), 4).unwrap();
        let bytes = tree.to_bytes();
        assert_eq!(&bytes[..4], b"PQT1");
        assert_eq!(&bytes[4..12], &0.27f64.to_le_bytes());
        assert_eq!(&bytes[12..16], &4u32.to_le_bytes());
        assert_eq!(&bytes[16..], &[1, 0, 0, 0, 0]);
        assert_eq!(QuadTree::from_bytes(&bytes).unwrap(), tree);
    }

    #[test]
    fn malformed_tree_bytes() {
        let mut bytes = b"PQT1".to_vec();
        bytes.extend_from_slice(&0.27f64.to_le_bytes());
        bytes.extend_from_slice(&1u32.to_le_bytes());
        let mut split_pixel = bytes.clone();
        split_pixel.push(1);
        assert!(QuadTree::from_bytes(&split_pixel).is_err());
        let mut truncated = bytes.clone();
        truncated[12..16].copy_from_slice(&2u32.to_le_bytes());
        truncated.extend_from_slice(&[1, 0, 0]);
        assert!(matches!(QuadTree::from_bytes(&truncated), Err(Error::Truncated { .. })));
        let mut trailing = bytes.clone();
        trailing.extend_from_slice(&[0, 0]);
        assert!(QuadTree::from_bytes(&trailing).is_err());
        assert!(QuadTree::from_bytes(b"PQT2").is_err());
    }

    #[test]
    fn dataset_encoding_preserves_labels() {
        let imgs = vec![ImageGrid::filled(4, 4, 0.2).unwrap(), quadrant_image()];
        let ds = LabeledDataset::from_images(&imgs, vec![7, 2]).unwrap();
        let tree = TreeLearner::new(tau(0.27), 4).learn_dataset(&ds).unwrap();
        let enc = encode_dataset(&tree, &ds).unwrap();
        assert_eq!(enc.labels(), &[7, 2]);
        assert_eq!(enc.dim(), tree.leaf_count());
        assert_eq!(enc.row(1), encode(&tree, &imgs[1]).unwrap().values());
    }
}
