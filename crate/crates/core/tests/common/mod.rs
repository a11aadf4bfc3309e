//! Oracles and fixtures shared by the integration tests. Everything here is
//! written from the definitions with plain loops and does not call back into
//! the code under test beyond reading parameters.
#![allow(dead_code)]

use std::path::PathBuf;

use ndarray::{Array1, Array2};
use pqdbn::quadtree::{QuadTree, Window};
use pqdbn::rbm::RbmParameters;
use pqdbn::ImageGrid;
use rand::Rng;

/// Directory with the four MNIST IDX files, if present.
pub fn mnist_dir() -> Option<PathBuf> {
    let candidates = [
        std::env::var_os("MNIST_DIR").map(PathBuf::from),
        Some(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist")),
    ];
    candidates
        .into_iter()
        .flatten()
        .find(|d| d.join("train-images-idx3-ubyte").is_file() && d.join("t10k-labels-idx1-ubyte").is_file())
}

/// Pixel of `image` read on a zero-padded canvas.
pub fn padded(image: &ImageGrid, r: usize, c: usize) -> f64 {
    if r < image.height() && c < image.width() {
        image.get(r, c)
    } else {
        0.0
    }
}

pub fn window_range(image: &ImageGrid, w: Window) -> f64 {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for r in w.row0..w.row0 + w.size {
        for c in w.col0..w.col0 + w.size {
            let p = padded(image, r, c);
            lo = lo.min(p);
            hi = hi.max(p);
        }
    }
    hi - lo
}

pub fn window_mean(image: &ImageGrid, w: Window) -> f64 {
    let mut s = 0.0;
    for r in w.row0..w.row0 + w.size {
        for c in w.col0..w.col0 + w.size {
            s += padded(image, r, c);
        }
    }
    s / w.area() as f64
}

/// Number of leaves covering each canvas pixel.
pub fn paint(tree: &QuadTree) -> Vec<usize> {
    let n = tree.canvas_size();
    let mut cover = vec![0usize; n * n];
    for w in tree.leaves() {
        for r in w.row0..w.row0 + w.size {
            for c in w.col0..w.col0 + w.size {
                cover[r * n + c] += 1;
            }
        }
    }
    cover
}

/// Random image whose pixels are drawn from a few levels, so that both
/// homogeneous and non-homogeneous windows are common.
pub fn random_image(rng: &mut impl Rng, height: usize, width: usize) -> ImageGrid {
    let levels = [0.0, 0.1, 0.25, 0.5, 0.9, 1.0];
    let smooth = rng.random_bool(0.5);
    let base = levels[rng.random_range(0..levels.len())];
    let pixels = (0..height * width)
        .map(|_| {
            if smooth && rng.random_bool(0.8) {
                base
            } else {
                levels[rng.random_range(0..levels.len())]
            }
        })
        .collect();
    ImageGrid::new(height, width, pixels).unwrap()
}

pub fn bits(index: usize, len: usize) -> Vec<f64> {
    (0..len).map(|k| ((index >> k) & 1) as f64).collect()
}

pub fn oracle_energy(p: &RbmParameters, v: &[f64], h: &[f64]) -> f64 {
    let (w, a, b) = (p.weights(), p.visible_bias(), p.hidden_bias());
    let mut e = 0.0;
    for i in 0..v.len() {
        e -= a[i] * v[i];
    }
    for j in 0..h.len() {
        e -= b[j] * h[j];
    }
    for i in 0..v.len() {
        for j in 0..h.len() {
            e -= h[j] * w[[i, j]] * v[i];
        }
    }
    e
}

/// Joint distribution `P(v, h)` indexed `[v][h]` by bit patterns.
pub fn joint(p: &RbmParameters) -> Vec<Vec<f64>> {
    let (m, n) = (p.n_visible(), p.n_hidden());
    let mut table: Vec<Vec<f64>> = (0..1usize << m)
        .map(|vi| (0..1usize << n).map(|hi| (-oracle_energy(p, &bits(vi, m), &bits(hi, n))).exp()).collect())
        .collect();
    let z: f64 = table.iter().flatten().sum();
    table.iter_mut().flatten().for_each(|x| *x /= z);
    table
}

/// `P(h_j = 1 | v)` by summing the unnormalised joint over hidden states.
pub fn enum_hidden_given_visible(p: &RbmParameters, v: &[f64]) -> Vec<f64> {
    let n = p.n_hidden();
    let weights: Vec<(Vec<f64>, f64)> = (0..1usize << n)
        .map(|hi| {
            let h = bits(hi, n);
            let e = (-oracle_energy(p, v, &h)).exp();
            (h, e)
        })
        .collect();
    let total: f64 = weights.iter().map(|(_, e)| e).sum();
    (0..n)
        .map(|j| weights.iter().filter(|(h, _)| h[j] == 1.0).map(|(_, e)| e).sum::<f64>() / total)
        .collect()
}

/// `P(v_i = 1 | h)` by summing the unnormalised joint over visible states.
pub fn enum_visible_given_hidden(p: &RbmParameters, h: &[f64]) -> Vec<f64> {
    let m = p.n_visible();
    let weights: Vec<(Vec<f64>, f64)> = (0..1usize << m)
        .map(|vi| {
            let v = bits(vi, m);
            let e = (-oracle_energy(p, &v, h)).exp();
            (v, e)
        })
        .collect();
    let total: f64 = weights.iter().map(|(_, e)| e).sum();
    (0..m)
        .map(|i| weights.iter().filter(|(v, _)| v[i] == 1.0).map(|(_, e)| e).sum::<f64>() / total)
        .collect()
}

/// Exact gradient of the mean log-likelihood of binary `data`, flattened as
/// `[W row-major, a, b]`.
pub fn exact_gradient(p: &RbmParameters, data: &[Vec<f64>]) -> Vec<f64> {
    let (m, n) = (p.n_visible(), p.n_hidden());
    let table = joint(p);
    let mut model_w = vec![0.0; m * n];
    let mut model_a = vec![0.0; m];
    let mut model_b = vec![0.0; n];
    for (vi, row) in table.iter().enumerate() {
        let v = bits(vi, m);
        for (hi, &pr) in row.iter().enumerate() {
            let h = bits(hi, n);
            for i in 0..m {
                model_a[i] += pr * v[i];
                for j in 0..n {
                    model_w[i * n + j] += pr * v[i] * h[j];
                }
            }
            for j in 0..n {
                model_b[j] += pr * h[j];
            }
        }
    }
    let mut data_w = vec![0.0; m * n];
    let mut data_a = vec![0.0; m];
    let mut data_b = vec![0.0; n];
    for v in data {
        let ph = enum_hidden_given_visible(p, v);
        for i in 0..m {
            data_a[i] += v[i] / data.len() as f64;
            for j in 0..n {
                data_w[i * n + j] += v[i] * ph[j] / data.len() as f64;
            }
        }
        for j in 0..n {
            data_b[j] += ph[j] / data.len() as f64;
        }
    }
    let mut g = Vec::new();
    g.extend(data_w.iter().zip(&model_w).map(|(d, m)| d - m));
    g.extend(data_a.iter().zip(&model_a).map(|(d, m)| d - m));
    g.extend(data_b.iter().zip(&model_b).map(|(d, m)| d - m));
    g
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

pub fn random_params(rng: &mut impl Rng, m: usize, n: usize, scale: f64) -> RbmParameters {
    let mut u = || rng.random_range(-scale..scale);
    let w = Array2::from_shape_simple_fn((m, n), &mut u);
    let a = Array1::from_shape_simple_fn(m, &mut u);
    let b = Array1::from_shape_simple_fn(n, &mut u);
    RbmParameters::new(w, a, b).unwrap()
}

/// Sum of `log P(v)` over `data`, from the enumerated joint.
pub fn oracle_log_likelihood(p: &RbmParameters, data: &[Vec<f64>]) -> f64 {
    let table = joint(p);
    data.iter()
        .map(|v| {
            let idx = v.iter().enumerate().map(|(k, &x)| (x as usize) << k).sum::<usize>();
            table[idx].iter().sum::<f64>().ln()
        })
        .sum()
}

/// Checks partition, leaf soundness and internal violation for a tree learned
/// from `images` under the range criterion.
pub fn check_tree(tree: &QuadTree, images: &[ImageGrid], tau: f64) -> Result<(), String> {
    let cover = paint(tree);
    if let Some(pos) = cover.iter().position(|&c| c != 1) {
        return Err(format!("pixel {pos} covered {} times", cover[pos]));
    }
    for w in tree.leaves() {
        if w.size > 1 {
            if let Some(k) = images.iter().position(|im| window_range(im, *w) > tau) {
                return Err(format!("leaf {w:?} not homogeneous for sample {k}"));
            }
        }
    }
    for w in tree.internal_windows() {
        if w.size == 1 {
            return Err(format!("size-1 window {w:?} was split"));
        }
        if images.iter().all(|im| window_range(im, w) <= tau) {
            return Err(format!("internal {w:?} is homogeneous for every sample"));
        }
    }
    if tree.leaf_count() != tree.leaves().len() || tree.leaf_count() > tree.canvas_size().pow(2) {
        return Err("leaf count inconsistent".into());
    }
    Ok(())
}

/// Every leaf of `coarse` is exactly tiled by leaves of `fine`.
pub fn check_refinement(fine: &QuadTree, coarse: &QuadTree) -> Result<(), String> {
    for big in coarse.leaves() {
        let covered: usize = fine
            .leaves()
            .iter()
            .filter(|small| big.contains(small))
            .map(|small| small.area())
            .sum();
        if covered != big.area() {
            return Err(format!("coarse leaf {big:?} is not a union of fine leaves"));
        }
    }
    if fine.leaf_count() < coarse.leaf_count() {
        return Err("leaf count not monotone".into());
    }
    Ok(())
}

/// Largest deviation between the library conditionals and normalisation and
/// the enumeration oracle, for one random RBM.
pub fn conditional_deviation(p: &RbmParameters) -> f64 {
    use pqdbn::rbm::{exact_log_probabilities, hidden_probs, visible_probs};
    let (m, n) = (p.n_visible(), p.n_hidden());
    let mut worst: f64 = 0.0;
    for vi in 0..1usize << m {
        let v = bits(vi, m);
        let lib = hidden_probs(p, &v).unwrap();
        for (x, y) in lib.iter().zip(enum_hidden_given_visible(p, &v)) {
            worst = worst.max((x - y).abs());
        }
    }
    for hi in 0..1usize << n {
        let h = bits(hi, n);
        let lib = visible_probs(p, &h).unwrap();
        for (x, y) in lib.iter().zip(enum_visible_given_hidden(p, &h)) {
            worst = worst.max((x - y).abs());
        }
    }
    let all: Vec<f64> = (0..1usize << m).flat_map(|vi| bits(vi, m)).collect();
    let all = Array2::from_shape_vec((1 << m, m), all).unwrap();
    let total: f64 = exact_log_probabilities(p, all.view()).unwrap().iter().map(|l| l.exp()).sum();
    let oracle_total: f64 = joint(p).iter().flatten().sum();
    worst.max((total - 1.0).abs()).max((oracle_total - 1.0).abs())
}

/// Patterns used by the CD fixtures.
pub fn tiny_patterns(m: usize) -> Vec<Vec<f64>> {
    let all = [
        [1.0, 1.0, 1.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, 1.0, 1.0, 1.0],
        [1.0, 0.0, 1.0, 0.0, 1.0, 0.0],
        [1.0, 1.0, 0.0, 0.0, 1.0, 1.0],
    ];
    all.iter().map(|p| p[..m].to_vec()).collect()
}

pub fn to_matrix(rows: &[Vec<f64>]) -> Array2<f64> {
    let cols = rows[0].len();
    Array2::from_shape_vec((rows.len(), cols), rows.concat()).unwrap()
}

/// Cosine between the mean CD-1 gradient over `draws` estimates and the exact
/// log-likelihood gradient, for a 3x2 RBM.
pub fn cd_cosine(seed: u64, draws: usize) -> f64 {
    use pqdbn::rbm::cd_gradient;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let params = random_params(&mut rng, 3, 2, 1.0);
    let data = tiny_patterns(3);
    let batch = to_matrix(&data);
    let mut mean = vec![0.0; 3 * 2 + 3 + 2];
    for _ in 0..draws {
        let g = cd_gradient(&params, batch.view(), 1, &mut rng).unwrap();
        let flat = g.weights.iter().chain(&g.visible_bias).chain(&g.hidden_bias);
        for (acc, x) in mean.iter_mut().zip(flat) {
            *acc += x / draws as f64;
        }
    }
    cosine(&mean, &exact_gradient(&params, &data))
}

/// Oracle log-likelihood of the training patterns before and after
/// `epochs` of CD-1 on a 6x4 RBM.
pub fn likelihood_before_after(epochs: usize) -> (f64, f64) {
    use pqdbn::rbm::{train_rbm, TrainConfig};
    let data = tiny_patterns(6);
    let config = TrainConfig {
        epochs: 0,
        batch_size: 4,
        seed: 17,
        ..TrainConfig::default()
    };
    let x = to_matrix(&data);
    let (initial, _) = train_rbm(x.view(), 4, &config, 0).unwrap();
    let (trained, _) = train_rbm(x.view(), 4, &TrainConfig { epochs, ..config }, 0).unwrap();
    (oracle_log_likelihood(&initial, &data), oracle_log_likelihood(&trained, &data))
}

/// Synthetic 28x28 images: class `k` is a bright bar at a class-specific
/// place, plus a little speckle.
pub fn synthetic_digits(count: usize, seed: u64) -> (Vec<ImageGrid>, Vec<u8>) {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    for i in 0..count {
        let class = (i % 10) as u8;
        let mut image = ImageGrid::zeros(28, 28);
        let offset = 2 + 2 * class as usize;
        for t in 4..24 {
            let (r, c) = if class.is_multiple_of(2) { (offset, t) } else { (t, offset) };
            image.set(r, c, 1.0).unwrap();
            image.set(r + 1, c, 0.6).unwrap();
        }
        for _ in 0..5 {
            let (r, c) = (rng.random_range(0..28), rng.random_range(0..28));
            image.set(r, c, rng.random_range(0..=255u8) as f64 / 255.0).unwrap();
        }
        images.push(image);
        labels.push(class);
    }
    (images, labels)
}

/// Writes the four MNIST-named IDX files into `dir`.
pub fn write_fixture_mnist(dir: &std::path::Path, train: usize, test: usize) {
    use pqdbn::ingest::{write_idx_images, write_idx_labels};
    let (images, labels) = synthetic_digits(train, 1);
    write_idx_images(&images, dir.join("train-images-idx3-ubyte")).unwrap();
    write_idx_labels(&labels, dir.join("train-labels-idx1-ubyte")).unwrap();
    let (images, labels) = synthetic_digits(test, 2);
    write_idx_images(&images, dir.join("t10k-images-idx3-ubyte")).unwrap();
    write_idx_labels(&labels, dir.join("t10k-labels-idx1-ubyte")).unwrap();
}

/// 6 -> [4, 3] -> 10 with weights large enough that every gradient is
/// well above the finite-difference noise floor.
pub fn gradient_fixture() -> (pqdbn::dbn::FeedForwardNet, Array2<f64>, Vec<u8>) {
    use pqdbn::dbn::{transfer_to_feedforward, DbnModel};
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    let l1 = random_params(&mut rng, 6, 4, 1.0);
    let l2 = random_params(&mut rng, 4, 3, 1.0);
    let ow = Array2::from_shape_simple_fn((3, 10), || rng.random_range(-1.0..1.0));
    let ob = Array1::from_shape_simple_fn(10, || rng.random_range(-1.0..1.0));
    let model = DbnModel::new(vec![l1, l2], ow, ob).unwrap();
    let x = Array2::from_shape_simple_fn((5, 6), || rng.random_range(0.0..1.0));
    (transfer_to_feedforward(model), x, vec![0, 3, 7, 3, 9])
}

/// Largest relative error between the analytic gradients of the fixture and
/// central differences with the given step, with the offending entry.
pub fn backprop_relative_error(step: f64) -> (f64, String) {
    use pqdbn::dbn::{transfer_to_feedforward, DbnModel};
    let (net, x, labels) = gradient_fixture();
    let (_, grads) = net.gradients(x.view(), &labels).unwrap();
    let loss_with = |edit: &dyn Fn(&mut DbnModel)| {
        let mut m = net.model().clone();
        edit(&mut m);
        transfer_to_feedforward(m).loss(x.view(), &labels).unwrap()
    };
    let mut worst = (0.0, String::new());
    let mut check = |name: String, analytic: f64, plus: f64, minus: f64| {
        let numeric = (plus - minus) / (2.0 * step);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
        if rel >= worst.0 {
            worst = (rel, name);
        }
    };
    for k in 0..2 {
        let (gw, gb) = &grads.layers[k];
        for ((i, j), &g) in gw.indexed_iter() {
            let plus = loss_with(&|m| m.layer_mut(k).0[[i, j]] += step);
            let minus = loss_with(&|m| m.layer_mut(k).0[[i, j]] -= step);
            check(format!("layer {k} w[{i},{j}]"), g, plus, minus);
        }
        for (j, &g) in gb.indexed_iter() {
            let plus = loss_with(&|m| m.layer_mut(k).2[j] += step);
            let minus = loss_with(&|m| m.layer_mut(k).2[j] -= step);
            check(format!("layer {k} b[{j}]"), g, plus, minus);
        }
    }
    for ((i, j), &g) in grads.output_weights.indexed_iter() {
        let plus = loss_with(&|m| m.output_mut().0[[i, j]] += step);
        let minus = loss_with(&|m| m.output_mut().0[[i, j]] -= step);
        check(format!("output w[{i},{j}]"), g, plus, minus);
    }
    for (j, &g) in grads.output_bias.indexed_iter() {
        let plus = loss_with(&|m| m.output_mut().1[j] += step);
        let minus = loss_with(&|m| m.output_mut().1[j] -= step);
        check(format!("output b[{j}]"), g, plus, minus);
    }
    worst
}
