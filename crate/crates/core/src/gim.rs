//! Foreground/background feature-set model and its similarity channels.
//!
//! Every model-grid cell of the first frame contributes its feature vector to
//! either the foreground or the background set. In later frames each cell is
//! compared with both sets by cosine similarity; the mean of the `K` best
//! matches gives the F and B channels, and a two-way softmax gives P.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::boxfit::Mask;
use crate::error::{shape_err, Error, Result};
use crate::nn::gemm;
use crate::nn::Tensor;

pub const DEFAULT_K: usize = 3;
pub const FOREGROUND_CAP: usize = 1000;
pub const BACKGROUND_CAP: usize = 2000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GimConfig {
    pub k: usize,
    pub foreground_cap: usize,
    pub background_cap: usize,
    /// Seed for subsampling sets that exceed their cap.
    pub seed: u64,
}

impl Default for GimConfig {
    fn default() -> Self {
        GimConfig {
            k: DEFAULT_K,
            foreground_cap: FOREGROUND_CAP,
            background_cap: BACKGROUND_CAP,
            seed: 0,
        }
    }
}

/// One stored feature set: unit vectors, the norms of the raw vectors and the
/// grid cells they came from.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSet {
    dim: usize,
    /// Row-major `[len, dim]`, each row L2-normalized (zero rows stay zero).
    unit: Vec<f64>,
    norms: Vec<f64>,
    cells: Vec<usize>,
}

impl FeatureSet {
    fn from_cells(features: &Tensor, cells: Vec<usize>) -> Self {
        let dim = features.shape()[0];
        let plane = features.shape()[1] * features.shape()[2];
        let data = features.data();
        let mut unit = Vec::with_capacity(cells.len() * dim);
        let mut norms = Vec::with_capacity(cells.len());
        for &cell in &cells {
            let v: Vec<f64> = (0..dim).map(|c| data[c * plane + cell]).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            norms.push(n);
            unit.extend(v.iter().map(|x| if n > 0.0 { x / n } else { 0.0 }));
        }
        FeatureSet { dim, unit, norms, cells }
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Normalized vector `j`.
    pub fn vector(&self, j: usize) -> &[f64] {
        &self.unit[j * self.dim..(j + 1) * self.dim]
    }

    /// Grid cells (row-major indices) the vectors were taken from.
    pub fn cells(&self) -> &[usize] {
        &self.cells
    }
}

/// Stored foreground and background sets with the matching parameter `K`.
#[derive(Clone, Debug, PartialEq)]
pub struct GimModel {
    pub foreground: FeatureSet,
    pub background: FeatureSet,
    pub k: usize,
    grid: (usize, usize),
}

impl GimModel {
    pub fn dim(&self) -> usize {
        self.foreground.dim
    }

    pub fn grid(&self) -> (usize, usize) {
        self.grid
    }
}

/// Per-cell majority vote of a crop-resolution mask onto the model grid; a
/// cell is foreground when strictly more than half its pixels are.
pub fn mask_to_grid(mask: &Mask, stride: usize) -> Result<Mask> {
    let (w, h) = (mask.width(), mask.height());
    if stride == 0 || w % stride != 0 || h % stride != 0 {
        return Err(shape_err(format!("{w}x{h} mask does not tile into stride {stride}")));
    }
    let (gw, gh) = (w / stride, h / stride);
    let mut counts = vec![0usize; gw * gh];
    for (x, y) in mask.foreground() {
        counts[(y / stride) * gw + x / stride] += 1;
    }
    let half = stride * stride;
    Ok(Mask::from_vec(gw, gh, counts.iter().map(|&c| 2 * c > half).collect()))
}

/// Split the grid cells by `grid_mask` into the two feature sets,
/// subsampling uniformly without replacement when a set exceeds its cap.
pub fn build_gim_model(features: &Tensor, grid_mask: &Mask, config: &GimConfig) -> Result<GimModel> {
    let (_, h, w) = features.dims3()?;
    if (grid_mask.width(), grid_mask.height()) != (w, h) {
        return Err(shape_err(format!(
            "mask {}x{} does not match feature grid {w}x{h}",
            grid_mask.width(),
            grid_mask.height()
        )));
    }
    if config.k == 0 || config.foreground_cap == 0 || config.background_cap == 0 {
        return Err(Error::InvalidParameter("K and set caps must be positive".into()));
    }
    let (mut fg, mut bg) = (Vec::new(), Vec::new());
    for (i, &v) in grid_mask.data().iter().enumerate() {
        if v {
            fg.push(i);
        } else {
            bg.push(i);
        }
    }
    if fg.is_empty() {
        return Err(Error::Degenerate("no foreground cells on the model grid".into()));
    }
    if bg.is_empty() {
        return Err(Error::Degenerate("no background cells on the model grid".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let fg = subsample(fg, config.foreground_cap, &mut rng);
    let bg = subsample(bg, config.background_cap, &mut rng);
    Ok(GimModel {
        foreground: FeatureSet::from_cells(features, fg),
        background: FeatureSet::from_cells(features, bg),
        k: config.k,
        grid: (w, h),
    })
}

fn subsample(cells: Vec<usize>, cap: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if cells.len() <= cap {
        return cells;
    }
    let mut picked: Vec<usize> = sample(rng, cells.len(), cap).into_iter().map(|i| cells[i]).collect();
    picked.sort_unstable();
    picked
}

/// F and B channels plus what the backward pass needs.
#[derive(Clone, Debug)]
pub struct SimilarityPass {
    pub foreground: Tensor,
    pub background: Tensor,
    unit: Vec<f64>,
    norms: Vec<f64>,
    top_fg: Vec<Vec<usize>>,
    top_bg: Vec<Vec<usize>>,
    dim: usize,
}

/// Cosine similarity of every cell against every stored vector, averaged
/// over the `K` best matches per set (all of them when the set is smaller).
pub fn similarity_channels(features: &Tensor, model: &GimModel) -> Result<(Tensor, Tensor)> {
    let pass = similarity_forward(features, model)?;
    Ok((pass.foreground, pass.background))
}

pub fn similarity_forward(features: &Tensor, model: &GimModel) -> Result<SimilarityPass> {
    let (c, h, w) = features.dims3()?;
    if c != model.dim() {
        return Err(shape_err(format!("features have {c} channels, model vectors {}", model.dim())));
    }
    let n = h * w;
    let data = features.data();
    let mut norms = vec![0.0; n];
    for ch in 0..c {
        for (i, v) in data[ch * n..(ch + 1) * n].iter().enumerate() {
            norms[i] += v * v;
        }
    }
    for v in norms.iter_mut() {
        *v = v.sqrt();
    }
    // Normalized features, channel-major like the input.
    let mut unit = data.to_vec();
    for ch in 0..c {
        for (i, v) in unit[ch * n..(ch + 1) * n].iter_mut().enumerate() {
            *v = if norms[i] > 0.0 { *v / norms[i] } else { 0.0 };
        }
    }
    let (ff, top_fg) = top_k_mean(&unit, n, c, &model.foreground, model.k);
    let (bb, top_bg) = top_k_mean(&unit, n, c, &model.background, model.k);
    Ok(SimilarityPass {
        foreground: Tensor::from_vec(&[1, h, w], ff)?,
        background: Tensor::from_vec(&[1, h, w], bb)?,
        unit,
        norms,
        top_fg,
        top_bg,
        dim: c,
    })
}

fn top_k_mean(unit: &[f64], n: usize, dim: usize, set: &FeatureSet, k: usize) -> (Vec<f64>, Vec<Vec<usize>>) {
    let m = set.len();
    let mut sims = vec![0.0; n * m];
    // sims[i, j] = Σ_c unit[c, i] · set[j, c]
    gemm(n, dim, m, 1.0, unit, 1, n as isize, &set.unit, 1, dim as isize, 0.0, &mut sims, m as isize);
    let k = k.min(m);
    let mut values = Vec::with_capacity(n);
    let mut picks = Vec::with_capacity(n);
    let mut order: Vec<usize> = Vec::with_capacity(m);
    for i in 0..n {
        let row = &sims[i * m..(i + 1) * m];
        order.clear();
        order.extend(0..m);
        let cmp = |a: &usize, b: &usize| row[*b].total_cmp(&row[*a]).then(a.cmp(b));
        if k < m {
            order.select_nth_unstable_by(k - 1, cmp);
        }
        order.truncate(k);
        order.sort_unstable_by(cmp);
        values.push(order.iter().map(|&j| row[j]).sum::<f64>() / k as f64);
        picks.push(order.clone());
    }
    (values, picks)
}

/// Gradients of the similarity channels.
#[derive(Clone, Debug)]
pub struct SimilarityGrads {
    /// With respect to the query features `[dim, h, w]`.
    pub features: Tensor,
    /// With respect to the raw stored foreground vectors, `[len, dim]` row-major.
    pub foreground: Vec<f64>,
    pub background: Vec<f64>,
}

/// Backpropagate upstream gradients of F and B through the top-K mean and
/// both L2 normalizations. The selected indices are held fixed.
pub fn similarity_backward(pass: &SimilarityPass, model: &GimModel, grad_f: &Tensor, grad_b: &Tensor) -> Result<SimilarityGrads> {
    let (_, h, w) = pass.foreground.dims3()?;
    let n = h * w;
    if grad_f.len() != n || grad_b.len() != n {
        return Err(shape_err("similarity gradient size"));
    }
    let dim = pass.dim;
    let mut g_unit = vec![0.0; dim * n];
    let mut g_fg = vec![0.0; model.foreground.len() * dim];
    let mut g_bg = vec![0.0; model.background.len() * dim];
    for (set, picks, grads, g_set) in [
        (&model.foreground, &pass.top_fg, grad_f.data(), &mut g_fg),
        (&model.background, &pass.top_bg, grad_b.data(), &mut g_bg),
    ] {
        for i in 0..n {
            let sel = &picks[i];
            let g = grads[i] / sel.len() as f64;
            if g == 0.0 {
                continue;
            }
            for &j in sel {
                let x = set.vector(j);
                for c in 0..dim {
                    g_unit[c * n + i] += g * x[c];
                    g_set[j * dim + c] += g * pass.unit[c * n + i];
                }
            }
        }
    }
    // Through ŷ = y/|y|: g_y = (g_ŷ − ŷ⟨ŷ, g_ŷ⟩)/|y|.
    let mut g_feat = vec![0.0; dim * n];
    for i in 0..n {
        let r = pass.norms[i];
        if r == 0.0 {
            continue;
        }
        let dot: f64 = (0..dim).map(|c| pass.unit[c * n + i] * g_unit[c * n + i]).sum();
        for c in 0..dim {
            g_feat[c * n + i] = (g_unit[c * n + i] - pass.unit[c * n + i] * dot) / r;
        }
    }
    for (set, g_set) in [(&model.foreground, &mut g_fg), (&model.background, &mut g_bg)] {
        for j in 0..set.len() {
            let r = set.norms[j];
            let x = set.vector(j);
            let g = &mut g_set[j * dim..(j + 1) * dim];
            if r == 0.0 {
                g.fill(0.0);
                continue;
            }
            let dot: f64 = x.iter().zip(g.iter()).map(|(a, b)| a * b).sum();
            for c in 0..dim {
                g[c] = (g[c] - x[c] * dot) / r;
            }
        }
    }
    Ok(SimilarityGrads {
        features: Tensor::from_vec(&[dim, h, w], g_feat)?,
        foreground: g_fg,
        background: g_bg,
    })
}

/// Scatter stored-vector gradients back onto the grid they were taken from.
pub fn scatter_model_grads(model: &GimModel, grads: &SimilarityGrads) -> Result<Tensor> {
    let (w, h) = model.grid;
    let dim = model.dim();
    let n = w * h;
    let mut out = Tensor::zeros(&[dim, h, w]);
    let o = out.data_mut();
    for (set, g) in [(&model.foreground, &grads.foreground), (&model.background, &grads.background)] {
        for (j, &cell) in set.cells.iter().enumerate() {
            for c in 0..dim {
                o[c * n + cell] += g[j * dim + c];
            }
        }
    }
    Ok(out)
}

/// `P = exp(F) / (exp(F) + exp(B))`, computed as a logistic of `F − B`.
pub fn posterior_channel(f: &Tensor, b: &Tensor) -> Result<Tensor> {
    if f.shape() != b.shape() {
        return Err(shape_err(format!("F {:?} vs B {:?}", f.shape(), b.shape())));
    }
    let data = f.data().iter().zip(b.data()).map(|(&x, &y)| logistic(x - y)).collect();
    Tensor::from_vec(f.shape(), data)
}

/// Gradients of P with respect to F and B.
pub fn posterior_backward(p: &Tensor, grad_p: &Tensor) -> (Tensor, Tensor) {
    let mut gf = p.clone();
    for (g, (&pv, &gp)) in gf.data_mut().iter_mut().zip(p.data().iter().zip(grad_p.data())) {
        *g = gp * pv * (1.0 - pv);
    }
    let mut gb = gf.clone();
    gb.scale(-1.0);
    (gf, gb)
}

fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// The model-resolution channels fed to the refinement pathway.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelStack {
    pub l: Tensor,
    pub f: Tensor,
    pub b: Tensor,
    pub p: Tensor,
}

impl ChannelStack {
    /// `[L, F, P]`, the fusion input. B is not part of it.
    pub fn fusion_input(&self) -> Result<Tensor> {
        Tensor::concat_channels(&[&self.l, &self.f, &self.p])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_features(seed: u64, dim: usize, h: usize, w: usize) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::uniform(&[dim, h, w], -1.0, 1.0, &mut rng)
    }

    fn cell_vector(t: &Tensor, cell: usize) -> Vec<f64> {
        let n = t.shape()[1] * t.shape()[2];
        (0..t.shape()[0]).map(|c| t.data()[c * n + cell]).collect()
    }

    fn cosine(a: &[f64], b: &[f64]) -> f64 {
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            return 0.0;
        }
        a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)
    }

    /// Exhaustive oracle: sort all similarities descending and average the head.
    fn brute_channel(query: &Tensor, stored: &Tensor, cells: &[usize], k: usize) -> Vec<f64> {
        let n = query.shape()[1] * query.shape()[2];
        (0..n)
            .map(|i| {
                let y = cell_vector(query, i);
                let mut s: Vec<f64> = cells.iter().map(|&j| cosine(&y, &cell_vector(stored, j))).collect();
                s.sort_by(|a, b| b.total_cmp(a));
                let k = k.min(s.len());
                s[..k].iter().sum::<f64>() / k as f64
            })
            .collect()
    }

    #[test]
    fn majority_vote_downsampling() {
        let m = Mask::from_fn(16, 8, |x, y| x < 8 && (y < 5 || x < 4));
        let g = mask_to_grid(&m, 8).unwrap();
        // Left cell: 8·5 + 4·3 = 52 > 32; right cell empty.
        assert_eq!(g.data(), &[true, false]);
        let exactly_half = Mask::from_fn(8, 8, |x, _| x < 4);
        assert_eq!(mask_to_grid(&exactly_half, 8).unwrap().data(), &[false]);
        assert!(mask_to_grid(&Mask::new(10, 8), 8).is_err());
    }

    #[test]
    fn foreground_count_matches_mask_cells() {
        let f = random_features(1, 8, 6, 6);
        let m = Mask::from_fn(6, 6, |x, y| x < 2 && y < 3);
        let model = build_gim_model(&f, &m, &GimConfig::default()).unwrap();
        assert_eq!(model.foreground.len(), 6);
        assert_eq!(model.background.len(), 30);
    }

    #[test]
    fn full_mask_has_no_background() {
        let f = random_features(1, 8, 4, 4);
        let m = Mask::from_fn(4, 4, |_, _| true);
        assert!(matches!(build_gim_model(&f, &m, &GimConfig::default()), Err(Error::Degenerate(_))));
        assert!(build_gim_model(&f, &Mask::new(4, 4), &GimConfig::default()).is_err());
    }

    #[test]
    fn checkerboard_sets_partition_the_grid() {
        let f = random_features(2, 4, 6, 6);
        let m = Mask::from_fn(6, 6, |x, y| (x + y) % 2 == 0);
        let model = build_gim_model(&f, &m, &GimConfig::default()).unwrap();
        let mut all: Vec<usize> = model.foreground.cells().iter().chain(model.background.cells()).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..36).collect::<Vec<_>>());
        for &c in model.foreground.cells() {
            assert!(m.data()[c]);
        }
        for &c in model.background.cells() {
            assert!(!m.data()[c]);
        }
    }

    #[test]
    fn caps_subsample_deterministically() {
        let f = random_features(3, 4, 10, 10);
        let m = Mask::from_fn(10, 10, |x, _| x < 5);
        let cfg = GimConfig {
            foreground_cap: 7,
            background_cap: 11,
            ..Default::default()
        };
        let a = build_gim_model(&f, &m, &cfg).unwrap();
        let b = build_gim_model(&f, &m, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!((a.foreground.len(), a.background.len()), (7, 11));
        let mut cells = a.foreground.cells().to_vec();
        cells.dedup();
        assert_eq!(cells.len(), 7);
    }

    #[test]
    fn self_similarity_is_one() {
        let mut f = Tensor::zeros(&[3, 4, 4]);
        for c in 0..3 {
            f.channel_mut(c).fill(c as f64 + 1.0);
        }
        let m = Mask::from_fn(4, 4, |x, y| x == 0 && y == 0);
        let model = build_gim_model(&f, &m, &GimConfig::default()).unwrap();
        let (ff, _) = similarity_channels(&f, &model).unwrap();
        assert!(ff.data().iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn top_k_arithmetic() {
        // Stored unit vectors at angles whose cosines with e0 are 0.9, 0.8, 0.7, 0.1.
        let cosines = [0.9, 0.8, 0.7, 0.1];
        let mut f = Tensor::zeros(&[2, 1, 6]);
        for (j, &c) in cosines.iter().enumerate() {
            f.set3(0, 0, j, c);
            f.set3(1, 0, j, (1.0 - c * c).sqrt());
        }
        f.set3(0, 0, 4, 1.0);
        f.set3(0, 0, 5, -1.0);
        let m = Mask::from_fn(6, 1, |x, _| x < 4);
        let model = build_gim_model(&f, &m, &GimConfig::default()).unwrap();
        let (ff, _) = similarity_channels(&f, &model).unwrap();
        assert!((ff.data()[4] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn matches_brute_force_oracle() {
        let stored = random_features(5, 16, 8, 8);
        let query = random_features(6, 16, 8, 8);
        let m = Mask::from_fn(8, 8, |x, y| (2..6).contains(&x) && (1..5).contains(&y));
        for k in [1, 3, 5, 40] {
            let model = build_gim_model(&stored, &m, &GimConfig { k, ..Default::default() }).unwrap();
            let (ff, bb) = similarity_channels(&query, &model).unwrap();
            let ef = brute_channel(&query, &stored, model.foreground.cells(), k);
            let eb = brute_channel(&query, &stored, model.background.cells(), k);
            for i in 0..64 {
                assert!((ff.data()[i] - ef[i]).abs() < 1e-10);
                assert!((bb.data()[i] - eb[i]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn k_beyond_set_size_is_plain_mean() {
        let stored = random_features(7, 5, 4, 4);
        let m = Mask::from_fn(4, 4, |x, y| x == 1 && y < 2);
        let model = build_gim_model(&stored, &m, &GimConfig { k: 10, ..Default::default() }).unwrap();
        let (ff, _) = similarity_channels(&stored, &model).unwrap();
        for i in 0..16 {
            let y = cell_vector(&stored, i);
            let mean = model.foreground.cells().iter().map(|&j| cosine(&y, &cell_vector(&stored, j))).sum::<f64>() / 2.0;
            assert!((ff.data()[i] - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_vectors_have_zero_similarity() {
        let mut f = random_features(8, 4, 3, 3);
        for c in 0..4 {
            f.set3(c, 1, 1, 0.0);
        }
        let m = Mask::from_fn(3, 3, |x, y| x == 0 && y == 0);
        let model = build_gim_model(&f, &m, &GimConfig::default()).unwrap();
        let (ff, bb) = similarity_channels(&f, &model).unwrap();
        assert_eq!(ff.at3(0, 1, 1), 0.0);
        assert_eq!(bb.at3(0, 1, 1), 0.0);
        assert!(ff.data().iter().chain(bb.data()).all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn posterior_values() {
        let f = Tensor::from_vec(&[1, 1, 3], vec![0.3, 3f64.ln(), -0.2]).unwrap();
        let b = Tensor::from_vec(&[1, 1, 3], vec![0.3, 0.0, 0.5]).unwrap();
        let p = posterior_channel(&f, &b).unwrap();
        assert!((p.data()[0] - 0.5).abs() < 1e-15);
        assert!((p.data()[1] - 0.75).abs() < 1e-12);
        assert!(p.data()[2] < 0.5);
    }

    #[test]
    fn similarity_gradient_matches_finite_differences() {
        let stored = random_features(9, 6, 4, 4);
        let query = random_features(10, 6, 4, 4);
        let m = Mask::from_fn(4, 4, |x, y| x < 2 && y < 3);
        let model = build_gim_model(&stored, &m, &GimConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let wf: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let wb: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let objective = |q: &Tensor, s: &Tensor| {
            let model = build_gim_model(s, &m, &GimConfig::default()).unwrap();
            let (ff, bb) = similarity_channels(q, &model).unwrap();
            ff.data().iter().zip(&wf).map(|(a, b)| a * b).sum::<f64>() + bb.data().iter().zip(&wb).map(|(a, b)| a * b).sum::<f64>()
        };
        let pass = similarity_forward(&query, &model).unwrap();
        let gf = Tensor::from_vec(&[1, 4, 4], wf.clone()).unwrap();
        let gb = Tensor::from_vec(&[1, 4, 4], wb.clone()).unwrap();
        let grads = similarity_backward(&pass, &model, &gf, &gb).unwrap();
        let g_stored = scatter_model_grads(&model, &grads).unwrap();
        let h = 1e-6;
        for idx in 0..query.len() {
            let mut a = query.clone();
            let mut b = query.clone();
            a.data_mut()[idx] += h;
            b.data_mut()[idx] -= h;
            let fd = (objective(&a, &stored) - objective(&b, &stored)) / (2.0 * h);
            let an = grads.features.data()[idx];
            assert!((fd - an).abs() <= 1e-4 * fd.abs().max(an.abs()).max(1e-3), "query {idx}: {fd} vs {an}");
        }
        for idx in 0..stored.len() {
            let mut a = stored.clone();
            let mut b = stored.clone();
            a.data_mut()[idx] += h;
            b.data_mut()[idx] -= h;
            let fd = (objective(&query, &a) - objective(&query, &b)) / (2.0 * h);
            let an = g_stored.data()[idx];
            assert!((fd - an).abs() <= 1e-4 * fd.abs().max(an.abs()).max(1e-3), "stored {idx}: {fd} vs {an}");
        }
    }

    #[test]
    fn posterior_gradient_matches_finite_differences() {
        let f = random_features(12, 1, 3, 3);
        let b = random_features(13, 1, 3, 3);
        let p = posterior_channel(&f, &b).unwrap();
        let g = random_features(14, 1, 3, 3);
        let (gf, gb) = posterior_backward(&p, &g);
        let obj = |f: &Tensor, b: &Tensor| posterior_channel(f, b).unwrap().data().iter().zip(g.data()).map(|(a, b)| a * b).sum::<f64>();
        let h = 1e-6;
        for i in 0..9 {
            let (mut a, mut c) = (f.clone(), f.clone());
            a.data_mut()[i] += h;
            c.data_mut()[i] -= h;
            let fd = (obj(&a, &b) - obj(&c, &b)) / (2.0 * h);
            assert!((fd - gf.data()[i]).abs() < 1e-8);
            let (mut a, mut c) = (b.clone(), b.clone());
            a.data_mut()[i] += h;
            c.data_mut()[i] -= h;
            let fd = (obj(&f, &a) - obj(&f, &c)) / (2.0 * h);
            assert!((fd - gb.data()[i]).abs() < 1e-8);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn channels_ignore_positive_rescaling(seed in 0u64..1000, s in 0.01f64..100.0) {
            let stored = random_features(seed, 6, 5, 5);
            let query = random_features(seed + 1, 6, 5, 5);
            let m = Mask::from_fn(5, 5, |x, y| x + y < 4);
            let model = build_gim_model(&stored, &m, &GimConfig::default()).unwrap();
            let (f1, b1) = similarity_channels(&query, &model).unwrap();
            let mut scaled = query.clone();
            scaled.scale(s);
            let (f2, b2) = similarity_channels(&scaled, &model).unwrap();
            prop_assert!(f1.max_abs_diff(&f2) < 1e-12);
            prop_assert!(b1.max_abs_diff(&b2) < 1e-12);
        }

        #[test]
        fn channels_ignore_model_order(seed in 0u64..1000) {
            let stored = random_features(seed, 6, 5, 5);
            let query = random_features(seed + 7, 6, 5, 5);
            let m = Mask::from_fn(5, 5, |x, _| x < 2);
            let model = build_gim_model(&stored, &m, &GimConfig::default()).unwrap();
            let mut rev = model.clone();
            for set in [&mut rev.foreground, &mut rev.background] {
                let n = set.len();
                let d = set.dim;
                let mut unit = Vec::with_capacity(set.unit.len());
                for j in (0..n).rev() {
                    unit.extend_from_slice(&set.unit[j * d..(j + 1) * d]);
                }
                set.unit = unit;
                set.norms.reverse();
                set.cells.reverse();
            }
            let (f1, b1) = similarity_channels(&query, &model).unwrap();
            let (f2, b2) = similarity_channels(&query, &rev).unwrap();
            prop_assert!(f1.max_abs_diff(&f2) < 1e-12);
            prop_assert!(b1.max_abs_diff(&b2) < 1e-12);
        }

        #[test]
        fn posterior_is_consistent_with_sign(seed in 0u64..1000) {
            let f = random_features(seed, 1, 4, 4);
            let b = random_features(seed + 3, 1, 4, 4);
            let p = posterior_channel(&f, &b).unwrap();
            for i in 0..16 {
                let pv = p.data()[i];
                prop_assert!((0.0..=1.0).contains(&pv));
                prop_assert_eq!(pv + (1.0 - pv), 1.0);
                let d = f.data()[i] - b.data()[i];
                prop_assert_eq!(pv > 0.5, d > 0.0);
            }
        }
    }
}
