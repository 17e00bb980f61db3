//! Lloyd quantizers of truncated Brownian motion in the sequence Hölder norm.
//!
//! A scalar codebook is trained on a Monte Carlo pool of level-`N`
//! coefficient vectors; the `d'`-dimensional quantizer is the product of
//! `d'` copies of it, one per independent component.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::gaussian::{truncation_level_for, BmSampler, RateRow, RateTable};
use crate::measure::WeightedMeasure;
use crate::stats::lr_moment;
use crate::wavelet::{level_of_flat, level_weights, CoeffPath, DyadicIndex};

const POOL_STREAM: u64 = 0x51;
const TEST_STREAM: u64 = 0x7E57;
/// Consecutive non-improving iterations tolerated before giving up.
const MAX_STALLS: usize = 5;

/// Distance used by the Lloyd core.
#[derive(Debug, Clone)]
pub(crate) enum Metric {
    /// `max_i w_i |a_i - b_i|`.
    WeightedSup(Vec<f64>),
    Euclidean,
}

impl Metric {
    fn holder(alpha: f64, level: u32) -> Metric {
        let lw = level_weights(alpha, level);
        Metric::WeightedSup((0..DyadicIndex::count(level)).map(|i| lw[level_of_flat(i) as usize]).collect())
    }

    /// Distance, or any value above `bound` once it is known to exceed it.
    #[inline]
    fn dist(&self, a: &[f64], b: &[f64], bound: f64) -> f64 {
        match self {
            Metric::WeightedSup(w) => {
                let mut m = 0.0f64;
                for ((x, y), wi) in a.iter().zip(b).zip(w) {
                    m = m.max(wi * (x - y).abs());
                    if m > bound {
                        return m;
                    }
                }
                m
            }
            Metric::Euclidean => {
                let b2 = bound * bound;
                let mut s = 0.0;
                for (x, y) in a.iter().zip(b) {
                    s += (x - y) * (x - y);
                    if s > b2 {
                        return s.sqrt();
                    }
                }
                s.sqrt()
            }
        }
    }

    /// Nearest center (lowest index on ties) and its distance.
    fn nearest(&self, x: &[f64], centers: &[f64], width: usize) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (j, c) in centers.chunks(width).enumerate() {
            let d = self.dist(x, c, best.1);
            if d < best.1 {
                best = (j, d);
            }
        }
        best
    }
}

/// Stopping rule and initialisation seed for Lloyd's algorithm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LloydOptions {
    pub max_iters: usize,
    /// Stop once the relative improvement of the best distortion drops
    /// below this. Centroid steps may raise a sup-norm distortion; the best
    /// codebook seen is returned.
    pub tol: f64,
    pub seed: u64,
    /// The pool consists of antithetic pairs `x, -x`; keep the codebook
    /// symmetric under negation.
    pub symmetric: bool,
}

impl Default for LloydOptions {
    fn default() -> Self {
        LloydOptions { max_iters: 200, tol: 1e-9, seed: 0, symmetric: false }
    }
}

/// Diagnostics of one Lloyd run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LloydReport {
    /// Root-mean-square distortion of the best codebook after each iteration.
    pub trace: Vec<f64>,
    /// Root-mean-square distortion of every iterate.
    pub raw_trace: Vec<f64>,
    pub iterations: usize,
    /// Iterations whose centroid step raised the distortion.
    pub increases: usize,
    /// Each center is the mean of its cell to `1e-10` and no cell is empty.
    pub stationary: bool,
}

struct Outcome {
    centers: Vec<f64>,
    weights: Vec<f64>,
    report: LloydReport,
}

fn assign_all(points: &[f64], width: usize, centers: &[f64], metric: &Metric) -> (Vec<usize>, Vec<f64>) {
    points.par_chunks(width).map(|x| metric.nearest(x, centers, width)).unzip()
}

fn mean_square(d: &[f64]) -> f64 {
    d.iter().map(|x| x * x).sum::<f64>() / d.len() as f64
}

/// Sums cell members in pool order so that antithetic cells stay exact negatives.
fn centroids(points: &[f64], width: usize, n: usize, assign: &[usize]) -> (Vec<f64>, Vec<usize>) {
    let mut sums = vec![0.0; n * width];
    let mut counts = vec![0usize; n];
    for (x, &j) in points.chunks(width).zip(assign) {
        counts[j] += 1;
        for (s, v) in sums[j * width..(j + 1) * width].iter_mut().zip(x) {
            *s += v;
        }
    }
    for (j, &c) in counts.iter().enumerate() {
        if c > 0 {
            sums[j * width..(j + 1) * width].iter_mut().for_each(|s| *s /= c as f64);
        }
    }
    (sums, counts)
}

/// Index of negation partner of each center, or itself for the zero center.
fn partners(n: usize) -> Vec<usize> {
    (0..n).map(|j| if n % 2 == 1 && j == n - 1 { j } else { j ^ 1 }).collect()
}

fn init_centers(points: &[f64], width: usize, n: usize, metric: &Metric, opts: &LloydOptions) -> Vec<f64> {
    let npts = points.len() / width;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut centers: Vec<f64> = Vec::with_capacity(n * width);
    let push = |centers: &mut Vec<f64>, k: usize| {
        let x = &points[k * width..(k + 1) * width];
        centers.extend_from_slice(x);
        if opts.symmetric {
            centers.extend(x.iter().map(|v| -v));
        }
    };
    let step = if opts.symmetric { 2 } else { 1 };
    let target = if opts.symmetric { n - n % 2 } else { n };
    if centers.len() < target * width {
        push(&mut centers, rng.gen_range(0..npts));
    }
    let mut d2: Vec<f64> = vec![f64::INFINITY; npts];
    while centers.len() < target * width {
        let start = centers.len() / width - step;
        for (k, x) in points.chunks(width).enumerate() {
            for c in centers[start * width..].chunks(width) {
                let d = metric.dist(x, c, f64::INFINITY);
                d2[k] = d2[k].min(d * d);
            }
        }
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 && total.is_finite() {
            let u = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            d2.iter().position(|d| {
                acc += d;
                acc >= u
            })
            .unwrap_or(npts - 1)
        } else {
            rng.gen_range(0..npts)
        };
        push(&mut centers, pick);
    }
    if opts.symmetric && n % 2 == 1 {
        centers.extend(std::iter::repeat_n(0.0, width));
    }
    centers
}

fn lloyd_core(points: &[f64], width: usize, n: usize, metric: &Metric, opts: &LloydOptions) -> Result<Outcome> {
    let npts = points.len() / width;
    if n == 0 {
        return domain("codebook size must be at least 1");
    }
    if npts < n {
        return Err(Error::Domain(format!("pool of {npts} points is smaller than codebook size {n}")));
    }
    let partner = partners(n);
    let mut centers = init_centers(points, width, n, metric, opts);
    let (mut assign, mut dist) = assign_all(points, width, &centers, metric);
    let mut distortion = mean_square(&dist);
    let mut best = (centers.clone(), assign.clone(), distortion);
    let mut report = LloydReport {
        trace: vec![distortion.sqrt()],
        raw_trace: vec![distortion.sqrt()],
        iterations: 0,
        increases: 0,
        stationary: false,
    };
    let mut stalls = 0;
    for _ in 0..opts.max_iters {
        let (mut next, counts) = centroids(points, width, n, &assign);
        let mut taken = vec![false; npts];
        for j in 0..n {
            if counts[j] > 0 || (opts.symmetric && partner[j] <= j) {
                continue;
            }
            // Farthest pool point from its own center, lowest index on ties.
            let far = (0..npts)
                .filter(|&k| !taken[k])
                .fold(None, |best: Option<usize>, k| match best {
                    Some(b) if dist[b] >= dist[k] => Some(b),
                    _ => Some(k),
                });
            let Some(k) = far else { break };
            taken[k] = true;
            let x = &points[k * width..(k + 1) * width];
            next[j * width..(j + 1) * width].copy_from_slice(x);
            if opts.symmetric && partner[j] != j {
                let p = partner[j];
                taken[k ^ 1] = true;
                for (c, v) in next[p * width..(p + 1) * width].iter_mut().zip(x) {
                    *c = -v;
                }
            }
        }
        if next == centers {
            break;
        }
        (assign, dist) = assign_all(points, width, &next, metric);
        centers = next;
        let previous = distortion;
        distortion = mean_square(&dist);
        report.iterations += 1;
        report.raw_trace.push(distortion.sqrt());
        if distortion > previous {
            report.increases += 1;
        }
        let improvement = if best.2 > 0.0 { (best.2 - distortion) / best.2 } else { 0.0 };
        if distortion < best.2 {
            best = (centers.clone(), assign.clone(), distortion);
        }
        report.trace.push(best.2.sqrt());
        if improvement >= opts.tol {
            stalls = 0;
        } else {
            stalls += 1;
            if improvement >= 0.0 || stalls >= MAX_STALLS {
                break;
            }
        }
    }
    let (centers, assign, _) = best;
    let (means, counts) = centroids(points, width, n, &assign);
    report.stationary =
        counts.iter().all(|&c| c > 0) && means.iter().zip(&centers).all(|(m, c)| (m - c).abs() <= 1e-10);
    let weights = counts.iter().map(|&c| c as f64 / npts as f64).collect();
    Ok(Outcome { centers, weights, report })
}

/// Scalar codebook on level-`N` coefficient paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codebook1D {
    pub alpha: f64,
    pub level: u32,
    pub n: usize,
    pub centers: Vec<CoeffPath>,
    pub weights: Vec<f64>,
}

impl Codebook1D {
    pub fn new(alpha: f64, centers: Vec<CoeffPath>, weights: Vec<f64>) -> Result<Self> {
        let Some(first) = centers.first() else {
            return domain("codebook needs at least one center");
        };
        let (level, horizon) = (first.level(), first.horizon());
        if centers.iter().any(|c| c.dim() != 1 || c.level() != level || c.horizon() != horizon) {
            return domain("centers must be scalar paths on a common level and horizon");
        }
        let measure = WeightedMeasure::new(centers, weights)?;
        let n = measure.len();
        let (centers, weights) = measure.into_parts();
        Ok(Codebook1D { alpha, level, n, centers, weights })
    }

    pub fn horizon(&self) -> f64 {
        self.centers[0].horizon()
    }

    fn flat_centers(&self) -> Vec<f64> {
        self.centers.iter().flat_map(|c| c.as_slice().to_vec()).collect()
    }

    fn metric(&self) -> Metric {
        Metric::holder(self.alpha, self.level)
    }

    fn nearest_flat(&self, x: &[f64], flat: &[f64], metric: &Metric) -> usize {
        metric.nearest(x, flat, DyadicIndex::count(self.level)).0
    }

    /// Index of the center nearest to `x` projected onto the codebook level.
    pub fn assign(&self, x: &CoeffPath) -> Result<usize> {
        if x.dim() != 1 {
            return Err(Error::DimensionMismatch { expected: 1, got: x.dim() });
        }
        let x = x.extend_to(self.level.max(x.level())).truncate(self.level)?;
        Ok(self.nearest_flat(x.as_slice(), &self.flat_centers(), &self.metric()))
    }

    /// Reload check: every center lives on the codebook level.
    pub fn validate(&self) -> Result<()> {
        Codebook1D::new(self.alpha, self.centers.clone(), self.weights.clone()).map(|_| ())?;
        if self.n != self.centers.len() || self.centers[0].level() != self.level {
            return domain("codebook header disagrees with its centers");
        }
        Ok(())
    }
}

fn flatten_pool(pool: &[CoeffPath]) -> Result<(Vec<f64>, u32, f64)> {
    let Some(first) = pool.first() else {
        return domain("empty pool");
    };
    let (level, horizon) = (first.level(), first.horizon());
    if pool.iter().any(|p| p.dim() != 1 || p.level() != level || p.horizon() != horizon) {
        return domain("pool paths must be scalar with a common level and horizon");
    }
    Ok((pool.iter().flat_map(|p| p.as_slice().to_vec()).collect(), level, horizon))
}

/// Lloyd's algorithm in the Hölder norm with centroid updates.
pub fn lloyd(pool: &[CoeffPath], n: usize, alpha: f64, opts: &LloydOptions) -> Result<Codebook1D> {
    lloyd_with_report(pool, n, alpha, opts).map(|(cb, _)| cb)
}

pub fn lloyd_with_report(
    pool: &[CoeffPath],
    n: usize,
    alpha: f64,
    opts: &LloydOptions,
) -> Result<(Codebook1D, LloydReport)> {
    let (flat, level, horizon) = flatten_pool(pool)?;
    if opts.symmetric {
        let antithetic = pool.len().is_multiple_of(2)
            && pool.chunks(2).all(|p| p[0].as_slice().iter().zip(p[1].as_slice()).all(|(a, b)| *a == -*b));
        if !antithetic {
            return domain("symmetric Lloyd needs a pool of antithetic pairs");
        }
    }
    let width = DyadicIndex::count(level);
    let out = lloyd_core(&flat, width, n, &Metric::holder(alpha, level), opts)?;
    let centers = out
        .centers
        .chunks(width)
        .map(|c| CoeffPath::from_dense(1, horizon, level, c.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    Ok((Codebook1D { alpha, level, n, centers, weights: out.weights }, out.report))
}

/// `(mean over the pool of min_i ||x - c_i||^r)^(1/r)`.
pub fn distortion(cb: &Codebook1D, pool: &[CoeffPath], alpha: f64, r: f64) -> Result<f64> {
    if r < 1.0 {
        return domain("moment order must be at least 1");
    }
    let level = pool.iter().map(CoeffPath::level).chain([cb.level]).max().unwrap_or(cb.level);
    let centers: Vec<CoeffPath> = cb.centers.iter().map(|c| c.extend_to(level)).collect();
    let total: f64 = pool
        .par_iter()
        .map(|x| {
            let x = x.extend_to(level);
            centers.iter().map(|c| x.sub(c).map(|d| d.holder_norm(alpha))).try_fold(f64::INFINITY, |m, d| d.map(|d| m.min(d)))
        })
        .map(|d| d.map(|d| d.powf(r)))
        .sum::<Result<f64>>()?;
    Ok((total / pool.len() as f64).powf(1.0 / r))
}

/// Nearest center of `x` after projecting onto the codebook level.
pub fn voronoi_assign(x: &CoeffPath, cb: &Codebook1D) -> Result<usize> {
    cb.assign(x)
}

/// Knobs of the quantization pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantOptions {
    /// Pool size for training; `None` means `200 n`.
    pub pool_size: Option<usize>,
    /// Upper bound on the truncation level actually used.
    pub level_cap: u32,
    pub max_iters: usize,
    pub tol: f64,
    /// Largest product support that may be materialized.
    pub support_cap: usize,
}

impl Default for QuantOptions {
    fn default() -> Self {
        QuantOptions { pool_size: None, level_cap: 4, max_iters: 200, tol: 1e-9, support_cap: 1 << 16 }
    }
}

/// Truncation level used for a codebook of size `n`.
pub fn quant_level(n: usize, alpha: f64, cap: u32) -> Result<u32> {
    if n < 2 {
        return Ok(0);
    }
    Ok(truncation_level_for(n, alpha)?.min(cap))
}

/// Antithetic training pool of scalar level-`level` paths.
pub fn training_pool(sampler: &BmSampler, level: u32, size: usize) -> Vec<CoeffPath> {
    let pool = sampler.fork(POOL_STREAM);
    (0..size.div_ceil(2) as u64)
        .into_par_iter()
        .flat_map_iter(|i| {
            let x = pool.sample_component(i, 0, level);
            let y = x.scale(-1.0);
            [x, y]
        })
        .collect()
}

/// Scalar codebook trained for the sampler's horizon.
pub fn train_codebook(sampler: &BmSampler, n: usize, alpha: f64, opts: &QuantOptions) -> Result<(Codebook1D, LloydReport)> {
    let level = quant_level(n, alpha, opts.level_cap)?;
    let size = opts.pool_size.unwrap_or(200 * n).max(2 * n);
    let pool = training_pool(sampler, level, size);
    let lopts = LloydOptions { max_iters: opts.max_iters, tol: opts.tol, seed: sampler.seed, symmetric: true };
    lloyd_with_report(&pool, n, alpha, &lopts)
}

/// Product of `dim` copies of a scalar codebook.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductCodebook {
    pub dim: usize,
    pub factor: Codebook1D,
}

impl ProductCodebook {
    pub fn new(dim: usize, factor: Codebook1D) -> Result<Self> {
        if dim == 0 {
            return domain("product dimension must be positive");
        }
        Ok(ProductCodebook { dim, factor })
    }

    /// `n^dim`, or `None` on overflow.
    pub fn size(&self) -> Option<usize> {
        self.factor.n.checked_pow(self.dim as u32)
    }

    pub fn level(&self) -> u32 {
        self.factor.level
    }

    /// Multi-index of the cell containing `x`.
    pub fn assign(&self, x: &CoeffPath) -> Result<Vec<usize>> {
        if x.dim() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: x.dim() });
        }
        let level = self.factor.level;
        let x = x.extend_to(level.max(x.level())).truncate(level)?;
        let flat = self.factor.flat_centers();
        let metric = self.factor.metric();
        Ok((0..self.dim).map(|j| self.factor.nearest_flat(x.component(j).as_slice(), &flat, &metric)).collect())
    }

    pub fn center(&self, index: &[usize]) -> Result<CoeffPath> {
        if index.len() != self.dim || index.iter().any(|&i| i >= self.factor.n) {
            return domain("multi-index out of range");
        }
        let parts: Vec<&CoeffPath> = index.iter().map(|&i| &self.factor.centers[i]).collect();
        CoeffPath::from_components(&parts)
    }

    pub fn weight(&self, index: &[usize]) -> f64 {
        index.iter().map(|&i| self.factor.weights[i]).product()
    }

    /// `q_n(x)`.
    pub fn quantize(&self, x: &CoeffPath) -> Result<CoeffPath> {
        self.center(&self.assign(x)?)
    }

    /// Multi-indices in lexicographic order, last component fastest.
    pub fn indices(&self, cap: usize) -> Result<Vec<Vec<usize>>> {
        let size = self.size().unwrap_or(usize::MAX);
        if size > cap {
            return Err(Error::TooLarge { size, cap });
        }
        let n = self.factor.n;
        Ok((0..size)
            .map(|mut k| {
                let mut idx = vec![0; self.dim];
                for slot in idx.iter_mut().rev() {
                    *slot = k % n;
                    k /= n;
                }
                idx
            })
            .collect())
    }

    /// The full product law; refuses when `n^dim > cap`.
    pub fn to_measure(&self, cap: usize) -> Result<WeightedMeasure<CoeffPath>> {
        let idx = self.indices(cap)?;
        let atoms = idx.iter().map(|i| self.center(i)).collect::<Result<Vec<_>>>()?;
        let weights: Vec<f64> = idx.iter().map(|i| self.weight(i)).collect();
        let total: f64 = weights.iter().sum();
        WeightedMeasure::new(atoms, weights.iter().map(|w| w / total).collect())
    }
}

/// Product quantizer for a `sampler.dim`-dimensional Brownian motion.
pub fn build_product_codebook(sampler: &BmSampler, n: usize, alpha: f64, opts: &QuantOptions) -> Result<ProductCodebook> {
    ProductCodebook::new(sampler.dim, train_codebook(sampler, n, alpha, opts)?.0)
}

/// Finite-support law of `q_n(W)` on coefficient paths.
pub fn quantize_measure(sampler: &BmSampler, n: usize, alpha: f64, opts: &QuantOptions) -> Result<WeightedMeasure<CoeffPath>> {
    let size = n.checked_pow(sampler.dim as u32).unwrap_or(usize::MAX);
    if size > opts.support_cap {
        return Err(Error::TooLarge { size, cap: opts.support_cap });
    }
    build_product_codebook(sampler, n, alpha, opts)?.to_measure(opts.support_cap)
}

/// Fresh test paths at the sampler's maximal level.
pub fn test_set(sampler: &BmSampler, samples: usize) -> Vec<CoeffPath> {
    let test = sampler.fork(TEST_STREAM);
    (0..samples as u64).into_par_iter().map(|i| test.sample(i)).collect()
}

/// `||W - q(W)||` for every test path.
pub fn quantization_errors(cb: &ProductCodebook, tests: &[CoeffPath], alpha: f64) -> Result<Vec<f64>> {
    tests
        .par_iter()
        .map(|w| {
            let q = cb.quantize(w)?.extend_to(w.level().max(cb.level()));
            Ok(w.extend_to(q.level()).sub(&q)?.holder_norm(alpha))
        })
        .collect()
}

/// Monte Carlo `E[||W - q_n(W)||^r]^(1/r)` for each codebook size, with a
/// common test set across sizes.
pub fn quantization_rate(
    sampler: &BmSampler,
    alpha: f64,
    r: f64,
    sizes: &[usize],
    samples: usize,
    opts: &QuantOptions,
) -> Result<RateTable> {
    if r < 1.0 {
        return domain("moment order must be at least 1");
    }
    if samples < 2 {
        return domain("need at least two samples");
    }
    let tests = test_set(sampler, samples);
    let mut rows = Vec::with_capacity(sizes.len());
    for &n in sizes {
        let cb = build_product_codebook(sampler, n, alpha, opts)?;
        let errs = quantization_errors(&cb, &tests, alpha)?;
        let (error, stderr) = lr_moment(&errs, r);
        rows.push(RateRow { level: Some(cb.level()), size: Some(n), error, stderr, samples });
    }
    Ok(RateTable { rows })
}

/// Euclidean Lloyd on a point cloud in `R^dim`: centers, cell masses and
/// the run diagnostics.
pub fn point_lloyd(points: &[Vec<f64>], m: usize, opts: &LloydOptions) -> Result<(Vec<Vec<f64>>, Vec<f64>, LloydReport)> {
    let Some(dim) = points.first().map(Vec::len) else {
        return domain("empty point cloud");
    };
    if points.iter().any(|p| p.len() != dim) || dim == 0 {
        return domain("points must share a positive dimension");
    }
    let flat: Vec<f64> = points.concat();
    let out = lloyd_core(&flat, dim, m, &Metric::Euclidean, opts)?;
    Ok((out.centers.chunks(dim).map(<[f64]>::to_vec).collect(), out.weights, out.report))
}

/// Euclidean Lloyd on a point cloud in `R^dim`; returns centers and cell masses.
pub fn quantize_point_measure(points: &[Vec<f64>], m: usize, seed: u64) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let (centers, weights, _) = point_lloyd(points, m, &LloydOptions { seed, ..LloydOptions::default() })?;
    Ok((centers, weights))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    /// Level-0 pool carrying only the `(0,0)` coefficient.
    fn normal_pool(size: usize, seed: u64) -> Vec<CoeffPath> {
        let s = BmSampler::new(1, 1.0, 0, seed).unwrap();
        training_pool(&s, 0, size)
            .into_iter()
            .map(|p| CoeffPath::from_dense(1, 1.0, 0, vec![p.as_slice()[0], 0.0]).unwrap())
            .collect()
    }

    /// Lloyd–Max on a dense grid of the standard normal density.
    fn two_point_normal_oracle() -> f64 {
        let h = 1e-4;
        let (mut num, mut den) = (0.0, 0.0);
        let mut x: f64 = h / 2.0;
        while x < 12.0 {
            let phi = (-0.5 * x * x).exp();
            num += x * phi;
            den += phi;
            x += h;
        }
        num / den
    }

    #[test]
    fn single_center_is_the_pool_mean() {
        let pool = training_pool(&BmSampler::new(1, 1.0, 0, 3).unwrap(), 3, 400);
        let opts = LloydOptions { symmetric: true, ..LloydOptions::default() };
        let cb = lloyd(&pool, 1, 0.4, &opts).unwrap();
        assert_eq!(cb.weights, vec![1.0]);
        assert!(cb.centers[0].as_slice().iter().all(|&c| c == 0.0));
        let asym = lloyd(&pool[..301], 1, 0.4, &LloydOptions::default()).unwrap();
        let n = 301.0;
        for (i, c) in asym.centers[0].as_slice().iter().enumerate() {
            let mean: f64 = pool[..301].iter().map(|p| p.as_slice()[i]).sum::<f64>() / n;
            assert!((c - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn two_point_gaussian_quantizer() {
        let oracle = two_point_normal_oracle();
        assert!((oracle - (2.0 / std::f64::consts::PI).sqrt()).abs() < 1e-6);
        let pool = normal_pool(100_000, 11);
        let opts = LloydOptions { symmetric: true, ..LloydOptions::default() };
        let (cb, report) = lloyd_with_report(&pool, 2, 0.4, &opts).unwrap();
        let mut c: Vec<f64> = cb.centers.iter().map(|c| c.as_slice()[0]).collect();
        c.sort_by(f64::total_cmp);
        assert!((c[1] - oracle).abs() < 0.01, "{c:?}");
        assert_eq!(c[0], -c[1]);
        assert!(report.stationary);
    }

    #[test]
    fn lloyd_trace_is_nonincreasing_and_stationary_when_converged() {
        let s = BmSampler::new(1, 1.0, 3, 5).unwrap();
        for n in [3, 4, 8] {
            let pool = training_pool(&s, 3, 200 * n);
            let opts = LloydOptions { symmetric: true, seed: n as u64, ..LloydOptions::default() };
            let (cb, report) = lloyd_with_report(&pool, n, 0.4, &opts).unwrap();
            assert!(report.trace.windows(2).all(|w| w[1] <= w[0]));
            let d = distortion(&cb, &pool, 0.4, 2.0).unwrap();
            assert!((d - report.trace.last().unwrap()).abs() < 1e-12);
            assert!((cb.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            if report.stationary {
                let flat: Vec<f64> = pool.iter().flat_map(|p| p.as_slice().to_vec()).collect();
                let assign: Vec<usize> = pool.iter().map(|p| cb.assign(p).unwrap()).collect();
                let (means, _) = centroids(&flat, DyadicIndex::count(3), n, &assign);
                let centers: Vec<f64> = cb.centers.iter().flat_map(|c| c.as_slice().to_vec()).collect();
                assert!(means.iter().zip(&centers).all(|(a, b)| (a - b).abs() < 1e-10));
            }
        }
    }

    #[test]
    fn symmetric_codebooks_have_zero_mean() {
        let s = BmSampler::new(1, 1.0, 4, 9).unwrap();
        for n in [2, 5, 8] {
            let (cb, _) = train_codebook(&s, n, 0.4, &QuantOptions::default()).unwrap();
            for i in 0..DyadicIndex::count(cb.level) {
                let m: f64 = cb.centers.iter().zip(&cb.weights).map(|(c, w)| w * c.as_slice()[i]).sum();
                assert!(m.abs() < 1e-15);
            }
        }
    }

    #[test]
    fn distortion_examples() {
        let pool = normal_pool(200, 1);
        let cb = Codebook1D::new(0.4, pool[..4].to_vec(), vec![0.25; 4]).unwrap();
        assert_eq!(distortion(&cb, &pool[..4], 0.4, 2.0).unwrap(), 0.0);
        let zero = Codebook1D::new(0.4, vec![CoeffPath::zeros(1, 1.0, 0)], vec![1.0]).unwrap();
        let direct = (pool.iter().map(|p| p.holder_norm(0.4).powi(2)).sum::<f64>() / 200.0).sqrt();
        assert!((distortion(&zero, &pool, 0.4, 2.0).unwrap() - direct).abs() < 1e-12);
        let more = Codebook1D::new(0.4, vec![CoeffPath::zeros(1, 1.0, 0), pool[7].clone()], vec![0.5, 0.5]).unwrap();
        assert!(distortion(&more, &pool, 0.4, 2.0).unwrap() <= distortion(&zero, &pool, 0.4, 2.0).unwrap());
    }

    #[test]
    fn voronoi_examples() {
        let s = BmSampler::new(1, 1.0, 5, 2).unwrap();
        let (cb, _) = train_codebook(&s, 4, 0.4, &QuantOptions { level_cap: 2, ..QuantOptions::default() }).unwrap();
        for (k, c) in cb.centers.iter().enumerate() {
            assert_eq!(voronoi_assign(c, &cb).unwrap(), k);
        }
        let x = s.sample_component(0, 0, 5);
        let mut y = x.clone();
        y.set(DyadicIndex::new(4, 3).unwrap(), &[1e6]).unwrap();
        assert_eq!(voronoi_assign(&x, &cb).unwrap(), voronoi_assign(&y, &cb).unwrap());

        let up = CoeffPath::from_dense(1, 1.0, 0, vec![1.0, 0.0]).unwrap();
        let two = Codebook1D::new(0.4, vec![up.scale(-1.0), up.clone()], vec![0.5, 0.5]).unwrap();
        let big = CoeffPath::from_dense(1, 1.0, 1, vec![1e3, 0.5, -0.5, 0.2]).unwrap();
        assert_eq!(voronoi_assign(&big, &two).unwrap(), 1);
    }

    #[test]
    fn product_measure_structure() {
        let s = BmSampler::new(2, 1.0, 5, 4).unwrap();
        let opts = QuantOptions { level_cap: 2, ..QuantOptions::default() };
        let law = quantize_measure(&s, 2, 0.4, &opts).unwrap();
        assert_eq!(law.len(), 4);
        assert!((law.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let cb = build_product_codebook(&s, 2, 0.4, &opts).unwrap();
        for k in 0..2 {
            let marginal: f64 = law
                .iter()
                .filter(|(a, _)| a.component(0) == cb.factor.centers[k])
                .map(|(_, w)| w)
                .sum();
            assert!((marginal - cb.factor.weights[k]).abs() < 1e-12);
        }
        let capped = QuantOptions { support_cap: 3, ..opts };
        assert!(matches!(quantize_measure(&s, 2, 0.4, &capped), Err(Error::TooLarge { size: 4, cap: 3 })));
    }

    #[test]
    fn codebook_json_round_trip() {
        let s = BmSampler::new(1, 1.0, 3, 8).unwrap();
        let (cb, _) = train_codebook(&s, 3, 0.4, &QuantOptions { level_cap: 1, ..QuantOptions::default() }).unwrap();
        let text = serde_json::to_string(&cb).unwrap();
        assert!(text.starts_with(r#"{"alpha":0.4,"level":1,"n":3,"centers":[{"dim":1"#));
        let back: Codebook1D = serde_json::from_str(&text).unwrap();
        back.validate().unwrap();
        assert_eq!(back, cb);
    }

    #[test]
    fn point_quantizer_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let pts: Vec<Vec<f64>> = (0..40_000).map(|_| vec![StandardNormal.sample(&mut rng)]).collect();
        let mean = pts.iter().map(|p| p[0]).sum::<f64>() / pts.len() as f64;
        let (c1, w1) = quantize_point_measure(&pts, 1, 0).unwrap();
        assert!((c1[0][0] - mean).abs() < 1e-12 && w1 == vec![1.0]);
        let (c2, _) = quantize_point_measure(&pts, 2, 0).unwrap();
        let hi = c2.iter().map(|c| c[0]).fold(f64::MIN, f64::max);
        assert!((hi - two_point_normal_oracle()).abs() < 0.02, "{hi}");
    }

    #[test]
    fn point_quantizer_rate_on_the_square() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<Vec<f64>> = (0..20_000).map(|_| vec![rng.gen::<f64>(), rng.gen::<f64>()]).collect();
        let errs: Vec<f64> = [4usize, 16, 64]
            .iter()
            .map(|&m| {
                let (c, _) = quantize_point_measure(&pts, m, 1).unwrap();
                let flat = c.concat();
                let d: Vec<f64> = pts.iter().map(|p| Metric::Euclidean.nearest(p, &flat, 2).1).collect();
                mean_square(&d).sqrt()
            })
            .collect();
        // m^(-1/2) in two dimensions: each quadrupling halves the error.
        for w in errs.windows(2) {
            let ratio = w[0] / w[1];
            assert!((1.6..2.5).contains(&ratio), "{errs:?}");
        }
    }

    #[test]
    fn quantization_rate_table_shape() {
        let s = BmSampler::new(1, 1.0, 8, 21).unwrap();
        let opts = QuantOptions { level_cap: 3, ..QuantOptions::default() };
        let table = quantization_rate(&s, 0.4, 2.0, &[1, 4], 300, &opts).unwrap();
        assert_eq!(table.rows[0].level, Some(0));
        assert_eq!(table.rows[1].size, Some(4));
        let tests = test_set(&s, 300);
        let norms: Vec<f64> = tests.iter().map(|w| w.holder_norm(0.4)).collect();
        assert!((table.rows[0].error - lr_moment(&norms, 2.0).0).abs() < 1e-12);
        assert!(table.rows[1].error <= table.rows[0].error);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn weights_are_cell_frequencies(seed in 0u64..1000, n in 1usize..6) {
            let pool = training_pool(&BmSampler::new(1, 1.0, 2, seed).unwrap(), 2, 120);
            let opts = LloydOptions { seed, ..LloydOptions::default() };
            let (cb, report) = lloyd_with_report(&pool, n, 0.35, &opts).unwrap();
            prop_assert!(report.trace.windows(2).all(|w| w[1] <= w[0]));
            let mut counts = vec![0usize; n];
            for p in &pool {
                counts[cb.assign(p).unwrap()] += 1;
            }
            for (c, w) in counts.iter().zip(&cb.weights) {
                prop_assert!((*c as f64 / 120.0 - w).abs() < 1e-15);
            }
            prop_assert!(cb.centers.iter().all(|c| c.level() == 2));
        }
    }
}
