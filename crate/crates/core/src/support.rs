//! Skeleton paths driven by Cameron–Martin directions against a frozen
//! quantized law, and the distance from a target path to the set of such
//! skeletons.
//!
//! Distances between paths are `|y_0 - z_0| + ‖analyze(y - z)‖_α`, the
//! initial gap plus the sequence Hölder norm of the difference.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::gaussian::BmSampler;
use crate::mckean::{particle_solve_full, quantized_drivers, theta_solve, Coefficients, FrozenMeasure};
use crate::measure::{MeasurePath, WeightedPathMeasure};
use crate::neldermead::{minimize, NelderMeadOptions};
use crate::quant::QuantOptions;
use crate::wavelet::{CoeffPath, SampledPath};

const COVERAGE_STREAM: u64 = 0xC0DE;

/// Frozen-law dynamics `h ↦ Θ(μ, ξ, h)`.
pub struct Skeleton<'a> {
    coeffs: &'a dyn Coefficients,
    marginals: MeasurePath,
    xi: Vec<f64>,
}

impl<'a> Skeleton<'a> {
    pub fn new(coeffs: &'a dyn Coefficients, marginals: MeasurePath, xi: Vec<f64>) -> Result<Self> {
        if xi.len() != coeffs.state_dim() {
            return Err(Error::DimensionMismatch { expected: coeffs.state_dim(), got: xi.len() });
        }
        if marginals.dim() != coeffs.state_dim() {
            return Err(Error::DimensionMismatch { expected: coeffs.state_dim(), got: marginals.dim() });
        }
        Ok(Skeleton { coeffs, marginals, xi })
    }

    /// Marginals read off a path law, linearly interpolated within steps.
    pub fn from_law(coeffs: &'a dyn Coefficients, law: &WeightedPathMeasure, xi: Vec<f64>) -> Result<Self> {
        Skeleton::new(coeffs, MeasurePath::from_law(law)?, xi)
    }

    /// Skeleton against the particle law driven by `q_n(W)`, keeping the
    /// particle system's stage marginals.
    pub fn quantized(
        coeffs: &'a dyn Coefficients,
        sampler: &BmSampler,
        n: usize,
        alpha: f64,
        xi: Vec<f64>,
        grid: &[f64],
        opts: &QuantOptions,
    ) -> Result<Self> {
        let drivers = quantized_drivers(sampler, n, alpha, grid, opts)?;
        let initials = vec![xi.clone(); drivers.len()];
        let solved = particle_solve_full(coeffs, &drivers, &initials)?;
        Skeleton::new(coeffs, solved.marginals, xi)
    }

    pub fn grid(&self) -> &[f64] {
        self.marginals.grid()
    }

    pub fn horizon(&self) -> f64 {
        *self.grid().last().expect("grid is never empty")
    }

    pub fn xi(&self) -> &[f64] {
        &self.xi
    }

    pub fn marginals(&self) -> &MeasurePath {
        &self.marginals
    }

    pub fn coefficients(&self) -> &dyn Coefficients {
        self.coeffs
    }

    pub fn path(&self, h: &CoeffPath) -> Result<SampledPath> {
        self.drive(&h.sample_on(self.grid())?)
    }

    pub fn drive(&self, driver: &SampledPath) -> Result<SampledPath> {
        theta_solve(self.coeffs, &self.marginals, &self.xi, driver)
    }
}

/// Skeleton path against the time marginals of `law`.
pub fn skeleton(coeffs: &dyn Coefficients, law: &WeightedPathMeasure, xi: &[f64], h: &CoeffPath, grid: &[f64]) -> Result<SampledPath> {
    law.check_common_grid()?;
    if law.grid() != grid {
        return domain("law must be sampled on the skeleton grid");
    }
    Skeleton::from_law(coeffs, law, xi.to_vec())?.path(h)
}

/// Finest Schauder level read exactly from a path sampled on `grid`.
pub fn analysis_level(grid: &[f64]) -> u32 {
    let cells = grid.len().saturating_sub(1).max(2);
    (usize::BITS - 1 - cells.leading_zeros()).saturating_sub(1)
}

/// `|y_0 - z_0| + ‖analyze(y - z)‖_α` at the analysis level of the grid.
pub fn path_distance(y: &SampledPath, z: &SampledPath, alpha: f64) -> Result<f64> {
    let diff = y.sub(z)?;
    let gap = crate::wavelet::euclid(diff.start());
    Ok(gap + diff.analyze(analysis_level(y.grid()))?.holder_norm(alpha))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonQuery {
    pub target: SampledPath,
    /// Search level `K`; the search space has `d'·2^(K+1)` coordinates.
    pub level: u32,
    /// Objective evaluations per start.
    pub budget: usize,
    pub starts: usize,
    /// Coverage threshold `ε`.
    pub epsilon: f64,
    /// A start stops once its distance falls to this value.
    pub solver_tol: f64,
    pub seed: u64,
}

impl SkeletonQuery {
    pub fn new(target: SampledPath, level: u32, epsilon: f64) -> Result<Self> {
        let q = SkeletonQuery { target, level, budget: 4000, starts: 8, epsilon, solver_tol: 1e-7, seed: 0 };
        q.validate()?;
        Ok(q)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return domain("epsilon must be positive");
        }
        if self.starts == 0 || self.budget == 0 {
            return domain("starts and budget must be positive");
        }
        if self.level > 16 {
            return domain("search level above 16");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SearchFlag {
    Converged,
    BudgetExhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportDistance {
    pub distance: f64,
    pub h: CoeffPath,
    pub flag: SearchFlag,
    pub evaluations: usize,
}

fn invert(m: &[f64], d: usize) -> Option<Vec<f64>> {
    let mut a = m.to_vec();
    let mut inv: Vec<f64> = (0..d * d).map(|k| if k / d == k % d { 1.0 } else { 0.0 }).collect();
    for col in 0..d {
        let pivot = (col..d).max_by(|&i, &j| a[i * d + col].abs().total_cmp(&a[j * d + col].abs()))?;
        if a[pivot * d + col].abs() < 1e-12 {
            return None;
        }
        for k in 0..d {
            a.swap(col * d + k, pivot * d + k);
            inv.swap(col * d + k, pivot * d + k);
        }
        let p = a[col * d + col];
        for k in 0..d {
            a[col * d + k] /= p;
            inv[col * d + k] /= p;
        }
        for row in (0..d).filter(|&r| r != col) {
            let f = a[row * d + col];
            for k in 0..d {
                a[row * d + k] -= f * a[col * d + k];
                inv[row * d + k] -= f * inv[col * d + k];
            }
        }
    }
    Some(inv)
}

/// `σ^{-1}(y_t - y_0 - ∫_0^t b(y_s)[μ_s] ds)` with trapezoidal drift, when
/// `σ` is constant and invertible.
fn inversion_start(skel: &Skeleton<'_>, y: &SampledPath, level: u32) -> Result<Option<(CoeffPath, Vec<f64>)>> {
    let coeffs = skel.coeffs;
    let d = coeffs.state_dim();
    if coeffs.noise_dim() != d {
        return Ok(None);
    }
    let Some(sigma_inv) = coeffs.constant_diffusion().and_then(|s| invert(&s, d)) else {
        return Ok(None);
    };
    let grid = skel.grid();
    let mut drift_prev = vec![0.0; d];
    let mut drift_next = vec![0.0; d];
    let frozen = FrozenMeasure::new(skel.marginals.at(0));
    coeffs.drift(y.value(0), &frozen, &mut drift_prev);
    let mut integral = vec![0.0; d];
    let mut values = vec![0.0; d];
    for k in 1..grid.len() {
        let frozen = FrozenMeasure::new(skel.marginals.at(k));
        coeffs.drift(y.value(k), &frozen, &mut drift_next);
        let dt = grid[k] - grid[k - 1];
        for j in 0..d {
            integral[j] += 0.5 * dt * (drift_prev[j] + drift_next[j]);
        }
        let noise: Vec<f64> = (0..d).map(|j| y.value(k)[j] - y.value(0)[j] - integral[j]).collect();
        values.extend((0..d).map(|r| (0..d).map(|c| sigma_inv[r * d + c] * noise[c]).sum::<f64>()));
        std::mem::swap(&mut drift_prev, &mut drift_next);
    }
    let h = SampledPath::new(d, grid.to_vec(), values)?;
    Ok(Some((h.analyze(level)?, sigma_inv)))
}

/// Residual correction `h ← h + analyze(σ^{-1}(y - z(h)))` while it helps.
/// Returns the improved direction, its distance and the evaluations spent.
fn polish(
    skel: &Skeleton<'_>,
    y: &SampledPath,
    mut h: CoeffPath,
    sigma_inv: &[f64],
    alpha: f64,
    tol: f64,
) -> Result<(CoeffPath, f64, usize)> {
    let d = y.dim();
    let mut best = path_distance(y, &skel.path(&h)?, alpha)?;
    let mut evals = 1;
    for _ in 0..50 {
        if best <= tol {
            break;
        }
        let residual = y.sub(&skel.path(&h)?)?;
        let start = residual.start().to_vec();
        let scaled = residual.map_values(|v| {
            (0..d).map(|r| (0..d).map(|c| sigma_inv[r * d + c] * (v[c] - start[c])).sum()).collect()
        })?;
        let next = h.linear_combination(1.0, &scaled.analyze(h.level())?, 1.0)?;
        let value = path_distance(y, &skel.path(&next)?, alpha)?;
        evals += 1;
        if value >= best {
            break;
        }
        best = value;
        h = next;
    }
    Ok((h, best, evals))
}

/// Distance from `query.target` to the skeletons `Θ(μ, ξ, h)` with `h` in the
/// level-`K` Schauder span, by multistart simplex search.
pub fn dist_to_support(query: &SkeletonQuery, skel: &Skeleton<'_>, alpha: f64) -> Result<SupportDistance> {
    query.validate()?;
    let y = &query.target;
    let dp = skel.coeffs.noise_dim();
    if y.dim() != skel.coeffs.state_dim() {
        return Err(Error::DimensionMismatch { expected: skel.coeffs.state_dim(), got: y.dim() });
    }
    if y.grid() != skel.grid() {
        return domain("target must be sampled on the skeleton grid");
    }
    let horizon = skel.horizon();
    let size = dp * crate::wavelet::DyadicIndex::count(query.level);
    let objective = |theta: &[f64]| -> f64 {
        CoeffPath::from_dense(dp, horizon, query.level, theta.to_vec())
            .and_then(|h| skel.path(&h))
            .and_then(|z| path_distance(y, &z, alpha))
            .unwrap_or(f64::INFINITY)
    };

    let mut starts: Vec<(Vec<f64>, f64)> = Vec::with_capacity(query.starts + 1);
    let mut polished = None;
    let base = match inversion_start(skel, y, query.level)? {
        Some((h, sigma_inv)) => {
            let (h, value, evals) = polish(skel, y, h, &sigma_inv, alpha, query.solver_tol)?;
            let theta = h.into_dense();
            polished = Some((theta.clone(), value, evals));
            starts.push((theta.clone(), 0.01));
            theta
        }
        None => vec![0.0; size],
    };
    if let Some((theta, value, evaluations)) = polished.clone().filter(|p| p.1 <= query.solver_tol) {
        let h = CoeffPath::from_dense(dp, horizon, query.level, theta)?;
        return Ok(SupportDistance { distance: value, h, flag: SearchFlag::Converged, evaluations });
    }
    starts.push((vec![0.0; size], 0.1));
    let mut rng = ChaCha8Rng::seed_from_u64(query.seed);
    while starts.len() < query.starts {
        let theta = base
            .iter()
            .map(|b| {
                let z: f64 = StandardNormal.sample(&mut rng);
                b + 0.5 * z
            })
            .collect();
        starts.push((theta, 0.1));
    }
    starts.truncate(query.starts);

    // Starts run in a fixed order and stop once one reaches the tolerance.
    let mut results = Vec::with_capacity(starts.len());
    for (x0, step) in &starts {
        let opts = NelderMeadOptions { max_evals: query.budget, step: *step, ftol: 1e-14, stop_below: query.solver_tol, max_restarts: 8 };
        let r = minimize(objective, x0, &opts);
        let done = r.value <= query.solver_tol;
        results.push(r);
        if done {
            break;
        }
    }
    let evaluations = results.iter().map(|r| r.evals).sum::<usize>() + polished.map_or(0, |p| p.2);
    let best = results.into_iter().min_by(|a, b| a.value.total_cmp(&b.value)).expect("at least one start");
    if !best.value.is_finite() {
        return Err(Error::NonFinite { time: horizon });
    }
    let flag = if best.converged || best.value <= query.solver_tol { SearchFlag::Converged } else { SearchFlag::BudgetExhausted };
    Ok(SupportDistance { distance: best.value, h: CoeffPath::from_dense(dp, horizon, query.level, best.x)?, flag, evaluations })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageOptions {
    pub level: u32,
    pub budget: usize,
    pub starts: usize,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for CoverageOptions {
    fn default() -> Self {
        CoverageOptions { level: 3, budget: 2000, starts: 4, epsilon: 0.1, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageStats {
    pub epsilon: f64,
    pub distances: Vec<f64>,
    pub fraction_within: f64,
    pub mean: f64,
    pub median: f64,
    pub max: f64,
}

impl CoverageStats {
    pub fn from_distances(distances: Vec<f64>, epsilon: f64) -> Self {
        let n = distances.len().max(1) as f64;
        let mut sorted = distances.clone();
        sorted.sort_by(f64::total_cmp);
        let median = if sorted.is_empty() { 0.0 } else { sorted[sorted.len() / 2] };
        CoverageStats {
            epsilon,
            fraction_within: distances.iter().filter(|&&d| d <= epsilon).count() as f64 / n,
            mean: distances.iter().sum::<f64>() / n,
            median,
            max: sorted.last().copied().unwrap_or(0.0),
            distances,
        }
    }
}

/// Distances to the skeleton set of Brownian-driven frozen-law solutions.
pub fn coverage_for(skel: &Skeleton<'_>, sampler: &BmSampler, alpha: f64, num_mc: usize, opts: &CoverageOptions) -> Result<CoverageStats> {
    let mc = sampler.fork(COVERAGE_STREAM);
    let distances = (0..num_mc as u64)
        .into_par_iter()
        .map(|i| {
            let target = skel.drive(&mc.sample(i).sample_on(skel.grid())?)?;
            let query = SkeletonQuery {
                target,
                level: opts.level,
                budget: opts.budget,
                starts: opts.starts,
                epsilon: opts.epsilon,
                solver_tol: 1e-7,
                seed: opts.seed ^ i,
            };
            Ok(dist_to_support(&query, skel, alpha)?.distance)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CoverageStats::from_distances(distances, opts.epsilon))
}

/// Coverage statistics against the particle law driven by `q_n(W)`.
#[allow(clippy::too_many_arguments)]
pub fn support_coverage_check(
    coeffs: &dyn Coefficients,
    sampler: &BmSampler,
    n: usize,
    xi: &[f64],
    alpha: f64,
    num_mc: usize,
    grid: &[f64],
    quant: &QuantOptions,
    opts: &CoverageOptions,
) -> Result<CoverageStats> {
    let skel = Skeleton::quantized(coeffs, sampler, n, alpha, xi.to_vec(), grid, quant)?;
    coverage_for(&skel, sampler, alpha, num_mc, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mckean::LinearMeanField;
    use crate::wavelet::dyadic_grid;

    fn planted_h(level: u32, seed: u64) -> CoeffPath {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let count = crate::wavelet::DyadicIndex::count(level);
        CoeffPath::from_dense(1, 1.0, level, (0..count).map(|_| StandardNormal.sample(&mut rng)).collect()).unwrap()
    }

    fn linear_skeleton(coeffs: &LinearMeanField) -> Skeleton<'_> {
        let sampler = BmSampler::new(1, 1.0, 6, 11).unwrap();
        let opts = QuantOptions { level_cap: 3, ..QuantOptions::default() };
        Skeleton::quantized(coeffs, &sampler, 4, 0.4, vec![1.0], &dyadic_grid(1.0, 7), &opts).unwrap()
    }

    #[test]
    fn trivial_skeletons() {
        let grid = dyadic_grid(1.0, 6);
        let coeffs = LinearMeanField::new(2, 2, 0.0, 0.0, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let law = WeightedPathMeasure::uniform(vec![SampledPath::constant(&[0.0, 0.0], grid.clone()).unwrap()]).unwrap();
        let mut h = CoeffPath::zeros(2, 1.0, 2);
        h.set(crate::wavelet::DyadicIndex::new(1, 1).unwrap(), &[0.7, -0.2]).unwrap();
        let z = skeleton(&coeffs, &law, &[1.0, 2.0], &h, &grid).unwrap();
        let hs = h.sample_on(&grid).unwrap();
        for k in 0..grid.len() {
            assert!((z.value(k)[0] - 1.0 - hs.value(k)[0]).abs() < 1e-14);
            assert!((z.value(k)[1] - 2.0 - hs.value(k)[1]).abs() < 1e-14);
        }
        let still = skeleton(&coeffs, &law, &[1.0, 2.0], &CoeffPath::zeros(2, 1.0, 2), &grid).unwrap();
        assert!(still.values().chunks(2).all(|v| v == [1.0, 2.0]));
    }

    #[test]
    fn planted_target_is_recovered() {
        let coeffs = LinearMeanField::scalar(0.5, 0.0, 0.3);
        let skel = linear_skeleton(&coeffs);
        let h0 = planted_h(3, 4);
        let y = skel.path(&h0).unwrap();
        let q = SkeletonQuery::new(y, 3, 0.05).unwrap();
        let r = dist_to_support(&q, &skel, 0.4).unwrap();
        assert!(r.distance <= 1e-4, "{}", r.distance);
        let gap = r.h.sub(&h0).unwrap();
        assert!(gap.as_slice().iter().all(|v| v.abs() < 1e-2));
    }

    #[test]
    fn initial_point_lower_bound() {
        let coeffs = LinearMeanField::scalar(0.5, 0.0, 0.3);
        let skel = linear_skeleton(&coeffs);
        let y = skel.path(&planted_h(3, 5)).unwrap().map_values(|v| vec![v[0] + 0.5]).unwrap();
        let mut q = SkeletonQuery::new(y, 3, 0.05).unwrap();
        q.budget = 300;
        q.starts = 3;
        let r = dist_to_support(&q, &skel, 0.4).unwrap();
        assert!(r.distance >= 0.5);
    }

    #[test]
    fn budget_and_level_trends() {
        let coeffs = LinearMeanField::new(1, 1, 0.0, 0.0, vec![1.0]).unwrap();
        let skel = linear_skeleton(&coeffs);
        let sampler = BmSampler::new(1, 1.0, 8, 3).unwrap();
        let y = skel.drive(&sampler.sample(0).sample_on(skel.grid()).unwrap()).unwrap();
        let mut prev = f64::INFINITY;
        for budget in [20, 200, 2000] {
            let q = SkeletonQuery { budget, starts: 1, ..SkeletonQuery::new(y.clone(), 2, 0.1).unwrap() };
            let d = dist_to_support(&q, &skel, 0.4).unwrap().distance;
            assert!(d <= prev);
            prev = d;
        }
        let by_level: Vec<f64> = (1..=5)
            .map(|level| dist_to_support(&SkeletonQuery::new(y.clone(), level, 0.1).unwrap(), &skel, 0.4).unwrap().distance)
            .collect();
        assert!(by_level.windows(2).all(|w| w[1] <= w[0] + 1e-9), "{by_level:?}");
    }

    #[test]
    fn coverage_statistics() {
        let coeffs = LinearMeanField::new(1, 1, 0.0, 0.0, vec![1.0]).unwrap();
        let skel = linear_skeleton(&coeffs);
        let sampler = BmSampler::new(1, 1.0, 8, 3).unwrap();
        let wide = CoverageOptions { level: 2, budget: 200, starts: 2, epsilon: 1e3, seed: 1 };
        let stats = coverage_for(&skel, &sampler, 0.4, 4, &wide).unwrap();
        assert_eq!(stats.fraction_within, 1.0);
        assert_eq!(stats.distances.len(), 4);
        let tight = CoverageOptions { epsilon: 0.3, ..wide.clone() };
        let small = coverage_for(&skel, &sampler, 0.4, 4, &CoverageOptions { budget: 20, ..tight.clone() }).unwrap();
        let large = coverage_for(&skel, &sampler, 0.4, 4, &tight).unwrap();
        assert!(large.fraction_within >= small.fraction_within);
        assert!(large.distances.iter().zip(&small.distances).all(|(a, b)| a <= b));
    }

    #[test]
    fn matrix_inverse() {
        let m = [2.0, 1.0, 0.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0];
        let inv = invert(&m, 3).unwrap();
        for r in 0..3 {
            for c in 0..3 {
                let v: f64 = (0..3).map(|k| m[r * 3 + k] * inv[k * 3 + c]).sum();
                assert!((v - if r == c { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
        assert!(invert(&[1.0, 2.0, 2.0, 4.0], 2).is_none());
    }
}
