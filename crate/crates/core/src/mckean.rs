//! Frozen-measure dynamics, interacting particle systems over a codebook and
//! the resulting finite-support McKean–Vlasov laws.
//!
//! Everything is integrated with the classical fourth-order Runge–Kutta
//! scheme on the grid of the drivers. Drivers are piecewise linear, so each
//! step sees a constant driver velocity. In the coupled particle system the
//! measure seen at a Runge–Kutta stage is the empirical measure of the stage
//! states; [`MeasurePath`] can carry those stage marginals so that the
//! frozen-measure solver reproduces the particle system exactly at its fixed
//! point.

use std::sync::OnceLock;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::gaussian::BmSampler;
use crate::measure::{MeasurePath, MeasureSnapshot, WeightedMeasure, WeightedPathMeasure};
use crate::quant::{quantize_measure, quantize_point_measure, QuantOptions};
use crate::wasserstein::{wasserstein, wasserstein_paths, PathMetric, TransportProblem};
use crate::wavelet::{euclid, CoeffPath, SampledPath};

/// A measure snapshot with lazily computed moments shared by all particles.
pub struct FrozenMeasure<'a> {
    snapshot: MeasureSnapshot<'a>,
    mean: OnceLock<Vec<f64>>,
    trig: OnceLock<(Vec<f64>, Vec<f64>)>,
}

impl<'a> FrozenMeasure<'a> {
    pub fn new(snapshot: MeasureSnapshot<'a>) -> Self {
        FrozenMeasure { snapshot, mean: OnceLock::new(), trig: OnceLock::new() }
    }

    pub fn snapshot(&self) -> MeasureSnapshot<'a> {
        self.snapshot
    }

    pub fn mean(&self) -> &[f64] {
        self.mean.get_or_init(|| self.snapshot.mean())
    }

    /// Componentwise `(∫ cos y dμ, ∫ sin y dμ)`.
    pub fn trig_moments(&self) -> (&[f64], &[f64]) {
        let (c, s) = self.trig.get_or_init(|| {
            let d = self.snapshot.dim;
            let (mut c, mut s) = (vec![0.0; d], vec![0.0; d]);
            for (a, w) in self.snapshot.iter() {
                for k in 0..d {
                    c[k] += w * a[k].cos();
                    s[k] += w * a[k].sin();
                }
            }
            (c, s)
        });
        (c, s)
    }
}

/// Declared Lipschitz constants; checked only by sampling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lipschitz {
    pub drift_state: f64,
    pub drift_measure: f64,
    pub diffusion: f64,
}

/// Drift `b(x)[μ]` and diffusion `σ(x)` of a McKean–Vlasov equation.
pub trait Coefficients: Sync {
    /// `d`.
    fn state_dim(&self) -> usize;
    /// `d'`.
    fn noise_dim(&self) -> usize;
    fn drift(&self, x: &[f64], mu: &FrozenMeasure<'_>, out: &mut [f64]);
    /// Row-major `d × d'` matrix.
    fn diffusion(&self, x: &[f64], out: &mut [f64]);
    fn lipschitz(&self) -> Lipschitz;
    /// `Some(σ)` when the diffusion does not depend on the state.
    fn constant_diffusion(&self) -> Option<Vec<f64>> {
        None
    }
}

fn check_sigma(sigma: &[f64], d: usize, dp: usize) -> Result<()> {
    if sigma.len() != d * dp {
        return Err(Error::DimensionMismatch { expected: d * dp, got: sigma.len() });
    }
    Ok(())
}

fn matrix_norm(m: &[f64]) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// `b(x, μ) = a·mean(μ) + k·x + c`, constant `σ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearMeanField {
    pub dim: usize,
    pub noise_dim: usize,
    pub mean_coeff: f64,
    #[serde(default)]
    pub state_coeff: f64,
    #[serde(default)]
    pub offset: Vec<f64>,
    /// Row-major `d × d'`.
    pub sigma: Vec<f64>,
}

impl LinearMeanField {
    pub fn new(dim: usize, noise_dim: usize, mean_coeff: f64, state_coeff: f64, sigma: Vec<f64>) -> Result<Self> {
        let c = LinearMeanField { dim, noise_dim, mean_coeff, state_coeff, offset: vec![0.0; dim], sigma };
        c.validate()?;
        Ok(c)
    }

    /// Scalar model `b = a·mean + k·x`, `σ = s`.
    pub fn scalar(mean_coeff: f64, state_coeff: f64, sigma: f64) -> Self {
        LinearMeanField { dim: 1, noise_dim: 1, mean_coeff, state_coeff, offset: vec![0.0], sigma: vec![sigma] }
    }

    pub fn validate(&self) -> Result<()> {
        check_sigma(&self.sigma, self.dim, self.noise_dim)?;
        if !self.offset.is_empty() && self.offset.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: self.offset.len() });
        }
        Ok(())
    }
}

impl Coefficients for LinearMeanField {
    fn state_dim(&self) -> usize {
        self.dim
    }

    fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    fn drift(&self, x: &[f64], mu: &FrozenMeasure<'_>, out: &mut [f64]) {
        let mean = mu.mean();
        for k in 0..self.dim {
            out[k] = self.mean_coeff * mean[k] + self.state_coeff * x[k] + self.offset.get(k).copied().unwrap_or(0.0);
        }
    }

    fn diffusion(&self, _x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.sigma);
    }

    fn lipschitz(&self) -> Lipschitz {
        Lipschitz { drift_state: self.state_coeff.abs(), drift_measure: self.mean_coeff.abs(), diffusion: 0.0 }
    }

    fn constant_diffusion(&self) -> Option<Vec<f64>> {
        Some(self.sigma.clone())
    }
}

/// Kuramoto-type phases: `b_k(x, μ) = ω_k - K ∫ sin(x_k - y_k) dμ(y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Kuramoto {
    pub dim: usize,
    pub noise_dim: usize,
    pub coupling: f64,
    #[serde(default)]
    pub frequency: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl Kuramoto {
    pub fn validate(&self) -> Result<()> {
        check_sigma(&self.sigma, self.dim, self.noise_dim)?;
        if !self.frequency.is_empty() && self.frequency.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: self.frequency.len() });
        }
        Ok(())
    }
}

impl Coefficients for Kuramoto {
    fn state_dim(&self) -> usize {
        self.dim
    }

    fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    fn drift(&self, x: &[f64], mu: &FrozenMeasure<'_>, out: &mut [f64]) {
        let (c, s) = mu.trig_moments();
        for k in 0..self.dim {
            // sin(x - y) = sin x cos y - cos x sin y
            let interaction = x[k].sin() * c[k] - x[k].cos() * s[k];
            out[k] = self.frequency.get(k).copied().unwrap_or(0.0) - self.coupling * interaction;
        }
    }

    fn diffusion(&self, _x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.sigma);
    }

    fn lipschitz(&self) -> Lipschitz {
        Lipschitz { drift_state: self.coupling.abs(), drift_measure: self.coupling.abs(), diffusion: 0.0 }
    }

    fn constant_diffusion(&self) -> Option<Vec<f64>> {
        Some(self.sigma.clone())
    }
}

/// `b(x, μ) = -θ x - κ ∫ tanh(x - y) dμ(y)` componentwise, constant `σ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientInteraction {
    pub dim: usize,
    pub noise_dim: usize,
    pub confinement: f64,
    pub interaction: f64,
    pub sigma: Vec<f64>,
}

impl GradientInteraction {
    pub fn validate(&self) -> Result<()> {
        check_sigma(&self.sigma, self.dim, self.noise_dim)
    }
}

impl Coefficients for GradientInteraction {
    fn state_dim(&self) -> usize {
        self.dim
    }

    fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    fn drift(&self, x: &[f64], mu: &FrozenMeasure<'_>, out: &mut [f64]) {
        let snap = mu.snapshot();
        for k in 0..self.dim {
            let pull: f64 = snap.iter().map(|(y, w)| w * (x[k] - y[k]).tanh()).sum();
            out[k] = -self.confinement * x[k] - self.interaction * pull;
        }
    }

    fn diffusion(&self, _x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.sigma);
    }

    fn lipschitz(&self) -> Lipschitz {
        Lipschitz {
            drift_state: self.confinement.abs() + self.interaction.abs(),
            drift_measure: self.interaction.abs(),
            diffusion: 0.0,
        }
    }

    fn constant_diffusion(&self) -> Option<Vec<f64>> {
        Some(self.sigma.clone())
    }
}

type DriftFn = dyn Fn(&[f64], &FrozenMeasure<'_>, &mut [f64]) + Send + Sync;
type DiffusionFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;

/// Coefficients built from closures.
pub struct FnCoefficients {
    pub dim: usize,
    pub noise_dim: usize,
    pub drift: Box<DriftFn>,
    pub diffusion: Box<DiffusionFn>,
    pub lipschitz: Lipschitz,
}

impl Coefficients for FnCoefficients {
    fn state_dim(&self) -> usize {
        self.dim
    }

    fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    fn drift(&self, x: &[f64], mu: &FrozenMeasure<'_>, out: &mut [f64]) {
        (self.drift)(x, mu, out)
    }

    fn diffusion(&self, x: &[f64], out: &mut [f64]) {
        (self.diffusion)(x, out)
    }

    fn lipschitz(&self) -> Lipschitz {
        self.lipschitz
    }
}

/// Same diffusion, zero drift.
struct DriftFree<'a>(&'a dyn Coefficients);

impl Coefficients for DriftFree<'_> {
    fn state_dim(&self) -> usize {
        self.0.state_dim()
    }

    fn noise_dim(&self) -> usize {
        self.0.noise_dim()
    }

    fn drift(&self, _x: &[f64], _mu: &FrozenMeasure<'_>, out: &mut [f64]) {
        out.fill(0.0);
    }

    fn diffusion(&self, x: &[f64], out: &mut [f64]) {
        self.0.diffusion(x, out)
    }

    fn lipschitz(&self) -> Lipschitz {
        Lipschitz { drift_state: 0.0, drift_measure: 0.0, ..self.0.lipschitz() }
    }
}

/// Built-in coefficient families, selectable by name in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CoefficientSpec {
    LinearMeanField(LinearMeanField),
    Kuramoto(Kuramoto),
    GradientInteraction(GradientInteraction),
}

impl CoefficientSpec {
    pub fn build(&self) -> Result<Box<dyn Coefficients + Send>> {
        Ok(match self {
            CoefficientSpec::LinearMeanField(c) => {
                c.validate()?;
                Box::new(c.clone())
            }
            CoefficientSpec::Kuramoto(c) => {
                c.validate()?;
                Box::new(c.clone())
            }
            CoefficientSpec::GradientInteraction(c) => {
                c.validate()?;
                Box::new(c.clone())
            }
        })
    }
}

/// Largest observed Lipschitz ratios on random inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LipschitzReport {
    pub observed: Lipschitz,
    pub declared: Lipschitz,
    pub within_declared: bool,
}

/// Sampling check of the declared Lipschitz constants.
pub fn lipschitz_diagnostic(coeffs: &dyn Coefficients, trials: usize, seed: u64) -> Result<LipschitzReport> {
    let (d, dp) = (coeffs.state_dim(), coeffs.noise_dim());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = |k: usize| -> Vec<f64> { (0..k).map(|_| StandardNormal.sample(&mut rng)).collect() };
    let mut obs = Lipschitz { drift_state: 0.0, drift_measure: 0.0, diffusion: 0.0 };
    let (mut bx, mut by) = (vec![0.0; d], vec![0.0; d]);
    let (mut sx, mut sy) = (vec![0.0; d * dp], vec![0.0; d * dp]);
    let atoms = 6;
    let weights = vec![1.0 / atoms as f64; atoms];
    for _ in 0..trials {
        let x = normal(d);
        let y = normal(d);
        let a = normal(atoms * d);
        let b = normal(atoms * d);
        let mu = FrozenMeasure::new(MeasureSnapshot { dim: d, atoms: &a, weights: &weights });
        let nu = FrozenMeasure::new(MeasureSnapshot { dim: d, atoms: &b, weights: &weights });
        let dxy = euclid(&x.iter().zip(&y).map(|(p, q)| p - q).collect::<Vec<_>>());
        coeffs.drift(&x, &mu, &mut bx);
        coeffs.drift(&y, &mu, &mut by);
        let diff: Vec<f64> = bx.iter().zip(&by).map(|(p, q)| p - q).collect();
        obs.drift_state = obs.drift_state.max(euclid(&diff) / dxy);
        coeffs.diffusion(&x, &mut sx);
        coeffs.diffusion(&y, &mut sy);
        let sdiff: Vec<f64> = sx.iter().zip(&sy).map(|(p, q)| p - q).collect();
        obs.diffusion = obs.diffusion.max(matrix_norm(&sdiff) / dxy);
        let dist: Vec<f64> = a
            .chunks(d)
            .flat_map(|p| b.chunks(d).map(move |q| euclid(&p.iter().zip(q).map(|(s, t)| s - t).collect::<Vec<_>>())))
            .collect();
        let w1 = wasserstein(&TransportProblem::from_distances(weights.clone(), weights.clone(), &dist, 1.0)?, 1.0)?.value;
        coeffs.drift(&x, &nu, &mut by);
        let diff: Vec<f64> = bx.iter().zip(&by).map(|(p, q)| p - q).collect();
        if w1 > 0.0 {
            obs.drift_measure = obs.drift_measure.max(euclid(&diff) / w1);
        }
    }
    let declared = coeffs.lipschitz();
    let slack = 1.0 + 1e-9;
    let within_declared = obs.drift_state <= declared.drift_state * slack + 1e-12
        && obs.drift_measure <= declared.drift_measure * slack + 1e-12
        && obs.diffusion <= declared.diffusion * slack + 1e-12;
    Ok(LipschitzReport { observed: obs, declared, within_declared })
}

/// Right-hand side `b(x)[μ] + σ(x) v`.
fn rhs(coeffs: &dyn Coefficients, x: &[f64], mu: &FrozenMeasure<'_>, velocity: &[f64], sigma: &mut [f64], out: &mut [f64]) {
    let dp = coeffs.noise_dim();
    coeffs.drift(x, mu, out);
    coeffs.diffusion(x, sigma);
    for (k, o) in out.iter_mut().enumerate() {
        *o += sigma[k * dp..(k + 1) * dp].iter().zip(velocity).map(|(s, v)| s * v).sum::<f64>();
    }
}

fn check_finite(state: &[f64], time: f64) -> Result<()> {
    if state.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { time })
    }
}

fn check_driver(coeffs: &dyn Coefficients, driver: &SampledPath, grid: &[f64]) -> Result<()> {
    if driver.dim() != coeffs.noise_dim() {
        return Err(Error::DimensionMismatch { expected: coeffs.noise_dim(), got: driver.dim() });
    }
    if driver.grid() != grid {
        return domain("driver and measure path must share a grid");
    }
    Ok(())
}

/// Stage states `[x + h/2 k1, x + h/2 k2, x + h k3]` of every step.
pub type StageStates = Vec<[Vec<f64>; 3]>;

/// Solves `dx = b(x)[μ_t] dt + σ(x) dh_t` against a frozen measure path,
/// also returning the Runge–Kutta stage states.
pub fn theta_solve_with_stages(
    coeffs: &dyn Coefficients,
    mu: &MeasurePath,
    xi: &[f64],
    driver: &SampledPath,
) -> Result<(SampledPath, StageStates)> {
    let (d, dp) = (coeffs.state_dim(), coeffs.noise_dim());
    if xi.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: xi.len() });
    }
    if mu.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, got: mu.dim() });
    }
    let grid = mu.grid();
    check_driver(coeffs, driver, grid)?;
    let mut values = Vec::with_capacity(grid.len() * d);
    values.extend_from_slice(xi);
    let mut stages = Vec::with_capacity(grid.len() - 1);
    let mut x = xi.to_vec();
    let mut sigma = vec![0.0; d * dp];
    let mut k = [vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]];
    let mut tmp = vec![0.0; d];
    for step in 0..grid.len() - 1 {
        let h = grid[step + 1] - grid[step];
        let v: Vec<f64> = driver.value(step + 1).iter().zip(driver.value(step)).map(|(b, a)| (b - a) / h).collect();
        let mut stage_states: [Vec<f64>; 3] = Default::default();
        for s in 0..4 {
            let measure = mu.stage(step, s);
            let frozen = FrozenMeasure::new(mu.view(&measure));
            let state: &[f64] = if s == 0 {
                &x
            } else {
                let factor = if s == 3 { h } else { 0.5 * h };
                for j in 0..d {
                    tmp[j] = x[j] + factor * k[s - 1][j];
                }
                stage_states[s - 1] = tmp.clone();
                &tmp
            };
            rhs(coeffs, state, &frozen, &v, &mut sigma, &mut k[s]);
        }
        for j in 0..d {
            x[j] += h / 6.0 * (k[0][j] + 2.0 * k[1][j] + 2.0 * k[2][j] + k[3][j]);
        }
        check_finite(&x, grid[step + 1])?;
        values.extend_from_slice(&x);
        stages.push(stage_states);
    }
    Ok((SampledPath::new(d, grid.to_vec(), values)?, stages))
}

/// Frozen-measure solution driven by a path sampled on the measure's grid.
pub fn theta_solve(coeffs: &dyn Coefficients, mu: &MeasurePath, xi: &[f64], driver: &SampledPath) -> Result<SampledPath> {
    Ok(theta_solve_with_stages(coeffs, mu, xi, driver)?.0)
}

/// Frozen-measure solution driven by a Schauder path synthesized on the grid.
pub fn theta_solve_coeff(coeffs: &dyn Coefficients, mu: &MeasurePath, xi: &[f64], h: &CoeffPath) -> Result<SampledPath> {
    theta_solve(coeffs, mu, xi, &h.sample_on(mu.grid())?)
}

/// Solution of the interacting particle system and its stage marginals.
#[derive(Debug, Clone)]
pub struct ParticleSolution {
    pub law: WeightedPathMeasure,
    pub marginals: MeasurePath,
}

/// Coupled particle system: particle `j` is driven by atom `j` of `drivers`,
/// starts at `initials[j]` and carries the driver's weight.
pub fn particle_solve_full(coeffs: &dyn Coefficients, drivers: &WeightedPathMeasure, initials: &[Vec<f64>]) -> Result<ParticleSolution> {
    let (d, dp) = (coeffs.state_dim(), coeffs.noise_dim());
    let n = drivers.len();
    if initials.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: initials.len() });
    }
    if let Some(bad) = initials.iter().find(|x| x.len() != d) {
        return Err(Error::DimensionMismatch { expected: d, got: bad.len() });
    }
    drivers.check_common_grid()?;
    let grid = drivers.grid().to_vec();
    for a in drivers.atoms() {
        check_driver(coeffs, a, &grid)?;
    }
    let weights = drivers.weights().to_vec();
    let mut x: Vec<f64> = initials.concat();
    let mut snapshots = Vec::with_capacity(grid.len());
    snapshots.push(x.clone());
    let mut stages = Vec::with_capacity(grid.len() - 1);
    let mut k: [Vec<f64>; 4] = Default::default();
    for step in 0..grid.len() - 1 {
        let h = grid[step + 1] - grid[step];
        let velocities: Vec<f64> = drivers
            .atoms()
            .iter()
            .flat_map(|a| a.value(step + 1).iter().zip(a.value(step)).map(|(b, c)| (b - c) / h).collect::<Vec<_>>())
            .collect();
        let mut stage_states: [Vec<f64>; 3] = Default::default();
        for s in 0..4 {
            let state: Vec<f64> = if s == 0 {
                x.clone()
            } else {
                let factor = if s == 3 { h } else { 0.5 * h };
                x.iter().zip(&k[s - 1]).map(|(a, b)| a + factor * b).collect()
            };
            let frozen = FrozenMeasure::new(MeasureSnapshot { dim: d, atoms: &state, weights: &weights });
            let mut out = vec![0.0; n * d];
            out.par_chunks_mut(d).enumerate().for_each_init(
                || vec![0.0; d * dp],
                |sigma, (j, o)| rhs(coeffs, &state[j * d..(j + 1) * d], &frozen, &velocities[j * dp..(j + 1) * dp], sigma, o),
            );
            k[s] = out;
            if s > 0 {
                stage_states[s - 1] = state;
            }
        }
        for (j, xj) in x.iter_mut().enumerate() {
            *xj += h / 6.0 * (k[0][j] + 2.0 * k[1][j] + 2.0 * k[2][j] + k[3][j]);
        }
        check_finite(&x, grid[step + 1])?;
        snapshots.push(x.clone());
        stages.push(stage_states);
    }
    let marginals = MeasurePath::new(grid.clone(), d, weights.clone(), snapshots)?.with_stages(stages)?;
    let atoms = (0..n)
        .map(|j| {
            let values = (0..grid.len()).flat_map(|t| marginals.at(t).atom(j).to_vec()).collect();
            SampledPath::new(d, grid.clone(), values)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ParticleSolution { law: WeightedMeasure::new(atoms, weights)?, marginals })
}

/// Law of the coupled particle system.
pub fn particle_solve(coeffs: &dyn Coefficients, drivers: &WeightedPathMeasure, initials: &[Vec<f64>]) -> Result<WeightedPathMeasure> {
    Ok(particle_solve_full(coeffs, drivers, initials)?.law)
}

/// Codebook paths of `q_n(W)` sampled on `grid`.
pub fn quantized_drivers(sampler: &BmSampler, n: usize, alpha: f64, grid: &[f64], opts: &QuantOptions) -> Result<WeightedPathMeasure> {
    quantize_measure(sampler, n, alpha, opts)?.try_map(|c| c.sample_on(grid))
}

/// Finite-support McKean–Vlasov law driven by the quantized Brownian law,
/// every particle started at `xi`.
pub fn mv_quantized_law(
    coeffs: &dyn Coefficients,
    sampler: &BmSampler,
    n: usize,
    alpha: f64,
    xi: &[f64],
    grid: &[f64],
    opts: &QuantOptions,
) -> Result<WeightedPathMeasure> {
    if sampler.dim != coeffs.noise_dim() {
        return Err(Error::DimensionMismatch { expected: coeffs.noise_dim(), got: sampler.dim });
    }
    let drivers = quantized_drivers(sampler, n, alpha, grid, opts)?;
    let initials = vec![xi.to_vec(); drivers.len()];
    particle_solve(coeffs, &drivers, &initials)
}

/// Default size of the initial-condition codebook for `n` path centers.
pub fn default_initial_codebook_size(n: usize, alpha: f64, state_dim: usize) -> usize {
    let m = (n.max(1) as f64).ln().max(0.0).powf((0.5 - alpha) * state_dim as f64).round();
    (m as usize).max(1)
}

/// `count` independent `N(mean, std² I)` points, keyed by `seed`.
pub fn gaussian_points(mean: &[f64], std: f64, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            mean.iter()
                .map(|m| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    m + std * z
                })
                .collect()
        })
        .collect()
}

/// Particle law with a quantized random initial condition: the product of an
/// `m`-point codebook of `initial_samples` and the path codebook.
#[allow(clippy::too_many_arguments)]
pub fn mv_quantized_law_random_init(
    coeffs: &dyn Coefficients,
    sampler: &BmSampler,
    initial_samples: &[Vec<f64>],
    n: usize,
    m: Option<usize>,
    alpha: f64,
    grid: &[f64],
    opts: &QuantOptions,
) -> Result<WeightedPathMeasure> {
    let m = m.unwrap_or_else(|| default_initial_codebook_size(n, alpha, coeffs.state_dim()));
    let paths = n.checked_pow(sampler.dim as u32).unwrap_or(usize::MAX);
    let size = paths.saturating_mul(m);
    if size > opts.support_cap {
        return Err(Error::TooLarge { size, cap: opts.support_cap });
    }
    let (centers, cw) = quantize_point_measure(initial_samples, m, sampler.seed)?;
    let drivers = quantized_drivers(sampler, n, alpha, grid, opts)?;
    let mut atoms = Vec::with_capacity(size);
    let mut weights = Vec::with_capacity(size);
    let mut initials = Vec::with_capacity(size);
    for (c, w0) in centers.iter().zip(&cw) {
        for (a, w1) in drivers.iter() {
            atoms.push(a.clone());
            weights.push(w0 * w1);
            initials.push(c.clone());
        }
    }
    let total: f64 = weights.iter().sum();
    let drivers = WeightedMeasure::new(atoms, weights.iter().map(|w| w / total).collect())?;
    particle_solve(coeffs, &drivers, &initials)
}

/// Outcome of the Picard iteration on the law.
#[derive(Debug, Clone)]
pub struct PicardOutcome {
    pub law: WeightedPathMeasure,
    pub marginals: MeasurePath,
    /// `W_1` gaps (uniform path metric) between consecutive iterates.
    pub gaps: Vec<f64>,
    /// Gaps grew on three consecutive iterations.
    pub diverging: bool,
}

fn solve_all(
    coeffs: &dyn Coefficients,
    mu: &MeasurePath,
    drivers: &WeightedPathMeasure,
    initials: &[Vec<f64>],
) -> Result<(WeightedPathMeasure, MeasurePath)> {
    let solved = drivers
        .atoms()
        .par_iter()
        .zip(initials)
        .map(|(h, xi)| theta_solve_with_stages(coeffs, mu, xi, h))
        .collect::<Result<Vec<_>>>()?;
    let d = coeffs.state_dim();
    let grid = drivers.grid().to_vec();
    let snapshots = (0..grid.len()).map(|t| solved.iter().flat_map(|(p, _)| p.value(t).to_vec()).collect()).collect();
    let stages = (0..grid.len() - 1)
        .map(|t| std::array::from_fn(|s| solved.iter().flat_map(|(_, st)| st[t][s].clone()).collect()))
        .collect();
    let marginals = MeasurePath::new(grid, d, drivers.weights().to_vec(), snapshots)?.with_stages(stages)?;
    let law = WeightedMeasure::new(solved.into_iter().map(|(p, _)| p).collect(), drivers.weights().to_vec())?;
    Ok((law, marginals))
}

/// Fixed-point iteration `μ ↦ law of Θ(μ, ξ, h)` over the driver atoms,
/// started from the drift-free solution. Stops after `iters` steps or once a
/// gap falls below `tol`.
pub fn picard_iterate(
    coeffs: &dyn Coefficients,
    drivers: &WeightedPathMeasure,
    initials: &[Vec<f64>],
    iters: usize,
    tol: f64,
) -> Result<PicardOutcome> {
    if initials.len() != drivers.len() {
        return Err(Error::DimensionMismatch { expected: drivers.len(), got: initials.len() });
    }
    drivers.check_common_grid()?;
    let d = coeffs.state_dim();
    let placeholder = MeasurePath::constant(drivers.grid().to_vec(), d, vec![1.0], vec![0.0; d])?;
    let (mut law, mut marginals) = solve_all(&DriftFree(coeffs), &placeholder, drivers, initials)?;
    let mut gaps = Vec::new();
    let mut rising = 0;
    let mut diverging = false;
    for _ in 0..iters {
        let (next, next_marginals) = solve_all(coeffs, &marginals, drivers, initials)?;
        let gap = wasserstein_paths(&law, &next, 0.5, 1.0, PathMetric::Uniform)?.value;
        if gaps.last().is_some_and(|&g| gap > g) {
            rising += 1;
            diverging |= rising >= 3;
        } else {
            rising = 0;
        }
        gaps.push(gap);
        law = next;
        marginals = next_marginals;
        if gap <= tol || diverging {
            break;
        }
    }
    Ok(PicardOutcome { law, marginals, gaps, diverging })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wavelet::dyadic_grid;

    fn zero_mu(grid: &[f64], d: usize) -> MeasurePath {
        MeasurePath::constant(grid.to_vec(), d, vec![1.0], vec![0.0; d]).unwrap()
    }

    fn exp_decay() -> LinearMeanField {
        LinearMeanField::scalar(0.0, -1.0, 0.0)
    }

    fn exp_error(level: u32) -> f64 {
        let grid = dyadic_grid(1.0, level);
        let h = SampledPath::constant(&[0.0], grid.clone()).unwrap();
        let x = theta_solve(&exp_decay(), &zero_mu(&grid, 1), &[2.0], &h).unwrap();
        grid.iter().enumerate().map(|(k, t)| (x.value(k)[0] - 2.0 * (-t).exp()).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn pure_driver_and_exponential_oracles() {
        let grid = dyadic_grid(1.0, 6);
        let sigma_id = LinearMeanField::new(2, 2, 0.0, 0.0, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let h = SampledPath::from_fn(2, grid.clone(), |t| vec![t.sin(), t * t]).unwrap();
        let x = theta_solve(&sigma_id, &zero_mu(&grid, 2), &[1.0, -1.0], &h).unwrap();
        for k in 0..grid.len() {
            assert!((x.value(k)[0] - 1.0 - h.value(k)[0]).abs() < 1e-13);
            assert!((x.value(k)[1] + 1.0 - h.value(k)[1]).abs() < 1e-13);
        }
        assert!(exp_error(10) < 1e-6);
    }

    #[test]
    fn fourth_order_convergence() {
        for level in [3, 4, 5] {
            let ratio = exp_error(level) / exp_error(level + 1);
            assert!((8.0..32.0).contains(&ratio), "level {level}: ratio {ratio}");
        }
    }

    #[test]
    fn drift_from_a_moving_dirac() {
        let grid = dyadic_grid(1.0, 5);
        let snapshots = grid.iter().map(|t| vec![*t]).collect();
        let mu = MeasurePath::new(grid.clone(), 1, vec![1.0], snapshots).unwrap();
        let coeffs = LinearMeanField::scalar(1.0, 0.0, 0.0);
        let h = SampledPath::constant(&[0.0], grid.clone()).unwrap();
        let x = theta_solve(&coeffs, &mu, &[0.5], &h).unwrap();
        for (k, t) in grid.iter().enumerate() {
            assert!((x.value(k)[0] - 0.5 - t * t / 2.0).abs() < 1e-14);
        }
    }

    #[test]
    fn blow_up_is_reported() {
        let grid = dyadic_grid(1.0, 4);
        let cubic = FnCoefficients {
            dim: 1,
            noise_dim: 1,
            drift: Box::new(|x, _, out| out[0] = x[0].powi(3) * 1e3),
            diffusion: Box::new(|_, out| out[0] = 0.0),
            lipschitz: Lipschitz { drift_state: f64::INFINITY, drift_measure: 0.0, diffusion: 0.0 },
        };
        let h = SampledPath::constant(&[0.0], grid.clone()).unwrap();
        assert!(matches!(theta_solve(&cubic, &zero_mu(&grid, 1), &[10.0], &h), Err(Error::NonFinite { .. })));
    }

    fn random_drivers(n: usize, seed: u64, level: u32) -> WeightedPathMeasure {
        let s = BmSampler::new(1, 1.0, 3, seed).unwrap();
        let grid = dyadic_grid(1.0, level);
        let atoms: Vec<SampledPath> = (0..n as u64).map(|i| s.sample(i).sample_on(&grid).unwrap()).collect();
        let raw: Vec<f64> = (1..=n).map(|k| k as f64).collect();
        let total: f64 = raw.iter().sum();
        WeightedMeasure::new(atoms, raw.iter().map(|w| w / total).collect()).unwrap()
    }

    #[test]
    fn single_particle_self_consistency() {
        let drivers = random_drivers(1, 3, 6);
        let coeffs = LinearMeanField::scalar(1.0, -1.0, 0.7);
        let law = particle_solve(&coeffs, &drivers, &[vec![0.3]]).unwrap();
        let h = &drivers.atoms()[0];
        for k in 0..h.len() {
            assert!((law.atoms()[0].value(k)[0] - 0.3 - 0.7 * h.value(k)[0]).abs() < 1e-13);
        }
    }

    #[test]
    fn deterministic_linear_particles() {
        let drivers = random_drivers(4, 1, 8);
        let a = 0.5;
        let coeffs = LinearMeanField::scalar(a, 0.0, 0.0);
        let law = particle_solve(&coeffs, &drivers, &vec![vec![1.0]; 4]).unwrap();
        for atom in law.atoms() {
            assert!((atom.end()[0] - a.exp()).abs() < 1e-12);
        }
    }

    #[test]
    fn permutation_invariance() {
        let drivers = random_drivers(5, 7, 6);
        let coeffs = Kuramoto { dim: 1, noise_dim: 1, coupling: 0.8, frequency: vec![0.3], sigma: vec![0.5] };
        let initials: Vec<Vec<f64>> = (0..5).map(|k| vec![k as f64 * 0.4]).collect();
        let law = particle_solve(&coeffs, &drivers, &initials).unwrap();
        let perm = [3, 0, 4, 1, 2];
        let pd = WeightedMeasure::new(
            perm.iter().map(|&k| drivers.atoms()[k].clone()).collect(),
            perm.iter().map(|&k| drivers.weights()[k]).collect(),
        )
        .unwrap();
        let pi: Vec<Vec<f64>> = perm.iter().map(|&k| initials[k].clone()).collect();
        let plaw = particle_solve(&coeffs, &pd, &pi).unwrap();
        for (slot, &k) in perm.iter().enumerate() {
            let diff = plaw.atoms()[slot].sub(&law.atoms()[k]).unwrap();
            assert!(diff.values().iter().all(|v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn picard_reaches_the_particle_fixed_point() {
        let drivers = random_drivers(6, 2, 7);
        let coeffs = LinearMeanField::scalar(0.5, 0.0, 0.3);
        let initials = vec![vec![1.0]; 6];
        let direct = particle_solve(&coeffs, &drivers, &initials).unwrap();
        let pic = picard_iterate(&coeffs, &drivers, &initials, 40, 1e-14).unwrap();
        assert!(!pic.diverging);
        assert!(pic.gaps.windows(2).take(5).all(|w| w[1] < w[0]));
        for (a, b) in pic.law.atoms().iter().zip(direct.atoms()) {
            assert!(a.sub(b).unwrap().values().iter().all(|v| v.abs() < 1e-12));
        }
        let free = LinearMeanField::scalar(0.0, 0.0, 0.3);
        let one = picard_iterate(&free, &drivers, &initials, 5, 0.0).unwrap();
        assert_eq!(one.gaps[0], 0.0);
    }

    #[test]
    fn quantized_law_examples() {
        let sampler = BmSampler::new(1, 1.0, 6, 5).unwrap();
        let grid = dyadic_grid(1.0, 8);
        let opts = QuantOptions { level_cap: 3, ..QuantOptions::default() };
        let free = LinearMeanField::scalar(0.0, 0.0, 0.4);
        let law = mv_quantized_law(&free, &sampler, 4, 0.4, &[1.0], &grid, &opts).unwrap();
        let drivers = quantized_drivers(&sampler, 4, 0.4, &grid, &opts).unwrap();
        assert_eq!(law.len(), 4);
        for (x, h) in law.atoms().iter().zip(drivers.atoms()) {
            for k in 0..grid.len() {
                assert!((x.value(k)[0] - 1.0 - 0.4 * h.value(k)[0]).abs() < 1e-13);
            }
        }
        let linear = LinearMeanField::scalar(0.5, 0.0, 0.3);
        let law = mv_quantized_law(&linear, &sampler, 5, 0.4, &[1.0], &grid, &opts).unwrap();
        let mean = law.mean_at(grid.len() - 1)[0];
        assert!((mean - 0.5f64.exp()).abs() < 1e-10);

        let s2 = BmSampler::new(2, 1.0, 6, 5).unwrap();
        let planar = LinearMeanField::new(2, 2, 0.1, 0.0, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(mv_quantized_law(&planar, &s2, 3, 0.4, &[0.0, 0.0], &grid, &opts).unwrap().len(), 9);
    }

    #[test]
    fn random_initial_condition() {
        let sampler = BmSampler::new(1, 1.0, 6, 5).unwrap();
        let grid = dyadic_grid(1.0, 6);
        let opts = QuantOptions { level_cap: 2, ..QuantOptions::default() };
        let still = LinearMeanField::scalar(0.0, 0.0, 0.0);
        let samples: Vec<Vec<f64>> = (0..400).map(|k| vec![if k % 4 == 0 { 2.0 } else { -1.0 }]).collect();
        let law = mv_quantized_law_random_init(&still, &sampler, &samples, 3, Some(2), 0.4, &grid, &opts).unwrap();
        assert_eq!(law.len(), 6);
        let mut at_two = 0.0;
        for (a, w) in law.iter() {
            assert!(a.values().iter().all(|v| *v == a.start()[0]));
            if a.start()[0] == 2.0 {
                at_two += w;
            }
        }
        assert!((at_two - 0.25).abs() < 1e-12);
        let degenerate = vec![vec![1.0]; 50];
        let linear = LinearMeanField::scalar(0.5, 0.0, 0.3);
        let a = mv_quantized_law_random_init(&linear, &sampler, &degenerate, 3, Some(1), 0.4, &grid, &opts).unwrap();
        let b = mv_quantized_law(&linear, &sampler, 3, 0.4, &[1.0], &grid, &opts).unwrap();
        assert_eq!(a, b);
        assert_eq!(default_initial_codebook_size(64, 0.4, 1), 1);
    }

    #[test]
    fn declared_lipschitz_constants_hold_on_samples() {
        let lm = LinearMeanField::scalar(0.5, -1.0, 0.3);
        assert!(lipschitz_diagnostic(&lm, 200, 1).unwrap().within_declared);
        let k = Kuramoto { dim: 2, noise_dim: 1, coupling: 1.2, frequency: vec![], sigma: vec![0.2, 0.1] };
        assert!(lipschitz_diagnostic(&k, 200, 2).unwrap().within_declared);
        let g = GradientInteraction { dim: 1, noise_dim: 1, confinement: 0.5, interaction: 0.7, sigma: vec![0.3] };
        assert!(lipschitz_diagnostic(&g, 200, 3).unwrap().within_declared);
    }

    #[test]
    fn coefficient_registry_round_trip() {
        let text = r#"{"kind":"linear-mean-field","dim":1,"noise_dim":1,"mean_coeff":0.5,"sigma":[0.3]}"#;
        let spec: CoefficientSpec = serde_json::from_str(text).unwrap();
        let c = spec.build().unwrap();
        assert_eq!(c.lipschitz().drift_measure, 0.5);
        let bad = r#"{"kind":"kuramoto","dim":2,"noise_dim":1,"coupling":1.0,"sigma":[0.3]}"#;
        assert!(serde_json::from_str::<CoefficientSpec>(bad).unwrap().build().is_err());
    }
}
