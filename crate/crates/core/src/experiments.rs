//! Rate studies built from the library pieces: enhanced (rough-path)
//! quantization error and the Wasserstein gap of finite-support
//! McKean–Vlasov laws.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::gaussian::BmSampler;
use crate::mckean::{particle_solve, Coefficients};
use crate::measure::WeightedPathMeasure;
use crate::quant::{build_product_codebook, test_set, ProductCodebook, QuantOptions};
use crate::roughpath::{lift_coeff, rho_alpha_levels};
use crate::stats::{lr_moment, mean_se};
use crate::wasserstein::{ground_distance, wasserstein_paths, PathMetric};

fn write_rows<W: Write, T: Serialize>(rows: &[T], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for row in rows {
        wtr.serialize(row)?;
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnhancedRow {
    pub n: usize,
    #[serde(rename = "N")]
    pub level: u32,
    pub rho1: f64,
    pub rho1_se: f64,
    pub rho2: f64,
    pub rho2_se: f64,
    pub rho: f64,
    pub rho_se: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EnhancedTable {
    pub rows: Vec<EnhancedRow>,
}

impl EnhancedTable {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_rows(&self.rows, w)
    }
}

/// `L^r` moments of the level-1 and level-2 parts of `ρ_α` between the lift
/// of a Brownian sample and the lift of its quantization (same Voronoi cell),
/// both lifted exactly and read on the dyadic grid of `grid_level`.
pub fn enhanced_rate(
    sampler: &BmSampler,
    alpha: f64,
    r: f64,
    sizes: &[usize],
    samples: usize,
    grid_level: u32,
    opts: &QuantOptions,
) -> Result<EnhancedTable> {
    if sampler.dim < 2 {
        return domain("enhanced rates need at least two noise components");
    }
    if r < 1.0 || samples < 2 {
        return domain("need r >= 1 and at least two samples");
    }
    let grid = crate::wavelet::dyadic_grid(sampler.horizon, grid_level);
    let tests = test_set(sampler, samples);
    let lifts = tests.par_iter().map(|w| lift_coeff(w, &grid)).collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(sizes.len());
    for &n in sizes {
        let cb = build_product_codebook(sampler, n, alpha, opts)?;
        let parts = tests
            .par_iter()
            .zip(&lifts)
            .map(|(w, lw)| {
                let lq = lift_coeff(&cb.quantize(w)?, &grid)?;
                rho_alpha_levels(lw, &lq, alpha)
            })
            .collect::<Result<Vec<_>>>()?;
        let level1: Vec<f64> = parts.iter().map(|p| p.0).collect();
        let level2: Vec<f64> = parts.iter().map(|p| p.1).collect();
        let total: Vec<f64> = parts.iter().map(|p| p.0.max(p.1)).collect();
        let (rho1, rho1_se) = lr_moment(&level1, r);
        let (rho2, rho2_se) = lr_moment(&level2, r);
        let (rho, rho_se) = lr_moment(&total, r);
        rows.push(EnhancedRow { n, level: cb.level(), rho1, rho1_se, rho2, rho2_se, rho, rho_se, samples });
    }
    Ok(EnhancedTable { rows })
}

/// Particle law driven by a product codebook, every particle started at `xi`.
pub fn codebook_law(coeffs: &dyn Coefficients, cb: &ProductCodebook, xi: &[f64], grid: &[f64], cap: usize) -> Result<WeightedPathMeasure> {
    let drivers = cb.to_measure(cap)?.try_map(|c| c.sample_on(grid))?;
    particle_solve(coeffs, &drivers, &vec![xi.to_vec(); drivers.len()])
}

fn flat_index(idx: &[usize], n: usize) -> usize {
    idx.iter().fold(0, |acc, &i| acc * n + i)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MvRateRow {
    pub n: usize,
    #[serde(rename = "N")]
    pub level: u32,
    /// Exact `W_1` against the reference law.
    pub w1: f64,
    /// Mean distance under the coupling through a common Brownian sample.
    pub coupled: f64,
    pub coupled_se: f64,
    /// First component of the weighted mean at the horizon.
    pub mean_end: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MvRateTable {
    pub reference: usize,
    pub reference_mean_end: f64,
    pub rows: Vec<MvRateRow>,
}

impl MvRateTable {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_rows(&self.rows, w)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MvRateOptions {
    pub metric: PathMetric,
    /// Grid stride used when computing path distances.
    pub stride: usize,
    /// Brownian samples for the coupled estimate.
    pub samples: usize,
}

impl Default for MvRateOptions {
    fn default() -> Self {
        MvRateOptions { metric: PathMetric::Uniform, stride: 1, samples: 500 }
    }
}

/// Gap between the quantized McKean–Vlasov law at each `n` and at `reference`.
#[allow(clippy::too_many_arguments)]
pub fn mv_rate(
    coeffs: &dyn Coefficients,
    sampler: &BmSampler,
    xi: &[f64],
    alpha: f64,
    sizes: &[usize],
    reference: usize,
    grid: &[f64],
    quant: &QuantOptions,
    opts: &MvRateOptions,
) -> Result<MvRateTable> {
    if opts.samples < 2 {
        return domain("need at least two coupling samples");
    }
    let coarse = |law: &WeightedPathMeasure| law.try_map(|p| p.subsample(opts.stride));
    let ref_cb = build_product_codebook(sampler, reference, alpha, quant)?;
    let ref_law = codebook_law(coeffs, &ref_cb, xi, grid, quant.support_cap)?;
    let ref_coarse = coarse(&ref_law)?;
    let tests = test_set(sampler, opts.samples);
    let ref_cells = tests.par_iter().map(|w| Ok(flat_index(&ref_cb.assign(w)?, reference))).collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(sizes.len());
    for &n in sizes {
        let cb = build_product_codebook(sampler, n, alpha, quant)?;
        let law = codebook_law(coeffs, &cb, xi, grid, quant.support_cap)?;
        let law_coarse = coarse(&law)?;
        let w1 = wasserstein_paths(&law_coarse, &ref_coarse, alpha, 1.0, opts.metric)?.value;
        let coupled = tests
            .par_iter()
            .zip(&ref_cells)
            .map(|(w, &k)| {
                let j = flat_index(&cb.assign(w)?, n);
                ground_distance(&law_coarse.atoms()[j], &ref_coarse.atoms()[k], alpha, opts.metric)
            })
            .collect::<Result<Vec<_>>>()?;
        let (mean, se) = mean_se(&coupled);
        let mean_end = law.mean_at(grid.len() - 1)[0];
        rows.push(MvRateRow { n, level: cb.level(), w1, coupled: mean, coupled_se: se, mean_end, samples: opts.samples });
    }
    Ok(MvRateTable { reference, reference_mean_end: ref_law.mean_at(grid.len() - 1)[0], rows })
}
