//! Brownian motion in Schauder coordinates: seeded sampling, truncation,
//! Monte Carlo truncation-rate tables and the truncation-level rule.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::stats::lr_moment;
use crate::wavelet::{CoeffPath, DyadicIndex};

pub(crate) fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generator for a single keyed stream; identical keys give identical streams.
pub(crate) fn keyed_rng(seed: u64, a: u64, b: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix(seed ^ splitmix(a ^ splitmix(b.wrapping_add(0x5151)))))
}

/// Seeded source of Brownian paths in Schauder coordinates.
///
/// Sample `i`, component `j` is drawn from its own stream, filled in the
/// dense `(p, m)` order, so coefficients at a given index never depend on the
/// truncation level they are requested at.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BmSampler {
    pub dim: usize,
    pub horizon: f64,
    pub max_level: u32,
    pub seed: u64,
}

impl BmSampler {
    pub fn new(dim: usize, horizon: f64, max_level: u32, seed: u64) -> Result<Self> {
        if dim == 0 || !(horizon > 0.0) {
            return domain("sampler needs positive dimension and horizon");
        }
        if max_level > 24 {
            return domain(format!("max level {max_level} is too large to materialize"));
        }
        Ok(BmSampler { dim, horizon, max_level, seed })
    }

    /// Independent sampler for another purpose (pool, test set, ...).
    pub fn fork(&self, stream: u64) -> BmSampler {
        BmSampler { seed: splitmix(self.seed ^ splitmix(stream.wrapping_mul(0xA24B_AED4_963E_E407))), ..*self }
    }

    pub fn with_max_level(&self, max_level: u32) -> BmSampler {
        BmSampler { max_level, ..*self }
    }

    pub fn with_dim(&self, dim: usize) -> BmSampler {
        BmSampler { dim, ..*self }
    }

    /// Coefficients of component `component` of sample `index`, up to `level`.
    pub fn component_coeffs(&self, index: u64, component: usize, level: u32) -> Vec<f64> {
        let mut rng = keyed_rng(self.seed, index, component as u64);
        (0..DyadicIndex::count(level)).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    /// Scalar sample of one component at the given level.
    pub fn sample_component(&self, index: u64, component: usize, level: u32) -> CoeffPath {
        CoeffPath::from_dense(1, self.horizon, level, self.component_coeffs(index, component, level))
            .expect("dense layout matches level")
    }

    /// Sample `index` at `max_level`.
    pub fn sample(&self, index: u64) -> CoeffPath {
        self.sample_at(index, self.max_level)
    }

    pub fn sample_at(&self, index: u64, level: u32) -> CoeffPath {
        let n = DyadicIndex::count(level);
        let mut coeffs = vec![0.0; n * self.dim];
        for j in 0..self.dim {
            for (i, z) in self.component_coeffs(index, j, level).into_iter().enumerate() {
                coeffs[i * self.dim + j] = z;
            }
        }
        CoeffPath::from_dense(self.dim, self.horizon, level, coeffs).expect("dense layout matches level")
    }
}

/// The first path of the sampler's stream.
pub fn sample_bm(sampler: &BmSampler) -> CoeffPath {
    sampler.sample(0)
}

/// `W^N`: keep levels `0..=level`.
pub fn truncate(c: &CoeffPath, level: u32) -> Result<CoeffPath> {
    c.truncate(level)
}

/// Hölder norm of the coefficients strictly above `level`.
pub fn tail_norm(c: &CoeffPath, level: u32, alpha: f64) -> f64 {
    c.level_sups(alpha).into_iter().skip(level as usize + 1).fold(0.0, f64::max)
}

/// One line of a Monte Carlo rate table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub level: Option<u32>,
    pub size: Option<usize>,
    pub error: f64,
    pub stderr: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RateTable {
    pub rows: Vec<RateRow>,
}

impl RateTable {
    pub fn errors(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.error).collect()
    }

    /// CSV with columns `N,n,error,stderr,samples`; absent fields are left blank.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["N", "n", "error", "stderr", "samples"])?;
        for r in &self.rows {
            wtr.write_record([
                r.level.map(|v| v.to_string()).unwrap_or_default(),
                r.size.map(|v| v.to_string()).unwrap_or_default(),
                r.error.to_string(),
                r.stderr.to_string(),
                r.samples.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Monte Carlo estimate of `E[||W - W^N||_alpha^r]^(1/r)` for each level.
pub fn truncation_rate(sampler: &BmSampler, alpha: f64, r: f64, levels: &[u32], samples: usize) -> Result<RateTable> {
    if r < 1.0 {
        return domain("moment order must be at least 1");
    }
    if samples < 2 {
        return domain("need at least two samples");
    }
    if let Some(&bad) = levels.iter().find(|&&n| n > sampler.max_level) {
        return Err(Error::Domain(format!("level {bad} exceeds sampler max level {}", sampler.max_level)));
    }
    let tails: Vec<Vec<f64>> = (0..samples as u64)
        .into_par_iter()
        .map(|i| {
            let sups = sampler.sample(i).level_sups(alpha);
            levels.iter().map(|&n| sups.iter().skip(n as usize + 1).fold(0.0f64, |a, &b| a.max(b))).collect()
        })
        .collect();
    let rows = levels
        .iter()
        .enumerate()
        .map(|(k, &n)| {
            let column: Vec<f64> = tails.iter().map(|t| t[k]).collect();
            let (error, stderr) = lr_moment(&column, r);
            RateRow { level: Some(n), size: None, error, stderr, samples }
        })
        .collect();
    Ok(RateTable { rows })
}

fn halley(x: f64, mut w: f64) -> f64 {
    for _ in 0..100 {
        let ew = w.exp();
        let f = w * ew - x;
        if f == 0.0 {
            break;
        }
        let wp1 = w + 1.0;
        let denom = ew * wp1 - (w + 2.0) * f / (2.0 * wp1);
        let step = f / denom;
        if !step.is_finite() {
            break;
        }
        w -= step;
        if step.abs() <= 1e-15 * (1.0 + w.abs()) {
            break;
        }
    }
    w
}

const INV_E: f64 = 0.367_879_441_171_442_3;

/// Principal branch of the Lambert W function.
pub fn lambert_w0(x: f64) -> Result<f64> {
    if !(x >= -INV_E) || !x.is_finite() {
        return domain(format!("lambert_w0 undefined at {x}"));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    let guess = if x < -0.25 {
        let p = (2.0 * (std::f64::consts::E * x + 1.0)).max(0.0).sqrt();
        -1.0 + p - p * p / 3.0
    } else if x < 3.0 {
        x.ln_1p()
    } else {
        let l = x.ln();
        l - l.ln()
    };
    Ok(halley(x, guess))
}

/// Lower real branch `W_{-1}` on `[-1/e, 0)`.
pub fn lambert_wm1(x: f64) -> Result<f64> {
    if !(-INV_E..0.0).contains(&x) {
        return domain(format!("lambert_wm1 undefined at {x}"));
    }
    let guess = if x < -0.25 {
        let p = (2.0 * (std::f64::consts::E * x + 1.0)).max(0.0).sqrt();
        -1.0 - p - p * p / 3.0
    } else {
        let l = (-x).ln();
        l - (-l).ln()
    };
    Ok(halley(x, guess))
}

fn balance(level: f64, alpha: f64) -> f64 {
    level.sqrt() * ((alpha - 0.5) * level).exp2()
}

/// Truncation level that balances truncation and quantization error for a
/// codebook of size `n`: the smallest `N >= 1` on the decreasing branch of
/// `sqrt(N) 2^((alpha-1/2) N)` with value at most `log(n)^(alpha-1/2)`.
pub fn truncation_level_for(n: usize, alpha: f64) -> Result<u32> {
    if n < 2 {
        return domain("codebook size must be at least 2");
    }
    if !(alpha > 0.0 && alpha < 0.5) {
        return domain(format!("alpha {alpha} outside (0, 1/2)"));
    }
    let target = (n as f64).ln().powf(alpha - 0.5);
    let peak = 1.0 / (2.0 * (0.5 - alpha) * std::f64::consts::LN_2);
    let mut level = (peak.ceil() as u32).max(1);
    while balance(level as f64, alpha) > target {
        level += 1;
        if level > 100_000 {
            return domain("truncation level scan did not terminate");
        }
    }
    Ok(level)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn sampling_is_deterministic_and_prefix_stable() {
        let s = BmSampler::new(2, 1.0, 6, 42).unwrap();
        assert_eq!(sample_bm(&s), sample_bm(&s));
        assert_ne!(s.sample(0), s.sample(1));
        let coarse = s.with_max_level(3).sample(5);
        assert_eq!(s.sample(5).truncate(3).unwrap(), coarse);
        assert_ne!(s.fork(1).sample(0), s.sample(0));
    }

    #[test]
    fn terminal_variance_is_horizon() {
        let s = BmSampler::new(1, 1.0, 10, 7).unwrap();
        let m = 10_000;
        let xs: Vec<f64> = (0..m).map(|i| s.sample(i).synthesize(1.0).unwrap()[0]).collect();
        let sq: Vec<f64> = xs.iter().map(|x| x * x).collect();
        let (mean, se) = crate::stats::mean_se(&sq);
        assert!((mean - 1.0).abs() < 3.0 * se, "var {mean} se {se}");

        let s2 = BmSampler::new(2, 1.0, 4, 9).unwrap();
        let prods: Vec<f64> = (0..m)
            .map(|i| {
                let v = s2.sample(i).synthesize(0.7).unwrap();
                v[0] * v[1]
            })
            .collect();
        let (cov, se) = crate::stats::mean_se(&prods);
        assert!(cov.abs() < 3.0 * se, "cov {cov} se {se}");
    }

    #[test]
    fn coefficient_moments() {
        let s = BmSampler::new(1, 1.0, 4, 3).unwrap();
        let m = 10_000;
        for &(p, q) in &[(0u32, 0u32), (0, 1), (2, 3), (4, 16)] {
            let i = DyadicIndex::new(p, q).unwrap();
            let xs: Vec<f64> = (0..m).map(|k| s.sample(k).get(i)[0]).collect();
            let (mean, se) = crate::stats::mean_se(&xs);
            assert!(mean.abs() < 4.0 * se);
            let sq: Vec<f64> = xs.iter().map(|x| x * x).collect();
            let (m2, se2) = crate::stats::mean_se(&sq);
            assert!((m2 - 1.0).abs() < 4.0 * se2);
        }
    }

    #[test]
    fn truncation_examples() {
        let s = BmSampler::new(1, 1.0, 5, 1).unwrap();
        let c = s.sample(0);
        assert_eq!(truncate(&c, 5).unwrap(), c);
        let t0 = truncate(&c, 0).unwrap();
        assert_eq!(t0.num_indices(), 2);
        assert_eq!(t0.as_slice(), &c.as_slice()[..2]);
        for n in 0..=5 {
            assert!(truncate(&c, n).unwrap().holder_norm(0.4) <= c.holder_norm(0.4));
        }
        assert!(truncate(&c, 6).is_err());
    }

    #[test]
    fn tail_norm_is_monotone_and_vanishes_at_max_level() {
        let s = BmSampler::new(2, 1.0, 8, 11).unwrap();
        for i in 0..20 {
            let c = s.sample(i);
            assert_eq!(tail_norm(&c, 8, 0.4), 0.0);
            let tails: Vec<f64> = (0..=8).map(|n| tail_norm(&c, n, 0.4)).collect();
            assert!(tails.windows(2).all(|w| w[1] <= w[0]));
            let diff = c.sub(&c.truncate(3).unwrap()).unwrap();
            assert_eq!(diff.holder_norm(0.4), tails[3]);
        }
    }

    #[test]
    fn truncation_rate_decreases() {
        let s = BmSampler::new(1, 1.0, 12, 5).unwrap();
        let levels: Vec<u32> = (2..=9).chain([12]).collect();
        let table = truncation_rate(&s, 0.4, 2.0, &levels, 400).unwrap();
        let e = table.errors();
        assert!(e[..8].windows(2).all(|w| w[1] < w[0]), "{e:?}");
        assert_eq!(*e.last().unwrap(), 0.0);
        let mut buf = Vec::new();
        table.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("N,n,error,stderr,samples\n2,,"));
        assert!(truncation_rate(&s, 0.4, 2.0, &[13], 10).is_err());
    }

    fn bisect_w(x: f64) -> f64 {
        let (mut lo, mut hi) = (0.0f64, 2.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid * mid.exp() < x {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn lambert_examples() {
        assert_eq!(lambert_w0(0.0).unwrap(), 0.0);
        assert_abs_diff_eq!(lambert_w0(std::f64::consts::E).unwrap(), 1.0, epsilon = 1e-14);
        let omega = bisect_w(1.0);
        assert_abs_diff_eq!(omega, 0.567_143_29, epsilon = 1e-8);
        assert_abs_diff_eq!(lambert_w0(1.0).unwrap(), omega, epsilon = 1e-14);
        assert!(lambert_w0(-0.5).is_err());
        assert_abs_diff_eq!(lambert_w0(-INV_E).unwrap(), -1.0, epsilon = 1e-6);
        for &x in &[-0.36, -0.2, -1e-3, 1e-6, 0.5, 3.0, 10.0, 1e3, 1e8] {
            let w = lambert_w0(x).unwrap();
            assert!((w * w.exp() - x).abs() <= 1e-12 * x.abs().max(1.0), "x = {x}");
        }
        for &x in &[-0.36, -0.2, -0.01, -1e-6] {
            let w = lambert_wm1(x).unwrap();
            assert!(w <= -1.0);
            assert!((w * w.exp() - x).abs() <= 1e-12, "x = {x}");
        }
    }

    #[test]
    fn truncation_level_rule() {
        let alpha = 0.4;
        let c = (2.0 * alpha - 1.0) * std::f64::consts::LN_2;
        let mut prev = 0;
        for n in [2usize, 3, 4, 8, 16, 64, 256, 1 << 12, 1 << 20] {
            let level = truncation_level_for(n, alpha).unwrap();
            let target = (n as f64).ln().powf(alpha - 0.5);
            assert!(balance(level as f64, alpha) <= target);
            assert!(balance(level as f64 - 1.0, alpha) > target);
            assert!(level >= prev);
            prev = level;
            // the large-N root of the balance equation through the lower Lambert branch
            let root = lambert_wm1(c * (n as f64).ln().powf(2.0 * alpha - 1.0)).unwrap() / c;
            assert_eq!(level, root.ceil() as u32, "n = {n}");
        }
        assert_eq!(truncation_level_for(16, 0.4).unwrap(), 25);
        assert!(truncation_level_for(1, 0.4).is_err());
    }
}
