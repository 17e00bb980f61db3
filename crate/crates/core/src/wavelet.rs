//! Haar and Schauder functions on `[0, T]`, the coefficient representation of
//! continuous paths, and the sequence-space Hölder norm.
//!
//! Coefficients are indexed by dyadic pairs `(p, m)` with `(0, 0)` the linear
//! mode and `1 <= m <= 2^p` otherwise. They are stored densely in the order
//! `(0,0), (0,1), (1,1), (1,2), (2,1), ...`, so that a path truncated at level
//! `N` is a prefix of length `2^(N+1)` of any finer path.
//!
//! The `(0, 0)` mode is normalised by `1/sqrt(T)` so that the Haar system is
//! orthonormal in `L^2([0, T])` for every horizon; at `T = 1` this is the
//! usual `H_00 = 1`, `G_00(t) = t`.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

/// A pair `(p, m)` in the dyadic index set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DyadicIndex {
    pub level: u32,
    pub pos: u32,
}

impl DyadicIndex {
    pub const ROOT: DyadicIndex = DyadicIndex { level: 0, pos: 0 };

    pub fn new(level: u32, pos: u32) -> Result<Self> {
        let valid = (level == 0 && pos == 0) || (pos >= 1 && level < 63 && u64::from(pos) <= 1u64 << level);
        if !valid {
            return domain(format!("({level}, {pos}) is not a dyadic index"));
        }
        Ok(DyadicIndex { level, pos })
    }

    /// Position in the dense storage order.
    pub fn flat(self) -> usize {
        if self.pos == 0 {
            0
        } else {
            (1usize << self.level) + self.pos as usize - 1
        }
    }

    pub fn from_flat(i: usize) -> Self {
        if i == 0 {
            return Self::ROOT;
        }
        let level = usize::BITS - 1 - i.leading_zeros();
        DyadicIndex { level, pos: (i - (1usize << level) + 1) as u32 }
    }

    /// Number of indices with level at most `level`.
    pub fn count(level: u32) -> usize {
        1usize << (level + 1)
    }

    /// Left end, midpoint and right end of the support of `H_pm`.
    pub fn dyadic_points(self, horizon: f64) -> (f64, f64, f64) {
        let scale = horizon / (1u64 << self.level) as f64;
        let m = self.pos as f64;
        ((m - 1.0) * scale, (m - 0.5) * scale, m * scale)
    }

    fn amplitude(self, horizon: f64) -> f64 {
        ((1u64 << self.level) as f64 / horizon).sqrt()
    }
}

/// Level of the coefficient stored at dense position `i`.
pub fn level_of_flat(i: usize) -> u32 {
    if i < 2 {
        0
    } else {
        usize::BITS - 1 - i.leading_zeros()
    }
}

fn check_time(t: f64, horizon: f64) -> Result<()> {
    if !(horizon > 0.0) || !(0.0..=horizon).contains(&t) {
        return domain(format!("time {t} outside [0, {horizon}]"));
    }
    Ok(())
}

/// Haar function `H_pm(t)`.
pub fn haar_eval(idx: DyadicIndex, t: f64, horizon: f64) -> Result<f64> {
    check_time(t, horizon)?;
    if idx.pos == 0 {
        return Ok(1.0 / horizon.sqrt());
    }
    let (t0, t1, t2) = idx.dyadic_points(horizon);
    let a = idx.amplitude(horizon);
    Ok(if t >= t0 && t < t1 {
        a
    } else if t >= t1 && t < t2 {
        -a
    } else {
        0.0
    })
}

/// Schauder (tent) function `G_pm(t) = int_0^t H_pm`.
pub fn schauder_eval(idx: DyadicIndex, t: f64, horizon: f64) -> Result<f64> {
    check_time(t, horizon)?;
    Ok(schauder_unchecked(idx, t, horizon))
}

fn schauder_unchecked(idx: DyadicIndex, t: f64, horizon: f64) -> f64 {
    if idx.pos == 0 {
        return t / horizon.sqrt();
    }
    let (t0, t1, t2) = idx.dyadic_points(horizon);
    let a = idx.amplitude(horizon);
    if t <= t0 || t >= t2 {
        0.0
    } else if t <= t1 {
        a * (t - t0)
    } else {
        a * (t2 - t)
    }
}

/// Per-level weights `2^((alpha - 1/2) p)` for `p = 0..=level`.
pub fn level_weights(alpha: f64, level: u32) -> Vec<f64> {
    (0..=level).map(|p| (alpha - 0.5) * p as f64).map(f64::exp2).collect()
}

/// A path given by its Schauder coefficients up to a maximal level.
#[derive(Debug, Clone, PartialEq)]
pub struct CoeffPath {
    dim: usize,
    horizon: f64,
    level: u32,
    coeffs: Vec<f64>,
}

impl CoeffPath {
    pub fn zeros(dim: usize, horizon: f64, level: u32) -> Self {
        assert!(dim > 0 && horizon > 0.0, "dimension and horizon must be positive");
        CoeffPath { dim, horizon, level, coeffs: vec![0.0; DyadicIndex::count(level) * dim] }
    }

    /// Builds a path from dense coefficients laid out as `[index][component]`.
    pub fn from_dense(dim: usize, horizon: f64, level: u32, coeffs: Vec<f64>) -> Result<Self> {
        if dim == 0 || !(horizon > 0.0) {
            return domain("dimension and horizon must be positive");
        }
        let expected = DyadicIndex::count(level) * dim;
        if coeffs.len() != expected {
            return Err(Error::DimensionMismatch { expected, got: coeffs.len() });
        }
        Ok(CoeffPath { dim, horizon, level, coeffs })
    }

    /// Builds a path from sparse `(index, vector)` entries.
    pub fn from_entries(
        dim: usize,
        horizon: f64,
        level: u32,
        entries: impl IntoIterator<Item = (DyadicIndex, Vec<f64>)>,
    ) -> Result<Self> {
        let mut path = CoeffPath::zeros(dim, horizon, level);
        for (idx, v) in entries {
            path.set(idx, &v)?;
        }
        Ok(path)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn num_indices(&self) -> usize {
        DyadicIndex::count(self.level)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn into_dense(self) -> Vec<f64> {
        self.coeffs
    }

    /// Coefficient vector at `idx`; zero above the stored level.
    pub fn get(&self, idx: DyadicIndex) -> Vec<f64> {
        if idx.level > self.level {
            return vec![0.0; self.dim];
        }
        self.get_flat(idx.flat()).to_vec()
    }

    pub fn get_flat(&self, i: usize) -> &[f64] {
        &self.coeffs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn set(&mut self, idx: DyadicIndex, value: &[f64]) -> Result<()> {
        if idx.level > self.level {
            return domain(format!("index {idx:?} above stored level {}", self.level));
        }
        if value.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: value.len() });
        }
        let i = idx.flat();
        self.coeffs[i * self.dim..(i + 1) * self.dim].copy_from_slice(value);
        Ok(())
    }

    /// Iterates `(index, coefficient vector)` over all stored indices.
    pub fn entries(&self) -> impl Iterator<Item = (DyadicIndex, &[f64])> + '_ {
        self.coeffs.chunks(self.dim).enumerate().map(|(i, c)| (DyadicIndex::from_flat(i), c))
    }

    /// Scalar path of component `j`.
    pub fn component(&self, j: usize) -> CoeffPath {
        assert!(j < self.dim);
        let coeffs = self.coeffs.iter().skip(j).step_by(self.dim).copied().collect();
        CoeffPath { dim: 1, horizon: self.horizon, level: self.level, coeffs }
    }

    /// Stacks scalar paths into one `d'`-dimensional path.
    pub fn from_components(parts: &[&CoeffPath]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::Domain("no components".into()))?;
        let (horizon, level) = (first.horizon, first.level);
        if parts.iter().any(|c| c.dim != 1 || c.level != level || c.horizon != horizon) {
            return domain("components must be scalar paths with a common level and horizon");
        }
        let dim = parts.len();
        let n = DyadicIndex::count(level);
        let mut coeffs = vec![0.0; n * dim];
        for (j, c) in parts.iter().enumerate() {
            for i in 0..n {
                coeffs[i * dim + j] = c.coeffs[i];
            }
        }
        Ok(CoeffPath { dim, horizon, level, coeffs })
    }

    /// Drops every coefficient above `level`.
    pub fn truncate(&self, level: u32) -> Result<CoeffPath> {
        if level > self.level {
            return domain(format!("cannot truncate level {} path at level {level}", self.level));
        }
        let len = DyadicIndex::count(level) * self.dim;
        Ok(CoeffPath { dim: self.dim, horizon: self.horizon, level, coeffs: self.coeffs[..len].to_vec() })
    }

    /// Re-embeds the path at a higher level, padding with zeros.
    pub fn extend_to(&self, level: u32) -> CoeffPath {
        if level <= self.level {
            return self.clone();
        }
        let mut out = CoeffPath::zeros(self.dim, self.horizon, level);
        out.coeffs[..self.coeffs.len()].copy_from_slice(&self.coeffs);
        out
    }

    fn check_compatible(&self, other: &CoeffPath) -> Result<()> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: other.dim });
        }
        if self.horizon != other.horizon {
            return domain("paths live on different horizons");
        }
        Ok(())
    }

    /// `a * self + b * other`, at the larger of the two levels.
    pub fn linear_combination(&self, a: f64, other: &CoeffPath, b: f64) -> Result<CoeffPath> {
        self.check_compatible(other)?;
        let level = self.level.max(other.level);
        let mut out = CoeffPath::zeros(self.dim, self.horizon, level);
        for (o, x) in out.coeffs.iter_mut().zip(&self.coeffs) {
            *o += a * x;
        }
        for (o, y) in out.coeffs.iter_mut().zip(&other.coeffs) {
            *o += b * y;
        }
        Ok(out)
    }

    pub fn sub(&self, other: &CoeffPath) -> Result<CoeffPath> {
        self.linear_combination(1.0, other, -1.0)
    }

    pub fn scale(&self, a: f64) -> CoeffPath {
        let mut out = self.clone();
        out.coeffs.iter_mut().for_each(|c| *c *= a);
        out
    }

    /// Evaluates the path at time `t`.
    pub fn synthesize(&self, t: f64) -> Result<Vec<f64>> {
        check_time(t, self.horizon)?;
        let mut out = vec![0.0; self.dim];
        self.synthesize_into(t, &mut out);
        Ok(out)
    }

    fn synthesize_into(&self, t: f64, out: &mut [f64]) {
        let d = self.dim;
        let g00 = schauder_unchecked(DyadicIndex::ROOT, t, self.horizon);
        for (o, c) in out.iter_mut().zip(&self.coeffs[..d]) {
            *o = c * g00;
        }
        for p in 0..=self.level {
            let cells = 1u64 << p;
            let m = ((t / self.horizon * cells as f64).floor() as u64 + 1).min(cells);
            let idx = DyadicIndex { level: p, pos: m as u32 };
            let g = schauder_unchecked(idx, t, self.horizon);
            if g != 0.0 {
                let i = idx.flat();
                for (o, c) in out.iter_mut().zip(&self.coeffs[i * d..(i + 1) * d]) {
                    *o += c * g;
                }
            }
        }
    }

    /// Samples the path on `grid`, which must lie inside `[0, T]`.
    pub fn sample_on(&self, grid: &[f64]) -> Result<SampledPath> {
        let mut values = vec![0.0; grid.len() * self.dim];
        for (k, &t) in grid.iter().enumerate() {
            check_time(t, self.horizon)?;
            self.synthesize_into(t, &mut values[k * self.dim..(k + 1) * self.dim]);
        }
        SampledPath::new(self.dim, grid.to_vec(), values)
    }

    /// Sequence-space Hölder norm `sup 2^((alpha - 1/2) p) |psi_pm|`.
    pub fn holder_norm(&self, alpha: f64) -> f64 {
        let weights = level_weights(alpha, self.level);
        self.coeffs
            .chunks(self.dim)
            .enumerate()
            .map(|(i, c)| weights[level_of_flat(i) as usize] * euclid(c))
            .fold(0.0, f64::max)
    }

    /// Largest weighted coefficient norm on each level `0..=level`.
    pub fn level_sups(&self, alpha: f64) -> Vec<f64> {
        let weights = level_weights(alpha, self.level);
        let mut sups = vec![0.0f64; self.level as usize + 1];
        for (i, c) in self.coeffs.chunks(self.dim).enumerate() {
            let p = level_of_flat(i) as usize;
            sups[p] = sups[p].max(weights[p] * euclid(c));
        }
        sups
    }
}

pub(crate) fn euclid(v: &[f64]) -> f64 {
    if v.len() == 1 {
        v[0].abs()
    } else {
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

#[derive(Serialize, Deserialize)]
struct CoeffPathRepr {
    dim: usize,
    horizon: f64,
    level: u32,
    coeffs: Vec<(u32, u32, Vec<f64>)>,
}

impl Serialize for CoeffPath {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let coeffs = self
            .entries()
            .filter(|(_, v)| v.iter().any(|x| *x != 0.0))
            .map(|(idx, v)| (idx.level, idx.pos, v.to_vec()))
            .collect();
        CoeffPathRepr { dim: self.dim, horizon: self.horizon, level: self.level, coeffs }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for CoeffPath {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = CoeffPathRepr::deserialize(d)?;
        let entries = repr
            .coeffs
            .into_iter()
            .map(|(p, m, v)| DyadicIndex::new(p, m).map(|idx| (idx, v)))
            .collect::<Result<Vec<_>>>()
            .map_err(serde::de::Error::custom)?;
        if repr.dim == 0 || !(repr.horizon > 0.0) {
            return Err(serde::de::Error::custom("dimension and horizon must be positive"));
        }
        CoeffPath::from_entries(repr.dim, repr.horizon, repr.level, entries).map_err(serde::de::Error::custom)
    }
}

/// Equally spaced dyadic grid with `2^level` intervals on `[0, horizon]`.
pub fn dyadic_grid(horizon: f64, level: u32) -> Vec<f64> {
    let k = 1u64 << level;
    (0..=k).map(|i| horizon * i as f64 / k as f64).collect()
}

/// A path sampled on a time grid and interpreted as linear between grid points.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledPath {
    dim: usize,
    grid: Vec<f64>,
    values: Vec<f64>,
}

impl SampledPath {
    /// `values` is laid out as `[time][component]`.
    pub fn new(dim: usize, grid: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return domain("path dimension must be positive");
        }
        if grid.len() < 2 || grid[0] != 0.0 {
            return domain("grid must start at 0 and contain at least two points");
        }
        if grid.windows(2).any(|w| !(w[1] > w[0])) {
            return domain("grid must be strictly increasing");
        }
        if values.len() != grid.len() * dim {
            return Err(Error::DimensionMismatch { expected: grid.len() * dim, got: values.len() });
        }
        Ok(SampledPath { dim, grid, values })
    }

    /// Samples a closure on a grid.
    pub fn from_fn(dim: usize, grid: Vec<f64>, f: impl Fn(f64) -> Vec<f64>) -> Result<Self> {
        let values = grid.iter().flat_map(|&t| f(t)).collect();
        SampledPath::new(dim, grid, values)
    }

    pub fn constant(value: &[f64], grid: Vec<f64>) -> Result<Self> {
        let values = grid.iter().flat_map(|_| value.iter().copied()).collect();
        SampledPath::new(value.len(), grid, values)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn horizon(&self) -> f64 {
        *self.grid.last().expect("grid is non-empty")
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, k: usize) -> &[f64] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }

    pub fn start(&self) -> &[f64] {
        self.value(0)
    }

    pub fn end(&self) -> &[f64] {
        self.value(self.grid.len() - 1)
    }

    /// Linear interpolation at `t`.
    pub fn value_at(&self, t: f64) -> Result<Vec<f64>> {
        check_time(t, self.horizon())?;
        let k = match self.grid.binary_search_by(|g| g.total_cmp(&t)) {
            Ok(k) => return Ok(self.value(k).to_vec()),
            Err(k) => k,
        };
        let (t0, t1) = (self.grid[k - 1], self.grid[k]);
        let w = (t - t0) / (t1 - t0);
        Ok(self.value(k - 1).iter().zip(self.value(k)).map(|(a, b)| a + w * (b - a)).collect())
    }

    pub fn same_grid(&self, other: &SampledPath) -> bool {
        self.grid == other.grid
    }

    /// Pointwise `self - other` on a common grid.
    pub fn sub(&self, other: &SampledPath) -> Result<SampledPath> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: other.dim });
        }
        if !self.same_grid(other) {
            return domain("paths are sampled on different grids");
        }
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect();
        SampledPath::new(self.dim, self.grid.clone(), values)
    }

    /// Every `stride`-th grid point, always keeping the last one.
    pub fn subsample(&self, stride: usize) -> Result<SampledPath> {
        if stride == 0 {
            return domain("stride must be positive");
        }
        let last = self.len() - 1;
        let keep: Vec<usize> = (0..last).step_by(stride).chain(std::iter::once(last)).collect();
        let grid = keep.iter().map(|&k| self.grid[k]).collect();
        let values = keep.iter().flat_map(|&k| self.value(k).iter().copied()).collect();
        SampledPath::new(self.dim, grid, values)
    }

    pub fn map_values(&self, f: impl Fn(&[f64]) -> Vec<f64>) -> Result<SampledPath> {
        let mut values = Vec::with_capacity(self.values.len());
        let mut dim = None;
        for k in 0..self.len() {
            let v = f(self.value(k));
            dim.get_or_insert(v.len());
            values.extend(v);
        }
        SampledPath::new(dim.unwrap_or(self.dim), self.grid.clone(), values)
    }

    /// Schauder coefficients up to `level`, reading the path by linear
    /// interpolation at the dyadic points.
    pub fn analyze(&self, level: u32) -> Result<CoeffPath> {
        let horizon = self.horizon();
        let mut out = CoeffPath::zeros(self.dim, horizon, level);
        let start = self.start().to_vec();
        let end = self.end().to_vec();
        let root: Vec<f64> = end.iter().zip(&start).map(|(b, a)| (b - a) / horizon.sqrt()).collect();
        out.set(DyadicIndex::ROOT, &root)?;
        for i in 1..DyadicIndex::count(level) {
            let idx = DyadicIndex::from_flat(i);
            let (t0, t1, t2) = idx.dyadic_points(horizon);
            let a = idx.amplitude(horizon);
            let (x0, x1, x2) = (self.value_at(t0)?, self.value_at(t1)?, self.value_at(t2)?);
            let c: Vec<f64> = (0..self.dim).map(|j| a * (2.0 * x1[j] - x0[j] - x2[j])).collect();
            out.set(idx, &c)?;
        }
        Ok(out)
    }

    /// Two-point Hölder quotient `sup |x_t - x_s| / |t - s|^alpha` over grid pairs.
    pub fn holder_quotient(&self, alpha: f64) -> f64 {
        let n = self.len();
        let mut best = 0.0f64;
        let mut diff = vec![0.0; self.dim];
        for i in 0..n {
            for j in i + 1..n {
                for (k, d) in diff.iter_mut().enumerate() {
                    *d = self.value(j)[k] - self.value(i)[k];
                }
                best = best.max(euclid(&diff) / (self.grid[j] - self.grid[i]).powf(alpha));
            }
        }
        best
    }

    /// Writes `t,x1,...,xd` rows with a header line.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.dim).map(|j| format!("x{j}")));
        wtr.write_record(&header)?;
        for k in 0..self.len() {
            let mut row = vec![self.grid[k].to_string()];
            row.extend(self.value(k).iter().map(|v| v.to_string()));
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Reads a path written by [`SampledPath::write_csv`]. Lines starting with
    /// `#` are ignored.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r);
        let dim = rdr.headers()?.len().saturating_sub(1);
        let mut grid = Vec::new();
        let mut values = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let mut fields = rec.iter().map(|s| s.trim().parse::<f64>());
            let t = fields.next().ok_or_else(|| Error::Domain("empty csv row".into()))?;
            grid.push(t.map_err(|e| Error::Domain(e.to_string()))?);
            for f in fields {
                values.push(f.map_err(|e| Error::Domain(e.to_string()))?);
            }
        }
        SampledPath::new(dim, grid, values)
    }
}

#[derive(Serialize, Deserialize)]
struct SampledPathRepr {
    grid: Vec<f64>,
    values: Vec<Vec<f64>>,
}

impl Serialize for SampledPath {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let values = (0..self.len()).map(|k| self.value(k).to_vec()).collect();
        SampledPathRepr { grid: self.grid.clone(), values }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for SampledPath {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = SampledPathRepr::deserialize(d)?;
        let dim = repr.values.first().map_or(0, Vec::len);
        if repr.values.iter().any(|v| v.len() != dim) {
            return Err(serde::de::Error::custom("ragged path values"));
        }
        SampledPath::new(dim, repr.grid, repr.values.concat()).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn idx(p: u32, m: u32) -> DyadicIndex {
        DyadicIndex::new(p, m).unwrap()
    }

    #[test]
    fn flat_index_round_trips() {
        for i in 0..64 {
            assert_eq!(DyadicIndex::from_flat(i).flat(), i);
        }
        assert_eq!(idx(0, 1).flat(), 1);
        assert_eq!(idx(2, 3).flat(), 6);
        assert_eq!(level_of_flat(1), 0);
        assert_eq!(level_of_flat(7), 2);
        assert!(DyadicIndex::new(1, 3).is_err());
        assert!(DyadicIndex::new(2, 0).is_err());
    }

    #[test]
    fn haar_values() {
        assert_eq!(haar_eval(idx(0, 1), 0.25, 1.0).unwrap(), 1.0);
        assert_eq!(haar_eval(DyadicIndex::ROOT, 0.9, 1.0).unwrap(), 1.0);
        assert_abs_diff_eq!(haar_eval(idx(1, 2), 0.8, 1.0).unwrap(), -std::f64::consts::SQRT_2, epsilon = 1e-12);
        assert!(haar_eval(idx(1, 1), 1.5, 1.0).is_err());
        assert!(haar_eval(idx(1, 1), -0.1, 1.0).is_err());
    }

    #[test]
    fn schauder_values() {
        assert_abs_diff_eq!(schauder_eval(DyadicIndex::ROOT, 0.3, 1.0).unwrap(), 0.3);
        assert_abs_diff_eq!(schauder_eval(idx(2, 1), 0.125, 1.0).unwrap(), 0.25, epsilon = 1e-15);
        assert_eq!(schauder_eval(idx(2, 1), 0.9, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn schauder_matches_quadrature_of_haar() {
        // midpoint rule on a grid aligned with every dyadic breakpoint up to level 4
        let k = 1 << 12;
        for i in 0..DyadicIndex::count(3) {
            let id = DyadicIndex::from_flat(i);
            for &t in &[0.1, 0.3, 0.55, 0.8, 1.0] {
                let steps = (t * k as f64).round() as usize;
                let h = t / steps as f64;
                let quad: f64 = (0..steps).map(|s| haar_eval(id, (s as f64 + 0.5) * h, 1.0).unwrap() * h).sum();
                assert_abs_diff_eq!(quad, schauder_eval(id, t, 1.0).unwrap(), epsilon = 1e-3);
            }
        }
    }

    #[test]
    fn analyze_examples() {
        let grid = dyadic_grid(1.0, 6);
        let linear = SampledPath::from_fn(1, grid.clone(), |t| vec![t]).unwrap();
        let c = linear.analyze(4).unwrap();
        for (i, v) in c.entries() {
            if i != DyadicIndex::ROOT {
                assert_abs_diff_eq!(v[0], 0.0, epsilon = 1e-14);
            }
        }
        let square = SampledPath::from_fn(1, grid.clone(), |t| vec![t * t]).unwrap();
        assert_abs_diff_eq!(square.analyze(3).unwrap().get(idx(0, 1))[0], -0.5, epsilon = 1e-14);

        let planted = CoeffPath::from_entries(1, 1.0, 1, [(idx(1, 1), vec![1.0])]).unwrap();
        let back = planted.sample_on(&grid).unwrap().analyze(4).unwrap();
        for (i, v) in back.entries() {
            let expected = if i == idx(1, 1) { 1.0 } else { 0.0 };
            assert_abs_diff_eq!(v[0], expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn synthesize_examples() {
        let c = CoeffPath::from_entries(1, 1.0, 0, [(DyadicIndex::ROOT, vec![1.0])]).unwrap();
        assert_abs_diff_eq!(c.synthesize(0.5).unwrap()[0], 0.5);
        let empty = CoeffPath::zeros(1, 1.0, 3);
        assert_eq!(empty.synthesize(0.37).unwrap(), vec![0.0]);
        let two = CoeffPath::from_entries(1, 1.0, 0, [(DyadicIndex::ROOT, vec![1.0]), (idx(0, 1), vec![1.0])]).unwrap();
        assert_abs_diff_eq!(two.synthesize(0.5).unwrap()[0], 1.0, epsilon = 1e-15);
        assert!(two.synthesize(1.01).is_err());
    }

    #[test]
    fn holder_norm_examples() {
        assert_eq!(CoeffPath::zeros(2, 1.0, 3).holder_norm(0.4), 0.0);
        let root = CoeffPath::from_entries(1, 1.0, 2, [(DyadicIndex::ROOT, vec![1.0])]).unwrap();
        assert_eq!(root.holder_norm(0.4), 1.0);
        let c = CoeffPath::from_entries(1, 1.0, 2, [(DyadicIndex::ROOT, vec![1.0]), (idx(1, 1), vec![3.0])]).unwrap();
        assert_abs_diff_eq!(c.holder_norm(0.4), 3.0 * 2f64.powf(-0.1), epsilon = 1e-12);
    }

    #[test]
    fn general_horizon_is_biorthogonal() {
        let horizon = 2.5;
        let grid = dyadic_grid(horizon, 7);
        let c = CoeffPath::from_dense(2, horizon, 3, (0..32).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let back = c.sample_on(&grid).unwrap().analyze(3).unwrap();
        for (a, b) in back.as_slice().iter().zip(c.as_slice()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn json_and_csv_round_trip() {
        let c = CoeffPath::from_entries(2, 1.0, 2, [(idx(1, 2), vec![1.5, -2.0])]).unwrap();
        let s = serde_json::to_string(&c).unwrap();
        assert_eq!(s, r#"{"dim":2,"horizon":1.0,"level":2,"coeffs":[[1,2,[1.5,-2.0]]]}"#);
        assert_eq!(serde_json::from_str::<CoeffPath>(&s).unwrap(), c);
        assert!(serde_json::from_str::<CoeffPath>(r#"{"dim":1,"horizon":1.0,"level":1,"coeffs":[[1,3,[1.0]]]}"#).is_err());

        let path = c.sample_on(&dyadic_grid(1.0, 3)).unwrap();
        let mut buf = Vec::new();
        path.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("t,x1,x2\n"));
        assert_eq!(SampledPath::read_csv(buf.as_slice()).unwrap(), path);
    }

    fn coeff_strategy(level: u32, dim: usize) -> impl Strategy<Value = CoeffPath> {
        prop::collection::vec(-5.0f64..5.0, DyadicIndex::count(level) * dim)
            .prop_map(move |v| CoeffPath::from_dense(dim, 1.0, level, v).unwrap())
    }

    proptest! {
        #[test]
        fn analyze_inverts_synthesize(c in coeff_strategy(4, 2), extra in 0u32..3) {
            let grid = dyadic_grid(1.0, 5 + extra);
            let back = c.sample_on(&grid).unwrap().analyze(4 + extra).unwrap();
            for (i, v) in back.as_slice().iter().enumerate() {
                let expected = c.as_slice().get(i).copied().unwrap_or(0.0);
                prop_assert!((v - expected).abs() < 1e-12);
            }
        }

        #[test]
        fn analyze_is_linear(x in coeff_strategy(3, 1), y in coeff_strategy(3, 1), a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let grid = dyadic_grid(1.0, 4);
            let combo = x.linear_combination(a, &y, b).unwrap().sample_on(&grid).unwrap();
            let lhs = combo.analyze(3).unwrap();
            let rhs = x.sample_on(&grid).unwrap().analyze(3).unwrap()
                .linear_combination(a, &y.sample_on(&grid).unwrap().analyze(3).unwrap(), b).unwrap();
            for (l, r) in lhs.as_slice().iter().zip(rhs.as_slice()) {
                prop_assert!((l - r).abs() < 1e-12);
            }
        }

        #[test]
        fn holder_norm_is_a_norm(x in coeff_strategy(3, 2), y in coeff_strategy(3, 2), a in -4.0f64..4.0) {
            let alpha = 0.4;
            prop_assert!((x.scale(a).holder_norm(alpha) - a.abs() * x.holder_norm(alpha)).abs() < 1e-12);
            let sum = x.linear_combination(1.0, &y, 1.0).unwrap();
            prop_assert!(sum.holder_norm(alpha) <= x.holder_norm(alpha) + y.holder_norm(alpha) + 1e-12);
        }
    }
}
