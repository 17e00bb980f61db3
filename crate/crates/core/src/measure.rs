//! Finite-support probability measures and measure-valued paths.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::wavelet::SampledPath;

pub(crate) const WEIGHT_TOL: f64 = 1e-12;

pub(crate) fn check_weights(weights: &[f64]) -> Result<()> {
    if weights.is_empty() {
        return Err(Error::InvalidMeasure("no atoms".into()));
    }
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::InvalidMeasure("weights must be finite and non-negative".into()));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > WEIGHT_TOL {
        return Err(Error::InvalidMeasure(format!("weights sum to {total}")));
    }
    Ok(())
}

/// `sum_k w_k delta_{atom_k}` with a probability vector `w`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedMeasure<T> {
    atoms: Vec<T>,
    weights: Vec<f64>,
}

/// Finite-support law on sampled paths sharing one grid.
pub type WeightedPathMeasure = WeightedMeasure<SampledPath>;

impl<T> WeightedMeasure<T> {
    pub fn new(atoms: Vec<T>, weights: Vec<f64>) -> Result<Self> {
        if atoms.len() != weights.len() {
            return Err(Error::DimensionMismatch { expected: atoms.len(), got: weights.len() });
        }
        check_weights(&weights)?;
        Ok(WeightedMeasure { atoms, weights })
    }

    /// Equal weights `1/n`.
    pub fn uniform(atoms: Vec<T>) -> Result<Self> {
        let n = atoms.len();
        WeightedMeasure::new(atoms, vec![1.0 / n as f64; n])
    }

    pub fn atoms(&self) -> &[T] {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&T, f64)> {
        self.atoms.iter().zip(self.weights.iter().copied())
    }

    pub fn into_parts(self) -> (Vec<T>, Vec<f64>) {
        (self.atoms, self.weights)
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> WeightedMeasure<U> {
        WeightedMeasure { atoms: self.atoms.iter().map(f).collect(), weights: self.weights.clone() }
    }

    pub fn try_map<U>(&self, f: impl FnMut(&T) -> Result<U>) -> Result<WeightedMeasure<U>> {
        Ok(WeightedMeasure { atoms: self.atoms.iter().map(f).collect::<Result<_>>()?, weights: self.weights.clone() })
    }
}

impl WeightedPathMeasure {
    /// Grid of the first atom; every atom shares it.
    pub fn grid(&self) -> &[f64] {
        self.atoms[0].grid()
    }

    pub fn path_dim(&self) -> usize {
        self.atoms[0].dim()
    }

    pub fn check_common_grid(&self) -> Result<()> {
        let first = &self.atoms[0];
        if self.atoms.iter().any(|a| !a.same_grid(first) || a.dim() != first.dim()) {
            return Err(Error::InvalidMeasure("atoms do not share a grid and dimension".into()));
        }
        Ok(())
    }

    /// Weighted mean of the atoms at grid index `k`.
    pub fn mean_at(&self, k: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.path_dim()];
        for (a, w) in self.iter() {
            for (o, v) in out.iter_mut().zip(a.value(k)) {
                *o += w * v;
            }
        }
        out
    }
}

#[derive(Serialize, Deserialize)]
struct PathMeasureRepr {
    grid: Vec<f64>,
    atoms: Vec<Vec<Vec<f64>>>,
    weights: Vec<f64>,
}

impl Serialize for WeightedPathMeasure {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let atoms = self.atoms.iter().map(|a| (0..a.len()).map(|k| a.value(k).to_vec()).collect()).collect();
        PathMeasureRepr { grid: self.grid().to_vec(), atoms, weights: self.weights.clone() }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for WeightedPathMeasure {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let repr = PathMeasureRepr::deserialize(d)?;
        let atoms = repr
            .atoms
            .into_iter()
            .map(|rows| {
                let dim = rows.first().map_or(0, Vec::len);
                if rows.iter().any(|r| r.len() != dim) {
                    return Err(Error::InvalidMeasure("ragged atom".into()));
                }
                SampledPath::new(dim, repr.grid.clone(), rows.concat())
            })
            .collect::<Result<Vec<_>>>()
            .map_err(D::Error::custom)?;
        let m = WeightedMeasure::new(atoms, repr.weights).map_err(D::Error::custom)?;
        m.check_common_grid().map_err(D::Error::custom)?;
        Ok(m)
    }
}

/// Weighted point cloud in `R^d` borrowed from a measure path.
#[derive(Debug, Clone, Copy)]
pub struct MeasureSnapshot<'a> {
    pub dim: usize,
    pub atoms: &'a [f64],
    pub weights: &'a [f64],
}

impl<'a> MeasureSnapshot<'a> {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn atom(&self, k: usize) -> &'a [f64] {
        &self.atoms[k * self.dim..(k + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&'a [f64], f64)> + '_ {
        self.atoms.chunks(self.dim).zip(self.weights.iter().copied())
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (a, w) in self.iter() {
            for (o, v) in out.iter_mut().zip(a) {
                *o += w * v;
            }
        }
        out
    }
}

/// Time marginals `mu_t` of a finite-support path law on a grid.
///
/// Besides the grid-time marginals, a measure path may carry the marginals
/// seen at the interior stages of each fourth-order Runge–Kutta step (the
/// states `x + h/2 k1`, `x + h/2 k2`, `x + h k3` of every atom). When present
/// they are used by the frozen-measure solver; otherwise the intermediate
/// marginals are read off by moving each atom linearly between grid times.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurePath {
    grid: Vec<f64>,
    dim: usize,
    weights: Vec<f64>,
    snapshots: Vec<Vec<f64>>,
    stages: Option<Vec<[Vec<f64>; 3]>>,
}

impl MeasurePath {
    /// `snapshots[k]` holds all atoms at `grid[k]`, laid out `[atom][component]`.
    pub fn new(grid: Vec<f64>, dim: usize, weights: Vec<f64>, snapshots: Vec<Vec<f64>>) -> Result<Self> {
        check_weights(&weights)?;
        if snapshots.len() != grid.len() {
            return Err(Error::DimensionMismatch { expected: grid.len(), got: snapshots.len() });
        }
        let expected = weights.len() * dim;
        if let Some(bad) = snapshots.iter().find(|s| s.len() != expected) {
            return Err(Error::DimensionMismatch { expected, got: bad.len() });
        }
        Ok(MeasurePath { grid, dim, weights, snapshots, stages: None })
    }

    /// Constant-in-time measure.
    pub fn constant(grid: Vec<f64>, dim: usize, weights: Vec<f64>, atoms: Vec<f64>) -> Result<Self> {
        let snapshots = vec![atoms; grid.len()];
        MeasurePath::new(grid, dim, weights, snapshots)
    }

    /// Marginals of a path law.
    pub fn from_law(law: &WeightedPathMeasure) -> Result<Self> {
        law.check_common_grid()?;
        let grid = law.grid().to_vec();
        let dim = law.path_dim();
        let snapshots = (0..grid.len()).map(|k| law.atoms().iter().flat_map(|a| a.value(k).to_vec()).collect()).collect();
        MeasurePath::new(grid, dim, law.weights().to_vec(), snapshots)
    }

    /// Attaches per-step stage marginals; `stages[k][s]` is laid out like a snapshot.
    pub fn with_stages(mut self, stages: Vec<[Vec<f64>; 3]>) -> Result<Self> {
        if stages.len() + 1 != self.grid.len() {
            return Err(Error::DimensionMismatch { expected: self.grid.len() - 1, got: stages.len() });
        }
        let expected = self.weights.len() * self.dim;
        if stages.iter().flatten().any(|s| s.len() != expected) {
            return Err(Error::InvalidMeasure("stage snapshot has the wrong size".into()));
        }
        self.stages = Some(stages);
        Ok(self)
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn has_stages(&self) -> bool {
        self.stages.is_some()
    }

    pub fn at(&self, k: usize) -> MeasureSnapshot<'_> {
        MeasureSnapshot { dim: self.dim, atoms: &self.snapshots[k], weights: &self.weights }
    }
}

/// Owned point cloud used when stage marginals have to be interpolated.
pub(crate) enum StageMeasure<'a> {
    Borrowed(MeasureSnapshot<'a>),
    Owned(Vec<f64>),
}

impl MeasurePath {
    /// Measure used at Runge–Kutta stage `stage` (0..4) of step `k`.
    pub(crate) fn stage(&self, k: usize, stage: usize) -> StageMeasure<'_> {
        match (stage, &self.stages) {
            (0, _) => StageMeasure::Borrowed(self.at(k)),
            (s, Some(st)) => StageMeasure::Borrowed(MeasureSnapshot { dim: self.dim, atoms: &st[k][s - 1], weights: &self.weights }),
            (3, None) => StageMeasure::Borrowed(self.at(k + 1)),
            (_, None) => StageMeasure::Owned(
                self.snapshots[k].iter().zip(&self.snapshots[k + 1]).map(|(a, b)| 0.5 * (a + b)).collect(),
            ),
        }
    }

    pub(crate) fn view<'a>(&'a self, m: &'a StageMeasure<'a>) -> MeasureSnapshot<'a> {
        match m {
            StageMeasure::Borrowed(s) => *s,
            StageMeasure::Owned(atoms) => MeasureSnapshot { dim: self.dim, atoms, weights: &self.weights },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wavelet::dyadic_grid;

    #[test]
    fn weights_are_validated() {
        assert!(WeightedMeasure::new(vec![1, 2], vec![0.5, 0.5]).is_ok());
        assert!(WeightedMeasure::new(vec![1, 2], vec![0.5, 0.6]).is_err());
        assert!(WeightedMeasure::new(vec![1, 2], vec![1.5, -0.5]).is_err());
        assert!(WeightedMeasure::new(vec![1], vec![0.5, 0.5]).is_err());
        assert!(WeightedMeasure::<u8>::new(vec![], vec![]).is_err());
    }

    #[test]
    fn path_measure_json_round_trip() {
        let grid = dyadic_grid(1.0, 2);
        let a = SampledPath::from_fn(1, grid.clone(), |t| vec![t]).unwrap();
        let b = SampledPath::from_fn(1, grid, |t| vec![-2.0 * t]).unwrap();
        let law = WeightedMeasure::new(vec![a, b], vec![0.25, 0.75]).unwrap();
        let s = serde_json::to_string(&law).unwrap();
        assert!(s.starts_with(r#"{"grid":[0.0,0.25,0.5,0.75,1.0],"atoms":[[[0.0],[0.25]"#));
        let back: WeightedPathMeasure = serde_json::from_str(&s).unwrap();
        assert_eq!(back, law);
        assert_eq!(law.mean_at(4), vec![0.25 - 1.5]);
    }

    #[test]
    fn stage_marginals_interpolate_without_stages() {
        let mp = MeasurePath::new(vec![0.0, 1.0], 1, vec![1.0], vec![vec![0.0], vec![2.0]]).unwrap();
        let mid = mp.stage(0, 1);
        assert_eq!(mp.view(&mid).mean(), vec![1.0]);
        let end = mp.stage(0, 3);
        assert_eq!(mp.view(&end).mean(), vec![2.0]);
        let staged = mp.clone().with_stages(vec![[vec![5.0], vec![6.0], vec![7.0]]]).unwrap();
        let s = staged.stage(0, 2);
        assert_eq!(staged.view(&s).mean(), vec![6.0]);
    }
}
