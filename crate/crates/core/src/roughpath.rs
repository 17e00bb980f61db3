//! Level-2 geometric rough paths over a time grid.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::gaussian::BmSampler;
use crate::wavelet::{CoeffPath, SampledPath};

/// Element of the step-2 free nilpotent group over `R^d`.
///
/// `second` is stored row-major; `second[i*d + j]` is the iterated integral
/// of `dx^i dx^j`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupElt2 {
    pub inc: Vec<f64>,
    pub second: Vec<f64>,
}

impl GroupElt2 {
    pub fn identity(dim: usize) -> Self {
        GroupElt2 { inc: vec![0.0; dim], second: vec![0.0; dim * dim] }
    }

    /// Signature of the straight segment with increment `delta`.
    pub fn segment(delta: &[f64]) -> Self {
        let d = delta.len();
        let mut second = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                second[i * d + j] = 0.5 * delta[i] * delta[j];
            }
        }
        GroupElt2 { inc: delta.to_vec(), second }
    }

    pub fn new(inc: Vec<f64>, second: Vec<f64>) -> Result<Self> {
        if second.len() != inc.len() * inc.len() {
            return Err(Error::DimensionMismatch { expected: inc.len() * inc.len(), got: second.len() });
        }
        Ok(GroupElt2 { inc, second })
    }

    pub fn dim(&self) -> usize {
        self.inc.len()
    }

    /// Chen product `self ⊗ other`.
    pub fn mul(&self, other: &GroupElt2) -> GroupElt2 {
        let mut out = self.clone();
        out.mul_assign(other);
        out
    }

    pub fn mul_assign(&mut self, other: &GroupElt2) {
        let d = self.dim();
        for i in 0..d {
            for j in 0..d {
                self.second[i * d + j] += other.second[i * d + j] + self.inc[i] * other.inc[j];
            }
        }
        for (a, b) in self.inc.iter_mut().zip(&other.inc) {
            *a += b;
        }
    }

    pub fn inverse(&self) -> GroupElt2 {
        let d = self.dim();
        let mut second = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                second[i * d + j] = -self.second[i * d + j] + self.inc[i] * self.inc[j];
            }
        }
        GroupElt2 { inc: self.inc.iter().map(|v| -v).collect(), second }
    }

    /// Antisymmetric part `second - inc⊗inc / 2`, the Lévy area.
    pub fn levy_area(&self) -> Vec<f64> {
        let d = self.dim();
        let mut a = self.second.clone();
        for i in 0..d {
            for j in 0..d {
                a[i * d + j] -= 0.5 * self.inc[i] * self.inc[j];
            }
        }
        a
    }

    /// `delta_t`: scales level `k` by `t^k`.
    pub fn dilate(&self, t: f64) -> GroupElt2 {
        GroupElt2 { inc: self.inc.iter().map(|v| t * v).collect(), second: self.second.iter().map(|v| t * t * v).collect() }
    }

    /// Largest deviation of the symmetric part of `second` from `inc⊗inc / 2`.
    pub fn shuffle_defect(&self) -> f64 {
        let d = self.dim();
        let mut worst = 0.0f64;
        for i in 0..d {
            for j in 0..d {
                let sym = 0.5 * (self.second[i * d + j] + self.second[j * d + i]);
                worst = worst.max((sym - 0.5 * self.inc[i] * self.inc[j]).abs());
            }
        }
        worst
    }

    /// `sum_i |inc_i| + sum_ij |A_ij|^(1/2)` with `A` the Lévy area.
    pub fn homo_norm(&self) -> f64 {
        let d = self.dim();
        let mut n: f64 = self.inc.iter().map(|v| v.abs()).sum();
        for i in 0..d {
            for j in 0..d {
                if i != j {
                    let a = 0.5 * (self.second[i * d + j] - self.second[j * d + i]);
                    n += a.abs().sqrt();
                }
            }
        }
        n
    }

    /// `l1` distance between the two levels separately.
    pub fn level_distances(&self, other: &GroupElt2) -> (f64, f64) {
        let l1 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>();
        (l1(&self.inc, &other.inc), l1(&self.second, &other.second))
    }

    fn max_abs_diff(&self, other: &GroupElt2) -> f64 {
        self.inc.iter().chain(&self.second).zip(other.inc.iter().chain(&other.second)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    /// Whether `self` and `other` agree entrywise to `tol`.
    pub fn approx_eq(&self, other: &GroupElt2, tol: f64) -> bool {
        self.dim() == other.dim() && self.max_abs_diff(other) <= tol
    }
}

/// `a ⊗ b`.
pub fn chen_mul(a: &GroupElt2, b: &GroupElt2) -> GroupElt2 {
    a.mul(b)
}

pub fn homo_norm(g: &GroupElt2) -> f64 {
    g.homo_norm()
}

#[derive(Serialize, Deserialize)]
struct EltRepr {
    inc: Vec<f64>,
    second: Vec<Vec<f64>>,
}

impl Serialize for GroupElt2 {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let d = self.dim();
        let second = if d == 0 { Vec::new() } else { self.second.chunks(d).map(<[f64]>::to_vec).collect() };
        EltRepr { inc: self.inc.clone(), second }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for GroupElt2 {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let r = EltRepr::deserialize(d)?;
        if r.second.len() != r.inc.len() || r.second.iter().any(|row| row.len() != r.inc.len()) {
            return Err(D::Error::custom("second level must be a square matrix matching inc"));
        }
        Ok(GroupElt2 { inc: r.inc, second: r.second.concat() })
    }
}

/// A level-2 rough path given by its increments over consecutive grid cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Sig2PathRepr")]
pub struct Sig2Path {
    grid: Vec<f64>,
    elements: Vec<GroupElt2>,
    origin: Vec<f64>,
}

#[derive(Deserialize)]
struct Sig2PathRepr {
    grid: Vec<f64>,
    elements: Vec<GroupElt2>,
    #[serde(default)]
    origin: Vec<f64>,
}

impl TryFrom<Sig2PathRepr> for Sig2Path {
    type Error = Error;

    fn try_from(r: Sig2PathRepr) -> Result<Self> {
        Sig2Path::new(r.grid, r.elements, r.origin)
    }
}

impl Sig2Path {
    pub fn new(grid: Vec<f64>, elements: Vec<GroupElt2>, origin: Vec<f64>) -> Result<Self> {
        if grid.len() < 2 || grid[0] != 0.0 || grid.windows(2).any(|w| !(w[1] > w[0])) {
            return domain("grid must start at 0 and increase strictly");
        }
        if elements.len() + 1 != grid.len() {
            return Err(Error::DimensionMismatch { expected: grid.len() - 1, got: elements.len() });
        }
        let d = elements[0].dim();
        if elements.iter().any(|e| e.dim() != d || e.second.len() != d * d) || (!origin.is_empty() && origin.len() != d) {
            return domain("elements and origin must share one dimension");
        }
        let origin = if origin.is_empty() { vec![0.0; d] } else { origin };
        Ok(Sig2Path { grid, elements, origin })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn elements(&self) -> &[GroupElt2] {
        &self.elements
    }

    pub fn origin(&self) -> &[f64] {
        &self.origin
    }

    pub fn dim(&self) -> usize {
        self.origin.len()
    }

    /// Number of grid cells.
    pub fn cells(&self) -> usize {
        self.elements.len()
    }

    pub fn horizon(&self) -> f64 {
        self.grid[self.grid.len() - 1]
    }

    /// `x_{t_i, t_j}` for grid indices `i <= j`.
    pub fn increment(&self, i: usize, j: usize) -> GroupElt2 {
        let mut g = GroupElt2::identity(self.dim());
        for e in &self.elements[i..j] {
            g.mul_assign(e);
        }
        g
    }

    /// Every cell element is a straight segment: zero Lévy area.
    pub fn is_piecewise_linear(&self, tol: f64) -> bool {
        self.elements.iter().all(|e| e.levy_area().iter().all(|a| a.abs() <= tol) && e.shuffle_defect() <= tol)
    }

    fn check_compatible(&self, other: &Sig2Path) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: other.dim() });
        }
        if self.grid != other.grid {
            return domain("rough paths must share a grid");
        }
        Ok(())
    }

    /// Splits the straight cell `k` at fraction `theta`.
    fn split_segment(&mut self, k: usize, theta: f64) {
        let delta = self.elements[k].inc.clone();
        let a: Vec<f64> = delta.iter().map(|v| theta * v).collect();
        let b: Vec<f64> = delta.iter().zip(&a).map(|(v, x)| v - x).collect();
        let t = self.grid[k] + theta * (self.grid[k + 1] - self.grid[k]);
        self.elements.splice(k..=k, [GroupElt2::segment(&a), GroupElt2::segment(&b)]);
        self.grid.insert(k + 1, t);
    }
}

/// Lift of a path that is linear between its grid points.
pub fn lift_piecewise_linear(path: &SampledPath) -> Result<Sig2Path> {
    let elements = (0..path.len() - 1)
        .map(|k| {
            let delta: Vec<f64> = path.value(k + 1).iter().zip(path.value(k)).map(|(b, a)| b - a).collect();
            GroupElt2::segment(&delta)
        })
        .collect();
    Sig2Path::new(path.grid().to_vec(), elements, path.start().to_vec())
}

/// Exact lift of a Schauder path on `grid`, accounting for the kinks of the
/// path at the dyadic points of level `level + 1` between grid points.
pub fn lift_coeff(c: &CoeffPath, grid: &[f64]) -> Result<Sig2Path> {
    let kinks = 1u64 << (c.level() + 1);
    let horizon = c.horizon();
    let mut fine: Vec<f64> = (0..=kinks).map(|i| horizon * i as f64 / kinks as f64).chain(grid.iter().copied()).collect();
    fine.sort_by(f64::total_cmp);
    fine.dedup();
    if fine.last() != Some(&horizon) || grid.last() != Some(&horizon) {
        return domain("grid must end at the path horizon");
    }
    let sampled = c.sample_on(&fine)?;
    let fine_lift = lift_piecewise_linear(&sampled)?;
    let mut elements = Vec::with_capacity(grid.len() - 1);
    let mut k = 0;
    for w in grid.windows(2) {
        if fine[k] != w[0] {
            return domain("grid is not increasing");
        }
        let mut g = GroupElt2::identity(c.dim());
        while fine[k] < w[1] {
            g.mul_assign(&fine_lift.elements[k]);
            k += 1;
        }
        elements.push(g);
    }
    Sig2Path::new(grid.to_vec(), elements, vec![0.0; c.dim()])
}

/// Stratonovich lift of Brownian sample `index` on `grid`.
///
/// Level one is exact at the grid points as long as `grid` is dyadic of level
/// at most `max_level + 1`; areas come from the piecewise-linear path through
/// the finer dyadic points of level `max_level + 1`.
pub fn lift_bm(sampler: &BmSampler, index: u64, grid: &[f64]) -> Result<Sig2Path> {
    lift_coeff(&sampler.sample(index), grid)
}

/// Suprema over grid pairs of `rho_1 / |t-s|^alpha` and `rho_2 / |t-s|^(2 alpha)`.
pub fn rho_alpha_levels(x: &Sig2Path, y: &Sig2Path, alpha: f64) -> Result<(f64, f64)> {
    x.check_compatible(y)?;
    let k = x.cells();
    Ok((0..k)
        .into_par_iter()
        .map(|i| {
            let (mut gx, mut gy) = (GroupElt2::identity(x.dim()), GroupElt2::identity(x.dim()));
            let mut best = (0.0f64, 0.0f64);
            for j in i..k {
                gx.mul_assign(&x.elements[j]);
                gy.mul_assign(&y.elements[j]);
                let dt = x.grid[j + 1] - x.grid[i];
                let (r1, r2) = gx.level_distances(&gy);
                best.0 = best.0.max(r1 / dt.powf(alpha));
                best.1 = best.1.max(r2 / dt.powf(2.0 * alpha));
            }
            best
        })
        .reduce(|| (0.0, 0.0), |a, b| (a.0.max(b.0), a.1.max(b.1))))
}

/// Inhomogeneous Hölder metric, including the distance of starting points.
pub fn rho_alpha(x: &Sig2Path, y: &Sig2Path, alpha: f64) -> Result<f64> {
    let (r1, r2) = rho_alpha_levels(x, y, alpha)?;
    let start: f64 = x.origin.iter().zip(&y.origin).map(|(a, b)| (a - b).abs()).sum();
    Ok(start + r1.max(r2))
}

/// Homogeneous Hölder distance `sup ||x_{s,t}^{-1} y_{s,t}|| / |t-s|^alpha`.
pub fn d_alpha(x: &Sig2Path, y: &Sig2Path, alpha: f64) -> Result<f64> {
    x.check_compatible(y)?;
    let k = x.cells();
    Ok((0..k)
        .into_par_iter()
        .map(|i| {
            let (mut gx, mut gy) = (GroupElt2::identity(x.dim()), GroupElt2::identity(x.dim()));
            let mut best = 0.0f64;
            for j in i..k {
                gx.mul_assign(&x.elements[j]);
                gy.mul_assign(&y.elements[j]);
                let dt = x.grid[j + 1] - x.grid[i];
                best = best.max(gx.inverse().mul(&gy).homo_norm() / dt.powf(alpha));
            }
            best
        })
        .reduce(|| 0.0, f64::max))
}

/// `omega(i, j) = ||x||^p_{p-var; [t_i, t_j]}` over grid partitions, for all pairs.
#[derive(Debug, Clone)]
pub struct Control {
    points: usize,
    omega: Vec<f64>,
}

impl Control {
    pub fn new(x: &Sig2Path, p: f64) -> Self {
        let n = x.cells() + 1;
        let rows: Vec<Vec<f64>> = (0..n).into_par_iter().map(|i| pvar_row(x, p, i, n - 1)).collect();
        let mut omega = vec![0.0; n * n];
        for (i, row) in rows.into_iter().enumerate() {
            omega[i * n + i..i * n + n].copy_from_slice(&row);
        }
        Control { points: n, omega }
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.omega[i * self.points + j]
    }

    /// Largest violation of `omega(i,k) >= omega(i,j) + omega(j,k)`.
    pub fn superadditivity_defect(&self) -> f64 {
        let n = self.points;
        (0..n)
            .into_par_iter()
            .map(|i| {
                let mut worst = 0.0f64;
                for j in i..n {
                    for k in j..n {
                        worst = worst.max(self.get(i, j) + self.get(j, k) - self.get(i, k));
                    }
                }
                worst
            })
            .reduce(|| 0.0, f64::max)
    }
}

/// `best[j - i]` = largest `sum ||x_{t_l, t_{l+1}}||^p` over partitions of `[t_i, t_j]`.
fn pvar_row(x: &Sig2Path, p: f64, i: usize, last: usize) -> Vec<f64> {
    let d = x.dim();
    let mut best = vec![0.0; last - i + 1];
    // acc[l - i] = x_{t_l, t_j} for the current j
    let mut acc: Vec<GroupElt2> = Vec::with_capacity(last - i);
    for j in i + 1..=last {
        acc.push(GroupElt2::identity(d));
        let e = &x.elements[j - 1];
        let mut b = 0.0f64;
        for (l, g) in acc.iter_mut().enumerate() {
            g.mul_assign(e);
            b = b.max(best[l] + g.homo_norm().powf(p));
        }
        best[j - i] = b;
    }
    best
}

/// `||x||_{p-var; [t_i, t_j]}` over grid partitions.
pub fn pvar_norm(x: &Sig2Path, p: f64, i: usize, j: usize) -> Result<f64> {
    if !(p >= 1.0) {
        return domain("p must be at least 1");
    }
    if i > j || j > x.cells() {
        return domain("grid indices out of range");
    }
    Ok(pvar_row(x, p, i, j)[j - i].powf(1.0 / p))
}

/// Relative slack when testing `omega <= beta` after recomputation.
const BETA_SLACK: f64 = 1e-12;

/// Greedy times together with the path they were computed on.
///
/// For piecewise-linear paths each stopping time is located inside its
/// straight cell so that the control of every greedy interval equals `beta`
/// to rounding, and the cell is split there; for other paths stopping times
/// are the first grid points where the control reaches `beta`.
pub fn greedy_refined(x: &Sig2Path, beta: f64, p: f64) -> Result<(Vec<f64>, Sig2Path)> {
    if !(beta > 0.0) || !(p >= 1.0) {
        return domain("need beta > 0 and p >= 1");
    }
    let linear = x.is_piecewise_linear(1e-12);
    let mut y = x.clone();
    let mut times = vec![0.0];
    let mut start = 0;
    let d = y.dim();
    'outer: loop {
        let n = y.cells();
        let mut best = vec![0.0];
        let mut acc: Vec<GroupElt2> = Vec::new();
        for j in start + 1..=n {
            let prev = acc.clone();
            acc.push(GroupElt2::identity(d));
            let e = y.elements[j - 1].clone();
            let mut b = 0.0f64;
            for (l, g) in acc.iter_mut().enumerate() {
                g.mul_assign(&e);
                b = b.max(best[l] + g.homo_norm().powf(p));
            }
            if b >= beta {
                let mut cut = j;
                if linear {
                    let cell = j - 1;
                    let mut prev = prev;
                    prev.push(GroupElt2::identity(d));
                    let eval = |theta: f64| {
                        let seg = GroupElt2::segment(&e.inc.iter().map(|v| theta * v).collect::<Vec<_>>());
                        prev.iter().zip(&best).map(|(g, b0)| b0 + g.mul(&seg).homo_norm().powf(p)).fold(0.0, f64::max)
                    };
                    let (mut lo, mut hi) = (0.0, 1.0);
                    for _ in 0..200 {
                        let mid = 0.5 * (lo + hi);
                        if mid <= lo || mid >= hi {
                            break;
                        }
                        if eval(mid) <= beta {
                            lo = mid;
                        } else {
                            hi = mid;
                        }
                    }
                    let t = y.grid[cell] + lo * (y.grid[cell + 1] - y.grid[cell]);
                    if lo > 0.0 && t > y.grid[cell] && t < y.grid[cell + 1] {
                        y.split_segment(cell, lo);
                        cut = cell + 1;
                    } else if lo == 0.0 || t <= y.grid[cell] {
                        cut = cell.max(start + 1);
                    }
                }
                times.push(y.grid[cut]);
                if cut >= y.cells() {
                    break 'outer;
                }
                start = cut;
                continue 'outer;
            }
            best.push(b);
        }
        times.push(y.horizon());
        break;
    }
    Ok((times, y))
}

/// Greedy sequence `tau_0 = 0 < tau_1 < ... <= T`, ending with `T`.
pub fn greedy_sequence(x: &Sig2Path, beta: f64, p: f64) -> Result<Vec<f64>> {
    Ok(greedy_refined(x, beta, p)?.0)
}

/// `N_beta`: number of greedy times strictly inside `(0, T)`.
pub fn count_n(x: &Sig2Path, beta: f64, p: f64) -> Result<usize> {
    let times = greedy_sequence(x, beta, p)?;
    let horizon = x.horizon();
    Ok(times[1..].iter().filter(|&&t| t < horizon).count())
}

/// `M_beta`: largest `sum omega` over partitions whose intervals all have
/// `omega <= beta`, computed on the grid refined by the greedy times.
/// Straight cells whose own control exceeds `beta` are subdivided first.
pub fn accumulated_pvar(x: &Sig2Path, beta: f64, p: f64) -> Result<f64> {
    let (_, mut y) = greedy_refined(x, beta, p)?;
    if y.is_piecewise_linear(1e-12) {
        let mut k = 0;
        while k < y.cells() {
            let w = y.elements[k].homo_norm().powf(p);
            if w > beta {
                let pieces = (w / beta).powf(1.0 / p).ceil();
                y.split_segment(k, 1.0 / pieces);
            } else {
                k += 1;
            }
        }
    }
    let control = Control::new(&y, p);
    let n = control.points();
    let limit = beta * (1.0 + BETA_SLACK);
    let mut m = vec![f64::NEG_INFINITY; n];
    m[0] = 0.0;
    for j in 1..n {
        for i in 0..j {
            let w = control.get(i, j);
            if w <= limit && m[i] > f64::NEG_INFINITY {
                m[j] = m[j].max(m[i] + w);
            }
        }
    }
    if m[n - 1] == f64::NEG_INFINITY {
        return domain("no admissible partition: a grid cell carries more than beta");
    }
    Ok(m[n - 1])
}
