//! Derivative-free local search with restarts.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NelderMeadOptions {
    pub max_evals: usize,
    /// Initial simplex edge length.
    pub step: f64,
    /// Stop a cycle once the spread of simplex values falls below this.
    pub ftol: f64,
    /// Stop outright once a value at or below this is found.
    pub stop_below: f64,
    pub max_restarts: usize,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        NelderMeadOptions { max_evals: 2000, step: 0.1, ftol: 1e-12, stop_below: f64::NEG_INFINITY, max_restarts: 8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub evals: usize,
    /// False when the evaluation budget ran out first.
    pub converged: bool,
}

struct Counter<F> {
    f: F,
    evals: usize,
    max: usize,
    best: (f64, Vec<f64>),
}

impl<F: FnMut(&[f64]) -> f64> Counter<F> {
    fn eval(&mut self, x: &[f64]) -> Option<f64> {
        if self.evals >= self.max {
            return None;
        }
        self.evals += 1;
        let v = (self.f)(x);
        let v = if v.is_nan() { f64::INFINITY } else { v };
        if v < self.best.0 {
            self.best = (v, x.to_vec());
        }
        Some(v)
    }
}

fn along(a: &[f64], b: &[f64], t: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + t * (y - x)).collect()
}

/// One simplex run; `None` when the budget ran out.
fn cycle<F: FnMut(&[f64]) -> f64>(c: &mut Counter<F>, x0: &[f64], step: f64, opts: &NelderMeadOptions) -> Option<()> {
    let dim = x0.len();
    let mut simplex = Vec::with_capacity(dim + 1);
    simplex.push((c.eval(x0)?, x0.to_vec()));
    for i in 0..dim {
        let mut x = x0.to_vec();
        x[i] += step;
        simplex.push((c.eval(&x)?, x));
    }
    loop {
        simplex.sort_by(|a, b| a.0.total_cmp(&b.0));
        if simplex[0].0 <= opts.stop_below {
            return Some(());
        }
        let spread = simplex[dim].0 - simplex[0].0;
        let size = simplex[1..]
            .iter()
            .map(|(_, x)| x.iter().zip(&simplex[0].1).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if spread <= opts.ftol || size <= 1e-14 {
            return Some(());
        }
        let mut centroid = vec![0.0; dim];
        for (_, x) in &simplex[..dim] {
            for (m, v) in centroid.iter_mut().zip(x) {
                *m += v / dim as f64;
            }
        }
        let worst = simplex[dim].1.clone();
        let reflected = along(&centroid, &worst, -1.0);
        let fr = c.eval(&reflected)?;
        if fr < simplex[0].0 {
            let expanded = along(&centroid, &worst, -2.0);
            let fe = c.eval(&expanded)?;
            simplex[dim] = if fe < fr { (fe, expanded) } else { (fr, reflected) };
        } else if fr < simplex[dim - 1].0 {
            simplex[dim] = (fr, reflected);
        } else {
            let (target, ft) = if fr < simplex[dim].0 { (reflected, fr) } else { (worst, simplex[dim].0) };
            let contracted = along(&centroid, &target, 0.5);
            let fc = c.eval(&contracted)?;
            if fc < ft {
                simplex[dim] = (fc, contracted);
            } else {
                let best = simplex[0].1.clone();
                for entry in simplex.iter_mut().skip(1) {
                    let x = along(&best, &entry.1, 0.5);
                    *entry = (c.eval(&x)?, x);
                }
            }
        }
    }
}

/// Minimizes `f` from `x0`, restarting around the incumbent until a restart
/// brings no improvement or the budget is spent.
pub fn minimize<F: FnMut(&[f64]) -> f64>(f: F, x0: &[f64], opts: &NelderMeadOptions) -> NelderMeadResult {
    let mut c = Counter { f, evals: 0, max: opts.max_evals.max(1), best: (f64::INFINITY, x0.to_vec()) };
    let mut converged = true;
    let mut step = opts.step;
    let mut last = f64::INFINITY;
    for _ in 0..=opts.max_restarts {
        let start = c.best.1.clone();
        if cycle(&mut c, &start, step, opts).is_none() {
            converged = false;
            break;
        }
        if c.best.0 <= opts.stop_below || last - c.best.0 <= opts.ftol {
            break;
        }
        last = c.best.0;
        step *= 0.5;
    }
    NelderMeadResult { x: c.best.1, value: c.best.0, evals: c.evals, converged }
}
