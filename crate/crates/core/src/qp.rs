//! Projected-gradient solver for the small convex quadratic programs in
//! this crate.
//!
//! Minimizes `scale * |C p - t|^2` over one of two feasible sets:
//! a coordinate box `0 <= p_i <= hi_i`, or the box sliced by a budget
//! plane `sum p_i = B`. Gradient-projection steps with exact line search
//! along the feasible segment; for a convex quadratic this converges
//! without any external solver.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

/// Projected-gradient convergence tolerance (scaled by the data).
const GRAD_TOLERANCE: f64 = 1e-10;
/// Iteration cap.
const MAX_ITERATIONS: usize = 100_000;
/// Bisection iterations for the budget-plane projection.
/// Quadratic objective `scale * |C p - target|^2`.
#[derive(Debug, Clone)]
pub struct QuadraticObjective {
    pub c: Array2<f64>,
    pub target: Array1<f64>,
    pub scale: f64,
}

impl QuadraticObjective {
    pub fn dim(&self) -> usize {
        self.c.ncols()
    }

    fn residual(&self, p: &Array1<f64>) -> Array1<f64> {
        self.c.dot(p) - &self.target
    }

    /// Objective value at `p`.
    pub fn value(&self, p: &Array1<f64>) -> f64 {
        let r = self.residual(p);
        self.scale * r.dot(&r)
    }

    /// Gradient `2 scale C^T (C p - target)`.
    pub fn gradient(&self, p: &Array1<f64>) -> Array1<f64> {
        let r = self.residual(p);
        self.c.t().dot(&r) * (2.0 * self.scale)
    }

    /// Upper bound on the Hessian spectral norm via a few power
    /// iterations on `C^T C`.
    fn lipschitz(&self) -> f64 {
        let n = self.dim();
        let mut v = Array1::from_elem(n, 1.0 / (n as f64).sqrt());
        let mut lam = 0.0;
        for _ in 0..30 {
            let w = self.c.t().dot(&self.c.dot(&v));
            let norm = w.dot(&w).sqrt();
            if norm == 0.0 {
                return 2.0 * self.scale;
            }
            lam = norm;
            v = w / norm;
        }
        2.0 * self.scale * lam
    }
}

/// Feasible set shapes supported by [`minimize`].
#[derive(Debug, Clone)]
pub enum FeasibleSet {
    /// `0 <= p_i <= hi_i`.
    Box { hi: Vec<f64> },
    /// `0 <= p_i <= hi_i` and `sum p_i = budget`.
    BudgetBox { hi: Vec<f64>, budget: f64 },
}

impl FeasibleSet {
    fn dim(&self) -> usize {
        match self {
            FeasibleSet::Box { hi } | FeasibleSet::BudgetBox { hi, .. } => hi.len(),
        }
    }

    /// Checks the set is non-empty.
    pub fn validate(&self) -> Result<()> {
        match self {
            FeasibleSet::Box { hi } => {
                if hi.iter().any(|&h| h < 0.0) {
                    return Err(Error::config("qp", "box upper bounds must be >= 0"));
                }
                Ok(())
            }
            FeasibleSet::BudgetBox { hi, budget } => {
                if hi.iter().any(|&h| h < 0.0) {
                    return Err(Error::config("qp", "box upper bounds must be >= 0"));
                }
                let max_total: f64 = hi.iter().sum();
                if *budget < -1e-15 || *budget > max_total * (1.0 + 1e-12) + 1e-300 {
                    return Err(Error::InfeasibleBudget {
                        budget: *budget,
                        max_total,
                    });
                }
                Ok(())
            }
        }
    }

    /// Euclidean projection onto the set.
    pub fn project(&self, y: &Array1<f64>) -> Array1<f64> {
        match self {
            FeasibleSet::Box { hi } => Array1::from_iter(
                y.iter()
                    .zip(hi.iter())
                    .map(|(&v, &h)| v.clamp(0.0, h)),
            ),
            FeasibleSet::BudgetBox { hi, budget } => {
                project_budget_box(y, hi, *budget)
            }
        }
    }
}

/// Projects onto `{0 <= p <= hi, sum p = budget}`.
///
/// The projection is `p_i = clamp(y_i - tau, 0, hi_i)` for the shift
/// `tau` making the sum hit the budget; the clamped sum is piecewise
/// linear in `tau` with breakpoints at `y_i` and `y_i - hi_i`, so `tau`
/// is found exactly by scanning the sorted breakpoints.
fn project_budget_box(y: &Array1<f64>, hi: &[f64], budget: f64) -> Array1<f64> {
    let clamped = |tau: f64| -> Array1<f64> {
        Array1::from_iter(
            y.iter()
                .zip(hi.iter())
                .map(|(&v, &h)| (v - tau).clamp(0.0, h)),
        )
    };
    let clamped_sum = |tau: f64| -> f64 { clamped(tau).sum() };

    let mut breaks: Vec<f64> = y
        .iter()
        .zip(hi.iter())
        .flat_map(|(&v, &h)| [v - h, v])
        .collect();
    breaks.sort_by(|a, b| a.partial_cmp(b).unwrap());
    // Find the segment [breaks[k], breaks[k+1]] where the decreasing sum
    // crosses the budget, then solve the linear equation on it.
    if clamped_sum(breaks[0]) <= budget {
        return clamped(breaks[0]);
    }
    let last = breaks[breaks.len() - 1];
    if clamped_sum(last) >= budget {
        return clamped(last);
    }
    for w in breaks.windows(2) {
        let (lo, up) = (w[0], w[1]);
        if clamped_sum(up) > budget {
            continue;
        }
        // Coordinates strictly interior on this segment decrease with
        // slope one; the rest are pinned.
        let mid = 0.5 * (lo + up);
        let mut active = 0usize;
        let mut active_sum = 0.0;
        let mut pinned_sum = 0.0;
        for (&v, &h) in y.iter().zip(hi.iter()) {
            let val = v - mid;
            if val > 0.0 && val < h {
                active += 1;
                active_sum += v;
            } else {
                pinned_sum += val.clamp(0.0, h);
            }
        }
        let tau = if active == 0 {
            lo
        } else {
            (active_sum + pinned_sum - budget) / active as f64
        };
        return clamped(tau.clamp(lo, up));
    }
    clamped(last)
}

/// Solution of a projected-gradient run.
#[derive(Debug, Clone)]
pub struct QpSolution {
    pub p: Array1<f64>,
    pub objective: f64,
    /// `||project(p - grad) - p||_inf`: stationarity of the projected
    /// point with a unit step, zero exactly at a KKT point.
    pub kkt_residual: f64,
    pub iterations: usize,
}

/// Minimizes the objective over the feasible set.
pub fn minimize(
    objective: &QuadraticObjective,
    set: &FeasibleSet,
    start: Option<&Array1<f64>>,
) -> Result<QpSolution> {
    set.validate()?;
    let n = objective.dim();
    assert_eq!(set.dim(), n, "objective/set dimension mismatch");

    let init = match start {
        Some(p0) => p0.clone(),
        None => Array1::zeros(n),
    };
    let mut p = set.project(&init);

    let lip = objective.lipschitz();
    let step = if lip > 0.0 { 1.0 / lip } else { 1.0 };
    let grad_scale = {
        let g0 = objective.gradient(&p);
        g0.iter().fold(0.0f64, |a, &b| a.max(b.abs())).max(1.0)
    };

    let mut iterations = 0;
    for it in 0..MAX_ITERATIONS {
        iterations = it + 1;
        let g = objective.gradient(&p);
        // Converge on the same unit-step stationarity measure that is
        // reported as the KKT residual.
        let unit = set.project(&(&p - &g));
        let kkt_now = (&unit - &p).iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        if kkt_now <= GRAD_TOLERANCE * grad_scale {
            break;
        }
        let trial = set.project(&(&p - &(g.clone() * step)));
        let dir = &trial - &p;
        let dir_norm = dir.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        if dir_norm == 0.0 {
            break;
        }
        // Exact line search for the quadratic along the feasible segment.
        let cd = objective.c.dot(&dir);
        let cd2 = cd.dot(&cd);
        let alpha = if cd2 > 0.0 {
            let r = objective.c.dot(&p) - &objective.target;
            (-r.dot(&cd) / cd2).clamp(0.0, 1.0)
        } else if g.dot(&dir) < 0.0 {
            1.0
        } else {
            break;
        };
        if alpha == 0.0 {
            break;
        }
        p = &p + &(dir * alpha);
    }
    // Re-project to scrub line-search round-off on the constraints.
    p = set.project(&p);

    let g = objective.gradient(&p);
    let proj = set.project(&(&p - &g));
    let kkt_residual = (&proj - &p)
        .iter()
        .fold(0.0f64, |a, &b| a.max(b.abs()));
    Ok(QpSolution {
        objective: objective.value(&p),
        p,
        kkt_residual,
        iterations,
    })
}
