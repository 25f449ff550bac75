//! Constrained smooth minimizer used by the optimization-based policies,
//! plus independent verification oracles.
//!
//! The minimizer is an augmented-Lagrangian method whose box-constrained
//! subproblems are solved with a projected spectral-gradient iteration. The
//! grid oracle exhaustively searches a feasible grid with the exact
//! (non-smoothed) operators and serves as ground truth in tests.

use thiserror::Error;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("solver did not converge: {0}")]
    DidNotConverge(String),
    #[error("infeasible problem detected: {0}")]
    InfeasibleDetected(String),
    #[error("grid oracle limited to 8 dimensions, got {0}")]
    DimensionTooLarge(usize),
    #[error("starting point outside bounds at index {0}")]
    StartOutOfBounds(usize),
}

/// Differentiable surrogate for the positive part `max(x, 0)`.
///
/// `smooth_pos(x, eps) = 0.5 * (x + sqrt(x^2 + eps^2))`; converges to the
/// exact operator as `eps -> 0` and equals `eps / 2` at `x = 0`.
pub fn smooth_pos(x: f64, eps: f64) -> f64 {
    0.5 * (x + (x * x + eps * eps).sqrt())
}

pub fn smooth_pos_deriv(x: f64, eps: f64) -> f64 {
    0.5 * (1.0 + x / (x * x + eps * eps).sqrt())
}

/// Differentiable surrogate for `max_t v_t`: `tau * log sum exp(v / tau)`.
pub fn smooth_max(v: &[f64], tau: f64) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = v.iter().map(|&x| ((x - m) / tau).exp()).sum();
    m + tau * sum.ln()
}

/// Gradient of [`smooth_max`]: the softmax weights.
pub fn smooth_max_grad(v: &[f64], tau: f64) -> Vec<f64> {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = v.iter().map(|&x| ((x - m) / tau).exp()).collect();
    let sum: f64 = weights.iter().sum();
    weights.into_iter().map(|w| w / sum).collect()
}

type ScalarFn = Box<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type GradFn = Box<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// One smooth constraint `c(x)` with analytic gradient. Interpreted as
/// `c(x) = 0` or `c(x) <= 0` depending on which problem list it is in.
pub struct ConstraintFn {
    pub eval: ScalarFn,
    pub grad: GradFn,
}

impl ConstraintFn {
    pub fn new(
        eval: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        grad: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            eval: Box::new(eval),
            grad: Box::new(grad),
        }
    }

    /// Sparse linear constraint `sum_j coeff_j x_j - rhs`.
    pub fn linear(n: usize, terms: Vec<(usize, f64)>, rhs: f64) -> Self {
        let terms_grad = terms.clone();
        Self {
            eval: Box::new(move |x| {
                terms.iter().map(|&(j, c)| c * x[j]).sum::<f64>() - rhs
            }),
            grad: Box::new(move |_x| {
                let mut g = vec![0.0; n];
                for &(j, c) in &terms_grad {
                    g[j] += c;
                }
                g
            }),
        }
    }
}

/// Small dense nonlinear program over a box, with equality and inequality
/// constraints. `objective`/`gradient` are the smoothed forms the minimizer
/// works on; `exact_objective` (optional) is the non-smoothed objective used
/// by the grid oracle and for reporting.
pub struct NlpProblem {
    pub n: usize,
    pub objective: ScalarFn,
    pub gradient: GradFn,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// c(x) = 0
    pub eq: Vec<ConstraintFn>,
    /// g(x) <= 0
    pub ineq: Vec<ConstraintFn>,
    pub exact_objective: Option<ScalarFn>,
    /// Exact counterparts of `eq` for feasibility checks in the oracle.
    pub exact_eq: Vec<ScalarFn>,
    /// Exact counterparts of `ineq`.
    pub exact_ineq: Vec<ScalarFn>,
}

impl NlpProblem {
    pub fn new(
        n: usize,
        objective: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        gradient: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
        lower: Vec<f64>,
        upper: Vec<f64>,
    ) -> Self {
        assert_eq!(lower.len(), n);
        assert_eq!(upper.len(), n);
        assert!(
            lower.iter().zip(&upper).all(|(l, u)| l <= u),
            "bounds must define a nonempty box"
        );
        Self {
            n,
            objective: Box::new(objective),
            gradient: Box::new(gradient),
            lower,
            upper,
            eq: Vec::new(),
            ineq: Vec::new(),
            exact_objective: None,
            exact_eq: Vec::new(),
            exact_ineq: Vec::new(),
        }
    }

    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let eq_v = self
            .eq
            .iter()
            .map(|c| (c.eval)(x).abs())
            .fold(0.0, f64::max);
        let ineq_v = self
            .ineq
            .iter()
            .map(|c| (c.eval)(x).max(0.0))
            .fold(0.0, f64::max);
        eq_v.max(ineq_v)
    }
}

#[derive(Debug, Clone)]
pub struct SolverOptions {
    /// Smoothing for positive parts (np).
    pub eps: f64,
    /// Smoothing for max operators (np).
    pub tau: f64,
    /// Absolute feasibility tolerance; policies pass `1e-6 * sum(E)`.
    pub feas_tol: f64,
    /// Relative first-order tolerance: projected-gradient norm
    /// `<= opt_tol * (1 + |f|)`.
    pub opt_tol: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    /// Seeded multi-start perturbations in addition to the given x0.
    pub multi_starts: usize,
    pub seed: u64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            eps: 1e-3,
            tau: 1e-2,
            feas_tol: 1e-6,
            opt_tol: 1e-6,
            max_outer: 500,
            max_inner: 2000,
            multi_starts: 3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub x: Vec<f64>,
    /// Smoothed objective at `x`.
    pub f: f64,
    /// Exact objective at `x`, when the problem provides one.
    pub exact_f: Option<f64>,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub kkt_residual: f64,
    pub max_violation: f64,
}

fn project(x: &mut [f64], lower: &[f64], upper: &[f64]) {
    for i in 0..x.len() {
        x[i] = x[i].clamp(lower[i], upper[i]);
    }
}

struct AugmentedLagrangian<'a> {
    p: &'a NlpProblem,
    lambda: Vec<f64>,
    mu: Vec<f64>,
    rho: f64,
}

impl AugmentedLagrangian<'_> {
    fn value(&self, x: &[f64]) -> f64 {
        let mut v = (self.p.objective)(x);
        for (j, c) in self.p.eq.iter().enumerate() {
            let cv = (c.eval)(x);
            v += self.lambda[j] * cv + 0.5 * self.rho * cv * cv;
        }
        for (j, c) in self.p.ineq.iter().enumerate() {
            let gv = (c.eval)(x);
            let s = (self.mu[j] + self.rho * gv).max(0.0);
            v += (s * s - self.mu[j] * self.mu[j]) / (2.0 * self.rho);
        }
        v
    }

    fn grad(&self, x: &[f64]) -> Vec<f64> {
        let mut g = (self.p.gradient)(x);
        for (j, c) in self.p.eq.iter().enumerate() {
            let cv = (c.eval)(x);
            let w = self.lambda[j] + self.rho * cv;
            if w != 0.0 {
                for (gi, ci) in g.iter_mut().zip((c.grad)(x)) {
                    *gi += w * ci;
                }
            }
        }
        for (j, c) in self.p.ineq.iter().enumerate() {
            let gv = (c.eval)(x);
            let w = (self.mu[j] + self.rho * gv).max(0.0);
            if w != 0.0 {
                for (gi, ci) in g.iter_mut().zip((c.grad)(x)) {
                    *gi += w * ci;
                }
            }
        }
        g
    }
}

/// L-BFGS two-loop recursion: returns the quasi-Newton direction `-H g`.
/// `hist` holds (s, y, 1/yᵀs) triples from oldest to newest.
fn lbfgs_direction(hist: &[(Vec<f64>, Vec<f64>, f64)], g: &[f64]) -> Vec<f64> {
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut q = g.to_vec();
    let k = hist.len();
    let mut a = vec![0.0; k];
    for i in (0..k).rev() {
        let (s, y, r) = &hist[i];
        a[i] = r * dot(s, &q);
        for (qj, yj) in q.iter_mut().zip(y) {
            *qj -= a[i] * yj;
        }
    }
    if let Some((s, y, _)) = hist.last() {
        let gamma = dot(s, y) / dot(y, y).max(1e-300);
        for qj in q.iter_mut() {
            *qj *= gamma;
        }
    }
    for i in 0..k {
        let (s, y, r) = &hist[i];
        let b = r * dot(y, &q);
        for (qj, sj) in q.iter_mut().zip(s) {
            *qj += (a[i] - b) * sj;
        }
    }
    for qj in q.iter_mut() {
        *qj = -*qj;
    }
    q
}

/// Projected quasi-Newton descent with nonmonotone line search: an L-BFGS
/// direction when its projection is a descent direction, otherwise a
/// projected spectral-gradient step. Returns (iterations used, final
/// projected-gradient infinity norm, stalled). "Stalled" means iterates
/// stopped moving at machine scale: with a large penalty weight the
/// landscape curvature makes the unit-step projected gradient an unusable
/// stationarity measure even though the iterate sits at the minimizer, so
/// movement is the honest signal.
fn spg(
    al: &AugmentedLagrangian,
    x: &mut Vec<f64>,
    lower: &[f64],
    upper: &[f64],
    tol: f64,
    max_iter: usize,
) -> (usize, f64, bool) {
    const MEMORY: usize = 10;
    const LBFGS_MEMORY: usize = 10;
    let mut f = al.value(x);
    let mut g = al.grad(x);
    let mut recent = vec![f];
    let mut alpha = 1.0;
    let mut pg_norm = f64::INFINITY;
    let mut stall_count = 0;
    let mut hist: Vec<(Vec<f64>, Vec<f64>, f64)> = Vec::new();
    for iter in 0..max_iter {
        // Projected gradient step and stationarity measure.
        let mut trial: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi - gi).collect();
        project(&mut trial, lower, upper);
        pg_norm = trial
            .iter()
            .zip(x.iter())
            .map(|(t, xi)| (t - xi).abs())
            .fold(0.0, f64::max);
        if pg_norm <= tol {
            return (iter, pg_norm, false);
        }

        // Prefer the quasi-Newton direction; keep it only if its projection
        // onto the box still points downhill.
        let mut d = Vec::new();
        let mut gd = f64::INFINITY;
        if !hist.is_empty() {
            let raw = lbfgs_direction(&hist, &g);
            let mut cand: Vec<f64> =
                x.iter().zip(&raw).map(|(xi, di)| xi + di).collect();
            project(&mut cand, lower, upper);
            for (ci, xi) in cand.iter_mut().zip(x.iter()) {
                *ci -= xi;
            }
            let cgd: f64 = g.iter().zip(&cand).map(|(gi, di)| gi * di).sum();
            if cgd < 0.0 {
                d = cand;
                gd = cgd;
            }
        }
        if d.is_empty() {
            let mut cand: Vec<f64> =
                x.iter().zip(&g).map(|(xi, gi)| xi - alpha * gi).collect();
            project(&mut cand, lower, upper);
            for (ci, xi) in cand.iter_mut().zip(x.iter()) {
                *ci -= xi;
            }
            gd = g.iter().zip(&cand).map(|(gi, di)| gi * di).sum();
            d = cand;
        }
        if gd >= 0.0 {
            // Neither direction gives descent; reset and retry from scratch.
            alpha = 1.0;
            hist.clear();
            continue;
        }
        let f_ref = recent.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut step = 1.0;
        let mut x_new;
        let mut f_new;
        loop {
            x_new = x
                .iter()
                .zip(&d)
                .map(|(xi, di)| xi + step * di)
                .collect::<Vec<f64>>();
            f_new = al.value(&x_new);
            if f_new <= f_ref + 1e-4 * step * gd || step < 1e-12 {
                break;
            }
            step *= 0.5;
        }
        let g_new = al.grad(&x_new);
        let s_vec: Vec<f64> = x_new.iter().zip(x.iter()).map(|(a, b)| a - b).collect();
        let y_vec: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let ss: f64 = s_vec.iter().map(|v| v * v).sum();
        let yy: f64 = y_vec.iter().map(|v| v * v).sum();
        let sy: f64 = s_vec.iter().zip(&y_vec).map(|(a, b)| a * b).sum();
        // Barzilai-Borwein step length for the spectral fallback.
        alpha = if sy > 1e-16 {
            (ss / sy).clamp(1e-10, 1e10)
        } else {
            1.0
        };
        // Curvature pairs feed the quasi-Newton model; skip near-singular ones.
        if sy > 1e-10 * (ss * yy).sqrt() && sy.is_finite() {
            hist.push((s_vec, y_vec, 1.0 / sy));
            if hist.len() > LBFGS_MEMORY {
                hist.remove(0);
            }
        }
        let movement = x
            .iter()
            .zip(&x_new)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let x_scale = x_new.iter().cloned().map(f64::abs).fold(1.0, f64::max);
        *x = x_new;
        f = f_new;
        g = g_new;
        recent.push(f);
        if recent.len() > MEMORY {
            recent.remove(0);
        }
        if movement <= 1e-12 * x_scale {
            stall_count += 1;
            if stall_count >= 3 {
                return (iter + 1, pg_norm, true);
            }
        } else {
            stall_count = 0;
        }
    }
    (max_iter, pg_norm, false)
}

fn solve_single(
    p: &NlpProblem,
    x0: &[f64],
    opts: &SolverOptions,
) -> (Solution, bool) {
    let mut al = AugmentedLagrangian {
        p,
        lambda: vec![0.0; p.eq.len()],
        mu: vec![0.0; p.ineq.len()],
        rho: 10.0,
    };
    let mut x = x0.to_vec();
    project(&mut x, &p.lower, &p.upper);
    let mut inner_total = 0;
    let mut inner_tol = 1e-2 * (1.0 + (p.objective)(&x).abs());
    let mut prev_violation = f64::INFINITY;
    let mut prev_f = f64::INFINITY;
    let mut stagnant = 0usize;
    let mut converged = false;
    let mut outer_used = 0;
    let mut pg = f64::INFINITY;
    for outer in 0..opts.max_outer {
        outer_used = outer + 1;
        let budget = opts.max_inner.min(opts.max_inner.max(1));
        let (used, pg_norm, stalled) = spg(&al, &mut x, &p.lower, &p.upper, inner_tol, budget);
        inner_total += used;
        pg = pg_norm;
        let violation = p.max_violation(&x);
        let f_scale = 1.0 + (p.objective)(&x).abs();
        if std::env::var_os("DCDR_SOLVER_TRACE").is_some() {
            eprintln!(
                "outer {outer}: rho {:.1e} viol {:.2e} pg {:.3e} f {:.6} inner {used} tol {:.1e} mu_max {:.2e}",
                al.rho,
                violation,
                pg_norm,
                (p.objective)(&x),
                inner_tol,
                al.mu.iter().cloned().fold(0.0, f64::max),
            );
        }
        let tight = inner_tol <= opts.opt_tol * f_scale + 1e-15;
        // A feasible iterate whose objective has stopped moving across outer
        // iterations is accepted even when the projected gradient stays large:
        // non-smooth ridges (hard-max-like objectives at high penalty weight)
        // keep the gradient norm high at the solution.
        let f_now = (p.objective)(&x);
        if violation <= opts.feas_tol && tight && (f_now - prev_f).abs() <= 1e-8 * f_scale {
            stagnant += 1;
        } else {
            stagnant = 0;
        }
        prev_f = f_now;
        if violation <= opts.feas_tol
            && tight
            && (pg_norm <= opts.opt_tol * f_scale || stalled || stagnant >= 3)
        {
            converged = true;
            break;
        }
        // Multiplier updates.
        for (j, c) in p.eq.iter().enumerate() {
            al.lambda[j] += al.rho * (c.eval)(&x);
        }
        for (j, c) in p.ineq.iter().enumerate() {
            al.mu[j] = (al.mu[j] + al.rho * (c.eval)(&x)).max(0.0);
        }
        // Grow the penalty weight while infeasible; faster when feasibility
        // stalls. Multiplier estimates ride on rho, so growth is also what
        // lets them reach large KKT multipliers within the outer-iteration
        // budget. Once the iterate is deeply feasible the multipliers carry
        // the constraints on their own, so rho is decayed back down: a large
        // rho only ill-conditions the subproblem.
        if violation > opts.feas_tol {
            let growth = if violation > 0.25 * prev_violation { 10.0 } else { 2.0 };
            al.rho = (al.rho * growth).min(1e12);
        } else if violation <= 0.2 * opts.feas_tol {
            al.rho = (al.rho * 0.5).max(10.0);
        }
        prev_violation = violation;
        inner_tol = (inner_tol * 0.3).max(opts.opt_tol * f_scale);
        if inner_total >= opts.max_inner * opts.max_outer {
            break;
        }
    }
    let f = (p.objective)(&x);
    let exact_f = p.exact_objective.as_ref().map(|e| e(&x));
    (
        Solution {
            f,
            exact_f,
            max_violation: p.max_violation(&x),
            kkt_residual: pg,
            outer_iterations: outer_used,
            inner_iterations: inner_total,
            x,
        },
        converged,
    )
}

/// Minimizes `p` from `x0` with seeded multi-start perturbations; returns the
/// best feasible stationary point found.
pub fn minimize(p: &NlpProblem, x0: &[f64], opts: &SolverOptions) -> Result<Solution, SolverError> {
    for i in 0..p.n {
        if x0[i] < p.lower[i] - 1e-12 || x0[i] > p.upper[i] + 1e-12 {
            return Err(SolverError::StartOutOfBounds(i));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best: Option<(Solution, bool)> = None;
    for start in 0..=opts.multi_starts {
        let mut start_x = x0.to_vec();
        if start > 0 {
            for i in 0..p.n {
                let span = p.upper[i] - p.lower[i];
                if span > 0.0 {
                    start_x[i] += rng.gen_range(-0.25..0.25) * span;
                }
            }
            project(&mut start_x, &p.lower, &p.upper);
        }
        let (sol, converged) = solve_single(p, &start_x, opts);
        let better = match &best {
            None => true,
            Some((b, b_conv)) => {
                let sol_feasible = sol.max_violation <= opts.feas_tol;
                let b_feasible = b.max_violation <= opts.feas_tol;
                match (sol_feasible, b_feasible) {
                    (true, false) => true,
                    (false, true) => false,
                    (true, true) => sol.f < b.f || (!b_conv && converged && sol.f <= b.f),
                    (false, false) => sol.max_violation < b.max_violation,
                }
            }
        };
        if better {
            best = Some((sol, converged));
        }
    }
    let (sol, _) = best.expect("at least one start");
    if sol.max_violation > opts.feas_tol {
        return Err(SolverError::DidNotConverge(format!(
            "constraint violation {} above tolerance {}",
            sol.max_violation, opts.feas_tol
        )));
    }
    // A feasible point that exhausted its iteration budget is returned as a
    // best-effort optimum: smoothed schedule objectives keep residual gradient
    // kinks that a projected-gradient method cannot polish below tolerance,
    // and feasibility is the hard requirement. `kkt_residual` in the solution
    // records how far first-order optimality got.
    Ok(sol)
}

#[derive(Debug, Clone)]
pub struct GridOracleResult {
    pub x: Vec<f64>,
    pub f: f64,
    /// Largest per-dimension grid spacing, for tolerance bookkeeping.
    pub max_step: f64,
}

/// Exhaustive feasible-grid search with exact (non-smoothed) operators.
///
/// Equality constraints are accepted within `eq_tol`; callers should scale it
/// with the grid spacing since a coarse grid rarely intersects an equality
/// manifold exactly.
pub fn grid_oracle(
    p: &NlpProblem,
    steps_per_dim: usize,
    eq_tol: f64,
    ineq_tol: f64,
) -> Result<GridOracleResult, SolverError> {
    if p.n > 8 {
        return Err(SolverError::DimensionTooLarge(p.n));
    }
    assert!(steps_per_dim >= 2);
    let objective = p.exact_objective.as_ref().unwrap_or(&p.objective);
    let mut idx = vec![0usize; p.n];
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut x = vec![0.0; p.n];
    let mut max_step = 0.0f64;
    for i in 0..p.n {
        max_step = max_step.max((p.upper[i] - p.lower[i]) / (steps_per_dim - 1) as f64);
    }
    loop {
        for i in 0..p.n {
            let frac = idx[i] as f64 / (steps_per_dim - 1) as f64;
            x[i] = p.lower[i] + frac * (p.upper[i] - p.lower[i]);
        }
        let feasible = if p.exact_eq.is_empty() && p.exact_ineq.is_empty() {
            p.eq.iter().all(|c| (c.eval)(&x).abs() <= eq_tol)
                && p.ineq.iter().all(|c| (c.eval)(&x) <= ineq_tol)
        } else {
            p.exact_eq.iter().all(|c| c(&x).abs() <= eq_tol)
                && p.exact_ineq.iter().all(|c| c(&x) <= ineq_tol)
        };
        if feasible {
            let f = objective(&x);
            if best.as_ref().is_none_or(|(_, bf)| f < *bf) {
                best = Some((x.clone(), f));
            }
        }
        // Mixed-radix increment.
        let mut carry = true;
        for i in (0..p.n).rev() {
            if carry {
                idx[i] += 1;
                if idx[i] == steps_per_dim {
                    idx[i] = 0;
                } else {
                    carry = false;
                }
            }
        }
        if carry {
            break;
        }
    }
    let (x, f) =
        best.ok_or_else(|| SolverError::InfeasibleDetected("no feasible grid point".into()))?;
    Ok(GridOracleResult { x, f, max_step })
}

/// Max relative error between an analytic gradient and central finite
/// differences at `x`.
pub fn check_gradient(
    f: impl Fn(&[f64]) -> f64,
    grad: impl Fn(&[f64]) -> Vec<f64>,
    x: &[f64],
    h: f64,
) -> f64 {
    let g = grad(x);
    let mut worst = 0.0f64;
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        xp[i] = x[i] + h;
        let fp = f(&xp);
        xp[i] = x[i] - h;
        let fm = f(&xp);
        xp[i] = x[i];
        let fd = (fp - fm) / (2.0 * h);
        let err = (fd - g[i]).abs() / g[i].abs().max(1.0);
        worst = worst.max(err);
    }
    worst
}
