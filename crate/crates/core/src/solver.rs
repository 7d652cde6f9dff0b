//! Projected mirror descent for the fused unbalanced entropic GW problem.
//!
//! Minimises, over plans whose rows sum to `p`,
//!
//! ```text
//! alpha <C^v T C^a, T> + (1 - alpha) <C^k, T> + lambda KL(T^T 1 || q) + eps sum T log T
//! ```
//!
//! Each iteration takes a multiplicative (KL-geometry) step
//! `T <- T * exp(-phi * grad)` and rescales every row back onto `p`. All work
//! per iteration is `O(N K)`; the structural product comes from
//! [`gw_structure_apply_into`].

use ndarray::{Array1, ArrayView2, Axis, CowArray, Ix2};
use serde::{Deserialize, Serialize};

use crate::costs::{gw_structure_apply, gw_structure_apply_into, validate_cost, CostSet};
use crate::{AsotError, Matrix, Result};

/// Floor applied to column masses before taking logs in the KL term.
pub const MASS_FLOOR: f64 = 1e-30;
/// Bound on the magnitude of the mirror-step exponent.
pub const EXPONENT_CLIP: f64 = 50.0;
/// Plan-change threshold reported as converged when early stopping is off.
pub const CONVERGED_TOL: f64 = 1e-9;
/// Default step size is this multiple of `1 / max(epsilon, lambda)`.
pub const DEFAULT_STEP_SCALE: f64 = 1.0;
/// Objective rises smaller than this (relative) do not count towards the
/// step-halving guard.
pub const INCREASE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Weight of the structural (GW) term, in `[0, 1]`.
    pub alpha: f64,
    /// Weight of the KL penalty on the column marginal.
    pub lambda: f64,
    /// Entropy weight.
    pub epsilon: f64,
    /// Band radius of the frame-side structural cost, as a fraction of `N`.
    pub radius: f64,
    /// Mirror-descent step size. `None` uses `DEFAULT_STEP_SCALE / max(epsilon, lambda)`.
    pub step_size: Option<f64>,
    pub n_iter: usize,
    /// Stop once the max-abs plan change falls below this; 0 disables.
    pub stop_tol: f64,
    /// Halve the step after two consecutive objective increases.
    pub adaptive_step: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self::inference()
    }
}

impl SolverConfig {
    /// Settings used to decode segmentations from learned embeddings.
    pub fn inference() -> Self {
        Self {
            alpha: 0.6,
            lambda: 0.01,
            epsilon: 0.04,
            radius: 0.04,
            step_size: None,
            n_iter: 25,
            stop_tol: 0.0,
            adaptive_step: true,
        }
    }

    /// Settings used to produce pseudo-labels during self-training.
    pub fn pseudo_labelling() -> Self {
        Self {
            alpha: 0.3,
            lambda: 0.15,
            epsilon: 0.07,
            ..Self::inference()
        }
    }

    /// Settings for post-processing supervised logits.
    pub fn supervised_logits() -> Self {
        Self {
            alpha: 0.4,
            lambda: 0.05,
            epsilon: 0.06,
            radius: 0.01,
            ..Self::inference()
        }
    }

    pub fn effective_step_size(&self) -> f64 {
        self.step_size.unwrap_or(DEFAULT_STEP_SCALE / self.epsilon.max(self.lambda))
    }

    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: String| if ok { Ok(()) } else { Err(AsotError::InvalidInput(msg)) };
        check((0.0..=1.0).contains(&self.alpha), format!("alpha must lie in [0, 1], got {}", self.alpha))?;
        check(self.lambda >= 0.0 && self.lambda.is_finite(), format!("lambda must be >= 0, got {}", self.lambda))?;
        check(self.epsilon > 0.0 && self.epsilon.is_finite(), format!("epsilon must be > 0, got {}", self.epsilon))?;
        check((0.0..=1.0).contains(&self.radius), format!("radius must lie in [0, 1], got {}", self.radius))?;
        let phi = self.effective_step_size();
        check(phi > 0.0 && phi.is_finite(), format!("step size must be > 0, got {phi}"))?;
        check(self.n_iter >= 1, "n_iter must be at least 1".to_string())?;
        check(self.stop_tol >= 0.0, format!("stop_tol must be >= 0, got {}", self.stop_tol))?;
        Ok(())
    }
}

/// A coupling between frames (rows) and actions (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub plan: Matrix,
    pub row_marginal: Array1<f64>,
    pub col_target: Array1<f64>,
}

impl TransportPlan {
    /// Wraps a plan with uniform marginals `p = 1/N`, `q = 1/K`.
    pub fn uniform_marginals(plan: Matrix) -> Self {
        let (n, k) = plan.dim();
        Self {
            plan,
            row_marginal: Array1::from_elem(n, 1.0 / n as f64),
            col_target: Array1::from_elem(k, 1.0 / k as f64),
        }
    }

    pub fn n_frames(&self) -> usize {
        self.plan.nrows()
    }

    pub fn n_actions(&self) -> usize {
        self.plan.ncols()
    }

    pub fn column_mass(&self) -> Array1<f64> {
        self.plan.sum_axis(Axis(0))
    }

    /// Max-abs deviation of the row sums from `p`.
    pub fn row_marginal_error(&self) -> f64 {
        self.plan
            .sum_axis(Axis(1))
            .iter()
            .zip(self.row_marginal.iter())
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    /// Objective after each iteration.
    pub objective_trace: Vec<f64>,
    pub n_iter_run: usize,
    pub converged: bool,
    /// Max-abs plan change of the last iteration.
    pub last_change: f64,
    /// Number of exponent entries that hit the clip bound.
    pub clip_events: usize,
    /// Step size in effect at the end (smaller than the initial one if the
    /// adaptive guard fired).
    pub final_step_size: f64,
}

fn flat(m: &Matrix) -> &[f64] {
    m.as_slice().expect("standard layout")
}

fn xlogx(x: f64) -> f64 {
    if x > 0.0 {
        x * x.ln()
    } else {
        0.0
    }
}

fn kl_term(mass: &Array1<f64>, q: &Array1<f64>) -> f64 {
    mass.iter()
        .zip(q.iter())
        .map(|(&m, &qj)| if m > 0.0 { m * (m.max(MASS_FLOOR) / qj).ln() } else { 0.0 })
        .sum()
}

fn check_shapes(cost: &CostSet, plan: &TransportPlan) -> Result<()> {
    let shape = cost.kot_cost.dim();
    if plan.plan.dim() != shape || plan.row_marginal.len() != shape.0 || plan.col_target.len() != shape.1 {
        return Err(AsotError::invalid(format!(
            "plan {:?} (p: {}, q: {}) does not match cost {:?}",
            plan.plan.dim(),
            plan.row_marginal.len(),
            plan.col_target.len(),
            shape
        )));
    }
    Ok(())
}

/// Total objective value at `plan`, with `0 log 0 = 0`.
pub fn objective(cost: &CostSet, plan: &TransportPlan, cfg: &SolverConfig) -> Result<f64> {
    check_shapes(cost, plan)?;
    let t = plan.plan.view();
    if t.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(AsotError::invalid("plan entries must be finite and nonnegative"));
    }
    let structure = gw_structure_apply(t, cost.band_radius);
    let gw = (&structure * &t).sum();
    let linear = (&cost.kot_cost * &t).sum();
    let kl = kl_term(&plan.column_mass(), &plan.col_target);
    let neg_entropy: f64 = t.iter().map(|&v| xlogx(v)).sum();
    Ok(cfg.alpha * gw + (1.0 - cfg.alpha) * linear + cfg.lambda * kl + cfg.epsilon * neg_entropy)
}

/// Gradient of [`objective`] with respect to the plan entries (ambient, not
/// projected). Requires a strictly positive plan.
pub fn gradient(cost: &CostSet, plan: &TransportPlan, cfg: &SolverConfig) -> Result<Matrix> {
    check_shapes(cost, plan)?;
    if plan.plan.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(AsotError::invalid("gradient requires a strictly positive finite plan"));
    }
    let structure = gw_structure_apply(plan.plan.view(), cost.band_radius);
    let log_plan = plan.plan.mapv(f64::ln);
    let kl_cols = kl_column_gradient(&plan.column_mass(), &plan.col_target);
    let mut grad = Matrix::zeros(plan.plan.dim());
    fill_gradient(&mut grad, cost.kot_cost.view(), &structure, &log_plan, &kl_cols, cfg);
    Ok(grad)
}

fn kl_column_gradient(mass: &Array1<f64>, q: &Array1<f64>) -> Vec<f64> {
    mass.iter()
        .zip(q.iter())
        .map(|(&m, &qj)| (m.max(MASS_FLOOR) / qj).ln() + 1.0)
        .collect()
}

fn fill_gradient(
    grad: &mut Matrix,
    cost: ArrayView2<'_, f64>,
    structure: &Matrix,
    log_plan: &Matrix,
    kl_cols: &[f64],
    cfg: &SolverConfig,
) {
    let (a, lam, eps) = (cfg.alpha, cfg.lambda, cfg.epsilon);
    let k = kl_cols.len();
    if k == 0 {
        return;
    }
    let cost = cost.as_standard_layout();
    let col_terms: Vec<f64> = kl_cols.iter().map(|&g| lam * g + eps).collect();
    let rows = grad
        .as_slice_mut()
        .expect("standard layout")
        .chunks_exact_mut(k)
        .zip(cost.as_slice().expect("standard layout").chunks_exact(k))
        .zip(structure.as_slice().expect("standard layout").chunks_exact(k))
        .zip(log_plan.as_slice().expect("standard layout").chunks_exact(k));
    for (((g, c), st), lp) in rows {
        for j in 0..k {
            g[j] = 2.0 * a * st[j] + (1.0 - a) * c[j] + col_terms[j] + eps * lp[j];
        }
    }
}

/// Outcome of one mirror-descent iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub iteration: usize,
    pub objective: f64,
    pub max_change: f64,
}

/// Iteration-level driver of the solver. [`solve`] runs it to completion; it
/// is public so callers can observe the plan after every iteration.
pub struct MirrorDescent<'a> {
    cost: CowArray<'a, f64, Ix2>,
    cfg: SolverConfig,
    radius: f64,
    p: Array1<f64>,
    q: Array1<f64>,
    log_p: Vec<f64>,
    log_plan: Matrix,
    plan: Matrix,
    structure: Matrix,
    grad: Matrix,
    col_mass: Array1<f64>,
    objective: f64,
    step_size: f64,
    increases: usize,
    iteration: usize,
    clip_events: usize,
    trace: Vec<f64>,
    last_change: f64,
}

impl<'a> MirrorDescent<'a> {
    /// Starts from `T = p q^T` with uniform marginals.
    pub fn new(cost: ArrayView2<'a, f64>, cfg: &SolverConfig) -> Result<Self> {
        let (n, k) = cost.dim();
        let p = Array1::from_elem(n.max(1), 1.0 / n.max(1) as f64);
        let q = Array1::from_elem(k.max(1), 1.0 / k.max(1) as f64);
        Self::with_marginals(cost, p, q, cfg)
    }

    pub fn with_marginals(
        cost: ArrayView2<'a, f64>,
        p: Array1<f64>,
        q: Array1<f64>,
        cfg: &SolverConfig,
    ) -> Result<Self> {
        validate_cost(cost)?;
        cfg.validate()?;
        let (n, k) = cost.dim();
        if p.len() != n || q.len() != k {
            return Err(AsotError::invalid(format!(
                "marginal lengths ({}, {}) do not match cost shape ({n}, {k})",
                p.len(),
                q.len()
            )));
        }
        if p.iter().chain(q.iter()).any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(AsotError::invalid("marginals must be strictly positive"));
        }
        let plan = Matrix::from_shape_fn((n, k), |(i, j)| p[i] * q[j]);
        let log_plan = plan.mapv(f64::ln);
        let structure = gw_structure_apply(plan.view(), cfg.radius);
        let col_mass = plan.sum_axis(Axis(0));
        let mut solver = Self {
            cost: if cost.is_standard_layout() {
                CowArray::from(cost)
            } else {
                CowArray::from(cost.as_standard_layout().into_owned())
            },
            col_mass,
            cfg: cfg.clone(),
            radius: cfg.radius,
            log_p: p.iter().map(|v| v.ln()).collect(),
            p,
            q,
            log_plan,
            plan,
            structure,
            grad: Matrix::zeros((n, k)),
            objective: 0.0,
            step_size: cfg.effective_step_size(),
            increases: 0,
            iteration: 0,
            clip_events: 0,
            trace: Vec::with_capacity(cfg.n_iter),
            last_change: f64::INFINITY,
        };
        solver.objective = solver.current_objective();
        Ok(solver)
    }

    fn current_objective(&self) -> f64 {
        let cfg = &self.cfg;
        let mut gw = 0.0;
        let mut linear = 0.0;
        let mut neg_entropy = 0.0;
        let cost = self.cost.as_slice().expect("standard layout");
        for (((&t, &s), &c), &lt) in flat(&self.plan)
            .iter()
            .zip(flat(&self.structure))
            .zip(cost)
            .zip(flat(&self.log_plan))
        {
            gw += s * t;
            linear += c * t;
            neg_entropy += t * lt;
        }
        let kl = if cfg.lambda > 0.0 { kl_term(&self.col_mass, &self.q) } else { 0.0 };
        cfg.alpha * gw + (1.0 - cfg.alpha) * linear + cfg.lambda * kl + cfg.epsilon * neg_entropy
    }

    /// Performs one update-and-project iteration.
    pub fn step(&mut self) -> Result<StepInfo> {
        let k = self.q.len();
        let kl_cols = if self.cfg.lambda > 0.0 {
            kl_column_gradient(&self.col_mass, &self.q)
        } else {
            vec![0.0; k]
        };
        fill_gradient(&mut self.grad, self.cost.view(), &self.structure, &self.log_plan, &kl_cols, &self.cfg);

        let phi = self.step_size;
        let mut max_change = 0.0f64;
        let mut clip_events = 0;
        let mut col_mass = vec![0.0; k];
        let rows = self
            .log_plan
            .as_slice_mut()
            .expect("standard layout")
            .chunks_exact_mut(k)
            .zip(self.plan.as_slice_mut().expect("standard layout").chunks_exact_mut(k))
            .zip(self.grad.as_slice().expect("standard layout").chunks_exact(k))
            .zip(self.log_p.iter().zip(self.p.iter()));
        let mut scratch = vec![0.0; k];
        for (((lrow, prow), grow), (&log_p, &p_i)) in rows {
            // Row-constant offsets cancel in the projection, so the exponent is
            // shifted to have maximum zero before clipping.
            let shift = grow.iter().fold(f64::INFINITY, |m, &g| m.min(g));
            let mut row_max = f64::NEG_INFINITY;
            for (l, &g) in lrow.iter_mut().zip(grow) {
                let mut e = -phi * (g - shift);
                if e < -EXPONENT_CLIP {
                    e = -EXPONENT_CLIP;
                    clip_events += 1;
                }
                *l += e;
                row_max = row_max.max(*l);
            }
            let mut total = 0.0;
            for (x, &l) in scratch.iter_mut().zip(lrow.iter()) {
                *x = (l - row_max).exp();
                total += *x;
            }
            let offset = log_p - row_max - total.ln();
            let scale = p_i / total;
            for (((l, t), m), &x) in lrow.iter_mut().zip(prow.iter_mut()).zip(col_mass.iter_mut()).zip(&scratch) {
                *l += offset;
                let next = x * scale;
                max_change = max_change.max((next - *t).abs());
                *t = next;
                *m += next;
            }
        }
        self.clip_events += clip_events;
        self.col_mass = Array1::from(col_mass);
        self.iteration += 1;
        if !max_change.is_finite() || self.log_plan.iter().any(|v| !v.is_finite()) {
            return Err(AsotError::Numerical {
                iteration: self.iteration,
                detail: "non-finite entry in the transport plan".into(),
            });
        }

        gw_structure_apply_into(self.plan.view(), self.radius, &mut self.structure);
        let objective = self.current_objective();
        if !objective.is_finite() {
            return Err(AsotError::Numerical {
                iteration: self.iteration,
                detail: format!("objective became {objective}"),
            });
        }
        if self.cfg.adaptive_step {
            if objective > self.objective + INCREASE_TOL * self.objective.abs().max(1.0) {
                self.increases += 1;
                if self.increases >= 2 {
                    self.step_size *= 0.5;
                    self.increases = 0;
                }
            } else {
                self.increases = 0;
            }
        }
        self.objective = objective;
        self.trace.push(objective);
        self.last_change = max_change;
        Ok(StepInfo { iteration: self.iteration, objective, max_change })
    }

    pub fn plan(&self) -> ArrayView2<'_, f64> {
        self.plan.view()
    }

    pub fn objective(&self) -> f64 {
        self.objective
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn step_size(&self) -> f64 {
        self.step_size
    }

    /// Runs until the iteration budget is spent or the early-stop test fires.
    pub fn run(mut self) -> Result<(TransportPlan, SolveReport)> {
        let mut stopped_early = false;
        while self.iteration < self.cfg.n_iter {
            let info = self.step()?;
            if self.cfg.stop_tol > 0.0 && info.max_change < self.cfg.stop_tol {
                stopped_early = true;
                break;
            }
        }
        let threshold = if self.cfg.stop_tol > 0.0 { self.cfg.stop_tol } else { CONVERGED_TOL };
        let report = SolveReport {
            n_iter_run: self.iteration,
            converged: stopped_early || self.last_change < threshold,
            last_change: self.last_change,
            clip_events: self.clip_events,
            final_step_size: self.step_size,
            objective_trace: self.trace,
        };
        let plan = TransportPlan { plan: self.plan, row_marginal: self.p, col_target: self.q };
        Ok((plan, report))
    }
}

/// Solves one instance with uniform marginals.
pub fn solve(cost: ArrayView2<'_, f64>, cfg: &SolverConfig) -> Result<(TransportPlan, SolveReport)> {
    MirrorDescent::new(cost, cfg)?.run()
}

/// Solves independent instances; the output order matches the input.
pub fn solve_batch(costs: &[Matrix], cfg: &SolverConfig) -> Result<Vec<(TransportPlan, SolveReport)>> {
    let one = |(index, c): (usize, &Matrix)| {
        solve(c.view(), cfg).map_err(|e| AsotError::Batch { index, source: Box::new(e) })
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        costs.par_iter().enumerate().map(one).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        costs.iter().enumerate().map(one).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::costs::dense;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(n: usize, k: usize, lo: f64, hi: f64, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, k), |_| rng.random_range(lo..hi))
    }

    fn cfg(alpha: f64, lambda: f64, epsilon: f64, radius: f64) -> SolverConfig {
        SolverConfig { alpha, lambda, epsilon, radius, ..SolverConfig::inference() }
    }

    /// Term-by-term evaluation with explicit structural matrices.
    fn dense_objective(cost: &CostSet, t: &TransportPlan, c: &SolverConfig) -> f64 {
        let plan = &t.plan;
        let (n, k) = plan.dim();
        let cv = dense::frame_cost(n, cost.band_radius);
        let ca = dense::action_cost(k);
        let mut gw = 0.0;
        for i in 0..n {
            for kk in 0..n {
                for j in 0..k {
                    for l in 0..k {
                        gw += cv[[i, kk]] * ca[[j, l]] * plan[[i, j]] * plan[[kk, l]];
                    }
                }
            }
        }
        let linear: f64 = (&cost.kot_cost * plan).sum();
        let mut kl = 0.0;
        for j in 0..k {
            let m: f64 = plan.column(j).sum();
            kl += m * (m / t.col_target[j]).ln();
        }
        let ent: f64 = plan.iter().map(|&v| v * v.ln()).sum();
        c.alpha * gw + (1.0 - c.alpha) * linear + c.lambda * kl + c.epsilon * ent
    }

    #[test]
    fn objective_uniform_plan_entropy_only() {
        let cost = CostSet::new(Array2::zeros((2, 2)), 0.5).unwrap();
        let plan = TransportPlan::uniform_marginals(Array2::from_elem((2, 2), 0.25));
        let c = cfg(0.0, 0.0, 0.1, 0.5);
        let v = objective(&cost, &plan, &c).unwrap();
        assert_abs_diff_eq!(v, 0.1 * (0.25f64).ln(), epsilon = 1e-15);
    }

    #[test]
    fn objective_single_action_has_no_gw() {
        let t = random_matrix(12, 1, 0.01, 1.0, 1);
        let plan = TransportPlan::uniform_marginals(t.clone());
        let cost = CostSet::new(Array2::zeros((12, 1)), 0.5).unwrap();
        let c = cfg(1.0, 0.0, 0.2, 0.5);
        let v = objective(&cost, &plan, &c).unwrap();
        let expected: f64 = 0.2 * t.iter().map(|&x| x * x.ln()).sum::<f64>();
        assert_abs_diff_eq!(v, expected, epsilon = 1e-12);
    }

    #[test]
    fn objective_handles_zero_entries() {
        let cost = CostSet::new(array![[0.5, 1.0], [1.0, 0.5]], 0.5).unwrap();
        let plan = TransportPlan::uniform_marginals(array![[0.5, 0.0], [0.0, 0.5]]);
        let v = objective(&cost, &plan, &cfg(0.0, 1.0, 1.0, 0.5)).unwrap();
        assert!(v.is_finite());
    }

    #[test]
    fn objective_matches_dense_evaluation() {
        for seed in 0..5 {
            let (n, k) = (9, 3);
            let cost = CostSet::new(random_matrix(n, k, 0.0, 2.0, seed), 0.3).unwrap();
            let mut plan = TransportPlan::uniform_marginals(random_matrix(n, k, 0.01, 0.2, seed + 100));
            plan.col_target = array![0.2, 0.3, 0.5];
            let c = cfg(0.4, 0.16, 0.07, 0.3);
            let fast = objective(&cost, &plan, &c).unwrap();
            let slow = dense_objective(&cost, &plan, &c);
            assert_abs_diff_eq!(fast, slow, epsilon = 1e-12);
        }
    }

    #[test]
    fn gradient_isolated_linear_and_entropy_terms() {
        let t = random_matrix(6, 3, 0.01, 0.3, 3);
        let ck = random_matrix(6, 3, 0.0, 2.0, 4);
        let cost = CostSet::new(ck.clone(), 0.5).unwrap();
        let plan = TransportPlan::uniform_marginals(t.clone());
        let g = gradient(&cost, &plan, &cfg(0.0, 0.0, 0.05, 0.5)).unwrap();
        let expected = &ck + &t.mapv(|v| 0.05 * (v.ln() + 1.0));
        assert_abs_diff_eq!(g, expected, epsilon = 1e-14);
        let g0 = gradient(&cost, &plan, &cfg(0.0, 0.0, 1e-300, 0.5)).unwrap();
        assert_abs_diff_eq!(g0, ck, epsilon = 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (n, k) = (20, 4);
        let cost = CostSet::new(random_matrix(n, k, 0.0, 2.0, 7), 0.1).unwrap();
        let c = cfg(0.3, 0.16, 0.07, 0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..3 {
            let t = Array2::from_shape_fn((n, k), |_| rng.random_range(0.002..0.03));
            let plan = TransportPlan::uniform_marginals(t);
            let g = gradient(&cost, &plan, &c).unwrap();
            let h = 1e-7;
            let mut num = 0.0;
            let mut den = 0.0;
            for i in 0..n {
                for j in 0..k {
                    let mut up = plan.clone();
                    up.plan[[i, j]] += h;
                    let mut dn = plan.clone();
                    dn.plan[[i, j]] -= h;
                    let fd = (objective(&cost, &up, &c).unwrap() - objective(&cost, &dn, &c).unwrap()) / (2.0 * h);
                    num += (fd - g[[i, j]]).powi(2);
                    den += g[[i, j]].powi(2);
                }
            }
            assert!((num / den).sqrt() < 1e-5, "rel err {}", (num / den).sqrt());
        }
    }

    #[test]
    fn gradient_rejects_nonpositive_plan() {
        let cost = CostSet::new(Array2::zeros((2, 2)), 0.5).unwrap();
        let plan = TransportPlan::uniform_marginals(array![[0.5, 0.0], [0.25, 0.25]]);
        assert!(gradient(&cost, &plan, &cfg(0.0, 0.0, 0.1, 0.5)).is_err());
    }

    #[test]
    fn single_frame_single_action() {
        let (plan, report) = solve(array![[0.7]].view(), &SolverConfig::default()).unwrap();
        assert_eq!(plan.plan, array![[1.0]]);
        assert_eq!(report.n_iter_run, 25);
        assert_eq!(report.objective_trace.len(), 25);
    }

    #[test]
    fn entropic_limit_is_row_softmax() {
        let eps = 0.05;
        let ck = random_matrix(30, 6, 0.0, 2.0, 11);
        let c = SolverConfig { n_iter: 200, ..cfg(0.0, 0.0, eps, 0.04) };
        let (plan, _) = solve(ck.view(), &c).unwrap();
        for i in 0..30 {
            let z: f64 = ck.row(i).iter().map(|v| (-v / eps).exp()).sum();
            for j in 0..6 {
                let expected = (-ck[[i, j]] / eps).exp() / z / 30.0;
                assert_abs_diff_eq!(plan.plan[[i, j]], expected, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn early_stop_and_convergence_flag() {
        let ck = random_matrix(30, 4, 0.0, 2.0, 12);
        let c = SolverConfig { stop_tol: 1e-12, n_iter: 500, ..cfg(0.0, 0.0, 0.05, 0.04) };
        let (_, report) = solve(ck.view(), &c).unwrap();
        assert!(report.converged);
        assert!(report.n_iter_run < 500);
        assert_eq!(report.objective_trace.len(), report.n_iter_run);
    }

    #[test]
    fn row_marginal_and_positivity_every_iteration() {
        let ck = random_matrix(80, 5, 0.0, 2.0, 13);
        let c = cfg(0.3, 0.05, 0.04, 0.04);
        let mut md = MirrorDescent::new(ck.view(), &c).unwrap();
        for _ in 0..25 {
            md.step().unwrap();
            let rows = md.plan().sum_axis(Axis(1));
            assert!(rows.iter().all(|r| (r - 1.0 / 80.0).abs() <= 1e-12));
            assert!(md.plan().iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn guard_ignores_rounding_at_fixed_point() {
        let c = random_matrix(50, 5, 0.0, 1.0, 11);
        let cfg = SolverConfig { n_iter: 300, ..cfg(0.0, 0.0, 0.05, 0.04) };
        let (_, rep) = solve(c.view(), &cfg).unwrap();
        assert_eq!(rep.final_step_size, cfg.effective_step_size());
    }

    #[test]
    fn guard_halves_oversized_step() {
        let spec = crate::data_io::BlockSpec { n_frames: 200, ..Default::default() };
        let c = crate::data_io::block_cost_instance(&spec).unwrap().scores;
        let base = SolverConfig::inference();
        let cfg = SolverConfig { step_size: Some(3.0 * base.effective_step_size()), n_iter: 100, ..base };
        let (_, rep) = solve(c.view(), &cfg).unwrap();
        assert!(rep.final_step_size < cfg.effective_step_size());
        let off = SolverConfig { adaptive_step: false, ..cfg.clone() };
        assert_eq!(solve(c.view(), &off).unwrap().1.final_step_size, cfg.effective_step_size());
    }

    #[test]
    fn invalid_config_is_rejected() {
        let ck = array![[0.0, 1.0]];
        for bad in [
            cfg(1.5, 0.0, 0.1, 0.1),
            cfg(0.5, -1.0, 0.1, 0.1),
            cfg(0.5, 0.0, 0.0, 0.1),
            SolverConfig { n_iter: 0, ..SolverConfig::default() },
            SolverConfig { step_size: Some(-1.0), ..SolverConfig::default() },
        ] {
            assert!(matches!(solve(ck.view(), &bad), Err(AsotError::InvalidInput(_))));
        }
        assert!(solve(array![[f64::NAN]].view(), &SolverConfig::default()).is_err());
    }

    #[test]
    fn batch_matches_independent_solves() {
        let c = SolverConfig::default();
        assert!(solve_batch(&[], &c).unwrap().is_empty());
        let costs: Vec<Matrix> = (0..4).map(|s| random_matrix(40, 3, 0.0, 2.0, s)).collect();
        let batch = solve_batch(&costs, &c).unwrap();
        for (m, (plan, report)) in costs.iter().zip(&batch) {
            let (p, r) = solve(m.view(), &c).unwrap();
            assert_eq!(&p, plan);
            assert_eq!(&r, report);
        }
        let twins = solve_batch(&[costs[0].clone(), costs[0].clone()], &c).unwrap();
        assert_eq!(twins[0], twins[1]);
    }

    #[test]
    fn batch_error_carries_index() {
        let c = SolverConfig::default();
        let costs = vec![array![[0.0, 1.0]], array![[0.0, -1.0]]];
        match solve_batch(&costs, &c) {
            Err(AsotError::Batch { index, .. }) => assert_eq!(index, 1),
            other => panic!("unexpected {other:?}"),
        }
    }
}
