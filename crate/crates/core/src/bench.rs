//! Wall-clock scaling of the solver.

use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::solver::{solve, SolverConfig};
use crate::{AsotError, Matrix, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub n: usize,
    pub k: usize,
    pub ms_per_iter: f64,
    /// Fastest full solve over the repeats.
    pub solve_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSpec {
    pub sizes: Vec<usize>,
    pub k: usize,
    pub repeats: usize,
    pub seed: u64,
    pub solver: SolverConfig,
}

impl Default for BenchSpec {
    fn default() -> Self {
        Self {
            sizes: vec![1000, 2000, 4000, 8000, 16000],
            k: 19,
            repeats: 5,
            seed: 0,
            solver: SolverConfig::default(),
        }
    }
}

/// Random cost in `[0, 2]`.
pub fn random_cost(n: usize, k: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Matrix::from_shape_fn((n, k), |_| rng.random_range(0.0..2.0))
}

/// Times a fixed-budget solve for each size, keeping the minimum over repeats.
pub fn run(spec: &BenchSpec) -> Result<Vec<BenchRow>> {
    if spec.sizes.is_empty() || spec.k == 0 || spec.repeats == 0 {
        return Err(AsotError::invalid("bench needs at least one size, k >= 1 and repeats >= 1"));
    }
    let cfg = SolverConfig { stop_tol: 0.0, ..spec.solver.clone() };
    cfg.validate()?;
    spec.sizes
        .iter()
        .map(|&n| {
            if n == 0 {
                return Err(AsotError::invalid("bench sizes must be positive"));
            }
            let cost = random_cost(n, spec.k, spec.seed ^ n as u64);
            // Warm-up so allocation and page faults are not timed.
            solve(cost.view(), &cfg)?;
            let mut best = f64::INFINITY;
            for _ in 0..spec.repeats {
                let start = Instant::now();
                let (_, report) = solve(cost.view(), &cfg)?;
                let ms = start.elapsed().as_secs_f64() * 1e3;
                debug_assert_eq!(report.n_iter_run, cfg.n_iter);
                best = best.min(ms);
            }
            Ok(BenchRow { n, k: spec.k, ms_per_iter: best / cfg.n_iter as f64, solve_ms: best })
        })
        .collect()
}

pub fn to_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from("n,k,ms_per_iter,solve_ms\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{:.6},{:.6}", r.n, r.k, r.ms_per_iter, r.solve_ms);
    }
    out
}

/// Ordinary least squares `y = a + b x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub intercept: f64,
    pub slope: f64,
    pub r_squared: f64,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(AsotError::invalid("linear fit needs two or more paired points"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(AsotError::invalid("linear fit needs distinct x values"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(LinearFit { intercept, slope, r_squared })
}

pub fn fit_rows(rows: &[BenchRow]) -> Result<LinearFit> {
    let x: Vec<f64> = rows.iter().map(|r| (r.n * r.k) as f64).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.ms_per_iter).collect();
    linear_fit(&x, &y)
}
