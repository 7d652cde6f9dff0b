//! Browser bindings for the interactive demo in `www/`.
//!
//! A [`Demo`] holds one noisy block-cost instance. The page re-solves it as the
//! sliders move and draws the plan and the resulting barcodes.

use asot::data_io::{block_cost_instance, BlockSpec};
use asot::metrics::{edit_distance, evaluate, EvalMode};
use asot::segmentation::{argmin_rows, decode, Segmentation};
use asot::solver::{solve, SolverConfig};
use asot::{AsotError, Matrix};
use serde::Serialize;
use wasm_bindgen::prelude::*;

fn js_err(e: AsotError) -> JsError {
    JsError::new(&e.to_string())
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Scores {
    pub mof: f64,
    pub f1: f64,
    pub miou: f64,
    pub edit: f64,
    pub segments: usize,
}

#[wasm_bindgen]
pub struct Demo {
    cost: Matrix,
    planted: Vec<usize>,
    plan: Option<Matrix>,
    labels: Vec<usize>,
    objective: Vec<f64>,
}

fn to_u32(v: &[usize]) -> Vec<u32> {
    v.iter().map(|&x| x as u32).collect()
}

fn score(pred: &[usize], planted: &[usize]) -> Result<Scores, AsotError> {
    let seg = Segmentation::from_labels(pred.to_vec());
    let ev = evaluate(std::slice::from_ref(&seg), &[planted.to_vec()], EvalMode::FullDataset)?;
    let m = &ev.aggregate.matching;
    let mapped = seg.map_labels(|l| m.get(&l).copied().unwrap_or(usize::MAX - l));
    Ok(Scores {
        mof: ev.aggregate.mof,
        f1: ev.aggregate.f1,
        miou: ev.aggregate.miou,
        edit: edit_distance(&mapped, &Segmentation::from_labels(planted.to_vec())),
        segments: seg.segments().len(),
    })
}

impl Demo {
    pub fn generate(spec: &BlockSpec) -> Result<Demo, AsotError> {
        let inst = block_cost_instance(spec)?;
        let labels = argmin_rows(inst.scores.view());
        Ok(Demo { cost: inst.scores, planted: inst.labels, plan: None, labels, objective: Vec::new() })
    }

    pub fn run(&mut self, cfg: &SolverConfig) -> Result<&[usize], AsotError> {
        let (plan, report) = solve(self.cost.view(), cfg)?;
        self.labels = decode(&plan).labels().to_vec();
        self.objective = report.objective_trace;
        self.plan = Some(plan.plan);
        Ok(&self.labels)
    }

    pub fn current_scores(&self) -> Result<Scores, AsotError> {
        score(&self.labels, &self.planted)
    }

    pub fn baseline_scores(&self) -> Result<Scores, AsotError> {
        score(&argmin_rows(self.cost.view()), &self.planted)
    }
}

#[wasm_bindgen]
impl Demo {
    /// New random instance of `n_frames` x `n_actions` with planted segments.
    #[wasm_bindgen(constructor)]
    pub fn new(n_frames: usize, n_actions: usize, n_segments: usize, sigma: f64, seed: u32) -> Result<Demo, JsError> {
        let spec = BlockSpec { n_frames, n_actions, n_segments, noise_sigma: sigma, concentration: None, seed: seed as u64 };
        Demo::generate(&spec).map_err(js_err)
    }

    #[wasm_bindgen(getter)]
    pub fn n_frames(&self) -> usize {
        self.cost.nrows()
    }

    #[wasm_bindgen(getter)]
    pub fn n_actions(&self) -> usize {
        self.cost.ncols()
    }

    /// Row-major cost matrix.
    pub fn cost(&self) -> Vec<f64> {
        self.cost.iter().copied().collect()
    }

    /// Row-major transport plan of the last solve; empty before the first.
    pub fn plan(&self) -> Vec<f64> {
        self.plan.as_ref().map(|p| p.iter().copied().collect()).unwrap_or_default()
    }

    pub fn planted(&self) -> Vec<u32> {
        to_u32(&self.planted)
    }

    pub fn labels(&self) -> Vec<u32> {
        to_u32(&self.labels)
    }

    pub fn objective_trace(&self) -> Vec<f64> {
        self.objective.clone()
    }

    /// Solves with the given weights and returns the decoded labels.
    pub fn solve(
        &mut self,
        alpha: f64,
        lambda: f64,
        epsilon: f64,
        radius: f64,
        n_iter: usize,
    ) -> Result<Vec<u32>, JsError> {
        let cfg = SolverConfig { alpha, lambda, epsilon, radius, n_iter, ..SolverConfig::inference() };
        self.run(&cfg).map(to_u32).map_err(js_err)
    }

    /// JSON with scores of the last solve and of per-frame argmin.
    pub fn scores(&self) -> Result<String, JsError> {
        #[derive(Serialize)]
        struct Both {
            solved: Scores,
            argmin: Scores,
        }
        let both = Both {
            solved: self.current_scores().map_err(js_err)?,
            argmin: self.baseline_scores().map_err(js_err)?,
        };
        serde_json::to_string(&both).map_err(|e| JsError::new(&e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn demo() -> Demo {
        Demo::generate(&BlockSpec { n_frames: 300, noise_sigma: 0.28, seed: 4, ..BlockSpec::default() }).unwrap()
    }

    #[test]
    fn solve_smooths_noisy_instance() {
        let mut d = demo();
        let base = d.baseline_scores().unwrap();
        d.run(&SolverConfig { alpha: 0.3, ..SolverConfig::inference() }).unwrap();
        let s = d.current_scores().unwrap();
        assert!(s.segments * 2 <= base.segments);
        assert!(s.mof >= base.mof);
        assert_eq!(d.labels.len(), 300);
        assert_eq!(d.plan.as_ref().unwrap().dim(), (300, 6));
        assert_eq!(d.objective.len(), 25);
    }

    #[test]
    fn scores_before_solve_are_argmin() {
        let d = demo();
        assert_eq!(d.current_scores().unwrap(), d.baseline_scores().unwrap());
    }

    #[test]
    fn perfect_labels_score_one() {
        let d = demo();
        let s = score(&d.planted, &d.planted).unwrap();
        assert_eq!((s.mof, s.f1, s.miou, s.edit), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn bad_spec_is_an_error() {
        assert!(Demo::generate(&BlockSpec { n_frames: 0, ..BlockSpec::default() }).is_err());
    }
}
