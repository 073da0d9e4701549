//! MMA driver for the two design modes.

use super::mma::{Mma, MmaParams};
use super::sdf::{heaviside, SignedDistanceField};
use super::{objective_and_rrmse, MacroError, MacroModel, MacroProblem, PropertyField};
use crate::family::GradationCurve;
use crate::homogenization::StiffnessComponents;

/// What keeps the element properties realisable.
#[derive(Debug, Clone, Copy)]
pub enum DesignMode<'a> {
    /// Four free components per element, box-bounded by the database extent and
    /// kept inside the database region by the aggregated distance constraint.
    Database(&'a SignedDistanceField),
    /// One controlled value per element in `range`, mapped through the curve.
    Family { curve: &'a GradationCurve, range: (f64, f64) },
}

impl<'a> DesignMode<'a> {
    /// Family mode over the whole curve, kept away from the singular `c = 0` end.
    pub fn family(curve: &'a GradationCurve) -> Self {
        DesignMode::Family { curve, range: (0.01 * curve.c_max(), curve.c_max()) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimConfig {
    /// Heaviside sharpness.
    pub beta: f64,
    /// When set, β grows geometrically to this value over the first half of the run.
    pub beta_final: Option<f64>,
    pub max_iters: usize,
    /// Stop once the largest normalized variable change falls below this.
    pub move_tol: f64,
    pub mma: MmaParams,
    /// Consecutive subproblem failures tolerated before giving up.
    pub max_failures: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self { beta: 10.0, beta_final: None, max_iters: 500, move_tol: 1e-3, mma: MmaParams::default(), max_failures: 5 }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<(), MacroError> {
        let ok = self.beta > 0.0
            && self.beta_final.is_none_or(|b| b > 0.0)
            && self.max_iters > 0
            && self.move_tol > 0.0
            && self.mma.move_limit > 0.0
            && self.mma.asy_init > 0.0;
        if ok {
            Ok(())
        } else {
            Err(MacroError::Optimizer(format!("invalid optimizer settings {self:?}")))
        }
    }

    fn beta_at(&self, iter: usize) -> f64 {
        match self.beta_final {
            None => self.beta,
            Some(b1) => {
                let half = (self.max_iters / 2).max(1) as f64;
                let s = (iter as f64 / half).min(1.0);
                self.beta * (b1 / self.beta).powf(s)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterRecord {
    pub iter: usize,
    pub objective: f64,
    pub rrmse: f64,
    /// Aggregated feasibility `(1/N) Σ S(−φ_e)`; zero in family mode.
    pub constraint: f64,
    /// Largest normalized variable change of the step that led here.
    pub max_move: f64,
}

#[derive(Debug, Clone)]
pub struct OptimResult {
    pub field: PropertyField,
    /// Controlled values per element in family mode.
    pub controlled: Option<Vec<f64>>,
    pub history: Vec<IterRecord>,
    pub converged: bool,
    /// Smallest element `φ` in database mode.
    pub min_phi: Option<f64>,
    /// Whether the aggregated constraint `Σ S(−φ_e) ≤ 1` holds at the end.
    pub constraint_satisfied: bool,
}

struct Evaluation {
    field: PropertyField,
    objective: f64,
    rrmse: f64,
    /// `∂F/∂x` in normalized variables.
    grad: Vec<f64>,
    /// `Σ S(−φ_e) − 1` and its gradient.
    cons: f64,
    cons_grad: Vec<f64>,
    aggregate: f64,
    min_phi: Option<f64>,
}

struct Driver<'a> {
    model: MacroModel,
    mode: DesignMode<'a>,
    n_elem: usize,
    lower: [f64; 4],
    upper: [f64; 4],
}

impl Driver<'_> {
    fn n_vars(&self) -> usize {
        match self.mode {
            DesignMode::Database(_) => 4 * self.n_elem,
            DesignMode::Family { .. } => self.n_elem,
        }
    }

    fn controlled(&self, x: &[f64]) -> Vec<f64> {
        match self.mode {
            DesignMode::Family { range: (lo, hi), .. } => x.iter().map(|v| lo + v * (hi - lo)).collect(),
            DesignMode::Database(_) => Vec::new(),
        }
    }

    fn field(&self, x: &[f64]) -> Result<PropertyField, MacroError> {
        let values = match self.mode {
            DesignMode::Database(_) => (0..self.n_elem)
                .map(|e| {
                    StiffnessComponents::from_array(std::array::from_fn(|k| {
                        self.lower[k] + x[4 * e + k] * (self.upper[k] - self.lower[k])
                    }))
                })
                .collect(),
            DesignMode::Family { curve, .. } => self
                .controlled(x)
                .iter()
                .map(|&t| curve.eval(t).map_err(|e| MacroError::Optimizer(e.to_string())))
                .collect::<Result<Vec<_>, _>>()?,
        };
        Ok(PropertyField { values, lower: self.lower, upper: self.upper })
    }

    /// Database mode: every element that left the feasible region (φ < 0 or
    /// not admissible) is moved back along its step to the last feasible point.
    /// Returns how many elements were pulled back.
    fn restore_feasibility(&self, prev: &[f64], next: &mut [f64]) -> usize {
        let DesignMode::Database(sdf) = self.mode else { return 0 };
        let point = |x: &[f64]| {
            StiffnessComponents::from_array(std::array::from_fn(|k| self.lower[k] + x[k] * (self.upper[k] - self.lower[k])))
        };
        let mut pulled = 0;
        for e in 0..self.n_elem {
            let r = 4 * e..4 * e + 4;
            let ok = |x: &[f64]| {
                let c = point(x);
                sdf.admissible(&c) && sdf.feasibility_phi(&c).0 >= 0.0
            };
            if ok(&next[r.clone()]) {
                continue;
            }
            pulled += 1;
            let (a, b) = (prev[r.clone()].to_vec(), next[r.clone()].to_vec());
            let at = |t: f64| -> Vec<f64> { a.iter().zip(&b).map(|(p, q)| p + t * (q - p)).collect() };
            let (mut lo, mut hi) = (0.0, 1.0);
            for _ in 0..RESTORE_BISECTIONS {
                let mid = 0.5 * (lo + hi);
                if ok(&at(mid)) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            next[r].copy_from_slice(&at(lo));
        }
        pulled
    }

    fn evaluate(&self, x: &[f64], beta: f64) -> Result<Evaluation, MacroError> {
        let field = self.field(x)?;
        let analysis = self.model.analyze(&field)?;
        let (objective, rrmse) = objective_and_rrmse(&analysis.u, self.model.problem())?;
        let sens = self.model.sensitivities(&field, &analysis)?;
        let n = self.n_vars();
        let mut grad = vec![0.0; n];
        let mut cons_grad = vec![0.0; n];
        let (mut cons, mut aggregate, mut min_phi) = (-1.0, 0.0, None);
        match self.mode {
            DesignMode::Database(sdf) => {
                let mut sum = 0.0;
                let mut lowest = f64::INFINITY;
                for e in 0..self.n_elem {
                    let (phi, dphi) = sdf.feasibility_phi(&field.values[e]);
                    lowest = lowest.min(phi);
                    sum += heaviside(-phi, beta);
                    let t = (-beta * phi).tanh();
                    let ds = 0.5 * beta * (1.0 - t * t);
                    for k in 0..4 {
                        let span = self.upper[k] - self.lower[k];
                        grad[4 * e + k] = sens[e][k] * span;
                        cons_grad[4 * e + k] = -ds * dphi[k] * span;
                    }
                }
                cons = sum - 1.0;
                aggregate = sum / self.n_elem as f64;
                min_phi = Some(lowest);
            }
            DesignMode::Family { curve, range: (lo, hi) } => {
                for (e, t) in self.controlled(x).iter().enumerate() {
                    let dc = curve.derivative(*t).map_err(|err| MacroError::Optimizer(err.to_string()))?;
                    grad[e] = (0..4).map(|k| sens[e][k] * dc[k]).sum::<f64>() * (hi - lo);
                }
            }
        }
        Ok(Evaluation { field, objective, rrmse, grad, cons, cons_grad, aggregate, min_phi })
    }
}

const MAX_HALVINGS: usize = 20;
const RESTORE_BISECTIONS: usize = 30;

/// Optimizes the element properties of `problem` with MMA.
pub fn optimize_properties(
    problem: &MacroProblem,
    mode: DesignMode<'_>,
    cfg: &OptimConfig,
) -> Result<OptimResult, MacroError> {
    cfg.validate()?;
    let model = MacroModel::new(problem)?;
    let n_elem = problem.n_elements();
    let (lower, upper, x0) = match mode {
        DesignMode::Database(sdf) => {
            let (lo, hi) = sdf.data_bounds();
            let mean = sdf.data_mean().to_array();
            let start: [f64; 4] = std::array::from_fn(|k| {
                if hi[k] > lo[k] {
                    ((mean[k] - lo[k]) / (hi[k] - lo[k])).clamp(0.0, 1.0)
                } else {
                    0.0
                }
            });
            (lo, hi, (0..4 * n_elem).map(|j| start[j % 4]).collect::<Vec<f64>>())
        }
        DesignMode::Family { curve, range: (lo, hi) } => {
            if !(lo > 0.0 && hi > lo && hi <= curve.c_max() * (1.0 + 1e-12)) {
                return Err(MacroError::Optimizer(format!("family range [{lo}, {hi}] is not inside (0, c_max]")));
            }
            let a = curve.eval(lo).map_err(|e| MacroError::Optimizer(e.to_string()))?.to_array();
            let b = curve.eval(hi).map_err(|e| MacroError::Optimizer(e.to_string()))?.to_array();
            let lower = std::array::from_fn(|k| a[k].min(b[k]));
            let upper = std::array::from_fn(|k| a[k].max(b[k]));
            // midpoint of the whole curve, clamped into the admissible range
            let mid = (0.5 * curve.c_max()).clamp(lo, hi);
            (lower, upper, vec![(mid - lo) / (hi - lo); n_elem])
        }
    };
    let driver = Driver { model, mode, n_elem, lower, upper };
    let n = driver.n_vars();
    let (xmin, xmax) = (vec![0.0; n], vec![1.0; n]);
    let mut mma = Mma::new(n, 1, cfg.mma);

    let mut x = x0;
    let mut eval = driver.evaluate(&x, cfg.beta_at(0))?;
    let scale = if eval.objective > 1e-30 { 1.0 / eval.objective } else { 1.0 };
    let mut history = vec![IterRecord {
        iter: 0,
        objective: eval.objective,
        rrmse: eval.rrmse,
        constraint: eval.aggregate,
        max_move: 0.0,
    }];
    let mut converged = false;
    let mut failures = 0;
    let mut iter = 0;
    while iter < cfg.max_iters {
        let df0: Vec<f64> = eval.grad.iter().map(|g| g * scale).collect();
        let step = mma.update(&x, &df0, &[eval.cons], &eval.cons_grad, &xmin, &xmax);
        let next = match step {
            Ok(v) => {
                failures = 0;
                v
            }
            Err(err) => {
                failures += 1;
                log::warn!("MMA step {} failed ({err}); resetting asymptotes", iter + 1);
                if failures >= cfg.max_failures {
                    return Err(MacroError::Optimizer(format!("{failures} consecutive subproblem failures: {err}")));
                }
                mma.reset_asymptotes();
                continue;
            }
        };
        iter += 1;
        // a trial design whose stiffness is not positive definite is pulled
        // back toward the last good one
        let mut next = next;
        let pulled = driver.restore_feasibility(&x, &mut next);
        if pulled > 0 {
            log::debug!("iteration {iter}: {pulled} elements pulled back inside the database region");
        }
        let mut trial = driver.evaluate(&next, cfg.beta_at(iter));
        let mut halvings = 0;
        while matches!(trial, Err(MacroError::SolverFailure(_))) && halvings < MAX_HALVINGS {
            next = next.iter().zip(&x).map(|(a, b)| 0.5 * (a + b)).collect();
            trial = driver.evaluate(&next, cfg.beta_at(iter));
            halvings += 1;
        }
        if halvings > 0 {
            log::warn!("iteration {iter}: step halved {halvings} times to keep the stiffness positive definite");
        }
        let max_move = next.iter().zip(&x).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        x = next;
        eval = trial?;
        history.push(IterRecord { iter, objective: eval.objective, rrmse: eval.rrmse, constraint: eval.aggregate, max_move });
        log::debug!("iter {iter}: F = {:.6e}, RRMSE = {:.4}, g = {:.4e}, move = {max_move:.2e}", eval.objective, eval.rrmse, eval.aggregate);
        // a move shortened by halving, or one that leaves the design infeasible, is not convergence
        if max_move < cfg.move_tol && halvings == 0 && eval.cons <= 0.0 {
            converged = true;
            break;
        }
    }
    let controlled = match mode {
        DesignMode::Family { .. } => Some(driver.controlled(&x)),
        DesignMode::Database(_) => None,
    };
    Ok(OptimResult {
        field: eval.field,
        controlled,
        history,
        converged,
        min_phi: eval.min_phi,
        constraint_satisfied: eval.cons <= 1e-9,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::homogenization::MaterialSpec;
    use crate::macroopt::{arch_case, assemble_and_solve, build_sdf, Axis};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(n: usize, seed: u64) -> Vec<StiffnessComponents> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let c11: f64 = rng.random_range(0.1..1.0);
                let c22: f64 = rng.random_range(0.1..1.0);
                let c12 = 0.3 * (c11 * c22).sqrt() * rng.random_range(0.2..1.0);
                let c33 = 0.2 * c11.min(c22) * rng.random_range(0.5..1.0);
                StiffnessComponents::new(c11, c12, c22, c33)
            })
            .collect()
    }

    fn single_element_problem() -> MacroProblem {
        let mut p = MacroProblem::new(1, 1);
        for i in 0..2 {
            let n = p.node(i, 0);
            p.prescribe(n, Axis::X, 0.0);
            p.prescribe(n, Axis::Y, 0.0);
        }
        let tl = p.node(0, 1);
        p.prescribe(tl, Axis::X, 0.05);
        p.prescribe(tl, Axis::Y, -0.04);
        p
    }

    #[test]
    fn attainable_single_element_target_is_recovered() {
        let props = cloud(800, 1);
        let sdf = build_sdf(&props, 12).unwrap();
        let mut p = single_element_problem();
        // target produced by a known interior property tuple
        let known = props[17];
        assert!(sdf.feasibility_phi(&known).0 > 0.0);
        let u = assemble_and_solve(&p, &PropertyField::unbounded(vec![known])).unwrap();
        let tr = p.node(1, 1);
        p.set_target(tr, Axis::X, u[2 * tr]);
        p.set_target(tr, Axis::Y, u[2 * tr + 1]);
        let res = optimize_properties(&p, DesignMode::Database(&sdf), &OptimConfig::default()).unwrap();
        let last = res.history.last().unwrap();
        assert!(last.objective <= 1e-6, "F = {}", last.objective);
    }

    #[test]
    fn family_mode_stays_on_the_curve() {
        let curve = GradationCurve::graded(&MaterialSpec::default(), 0.05).unwrap();
        let p = arch_case(6, 2, 0.1, 0.05);
        let cfg = OptimConfig { max_iters: 40, ..OptimConfig::default() };
        let res = optimize_properties(&p, DesignMode::family(&curve), &cfg).unwrap();
        let t = res.controlled.as_ref().unwrap();
        for (c, &ti) in res.field.values.iter().zip(t) {
            let back = curve.eval(ti).unwrap();
            assert_eq!(back.to_array().map(f64::to_bits), c.to_array().map(f64::to_bits));
        }
        assert!(res.history.last().unwrap().objective <= res.history[0].objective);
    }

    #[test]
    fn database_mode_reduces_objective_and_stays_feasible() {
        let props = cloud(800, 2);
        let sdf = build_sdf(&props, 12).unwrap();
        let p = arch_case(6, 2, 0.1, 0.04);
        let cfg = OptimConfig { max_iters: 60, ..OptimConfig::default() };
        let res = optimize_properties(&p, DesignMode::Database(&sdf), &cfg).unwrap();
        let first = res.history[0].objective;
        let last = res.history.last().unwrap().objective;
        assert!(last < first, "{first} -> {last}");
        assert!(res.field.within_bounds(1e-12));
        if res.constraint_satisfied {
            assert!(res.min_phi.unwrap() >= -1e-3, "min phi {:?}", res.min_phi);
        }
    }

    #[test]
    fn invalid_settings_are_rejected() {
        let curve = GradationCurve::graded(&MaterialSpec::default(), 0.05).unwrap();
        let p = arch_case(2, 1, 0.1, 0.05);
        let cfg = OptimConfig { beta: 0.0, ..OptimConfig::default() };
        assert!(optimize_properties(&p, DesignMode::family(&curve), &cfg).is_err());
        let bad = DesignMode::Family { curve: &curve, range: (0.0, 1.0) };
        assert!(optimize_properties(&p, bad, &OptimConfig::default()).is_err());
    }
}
