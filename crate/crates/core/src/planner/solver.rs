//! Lagrangian relaxation of the link-selection problem solved by projected
//! gradient descent, followed by deterministic rounding.
//!
//! Per candidate link `k` the relaxed problem carries three variables:
//! `g_k in [0, 1]` (soft link indicator), `gamma_k in [gamma_min, 1]` and the
//! rate utilisation `u_k = tr_k / C_k in [u_floor, U_MAX]`. Delays are
//! normalised by the mean best-case delay so the step size is scale free.
//!
//! One multiplier per constraint family, handled with an augmented
//! Lagrangian term `(max(0, lambda + rho*h)^2 - lambda^2) / (2 rho)`:
//!
//! * `lambda_1`: `sum g - c <= 0` (sub-channel budget),
//! * `lambda_2[k]`: `u_k - 1 <= 0` (rate below capacity),
//! * `lambda_3[k]`: `beta * exp(-L_k / Lref) - gamma_k <= 0` (quality floor),
//! * `mu`: `m - sum_{k -> ego} g_k <= 0` (ego connectivity).
//!
//! Gradients are preconditioned per block. The `g` block is scaled by
//! `sum g`, which gives the parametric (Dinkelbach) form `sum g_k (d_k - q)`
//! with `q` the current average. The `gamma_k` and `u_k` blocks are scaled by
//! the inverse of `|d d_k / d x|`, so every link's price moves at the same
//! rate whatever its payload or indicator value; `lambda_2` and `lambda_3`
//! are expressed in those scaled units.
//!
//! Boxes are enforced by projection. A negative-entropy term weighted by an
//! annealed temperature keeps `g` off the box faces early on.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{candidate_links, check_feasible, CandidateLink, CommPlan, PlanError};
use crate::scenario::Scenario;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum RoundingRule {
    /// Reserve the best-scored ego links, then visit the rest in decreasing
    /// relaxed score and keep each one whose delay is below the running mean
    /// of the kept links, while the budget allows. Ties go to the lower
    /// delay, then the lower source id.
    #[default]
    TopKByScore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub learning_rate: f64,
    pub max_iters: usize,
    pub relaxation_temperature: f64,
    pub rounding_rule: RoundingRule,
    pub seed: u64,
    pub convergence_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            max_iters: 4000,
            relaxation_temperature: 0.02,
            rounding_rule: RoundingRule::TopKByScore,
            seed: 0,
            convergence_tol: 1e-9,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), PlanError> {
        let bad = |field: &str, why: String| {
            Err(PlanError::Scenario(crate::scenario::ScenarioError::invalid(
                field, why,
            )))
        };
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate", format!("must be > 0, got {}", self.learning_rate));
        }
        if self.max_iters == 0 {
            return bad("max_iters", "must be >= 1".into());
        }
        if !(self.relaxation_temperature.is_finite() && self.relaxation_temperature > 0.0) {
            return bad(
                "relaxation_temperature",
                format!("must be > 0, got {}", self.relaxation_temperature),
            );
        }
        if !(self.convergence_tol.is_finite() && self.convergence_tol > 0.0) {
            return bad(
                "convergence_tol",
                format!("must be > 0, got {}", self.convergence_tol),
            );
        }
        Ok(())
    }
}

/// Penalty weight of the augmented Lagrangian.
const RHO: f64 = 10.0;
const U_MAX: f64 = 2.0;
const U_FLOOR: f64 = 1e-3;
const G_CLAMP: f64 = 1e-9;
const MIN_ITERS: usize = 100;

/// Diagnostics from the relaxed solve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub converged: bool,
    /// `(src_id, dst_id, relaxed g)` for every candidate link.
    pub scores: Vec<(u32, u32, f64)>,
    pub budget_multiplier: f64,
    pub ego_multiplier: f64,
    /// Largest `|gamma_relaxed - gamma_bound|` over selected links.
    pub gamma_gap: f64,
    /// Largest `|tr_relaxed / C - 1|` over selected links.
    pub rate_gap: f64,
    /// Relaxed objective at the last iterate, in seconds.
    pub relaxed_avg_delay: f64,
}

/// Owns the iterate and multipliers for one solve at a time.
#[derive(Debug)]
pub struct Solver {
    cfg: SolverConfig,
    g: Vec<f64>,
    gamma: Vec<f64>,
    util: Vec<f64>,
    lambda_budget: f64,
    lambda_rate: Vec<f64>,
    lambda_floor: Vec<f64>,
    mu_ego: f64,
}

struct Problem<'a> {
    links: &'a [CandidateLink],
    /// `A_k / (C_k * d_ref)`: delay per unit gamma at full rate, normalised.
    weight: Vec<f64>,
    d_ref: f64,
    budget: f64,
    min_ego: f64,
}

impl Solver {
    pub fn new(cfg: SolverConfig) -> Result<Self, PlanError> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            g: Vec::new(),
            gamma: Vec::new(),
            util: Vec::new(),
            lambda_budget: 0.0,
            lambda_rate: Vec::new(),
            lambda_floor: Vec::new(),
            mu_ego: 0.0,
        })
    }

    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }

    pub fn solve(&mut self, s: &Scenario) -> Result<(CommPlan, SolveReport), PlanError> {
        let links = candidate_links(s);
        check_feasible(s, &links)?;

        let d_ref = links.iter().map(|l| l.best_delay()).sum::<f64>() / links.len() as f64;
        let d_ref = if d_ref > 0.0 { d_ref } else { 1.0 };
        let problem = Problem {
            weight: links
                .iter()
                .map(|l| l.volume_bits / (l.capacity_bps * d_ref))
                .collect(),
            links: &links,
            d_ref,
            budget: s.channel.num_subchannels as f64,
            min_ego: s.min_ego_links as f64,
        };
        self.reset(&problem);
        let (iterations, converged) = self.descend(&problem);

        let selected = self.round(&problem, s.min_ego_links, s.channel.num_subchannels as usize);
        let plan = CommPlan::from_selection(s, &links, &selected)?;

        let gamma_gap = selected
            .iter()
            .map(|&k| (self.gamma[k] - links[k].gamma_bound()).abs())
            .fold(0.0, f64::max);
        let rate_gap = selected
            .iter()
            .map(|&k| (self.util[k] - 1.0).abs())
            .fold(0.0, f64::max);
        let report = SolveReport {
            iterations,
            converged,
            scores: links
                .iter()
                .zip(&self.g)
                .map(|(l, &g)| (s.nodes[l.src].id, s.nodes[l.dst].id, g))
                .collect(),
            budget_multiplier: self.lambda_budget,
            ego_multiplier: self.mu_ego,
            gamma_gap,
            rate_gap,
            relaxed_avg_delay: self.objective(&problem) * problem.d_ref,
        };
        Ok((plan, report))
    }

    fn reset(&mut self, p: &Problem) {
        let k = p.links.len();
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        self.g = (0..k).map(|_| 0.5 + rng.gen_range(-0.01..0.01)).collect();
        self.gamma = vec![1.0; k];
        self.util = vec![0.5; k];
        self.lambda_budget = 0.0;
        self.lambda_rate = vec![0.0; k];
        self.lambda_floor = vec![0.0; k];
        self.mu_ego = 0.0;
    }

    fn delay(&self, p: &Problem, k: usize) -> f64 {
        self.gamma[k] * p.weight[k] / self.util[k]
    }

    fn objective(&self, p: &Problem) -> f64 {
        let sum_g: f64 = self.g.iter().sum();
        let num: f64 = (0..self.g.len()).map(|k| self.g[k] * self.delay(p, k)).sum();
        num / sum_g.max(G_CLAMP)
    }

    /// Returns `(iterations, converged)`.
    fn descend(&mut self, p: &Problem) -> (usize, bool) {
        let k_links = p.links.len();
        let lr = self.cfg.learning_rate;
        let mut grad_g = vec![0.0; k_links];
        let mut grad_gamma = vec![0.0; k_links];
        let mut grad_util = vec![0.0; k_links];

        for it in 0..self.cfg.max_iters {
            let temp = self.cfg.relaxation_temperature
                * (1.0 - it as f64 / self.cfg.max_iters as f64);
            let avg = self.objective(p);

            let h_budget = self.g.iter().sum::<f64>() - p.budget;
            let nu_budget = (self.lambda_budget + RHO * h_budget).max(0.0);
            let ego_sum: f64 = (0..k_links).filter(|&k| p.links[k].to_ego).map(|k| self.g[k]).sum();
            let h_ego = p.min_ego - ego_sum;
            let nu_ego = (self.mu_ego + RHO * h_ego).max(0.0);

            for k in 0..k_links {
                let d = self.delay(p, k);
                let gk = self.g[k].clamp(G_CLAMP, 1.0 - G_CLAMP);
                grad_g[k] = (d - avg) + nu_budget + temp * (gk / (1.0 - gk)).ln();
                if p.links[k].to_ego {
                    grad_g[k] -= nu_ego;
                }

                let h_floor = p.links[k].quality_floor - self.gamma[k];
                let nu_floor = (self.lambda_floor[k] + RHO * h_floor).max(0.0);
                grad_gamma[k] = 1.0 - nu_floor;

                let h_rate = self.util[k] - 1.0;
                let nu_rate = (self.lambda_rate[k] + RHO * h_rate).max(0.0);
                grad_util[k] = -1.0 + nu_rate;
            }

            let mut max_step: f64 = 0.0;
            for k in 0..k_links {
                let gamma_min = p.links[k].gamma_min;
                let next_g = (self.g[k] - lr * grad_g[k]).clamp(0.0, 1.0);
                let next_gamma = (self.gamma[k] - lr * grad_gamma[k]).clamp(gamma_min, 1.0);
                let next_util = (self.util[k] - lr * grad_util[k]).clamp(U_FLOOR, U_MAX);
                max_step = max_step
                    .max((next_g - self.g[k]).abs())
                    .max((next_gamma - self.gamma[k]).abs())
                    .max((next_util - self.util[k]).abs());
                self.g[k] = next_g;
                self.gamma[k] = next_gamma;
                self.util[k] = next_util;
            }

            // Dual ascent on the post-step constraint values.
            let mut max_violation: f64 = 0.0;
            let h_budget = self.g.iter().sum::<f64>() - p.budget;
            self.lambda_budget = (self.lambda_budget + lr * RHO * h_budget).max(0.0);
            max_violation = max_violation.max(h_budget);
            let ego_sum: f64 = (0..k_links).filter(|&k| p.links[k].to_ego).map(|k| self.g[k]).sum();
            let h_ego = p.min_ego - ego_sum;
            self.mu_ego = (self.mu_ego + lr * RHO * h_ego).max(0.0);
            max_violation = max_violation.max(h_ego);
            for k in 0..k_links {
                let h_floor = p.links[k].quality_floor - self.gamma[k];
                self.lambda_floor[k] = (self.lambda_floor[k] + lr * RHO * h_floor).max(0.0);
                let h_rate = self.util[k] - 1.0;
                self.lambda_rate[k] = (self.lambda_rate[k] + lr * RHO * h_rate).max(0.0);
                max_violation = max_violation.max(h_floor).max(h_rate);
            }

            if it + 1 >= MIN_ITERS
                && max_step < self.cfg.convergence_tol
                && max_violation < self.cfg.convergence_tol
            {
                return (it + 1, true);
            }
        }
        (self.cfg.max_iters, false)
    }

    fn round(&self, p: &Problem, min_ego: usize, budget: usize) -> Vec<usize> {
        let RoundingRule::TopKByScore = self.cfg.rounding_rule;
        let mut order: Vec<usize> = (0..p.links.len()).collect();
        order.sort_by(|&a, &b| {
            self.g[b]
                .total_cmp(&self.g[a])
                .then(p.links[a].best_delay().total_cmp(&p.links[b].best_delay()))
                .then(p.links[a].src.cmp(&p.links[b].src))
                .then(p.links[a].dst.cmp(&p.links[b].dst))
        });
        let mut chosen: Vec<usize> = order
            .iter()
            .copied()
            .filter(|&k| p.links[k].to_ego)
            .take(min_ego)
            .collect();
        let mut total: f64 = chosen.iter().map(|&k| p.links[k].best_delay()).sum();
        for &k in &order {
            if chosen.len() >= budget {
                break;
            }
            let d = p.links[k].best_delay();
            if !chosen.contains(&k) && (chosen.is_empty() || d < total / chosen.len() as f64) {
                chosen.push(k);
                total += d;
            }
        }
        chosen.sort_unstable();
        chosen
    }
}

/// Solves with a fresh [`Solver`]; see the module docs for the method.
pub fn optimize(s: &Scenario, cfg: &SolverConfig) -> Result<CommPlan, PlanError> {
    Solver::new(cfg.clone())?.solve(s).map(|(plan, _)| plan)
}
