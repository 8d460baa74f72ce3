//! Communication-graph planning: choose which V2V links to activate and how
//! hard to compress each one so the average transmission delay is minimal.
//!
//! For a link `i -> j` carrying `A` bits at rate `tr` with compression ratio
//! `gamma`, the delay is `gamma * A / tr`. A plan must respect
//!
//! * the sub-channel budget: at most `c` active links,
//! * the rate cap: `tr <= C` (Shannon capacity of the link),
//! * the distance-dependent quality floor: `gamma * exp(L / Lref) >= beta`,
//! * the ego requirement: at least `min_ego_links` links terminate at the ego.

mod oracle;
mod solver;

pub use oracle::{brute_force_optimum, MAX_ORACLE_LINKS};
pub use solver::{optimize, RoundingRule, SolveReport, Solver, SolverConfig};

use ndarray::Array2;
use thiserror::Error;

use crate::channel::{capacity_matrix, distance_matrix};
use crate::scenario::{Scenario, ScenarioError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlanError {
    #[error("transmission rate must be > 0, got {0}")]
    NonPositiveRate(f64),
    #[error("plan has no selected links")]
    NoLinks,
    #[error("infeasible: {constraint} ({detail})")]
    Infeasible {
        constraint: &'static str,
        detail: String,
    },
    #[error("instance too large for exhaustive search: {links} candidate links (max {max})")]
    TooLarge { links: usize, max: usize },
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
}

/// Delay of one link: `gamma * A / tr` seconds.
pub fn transmission_delay(gamma: f64, volume_bits: f64, rate_bps: f64) -> Result<f64, PlanError> {
    if rate_bps <= 0.0 || rate_bps.is_nan() {
        return Err(PlanError::NonPositiveRate(rate_bps));
    }
    Ok(gamma * volume_bits / rate_bps)
}

/// Smallest admissible compression ratio at distance `distance_m`:
/// `max(beta * exp(-L / Lref), gamma_min)`, never above one.
pub fn gamma_lower_bound(distance_m: f64, beta: f64, distance_scale_m: f64, gamma_min: f64) -> f64 {
    (beta * (-distance_m / distance_scale_m).exp())
        .max(gamma_min)
        .min(1.0)
}

/// A possible directed link with everything needed to price it.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateLink {
    pub src: usize,
    pub dst: usize,
    pub volume_bits: f64,
    pub capacity_bps: f64,
    pub distance_m: f64,
    /// `beta * exp(-L / Lref)` before the floor is applied.
    pub quality_floor: f64,
    pub gamma_min: f64,
    pub to_ego: bool,
}

impl CandidateLink {
    pub fn gamma_bound(&self) -> f64 {
        self.quality_floor.max(self.gamma_min).min(1.0)
    }

    /// Delay at the pointwise optimum `gamma = bound`, `tr = C`.
    pub fn best_delay(&self) -> f64 {
        self.gamma_bound() * self.volume_bits / self.capacity_bps
    }
}

/// Directed pairs with data to send and positive capacity, in row-major
/// (source, destination) order.
pub fn candidate_links(s: &Scenario) -> Vec<CandidateLink> {
    let cap = capacity_matrix(&s.nodes, &s.channel);
    let dist = distance_matrix(&s.nodes);
    let ego = s.ego_index();
    let n = s.len();
    let mut out = Vec::new();
    for src in 0..n {
        for dst in 0..n {
            if src == dst {
                continue;
            }
            let volume_bits = s.data_volumes[(src, dst)];
            let capacity_bps = cap[(src, dst)];
            if volume_bits <= 0.0 || capacity_bps <= 0.0 {
                continue;
            }
            let distance_m = dist[(src, dst)];
            out.push(CandidateLink {
                src,
                dst,
                volume_bits,
                capacity_bps,
                distance_m,
                quality_floor: s.beta * (-distance_m / s.distance_scale_m).exp(),
                gamma_min: s.gamma_min,
                to_ego: dst == ego,
            });
        }
    }
    out
}

/// Rejects scenarios for which no plan can satisfy the link budget and the
/// ego requirement at the same time.
pub(crate) fn check_feasible(s: &Scenario, candidates: &[CandidateLink]) -> Result<(), PlanError> {
    s.validate()?;
    if s.len() < 2 {
        return Err(PlanError::Infeasible {
            constraint: "node count",
            detail: format!("need at least 2 nodes, got {}", s.len()),
        });
    }
    let c = s.channel.num_subchannels as usize;
    if c < s.min_ego_links {
        return Err(PlanError::Infeasible {
            constraint: "link budget",
            detail: format!(
                "{c} sub-channels cannot carry the required {} ego links",
                s.min_ego_links
            ),
        });
    }
    let ego_links = candidates.iter().filter(|l| l.to_ego).count();
    if ego_links < s.min_ego_links {
        return Err(PlanError::Infeasible {
            constraint: "ego connectivity",
            detail: format!(
                "only {ego_links} positive-capacity links with data reach the ego, need {}",
                s.min_ego_links
            ),
        });
    }
    Ok(())
}

/// Link matrix, compression ratios, rates and delays for one scenario.
///
/// Matrices are indexed in the scenario's node order. Unselected links carry
/// zero rate and zero delay; their `gamma` entry holds the bound that would
/// apply if they were activated.
#[derive(Debug, Clone, PartialEq)]
pub struct CommPlan {
    pub node_ids: Vec<u32>,
    pub links: Array2<u8>,
    pub gamma: Array2<f64>,
    pub rates: Array2<f64>,
    pub delays: Array2<f64>,
    pub avg_delay: f64,
}

impl CommPlan {
    /// Builds the plan for a chosen link set using `gamma = bound` and
    /// `tr = C` on every selected link.
    pub fn from_selection(
        s: &Scenario,
        candidates: &[CandidateLink],
        selected: &[usize],
    ) -> Result<Self, PlanError> {
        let n = s.len();
        let dist = distance_matrix(&s.nodes);
        let mut gamma = Array2::from_shape_fn((n, n), |(i, j)| {
            if i == j {
                1.0
            } else {
                gamma_lower_bound(dist[(i, j)], s.beta, s.distance_scale_m, s.gamma_min)
            }
        });
        let mut links = Array2::zeros((n, n));
        let mut rates = Array2::zeros((n, n));
        let mut delays = Array2::zeros((n, n));
        for &k in selected {
            let l = &candidates[k];
            let g = l.gamma_bound();
            links[(l.src, l.dst)] = 1;
            gamma[(l.src, l.dst)] = g;
            rates[(l.src, l.dst)] = l.capacity_bps;
            delays[(l.src, l.dst)] = transmission_delay(g, l.volume_bits, l.capacity_bps)?;
        }
        let mut plan = Self {
            node_ids: s.nodes.iter().map(|n| n.id).collect(),
            links,
            gamma,
            rates,
            delays,
            avg_delay: 0.0,
        };
        plan.avg_delay = average_delay(&plan)?;
        Ok(plan)
    }

    pub fn link_count(&self) -> usize {
        self.links.iter().filter(|&&g| g == 1).count()
    }

    /// Selected links as `(src_index, dst_index)` in row-major order.
    pub fn selected(&self) -> Vec<(usize, usize)> {
        self.links
            .indexed_iter()
            .filter(|(_, &g)| g == 1)
            .map(|(ij, _)| ij)
            .collect()
    }

    /// Plain-text matrix dump: G, Gamma, T and D.
    pub fn matrix_report(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        let header: String = self.node_ids.iter().map(|id| format!("{id:>14}")).collect();
        let mut dump = |title: &str, cell: &dyn Fn(usize, usize) -> String| {
            let _ = writeln!(out, "{title}");
            let _ = writeln!(out, "{:>6}{header}", "");
            for (i, id) in self.node_ids.iter().enumerate() {
                let _ = write!(out, "{id:>6}");
                for j in 0..self.node_ids.len() {
                    let _ = write!(out, "{:>14}", cell(i, j));
                }
                let _ = writeln!(out);
            }
            let _ = writeln!(out);
        };
        dump("G (links)", &|i, j| self.links[(i, j)].to_string());
        dump("Gamma (compression ratio)", &|i, j| format!("{:.6}", self.gamma[(i, j)]));
        dump("T (rate, bit/s)", &|i, j| format!("{:.6e}", self.rates[(i, j)]));
        dump("D (delay, s)", &|i, j| format!("{:.6e}", self.delays[(i, j)]));
        let _ = writeln!(
            out,
            "links: {}  average delay: {:.9e} s",
            self.link_count(),
            self.avg_delay
        );
        out
    }
}

/// Mean delay over selected links.
pub fn average_delay(plan: &CommPlan) -> Result<f64, PlanError> {
    let mut total = 0.0;
    let mut count = 0usize;
    for (ij, &g) in plan.links.indexed_iter() {
        if g == 1 {
            total += plan.delays[ij];
            count += 1;
        }
    }
    if count == 0 {
        return Err(PlanError::NoLinks);
    }
    Ok(total / count as f64)
}

/// A broken plan constraint found by [`validate_plan`].
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub constraint: &'static str,
    pub detail: String,
}

/// Relative slack allowed when checking the quality floor, which is
/// reconstructed through `exp` and can round by a few ulps.
const FLOOR_RTOL: f64 = 1e-12;

/// Checks a plan against the scenario from scratch, recomputing capacities
/// and distances instead of trusting the plan.
pub fn validate_plan(s: &Scenario, plan: &CommPlan) -> Vec<Violation> {
    let mut v = Vec::new();
    let mut fail = |constraint, detail: String| v.push(Violation { constraint, detail });
    let n = s.len();
    if plan.links.shape() != [n, n] {
        fail("shape", format!("plan is {:?}, scenario has {n} nodes", plan.links.shape()));
        return v;
    }
    let cap = capacity_matrix(&s.nodes, &s.channel);
    let dist = distance_matrix(&s.nodes);
    let ego = s.ego_index();
    let mut selected = 0usize;
    let mut ego_links = 0usize;
    let mut total_delay = 0.0;
    for i in 0..n {
        for j in 0..n {
            let g = plan.links[(i, j)];
            if i == j && g != 0 {
                fail("diagonal", format!("G[{i}][{i}] = {g}"));
            }
            if g > 1 {
                fail("binary", format!("G[{i}][{j}] = {g}"));
            }
            if g != 1 {
                continue;
            }
            selected += 1;
            if j == ego {
                ego_links += 1;
            }
            let (gamma, tr, d) = (plan.gamma[(i, j)], plan.rates[(i, j)], plan.delays[(i, j)]);
            if !(gamma > 0.0 && gamma <= 1.0) {
                fail("gamma range", format!("gamma[{i}][{j}] = {gamma}"));
            }
            if !(tr > 0.0 && tr <= cap[(i, j)]) {
                fail("rate", format!("tr[{i}][{j}] = {tr} exceeds C = {}", cap[(i, j)]));
            }
            let scaled = gamma * (dist[(i, j)] / s.distance_scale_m).exp();
            if scaled < s.beta * (1.0 - FLOOR_RTOL) {
                fail(
                    "compression",
                    format!("gamma*exp(L/Lref) = {scaled} < beta = {}", s.beta),
                );
            }
            let expected = gamma * s.data_volumes[(i, j)] / tr;
            if d != expected {
                fail("delay", format!("D[{i}][{j}] = {d}, gamma*A/tr = {expected}"));
            }
            total_delay += d;
        }
    }
    if selected > s.channel.num_subchannels as usize {
        fail(
            "link budget",
            format!("{selected} links > {} sub-channels", s.channel.num_subchannels),
        );
    }
    if ego_links < s.min_ego_links {
        fail(
            "ego connectivity",
            format!("{ego_links} ego links < required {}", s.min_ego_links),
        );
    }
    if selected > 0 {
        let avg = total_delay / selected as f64;
        if (avg - plan.avg_delay).abs() > 1e-12 * avg.abs().max(f64::MIN_POSITIVE) {
            fail("average", format!("avg_delay {} != {avg}", plan.avg_delay));
        }
    }
    v
}
