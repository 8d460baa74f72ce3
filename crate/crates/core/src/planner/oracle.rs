use super::{candidate_links, check_feasible, CommPlan, PlanError};
use crate::scenario::Scenario;

/// Largest candidate set the exhaustive search accepts.
pub const MAX_ORACLE_LINKS: usize = 20;

/// Exact minimizer of the average delay by enumerating every link subset.
///
/// For a fixed link set the delay of each link grows with `gamma` and falls
/// with `tr`, so every selected link is priced at `gamma = bound`, `tr = C`.
/// Ties keep the first subset in mask order.
pub fn brute_force_optimum(s: &Scenario) -> Result<CommPlan, PlanError> {
    s.validate()?;
    let candidates = candidate_links(s);
    if candidates.len() > MAX_ORACLE_LINKS {
        return Err(PlanError::TooLarge {
            links: candidates.len(),
            max: MAX_ORACLE_LINKS,
        });
    }
    check_feasible(s, &candidates)?;

    let budget = s.channel.num_subchannels as usize;
    let delays: Vec<f64> = candidates.iter().map(|l| l.best_delay()).collect();
    let ego_mask: u32 = candidates
        .iter()
        .enumerate()
        .filter(|(_, l)| l.to_ego)
        .fold(0, |m, (k, _)| m | (1 << k));

    let mut best: Option<(f64, u32)> = None;
    for mask in 1u32..(1u32 << candidates.len()) {
        let count = mask.count_ones() as usize;
        if count > budget || ((mask & ego_mask).count_ones() as usize) < s.min_ego_links {
            continue;
        }
        let total: f64 = (0..candidates.len())
            .filter(|k| mask & (1 << k) != 0)
            .map(|k| delays[k])
            .sum();
        let avg = total / count as f64;
        if best.is_none_or(|(b, _)| avg < b) {
            best = Some((avg, mask));
        }
    }
    let (_, mask) = best.ok_or(PlanError::Infeasible {
        constraint: "link budget",
        detail: "no link subset satisfies the constraints".into(),
    })?;
    let selected: Vec<usize> = (0..candidates.len()).filter(|k| mask & (1 << k) != 0).collect();
    CommPlan::from_selection(s, &candidates, &selected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{ChannelParams, VehicleNode};
    use crate::planner::validate_plan;
    use ndarray::{array, Array2};

    fn line(volumes: Array2<f64>, c: u32, m: usize) -> Scenario {
        let n = volumes.nrows();
        Scenario {
            nodes: (0..n).map(|i| VehicleNode::new(i as u32, 30.0 * i as f64, 0.0)).collect(),
            ego_id: 0,
            data_volumes: volumes,
            channel: ChannelParams {
                num_subchannels: c,
                ..ChannelParams::default()
            },
            beta: 0.9,
            distance_scale_m: 100.0,
            gamma_min: 0.05,
            min_ego_links: m,
        }
    }

    #[test]
    fn two_node_unique_feasible_graph() {
        let s = line(array![[0.0, 1e6], [4e6, 0.0]], 1, 1);
        let plan = brute_force_optimum(&s).unwrap();
        assert_eq!(plan.selected(), vec![(1, 0)]);
        assert!(validate_plan(&s, &plan).is_empty());
    }

    #[test]
    fn dominated_link_excluded() {
        // Node 2's huge payload makes its ego link slow; with only one ego
        // link required, including it would raise the mean.
        let s = line(
            array![[0.0, 0.0, 0.0], [1e6, 0.0, 0.0], [9e9, 0.0, 0.0]],
            4,
            1,
        );
        let plan = brute_force_optimum(&s).unwrap();
        assert_eq!(plan.selected(), vec![(1, 0)]);
    }

    #[test]
    fn fast_side_links_are_added_when_they_help() {
        let s = line(
            array![[0.0, 0.0, 0.0], [8e6, 0.0, 1e3], [0.0, 1e3, 0.0]],
            3,
            1,
        );
        let plan = brute_force_optimum(&s).unwrap();
        assert_eq!(plan.selected(), vec![(1, 0), (1, 2), (2, 1)]);
    }

    #[test]
    fn too_many_links_rejected() {
        let n = 6; // 30 directed pairs
        let v = Array2::from_shape_fn((n, n), |(i, j)| if i == j { 0.0 } else { 1e6 });
        let s = line(v, 4, 1);
        assert!(matches!(
            brute_force_optimum(&s),
            Err(PlanError::TooLarge { links: 30, .. })
        ));
    }

    #[test]
    fn infeasible_budget_names_constraint() {
        let s = line(array![[0.0, 0.0, 0.0], [1e6, 0.0, 0.0], [1e6, 0.0, 0.0]], 1, 2);
        match brute_force_optimum(&s) {
            Err(PlanError::Infeasible { constraint, .. }) => assert_eq!(constraint, "link budget"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn scaling_volumes_scales_optimum() {
        let base = array![[0.0, 2e6, 3e6], [5e6, 0.0, 1e6], [7e6, 4e5, 0.0]];
        let s = line(base.clone(), 3, 1);
        let p1 = brute_force_optimum(&s).unwrap();
        let s3 = line(base * 3.0, 3, 1);
        let p3 = brute_force_optimum(&s3).unwrap();
        assert!((p3.avg_delay - 3.0 * p1.avg_delay).abs() <= 1e-12 * p3.avg_delay);
    }
}
