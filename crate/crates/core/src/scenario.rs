//! Fleet description consumed by the link planner.

use std::collections::BTreeSet;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{ChannelError, ChannelParams, VehicleNode};

pub const DEFAULT_DISTANCE_SCALE_M: f64 = 100.0;
pub const DEFAULT_GAMMA_MIN: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScenarioError {
    #[error("invalid `{field}`: {reason}")]
    Invalid { field: String, reason: String },
    #[error(transparent)]
    Channel(#[from] ChannelError),
}

impl ScenarioError {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Self::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// Name of the offending field, when the error is tied to one.
    pub fn field(&self) -> Option<&str> {
        match self {
            Self::Invalid { field, .. } => Some(field),
            Self::Channel(ChannelError::InvalidParam { field, .. }) => Some(field),
            Self::Channel(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub nodes: Vec<VehicleNode>,
    pub ego_id: u32,
    /// `A[i][j]`: bits node `i` prepares for node `j`, indexed in node order.
    pub data_volumes: Array2<f64>,
    pub channel: ChannelParams,
    pub beta: f64,
    /// Normalizer applied to inter-vehicle distance in the compression bound.
    pub distance_scale_m: f64,
    /// Floor on any compression ratio.
    pub gamma_min: f64,
    pub min_ego_links: usize,
}

impl Scenario {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        self.channel.validate()?;
        let n = self.nodes.len();
        if n == 0 {
            return Err(ScenarioError::invalid("nodes", "at least one node is required"));
        }
        let mut seen = BTreeSet::new();
        for node in &self.nodes {
            if !seen.insert(node.id) {
                return Err(ScenarioError::invalid(
                    "nodes",
                    format!("duplicate node id {}", node.id),
                ));
            }
            if !(node.position[0].is_finite() && node.position[1].is_finite()) {
                return Err(ScenarioError::invalid(
                    "nodes",
                    format!("node {} has a non-finite position", node.id),
                ));
            }
        }
        if !seen.contains(&self.ego_id) {
            return Err(ScenarioError::invalid(
                "ego",
                format!("ego id {} is not a node", self.ego_id),
            ));
        }
        if self.data_volumes.shape() != [n, n] {
            return Err(ScenarioError::invalid(
                "volumes",
                format!(
                    "expected a {n}x{n} matrix, got {:?}",
                    self.data_volumes.shape()
                ),
            ));
        }
        for ((i, j), &a) in self.data_volumes.indexed_iter() {
            if !(a.is_finite() && a >= 0.0) {
                return Err(ScenarioError::invalid(
                    "volumes",
                    format!("entry [{i}][{j}] must be finite and >= 0, got {a}"),
                ));
            }
            if i == j && a != 0.0 {
                return Err(ScenarioError::invalid(
                    "volumes",
                    format!("diagonal entry [{i}][{i}] must be 0, got {a}"),
                ));
            }
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(ScenarioError::invalid(
                "beta",
                format!("must lie in (0, 1], got {}", self.beta),
            ));
        }
        if !(self.distance_scale_m.is_finite() && self.distance_scale_m > 0.0) {
            return Err(ScenarioError::invalid(
                "distance_scale_m",
                format!("must be > 0, got {}", self.distance_scale_m),
            ));
        }
        if !(self.gamma_min > 0.0 && self.gamma_min <= 1.0) {
            return Err(ScenarioError::invalid(
                "gamma_min",
                format!("must lie in (0, 1], got {}", self.gamma_min),
            ));
        }
        if self.min_ego_links == 0 {
            return Err(ScenarioError::invalid("min_ego_links", "must be >= 1"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn index_of(&self, id: u32) -> Option<usize> {
        self.nodes.iter().position(|n| n.id == id)
    }

    /// Position of the ego vehicle in node order.
    ///
    /// Panics if the scenario was not validated.
    pub fn ego_index(&self) -> usize {
        self.index_of(self.ego_id).expect("ego id present in a validated scenario")
    }

    /// Number of collaborators within `range_m` of the ego, capped by the
    /// sub-channel count and never below one.
    pub fn default_min_ego_links(&self, range_m: f64) -> usize {
        let Some(ego) = self.index_of(self.ego_id) else {
            return 1;
        };
        let within = self
            .nodes
            .iter()
            .enumerate()
            .filter(|&(i, n)| i != ego && n.distance_to(&self.nodes[ego]) <= range_m)
            .count();
        within.min(self.channel.num_subchannels as usize).max(1)
    }
}
