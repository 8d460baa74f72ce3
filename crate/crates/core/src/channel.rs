//! Deterministic V2V channel model.
//!
//! Gains follow a log-distance path loss clamped at the reference distance,
//! `h = g0 * (d0 / max(d, d0))^n`, and each of the `c` orthogonal sub-channels
//! carries the Shannon capacity `C = (W / c) * log2(1 + Pt * h / N)`.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChannelError {
    #[error("invalid pair: source and destination are both node {0}")]
    InvalidPair(u32),
    #[error("invalid channel parameter `{field}`: {reason}")]
    InvalidParam { field: &'static str, reason: String },
}

/// How the configured noise figure enters the SNR denominator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseMode {
    /// `N = N0`, used directly as a noise power in watts.
    #[default]
    LiteralPower,
    /// `N = N0 * W / c`, with `N0` a spectral density in W/Hz.
    PsdTimesSubband,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    pub total_bandwidth_hz: f64,
    pub num_subchannels: u32,
    pub transmit_power_w: f64,
    pub noise: f64,
    pub noise_mode: NoiseMode,
    pub pathloss_exponent: f64,
    pub reference_distance_m: f64,
    pub reference_gain: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            total_bandwidth_hz: 20e6,
            num_subchannels: 4,
            transmit_power_w: 0.2,
            noise: 1e-9,
            noise_mode: NoiseMode::LiteralPower,
            pathloss_exponent: 2.7,
            reference_distance_m: 10.0,
            reference_gain: 1.0,
        }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<(), ChannelError> {
        fn positive(field: &'static str, v: f64) -> Result<(), ChannelError> {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(ChannelError::InvalidParam {
                    field,
                    reason: format!("must be finite and > 0, got {v}"),
                })
            }
        }
        positive("total_bandwidth_hz", self.total_bandwidth_hz)?;
        positive("transmit_power_w", self.transmit_power_w)?;
        positive("noise", self.noise)?;
        positive("reference_distance_m", self.reference_distance_m)?;
        positive("reference_gain", self.reference_gain)?;
        if self.num_subchannels == 0 {
            return Err(ChannelError::InvalidParam {
                field: "num_subchannels",
                reason: "must be >= 1".into(),
            });
        }
        if !(self.pathloss_exponent.is_finite() && self.pathloss_exponent >= 2.0) {
            return Err(ChannelError::InvalidParam {
                field: "pathloss_exponent",
                reason: format!("must be >= 2, got {}", self.pathloss_exponent),
            });
        }
        Ok(())
    }

    /// Bandwidth of one orthogonal sub-channel, `W / c`.
    pub fn subchannel_bandwidth_hz(&self) -> f64 {
        self.total_bandwidth_hz / self.num_subchannels as f64
    }

    /// Noise power in the SNR denominator, per [`NoiseMode`].
    pub fn noise_power_w(&self) -> f64 {
        match self.noise_mode {
            NoiseMode::LiteralPower => self.noise,
            NoiseMode::PsdTimesSubband => self.noise * self.subchannel_bandwidth_hz(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleNode {
    pub id: u32,
    /// Planar position in meters.
    pub position: [f64; 2],
}

impl VehicleNode {
    pub fn new(id: u32, x: f64, y: f64) -> Self {
        Self {
            id,
            position: [x, y],
        }
    }

    pub fn distance_to(&self, other: &VehicleNode) -> f64 {
        let dx = self.position[0] - other.position[0];
        let dy = self.position[1] - other.position[1];
        dx.hypot(dy)
    }
}

/// Path gain between two distinct vehicles; lies in `(0, g0]`.
pub fn channel_gain(
    src: &VehicleNode,
    dst: &VehicleNode,
    params: &ChannelParams,
) -> Result<f64, ChannelError> {
    if src.id == dst.id {
        return Err(ChannelError::InvalidPair(src.id));
    }
    Ok(gain_at_distance(src.distance_to(dst), params))
}

pub fn gain_at_distance(distance_m: f64, params: &ChannelParams) -> f64 {
    let d0 = params.reference_distance_m;
    let d = distance_m.max(d0);
    params.reference_gain * (d0 / d).powf(params.pathloss_exponent)
}

/// Shannon capacity of one sub-channel in bit/s for gain `h`.
pub fn link_capacity(h: f64, params: &ChannelParams) -> f64 {
    if h <= 0.0 {
        return 0.0;
    }
    let snr = params.transmit_power_w * h / params.noise_power_w();
    params.subchannel_bandwidth_hz() * (1.0 + snr).log2()
}

/// `C[i][j]` for every ordered pair in node order, zero on the diagonal.
pub fn capacity_matrix(nodes: &[VehicleNode], params: &ChannelParams) -> Array2<f64> {
    let n = nodes.len();
    Array2::from_shape_fn((n, n), |(i, j)| {
        if i == j {
            0.0
        } else {
            link_capacity(gain_at_distance(nodes[i].distance_to(&nodes[j]), params), params)
        }
    })
}

/// Pairwise Euclidean distances in node order.
pub fn distance_matrix(nodes: &[VehicleNode]) -> Array2<f64> {
    let n = nodes.len();
    Array2::from_shape_fn((n, n), |(i, j)| nodes[i].distance_to(&nodes[j]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn unit_params() -> ChannelParams {
        ChannelParams {
            reference_gain: 1.0,
            ..ChannelParams::default()
        }
    }

    #[test]
    fn gain_at_reference_distance_is_g0() {
        let p = unit_params();
        let a = VehicleNode::new(0, 0.0, 0.0);
        let b = VehicleNode::new(1, 10.0, 0.0);
        assert_eq!(channel_gain(&a, &b, &p).unwrap(), 1.0);
    }

    #[test]
    fn gain_double_distance_square_law() {
        let p = ChannelParams {
            pathloss_exponent: 2.0,
            ..unit_params()
        };
        let a = VehicleNode::new(0, 0.0, 0.0);
        let b = VehicleNode::new(1, 0.0, 20.0);
        assert_relative_eq!(channel_gain(&a, &b, &p).unwrap(), 0.25, epsilon = 1e-15);
    }

    #[test]
    fn gain_closed_form_at_37_5m() {
        // (10 / 37.5)^2.7 evaluated independently
        let p = unit_params();
        let a = VehicleNode::new(0, 0.0, 0.0);
        let b = VehicleNode::new(1, 37.5, 0.0);
        assert_relative_eq!(
            channel_gain(&a, &b, &p).unwrap(),
            0.028191330765839375,
            max_relative = 1e-13
        );
    }

    #[test]
    fn gain_clamps_below_reference_distance() {
        let p = ChannelParams {
            reference_gain: 0.5,
            ..unit_params()
        };
        let a = VehicleNode::new(0, 0.0, 0.0);
        let b = VehicleNode::new(1, 1.0, 1.0);
        assert_eq!(channel_gain(&a, &b, &p).unwrap(), 0.5);
    }

    #[test]
    fn same_node_pair_rejected() {
        let a = VehicleNode::new(3, 0.0, 0.0);
        assert_eq!(
            channel_gain(&a, &a, &unit_params()),
            Err(ChannelError::InvalidPair(3))
        );
    }

    #[test]
    fn zero_gain_zero_capacity() {
        assert_eq!(link_capacity(0.0, &unit_params()), 0.0);
    }

    #[test]
    fn capacity_snr_three_two_subchannels() {
        let p = ChannelParams {
            total_bandwidth_hz: 10e6,
            num_subchannels: 2,
            transmit_power_w: 3.0,
            noise: 1.0,
            ..unit_params()
        };
        assert_relative_eq!(link_capacity(1.0, &p), 10e6, max_relative = 1e-15);
    }

    #[test]
    fn capacity_closed_form_at_50m() {
        let p = ChannelParams {
            total_bandwidth_hz: 20e6,
            num_subchannels: 4,
            transmit_power_w: 0.2,
            noise: 1e-9,
            ..unit_params()
        };
        let h = gain_at_distance(50.0, &p);
        assert_relative_eq!(h, 0.012965252773542098, max_relative = 1e-13);
        assert_relative_eq!(link_capacity(h, &p), 106531097.2963636, max_relative = 1e-12);
    }

    #[test]
    fn noise_modes_agree_with_single_subchannel() {
        let psd = ChannelParams {
            num_subchannels: 1,
            noise: 2e-15,
            noise_mode: NoiseMode::PsdTimesSubband,
            ..unit_params()
        };
        let literal = ChannelParams {
            noise: psd.noise * psd.total_bandwidth_hz,
            noise_mode: NoiseMode::LiteralPower,
            ..psd.clone()
        };
        for h in [1e-6, 1e-3, 0.3, 1.0] {
            assert_relative_eq!(
                link_capacity(h, &psd),
                link_capacity(h, &literal),
                max_relative = 1e-14
            );
        }
    }

    #[test]
    fn single_node_capacity_matrix_is_zero() {
        let m = capacity_matrix(&[VehicleNode::new(0, 1.0, 2.0)], &unit_params());
        assert_eq!(m.shape(), &[1, 1]);
        assert_eq!(m[(0, 0)], 0.0);
    }

    #[test]
    fn line_topology_matches_pairwise_calls() {
        let p = unit_params();
        let nodes = vec![
            VehicleNode::new(0, 0.0, 0.0),
            VehicleNode::new(1, 25.0, 0.0),
            VehicleNode::new(2, 60.0, 0.0),
        ];
        let m = capacity_matrix(&nodes, &p);
        for i in 0..3 {
            for j in 0..3 {
                if i == j {
                    assert_eq!(m[(i, j)], 0.0);
                } else {
                    let h = channel_gain(&nodes[i], &nodes[j], &p).unwrap();
                    assert_eq!(m[(i, j)], link_capacity(h, &p));
                    assert_eq!(m[(i, j)], m[(j, i)]);
                }
            }
        }
        assert!(m[(0, 1)] > m[(0, 2)]);
    }

    #[test]
    fn validation_rejects_bad_fields() {
        let bad = ChannelParams {
            total_bandwidth_hz: -1.0,
            ..unit_params()
        };
        assert!(matches!(
            bad.validate(),
            Err(ChannelError::InvalidParam { field: "total_bandwidth_hz", .. })
        ));
        let bad = ChannelParams {
            num_subchannels: 0,
            ..unit_params()
        };
        assert!(bad.validate().is_err());
        assert!(unit_params().validate().is_ok());
    }

    proptest! {
        #[test]
        fn doubling_distance_never_increases_capacity(d in 0.0f64..2000.0, n in 2.0f64..5.0) {
            let p = ChannelParams { pathloss_exponent: n, ..unit_params() };
            let near = link_capacity(gain_at_distance(d, &p), &p);
            let far = link_capacity(gain_at_distance(2.0 * d, &p), &p);
            prop_assert!(far <= near);
            let h = gain_at_distance(d, &p);
            prop_assert!(h > 0.0 && h <= p.reference_gain);
        }

        #[test]
        fn capacity_strictly_increasing_in_gain(h in 1e-9f64..1.0, k in 1.01f64..4.0) {
            let p = unit_params();
            prop_assert!(link_capacity(h * k, &p) > link_capacity(h, &p));
        }
    }
}
