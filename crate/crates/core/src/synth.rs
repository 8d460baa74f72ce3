//! Seeded generators for scenarios and images used by the simulator,
//! benchmarks and tests.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::channel::{ChannelParams, VehicleNode};
use crate::image::ImageTensor;
use crate::scenario::{Scenario, DEFAULT_DISTANCE_SCALE_M, DEFAULT_GAMMA_MIN};

/// Random fleet of `n` vehicles with `c` sub-channels and ego id 0.
///
/// Positions fall in a 300 m square, every ordered pair carries between
/// 0.1 and 10 Mbit (log-uniform) except for roughly one in five non-ego
/// pairs, which carry nothing. `min_ego_links` is drawn from
/// `1..=min(c, n - 1)`.
pub fn random_scenario(seed: u64, n: usize, c: u32) -> Scenario {
    assert!(n >= 2 && c >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nodes: Vec<VehicleNode> = (0..n)
        .map(|i| {
            VehicleNode::new(
                i as u32,
                rng.gen_range(-150.0..150.0),
                rng.gen_range(-150.0..150.0),
            )
        })
        .collect();
    let mut volumes = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let empty = j != 0 && rng.gen_bool(0.2);
            if !empty {
                volumes[(i, j)] = 10f64.powf(rng.gen_range(5.0..7.0));
            }
        }
    }
    let max_ego = (c as usize).min(n - 1);
    Scenario {
        nodes,
        ego_id: 0,
        data_volumes: volumes,
        channel: ChannelParams {
            num_subchannels: c,
            ..ChannelParams::default()
        },
        beta: rng.gen_range(0.5..=1.0),
        distance_scale_m: DEFAULT_DISTANCE_SCALE_M,
        gamma_min: DEFAULT_GAMMA_MIN,
        min_ego_links: rng.gen_range(1..=max_ego),
    }
}

/// Street-like RGB scene: sky gradient over a road, a lane marking and a
/// few coloured boxes standing in for vehicles, plus faint sensor noise.
pub fn scene_image(seed: u64, height: usize, width: usize) -> ImageTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let boxes: Vec<([f64; 4], [f64; 3])> = (0..5)
        .map(|_| {
            let geom = [
                rng.gen_range(0.35..0.9),
                rng.gen_range(0.05..0.95),
                rng.gen_range(0.06..0.2),
                rng.gen_range(0.06..0.25),
            ];
            (geom, [rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95)])
        })
        .collect();
    let scale = height.max(width) as f64;
    ImageTensor::from_fn(height, width, 3, |row, col, c| {
        let (y, x) = (row as f64 / scale, col as f64 / scale);
        let mut v = if y > 0.55 {
            [0.35, 0.33, 0.3][c]
        } else {
            [0.45 + 0.3 * y, 0.55 + 0.25 * y, 0.8 - 0.2 * y][c]
        };
        for (g, colour) in &boxes {
            if (y - g[0]).abs() < g[2] / 2.0 && (x - g[1]).abs() < g[3] / 2.0 {
                v = colour[c];
            }
        }
        if y > 0.6 && (x - 0.5 - 0.3 * (y - 0.55)).abs() < 0.012 {
            v = 0.95;
        }
        (v + 0.01 * (rng.gen::<f64>() - 0.5)).clamp(0.0, 1.0)
    })
    .expect("positive dimensions")
}

/// `frames` views of one scene panning right by one pixel per frame
/// (wrapping), each with fresh sensor noise. Consecutive frames share almost
/// all of their content.
pub fn shifting_sequence(seed: u64, frames: usize, height: usize, width: usize) -> Vec<ImageTensor> {
    let base = scene_image(seed, height, width);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    (0..frames)
        .map(|t| {
            ImageTensor::from_fn(height, width, 3, |y, x, c| {
                let v = base.get(y, (x + t) % width, c);
                (v + 0.01 * (rng.gen::<f64>() - 0.5)).clamp(0.0, 1.0)
            })
            .expect("same shape as base")
        })
        .collect()
}

/// Per-channel gain and offset, clamped to `[0, 1]`.
pub fn photometric_shift(img: &ImageTensor, gain: [f64; 3], offset: [f64; 3]) -> ImageTensor {
    let ch = img.channels();
    ImageTensor::from_fn(img.height(), img.width(), ch, |y, x, c| {
        let k = if ch == 1 { 0 } else { c };
        (img.get(y, x, c) * gain[k] + offset[k]).clamp(0.0, 1.0)
    })
    .expect("same shape as input")
}

/// Two image sets of `count` scenes each that differ in photometric domain:
/// the second set is darker with lower contrast and a blue cast.
pub fn two_domain_sets(seed: u64, count: usize, height: usize, width: usize) -> (Vec<ImageTensor>, Vec<ImageTensor>) {
    let a = (0..count as u64).map(|i| scene_image(seed.wrapping_add(i), height, width)).collect();
    let b = (0..count as u64)
        .map(|i| {
            let img = scene_image(seed.wrapping_add(1000 + i), height, width);
            photometric_shift(&img, [0.6, 0.65, 0.8], [0.02, 0.05, 0.15])
        })
        .collect();
    (a, b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generators_are_deterministic_and_in_range() {
        assert_eq!(scene_image(3, 20, 30), scene_image(3, 20, 30));
        assert_ne!(scene_image(3, 20, 30), scene_image(4, 20, 30));
        let seq = shifting_sequence(1, 4, 16, 24);
        assert_eq!(seq.len(), 4);
        assert!(seq.iter().all(|f| f.is_unit_range() && f.shape() == (16, 24, 3)));
        let (a, b) = two_domain_sets(2, 3, 16, 16);
        let mean = |s: &[ImageTensor]| s.iter().map(|i| i.mean()).sum::<f64>() / s.len() as f64;
        assert!(mean(&b) < mean(&a));
    }

    #[test]
    fn sequence_frames_are_shifted_views() {
        let seq = shifting_sequence(9, 3, 12, 20);
        // frame 1 at column x matches frame 0 at column x + 1 up to noise
        let mut worst: f64 = 0.0;
        for y in 0..12 {
            for x in 0..19 {
                worst = worst.max((seq[1].get(y, x, 0) - seq[0].get(y, x + 1, 0)).abs());
            }
        }
        assert!(worst <= 0.0101);
    }

    #[test]
    fn random_scenarios_validate() {
        for seed in 0..50 {
            let s = random_scenario(seed, 2 + (seed as usize) % 3, 1 + (seed as u32) % 4);
            s.validate().unwrap();
        }
    }
}
