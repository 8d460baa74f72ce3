//! Orthonormal block DCT-II and edge-replicating padding.

use std::f64::consts::PI;

/// `basis[k][n] = a_k cos(pi (2n + 1) k / (2b))`, rows orthonormal.
#[derive(Debug, Clone)]
pub(crate) struct DctBasis {
    size: usize,
    basis: Vec<f64>,
}

impl DctBasis {
    pub fn new(size: usize) -> Self {
        let b = size as f64;
        let mut basis = vec![0.0; size * size];
        for k in 0..size {
            let a = if k == 0 { (1.0 / b).sqrt() } else { (2.0 / b).sqrt() };
            for n in 0..size {
                basis[k * size + n] = a * (PI * (2 * n + 1) as f64 * k as f64 / (2.0 * b)).cos();
            }
        }
        Self { size, basis }
    }

    /// `out = B * block * B^T`, both row-major `b x b`.
    pub fn forward(&self, block: &[f64], out: &mut [f64]) {
        let b = self.size;
        let mut tmp = vec![0.0; b * b];
        // tmp = B * block
        for k in 0..b {
            for col in 0..b {
                tmp[k * b + col] = (0..b).map(|n| self.basis[k * b + n] * block[n * b + col]).sum();
            }
        }
        // out = tmp * B^T
        for k in 0..b {
            for l in 0..b {
                out[k * b + l] = (0..b).map(|n| tmp[k * b + n] * self.basis[l * b + n]).sum();
            }
        }
    }

    /// `out = B^T * coeffs * B`.
    pub fn inverse(&self, coeffs: &[f64], out: &mut [f64]) {
        let b = self.size;
        let mut tmp = vec![0.0; b * b];
        for n in 0..b {
            for l in 0..b {
                tmp[n * b + l] = (0..b).map(|k| self.basis[k * b + n] * coeffs[k * b + l]).sum();
            }
        }
        for n in 0..b {
            for m in 0..b {
                out[n * b + m] = (0..b).map(|l| tmp[n * b + l] * self.basis[l * b + m]).sum();
            }
        }
    }
}

/// Smallest multiple of `block` that is `>= dim`.
pub(crate) fn padded(dim: usize, block: usize) -> usize {
    dim.div_ceil(block) * block
}

/// Copies a `h x w` plane into a `ph x pw` buffer, replicating the last row
/// and column into the padding.
pub(crate) fn pad_plane(plane: &[f64], h: usize, w: usize, ph: usize, pw: usize) -> Vec<f64> {
    let mut out = vec![0.0; ph * pw];
    for y in 0..ph {
        let sy = y.min(h - 1);
        for x in 0..pw {
            out[y * pw + x] = plane[sy * w + x.min(w - 1)];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basis_is_orthonormal() {
        for b in [2, 4, 8, 16] {
            let d = DctBasis::new(b);
            for i in 0..b {
                for j in 0..b {
                    let dot: f64 = (0..b).map(|n| d.basis[i * b + n] * d.basis[j * b + n]).sum();
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!((dot - expect).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn forward_inverse_round_trip() {
        let d = DctBasis::new(8);
        let block: Vec<f64> = (0..64).map(|i| ((i * 37) % 255) as f64).collect();
        let mut c = vec![0.0; 64];
        let mut back = vec![0.0; 64];
        d.forward(&block, &mut c);
        d.inverse(&c, &mut back);
        for (a, b) in block.iter().zip(&back) {
            assert!((a - b).abs() < 1e-9);
        }
        // DC of an orthonormal 8x8 DCT is sum / 8
        assert!((c[0] - block.iter().sum::<f64>() / 8.0).abs() < 1e-9);
    }

    #[test]
    fn padding_replicates_edges() {
        let plane = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let p = pad_plane(&plane, 2, 3, 4, 4);
        assert_eq!(&p[0..4], &[1.0, 2.0, 3.0, 3.0]);
        assert_eq!(&p[12..16], &[4.0, 5.0, 6.0, 6.0]);
        assert_eq!(padded(13, 8), 16);
        assert_eq!(padded(16, 8), 16);
    }
}
