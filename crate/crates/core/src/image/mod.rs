//! Interleaved floating-point images.

mod pnm;

pub use pnm::{decode_pnm, encode_pnm, read_pnm, write_pnm};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("image must be at least 2x2, got {height}x{width}")]
    TooSmall { height: usize, width: usize },
    #[error("channel count must be 1 or 3, got {0}")]
    Channels(usize),
    #[error("buffer holds {got} samples, expected {expected}")]
    BufferSize { expected: usize, got: usize },
    #[error("sample {index} is not finite")]
    NonFinite { index: usize },
    #[error("shape mismatch: {0:?} vs {1:?}")]
    Mismatch((usize, usize, usize), (usize, usize, usize)),
    #[error("malformed PNM data: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// `H x W x C` image stored row-major with interleaved channels.
///
/// Values are nominally in `[0, 1]`; only finiteness is enforced so that
/// intermediate results (for example an unclipped aligned image) can be
/// represented too.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self, ImageError> {
        if height < 2 || width < 2 {
            return Err(ImageError::TooSmall { height, width });
        }
        if channels != 1 && channels != 3 {
            return Err(ImageError::Channels(channels));
        }
        let expected = height * width * channels;
        if data.len() != expected {
            return Err(ImageError::BufferSize {
                expected,
                got: data.len(),
            });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(ImageError::NonFinite { index });
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Result<Self, ImageError> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self, ImageError> {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self::new(height, width, channels, data)
    }

    /// Builds an image from per-channel row-major planes.
    pub fn from_planes(height: usize, width: usize, planes: &[Vec<f64>]) -> Result<Self, ImageError> {
        let channels = planes.len();
        for p in planes {
            if p.len() != height * width {
                return Err(ImageError::BufferSize {
                    expected: height * width,
                    got: p.len(),
                });
            }
        }
        Self::from_fn(height, width, channels, |y, x, c| planes[c][y * width + x])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Row-major copy of one channel.
    pub fn plane(&self, c: usize) -> Vec<f64> {
        self.data.iter().skip(c).step_by(self.channels).copied().collect()
    }

    pub fn planes(&self) -> Vec<Vec<f64>> {
        (0..self.channels).map(|c| self.plane(c)).collect()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self, ImageError> {
        Self::new(
            self.height,
            self.width,
            self.channels,
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    pub fn clamp_unit(&self) -> Self {
        Self {
            data: self.data.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
            ..self.clone()
        }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn is_unit_range(&self) -> bool {
        self.data.iter().all(|v| (0.0..=1.0).contains(v))
    }

    pub fn ensure_same_shape(&self, other: &Self) -> Result<(), ImageError> {
        if self.shape() == other.shape() {
            Ok(())
        } else {
            Err(ImageError::Mismatch(self.shape(), other.shape()))
        }
    }

    /// Root-mean-square difference over all samples.
    pub fn rms_diff(&self, other: &Self) -> Result<f64, ImageError> {
        self.ensure_same_shape(other)?;
        let ss: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        Ok((ss / self.data.len() as f64).sqrt())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_shapes() {
        assert!(matches!(
            ImageTensor::new(1, 4, 1, vec![0.0; 4]),
            Err(ImageError::TooSmall { .. })
        ));
        assert!(matches!(
            ImageTensor::new(2, 2, 2, vec![0.0; 8]),
            Err(ImageError::Channels(2))
        ));
        assert!(matches!(
            ImageTensor::new(2, 2, 1, vec![0.0; 3]),
            Err(ImageError::BufferSize { .. })
        ));
        assert!(matches!(
            ImageTensor::new(2, 2, 1, vec![0.0, f64::NAN, 0.0, 0.0]),
            Err(ImageError::NonFinite { index: 1 })
        ));
    }

    #[test]
    fn planes_round_trip() {
        let img = ImageTensor::from_fn(3, 4, 3, |y, x, c| (y * 100 + x * 10 + c) as f64 / 1000.0).unwrap();
        let back = ImageTensor::from_planes(3, 4, &img.planes()).unwrap();
        assert_eq!(img, back);
        assert_eq!(img.plane(2)[5], img.get(1, 1, 2));
    }
}
