//! Fourier-domain alignment of a collaborator's image to the ego's domain.
//!
//! The low-frequency amplitude of the source image (global brightness, colour
//! cast, coarse illumination) is replaced by that of the target image inside
//! a centred rectangular mask, the source phase (scene structure) is kept,
//! and the result is transformed back.

mod spectrum;

pub use spectrum::{dft2, idft2, Reconstruction, Spectrum};

use thiserror::Error;

use crate::image::{ImageError, ImageTensor};

#[derive(Debug, Error)]
pub enum AlignError {
    #[error("alpha must lie in [0, 1), got {0}")]
    Alpha(f64),
    #[error("shape mismatch: {0:?} vs {1:?}")]
    Shape((usize, usize, usize), (usize, usize, usize)),
    #[error("mask is {mask:?} but spectrum is {spectrum:?}")]
    MaskShape {
        mask: (usize, usize),
        spectrum: (usize, usize),
    },
    #[error("amplitude mixing needs centred spectra")]
    Layout,
    #[error("spectrum buffers hold {amplitude}/{phase} values, expected {expected}")]
    SpectrumSize {
        expected: usize,
        amplitude: usize,
        phase: usize,
    },
    #[error("image set is empty")]
    EmptySet,
    #[error(transparent)]
    Image(#[from] ImageError),
}

/// Binary low-frequency window over a centred `H x W` spectrum.
///
/// Rows `H/2 - floor(alpha H) ..= H/2 + floor(alpha H)` and the analogous
/// columns are set, clipped to the grid. `alpha = 0` gives an empty mask.
#[derive(Debug, Clone, PartialEq)]
pub struct FreqMask {
    pub alpha: f64,
    pub height: usize,
    pub width: usize,
    bits: Vec<bool>,
}

impl FreqMask {
    #[inline]
    pub fn contains(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

/// Inclusive row and column ranges of the centred window of half-width
/// `floor(alpha * dim)`, clipped to the grid.
fn window(alpha: f64, height: usize, width: usize) -> ((usize, usize), (usize, usize)) {
    let span = |dim: usize| {
        let half = (alpha * dim as f64).floor() as usize;
        let centre = dim / 2;
        (centre.saturating_sub(half), (centre + half).min(dim - 1))
    };
    (span(height), span(width))
}

pub fn build_mask(alpha: f64, height: usize, width: usize) -> Result<FreqMask, AlignError> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(AlignError::Alpha(alpha));
    }
    let mut bits = vec![false; height * width];
    if alpha > 0.0 && height > 0 && width > 0 {
        let ((r0, r1), (c0, c1)) = window(alpha, height, width);
        for row in r0..=r1 {
            for col in c0..=c1 {
                bits[row * width + col] = true;
            }
        }
    }
    Ok(FreqMask {
        alpha,
        height,
        width,
        bits,
    })
}

/// `(1 - M) * src + M * tgt`, element-wise over every channel.
pub fn mix_amplitude(src: &Spectrum, tgt: &Spectrum, mask: &FreqMask) -> Result<Vec<f64>, AlignError> {
    if !(src.centered && tgt.centered) {
        return Err(AlignError::Layout);
    }
    if src.shape() != tgt.shape() {
        return Err(AlignError::Shape(src.shape(), tgt.shape()));
    }
    if (mask.height, mask.width) != (src.height, src.width) {
        return Err(AlignError::MaskShape {
            mask: (mask.height, mask.width),
            spectrum: (src.height, src.width),
        });
    }
    let plane = src.height * src.width;
    Ok(src
        .amplitude
        .iter()
        .zip(&tgt.amplitude)
        .enumerate()
        .map(|(i, (&s, &t))| if mask.bits[i % plane] { t } else { s })
        .collect())
}

/// Full alignment result including the intermediate spectrum.
#[derive(Debug, Clone)]
pub struct Alignment {
    /// Aligned image clipped to `[0, 1]`.
    pub image: ImageTensor,
    /// Real part of the inverse transform before clipping.
    pub unclipped: ImageTensor,
    /// Centred spectrum fed to the inverse transform: mixed amplitude with
    /// the source phase.
    pub spectrum: Spectrum,
    pub max_imag: f64,
}

pub fn align(src: &ImageTensor, tgt: &ImageTensor, alpha: f64) -> Result<ImageTensor, AlignError> {
    align_detailed(src, tgt, alpha).map(|a| a.image)
}

pub fn align_detailed(src: &ImageTensor, tgt: &ImageTensor, alpha: f64) -> Result<Alignment, AlignError> {
    if src.shape() != tgt.shape() {
        return Err(AlignError::Shape(src.shape(), tgt.shape()));
    }
    let mask = build_mask(alpha, src.height(), src.width())?;
    let src_spec = dft2(src).to_centered();
    let tgt_spec = dft2(tgt).to_centered();
    let amplitude = mix_amplitude(&src_spec, &tgt_spec, &mask)?;
    let spectrum = Spectrum {
        amplitude,
        ..src_spec
    };
    let rec = idft2(&spectrum)?;
    Ok(Alignment {
        image: rec.image.clamp_unit(),
        unclipped: rec.image,
        spectrum,
        max_imag: rec.max_imag,
    })
}

/// Log-amplitude features of the centred low-frequency window
/// (half-width `floor(alpha * dim)`, always including the zero-frequency
/// bin), concatenated over channels.
pub fn amplitude_features(img: &ImageTensor, feature_alpha: f64) -> Result<Vec<f64>, AlignError> {
    if !(0.0..1.0).contains(&feature_alpha) {
        return Err(AlignError::Alpha(feature_alpha));
    }
    let spectrum = dft2(img).to_centered();
    let ((r0, r1), (c0, c1)) = window(feature_alpha, spectrum.height, spectrum.width);
    let mut out = Vec::new();
    for c in 0..spectrum.channels {
        for row in r0..=r1 {
            for col in c0..=c1 {
                out.push(spectrum.amplitude[spectrum.index(c, row, col)].ln_1p());
            }
        }
    }
    Ok(out)
}

/// Mean Euclidean distance between the amplitude features of every
/// `(a, b)` pair drawn from the two sets. Smaller means the two sets sit
/// closer together in low-frequency style.
pub fn concentration(set_a: &[ImageTensor], set_b: &[ImageTensor], feature_alpha: f64) -> Result<f64, AlignError> {
    let (Some(first), false) = (set_a.first(), set_b.is_empty()) else {
        return Err(AlignError::EmptySet);
    };
    for img in set_a.iter().chain(set_b) {
        if img.shape() != first.shape() {
            return Err(AlignError::Shape(first.shape(), img.shape()));
        }
    }
    let fa = set_a
        .iter()
        .map(|i| amplitude_features(i, feature_alpha))
        .collect::<Result<Vec<_>, _>>()?;
    let fb = set_b
        .iter()
        .map(|i| amplitude_features(i, feature_alpha))
        .collect::<Result<Vec<_>, _>>()?;
    let mut total = 0.0;
    for a in &fa {
        for b in &fb {
            total += a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        }
    }
    Ok(total / (fa.len() * fb.len()) as f64)
}
