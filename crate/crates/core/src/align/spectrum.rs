use rustfft::num_complex::Complex;
use rustfft::{FftDirection, FftPlanner};

use super::AlignError;
use crate::image::ImageTensor;

/// Amplitudes at or below `PHASE_SNAP * H * W` get phase 0. Such bins are
/// roundoff, and a deterministic phase keeps the spectrum Hermitian when
/// their amplitude is later replaced.
const PHASE_SNAP: f64 = 1e-12;

/// Per-channel amplitude and phase of an unnormalised 2-D DFT.
///
/// Buffers are channel-major (`c * H * W + row * W + col`). When `centered`
/// is set, the zero-frequency bin sits at `(H / 2, W / 2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub amplitude: Vec<f64>,
    pub phase: Vec<f64>,
    pub centered: bool,
}

impl Spectrum {
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    #[inline]
    pub fn index(&self, c: usize, row: usize, col: usize) -> usize {
        (c * self.height + row) * self.width + col
    }

    /// Moves the zero-frequency bin to the centre. No-op if already centred.
    pub fn to_centered(&self) -> Self {
        if self.centered {
            return self.clone();
        }
        let (h, w) = (self.height, self.width);
        self.remap(true, |row, col| ((row + h / 2) % h, (col + w / 2) % w))
    }

    /// Inverse of [`Spectrum::to_centered`].
    pub fn to_natural(&self) -> Self {
        if !self.centered {
            return self.clone();
        }
        let (h, w) = (self.height, self.width);
        self.remap(false, |row, col| ((row + h - h / 2) % h, (col + w - w / 2) % w))
    }

    fn remap(&self, centered: bool, dest: impl Fn(usize, usize) -> (usize, usize)) -> Self {
        let mut amplitude = vec![0.0; self.amplitude.len()];
        let mut phase = vec![0.0; self.phase.len()];
        for c in 0..self.channels {
            for row in 0..self.height {
                for col in 0..self.width {
                    let (r2, c2) = dest(row, col);
                    let from = self.index(c, row, col);
                    let to = self.index(c, r2, c2);
                    amplitude[to] = self.amplitude[from];
                    phase[to] = self.phase[from];
                }
            }
        }
        Self {
            amplitude,
            phase,
            centered,
            ..*self
        }
    }
}

/// Output of [`idft2`].
#[derive(Debug, Clone)]
pub struct Reconstruction {
    /// Real part of the inverse transform (not clipped).
    pub image: ImageTensor,
    /// Largest magnitude of the discarded imaginary part.
    pub max_imag: f64,
}

/// Forward 2-D DFT per channel, `F(u, v) = sum x(h, w) e^{-2 pi i (hu/H + wv/W)}`,
/// in natural (uncentred) layout.
pub fn dft2(img: &ImageTensor) -> Spectrum {
    let (h, w, ch) = img.shape();
    let mut planner = FftPlanner::new();
    let snap = PHASE_SNAP * (h * w) as f64;
    let mut amplitude = Vec::with_capacity(h * w * ch);
    let mut phase = Vec::with_capacity(h * w * ch);
    for c in 0..ch {
        let mut buf: Vec<Complex<f64>> = img.plane(c).into_iter().map(|v| Complex::new(v, 0.0)).collect();
        fft2_in_place(&mut planner, &mut buf, h, w, FftDirection::Forward);
        for z in buf {
            let a = z.norm();
            amplitude.push(a);
            phase.push(if a <= snap { 0.0 } else { z.arg() });
        }
    }
    Spectrum {
        height: h,
        width: w,
        channels: ch,
        amplitude,
        phase,
        centered: false,
    }
}

/// Inverse 2-D DFT (normalised by `1 / (H W)`), keeping the real part.
pub fn idft2(spectrum: &Spectrum) -> Result<Reconstruction, AlignError> {
    let n = spectrum.height * spectrum.width * spectrum.channels;
    if spectrum.amplitude.len() != n || spectrum.phase.len() != n {
        return Err(AlignError::SpectrumSize {
            expected: n,
            amplitude: spectrum.amplitude.len(),
            phase: spectrum.phase.len(),
        });
    }
    let natural = spectrum.to_natural();
    let (h, w) = (spectrum.height, spectrum.width);
    let scale = 1.0 / (h * w) as f64;
    let mut planner = FftPlanner::new();
    let mut planes = Vec::with_capacity(spectrum.channels);
    let mut max_imag: f64 = 0.0;
    for c in 0..spectrum.channels {
        let range = c * h * w..(c + 1) * h * w;
        let mut buf: Vec<Complex<f64>> = natural.amplitude[range.clone()]
            .iter()
            .zip(&natural.phase[range])
            .map(|(&a, &p)| Complex::from_polar(a, p))
            .collect();
        fft2_in_place(&mut planner, &mut buf, h, w, FftDirection::Inverse);
        planes.push(
            buf.iter()
                .map(|z| {
                    max_imag = max_imag.max((z.im * scale).abs());
                    z.re * scale
                })
                .collect::<Vec<f64>>(),
        );
    }
    Ok(Reconstruction {
        image: ImageTensor::from_planes(h, w, &planes)?,
        max_imag,
    })
}

fn fft2_in_place(
    planner: &mut FftPlanner<f64>,
    buf: &mut [Complex<f64>],
    h: usize,
    w: usize,
    direction: FftDirection,
) {
    let rows = planner.plan_fft(w, direction);
    for row in buf.chunks_exact_mut(w) {
        rows.process(row);
    }
    let cols = planner.plan_fft(h, direction);
    let mut column = vec![Complex::default(); h];
    for x in 0..w {
        for y in 0..h {
            column[y] = buf[y * w + x];
        }
        cols.process(&mut column);
        for y in 0..h {
            buf[y * w + x] = column[y];
        }
    }
}
