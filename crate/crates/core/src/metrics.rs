//! Image quality and label-map overlap metrics.

use std::io::Write;

use ndarray::Array2;
use serde::Serialize;
use thiserror::Error;

use crate::image::{ImageError, ImageTensor};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("images are {height}x{width}; MS-SSIM needs both sides >= {WINDOW}")]
    TooSmall { height: usize, width: usize },
    #[error("label maps differ in shape: {0:?} vs {1:?}")]
    LabelShape((usize, usize), (usize, usize)),
    #[error("label {label} at {at:?} is not below num_classes = {classes}")]
    Label { label: u32, at: (usize, usize), classes: u32 },
    #[error("num_classes must be at least 1")]
    NoClasses,
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub const K1: f64 = 0.01;
pub const K2: f64 = 0.03;
pub const WINDOW: usize = 11;
pub const WINDOW_SIGMA: f64 = 1.5;
/// Per-scale exponents, finest first.
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

pub fn mse(x: &ImageTensor, y: &ImageTensor) -> Result<f64, MetricsError> {
    Ok(x.rms_diff(y)?.powi(2))
}

/// `10 log10(1 / mse)` for unit-range images; `f64::INFINITY` when `x == y`.
pub fn psnr(x: &ImageTensor, y: &ImageTensor) -> Result<f64, MetricsError> {
    let e = mse(x, y)?;
    Ok(if e == 0.0 { f64::INFINITY } else { -10.0 * e.log10() })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MsSsim {
    pub value: f64,
    /// Scales actually used; fewer than 5 when the image is too small, in
    /// which case the leading weights are renormalised to sum to 1.
    pub scales: usize,
}

/// Number of dyadic scales whose coarsest level still fits the window.
pub fn ms_ssim_scales(height: usize, width: usize) -> usize {
    let (mut h, mut w, mut m) = (height, width, 0);
    while m < MS_SSIM_WEIGHTS.len() && h >= WINDOW && w >= WINDOW {
        m += 1;
        h = h.div_ceil(2);
        w = w.div_ceil(2);
    }
    m
}

/// Multi-scale SSIM with a Gaussian window (11 taps, sigma 1.5), valid
/// convolution, 2x2 average pooling between scales (odd sizes padded by
/// repeating the last row or column), contrast-structure terms clamped at 0,
/// and the per-channel products averaged over channels.
pub fn ms_ssim(x: &ImageTensor, y: &ImageTensor) -> Result<MsSsim, MetricsError> {
    x.ensure_same_shape(y)?;
    let (h, w, ch) = x.shape();
    let scales = ms_ssim_scales(h, w);
    if scales == 0 {
        return Err(MetricsError::TooSmall { height: h, width: w });
    }
    let norm: f64 = MS_SSIM_WEIGHTS[..scales].iter().sum();
    let weights: Vec<f64> = MS_SSIM_WEIGHTS[..scales].iter().map(|v| v / norm).collect();
    let kernel = gaussian_window();
    let mut total = 0.0;
    for c in 0..ch {
        let (mut a, mut b) = (Plane::new(h, w, x.plane(c)), Plane::new(h, w, y.plane(c)));
        let mut value = 1.0;
        for (k, wk) in weights.iter().enumerate() {
            if k > 0 {
                a = a.pool();
                b = b.pool();
            }
            let (ssim, cs) = ssim_terms(&a, &b, &kernel);
            let term = if k + 1 == scales { ssim } else { cs };
            value *= term.max(0.0).powf(*wk);
        }
        total += value;
    }
    Ok(MsSsim {
        value: total / ch as f64,
        scales,
    })
}

#[derive(Debug, Clone)]
struct Plane {
    h: usize,
    w: usize,
    v: Vec<f64>,
}

impl Plane {
    fn new(h: usize, w: usize, v: Vec<f64>) -> Self {
        Self { h, w, v }
    }

    fn pool(&self) -> Self {
        let (h, w) = (self.h.div_ceil(2), self.w.div_ceil(2));
        let at = |r: usize, c: usize| self.v[r.min(self.h - 1) * self.w + c.min(self.w - 1)];
        let mut v = Vec::with_capacity(h * w);
        for r in 0..h {
            for c in 0..w {
                let (r2, c2) = (2 * r, 2 * c);
                v.push(0.25 * (at(r2, c2) + at(r2, c2 + 1) + at(r2 + 1, c2) + at(r2 + 1, c2 + 1)));
            }
        }
        Self { h, w, v }
    }

    fn zip(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        Self {
            v: self.v.iter().zip(&other.v).map(|(&a, &b)| f(a, b)).collect(),
            ..*self
        }
    }

    /// Separable valid convolution.
    fn filter(&self, k: &[f64]) -> Self {
        let n = k.len();
        let ow = self.w + 1 - n;
        let oh = self.h + 1 - n;
        let mut rows = vec![0.0; self.h * ow];
        for r in 0..self.h {
            for c in 0..ow {
                rows[r * ow + c] = (0..n).map(|i| k[i] * self.v[r * self.w + c + i]).sum();
            }
        }
        let mut v = vec![0.0; oh * ow];
        for r in 0..oh {
            for c in 0..ow {
                v[r * ow + c] = (0..n).map(|i| k[i] * rows[(r + i) * ow + c]).sum();
            }
        }
        Self { h: oh, w: ow, v }
    }
}

fn gaussian_window() -> Vec<f64> {
    let mid = (WINDOW - 1) as f64 / 2.0;
    let g: Vec<f64> = (0..WINDOW)
        .map(|i| (-0.5 * ((i as f64 - mid) / WINDOW_SIGMA).powi(2)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Mean SSIM and mean contrast-structure over the valid region.
fn ssim_terms(x: &Plane, y: &Plane, k: &[f64]) -> (f64, f64) {
    let c1 = K1 * K1;
    let c2 = K2 * K2;
    let mx = x.filter(k);
    let my = y.filter(k);
    let sxy = x.zip(y, |a, b| a * b).filter(k);
    let sq = x.zip(y, |a, b| a * a + b * b).filter(k);
    let n = mx.v.len() as f64;
    let (mut ssim, mut cs) = (0.0, 0.0);
    for i in 0..mx.v.len() {
        let num0 = 2.0 * mx.v[i] * my.v[i];
        let den0 = mx.v[i] * mx.v[i] + my.v[i] * my.v[i];
        let lum = (num0 + c1) / (den0 + c1);
        let cs_i = (2.0 * sxy.v[i] - num0 + c2) / (sq.v[i] - den0 + c2);
        ssim += lum * cs_i;
        cs += cs_i;
    }
    (ssim / n, cs / n)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IouReport {
    /// `None` for classes absent from both maps; those are left out of the mean.
    pub per_class: Vec<Option<f64>>,
    /// `None` when every class is absent.
    pub mean: Option<f64>,
}

/// Per-class `|pred ∩ truth| / |pred ∪ truth|` and their mean over classes
/// present in either map.
pub fn iou(pred: &Array2<u32>, truth: &Array2<u32>, num_classes: u32) -> Result<IouReport, MetricsError> {
    if num_classes == 0 {
        return Err(MetricsError::NoClasses);
    }
    if pred.dim() != truth.dim() {
        return Err(MetricsError::LabelShape(pred.dim(), truth.dim()));
    }
    for map in [pred, truth] {
        if let Some((at, &label)) = map.indexed_iter().find(|(_, &l)| l >= num_classes) {
            return Err(MetricsError::Label {
                label,
                at,
                classes: num_classes,
            });
        }
    }
    let k = num_classes as usize;
    let mut inter = vec![0u64; k];
    let mut union = vec![0u64; k];
    for (&p, &t) in pred.iter().zip(truth.iter()) {
        let (p, t) = (p as usize, t as usize);
        if p == t {
            inter[p] += 1;
            union[p] += 1;
        } else {
            union[p] += 1;
            union[t] += 1;
        }
    }
    let per_class: Vec<Option<f64>> = inter
        .iter()
        .zip(&union)
        .map(|(&i, &u)| (u > 0).then(|| i as f64 / u as f64))
        .collect();
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    let mean = (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64);
    Ok(IouReport { per_class, mean })
}

/// Label map from luma: class `min(floor(luma * k), k - 1)`, with luma the
/// channel mean. A stand-in when no semantic labels are available.
pub fn intensity_labels(img: &ImageTensor, num_classes: u32) -> Array2<u32> {
    let (h, w, ch) = img.shape();
    Array2::from_shape_fn((h, w), |(y, x)| {
        let luma = (0..ch).map(|c| img.get(y, x, c)).sum::<f64>() / ch as f64;
        ((luma.clamp(0.0, 1.0) * num_classes as f64) as u32).min(num_classes - 1)
    })
}

/// One row of `report.csv`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QualityReport {
    /// `"src->dst"` for a link, `"mean"` for the aggregate row.
    pub scope: String,
    pub psnr_db: f64,
    pub ms_ssim: f64,
    pub ms_ssim_scales: usize,
    pub mse: f64,
    pub bitrate_bpp: f64,
    /// Per-class IoU joined with `;`, empty entries for absent classes.
    pub iou_per_class: String,
    pub mean_iou: Option<f64>,
    pub avg_delay_s: f64,
}

pub const REPORT_HEADER: [&str; 9] = [
    "scope",
    "psnr_db",
    "ms_ssim",
    "ms_ssim_scales",
    "mse",
    "bitrate_bpp",
    "iou_per_class",
    "mean_iou",
    "avg_delay_s",
];

pub fn format_iou_classes(r: &IouReport) -> String {
    r.per_class
        .iter()
        .map(|v| v.map(|x| x.to_string()).unwrap_or_default())
        .collect::<Vec<_>>()
        .join(";")
}

pub fn write_reports(out: impl Write, rows: &[QualityReport]) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::read_pnm;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::path::PathBuf;

    fn fixture(name: &str) -> ImageTensor {
        let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name);
        read_pnm(p).unwrap()
    }

    fn noise(seed: u64, h: usize, w: usize, c: usize) -> ImageTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageTensor::from_fn(h, w, c, |_, _, _| rng.gen::<f64>()).unwrap()
    }

    #[test]
    fn psnr_closed_form() {
        let x = ImageTensor::filled(4, 5, 3, 0.3).unwrap();
        let y = ImageTensor::filled(4, 5, 3, 0.4).unwrap();
        assert!((psnr(&x, &y).unwrap() - 20.0).abs() < 1e-9);
        assert_eq!(psnr(&x, &x).unwrap(), f64::INFINITY);
        let a = noise(1, 7, 9, 1);
        let b = noise(2, 7, 9, 1);
        let direct = {
            let s: f64 = a.data().iter().zip(b.data()).map(|(p, q)| (p - q).powi(2)).sum();
            10.0 * (63.0 / s).log10()
        };
        assert!((psnr(&a, &b).unwrap() - direct).abs() < 1e-9);
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        assert!(psnr(&a, &noise(3, 7, 8, 1)).is_err());
    }

    #[test]
    fn window_sums_to_one() {
        let g = gaussian_window();
        assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(g[0], g[10]);
    }

    #[test]
    fn scale_counts() {
        assert_eq!(ms_ssim_scales(176, 200), 5);
        assert_eq!(ms_ssim_scales(175, 200), 5);
        assert_eq!(ms_ssim_scales(160, 200), 4);
        assert_eq!(ms_ssim_scales(64, 64), 3);
        assert_eq!(ms_ssim_scales(11, 11), 1);
        assert_eq!(ms_ssim_scales(10, 40), 0);
    }

    #[test]
    fn ms_ssim_identities() {
        let x = noise(4, 32, 40, 3);
        let r = ms_ssim(&x, &x).unwrap();
        assert!((r.value - 1.0).abs() < 1e-12);
        assert_eq!(r.scales, 2);
        let flat = ImageTensor::filled(24, 24, 1, 0.5).unwrap();
        let inv = flat.map(|v| 1.0 - v).unwrap();
        assert!((ms_ssim(&flat, &inv).unwrap().value - 1.0).abs() < 1e-12);
        assert!(matches!(
            ms_ssim(&noise(1, 8, 30, 1), &noise(2, 8, 30, 1)),
            Err(MetricsError::TooSmall { .. })
        ));
    }

    #[test]
    fn ms_ssim_matches_reference_goldens() {
        // from tools/oracles/ms_ssim_golden.py (TensorFlow ssim_multiscale)
        let cases = [
            ("scene_a.ppm", "scene_a_distorted.ppm", 5, 0.9227147102355957),
            ("gray_small.pgm", "gray_small_distorted.pgm", 3, 0.9201617240905762),
        ];
        for (a, b, scales, golden) in cases {
            let r = ms_ssim(&fixture(a), &fixture(b)).unwrap();
            assert_eq!(r.scales, scales);
            assert!((r.value - golden).abs() < 1e-4, "{a}: {} vs {golden}", r.value);
        }
    }

    #[test]
    fn iou_hand_counted() {
        let truth = array![[0, 0, 1, 1], [0, 0, 1, 1], [2, 2, 1, 1], [2, 2, 2, 1]];
        let pred = array![[0, 0, 0, 1], [0, 1, 1, 1], [2, 2, 1, 1], [0, 2, 2, 2]];
        let r = iou(&pred, &truth, 4).unwrap();
        // class 0: pred {00,01,02,10,30} truth {00,01,10,11} -> 3 / 6
        // class 1: pred {03,11,12,13,22,23} truth {02,03,12,13,22,23,33} -> 5 / 8
        // class 2: pred {20,21,31,32,33} truth {20,21,30,31,32} -> 4 / 6
        assert_eq!(r.per_class, vec![Some(0.5), Some(0.625), Some(4.0 / 6.0), None]);
        assert_eq!(r.mean, Some((0.5 + 0.625 + 4.0 / 6.0) / 3.0));
        assert_eq!(iou(&truth, &truth, 3).unwrap().per_class, vec![Some(1.0); 3]);
        let a = array![[1, 1], [0, 0]];
        let b = array![[0, 0], [1, 1]];
        assert_eq!(iou(&a, &b, 2).unwrap().mean, Some(0.0));
        assert!(matches!(iou(&a, &array![[5, 0], [0, 0]], 2), Err(MetricsError::Label { label: 5, .. })));
        assert!(matches!(iou(&a, &array![[0, 0]], 2), Err(MetricsError::LabelShape(..))));
    }

    #[test]
    fn report_csv_layout() {
        let row = QualityReport {
            scope: "1->0".into(),
            psnr_db: f64::INFINITY,
            ms_ssim: 1.0,
            ms_ssim_scales: 3,
            mse: 0.0,
            bitrate_bpp: 2.5,
            iou_per_class: format_iou_classes(&IouReport {
                per_class: vec![Some(1.0), None, Some(0.5)],
                mean: Some(0.75),
            }),
            mean_iou: Some(0.75),
            avg_delay_s: 0.125,
        };
        let mut buf = Vec::new();
        write_reports(&mut buf, &[row]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), REPORT_HEADER.join(","));
        assert_eq!(lines.next().unwrap(), "1->0,inf,1.0,3,0.0,2.5,1;;0.5,0.75,0.125");
    }

    proptest! {
        #[test]
        fn ms_ssim_symmetric_and_bounded(seed in any::<u64>(), h in 11usize..40, w in 11usize..40) {
            let a = noise(seed, h, w, 1);
            let b = noise(seed ^ 1, h, w, 1);
            let ab = ms_ssim(&a, &b).unwrap().value;
            prop_assert!((ab - ms_ssim(&b, &a).unwrap().value).abs() < 1e-12);
            prop_assert!((0.0..1.0).contains(&ab));
        }

        #[test]
        fn iou_permutation_invariant(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p: Vec<u32> = (0..36).map(|_| rng.gen_range(0..3)).collect();
            let t: Vec<u32> = (0..36).map(|_| rng.gen_range(0..3)).collect();
            let mut order: Vec<usize> = (0..36).collect();
            for i in (1..36).rev() {
                order.swap(i, rng.gen_range(0..=i));
            }
            let grid = |v: &[u32]| Array2::from_shape_vec((6, 6), v.to_vec()).unwrap();
            let perm = |v: &[u32]| grid(&order.iter().map(|&i| v[i]).collect::<Vec<_>>());
            let base = iou(&grid(&p), &grid(&t), 3).unwrap();
            prop_assert_eq!(&base, &iou(&perm(&p), &perm(&t), 3).unwrap());
            // binary maps: symmetric in argument order
            let bp: Vec<u32> = p.iter().map(|&v| v.min(1)).collect();
            let bt: Vec<u32> = t.iter().map(|&v| v.min(1)).collect();
            prop_assert_eq!(iou(&grid(&bp), &grid(&bt), 2).unwrap(), iou(&grid(&bt), &grid(&bp), 2).unwrap());
        }
    }
}
