"""MS-SSIM goldens for the metric tests, from TensorFlow's ssim_multiscale.

Fewer than five scales use the leading weights renormalised to sum to 1.

    python3 tools/oracles/ms_ssim_golden.py
"""
from pathlib import Path

import numpy as np
from PIL import Image
import tensorflow as tf

FIXTURES = Path(__file__).resolve().parents[2] / "crates/core/tests/fixtures"
WEIGHTS = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333]
PAIRS = [("scene_a.ppm", "scene_a_distorted.ppm", 5), ("gray_small.pgm", "gray_small_distorted.pgm", 3)]


def load(name):
    a = np.asarray(Image.open(FIXTURES / name), dtype=np.float64) / 255.0
    return a[..., None] if a.ndim == 2 else a


def main():
    for a, b, scales in PAIRS:
        w = np.array(WEIGHTS[:scales])
        w = w / w.sum()
        v = tf.image.ssim_multiscale(
            tf.constant(load(a)[None]), tf.constant(load(b)[None]), max_val=1.0,
            power_factors=tuple(w), filter_size=11, filter_sigma=1.5, k1=0.01, k2=0.03)
        print(a, b, scales, repr(float(v.numpy()[0])))


if __name__ == "__main__":
    main()
