"""Writes the image fixtures under crates/core/tests/fixtures.

    python3 tools/make_fixtures.py
"""
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

OUT = Path(__file__).resolve().parents[1] / "crates/core/tests/fixtures"


def write_pnm(path, img):
    img = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    h, w = img.shape[:2]
    magic = "P5" if img.ndim == 2 else "P6"
    path.write_bytes(f"{magic}\n{w} {h}\n255\n".encode() + img.tobytes())


def scene(rng, h, w):
    y, x = np.mgrid[0:h, 0:w] / max(h, w)
    sky = np.stack([0.45 + 0.3 * y, 0.55 + 0.25 * y, 0.8 - 0.2 * y], -1)
    road = (y > 0.55)[..., None] * np.array([0.35, 0.33, 0.3])
    img = np.where((y > 0.55)[..., None], road, sky)
    for _ in range(6):
        cy, cx = rng.uniform(0.3, 0.9), rng.uniform(0.05, 0.95)
        rh, rw = rng.uniform(0.05, 0.2), rng.uniform(0.05, 0.25)
        box = (abs(y - cy) < rh / 2) & (abs(x - cx) < rw / 2)
        img = np.where(box[..., None], rng.uniform(0.05, 0.95, 3), img)
    lane = (abs(x - 0.5 - 0.3 * (y - 0.55)) < 0.01) & (y > 0.6)
    img = np.where(lane[..., None], 0.95, img)
    return np.clip(img + rng.normal(0, 0.01, img.shape), 0, 1)


def distort(rng, img):
    blurred = gaussian_filter(img, sigma=(1.0, 1.0, 0)[: img.ndim])
    return np.clip(blurred + rng.normal(0, 0.03, img.shape), 0, 1)


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(20240601)
    a = scene(rng, 192, 192)
    write_pnm(OUT / "scene_a.ppm", a)
    write_pnm(OUT / "scene_a_distorted.ppm", distort(rng, a))
    g = scene(rng, 48, 64).mean(-1)
    write_pnm(OUT / "gray_small.pgm", g)
    write_pnm(OUT / "gray_small_distorted.pgm", distort(rng, g))
    write_pnm(OUT / "street.ppm", scene(rng, 64, 96))


if __name__ == "__main__":
    main()
