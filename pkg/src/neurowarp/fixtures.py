"""Procedurally generated demo assets: faces, landmarks, masks, toy pairs.

Everything is deterministic and computed on the fly, so the repository
ships no binary images.  The synthetic face pair is rendered from one
parametric template evaluated at two parameter sets; its landmarks are
computed from the same parameters, which guarantees that landmark motion
matches feature motion between the two renders.

Run ``python -m neurowarp.fixtures OUTDIR`` to write the assets plus a
starter project config to disk.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .image import ImageGrid, grid_coords, save_image
from .warp import LandmarkPairs, RegionMask, landmarks_to_dict, polygon_mask


@dataclass
class FaceSpec:
    """Parameters of the face template, in domain units (y grows downward)."""

    head_w: float = 0.60
    head_h: float = 0.76
    eye_dx: float = 0.24
    eye_y: float = -0.16
    eye_r: float = 0.085
    brow_dy: float = 0.14
    brow_len: float = 0.20
    nose_len: float = 0.34
    nose_w: float = 0.11
    mouth_y: float = 0.38
    mouth_w: float = 0.22
    mouth_h: float = 0.065
    smile: float = 0.0


SOURCE_FACE = FaceSpec()
TARGET_FACE = FaceSpec(
    head_w=0.56,
    head_h=0.79,
    eye_dx=0.29,
    eye_y=-0.21,
    eye_r=0.075,
    brow_dy=0.165,
    brow_len=0.23,
    nose_len=0.38,
    nose_w=0.125,
    mouth_y=0.44,
    mouth_w=0.28,
    mouth_h=0.050,
    smile=0.06,
)


def _soft(d: np.ndarray, softness: float) -> np.ndarray:
    """Smooth 0..1 step that is ~1 where d < 0."""
    return 1.0 / (1.0 + np.exp(np.clip(d / softness, -40, 40)))


def render_face(spec: FaceSpec, size: int = 128) -> ImageGrid:
    coords = grid_coords(size, size)
    x, y = coords[:, 0], coords[:, 1]

    def ellipse(cx, cy, ax, ay, softness=0.05):
        d = ((x - cx) / ax) ** 2 + ((y - cy) / ay) ** 2 - 1.0
        return _soft(d, softness)

    r = 0.24 + 0.04 * y
    g = 0.27 + 0.03 * y
    b = 0.36 + 0.02 * y

    head = ellipse(0.0, 0.0, spec.head_w, spec.head_h, 0.06)
    shade = 1.0 + 0.10 * np.sin(1.9 * x + 0.4) * np.sin(1.6 * y - 0.3) - 0.10 * (y + x * 0.3)
    skin = np.stack([0.82 * shade, 0.66 * shade, 0.54 * shade], axis=1)
    img = np.stack([r, g, b], axis=1)
    img = img * (1 - head[:, None]) + skin * head[:, None]

    for sx in (-1.0, 1.0):
        ex = sx * spec.eye_dx
        sclera = ellipse(ex, spec.eye_y, spec.eye_r * 1.45, spec.eye_r, 0.04)
        img = img * (1 - sclera[:, None]) + np.array([0.92, 0.92, 0.9])[None] * sclera[:, None]
        iris = ellipse(ex, spec.eye_y, spec.eye_r * 0.55, spec.eye_r * 0.55, 0.05)
        img = img * (1 - iris[:, None]) + np.array([0.16, 0.22, 0.34])[None] * iris[:, None]
        brow_y = spec.eye_y - spec.brow_dy + 0.05 * ((x - ex) / spec.brow_len) ** 2
        brow = _soft(np.abs(y - brow_y) - 0.022, 0.018) * _soft(
            np.abs(x - ex) - spec.brow_len / 2, 0.03
        )
        img = img * (1 - brow[:, None]) + np.array([0.30, 0.22, 0.16])[None] * brow[:, None]

    nose_top = spec.eye_y + 0.06
    ny = np.clip((y - nose_top) / spec.nose_len, 0.0, 1.0)
    nose_half = spec.nose_w * (0.25 + 0.75 * ny)
    nose = _soft(np.abs(x) - nose_half, 0.03) * _soft(nose_top - y, 0.03) * _soft(
        y - (nose_top + spec.nose_len), 0.03
    )
    nose_col = np.stack([0.72 * shade, 0.55 * shade, 0.44 * shade], axis=1)
    img = img * (1 - 0.55 * nose[:, None]) + nose_col * 0.55 * nose[:, None]

    mouth_y = spec.mouth_y + spec.smile * (1.0 - (x / max(spec.mouth_w, 1e-6)) ** 2)
    d = (x / spec.mouth_w) ** 2 + ((y - mouth_y) / spec.mouth_h) ** 2 - 1.0
    mouth = _soft(d, 0.05)
    img = img * (1 - mouth[:, None]) + np.array([0.62, 0.26, 0.28])[None] * mouth[:, None]

    img = np.clip(img, 0.0, 1.0)
    return ImageGrid(img.reshape(size, size, 3))


def face_landmarks(spec: FaceSpec) -> np.ndarray:
    """68 feature points computed from the template parameters."""
    pts: list[tuple[float, float]] = []

    # jaw line: 17 points on the lower half of the head ellipse
    for phi in np.linspace(np.radians(170), np.radians(10), 17):
        pts.append((spec.head_w * np.cos(phi) * 0.97, spec.head_h * np.sin(phi) * 0.97))

    # brows: 5 points each, following the rendered brow curve
    for sx in (-1.0, 1.0):
        ex = sx * spec.eye_dx
        for u in np.linspace(-0.5, 0.5, 5):
            bx = ex + u * spec.brow_len
            by = spec.eye_y - spec.brow_dy + 0.05 * (u * spec.brow_len / spec.brow_len) ** 2
            pts.append((bx, by))

    # nose: 4 bridge points and 5 base points
    nose_top = spec.eye_y + 0.06
    for v in np.linspace(0.15, 0.85, 4):
        pts.append((0.0, nose_top + v * spec.nose_len))
    base_y = nose_top + spec.nose_len
    for u in np.linspace(-1.0, 1.0, 5):
        pts.append((u * spec.nose_w, base_y - 0.02 * (1 - u**2)))

    # eyes: 6 points each around the eye ellipse
    for sx in (-1.0, 1.0):
        ex = sx * spec.eye_dx
        for ang in (180.0, 120.0, 60.0, 0.0, -60.0, -120.0):
            a = np.radians(ang)
            pts.append((ex + spec.eye_r * 1.45 * np.cos(a), spec.eye_y - spec.eye_r * np.sin(a)))

    # mouth: 12 outer + 8 inner points, with the smile offset
    def mouth_pt(scale_w, scale_h, ang):
        a = np.radians(ang)
        mx = spec.mouth_w * scale_w * np.cos(a)
        my_c = spec.mouth_y + spec.smile * (1.0 - (mx / max(spec.mouth_w, 1e-6)) ** 2)
        return (mx, my_c + spec.mouth_h * scale_h * np.sin(a))

    for ang in np.linspace(0, 330, 12):
        pts.append(mouth_pt(1.0, 1.0, ang))
    for ang in np.linspace(0, 315, 8):
        pts.append(mouth_pt(0.6, 0.45, ang))

    return np.asarray(pts, dtype=np.float64)


def face_pair_landmarks() -> LandmarkPairs:
    labels = (
        [f"jaw_{i}" for i in range(17)]
        + [f"brow_l_{i}" for i in range(5)]
        + [f"brow_r_{i}" for i in range(5)]
        + [f"nose_{i}" for i in range(9)]
        + [f"eye_l_{i}" for i in range(6)]
        + [f"eye_r_{i}" for i in range(6)]
        + [f"mouth_{i}" for i in range(20)]
    )
    return LandmarkPairs(face_landmarks(SOURCE_FACE), face_landmarks(TARGET_FACE), labels)


def eyes_region_mask(size: int = 128) -> RegionMask:
    """Rounded box around both eyes of the source face."""
    spec = SOURCE_FACE
    coords = grid_coords(size, size)
    x, y = coords[:, 0], coords[:, 1]
    half_w = spec.eye_dx + 2.6 * spec.eye_r
    half_h = 2.4 * spec.eye_r
    inside = (np.abs(x) <= half_w) & (np.abs(y - spec.eye_y) <= half_h)
    return RegionMask(inside.reshape(size, size).astype(np.float64))


def disk_mask(size: int, center: tuple[float, float], radius: float) -> RegionMask:
    coords = grid_coords(size, size)
    d = np.linalg.norm(coords - np.asarray(center, dtype=np.float64), axis=1)
    return RegionMask((d <= radius).reshape(size, size).astype(np.float64))


# -- simple landmark-only fixtures ---------------------------------------------


def fixed_points_fixture(n: int = 10, seed: int = 0) -> LandmarkPairs:
    """p == q everywhere; the optimum is the identity at all times."""
    rng = np.random.default_rng(seed)
    p = rng.uniform(-0.7, 0.7, size=(n, 2))
    return LandmarkPairs(p, p.copy())


def translation_fixture(n: int = 10, delta=(0.2, 0.0), seed: int = 1) -> LandmarkPairs:
    rng = np.random.default_rng(seed)
    p = rng.uniform(-0.7, 0.5, size=(n, 2))
    return LandmarkPairs(p, p + np.asarray(delta, dtype=np.float64))


# -- toy image pairs --------------------------------------------------------------


def constant_image(size: int = 64, value=(0.4, 0.5, 0.6)) -> ImageGrid:
    arr = np.ones((size, size, 3)) * np.asarray(value)[None, None, :]
    return ImageGrid(arr)


def ramp_image(size: int = 64) -> ImageGrid:
    coords = grid_coords(size, size)
    x = coords[:, 0].reshape(size, size)
    y = coords[:, 1].reshape(size, size)
    arr = np.stack(
        [(x + 1) / 2, (y + 1) / 2, (2 - x - y) / 4],
        axis=2,
    )
    return ImageGrid(np.clip(arr, 0, 1))


def toy_gradient_pair(size: int = 32) -> tuple[ImageGrid, ImageGrid]:
    """Two smooth grayscale images for blending tests.

    The second image adds a localized dome to the first, so its
    gradients stay compatible with the shared colors near any region
    boundary that encloses the dome.  Gradient-domain edits then admit
    a clean comparison against a grid-based reference solve.
    """
    coords = grid_coords(size, size)
    x = coords[:, 0].reshape(size, size)
    y = coords[:, 1].reshape(size, size)
    base = 0.5 + 0.2 * np.sin(2.1 * x + 0.8 * y + 0.4) + 0.06 * np.cos(3.0 * y)
    dome = 0.2 * np.exp(-((x - 0.05) ** 2 + (y + 0.08) ** 2) / (2 * 0.24**2))
    return ImageGrid(base), ImageGrid(base + dome)


# -- asset writer -------------------------------------------------------------------


def write_demo_assets(outdir: str | Path, face_size: int = 128) -> dict:
    """Write the face pair, landmarks, masks and a starter config; returns paths."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}

    save_image(render_face(SOURCE_FACE, face_size), out / "face0.png")
    save_image(render_face(TARGET_FACE, face_size), out / "face1.png")
    paths["image0"] = str(out / "face0.png")
    paths["image1"] = str(out / "face1.png")

    (out / "landmarks.json").write_text(json.dumps(landmarks_to_dict(face_pair_landmarks())))
    paths["landmarks"] = str(out / "landmarks.json")

    mask = eyes_region_mask(face_size)
    save_image(ImageGrid(mask.mask[:, :, None]), out / "region_eyes.png")
    paths["region"] = str(out / "region_eyes.png")

    config = f"""# starter project for the bundled synthetic face pair
[images]
image0 = "face0.png"
image1 = "face1.png"

[landmarks]
path = "landmarks.json"

[fit]
hidden_width = 192
hidden_layers = 2
steps = 1500
batch = 2048
lr = 0.002
seed = 0

[warp]
steps = 6000
lr = 0.0005
spacetime_samples = 1024
time_samples = 32
seed = 0

[blend]
mode = "linear"

[render]
frames = 33
size = 256
"""
    (out / "config.toml").write_text(config)
    paths["config"] = str(out / "config.toml")
    return paths


def main(argv=None) -> int:
    import argparse

    ap = argparse.ArgumentParser(description="write the bundled demo assets")
    ap.add_argument("outdir")
    ap.add_argument("--size", type=int, default=128)
    args = ap.parse_args(argv)
    paths = write_demo_assets(args.outdir, args.size)
    for k, v in paths.items():
        print(f"{k}: {v}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
