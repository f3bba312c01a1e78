"""Pixel grids and coordinate-based neural images.

Image pixels live in [0, 1].  A grid of W x H pixels is identified with
points in the square [-1, 1]^2: pixel centers are spaced 2/max(W, H)
apart, centered, with x growing rightward and y growing downward (so a
non-square image letterboxes its shorter axis).  A neural image is a sine
net from those coordinates to colors remapped to [-1, 1] for training.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from . import sinenet
from .metrics import psnr
from .optim import init_adam, loss_backward, optimizer_step
from .sinenet import NetParams, SineNet, forward_graph
from .tape import Tensor

IMAGE_FORMAT_VERSION = "neural-image/1"


@dataclass
class ImageGrid:
    """A float64 (H, W, C) pixel array in [0, 1] with its domain mapping."""

    pixels: np.ndarray

    def __post_init__(self) -> None:
        p = np.asarray(self.pixels, dtype=np.float64)
        if p.ndim == 2:
            p = p[:, :, None]
        if p.ndim != 3:
            raise ValueError(f"expected (H, W) or (H, W, C) pixels, got {p.shape}")
        self.pixels = p

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    @property
    def pixel_size(self) -> float:
        return 2.0 / max(self.width, self.height)

    def coords(self) -> np.ndarray:
        """Domain coordinates of all pixel centers, shape (H*W, 2), row-major."""
        return grid_coords(self.width, self.height)

    def pixels_to_domain(self, pts: np.ndarray) -> np.ndarray:
        """Map (col, row) pixel positions (pixel units) to domain coordinates."""
        pts = np.asarray(pts, dtype=np.float64)
        s = self.pixel_size
        x = (pts[..., 0] + 0.5 - self.width / 2.0) * s
        y = (pts[..., 1] + 0.5 - self.height / 2.0) * s
        return np.stack([x, y], axis=-1)

    def domain_to_pixels(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64)
        s = self.pixel_size
        col = pts[..., 0] / s - 0.5 + self.width / 2.0
        row = pts[..., 1] / s - 0.5 + self.height / 2.0
        return np.stack([col, row], axis=-1)


def grid_coords(width: int, height: int) -> np.ndarray:
    s = 2.0 / max(width, height)
    xs = (np.arange(width) + 0.5 - width / 2.0) * s
    ys = (np.arange(height) + 0.5 - height / 2.0) * s
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx.ravel(), gy.ravel()], axis=1)


def load_image(path: str | Path, grayscale: bool = False) -> ImageGrid:
    img = PILImage.open(path)
    img = img.convert("L" if grayscale else "RGB")
    arr = np.asarray(img, dtype=np.float64) / 255.0
    return ImageGrid(arr)


def save_image(grid: ImageGrid, path: str | Path) -> None:
    arr = np.clip(grid.pixels, 0.0, 1.0)
    data = np.round(arr * 255.0).astype(np.uint8)
    if data.shape[2] == 1:
        data = data[:, :, 0]
    PILImage.fromarray(data).save(path)


def bilinear_sample(pixels: np.ndarray, pix_pts: np.ndarray, fill: float | None = None) -> np.ndarray:
    """Bilinear lookup at fractional (col, row) positions.

    ``fill=None`` clamps to the border; a scalar fill treats everything
    outside the grid as that value.
    """
    h, w = pixels.shape[:2]
    flat = pixels.reshape(h, w, -1)
    col = pix_pts[..., 0]
    row = pix_pts[..., 1]
    c0 = np.floor(col)
    r0 = np.floor(row)
    fc = col - c0
    fr = row - r0
    out = 0.0
    for dc, wc in ((0, 1.0 - fc), (1, fc)):
        for dr, wr in ((0, 1.0 - fr), (1, fr)):
            cc = c0 + dc
            rr = r0 + dr
            if fill is None:
                vals = flat[
                    np.clip(rr, 0, h - 1).astype(np.int64),
                    np.clip(cc, 0, w - 1).astype(np.int64),
                ]
            else:
                ok = (cc >= 0) & (cc <= w - 1) & (rr >= 0) & (rr <= h - 1)
                vals = np.where(
                    ok[..., None],
                    flat[
                        np.clip(rr, 0, h - 1).astype(np.int64),
                        np.clip(cc, 0, w - 1).astype(np.int64),
                    ],
                    fill,
                )
            out = out + (wc * wr)[..., None] * vals
    if pixels.ndim == 2:
        return out[..., 0]
    return out


@dataclass
class ImageFitConfig:
    hidden_width: int = 256
    hidden_layers: int = 3
    omega0: float = 30.0
    steps: int = 2000
    batch: int = 4096
    lr: float = 2e-3
    seed: int = 0
    log_every: int = 50


@dataclass
class NeuralImage:
    """A fitted coordinate net plus the source grid geometry and fit report."""

    net: SineNet
    width: int
    height: int
    channels: int
    fit_psnr: float = float("nan")
    steps: int = 0
    seed: int = 0
    fit_seconds: float = 0.0
    psnr_history: list = field(default_factory=list)

    @property
    def pixel_size(self) -> float:
        return 2.0 / max(self.width, self.height)


def sample(nimg: NeuralImage, coords: np.ndarray) -> np.ndarray:
    """Colors in [0, 1] at domain coordinates, shape (N, C)."""
    y = sinenet.forward(nimg.net, coords)
    return np.clip((y + 1.0) * 0.5, 0.0, 1.0)


def image_gradient(nimg: NeuralImage, coords: np.ndarray) -> np.ndarray:
    """Spatial color gradient d color / d (x, y), shape (N, C, 2)."""
    return 0.5 * sinenet.input_jacobian(nimg.net, coords)


def render(nimg: NeuralImage, width: int, height: int) -> ImageGrid:
    coords = grid_coords(width, height)
    colors = sample(nimg, coords)
    return ImageGrid(colors.reshape(height, width, nimg.channels))


def fit_image(grid: ImageGrid, cfg: ImageFitConfig | None = None, progress=None) -> NeuralImage:
    """Fit a sine net to a pixel grid by Adam on minibatched MSE."""
    cfg = cfg or ImageFitConfig()
    dims = [2] + [cfg.hidden_width] * cfg.hidden_layers + [grid.channels]
    net = sinenet.init_sine_net(dims, omega0=cfg.omega0, seed=cfg.seed)
    params = NetParams(net)
    state = init_adam(params, lr=cfg.lr)
    coords = grid.coords()
    targets = grid.pixels.reshape(-1, grid.channels) * 2.0 - 1.0
    n = coords.shape[0]
    rng = np.random.default_rng(cfg.seed)
    nimg = NeuralImage(net, grid.width, grid.height, grid.channels, seed=cfg.seed)

    def full_psnr() -> float:
        pred = sample(nimg, coords)
        return psnr(pred, grid.pixels.reshape(-1, grid.channels))

    t0 = time.perf_counter()
    for step in range(1, cfg.steps + 1):
        idx = rng.integers(0, n, size=min(cfg.batch, n))
        out = forward_graph(params, coords[idx])
        err = out - Tensor.constant(targets[idx])
        loss = err.square().mean(axis=0).sum()
        tape = loss_backward(loss, params)
        optimizer_step(params, tape, state)
        if step % cfg.log_every == 0 or step == cfg.steps:
            value = full_psnr()
            nimg.psnr_history.append((step, value))
            if progress is not None:
                progress(step, cfg.steps, value)
    nimg.fit_psnr = full_psnr()
    nimg.steps = cfg.steps
    nimg.fit_seconds = round(time.perf_counter() - t0, 3)
    return nimg


# -- persistence -----------------------------------------------------------------


def neural_image_to_dict(nimg: NeuralImage) -> dict:
    return {
        "version": IMAGE_FORMAT_VERSION,
        "net": sinenet.to_json_dict(nimg.net),
        "width": nimg.width,
        "height": nimg.height,
        "channels": nimg.channels,
        "fit_psnr": nimg.fit_psnr,
        "steps": nimg.steps,
        "seed": nimg.seed,
    }


def neural_image_from_dict(doc: dict) -> NeuralImage:
    if doc.get("version") != IMAGE_FORMAT_VERSION:
        raise ValueError(f"unknown neural image version: {doc.get('version')!r}")
    return NeuralImage(
        net=sinenet.from_json_dict(doc["net"]),
        width=int(doc["width"]),
        height=int(doc["height"]),
        channels=int(doc["channels"]),
        fit_psnr=float(doc["fit_psnr"]),
        steps=int(doc["steps"]),
        seed=int(doc["seed"]),
    )


def save_neural_image(nimg: NeuralImage, path: str | Path) -> None:
    Path(path).write_text(json.dumps(neural_image_to_dict(nimg)))


def load_neural_image(path: str | Path) -> NeuralImage:
    return neural_image_from_dict(json.loads(Path(path).read_text()))
