"""Morph construction on top of the aligned warpings.

Two blending families are provided:

* linear: a pointwise convex combination of the two warped images,
* gradient-domain: a coordinate net I(x, y, t) trained so that inside a
  transported edit region its spatial color Jacobian follows a target
  field assembled from the warped images (seamless clone, averaged
  clone, or mixed clone), while outside the region it regresses onto a
  chosen base warped image.

Feature transfer reuses the gradient-domain machinery with the blend
time pinned, moving a region of one face onto the other.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import sinenet
from .image import NeuralImage, image_gradient
from .optim import init_adam, loss_backward, optimizer_step
from .sinenet import NetParams, SineNet, forward_graph, jacobian_graph
from .tape import Tensor
from .warp import (
    RegionMask,
    region_contains,
    spatial_jacobian,
    warp_point,
    warped_image_sample,
)

MORPH_FORMAT_VERSION = "morph-model/1"
BLEND_MODES = ("clone", "average", "mix")


def _check_unit_time(t) -> None:
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < -1e-9) or np.any(t > 1.0 + 1e-9):
        raise ValueError(f"blend time {t} outside [0, 1]")


@dataclass
class GradientFieldSpec:
    """What the gradient-domain loss should reproduce.

    ``mode`` picks the target field; ``region`` is the edit region drawn
    on the first image's grid and transported through the warp at query
    time; ``base`` picks which warped image supplies colors outside the
    region (and, for clone mode, which one donates gradients inside:
    always the other one).
    """

    mode: str
    region: RegionMask
    base: int = 0

    def __post_init__(self) -> None:
        if self.mode not in BLEND_MODES:
            raise ValueError(f"unknown blend mode {self.mode!r}; expected one of {BLEND_MODES}")
        if self.base not in (0, 1):
            raise ValueError("base image index must be 0 or 1")
        if not isinstance(self.region, RegionMask):
            raise ValueError("spec needs a RegionMask (possibly empty)")


@dataclass
class MorphConfig:
    hidden_width: int = 256
    hidden_layers: int = 3
    omega0: float = 30.0
    steps: int = 2000
    batch: int = 4096
    lr: float = 1e-3
    seed: int = 0
    lambda_field: float = 1.0
    lambda_boundary: float = 1.0
    fixed_time: float | None = None
    log_every: int = 50


@dataclass
class MorphModel:
    """Trained morph net I(x, y, t) plus how it was assembled."""

    net: SineNet
    mode: str
    base: int
    fixed_time: float | None = None
    config: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)


# -- pointwise blending ---------------------------------------------------------------


def linear_blend(warp, img0: NeuralImage, img1: NeuralImage, coords: np.ndarray, t) -> np.ndarray:
    """(1 - t) * warped image 0 + t * warped image 1, colors in [0, 1]."""
    _check_unit_time(t)
    s0 = warped_image_sample(warp, img0, 0, coords, t)
    s1 = warped_image_sample(warp, img1, 1, coords, t)
    w = np.broadcast_to(np.asarray(t, dtype=np.float64), (s0.shape[0],))[:, None]
    return (1.0 - w) * s0 + w * s1


def warped_jacobian(warp, nimg: NeuralImage, index: int, coords: np.ndarray, t) -> np.ndarray:
    """Spatial color Jacobian of warped image ``index`` at blend time t.

    Chain rule: the image gradient evaluated at the warped point, times
    the warp's spatial Jacobian.  Shape (N, C, 2), color per domain unit.
    """
    if index not in (0, 1):
        raise ValueError(f"image index must be 0 or 1, got {index}")
    _check_unit_time(t)
    tq = float(index) - np.asarray(t, dtype=np.float64)
    y = warp_point(warp, np.asarray(coords, dtype=np.float64).reshape(-1, 2), tq)
    grad = image_gradient(nimg, y)
    jac = spatial_jacobian(warp, coords, tq)
    return np.einsum("bcj,bjk->bck", grad, jac, optimize=True)


def target_gradient(
    warp, img0: NeuralImage, img1: NeuralImage, spec: GradientFieldSpec,
    coords: np.ndarray, t,
) -> np.ndarray:
    """Guidance field U(x, t) for the gradient-domain loss, (N, C, 2).

    clone takes the non-base warped Jacobian, average interpolates the
    two with weight t, mix keeps whichever has the larger Frobenius
    norm over channels at each point.
    """
    j0 = warped_jacobian(warp, img0, 0, coords, t)
    j1 = warped_jacobian(warp, img1, 1, coords, t)
    if spec.mode == "clone":
        return j1 if spec.base == 0 else j0
    if spec.mode == "average":
        w = np.broadcast_to(np.asarray(t, dtype=np.float64), (j0.shape[0],))[:, None, None]
        return (1.0 - w) * j0 + w * j1
    n0 = np.sum(j0 * j0, axis=(1, 2))
    n1 = np.sum(j1 * j1, axis=(1, 2))
    return np.where((n0 > n1)[:, None, None], j0, j1)


# -- gradient-domain training ---------------------------------------------------------


def train_morph(
    warp, img0: NeuralImage, img1: NeuralImage, spec: GradientFieldSpec,
    cfg: MorphConfig | None = None, progress=None,
) -> MorphModel:
    """Fit the morph net to the guidance field inside the transported
    region and to the base warped image outside it.

    Each step draws fresh uniform samples over space and [0, 1] time
    (or the pinned time), routes them by region membership, and
    compares in color units so the two terms weigh comparably.
    """
    cfg = cfg or MorphConfig()
    if img0.channels != img1.channels:
        raise ValueError("images must share a channel count to blend")
    base_img = img0 if spec.base == 0 else img1
    dims = [3] + [cfg.hidden_width] * cfg.hidden_layers + [img0.channels]
    net = sinenet.init_sine_net(dims, omega0=cfg.omega0, seed=cfg.seed)
    params = NetParams(net)
    state = init_adam(params, lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    history = []
    t0 = time.perf_counter()

    for step in range(1, cfg.steps + 1):
        xy = rng.uniform(-1.0, 1.0, size=(cfg.batch, 2))
        if cfg.fixed_time is None:
            ts = rng.uniform(0.0, 1.0, size=cfg.batch)
        else:
            ts = np.full(cfg.batch, cfg.fixed_time)
        if spec.region.is_empty():
            inside = np.zeros(cfg.batch, dtype=bool)
        else:
            inside = region_contains(warp, spec.region, xy, ts)
        pts = np.column_stack([xy, ts])

        loss = None
        terms = {}
        if inside.any() and cfg.lambda_field > 0.0:
            u = target_gradient(warp, img0, img1, spec, xy[inside], ts[inside])
            jac = jacobian_graph(params, pts[inside], in_cols=[0, 1]) * 0.5
            term = (jac - Tensor.constant(u)).square().sum() * (1.0 / cfg.batch)
            terms["field"] = float(term.data)
            loss = term * cfg.lambda_field
        outside = ~inside
        if outside.any() and cfg.lambda_boundary > 0.0:
            colors = warped_image_sample(warp, base_img, spec.base, xy[outside], ts[outside])
            raw = forward_graph(params, pts[outside])
            term = ((raw - Tensor.constant(2.0 * colors - 1.0)) * 0.5).square().sum() * (
                1.0 / cfg.batch
            )
            terms["boundary"] = float(term.data)
            loss = term * cfg.lambda_boundary if loss is None else loss + term * cfg.lambda_boundary
        if loss is None:
            raise ValueError("no active loss term; check weights and the region")

        tape = loss_backward(loss, params)
        optimizer_step(params, tape, state)
        if step % cfg.log_every == 0 or step == cfg.steps:
            history.append({"step": step, **{k: round(v, 8) for k, v in terms.items()}})
            if progress is not None:
                progress(step, cfg.steps, terms)

    model = MorphModel(
        net, spec.mode, spec.base, cfg.fixed_time,
        config={k: getattr(cfg, k) for k in MorphConfig.__dataclass_fields__},
    )
    model.diagnostics = morph_diagnostics(model, warp, img0, img1, spec)
    model.diagnostics["loss_history"] = history
    model.diagnostics["train_seconds"] = round(time.perf_counter() - t0, 3)
    return model


def morph_sample(model: MorphModel, coords: np.ndarray, t) -> np.ndarray:
    """Colors in [0, 1] at domain coordinates and blend time t."""
    _check_unit_time(t)
    coords = np.asarray(coords, dtype=np.float64).reshape(-1, 2)
    tcol = np.broadcast_to(np.asarray(t, dtype=np.float64), (coords.shape[0],))
    raw = sinenet.forward(model.net, np.column_stack([coords, tcol]))
    return np.clip((raw + 1.0) * 0.5, 0.0, 1.0)


def morph_diagnostics(
    model: MorphModel, warp, img0: NeuralImage, img1: NeuralImage, spec: GradientFieldSpec,
) -> dict:
    """Probe-grid residuals of the two training terms, in color units."""
    lin = np.linspace(-1.0, 1.0, 33)
    gx, gy = np.meshgrid(lin, lin)
    xy = np.column_stack([gx.ravel(), gy.ravel()])
    if model.fixed_time is None:
        times = np.linspace(0.0, 1.0, 5)
    else:
        times = np.array([model.fixed_time])
    base_img = img0 if spec.base == 0 else img1

    boundary, fields = [], []
    for t in times:
        inside = (
            np.zeros(len(xy), dtype=bool)
            if spec.region.is_empty()
            else region_contains(warp, spec.region, xy, t)
        )
        got = morph_sample(model, xy, t)
        if (~inside).any():
            want = warped_image_sample(warp, base_img, spec.base, xy[~inside], t)
            boundary.append(np.abs(got[~inside] - want).mean())
        if inside.any():
            u = target_gradient(warp, img0, img1, spec, xy[inside], t)
            pts = np.column_stack([xy[inside], np.full(inside.sum(), t)])
            jac = 0.5 * sinenet.input_jacobian(model.net, pts)[:, :, :2]
            fields.append(np.sqrt(np.sum((jac - u) ** 2, axis=(1, 2))).mean())
    out = {"boundary_residual": float(np.mean(boundary)) if boundary else 0.0}
    if fields:
        out["field_residual"] = float(np.mean(fields))
    return out


def feature_transfer(
    warp, img0: NeuralImage, img1: NeuralImage, region: RegionMask,
    cfg: MorphConfig | None = None, base: int = 1,
) -> MorphModel:
    """Move the region of image 0 onto image ``base`` at pinned time 1.

    At t=1 image 1 sits in place while image 0 is fully warped toward
    it, so cloning the non-base gradients composites the transported
    feature seamlessly.
    """
    cfg = replace(cfg or MorphConfig(), fixed_time=1.0)
    spec = GradientFieldSpec("clone", region, base=base)
    return train_morph(warp, img0, img1, spec, cfg)


# -- persistence ----------------------------------------------------------------------


def morph_to_dict(model: MorphModel) -> dict:
    return {
        "version": MORPH_FORMAT_VERSION,
        "mode": model.mode,
        "base": model.base,
        "fixed_time": model.fixed_time,
        "net": sinenet.to_json_dict(model.net),
        "config": model.config,
        "diagnostics": model.diagnostics,
    }


def morph_from_dict(doc: dict) -> MorphModel:
    if doc.get("version") != MORPH_FORMAT_VERSION:
        raise ValueError(f"unsupported morph model version {doc.get('version')!r}")
    if doc.get("mode") not in BLEND_MODES:
        raise ValueError(f"unknown blend mode {doc.get('mode')!r}")
    return MorphModel(
        sinenet.from_json_dict(doc["net"]),
        doc["mode"],
        int(doc["base"]),
        doc.get("fixed_time"),
        config=doc.get("config", {}),
        diagnostics=doc.get("diagnostics", {}),
    )


def save_morph(model: MorphModel, path: str | Path) -> None:
    Path(path).write_text(json.dumps(morph_to_dict(model), indent=1))


def load_morph(path: str | Path) -> MorphModel:
    return morph_from_dict(json.loads(Path(path).read_text()))