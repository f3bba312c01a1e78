"""Time-dependent smooth warps of the square [-1, 1]^2.

The warp is ``T(x, t) = x + N(x, y, t)`` with ``N`` a sine net, so the
zero net is exactly the identity map.  Time runs in [-1, 1]; convention:
``T(., t)`` for t in [0, 1] carries the source geometry forward, and the
same net evaluated at t - 1 in [-1, 0] carries the target geometry
backward, so at a shared intermediate time matched features meet.

Training minimizes a weighted sum of four Monte Carlo terms:

* identity: T(x, 0) should be x,
* inverse consistency: T(T(x, t), -t) should return to x,
* landmark paths: T(p_j, t) should coincide with T(q_j, t - 1),
* thin-plate energy: the squared Frobenius norm of the Hessian of T over
  all three inputs, which keeps the deformation smooth in space and time.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import sinenet
from .image import ImageGrid, NeuralImage, bilinear_sample, load_image
from .image import sample as image_sample
from .optim import init_adam, loss_backward, optimizer_step
from .sinenet import NetParams, SineNet, forward_graph, hessian_graph
from .tape import Tensor, concat, einsum

LANDMARK_FORMAT_VERSION = "landmarks/1"
WARP_FORMAT_VERSION = "warp-model/1"


class LandmarkError(ValueError):
    """Invalid landmark payload; the message names the offending pair."""


@dataclass
class LandmarkPairs:
    """Matched points in domain coordinates: p on the source, q on the target."""

    p: np.ndarray
    q: np.ndarray
    labels: list = field(default_factory=list)

    def __post_init__(self) -> None:
        self.p = np.asarray(self.p, dtype=np.float64).reshape(-1, 2)
        self.q = np.asarray(self.q, dtype=np.float64).reshape(-1, 2)
        if self.p.shape != self.q.shape:
            raise LandmarkError(f"{self.p.shape[0]} source vs {self.q.shape[0]} target points")
        if not self.labels:
            self.labels = [""] * len(self.p)
        if len(self.labels) != len(self.p):
            raise LandmarkError("one label per pair required")
        self.validate()

    def __len__(self) -> int:
        return self.p.shape[0]

    def validate(self) -> None:
        for name, pts in (("p", self.p), ("q", self.q)):
            if not np.all(np.isfinite(pts)):
                idx = int(np.argwhere(~np.isfinite(pts).all(axis=1))[0][0])
                raise LandmarkError(f"pair {idx}: non-finite {name} coordinate")
            if np.any(np.abs(pts) > 1.0 + 1e-9):
                idx = int(np.argwhere(np.abs(pts) > 1.0 + 1e-9)[0][0])
                raise LandmarkError(f"pair {idx}: {name} outside [-1, 1]^2")
        # identical source points must agree on the target
        for i in range(len(self.p)):
            for j in range(i + 1, len(self.p)):
                if np.allclose(self.p[i], self.p[j], atol=1e-9) and not np.allclose(
                    self.q[i], self.q[j], atol=1e-9
                ):
                    raise LandmarkError(f"pairs {i} and {j} share p but disagree on q")


def _pixels_to_domain(pts: np.ndarray, width: int, height: int) -> np.ndarray:
    s = 2.0 / max(width, height)
    pts = np.asarray(pts, dtype=np.float64)
    return np.stack(
        [(pts[..., 0] + 0.5 - width / 2.0) * s, (pts[..., 1] + 0.5 - height / 2.0) * s],
        axis=-1,
    )


def landmarks_from_dict(doc: dict) -> LandmarkPairs:
    if doc.get("version") != LANDMARK_FORMAT_VERSION:
        raise LandmarkError(f"unknown landmark version: {doc.get('version')!r}")
    space = doc.get("space", "normalized")
    pairs = doc.get("pairs", [])
    p = [pair["p"] for pair in pairs]
    q = [pair["q"] for pair in pairs]
    labels = [pair.get("label", "") for pair in pairs]
    if space == "normalized":
        return LandmarkPairs(np.array(p, dtype=np.float64).reshape(-1, 2),
                             np.array(q, dtype=np.float64).reshape(-1, 2), labels)
    if space == "pixels":
        size = doc.get("image_size")
        if size is None:
            raise LandmarkError("pixel-space landmarks need image_size")
        if isinstance(size, dict):
            (w0, h0), (w1, h1) = size["p"], size["q"]
        else:
            (w0, h0) = (w1, h1) = size
        p_arr = np.array(p, dtype=np.float64).reshape(-1, 2)
        q_arr = np.array(q, dtype=np.float64).reshape(-1, 2)
        return LandmarkPairs(
            _pixels_to_domain(p_arr, int(w0), int(h0)),
            _pixels_to_domain(q_arr, int(w1), int(h1)),
            labels,
        )
    raise LandmarkError(f"unknown landmark space: {space!r}")


def landmarks_to_dict(pairs: LandmarkPairs) -> dict:
    return {
        "version": LANDMARK_FORMAT_VERSION,
        "space": "normalized",
        "pairs": [
            {"p": [float(a), float(b)], "q": [float(c), float(d)], "label": lab}
            for (a, b), (c, d), lab in zip(pairs.p, pairs.q, pairs.labels)
        ],
    }


def load_landmarks(path: str | Path) -> LandmarkPairs:
    return landmarks_from_dict(json.loads(Path(path).read_text()))


def save_landmarks(pairs: LandmarkPairs, path: str | Path) -> None:
    Path(path).write_text(json.dumps(landmarks_to_dict(pairs)))


# -- the warp itself ---------------------------------------------------------


@dataclass
class WarpConfig:
    hidden_width: int = 128
    hidden_layers: int = 1
    omega0: float = 30.0
    steps: int = 5000
    lr: float = 3e-4
    seed: int = 0
    lambda_data: float = 1.0
    lambda_identity: float = 1.0
    lambda_inverse: float = 1.0
    lambda_thin_plate: float = 1.0
    spacetime_samples: int = 4096
    time_samples: int = 64
    log_every: int = 50


@dataclass
class WarpModel:
    net: SineNet
    config: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)


def _warp_fn(warp):
    """Normalize net / model / callable into ``pts(N, 3) -> T(N, 2)``."""
    if isinstance(warp, WarpModel):
        warp = warp.net
    if isinstance(warp, SineNet):
        net = warp

        def fn(pts: np.ndarray) -> np.ndarray:
            return pts[:, :2] + sinenet.forward(net, pts)

        return fn
    return warp


def _with_time(coords: np.ndarray, t) -> np.ndarray:
    coords = np.asarray(coords, dtype=np.float64).reshape(-1, 2)
    tcol = np.broadcast_to(np.asarray(t, dtype=np.float64), (coords.shape[0],))
    return np.column_stack([coords, tcol])


def _check_time(t, lo: float = -1.0, hi: float = 1.0) -> None:
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < lo - 1e-9) or np.any(t > hi + 1e-9):
        raise ValueError(f"time {t} outside [{lo}, {hi}]")


def warp_point(warp, coords: np.ndarray, t) -> np.ndarray:
    """Evaluate T at spatial coords (N, 2) or (2,) and time(s) in [-1, 1]."""
    _check_time(t)
    coords = np.asarray(coords, dtype=np.float64)
    single = coords.ndim == 1
    out = _warp_fn(warp)(_with_time(coords, t))
    return out[0] if single else out


def spatial_jacobian(warp, coords: np.ndarray, t) -> np.ndarray:
    """d T / d (x, y) at fixed t, shape (N, 2, 2)."""
    _check_time(t)
    net = warp.net if isinstance(warp, WarpModel) else warp
    jac = sinenet.input_jacobian(net, _with_time(coords, t))[:, :, :2]
    return jac + np.eye(2)[None, :, :]


# -- loss terms (Monte Carlo means over caller-supplied samples) -----------------


def loss_identity(warp, spatial_samples: np.ndarray) -> float:
    """Mean squared displacement of T(x, 0) from x."""
    fn = _warp_fn(warp)
    x = np.asarray(spatial_samples, dtype=np.float64).reshape(-1, 2)
    r = fn(_with_time(x, 0.0)) - x
    return float(np.mean(np.sum(r * r, axis=1)))


def loss_inverse(warp, spacetime_samples: np.ndarray) -> float:
    """Mean squared failure of T(. , -t) to invert T(. , t)."""
    fn = _warp_fn(warp)
    pts = np.asarray(spacetime_samples, dtype=np.float64).reshape(-1, 3)
    y = fn(pts)
    back = fn(np.column_stack([y, -pts[:, 2]]))
    r = back - pts[:, :2]
    return float(np.mean(np.sum(r * r, axis=1)))


def loss_data(warp, pairs: LandmarkPairs, time_samples: np.ndarray) -> float:
    """Sum over pairs of the mean squared gap between the two paths.

    ``time_samples`` has shape (K,) shared by all pairs or (J, K).
    """
    fn = _warp_fn(warp)
    times = np.asarray(time_samples, dtype=np.float64)
    if times.ndim == 1:
        times = np.broadcast_to(times, (len(pairs), times.shape[0]))
    j, k = times.shape
    p_in = np.column_stack([np.repeat(pairs.p, k, axis=0), times.reshape(-1)])
    q_in = np.column_stack([np.repeat(pairs.q, k, axis=0), times.reshape(-1) - 1.0])
    r = fn(p_in) - fn(q_in)
    per_pair = np.sum(r * r, axis=1).reshape(j, k).mean(axis=1)
    return float(np.sum(per_pair))


def loss_thin_plate(warp, spacetime_samples: np.ndarray) -> float:
    """Mean squared Frobenius norm of the spacetime Hessian of T.

    ``warp`` may also be a callable returning Hessians of shape
    (N, 2, 3, 3) directly, for analytic checks.
    """
    pts = np.asarray(spacetime_samples, dtype=np.float64).reshape(-1, 3)
    if isinstance(warp, (WarpModel, SineNet)):
        net = warp.net if isinstance(warp, WarpModel) else warp
        hess = sinenet.input_hessian(net, pts)  # residual is affine, same Hessian
    else:
        hess = np.asarray(warp(pts), dtype=np.float64)
    return float(np.mean(np.sum(hess * hess, axis=(1, 2, 3))))


# -- training graphs ------------------------------------------------------------


def _thin_plate_graph(params: NetParams, pts: np.ndarray) -> Tensor:
    """Mean thin-plate energy as a tape node.

    For a single sinusoidal layer the energy collapses to a per-sample
    quadratic form sin(z)^T C sin(z) with C = (W1^T W1) o (V V^T)^2 and
    V = omega0 W0, which avoids materializing (B, 2, 3, 3) Hessians.
    """
    net = params.net
    if net.depth == 1:
        w0, b0 = params.weights[0], params.biases[0]
        w1 = params.weights[1]
        z = (einsum("bi,pi->bp", Tensor.constant(pts), w0) + b0) * net.omega0
        s, _ = z.sincos_fast()
        v = w0 * net.omega0
        gram = einsum("pi,qi->pq", v, v)
        c = einsum("kp,kq->pq", w1, w1) * gram.square()
        quad = (einsum("bp,pq->bq", s, c) * s).sum(axis=1)
        return quad.mean()
    hess = hessian_graph(params, pts)
    return hess.square().sum() * (1.0 / pts.shape[0])


def train_warp(pairs: LandmarkPairs | None, cfg: WarpConfig | None = None,
               progress=None) -> WarpModel:
    """Fit the warp net to landmark pairs under the four-term loss."""
    cfg = cfg or WarpConfig()
    use_data = cfg.lambda_data > 0.0
    if use_data and (pairs is None or len(pairs) == 0):
        raise LandmarkError("landmark pairs required when the data term is active")
    dims = [3] + [cfg.hidden_width] * cfg.hidden_layers + [2]
    net = sinenet.init_sine_net(dims, omega0=cfg.omega0, seed=cfg.seed)
    params = NetParams(net)
    state = init_adam(params, lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    history = []
    t0 = time.perf_counter()

    for step in range(1, cfg.steps + 1):
        terms = {}
        loss = None

        if cfg.lambda_identity > 0.0:
            xs = rng.uniform(-1.0, 1.0, size=(cfg.spacetime_samples, 2))
            n_id = forward_graph(params, _with_time(xs, 0.0))
            term = n_id.square().sum() * (1.0 / xs.shape[0])
            terms["identity"] = float(term.data)
            loss = term * cfg.lambda_identity if loss is None else loss + term * cfg.lambda_identity

        if cfg.lambda_inverse > 0.0:
            pts = rng.uniform(-1.0, 1.0, size=(cfg.spacetime_samples, 3))
            n1 = forward_graph(params, pts)
            y = Tensor.constant(pts[:, :2]) + n1
            back_in = concat([y, Tensor.constant(-pts[:, 2:3])], axis=1)
            n2 = forward_graph(params, back_in)
            term = (n1 + n2).square().sum() * (1.0 / pts.shape[0])
            terms["inverse"] = float(term.data)
            loss = term * cfg.lambda_inverse if loss is None else loss + term * cfg.lambda_inverse

        if use_data:
            times = rng.uniform(0.0, 1.0, size=(len(pairs), cfg.time_samples))
            k = cfg.time_samples
            p_in = np.column_stack([np.repeat(pairs.p, k, axis=0), times.reshape(-1)])
            q_in = np.column_stack([np.repeat(pairs.q, k, axis=0), times.reshape(-1) - 1.0])
            gap = Tensor.constant(p_in[:, :2] - q_in[:, :2])
            r = gap + forward_graph(params, p_in) - forward_graph(params, q_in)
            term = r.square().sum(axis=1).reshape(len(pairs), k).mean(axis=1).sum()
            terms["data"] = float(term.data)
            loss = term * cfg.lambda_data if loss is None else loss + term * cfg.lambda_data

        if cfg.lambda_thin_plate > 0.0:
            pts = rng.uniform(-1.0, 1.0, size=(cfg.spacetime_samples, 3))
            term = _thin_plate_graph(params, pts)
            terms["thin_plate"] = float(term.data)
            loss = (
                term * cfg.lambda_thin_plate
                if loss is None
                else loss + term * cfg.lambda_thin_plate
            )

        if loss is None:
            raise ValueError("all loss weights are zero; nothing to train")
        tape = loss_backward(loss, params)
        optimizer_step(params, tape, state)

        if step % cfg.log_every == 0 or step == cfg.steps:
            history.append({"step": step, **{k: round(v, 8) for k, v in terms.items()}})
            if progress is not None:
                progress(step, cfg.steps, terms)

    model = WarpModel(net, config=_warp_config_dict(cfg))
    model.diagnostics = warp_diagnostics(model, pairs)
    model.diagnostics["loss_history"] = history
    model.diagnostics["train_seconds"] = round(time.perf_counter() - t0, 3)
    return model


def _warp_config_dict(cfg: WarpConfig) -> dict:
    return {k: getattr(cfg, k) for k in WarpConfig.__dataclass_fields__}


def warp_diagnostics(model: WarpModel, pairs: LandmarkPairs | None) -> dict:
    """Deterministic probe-grid residuals used by reports and gates."""
    fn = _warp_fn(model)
    lin = np.linspace(-1.0, 1.0, 33)
    gx, gy = np.meshgrid(lin, lin)
    grid2 = np.column_stack([gx.ravel(), gy.ravel()])
    ident = np.linalg.norm(fn(_with_time(grid2, 0.0)) - grid2, axis=1)

    lin17 = np.linspace(-1.0, 1.0, 17)
    gx, gy = np.meshgrid(lin17, lin17)
    sub = np.column_stack([gx.ravel(), gy.ravel()])
    inv_means = []
    for t in np.linspace(-1.0, 1.0, 9):
        y = fn(_with_time(sub, t))
        back = fn(_with_time(y, -t))
        inv_means.append(np.linalg.norm(back - sub, axis=1))
    inverse = np.concatenate(inv_means)

    lin9 = np.linspace(-1.0, 1.0, 9)
    gx, gy, gt = np.meshgrid(lin9, lin9, np.linspace(-1.0, 1.0, 5))
    probe3 = np.column_stack([gx.ravel(), gy.ravel(), gt.ravel()])
    tp_energy = loss_thin_plate(model, probe3)

    out = {
        "identity_residual": float(np.mean(ident)),
        "inverse_residual": float(np.mean(inverse)),
        "thin_plate_energy": tp_energy,
    }
    if pairs is not None and len(pairs) > 0:
        end = fn(_with_time(pairs.p, 1.0))
        out["alignment_error"] = float(np.mean(np.linalg.norm(end - pairs.q, axis=1)))
        gaps = []
        for t in np.linspace(0.0, 1.0, 65):
            a = fn(_with_time(pairs.p, t))
            b = fn(_with_time(pairs.q, t - 1.0))
            gaps.append(np.linalg.norm(a - b, axis=1))
        out["path_matching_max"] = float(np.max(np.stack(gaps)))
        out["path_matching_mean"] = float(np.mean(np.stack(gaps)))
    return out


# -- warped images, landmark paths, regions ------------------------------------------


def warped_image_sample(warp, nimg: NeuralImage, index: int, coords: np.ndarray, t) -> np.ndarray:
    """Colors of warped image ``index`` at blend time t in [0, 1].

    Image 0 is carried forward from t=0, image 1 backward from t=1, so
    the net is queried at time ``index - t``.
    """
    if index not in (0, 1):
        raise ValueError(f"image index must be 0 or 1, got {index}")
    _check_time(t, 0.0, 1.0)
    y = warp_point(warp, coords, float(index) - np.asarray(t, dtype=np.float64))
    return image_sample(nimg, y)


def landmark_path(warp, point: np.ndarray, samples: int = 33, side: int = 0) -> np.ndarray:
    """Polyline of the transported point over t in [0, 1], shape (samples, 2).

    ``side=0`` treats the point as source geometry (times t); ``side=1``
    as target geometry (times t - 1).
    """
    if samples < 2:
        raise ValueError("need at least two path samples")
    ts = np.linspace(0.0, 1.0, samples)
    if side == 1:
        ts = ts - 1.0
    pts = np.broadcast_to(np.asarray(point, dtype=np.float64), (samples, 2))
    return _warp_fn(warp)(np.column_stack([pts, ts]))


@dataclass
class RegionMask:
    """A binary mask over the source image grid; nonzero means inside."""

    mask: np.ndarray

    def __post_init__(self) -> None:
        m = np.asarray(self.mask, dtype=np.float64)
        if m.ndim == 3:
            m = m[:, :, 0]
        self.mask = (m > 0).astype(np.float64)

    @property
    def height(self) -> int:
        return self.mask.shape[0]

    @property
    def width(self) -> int:
        return self.mask.shape[1]

    def is_empty(self) -> bool:
        return not np.any(self.mask > 0)

    def grid(self) -> ImageGrid:
        return ImageGrid(self.mask[:, :, None])


def load_region_mask(path: str | Path, grid_size: tuple[int, int] | None = None) -> RegionMask:
    """Read a mask from PNG (nonzero pixels inside) or polygon JSON.

    Polygon files hold normalized-coordinate vertices and are rasterized
    onto ``grid_size`` (width, height), required in that case.
    """
    path = Path(path)
    if path.suffix.lower() == ".json":
        doc = json.loads(path.read_text())
        verts = np.asarray(doc["polygon"], dtype=np.float64)
        if grid_size is None:
            raise ValueError("polygon masks need a target grid size")
        return polygon_mask(verts, grid_size[0], grid_size[1])
    return RegionMask(load_image(path, grayscale=True).pixels)


def polygon_mask(vertices: np.ndarray, width: int, height: int) -> RegionMask:
    """Rasterize a normalized-coordinate polygon: a pixel belongs to the
    region when its center is inside (even-odd rule)."""
    verts = np.asarray(vertices, dtype=np.float64)
    if verts.ndim != 2 or verts.shape[1] != 2 or len(verts) < 3:
        raise ValueError("polygon needs at least three (x, y) vertices")
    grid = ImageGrid(np.zeros((height, width)))
    centers = grid.coords()
    x, y = centers[:, 0], centers[:, 1]
    inside = np.zeros(len(centers), dtype=bool)
    for (x0, y0), (x1, y1) in zip(verts, np.roll(verts, -1, axis=0)):
        crosses = (y0 > y) != (y1 > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            xc = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
        inside ^= crosses & (x < xc)
    return RegionMask(inside.reshape(height, width).astype(np.float64))


def region_contains(warp, region: RegionMask, coords: np.ndarray, t) -> np.ndarray:
    """Whether points lie in the transported region at blend time t.

    Membership is decided by pulling each point back to t=0 and reading
    the mask there, so the region deforms with the warp itself.
    """
    _check_time(t, 0.0, 1.0)
    coords = np.asarray(coords, dtype=np.float64).reshape(-1, 2)
    origin = warp_point(warp, coords, -np.asarray(t, dtype=np.float64))
    pix = region.grid().domain_to_pixels(origin)
    vals = bilinear_sample(region.mask, pix, fill=0.0)
    return vals > 0.5


# -- persistence ------------------------------------------------------------------


def warp_to_dict(model: WarpModel) -> dict:
    return {
        "version": WARP_FORMAT_VERSION,
        "net": sinenet.to_json_dict(model.net),
        "config": model.config,
        "diagnostics": model.diagnostics,
    }


def warp_from_dict(doc: dict) -> WarpModel:
    if doc.get("version") != WARP_FORMAT_VERSION:
        raise ValueError(f"unknown warp version: {doc.get('version')!r}")
    return WarpModel(
        net=sinenet.from_json_dict(doc["net"]),
        config=doc.get("config", {}),
        diagnostics=doc.get("diagnostics", {}),
    )


def save_warp(model: WarpModel, path: str | Path) -> None:
    Path(path).write_text(json.dumps(warp_to_dict(model)))


def load_warp(path: str | Path) -> WarpModel:
    return warp_from_dict(json.loads(Path(path).read_text()))
