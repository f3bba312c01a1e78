"""Stage orchestration behind the command-line workflow.

A project directory holds the config plus three output areas:

* ``artifacts/``: fitted neural images, warp and morph models (JSON),
* ``frames/``: rendered morph frames plus a hash manifest,
* ``reports/``: one JSON report per stage with metrics and runtimes.

Each stage records a signature over its config and input file hashes;
rerunning a satisfied stage is a no-op unless forced.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .blend import (
    GradientFieldSpec,
    feature_transfer,
    linear_blend,
    load_morph,
    morph_sample,
    save_morph,
    train_morph,
)
from .config import ConfigError, ProjectConfig, stage_config_dict
from .image import (
    ImageGrid,
    fit_image,
    grid_coords,
    load_image,
    load_neural_image,
    render,
    save_image,
    save_neural_image,
)
from .metrics import psnr, ssim
from .warp import (
    landmark_path,
    load_landmarks,
    load_region_mask,
    load_warp,
    save_warp,
    train_warp,
)

FRAME_MANIFEST_VERSION = "frame-manifest/1"


class PipelineError(RuntimeError):
    """A stage cannot run, usually because an upstream artifact is missing."""


def thread_count() -> int:
    env = os.environ.get("NEUROWARP_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise ConfigError(f"NEUROWARP_THREADS must be an integer, got {env!r}") from exc
    return min(8, os.cpu_count() or 1)


def sha256_file(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _dump_json(path: Path, doc: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=1, sort_keys=True))


def _signature(config_dict: dict, inputs: list[Path]) -> str:
    blob = json.dumps(
        {"config": config_dict, "inputs": [sha256_file(p) for p in inputs]}, sort_keys=True
    )
    return hashlib.sha256(blob.encode()).hexdigest()


def _satisfied(report_path: Path, signature: str, outputs: list[Path]) -> dict | None:
    """Existing report if the stage already ran with this signature."""
    if not report_path.is_file():
        return None
    try:
        doc = json.loads(report_path.read_text())
    except (OSError, json.JSONDecodeError):
        return None
    if doc.get("signature") != signature:
        return None
    if not all(p.is_file() for p in outputs):
        return None
    return doc


def _dirs(cfg: ProjectConfig) -> tuple[Path, Path, Path]:
    return cfg.root / "artifacts", cfg.root / "frames", cfg.root / "reports"


# -- fit ------------------------------------------------------------------------------


def run_fit(cfg: ProjectConfig, force: bool = False, log=None) -> dict:
    artifacts, _, reports = _dirs(cfg)
    sig = _signature(stage_config_dict(cfg.fit), [cfg.image0, cfg.image1])
    outputs = [artifacts / "image0.json", artifacts / "image1.json"]
    prior = None if force else _satisfied(reports / "fit.json", sig, outputs)
    if prior is not None:
        return prior

    report = {"stage": "fit", "signature": sig, "seed": cfg.fit.seed,
              "config": stage_config_dict(cfg.fit), "images": {}}
    for name, src, out in (("image0", cfg.image0, outputs[0]),
                           ("image1", cfg.image1, outputs[1])):
        grid = load_image(src)
        t0 = time.perf_counter()
        nimg = fit_image(grid, cfg.fit, progress=_stage_logger(log, f"fit {name}"))
        seconds = time.perf_counter() - t0
        save_neural_image(nimg, out)
        rendered = render(nimg, nimg.width, nimg.height)
        report["images"][name] = {
            "psnr": nimg.fit_psnr,
            "ssim": ssim(rendered.pixels, grid.pixels),
            "width": nimg.width,
            "height": nimg.height,
            "seconds": round(seconds, 3),
        }
    _dump_json(reports / "fit.json", report)
    return report


def _stage_logger(log, label):
    if log is None:
        return None

    def progress(step, total, terms):
        detail = " ".join(f"{k}={v:.3g}" for k, v in terms.items()) if isinstance(terms, dict) else f"{terms:.4g}"
        log(f"{label}: step {step}/{total} {detail}")

    return progress


# -- warp -----------------------------------------------------------------------------


def run_warp(cfg: ProjectConfig, force: bool = False, log=None, width: int | None = None) -> dict:
    artifacts, _, reports = _dirs(cfg)
    warp_cfg = cfg.warp if width is None else dataclasses.replace(cfg.warp, hidden_width=width)
    suffix = "" if width is None else f"_w{width}"
    sig = _signature(stage_config_dict(warp_cfg), [cfg.landmarks])
    out = artifacts / f"warp{suffix}.json"
    report_path = reports / f"warp{suffix}.json"
    prior = None if force else _satisfied(report_path, sig, [out])
    if prior is not None:
        return prior

    pairs = load_landmarks(cfg.landmarks)
    t0 = time.perf_counter()
    model = train_warp(pairs, warp_cfg, progress=_stage_logger(log, f"warp{suffix}"))
    seconds = time.perf_counter() - t0
    save_warp(model, out)
    report = {
        "stage": "warp", "signature": sig, "seed": warp_cfg.seed,
        "config": stage_config_dict(warp_cfg),
        "diagnostics": {k: v for k, v in model.diagnostics.items() if k != "loss_history"},
        "pairs": len(pairs),
        "seconds": round(seconds, 3),
    }
    _dump_json(report_path, report)
    return report


# -- morph / frame rendering ----------------------------------------------------------


def _require(path: Path, hint: str) -> Path:
    if not path.is_file():
        raise PipelineError(f"missing artifact {path}; run `{hint}` first")
    return path


def _load_stage_artifacts(cfg: ProjectConfig):
    artifacts, _, _ = _dirs(cfg)
    n0 = load_neural_image(_require(artifacts / "image0.json", "fit"))
    n1 = load_neural_image(_require(artifacts / "image1.json", "fit"))
    warp = load_warp(_require(artifacts / "warp.json", "warp"))
    return n0, n1, warp


def render_frame(mode: str, warp, n0, n1, morph_model, size: int, t: float) -> ImageGrid:
    coords = grid_coords(size, size)
    if mode == "linear":
        colors = linear_blend(warp, n0, n1, coords, t)
    else:
        colors = morph_sample(morph_model, coords, t)
    return ImageGrid(colors.reshape(size, size, n0.channels))


def run_morph(cfg: ProjectConfig, force: bool = False, log=None) -> dict:
    artifacts, frames_dir, reports = _dirs(cfg)
    n0, n1, warp = _load_stage_artifacts(cfg)

    morph_inputs = [cfg.landmarks, cfg.image0, cfg.image1]
    if cfg.region is not None:
        morph_inputs.append(cfg.region)
    cfg_dict = {
        "mode": cfg.blend_mode, "base": cfg.blend_base,
        "render": stage_config_dict(cfg.render),
        "morph": stage_config_dict(cfg.morph),
        "fit": stage_config_dict(cfg.fit), "warp": stage_config_dict(cfg.warp),
    }
    sig = _signature(cfg_dict, morph_inputs)
    manifest_path = frames_dir / "manifest.json"
    prior = None if force else _satisfied(reports / "morph.json", sig, [manifest_path])
    if prior is not None:
        return prior

    morph_model = None
    train_seconds = 0.0
    if cfg.blend_mode != "linear":
        if cfg.region is None:
            raise ConfigError(f"{cfg.blend_mode} blending needs a [region] path")
        region = load_region_mask(cfg.region, grid_size=(n0.width, n0.height))
        spec = GradientFieldSpec(cfg.blend_mode, region, base=cfg.blend_base)
        t0 = time.perf_counter()
        morph_model = train_morph(
            warp, n0, n1, spec, cfg.morph, progress=_stage_logger(log, "morph")
        )
        train_seconds = time.perf_counter() - t0
        save_morph(morph_model, artifacts / "morph.json")

    times = np.linspace(cfg.render.t_start, cfg.render.t_end, cfg.render.frames)
    frames_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()

    def render_one(idx_t):
        idx, t = idx_t
        frame = render_frame(cfg.blend_mode, warp, n0, n1, morph_model, cfg.render.size, t)
        file = frames_dir / f"frame_{idx:03d}.png"
        save_image(frame, file)
        return {"index": idx, "t": round(float(t), 10), "file": file.name,
                "sha256": sha256_file(file)}

    with ThreadPoolExecutor(max_workers=thread_count()) as pool:
        entries = list(pool.map(render_one, enumerate(times)))
    render_seconds = time.perf_counter() - t0

    manifest = {
        "version": FRAME_MANIFEST_VERSION,
        "mode": cfg.blend_mode,
        "size": cfg.render.size,
        "signature": sig,
        "frames": entries,
    }
    _dump_json(manifest_path, manifest)

    size = cfg.render.size
    first = load_image(frames_dir / entries[0]["file"]).pixels
    last = load_image(frames_dir / entries[-1]["file"]).pixels
    report = {
        "stage": "morph", "signature": sig, "mode": cfg.blend_mode,
        "seed": cfg.morph.seed, "config": cfg_dict,
        "endpoint_psnr": {
            "t0": _json_metric(psnr(first, render(n0, size, size).pixels)),
            "t1": _json_metric(psnr(last, render(n1, size, size).pixels)),
        },
        "frames": len(entries),
        "train_seconds": round(train_seconds, 3),
        "render_seconds": round(render_seconds, 3),
    }
    if morph_model is not None:
        report["diagnostics"] = {
            k: v for k, v in morph_model.diagnostics.items() if k != "loss_history"
        }
    _dump_json(reports / "morph.json", report)
    return report


def _json_metric(value: float):
    """JSON has no infinity; report the sentinel the way the CLI prints it."""
    return "inf" if np.isinf(value) else float(value)


def verify_manifest(frames_dir: str | Path) -> bool:
    """Check every frame hash recorded in the manifest; True when intact."""
    frames_dir = Path(frames_dir)
    doc = json.loads((frames_dir / "manifest.json").read_text())
    if doc.get("version") != FRAME_MANIFEST_VERSION:
        raise ValueError(f"unsupported manifest version {doc.get('version')!r}")
    for entry in doc["frames"]:
        file = frames_dir / entry["file"]
        if not file.is_file() or sha256_file(file) != entry["sha256"]:
            return False
    return True


# -- feature transfer -----------------------------------------------------------------


def run_transfer(cfg: ProjectConfig, force: bool = False, log=None, base: int = 1) -> dict:
    artifacts, frames_dir, reports = _dirs(cfg)
    if cfg.region is None:
        raise ConfigError("feature transfer needs a [region] path")
    n0, n1, warp = _load_stage_artifacts(cfg)
    cfg_dict = {"morph": stage_config_dict(cfg.morph), "base": base,
                "size": cfg.render.size}
    sig = _signature(cfg_dict, [cfg.region, cfg.landmarks, cfg.image0, cfg.image1])
    out_png = frames_dir / "transfer.png"
    prior = None if force else _satisfied(reports / "transfer.json", sig, [out_png])
    if prior is not None:
        return prior

    region = load_region_mask(cfg.region, grid_size=(n0.width, n0.height))
    t0 = time.perf_counter()
    model = feature_transfer(warp, n0, n1, region, cfg.morph, base=base)
    seconds = time.perf_counter() - t0
    save_morph(model, artifacts / "transfer.json")
    size = cfg.render.size
    frame = render_frame("clone", warp, n0, n1, model, size, 1.0)
    frames_dir.mkdir(parents=True, exist_ok=True)
    save_image(frame, out_png)
    report = {
        "stage": "transfer", "signature": sig, "base": base,
        "config": cfg_dict,
        "diagnostics": {k: v for k, v in model.diagnostics.items() if k != "loss_history"},
        "seconds": round(seconds, 3),
    }
    _dump_json(reports / "transfer.json", report)
    return report


# -- ablation harness -----------------------------------------------------------------

ABLATION_VARIANTS = {
    "full": {},
    "no_data": {"lambda_data": 0.0},
    "no_thin_plate": {"lambda_thin_plate": 0.0},
    "no_identity": {"lambda_identity": 0.0},
    "no_inverse": {"lambda_inverse": 0.0},
}

ABLATION_WIDTHS = (32, 64, 128)


def run_ablate(cfg: ProjectConfig, force: bool = False, log=None) -> dict:
    """Retrain the warp with loss terms deactivated one at a time, plus a
    width sweep, and tabulate the diagnostics."""
    _, _, reports = _dirs(cfg)
    pairs = load_landmarks(cfg.landmarks)
    sig = _signature(stage_config_dict(cfg.warp), [cfg.landmarks])
    report_path = reports / "ablate.json"
    prior = None if force else _satisfied(report_path, sig, [])
    if prior is not None:
        return prior

    rows = {}
    for name, tweak in ABLATION_VARIANTS.items():
        variant_cfg = dataclasses.replace(cfg.warp, **tweak)
        t0 = time.perf_counter()
        try:
            model = train_warp(pairs, variant_cfg, progress=_stage_logger(log, name))
        except (FloatingPointError, ValueError) as exc:
            rows[name] = {"failed": str(exc)}
            continue
        rows[name] = {
            k: v for k, v in model.diagnostics.items() if k != "loss_history"
        }
        rows[name]["seconds"] = round(time.perf_counter() - t0, 3)
    for width in ABLATION_WIDTHS:
        variant_cfg = dataclasses.replace(cfg.warp, hidden_width=width)
        t0 = time.perf_counter()
        model = train_warp(pairs, variant_cfg, progress=_stage_logger(log, f"width {width}"))
        rows[f"width_{width}"] = {
            k: v for k, v in model.diagnostics.items() if k != "loss_history"
        }
        rows[f"width_{width}"]["seconds"] = round(time.perf_counter() - t0, 3)

    report = {"stage": "ablate", "signature": sig,
              "config": stage_config_dict(cfg.warp), "variants": rows}
    _dump_json(report_path, report)
    return report


# -- landmark path overlay ------------------------------------------------------------


def _draw_polyline(pixels: np.ndarray, pts: np.ndarray, color) -> None:
    """Paint a dense polyline onto an (H, W, C) array, in place."""
    h, w = pixels.shape[:2]
    for a, b in zip(pts[:-1], pts[1:]):
        n = int(max(2, 2 * np.max(np.abs(b - a)) + 2))
        line = a[None, :] + np.linspace(0.0, 1.0, n)[:, None] * (b - a)[None, :]
        cols = np.clip(np.round(line[:, 0]).astype(int), 0, w - 1)
        rows = np.clip(np.round(line[:, 1]).astype(int), 0, h - 1)
        pixels[rows, cols] = color


def _draw_dot(pixels: np.ndarray, pt: np.ndarray, color, radius: int = 1) -> None:
    h, w = pixels.shape[:2]
    c, r = int(round(pt[0])), int(round(pt[1]))
    pixels[max(0, r - radius):min(h, r + radius + 1),
           max(0, c - radius):min(w, c + radius + 1)] = color


def run_paths(cfg: ProjectConfig, force: bool = False, samples: int = 33) -> dict:
    """Render landmark trajectories over the first frame."""
    artifacts, frames_dir, reports = _dirs(cfg)
    n0, n1, warp = _load_stage_artifacts(cfg)
    pairs = load_landmarks(cfg.landmarks)
    size = cfg.render.size
    frame = render_frame("linear", warp, n0, n1, None, size, 0.0)
    pixels = frame.pixels.copy()
    if pixels.shape[2] == 1:
        pixels = np.repeat(pixels, 3, axis=2)
    grid = ImageGrid(pixels)

    path_rows = []
    for j in range(len(pairs)):
        path = landmark_path(warp, pairs.p[j], samples=samples)
        pix = grid.domain_to_pixels(path)
        _draw_polyline(pixels, pix, (1.0, 0.1, 0.1))
        _draw_dot(pixels, grid.domain_to_pixels(pairs.p[j][None])[0], (0.1, 0.9, 0.1))
        _draw_dot(pixels, grid.domain_to_pixels(pairs.q[j][None])[0], (0.1, 0.3, 1.0))
        path_rows.append(path.tolist())

    frames_dir.mkdir(parents=True, exist_ok=True)
    out_png = frames_dir / "paths.png"
    save_image(ImageGrid(pixels), out_png)
    report = {"stage": "paths", "samples": samples, "pairs": len(pairs),
              "overlay": out_png.name}
    _dump_json(reports / "paths.json", report)
    return report


# -- frame sequence metrics -----------------------------------------------------------


def sequence_metrics(dir_a: str | Path, dir_b: str | Path) -> dict:
    """Per-frame PSNR and SSIM between two rendered sequences."""
    files_a = sorted(Path(dir_a).glob("frame_*.png"))
    files_b = sorted(Path(dir_b).glob("frame_*.png"))
    if not files_a:
        raise ValueError(f"no frames found in {dir_a}")
    if len(files_a) != len(files_b):
        raise ValueError(f"frame count mismatch: {len(files_a)} vs {len(files_b)}")
    rows = []
    for fa, fb in zip(files_a, files_b):
        a = load_image(fa).pixels
        b = load_image(fb).pixels
        if a.shape != b.shape:
            raise ValueError(f"frame size mismatch at {fa.name}: {a.shape} vs {b.shape}")
        rows.append({"frame": fa.name,
                     "psnr": _json_metric(psnr(a, b)),
                     "ssim": float(ssim(a, b))})
    finite = [r["psnr"] for r in rows if r["psnr"] != "inf"]
    mean_psnr = "inf" if not finite else float(np.mean(finite))
    return {"frames": rows, "mean_psnr": mean_psnr,
            "mean_ssim": float(np.mean([r["ssim"] for r in rows]))}