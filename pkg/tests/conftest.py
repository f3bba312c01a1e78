"""Session-scoped trained models shared across test modules.

Training runs dominate the suite's wall time, so every model trained
here is built once and reused by both the module tests and the
acceptance gate.  All budgets are deliberately small; the asserted
tolerances come from the corresponding module contracts.
"""

import dataclasses
import time

import numpy as np
import pytest

from neurowarp.blend import GradientFieldSpec, MorphConfig, feature_transfer, train_morph
from neurowarp.fixtures import (
    SOURCE_FACE,
    TARGET_FACE,
    disk_mask,
    face_pair_landmarks,
    fixed_points_fixture,
    render_face,
    toy_gradient_pair,
    translation_fixture,
)
from neurowarp.image import ImageFitConfig, fit_image, grid_coords, render
from neurowarp.sinenet import init_sine_net
from neurowarp.warp import RegionMask, WarpConfig, train_warp

# reduced sampling for test budgets; the library default is 4096/64
TEST_SAMPLING = {"spacetime_samples": 1024, "time_samples": 32}

TOY_FIT = ImageFitConfig(
    hidden_width=64, hidden_layers=2, omega0=15.0, steps=800, batch=1024, lr=1e-3, seed=0
)
TOY_MORPH = MorphConfig(
    hidden_width=128, hidden_layers=2, omega0=20.0, steps=1500, batch=1024, lr=1e-3, seed=0
)


def zero_residual_warp():
    net = init_sine_net([3, 16, 2], seed=0)
    net.weights[-1][:] = 0.0
    net.biases[-1][:] = 0.0
    return net


@pytest.fixture(scope="session")
def identity_warp():
    """Rigged net whose residual is exactly zero: T(x, t) = x."""
    return zero_residual_warp()


@pytest.fixture(scope="session")
def toy_images():
    g0, g1 = toy_gradient_pair(32)
    return g0, g1, fit_image(g0, TOY_FIT), fit_image(g1, TOY_FIT)


@pytest.fixture(scope="session")
def translation_warp():
    pairs = translation_fixture()
    cfg = WarpConfig(steps=2000, lr=3e-4, seed=0, **TEST_SAMPLING)
    return train_warp(pairs, cfg)


@pytest.fixture(scope="session")
def fixed_points_warp():
    pairs = fixed_points_fixture()
    cfg = WarpConfig(steps=2000, lr=3e-4, seed=0, **TEST_SAMPLING)
    return train_warp(pairs, cfg)


@pytest.fixture(scope="session")
def face_corpus():
    """Rendered face pair, 68 landmark pairs, fitted images, trained warp."""
    f0 = render_face(SOURCE_FACE, 128)
    f1 = render_face(TARGET_FACE, 128)
    pairs = face_pair_landmarks()
    fit_cfg = ImageFitConfig(
        hidden_width=192, hidden_layers=2, steps=1500, batch=2048, lr=2e-3, seed=0
    )
    n0 = fit_image(f0, fit_cfg)
    n1 = fit_image(f1, fit_cfg)
    warp_cfg = WarpConfig(steps=6000, lr=3e-4, seed=0, **TEST_SAMPLING)
    warp = train_warp(pairs, warp_cfg)
    return {
        "images": (f0, f1),
        "pairs": pairs,
        "nimgs": (n0, n1),
        "warp": warp,
        "warp_config": warp_cfg,
    }


@pytest.fixture(scope="session")
def poisson_case(toy_images, identity_warp):
    """Gradient-domain morphs at pinned t=0.5 for all three modes, plus
    the matching dense Poisson solves on the 32x32 grid."""
    from oracles import poisson_solve_dirichlet
    from neurowarp.blend import morph_sample, target_gradient

    _, _, n0, n1 = toy_images
    region = disk_mask(32, (0.0, 0.0), 0.62)
    inside = region.mask > 0.5
    coords = grid_coords(32, 32)
    bvals = render(n0, 32, 32).pixels[:, :, 0]
    cfg = dataclasses.replace(TOY_MORPH, fixed_time=0.5)
    out = {"inside": inside, "modes": {}}
    t_start = time.perf_counter()
    for mode in ("clone", "average", "mix"):
        spec = GradientFieldSpec(mode, region, base=0)
        model = train_morph(identity_warp, n0, n1, spec, cfg)
        frame = morph_sample(model, coords, 0.5).reshape(32, 32)
        u = target_gradient(identity_warp, n0, n1, spec, coords, 0.5).reshape(32, 32, 2)
        oracle = poisson_solve_dirichlet(inside, bvals, u, 2.0 / 32)
        out["modes"][mode] = {"model": model, "frame": frame, "oracle": oracle}
    out["seconds"] = time.perf_counter() - t_start
    return out


@pytest.fixture(scope="session")
def empty_region_morph(toy_images, identity_warp):
    _, _, n0, n1 = toy_images
    spec = GradientFieldSpec("clone", RegionMask(np.zeros((32, 32))), base=0)
    return train_morph(identity_warp, n0, n1, spec, TOY_MORPH)


@pytest.fixture(scope="session")
def degenerate_morph(toy_images, identity_warp):
    """I0 = I1 under clone mode: the edit is the identity."""
    _, _, n0, _ = toy_images
    spec = GradientFieldSpec("clone", disk_mask(32, (0.0, 0.0), 0.5), base=0)
    return train_morph(identity_warp, n0, n0, spec, TOY_MORPH)


@pytest.fixture(scope="session")
def transfer_morph(toy_images, identity_warp):
    _, _, n0, n1 = toy_images
    region = disk_mask(32, (0.0, 0.0), 0.5)
    return feature_transfer(identity_warp, n0, n1, region, TOY_MORPH), region


@pytest.fixture(scope="session")
def natural_fit():
    """Astronaut portrait at 128x128 fitted with library defaults."""
    skimage_data = pytest.importorskip("skimage.data")
    skimage_transform = pytest.importorskip("skimage.transform")
    from neurowarp.image import ImageGrid

    raw = skimage_data.astronaut()
    img = ImageGrid(
        np.asarray(
            skimage_transform.resize(raw, (128, 128), anti_aliasing=True), dtype=np.float64
        )
    )
    t0 = time.perf_counter()
    nimg = fit_image(img, ImageFitConfig())
    return img, nimg, time.perf_counter() - t0