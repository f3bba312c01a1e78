"""Warp loss terms against rigged nets, straight-line re-evaluation and
analytic cases; landmark IO; region masks.  No training here."""

import json
import math

import numpy as np
import pytest

from neurowarp import sinenet
from neurowarp.fixtures import disk_mask
from neurowarp.image import ImageGrid
from neurowarp.sinenet import init_sine_net
from neurowarp.warp import (
    LandmarkError,
    LandmarkPairs,
    RegionMask,
    WarpModel,
    landmark_path,
    landmarks_from_dict,
    landmarks_to_dict,
    load_warp,
    loss_data,
    loss_identity,
    loss_inverse,
    loss_thin_plate,
    polygon_mask,
    region_contains,
    save_warp,
    spatial_jacobian,
    warp_from_dict,
    warp_point,
    warp_to_dict,
    warped_image_sample,
)

from oracles import straight_line_sine_forward


def zero_residual_net(width: int = 16) -> "sinenet.SineNet":
    net = init_sine_net([3, width, 2], seed=0)
    net.weights[-1][:] = 0.0
    net.biases[-1][:] = 0.0
    return net


def offset_net(dx: float, dy: float) -> "sinenet.SineNet":
    net = zero_residual_net()
    net.biases[-1][:] = [dx, dy]
    return net


def test_identity_loss_zero_for_identity_warp():
    samples = np.random.default_rng(0).uniform(-1, 1, size=(100, 2))
    assert loss_identity(zero_residual_net(), samples) == 0.0


def test_identity_loss_constant_offset():
    samples = np.random.default_rng(1).uniform(-1, 1, size=(64, 2))
    assert loss_identity(offset_net(0.1, 0.0), samples) == pytest.approx(0.01, abs=1e-15)


def test_inverse_loss_constant_velocity_translation():
    delta = np.array([0.13, -0.27])

    def warp(pts):
        return pts[:, :2] + pts[:, 2:3] * delta[None, :]

    samples = np.random.default_rng(2).uniform(-1, 1, size=(200, 3))
    assert loss_inverse(warp, samples) == pytest.approx(0.0, abs=1e-28)


def test_inverse_loss_time_independent_offset():
    # T(x, t) = x + d composes to x + 2d, so the residual is 4 |d|^2
    delta = np.array([0.05, -0.02])

    def warp(pts):
        return pts[:, :2] + delta[None, :]

    samples = np.random.default_rng(3).uniform(-1, 1, size=(50, 3))
    assert loss_inverse(warp, samples) == pytest.approx(4 * float(delta @ delta), abs=1e-15)


def test_data_loss_identity_warp_single_pair():
    pairs = LandmarkPairs(np.array([[0.0, 0.0]]), np.array([[0.2, 0.0]]))
    times = np.linspace(0, 1, 64)
    got = loss_data(zero_residual_net(), pairs, times)
    assert got == pytest.approx(0.04, abs=1e-15)


def test_data_loss_sums_over_pairs():
    pairs = LandmarkPairs(
        np.array([[0.0, 0.0], [0.3, 0.1]]), np.array([[0.2, 0.0], [0.3, 0.4]])
    )
    times = np.linspace(0, 1, 7)
    got = loss_data(zero_residual_net(), pairs, times)
    assert got == pytest.approx(0.04 + 0.09, abs=1e-15)


def test_losses_match_straight_line_reevaluation():
    net = init_sine_net([3, 24, 2], omega0=12.0, seed=5)
    doc = json.loads(sinenet.dumps(net))

    def plain_warp(x, y, t):
        n = straight_line_sine_forward(doc, [x, y, t])
        return x + n[0], y + n[1]

    rng = np.random.default_rng(7)
    xs = rng.uniform(-1, 1, size=(40, 2))
    want = sum(
        (plain_warp(x, y, 0.0)[0] - x) ** 2 + (plain_warp(x, y, 0.0)[1] - y) ** 2
        for x, y in xs
    ) / len(xs)
    assert loss_identity(net, xs) == pytest.approx(want, abs=1e-12)

    pts = rng.uniform(-1, 1, size=(30, 3))
    want = 0.0
    for x, y, t in pts:
        ux, uy = plain_warp(x, y, t)
        bx, by = plain_warp(ux, uy, -t)
        want += (bx - x) ** 2 + (by - y) ** 2
    want /= len(pts)
    assert loss_inverse(net, pts) == pytest.approx(want, abs=1e-12)

    pairs = LandmarkPairs(np.array([[0.1, -0.2], [0.0, 0.3]]), np.array([[0.15, -0.1], [0.1, 0.35]]))
    times = rng.uniform(0, 1, size=9)
    want = 0.0
    for p, q in zip(pairs.p, pairs.q):
        acc = 0.0
        for t in times:
            ax, ay = plain_warp(p[0], p[1], t)
            bx, by = plain_warp(q[0], q[1], t - 1.0)
            acc += (ax - bx) ** 2 + (ay - by) ** 2
        want += acc / len(times)
    assert loss_data(net, pairs, times) == pytest.approx(want, abs=1e-12)


def test_thin_plate_rigged_quadratic_map():
    # f(x, y, t) = (x^2, y): the only Hessian entry is d2f0/dx2 = 2
    def hessians(pts):
        h = np.zeros((pts.shape[0], 2, 3, 3))
        h[:, 0, 0, 0] = 2.0
        return h

    samples = np.random.default_rng(8).uniform(-1, 1, size=(17, 3))
    assert loss_thin_plate(hessians, samples) == pytest.approx(4.0, abs=1e-15)


def test_thin_plate_mc_matches_dense_quadrature():
    net = init_sine_net([3, 20, 2], omega0=3.0, seed=9)
    # midpoint rule on a 33^3 grid; converged to ~5e-5 by refinement check
    lin = -1 + (2 * np.arange(33) + 1) / 33
    gx, gy, gt = np.meshgrid(lin, lin, lin)
    grid = np.column_stack([gx.ravel(), gy.ravel(), gt.ravel()])
    quad = loss_thin_plate(net, grid)

    rng = np.random.default_rng(10)
    samples = rng.uniform(-1, 1, size=(65536, 3))
    hess = sinenet.input_hessian(net, samples)
    per = np.sum(hess * hess, axis=(1, 2, 3))
    mc = float(np.mean(per))
    se = float(np.std(per) / math.sqrt(len(per)))
    assert loss_thin_plate(net, samples) == pytest.approx(mc, abs=1e-12)
    assert abs(mc - quad) < 3 * se + 1e-3 * abs(quad)


def test_warp_point_time_bounds():
    net = zero_residual_net()
    pt = np.array([0.3, -0.4])
    assert np.allclose(warp_point(net, pt, 1.0), pt)
    assert np.allclose(warp_point(net, pt, -1.0), pt)
    with pytest.raises(ValueError):
        warp_point(net, pt, 1.5)
    with pytest.raises(ValueError):
        warp_point(net, pt, -1.01)


def test_spatial_jacobian_identity_warp():
    jac = spatial_jacobian(zero_residual_net(), np.array([[0.1, 0.2], [0.5, -0.5]]), 0.3)
    assert np.allclose(jac, np.eye(2)[None], atol=1e-15)


def test_landmark_path_identity():
    p = np.array([0.25, -0.1])
    path = landmark_path(zero_residual_net(), p, samples=17)
    assert path.shape == (17, 2)
    assert np.allclose(path, p[None, :], atol=1e-15)
    with pytest.raises(ValueError):
        landmark_path(zero_residual_net(), p, samples=1)


def test_warped_image_sample_validation():
    from neurowarp.fixtures import toy_gradient_pair
    from neurowarp.image import ImageFitConfig, fit_image

    img, _ = toy_gradient_pair(16)
    nimg = fit_image(img, ImageFitConfig(hidden_width=16, hidden_layers=1, steps=5, batch=64))
    net = zero_residual_net()
    coords = np.array([[0.0, 0.0]])
    out = warped_image_sample(net, nimg, 0, coords, 0.5)
    assert out.shape == (1, 1)
    with pytest.raises(ValueError):
        warped_image_sample(net, nimg, 2, coords, 0.5)
    with pytest.raises(ValueError):
        warped_image_sample(net, nimg, 0, coords, 1.5)


# -- landmark serialization ----------------------------------------------------------


def test_landmarks_round_trip():
    pairs = LandmarkPairs(
        np.array([[0.1, 0.2], [-0.3, 0.4]]), np.array([[0.15, 0.2], [-0.2, 0.5]]), ["a", "b"]
    )
    doc = landmarks_to_dict(pairs)
    assert doc["version"] == "landmarks/1"
    assert doc["space"] == "normalized"
    back = landmarks_from_dict(doc)
    assert np.allclose(back.p, pairs.p) and np.allclose(back.q, pairs.q)
    assert back.labels == ["a", "b"]


def test_landmarks_pixel_space_conversion():
    # a 200x100 image: pixel (99.5, 49.5) is the exact center
    doc = {
        "version": "landmarks/1",
        "space": "pixels",
        "image_size": [200, 100],
        "pairs": [{"p": [99.5, 49.5], "q": [199.5, 49.5]}],
    }
    pairs = landmarks_from_dict(doc)
    assert np.allclose(pairs.p[0], [0.0, 0.0], atol=1e-12)
    assert np.allclose(pairs.q[0], [1.0, 0.0], atol=1e-12)

    # distinct sizes per side
    doc = {
        "version": "landmarks/1",
        "space": "pixels",
        "image_size": {"p": [100, 100], "q": [50, 50]},
        "pairs": [{"p": [49.5, 49.5], "q": [24.5, 24.5]}],
    }
    pairs = landmarks_from_dict(doc)
    assert np.allclose(pairs.p[0], [0.0, 0.0], atol=1e-12)
    assert np.allclose(pairs.q[0], [0.0, 0.0], atol=1e-12)


def test_landmark_validation_errors_name_the_pair():
    with pytest.raises(LandmarkError, match="pair 1"):
        LandmarkPairs(np.array([[0.0, 0.0], [3.0, 0.0]]), np.zeros((2, 2)))
    with pytest.raises(LandmarkError, match="pairs 0 and 1"):
        LandmarkPairs(
            np.array([[0.1, 0.1], [0.1, 0.1]]), np.array([[0.2, 0.2], [0.3, 0.3]])
        )
    with pytest.raises(LandmarkError, match="non-finite"):
        LandmarkPairs(np.array([[np.nan, 0.0]]), np.array([[0.0, 0.0]]))
    with pytest.raises(LandmarkError):
        landmarks_from_dict({"version": "landmarks/9", "pairs": []})
    with pytest.raises(LandmarkError):
        landmarks_from_dict({"version": "landmarks/1", "space": "pixels", "pairs": []})


# -- regions -------------------------------------------------------------------------


def test_polygon_mask_matches_disk():
    angles = np.linspace(0, 2 * np.pi, 64, endpoint=False)
    verts = np.column_stack([0.5 * np.cos(angles) - 0.1, 0.5 * np.sin(angles) + 0.05])
    poly = polygon_mask(verts, 64, 64)
    disk = disk_mask(64, (-0.1, 0.05), 0.5)
    inter = np.logical_and(poly.mask > 0, disk.mask > 0).sum()
    union = np.logical_or(poly.mask > 0, disk.mask > 0).sum()
    assert inter / union > 0.95


def test_region_contains_identity_warp_equals_mask_lookup():
    mask = disk_mask(32, (0.0, 0.0), 0.4)
    grid = ImageGrid(mask.mask[:, :, None])
    coords = grid.coords()
    want = mask.mask.reshape(-1) > 0.5
    net = zero_residual_net()
    for t in (0.0, 0.3, 1.0):
        got = region_contains(net, mask, coords, t)
        assert np.array_equal(got, want)


def test_region_mask_empty_and_nonbinary_input():
    m = RegionMask(np.zeros((8, 8)))
    assert m.is_empty()
    m2 = RegionMask(np.array([[0.0, 0.7], [255.0, 0.0]]))
    assert np.array_equal(m2.mask, [[0.0, 1.0], [1.0, 0.0]])


# -- persistence -----------------------------------------------------------------------


def test_warp_model_round_trip(tmp_path):
    net = init_sine_net([3, 16, 2], seed=13)
    model = WarpModel(net, config={"steps": 10}, diagnostics={"identity_residual": 0.5})
    save_warp(model, tmp_path / "warp.json")
    back = load_warp(tmp_path / "warp.json")
    assert all(np.array_equal(a, b) for a, b in zip(back.net.weights, net.weights))
    assert back.config == {"steps": 10}
    assert back.diagnostics["identity_residual"] == 0.5
    with pytest.raises(ValueError):
        warp_from_dict({"version": "warp-model/9"})
    assert warp_to_dict(model)["version"] == "warp-model/1"