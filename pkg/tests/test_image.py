"""Image grids, bilinear sampling, neural image fitting and persistence."""

import numpy as np
import pytest

from neurowarp import sinenet
from neurowarp.image import (
    ImageFitConfig,
    ImageGrid,
    bilinear_sample,
    fit_image,
    grid_coords,
    image_gradient,
    load_image,
    load_neural_image,
    neural_image_from_dict,
    neural_image_to_dict,
    render,
    sample,
    save_image,
    save_neural_image,
)
from neurowarp.metrics import psnr

from oracles import rel_error


# -- grid geometry --------------------------------------------------------------------


def test_square_grid_centers():
    grid = ImageGrid(np.zeros((2, 2, 1)))
    assert grid.pixel_size == 1.0
    want = np.array([[-0.5, -0.5], [0.5, -0.5], [-0.5, 0.5], [0.5, 0.5]])
    assert np.allclose(grid.coords(), want)


def test_wide_grid_centers():
    # 4 wide, 2 tall: the longer axis spans [-1, 1], the shorter is centered
    grid = ImageGrid(np.zeros((2, 4, 1)))
    assert grid.pixel_size == 0.5
    coords = grid.coords().reshape(2, 4, 2)
    assert np.allclose(coords[0, :, 0], [-0.75, -0.25, 0.25, 0.75])
    assert np.allclose(coords[:, 0, 1], [-0.25, 0.25])


def test_pixel_domain_round_trip():
    grid = ImageGrid(np.zeros((5, 9, 1)))
    pix = np.array([[0.0, 0.0], [8.0, 4.0], [3.25, 1.5]])
    assert np.allclose(grid.domain_to_pixels(grid.pixels_to_domain(pix)), pix)


def test_grid_coords_matches_method():
    grid = ImageGrid(np.zeros((3, 7, 1)))
    assert np.array_equal(grid.coords(), grid_coords(7, 3))


def test_image_file_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    raw = rng.integers(0, 256, size=(12, 9, 3), dtype=np.uint8)
    grid = ImageGrid(raw.astype(np.float64) / 255.0)
    save_image(grid, tmp_path / "img.png")
    back = load_image(tmp_path / "img.png")
    assert np.array_equal(back.pixels, grid.pixels)
    gray = load_image(tmp_path / "img.png", grayscale=True)
    assert gray.pixels.shape == (12, 9, 1)


# -- bilinear sampling ----------------------------------------------------------------


def test_bilinear_exact_at_centers():
    rng = np.random.default_rng(1)
    px = rng.uniform(size=(6, 5, 2))
    pts = np.array([[0.0, 0.0], [4.0, 5.0], [2.0, 3.0]])
    got = bilinear_sample(px, pts)
    want = px[[0, 5, 3], [0, 4, 2]]
    assert np.allclose(got, want, atol=1e-15)


def test_bilinear_midpoint_average():
    px = np.zeros((2, 2, 1))
    px[0, 0, 0], px[0, 1, 0], px[1, 0, 0], px[1, 1, 0] = 1.0, 2.0, 3.0, 4.0
    assert bilinear_sample(px, np.array([[0.5, 0.5]]))[0, 0] == pytest.approx(2.5)


def test_bilinear_fill_and_clamp():
    px = np.ones((3, 3, 1))
    far = np.array([[10.0, 10.0], [-5.0, 1.0]])
    assert np.allclose(bilinear_sample(px, far, fill=0.0), 0.0)
    assert np.allclose(bilinear_sample(px, far, fill=None), 1.0)


# -- fitting --------------------------------------------------------------------------


def test_constant_image_fits_quickly():
    grid = ImageGrid(np.full((64, 64, 1), 0.5))
    cfg = ImageFitConfig(hidden_width=64, hidden_layers=2, steps=500, batch=1024, seed=0)
    nimg = fit_image(grid, cfg)
    assert nimg.fit_psnr >= 50.0
    assert nimg.steps == 500


def test_zero_step_budget_returns_initial_net():
    grid = ImageGrid(np.full((16, 16, 1), 0.25))
    cfg = ImageFitConfig(hidden_width=32, hidden_layers=1, steps=0, batch=64, seed=7)
    nimg = fit_image(grid, cfg)
    fresh = sinenet.init_sine_net([2, 32, 1], omega0=cfg.omega0, seed=7)
    assert all(np.array_equal(a, b) for a, b in zip(nimg.net.weights, fresh.weights))
    want = psnr(render(nimg, 16, 16).pixels, grid.pixels)
    assert nimg.fit_psnr == pytest.approx(want, abs=1e-12)


def test_sampling_at_training_centers_within_fit_error(toy_images):
    g0, _, n0, _ = toy_images
    got = sample(n0, g0.coords())
    mean_abs = float(np.abs(got.reshape(g0.pixels.shape) - g0.pixels).mean())
    assert mean_abs <= 2.0 * 10 ** (-n0.fit_psnr / 20.0)


def test_fit_history_is_monotone_on_checkpoints(toy_images):
    _, _, n0, _ = toy_images
    steps = [h["step"] for h in n0.psnr_history]
    values = [h["psnr"] for h in n0.psnr_history]
    assert values[-1] >= values[steps.index(500)]


def test_sample_clamps_to_unit_interval():
    net = sinenet.init_sine_net([2, 8, 1], seed=0)
    net.weights[-1][:] = 0.0
    net.biases[-1][:] = 3.0
    from neurowarp.image import NeuralImage

    nimg = NeuralImage(net, 4, 4, 1, fit_psnr=0.0, steps=0, seed=0)
    assert np.all(sample(nimg, np.zeros((3, 2))) == 1.0)
    net.biases[-1][:] = -3.0
    assert np.all(sample(nimg, np.zeros((3, 2))) == 0.0)


def test_image_gradient_matches_finite_differences(toy_images):
    _, _, n0, _ = toy_images
    coords = np.array([[0.1, -0.3], [-0.5, 0.2], [0.0, 0.0]])
    grad = image_gradient(n0, coords)
    h = 1e-5
    for k in range(2):
        dx = np.zeros(2)
        dx[k] = h
        fd = (sample(n0, coords + dx) - sample(n0, coords - dx)) / (2 * h)
        assert rel_error(grad[:, :, k], fd) < 1e-5


def test_natural_image_reaches_thirty_db(natural_fit):
    img, nimg, seconds = natural_fit
    assert nimg.fit_psnr >= 30.0
    # regression band around the recorded baseline for the default recipe
    assert nimg.fit_psnr == pytest.approx(32.6, abs=1.5)
    rendered = render(nimg, 128, 128)
    assert psnr(rendered.pixels, img.pixels) == pytest.approx(nimg.fit_psnr, abs=1e-9)


# -- persistence ----------------------------------------------------------------------


def test_neural_image_round_trip(tmp_path, toy_images):
    _, _, n0, _ = toy_images
    path = tmp_path / "img.json"
    save_neural_image(n0, path)
    back = load_neural_image(path)
    assert all(np.array_equal(a, b) for a, b in zip(back.net.weights, n0.net.weights))
    assert (back.width, back.height, back.channels) == (n0.width, n0.height, n0.channels)
    assert back.fit_psnr == n0.fit_psnr
    assert back.steps == n0.steps and back.seed == n0.seed
    doc = neural_image_to_dict(n0)
    assert doc["version"] == "neural-image/1"
    with pytest.raises(ValueError):
        neural_image_from_dict({**doc, "version": "neural-image/2"})