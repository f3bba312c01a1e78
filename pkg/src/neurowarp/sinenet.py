"""Sinusoidal multilayer perceptrons with closed-form input derivatives.

A net of depth ``d`` is ``y = W_d a_d + b_d`` where ``a_{i+1} = sin(z_i)``,
``z_0 = omega0 * (W_0 x + b_0)`` and ``z_i = W_i a_i + b_i`` for the deeper
sinusoidal layers.  The frequency scale ``omega0`` multiplies only the first
pre-activation.

Besides plain inference this module provides:

* exact input Jacobians and Hessians by propagating the chain rule through
  the ``cos``/``sin`` factors (no finite differences),
* builders that express the same recursions as tape graphs so training can
  differentiate losses containing Jacobian and Hessian terms with respect
  to the parameters,
* a JSON wire format (``sine-net/1``) that round-trips bit exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .tape import Tensor, affine, einsum


class ArchitectureError(ValueError):
    """Invalid layer dimensions, frequency scale or weight shapes."""


FORMAT_VERSION = "sine-net/1"


@dataclass
class SineNet:
    """Weights of one sinusoidal MLP.

    ``layer_dims`` lists input width, every hidden width and output width;
    its length is the number of sinusoidal layers plus two.
    """

    layer_dims: list[int]
    omega0: float
    weights: list[np.ndarray] = field(default_factory=list)
    biases: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self) -> None:
        dims = [int(n) for n in self.layer_dims]
        if len(dims) < 3:
            raise ArchitectureError(
                f"need at least one sinusoidal layer: layer_dims={self.layer_dims}"
            )
        if any(n <= 0 for n in dims):
            raise ArchitectureError(f"layer dims must be positive: {self.layer_dims}")
        if not np.isfinite(self.omega0) or self.omega0 <= 0:
            raise ArchitectureError(f"omega0 must be positive and finite: {self.omega0}")
        self.layer_dims = dims
        if self.weights:
            expect = [(dims[i + 1], dims[i]) for i in range(len(dims) - 1)]
            got_w = [w.shape for w in self.weights]
            got_b = [b.shape for b in self.biases]
            if got_w != expect or got_b != [(s[0],) for s in expect]:
                raise ArchitectureError(
                    f"weight shapes {got_w} / bias shapes {got_b} do not match dims {dims}"
                )

    @property
    def depth(self) -> int:
        """Number of sinusoidal layers."""
        return len(self.layer_dims) - 2

    @property
    def in_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def out_dim(self) -> int:
        return self.layer_dims[-1]

    def copy(self) -> "SineNet":
        return SineNet(
            list(self.layer_dims),
            self.omega0,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
        )


def init_sine_net(layer_dims: list[int], omega0: float = 30.0, seed: int = 0) -> SineNet:
    """Deterministic initialization.

    First-layer weights are uniform in +/- 1/in_dim; every deeper layer
    (including the affine output) is uniform in +/- sqrt(6/fan_in)/omega0.
    Biases start at zero.
    """
    net = SineNet(list(layer_dims), float(omega0))
    rng = np.random.default_rng(seed)
    dims = net.layer_dims
    weights, biases = [], []
    for i in range(len(dims) - 1):
        fan_in, fan_out = dims[i], dims[i + 1]
        if i == 0:
            bound = 1.0 / fan_in
        else:
            bound = np.sqrt(6.0 / fan_in) / net.omega0
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    net.weights = weights
    net.biases = biases
    net.__post_init__()
    return net


def _check_input(net: SineNet, x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != net.in_dim:
        raise ArchitectureError(
            f"input of shape {np.asarray(x).shape} does not feed a net with in_dim {net.in_dim}"
        )
    return x, squeeze


def forward(net: SineNet, x: np.ndarray) -> np.ndarray:
    """Evaluate the net on one point ``(in_dim,)`` or a batch ``(B, in_dim)``."""
    a, squeeze = _check_input(net, x)
    for i in range(net.depth):
        z = a @ net.weights[i].T + net.biases[i]
        if i == 0:
            z = net.omega0 * z
        a = np.sin(z)
    y = a @ net.weights[-1].T + net.biases[-1]
    return y[0] if squeeze else y


def input_jacobian(net: SineNet, x: np.ndarray) -> np.ndarray:
    """Exact Jacobian d out / d in, shape ``(B, out_dim, in_dim)``."""
    a, squeeze = _check_input(net, x)
    jac = None  # None stands for the identity
    for i in range(net.depth):
        w = net.weights[i]
        z = a @ w.T + net.biases[i]
        scale = net.omega0 if i == 0 else 1.0
        z = scale * z
        if jac is None:
            jz = np.broadcast_to(scale * w, (a.shape[0],) + w.shape)
        else:
            jz = scale * np.einsum("pq,bqn->bpn", w, jac, optimize=True)
        jac = np.cos(z)[:, :, None] * jz
        a = np.sin(z)
    jac = np.einsum("mp,bpn->bmn", net.weights[-1], jac, optimize=True)
    return jac[0] if squeeze else jac


def input_hessian(net: SineNet, x: np.ndarray) -> np.ndarray:
    """Exact Hessian d2 out / d in2, shape ``(B, out_dim, in_dim, in_dim)``.

    Symmetric in the two trailing axes by construction.
    """
    a, squeeze = _check_input(net, x)
    n_in = net.in_dim
    batch = a.shape[0]
    jac = None
    hess = np.zeros((batch, net.layer_dims[1], n_in, n_in))
    for i in range(net.depth):
        w = net.weights[i]
        z = a @ w.T + net.biases[i]
        scale = net.omega0 if i == 0 else 1.0
        z = scale * z
        if jac is None:
            jz = np.broadcast_to(scale * w, (batch,) + w.shape)
            hz = hess  # zeros
        else:
            jz = scale * np.einsum("pq,bqn->bpn", w, jac, optimize=True)
            hz = scale * np.einsum("pq,bqnm->bpnm", w, hess, optimize=True)
        sin_z, cos_z = np.sin(z), np.cos(z)
        outer = jz[:, :, :, None] * jz[:, :, None, :]
        hess = -sin_z[:, :, None, None] * outer + cos_z[:, :, None, None] * hz
        jac = cos_z[:, :, None] * jz
        a = sin_z
    hess = np.einsum("kp,bpnm->bknm", net.weights[-1], hess, optimize=True)
    return hess[0] if squeeze else hess


# -- serialization ------------------------------------------------------------


def to_json_dict(net: SineNet) -> dict:
    return {
        "version": FORMAT_VERSION,
        "layer_dims": list(net.layer_dims),
        "omega0": net.omega0,
        "weights": [w.tolist() for w in net.weights],
        "biases": [b.tolist() for b in net.biases],
    }


def from_json_dict(doc: dict) -> SineNet:
    if doc.get("version") != FORMAT_VERSION:
        raise ArchitectureError(f"unknown net format version: {doc.get('version')!r}")
    dims = [int(n) for n in doc["layer_dims"]]
    weights = [np.asarray(w, dtype=np.float64) for w in doc["weights"]]
    biases = [np.asarray(b, dtype=np.float64) for b in doc["biases"]]
    return SineNet(dims, float(doc["omega0"]), weights, biases)


def dumps(net: SineNet) -> str:
    # json keeps 64-bit floats in shortest round-trip decimal form
    return json.dumps(to_json_dict(net))


def loads(text: str) -> SineNet:
    return from_json_dict(json.loads(text))


# -- tape graphs for training ---------------------------------------------------


class NetParams:
    """Parameter leaves of one net, shared across the graphs of a session.

    The leaves alias the net's arrays, so in-place optimizer updates are
    seen by the next graph built from the same ``NetParams``.
    """

    def __init__(self, net: SineNet):
        self.net = net
        self.weights = [Tensor.parameter(w) for w in net.weights]
        self.biases = [Tensor.parameter(b) for b in net.biases]

    def leaves(self) -> list[Tensor]:
        return self.weights + self.biases

    def zero_grads(self) -> None:
        for leaf in self.leaves():
            leaf.grad = None


def forward_graph(params: NetParams, x) -> Tensor:
    """Tape version of :func:`forward` for a batch ``(B, in_dim)``."""
    net = params.net
    a = x if isinstance(x, Tensor) else Tensor.constant(np.atleast_2d(x))
    for i in range(net.depth):
        z = affine(a, params.weights[i], params.biases[i])
        if i == 0:
            z = z * net.omega0
        a, _ = z.sincos_fast()
    return affine(a, params.weights[-1], params.biases[-1])


def _input_selector(net: SineNet, in_cols) -> np.ndarray:
    if in_cols is None:
        return np.eye(net.in_dim)
    sel = np.zeros((net.in_dim, len(in_cols)))
    for j, c in enumerate(in_cols):
        sel[c, j] = 1.0
    return sel


def jacobian_graph(params: NetParams, x, in_cols=None) -> Tensor:
    """Tape version of :func:`input_jacobian`; ``(B, out_dim, k)``.

    ``in_cols`` restricts differentiation to a subset of input columns,
    which keeps the graph small when only spatial derivatives matter.
    """
    net = params.net
    a = x if isinstance(x, Tensor) else Tensor.constant(np.atleast_2d(x))
    sel = Tensor.constant(_input_selector(net, in_cols))
    jac = None
    for i in range(net.depth):
        w = params.weights[i]
        z = affine(a, w, params.biases[i])
        scale = net.omega0 if i == 0 else 1.0
        if i == 0:
            z = z * scale
        if jac is None:
            jz = einsum("pq,qn->pn", w, sel) * scale  # (p, k), broadcast over batch
        else:
            jz = einsum("pq,bqn->bpn", w, jac)
        sin_z, cos_z = z.sincos_fast()
        jac = cos_z.expand_dims(-1) * jz
        a = sin_z
    return einsum("mp,bpn->bmn", params.weights[-1], jac)


def hessian_graph(params: NetParams, x, in_cols=None) -> Tensor:
    """Tape version of :func:`input_hessian`; ``(B, out_dim, k, k)``."""
    net = params.net
    a = x if isinstance(x, Tensor) else Tensor.constant(np.atleast_2d(x))
    sel = Tensor.constant(_input_selector(net, in_cols))
    jac = None
    hess = None
    for i in range(net.depth):
        w = params.weights[i]
        z = affine(a, w, params.biases[i])
        scale = net.omega0 if i == 0 else 1.0
        if i == 0:
            z = z * scale
        if jac is None:
            jz = einsum("pq,qn->pn", w, sel) * scale
            outer = einsum("pi,pj->pij", jz, jz)
            hz = None
        else:
            jz = einsum("pq,bqn->bpn", w, jac)
            outer = jz.expand_dims(-1) * jz.expand_dims(-2)
            hz = einsum("pq,bqij->bpij", w, hess)
        sin_z, cos_z = z.sincos_fast()
        neg_sin = -sin_z
        hess = neg_sin.expand_dims(-1).expand_dims(-1) * outer
        if hz is not None:
            hess = hess + cos_z.expand_dims(-1).expand_dims(-1) * hz
        jac = cos_z.expand_dims(-1) * jz
        a = sin_z
    return einsum("mp,bpij->bmij", params.weights[-1], hess)
