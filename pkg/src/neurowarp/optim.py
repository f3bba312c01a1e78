"""Gradient extraction and the Adam update rule.

``loss_backward`` turns a scalar tape node into a ``GradTape`` holding one
gradient array per parameter leaf.  ``optimizer_step`` applies a
bias-corrected Adam update in place, so the net arrays aliased by the
leaves advance without rebuilding anything.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .sinenet import NetParams
from .tape import Tensor


class NumericsError(RuntimeError):
    """A gradient or update became NaN/Inf; training cannot continue."""


@dataclass
class GradTape:
    """Gradients for one optimizer step, aligned with ``NetParams.leaves()``."""

    grads: list[np.ndarray]

    def check_finite(self) -> None:
        for i, g in enumerate(self.grads):
            if not np.all(np.isfinite(g)):
                raise NumericsError(f"non-finite gradient in parameter block {i}")

    def flat(self) -> np.ndarray:
        return np.concatenate([g.ravel() for g in self.grads])


def loss_backward(loss: Tensor, params: NetParams | list[Tensor]) -> GradTape:
    """Backpropagate a scalar loss and collect leaf gradients.

    Leaf gradients are zeroed first, so each step starts from a clean tape.
    Leaves that the loss does not touch get zero gradients.
    """
    leaves = params.leaves() if isinstance(params, NetParams) else list(params)
    for leaf in leaves:
        leaf.grad = None
    loss.backward()
    grads = [
        leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data) for leaf in leaves
    ]
    tape = GradTape(grads)
    tape.check_finite()
    return tape


@dataclass
class AdamState:
    """First/second moment accumulators plus hyperparameters."""

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def init_adam(params: NetParams | list[Tensor], lr: float = 1e-4,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    leaves = params.leaves() if isinstance(params, NetParams) else list(params)
    return AdamState(
        lr=lr, beta1=beta1, beta2=beta2, eps=eps,
        m=[np.zeros_like(p.data) for p in leaves],
        v=[np.zeros_like(p.data) for p in leaves],
    )


def optimizer_step(params: NetParams | list[Tensor], tape: GradTape, state: AdamState) -> None:
    """One in-place Adam update with bias correction."""
    leaves = params.leaves() if isinstance(params, NetParams) else list(params)
    if len(leaves) != len(tape.grads) or len(leaves) != len(state.m):
        raise ValueError("parameter, gradient and state lengths disagree")
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for leaf, g, m, v in zip(leaves, tape.grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * np.square(g)
        update = state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        if not np.all(np.isfinite(update)):
            raise NumericsError("non-finite Adam update")
        leaf.data -= update
