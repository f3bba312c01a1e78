"""Neural image morphing: sinusoidal nets, smooth warps, gradient blending."""

__version__ = "0.1.0"
