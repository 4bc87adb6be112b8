"""Cost functionals: quadratic tracking Lagrangian plus terminal penalties.

The default family is

    L(t, u, y) = w ||y - Y_d(t)||_2^2 + (lambda/2) ||u||_2^2,
    h(y) in { 0,  1/2 ||y - Y_dT||_2^2,  1/2 ||y - Y_dT||_V^2 }.

Gradient conventions.  Running gradients are exposed two ways: grad_y as dual
coefficients (the pairing (grad_y L, phi)_L2 against V-orthonormal test
fields, which is what the backward recursion consumes) and grad_u as the
V-coefficients of the L2-gradient field (what descent updates subtract).
The terminal object is the costate p(T): the field whose V-inner product
against Z(T) is the directional derivative of h, i.e. V-coordinates
g_i = dh(y)[h~_i].  For the V-norm tracking penalty this is the field
y - Y_dT itself; for the L2 penalty it is sigma^{-1}(y - Y_dT).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .spectral import SpectralField, SpectralSpace, norm_sq_from_coeffs

TERMINAL_KINDS = ("none", "l2", "v")


class CostError(ValueError):
    pass


@dataclass(frozen=True)
class QuadraticCost:
    """Quadratic tracking cost; target process given as V-coefficients."""

    space: SpectralSpace
    lam_u: float = 0.0
    track_weight: float = 0.0
    target: np.ndarray | None = None       # (K+1, n) or (n,) broadcast in time
    terminal_kind: str = "none"
    terminal_target: np.ndarray | None = None  # (n,)

    def __post_init__(self):
        if self.lam_u < 0 or self.track_weight < 0:
            raise CostError("cost weights must be nonnegative")
        if self.terminal_kind not in TERMINAL_KINDS:
            raise CostError(f"unknown terminal kind {self.terminal_kind!r}")
        if self.track_weight > 0 and self.target is None:
            raise CostError("tracking requires a target process")

    # -- target access ------------------------------------------------------

    def target_at(self, k: int) -> np.ndarray:
        if self.target is None:
            return np.zeros(self.space.n_modes)
        t = np.asarray(self.target, dtype=float)
        return t if t.ndim == 1 else t[k]

    def _terminal_target(self) -> np.ndarray:
        if self.terminal_target is None:
            return np.zeros(self.space.n_modes)
        return np.asarray(self.terminal_target, dtype=float)

    # -- running cost and gradients (batched over leading axes) -------------

    def running(self, k: int, u: np.ndarray, y: np.ndarray) -> np.ndarray:
        space = self.space
        val = 0.0
        if self.track_weight > 0:
            val = self.track_weight * norm_sq_from_coeffs(space, y - self.target_at(k), "L2")
        if self.lam_u > 0:
            val = val + 0.5 * self.lam_u * norm_sq_from_coeffs(space, u, "L2")
        return val if np.ndim(val) else np.asarray(val, dtype=float)

    def grad_y_dual(self, k: int, u: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Dual coefficients of grad_y L = 2 w (y - Y_d(k))."""
        if self.track_weight == 0:
            return np.zeros_like(np.asarray(y, dtype=float))
        return 2.0 * self.track_weight * (y - self.target_at(k)) / self.space.sig

    def grad_u_vcoords(self, k: int, u: np.ndarray, y: np.ndarray) -> np.ndarray:
        """V-coefficients of the L2-gradient field grad_u L = lambda u."""
        return self.lam_u * np.asarray(u, dtype=float)

    # -- terminal cost ------------------------------------------------------

    @property
    def has_terminal(self) -> bool:
        return self.terminal_kind != "none"

    def terminal(self, y: np.ndarray) -> np.ndarray:
        if self.terminal_kind == "none":
            return np.zeros(np.asarray(y).shape[:-1])
        d = np.asarray(y, dtype=float) - self._terminal_target()
        kind = "L2" if self.terminal_kind == "l2" else "V"
        return 0.5 * norm_sq_from_coeffs(self.space, d, kind)

    def terminal_costate_coords(self, y: np.ndarray) -> np.ndarray:
        """V-coefficients of p(T): g_i = dh(y)[h~_i]."""
        y = np.asarray(y, dtype=float)
        if self.terminal_kind == "none":
            return np.zeros_like(y)
        d = y - self._terminal_target()
        if self.terminal_kind == "v":
            return d
        return d / self.space.sig

    # -- hypothesis diagnostics ---------------------------------------------

    def gradient_growth_constant(self, rng: np.random.Generator, n_samples: int = 200,
                                 scale: float = 2.0) -> float:
        """Empirical C with ||grad_u L||_2 + ||grad_y L||_2 <= C (1 + ||u||_V + ||y||_Wt)."""
        space = self.space
        worst = 0.0
        for _ in range(n_samples):
            u = rng.standard_normal(space.n_modes) * scale
            y = rng.standard_normal(space.n_modes) * scale
            k = int(rng.integers(0, 1))
            gu = self.grad_u_vcoords(k, u, y)
            gy_dual = self.grad_y_dual(k, u, y)
            gy_v = gy_dual * space.sig
            num = float(
                np.sqrt(norm_sq_from_coeffs(space, gu, "L2"))
                + np.sqrt(norm_sq_from_coeffs(space, gy_v, "L2"))
            )
            den = 1.0 + float(np.sqrt(norm_sq_from_coeffs(space, u, "V"))) + float(
                np.sqrt(norm_sq_from_coeffs(space, y, "Wtilde"))
            )
            worst = max(worst, num / den)
        return worst


def terminal_condition(y_t: SpectralField, cost) -> SpectralField:
    """Terminal costate p(T) as a field, projected to the band."""
    if not hasattr(cost, "terminal_costate_coords"):
        raise CostError("cost specification lacks a terminal gradient")
    return SpectralField(y_t.space, cost.terminal_costate_coords(y_t.coeffs))
