"""Wiener drivers and the diffusion operator family G(t, y).

Two increment generators are provided: Gaussian paths for Monte Carlo and a
Rademacher scenario tree (increments +-sqrt(dt)) whose exhaustive enumeration
makes every conditional expectation a finite block average.  The Rademacher
values match the first two Wiener moments, which is all the first-weak-order
Euler step uses.

Three diffusion families are implemented, each mapping a velocity field to m
fields (one per Wiener component):

    additive          g^k(t, y) = anchor_k                      (state independent)
    linear            g^k(t, y) = gain (y, a_k)_V a_k           (rank-one mixing)
    saturated-linear  linear followed by the radial retraction
                      r(s) = s min(1, sqrt(L)/|s|) in the summed V-norm,
                      so (sum_k ||g^k||_V)^2 <= L everywhere.

The retraction is globally Lipschitz but only one-sided differentiable on the
saturation sphere; eval_dG emits SaturationBoundaryWarning there instead of
smoothing.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .spectral import SpectralField, SpectralSpace

TREE_SIZE_LIMIT = 22

FAMILIES = ("additive", "linear", "saturated-linear")


class TreeSizeError(ValueError):
    """Raised when the full scenario tree would exceed 2**TREE_SIZE_LIMIT leaves."""


class SaturationBoundaryWarning(UserWarning):
    """Derivative requested exactly on the saturation sphere (one-sided)."""


@dataclass(frozen=True)
class WienerPath:
    """Increment matrix of one driver realization, shape (T_steps, m)."""

    increments: np.ndarray
    dt: float
    seed: int

    @property
    def n_steps(self) -> int:
        return self.increments.shape[0]

    @property
    def m(self) -> int:
        return self.increments.shape[1]


def sample_path(seed: int, t_steps: int, dt: float, m: int, tree_mode: bool = False):
    """Reproducible Gaussian increments (Var = dt per component), or, with
    tree_mode, the exhaustive Rademacher scenario tree for the same grid."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    if t_steps < 1:
        raise ValueError("T_steps must be >= 1")
    if tree_mode:
        return ScenarioTree(t_steps, dt, m)
    rng = np.random.default_rng(seed)
    inc = rng.standard_normal((t_steps, m)) * np.sqrt(dt)
    return WienerPath(inc, dt, seed)


def sample_ensemble(seed: int, n_paths: int, t_steps: int, dt: float, m: int) -> np.ndarray:
    """Increment block (n_paths, T_steps, m) drawn from one root seed."""
    rng = np.random.default_rng(seed)
    return rng.standard_normal((n_paths, t_steps, m)) * np.sqrt(dt)


class ScenarioTree:
    """Exhaustive Rademacher tree: 2**(m*T_steps) equally likely leaves.

    Leaves are indexed so that the branch bits of step k are the most
    significant block: every F_k-measurable quantity is constant on
    contiguous blocks of size branching**(T_steps - k).
    """

    def __init__(self, t_steps: int, dt: float, m: int):
        if m * t_steps > TREE_SIZE_LIMIT:
            raise TreeSizeError(
                f"tree with m*K = {m * t_steps} > {TREE_SIZE_LIMIT} is too large to enumerate"
            )
        if dt <= 0:
            raise ValueError("dt must be positive")
        self.t_steps = t_steps
        self.dt = dt
        self.m = m
        self.branching = 2**m
        self.n_leaves = self.branching**t_steps

    def increments_at(self, k: int) -> np.ndarray:
        """Increments of step k for every leaf, shape (n_leaves, m); lazy."""
        if not 0 <= k < self.t_steps:
            raise IndexError(f"step {k} outside 0..{self.t_steps - 1}")
        leaves = np.arange(self.n_leaves)
        block = self.branching ** (self.t_steps - 1 - k)
        branch = (leaves // block) % self.branching
        bits = (branch[:, None] >> np.arange(self.m)[None, :]) & 1
        return np.sqrt(self.dt) * (2.0 * bits - 1.0)

    def all_increments(self) -> np.ndarray:
        """Dense (n_leaves, T_steps, m) block; only for small trees."""
        return np.stack([self.increments_at(k) for k in range(self.t_steps)], axis=1)

    def condition(self, values: np.ndarray, k: int) -> np.ndarray:
        """Exact E[values | F_k]: block average, broadcast back to leaves."""
        block = self.branching ** (self.t_steps - k)
        lead = values.shape[0]
        if lead != self.n_leaves:
            raise ValueError("leaf axis mismatch with tree size")
        shaped = values.reshape((self.n_leaves // block, block) + values.shape[1:])
        mean = shaped.mean(axis=1, keepdims=True)
        return np.broadcast_to(mean, shaped.shape).reshape(values.shape)

    def expectation(self, values: np.ndarray) -> np.ndarray:
        return values.mean(axis=0)


@dataclass(frozen=True)
class DiffusionSpec:
    """The operator family G(t, y) -> m fields with derivative and adjoint."""

    family: str
    anchors: tuple[SpectralField, ...]
    gain: float = 1.0
    saturation_level: float = 1.0
    _anchor_mat: np.ndarray = field(init=False, repr=False, compare=False, default=None)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown diffusion family {self.family!r}")
        if not self.anchors:
            raise ValueError("at least one anchor field required")
        space = self.anchors[0].space
        for a in self.anchors:
            if a.space != space:
                raise ValueError("anchor fields live on different bands")
        if self.family == "saturated-linear" and self.saturation_level <= 0:
            raise ValueError("saturation level L must be positive")
        object.__setattr__(
            self, "_anchor_mat", np.stack([a.coeffs for a in self.anchors], axis=0)
        )

    @property
    def m(self) -> int:
        return len(self.anchors)

    @property
    def space(self) -> SpectralSpace:
        return self.anchors[0].space

    # All evaluators take and return stacked V-coefficients; leading axes of y
    # broadcast (paths/leaves), the output gains an axis of length m before n.

    def _linear_part(self, y: np.ndarray) -> np.ndarray:
        proj = np.einsum("...i,mi->...m", y, self._anchor_mat)
        return self.gain * np.einsum("...m,mi->...mi", proj, self._anchor_mat)

    def _sum_v_norm(self, g: np.ndarray) -> np.ndarray:
        return np.sqrt(np.einsum("...mi,...mi->...m", g, g)).sum(axis=-1)

    def eval_g(self, t: float, y: np.ndarray) -> np.ndarray:
        """G(t, y) as coefficients, shape (..., m, n)."""
        if self.family == "additive":
            shape = np.asarray(y).shape[:-1]
            return np.broadcast_to(self._anchor_mat, shape + self._anchor_mat.shape).copy()
        g = self._linear_part(np.asarray(y))
        if self.family == "linear":
            return g
        s = self._sum_v_norm(g)
        factor = np.minimum(1.0, np.sqrt(self.saturation_level) / np.maximum(s, 1e-300))
        return g * factor[..., None, None]

    def eval_dg(self, t: float, y: np.ndarray, v: np.ndarray,
                boundary_rtol: float = 1e-9) -> np.ndarray:
        """Directional derivative (grad_y G)(t, y) v, shape (..., m, n)."""
        y = np.asarray(y)
        v = np.asarray(v)
        if self.family == "additive":
            shape = np.broadcast_shapes(y.shape, v.shape)[:-1]
            return np.zeros(shape + (self.m, self.space.n_modes))
        dlin = self._linear_part(v)
        if self.family == "linear":
            return dlin
        g = self._linear_part(y)
        s = self._sum_v_norm(g)
        root_l = np.sqrt(self.saturation_level)
        on_sphere = np.abs(s - root_l) <= boundary_rtol * root_l
        if np.any(on_sphere):
            warnings.warn(
                "derivative on the saturation sphere is one-sided; returning the outer branch",
                SaturationBoundaryWarning,
            )
        norms = np.sqrt(np.einsum("...mi,...mi->...m", g, g))
        with np.errstate(invalid="ignore", divide="ignore"):
            unit = np.where(norms[..., None] > 0, g / np.maximum(norms, 1e-300)[..., None], 0.0)
        ds = np.einsum("...mi,...mi->...m", unit, dlin).sum(axis=-1)
        saturated = s >= root_l * (1.0 - 1e-15)
        inner = dlin
        outer = root_l * (dlin / np.maximum(s, 1e-300)[..., None, None]
                          - g * (ds / np.maximum(s**2, 1e-300))[..., None, None])
        return np.where(saturated[..., None, None], outer, inner)

    def eval_dg_adjoint(self, t: float, y: np.ndarray, q: np.ndarray) -> np.ndarray:
        """Dual coefficients of (grad_y G)^T q: pairing-exact transpose.

        q holds the m fields as V-coefficients, shape (..., m, n); the result
        r satisfies <r, v> = sum_k ((grad_y G v)^k, Q^k)_L2 for every band
        direction v, with <.,.> the coefficient pairing against V-coordinates.
        """
        y = np.asarray(y)
        q = np.asarray(q)
        q_dual = q / self.space.sig  # L2 pairing of fields = dual . V-coords
        if self.family == "additive":
            shape = np.broadcast_shapes(y.shape, q_dual[..., 0, :].shape)[:-1]
            return np.zeros(shape + (self.space.n_modes,))
        if self.family == "linear":
            w = np.einsum("mi,...mi->...m", self._anchor_mat, q_dual)
            return self.gain * np.einsum("...m,mi->...i", w, self._anchor_mat)
        # saturated-linear: assemble the dense derivative matrix and transpose.
        n = self.space.n_modes
        eye = np.eye(n)
        cols = [self.eval_dg(t, y, eye[j]) for j in range(n)]
        jac = np.stack(cols, axis=-1)  # (..., m, n_out, n_in)
        return np.einsum("...mij,...mi->...j", jac, q_dual)

    def field_tuple(self, t: float, y: SpectralField) -> tuple[SpectralField, ...]:
        g = self.eval_g(t, y.coeffs)
        return tuple(SpectralField(self.space, g[k]) for k in range(self.m))
