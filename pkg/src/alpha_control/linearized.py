"""Tangent (linearized state) equation along a frozen base trajectory.

The tangent system reuses the grid, scheme and Wiener increments of its base
trajectory; the step is the exact derivative of the forward step, so the
pathwise first-order expansion of the control-to-state map holds at the
discrete level up to an O(rho) remainder (exactly zero when the band has a
single mode and the noise is state independent, because the whole scheme is
then affine in the control).

    dz_i = [ -kappa_i z_i - (curl sigma(Z) x Y + curl sigma(Y) x Z, h~_i)
             + (Psi, h~_i) ] dt + sum_k ((grad_y G)(t, Y) Z, h~_i)^k dW^k,
    z(0) = 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .forward import SolverConfig, Trajectory
from .noise import DiffusionSpec
from .spectral import SpectralField, norm_sq_from_coeffs


@dataclass(frozen=True)
class TangentTrajectory:
    config: SolverConfig
    states: np.ndarray  # (K+1, n) or (P, K+1, n)
    base: Trajectory

    @property
    def times(self) -> np.ndarray:
        return self.config.times

    def state_field(self, k: int, path: int | None = None) -> SpectralField:
        s = self.states if self.states.ndim == 2 else self.states[path if path is not None else 0]
        return SpectralField(self.config.space, s[k].copy())

    def norm_series(self, kind: str, path: int | None = None) -> np.ndarray:
        s = self.states if self.states.ndim == 2 else self.states[path if path is not None else 0]
        return np.sqrt(norm_sq_from_coeffs(self.config.space, s, kind))


def tangent_step(z: np.ndarray, y: np.ndarray, psi_dual: np.ndarray, dw: np.ndarray,
                 config: SolverConfig, diffusion: DiffusionSpec | None, t: float,
                 ops=None) -> np.ndarray:
    """One semi-implicit tangent step; inputs broadcast like forward.step."""
    ops = ops or config.pairing_ops()
    dt = config.dt
    drift = ops.tangent_drift(y, z) + psi_dual
    noise = 0.0
    if diffusion is not None:
        dg = diffusion.eval_dg(t, y, z) / config.space.sig
        noise = np.einsum("...mi,...m->...i", dg, dw)
    return (z + dt * drift + noise) / config.implicit_factor()


def integrate_tangent(base: Trajectory, psi_dual_at, diffusion: DiffusionSpec | None,
                      config: SolverConfig | None = None) -> TangentTrajectory:
    """Tangent solve with Z(0) = 0 on the base trajectory's grid and increments."""
    config = config or base.config
    if config.n_steps != base.config.n_steps or config.space != base.config.space:
        raise ValueError("tangent grid does not match the base trajectory")
    if config.scheme != "semi_implicit":
        raise ValueError("tangent integration is defined for the semi-implicit scheme")
    ops = config.pairing_ops()
    states = base.states
    increments = base.increments
    lead = states.shape[:-2]
    n = config.space.n_modes
    k_steps = config.n_steps
    z = np.zeros(lead + (n,))
    out = np.empty(lead + (k_steps + 1, n))
    out[..., 0, :] = 0.0
    times = config.times
    for k in range(k_steps):
        y_k = states[..., k, :]
        if increments is None:
            dw = np.zeros(lead + (diffusion.m if diffusion else 1,))
        else:
            dw = increments[..., k, :]
        z = tangent_step(z, y_k, psi_dual_at(k), dw, config, diffusion, times[k], ops)
        out[..., k + 1, :] = z
    return TangentTrajectory(config, out, base)


@dataclass(frozen=True)
class GateauxReport:
    rhos: tuple
    remainders: tuple          # mean over paths of sup_t ||(Y_rho - Y)/rho - Z||_V
    orders: tuple              # successive log-slopes
    common_noise: bool

    @property
    def observed_order(self) -> float:
        return min(self.orders) if self.orders else float("nan")


def gateaux_check(y0: np.ndarray, u_dual_at, psi_dual_at, increments: np.ndarray,
                  config: SolverConfig, diffusion: DiffusionSpec | None,
                  rhos=(1e-1, 1e-2, 1e-3), break_common_noise: bool = False,
                  rng_for_broken=None) -> GateauxReport:
    """Pathwise first-order expansion check of the control-to-state map.

    Integrates the base state under U and perturbed states under U + rho Psi
    with the SAME increments (unless break_common_noise is set, which is the
    negative control for the test suite), plus one tangent solve, and reports
    sup_t ||(Y_rho - Y)/rho - Z||_V per rho.
    """
    from . import forward as fw

    base = fw.integrate(_stack(y0, increments), u_dual_at, increments, config, diffusion)
    tangent = integrate_tangent(base, psi_dual_at, diffusion, config)
    space = config.space
    rem = []
    for rho in rhos:
        pert_dual = lambda k: u_dual_at(k) + rho * psi_dual_at(k)
        inc = increments
        if break_common_noise:
            rng = rng_for_broken or np.random.default_rng(0)
            inc = rng.standard_normal(increments.shape) * np.sqrt(config.dt)
        pert = fw.integrate(_stack(y0, increments), pert_dual, inc, config, diffusion)
        diff = (pert.states - base.states) / rho - tangent.states
        sup_v = np.sqrt(norm_sq_from_coeffs(space, diff, "V")).max(axis=-1)
        rem.append(float(np.mean(sup_v)))
    orders = tuple(
        float(np.log(rem[i] / rem[i + 1]) / np.log(rhos[i] / rhos[i + 1]))
        for i in range(len(rhos) - 1)
        if rem[i + 1] > 0
    )
    return GateauxReport(tuple(rhos), tuple(rem), orders, not break_common_noise)


def _stack(y0: np.ndarray, increments: np.ndarray | None) -> np.ndarray:
    y0 = np.asarray(y0, dtype=float)
    if increments is not None and increments.ndim == 3 and y0.ndim == 1:
        return np.broadcast_to(y0, (increments.shape[0], y0.shape[0])).copy()
    return y0
