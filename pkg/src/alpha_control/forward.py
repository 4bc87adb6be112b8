"""Time integration of the Galerkin state system and ensemble statistics.

In V-orthonormal coordinates the state system is the Ito SDE

    dc_i = [ -kappa_i c_i - (curl sigma(Y) x Y, h~_i) + (U, h~_i) ] dt
           + sum_k (g^k(t, Y), h~_i) dW^k,        kappa_i = nu lam_i / (1 + alpha lam_i),

and the default scheme treats the diagonal viscous part implicitly and the
transport and noise terms explicitly (semi-implicit Euler-Maruyama, weak and
strong order one).  A fixed-point implicit-midpoint drift variant is provided
for the inviscid conservation diagnostics: transport is exactly energy
neutral at the midpoint state, so V-energy is conserved to solver tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nonlinear import PairingOps, get_pairing_ops, min_trilinear_resolution
from .noise import DiffusionSpec, ScenarioTree
from .spectral import SpectralField, SpectralSpace, norm_sq_from_coeffs

STABILITY_BUDGET = 50.0


class IntegrationAbort(RuntimeError):
    def __init__(self, step: int, message: str = ""):
        self.step = step
        super().__init__(message or f"non-finite state at step {step}")


@dataclass(frozen=True)
class SolverConfig:
    """Discretization parameters shared by state, tangent and adjoint solves."""

    space: SpectralSpace
    nu: float
    t_final: float
    n_steps: int
    q_res: int | None = None
    scheme: str = "semi_implicit"
    midpoint_sweeps: int = 40
    midpoint_tol: float = 1e-13

    def __post_init__(self):
        if self.nu < 0:
            raise ValueError("viscosity nu must be >= 0")
        if self.t_final <= 0 or self.n_steps < 1:
            raise ValueError("need T > 0 and K >= 1")
        if self.scheme not in ("semi_implicit", "midpoint"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        q = self.q_res if self.q_res is not None else min_trilinear_resolution(self.space.n_band)
        if q < min_trilinear_resolution(self.space.n_band):
            raise ValueError("q_res below the trilinear requirement 3N+1")
        object.__setattr__(self, "q_res", q)
        budget = self.dt * float(np.max(self.kappa))
        if budget > STABILITY_BUDGET:
            raise ValueError(
                f"dt * max(nu lam/(1+alpha lam)) = {budget:.3g} exceeds stability budget "
                f"{STABILITY_BUDGET}"
            )

    @property
    def dt(self) -> float:
        return self.t_final / self.n_steps

    @property
    def kappa(self) -> np.ndarray:
        sp = self.space
        return self.nu * sp.lam / sp.sig

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.t_final, self.n_steps + 1)

    def pairing_ops(self) -> PairingOps:
        return get_pairing_ops(self.space, self.q_res)

    def implicit_factor(self) -> np.ndarray:
        return 1.0 + self.dt * self.kappa


@dataclass(frozen=True)
class Trajectory:
    """Discrete state path: states[k] are V-coefficients at times[k]."""

    config: SolverConfig
    states: np.ndarray  # (K+1, n) or (P, K+1, n)
    increments: np.ndarray | None = None
    control_ref: str = ""
    abort_steps: np.ndarray | None = None  # per-path first bad step, -1 if clean

    @property
    def times(self) -> np.ndarray:
        return self.config.times

    def state_field(self, k: int, path: int | None = None) -> SpectralField:
        s = self.states if self.states.ndim == 2 else self.states[path if path is not None else 0]
        return SpectralField(self.config.space, s[k].copy())

    def norm_series(self, kind: str, path: int | None = None) -> np.ndarray:
        s = self.states if self.states.ndim == 2 else self.states[path if path is not None else 0]
        return np.sqrt(norm_sq_from_coeffs(self.config.space, s, kind))


def _drift_dual(ops: PairingOps, y: np.ndarray, u_dual: np.ndarray) -> np.ndarray:
    return -ops.state_nonlinearity(y) + u_dual


def step(y: np.ndarray, u_dual: np.ndarray, dw: np.ndarray, config: SolverConfig,
         diffusion: DiffusionSpec | None, t: float, ops: PairingOps | None = None) -> np.ndarray:
    """One scheme step; y (...,n), u_dual (...,n), dw (...,m)."""
    ops = ops or config.pairing_ops()
    dt = config.dt
    noise = 0.0
    if diffusion is not None:
        g = diffusion.eval_g(t, y) / config.space.sig  # dual coords (..., m, n)
        noise = np.einsum("...mi,...m->...i", g, dw)
    if config.scheme == "semi_implicit":
        expl = _drift_dual(ops, y, u_dual)
        return (y + dt * expl + noise) / config.implicit_factor()
    # implicit midpoint drift (noise still Euler-Maruyama)
    kappa = config.kappa
    y_next = y.copy()
    for _ in range(config.midpoint_sweeps):
        mid = 0.5 * (y + y_next)
        cand = y + dt * (-kappa * mid + _drift_dual(ops, mid, u_dual)) + noise
        delta = float(np.max(np.abs(cand - y_next)))
        y_next = cand
        if delta < config.midpoint_tol:
            break
    return y_next


def integrate(y0: np.ndarray, u_dual_at, increments: np.ndarray | None,
              config: SolverConfig, diffusion: DiffusionSpec | None = None,
              control_ref: str = "") -> Trajectory:
    """Integrate one path or a stacked ensemble.

    y0: (n,) or (P, n); increments: (K, m) or (P, K, m) or None (deterministic);
    u_dual_at(k) must return dual-coefficient forcing broadcastable to y0.
    """
    y0 = np.asarray(y0, dtype=float)
    batched = y0.ndim == 2
    ops = config.pairing_ops()
    k_steps = config.n_steps
    states = np.empty(y0.shape[:-1] + (k_steps + 1, config.space.n_modes))
    states[..., 0, :] = y0
    y = y0.copy()
    times = config.times
    aborts = np.full(y0.shape[0], -1, dtype=int) if batched else None
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(k_steps):
            dw = None if increments is None else increments[..., k, :]
            if increments is None:
                dw = np.zeros(y0.shape[:-1] + (diffusion.m if diffusion else 1,))
            y = step(y, u_dual_at(k), dw, config, diffusion, times[k], ops)
            if not np.all(np.isfinite(y)):
                if batched:
                    bad = ~np.all(np.isfinite(y), axis=-1)
                    aborts[bad & (aborts < 0)] = k
                    y[bad] = np.nan
                else:
                    raise IntegrationAbort(k)
            states[..., k + 1, :] = y
    return Trajectory(config, states, increments, control_ref, aborts)


@dataclass(frozen=True)
class EnsembleStats:
    n_paths: int
    n_aborted: int
    e_sup_v2: float
    se_sup_v2: float
    e_sup_curl_sigma2: float
    se_sup_curl_sigma2: float
    e_sup_v4: float
    se_sup_v4: float
    abort_steps: tuple = ()

    def as_rows(self):
        return [
            ("E_sup_V2", self.e_sup_v2, self.se_sup_v2),
            ("E_sup_curl_sigma2", self.e_sup_curl_sigma2, self.se_sup_curl_sigma2),
            ("E_sup_V4", self.e_sup_v4, self.se_sup_v4),
        ]


def ensemble_stats(traj: Trajectory) -> EnsembleStats:
    states = traj.states if traj.states.ndim == 3 else traj.states[None]
    space = traj.config.space
    if traj.abort_steps is not None:
        finite = traj.abort_steps < 0
        abort_steps = tuple(int(s) for s in traj.abort_steps[~finite])
    else:
        with np.errstate(over="ignore", invalid="ignore"):
            finite = np.all(np.isfinite(states), axis=(1, 2))
        abort_steps = tuple(0 for _ in range(int(np.sum(~finite))))
    aborted = int(np.sum(~finite))
    with np.errstate(over="ignore"):
        v2 = norm_sq_from_coeffs(space, states[finite], "V")  # (P', K+1)
        cs2 = norm_sq_from_coeffs(space, states[finite], "curl_sigma")
    if v2.shape[0] == 0:
        raise IntegrationAbort(0, "all ensemble paths aborted")
    sup_v2 = v2.max(axis=1)
    sup_cs2 = cs2.max(axis=1)
    sup_v4 = (v2**2).max(axis=1)

    def mean_se(x):
        n = x.shape[0]
        se = float(np.std(x, ddof=1) / np.sqrt(n)) if n > 1 else 0.0
        return float(np.mean(x)), se

    m1, s1 = mean_se(sup_v2)
    m2, s2 = mean_se(sup_cs2)
    m3, s3 = mean_se(sup_v4)
    return EnsembleStats(states.shape[0], aborted, m1, s1, m2, s2, m3, s3, abort_steps)


def run_ensemble(y0: np.ndarray, u_dual_at, increments: np.ndarray,
                 config: SolverConfig, diffusion: DiffusionSpec | None = None) -> tuple[Trajectory, EnsembleStats]:
    p = increments.shape[0]
    y0b = np.broadcast_to(np.asarray(y0, dtype=float), (p, config.space.n_modes)).copy()
    traj = integrate(y0b, u_dual_at, increments, config, diffusion)
    return traj, ensemble_stats(traj)


def tree_increments(config: SolverConfig, m: int) -> tuple[ScenarioTree, np.ndarray]:
    tree = ScenarioTree(config.n_steps, config.dt, m)
    return tree, tree.all_increments()


# ---------------------------------------------------------------------------
# diagnostics


def energy_identity_residuals(traj: Trajectory) -> np.ndarray:
    """Per-step residual ||Y_{k+1}||_V^2 - ||Y_k||_V^2 + 4 nu dt ||D Y_{k+1}||_2^2.

    With zero control and zero noise this is the discrete dissipation defect;
    transport neutrality and implicit viscosity keep it at O(dt^2) per step.
    """
    cfg = traj.config
    states = traj.states
    v2 = norm_sq_from_coeffs(cfg.space, states, "V")
    d2 = norm_sq_from_coeffs(cfg.space, states, "Dsq")
    return v2[..., 1:] - v2[..., :-1] + 4.0 * cfg.nu * cfg.dt * d2[..., 1:]


def xi_weight(series: np.ndarray, dt: float, rate: float) -> np.ndarray:
    """Discrete exponential weight exp(-rate * left-endpoint integral of series)."""
    series = np.asarray(series)
    integ = np.concatenate(
        [np.zeros(series.shape[:-1] + (1,)), np.cumsum(series[..., :-1], axis=-1) * dt], axis=-1
    )
    return np.exp(-rate * integ)


@dataclass(frozen=True)
class StabilityReport:
    weighted_sup_w2: float
    weighted_control_l2: float
    ratio: float
    c0: float


def stability_experiment(u1_dual_at, u2_dual_at, y0: np.ndarray, increments: np.ndarray,
                         config: SolverConfig, diffusion: DiffusionSpec | None,
                         c0: float = 1.0) -> StabilityReport:
    """Common-noise two-control comparison with the exponential H3 weight."""
    t1 = integrate(_stack_y0(y0, increments), u1_dual_at, increments, config, diffusion)
    t2 = integrate(_stack_y0(y0, increments), u2_dual_at, increments, config, diffusion)
    space = config.space
    h3_1 = np.sqrt(norm_sq_from_coeffs(space, t1.states, "H3"))
    h3_2 = np.sqrt(norm_sq_from_coeffs(space, t2.states, "H3"))
    xi = xi_weight(h3_1 + h3_2 + 1.0, config.dt, c0)
    dw2 = norm_sq_from_coeffs(space, t1.states - t2.states, "W")
    weighted_sup = float(np.mean((xi * dw2).max(axis=-1)))
    du = np.stack(
        [np.asarray(u1_dual_at(k)) - np.asarray(u2_dual_at(k)) for k in range(config.n_steps)],
        axis=-2,
    )
    # controls enter as dual coefficients; L2 norm of the forcing field
    du_l2 = np.einsum("...ki,i,...ki->...k", du, space.sig, du)
    contrib = (xi[..., :-1] * du_l2).sum(axis=-1) * config.dt
    weighted_int = float(np.mean(contrib))
    ratio = weighted_sup / weighted_int if weighted_int > 0 else float("inf") if weighted_sup > 0 else 0.0
    return StabilityReport(weighted_sup, weighted_int, ratio, c0)


def _stack_y0(y0: np.ndarray, increments: np.ndarray | None) -> np.ndarray:
    y0 = np.asarray(y0, dtype=float)
    if increments is not None and increments.ndim == 3 and y0.ndim == 1:
        return np.broadcast_to(y0, (increments.shape[0], y0.shape[0])).copy()
    return y0
