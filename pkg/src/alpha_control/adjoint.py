"""Backward adjoint solve: costate pair (p, q) by a discrete backward recursion
whose drift matrices are the exact transposes of the tangent scheme.

With S = diag(1 + dt kappa) the tangent step reads

    z_{k+1} = S^{-1} [ (I + dt T_k + sum_m Gamma_k^m dW^m) z_k + dt psi_k ],

and the adjoint recursion below is its literal transpose,

    v_K  = terminal costate coordinates g_K = dh(Y_K)[h~_i],
    q_k  = E[ dW_k (x) S^{-1} v_{k+1} | F_k ] / dt       (per Wiener axis),
    p_k  = E[ S^{-1} v_{k+1} | F_k ],
    v_k  = p_k + dt ( T_k^T p_k + sum_m Gamma_k^{m T} q_k^m + l_k ),

with l_k the dual coefficients of grad_y L(t_k, U_k, Y_k).  Because every
matrix is transposed and the same conditional-expectation operator is used
throughout, the discrete duality identity

    E sum_k dt (grad_y L, Z_k) + E (sigma(Z_K), p(T)) = E sum_k dt (Psi_k, p_k)

holds exactly (to roundoff) whenever the conditional expectations are exact,
e.g. on the Rademacher scenario tree - at any step size, not merely O(dt).
T_k^T p_k expands to the transport pairings (curl sigma(Y) x p, h~_i) -
(curl sigma(Y x p), h~_i), and S^{-1} carries the backward viscous term, so
the recursion is simultaneously a consistent discretization of the continuous
backward costate system.

Conditional expectations: exact block averages on the scenario tree, or
least-squares regression on state features for Monte Carlo ensembles
(p_{k+1} and p_{k+1} dW regressed on [1, Y_k]).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .costs import terminal_condition  # re-exported: part of this module's surface
from .forward import SolverConfig, Trajectory
from .linearized import TangentTrajectory
from .noise import DiffusionSpec, ScenarioTree
from .spectral import norm_sq_from_coeffs

__all__ = [
    "AdjointSolution",
    "DualityReport",
    "IdentityConditional",
    "RegressionConditional",
    "RegressionError",
    "TreeConditional",
    "duality_gap",
    "solve_backward",
    "terminal_condition",
]


class RegressionError(RuntimeError):
    pass


class TreeConditional:
    """Exact conditional expectations on the Rademacher scenario tree."""

    name = "tree-exact"
    exact = True

    def __init__(self, tree: ScenarioTree):
        self.tree = tree

    def condition(self, values: np.ndarray, k: int, states_k: np.ndarray) -> np.ndarray:
        return self.tree.condition(values, k)


class RegressionConditional:
    """Least-squares Monte Carlo conditional expectations on state features.

    Features default to the raw state coefficients plus a constant; the ridge
    parameter regularizes the normal equations.  Condition numbers of the
    regularized normal matrices are recorded per time slice.
    """

    name = "regression"
    exact = False

    def __init__(self, ridge: float = 1e-10, feature_name: str = "raw-state+constant"):
        self.ridge = ridge
        self.feature_name = feature_name
        self.conditioning: dict[int, float] = {}

    def condition(self, values: np.ndarray, k: int, states_k: np.ndarray) -> np.ndarray:
        n_paths = values.shape[0]
        if k == 0:
            # deterministic initial state: trivial sigma-algebra
            mean = values.mean(axis=0)
            return np.broadcast_to(mean, values.shape).copy()
        phi = np.concatenate([np.ones((n_paths, 1)), states_k], axis=1)
        flat = values.reshape(n_paths, -1)
        gram = phi.T @ phi + self.ridge * np.eye(phi.shape[1])
        cond = float(np.linalg.cond(gram))
        self.conditioning[k] = max(self.conditioning.get(k, 0.0), cond)
        if not np.isfinite(cond) or cond > 1e16:
            raise RegressionError(
                f"normal matrix for features '{self.feature_name}' is singular at step {k} "
                f"(condition number {cond:.3g}); increase ridge or enrich features"
            )
        beta = np.linalg.solve(gram, phi.T @ flat)
        return (phi @ beta).reshape(values.shape)


class IdentityConditional:
    """Trivial backend for deterministic single-scenario problems."""

    name = "deterministic"
    exact = True

    def condition(self, values: np.ndarray, k: int, states_k: np.ndarray) -> np.ndarray:
        return values


@dataclass(frozen=True)
class AdjointSolution:
    """Costate p and martingale integrand q per scenario, V-coefficients.

    p has shape (P, K+1, n): p[:, k] is the time-t_k costate for k < K and
    p[:, K] the terminal costate g_K.  q has shape (P, K, m, n).
    """

    config: SolverConfig
    p: np.ndarray
    q: np.ndarray
    backend_name: str
    exact_conditioning: bool

    def costate(self, k: int, path: int = 0):
        from .spectral import SpectralField

        return SpectralField(self.config.space, self.p[path, k].copy())

    def weighted_estimate_series(self, base: Trajectory, c3: float = 1.0) -> dict:
        """Time series entering the backward a priori estimate, xi3-weighted."""
        cfg = self.config
        space = cfg.space
        p_sigma2 = np.einsum("pki,i->pk", self.p**2, space.sig)
        dp2 = norm_sq_from_coeffs(space, self.p, "Dsq")
        qw2 = norm_sq_from_coeffs(space, self.q, "W").sum(axis=-1)  # sum over Wiener axis
        wt = np.sqrt(norm_sq_from_coeffs(space, base.states, "Wtilde"))
        if wt.ndim == 1:
            wt = wt[None]
        # left-endpoint tail integral: tail[k] = dt sum_{l=k}^{K-1} ||Y_l||_Wt
        tail = np.concatenate(
            [np.cumsum(wt[:, -2::-1], axis=1)[:, ::-1] * cfg.dt,
             np.zeros((wt.shape[0], 1))], axis=1
        )
        xi3 = np.exp(-c3 * tail)
        return {
            "times": cfg.times,
            "xi3": xi3.mean(axis=0),
            "p_sigma_l2_sq": (xi3 * p_sigma2).mean(axis=0),
            "visc_dp_sq": 4.0 * cfg.nu * (xi3 * dp2).mean(axis=0),
            "q_w_sq": (xi3[:, :-1] * qw2).mean(axis=0),
        }


def backward_step(v_next: np.ndarray, y_k: np.ndarray, u_k: np.ndarray,
                  dw_k: np.ndarray | None, k: int, cost,
                  diffusion: DiffusionSpec | None, backend, config: SolverConfig,
                  ops=None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One backward recursion step: returns (p_k, q_k, v_k), scenario-stacked.

    v_next is the accumulated dual state at t_{k+1} (p_{k+1} plus its drift
    load); p_k and q_k are the reported adjoint pair at t_k.
    """
    ops = ops or config.pairing_ops()
    dt = config.dt
    n_paths = v_next.shape[0]
    m = diffusion.m if diffusion is not None else (
        dw_k.shape[-1] if dw_k is not None else 1
    )
    w = v_next / config.implicit_factor()
    if dw_k is not None and diffusion is not None:
        mart = dw_k[:, :, None] * w[:, None, :]
        q_k = backend.condition(mart, k, y_k) / dt
    else:
        q_k = np.zeros((n_paths, m, v_next.shape[-1]))
    p_k = backend.condition(w, k, y_k)
    drift = ops.tangent_drift_transposed(y_k, p_k)
    drift = drift + cost.grad_y_dual(k, np.asarray(u_k), y_k)
    if diffusion is not None:
        drift = drift + diffusion.eval_dg_adjoint(config.times[k], y_k, q_k)
    v_k = p_k + dt * drift
    return p_k, q_k, v_k


def solve_backward(base: Trajectory, u_v_at, cost, diffusion: DiffusionSpec | None,
                   backend, config: SolverConfig | None = None) -> AdjointSolution:
    """Backward sweep over a stored forward ensemble (see module docstring)."""
    cfg = config or base.config
    states = base.states if base.states.ndim == 3 else base.states[None]
    increments = base.increments
    if increments is not None and increments.ndim == 2:
        increments = increments[None]
    n_paths, k_plus_1, n = states.shape
    k_steps = cfg.n_steps
    if k_plus_1 != k_steps + 1:
        raise ValueError("trajectory grid does not match solver config")
    m = diffusion.m if diffusion is not None else (
        increments.shape[-1] if increments is not None else 1
    )
    ops = cfg.pairing_ops()

    p_out = np.empty((n_paths, k_steps + 1, n))
    q_out = np.zeros((n_paths, k_steps, m, n))

    g_terminal = np.broadcast_to(
        cost.terminal_costate_coords(states[:, k_steps]), (n_paths, n)
    )
    p_out[:, k_steps] = g_terminal
    v_next = g_terminal.copy()

    for k in range(k_steps - 1, -1, -1):
        dw_k = increments[:, k, :] if increments is not None else None
        p_k, q_k, v_next = backward_step(v_next, states[:, k], u_v_at(k), dw_k, k,
                                         cost, diffusion, backend, cfg, ops)
        p_out[:, k] = p_k
        q_out[:, k] = q_k

    return AdjointSolution(cfg, p_out, q_out, backend.name, backend.exact)


@dataclass(frozen=True)
class DualityReport:
    lhs_running: float
    lhs_terminal: float
    rhs: float
    gap: float
    rel_gap: float
    se_lhs: float
    se_rhs: float
    exact_conditioning: bool

    @property
    def lhs(self) -> float:
        return self.lhs_running + self.lhs_terminal

    @property
    def se_combined(self) -> float:
        return float(np.hypot(self.se_lhs, self.se_rhs))


def duality_gap(tangent: TangentTrajectory, adj: AdjointSolution, psi_dual_at,
                cost, u_v_at) -> DualityReport:
    """Both sides of the discrete duality identity over the common scenarios.

    Left: E sum_k dt (grad_y L(t_k), Z_k) + E (sigma(Z_K), p(T));
    right: E sum_k dt (Psi_k, p_k); both with left-endpoint quadrature.
    """
    cfg = adj.config
    z = tangent.states if tangent.states.ndim == 3 else tangent.states[None]
    base_states = tangent.base.states if tangent.base.states.ndim == 3 else tangent.base.states[None]
    n_paths = z.shape[0]
    if adj.p.shape[0] != n_paths:
        raise ValueError("tangent and adjoint ensembles have different scenario counts")
    k_steps = cfg.n_steps
    dt = cfg.dt
    lhs_run = np.zeros(n_paths)
    rhs = np.zeros(n_paths)
    for k in range(k_steps):
        ell = cost.grad_y_dual(k, np.asarray(u_v_at(k)), base_states[:, k])
        ell = np.broadcast_to(ell, z[:, k].shape)
        lhs_run += dt * np.einsum("pi,pi->p", ell, z[:, k])
        psi = np.broadcast_to(np.asarray(psi_dual_at(k)), adj.p[:, k].shape)
        rhs += dt * np.einsum("pi,pi->p", psi, adj.p[:, k])
    lhs_term = np.einsum("pi,pi->p", adj.p[:, k_steps], z[:, k_steps])

    def mean_se(x):
        mean = float(np.mean(x))
        se = float(np.std(x, ddof=1) / np.sqrt(len(x))) if len(x) > 1 else 0.0
        return mean, se

    lhs_total, se_lhs = mean_se(lhs_run + lhs_term)
    rhs_mean, se_rhs = mean_se(rhs)
    gap = abs(lhs_total - rhs_mean)
    scale = max(abs(lhs_total), abs(rhs_mean), 1e-300)
    return DualityReport(
        float(np.mean(lhs_run)), float(np.mean(lhs_term)), rhs_mean, gap, gap / scale,
        0.0 if adj.exact_conditioning else se_lhs,
        0.0 if adj.exact_conditioning else se_rhs,
        adj.exact_conditioning,
    )
