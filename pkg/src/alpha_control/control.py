"""Admissible controls, cost evaluation, adjoint gradients, projected descent
and the exponential-integrability condition diagnostics.

A control is a time-indexed band field process, either deterministic
open-loop (one field per step) or tree-adapted (one field per scenario-tree
node).  Admissibility is the pathwise energy ball dt sum_k ||U_k||_V^2 <= M,
enforced by radial retraction.

The adjoint gradient is the field process g_k = E[grad_u L(t_k) + p_k | class
of the control]; with the quadratic cost family this makes the directional
derivative of the sample-average cost equal dt sum_k (g_k, Psi_k)_L2 exactly,
which is what the finite-difference and tangent-route cross checks assert.
The optimizer is projected gradient descent with Armijo backtracking along
the projection arc on a frozen seed set, so descent assertions are exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import adjoint as aj
from . import forward as fw
from .costs import QuadraticCost
from .noise import DiffusionSpec, ScenarioTree
from .spectral import SpectralSpace, norm_sq_from_coeffs


class AdmissibilityError(ValueError):
    pass


@dataclass(frozen=True)
class ControlProcess:
    """Control U as V-coefficients: open-loop (K, n) or tree-adapted per level."""

    space: SpectralSpace
    n_steps: int
    dt: float
    values: np.ndarray | tuple  # (K, n) or tuple of (B^k, n) arrays
    bound_m: float | None = None
    branching: int = 1

    @property
    def tree_adapted(self) -> bool:
        return isinstance(self.values, tuple)

    @staticmethod
    def open_loop(space, n_steps, dt, values, bound_m=None) -> "ControlProcess":
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = np.broadcast_to(values, (n_steps, values.shape[0])).copy()
        if values.shape != (n_steps, space.n_modes):
            raise ValueError(f"open-loop control must have shape (K, n), got {values.shape}")
        return ControlProcess(space, n_steps, dt, values, bound_m)

    @staticmethod
    def zero(space, n_steps, dt, bound_m=None) -> "ControlProcess":
        return ControlProcess.open_loop(
            space, n_steps, dt, np.zeros((n_steps, space.n_modes)), bound_m
        )

    @staticmethod
    def tree(space, tree: ScenarioTree, values, bound_m=None) -> "ControlProcess":
        vals = tuple(np.asarray(v, dtype=float) for v in values)
        for k, v in enumerate(vals):
            if v.shape != (tree.branching**k, space.n_modes):
                raise ValueError(f"tree control level {k} must have shape (B^k, n)")
        return ControlProcess(space, tree.t_steps, tree.dt, vals, bound_m, tree.branching)

    # -- per-step access ------------------------------------------------------

    def v_at(self, k: int) -> np.ndarray:
        """V-coefficients at step k, expanded to leaves for tree controls."""
        if not self.tree_adapted:
            return self.values[k]
        level = self.values[k]
        block = self.branching ** (self.n_steps - k)
        return np.repeat(level, block, axis=0)

    def dual_at(self, k: int) -> np.ndarray:
        return self.v_at(k) / self.space.sig

    # -- algebra (same parametrization) ---------------------------------------

    def _map(self, fn) -> "ControlProcess":
        if self.tree_adapted:
            vals = tuple(fn(v) for v in self.values)
        else:
            vals = fn(self.values)
        return ControlProcess(self.space, self.n_steps, self.dt, vals, self.bound_m,
                              self.branching)

    def scale(self, a: float) -> "ControlProcess":
        return self._map(lambda v: a * v)

    def axpy(self, a: float, other: "ControlProcess") -> "ControlProcess":
        """self + a * other, matching parametrizations."""
        if self.tree_adapted != other.tree_adapted:
            raise ValueError("control parametrizations differ")
        if self.tree_adapted:
            vals = tuple(v + a * w for v, w in zip(self.values, other.values))
            return ControlProcess(self.space, self.n_steps, self.dt, vals, self.bound_m,
                                  self.branching)
        return ControlProcess(self.space, self.n_steps, self.dt,
                              self.values + a * other.values, self.bound_m, self.branching)

    # -- norms and admissibility ----------------------------------------------

    def path_v2_integral(self) -> np.ndarray:
        """dt sum_k ||U_k||_V^2 per scenario (scalar array for open loop)."""
        if not self.tree_adapted:
            return np.asarray(self.dt * float(np.sum(self.values**2)))
        total = None
        for k in range(self.n_steps):
            leaf = self.v_at(k)
            v2 = np.sum(leaf**2, axis=1)
            total = v2 if total is None else total + v2
        return self.dt * total

    def max_path_v2(self) -> float:
        return float(np.max(self.path_v2_integral()))

    def l2_pairing(self, other: "ControlProcess") -> float:
        """dt sum_k (U_k, W_k)_L2 of the field processes (scenario mean)."""
        acc = 0.0
        for k in range(self.n_steps):
            a = self.v_at(k)
            b = other.v_at(k)
            vals = np.einsum("...i,i->...", a * b, 1.0 / self.space.sig)
            acc += float(np.mean(vals))
        return self.dt * acc

    def l2_norm(self) -> float:
        return math.sqrt(max(self.l2_pairing(self), 0.0))

    def admissible(self, rtol: float = 1e-9) -> bool:
        if self.bound_m is None:
            return True
        return self.max_path_v2() <= self.bound_m * (1.0 + rtol)

    def check_admissible(self):
        if not self.admissible():
            raise AdmissibilityError(
                f"control violates the V-energy ball: max path integral "
                f"{self.max_path_v2():.6g} > M = {self.bound_m:.6g}"
            )


def project_admissible(u: ControlProcess) -> ControlProcess:
    """Radial retraction onto the pathwise V-energy ball of radius sqrt(M).

    Open-loop controls are scaled by min(1, sqrt(M / integral)); tree controls
    by the worst-path factor, a single scalar, which preserves adaptedness.
    Idempotent and (in the open-loop Hilbert geometry) nonexpansive.
    """
    if u.bound_m is None:
        return u
    worst = u.max_path_v2()
    if worst <= u.bound_m:
        return u
    return u.scale(math.sqrt(u.bound_m / worst))


# ---------------------------------------------------------------------------
# sample-average cost and gradient


@dataclass(frozen=True)
class ScenarioSet:
    """Frozen driving noise: either a Gaussian increment block or the full tree."""

    increments: np.ndarray | None      # (P, K, m) or None for deterministic
    tree: ScenarioTree | None = None

    @property
    def n_scenarios(self) -> int:
        return 1 if self.increments is None else self.increments.shape[0]

    def backend(self, ridge: float = 1e-10):
        if self.tree is not None:
            return aj.TreeConditional(self.tree)
        if self.increments is None:
            return aj.IdentityConditional()
        return aj.RegressionConditional(ridge)

    @property
    def exact(self) -> bool:
        return self.increments is None or self.tree is not None


def make_tree_scenarios(cfg: fw.SolverConfig, m: int) -> ScenarioSet:
    tree, inc = fw.tree_increments(cfg, m)
    return ScenarioSet(inc, tree)


def make_mc_scenarios(cfg: fw.SolverConfig, m: int, n_paths: int, seed: int) -> ScenarioSet:
    from .noise import sample_ensemble

    return ScenarioSet(sample_ensemble(seed, n_paths, cfg.n_steps, cfg.dt, m))


def _forward(u: ControlProcess, y0, cfg, diffusion, scen: ScenarioSet) -> fw.Trajectory:
    if scen.increments is None:
        return fw.integrate(np.asarray(y0, dtype=float), u.dual_at, None, cfg, diffusion)
    y0b = np.broadcast_to(np.asarray(y0, dtype=float),
                          (scen.n_scenarios, cfg.space.n_modes)).copy()
    return fw.integrate(y0b, u.dual_at, scen.increments, cfg, diffusion)


def evaluate_cost(u: ControlProcess, y0, cost: QuadraticCost, cfg: fw.SolverConfig,
                  diffusion: DiffusionSpec | None, scen: ScenarioSet,
                  traj: fw.Trajectory | None = None) -> tuple[float, float]:
    """Sample-average cost and its Monte Carlo standard error (0 when exact)."""
    u.check_admissible()
    traj = traj or _forward(u, y0, cfg, diffusion, scen)
    states = traj.states if traj.states.ndim == 3 else traj.states[None]
    per_path = np.zeros(states.shape[0])
    for k in range(cfg.n_steps):
        lk = cost.running(k, u.v_at(k), states[:, k])
        per_path += cfg.dt * np.broadcast_to(lk, per_path.shape)
    per_path = per_path + cost.terminal(states[:, cfg.n_steps])
    j_val = float(np.mean(per_path))
    se = 0.0
    if not scen.exact and len(per_path) > 1:
        se = float(np.std(per_path, ddof=1) / np.sqrt(len(per_path)))
    return j_val, se


def gradient_adjoint(u: ControlProcess, y0, cost: QuadraticCost, cfg: fw.SolverConfig,
                     diffusion: DiffusionSpec | None, scen: ScenarioSet,
                     ridge: float = 1e-10) -> tuple[ControlProcess, aj.AdjointSolution]:
    """Adjoint-route cost gradient, shaped and adapted like the control."""
    traj = _forward(u, y0, cfg, diffusion, scen)
    sol = aj.solve_backward(traj, u.v_at, cost, diffusion, scen.backend(ridge), cfg)
    states = traj.states if traj.states.ndim == 3 else traj.states[None]
    if not u.tree_adapted:
        grads = np.empty((cfg.n_steps, cfg.space.n_modes))
        for k in range(cfg.n_steps):
            gu = cost.grad_u_vcoords(k, u.v_at(k), states[:, k])
            total = np.broadcast_to(gu, sol.p[:, k].shape) + sol.p[:, k]
            grads[k] = total.mean(axis=0)
        g = ControlProcess.open_loop(cfg.space, cfg.n_steps, cfg.dt, grads, u.bound_m)
        return g, sol
    tree = scen.tree
    if tree is None:
        raise ValueError("tree-adapted controls require tree scenarios")
    levels = []
    for k in range(cfg.n_steps):
        gu = cost.grad_u_vcoords(k, u.v_at(k), states[:, k])
        total = np.broadcast_to(gu, sol.p[:, k].shape) + sol.p[:, k]
        block = tree.branching ** (tree.t_steps - k)
        node_means = total.reshape(-1, block, total.shape[-1]).mean(axis=1)
        levels.append(node_means)
    g = ControlProcess.tree(cfg.space, tree, levels, u.bound_m)
    return g, sol


# ---------------------------------------------------------------------------
# projected gradient descent


@dataclass
class DescentRecord:
    iteration: int
    cost: float
    grad_norm: float
    step: float
    constraint_active: bool


@dataclass
class OptimizeResult:
    control: ControlProcess
    history: list
    converged: bool
    warning: str = ""

    @property
    def final_cost(self) -> float:
        return self.history[-1].cost if self.history else float("nan")


def optimize(u0: ControlProcess, y0, cost: QuadraticCost, cfg: fw.SolverConfig,
             diffusion: DiffusionSpec | None, scen: ScenarioSet,
             iters: int = 100, armijo_c1: float = 0.25, eta0: float = 1.0,
             max_backtracks: int = 40, grad_tol: float = 1e-10,
             step_tol: float = 1e-13) -> OptimizeResult:
    """Projected gradient descent with Armijo backtracking on frozen scenarios."""
    u0.check_admissible()
    u = project_admissible(u0)
    j_cur, _ = evaluate_cost(u, y0, cost, cfg, diffusion, scen)
    history: list[DescentRecord] = []
    eta = eta0
    warning = ""
    converged = False
    small_steps = 0
    for it in range(iters):
        g, _ = gradient_adjoint(u, y0, cost, cfg, diffusion, scen)
        gnorm = g.l2_norm()
        if gnorm <= grad_tol:
            history.append(DescentRecord(it, j_cur, gnorm, 0.0, _active(u)))
            converged = True
            break
        accepted = False
        first_try = True
        for _ in range(max_backtracks):
            trial = project_admissible(u.axpy(-eta, g))
            j_trial, _ = evaluate_cost(trial, y0, cost, cfg, diffusion, scen)
            decrease_ref = trial.axpy(-1.0, u)
            ref = decrease_ref.l2_pairing(decrease_ref)
            if j_trial <= j_cur - (armijo_c1 / eta) * ref:
                accepted = True
                break
            eta *= 0.5
            first_try = False
        if not accepted:
            warning = f"Armijo backtracking exhausted at iteration {it}"
            history.append(DescentRecord(it, j_cur, gnorm, 0.0, _active(u)))
            break
        step_size = decrease_ref.l2_norm()
        history.append(DescentRecord(it, j_trial, gnorm, eta, _active(trial)))
        u = trial
        j_cur = j_trial
        if first_try:
            eta = min(eta * 2.0, 1e8)
        if step_size <= step_tol * (1.0 + u.l2_norm()):
            small_steps += 1
            if small_steps >= 3:
                converged = True
                break
        else:
            small_steps = 0
    return OptimizeResult(u, history, converged, warning)


def _active(u: ControlProcess, rtol: float = 1e-8) -> bool:
    if u.bound_m is None:
        return False
    return u.max_path_v2() >= u.bound_m * (1.0 - rtol)


def optimality_residual(u: ControlProcess, g: ControlProcess,
                        directions) -> tuple[float, int]:
    """min over admissible directions Psi of dt sum_k (g, Psi - U)_L2.

    At a constrained optimum the minimum is >= -tol (variational inequality);
    returns the value and the index of the most violating direction.
    """
    best = float("inf")
    best_idx = -1
    for idx, psi in enumerate(directions):
        val = g.l2_pairing(psi.axpy(-1.0, u))
        if val < best:
            best = val
            best_idx = idx
    return best, best_idx


def random_admissible_directions(space, n_steps, dt, bound_m, n_dirs, rng,
                                 scale: float = 1.0):
    out = []
    for _ in range(n_dirs):
        vals = rng.standard_normal((n_steps, space.n_modes)) * scale
        cand = ControlProcess.open_loop(space, n_steps, dt, vals, bound_m)
        out.append(project_admissible(cand))
    return out


# ---------------------------------------------------------------------------
# condition diagnostics


@dataclass(frozen=True)
class ConditionReport:
    """Constants and verdicts of the exponential-integrability conditions."""

    nu: float
    alpha: float
    t_final: float
    epsilon: float
    noise_bound: float
    c_star: float
    k_star: float
    c_starstar: float
    c_max: float
    tau: float = field(init=False)
    gamma1: float = field(init=False)
    gamma1_bar: float = field(init=False)
    gamma2: float = field(init=False)
    theta1: float = field(init=False)
    theta2: float = field(init=False)
    bound_a: float = field(init=False)
    bound_b: float = field(init=False)

    def __post_init__(self):
        tau = self.t_final * math.exp(self.epsilon * self.t_final)
        gamma1 = self.c_star * self.nu * tau / self.alpha
        gamma1_bar = self.k_star * tau / (4.0 * self.alpha)
        gamma2 = self.c_starstar * self.nu / self.alpha
        theta1 = 4.0 * self.noise_bound * tau**2 * (1.0 + gamma1**2)
        theta2 = 2.0 * self.noise_bound * math.exp(self.epsilon * self.t_final) * (
            1.0 + 2.0 * gamma1_bar**2
        )
        bound_a = (1.0 / (2.0 * theta1)) if theta1 > 0 else float("inf")
        bound_b = (gamma2**2 / (2.0 * theta2)) if theta2 > 0 else float("inf")
        for name, val in (
            ("tau", tau), ("gamma1", gamma1), ("gamma1_bar", gamma1_bar),
            ("gamma2", gamma2), ("theta1", theta1), ("theta2", theta2),
            ("bound_a", bound_a), ("bound_b", bound_b),
        ):
            object.__setattr__(self, name, val)

    @property
    def condition1_holds(self) -> bool:
        return self.bound_a >= self.c_max

    @property
    def condition2_holds(self) -> bool:
        # the unit square is non axisymmetric, so only the bound matters
        return self.bound_b >= self.c_max

    def regime_notes(self) -> list:
        notes = []
        if self.condition1_holds:
            notes.append("condition 1 holds: motion controllable at any viscosity")
        if self.condition2_holds:
            notes.append("condition 2 holds: viscous regime controllable under any noise intensity")
        if not (self.condition1_holds or self.condition2_holds):
            notes.append("neither condition holds: shrink the noise bound L, the horizon T, "
                         "or increase viscosity")
        return notes

    def as_items(self) -> list:
        return [
            ("nu", self.nu), ("alpha", self.alpha), ("T", self.t_final),
            ("epsilon", self.epsilon), ("L", self.noise_bound),
            ("C_star", self.c_star), ("K_star", self.k_star),
            ("C_starstar", self.c_starstar), ("C_max", self.c_max),
            ("tau", self.tau), ("gamma1", self.gamma1),
            ("gamma1_bar", self.gamma1_bar), ("gamma2", self.gamma2),
            ("theta1", self.theta1), ("theta2", self.theta2),
            ("A", self.bound_a), ("B", self.bound_b),
            ("condition1_holds", self.condition1_holds),
            ("condition2_holds", self.condition2_holds),
        ]


def band_constants(space: SpectralSpace) -> tuple[float, float, float]:
    """Empirical (C_*, K_*, C_**) over the band: Korn-type ratios and the
    lower norm-equivalence constant, all diagonal in the mode basis."""
    h1 = space.norm_weights("H1")
    v = space.norm_weights("V")
    d2 = space.norm_weights("Dsq")
    ss = space.norm_weights("starstar")
    wt = space.norm_weights("Wtilde")
    c_star = float(np.max(h1 / v))
    k_star = float(np.max(h1 / d2))
    c_starstar = float(np.min(ss / wt))
    return c_star, k_star, c_starstar


def condition_diagnostics(nu: float, alpha: float, t_final: float, epsilon: float,
                          noise_bound: float, space: SpectralSpace,
                          c_max: float = 1.0) -> ConditionReport:
    c_star, k_star, c_starstar = band_constants(space)
    return ConditionReport(nu, alpha, t_final, epsilon, noise_bound,
                           c_star, k_star, c_starstar, c_max)


def exponential_integrability_monitor(traj: fw.Trajectory, c_max: float) -> dict:
    """Ensemble estimate of E exp(c_max int ||Y||_Wt^2 dt) and its stability
    under halving the ensemble (ratio near 1 indicates a stable estimate)."""
    cfg = traj.config
    states = traj.states if traj.states.ndim == 3 else traj.states[None]
    wt2 = norm_sq_from_coeffs(cfg.space, states, "Wtilde")
    integral = wt2[:, :-1].sum(axis=1) * cfg.dt
    vals = np.exp(c_max * integral)
    full = float(np.mean(vals))
    half = float(np.mean(vals[: max(1, len(vals) // 2)]))
    return {
        "estimate": full,
        "half_ensemble": half,
        "stability_ratio": half / full if full > 0 else float("nan"),
        "n_paths": len(vals),
    }
