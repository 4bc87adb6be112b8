"""Invariant suites behind the `verify` command.

Each suite returns rows (name, value, threshold, passed).  The identities and
conditions suites run on the configured band; the gradient, duality, forward
and optimizer suites run pinned desk-scale geometries (band, step counts and
path counts fixed below) with the physics, noise intensity and seed taken
from the scenario, so their thresholds are meaningful independently of how
large a scenario the config describes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import adjoint as aj
from . import control as ct
from . import costs as cs
from . import forward as fw
from . import linearized as ln
from . import nonlinear as nl
from . import noise as nz
from . import spectral as sp
from .config import Scenario


@dataclass(frozen=True)
class CheckRow:
    suite: str
    name: str
    value: float | None
    threshold: float | None
    passed: bool
    note: str = ""

    def as_csv_row(self):
        return (self.suite, self.name,
                "" if self.value is None else self.value,
                "" if self.threshold is None else self.threshold,
                self.passed, self.note)


def _row(suite, name, value, threshold, larger_is_better=False, note=""):
    if larger_is_better:
        passed = value >= threshold
    else:
        passed = value <= threshold
    return CheckRow(suite, name, float(value), float(threshold), bool(passed), note)


# ---------------------------------------------------------------------------
# identities


def suite_identities(sc: Scenario) -> list:
    space = sc.space
    q = sc.q_res
    rng = np.random.default_rng(sc.seed + 1)
    ops = nl.get_pairing_ops(space, q)
    rows = []

    antisym = 0.0
    diag = 0.0
    neutral = 0.0
    for _ in range(50):
        u = sp.random_field(space, rng)
        v = sp.random_field(space, rng)
        w = sp.random_field(space, rng)
        antisym = max(antisym, abs(nl.trilinear_b(u, v, w, q) + nl.trilinear_b(u, w, v, q)))
        diag = max(diag, abs(nl.trilinear_b(u, v, v, q)))
        pairing = float(np.dot(ops.state_nonlinearity(u.coeffs), u.coeffs))
        neutral = max(neutral, abs(pairing) / max(u.norm("V") * u.norm("Wtilde"), 1e-300))
    rows.append(_row("identities", "b_antisymmetry_max", max(antisym, diag), 1e-10))
    rows.append(_row("identities", "energy_neutrality_scaled", neutral, 1e-10))

    gap_adj = 0.0
    for _ in range(6):
        y = sp.random_field(space, rng)
        p = sp.random_field(space, rng)
        gap_adj = max(gap_adj, float(np.abs(
            ops.adjoint_transport(y.coeffs, p.coeffs) - nl.adjoint_transport_alt(y, p, q)
        ).max()))
    rows.append(_row("identities", "adjoint_transport_two_routes", gap_adj, 1e-8))

    curl_res = 0.0
    for _ in range(6):
        a = sp.random_field(space, rng)
        b = sp.random_field(space, rng)
        curl_res = max(curl_res, nl.curl_cross_identity_check(a, b, 64))
    rows.append(_row("identities", "curl_cross_pointwise", curl_res, 1e-9))

    sig_rt = 0.0
    for _ in range(50):
        v = sp.random_field(space, rng)
        back = sp.sigma_inverse(sp.sigma_apply(v))
        sig_rt = max(sig_rt, float(np.abs(back.coeffs - v.coeffs).max()))
    rows.append(_row("identities", "sigma_roundtrip", sig_rt, 1e-13))

    qt = max(q, 2 * space.n_band + 1)
    idem = 0.0
    selfadj = 0.0
    for _ in range(10):
        wgrid = sp.PhysicalField(rng.standard_normal((qt, qt, 2)))
        vgrid = sp.PhysicalField(rng.standard_normal((qt, qt, 2)))
        p1 = sp.leray_project(wgrid, space)
        p2 = sp.leray_project(sp.to_physical(p1, qt), space)
        idem = max(idem, float(np.abs(p2.coeffs - p1.coeffs).max()))
        lhs = sp.grid_inner(sp.to_physical(p1, qt).grid, vgrid.grid)
        rhs = sp.grid_inner(wgrid.grid, sp.to_physical(sp.leray_project(vgrid, space), qt).grid)
        selfadj = max(selfadj, abs(lhs - rhs))
    rows.append(_row("identities", "leray_idempotence", idem, 1e-10))
    rows.append(_row("identities", "leray_self_adjoint", selfadj, 1e-10))

    space8 = sp.get_space(8, sc.alpha)
    rt = 0.0
    for _ in range(10):
        v = sp.random_field(space8, rng)
        v2 = sp.to_spectral(sp.to_physical(v, 17), space8)
        rt = max(rt, float(np.abs(v2.coeffs - v.coeffs).max()))
    rows.append(_row("identities", "transform_roundtrip", rt, 1e-12))

    traces = 0.0
    for i in range(space.n_modes):
        e = space.zero_coeffs()
        e[i] = 1.0
        d = sp.boundary_diagnostics(sp.SpectralField(space, e))
        traces = max(traces, d["v_dot_n"], d["slip"], d["curl"])
    rows.append(_row("identities", "boundary_traces_basis", traces, 1e-12))

    y = sp.random_field(space, rng)
    t_mat = ops.linearized_matrix(y.coeffs)
    a_mat = ops.adjoint_matrix(y.coeffs)
    rows.append(_row("identities", "drift_transpose_entrywise",
                     float(np.abs(a_mat - t_mat.T).max()), 1e-9))

    mu_gap = 0.0
    for i in range(space.n_modes):
        e = space.zero_coeffs()
        e[i] = 1.0
        f = sp.SpectralField(space, e)
        sf = sp.sigma_apply(f)
        qrt = max(qt, 2 * space.n_band + 1)
        sig_grid = sp.to_physical(sf, qrt).grid
        v_grid = sp.to_physical(f, qrt).grid
        w_quad = sp.grid_inner(sig_grid, sig_grid) + sp.grid_inner(sig_grid, v_grid)
        v_quad = sp.grid_inner(sig_grid, v_grid)
        mu_gap = max(mu_gap, abs(w_quad / v_quad - space.mu[i]))
    rows.append(_row("identities", "mu_rayleigh_quadrature", mu_gap, 1e-9))
    return rows


# ---------------------------------------------------------------------------
# forward solver


def suite_forward(sc: Scenario) -> list:
    rows = []
    nu = sc.nu if sc.nu > 0 else 0.01
    space1 = sp.get_space(1, sc.alpha)
    lam = space1.lam[0]
    rate = nu * lam / (1.0 + sc.alpha * lam)
    errs = []
    for k_steps in (100, 200, 400):
        cfg = fw.SolverConfig(space1, nu, 1.0, k_steps)
        traj = fw.integrate(np.array([1.0]), lambda k: np.zeros(1), None, cfg)
        exact = np.exp(-rate * cfg.times)
        errs.append(float(np.max(np.abs(traj.states[:, 0] - exact) / exact)))
        rows.append(_row("forward", f"decay_rel_err_dt_{1.0/k_steps:g}", errs[-1],
                         2.0 / k_steps))
    order = min(
        math.log(errs[i] / errs[i + 1]) / math.log(2.0) for i in range(len(errs) - 1)
    )
    rows.append(_row("forward", "decay_order", order, 0.95, larger_is_better=True))

    space4 = sp.get_space(4, sc.alpha)
    cfg = fw.SolverConfig(space4, 0.0, 1.0, 100, scheme="midpoint")
    rng = np.random.default_rng(sc.seed + 2)
    y0 = sp.random_field(space4, rng).coeffs
    traj = fw.integrate(y0, lambda k: np.zeros(space4.n_modes), None, cfg)
    v2 = sp.norm_sq_from_coeffs(space4, traj.states, "V")
    rows.append(_row("forward", "inviscid_energy_drift", float(np.abs(v2 - v2[0]).max()),
                     1e-6))
    return rows


# ---------------------------------------------------------------------------
# pinned stochastic geometries for gradient/duality suites


def _tree_setup(sc: Scenario):
    space = sp.get_space(2, sc.alpha)
    anchor = space.field_from_modes([(1, 1), (2, 2)], [1.0, 0.5])
    anchor = (1.0 / anchor.norm("V")) * anchor
    gain = sc.noise_gain if sc.noise_family != "none" else 0.4
    spec = nz.DiffusionSpec("linear", (anchor,), gain=gain)
    cfg = fw.SolverConfig(space, sc.nu, 0.5, 4)
    scen = ct.make_tree_scenarios(cfg, spec.m)
    y0 = space.field_from_modes([(1, 1), (2, 1)], [0.7, 0.2]).coeffs
    yd = space.field_from_modes([(1, 2)], [0.3]).coeffs
    cost = cs.QuadraticCost(space, lam_u=0.1, track_weight=1.0, target=yd,
                            terminal_kind="v", terminal_target=0.5 * yd)
    rng = np.random.default_rng(sc.seed + 3)
    u = ct.ControlProcess.open_loop(space, cfg.n_steps, cfg.dt,
                                    rng.standard_normal((cfg.n_steps, space.n_modes)) * 0.3,
                                    bound_m=100.0)
    psi = ct.ControlProcess.open_loop(space, cfg.n_steps, cfg.dt,
                                      rng.standard_normal((cfg.n_steps, space.n_modes)) * 0.5,
                                      bound_m=100.0)
    return space, spec, cfg, scen, y0, cost, u, psi


def _regression_setup(sc: Scenario, n_paths: int = 10_000):
    space = sp.get_space(2, sc.alpha)
    anchor = space.field_from_modes([(1, 1)], [1.0])
    anchor = (1.0 / anchor.norm("V")) * anchor
    spec = nz.DiffusionSpec("linear", (anchor,), gain=0.25)
    cfg = fw.SolverConfig(space, sc.nu, 0.5, 16)
    scen = ct.make_mc_scenarios(cfg, spec.m, n_paths, sc.seed + 4)
    y0 = space.field_from_modes([(1, 1), (2, 1)], [0.6, 0.2]).coeffs
    yd = space.field_from_modes([(1, 2)], [0.25]).coeffs
    cost = cs.QuadraticCost(space, lam_u=0.1, track_weight=1.0, target=yd,
                            terminal_kind="l2", terminal_target=0.5 * yd)
    rng = np.random.default_rng(sc.seed + 5)
    u = ct.ControlProcess.open_loop(space, cfg.n_steps, cfg.dt,
                                    rng.standard_normal((cfg.n_steps, space.n_modes)) * 0.2,
                                    bound_m=100.0)
    psi = ct.ControlProcess.open_loop(space, cfg.n_steps, cfg.dt,
                                      rng.standard_normal((cfg.n_steps, space.n_modes)) * 0.4,
                                      bound_m=100.0)
    return space, spec, cfg, scen, y0, cost, u, psi


def _tangent_route_derivative(cfg, spec, scen, y0, cost, u, psi):
    y0b = np.broadcast_to(y0, (scen.n_scenarios, cfg.space.n_modes)).copy()
    base = fw.integrate(y0b, u.dual_at, scen.increments, cfg, spec)
    tang = ln.integrate_tangent(base, psi.dual_at, spec)
    sig = cfg.space.sig
    total = 0.0
    for k in range(cfg.n_steps):
        gu = cost.grad_u_vcoords(k, u.v_at(k), base.states[:, k])
        ell = cost.grad_y_dual(k, u.v_at(k), base.states[:, k])
        total += cfg.dt * (
            float(np.dot(np.atleast_1d(gu), psi.v_at(k) / sig))
            + float(np.mean(np.einsum("pi,pi->p", ell, tang.states[:, k])))
        )
    total += float(np.mean(np.einsum(
        "pi,pi->p", cost.terminal_costate_coords(base.states[:, -1]), tang.states[:, -1]
    )))
    return total


def suite_gradient(sc: Scenario) -> list:
    rows = []
    # first-order expansion of the control-to-state map: N=4, K=32, 8 seeds
    space = sp.get_space(4, sc.alpha)
    anchor = space.field_from_modes([(1, 1)], [1.0])
    anchor = (1.0 / anchor.norm("V")) * anchor
    family = sc.noise_family if sc.noise_family != "none" else "linear"
    spec = nz.DiffusionSpec(family if family != "saturated-linear" else "linear",
                            (anchor,), gain=0.3)
    cfg = fw.SolverConfig(space, sc.nu, 0.5, 32)
    rng = np.random.default_rng(sc.seed + 6)
    y0 = space.field_from_modes([(1, 1), (2, 1)], [0.6, 0.3]).coeffs
    u_vec = sp.random_field(space, rng, scale=0.4).coeffs
    psi_vec = sp.random_field(space, rng, scale=0.8).coeffs
    inc = nz.sample_ensemble(sc.seed + 7, 8, cfg.n_steps, cfg.dt, spec.m)
    rep = ln.gateaux_check(y0, lambda k: u_vec / space.sig, lambda k: psi_vec / space.sig,
                           inc, cfg, spec)
    monotone = all(rep.remainders[i] > rep.remainders[i + 1]
                   for i in range(len(rep.remainders) - 1))
    rows.append(CheckRow("gradient", "gateaux_monotone", None, None, monotone,
                         note=f"remainders {['%.3e' % r for r in rep.remainders]}"))
    rows.append(_row("gradient", "gateaux_order", rep.observed_order, 0.9,
                     larger_is_better=True))

    # fully linear single-mode configuration: remainder at roundoff
    space1 = sp.get_space(1, sc.alpha)
    anch1 = space1.unit_mode(1, 1, 0.2)
    spec1 = nz.DiffusionSpec("additive", (anch1,))
    cfg1 = fw.SolverConfig(space1, sc.nu, 0.5, 16)
    inc1 = nz.sample_ensemble(sc.seed + 8, 4, cfg1.n_steps, cfg1.dt, 1)
    rep1 = ln.gateaux_check(np.array([0.5]), lambda k: np.array([0.1]),
                            lambda k: np.array([0.3]), inc1, cfg1, spec1)
    rows.append(_row("gradient", "gateaux_linear_exact", max(rep1.remainders), 1e-11))

    # gradient triangle, tree-exact geometry
    space2, spec2, cfg2, scen2, y02, cost2, u2, psi2 = _tree_setup(sc)
    g, _ = ct.gradient_adjoint(u2, y02, cost2, cfg2, spec2, scen2)
    pairing = g.l2_pairing(psi2)
    eps = 1e-4
    jp, _ = ct.evaluate_cost(u2.axpy(eps, psi2), y02, cost2, cfg2, spec2, scen2)
    jm, _ = ct.evaluate_cost(u2.axpy(-eps, psi2), y02, cost2, cfg2, spec2, scen2)
    fd = (jp - jm) / (2 * eps)
    lin = _tangent_route_derivative(cfg2, spec2, scen2, y02, cost2, u2, psi2)
    scale = max(abs(fd), abs(pairing), abs(lin), 1e-300)
    rows.append(_row("gradient", "triangle_tree_fd_vs_adjoint",
                     abs(fd - pairing) / scale, 1e-6))
    rows.append(_row("gradient", "triangle_tree_tangent_vs_adjoint",
                     abs(lin - pairing) / scale, 1e-6))

    # gradient triangle, regression geometry
    space3, spec3, cfg3, scen3, y03, cost3, u3, psi3 = _regression_setup(sc)
    g3, _ = ct.gradient_adjoint(u3, y03, cost3, cfg3, spec3, scen3)
    pairing3 = g3.l2_pairing(psi3)
    jp3, _ = ct.evaluate_cost(u3.axpy(eps, psi3), y03, cost3, cfg3, spec3, scen3)
    jm3, _ = ct.evaluate_cost(u3.axpy(-eps, psi3), y03, cost3, cfg3, spec3, scen3)
    fd3 = (jp3 - jm3) / (2 * eps)
    lin3 = _tangent_route_derivative(cfg3, spec3, scen3, y03, cost3, u3, psi3)
    scale3 = max(abs(fd3), abs(pairing3), 1e-300)
    rows.append(_row("gradient", "triangle_regression_fd_vs_adjoint",
                     abs(fd3 - pairing3) / scale3, 0.05))
    rows.append(_row("gradient", "triangle_regression_tangent_vs_adjoint",
                     abs(lin3 - pairing3) / scale3, 0.05))
    return rows


def suite_duality(sc: Scenario) -> list:
    rows = []
    space, spec, cfg, scen, y0, cost, u, psi = _tree_setup(sc)
    y0b = np.broadcast_to(y0, (scen.n_scenarios, space.n_modes)).copy()
    base = fw.integrate(y0b, u.dual_at, scen.increments, cfg, spec)
    tang = ln.integrate_tangent(base, psi.dual_at, spec)
    sol = aj.solve_backward(base, u.v_at, cost, spec, scen.backend(), cfg)
    rep = aj.duality_gap(tang, sol, psi.dual_at, cost, u.v_at)
    rows.append(_row("duality", "tree_exact_rel_gap", rep.rel_gap, 1e-10,
                     note=f"lhs {rep.lhs:.6e} rhs {rep.rhs:.6e}"))

    space3, spec3, cfg3, scen3, y03, cost3, u3, psi3 = _regression_setup(sc)
    y0b3 = np.broadcast_to(y03, (scen3.n_scenarios, space3.n_modes)).copy()
    base3 = fw.integrate(y0b3, u3.dual_at, scen3.increments, cfg3, spec3)
    tang3 = ln.integrate_tangent(base3, psi3.dual_at, spec3)
    sol3 = aj.solve_backward(base3, u3.v_at, cost3, spec3, scen3.backend(), cfg3)
    rep3 = aj.duality_gap(tang3, sol3, psi3.dual_at, cost3, u3.v_at)
    tol = 3.0 * max(rep3.se_combined, 1e-300)
    rows.append(_row("duality", "regression_gap_vs_3se", rep3.gap, tol,
                     note=f"combined se {rep3.se_combined:.3e}"))
    return rows


# ---------------------------------------------------------------------------
# optimizer and optimality condition


def suite_optimizer(sc: Scenario) -> list:
    rows = []
    space = sp.get_space(2, sc.alpha)
    rng = np.random.default_rng(sc.seed + 9)

    # quadratic-in-u cost only: must contract to the zero control
    cfg = fw.SolverConfig(space, sc.nu, 0.5, 8)
    scen = ct.ScenarioSet(None)
    cost0 = cs.QuadraticCost(space, lam_u=0.1)
    u0 = ct.ControlProcess.open_loop(space, cfg.n_steps, cfg.dt,
                                     rng.standard_normal((cfg.n_steps, space.n_modes)),
                                     bound_m=1e4)
    y0 = space.field_from_modes([(1, 1)], [0.5]).coeffs
    res = ct.optimize(u0, y0, cost0, cfg, None, scen, iters=50, grad_tol=1e-12)
    rows.append(_row("optimizer", "lambda_only_final_norm", res.control.l2_norm(), 1e-8))
    rows.append(_row("optimizer", "lambda_only_iterations", len(res.history), 50))
    monotone = all(res.history[i + 1].cost <= res.history[i].cost + 1e-15
                   for i in range(len(res.history) - 1))
    rows.append(CheckRow("optimizer", "descent_monotone", None, None, monotone))

    g, _ = ct.gradient_adjoint(res.control, y0, cost0, cfg, None, scen)
    dirs = ct.random_admissible_directions(space, cfg.n_steps, cfg.dt, 1e4, 100,
                                           np.random.default_rng(sc.seed + 10))
    resid, _ = ct.optimality_residual(res.control, g, dirs)
    rows.append(_row("optimizer", "optimality_residual", resid,
                     -1e-6 * (1.0 + g.l2_norm()), larger_is_better=True))

    # planted-target tracking: recover the generating control's cost
    cfg_p = fw.SolverConfig(space, sc.nu, 0.5, 16)
    u_dag = ct.ControlProcess.open_loop(
        space, cfg_p.n_steps, cfg_p.dt,
        space.field_from_modes([(1, 1), (2, 2)], [0.4, -0.2]).coeffs, bound_m=1e4)
    target = fw.integrate(y0, u_dag.dual_at, None, cfg_p, None).states
    cost_p = cs.QuadraticCost(space, lam_u=0.0, track_weight=1.0, target=target,
                              terminal_kind="l2", terminal_target=target[-1])
    j_dag, _ = ct.evaluate_cost(u_dag, y0, cost_p, cfg_p, None, ct.ScenarioSet(None))
    u0_p = ct.ControlProcess.zero(space, cfg_p.n_steps, cfg_p.dt, bound_m=1e4)
    res_p = ct.optimize(u0_p, y0, cost_p, cfg_p, None, ct.ScenarioSet(None), iters=400,
                        grad_tol=1e-14)
    rows.append(_row("optimizer", "planted_cost_gap", res_p.final_cost - j_dag, 1e-6,
                     note=f"J(U*)={res_p.final_cost:.3e} J(U+)={j_dag:.3e}"))

    # active-ball case: optimum outside a tiny ball ends on the sphere
    m_small = 1e-4
    yd_big = space.field_from_modes([(1, 1)], [2.0]).coeffs
    cost_b = cs.QuadraticCost(space, lam_u=0.0, track_weight=1.0, target=yd_big)
    u0_b = ct.ControlProcess.zero(space, cfg.n_steps, cfg.dt, bound_m=m_small)
    res_b = ct.optimize(u0_b, y0, cost_b, cfg, None, scen, iters=60, grad_tol=1e-14)
    rows.append(_row("optimizer", "active_ball_on_sphere",
                     abs(res_b.control.max_path_v2() - m_small), 1e-10))
    return rows


# ---------------------------------------------------------------------------
# conditions


def suite_conditions(sc: Scenario) -> list:
    rows = []
    rep = ct.condition_diagnostics(sc.nu, sc.alpha, sc.t_final,
                                   sc.diagnostics["epsilon"], sc.noise_saturation,
                                   sc.space, sc.diagnostics["c_max"])
    # independent re-derivation of the constant chain
    tau = sc.t_final * math.exp(sc.diagnostics["epsilon"] * sc.t_final)
    c_star, k_star, c_ss = ct.band_constants(sc.space)
    g1 = c_star * sc.nu / sc.alpha * tau
    g1b = k_star / (4.0 * sc.alpha) * tau
    g2 = c_ss * sc.nu / sc.alpha
    th1 = 4.0 * sc.noise_saturation * tau * tau * (1.0 + g1 * g1)
    th2 = 2.0 * sc.noise_saturation * math.exp(sc.diagnostics["epsilon"] * sc.t_final) \
        * (1.0 + 2.0 * g1b * g1b)
    a_chk = 1.0 / (2.0 * th1) if th1 > 0 else float("inf")
    b_chk = g2 * g2 / (2.0 * th2) if th2 > 0 else float("inf")
    gap = max(
        abs(rep.tau - tau), abs(rep.gamma1 - g1), abs(rep.gamma1_bar - g1b),
        abs(rep.gamma2 - g2), abs(rep.theta1 - th1), abs(rep.theta2 - th2),
        abs(rep.bound_a - a_chk) / max(a_chk, 1e-300),
        abs(rep.bound_b - b_chk) / max(b_chk, 1e-300),
    )
    rows.append(_row("conditions", "formula_cross_check", gap, 1e-12))

    small_l = ct.ConditionReport(sc.nu, sc.alpha, sc.t_final, sc.diagnostics["epsilon"],
                                 1e-300, c_star, k_star, c_ss, sc.diagnostics["c_max"])
    rows.append(CheckRow("conditions", "limit_small_noise_condition1", None, None,
                         small_l.condition1_holds))
    small_t = ct.ConditionReport(sc.nu, sc.alpha, 1e-9, sc.diagnostics["epsilon"],
                                 sc.noise_saturation, c_star, k_star, c_ss,
                                 sc.diagnostics["c_max"])
    rows.append(CheckRow("conditions", "limit_small_horizon_condition1", None, None,
                         small_t.condition1_holds))
    rows.append(CheckRow("conditions", "condition1_verdict", rep.bound_a,
                         sc.diagnostics["c_max"], True,
                         note="diagnostic: holds" if rep.condition1_holds else
                         "diagnostic: does not hold"))
    rows.append(CheckRow("conditions", "condition2_verdict", rep.bound_b,
                         sc.diagnostics["c_max"], True,
                         note="diagnostic: holds" if rep.condition2_holds else
                         "diagnostic: does not hold"))
    return rows


SUITES = {
    "identities": (suite_identities,),
    "gradient": (suite_gradient,),
    "duality": (suite_duality,),
    "conditions": (suite_conditions,),
    "all": (suite_identities, suite_forward, suite_gradient, suite_duality,
            suite_optimizer, suite_conditions),
}


def run_suites(sc: Scenario, which: str) -> list:
    if which not in SUITES:
        raise ValueError(f"unknown suite {which!r}; choose from {sorted(SUITES)}")
    rows = []
    for fn in SUITES[which]:
        rows.extend(fn(sc))
    return rows
