"""Cost functionals, admissible set, adjoint gradient, descent, conditions."""

import math

import numpy as np
import pytest

from alpha_control import control as ct
from alpha_control import costs as cs
from alpha_control import forward as fw
from alpha_control import noise as nz
from alpha_control import spectral as sp


def tree_setup(space, rng, k_steps=4, lam_u=0.1):
    anchor = sp.random_field(space, rng)
    anchor = (0.4 / anchor.norm("V")) * anchor
    spec = nz.DiffusionSpec("linear", (anchor,), gain=0.5)
    cfg = fw.SolverConfig(space, 0.05, 0.5, k_steps)
    scen = ct.make_tree_scenarios(cfg, spec.m)
    y0 = space.field_from_modes([(1, 1)], [0.7]).coeffs
    yd = space.field_from_modes([(1, 2)], [0.3]).coeffs
    cost = cs.QuadraticCost(space, lam_u=lam_u, track_weight=1.0, target=yd,
                            terminal_kind="v", terminal_target=0.5 * yd)
    return spec, cfg, scen, y0, cost


# ---------------------------------------------------------------------------
# cost functional hypotheses


def test_cost_gradients_match_finite_differences(space2, rng):
    yd = sp.random_field(space2, rng).coeffs
    cost = cs.QuadraticCost(space2, lam_u=0.3, track_weight=1.0, target=yd,
                            terminal_kind="l2", terminal_target=0.5 * yd)
    u = sp.random_field(space2, rng).coeffs
    y = sp.random_field(space2, rng).coeffs
    du = sp.random_field(space2, rng).coeffs
    dy = sp.random_field(space2, rng).coeffs
    eps = 1e-6
    fd_u = (cost.running(0, u + eps * du, y) - cost.running(0, u - eps * du, y)) / (2 * eps)
    fd_y = (cost.running(0, u, y + eps * dy) - cost.running(0, u, y - eps * dy)) / (2 * eps)
    # (grad_u L, dU)_L2 from V-coefficients of the gradient field
    pair_u = float(np.dot(cost.grad_u_vcoords(0, u, y), du / space2.sig))
    pair_y = float(np.dot(cost.grad_y_dual(0, u, y), dy))
    np.testing.assert_allclose(pair_u, fd_u, rtol=1e-8)
    np.testing.assert_allclose(pair_y, fd_y, rtol=1e-8)


def test_cost_gradient_growth_reported(space2, rng):
    yd = sp.random_field(space2, rng).coeffs
    cost = cs.QuadraticCost(space2, lam_u=0.3, track_weight=1.0, target=yd)
    c = cost.gradient_growth_constant(rng)
    assert np.isfinite(c) and 0 < c < 10.0


def test_cost_validation():
    space = sp.get_space(2, 0.1)
    with pytest.raises(cs.CostError):
        cs.QuadraticCost(space, lam_u=-1.0)
    with pytest.raises(cs.CostError):
        cs.QuadraticCost(space, track_weight=1.0)  # tracking without target
    with pytest.raises(cs.CostError):
        cs.QuadraticCost(space, terminal_kind="h1")


# ---------------------------------------------------------------------------
# cost evaluation


def test_cost_zero_problem(space2):
    cfg = fw.SolverConfig(space2, 0.05, 0.5, 4)
    cost = cs.QuadraticCost(space2)
    u = ct.ControlProcess.zero(space2, cfg.n_steps, cfg.dt)
    j, se = ct.evaluate_cost(u, space2.zero_coeffs(), cost, cfg, None,
                             ct.ScenarioSet(None))
    assert j == 0.0 and se == 0.0


def test_cost_single_mode_decay_closed_form(space1):
    """Tracking toward zero with no control: the quadrature of the decay."""
    nu, k_steps = 0.01, 400
    cfg = fw.SolverConfig(space1, nu, 1.0, k_steps)
    cost = cs.QuadraticCost(space1, track_weight=1.0,
                            target=np.zeros(1), terminal_kind="none")
    c0 = 0.9
    u = ct.ControlProcess.zero(space1, cfg.n_steps, cfg.dt)
    j, _ = ct.evaluate_cost(u, np.array([c0]), cost, cfg, None, ct.ScenarioSet(None))
    rate = nu * space1.lam[0] / space1.sig[0]
    # continuous closed form: int_0^T c(t)^2 ||mode||_2^2 dt
    j_cont = c0**2 / space1.sig[0] * (1.0 - np.exp(-2 * rate)) / (2 * rate)
    np.testing.assert_allclose(j, j_cont, rtol=5e-3)
    # exact discrete left-endpoint geometric sum of the scheme iterates
    s = 1.0 / (1.0 + cfg.dt * rate)
    j_disc = c0**2 / space1.sig[0] * cfg.dt * (1.0 - s**(2 * k_steps)) / (1.0 - s**2)
    np.testing.assert_allclose(j, j_disc, rtol=1e-12)


def test_cost_two_step_tree_hand_check(space1):
    nu, t_final = 0.04, 0.3
    cfg = fw.SolverConfig(space1, nu, t_final, 2)
    anchor = space1.unit_mode(1, 1, 0.6)
    spec = nz.DiffusionSpec("additive", (anchor,))
    scen = ct.make_tree_scenarios(cfg, 1)
    sig = space1.sig[0]
    lam_u, yd = 0.2, 0.3
    cost = cs.QuadraticCost(space1, lam_u=lam_u, track_weight=1.0,
                            target=np.array([yd]), terminal_kind="l2",
                            terminal_target=np.array([0.1]))
    u_vals = np.array([[0.15], [-0.1]])
    u = ct.ControlProcess.open_loop(space1, 2, cfg.dt, u_vals)
    y0 = 0.8
    j, se = ct.evaluate_cost(u, np.array([y0]), cost, cfg, spec, scen)
    assert se == 0.0  # exhaustive scenario set

    dt = cfg.dt
    s_imp = 1.0 + dt * nu * space1.lam[0] / sig
    g_dual = 0.6 / sig
    rt = math.sqrt(dt)
    total = 0.0
    for s0 in (-1.0, 1.0):
        for s1 in (-1.0, 1.0):
            y1 = (y0 + dt * u_vals[0, 0] / sig + g_dual * rt * s0) / s_imp
            y2 = (y1 + dt * u_vals[1, 0] / sig + g_dual * rt * s1) / s_imp
            run = dt * ((y0 - yd) ** 2 / sig + 0.5 * lam_u * u_vals[0, 0] ** 2 / sig)
            run += dt * ((y1 - yd) ** 2 / sig + 0.5 * lam_u * u_vals[1, 0] ** 2 / sig)
            total += run + 0.5 * (y2 - 0.1) ** 2 / sig
    np.testing.assert_allclose(j, total / 4.0, rtol=1e-13)


def test_cost_rejects_inadmissible(space2, rng):
    cfg = fw.SolverConfig(space2, 0.05, 0.5, 4)
    cost = cs.QuadraticCost(space2)
    vals = rng.standard_normal((4, space2.n_modes)) * 10.0
    u = ct.ControlProcess.open_loop(space2, 4, cfg.dt, vals, bound_m=1e-6)
    with pytest.raises(ct.AdmissibilityError, match="M ="):
        ct.evaluate_cost(u, space2.zero_coeffs(), cost, cfg, None, ct.ScenarioSet(None))


# ---------------------------------------------------------------------------
# gradients


def test_gradient_lambda_only_is_scaled_control(space2, rng):
    spec, cfg, scen, y0, _ = tree_setup(space2, rng)
    cost = cs.QuadraticCost(space2, lam_u=0.3)
    u = ct.ControlProcess.open_loop(space2, cfg.n_steps, cfg.dt,
                                    rng.standard_normal((cfg.n_steps, space2.n_modes)))
    g, sol = ct.gradient_adjoint(u, y0, cost, cfg, spec, scen)
    assert np.abs(sol.p).max() == 0.0
    np.testing.assert_allclose(np.asarray(g.values), 0.3 * np.asarray(u.values),
                               atol=1e-14)


def test_gradient_matches_central_differences_tree(space2, rng):
    spec, cfg, scen, y0, cost = tree_setup(space2, rng)
    u = ct.ControlProcess.open_loop(space2, cfg.n_steps, cfg.dt,
                                    rng.standard_normal((cfg.n_steps, space2.n_modes)) * 0.3)
    psi = ct.ControlProcess.open_loop(space2, cfg.n_steps, cfg.dt,
                                      rng.standard_normal((cfg.n_steps, space2.n_modes)) * 0.5)
    g, _ = ct.gradient_adjoint(u, y0, cost, cfg, spec, scen)
    eps = 1e-4
    jp, _ = ct.evaluate_cost(u.axpy(eps, psi), y0, cost, cfg, spec, scen)
    jm, _ = ct.evaluate_cost(u.axpy(-eps, psi), y0, cost, cfg, spec, scen)
    fd = (jp - jm) / (2 * eps)
    pairing = g.l2_pairing(psi)
    assert abs(fd - pairing) / abs(fd) < 1e-6


def test_gradient_matches_tangent_route(space2, rng):
    from alpha_control import linearized as ln

    spec, cfg, scen, y0, cost = tree_setup(space2, rng)
    u = ct.ControlProcess.open_loop(space2, cfg.n_steps, cfg.dt,
                                    rng.standard_normal((cfg.n_steps, space2.n_modes)) * 0.3)
    psi = ct.ControlProcess.open_loop(space2, cfg.n_steps, cfg.dt,
                                      rng.standard_normal((cfg.n_steps, space2.n_modes)) * 0.5)
    g, _ = ct.gradient_adjoint(u, y0, cost, cfg, spec, scen)
    pairing = g.l2_pairing(psi)

    y0b = np.broadcast_to(y0, (scen.n_scenarios, space2.n_modes)).copy()
    base = fw.integrate(y0b, u.dual_at, scen.increments, cfg, spec)
    tang = ln.integrate_tangent(base, psi.dual_at, spec)
    total = 0.0
    for k in range(cfg.n_steps):
        gu = cost.grad_u_vcoords(k, u.v_at(k), base.states[:, k])
        ell = cost.grad_y_dual(k, u.v_at(k), base.states[:, k])
        total += cfg.dt * (float(np.dot(gu, psi.v_at(k) / space2.sig))
                           + float(np.mean(np.einsum("pi,pi->p", ell, tang.states[:, k]))))
    total += float(np.mean(np.einsum(
        "pi,pi->p", cost.terminal_costate_coords(base.states[:, -1]),
        tang.states[:, -1])))
    assert abs(total - pairing) / abs(pairing) < 1e-9


def test_gradient_tree_adapted_control(space1, rng):
    """Feedback parametrization: node-wise FD of the tree cost vs gradient."""
    cfg = fw.SolverConfig(space1, 0.05, 0.3, 2)
    anchor = space1.unit_mode(1, 1, 0.6)
    spec = nz.DiffusionSpec("additive", (anchor,))
    scen = ct.make_tree_scenarios(cfg, 1)
    cost = cs.QuadraticCost(space1, lam_u=0.2, track_weight=1.0,
                            target=np.array([0.3]), terminal_kind="l2",
                            terminal_target=np.array([0.1]))
    y0 = np.array([0.8])
    levels = [rng.standard_normal((1, 1)) * 0.2, rng.standard_normal((2, 1)) * 0.2]
    u = ct.ControlProcess.tree(space1, scen.tree, levels)
    g, _ = ct.gradient_adjoint(u, y0, cost, cfg, spec, scen)
    eps = 1e-6
    for k, node in ((0, 0), (1, 0), (1, 1)):
        bump = [lv.copy() for lv in levels]
        bump[k][node, 0] += eps
        jp, _ = ct.evaluate_cost(ct.ControlProcess.tree(space1, scen.tree, bump),
                                 y0, cost, cfg, spec, scen)
        bump[k][node, 0] -= 2 * eps
        jm, _ = ct.evaluate_cost(ct.ControlProcess.tree(space1, scen.tree, bump),
                                 y0, cost, cfg, spec, scen)
        fd = (jp - jm) / (2 * eps)
        # node probability weight times dt times the L2 pairing weight
        prob = 1.0 if k == 0 else 0.5
        pred = g.values[k][node, 0] / space1.sig[0] * cfg.dt * prob
        np.testing.assert_allclose(pred, fd, rtol=1e-6, atol=1e-12)


# ---------------------------------------------------------------------------
# admissible set


def test_projection_inside_ball_unchanged(space2, rng):
    cfg = fw.SolverConfig(space2, 0.05, 0.5, 4)
    vals = rng.standard_normal((4, space2.n_modes)) * 0.01
    u = ct.ControlProcess.open_loop(space2, 4, cfg.dt, vals, bound_m=100.0)
    assert ct.project_admissible(u) is u


def test_projection_radial_factor(space2, rng):
    cfg = fw.SolverConfig(space2, 0.05, 0.5, 4)
    vals = rng.standard_normal((4, space2.n_modes))
    u = ct.ControlProcess.open_loop(space2, 4, cfg.dt, vals)
    integral = u.max_path_v2()
    u_ball = ct.ControlProcess.open_loop(space2, 4, cfg.dt, vals,
                                         bound_m=integral / 4.0)
    proj = ct.project_admissible(u_ball)
    np.testing.assert_allclose(np.asarray(proj.values), 0.5 * vals, rtol=1e-14)
    proj2 = ct.project_admissible(proj)
    np.testing.assert_allclose(np.asarray(proj2.values), np.asarray(proj.values),
                               rtol=1e-14)


def test_projection_nonexpansive(space2, rng):
    cfg = fw.SolverConfig(space2, 0.05, 0.5, 4)
    for _ in range(20):
        a = ct.ControlProcess.open_loop(space2, 4, cfg.dt,
                                        rng.standard_normal((4, space2.n_modes)),
                                        bound_m=0.5)
        b = ct.ControlProcess.open_loop(space2, 4, cfg.dt,
                                        rng.standard_normal((4, space2.n_modes)),
                                        bound_m=0.5)
        pa, pb = ct.project_admissible(a), ct.project_admissible(b)
        d_orig = math.sqrt(a.axpy(-1.0, b).max_path_v2())
        d_proj = math.sqrt(pa.axpy(-1.0, pb).max_path_v2())
        assert d_proj <= d_orig * (1.0 + 1e-12)


# ---------------------------------------------------------------------------
# optimizer


def test_optimize_lambda_only(space2, rng):
    cfg = fw.SolverConfig(space2, 0.05, 0.5, 8)
    cost = cs.QuadraticCost(space2, lam_u=0.1)
    u0 = ct.ControlProcess.open_loop(space2, cfg.n_steps, cfg.dt,
                                     rng.standard_normal((cfg.n_steps, space2.n_modes)),
                                     bound_m=1e4)
    y0 = space2.field_from_modes([(1, 1)], [0.5]).coeffs
    res = ct.optimize(u0, y0, cost, cfg, None, ct.ScenarioSet(None), iters=50,
                      grad_tol=1e-12)
    assert res.control.l2_norm() < 1e-8
    assert len(res.history) <= 50
    costs = [h.cost for h in res.history]
    assert all(b <= a + 1e-15 for a, b in zip(costs, costs[1:]))


def test_optimize_planted_target(space2):
    cfg = fw.SolverConfig(space2, 0.05, 0.5, 16)
    y0 = space2.field_from_modes([(1, 1)], [0.5]).coeffs
    u_dag_vals = space2.field_from_modes([(1, 1), (2, 2)], [0.4, -0.2]).coeffs
    u_dag = ct.ControlProcess.open_loop(space2, cfg.n_steps, cfg.dt, u_dag_vals,
                                        bound_m=1e4)
    target = fw.integrate(y0, u_dag.dual_at, None, cfg, None).states
    cost = cs.QuadraticCost(space2, track_weight=1.0, target=target,
                            terminal_kind="l2", terminal_target=target[-1])
    j_dag, _ = ct.evaluate_cost(u_dag, y0, cost, cfg, None, ct.ScenarioSet(None))
    assert j_dag < 1e-28  # the target is exactly attainable on this grid
    u0 = ct.ControlProcess.zero(space2, cfg.n_steps, cfg.dt, bound_m=1e4)
    res = ct.optimize(u0, y0, cost, cfg, None, ct.ScenarioSet(None), iters=400,
                      grad_tol=1e-14)
    assert res.final_cost <= j_dag + 1e-6


def test_optimize_active_ball(space2, rng):
    cfg = fw.SolverConfig(space2, 0.05, 0.5, 8)
    m_small = 1e-4
    yd = space2.field_from_modes([(1, 1)], [2.0]).coeffs
    cost = cs.QuadraticCost(space2, track_weight=1.0, target=yd)
    u0 = ct.ControlProcess.zero(space2, cfg.n_steps, cfg.dt, bound_m=m_small)
    y0 = space2.field_from_modes([(1, 1)], [0.5]).coeffs
    res = ct.optimize(u0, y0, cost, cfg, None, ct.ScenarioSet(None), iters=60,
                      grad_tol=1e-14)
    assert abs(res.control.max_path_v2() - m_small) < 1e-10
    assert res.history[-1].constraint_active


def test_optimize_armijo_exhaustion_warns(space2, rng):
    cfg = fw.SolverConfig(space2, 0.05, 0.5, 4)
    yd = space2.field_from_modes([(1, 1)], [1.0]).coeffs
    cost = cs.QuadraticCost(space2, track_weight=1.0, target=yd)
    u0 = ct.ControlProcess.open_loop(space2, cfg.n_steps, cfg.dt,
                                     rng.standard_normal((4, space2.n_modes)) * 0.1,
                                     bound_m=1e4)
    y0 = space2.field_from_modes([(1, 1)], [0.5]).coeffs
    res = ct.optimize(u0, y0, cost, cfg, None, ct.ScenarioSet(None), iters=5,
                      eta0=1e12, max_backtracks=1, armijo_c1=0.9)
    assert res.warning


def test_optimality_residual_at_optimum(space2, rng):
    cfg = fw.SolverConfig(space2, 0.05, 0.5, 8)
    cost = cs.QuadraticCost(space2, lam_u=0.1)
    u0 = ct.ControlProcess.open_loop(space2, cfg.n_steps, cfg.dt,
                                     rng.standard_normal((cfg.n_steps, space2.n_modes)),
                                     bound_m=1e4)
    y0 = space2.field_from_modes([(1, 1)], [0.5]).coeffs
    res = ct.optimize(u0, y0, cost, cfg, None, ct.ScenarioSet(None), iters=60,
                      grad_tol=1e-13)
    g, _ = ct.gradient_adjoint(res.control, y0, cost, cfg, None, ct.ScenarioSet(None))
    dirs = ct.random_admissible_directions(space2, cfg.n_steps, cfg.dt, 1e4, 100,
                                           np.random.default_rng(4))
    resid, _ = ct.optimality_residual(res.control, g, dirs)
    assert resid >= -1e-6 * (1.0 + g.l2_norm())


def test_optimality_residual_detects_descent_direction(space2, rng):
    cfg = fw.SolverConfig(space2, 0.05, 0.5, 8)
    cost = cs.QuadraticCost(space2, lam_u=0.1)
    u = ct.ControlProcess.open_loop(space2, cfg.n_steps, cfg.dt,
                                    rng.standard_normal((cfg.n_steps, space2.n_modes)),
                                    bound_m=1e6)
    y0 = space2.field_from_modes([(1, 1)], [0.5]).coeffs
    g, _ = ct.gradient_adjoint(u, y0, cost, cfg, None, ct.ScenarioSet(None))
    dirs = ct.random_admissible_directions(space2, cfg.n_steps, cfg.dt, 1e6, 50,
                                           np.random.default_rng(4))
    dirs.append(ct.project_admissible(u.axpy(-1e3, g)))  # long negative-gradient step
    resid, idx = ct.optimality_residual(u, g, dirs)
    assert resid < 0
    assert idx == len(dirs) - 1


# ---------------------------------------------------------------------------
# condition diagnostics and monitors


def test_band_constants_closed_forms(space6):
    c_star, k_star, c_ss = ct.band_constants(space6)
    lam = space6.lam
    np.testing.assert_allclose(c_star, ((1 + lam) / (1 + 0.1 * lam)).max(), rtol=1e-14)
    lam0 = 2.0 * np.pi**2
    np.testing.assert_allclose(k_star, 2 * (1 + lam0) / lam0, rtol=1e-14)
    assert 0 < c_ss <= 1.5


def test_condition_report_formulas(space6):
    rep = ct.condition_diagnostics(0.1, 0.1, 1.0, 1.0, 0.01, space6, c_max=1.0)
    tau = 1.0 * math.exp(1.0)
    np.testing.assert_allclose(rep.tau, tau, rtol=1e-15)
    c_star, k_star, c_ss = ct.band_constants(space6)
    np.testing.assert_allclose(rep.gamma1, c_star * 0.1 / 0.1 * tau, rtol=1e-15)
    np.testing.assert_allclose(rep.gamma1_bar, k_star * tau / (4 * 0.1), rtol=1e-15)
    np.testing.assert_allclose(rep.gamma2, c_ss * 0.1 / 0.1, rtol=1e-15)
    np.testing.assert_allclose(rep.theta1, 4 * 0.01 * tau**2 * (1 + rep.gamma1**2),
                               rtol=1e-15)
    np.testing.assert_allclose(rep.theta2,
                               2 * 0.01 * math.exp(1.0) * (1 + 2 * rep.gamma1_bar**2),
                               rtol=1e-15)
    np.testing.assert_allclose(rep.bound_a, 1 / (2 * rep.theta1), rtol=1e-15)
    np.testing.assert_allclose(rep.bound_b, rep.gamma2**2 / (2 * rep.theta2),
                               rtol=1e-15)


def test_condition_limits(space6):
    rep_l = ct.condition_diagnostics(0.1, 0.1, 1.0, 1.0, 1e-300, space6, c_max=1.0)
    assert rep_l.condition1_holds
    rep_t = ct.condition_diagnostics(0.1, 0.1, 1e-9, 1.0, 0.01, space6, c_max=1.0)
    assert rep_t.condition1_holds
    assert any("controllable" in n for n in rep_t.regime_notes())


def test_exponential_integrability_monitor(space2, rng):
    anchor = sp.random_field(space2, rng)
    anchor = (0.3 / anchor.norm("V")) * anchor
    spec = nz.DiffusionSpec("saturated-linear", (anchor,), gain=0.5,
                            saturation_level=0.05)
    cfg = fw.SolverConfig(space2, 0.05, 0.5, 16)
    inc = nz.sample_ensemble(13, 512, cfg.n_steps, cfg.dt, 1)
    y0 = space2.field_from_modes([(1, 1)], [0.3]).coeffs
    traj, _ = fw.run_ensemble(y0, lambda k: np.zeros(space2.n_modes), inc, cfg, spec)
    mon = ct.exponential_integrability_monitor(traj, c_max=1.0)
    assert np.isfinite(mon["estimate"])
    assert 0.5 <= mon["stability_ratio"] <= 2.0


def test_tree_control_adaptedness(space1):
    tree = nz.ScenarioTree(2, 0.1, 1)
    levels = [np.array([[1.0]]), np.array([[2.0], [3.0]])]
    u = ct.ControlProcess.tree(sp.get_space(1, 0.1), tree, levels)
    np.testing.assert_array_equal(u.v_at(0)[:, 0], [1.0, 1.0, 1.0, 1.0])
    np.testing.assert_array_equal(u.v_at(1)[:, 0], [2.0, 2.0, 3.0, 3.0])
    assert u.max_path_v2() == pytest.approx(0.1 * (1.0 + 9.0))
