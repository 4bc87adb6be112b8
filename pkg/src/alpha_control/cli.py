"""Command-line interface: simulate, tangent, adjoint, optimize, verify.

Every command reads one JSON scenario, writes CSV reports plus rendered
figures into the output directory, and finishes with a manifest echoing the
resolved configuration.  All randomness comes from config seeds, and CSV/PNG
output is byte-stable across reruns and worker counts (scenario work is
vectorized with fixed-order reductions).

Exit codes: 0 success, 1 verification failure, 2 configuration error,
3 numerical abort.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import adjoint as aj
from . import control as ct
from . import forward as fw
from . import linearized as ln
from . import report as rp
from .config import ConfigError, Scenario, load_scenario
from .control import AdmissibilityError
from .forward import IntegrationAbort
from .noise import TreeSizeError
from .verify import run_suites

EXIT_OK = 0
EXIT_VERIFY_FAIL = 1
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _summary_rows(traj, path=0):
    space = traj.config.space
    states = traj.states if traj.states.ndim == 3 else traj.states[None]
    s = states[path]
    rows = []
    for k, t in enumerate(traj.config.times):
        rows.append((
            t,
            float(np.sqrt(np.dot(space.norm_weights("V"), s[k] ** 2))),
            float(np.sqrt(np.dot(space.norm_weights("W"), s[k] ** 2))),
            float(np.sqrt(np.dot(space.norm_weights("Wtilde"), s[k] ** 2))),
            float(np.sqrt(np.dot(space.norm_weights("curl_sigma"), s[k] ** 2))),
        ))
    return rows


def _export_trajectories(out, sc: Scenario, traj, kind="state", prefix="trajectory"):
    outputs = []
    states = traj.states if traj.states.ndim == 3 else traj.states[None]
    n_export = min(states.shape[0], max(sc.export_paths, 1))
    for p in range(n_export):
        rows = rp.trajectory_rows(traj.config.times, states[p], sc.space, kind)
        outputs.append(rp.write_csv(out / f"{prefix}_path{p}.csv",
                                    ("kind", "time", "mode_j", "mode_k", "coeff"), rows))
    return outputs


def cmd_simulate(sc: Scenario, out) -> int:
    cfg = sc.solver_config()
    diffusion = sc.diffusion()
    scen = sc.scenarios(cfg)
    control = sc.initial_control(cfg)
    control.check_admissible()
    if scen.increments is None:
        traj = fw.integrate(sc.y0, control.dual_at, None, cfg, diffusion)
        stats = fw.ensemble_stats(traj)
    else:
        traj, stats = fw.run_ensemble(sc.y0, control.dual_at, scen.increments, cfg,
                                      diffusion)
    outputs = _export_trajectories(out, sc, traj)
    outputs.append(rp.write_csv(out / "summary.csv",
                                ("time", "V_norm", "W_norm", "Wtilde_norm",
                                 "curl_sigma_norm"), _summary_rows(traj)))
    ens_rows = [(name, val, se) for name, val, se in stats.as_rows()]
    ens_rows.append(("paths", stats.n_paths, 0.0))
    ens_rows.append(("aborted", stats.n_aborted, 0.0))
    outputs.append(rp.write_csv(out / "ensemble.csv", ("quantity", "value", "stderr"),
                                ens_rows))
    summary = np.array(_summary_rows(traj))
    outputs.append(rp.norm_series_figure(
        out / "fig_norms.png", summary[:, 0],
        {"V": summary[:, 1], "W": summary[:, 2], "Wtilde": summary[:, 3],
         "curl sigma": summary[:, 4]},
        "state norms along path 0"))
    if stats.n_aborted:
        print(f"warning: {stats.n_aborted} path(s) aborted at steps {stats.abort_steps}",
              file=sys.stderr)
    outputs.append(rp.write_manifest(out / "manifest.json",
                                     sc.manifest("simulate", outputs)))
    return EXIT_OK


def cmd_tangent(sc: Scenario, out) -> int:
    cfg = sc.solver_config()
    diffusion = sc.diffusion()
    scen = sc.scenarios(cfg)
    control = sc.initial_control(cfg)
    control.check_admissible()
    psi = sc.direction_control(cfg)
    if scen.increments is None:
        base = fw.integrate(sc.y0, control.dual_at, None, cfg, diffusion)
    else:
        y0b = np.broadcast_to(sc.y0, (scen.n_scenarios, sc.space.n_modes)).copy()
        base = fw.integrate(y0b, control.dual_at, scen.increments, cfg, diffusion)
    tang = ln.integrate_tangent(base, psi.dual_at, diffusion, cfg)
    outputs = _export_trajectories(out, sc, tang, kind="tangent", prefix="tangent")
    v_series = tang.norm_series("V")
    w_series = tang.norm_series("W")
    outputs.append(rp.write_csv(out / "summary_tangent.csv",
                                ("time", "V_norm", "W_norm"),
                                list(zip(cfg.times, v_series, w_series))))
    outputs.append(rp.norm_series_figure(out / "fig_tangent.png", cfg.times,
                                         {"V": np.maximum(v_series, 1e-300),
                                          "W": np.maximum(w_series, 1e-300)},
                                         "tangent norms along path 0"))
    outputs.append(rp.write_manifest(out / "manifest.json",
                                     sc.manifest("tangent", outputs)))
    return EXIT_OK


def cmd_adjoint(sc: Scenario, out) -> int:
    cfg = sc.solver_config()
    diffusion = sc.diffusion()
    scen = sc.scenarios(cfg)
    control = sc.initial_control(cfg)
    control.check_admissible()
    psi = sc.direction_control(cfg)
    cost = sc.cost(cfg)
    if scen.increments is None:
        base = fw.integrate(sc.y0, control.dual_at, None, cfg, diffusion)
    else:
        y0b = np.broadcast_to(sc.y0, (scen.n_scenarios, sc.space.n_modes)).copy()
        base = fw.integrate(y0b, control.dual_at, scen.increments, cfg, diffusion)
    sol = aj.solve_backward(base, control.v_at, cost, diffusion, scen.backend(), cfg)
    tang = ln.integrate_tangent(base, psi.dual_at, diffusion, cfg)
    rep = aj.duality_gap(tang, sol, psi.dual_at, cost, control.v_at)

    space = sc.space
    m = sol.q.shape[2]
    header = ["time", "scenario_id", "mode_j", "mode_k", "p_coeff"] + [
        f"q_coeff_{j + 1}" for j in range(m)
    ]
    rows = []
    n_export = min(sol.p.shape[0], max(sc.export_paths, 1))
    for p in range(n_export):
        for k, t in enumerate(cfg.times):
            for i in range(space.n_modes):
                qvals = [sol.q[p, k, j, i] if k < cfg.n_steps else 0.0 for j in range(m)]
                rows.append((t, p, int(space.js[i]), int(space.ks[i]), sol.p[p, k, i],
                             *qvals))
    outputs = [rp.write_csv(out / "adjoint.csv", header, rows)]
    outputs.append(rp.write_csv(
        out / "duality.csv",
        ("lhs_running", "lhs_terminal", "lhs", "rhs", "gap", "rel_gap", "se_combined",
         "exact_conditioning"),
        [(rep.lhs_running, rep.lhs_terminal, rep.lhs, rep.rhs, rep.gap, rep.rel_gap,
          rep.se_combined, rep.exact_conditioning)]))
    series = sol.weighted_estimate_series(base, sc.diagnostics["c3"])
    outputs.append(rp.write_csv(
        out / "weighted_estimate.csv",
        ("time", "xi3", "p_sigma_l2_sq", "visc_dp_sq", "q_w_sq"),
        [(series["times"][k], series["xi3"][k], series["p_sigma_l2_sq"][k],
          series["visc_dp_sq"][k],
          series["q_w_sq"][k] if k < cfg.n_steps else 0.0)
         for k in range(cfg.n_steps + 1)]))
    p_norms = np.sqrt(np.einsum("pki,i->pk", sol.p**2,
                                np.ones(space.n_modes))).mean(axis=0)
    outputs.append(rp.adjoint_figure(out / "fig_adjoint.png", cfg.times, p_norms, rep))
    outputs.append(rp.write_manifest(out / "manifest.json",
                                     sc.manifest("adjoint", outputs)))
    print(f"duality gap {rep.gap:.6e} (relative {rep.rel_gap:.6e})")
    return EXIT_OK


def cmd_optimize(sc: Scenario, out) -> int:
    cfg = sc.solver_config()
    diffusion = sc.diffusion()
    scen = sc.scenarios(cfg)
    cost = sc.cost(cfg)
    u0 = sc.initial_control(cfg)
    u0.check_admissible()
    opt = sc.optimizer
    res = ct.optimize(u0, sc.y0, cost, cfg, diffusion, scen, iters=opt["iters"],
                      armijo_c1=opt["c1"], eta0=opt["eta0"],
                      max_backtracks=opt["max_backtracks"], grad_tol=opt["grad_tol"])
    hist_rows = [(h.iteration, h.cost, h.grad_norm, h.step, h.constraint_active)
                 for h in res.history]
    outputs = [rp.write_csv(out / "history.csv",
                            ("iter", "J", "grad_norm", "step", "constraint_active"),
                            hist_rows)]
    u_star = res.control
    rows = []
    for k in range(cfg.n_steps):
        vals = u_star.v_at(k)
        for i in range(sc.space.n_modes):
            rows.append((cfg.times[k], int(sc.space.js[i]), int(sc.space.ks[i]), vals[i]))
    outputs.append(rp.write_csv(out / "control_opt.csv",
                                ("time", "mode_j", "mode_k", "coeff"), rows))

    g, _ = ct.gradient_adjoint(u_star, sc.y0, cost, cfg, diffusion, scen)
    dirs = ct.random_admissible_directions(sc.space, cfg.n_steps, cfg.dt, u_star.bound_m,
                                           100, np.random.default_rng(sc.seed + 11))
    resid, worst = ct.optimality_residual(u_star, g, dirs)
    fresh = {}
    if scen.increments is not None and scen.tree is None:
        fresh_scen = ct.make_mc_scenarios(cfg, sc.noise_m, sc.n_paths, sc.seed + 1)
        j_fresh, se_fresh = ct.evaluate_cost(u_star, sc.y0, cost, cfg, diffusion,
                                             fresh_scen)
        fresh = {"fresh_seed_cost": j_fresh, "fresh_seed_stderr": se_fresh}
    outputs.append(rp.write_csv(
        out / "optimality.csv",
        ("residual", "worst_direction", "grad_norm", "constraint_active"),
        [(resid, worst, g.l2_norm(), _final_active(res))]))
    if res.history:
        outputs.append(rp.descent_figure(out / "fig_descent.png", res.history))
    manifest = sc.manifest("optimize", outputs)
    manifest.update({
        "final_cost": res.final_cost,
        "converged": res.converged,
        "warning": res.warning,
        "optimality_residual": resid,
        **fresh,
    })
    outputs.append(rp.write_manifest(out / "manifest.json", manifest))
    if res.warning:
        print(f"warning: {res.warning}", file=sys.stderr)
    print(f"final cost {res.final_cost:.8e} after {len(res.history)} iterations")
    return EXIT_OK


def _final_active(res) -> bool:
    return res.history[-1].constraint_active if res.history else False


def cmd_verify(sc: Scenario, out, suite: str) -> int:
    rows = run_suites(sc, suite)
    outputs = [rp.write_csv(out / "verify_report.csv",
                            ("suite", "check", "value", "threshold", "passed", "note"),
                            [r.as_csv_row() for r in rows])]
    if suite in ("conditions", "all"):
        rep = ct.condition_diagnostics(sc.nu, sc.alpha, sc.t_final,
                                       sc.diagnostics["epsilon"], sc.noise_saturation,
                                       sc.space, sc.diagnostics["c_max"])
        items = rep.as_items() + [("regime_note", "; ".join(rep.regime_notes()))]
        outputs.append(rp.write_keyvalues(out / "conditions.txt", items))
    outputs.append(rp.verify_figure(out / "fig_verify.png", rows))
    outputs.append(rp.write_manifest(out / "manifest.json",
                                     sc.manifest(f"verify:{suite}", outputs)))
    failed = [r for r in rows if not r.passed]
    for r in rows:
        status = "PASS" if r.passed else "FAIL"
        val = "" if r.value is None else f" value={r.value:.6e}"
        thr = "" if r.threshold is None else f" threshold={r.threshold:.6e}"
        print(f"[{status}] {r.suite}/{r.name}{val}{thr}")
    if failed:
        print(f"{len(failed)} check(s) failed", file=sys.stderr)
        return EXIT_VERIFY_FAIL
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="alpha-control",
        description="Spectral-Galerkin simulation and adjoint-based control "
                    "of a 2D stochastic second-grade fluid.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("simulate", "tangent", "adjoint", "optimize", "verify"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="path to the JSON scenario")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--workers", type=int, default=None,
                       help="worker count (recorded; results are worker independent)")
        if name == "verify":
            p.add_argument("--suite", default="all",
                           choices=["identities", "gradient", "duality", "conditions",
                                    "all"])
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        sc = load_scenario(args.config)
        if args.workers is not None:
            sc.workers = args.workers
        elif sc.workers == 0:
            sc.workers = int(os.environ.get("ALPHA_CONTROL_WORKERS", "0")) or (
                os.cpu_count() or 1
            )
        out = rp.ensure_outdir(args.out)
        if args.command == "simulate":
            return cmd_simulate(sc, out)
        if args.command == "tangent":
            return cmd_tangent(sc, out)
        if args.command == "adjoint":
            return cmd_adjoint(sc, out)
        if args.command == "optimize":
            return cmd_optimize(sc, out)
        if args.command == "verify":
            return cmd_verify(sc, out, args.suite)
        raise AssertionError("unreachable")
    except (ConfigError, AdmissibilityError, TreeSizeError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except IntegrationAbort as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
