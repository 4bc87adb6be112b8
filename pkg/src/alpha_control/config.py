"""Scenario configuration: JSON parsing, field-precise validation, and
construction of the solver objects a command needs.

The file is a single JSON object; unknown keys are rejected so typos fail
fast.  All randomness flows through the seeds recorded here, never through
wall-clock entropy, and every command echoes the fully resolved scenario in
its manifest so a run can be reproduced from its output directory alone.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from . import control as ct
from . import forward as fw
from .costs import QuadraticCost
from .noise import DiffusionSpec, TREE_SIZE_LIMIT
from .spectral import SpectralField, SpectralSpace, get_space


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"config error at {path}: {message}")


def _expect_table(obj, path, allowed):
    if not isinstance(obj, dict):
        raise ConfigError(path, "must be an object")
    for key in obj:
        if key not in allowed:
            raise ConfigError(f"{path}.{key}", "unknown field")


def _get(obj, path, key, default=None, required=False):
    if key not in obj:
        if required:
            raise ConfigError(f"{path}.{key}", "missing required field")
        return default
    return obj[key]


def _as_int(value, path, minimum=None):
    if not isinstance(value, int) or isinstance(value, bool):
        raise ConfigError(path, "must be an integer")
    if minimum is not None and value < minimum:
        raise ConfigError(path, f"must be >= {minimum}")
    return value


def _as_number(value, path, minimum=None, strict_min=None):
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        raise ConfigError(path, "must be a number")
    v = float(value)
    if not math.isfinite(v):
        raise ConfigError(path, "must be finite")
    if minimum is not None and v < minimum:
        raise ConfigError(path, f"must be >= {minimum}")
    if strict_min is not None and v <= strict_min:
        raise ConfigError(path, f"must be > {strict_min}")
    return v


def _mode_list(obj, path, n_band):
    modes = _get(obj, path, "modes", required=True)
    coeffs = _get(obj, path, "coeffs", required=True)
    if not isinstance(modes, list) or not all(
        isinstance(m, list) and len(m) == 2 for m in modes
    ):
        raise ConfigError(f"{path}.modes", "must be a list of [j, k] pairs")
    if not isinstance(coeffs, list) or len(coeffs) != len(modes):
        raise ConfigError(f"{path}.coeffs", "must be a list matching modes")
    for m in modes:
        j, k = _as_int(m[0], f"{path}.modes", 1), _as_int(m[1], f"{path}.modes", 1)
        if j > n_band or k > n_band:
            raise ConfigError(f"{path}.modes", f"mode [{j},{k}] outside band 1..{n_band}")
    vals = [_as_number(c, f"{path}.coeffs") for c in coeffs]
    return [(int(m[0]), int(m[1])) for m in modes], vals


@dataclass
class Scenario:
    """Fully validated scenario with lazy builders for the solver objects."""

    raw: dict
    space: SpectralSpace
    q_res: int
    nu: float
    alpha: float
    t_final: float
    n_steps: int
    scheme: str
    y0: np.ndarray
    noise_family: str
    noise_m: int
    noise_gain: float
    noise_saturation: float
    noise_kind: str
    n_paths: int
    seed: int
    anchors: list
    lam_u: float
    tracking_kind: str
    tracking_weight: float
    tracking_modes: list
    tracking_coeffs: list
    planted_modes: list
    planted_coeffs: list
    terminal_kind: str
    terminal_target_spec: object
    parametrization: str
    bound_m: float
    u0_modes: list
    u0_coeffs: list
    direction_modes: list
    direction_coeffs: list
    optimizer: dict
    diagnostics: dict
    workers: int
    export_paths: int

    # ---- builders ----------------------------------------------------------

    def solver_config(self) -> fw.SolverConfig:
        return fw.SolverConfig(self.space, self.nu, self.t_final, self.n_steps,
                               q_res=self.q_res, scheme=self.scheme)

    def diffusion(self) -> DiffusionSpec | None:
        if self.noise_family == "none":
            return None
        anchors = []
        for spec_modes, spec_coeffs in self.anchors:
            f = self.space.field_from_modes(spec_modes, spec_coeffs)
            nv = f.norm("V")
            if nv == 0:
                raise ConfigError("noise.anchors", "anchor field is identically zero")
            anchors.append((1.0 / nv) * f)
        return DiffusionSpec(self.noise_family, tuple(anchors), gain=self.noise_gain,
                             saturation_level=self.noise_saturation)

    def scenarios(self, cfg: fw.SolverConfig) -> ct.ScenarioSet:
        if self.noise_family == "none":
            return ct.ScenarioSet(None)
        if self.noise_kind == "tree":
            if self.noise_m * self.n_steps > TREE_SIZE_LIMIT:
                raise ConfigError(
                    "noise.kind",
                    f"tree with m*K = {self.noise_m * self.n_steps} exceeds the "
                    f"enumeration limit {TREE_SIZE_LIMIT}",
                )
            return ct.make_tree_scenarios(cfg, self.noise_m)
        return ct.make_mc_scenarios(cfg, self.noise_m, self.n_paths, self.seed)

    def initial_field(self) -> SpectralField:
        return self.space.field(self.y0)

    def planted_control(self, cfg: fw.SolverConfig) -> ct.ControlProcess | None:
        if self.tracking_kind != "planted":
            return None
        u_dag = self.space.field_from_modes(self.planted_modes, self.planted_coeffs)
        return ct.ControlProcess.open_loop(self.space, self.n_steps, cfg.dt,
                                           u_dag.coeffs, self.bound_m)

    def cost(self, cfg: fw.SolverConfig) -> QuadraticCost:
        target = None
        weight = 0.0
        if self.tracking_kind == "constant":
            target = self.space.field_from_modes(self.tracking_modes,
                                                 self.tracking_coeffs).coeffs
            weight = self.tracking_weight
        elif self.tracking_kind == "planted":
            u_dag = self.planted_control(cfg)
            traj = fw.integrate(self.y0, u_dag.dual_at, None, cfg, None)
            target = traj.states
            weight = self.tracking_weight
        term_target = None
        if self.terminal_kind != "none":
            if self.terminal_target_spec == "tracking-final":
                if target is None:
                    raise ConfigError("cost.terminal_target",
                                      "tracking-final requires a tracking target")
                term_target = target if np.asarray(target).ndim == 1 else target[-1]
            elif self.terminal_target_spec == "zero" or self.terminal_target_spec is None:
                term_target = np.zeros(self.space.n_modes)
            else:
                modes, coeffs = self.terminal_target_spec
                term_target = self.space.field_from_modes(modes, coeffs).coeffs
        return QuadraticCost(self.space, lam_u=self.lam_u, track_weight=weight,
                             target=target, terminal_kind=self.terminal_kind,
                             terminal_target=term_target)

    def initial_control(self, cfg: fw.SolverConfig) -> ct.ControlProcess:
        u0 = self.space.field_from_modes(self.u0_modes, self.u0_coeffs)
        return ct.ControlProcess.open_loop(self.space, self.n_steps, cfg.dt,
                                           u0.coeffs, self.bound_m)

    def direction_control(self, cfg: fw.SolverConfig) -> ct.ControlProcess:
        psi = self.space.field_from_modes(self.direction_modes, self.direction_coeffs)
        return ct.ControlProcess.open_loop(self.space, self.n_steps, cfg.dt,
                                           psi.coeffs, self.bound_m)

    def manifest(self, command: str, outputs: list) -> dict:
        import os

        return {
            "artifact": "alpha-control",
            "version": _version(),
            "command": command,
            "config": self.raw,
            "seeds": [self.seed],
            "outputs": sorted(os.path.basename(p) for p in outputs),
        }


def _version() -> str:
    from . import __version__

    return __version__


def load_scenario(path: str) -> Scenario:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError("<file>", f"cannot read config file {path!r}")
    except json.JSONDecodeError as exc:
        raise ConfigError("<file>", f"invalid JSON: {exc}")
    return parse_scenario(raw)


def parse_scenario(raw: dict) -> Scenario:
    _expect_table(raw, "<root>", {
        "domain", "physics", "time", "initial", "noise", "cost", "control",
        "optimizer", "diagnostics", "scheme", "workers", "export",
    })

    dom = _get(raw, "<root>", "domain", {}, required=True)
    _expect_table(dom, "domain", {"N", "Q"})
    n_band = _as_int(_get(dom, "domain", "N", required=True), "domain.N", 1)
    q_res = _get(dom, "domain", "Q", 3 * n_band + 1)
    q_res = _as_int(q_res, "domain.Q", 1)
    if q_res < 3 * n_band + 1:
        raise ConfigError("domain.Q", f"must be >= 3N+1 = {3 * n_band + 1}")

    phys = _get(raw, "<root>", "physics", {}, required=True)
    _expect_table(phys, "physics", {"nu", "alpha"})
    nu = _as_number(_get(phys, "physics", "nu", required=True), "physics.nu", minimum=0.0)
    alpha = _as_number(_get(phys, "physics", "alpha", required=True), "physics.alpha",
                       strict_min=0.0)

    tim = _get(raw, "<root>", "time", {}, required=True)
    _expect_table(tim, "time", {"T", "K"})
    t_final = _as_number(_get(tim, "time", "T", required=True), "time.T", strict_min=0.0)
    n_steps = _as_int(_get(tim, "time", "K", required=True), "time.K", 1)

    space = get_space(n_band, alpha)

    init = _get(raw, "<root>", "initial", {"modes": [], "coeffs": []})
    _expect_table(init, "initial", {"modes", "coeffs"})
    if init.get("modes"):
        modes, coeffs = _mode_list(init, "initial", n_band)
        y0 = space.field_from_modes(modes, coeffs).coeffs
    else:
        y0 = space.zero_coeffs()

    noi = _get(raw, "<root>", "noise", {"family": "none"})
    _expect_table(noi, "noise", {"family", "m", "gain", "saturation_level", "anchors",
                                 "kind", "paths", "seed"})
    family = _get(noi, "noise", "family", "none")
    if family not in ("none", "additive", "linear", "saturated-linear"):
        raise ConfigError("noise.family", f"unknown family {family!r}")
    m = _as_int(_get(noi, "noise", "m", 2), "noise.m", 1)
    gain = _as_number(_get(noi, "noise", "gain", 1.0), "noise.gain")
    saturation = _as_number(_get(noi, "noise", "saturation_level", 1.0),
                            "noise.saturation_level", strict_min=0.0)
    kind = _get(noi, "noise", "kind", "gaussian")
    if kind not in ("gaussian", "tree"):
        raise ConfigError("noise.kind", f"must be 'gaussian' or 'tree', got {kind!r}")
    n_paths = _as_int(_get(noi, "noise", "paths", 256), "noise.paths", 1)
    seed = _as_int(_get(noi, "noise", "seed", 12345), "noise.seed", 0)
    anchors_raw = _get(noi, "noise", "anchors", None)
    anchors = []
    if family != "none":
        if anchors_raw is None:
            # default anchors: the first m band modes in index order
            for i in range(m):
                j, k = int(space.js[i % space.n_modes]), int(space.ks[i % space.n_modes])
                anchors.append(([(j, k)], [1.0]))
        else:
            if not isinstance(anchors_raw, list) or len(anchors_raw) != m:
                raise ConfigError("noise.anchors", f"must be a list of exactly m={m} anchors")
            for idx, a in enumerate(anchors_raw):
                _expect_table(a, f"noise.anchors[{idx}]", {"modes", "coeffs"})
                anchors.append(_mode_list(a, f"noise.anchors[{idx}]", n_band))

    cst = _get(raw, "<root>", "cost", {})
    _expect_table(cst, "cost", {"lambda", "tracking", "terminal", "terminal_target"})
    lam_u = _as_number(_get(cst, "cost", "lambda", 0.0), "cost.lambda", minimum=0.0)
    trk = _get(cst, "cost", "tracking", {"kind": "none"})
    _expect_table(trk, "cost.tracking", {"kind", "weight", "modes", "coeffs",
                                         "control_modes", "control_coeffs"})
    tracking_kind = _get(trk, "cost.tracking", "kind", "none")
    if tracking_kind not in ("none", "constant", "planted"):
        raise ConfigError("cost.tracking.kind", f"unknown kind {tracking_kind!r}")
    tracking_weight = _as_number(_get(trk, "cost.tracking", "weight", 1.0),
                                 "cost.tracking.weight", minimum=0.0)
    tracking_modes, tracking_coeffs = [], []
    planted_modes, planted_coeffs = [], []
    if tracking_kind == "constant":
        tracking_modes, tracking_coeffs = _mode_list(trk, "cost.tracking", n_band)
    elif tracking_kind == "planted":
        planted = {"modes": _get(trk, "cost.tracking", "control_modes", required=True),
                   "coeffs": _get(trk, "cost.tracking", "control_coeffs", required=True)}
        planted_modes, planted_coeffs = _mode_list(planted, "cost.tracking", n_band)
    terminal_kind = _get(cst, "cost", "terminal", "none")
    if terminal_kind not in ("none", "l2", "v"):
        raise ConfigError("cost.terminal", f"must be one of none/l2/v, got {terminal_kind!r}")
    tt = _get(cst, "cost", "terminal_target", "zero")
    if isinstance(tt, dict):
        _expect_table(tt, "cost.terminal_target", {"modes", "coeffs"})
        terminal_target_spec = _mode_list(tt, "cost.terminal_target", n_band)
    elif tt in ("zero", "tracking-final"):
        terminal_target_spec = tt
    else:
        raise ConfigError("cost.terminal_target",
                          "must be 'zero', 'tracking-final' or a mode table")

    ctl = _get(raw, "<root>", "control", {})
    _expect_table(ctl, "control", {"parametrization", "M", "initial", "direction"})
    parametrization = _get(ctl, "control", "parametrization", "open-loop")
    if parametrization not in ("open-loop", "tree"):
        raise ConfigError("control.parametrization", f"unknown value {parametrization!r}")
    bound_m = _as_number(_get(ctl, "control", "M", 1e6), "control.M", strict_min=0.0)
    u0_spec = _get(ctl, "control", "initial", "zero")
    if u0_spec == "zero":
        u0_modes, u0_coeffs = [], []
    elif isinstance(u0_spec, dict):
        _expect_table(u0_spec, "control.initial", {"modes", "coeffs"})
        u0_modes, u0_coeffs = _mode_list(u0_spec, "control.initial", n_band)
    else:
        raise ConfigError("control.initial", "must be 'zero' or a mode table")
    dir_spec = _get(ctl, "control", "direction", None)
    if dir_spec is None:
        direction_modes, direction_coeffs = [(1, 1)], [1.0]
    else:
        _expect_table(dir_spec, "control.direction", {"modes", "coeffs"})
        direction_modes, direction_coeffs = _mode_list(dir_spec, "control.direction", n_band)

    opt = _get(raw, "<root>", "optimizer", {})
    _expect_table(opt, "optimizer", {"iters", "c1", "eta0", "max_backtracks", "grad_tol"})
    optimizer = {
        "iters": _as_int(_get(opt, "optimizer", "iters", 100), "optimizer.iters", 1),
        "c1": _as_number(_get(opt, "optimizer", "c1", 0.25), "optimizer.c1", strict_min=0.0),
        "eta0": _as_number(_get(opt, "optimizer", "eta0", 1.0), "optimizer.eta0",
                           strict_min=0.0),
        "max_backtracks": _as_int(_get(opt, "optimizer", "max_backtracks", 40),
                                  "optimizer.max_backtracks", 1),
        "grad_tol": _as_number(_get(opt, "optimizer", "grad_tol", 1e-10),
                               "optimizer.grad_tol", minimum=0.0),
    }

    dia = _get(raw, "<root>", "diagnostics", {})
    _expect_table(dia, "diagnostics", {"c0", "c1", "c2", "c3", "c_max", "epsilon"})
    diagnostics = {
        "c0": _as_number(_get(dia, "diagnostics", "c0", 1.0), "diagnostics.c0"),
        "c1": _as_number(_get(dia, "diagnostics", "c1", 1.0), "diagnostics.c1"),
        "c2": _as_number(_get(dia, "diagnostics", "c2", 1.0), "diagnostics.c2"),
        "c3": _as_number(_get(dia, "diagnostics", "c3", 1.0), "diagnostics.c3"),
        "c_max": _as_number(_get(dia, "diagnostics", "c_max", 1.0), "diagnostics.c_max"),
        "epsilon": _as_number(_get(dia, "diagnostics", "epsilon", 1.0),
                              "diagnostics.epsilon"),
    }

    sch = _get(raw, "<root>", "scheme", {})
    _expect_table(sch, "scheme", {"kind"})
    scheme = _get(sch, "scheme", "kind", "semi_implicit")
    if scheme not in ("semi_implicit", "midpoint"):
        raise ConfigError("scheme.kind", f"unknown scheme {scheme!r}")

    workers = _as_int(_get(raw, "<root>", "workers", 0), "workers", 0)
    exp = _get(raw, "<root>", "export", {})
    _expect_table(exp, "export", {"paths"})
    export_paths = _as_int(_get(exp, "export", "paths", 1), "export.paths", 0)

    return Scenario(
        raw=raw, space=space, q_res=q_res, nu=nu, alpha=alpha, t_final=t_final,
        n_steps=n_steps, scheme=scheme, y0=y0, noise_family=family, noise_m=m,
        noise_gain=gain, noise_saturation=saturation, noise_kind=kind,
        n_paths=n_paths, seed=seed, anchors=anchors, lam_u=lam_u,
        tracking_kind=tracking_kind, tracking_weight=tracking_weight,
        tracking_modes=tracking_modes, tracking_coeffs=tracking_coeffs,
        planted_modes=planted_modes, planted_coeffs=planted_coeffs,
        terminal_kind=terminal_kind, terminal_target_spec=terminal_target_spec,
        parametrization=parametrization, bound_m=bound_m, u0_modes=u0_modes,
        u0_coeffs=u0_coeffs, direction_modes=direction_modes,
        direction_coeffs=direction_coeffs, optimizer=optimizer,
        diagnostics=diagnostics, workers=workers, export_paths=export_paths,
    )
