"""Divergence-free spectral basis on the unit square and the sigma = I - alpha*Lap algebra.

Velocity fields are expanded over stream-function modes

    psi_jk(x, y) = sin(j pi x) sin(k pi y),      j, k = 1..N,
    h_jk = perp-grad psi_jk = (d psi/dy, -d psi/dx),

so every represented field is automatically divergence free, tangent to the
boundary (v.n = 0), satisfies the slip condition (n.Dv).tau = 0 and has zero
vorticity trace on each (flat) side.  Each h_jk is a Laplacian eigenfield,
Lap h_jk = -lam h_jk with lam = pi^2 (j^2 + k^2), which makes sigma = I - alpha*Lap,
its inverse, and every norm used here diagonal in the mode index.

Coefficient convention
----------------------
Coefficients are stored over the V-orthonormal basis h~_jk = h_jk / ||h_jk||_V,
where (u, v)_V = (sigma(u), v)_L2 = (u, v)_L2 + 2 alpha (Du, Dv)_L2.  With this
choice, for a field with coefficient vector c:

    ||v||_V^2        = sum c^2
    ||v||_L2^2       = sum c^2 / (1 + alpha lam)
    ||Dv||_L2^2      = sum c^2 lam / (2 (1 + alpha lam))
    ||curl sigma v||^2 = sum c^2 (1 + alpha lam) lam
    ||v||_W^2        = sum c^2 (2 + alpha lam)
    ||v||_Wt^2       = sum c^2 ((1 + alpha lam) lam + 1)
    ||v||_**^2       = 2 alpha ||Dv||^2 + ||curl sigma v||^2
    ||v||_Hs^2       = sum c^2 (1 + lam)^s / (1 + alpha lam)   (spectral Sobolev)

and the Rayleigh quotient of the W- against the V-inner product is
mu = 2 + alpha lam per mode (the compact-injection eigenvalue; mu -> inf).

Quadrature
----------
All pairings use the tensor midpoint rule x_q = (q + 1/2)/Q.  Products of the
basis fields and their derivatives expand into pure cosine polynomials per
direction (odd sine factors always pair up), and the midpoint rule sums
cos(m pi x_q) to exactly zero for 0 < m < 2Q.  Hence quadratic pairings are
exact for Q >= N + 1 and cubic (trilinear) pairings for 2Q > 3N; the stricter
documented requirements Q >= 2N + 1 and Q >= 3N + 1 are enforced to keep a
wide safety margin against silent aliasing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

NORM_KINDS = ("L2", "V", "W", "Wtilde", "H1", "H2", "H3")


class BandError(ValueError):
    """Raised when a grid resolution is too small for the requested band."""


def _mode_table(n_band: int) -> tuple[np.ndarray, np.ndarray]:
    js = np.repeat(np.arange(1, n_band + 1), n_band)
    ks = np.tile(np.arange(1, n_band + 1), n_band)
    return js, ks


class SpectralSpace:
    """Band of stream-function modes (j, k) in 1..N x 1..N at a fixed alpha."""

    def __init__(self, n_band: int, alpha: float):
        if n_band < 1:
            raise ValueError("band cutoff N must be >= 1")
        if alpha < 0:
            raise ValueError("material modulus alpha must be >= 0")
        self.n_band = int(n_band)
        self.alpha = float(alpha)
        self.js, self.ks = _mode_table(self.n_band)
        self.n_modes = self.n_band * self.n_band
        self.lam = math.pi**2 * (self.js.astype(float) ** 2 + self.ks.astype(float) ** 2)
        self.sig = 1.0 + self.alpha * self.lam
        # mu solves (v, h)_W = mu (v, h)_V on the band; closed form per mode.
        self.mu = 2.0 + self.alpha * self.lam
        # raw basis h_jk has ||h||_L2^2 = lam/4 and ||h||_V^2 = lam sig / 4
        self.basis_scale = 2.0 / np.sqrt(self.lam * self.sig)
        self._norm_weights = {
            "L2": 1.0 / self.sig,
            "V": np.ones(self.n_modes),
            "W": self.mu.copy(),
            "Wtilde": self.sig * self.lam + 1.0,
            "H1": (1.0 + self.lam) / self.sig,
            "H2": (1.0 + self.lam) ** 2 / self.sig,
            "H3": (1.0 + self.lam) ** 3 / self.sig,
            "Dsq": self.lam / (2.0 * self.sig),
            "curl_sigma": self.sig * self.lam,
        }
        self._norm_weights["starstar"] = (
            2.0 * self.alpha * self._norm_weights["Dsq"] + self._norm_weights["curl_sigma"]
        )

    def __repr__(self) -> str:
        return f"SpectralSpace(N={self.n_band}, alpha={self.alpha})"

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, SpectralSpace)
            and other.n_band == self.n_band
            and other.alpha == self.alpha
        )

    def __hash__(self) -> int:
        return hash((self.n_band, self.alpha))

    def mode_index(self, j: int, k: int) -> int:
        if not (1 <= j <= self.n_band and 1 <= k <= self.n_band):
            raise ValueError(f"mode ({j},{k}) outside band 1..{self.n_band}")
        return (j - 1) * self.n_band + (k - 1)

    def norm_weights(self, kind: str) -> np.ndarray:
        try:
            return self._norm_weights[kind]
        except KeyError:
            raise ValueError(f"unknown norm kind {kind!r}") from None

    def zero_coeffs(self) -> np.ndarray:
        return np.zeros(self.n_modes)

    def field(self, coeffs) -> "SpectralField":
        return SpectralField(self, np.asarray(coeffs, dtype=float))

    def zero_field(self) -> "SpectralField":
        return SpectralField(self, self.zero_coeffs())

    def unit_mode(self, j: int, k: int, coeff: float = 1.0) -> "SpectralField":
        c = self.zero_coeffs()
        c[self.mode_index(j, k)] = coeff
        return SpectralField(self, c)

    def field_from_modes(self, modes, coeffs) -> "SpectralField":
        c = self.zero_coeffs()
        for (j, k), a in zip(modes, coeffs):
            c[self.mode_index(int(j), int(k))] += float(a)
        return SpectralField(self, c)


@lru_cache(maxsize=32)
def get_space(n_band: int, alpha: float) -> SpectralSpace:
    return SpectralSpace(n_band, alpha)


def basis_eigenvalues(j: int, k: int, alpha: float) -> tuple[float, float]:
    """Laplacian eigenvalue lam and W-vs-V Rayleigh quotient mu of mode (j, k)."""
    if j < 1 or k < 1:
        raise ValueError(f"mode numbers must be positive, got ({j},{k})")
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    lam = math.pi**2 * (j * j + k * k)
    mu = 2.0 + alpha * lam
    return lam, mu


@dataclass(frozen=True)
class SpectralField:
    """Velocity field as V-orthonormal coefficients over a SpectralSpace band."""

    space: SpectralSpace
    coeffs: np.ndarray

    def __post_init__(self):
        if self.coeffs.shape != (self.space.n_modes,):
            raise ValueError(
                f"coefficient vector has shape {self.coeffs.shape}, "
                f"expected ({self.space.n_modes},)"
            )

    def copy(self) -> "SpectralField":
        return SpectralField(self.space, self.coeffs.copy())

    def __add__(self, other: "SpectralField") -> "SpectralField":
        _check_same_space(self, other)
        return SpectralField(self.space, self.coeffs + other.coeffs)

    def __sub__(self, other: "SpectralField") -> "SpectralField":
        _check_same_space(self, other)
        return SpectralField(self.space, self.coeffs - other.coeffs)

    def __mul__(self, a: float) -> "SpectralField":
        return SpectralField(self.space, self.coeffs * float(a))

    __rmul__ = __mul__

    def norm(self, kind: str = "V") -> float:
        return norm(self, kind)

    def evaluate(self, x, y) -> tuple[np.ndarray, np.ndarray]:
        return evaluate_velocity(self, x, y)


def _check_same_space(u: SpectralField, v: SpectralField):
    if u.space != v.space:
        raise ValueError("fields live on different spectral bands")


def norm(v: SpectralField, kind: str = "V") -> float:
    w = v.space.norm_weights(kind)
    return float(np.sqrt(np.dot(w, v.coeffs**2)))


def norm_sq_from_coeffs(space: SpectralSpace, coeffs: np.ndarray, kind: str) -> np.ndarray:
    """Squared norm along the last axis of a stacked coefficient array."""
    w = space.norm_weights(kind)
    return np.einsum("...i,i->...", np.asarray(coeffs) ** 2, w)


def sigma_apply(v: SpectralField) -> SpectralField:
    """Apply sigma = I - alpha*Lap, i.e. multiply mode-wise by (1 + alpha lam)."""
    return SpectralField(v.space, v.coeffs * v.space.sig)


def sigma_inverse(f: SpectralField) -> SpectralField:
    """Invert sigma mode-wise; exact inverse of sigma_apply on the band."""
    return SpectralField(f.space, f.coeffs / f.space.sig)


# ---------------------------------------------------------------------------
# quadrature grid, evaluation, transforms


@dataclass(frozen=True)
class PhysicalField:
    """Velocity samples (Q, Q, 2) on the tensor midpoint grid of [0,1]^2."""

    grid: np.ndarray

    def __post_init__(self):
        if self.grid.ndim != 3 or self.grid.shape[2] != 2 or self.grid.shape[0] != self.grid.shape[1]:
            raise ValueError(f"grid must have shape (Q, Q, 2), got {self.grid.shape}")

    @property
    def resolution(self) -> int:
        return self.grid.shape[0]


def quad_nodes(q_res: int) -> np.ndarray:
    return (np.arange(q_res) + 0.5) / q_res


@lru_cache(maxsize=64)
def _basis_factors(n_band: int, q_res: int):
    """Tensor factors of the basis and its first derivatives on the midpoint grid."""
    x = quad_nodes(q_res)
    m = np.arange(1, n_band + 1)
    ang = np.pi * np.outer(m, x)          # (N, Q)
    sin_t = np.sin(ang)
    cos_t = np.cos(ang)
    dsin = (np.pi * m)[:, None] * cos_t   # d/dx sin(m pi x)
    dcos = -(np.pi * m)[:, None] * sin_t  # d/dx cos(m pi x)
    return sin_t, cos_t, dsin, dcos


def _coeff_grid(v: SpectralField) -> tuple[np.ndarray, np.ndarray]:
    """Per-mode amplitude tables A1[j,k], A2[j,k] of the two velocity components."""
    sp = v.space
    n = sp.n_band
    c = (v.coeffs * sp.basis_scale).reshape(n, n)
    kpi = np.pi * np.arange(1, n + 1)
    jpi = np.pi * np.arange(1, n + 1)
    a1 = c * kpi[None, :]   # u1 = sum a1 sin(j pi x) cos(k pi y)
    a2 = -c * jpi[:, None]  # u2 = sum a2 cos(j pi x) sin(k pi y)
    return a1, a2


def to_physical(v: SpectralField, q_res: int) -> PhysicalField:
    """Evaluate the velocity on the Q x Q midpoint grid (exact for the band)."""
    sp = v.space
    if q_res < 2 * sp.n_band + 1:
        raise BandError(
            f"grid resolution Q={q_res} below transform requirement 2N+1={2*sp.n_band+1}"
        )
    u1, u2 = velocity_grids(v, q_res)
    return PhysicalField(np.stack([u1, u2], axis=-1))


def velocity_grids(v: SpectralField, q_res: int) -> tuple[np.ndarray, np.ndarray]:
    sin_t, cos_t, _, _ = _basis_factors(v.space.n_band, q_res)
    a1, a2 = _coeff_grid(v)
    u1 = sin_t.T @ a1 @ cos_t
    u2 = cos_t.T @ a2 @ sin_t
    return u1, u2


def gradient_grids(v: SpectralField, q_res: int) -> np.ndarray:
    """Velocity gradient samples, shape (Q, Q, 2, 2) with entry [.., i, l] = d u_i / d x_l."""
    sin_t, cos_t, dsin, dcos = _basis_factors(v.space.n_band, q_res)
    a1, a2 = _coeff_grid(v)
    out = np.empty((q_res, q_res, 2, 2))
    out[:, :, 0, 0] = dsin.T @ a1 @ cos_t
    out[:, :, 0, 1] = sin_t.T @ a1 @ dcos
    out[:, :, 1, 0] = dcos.T @ a2 @ sin_t
    out[:, :, 1, 1] = cos_t.T @ a2 @ dsin
    return out


def hessian_grids(v: SpectralField, q_res: int) -> np.ndarray:
    """Second derivatives on the grid, shape (Q, Q, 2, 2, 2): [.., c, l1, l2] = d2 u_c / dx_l1 dx_l2."""
    sin_t, cos_t, dsin, dcos = _basis_factors(v.space.n_band, q_res)
    m = np.arange(1, v.space.n_band + 1)
    d2sin = -((np.pi * m) ** 2)[:, None] * sin_t
    d2cos = -((np.pi * m) ** 2)[:, None] * cos_t
    a1, a2 = _coeff_grid(v)
    out = np.empty((q_res, q_res, 2, 2, 2))
    out[:, :, 0, 0, 0] = d2sin.T @ a1 @ cos_t
    out[:, :, 0, 0, 1] = dsin.T @ a1 @ dcos
    out[:, :, 0, 1, 0] = out[:, :, 0, 0, 1]
    out[:, :, 0, 1, 1] = sin_t.T @ a1 @ d2cos
    out[:, :, 1, 0, 0] = d2cos.T @ a2 @ sin_t
    out[:, :, 1, 0, 1] = dcos.T @ a2 @ dsin
    out[:, :, 1, 1, 0] = out[:, :, 1, 0, 1]
    out[:, :, 1, 1, 1] = cos_t.T @ a2 @ d2sin
    return out


def curl_sigma_grid(v: SpectralField, q_res: int) -> np.ndarray:
    """Scalar samples of curl sigma(v) = sum c (1+alpha lam) lam scale psi_jk."""
    sp = v.space
    sin_t, _, _, _ = _basis_factors(sp.n_band, q_res)
    amp = (v.coeffs * sp.basis_scale * sp.sig * sp.lam).reshape(sp.n_band, sp.n_band)
    return sin_t.T @ amp @ sin_t


def grid_inner(a: np.ndarray, b: np.ndarray) -> float:
    """Midpoint-rule L2 inner product of two grid sample arrays."""
    if a.shape != b.shape:
        raise BandError(f"grid shapes differ: {a.shape} vs {b.shape}")
    q_res = a.shape[0]
    return float(np.sum(a * b) / (q_res * q_res))


def to_spectral(w: PhysicalField, space: SpectralSpace) -> SpectralField:
    """L2 projection of grid samples onto the band (inverse of to_physical there)."""
    q_res = w.resolution
    if q_res < 2 * space.n_band + 1:
        raise BandError(
            f"grid resolution Q={q_res} below transform requirement 2N+1={2*space.n_band+1}"
        )
    sin_t, cos_t, _, _ = _basis_factors(space.n_band, q_res)
    n = space.n_band
    w1 = w.grid[:, :, 0]
    w2 = w.grid[:, :, 1]
    # (w, h_jk)_L2 assembled from the separable trig factors
    kpi = np.pi * np.arange(1, n + 1)
    jpi = np.pi * np.arange(1, n + 1)
    t1 = (sin_t @ w1 @ cos_t.T) * kpi[None, :]
    t2 = -(cos_t @ w2 @ sin_t.T) * jpi[:, None]
    raw = (t1 + t2) / (q_res * q_res)
    # (w, h~_i) * (1 + alpha lam) recovers V-orthonormal coefficients
    coeffs = raw.reshape(-1) * space.basis_scale * space.sig
    return SpectralField(space, coeffs)


def leray_project(w: PhysicalField, space: SpectralSpace) -> SpectralField:
    """L2-orthogonal projection onto the divergence-free band (discrete Leray map)."""
    return to_spectral(w, space)


# ---------------------------------------------------------------------------
# pointwise evaluation and boundary diagnostics


def evaluate_velocity(v: SpectralField, x, y) -> tuple[np.ndarray, np.ndarray]:
    """Evaluate (u1, u2) at arbitrary points; x and y broadcast together."""
    sp = v.space
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    js = sp.js
    ks = sp.ks
    amp = v.coeffs * sp.basis_scale
    sx = np.sin(np.pi * np.multiply.outer(x, js))
    cx = np.cos(np.pi * np.multiply.outer(x, js))
    sy = np.sin(np.pi * np.multiply.outer(y, ks))
    cy = np.cos(np.pi * np.multiply.outer(y, ks))
    u1 = (amp * np.pi * ks) * sx * cy
    u2 = -(amp * np.pi * js) * cx * sy
    return u1.sum(axis=-1), u2.sum(axis=-1)


def evaluate_gradient(v: SpectralField, x, y) -> np.ndarray:
    """Velocity gradient at arbitrary points, shape (..., 2, 2)."""
    sp = v.space
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    js, ks = sp.js, sp.ks
    amp = v.coeffs * sp.basis_scale
    sx = np.sin(np.pi * np.multiply.outer(x, js))
    cx = np.cos(np.pi * np.multiply.outer(x, js))
    sy = np.sin(np.pi * np.multiply.outer(y, ks))
    cy = np.cos(np.pi * np.multiply.outer(y, ks))
    jpi = np.pi * js
    kpi = np.pi * ks
    out = np.empty(x.shape + (2, 2))
    out[..., 0, 0] = ((amp * kpi * jpi) * cx * cy).sum(axis=-1)
    out[..., 0, 1] = -((amp * kpi * kpi) * sx * sy).sum(axis=-1)
    out[..., 1, 0] = ((amp * jpi * jpi) * sx * sy).sum(axis=-1)
    out[..., 1, 1] = -((amp * jpi * kpi) * cx * cy).sum(axis=-1)
    return out


_SIDES = (
    # (point parametrization, outward normal)
    (lambda s: (np.zeros_like(s), s), (-1.0, 0.0)),
    (lambda s: (np.ones_like(s), s), (1.0, 0.0)),
    (lambda s: (s, np.zeros_like(s)), (0.0, -1.0)),
    (lambda s: (s, np.ones_like(s)), (0.0, 1.0)),
)


def boundary_diagnostics(v: SpectralField, n_samples: int = 64) -> dict:
    """Max |v.n|, |(n.Dv).tau| and |curl v| sampled along the four sides."""

    def vel(x, y):
        return evaluate_velocity(v, x, y)

    def grad(x, y):
        return evaluate_gradient(v, x, y)

    return boundary_traces(vel, grad, n_samples)


def boundary_traces(velocity_fn, gradient_fn, n_samples: int = 64) -> dict:
    """Boundary-trace maxima for velocity/gradient samplers (arbitrary fields)."""
    s = quad_nodes(n_samples)
    vn_max = 0.0
    slip_max = 0.0
    curl_max = 0.0
    for par, (n1, n2) in _SIDES:
        x, y = par(s)
        u1, u2 = velocity_fn(x, y)
        g = gradient_fn(x, y)
        t1, t2 = -n2, n1
        vn = u1 * n1 + u2 * n2
        d = 0.5 * (g + np.swapaxes(g, -1, -2))
        dn1 = d[..., 0, 0] * n1 + d[..., 0, 1] * n2
        dn2 = d[..., 1, 0] * n1 + d[..., 1, 1] * n2
        slip = dn1 * t1 + dn2 * t2
        curl = g[..., 1, 0] - g[..., 0, 1]
        vn_max = max(vn_max, float(np.abs(vn).max()))
        slip_max = max(slip_max, float(np.abs(slip).max()))
        curl_max = max(curl_max, float(np.abs(curl).max()))
    return {"v_dot_n": vn_max, "slip": slip_max, "curl": curl_max}


def random_field(space: SpectralSpace, rng: np.random.Generator, scale: float = 1.0,
                 decay: float = 1.0) -> SpectralField:
    """Random band field with V-coefficients ~ N(0, scale^2 / (1+lam)^decay)."""
    c = rng.standard_normal(space.n_modes) * scale / (1.0 + space.lam) ** decay
    return SpectralField(space, c)
