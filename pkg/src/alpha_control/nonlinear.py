"""Trilinear transport pairings and the transport terms of the state, tangent
and adjoint equations.

Everything funnels through the convective form b(u, v, w) = ((u.grad) v, w).
The transport pairings are always computed through the integrated-by-parts
combinations

    (curl sigma(v) x u, phi)   = b(phi, u, sigma(v)) - b(u, phi, sigma(v))
    (curl sigma(u x v), phi)   = b(v, u, sigma(phi)) - b(u, v, sigma(phi))

never by forming curl sigma(.) pointwise and multiplying: the combinations
are what make every boundary contribution vanish and they avoid third
derivatives.  On the band they reduce to contractions of one cached tensor

    braw[a, b, c] = b(h~_a, h~_b, h~_c),

so the tangent drift matrix and the adjoint drift matrix are literal
transposes of each other, which the backward solver exploits.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .spectral import (
    BandError,
    SpectralField,
    SpectralSpace,
    _check_same_space,
    gradient_grids,
    grid_inner,
    hessian_grids,
    sigma_apply,
    velocity_grids,
)


def min_trilinear_resolution(n_band: int) -> int:
    return 3 * n_band + 1


def _advect(u_grid: np.ndarray, grad_v: np.ndarray) -> np.ndarray:
    """(u.grad) v on the grid; u_grid (Q,Q,2), grad_v (Q,Q,2,2) -> (Q,Q,2)."""
    return np.einsum("qrl,qrcl->qrc", u_grid, grad_v)


def trilinear_b(u: SpectralField, v: SpectralField, w: SpectralField,
                q_res: int | None = None) -> float:
    """Convective pairing b(u, v, w) = int (u.grad v).w by exact-band quadrature."""
    _check_same_space(u, v)
    _check_same_space(u, w)
    n_band = u.space.n_band
    if q_res is None:
        q_res = min_trilinear_resolution(n_band)
    if q_res < min_trilinear_resolution(n_band):
        raise BandError(
            f"trilinear quadrature needs Q >= 3N+1 = {min_trilinear_resolution(n_band)}, got {q_res}"
        )
    ug = np.stack(velocity_grids(u, q_res), axis=-1)
    wg = np.stack(velocity_grids(w, q_res), axis=-1)
    gv = gradient_grids(v, q_res)
    return grid_inner(_advect(ug, gv), wg)


def _b_grid(u_grid, grad_v, w_grid) -> float:
    return grid_inner(_advect(u_grid, grad_v), w_grid)


class PairingOps:
    """Cached transport tensors on one band at one quadrature resolution."""

    def __init__(self, space: SpectralSpace, q_res: int):
        if q_res < min_trilinear_resolution(space.n_band):
            raise BandError(
                f"pairing tensors need Q >= 3N+1 = {min_trilinear_resolution(space.n_band)}, "
                f"got {q_res}"
            )
        self.space = space
        self.q_res = q_res
        n = space.n_modes
        vals = np.empty((n, q_res, q_res, 2))
        grads = np.empty((n, q_res, q_res, 2, 2))
        for i in range(n):
            e = space.zero_coeffs()
            e[i] = 1.0
            f = SpectralField(space, e)
            vals[i] = np.stack(velocity_grids(f, q_res), axis=-1)
            grads[i] = gradient_grids(f, q_res)
        # braw[a,b,c] = b(h~_a, h~_b, h~_c)
        adv = np.einsum("aqrl,bqrcl->abqrc", vals, grads)
        self.braw = np.einsum("abqrc,dqrc->abd", adv, vals) / (q_res * q_res)
        # t3[i,a,b] = (1+alpha lam_b) (braw[i,a,b] - braw[a,i,b])
        #           = coefficient of y_a z_b in (curl sigma(Z) x Y, h~_i)
        self.t3 = space.sig[None, None, :] * (self.braw - self.braw.transpose(1, 0, 2))

    # -- dual-vector pairings (batched over leading axes of the coeff arrays) --

    def state_nonlinearity(self, y: np.ndarray) -> np.ndarray:
        """(curl sigma(Y) x Y, h~_i) for coefficient stacks y of shape (..., n)."""
        return np.einsum("iab,...a,...b->...i", self.t3, y, y)

    def linearized_pairing(self, y: np.ndarray, z: np.ndarray) -> np.ndarray:
        """(curl sigma(Z) x Y + curl sigma(Y) x Z, h~_i), batched."""
        return (np.einsum("iab,...a,...b->...i", self.t3, y, z)
                + np.einsum("iab,...a,...b->...i", self.t3, z, y))

    def adjoint_transport(self, y: np.ndarray, p: np.ndarray) -> np.ndarray:
        """(curl sigma(Y x p), h~_i) = b(p, Y, sigma h~_i) - b(Y, p, sigma h~_i), batched."""
        out = (np.einsum("abi,...a,...b->...i", self.braw, p, y)
               - np.einsum("abi,...a,...b->...i", self.braw, y, p))
        return out * self.space.sig

    def tangent_drift(self, y: np.ndarray, z: np.ndarray) -> np.ndarray:
        """Transport drift of the tangent equation: minus linearized_pairing."""
        return -self.linearized_pairing(y, z)

    def tangent_drift_transposed(self, y: np.ndarray, p: np.ndarray) -> np.ndarray:
        """Action of the transposed tangent drift matrix on p, batched.

        Identical contraction pattern as tangent_drift with the free index
        moved, so the two are exact matrix transposes of each other.
        """
        return -(np.einsum("iaj,...a,...i->...j", self.t3, y, p)
                 + np.einsum("ijb,...b,...i->...j", self.t3, y, p))

    def linearized_matrix(self, y: np.ndarray) -> np.ndarray:
        """Dense tangent transport matrix T(Y) with (T z)_i the tangent drift."""
        return -(np.einsum("iaj,a->ij", self.t3, y) + np.einsum("ijb,b->ij", self.t3, y))

    def adjoint_matrix(self, y: np.ndarray) -> np.ndarray:
        """Dense adjoint transport drift matrix; equals linearized_matrix(y).T."""
        return -(np.einsum("iaj,a->ji", self.t3, y) + np.einsum("ijb,b->ji", self.t3, y))


@lru_cache(maxsize=16)
def _pairing_ops_cached(n_band: int, alpha: float, q_res: int) -> PairingOps:
    from .spectral import get_space

    return PairingOps(get_space(n_band, alpha), q_res)


def get_pairing_ops(space: SpectralSpace, q_res: int | None = None) -> PairingOps:
    if q_res is None:
        q_res = min_trilinear_resolution(space.n_band)
    return _pairing_ops_cached(space.n_band, space.alpha, q_res)


# ---------------------------------------------------------------------------
# field-level wrappers


def state_nonlinearity(y: SpectralField, q_res: int | None = None) -> np.ndarray:
    """Dual vector (curl sigma(Y) x Y, h~_i) over the band."""
    return get_pairing_ops(y.space, q_res).state_nonlinearity(y.coeffs)


def linearized_terms(y: SpectralField, z: SpectralField, q_res: int | None = None) -> np.ndarray:
    """Dual vector (curl sigma(Z) x Y + curl sigma(Y) x Z, h~_i)."""
    _check_same_space(y, z)
    return get_pairing_ops(y.space, q_res).linearized_pairing(y.coeffs, z.coeffs)


def adjoint_transport(y: SpectralField, p: SpectralField, q_res: int | None = None) -> np.ndarray:
    """Dual vector (curl sigma(Y x p), h~_i) through the sigma-on-test identity."""
    _check_same_space(y, p)
    return get_pairing_ops(y.space, q_res).adjoint_transport(y.coeffs, p.coeffs)


def adjoint_transport_alt(y: SpectralField, p: SpectralField,
                          q_res: int | None = None) -> np.ndarray:
    """Dual vector (curl sigma(Y x p), h~_i) via the expanded eight-term form.

    Cross-validation route: same quantity as adjoint_transport but assembled
    from first-derivative pairings of sigma(Y), sigma(p) and the derivative
    fields, without sigma on the test function.
    """
    _check_same_space(y, p)
    space = y.space
    if q_res is None:
        q_res = min_trilinear_resolution(space.n_band)
    if q_res < min_trilinear_resolution(space.n_band):
        raise BandError("resolution below trilinear requirement")
    alpha = space.alpha
    u, v = y, p  # (curl sigma(u x v), phi) with u = Y, v = p

    ug = np.stack(velocity_grids(u, q_res), axis=-1)
    vg = np.stack(velocity_grids(v, q_res), axis=-1)
    sug = np.stack(velocity_grids(sigma_apply(u), q_res), axis=-1)
    svg = np.stack(velocity_grids(sigma_apply(v), q_res), axis=-1)
    gu = gradient_grids(u, q_res)
    gv = gradient_grids(v, q_res)
    gsu = gradient_grids(sigma_apply(u), q_res)
    hu = hessian_grids(u, q_res)
    hv = hessian_grids(v, q_res)

    out = np.empty(space.n_modes)
    for i in range(space.n_modes):
        e = space.zero_coeffs()
        e[i] = 1.0
        phi = SpectralField(space, e)
        pg = np.stack(velocity_grids(phi, q_res), axis=-1)
        gphi = gradient_grids(phi, q_res)
        total = (
            _b_grid(svg, gu, pg)          # b(sigma v, u, phi)
            + _b_grid(ug, gphi, svg)      # b(u, phi, sigma v)
            - _b_grid(sug, gv, pg)        # -b(sigma u, v, phi)
            + _b_grid(vg, gsu, pg)        # b(v, sigma u, phi)
            + _b_grid(ug, gv, pg)         # b(u, v, phi)
            - _b_grid(vg, gu, pg)         # -b(v, u, phi)
        )
        mixed = 0.0
        for ax in range(2):
            dv_ax = gv[:, :, :, ax]               # d v / dx_ax as a vector field
            du_ax = gu[:, :, :, ax]
            grad_du_ax = hu[:, :, :, :, ax]       # grad of du/dx_ax
            grad_dv_ax = hv[:, :, :, :, ax]
            mixed += _b_grid(dv_ax, grad_du_ax, pg) - _b_grid(du_ax, grad_dv_ax, pg)
        out[i] = total - 2.0 * alpha * mixed
    return out


def curl_cross_identity_check(phi: SpectralField, psi: SpectralField, q_res: int) -> float:
    """Max pointwise residual of curl(phi x psi) = psi.grad phi - phi.grad psi.

    The left side is expanded by the product rule on the quadrature grid
    (perp-grad of the scalar cross product), so the check exercises the
    divergence-free structure of both fields.
    """
    _check_same_space(phi, psi)
    pg = np.stack(velocity_grids(phi, q_res), axis=-1)
    sg = np.stack(velocity_grids(psi, q_res), axis=-1)
    gp = gradient_grids(phi, q_res)
    gs = gradient_grids(psi, q_res)
    # s = phi x psi (scalar), grad s by product rule
    ds = (np.einsum("qrcl,qrc->qrl", gp, sg[:, :, ::-1] * np.array([1.0, -1.0]))
          + np.einsum("qrc,qrcl->qrl", pg[:, :, ::-1] * np.array([-1.0, 1.0]), gs))
    # curl (0,0,s) = (ds/dy, -ds/dx)
    lhs = np.stack([ds[:, :, 1], -ds[:, :, 0]], axis=-1)
    rhs = _advect(sg, gp) - _advect(pg, gs)
    return float(np.abs(lhs - rhs).max())
