"""Geometry of the oblique manifold OM(n, p).

Points are real n x p matrices whose columns all have unit Euclidean norm,
i.e. the manifold is a product of p unit spheres S^{n-1}. Tangent vectors at
K are matrices H with diag(K^T H) = 0. The module provides projection onto
the manifold and its tangent spaces, exponential and logarithmic maps, and
the product geodesic distance.

Two map variants are exposed through GeometryMode:

* EXACT applies the closed-form sphere exp/log to each column separately.
  This is the true product geometry; exp and log are mutual inverses within
  the injectivity radius of every column.
* GLOBAL_NORM evaluates the sphere formulas once with matrix-wide Frobenius
  norms, then re-projects the result column by column. It coincides with
  EXACT only at p = 1 and is kept as a faithful reproduction of that
  formulation; the trailing projection is mandatory because the raw formula
  leaves the manifold for p > 1.

Both variants share the same distance function.

The *_batch functions are the low-level array API used by the classifier and
the optimizer. They broadcast over arbitrary leading axes, skip the type
validation done by the OMPoint/TangentVector wrappers, and assume their
inputs already have unit columns.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import (
    AntipodalColumn,
    DegenerateColumn,
    NonFinite,
    NotOnManifold,
    NotTangent,
    ShapeMismatch,
)

UNIT_NORM_TOL = 1e-9       # |col norm - 1| allowed on points
TANGENT_TOL = 1e-9         # |diag(K^T H)| allowed on tangent vectors
TANGENT_ARG_TOL = 1e-6     # looser check applied to exp_map arguments
DEGENERATE_NORM = 1e-12    # column norms below this cannot be normalized
ANTIPODAL_TOL = 1e-9       # |<k, x> + 1| at or below this is antipodal
COINCIDENT_DIST = 1e-9     # distances below this are treated as zero
LOG_SMALL_ANGLE = 1e-3     # switch to series for theta/sin(theta) terms


class GeometryMode(enum.Enum):
    """Selects how exp/log treat the product structure."""

    EXACT = "exact"
    GLOBAL_NORM = "paper"


@dataclass(frozen=True)
class OMPoint:
    """A point on OM(n, p): an n x p matrix with unit-norm columns."""

    data: np.ndarray

    def __post_init__(self) -> None:
        arr = np.ascontiguousarray(np.asarray(self.data, dtype=np.float64))
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ShapeMismatch(f"point must be a 2-d matrix, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise NonFinite("point contains non-finite entries")
        err = np.abs(np.linalg.norm(arr, axis=0) - 1.0)
        if err.size and float(err.max()) >= UNIT_NORM_TOL:
            j = int(err.argmax())
            raise NotOnManifold(
                f"column {j} norm deviates from 1 by {float(err.max()):.3e}"
            )
        object.__setattr__(self, "data", arr)

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def p(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class TangentVector:
    """A tangent vector at ``base``: same shape, diag(base^T data) = 0."""

    data: np.ndarray
    base: OMPoint

    def __post_init__(self) -> None:
        arr = np.ascontiguousarray(np.asarray(self.data, dtype=np.float64))
        if arr.shape != self.base.data.shape:
            raise ShapeMismatch(
                f"tangent shape {arr.shape} != base shape {self.base.data.shape}"
            )
        if not np.all(np.isfinite(arr)):
            raise NonFinite("tangent vector contains non-finite entries")
        resid = np.abs(np.einsum("ij,ij->j", self.base.data, arr))
        if resid.size and float(resid.max()) >= TANGENT_TOL:
            j = int(resid.argmax())
            raise NotTangent(
                f"column {j}: <base, data> = {float(resid.max()):.3e} exceeds {TANGENT_TOL}"
            )
        object.__setattr__(self, "data", arr)

    def norm(self) -> float:
        """Frobenius norm, i.e. the product-metric length."""
        return float(np.linalg.norm(self.data))


def _col_dots(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Columnwise inner products; broadcasts leading axes. (..., n, p) -> (..., p)."""
    return np.einsum("...ij,...ij->...j", a, b)


def _as_matrix(value, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeMismatch(f"{name} must be a 2-d matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFinite(f"{name} contains non-finite entries")
    return arr


def project_to_om(matrix) -> OMPoint:
    """Normalize every column to unit length.

    Raises DegenerateColumn if any column norm is below 1e-12.
    """
    arr = _as_matrix(matrix, "matrix")
    norms = np.linalg.norm(arr, axis=0)
    bad = norms < DEGENERATE_NORM
    if np.any(bad):
        j = int(np.argmax(bad))
        raise DegenerateColumn(f"column {j} has norm {norms[j]:.3e} < {DEGENERATE_NORM}")
    return OMPoint(arr / norms)


def tangent_project(point: OMPoint, matrix) -> TangentVector:
    """Project an ambient matrix onto the tangent space at ``point``.

    Columnwise: v_j - <k_j, v_j> k_j.
    """
    arr = _as_matrix(matrix, "matrix")
    if arr.shape != point.data.shape:
        raise ShapeMismatch(f"matrix shape {arr.shape} != point shape {point.data.shape}")
    out = arr - point.data * _col_dots(point.data, arr)[..., None, :]
    return TangentVector(out, point)


def _check_pair(a: OMPoint, b: OMPoint) -> None:
    if a.data.shape != b.data.shape:
        raise ShapeMismatch(f"operand shapes differ: {a.data.shape} vs {b.data.shape}")


def distance_batch(k: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Geodesic distance sqrt(sum_j arccos^2(<k_j, x_j>)); broadcasts."""
    c = np.clip(_col_dots(k, x), -1.0, 1.0)
    theta = np.arccos(c)
    return np.sqrt(np.einsum("...j,...j->...", theta, theta))


def geodesic_distance(point: OMPoint, other: OMPoint) -> float:
    """Product geodesic distance between two points. Bounded by pi * sqrt(p)."""
    _check_pair(point, other)
    return float(distance_batch(point.data, other.data))


def _check_antipodal(c_raw: np.ndarray) -> None:
    if np.any(c_raw + 1.0 <= ANTIPODAL_TOL):
        raise AntipodalColumn(
            "log map undefined: a column pair is antipodal within 1e-9"
        )


def log_batch(
    k: np.ndarray, x: np.ndarray, mode: GeometryMode = GeometryMode.EXACT
) -> np.ndarray:
    """Log map as arrays, broadcasting leading axes. No antipodal check."""
    c = np.clip(_col_dots(k, x), -1.0, 1.0)
    theta = np.arccos(c)
    v = x - k * c[..., None, :]
    dist2 = np.einsum("...j,...j->...", theta, theta)
    live = dist2 >= COINCIDENT_DIST**2
    if mode is GeometryMode.EXACT:
        rho = np.sqrt(_col_dots(v, v))
        scale = np.where(
            rho > DEGENERATE_NORM, theta / np.maximum(rho, DEGENERATE_NORM), 0.0
        )
        out = v * scale[..., None, :]
    else:
        big_r = np.sqrt(np.einsum("...ij,...ij->...", v, v))
        big_d = np.sqrt(dist2)
        scale = np.where(
            big_r > DEGENERATE_NORM, big_d / np.maximum(big_r, DEGENERATE_NORM), 0.0
        )
        out = v * scale[..., None, None]
    return out * live[..., None, None]


def exp_batch(
    k: np.ndarray, h: np.ndarray, mode: GeometryMode = GeometryMode.EXACT
) -> np.ndarray:
    """Exp map as arrays, broadcasting leading axes.

    GLOBAL_NORM output is re-projected column by column; EXACT output has unit
    columns by construction.
    """
    if mode is GeometryMode.EXACT:
        nrm = np.sqrt(_col_dots(h, h))
        safe = np.maximum(nrm, DEGENERATE_NORM)
        out = k * np.cos(nrm)[..., None, :] + (h / safe[..., None, :]) * np.sin(nrm)[..., None, :]
        zero = nrm < DEGENERATE_NORM
        return np.where(zero[..., None, :], np.broadcast_to(k, out.shape), out)
    nrm = np.sqrt(np.einsum("...ij,...ij->...", h, h))
    safe = np.maximum(nrm, DEGENERATE_NORM)
    out = k * np.cos(nrm)[..., None, None] + (h / safe[..., None, None]) * np.sin(nrm)[..., None, None]
    zero = nrm < DEGENERATE_NORM
    out = np.where(zero[..., None, None], np.broadcast_to(k, out.shape), out)
    cols = np.sqrt(_col_dots(out, out))
    if np.any(cols < DEGENERATE_NORM):
        raise DegenerateColumn("re-projection after exp hit a near-zero column")
    return out / cols[..., None, :]


def exp_map(point: OMPoint, tangent, mode: GeometryMode = GeometryMode.EXACT) -> OMPoint:
    """Follow the geodesic from ``point`` with initial velocity ``tangent``.

    Accepts a TangentVector or a raw matrix; either way the argument must be
    tangent at ``point`` within 1e-6.
    """
    arr = tangent.data if isinstance(tangent, TangentVector) else _as_matrix(tangent, "tangent")
    if arr.shape != point.data.shape:
        raise ShapeMismatch(f"tangent shape {arr.shape} != point shape {point.data.shape}")
    resid = np.abs(_col_dots(point.data, arr))
    if resid.size and float(resid.max()) >= TANGENT_ARG_TOL:
        raise NotTangent(
            f"argument is not tangent at the base point (residual {float(resid.max()):.3e})"
        )
    return OMPoint(exp_batch(point.data, arr, mode))


def log_map(point: OMPoint, other: OMPoint, mode: GeometryMode = GeometryMode.EXACT) -> TangentVector:
    """Tangent vector at ``point`` pointing to ``other``.

    Raises AntipodalColumn when any column pair is antipodal within 1e-9.
    Returns the exact zero vector when the points are closer than 1e-9.
    """
    _check_pair(point, other)
    _check_antipodal(_col_dots(point.data, other.data))
    return TangentVector(log_batch(point.data, other.data, mode), point)


def log_batch_vjp(
    k: np.ndarray,
    x: np.ndarray,
    g: np.ndarray,
    mode: GeometryMode,
    need_x: bool = True,
    need_k: bool = True,
) -> tuple[np.ndarray | None, np.ndarray | None]:
    """Pull the cotangent ``g`` back through ``log_batch`` at (k, x).

    Returns per-pair gradients (same broadcast shape as the forward output)
    with respect to the ambient coordinates of x and of k; callers restrict
    them to tangent spaces. Pairs the forward flushed to zero (distance below
    1e-9) contribute zero gradient, matching the documented derivative of the
    flush. The clamp on <k_j, x_j> is active only at |cos| = 1 where the limit
    values of the coefficients are used, so no extra masking is needed.
    """
    c = np.clip(_col_dots(k, x), -1.0, 1.0)
    theta = np.arccos(c)
    s = np.sqrt(np.maximum(1.0 - c * c, 0.0))
    v = x - k * c[..., None, :]
    dist2 = np.einsum("...j,...j->...", theta, theta)
    live = (dist2 >= COINCIDENT_DIST**2)[..., None, None]
    gx = gk = None
    if mode is GeometryMode.EXACT:
        small = theta < LOG_SMALL_ANGLE
        t2 = theta * theta
        # r = theta/sin(theta); drdc = d r / d cos(theta). Series below 1e-3
        # avoids the 0/0 cancellation at coincident columns.
        r = np.where(small, 1.0 + t2 / 6.0 + 7.0 * t2 * t2 / 360.0,
                     theta / np.maximum(s, DEGENERATE_NORM))
        drdc = np.where(small, -(1.0 / 3.0 + 2.0 * t2 / 15.0),
                        -(s - theta * c) / np.maximum(s**3, DEGENERATE_NORM))
        gv = _col_dots(g, v)
        gkdot = _col_dots(g, k)
        if need_x:
            gx = (r[..., None, :] * (g - k * gkdot[..., None, :])
                  + (drdc * gv)[..., None, :] * k) * live
        if need_k:
            gk = ((drdc * gv - r * gkdot)[..., None, :] * x
                  - (r * c)[..., None, :] * g) * live
    else:
        ratio = np.where(theta < LOG_SMALL_ANGLE, 1.0 + theta * theta / 6.0,
                         theta / np.maximum(s, DEGENERATE_NORM))
        big_r = np.sqrt(np.einsum("...ij,...ij->...", v, v))
        big_d = np.sqrt(dist2)
        inv_r = 1.0 / np.maximum(big_r, DEGENERATE_NORM)
        inv_d = 1.0 / np.maximum(big_d, DEGENERATE_NORM)
        gv_total = np.einsum("...ij,...ij->...", g, v)
        gkdot = _col_dots(g, k)
        coef_col = (gv_total * inv_r * inv_d)[..., None] * ratio     # (..., p)
        coef_v = (big_d * gv_total * inv_r**3)[..., None, None]      # (..., 1, 1)
        scale = (big_d * inv_r)[..., None, None]
        if need_x:
            gx = (-coef_col[..., None, :] * k - coef_v * v
                  + scale * (g - k * gkdot[..., None, :])) * live
        if need_k:
            gk = (-coef_col[..., None, :] * x + coef_v * v * c[..., None, :]
                  - scale * (x * gkdot[..., None, :] + g * c[..., None, :])) * live
    return gx, gk


def tangent_project_batch(k: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Columnwise tangent projection g_j - <k_j, g_j> k_j; broadcasts."""
    return g - k * _col_dots(k, g)[..., None, :]


def random_point(rng: np.random.Generator, n: int, p: int) -> OMPoint:
    """Unit-Gaussian entries, columns normalized onto the manifold."""
    while True:
        arr = rng.standard_normal((n, p))
        if np.all(np.linalg.norm(arr, axis=0) >= DEGENERATE_NORM):
            return project_to_om(arr)


def check_finite(arr: np.ndarray, what: str) -> np.ndarray:
    """Raise NonFinite with context if ``arr`` has NaN or infinity."""
    if not np.all(np.isfinite(arr)):
        raise NonFinite(f"{what} contains non-finite values")
    return arr
