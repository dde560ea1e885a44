"""Fubini-Study geometry of CP^m in unit homogeneous coordinates.

A point is a unit vector z in C^{m+1} taken modulo a phase. Tangent vectors at
z are represented by horizontal lifts w, i.e. vectors with <w, z> = 0 for the
Hermitian product. The metric is Re<u, v> and the complex structure is
multiplication by i. With these choices the holomorphic sectional curvature
is 4 and all sectional curvatures lie in [1, 4].

The array helpers (``herm``, ``normalize``, ``hproj``, ``retract_arrays``,
``distance_arrays``) broadcast over leading axes and are what the grid code
uses; the small dataclasses wrap them for single points.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tolerances
from .errors import ContractViolation, DegenerateInputError


@dataclass(frozen=True)
class Dimensions:
    n: int
    q: int

    def __post_init__(self):
        n, q = int(self.n), int(self.q)
        if n < 2 or q < 1:
            raise ContractViolation(f"need n >= 2 and q >= 1, got n={n}, q={q}")
        if (n + q) % 2:
            raise ContractViolation(f"n + q must be even (n + q = 2m), got n={n}, q={q}")
        if (n + q) // 2 < 2:
            raise ContractViolation(f"need m >= 2, got m={(n + q) // 2}")
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "q", q)

    @property
    def m(self) -> int:
        return (self.n + self.q) // 2


# ---------------------------------------------------------------------------
# array level


def herm(u, v):
    """Hermitian product sum_k u_k conj(v_k) over the last axis."""
    return np.sum(u * np.conj(v), axis=-1)


def rdot(u, v):
    """Real inner product Re<u, v> over the last axis."""
    return np.sum(u.real * v.real + u.imag * v.imag, axis=-1)


def gauge_fix(z, tol=None):
    """Rotate the phase so the first component of modulus > tol is real >= 0."""
    tol = tolerances.get().gauge_modulus if tol is None else tol
    z = np.asarray(z, dtype=complex)
    mod = np.abs(z)
    big = mod > tol
    first = np.argmax(big, axis=-1)
    c = np.take_along_axis(z, first[..., None], axis=-1)[..., 0]
    cm = np.abs(c)
    phase = np.where(cm > 0, np.conj(c) / np.where(cm > 0, cm, 1.0), 1.0)
    out = z * phase[..., None]
    # the gauge component is exactly real, not just up to roundoff
    np.put_along_axis(out, first[..., None], (cm + 0j)[..., None], axis=-1)
    return out


def normalize(v):
    v = np.asarray(v, dtype=complex)
    nrm = np.sqrt(np.sum(np.abs(v) ** 2, axis=-1))
    if np.any(nrm <= tolerances.get().degenerate_input):
        raise DegenerateInputError("cannot normalize a (near) zero vector")
    return gauge_fix(v / nrm[..., None])


def hproj(z, v):
    """Horizontal projection v - <v, z> z."""
    return v - herm(v, z)[..., None] * z


def retract_arrays(z, v, s=1.0):
    """Move along the horizontal great circle through z with velocity v for time s."""
    z = np.asarray(z, dtype=complex)
    v = np.asarray(v, dtype=complex)
    vn = np.sqrt(np.sum(np.abs(v) ** 2, axis=-1))
    t = s * vn
    safe = np.where(vn > 0, vn, 1.0)
    out = np.cos(t)[..., None] * z + (np.sin(t) / safe)[..., None] * v
    out = out / np.sqrt(np.sum(np.abs(out) ** 2, axis=-1))[..., None]
    return gauge_fix(out)


def distance_arrays(zp, zr):
    """Fubini-Study distance arccos|<zp, zr>|, evaluated stably via atan2."""
    c = herm(zr, zp)
    perp = zr - c[..., None] * zp
    return np.arctan2(np.sqrt(np.sum(np.abs(perp) ** 2, axis=-1)), np.abs(c))


def curvature_frame(J):
    """Curvature tensor R(e_A, e_B, e_C, e_D) in an orthonormal frame with J_AB = <e_A, J e_B>."""
    J = np.asarray(J)
    d = np.eye(J.shape[-1])
    return (np.einsum("ac,bd->abcd", d, d) - np.einsum("ad,bc->abcd", d, d)
            + np.einsum("...ac,...bd->...abcd", J, J) - np.einsum("...ad,...bc->...abcd", J, J)
            + 2 * np.einsum("...ab,...cd->...abcd", J, J))


# ---------------------------------------------------------------------------
# object level


@dataclass(frozen=True, eq=False)
class CPPoint:
    z: np.ndarray

    def __post_init__(self):
        z = np.asarray(self.z, dtype=complex)
        tol = tolerances.get()
        if z.ndim != 1 or abs(np.linalg.norm(z) - 1) > tol.unit_norm:
            raise ContractViolation("CPPoint needs a unit vector")
        object.__setattr__(self, "z", z)

    @property
    def m(self):
        return self.z.shape[0] - 1


@dataclass(frozen=True, eq=False)
class TangentRep:
    base: CPPoint
    w: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.w, dtype=complex)
        if abs(herm(w, self.base.z)) > tolerances.get().horizontal * max(1.0, np.linalg.norm(w)):
            raise ContractViolation("tangent representative is not horizontal")
        object.__setattr__(self, "w", w)

    @property
    def norm(self):
        return float(np.linalg.norm(self.w))

    def __add__(self, other):
        _same_base(self, other)
        return TangentRep(self.base, self.w + other.w)

    def __rmul__(self, c):
        return TangentRep(self.base, float(c) * self.w)

    def __neg__(self):
        return TangentRep(self.base, -self.w)


def _same_base(*vs):
    b = vs[0].base
    for v in vs[1:]:
        if v.base is not b and not np.array_equal(v.base.z, b.z):
            raise ContractViolation("tangent vectors live at different base points")


def normalize_point(v) -> CPPoint:
    return CPPoint(normalize(v))


def horizontal_project(p: CPPoint, v) -> TangentRep:
    return TangentRep(p, hproj(p.z, np.asarray(v, dtype=complex)))


def metric(u: TangentRep, v: TangentRep) -> float:
    _same_base(u, v)
    return float(rdot(u.w, v.w))


def apply_J(u: TangentRep) -> TangentRep:
    return TangentRep(u.base, 1j * u.w)


def curvature(X: TangentRep, Y: TangentRep, Z: TangentRep, W: TangentRep) -> float:
    _same_base(X, Y, Z, W)
    g = lambda a, b: float(rdot(a.w, b.w))
    j = lambda a, b: float(rdot(a.w, 1j * b.w))
    return (g(X, Z) * g(Y, W) - g(X, W) * g(Y, Z)
            + j(X, Z) * j(Y, W) - j(X, W) * j(Y, Z)
            + 2 * j(X, Y) * j(Z, W))


def retract(p: CPPoint, v: TangentRep, s: float) -> CPPoint:
    if v.base is not p and not np.array_equal(v.base.z, p.z):
        raise ContractViolation("tangent vector is not based at p")
    if s * v.norm == 0:
        return p
    return CPPoint(retract_arrays(p.z, v.w, s))


def distance(p: CPPoint, r: CPPoint) -> float:
    return float(distance_arrays(p.z, r.z))
