"""Immersed submanifolds of CP^m sampled on structured grids.

Geometry is extracted with finite differences on a smooth lift to the unit
sphere. Each node uses its own gauge: every stencil neighbour is rotated so
that its Hermitian product with the centre node is real and positive. The
lift is not horizontal away from the centre, so derivatives are corrected with
the connection a_i = Im <d_i Z, Z>:

    F_i  = horizontal part of d_i Z
    D_ij = d_i d_j Z - i (a_i F_j + a_j F_i)       (h = normal part of D_ij)

Vector fields along the immersion (H, and h itself for its covariant
derivative) are differentiated in the same gauge with the same correction.
Scalars do not depend on the stored representatives or the gauge choice.

Stencils are fourth order: central five-point on periodic and interior
nodes, one-sided windows (5 points for first, 6 for second derivatives) near
clamped ends, mixed derivatives as products of first-derivative stencils.
"""
from __future__ import annotations

import json
import functools
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import tolerances
from .ambient import Dimensions, distance_arrays, gauge_fix, herm, hproj, rdot, retract_arrays
from .errors import ContractViolation, DegenerateImmersionError
from .tensor import SFFInvariants, adapted_frames, sff_invariants

NODE_CHUNK = 4096  # fixed work unit, so results do not depend on the thread count


class GridKind(str, Enum):
    PRODUCT_ANGLES = "PRODUCT_ANGLES"
    TORUS_LATTICE = "TORUS_LATTICE"


@dataclass(frozen=True)
class GridTopology:
    kind: GridKind
    shape: tuple
    periodic: tuple
    spacing: tuple
    origin: tuple = None

    def __post_init__(self):
        shape = tuple(int(s) for s in self.shape)
        periodic = tuple(bool(p) for p in self.periodic)
        spacing = tuple(float(s) for s in self.spacing)
        origin = tuple(float(o) for o in self.origin) if self.origin is not None else (0.0,) * len(shape)
        if not (len(shape) == len(periodic) == len(spacing) == len(origin)):
            raise ContractViolation("topology fields must have one entry per axis")
        if any(s < 8 for s in shape):
            raise ContractViolation(f"need at least 8 nodes per axis, got {shape}")
        if any(not s > 0 for s in spacing):
            raise ContractViolation("grid spacing must be positive")
        object.__setattr__(self, "kind", GridKind(self.kind))
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "periodic", periodic)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)

    @property
    def ndim(self):
        return len(self.shape)

    def coords(self, axis):
        return self.origin[axis] + self.spacing[axis] * np.arange(self.shape[axis])

    def to_dict(self):
        return {"kind": self.kind.value, "shape": list(self.shape), "periodic": list(self.periodic),
                "spacing": list(self.spacing), "origin": list(self.origin)}

    @classmethod
    def from_dict(cls, d):
        return cls(GridKind(d["kind"]), tuple(d["shape"]), tuple(d["periodic"]), tuple(d["spacing"]),
                   tuple(d.get("origin") or [0.0] * len(d["shape"])))

    def interior_mask(self, depth=4):
        """Nodes at index distance >= depth from every clamped end."""
        mask = np.ones(self.shape, dtype=bool)
        for a, (N, per) in enumerate(zip(self.shape, self.periodic)):
            if per:
                continue
            idx = np.arange(N)
            ok = (idx >= depth) & (idx <= N - 1 - depth)
            sh = [1] * self.ndim
            sh[a] = N
            mask &= ok.reshape(sh)
        return mask


# ---------------------------------------------------------------------------
# stencils


def fd_weights(offsets, order):
    """Weights w with sum_s w_s f(x + o_s) ~ f^(order)(x) for unit spacing."""
    o = np.asarray(offsets, dtype=float)
    k = len(o)
    V = np.vander(o, k, increasing=True).T
    rhs = np.zeros(k)
    rhs[order] = math.factorial(order)
    return np.linalg.solve(V, rhs)


def _axis_tables(N, periodic, h):
    idx1 = np.zeros((N, 5), dtype=np.intp)
    w1 = np.zeros((N, 5))
    idx2 = np.zeros((N, 6), dtype=np.intp)
    w2 = np.zeros((N, 6))
    c1 = fd_weights(range(-2, 3), 1)
    c2 = fd_weights(range(-2, 3), 2)
    for i in range(N):
        if periodic:
            win = np.arange(i - 2, i + 3)
            idx1[i] = win % N
            w1[i] = c1
            idx2[i, :5] = win % N
            idx2[i, 5] = i
            w2[i, :5] = c2
            continue
        s = min(max(i - 2, 0), N - 5)
        win = np.arange(s, s + 5)
        idx1[i] = win
        w1[i] = fd_weights(win - i, 1)
        if 2 <= i <= N - 3:
            idx2[i, :5] = np.arange(i - 2, i + 3)
            idx2[i, 5] = i
            w2[i, :5] = c2
        else:
            s = 0 if i < 2 else N - 6
            win = np.arange(s, s + 6)
            idx2[i] = win
            w2[i] = fd_weights(win - i, 2)
    return idx1, w1 / h, idx2, w2 / h ** 2


class AxisOperators:
    """Dense per-axis differentiation matrices (first and second derivative)."""

    def __init__(self, topo: GridTopology):
        self.topo = topo
        self.D1, self.D2, self.tables = [], [], []
        for N, p, h in zip(topo.shape, topo.periodic, topo.spacing):
            i1, w1, i2, w2 = _axis_tables(N, p, h)
            self.tables.append((i1, w1, i2, w2))
            D1 = np.zeros((N, N))
            D2 = np.zeros((N, N))
            rows = np.arange(N)[:, None]
            np.add.at(D1, (np.broadcast_to(rows, i1.shape), i1), w1)
            np.add.at(D2, (np.broadcast_to(rows, i2.shape), i2), w2)
            self.D1.append(D1)
            self.D2.append(D2)

    def apply(self, D, f, axis):
        return np.moveaxis(np.tensordot(D, f, axes=([1], [axis])), 0, axis)

    def d1(self, f, axis):
        return self.apply(self.D1[axis], f, axis)

    def d2(self, f, axis):
        return self.apply(self.D2[axis], f, axis)


@functools.lru_cache(maxsize=8)
def axis_operators(topo: GridTopology) -> AxisOperators:
    return AxisOperators(topo)


def _gather(x, picks):
    for axis, idx in picks:
        x = np.take(x, idx, axis=axis)
    return x


def _axis_weight(w, axis, ndim):
    sh = [1] * ndim
    sh[axis] = -1
    return w.reshape(sh)


def stencil_terms(topo: GridTopology, order, a):
    """(picks, weight) pairs of d_a (order 1) or d_a^2 (order 2) along axis a."""
    nd = topo.ndim
    i1, w1, i2, w2 = axis_operators(topo).tables[a]
    idx, w = (i1, w1) if order == 1 else (i2, w2)
    return [([(a, idx[:, s])], _axis_weight(w[:, s], a, nd)) for s in range(idx.shape[1])]


def centred_weights(z, terms):
    """Stencil weights times the phases that rotate each neighbour into the centre node's gauge.

    The neighbour representative is rotated so that <z_neighbour, z_centre> is
    real and positive. This lift is smooth as long as the stencil stays within
    distance pi/2 of its centre, whatever the chart. Also returns the smallest
    |<z_neighbour, z_centre>| seen.
    """
    out = []
    overlap = np.inf
    for picks, w in terms:
        c = herm(_gather(z, picks), z)
        mod = np.abs(c)
        overlap = min(overlap, float(mod.min()))
        out.append((picks, w * np.conj(c) / np.where(mod > 0, mod, 1.0)))
    return out, overlap


def apply_centred(f, weights, nd):
    """Stencil sum of a field carried by the nodes (leading nd axes are the grid)."""
    out = np.zeros(f.shape, dtype=complex)
    for picks, u in weights:
        out += u[(...,) + (None,) * (f.ndim - nd)] * _gather(f, picks)
    return out


def _node_chunks(n_nodes, size=NODE_CHUNK):
    return [slice(s, min(s + size, n_nodes)) for s in range(0, n_nodes, size)]


def _map_chunks(fn, n_nodes, threads):
    chunks = _node_chunks(n_nodes)
    threads = resolve_threads(threads)
    if threads <= 1 or len(chunks) == 1:
        res = [fn(c) for c in chunks]
    else:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            res = list(ex.map(fn, chunks))
    return res


def resolve_threads(threads):
    threads = int(threads or 0) if threads is not None else 1
    if threads == 0:
        threads = os.cpu_count() or 1
    return max(1, threads)


# ---------------------------------------------------------------------------
# immersions


@dataclass(eq=False)
class DiscreteImmersion:
    topology: GridTopology
    z: np.ndarray
    dims: Dimensions
    validate: bool = True

    def __post_init__(self):
        z = np.asarray(self.z, dtype=complex)
        if z.shape != self.topology.shape + (self.dims.m + 1,):
            raise ContractViolation(f"node array shape {z.shape} does not match topology {self.topology.shape} "
                                    f"and m = {self.dims.m}")
        if len(self.topology.shape) != self.dims.n:
            raise ContractViolation("grid dimension must equal n")
        self.z = z
        if self.validate:
            self.check()

    def check(self):
        tol = tolerances.get()
        nrm = np.sqrt(np.sum(np.abs(self.z) ** 2, axis=-1))
        if np.max(np.abs(nrm - 1)) > tol.unit_norm:
            raise ContractViolation("nodes must be unit vectors")
        d = self.edge_lengths()
        if d.max() > tol.neighbour_distance:
            raise ContractViolation(f"adjacent nodes too far apart ({d.max():.3f}); refine the grid")
        F = differential(self)
        sv = _min_singular(F)
        k = int(np.argmin(sv))
        if not sv.reshape(-1)[k] > tol.immersion_rank:
            node = np.unravel_index(k, self.topology.shape)
            raise DegenerateImmersionError(f"differential nearly degenerate at node {tuple(int(i) for i in node)}",
                                           node=tuple(int(i) for i in node), singular_value=float(sv.reshape(-1)[k]))
        return self

    @property
    def n_nodes(self):
        return int(np.prod(self.topology.shape))

    def edge_lengths(self):
        """Fubini-Study lengths of all axis edges (wrapping on periodic axes), flattened."""
        out = []
        for a, per in enumerate(self.topology.periodic):
            if per:
                other = np.roll(self.z, -1, axis=a)
                out.append(distance_arrays(self.z, other).ravel())
            else:
                sl0 = [slice(None)] * self.topology.ndim
                sl1 = [slice(None)] * self.topology.ndim
                sl0[a] = slice(0, -1)
                sl1[a] = slice(1, None)
                out.append(distance_arrays(self.z[tuple(sl0)], self.z[tuple(sl1)]).ravel())
        return np.concatenate(out)

    def min_spacing(self):
        return float(self.edge_lengths().min())

    def with_nodes(self, z, validate=False):
        return DiscreteImmersion(self.topology, z, self.dims, validate=validate)


def _min_singular(F):
    g = np.einsum("...ik,...jk->...ij", F.real, F.real) + np.einsum("...ik,...jk->...ij", F.imag, F.imag)
    return np.sqrt(np.clip(np.linalg.eigvalsh(g)[..., 0], 0, None))


def _lift_derivatives(im: DiscreteImmersion, second=True):
    """First and second coordinate derivatives of a node-centred lift, plus the first-derivative weights.

    The mixed derivative d_a d_b (a < b) differentiates the centred d_b Z along
    a. This is the mixed derivative of one smooth lift (align along b to the
    a-line, then along a to the centre) that agrees with the centred lift on
    every coordinate axis through the node, so all derivatives are consistent.
    """
    topo = im.topology
    n = topo.ndim
    z = im.z
    W1, worst = [], np.inf
    for a in range(n):
        w, ov = centred_weights(z, stencil_terms(topo, 1, a))
        W1.append(w)
        worst = min(worst, ov)
    if second:
        W2 = []
        for a in range(n):
            w, ov = centred_weights(z, stencil_terms(topo, 2, a))
            W2.append(w)
            worst = min(worst, ov)
    if not worst > 1e-3:
        raise DegenerateImmersionError("stencil reaches distance pi/2 from its centre; grid too coarse",
                                       singular_value=worst)
    D1 = np.stack([apply_centred(z, W1[a], n) for a in range(n)], axis=-2)
    D2 = None
    if second:
        D2 = np.empty(z.shape[:-1] + (n, n, z.shape[-1]), dtype=complex)
        for a in range(n):
            D2[..., a, a, :] = apply_centred(z, W2[a], n)
            if a + 1 < n:
                mixed = apply_centred(D1[..., a + 1:, :], W1[a], n)
                for b in range(a + 1, n):
                    D2[..., a, b, :] = D2[..., b, a, :] = mixed[..., b - a - 1, :]
    return D1, D2, W1


def differential(im: DiscreteImmersion, threads=1):
    """Horizontal coordinate derivatives F[..., i, :] of the immersion, in the stored representatives."""
    D1, _, _ = _lift_derivatives(im, second=False)
    return hproj(im.z[..., None, :], D1)


# ---------------------------------------------------------------------------
# builders


def _check_resolution(res, ndim):
    if np.isscalar(res):
        res = (int(res),) * ndim
    res = tuple(int(r) for r in res)
    if len(res) != ndim:
        raise ContractViolation(f"resolution needs {ndim} entries")
    return res


def random_unitary(k, seed):
    """Haar unitary (QR of a complex Gaussian with phase fix)."""
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((k, k)) + 1j * rng.standard_normal((k, k))
    Q, R = np.linalg.qr(A)
    d = np.diag(R)
    return Q * (d / np.abs(d))


def _finish(z, rotation):
    if rotation is not None:
        z = np.einsum("ab,...b->...a", np.asarray(rotation, dtype=complex), z)
    z = z / np.sqrt(np.sum(np.abs(z) ** 2, axis=-1))[..., None]
    return gauge_fix(z)


def _orthant(chis):
    """Unit vector with nonnegative entries from hyperspherical angles (list of arrays)."""
    mu = []
    s = 1.0
    for c in chis:
        mu.append(s * np.cos(c))
        s = s * np.sin(c)
    mu.append(s)
    return mu


def _clamped_axis(N, length, margin):
    """Spacing and origin for N nodes covering [margin, length - margin]; margin defaults to 4 spacings."""
    if margin is None:
        h = length / (N - 1 + 8)
        margin = 4 * h
    else:
        h = (length - 2 * margin) / (N - 1)
    return h, margin


def sphere_chart(m, r, chi, xi):
    """Distance sphere of radius r about e_0: z = (cos r, sin r * u(chi, xi))."""
    mu = _orthant(chi)
    parts = [np.cos(r) * np.ones_like(np.asarray(mu[0], dtype=float))]
    for k in range(m):
        parts.append(np.sin(r) * mu[k] * np.exp(1j * xi[k]))
    return np.stack(np.broadcast_arrays(*parts), axis=-1).astype(complex)


def build_geodesic_sphere(m, r, resolution, rotation=None, pole_margin=None, validate=True):
    """Distance sphere of radius r about e_0 (or rotation @ e_0) in CP^m.

    Axes: m - 1 clamped orthant angles on [d, pi/2 - d], then m periodic
    phases. The pole margin d defaults to four angle spacings.
    """
    dims = Dimensions(2 * m - 1, 1)
    res = _check_resolution(resolution, dims.n)
    spacing, origin, periodic = [], [], []
    for a in range(m - 1):
        h, d = _clamped_axis(res[a], math.pi / 2, pole_margin)
        spacing.append(h)
        origin.append(d)
        periodic.append(False)
    for a in range(m - 1, dims.n):
        spacing.append(2 * math.pi / res[a])
        origin.append(0.0)
        periodic.append(True)
    topo = GridTopology(GridKind.PRODUCT_ANGLES, res, tuple(periodic), tuple(spacing), tuple(origin))
    if not 0 < r < math.pi / 2:
        raise ContractViolation(f"radius must lie in (0, pi/2), got {r}")
    grids = np.meshgrid(*[topo.coords(a) for a in range(dims.n)], indexing="ij")
    z = _finish(sphere_chart(m, r, grids[:m - 1], grids[m - 1:]), rotation)
    im = DiscreteImmersion(topo, z, dims, validate=validate)
    sp = im.min_spacing()
    if not (10 * sp <= r and r <= math.pi / 2 - 5 * sp):
        raise ContractViolation(f"radius {r} is within 10 grid spacings ({sp:.3g}) of 0 or 5 of pi/2")
    return im


def build_sphere_patch(m, r, step, nodes=9, center_angles=None):
    """Small clamped coordinate patch of the distance sphere, centred away from chart poles."""
    dims = Dimensions(2 * m - 1, 1)
    if center_angles is None:
        center_angles = [math.pi / 4] * (m - 1) + [0.0] * m
    half = (nodes - 1) / 2
    origin = tuple(c - half * step for c in center_angles)
    topo = GridTopology(GridKind.PRODUCT_ANGLES, (nodes,) * dims.n, (False,) * dims.n, (step,) * dims.n, origin)
    grids = np.meshgrid(*[topo.coords(a) for a in range(dims.n)], indexing="ij")
    z = _finish(sphere_chart(m, r, grids[:m - 1], grids[m - 1:]), None)
    return DiscreteImmersion(topo, z, dims)


class TotallyGeodesicKind(str, Enum):
    RP_n = "RP_n"
    CP_half_n = "CP_half_n"


def build_totally_geodesic(kind, dims: Dimensions, resolution, rotation=None, validate=True):
    """Real projective subspace RP^n (real points) or complex subspace CP^{n/2} (a linear subspace)."""
    kind = TotallyGeodesicKind(kind)
    n, m = dims.n, dims.m
    res = _check_resolution(resolution, n)
    if kind is TotallyGeodesicKind.CP_half_n:
        if n % 2:
            raise ContractViolation("CP^{n/2} needs n even")
        k = n // 2
        spacing, origin, periodic = [], [], []
        for a in range(k):
            h, d = _clamped_axis(res[a], math.pi / 2, None)
            spacing.append(h); origin.append(d); periodic.append(False)
        for a in range(k, n):
            spacing.append(2 * math.pi / res[a]); origin.append(0.0); periodic.append(True)
        topo = GridTopology(GridKind.PRODUCT_ANGLES, res, tuple(periodic), tuple(spacing), tuple(origin))
        g = np.meshgrid(*[topo.coords(a) for a in range(n)], indexing="ij")
        mu = _orthant(g[:k])
        comps = [mu[0] + 0j] + [mu[j + 1] * np.exp(1j * g[k + j]) for j in range(k)]
    else:
        if n > m:
            raise ContractViolation("RP^n inside CP^m needs n <= m")
        spacing, origin, periodic = [], [], []
        for a in range(n - 1):
            h, d = _clamped_axis(res[a], math.pi, None)
            spacing.append(h); origin.append(d); periodic.append(False)
        spacing.append(2 * math.pi / res[n - 1]); origin.append(0.0); periodic.append(True)
        topo = GridTopology(GridKind.PRODUCT_ANGLES, res, tuple(periodic), tuple(spacing), tuple(origin))
        g = np.meshgrid(*[topo.coords(a) for a in range(n)], indexing="ij")
        comps = []
        s = 1.0
        for a in range(n - 1):
            comps.append(s * np.cos(g[a]))
            s = s * np.sin(g[a])
        comps += [s * np.cos(g[n - 1]), s * np.sin(g[n - 1])]
        comps = [c + 0j for c in comps]
    zeros = np.zeros(res)
    comps = comps + [zeros + 0j] * (m + 1 - len(comps))
    z = _finish(np.stack(np.broadcast_arrays(*comps), axis=-1), rotation)
    return DiscreteImmersion(topo, z, dims, validate=validate)


def build_clifford_torus(m, resolution, rotation=None, validate=True):
    """The torus |z_0| = ... = |z_m| in CP^m on a periodic lattice of the m phases."""
    dims = Dimensions(m, m)
    res = _check_resolution(resolution, m)
    topo = GridTopology(GridKind.TORUS_LATTICE, res, (True,) * m, tuple(2 * math.pi / N for N in res))
    g = np.meshgrid(*[topo.coords(a) for a in range(m)], indexing="ij")
    comps = [np.ones(res) + 0j] + [np.exp(1j * t) for t in g]
    z = _finish(np.stack(comps, axis=-1) / math.sqrt(m + 1), rotation)
    return DiscreteImmersion(topo, z, dims, validate=validate)


def _mode_field(topo: GridTopology, modes, rng):
    """Smooth scalar field: random combination of low Fourier (periodic) or cosine (clamped) modes."""
    f = np.zeros(topo.shape)
    grids = np.meshgrid(*[np.arange(N) for N in topo.shape], indexing="ij")
    for _ in range(2 * topo.ndim):
        term = np.ones(topo.shape)
        for a, (N, per) in enumerate(zip(topo.shape, topo.periodic)):
            k = rng.integers(0, modes + 1)
            ph = rng.uniform(0, 2 * math.pi)
            t = 2 * math.pi * grids[a] / N if per else math.pi * grids[a] / (N - 1)
            term = term * (np.cos(k * t + ph) if per else np.cos(k * t))
        f += rng.standard_normal() * term
    mx = np.abs(f).max()
    return f / mx if mx > 0 else f


def perturb(im: DiscreteImmersion, amplitude, modes=2, seed=0):
    """Move nodes along a smooth normal field by at most `amplitude` (Fubini-Study length).

    The direction is the normal part of a random projective vector field
    z -> A z; its size is modulated by a low-frequency scalar mode field.
    """
    if amplitude < 0 or amplitude > 0.1 * (math.pi / 2):
        raise ContractViolation("amplitude must lie in [0, 0.1 * injectivity radius]")
    if amplitude == 0:
        return DiscreteImmersion(im.topology, im.z.copy(), im.dims, validate=False)
    rng = np.random.default_rng(seed)
    k = im.dims.m + 1
    A = rng.standard_normal((k, k)) + 1j * rng.standard_normal((k, k))
    f = _mode_field(im.topology, modes, rng)
    F = differential(im)
    Et, _, _, _ = adapted_frames(im.z, F)
    v = hproj(im.z, np.einsum("ab,...b->...a", A, im.z))
    v = v - np.einsum("...k,...ka->...a", rdot(v[..., None, :], Et), Et)
    vn = np.sqrt(np.sum(np.abs(v) ** 2, axis=-1))
    v = v / vn.max()
    z = retract_arrays(im.z, amplitude * f[..., None] * v, 1.0)
    try:
        return DiscreteImmersion(im.topology, z, im.dims)
    except DegenerateImmersionError as e:
        raise DegenerateImmersionError(f"perturbation rejected: {e}", node=e.node, singular_value=e.singular_value)


# ---------------------------------------------------------------------------
# geometry extraction


@dataclass(eq=False)
class GeometryField:
    """Per-node geometry; every array has the grid shape as its leading axes."""
    z: np.ndarray
    F: np.ndarray         # coordinate tangent vectors d_i z~
    g: np.ndarray         # induced metric in coordinates
    C: np.ndarray         # lower Cholesky factor, F_i = sum_k C_ik e_k
    e_tan: np.ndarray
    e_nor: np.ndarray
    J: np.ndarray         # J_AB in the adapted frame
    h: np.ndarray         # h[alpha, i, j] in the adapted frame
    Gamma: np.ndarray     # Christoffel symbols Gamma[k, i, j] of g
    Hvec: np.ndarray      # mean curvature vector as a horizontal vector
    inv: SFFInvariants
    T: np.ndarray = None  # nabla h in the adapted frame, T[alpha, i, j, k] = nabla_k h_ij
    gradH: np.ndarray = None

    @property
    def shape(self):
        return self.z.shape[:-1]

    @property
    def detg(self):
        return np.linalg.det(self.g)

    @property
    def normGradh2(self):
        return np.sum(self.T ** 2, axis=(-1, -2, -3, -4))

    @property
    def normGradH2(self):
        return np.sum(self.gradH ** 2, axis=(-1, -2))

    @property
    def normGradTraceless2(self):
        return self.normGradh2 - self.normGradH2 / self.h.shape[-1]

    @property
    def has_gradients(self):
        return self.T is not None

    def scalar_fields(self):
        out = {
            "normh2": self.inv.normh2, "normH2": self.inv.normH2, "normtrace2": self.inv.normtrace2,
            "rho1": self.inv.rho1, "rho2": self.inv.rho2, "theta1": self.inv.theta1,
            "theta2": self.inv.theta2, "normP2": self.inv.normP2, "detg": self.detg,
        }
        if self.has_gradients:
            out["gradh2"] = self.normGradh2
            out["gradH2"] = self.normGradH2
        return out


def _first_pass(Z, D1, D2, sl, topo):
    Z, D1, D2 = Z[sl], D1[sl], D2[sl]
    n = D1.shape[-2]
    conn = herm(D1, Z[:, None, :]).imag                                 # connection form a_i
    F = hproj(Z[:, None, :], D1)
    # derivative of the lift phase-aligned to this node: only the a_i F_j terms survive projection
    D2 = D2 - 1j * (conn[:, :, None, None] * F[:, None, :, :] + conn[:, None, :, None] * F[:, :, None, :])
    sv = _min_singular(F)
    k = int(np.argmin(sv))
    if not sv[k] > tolerances.get().immersion_rank:
        node = tuple(int(i) for i in np.unravel_index(sl.start + k, topo.shape))
        raise DegenerateImmersionError(f"differential nearly degenerate at node {node}",
                                       node=node, singular_value=float(sv[k]))
    Et, En, C, J = adapted_frames(Z, F)
    g = C @ np.swapaxes(C, -1, -2)
    ginv = np.linalg.inv(g)
    Cinv = np.linalg.inv(C)
    h_coord = rdot(D2[:, None, :, :, :], En[:, :, None, None, :])          # (alpha, i, j)
    Gl = rdot(D2[:, None, :, :, :], F[:, :, None, None, :])               # (l, i, j)
    Gamma = (ginv @ Gl.reshape(Gl.shape[0], n, n * n)).reshape(Gl.shape)
    Ci = Cinv[:, None, :, :]
    h = Ci @ h_coord @ np.swapaxes(Ci, -1, -2)
    h = 0.5 * (h + np.swapaxes(h, -1, -2))
    Hf = np.trace(h, axis1=-2, axis2=-1)
    Hvec = np.einsum("ng,ngk->nk", Hf, En)
    hvec = np.einsum("ngij,ngk->nijk", h_coord, En)
    return dict(z=Z, F=F, g=g, C=C, e_tan=Et, e_nor=En, J=J, h=h, Gamma=Gamma, Hvec=Hvec,
                h_coord=h_coord, Cinv=Cinv, hvec=hvec, conn=conn)


def _second_pass(hvec, dH, parts, sl):
    En, Gamma, h_coord, Cinv, conn = (parts[k][sl] for k in ("e_nor", "Gamma", "h_coord", "Cinv", "conn"))
    hv, dH = hvec[sl], dH[sl]                                          # dH: (k, i, j, comp)
    dH = dH - 1j * conn[:, :, None, None, None] * hv[:, None]
    nab = rdot(dH[:, None], En[:, :, None, None, None, :])               # (alpha, k, i, j)
    nab = np.moveaxis(nab, 2, -1)                                         # (alpha, i, j, k)
    nab = nab - np.einsum("nlki,nglj->ngijk", Gamma, h_coord) \
              - np.einsum("nlkj,ngil->ngijk", Gamma, h_coord)
    T = np.einsum("nck,ngijk->ngijc", Cinv, nab)
    T = np.einsum("nbj,ngijc->ngibc", Cinv, T)
    T = np.einsum("nai,ngibc->ngabc", Cinv, T)
    T = 0.5 * (T + np.swapaxes(T, -2, -3))
    gradH = np.einsum("ngkki->ngi", T)
    return T, gradH


def extract_geometry(im: DiscreteImmersion, gradients=True, threads=1) -> GeometryField:
    topo = im.topology
    n = topo.ndim
    shp = topo.shape
    D1, D2, W1 = _lift_derivatives(im)
    flat = lambda x: x.reshape((-1,) + x.shape[len(shp):])
    Zf, D1f, D2f = flat(im.z), flat(D1), flat(D2)
    first = _map_chunks(lambda sl: _first_pass(Zf, D1f, D2f, sl, topo), im.n_nodes, threads)
    parts = {k: np.concatenate([p[k] for p in first], axis=0) for k in first[0]}
    T = gradH = None
    if gradients:
        hvec = parts["hvec"].reshape(shp + parts["hvec"].shape[1:])
        dH = np.stack([apply_centred(hvec, W1[a], n) for a in range(n)], axis=n)
        hv, dH = flat(hvec), flat(dH)
        res = _map_chunks(lambda sl: _second_pass(hv, dH, parts, sl), im.n_nodes, threads)
        T = np.concatenate([r[0] for r in res], axis=0)
        gradH = np.concatenate([r[1] for r in res], axis=0)
    grid = lambda x: None if x is None else x.reshape(shp + x.shape[1:])
    inv = sff_invariants(grid(parts["h"]), grid(parts["J"]))
    return GeometryField(*(grid(parts[k]) for k in ("z", "F", "g", "C", "e_tan", "e_nor", "J", "h",
                                                     "Gamma", "Hvec")), inv, grid(T), grid(gradH))


def mean_curvature_vector(im: DiscreteImmersion):
    """Mean curvature vector g^ij h(d_i, d_j) at every node (stored representatives), without frames."""
    D1, D2, _ = _lift_derivatives(im)
    Z = im.z
    conn = herm(D1, Z[..., None, :]).imag
    F = hproj(Z[..., None, :], D1)
    g = rdot(F[..., :, None, :], F[..., None, :, :])
    sv = np.sqrt(np.clip(np.linalg.eigvalsh(g)[..., 0], 0, None))
    k = int(np.argmin(sv))
    if not sv.reshape(-1)[k] > tolerances.get().immersion_rank:
        node = tuple(int(i) for i in np.unravel_index(k, im.topology.shape))
        raise DegenerateImmersionError(f"differential nearly degenerate at node {node}",
                                       node=node, singular_value=float(sv.reshape(-1)[k]))
    ginv = np.linalg.inv(g)
    L = np.einsum("...ij,...ijc->...c", ginv, D2) - 2j * np.einsum("...ij,...i,...jc->...c", ginv, conn, F)
    L = hproj(Z, L)
    coef = ginv @ rdot(L[..., None, :], F)[..., None]
    return L - np.sum(coef * F, axis=-2)


def laplace_beltrami(f, im: DiscreteImmersion, geom: GeometryField):
    """Grid Laplace-Beltrami g^ij (d_ij f - Gamma^k_ij d_k f) of a scalar field."""
    ops = axis_operators(im.topology)
    n = im.topology.ndim
    f = np.asarray(f, dtype=float)
    d1 = [ops.d1(f, a) for a in range(n)]
    ginv = np.linalg.inv(geom.g)
    out = np.zeros(f.shape)
    for a in range(n):
        for b in range(n):
            dab = ops.d2(f, a) if a == b else ops.d1(d1[b], a)
            out += ginv[..., a, b] * (dab - sum(geom.Gamma[..., k, a, b] * d1[k] for k in range(n)))
    return out


# ---------------------------------------------------------------------------
# snapshots


SNAPSHOT_FORMAT = "cpmcf-immersion"


def save_snapshot(path, im: DiscreteImmersion, time=0.0):
    """JSON header line, then little-endian float64 (re, im) pairs, row-major by multi-index."""
    header = {"format": SNAPSHOT_FORMAT, "version": 1, "n": im.dims.n, "q": im.dims.q, "m": im.dims.m,
              "topology": im.topology.to_dict(), "time": float(time), "dtype": "<f8",
              "layout": "grid multi-index (row-major), component 0..m, (real, imag)"}
    data = np.ascontiguousarray(np.stack([im.z.real, im.z.imag], axis=-1), dtype="<f8")
    with open(path, "wb") as fh:
        fh.write((json.dumps(header) + "\n").encode("utf-8"))
        fh.write(data.tobytes(order="C"))


def load_snapshot(path, validate=True):
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        raw = fh.read()
    if header.get("format") != SNAPSHOT_FORMAT:
        raise ContractViolation("not an immersion snapshot")
    topo = GridTopology.from_dict(header["topology"])
    dims = Dimensions(header["n"], header["q"])
    arr = np.frombuffer(raw, dtype="<f8").reshape(topo.shape + (dims.m + 1, 2))
    z = arr[..., 0] + 1j * arr[..., 1]
    return DiscreteImmersion(topo, z, dims, validate=validate), header["time"]
