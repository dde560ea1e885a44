"""Independent references: random tensors, the falsification harness, Richardson
extrapolation and the radius law of shrinking distance spheres.

Every inequality in the catalogue is written as slack = rhs - lhs (>= 0 when
it holds) and evaluated on batches of random samples. Samples are drawn in
fixed-size chunks, each chunk from its own stream spawned from the master
seed, so a report depends only on its SampleSpec.
"""
from __future__ import annotations

import csv
import io
import itertools
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from typing import NamedTuple

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicSpline

from . import tensor, tolerances
from .ambient import Dimensions
from .errors import ContractViolation
from .pinching import CaseTag, PhiParams, PinchingCase, W_threshold

CHUNK = 1000
SCALES = (0.1, 1.0, 10.0)


# ---------------------------------------------------------------------------
# random tensors


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def standard_complex_structure(k):
    J0 = np.zeros((k, k))
    for j in range(k // 2):
        J0[2 * j, 2 * j + 1] = 1.0
        J0[2 * j + 1, 2 * j] = -1.0
    return J0


def random_complex_structure(k, seed=None, size=None):
    """O J0 O^T for a Haar orthogonal O; J0 the standard block structure."""
    if k % 2:
        raise ContractViolation("a complex structure needs an even dimension")
    rng = _rng(seed)
    J0 = standard_complex_structure(k)
    if size is None:
        O = tensor.random_orthogonal(k, rng)
        J = O @ J0 @ O.T
    else:
        A = rng.standard_normal((size, k, k))
        Q, R = np.linalg.qr(A)
        O = Q * np.sign(np.diagonal(R, axis1=-2, axis2=-1))[..., None, :]
        J = O @ J0 @ np.swapaxes(O, -1, -2)
    return 0.5 * (J - np.swapaxes(J, -1, -2))


def random_symmetric(shape_lead, n, rng):
    A = rng.standard_normal(tuple(shape_lead) + (n, n))
    return (A + np.swapaxes(A, -1, -2)) / math.sqrt(2.0)


@lru_cache(maxsize=None)
def _sym3_layout(n):
    triples = list(itertools.combinations_with_replacement(range(n), 3))
    pos = {t: u for u, t in enumerate(triples)}
    index = np.array([pos[tuple(sorted(t))] for t in itertools.product(range(n), repeat=3)])
    # symmetrising an i.i.d. normal tensor gives variance 1 / (number of distinct index orders)
    std = np.array([1.0 / math.sqrt(len(set(itertools.permutations(t)))) for t in triples])
    return index, std


def random_fully_symmetric(shape_lead, n, rng, scale=1.0):
    """Same law as symmetrising an i.i.d. standard normal (n, n, n) tensor, drawn on the
    independent components only; scale broadcasts against shape_lead."""
    index, std = _sym3_layout(n)
    u = rng.standard_normal(tuple(shape_lead) + (std.size,)) * std
    u *= np.asarray(scale)[..., None]
    return np.take(u, index, axis=-1).reshape(tuple(shape_lead) + (n, n, n))


def random_sff(dims: Dimensions, scale, seed=None, size=None, pinched=False, eps=0.0, fraction=None):
    """Symmetrised i.i.d. normal h[alpha, i, j] times scale.

    With pinched=True the traceless part is rescaled so that |h_traceless|^2
    is a random fraction (in (0, 1)) of the admissible threshold W(|H|^2) of
    the dimension's pinching case, which makes the sample strictly pinched.
    """
    if scale < 0:
        raise ContractViolation("scale must be nonnegative")
    rng = _rng(seed)
    lead = () if size is None else (size,)
    h = scale * random_symmetric(lead + (dims.q,), dims.n, rng)
    if not pinched:
        return h
    return _pinch(h, dims, rng, eps, fraction)


# ---------------------------------------------------------------------------
# Richardson extrapolation


class RichardsonResult(NamedTuple):
    value: float
    order: float
    converged: bool


def richardson(v_s, v_s2, v_s4):
    """Extrapolate values computed at spacings s, s/2, s/4.

    The observed order is log2 of the ratio of successive differences; the
    extrapolated value removes the leading error term with that order.
    """
    d1 = v_s - v_s2
    d2 = v_s2 - v_s4
    if d1 == 0 and d2 == 0:
        return RichardsonResult(float(v_s4), math.inf, True)
    if d2 == 0 or d1 / d2 <= 0:
        return RichardsonResult(float(v_s4), math.nan, False)
    p = math.log2(d1 / d2)
    if not p > 0:
        return RichardsonResult(float(v_s4), p, False)
    return RichardsonResult(float(v_s4 - d2 / (2.0 ** p - 1.0)), p, False)


def observed_order(spacings, errors):
    """Least-squares slope of log(error) against log(spacing)."""
    x = np.log(np.asarray(spacings, dtype=float))
    y = np.log(np.asarray(errors, dtype=float))
    return float(np.polyfit(x, y, 1)[0])


# ---------------------------------------------------------------------------
# falsification catalogue


@dataclass(frozen=True)
class SampleSpec:
    dims: tuple = ((8, 2),)
    count: int = 100_000
    scales: tuple = SCALES
    seed: int = 0
    pinched_only: bool = False   # every h-based entry draws pinched samples
    codazzi: bool = True         # False: gradient_lower_bound sees the raw symmetric S (a negative control)
    h_aligned: bool = False      # rotate the normal frame so that H is along the first normal
    eps: float = 0.0
    threads: int = 1

    def __post_init__(self):
        if self.count < 1:
            raise ContractViolation("sample count must be >= 1")
        object.__setattr__(self, "dims", tuple(tuple(int(v) for v in d) for d in self.dims))
        object.__setattr__(self, "scales", tuple(float(s) for s in self.scales))


@dataclass(frozen=True)
class Inequality:
    id: str
    kind: str          # "inequality" or "identity"
    sampler: str       # "hJ", "pinched" or "gradient"
    description: str


CATALOG = {
    c.id: c for c in [
        Inequality("R1_bound_split", "inequality", "hJ",
                   "R1 <= |h|^4 - (2/n) rho2 |H|^2 + 2 rho1 rho2 + rho2^2 / 2"),
        Inequality("R2_identity", "identity", "hJ", "R2 = |H|^2 (|h|^2 - rho2)"),
        Inequality("S1_bound_split", "inequality", "hJ",
                   "S1 <= (3/n) S2 + 3|ht|^2 + 8 sqrt(theta2 rho1 rho2) + 4 theta2 rho2"),
        Inequality("R1_bound_traceless", "inequality", "hJ",
                   "R1 <= |h|^4 - (2/n) rho2 |H|^2 + 2 |ht|^2 rho2 - (3/2) rho2^2"),
        Inequality("S1_bound_linear", "inequality", "hJ", "S1 <= (3/n) S2 + (2n + 3) |ht|^2"),
        Inequality("gradient_lower_bound", "inequality", "gradient",
                   "|grad h|^2 >= case rhs in |grad H|^2 and |P|^2 (Codazzi-completed gradients)"),
        Inequality("symmetrization", "inequality", "gradient",
                   "|S|^2 >= 3/(n+2) sum_(alpha,i) (sum_k S_ikk)^2"),
        Inequality("R3_lower_bound", "inequality", "pinched",
                   "R3 >= |H|^4/n^2 + (3 rho1 + rho2)|H|^2/n - c_n |H| (|ht|^3 - |ht| rho2 / 2)"),
    ]
}

# catalogue entries tied to the inequalities listed for the tensor layer
TENSOR_INEQUALITIES = ("R1_bound_split", "S1_bound_split", "R1_bound_traceless", "S1_bound_linear",
                       "symmetrization", "R3_lower_bound", "gradient_lower_bound")


SAMPLERS = ("hJ", "gradient", "pinched")


class _Batch:
    """Lazily shared quantities for one batch of samples."""

    def __init__(self, dims, J, h=None, S=None, codazzi=True):
        self.dims, self.J, self.h, self.S, self.codazzi = dims, J, h, S, codazzi
        self._inv = self._rt = None

    @property
    def inv(self):
        if self._inv is None:
            self._inv = tensor.sff_invariants(self.h, self.J)
        return self._inv

    @property
    def rt(self):
        if self._rt is None:
            self._rt = tensor.reaction_terms(self.h, self.J)
        return self._rt


def _terms(ineq_id, b: _Batch):
    """Dict with 'slack' (rhs - lhs, >= 0 when the inequality holds) and 'mag', the sum of
    absolute values of the terms; identities also carry 'rel'."""
    n = b.dims.n
    if ineq_id == "symmetrization":
        slack = tensor.symmetrization_slack(b.S)
        return {"slack": slack, "mag": tensor.sumsq(b.S, 4)}
    if ineq_id == "gradient_lower_bound":
        if b.codazzi:
            gsf = tensor.codazzi_complete(b.S, b.J)
        else:
            gsf = tensor.GradientSFF(b.S, np.trace(b.S, axis1=-3, axis2=-2))
        normP2, _ = tensor.p_norms(b.J, n)
        lhs = gsf.norm2
        rhs = tensor.gradient_rhs(gsf.normH2, normP2, b.dims)
        return {"lhs": lhs, "rhs": rhs, "slack": lhs - rhs, "mag": lhs + np.abs(rhs)}
    inv = b.inv
    H2, h2, t2 = inv.normH2, inv.normh2, inv.normtrace2
    r1, r2, th2 = inv.rho1, inv.rho2, inv.theta2
    if ineq_id == "R1_bound_split":
        lhs, parts = b.rt.R1, [h2 ** 2, -2.0 / n * r2 * H2, 2 * r1 * r2, 0.5 * r2 ** 2]
    elif ineq_id == "R1_bound_traceless":
        lhs, parts = b.rt.R1, [h2 ** 2, -2.0 / n * r2 * H2, 2 * t2 * r2, -1.5 * r2 ** 2]
    elif ineq_id == "S1_bound_split":
        lhs = b.rt.S1
        parts = [3.0 / n * b.rt.S2, 3 * t2, 8 * np.sqrt(np.clip(th2 * r1 * r2, 0, None)), 4 * th2 * r2]
    elif ineq_id == "S1_bound_linear":
        lhs, parts = b.rt.S1, [3.0 / n * b.rt.S2, (2 * n + 3) * t2]
    elif ineq_id == "R2_identity":
        lhs, rhs = b.rt.R2, H2 * (h2 - r2)
        diff = np.abs(lhs - rhs)
        den = np.maximum(np.maximum(np.abs(lhs), np.abs(rhs)), np.finfo(float).tiny)
        return {"lhs": lhs, "rhs": rhs, "slack": -diff, "rel": diff / den, "mag": np.abs(lhs) + np.abs(rhs)}
    elif ineq_id == "R3_lower_bound":
        c = (n - 2) / math.sqrt(n * (n - 1))
        nH = np.sqrt(H2)
        nt = np.sqrt(np.clip(t2, 0, None))
        # here the bound sits on the left: R3 >= bound
        bound = [H2 ** 2 / n ** 2, (3 * r1 + r2) / n * H2, -c * nH * nt ** 3, 0.5 * c * nH * nt * r2]
        lb = sum(bound)
        R3 = tensor.reaction_R3(b.h)
        mag = np.abs(R3) + sum(np.abs(t) for t in bound)
        return {"lhs": lb, "rhs": R3, "slack": R3 - lb, "mag": mag}
    else:
        raise ContractViolation(f"unknown inequality id {ineq_id!r}")
    rhs = sum(parts)
    return {"lhs": lhs, "rhs": rhs, "slack": rhs - lhs, "mag": np.abs(lhs) + sum(np.abs(t) for t in parts)}


def _sampler(ineq_id, spec):
    s = CATALOG[ineq_id].sampler
    return "pinched" if spec.pinched_only and s == "hJ" else s


def _draw(sampler, dims: Dimensions, scales, rng, spec):
    count = len(scales)
    J = random_complex_structure(dims.n + dims.q, rng, size=count)
    if sampler == "gradient":
        S = random_fully_symmetric((count, dims.q), dims.n, rng, scales[:, None])
        return _Batch(dims, J, S=S, codazzi=spec.codazzi)
    h = scales[:, None, None, None] * random_symmetric((count, dims.q), dims.n, rng)
    if sampler == "pinched":
        h = _pinch(h, dims, rng, spec.eps)
    if spec.h_aligned:
        h, J, _ = tensor.align_normal_to_H(h, J)
    return _Batch(dims, J, h=h)


def _pinch(h, dims, rng, eps, fraction=None):
    case = PinchingCase.of(dims)
    if case.tag is CaseTag.UNSUPPORTED:
        raise ContractViolation(f"no pinching condition for n={dims.n}, q={dims.q}")
    n = dims.n
    H = tensor.mean_curvature(h)
    x = np.sum(H * H, axis=-1)
    ht = tensor.traceless(h)
    t2 = np.sum(ht * ht, axis=(-1, -2, -3))
    if case.tag is CaseTag.HYPERSURFACE:
        W = W_threshold(x, case, PhiParams(n, eps)) - eps * x - eps
    elif case.tag is CaseTag.MID:
        W = W_threshold(x, case) * (1 - eps)
    else:
        W = W_threshold(x, case) - eps * x - eps
    u = rng.uniform(0.0, 1.0, size=x.shape) if fraction is None else np.full(x.shape, float(fraction))
    factor = np.sqrt(np.clip(u * W, 0, None) / np.where(t2 > 0, t2, 1.0))
    return ht * factor[..., None, None, None] + (H / n)[..., None, None] * np.eye(n)


def _chunk_stream(seed, sampler, dims, chunk):
    key = (SAMPLERS.index(sampler), dims.n, dims.q, chunk)
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=key))


def _sample_record(ineq_id, b: _Batch, idx, terms, scale, seed, sample_index):
    rec = {"inequality": ineq_id, "seed": seed, "sample_index": int(sample_index),
           "dims": {"n": b.dims.n, "q": b.dims.q}, "scale": float(scale), "J_AB": b.J[idx].tolist()}
    if b.h is not None:
        rec["h"] = b.h[idx].tolist()
    if b.S is not None:
        rec["S"] = b.S[idx].tolist()
    rec["slacks"] = {k: float(v[idx]) for k, v in terms.items()}
    return rec


def recompute_extended(ineq_id, rec, codazzi=True):
    """Re-evaluate one serialised sample in extended precision (numpy longdouble).

    Returns the terms dict with scalar entries."""
    d = Dimensions(rec["dims"]["n"], rec["dims"]["q"])
    ld = np.longdouble
    J = np.asarray(rec["J_AB"], dtype=ld)
    h = np.asarray(rec["h"], dtype=ld) if "h" in rec else None
    S = np.asarray(rec["S"], dtype=ld) if "S" in rec else None
    return _terms(ineq_id, _Batch(d, J, h=h, S=S, codazzi=codazzi))


@dataclass
class FalsificationReport:
    inequality: str
    n: int
    q: int
    seed: int
    samples: int
    scales: tuple
    min_slack: float
    min_normalized_slack: float
    argmin: dict
    candidates: int
    confirmed: list
    passed: bool
    kind: str = "inequality"
    max_rel_error: float = None
    runtime_s: float = None

    @property
    def confirmed_count(self):
        return len(self.confirmed)

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=1)


def _run_chunk(ids, spec, d, c):
    cnt = min(CHUNK, spec.count - c * CHUNK)
    base = c * CHUNK
    scales = np.asarray(spec.scales)[(base + np.arange(cnt)) % len(spec.scales)]
    sampler = _sampler(ids[0], spec)
    rng = _chunk_stream(spec.seed, sampler, d, c)
    b = _draw(sampler, d, scales, rng, spec)
    leak = tolerances.get().slack_leak
    strict = tolerances.get().strict_rel
    out = {}
    for i in ids:
        t = _terms(i, b)
        norm = t["slack"] / (1.0 + t["mag"])
        k = int(np.argmin(norm))
        best = _sample_record(i, b, k, t, scales[k], spec.seed, base + k)
        rel = None
        if CATALOG[i].kind == "identity":
            # float64 cancellation in |h|^2 - rho2; flagged samples are recomputed in extended precision
            bad = np.nonzero(t["rel"] > strict)[0]
            rel = t["rel"].copy()
            for j in bad:
                rec = _sample_record(i, b, j, t, scales[j], spec.seed, base + j)
                rel[j] = float(recompute_extended(i, rec)["rel"])
            cands = []
            rel = float(np.max(rel))
        else:
            bad = np.nonzero(t["slack"] < -leak * (1.0 + t["mag"]))[0]
            cands = [_sample_record(i, b, j, t, scales[j], spec.seed, base + j) for j in bad]
        out[i] = (float(np.min(t["slack"])), float(norm[k]), best, cands, rel)
    return out


def _falsify_group(ids, spec, d):
    from .immersion import resolve_threads
    t0 = time.perf_counter()
    n_chunks = -(-spec.count // CHUNK)
    threads = resolve_threads(spec.threads)
    if threads <= 1:
        res = [_run_chunk(ids, spec, d, c) for c in range(n_chunks)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            res = list(ex.map(lambda c: _run_chunk(ids, spec, d, c), range(n_chunks)))
    elapsed = (time.perf_counter() - t0) / len(ids)
    tol = tolerances.get()
    reports = {}
    for i in ids:
        rows = [r[i] for r in res]
        k = int(np.argmin([r[1] for r in rows]))
        cands = [c for r in rows for c in r[3]]
        confirmed = []
        if CATALOG[i].kind == "identity":
            rel = max(r[4] for r in rows)
            passed = rel <= tol.strict_rel
        else:
            rel = None
            for c in cands:
                s = float(recompute_extended(i, c, spec.codazzi)["slack"])
                c["slack_extended"] = s
                if s < -tol.confirm_abs:
                    confirmed.append(c)
            passed = not cands
        reports[i] = FalsificationReport(i, d.n, d.q, spec.seed, spec.count, spec.scales,
                                         min(r[0] for r in rows), rows[k][1], rows[k][2], len(cands),
                                         confirmed, passed, CATALOG[i].kind, rel, elapsed)
    return reports


def falsify(ineq_id, spec: SampleSpec) -> list:
    """Evaluate one catalogue entry on spec.count samples for every dims pair in spec.

    Returns one FalsificationReport per (n, q). A sample is a candidate
    counterexample when slack < -1e-9 (1 + magnitude), the magnitude being the
    sum of absolute values of the terms; a candidate is confirmed when its
    slack recomputed in extended precision is still below -1e-6. Identities
    (R2_identity) pass when the relative error is at most 1e-12 on every sample.
    """
    return falsify_catalog(spec, [ineq_id])


def falsify_catalog(spec: SampleSpec, ids=None) -> list:
    """Reports for several catalogue entries; entries sharing a sampler see the same samples."""
    ids = list(CATALOG) if ids is None else list(ids)
    for i in ids:
        if i not in CATALOG:
            raise ContractViolation(f"{i!r} is not in the catalogue")
    out = {}
    for dd in spec.dims:
        d = Dimensions(*dd)
        for sampler in SAMPLERS:
            group = [i for i in ids if _sampler(i, spec) == sampler]
            if group:
                for i, r in _falsify_group(group, spec, d).items():
                    out[(i, dd)] = r
    return [out[(i, dd)] for i in ids for dd in spec.dims]


REPORT_COLUMNS = ("inequality", "n", "q", "seed", "samples", "min_slack", "min_normalized_slack",
                  "candidates", "confirmed", "max_rel_error", "pass")


def reports_to_csv(reports):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for r in reports:
        w.writerow([r.inequality, r.n, r.q, r.seed, r.samples, repr(r.min_slack), repr(r.min_normalized_slack),
                    r.candidates, r.confirmed_count, "" if r.max_rel_error is None else repr(r.max_rel_error),
                    r.passed])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# distance spheres: H(r) table and the radius ODE


@dataclass(frozen=True)
class RadiusTable:
    m: int
    radii: np.ndarray
    H: np.ndarray          # inward mean curvature (signed), Richardson-extrapolated
    order: np.ndarray      # observed order at each radius
    spread: np.ndarray     # |extrapolated - finest| per radius
    ratio: np.ndarray      # |ht|^2 / |h|^2 at the finest level

    def spline(self):
        """Spline of r (pi/2 - r) H(r), which stays bounded at both ends."""
        G = self.radii * (math.pi / 2 - self.radii) * self.H
        return CubicSpline(self.radii, G)

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        return self.spline()(r) / (r * (math.pi / 2 - r))


def _patch_values(m, r, step):
    """Signed inward |H| and |ht|^2/|h|^2 at the centre of a small sphere patch."""
    from .immersion import build_sphere_patch, extract_geometry, sphere_chart
    im = build_sphere_patch(m, r, step)
    geom = extract_geometry(im, gradients=False)
    c = tuple(s // 2 for s in im.topology.shape)
    Hvec = geom.Hvec[c]
    z = geom.z[c]
    # outward unit normal: derivative of the chart in r at the centre
    u = z[1:] / np.linalg.norm(z[1:])
    nout = np.concatenate([[-math.sin(r) + 0j], math.cos(r) * u])
    signed = -float(np.real(np.vdot(nout, Hvec)))
    inv = geom.inv
    return signed, float(inv.normtrace2[c] / inv.normh2[c])


@lru_cache(maxsize=8)
def _radius_table(m, r_min, r_max, count, step):
    radii = np.unique(np.concatenate([np.linspace(r_min, r_max, count), [math.pi / 4]]))
    H = np.empty_like(radii)
    order = np.empty_like(radii)
    spread = np.empty_like(radii)
    ratio = np.empty_like(radii)
    for i, r in enumerate(radii):
        vals = [_patch_values(m, r, step / 2 ** k) for k in range(3)]
        res = richardson(*(v[0] for v in vals))
        H[i] = res.value
        order[i] = res.order
        spread[i] = abs(res.value - vals[2][0])
        ratio[i] = vals[2][1]
    return RadiusTable(m, radii, H, order, spread, ratio)


def sphere_radius_table(m=2, r_min=0.04, r_max=math.pi / 2 - 0.04, count=61, step=0.04):
    """H(r) for distance spheres, from finite-difference extraction on small chart patches.

    Each radius is evaluated at patch spacings step, step/2, step/4 and
    Richardson-extrapolated.
    """
    return _radius_table(int(m), float(r_min), float(r_max), int(count), float(step))


@dataclass
class RadiusTrajectory:
    t: np.ndarray
    r: np.ndarray
    extinction_time: float
    monotone_decreasing: bool
    sol: object = field(repr=False, default=None)

    def __call__(self, t):
        return self.sol(np.asarray(t, dtype=float))[0]


def sphere_radius_reference(m, r0, t_grid=None, min_radius=0.05, t_max=10.0, table: RadiusTable = None):
    """Radius of a distance sphere under mean curvature flow: dr/dt = -H(r), H from the table.

    Integrated with DOP853 at rtol 1e-10. Stops when r falls below min_radius
    (reported as the extinction time) or leaves the table range.
    """
    if not 0.1 < r0 < math.pi / 2 - 0.1:
        raise ContractViolation("r0 must lie in (0.1, pi/2 - 0.1)")
    table = sphere_radius_table(m) if table is None else table
    lo, hi = float(table.radii[0]), float(table.radii[-1])
    spl = table.spline()

    def rhs(t, y):
        r = y[0]
        return [-spl(r) / (r * (math.pi / 2 - r))]

    def low(t, y):
        return y[0] - max(min_radius, lo)
    low.terminal = True

    def high(t, y):
        return hi - y[0]
    high.terminal = True

    sol = solve_ivp(rhs, (0.0, t_max), [r0], method="DOP853", rtol=1e-10, atol=1e-12,
                    events=[low, high], dense_output=True)
    ext = float(sol.t_events[0][0]) if len(sol.t_events[0]) else math.nan
    if t_grid is None:
        t = sol.t
        r = sol.y[0]
    else:
        t = np.asarray(t_grid, dtype=float)
        t = t[t <= sol.t[-1]]
        r = sol.sol(t)[0]
    mono = bool(np.all(np.diff(sol.y[0]) < 0))
    return RadiusTrajectory(t, r, ext, mono, sol.sol)
