"""Explicit mean curvature flow dF/dt = H on a DiscreteImmersion, with monitors.

Each step moves every node along the Fubini-Study geodesic in the direction of
its mean curvature vector (forward Euler on the retraction). Full geometry,
with gradients, is extracted only at the monitor cadence; steps use the
cheaper mean curvature vector alone.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import asdict, dataclass, field, fields
from enum import Enum
from functools import lru_cache

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra

from . import tensor
from .ambient import distance_arrays, gauge_fix, retract_arrays
from .errors import ConfigError, ContractViolation, DegenerateImmersionError
from .immersion import (DiscreteImmersion, GeometryField, GridTopology, extract_geometry, laplace_beltrami,
                        mean_curvature_vector, random_unitary, save_snapshot)
from .pinching import CaseTag, PhiParams, PinchingCase, PsiParams, f_sigma, phi_eps, psi

FORMAT_VERSION = 1


class Classification(str, Enum):
    BLOWUP_DETECTED = "BLOWUP_DETECTED"
    DECAY_DETECTED = "DECAY_DETECTED"
    COMPLETED = "COMPLETED"
    INCONCLUSIVE = "INCONCLUSIVE"
    ABORTED = "ABORTED"


class EventKind(str, Enum):
    PINCHING_VIOLATED = "PINCHING_VIOLATED"
    BLOWUP_DETECTED = "BLOWUP_DETECTED"
    DECAY_DETECTED = "DECAY_DETECTED"
    STEP_REJECTED = "STEP_REJECTED"
    COMPLETED = "COMPLETED"


BOUNDARY_CLOSURES = ("neumann", "free")


def default_eta(n, eps):
    """Midpoint of the admissible interval (0, sqrt(eps) / (8 n pi))."""
    return 0.5 * math.sqrt(eps) / (8 * n * math.pi)


@dataclass(frozen=True)
class FlowConfig:
    dt_safety: float = 0.15
    max_steps: int = 20000
    t_max: float = math.inf
    sigma: float = 0.01
    eps: float = 1e-3
    eta: float | None = None           # None: default_eta(n, eps)
    blowup_h2: float = 1e3
    decay_h2: float = 1e-8
    min_radius: float | None = None    # stop once the mean distance to `center` drops below this
    monitor_every: int = 5
    chart_rotation_seed: int | None = None
    waive_pinching: bool = False
    diameter: bool = True
    transient_steps: int = 10
    max_rejections: int = 8
    snapshot_every: int = 0
    blowup_ratio: float = 0.9
    blowup_diameter_factor: float = 10.0
    final_fraction: float = 0.1
    boundary: str = "neumann"          # closure at clamped grid ends: "neumann" or "free"
    threads: int = 1

    def __post_init__(self):
        if not 0 < self.dt_safety <= 1:
            raise ConfigError("dt_safety must lie in (0, 1]")
        if not 0 < self.sigma < 1:
            raise ConfigError("sigma must lie in (0, 1)")
        if not 0 <= self.eps <= 1:
            raise ConfigError("eps must lie in [0, 1]")
        if self.max_steps < 1 or self.monitor_every < 1:
            raise ConfigError("max_steps and monitor_every must be >= 1")
        if self.max_rejections < 0 or self.snapshot_every < 0 or self.transient_steps < 0:
            raise ConfigError("counts must be nonnegative")
        if not (self.blowup_h2 > 0 and self.decay_h2 >= 0):
            raise ConfigError("stop thresholds must be positive")
        if not 0 < self.final_fraction <= 1:
            raise ConfigError("final_fraction must lie in (0, 1]")
        if self.boundary not in BOUNDARY_CLOSURES:
            raise ConfigError(f"boundary must be one of {BOUNDARY_CLOSURES}")

    def eta_for(self, n):
        eta = default_eta(n, self.eps) if self.eta is None else float(self.eta)
        if self.diameter and not 0 < eta < math.sqrt(self.eps) / (8 * n * math.pi):
            raise ConfigError(f"eta must lie in (0, sqrt(eps)/(8 n pi)) = (0, {math.sqrt(self.eps) / (8 * n * math.pi):.3g})")
        return eta

    def to_dict(self):
        d = asdict(self)
        d["t_max"] = None if math.isinf(self.t_max) else self.t_max
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown flow settings: {sorted(extra)}")
        if d.get("t_max") is None:
            d.pop("t_max", None)
        return cls(**d)


@dataclass
class FlowState:
    immersion: DiscreteImmersion
    t: float = 0.0
    step: int = 0
    Hvec: np.ndarray = None          # mean curvature vector at every node
    geometry: GeometryField = None   # full geometry, present at monitored steps
    dt_prev: float = None            # size of the step that produced this state

    def __post_init__(self):
        if self.t < 0:
            raise ContractViolation("time must be nonnegative")
        if self.Hvec is None:
            self.Hvec = mean_curvature_vector(self.immersion)

    @property
    def H2(self):
        return np.sum(np.abs(self.Hvec) ** 2, axis=-1)


@dataclass
class MonitorRecord:
    step: int
    t: float
    dt: float
    max_h2: float
    min_H2: float
    max_H2: float
    H2_ratio: float
    max_U: float
    max_f_sigma: float
    max_scaled_traceless: float   # |ht|^2 (|H|^2 + 1)^(sigma - 1) e^(eps t / 2), recorded raw
    min_ricci_lower: float
    diameter: float
    myers_bound: float
    myers_L: float
    myers_pinched: bool
    myers_large_H: bool
    myers_small_gradH: bool
    evolution_residual: float
    mean_radius: float
    case: str

    @property
    def myers_hypotheses(self):
        return self.myers_pinched and self.myers_large_H and self.myers_small_gradH


RECORD_FIELDS = tuple(f.name for f in fields(MonitorRecord))


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def records_to_csv(records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RECORD_FIELDS)
    for r in records:
        w.writerow([_fmt(getattr(r, k)) for k in RECORD_FIELDS])
    return buf.getvalue()


def records_from_csv(text):
    rows = list(csv.DictReader(io.StringIO(text)))
    out = []
    for row in rows:
        vals = {}
        for f in fields(MonitorRecord):
            v = row[f.name]
            if f.type in ("int",):
                vals[f.name] = int(v)
            elif f.type in ("bool",):
                vals[f.name] = v == "true"
            elif f.type in ("str",):
                vals[f.name] = v
            else:
                vals[f.name] = float(v)
        out.append(MonitorRecord(**vals))
    return out


@dataclass
class EventLog:
    events: list = field(default_factory=list)

    def append(self, kind, step, t, **payload):
        kind = EventKind(kind)
        if self.events and t < self.events[-1]["t"]:
            raise ContractViolation("event timestamps must be monotone")
        self.events.append({"event": kind.value, "step": int(step), "t": float(t), "payload": payload})

    def kinds(self):
        return [e["event"] for e in self.events]

    def to_jsonl(self):
        return "".join(json.dumps(e, default=_json_default) + "\n" for e in self.events)

    def __len__(self):
        return len(self.events)


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, Enum):
        return o.value
    raise TypeError(type(o))


# ---------------------------------------------------------------------------
# stepping


def adaptive_dt(state: FlowState, cfg: FlowConfig, max_h2=None, spacing=None):
    """dt_safety * min(spacing^2, 1 / (max|h|^2 + n)), spacing being the shortest grid edge."""
    n = state.immersion.dims.n
    if max_h2 is None:
        if state.geometry is None:
            raise ContractViolation("adaptive_dt needs max|h|^2 or cached geometry")
        max_h2 = float(np.max(state.geometry.inv.normh2))
    if spacing is None:
        spacing = state.immersion.min_spacing()
    dt = cfg.dt_safety * min(spacing ** 2, 1.0 / (max_h2 + n))
    if not dt > 0:
        raise ContractViolation("time step must be positive")
    return dt


def boundary_velocity(Hvec, topo: GridTopology, closure="neumann"):
    """Velocity used to move the nodes.

    A grid patch with clamped (non-periodic) ends has no boundary condition,
    and the free problem lets modes growing away from the ends take over. The
    "neumann" closure keeps the direction of H at each end node but sets its
    length so that the one-sided fourth-order derivative of |H| across the
    end vanishes. "free" moves every node by its own H.
    """
    if closure == "free" or all(topo.periodic):
        return Hvec
    V = np.array(Hvec, copy=True)
    s = np.sqrt(np.sum(np.abs(V) ** 2, axis=-1))
    c = np.array([48.0, -36.0, 16.0, -3.0]) / 25.0
    for ax, per in enumerate(topo.periodic):
        if per:
            continue
        sm = np.moveaxis(s, ax, 0)
        Vm = np.moveaxis(V, ax, 0)
        for end, inner in ((0, [1, 2, 3, 4]), (-1, [-2, -3, -4, -5])):
            target = sum(w * sm[j] for w, j in zip(c, inner))
            own = sm[end]
            scale = np.where(own > 0, np.clip(target, 0, None) / np.where(own > 0, own, 1.0), 0.0)
            Vm[end] = Vm[end] * scale[..., None]
            sm[end] = np.sqrt(np.sum(np.abs(Vm[end]) ** 2, axis=-1))
    return V


def step(state: FlowState, dt, sign=1.0, boundary="neumann") -> FlowState:
    """Move every node by retract(z, V, dt) and re-validate; V is H with the boundary closure.

    sign=-1 moves against V (used for the time-symmetry check). Raises
    DegenerateImmersionError if the new nodes do not form a valid immersion.
    """
    if not dt > 0:
        raise ContractViolation("dt must be positive")
    im = state.immersion
    V = boundary_velocity(state.Hvec, im.topology, boundary)
    z = retract_arrays(im.z, sign * V, dt)
    new = DiscreteImmersion(im.topology, z, im.dims, validate=False)
    d = new.edge_lengths()
    if not np.all(np.isfinite(d)) or d.max() > 0.5:
        raise DegenerateImmersionError("adjacent nodes too far apart after the step")
    Hvec = mean_curvature_vector(new)   # also checks the rank of the differential
    if not np.all(np.isfinite(Hvec)):
        raise DegenerateImmersionError("mean curvature is not finite after the step")
    return FlowState(new, state.t + dt, state.step + 1, Hvec, None, dt)


# ---------------------------------------------------------------------------
# monitors


def pinching_margin(normh2, normtrace2, normH2, case: PinchingCase, eps):
    """U = |ht|^2 - threshold; negative while pinched.

    Hypersurfaces and the high-codimension case use W - eps |H|^2 - eps with
    W the traceless threshold; the middle case uses (k |H|^2 + l)(1 - eps).
    """
    x = np.asarray(normH2, dtype=float)
    n = case.n
    if case.tag is CaseTag.HYPERSURFACE:
        return normtrace2 - (phi_eps(x, PhiParams(n, eps)) - x / n - eps * x - eps)
    if case.tag is CaseTag.HIGH:
        return normtrace2 - (psi(x, PsiParams(n)) - x / n - eps * x - eps)
    if case.tag is CaseTag.MID:
        return normtrace2 - (case.k * x + case.l) * (1 - eps)
    return np.full(np.shape(normh2), np.nan)


def traceless_threshold(normH2, case: PinchingCase, eps):
    x = np.asarray(normH2, dtype=float)
    if case.tag is CaseTag.HYPERSURFACE:
        return phi_eps(x, PhiParams(case.n, eps)) - x / case.n
    if case.tag is CaseTag.HIGH:
        return psi(x, PsiParams(case.n)) - x / case.n
    if case.tag is CaseTag.MID:
        return case.k * x + case.l
    return None


def ricci_lower_bound(normh2, normtrace2, normH2, n):
    """(n-1)/n (n + (2/n)|H|^2 - |h|^2 - (n-2)/sqrt(n(n-1)) |H| |ht|)."""
    c = (n - 2) / math.sqrt(n * (n - 1))
    return (n - 1) / n * (n + 2.0 / n * normH2 - normh2 - c * np.sqrt(normH2 * np.clip(normtrace2, 0, None)))


@lru_cache(maxsize=16)
def _graph_edges(topo: GridTopology):
    """Node index pairs of grid neighbours, including diagonals, wrapping periodic axes."""
    shape = topo.shape
    idx = np.arange(int(np.prod(shape))).reshape(shape)
    offs = [o for o in np.ndindex(*(3,) * topo.ndim)]
    offs = [tuple(v - 1 for v in o) for o in offs]
    offs = [o for o in offs if any(o) and o[next(i for i, v in enumerate(o) if v)] > 0]
    src, dst = [], []
    for o in offs:
        a = idx
        b = idx
        for ax, (v, per) in enumerate(zip(o, topo.periodic)):
            if v == 0:
                continue
            b = np.roll(b, -v, axis=ax)
            if not per:
                sl = [slice(None)] * topo.ndim
                sl[ax] = slice(0, shape[ax] - 1) if v > 0 else slice(1, None)
                a = a[tuple(sl)]
                b = b[tuple(sl)]
        src.append(a.ravel())
        dst.append(b.ravel())
    return np.concatenate(src), np.concatenate(dst)


def diameter_estimate(im: DiscreteImmersion):
    """Double-sweep Dijkstra over the grid graph with Fubini-Study edge lengths (a lower bound)."""
    src, dst = _graph_edges(im.topology)
    zf = im.z.reshape(-1, im.z.shape[-1])
    w = distance_arrays(zf[src], zf[dst])
    N = zf.shape[0]
    G = coo_matrix((np.maximum(w, 1e-300), (src, dst)), shape=(N, N)).tocsr()
    d0 = dijkstra(G, directed=False, indices=0)
    far = int(np.argmax(d0))
    d1 = dijkstra(G, directed=False, indices=far)
    return float(np.max(d1))


def monitors(state: FlowState, cfg: FlowConfig, dt=math.nan, center=None) -> MonitorRecord:
    """All monitored quantities for a state; extracts full geometry if it is not cached."""
    im = state.immersion
    if state.geometry is None:
        state.geometry = extract_geometry(im, gradients=True, threads=cfg.threads)
    geom = state.geometry
    n = im.dims.n
    inv = geom.inv
    h2, H2, t2 = inv.normh2, inv.normH2, inv.normtrace2
    case = PinchingCase.of(im.dims)
    U = pinching_margin(h2, t2, H2, case, cfg.eps)
    W = traceless_threshold(H2, case, cfg.eps)
    fs = float(np.max(f_sigma(t2, W, cfg.sigma))) if W is not None else math.nan
    scaled = float(np.max(t2 * (H2 + 1.0) ** (cfg.sigma - 1) * math.exp(cfg.eps * state.t / 2)))
    eta = cfg.eta_for(n)
    maxH2 = float(np.max(H2))
    minH2 = float(np.min(H2))
    maxH = math.sqrt(maxH2)
    myers = 1.0 / (2 * eta * maxH) if maxH > 0 else math.inf
    # hypotheses of the Myers diameter bound, with the smallest admissible L
    c1 = 1.0 / (n - 1) - cfg.eps
    L = max(float(np.max(h2 - c1 * H2)), 0.0)
    L = L * (1 + 1e-12) + 1e-300
    flag_a = bool(np.all(h2 < c1 * H2 + L)) and cfg.eps < 1.0 / (n * (n - 1))
    flag_b = maxH2 > 2 * n * L / cfg.eps if cfg.eps > 0 else False
    gradH = np.sqrt(geom.normGradH2)
    flag_c = bool(np.all(gradH < 2 * eta ** 2 * maxH2))
    diam = diameter_estimate(im) if cfg.diameter else math.nan
    if center is not None:
        rad = float(np.mean(distance_arrays(np.asarray(center)[None, :], im.z.reshape(-1, im.z.shape[-1]))))
    else:
        rad = math.nan
    return MonitorRecord(
        step=state.step, t=state.t, dt=dt, max_h2=float(np.max(h2)), min_H2=minH2, max_H2=maxH2,
        H2_ratio=minH2 / maxH2 if maxH2 > 0 else math.nan, max_U=float(np.max(U)), max_f_sigma=fs,
        max_scaled_traceless=scaled,
        min_ricci_lower=float(np.min(ricci_lower_bound(h2, t2, H2, n))), diameter=diam, myers_bound=myers,
        myers_L=L, myers_pinched=flag_a, myers_large_H=bool(flag_b), myers_small_gradH=flag_c,
        evolution_residual=math.nan, mean_radius=rad, case=case.tag.value)


def evolution_residual(prev: FlowState, cur: FlowState, nxt: FlowState, r2_scale=1.0, depth=4):
    """max over interior nodes of |d|H|^2/dt - (Lap|H|^2 - 2|grad H|^2 + 2n|H|^2 + 2 R2 + 6 S2)|.

    The time derivative is the central difference over the three states,
    which must be separated by equal steps. r2_scale multiplies R2 (fault
    injection). Interior nodes are those at least `depth` indices away from
    clamped ends.
    """
    dt1 = cur.t - prev.t
    dt2 = nxt.t - cur.t
    if not (dt1 > 0 and abs(dt1 - dt2) <= 1e-12 * max(dt1, dt2)):
        raise ContractViolation("evolution_residual needs three states separated by equal dt")
    im = cur.immersion
    if cur.geometry is None or not cur.geometry.has_gradients:
        cur.geometry = extract_geometry(im, gradients=True)
    geom = cur.geometry
    n = im.dims.n
    H2 = geom.inv.normH2
    dHdt = (nxt.H2 - prev.H2) / (dt1 + dt2)
    rt = tensor.reaction_terms(geom.h, geom.J)
    rhs = laplace_beltrami(H2, im, geom) - 2 * geom.normGradH2 + 2 * n * H2 + 2 * r2_scale * rt.R2 + 6 * rt.S2
    mask = im.topology.interior_mask(depth)
    return float(np.max(np.abs(dHdt - rhs)[mask]))


# ---------------------------------------------------------------------------
# driver


@dataclass
class RunResult:
    trajectory: list
    events: EventLog
    classification: Classification
    final_state: FlowState = None
    initial_spacing: float = math.nan

    def __iter__(self):
        return iter((self.trajectory, self.events, self.classification))

    def to_csv(self):
        return records_to_csv(self.trajectory)


def final_window(records, fraction=0.1):
    """Records whose step lies in the last `fraction` of the run's steps."""
    if not records:
        return []
    last = records[-1].step
    start = last - fraction * last
    return [r for r in records if r.step >= start]


def classify(records, cfg: FlowConfig, initial_spacing, stop_reason):
    if stop_reason == "decay":
        return Classification.DECAY_DETECTED
    if stop_reason == "blowup":
        win = final_window(records, cfg.final_fraction)
        ratio_ok = all(r.H2_ratio >= cfg.blowup_ratio for r in win)
        diam = [r.diameter for r in win]
        diam_ok = (not cfg.diameter) or (
            all(np.isfinite(diam)) and diam[-1] < cfg.blowup_diameter_factor * initial_spacing
            and diam[-1] <= diam[0])
        return Classification.BLOWUP_DETECTED if ratio_ok and diam_ok else Classification.INCONCLUSIVE
    if stop_reason in ("min_radius", "max_steps", "t_max"):
        return Classification.COMPLETED
    return Classification.INCONCLUSIVE


def rotate_chart(im: DiscreteImmersion, seed):
    """Apply a random unitary to every node (moves the immersion by an isometry)."""
    U = random_unitary(im.z.shape[-1], seed)
    return DiscreteImmersion(im.topology, gauge_fix(im.z @ U.T), im.dims, validate=True)


def run(initial: DiscreteImmersion, cfg: FlowConfig, out_dir=None, center=None, progress=None) -> RunResult:
    """Integrate until blowup, decay, the radius floor, max_steps or t_max.

    With out_dir set, writes trajectory.csv, events.jsonl and snapshots
    (every snapshot_every steps) there. `center` (a unit vector) enables the
    mean-radius monitor and the min_radius stop.
    """
    n = initial.dims.n
    cfg.eta_for(n)
    if cfg.chart_rotation_seed is not None:
        U = random_unitary(initial.z.shape[-1], cfg.chart_rotation_seed)
        initial = rotate_chart(initial, cfg.chart_rotation_seed)
        if center is not None:
            center = U @ np.asarray(center)
    state = FlowState(initial)
    geom0 = extract_geometry(initial, gradients=True, threads=cfg.threads)
    state.geometry = geom0
    case = PinchingCase.of(initial.dims)
    if not cfg.waive_pinching:
        if case.tag is CaseTag.UNSUPPORTED:
            raise ConfigError(f"no pinching condition for n={n}, q={initial.dims.q}; set waive_pinching")
        U0 = pinching_margin(geom0.inv.normh2, geom0.inv.normtrace2, geom0.inv.normH2, case, cfg.eps)
        if not np.max(U0) < 0:
            raise ConfigError(f"initial immersion is not pinched (max U = {np.max(U0):.4g}); set waive_pinching")
    snap_dir = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        if cfg.snapshot_every:
            snap_dir = os.path.join(out_dir, "snapshots")
            os.makedirs(snap_dir, exist_ok=True)
    initial_spacing = initial.min_spacing()
    records, events = [], EventLog()
    violated = False
    prev = None
    pending = None          # record at `prev` waiting for the next state to fill its residual
    last_h2 = last_H2 = None
    stop_reason = None
    spacing = initial_spacing
    while True:
        monitor_now = state.step % cfg.monitor_every == 0
        rec = None
        if monitor_now:
            rec = monitors(state, cfg, center=center)
            last_h2, last_H2 = rec.max_h2, rec.max_H2
            if rec.max_U >= 0 and not violated:
                events.append(EventKind.PINCHING_VIOLATED, state.step, state.t, max_U=rec.max_U)
            violated = rec.max_U >= 0
        if snap_dir is not None and state.step % cfg.snapshot_every == 0:
            save_snapshot(os.path.join(snap_dir, f"step_{state.step:07d}.cpmcf"), state.immersion, state.t)
        # stop conditions are judged on monitored states
        if rec is not None:
            if rec.max_h2 > cfg.blowup_h2:
                stop_reason = "blowup"
            elif rec.max_h2 < cfg.decay_h2:
                stop_reason = "decay"
            elif cfg.min_radius is not None and rec.mean_radius < cfg.min_radius:
                stop_reason = "min_radius"
        if stop_reason is None and state.step >= cfg.max_steps:
            stop_reason = "max_steps"
        if stop_reason is None and state.t >= cfg.t_max:
            stop_reason = "t_max"
        if stop_reason is not None:
            if rec is None:
                rec = monitors(state, cfg, center=center)
            records.append(rec)
            break
        # step size: max|h|^2 from the last monitor, scaled by the growth of max|H|^2 since then
        H2now = float(np.max(state.H2))
        h2est = last_h2 if not last_H2 else last_h2 * max(1.0, H2now / last_H2)
        dt = adaptive_dt(state, cfg, max_h2=h2est, spacing=spacing)
        if rec is not None and prev is not None and prev.dt_prev is not None:
            # reuse the previous step size so the residual sees equal steps
            if state.dt_prev <= 1.1 * dt:
                dt = state.dt_prev
        tries = 0
        while True:
            try:
                nxt = step(state, dt, boundary=cfg.boundary)
                break
            except DegenerateImmersionError as exc:
                events.append(EventKind.STEP_REJECTED, state.step, state.t, dt=dt, reason=str(exc),
                              node=getattr(exc, "node", None))
                tries += 1
                if tries > cfg.max_rejections:
                    stop_reason = "aborted"
                    break
                dt *= 0.5
        if stop_reason == "aborted":
            if rec is not None:
                records.append(rec)
            break
        if rec is not None:
            rec.dt = dt
            if prev is not None and abs((state.t - prev.t) - dt) <= 1e-12 * dt:
                rec.evolution_residual = evolution_residual(prev, state, nxt)
            records.append(rec)
        if progress is not None and rec is not None:
            progress(rec)
        spacing = nxt.immersion.min_spacing()
        state.geometry = None
        prev, state = state, nxt
    classification = Classification.ABORTED if stop_reason == "aborted" else classify(
        records, cfg, initial_spacing, stop_reason)
    if classification is Classification.BLOWUP_DETECTED:
        events.append(EventKind.BLOWUP_DETECTED, state.step, state.t, max_h2=records[-1].max_h2)
    elif classification is Classification.DECAY_DETECTED:
        events.append(EventKind.DECAY_DETECTED, state.step, state.t, max_h2=records[-1].max_h2)
    events.append(EventKind.COMPLETED, state.step, state.t, classification=classification.value,
                  stop_reason=stop_reason, steps=state.step)
    result = RunResult(records, events, classification, state, initial_spacing)
    if out_dir is not None:
        write_outputs(result, out_dir)
    return result


def write_outputs(result: RunResult, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "trajectory.csv"), "w", newline="") as fh:
        fh.write(result.to_csv())
    with open(os.path.join(out_dir, "events.jsonl"), "w") as fh:
        fh.write(result.events.to_jsonl())
