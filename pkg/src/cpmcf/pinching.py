"""Pinching functions, thresholds and grid verification of their properties.

phi_eps is the pinching function for hypersurfaces, psi the one for high
codimension; for the middle range of codimensions the pinching is linear,
|h|^2 < |H|^2/(n-1) + 2 - 3/n. The "traceless" variants subtract x/n and
bound |h_traceless|^2 in terms of x = |H|^2.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from enum import Enum

import numpy as np

from . import tolerances
from .ambient import Dimensions
from .errors import ContractViolation, SingularPointError, UnsupportedDimensionError


# ---------------------------------------------------------------------------
# parameters


@dataclass(frozen=True)
class PhiParams:
    n: int
    eps: float = 0.0
    a: float = field(init=False)
    b: float = field(init=False)
    c_eps: float = field(init=False)
    d_eps: float = field(init=False)
    e: float = field(init=False)

    def __post_init__(self):
        n, eps = int(self.n), float(self.eps)
        if n < 3:
            raise UnsupportedDimensionError(f"phi needs n >= 3, got {n}")
        if not 0.0 <= eps <= 1.0:
            raise ContractViolation(f"eps must lie in [0, 1], got {eps}")
        b = min((n - 3) / (4 * n - 4), (2 * n - 5) / (n * n + n - 2))
        a = 2 * math.sqrt((n * n - 4 * n + 3) * b)
        for k, v in dict(n=n, eps=eps, a=a, b=b, c_eps=b + 1 / (n - 1 + eps),
                         d_eps=2 - 2 * eps + a, e=math.sqrt(eps)).items():
            object.__setattr__(self, k, v)


@dataclass(frozen=True)
class PsiParams:
    n: int
    kappa: float = field(init=False)
    lam: float = field(init=False)
    mu: float = field(init=False)
    nu: float = field(init=False)

    def __post_init__(self):
        n = int(self.n)
        if n < 6:
            raise UnsupportedDimensionError(f"psi needs n >= 6, got {n}")
        lam = 3 / (n ** 3 - 4 * n ** 2 + 3)
        nu = 9 / (n * n - 3 * n - 3)
        for k, v in dict(n=n, kappa=lam + 1 / (n - 1), lam=lam, mu=nu + 3 / n, nu=nu).items():
            object.__setattr__(self, k, v)

    @property
    def A(self):
        return self.kappa * self.mu + 3 * self.lam + self.lam * self.nu

    @property
    def B(self):
        return self.n + 3 + 2 * self.nu

    @property
    def C(self):
        return self.kappa * self.nu ** 2 + self.lam * self.mu * (self.n + 6 + 3 * self.nu)


class CaseTag(str, Enum):
    HYPERSURFACE = "HYPERSURFACE"
    MID = "MID"
    HIGH = "HIGH"
    UNSUPPORTED = "UNSUPPORTED"


@dataclass(frozen=True)
class PinchingCase:
    tag: CaseTag
    n: int
    q: int

    @property
    def k(self):
        return 1.0 / (self.n * (self.n - 1))

    @property
    def l(self):
        return 2.0 - 3.0 / self.n

    @classmethod
    def of(cls, dims: Dimensions):
        n, q = dims.n, dims.q
        if q == 1 and n >= 3:
            tag = CaseTag.HYPERSURFACE
        elif 2 <= q < n - 4:
            tag = CaseTag.MID
        elif q >= n - 4 >= 2:
            tag = CaseTag.HIGH
        else:
            tag = CaseTag.UNSUPPORTED
        return cls(tag, n, q)


# ---------------------------------------------------------------------------
# phi


def _phi_root(x, p: PhiParams):
    return np.sqrt(p.b ** 2 * x * x + 2 * p.a * p.b * x + p.e)


def phi_eps(x, p: PhiParams):
    x = np.asarray(x, dtype=float)
    return p.d_eps + p.c_eps * x - _phi_root(x, p)


def phi_gap(x, p: PhiParams):
    """(a + b x) - sqrt(b^2 x^2 + 2ab x + e), evaluated without cancellation."""
    x = np.asarray(x, dtype=float)
    return (p.a ** 2 - p.e) / (p.a + p.b * x + _phi_root(x, p)) if (p.a > 0 or p.e > 0) else 0.0 * x


@dataclass(frozen=True)
class PhiDerivs:
    d1: np.ndarray
    d2: np.ndarray
    tl: np.ndarray      # traceless value phi - x/n
    tl_d1: np.ndarray
    tl_d2: np.ndarray


def phi_eps_derivs(x, p: PhiParams) -> PhiDerivs:
    x = np.asarray(x, dtype=float)
    if p.e == 0 and p.a > 0 and np.any(x == 0):
        raise SingularPointError("phi is not differentiable at x = 0 when eps = 0 and n >= 5")
    r = _phi_root(x, p)
    if p.b == 0:
        frac = np.zeros_like(x)
        d2 = np.zeros_like(x)
    else:
        frac = (p.b ** 2 * x + p.a * p.b) / r
        d2 = p.b ** 2 * (p.a ** 2 - p.e) / r ** 3
    d1 = p.c_eps - frac
    return PhiDerivs(d1, d2, phi_eps(x, p) - x / p.n, d1 - 1 / p.n, d2)


def phi_minimizer(p: PhiParams):
    """Closed-form minimiser of phi (eps = 0, n >= 5) and the minimum value."""
    if p.n < 5:
        raise UnsupportedDimensionError("phi is affine for n = 3")
    c0 = p.b + 1 / (p.n - 1)
    root = math.sqrt(c0 * c0 - p.b * p.b)
    x = p.a * c0 / (p.b * root) - p.a / p.b
    val = (2 + p.a) - p.a * c0 / p.b + (p.a / p.b) * root
    return x, val


def phi_min_closed_form(n):
    """Minimum of phi as a function of n alone: n = 5 and n >= 7 forms."""
    if n == 5:
        return 4 * math.sqrt(2) - 2
    if n >= 7:
        return 2 + 2 * math.sqrt((n - 3) / (2 * n - 5)) * (math.sqrt(5 * n - 8) - math.sqrt(n + 2))
    raise UnsupportedDimensionError(f"no closed-form minimum for n = {n}")


# ---------------------------------------------------------------------------
# psi


def _psi_root(x, p: PsiParams):
    return np.sqrt(p.lam ** 2 * x * x + 2 * p.lam * p.mu * x + p.nu ** 2)


def psi(x, p: PsiParams):
    x = np.asarray(x, dtype=float)
    return p.nu + p.kappa * x - _psi_root(x, p)


@dataclass(frozen=True)
class PsiDerivs:
    d1: np.ndarray
    d2: np.ndarray
    tl: np.ndarray
    tl_d1: np.ndarray
    tl_d2: np.ndarray


def psi_derivs(x, p: PsiParams) -> PsiDerivs:
    x = np.asarray(x, dtype=float)
    r = _psi_root(x, p)
    d1 = p.kappa - (p.lam ** 2 * x + p.lam * p.mu) / r
    d2 = p.lam ** 2 * (p.mu ** 2 - p.nu ** 2) / r ** 3
    return PsiDerivs(d1, d2, psi(x, p) - x / p.n, d1 - 1 / p.n, d2)


def psi_gap_upper(x, p: PsiParams):
    """x/(n-1) - psi(x) = sqrt(...) - (nu + lam x), without cancellation."""
    x = np.asarray(x, dtype=float)
    r = _psi_root(x, p)
    return 2 * p.lam * (p.mu - p.nu) * x / (r + p.nu + p.lam * x)


def psi_gap_lower(x, p: PsiParams):
    """psi(x) - x/n = (nu + (lam + 1/(n(n-1))) x) - sqrt(...), without cancellation."""
    x = np.asarray(x, dtype=float)
    s = p.lam + 1 / (p.n * (p.n - 1))
    u = p.nu + s * x
    r = _psi_root(x, p)
    num = (s * s - p.lam ** 2) * x * x + 2 * (p.nu * s - p.lam * p.mu) * x
    return num / (u + r)


def psi_gmax(p: PsiParams):
    """Location and value of max_x (2x psi'' + psi')."""
    return p.nu / p.lam, p.kappa - p.lam * math.sqrt(2 * p.nu / (p.mu + p.nu))


# ---------------------------------------------------------------------------
# thresholds


def pinching_rhs(normH2, case: PinchingCase, eps=0.0):
    """Right-hand side of the pointwise pinching |h|^2 < RHS(|H|^2)."""
    x = np.asarray(normH2, dtype=float)
    if case.tag is CaseTag.HYPERSURFACE:
        return phi_eps(x, PhiParams(case.n, eps))
    if case.tag is CaseTag.MID:
        return x / (case.n - 1) + 2 - 3 / case.n
    if case.tag is CaseTag.HIGH:
        return psi(x, PsiParams(case.n))
    raise UnsupportedDimensionError(f"no pinching condition for n={case.n}, q={case.q}")


def W_threshold(normH2, case: PinchingCase, p=None):
    """Traceless threshold W(|H|^2); p is PhiParams for hypersurfaces (defaults to eps = 0)."""
    x = np.asarray(normH2, dtype=float)
    if case.tag is CaseTag.HYPERSURFACE:
        p = p if isinstance(p, PhiParams) else PhiParams(case.n, 0.0)
        return phi_eps(x, p) - x / case.n
    if case.tag is CaseTag.MID:
        return case.k * x + case.l
    if case.tag is CaseTag.HIGH:
        p = p if isinstance(p, PsiParams) else PsiParams(case.n)
        return psi(x, p) - x / case.n
    raise UnsupportedDimensionError(f"no threshold for n={case.n}, q={case.q}")


def f_sigma(normtrace2, W, sigma):
    W = np.asarray(W, dtype=float)
    if np.any(W <= 0):
        raise ContractViolation("f_sigma needs W > 0")
    if not 0 < sigma < 1:
        raise ContractViolation("sigma must lie in (0, 1)")
    return np.asarray(normtrace2, dtype=float) / W ** (1 - sigma)


class Verdict(str, Enum):
    STRICT = "STRICTLY_PINCHED"
    WEAK = "WEAKLY_PINCHED"
    VIOLATED = "VIOLATED"
    UNSUPPORTED = "UNSUPPORTED"


@dataclass
class PinchingReport:
    case: PinchingCase
    margin: np.ndarray
    verdict: Verdict

    @property
    def min_margin(self):
        return float(np.min(self.margin)) if self.margin.size else math.nan


def classify_and_check(normh2, normH2, dims: Dimensions, eps=0.0) -> PinchingReport:
    case = PinchingCase.of(dims)
    normh2 = np.asarray(normh2, dtype=float)
    if case.tag is CaseTag.UNSUPPORTED:
        return PinchingReport(case, np.full(normh2.shape, np.nan), Verdict.UNSUPPORTED)
    margin = pinching_rhs(normH2, case, eps) - normh2
    mn = np.min(margin)
    tol = tolerances.get().equality_abs
    if mn > 0:
        v = Verdict.STRICT
    elif mn >= -tol:
        v = Verdict.WEAK
    else:
        v = Verdict.VIOLATED
    return PinchingReport(case, margin, v)


# ---------------------------------------------------------------------------
# verification of the function properties on grids


PHI_N = (3, 5, 7, 9, 11, 15, 25)
PSI_N = (6, 8, 10, 14, 20)
EPS_SET = (1e-8, 1e-6, 1e-4, 1e-2)


@dataclass(frozen=True)
class GridSpec:
    n_linear: int = 5000
    x_linear: float = 100.0
    n_log: int = 5000
    x_max: float = 1e6

    def points(self, extra=()):
        lin = np.linspace(0.0, self.x_linear, self.n_linear)
        log = np.logspace(math.log10(self.x_linear), math.log10(self.x_max), self.n_log + 1)[1:]
        x = np.concatenate([lin, log, np.asarray(extra, dtype=float)])
        return np.unique(x)


@dataclass
class InequalityRecord:
    inequality: str
    family: str
    n: int
    eps: float
    kind: str            # "strict", "weak", "equality_at_zero", "identity", "limit"
    min_slack: float
    argmin_x: float
    scale: float
    passed: bool
    note: str = ""


@dataclass
class AppendixReport:
    records: list
    largest_passing_eps: dict

    @property
    def all_passed(self):
        return all(r.passed for r in self.records)

    def failures(self):
        return [r for r in self.records if not r.passed]

    def to_json(self):
        return json.dumps({"records": [asdict(r) for r in self.records],
                           "largest_passing_eps": {str(k): v for k, v in self.largest_passing_eps.items()},
                           "all_passed": self.all_passed}, indent=1)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["inequality", "n", "eps", "min_slack", "argmin_x", "pass"])
        for r in self.records:
            w.writerow([r.inequality, r.n, repr(r.eps), repr(r.min_slack), repr(r.argmin_x), int(r.passed)])
        return buf.getvalue()


def _judge(name, family, n, eps, x, slack, scale, kind, note=""):
    tol = tolerances.get()
    slack = np.asarray(slack, dtype=float) * np.ones_like(x)
    scale = np.abs(np.asarray(scale, dtype=float)) * np.ones_like(x)
    if kind == "strict":
        ok = slack > tol.strict_rel * (1 + scale)
    elif kind == "weak":
        ok = slack >= -tol.equality_abs * (1 + scale)
    elif kind == "equality_at_zero":
        # equality exactly at x = 0, strict elsewhere
        ok = np.where(x == 0, np.abs(slack) <= tol.equality_abs,
                      slack > tol.strict_rel * (1 + scale))
    else:
        raise ValueError(kind)
    i = int(np.argmin(slack))
    return InequalityRecord(name, family, n, eps, kind, float(slack[i]), float(x[i]),
                            float(scale[i]), bool(np.all(ok)), note)


def phi_base_records(n, grid: GridSpec):
    """Records for the eps = 0 properties of phi at one n."""
    recs = []
    p0 = PhiParams(n, 0.0)
    extra = [phi_minimizer(p0)[0]] if n >= 5 else []
    x = grid.points(extra)
    ph = phi_eps(x, p0)
    gap = phi_gap(x, p0)   # phi - x/(n-1) - 2
    if n == 3:
        recs.append(_judge("phi.above_line", "phi", n, 0.0, x, gap, ph, "weak",
                           "phi = x/2 + 2 identically for n = 3, so the lower bound is an equality"))
    else:
        recs.append(_judge("phi.above_line", "phi", n, 0.0, x, gap, ph, "strict"))
    recs.append(_judge("phi.below_line", "phi", n, 0.0, x, (n - 2) - gap, ph, "strict"))
    recs.append(_judge("phi.sqrt_floor", "phi", n, 0.0, x, ph - math.sqrt(2 * (n - 3)), ph, "strict"))
    if n >= 5:
        xs, val = phi_minimizer(p0)
        grid_min = float(np.min(ph))
        recs.append(InequalityRecord("phi.minimizer_is_min", "phi", n, 0.0, "identity",
                                     grid_min - val, xs, abs(val), val <= grid_min + 1e-12))
        if n != 6:
            cf = phi_min_closed_form(n)
            recs.append(InequalityRecord("phi.min_closed_form", "phi", n, 0.0, "identity",
                                         -abs(val - cf), xs, abs(val), abs(val - cf) <= 1e-10))
    dl = float(phi_eps_derivs(grid.x_max, p0).d1)
    lim_err = abs(dl - 1 / (n - 1))
    # phi' - 1/(n-1) decays like a^2 / (2 b x^2)
    bound = (p0.a ** 2 / (p0.b * grid.x_max ** 2) if p0.b > 0 else 0.0) + 1e-15
    recs.append(InequalityRecord("phi.limit_derivative", "phi", n, 0.0, "limit", -lim_err,
                                 grid.x_max, 1 / (n - 1), lim_err <= bound))
    return recs


def phi_quotient(x, p: PhiParams):
    """f(x) = tl(phi - n + 3) - x tl'(phi + n + 3) in the reduced form where the
    quadratic growth has been cancelled analytically. Returns (f, scale)."""
    x = np.asarray(x, dtype=float)
    n, a, b, c, d, e = p.n, p.a, p.b, p.c_eps, p.d_eps, p.e
    r = _phi_root(x, p)
    lin = (2 + a * b + c * (d - 2 * n)) * x
    frac = ((3 * a * b * (d + 1 - n) + c * e) * x + b * (a * c + b * (d - 2 * n)) * x * x
            + e * (2 * d + 3 - n)) / r
    const = e + d * (d + 3 - n)
    return const + lin - frac, abs(const) + np.abs(lin) + np.abs(frac)


def phi_quotient_direct(x, p: PhiParams):
    d = phi_eps_derivs(x, p)
    ph = phi_eps(x, p)
    return d.tl * (ph - p.n + 3) - x * d.tl_d1 * (ph + p.n + 3)


def phi_quotient_limit(p: PhiParams):
    """Limit at infinity of phi_quotient, in its two closed forms."""
    n, eps, a, b, c, d, e = p.n, p.eps, p.a, p.b, p.c_eps, p.d_eps, p.e
    first = a * a * c / b + d * (d + 3 - n) + a * (n - 3 - 2 * d) + e * (1 - c / b)
    second = (2 * (n - 1) + 2 * eps * (n * n - 10 * n + 13 + 3 * eps * (n - 3) + 2 * eps ** 2) / (n - 1 + eps)
              + e * (1 - c / b))
    return first, second


def phi_eps_records(n, eps, grid: GridSpec):
    """Records for the eps-dependent properties of the traceless phi_eps."""
    recs = []
    p = PhiParams(n, eps)
    x = grid.points()
    d = phi_eps_derivs(x, p)
    ph = phi_eps(x, p)
    g1 = 2 * x * d.tl_d2 + d.tl_d1
    b1 = 2 * (n - 1) / (n * (n + 2))
    f2, f2_scale = phi_quotient(x, p)
    f3 = d.tl - x * d.tl_d1
    recs.append(_judge("phi_eps.g_bound", "phi_eps", n, eps, x, b1 - g1, g1, "strict"))
    recs.append(_judge("phi_eps.quotient_bound", "phi_eps", n, eps, x, 2 * (n - 1) - f2, f2_scale, "strict"))
    recs.append(_judge("phi_eps.intercept", "phi_eps", n, eps, x, f3 - 1, f3, "strict"))
    if p.b > 0:
        first, second = phi_quotient_limit(p)
        tol = tolerances.get().strict_rel
        recs.append(InequalityRecord("phi_eps.quotient_bound.limit", "phi_eps", n, eps, "limit",
                                     2 * (n - 1) - first, math.inf, 2 * (n - 1),
                                     2 * (n - 1) - first > tol * (1 + 2 * (n - 1))))
        rel = abs(first - second) / abs(first)
        recs.append(InequalityRecord("phi_eps.quotient_limit_forms_agree", "phi_eps_identity", n, eps, "identity",
                                     -rel, math.inf, abs(first), rel <= 1e-12))
    return recs


def psi_records(n, grid: GridSpec):
    recs = []
    p = PsiParams(n)
    xg, gmax = psi_gmax(p)
    x = grid.points([xg])
    d = psi_derivs(x, p)
    ps = psi(x, p)
    lo = psi_gap_lower(x, p)
    up = psi_gap_upper(x, p)
    J = lambda *a, **k: recs.append(_judge(*a, **k))
    J("psi.deriv_lower", "psi", n, 0.0, x, d.d1 - 1 / n, d.d1, "equality_at_zero")
    J("psi.deriv_upper", "psi", n, 0.0, x, 1 / (n - 1) - d.d1, d.d1, "strict")
    J("psi.value_lower", "psi", n, 0.0, x, lo, ps, "equality_at_zero")
    J("psi.value_upper", "psi", n, 0.0, x, up, ps, "equality_at_zero")
    g = 2 * x * d.d2 + d.d1
    J("psi.g_bound", "psi", n, 0.0, x, 3 / (n + 8) - g, g, "strict")
    recs.append(InequalityRecord("psi.g_closed_form_max", "psi", n, 0.0, "identity",
                                 float(gmax - np.max(g)), xg, gmax,
                                 bool(np.max(g) <= gmax + 1e-14 and gmax < 3 / (n + 8))))
    xd = x * d.d1 - ps   # x psi' - psi
    f3 = 3 * ps - 3 * x / n + (ps - x * d.d1) * (ps + n)
    J("psi.cubic_combination", "psi", n, 0.0, x, -f3, 3 * ps + np.abs(xd) * (ps + n), "equality_at_zero")
    J("psi.intercept_lower", "psi", n, 0.0, x, xd, x * d.d1, "equality_at_zero")
    J("psi.intercept_upper", "psi", n, 0.0, x, 2 - xd, xd, "strict")
    # traceless versions
    J("psi_tl.deriv_lower", "psi_tl", n, 0.0, x, d.tl_d1, d.d1, "equality_at_zero")
    J("psi_tl.deriv_upper", "psi_tl", n, 0.0, x, 1 / (n * (n - 1)) - d.tl_d1, d.d1, "strict")
    J("psi_tl.value_lower", "psi_tl", n, 0.0, x, lo, ps, "equality_at_zero")
    J("psi_tl.value_upper", "psi_tl", n, 0.0, x, up, ps, "equality_at_zero")
    gt = 2 * x * d.tl_d2 + d.tl_d1
    J("psi_tl.g_bound", "psi_tl", n, 0.0, x, 2 * (n - 4) / (n * (n + 8)) - gt, g, "strict")
    f3t = 3 * d.tl + (d.tl - x * d.tl_d1) * (d.tl + x / n + n)
    J("psi_tl.cubic_combination", "psi_tl", n, 0.0, x, -f3t, 3 * ps + np.abs(xd) * (ps + n), "equality_at_zero")
    xdt = x * d.tl_d1 - d.tl
    J("psi_tl.intercept_lower", "psi_tl", n, 0.0, x, xdt, x * d.d1, "equality_at_zero")
    J("psi_tl.intercept_upper", "psi_tl", n, 0.0, x, 2 - xdt, xdt, "strict")
    # spot values and identities
    p0 = float(psi(0.0, p))
    recs.append(InequalityRecord("psi.at_zero", "psi", n, 0.0, "identity", -abs(p0), 0.0, 0.0, p0 == 0.0))
    d0 = float(psi_derivs(0.0, p).d1)
    recs.append(InequalityRecord("psi.prime_at_zero", "psi", n, 0.0, "identity", -abs(d0 - 1 / n), 0.0,
                                 1 / n, abs(d0 - 1 / n) <= 1e-12))
    A, B, C = p.A, p.B, p.C
    e1 = abs(p.mu * A + p.lam * p.nu * B - C) / abs(C)
    e2 = abs(p.nu * A + p.lam * p.mu * B - C) / abs(C)
    recs.append(InequalityRecord("psi.cubic_identity", "psi", n, 0.0, "identity", -max(e1, e2), math.nan,
                                 abs(C), max(e1, e2) <= 1e-12))
    disc = p.nu ** 2 * (A - p.lam * B) ** 2 + 4 * p.lam * p.mu * p.nu * A * B - C ** 2
    ref = -81 * (n ** 3 - 12 * n + 9) ** 2 / (n ** 2 * (n - 1) ** 2 * (n * n - 3 * n - 3) ** 4)
    e3 = abs(disc - ref) / abs(ref)
    recs.append(InequalityRecord("psi.discriminant_identity", "psi", n, 0.0, "identity", -e3, math.nan,
                                 abs(ref), e3 <= 1e-9))
    dl = float(psi_derivs(grid.x_max, p).d1)
    e4 = abs(dl - 1 / (n - 1))
    recs.append(InequalityRecord("psi.limit_derivative", "psi", n, 0.0, "limit", -e4, grid.x_max, 1 / (n - 1),
                                 e4 <= 10 * (p.mu / p.lam) / grid.x_max ** 2 + 1e-12))
    return recs


def verify_appendix(n_set=PHI_N, eps_set=EPS_SET, grid_spec: GridSpec = GridSpec(), psi_n_set=PSI_N) -> AppendixReport:
    """Evaluate every pinching-function property on the grid.

    n_set drives the phi family (each n must be >= 3), psi_n_set the psi
    family (each n >= 6). For the eps-dependent items the report also lists,
    per n, the largest tested eps for which all of them pass.
    """
    for n in psi_n_set:
        if n < 6:
            raise UnsupportedDimensionError(f"psi needs n >= 6, got {n}")
    records = []
    largest = {}
    eps_sorted = sorted(eps_set)
    for n in n_set:
        passing = []
        records += phi_base_records(n, grid_spec)
        for eps in eps_sorted:
            rs = phi_eps_records(n, eps, grid_spec)
            records += rs
            if all(r.passed for r in rs if r.family == "phi_eps"):
                passing.append(eps)
        largest[n] = max(passing) if passing else None
    for n in psi_n_set:
        records += psi_records(n, grid_spec)
    return AppendixReport(records, largest)


def small_eps_consistent(report: AppendixReport, eps_set=EPS_SET):
    """True when, for every n, the eps-dependent items pass on a nonempty initial
    segment of the sorted eps set (the items are claimed only for small eps)."""
    eps_sorted = sorted(eps_set)
    ok = True
    for n, best in report.largest_passing_eps.items():
        if best is None:
            return False
        for eps in eps_sorted:
            passed = all(r.passed for r in report.records
                         if r.family == "phi_eps" and r.n == n and r.eps == eps)
            if eps <= best and not passed:
                ok = False
    return ok


def appendix_verdict(report: AppendixReport, eps_set=EPS_SET):
    """Overall pass: every eps-independent item passes, and the eps-dependent
    items pass on a nonempty downward-closed part of the eps set for every n."""
    fixed = all(r.passed for r in report.records if r.family != "phi_eps")
    return fixed and small_eps_consistent(report, eps_set)
