"""Frame-level tensor algebra for a submanifold of CP^m.

Conventions: an adapted frame lists n tangent vectors followed by q normal
vectors, and J_AB = <e_A, J e_B>. A second fundamental form is a real array
h[..., alpha, i, j] with normal index first. All functions broadcast over
leading batch axes, so the same code serves single points, grids and
random-sample sweeps.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import tolerances
from .ambient import CPPoint, Dimensions, TangentRep, curvature_frame, hproj, rdot
from .errors import ContractViolation, DegenerateImmersionError


# ---------------------------------------------------------------------------
# frames


def sumsq(a, k):
    """Sum of squares over the last k axes."""
    a = np.asarray(a)
    flat = a.reshape(a.shape[:a.ndim - k] + (-1,))
    return np.einsum("...i,...i->...", flat, flat)


def _real(v):
    return np.concatenate([v.real, v.imag], axis=-1)


def _cplx(x):
    k = x.shape[-1] // 2
    return x[..., :k] + 1j * x[..., k:]


def frame_J(E):
    """J_AB = Re<e_A, i e_B> for a stack of frame vectors E[..., A, :]."""
    return np.einsum("...ak,...bk->...ab", E.real, (1j * E).real) + \
        np.einsum("...ak,...bk->...ab", E.imag, (1j * E).imag)


def adapted_frames(z, F):
    """Orthonormal tangent and normal frames from coordinate derivatives.

    z: (..., m+1) unit points; F: (..., n, m+1) horizontal spanning vectors.
    Returns (E_tan, E_nor, C, J) with F_i = sum_k C[i, k] E_tan[k] (C lower
    triangular, i.e. Gram-Schmidt in axis order) and J the full
    (n+q) x (n+q) matrix of the complex structure.
    """
    z = np.asarray(z, dtype=complex)
    F = hproj(z[..., None, :], np.asarray(F, dtype=complex))
    n = F.shape[-2]
    mp1 = z.shape[-1]
    q = 2 * (mp1 - 1) - n
    g = np.einsum("...ik,...jk->...ij", F.real, F.real) + np.einsum("...ik,...jk->...ij", F.imag, F.imag)
    sv = np.sqrt(np.clip(np.linalg.eigvalsh(g)[..., 0], 0, None))
    if np.any(~(sv > tolerances.get().frame_rank)):
        flat = sv.reshape(-1)
        idx = int(np.nanargmin(np.where(np.isnan(flat), -np.inf, flat)))
        raise DegenerateImmersionError(
            f"tangent vectors are (nearly) dependent: singular value {flat[idx]:.3e}",
            node=idx, singular_value=float(flat[idx]))
    C = np.linalg.cholesky(g)
    # E = C^{-1} F  (rows are vectors)
    Et = np.linalg.solve(C, _real(F))
    # normal complement of span{z, iz, E} inside R^{2(m+1)}
    M = np.concatenate([_real(z)[..., None, :], _real(1j * z)[..., None, :], Et], axis=-2)
    Q, _ = np.linalg.qr(np.swapaxes(M, -1, -2), mode="complete")
    En = np.swapaxes(Q[..., :, n + 2:], -1, -2)
    assert En.shape[-2] == q
    E_tan = _cplx(Et)
    E_nor = _cplx(En)
    J = frame_J(np.concatenate([E_tan, E_nor], axis=-2))
    return E_tan, E_nor, C, J


@dataclass(frozen=True, eq=False)
class AdaptedFrame:
    base: CPPoint
    e_tan: list
    e_nor: list
    J_AB: np.ndarray

    @property
    def n(self):
        return len(self.e_tan)

    @property
    def q(self):
        return len(self.e_nor)

    @property
    def J(self):
        return self.J_AB


def build_adapted_frame(base: CPPoint, tangent_spanning) -> AdaptedFrame:
    F = np.array([t.w if isinstance(t, TangentRep) else np.asarray(t) for t in tangent_spanning], dtype=complex)
    Et, En, _, J = adapted_frames(base.z, F)
    return AdaptedFrame(base, [TangentRep(base, e) for e in Et], [TangentRep(base, e) for e in En], J)


def _J(frame):
    return frame.J_AB if isinstance(frame, AdaptedFrame) else np.asarray(frame)


def p_norms(frame, n=None):
    """Return (|P|^2, per-normal |P e_alpha|^2) with |P e_alpha|^2 = sum_i J_{i alpha}^2."""
    J = _J(frame)
    if n is None:
        n = frame.n
    per = np.sum(J[..., :n, n:] ** 2, axis=-2)
    return np.sum(per, axis=-1), per


def p_norm2_tangent(J, n):
    """The equivalent form |P|^2 = n - sum_ij J_ij^2."""
    return n - np.sum(J[..., :n, :n] ** 2, axis=(-1, -2))


def random_orthogonal(k, rng):
    """Haar-distributed orthogonal matrix (QR of a Gaussian with sign fix)."""
    A = rng.standard_normal((k, k))
    Q, R = np.linalg.qr(A)
    return Q * np.sign(np.diag(R))


def rotate_frame(h, J, Ot=None, On=None):
    """Express h and J in a rotated frame e'_a = sum_b O[b, a] e_b."""
    h = np.asarray(h)
    q, n = h.shape[-3], h.shape[-1]
    Ot = np.eye(n) if Ot is None else Ot
    On = np.eye(q) if On is None else On
    h2 = np.einsum("...bkl,ba,ki,lj->...aij", h, On, Ot, Ot)
    B = scipy.linalg.block_diag(Ot, On)
    J2 = np.einsum("ba,...bc,cd->...ad", B, J, B)
    return h2, J2


# ---------------------------------------------------------------------------
# second fundamental form scalars


def mean_curvature(h):
    return np.trace(h, axis1=-2, axis2=-1)


def traceless(h):
    n = h.shape[-1]
    return h - (mean_curvature(h) / n)[..., None, None] * np.eye(n)


def householder_to_first(u):
    """Symmetric orthogonal Q with Q e_1 = u, for unit vectors u (batched)."""
    q = u.shape[-1]
    e1 = np.zeros(q)
    e1[0] = 1.0
    v = e1 - u
    vv = np.sum(v * v, axis=-1)
    I = np.broadcast_to(np.eye(q), u.shape[:-1] + (q, q))
    safe = np.where(vv > 1e-30, vv, 1.0)
    Q = I - 2 * v[..., :, None] * v[..., None, :] / safe[..., None, None]
    return np.where((vv > 1e-30)[..., None, None], Q, I)


@dataclass(frozen=True)
class SFFInvariants:
    H: np.ndarray
    normH2: np.ndarray
    normh2: np.ndarray
    normtrace2: np.ndarray
    rho1: np.ndarray
    rho2: np.ndarray
    theta1: np.ndarray
    theta2: np.ndarray
    normP2: np.ndarray


def align_normal_to_H(h, J, zero_tol=1e-12):
    """Rotate the normal frame by a Householder reflection so that H is parallel to e_{n+1}.

    Returns (h', J', has_H). Where |H| <= zero_tol the frame is left as is.
    """
    dt = np.result_type(np.asarray(h), np.asarray(J), float)
    h = np.asarray(h, dtype=dt)
    J = np.asarray(J, dtype=dt)
    n = h.shape[-1]
    H = mean_curvature(h)
    nH = np.sqrt(np.sum(H * H, axis=-1))
    has = nH > zero_tol
    u = H / np.where(has, nH, 1.0)[..., None]
    Q = householder_to_first(u)
    q = h.shape[-3]
    Q = np.where(has[..., None, None], Q, np.eye(q))
    Qt = np.swapaxes(Q, -1, -2)
    h2 = (Qt @ h.reshape(h.shape[:-2] + (n * n,))).reshape(h.shape)
    J2 = J.copy()
    J2[..., n:, :n] = Qt @ J[..., n:, :n]
    J2[..., :n, n:] = J[..., :n, n:] @ Q
    J2[..., n:, n:] = Qt @ J[..., n:, n:] @ Q
    return h2, J2, has


def sff_invariants(h, frame) -> SFFInvariants:
    J = _J(frame)
    h = np.asarray(h)
    h = h.astype(np.result_type(h, J, float), copy=False)
    n = h.shape[-1]
    H = mean_curvature(h)
    normH2 = np.sum(H * H, axis=-1)
    normh2 = np.sum(h * h, axis=(-1, -2, -3))
    normtrace2 = normh2 - normH2 / n
    normP2, _ = p_norms(J, n)
    h2, J2, has = align_normal_to_H(h, J)
    ht = traceless(h2)
    r1 = np.sum(ht[..., 0, :, :] ** 2, axis=(-1, -2))
    r2 = np.sum(ht[..., 1:, :, :] ** 2, axis=(-1, -2, -3))
    _, per = p_norms(J2, n)
    t1 = per[..., 0]
    rho1 = np.where(has, r1, 0.0)
    rho2 = np.where(has, r2, r1 + r2)
    theta1 = np.where(has, t1, 0.0)
    theta2 = normP2 - theta1
    return SFFInvariants(H, normH2, normh2, normtrace2, rho1, rho2, theta1, theta2, normP2)


# ---------------------------------------------------------------------------
# reaction terms


@dataclass(frozen=True)
class ReactionTerms:
    R1: np.ndarray
    R2: np.ndarray
    R3: np.ndarray
    S1: np.ndarray
    S2: np.ndarray
    S3: np.ndarray


def _s1_parts(h, J):
    n = h.shape[-1]
    ht = traceless(h)
    Jtt = J[..., :n, :n]
    Jtn = J[..., :n, n:]
    Jnn = J[..., n:, n:]
    lead = h.shape[:-3]

    def first(t):
        flat = t.reshape(lead + (t.shape[-3], n * n))
        return np.sum((Jtn @ flat) ** 2, axis=(-1, -2))

    # u[a, k] = sum_i Jtn[i, a] ht[a, i, k];  Y[a, k, b] = (ht_a Jtn)[k, b]
    Y = ht @ Jtn[..., None, :, :]
    u = np.diagonal(Y, axis1=-3, axis2=-1)
    second = np.sum(np.sum(u, axis=-1) ** 2, axis=-1) - np.sum(Y * np.swapaxes(Y, -1, -3), axis=(-1, -2, -3))

    JJt = Jtt @ np.swapaxes(Jtt, -1, -2)

    def third(t):
        a = np.sum((t @ Jtt[..., None, :, :] @ t) * Jtt[..., None, :, :], axis=(-1, -2, -3))
        b = np.sum((t @ t) * JJt[..., None, :, :], axis=(-1, -2, -3))
        return a - b

    M = ht @ Jtt[..., None, :, :]
    Z = np.einsum("...akj,...bkj->...ab", M, ht)
    fourth = np.sum(Z * Jnn, axis=(-1, -2))
    return dict(first_h=first(h), first_ht=first(ht), second=second,
                third_ht=third(ht), third_h=third(h), fourth=fourth)


def s1_variants(h, frame):
    """S1 evaluated three ways, for comparing readings of its defining sums.

    'display': first sum with h, the others with the traceless part (as used
    in the evolution identity); 'all_traceless': every sum with the traceless
    part; 'third_h': display form but the third sum with h.
    """
    h = np.asarray(h)
    p = _s1_parts(h.astype(np.result_type(h, float), copy=False), _J(frame))
    rest = 4 * p["second"] + 8 * p["fourth"]
    return {
        "display": 3 * p["first_h"] + rest + 6 * p["third_ht"],
        "all_traceless": 3 * p["first_ht"] + rest + 6 * p["third_ht"],
        "third_h": 3 * p["first_h"] + rest + 6 * p["third_h"],
    }


def reaction_R3(h):
    """R3 = sum H^a h^a_ik h^b_ij h^b_jk on its own (needs no frame)."""
    h = np.asarray(h)
    h = h.astype(np.result_type(h, float), copy=False)
    H = mean_curvature(h)
    HH = np.sum(H[..., :, None, None] * h, axis=-3)
    return np.sum(HH * np.sum(h @ h, axis=-3), axis=(-1, -2))


def reaction_terms(h, frame) -> ReactionTerms:
    J = _J(frame)
    h = np.asarray(h)
    h = h.astype(np.result_type(h, J, float), copy=False)
    n = h.shape[-1]
    H = mean_curvature(h)
    ht = traceless(h)
    flat = h.reshape(h.shape[:-2] + (n * n,))
    G = flat @ np.swapaxes(flat, -1, -2)
    prod = h[..., :, None, :, :] @ h[..., None, :, :, :]
    comm = prod - np.swapaxes(prod, -3, -4)
    R1 = np.sum(G * G, axis=(-1, -2)) + np.sum(comm * comm, axis=(-1, -2, -3, -4))
    HH = np.sum(H[..., :, None, None] * h, axis=-3)
    R2 = np.sum(HH * HH, axis=(-1, -2))
    Jtn = J[..., :n, n:]
    JH = (Jtn @ H[..., None])[..., 0]
    S2 = np.sum(JH * JH, axis=-1)
    p = _s1_parts(h, J)
    S1 = 3 * p["first_h"] + 4 * p["second"] + 6 * p["third_ht"] + 8 * p["fourth"]
    R3 = reaction_R3(h)
    w = (ht @ JH[..., None, :, None])[..., 0]
    S3 = np.sum(w * np.swapaxes(Jtn, -1, -2), axis=(-1, -2))
    return ReactionTerms(R1, R2, R3, S1, S2, S3)


def curvature_contraction_h2(h, frame):
    """The ambient-curvature part of the |h|^2 evolution written with a general curvature tensor.

    2 h^a_ij h^b_ij R_akbk + 8 ht^a_ik ht^b_jk R_abij
    + 4 (h^a_ik h^a_jl R_ijkl - h^a_ik h^a_jk R_iljl).
    In CP^m this should equal -2n|h|^2 + 4|H|^2 + 2 S1.
    """
    J = _J(frame)
    h = np.asarray(h, dtype=float)
    n = h.shape[-1]
    R = curvature_frame(J)
    Rn = R[..., n:, :n, n:, :n]
    Rnntt = R[..., n:, n:, :n, :n]
    Rtttt = R[..., :n, :n, :n, :n]
    ht = traceless(h)
    t1 = 2 * np.einsum("...aij,...bij,...akbk->...", h, h, Rn)
    t2 = 8 * np.einsum("...aik,...bjk,...abij->...", ht, ht, Rnntt)
    t3 = 4 * (np.einsum("...aik,...ajl,...ijkl->...", h, h, Rtttt)
              - np.einsum("...aik,...ajk,...iljl->...", h, h, Rtttt))
    return t1 + t2 + t3


def curvature_contraction_H2(h, frame):
    """2 H^a H^b R_akbk; in CP^m this equals 2n|H|^2 + 6 S2."""
    J = _J(frame)
    n = h.shape[-1]
    H = mean_curvature(np.asarray(h, dtype=float))
    R = curvature_frame(J)
    return 2 * np.einsum("...a,...b,...akbk->...", H, H, R[..., n:, :n, n:, :n])


# ---------------------------------------------------------------------------
# skew normal form


def skew_normal_form(A, tol=None):
    """Orthogonal C and nonnegative lambdas (descending) with C^T A C block diagonal.

    Each 2x2 block is [[0, lam], [-lam, 0]]; for odd size a trailing 1x1 zero
    block is appended.
    """
    A = np.asarray(A, dtype=float)
    tol = tolerances.get().skew if tol is None else tol
    if A.ndim != 2 or A.shape[0] != A.shape[1] or np.linalg.norm(A + A.T) > tol:
        raise ContractViolation("skew_normal_form needs a square skew-symmetric matrix")
    k = A.shape[0]
    A = 0.5 * (A - A.T)
    T, Z = scipy.linalg.schur(A, output="real")
    blocks = []   # (lam, col_a, col_b)
    singles = []
    i = 0
    scale = max(1.0, np.abs(A).max())
    while i < k:
        if i + 1 < k and abs(T[i + 1, i]) > 1e-14 * scale:
            b = 0.5 * (T[i, i + 1] - T[i + 1, i])
            if b >= 0:
                blocks.append((b, Z[:, i], Z[:, i + 1]))
            else:
                blocks.append((-b, Z[:, i + 1], Z[:, i]))
            i += 2
        else:
            singles.append(Z[:, i])
            i += 1
    for a, b in zip(singles[0::2], singles[1::2]):
        blocks.append((0.0, a, b))
    blocks.sort(key=lambda t: -t[0])
    cols = []
    for _, a, b in blocks:
        cols += [a, b]
    if len(singles) % 2:
        cols.append(singles[-1])
    C = np.stack(cols, axis=1)
    lams = [float(t[0]) for t in blocks]
    return C, lams


def block_form(lams, k):
    B = np.zeros((k, k))
    for j, lam in enumerate(lams):
        B[2 * j, 2 * j + 1] = lam
        B[2 * j + 1, 2 * j] = -lam
    return B


# ---------------------------------------------------------------------------
# gradients of the second fundamental form


@dataclass(frozen=True)
class GradientSFF:
    T: np.ndarray      # T[..., alpha, i, j, k] = nabla_k h^alpha_ij
    gradH: np.ndarray  # gradH[..., alpha, i] = nabla_i H^alpha

    @property
    def norm2(self):
        return sumsq(self.T, 4)

    @property
    def normH2(self):
        return np.sum(self.gradH ** 2, axis=(-1, -2))


def codazzi_defect_terms(J, n):
    """K[..., alpha, a, b, c] = R(e_alpha, e_a, e_b, e_c) for tangent a, b, c."""
    Jnt = J[..., n:, :n]
    Jtt = J[..., :n, :n]
    return (Jnt[..., :, None, :, None] * Jtt[..., None, :, None, :]
            - Jnt[..., :, None, None, :] * Jtt[..., None, :, :, None]
            + 2 * Jnt[..., :, :, None, None] * Jtt[..., None, None, :, :])


def codazzi_complete(S, frame) -> GradientSFF:
    """The gradient tensor whose symmetrisation is S and whose antisymmetric part is forced by Codazzi.

    Codazzi in the form used here: nabla_b h_ac - nabla_c h_ab = R(e_alpha, e_a, e_b, e_c).
    With T[a, c, b] - T[a, b, c] = K[a, b, c] the unique solution is
    T[i, j, k] = S[i, j, k] - (2 K[i, j, k] + K[k, i, j]) / 3.
    """
    J = _J(frame)
    S = np.asarray(S)
    S = S.astype(np.result_type(S, J, float), copy=False)
    n = S.shape[-1]
    # (2 K[i,a,b,c] + K[i,c,a,b]) / 3 collapses to Jnt[i,b] Jtt[a,c] + Jnt[i,a] Jtt[b,c]
    Jnt = J[..., n:, :n]
    Jtt = J[..., :n, :n]
    T = Jnt[..., :, None, :, None] * Jtt[..., None, :, None, :]
    T += Jnt[..., :, :, None, None] * Jtt[..., None, None, :, :]
    np.subtract(S, T, out=T)
    gradH = np.trace(T, axis1=-3, axis2=-2)
    return GradientSFF(T, gradH)


def symmetrize3(T):
    U = T + np.swapaxes(T, -1, -2)
    return (U + np.moveaxis(U, -3, -1) + np.moveaxis(U, -1, -3)) / 6.0


def gradient_rhs(gradH2, normP2, dims: Dimensions):
    n, q = dims.n, dims.q
    if q == 1:
        return 3.0 / (n + 2) * gradH2 + 2.0 * (n - 1)
    if q < n:
        return 3.0 / (n + 8) * gradH2 + 2.0 * (n - q) * normP2
    return 3.0 / (n + 8) * gradH2


def gradient_inequality_slack(g: GradientSFF, frame, dims: Dimensions):
    J = _J(frame)
    normP2, _ = p_norms(J, dims.n)
    return g.norm2 - gradient_rhs(g.normH2, normP2, dims)


def symmetrization_slack(S):
    """|S|^2 - 3/(n+2) sum_{alpha,i} (sum_k S_ikk)^2 for fully symmetric S."""
    n = S.shape[-1]
    tr = np.trace(S, axis1=-2, axis2=-1)
    return sumsq(S, 4) - 3.0 / (n + 2) * np.sum(tr ** 2, axis=(-1, -2))
