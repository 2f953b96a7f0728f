"""Invariant conformal structures for uniformly quasiregular maps.

Conformal structures on the horizontal bundle are points of the symmetric
space S of det-1 SPD matrices, with metric d(A, B) = |log(A^{-1/2} B A^{-1/2})|_F
and the congruence action M . X = (det M)^{-2/d} M^t X M.  For a point p
the orbit set collects the normalized Grams of the iterate differentials,
and s_p is the center of its minimal enclosing ball.
"""
import csv
import io
import json
import warnings
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
from scipy.optimize import fsolve, minimize
from scipy.spatial import cKDTree

from .manifolds import ContractViolation, on_branch_locus, to_real
from .map_zoo import horizontal_matrix

DET_TOL = 1e-12
SYM_TOL = 1e-12
BRANCH_ORBIT_TOL = 1e-3
DISTINCT_TOL = 1e-9


# ---------------------------------------------------------------------------
# the symmetric space
# ---------------------------------------------------------------------------

def _sym(X):
    return 0.5 * (X + np.swapaxes(X, -1, -2))


def _eig_apply(X, f):
    w, V = np.linalg.eigh(_sym(X))
    return (V * f(w)[..., None, :]) @ np.swapaxes(V, -1, -2)


def _unit_det(X):
    d = X.shape[-1]
    return X / np.linalg.det(X)[..., None, None] ** (1.0 / d)


def spd_log(X):
    return _eig_apply(X, np.log)


def spd_exp(X):
    return _eig_apply(X, np.exp)


def spd_sqrt(X):
    return _eig_apply(X, np.sqrt)


def spd_invsqrt(X):
    return _eig_apply(X, lambda w: 1.0 / np.sqrt(w))


def check_spd(X, det_tol=1e-10):
    X = np.asarray(X, dtype=float)
    if X.shape[-1] != X.shape[-2]:
        raise ContractViolation("SPD points are square matrices")
    if np.max(np.abs(X - np.swapaxes(X, -1, -2)), initial=0.0) > SYM_TOL * max(1.0, np.max(np.abs(X))):
        raise ContractViolation("matrix is not symmetric")
    if np.any(np.linalg.eigvalsh(X) <= 0):
        raise ContractViolation("matrix is not positive definite")
    if np.max(np.abs(np.linalg.det(X) - 1.0), initial=0.0) > det_tol:
        raise ContractViolation("determinant is not 1")
    return X


@dataclass(frozen=True)
class SPDPoint:
    matrix: np.ndarray

    def __post_init__(self):
        M = check_spd(np.array(self.matrix, dtype=float))
        M.setflags(write=False)
        object.__setattr__(self, "matrix", M)

    @property
    def d(self):
        return self.matrix.shape[0]

    def to_json(self):
        return [float(v) for v in self.matrix.ravel()]


def _mat(A):
    return A.matrix if isinstance(A, SPDPoint) else np.asarray(A, dtype=float)


def spd_distance(A, B):
    """Frobenius norm of log(A^{-1/2} B A^{-1/2}); broadcasts over leading axes."""
    A, B = _mat(A), _mat(B)
    Ai = spd_invsqrt(A)
    w = np.linalg.eigvalsh(_sym(Ai @ B @ Ai))
    return np.sqrt(np.sum(np.log(w) ** 2, axis=-1))


def spd_geodesic(A, B, t):
    """A^{1/2} (A^{-1/2} B A^{-1/2})^t A^{1/2}, renormalized to det 1."""
    A, B = _mat(A), _mat(B)
    t = np.asarray(t, dtype=float)
    As = spd_sqrt(A)
    Ai = spd_invsqrt(A)
    C = Ai @ B @ Ai
    w, V = np.linalg.eigh(_sym(C))
    Ct = (V * (w ** t[..., None])[..., None, :]) @ np.swapaxes(V, -1, -2)
    return _unit_det(_sym(As @ Ct @ As))


def spd_exp_at(C, X):
    """Riemannian exponential at C of the symmetric tangent X."""
    Cs, Ci = spd_sqrt(C), spd_invsqrt(C)
    return _unit_det(_sym(Cs @ spd_exp(Ci @ X @ Ci) @ Cs))


def spd_log_at(C, S):
    Cs, Ci = spd_sqrt(C), spd_invsqrt(C)
    return Cs @ spd_log(Ci @ S @ Ci) @ Cs


def act(M, X):
    """Congruence action (det M)^{-2/d} M^t X M."""
    M = np.asarray(M, dtype=float)
    X = _mat(X)
    d = M.shape[-1]
    det = np.linalg.det(M)
    return _unit_det(_sym(np.swapaxes(M, -1, -2) @ X @ M / np.abs(det)[..., None, None] ** (2.0 / d)))


def normalized_gram(D):
    """(det D)^{-2/d} D^t D, symmetrized and renormalized to det 1."""
    D = np.asarray(D, dtype=float)
    det = np.linalg.det(D)
    if np.any(np.abs(det) < DET_TOL):
        raise ContractViolation("normalized_gram needs an invertible matrix")
    d = D.shape[-1]
    G = np.swapaxes(D, -1, -2) @ D / np.abs(det)[..., None, None] ** (2.0 / d)
    return _unit_det(_sym(G))


def _rescale(D):
    # Grams are scale invariant; keep products of many contractions representable
    d = D.shape[-1]
    return D / np.abs(np.linalg.det(D))[..., None, None] ** (1.0 / d)


def sym_traceless_basis(d):
    basis = []
    for i in range(d - 1):
        E = np.zeros((d, d))
        E[i, i], E[i + 1, i + 1] = 1.0, -1.0
        basis.append(E / np.sqrt(2.0))
    for i in range(d):
        for j in range(i + 1, d):
            E = np.zeros((d, d))
            E[i, j] = E[j, i] = 1.0 / np.sqrt(2.0)
            basis.append(E)
    return np.array(basis)


def from_coords(x, d):
    """exp of the symmetric traceless matrix with orthonormal coordinates x."""
    B = sym_traceless_basis(d)
    return spd_exp(np.tensordot(np.asarray(x, dtype=float), B, axes=([-1], [0])))


def to_coords(X):
    B = sym_traceless_basis(X.shape[-1])
    L = spd_log(_mat(X))
    return np.einsum("...ij,kij->...k", L, B)


# ---------------------------------------------------------------------------
# orbit sets and centers
# ---------------------------------------------------------------------------

@dataclass
class OrbitSet:
    base: np.ndarray
    elements: np.ndarray  # (K, d, d)
    ns: np.ndarray
    truncated: bool = False

    def __post_init__(self):
        self.elements = np.asarray(self.elements, dtype=float)
        if self.elements.ndim != 3 or self.elements.shape[0] == 0:
            raise ContractViolation("an orbit set is a nonempty stack of matrices")
        check_spd(self.elements)

    def __len__(self):
        return self.elements.shape[0]


def orbit_set(m, p, N, include_identity=True, branch_tol=BRANCH_ORBIT_TOL):
    """Normalized Grams of the differentials of m^n at p, n = 0 (or 1) .. N."""
    z = np.asarray(p, dtype=complex)
    d = 2 * (z.shape[-1] - 1)
    D = np.eye(d)
    els, ns = ([np.eye(d)], [0]) if include_identity else ([], [])
    truncated = False
    cur = z
    for n in range(1, N + 1):
        if on_branch_locus(cur, branch_tol) or not m.in_domain(cur):
            truncated = True
            break
        H, cur = horizontal_matrix(m, cur)
        D = _rescale(H @ D)
        els.append(normalized_gram(D))
        ns.append(n)
    if not els:
        els, ns = [np.eye(d)], [0]
    return OrbitSet(z, np.array(els), np.array(ns), truncated)


def _elements(S):
    if isinstance(S, OrbitSet):
        return S.elements
    if isinstance(S, SPDPoint):
        return S.matrix[None]
    E = np.asarray([_mat(x) for x in S]) if isinstance(S, (list, tuple)) else np.asarray(S, float)
    return E if E.ndim == 3 else E[None]


def _covering_radius(c, E):
    return float(np.max(spd_distance(c[None], E)))


def chebyshev_center(S, iters=500, tol=1e-9, polish=True):
    """Center and radius of the minimal enclosing ball of an orbit set.

    Farthest-point geodesic stepping with step 1/(k+1), followed by an
    epigraph SLSQP polish in exponential coordinates at the stepping result.
    """
    E = _elements(S)
    distinct = _distinct(E)
    if len(distinct) == 1:
        return SPDPoint(E[distinct[0]]), 0.0
    if len(distinct) == 2:
        A, B = E[distinct[0]], E[distinct[1]]
        return SPDPoint(spd_geodesic(A, B, 0.5)), 0.5 * float(spd_distance(A, B))
    E = E[distinct]
    c = E[0]
    best_c, best_r = c, _covering_radius(c, E)
    prev = best_r
    for k in range(1, iters + 1):
        dist = spd_distance(c[None], E)
        f = int(np.argmax(dist))
        c = spd_geodesic(c, E[f], 1.0 / (k + 1))
        r = _covering_radius(c, E)
        if r < best_r:
            best_c, best_r = c, r
        if abs(prev - r) < tol and k > 10:
            break
        prev = r
    if polish:
        best_c, best_r = _polish(best_c, best_r, E)
        best_c, best_r = _active_set_finish(best_c, best_r, E)
    return SPDPoint(best_c), best_r


def _circumcenter(T, x0):
    d = T.shape[-1]

    def eqs(x):
        dist = spd_distance(from_coords(x, d)[None], T)
        return dist[1:] - dist[0]

    with np.errstate(all="ignore"):
        x, _, ier, _ = fsolve(eqs, x0, full_output=True, xtol=1e-13)
        if ier != 1 or not np.max(np.abs(eqs(x))) < 1e-9:
            return None
    return _unit_det(from_coords(x, d))


def _active_set_finish(c, r, E, rel=1e-5):
    """Snap to the exact minimax point of the active elements.

    The covering radius is flat along the bisector of two active elements,
    so an optimizer stopping on the radius leaves the center loose; the
    midpoint (two active) or the circumcenter (three active) is exact.
    """
    dist = spd_distance(c[None], E)
    active = np.nonzero(dist >= r * (1 - rel))[0]
    cands = []
    if len(active) >= 2:
        for i, j in combinations(active, 2):
            cands.append(spd_geodesic(E[i], E[j], 0.5))
    if len(active) >= 3 and E.shape[-1] == 2:
        for tri in combinations(active, 3):
            cc = _circumcenter(E[list(tri)], to_coords(c))
            if cc is not None:
                cands.append(cc)
    for cand in cands:
        rc = _covering_radius(cand, E)
        if rc <= r + 1e-12 and float(spd_distance(cand, c)) < 1e-2:
            return cand, min(rc, r)
    return c, r


def _polish(c0, r0, E):
    d = E.shape[-1]
    Cs = spd_sqrt(c0)
    B = sym_traceless_basis(d)

    def center(x):
        return _unit_det(_sym(Cs @ spd_exp(np.tensordot(x, B, axes=1)) @ Cs))

    def cons(v):
        return v[-1] - spd_distance(center(v[:-1])[None], E)

    x0 = np.zeros(len(B) + 1)
    x0[-1] = r0
    res = minimize(lambda v: v[-1], x0, jac=lambda v: np.eye(len(v))[-1], method="SLSQP",
                   constraints=[{"type": "ineq", "fun": cons}],
                   options={"ftol": 1e-14, "maxiter": 200})
    c = center(res.x[:-1])
    r = _covering_radius(c, E)
    if r <= r0:
        return c, r
    return c0, r0


def _distinct(E, tol=DISTINCT_TOL):
    keep = [0]
    for i in range(1, E.shape[0]):
        if np.all(spd_distance(E[keep], E[i][None]) > tol):
            keep.append(i)
    return keep


def brute_force_center(S, n=41, shrink=0.6, min_half=1e-9, max_levels=400):
    """Oracle: min of the covering radius on nested grids in exponential coordinates.

    Each level evaluates an n^k grid around the incumbent; the window
    shrinks only when the incumbent is in the inner half of the window, so
    the search can walk along flat valleys.
    """
    E = _elements(S)
    d = E.shape[-1]
    X = to_coords(E)
    lo, hi = X.min(axis=0), X.max(axis=0)
    center = 0.5 * (lo + hi)
    half = 0.5 * np.max(hi - lo) + 1e-3
    k = X.shape[-1]
    best = None
    for _ in range(max_levels):
        axes = [np.linspace(center[i] - half, center[i] + half, n) for i in range(k)]
        G = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, k)
        R = np.max(spd_distance(from_coords(G, d)[:, None], E[None]), axis=1)
        i = int(np.argmin(R))
        if best is None or R[i] <= best[1]:
            best = (G[i], float(R[i]))
        inner = np.max(np.abs(G[i] - center)) <= 0.5 * half
        center = best[0]
        if inner:
            half *= shrink
            if half < min_half:
                break
    return SPDPoint(_unit_det(from_coords(best[0], d))), best[1]


def support_set_center(S, tol=1e-9):
    """Oracle: the minimal ball is fixed by 2 or 3 of the elements.

    Enumerates pair midpoints and triple circumcenters (solved in
    exponential coordinates) and keeps the smallest ball covering the set.
    """
    E = _elements(S)
    E = E[_distinct(E)]
    if len(E) == 1:
        return SPDPoint(E[0]), 0.0
    best = None

    def consider(c):
        nonlocal best
        r = _covering_radius(c, E)
        if best is None or r < best[1]:
            best = (c, r)

    for i, j in combinations(range(len(E)), 2):
        consider(spd_geodesic(E[i], E[j], 0.5))
    for tri in combinations(range(len(E)), 3):
        T = E[list(tri)]
        cc = _circumcenter(T, to_coords(T).mean(axis=0))
        if cc is not None:
            consider(cc)
    return SPDPoint(best[0]), best[1]


def chebyshev_centers(E, valid=None):
    """Batched centers for stacks E of shape (P, K, d, d)."""
    P, K, d, _ = E.shape
    valid = np.ones(P, dtype=bool) if valid is None else valid
    centers = np.broadcast_to(np.eye(d), (P, d, d)).copy()
    radii = np.zeros(P)
    ndist = np.zeros(P, dtype=int)
    idx = np.nonzero(valid)[0]
    if idx.size == 0:
        return centers, radii, ndist
    Ev = E[idx]
    first = Ev[:, 0]
    dfirst = spd_distance(first[:, None], Ev)  # (V, K)
    far = np.argmax(dfirst, axis=1)
    second = Ev[np.arange(len(idx)), far]
    dsecond = spd_distance(second[:, None], Ev)
    one = dfirst.max(axis=1) <= DISTINCT_TOL
    two = ~one & np.all((dfirst <= DISTINCT_TOL) | (dsecond <= DISTINCT_TOL), axis=1)
    centers[idx[one]] = first[one]
    ndist[idx[one]] = 1
    if np.any(two):
        centers[idx[two]] = spd_geodesic(first[two], second[two], 0.5)
        radii[idx[two]] = 0.5 * dfirst[two, far[two]]
        ndist[idx[two]] = 2
    for j in np.nonzero(~one & ~two)[0]:
        c, r = chebyshev_center(Ev[j])
        centers[idx[j]] = c.matrix
        radii[idx[j]] = r
        ndist[idx[j]] = len(_distinct(Ev[j]))
    return centers, radii, ndist


def distortion_radius_bound(K, d=2):
    """Largest distance from Id of a normalized Gram with singular-value ratio K (d = 2)."""
    if d != 2:
        raise ContractViolation("the closed-form bound is for d = 2")
    return float(np.sqrt(2.0) * np.log(K))


# ---------------------------------------------------------------------------
# structures on a lens-space grid
# ---------------------------------------------------------------------------

def lens_grid(a, p, n=24, refine=1):
    """Product grid in polar coordinates (chi, theta_1, theta_2).

    chi_k = pi/4 + k pi / (50 refine), k = -12 refine .. 12 refine - 1,
    theta_1 in [pi/a - pi, pi/a + pi), theta_2 in [pi/a - pi/p, pi/a + pi/p),
    n refine steps each.  The point (i, i) / sqrt(2) is a node for a = 2.
    """
    m = n * refine
    k = np.arange(-(n // 2) * refine, (n // 2) * refine)
    chi = np.pi / 4 + k * np.pi / ((2 * n + 2) * refine)
    t1 = np.pi / a - np.pi + 2.0 * np.pi * np.arange(m) / m
    t2 = np.pi / a - np.pi / p + (2.0 * np.pi / p) * np.arange(m) / m
    C, T1, T2 = np.meshgrid(chi, t1, t2, indexing="ij")
    z = np.stack([np.cos(C) * np.exp(1j * T1), np.sin(C) * np.exp(1j * T2)], axis=-1)
    return z.reshape(-1, 2), {"a": a, "p": p, "n": n, "refine": refine,
                              "chi": chi, "theta1": t1, "theta2": t2}


@dataclass
class ConformalStructure:
    grid: np.ndarray  # (P, n+1) complex
    s: np.ndarray  # (P, d, d)
    radius: np.ndarray
    valid: np.ndarray
    params: dict = field(default_factory=dict)
    spec: object = None
    n_distinct: np.ndarray = None
    K: float = 1.0
    labels: np.ndarray = None
    labeler: object = field(default=None, repr=False, compare=False)

    @property
    def radius_bound(self):
        return distortion_radius_bound(self.K)

    @property
    def excluded_fraction(self):
        return float(1.0 - np.mean(self.valid))

    def lifts(self, label=None):
        """Valid grid points with all deck images, and the owning grid index."""
        sel = self.valid if label is None else self.valid & (self.labels == label)
        idx = np.nonzero(sel)[0]
        z = self.grid[idx]
        if self.spec is None:
            return z, idx
        zs = [self.spec.rotate(z, k) for k in range(self.spec.p)]
        return np.concatenate(zs), np.tile(idx, self.spec.p)

    def to_json(self):
        return {"schema_version": 1,
                "grid": [[float(v) for v in to_real(z)] for z in self.grid],
                "s": [[float(v) for v in S.ravel()] for S in self.s],
                "radius": [float(r) for r in self.radius],
                "valid": [bool(v) for v in self.valid],
                "labels": None if self.labels is None else [int(v) for v in self.labels],
                "K": float(self.K), "radius_bound": self.radius_bound,
                "params": {k: (v.tolist() if isinstance(v, np.ndarray) else v)
                           for k, v in self.params.items()}}

    def dumps(self):
        return json.dumps(self.to_json(), sort_keys=True)


def orbit_grams(m, z, N, branch_tol=BRANCH_ORBIT_TOL):
    """Normalized Grams of m^n at each z for n = 1..N, validity mask and max sv ratio."""
    z = np.asarray(z, dtype=complex)
    P = z.shape[0]
    d = 2 * (z.shape[-1] - 1)
    D = np.broadcast_to(np.eye(d), (P, d, d)).copy()
    E = np.broadcast_to(np.eye(d), (P, N, d, d)).copy()
    ok = np.ones(P, dtype=bool)
    cur = z.copy()
    K = np.ones(P)
    for n in range(N):
        ok &= ~on_branch_locus(cur, branch_tol) & m.in_domain(cur)
        idx = np.nonzero(ok)[0]
        if idx.size == 0:
            break
        H, q = horizontal_matrix(m, cur[idx])
        D[idx] = _rescale(H @ D[idx])
        cur[idx] = q
        sv = np.linalg.svd(D[idx], compute_uv=False)
        K[idx] = np.maximum(K[idx], sv[:, 0] / sv[:, -1])
        E[idx, n] = normalized_gram(D[idx])
    return E, ok, K


def structure_from_map(m, grid, N=8, window=None, params=None, spec=None, labeler=None,
                       branch_tol=BRANCH_ORBIT_TOL):
    """Chebyshev centers of orbit sets {normalized Gram of (m^n)_p : n in the window}.

    The window is the last ``window`` iterates n = N - window + 1 .. N
    (default: all of 1..N).  A tail window approximates the limit set of the
    Gram orbit, whose center is invariant.
    """
    window = N if window is None else int(window)
    if not 1 <= window <= N:
        raise ContractViolation("window must lie in 1..N")
    E, ok, K = orbit_grams(m, grid, N, branch_tol)
    s, r, nd = chebyshev_centers(E[:, N - window:], ok)
    Kmax = float(np.max(K[ok])) if np.any(ok) else 1.0
    grid = np.asarray(grid)
    labels = None if labeler is None else np.asarray(labeler(grid))
    cs = ConformalStructure(grid, s, r, ok, dict(params or {}), spec, nd, Kmax, labels, labeler)
    cs.params["N"] = N
    cs.params["window"] = window
    if cs.excluded_fraction > 0.2:
        warnings.warn(f"{100 * cs.excluded_fraction:.1f}% of the grid lies on branch orbits")
    return cs


def build_structure(u, grid, N=8, window=None, params=None):
    """Invariant structure of a trap map on a lens-space grid.

    Orbit sets use the tail n = N/2 + 1 .. N by default; lookups in the
    invariance residual stay within the piece of g containing the image.
    """
    from .trap_dynamics import piece_labels

    window = max(N // 2, 1) if window is None else window
    return structure_from_map(u.g, grid, N, window, params, u.config.spec,
                              lambda z: piece_labels(u, z))


# ---------------------------------------------------------------------------
# invariance residual
# ---------------------------------------------------------------------------

def karcher_blend(S, w, iters=20, tol=1e-13):
    """Weighted Karcher means of S (P, k, d, d) with weights w (P, k)."""
    w = w / np.sum(w, axis=1, keepdims=True)
    c = _unit_det(spd_exp(np.einsum("pk,pkij->pij", w, spd_log(S))))
    for _ in range(iters):
        T = np.einsum("pk,pkij->pij", w, spd_log_at(c[:, None], S))
        c = spd_exp_at(c, T)
        if np.max(np.abs(T)) < tol:
            break
    return c


@dataclass
class ResidualReport:
    residual: np.ndarray  # nan where excluded
    excluded: np.ndarray

    @property
    def values(self):
        return self.residual[~np.isnan(self.residual)]

    @property
    def mean(self):
        return float(np.mean(self.values))

    @property
    def median(self):
        return float(np.median(self.values))

    @property
    def max(self):
        return float(np.max(self.values))

    def csv(self, grid):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["point_id", "x1", "y1", "x2", "y2", "residual", "excluded"])
        for i, (z, r, e) in enumerate(zip(grid, self.residual, self.excluded)):
            x = to_real(z)
            w.writerow([i] + [f"{v:.12g}" for v in x] + ["" if np.isnan(r) else f"{r:.12g}", int(e)])
        return buf.getvalue()


def _lookup(cs, q, k, coverage, label=None):
    """IDW Karcher blend of the k nearest valid nodes (with the given label)."""
    lifts, owner = cs.lifts(label)
    n = q.shape[0]
    d = cs.s.shape[-1]
    if lifts.shape[0] == 0:
        return np.broadcast_to(np.eye(d), (n, d, d)).copy(), np.zeros(n, dtype=bool)
    tree = cKDTree(to_real(lifts))
    kk = min(k, lifts.shape[0])
    dist, nb = tree.query(to_real(q), k=kk)
    dist = dist.reshape(n, kk)
    nb = nb.reshape(n, kk)
    w = 1.0 / np.maximum(dist, 1e-300)
    exact = dist[:, 0] < 1e-12
    w[exact] = 0.0
    w[exact, 0] = 1.0
    return karcher_blend(cs.s[owner[nb]], w), dist[:, 0] <= coverage


def grid_spacing(cs):
    """Largest nearest-node distance over the lifted grid."""
    lifts, _ = cs.lifts()
    X = to_real(lifts)
    if X.shape[0] < 2:
        return np.inf
    dd, _ = cKDTree(X).query(X, k=2)
    return float(np.max(dd[:, 1]))


def invariance_residual(cs, m, k=4, coverage=None, mask=None):
    """d((det f_p)^{-2/d} f_p^t s_{m(p)} f_p, s_p) at each valid grid point.

    s_{m(p)} is the inverse-distance-weighted Karcher blend of the k nearest
    valid nodes, all deck lifts searched.  With a labeler attached, only
    nodes in the same piece as m(p) are used, since s jumps across piece
    boundaries.  Images farther than ``coverage`` (default 1.5 grid
    spacings) from every usable node are excluded.
    """
    P = cs.grid.shape[0]
    res = np.full(P, np.nan)
    sel = cs.valid.copy() if mask is None else cs.valid & mask
    idx = np.nonzero(sel)[0]
    excluded = ~sel
    if idx.size == 0:
        return ResidualReport(res, excluded)
    if coverage is None:
        coverage = 1.5 * grid_spacing(cs)
    H, q = horizontal_matrix(m, cs.grid[idx])
    d = cs.s.shape[-1]
    sq = np.empty((idx.size, d, d))
    covered = np.zeros(idx.size, dtype=bool)
    if cs.labeler is None:
        sq, covered = _lookup(cs, q, k, coverage)
    else:
        lq = np.asarray(cs.labeler(q))
        for L in np.unique(lq):
            j = lq == L
            sq[j], covered[j] = _lookup(cs, q[j], k, coverage, L)
    r = spd_distance(act(H, sq), cs.s[idx])
    res[idx[covered]] = r[covered]
    excluded[idx[~covered]] = True
    return ResidualReport(res, excluded)
