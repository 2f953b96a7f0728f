"""Carnot-Caratheodory distances on S^3, lens spaces and the Heisenberg group.

Three evaluators are provided.

* ``transcription`` (primary): piecewise-constant controls in an orthonormal
  horizontal frame, exact rollout, energy minimisation under an endpoint
  constraint with SLSQP and seeded restarts.  Always an upper bound.
* ``penalty`` (oracle): the same transcription with an extra vertical control
  whose field is eps*T, i.e. a Riemannian metric giving the Reeb direction
  length 1/eps; the eps -> 0 limit is Richardson-extrapolated.
* ``closed_form``: exact formulas, the circular-arc geodesics on the
  Heisenberg group and the reduced phase equation on S^3.

On S^3 the horizontal frame is left-invariant under the identification
z <-> g = [[z1, -conj z2], [z2, conj z1]] in SU(2), with generators
xi1 = [[0, -1], [1, 0]] and xi2 = [[0, i], [i, 0]] and Reeb generator
xi3 = diag(i, -i), so constant controls integrate exactly through
exp(X) = cos|X| I + sin|X| / |X| X.
"""
import csv
import io
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from . import heisenberg
from .kernels import sphere_distance_invariants
from .manifolds import (
    ContractViolation, HeisenbergChart, LensPoint, SpherePoint, hermitian, normalize,
)

XI = np.array([
    [[0, -1], [1, 0]],
    [[0, 1j], [1j, 0]],
    [[1j, 0], [0, -1j]],
], dtype=complex)

PENALTY_EPS = (0.2, 0.1, 0.05)


@dataclass(frozen=True)
class DistanceOptions:
    method: str = "transcription"
    segments: int = 32
    restarts: int = 8
    seed: int = 0
    ftol: float = 1e-12
    maxiter: int = 400
    endpoint_tol: float = 1e-8
    penalty_check: bool = False
    penalty_eps: tuple = PENALTY_EPS


@dataclass
class Diagnostics:
    method: str
    restarts: int = 0
    converged: int = 0
    endpoint_residual: float = 0.0
    flagged: bool = False
    penalty_value: float = float("nan")
    penalty_rel_gap: float = float("nan")
    per_restart: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# exact distances
# ---------------------------------------------------------------------------

def sphere_invariants(z, w):
    """Reduced invariants (|c|, sqrt(1-|c|^2), |arg c|) with c = <w, z>."""
    z = np.asarray(z, dtype=complex)
    w = np.asarray(w, dtype=complex)
    # expand around z so nearby points keep their small invariants exactly
    dw = w - z
    e = hermitian(dw, z)
    c = hermitian(z, z).real + e
    m = np.minimum(np.abs(c), 1.0)
    sp = np.linalg.norm(dw - e[..., None] * z, axis=-1)
    psi = np.abs(np.angle(c))
    return m, sp, psi


def sphere_distance(z, w):
    """Exact cc distance on the standard sub-Riemannian S^3 (vectorised)."""
    z = np.asarray(z, dtype=complex)
    w = np.asarray(w, dtype=complex)
    shape = np.broadcast_shapes(z.shape, w.shape)[:-1]
    m, sp, psi = sphere_invariants(np.broadcast_to(z, shape + (2,)),
                                   np.broadcast_to(w, shape + (2,)))
    d = sphere_distance_invariants(m, sp, psi).reshape(shape)
    return d if shape else float(d)


SPHERE_DIAMETER = np.pi


# ---------------------------------------------------------------------------
# SU(2) rollout
# ---------------------------------------------------------------------------

def su2(z):
    z = np.asarray(z, dtype=complex)
    return np.array([[z[0], -np.conj(z[1])], [z[1], np.conj(z[0])]])


def su2_exp(coef):
    """exp(sum coef_j xi_j) for coef of shape (..., 3)."""
    coef = np.asarray(coef, dtype=float)
    nrm = np.linalg.norm(coef, axis=-1)
    X = np.einsum("...j,jab->...ab", coef.astype(complex), XI)
    sinc = np.where(nrm > 1e-300, np.sin(nrm) / np.where(nrm > 1e-300, nrm, 1.0), 1.0)
    eye = np.eye(2, dtype=complex)
    return np.cos(nrm)[..., None, None] * eye + sinc[..., None, None] * X


def _segments(u, h, eps):
    u = np.asarray(u, dtype=float).reshape(-1, 3 if eps is not None else 2)
    if eps is None:
        coef = np.concatenate([u, np.zeros((u.shape[0], 1))], axis=1) * h
    else:
        coef = u * h * np.array([1.0, 1.0, eps])
    return su2_exp(coef)


def sphere_rollout(g0, u, h, eps=None):
    """Sample points of the controlled curve, shape (M+1, 2)."""
    E = _segments(u, h, eps)
    pts = [g0[:, 0]]
    g = g0
    for Ek in E:
        g = g @ Ek
        pts.append(g[:, 0])
    return np.array(pts)


# ---------------------------------------------------------------------------
# transcription problems
# ---------------------------------------------------------------------------

class _SphereProblem:
    def __init__(self, a, b, M, eps=None):
        self.g0 = su2(a)
        self.chart = HeisenbergChart(SpherePoint(b))
        self.M = M
        self.h = 1.0 / M
        self.eps = eps
        self.k = 2 if eps is None else 3

    def _prefix_suffix(self, E):
        M = self.M
        pre = np.empty((M + 1, 2, 2), dtype=complex)
        suf = np.empty((M + 1, 2), dtype=complex)
        pre[0] = self.g0
        for i in range(M):
            pre[i + 1] = pre[i] @ E[i]
        suf[M] = np.array([1.0, 0.0])
        for i in range(M - 1, -1, -1):
            suf[i] = E[i] @ suf[i + 1]
        return pre, suf

    def endpoint(self, x):
        E = _segments(x, self.h, self.eps)
        pre, _ = self._prefix_suffix(E)
        return pre[-1][:, 0]

    def constraint(self, x):
        return self.chart.forward(self.endpoint(x))

    def jacobian(self, x, step=1e-7):
        u = np.asarray(x, dtype=float).reshape(self.M, self.k)
        E = _segments(u, self.h, self.eps)
        pre, suf = self._prefix_suffix(E)
        pts = []
        for s in (step, -step):
            up = np.repeat(u[None], self.k, axis=0)  # (k, M, k)
            for j in range(self.k):
                up[j, :, j] += s
            Ep = _segments(up.reshape(-1, self.k), self.h, self.eps).reshape(self.k, self.M, 2, 2)
            # z_end with segment i perturbed in component j: pre_i E'_i suf_{i+1}
            tail = np.einsum("jiab,ib->jia", Ep, suf[1:])
            pts.append(np.einsum("iab,jib->jia", pre[:-1], tail))
        fp = self.chart.forward(pts[0].reshape(-1, 2))
        fm = self.chart.forward(pts[1].reshape(-1, 2))
        J = (fp - fm) / (2 * step)  # (k*M, 3) ordered j-major
        J = J.reshape(self.k, self.M, 3).transpose(2, 1, 0).reshape(3, self.M * self.k)
        return J

    def initial(self, rng, first):
        if first:
            g = np.conj(self.g0.T) @ su2(self.chart.base.z)
            # log of the relative element, projected to the control space
            ang = np.arccos(np.clip(g[0, 0].real, -1.0, 1.0))
            s = np.sin(ang)
            if s < 1e-12:
                coef = np.array([0.0, 0.0, 0.0])
            else:
                # X = ang/s * (g - cos ang I)
                X = (g - np.cos(ang) * np.eye(2)) * (ang / s)
                coef = np.array([X[1, 0].real, X[1, 0].imag, X[0, 0].imag])
            u = np.tile(coef[: self.k], (self.M, 1))
            if self.eps is not None:
                u[:, 2] /= self.eps
            return u.ravel()
        return rng.normal(scale=1.5, size=self.M * self.k)

    def path(self, x):
        return sphere_rollout(self.g0, x, self.h, self.eps)


class _HeisenbergProblem:
    """Controls (u1, u2[, u3]) on X, Y[, eps T] from a to b in H^1."""

    def __init__(self, a, b, M, eps=None):
        self.a = np.asarray(a, dtype=float)
        self.target = heisenberg.mul(heisenberg.inv(self.a), np.asarray(b, dtype=float))
        self.M = M
        self.h = 1.0 / M
        self.eps = eps
        self.k = 2 if eps is None else 3

    def _rollout(self, u):
        u = u.reshape(self.M, self.k)
        dx = u[:, 0] * self.h
        dy = u[:, 1] * self.h
        x = np.concatenate([[0.0], np.cumsum(dx)])
        y = np.concatenate([[0.0], np.cumsum(dy)])
        dt = 0.5 * (x[:-1] * dy - y[:-1] * dx)
        if self.eps is not None:
            dt = dt + self.eps * u[:, 2] * self.h
        t = np.concatenate([[0.0], np.cumsum(dt)])
        return x, y, t

    def constraint(self, x):
        xs, ys, ts = self._rollout(np.asarray(x, dtype=float))
        return np.array([xs[-1], ys[-1], ts[-1]]) - self.target

    def jacobian(self, x):
        u = np.asarray(x, dtype=float).reshape(self.M, self.k)
        h = self.h
        xs, ys, _ = self._rollout(u.ravel())
        J = np.zeros((3, self.M, self.k))
        J[0, :, 0] = h
        J[1, :, 1] = h
        # t_end = sum_k 0.5 (x_k dy_k - y_k dx_k), x_k = h sum_{i<k} u1_i
        dx = u[:, 0] * h
        dy = u[:, 1] * h
        later_dy = np.concatenate([np.cumsum(dy[::-1])[::-1][1:], [0.0]])
        later_dx = np.concatenate([np.cumsum(dx[::-1])[::-1][1:], [0.0]])
        J[2, :, 0] = 0.5 * h * later_dy - 0.5 * ys[:-1] * h
        J[2, :, 1] = 0.5 * xs[:-1] * h - 0.5 * h * later_dx
        if self.eps is not None:
            J[2, :, 2] = self.eps * h
        return J.reshape(3, -1)

    def initial(self, rng, first):
        if first:
            u = np.zeros((self.M, self.k))
            u[:, 0] = self.target[0]
            u[:, 1] = self.target[1]
            if abs(self.target[2]) > 0 and np.hypot(*self.target[:2]) < 1e-12:
                # a circle of the right area
                r = np.sqrt(abs(self.target[2]) / np.pi)
                s = (np.arange(self.M) + 0.5) / self.M * 2 * np.pi
                sgn = np.sign(self.target[2])
                u[:, 0] = -2 * np.pi * r * np.sin(sgn * s) * sgn
                u[:, 1] = 2 * np.pi * r * np.cos(sgn * s)
            return u.ravel()
        return rng.normal(scale=1.5, size=self.M * self.k)

    def path(self, x):
        xs, ys, ts = self._rollout(np.asarray(x, dtype=float))
        return heisenberg.mul(self.a, np.stack([xs, ys, ts], axis=-1))


def _solve(problem, opts, diag):
    M = problem.M
    h = problem.h
    rng = np.random.default_rng(opts.seed)
    best = None
    for r in range(opts.restarts):
        x0 = problem.initial(rng, r == 0)
        res = minimize(
            lambda x: h * np.dot(x, x),
            x0,
            jac=lambda x: 2 * h * x,
            method="SLSQP",
            constraints=[{"type": "eq", "fun": problem.constraint, "jac": problem.jacobian}],
            options={"ftol": opts.ftol, "maxiter": opts.maxiter},
        )
        resid = float(np.max(np.abs(problem.constraint(res.x))))
        u = res.x.reshape(M, problem.k)
        length = float(h * np.sum(np.linalg.norm(u, axis=1)))
        ok = resid <= opts.endpoint_tol
        diag.per_restart.append({"length": length, "residual": resid, "success": bool(res.success)})
        diag.converged += int(ok)
        if ok and (best is None or length < best[0]):
            best = (length, resid, res.x)
    diag.restarts = opts.restarts
    if best is None:
        # fall back to the least-infeasible restart, flagged
        i = int(np.argmin([p["residual"] for p in diag.per_restart]))
        diag.flagged = True
        diag.endpoint_residual = diag.per_restart[i]["residual"]
        return diag.per_restart[i]["length"], None
    diag.endpoint_residual = best[1]
    return best[0], best[2]


def _is_heisenberg(p):
    return isinstance(p, np.ndarray) and p.dtype.kind == "f" and p.shape == (3,)


def _coerce(p):
    if isinstance(p, SpherePoint):
        return "sphere", p.z
    arr = np.asarray(p)
    if arr.dtype.kind == "c" or arr.shape == (2,):
        return "sphere", normalize(arr.astype(complex))
    if arr.shape == (3,):
        return "heisenberg", arr.astype(float)
    raise ContractViolation("unsupported point type for cc_distance")


def _transcribe(kind, a, b, opts, eps=None):
    diag = Diagnostics(method="transcription" if eps is None else f"penalty(eps={eps})")
    if kind == "sphere":
        if abs(1.0 + hermitian(b, a)) < 1e-10 and abs(hermitian(b, a).imag) < 1e-10:
            # the endpoint chart is singular at the antipode; move the target
            raise ContractViolation("transcription endpoint chart undefined for antipodal pairs")
        prob = _SphereProblem(a, b, opts.segments, eps)
    else:
        prob = _HeisenbergProblem(a, b, opts.segments, eps)
    val, x = _solve(prob, opts, diag)
    return val, diag, (prob.path(x) if x is not None else None)


def penalty_distance(a, b, opts=None):
    """Penalty-metric oracle, Richardson-extrapolated to eps = 0.

    The penalty distance d_eps is even in eps; a quadratic fit in eps^2 on the
    three eps values gives the extrapolated value.
    """
    opts = opts or DistanceOptions()
    kind, za = _coerce(a)
    _, zb = _coerce(b)
    vals = []
    for eps in opts.penalty_eps:
        v, _, _ = _transcribe(kind, za, zb, opts, eps)
        vals.append(v)
    e2 = np.asarray(opts.penalty_eps) ** 2
    V = np.vander(e2, 3, increasing=True)
    coef = np.linalg.solve(V, np.asarray(vals))
    return float(coef[0]), vals


def cc_distance(a, b, opts=None, return_path=False):
    """cc distance between two points of S^3 or of H^1.

    Returns ``(value, diagnostics)``; with ``return_path`` also the sampled
    optimal path.  A result whose endpoint residual exceeds the tolerance is
    returned with ``diagnostics.flagged = True``.
    """
    opts = opts or DistanceOptions()
    ka, za = _coerce(a)
    kb, zb = _coerce(b)
    if ka != kb:
        raise ContractViolation("points live on different manifolds")
    path = None
    if opts.method == "closed_form":
        diag = Diagnostics(method="closed_form")
        if ka == "sphere":
            if za.size != 2:
                raise ContractViolation("closed form available for S^3 only")
            val = sphere_distance(za, zb)
        else:
            val = heisenberg.cc_distance_exact(za, zb)
    elif opts.method == "penalty":
        diag = Diagnostics(method="penalty")
        val, _ = penalty_distance(za, zb, opts)
    elif opts.method == "transcription":
        if ka == "sphere" and np.max(np.abs(za - zb)) < 1e-14:
            return (0.0, Diagnostics(method="transcription")) + ((None,) if return_path else ())
        if ka == "heisenberg" and np.max(np.abs(za - zb)) == 0.0:
            return (0.0, Diagnostics(method="transcription")) + ((None,) if return_path else ())
        val, diag, path = _transcribe(ka, za, zb, opts)
        if opts.penalty_check:
            pv, _ = penalty_distance(za, zb, opts)
            diag.penalty_value = pv
            diag.penalty_rel_gap = abs(val - pv) / max(pv, 1e-300)
    else:
        raise ContractViolation(f"unknown cc_distance method {opts.method!r}")
    if return_path:
        return float(val), diag, path
    return float(val), diag


def lens_distance(x, y, opts=None):
    """min over k of d(rep_x, R^k rep_y); the covering is a local isometry."""
    if not isinstance(x, LensPoint) or not isinstance(y, LensPoint):
        raise ContractViolation("lens_distance expects LensPoint arguments")
    if x.spec != y.spec:
        raise ContractViolation("lens points belong to different lens spaces")
    opts = opts or DistanceOptions(method="closed_form")
    za = x.representative.z
    lifts = y.spec.orbit(y.representative.z)
    if opts.method == "closed_form":
        return float(np.min(sphere_distance(za[None], lifts)))
    return float(min(cc_distance(za, w, opts)[0] for w in lifts))


def lens_distance_array(z, w, spec):
    """Vectorised quotient distance between sphere representatives."""
    lifts = spec.orbit(np.asarray(w, dtype=complex))
    return np.min(sphere_distance(np.asarray(z, dtype=complex)[None], lifts), axis=0)


def distance_csv_rows(rows):
    """CSV text with columns a, b, value, method, restarts, residual."""
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["a", "b", "value", "method", "restarts", "residual"])
    for a, b, val, diag in rows:
        wr.writerow([a, b, f"{val:.12g}", diag.method, diag.restarts, f"{diag.endpoint_residual:.3e}"])
    return buf.getvalue()
