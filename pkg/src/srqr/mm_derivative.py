"""Margulis-Mostow (Pansu) derivatives by dilation limits in privileged charts.

For a map m and point p the rescaled maps
    F_h = delta_h o phi_{m(p)} o m o phi_p^{-1} o delta_{1/h}
converge to a graded homomorphism (x, y, t) -> (A (x, y), tau t) of the first
Heisenberg group, with tau = det A. F_h is evaluated on a fixed probe set,
fitted by least squares for each h, and the fits are extrapolated in 1/h.
"""
import json
from dataclasses import dataclass, field

import numpy as np

from . import heisenberg
from .manifolds import ContractViolation, SpherePoint, heisenberg_chart

DEFAULT_SCHEDULE = tuple(10.0 ** e for e in (1.0, 1.5, 2.0, 2.5, 3.0))
CAUCHY_TOL = 1e-3
NOISE_FLOOR = 1e-9


class NonConvergent(RuntimeError):
    def __init__(self, hom):
        super().__init__(f"non-convergent at p: Cauchy differences {hom.cauchy}")
        self.hom = hom


def probe_set():
    """8 first-layer unit points and 4 vertical points."""
    ang = 2.0 * np.pi * np.arange(8) / 8
    first = np.stack([np.cos(ang), np.sin(ang), np.zeros(8)], axis=-1)
    vert = np.array([[0, 0, 1.0], [0, 0, -1.0], [0, 0, 0.5], [0, 0, -0.5]])
    return np.concatenate([first, vert])


PROBES = probe_set()


@dataclass
class GradedHom:
    A: np.ndarray
    tau: float
    residual: float = 0.0
    schedule: tuple = ()
    cauchy: list = field(default_factory=list)
    converged: bool = True

    def __call__(self, q):
        q = np.asarray(q, dtype=float)
        out = np.empty(q.shape)
        out[..., :2] = q[..., :2] @ self.A.T
        out[..., 2] = self.tau * q[..., 2]
        return out

    def compose(self, other):
        """self o other."""
        return GradedHom(self.A @ other.A, self.tau * other.tau,
                         self.residual + other.residual)

    @property
    def graded_defect(self):
        return abs(self.tau - float(np.linalg.det(self.A)))

    def to_json(self):
        return {"A": [float(v) for v in self.A.ravel()], "tau": float(self.tau),
                "residual": float(self.residual), "schedule": [float(h) for h in self.schedule],
                "cauchy": [float(c) for c in self.cauchy], "converged": bool(self.converged)}

    def dumps(self):
        return json.dumps(self.to_json(), sort_keys=True)

    @classmethod
    def from_json(cls, d):
        return cls(np.array(d["A"], dtype=float).reshape(2, 2), d["tau"], d["residual"],
                   tuple(d["schedule"]), list(d.get("cauchy", [])), d.get("converged", True))


def privileged_chart(p):
    return heisenberg_chart(p)


def local_map(m, p):
    """The map m read in privileged coordinates at p and m(p), sending 0 to 0.

    Sphere maps are MapHandle-like (``fn`` on lifts); any other callable is
    taken to act on H^1 directly, in which case left translations serve as
    charts.
    """
    if hasattr(m, "fn"):
        z = np.asarray(p.z if isinstance(p, SpherePoint) else p, dtype=complex)
        src = privileged_chart(z)
        dst = privileged_chart(m.fn(z))
        return lambda q: dst.forward(m.fn(src.inverse(q)))
    p = np.asarray(p, dtype=float)
    mp_inv = heisenberg.inv(m(p))
    return lambda q: heisenberg.mul(mp_inv, m(heisenberg.mul(p, q)))


def rescaled(F, h):
    return lambda q: heisenberg.dilate(F(heisenberg.dilate(q, 1.0 / h)), h)


def fit_graded(Y, probes=PROBES):
    """Least-squares graded homomorphism with Y ~ L(probes)."""
    first = probes[:, 2] == 0
    At, *_ = np.linalg.lstsq(probes[first, :2], Y[first, :2], rcond=None)
    pv = probes[~first, 2]
    tau = float(np.dot(Y[~first, 2], pv) / np.dot(pv, pv))
    hom = GradedHom(At.T, tau)
    hom.residual = float(np.max(np.abs(hom(probes) - Y)))
    return hom


def extrapolate(hs, Ys):
    """Polynomial extrapolation in 1/h to 1/h = 0 (Neville) from len(hs) scales."""
    x = 1.0 / np.asarray(hs, dtype=float)
    P = [np.asarray(Y, dtype=float) for Y in Ys]
    n = len(P)
    for k in range(1, n):
        P = [(x[i + k] * P[i] - x[i] * P[i + 1]) / (x[i + k] - x[i]) for i in range(n - k)]
    return P[0]


def pansu_derivative(m, p, h_schedule=DEFAULT_SCHEDULE, order=2, raise_on_fail=True):
    """Fit the Pansu derivative of m at p.

    Cauchy differences between consecutive fits are the convergence
    certificate: they must decrease (up to a rounding floor) and the last one
    must be below 1e-3. Fits and differences use Richardson extrapolants over
    windows of ``order + 1`` consecutive scales, which remove the error terms
    up to O(h^-order).
    """
    hs = np.asarray(h_schedule, dtype=float)
    if hs.size < 3 or np.any(np.diff(hs) <= 0):
        raise ContractViolation("h_schedule must be increasing with at least three entries")
    F = local_map(m, p)
    Ys = [rescaled(F, h)(PROBES) for h in hs]
    # fits of the extrapolants over windows of order + 1 consecutive scales
    w = min(order + 1, hs.size - 1)
    Es = [extrapolate(hs[k:k + w], Ys[k:k + w]) for k in range(hs.size - w + 1)]
    fits = [fit_graded(E) for E in Es]
    cauchy = []
    for a, b in zip(fits[:-1], fits[1:]):
        cauchy.append(float(max(np.max(np.abs(a.A - b.A)), abs(a.tau - b.tau))))
    c = np.maximum(np.array(cauchy), NOISE_FLOOR)
    converged = bool(np.all(np.diff(c) <= 0) and c[-1] < CAUCHY_TOL)
    hom = fits[-1]
    hom.schedule = tuple(float(h) for h in hs)
    hom.cauchy = cauchy
    hom.converged = converged
    if raise_on_fail and not converged:
        raise NonConvergent(hom)
    return hom


def hom_distortion(H):
    sv = np.linalg.svd(H.A, compute_uv=False)
    if sv[-1] <= 1e-12 * max(sv[0], 1.0):
        raise ContractViolation("singular horizontal matrix")
    return float(sv[0] / sv[-1])


def homomorphism_residual(m, p, H, order=2):
    """max |F(a b) - H(a) H(b)| over probe pairs, F extrapolated from the largest scales."""
    hs = np.asarray(H.schedule[-(order + 1):])
    F = local_map(m, p)
    ab = heisenberg.mul(PROBES[:, None, :], PROBES[None, :, :])
    lhs = extrapolate(hs, [rescaled(F, h)(ab) for h in hs])
    rhs = heisenberg.mul(H(PROBES[:, None, :]), H(PROBES[None, :, :]))
    return float(np.max(np.abs(lhs - rhs)))


def dilation_fixture(r):
    return lambda q: heisenberg.dilate(q, r)


def translation_fixture(g):
    g = np.asarray(g, dtype=float)
    return lambda q: heisenberg.mul(g, q)
