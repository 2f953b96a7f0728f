"""Points, tangent vectors and the contact structure of S^{2n+1}, lens spaces
and the Heisenberg chart.

Conventions
-----------
* A point of S^{2n+1} is a complex vector z = (z_1, ..., z_{n+1}) with
  |z| = 1, polar form z_j = r_j e^{i theta_j}, theta_j in (-pi, pi] and
  theta_j = 0 whenever r_j = 0.
* A tangent vector is stored either as a complex vector v (internal array
  form) or as the real vector (Re v_1, Im v_1, Re v_2, Im v_2, ...).
* The contact form is alpha = sum r_j^2 d theta_j, i.e.
  alpha_z(v) = Im <v, z> = sum (x_j vy_j - y_j vx_j).
* The Reeb field is T_z = i z: alpha(T) = 1 and the Reeb flow is the circle
  action z -> e^{i s} z of period 2 pi.
* The sub-Riemannian metric is the Euclidean inner product restricted to the
  horizontal bundle H_z = ker alpha_z ∩ T_z S^{2n+1}, which is the complex
  orthogonal complement of z.
"""
from dataclasses import dataclass, field
from math import gcd

import numpy as np

from . import heisenberg

UNIT_TOL = 1e-12
TANGENT_TOL = 1e-10
HORIZONTAL_TOL = 1e-9
BRANCH_TOL = 1e-8
ANGLE_TOL = 1e-12


class ContractViolation(ValueError):
    """An operation was called with inconsistent arguments."""


class ChartDomainError(ValueError):
    """A chart was evaluated at the antipode of its base point."""


# ---------------------------------------------------------------------------
# array helpers
# ---------------------------------------------------------------------------

def normalize(z):
    z = np.asarray(z, dtype=complex)
    return z / np.linalg.norm(z, axis=-1, keepdims=True)


def to_real(v):
    """Complex (..., m) -> real (..., 2m) with interleaved (Re, Im)."""
    v = np.asarray(v, dtype=complex)
    out = np.empty(v.shape[:-1] + (2 * v.shape[-1],))
    out[..., 0::2] = v.real
    out[..., 1::2] = v.imag
    return out


def to_complex(v):
    v = np.asarray(v, dtype=float)
    return v[..., 0::2] + 1j * v[..., 1::2]


def polar(z):
    """Moduli and angles with the convention theta = 0 where r = 0."""
    z = np.asarray(z, dtype=complex)
    r = np.abs(z)
    theta = np.where(r > 0.0, np.angle(z), 0.0)
    # np.angle returns -pi for negative reals with a negative zero imaginary part
    theta = np.where(theta <= -np.pi, np.pi, theta)
    return r, theta


def from_polar(r, theta):
    return np.asarray(r) * np.exp(1j * np.asarray(theta))


def hermitian(z, w):
    """<z, w> = sum z_j conj(w_j) along the last axis."""
    return np.sum(np.asarray(z) * np.conj(np.asarray(w)), axis=-1)


def random_sphere(rng, size, n=1):
    z = rng.normal(size=(size, n + 1)) + 1j * rng.normal(size=(size, n + 1))
    return normalize(z)


def on_branch_locus(z, tol=BRANCH_TOL):
    """True where some coordinate modulus is below ``tol``."""
    return np.any(np.abs(np.asarray(z)) < tol, axis=-1)


# ---------------------------------------------------------------------------
# contact structure (array form)
# ---------------------------------------------------------------------------

def alpha(z, v):
    """Contact form alpha_z(v) = Im <v, z> for complex arrays."""
    return np.imag(hermitian(v, z))


def reeb_c(z):
    return 1j * np.asarray(z, dtype=complex)


def tangent_project(z, v):
    """Remove the radial component Re<v, z> z."""
    z = np.asarray(z, dtype=complex)
    v = np.asarray(v, dtype=complex)
    return v - np.real(hermitian(v, z))[..., None] * z


def horizontal_project_c(z, v):
    """Projection onto H_z: drop the radial and the Reeb components."""
    z = np.asarray(z, dtype=complex)
    return v - hermitian(v, z)[..., None] * z


def horizontal_frame(z):
    """Orthonormal real basis of H_z, shape (..., 2n, n+1) complex.

    For n = 1 the frame is E1 = (-conj z2, conj z1), E2 = i E1, which is
    smooth on all of S^3.  For larger n a Gram-Schmidt frame is used.
    """
    z = np.asarray(z, dtype=complex)
    m = z.shape[-1]
    if m == 2:
        e1 = np.stack([-np.conj(z[..., 1]), np.conj(z[..., 0])], axis=-1)
        return np.stack([e1, 1j * e1], axis=-2)
    vecs = []
    basis = np.eye(m, dtype=complex)
    for j in range(m):
        if len(vecs) == m - 1:
            break
        v = np.broadcast_to(basis[j], z.shape).copy()
        v = horizontal_project_c(z, v)
        for w in vecs:
            v = v - hermitian(v, w)[..., None] * w
        nrm = np.linalg.norm(v, axis=-1, keepdims=True)
        if np.all(nrm > 1e-6):
            vecs.append(v / nrm)
    if len(vecs) != m - 1:
        raise ContractViolation("could not build a horizontal frame")
    frames = []
    for w in vecs:
        frames.append(w)
        frames.append(1j * w)
    return np.stack(frames, axis=-2)


def horizontal_coords(z, v):
    """Coordinates of a horizontal vector v in :func:`horizontal_frame`."""
    fr = horizontal_frame(z)
    return np.real(np.sum(np.conj(fr) * np.asarray(v)[..., None, :], axis=-1))


def gauge(z, w):
    """Koranyi gauge distance |1 - <z, w>|^{1/2} on the sphere."""
    return np.sqrt(np.abs(1.0 - hermitian(z, w)))


# ---------------------------------------------------------------------------
# typed wrappers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SpherePoint:
    """Unit vector of C^{n+1} with cached polar form."""

    z: np.ndarray
    r: np.ndarray = field(init=False, repr=False, compare=False)
    theta: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        z = np.array(self.z, dtype=complex).ravel()
        if z.size < 2:
            raise ContractViolation("a sphere point needs at least two coordinates")
        nrm = np.linalg.norm(z)
        if nrm == 0.0:
            raise ContractViolation("zero vector is not a sphere point")
        z = z / nrm
        if abs(np.vdot(z, z).real - 1.0) > UNIT_TOL:
            raise ContractViolation("normalisation failed")
        r, theta = polar(z)
        if np.max(np.abs(from_polar(r, theta) - z)) > UNIT_TOL:
            raise ContractViolation("polar form does not reproduce the point")
        z.setflags(write=False)
        r.setflags(write=False)
        theta.setflags(write=False)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "theta", theta)

    @classmethod
    def from_polar(cls, r, theta):
        return cls(from_polar(r, theta))

    @property
    def n(self):
        return self.z.size - 1

    def same_as(self, other, tol=1e-12):
        return np.max(np.abs(self.z - other.z)) <= tol

    def to_json(self):
        return {"re": self.z.real.tolist(), "im": self.z.imag.tolist()}

    @classmethod
    def from_json(cls, d):
        return cls(np.asarray(d["re"]) + 1j * np.asarray(d["im"]))


@dataclass(frozen=True)
class TangentVector:
    """Real tangent vector (Re v_1, Im v_1, ...) based at a sphere point."""

    v: np.ndarray
    base: SpherePoint

    def __post_init__(self):
        v = np.array(self.v, dtype=float).ravel()
        if v.size != 2 * self.base.z.size:
            raise ContractViolation("vector dimension does not match base point")
        vc = to_complex(v)
        if abs(np.real(np.vdot(self.base.z, vc))) > TANGENT_TOL * max(1.0, np.linalg.norm(v)):
            raise ContractViolation("vector is not tangent to the sphere")
        v.setflags(write=False)
        object.__setattr__(self, "v", v)

    @property
    def complex(self):
        return to_complex(self.v)

    def norm(self):
        return float(np.linalg.norm(self.v))


@dataclass(frozen=True)
class HorizontalVector(TangentVector):
    """Tangent vector annihilated by the contact form."""

    residual: float = field(default=0.0, compare=False)

    def __post_init__(self):
        super().__post_init__()
        res = abs(float(alpha(self.base.z, self.complex)))
        if res > HORIZONTAL_TOL * max(self.norm(), 1e-300) and res > 1e-300:
            raise ContractViolation(f"vector is not horizontal (alpha = {res:.3e})")
        object.__setattr__(self, "residual", res)


def _check_base(p, v):
    if v.base is not p and not v.base.same_as(p):
        raise ContractViolation("tangent vector is based at a different point")


def contact_form(p, v):
    """alpha_p(v) from (i/2) sum (z_j d conj z_j - conj z_j d z_j)."""
    _check_base(p, v)
    return float(alpha(p.z, v.complex))


def reeb(p):
    """Reeb vector T_p = i p, normalised by alpha(T) = 1."""
    return TangentVector(to_real(reeb_c(p.z)), p)


def horizontal_project(p, v):
    """v - alpha(v) T, which also lies in the complex complement of p."""
    _check_base(p, v)
    w = horizontal_project_c(p.z, v.complex)
    return HorizontalVector(to_real(w), p)


def sr_inner(p, u, w):
    """Sub-Riemannian inner product: Euclidean product of the representatives."""
    _check_base(p, u)
    _check_base(p, w)
    return float(np.dot(u.v, w.v))


# ---------------------------------------------------------------------------
# lens spaces
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LensSpec:
    """Data (p, q) of the lens space L_{p,q} = S^{2n+1} / <R_{p,q}>."""

    p: int
    q: tuple

    def __post_init__(self):
        p = int(self.p)
        q = tuple(int(x) for x in self.q)
        if p < 2:
            raise ContractViolation("lens order p must be > 1")
        for qi in q:
            if gcd(qi, p) != 1:
                raise ContractViolation(f"q_i = {qi} is not coprime to p = {p}")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", q)

    @property
    def n(self):
        return len(self.q) - 1

    def phases(self, k=1):
        return np.exp(2j * np.pi * k * np.asarray(self.q, dtype=float) / self.p)

    def rotate(self, z, k=1):
        """Apply R_{p,q}^k."""
        return np.asarray(z, dtype=complex) * self.phases(k)

    def orbit(self, z):
        """All p lifts, shape (p, ..., n+1)."""
        return np.stack([self.rotate(z, k) for k in range(self.p)], axis=0)

    def to_json(self):
        return {"p": self.p, "q": list(self.q)}


def lens_canonical(z, spec):
    """Representative with the lexicographically smallest angle tuple.

    Ties are broken by the smallest rotation power k.  Works on arrays of
    shape (..., n+1).
    """
    z = np.asarray(z, dtype=complex)
    orbit = spec.orbit(z)
    _, th = polar(orbit)
    # half-open window [-pi, pi) so rounding at the cut cannot flip the order
    th = np.where(th > np.pi - ANGLE_TOL, th - 2.0 * np.pi, th)
    best = np.zeros(z.shape[:-1], dtype=int)
    best_th = th[0]
    for k in range(1, spec.p):
        cand = th[k]
        better = np.zeros(z.shape[:-1], dtype=bool)
        decided = np.zeros(z.shape[:-1], dtype=bool)
        for j in range(z.shape[-1]):
            lt = (cand[..., j] < best_th[..., j] - ANGLE_TOL) & ~decided
            gt = (cand[..., j] > best_th[..., j] + ANGLE_TOL) & ~decided
            better |= lt
            decided |= lt | gt
        best = np.where(better, k, best)
        best_th = np.where(better[..., None], cand, best_th)
    return np.take_along_axis(orbit, best[None, ..., None], axis=0)[0]


@dataclass(frozen=True)
class LensPoint:
    representative: SpherePoint
    spec: LensSpec

    def __post_init__(self):
        canon = lens_canonical(self.representative.z, self.spec)
        object.__setattr__(self, "representative", SpherePoint(canon))

    def lifts(self):
        return self.spec.orbit(self.representative.z)

    def to_json(self):
        return {"representative": self.representative.to_json(), "spec": self.spec.to_json()}


def lens_project(z, spec):
    """Quotient map pi: S^{2n+1} -> L_{p,q}."""
    if isinstance(z, SpherePoint):
        z = z.z
    return LensPoint(SpherePoint(z), spec)


# ---------------------------------------------------------------------------
# horizontal paths
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HorizontalPath:
    """Ordered samples of a curve on the sphere with an affine parameter.

    ``residuals`` holds, per segment, |alpha(dz)| / |dz| evaluated at the
    normalised segment midpoint; it is O(step^2) for a smooth horizontal
    curve.
    """

    points: np.ndarray
    times: np.ndarray
    tol: float = 1e-4
    residuals: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        pts = normalize(np.array(self.points, dtype=complex))
        ts = np.array(self.times, dtype=float)
        if pts.ndim != 2 or ts.shape != (pts.shape[0],):
            raise ContractViolation("points must be (m, n+1) with one time per sample")
        if np.any(np.diff(ts) <= 0):
            raise ContractViolation("times must be strictly increasing")
        dz = np.diff(pts, axis=0)
        mid = normalize(0.5 * (pts[1:] + pts[:-1]))
        lens = np.linalg.norm(dz, axis=-1)
        res = np.where(lens > 0, np.abs(alpha(mid, dz)) / np.where(lens > 0, lens, 1.0), 0.0)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "times", ts)
        object.__setattr__(self, "residuals", res)

    @property
    def horizontal(self):
        return bool(np.all(self.residuals <= self.tol))

    def map(self, fn):
        return HorizontalPath(fn(self.points), self.times, self.tol)


class NonHorizontalPath(ValueError):
    def __init__(self, residuals, tol):
        worst = int(np.argmax(residuals))
        super().__init__(
            f"segment {worst} has contact residual {residuals[worst]:.3e} > {tol:.1e}")
        self.residuals = residuals


def path_length(path):
    """Integral of segment speeds |dz / dt| dt, i.e. the polygonal length.

    The chord sum converges to the arc length at second order in the step.
    """
    if not path.horizontal:
        raise NonHorizontalPath(path.residuals, path.tol)
    return float(np.sum(np.linalg.norm(np.diff(path.points, axis=0), axis=-1)))


# ---------------------------------------------------------------------------
# Heisenberg chart
# ---------------------------------------------------------------------------

def pole_unitary(b):
    """Unitary matrix U with U b = e_1, built as an SU(2) element for n = 1."""
    b = np.asarray(b, dtype=complex)
    if b.size == 2:
        return np.array([[np.conj(b[0]), np.conj(b[1])], [-b[1], b[0]]])
    # Householder-type completion for general n
    m = b.size
    mat = np.eye(m, dtype=complex)
    mat[:, 0] = b
    qm, _ = np.linalg.qr(mat)
    qm[:, 0] = b
    for j in range(1, m):
        v = qm[:, j] - np.vdot(b, qm[:, j]) * b
        for i in range(1, j):
            v = v - np.vdot(qm[:, i], v) * qm[:, i]
        qm[:, j] = v / np.linalg.norm(v)
    return np.conj(qm.T)


@dataclass(frozen=True)
class HeisenbergChart:
    """Conformal chart of S^3 minus the antipode of ``base`` onto H^1.

    forward = Cayley map after the unitary motion U taking base to (1, 0):
        w = U z,  zeta = 2 w_2 / (1 + w_1),  t = Im((1 - w_1) / (1 + w_1)).
    The chart sends horizontal vectors at base isometrically onto the first
    layer (E1 -> d/dx, E2 -> d/dy) and is conformal for the sub-Riemannian
    metrics, with the group law of :mod:`srqr.heisenberg`.
    """

    base: SpherePoint
    antipode_tol: float = 1e-12
    U: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.base.n != 1:
            raise ContractViolation("the Heisenberg chart is implemented for n = 1")
        U = pole_unitary(self.base.z)
        U.setflags(write=False)
        object.__setattr__(self, "U", U)

    def forward(self, z):
        z = np.asarray(z.z if isinstance(z, SpherePoint) else z, dtype=complex)
        w = z @ self.U.T
        den = 1.0 + w[..., 0]
        if np.any(np.abs(den) < self.antipode_tol):
            raise ChartDomainError("point is the antipode of the chart base")
        zeta = 2.0 * w[..., 1] / den
        t = np.imag((1.0 - w[..., 0]) / den)
        return np.stack([zeta.real, zeta.imag, t], axis=-1)

    def inverse(self, p):
        p = np.asarray(p, dtype=float)
        zeta = p[..., 0] + 1j * p[..., 1]
        Q = 0.25 * np.abs(zeta) ** 2 + 1j * p[..., 2]
        w1 = (1.0 - Q) / (1.0 + Q)
        w2 = zeta / (1.0 + Q)
        w = np.stack([w1, w2], axis=-1)
        return w @ np.conj(self.U)

    @staticmethod
    def dilate(p, h):
        return heisenberg.dilate(p, h)

    def pi_h(self, z, h):
        """Dilated chart delta_h o forward."""
        return heisenberg.dilate(self.forward(z), h)

    def pi_h_inverse(self, p, h):
        return self.inverse(heisenberg.dilate(p, 1.0 / h))


def heisenberg_chart(base):
    if not isinstance(base, SpherePoint):
        base = SpherePoint(base)
    return HeisenbergChart(base)


def gauge_sphere(center, radius, n_beta=16, n_gamma=16):
    """Points w of S^3 with gauge distance |1 - <w, c>|^{1/2} = radius.

    In coordinates where c = (1, 0): w_1 = 1 - radius^2 e^{i beta} with
    cos(beta) >= radius^2 / 2 and w_2 = |w_2| e^{i gamma}.
    """
    c = np.asarray(center.z if isinstance(center, SpherePoint) else center, dtype=complex)
    R2 = float(radius) ** 2
    if R2 > 2.0:
        raise ContractViolation("gauge radius exceeds the diameter sqrt(2)")
    bmax = np.arccos(min(1.0, 0.5 * R2))
    beta = np.linspace(-bmax, bmax, n_beta)
    gamma = 2.0 * np.pi * (np.arange(n_gamma) + 0.5) / n_gamma
    B, G = np.meshgrid(beta, gamma, indexing="ij")
    w1 = 1.0 - R2 * np.exp(1j * B)
    w2 = np.sqrt(np.maximum(1.0 - np.abs(w1) ** 2, 0.0)) * np.exp(1j * G)
    w = np.stack([w1.ravel(), w2.ravel()], axis=-1)
    U = pole_unitary(c)
    return normalize(w @ np.conj(U))


def gauge_ball(center, radius, n_r=6, n_beta=12, n_gamma=12):
    """Deterministic samples of the closed gauge ball (centre included)."""
    c = np.asarray(center.z if isinstance(center, SpherePoint) else center, dtype=complex)
    pts = [c[None]]
    for s in np.linspace(radius / n_r, radius, n_r):
        pts.append(gauge_sphere(c, s, n_beta, n_gamma))
    return np.concatenate(pts, axis=0)
