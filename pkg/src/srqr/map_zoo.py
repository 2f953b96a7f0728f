"""Closed-form self-maps of S^{2n+1} and lens spaces.

A :class:`MapHandle` evaluates on complex arrays of shape (..., n+1) and, when
available, carries a closed-form pushforward ``jac(z, v)`` acting on complex
tangent vectors.  Handles with ``lens`` set map into the lens space: their
output is the canonical representative of the image orbit.
"""
import itertools
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .manifolds import (
    BRANCH_TOL, ContractViolation, HorizontalVector, LensPoint, LensSpec, SpherePoint,
    alpha, hermitian, horizontal_coords, horizontal_frame, horizontal_project_c,
    lens_canonical, normalize, on_branch_locus, pole_unitary, polar, reeb_c, to_complex,
    to_real,
)

FD_STEP = 1e-6
CONTACT_KERNEL_TOL = 1e-6


class DomainError(ValueError):
    """Evaluation outside the smooth domain of a map."""


class NotContact(ValueError):
    """The pushforward does not preserve the horizontal bundle."""


class InfiniteFamily(ValueError):
    """Preimages of a branch-locus point form a positive-dimensional set."""


@dataclass(frozen=True)
class MapHandle:
    """Self-map of the sphere (or into a lens space) with optional Jacobian.

    ``parts`` lists the factors of a composite in application order.
    """

    kind: str
    params: dict
    fn: Callable
    jac: Optional[Callable] = None
    domain: Optional[Callable] = None
    parts: tuple = ()
    lens: Optional[LensSpec] = None
    extras: dict = field(default_factory=dict, compare=False)

    def __call__(self, z):
        if isinstance(z, (SpherePoint, LensPoint)):
            z = z.z if isinstance(z, SpherePoint) else z.representative.z
            return SpherePoint(self.evaluate(z))
        return self.evaluate(z)

    def evaluate(self, z):
        out = normalize(self.fn(np.asarray(z, dtype=complex)))
        if self.lens is not None:
            out = lens_canonical(out, self.lens)
        return out

    def in_domain(self, z):
        z = np.asarray(z, dtype=complex)
        if self.domain is None:
            return np.ones(z.shape[:-1], dtype=bool)
        return self.domain(z)

    def to_json(self):
        d = {"kind": self.kind, "params": _jsonable(self.params)}
        if self.parts:
            d["parts"] = [p.to_json() for p in self.parts]
        if self.lens is not None:
            d["lens"] = self.lens.to_json()
        return d


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, complex):
        return {"re": x.real, "im": x.imag}
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    return x


# ---------------------------------------------------------------------------
# families
# ---------------------------------------------------------------------------

def identity():
    return MapHandle("identity", {}, lambda z: z, jac=lambda z, v: v)


def multi_twist(a):
    """F_a(r e^{i theta}) = r e^{i a theta}, coordinatewise."""
    a = int(a)
    if a == 0:
        raise ContractViolation("the twist order must be nonzero")

    def fn(z):
        r, th = polar(z)
        return r * np.exp(1j * a * th)

    def jac(z, v):
        r, th = polar(z)
        w = np.asarray(v) * np.exp(-1j * th)
        return np.exp(1j * a * th) * (w.real + 1j * a * w.imag)

    def domain(z):
        return ~on_branch_locus(z)

    return MapHandle("multi-twist", {"a": a}, fn, jac, domain)


def rotation(angles):
    """R_phi(z) = (e^{i phi_1} z_1, ..., e^{i phi_{n+1}} z_{n+1})."""
    ph = np.exp(1j * np.asarray(angles, dtype=float))
    return MapHandle("rotation", {"angles": [float(x) for x in np.ravel(angles)]},
                     lambda z: z * ph, lambda z, v: np.asarray(v) * ph)


def antipodal():
    return MapHandle("antipodal", {}, lambda z: -z, lambda z, v: -np.asarray(v))


def unitary(U, tag="unitary"):
    U = np.asarray(U, dtype=complex)
    return MapHandle(tag, {"U": U}, lambda z: z @ U.T, lambda z, v: np.asarray(v) @ U.T)


def _lox_den(z, d):
    return np.sinh(d) * z[..., 0] + np.cosh(d)


def loxodromic(d):
    """T_d(z) = (cosh d z_1 + sinh d, z_2, ...) / (sinh d z_1 + cosh d)."""
    d = float(d)

    def fn(z):
        den = _lox_den(z, d)
        if np.any(np.abs(den) < 1e-14):
            raise DomainError("loxodromic evaluated at its pole")
        out = z / den[..., None]
        out[..., 0] = (np.cosh(d) * z[..., 0] + np.sinh(d)) / den
        return out

    def jac(z, v):
        den = _lox_den(z, d)
        v = np.asarray(v)
        out = v / den[..., None] - z * (np.sinh(d) * v[..., :1]) / den[..., None] ** 2
        out[..., 0] = v[..., 0] / den ** 2
        return out

    return MapHandle("loxodromic", {"d": d}, fn, jac)


def compose(*maps):
    """Composite applying ``maps`` left to right: compose(f, g)(z) = g(f(z))."""
    flat = []
    for m in maps:
        flat.extend(m.parts if m.kind == "composite" else (m,))
    flat = tuple(flat)

    def fn(z):
        for m in flat:
            z = m.evaluate(z)
        return z

    def chain(z, v):
        for m in flat:
            v = push_c(m, z, v)
            z = m.evaluate(z)
        return v

    jac = chain if all(m.jac is not None for m in flat) else None

    def domain(z):
        ok = np.ones(np.asarray(z).shape[:-1], dtype=bool)
        for m in flat:
            ok &= m.in_domain(z)
            z = m.evaluate(z)
        return ok

    return MapHandle("composite", {}, fn, jac, domain, parts=flat, lens=flat[-1].lens)


@dataclass(frozen=True)
class Inversion:
    """Data of the inversion swapping a conformal ball with its complement.

    The ball is {w : Re C(w)_1 > 0} with C = T_d o U; it equals the round set
    |w'_1 - coth(2|d|)| < 1/sinh(2|d|) in the rotated coordinate w' = U w,
    centred at ``center``.  It lies between the gauge balls of radii
    ``inner_gauge_radius`` and ``gauge_radius`` = (2 (1 - tanh 2|d|))^{1/4}.
    """

    center: np.ndarray
    d: float
    U: np.ndarray
    gauge_radius: float

    @property
    def inner_gauge_radius(self):
        """Radius of the largest gauge ball about ``center`` inside the swapped set.

        The nearest boundary point is w'_1 = tanh|d|, so this is (1 - tanh|d|)^{1/2}.
        """
        return float(np.sqrt(1.0 - np.tanh(abs(self.d))))

    def inside(self, w):
        """Membership in the swapped ball."""
        c = _cayley(np.asarray(w, dtype=complex), self.U, self.d)
        return c[..., 0].real > 0.0


def _cayley(w, U, d):
    y = w @ U.T
    den = _lox_den(y, d)
    return np.concatenate([((np.cosh(d) * y[..., 0] + np.sinh(d)) / den)[..., None],
                           y[..., 1:] / den[..., None]], axis=-1)


GAUGE_DIAMETER = np.sqrt(2.0)


def inversion(center, rho):
    """Conformal involution iota = C^{-1} o iota_0 o C swapping a ball with its complement.

    ``rho`` bounds the gauge radius of the swapped ball, which is centred at
    ``center``; the achieved radius is returned in ``extras``.
    """
    c = np.asarray(center.z if isinstance(center, SpherePoint) else center, dtype=complex)
    c = c / np.linalg.norm(c)
    rho = float(rho)
    if not (0.0 < rho < 0.5 * GAUGE_DIAMETER):
        raise ContractViolation("inversion ball radius must lie in (0, diameter / 2)")
    # the swapped set has gauge radius (2 (1 - k))^{1/4} with k = tanh(2|d|)
    k = 1.0 - 0.5 * rho ** 4
    d = -0.5 * np.arctanh(k)
    U = pole_unitary(c)
    Uh = np.conj(U.T)
    T = loxodromic(d)
    Tinv = loxodromic(-d)

    def fn(z):
        y = T.fn(np.asarray(z) @ U.T)
        return Tinv.fn(-y) @ Uh.T

    def jac(z, v):
        y0 = np.asarray(z) @ U.T
        v0 = np.asarray(v) @ U.T
        y1 = T.fn(y0)
        v1 = T.jac(y0, v0)
        v2 = Tinv.jac(-y1, -v1)
        return v2 @ Uh.T

    data = Inversion(c, d, U, (2.0 * (1.0 - k)) ** 0.25)
    return MapHandle("inversion", {"center": c, "rho": rho, "d": d}, fn, jac,
                     extras={"ball": data})


def make_conformal(kind, **params):
    if kind == "rotation":
        return rotation(params["angles"])
    if kind == "loxodromic":
        return loxodromic(params["d"])
    if kind == "inversion":
        return inversion(params["center"], params["rho"])
    if kind == "antipodal":
        return antipodal()
    raise ContractViolation(f"unknown conformal family {kind!r}")


def lens_multi_twist(a, spec):
    """f_a([z]) = F_a(z) from L_{p,q} to the sphere, and pi o f_a.

    The projected self-map of the lens space is stored in ``extras['projected']``.
    """
    a = int(a)
    if a % spec.p != 0:
        raise ContractViolation(
            f"p = {spec.p} does not divide a = {a}: F_a is not constant on the orbits "
            "of the lens rotation")
    F = multi_twist(a)
    fa = MapHandle("lens-induced", {"a": a, "spec": spec.to_json()}, F.fn, F.jac, F.domain)
    proj = MapHandle("lens-induced", {"a": a, "spec": spec.to_json(), "projected": True},
                     F.fn, F.jac, F.domain, lens=spec)
    object.__setattr__(fa, "extras", {"projected": proj})
    return fa


def from_json(d):
    kind = d["kind"]
    p = d.get("params", {})
    if kind == "composite":
        return compose(*[from_json(x) for x in d["parts"]])
    if kind == "identity":
        return identity()
    if kind == "multi-twist":
        return multi_twist(p["a"])
    if kind == "rotation":
        return rotation(p["angles"])
    if kind == "loxodromic":
        return loxodromic(p["d"])
    if kind == "antipodal":
        return antipodal()
    if kind == "inversion":
        ce = p["center"]
        center = np.array([x["re"] + 1j * x["im"] if isinstance(x, dict) else x for x in ce])
        return inversion(center, p["rho"])
    if kind == "lens-induced":
        spec = LensSpec(p["spec"]["p"], tuple(p["spec"]["q"]))
        fa = lens_multi_twist(p["a"], spec)
        return fa.extras["projected"] if p.get("projected") else fa
    raise ContractViolation(f"cannot rebuild map kind {kind!r} from JSON")


# ---------------------------------------------------------------------------
# differentials
# ---------------------------------------------------------------------------

def _fd_push(m, z, v, step):
    def curve(t):
        return normalize(z + t * v)

    def diff(h):
        return (m.fn(curve(h)) - m.fn(curve(-h))) / (2.0 * h)

    # Richardson on the central difference
    return (4.0 * diff(0.5 * step) - diff(step)) / 3.0


def push_c(m, z, v, step=FD_STEP):
    """Pushforward of complex tangent vectors v at z (arrays), unprojected.

    Lens handles map to the canonical representative, so the vector is
    carried along by the same deck rotation.
    """
    z = np.asarray(z, dtype=complex)
    v = np.asarray(v, dtype=complex)
    if m.jac is not None:
        w = m.jac(z, v)
        raw = m.fn(z)
    else:
        w = _fd_push(m, z, v, step)
        raw = m.fn(z)
    nrm = np.linalg.norm(raw, axis=-1, keepdims=True)
    raw = raw / nrm
    w = w / nrm
    w = w - np.real(hermitian(w, raw))[..., None] * raw
    if m.lens is not None:
        k = _deck_power(raw, lens_canonical(raw, m.lens), m.lens)
        w = w * m.lens.phases(1) ** np.asarray(k)[..., None]
    return w


def _deck_power(raw, canon, spec):
    orbit = spec.orbit(raw)
    err = np.max(np.abs(orbit - canon[None]), axis=-1)
    return np.argmin(err, axis=0)


def pushforward(m, p, v):
    """Horizontal pushforward m_* v at p as a :class:`HorizontalVector`."""
    if not m.in_domain(p.z):
        raise DomainError(f"{m.kind} is not smooth at this point (branch locus)")
    w = push_c(m, p.z, v.complex)
    q = SpherePoint(m.evaluate(p.z))
    w = horizontal_project_c(q.z, w)
    return HorizontalVector(to_real(w), q)


def horizontal_matrix(m, z):
    """Matrix of m_* : H_z -> H_{m(z)} in the frames of :func:`horizontal_frame`.

    Vectorised over z of shape (..., n+1); returns (..., 2n, 2n) and the image.
    """
    z = np.asarray(z, dtype=complex)
    fr = horizontal_frame(z)  # (..., 2n, n+1)
    zz = np.broadcast_to(z[..., None, :], fr.shape)
    w = push_c(m, zz, fr)
    q = m.evaluate(z)
    coords = horizontal_coords(np.broadcast_to(q[..., None, :], w.shape), w)  # (..., 2n, 2n)
    return np.swapaxes(coords, -1, -2), q


def pullback_contact_factor(m, p, tol=CONTACT_KERNEL_TOL):
    """The scalar c with m^* alpha = c alpha at p."""
    z = p.z if isinstance(p, SpherePoint) else np.asarray(p, dtype=complex)
    if not np.all(m.in_domain(z)):
        raise DomainError(f"{m.kind} is not smooth at this point")
    q = m.evaluate(z)
    T = reeb_c(z)
    c = alpha(q, push_c(m, z, T))
    fr = horizontal_frame(z)
    zz = np.broadcast_to(z[..., None, :], fr.shape)
    w = push_c(m, zz, fr)
    res = np.abs(alpha(np.broadcast_to(q[..., None, :], w.shape), w))
    scale = np.maximum(np.linalg.norm(w, axis=-1), 1.0)
    if np.any(res > tol * scale):
        raise NotContact(f"horizontal kernel not preserved (residual {np.max(res / scale):.3e})")
    return float(c) if np.ndim(c) == 0 else c


def twist_preimages(a, target, spec=None):
    """All F_a-preimages of ``target``; with ``spec``, one representative per orbit."""
    a = int(a)
    z = target.z if isinstance(target, SpherePoint) else np.asarray(target, dtype=complex)
    if on_branch_locus(z):
        raise InfiniteFamily("target lies on the branch locus: preimages form circles")
    r, th = polar(z)
    pts = []
    for ks in itertools.product(range(abs(a)), repeat=z.size):
        ang = (th + 2.0 * np.pi * np.asarray(ks)) / a
        pts.append(r * np.exp(1j * ang))
    pts = np.array(pts)
    if spec is None:
        return [SpherePoint(x) for x in pts]
    canon = lens_canonical(pts, spec)
    reps = []
    for c in canon:
        if not any(np.max(np.abs(c - o)) < 1e-9 for o in reps):
            reps.append(c)
    return [LensPoint(SpherePoint(c), spec) for c in reps]


def to_handle_vector(p, v):
    """Convenience: complex tangent vector wrapped as a HorizontalVector."""
    return HorizontalVector(to_real(v), p)


__all__ = [
    "MapHandle", "DomainError", "NotContact", "InfiniteFamily", "Inversion",
    "identity", "multi_twist", "rotation", "antipodal", "unitary", "loxodromic", "compose",
    "inversion", "make_conformal", "lens_multi_twist", "from_json", "push_c", "pushforward",
    "horizontal_matrix", "pullback_contact_factor", "twist_preimages", "to_complex",
    "BRANCH_TOL",
]
