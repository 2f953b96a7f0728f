"""Contact vector fields on S^3 generated by potentials, their flows, and the
interpolant between a multi-twist and an isometry.

A contact field W with potential rho = alpha(W) is
    W = i (Zbar rho) Z - i (Z rho) Zbar + rho T,
with Z = conj(z_2) d/dz_1 - conj(z_1) d/dz_2 and T = i z.  As a complex
2-vector, dz/ds = i (Zbar rho) (conj z_2, -conj z_1) + rho i z.

The twist potential rho = ln(a) sum r_j^2 theta_j generates
W = ln(a) sum theta_j d/dtheta_j, whose time-s flow H_s multiplies every
angle by a^s; H_1 = F_a on the angular domain |theta_j| < pi / a.
"""
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import kernels
from .manifolds import (
    ContractViolation, SpherePoint, gauge, gauge_sphere, normalize, on_branch_locus, polar,
)
from .map_zoo import MapHandle, horizontal_matrix, multi_twist

FD4 = 1e-3


class FlowDomainError(ValueError):
    pass


@dataclass(frozen=True)
class Potential:
    """Scalar potential with optional closed-form Zbar-derivative."""

    fn: Callable
    zbar: Optional[Callable] = None
    domain: Optional[Callable] = None
    tag: str = "generic"
    params: dict = field(default_factory=dict)

    def __call__(self, z):
        z = np.asarray(z, dtype=complex)
        if self.domain is not None and not np.all(self.domain(z)):
            raise FlowDomainError(f"potential {self.tag} evaluated outside its domain")
        return self.fn(z)

    def zbar_derivative(self, z):
        """Zbar rho = z_2 d rho / d conj z_1 - z_1 d rho / d conj z_2."""
        z = np.asarray(z, dtype=complex)
        if self.zbar is not None:
            return self.zbar(z)
        return _zbar_fd(self.fn, z)


def _zbar_fd(fn, z, h=FD4):
    """4th-order central differences of the homogeneous extension rho(z/|z|)."""
    def ext(w):
        return fn(w / np.linalg.norm(w, axis=-1, keepdims=True))

    out = np.zeros(z.shape[:-1], dtype=complex)
    dbar = []
    for j in range(2):
        parts = []
        for unit in (1.0, 1j):
            e = np.zeros(z.shape, dtype=complex)
            e[..., j] = unit
            d = (-ext(z + 2 * h * e) + 8 * ext(z + h * e)
                 - 8 * ext(z - h * e) + ext(z - 2 * h * e)) / (12 * h)
            parts.append(d)
        # d/d conj z = (d/dx + i d/dy) / 2
        dbar.append(0.5 * (parts[0] + 1j * parts[1]))
    out = z[..., 1] * dbar[0] - z[..., 0] * dbar[1]
    return out


def constant_potential(c):
    c = float(c)
    return Potential(lambda z: np.full(np.asarray(z).shape[:-1], c),
                     lambda z: np.zeros(np.asarray(z).shape[:-1], dtype=complex),
                     tag="constant", params={"c": c})


def _angular_domain(z):
    r, th = polar(z)
    return (~on_branch_locus(z)) & np.all(np.abs(th) < np.pi, axis=-1)


def twist_potential(a):
    """rho(z) = ln(a) sum r_j^2 theta_j on the angular domain."""
    a = int(a)
    if a < 2:
        raise ContractViolation("the twist potential needs a >= 2")
    lna = np.log(a)

    def fn(z):
        r, th = polar(z)
        return lna * np.sum(r * r * th, axis=-1)

    def zbar(z):
        _, th = polar(z)
        return lna * z[..., 0] * z[..., 1] * (th[..., 0] - th[..., 1])

    return Potential(fn, zbar, _angular_domain, tag="twist", params={"a": a})


@dataclass(frozen=True)
class Bump:
    """C-infinity profile of the gauge distance d to ``center``.

    phi = 0 for d <= d_in and phi = 1 for d >= d_out.
    """

    center: np.ndarray
    d_in: float
    d_out: float
    delta: float

    def __call__(self, z):
        d = gauge(np.asarray(z, dtype=complex), self.center)
        val, _ = kernels._smoothstep_np((d - self.d_in) / (self.d_out - self.d_in))
        return val


def bump(K_outer, B_inner, delta=None):
    """Bump equal to 1 near the point set ``K_outer`` and 0 near the gauge ball.

    ``B_inner`` is (center, radius).  ``delta`` defaults to gap / 8.
    """
    center, r_in = B_inner
    center = np.asarray(center.z if isinstance(center, SpherePoint) else center, dtype=complex)
    K = np.atleast_2d(np.asarray(K_outer, dtype=complex))
    dK = float(np.min(gauge(K, center)))
    gap = dK - float(r_in)
    if delta is None:
        delta = gap / 8.0
    if gap <= 0.0 or gap < 4.0 * delta:
        raise ContractViolation(f"bump gap {gap:.3e} is below 4 delta = {4 * delta:.3e}")
    return Bump(center, float(r_in) + delta, dK - delta, float(delta))


@dataclass(frozen=True)
class ContactField:
    potential: Potential
    bump: Optional[Bump] = None

    def __call__(self, z):
        return self.evaluate(z)

    def rho(self, z):
        r = self.potential(z)
        if self.bump is not None:
            r = r * self.bump(z)
        return r

    def evaluate(self, z):
        z = np.asarray(z, dtype=complex)
        if self._kernel_args() is not None:
            lna, c, d_in, d_out = self._kernel_args()
            return kernels._field_np(z, lna, c, d_in, d_out)
        rho = self.potential(z)
        zr = self.potential.zbar_derivative(z)
        if self.bump is not None:
            phi = self.bump(z)
            zphi = _zbar_fd(self.bump, z)
            zr = phi * zr + rho * zphi
            rho = phi * rho
        w = np.empty_like(z)
        w[..., 0] = 1j * zr * np.conj(z[..., 1]) + 1j * rho * z[..., 0]
        w[..., 1] = -1j * zr * np.conj(z[..., 0]) + 1j * rho * z[..., 1]
        return w

    def _kernel_args(self):
        if self.potential.tag != "twist":
            return None
        lna = np.log(self.potential.params["a"])
        if self.bump is None:
            return lna, np.array([1.0, 0.0], dtype=complex), 0.0, -1.0
        return lna, self.bump.center, self.bump.d_in, self.bump.d_out

    def in_domain(self, z):
        if self.potential.domain is None:
            return np.ones(np.asarray(z).shape[:-1], dtype=bool)
        return self.potential.domain(np.asarray(z, dtype=complex))


def libermann_field(rho, bump_fn=None):
    return ContactField(rho, bump_fn)


@dataclass(frozen=True)
class FlowResult:
    endpoint: np.ndarray
    s: float
    reached: np.ndarray
    steps: np.ndarray
    exited: np.ndarray

    def to_json(self):
        return {
            "s": self.s,
            "endpoint_re": np.real(self.endpoint).tolist(),
            "endpoint_im": np.imag(self.endpoint).tolist(),
            "reached": np.asarray(self.reached).tolist(),
            "steps": np.asarray(self.steps).tolist(),
            "exited": np.asarray(self.exited).tolist(),
        }


def _generic_flow(F, z, s, rtol, h0, max_steps):
    z = np.array(z, dtype=complex)
    n = z.shape[0]
    out = z.copy()
    s_now = np.zeros(n)
    h = np.full(n, min(h0, abs(s)) if s != 0 else 0.0)
    steps = np.zeros(n, dtype=np.int64)
    exited = np.zeros(n, dtype=bool)
    active = np.full(n, abs(s) > 0)
    sgn = 1.0 if s >= 0 else -1.0
    total = abs(s)

    def rk4(x, hh):
        hh = hh[:, None]
        k1 = F.evaluate(x)
        k2 = F.evaluate(x + 0.5 * hh * k1)
        k3 = F.evaluate(x + 0.5 * hh * k2)
        k4 = F.evaluate(x + hh * k3)
        y = x + hh / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        return normalize(y)

    while np.any(active):
        idx = np.nonzero(active)[0]
        h[idx] = np.minimum(h[idx], total - s_now[idx])
        x = out[idx]
        hd = sgn * h[idx]
        big = rk4(x, hd)
        small = rk4(rk4(x, 0.5 * hd), 0.5 * hd)
        err = np.linalg.norm(big - small, axis=-1) / 15.0
        ok = (err <= rtol) | (h[idx] < 1e-12)
        inside = F.in_domain(small)
        leave = ok & ~inside
        exited[idx[leave]] = True
        active[idx[leave]] = False
        acc = ok & inside
        out[idx[acc]] = small[acc]
        s_now[idx[acc]] += h[idx[acc]]
        steps[idx[acc]] += 1
        with np.errstate(divide="ignore"):
            fac = np.where(err == 0, 2.0, 0.9 * (rtol / np.where(err == 0, 1.0, err)) ** 0.2)
        h[idx] *= np.where(acc, np.clip(fac, 0.2, 2.0), np.clip(fac, 0.2, 1.0))
        done = (s_now >= total - 1e-15)
        capped = active & (steps >= max_steps) & ~done
        exited[capped] = True
        active &= ~(done | capped)
    return out, exited, steps, sgn * s_now


def flow(F, p, s, rtol=1e-8, h0=0.05, max_steps=100000):
    """Time-s flow of a contact field by adaptive RK4 with renormalisation.

    ``p`` may be a SpherePoint or an array of points (..., 2).  Trajectories
    leaving the field's domain stop and are flagged in ``exited``.
    """
    z = p.z if isinstance(p, SpherePoint) else np.asarray(p, dtype=complex)
    shape = z.shape[:-1]
    flat = z.reshape(-1, 2)
    if not np.all(F.in_domain(flat)):
        raise FlowDomainError("initial point outside the field domain")
    args = F._kernel_args()
    if args is not None:
        lna, c, d_in, d_out = args
        out, exited, steps, reached = kernels.flow_bundles(
            flat[:, None, :], s, lna, c, d_in, d_out, rtol, h0, max_steps)
        out = out[:, 0, :]
    else:
        out, exited, steps, reached = _generic_flow(F, flat, float(s), rtol, h0, max_steps)
    return FlowResult(out.reshape(z.shape), float(s), reached.reshape(shape),
                      steps.reshape(shape), exited.reshape(shape))


def flow_map(F, s, rtol=1e-8, fd_step=1e-6):
    """MapHandle of the time-s flow with a step-replay finite-difference Jacobian."""
    def fn(z):
        res = flow(F, z, s, rtol)
        if np.any(res.exited):
            raise FlowDomainError("flow left its domain before time s")
        return res.endpoint

    def jac(z, v):
        return _bundle_jacobian(F, s, z, v, rtol, fd_step)

    return MapHandle("flow-defined", {"s": float(s), "potential": F.potential.tag}, fn, jac,
                     lambda z: F.in_domain(z))


def _bundle_jacobian(F, s, z, v, rtol, step):
    """Richardson central differences of the flow map along v.

    The perturbed copies are integrated with the step sequence of the base
    point, so the discrete flow map is differentiated consistently.
    """
    z = np.asarray(z, dtype=complex)
    v = np.broadcast_to(np.asarray(v, dtype=complex), z.shape)
    shape = z.shape
    zf = z.reshape(-1, 2)
    vf = v.reshape(-1, 2)
    offs = np.array([0.0, step, -step, 0.5 * step, -0.5 * step])
    bundle = normalize(zf[:, None, :] + offs[None, :, None] * vf[:, None, :])
    args = F._kernel_args()
    if args is None:
        raise ContractViolation("bundle Jacobian needs a kernel-backed field")
    lna, c, d_in, d_out = args
    out, exited, _, _ = kernels.flow_bundles(bundle, s, lna, c, d_in, d_out, rtol, 0.05, 100000)
    if np.any(exited):
        raise FlowDomainError("flow left its domain during differentiation")
    d1 = (out[:, 1] - out[:, 2]) / (2 * step)
    d2 = (out[:, 3] - out[:, 4]) / step
    return ((4.0 * d2 - d1) / 3.0).reshape(shape)


# ---------------------------------------------------------------------------
# interpolant between F_a and an isometry
# ---------------------------------------------------------------------------

def max_admissible_radius(a, z_prime, iters=20, margin=0.9, samples=(16, 16)):
    """Largest gauge radius R with a * max|theta_j| < pi on the closed ball.

    Bisection over R on sampled balls, then shrunk by ``margin``; this is
    the condition for the twist flow from the ball to exist on [0, 1].
    """
    def ok(R):
        pts = np.concatenate([gauge_sphere(z_prime, R, *samples),
                              gauge_sphere(z_prime, 0.5 * R, *samples)])
        r, th = polar(pts)
        return bool(np.all(r > 1e-8) and np.all(a * np.abs(th) < np.pi))

    lo, hi = 0.0, np.sqrt(2.0) * 0.999
    if ok(hi):
        return margin * hi
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return margin * lo


@dataclass(frozen=True)
class Interpolant:
    """Model interpolant H at the angle-free point z' with radii R > r_K > r'."""

    a: int
    z_prime: np.ndarray
    R: float
    r_K: float
    r_prime: float
    field: ContactField
    R0: float

    def inside(self, w):
        return gauge(np.asarray(w, dtype=complex), self.z_prime) < self.R

    def _moving(self, w, pad=0.0):
        # the field vanishes identically where the bump is zero
        d = gauge(np.asarray(w, dtype=complex), self.z_prime)
        return (d < self.R) & (d > self.field.bump.d_in - pad)

    def evaluate(self, w, rtol=1e-8):
        w = np.asarray(w, dtype=complex)
        out = multi_twist(self.a).fn(w)
        ins = self.inside(w)
        out[ins] = w[ins]
        ins = self._moving(w)
        if np.any(ins):
            res = flow(self.field, w[ins], 1.0, rtol)
            if np.any(res.exited):
                raise FlowDomainError("interpolating flow left the angular domain")
            out[ins] = res.endpoint
        return out

    def jac(self, w, v, rtol=1e-8, step=1e-6):
        w = np.asarray(w, dtype=complex)
        v = np.broadcast_to(np.asarray(v, dtype=complex), w.shape)
        out = multi_twist(self.a).jac(w, v)
        ins = self.inside(w)
        out[ins] = v[ins]
        ins = self._moving(w, pad=1e-4)
        if np.any(ins):
            out[ins] = _bundle_jacobian(self.field, 1.0, w[ins], v[ins], rtol, step)
        return out


def model_interpolant(a, z_prime, R, inner_fraction=0.5, n_samples=24, n_times=11):
    """Build the interpolant around the point z' = (r_1, r_2) with theta = 0."""
    zp = np.asarray(z_prime, dtype=complex)
    R0 = max_admissible_radius(a, zp)
    if R > R0:
        raise ContractViolation(f"R = {R:.4g} exceeds the largest admissible radius R0 = {R0:.4g}")
    # K: the track of the ball boundary under the unmodified twist flow
    boundary = gauge_sphere(zp, R, n_samples, n_samples)
    r, th = polar(boundary)
    K = []
    for s in np.linspace(0.0, 1.0, n_times):
        K.append(r * np.exp(1j * th * a ** s))
    K = np.concatenate(K)
    r_K = float(np.min(gauge(K, zp)))
    r_prime = inner_fraction * r_K
    b = bump(K, (zp, r_prime))
    field = ContactField(twist_potential(a), b)
    return Interpolant(int(a), zp, float(R), r_K, r_prime, field, R0)


def trap_interpolant(a, z_star, R, inner_fraction=0.5, model=None):
    """G_1 = R_{a theta*} o H o R_{-theta*}, equal to F_a off B(z*, R).

    On B'(z*, r') the map is the rotation R_{(a-1) theta*}.  Returns the
    handle, the ball B' as (center, radius) and diagnostics.
    """
    z = np.asarray(z_star.z if isinstance(z_star, SpherePoint) else z_star, dtype=complex)
    if on_branch_locus(z):
        raise ContractViolation("z* lies on the branch locus")
    r, th = polar(z)
    zp = r.astype(complex)
    if model is None:
        model = model_interpolant(a, zp, R, inner_fraction)
    back = np.exp(-1j * th)
    fwd = np.exp(1j * a * th)

    def fn(w):
        return model.evaluate(np.asarray(w) * back) * fwd

    def jac(w, v):
        return model.jac(np.asarray(w) * back, np.asarray(v) * back) * fwd

    def domain(w):
        return ~on_branch_locus(w)

    G1 = MapHandle("interpolant", {"a": int(a), "z_star": z, "R": float(R),
                                   "r_prime": model.r_prime}, fn, jac, domain,
                   extras={"model": model, "theta": th})
    B_prime = (z, model.r_prime)
    diag = interpolant_diagnostics(G1, z, model)
    return G1, B_prime, diag


def interpolant_diagnostics(G1, z, model, n=8):
    """sup / inf horizontal singular values over the interpolation annulus."""
    radii = np.linspace(model.r_prime * 1.05, model.R * 0.98, 5)
    lam_max, lam_min = 0.0, np.inf
    rows = []
    for s in radii:
        pts = gauge_sphere(z, s, n, n)
        H, _ = horizontal_matrix(G1, pts)
        sv = np.linalg.svd(H, compute_uv=False)
        rows.append({"radius": float(s), "sup_lambda_plus": float(sv[:, 0].max()),
                     "inf_lambda_minus": float(sv[:, -1].min())})
        lam_max = max(lam_max, float(sv[:, 0].max()))
        lam_min = min(lam_min, float(sv[:, -1].min()))
    return {"R": model.R, "R0": model.R0, "r_K": model.r_K, "r_prime": model.r_prime,
            "annulus": rows, "sup_lambda_plus": lam_max, "inf_lambda_minus": lam_min,
            "distortion": lam_max / lam_min if lam_min > 0 else np.inf}
