"""Compiled hot loops with matching vectorised numpy implementations.

Two kernels dominate the run time of the experiments:

* the closed-form sub-Riemannian distance on S^3, which reduces to a
  monotone one-dimensional phase equation per pair of points;
* the adaptive RK4 integration of the contact field generated by the
  bump-modified twist potential.

Each kernel has a numba version (``*_nb``) and a numpy version (``*_np``);
the public wrappers pick one through :func:`srqr._accel.numba_enabled`.
"""
import numpy as np

from ._accel import njit, numba_enabled, prange

BISECT_ITERS = 80
BRANCH_EPS = 1e-8


# ---------------------------------------------------------------------------
# closed-form sphere distance
# ---------------------------------------------------------------------------
#
# Geodesics of the standard sub-Riemannian S^3 leaving x with unit horizontal
# velocity v are  g(s) = e^{i lam s} (cos(w s) x + sin(w s)/w (v - i lam x)),
# w = sqrt(1 + lam^2), minimising up to w s = pi.  With k = lam / w and
# u = w s the projection c = <g(s), x> equals e^{iku} (cos u - i k sin u) and
# the length is s = u sqrt(1 - k^2).  For |arg c| in [0, pi] the relevant
# solutions have k <= 0 and are swept monotonically by sigma in [0, 2].


@njit(cache=True)
def _phase_nb(sig, m, one_minus_m, sp):
    if sig <= 1.0:
        tau = sig
        branch = 1.0
    else:
        tau = 2.0 - sig
        branch = -1.0
    k = -m * tau
    one_minus_absk = one_minus_m + m * (1.0 - tau)
    one_minus_k2 = one_minus_absk * (1.0 + m * tau)
    root = np.sqrt(one_minus_k2)
    sin_u = sp / root
    if sin_u > 1.0:
        sin_u = 1.0
    cos2 = m * m * (1.0 - tau) * (1.0 + tau) / one_minus_k2
    if cos2 < 0.0:
        cos2 = 0.0
    cos_u = branch * np.sqrt(cos2)
    u = np.arctan2(sin_u, cos_u)
    phase = k * u - np.arctan2(k * sin_u, cos_u)
    return phase, u * root


@njit(cache=True, parallel=True)
def sphere_distance_nb(m, sp, psi):
    n = m.shape[0]
    out = np.empty(n)
    for i in prange(n):
        mi = m[i]
        spi = sp[i]
        ps = psi[i]
        if mi <= 0.0:
            out[i] = 0.5 * np.pi
        elif spi <= 0.0:
            out[i] = np.sqrt(ps * (2.0 * np.pi - ps))
        else:
            out[i] = _bisect_nb(mi, spi, ps)
    return out


@njit(cache=True)
def _bisect_nb(mi, spi, ps):
    one_minus_m = spi * spi / (1.0 + mi)
    lo = 0.0
    hi = 2.0
    for _ in range(BISECT_ITERS):
        mid = 0.5 * (lo + hi)
        ph, _d = _phase_nb(mid, mi, one_minus_m, spi)
        if ph < ps:
            lo = mid
        else:
            hi = mid
    _ph, d = _phase_nb(0.5 * (lo + hi), mi, one_minus_m, spi)
    return d


def _phase_np(sig, m, one_minus_m, sp):
    first = sig <= 1.0
    tau = np.where(first, sig, 2.0 - sig)
    branch = np.where(first, 1.0, -1.0)
    k = -m * tau
    one_minus_k2 = (one_minus_m + m * (1.0 - tau)) * (1.0 + m * tau)
    root = np.sqrt(one_minus_k2)
    sin_u = np.minimum(sp / root, 1.0)
    cos2 = np.maximum(m * m * (1.0 - tau) * (1.0 + tau) / one_minus_k2, 0.0)
    cos_u = branch * np.sqrt(cos2)
    u = np.arctan2(sin_u, cos_u)
    phase = k * u - np.arctan2(k * sin_u, cos_u)
    return phase, u * root


def sphere_distance_np(m, sp, psi):
    m = np.asarray(m, dtype=float)
    sp = np.asarray(sp, dtype=float)
    psi = np.asarray(psi, dtype=float)
    out = np.empty_like(m)
    zero_m = m <= 0.0
    fiber = (~zero_m) & (sp <= 0.0)
    gen = ~(zero_m | fiber)
    out[zero_m] = 0.5 * np.pi
    out[fiber] = np.sqrt(psi[fiber] * (2.0 * np.pi - psi[fiber]))
    if np.any(gen):
        mg, sg, pg = m[gen], sp[gen], psi[gen]
        omm = sg * sg / (1.0 + mg)
        lo = np.zeros_like(mg)
        hi = np.full_like(mg, 2.0)
        for _ in range(BISECT_ITERS):
            mid = 0.5 * (lo + hi)
            ph, _d = _phase_np(mid, mg, omm, sg)
            below = ph < pg
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        _ph, d = _phase_np(0.5 * (lo + hi), mg, omm, sg)
        out[gen] = d
    return out


def sphere_distance_invariants(m, sp, psi):
    """Distance from the reduced invariants ``|c|``, ``sqrt(1-|c|^2)``, ``|arg c|``."""
    m = np.ascontiguousarray(m, dtype=float).ravel()
    sp = np.ascontiguousarray(sp, dtype=float).ravel()
    psi = np.ascontiguousarray(psi, dtype=float).ravel()
    if numba_enabled():
        return sphere_distance_nb(m, sp, psi)
    return sphere_distance_np(m, sp, psi)


# ---------------------------------------------------------------------------
# contact flow of the bump-modified twist potential (n = 1)
# ---------------------------------------------------------------------------
#
# Potential rho' = phi * rho with rho = ln(a) (r1^2 th1 + r2^2 th2) and phi a
# C-infinity smoothstep of the gauge distance to a centre c.  The generated
# field, written as a complex 2-vector, is
#     W = i (Zbar rho') (conj z2, -conj z1) + rho' i z .
# phi = 0 when the gauge distance is <= d_in, phi = 1 when >= d_out; taking
# d_out <= 0 switches the bump off.


@njit(cache=True)
def _smoothstep_nb(x):
    if x <= 0.0:
        return 0.0, 0.0
    if x >= 1.0:
        return 1.0, 0.0
    f = np.exp(-1.0 / x)
    g = np.exp(-1.0 / (1.0 - x))
    den = f + g
    df = f / (x * x)
    dg = -g / ((1.0 - x) * (1.0 - x))
    val = f / den
    der = (df * den - f * (df + dg)) / (den * den)
    return val, der


@njit(cache=True)
def _field_nb(z1, z2, lna, c1, c2, d_in, d_out):
    r1sq = z1.real * z1.real + z1.imag * z1.imag
    r2sq = z2.real * z2.real + z2.imag * z2.imag
    th1 = np.arctan2(z1.imag, z1.real)
    th2 = np.arctan2(z2.imag, z2.real)
    rho = lna * (r1sq * th1 + r2sq * th2)
    zbar_rho = lna * z1 * z2 * (th1 - th2)
    phi = 1.0
    zbar_phi = 0.0 + 0.0j
    if d_out > 0.0:
        q = 1.0 - (z1 * np.conj(c1) + z2 * np.conj(c2))
        s = abs(q)
        d = np.sqrt(s)
        x = (d - d_in) / (d_out - d_in)
        phi, dphi = _smoothstep_nb(x)
        if dphi != 0.0:
            # d/dzbar_j of sqrt|q| = -q c_j / (4 d s)
            fac = dphi / (d_out - d_in) * (-q / (4.0 * d * s))
            zbar_phi = fac * (z2 * c1 - z1 * c2)
    zr = phi * zbar_rho + rho * zbar_phi
    rp = phi * rho
    w1 = 1j * zr * np.conj(z2) + 1j * rp * z1
    w2 = -1j * zr * np.conj(z1) + 1j * rp * z2
    return w1, w2


@njit(cache=True)
def _rk4_nb(z1, z2, h, lna, c1, c2, d_in, d_out):
    a1, a2 = _field_nb(z1, z2, lna, c1, c2, d_in, d_out)
    b1, b2 = _field_nb(z1 + 0.5 * h * a1, z2 + 0.5 * h * a2, lna, c1, c2, d_in, d_out)
    e1, e2 = _field_nb(z1 + 0.5 * h * b1, z2 + 0.5 * h * b2, lna, c1, c2, d_in, d_out)
    f1, f2 = _field_nb(z1 + h * e1, z2 + h * e2, lna, c1, c2, d_in, d_out)
    n1 = z1 + h / 6.0 * (a1 + 2.0 * b1 + 2.0 * e1 + f1)
    n2 = z2 + h / 6.0 * (a2 + 2.0 * b2 + 2.0 * e2 + f2)
    nrm = np.sqrt(abs(n1) ** 2 + abs(n2) ** 2)
    return n1 / nrm, n2 / nrm


@njit(cache=True)
def _left_domain_nb(o1, o2, n1, n2):
    # an angle jumping across the cut at +-pi, or a modulus hitting the
    # branch locus, ends the trajectory
    if abs(n1) < BRANCH_EPS or abs(n2) < BRANCH_EPS:
        return True
    t_old = np.arctan2(o1.imag, o1.real)
    t_new = np.arctan2(n1.imag, n1.real)
    if abs(t_new - t_old) > np.pi:
        return True
    t_old = np.arctan2(o2.imag, o2.real)
    t_new = np.arctan2(n2.imag, n2.real)
    if abs(t_new - t_old) > np.pi:
        return True
    return False


@njit(cache=True)
def _bundle_nb(out, b, direction, total, lna, c1, c2, d_in, d_out, rtol, h0, max_steps):
    kk = out.shape[1]
    s = 0.0
    h = min(h0, total)
    steps = 0
    exited = False
    while s < total - 1e-15 and steps < max_steps:
        if s + h > total:
            h = total - s
        z1 = out[b, 0, 0]
        z2 = out[b, 0, 1]
        hd = direction * h
        big1, big2 = _rk4_nb(z1, z2, hd, lna, c1, c2, d_in, d_out)
        m1, m2 = _rk4_nb(z1, z2, 0.5 * hd, lna, c1, c2, d_in, d_out)
        sm1, sm2 = _rk4_nb(m1, m2, 0.5 * hd, lna, c1, c2, d_in, d_out)
        err = np.sqrt(abs(big1 - sm1) ** 2 + abs(big2 - sm2) ** 2) / 15.0
        crossed = (_left_domain_nb(z1, z2, big1, big2) or _left_domain_nb(z1, z2, m1, m2)
                   or _left_domain_nb(z1, z2, sm1, sm2))
        if crossed and h >= 1e-12:
            # the field is discontinuous across the cut: shrink onto it
            h = 0.25 * h
            continue
        if err <= rtol or h < 1e-12:
            if crossed:
                exited = True
                break
            out[b, 0, 0] = sm1
            out[b, 0, 1] = sm2
            for j in range(1, kk):
                p1, p2 = _rk4_nb(out[b, j, 0], out[b, j, 1], 0.5 * hd,
                                 lna, c1, c2, d_in, d_out)
                p1, p2 = _rk4_nb(p1, p2, 0.5 * hd, lna, c1, c2, d_in, d_out)
                out[b, j, 0] = p1
                out[b, j, 1] = p2
            s += h
            steps += 1
            fac = 2.0 if err == 0.0 else min(2.0, 0.9 * (rtol / err) ** 0.2)
            h = h * max(fac, 0.2)
        else:
            h = h * max(0.2, 0.9 * (rtol / err) ** 0.2)
    if steps >= max_steps and s < total - 1e-15:
        exited = True
    return exited, steps, s


@njit(cache=True, parallel=True)
def flow_bundles_nb(z, s_end, lna, c1, c2, d_in, d_out, rtol, h0, max_steps):
    """Adaptive RK4 over bundles of points sharing one step sequence.

    ``z`` has shape (B, K, 2).  The step size is controlled by the error
    estimate of member 0 of each bundle, so the remaining members are
    integrated along an identical step sequence (needed for smooth finite
    differences of the flow map).  Bundles are independent and run in
    parallel.
    """
    nb = z.shape[0]
    out = z.copy()
    exited = np.zeros(nb, dtype=np.bool_)
    nsteps = np.zeros(nb, dtype=np.int64)
    reached = np.zeros(nb)
    direction = 1.0 if s_end >= 0.0 else -1.0
    total = abs(s_end)
    for b in prange(nb):
        e, steps, s = _bundle_nb(out, b, direction, total, lna, c1, c2, d_in, d_out,
                                 rtol, h0, max_steps)
        exited[b] = e
        nsteps[b] = steps
        reached[b] = direction * s
    return out, exited, nsteps, reached


def _smoothstep_np(x):
    x = np.asarray(x, dtype=float)
    val = np.where(x >= 1.0, 1.0, 0.0)
    der = np.zeros_like(x)
    mid = (x > 0.0) & (x < 1.0)
    if np.any(mid):
        xm = x[mid]
        f = np.exp(-1.0 / xm)
        g = np.exp(-1.0 / (1.0 - xm))
        den = f + g
        df = f / (xm * xm)
        dg = -g / ((1.0 - xm) ** 2)
        val[mid] = f / den
        der[mid] = (df * den - f * (df + dg)) / (den * den)
    return val, der


def _field_np(z, lna, c, d_in, d_out):
    z1 = z[..., 0]
    z2 = z[..., 1]
    th1 = np.angle(z1)
    th2 = np.angle(z2)
    rho = lna * (np.abs(z1) ** 2 * th1 + np.abs(z2) ** 2 * th2)
    zbar_rho = lna * z1 * z2 * (th1 - th2)
    if d_out > 0.0:
        q = 1.0 - (z1 * np.conj(c[0]) + z2 * np.conj(c[1]))
        s = np.abs(q)
        d = np.sqrt(s)
        phi, dphi = _smoothstep_np((d - d_in) / (d_out - d_in))
        with np.errstate(divide="ignore", invalid="ignore"):
            fac = np.where(dphi != 0.0, dphi / (d_out - d_in) * (-q / (4.0 * d * s)), 0.0)
        zbar_phi = fac * (z2 * c[0] - z1 * c[1])
    else:
        phi = np.ones_like(rho)
        zbar_phi = np.zeros_like(z1)
    zr = phi * zbar_rho + rho * zbar_phi
    rp = phi * rho
    w = np.empty_like(z)
    w[..., 0] = 1j * zr * np.conj(z2) + 1j * rp * z1
    w[..., 1] = -1j * zr * np.conj(z1) + 1j * rp * z2
    return w


def _rk4_np(z, h, lna, c, d_in, d_out):
    hh = h[..., None] if np.ndim(h) else h
    k1 = _field_np(z, lna, c, d_in, d_out)
    k2 = _field_np(z + 0.5 * hh * k1, lna, c, d_in, d_out)
    k3 = _field_np(z + 0.5 * hh * k2, lna, c, d_in, d_out)
    k4 = _field_np(z + hh * k3, lna, c, d_in, d_out)
    n = z + hh / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return n / np.linalg.norm(n, axis=-1, keepdims=True)


def _left_domain_np(old, new):
    jump = np.any(np.abs(np.angle(new) - np.angle(old)) > np.pi, axis=-1)
    return jump | np.any(np.abs(new) < BRANCH_EPS, axis=-1)


def flow_bundles_np(z, s_end, lna, c1, c2, d_in, d_out, rtol, h0, max_steps):
    z = np.array(z, dtype=complex)
    nb = z.shape[0]
    c = np.array([c1, c2], dtype=complex)
    out = z.copy()
    exited = np.zeros(nb, dtype=bool)
    nsteps = np.zeros(nb, dtype=np.int64)
    direction = 1.0 if s_end >= 0.0 else -1.0
    total = abs(s_end)
    s = np.zeros(nb)
    h = np.full(nb, min(h0, total))
    active = np.ones(nb, dtype=bool)
    while np.any(active):
        idx = np.nonzero(active)[0]
        h[idx] = np.minimum(h[idx], total - s[idx])
        hd = direction * h[idx]
        base = out[idx, 0, :]
        big = _rk4_np(base, hd, lna, c, d_in, d_out)
        half = _rk4_np(base, 0.5 * hd, lna, c, d_in, d_out)
        small = _rk4_np(half, 0.5 * hd, lna, c, d_in, d_out)
        err = np.linalg.norm(big - small, axis=-1) / 15.0
        leave = _left_domain_np(base, big) | _left_domain_np(base, half) | _left_domain_np(base, small)
        tiny = h[idx] < 1e-12
        accept = ((err <= rtol) | tiny) & (tiny | ~leave)
        # a step crossing the cut is retried with a quarter of the step
        err = np.where(leave & ~tiny, np.inf, err)
        stop = accept & leave
        exited[idx[stop]] = True
        active[idx[stop]] = False
        ok = accept & ~leave
        acc = idx[ok]
        if acc.size:
            members = out[acc, 1:, :]
            hm = (direction * h[acc])[:, None]
            members = _rk4_np(members, 0.5 * hm, lna, c, d_in, d_out)
            members = _rk4_np(members, 0.5 * hm, lna, c, d_in, d_out)
            out[acc, 1:, :] = members
            out[acc, 0, :] = small[ok]
            s[acc] += h[acc]
            nsteps[acc] += 1
        with np.errstate(divide="ignore"):
            fac = np.where(err == 0.0, 2.0, 0.9 * (rtol / np.where(err == 0.0, 1.0, err)) ** 0.2)
        fac = np.where(np.isinf(err), 0.25, fac)
        grow = np.where(ok, np.maximum(np.minimum(fac, 2.0), 0.2),
                        np.where(np.isinf(err), 0.25, np.maximum(0.2, np.minimum(fac, 1.0))))
        h[idx] = h[idx] * grow
        done = (s >= total - 1e-15) | (nsteps >= max_steps)
        capped = active & (nsteps >= max_steps) & (s < total - 1e-15)
        exited[capped] = True
        active &= ~done
    return out, exited, nsteps, direction * s


def flow_bundles(z, s_end, lna, center, d_in, d_out, rtol=1e-8, h0=0.05, max_steps=100000):
    """Integrate bundles ``z`` (shape (B, K, 2)) of the bump-modified twist field."""
    z = np.ascontiguousarray(z, dtype=complex)
    c1 = complex(center[0])
    c2 = complex(center[1])
    args = (z, float(s_end), float(lna), c1, c2, float(d_in), float(d_out),
            float(rtol), float(h0), int(max_steps))
    if numba_enabled():
        return flow_bundles_nb(*args)
    return flow_bundles_np(*args)
