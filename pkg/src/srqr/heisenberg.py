"""First Heisenberg group in exponential coordinates (x, y, t).

Group law  (x, y, t) * (x', y', t') = (x + x', y + y', t + t' + (x y' - y x') / 2),
left-invariant horizontal frame  X = d/dx - (y/2) d/dt,  Y = d/dy + (x/2) d/dt,
so that [X, Y] = d/dt and the contact form is  dt - (x dy - y dx) / 2.
Graded dilations are delta_h(x, y, t) = (h x, h y, h^2 t).

With this normalisation the t-coordinate of a horizontal curve from the
origin equals the signed area swept by its (x, y) projection, which gives the
closed-form distance used as an oracle in :func:`cc_distance_exact`.
"""
import numpy as np
from scipy.optimize import brentq


def mul(p, q):
    """Group product of arrays of shape (..., 3)."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    out = p + q
    out[..., 2] += 0.5 * (p[..., 0] * q[..., 1] - p[..., 1] * q[..., 0])
    return out


def inv(p):
    return -np.asarray(p, dtype=float)


def dilate(p, h):
    p = np.array(p, dtype=float)
    p[..., 0:2] *= h
    p[..., 2] *= h * h
    return p


def frame(p):
    """Horizontal frame (X, Y) at p as two arrays of shape (..., 3)."""
    p = np.asarray(p, dtype=float)
    X = np.zeros(p.shape)
    Y = np.zeros(p.shape)
    X[..., 0] = 1.0
    X[..., 2] = -0.5 * p[..., 1]
    Y[..., 1] = 1.0
    Y[..., 2] = 0.5 * p[..., 0]
    return X, Y


def contact_form(p, v):
    p = np.asarray(p, dtype=float)
    v = np.asarray(v, dtype=float)
    return v[..., 2] - 0.5 * (p[..., 0] * v[..., 1] - p[..., 1] * v[..., 0])


def _ratio_small(phi):
    # area / chord^2 for an arc turning by phi (accurate for phi <= pi)
    if phi < 1e-3:
        num = phi ** 3 / 6.0 - phi ** 5 / 120.0 + phi ** 7 / 5040.0
    else:
        num = phi - np.sin(phi)
    return num / (8.0 * np.sin(0.5 * phi) ** 2)


def _ratio_large(gap):
    # the same ratio for turning angle 2 pi - gap (accurate for gap <= pi)
    return (2.0 * np.pi - gap + np.sin(gap)) / (8.0 * np.sin(0.5 * gap) ** 2)


def norm_exact(q):
    """cc distance from the origin to q, by the circular-arc geodesics."""
    x, y, t = (float(c) for c in q)
    r = np.hypot(x, y)
    t = abs(t)
    if t == 0.0:
        return r
    if r == 0.0:
        return float(np.sqrt(4.0 * np.pi * t))
    if r * r == 0.0 or t / (r * r) > 1e300:
        return float(np.sqrt(4.0 * np.pi * t))
    target = t / (r * r)
    if target < 1e-6:
        # ratio = phi / 12 (1 + phi^2 / 30) + O(phi^5), and phi / (2 sin(phi/2)) = 1 + phi^2 / 24 + O(phi^4)
        phi = 12.0 * target * (1.0 - (12.0 * target) ** 2 / 30.0)
        return float(r * (1.0 + phi * phi / 24.0))
    if target <= np.pi / 8.0:
        phi = brentq(lambda f: _ratio_small(f) - target, min(target, 1.0), np.pi,
                     xtol=1e-300, rtol=1e-15)
        return float(r * phi / (2.0 * np.sin(0.5 * phi)))
    # ratio ~ pi / gap^2 as gap -> 0, so the root sits near sqrt(pi / target)
    g0 = np.sqrt(np.pi / target)
    lo, hi = min(np.pi, 0.5 * g0), min(np.pi, 2.0 * g0)
    while _ratio_large(lo) < target:
        lo *= 0.5
    gap = brentq(lambda g: _ratio_large(g) - target, lo, hi, xtol=1e-300, rtol=1e-15)
    return float(r * (2.0 * np.pi - gap) / (2.0 * np.sin(0.5 * gap)))


def cc_distance_exact(p, q):
    """Closed-form Carnot-Caratheodory distance between two points."""
    return norm_exact(mul(inv(p), q))


def koranyi_norm(q):
    q = np.asarray(q, dtype=float)
    return ((q[..., 0] ** 2 + q[..., 1] ** 2) ** 2 + 16.0 * q[..., 2] ** 2) ** 0.25
