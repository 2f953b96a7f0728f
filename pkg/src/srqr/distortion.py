"""Distortion of maps between sub-Riemannian spheres and lens spaces.

* metric distortion H(x, f) = limsup_{r -> 0} sup_{d(x,y)=r} d(fx, fy) /
  inf_{d(x,y)=r} d(fx, fy), sampled on cc spheres and extrapolated in r;
* eigenvalue distortion lambda_+ / lambda_- of the horizontal differential;
* length distortion along horizontal paths;
* distortion of iterates by chain-ruled horizontal differentials.
"""
import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .ccdist import lens_distance_array, sphere_distance
from .manifolds import (
    ContractViolation, HorizontalPath, SpherePoint, horizontal_frame, on_branch_locus,
    path_length,
)
from .map_zoo import DomainError, horizontal_matrix

MIN_RADIUS = 1e-4
DEFAULT_RADII = (0.04, 0.02, 0.01, 0.005)
DISTANCE_FLOOR = 1e-7


@dataclass
class DistortionReport:
    point: np.ndarray
    radii: np.ndarray
    sup: np.ndarray
    inf: np.ndarray
    ratios: np.ndarray
    H: float
    lambdas: tuple = None
    method: str = "metric-sphere"
    monotone: bool = True
    gaps: list = field(default_factory=list)

    def csv(self, point_id=0):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["point_id", "r", "sup", "inf", "ratio"])
        for r, s, i, q in zip(self.radii, self.sup, self.inf, self.ratios):
            w.writerow([point_id, f"{r:.6g}", f"{s:.12g}", f"{i:.12g}", f"{q:.12g}"])
        w.writerow([point_id, "extrapolated", "", "", f"{self.H:.12g}"])
        return buf.getvalue()


def geodesic_point(x, v, lam, s):
    """Point at arclength s on the cc geodesic from x with unit horizontal velocity v.

    g(s) = e^{i lam s} (cos(w s) x + sin(w s) / w (v - i lam x)), w = sqrt(1 + lam^2).
    """
    lam = np.asarray(lam, dtype=float)
    s = np.asarray(s, dtype=float)
    w = np.sqrt(1.0 + lam * lam)
    x = np.asarray(x, dtype=complex)
    v = np.asarray(v, dtype=complex)
    return np.exp(1j * lam * s)[..., None] * (
        np.cos(w * s)[..., None] * x + (np.sin(w * s) / w)[..., None] * (v - 1j * lam[..., None] * x))


def sphere_directions(r, n_ang=16, turns=(0.0, 1.0, 2.0, 2.5, 2.9, 3.1)):
    """(angle, lambda) pairs sweeping the metric sphere of radius r.

    Horizontal angles are uniform; lambda * r takes the values +-turns, from
    horizontal directions (0) to nearly vertical ones (close to pi).
    """
    lr = np.unique(np.concatenate([-np.asarray(turns), np.asarray(turns)]))
    ang = 2.0 * np.pi * np.arange(n_ang) / n_ang
    A, L = np.meshgrid(ang, lr / r, indexing="ij")
    return A.ravel(), L.ravel()


def metric_sphere(x, r, rtol=1e-9):
    """Points at cc distance r from x, as endpoints of minimizing geodesics.

    A geodesic with parameter lambda minimizes up to the cut time
    pi / sqrt(1 + lambda^2), so g(r) lies on the sphere whenever
    sqrt(1 + lambda^2) r < pi.  Directions violating this, or whose
    closed-form distance misses r by more than ``rtol`` relative (plus the
    1e-7 rounding floor of that formula near the vertical), are dropped and
    counted.
    """
    x = np.asarray(x, dtype=complex)
    ang, lam = sphere_directions(r)
    fr = horizontal_frame(x)
    v = np.cos(ang)[:, None] * fr[0] + np.sin(ang)[:, None] * fr[1]
    pts = geodesic_point(x, v, lam, np.full_like(lam, r))
    ok = np.sqrt(1.0 + lam * lam) * r < np.pi
    ok &= np.abs(sphere_distance(x[None], pts) - r) <= rtol * r + DISTANCE_FLOOR
    return pts[ok], int(np.sum(~ok))


def _image_distance(m, fx, fy):
    if m.lens is not None:
        return lens_distance_array(np.broadcast_to(fx, fy.shape), fy, m.lens)
    return sphere_distance(fx[None], fy)


def metric_distortion(m, x, radii=DEFAULT_RADII):
    """Sampled H(x, f) with linear extrapolation to r = 0 on the three smallest radii."""
    z = np.asarray(x.z if isinstance(x, SpherePoint) else x, dtype=complex)
    radii = np.asarray(radii, dtype=float)
    if np.any(np.diff(radii) >= 0):
        raise ContractViolation("radii must be strictly decreasing")
    if np.any(radii < MIN_RADIUS):
        raise ContractViolation(f"radii below {MIN_RADIUS} are dominated by rounding")
    fx = m.evaluate(z)
    sups, infs, gaps = [], [], []
    for r in radii:
        pts, missed = metric_sphere(z, r)
        if missed:
            gaps.append({"r": float(r), "missed": missed})
        d = _image_distance(m, fx, m.evaluate(pts))
        sups.append(float(np.max(d)))
        infs.append(float(np.min(d)))
    sups = np.array(sups)
    infs = np.array(infs)
    ratios = sups / infs
    k = min(3, len(radii))
    rr = radii[-k:]
    if k >= 2:
        coef = np.polyfit(rr, ratios[-k:], 1)
        H = float(coef[1])
    else:
        H = float(ratios[-1])
    monotone = bool(np.all(np.diff(ratios) <= 1e-9) or np.all(np.diff(ratios) >= -1e-9))
    return DistortionReport(z, radii, sups, infs, ratios, max(H, 1.0), None, "metric-sphere",
                            monotone, gaps)


def eigen_distortion(m, x):
    """(lambda_-, lambda_+): extremal singular values of the horizontal differential."""
    z = np.asarray(x.z if isinstance(x, SpherePoint) else x, dtype=complex)
    if not np.all(m.in_domain(z)):
        raise DomainError(f"{m.kind} is not smooth at this point")
    H, _ = horizontal_matrix(m, z)
    sv = np.linalg.svd(H, compute_uv=False)
    if sv.ndim == 1:
        return float(sv[-1]), float(sv[0])
    return sv[..., -1], sv[..., 0]


def bld_ratio(m, path):
    """(len(m o gamma) / len(gamma), its reciprocal)."""
    L0 = path_length(path)
    image = HorizontalPath(m.evaluate(path.points), path.times, path.tol)
    L1 = path_length(image)
    if L0 == 0.0:
        return 1.0, 1.0
    q = L1 / L0
    return q, 1.0 / q


@dataclass
class IterateTable:
    rows: list  # (n, max_ratio, excluded)
    ratios: np.ndarray  # (n_max, m) per-point ratios, nan where excluded

    def csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n", "max_ratio", "excluded"])
        for n, r, e in self.rows:
            w.writerow([n, f"{r:.12g}", e])
        return buf.getvalue()


def chain_differentials(m, z, n_max, branch_tol=1e-8):
    """Horizontal matrices of m^n at z for n = 1..n_max, shape (n_max, P, 2, 2).

    Points whose orbit comes within ``branch_tol`` of the branch locus are
    flagged in the returned mask and carry nan from then on.
    """
    z = np.asarray(z, dtype=complex)
    P = z.shape[0]
    D = np.broadcast_to(np.eye(2), (P, 2, 2)).copy()
    ok = np.ones(P, dtype=bool)
    out = np.full((n_max, P, 2, 2), np.nan)
    cur = z.copy()
    for n in range(n_max):
        ok &= ~on_branch_locus(cur, branch_tol) & m.in_domain(cur)
        idx = np.nonzero(ok)[0]
        if idx.size:
            H, q = horizontal_matrix(m, cur[idx])
            D[idx] = H @ D[idx]
            cur[idx] = q
        out[n, idx] = D[idx]
    return out, ok


def iterate_distortion(m, n_max, sample):
    """Per n, the max over the sample of lambda_+ / lambda_- of m^n."""
    Ds, ok = chain_differentials(m, sample, n_max)
    sv = np.linalg.svd(np.nan_to_num(Ds, nan=1.0), compute_uv=False)
    ratios = sv[..., 0] / sv[..., -1]
    ratios[:, ~ok] = np.nan
    rows = []
    for n in range(n_max):
        rows.append((n + 1, float(np.nanmax(ratios[n])), int(np.sum(~ok))))
    return IterateTable(rows, ratios)
