"""Uniformly quasiregular maps on lens spaces built with a conformal trap.

Starting from f = f_a : L_{p,q} -> S^{2n+1} (n = 1), the construction
replaces f near x_0 and near the preimages x_1, ..., x_N of z_0 by
interpolants that are rotations on small balls B'_i, and post-composes
with a conformal inversion iota swapping a ball B around z_0 with its
complement.  Then g = pi o iota o g_1 on the lens space and
G = iota o g_1 o pi on the sphere.

All neighbourhoods are gauge balls |1 - <z, w>|^{1/2} < r; lens distances
are minima over the deck orbit.
"""
import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .ccdist import lens_distance_array
from .contact_flow import model_interpolant, max_admissible_radius
from .manifolds import (
    ContractViolation, LensSpec, SpherePoint, gauge, gauge_ball, gauge_sphere,
    lens_canonical, on_branch_locus, polar,
)
from .map_zoo import MapHandle, inversion, multi_twist, push_c, twist_preimages

TRAP = "TRAP"
CONFORMAL_BALL = "CONFORMAL_BALL"
TRANSIT = "TRANSIT"
BRANCH = "BRANCH"

MARGIN = 1.1


class TrapConstructionError(RuntimeError):
    pass


def lens_gauge(z, w, spec):
    """Gauge distance between lens classes (min over the deck orbit of w)."""
    lifts = spec.orbit(np.asarray(w, dtype=complex))
    return np.min(gauge(np.asarray(z, dtype=complex)[None], lifts), axis=0)


def branch_gauge(z):
    """Gauge distance from z to the branch locus {some z_j = 0} (n = 1).

    The nearest point with w_j = 0 has |<z, w>| = |z_k|, k != j.
    """
    return np.sqrt(1.0 - np.max(np.abs(np.asarray(z, dtype=complex)), axis=-1))


@dataclass
class TrapConfig:
    a: int
    spec: LensSpec
    z0: np.ndarray
    fx0: np.ndarray
    xs: np.ndarray          # x_0 (= z0), x_1, ..., x_N as sphere lifts
    rho_U: float
    rho_V: float
    R: float
    r_prime: float
    rho_B: float
    conditions: dict = field(default_factory=dict)

    @property
    def N(self):
        return len(self.xs) - 1

    def to_json(self):
        def cj(z):
            return {"re": np.real(z).tolist(), "im": np.imag(z).tolist()}
        return {
            "a": self.a, "spec": self.spec.to_json(), "z0": cj(self.z0), "fx0": cj(self.fx0),
            "xs": [cj(x) for x in self.xs], "rho_U": self.rho_U, "rho_V": self.rho_V,
            "R": self.R, "r_prime": self.r_prime, "rho_B": self.rho_B,
            "conditions": self.conditions,
        }


@dataclass
class UQRMap:
    g: MapHandle
    G: MapHandle
    g1: MapHandle
    iota: MapHandle
    config: TrapConfig
    model: object
    diagnostics: dict

    @property
    def ball(self):
        return self.iota.extras["ball"]

    def regions(self, z):
        return classify_points(self, z)


# ---------------------------------------------------------------------------
# construction
# ---------------------------------------------------------------------------

def default_base_point(a, n=1):
    return np.full(n + 1, np.exp(1j * np.pi / a) / np.sqrt(n + 1))


def _ball_image_radius(a, center, R, target, n=12):
    pts = gauge_ball(center, R, 4, n, n)
    return float(np.max(gauge(multi_twist(a).fn(pts), target)))


def _conditions(a, spec, xs, z0, fx0, rho_U, rho_V, R0, R):
    Rm = MARGIN * R
    c = {}
    c["1_R_below_R0"] = (Rm < R0, Rm, R0)
    img0 = _ball_image_radius(a, xs[0], Rm, fx0)
    c["2_B0_in_V0"] = (img0 < rho_V, img0, rho_V)
    imgs = max(_ball_image_radius(a, x, Rm, z0) for x in xs[1:])
    c["3_Bi_in_Ui"] = (imgs < rho_U, imgs, rho_U)
    c["4_B_z0_in_U"] = (Rm < rho_U, Rm, rho_U)
    # V is a neighbourhood of f(x_0), so the ball tested here is centred at f(x_0)
    c["5_B_fx0_in_V"] = (Rm < rho_V, Rm, rho_V)
    sep = min(float(lens_gauge(xs[i], xs[j], spec))
              for i in range(len(xs)) for j in range(i + 1, len(xs)))
    c["balls_disjoint"] = (2 * Rm < sep, 2 * Rm, sep)
    return c


def build_trap(a, spec, overrides=None):
    """Assemble g = pi o iota o g_1 and G = iota o g_1 o pi for n = 1."""
    overrides = dict(overrides or {})
    a = int(a)
    if spec.n != 1:
        raise ContractViolation("the trap construction is implemented for n = 1")
    if a % spec.p != 0:
        raise ContractViolation(f"p = {spec.p} must divide a = {a}")
    F = multi_twist(a)
    z0 = np.asarray(overrides.get("z0", default_base_point(a)), dtype=complex)
    z0 = z0 / np.linalg.norm(z0)
    if on_branch_locus(z0):
        raise TrapConstructionError("x_0 lies on the branch locus")
    fx0 = F.fn(z0)
    if lens_gauge(fx0, z0, spec) < 1e-6:
        raise TrapConstructionError("x_0 is fixed by pi o f")
    pre = twist_preimages(a, z0, spec)
    xs = np.array([z0] + [p.representative.z for p in pre])
    if np.any(lens_gauge(xs[1:], np.broadcast_to(z0, xs[1:].shape), spec) < 1e-6):
        raise TrapConstructionError("x_0 coincides with a preimage of z_0")

    # neighbourhoods U of z0 and V of f(x0)
    d_UV = float(lens_gauge(z0, fx0, spec))
    inj = min(float(gauge(z0, spec.rotate(z0, k))) for k in range(1, spec.p))
    br = float(branch_gauge(z0))
    br_v = float(branch_gauge(fx0))
    rho_U = overrides.get("rho_U", 0.9 * min(br, 0.5 * d_UV, 0.5 * inj))
    rho_V = overrides.get("rho_V", 0.9 * min(br_v, 0.5 * d_UV, 0.5 * inj))
    if rho_U + rho_V >= d_UV:
        raise TrapConstructionError("U and V are not disjoint")

    # R_0 from the flow domain at each distinct modulus vector
    R0 = min(max_admissible_radius(a, np.abs(x).astype(complex)) for x in xs)

    def admissible(R):
        return all(v[0] for v in _conditions(a, spec, xs, z0, fx0, rho_U, rho_V, R0, R).values())

    if "R" in overrides:
        R = float(overrides["R"])
        if not admissible(R):
            bad = [k for k, v in _conditions(a, spec, xs, z0, fx0, rho_U, rho_V, R0, R).items()
                   if not v[0]]
            raise TrapConstructionError(f"radius conditions violated: {', '.join(bad)}")
    else:
        lo, hi = 0.0, R0
        if not admissible(1e-4):
            bad = [k for k, v in _conditions(a, spec, xs, z0, fx0, rho_U, rho_V, R0, 1e-4).items()
                   if not v[0]]
            raise TrapConstructionError(f"no admissible radius: {', '.join(bad)}")
        for _ in range(30):
            mid = 0.5 * (lo + hi)
            if admissible(mid):
                lo = mid
            else:
                hi = mid
        R = lo
    conds = _conditions(a, spec, xs, z0, fx0, rho_U, rho_V, R0, R)

    # one model interpolant serves every centre: all x_i share their moduli
    moduli = {tuple(np.round(np.abs(x), 12)) for x in xs}
    if len(moduli) != 1:
        raise TrapConstructionError("centres with different moduli are not supported")
    zprime = np.abs(xs[0]).astype(complex)
    model = model_interpolant(a, zprime, R, overrides.get("inner_fraction", 0.5))
    r_prime = model.r_prime
    # F_a(boundary of B_i) must stay out of B(z0, r') so that g_1^{-1}(B) lies in the B'_i
    worst = min(float(np.min(gauge(F.fn(gauge_sphere(x, R, 24, 24)), z0))) for x in xs[1:])
    conds["image_boundary_outside_trap_ball"] = (worst > r_prime, worst, r_prime)
    if not conds["image_boundary_outside_trap_ball"][0]:
        raise TrapConstructionError("F_a(boundary of B_i) enters the ball around z_0")
    rho_B = overrides.get("trap_fraction", 0.9) * r_prime
    iota = inversion(z0, rho_B)

    thetas = np.array([polar(x)[1] for x in xs])
    g1 = _lens_interpolant(a, spec, xs, thetas, model)
    cfg = TrapConfig(a, spec, z0, fx0, xs, float(rho_U), float(rho_V), float(R),
                     float(r_prime), float(rho_B),
                     {k: {"ok": bool(v[0]), "value": float(v[1]), "bound": float(v[2])}
                      for k, v in conds.items()})

    def G_fn(z):
        return iota.fn(g1.fn(z))

    def G_jac(z, v):
        return push_c(iota, g1.fn(z), push_c(g1, z, v))

    dom = g1.domain
    G = MapHandle("uqr-sphere", {"a": a, "spec": spec.to_json()}, G_fn, G_jac, dom)
    g = MapHandle("uqr-lens", {"a": a, "spec": spec.to_json()}, G_fn, G_jac, dom, lens=spec)
    diag = {"R0": R0, "r_K": model.r_K, "achieved_trap_radius": iota.extras["ball"].gauge_radius,
            "N": len(xs) - 1}
    return UQRMap(g, G, g1, iota, cfg, model, diag)


def _lens_interpolant(a, spec, xs, thetas, model):
    """g_1 on lens representatives, well defined on deck orbits since p | a."""
    F = multi_twist(a)
    back = np.exp(-1j * thetas)
    fwd = np.exp(1j * a * thetas)

    def locate(z):
        # (lift power k, centre index i) of the ball containing some lift, else -1
        z = np.asarray(z, dtype=complex)
        shape = z.shape[:-1]
        kk = np.full(shape, -1)
        ii = np.full(shape, -1)
        for k in range(spec.p):
            w = spec.rotate(z, k)
            for i in range(len(xs)):
                hit = (kk < 0) & (gauge(w, xs[i]) < model.R)
                kk = np.where(hit, k, kk)
                ii = np.where(hit, i, ii)
        return kk, ii

    def fn(z):
        z = np.asarray(z, dtype=complex)
        out = F.fn(z)
        kk, ii = locate(z)
        for k in range(spec.p):
            for i in range(len(xs)):
                m = (kk == k) & (ii == i)
                if np.any(m):
                    w = spec.rotate(z[m], k)
                    out[m] = model.evaluate(w * back[i]) * fwd[i]
        return out

    def jac(z, v):
        z = np.asarray(z, dtype=complex)
        v = np.broadcast_to(np.asarray(v, dtype=complex), z.shape)
        out = F.jac(z, v)
        kk, ii = locate(z)
        for k in range(spec.p):
            ph = spec.phases(k)
            for i in range(len(xs)):
                m = (kk == k) & (ii == i)
                if np.any(m):
                    w = z[m] * ph
                    out[m] = model.jac(w * back[i], v[m] * ph * back[i]) * fwd[i]
        return out

    def domain(z):
        return ~on_branch_locus(z)

    h = MapHandle("lens-interpolant", {"a": a, "spec": spec.to_json(), "R": model.R}, fn, jac,
                  domain, extras={"locate": locate})
    return h


# ---------------------------------------------------------------------------
# regions and orbits
# ---------------------------------------------------------------------------

def in_trap(u, z):
    z = np.asarray(z, dtype=complex)
    out = np.zeros(z.shape[:-1], dtype=bool)
    for k in range(u.config.spec.p):
        out |= u.ball.inside(u.config.spec.rotate(z, k))
    return out


def conformal_ball_index(u, z):
    """Index i >= 1 of the ball B'_i containing z, or 0."""
    z = np.asarray(z, dtype=complex)
    cfg = u.config
    out = np.zeros(z.shape[:-1], dtype=int)
    for i in range(1, len(cfg.xs)):
        d = lens_gauge(np.broadcast_to(cfg.xs[i], z.shape), z, cfg.spec)
        out = np.where((out == 0) & (d < cfg.r_prime), i, out)
    return out


def piece_labels(u, z):
    """Piece of the piecewise definition of g containing z.

    0 off all balls B_i; 2i + 1 where the interpolant is exactly a rotation
    (gauge distance to x_i below the inner bump radius, which contains B'_i);
    2i + 2 on the rest of B_i.  Index i = 0 is the ball around x_0.
    """
    z = np.asarray(z, dtype=complex)
    cfg = u.config
    inner = max(cfg.r_prime, u.model.field.bump.d_in)
    out = np.zeros(z.shape[:-1], dtype=int)
    for i, x in enumerate(cfg.xs):
        d = lens_gauge(np.broadcast_to(x, z.shape), z, cfg.spec)
        out = np.where((out == 0) & (d < inner), 2 * i + 1, out)
        out = np.where((out == 0) & (d < cfg.R), 2 * i + 2, out)
    return out


def classify_points(u, z):
    z = np.asarray(z, dtype=complex)
    lab = np.full(z.shape[:-1], TRANSIT, dtype=object)
    lab[conformal_ball_index(u, z) > 0] = CONFORMAL_BALL
    lab[in_trap(u, z)] = TRAP
    lab[on_branch_locus(z)] = BRANCH
    return lab


@dataclass
class OrbitRecord:
    labels: list
    points: np.ndarray
    truncated: bool

    def contract_ok(self):
        """TRAP is absorbing and TRANSIT is followed by TRAP."""
        lab = self.labels
        for i in range(len(lab) - 1):
            if lab[i] == TRAP and lab[i + 1] != TRAP:
                return False
            if lab[i] == TRANSIT and lab[i + 1] != TRAP:
                return False
        return True


def classify_orbit(u, x, n_max):
    """Region labels of x, g x, ..., g^{n_max} x."""
    z = np.asarray(x.z if isinstance(x, SpherePoint) else x, dtype=complex)
    z = lens_canonical(z, u.config.spec)
    labels, pts = [], [z]
    truncated = False
    for n in range(n_max + 1):
        lab = classify_points(u, z)
        labels.append(str(lab))
        if lab == BRANCH:
            truncated = True
            break
        if n < n_max:
            z = u.g.evaluate(z)
            pts.append(z)
    return OrbitRecord(labels, np.array(pts), truncated)


def classify_orbits(u, z, n_max):
    """Vectorised labels, shape (n_max + 1, m)."""
    z = lens_canonical(np.asarray(z, dtype=complex), u.config.spec)
    out = []
    for n in range(n_max + 1):
        out.append(classify_points(u, z))
        if n < n_max:
            ok = ~on_branch_locus(z)
            nz = z.copy()
            nz[ok] = u.g.evaluate(z[ok])
            z = nz
    return np.array(out)


# ---------------------------------------------------------------------------
# Julia set by inverse iteration
# ---------------------------------------------------------------------------

@dataclass
class JuliaCloud:
    depth: int
    points: np.ndarray           # canonical lens representatives, (m, 2)
    levels: np.ndarray           # depth of each point
    addresses: list              # branch address of each point (tuple of (i, k))
    seeds: np.ndarray
    counts: list                 # points per level
    pruned: list                 # pruned branches per level
    diameters: dict              # level -> mean cluster diameter
    decay_ratio: float
    violations: int

    def to_json(self):
        return {
            "schema_version": 1, "depth": self.depth,
            "re": np.real(self.points).tolist(), "im": np.imag(self.points).tolist(),
            "level": self.levels.tolist(), "counts": self.counts, "pruned": self.pruned,
            "mean_cluster_diameter": {str(k): v for k, v in self.diameters.items()},
            "decay_ratio": self.decay_ratio, "violations": self.violations,
        }

    def chart_csv(self, chart):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["x", "y", "t", "depth"])
        xyz = chart.forward(self.points)
        for p, lv in zip(xyz, self.levels):
            w.writerow([f"{p[0]:.12e}", f"{p[1]:.12e}", f"{p[2]:.12e}", int(lv)])
        return buf.getvalue()


def julia_seeds(u, per_ball=8):
    cfg = u.config
    seeds = []
    for i in range(1, len(cfg.xs)):
        seeds.append(cfg.xs[i][None])
        m = max(per_ball - 1, 0)
        if m:
            n_b = 2
            n_g = int(np.ceil(m / n_b))
            ring = gauge_sphere(cfg.xs[i], 0.5 * cfg.r_prime, n_b, n_g)[:m]
            seeds.append(ring)
    return lens_canonical(np.concatenate(seeds), cfg.spec)


def inverse_branches(u, y):
    """All preimages of y lying in the conformal balls, with their addresses.

    Returns (points, parent index, (i, k)) arrays; branches whose inverted
    lift misses g_1(B'_i) are pruned.
    """
    cfg = u.config
    y = np.asarray(y, dtype=complex)
    pts, parent, addr = [], [], []
    pruned = 0
    for k in range(cfg.spec.p):
        w = u.iota.fn(cfg.spec.rotate(y, k))
        ok = gauge(w, cfg.z0) < cfg.r_prime
        pruned += int(np.sum(~ok)) * (len(cfg.xs) - 1)
        for i in range(1, len(cfg.xs)):
            th = polar(cfg.xs[i])[1]
            x = w[ok] * np.exp(-1j * (cfg.a - 1) * th)
            pts.append(x)
            parent.append(np.nonzero(ok)[0])
            addr.append(np.full((int(ok.sum()), 2), (i, k)))
    pts = lens_canonical(np.concatenate(pts), cfg.spec) if pts else np.zeros((0, 2), complex)
    return pts, np.concatenate(parent), np.concatenate(addr), pruned


def _max_pairwise(pts, spec):
    if len(pts) < 2:
        return 0.0
    best = 0.0
    for j in range(len(pts)):
        d = lens_distance_array(pts[j + 1:], np.broadcast_to(pts[j], pts[j + 1:].shape), spec)
        if d.size:
            best = max(best, float(np.max(d)))
    return best


def julia_approx(u, depth, per_ball=8, max_depth=8):
    """Inverse-iteration cloud of depth ``depth`` seeded inside the B'_i."""
    if depth > max_depth:
        raise ContractViolation(f"depth {depth} exceeds the configured maximum {max_depth}")
    cfg = u.config
    seeds = julia_seeds(u, per_ball)
    level_pts = [seeds]
    level_addr = [[()] * len(seeds)]
    level_seed = [np.arange(len(seeds))]
    counts = [len(seeds)]
    pruned_counts = [0]
    for _ in range(depth):
        y = level_pts[-1]
        pts, parent, addr, pruned = inverse_branches(u, y)
        level_pts.append(pts)
        level_addr.append([tuple(level_addr[-1][p]) + (tuple(a),) for p, a in zip(parent, addr)])
        level_seed.append(level_seed[-1][parent])
        counts.append(len(pts))
        pruned_counts.append(pruned)
    all_pts = np.concatenate(level_pts)
    levels = np.concatenate([np.full(len(p), d) for d, p in enumerate(level_pts)])
    addresses = [a for la in level_addr for a in la]
    violations = int(np.sum(conformal_ball_index(u, all_pts) == 0))
    # clusters: points of one level sharing the branch address
    diam = {}
    for d in range(1, depth + 1):
        groups = {}
        for idx, a in enumerate(level_addr[d]):
            groups.setdefault(a, []).append(idx)
        vals = [_max_pairwise(level_pts[d][g], cfg.spec) for g in groups.values() if len(g) > 1]
        diam[d] = float(np.mean(vals)) if vals else 0.0
    # depth-0 cluster: the seed set inside each ball
    d0 = []
    for i in range(1, len(cfg.xs)):
        m = conformal_ball_index(u, seeds) == i
        d0.append(_max_pairwise(seeds[m], cfg.spec))
    diam[0] = float(np.mean(d0))
    ratio = fit_decay(diam)
    return JuliaCloud(depth, all_pts, levels, addresses, seeds, counts, pruned_counts, diam,
                      ratio, violations)


DIAMETER_FLOOR = 1e-6


def fit_decay(diam, floor=DIAMETER_FLOOR):
    """Geometric decay ratio of cluster diameters per depth.

    Levels whose diameter is below ``floor`` are dropped: the closed-form
    distance of points closer than ~1e-8 is dominated by rounding in the
    vertical direction.
    """
    ks = sorted(k for k, v in diam.items() if v > floor)
    if len(ks) < 2:
        return float("nan")
    slope = np.polyfit(ks, np.log([diam[k] for k in ks]), 1)[0]
    return float(np.exp(slope))


def expected_count(u, n_seeds, depth):
    """Preimage counting oracle: each level multiplies by p * N = a^{n+1}."""
    return n_seeds * (u.config.spec.p * u.config.N) ** depth
