"""Broken-ray geometry: reflection chains between convex obstacles, the
multiple-scattering phase along them, reflected directions and phases, and
the illuminated/shadow partition of each boundary.

The backward problem ("which chain ends at this boundary point") is solved as
a damped Newton iteration on all interior vertex parameters at once, i.e. on
the stationarity conditions of the path functional

    L(t_0..t_{m-1}) = alpha . X_0 + sum_j |X_{j+1} - X_j|,   X_m fixed.

Stationarity of L is exactly the law of reflection at every vertex, and the
vertex parameters stay O(1) across targets.  (A shooting solve over the
launch parameter alone is hopeless here: the beam between two convex
obstacles contracts the relevant launch window by a factor ~5-30 per bounce,
so past roughly fifteen reflections adjacent targets map to launch parameters
closer than machine epsilon.)
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import Curve, Scene, _rotation

TWO_PI = 2.0 * math.pi

# Targets closer than this (in parameter) to a shadow-boundary root are
# labelled near-boundary; their chain is the limiting tangent ray.
NEAR_BOUNDARY_DELTA = 1e-6

ILLUMINATED = "illuminated"
SHADOW = "shadow"
NEAR_BOUNDARY = "near_boundary"


class RayError(RuntimeError):
    """Backward ray solve failed or its preconditions were violated."""


@dataclass
class BrokenRay:
    """Reflection chain X_0 .. X_m with its phase.

    ``params[j]`` is the curve parameter of X_j on the j-th obstacle of the
    scene sequence; ``interior_hit`` marks chains whose final open segment
    crosses the target obstacle (deep-shadow targets).
    """

    params: np.ndarray
    points: np.ndarray
    segment_lengths: np.ndarray
    phase: float
    target_param: float
    interior_hit: bool = False
    residual: float = 0.0

    @property
    def order(self) -> int:
        return len(self.points) - 1


@dataclass
class PhasePartition:
    """Node labels plus the two shadow-boundary roots of one boundary.

    ``roots = (t1, t2)`` with t1 < t2 and the illuminated arc equal to
    (t1, t2); t2 may exceed the period when the arc wraps around.
    """

    params: np.ndarray
    labels: np.ndarray
    roots: tuple
    period: float = TWO_PI

    def omega(self, t: float) -> float:
        t1, t2 = self.roots
        s = t1 + math.fmod(t - t1, self.period)
        if s < t1:
            s += self.period
        return (s - t1) * (t2 - s)


def reflect(d: np.ndarray, n: np.ndarray) -> np.ndarray:
    """Mirror direction d across the plane with unit normal n."""
    return d - 2.0 * float(np.dot(d, n)) * n


# ----------------------------------------------------------------------
# Ray / curve intersection
# ----------------------------------------------------------------------

def _first_positive_root(a: float, b: float, c: float):
    """Smallest positive root of a s^2 + 2 b s + c = 0, or None."""
    disc = b * b - a * c
    if disc < 0.0:
        return None
    sq = math.sqrt(disc)
    lo = (-b - sq) / a
    hi = (-b + sq) / a
    for s in (lo, hi):
        if s > 1e-12:
            return s
    return None


def ray_intersect(origin, d, curve: Curve):
    """First crossing of the open ray {origin + s d, s > 0} with the curve.

    Returns (curve parameter, distance) or None on a miss.  Circles and
    ellipses use the exact quadratic; the trigonometric family falls back to
    a bracketed scan with Newton polish.
    """
    origin = np.asarray(origin, dtype=float)
    d = np.asarray(d, dtype=float)
    if curve.kind == "circle":
        c = np.array(curve.meta["center"])
        r = curve.meta["radii"][0]
        rel = origin - c
        s = _first_positive_root(1.0, float(np.dot(d, rel)),
                                 float(np.dot(rel, rel)) - r * r)
        if s is None:
            return None
        hit = origin + s * d - c
        return math.atan2(hit[1], hit[0]) % TWO_PI, s
    if curve.kind == "ellipse":
        c = np.array(curve.meta["center"])
        a, b = curve.meta["radii"]
        rot = _rotation(-curve.meta["rotation"])
        o2 = rot @ (origin - c) / np.array([a, b])
        d2 = rot @ d / np.array([a, b])
        s = _first_positive_root(float(np.dot(d2, d2)), float(np.dot(d2, o2)),
                                 float(np.dot(o2, o2)) - 1.0)
        if s is None:
            return None
        u = o2 + s * d2
        return math.atan2(u[1], u[0]) % TWO_PI, s
    return _ray_intersect_scan(origin, d, curve)


def _ray_intersect_scan(origin, d, curve: Curve, samples: int = 256):
    t = np.linspace(0.0, TWO_PI, samples + 1)
    pts = curve.point(t)
    rel = pts - origin
    f = d[0] * rel[:, 1] - d[1] * rel[:, 0]
    hits = []
    for i in range(samples):
        if f[i] == 0.0 or f[i] * f[i + 1] < 0.0:
            lo, hi = t[i], t[i + 1]
            flo = f[i]
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                rm = curve.point(mid) - origin
                fm = d[0] * rm[1] - d[1] * rm[0]
                if flo * fm <= 0.0:
                    hi = mid
                else:
                    lo, flo = mid, fm
            tm = 0.5 * (lo + hi)
            s = float(np.dot(curve.point(tm) - origin, d))
            if s > 1e-12:
                hits.append((s, tm % TWO_PI))
    if not hits:
        return None
    s, tm = min(hits)
    return tm, s


# ----------------------------------------------------------------------
# Forward shooting
# ----------------------------------------------------------------------

def trace_forward(scene: Scene, t0: float, m: int):
    """Shoot the chain from launch parameter t0 through m reflections.

    Returns None if any intermediate ray misses its target obstacle;
    raises if the launch point is not illuminated.
    """
    if m < 1:
        raise ValueError("trace_forward needs m >= 1")
    curve0 = scene.curve(0)
    x = curve0.point(t0)
    nu = curve0.normal(t0)
    if float(np.dot(scene.alpha, nu)) >= 0.0:
        raise RayError(f"launch parameter t0={t0} is not illuminated")
    params = [t0 % TWO_PI]
    points = [x]
    d = reflect(scene.alpha, nu)
    for j in range(1, m + 1):
        hit = ray_intersect(points[-1], d, scene.curve(j))
        if hit is None:
            return None
        tj, _ = hit
        xj = scene.curve(j).point(tj)
        params.append(tj)
        points.append(xj)
        if j < m:
            d = reflect((xj - points[-2]) / np.linalg.norm(xj - points[-2]),
                        scene.curve(j).normal(tj))
    points = np.array(points)
    seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
    phase = float(np.dot(scene.alpha, points[0]) + np.sum(seg))
    return BrokenRay(params=np.array(params), points=points,
                     segment_lengths=seg, phase=phase,
                     target_param=params[-1],
                     residual=_max_residual(scene, np.array(params), points))


def _max_residual(scene: Scene, params: np.ndarray, points: np.ndarray) -> float:
    worst = 0.0
    for j in range(1, len(points) - 1):
        d_in = points[j] - points[j - 1]
        d_in /= np.linalg.norm(d_in)
        d_out = points[j + 1] - points[j]
        d_out /= np.linalg.norm(d_out)
        nu = scene.curve(j).normal(params[j])
        worst = max(worst, float(np.linalg.norm(reflect(d_in, nu) - d_out)))
    return worst


# ----------------------------------------------------------------------
# Backward solve: Newton on the whole chain
# ----------------------------------------------------------------------

def _chain_state(scene: Scene, m: int, tau: np.ndarray, target: np.ndarray):
    """Points, unit segment directions and lengths for a candidate chain."""
    pts = np.empty((m + 1, 2))
    for j in range(m):
        pts[j] = scene.curve(j).point(tau[j])
    pts[m] = target
    diff = np.diff(pts, axis=0)
    lens = np.linalg.norm(diff, axis=1)
    if np.min(lens) < 1e-12:
        raise RayError("degenerate chain: coincident vertices")
    dirs = diff / lens[:, None]
    return pts, dirs, lens


def _chain_grad_hess(scene: Scene, m: int, tau: np.ndarray, target: np.ndarray):
    pts, dirs, lens = _chain_state(scene, m, tau, target)
    d1 = np.empty((m, 2))
    d2 = np.empty((m, 2))
    for j in range(m):
        d1[j] = scene.curve(j).derivative(tau[j], 1)
        d2[j] = scene.curve(j).derivative(tau[j], 2)
    grad = np.empty(m)
    grad[0] = float(np.dot(d1[0], scene.alpha - dirs[0]))
    for j in range(1, m):
        grad[j] = float(np.dot(d1[j], dirs[j - 1] - dirs[j]))

    # tridiagonal Hessian of the path functional
    diag = np.empty(m)
    off = np.zeros(max(m - 1, 0))

    def proj_quad(vec_a, direction, vec_b, length):
        # vec_a^T (I - d d^T) vec_b / length
        return (float(np.dot(vec_a, vec_b))
                - float(np.dot(vec_a, direction)) * float(np.dot(vec_b, direction))) / length

    for j in range(m):
        if j == 0:
            acc = float(np.dot(d2[0], scene.alpha - dirs[0]))
            acc += proj_quad(d1[0], dirs[0], d1[0], lens[0])
        else:
            acc = float(np.dot(d2[j], dirs[j - 1] - dirs[j]))
            acc += proj_quad(d1[j], dirs[j - 1], d1[j], lens[j - 1])
            acc += proj_quad(d1[j], dirs[j], d1[j], lens[j])
        diag[j] = acc
        if j < m - 1:
            off[j] = -proj_quad(d1[j], dirs[j], d1[j + 1], lens[j])
    return grad, diag, off, pts, dirs, lens


def _solve_tridiag(diag, off, rhs):
    n = len(diag)
    c = np.zeros(n)
    d = np.zeros(n)
    beta = diag[0]
    if abs(beta) < 1e-300:
        raise RayError("singular chain Hessian")
    d[0] = rhs[0] / beta
    for i in range(1, n):
        c[i - 1] = off[i - 1] / beta
        beta = diag[i] - off[i - 1] * c[i - 1]
        if abs(beta) < 1e-300:
            raise RayError("singular chain Hessian")
        d[i] = (rhs[i] - off[i - 1] * d[i - 1]) / beta
    for i in range(n - 2, -1, -1):
        d[i] -= c[i] * d[i + 1]
    return d


def _newton_chain(scene: Scene, m: int, target: np.ndarray,
                  seed: np.ndarray, tol: float = 1e-13,
                  max_iter: int = 60) -> np.ndarray:
    tau = np.array(seed, dtype=float)
    lam = 0.0
    for _ in range(max_iter):
        grad, diag, off, _, _, _ = _chain_grad_hess(scene, m, tau, target)
        gmax = float(np.max(np.abs(grad)))
        if gmax < tol:
            return tau
        try:
            step = _solve_tridiag(diag + lam, off, grad)
        except RayError:
            lam = max(4.0 * lam, 1e-6)
            continue
        overshoot = float(np.max(np.abs(step)))
        if overshoot > 0.3:
            step *= 0.3 / overshoot
        new_tau = tau - step
        try:
            new_gmax = float(np.max(np.abs(
                _chain_grad_hess(scene, m, new_tau, target)[0])))
        except RayError:
            lam = max(4.0 * lam, 1e-6)
            continue
        if new_gmax <= gmax or overshoot <= 1e-9:
            tau = new_tau
            lam *= 0.25
        else:
            lam = max(4.0 * lam, 1e-6)
            tau = tau - 0.25 * step
    grad = _chain_grad_hess(scene, m, tau, target)[0]
    if float(np.max(np.abs(grad))) < 1e-9:
        return tau
    raise RayError(f"chain Newton failed to converge (|grad|={np.max(np.abs(grad)):.2e})")


def _assemble_ray(scene: Scene, m: int, tau: np.ndarray, t_x: float) -> BrokenRay:
    target = scene.curve(m).point(t_x)
    pts, dirs, lens = _chain_state(scene, m, tau, target)
    nu0 = scene.curve(0).normal(tau[0])
    if float(np.dot(scene.alpha, nu0)) >= 0.0:
        raise RayError("chain solve landed on a non-illuminated launch point")
    for j in range(1, m):
        if float(np.dot(dirs[j], scene.curve(j).normal(tau[j]))) <= 0.0:
            raise RayError(f"chain segment {j} re-enters its obstacle")
    interior_hit = False
    hit = ray_intersect(pts[m - 1], dirs[m - 1], scene.curve(m))
    if hit is not None and hit[1] < lens[m - 1] - 1e-9:
        interior_hit = True
    phase = float(np.dot(scene.alpha, pts[0]) + np.sum(lens))
    params = np.append(tau % TWO_PI, t_x % TWO_PI)
    return BrokenRay(params=params, points=pts, segment_lengths=lens,
                     phase=phase, target_param=t_x % TWO_PI,
                     interior_hit=interior_hit,
                     residual=_max_residual(scene, params, pts))


def _cold_seed(scene: Scene, m: int, t_x: float) -> np.ndarray:
    """Bracketed cold start, recursing through the previous iteration."""
    target = scene.curve(m).point(t_x)
    if m == 1:
        curve0 = scene.curve(0)
        grid = np.linspace(0.0, TWO_PI, 512, endpoint=False)
        nu = curve0.normal(grid)
        lit = grid[nu @ scene.alpha < -1e-6]
        vals = []
        for t0 in lit:
            x0 = curve0.point(t0)
            d = reflect(scene.alpha, curve0.normal(t0))
            rel = target - x0
            if float(np.dot(rel, d)) <= 0.0:
                vals.append((t0, math.nan))
                continue
            vals.append((t0, d[0] * rel[1] - d[1] * rel[0]))
        best = None
        for (ta, fa), (tb, fb) in zip(vals, vals[1:]):
            if math.isnan(fa) or math.isnan(fb):
                continue
            if fa == 0.0 or fa * fb < 0.0:
                best = (ta, fa, tb, fb)
                break
        if best is None:
            finite = [(abs(f), t) for t, f in vals if not math.isnan(f)]
            if not finite:
                raise RayError("no admissible launch bracket toward target")
            return np.array([min(finite)[1]])
        ta, fa, tb, fb = best
        for _ in range(50):
            tm = 0.5 * (ta + tb)
            x0 = curve0.point(tm)
            d = reflect(scene.alpha, curve0.normal(tm))
            rel = target - x0
            fm = d[0] * rel[1] - d[1] * rel[0]
            if fa * fm <= 0.0:
                tb, fb = tm, fm
            else:
                ta, fa = tm, fm
        return np.array([0.5 * (ta + tb)])
    # m >= 2: scan the previous obstacle for the vertex whose reflected ray
    # points at the target, reusing the (m-1)-chain solves along the scan
    grid = np.linspace(0.0, TWO_PI, 128, endpoint=False)
    prev = None
    best = None
    best_val = math.inf
    for tp in grid:
        try:
            seed = prev if prev is not None else _cold_seed(scene, m - 1, tp)
            tau = _newton_chain(scene, m - 1, scene.curve(m - 1).point(tp), seed)
            prev = tau
        except RayError:
            prev = None
            continue
        xp = scene.curve(m - 1).point(tp)
        d_in = xp - scene.curve(m - 2).point(tau[-1])
        d_in /= np.linalg.norm(d_in)
        nu = scene.curve(m - 1).normal(tp)
        if float(np.dot(d_in, nu)) >= 0.0:
            continue
        d_ref = reflect(d_in, nu)
        rel = target - xp
        if float(np.dot(rel, d_ref)) <= 0.0:
            continue
        miss = abs(d_ref[0] * rel[1] - d_ref[1] * rel[0])
        if miss < best_val:
            best_val = miss
            best = np.append(tau, tp)
    if best is None:
        raise RayError(f"no admissible cold seed for m={m}, t_x={t_x}")
    return best


def ray_for_target(scene: Scene, m: int, t_x: float,
                   seed: np.ndarray | None = None) -> BrokenRay:
    """Broken ray whose endpoint is the boundary point gamma_m(t_x).

    Interior vertices obey the law of reflection; the final segment's sign
    condition is dropped so that shadow-side targets are reachable (their
    chains are flagged via ``interior_hit``).
    """
    if m < 1:
        raise ValueError("ray_for_target needs m >= 1; use phase_phi for m = 0")
    target = scene.curve(m).point(t_x)
    if seed is None:
        seed = _cold_seed(scene, m, t_x)
    tau = _newton_chain(scene, m, target, seed)
    return _assemble_ray(scene, m, tau, t_x)


def _boundary_rays_sequential(scene: Scene, m: int, params: np.ndarray,
                              prev_rays: list | None = None) -> list:
    out = []
    seed = None
    if prev_rays is not None and m >= 2:
        seed = _seed_from_previous(scene, m, scene.curve(m).point(params[0]),
                                   prev_rays)
    for t_x in params:
        try:
            ray = ray_for_target(scene, m, t_x, seed=seed)
        except RayError:
            ray = ray_for_target(scene, m, t_x, seed=None if prev_rays is None
                                 else _seed_from_previous(
                                     scene, m, scene.curve(m).point(t_x), prev_rays))
        out.append(ray)
        seed = ray.params[:-1]
    return out


# -- batched solve over all grid nodes at once -------------------------

def _batch_grad_hess(scene: Scene, m: int, tau: np.ndarray,
                     targets: np.ndarray):
    """Gradient and tridiagonal Hessian of the path functional for a batch.

    tau has shape (m, N); targets (N, 2).  Vertices on the same obstacle are
    evaluated in one vectorized curve call.
    """
    n = tau.shape[1]
    pts = np.empty((m + 1, n, 2))
    d1 = np.empty((m, n, 2))
    d2 = np.empty((m, n, 2))
    for j in range(m):
        curve = scene.curve(j)
        pts[j] = curve.derivative(tau[j], 0)
        d1[j] = curve.derivative(tau[j], 1)
        d2[j] = curve.derivative(tau[j], 2)
    pts[m] = targets
    diff = np.diff(pts, axis=0)
    lens = np.linalg.norm(diff, axis=2)
    bad = lens.min(axis=0) < 1e-12
    lens = np.maximum(lens, 1e-300)
    dirs = diff / lens[:, :, None]

    grad = np.empty((m, n))
    grad[0] = np.einsum("ni,ni->n", d1[0], scene.alpha[None, :] - dirs[0])
    for j in range(1, m):
        grad[j] = np.einsum("ni,ni->n", d1[j], dirs[j - 1] - dirs[j])

    def proj_quad(va, direction, vb, length):
        return (np.einsum("ni,ni->n", va, vb)
                - np.einsum("ni,ni->n", va, direction)
                * np.einsum("ni,ni->n", vb, direction)) / length

    diag = np.empty((m, n))
    off = np.zeros((max(m - 1, 0), n))
    diag[0] = (np.einsum("ni,ni->n", d2[0], scene.alpha[None, :] - dirs[0])
               + proj_quad(d1[0], dirs[0], d1[0], lens[0]))
    for j in range(1, m):
        diag[j] = (np.einsum("ni,ni->n", d2[j], dirs[j - 1] - dirs[j])
                   + proj_quad(d1[j], dirs[j - 1], d1[j], lens[j - 1])
                   + proj_quad(d1[j], dirs[j], d1[j], lens[j]))
    for j in range(m - 1):
        off[j] = -proj_quad(d1[j], dirs[j], d1[j + 1], lens[j])
    return grad, diag, off, pts, dirs, lens, bad


def _solve_tridiag_batch(diag, off, rhs):
    m, n = diag.shape
    c = np.zeros((max(m - 1, 0), n))
    d = np.zeros((m, n))
    beta = diag[0].copy()
    beta[np.abs(beta) < 1e-300] = np.nan
    d[0] = rhs[0] / beta
    for i in range(1, m):
        c[i - 1] = off[i - 1] / beta
        beta = diag[i] - off[i - 1] * c[i - 1]
        beta[np.abs(beta) < 1e-300] = np.nan
        d[i] = (rhs[i] - off[i - 1] * d[i - 1]) / beta
    for i in range(m - 2, -1, -1):
        d[i] -= c[i] * d[i + 1]
    return d


def _batch_newton(scene: Scene, m: int, targets: np.ndarray,
                  seeds: np.ndarray, tol: float = 1e-13,
                  max_sweeps: int = 80):
    tau = seeds.copy()
    n = tau.shape[1]
    lam = np.zeros(n)
    gmax = np.full(n, np.inf)
    active = np.ones(n, dtype=bool)
    for _ in range(max_sweeps):
        grad, diag, off, _, _, _, bad = _batch_grad_hess(scene, m, tau, targets)
        gmax = np.max(np.abs(grad), axis=0)
        gmax[bad] = np.inf
        active = gmax >= tol
        if not np.any(active):
            break
        step = _solve_tridiag_batch(diag + lam[None, :], off, grad)
        step_max = np.max(np.abs(step), axis=0)
        singular = ~np.isfinite(step_max)
        scale = np.where(step_max > 0.3, 0.3 / np.maximum(step_max, 1e-300), 1.0)
        step = step * scale[None, :]
        trial = tau - np.where(active[None, :], step, 0.0)
        trial[:, singular] = tau[:, singular]
        g2 = np.max(np.abs(_batch_grad_hess(scene, m, trial, targets)[0]), axis=0)
        improved = (g2 <= gmax) | (np.max(np.abs(step), axis=0) <= 1e-10)
        improved &= np.isfinite(g2) & ~singular
        accept = active & improved
        tau[:, accept] = trial[:, accept]
        lam[accept] *= 0.25
        rejected = active & ~improved
        lam[rejected] = np.maximum(4.0 * lam[rejected], 1e-6)
    return tau, gmax < 1e-9


def boundary_rays(scene: Scene, m: int, params,
                  prev_rays: list | None = None,
                  coarse: int = 64) -> list:
    """Chains for every node of a parameter grid.

    A coarse subset is solved sequentially with continuation; its chains seed
    a lockstep damped Newton over all nodes.  Any node the batch fails to
    converge falls back to the sequential solver.
    """
    params = np.asarray(params, dtype=float)
    n = len(params)
    if m < 1:
        raise ValueError("boundary_rays needs m >= 1")
    if n <= 2 * coarse:
        return _boundary_rays_sequential(scene, m, params, prev_rays)

    stride = max(1, n // coarse)
    coarse_idx = np.arange(0, n, stride)
    coarse_rays = _boundary_rays_sequential(scene, m, params[coarse_idx],
                                            prev_rays)
    coarse_tau = np.stack([r.params[:-1] for r in coarse_rays], axis=1)
    nearest = np.minimum(np.searchsorted(params[coarse_idx], params), len(coarse_idx) - 1)
    seeds = coarse_tau[:, nearest]
    targets = scene.curve(m).point(params)

    tau, ok = _batch_newton(scene, m, targets, seeds)
    batch = _assemble_rays_batch(scene, m, tau, params, ok)
    out = []
    for i, t_x in enumerate(params):
        if batch[i] is not None:
            out.append(batch[i])
            continue
        seed = out[-1].params[:-1] if out else coarse_rays[0].params[:-1]
        try:
            out.append(ray_for_target(scene, m, t_x, seed=seed))
        except RayError:
            out.append(ray_for_target(scene, m, t_x))
    return out


def _first_positive_root_batch(a, b, c):
    disc = b * b - a * c
    out = np.full(b.shape, np.nan)
    okm = disc >= 0.0
    sq = np.sqrt(np.where(okm, disc, 0.0))
    lo = np.where(okm, (-b - sq) / a, np.nan)
    hi = np.where(okm, (-b + sq) / a, np.nan)
    out = np.where(lo > 1e-12, lo, np.where(hi > 1e-12, hi, np.nan))
    return out


def _ray_distance_batch(origins: np.ndarray, dirs: np.ndarray, curve: Curve):
    """Distance along each ray to its first curve crossing (nan on miss)."""
    if curve.kind == "circle":
        c = np.array(curve.meta["center"])
        r = curve.meta["radii"][0]
        rel = origins - c
        return _first_positive_root_batch(
            np.ones(len(origins)),
            np.einsum("ni,ni->n", dirs, rel),
            np.einsum("ni,ni->n", rel, rel) - r * r)
    if curve.kind == "ellipse":
        c = np.array(curve.meta["center"])
        a, b = curve.meta["radii"]
        rot = _rotation(-curve.meta["rotation"])
        o2 = (origins - c) @ rot.T / np.array([a, b])
        d2 = dirs @ rot.T / np.array([a, b])
        return _first_positive_root_batch(
            np.einsum("ni,ni->n", d2, d2),
            np.einsum("ni,ni->n", d2, o2),
            np.einsum("ni,ni->n", o2, o2) - 1.0)
    out = np.empty(len(origins))
    for i in range(len(origins)):
        hit = ray_intersect(origins[i], dirs[i], curve)
        out[i] = np.nan if hit is None else hit[1]
    return out


def _assemble_rays_batch(scene: Scene, m: int, tau: np.ndarray,
                         params: np.ndarray, ok: np.ndarray) -> list:
    """Vectorized validation + BrokenRay construction; None where invalid."""
    n = tau.shape[1]
    targets = scene.curve(m).point(params)
    pts = np.empty((m + 1, n, 2))
    normals = np.empty((m, n, 2))
    for j in range(m):
        curve = scene.curve(j)
        pts[j] = curve.derivative(tau[j], 0)
        normals[j] = curve.normal(tau[j])
    pts[m] = targets
    diff = np.diff(pts, axis=0)
    lens = np.linalg.norm(diff, axis=2)
    dirs = diff / np.maximum(lens, 1e-300)[:, :, None]

    valid = ok & (np.einsum("ni,i->n", normals[0], scene.alpha) < 0.0)
    for j in range(1, m):
        valid &= np.einsum("ni,ni->n", dirs[j], normals[j]) > 0.0

    residual = np.zeros(n)
    for j in range(1, m):
        dn = np.einsum("ni,ni->n", dirs[j - 1], normals[j])
        refl = dirs[j - 1] - 2.0 * dn[:, None] * normals[j]
        residual = np.maximum(residual,
                              np.linalg.norm(refl - dirs[j], axis=1))

    hit_dist = _ray_distance_batch(pts[m - 1], dirs[m - 1], scene.curve(m))
    interior = np.isfinite(hit_dist) & (hit_dist < lens[m - 1] - 1e-9)

    phases = pts[0] @ scene.alpha + np.sum(lens, axis=0)
    out = []
    for i in range(n):
        if not valid[i]:
            out.append(None)
            continue
        p = np.append(tau[:, i] % TWO_PI, params[i] % TWO_PI)
        out.append(BrokenRay(params=p, points=pts[:, i].copy(),
                             segment_lengths=lens[:, i].copy(),
                             phase=float(phases[i]),
                             target_param=params[i] % TWO_PI,
                             interior_hit=bool(interior[i]),
                             residual=float(residual[i])))
    return out


def _seed_from_previous(scene: Scene, m: int, target: np.ndarray,
                        prev_rays: list) -> np.ndarray:
    best = None
    best_val = math.inf
    for ray in prev_rays[:: max(1, len(prev_rays) // 512)]:
        xp = ray.points[-1]
        if ray.order >= 1:
            d_in = xp - ray.points[-2]
        else:
            d_in = scene.alpha
        d_in = d_in / np.linalg.norm(d_in)
        nu = scene.curve(m - 1).normal(ray.target_param)
        if float(np.dot(d_in, nu)) >= 0.0:
            continue
        d_ref = reflect(d_in, nu)
        rel = target - xp
        if float(np.dot(rel, d_ref)) <= 0.0:
            continue
        miss = abs(d_ref[0] * rel[1] - d_ref[1] * rel[0])
        if miss < best_val:
            best_val = miss
            best = np.append(ray.params, 0.0)[:m]
            best[m - 1] = ray.target_param
    if best is None:
        raise RayError("previous iteration provides no admissible seed")
    return best


# ----------------------------------------------------------------------
# Phases and directions
# ----------------------------------------------------------------------

def phase_phi(scene: Scene, m: int, t_x: float) -> float:
    """Multiple-scattering phase at the boundary point gamma_m(t_x)."""
    if m == 0:
        return float(np.dot(scene.alpha, scene.curve(0).point(t_x)))
    return ray_for_target(scene, m, t_x).phase


def reflected_direction(scene: Scene, m: int, t: float,
                        ray: BrokenRay | None = None) -> np.ndarray:
    """Unit direction of the ray reflected off gamma_m(t)."""
    curve = scene.curve(m)
    nu = curve.normal(t)
    if m == 0:
        if float(np.dot(scene.alpha, nu)) >= 0.0:
            raise RayError(f"t={t} is not illuminated at iteration 0")
        return reflect(scene.alpha, nu)
    if ray is None:
        ray = ray_for_target(scene, m, t)
    d_in = ray.points[-1] - ray.points[-2]
    d_in /= np.linalg.norm(d_in)
    if float(np.dot(d_in, nu)) >= 0.0:
        raise RayError(f"t={t} is not illuminated at iteration {m}")
    return reflect(d_in, nu)


def reflected_phase(scene: Scene, m: int, x, partition=None) -> float:
    """Reflected phase |x - y| + phi_m(y) at a point x of the open
    illuminated region, where y is the unique illuminated launch point whose
    reflected ray passes through x."""
    x = np.asarray(x, dtype=float)
    t_launch = _launch_param(scene, m, x, partition)
    y = scene.curve(m).point(t_launch)
    return float(np.linalg.norm(x - y)) + phase_phi(scene, m, t_launch)


def launch_point(scene: Scene, m: int, x, partition=None) -> float:
    """Parameter of the illuminated point whose reflected ray hits x."""
    return _launch_param(scene, m, np.asarray(x, dtype=float), partition)


def _launch_param(scene: Scene, m: int, x: np.ndarray, partition) -> float:
    if partition is None:
        grid = np.linspace(0.0, TWO_PI, 512, endpoint=False)
        partition = classify(scene, m, grid)
    t1, t2 = partition.roots
    n_scan = 384
    ts = t1 + (t2 - t1) * (np.arange(1, n_scan) / n_scan)
    seed = None
    vals = []
    for t in ts:
        try:
            if m == 0:
                d = reflected_direction(scene, 0, t)
                y = scene.curve(0).point(t)
            else:
                ray = ray_for_target(scene, m, t, seed=seed)
                seed = ray.params[:-1]
                d = reflected_direction(scene, m, t, ray=ray)
                y = ray.points[-1]
        except RayError:
            vals.append((t, math.nan))
            continue
        rel = x - y
        if float(np.dot(rel, d)) <= 0.0:
            vals.append((t, math.nan))
            continue
        vals.append((t, d[0] * rel[1] - d[1] * rel[0]))

    def miss(t, seed_local):
        if m == 0:
            d = reflected_direction(scene, 0, t)
            y = scene.curve(0).point(t)
        else:
            ray = ray_for_target(scene, m, t, seed=seed_local)
            d = reflected_direction(scene, m, t, ray=ray)
            y = ray.points[-1]
        rel = x - y
        return d[0] * rel[1] - d[1] * rel[0]

    for (ta, fa), (tb, fb) in zip(vals, vals[1:]):
        if math.isnan(fa) or math.isnan(fb):
            continue
        if fa == 0.0 or fa * fb < 0.0:
            seed_local = None
            for _ in range(60):
                tm = 0.5 * (ta + tb)
                try:
                    if m >= 1:
                        seed_local = ray_for_target(scene, m, tm,
                                                    seed=seed_local).params[:-1]
                    fm = miss(tm, seed_local)
                except RayError:
                    break
                if fa * fm <= 0.0:
                    tb, fb = tm, fm
                else:
                    ta, fa = tm, fm
            return 0.5 * (ta + tb)
    raise RayError(f"point {x} is not in the open illuminated region of "
                   f"iteration {m}")


# ----------------------------------------------------------------------
# Boundary partition
# ----------------------------------------------------------------------

def _partition_sign(scene: Scene, m: int, t: float,
                    ray: BrokenRay | None = None) -> float:
    curve = scene.curve(m)
    if m == 0:
        return float(np.dot(scene.alpha, curve.normal(t)))
    if ray is None:
        ray = ray_for_target(scene, m, t)
    d_in = ray.points[-1] - ray.points[-2]
    d_in /= np.linalg.norm(d_in)
    return float(np.dot(d_in, curve.normal(t)))


def classify(scene: Scene, m: int, grid_params,
             rays: list | None = None) -> PhasePartition:
    """Label grid nodes illuminated/shadow and locate the two roots of the
    incidence sign function by bisection."""
    params = np.asarray(grid_params, dtype=float)
    n = len(params)
    if m == 0:
        signs = np.array([_partition_sign(scene, 0, t) for t in params])
    else:
        if rays is None:
            rays = boundary_rays(scene, m, params)
        signs = np.array([_partition_sign(scene, m, t, ray=r)
                          for t, r in zip(params, rays)])

    flips = [i for i in range(n)
             if signs[i] == 0.0 or signs[i] * signs[(i + 1) % n] < 0.0]
    if len(flips) != 2:
        raise RayError(f"expected 2 shadow-boundary sign changes, found "
                       f"{len(flips)} at iteration {m}")

    roots = []
    for i in flips:
        ta, tb = params[i], params[(i + 1) % n] + (TWO_PI if i == n - 1 else 0.0)
        fa = signs[i]
        seed = rays[i].params[:-1] if (m >= 1 and rays is not None) else None
        for _ in range(60):
            tm = 0.5 * (ta + tb)
            if m >= 1:
                try:
                    ray_m = ray_for_target(scene, m, tm, seed=seed)
                    seed = ray_m.params[:-1]
                    fm = _partition_sign(scene, m, tm, ray=ray_m)
                except RayError:
                    break
            else:
                fm = _partition_sign(scene, 0, tm)
            if fa * fm <= 0.0:
                tb = tm
            else:
                ta, fa = tm, fm
            if tb - ta < 1e-12:
                break
        roots.append(0.5 * (ta + tb) % TWO_PI)

    r1, r2 = sorted(roots)
    # orient so the illuminated arc is (t1, t2)
    mid = 0.5 * (r1 + r2)
    sign_mid = (_partition_sign(scene, m, mid) if m == 0 else
                _interp_sign(params, signs, mid))
    if sign_mid < 0.0:
        t1, t2 = r1, r2
    else:
        t1, t2 = r2, r1 + TWO_PI

    labels = np.empty(n, dtype=object)
    for i, (t, s) in enumerate(zip(params, signs)):
        dist = min(_param_dist(t, r1), _param_dist(t, r2))
        if dist < NEAR_BOUNDARY_DELTA:
            labels[i] = NEAR_BOUNDARY
        else:
            labels[i] = ILLUMINATED if s < 0.0 else SHADOW
    return PhasePartition(params=params, labels=labels, roots=(t1, t2))


def _param_dist(a: float, b: float) -> float:
    d = abs(a - b) % TWO_PI
    return min(d, TWO_PI - d)


def _interp_sign(params: np.ndarray, signs: np.ndarray, t: float) -> float:
    i = int(np.argmin(np.abs((params - t + math.pi) % TWO_PI - math.pi)))
    return float(signs[i])
