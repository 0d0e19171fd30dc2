"""Smooth closed strictly convex curves, scattering scenes, and numerical
certification of the no-occlusion and visibility conditions.

Every supported family (circle, ellipse, radial trigonometric polynomial) is
stored as an exact trigonometric polynomial per coordinate, so position,
derivatives of any order, normals and curvature are closed form; there is no
numerical differentiation anywhere in the geometric base layer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

TWO_PI = 2.0 * math.pi


class GeometryError(ValueError):
    """Invalid geometric construction (non-convex curve, bad scene, ...)."""


class CertificationError(RuntimeError):
    """A scene failed the no-occlusion / visibility certification."""


def _rotation(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s], [s, c]])


def _mul_cos(coef: np.ndarray) -> np.ndarray:
    """Coefficients of f(t)*cos(t) given trig-poly coefficients of f.

    ``coef`` has shape (2, M+1): row 0 cosine, row 1 sine amplitudes.
    """
    m = coef.shape[1]
    out = np.zeros((2, m + 1))
    for j in range(m):
        a, b = coef[0, j], coef[1, j]
        if j == 0:
            out[0, 1] += a
            out[1, 1] += b
        else:
            out[0, j + 1] += 0.5 * a
            out[0, j - 1] += 0.5 * a
            out[1, j + 1] += 0.5 * b
            out[1, abs(j - 1)] += 0.5 * b * (1.0 if j >= 1 else -1.0)
    return out


def _mul_sin(coef: np.ndarray) -> np.ndarray:
    """Coefficients of f(t)*sin(t)."""
    m = coef.shape[1]
    out = np.zeros((2, m + 1))
    for j in range(m):
        a, b = coef[0, j], coef[1, j]
        if j == 0:
            out[1, 1] += a
            out[0, 1] += 0.0
            if b:  # sin(0 t) term carries no content
                pass
        else:
            # cos(jt) sin(t) = (sin((j+1)t) - sin((j-1)t))/2
            out[1, j + 1] += 0.5 * a
            if j - 1 >= 1:
                out[1, j - 1] -= 0.5 * a
            # sin(jt) sin(t) = (cos((j-1)t) - cos((j+1)t))/2
            out[0, abs(j - 1)] += 0.5 * b
            out[0, j + 1] -= 0.5 * b
    return out


class Curve:
    """Closed strictly convex curve, counterclockwise, 2*pi-periodic.

    Attributes
    ----------
    kind : str
        "circle", "ellipse" or "trig".
    period : float
        Always 2*pi for these families.
    cos_coef, sin_coef : (2, M+1) arrays
        Trigonometric coefficients of the two coordinates:
        gamma_i(t) = sum_m cos_coef[i, m] cos(m t) + sin_coef[i, m] sin(m t).
    """

    def __init__(self, kind: str, cos_coef: np.ndarray, sin_coef: np.ndarray,
                 meta: dict | None = None, check: bool = True):
        self.kind = kind
        self.cos_coef = np.asarray(cos_coef, dtype=float)
        self.sin_coef = np.asarray(sin_coef, dtype=float)
        self.period = TWO_PI
        self.meta = dict(meta or {})
        self._harmonics = np.arange(self.cos_coef.shape[1])
        if check:
            self._check_regular_convex()
        self.length = self._arclength()

    # -- constructors ---------------------------------------------------

    @classmethod
    def circle(cls, center, radius: float) -> "Curve":
        if radius <= 0:
            raise GeometryError("circle radius must be positive")
        cx, cy = float(center[0]), float(center[1])
        cos_c = np.array([[cx, radius], [cy, 0.0]])
        sin_c = np.array([[0.0, 0.0], [0.0, radius]])
        return cls("circle", cos_c, sin_c,
                   meta={"center": (cx, cy), "radii": (radius, radius),
                         "rotation": 0.0})

    @classmethod
    def ellipse(cls, center, semi_x: float, semi_y: float,
                rotation: float = 0.0) -> "Curve":
        """Ellipse (semi_x cos t, semi_y sin t) rotated then translated."""
        if semi_x <= 0 or semi_y <= 0:
            raise GeometryError("ellipse semi-axes must be positive")
        rot = _rotation(rotation)
        cx, cy = float(center[0]), float(center[1])
        # columns of rot scale the cos/sin basis vectors
        cos_c = np.array([[cx, rot[0, 0] * semi_x], [cy, rot[1, 0] * semi_x]])
        sin_c = np.array([[0.0, rot[0, 1] * semi_y], [0.0, rot[1, 1] * semi_y]])
        return cls("ellipse", cos_c, sin_c,
                   meta={"center": (cx, cy), "radii": (semi_x, semi_y),
                         "rotation": rotation})

    @classmethod
    def trig_radial(cls, center, base_radius: float,
                    cos_amp=(), sin_amp=()) -> "Curve":
        """Radial curve r(t) (cos t, sin t) with trig-polynomial radius."""
        cos_amp = np.asarray(cos_amp, dtype=float)
        sin_amp = np.asarray(sin_amp, dtype=float)
        m = max(len(cos_amp), len(sin_amp)) + 1
        radius = np.zeros((2, m))
        radius[0, 0] = base_radius
        radius[0, 1:1 + len(cos_amp)] = cos_amp
        radius[1, 1:1 + len(sin_amp)] = sin_amp
        x = _mul_cos(radius)
        y = _mul_sin(radius)
        cos_c = np.zeros((2, m + 1))
        sin_c = np.zeros((2, m + 1))
        cos_c[0], sin_c[0] = x
        cos_c[1], sin_c[1] = y
        cos_c[0, 0] += float(center[0])
        cos_c[1, 0] += float(center[1])
        return cls("trig", cos_c, sin_c,
                   meta={"center": (float(center[0]), float(center[1])),
                         "base_radius": base_radius})

    # -- evaluation -----------------------------------------------------

    def derivative(self, t, order: int = 0) -> np.ndarray:
        """gamma^(order)(t); shape (2,) for scalar t, else (n, 2)."""
        t_arr = np.atleast_1d(np.asarray(t, dtype=float))
        m = self._harmonics
        phase = np.outer(t_arr, m)
        cos_m, sin_m = np.cos(phase), np.sin(phase)
        fac = m.astype(float) ** order if order else np.ones_like(m, dtype=float)
        r = order % 4
        if r == 0:
            cc, ss = cos_m, sin_m
        elif r == 1:
            cc, ss = -sin_m, cos_m
        elif r == 2:
            cc, ss = -cos_m, -sin_m
        else:
            cc, ss = sin_m, -cos_m
        vals = (cc * fac) @ self.cos_coef.T + (ss * fac) @ self.sin_coef.T
        return vals[0] if np.isscalar(t) or np.ndim(t) == 0 else vals

    def point(self, t):
        return self.derivative(t, 0)

    def tangent(self, t):
        return self.derivative(t, 1)

    def normal(self, t):
        """Exterior unit normal (counterclockwise curve)."""
        d = self.derivative(t, 1)
        if d.ndim == 1:
            n = np.array([d[1], -d[0]])
            return n / np.hypot(n[0], n[1])
        n = np.stack([d[:, 1], -d[:, 0]], axis=1)
        return n / np.linalg.norm(n, axis=1, keepdims=True)

    def speed(self, t):
        d = self.derivative(t, 1)
        return np.hypot(d[0], d[1]) if d.ndim == 1 else np.linalg.norm(d, axis=1)

    def curvature(self, t):
        d1 = self.derivative(t, 1)
        d2 = self.derivative(t, 2)
        if d1.ndim == 1:
            return (d1[0] * d2[1] - d1[1] * d2[0]) / np.hypot(d1[0], d1[1]) ** 3
        cross = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
        return cross / np.linalg.norm(d1, axis=1) ** 3

    def contains(self, p) -> bool:
        """Point strictly inside the enclosed region."""
        p = np.asarray(p, dtype=float)
        if self.kind == "circle":
            c = np.array(self.meta["center"])
            return float(np.hypot(*(p - c))) < self.meta["radii"][0]
        if self.kind == "ellipse":
            q = _rotation(-self.meta["rotation"]) @ (p - np.array(self.meta["center"]))
            a, b = self.meta["radii"]
            return (q[0] / a) ** 2 + (q[1] / b) ** 2 < 1.0
        c = np.array(self.meta["center"])
        v = p - c
        rho = np.hypot(v[0], v[1])
        if rho == 0.0:
            return True
        theta = math.atan2(v[1], v[0])
        boundary = self.point(theta) - c
        return rho < np.hypot(boundary[0], boundary[1])

    # -- construction-time checks ----------------------------------------

    def _check_regular_convex(self, samples: int = 1024) -> None:
        t = np.linspace(0.0, TWO_PI, samples, endpoint=False)
        sp = self.speed(t)
        if np.min(sp) <= 1e-12:
            raise GeometryError(f"{self.kind}: parametrization is not regular")
        kappa = self.curvature(t)
        imin = int(np.argmin(kappa))
        # interval refinement around the sampled minimum
        lo, hi = t[imin] - TWO_PI / samples, t[imin] + TWO_PI / samples
        tt = np.linspace(lo, hi, 257)
        kmin = min(float(np.min(kappa)), float(np.min(self.curvature(tt))))
        if kmin <= 0.0:
            raise GeometryError(
                f"{self.kind}: curvature reaches {kmin:.3e}; curve is not "
                "strictly convex or not counterclockwise")

    def _arclength(self, samples: int = 4096) -> float:
        t = np.linspace(0.0, TWO_PI, samples, endpoint=False)
        return float(np.mean(self.speed(t)) * TWO_PI)


def curve_eval(c: Curve, t: float):
    """(point, tangent, exterior normal, curvature) at parameter t."""
    return c.point(t), c.tangent(t), c.normal(t), float(c.curvature(t))


# ----------------------------------------------------------------------
# Scene
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class Scene:
    obstacles: tuple
    alpha: np.ndarray
    k: float
    sequence: tuple

    def __post_init__(self):
        alpha = np.asarray(self.alpha, dtype=float)
        if abs(np.linalg.norm(alpha) - 1.0) > 1e-12:
            raise GeometryError("incidence direction must be a unit vector")
        object.__setattr__(self, "alpha", alpha)
        if self.k <= 0:
            raise GeometryError("wavenumber must be positive")
        for a, b in zip(self.sequence, self.sequence[1:]):
            if a == b:
                raise GeometryError("consecutive sequence entries must differ")
        if any(i < 0 or i >= len(self.obstacles) for i in self.sequence):
            raise GeometryError("sequence refers to a missing obstacle")
        _check_disjoint(self.obstacles)

    def curve(self, m: int) -> Curve:
        """Obstacle hit at iteration m."""
        return self.obstacles[self.sequence[m]]


def _check_disjoint(obstacles, samples: int = 512) -> None:
    t = np.linspace(0.0, TWO_PI, samples, endpoint=False)
    boundaries = [c.point(t) for c in obstacles]
    for i in range(len(obstacles)):
        for j in range(i + 1, len(obstacles)):
            pi, pj = boundaries[i], boundaries[j]
            d2 = np.sum((pi[:, None, :] - pj[None, :, :]) ** 2, axis=2)
            gap = math.sqrt(float(np.min(d2)))
            if gap <= 1e-9:
                raise GeometryError(f"obstacles {i} and {j} touch or overlap")
            if any(obstacles[j].contains(p) for p in pi[::16]) or \
               any(obstacles[i].contains(p) for p in pj[::16]):
                raise GeometryError(f"obstacle {i} overlaps obstacle {j}")


def circle_ellipse_scene(k: float = 800.0, max_reflections: int = 21) -> Scene:
    """Reference two-obstacle configuration used throughout validation.

    A circle of radius 1/2 at the origin and the ellipse (cos t / 4, sin t)
    rotated 60 degrees clockwise and translated by (0.4, -1.3), lit by a
    plane wave coming in from the left, with the reflection sequence
    alternating circle, ellipse, circle, ...
    """
    circle = Curve.circle((0.0, 0.0), 0.5)
    ellipse = Curve.ellipse((0.4, -1.3), 0.25, 1.0, rotation=-math.pi / 3.0)
    seq = tuple(m % 2 for m in range(max_reflections + 1))
    return Scene(obstacles=(circle, ellipse), alpha=np.array([1.0, 0.0]),
                 k=k, sequence=seq)


# ----------------------------------------------------------------------
# Convex hull and condition certification
# ----------------------------------------------------------------------

def convex_hull(points) -> np.ndarray:
    """Counterclockwise convex hull (Andrew's monotone chain)."""
    pts = np.unique(np.asarray(points, dtype=float), axis=0)
    if len(pts) < 3:
        raise GeometryError("convex hull needs at least 3 distinct points")
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    pts = pts[order]

    def half(iterable):
        chain = []
        for p in iterable:
            while len(chain) >= 2:
                u = chain[-1] - chain[-2]
                v = p - chain[-2]
                if u[0] * v[1] - u[1] * v[0] > 0:
                    break
                chain.pop()
            chain.append(p)
        return chain

    lower = half(pts)
    upper = half(pts[::-1])
    hull = np.array(lower[:-1] + upper[:-1])
    if len(hull) < 3:
        raise GeometryError("points are collinear; hull is degenerate")
    return hull


def polygon_distance(hull: np.ndarray, p) -> float:
    """Signed distance from p to a ccw convex polygon (negative inside)."""
    p = np.asarray(p, dtype=float)
    a = hull
    b = np.roll(hull, -1, axis=0)
    edge = b - a
    rel = p[None, :] - a
    cross = edge[:, 0] * rel[:, 1] - edge[:, 1] * rel[:, 0]
    t = np.clip(np.sum(rel * edge, axis=1) / np.sum(edge * edge, axis=1), 0.0, 1.0)
    proj = a + t[:, None] * edge
    dist = float(np.min(np.linalg.norm(p[None, :] - proj, axis=1)))
    return -dist if np.all(cross >= 0.0) else dist


@dataclass
class VisibilityCertificate:
    no_occlusion_ok: bool
    visibility_ok: bool
    margin: float
    samples_used: int
    failures: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.no_occlusion_ok and self.visibility_ok


def _sagitta(curve: Curve, samples: int) -> float:
    """Worst-case gap between the true boundary and the sampled chords."""
    t = np.linspace(0.0, TWO_PI, samples, endpoint=False)
    h = np.max(curve.speed(t)) * TWO_PI / samples
    kmax = float(np.max(curve.curvature(t)))
    return 0.125 * kmax * h * h


def certify_conditions(scene: Scene, samples: int = 2048) -> VisibilityCertificate:
    """Check the no-occlusion and visibility conditions by dense sampling.

    Both are open conditions; the certificate carries the smallest clearance
    found, already reduced by the chord-sagitta sampling inflation, so a
    positive margin certifies the smooth configuration robustly.
    """
    t = np.linspace(0.0, TWO_PI, samples, endpoint=False)
    boundaries = [c.point(t) for c in scene.obstacles]
    sagittas = [_sagitta(c, samples) for c in scene.obstacles]
    failures = []
    margins = []

    # no-occlusion: the forward shadow cylinder of the first obstacle must
    # miss the second obstacle of the sequence (vacuous for a single solve)
    no_occlusion_ok = True
    if len(scene.sequence) >= 2:
        i0, i1 = scene.sequence[0], scene.sequence[1]
        span = np.max([np.max(np.abs(b)) for b in boundaries]) * 4.0 + 10.0
        swept = np.vstack([boundaries[i0], boundaries[i0] + span * scene.alpha])
        hull0 = convex_hull(swept)
        infl = sagittas[i0] + sagittas[i1]
        d_occ = np.array([polygon_distance(hull0, p) for p in boundaries[i1]])
        occ_margin = float(np.min(d_occ)) - infl
        no_occlusion_ok = occ_margin > 0.0
        margins.append(occ_margin)
        if not no_occlusion_ok:
            witness = boundaries[i1][int(np.argmin(d_occ))]
            failures.append(
                f"no-occlusion violated: obstacle {i1} point "
                f"({witness[0]:.6f}, {witness[1]:.6f}) lies in the forward "
                f"shadow cylinder of obstacle {i0} (clearance {occ_margin:.3e})")

    # visibility: K_{m+1} must avoid the convex hull of K_m and K_{m+2}
    visibility_ok = True
    seen = set()
    for m in range(len(scene.sequence) - 2):
        ia, ib, ic = scene.sequence[m], scene.sequence[m + 1], scene.sequence[m + 2]
        key = (ia, ib, ic)
        if key in seen:
            continue
        seen.add(key)
        hull = convex_hull(np.vstack([boundaries[ia], boundaries[ic]]))
        infl = sagittas[ia] + sagittas[ib] + sagittas[ic]
        d = np.array([polygon_distance(hull, p) for p in boundaries[ib]])
        vis_margin = float(np.min(d)) - infl
        margins.append(vis_margin)
        if vis_margin <= 0.0:
            visibility_ok = False
            witness = boundaries[ib][int(np.argmin(d))]
            failures.append(
                f"visibility violated for triple {key}: obstacle {ib} point "
                f"({witness[0]:.6f}, {witness[1]:.6f}) meets "
                f"co(K_{ia} u K_{ic}) (clearance {vis_margin:.3e})")

    return VisibilityCertificate(
        no_occlusion_ok=no_occlusion_ok,
        visibility_ok=visibility_ok,
        margin=float(min(margins)) if margins else math.inf,
        samples_used=samples,
        failures=failures,
    )
