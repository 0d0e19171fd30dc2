"""Bessel and Hankel functions of integer order, plus the large-argument
tip/tail split of the outgoing Hankel function.

Everything here is self-contained double-precision arithmetic:

* ``bessel_j`` uses Miller's downward recurrence normalized with the even-order
  sum rule J_0 + 2*sum_m J_{2m} = 1.
* ``bessel_y`` builds Y_0, Y_1 from the same J array through the logarithmic
  Neumann series for moderate arguments and switches to the large-argument
  expansion once that expansion bottoms out below double precision; higher
  orders follow by upward recurrence (stable, Y grows with order).
* ``hankel_tip`` evaluates the truncated outgoing expansion
  sum_{s2<=s1} e^{iz} c(s,s2) z^{-(s2+1/2)} together with a rigorous bound on
  the discarded remainder (first neglected term).

Scalar routines accept any order within the stability policy; the order-0/1
array routines exist because kernel assembly only ever needs those two.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

EULER_GAMMA = 0.57721566490153286061

# Arguments above this use the large-argument expansion for Y_0/Y_1 (its
# optimal truncation error ~ e^{-2z} is below 1e-18 there); below it the
# Neumann series off the Miller J array carries full precision.
_ASYM_SWITCH = 25.0

# Default validity floor for the tip/tail split.
Z_MIN_TIP = 10.0

# Refuse evaluations far above the turning point: J underflows and Y
# overflows double precision there, and nothing downstream needs them.
_ORDER_MARGIN = 400


class BesselRangeError(ValueError):
    """Order/argument combination outside the supported stability regime."""


@dataclass(frozen=True)
class HankelTipTail:
    """Truncated outgoing Hankel expansion plus a bound on the remainder."""

    tip: complex
    tail_bound: float


# ----------------------------------------------------------------------
# Gamma function (Lanczos, g = 7, 9 terms; relative error < 1e-13 for x > 0)
# ----------------------------------------------------------------------

_LANCZOS_G = 7.0
_LANCZOS_C = (
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
)


def gamma_real(x: float) -> float:
    """Gamma function for real arguments, poles excluded."""
    if x == math.floor(x) and x <= 0.0:
        raise ValueError(f"gamma pole at x={x}")
    if x < 0.5:
        # reflection: Gamma(x) Gamma(1-x) = pi / sin(pi x)
        return math.pi / (math.sin(math.pi * x) * gamma_real(1.0 - x))
    x -= 1.0
    acc = _LANCZOS_C[0]
    for i in range(1, len(_LANCZOS_C)):
        acc += _LANCZOS_C[i] / (x + i)
    t = x + _LANCZOS_G + 0.5
    return math.sqrt(2.0 * math.pi) * t ** (x + 0.5) * math.exp(-t) * acc


def rgamma_real(x: float) -> float:
    """1/Gamma(x); returns 0 at the poles (non-positive integers)."""
    if x == math.floor(x) and x <= 0.0:
        return 0.0
    return 1.0 / gamma_real(x)


# ----------------------------------------------------------------------
# Bessel J by Miller's algorithm
# ----------------------------------------------------------------------

def _check_domain(n: int, z: float) -> None:
    if z <= 0.0:
        raise ValueError(f"argument must be positive, got z={z}")
    if n < 0:
        raise ValueError(f"order must be non-negative, got n={n}")
    if n > z + _ORDER_MARGIN:
        raise BesselRangeError(
            f"order n={n} too far above argument z={z} "
            f"(policy: n <= z + {_ORDER_MARGIN})"
        )


def _miller_start(nmax: int, z: float) -> int:
    top = max(nmax, z)
    return int(top + 14.0 * max(top, 1.0) ** (1.0 / 3.0) + 20.0)


def bessel_j_array(nmax: int, z: float) -> np.ndarray:
    """J_0(z) .. J_nmax(z) by downward recurrence with sum-rule normalization."""
    _check_domain(nmax, z)
    m_start = _miller_start(nmax, z)
    out = np.zeros(nmax + 1)
    jp = 0.0          # J~_{m+1}
    jc = 1e-300       # J~_m seed, arbitrary scale
    total = 0.0       # accumulates J~_0 + 2 sum J~_{2m}
    for m in range(m_start, -1, -1):
        if m <= nmax:
            out[m] = jc
        if m % 2 == 0:
            total += jc if m == 0 else 2.0 * jc
        jm = (2.0 * (m) / z) * jc - jp if m > 0 else 0.0
        jp, jc = jc, jm
        if abs(jc) > 1e250:
            jc *= 1e-250
            jp *= 1e-250
            total *= 1e-250
            out *= 1e-250
    return out / total


def bessel_j(n: int, z: float) -> float:
    """Bessel function of the first kind, integer order."""
    return float(bessel_j_array(n, z)[n])


# ----------------------------------------------------------------------
# Large-argument expansion (shared by Y_0/Y_1 and the array fast path)
# ----------------------------------------------------------------------

def _asym_coeffs(nu: int, terms: int = 40) -> np.ndarray:
    """a_m(nu) = prod_{l<=m} (4 nu^2 - (2l-1)^2) / (m! 8^m)."""
    mu = 4.0 * nu * nu
    a = np.empty(terms)
    a[0] = 1.0
    for m in range(1, terms):
        a[m] = a[m - 1] * (mu - (2 * m - 1) ** 2) / (m * 8.0)
    return a

_ASYM_A0 = _asym_coeffs(0)
_ASYM_A1 = _asym_coeffs(1)


def _hankel_asym_scalar(nu: int, z: float) -> complex:
    """H^(1)_nu(z) summed to optimal truncation; full precision for z >= ~20."""
    a = _ASYM_A0 if nu == 0 else _ASYM_A1
    acc = 0.0 + 0.0j
    ipow = 1.0 + 0.0j
    zp = 1.0
    prev = math.inf
    for m in range(len(a)):
        term = a[m] / zp
        if abs(term) > prev:
            break
        acc += ipow * term
        if abs(term) < 1e-18:
            break
        prev = abs(term)
        ipow *= 1j
        zp *= z
    omega = z - (2 * nu + 1) * math.pi / 4.0
    return math.sqrt(2.0 / (math.pi * z)) * complex(math.cos(omega), math.sin(omega)) * acc


# ----------------------------------------------------------------------
# Bessel Y
# ----------------------------------------------------------------------

def _y01_from_j(z: float, jarr: np.ndarray) -> tuple[float, float]:
    """Y_0, Y_1 via the logarithmic Neumann series; needs J up to ~z+50."""
    kmax = int(z / 2.0) + 26
    lg = math.log(z / 2.0) + EULER_GAMMA
    s0 = 0.0
    s1 = 0.0
    sign = -1.0
    for k in range(1, kmax + 1):
        s0 += sign * jarr[2 * k] / k
        s1 += sign * (jarr[2 * k - 1] - jarr[2 * k + 1]) / k
        sign = -sign
    y0 = (2.0 / math.pi) * lg * jarr[0] - (4.0 / math.pi) * s0
    y1 = (-2.0 / (math.pi * z)) * jarr[0] + (2.0 / math.pi) * lg * jarr[1] \
        + (2.0 / math.pi) * s1
    return y0, y1


def _y01(z: float) -> tuple[float, float]:
    if z <= _ASYM_SWITCH:
        jarr = bessel_j_array(int(z) + 55, z)
        return _y01_from_j(z, jarr)
    return _hankel_asym_scalar(0, z).imag, _hankel_asym_scalar(1, z).imag


def bessel_y(n: int, z: float) -> float:
    """Bessel function of the second kind, integer order."""
    _check_domain(n, z)
    y0, y1 = _y01(z)
    if n == 0:
        return float(y0)
    if n == 1:
        return float(y1)
    ym, yc = float(y0), float(y1)
    try:
        for m in range(1, n):
            ym, yc = yc, (2.0 * m / z) * yc - ym
    except OverflowError:
        yc = math.inf
    if not math.isfinite(yc):
        raise BesselRangeError(f"Y_{n}({z}) overflows double precision")
    return yc


def bessel_y_array(nmax: int, z: float) -> np.ndarray:
    """Y_0(z) .. Y_nmax(z) by upward recurrence."""
    _check_domain(nmax, z)
    out = np.empty(nmax + 1)
    y0, y1 = _y01(z)
    out[0] = y0
    if nmax >= 1:
        out[1] = y1
    with np.errstate(over="ignore"):
        for m in range(1, nmax):
            out[m + 1] = (2.0 * m / z) * out[m] - out[m - 1]
    if not np.all(np.isfinite(out)):
        raise BesselRangeError(f"Y overflow in upward recurrence at z={z}")
    return out


def hankel1(n: int, z: float) -> complex:
    """Outgoing Hankel function H^(1)_n(z) = J_n(z) + i Y_n(z)."""
    return complex(bessel_j(n, z), bessel_y(n, z))


# ----------------------------------------------------------------------
# Order-0/1 array fast path (kernel assembly and potential evaluation)
# ----------------------------------------------------------------------

_SERIES_SWITCH = 16.0
# J series terms: (z/2)^(2j) / (j! (j+nu)!); at z=16 term j=40 is < 1e-30
_SERIES_TERMS = 44


def _jy01_small(z: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """J_0, J_1, Y_0, Y_1 on a batch of small arguments (z < seam).

    One vectorized Miller sweep gives the whole J ladder at machine
    precision (the power series would lose ~5 digits near the seam);
    Y_0/Y_1 then follow from the logarithmic Neumann series.
    """
    kmax = int(_SERIES_SWITCH / 2.0) + 26
    m_start = _miller_start(2 * kmax + 1, _SERIES_SWITCH)
    jarr = np.zeros((2 * kmax + 2, z.size))
    jp = np.zeros(z.size)
    jc = np.full(z.size, 1e-300)
    total = np.zeros(z.size)
    for m in range(m_start, -1, -1):
        if m <= 2 * kmax + 1:
            jarr[m] = jc
        if m % 2 == 0:
            total += jc if m == 0 else 2.0 * jc
        if m > 0:
            jm = (2.0 * m / z) * jc - jp
            jp, jc = jc, jm
            big = np.abs(jc) > 1e250
            if np.any(big):
                jp[big] *= 1e-250
                jc[big] *= 1e-250
                total[big] *= 1e-250
                jarr[:, big] *= 1e-250
    jarr /= total
    lg = np.log(0.5 * z) + EULER_GAMMA
    s0 = np.zeros(z.size)
    s1 = np.zeros(z.size)
    sign = -1.0
    for k in range(1, kmax + 1):
        s0 += sign * jarr[2 * k] / k
        s1 += sign * (jarr[2 * k - 1] - jarr[2 * k + 1]) / k
        sign = -sign
    y0 = (2.0 / math.pi) * lg * jarr[0] - (4.0 / math.pi) * s0
    y1 = (-2.0 / (math.pi * z)) * jarr[0] + (2.0 / math.pi) * lg * jarr[1] \
        + (2.0 / math.pi) * s1
    return jarr[0], jarr[1], y0, y1


def _h01_asym(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    zmin = float(np.min(z, initial=math.inf))
    if zmin >= 400.0:
        nterms = 10
    elif zmin >= 100.0:
        nterms = 14
    elif zmin >= _SERIES_SWITCH:
        nterms = 24
    else:
        nterms = 40
    h = []
    for a, nu in ((_ASYM_A0, 0), (_ASYM_A1, 1)):
        acc = np.zeros(z.shape, dtype=complex)
        zp = np.ones_like(z)
        ipow = 1.0 + 0.0j
        for m in range(nterms):
            acc += ipow * (a[m] / zp)
            ipow *= 1j
            zp *= z
        omega = z - (2 * nu + 1) * math.pi / 4.0
        h.append(np.sqrt(2.0 / (math.pi * z)) * np.exp(1j * omega) * acc)
    return h[0], h[1]


def hankel1_01(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """H^(1)_0 and H^(1)_1 on a positive array, vectorized.

    Piecewise series/large-argument evaluation, relative accuracy ~1e-13
    at the seam and machine precision elsewhere.
    """
    z = np.asarray(z, dtype=float)
    if z.size and np.min(z) <= 0.0:
        raise ValueError("hankel1_01 requires strictly positive arguments")
    h0 = np.empty(z.shape, dtype=complex)
    h1 = np.empty(z.shape, dtype=complex)
    small = z < _SERIES_SWITCH
    if np.any(small):
        zs = z[small].ravel()
        j0, j1, y0, y1 = _jy01_small(zs)
        h0[small] = j0 + 1j * y0
        h1[small] = j1 + 1j * y1
    if np.any(~small):
        zl = z[~small]
        a0, a1 = _h01_asym(zl)
        h0[~small] = a0
        h1[~small] = a1
    return h0, h1


def j1_array(z: np.ndarray) -> np.ndarray:
    """J_1 on a positive array (log-split quadrature needs it alone)."""
    z = np.asarray(z, dtype=float)
    out = np.empty(z.shape)
    small = z < _SERIES_SWITCH
    if np.any(small):
        q = -0.25 * z[small] ** 2
        acc = np.full(q.shape, 0.5)
        term = np.full(q.shape, 0.5)
        for j in range(1, _SERIES_TERMS):
            term *= q / (j * (j + 1))
            acc += term
        out[small] = acc * z[small]
    if np.any(~small):
        out[~small] = _h01_asym(z[~small])[1].real
    return out


# ----------------------------------------------------------------------
# Tip/tail decomposition of H^(1)_s
# ----------------------------------------------------------------------

def hankel_asym_coeff(s: int, s2: int) -> complex:
    """Coefficient c(s,s2) of the outgoing large-argument expansion.

    c(s,s2) = i^{s2} Gamma(s+s2+1/2) /
              (sqrt(pi) e^{i pi (2s+1)/4} s2! 2^{s2-1/2} Gamma(s-s2+1/2));
    a Gamma pole in the denominator terminates the series (coefficient 0).
    """
    if s < 0 or s2 < 0:
        raise ValueError("orders must be non-negative")
    rg = rgamma_real(s - s2 + 0.5)
    if rg == 0.0:
        return 0.0 + 0.0j
    num = gamma_real(s + s2 + 0.5) * rg
    mag = num / (math.sqrt(math.pi) * math.factorial(s2) * 2.0 ** (s2 - 0.5))
    phase = (1j) ** s2 * np.exp(-1j * math.pi * (2 * s + 1) / 4.0)
    return complex(mag * phase)


def hankel_tip(s: int, s1: int, z: float) -> HankelTipTail:
    """Truncated expansion of H^(1)_s(z) with its remainder bound.

    tip = sum_{s2=0}^{s1} e^{iz} c(s,s2) z^{-(s2+1/2)};
    |H^(1)_s(z) - tip| <= tail_bound = |c(s,s1+1)| z^{-(s1+3/2)}.
    """
    if s1 < s - 1:
        raise ValueError(f"need s1 >= s-1 for a valid remainder bound (s={s}, s1={s1})")
    if z < Z_MIN_TIP:
        raise ValueError(f"tip/tail split needs z >= {Z_MIN_TIP}, got {z}")
    eiz = complex(math.cos(z), math.sin(z))
    tip = 0.0 + 0.0j
    for s2 in range(s1 + 1):
        tip += eiz * hankel_asym_coeff(s, s2) * z ** -(s2 + 0.5)
    tail = abs(hankel_asym_coeff(s, s1 + 1)) * z ** -(s1 + 1.5)
    return HankelTipTail(tip=complex(tip), tail_bound=float(tail))


def hankel1_demod(s: int, z: float) -> complex:
    """H^(1)_s(z) e^{-iz}, avoiding large-argument trig where possible.

    Above the expansion switch this comes straight off the demodulated
    series, so comparing against a demodulated tip costs only a few ULP of
    noise instead of the O(z eps) phase-reduction noise of |H - tip|.
    """
    if z > _ASYM_SWITCH:
        a = _ASYM_A0 if s == 0 else _asym_coeffs(s) if s != 1 else _ASYM_A1
        acc = 0.0 + 0.0j
        ipow = 1.0 + 0.0j
        zp = 1.0
        prev = math.inf
        for m in range(len(a)):
            term = a[m] / zp
            if abs(term) > prev:
                break
            acc += ipow * term
            if abs(term) < 1e-18:
                break
            prev = abs(term)
            ipow *= 1j
            zp *= z
        return math.sqrt(2.0 / (math.pi * z)) * np.exp(-1j * (2 * s + 1) * math.pi / 4.0) * acc
    return hankel1(s, z) * complex(math.cos(z), -math.sin(z))


def hankel_tip_demod(s: int, s1: int, z: float) -> complex:
    """The tip with the carrier e^{iz} removed: sum c(s,s2) z^{-(s2+1/2)}."""
    if z < Z_MIN_TIP:
        raise ValueError(f"tip/tail split needs z >= {Z_MIN_TIP}, got {z}")
    return complex(sum(hankel_asym_coeff(s, s2) * z ** -(s2 + 0.5)
                       for s2 in range(s1 + 1)))


def hankel1_deriv(n_deriv: int, z: float, order: int = 1) -> complex:
    """n-th derivative of H^(1)_order via the binomial ladder identity.

    D_z^n H_s = 2^{-n} sum_j binom(n,j) (-1)^j H_{s-n+2j}, with negative
    orders folded back through H_{-m} = e^{i pi m} H_m.
    """
    acc = 0.0 + 0.0j
    for j in range(n_deriv + 1):
        m = order - n_deriv + 2 * j
        h = hankel1(abs(m), z)
        if m < 0:
            h = h * np.exp(1j * math.pi * (-m))
        acc += math.comb(n_deriv, j) * (-1.0) ** j * h
    return complex(acc / 2.0 ** n_deriv)
