"""Scalar special functions and closed-form integrals used across the toolkit.

Everything here is a pure function: Gaussian heat kernels, upper incomplete
gamma for arbitrary real first argument, the exact simplex moment integral

    I(alpha, d, u) = integral over {0 <= s < t <= 1} of
                     (t - s)^(-alpha) * p_d(t - s, u) ds dt,

its small-``u`` asymptotics, probabilists' Hermite polynomials, and the two
log-domain Hermite envelopes (Cauchy-integral and Szego-type) together with
the grid-search calibration of their constants.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import exp1, gamma as gamma_fn, gammaincc, gammaln

__all__ = [
    "KernelPoint",
    "SimplexIntegralSpec",
    "heat_kernel",
    "log_heat_kernel",
    "gaussian_kernel_batch",
    "log_gaussian_kernel_batch",
    "upper_incomplete_gamma",
    "simplex_moment_integral",
    "simplex_moment_asymptotic",
    "hermite_eval",
    "hermite_eval_all",
    "normalized_hermite_all",
    "normalized_hermite_log_sign",
    "cauchy_hermite_bound",
    "szego_bound",
    "calibrate_szego_constant",
    "calibrate_log_branch_constant",
]


# ---------------------------------------------------------------------------
# Gaussian heat kernel
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class KernelPoint:
    """Spatial offset ``u`` in R^d evaluated at variance ``t``."""

    u: np.ndarray
    d: int
    t: float

    def __post_init__(self):
        object.__setattr__(self, "u", np.atleast_1d(np.asarray(self.u, dtype=float)))
        if self.d < 1:
            raise ValueError(f"dimension must be >= 1, got {self.d}")
        if not self.t > 0:
            raise ValueError(f"variance parameter must be positive, got {self.t}")
        if self.u.shape != (self.d,):
            raise ValueError(f"offset has shape {self.u.shape}, expected ({self.d},)")


def log_heat_kernel(p: KernelPoint) -> float:
    """log of (2*pi*t)^(-d/2) * exp(-|u|^2 / (2t))."""
    r2 = float(np.dot(p.u, p.u))
    return -0.5 * p.d * math.log(2.0 * math.pi * p.t) - r2 / (2.0 * p.t)


def heat_kernel(p: KernelPoint) -> float:
    """Gaussian density at offset ``u`` with variance ``t`` in dimension ``d``."""
    return math.exp(log_heat_kernel(p))


def log_gaussian_kernel_batch(sq_norms, d, t):
    """Vectorized log heat kernel from squared offsets; ``t`` may be an array."""
    sq_norms = np.asarray(sq_norms, dtype=float)
    t = np.asarray(t, dtype=float)
    return -0.5 * d * np.log(2.0 * np.pi * t) - sq_norms / (2.0 * t)


def gaussian_kernel_batch(offsets, t, d=None):
    """Heat kernel for an array of offsets with last axis of length ``d``."""
    offsets = np.asarray(offsets, dtype=float)
    if d is None:
        d = offsets.shape[-1]
    sq = np.sum(offsets * offsets, axis=-1)
    return np.exp(log_gaussian_kernel_batch(sq, d, t))


# ---------------------------------------------------------------------------
# Upper incomplete gamma for arbitrary real first argument
# ---------------------------------------------------------------------------

def _upper_gamma_continued_fraction(s: float, a: float, tol: float = 1e-15,
                                    max_iter: int = 600) -> float:
    # Legendre continued fraction with modified Lentz iteration; reliable for
    # a >= ~1 at any real s.
    tiny = 1e-300
    b = a + 1.0 - s
    c = 1.0 / tiny
    d = 1.0 / b if b != 0 else 1.0 / tiny
    h = d
    for i in range(1, max_iter + 1):
        an = -i * (i - s)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < tol:
            return math.exp(-a + s * math.log(a)) * h
    raise RuntimeError(f"incomplete gamma continued fraction stalled at s={s}, a={a}")


def upper_incomplete_gamma(s: float, a: float) -> float:
    """Gamma(s, a) = integral_a^inf z^(s-1) exp(-z) dz for real s and a > 0.

    For s > 0 this is the scipy regularized tail scaled back by Gamma(s).
    For s <= 0 the integral is still convergent (a > 0 keeps the singular
    endpoint out); it is evaluated by a continued fraction when a is large
    enough and otherwise by descending the recurrence

        Gamma(s, a) = (Gamma(s+1, a) - a^s exp(-a)) / s

    from a first argument in (0, 1) (or from Gamma(0, a) = E1(a) on the
    integer ladder, where the recurrence's division by s is not available).

    Conditioning: each ladder step subtracts nearly equal terms when s sits
    within ~1e-4 of a negative integer and a < 1.5, costing up to ~5 digits
    there; exact integer and half-integer grids (every call site in this
    package) are full precision.
    """
    if not a > 0:
        raise ValueError(f"second argument must be positive, got {a}")
    s = float(s)
    a = float(a)
    if abs(s - round(s)) < 1e-12:
        s = float(round(s))  # ulp-level snap keeps the ladder off 1/0
    if s > 0:
        return float(gammaincc(s, a)) * float(gamma_fn(s))
    if a >= 1.5:
        return _upper_gamma_continued_fraction(s, a)
    exp_neg_a = math.exp(-a)
    if s == math.floor(s):
        value = exp1(a)  # Gamma(0, a)
        steps = int(-s)
    else:
        frac = s - math.floor(s)  # in (0, 1)
        value = float(gammaincc(frac, a)) * float(gamma_fn(frac))
        steps = -int(math.floor(s))
    # integer step count, with each ladder argument rebuilt from s: float
    # drift in repeated decrements must not change the number of steps
    for k in range(steps - 1, -1, -1):
        s_k = s + k
        value = (value - a ** s_k * exp_neg_a) / s_k
    return value


# ---------------------------------------------------------------------------
# Simplex moment integral and its asymptotics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SimplexIntegralSpec:
    """Parameters of the weighted simplex integral: exponent, dimension, offset."""

    alpha: float
    d: int
    u: np.ndarray = field(default=None)
    u_norm: float = field(default=None)

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError(f"singularity exponent must be >= 0, got {self.alpha}")
        if self.d < 1:
            raise ValueError(f"dimension must be >= 1, got {self.d}")
        if self.u is not None:
            object.__setattr__(self, "u", np.atleast_1d(np.asarray(self.u, dtype=float)))
            object.__setattr__(self, "u_norm", float(np.linalg.norm(self.u)))
        if self.u_norm is None:
            raise ValueError("either u or u_norm must be given")
        if not self.u_norm > 0:
            raise ValueError("offset must be nonzero (closed forms divide by |u|)")


def simplex_moment_integral(spec: SimplexIntegralSpec) -> float:
    """Exact value of I(alpha, d, u) via incomplete gamma functions.

    Substituting z = |u|^2 / (2(t-s)) collapses the double integral to

        2^(alpha-1) / (pi^(d/2) |u|^(2 alpha + d - 2))
            * [Gamma(alpha + d/2 - 1, a) - a * Gamma(alpha + d/2 - 2, a)]

    with a = |u|^2 / 2; no small-``u`` approximation is involved.
    """
    r = spec.u_norm
    a = 0.5 * r * r
    s1 = spec.alpha + 0.5 * spec.d - 1.0
    bracket = upper_incomplete_gamma(s1, a) - a * upper_incomplete_gamma(s1 - 1.0, a)
    prefactor = 2.0 ** (spec.alpha - 1.0) / (
        math.pi ** (0.5 * spec.d) * r ** (2.0 * spec.alpha + spec.d - 2.0)
    )
    return prefactor * bracket


def simplex_moment_asymptotic(spec: SimplexIntegralSpec) -> float:
    """Leading small-``u`` behavior of the simplex moment integral.

    Power regime (alpha > 1 - d/2):
        2^(alpha-1) Gamma(alpha + d/2 - 1) / (pi^(d/2) |u|^(2 alpha + d - 2)).
    Logarithmic regime (alpha = 1 - d/2):
        (2^alpha / pi^(d/2)) * log(1/|u|).
    """
    threshold = 1.0 - 0.5 * spec.d
    r = spec.u_norm
    if spec.alpha > threshold:
        return (
            2.0 ** (spec.alpha - 1.0)
            * float(gamma_fn(spec.alpha + 0.5 * spec.d - 1.0))
            / (math.pi ** (0.5 * spec.d) * r ** (2.0 * spec.alpha + spec.d - 2.0))
        )
    if spec.alpha == threshold:
        return 2.0 ** spec.alpha / math.pi ** (0.5 * spec.d) * math.log(1.0 / r)
    raise ValueError(
        f"no asymptotic available for alpha={spec.alpha} < 1 - d/2 = {threshold}"
    )


# ---------------------------------------------------------------------------
# Probabilists' Hermite polynomials
# ---------------------------------------------------------------------------

def hermite_eval(n: int, x):
    """H_n(x) by the recurrence H_{n+1} = x H_n - n H_{n-1} (H_0=1, H_1=x)."""
    if n < 0:
        raise ValueError(f"order must be >= 0, got {n}")
    x = np.asarray(x, dtype=float)
    h_prev = np.ones_like(x)
    if n == 0:
        return h_prev if h_prev.ndim else float(h_prev)
    h = x.copy()
    for m in range(1, n):
        h, h_prev = x * h - m * h_prev, h
    return h if h.ndim else float(h)


def hermite_eval_all(n_max: int, x) -> np.ndarray:
    """Stack of H_0(x), ..., H_{n_max}(x) along a new leading axis."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    out = np.empty((n_max + 1,) + x.shape)
    out[0] = 1.0
    if n_max >= 1:
        out[1] = x
    for m in range(1, n_max):
        out[m + 1] = x * out[m] - m * out[m - 1]
    return out


def normalized_hermite_all(n_max: int, x) -> np.ndarray:
    """Stack of H_n(x)/sqrt(n!) for n <= n_max, by the stable scaled recurrence.

    G_{n+1} = x G_n / sqrt(n+1) - sqrt(n/(n+1)) G_{n-1} keeps magnitudes near
    exp(x^2/4) instead of n!-sized, so orders in the hundreds stay finite for
    moderate arguments.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    out = np.empty((n_max + 1,) + x.shape)
    out[0] = 1.0
    if n_max >= 1:
        out[1] = x
    for m in range(1, n_max):
        out[m + 1] = x * out[m] / math.sqrt(m + 1) - math.sqrt(m / (m + 1)) * out[m - 1]
    return out


def normalized_hermite_log_sign(n: int, x):
    """(sign, log|H_n(x)/sqrt(n!)|) with per-element rescaling against overflow."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    g_prev = np.ones_like(x)
    shift = np.zeros_like(x)
    if n == 0:
        g = g_prev
    else:
        g = x.copy()
        for m in range(1, n):
            g, g_prev = x * g / math.sqrt(m + 1) - math.sqrt(m / (m + 1)) * g_prev, g
            big = np.abs(g) > 1e150
            if big.any():
                scale = np.where(big, 1e-150, 1.0)
                g = g * scale
                g_prev = g_prev * scale
                shift = shift + np.where(big, 150.0 * math.log(10.0), 0.0)
    with np.errstate(divide="ignore"):
        log_abs = np.log(np.abs(g)) + shift
    return np.sign(g), log_abs


# ---------------------------------------------------------------------------
# Log-domain Hermite envelopes
# ---------------------------------------------------------------------------

def cauchy_hermite_bound(n: int, increment: float, dt: float) -> float:
    """log of n! * sqrt(e) * dt^(-n/2) * exp(|increment|).

    Deterministic envelope for |H_n(increment / sqrt(dt))| valid for
    dt in (0, 1]; evaluated with log-gamma so n ~ 1000 cannot overflow.
    """
    if not dt > 0:
        raise ValueError(f"time increment must be positive, got {dt}")
    if n < 0:
        raise ValueError(f"order must be >= 0, got {n}")
    return float(gammaln(n + 1)) + 0.5 - 0.5 * n * math.log(dt) + abs(increment)


def szego_bound(n: int, x: float, alpha: float, c: float) -> float:
    """log of c * sqrt(n!) * (n or 1)^(-(8 alpha - 1)/12) * exp(alpha x^2).

    Envelope for |H_n(x)|; the prefactor ``c`` is not pinned analytically and
    must come from the caller (see calibrate_szego_constant).
    """
    if not 0.25 <= alpha <= 0.5:
        raise ValueError(f"exponent alpha must lie in [1/4, 1/2], got {alpha}")
    if not c > 0:
        raise ValueError(f"constant must be positive, got {c}")
    if n < 0:
        raise ValueError(f"order must be >= 0, got {n}")
    power = (8.0 * alpha - 1.0) / 12.0
    return (
        math.log(c)
        + 0.5 * float(gammaln(n + 1))
        - power * math.log(max(n, 1))
        + alpha * x * x
    )


@lru_cache(maxsize=None)
def calibrate_szego_constant(alpha: float = 0.25, n_max: int = 200,
                             x_max: float = None, x_step: float = 0.01) -> float:
    """Grid-search sup of |H_n(x)| exp(-alpha x^2) (n or 1)^((8a-1)/12) / sqrt(n!).

    Any c at least this large makes the szego_bound envelope hold on the grid;
    callers add their own safety margin for off-grid arguments.  The weighted
    recurrence on W_n = H_n exp(-alpha x^2)/sqrt(n!) keeps everything O(1).
    """
    if x_max is None:
        x_max = 2.0 * math.sqrt(n_max) + 10.0
    x = np.arange(0.0, x_max + x_step, x_step)
    damp = np.exp(-alpha * x * x)
    w_prev = damp.copy()
    w = x * damp
    power = (8.0 * alpha - 1.0) / 12.0
    best = float(np.max(np.abs(w_prev)))  # n = 0 term, (0 or 1) = 1
    best = max(best, float(np.max(np.abs(w))))  # n = 1
    for m in range(1, n_max):
        w, w_prev = x * w / math.sqrt(m + 1) - math.sqrt(m / (m + 1)) * w_prev, w
        best = max(best, float(np.max(np.abs(w))) * (m + 1) ** power)
    return best


@lru_cache(maxsize=None)
def calibrate_log_branch_constant(margin: float = 1.05) -> float:
    """Smallest observed c with m(u, 2) <= c * log(1/|u|) on a dyadic u-grid.

    m(u, 2) is the simplex moment integral at alpha = 0, d = 2, whose
    small-``u`` growth is (1/pi) log(1/|u|); the sup over |u| = 2^-1..2^-16
    (times ``margin``) gives a working constant for the logarithmic branch of
    the chaos-term envelope.
    """
    best = 0.0
    for j in range(1, 17):
        r = 2.0 ** (-j)
        m = simplex_moment_integral(SimplexIntegralSpec(alpha=0.0, d=2, u_norm=r))
        best = max(best, m / math.log(1.0 / r))
    return margin * best
