"""Truncated negative-index Sobolev norm of the intersection functional and
the capacity lower bound it yields.

The squared norm is a series over orders k: a 4-d integral over two copies of
the triangle of

    overlap(I_1, I_2)^k / (tau_1 tau_2)^(k/2)
        * S_k(u; tau_1, tau_2) * kernel(tau_1, u) * kernel(tau_2, u),

weighted by (k+1)^gamma, where S_k sums over multi-indices of order k the
products over coordinates of H_{n_i}(u_i/sqrt(tau_1)) H_{n_i}(u_i/sqrt(tau_2))
/ n_i!.  S_k is never enumerated: per node pair it is the order-k coefficient
of the product of d per-coordinate generating sequences, assembled by a
truncated convolution (a dynamic program costing O(d k) per order).

Two 4-d integration schemes are provided.  The default collapses the two
shift variables exactly (the integrand depends on them only through the
piecewise-linear overlap and admissible-length factors, so their integral is
Gauss-exact per linear piece), leaving quadrature in the two gap variables
alone; this stays accurate when the offset is small and the correlation mass
sits on nearly-coincident interval pairs.  The alternative is the tensor
product of two triangle rules; there, node pairs with correlation
overlap/sqrt(tau_1 tau_2) = 1 (identical intervals, hit exactly by the
tensor diagonal) are excluded from every order k >= 1, because the continuum
diagonal has measure zero while fixed nodes sample it with positive weight
and its k-series diverges, poisoning the truncation tail.

Mass^2 / norm^2 then lower-bounds the capacity of the support of the
intersection measure, by the standard inequality
measure(A)^2 <= norm^2 * capacity(A).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .quadrature import SimplexQuadrature
from .siltcore import Path
from .specfun import SimplexIntegralSpec, log_gaussian_kernel_batch, \
    normalized_hermite_all, simplex_moment_integral

__all__ = [
    "SobolevSpec",
    "SobolevNormResult",
    "CapacityResult",
    "SupportQuery",
    "interval_overlap",
    "sobolev_norm_sq_truncated",
    "capacity_lower_bound",
    "support_distance",
]

_SELF_PAIR_RHO = 1.0 - 1e-9
_TAIL_CUTOFF = 1e-14


def interval_overlap(s1: float, t1: float, s2: float, t2: float) -> float:
    """Lebesgue measure of [s1, t1] intersect [s2, t2]."""
    if not (s1 < t1 and s2 < t2):
        raise ValueError("intervals must have positive length")
    return max(0.0, min(t1, t2) - max(s1, s2))


@dataclass(frozen=True)
class SobolevSpec:
    """Norm-truncation parameters: index gamma < (4-d)/2, order cap, offset.

    quad_a/quad_b select the tensor-product 4-d scheme when set; by default
    the norm is computed by the collapsed scheme (exact in the shift
    variables, quadrature only in the two gap variables), which stays
    accurate when the offset is small and the correlation mass concentrates
    on nearly-coincident interval pairs.
    """

    gamma: float
    K: int
    u: np.ndarray
    d: int
    quad_a: SimplexQuadrature = field(default=None)
    quad_b: SimplexQuadrature = field(default=None)
    tau_levels: int = 34
    tau_order: int = 6

    def __post_init__(self):
        u = np.atleast_1d(np.asarray(self.u, dtype=float))
        object.__setattr__(self, "u", u)
        if self.d < 4:
            raise ValueError(f"the norm machinery assumes d >= 4, got d={self.d}")
        if not self.gamma < 0.5 * (4 - self.d):
            raise ValueError(
                f"need gamma < (4-d)/2 = {0.5 * (4 - self.d)}, got {self.gamma}"
            )
        if self.K < 0:
            raise ValueError("truncation order must be >= 0")
        if u.shape != (self.d,):
            raise ValueError(f"offset has shape {u.shape}, expected ({self.d},)")
        if not np.linalg.norm(u) > 0:
            raise ValueError("offset must be nonzero")
        if self.quad_a is not None and self.quad_b is None:
            object.__setattr__(self, "quad_b", self.quad_a)


@dataclass(frozen=True)
class SobolevNormResult:
    value: float
    terms: np.ndarray
    K_used: int
    tail_ratio: float


@dataclass(frozen=True)
class CapacityResult:
    value: float
    mass: float
    norm_sq: float
    K_used: int
    tail_ratio: float


def _rule_tables(quad: SimplexQuadrature, u: np.ndarray, d: int, K: int):
    """Per-node gap, log(weight * kernel), endpoints, and normalized Hermite
    columns for the coordinates where the offset is nonzero.

    Nodes whose kernel log-weight is below -800 are dropped outright: their
    pairs cannot contribute above e-1000 of the norm scale, while their huge
    Hermite factors would otherwise turn 0 * inf into NaN.
    """
    tau = quad.gaps
    r2 = float(np.dot(u, u))
    log_wp = np.log(quad.weights) + log_gaussian_kernel_batch(r2, d, tau)
    keep = log_wp > -800.0
    tau = tau[keep]
    log_wp = log_wp[keep]
    nodes = quad.nodes[keep]
    tables = {}
    for i in np.nonzero(u)[0]:
        tables[int(i)] = normalized_hermite_all(K, u[i] / np.sqrt(tau))  # (K+1, N)
    return nodes, tau, log_wp, tables


def _zero_coordinate_factor(u: np.ndarray, K: int) -> np.ndarray:
    """Convolution of the constant sequences H_n(0)^2/n! over all coordinates
    with zero offset component (node-independent)."""
    h0 = normalized_hermite_all(K, np.zeros(1))[:, 0]  # H_n(0)/sqrt(n!)
    base = h0 * h0
    factor = np.zeros(K + 1)
    factor[0] = 1.0
    n_zero = int(np.sum(u == 0.0))
    for _ in range(n_zero):
        out = np.zeros(K + 1)
        for k in range(K + 1):
            out[k] = np.dot(factor[: k + 1], base[k::-1])
        factor = out
    return factor


def _convolve_orders(s_coef: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Order-truncated convolution of per-pair coefficient rows."""
    out = np.zeros_like(s_coef)
    for k in range(s_coef.shape[1]):
        out[:, k] = np.einsum("pj,pj->p", s_coef[:, : k + 1], g[:, k::-1])
    return out


def _norm_orders_tensor(spec: SobolevSpec, chunk_pairs: int) -> np.ndarray:
    """Raw per-order integrals via the tensor product of two triangle rules.

    Adequate while the offset is large enough that the rules resolve interval
    pairs overlapping at scale |u|^2; identical-interval pairs (the tensor
    diagonal, where the order series diverges pointwise on a measure-zero
    set) are excluded from every order k >= 1.
    """
    K = spec.K
    nodes_a, tau_a, lwp_a, tab_a = _rule_tables(spec.quad_a, spec.u, spec.d, K)
    nodes_b, tau_b, lwp_b, tab_b = _rule_tables(spec.quad_b, spec.u, spec.d, K)
    s_a, t_a = nodes_a[:, 0], nodes_a[:, 1]
    s_b, t_b = nodes_b[:, 0], nodes_b[:, 1]
    zero_factor = _zero_coordinate_factor(spec.u, K)
    active = sorted(tab_a.keys())
    n_a, n_b = len(tau_a), len(tau_b)
    acc = np.zeros(K + 1)
    all_ab = np.arange(n_a * n_b)
    for lo in range(0, n_a * n_b, chunk_pairs):
        pairs = all_ab[lo: lo + chunk_pairs]
        ia, ib = pairs // n_b, pairs % n_b
        overlap = np.clip(np.minimum(t_a[ia], t_b[ib]) - np.maximum(s_a[ia], s_b[ib]),
                          0.0, None)
        rho = overlap / np.sqrt(tau_a[ia] * tau_b[ib])
        with np.errstate(under="ignore"):
            pair_w = np.exp(lwp_a[ia] + lwp_b[ib])
        keep = rho < _SELF_PAIR_RHO
        s_coef = np.tile(zero_factor, (len(pairs), 1))
        for i in active:
            s_coef = _convolve_orders(s_coef, tab_a[i][:, ia].T * tab_b[i][:, ib].T)
        rho_pow = np.ones(len(pairs))
        for k in range(K + 1):
            w_eff = pair_w if k == 0 else pair_w * keep
            acc[k] += float(np.dot(w_eff * rho_pow, s_coef[:, k]))
            if k < K:
                rho_pow = rho_pow * rho
    return acc


def _geometric_gap_rule(levels: int, order: int):
    """Gauss-Legendre panels on (0, 1] shrinking geometrically toward 0."""
    x, w = np.polynomial.legendre.leggauss(order)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    taus, weights = [], []
    edges = [2.0 ** (-j) for j in range(levels + 1)] + [0.0]
    for hi, lo in zip(edges[:-1], edges[1:]):
        taus.append(lo + (hi - lo) * x)
        weights.append((hi - lo) * w)
    return np.concatenate(taus), np.concatenate(weights)


def _norm_orders_collapsed(spec: SobolevSpec, chunk_pairs: int) -> np.ndarray:
    """Raw per-order integrals, exact in the shift variables.

    Writing the two intervals as [a, a+tau1] and [a+eta, a+eta+tau2], the
    integrand depends on a only through the admissible length l(eta) (a
    piecewise-linear function) and on eta only through the overlap (also
    piecewise linear), so

        integral over (a, eta) of overlap^k  =  sum over linear pieces of
        Gauss-exact integrals of overlap(eta)^k * l(eta),

    leaving a two-dimensional integral over the gaps (tau1, tau2) that is
    done on geometric panels.  Orders k >= 1 draw only from eta with
    positive overlap; the order-0 term factorizes exactly into the squared
    one-dimensional mass integral.
    """
    K = spec.K
    r2 = float(np.dot(spec.u, spec.u))
    tau, w_tau = _geometric_gap_rule(spec.tau_levels, spec.tau_order)
    log_wp = np.log(w_tau) + log_gaussian_kernel_batch(r2, spec.d, tau)
    keep = log_wp > -800.0
    tau, log_wp = tau[keep], log_wp[keep]
    n_tau = len(tau)
    tables = {}
    for i in np.nonzero(spec.u)[0]:
        tables[int(i)] = normalized_hermite_all(K, spec.u[i] / np.sqrt(tau))
    zero_factor = _zero_coordinate_factor(spec.u, K)
    active = sorted(tables.keys())
    # order-0: exact factorization through the 1-d mass quadrature
    with np.errstate(under="ignore"):
        mass_1d = float(np.dot(np.exp(log_wp), 1.0 - tau))
    acc = np.zeros(K + 1)
    acc[0] = mass_1d * mass_1d
    # Gauss nodes exact for polynomials of degree K+1 on each eta piece
    q_eta = max((K + 3) // 2 + 1, 4)
    gx, gw = np.polynomial.legendre.leggauss(q_eta)
    all_pairs = np.arange(n_tau * n_tau)
    for lo in range(0, n_tau * n_tau, chunk_pairs):
        pairs = all_pairs[lo: lo + chunk_pairs]
        ia, ib = pairs // n_tau, pairs % n_tau
        t1, t2 = tau[ia], tau[ib]
        low = np.maximum(-t2, t1 - 1.0)
        high = np.minimum(t1, 1.0 - t2)
        knots = np.sort(np.stack([
            low,
            np.clip(t1 - t2, low, high),
            np.clip(0.0, low, high),
            high,
        ], axis=1), axis=1)
        # eta nodes per piece: shape (pairs, 3, q_eta)
        mid = 0.5 * (knots[:, 1:] + knots[:, :-1])
        half = 0.5 * np.maximum(knots[:, 1:] - knots[:, :-1], 0.0)
        eta = mid[:, :, None] + half[:, :, None] * gx
        w_eta = half[:, :, None] * gw
        ov = np.minimum(t1[:, None, None], eta + t2[:, None, None]) \
            - np.maximum(0.0, eta)
        ell = np.minimum(1.0 - t1[:, None, None], 1.0 - eta - t2[:, None, None]) \
            - np.maximum(0.0, -eta)
        base = w_eta * np.clip(ell, 0.0, None)
        rho = np.clip(ov, 0.0, None) / np.sqrt(t1 * t2)[:, None, None]
        with np.errstate(under="ignore"):
            pair_w = np.exp(log_wp[ia] + log_wp[ib])
        s_coef = np.tile(zero_factor, (len(pairs), 1))
        for i in active:
            s_coef = _convolve_orders(s_coef, tables[i][:, ia].T * tables[i][:, ib].T)
        rho_pow = rho.copy()
        for k in range(1, K + 1):
            a_k = np.einsum("pjg,pjg->p", base, rho_pow)
            acc[k] += float(np.dot(pair_w, a_k * s_coef[:, k]))
            if k < K:
                rho_pow = rho_pow * rho
    return acc


def sobolev_norm_sq_truncated(spec: SobolevSpec,
                              chunk_pairs: int = 30000) -> SobolevNormResult:
    """Truncated squared norm with per-order terms and truncation diagnostics.

    The reported value sums orders until either the cap K or the first order
    whose summand drops below 1e-14 of the running sum; tail_ratio is the
    last included summand relative to the total.
    """
    if spec.quad_a is not None:
        acc = _norm_orders_tensor(spec, chunk_pairs)
    else:
        acc = _norm_orders_collapsed(spec, chunk_pairs)
    orders = np.arange(spec.K + 1)
    terms = (orders + 1.0) ** spec.gamma * acc
    total = terms[0]
    k_used = 0
    for k in range(1, spec.K + 1):
        if abs(terms[k]) < _TAIL_CUTOFF * abs(total):
            break
        total += terms[k]
        k_used = k
    tail_ratio = abs(terms[k_used]) / abs(total) if total != 0 else math.inf
    return SobolevNormResult(value=float(total), terms=terms, K_used=k_used,
                             tail_ratio=float(tail_ratio))


def capacity_lower_bound(spec: SobolevSpec) -> CapacityResult:
    """mass^2 / truncated norm^2: capacity lower bound for the support."""
    mass = simplex_moment_integral(SimplexIntegralSpec(alpha=0.0, d=spec.d, u=spec.u))
    norm = sobolev_norm_sq_truncated(spec)
    return CapacityResult(value=mass * mass / norm.value, mass=mass,
                          norm_sq=norm.value, K_used=norm.K_used,
                          tail_ratio=norm.tail_ratio)


# ---------------------------------------------------------------------------
# Support diagnostics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SupportQuery:
    path: Path
    u: np.ndarray

    def __post_init__(self):
        u = np.atleast_1d(np.asarray(self.u, dtype=float))
        object.__setattr__(self, "u", u)
        if not np.linalg.norm(u) > 0:
            raise ValueError("offset must be nonzero")
        if u.shape != (self.path.d,):
            raise ValueError(f"offset has shape {u.shape}, expected ({self.path.d},)")


def support_distance(query: SupportQuery) -> float:
    """min over grid pairs s < t of |path(t) - path(s) - u|.

    Zero exactly when the sampled trajectory realizes the offset u as one of
    its increments; positive distance means the discretized path stays off
    the increment set.
    """
    values = query.path.values
    u = query.u
    best = math.inf
    for i in range(len(values) - 1):
        diff = values[i + 1:] - values[i] - u
        best = min(best, float(np.min(np.sqrt(np.sum(diff * diff, axis=1)))))
    return best
