"""Brownian paths and the path functionals built on them.

A sampled path is a cumulative-sum Gaussian walk on a uniform grid of [0, 1];
all functionals read it through linear interpolation, so they are defined for
every point of the triangle {s < t} and converge to their continuum values as
the grid refines.

The functionals: the mollified self-intersection functional (a Gaussian
kernel of the increment integrated over the triangle), its centered and
renormalized variants in dimensions 2 and 3, individual terms of the
Hermite-product expansion in a multi-index, the deterministic almost-sure
envelope for those terms, and the order-k mollified multiple-intersection
functionals with their combinatorial renormalization operators.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from itertools import combinations

import numpy as np
from scipy.special import gammaln

from .quadrature import SimplexQuadrature, simplex3_gauss_legendre
from .rng import stream_generator
from .specfun import (
    calibrate_log_branch_constant,
    calibrate_szego_constant,
    gaussian_kernel_batch,
    log_gaussian_kernel_batch,
    normalized_hermite_log_sign,
)

__all__ = [
    "Path",
    "MultiIndex",
    "DynkinSymbol",
    "sample_path",
    "silt_epsilon",
    "centering_constant_2d",
    "silt_centered_2d",
    "renormalized_2d",
    "renormalized_3d",
    "chaos_term",
    "chaos_term_bound",
    "dynkin_B",
    "dynkin_T",
    "dynkin_renormalized_sum",
    "gaussian_mollifier",
    "path_to_csv",
    "path_from_csv",
    "path_to_binary",
    "path_from_binary",
]

_BINARY_MAGIC = b"SILTPATH1"


@dataclass(frozen=True)
class Path:
    """A d-dimensional trajectory sampled on a strictly increasing time grid."""

    times: np.ndarray
    values: np.ndarray
    seed: int = 0

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)
        if times.ndim != 1 or len(times) < 2 or np.any(np.diff(times) <= 0):
            raise ValueError("time grid must be strictly increasing with >= 2 nodes")
        if times[0] != 0.0 or times[-1] > 1.0:
            raise ValueError("time grid must start at 0 and end at most at 1")
        if values.shape[0] != len(times):
            raise ValueError("one value per grid node required")
        if np.any(values[0] != 0.0):
            raise ValueError("path must start at the origin")

    @property
    def d(self) -> int:
        return self.values.shape[1]

    @property
    def m(self) -> int:
        return len(self.times) - 1

    def at(self, t) -> np.ndarray:
        """Linear interpolation of the path at times t, shape (len(t), d)."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        idx = np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, self.m - 1)
        left = self.times[idx]
        span = self.times[idx + 1] - left
        lam = ((t - left) / span)[:, None]
        return self.values[idx] + lam * (self.values[idx + 1] - self.values[idx])

    def max_abs(self) -> np.ndarray:
        """Per-coordinate sup of |w_i| over the grid (interpolation cannot exceed it)."""
        return np.max(np.abs(self.values), axis=0)


@dataclass(frozen=True)
class MultiIndex:
    """Non-negative integer exponents, one per coordinate; order is their sum."""

    n: tuple

    def __post_init__(self):
        n = tuple(int(v) for v in np.atleast_1d(self.n))
        object.__setattr__(self, "n", n)
        if any(v < 0 for v in n) or len(n) == 0:
            raise ValueError("multi-index entries must be non-negative integers")

    @property
    def order(self) -> int:
        return sum(self.n)

    def __len__(self):
        return len(self.n)

    def __iter__(self):
        return iter(self.n)


@dataclass(frozen=True)
class DynkinSymbol:
    """Order-k symbol: a continuous function on the k-simplex and a target order."""

    k: int
    phi: object
    l: int

    def __post_init__(self):
        if self.k < 2:
            raise ValueError("order k must be >= 2")
        if not 1 <= self.l <= self.k:
            raise ValueError(f"target order must satisfy 1 <= l <= k, got l={self.l}")


def sample_path(m: int, d: int, seed: int, stream: int = 0) -> Path:
    """Cumulative sum of i.i.d. N(0, 1/m) increments per coordinate.

    Distinct (seed, stream) pairs give independent paths; identical pairs give
    bitwise-identical ones.
    """
    if m < 1:
        raise ValueError(f"grid size must be >= 1, got {m}")
    if d < 1:
        raise ValueError(f"dimension must be >= 1, got {d}")
    gen = stream_generator(seed, stream)
    increments = gen.standard_normal((m, d)) * math.sqrt(1.0 / m)
    values = np.vstack([np.zeros((1, d)), np.cumsum(increments, axis=0)])
    return Path(times=np.linspace(0.0, 1.0, m + 1), values=values, seed=seed)


def _as_offset(u, d) -> np.ndarray:
    if np.isscalar(u) and u == 0:
        return np.zeros(d)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if u.shape != (d,):
        raise ValueError(f"offset has shape {u.shape}, expected ({d},)")
    return u


def silt_epsilon(path: Path, eps: float, u, quad: SimplexQuadrature) -> float:
    """Triangle quadrature of the Gaussian kernel of w(t) - w(s) - u at scale eps."""
    if not eps > 0:
        raise ValueError(f"mollification scale must be positive, got {eps}")
    u = _as_offset(u, path.d)
    s, t = quad.nodes[:, 0], quad.nodes[:, 1]
    inc = path.at(t) - path.at(s) - u
    sq = np.sum(inc * inc, axis=-1)
    return float(np.dot(quad.weights, np.exp(log_gaussian_kernel_batch(sq, path.d, eps))))


def centering_constant_2d(eps: float) -> float:
    """E of the planar mollified functional at the origin, in closed form.

    The expectation collapses to (2 pi)^-1 * integral_0^1 (1-x)/(x+eps) dx
    = ((1+eps) log((1+eps)/eps) - 1) / (2 pi).
    """
    if not eps > 0:
        raise ValueError(f"mollification scale must be positive, got {eps}")
    return ((1.0 + eps) * math.log((1.0 + eps) / eps) - 1.0) / (2.0 * math.pi)


def silt_centered_2d(path: Path, eps: float, quad: SimplexQuadrature) -> float:
    """Planar functional at the origin minus its deterministic mean."""
    if path.d != 2:
        raise ValueError(f"centered functional is planar only, got d={path.d}")
    return silt_epsilon(path, eps, 0, quad) - centering_constant_2d(eps)


def renormalized_2d(path: Path, eps: float, u, quad: SimplexQuadrature) -> float:
    """Planar functional at offset u minus the (1/pi) log(1/|u|) divergence."""
    if path.d != 2:
        raise ValueError(f"expected a planar path, got d={path.d}")
    u = _as_offset(u, 2)
    r = float(np.linalg.norm(u))
    if r == 0:
        raise ValueError("offset must be nonzero")
    return silt_epsilon(path, eps, u, quad) - math.log(1.0 / r) / math.pi


def renormalized_3d(path: Path, eps: float, u, quad: SimplexQuadrature) -> float:
    """3-d functional minus 1/(2 pi |u|), scaled by log(1/|u|)^(-1/2)."""
    if path.d != 3:
        raise ValueError(f"expected a 3-d path, got d={path.d}")
    u = _as_offset(u, 3)
    r = float(np.linalg.norm(u))
    if r == 0:
        raise ValueError("offset must be nonzero")
    if r >= 1:
        raise ValueError("offset norm must be < 1 for the log scaling")
    compensated = silt_epsilon(path, eps, u, quad) - 1.0 / (2.0 * math.pi * r)
    return compensated / math.sqrt(math.log(1.0 / r))


# ---------------------------------------------------------------------------
# Hermite-product expansion terms
# ---------------------------------------------------------------------------

def _coerce_index(idx, d) -> tuple:
    if isinstance(idx, MultiIndex):
        idx = idx.n
    idx = tuple(int(v) for v in idx)
    if len(idx) != d:
        raise ValueError(f"multi-index has {len(idx)} entries, path has d={d}")
    if any(v < 0 for v in idx):
        raise ValueError("multi-index entries must be non-negative")
    return idx


def chaos_term(path: Path, idx, u, quad: SimplexQuadrature,
               normalization: str = "per-factor") -> float:
    """One multi-index term of the Hermite-product expansion.

    Per node the integrand is the product over coordinates j of

        H_{n_j}((w_j(t)-w_j(s))/sqrt(t-s)) * H_{n_j}(u_j/sqrt(t-s))

    normalized by 1/n_j! ("per-factor": each Hermite factor carries
    1/sqrt(n_j!)) or by 1/sqrt(n_j!) ("single"), times the Gaussian kernel of
    u at variance t-s.  Factors are combined as sign/log-magnitude pairs and
    the node sum is compensated, since the products alternate in sign across
    hundreds of orders of magnitude.
    """
    idx = _coerce_index(idx, path.d)
    u = _as_offset(u, path.d)
    r2 = float(np.dot(u, u))
    if r2 == 0:
        raise ValueError("offset must be nonzero")
    if normalization not in ("per-factor", "single"):
        raise ValueError(f"unknown normalization {normalization!r}")
    s, t = quad.nodes[:, 0], quad.nodes[:, 1]
    tau = t - s
    sqrt_tau = np.sqrt(tau)
    inc = path.at(t) - path.at(s)
    log_mag = log_gaussian_kernel_batch(r2, path.d, tau) + np.log(quad.weights)
    sign = np.ones_like(tau)
    for j, n in enumerate(idx):
        if n == 0:
            continue  # both Hermite factors are identically 1
        sg_w, lg_w = normalized_hermite_log_sign(n, inc[:, j] / sqrt_tau)
        sg_u, lg_u = normalized_hermite_log_sign(n, u[j] / sqrt_tau)
        sign *= sg_w * sg_u
        log_mag += lg_w + lg_u
        if normalization == "single":
            log_mag += 0.5 * float(gammaln(n + 1))
    peak = np.max(log_mag)
    if not np.isfinite(peak):
        return 0.0
    return float(peak_exp_sum(sign, log_mag, peak))


def peak_exp_sum(sign, log_mag, peak) -> float:
    """exp(peak) * compensated sum of sign * exp(log_mag - peak)."""
    terms = sign * np.exp(log_mag - peak)
    return math.exp(peak) * math.fsum(terms.tolist())


def chaos_term_bound(path: Path, idx, u, szego_c: float = None,
                     log_branch_c: float = None,
                     normalization: str = "per-factor") -> float:
    """Deterministic log-envelope for |chaos_term| at this path, index, offset.

    Power branch (every (d, k) except d = 2 with k = 0): chains the Szego
    envelope at exponent 1/4 over the offset factors, the Cauchy-integral
    envelope over the increment factors (which contributes exp(2 Z_j) with
    Z_j the running maximum of |w_j|), and the exact bound

        I(k/2, d, u/sqrt(2)) <= 2^(k/2-1) Gamma((k+d)/2 - 1)
                                / (pi^(d/2) (|u|/sqrt(2))^(k+d-2))

    on the remaining simplex moment integral.  Logarithmic branch (d = 2,
    k = 0): c0 * log(1/|u|) with c0 from calibrate_log_branch_constant.
    """
    idx = _coerce_index(idx, path.d)
    u = _as_offset(u, path.d)
    r = float(np.linalg.norm(u))
    if r == 0:
        raise ValueError("offset must be nonzero")
    if normalization not in ("per-factor", "single"):
        raise ValueError(f"unknown normalization {normalization!r}")
    d = path.d
    k = sum(idx)
    if d == 2 and k == 0:
        if r >= 1:
            raise ValueError("log-branch envelope needs |u| < 1")
        c0 = calibrate_log_branch_constant() if log_branch_c is None else log_branch_c
        return math.log(c0) + math.log(math.log(1.0 / r))
    if szego_c is None:
        szego_c = 1.05 * calibrate_szego_constant(0.25, 200)
    z_sum = float(np.sum(path.max_abs()))
    log_c = (k + 0.5 * d - 2.0) * math.log(2.0) + float(gammaln(0.5 * (k + d) - 1.0)) \
        - 0.5 * d * math.log(math.pi)
    for n in idx:
        log_c += math.log(szego_c) + 0.5 + 0.5 * float(gammaln(n + 1)) \
            - math.log(max(n, 1)) / 12.0
        if normalization == "single":
            log_c += 0.5 * float(gammaln(n + 1))
    return log_c + 2.0 * z_sum - (k + d - 2.0) * math.log(r)


# ---------------------------------------------------------------------------
# Order-k functionals and their renormalization operators
# ---------------------------------------------------------------------------

def dynkin_B(k: int, l: int, phi):
    """Sum of phi over monotone surjections {1..k} -> {1..l}, as a function on
    l arguments.

    Monotone surjections biject with compositions of k into l positive parts
    (the block sizes), so the sum has C(k-1, l-1) terms.
    """
    if not 1 <= l <= k:
        raise ValueError(f"need 1 <= l <= k, got l={l}, k={k}")
    compositions = []
    for cuts in combinations(range(1, k), l - 1):
        edges = (0,) + cuts + (k,)
        compositions.append(tuple(b - a for a, b in zip(edges[:-1], edges[1:])))

    def summed(*args):
        if len(args) != l:
            raise ValueError(f"expected {l} arguments, got {len(args)}")
        total = 0.0
        for comp in compositions:
            expanded = []
            for value, count in zip(args, comp):
                expanded.extend([value] * count)
            total += phi(*expanded)
        return total

    return summed


def gaussian_mollifier(x, eps: float):
    """Planar Gaussian mollifier in variance parameterization: the density of
    N(0, eps I_2).  Within the scale family delta^-2 q(./delta) this is the
    member at delta = sqrt(eps)."""
    return gaussian_kernel_batch(np.asarray(x, dtype=float), eps, d=2)


def dynkin_T(path: Path, k: int, eps: float, phi, q_kernel=None,
             quad: SimplexQuadrature = None, quad3=None) -> float:
    """Order-k mollified multiple-intersection functional of a planar path.

    Integrates the product of q_eps over consecutive increments against phi
    over the ordered k-simplex; supported for k = 2 (using a triangle rule)
    and k = 3 (using a tensor rule on the 3-simplex).
    """
    if path.d != 2:
        raise ValueError(f"order-k functionals are planar only, got d={path.d}")
    if k not in (2, 3):
        raise ValueError(f"only k in {{2, 3}} supported at desk scale, got {k}")
    if not eps > 0:
        raise ValueError(f"mollification scale must be positive, got {eps}")
    if q_kernel is None:
        q_kernel = gaussian_mollifier
    if k == 2:
        if quad is None:
            quad = SimplexQuadrature.gauss_legendre(48)
        s, t = quad.nodes[:, 0], quad.nodes[:, 1]
        dens = q_kernel(path.at(t) - path.at(s), eps)
        return float(np.dot(quad.weights, dens * _eval_symbol(phi, (s, t))))
    if quad3 is None:
        quad3 = simplex3_gauss_legendre(12)
    nodes, weights = quad3
    v1 = path.at(nodes[:, 0])
    v2 = path.at(nodes[:, 1])
    v3 = path.at(nodes[:, 2])
    dens = q_kernel(v2 - v1, eps) * q_kernel(v3 - v2, eps)
    phi_vals = _eval_symbol(phi, (nodes[:, 0], nodes[:, 1], nodes[:, 2]))
    return float(np.dot(weights, phi_vals * dens))


def _eval_symbol(phi, columns):
    """Evaluate a simplex symbol on node columns, vectorized when it can be."""
    try:
        values = phi(*columns)
        values = np.broadcast_to(np.asarray(values, dtype=float),
                                 columns[0].shape).copy()
        return values
    except Exception:
        return np.array([float(phi(*point)) for point in zip(*columns)])


def dynkin_renormalized_sum(path: Path, k: int, eps: float, phi,
                            q_kernel=None, quad: SimplexQuadrature = None,
                            quad3=None, line_order: int = 48) -> float:
    """Log-weighted combination of the order-l functionals of the collapsed
    symbols: sum over l <= k of (log(eps)/(2 pi))^(k-l) T_l with the order-l
    symbol obtained from phi by summing over monotone surjections.

    The mean of an order-l functional diverges like (log(1/v)/(2 pi))^(l-1)
    with v the mollifier's variance, so the log in the weights must be the
    log of the variance for the divergences to cancel; with the
    variance-parameterized Gaussian mollifier that is log(eps) itself.  The
    l = 1 functional has no mollifier factor and reduces to a line integral
    over [0, 1].
    """
    if k not in (2, 3):
        raise ValueError(f"only k in {{2, 3}} supported at desk scale, got {k}")
    log_scale = math.log(eps)
    total = 0.0
    for l in range(1, k + 1):
        weight = (log_scale / (2.0 * math.pi)) ** (k - l)
        collapsed = phi if l == k else dynkin_B(k, l, phi)
        if l == 1:
            x, w = np.polynomial.legendre.leggauss(line_order)
            x = 0.5 * (x + 1.0)
            w = 0.5 * w
            term = float(np.dot(w, _eval_symbol(collapsed, (x,))))
        else:
            term = dynkin_T(path, l, eps, collapsed, q_kernel=q_kernel,
                            quad=quad, quad3=quad3)
        total += weight * term
    return total


# ---------------------------------------------------------------------------
# Path import/export
# ---------------------------------------------------------------------------

def path_to_csv(path: Path, fp) -> None:
    """Write columns t, w1, ..., wd with a mandatory header row."""
    header = "t," + ",".join(f"w{j + 1}" for j in range(path.d))
    fp.write(header + "\n")
    for i in range(path.m + 1):
        row = [f"{path.times[i]:.17g}"] + [f"{v:.17g}" for v in path.values[i]]
        fp.write(",".join(row) + "\n")


def path_from_csv(fp, seed: int = 0) -> Path:
    header = fp.readline().strip()
    cols = header.split(",")
    if cols[0] != "t" or len(cols) < 2:
        raise ValueError(f"expected header 't,w1,...', got {header!r}")
    data = np.loadtxt(fp, delimiter=",", ndmin=2)
    return Path(times=data[:, 0], values=data[:, 1:], seed=seed)


def path_to_binary(path: Path, fp) -> None:
    """Little-endian cache: magic, d, m, seed, then times and values."""
    fp.write(_BINARY_MAGIC)
    fp.write(struct.pack("<IQq", path.d, path.m, path.seed))
    fp.write(path.times.astype("<f8").tobytes())
    fp.write(path.values.astype("<f8").tobytes())


def path_from_binary(fp) -> Path:
    magic = fp.read(len(_BINARY_MAGIC))
    if magic != _BINARY_MAGIC:
        raise ValueError(f"bad magic bytes {magic!r}")
    d, m, seed = struct.unpack("<IQq", fp.read(struct.calcsize("<IQq")))
    times = np.frombuffer(fp.read(8 * (m + 1)), dtype="<f8").astype(float)
    values = np.frombuffer(fp.read(8 * (m + 1) * d), dtype="<f8").astype(float)
    return Path(times=times, values=values.reshape(m + 1, d), seed=seed)
