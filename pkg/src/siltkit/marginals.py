"""Finite-dimensional marginal machinery.

Conditioning the increment w(t) - w(s) on the grid values w(t_1), ..., w(t_n)
replaces it by its projection onto the grid increments plus an independent
Gaussian remainder.  The projection coefficients are Lebesgue overlap lengths
alpha_j = |[s,t] cap [t_{j-1}, t_j]| and the remainder variance is

    sigma^2 = (t - s) - sum_j alpha_j^2 / (t_j - t_{j-1}),

the squared L^2 distance from the indicator of [s, t] to the span of the cell
indicators.  Everything else here is built from that decomposition: the
conditional Gaussian kernel, the density q of the marginal intersection
measure with respect to the Brownian marginal (a triangle integral of the
conditional kernel at eps = 0), and samplers for the Brownian marginal.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .quadrature import SimplexQuadrature
from .rng import stream_generator
from .specfun import log_gaussian_kernel_batch

__all__ = [
    "TimeGrid",
    "OverlapDecomposition",
    "MarginalPoint",
    "overlap_decomposition",
    "conditional_kernel",
    "marginal_density_q",
    "marginal_density_q_batch",
    "sample_mu_n",
    "marginal_batch_to_csv",
    "marginal_batch_from_csv",
]

SINGULAR_VARIANCE = 1e-12
SINGULAR_ARGUMENT = 1e-6
_JITTER = 1e-7


@dataclass(frozen=True)
class TimeGrid:
    """Partition 0 = t_0 < t_1 < ... < t_n <= 1."""

    t: np.ndarray
    uniform: bool = False

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        object.__setattr__(self, "t", t)
        if t.ndim != 1 or len(t) < 2 or t[0] != 0.0 or t[-1] > 1.0:
            raise ValueError("grid must start at 0, end at most at 1, n >= 1")
        if np.any(np.diff(t) <= 0):
            raise ValueError("grid nodes must be strictly increasing")

    @property
    def n(self) -> int:
        return len(self.t) - 1

    @property
    def cell_lengths(self) -> np.ndarray:
        return np.diff(self.t)

    @classmethod
    def make_uniform(cls, n: int) -> "TimeGrid":
        if n < 1:
            raise ValueError(f"need n >= 1 cells, got {n}")
        return cls(t=np.linspace(0.0, 1.0, n + 1), uniform=True)


@dataclass(frozen=True)
class OverlapDecomposition:
    """Overlap lengths and residual variance of one increment against a grid."""

    alpha: np.ndarray
    sigma2: float
    s: float
    t: float


@dataclass(frozen=True)
class MarginalPoint:
    """A point of R^(d x n): values at the n grid times, with implicit x_0 = 0."""

    x: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        if x.ndim != 2:
            raise ValueError("expected an (n, d) array of grid values")
        object.__setattr__(self, "x", x)


def _overlaps(s, t, grid: TimeGrid):
    """alpha rows for arrays of (s, t); returns (alpha, sigma2) batched."""
    s = np.atleast_1d(np.asarray(s, dtype=float))
    t = np.atleast_1d(np.asarray(t, dtype=float))
    left = grid.t[:-1][None, :]
    right = grid.t[1:][None, :]
    alpha = np.clip(np.minimum(t[:, None], right) - np.maximum(s[:, None], left), 0.0, None)
    sigma2 = (t - s) - np.sum(alpha * alpha / grid.cell_lengths[None, :], axis=1)
    sigma2 = np.clip(sigma2, 0.0, t - s)  # cancellation can leave tiny negatives
    return alpha, sigma2


def overlap_decomposition(s: float, t: float, grid: TimeGrid) -> OverlapDecomposition:
    """Projection data of the increment over [s, t] onto the grid increments."""
    if not 0.0 <= s < t <= 1.0:
        raise ValueError(f"need 0 <= s < t <= 1, got s={s}, t={t}")
    alpha, sigma2 = _overlaps(s, t, grid)
    return OverlapDecomposition(alpha=alpha[0], sigma2=float(sigma2[0]), s=s, t=t)


def _point_values(x, grid_n: int) -> np.ndarray:
    if isinstance(x, MarginalPoint):
        x = x.x
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[0] != grid_n:
        raise ValueError(f"expected grid values of shape ({grid_n}, d), got {x.shape}")
    return x


def conditional_kernel(s: float, t: float, grid: TimeGrid, eps: float, u,
                       x) -> float:
    """Conditional expectation of the eps-kernel of w(t) - w(s) - u given the
    grid values: a Gaussian kernel at variance eps + sigma^2 evaluated at the
    projected increment minus u."""
    if eps < 0:
        raise ValueError(f"eps must be >= 0, got {eps}")
    dec = overlap_decomposition(s, t, grid)
    x = _point_values(x, grid.n)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    increments = np.diff(np.vstack([np.zeros((1, x.shape[1])), x]), axis=0)
    arg = (dec.alpha / grid.cell_lengths) @ increments - u
    variance = eps + dec.sigma2
    if variance == 0.0:
        if float(np.linalg.norm(arg)) == 0.0:
            raise ValueError("degenerate kernel: zero variance at zero argument")
        return 0.0
    sq = float(np.dot(arg, arg))
    return float(np.exp(log_gaussian_kernel_batch(sq, x.shape[1], variance)))


def _effective_nodes(grid: TimeGrid, quad: SimplexQuadrature):
    """Quadrature nodes with projection data, singular nodes subdivided.

    A node where sigma^2 vanishes (both endpoints on the grid) is replaced by
    four jittered copies at quarter weight; the variance there is positive
    again, so the near-Dirac kernel is integrated over a resolved
    neighborhood instead of being sampled on a measure-zero set.
    """
    s, t = quad.nodes[:, 0].copy(), quad.nodes[:, 1].copy()
    w = quad.weights.copy()
    alpha, sigma2 = _overlaps(s, t, grid)
    bad = sigma2 < SINGULAR_VARIANCE
    if bad.any():
        keep = ~bad
        parts = [(s[keep], t[keep], w[keep])]
        for si, ti, wi in zip(s[bad], t[bad], w[bad]):
            children_s, children_t, children_w = [], [], []
            for ds, dt in ((-_JITTER, -_JITTER), (-_JITTER, _JITTER),
                           (_JITTER, -_JITTER), (_JITTER, _JITTER)):
                cs, ct = si + ds, ti + dt
                if 0.0 < cs < ct < 1.0:
                    children_s.append(cs)
                    children_t.append(ct)
            share = wi / max(len(children_s), 1)
            children_w = [share] * len(children_s)
            parts.append((np.array(children_s), np.array(children_t),
                          np.array(children_w)))
        s = np.concatenate([p[0] for p in parts])
        t = np.concatenate([p[1] for p in parts])
        w = np.concatenate([p[2] for p in parts])
        alpha, sigma2 = _overlaps(s, t, grid)
        still = sigma2 < SINGULAR_VARIANCE
        if still.any():  # depth-one policy: drop, the set has measure zero
            s, t, w = s[~still], t[~still], w[~still]
            alpha, sigma2 = alpha[~still], sigma2[~still]
    return w, alpha, sigma2


def marginal_density_q_batch(u, grid: TimeGrid, points: np.ndarray,
                             quad: SimplexQuadrature,
                             chunk: int = 512) -> np.ndarray:
    """Density values q(x) for a batch of points of shape (count, n, d).

    The density at x is the triangle integral of the zero-eps conditional
    kernel, here with the uniform-grid coefficient n alpha_j folded in.
    Chunked over samples to keep the (nodes x samples) workspace bounded.
    """
    if not grid.uniform:
        raise ValueError("the marginal density is defined on the uniform grid only")
    points = np.asarray(points, dtype=float)
    if points.ndim != 3 or points.shape[1] != grid.n:
        raise ValueError(f"expected (count, {grid.n}, d) points, got {points.shape}")
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if float(np.linalg.norm(u)) == 0.0:
        raise ValueError("offset must be nonzero")
    d = points.shape[2]
    w, alpha, sigma2 = _effective_nodes(grid, quad)
    coeff = alpha * grid.n  # alpha_j / cell length on the uniform grid
    log_norm = -0.5 * d * np.log(2.0 * np.pi * sigma2)  # per-node, hoisted
    inv_two_var = 0.5 / sigma2
    out = np.empty(len(points))
    increments = np.diff(points, axis=1, prepend=np.zeros((len(points), 1, d)))
    for lo in range(0, len(points), chunk):
        hi = min(lo + chunk, len(points))
        # args[q, s, :] = sum_j coeff[q, j] * increments[s, j, :] - u
        args = np.einsum("qj,sjc->qsc", coeff, increments[lo:hi]) - u
        sq = np.einsum("qsc,qsc->qs", args, args)
        with np.errstate(under="ignore"):
            out[lo:hi] = w @ np.exp(log_norm[:, None] - inv_two_var[:, None] * sq)
    return out


def marginal_density_q(u, grid: TimeGrid, x, quad: SimplexQuadrature) -> float:
    """Density of the marginal intersection measure at one point."""
    x = _point_values(x, grid.n)
    return float(marginal_density_q_batch(u, grid, x[None], quad)[0])


def sample_mu_n(n: int, d: int, seed: int, count: int, stream: int = 0) -> np.ndarray:
    """i.i.d. draws of (W(1/n), ..., W(1)): shape (count, n, d).

    Cumulative sums of N(0, 1/n) increments; deterministic given (seed, stream).
    """
    if n < 1 or d < 1 or count < 1:
        raise ValueError("n, d and count must all be >= 1")
    gen = stream_generator(seed, stream)
    increments = gen.standard_normal((count, n, d)) * np.sqrt(1.0 / n)
    return np.cumsum(increments, axis=1)


def marginal_batch_to_csv(points: np.ndarray, fp) -> None:
    """Rows are flattened points; columns are labeled x{j}_{coordinate}."""
    points = np.asarray(points, dtype=float)
    count, n, d = points.shape
    header = ",".join(f"x{j + 1}_{c + 1}" for j in range(n) for c in range(d))
    fp.write(header + "\n")
    flat = points.reshape(count, n * d)
    for row in flat:
        fp.write(",".join(f"{v:.17g}" for v in row) + "\n")


def marginal_batch_from_csv(fp) -> np.ndarray:
    header = fp.readline().strip().split(",")
    labels = [tuple(map(int, name[1:].split("_"))) for name in header]
    n = max(j for j, _ in labels)
    d = max(c for _, c in labels)
    data = np.loadtxt(fp, delimiter=",", ndmin=2)
    return data.reshape(len(data), n, d)
