"""Quadrature rules on the triangle {0 <= s < t <= 1} and adaptive refinement.

Two fixed rules cover the toolkit's needs:

* a tensor Gauss-Legendre rule pushed onto the triangle through
  (a, b) -> (s, t) = (a, a + b(1 - a)) with the Jacobian (1 - a) folded into
  the weights (interior nodes, no node on the singular diagonal t = s);
* a diagonal-refined rule that tiles the gap variable x = t - s with
  geometrically shrinking panels, resolving integrands whose mass sits at
  x ~ |u|^2 for very small offsets, which the plain tensor rule cannot see.

The adaptive machinery at the bottom refines a list of starting cells
(rectangles, or triangles in mapped coordinates) by greedy quadtree splitting
until the summed local error estimates drop below a relative tolerance; it is
what integrates the log-singular entropy integrand.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ConvergenceError",
    "SimplexQuadrature",
    "simplex3_gauss_legendre",
    "adaptive_partition_integral",
    "triangle_grid_cells",
]


class ConvergenceError(RuntimeError):
    """An iterative numerical procedure failed to reach its tolerance."""


def _unit_gauss_legendre(n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


@dataclass(frozen=True)
class SimplexQuadrature:
    """Nodes (s, t) strictly inside the triangle with weights summing to 1/2."""

    nodes: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        weights = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)
        if nodes.ndim != 2 or nodes.shape[1] != 2 or len(weights) != len(nodes):
            raise ValueError("nodes must be (N, 2) with matching weights")
        s, t = nodes[:, 0], nodes[:, 1]
        if not (np.all(s > 0) and np.all(t < 1) and np.all(s < t)):
            raise ValueError("every node must satisfy 0 < s < t < 1")
        if np.any(weights <= 0):
            raise ValueError("weights must be positive")
        total = float(np.sum(weights))
        if abs(total - 0.5) > 1e-12:
            raise ValueError(f"weights sum to {total}, expected 1/2")

    def __len__(self):
        return len(self.weights)

    @property
    def gaps(self) -> np.ndarray:
        """t - s per node."""
        return self.nodes[:, 1] - self.nodes[:, 0]

    def integrate(self, f) -> float:
        """Apply the rule to a vectorized integrand f(s, t)."""
        return float(np.dot(self.weights, f(self.nodes[:, 0], self.nodes[:, 1])))

    @classmethod
    def gauss_legendre(cls, n_a: int = 64, n_b: int = None) -> "SimplexQuadrature":
        """Tensor rule mapped by s = a, t = a + b(1 - a); default 64 x 64."""
        if n_b is None:
            n_b = n_a
        a, wa = _unit_gauss_legendre(n_a)
        b, wb = _unit_gauss_legendre(n_b)
        aa, bb = np.meshgrid(a, b, indexing="ij")
        s = aa.ravel()
        t = (aa + bb * (1.0 - aa)).ravel()
        w = (np.outer(wa, wb) * (1.0 - aa)).ravel()
        return cls(np.column_stack([s, t]), w)

    @classmethod
    def geometric_diagonal(cls, levels: int = 40, order_gap: int = 4,
                           order_pos: int = 12) -> "SimplexQuadrature":
        """Diagonal-refined rule on (x, s) coordinates, x = t - s.

        The gap axis is tiled with panels [2^-(j+1), 2^-j] for j < levels plus
        the final sliver [0, 2^-levels]; each panel carries a Gauss-Legendre
        cross with the position variable s on (0, 1 - x).
        """
        if levels < 1:
            raise ValueError("levels must be >= 1")
        xg, wxg = _unit_gauss_legendre(order_gap)
        sg, wsg = _unit_gauss_legendre(order_pos)
        edges = [2.0 ** (-j) for j in range(levels + 1)] + [0.0]
        s_list, t_list, w_list = [], [], []
        for hi, lo in zip(edges[:-1], edges[1:]):
            x = lo + (hi - lo) * xg
            wx = (hi - lo) * wxg
            # position nodes scale with the remaining room 1 - x
            xx, ss = np.meshgrid(x, sg, indexing="ij")
            wxx, wss = np.meshgrid(wx, wsg, indexing="ij")
            s = ss * (1.0 - xx)
            w = wxx * wss * (1.0 - xx)
            s_list.append(s.ravel())
            t_list.append((s + xx).ravel())
            w_list.append(w.ravel())
        nodes = np.column_stack([np.concatenate(s_list), np.concatenate(t_list)])
        return cls(nodes, np.concatenate(w_list))


def simplex3_gauss_legendre(n: int = 12):
    """Tensor Gauss-Legendre rule on {0 < t1 < t2 < t3 < 1}.

    Returns (nodes, weights) with nodes of shape (n^3, 3); weights sum to the
    simplex volume 1/6.
    """
    a, wa = _unit_gauss_legendre(n)
    A, B, C = np.meshgrid(a, a, a, indexing="ij")
    WA, WB, WC = np.meshgrid(wa, wa, wa, indexing="ij")
    t1 = A
    t2 = A + B * (1.0 - A)
    t3 = t2 + C * (1.0 - t2)
    w = WA * WB * WC * (1.0 - A) ** 2 * (1.0 - B)
    nodes = np.column_stack([t1.ravel(), t2.ravel(), t3.ravel()])
    return nodes, w.ravel()


# ---------------------------------------------------------------------------
# Adaptive refinement over a partition of the triangle
# ---------------------------------------------------------------------------

def triangle_grid_cells(grid_nodes) -> list:
    """Partition of {s < t} into the rectangles and diagonal triangles cut by
    the horizontal/vertical lines through the given breakpoints."""
    g = np.asarray(grid_nodes, dtype=float)
    if g.ndim != 1 or len(g) < 2 or np.any(np.diff(g) <= 0):
        raise ValueError("grid nodes must be strictly increasing with >= 2 entries")
    cells = []
    n = len(g) - 1
    for i in range(n):
        cells.append(("tri", g[i], g[i + 1], 0.0, 0.0))
        for j in range(i + 1, n):
            cells.append(("rect", g[i], g[i + 1], g[j], g[j + 1]))
    return cells


def _cell_apply(f, cell, box, gl):
    """Gauss-Legendre estimate of the integral of f over one sub-box of a cell.

    For 'rect' cells the box lives directly in (s, t).  For 'tri' cells the
    box lives in the unit (a, b) square mapped by s = c0 + h a,
    t = s + b (c1 - s) with Jacobian h^2 (1 - a); splitting boxes toward b = 0
    chases the t -> s edge where log-type singularities sit.
    """
    kind, c0, c1, d0, d1 = cell
    x, w = gl
    lo_a, hi_a, lo_b, hi_b = box
    xa = lo_a + (hi_a - lo_a) * x
    xb = lo_b + (hi_b - lo_b) * x
    A, B = np.meshgrid(xa, xb, indexing="ij")
    W = np.outer(w, w) * (hi_a - lo_a) * (hi_b - lo_b)
    if kind == "rect":
        s = c0 + (c1 - c0) * A
        t = d0 + (d1 - d0) * B
        jac = (c1 - c0) * (d1 - d0)
    else:
        h = c1 - c0
        s = c0 + h * A
        t = s + B * (c1 - s)
        jac = h * h * (1.0 - A)
    return float(np.sum(W * jac * f(s.ravel(), t.ravel()).reshape(s.shape)))


def adaptive_partition_integral(f, cells, rel_tol: float = 1e-6,
                                base_order: int = 8,
                                max_refinements: int = 40000,
                                min_width: float = 1e-14) -> float:
    """Greedy adaptive integral of a vectorized f(s, t) over starting cells.

    Each parameter box is scored by comparing its one-panel estimate against
    both directional bisections; the worse disagreement picks the split
    direction, so refinement toward edge singularities grades the boxes
    anisotropically instead of exploding a quadtree along the edge.  Boxes
    are split worst-first until the summed scores fall under rel_tol times
    the running total (or the width floor is reached).  Ties break on
    insertion order, so the result is deterministic.
    """
    gl = _unit_gauss_legendre(base_order)

    def splits(box):
        lo_a, hi_a, lo_b, hi_b = box
        ma, mb = 0.5 * (lo_a + hi_a), 0.5 * (lo_b + hi_b)
        return (
            [(lo_a, ma, lo_b, hi_b), (ma, hi_a, lo_b, hi_b)],
            [(lo_a, hi_a, lo_b, mb), (lo_a, hi_a, mb, hi_b)],
        )

    heap = []
    seq = 0
    total = 0.0
    err_total = 0.0

    def push(cell, box):
        nonlocal seq, total, err_total
        coarse = _cell_apply(f, cell, box, gl)
        in_a, in_b = splits(box)
        fine_a = [_cell_apply(f, cell, child, gl) for child in in_a]
        fine_b = [_cell_apply(f, cell, child, gl) for child in in_b]
        err_a = abs(sum(fine_a) - coarse)
        err_b = abs(sum(fine_b) - coarse)
        if err_a >= err_b:
            children, value, err = in_a, sum(fine_a), err_a
        else:
            children, value, err = in_b, sum(fine_b), err_b
        narrow = (box[1] - box[0]) < min_width or (box[3] - box[2]) < min_width
        if narrow:
            err = 0.0
        total += value
        err_total += err
        heapq.heappush(heap, (-err, seq, cell, children, value))
        seq += 1

    for cell in cells:
        push(cell, (0.0, 1.0, 0.0, 1.0))
    refinements = 0
    while heap and err_total > rel_tol * max(abs(total), 1e-300):
        if refinements >= max_refinements:
            raise ConvergenceError(
                f"adaptive refinement exceeded {max_refinements} splits "
                f"(remaining error {err_total:.3e} on total {total:.6e})"
            )
        neg_err, _, cell, children, value = heapq.heappop(heap)
        err_total += neg_err  # removes the popped box's score
        if -neg_err <= 0:
            break
        total -= value
        for child in children:
            push(cell, child)
        refinements += 1
    return total
