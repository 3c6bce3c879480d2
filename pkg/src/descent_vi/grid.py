"""Uniform finite-difference grids on intervals and rectangles.

Only interior nodes carry unknowns; Dirichlet boundary values are zero.  In
2D the unknown vector is ordered with the x index outermost, i.e. node
``(i, j)`` sits at position ``i * ny + j`` (``numpy.ravel`` C order of an
``(nx, ny)`` array).

The negative Laplacian ``-Δ_h`` is the standard 3-point / 5-point stencil.
The H¹ inner product is realized through it, ``<u, v> = w · uᵀ(-Δ_h)v`` with
``w`` the cell volume, so energies, gradients and norms all share one matrix.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .errors import ConfigurationError, ContractError, NumericalError

__all__ = [
    "Grid",
    "EigenPair",
    "build_grid",
    "check_field",
    "apply_neg_laplacian",
    "h1_inner",
    "h1_norm",
    "l2_inner",
    "lq_norm",
    "eigenpairs",
    "positive_part",
    "negative_part",
    "grid_to_json",
    "grid_from_json",
    "field_to_json",
    "field_from_json",
    "field_to_csv",
    "field_from_csv",
]


def _neg_laplacian_1d(n: int, h: float) -> sp.csr_matrix:
    main = np.full(n, 2.0 / h**2)
    off = np.full(n - 1, -1.0 / h**2)
    return sp.diags([off, main, off], [-1, 0, 1], format="csr")


@dataclass(frozen=True)
class Grid:
    """Tensor-product grid of interior nodes on ``[0, L_1] x ... x [0, L_d]``."""

    dimension: int
    extents: tuple[float, ...]
    counts: tuple[int, ...]

    @cached_property
    def spacings(self) -> tuple[float, ...]:
        return tuple(L / (n + 1) for L, n in zip(self.extents, self.counts))

    @property
    def size(self) -> int:
        return int(np.prod(self.counts))

    @property
    def shape(self) -> tuple[int, ...]:
        return self.counts

    @cached_property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacings))

    @property
    def volume(self) -> float:
        """Measure of the domain, |Ω|."""
        return float(np.prod(self.extents))

    @cached_property
    def axes(self) -> tuple[np.ndarray, ...]:
        """Interior node coordinates along each axis."""
        return tuple(
            np.arange(1, n + 1) * h for n, h in zip(self.counts, self.spacings)
        )

    @cached_property
    def nodes(self) -> np.ndarray:
        """Coordinates of the interior nodes, shape ``(size, dimension)``."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    @cached_property
    def weights(self) -> np.ndarray:
        return np.full(self.size, self.cell_volume)

    @cached_property
    def stiffness(self) -> sp.csr_matrix:
        """Sparse matrix of ``-Δ_h`` (symmetric M-matrix)."""
        ops = [_neg_laplacian_1d(n, h) for n, h in zip(self.counts, self.spacings)]
        if self.dimension == 1:
            return ops[0]
        nx, ny = self.counts
        return (
            sp.kron(ops[0], sp.identity(ny)) + sp.kron(sp.identity(nx), ops[1])
        ).tocsr()

    @cached_property
    def center_index(self) -> int:
        """Flat index of the node nearest the domain center."""
        idx = [n // 2 for n in self.counts]
        return int(np.ravel_multi_index(idx, self.counts))

    def reflect(self, u: np.ndarray, axis: int = 0) -> np.ndarray:
        """Mirror a field across the midplane normal to ``axis``."""
        return np.flip(u.reshape(self.counts), axis=axis).ravel()

    def zeros(self) -> np.ndarray:
        return np.zeros(self.size)

    def evaluate(self, func) -> np.ndarray:
        """Sample ``func(*coords)`` at the interior nodes."""
        return np.asarray(func(*self.nodes.T), dtype=float) * np.ones(self.size)

    def header(self) -> dict:
        return {
            "dimension": self.dimension,
            "extents": list(self.extents),
            "counts": list(self.counts),
        }


@dataclass(frozen=True)
class EigenPair:
    """An eigenpair of ``-Δ_h`` with the field normalized to unit L² norm."""

    value: float
    field: np.ndarray = field(repr=False)
    modes: tuple[int, ...] = ()


def build_grid(
    dimension: int, extents: Sequence[float], interior_counts: Sequence[int]
) -> Grid:
    """Uniform grid with spacing ``extent / (count + 1)`` along each axis.

    >>> build_grid(1, [1.0], [3]).axes[0]
    array([0.25, 0.5 , 0.75])
    """
    if dimension not in (1, 2):
        raise ConfigurationError(f"dimension must be 1 or 2, got {dimension!r}")
    extents = tuple(float(e) for e in extents)
    counts = tuple(int(c) for c in interior_counts)
    if len(extents) != dimension or len(counts) != dimension:
        raise ConfigurationError(
            f"need {dimension} extents and counts, got {len(extents)} and {len(counts)}"
        )
    for e in extents:
        if not (math.isfinite(e) and e > 0):
            raise ConfigurationError(f"extents must be positive, got {extents}")
    for c in counts:
        if c < 3:
            raise ConfigurationError(
                f"interior node counts must be >= 3, got {counts}"
            )
    return Grid(dimension, extents, counts)


def check_field(grid: Grid, u, name: str = "field") -> np.ndarray:
    """Return ``u`` as a float array after checking it conforms to ``grid``."""
    u = np.asarray(u, dtype=float)
    if u.ndim != 1 or u.shape[0] != grid.size:
        raise ContractError(
            f"{name} has shape {u.shape}, grid expects ({grid.size},)"
        )
    return u


def _finite(u: np.ndarray, what: str) -> np.ndarray:
    bad = np.flatnonzero(~np.isfinite(u))
    if bad.size:
        raise NumericalError(f"nonfinite {what} at node {bad[0]}", index=int(bad[0]))
    return u


def apply_neg_laplacian(grid: Grid, u) -> np.ndarray:
    u = check_field(grid, u)
    return _finite(grid.stiffness @ u, "-Δ_h u")


def h1_inner(grid: Grid, u, v) -> float:
    """Discrete ``∫∇u·∇v``, i.e. ``w · uᵀ(-Δ_h)v``."""
    u = check_field(grid, u, "u")
    v = check_field(grid, v, "v")
    return float(grid.cell_volume * (u @ (grid.stiffness @ v)))


def h1_norm(grid: Grid, u) -> float:
    return math.sqrt(max(h1_inner(grid, u, u), 0.0))


def l2_inner(grid: Grid, u, v) -> float:
    u = check_field(grid, u, "u")
    v = check_field(grid, v, "v")
    return float(grid.cell_volume * (u @ v))


def lq_norm(grid: Grid, u, q: float = 2.0) -> float:
    """Quadrature-weighted ``(∫|u|^q)^{1/q}``."""
    if not q >= 1:
        raise ContractError(f"q must be >= 1, got {q}")
    u = np.abs(check_field(grid, u))
    if not u.any():
        return 0.0
    # scale out the maximum so large q does not overflow
    top = u.max()
    return float(top * (grid.cell_volume * np.sum((u / top) ** q)) ** (1.0 / q))


def positive_part(u: np.ndarray) -> np.ndarray:
    return np.maximum(u, 0.0)


def negative_part(u: np.ndarray) -> np.ndarray:
    return np.maximum(-u, 0.0)


def _sine_mode(n: int, k: int) -> np.ndarray:
    # sin(kπ m/(n+1)), m = 1..n, built from the first half so that the mode
    # is exactly (anti)symmetric under reflection in floating point
    m = np.arange(1, n + 1)
    mirror = n + 1 - m
    j = np.minimum(m, mirror)
    vals = np.sin(k * np.pi * j / (n + 1))
    if k % 2 == 0:
        vals = np.where(m > mirror, -vals, vals)
        vals[m == mirror] = 0.0
    return vals


def _axis_eigenvalue(n: int, h: float, k: int) -> float:
    return 4.0 / h**2 * math.sin(k * math.pi / (2 * (n + 1))) ** 2


def _normalize(grid: Grid, vec: np.ndarray) -> np.ndarray:
    vec = vec / math.sqrt(grid.cell_volume * float(vec @ vec))
    c = vec[grid.center_index]
    scale = np.abs(vec).max()
    if c < -1e-12 * scale:
        vec = -vec
    elif abs(c) <= 1e-12 * scale:
        first = vec[np.flatnonzero(np.abs(vec) > 1e-12 * scale)[0]]
        if first < 0:
            vec = -vec
    return vec


def eigenpairs(grid: Grid, k: int, method: str = "closed_form") -> list[EigenPair]:
    """The ``k`` smallest eigenpairs of ``-Δ_h``, eigenvalues nondecreasing.

    ``closed_form`` builds the tensor-product sine modes, which are exact
    eigenvectors of the uniform stencil; degenerate eigenvalues are ordered
    by their mode indices.  ``dense`` calls a symmetric dense eigensolver and
    is intended for cross-checks on small grids.
    """
    if not 1 <= k <= grid.size:
        raise ContractError(f"k must lie in [1, {grid.size}], got {k}")
    if method == "dense":
        vals, vecs = scipy.linalg.eigh(
            grid.stiffness.toarray(), subset_by_index=[0, k - 1]
        )
        return [
            EigenPair(float(vals[i]), _normalize(grid, vecs[:, i])) for i in range(k)
        ]
    if method != "closed_form":
        raise ConfigurationError(f"unknown eigen method {method!r}")

    per_axis = [
        range(1, min(k, n) + 1) for n in grid.counts
    ]
    candidates = []
    for modes in np.ndindex(*[len(r) for r in per_axis]):
        idx = tuple(m + 1 for m in modes)
        lam = sum(
            _axis_eigenvalue(n, h, m)
            for n, h, m in zip(grid.counts, grid.spacings, idx)
        )
        candidates.append((lam, idx))
    candidates.sort()
    out = []
    for lam, idx in candidates[:k]:
        vec = _sine_mode(grid.counts[0], idx[0])
        for axis in range(1, grid.dimension):
            vec = np.multiply.outer(vec, _sine_mode(grid.counts[axis], idx[axis]))
        out.append(EigenPair(float(lam), _normalize(grid, vec.ravel()), idx))
    return out


# -- serialization -----------------------------------------------------------


def grid_to_json(grid: Grid) -> str:
    return json.dumps(grid.header(), sort_keys=True)


def grid_from_json(text: str) -> Grid:
    data = json.loads(text)
    return build_grid(data["dimension"], data["extents"], data["counts"])


def field_to_json(grid: Grid, u) -> str:
    u = check_field(grid, u)
    return json.dumps({"grid": grid.header(), "values": [float(x) for x in u]})


def field_from_json(text: str) -> tuple[Grid, np.ndarray]:
    data = json.loads(text)
    g = grid_from_json(json.dumps(data["grid"]))
    return g, check_field(g, data["values"])


def field_to_csv(grid: Grid, u) -> str:
    """Coordinate columns followed by the value column, one node per row."""
    u = check_field(grid, u)
    names = ["x", "y"][: grid.dimension] + ["value"]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(names)
    for coords, val in zip(grid.nodes, u):
        writer.writerow([repr(float(c)) for c in coords] + [repr(float(val))])
    return buf.getvalue()


def field_from_csv(grid: Grid, text: str) -> np.ndarray:
    rows = list(csv.reader(io.StringIO(text)))
    values = [float(r[-1]) for r in rows[1:]]
    return check_field(grid, values)
