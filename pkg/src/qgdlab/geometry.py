"""Point packings, covering nets and codeword maps on the unit cube [0,1]^d."""

from __future__ import annotations

import io
import math
import os
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import (
    CodewordRangeError,
    DegenerateInputError,
    InfeasiblePackingError,
    OracleScaleError,
    QgdlabError,
)

# Packing-bound constant from the ball-volume estimate: C = (pi e / 2)^(1/2).
PACKING_CONSTANT = math.sqrt(math.pi * math.e / 2.0)

# Grid spacing is inflated by this factor so that "> delta" survives rounding.
SPACING_INFLATION = 1.0 + 2.0**-30

MAX_MATERIALISED_POINTS = 2**22


def as_vector(x, d: int | None = None) -> np.ndarray:
    """Coerce ``x`` to a finite 1-D float array, optionally checking its length."""
    v = np.asarray(x, dtype=float)
    if v.ndim == 0:
        v = v.reshape(1)
    if v.ndim != 1 or v.size < 1:
        raise DegenerateInputError(f"expected a non-empty vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise DegenerateInputError("vector has non-finite entries")
    if d is not None and v.size != d:
        raise DegenerateInputError(f"expected dimension {d}, got {v.size}")
    return v


def _lex_grid(axis: np.ndarray, d: int) -> np.ndarray:
    """All points of ``axis``^d in lexicographic order (first coordinate slowest)."""
    m = axis.size
    if m**d > MAX_MATERIALISED_POINTS:
        raise OracleScaleError(f"grid of {m}^{d} points is too large to materialise")
    idx = np.indices((m,) * d).reshape(d, -1).T
    return axis[idx]


def packing_volume_bound(d: int, delta: float) -> float:
    """Lower bound (d^(1/2) / (C delta))^d on the size of a greedy packing."""
    return (math.sqrt(d) / (PACKING_CONSTANT * delta)) ** d


@dataclass(frozen=True, eq=False)
class PackingSet:
    """Finite point set in [0,1]^d whose distinct points are more than ``delta`` apart.

    ``points`` is an ``(n, d)`` array; row order is the codeword enumeration order.
    """

    points: np.ndarray
    delta: float
    d: int

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != self.d:
            raise DegenerateInputError(f"points must have shape (n, {self.d})")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def codeword_length(self) -> int:
        """D = ceil(log2 |S|)."""
        n = len(self)
        return (n - 1).bit_length() if n >= 2 else 0

    @cached_property
    def _index(self) -> dict:
        return {tuple(p): i for i, p in enumerate(self.points.tolist())}

    def index_of(self, p) -> int:
        try:
            return self._index[tuple(np.asarray(p, dtype=float).tolist())]
        except KeyError:
            raise CodewordRangeError("point is not a member of the packing") from None

    def nearest(self, x) -> tuple[int, float]:
        """Index of, and distance to, the packing point nearest ``x`` (linear scan)."""
        dist = np.linalg.norm(self.points - as_vector(x, self.d), axis=1)
        i = int(np.argmin(dist))
        return i, float(dist[i])


@dataclass(frozen=True, eq=False)
class NetSet:
    """Axis-aligned grid net: the product ``axis``^d covers [0,1]^d within ``radius``."""

    axis: np.ndarray
    radius: float
    d: int

    def __len__(self) -> int:
        return self.axis.size**self.d

    @cached_property
    def points(self) -> np.ndarray:
        return _lex_grid(self.axis, self.d)

    def nearest(self, x) -> np.ndarray:
        """Nearest net point; for a product grid this is per-coordinate rounding."""
        x = as_vector(x, self.d)
        pos = np.searchsorted(self.axis, x)
        lo = np.clip(pos - 1, 0, self.axis.size - 1)
        hi = np.clip(pos, 0, self.axis.size - 1)
        pick = np.where(np.abs(self.axis[hi] - x) < np.abs(self.axis[lo] - x), hi, lo)
        return self.axis[pick]

    def contains(self, t) -> bool:
        t = np.asarray(t, dtype=float)
        if t.shape != (self.d,):
            return False
        return bool(np.all(self.nearest(t) == t))


def grid_packing(d: int, delta: float) -> PackingSet:
    """Axis-aligned grid packing with per-coordinate spacing delta * (1 + 2^-30).

    >>> len(grid_packing(2, 0.45))
    9
    """
    if d < 1:
        raise DegenerateInputError("dimension must be at least 1")
    if not delta > 0:
        raise InfeasiblePackingError("delta must be positive")
    if delta >= math.sqrt(d):
        raise InfeasiblePackingError(
            f"no two points of [0,1]^{d} are more than {delta} apart (diameter {math.sqrt(d):.6g})"
        )
    s = delta * SPACING_INFLATION
    k = math.floor(1.0 / s)
    while k > 0 and k * s > 1.0:
        k -= 1
    axis = np.arange(k + 1) * s
    return PackingSet(points=_lex_grid(axis, d), delta=float(delta), d=d)


def _ball_stencil(h: float, delta: float, d: int) -> np.ndarray:
    """Integer offsets o with ||o|| * h <= delta: the candidates an admitted point blocks."""
    r = math.floor(delta / h) + 1
    rng = np.arange(-r, r + 1)
    offsets = np.stack(np.meshgrid(*([rng] * d), indexing="ij"), axis=-1).reshape(-1, d)
    keep = np.sqrt((offsets**2).sum(axis=1)) * h <= delta
    return offsets[keep]


def greedy_packing_oracle(d: int, delta: float, candidate_spacing: float) -> PackingSet:
    """Greedy packing over a fine lattice of candidates, visited in lexicographic order.

    A candidate is admitted unless some admitted point lies within ``delta`` of it.
    The spacing is refined to the largest value not above ``candidate_spacing``
    that divides the grid-packing spacing. Test oracle only: limited to d <= 3.
    """
    if d > 3:
        raise OracleScaleError("greedy packing oracle is limited to d <= 3")
    if d < 1 or not delta > 0:
        raise DegenerateInputError("need d >= 1 and delta > 0")
    h = float(candidate_spacing)
    if not 0 < h <= delta / 4:
        raise OracleScaleError("candidate spacing must be in (0, delta/4]")
    # refine h to divide the grid-packing spacing, so grid points are candidates
    s = delta * SPACING_INFLATION
    h = s / math.ceil(s / h)

    n = math.floor(1.0 / h) + 1
    while (n - 1) * h > 1.0:
        n -= 1
    stencil = _ball_stencil(h, delta, d)
    shape = (n,) * d
    blocked = np.zeros(shape, dtype=bool)
    flat = blocked.reshape(-1)
    admitted = []
    for i in range(flat.size):
        if flat[i]:
            continue
        idx = np.unravel_index(i, shape)
        admitted.append(idx)
        cells = stencil + np.asarray(idx)
        cells = cells[np.all((cells >= 0) & (cells < n), axis=1)]
        blocked[tuple(cells.T)] = True

    points = np.asarray(admitted, dtype=float) * h
    packing = PackingSet(points=points, delta=float(delta), d=d)
    if len(packing) >= 2 and not min_pairwise_distance(packing.points) > delta:
        raise QgdlabError("greedy packing failed its own separation certificate")
    return packing


def epsilon_net(d: int, radius: float) -> NetSet:
    """Grid net of [0,1]^d with covering radius at most ``radius``.

    Per-coordinate spacing is at most 2 * radius / sqrt(d), so every point of the
    cube is within half a cell diagonal of the net.
    """
    if d < 1:
        raise DegenerateInputError("dimension must be at least 1")
    if not radius > 0:
        raise DegenerateInputError("radius must be positive")
    h = 2.0 * radius / math.sqrt(d)
    if h > 1.0:
        axis = np.array([0.5])
    else:
        m = math.ceil(1.0 / h) + 1
        axis = np.linspace(0.0, 1.0, m)
    return NetSet(axis=axis, radius=float(radius), d=d)


def codeword_to_point(S: PackingSet, bits: str) -> np.ndarray:
    """Packing point enumerated at the index spelled by ``bits`` (most significant bit first)."""
    if len(S) < 2:
        raise DegenerateInputError("codewords need a packing with at least 2 points")
    D = S.codeword_length
    if len(bits) != D or any(c not in "01" for c in bits):
        raise CodewordRangeError(f"codeword must be a {D}-bit binary string")
    i = int(bits, 2)
    if i >= len(S):
        raise CodewordRangeError(f"codeword index {i} is outside a packing of size {len(S)}")
    return S.points[i].copy()


def index_to_codeword(S: PackingSet, i: int) -> str:
    if not 0 <= i < len(S):
        raise CodewordRangeError(f"index {i} is outside a packing of size {len(S)}")
    return format(i, f"0{S.codeword_length}b")


def point_to_codeword(S: PackingSet, p) -> str:
    if len(S) < 2:
        raise DegenerateInputError("codewords need a packing with at least 2 points")
    return index_to_codeword(S, S.index_of(p))


def min_pairwise_distance(points) -> float:
    """Exact minimum Euclidean distance over all pairs (chunked O(n^2))."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts.reshape(-1, 1)
    n = pts.shape[0]
    if n < 2:
        raise DegenerateInputError("need at least two points")
    best = math.inf
    block = 512
    for start in range(0, n - 1, block):
        a = pts[start : start + block]
        b = pts[start + 1 :]
        diff = a[:, None, :] - b[None, :, :]
        dist = np.sqrt((diff**2).sum(axis=-1))
        # keep only pairs (i, j) with j > i
        rows = np.arange(a.shape[0])[:, None]
        cols = np.arange(b.shape[0])[None, :]
        dist = np.where(cols >= rows, dist, np.inf)
        best = min(best, float(dist.min()))
    return best


# --- text format -----------------------------------------------------------


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def dumps_packing(S: PackingSet) -> str:
    lines = [f"{S.d} {_fmt(S.delta)} {len(S)}"]
    lines += [" ".join(_fmt(v) for v in row) for row in S.points]
    return "\n".join(lines) + "\n"


def loads_packing(text: str) -> PackingSet:
    rows = [ln.split() for ln in text.splitlines() if ln.strip()]
    if not rows or len(rows[0]) != 3:
        raise QgdlabError("packing file must start with 'd delta n'")
    d, delta, n = int(rows[0][0]), float(rows[0][1]), int(rows[0][2])
    body = rows[1:]
    if len(body) != n or any(len(r) != d for r in body):
        raise QgdlabError(f"packing file declares {n} points of dimension {d}")
    pts = np.array(body, dtype=float).reshape(n, d)
    return PackingSet(points=pts, delta=delta, d=d)


def write_packing(S: PackingSet, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write(dumps_packing(S))


def read_packing(path: str | os.PathLike) -> PackingSet:
    with open(path, encoding="ascii") as fh:
        return loads_packing(fh.read())


def dumps_net(T: NetSet) -> str:
    """Net files share the packing layout with the covering radius in the header."""
    buf = io.StringIO()
    buf.write(f"{T.d} {_fmt(T.radius)} {len(T)}\n")
    for row in T.points:
        buf.write(" ".join(_fmt(v) for v in row) + "\n")
    return buf.getvalue()
