"""Input-function families: sums of weighted squared distances and cone functions."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .bits import bits_to_hex, check_bits, hex_to_bits
from .errors import (
    DegenerateCurvatureError,
    FormatError,
    IllPosedConeError,
    ShapeError,
)
from .geometry import PackingSet, read_packing


class Differentiable(Protocol):
    d: int

    def value(self, x: np.ndarray) -> float: ...

    def grad(self, x: np.ndarray) -> np.ndarray: ...


def _point(x, d: int) -> np.ndarray:
    v = np.asarray(x, dtype=float)
    if v.ndim == 0:
        v = v.reshape(1)
    if v.shape != (d,):
        raise ShapeError(f"expected a point of dimension {d}, got shape {v.shape}")
    return v


@dataclass(frozen=True)
class QuadraticTerm:
    weight: float
    center: tuple


@dataclass(frozen=True, eq=False)
class QuadraticSum:
    """F(x) = sum_j a_j ||x - y_j||^2 with ``weights`` a (k,) and ``centers`` y (k, d)."""

    weights: np.ndarray
    centers: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.weights, dtype=float).reshape(-1)
        y = np.asarray(self.centers, dtype=float)
        if y.ndim == 1:
            y = y.reshape(1, -1) if a.size == 1 else y.reshape(-1, 1)
        if y.ndim != 2 or y.shape[0] != a.size or y.shape[1] < 1:
            raise ShapeError("need one center row per weight")
        if np.any(a < 0) or not np.all(np.isfinite(a)) or not np.all(np.isfinite(y)):
            raise ShapeError("weights must be finite and non-negative, centers finite")
        a.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "weights", a)
        object.__setattr__(self, "centers", y)

    @classmethod
    def from_terms(cls, terms) -> "QuadraticSum":
        terms = list(terms)
        return cls(np.array([t.weight for t in terms]), np.array([t.center for t in terms]))

    @classmethod
    def single(cls, weight: float, center) -> "QuadraticSum":
        return cls(np.array([weight]), np.asarray(center, dtype=float).reshape(1, -1))

    @property
    def d(self) -> int:
        return self.centers.shape[1]

    @property
    def terms(self) -> list[QuadraticTerm]:
        return [QuadraticTerm(float(a), tuple(y)) for a, y in zip(self.weights, self.centers)]

    @property
    def curvature(self) -> float:
        """A = sum_j a_j; the function is 2A-strongly convex and 2A-smooth."""
        return float(self.weights.sum())

    def value(self, x) -> float:
        x = _point(x, self.d)
        return float(np.dot(self.weights, ((x - self.centers) ** 2).sum(axis=1)))

    def grad(self, x) -> np.ndarray:
        x = _point(x, self.d)
        return 2.0 * (self.weights[:, None] * (x - self.centers)).sum(axis=0)

    def __add__(self, other: "QuadraticSum") -> "QuadraticSum":
        if other.d != self.d:
            raise ShapeError("cannot add quadratic sums of different dimension")
        return QuadraticSum(
            np.concatenate([self.weights, other.weights]),
            np.vstack([self.centers, other.centers]),
        )


def quad_eval(f: QuadraticSum, x) -> float:
    return f.value(x)


def quad_grad(f: QuadraticSum, x) -> np.ndarray:
    return f.grad(x)


def total(fs) -> QuadraticSum:
    """The aggregate F = sum_i f_i as a single quadratic sum."""
    fs = list(fs)
    out = fs[0]
    for f in fs[1:]:
        out = out + f
    return out


@dataclass(frozen=True, eq=False)
class CanonicalQuadratic:
    """F(x) = A ||x - xstar||^2 + C."""

    A: float
    xstar: np.ndarray
    C: float

    def value(self, x) -> float:
        x = _point(x, self.xstar.size)
        return float(self.A * ((x - self.xstar) ** 2).sum() + self.C)


def canonical_form(f: QuadraticSum) -> CanonicalQuadratic:
    A = f.curvature
    if not A > 0:
        raise DegenerateCurvatureError("sum of weights must be positive")
    xstar = (f.weights[:, None] * f.centers).sum(axis=0) / A
    return CanonicalQuadratic(A=A, xstar=xstar, C=f.value(xstar))


@dataclass(frozen=True, eq=False)
class ConeObjective:
    """Non-convex bump function over a packing.

    The value is beta * ||x - s|| inside the radius-eps/beta ball around each
    selected packing point s, and eps everywhere else.
    """

    packing: PackingSet
    selected: str
    beta: float
    eps: float

    def __post_init__(self):
        check_bits(self.selected)
        if len(self.selected) != len(self.packing):
            raise IllPosedConeError("selection needs one bit per packing point")
        if not (self.beta > 0 and self.eps > 0):
            raise IllPosedConeError("beta and eps must be positive")
        if self.packing.delta < 2.0 * self.eps / self.beta:
            raise IllPosedConeError(
                f"packing separation {self.packing.delta} is below 2*eps/beta = {2 * self.eps / self.beta}"
            )
        sel = np.array([c == "1" for c in self.selected], dtype=bool)
        object.__setattr__(self, "_centers", self.packing.points[sel])

    @property
    def d(self) -> int:
        return self.packing.d

    @property
    def reach(self) -> float:
        return self.eps / self.beta

    def values(self, X) -> np.ndarray:
        """Vectorised evaluation at the rows of ``X``."""
        X = np.asarray(X, dtype=float).reshape(-1, self.d)
        if self._centers.shape[0] == 0:
            return np.full(X.shape[0], float(self.eps))
        diff = X[:, None, :] - self._centers[None, :, :]
        near = np.sqrt((diff**2).sum(axis=-1)).min(axis=1)
        return np.where(near < self.reach, self.beta * near, float(self.eps))

    def value(self, x) -> float:
        return float(self.values(_point(x, self.d)[None, :])[0])

    def grad(self, x) -> np.ndarray:
        x = _point(x, self.d)
        if self._centers.shape[0] == 0:
            return np.zeros(self.d)
        dist = np.linalg.norm(self._centers - x, axis=1)
        j = int(np.argmin(dist))
        if dist[j] >= self.reach or dist[j] == 0.0:
            return np.zeros(self.d)
        return self.beta * (x - self._centers[j]) / dist[j]


def cone_eval(f: ConeObjective, x) -> float:
    return f.value(x)


@dataclass(frozen=True)
class ProbeResult:
    passed: bool
    violated: str | None = None
    witness: tuple | None = None
    lhs: float | None = None
    rhs: float | None = None

    def __bool__(self) -> bool:
        return self.passed


def convexity_smoothness_probe(
    f: Differentiable,
    alpha: float,
    beta: float,
    sample_pairs: int = 256,
    seed: int = 0,
    rtol: float = 1e-9,
) -> ProbeResult:
    """Check strong convexity (alpha) and smoothness (beta) on seeded pairs in [0,1]^d.

    Returns the first violating pair as the witness.
    """
    if alpha > beta:
        raise ValueError("alpha must not exceed beta")
    rng = np.random.default_rng(seed)
    for _ in range(sample_pairs):
        x, y = rng.random(f.d), rng.random(f.d)
        dg = f.grad(x) - f.grad(y)
        dx = x - y
        sq = float(dx @ dx)
        inner = float(dg @ dx)
        if inner < alpha * sq * (1 - rtol):
            return ProbeResult(False, "convexity", (x, y), inner, alpha * sq)
        gnorm, xnorm = float(np.linalg.norm(dg)), math.sqrt(sq)
        if gnorm > beta * xnorm * (1 + rtol):
            return ProbeResult(False, "smoothness", (x, y), gnorm, beta * xnorm)
    return ProbeResult(True)


# --- text format -----------------------------------------------------------


def dumps_quadsum(f: QuadraticSum) -> str:
    lines = [f"quadsum {f.d} {f.weights.size}"]
    for a, y in zip(f.weights, f.centers):
        lines.append(" ".join(format(float(v), ".17g") for v in (a, *y)))
    return "\n".join(lines) + "\n"


def loads_quadsum(text: str) -> QuadraticSum:
    rows = [ln.split() for ln in text.splitlines() if ln.strip()]
    if not rows or rows[0][0] != "quadsum" or len(rows[0]) != 3:
        raise FormatError("objective file must start with 'quadsum d n'")
    d, n = int(rows[0][1]), int(rows[0][2])
    body = rows[1:]
    if len(body) != n or any(len(r) != d + 1 for r in body):
        raise FormatError(f"expected {n} rows of 'a y_1 .. y_{d}'")
    arr = np.array(body, dtype=float).reshape(n, d + 1)
    return QuadraticSum(arr[:, 0], arr[:, 1:])


def dumps_cone(f: ConeObjective, packing_path: str) -> str:
    """``cone <packing file> <nbits> <hex selection> <beta> <eps>``."""
    return (
        f"cone {packing_path} {len(f.selected)} {bits_to_hex(f.selected)} "
        f"{float(f.beta):.17g} {float(f.eps):.17g}\n"
    )


def loads_cone(text: str, base_dir: str | os.PathLike = ".") -> ConeObjective:
    parts = text.split()
    if len(parts) != 6 or parts[0] != "cone":
        raise FormatError("cone file must read 'cone <packing> <nbits> <hex> <beta> <eps>'")
    path = parts[1] if os.path.isabs(parts[1]) else os.path.join(base_dir, parts[1])
    packing = read_packing(path)
    bits = hex_to_bits(parts[3], int(parts[2]))
    return ConeObjective(packing, bits, float(parts[4]), float(parts[5]))


def read_objective(path: str | os.PathLike):
    with open(path, encoding="ascii") as fh:
        text = fh.read()
    if text.lstrip().startswith("cone"):
        return loads_cone(text, os.path.dirname(os.fspath(path)))
    return loads_quadsum(text)


def write_objective(f: QuadraticSum, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write(dumps_quadsum(f))
