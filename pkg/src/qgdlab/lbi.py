"""Constructive hard instances behind the communication lower bounds.

* AVG: nodes hold packing points, a valid output is a net point close to their
  average; one node's input can be decoded from any valid output once the
  other inputs are known.
* EQ: quadratic inputs centred on packing points; the optimal value separates
  "all inputs equal" from "some pair differs".
* DISJ: cone objectives whose sum reaches zero only at a commonly selected point.

Random draws use ``numpy.random.default_rng(seed)`` (PCG64).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .bits import bits_to_hex, hex_to_bits
from .errors import (
    FormatError,
    InfeasiblePackingError,
    InstanceConstructionError,
    NetMembershipError,
    OracleScaleError,
    ParametersOutOfRangeError,
    RecoveryError,
)
from .geometry import (
    NetSet,
    PackingSet,
    _lex_grid,
    as_vector,
    codeword_to_point,
    epsilon_net,
    grid_packing,
    index_to_codeword,
    min_pairwise_distance,
)
from .objectives import ConeObjective, QuadraticSum, canonical_form, total

EQ_SEPARATION_SLACK = 1e-6
DISJ_SLACK = 1e-9


@dataclass(frozen=True)
class LbParams:
    N: int
    d: int
    eps: float
    beta: float

    def __post_init__(self):
        if self.N < 1 or self.d < 1 or not self.eps > 0 or not self.beta > 0:
            raise ParametersOutOfRangeError("need N, d >= 1 and eps, beta > 0")

    @property
    def scale(self) -> float:
        """(eps / beta)^(1/2): the output accuracy in point space."""
        return math.sqrt(self.eps / self.beta)


# --- AVG ---------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class AvgInstance:
    params: LbParams
    packing: PackingSet
    net: NetSet
    codewords: tuple

    @property
    def points(self) -> np.ndarray:
        return np.stack([codeword_to_point(self.packing, b) for b in self.codewords])

    @property
    def xstar(self) -> np.ndarray:
        return self.points.mean(axis=0)


def avg_packing(params: LbParams) -> PackingSet:
    delta = 3 * params.N * params.scale
    try:
        S = grid_packing(params.d, delta)
    except InfeasiblePackingError as exc:
        raise ParametersOutOfRangeError(f"packing with delta = 3N(eps/beta)^1/2 = {delta:.6g}: {exc}") from None
    if len(S) < 2:
        raise ParametersOutOfRangeError(f"packing with delta = {delta:.6g} has fewer than 2 points")
    return S


def make_avg_instance(params: LbParams, seed: int = 0, codewords=None) -> AvgInstance:
    """AVG instance with packing separation 3N (eps/beta)^(1/2) and net radius (eps/4beta)^(1/2).

    Codewords are drawn uniformly from the packing's index range unless given.
    """
    S = avg_packing(params)
    T = epsilon_net(params.d, math.sqrt(params.eps / (4 * params.beta)))
    if codewords is None:
        rng = np.random.default_rng(seed)
        codewords = [index_to_codeword(S, int(i)) for i in rng.integers(0, len(S), params.N)]
    codewords = tuple(codewords)
    if len(codewords) != params.N:
        raise ParametersOutOfRangeError(f"expected {params.N} codewords")
    for b in codewords:
        codeword_to_point(S, b)
    return AvgInstance(params, S, T, codewords)


def avg_output_valid(inst: AvgInstance, t) -> bool:
    t = as_vector(t, inst.params.d)
    if not inst.net.contains(t):
        raise NetMembershipError("output is not a point of the net")
    return bool(np.linalg.norm(inst.xstar - t) <= inst.params.scale)


def recovery_target(inst: AvgInstance, t, others) -> np.ndarray:
    """v = N t - (N-1) y, with y the mean of the other nodes' points."""
    N = inst.params.N
    t = as_vector(t, inst.params.d)
    if N == 1:
        return t.copy()
    others = list(others)
    if len(others) != N - 1:
        raise ParametersOutOfRangeError(f"expected {N - 1} other codewords")
    y = np.stack([codeword_to_point(inst.packing, b) for b in others]).mean(axis=0)
    return N * t - (N - 1) * y


def recovery_candidates(inst: AvgInstance, t, others) -> np.ndarray:
    """Indices of packing points within N (eps/beta)^(1/2) of the recovery target."""
    v = recovery_target(inst, t, others)
    dist = np.linalg.norm(inst.packing.points - v, axis=1)
    return np.flatnonzero(dist <= inst.params.N * inst.params.scale)


def symmetrisation_recover(inst: AvgInstance, t, others) -> str:
    """Decode node 1's codeword from an output ``t`` close to the average and the other inputs.

    ``t`` need not be a net point; it only has to be within (eps/beta)^(1/2)
    of the true average.
    """
    hits = recovery_candidates(inst, t, others)
    if hits.size == 0:
        raise RecoveryError("no packing point near N t - (N-1) y; the output was not valid")
    # separation 3N (eps/beta)^(1/2) leaves room for a single candidate
    assert hits.size == 1, hits
    return index_to_codeword(inst.packing, int(hits[0]))


# --- EQ ----------------------------------------------------------------------


def eq_separation(params: LbParams) -> float:
    """delta_eq = 2 (N eps / beta)^(1/2) (1 + 1e-6), so beta0 delta_eq^2 / 2 > 2 eps."""
    return 2 * math.sqrt(params.N * params.eps / params.beta) * (1 + EQ_SEPARATION_SLACK)


@dataclass(frozen=True, eq=False)
class EqInstance:
    params: LbParams
    packing: PackingSet
    codewords: tuple
    objectives: tuple

    @property
    def beta0(self) -> float:
        return self.params.beta / self.params.N

    @property
    def equal(self) -> bool:
        return len(set(self.codewords)) == 1


def _pair_gap(beta0: float, p, q) -> float:
    """f_i + f_j at the midpoint of p and q."""
    m = (np.asarray(p) + np.asarray(q)) / 2
    return beta0 * float(((m - p) ** 2).sum() + ((m - q) ** 2).sum())


def make_eq_instance(params: LbParams, codewords, packing: PackingSet | None = None) -> EqInstance:
    """Equality instance with f_i = beta0 ||x - tau(b_i)||^2, beta0 = beta / N.

    Fails unless f_i + f_j > 2 eps at the midpoint of the closest pair of
    packing points and of the closest pair of distinct selected points.
    """
    beta0 = params.beta / params.N
    if packing is None:
        try:
            packing = grid_packing(params.d, eq_separation(params))
        except InfeasiblePackingError as exc:
            raise ParametersOutOfRangeError(str(exc)) from None
    if len(packing) < 2:
        raise ParametersOutOfRangeError("equality packing has fewer than 2 points")
    codewords = tuple(codewords)
    if len(codewords) != params.N:
        raise ParametersOutOfRangeError(f"expected {params.N} codewords")
    pts = np.stack([codeword_to_point(packing, b) for b in codewords])

    closest = min_pairwise_distance(packing.points)
    if not beta0 * closest**2 / 2 > 2 * params.eps:
        raise InstanceConstructionError(
            f"packing too tight: closest-pair gap {beta0 * closest**2 / 2:.6g} <= 2 eps = {2 * params.eps:.6g}"
        )
    distinct = np.unique(pts, axis=0)
    if distinct.shape[0] >= 2:
        dist = np.linalg.norm(distinct[:, None, :] - distinct[None, :, :], axis=-1)
        dist[np.diag_indices_from(dist)] = np.inf
        i, j = np.unravel_index(np.argmin(dist), dist.shape)
        gap = _pair_gap(beta0, distinct[i], distinct[j])
        if not gap > 2 * params.eps:
            raise InstanceConstructionError(f"selected-pair gap {gap:.6g} <= 2 eps = {2 * params.eps:.6g}")
    objectives = tuple(QuadraticSum.single(beta0, p) for p in pts)
    return EqInstance(params, packing, codewords, objectives)


def eq_adjudicate(r: float, eps: float) -> int:
    return 1 if r <= 2 * eps else 0


def exact_solver(objectives, eps: float):
    """The exact minimiser and the exact minimum value."""
    F = total(objectives)
    z = canonical_form(F).xstar
    return z, F.value(z)


def qgd_solver(objectives, eps: float, seed: int = 0):
    """Run the metered QGD protocol to F-accuracy eps.

    The value estimate is F(z) evaluated from the objectives; a protocol would
    need one more quantised exchange to report it, which is not metered here.
    """
    from .qgd import declared_spectrum, derive_params
    from .runtime import qgd_as_protocol, run_protocol

    objectives = list(objectives)
    F = total(objectives)
    d = F.d
    W = math.sqrt(d)
    alpha, beta = declared_spectrum(objectives, 2.0)
    # F(z) - F* = A ||z - x*||^2
    eps_x = 0.99 * math.sqrt(eps / F.curvature)
    params = derive_params(alpha, beta, W, min(eps_x, 0.5 * W))
    result = run_protocol(qgd_as_protocol(params, objectives), objectives, seed=seed)
    z = np.asarray(result.output)
    return z, F.value(z)


@dataclass(frozen=True)
class EqOutcome:
    bit: int
    truth: int
    r: float
    z: np.ndarray

    @property
    def correct(self) -> bool:
        return self.bit == self.truth


def eq_end_to_end(inst: EqInstance, solver: Callable = exact_solver) -> EqOutcome:
    z, r = solver(inst.objectives, inst.params.eps)
    return EqOutcome(eq_adjudicate(r, inst.params.eps), int(inst.equal), float(r), np.asarray(z))


# --- DISJ --------------------------------------------------------------------


def disj_candidates(packing: PackingSet, beta: float, eps: float) -> np.ndarray:
    """Grid of spacing <= eps / (4 beta sqrt(d)) over [0,1]^d, plus the packing points."""
    d = packing.d
    if d > 2:
        raise OracleScaleError("disjointness grid search is limited to d <= 2")
    h = eps / (4 * beta * math.sqrt(d))
    m = math.ceil(1.0 / h) + 1
    grid = _lex_grid(np.linspace(0.0, 1.0, m), d)
    return np.vstack([grid, packing.points])


def disj_gap_check(selections, packing: PackingSet, beta: float, eps: float):
    """(grid-search infimum of sum_i f_{b_i}, "NO" if intersecting else "YES")."""
    X = disj_candidates(packing, beta, eps)
    vals = sum(ConeObjective(packing, b, beta, eps).values(X) for b in selections)
    inf = float(np.min(vals))
    return inf, ("NO" if inf <= eps / 2 else "YES")


def intersecting(selections) -> bool:
    return any(all(b[k] == "1" for b in selections) for k in range(len(selections[0])))


def disj_exhaustive(packing: PackingSet, beta: float, eps: float, N: int):
    """Grid-search infimum for every N-tuple of selections over the packing.

    Yields ``(selections, infimum)``. Cone values are tabulated once per
    selection; the last tuple position is vectorised.
    """
    X = disj_candidates(packing, beta, eps)
    n = len(packing)
    labels = [format(k, f"0{n}b") for k in range(2**n)]
    table = np.stack([ConeObjective(packing, b, beta, eps).values(X) for b in labels])
    for head in itertools.product(range(len(labels)), repeat=N - 1):
        base = table[list(head)].sum(axis=0) if head else 0.0
        mins = (table + base).min(axis=1)
        for k, lab in enumerate(labels):
            yield tuple(labels[j] for j in head) + (lab,), float(mins[k])


# --- codeword files ----------------------------------------------------------


def dumps_codewords(codewords, D: int) -> str:
    """Header ``codewords D n``, then one hex codeword per line."""
    codewords = list(codewords)
    if any(len(b) != D for b in codewords):
        raise FormatError(f"every codeword must have {D} bits")
    return "".join([f"codewords {D} {len(codewords)}\n"] + [bits_to_hex(b) + "\n" for b in codewords])


def loads_codewords(text: str) -> tuple:
    rows = [ln.split() for ln in text.splitlines() if ln.strip()]
    if not rows or len(rows[0]) != 3 or rows[0][0] != "codewords":
        raise FormatError("codeword file must start with 'codewords D n'")
    D, n = int(rows[0][1]), int(rows[0][2])
    if len(rows) != n + 1 or any(len(r) != 1 for r in rows[1:]):
        raise FormatError(f"expected {n} hex codewords")
    return tuple(hex_to_bits(r[0], D) for r in rows[1:])


# --- bound expressions -------------------------------------------------------


def bound_values(N: int, d: int, eps: float, beta: float, kappa: float = 2.0, W: float | None = None) -> dict:
    """Raw magnitudes of the lower and upper bound expressions (no hidden constants).

    Every logarithm is clamped below at 1; kappa below 2 is run as 2.
    """
    W = math.sqrt(d) if W is None else W
    kappa = max(kappa, 2.0)

    def lg(v):
        return max(1.0, math.log2(v))

    return {
        "lower_randomised": N * d * lg(beta * d / (N * eps)),
        "lower_deterministic": N * d * lg(beta * d / eps),
        "upper_qgd": N * d * kappa * math.log2(kappa) * lg(beta * W / eps),
    }


__all__ = [
    "LbParams",
    "AvgInstance",
    "EqInstance",
    "EqOutcome",
    "make_avg_instance",
    "avg_output_valid",
    "symmetrisation_recover",
    "recovery_candidates",
    "recovery_target",
    "eq_separation",
    "make_eq_instance",
    "eq_adjudicate",
    "eq_end_to_end",
    "exact_solver",
    "qgd_solver",
    "disj_candidates",
    "disj_gap_check",
    "disj_exhaustive",
    "intersecting",
    "bound_values",
    "dumps_codewords",
    "loads_codewords",
]
