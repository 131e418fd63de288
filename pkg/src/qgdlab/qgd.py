"""Deterministic quantised gradient descent with two-stage quantisation.

Each round the nodes step with the last broadcast gradient estimate, send their
local gradients quantised against the coordinator's previous per-node estimate,
and the coordinator re-quantises the sum against the previous global estimate
and sends it back. Quantiser accuracy and radius shrink geometrically with the
radius schedule R_t = (2 beta / xi) mu^t W.

This module holds the round logic and a direct (in-process) driver; the metered
coordinator-model execution lives in :mod:`qgdlab.runtime`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .codec import GRID, OutOfRadiusError, QuantiserConfig
from .errors import ContractViolationError, InvalidSpectrumError, InvariantError, QgdlabError
from .objectives import QuadraticSum, canonical_form, total

POLL_BITS = 1
ACK_BITS = 1


@dataclass(frozen=True)
class QgdParams:
    alpha: float
    beta: float
    kappa: float
    alpha_eff: float
    gamma: float
    xi: float
    mu: float
    delta: float
    W: float
    eps_target: float
    T: int

    def radius(self, t: int) -> float:
        return radius_schedule(self, t)


def derive_params(alpha: float, beta: float, W: float, eps_target: float) -> QgdParams:
    """Step size, rates and round count for a declared spectrum [alpha, beta].

    Condition numbers below 2 are run as kappa = 2 by lowering alpha to beta/2.
    """
    if not alpha > 0 or not beta >= alpha:
        raise InvalidSpectrumError(f"need 0 < alpha <= beta, got alpha={alpha}, beta={beta}")
    if not W > 0:
        raise QgdlabError("W must be positive")
    if not 0 < eps_target < W:
        raise QgdlabError(f"need 0 < eps_target < W, got eps_target={eps_target}, W={W}")
    kappa = beta / alpha
    alpha_eff = alpha
    if kappa < 2:
        kappa, alpha_eff = 2.0, beta / 2.0
    gamma = 2.0 / (alpha_eff + beta)
    xi = (kappa - 1) / (kappa + 1)
    mu = 1 - 1 / (kappa + 1)
    delta = xi * (1 - xi) / 4
    T = math.ceil((kappa + 1) * math.log(W / eps_target))
    p = QgdParams(alpha, beta, kappa, alpha_eff, gamma, xi, mu, delta, W, eps_target, T)
    assert 1 / 3 <= xi < 1 and 0 < delta < 1 and mu < 1
    assert abs(2 * delta / xi + xi - mu) <= 1e-12
    assert gamma * beta <= 2
    return p


def radius_schedule(params: QgdParams, t: int) -> float:
    if t < 0:
        raise ValueError("t must be non-negative")
    return (2 * params.beta / params.xi) * params.mu**t * params.W


def round_configs(params: QgdParams, t: int, N: int, d: int, codec=GRID):
    """(node config, coordinator config) for the messages that produce round-t estimates."""
    R = radius_schedule(params, t)
    node = codec.config(d, params.delta * R / (2 * N), R / N)
    coord = codec.config(d, params.delta * R / 2, 2 * R)
    return node, coord


def gradient_bound(objectives, W: float) -> float:
    """G0 = max_i 2 A_i W bounds ||grad f_i(x)|| when x and every center lie in a set of diameter W."""
    return max(2 * f.curvature * W for f in objectives)


def bootstrap_configs(params: QgdParams, N: int, d: int, G0: float, codec=GRID):
    R0 = radius_schedule(params, 0)
    eps_node, eps_coord = params.delta * R0 / (2 * N), params.delta * R0 / 2
    # a tiny gradient bound still needs radius > accuracy for a valid quantiser
    node = codec.config(d, eps_node, max(G0, 2 * eps_node))
    coord = codec.config(d, eps_coord, max(N * G0 + eps_coord, 2 * eps_coord))
    return node, coord


def round_bits(params: QgdParams, t: int, N: int, d: int, codec=GRID) -> int:
    node, coord = round_configs(params, t, N, d, codec)
    return N * node.B + N * coord.B


def bootstrap_bits(params: QgdParams, N: int, d: int, G0: float, codec=GRID) -> int:
    node, coord = bootstrap_configs(params, N, d, G0, codec)
    return N * POLL_BITS + N * node.B + N * coord.B


@dataclass
class RoundState:
    t: int
    x: np.ndarray
    q_global: np.ndarray
    q_local: np.ndarray  # (N, d)
    R_t: float

    def copy(self) -> "RoundState":
        return RoundState(self.t, self.x.copy(), self.q_global.copy(), self.q_local.copy(), self.R_t)


def _grads(objectives, x) -> np.ndarray:
    return np.stack([f.grad(x) for f in objectives])


def bootstrap_round(params: QgdParams, objectives, x0=None, codec=GRID, G0: float | None = None) -> RoundState:
    """Build the t = 0 state so that Q2 and Q3 hold before the first round.

    Nodes quantise their gradients at x0 against the origin with radius G0; the
    coordinator re-quantises the sum against the origin.
    """
    objectives = list(objectives)
    N, d = len(objectives), objectives[0].d
    x0 = np.zeros(d) if x0 is None else np.asarray(x0, dtype=float).copy()
    G0 = gradient_bound(objectives, params.W) if G0 is None else float(G0)
    grads = _grads(objectives, x0)
    worst = float(np.linalg.norm(grads, axis=1).max())
    if worst > G0:
        raise ContractViolationError(f"gradient norm {worst:.6g} exceeds the declared bound G0 = {G0:.6g}")
    node_cfg, coord_cfg = bootstrap_configs(params, N, d, G0, codec)
    zero = np.zeros(d)
    q_local = np.stack([codec.quantise(node_cfg, g, zero) for g in grads])
    q_global = codec.quantise(coord_cfg, q_local.sum(axis=0), zero)
    return RoundState(0, x0, q_global, q_local, radius_schedule(params, 0))


def qgd_round(params: QgdParams, state: RoundState, objectives, codec=GRID, xstar=None) -> RoundState:
    """One round t -> t+1. Radius violations are reported as invariant failures."""
    objectives = list(objectives)
    N, d = len(objectives), objectives[0].d
    t1 = state.t + 1
    node_cfg, coord_cfg = round_configs(params, t1, N, d, codec)
    x1 = state.x - params.gamma * state.q_global
    grads = _grads(objectives, x1)
    try:
        q_local = np.stack([codec.quantise(node_cfg, g, qi) for g, qi in zip(grads, state.q_local)])
        r = q_local.sum(axis=0)
        q_global = codec.quantise(coord_cfg, r, state.q_global)
    except OutOfRadiusError as exc:
        raise _diagnose(params, state, objectives, xstar, x1, t1, exc) from exc
    return RoundState(t1, x1, q_global, q_local, radius_schedule(params, t1))


def _diagnose(params, state, objectives, xstar, x1, t1, exc) -> InvariantError:
    if xstar is None:
        xstar = canonical_form(total(objectives)).xstar
    report = check_invariants(params, state, objectives, xstar)
    broken = list(report.failed)
    if float(np.linalg.norm(x1 - xstar)) > params.mu**t1 * params.W:
        broken.append("Q1")
    names = sorted(set(broken)) or ["codec radius"]
    return InvariantError(
        f"round {t1}: quantiser radius exceeded ({exc}); broken upstream: {', '.join(names)}",
        which=names,
        round_index=t1,
    )


@dataclass
class InvariantReport:
    t: int
    q1: tuple  # (lhs, rhs)
    q2: list  # per node (lhs, rhs)
    q3: tuple
    slack: float

    @property
    def q1_margin(self) -> float:
        return self.q1[1] - self.q1[0]

    @property
    def q2_margins(self) -> list:
        return [rhs - lhs for lhs, rhs in self.q2]

    @property
    def q2_margin(self) -> float:
        return min(self.q2_margins)

    @property
    def q3_margin(self) -> float:
        return self.q3[1] - self.q3[0]

    @property
    def q1_ok(self) -> bool:
        return self.q1_margin >= -self.slack

    @property
    def q2_ok(self) -> list:
        return [m >= -self.slack for m in self.q2_margins]

    @property
    def q3_ok(self) -> bool:
        return self.q3_margin >= -self.slack

    @property
    def failed(self) -> tuple:
        out = []
        if not self.q1_ok:
            out.append("Q1")
        if not all(self.q2_ok):
            out.append("Q2")
        if not self.q3_ok:
            out.append("Q3")
        return tuple(out)

    @property
    def passed(self) -> bool:
        return not self.failed


def check_invariants(params: QgdParams, state: RoundState, objectives, xstar, slack: float | None = None) -> InvariantReport:
    """Left- and right-hand sides of Q1-Q3 at ``state``.

    ``slack`` defaults to 1e-10 * R_t and only affects the pass flags.
    """
    objectives = list(objectives)
    N = len(objectives)
    R = state.R_t
    grads = _grads(objectives, state.x)
    q1 = (float(np.linalg.norm(state.x - np.asarray(xstar))), params.mu**state.t * params.W)
    q2 = [
        (float(np.linalg.norm(g - qi)), params.delta * R / (2 * N))
        for g, qi in zip(grads, state.q_local)
    ]
    q3 = (float(np.linalg.norm(grads.sum(axis=0) - state.q_global)), params.delta * R)
    return InvariantReport(state.t, q1, q2, q3, 1e-10 * R if slack is None else slack)


@dataclass
class QgdRun:
    params: QgdParams
    states: list
    reports: list
    xstar: np.ndarray
    bootstrap_bits: int
    round_bits: list = field(default_factory=list)

    @property
    def final(self) -> RoundState:
        return self.states[-1]

    @property
    def final_error(self) -> float:
        return float(np.linalg.norm(self.final.x - self.xstar))

    @property
    def total_bits(self) -> int:
        return self.bootstrap_bits + sum(self.round_bits)


def run_qgd(params: QgdParams, objectives, x0=None, codec=GRID, G0=None, rounds: int | None = None, stop_on_failure=True) -> QgdRun:
    """Direct driver: bootstrap then ``rounds`` (default T) rounds, checking Q1-Q3 each time.

    Bits are the payload sizes the metered protocol would send, excluding the
    closing acknowledgements.
    """
    objectives = list(objectives)
    N, d = len(objectives), objectives[0].d
    xstar = canonical_form(total(objectives)).xstar
    G0 = gradient_bound(objectives, params.W) if G0 is None else G0
    state = bootstrap_round(params, objectives, x0, codec, G0)
    run = QgdRun(params, [state], [check_invariants(params, state, objectives, xstar)], xstar,
                 bootstrap_bits(params, N, d, G0, codec))
    for _ in range(params.T if rounds is None else rounds):
        if stop_on_failure and not run.reports[-1].passed:
            break
        state = qgd_round(params, state, objectives, codec, xstar)
        run.states.append(state)
        run.reports.append(check_invariants(params, state, objectives, xstar))
        run.round_bits.append(round_bits(params, state.t, N, d, codec))
    return run


@dataclass
class QgdInstance:
    objectives: list
    alpha: float
    beta: float
    W: float
    x0: np.ndarray
    seed: int | None = None

    @property
    def N(self) -> int:
        return len(self.objectives)

    @property
    def d(self) -> int:
        return self.objectives[0].d

    @property
    def xstar(self) -> np.ndarray:
        return canonical_form(total(self.objectives)).xstar

    def params(self, eps_target: float) -> QgdParams:
        return derive_params(self.alpha, self.beta, self.W, eps_target)


def declared_spectrum(objectives, kappa: float) -> tuple[float, float]:
    """(alpha, beta) valid for the sum while each node stays beta/N-smooth.

    beta = N * max_i 2 A_i; alpha = beta / kappa must not exceed the true
    curvature 2 A of the sum.
    """
    N = len(objectives)
    beta = N * max(2 * f.curvature for f in objectives)
    kappa = max(kappa, 2.0)
    alpha = beta / kappa
    true_alpha = 2 * total(objectives).curvature
    if alpha > true_alpha * (1 + 1e-12):
        raise InvalidSpectrumError(
            f"kappa={kappa} declares alpha={alpha:.6g} above the true curvature {true_alpha:.6g}"
        )
    return min(alpha, true_alpha), beta


def random_instance(N: int, d: int, kappa: float = 2.0, seed: int = 0, terms_per_node: int = 1,
                    weight_range=(0.5, 1.0)) -> QgdInstance:
    """Seeded quadratic instance with centers uniform in [0,1]^d and x0 at the origin."""
    rng = np.random.default_rng(seed)
    lo, hi = weight_range
    objectives = [
        QuadraticSum(rng.uniform(lo, hi, terms_per_node) / terms_per_node, rng.random((terms_per_node, d)))
        for _ in range(N)
    ]
    alpha, beta = declared_spectrum(objectives, kappa)
    return QgdInstance(objectives, alpha, beta, math.sqrt(d), np.zeros(d), seed)


def canonical_instance() -> QgdInstance:
    """N = 2, d = 1: f1 = x^2, f2 = (x - 1)^2, started at x0 = 0; minimiser 0.5."""
    objectives = [QuadraticSum.single(1.0, [0.0]), QuadraticSum.single(1.0, [1.0])]
    alpha, beta = declared_spectrum(objectives, 2.0)
    return QgdInstance(objectives, alpha, beta, 1.0, np.zeros(1))
