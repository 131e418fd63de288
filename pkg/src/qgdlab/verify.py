"""Seeded self-check suites behind ``qgdlab verify``.

Each suite returns a flat mapping of check name to a result record with a
boolean ``ok`` and a few diagnostic numbers.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from .codec import GRID, QuantiserConfig, bit_cost
from .geometry import (
    PackingSet,
    greedy_packing_oracle,
    grid_packing,
    index_to_codeword,
    min_pairwise_distance,
    packing_volume_bound,
)
from .lbi import (
    LbParams,
    disj_exhaustive,
    eq_end_to_end,
    intersecting,
    make_avg_instance,
    make_eq_instance,
    symmetrisation_recover,
)
from .errors import RecoveryError
from .qgd import random_instance, run_qgd

SUITES = ("codec", "packing", "qgd", "lbi")


def codec_case(rng: np.random.Generator):
    """One random (cfg, x, q) with ||x - q|| <= R, d in 1..64 and eps / R in [2^-10, 0.9]."""
    d = int(rng.integers(1, 65))
    lam = 2.0 ** rng.uniform(-10, math.log2(0.9))
    R = float(10.0 ** rng.uniform(-6, 3))
    cfg = QuantiserConfig(d, lam * R, R)
    q = rng.normal(size=d) * R * float(10.0 ** rng.uniform(-1, 3))
    u = rng.normal(size=d)
    u /= np.linalg.norm(u)
    x = q + u * R * rng.uniform(0, 1)
    return cfg, x, q


def check_codec(n_cases: int = 2000, seed: int = 0) -> dict:
    rng = np.random.default_rng(seed)
    valid = accurate = costed = True
    worst = 0.0
    for _ in range(n_cases):
        cfg, x, q = codec_case(rng)
        msg = GRID.encode(cfg, x)
        y = GRID.decode(cfg, q, msg)
        valid &= bool(np.array_equal(y, GRID.quantise(cfg, x, q)))
        err = float(np.linalg.norm(y - x))
        worst = max(worst, err / cfg.eps)
        accurate &= err <= cfg.eps
        expected = cfg.d * math.ceil(math.log2(math.ceil(cfg.R * math.sqrt(cfg.d) / cfg.eps) + 2))
        costed &= len(msg) == expected == bit_cost(cfg.d, cfg.eps, cfg.R)
    return {
        "validity": {"ok": bool(valid), "cases": n_cases},
        "accuracy": {"ok": bool(accurate), "worst_error_over_eps": worst},
        "cost": {"ok": bool(costed)},
    }


def check_packing(dims=(1, 2, 3), deltas=(0.05, 0.1, 0.3)) -> dict:
    out = {}
    for d, delta in itertools.product(dims, deltas):
        S = greedy_packing_oracle(d, delta, delta / 4)
        G = grid_packing(d, delta)
        bound = packing_volume_bound(d, delta)
        ok = len(S) >= bound
        for P in (S, G):
            if len(P) >= 2:
                ok &= min_pairwise_distance(P.points) > delta
        out[f"d={d},delta={delta}"] = {"ok": bool(ok), "greedy": len(S), "grid": len(G), "bound": bound}
    return out


def check_qgd(Ns=(2, 4), dims=(1, 4), kappas=(2.0, 10.0), eps_targets=(1e-3,), seed: int = 0) -> dict:
    out = {}
    for N, d, kappa, eps in itertools.product(Ns, dims, kappas, eps_targets):
        inst = random_instance(N, d, kappa=kappa, seed=seed)
        run = run_qgd(inst.params(eps), inst.objectives, inst.x0)
        inv = all(r.passed for r in run.reports)
        out[f"N={N},d={d},kappa={kappa:g},eps={eps:g}"] = {
            "ok": bool(inv and run.final_error <= eps and len(run.states) == run.params.T + 1),
            "final_error": run.final_error,
            "invariants": bool(inv),
            "bits": run.total_bits,
        }
    return out


def check_recovery(trials: int = 200, Ns=(2, 4, 8), seed: int = 0, perturb: float = 0.0) -> dict:
    """Recover node 1's codeword from the nearest net point (or a perturbed average)."""
    rng = np.random.default_rng(seed)
    failures = 0
    for k in range(trials):
        N = Ns[k % len(Ns)]
        # packing spacing 3N scale stays in (0.1, 0.9), so |S| >= 2
        d = int(rng.integers(1, 4))
        scale = rng.uniform(0.1, 0.9) / (3 * N)
        params = LbParams(N, d, scale**2, 1.0)
        inst = make_avg_instance(params, seed=int(rng.integers(2**31)))
        if perturb:
            u = rng.normal(size=d)
            u *= perturb * params.scale * rng.uniform(0, 1) / np.linalg.norm(u)
            t = inst.xstar + u
        else:
            t = inst.net.nearest(inst.xstar)
        try:
            failures += symmetrisation_recover(inst, t, inst.codewords[1:]) != inst.codewords[0]
        except (RecoveryError, AssertionError):
            failures += 1
    return {"ok": failures == 0, "trials": trials, "failures": failures}


def eq_cases():
    """(params, packing size) grid covering every packing size 2..8."""
    for N in (1, 2, 3):
        for d, k in [(1, 2), (1, 3), (1, 4), (1, 5), (1, 6), (1, 7), (1, 8), (2, 4), (3, 8)]:
            # per-axis spacing strictly between 1/k_axis and 1/(k_axis - 1)
            k_axis = round(k ** (1 / d))
            delta = 1.0 / (k_axis - 0.5)
            beta = 1.0
            eps = (delta / (2 * (1 + 1e-6))) ** 2 * beta / N * (1 - 1e-9)
            yield LbParams(N, d, eps, beta), k


def check_eq(solver=None) -> dict:
    out = {}
    kwargs = {} if solver is None else {"solver": solver}
    for params, k in eq_cases():
        first = make_eq_instance(params, ["0" * max(1, (k - 1).bit_length())] * params.N)
        n = len(first.packing)
        words = [index_to_codeword(first.packing, i) for i in range(n)]
        mismatches = 0
        cases = 0
        for combo in itertools.product(words, repeat=params.N):
            res = eq_end_to_end(make_eq_instance(params, combo, first.packing), **kwargs)
            mismatches += not res.correct
            cases += 1
        gap = params.beta / params.N * min_pairwise_distance(first.packing.points) ** 2 / 2
        out[f"N={params.N},d={params.d},|S|={n}"] = {
            "ok": mismatches == 0 and n == k and gap > 2 * params.eps,
            "cases": cases,
            "mismatches": mismatches,
            "gap_over_2eps": gap / (2 * params.eps),
        }
    return out


def disj_cases():
    """(packing, beta, eps, N) covering |S| in 2..6 and d in {1, 2}."""
    beta = 1.0
    for n in range(2, 7):
        delta = 1.0 / (n - 0.5)
        yield grid_packing(1, delta), beta, min(0.05, delta / 2.5), n
    yield grid_packing(2, 0.6), beta, 0.2, 4
    # 3 x 2 lattice, spacing 0.5
    pts = np.array([[a, b] for a in (0.0, 0.5, 1.0) for b in (0.0, 1.0)])
    yield PackingSet(pts, 0.49, 2), beta, 0.2, 6


def check_disj(Ns=(1, 2, 3)) -> dict:
    out = {}
    for S, beta, eps, n in disj_cases():
        for N in Ns:
            wrong = 0
            worst_no, worst_yes = 0.0, math.inf
            for sel, inf in disj_exhaustive(S, beta, eps, N):
                if intersecting(sel):
                    worst_no = max(worst_no, inf)
                    wrong += inf > 1e-9
                else:
                    worst_yes = min(worst_yes, inf)
                    wrong += inf < eps - 1e-9
            out[f"d={S.d},|S|={len(S)},N={N}"] = {
                "ok": wrong == 0,
                "max_no_infimum": worst_no,
                "min_yes_infimum_over_eps": worst_yes / eps if math.isfinite(worst_yes) else None,
            }
    return out


def check_lbi(trials: int = 200, seed: int = 0) -> dict:
    out = {"recovery": check_recovery(trials, seed=seed),
           "recovery_perturbed": check_recovery(trials, seed=seed + 1, perturb=0.9)}
    out.update({f"eq[{k}]": v for k, v in check_eq().items()})
    out.update({f"disj[{k}]": v for k, v in check_disj(Ns=(1, 2)).items()})
    return out


def run_suite(name: str, seed: int = 0) -> dict:
    if name == "all":
        return {s: run_suite(s, seed)[s] for s in SUITES}
    if name == "codec":
        res = check_codec(seed=seed)
    elif name == "packing":
        res = check_packing()
    elif name == "qgd":
        res = check_qgd(seed=seed)
    elif name == "lbi":
        res = check_lbi(seed=seed)
    else:
        raise ValueError(f"unknown suite {name!r}; choose from {', '.join(SUITES + ('all',))}")
    return {name: res}


def all_ok(result: dict) -> bool:
    return all(v["ok"] for suite in result.values() for v in suite.values())
