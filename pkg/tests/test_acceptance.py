"""Acceptance criteria 1-10, each at its stated tolerance.

Every test records a one-line verdict; ``conftest.py`` prints them at the end
of the session.
"""

import hashlib
import itertools
import math
import time

import numpy as np
import pytest

from qgdlab.cli import execute_run, write_csv, RUN_COLUMNS
from qgdlab.codec import GRID, QuantiserConfig
from qgdlab.geometry import (
    PACKING_CONSTANT,
    PackingSet,
    greedy_packing_oracle,
    grid_packing,
    index_to_codeword,
    min_pairwise_distance,
)
from qgdlab.lbi import (
    LbParams,
    disj_exhaustive,
    eq_end_to_end,
    eq_separation,
    exact_solver,
    intersecting,
    make_avg_instance,
    make_eq_instance,
    symmetrisation_recover,
)
from qgdlab.runtime import dumps_transcript, qgd_as_protocol, run_protocol
from qgdlab.qgd import random_instance

VERDICTS = {}

SUITE = list(itertools.product((2, 4, 8), (1, 4, 32), (2.0, 10.0), (1e-3, 1e-6)))


def verdict(n, ok, detail):
    VERDICTS[n] = (bool(ok), detail)


# --- shared QGD sweep ----------------------------------------------------------


def run_sweep(seed=0):
    runs = []
    for N, d, kappa, eps in SUITE:
        inst = random_instance(N, d, kappa=kappa, seed=seed)
        params = inst.params(eps)
        states = []
        spec = qgd_as_protocol(params, inst.objectives, x0=inst.x0, observer=states.append)
        res = run_protocol(spec, inst.objectives, seed=seed)
        runs.append({"key": (N, d, kappa, eps), "inst": inst, "params": params, "states": states, "result": res})
    return runs


@pytest.fixture(scope="module")
def sweep():
    t0 = time.perf_counter()
    runs = run_sweep()
    return runs, time.perf_counter() - t0


# --- 1 -------------------------------------------------------------------------


def codec_corpus(n=10_000, seed=2024):
    rng = np.random.default_rng(seed)
    for _ in range(n):
        d = int(rng.integers(1, 65))
        lam = 2.0 ** rng.uniform(-10, math.log2(0.9))
        R = float(10.0 ** rng.uniform(-5, 3))
        cfg = QuantiserConfig(d, lam * R, R)
        q = rng.normal(size=d) * R * float(10.0 ** rng.uniform(-1, 3))
        u = rng.normal(size=d)
        x = q + u / np.linalg.norm(u) * R * rng.uniform(0, 1)
        yield cfg, x, q


def run_codec_corpus():
    digest = hashlib.sha256()
    bad = {"validity": 0, "accuracy": 0, "cost": 0}
    for cfg, x, q in codec_corpus():
        msg = GRID.encode(cfg, x)
        y = GRID.decode(cfg, q, msg)
        bad["validity"] += not np.array_equal(y, GRID.quantise(cfg, x, q))
        bad["accuracy"] += not np.linalg.norm(y - x) <= cfg.eps
        expected = cfg.d * math.ceil(math.log2(math.ceil(cfg.R * math.sqrt(cfg.d) / cfg.eps) + 2))
        bad["cost"] += len(msg.bits) != expected
        digest.update(msg.bits.encode())
        digest.update(y.tobytes())
    return bad, digest.hexdigest()


def test_criterion_1_codec_contract():
    t0 = time.perf_counter()
    bad, _ = run_codec_corpus()
    elapsed = time.perf_counter() - t0
    ok = not any(bad.values()) and elapsed < 10
    verdict(1, ok, f"10^4 cases, failures {bad}, {elapsed:.2f} s (limit 10 s)")
    assert not any(bad.values()), bad
    assert elapsed < 10


# --- 2 -------------------------------------------------------------------------


def test_criterion_2_convergence(sweep):
    runs, elapsed = sweep
    failures, worst = [], 0.0
    for r in runs:
        p = r["params"]
        N, d, kappa, eps = r["key"]
        assert p.T == math.ceil((p.kappa + 1) * math.log(math.sqrt(d) / eps))
        assert len(r["states"]) == p.T + 1
        err = float(np.linalg.norm(np.asarray(r["result"].output) - r["inst"].xstar))
        worst = max(worst, err / eps)
        if not err <= eps:
            failures.append((r["key"], err))
    ok = not failures and elapsed < 60
    verdict(2, ok, f"{len(runs)} runs, {len(failures)} failures, worst error/eps {worst:.3g}, {elapsed:.2f} s (limit 60 s)")
    assert not failures, failures
    assert elapsed < 60


# --- 3 -------------------------------------------------------------------------


def test_criterion_3_invariants(sweep):
    from qgdlab.qgd import check_invariants

    runs, _ = sweep
    broken, rounds, tight = [], 0, math.inf
    for r in runs:
        p, inst = r["params"], r["inst"]
        for st in r["states"]:
            rep = check_invariants(p, st, inst.objectives, inst.xstar)
            rounds += 1
            slack = 1e-10 * st.R_t
            margins = [rep.q1_margin, rep.q3_margin, *rep.q2_margins]
            tight = min(tight, min(m / st.R_t for m in margins))
            if min(margins) < -slack:
                broken.append((r["key"], st.t, rep.failed))
    verdict(3, not broken, f"{rounds} rounds checked, {len(broken)} violations, min margin/R_t {tight:.3g}")
    assert not broken, broken[:5]


# --- 4 -------------------------------------------------------------------------


def test_criterion_4_bit_envelope(sweep):
    runs, _ = sweep
    worst_c, problems = 0.0, []
    for r in runs:
        p = r["params"]
        N, d, _, eps = r["key"]
        meter = r["result"].meter
        per_round = {meter.per_round[t] for t in range(1, p.T + 1)}
        boot = meter.per_round[0]
        envelope = N * d * (p.kappa * math.log2(p.kappa) + math.log2(d) + 4) * math.log2(p.beta * p.W / eps)
        c = meter.total / envelope
        worst_c = max(worst_c, c)
        if len(per_round) != 1:
            problems.append((r["key"], "per-round bits vary", sorted(per_round)))
        elif boot > 4 * next(iter(per_round)):
            problems.append((r["key"], "bootstrap too large", boot))
    ok = worst_c <= 8 and not problems
    verdict(4, ok, f"measured constant c = {worst_c:.3f} (limit 8), {len(problems)} schedule problems")
    assert not problems, problems
    assert worst_c <= 8


# --- 5 -------------------------------------------------------------------------


def test_criterion_5_per_round_contraction(sweep):
    runs, _ = sweep
    violations, worst, where = 0, 0.0, None
    checked = 0
    for r in runs:
        p, xs = r["params"], r["inst"].xstar
        errs = [float(np.linalg.norm(st.x - xs)) for st in r["states"]]
        for t in range(len(errs) - 1):
            if errs[t] > 1e-12 * p.W:
                checked += 1
                ratio = errs[t + 1] / errs[t]
                if ratio > p.mu + 1e-9:
                    violations += 1
                if ratio - p.mu > worst:
                    worst, where = ratio - p.mu, (r["key"], t, ratio, p.mu)
    verdict(5, violations == 0,
            f"{violations}/{checked} steps exceed mu + 1e-9; worst ratio - mu = {worst:.3g} at {where}")
    assert violations == 0, f"{violations} of {checked} steps exceed mu + 1e-9; worst {where}"


# --- 6 -------------------------------------------------------------------------


def recovery_trials(n, seed, perturb):
    rng = np.random.default_rng(seed)
    fails = 0
    for k in range(n):
        N = (2, 4, 8)[k % 3]
        d = int(rng.integers(1, 4))
        scale = rng.uniform(0.1, 0.9) / (3 * N)
        params = LbParams(N, d, scale**2, 1.0)
        inst = make_avg_instance(params, seed=int(rng.integers(2**31)))
        if perturb:
            u = rng.normal(size=d)
            t = inst.xstar + u / np.linalg.norm(u) * 0.9 * scale * rng.uniform(0, 1)
        else:
            t = inst.net.nearest(inst.xstar)
        got = symmetrisation_recover(inst, t, inst.codewords[1:])
        fails += got != inst.codewords[0]
    return fails


def test_criterion_6_symmetrisation_recovery():
    t0 = time.perf_counter()
    net_fails = recovery_trials(1000, seed=6, perturb=False)
    pert_fails = recovery_trials(1000, seed=7, perturb=True)
    elapsed = time.perf_counter() - t0
    ok = net_fails == 0 and pert_fails == 0 and elapsed < 20
    verdict(6, ok, f"net-point failures {net_fails}/1000, perturbed failures {pert_fails}/1000, {elapsed:.2f} s (limit 20 s)")
    assert net_fails == 0 and pert_fails == 0
    assert elapsed < 20


# --- 7 -------------------------------------------------------------------------


def eq_configurations():
    """Packings of every size 2..8 (lines, a 2 x 2 square, a 2 x 2 x 2 cube) for N = 1, 2, 3."""
    for N in (1, 2, 3):
        for d, k_axis in [(1, k) for k in range(2, 9)] + [(2, 2), (3, 2)]:
            spacing = 1.0 / (k_axis - 0.5)  # exactly k_axis points per axis
            eps = (spacing / (2 * (1 + 1e-6))) ** 2 / N * (1 - 1e-9)
            yield LbParams(N, d, eps, 1.0), k_axis**d


def test_criterion_7_equality_reduction():
    cases = mismatches = 0
    sizes = set()
    min_gap = math.inf
    for params, size in eq_configurations():
        S = grid_packing(params.d, eq_separation(params))
        assert len(S) == size
        sizes.add(size)
        beta0 = params.beta / params.N
        gap = beta0 * min_pairwise_distance(S.points) ** 2 / 2
        min_gap = min(min_gap, gap / (2 * params.eps))
        assert beta0 * eq_separation(params) ** 2 / 2 > 2 * params.eps
        words = [index_to_codeword(S, i) for i in range(len(S))]
        for combo in itertools.product(words, repeat=params.N):
            out = eq_end_to_end(make_eq_instance(params, combo, S), exact_solver)
            cases += 1
            mismatches += out.bit != int(len(set(combo)) == 1)
    ok = mismatches == 0 and min_gap > 1 and sizes == set(range(2, 9))
    verdict(7, ok, f"{cases} tuples over |S| in {sorted(sizes)}, {mismatches} mismatches, min gap/2eps {min_gap:.6f}")
    assert mismatches == 0 and min_gap > 1


# --- 8 -------------------------------------------------------------------------


def disj_configurations():
    line = np.linspace(0.0, 1.0, 6).reshape(-1, 1)  # spacing 0.2
    plane = np.array([[a, b] for a in (0.0, 0.5, 1.0) for b in (0.0, 1.0)])  # spacing 0.5
    for n in range(1, 7):
        yield PackingSet(line[:n], 0.19, 1), 1.0, 0.05
        yield PackingSet(plane[:n], 0.49, 2), 1.0, 0.2


def test_criterion_8_disjointness():
    t0 = time.perf_counter()
    cases = wrong = 0
    max_no, min_yes = 0.0, math.inf
    for S, beta, eps in disj_configurations():
        if len(S) >= 2:
            assert min_pairwise_distance(S.points) > S.delta
        for N in (1, 2, 3):
            for sels, inf in disj_exhaustive(S, beta, eps, N):
                cases += 1
                if intersecting(sels):
                    max_no = max(max_no, inf)
                    wrong += not inf <= 1e-9
                else:
                    min_yes = min(min_yes, inf - eps)
                    wrong += not inf >= eps - 1e-9
    elapsed = time.perf_counter() - t0
    ok = wrong == 0 and elapsed < 60
    verdict(8, ok, f"{cases} instances, {wrong} misclassified, max NO infimum {max_no:.3g}, "
                   f"min YES infimum - eps {min_yes:.3g}, {elapsed:.2f} s (limit 60 s)")
    assert wrong == 0
    assert elapsed < 60


# --- 9 -------------------------------------------------------------------------


def test_criterion_9_packing_bound():
    rows, ok = [], True
    for d in (1, 2, 3):
        for delta in (0.05, 0.1, 0.3):
            greedy = greedy_packing_oracle(d, delta, delta / 4)
            grid = grid_packing(d, delta)
            bound = (math.sqrt(d) / (PACKING_CONSTANT * delta)) ** d
            cert = all(min_pairwise_distance(P.points) > delta for P in (greedy, grid))
            ok &= len(greedy) >= bound and cert
            rows.append(f"d={d},delta={delta}:{len(greedy)}>={bound:.1f}")
    verdict(9, ok, "; ".join(rows))
    assert ok


# --- 10 ------------------------------------------------------------------------


def test_criterion_10_determinism(sweep):
    runs, _ = sweep
    again = run_sweep()
    for a, b in zip(runs, again):
        assert dumps_transcript(a["result"].log) == dumps_transcript(b["result"].log), a["key"]

    import io

    def csv_payload(N, d, kappa, eps):
        rows, _ = execute_run(random_instance(N, d, kappa=kappa, seed=0), eps)
        buf = io.StringIO()
        write_csv(rows, RUN_COLUMNS, buf)
        return buf.getvalue()

    csv_same = all(csv_payload(*key) == csv_payload(*key) for key in SUITE[::5])
    codec_same = run_codec_corpus()[1] == run_codec_corpus()[1]
    rec_same = recovery_trials(200, 6, False) == recovery_trials(200, 6, False)
    S = PackingSet(np.linspace(0, 1, 4).reshape(-1, 1), 0.3, 1)
    disj_same = list(disj_exhaustive(S, 1.0, 0.05, 2)) == list(disj_exhaustive(S, 1.0, 0.05, 2))
    ok = csv_same and codec_same and rec_same and disj_same
    verdict(10, ok, f"transcripts identical for {len(runs)} runs; csv {csv_same}, codec {codec_same}, "
                    f"recovery {rec_same}, disj {disj_same}")
    assert ok
