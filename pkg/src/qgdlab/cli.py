"""``qgdlab`` command-line front end.

Outputs go to ``--out`` or, when that is omitted, to the directory named by
``$QGDLAB_OUT`` (default: the current directory). Exit status: 0 on success,
1 when a run misses its target or breaks an invariant, 2 on usage errors.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .codec import get_codec
from .errors import QgdlabError
from .geometry import (
    PackingSet,
    dumps_net,
    dumps_packing,
    epsilon_net,
    greedy_packing_oracle,
    grid_packing,
    index_to_codeword,
)
from .lbi import (
    LbParams,
    bound_values,
    disj_gap_check,
    eq_end_to_end,
    exact_solver,
    intersecting,
    make_avg_instance,
    make_eq_instance,
    qgd_solver,
    recovery_target,
    symmetrisation_recover,
)
from .objectives import canonical_form, read_objective, total
from .qgd import (
    QgdInstance,
    canonical_instance,
    check_invariants,
    declared_spectrum,
    derive_params,
    random_instance,
)
from .runtime import qgd_as_protocol, run_protocol

OUT_ENV = "QGDLAB_OUT"

RUN_COLUMNS = ["round", "phase", "bits", "bits_cumulative", "radius", "error", "q1_margin", "q2_margin", "q3_margin", "invariants"]
SWEEP_COLUMNS = [
    "run_id", "n_nodes", "dim", "kappa", "eps", "seed", "rounds", "total_bits", "bootstrap_bits",
    "round_bits", "final_error", "status", "ratio",
]

# JSON Schema of the run summary
SUMMARY_SCHEMA = {
    "type": "object",
    "required": [
        "seed", "n_nodes", "dim", "alpha", "beta", "kappa", "W", "eps_target", "rounds", "codec",
        "total_bits", "bootstrap_bits", "teardown_bits", "round_bits", "final_error", "converged",
        "invariants", "bound_values", "ratio", "upper_ratio", "envelope_ratio", "created_utc",
    ],
    "properties": {
        "seed": {"type": ["integer", "null"]},
        "n_nodes": {"type": "integer", "minimum": 1},
        "dim": {"type": "integer", "minimum": 1},
        "alpha": {"type": "number", "exclusiveMinimum": 0},
        "beta": {"type": "number", "exclusiveMinimum": 0},
        "kappa": {"type": "number", "minimum": 2},
        "W": {"type": "number", "exclusiveMinimum": 0},
        "eps_target": {"type": "number", "exclusiveMinimum": 0},
        "rounds": {"type": "integer", "minimum": 0},
        "codec": {"type": "string"},
        "total_bits": {"type": "integer", "minimum": 0},
        "bootstrap_bits": {"type": "integer", "minimum": 0},
        "teardown_bits": {"type": "integer", "minimum": 0},
        "round_bits": {"type": "array", "items": {"type": "integer"}},
        "final_error": {"type": "number", "minimum": 0},
        "converged": {"type": "boolean"},
        "invariants": {
            "type": "object",
            "required": ["passed", "failures"],
            "properties": {
                "passed": {"type": "boolean"},
                "failures": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "required": ["round", "which"],
                        "properties": {"round": {"type": "integer"}, "which": {"type": "array", "items": {"type": "string"}}},
                    },
                },
            },
        },
        "bound_values": {"type": "object", "additionalProperties": {"type": "number"}},
        "ratio": {"type": "number"},
        "upper_ratio": {"type": "number"},
        "envelope_ratio": {"type": "number"},
        "created_utc": {"type": "string"},
    },
}


class UsageError(Exception):
    pass


def _g(v) -> str:
    return format(float(v), ".17g")


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _out_dir(args) -> Path:
    out = Path(args.out or os.environ.get(OUT_ENV) or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


# --- run ---------------------------------------------------------------------


def build_instance(args) -> QgdInstance:
    if args.canonical:
        inst = canonical_instance()
    elif args.objectives:
        objectives = [read_objective(p) for p in args.objectives]
        d = objectives[0].d
        alpha, beta = declared_spectrum(objectives, args.kappa)
        inst = QgdInstance(objectives, alpha, beta, math.sqrt(d), np.zeros(d), None)
    else:
        if args.n_nodes is None or args.dim is None:
            raise UsageError("give --canonical, --objectives, or both --n-nodes and --dim")
        if args.n_nodes < 1 or args.dim < 1:
            raise UsageError("--n-nodes and --dim must be positive")
        inst = random_instance(args.n_nodes, args.dim, kappa=args.kappa, seed=args.seed)
    alpha = inst.alpha if args.alpha is None else args.alpha
    beta = inst.beta if args.beta is None else args.beta
    W = inst.W if args.w is None else args.w
    return QgdInstance(inst.objectives, alpha, beta, W, inst.x0, inst.seed)


def execute_run(inst: QgdInstance, eps_target: float, codec_name: str = "grid", seed: int = 0, perturb_q3: int | None = None):
    """Run the metered protocol; returns (csv rows, summary dict)."""
    params = derive_params(inst.alpha, inst.beta, inst.W, eps_target)
    codec = get_codec(codec_name)
    states = []
    spec = qgd_as_protocol(params, inst.objectives, codec, x0=inst.x0, observer=states.append)
    result = run_protocol(spec, inst.objectives, seed=seed)
    xstar = canonical_form(total(inst.objectives)).xstar
    N, d, T = inst.N, inst.d, params.T

    rows, failures = [], []
    for st in states:
        if perturb_q3 is not None and st.t == perturb_q3:
            # test hook: push the recorded global estimate outside its tolerance
            st.q_global = st.q_global + 2 * params.delta * st.R_t / math.sqrt(d)
        rep = check_invariants(params, st, inst.objectives, xstar)
        if rep.failed:
            failures.append({"round": st.t, "which": list(rep.failed)})
        rows.append({
            "round": st.t,
            "phase": "bootstrap" if st.t == 0 else "round",
            "bits": result.meter.per_round.get(st.t, 0),
            "radius": _g(st.R_t),
            "error": _g(np.linalg.norm(st.x - xstar)),
            "q1_margin": _g(rep.q1_margin),
            "q2_margin": _g(rep.q2_margin),
            "q3_margin": _g(rep.q3_margin),
            "invariants": "pass" if rep.passed else "fail:" + "+".join(rep.failed),
        })
    teardown = result.meter.per_round.get(T + 1, 0)
    rows.append({"round": T + 1, "phase": "teardown", "bits": teardown, "radius": "", "error": "",
                 "q1_margin": "", "q2_margin": "", "q3_margin": "", "invariants": ""})

    cumulative = 0
    for row in rows:
        cumulative += row["bits"]
        row["bits_cumulative"] = cumulative
    final_error = float(np.linalg.norm(np.asarray(result.output) - xstar))
    total_bits = result.meter.total
    assert total_bits == sum(r["bits"] for r in rows)
    bounds = bound_values(N, d, eps_target, params.beta, params.kappa, params.W)
    log_term = max(1.0, math.log2(params.beta * params.W / eps_target))
    envelope = N * d * (params.kappa * math.log2(params.kappa) + math.log2(d) + 4) * log_term
    summary = {
        "seed": seed,
        "instance_seed": inst.seed,
        "n_nodes": N,
        "dim": d,
        "alpha": params.alpha,
        "beta": params.beta,
        "kappa": params.kappa,
        "W": params.W,
        "eps_target": eps_target,
        "rounds": T,
        "codec": codec.name,
        "total_bits": total_bits,
        "bootstrap_bits": rows[0]["bits"],
        "teardown_bits": teardown,
        "round_bits": [r["bits"] for r in rows[1:-1]],
        "final_error": final_error,
        "converged": final_error <= eps_target,
        "invariants": {"passed": not failures, "failures": failures},
        "bound_values": bounds,
        "ratio": total_bits / (N * d * params.kappa * math.log2(params.kappa) * log_term),
        "upper_ratio": total_bits / bounds["upper_qgd"],
        "envelope_ratio": total_bits / envelope,
        "created_utc": _now(),
    }
    return rows, summary


def write_csv(rows, columns, fh) -> None:
    w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)


def cmd_run(args) -> int:
    if args.eps is None or not args.eps > 0:
        raise UsageError("--eps must be a positive number")
    try:
        inst = build_instance(args)
        if not args.eps < inst.W:
            raise UsageError(f"--eps must be below W = {inst.W:.6g}")
        derive_params(inst.alpha, inst.beta, inst.W, args.eps)
        get_codec(args.codec)
    except (QgdlabError, ValueError, OSError) as exc:
        raise UsageError(str(exc)) from None
    try:
        rows, summary = execute_run(inst, args.eps, args.codec, args.seed, args.perturb_q3)
    except QgdlabError as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return 1
    out = _out_dir(args)
    with open(out / f"{args.name}.csv", "w", newline="") as fh:
        write_csv(rows, RUN_COLUMNS, fh)
    (out / f"{args.name}.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"rounds={summary['rounds']} bits={summary['total_bits']} final_error={summary['final_error']:.3e} "
          f"eps={args.eps:g} -> {out / args.name}.csv")
    if not summary["invariants"]["passed"]:
        for f in summary["invariants"]["failures"]:
            print(f"invariant failure in round {f['round']}: {', '.join(f['which'])}", file=sys.stderr)
        return 1
    if not summary["converged"]:
        print(f"final error {summary['final_error']:.6g} exceeds eps {args.eps:g}", file=sys.stderr)
        return 1
    return 0


# --- sweep -------------------------------------------------------------------


def sweep_rows(Ns, dims, kappas, epss, seed: int = 0, codec: str = "grid") -> list[dict]:
    rows = []
    for run_id, (N, d, kappa, eps) in enumerate(
        (N, d, k, e) for N in Ns for d in dims for k in kappas for e in epss
    ):
        row = {"run_id": run_id, "n_nodes": N, "dim": d, "kappa": _g(kappa), "eps": _g(eps), "seed": seed}
        try:
            inst = random_instance(N, d, kappa=kappa, seed=seed)
            _, s = execute_run(inst, eps, codec, seed)
            status = "ok" if s["converged"] and s["invariants"]["passed"] else (
                "not-converged" if s["invariants"]["passed"] else "invariant:" + "+".join(
                    sorted({w for f in s["invariants"]["failures"] for w in f["which"]})))
            row.update(rounds=s["rounds"], total_bits=s["total_bits"], bootstrap_bits=s["bootstrap_bits"],
                       round_bits=s["round_bits"][0] if s["round_bits"] else 0,
                       final_error=_g(s["final_error"]), status=status, ratio=_g(s["ratio"]))
        except QgdlabError as exc:
            row.update(rounds="", total_bits="", bootstrap_bits="", round_bits="", final_error="",
                       status=f"error:{type(exc).__name__}", ratio="")
        rows.append(row)
    return rows


def cmd_sweep(args) -> int:
    grids = [args.n_nodes, args.dim, args.kappa, args.eps]
    if any(not g for g in grids):
        raise UsageError("every sweep axis needs at least one value")
    if any(v <= 0 for g in grids for v in g):
        raise UsageError("sweep values must be positive")
    rows = sweep_rows(*grids, seed=args.seed, codec=args.codec)
    out = _out_dir(args)
    with open(out / f"{args.name}.csv", "w", newline="") as fh:
        write_csv(rows, SWEEP_COLUMNS, fh)
    bad = [r for r in rows if r["status"] != "ok"]
    print(f"{len(rows)} runs, {len(bad)} failed -> {out / args.name}.csv")
    return 1 if bad else 0


# --- verify ------------------------------------------------------------------


def cmd_verify(args) -> int:
    from .verify import all_ok, run_suite

    result = run_suite(args.suite, seed=args.seed)
    ok = all_ok(result)
    report = {"suite": args.suite, "seed": args.seed, "ok": ok, "checks": result}
    text = json.dumps(report, indent=2, sort_keys=True, default=float)
    print(text)
    if args.out:
        _out_dir(args).joinpath(f"verify_{args.suite}.json").write_text(text + "\n")
    return 0 if ok else 1


# --- lb-demo -----------------------------------------------------------------


def _vec(v) -> list:
    return [float(t) for t in np.asarray(v).ravel()]


def demo_recover(args, say) -> dict:
    N = args.n_nodes or 2
    d = args.dim or 2
    params = LbParams(N, d, args.eps if args.eps else 0.0025, args.beta)
    inst = make_avg_instance(params, seed=args.seed)
    say(f"AVG instance: N={N}, d={d}, eps={params.eps:g}, beta={params.beta:g}, |S|={len(inst.packing)}")
    say(f"codewords: {', '.join(inst.codewords)}")
    say(f"true average x* = {_vec(inst.xstar)}")
    t = inst.net.nearest(inst.xstar)
    say(f"valid output t (nearest net point) = {_vec(t)}")
    v = recovery_target(inst, t, inst.codewords[1:])
    say(f"v = N t - (N-1) y = {_vec(v)}")
    b1 = symmetrisation_recover(inst, t, inst.codewords[1:])
    ok = b1 == inst.codewords[0]
    say(f"recovered b1 = {b1}; matches node 1's input: {ok}")
    return {"kind": "recover", "seed": args.seed, "codewords": list(inst.codewords), "t": _vec(t), "v": _vec(v),
            "recovered": b1, "verified": ok}


def demo_eq(args, say) -> dict:
    N = args.n_nodes or 2
    d = args.dim or 1
    params = LbParams(N, d, args.eps if args.eps else 0.01, args.beta)
    probe = make_eq_instance(params, _zero_words(params))
    rng = np.random.default_rng(args.seed)
    n = len(probe.packing)
    if args.codewords:
        words = args.codewords.split(",")
    else:
        base = int(rng.integers(n))
        idx = [base] * N
        if args.unequal and N >= 2:
            idx[-1] = (base + 1 + int(rng.integers(n - 1))) % n
        words = [index_to_codeword(probe.packing, i) for i in idx]
    inst = make_eq_instance(params, words, probe.packing)
    say(f"EQ instance: N={N}, d={d}, eps={params.eps:g}, beta0={inst.beta0:g}, |S|={n}, "
        f"delta_eq={probe.packing.delta:.6g}")
    say(f"codewords: {', '.join(inst.codewords)}")
    solver = qgd_solver if args.solver == "qgd" else exact_solver
    res = eq_end_to_end(inst, solver)
    say(f"solver={args.solver}: z = {_vec(res.z)}, r = F(z) = {res.r:.6g}, 2 eps = {2 * params.eps:.6g}")
    say(f"adjudicated bit = {res.bit}; inputs equal = {bool(res.truth)}; verified: {res.correct}")
    return {"kind": "eq", "seed": args.seed, "solver": args.solver, "codewords": list(inst.codewords), "r": res.r,
            "bit": res.bit, "truth": res.truth, "verified": res.correct}


def _zero_words(params: LbParams) -> list:
    from .lbi import eq_separation

    S = grid_packing(params.d, eq_separation(params))
    return [index_to_codeword(S, 0)] * params.N


def demo_disj(args, say) -> dict:
    N = args.n_nodes or 2
    d = args.dim or 1
    eps = args.eps if args.eps else 0.05
    S = grid_packing(d, 0.3 if d == 1 else 0.6)
    rng = np.random.default_rng(args.seed)
    n = len(S)
    if args.selections:
        sels = args.selections.split(",")
    else:
        while True:
            sels = ["".join(rng.choice(["0", "1"], n)) for _ in range(N)]
            if intersecting(sels) == (args.instance == "no"):
                break
    inf, label = disj_gap_check(sels, S, args.beta, eps)
    truth = "NO" if intersecting(sels) else "YES"
    say(f"DISJ instance: N={N}, d={d}, |S|={n}, beta={args.beta:g}, eps={eps:g}")
    say(f"selections: {', '.join(sels)}; intersecting: {truth == 'NO'}")
    say(f"grid-search infimum of the summed cones = {inf:.6g}")
    say(f"classification = {label}; matches intersection predicate: {label == truth}")
    return {"kind": "disj", "seed": args.seed, "selections": sels, "infimum": inf, "classification": label,
            "truth": truth, "verified": label == truth}


DEMOS = {"recover": demo_recover, "eq": demo_eq, "disj": demo_disj}


def cmd_lb_demo(args) -> int:
    record = DEMOS[args.kind](args, print)
    out = _out_dir(args)
    (out / f"lb_demo_{args.kind}.json").write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
    return 0 if record["verified"] else 1


# --- pack / net --------------------------------------------------------------


def _emit(text: str, path: str | None) -> None:
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_pack(args) -> int:
    if args.greedy_spacing:
        S: PackingSet = greedy_packing_oracle(args.dim, args.delta, args.greedy_spacing)
    else:
        S = grid_packing(args.dim, args.delta)
    _emit(dumps_packing(S), args.file)
    return 0


def cmd_net(args) -> int:
    _emit(dumps_net(epsilon_net(args.dim, args.radius)), args.file)
    return 0


# --- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qgdlab", description="Quantised gradient descent and lower-bound instances.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_help="output directory (default: $QGDLAB_OUT or .)"):
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", default=None, help=out_help)

    r = sub.add_parser("run", help="run QGD under the bit-metered runtime")
    src = r.add_mutually_exclusive_group()
    src.add_argument("--canonical", action="store_true", help="f1 = x^2, f2 = (x-1)^2")
    src.add_argument("--objectives", nargs="+", metavar="FILE", help="one quadsum file per node")
    r.add_argument("--n-nodes", type=int)
    r.add_argument("--dim", type=int)
    r.add_argument("--kappa", type=float, default=2.0, help="declared condition number (default 2)")
    r.add_argument("--alpha", type=float, help="override the declared strong convexity")
    r.add_argument("--beta", type=float, help="override the declared smoothness")
    r.add_argument("--w", type=float, help="initial distance bound W (default sqrt(d))")
    r.add_argument("--eps", type=float, required=True, help="target distance to the minimiser")
    r.add_argument("--codec", default="grid")
    r.add_argument("--name", default="run", help="output file stem")
    r.add_argument("--perturb-q3", type=int, metavar="ROUND", help=argparse.SUPPRESS)
    common(r)
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="grid of random-instance runs, one CSV row each")
    s.add_argument("--n-nodes", type=_ints, required=True, help="comma-separated")
    s.add_argument("--dim", type=_ints, required=True)
    s.add_argument("--kappa", type=_floats, required=True)
    s.add_argument("--eps", type=_floats, required=True)
    s.add_argument("--codec", default="grid")
    s.add_argument("--name", default="sweep")
    common(s)
    s.set_defaults(func=cmd_sweep)

    v = sub.add_parser("verify", help="run a self-check suite and print JSON")
    v.add_argument("suite", choices=["codec", "packing", "qgd", "lbi", "all"])
    common(v, "also write the JSON report here")
    v.set_defaults(func=cmd_verify)

    lb = sub.add_parser("lb-demo", help="walk through a lower-bound reduction")
    lb.add_argument("kind", choices=sorted(DEMOS))
    lb.add_argument("--n-nodes", type=int)
    lb.add_argument("--dim", type=int)
    lb.add_argument("--eps", type=float)
    lb.add_argument("--beta", type=float, default=1.0)
    lb.add_argument("--codewords", help="eq: comma-separated node codewords")
    lb.add_argument("--unequal", action="store_true", help="eq: make the last node differ")
    lb.add_argument("--solver", choices=["exact", "qgd"], default="exact")
    lb.add_argument("--selections", help="disj: comma-separated selection bit strings")
    lb.add_argument("--instance", choices=["no", "yes"], default="no", help="disj: intersecting (no) or disjoint (yes)")
    common(lb)
    lb.set_defaults(func=cmd_lb_demo)

    pk = sub.add_parser("pack", help="emit a packing file")
    pk.add_argument("--dim", type=int, required=True)
    pk.add_argument("--delta", type=float, required=True)
    pk.add_argument("--greedy-spacing", type=float, help="use the greedy oracle with this candidate spacing")
    pk.add_argument("--file", help="output path (default stdout)")
    pk.set_defaults(func=cmd_pack)

    nt = sub.add_parser("net", help="emit a net file")
    nt.add_argument("--dim", type=int, required=True)
    nt.add_argument("--radius", type=float, required=True)
    nt.add_argument("--file", help="output path (default stdout)")
    nt.set_defaults(func=cmd_net)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.error(str(exc))
    except QgdlabError as exc:
        if args.command in ("run", "sweep", "verify"):
            print(f"error: {exc}", file=sys.stderr)
            return 1
        parser.error(str(exc))
    return 2


if __name__ == "__main__":
    sys.exit(main())
