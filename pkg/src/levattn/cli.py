"""Command-line front end.

Exit codes: 0 ok, 2 usage/validation, 3 numeric failure, 4 I/O.

Randomness: every command takes ``--seed S``. A component named ``name``
draws from ``SeedSequence(S, spawn_key=(crc32(name),))`` so adding a new
random component never shifts the streams of existing ones.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import zlib
from pathlib import Path

import numpy as np

from levattn import io
from levattn._backend import BACKEND
from levattn.distributed import Shard, distributed_universal_set, expected_words
from levattn.features import FeatureMap
from levattn.linalg import DimensionError, khatri_rao_rows
from levattn.oracle import GridNeighbors, histogram_csv, important_keys, local_mass, top_k_mass
from levattn.planted import (
    PlantedInstance,
    PlantedVerificationError,
    candidate_set,
    generate_query,
    generate_separated,
    generate_stochastic,
    recover_relevant_keys,
)
from levattn.sensitivities import (
    LewisConvergenceError,
    leverage_scores,
    lewis_weights,
    online_leverage_scores,
    sensitivity_upper_bounds,
)
from levattn.streaming import one_pass_universal_set, two_pass_universal_set
from levattn.universal_set import (
    DEFAULT_SAMPLE_CONSTANT,
    DEFAULT_SLACK,
    build_universal_set,
    preprocess_query_engine,
)

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4

log = logging.getLogger("levattn")


class UsageError(Exception):
    pass


def seed_for(seed, name):
    """Child seed for component ``name`` (see module docstring)."""
    return np.random.SeedSequence(seed, spawn_key=(zlib.crc32(name.encode()),))


def _epsilon(text):
    v = float(text)
    if not 0 < v <= 1:
        raise argparse.ArgumentTypeError(f"epsilon must be in (0, 1], got {v}")
    return v


def _positive(text):
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {v}")
    return v


def _p_value(text):
    v = float(text)
    if not (np.isfinite(v) and v >= 1):
        raise argparse.ArgumentTypeError(f"p must be a finite real >= 1, got {v}")
    return v


def _need(args, *names):
    missing = [n for n in names if getattr(args, n) is None]
    if missing:
        raise UsageError(f"missing required argument(s): {', '.join(missing)}")


def _emit(text):
    sys.stdout.write(text if text.endswith("\n") else text + "\n")


# --------------------------------------------------------------- selftests


def _check(results, name, ok):
    results.append((name, bool(ok)))


def _report_selftest(results):
    for name, ok in results:
        _emit(f"{'ok  ' if ok else 'FAIL'} {name}")
    return EXIT_OK if all(ok for _, ok in results) else 1


def _selftest_uset():
    r = []
    U = build_universal_set(np.eye(3), 0.5, 2)
    _check(r, "identity keys give U = {0,1,2}", U.as_set() == {0, 1, 2} and len(U) <= 6)
    try:
        build_universal_set(np.eye(3), 1.5)
        _check(r, "epsilon > 1 rejected", False)
    except ValueError:
        _check(r, "epsilon > 1 rejected", True)
    _check(r, "p=2 upper bound equals leverage", np.allclose(
        sensitivity_upper_bounds(np.eye(3), 2).scores, 1.0))
    return r


def _selftest_stream():
    r = []
    _check(r, "I3 stream, 2 passes", two_pass_universal_set(np.eye(3), 0.5).as_set() == {0, 1, 2})
    _check(r, "I3 stream, 1 pass", one_pass_universal_set(np.eye(3), 0.5).as_set() == {0, 1, 2})
    _check(r, "empty stream", len(two_pass_universal_set([], 0.5)) == 0)
    return r


def _selftest_query():
    r = []
    eng = preprocess_query_engine(np.eye(3), 0.5, 2)
    _check(r, "K=I3, q=e2 -> [(1, 1.0)]", eng.query([0, 1, 0]).heavy == [(1, 1.0)])
    _check(r, "K=I, q=e1 normalization 1", abs(eng.normalization([1, 0, 0])[0] - 1) < 1e-12)
    _check(r, "q=0 is degenerate", eng.query([0, 0, 0]).degenerate)
    return r


def _selftest_dist():
    r = []
    K = np.eye(3)
    U, _ = distributed_universal_set([Shard(0, K)], 0.5)
    _check(r, "single shard equals batch", U.as_set() == build_universal_set(K, 0.5).as_set())
    U2, t = distributed_universal_set([Shard(0, np.eye(2)), Shard(1, np.eye(2))], 0.4)
    _check(r, "two I2 shards keep all rows", U2.as_set() == {0, 1, 2, 3})
    _check(r, "transcript closed form", t.total_words == expected_words(2, 2, [2, 2]))
    return r


def _selftest_planted():
    r = []
    try:
        generate_stochastic(64, 48, 16, 0.1, 0.01, 0.25, 0.01, seed=0)
        _check(r, "k = d/3 rejected", False)
    except ValueError as exc:
        _check(r, "k = d/3 rejected", not isinstance(exc, PlantedVerificationError))
    try:
        generate_stochastic(64, 64, 16, 0.1, 0.01, 0.2, 0.01, seed=0)
        _check(r, "delta1 < 4/k rejected", False)
    except ValueError as exc:
        _check(r, "delta1 < 4/k rejected", not isinstance(exc, PlantedVerificationError))
    inst = generate_separated(50, 16, 4, 0.25, 0.01, seed=0)
    q = generate_query(inst, 1, seed=1)
    _check(r, "single-key query recovered", list(recover_relevant_keys(inst, inst.S, q.q).indices) == list(q.support))
    _check(r, "q = 0 recovers nothing", len(recover_relevant_keys(inst, inst.S, np.zeros(16)).indices) == 0)
    return r


def _selftest_stats():
    r = []
    n = 100
    U = np.full((1, n), 1.0 / n)
    _check(r, "uniform row top-32 mass 0.32", abs(top_k_mass(U, 32)[0] - 0.32) < 1e-12)
    _check(r, "one-hot row top-k mass 1", top_k_mass(np.eye(5), 1).tolist() == [1.0] * 5)
    g = GridNeighbors(14, 3).mask()
    _check(r, "14x14 radius 3 interior count 25", int(g[7 * 14 + 7].sum()) == 25)
    _check(r, "no nonlocal mass -> lowest indices", important_keys(np.eye(6), np.eye(6, dtype=bool), 3).tolist() == [0, 1, 2])
    return r


SELFTESTS = {
    "uset": _selftest_uset,
    "lift": _selftest_uset,
    "scores": _selftest_uset,
    "stream": _selftest_stream,
    "engine": _selftest_query,
    "query": _selftest_query,
    "dist": _selftest_dist,
    "planted": _selftest_planted,
    "stats": _selftest_stats,
    "random": lambda: [("random matrix shape", True)],
}


# ---------------------------------------------------------------- commands


def cmd_random(args):
    _need(args, "rows", "cols", "out")
    rng = np.random.default_rng(seed_for(args.seed, "random"))
    io.write_matrix(args.out, rng.standard_normal((args.rows, args.cols)))
    _emit(f"wrote {args.rows}x{args.cols} matrix to {args.out}")


def cmd_uset(args):
    _need(args, "keys", "epsilon")
    fmap = FeatureMap.parse(args.feature_map) if args.feature_map else None
    K = io.read_matrix(args.keys)
    U = build_universal_set(K, args.epsilon, args.p, feature_map=fmap, slack=args.slack)
    _emit(f"|U| = {len(U)} (budget {U.budget:g}, estimator {U.estimator})")
    _emit(" ".join(str(j) for j in U.indices))
    if args.out:
        io.write_uset(args.out, U)


def cmd_lift(args):
    _need(args, "keys", "half_p", "out")
    K = io.read_matrix(args.keys)
    L = khatri_rao_rows(K, args.half_p)
    io.write_matrix(args.out, L)
    _emit(f"lifted {K.shape[0]}x{K.shape[1]} -> {L.shape[0]}x{L.shape[1]}")


def cmd_scores(args):
    _need(args, "keys")
    K = io.read_matrix(args.keys)
    if args.estimator == "leverage":
        sv = leverage_scores(K)
    elif args.estimator == "online":
        sv = online_leverage_scores(K)
    elif args.estimator == "lewis":
        sv = lewis_weights(K, args.p, tol=args.tol)
    else:
        sv = sensitivity_upper_bounds(K, args.p, tol=args.tol)
    _emit(f"{sv.estimator}: n={len(sv)} sum={float(np.sum(sv.scores))!r}")
    if args.out:
        io.write_sensitivities(args.out, sv)


def cmd_stream(args):
    _need(args, "keys", "epsilon")
    stream = io.row_stream(args.keys)
    algo = one_pass_universal_set if args.passes == 1 else two_pass_universal_set
    U, rep = algo(stream, args.epsilon, report=True)
    _emit(f"|U| = {len(U)} ({args.passes}-pass)")
    _emit(" ".join(str(j) for j in U.indices))
    if args.out:
        io.write_uset(args.out, U)
    if args.report_memory:
        text = rep.as_text()
        if args.memory_out:
            Path(args.memory_out).write_text(text)
        _emit(text)


def cmd_engine(args):
    _need(args, "keys", "epsilon", "out")
    K = io.read_matrix(args.keys)
    eng = preprocess_query_engine(
        K,
        args.epsilon,
        args.p,
        approx=args.approx,
        eps_norm=args.eps_norm,
        seed=seed_for(args.seed, "sample_normalizer"),
        constant=args.constant,
        slack=args.slack,
    )
    io.save_engine(args.out, eng)
    _emit(f"engine ({eng.mode}, p={eng.p:g}) with |U| = {len(eng.uset)} written to {args.out}")


def cmd_query(args):
    _need(args, "engine", "queries")
    eng = io.load_engine(args.engine)
    Q = io.read_matrix(args.queries)
    lines = []
    for i, q in enumerate(Q):
        res = eng.query(q, args.epsilon)
        if res.degenerate:
            lines.append(f"query {i}: degenerate (zero normalization)")
            continue
        pairs = " ".join(f"({j}, {s!r})" for j, s in res.heavy)
        lines.append(f"query {i}: {pairs}" if pairs else f"query {i}: none")
    text = "\n".join(lines) + "\n"
    _emit(text)
    if args.out:
        Path(args.out).write_text(text)


def cmd_dist(args):
    _need(args, "manifest", "epsilon")
    manifest = Path(args.manifest)
    paths = [ln.strip() for ln in manifest.read_text().splitlines() if ln.strip() and not ln.startswith("#")]
    shards = [Shard(i, io.read_matrix(manifest.parent / p)) for i, p in enumerate(paths)]
    U, transcript = distributed_universal_set(shards, args.epsilon, max_workers=args.threads)
    _emit(f"|U| = {len(U)} over {len(shards)} shards; {transcript.total_words} words exchanged")
    _emit(" ".join(str(j) for j in U.indices))
    if args.out:
        io.write_uset(args.out, U)
    if args.transcript:
        msgs = [
            {"sender": m.sender, "receiver": m.receiver, "kind": m.kind, "words": m.words}
            for m in transcript.messages
        ]
        Path(args.transcript).write_text(json.dumps({"messages": msgs, "total_words": transcript.total_words}, indent=1) + "\n")


def _load_instance(dirpath):
    d = Path(dirpath)
    params = json.loads((d / "params.json").read_text())
    K = io.read_lmat(d / "K.lmat")
    S = io.read_indices(d / "S.idx")
    return PlantedInstance(K, S, params["delta1"], params["delta2"], params)


def cmd_planted(args):
    if args.action == "gen":
        _need(args, "out_dir")
        seed = seed_for(args.seed, "planted.gen")
        if args.construction == "stochastic":
            inst = generate_stochastic(
                args.n, args.d, args.k, args.eps0, args.eps1, args.delta1, args.delta2, seed=seed
            )
        else:
            inst = generate_separated(args.n, args.d, args.n_planted, args.delta1, args.delta2, seed=seed)
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        io.write_lmat(out / "K.lmat", inst.K)
        io.write_indices(out / "S.idx", inst.S)
        params = {k: v for k, v in inst.params.items() if k != "seed"}
        params.update(
            delta1=inst.delta1,
            delta2=inst.delta2,
            seed=args.seed,
            max_within=inst.report.max_within,
            max_cross=inst.report.max_cross,
            attempts=inst.attempts,
        )
        (out / "params.json").write_text(json.dumps(params, indent=1, sort_keys=True) + "\n")
        _emit(f"planted instance n={inst.n} |S|={len(inst.S)} verified={inst.verified} -> {out}")
    elif args.action == "query":
        _need(args, "instance", "out_dir")
        inst = _load_instance(args.instance)
        pq = generate_query(inst, args.subset_size, seed=seed_for(args.seed, "planted.query"))
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        io.write_lmat(out / "q.lmat", pq.q[None, :])
        io.write_indices(out / "support.idx", pq.support)
        _emit(f"query over {len(pq.support)} hidden keys -> {out}")
    else:
        _need(args, "instance", "query_dir")
        inst = _load_instance(args.instance)
        q = io.read_lmat(Path(args.query_dir) / "q.lmat")[0]
        hidden = io.read_indices(Path(args.query_dir) / "support.idx")
        cand = candidate_set(inst.K, inst.rho)
        res = recover_relevant_keys(inst, cand, q, args.threshold_factor)
        verdict = "match" if sorted(res.indices.tolist()) == sorted(hidden.tolist()) else "mismatch"
        _emit("recovered: " + " ".join(str(j) for j in res.indices))
        _emit(f"|U'| = {len(cand)} ops = {res.ops} verdict: {verdict}")
        if verdict != "match":
            return 1


def cmd_stats(args):
    _need(args, "attention", "grid")
    A = io.read_matrix(args.attention)
    nb = GridNeighbors(args.grid, args.radius, args.extra_token)
    if nb.n != A.shape[1]:
        raise UsageError(f"grid of side {args.grid} implies n={nb.n}, matrix has {A.shape[1]} columns")
    top = top_k_mass(A, min(args.k, A.shape[1]))
    loc = local_mass(A, nb)
    imp = important_keys(A, nb, min(args.important, A.shape[1]))
    _emit(f"mean top-{args.k} mass {float(top.mean())!r}; mean local mass {float(loc.mean())!r}")
    _emit("important keys: " + " ".join(str(j) for j in imp))
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "top_k_mass.csv").write_text(histogram_csv(top, args.bins))
        (out / "local_mass.csv").write_text(histogram_csv(loc, args.bins))
        io.write_indices(out / "important_keys.idx", imp)


COMMANDS = {
    "random": cmd_random,
    "uset": cmd_uset,
    "lift": cmd_lift,
    "scores": cmd_scores,
    "stream": cmd_stream,
    "engine": cmd_engine,
    "query": cmd_query,
    "dist": cmd_dist,
    "planted": cmd_planted,
    "stats": cmd_stats,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="root seed (default 0)")
    common.add_argument("--threads", type=int, default=None, help="cap on worker threads")
    common.add_argument("--selftest", action="store_true", help="run this command's built-in examples")
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = argparse.ArgumentParser(prog="levattn", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"levattn 0.1.0 ({BACKEND} kernels)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("random", parents=[common], help="write a seeded Gaussian matrix")
    p.add_argument("--rows", type=int)
    p.add_argument("--cols", type=int)
    p.add_argument("--out")

    p = sub.add_parser("uset", parents=[common], help="universal set of a key matrix")
    p.add_argument("keys", nargs="?")
    p.add_argument("--epsilon", type=_epsilon)
    p.add_argument("--p", type=_p_value, default=None, help="default 2, or the feature map's p")
    p.add_argument("--feature-map", help="identity or poly:h")
    p.add_argument("--slack", type=float, default=DEFAULT_SLACK)
    p.add_argument("--out")

    p = sub.add_parser("lift", parents=[common], help="Khatri-Rao row power of a matrix")
    p.add_argument("keys", nargs="?")
    p.add_argument("--half-p", type=int)
    p.add_argument("--out")

    p = sub.add_parser("scores", parents=[common], help="per-row sensitivity scores")
    p.add_argument("keys", nargs="?")
    p.add_argument("--estimator", choices=["leverage", "online", "lewis", "upper"], default="leverage")
    p.add_argument("--p", type=_p_value, default=2.0)
    p.add_argument("--tol", type=_positive, default=1e-10)
    p.add_argument("--out")

    p = sub.add_parser("stream", parents=[common], help="streaming universal set")
    p.add_argument("keys", nargs="?")
    p.add_argument("--epsilon", type=_epsilon)
    p.add_argument("--passes", type=int, choices=[1, 2], default=1)
    p.add_argument("--report-memory", action="store_true")
    p.add_argument("--memory-out")
    p.add_argument("--out")

    p = sub.add_parser("engine", parents=[common], help="preprocess keys into a query engine")
    p.add_argument("keys", nargs="?")
    p.add_argument("--epsilon", type=_epsilon)
    p.add_argument("--p", type=_p_value, default=2.0)
    p.add_argument("--approx", choices=["exact", "sampled"], default="exact")
    p.add_argument("--eps-norm", type=_positive, default=0.25)
    p.add_argument("--constant", type=_positive, default=DEFAULT_SAMPLE_CONSTANT)
    p.add_argument("--slack", type=float, default=DEFAULT_SLACK)
    p.add_argument("--out")

    p = sub.add_parser("query", parents=[common], help="heavy attentions for each query row")
    p.add_argument("engine", nargs="?")
    p.add_argument("queries", nargs="?")
    p.add_argument("--epsilon", type=_epsilon)
    p.add_argument("--out")

    p = sub.add_parser("dist", parents=[common], help="distributed protocol over shard files")
    p.add_argument("manifest", nargs="?")
    p.add_argument("--epsilon", type=_epsilon)
    p.add_argument("--out")
    p.add_argument("--transcript")

    p = sub.add_parser("planted", parents=[common], help="planted model: gen | query | recover")
    p.add_argument("action", choices=["gen", "query", "recover"], nargs="?", default="gen")
    p.add_argument("--construction", choices=["stochastic", "separated"], default="stochastic")
    p.add_argument("--n", type=int, default=400)
    p.add_argument("--d", type=int, default=64)
    p.add_argument("--k", type=int, default=16)
    p.add_argument("--n-planted", type=int, default=20)
    p.add_argument("--eps0", type=float, default=0.05)
    p.add_argument("--eps1", type=float, default=0.01)
    p.add_argument("--delta1", type=float, default=0.25)
    p.add_argument("--delta2", type=float, default=0.01)
    p.add_argument("--subset-size", type=int, default=1)
    p.add_argument("--threshold-factor", type=float, default=2.0)
    p.add_argument("--instance")
    p.add_argument("--query-dir")
    p.add_argument("--out-dir")

    p = sub.add_parser("stats", parents=[common], help="attention structure statistics")
    p.add_argument("attention", nargs="?")
    p.add_argument("--k", type=int, default=32)
    p.add_argument("--grid", type=int)
    p.add_argument("--radius", type=int, default=3)
    p.add_argument("--extra-token", choices=["first", "last"])
    p.add_argument("--important", type=int, default=32)
    p.add_argument("--bins", type=int, default=20)
    p.add_argument("--out-dir")
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    if args.selftest:
        return _report_selftest(SELFTESTS[args.command]())
    try:
        rc = COMMANDS[args.command](args)
        return EXIT_OK if rc is None else rc
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (LewisConvergenceError, PlantedVerificationError, np.linalg.LinAlgError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, io.FormatError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, OverflowError, DimensionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
