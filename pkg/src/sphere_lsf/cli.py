"""Command-line entry point: ``sphere-lsf <command> ...``."""

from __future__ import annotations

import argparse
import math
import csv
import sys
from pathlib import Path

import numpy as np

from . import oracle
from .config import ExperimentSpec, load_spec
from .embedding import build_embedding, embed, embedding_to_bytes, verify_embedding
from .errors import SphereLSFError
from .experiments import (
    CSV_VERSION_LINE,
    Report,
    controlled_pairs,
    gen_planted,
    run_count_experiment,
    run_recall,
    run_store_probability,
)
from .index import (
    KINDS,
    TENSOR,
    build_index,
    load_index,
    query_ann,
    query_count,
    save_index,
    structure_from_bytes,
    structure_to_bytes,
    to_count_table,
)
from .params import derive_ann_params, derive_privacy_params, derive_tensor_params
from .privacy import dp_audit, load_release, privatize, query_private_count, save_release
from .vecio import read_sphere, read_vectors, write_vectors


def _spec(args, **fields) -> ExperimentSpec:
    """Spec from ``--config`` (if any) with explicitly given flags layered on top."""
    overrides = {k: v for k, v in fields.items() if v is not None}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.config:
        return load_spec(args.config, **overrides)
    return ExperimentSpec(**overrides)


def _emit(report: Report, out: str | None) -> None:
    if out:
        report.save(out)
    else:
        report.write(sys.stdout)


def _writer(out):
    out.write(CSV_VERSION_LINE + "\n")
    return csv.writer(out, lineterminator="\n")


def _max_bytes(args) -> int:
    return int(args.max_bank_mb * (1 << 20))


# -- commands ---------------------------------------------------------------


def cmd_gen(args) -> int:
    spec = _spec(args, n=args.n, d=args.d, alpha=args.alpha, planted=args.planted)
    inst = gen_planted(spec.n, spec.d, spec.alpha, spec.planted, spec.seed)
    write_vectors(args.out, inst.dataset.points)
    if args.query_out:
        write_vectors(args.query_out, inst.query[None, :])
    return 0


def cmd_build(args) -> int:
    spec = _spec(args, structure=args.structure, alpha=args.alpha, beta=args.beta, t=args.t)
    dataset = read_sphere(args.data)
    ann = derive_ann_params(dataset.n, spec.alpha, spec.beta)
    tensor = derive_tensor_params(dataset.n, spec.alpha, spec.beta, spec.t) if spec.structure == TENSOR else None
    index = build_index(spec.structure, dataset, ann, spec.seed, tensor, spec.eta_override, _max_bytes(args))
    save_index(index, args.out)
    print(f"{spec.structure}: n={dataset.n} t={index.t} filters={index.filters_evaluated} "
          f"buckets={len(index.table.keys)} dropped={len(index.dropped)}", file=sys.stderr)
    return 0


def cmd_query(args) -> int:
    queries = read_sphere(args.queries).points
    w = _writer(sys.stdout)
    if args.release:
        if not args.structure_file:
            raise SphereLSFError("--release needs --structure-file")
        ptable = load_release(args.release)
        structure = structure_from_bytes(Path(args.structure_file).read_bytes())
        w.writerow(["query", "private", "buckets"])
        for i, q in enumerate(queries):
            value, cost = query_private_count(ptable, structure, q)
            w.writerow([i, repr(value), cost.buckets_inspected])
        return 0
    if not (args.data and args.index):
        raise SphereLSFError("query needs --data and --index, or --release and --structure-file")
    index = load_index(args.index, read_sphere(args.data))
    counts = to_count_table(index) if args.counts else None
    cols = ["query", "point_id", "buckets", "far_points", "inner_products"]
    w.writerow(cols + (["count"] if counts is not None else []))
    for i, q in enumerate(queries):
        res = query_ann(index, q, args.beta)
        row = [i, "" if res.point_id is None else res.point_id, res.cost.buckets_inspected,
               res.cost.far_points_inspected, res.cost.inner_products]
        if counts is not None:
            row.append(query_count(counts, index, q)[0])
        w.writerow(row)
    return 0


def cmd_count(args) -> int:
    spec = _spec(args, structure=args.structure, epsilon=args.epsilon, delta=args.delta, trials=args.trials,
                 planted=args.planted)
    _emit(run_count_experiment(spec, args.threads, released_only=args.released_only), args.out)
    return 0


def cmd_dp_release(args) -> int:
    dataset = read_sphere(args.data)
    index = load_index(args.index, dataset)
    params = derive_privacy_params(args.epsilon, args.delta)
    seed = 0 if args.seed is None else args.seed
    ptable = privatize(to_count_table(index), params, seed)
    save_release(ptable, args.out)
    Path(args.structure_out).write_bytes(structure_to_bytes(index.structure))
    print(f"released {len(ptable.values)} nonzero buckets, A={params.A:.6g}", file=sys.stderr)
    return 0


def cmd_dp_audit(args) -> int:
    params = derive_privacy_params(args.epsilon, args.delta)
    report = dp_audit(params, range(args.max_count + 1), args.tolerance)
    w = _writer(sys.stdout)
    w.writerow(["c1", "c2", "gap"])
    for (c1, c2), gap in report.gaps.items():
        w.writerow([c1, c2, repr(gap)])
    print(f"max gap {report.max_gap:.10g} at {report.worst}; delta={params.delta:g}: pass", file=sys.stderr)
    return 0


def cmd_recall(args) -> int:
    spec = _spec(args, structure=args.structure, trials=args.trials, planted=args.planted,
                 eta_override=args.eta_override, t=args.t)
    _emit(run_recall(spec, args.threads), args.out)
    return 0


def cmd_store_prob(args) -> int:
    sweep = tuple(int(v) for v in args.m_sweep.split(",")) if args.m_sweep else None
    spec = _spec(args, structure=args.structure, trials=args.trials, m_sweep=sweep, t=args.t)
    _emit(run_store_probability(spec, args.threads), args.out)
    return 0


def cmd_embed(args) -> int:
    points = read_vectors(args.data)
    n, d = points.shape
    seed = 0 if args.seed is None else args.seed
    max_norm = float(np.max(np.linalg.norm(points, axis=1)))
    scale = min(1.0 / (2.0 * max_norm) if max_norm > 0 else 1.0, np.sqrt(args.gamma / 2.0) / (args.c * args.r))
    e = build_embedding(d, n, args.gamma, args.r, args.c, seed, scale, args.d_prime)
    write_vectors(args.out, embed(e, points))
    if args.embedding_out:
        Path(args.embedding_out).write_bytes(embedding_to_bytes(e))
    if args.verify:
        w = _writer(sys.stdout)
        w.writerow(["property", "distance", "pairs", "applicable", "failures", "threshold"])
        for prop, dist in (("upper", np.sqrt(args.gamma) / 2), ("lower", np.sqrt(args.gamma) / 2),
                           ("separation", 2 * np.sqrt(args.gamma))):
            xs, ys = controlled_pairs(d, dist, args.verify, seed)
            unit = 1.0 / e.scale
            rep = verify_embedding(e, list(zip(xs * unit, ys * unit)))
            w.writerow([prop, repr(float(dist)), rep.pairs, rep.applicable[prop], rep.failures[prop],
                        repr(rep.threshold)])
    return 0


def cmd_oracle(args) -> int:
    w = _writer(sys.stdout)
    if args.what == "tail":
        w.writerow(["t", "lower", "exact", "upper"])
        for t in args.values or [0, 0.5, 1, 2, 3, 5]:
            lo, hi = oracle.gaussian_tail(t)
            w.writerow([t, repr(lo), repr(oracle.gaussian_sf(t)), repr(hi)])
    elif args.what == "concomitant":
        seed = 0 if args.seed is None else args.seed
        est = oracle.concomitant_mc(args.m, args.varrho, args.trials, seed)
        w.writerow(["m", "varrho", "trials", "mean_max", "se_max", "mean_concomitant", "se_concomitant",
                    "expected_max", "asymptotic_concomitant"])
        w.writerow([args.m, args.varrho, args.trials, repr(est.mean_max), repr(est.se_max),
                    repr(est.mean_concomitant), repr(est.se_concomitant), repr(oracle.expected_max_gaussian(args.m)),
                    repr(args.varrho * math.sqrt(2.0 * math.log(args.m)))])
    elif args.what == "band":
        w.writerow(["m", "band_probability", "drop_probability"])
        for m in args.values or [16, 64, 256, 1024, 2006]:
            w.writerow([int(m), repr(oracle.band_probability(int(m))), repr(oracle.drop_probability(int(m)))])
    elif args.what == "brute":
        if not (args.data and args.queries):
            raise SphereLSFError("oracle brute needs --data and --queries")
        points = read_sphere(args.data).points
        w.writerow(["query", "close", "mid", "far"])
        for i, q in enumerate(read_sphere(args.queries).points):
            g = oracle.brute_force(points, q, args.alpha, args.beta)
            w.writerow([i, g.close_count, g.mid_count, len(g.far_ids)])
    return 0


# -- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sphere-lsf", description=__doc__)
    p.add_argument("--seed", type=int, default=None, help="master seed (overrides the config file)")
    p.add_argument("--threads", type=int, default=1, help="worker threads for trial loops")
    p.add_argument("--config", type=str, default=None, help="flat key=value experiment spec")
    p.add_argument("--max-bank-mb", type=float, default=2048.0, help="memory budget for filter banks")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="write a planted dataset and its query")
    g.add_argument("out")
    g.add_argument("--query-out")
    g.add_argument("--n", type=int)
    g.add_argument("--d", type=int)
    g.add_argument("--alpha", type=float)
    g.add_argument("--planted", type=int)
    g.set_defaults(func=cmd_gen)

    b = sub.add_parser("build", help="build an index over a sphere dataset")
    b.add_argument("data")
    b.add_argument("out")
    b.add_argument("--structure", choices=KINDS)
    b.add_argument("--alpha", type=float)
    b.add_argument("--beta", type=float)
    b.add_argument("--t", type=int)
    b.set_defaults(func=cmd_build)

    q = sub.add_parser("query", help="answer queries from an index or a released table")
    q.add_argument("queries")
    q.add_argument("--data")
    q.add_argument("--index")
    q.add_argument("--beta", type=float)
    q.add_argument("--counts", action="store_true", help="also report raw bucket counts")
    q.add_argument("--release")
    q.add_argument("--structure-file")
    q.set_defaults(func=cmd_query)

    c = sub.add_parser("count", help="private counting experiment against the oracle")
    c.add_argument("--structure", choices=KINDS)
    c.add_argument("--epsilon", type=float)
    c.add_argument("--delta", type=float)
    c.add_argument("--trials", type=int)
    c.add_argument("--planted", type=int)
    c.add_argument("--released-only", action="store_true", help="emit only released values")
    c.add_argument("--out")
    c.set_defaults(func=cmd_count)

    r = sub.add_parser("dp-release", help="privatize an index's counts")
    r.add_argument("data")
    r.add_argument("index")
    r.add_argument("out")
    r.add_argument("structure_out")
    r.add_argument("--epsilon", type=float, required=True)
    r.add_argument("--delta", type=float, required=True)
    r.set_defaults(func=cmd_dp_release)

    a = sub.add_parser("dp-audit", help="certify the release law for adjacent counts")
    a.add_argument("--epsilon", type=float, required=True)
    a.add_argument("--delta", type=float, required=True)
    a.add_argument("--max-count", type=int, default=20)
    a.add_argument("--tolerance", type=float, default=1e-6)
    a.set_defaults(func=cmd_dp_audit)

    rc = sub.add_parser("recall", help="planted-point recall experiment")
    rc.add_argument("--structure", choices=KINDS)
    rc.add_argument("--trials", type=int)
    rc.add_argument("--planted", type=int)
    rc.add_argument("--t", type=int)
    rc.add_argument("--eta-override", type=float)
    rc.add_argument("--out")
    rc.set_defaults(func=cmd_recall)

    s = sub.add_parser("store-prob", help="drop-rate sweep over m")
    s.add_argument("--structure", choices=KINDS)
    s.add_argument("--trials", type=int)
    s.add_argument("--t", type=int)
    s.add_argument("--m-sweep", help="comma-separated filter counts")
    s.add_argument("--out")
    s.set_defaults(func=cmd_store_prob)

    e = sub.add_parser("embed", help="map Euclidean vectors onto the sphere")
    e.add_argument("data")
    e.add_argument("out")
    e.add_argument("--gamma", type=float, default=0.2)
    e.add_argument("--r", type=float, required=True)
    e.add_argument("--c", type=float, required=True)
    e.add_argument("--d-prime", type=int)
    e.add_argument("--embedding-out")
    e.add_argument("--verify", type=int, default=0, help="number of audit pairs per property")
    e.set_defaults(func=cmd_embed)

    o = sub.add_parser("oracle", help="ad-hoc oracle evaluations")
    o.add_argument("what", choices=("tail", "concomitant", "band", "brute"))
    o.add_argument("--values", type=float, nargs="*")
    o.add_argument("--m", type=int, default=10_000)
    o.add_argument("--varrho", type=float, default=0.5)
    o.add_argument("--trials", type=int, default=500)
    o.add_argument("--data")
    o.add_argument("--queries")
    o.add_argument("--alpha", type=float, default=0.5)
    o.add_argument("--beta", type=float, default=0.1)
    o.set_defaults(func=cmd_oracle)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SphereLSFError as exc:
        print(f"sphere-lsf: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
