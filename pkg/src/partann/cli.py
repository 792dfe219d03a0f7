"""Benchmark CLI: segmenter learning, index build, querying, exact ground
truth, recall evaluation, and an end-to-end bench pipeline.

Exit codes: 0 success, 1 usage error, 2 data error. All randomness funnels
through --seed flags (default 42, never wall clock); reported wall times
cover the operation only, with file-load time listed separately.
"""

from __future__ import annotations

import argparse
import json
import sys
import time

import numpy as np

from . import core, exact, hnsw, partition, segmenter
from .query import QueryConfig, batch_query

DEFAULT_SEED = 42
DEFAULT_KS = (1, 5, 10, 15, 50, 100)
DEFAULT_SAMPLE = 250_000

EXIT_USAGE = 1
EXIT_DATA = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _add_common(p):
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--workers", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    top = _Parser(prog="partann",
                  description="Partitioned HNSW nearest-neighbor benchmark tool")
    sub = top.add_subparsers(dest="command", required=True)

    p = sub.add_parser("learn-segmenter", parents=[], help="learn a segmenter")
    p.add_argument("--input", required=True, help="fvecs training data")
    p.add_argument("--out", required=True, help="segmenter JSON output")
    p.add_argument("--strategy", required=True, choices=["rs", "rh", "apd"])
    p.add_argument("--levels", type=int, default=3,
                   help="tree depth for rh/apd (segments = 2^levels)")
    p.add_argument("--segments", type=int, default=None,
                   help="segment count for rs")
    p.add_argument("--alpha", type=float, default=0.15)
    p.add_argument("--sample-size", type=int, default=DEFAULT_SAMPLE)
    _add_common(p)

    p = sub.add_parser("build", help="build a partitioned index")
    p.add_argument("--input", required=True, help="fvecs dataset")
    p.add_argument("--segmenter", required=True, help="segmenter JSON file")
    p.add_argument("--out", required=True, help="index directory")
    p.add_argument("--shards", type=int, default=1)
    p.add_argument("--m", type=int, default=16)
    p.add_argument("--ef-construction", type=int, default=200)
    p.add_argument("--distance", choices=["euclidean", "cosine"],
                   default="euclidean")
    p.add_argument("--spill", choices=["virtual", "physical"],
                   default="virtual")
    _add_common(p)

    p = sub.add_parser("query", help="run a query batch against an index")
    p.add_argument("--index", required=True, help="index directory")
    p.add_argument("--queries", required=True, help="fvecs query file")
    p.add_argument("--out", required=True,
                   help="output prefix (.ivecs ids, .fvecs distances, "
                        ".timing.json report)")
    p.add_argument("--topk", type=int, default=10)
    p.add_argument("--ef-search", type=int, default=100)
    p.add_argument("--confidence", type=float, default=0.95)
    p.add_argument("--per-shard-topk", choices=["on", "off"], default="on")
    p.add_argument("--f-literal", action="store_true",
                   help="use the one-sided quantile in perShardTopK")
    _add_common(p)

    p = sub.add_parser("exact", help="write exact ground truth")
    p.add_argument("--input", required=True, help="fvecs dataset")
    p.add_argument("--queries", required=True, help="fvecs query file")
    p.add_argument("--out", required=True, help="output prefix")
    p.add_argument("--k", type=int, default=100)
    p.add_argument("--distance", choices=["euclidean", "cosine"],
                   default="euclidean")
    p.add_argument("--partitions", type=int, default=1)
    _add_common(p)

    p = sub.add_parser("evaluate", help="recall of results against truth")
    p.add_argument("--results", required=True, help="ivecs result ids")
    p.add_argument("--truth", required=True, help="ivecs ground-truth ids")
    p.add_argument("--ks", default=",".join(map(str, DEFAULT_KS)),
                   help="comma-separated k values")
    p.add_argument("--json", dest="json_out", default=None,
                   help="also write recalls as JSON")

    p = sub.add_parser("bench", help="end-to-end pipeline on one dataset")
    p.add_argument("--input", required=True, help="fvecs dataset")
    p.add_argument("--queries", required=True, help="fvecs query file")
    p.add_argument("--out", required=True, help="working directory")
    p.add_argument("--strategy", default="rh", choices=["rs", "rh", "apd"])
    p.add_argument("--shards", type=int, default=1)
    p.add_argument("--levels", type=int, default=3)
    p.add_argument("--segments", type=int, default=None, help="rs segments")
    p.add_argument("--alpha", type=float, default=0.15)
    p.add_argument("--sample-size", type=int, default=DEFAULT_SAMPLE)
    p.add_argument("--m", type=int, default=16)
    p.add_argument("--ef-construction", type=int, default=200)
    p.add_argument("--ef-search", type=int, default=100)
    p.add_argument("--topk", type=int, default=100)
    p.add_argument("--confidence", type=float, default=0.95)
    p.add_argument("--per-shard-topk", choices=["on", "off"], default="on")
    p.add_argument("--distance", choices=["euclidean", "cosine"],
                   default="euclidean")
    p.add_argument("--ks", default=",".join(map(str, DEFAULT_KS)))
    _add_common(p)

    return top


def _timed(fn, *args, **kwargs):
    t0 = time.perf_counter()
    out = fn(*args, **kwargs)
    return out, time.perf_counter() - t0


def _learn(data: core.Dataset, strategy, levels, segments, alpha,
           sample_size, seed):
    rng = np.random.default_rng(seed)
    n_sample = min(sample_size, len(data))
    rows = np.sort(rng.choice(len(data), size=n_sample, replace=False))
    sample = core.Dataset(dim=data.dim, doc_ids=data.doc_ids[rows],
                          vectors=data.vectors[rows])
    if strategy == "rs":
        return segmenter.random_segmenter(segments or 2**levels, seed=seed)
    if strategy == "rh":
        return segmenter.learn_rh(sample, levels, alpha, seed)
    return segmenter.learn_apd(sample, levels, alpha, seed)


def cmd_learn_segmenter(args) -> int:
    data, load_s = _timed(core.load_fvecs, args.input)
    tree, learn_s = _timed(_learn, data, args.strategy, args.levels,
                           args.segments, args.alpha, args.sample_size,
                           args.seed)
    segmenter.save_segmenter(tree, args.out)
    print(f"segmenter {tree.kind} segments={tree.num_segments} -> {args.out}")
    print(f"load {load_s:.2f}s learn {learn_s:.2f}s")
    return 0


def cmd_build(args) -> int:
    data, load_s = _timed(core.load_fvecs, args.input)
    tree = segmenter.load_segmenter(args.segmenter)
    params = hnsw.HnswParams(M=args.m, ef_construction=args.ef_construction,
                             seed=args.seed)
    spec = partition.PartitionSpec(num_shards=args.shards, segmenter=tree)
    index, build_s = _timed(partition.build, data, spec, params,
                            core.Distance(args.distance),
                            workers=args.workers, spill_mode=args.spill)
    partition.save(index, args.out)
    print(f"index {args.shards}x{tree.num_segments} "
          f"({len(index.segments)} cells, {index.doc_count} docs) -> {args.out}")
    print(f"load {load_s:.2f}s build {build_s:.2f}s")
    return 0


def _write_results(results, top_k, prefix):
    ids = np.full((len(results), top_k), -1, dtype=np.int64)
    dists = np.full((len(results), top_k), np.inf, dtype=np.float32)
    for i, lst in enumerate(results):
        for j, (doc_id, dist) in enumerate(lst[:top_k]):
            ids[i, j] = doc_id
            dists[i, j] = dist
    core.save_ivecs(ids, prefix + ".ivecs")
    core.save_fvecs(core.Dataset.from_vectors(dists), prefix + ".fvecs")


def cmd_query(args) -> int:
    index, load_s = _timed(partition.load, args.index)
    queries = core.load_fvecs(args.queries)
    cfg = QueryConfig(top_k=args.topk, ef_search=args.ef_search,
                      confidence=args.confidence,
                      use_per_shard_topk=args.per_shard_topk == "on",
                      literal_quantile=args.f_literal)
    results, errors, report = batch_query(index, queries, cfg,
                                          workers=args.workers)
    _write_results(results, args.topk, args.out)
    report["loadSeconds"] = load_s
    with open(args.out + ".timing.json", "w", encoding="utf-8") as f:
        json.dump(report, f, sort_keys=True, indent=1)
    failed = sum(1 for e in errors if e)
    print(f"{report['count']} queries in {report['wallSeconds']:.2f}s "
          f"({report['qps']:.0f} qps), {failed} failed -> {args.out}.ivecs")
    return 0


def cmd_exact(args) -> int:
    data, load_s = _timed(core.load_fvecs, args.input)
    queries = core.load_fvecs(args.queries)
    results, scan_s = _timed(exact.partitioned_exact, data, queries.vectors, args.k,
                             core.Distance(args.distance),
                             partitions=args.partitions, workers=args.workers)
    _write_results(results, args.k, args.out)
    print(f"exact top-{args.k} for {len(queries)} queries -> {args.out}.ivecs")
    print(f"load {load_s:.2f}s scan {scan_s:.2f}s")
    return 0


def cmd_evaluate(args) -> int:
    results = core.load_ivecs(args.results)
    truth = core.load_ivecs(args.truth)
    if results.shape[0] != truth.shape[0]:
        raise core.DataError(
            f"row count mismatch: {results.shape[0]} results vs "
            f"{truth.shape[0]} truth")
    ks = [int(v) for v in args.ks.split(",") if v]
    for k in ks:
        if k < 1 or k > truth.shape[1]:
            raise core.DataError(
                f"k={k} outside ground-truth width {truth.shape[1]}")
        if k > results.shape[1]:
            raise core.DataError(
                f"k={k} exceeds result width {results.shape[1]}")
    recalls = {}
    for k in ks:
        vals = [core.recall_at_k(list(res), list(tr), k)
                for res, tr in zip(results, truth)]
        recalls[k] = float(np.mean(vals))
    header = " ".join(f"R@{k:<6}" for k in ks)
    row = " ".join(f"{recalls[k]:<8.4f}" for k in ks)
    print(header)
    print(row)
    payload = {f"recall@{k}": recalls[k] for k in ks}
    print(json.dumps(payload, sort_keys=True))
    if args.json_out:
        with open(args.json_out, "w", encoding="utf-8") as f:
            json.dump(payload, f, sort_keys=True, indent=1)
    return 0


def cmd_bench(args) -> int:
    import os

    os.makedirs(args.out, exist_ok=True)
    seg_path = os.path.join(args.out, "segmenter.json")
    idx_path = os.path.join(args.out, "index")
    res_prefix = os.path.join(args.out, "results")
    truth_prefix = os.path.join(args.out, "truth")

    data = core.load_fvecs(args.input)
    queries = core.load_fvecs(args.queries)

    tree, learn_s = _timed(_learn, data, args.strategy, args.levels,
                           args.segments, args.alpha, args.sample_size,
                           args.seed)
    segmenter.save_segmenter(tree, seg_path)

    params = hnsw.HnswParams(M=args.m, ef_construction=args.ef_construction,
                             seed=args.seed)
    spec = partition.PartitionSpec(num_shards=args.shards, segmenter=tree)
    index, build_s = _timed(partition.build, data, spec, params,
                            core.Distance(args.distance), workers=args.workers)
    partition.save(index, idx_path)

    truth, exact_s = _timed(exact.partitioned_exact, data, queries.vectors, args.topk,
                            core.Distance(args.distance),
                            partitions=max(1, args.workers),
                            workers=args.workers)
    _write_results(truth, args.topk, truth_prefix)

    cfg = QueryConfig(top_k=args.topk, ef_search=args.ef_search,
                      confidence=args.confidence,
                      use_per_shard_topk=args.per_shard_topk == "on")
    results, _, report = batch_query(index, queries, cfg,
                                     workers=args.workers)
    _write_results(results, args.topk, res_prefix)

    print(f"learn {learn_s:.2f}s build {build_s:.2f}s exact {exact_s:.2f}s "
          f"query {report['wallSeconds']:.2f}s ({report['qps']:.0f} qps)")
    eval_args = argparse.Namespace(results=res_prefix + ".ivecs",
                                   truth=truth_prefix + ".ivecs", ks=args.ks,
                                   json_out=os.path.join(args.out,
                                                         "recall.json"))
    return cmd_evaluate(eval_args)


_COMMANDS = {
    "learn-segmenter": cmd_learn_segmenter,
    "build": cmd_build,
    "query": cmd_query,
    "exact": cmd_exact,
    "evaluate": cmd_evaluate,
    "bench": cmd_bench,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except core.DataError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
