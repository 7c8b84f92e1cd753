"""``p2r``: command-line front end.

Exit codes: 0 ok, 1 usage, 2 data/format, 3 computation, 4 backend.
Errors are reported on stderr as one JSON object.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

from . import __version__
from .clustering import (
    ClusterAssignment,
    KMeansParams,
    kmeans,
    partition_manifests,
    read_embeddings,
)
from .confidence import QUARTILES, confidence_score, quartile_filter
from .errors import DataError, P2RError, UsageError
from .lambda_search import (
    CommandBackend,
    LambdaGrid,
    PrecomputedBackend,
    checkpoint_evaluator,
    grid_search,
    hyp_filename,
)
from .manifest import UtteranceRecord, read_manifest, write_manifest
from .task_arithmetic import apply, average, diff, vector_stats
from .tensor_store import read_archive, write_archive
from .wer import corpus_wer, join_refs_hyps


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}", usage=self.format_usage().strip())


def _positive_int(s):
    try:
        v = int(s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {s!r}") from None
    if v <= 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {v}")
    return v


def _seed(s):
    try:
        v = int(s, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer seed, got {s!r}") from None
    if not -(2**63) <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in 64 bits")
    return v


def _float(s):
    try:
        return float(s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {s!r}") from None


class _Ctx:
    def __init__(self, args):
        self.quiet = args.quiet
        self.threads = args.threads

    def summary(self, obj):
        if not self.quiet:
            print(json.dumps(obj, sort_keys=True))

    def emit(self, obj):
        print(json.dumps(obj, indent=2))

    def diag(self, obj):
        if not self.quiet:
            print(json.dumps(obj, sort_keys=True), file=sys.stderr)


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f, indent=2)
        f.write("\n")


def _read_json(path):
    try:
        with open(path, encoding="utf-8") as f:
            return json.load(f)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}", code="io") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc.msg})", code="bad_json") from None


def _load(path):
    try:
        return read_archive(path)
    except OSError as exc:
        raise DataError(f"cannot read archive {path}: {exc.strerror}", code="io") from None


# -- task arithmetic --------------------------------------------------------


def cmd_diff(args, ctx):
    tau = diff(_load(args.minuend), _load(args.subtrahend))
    write_archive(args.out, tau)
    ctx.summary({"command": "diff", "out": args.out, "tensors": len(tau), "elements": tau.num_elements})


def cmd_apply(args, ctx):
    out = apply(_load(args.base), _load(args.vector), args.lam, allow_negative=args.allow_negative)
    write_archive(args.out, out)
    ctx.summary({"command": "apply", "out": args.out, "lambda": args.lam, "tensors": len(out)})


def cmd_average(args, ctx):
    mean = average([_load(p) for p in args.vectors])
    write_archive(args.out, mean)
    ctx.summary({"command": "average", "out": args.out, "inputs": len(args.vectors), "tensors": len(mean)})


def cmd_stats(args, ctx):
    a = _load(args.a)
    b = _load(args.b) if args.b else None
    ctx.emit(vector_stats(a, b).to_json())


# -- evaluation -------------------------------------------------------------


def cmd_wer(args, ctx):
    refs = read_manifest(args.ref)
    hyps = read_manifest(args.hyp)
    joined = join_refs_hyps(refs, hyps, allow_missing=args.allow_missing)
    if args.allow_missing and len(joined) != len(refs):
        ctx.diag({"warning": "unmatched_ids", "scored": len(joined), "references": len(refs), "hypotheses": len(hyps)})
    ctx.emit(corpus_wer(joined, normalize=not args.no_normalize).to_json())


def cmd_cluster(args, ctx):
    if args.cluster_cmd == "split":
        return cmd_cluster_split(args, ctx)
    missing = [f"--{n}" for n in ("embeddings", "k", "seed", "out") if getattr(args, n) is None]
    if missing:
        raise UsageError(f"p2r cluster: missing required arguments: {', '.join(missing)}")
    e = read_embeddings(args.embeddings)
    params = KMeansParams(max_iter=args.max_iter, tol=args.tol, n_init=args.n_init)
    a = kmeans(e, args.k, args.seed, params, threads=ctx.threads)
    _write_json(args.out, a.to_json())
    sizes = [int((a.label_array == c).sum()) for c in range(a.k)]
    ctx.summary({"command": "cluster", "out": args.out, "k": a.k, "inertia": a.inertia, "cluster_sizes": sizes})


def cmd_cluster_split(args, ctx):
    a = ClusterAssignment.from_json(_read_json(args.assign))
    groups = partition_manifests(a, read_manifest(args.manifest))
    os.makedirs(args.out_dir, exist_ok=True)
    paths = []
    for c, recs in enumerate(groups):
        p = os.path.join(args.out_dir, f"cluster_{c}.jsonl")
        write_manifest(p, recs)
        paths.append(p)
    empty = [c for c, g in enumerate(groups) if not g]
    if empty:
        ctx.diag({"warning": "empty_clusters", "clusters": empty})
    ctx.summary({"command": "cluster split", "files": paths, "sizes": [len(g) for g in groups], "empty_clusters": empty})


def cmd_filter_conf(args, ctx):
    records = read_manifest(args.manifest)
    scores = [confidence_score(r) for r in records]
    res = quartile_filter(scores, args.level)
    kept = [r for r in records if r.id in res.kept]
    write_manifest(args.out, kept)
    info = {"level": res.level, "threshold": res.threshold, "kept": len(kept), "total": res.total, "keep_rate": res.keep_rate}
    ctx.diag(info)
    ctx.summary({"command": "filter-conf", "out": args.out, **info})


def cmd_search_lambda(args, ctx):
    base, vec = _load(args.base), _load(args.vector)
    dev = read_manifest(args.dev)
    backend = PrecomputedBackend(args.hyp_dir) if args.hyp_dir else CommandBackend(args.cmd)
    grid = LambdaGrid.parse(args.grid) if args.grid else LambdaGrid()
    evaluator = checkpoint_evaluator(base, vec, dev, backend, normalize=not args.no_normalize)
    ctx.emit(grid_search(grid, evaluator, threads=ctx.threads).to_json())


# -- toy --------------------------------------------------------------------


def _toy_configs(args):
    from .toy import ExperimentConfig, ToyWorldConfig

    raw = _read_json(args.config) if args.config else {}
    if not isinstance(raw, dict) or set(raw) - {"world", "experiment"}:
        raise DataError("toy config must be an object with optional 'world' and 'experiment' keys", code="bad_config")
    world_raw = raw.get("world", {})
    if args.seed is None and "master_seed" not in world_raw:
        raise UsageError("toy commands need an explicit seed: pass --seed or set world.master_seed in --config")
    try:
        cfg = ToyWorldConfig.from_json(world_raw)
        exp = ExperimentConfig.from_json(raw.get("experiment", {}))
    except TypeError as exc:
        raise DataError(f"bad toy config: {exc}", code="bad_config") from None
    if args.seed is not None:
        cfg = replace(cfg, master_seed=args.seed)
    return cfg, exp


def _seed_list(cfg, n):
    return [cfg.master_seed + i for i in range(n)]


def cmd_toy_run(args, ctx):
    from .toy import run_seeds, summarize

    cfg, exp = _toy_configs(args)
    reports = run_seeds(cfg, exp, _seed_list(cfg, args.seeds), k=args.k, threads=ctx.threads)
    doc = {
        "world": cfg.to_json(),
        "experiment": exp.to_json(),
        "k": args.k,
        "summary": summarize(reports),
        "reports": [r.to_json() for r in reports],
    }
    _write_json(args.out, doc)
    if args.emit_manifests:
        emit_toy_manifests(cfg, exp, args.emit_manifests)
    ctx.summary({"command": "toy run", "out": args.out, **doc["summary"]})


def cmd_toy_sweep_lambda(args, ctx):
    import numpy as np

    from .toy import generate_world, lambda_sweep

    cfg, exp = _toy_configs(args)
    grid = LambdaGrid.parse(args.grid).values if args.grid else LambdaGrid.parse("0.0:1.0:0.1").values
    seeds = _seed_list(cfg, args.seeds)
    curves = [lambda_sweep(generate_world(replace(cfg, master_seed=s)), exp, grid) for s in seeds]
    mean = [float(np.mean([c[i][1] for c in curves])) for i in range(len(grid))]
    best = int(np.argmin(mean))
    doc = {
        "seeds": seeds,
        "trace": [{"lambda": lam, "mean_wer": w} for lam, w in zip(grid, mean)],
        "per_seed": [[w for _, w in c] for c in curves],
        "argmin_lambda": grid[best],
        "interior_minimum": 0 < best < len(grid) - 1,
    }
    _write_json(args.out, doc)
    ctx.summary({"command": "toy sweep-lambda", "out": args.out, "argmin_lambda": grid[best], "interior_minimum": doc["interior_minimum"]})


def cmd_toy_sweep_k(args, ctx):
    import numpy as np

    from .toy import run_seeds

    cfg, exp = _toy_configs(args)
    ks = [int(x) for x in args.ks.split(",")]
    if any(k < 1 for k in ks):
        raise UsageError("--ks must be positive integers")
    seeds = _seed_list(cfg, args.seeds)
    rows = []
    for k in ks:
        reps = run_seeds(cfg, exp, seeds, k=k, threads=ctx.threads)
        rows.append(
            {
                "k": k,
                "mean_wer_corrected": float(np.mean([r.wer_corrected for r in reps])),
                "mean_wer_pseudo": float(np.mean([r.wer_pseudo for r in reps])),
                "chosen_lambdas": [r.chosen_lambda for r in reps],
            }
        )
    _write_json(args.out, {"seeds": seeds, "trace": rows})
    ctx.summary({"command": "toy sweep-k", "out": args.out, "ks": ks})


def cmd_toy_decode(args, ctx):
    import numpy as np

    from .toy import ToyUtterance, _params, hypothesis_records

    model = _load(args.checkpoint)
    d = _params(model)[0].shape[1]
    frames = {}
    with open(args.frames, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                arr = np.asarray(obj["frames"], dtype=np.float64)
                frames[obj["id"]] = arr
            except (ValueError, KeyError, TypeError):
                raise DataError(f"{args.frames}:{lineno}: bad frames record", code="bad_frames", line=lineno) from None
            if arr.ndim != 2 or arr.shape[1] != d or not np.all(np.isfinite(arr)):
                raise DataError(f"{args.frames}:{lineno}: frames must be finite [L, {d}]", code="bad_frames", line=lineno)
    utts = []
    for r in read_manifest(args.manifest):
        if r.id not in frames:
            raise DataError(f"no frames for utterance {r.id!r}", code="unknown_id", id=r.id)
        utts.append(ToyUtterance(r.id, "", r.speaker or "", "", (), frames[r.id]))
    for rec in hypothesis_records(model, utts):
        print(json.dumps(rec.to_json()))


def emit_toy_manifests(cfg, exp, out_dir):
    """Dump one world (``cfg.master_seed``) as manifests, embeddings,
    frames and checkpoints for the non-toy commands."""
    from .toy import (
        correction_vector,
        decode_all,
        generate_world,
        hypothesis_records,
        train,
        utterance_embeddings,
        _pretrain,
    )

    world = generate_world(cfg)
    os.makedirs(out_dir, exist_ok=True)
    folds = {"pretrain": exp.pretrain_accents, "source": exp.source_accents, "target": exp.target_accents}
    theta_pre = _pretrain(world, exp)
    with open(os.path.join(out_dir, "frames.jsonl"), "w", encoding="utf-8") as f:
        for u in world.utterances:
            f.write(json.dumps({"id": u.id, "frames": u.frames.tolist()}) + "\n")
    for fold, accents in folds.items():
        for split in ("train", "dev", "test"):
            utts = world.select(accents, split)
            if not utts:
                continue
            stem = os.path.join(out_dir, f"{fold}_{split}")
            write_manifest(stem + "_refs.jsonl", [UtteranceRecord(u.id, reference=u.text, speaker=u.speaker) for u in utts])
            write_manifest(stem + "_pseudo.jsonl", hypothesis_records(theta_pre, utts))
            e = utterance_embeddings(utts)
            with open(stem + "_embeddings.jsonl", "w", encoding="utf-8") as f:
                for uid, v in zip(e.ids, e.vectors):
                    f.write(json.dumps({"id": uid, "embedding": v.tolist()}) + "\n")
    src = world.select(exp.source_accents, "train")
    tgt = world.select(exp.target_accents, "train")
    pseudo_src = decode_all(theta_pre, src)
    real_s = train(theta_pre, src, None, exp.hyper)
    pseudo_s = train(theta_pre, src, pseudo_src, exp.hyper)
    tau, _ = correction_vector(theta_pre, src, theta_pre, exp.hyper)
    theta_t = train(theta_pre, tgt, decode_all(theta_pre, tgt), exp.hyper)
    for name, m in {"theta_pre": theta_pre, "theta_s_real": real_s, "theta_s_pseudo": pseudo_s, "theta_t_pseudo": theta_t, "tau": tau}.items():
        write_archive(os.path.join(out_dir, f"{name}.tva"), m)
    hyp_dir = os.path.join(out_dir, "source_dev_hyps")
    os.makedirs(hyp_dir, exist_ok=True)
    dev = world.select(exp.source_accents, "dev")
    for lam in LambdaGrid(exp.lambda_grid):
        write_manifest(os.path.join(hyp_dir, hyp_filename(lam)), hypothesis_records(apply(pseudo_s, tau, lam), dev))


# -- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="p2r", description="Correction-vector toolkit for pseudo-label ASR adaptation.")
    p.add_argument("--version", action="version", version=f"p2r {__version__}")
    p.add_argument("--quiet", action="store_true", help="suppress summaries and diagnostics")
    p.add_argument("--threads", type=_positive_int, default=1, help="worker threads (never changes outputs)")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("diff", help="tau = minuend - subtrahend")
    s.add_argument("--minuend", required=True)
    s.add_argument("--subtrahend", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_diff)

    s = sub.add_parser("apply", help="out = base + lambda * vector")
    s.add_argument("--base", required=True)
    s.add_argument("--vector", required=True)
    s.add_argument("--lambda", dest="lam", type=_float, required=True)
    s.add_argument("--allow-negative", action="store_true")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_apply)

    s = sub.add_parser("average", help="elementwise mean of vectors")
    s.add_argument("--out", required=True)
    s.add_argument("vectors", nargs="+")
    s.set_defaults(func=cmd_average)

    s = sub.add_parser("stats", help="L2 norm and cosine similarity")
    s.add_argument("a")
    s.add_argument("b", nargs="?")
    s.set_defaults(func=cmd_stats)

    s = sub.add_parser("wer", help="corpus word error rate")
    s.add_argument("--ref", required=True)
    s.add_argument("--hyp", required=True)
    s.add_argument("--no-normalize", action="store_true")
    s.add_argument("--allow-missing", action="store_true")
    s.set_defaults(func=cmd_wer)

    s = sub.add_parser("cluster", help="k-means over utterance embeddings")
    s.add_argument("--embeddings")
    s.add_argument("--k", type=_positive_int)
    s.add_argument("--seed", type=_seed)
    s.add_argument("--out")
    s.add_argument("--max-iter", type=int, default=300)
    s.add_argument("--tol", type=_float, default=1e-4)
    s.add_argument("--n-init", type=_positive_int, default=10)
    s.set_defaults(func=cmd_cluster, cluster_cmd=None)
    csub = s.add_subparsers(dest="cluster_cmd", parser_class=_Parser)
    cs = csub.add_parser("split", help="write one manifest per cluster")
    cs.add_argument("--assign", required=True)
    cs.add_argument("--manifest", required=True)
    cs.add_argument("--out-dir", required=True)

    s = sub.add_parser("filter-conf", help="quartile confidence filtering")
    s.add_argument("--manifest", required=True)
    s.add_argument("--level", choices=sorted(QUARTILES), required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_filter_conf)

    s = sub.add_parser("search-lambda", help="grid-search the correction scale on dev WER")
    s.add_argument("--base", required=True)
    s.add_argument("--vector", required=True)
    s.add_argument("--dev", required=True)
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--hyp-dir")
    g.add_argument("--cmd")
    s.add_argument("--grid", help="start:stop:step (inclusive) or comma list")
    s.add_argument("--no-normalize", action="store_true")
    s.set_defaults(func=cmd_search_lambda)

    s = sub.add_parser("toy", help="desk-scale simulator")
    tsub = s.add_subparsers(dest="toy_cmd", required=True, parser_class=_Parser)

    def toy_common(t, seeds_default):
        t.add_argument("--config")
        t.add_argument("--seed", type=_seed, help="first master seed (overrides the config)")
        t.add_argument("--seeds", type=_positive_int, default=seeds_default, help="number of consecutive master seeds")
        t.add_argument("--out", required=True)

    t = tsub.add_parser("run", help="four-way WER comparison over seeds")
    toy_common(t, 20)
    t.add_argument("--k", type=_positive_int, help="use k speaker clusters")
    t.add_argument("--emit-manifests", metavar="DIR")
    t.set_defaults(func=cmd_toy_run)

    t = tsub.add_parser("sweep-lambda", help="target WER across lambda")
    toy_common(t, 20)
    t.add_argument("--grid")
    t.set_defaults(func=cmd_toy_sweep_lambda)

    t = tsub.add_parser("sweep-k", help="corrected WER across cluster counts")
    toy_common(t, 5)
    t.add_argument("--ks", default="1,2,4,8")
    t.set_defaults(func=cmd_toy_sweep_k)

    t = tsub.add_parser("decode", help="greedy-decode toy frames (a --cmd backend)")
    t.add_argument("--checkpoint", required=True)
    t.add_argument("--frames", required=True)
    t.add_argument("--manifest", required=True)
    t.set_defaults(func=cmd_toy_decode)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args.func(args, _Ctx(args))
        return 0
    except P2RError as exc:
        # --quiet silences summaries, never the error record
        print(json.dumps(exc.to_json(), sort_keys=True), file=sys.stderr)
        if isinstance(exc, UsageError):
            print(parser.format_usage().strip(), file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(json.dumps({"error": "io", "message": str(exc)}), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
