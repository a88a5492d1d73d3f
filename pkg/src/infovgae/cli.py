"""Command-line entry point.

Exit codes: 0 success, 1 data error, 2 config error, 3 numeric abort.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace

import numpy as np
import yaml

from . import analysis
from .config import ConfigError, load_config
from .graph import DataError, build_bhin, normalize
from .io import (
    atomic_write, emit_scatter, generate_synthetic, load_checkpoint, load_edgelist,
    load_ideology, load_labels, load_rollcall, save_checkpoint, write_edgelist, write_kv_tsv,
)
from .model import ModelConfig, encoder_from_named
from .numerics import NumericError
from .trainer import embed, train, train_separate

log = logging.getLogger("infovgae")

CHECKPOINT = "checkpoint.ivgae"
TRACE = "trace.csv"
EMBEDDING = "embedding.tsv"
METRICS_JSON = "metrics.json"
METRICS_TXT = "metrics.txt"
ABLATIONS = ("full", "no_tc", "no_pi", "gaussian", "separate")


class Dataset:
    """Graph plus labels and ideology values keyed by node index."""

    def __init__(self, run):
        data = run.data
        if data.edges is not None:
            records = load_edgelist(data.edges)
            raw_labels = {}
        else:
            rc = data.rollcall
            records, members, bills = load_rollcall(
                rc["members"], rc["votes"], major_parties=rc.get("parties"),
                reject_unknown=rc.get("reject_unknown", True))
            raw_labels = {**members, **bills}
        self.bhin = build_bhin(records, min_degree=data.min_degree)
        self.graph = normalize(self.bhin, exclude_from_target=data.exclude_from_target)
        if data.labels is not None:
            raw_labels = load_labels(data.labels)
        names = sorted({str(v) for v in raw_labels.values()})
        code = {name: i for i, name in enumerate(names)}
        self.label_names = names
        self.labels = {}
        for node, lab in raw_labels.items():
            idx = self._index(node)
            if idx is not None:
                self.labels[idx] = code[str(lab)]
        self.ideology = {}
        if data.ideology is not None:
            for node, v in load_ideology(data.ideology).items():
                idx = self._index(node, "user")
                if idx is not None:
                    self.ideology[idx] = v

    def _index(self, node, kind=None):
        try:
            return self.bhin.node_index(node, kind)
        except KeyError:
            return None


def _output(run, create=True):
    if create:
        os.makedirs(run.output, exist_ok=True)
    return run.output


def _load_model(run, ds):
    path = os.path.join(run.output, CHECKPOINT)
    if not os.path.exists(path):
        raise DataError(f"no checkpoint at {path}; run 'train' first")
    tensors, echo = load_checkpoint(path)
    try:
        encoder = encoder_from_named(tensors)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None
    if encoder.layers[0][0].shape[0] != ds.graph.n_nodes:
        raise DataError(f"{path}: checkpoint was trained on a different graph")
    model = ModelConfig(**echo["model"])
    rectified = model.rectified and not echo["train"].get("gaussian", False)
    return encoder, rectified


def _write_embedding(path, z, bhin):
    lines = ["\t".join(["node_id", "node_type"] + [f"z{t}" for t in range(z.shape[1])])]
    for i, node in enumerate(bhin.node_ids):
        lines.append("\t".join([node, bhin.node_type(i)] + [repr(float(v)) for v in z[i]]))
    atomic_write(path, "\n".join(lines) + "\n")


def cmd_train(args):
    run = load_config(args.config)
    if args.epochs is not None:
        run.train = replace(run.train, epochs=args.epochs)
    ds = Dataset(run)
    log.info("graph: %d users, %d claims, %d relations", ds.bhin.n_users, ds.bhin.n_claims,
             ds.graph.n_relations)
    res = train(ds.graph, run.train, run.model)
    out = _output(run)
    echo = run.echo()
    echo["train"]["epochs"] = run.train.epochs
    save_checkpoint(os.path.join(out, CHECKPOINT),
                    [(n, t.value) for n, t in res.encoder.named() + res.discriminator.named()],
                    echo)
    res.trace.to_csv(os.path.join(out, TRACE))
    z = embed(ds.graph, res.encoder, rectified=res.rectified)
    _write_embedding(os.path.join(out, EMBEDDING), z, ds.bhin)
    print(f"trained {len(res.trace.rows)} steps; outputs in {out}")
    return 0


def cmd_embed(args):
    run = load_config(args.config)
    ds = Dataset(run)
    encoder, rectified = _load_model(run, ds)
    z = embed(ds.graph, encoder, mode=args.mode, seed=args.seed, rectified=rectified)
    out = _output(run)
    _write_embedding(os.path.join(out, EMBEDDING), z, ds.bhin)
    if z.shape[1] >= 2:
        sel = analysis.select_axes(z, 2)
        emit_scatter(z, sel, ds.bhin, ds.labels, os.path.join(out, "scatter.csv"),
                     os.path.join(out, "scatter.svg"))
    print(f"embedding written to {os.path.join(out, EMBEDDING)}")
    return 0


def _mean_embedding(run, ds):
    encoder, rectified = _load_model(run, ds)
    return embed(ds.graph, encoder, rectified=rectified)


def cmd_evaluate(args):
    run = load_config(args.config)
    ds = Dataset(run)
    if not ds.labels:
        raise DataError("evaluation needs labels (data.labels or roll-call parties)")
    z = _mean_embedding(run, ds)
    report, details = analysis.evaluate(z, ds.bhin, ds.labels, run.k_axes, ds.ideology or None)
    out = _output(run)
    atomic_write(os.path.join(out, METRICS_JSON), report.to_json())
    atomic_write(os.path.join(out, METRICS_TXT), report.to_text())
    unaligned = int(np.sum(details["pred"] == analysis.UNALIGNED))
    sys.stdout.write(report.to_text())
    print(f"unaligned_nodes={unaligned}")
    return 0


def cmd_rank(args):
    run = load_config(args.config)
    ds = Dataset(run)
    z = _mean_embedding(run, ds)
    if not 0 <= args.axis < z.shape[1]:
        raise ConfigError(f"--axis must be in [0, {z.shape[1] - 1}]")
    b = ds.bhin
    nodes = {"users": range(b.n_users), "claims": range(b.n_users, b.n_nodes),
             "all": range(b.n_nodes)}[args.nodes]
    order = analysis.rank_axis(z, args.axis, nodes)[:args.top]
    print("rank\tnode_id\tnode_type\tvalue")
    for r, i in enumerate(order, 1):
        print(f"{r}\t{b.node_ids[i]}\t{b.node_type(i)}\t{z[i, args.axis]:.6f}")
    return 0


def cmd_predict(args):
    run = load_config(args.config)
    ds = Dataset(run)
    z = _mean_embedding(run, ds)
    u = ds._index(args.user, "user")
    c = ds._index(args.claim, "claim")
    if u is None or c is None:
        missing = args.user if u is None else args.claim
        raise DataError(f"unknown node id {missing!r}")
    print(f"{analysis.stance_score(z[u], z[c]):.6f}")
    return 0


def cmd_synth(args):
    out = args.out
    os.makedirs(out, exist_ok=True)
    records, labels = generate_synthetic(args.users, args.claims, args.p_in, args.p_out, args.seed)
    write_edgelist(records, os.path.join(out, "edges.tsv"))
    write_kv_tsv(labels, ("node_id", "label"), os.path.join(out, "labels.tsv"))
    cfg = {"seed": args.seed, "output": "out",
           "data": {"edges": "edges.tsv", "labels": "labels.tsv"}}
    atomic_write(os.path.join(out, "config.yaml"), yaml.safe_dump(cfg, sort_keys=False))
    print(f"{len(records)} edges written to {out}")
    return 0


def cmd_ablate(args):
    run = load_config(args.config)
    if args.epochs is not None:
        run.train = replace(run.train, epochs=args.epochs)
    ds = Dataset(run)
    if not ds.labels:
        raise DataError("ablation needs labels")
    rows = []
    for variant in ABLATIONS:
        flags = {} if variant in ("full", "separate") else {variant: True}
        cfg = replace(run.train, **flags)
        if variant == "separate":
            zu, zc, _ = train_separate(ds.graph, cfg, run.model)
            z = np.vstack([zu, zc])
        else:
            res = train(ds.graph, cfg, run.model)
            z = embed(ds.graph, res.encoder, rectified=res.rectified)
        report, _ = analysis.evaluate(z, ds.bhin, ds.labels, run.k_axes)
        rows.append((variant, report.values.get("user_f1", float("nan")),
                     report.values.get("claim_f1", float("nan")), report["purity"]))
        log.info("%s done", variant)
    lines = ["variant\tuser_f1\tclaim_f1\tpurity"]
    lines += [f"{v}\t{uf:.4f}\t{cf:.4f}\t{p:.4f}" for v, uf, cf, p in rows]
    text = "\n".join(lines) + "\n"
    atomic_write(os.path.join(_output(run), "ablation.tsv"), text)
    sys.stdout.write(text)
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="infovgae", description="Belief embedding of user/claim graphs")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(name, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", required=True)
        return sp

    sp = with_config("train", "train a model and write checkpoint, trace and embedding")
    sp.add_argument("--epochs", type=int)
    sp.set_defaults(func=cmd_train)

    sp = with_config("embed", "write the embedding and scatter data from a checkpoint")
    sp.add_argument("--mode", choices=("mean", "sample"), default="mean")
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_embed)

    sp = with_config("evaluate", "compute metrics against labels")
    sp.set_defaults(func=cmd_evaluate)

    sp = with_config("rank", "list nodes by coordinate on one axis")
    sp.add_argument("--axis", type=int, required=True)
    sp.add_argument("--top", type=int, default=10)
    sp.add_argument("--nodes", choices=("users", "claims", "all"), default="all")
    sp.set_defaults(func=cmd_rank)

    sp = with_config("predict", "stance score of a user toward a claim")
    sp.add_argument("--user", required=True)
    sp.add_argument("--claim", required=True)
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("synth", help="write a two-block synthetic dataset and config")
    sp.add_argument("--out", required=True)
    sp.add_argument("--users", type=int, default=40)
    sp.add_argument("--claims", type=int, default=60)
    sp.add_argument("--p-in", type=float, default=0.3)
    sp.add_argument("--p-out", type=float, default=0.02)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_synth)

    sp = with_config("ablate", "train the full model and each ablation, print a table")
    sp.add_argument("--epochs", type=int)
    sp.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return 3
    except (DataError, analysis.MetricError, OSError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
