"""Command-line pipeline: gen-data | train | encode | index | query | eval | plot.

Every command is deterministic given identical inputs and seed. Exit codes:
0 success, 2 usage error (argparse), 3 missing file, 4 malformed file
(bad magic/version/truncation), 5 shape mismatch, 1 anything else; failures
print a one-line diagnostic to stderr.
"""

import argparse
import csv
import os
import sys

import numpy as np

from . import checkpoint, config, data, networks, retrieval, trainer
from .errors import ConfigError, FormatError, ShapeError

EXIT_MISSING_FILE = 3
EXIT_BAD_FORMAT = 4
EXIT_SHAPE_MISMATCH = 5


def _add_common(sub):
    sub.add_argument("--config", help="key=value config file")
    sub.add_argument("--seed", type=int, help="override the config seed")


def build_parser():
    parser = argparse.ArgumentParser(prog="salhash", description="saliency-guided binary hashing pipeline")
    commands = parser.add_subparsers(dest="command", required=True)

    p = commands.add_parser("gen-data", help="generate a synthetic dataset with ground-truth masks")
    _add_common(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_gen_data)

    p = commands.add_parser("train", help="alternating training on a generated dataset")
    _add_common(p)
    p.add_argument("--data", required=True, help="dataset manifest")
    p.add_argument("--out", required=True, help="output directory for checkpoint + history")
    p.add_argument("--bits", type=int, help="override code length k")
    p.set_defaults(func=cmd_train)

    p = commands.add_parser("encode", help="encode a dataset split to a code file")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="dataset manifest")
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.add_argument("--out", required=True, help="output code file")
    p.set_defaults(func=cmd_encode)

    p = commands.add_parser("index", help="merge code files into one retrieval database")
    _add_common(p)
    p.add_argument("inputs", nargs="+", help="code files to merge")
    p.add_argument("--out", required=True, help="output code file")
    p.set_defaults(func=cmd_index)

    p = commands.add_parser("query", help="rank the database for every query code")
    _add_common(p)
    p.add_argument("--db", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--top", type=int, default=10, help="ranks to keep per query (0 = all)")
    p.add_argument("--out", required=True, help="output CSV")
    p.set_defaults(func=cmd_query)

    p = commands.add_parser("eval", help="retrieval metrics (MAP, precision@n)")
    _add_common(p)
    p.add_argument("--db", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--map-cutoff", type=int, help="truncate MAP at this rank (default: full list)")
    p.add_argument("--out", required=True, help="output CSV")
    p.set_defaults(func=cmd_eval)

    p = commands.add_parser("plot", help="emit PR-curve and loss-convergence data")
    _add_common(p)
    p.add_argument("--db", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--history", help="training history CSV to re-emit as convergence data")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--svg", action="store_true", help="also render SVG figures (needs matplotlib)")
    p.set_defaults(func=cmd_plot)

    return parser


def cmd_gen_data(args):
    cfg = config.load_run_config(args.config)
    spec = config.synthetic_spec_from(cfg, seed=args.seed)
    train_ds, test_ds = data.generate(spec)
    manifest = data.save_dataset(args.out, spec, train_ds, test_ds)
    print(f"wrote {manifest} ({len(train_ds)} train / {len(test_ds)} test images)")
    return 0


def cmd_train(args):
    cfg = config.load_run_config(args.config)
    _, train_ds, _ = data.load_dataset(args.data)
    input_size = train_ds.images.shape[1:]
    tc = config.train_config_from(cfg, input_size, seed=args.seed, bits=args.bits)
    state = trainer.alternating_train(train_ds.images, train_ds.labels, tc)
    os.makedirs(args.out, exist_ok=True)
    history_path = os.path.join(args.out, "history.csv")
    trainer.save_history(state.history, history_path)
    ckpt_path = os.path.join(args.out, "checkpoint.bin")
    params = ([] if state.attention_net is None else state.attention_net.parameters()) + state.hash_net.parameters()
    meta = checkpoint.CheckpointMeta(*input_size, tc.bits, state.attention_net is not None)
    checkpoint.save_checkpoint(ckpt_path, meta, params)
    if state.history:
        last = state.history[-1]
        print(f"trained {tc.epochs} epochs: attention={last['total_attention']:.4f} hashing={last['total_hashing']:.4f}")
    print(f"wrote {ckpt_path} and {history_path}")
    return 0


def _load_networks(path):
    meta, arrays = checkpoint.load_checkpoint(path)
    attention_net, hash_net = networks.build_networks(
        meta.input_shape, meta.bits, seed=0, with_attention=meta.has_attention
    )
    params = ([] if attention_net is None else attention_net.parameters()) + hash_net.parameters()
    checkpoint.restore_params(params, arrays)
    return meta, attention_net, hash_net


def cmd_encode(args):
    meta, attention_net, hash_net = _load_networks(args.checkpoint)
    _, train_ds, test_ds = data.load_dataset(args.data)
    ds = train_ds if args.split == "train" else test_ds
    if len(ds) == 0:
        raise ValueError(f"encode: the {args.split} split has no images")
    if ds.images.shape[1:] != meta.input_shape:
        raise ShapeError(f"encode: dataset images {ds.images.shape[1:]} vs checkpoint input {meta.input_shape}")
    codes = retrieval.encode_dataset(ds.images, attention_net, hash_net)
    retrieval.save_codes(args.out, retrieval.build_code_set(codes, ds.labels))
    print(f"wrote {args.out} ({len(ds)} codes, {meta.bits} bits)")
    return 0


def cmd_index(args):
    merged = retrieval.merge_code_sets([retrieval.load_codes(path) for path in args.inputs])
    retrieval.save_codes(args.out, merged)
    print(f"wrote {args.out} ({len(merged)} codes, {merged.bits} bits)")
    return 0


def cmd_query(args):
    db = retrieval.load_codes(args.db)
    queries = retrieval.load_codes(args.queries)
    keep = len(db) if args.top in (0, None) else min(args.top, len(db))
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["query", "rank", "db", "distance", "relevant"])
        for qid in range(len(queries)):
            result = retrieval.rank(queries.codes[qid], db, query_id=qid, query_labels=queries.labels[qid])
            for pos in range(keep):
                writer.writerow(
                    [qid, pos + 1, int(result.order[pos]), int(result.distances[pos]), int(result.relevant[pos])]
                )
    print(f"wrote {args.out} ({len(queries)} queries x top-{keep})")
    return 0


def cmd_eval(args):
    cfg = config.load_run_config(args.config)
    db = retrieval.load_codes(args.db)
    queries = retrieval.load_codes(args.queries)
    cutoff = args.map_cutoff if args.map_cutoff is not None else cfg.get("map_cutoff", 0)
    cutoff = cutoff if cutoff else None
    import warnings as _warnings

    with _warnings.catch_warnings(record=True) as caught:
        _warnings.simplefilter("always")
        value = retrieval.mean_average_precision(queries, db, cutoff=cutoff)
    n_excluded = 0
    for warning in caught:
        sys.stderr.write(f"warning: {warning.message}\n")
        n_excluded = int(str(warning.message).split(" ", 1)[0])
    rows = [("map" if cutoff is None else f"map@{cutoff}", db.bits, value)]
    rows.append(("queries_excluded", db.bits, n_excluded))
    cutoffs = [n for n in cfg.get("precision_cutoffs", (1, 5, 10)) if n <= len(db)]
    for n, precision in retrieval.precision_at_cutoffs(queries, db, cutoffs):
        rows.append((f"precision@{n}", db.bits, precision))
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "bits", "value"])
        writer.writerows(rows)
    print(f"wrote {args.out} (map={value:.4f})")
    return 0


def cmd_plot(args):
    db = retrieval.load_codes(args.db)
    queries = retrieval.load_codes(args.queries)
    os.makedirs(args.out, exist_ok=True)
    pr_path = os.path.join(args.out, "pr_curve.csv")
    points = retrieval.precision_recall_curve(queries, db)
    with open(pr_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["radius", "recall", "precision"])
        writer.writerows(points)
    written = [pr_path]
    conv_rows = None
    if args.history:
        conv_rows = trainer.load_history(args.history)
        conv_path = os.path.join(args.out, "convergence.csv")
        with open(conv_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "total_attention", "total_hashing"])
            for row in conv_rows:
                writer.writerow([row["epoch"], row["total_attention"], row["total_hashing"]])
        written.append(conv_path)
    if args.svg:
        written.extend(_render_svg(args.out, points, conv_rows))
    print("wrote " + ", ".join(written))
    return 0


def _render_svg(out_dir, pr_points, conv_rows):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    written = []
    fig, ax = plt.subplots(figsize=(4, 3))
    ax.plot([p[1] for p in pr_points], [p[2] for p in pr_points], marker="o")
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    ax.set_ylim(0, 1.05)
    path = os.path.join(out_dir, "pr_curve.svg")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    written.append(path)
    if conv_rows:
        fig, ax = plt.subplots(figsize=(4, 3))
        epochs = [row["epoch"] for row in conv_rows]
        ax.plot(epochs, [row["total_attention"] for row in conv_rows], label="attention")
        ax.plot(epochs, [row["total_hashing"] for row in conv_rows], label="hashing")
        ax.set_xlabel("epoch")
        ax.set_ylabel("objective")
        ax.legend()
        path = os.path.join(out_dir, "convergence.svg")
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
        written.append(path)
    return written


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        sys.stderr.write(f"error: missing file: {exc.filename or exc}\n")
        return EXIT_MISSING_FILE
    except FormatError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_BAD_FORMAT
    except ShapeError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_SHAPE_MISMATCH
    except (ConfigError, ValueError, RuntimeError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
