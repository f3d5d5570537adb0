"""``audiohash`` command line: synth | features | train | index | query | eval.

Exit codes: 0 success, 1 usage, 2 data error, 3 internal error. Results go to
stdout; progress and diagnostics go to stderr.
"""

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import features as F
from . import synth
from ._binio import FormatError
from .codec import VALID_BITS, CodeLengthError, HashCode, balanced_sign_array
from .encoder import ShapeMismatchError, encode_batch, load_checkpoint
from .index import build_index, load_index, save_index, search_topk
from .loss import DegenerateBalanceError
from .metrics import evaluate, random_ranking_map
from .training import ConfigError, LabeledSet, TrainConfig, load_config, make_split, train

log = logging.getLogger("audiohash")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3

DATA_ERRORS = (
    FormatError,
    F.AudioError,
    F.ManifestError,
    CodeLengthError,
    ShapeMismatchError,
    DegenerateBalanceError,
    FileNotFoundError,
    IsADirectoryError,
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _progress(label):
    def report(n, total):
        if n == total or n % 20 == 0:
            print(f"{label}: {n}/{total}", file=sys.stderr)

    return report


# --------------------------------------------------------------------------
# subcommands

def cmd_synth(args) -> int:
    sizes = None
    if args.class_sizes:
        sizes = tuple(int(s) for s in args.class_sizes.split(","))
        args.classes = len(sizes)
    try:
        spec = synth.SynthSpec(args.classes, args.per_class, args.duration, args.seed, sizes)
    except ValueError as e:
        raise UsageError(str(e)) from e
    manifest = synth.generate(spec, args.out)
    print(manifest)
    return EXIT_OK


def cmd_features(args) -> int:
    archive = F.extract_manifest(args.manifest, multi_window=args.multi_window, workers=args.workers, progress=_progress("features"))
    F.save_archive(archive, args.out)
    log.info("wrote %d clips (%s) to %s", len(archive), "multi-window" if args.multi_window else "single-window", args.out)
    print(args.out)
    return EXIT_OK


def _train_config(args) -> TrainConfig:
    base = load_config(args.config) if args.config else TrainConfig()
    return base.replace(
        bits=args.bits,
        epochs=args.epochs,
        batch_size=args.batch_size,
        lr=args.lr,
        seed=args.seed,
        loss_mode=args.loss_mode,
        protocol=args.protocol,
    )


def cmd_train(args) -> int:
    cfg = _train_config(args)
    archive = F.load_archive(args.features)
    if cfg.multi_window == archive.single_window:
        log.warning("config multi_window=%s disagrees with the archive; following the archive", cfg.multi_window)
        cfg = cfg.replace(multi_window=not archive.single_window)
    data = LabeledSet(archive.tensors, archive.label_names)
    split = make_split(data.labels, cfg)
    if split.unseen_classes:
        log.info("zero-shot: training on %d seen classes", len(split.seen_classes))

    log_path = args.log or str(Path(args.out).with_suffix(".log.csv"))
    result = train(data.subset(split.train), cfg, data.subset(split.validation), checkpoint_path=args.out, log_path=log_path)
    log.info("best epoch %d", result.best_epoch)
    print(args.out)
    return EXIT_OK


def _encode_archive(params, archive):
    v = encode_batch(params, [t.channels for t in archive.tensors])
    return balanced_sign_array(v)


def cmd_index(args) -> int:
    params = load_checkpoint(args.checkpoint)
    archive = F.load_archive(args.features)
    codes = _encode_archive(params, archive) if len(archive) else np.zeros((0, params.hash_bits), np.int8)
    index = build_index(codes, [t.clip_id for t in archive.tensors], [t.label for t in archive.tensors], archive.label_names, n_bits=params.hash_bits)
    save_index(index, args.out)
    log.info("indexed %d items at K=%d", len(index), index.n_bits)
    print(args.out)
    return EXIT_OK


def cmd_query(args) -> int:
    if args.k < 1:
        raise UsageError("k must be >= 1")
    index = load_index(args.index)
    params = load_checkpoint(args.checkpoint)
    if params.hash_bits != index.n_bits:
        raise CodeLengthError(f"checkpoint K={params.hash_bits} but index K={index.n_bits}")
    multi = bool(params.config.get("multi_window", True))
    tensor = F.extract_file(args.audio, Path(args.audio).stem, 0, multi_window=multi)
    code = balanced_sign_array(encode_batch(params, [tensor.channels]))[0]
    hits = search_topk(index, HashCode.from_signs(code), args.k)
    out = sys.stdout
    out.write("rank,id,label,distance\n")
    for rank, h in enumerate(hits, 1):
        name = index.label_names[h.label] if h.label < len(index.label_names) else str(h.label)
        out.write(f"{rank},{h.id},{name},{h.distance}\n")
    return EXIT_OK


def cmd_eval(args) -> int:
    if args.k < 1:
        raise UsageError("k must be >= 1")
    index = load_index(args.index)
    params = load_checkpoint(args.checkpoint)
    if params.hash_bits != index.n_bits:
        raise CodeLengthError(f"checkpoint K={params.hash_bits} but index K={index.n_bits}")
    archive = F.load_archive(args.features)
    cfg = TrainConfig.from_dict(params.config) if params.config else TrainConfig(bits=params.hash_bits)
    if args.protocol and args.protocol != cfg.protocol:
        log.warning("evaluating with protocol %s but the model was trained with %s", args.protocol, cfg.protocol)
        cfg = cfg.replace(protocol=args.protocol)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    data = LabeledSet(archive.tensors, archive.label_names)
    split = make_split(data.labels, cfg)
    db_ids = {archive.tensors[r].clip_id for r in split.database}
    db_index = index.subset([r for r, i in enumerate(index.ids) if i in db_ids])
    queries = [archive.tensors[r] for r in split.queries]
    report = evaluate(params, db_index, queries, ks=(args.k, "all"))
    if cfg.protocol == "zero-shot":
        seen = [archive.label_names[c] for c in split.seen_classes]
        unseen = [archive.label_names[c] for c in split.unseen_classes]
        report.notes = {"seen_classes": seen, "unseen_classes": unseen}
        print(f"seen classes: {' '.join(seen)}", file=sys.stderr)
        print(f"unseen classes: {' '.join(unseen)}", file=sys.stderr)
        rel = [int(np.sum(db_index.labels == q.label)) for q in queries]
        report.rows.append(("random_map", index.n_bits, "all", random_ranking_map(rel, len(db_index))))
    if args.out:
        report.write_csv(args.out)
    if args.per_query:
        report.write_per_query(args.per_query)
    sys.stdout.write("metric,bits,k,value\n")
    for m, b, k, v in report.rows:
        sys.stdout.write(f"{m},{b},{k},{v:.6f}\n")
    return EXIT_OK


# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="audiohash", description="Supervised deep hashing for audio-event retrieval")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a synthetic labeled corpus")
    s.add_argument("--out", required=True)
    s.add_argument("--classes", type=int, default=8)
    s.add_argument("--per-class", type=int, default=40)
    s.add_argument("--class-sizes", help="comma-separated per-class counts, overrides --classes/--per-class")
    s.add_argument("--duration", type=float, default=2.0)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("features", help="extract MFCC feature archive from a manifest")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--multi-window", action=argparse.BooleanOptionalAction, default=True)
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(func=cmd_features)

    s = sub.add_parser("train", help="train the hashing encoder")
    s.add_argument("--features", required=True)
    s.add_argument("--out", required=True, help="checkpoint path")
    s.add_argument("--log", help="training log CSV (default: <out>.log.csv)")
    s.add_argument("--config")
    s.add_argument("--bits", type=int, choices=VALID_BITS)
    s.add_argument("--epochs", type=int)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--seed", type=int)
    s.add_argument("--loss-mode", choices=("wcl", "tcl"))
    s.add_argument("--protocol", choices=("standard", "zero-shot"))
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("index", help="encode an archive into a retrieval index")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--features", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_index)

    s = sub.add_parser("query", help="rank the index against one audio file")
    s.add_argument("--index", required=True)
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--audio", required=True)
    s.add_argument("--k", type=int, default=10)
    s.set_defaults(func=cmd_query)

    s = sub.add_parser("eval", help="retrieval metrics under a protocol")
    s.add_argument("--index", required=True)
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--features", required=True)
    s.add_argument("--protocol", choices=("standard", "zero-shot"))
    s.add_argument("--k", type=int, default=100)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", help="report CSV")
    s.add_argument("--per-query", help="per-query CSV")
    s.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:  # --help exits 0, parse errors exit 1
        return int(e.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (UsageError, ConfigError) as e:
        print(f"audiohash {args.command}: usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except DATA_ERRORS as e:
        print(f"audiohash {args.command}: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except Exception as e:  # noqa: BLE001
        log.exception("internal error")
        print(f"audiohash {args.command}: internal error: {e}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
