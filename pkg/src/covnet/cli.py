"""``covnet`` command line: gen-data, train, eval, search, project.

Every command accepts ``--config FILE`` (a JSON object whose keys are the
option names with underscores); explicit flags override it.  The fully
resolved options are written next to the outputs so a run can be replayed
with ``--config`` alone.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from covnet import data as D
from covnet import evaluation as E
from covnet.mapping import MappingError
from covnet.model import VARIANTS, resolve_variant
from covnet.nn import ContractError, NumericError
from covnet.training import (
    CheckpointError,
    TrainConfig,
    TrainingError,
    load_checkpoint,
    save_checkpoint,
    train,
)

PROG = "covnet"

DEFAULTS = {
    "gen-data": {
        "classes": 4,
        "per_class": 200,
        "dim": 20,
        "spread": 1.0,
        "center_scale": 5.0,
        "seed": 42,
        "superclasses": None,
        "ratio": 5.0,
        "out": "data.csv",
    },
    "train": {
        "data": None,
        "idx": None,
        "out_dir": "run",
        "split": [0.7, 0.1, 0.2],
        "split_seed": None,
        **{k: v for k, v in TrainConfig().to_dict().items()},
        "quiet": False,
    },
    "eval": {
        "checkpoint": None,
        "data": None,
        "idx": None,
        "subset": "test",
        "k": [1, 2, 5, 10, 40],
        "corr_mode": "centroid",
        "out_dir": "eval",
    },
    "search": {
        "checkpoint": None,
        "data": None,
        "idx": None,
        "subset": "test",
        "query": None,
        "vector": None,
        "k": 10,
        "out": None,
    },
    "project": {
        "checkpoint": None,
        "data": None,
        "idx": None,
        "subset": "test",
        "out": "projection.csv",
    },
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {text}")
    return v


def _int_list(text: str) -> list[int]:
    out = [int(t) for t in text.split(",") if t.strip()]
    if not out:
        raise argparse.ArgumentTypeError("empty list")
    return out


def _float_list(text: str) -> list[float]:
    return [float(t) for t in text.split(",") if t.strip()]


def _bool(text: str) -> bool:
    if text.lower() in ("1", "true", "yes", "on"):
        return True
    if text.lower() in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {text}")


def _data_args(p):
    p.add_argument("--data", help="CSV dataset (label,f0,...)")
    p.add_argument("--idx", nargs=2, metavar=("IMAGES", "LABELS"), help="IDX image/label file pair")


def _view_args(p):
    p.add_argument("--checkpoint", help="checkpoint written by train")
    _data_args(p)
    p.add_argument("--subset", choices=["train", "val", "test", "all"], help="which split to embed")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog=PROG, description=__doc__.splitlines()[0], argument_default=argparse.SUPPRESS)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="write a synthetic Gaussian-blob dataset", argument_default=argparse.SUPPRESS)
    g.add_argument("--config")
    g.add_argument("--classes", type=int)
    g.add_argument("--per-class", dest="per_class", type=int)
    g.add_argument("--dim", type=int)
    g.add_argument("--spread", type=float)
    g.add_argument("--center-scale", dest="center_scale", type=float)
    g.add_argument("--seed", type=int)
    g.add_argument("--superclasses", type=_int_list, help="superclass of each class, e.g. 0,0,1,1")
    g.add_argument("--ratio", type=float, help="superclass/subclass center distance ratio")
    g.add_argument("--out")

    t = sub.add_parser("train", help="train a model variant", argument_default=argparse.SUPPRESS)
    t.add_argument("--config")
    _data_args(t)
    t.add_argument("--out-dir", dest="out_dir")
    t.add_argument("--variant", help=f"one of {', '.join(VARIANTS)}")
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", dest="batch_size", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--seed", type=int)
    t.add_argument("--patience", type=int)
    t.add_argument("--margin", type=float)
    t.add_argument("--hidden", type=_int_list, help="hidden widths, e.g. 32 or 64,32")
    t.add_argument("--q", type=int, help="embedding dimension")
    t.add_argument("--dropout", type=float)
    t.add_argument("--batchnorm", type=_bool)
    t.add_argument("--siamese-mode", dest="siamese_mode", choices=["bce", "contrastive"])
    t.add_argument("--resample-per-epoch", dest="resample_per_epoch", type=_bool)
    t.add_argument("--split", type=_float_list, help="train,val,test fractions")
    t.add_argument("--split-seed", dest="split_seed", type=int)
    t.add_argument("--quiet", action="store_true")

    e = sub.add_parser("eval", help="k-NN accuracy, class correlation and embedding export", argument_default=argparse.SUPPRESS)
    e.add_argument("--config")
    _view_args(e)
    e.add_argument("--k", type=_int_list, help="comma-separated neighbour counts")
    e.add_argument("--corr-mode", dest="corr_mode", choices=["centroid", "sample"])
    e.add_argument("--out-dir", dest="out_dir")

    s = sub.add_parser("search", help="top-k similar samples for a query", argument_default=argparse.SUPPRESS)
    s.add_argument("--config")
    _view_args(s)
    s.add_argument("--query", type=int, help="id of a stored sample")
    s.add_argument("--vector", type=_float_list, help="external query embedding")
    s.add_argument("--k", type=_positive_int)
    s.add_argument("--out")

    pr = sub.add_parser("project", help="2-D PCA coordinates of the embeddings", argument_default=argparse.SUPPRESS)
    pr.add_argument("--config")
    _view_args(pr)
    pr.add_argument("--out")
    return parser


def resolve_options(command: str, given: dict) -> dict:
    """Defaults, then the ``--config`` document, then explicit flags."""
    opts = dict(DEFAULTS[command])
    cfg_path = given.pop("config", None)
    if cfg_path is not None:
        doc = json.loads(Path(cfg_path).read_text())
        if not isinstance(doc, dict):
            raise UsageError(f"{cfg_path}: config must be a JSON object")
        doc = doc.get(command, doc)
        unknown = set(doc) - set(opts) - {"command"}
        if unknown:
            raise UsageError(f"{cfg_path}: unknown options {sorted(unknown)}")
        opts.update({k: v for k, v in doc.items() if k != "command"})
    opts.update(given)
    return opts


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=1, allow_nan=False) + "\n")


def _load_data(opts) -> D.LabeledDataset:
    if opts.get("idx"):
        return D.load_idx(*opts["idx"])
    if opts.get("data"):
        return D.load_csv(opts["data"])
    raise UsageError("a dataset is required: pass --data FILE or --idx IMAGES LABELS")


# ---------------------------------------------------------------- commands


def cmd_gen_data(opts) -> int:
    spec = D.BlobSpec(
        classes=opts["classes"],
        per_class=opts["per_class"],
        dim=opts["dim"],
        spread=opts["spread"],
        center_scale=opts["center_scale"],
        seed=opts["seed"],
        superclasses=opts["superclasses"],
        ratio=opts["ratio"],
    )
    dataset = D.generate(spec)
    out = Path(opts["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    D.save_csv(dataset, out)
    # options sit under the command name so the manifest replays with --config
    manifest = {"gen-data": opts, "rows": len(dataset), "class_counts": dataset.class_counts().tolist()}
    _write_json(out.with_suffix(".manifest.json"), manifest)
    print(f"wrote {len(dataset)} rows to {out}")
    return 0


def cmd_train(opts) -> int:
    known = TrainConfig().to_dict().keys()
    config = TrainConfig.from_dict({k: opts[k] for k in known})
    try:
        config.variant = resolve_variant(config.variant)
    except ContractError as exc:
        raise UsageError(str(exc)) from None
    opts["variant"] = config.variant
    split_seed = config.seed if opts["split_seed"] is None else opts["split_seed"]
    opts["split_seed"] = split_seed
    fr = list(opts["split"])
    if len(fr) != 3:
        raise UsageError("--split needs three fractions: train,val,test")
    split_spec = D.SplitSpec(*fr, seed=split_seed)

    dataset = _load_data(opts)
    tr, va, _ = D.split(dataset, split_spec)
    tr, va, stats = D.standardize(tr, va)
    out = Path(opts["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / "history.jsonl"
    log_path.write_text("")

    def on_epoch(rec):
        with open(log_path, "a") as fh:
            fh.write(json.dumps(vars(rec)) + "\n")
        if not opts["quiet"]:
            print(f"epoch {rec.epoch:4d}  train {rec.train_loss:.6f}  val {rec.val_loss:.6f}")

    model, history = train(tr, va, config, on_epoch=on_epoch)
    extra = {
        "split": split_spec.to_dict(),
        "standardizer": stats.to_dict(),
        "label_names": list(dataset.label_names),
        "in_dim": dataset.dim,
        "data_sha256": E.dataset_hash(dataset),
        "initial_loss": history.initial_loss,
        "epochs_run": len(history.records),
    }
    save_checkpoint(model, out / "checkpoint.json", config, history.best_epoch, extra)
    _write_json(out / "config.json", {"command": "train", **opts})
    best = history.records[history.best_epoch - 1]
    print(f"best epoch {history.best_epoch} (val {best.val_loss:.6f}); checkpoint {out / 'checkpoint.json'}")
    return 0


def _view(opts):
    """Checkpoint, and the chosen split embedded with the model's own scaling."""
    if not opts.get("checkpoint"):
        raise UsageError("--checkpoint is required")
    ckpt = load_checkpoint(opts["checkpoint"])
    dataset = _load_data(opts)
    extra = ckpt.extra
    if dataset.dim != extra.get("in_dim", dataset.dim):
        raise ContractError(f"dataset has {dataset.dim} features, model expects {extra['in_dim']}")
    if opts["subset"] != "all":
        parts = D.split(dataset, D.SplitSpec(**extra["split"]))
        dataset = parts[("train", "val", "test").index(opts["subset"])]
    if "standardizer" in extra:
        dataset = D.Standardizer.from_dict(extra["standardizer"]).apply(dataset)
    return ckpt, dataset, E.embed_dataset(ckpt.model, dataset)


def cmd_eval(opts) -> int:
    ckpt, dataset, table = _view(opts)
    for k in opts["k"]:
        if not 1 <= k <= len(table) - 1:
            raise ContractError(f"k = {k} is invalid for {len(table)} samples (need 1 <= k < N)")
    meta = {
        "variant": ckpt.model.variant,
        "seed": (ckpt.config or {}).get("seed"),
        "best_epoch": ckpt.best_epoch,
        "subset": opts["subset"],
        "samples": len(table),
        "dataset_sha256": E.dataset_hash(dataset),
        "label_names": ckpt.extra.get("label_names"),
    }
    report = E.eval_report(table, opts["k"], dataset.n_classes, meta, opts["corr_mode"])
    out = Path(opts["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    E.write_report(report, out / "report.json")
    E.write_embeddings(table, out / "embeddings.csv")
    _write_json(out / "config.json", {"command": "eval", **opts})
    for k, acc in zip(report["k"], report["accuracy"]):
        print(f"k={k:<4d} accuracy {acc:.4f}")
    return 0


def cmd_search(opts) -> int:
    if (opts["query"] is None) == (opts["vector"] is None):
        raise UsageError("pass exactly one of --query ID or --vector V0,V1,...")
    if opts["k"] < 1:
        raise UsageError(f"--k must be a positive integer, got {opts['k']}")
    _, _, table = _view(opts)
    query = opts["query"] if opts["query"] is not None else opts["vector"]
    try:
        hits = E.topk_search(table, query, opts["k"])
    except KeyError:
        raise ContractError(f"unknown query id {opts['query']} in the {opts['subset']} split") from None
    lines = ["rank,id,similarity,relevant"]
    for rank, h in enumerate(hits, 1):
        rel = "" if h.relevant is None else str(int(h.relevant))
        lines.append(f"{rank},{h.id},{h.similarity!r},{rel}")
    text = "\n".join(lines) + "\n"
    if opts["out"]:
        Path(opts["out"]).write_text(text)
    sys.stdout.write(text)
    return 0


def cmd_project(opts) -> int:
    _, _, table = _view(opts)
    coords = E.pca_project(table)
    out = Path(opts["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    E.write_projection(table, coords, out)
    print(f"wrote {len(table)} points to {out}")
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "search": cmd_search,
    "project": cmd_project,
}

_EXPECTED = (
    UsageError,
    ContractError,
    MappingError,
    D.DataFormatError,
    CheckpointError,
    TrainingError,
    NumericError,
    OSError,
    json.JSONDecodeError,
)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        ns = vars(parser.parse_args(argv))
        command = ns.pop("command")
        return COMMANDS[command](resolve_options(command, ns))
    except UsageError as exc:
        msg = " ".join(str(exc).split())
        print(f"{PROG}: usage error: {msg}", file=sys.stderr)
        return 2
    except _EXPECTED as exc:
        msg = " ".join(str(exc).split())
        print(f"{PROG}: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
