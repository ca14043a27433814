"""Command-line interface.

Subcommands: prepare, train, eval, plot, inspect-attention, ablate, make-synthetic.
A JSON config file (``--config``) overrides defaults and flags override the file.
"""

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from typing import List, Optional

from .corpus import (RecordError, RelationVocab, SchemaError, convert_nyt10_record, dataset_stats, dumps_record,
                     group_into_bags, iter_records, load_dataset, parse_record)
from .depparse import entity_anchor, sdp, stp, validate_tree
from .encoder import BundleError, NumericError
from .manifest import build_manifest, file_sha256, manifest_hash, write_manifest
from .model import CheckpointError
from .structinput import SequenceError
from .training import TrainConfig

logger = logging.getLogger("dsre")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_CHECKPOINT = 4
EXIT_NUMERIC = 5
EXIT_IO = 6


class CliError(Exception):
    def __init__(self, message, code):
        self.code = code
        super().__init__(message)


@dataclass
class RunConfig:
    train_path: Optional[str] = None
    test_path: Optional[str] = None
    profile: str = "tiny"
    bundle: Optional[str] = None
    variant: str = "full"
    seed: int = 42
    out_dir: str = "runs/default"
    max_seq_length: int = 64
    train: TrainConfig = field(default_factory=TrainConfig)

    def to_json(self):
        d = asdict(self)
        d["train"] = self.train.to_json()
        return d


TRAIN_FLAGS = {f.name for f in fields(TrainConfig)}


def resolve_config(args) -> RunConfig:
    """Defaults, then the config file, then explicit flags."""
    merged = {}
    train_over = {}
    if getattr(args, "config", None):
        with open(args.config, encoding="utf-8") as f:
            raw = json.load(f)
        train_over.update(raw.pop("train", {}))
        merged.update(raw)
    for f in fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is not None and f.name != "train":
            merged[f.name] = v
    for name in TRAIN_FLAGS - {"seed"}:
        v = getattr(args, name, None)
        if v is not None:
            train_over[name] = v
    unknown = set(merged) - {f.name for f in fields(RunConfig)}
    if unknown:
        raise CliError(f"unknown config keys: {sorted(unknown)}", EXIT_USAGE)
    unknown = set(train_over) - TRAIN_FLAGS
    if unknown:
        raise CliError(f"unknown train config keys: {sorted(unknown)}", EXIT_USAGE)
    # one seed for the whole run
    train_over.pop("seed", None)
    cfg = RunConfig(**merged, train=TrainConfig(**train_over))
    cfg.train.seed = cfg.seed
    return cfg


def _require(path, what):
    if not path:
        raise CliError(f"{what} path is required", EXIT_USAGE)
    if not os.path.exists(path):
        raise CliError(f"{what} {path!r} does not exist", EXIT_IO)


def _report_errors(errors: List[RecordError], limit=20):
    for e in errors[:limit]:
        print(f"error: {e}", file=sys.stderr)
    if len(errors) > limit:
        print(f"error: ... {len(errors) - limit} more", file=sys.stderr)


def _load(path, split, vocab=None):
    _require(path, f"{split} data")
    res = load_dataset(path, split, vocab)
    return res


# -- prepare -----------------------------------------------------------------------

def prepare_record(obj) -> dict:
    """Normalize one raw record and attach sub-tree and shortest paths."""
    rec = convert_nyt10_record(obj)
    inst = parse_record(rec)
    tree = validate_tree(inst.dep_heads)
    h = entity_anchor(tree, inst.head.span)
    t = entity_anchor(tree, inst.tail.span)
    return replace(inst, stp=stp(tree, h, t), sdp=sdp(tree, h, t))


def cmd_prepare(args):
    _require(args.input, "input")
    errors, instances = [], []
    with open(args.output, "w", encoding="utf-8") as out:
        for line_no, obj in iter_records(args.input):
            if isinstance(obj, RecordError):
                errors.append(obj)
                continue
            try:
                inst = prepare_record(obj)
            except SchemaError as e:
                rid = obj.get("id") if isinstance(obj, dict) else None
                errors.append(RecordError(line_no, rid, e.kind, str(e)))
                continue
            except (KeyError, TypeError, ValueError) as e:
                errors.append(RecordError(line_no, None, "schema", f"{type(e).__name__}: {e}"))
                continue
            out.write(dumps_record(inst) + "\n")
            instances.append(inst)
    vocab = RelationVocab.from_relations(i.relation for i in instances)
    stats = dataset_stats(instances, vocab)
    stats["rejected"] = len(errors)
    print(json.dumps(stats))
    _report_errors(errors)
    return EXIT_DATA if errors else EXIT_OK


# -- make-synthetic ----------------------------------------------------------------

def cmd_make_synthetic(args):
    from .corpus import write_dataset
    from .synthetic import SyntheticConfig, generate

    cfg = SyntheticConfig(relations=args.relations, train_bags=args.train_bags, test_bags=args.test_bags,
                          noise=args.noise, na_fraction=args.na_fraction, unexpressed=args.unexpressed,
                          entities=args.entities, seed=args.seed)
    train, test = generate(cfg)
    os.makedirs(args.out, exist_ok=True)
    train_path = os.path.join(args.out, "train.jsonl")
    test_path = os.path.join(args.out, "test.jsonl")
    write_dataset(train_path, train)
    write_dataset(test_path, test)
    write_manifest(args.out, build_manifest("make-synthetic", asdict(cfg), [train_path, test_path], cfg.seed))
    print(json.dumps({"train": len(train), "test": len(test), "out": args.out}))
    return EXIT_OK


# -- train -------------------------------------------------------------------------

def build_model(cfg: RunConfig, train_instances, vocab, variant=None):
    from .model import build_pretrained_model, build_tiny_model

    variant = variant or cfg.variant
    if cfg.profile == "tiny":
        return build_tiny_model(train_instances, vocab, variant, cfg.seed, cfg.train.dropout, cfg.max_seq_length), {}
    if cfg.profile == "pretrained":
        if not cfg.bundle:
            raise CliError("--bundle is required for the pretrained profile", EXIT_USAGE)
        _require(cfg.bundle, "bundle")
        k = 4 if cfg.train.fine_tune_last_k is None else cfg.train.fine_tune_last_k
        return build_pretrained_model(cfg.bundle, vocab, variant, cfg.seed, k, cfg.train.dropout,
                                      cfg.max_seq_length)
    raise CliError(f"unknown profile {cfg.profile!r}", EXIT_USAGE)


def cmd_train(args):
    from .model import save_checkpoint
    from .training import train

    cfg = resolve_config(args)
    res = _load(cfg.train_path, "train")
    _report_errors(res.errors)
    bags = group_into_bags(res.instances, "train", res.vocab)
    model, info = build_model(cfg, res.instances, res.vocab)
    os.makedirs(cfg.out_dir, exist_ok=True)
    result = train(model, bags, res.instances, cfg.train, log_path=os.path.join(cfg.out_dir, "train_log.jsonl"))
    save_checkpoint(model, cfg.out_dir)
    manifest = build_manifest("train", cfg.to_json(), [cfg.train_path], cfg.seed, {
        "bundle": info, "rejected_records": len(res.errors), "steps": result.steps,
        "class_weights": result.class_weights, "added_tokens": list(model.tokenizer.added_tokens),
        "weights_sha256": file_sha256(os.path.join(cfg.out_dir, "model.safetensors")),
    })
    write_manifest(cfg.out_dir, manifest)
    print(json.dumps({"checkpoint": cfg.out_dir, "steps": result.steps, "final_loss": result.log[-1]["loss"]
                      if result.log else None}))
    return EXIT_DATA if res.errors else EXIT_OK


# -- eval --------------------------------------------------------------------------

def cmd_eval(args):
    from .evaluate import (count_positives, metrics, plot_curves, pr_curve, predict_all, top_n_distribution,
                           write_curve_csv)
    from .model import load_checkpoint

    _require(args.checkpoint, "checkpoint")
    model = load_checkpoint(args.checkpoint)
    res = _load(args.test, "test", model.vocab)
    _report_errors(res.errors)
    bags = group_into_bags(res.instances, "test", model.vocab)
    preds = predict_all(bags, model, res.instances)
    positives = count_positives(bags, model.vocab)
    out = args.out or args.checkpoint
    os.makedirs(out, exist_ok=True)
    manifest = build_manifest("eval", {"checkpoint": os.path.abspath(args.checkpoint), "test": args.test},
                              [args.test, os.path.join(args.checkpoint, "model.safetensors")])
    stamp = manifest_hash(manifest)
    m = metrics(preds, positives)
    curve = pr_curve(preds, positives)
    report = {
        "manifest": stamp,
        "variant": model.variant,
        "predictions": len(preds),
        "total_positives": positives,
        **m,
        "top_300": top_n_distribution(preds, min(300, len(preds)), model.vocab),
        "rejected_records": len(res.errors),
    }
    with open(os.path.join(out, "metrics.json"), "w", encoding="utf-8") as f:
        json.dump(report, f, indent=2)
        f.write("\n")
    write_curve_csv(curve, os.path.join(out, "pr_curve.csv"), stamp)
    plot_curves({model.variant: (curve.recall, curve.precision)}, os.path.join(out, "pr_curve.png"))
    write_manifest(out, manifest, "eval_manifest.json")
    print(json.dumps({k: report[k] for k in ("auc", "p@100", "p@200", "p@300", "p@500", "manifest")}))
    return EXIT_DATA if res.errors else EXIT_OK


def cmd_plot(args):
    from .evaluate import plot_curves, read_curve_csv

    curves = {}
    for spec in args.curves:
        name, _, path = spec.rpartition("=")
        _require(path, "curve")
        curves[name or os.path.basename(os.path.dirname(os.path.abspath(path)))] = read_curve_csv(path)
    plot_curves(curves, args.out)
    print(args.out)
    return EXIT_OK


def cmd_inspect(args):
    from .evaluate import inspect_attention, plot_attention
    from .model import load_checkpoint

    _require(args.checkpoint, "checkpoint")
    model = load_checkpoint(args.checkpoint)
    res = _load(args.data, "test", model.vocab)
    match = [i for i in res.instances if i.id == args.instance_id]
    if not match:
        raise CliError(f"instance {args.instance_id!r} not found in {args.data}", EXIT_DATA)
    table = inspect_attention(match[0], model)
    print(table.format())
    if args.image:
        plot_attention(table, args.image)
    return EXIT_OK


def cmd_ablate(args):
    from .ablation import ABLATION_ORDER, format_report, run_ablation

    cfg = resolve_config(args)
    train_res = _load(cfg.train_path, "train")
    test_res = _load(cfg.test_path, "test", train_res.vocab)
    errors = train_res.errors + test_res.errors
    _report_errors(errors)
    train_bags = group_into_bags(train_res.instances, "train", train_res.vocab)
    test_bags = group_into_bags(test_res.instances, "test", train_res.vocab)
    variants = args.variants or list(ABLATION_ORDER)
    base = cfg.to_json()
    base.pop("variant")
    base.pop("train")
    rows = run_ablation(lambda v: build_model(cfg, train_res.instances, train_res.vocab, v)[0],
                        train_bags, train_res.instances, test_bags, test_res.instances, cfg.train,
                        variants, base)
    os.makedirs(cfg.out_dir, exist_ok=True)
    text = format_report(rows)
    with open(os.path.join(cfg.out_dir, "ablation.txt"), "w", encoding="utf-8") as f:
        f.write(text + "\n")
    with open(os.path.join(cfg.out_dir, "ablation.json"), "w", encoding="utf-8") as f:
        json.dump(rows, f, indent=2)
        f.write("\n")
    write_manifest(cfg.out_dir, build_manifest("ablate", cfg.to_json(), [cfg.train_path, cfg.test_path], cfg.seed,
                                               {"rows": [r["config_hash"] for r in rows]}))
    print(text)
    return EXIT_DATA if errors else EXIT_OK


# -- argument parsing --------------------------------------------------------------

def _run_flags(p):
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--train", dest="train_path")
    p.add_argument("--test", dest="test_path")
    p.add_argument("--profile", choices=("tiny", "pretrained"))
    p.add_argument("--bundle", help="pretrained bundle directory")
    p.add_argument("--variant", choices=("full", "no_et", "no_rel_emb", "no_rel_attn", "sdp"))
    p.add_argument("--seed", type=int)
    p.add_argument("--out", dest="out_dir")
    p.add_argument("--max-seq-length", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--warmup-fraction", type=float)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--dropout", type=float)
    p.add_argument("--bag-cap", type=int)
    p.add_argument("--fine-tune-last-k", type=int)


def build_parser():
    parser = argparse.ArgumentParser(prog="dsre", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="validate records and attach STP/SDP index arrays")
    p.add_argument("input")
    p.add_argument("output")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train a model")
    _run_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="held-out evaluation of a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("test")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("plot", help="overlay P-R curves")
    p.add_argument("curves", nargs="+", help="[name=]pr_curve.csv")
    p.add_argument("--out", default="pr_curves.png")
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("inspect-attention", help="relation-attention weights for one instance")
    p.add_argument("checkpoint")
    p.add_argument("data")
    p.add_argument("instance_id")
    p.add_argument("--image", help="write a heat-map image")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("ablate", help="train and evaluate the model variants")
    _run_flags(p)
    p.add_argument("--variants", nargs="+", choices=("full", "no_et", "no_rel_emb", "no_rel_attn", "sdp"))
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("make-synthetic", help="generate a synthetic corpus with planted patterns")
    p.add_argument("--out", required=True)
    p.add_argument("--relations", type=int, default=5)
    p.add_argument("--train-bags", type=int, default=2000)
    p.add_argument("--test-bags", type=int, default=500)
    p.add_argument("--noise", type=float, default=0.2)
    p.add_argument("--na-fraction", type=float, default=0.4)
    p.add_argument("--unexpressed", type=float, default=0.0)
    p.add_argument("--entities", type=int, default=400)
    p.add_argument("--seed", type=int, default=13)
    p.set_defaults(func=cmd_make_synthetic)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code
    except (CheckpointError, BundleError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except NumericError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (SchemaError, SequenceError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
