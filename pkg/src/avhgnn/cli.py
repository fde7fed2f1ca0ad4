"""Command-line surface: dataset generation, training, evaluation, inspection.

Every subcommand echoes its effective configuration so a run can be
reproduced from its output alone. Exit codes: 0 success, 1 usage,
2 data or config problem, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .data import (DataFormatError, DatasetError, SYNTH_MODES, SynthSpec,
                   generate_synthetic, load_dataset)
from .graph import EdgeRule, EdgeRules, cross_modal_edges, temporal_edges
from .layers import FUSION_GAT, FUSION_MODES, MODALITIES, POOLING_MODES
from .metrics import evaluate
from .tensor import ComputeGraph, NumericError, ShapeError
from .training import (ConfigError, TrainConfig, load_checkpoint,
                       split_dataset, train, write_history_csv)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; this CLI reserves 2 for data problems."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _load_json(path) -> dict:
    try:
        with open(path) as f:
            return json.load(f)
    except OSError as exc:
        raise DatasetError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{path}: invalid JSON: {exc}") from exc


def _echo(label: str, payload: dict):
    print(f"{label}: {json.dumps(payload, sort_keys=True)}")


# -- gen-synth ----------------------------------------------------------------


def _add_gen_synth(sub):
    p = sub.add_parser("gen-synth", help="generate a synthetic dataset")
    p.add_argument("--spec", help="JSON file with SynthSpec fields")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--mode", choices=SYNTH_MODES)
    p.add_argument("--n-items", type=int)
    p.add_argument("--noise-sigma", type=float)
    p.add_argument("--seed", type=int)


def _cmd_gen_synth(args) -> int:
    spec_dict = _load_json(args.spec) if args.spec else {}
    for key, value in (("mode", args.mode), ("n_items", args.n_items),
                       ("noise_sigma", args.noise_sigma), ("seed", args.seed)):
        if value is not None:
            spec_dict[key] = value
    try:
        spec = SynthSpec.from_dict(spec_dict)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid synthetic spec: {exc}") from exc
    manifest_path = generate_synthetic(spec, args.out)
    _echo("spec", spec.to_dict())
    print(f"wrote {spec.n_items} items ({spec.n_audio}x{spec.d_audio} audio, "
          f"{spec.n_video}x{spec.d_video} video, {spec.n_classes} classes, "
          f"mode={spec.mode}) to {manifest_path}")
    return EXIT_OK


# -- train --------------------------------------------------------------------


_TRAIN_OVERRIDES = [
    ("lr", float), ("gamma", float), ("hidden", int), ("num_layers", int),
    ("max_iters", int), ("batch_size", int), ("seed", int), ("eval_every", int),
    ("warmup_iters", int), ("decay_at_iter", int),
]


def _add_train(sub):
    p = sub.add_parser("train", help="train a model on a manifest dataset")
    p.add_argument("--config", help="JSON file with TrainConfig fields")
    p.add_argument("--data", required=True, help="manifest.json path")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seeds", help="comma-separated seeds for a multi-seed run")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--pooling", choices=POOLING_MODES)
    p.add_argument("--fusion", choices=FUSION_MODES)
    p.add_argument("--modality", choices=MODALITIES)
    for name, typ in _TRAIN_OVERRIDES:
        p.add_argument(f"--{name.replace('_', '-')}", type=typ, dest=name)


def _train_config(args, base: TrainConfig | None = None) -> TrainConfig:
    if base is None:
        cfg_dict = _load_json(args.config) if args.config else {}
        try:
            cfg = TrainConfig.from_dict(cfg_dict)
        except TypeError as exc:
            raise ConfigError(f"invalid train config: {exc}") from exc
    else:
        cfg = base
    overrides = {}
    for name, _ in _TRAIN_OVERRIDES:
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value
    for name in ("pooling", "fusion", "modality"):
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value
    return replace(cfg, **overrides) if overrides else cfg


def _run_one_seed(items_train, items_val, cfg, out_dir: Path, tag: str,
                  resume=None):
    suffix = f"_{tag}" if tag else ""

    def progress(row):
        if row["iteration"] % max(1, cfg.eval_every) == 0:
            print(f"[{tag or 'train'}] iter {row['iteration']}/{cfg.max_iters} "
                  f"loss {row['loss']:.5f} lr {row['lr']:.5g} map {row['map']:.4f}")

    result = train(items_train, cfg, val_items=items_val, resume=resume,
                   progress=progress)
    ckpt_path = out_dir / f"checkpoint{suffix}.hgck"
    result.save(ckpt_path)
    write_history_csv(out_dir / f"history{suffix}.csv", result.history)
    ev = evaluate(result.model, items_val) if items_val else None
    return result, ckpt_path, ev


def _cmd_train(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    if args.resume:
        ckpt = load_checkpoint(args.resume)
        cfg = _train_config(args, base=ckpt.train_config)
    else:
        ckpt = None
        cfg = _train_config(args)
    _echo("config", cfg.to_dict())
    with open(out_dir / "effective_config.json", "w") as f:
        json.dump(cfg.to_dict(), f, indent=2)

    items = load_dataset(args.data, cfg.rules)
    items_train, items_val = split_dataset(items, cfg.val_fraction, cfg.seed)

    if args.seeds:
        seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
        if not seeds:
            raise ConfigError("--seeds given but no seeds parsed")
        if args.resume:
            raise ConfigError("--resume cannot be combined with --seeds")
        maps, aucs = [], []
        for s in seeds:
            _, ckpt_path, ev = _run_one_seed(items_train, items_val,
                                             replace(cfg, seed=s), out_dir, f"seed{s}")
            maps.append(ev.map)
            aucs.append(ev.roc_auc)
            print(f"seed {s}: map {ev.map:.4f} roc_auc {ev.roc_auc:.4f} -> {ckpt_path}")
        aggregate = {
            "seeds": seeds,
            "per_seed_map": maps, "per_seed_auc": aucs,
            "map_mean": float(np.mean(maps)),
            "map_std": float(np.std(maps, ddof=1)) if len(maps) > 1 else 0.0,
            "auc_mean": float(np.mean(aucs)),
            "auc_std": float(np.std(aucs, ddof=1)) if len(aucs) > 1 else 0.0,
        }
        with open(out_dir / "aggregate.json", "w") as f:
            json.dump(aggregate, f, indent=2)
        _echo("aggregate", aggregate)
        return EXIT_OK

    _, ckpt_path, ev = _run_one_seed(items_train, items_val, cfg, out_dir,
                                     tag="", resume=ckpt)
    if ev is not None:
        print(f"final: map {ev.map:.4f} roc_auc {ev.roc_auc:.4f}")
    print(f"checkpoint: {ckpt_path}")
    return EXIT_OK


# -- eval ---------------------------------------------------------------------


def _add_eval(sub):
    p = sub.add_parser("eval", help="evaluate a checkpoint on a manifest dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)


def _cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    model = ckpt.build_model()
    items = load_dataset(args.data, ckpt.train_config.rules)
    result = evaluate(model, items)
    payload = result.to_dict()
    payload["config"] = ckpt.train_config.to_dict()
    print(json.dumps(payload, indent=2))
    return EXIT_OK


# -- inspect-graph ------------------------------------------------------------


def _add_inspect(sub):
    p = sub.add_parser("inspect-graph", help="emit edge lists for given node counts")
    p.add_argument("--config", help="JSON file with TrainConfig fields (for rules)")
    p.add_argument("--n-audio", type=int, required=True)
    p.add_argument("--n-video", type=int, required=True)
    for edge in ("audio", "video", "cross"):
        p.add_argument(f"--span-{edge}", type=int)
        p.add_argument(f"--dilation-{edge}", type=int)


def _rules_from_args(args) -> EdgeRules:
    if args.config:
        rules = TrainConfig.from_dict(_load_json(args.config)).rules
    else:
        rules = EdgeRules.default()
    out = {}
    for edge in ("audio", "video", "cross"):
        base = getattr(rules, edge)
        span = getattr(args, f"span_{edge}")
        dilation = getattr(args, f"dilation_{edge}")
        out[edge] = EdgeRule(span if span is not None else base.span,
                             dilation if dilation is not None else base.dilation)
    return EdgeRules(**out)


def _undirected_pairs(adj: np.ndarray) -> list[list[int]]:
    rows, cols = np.nonzero(np.triu(adj, k=1))
    return [[int(i), int(j)] for i, j in zip(rows, cols)]


def _degree_stats(degrees: np.ndarray) -> dict:
    return {"min": int(degrees.min()), "max": int(degrees.max()),
            "mean": float(degrees.mean())}


def _cmd_inspect(args) -> int:
    rules = _rules_from_args(args)
    if args.n_audio < 1 or args.n_video < 1:
        raise ConfigError("node counts must be >= 1")
    adj_aa = temporal_edges(args.n_audio, rules.audio)
    adj_vv = temporal_edges(args.n_video, rules.video)
    adj_va = cross_modal_edges(args.n_audio, args.n_video, rules.cross)
    va_rows, va_cols = np.nonzero(adj_va)
    payload = {
        "config": {
            "n_audio": args.n_audio, "n_video": args.n_video,
            "rules": TrainConfig(rules=rules).to_dict()["rules"],
        },
        "aa_edges": _undirected_pairs(adj_aa),
        "vv_edges": _undirected_pairs(adj_vv),
        "va_edges": [[int(a), int(v)] for a, v in zip(va_rows, va_cols)],
        "degrees": {
            "audio_intra": _degree_stats(adj_aa.sum(axis=1)),
            "video_intra": _degree_stats(adj_vv.sum(axis=1)),
            "audio_cross": _degree_stats(adj_va.sum(axis=1)),
        },
    }
    print(json.dumps(payload, indent=2))
    return EXIT_OK


# -- dump-attention -----------------------------------------------------------


def _add_dump_attention(sub):
    p = sub.add_parser("dump-attention",
                       help="per-audio-node attention summary for one item")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--item", required=True, help="item id from the manifest")
    p.add_argument("--out", help="CSV output path (default: stdout)")


def attention_summary(attention_maps) -> list[tuple[int, int, float]]:
    """Rows (layer, audio_node, value): max incoming weight per node,
    min-max rescaled to [0, 1] within each layer. A constant layer maps
    to all-ones."""
    rows = []
    for layer_idx, alpha in enumerate(attention_maps):
        per_node = alpha.max(axis=1)
        lo, hi = float(per_node.min()), float(per_node.max())
        if hi > lo:
            scaled = (per_node - lo) / (hi - lo)
        else:
            scaled = np.ones_like(per_node)
        rows.extend((layer_idx, node, float(value))
                    for node, value in enumerate(scaled))
    return rows


def _cmd_dump_attention(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    if ckpt.model_config.fusion != FUSION_GAT:
        raise ConfigError(
            f"checkpoint was trained with fusion={ckpt.model_config.fusion!r}: "
            "no attention to dump")
    model = ckpt.build_model()
    items = load_dataset(args.data, ckpt.train_config.rules)
    matches = [it for it in items if it.item_id == args.item]
    if not matches:
        raise DatasetError(f"item {args.item!r} not found in {args.data}")
    g = ComputeGraph()
    result = model.forward(g, matches[0].graph)
    lines = ["layer,audio_node,attention"]
    lines += [f"{layer},{node},{value:.6f}"
              for layer, node, value in attention_summary(result.attention)]
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w") as f:
            f.write(text)
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


# -- entry point ----------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="avhgnn",
                     description="audio-visual heterogeneous graph classifier")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_gen_synth(sub)
    _add_train(sub)
    _add_eval(sub)
    _add_inspect(sub)
    _add_dump_attention(sub)
    return parser


_COMMANDS = {
    "gen-synth": _cmd_gen_synth,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "inspect-graph": _cmd_inspect,
    "dump-attention": _cmd_dump_attention,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, DataFormatError, DatasetError, ShapeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
