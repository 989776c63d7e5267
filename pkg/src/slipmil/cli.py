"""Command-line front-end: synth / train / eval / ablate / heatmap.

Exit codes: 0 success, 1 internal error, 2 user or input error. Seeds are
always explicit; every subcommand is deterministic under fixed flags.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .encoder import FrozenEncoderWeights, PromptContext
from .errors import SchemaError, SlipError
from .evaluation import Pipeline, evaluate, run_ablation, run_single
from .io_formats import (
    export_heatmap,
    read_dataset,
    read_prompt_lines,
    read_report,
    write_dataset,
    write_report,
)
from .pooling import TissuePromptSet, patch_slide_correlation, \
    patch_tissue_similarity, tissue_wsi_similarity
from .synth import PRESETS, SynthSpec, generate, preset_spec
from .trainer import DEFAULT_ENCODER_SEED, TrainConfig, TrainedPrompts


class CliInputError(SlipError):
    """Bad flag combination or missing required value."""


def _load_config_file(path) -> dict:
    """Flat key = value lines mirroring the command-line flags."""
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise CliInputError(f"{path}:{lineno}: expected key = value")
            key, _, value = line.partition("=")
            values[key.strip().replace("-", "_")] = value.strip()
    return values


def _coerce(value: str):
    for cast in (int, float):
        try:
            return cast(value)
        except ValueError:
            pass
    if value.lower() in ("true", "false"):
        return value.lower() == "true"
    return value


def _apply_config_defaults(parser, args_list):
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(args_list)
    if known.config:
        defaults = {k: _coerce(v)
                    for k, v in _load_config_file(known.config).items()}
        parser.set_defaults(**defaults)
        # subparsers re-apply their own defaults over the parent namespace,
        # so config values must be installed on each of them as well
        for sub in getattr(parser, "_command_parsers", {}).values():
            sub.set_defaults(**defaults)


def _require_seed(value):
    if value is None:
        raise CliInputError("--seed is required (seeds are never implicit)")
    return int(value)


def _threads(args) -> int:
    raw = getattr(args, "threads", None)
    if raw is None:
        raw = os.environ.get("SLIP_THREADS", "1")
    n = int(raw)
    if n < 1:
        raise CliInputError(f"--threads must be >= 1, got {n}")
    return n


def _shots_value(raw):
    if raw == "all":
        return "all"
    try:
        shots = int(raw)
    except ValueError as exc:
        raise CliInputError(f"--shots must be an integer or 'all'") from exc
    if shots < 1:
        raise CliInputError("--shots must be >= 1")
    return shots


def _context_payload(prompts: TrainedPrompts) -> dict:
    return {
        "shared": prompts.shared,
        "vectors": [ctx.vectors.tolist() for ctx in prompts.contexts],
    }


def _prompts_from_payload(payload) -> TrainedPrompts:
    if not isinstance(payload, dict) or "vectors" not in payload:
        raise SchemaError("report has no trained context")
    shared = bool(payload.get("shared", True))
    contexts = [
        PromptContext(np.asarray(v, dtype=np.float64),
                      shared_across_classes=shared)
        for v in payload["vectors"]
    ]
    if not contexts:
        raise SchemaError("report context has no vectors")
    return TrainedPrompts(contexts, shared=shared)


def _write_prompt_file(path, lines, header):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# {header}\n")
        for line in lines:
            fh.write(line + "\n")


def cmd_synth(args) -> None:
    seed = _require_seed(args.seed)
    if args.preset:
        spec = preset_spec(args.preset, seed=seed,
                           encoder_seed=args.encoder_seed)
    else:
        spec = SynthSpec(
            num_classes=args.num_classes, num_tissues=args.num_tissues,
            n_range=(args.n_min, args.n_max),
            bags_per_class=args.bags_per_class,
            signal_fraction=args.signal_fraction,
            noise_sigma=args.noise_sigma, d_v=args.dv, d_t=args.dt,
            seed=seed, encoder_seed=args.encoder_seed,
        )
    data = generate(spec)
    write_dataset(args.out, data.bags)
    tissues_out = args.tissues_out or args.out + ".tissues.txt"
    classes_out = args.classes_out or args.out + ".classes.txt"
    _write_prompt_file(tissues_out, data.tissue_descriptions,
                       "tissue descriptions, one per line")
    _write_prompt_file(classes_out, data.class_names,
                       "class names, one per line")
    summary = {
        "num_classes": spec.num_classes,
        "num_tissues": spec.num_tissues,
        "bags": len(data.bags),
        "d_v": spec.d_v,
        "signal_fraction": spec.signal_fraction,
        "noise_sigma": spec.noise_sigma,
        "n_range": list(spec.n_range),
        "seed": spec.seed,
        "encoder_seed": spec.encoder_seed,
        "out": args.out,
        "tissues_out": tissues_out,
        "classes_out": classes_out,
    }
    print(json.dumps(summary, indent=2, sort_keys=True))


def _train_config_from_args(args, seed) -> TrainConfig:
    return TrainConfig(
        tau=args.tau, learning_rate=args.lr, epochs=args.epochs,
        shots=_shots_value(args.shots), seed=seed, pooling=args.pooling,
        context_length=args.context_length, d_t=args.dt, d_v=args.dv,
        encoder_seed=args.encoder_seed, topk_k=args.topk_k,
    )


def cmd_train(args) -> None:
    seed = _require_seed(args.seed)
    _threads(args)
    bags, num_classes = read_dataset(args.data)
    tissue_descriptions = read_prompt_lines(args.tissues)
    class_names = read_prompt_lines(args.classes)
    if len(class_names) != num_classes:
        raise CliInputError(
            f"class file has {len(class_names)} names, "
            f"dataset declares {num_classes} classes"
        )
    if bags[0].patches.cols != args.dv:
        raise CliInputError(
            f"dataset d_v={bags[0].patches.cols} != --dv {args.dv}"
        )
    cfg = _train_config_from_args(args, seed)
    prompts, history, metrics, pool_size = run_single(
        bags, class_names, tissue_descriptions, cfg
    )
    config_echo = {
        "tau": cfg.tau, "lr": cfg.learning_rate, "epochs": cfg.epochs,
        "batch_size": cfg.batch_size, "shots": cfg.shots, "seed": cfg.seed,
        "pooling": cfg.pooling, "context_length": cfg.context_length,
        "d_t": cfg.d_t, "d_v": cfg.d_v, "encoder_seed": cfg.encoder_seed,
        "topk_k": cfg.topk_k, "data": os.path.basename(args.data),
        "eval_pool_size": pool_size,
    }
    write_report(args.out, config_echo, history.records, metrics,
                 class_names, tissue_descriptions,
                 context=_context_payload(prompts))
    print(json.dumps({"report": args.out, "metrics": metrics},
                     indent=2, sort_keys=True))


def _pipeline_from_report(doc, bags) -> tuple[Pipeline, dict]:
    cfg = doc["config"]
    weights = FrozenEncoderWeights.create(
        int(cfg["encoder_seed"]), d_t=int(cfg["d_t"]), d_v=int(cfg["d_v"])
    )
    tissues = TissuePromptSet.from_descriptions(
        weights, doc["tissue_descriptions"]
    )
    prompts = _prompts_from_payload(doc.get("context"))
    pipeline = Pipeline(
        weights=weights, tissues=tissues,
        class_names=tuple(doc["class_names"]), tau=float(cfg["tau"]),
        pooling=cfg["pooling"], topk_k=int(cfg["topk_k"]), prompts=prompts,
    )
    return pipeline, cfg


def cmd_eval(args) -> None:
    _threads(args)
    bags, num_classes = read_dataset(args.data)
    if args.zero_shot:
        if not args.classes:
            raise CliInputError("--zero-shot requires --classes")
        class_names = read_prompt_lines(args.classes)
        if len(class_names) != num_classes:
            raise CliInputError(
                f"class file has {len(class_names)} names, "
                f"dataset declares {num_classes} classes"
            )
        weights = FrozenEncoderWeights.create(args.encoder_seed,
                                              d_t=args.dt, d_v=args.dv)
        tissue_descriptions = (read_prompt_lines(args.tissues)
                               if args.tissues else list(class_names))
        tissues = TissuePromptSet.from_descriptions(weights,
                                                    tissue_descriptions)
        pipeline = Pipeline(weights=weights, tissues=tissues,
                            class_names=tuple(class_names), tau=args.tau,
                            pooling="zero")
        metrics = evaluate(bags, pipeline)
        print(json.dumps({"mode": "zero-shot", "metrics": metrics},
                         indent=2, sort_keys=True))
        return
    if not args.report:
        raise CliInputError("provide --report or --zero-shot")
    doc = read_report(args.report)
    pipeline, cfg = _pipeline_from_report(doc, bags)
    shots = cfg.get("shots", "all")
    if shots == "all":
        eval_bags = bags
    else:
        from .evaluation import select_few_shot
        _, eval_bags = select_few_shot(bags, int(shots))
    metrics = evaluate(eval_bags, pipeline)
    print(json.dumps({"mode": "trained", "metrics": metrics},
                     indent=2, sort_keys=True))


def _format_table(rows) -> str:
    if not rows:
        return "(no rows)\n"
    headers = ["pooling", "shots", "tissue_set", "num_tissue_types", "seed",
               "class_averaged_accuracy", "bag_accuracy", "final_loss"]
    cells = [[_cell(row[h]) for h in headers] for row in rows]
    widths = [max(len(h), *(len(c[i]) for c in cells))
              for i, h in enumerate(headers)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(headers, widths))]
    lines.append("  ".join("-" * w for w in widths))
    for row in cells:
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)))
    return "\n".join(lines) + "\n"


def _cell(value) -> str:
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)


def cmd_ablate(args) -> None:
    grid = _load_config_file(args.grid)
    for key in ("data", "classes", "poolings", "shots", "tissues", "seeds"):
        if key not in grid:
            raise CliInputError(f"grid file missing required key {key!r}")
    bags, num_classes = read_dataset(grid["data"])
    class_names = read_prompt_lines(grid["classes"])
    if len(class_names) != num_classes:
        raise CliInputError("class file does not match dataset class count")
    poolings = [p.strip() for p in grid["poolings"].split(",") if p.strip()]
    shots_list = [int(s) for s in grid["shots"].split(",") if s.strip()]
    seeds = [int(s) for s in grid["seeds"].split(",") if s.strip()]
    tissue_sets = []
    for path in (p.strip() for p in grid["tissues"].split(",") if p.strip()):
        tissue_sets.append((os.path.basename(path), read_prompt_lines(path)))
    base_cfg = TrainConfig(
        tau=float(grid.get("tau", 0.01)),
        learning_rate=float(grid.get("lr", 2e-4)),
        epochs=int(grid.get("epochs", 50)),
        context_length=int(grid.get("context_length", 4)),
        d_t=int(grid.get("d_t", 16)),
        d_v=int(grid.get("d_v", bags[0].patches.cols)),
        encoder_seed=int(grid.get("encoder_seed", DEFAULT_ENCODER_SEED)),
        topk_k=int(grid.get("topk_k", 16)),
    )
    rows = run_ablation(bags, class_names, poolings, shots_list,
                        tissue_sets, seeds, base_cfg)
    table = _format_table(rows)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump({"rows": rows}, fh, indent=2, sort_keys=True)
            fh.write("\n")
        with open(args.out + ".txt", "w", encoding="utf-8") as fh:
            fh.write(table)
    print(table, end="")


def cmd_heatmap(args) -> None:
    bags, num_classes = read_dataset(args.data)
    if not 0 <= args.bag < len(bags):
        raise CliInputError(f"--bag {args.bag} outside [0, {len(bags)})")
    bag = bags[args.bag]
    class_names = read_prompt_lines(args.classes)
    tissue_descriptions = read_prompt_lines(args.tissues)
    weights = FrozenEncoderWeights.create(args.encoder_seed, d_t=args.dt,
                                          d_v=bag.patches.cols)
    tissues = TissuePromptSet.from_descriptions(weights, tissue_descriptions)
    from .pooling import ClassPromptSet
    classes = ClassPromptSet.from_names(weights, class_names)
    s_patch = patch_tissue_similarity(bag, tissues, args.tau)
    s_wsi = tissue_wsi_similarity(classes, tissues, args.tau)
    corr = patch_slide_correlation(s_patch, s_wsi)
    csv_path = args.out_prefix + ".csv"
    pgm_path = args.out_prefix + ".pgm"
    top, bottom = export_heatmap(bag, corr, args.class_index,
                                 csv_path, pgm_path)
    print(json.dumps({
        "csv": csv_path, "pgm": pgm_path,
        "top5": top, "bottom5": bottom,
    }, indent=2, sort_keys=True))


def _add_common(sub):
    sub.add_argument("--config", help="flat key = value file of defaults")
    sub.add_argument("--threads", type=int,
                     help="worker threads (SLIP_THREADS fallback; "
                          "reductions stay fixed-order)")


def _add_encoder_flags(sub):
    sub.add_argument("--encoder-seed", type=int, default=DEFAULT_ENCODER_SEED,
                     help="seed of the frozen text encoder (default 42)")
    sub.add_argument("--dt", type=int, default=16,
                     help="text embedding dimension (default 16)")
    sub.add_argument("--dv", type=int, default=32,
                     help="visual embedding dimension (default 32)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="slipmil",
        description="Dual-similarity pooling and few-shot prompt training "
                    "for bag-of-patches classification.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    _add_common(p)
    _add_encoder_flags(p)
    p.add_argument("--preset", choices=sorted(PRESETS),
                   help="named preset; flags below are ignored when set")
    p.add_argument("--num-classes", type=int, default=3)
    p.add_argument("--num-tissues", type=int, default=3)
    p.add_argument("--n-min", type=int, default=8)
    p.add_argument("--n-max", type=int, default=16)
    p.add_argument("--bags-per-class", type=int, default=8)
    p.add_argument("--signal-fraction", type=float, default=0.9)
    p.add_argument("--noise-sigma", type=float, default=0.05)
    p.add_argument("--seed", type=int, help="required; never implicit")
    p.add_argument("--out", required=True)
    p.add_argument("--tissues-out")
    p.add_argument("--classes-out")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="few-shot prompt training + evaluation")
    _add_common(p)
    _add_encoder_flags(p)
    p.add_argument("--data", required=True)
    p.add_argument("--tissues", required=True)
    p.add_argument("--classes", required=True)
    p.add_argument("--shots", default="all",
                   help="bags per class for training, or 'all' (default)")
    p.add_argument("--pooling", choices=["slip", "topk", "avg"],
                   default="slip", help="pooling variant (default slip)")
    p.add_argument("--tau", type=float, default=0.01,
                   help="softmax temperature (default 0.01)")
    p.add_argument("--lr", type=float, default=2e-4,
                   help="SGD learning rate (default 2e-4)")
    p.add_argument("--epochs", type=int, default=50,
                   help="training epochs (default 50)")
    p.add_argument("--context-length", type=int, default=4,
                   help="learnable context vectors (default 4)")
    p.add_argument("--topk-k", type=int, default=16,
                   help="k for topk pooling, clamped to N (default 16)")
    p.add_argument("--seed", type=int, help="required; never implicit")
    p.add_argument("--out", required=True, help="report JSON path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate from a report or zero-shot")
    _add_common(p)
    _add_encoder_flags(p)
    p.add_argument("--data", required=True)
    p.add_argument("--report", help="report with trained context")
    p.add_argument("--zero-shot", action="store_true")
    p.add_argument("--classes", help="class names file (zero-shot mode)")
    p.add_argument("--tissues", help="tissue file (zero-shot mode, optional)")
    p.add_argument("--tau", type=float, default=0.01,
                   help="softmax temperature (default 0.01)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run a pooling/shots/tissues grid")
    _add_common(p)
    p.add_argument("--grid", required=True,
                   help="key = value grid file (data, classes, poolings, "
                        "shots, tissues, seeds, ...)")
    p.add_argument("--out", help="JSON rows path; .txt table alongside")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("heatmap", help="export per-patch scores for one bag")
    _add_common(p)
    _add_encoder_flags(p)
    p.add_argument("--data", required=True)
    p.add_argument("--bag", type=int, required=True)
    p.add_argument("--class-index", type=int, required=True)
    p.add_argument("--tissues", required=True)
    p.add_argument("--classes", required=True)
    p.add_argument("--tau", type=float, default=0.01,
                   help="softmax temperature (default 0.01)")
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(func=cmd_heatmap)

    parser._command_parsers = {
        name: sp for name, sp in sub.choices.items()
    }
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config_defaults(parser, argv)
        args = parser.parse_args(argv)
        args.func(args)
        return 0
    except SlipError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:
        return int(exc.code or 0)
    except Exception as exc:  # internal failure
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
