"""Command-line interface.

Exit codes: 0 success, 1 configuration error (nothing written), 2 runtime
error. Every subcommand echoes its fully resolved configuration beside its
outputs so a run can be reproduced from the output directory alone.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .config import (
    ConfigError,
    RunConfig,
    apply_override,
    config_from_dict,
    default_seed,
    profile,
)
from .data import save_cache
from .evaluate import (
    compare_heads,
    evaluate,
    stratify_by_confidence,
    uncertainty_histogram,
    write_heads,
    write_histogram,
    write_metrics,
    write_strata,
)
from .model import load_model
from .train import echo_config, load_split, train_run
from .priors import default_table
from .verify import full_loss_grad_check

GRADCHECK_THRESHOLD = 1e-5


class _Parser(argparse.ArgumentParser):
    """argparse that raises instead of exiting, so bad flags map to exit code 1."""

    def error(self, message):
        raise ConfigError(message)


def _add_config_args(parser: argparse.ArgumentParser, out_required: bool = True) -> None:
    parser.add_argument("--config", help="path to a run-config JSON document")
    parser.add_argument("--profile", help="named base config: desk, paper, tiny, or trend")
    parser.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE", help="dotted-path override, e.g. hp.t=3")
    parser.add_argument("--out", required=out_required, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="poi", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write train/test dataset caches")
    _add_config_args(p)

    p = sub.add_parser("train", help="train a model, logging per-step losses")
    _add_config_args(p)

    for name, extra in (
        ("eval", lambda q: None),
        ("stratify", lambda q: q.add_argument("--fractions", default="0.3,0.5,0.7")),
        ("histogram", lambda q: q.add_argument("--bins", type=int, default=20)),
        ("compare-heads", lambda q: None),
    ):
        p = sub.add_parser(name, help=f"{name} a trained checkpoint on the test split")
        _add_config_args(p)
        p.add_argument("--checkpoint", required=True, help="checkpoint directory from a training run")
        extra(p)

    p = sub.add_parser("gradcheck", help="finite-difference check of the full objective")
    _add_config_args(p, out_required=False)

    p = sub.add_parser("sweep", help="grid of runs over hp/flag axes, with a summary table")
    _add_config_args(p)
    p.add_argument("--jobs", type=int, default=1, help="concurrent cells")

    return parser


def resolve_config(args) -> RunConfig:
    if args.config and args.profile:
        raise ConfigError("--config and --profile are mutually exclusive")
    seed_explicit = False
    if args.config:
        try:
            raw = json.loads(Path(args.config).read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {args.config}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.config}: invalid JSON ({exc})") from exc
        cfg = config_from_dict(raw)
        seed_explicit = "seed" in raw
    else:
        cfg = profile(args.profile or "desk")
    for assignment in args.overrides:
        if assignment.split("=", 1)[0].strip() == "seed":
            seed_explicit = True
        cfg = apply_override(cfg, assignment)
    if not seed_explicit:
        cfg.seed = default_seed()
    return cfg.resolved()


def _cmd_gen_data(args) -> int:
    cfg = resolve_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    echo_config(cfg, out)
    for split in ("train", "test"):
        samples = load_split(cfg, split)
        save_cache(out / f"{split}.bin", samples, len(cfg.data.classes))
        print(f"wrote {split}.bin ({len(samples)} samples)")
    return 0


def _cmd_train(args) -> int:
    cfg = resolve_config(args)
    result = train_run(cfg, args.out)
    final = result.final_breakdown
    if final is not None:
        print(f"trained {result.steps} steps; final total loss {final.total:.4f}")
    print(f"checkpoint at {result.checkpoint_dir}")
    return 0


def _load_eval_pieces(args):
    cfg = resolve_config(args)
    model = load_model(cfg, args.checkpoint)
    samples = load_split(cfg, "test")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    echo_config(cfg, out)
    return cfg, model, samples, out


def _cmd_eval(args) -> int:
    cfg, model, samples, out = _load_eval_pieces(args)
    metrics = evaluate(model, samples)
    write_metrics(out, metrics, cfg.data.classes)
    print(f"accuracy {metrics.accuracy:.4f} over {metrics.n_samples} samples")
    return 0


def _cmd_stratify(args) -> int:
    try:
        fractions = tuple(float(f) for f in args.fractions.split(","))
    except ValueError as exc:
        raise ConfigError(f"--fractions must be comma-separated numbers: {args.fractions!r}") from exc
    _, model, samples, out = _load_eval_pieces(args)
    strata = stratify_by_confidence(model, samples, fractions)
    write_strata(out, strata)
    for f in sorted(strata):
        print(f"top {f:.0%}: {strata[f]['top']:.4f}   bottom {f:.0%}: {strata[f]['bottom']:.4f}")
    return 0


def _cmd_histogram(args) -> int:
    if args.bins < 2:
        raise ConfigError(f"--bins must be >= 2, got {args.bins}")
    _, model, samples, out = _load_eval_pieces(args)
    counts, edges = uncertainty_histogram(model, samples, args.bins)
    write_histogram(out, counts, edges)
    print(f"histogram over [{edges[0]:.3f}, 1.0] with {args.bins} bins; n={int(counts.sum())}")
    return 0


def _cmd_compare_heads(args) -> int:
    _, model, samples, out = _load_eval_pieces(args)
    heads = compare_heads(model, samples)
    write_heads(out, heads)
    for name, acc in heads.items():
        print(f"{name}: {acc:.4f}")
    return 0


def _cmd_gradcheck(args) -> int:
    if args.config or args.profile:
        cfg = resolve_config(args)
    else:
        cfg = profile("tiny").resolved()
    error = full_loss_grad_check(cfg)
    print(f"max relative gradient error: {error:.3e} (threshold {GRADCHECK_THRESHOLD:.0e})")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        echo_config(cfg, out)
        (out / "gradcheck.json").write_text(
            json.dumps({"max_relative_error": error, "threshold": GRADCHECK_THRESHOLD}, indent=2) + "\n")
    return 0 if error < GRADCHECK_THRESHOLD else 2


def _axis_value_token(value) -> str:
    text = json.dumps(value) if not isinstance(value, str) else value
    return "".join(ch if ch.isalnum() or ch in ".-" else "_" for ch in text)


def _run_sweep_cell(base_dict: dict, assignments: list[tuple[str, object]], cell_dir: str) -> dict:
    cfg = config_from_dict(base_dict)
    for key, value in assignments:
        cfg = apply_override(cfg, f"{key}={json.dumps(value)}")
    cfg = cfg.resolved()
    result = train_run(cfg, cell_dir, log_figure=False)
    samples = load_split(cfg, "test")
    metrics = evaluate(result.model, samples)
    write_metrics(cell_dir, metrics, cfg.data.classes)
    row = {key: value for key, value in assignments}
    row["accuracy"] = metrics.accuracy
    row["mean_w_au"] = metrics.mean_w_au
    row["cell"] = Path(cell_dir).name
    return row


def _cmd_sweep(args) -> int:
    if not args.config:
        raise ConfigError("sweep requires --config with {'base': ..., 'axes': ...}")
    try:
        raw = json.loads(Path(args.config).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {args.config}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{args.config}: invalid JSON ({exc})") from exc
    if not isinstance(raw, dict) or "axes" not in raw:
        raise ConfigError("sweep config must be an object with 'axes' (and optional 'base')")
    axes: dict[str, list] = raw["axes"]
    if not axes or not all(isinstance(v, list) and v for v in axes.values()):
        raise ConfigError("every sweep axis needs a nonempty list of values")
    base = config_from_dict(raw.get("base", {}))
    for assignment in args.overrides:
        base = apply_override(base, assignment)
    # Validate axis keys and values before any output is written.
    for key, values in axes.items():
        for value in values:
            apply_override(base, f"{key}={json.dumps(value)}")
    if args.jobs < 1:
        raise ConfigError(f"--jobs must be >= 1, got {args.jobs}")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "sweep.json").write_text(json.dumps({"base": base.to_dict(), "axes": axes}, indent=2) + "\n")

    axis_keys = list(axes)
    cells = []
    for i, combo in enumerate(itertools.product(*(axes[k] for k in axis_keys))):
        assignments = list(zip(axis_keys, combo))
        name = f"cell_{i:03d}_" + "_".join(
            f"{k.split('.')[-1]}{_axis_value_token(v)}" for k, v in assignments)
        cells.append((assignments, str(out / name)))

    rows: list[dict] = []
    if args.jobs == 1:
        for assignments, cell_dir in cells:
            rows.append(_run_sweep_cell(base.to_dict(), assignments, cell_dir))
            print(f"finished {Path(cell_dir).name}: accuracy {rows[-1]['accuracy']:.4f}")
    else:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            futures = [pool.submit(_run_sweep_cell, base.to_dict(), a, d) for a, d in cells]
            for future in futures:
                rows.append(future.result())
                print(f"finished {rows[-1]['cell']}: accuracy {rows[-1]['accuracy']:.4f}")

    with open(out / "summary.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["cell"] + axis_keys + ["accuracy", "mean_w_au"])
        for row in rows:
            writer.writerow([row["cell"]] + [row[k] for k in axis_keys]
                            + [f"{row['accuracy']:.6f}", f"{row['mean_w_au']:.6f}"])
    from .plots import sweep_figure

    numeric_axes = [k for k in axis_keys if all(isinstance(r[k], (int, float)) and not isinstance(r[k], bool) for r in rows)]
    if numeric_axes:
        sweep_figure(rows, numeric_axes, out / "summary.png")
    return 0


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "stratify": _cmd_stratify,
    "histogram": _cmd_histogram,
    "compare-heads": _cmd_compare_heads,
    "gradcheck": _cmd_gradcheck,
    "sweep": _cmd_sweep,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001  (runtime failures map to exit code 2)
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
