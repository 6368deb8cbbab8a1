"""Command-line entry point.

Subcommands: synth, train, eval, gradcheck, sweep. Exit codes: 0 success,
1 validation error, 2 numerical failure, 3 gradient check failure. Every
random choice comes from seeds in the config; nothing reads the clock or OS
entropy, so reruns with the same flags reproduce output files byte for byte.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .config import (
    RunConfigFile,
    config_to_dict,
    default_config,
    load_config,
    with_loss,
    with_prompt,
    with_synth,
    with_train,
)
from .data_model import class_counts, group_classes, load_dataset, save_dataset
from .encoders import FrozenTextEncoder, prompts_from_dict
from .errors import ConfigError, NumericsError
from .gradcheck import check_total_loss, run_sweep
from .metrics import evaluate, evaluate_scores
from .seeding import DOMAIN_TRAIN, substream
from .synth import generate
from .train import (
    ClassStats,
    build_training_state,
    train,
    write_run_dir,
)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERICS = 2
EXIT_GRADCHECK = 3

_GRADCHECK_BATCH_STREAM = 1
_GRADCHECK_BATCH_SIZE = 8

# Named run variants: each entry rewrites the effective config. "full" is the
# complete objective; the no-* entries switch single ingredients off; the
# loss names swap the classification term; coop is the shared-context,
# classification-only setup; linear-probe drops prompts entirely.
VARIANTS = {
    "full": lambda c: c,
    "no-cse": lambda c: with_loss(c, cls_loss_weight=1.0, use_embedding_loss=False),
    "no-margin": lambda c: with_loss(c, use_class_aware_margin=False),
    "no-reweight": lambda c: with_loss(c, use_reweighting=False),
    "plain-cse": lambda c: with_loss(c, use_class_aware_margin=False, use_reweighting=False),
    "db": lambda c: with_loss(c, cls_loss_kind="db"),
    "bce": lambda c: with_loss(c, cls_loss_kind="bce"),
    "focal": lambda c: with_loss(c, cls_loss_kind="focal"),
    "coop": lambda c: with_prompt(
        with_loss(c, cls_loss_weight=1.0, use_embedding_loss=False), mode="shared"
    ),
    "linear-probe": lambda c: with_train(c, baseline="linear_probe"),
}

ABLATIONS = ("no-cse", "no-margin", "no-reweight", "plain-cse")
LOSS_CHOICES = ("db", "bce", "focal")


class _Parser(argparse.ArgumentParser):
    # argparse exits with code 2 on usage errors, which collides with the
    # numerical-failure code; route usage errors through ConfigError instead
    def error(self, message):
        raise ConfigError(message)


def _load_or_default_config(path) -> RunConfigFile:
    if path is None:
        return default_config()
    return load_config(path)


def _resolve_dataset(args, config: RunConfigFile):
    if getattr(args, "data", None) is not None:
        return load_dataset(args.data)
    return generate(config.synth)


def _refuse_existing_file(path: Path, force: bool) -> None:
    if path.exists() and not force:
        raise ConfigError(f"{path} already exists (use --force to overwrite)")


def _fmt(value) -> str:
    return "absent" if value is None else f"{value:.4f}"


def cmd_synth(args) -> int:
    config = _load_or_default_config(args.config)
    overrides = {}
    if args.classes is not None:
        overrides["num_classes"] = args.classes
    if args.samples is not None:
        overrides["num_samples"] = args.samples
    if args.dim is not None:
        overrides["dim"] = args.dim
    if args.seed is not None:
        overrides["seed"] = args.seed
    if overrides:
        config = with_synth(config, **overrides)

    dataset = generate(config.synth)
    out = Path(args.out)
    _refuse_existing_file(out, args.force)
    save_dataset(dataset, out)

    counts = class_counts(dataset)
    groups = group_classes(counts, config.train.head_min, config.train.tail_max)
    print(f"wrote {dataset.num_samples} samples x {dataset.num_classes} classes to {out}")
    print(f"{'class':<12}{'count':>8}  group")
    for name, count, group in zip(dataset.class_names, counts, groups, strict=True):
        print(f"{name:<12}{int(count):>8}  {group}")
    return EXIT_OK


def _apply_train_flags(args, config: RunConfigFile) -> RunConfigFile:
    if args.seed is not None:
        config = with_train(config, seed=args.seed)
    for name in args.ablation or []:
        config = VARIANTS[name](config)
    if args.loss is not None:
        config = VARIANTS[args.loss](config)
    return config


def _pretrain_gradcheck(dataset, config: RunConfigFile) -> int:
    """Certify the gradient on a sampled batch of the exact training state."""
    tc = config.train
    stats, encoder, prompts = build_training_state(dataset, tc)
    rng = substream(tc.seed, DOMAIN_TRAIN, _GRADCHECK_BATCH_STREAM)
    size = min(_GRADCHECK_BATCH_SIZE, dataset.num_samples)
    indices = np.sort(rng.choice(dataset.num_samples, size=size, replace=False))
    report = check_total_loss(
        dataset.batch(indices), prompts, encoder, stats, tc.loss, tau=tc.tau
    )
    if not report.passed:
        print(
            "gradcheck failed before training: "
            f"max rel error {report.max_rel_error:.3e} at coordinate {report.worst_index}",
            file=sys.stderr,
        )
        return EXIT_GRADCHECK
    print(
        f"gradcheck passed on a {size}-sample batch "
        f"(max rel error {report.max_rel_error:.3e}, "
        f"{report.num_skipped_kinks} kink coordinates skipped)"
    )
    return EXIT_OK


def cmd_train(args) -> int:
    config = _apply_train_flags(args, _load_or_default_config(args.config))
    dataset = _resolve_dataset(args, config)

    if not args.skip_gradcheck and config.train.baseline == "none":
        status = _pretrain_gradcheck(dataset, config)
        if status != EXIT_OK:
            return status

    record = train(dataset, config.train)
    write_run_dir(args.out, record, config_to_dict(config), force=args.force)
    if record.failed:
        print(f"run aborted: {record.abort_reason}", file=sys.stderr)
        return EXIT_NUMERICS
    ev = record.final_eval
    print(
        f"finished {record.epochs_completed} epochs in {record.wall_seconds:.2f}s: "
        f"map_total={_fmt(ev.map_total)} head={_fmt(ev.map_head)} "
        f"medium={_fmt(ev.map_medium)} tail={_fmt(ev.map_tail)}"
    )
    print(f"run directory: {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    config = _load_or_default_config(args.config)
    dataset = _resolve_dataset(args, config)
    stats = ClassStats.from_dataset(dataset, config.train.head_min, config.train.tail_max)

    doc = json.loads(Path(args.ckpt).read_text())
    kind = doc.pop("kind", "prompts")
    if kind == "prompts":
        prompts = prompts_from_dict(doc)
        encoder = FrozenTextEncoder.create(
            prompts.encoder_seed if prompts.encoder_seed is not None else config.train.encoder_seed,
            prompts.token_dim,
            dataset.dim,
        )
        result = evaluate(dataset, prompts, encoder, config.train.tau, stats)
    elif kind == "linear_probe":
        weights = np.asarray(doc["weights"], dtype=np.float64)
        bias = np.asarray(doc["bias"], dtype=np.float64)
        scores = dataset.images @ weights.T / config.train.tau + bias
        result = evaluate_scores(scores, dataset.labels, stats)
    else:
        raise ConfigError(f"unknown checkpoint kind {kind!r}")

    lines = {
        "map_total": result.map_total,
        "map_head": result.map_head,
        "map_medium": result.map_medium,
        "map_tail": result.map_tail,
    }
    for key, value in lines.items():
        print(f"{key} {_fmt(value)}")
    if args.out is not None:
        out = Path(args.out)
        _refuse_existing_file(out, args.force)
        out.write_text(json.dumps(lines, indent=2) + "\n")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    results = run_sweep(
        num_cases=args.cases,
        base_seed=args.seed if args.seed is not None else 2026,
        tolerance=args.tolerance,
        h=args.step,
        kink_guard=args.kink_guard,
    )
    failures = [(case, report) for case, report in results if not report.passed]
    worst = max(report.max_rel_error for _, report in results)
    skipped = sum(report.num_skipped_kinks for _, report in results)
    for case, report in failures:
        print(
            f"FAIL {case.description}: max rel error {report.max_rel_error:.3e} "
            f"at coordinate {report.worst_index}",
            file=sys.stderr,
        )
    print(
        f"gradcheck: {len(results) - len(failures)}/{len(results)} cases passed, "
        f"worst rel error {worst:.3e}, {skipped} kink coordinates skipped"
    )
    return EXIT_OK if not failures else EXIT_GRADCHECK


def _parse_seeds(text: str) -> list[int]:
    try:
        seeds = [int(part) for part in text.split(",") if part.strip() != ""]
    except ValueError as err:
        raise ConfigError(f"invalid --seeds list: {err}") from err
    if not seeds:
        raise ConfigError("--seeds must name at least one seed")
    if len(set(seeds)) != len(seeds):
        raise ConfigError("duplicate seed in --seeds")
    return seeds


def _std(values: list[float]) -> float:
    return float(np.std(np.asarray(values, dtype=np.float64)))  # population std


def cmd_sweep(args) -> int:
    config = _load_or_default_config(args.config)
    variants = args.variant or []
    if not variants:
        raise ConfigError("sweep needs at least one --variant")
    seen = set()
    for name in variants:
        if name not in VARIANTS:
            raise ConfigError(f"unknown variant {name!r}; available: {', '.join(sorted(VARIANTS))}")
        if name in seen:
            raise ConfigError(f"duplicate variant {name!r}")
        seen.add(name)
    if args.seeds:
        seeds = _parse_seeds(args.seeds)
    elif args.seed is not None:
        seeds = [args.seed]
    else:
        seeds = [config.train.seed]

    dataset = _resolve_dataset(args, config)
    out_root = Path(args.out)
    summary_path = out_root / "sweep.csv"
    _refuse_existing_file(summary_path, args.force)

    metric_names = ("map_total", "map_head", "map_medium", "map_tail")
    rows = []
    for name in variants:
        collected: dict[str, list[float]] = {m: [] for m in metric_names}
        n_failed = 0
        for seed in seeds:
            run_config = with_train(VARIANTS[name](config), seed=seed)
            record = train(dataset, run_config.train)
            run_dir = out_root / name / f"seed-{seed}"
            write_run_dir(run_dir, record, config_to_dict(run_config), force=args.force)
            if record.failed or record.final_eval is None:
                n_failed += 1
                print(f"{name} seed={seed}: FAILED ({record.abort_reason})", file=sys.stderr)
                continue
            ev = record.final_eval
            for metric in metric_names:
                value = getattr(ev, metric)
                if value is not None:
                    collected[metric].append(value)
            print(
                f"{name} seed={seed}: map_total={_fmt(ev.map_total)} "
                f"head={_fmt(ev.map_head)} medium={_fmt(ev.map_medium)} "
                f"tail={_fmt(ev.map_tail)}"
            )
        row = {"variant": name, "runs": len(seeds), "failed": n_failed}
        for metric in metric_names:
            values = collected[metric]
            row[f"{metric}_mean"] = repr(float(np.mean(values))) if values else ""
            row[f"{metric}_std"] = repr(_std(values)) if values else ""
        rows.append(row)

    out_root.mkdir(parents=True, exist_ok=True)
    header = ["variant", "runs", "failed"]
    for metric in metric_names:
        header += [f"{metric}_mean", f"{metric}_std"]
    with summary_path.open("w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(str(row[column]) for column in header) + "\n")
    print(f"wrote {summary_path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tailprompt", description=__doc__)
    sub = parser.add_subparsers(dest="command")

    def add_common(p, out_required=True, out_help="output path"):
        p.add_argument("--config", help="JSON run config file (defaults apply when omitted)")
        p.add_argument("--seed", type=int, help="override the relevant seed")
        p.add_argument("--out", required=out_required, help=out_help)
        p.add_argument("--force", action="store_true", help="overwrite existing outputs")

    p_synth = sub.add_parser("synth", help="generate a synthetic long-tailed dataset")
    add_common(p_synth, out_help="dataset file to write")
    p_synth.add_argument("--classes", type=int, help="number of classes")
    p_synth.add_argument("--samples", type=int, help="number of samples")
    p_synth.add_argument("--dim", type=int, help="embedding dimension")
    p_synth.set_defaults(func=cmd_synth)

    p_train = sub.add_parser("train", help="tune prompts on a dataset")
    add_common(p_train, out_help="run directory to create")
    p_train.add_argument("--data", help="dataset file (generated from config when omitted)")
    p_train.add_argument(
        "--skip-gradcheck", action="store_true", help="skip the pre-training gradient check"
    )
    p_train.add_argument(
        "--ablation",
        action="append",
        choices=ABLATIONS,
        help="switch an ingredient off (repeatable)",
    )
    p_train.add_argument("--loss", choices=LOSS_CHOICES, help="classification loss kind")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    add_common(p_eval, out_required=False, out_help="optional JSON summary file")
    p_eval.add_argument("--data", help="dataset file (generated from config when omitted)")
    p_eval.add_argument("--ckpt", required=True, help="prompts.ckpt.json from a run directory")
    p_eval.set_defaults(func=cmd_eval)

    p_grad = sub.add_parser("gradcheck", help="run the finite-difference sweep")
    p_grad.add_argument("--cases", type=int, default=120, help="number of random cases")
    p_grad.add_argument("--seed", type=int, help="sweep base seed (default 2026)")
    p_grad.add_argument("--tolerance", type=float, default=1e-4)
    p_grad.add_argument("--step", type=float, default=1e-5)
    p_grad.add_argument("--kink-guard", type=float, default=1e-6)
    p_grad.set_defaults(func=cmd_gradcheck)

    p_sweep = sub.add_parser("sweep", help="run variants x seeds and aggregate")
    add_common(p_sweep, out_help="sweep root directory")
    p_sweep.add_argument("--data", help="dataset file (generated from config when omitted)")
    p_sweep.add_argument(
        "--variant", action="append", help=f"variant name (repeatable): {', '.join(VARIANTS)}"
    )
    p_sweep.add_argument("--seeds", help="comma-separated training seeds")
    p_sweep.set_defaults(func=cmd_sweep)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not hasattr(args, "func"):
            parser.print_help()
            return EXIT_CONFIG
        return args.func(args)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericsError as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICS


if __name__ == "__main__":
    sys.exit(main())
