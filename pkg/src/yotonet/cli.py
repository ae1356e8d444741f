"""Command-line surface tying generation, training, and reporting together.

Every command is a thin orchestration layer over the library modules;
nothing here does work that is not equally available as a function
call.  Exit codes: 0 success, 2 configuration problems, 3 I/O problems,
4 evaluation-protocol violations.  The YOTO_OUT environment variable
overrides the configured out_dir (an explicit --out flag beats both).
All randomness descends from the run seed through named streams, so
every command with a seed is bit-reproducible in its file outputs.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import config, data, protocol, seeds, training
from .errors import (ConfigError, ContractError, DataError, ProtocolError,
                     YotoError)
from .model import VARIANTS, YotoNet, load_checkpoint
from .training import AdapterConfig


# ---------------------------------------------------------------------------
# shared resolution helpers


def _resolve_run(args) -> config.RunConfig:
    """Run config from --config (or defaults) with flag overrides applied."""
    doc = config.load_json(args.config) if getattr(args, "config", None) else {}
    cfg = config.parse_run_config(doc)
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    if getattr(args, "data", None):
        cfg = replace(cfg, data_dir=args.data)
    if getattr(args, "domains", None):
        cfg = replace(cfg, domains=tuple(args.domains))
    cfg.validate()
    return cfg


def _out_dir(args, configured: str) -> Path:
    out = os.environ.get("YOTO_OUT") or configured
    if getattr(args, "out", None):
        out = args.out
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load_dataset(data_dir, names, in_len: int) -> dict:
    dataset = {}
    for name in names:
        x, y, _ = data.load_domain(data_dir, name)
        if x.shape[1] != in_len:
            raise ConfigError(
                f"domain {name!r} has window {x.shape[1]} but model.in_len "
                f"is {in_len}; regenerate the data or adjust the config"
            )
        dataset[name] = (x, y)
    return dataset


def _split_train_cfg(cfg: config.RunConfig) -> training.TrainConfig:
    """Train section with top-level weights and a derived seed stream."""
    return replace(cfg.train_config(), seed=seeds.stream(cfg.seed, "train"))


def _build_model(cfg: config.RunConfig) -> YotoNet:
    return YotoNet(cfg.model, seed=seeds.stream(cfg.seed, "init"))


def _restore_model(cfg: config.RunConfig, checkpoint) -> YotoNet:
    model = _build_model(cfg)
    model.load_state(load_checkpoint(checkpoint))
    return model


def _eval_f1(model: YotoNet, x, y, route_seed: int):
    confusion, _ = training.evaluate(model, x, y, route_seed=route_seed)
    per_class, avg = protocol.f1_scores(confusion)
    return per_class, avg


def _dump_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args) -> int:
    """Generate synthetic domains from a spec file (default: committed)."""
    if args.spec:
        spec = config.parse_synth_spec(config.load_json(args.spec))
    else:
        spec = config.default_synth()
    out = Path(args.out or "data")
    out.mkdir(parents=True, exist_ok=True)
    manifests = []
    for dom in spec.domains:
        s = seeds.stream(args.seed, "data", dom.name, dom.seed)
        x, y, manifest = data.synth_domain(dom, spec.n_per_class,
                                           window=spec.window, seed=s)
        data.save_domain(out, x, manifest)
        manifests.append(manifest)
    sys.stdout.write(data.stats_csv(manifests))
    return 0


def cmd_ingest(args) -> int:
    """Window and standardize raw .npy recordings into one domain."""
    records = []
    for path in args.files:
        stem = Path(path).stem.lower()
        haves = [lab for lab in ("inner", "outer") if lab in stem]
        if len(haves) != 1:
            raise DataError(
                f"{path}: file name must contain exactly one of "
                f"'inner'/'outer' to carry its label"
            )
        try:
            samples = np.load(path, allow_pickle=False)
        except ValueError as exc:
            raise DataError(f"{path}: not a readable .npy array: {exc}") from exc
        if samples.ndim != 1:
            raise DataError(f"{path}: expected a 1-D signal, got {samples.shape}")
        records.append((samples, data.LABELS[haves[0]]))
    out = Path(args.out or "data")
    manifest = data.ingest(args.name, records, args.rate, out,
                           window=args.window, hop=args.hop or args.window)
    sys.stdout.write(data.stats_csv([manifest]))
    return 0


def cmd_train(args) -> int:
    """Train one model on the configured domains; save checkpoint + log."""
    cfg = _resolve_run(args)
    out = _out_dir(args, cfg.out_dir)
    dataset = _load_dataset(cfg.data_dir, cfg.domains, cfg.model.in_len)
    xs, ys, doms = [], [], []
    for name in cfg.domains:
        x, y = dataset[name]
        xs.append(x)
        ys.append(y)
        doms.extend([name] * len(y))
    model = _build_model(cfg)
    result = training.train(model, np.concatenate(xs), np.concatenate(ys),
                            doms, _split_train_cfg(cfg))
    model.save(out / "model.ckpt")
    (out / "train_log.csv").write_text(training.loss_log_csv(result.log))
    (out / "run.json").write_text(cfg.to_json())
    final = result.log[-1][2].total if result.log else float("nan")
    print(f"steps={len(result.log)} final_total={final!r}")
    print(f"checkpoint {out / 'model.ckpt'}")
    return 0


def cmd_eval(args) -> int:
    """Evaluate a checkpoint per domain; print and save an F1 table."""
    cfg = _resolve_run(args)
    out = _out_dir(args, cfg.out_dir)
    checkpoint = args.checkpoint or out / "model.ckpt"
    model = _restore_model(cfg, checkpoint)
    dataset = _load_dataset(cfg.data_dir, cfg.domains, cfg.model.in_len)
    lines = ["domain,n,f1_inner,f1_outer,f1_avg"]
    for name in cfg.domains:
        x, y = dataset[name]
        per_class, avg = _eval_f1(model, x, y, route_seed=cfg.seed)
        lines.append(f"{name},{len(y)},{float(per_class[0])!r},"
                     f"{float(per_class[1])!r},{float(avg)!r}")
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    (out / "eval.csv").write_text(text)
    return 0


def _severity(failures: dict) -> int:
    codes = {"ProtocolError": 4, "DataError": 3, "OSError": 3}
    worst = 0
    for message in failures.values():
        name = message.split(":", 1)[0]
        worst = max(worst, codes.get(name, 2))
    return worst


def cmd_protocol(args) -> int:
    """Run the cross-domain splits; write reports and the scaling table."""
    cfg = _resolve_run(args)
    out = _out_dir(args, cfg.out_dir)
    dataset = _load_dataset(cfg.data_dir, cfg.domains, cfg.model.in_len)
    splits = protocol.enumerate_splits(cfg.domains)
    if args.splits:
        splits = [s for s in splits if args.splits in s.split_id]
        if not splits:
            raise ConfigError(f"--splits {args.splits!r} matches no split id")
    reports, failures = protocol.run_protocol(
        splits, cfg.model, _split_train_cfg(cfg), dataset, cfg.seed,
        variant=args.variant, jobs=args.jobs, record_failures=True,
    )
    (out / "reports.csv").write_text(protocol.reports_csv(reports))
    _dump_json(out / "summary.json", {
        "variant": args.variant,
        "seed": cfg.seed,
        "task_means": protocol.task_means(reports),
        "failures": failures,
        "reports": [r.to_dict() for r in reports],
    })
    sys.stdout.write(protocol.reports_csv(reports))
    if len(reports) == 30:
        scaling = protocol.scaling_report(reports)
        (out / "scaling.csv").write_text(scaling)
        sys.stdout.write(scaling)
    for split_id, message in sorted(failures.items()):
        print(f"FAILED {split_id}: {message}", file=sys.stderr)
    return _severity(failures)


def cmd_ablate(args) -> int:
    """Compare model variants on held-out splits; write the matrix."""
    cfg = _resolve_run(args)
    out = _out_dir(args, cfg.out_dir)
    dataset = _load_dataset(cfg.data_dir, cfg.domains, cfg.model.in_len)
    chosen = None
    if args.splits:
        chosen = [s for s in protocol.enumerate_splits(cfg.domains)
                  if args.splits in s.split_id]
        if not chosen:
            raise ConfigError(f"--splits {args.splits!r} matches no split id")
    reports, summary = protocol.run_ablation(
        cfg.model, _split_train_cfg(cfg), dataset, cfg.seed,
        splits=chosen, variants=args.variants,
    )
    (out / "ablation.csv").write_text(protocol.reports_csv(reports))
    _dump_json(out / "ablation.json", {"seed": cfg.seed, "splits": summary})
    for split_id, entry in summary.items():
        scores = " ".join(
            f"{variant}={score!r}" for variant, score in entry["scores"].items()
        )
        print(f"{split_id} best={entry['best_variant']} {scores}")
    return 0


def cmd_finetune(args) -> int:
    """Adapt a trained checkpoint to one domain with low-rank adapters."""
    cfg = _resolve_run(args)
    out = _out_dir(args, cfg.out_dir)
    x, y, _ = data.load_domain(cfg.data_dir, args.target)
    if args.shots > len(y):
        raise ConfigError(
            f"--shots {args.shots} exceeds target domain size {len(y)}"
        )
    model = _restore_model(cfg, args.checkpoint)
    tcfg = replace(cfg.train_config(),
                   seed=seeds.stream(cfg.seed, "adapt", args.target))
    if args.epochs is not None:
        tcfg = replace(tcfg, epochs=args.epochs)
    idx = training.select_shots(y, args.shots,
                                seeds.rng(tcfg.seed, "shots", args.target))
    hold = np.setdiff1d(np.arange(len(y), dtype=np.intp), idx)
    _, before = _eval_f1(model, x[hold], y[hold], route_seed=cfg.seed)
    checksum = training.backbone_checksum(model)
    training.finetune_adapters(
        model, x, y, args.target,
        AdapterConfig(rank=args.rank, n_shots=args.shots), tcfg,
    )
    if training.backbone_checksum(model) != checksum:
        raise ContractError("backbone changed during adapter training")
    _, after = _eval_f1(model, x[hold], y[hold], route_seed=cfg.seed)
    model.save(out / "adapted.ckpt")
    print("target,shots,zero_shot_f1,adapted_f1")
    print(f"{args.target},{len(idx)},{before!r},{after!r}")
    print(f"checkpoint {out / 'adapted.ckpt'}")
    return 0


def cmd_report(args) -> int:
    """Re-render tables from a previous run's saved reports."""
    cfg = _resolve_run(args)
    out = _out_dir(args, cfg.out_dir)
    summary_path = out / "summary.json"
    ablation_path = out / "ablation.json"
    if not summary_path.exists() and not ablation_path.exists():
        raise DataError(f"no summary.json or ablation.json under {out}")
    if summary_path.exists():
        doc = config.load_json(summary_path)
        reports = [protocol.metrics_from_dict(entry) for entry in doc["reports"]]
        sys.stdout.write(protocol.reports_csv(reports))
        if len(reports) == 30:
            sys.stdout.write(protocol.scaling_report(reports))
        else:
            for task, mean in sorted(protocol.task_means(reports).items()):
                print(f"task{task} mean_f1={mean!r}")
        for split_id, message in sorted(doc.get("failures", {}).items()):
            print(f"FAILED {split_id}: {message}")
    if ablation_path.exists():
        doc = config.load_json(ablation_path)
        for split_id, entry in sorted(doc["splits"].items()):
            scores = " ".join(
                f"{variant}={score!r}" for variant, score in entry["scores"].items()
            )
            print(f"{split_id} best={entry['best_variant']} {scores}")
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_run_flags(sub, out_help="directory for outputs"):
    sub.add_argument("--config", help="JSON run config file")
    sub.add_argument("--seed", type=int, help="override the run seed")
    sub.add_argument("--data", help="override data_dir")
    sub.add_argument("--out", help=out_help)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="yoto",
        description="Zero-shot cross-domain bearing-fault diagnosis toolkit.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic domains")
    p.add_argument("--spec", help="JSON generation spec (default: committed)")
    p.add_argument("--out", help="destination data directory (default: data)")
    p.add_argument("--seed", type=int, default=0, help="generation seed")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", help="ingest raw .npy recordings")
    p.add_argument("--name", required=True, help="domain name to create")
    p.add_argument("--rate", type=float, required=True,
                   help="sample rate of the raw recordings in Hz")
    p.add_argument("--window", type=int, default=4096, help="window length")
    p.add_argument("--hop", type=int, help="hop length (default: window)")
    p.add_argument("--out", help="destination data directory (default: data)")
    p.add_argument("files", nargs="+",
                   help=".npy signals; names carry 'inner' or 'outer'")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="train on the configured domains")
    _add_run_flags(p)
    p.add_argument("--domains", nargs="+", help="override training domains")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint per domain")
    _add_run_flags(p)
    p.add_argument("--domains", nargs="+", help="override evaluated domains")
    p.add_argument("--checkpoint", help="checkpoint path (default: out/model.ckpt)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("protocol", help="run the cross-domain split protocol")
    _add_run_flags(p)
    p.add_argument("--variant", default="Full", choices=sorted(VARIANTS),
                   help="model variant for every split")
    p.add_argument("--splits", help="substring filter on split ids")
    p.add_argument("--jobs", type=int, default=1,
                   help="worker processes (default: 1)")
    p.set_defaults(func=cmd_protocol)

    p = sub.add_parser("ablate", help="compare model variants")
    _add_run_flags(p)
    p.add_argument("--splits",
                   help="substring filter (default: the 4-source splits)")
    p.add_argument("--variants", nargs="+", choices=sorted(VARIANTS),
                   help="variants to run (default: all six)")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("finetune", help="few-shot adapt a checkpoint")
    _add_run_flags(p)
    p.add_argument("--checkpoint", required=True, help="trained checkpoint")
    p.add_argument("--target", required=True, help="target domain name")
    p.add_argument("--shots", type=int, default=256,
                   help="labeled target samples to adapt on")
    p.add_argument("--rank", type=int, default=4, help="adapter rank")
    p.add_argument("--epochs", type=int, help="override adaptation epochs")
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("report", help="re-render tables from saved reports")
    _add_run_flags(p, out_help="directory holding summary.json/ablation.json")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else int(exc.code)
    try:
        return int(args.func(args) or 0)
    except ProtocolError as exc:
        print(f"yoto: protocol error: {exc}", file=sys.stderr)
        return 4
    except (DataError, OSError) as exc:
        print(f"yoto: data error: {exc}", file=sys.stderr)
        return 3
    except YotoError as exc:
        print(f"yoto: config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
